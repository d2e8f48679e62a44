//! Secret-fraction and rate-versus-distance sweeps.

use qrkey::keyrate::{evaluate_levels, FractionReport};
use qrkey::throughput::{rate_det, rate_mux, rate_prob};
use rayon::prelude::*;

use crate::config::{Protocol, SweepVariable};
use crate::output::{num, Csv};
use crate::{check_probability, CliError, RunConfig};

fn check_report(report: &FractionReport) -> Result<(), CliError> {
    check_probability("p_good", report.p_good)?;
    for d in report.good.iter().chain(report.total.iter().flatten()) {
        let tag = format!("decoder {} at n = {}", d.decoder.number(), report.n);
        check_probability(&format!("e_b ({tag})"), d.errors.e_b)?;
        check_probability(&format!("e_p ({tag})"), d.errors.e_p)?;
        check_probability(&format!("r ({tag})"), d.r)?;
    }
    Ok(())
}

/// Rows `(sweep_value, n, decoder, r, e_b, e_p, p_good)` over an error
/// parameter sweep.
pub fn secret_fraction(cfg: &RunConfig, seed: u64) -> Result<String, CliError> {
    let sweep = cfg.sweep.ok_or_else(|| CliError::Config("secret-fraction needs a sweep".into()))?;
    if !matches!(sweep.variable, SweepVariable::Beta | SweepVariable::Delta | SweepVariable::F0) {
        return Err(CliError::Config("secret-fraction sweeps beta, delta or f0".into()));
    }
    let code = cfg.code()?;
    let strategy = cfg.approx()?;
    let decoders = cfg.decoders()?;
    let levels = cfg.levels()?;
    let top = *levels.last().expect("levels are non-empty");
    let base = cfg.error_params()?;
    let values = sweep.axis().values();
    let reports: Vec<Vec<FractionReport>> = values
        .par_iter()
        .map(|&v| {
            let mut p = base;
            match sweep.variable {
                SweepVariable::Beta => p.beta = v,
                SweepVariable::Delta => p.delta = v,
                _ => p.f0 = v,
            }
            p.validate()?;
            let reports = evaluate_levels(code, &p, top, strategy, &decoders, false)?;
            reports.iter().try_for_each(check_report)?;
            Ok(reports)
        })
        .collect::<Result<_, CliError>>()?;

    let mut csv = Csv::new("secret-fraction", cfg, seed, &["sweep_value", "n", "decoder", "r", "e_b", "e_p", "p_good"]);
    for (v, per_level) in values.iter().zip(&reports) {
        for report in per_level.iter().filter(|r| levels.contains(&r.n)) {
            for &d in &decoders {
                let Some(dr) = report.best(d) else { continue };
                csv.row(&[
                    num(*v),
                    report.n.to_string(),
                    d.number().to_string(),
                    num(dr.r),
                    num(dr.errors.e_b),
                    num(dr.errors.e_p),
                    num(report.p_good),
                ]);
            }
        }
    }
    Ok(csv.into_string())
}

pub struct RateOutput {
    pub csv: String,
    /// Points evaluated outside the multiplexing regime.
    pub mux_warnings: usize,
}

/// Rows `(l_tot, n, protocol, rate_per_memory)` with `L0 = L_tot / 2^n`.
pub fn rate_vs_distance(cfg: &RunConfig, seed: u64) -> Result<RateOutput, CliError> {
    let sweep = cfg.sweep.ok_or_else(|| CliError::Config("rate-vs-distance needs a sweep".into()))?;
    if !matches!(sweep.variable, SweepVariable::LTot | SweepVariable::L0) {
        return Err(CliError::Config("rate-vs-distance sweeps l_tot or l0".into()));
    }
    let code = cfg.code()?;
    let link = cfg.link()?;
    let levels = cfg.levels()?;
    let params = cfg.error_params()?;
    let protocols = cfg.protocols.clone().unwrap_or_else(|| vec![Protocol::Det, Protocol::Mux, Protocol::Prob]);
    if protocols.is_empty() {
        return Err(CliError::Config("protocols list is empty".into()));
    }
    let encoded = protocols.iter().any(|p| *p != Protocol::Prob);
    let top = *levels.last().expect("levels are non-empty");
    let fractions: Vec<f64> = if encoded {
        let reports = evaluate_levels(code, &params, top, cfg.approx()?, &cfg.decoders()?, false)?;
        reports.iter().try_for_each(check_report)?;
        reports.iter().map(FractionReport::r_opt).collect()
    } else {
        Vec::new()
    };

    let values = sweep.axis().values();
    type Row = (f64, u32, Protocol, f64, bool);
    let rows: Vec<Vec<Row>> = values
        .par_iter()
        .map(|&v| {
            let mut out = Vec::new();
            for &n in &levels {
                let links = f64::from(1u32 << n);
                let (l_tot, l0) = match sweep.variable {
                    SweepVariable::LTot => (v, v / links),
                    _ => (v * links, v),
                };
                let tp = link.at(l0)?;
                for &proto in &protocols {
                    let rate = match proto {
                        Protocol::Det => rate_det(fractions[n as usize - 1], &tp, n, code)?,
                        Protocol::Mux => rate_mux(fractions[n as usize - 1], &tp, n, code)?,
                        Protocol::Prob => rate_prob(params.f0, &tp, n)?,
                    };
                    if !rate.is_finite() || rate < 0.0 {
                        return Err(CliError::Numerical(format!("{} rate {rate} at l_tot = {l_tot}", proto.label())));
                    }
                    out.push((l_tot, n, proto, rate, proto == Protocol::Mux && tp.mux_regime_warning()));
                }
            }
            Ok(out)
        })
        .collect::<Result<_, CliError>>()?;

    let mut csv = Csv::new("rate-vs-distance", cfg, seed, &["l_tot", "n", "protocol", "rate_per_memory"]);
    let mut mux_warnings = 0;
    for (l_tot, n, proto, rate, warn) in rows.into_iter().flatten() {
        csv.row(&[num(l_tot), n.to_string(), proto.label().to_string(), num(rate)]);
        mux_warnings += usize::from(warn);
    }
    Ok(RateOutput { csv: csv.into_string(), mux_warnings })
}
