//! Which repeater family gives the highest rate over a grid of error
//! parameters at fixed total distance.

use std::fmt;

use qrkey::chain::ApproxStrategy;
use qrkey::codes::CodeSpec;
use qrkey::keyrate::{evaluate_levels, Decoder};
use qrkey::throughput::{rate_det, rate_prob};
use qrkey::ErrorParams;
use rayon::prelude::*;

use crate::config::LinkConfig;
use crate::output::{num, Csv};
use crate::{CliError, RunConfig};

/// Probabilistic chains are compared up to this nesting level.
pub const PROB_MAX_LEVEL: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionLabel {
    EncodedN(u32),
    Probabilistic,
    NoKey,
}

impl RegionLabel {
    pub fn is_encoded(self) -> bool {
        matches!(self, RegionLabel::EncodedN(_))
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionLabel::EncodedN(n) => write!(f, "EncodedN{n}"),
            RegionLabel::Probabilistic => f.write_str("Probabilistic"),
            RegionLabel::NoKey => f.write_str("NoKey"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionPoint {
    pub one_minus_f0: f64,
    pub beta: f64,
    pub delta: f64,
    pub label: RegionLabel,
    /// Best per-memory rate, zero for `NoKey`.
    pub rate: f64,
}

/// Label for one parameter point: the largest deterministic encoded rate
/// over levels `1..=n_max` against probabilistic levels
/// `1..=PROB_MAX_LEVEL`, both without multiplexing.
pub fn classify(
    code: CodeSpec,
    params: &ErrorParams,
    strategy: ApproxStrategy,
    n_max: u32,
    link: &LinkConfig,
    l_tot: f64,
) -> Result<(RegionLabel, f64), CliError> {
    let reports = evaluate_levels(code, params, n_max, strategy, &[Decoder::Three, Decoder::Four], true)?;
    let mut best = (RegionLabel::NoKey, 0.0);
    for r in reports.iter().filter(|r| r.r_opt() > 0.0) {
        let rate = rate_det(r.r_opt(), &link.at(l_tot / f64::from(1u32 << r.n))?, r.n, code)?;
        if rate > best.1 {
            best = (RegionLabel::EncodedN(r.n), rate);
        }
    }
    for n in 1..=PROB_MAX_LEVEL {
        let rate = rate_prob(params.f0, &link.at(l_tot / f64::from(1u32 << n))?, n)?;
        if rate > best.1 {
            best = (RegionLabel::Probabilistic, rate);
        }
    }
    if !best.1.is_finite() {
        return Err(CliError::Numerical(format!("non-finite rate at {params:?}")));
    }
    Ok(best)
}

/// Grid points in index order: `1 - F0` outermost, `δ` innermost.
pub fn region_points(cfg: &RunConfig) -> Result<Vec<RegionPoint>, CliError> {
    let grid = cfg.region.ok_or_else(|| CliError::Config("region-map needs a region grid".into()))?;
    let l_tot = cfg.l_tot.ok_or_else(|| CliError::Config("region-map needs l_tot".into()))?;
    if cfg.n.is_some() {
        return Err(CliError::Config("region-map compares levels up to n_max; n is not accepted".into()));
    }
    let link = cfg.link()?;
    let code = cfg.code()?;
    let strategy = cfg.approx()?;
    let n_max = *cfg.levels()?.last().expect("levels are non-empty");
    let mut coords = Vec::new();
    for e in grid.one_minus_f0.values() {
        for b in grid.beta.values() {
            for d in grid.delta.values() {
                coords.push((e, b, d));
            }
        }
    }
    coords
        .par_iter()
        .map(|&(e, b, d)| {
            let params = ErrorParams::new(1.0 - e, b, d)?.with_decoder(cfg.decoder_beta, cfg.decoder_delta)?;
            let (label, rate) = classify(code, &params, strategy, n_max, &link, l_tot)?;
            Ok(RegionPoint { one_minus_f0: e, beta: b, delta: d, label, rate })
        })
        .collect()
}

pub fn region_map(cfg: &RunConfig, seed: u64) -> Result<String, CliError> {
    let points = region_points(cfg)?;
    let mut csv = Csv::new("region-map", cfg, seed, &["one_minus_f0", "beta", "delta", "label", "rate_per_memory"]);
    for p in points {
        csv.row(&[num(p.one_minus_f0), num(p.beta), num(p.delta), p.label.to_string(), num(p.rate)]);
    }
    Ok(csv.into_string())
}
