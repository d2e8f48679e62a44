//! Built-in oracle suites behind `qrkey validate`.

use qrkey::chain::{build_table, ApproxStrategy};
use qrkey::codes::{ideal_decoder_operator, CodeSpec, IdealDecoder};
use qrkey::dmat::Basis;
use qrkey::keyrate::{evaluate_fractions, Decoder};
use qrkey::throughput::{avg_trials, mc_waiting_time, MC_MIN_SAMPLES};
use qrkey::{Complex64, ErrorParams, Poly};

use crate::CliError;

pub const EQUIVALENCE_TOL: f64 = 1e-12;
pub const APPROX_TOL: f64 = 5e-3;
pub const MC_RTOL: f64 = 0.01;
pub const HOMOMORPHISM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Added to one entry of the circuit-decoder operators, to check that
    /// the equivalence suite notices.
    pub decoder_perturbation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn equivalence_suite(perturbation: f64) -> Result<SuiteResult, CliError> {
    let mut worst = 0.0f64;
    for basis in [Basis::Z, Basis::X] {
        for bit in 0..=1 {
            let mut two = ideal_decoder_operator(IdealDecoder::CircuitTwo, basis, bit)?;
            let three = ideal_decoder_operator(IdealDecoder::DirectThree, basis, bit)?;
            let v = *two.get(0, 0);
            two.set(0, 0, v + perturbation);
            worst = worst.max(two.max_abs_diff(&three));
        }
    }
    Ok(SuiteResult {
        name: "decoder-equivalence",
        passed: worst <= EQUIVALENCE_TOL,
        detail: format!("max |M2 - M3| = {worst:.3e} (tol {EQUIVALENCE_TOL:.0e})"),
    })
}

fn approximation_suite() -> Result<SuiteResult, CliError> {
    let code = CodeSpec::three();
    let d = [Decoder::Three, Decoder::Four];
    let mut worst_numeric = 0.0f64;
    let mut worst_analytic = 0.0f64;
    // Up to the n = 2 exact threshold, about 0.056.
    for i in 0..=11 {
        let p = ErrorParams::new(1.0, 0.005 * f64::from(i), 0.0)?;
        let exact = evaluate_fractions(code, &p, 2, ApproxStrategy::Exact, &d)?.r_opt();
        let numeric = evaluate_fractions(code, &p, 2, ApproxStrategy::Numeric { n_top: 20 }, &d)?.r_opt();
        let analytic = evaluate_fractions(code, &p, 2, ApproxStrategy::Analytic { max_order: 2 }, &d)?.r_opt();
        worst_numeric = worst_numeric.max((numeric - exact).abs());
        worst_analytic = worst_analytic.max((analytic - exact).abs());
    }
    Ok(SuiteResult {
        name: "exact-vs-approximation",
        passed: worst_numeric <= APPROX_TOL && worst_analytic <= APPROX_TOL,
        detail: format!("n=2, beta in [0, 0.055]: max |dr| numeric(20) = {worst_numeric:.3e}, analytic(2) = {worst_analytic:.3e}"),
    })
}

fn waiting_time_suite(seed: u64) -> Result<SuiteResult, CliError> {
    let mut worst = 0.0f64;
    for n in [1, 2, 3, 12, 96] {
        for p0 in [1e-3, 1e-2, 0.5] {
            let mc = mc_waiting_time(n, p0, MC_MIN_SAMPLES, seed)?;
            worst = worst.max((mc / avg_trials(n, p0)? - 1.0).abs());
        }
    }
    let z2 = avg_trials(2, 0.5)?;
    let exact_ok = (z2 - 8.0 / 3.0).abs() <= 1e-12;
    Ok(SuiteResult {
        name: "waiting-time-monte-carlo",
        passed: worst < MC_RTOL && exact_ok,
        detail: format!("max relative deviation {worst:.3e} over 15 cases; Z_2(0.5) = {z2:.12}"),
    })
}

fn homomorphism_suite() -> Result<SuiteResult, CliError> {
    let p = ErrorParams::new(0.99, 0.02, 0.005)?;
    let mut worst = 0.0f64;
    for n in 0..=2 {
        let sym = build_table::<Poly>(CodeSpec::three(), &p, n, ApproxStrategy::Exact)?.evaluate(p.beta);
        let num = build_table::<Complex64>(CodeSpec::three(), &p, n, ApproxStrategy::Exact)?;
        if sym.len() != num.len() {
            return Ok(SuiteResult { name: "polynomial-float", passed: false, detail: format!("component count differs at n={n}") });
        }
        for ((ka, a), (kb, b)) in sym.entries().iter().zip(num.entries()) {
            if ka != kb {
                return Ok(SuiteResult { name: "polynomial-float", passed: false, detail: format!("key order differs at n={n}") });
            }
            worst = worst.max((a.weight - b.weight).norm()).max(a.mat.max_abs_diff(&b.mat));
        }
    }
    Ok(SuiteResult {
        name: "polynomial-float",
        passed: worst <= HOMOMORPHISM_TOL,
        detail: format!("n <= 2, max entry difference {worst:.3e}"),
    })
}

pub fn run_validation(opts: ValidateOptions) -> Result<Vec<SuiteResult>, CliError> {
    Ok(vec![
        equivalence_suite(opts.decoder_perturbation)?,
        approximation_suite()?,
        waiting_time_suite(opts.seed)?,
        homomorphism_suite()?,
    ])
}

pub fn report(results: &[SuiteResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!("{} {}: {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equivalence_suite_catches_perturbation() {
        assert!(equivalence_suite(0.0).unwrap().passed);
        assert!(!equivalence_suite(1e-6).unwrap().passed);
    }

    #[test]
    fn homomorphism_suite_passes() {
        assert!(homomorphism_suite().unwrap().passed);
    }

    #[test]
    fn report_lines() {
        let text = report(&[
            SuiteResult { name: "a", passed: true, detail: "ok".into() },
            SuiteResult { name: "b", passed: false, detail: "bad".into() },
        ]);
        assert_eq!(text, "PASS a: ok\nFAIL b: bad\n");
    }
}
