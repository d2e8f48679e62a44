//! Secret fractions for the four decoders.
//!
//! Decoders 3 and 4 read the logical value straight from q single-qubit
//! measurements (majority, or all-equal post-selection), so their error
//! rates only need per-row measurement statistics of each product term.
//! Decoders 1 and 2 run the CNOT decoding circuit on the dense state.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{
    build_levels, build_table, code_form_norm, enumerate_outcomes_level1, good_pattern_count_log2, ApproxStrategy, ComponentTable,
    ProductState,
};
use crate::codes::{decoder_circuit, logical_projector, povm_element, CodeSpec, LogicalRule};
use crate::dmat::{Basis, DMat};
use crate::error::{Error, Result};
use crate::params::ErrorParams;
use crate::scalar::Poly;

/// Traces below this are treated as an impossible outcome.
const TRACE_FLOOR: f64 = 1e-300;

pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorPair {
    pub e_b: f64,
    pub e_p: f64,
}

/// `max{0, 1 - h(e_b) - h(e_p)}`.
pub fn secret_fraction(e: ErrorPair) -> f64 {
    (1.0 - binary_entropy(e.e_b) - binary_entropy(e.e_p)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Decoder {
    One,
    Two,
    Three,
    Four,
}

impl Decoder {
    pub const ALL: [Decoder; 4] = [Decoder::One, Decoder::Two, Decoder::Three, Decoder::Four];

    pub fn number(self) -> u8 {
        match self {
            Decoder::One => 1,
            Decoder::Two => 2,
            Decoder::Three => 3,
            Decoder::Four => 4,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Decoder::One),
            2 => Ok(Decoder::Two),
            3 => Ok(Decoder::Three),
            4 => Ok(Decoder::Four),
            _ => Err(Error::Parameter(format!("decoder {n} (expected 1-4)"))),
        }
    }

    /// Decoders built on the CNOT circuit exist only for the 3-qubit code.
    pub fn supports(self, code: CodeSpec) -> bool {
        matches!(self, Decoder::Three | Decoder::Four) || code.size() == 3
    }
}

/// Result of one decoder on one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecoderFraction {
    pub errors: ErrorPair,
    /// Post-selection success probability (decoder 4), 1 otherwise.
    pub p_succ: f64,
    /// Secret fraction, including the post-selection factor.
    pub r: f64,
}

fn fraction(errors: ErrorPair, p_succ: f64) -> DecoderFraction {
    DecoderFraction { errors, p_succ, r: p_succ * secret_fraction(errors) }
}

/// Joint Z-basis one-counts and X-basis '−' parities of Alice's and Bob's
/// q outcomes, accumulated over every product term.
#[derive(Debug, Clone)]
pub struct CodeStatistics {
    code: CodeSpec,
    /// `z[ca][cb]`: weight of Alice reading `ca` ones and Bob `cb` ones.
    z: Vec<Vec<f64>>,
    /// `x[pa][pb]`: weight of the two '−'-count parities.
    x: [[f64; 2]; 2],
    trace: f64,
}

struct RowTables {
    tz: [[Complex64; 2]; 2],
    tx: [[Complex64; 2]; 2],
}

fn row_tables(m: &DMat<Complex64>, delta: f64) -> RowTables {
    let table = |basis: Basis| {
        let e = [povm_element(basis, 0, delta), povm_element(basis, 1, delta)];
        let mut t = [[Complex64::new(0.0, 0.0); 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                t[a][b] = e[a].tensor(&e[b]).trace_product(m).expect("two-qubit operands");
            }
        }
        t
    };
    RowTables { tz: table(Basis::Z), tx: table(Basis::X) }
}

impl CodeStatistics {
    pub fn from_state(state: &ProductState, code: CodeSpec, delta: f64) -> Result<Self> {
        let q = code.size();
        if state.rows() != q {
            return Err(Error::Parameter(format!("state has {} rows, code has {q}", state.rows())));
        }
        let tables: Vec<RowTables> = state.mats().par_iter().map(|m| row_tables(m, delta)).collect();
        let partials: Vec<(Vec<Complex64>, [[Complex64; 2]; 2])> = state
            .terms()
            .par_chunks(256)
            .map(|chunk| {
                let zero = Complex64::new(0.0, 0.0);
                let mut z_acc = vec![zero; (q + 1) * (q + 1)];
                let mut x_acc = [[zero; 2]; 2];
                let mut z = vec![zero; (q + 1) * (q + 1)];
                let mut next = z.clone();
                for (w, idx) in chunk {
                    z.iter_mut().for_each(|v| *v = zero);
                    z[0] = *w;
                    let mut x = [[*w, zero], [zero, zero]];
                    for (row, &mi) in idx.iter().enumerate() {
                        let t = &tables[mi as usize];
                        next.iter_mut().for_each(|v| *v = zero);
                        for ca in 0..=row {
                            for cb in 0..=row {
                                let v = z[ca * (q + 1) + cb];
                                if v == zero {
                                    continue;
                                }
                                for a in 0..2 {
                                    for b in 0..2 {
                                        next[(ca + a) * (q + 1) + cb + b] += v * t.tz[a][b];
                                    }
                                }
                            }
                        }
                        std::mem::swap(&mut z, &mut next);
                        let mut nx = [[zero; 2]; 2];
                        for pa in 0..2 {
                            for pb in 0..2 {
                                for a in 0..2 {
                                    for b in 0..2 {
                                        nx[pa ^ a][pb ^ b] += x[pa][pb] * t.tx[a][b];
                                    }
                                }
                            }
                        }
                        x = nx;
                    }
                    z_acc.iter_mut().zip(&z).for_each(|(acc, v)| *acc += v);
                    for pa in 0..2 {
                        for pb in 0..2 {
                            x_acc[pa][pb] += x[pa][pb];
                        }
                    }
                }
                (z_acc, x_acc)
            })
            .collect();
        let zero = Complex64::new(0.0, 0.0);
        let mut z_sum = vec![zero; (q + 1) * (q + 1)];
        let mut x_sum = [[zero; 2]; 2];
        for (z, x) in &partials {
            z_sum.iter_mut().zip(z).for_each(|(acc, v)| *acc += v);
            for pa in 0..2 {
                for pb in 0..2 {
                    x_sum[pa][pb] += x[pa][pb];
                }
            }
        }
        let z: Vec<Vec<f64>> = (0..=q).map(|ca| (0..=q).map(|cb| z_sum[ca * (q + 1) + cb].re).collect()).collect();
        let x = [[x_sum[0][0].re, x_sum[0][1].re], [x_sum[1][0].re, x_sum[1][1].re]];
        let trace = z.iter().flatten().sum();
        Ok(CodeStatistics { code, z, x, trace })
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    fn check_trace(&self) -> Result<()> {
        if !(self.trace > TRACE_FLOOR) {
            return Err(Error::Degenerate(format!("state trace {:e}", self.trace)));
        }
        Ok(())
    }

    /// Majority vote on Z, '−' parity on X.
    pub fn decoder3(&self) -> Result<DecoderFraction> {
        self.check_trace()?;
        let code = self.code;
        let mut e_b = 0.0;
        for (ca, row) in self.z.iter().enumerate() {
            for (cb, v) in row.iter().enumerate() {
                if code.majority(ca) != code.majority(cb) {
                    e_b += v;
                }
            }
        }
        let e_p = self.x[0][1] + self.x[1][0];
        Ok(fraction(ErrorPair { e_b: e_b / self.trace, e_p: e_p / self.trace }, 1.0))
    }

    /// Z rounds post-selected on all-equal strings at both ends; the phase
    /// error is bounded by the decoder-3 value over the success probability.
    pub fn decoder4(&self) -> Result<DecoderFraction> {
        self.check_trace()?;
        let q = self.code.size();
        let z = &self.z;
        let accepted = z[0][0] + z[0][q] + z[q][0] + z[q][q];
        let p_succ = accepted / self.trace;
        let e_p3 = (self.x[0][1] + self.x[1][0]) / self.trace;
        if !(accepted > TRACE_FLOOR) {
            return Ok(DecoderFraction { errors: ErrorPair { e_b: 0.5, e_p: 0.5 }, p_succ: 0.0, r: 0.0 });
        }
        let e_b = (z[0][q] + z[q][0]) / accepted;
        Ok(fraction(ErrorPair { e_b, e_p: (e_p3 / p_succ).min(0.5) }, p_succ))
    }
}

/// Two-qubit QKD error rates after noisy single-qubit measurements.
pub fn pair_error_rates(rho: &DMat<Complex64>, delta: f64) -> Result<ErrorPair> {
    let tr = rho.trace_re();
    if !(tr > TRACE_FLOOR) {
        return Err(Error::Degenerate(format!("pair trace {tr:e}")));
    }
    let cross = |basis: Basis| -> Result<f64> {
        let e0 = povm_element(basis, 0, delta);
        let e1 = povm_element(basis, 1, delta);
        Ok(e0.tensor(&e1).trace_product(rho)?.re + e1.tensor(&e0).trace_product(rho)?.re)
    };
    Ok(ErrorPair { e_b: cross(Basis::Z)? / tr, e_p: cross(Basis::X)? / tr })
}

fn dense_cross(code: CodeSpec, rho: &DMat<Complex64>, basis: Basis, rule: LogicalRule, delta: f64) -> Result<[[f64; 2]; 2]> {
    let p = [
        logical_projector(code, basis, rule, 0, delta),
        logical_projector(code, basis, rule, 1, delta),
    ];
    let mut out = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            out[a][b] = p[a].tensor(&p[b]).trace_product(rho)?.re;
        }
    }
    Ok(out)
}

fn code_of(rho: &DMat<Complex64>) -> Result<CodeSpec> {
    if rho.qubits() % 2 != 0 {
        return Err(Error::Parameter(format!("{} qubits cannot be split between two users", rho.qubits())));
    }
    CodeSpec::new(rho.qubits() / 2)
}

/// Decoder 3 on a dense state over `(A1..Aq, B1..Bq)`.
pub fn fraction_decoder3(rho: &DMat<Complex64>, delta: f64) -> Result<DecoderFraction> {
    let code = code_of(rho)?;
    let tr = rho.trace_re();
    if !(tr > TRACE_FLOOR) {
        return Err(Error::Degenerate(format!("state trace {tr:e}")));
    }
    let z = dense_cross(code, rho, Basis::Z, LogicalRule::Majority, delta)?;
    let x = dense_cross(code, rho, Basis::X, LogicalRule::Majority, delta)?;
    Ok(fraction(ErrorPair { e_b: (z[0][1] + z[1][0]) / tr, e_p: (x[0][1] + x[1][0]) / tr }, 1.0))
}

/// Decoder 4 on a dense state.
pub fn fraction_decoder4(rho: &DMat<Complex64>, delta: f64) -> Result<DecoderFraction> {
    let code = code_of(rho)?;
    let tr = rho.trace_re();
    if !(tr > TRACE_FLOOR) {
        return Err(Error::Degenerate(format!("state trace {tr:e}")));
    }
    let z = dense_cross(code, rho, Basis::Z, LogicalRule::Strict, delta)?;
    let x = dense_cross(code, rho, Basis::X, LogicalRule::Majority, delta)?;
    let accepted = z[0][0] + z[0][1] + z[1][0] + z[1][1];
    if !(accepted > TRACE_FLOOR) {
        return Ok(DecoderFraction { errors: ErrorPair { e_b: 0.5, e_p: 0.5 }, p_succ: 0.0, r: 0.0 });
    }
    let p_succ = accepted / tr;
    let e_p3 = (x[0][1] + x[1][0]) / tr;
    Ok(fraction(ErrorPair { e_b: (z[0][1] + z[1][0]) / accepted, e_p: (e_p3 / p_succ).min(0.5) }, p_succ))
}

/// `max(r3, r4)` on a dense state.
pub fn r_opt(rho: &DMat<Complex64>, delta: f64) -> Result<f64> {
    Ok(fraction_decoder3(rho, delta)?.r.max(fraction_decoder4(rho, delta)?.r))
}

/// Decoders 1 (`classify_by_d`) and 2 on a dense three-qubit-code state.
///
/// Decoder 1 keeps the syndrome pair and averages per-class fractions;
/// decoder 2 mixes the classes first. The reported error pair for
/// decoder 1 is the probability-weighted average.
pub fn fraction_decoder12(rho: &DMat<Complex64>, params: &ErrorParams, classify_by_d: bool) -> Result<DecoderFraction> {
    let tr = rho.trace_re();
    if !(tr > TRACE_FLOOR) {
        return Err(Error::Degenerate(format!("state trace {tr:e}")));
    }
    let branches = decoder_circuit(&rho.scale_real(1.0 / tr), params)?;
    let delta = params.dec_delta();
    if classify_by_d {
        let mut r = 0.0;
        let (mut e_b, mut e_p, mut total) = (0.0, 0.0, 0.0);
        for b in branches.iter().filter(|b| b.prob > TRACE_FLOOR) {
            let e = pair_error_rates(&b.state, delta)?;
            r += b.prob * secret_fraction(e);
            e_b += b.prob * e.e_b;
            e_p += b.prob * e.e_p;
            total += b.prob;
        }
        Ok(DecoderFraction { errors: ErrorPair { e_b: e_b / total, e_p: e_p / total }, p_succ: 1.0, r })
    } else {
        let mut mixed = DMat::zeros(2);
        for b in &branches {
            mixed.add_assign(&b.state)?;
        }
        Ok(fraction(pair_error_rates(&mixed, delta)?, 1.0))
    }
}

/// Decoder fractions of one (possibly sub-normalized) state.
pub fn decode_state(state: &ProductState, code: CodeSpec, params: &ErrorParams, decoder: Decoder) -> Result<DecoderFraction> {
    match decoder {
        Decoder::Three => CodeStatistics::from_state(state, code, params.dec_delta())?.decoder3(),
        Decoder::Four => CodeStatistics::from_state(state, code, params.dec_delta())?.decoder4(),
        Decoder::One | Decoder::Two => {
            if code.size() != 3 {
                return Err(Error::Unsupported("decoders 1 and 2 need the three-qubit code".into()));
            }
            fraction_decoder12(&state.assemble()?, params, decoder == Decoder::One)
        }
    }
}

/// One decoder's contribution to the secret fraction of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecoderReport {
    pub decoder: Decoder,
    /// Error rates of the (representative) good state.
    pub errors: ErrorPair,
    pub p_succ: f64,
    /// Secret fraction per attempt, weighted by the outcome probability.
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionReport {
    pub n: u32,
    pub q: usize,
    pub strategy: String,
    /// Probability of a good outcome pattern, estimated as the
    /// representative probability times the number of good patterns.
    pub p_good: f64,
    /// Probability of the single representative pattern.
    pub p_representative: f64,
    /// Good-outcome contributions, `p_good · r(good state)`.
    pub good: Vec<DecoderReport>,
    /// Contributions summed over every outcome pattern; only available at
    /// n = 1 with the exact strategy.
    pub total: Option<Vec<DecoderReport>>,
}

impl FractionReport {
    /// Most complete estimate available for a decoder.
    pub fn best(&self, decoder: Decoder) -> Option<&DecoderReport> {
        self.total.as_ref().unwrap_or(&self.good).iter().find(|d| d.decoder == decoder)
    }

    pub fn good_for(&self, decoder: Decoder) -> Option<&DecoderReport> {
        self.good.iter().find(|d| d.decoder == decoder)
    }

    /// `max(r3, r4)` over the most complete estimate.
    pub fn r_opt(&self) -> f64 {
        [Decoder::Three, Decoder::Four].iter().filter_map(|&d| self.best(d)).map(|d| d.r).fold(0.0, f64::max)
    }
}

/// Numeric component table for a strategy, built symbolically first when
/// the strategy needs polynomial scalars.
pub fn numeric_table(code: CodeSpec, params: &ErrorParams, n: u32, strategy: ApproxStrategy) -> Result<ComponentTable<Complex64>> {
    match strategy {
        ApproxStrategy::Analytic { .. } => Ok(build_table::<Poly>(code, params, n, strategy)?.evaluate(params.beta)),
        _ => build_table::<Complex64>(code, params, n, strategy),
    }
}

/// Good-outcome report for a prepared table.
pub fn report_from_table(
    table: &ComponentTable<Complex64>,
    params: &ErrorParams,
    decoders: &[Decoder],
    strategy: ApproxStrategy,
) -> Result<FractionReport> {
    let code = table.code();
    let n = table.level();
    let state = ProductState::from_table(table);
    let norm = code_form_norm(code, params.beta, n);
    let raw = state.trace();
    let p_representative = raw / norm;
    let p_good = p_representative * good_pattern_count_log2(code, n).exp2();
    let mut good = Vec::new();
    for &d in decoders.iter().filter(|d| d.supports(code)) {
        let f = decode_state(&state, code, params, d)?;
        good.push(DecoderReport { decoder: d, errors: f.errors, p_succ: f.p_succ, r: p_good * f.r });
    }
    Ok(FractionReport { n, q: code.size(), strategy: strategy.label(), p_good, p_representative, good, total: None })
}

/// Secret fractions at nesting level `n`. At n = 1 with the exact strategy
/// the report also carries the sum over every outcome pattern.
pub fn evaluate_fractions(
    code: CodeSpec,
    params: &ErrorParams,
    n: u32,
    strategy: ApproxStrategy,
    decoders: &[Decoder],
) -> Result<FractionReport> {
    if n == 0 {
        return Err(Error::Parameter("nesting level must be at least 1".into()));
    }
    let table = numeric_table(code, params, n, strategy)?;
    let mut report = report_from_table(&table, params, decoders, strategy)?;
    if n == 1 && strategy == ApproxStrategy::Exact {
        report.total = Some(total_fractions_level1(code, params, decoders)?);
    }
    Ok(report)
}

/// Reports for every level `1..=n_max` from a single recursion. With
/// `stop_at_zero` the recursion ends after the first level whose best
/// decoder yields no key, since nesting further only adds errors.
pub fn evaluate_levels(
    code: CodeSpec,
    params: &ErrorParams,
    n_max: u32,
    strategy: ApproxStrategy,
    decoders: &[Decoder],
    stop_at_zero: bool,
) -> Result<Vec<FractionReport>> {
    if n_max == 0 {
        return Err(Error::Parameter("nesting level must be at least 1".into()));
    }
    let mut reports = Vec::new();
    let mut visit = |table: &ComponentTable<Complex64>| -> Result<bool> {
        if table.level() == 0 {
            return Ok(true);
        }
        let mut report = report_from_table(table, params, decoders, strategy)?;
        if table.level() == 1 && strategy == ApproxStrategy::Exact {
            report.total = Some(total_fractions_level1(code, params, decoders)?);
        }
        let dead = report.good.iter().chain(report.total.iter().flatten()).all(|d| d.r <= 0.0);
        reports.push(report);
        Ok(!(stop_at_zero && dead))
    };
    match strategy {
        ApproxStrategy::Analytic { .. } => {
            build_levels::<Poly>(code, params, n_max, strategy, |t| visit(&t.evaluate(params.beta)))?
        }
        _ => build_levels::<Complex64>(code, params, n_max, strategy, visit)?,
    }
    Ok(reports)
}

/// `Σ_m p_m r(m)` over every outcome pattern of the single station.
pub fn total_fractions_level1(code: CodeSpec, params: &ErrorParams, decoders: &[Decoder]) -> Result<Vec<DecoderReport>> {
    let branches = enumerate_outcomes_level1(code, params)?;
    let mut out = Vec::new();
    for &d in decoders.iter().filter(|d| d.supports(code)) {
        let per_branch: Vec<Option<(f64, DecoderFraction)>> = branches
            .par_iter()
            .map(|b| {
                let p = b.probability();
                if p <= 1e-15 {
                    return Ok(None);
                }
                Ok(Some((p, decode_state(&b.state, code, params, d)?)))
            })
            .collect::<Result<_>>()?;
        let mut r = 0.0;
        let (mut e_b, mut e_p, mut p_succ, mut total) = (0.0, 0.0, 0.0, 0.0);
        for (p, f) in per_branch.into_iter().flatten() {
            r += p * f.r;
            e_b += p * f.errors.e_b;
            e_p += p * f.errors.e_p;
            p_succ += p * f.p_succ;
            total += p;
        }
        out.push(DecoderReport {
            decoder: d,
            errors: ErrorPair { e_b: e_b / total, e_p: e_p / total },
            p_succ: p_succ / total,
            r,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::encoded_bell;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn perfect_state(code: CodeSpec) -> DMat<Complex64> {
        encoded_bell(code)
    }

    #[test]
    fn secret_fraction_examples() {
        assert_eq!(secret_fraction(ErrorPair { e_b: 0.0, e_p: 0.0 }), 1.0);
        assert_eq!(secret_fraction(ErrorPair { e_b: 0.5, e_p: 0.1 }), 0.0);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        // 1 - 2 h(0.02), h(0.02) = 0.1414402823...
        assert_abs_diff_eq!(secret_fraction(ErrorPair { e_b: 0.02, e_p: 0.02 }), 0.7171194, epsilon = 1e-6);
    }

    #[test]
    fn perfect_state_all_dense_decoders() {
        for code in [CodeSpec::three(), CodeSpec::five()] {
            let rho = perfect_state(code);
            let d3 = fraction_decoder3(&rho, 0.0).unwrap();
            assert_abs_diff_eq!(d3.r, 1.0, epsilon = 1e-12);
            let d4 = fraction_decoder4(&rho, 0.0).unwrap();
            assert_abs_diff_eq!(d4.p_succ, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(d4.r, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(r_opt(&rho, 0.0).unwrap(), 1.0, epsilon = 1e-12);
        }
        let rho = perfect_state(CodeSpec::three());
        for by_d in [true, false] {
            let f = fraction_decoder12(&rho, &ErrorParams::ideal(), by_d).unwrap();
            assert_abs_diff_eq!(f.r, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_trace_is_degenerate() {
        let rho = DMat::<Complex64>::zeros(6);
        assert!(matches!(fraction_decoder3(&rho, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn decoder4_clamps_phase_error() {
        // Dephased encoded pair: logical Z correlations intact, X random.
        let code = CodeSpec::three();
        let mut rho = DMat::<Complex64>::zeros(6);
        rho.set(0, 0, Complex64::new(0.5, 0.0));
        rho.set(63, 63, Complex64::new(0.5, 0.0));
        let d4 = fraction_decoder4(&rho, 0.0).unwrap();
        assert_eq!(d4.errors.e_p, 0.5);
        assert_eq!(d4.r, 0.0);
        let stats = CodeStatistics::from_state(&dephased_product(code), code, 0.0).unwrap();
        assert_eq!(stats.decoder4().unwrap().r, 0.0);
    }

    /// The same dephased pair as a product state: all rows |00><00| or all |11><11|.
    fn dephased_product(code: CodeSpec) -> ProductState {
        let mats = std::sync::Arc::new(vec![DMat::outer(2, 0, 0), DMat::outer(2, 3, 3)]);
        let q = code.size();
        let terms = vec![(Complex64::new(0.5, 0.0), vec![0; q]), (Complex64::new(0.5, 0.0), vec![1; q])];
        ProductState::new(q, mats, terms).unwrap()
    }

    fn noisy_state(code: CodeSpec, p: &ErrorParams, n: u32) -> ProductState {
        ProductState::from_table(&build_table::<Complex64>(code, p, n, ApproxStrategy::Exact).unwrap())
    }

    #[test]
    fn statistics_route_matches_dense_projectors() {
        for (code, p) in [
            (CodeSpec::three(), ErrorParams::new(0.97, 0.02, 0.01).unwrap()),
            (CodeSpec::five(), ErrorParams::new(0.99, 0.03, 0.0).unwrap()),
        ] {
            let state = noisy_state(code, &p, 1);
            let dense = state.assemble().unwrap();
            for delta in [0.0, 0.02] {
                let stats = CodeStatistics::from_state(&state, code, delta).unwrap();
                let (a, b) = (stats.decoder3().unwrap(), fraction_decoder3(&dense, delta).unwrap());
                assert_abs_diff_eq!(a.errors.e_b, b.errors.e_b, epsilon = 1e-12);
                assert_abs_diff_eq!(a.errors.e_p, b.errors.e_p, epsilon = 1e-12);
                let (a, b) = (stats.decoder4().unwrap(), fraction_decoder4(&dense, delta).unwrap());
                assert_abs_diff_eq!(a.p_succ, b.p_succ, epsilon = 1e-12);
                assert_abs_diff_eq!(a.errors.e_b, b.errors.e_b, epsilon = 1e-12);
                assert_abs_diff_eq!(a.r, b.r, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn decoder2_equals_decoder3_with_ideal_decoding() {
        let p = ErrorParams::new(0.98, 0.02, 0.01).unwrap().with_decoder(Some(0.0), Some(0.0)).unwrap();
        let rho = noisy_state(CodeSpec::three(), &p, 1).assemble().unwrap();
        let r2 = fraction_decoder12(&rho, &p, false).unwrap().r;
        let r3 = fraction_decoder3(&rho, 0.0).unwrap().r;
        assert_abs_diff_eq!(r2, r3, epsilon = 1e-9);
    }

    #[test]
    fn decoder1_at_least_decoder2() {
        for (f0, beta, delta) in [(1.0, 0.02, 0.0), (0.98, 0.01, 0.01), (0.99, 0.04, 0.005), (1.0, 0.0, 0.02)] {
            let p = ErrorParams::new(f0, beta, delta).unwrap();
            let rho = noisy_state(CodeSpec::three(), &p, 1).assemble().unwrap();
            let r1 = fraction_decoder12(&rho, &p, true).unwrap().r;
            let r2 = fraction_decoder12(&rho, &p, false).unwrap().r;
            assert!(r1 >= r2 - 1e-12, "{f0} {beta} {delta}: {r1} < {r2}");
        }
    }

    #[test]
    fn noisy_decoding_gates_hurt_decoder2() {
        let p = ErrorParams::ideal().with_decoder(Some(0.05), None).unwrap();
        let rho = noisy_state(CodeSpec::three(), &p, 1).assemble().unwrap();
        let r2 = fraction_decoder12(&rho, &p, false).unwrap().r;
        let r3 = fraction_decoder3(&rho, p.dec_delta()).unwrap().r;
        assert!(r2 < r3, "{r2} >= {r3}");
    }

    #[test]
    fn phase_error_expression_is_symmetric() {
        let p = ErrorParams::new(0.97, 0.02, 0.01).unwrap();
        let rho = noisy_state(CodeSpec::three(), &p, 1).assemble().unwrap();
        // Swap the Alice and Bob blocks.
        let swapped = rho.permute_qubits(&[3, 4, 5, 0, 1, 2]).unwrap();
        let a = fraction_decoder3(&rho, 0.01).unwrap().errors;
        let b = fraction_decoder3(&swapped, 0.01).unwrap().errors;
        assert_abs_diff_eq!(a.e_p, b.e_p, epsilon = 1e-14);
        assert_abs_diff_eq!(a.e_b, b.e_b, epsilon = 1e-14);
    }

    #[test]
    fn bit_error_grows_quadratically_in_measurement_error() {
        let code = CodeSpec::three();
        let e = |delta: f64| {
            let p = ErrorParams::new(1.0, 0.0, delta).unwrap();
            let r = evaluate_fractions(code, &p, 1, ApproxStrategy::Exact, &[Decoder::Three]).unwrap();
            r.good_for(Decoder::Three).unwrap().errors.e_b
        };
        let (lo, hi) = (1e-3, 1e-2);
        let slope = (e(hi) / e(lo)).ln() / (hi / lo).ln();
        assert!((slope - 2.0).abs() <= 0.1, "slope {slope}");
    }

    #[test]
    fn perfect_report_all_decoders() {
        let report =
            evaluate_fractions(CodeSpec::three(), &ErrorParams::ideal(), 1, ApproxStrategy::Exact, &Decoder::ALL).unwrap();
        assert_abs_diff_eq!(report.p_good, 1.0, epsilon = 1e-12);
        for d in report.good.iter().chain(report.total.as_ref().unwrap()) {
            assert_abs_diff_eq!(d.r, 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(d.errors.e_b, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(d.errors.e_p, 0.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(report.r_opt(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn five_qubit_code_skips_circuit_decoders() {
        let report = evaluate_fractions(CodeSpec::five(), &ErrorParams::ideal(), 1, ApproxStrategy::Exact, &Decoder::ALL)
            .unwrap();
        let ds: Vec<Decoder> = report.good.iter().map(|d| d.decoder).collect();
        assert_eq!(ds, vec![Decoder::Three, Decoder::Four]);
    }

    #[test]
    fn good_states_dominate_at_small_errors() {
        let code = CodeSpec::three();
        for beta in [0.005, 0.01, 0.02] {
            let p = ErrorParams::new(1.0, beta, 0.0).unwrap();
            let report = evaluate_fractions(code, &p, 1, ApproxStrategy::Exact, &[Decoder::Three, Decoder::Four]).unwrap();
            for d in [Decoder::Three, Decoder::Four] {
                let total = report.best(d).unwrap().r;
                let good = report.good_for(d).unwrap().r;
                let diff = total - good;
                assert!(diff >= -1e-12 && diff <= 0.05 * total, "β={beta} {d:?}: total {total} good {good}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn error_rates_are_probabilities(f0 in 0.9f64..1.0, beta in 0.0f64..0.1, delta in 0.0f64..0.05) {
            let p = ErrorParams::new(f0, beta, delta).unwrap();
            let report = evaluate_fractions(CodeSpec::three(), &p, 1, ApproxStrategy::Exact, &Decoder::ALL).unwrap();
            for d in report.good.iter().chain(report.total.as_ref().unwrap()) {
                prop_assert!((0.0..=1.0).contains(&d.errors.e_b));
                prop_assert!((0.0..=1.0).contains(&d.errors.e_p));
                prop_assert!((0.0..=1.0).contains(&d.r));
            }
            prop_assert!(report.p_good > 0.0 && report.p_good <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn fractions_decrease_with_each_error_source() {
        let code = CodeSpec::three();
        let r = |f0: f64, beta: f64, delta: f64| {
            let p = ErrorParams::new(f0, beta, delta).unwrap();
            evaluate_fractions(code, &p, 1, ApproxStrategy::Exact, &[Decoder::Three, Decoder::Four]).unwrap().r_opt()
        };
        let grid = [0.0, 0.01, 0.02, 0.04];
        for w in grid.windows(2) {
            assert!(r(1.0, w[1], 0.0) <= r(1.0, w[0], 0.0) + 1e-12);
            assert!(r(1.0, 0.0, w[1]) <= r(1.0, 0.0, w[0]) + 1e-12);
            assert!(r(1.0 - w[1], 0.0, 0.0) <= r(1.0 - w[0], 0.0, 0.0) + 1e-12);
        }
    }

    #[test]
    fn level_sweep_matches_single_level_runs() {
        let code = CodeSpec::three();
        let p = ErrorParams::new(0.99, 0.01, 0.005).unwrap();
        let decoders = [Decoder::Three, Decoder::Four];
        for strategy in [ApproxStrategy::Exact, ApproxStrategy::Analytic { max_order: 1 }, ApproxStrategy::Numeric { n_top: 20 }] {
            let all = evaluate_levels(code, &p, 2, strategy, &decoders, false).unwrap();
            assert_eq!(all.len(), 2);
            for (i, report) in all.iter().enumerate() {
                let single = evaluate_fractions(code, &p, i as u32 + 1, strategy, &decoders).unwrap();
                assert_eq!(report, &single);
            }
        }
    }

    #[test]
    fn level_sweep_stops_after_first_dead_level() {
        let p = ErrorParams::new(1.0, 0.06, 0.0).unwrap();
        let nu = ApproxStrategy::Numeric { n_top: 20 };
        let all = evaluate_levels(CodeSpec::three(), &p, 5, nu, &[Decoder::Three, Decoder::Four], true).unwrap();
        assert!(all.len() < 5);
        assert_eq!(all.last().unwrap().r_opt(), 0.0);
        assert!(all[..all.len() - 1].iter().all(|r| r.r_opt() > 0.0));
    }
}
