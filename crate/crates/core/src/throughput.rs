//! Link-level timing and key-rate models for encoded, multiplexed and
//! probabilistic repeater chains.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::CodeSpec;
use crate::error::{param_err, Error, Result};
use crate::keyrate::{secret_fraction, ErrorPair};
use crate::params::check_f0;

/// Multiplexed rates assume `N_m P0 ≫ 1`; below this product the result
/// is flagged.
pub const MUX_REGIME_MIN: f64 = 10.0;

/// Fixed number of independent streams for the Monte Carlo oracle, so the
/// result does not depend on the worker count.
const MC_STREAMS: u64 = 64;

pub const MC_MIN_SAMPLES: u64 = 100_000;

fn default_l_att() -> f64 {
    22.0
}

fn default_c() -> f64 {
    2e5
}

fn default_n_m() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThroughputParams {
    /// Elementary link length (km).
    pub l0: f64,
    /// Fiber attenuation length (km).
    #[serde(default = "default_l_att")]
    pub l_att: f64,
    /// Signal speed in fiber (km/s).
    #[serde(default = "default_c")]
    pub c: f64,
    /// Source and coupling efficiency.
    pub p: f64,
    /// Memory read-out and coupling efficiency; defaults to `p`.
    #[serde(default)]
    pub p_m: Option<f64>,
    pub eta_d: f64,
    /// Memories per station for multiplexing.
    #[serde(default = "default_n_m")]
    pub n_m: u32,
}

impl ThroughputParams {
    pub fn new(l0: f64, p: f64, eta_d: f64) -> Result<Self> {
        let tp = ThroughputParams { l0, l_att: default_l_att(), c: default_c(), p, p_m: None, eta_d, n_m: 1 };
        tp.validate()?;
        Ok(tp)
    }

    pub fn with_l0(mut self, l0: f64) -> Result<Self> {
        self.l0 = l0;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("l0", self.l0), ("l_att", self.l_att), ("c", self.c)] {
            if !(v.is_finite() && v > 0.0) {
                return param_err(format!("{name} = {v} must be positive"));
            }
        }
        for (name, v) in [("p", self.p), ("p_m", self.p_m()), ("eta_d", self.eta_d)] {
            if !(0.0..=1.0).contains(&v) {
                return param_err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.n_m == 0 {
            return param_err("n_m must be at least 1");
        }
        Ok(())
    }

    pub fn p_m(&self) -> f64 {
        self.p_m.unwrap_or(self.p)
    }

    /// Transmissivity over half an elementary link.
    pub fn eta_ch(&self) -> f64 {
        (-self.l0 / (2.0 * self.l_att)).exp()
    }

    /// Heralding probability per attempt, `½ p² η_ch² η_d²`.
    pub fn ent_success_prob(&self) -> f64 {
        0.5 * (self.p * self.eta_ch() * self.eta_d).powi(2)
    }

    /// Duration of one attempt, `L0 / c`.
    pub fn cycle_time(&self) -> f64 {
        self.l0 / self.c
    }

    pub fn mux_regime_warning(&self) -> bool {
        f64::from(self.n_m) * self.ent_success_prob() < MUX_REGIME_MIN
    }
}

fn check_trials(n: u64, p0: f64) -> Result<()> {
    if n == 0 {
        return param_err("N must be at least 1");
    }
    if !(p0 > 0.0) {
        return Err(Error::Divergent(format!("success probability {p0} gives an unbounded waiting time")));
    }
    if p0 > 1.0 {
        return param_err(format!("success probability {p0} above 1"));
    }
    Ok(())
}

/// Below this decay rate `-ln(1 - p0)` the direct tail sum needs more than
/// ~10^6 terms and the asymptotic form takes over.
const ASYMPTOTIC_RATE: f64 = 1e-4;

/// Expected number of rounds until `n` independent links, each heralded
/// with probability `p0` per round, have all succeeded.
///
/// Evaluated as `Σ_{t≥0} P(max > t) = Σ_t [1 - (1 - (1-p0)^t)^n]`, a sum of
/// positive terms, which stays accurate where the binomial alternating
/// form cancels catastrophically. For small `a = -ln(1-p0)` the
/// alternating form expands to `H_n / a + 1/2 + O(a^n)`, exact to double
/// precision for `n ≥ 2`.
pub fn avg_trials(n: u64, p0: f64) -> Result<f64> {
    check_trials(n, p0)?;
    if p0 == 1.0 {
        return Ok(1.0);
    }
    if n == 1 {
        return Ok(1.0 / p0);
    }
    let a = -(-p0).ln_1p();
    if a < ASYMPTOTIC_RATE {
        Ok(avg_trials_asymptotic(n, a))
    } else {
        Ok(avg_trials_tail(n, a))
    }
}

fn avg_trials_tail(n: u64, a: f64) -> f64 {
    let nf = n as f64;
    let mut sum = 0.0;
    let mut t = 0u64;
    loop {
        let qt = (-(t as f64) * a).exp();
        // 1 - (1 - q^t)^n
        let term = if qt >= 1.0 { 1.0 } else { -(nf * (-qt).ln_1p()).exp_m1() };
        sum += term;
        if term <= f64::EPSILON * 1e-3 * sum {
            return sum;
        }
        t += 1;
    }
}

fn avg_trials_asymptotic(n: u64, a: f64) -> f64 {
    let harmonic: f64 = (1..=n).rev().map(|k| 1.0 / k as f64).sum();
    harmonic / a + 0.5
}

/// Binomial alternating form `Σ_k C(n,k) (-1)^{k+1} / (1 - (1-p0)^k)`
/// with Neumaier summation. Loses all precision once the binomials grow
/// past ~1/ε relative to the result; kept for cross-checks at small `n`.
pub fn avg_trials_alternating(n: u64, p0: f64) -> Result<f64> {
    check_trials(n, p0)?;
    let ln_q = (-p0).ln_1p();
    let mut binom = 1.0;
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for k in 1..=n {
        binom *= (n - k + 1) as f64 / k as f64;
        let denom = -(k as f64 * ln_q).exp_m1();
        let term = if k % 2 == 1 { binom / denom } else { -binom / denom };
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    Ok(sum + comp)
}

/// Monte Carlo estimate of [`avg_trials`]: the mean over `samples` of the
/// maximum of `n` geometric waiting times. Reproducible for a given seed
/// regardless of thread count.
pub fn mc_waiting_time(n: u64, p0: f64, samples: u64, seed: u64) -> Result<f64> {
    check_trials(n, p0)?;
    if samples < MC_MIN_SAMPLES {
        return param_err(format!("samples = {samples} below {MC_MIN_SAMPLES}"));
    }
    let geo = Geometric::new(p0).map_err(|e| Error::Parameter(e.to_string()))?;
    let totals: Vec<u128> = (0..MC_STREAMS)
        .into_par_iter()
        .map(|stream| {
            let count = samples / MC_STREAMS + u64::from(stream < samples % MC_STREAMS);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut total = 0u128;
            for _ in 0..count {
                // Geometric counts failures before the first success.
                let worst = (0..n).map(|_| geo.sample(&mut rng)).max().unwrap_or(0);
                total += u128::from(worst) + 1;
            }
            total
        })
        .collect();
    Ok(totals.iter().sum::<u128>() as f64 / samples as f64)
}

fn check_level(n: u32) -> Result<()> {
    if n == 0 || n > 20 {
        return param_err(format!("nesting level {n} outside 1..=20"));
    }
    Ok(())
}

/// Encoded pairs delivered per second by a deterministic chain,
/// `1 / (T0 Z_{q 2^n})`.
pub fn gamma_det(tp: &ThroughputParams, n: u32, code: CodeSpec) -> Result<f64> {
    check_level(n)?;
    tp.validate()?;
    let z = avg_trials((code.size() as u64) << n, tp.ent_success_prob())?;
    Ok(1.0 / (tp.cycle_time() * z))
}

/// Normalizes a pair rate to secret bits per memory per second,
/// `r γ / (2^(n+2) q)`.
pub fn per_memory_rate(r: f64, gamma: f64, n: u32, code: CodeSpec) -> f64 {
    r * gamma / ((1u64 << (n + 2)) * code.size() as u64) as f64
}

/// Secret bits per memory per second for a deterministic encoded chain
/// without multiplexing.
pub fn rate_det(r: f64, tp: &ThroughputParams, n: u32, code: CodeSpec) -> Result<f64> {
    Ok(per_memory_rate(r, gamma_det(tp, n, code)?, n, code))
}

/// Same with multiplexing, where a link is ready every cycle with
/// probability per memory `P0`.
pub fn rate_mux(r: f64, tp: &ThroughputParams, n: u32, code: CodeSpec) -> Result<f64> {
    check_level(n)?;
    tp.validate()?;
    Ok(per_memory_rate(r, tp.ent_success_prob() / tp.cycle_time(), n, code))
}

/// Memories used by an encoded chain, `2^(n+2) q`: two banks of `q` at
/// each end of every elementary link, half of them for link generation.
pub fn encoded_memory_count(n: u32, code: CodeSpec) -> u64 {
    (1u64 << (n + 2)) * code.size() as u64
}

/// Memories used by a probabilistic chain, one per link end.
pub fn prob_memory_count(n: u32) -> u64 {
    1u64 << (n + 1)
}

/// Bell-diagonal state `A|φ+><φ+| + B|φ-><φ-| + C|ψ+><ψ+| + D|ψ-><ψ-|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellDiagState {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl BellDiagState {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let s = BellDiagState { a, b, c, d };
        if [a, b, c, d].iter().any(|&v| !(v >= 0.0)) || ((a + b + c + d) - 1.0).abs() > 1e-12 {
            return param_err(format!("invalid Bell-diagonal coefficients {s:?}"));
        }
        Ok(s)
    }

    pub fn werner(f0: f64) -> Result<Self> {
        check_f0(f0)?;
        let e = (1.0 - f0) / 3.0;
        Ok(BellDiagState { a: f0, b: e, c: e, d: e })
    }

    pub fn sum(&self) -> f64 {
        self.a + self.b + self.c + self.d
    }

    /// Bit-flip (ψ±) and phase-flip (φ-, ψ-) error probabilities.
    pub fn errors(&self) -> ErrorPair {
        ErrorPair { e_b: self.c + self.d, e_p: self.b + self.d }
    }
}

/// Ideal swap of two copies of the same Bell-diagonal state.
pub fn bell_swap(s: &BellDiagState) -> BellDiagState {
    let BellDiagState { a, b, c, d } = *s;
    BellDiagState {
        a: a * a + b * b + c * c + d * d,
        b: 2.0 * (a * b + c * d),
        c: 2.0 * (a * c + b * d),
        d: 2.0 * (a * d + b * c),
    }
}

/// State after `n` nesting levels of a probabilistic chain of Werner pairs.
pub fn prob_chain(f0: f64, n: u32) -> Result<BellDiagState> {
    let mut s = BellDiagState::werner(f0)?;
    for _ in 0..n {
        s = bell_swap(&s);
    }
    Ok(s)
}

/// Secret fraction of the probabilistic chain end state.
pub fn prob_secret_fraction(f0: f64, n: u32) -> Result<f64> {
    Ok(secret_fraction(prob_chain(f0, n)?.errors()))
}

/// Swap success probability of a probabilistic chain, `½ p_m² η_d²`.
pub fn prob_swap_success(tp: &ThroughputParams) -> f64 {
    0.5 * (tp.p_m() * tp.eta_d).powi(2)
}

/// Secret bits per memory per second for a probabilistic chain without
/// multiplexing.
pub fn rate_prob(f0: f64, tp: &ThroughputParams, n: u32) -> Result<f64> {
    check_level(n)?;
    tp.validate()?;
    let r = prob_secret_fraction(f0, n)?;
    let z = avg_trials(1u64 << n, tp.ent_success_prob())?;
    let gamma = prob_swap_success(tp).powi(n as i32) / (tp.cycle_time() * z);
    let p_click = tp.eta_d * tp.eta_d;
    Ok(r * p_click * gamma / (1u64 << (n + 1)) as f64)
}
