//! Component decomposition of the encoded end-to-end state.
//!
//! Every elementary link starts from a code-form state whose `|j…j><k…k|`
//! terms are pushed through the transversal protocol one physical row at a
//! time. A component is the two-qubit matrix one row ends up in for a given
//! assignment of initial labels to links; the q-fold tensor power of the
//! components, weighted by the encoder coefficients, rebuilds the state.

use std::cmp::Ordering;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::{encoder_weights, CodeSpec};
use crate::dmat::{werner, Basis, DMat, Gate};
use crate::error::{param_err, Error, Result};
use crate::params::ErrorParams;
use crate::scalar::Scalar;

/// Deepest nesting level whose keys fit the packed representation.
pub const MAX_LEVEL: u32 = 7;

/// Relative slack when deciding whether a magnitude ties the cut-off of
/// the numeric truncation.
pub const TIE_RTOL: f64 = 1e-12;

/// Initial labels of every elementary link, packed one bit per link with
/// the leftmost link in the most significant position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComponentKey {
    pub j: u128,
    pub k: u128,
}

impl ComponentKey {
    pub fn new(j: u128, k: u128) -> Self {
        ComponentKey { j, k }
    }

    fn concat(self, right: ComponentKey, links: u32) -> Self {
        ComponentKey { j: (self.j << links) | right.j, k: (self.k << links) | right.k }
    }

    /// Both label strings constant (all zeros or all ones).
    pub fn is_identical(self, links: u32) -> bool {
        let all = all_ones(links);
        (self.j == 0 || self.j == all) && (self.k == 0 || self.k == all)
    }
}

fn all_ones(links: u32) -> u128 {
    if links >= 128 {
        u128::MAX
    } else {
        (1u128 << links) - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component<S> {
    /// Product of encoder coefficients over the links.
    pub weight: S,
    pub mat: DMat<S>,
}

/// Weighted two-qubit components at one nesting level, sorted by key.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentTable<S> {
    level: u32,
    code: CodeSpec,
    entries: Vec<(ComponentKey, Component<S>)>,
}

impl<S: Scalar> ComponentTable<S> {
    pub fn from_entries(level: u32, code: CodeSpec, mut entries: Vec<(ComponentKey, Component<S>)>) -> Result<Self> {
        if level > MAX_LEVEL {
            return param_err(format!("nesting level {level} exceeds {MAX_LEVEL}"));
        }
        entries.sort_by_key(|(key, _)| *key);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return param_err("duplicate component key");
        }
        let mask = !all_ones(1 << level);
        if entries.iter().any(|(key, c)| key.j & mask != 0 || key.k & mask != 0 || c.mat.qubits() != 2) {
            return param_err(format!("component does not belong to level {level}"));
        }
        Ok(ComponentTable { level, code, entries })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn code(&self) -> CodeSpec {
        self.code
    }

    /// Number of elementary links spanned.
    pub fn links(&self) -> u32 {
        1 << self.level
    }

    /// Number of swapping stations between the two end users.
    pub fn stations(&self) -> u32 {
        self.links() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(ComponentKey, Component<S>)] {
        &self.entries
    }

    pub fn get(&self, key: ComponentKey) -> Option<&Component<S>> {
        self.entries.binary_search_by_key(&key, |(k, _)| *k).ok().map(|i| &self.entries[i].1)
    }

    /// Numeric table at the given β.
    pub fn evaluate(&self, beta: f64) -> ComponentTable<Complex64> {
        ComponentTable {
            level: self.level,
            code: self.code,
            entries: self
                .entries
                .iter()
                .map(|(key, c)| (*key, Component { weight: c.weight.eval(beta), mat: c.mat.evaluate(beta) }))
                .collect(),
        }
    }

    fn retain(&mut self, keep: impl FnMut(&(ComponentKey, Component<S>)) -> bool) {
        self.entries.retain(keep);
    }
}

/// Per-row Bell measurement outcome: `parity` is the Z result on the
/// target (right-hand) qubit, `phase` the Z result on the control after H.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SwapOutcome {
    pub parity: u8,
    pub phase: u8,
}

impl SwapOutcome {
    pub const REPRESENTATIVE: SwapOutcome = SwapOutcome { parity: 0, phase: 0 };

    pub fn all() -> [SwapOutcome; 4] {
        [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(parity, phase)| SwapOutcome { parity, phase })
    }
}

/// Error-free Pauli correction `X^x Z^z` applied to the right end qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PauliFrame {
    pub x: u8,
    pub z: u8,
}

impl PauliFrame {
    pub const IDENTITY: PauliFrame = PauliFrame { x: 0, z: 0 };

    fn apply<S: Scalar>(self, m: DMat<S>, qubit: usize) -> Result<DMat<S>> {
        let m = if self.z == 1 { m.apply_local_unitary(Gate::Z, qubit)? } else { m };
        if self.x == 1 {
            m.apply_local_unitary(Gate::X, qubit)
        } else {
            Ok(m)
        }
    }
}

/// Row channel of one remote CNOT from `A` to `B` via an auxiliary Werner
/// pair `(e1, e2)`, for the operator input `|j><k|` on `A` and `|0><0|` on `B`.
pub fn remote_cnot_component<S: Scalar>(j: u8, k: u8, params: &ErrorParams) -> Result<DMat<S>> {
    let beta = S::gate_error(params.beta);
    let delta = params.delta;
    let input = DMat::<S>::outer(1, usize::from(j), usize::from(k))
        .tensor(&werner::<S>(params.f0)?)
        .tensor(&DMat::outer(1, 0, 0));
    let after_first = input.noisy_cnot(0, 1, &beta)?;
    let mut teleported = DMat::zeros(4);
    for m1 in 0..2u8 {
        let mut branch = after_first.noisy_measure(1, Basis::Z, m1, delta)?;
        if m1 == 1 {
            branch = branch.apply_local_unitary(Gate::X, 2)?;
        }
        teleported.add_assign(&branch)?;
    }
    let after_second = teleported.noisy_cnot(2, 3, &beta)?;
    let mut out = DMat::zeros(4);
    for m2 in 0..2u8 {
        let mut branch = after_second.noisy_measure(2, Basis::X, m2, delta)?;
        if m2 == 1 {
            branch = branch.apply_local_unitary(Gate::Z, 0)?;
        }
        out.add_assign(&branch)?;
    }
    let mut mat = out.partial_trace(&[0, 3])?;
    mat.normalized = false;
    Ok(mat)
}

/// Level-0 table: four components, one per `(j, k)` of a single link.
pub fn elementary_components<S: Scalar>(code: CodeSpec, params: &ErrorParams) -> Result<ComponentTable<S>> {
    params.validate()?;
    let enc = encoder_weights(code, &S::gate_error(params.beta));
    let mut entries = Vec::with_capacity(4);
    for j in 0..2u8 {
        for k in 0..2u8 {
            let mat = remote_cnot_component(j, k, params)?;
            entries.push((
                ComponentKey::new(u128::from(j), u128::from(k)),
                Component { weight: enc.weight(j, k).clone(), mat },
            ));
        }
    }
    ComponentTable::from_entries(0, code, entries)
}

/// Bell-measurement operator pulled back through the noisy CNOT, on the
/// measured pair `(control, target)`:
/// `(1-β) U†(H P_ph H ⊗ P_p)U + β/4 Tr(H P_ph H ⊗ P_p) I`.
pub fn bsm_effect<S: Scalar>(outcome: SwapOutcome, beta: &S, delta: f64) -> DMat<S> {
    let pz = |bit: u8| if bit == 0 { [1.0 - delta, delta] } else { [delta, 1.0 - delta] };
    let ph = pz(outcome.phase);
    let p = pz(outcome.parity);
    // H diag(a, b) H = [[a+b, a-b], [a-b, a+b]] / 2.
    let ctrl = [[(ph[0] + ph[1]) / 2.0, (ph[0] - ph[1]) / 2.0], [(ph[0] - ph[1]) / 2.0, (ph[0] + ph[1]) / 2.0]];
    let m = |r: usize, c: usize| -> f64 {
        if (r & 1) != (c & 1) {
            0.0
        } else {
            ctrl[r >> 1][c >> 1] * p[r & 1]
        }
    };
    // CNOT permutation: |c t> -> |c, t xor c>.
    let u = |x: usize| if x & 2 != 0 { x ^ 1 } else { x };
    let trace: f64 = (0..4).map(|i| m(i, i)).sum();
    let keep = S::one().sub(beta);
    let depol = beta.scale(trace / 4.0);
    DMat::from_fn(2, |r, c| {
        let mut v = keep.scale(m(u(r), u(c)));
        if r == c {
            v.add_assign(&depol);
        }
        v
    })
}

/// Row swap `L(a, b1) ⊗ R(a2, b)` → `(a, b)`: contract the measured pair
/// against the pulled-back Bell-measurement operator.
fn swap_contract<S: Scalar>(left: &DMat<S>, right: &DMat<S>, effect: &DMat<S>) -> DMat<S> {
    // t[a][a'][x2][y2] = Σ_{x1,y1} L[(a,x1),(a',y1)] F[(y1,y2),(x1,x2)]
    let mut t: [[[[S; 2]; 2]; 2]; 2] = std::array::from_fn(|_| std::array::from_fn(|_| std::array::from_fn(|_| [S::zero(), S::zero()])));
    for a in 0..2 {
        for ap in 0..2 {
            for x1 in 0..2 {
                for y1 in 0..2 {
                    let l = left.get(a * 2 + x1, ap * 2 + y1);
                    if l.is_zero() {
                        continue;
                    }
                    for x2 in 0..2 {
                        for y2 in 0..2 {
                            t[a][ap][x2][y2].mul_add_assign(l, effect.get(y1 * 2 + y2, x1 * 2 + x2));
                        }
                    }
                }
            }
        }
    }
    let mut out = DMat::zeros(2);
    for a in 0..2 {
        for ap in 0..2 {
            for b in 0..2 {
                for bp in 0..2 {
                    let mut acc = S::zero();
                    for x2 in 0..2 {
                        for y2 in 0..2 {
                            acc.mul_add_assign(&t[a][ap][x2][y2], right.get(x2 * 2 + b, y2 * 2 + bp));
                        }
                    }
                    out.set(a * 2 + b, ap * 2 + bp, acc);
                }
            }
        }
    }
    out
}

/// Same row swap, carried out gate by gate on the four-qubit register.
pub fn swap_reference<S: Scalar>(
    left: &DMat<S>,
    right: &DMat<S>,
    params: &ErrorParams,
    outcome: SwapOutcome,
    frame: PauliFrame,
) -> Result<DMat<S>> {
    let beta = S::gate_error(params.beta);
    let m = left
        .tensor(right)
        .noisy_cnot(1, 2, &beta)?
        .apply_local_unitary(Gate::H, 1)?
        .noisy_measure(1, Basis::Z, outcome.phase, params.delta)?
        .noisy_measure(2, Basis::Z, outcome.parity, params.delta)?
        .partial_trace(&[0, 3])?;
    frame.apply(m, 1)
}

/// Swap one row with the fast contraction.
pub fn swap_row<S: Scalar>(
    left: &DMat<S>,
    right: &DMat<S>,
    params: &ErrorParams,
    outcome: SwapOutcome,
    frame: PauliFrame,
) -> Result<DMat<S>> {
    let effect = bsm_effect(outcome, &S::gate_error(params.beta), params.delta);
    frame.apply(swap_contract(left, right, &effect), 1)
}

/// Join two equal-level tables through one station, keeping the
/// representative outcome `(0, 0)` on every row (no correction needed).
pub fn swap_components<S: Scalar>(
    left: &ComponentTable<S>,
    right: &ComponentTable<S>,
    params: &ErrorParams,
) -> Result<ComponentTable<S>> {
    swap_components_with(left, right, params, SwapOutcome::REPRESENTATIVE, PauliFrame::IDENTITY)
}

pub fn swap_components_with<S: Scalar>(
    left: &ComponentTable<S>,
    right: &ComponentTable<S>,
    params: &ErrorParams,
    outcome: SwapOutcome,
    frame: PauliFrame,
) -> Result<ComponentTable<S>> {
    if left.level != right.level {
        return param_err(format!("cannot swap level {} with level {}", left.level, right.level));
    }
    if left.code != right.code {
        return param_err("cannot swap tables built for different codes");
    }
    if left.level >= MAX_LEVEL {
        return param_err(format!("nesting level above {MAX_LEVEL} is not supported"));
    }
    params.validate()?;
    let effect = bsm_effect(outcome, &S::gate_error(params.beta), params.delta);
    let links = left.links();
    let mut entries: Vec<(ComponentKey, Component<S>)> = left
        .entries
        .par_iter()
        .flat_map_iter(|(lk, lc)| {
            let effect = &effect;
            right.entries.iter().map(move |(rk, rc)| {
                let mat = frame.apply(swap_contract(&lc.mat, &rc.mat, effect), 1)?;
                Ok((lk.concat(*rk, links), Component { weight: lc.weight.mul(&rc.weight), mat }))
            })
        })
        .collect::<Result<_>>()?;
    entries.par_sort_unstable_by_key(|(key, _)| *key);
    Ok(ComponentTable { level: left.level + 1, code: left.code, entries })
}

/// Which components survive after each swap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ApproxStrategy {
    Exact,
    /// Keep only the four keys whose label strings are constant.
    IdenticalOnly,
    /// Keep entries whose leading order in β is at most `max_order`.
    Analytic { max_order: u32 },
    /// Keep the `n_top` largest entries across the whole table.
    Numeric { n_top: usize },
}

impl ApproxStrategy {
    pub fn label(&self) -> String {
        match self {
            ApproxStrategy::Exact => "exact".into(),
            ApproxStrategy::IdenticalOnly => "identical".into(),
            ApproxStrategy::Analytic { max_order } => format!("analytic{max_order}"),
            ApproxStrategy::Numeric { n_top } => format!("numeric{n_top}"),
        }
    }

    pub fn validate_for<S: Scalar>(&self) -> Result<()> {
        match self {
            ApproxStrategy::Analytic { max_order } if !(1..=2).contains(max_order) => {
                param_err(format!("analytic truncation order {max_order} (supported: 1, 2)"))
            }
            ApproxStrategy::Analytic { .. } if !S::SYMBOLIC => {
                Err(Error::Unsupported("analytic truncation needs polynomial scalars".into()))
            }
            ApproxStrategy::Numeric { n_top: 0 } => param_err("n_top must be positive"),
            ApproxStrategy::Numeric { .. } if S::SYMBOLIC => {
                Err(Error::Unsupported("numeric truncation needs float scalars".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Truncate a table according to `strategy`. Every strategy except exact
/// also drops all-zero components.
pub fn apply_strategy<S: Scalar>(mut table: ComponentTable<S>, strategy: ApproxStrategy) -> Result<ComponentTable<S>> {
    strategy.validate_for::<S>()?;
    match strategy {
        ApproxStrategy::Exact => return Ok(table),
        ApproxStrategy::IdenticalOnly => {
            let links = table.links();
            table.retain(|(key, _)| key.is_identical(links));
        }
        ApproxStrategy::Analytic { max_order } => {
            for (_, c) in table.entries.iter_mut() {
                c.mat = c.mat.truncate_by_order(max_order);
            }
        }
        ApproxStrategy::Numeric { n_top } => numeric_truncate(&mut table, n_top),
    }
    table.retain(|(_, c)| !c.mat.is_zero());
    Ok(table)
}

fn numeric_truncate<S: Scalar>(table: &mut ComponentTable<S>, n_top: usize) {
    let mut mags: Vec<f64> = table
        .entries
        .iter()
        .flat_map(|(_, c)| c.mat.entries().iter().map(Scalar::magnitude))
        .filter(|&m| m > 0.0)
        .collect();
    if mags.len() <= n_top {
        return;
    }
    let (_, cut, _) = mags.select_nth_unstable_by(n_top - 1, |a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let threshold = *cut * (1.0 - TIE_RTOL);
    for (_, c) in table.entries.iter_mut() {
        for v in c.mat.entries_mut() {
            if v.magnitude() < threshold {
                *v = S::zero();
            }
        }
    }
}

/// Build the representative good-outcome table at nesting level `n` by
/// repeated self-swapping, truncating after every swap.
pub fn build_table<S: Scalar>(
    code: CodeSpec,
    params: &ErrorParams,
    n: u32,
    strategy: ApproxStrategy,
) -> Result<ComponentTable<S>> {
    let mut last = None;
    build_levels::<S>(code, params, n, strategy, |t| {
        if t.level() == n {
            last = Some(t.clone());
        }
        Ok(true)
    })?;
    last.ok_or_else(|| Error::Parameter(format!("nesting level {n} not reached")))
}

/// Runs the same recursion as [`build_table`] up to `n_max`, handing each
/// level's table (level 0 included) to `visit`. Stops early when `visit`
/// returns `false`.
pub fn build_levels<S: Scalar>(
    code: CodeSpec,
    params: &ErrorParams,
    n_max: u32,
    strategy: ApproxStrategy,
    mut visit: impl FnMut(&ComponentTable<S>) -> Result<bool>,
) -> Result<()> {
    strategy.validate_for::<S>()?;
    if n_max > MAX_LEVEL {
        return param_err(format!("nesting level {n_max} exceeds {MAX_LEVEL}"));
    }
    let mut table = elementary_components::<S>(code, params)?;
    if !visit(&table)? {
        return Ok(());
    }
    for _ in 0..n_max {
        table = apply_strategy(swap_components(&table, &table, params)?, strategy)?;
        if !visit(&table)? {
            break;
        }
    }
    Ok(())
}

/// Trace of the code-form part of the encoded input over `2^level` links,
/// `(2 c_diag)^links`. The neglected encoder cross terms carry the rest.
pub fn code_form_norm(code: CodeSpec, beta: f64, level: u32) -> f64 {
    let c = encoder_weights(code, &Complex64::new(beta, 0.0)).c_diag.re;
    (2.0 * c).powf(f64::from(1u32 << level))
}

/// log2 of the number of good outcome patterns across all stations: per
/// station two agreeing parity patterns times any of `2^q` phase patterns.
pub fn good_pattern_count_log2(code: CodeSpec, level: u32) -> f64 {
    ((code.size() + 1) as f64) * f64::from((1u32 << level) - 1)
}

/// Sum of weighted products of per-row two-qubit matrices,
/// `Σ_t w_t ⊗_i mats[idx_t,i]`, over `q` rows.
#[derive(Debug, Clone)]
pub struct ProductState {
    q: usize,
    mats: Arc<Vec<DMat<Complex64>>>,
    terms: Vec<(Complex64, Vec<u32>)>,
}

impl ProductState {
    pub fn new(q: usize, mats: Arc<Vec<DMat<Complex64>>>, terms: Vec<(Complex64, Vec<u32>)>) -> Result<Self> {
        if terms.iter().any(|(_, idx)| idx.len() != q || idx.iter().any(|&i| i as usize >= mats.len())) {
            return param_err("product term does not match the row count");
        }
        if mats.iter().any(|m| m.qubits() != 2) {
            return param_err("row matrices must be two-qubit");
        }
        Ok(ProductState { q, mats, terms })
    }

    /// The state `Σ weight · mat^{⊗q}` of a numeric table.
    pub fn from_table(table: &ComponentTable<Complex64>) -> Self {
        let q = table.code().size();
        let mats = Arc::new(table.entries().iter().map(|(_, c)| c.mat.clone()).collect::<Vec<_>>());
        let terms = table.entries().iter().enumerate().map(|(i, (_, c))| (c.weight, vec![i as u32; q])).collect();
        ProductState { q, mats, terms }
    }

    pub fn rows(&self) -> usize {
        self.q
    }

    pub fn mats(&self) -> &[DMat<Complex64>] {
        &self.mats
    }

    pub fn terms(&self) -> &[(Complex64, Vec<u32>)] {
        &self.terms
    }

    pub fn trace(&self) -> f64 {
        let traces: Vec<Complex64> = self.mats.iter().map(|m| m.trace()).collect();
        self.terms
            .iter()
            .map(|(w, idx)| idx.iter().fold(*w, |acc, &i| acc * traces[i as usize]))
            .sum::<Complex64>()
            .re
    }

    /// Dense matrix over `2q` qubits ordered `(A1..Aq, B1..Bq)`.
    pub fn assemble(&self) -> Result<DMat<Complex64>> {
        let q = self.q;
        if 2 * q > crate::dmat::MAX_QUBITS {
            return Err(Error::Unsupported(format!("assembling {} qubits", 2 * q)));
        }
        let row_index = |full: usize, i: usize| -> usize {
            let a = (full >> (2 * q - 1 - i)) & 1;
            let b = (full >> (q - 1 - i)) & 1;
            a * 2 + b
        };
        let dim = 1usize << (2 * q);
        let data: Vec<Complex64> = (0..dim * dim)
            .into_par_iter()
            .map(|pos| {
                let (r, c) = (pos / dim, pos % dim);
                let rows: Vec<(usize, usize)> = (0..q).map(|i| (row_index(r, i), row_index(c, i))).collect();
                self.terms
                    .iter()
                    .map(|(w, idx)| {
                        idx.iter().zip(&rows).fold(*w, |acc, (&m, &(ri, ci))| acc * self.mats[m as usize].get(ri, ci))
                    })
                    .sum()
            })
            .collect();
        let mut out = DMat::zeros(2 * q);
        out.entries_mut().copy_from_slice(&data);
        Ok(out)
    }
}

/// Per-station record of row outcomes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeRecord {
    pub stations: Vec<Vec<SwapOutcome>>,
}

impl OutcomeRecord {
    /// Good iff, at every station, all parity bits agree.
    pub fn is_good(&self) -> bool {
        self.stations.iter().all(|rows| rows.iter().all(|o| o.parity == rows[0].parity))
    }
}

#[derive(Debug, Clone)]
pub struct OutcomeBranch {
    pub record: OutcomeRecord,
    /// Sub-normalized state after the frame correction.
    pub state: ProductState,
    /// Code-form input trace the probabilities are relative to.
    pub norm: f64,
}

impl OutcomeBranch {
    pub fn probability(&self) -> f64 {
        self.state.trace() / self.norm
    }
}

/// Frame used for an arbitrary outcome pattern at one station: a logical
/// X on the right block chosen by majority over parity bits, and each
/// row's phase bit fixed by Z on that row.
pub fn station_frame(code: CodeSpec, rows: &[SwapOutcome], row: usize) -> PauliFrame {
    let ones = rows.iter().filter(|o| o.parity == 1).count();
    PauliFrame { x: code.majority(ones), z: rows[row].phase }
}

/// Every row outcome pattern of the single station at nesting level one.
pub fn enumerate_outcomes_level1(code: CodeSpec, params: &ErrorParams) -> Result<Vec<OutcomeBranch>> {
    let base = elementary_components::<Complex64>(code, params)?;
    let q = code.size();
    // Row tables for every (outcome, x-frame); the z-frame equals the phase
    // bit. Exact swaps keep every key, so all tables share one key order.
    let mut mats = Vec::new();
    let mut weights = Vec::new();
    let mut n_keys = 0;
    for outcome in SwapOutcome::all() {
        for x in 0..2u8 {
            let t = swap_components_with(&base, &base, params, outcome, PauliFrame { x, z: outcome.phase })?;
            n_keys = t.len();
            if weights.is_empty() {
                weights = t.entries().iter().map(|(_, c)| c.weight).collect();
            }
            mats.extend(t.entries().iter().map(|(_, c)| c.mat.clone()));
        }
    }
    let mats = Arc::new(mats);
    let index = |o: SwapOutcome, x: u8, key: usize| -> u32 {
        let oi = (o.parity * 2 + o.phase) as usize;
        ((oi * 2 + x as usize) * n_keys + key) as u32
    };
    let norm = code_form_norm(code, params.beta, 1);
    let mut branches = Vec::with_capacity(1 << (2 * q));
    for pattern in 0..1usize << (2 * q) {
        let rows: Vec<SwapOutcome> = (0..q)
            .map(|i| {
                let two = (pattern >> (2 * (q - 1 - i))) & 3;
                SwapOutcome { parity: (two >> 1) as u8, phase: (two & 1) as u8 }
            })
            .collect();
        let x = station_frame(code, &rows, 0).x;
        let terms = (0..n_keys)
            .map(|key| (weights[key], rows.iter().map(|&o| index(o, x, key)).collect()))
            .collect();
        branches.push(OutcomeBranch {
            record: OutcomeRecord { stations: vec![rows] },
            state: ProductState::new(q, mats.clone(), terms)?,
            norm,
        });
    }
    Ok(branches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::encoded_bell;
    use crate::scalar::Poly;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    type C = Complex64;

    fn c(x: f64) -> C {
        C::new(x, 0.0)
    }

    fn phi_plus() -> DMat<C> {
        DMat::pure_real(2, &[FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2])
    }

    fn perfect() -> ErrorParams {
        ErrorParams::ideal()
    }

    /// Independent channel oracle: explicit Kraus/operator-sum arithmetic
    /// with 16×16 matrices.
    mod oracle {
        use super::*;

        pub fn cnot(n: usize, control: usize, target: usize) -> DMat<C> {
            let cm = 1usize << (n - 1 - control);
            let tm = 1usize << (n - 1 - target);
            DMat::from_fn(n, |r, col| {
                let img = if col & cm != 0 { col ^ tm } else { col };
                c(if r == img { 1.0 } else { 0.0 })
            })
        }

        pub fn single(n: usize, qubit: usize, m: [[f64; 2]; 2]) -> DMat<C> {
            let bit = 1usize << (n - 1 - qubit);
            DMat::from_fn(n, |r, col| {
                if (r & !bit) != (col & !bit) {
                    return c(0.0);
                }
                c(m[usize::from(r & bit != 0)][usize::from(col & bit != 0)])
            })
        }

        pub fn conj(u: &DMat<C>, rho: &DMat<C>) -> DMat<C> {
            u.matmul(rho).unwrap().matmul(&u.dagger()).unwrap()
        }

        /// (1-β) U ρ U† + β · (I/4 on the pair) ⊗ Tr_pair ρ, the depolarizing
        /// part via the twirl over all 16 two-qubit Paulis.
        pub fn noisy_cnot(rho: &DMat<C>, control: usize, target: usize, beta: f64) -> DMat<C> {
            let n = rho.qubits();
            let u = cnot(n, control, target);
            let mut out = conj(&u, rho).scale_real(1.0 - beta);
            let paulis = [[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, -1.0]]];
            let mut twirl = DMat::zeros(n);
            let y = |r: &DMat<C>, q: usize| {
                // Y ρ Y† = (XZ) ρ (XZ)† up to a global phase.
                let xz = single(n, q, paulis[1]).matmul(&single(n, q, paulis[2])).unwrap();
                conj(&xz, r)
            };
            for a in 0..4 {
                for b in 0..4 {
                    let mut t = rho.clone();
                    t = match a {
                        0 => t,
                        3 => y(&t, control),
                        p => conj(&single(n, control, paulis[p]), &t),
                    };
                    t = match b {
                        0 => t,
                        3 => y(&t, target),
                        p => conj(&single(n, target, paulis[p]), &t),
                    };
                    twirl.add_assign(&t).unwrap();
                }
            }
            out.add_assign(&twirl.scale_real(beta / 16.0)).unwrap();
            out
        }

        pub fn measure(rho: &DMat<C>, qubit: usize, x_basis: bool, outcome: u8, delta: f64) -> DMat<C> {
            let n = rho.qubits();
            let s = if outcome == 0 { [(1.0 - delta).sqrt(), delta.sqrt()] } else { [delta.sqrt(), (1.0 - delta).sqrt()] };
            let mut k = single(n, qubit, [[s[0], 0.0], [0.0, s[1]]]);
            if x_basis {
                let h = single(n, qubit, [[FRAC_1_SQRT_2, FRAC_1_SQRT_2], [FRAC_1_SQRT_2, -FRAC_1_SQRT_2]]);
                k = h.matmul(&k).unwrap().matmul(&h).unwrap();
            }
            conj(&k, rho)
        }

        pub fn remote_cnot(j: u8, k: u8, p: &ErrorParams) -> DMat<C> {
            let input = DMat::<C>::outer(1, j as usize, k as usize)
                .tensor(&werner::<C>(p.f0).unwrap())
                .tensor(&DMat::outer(1, 0, 0));
            let s = noisy_cnot(&input, 0, 1, p.beta);
            let x2 = single(4, 2, [[0.0, 1.0], [1.0, 0.0]]);
            let z0 = single(4, 0, [[1.0, 0.0], [0.0, -1.0]]);
            let s = measure(&s, 1, false, 0, p.delta).add(&conj(&x2, &measure(&s, 1, false, 1, p.delta))).unwrap();
            let s = noisy_cnot(&s, 2, 3, p.beta);
            let s = measure(&s, 2, true, 0, p.delta).add(&conj(&z0, &measure(&s, 2, true, 1, p.delta))).unwrap();
            s.partial_trace(&[0, 3]).unwrap()
        }
    }

    #[test]
    fn perfect_elementary_components() {
        let t = elementary_components::<C>(CodeSpec::three(), &perfect()).unwrap();
        assert_eq!(t.len(), 4);
        for (key, comp) in t.entries() {
            let (j, k) = (key.j as usize, key.k as usize);
            let expected = DMat::<C>::outer(2, j * 3, k * 3);
            assert!(comp.mat.max_abs_diff(&expected) < 1e-14, "{key:?}");
            assert_abs_diff_eq!(comp.weight.re, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn elementary_components_match_operator_sum_oracle() {
        let p = ErrorParams::new(0.97, 0.01, 0.004).unwrap();
        let t = elementary_components::<C>(CodeSpec::three(), &p).unwrap();
        for j in 0..2u8 {
            for k in 0..2u8 {
                let got = &t.get(ComponentKey::new(j.into(), k.into())).unwrap().mat;
                let want = oracle::remote_cnot(j, k, &p);
                assert!(got.max_abs_diff(&want) < 1e-14, "({j},{k})");
            }
        }
        // Off-diagonal inputs are traceless and map to traceless outputs.
        assert!(t.get(ComponentKey::new(0, 1)).unwrap().mat.trace().norm() < 1e-15);
    }

    #[test]
    fn perfect_level0_assembles_encoded_bell() {
        let t = elementary_components::<C>(CodeSpec::three(), &perfect()).unwrap();
        let rho = ProductState::from_table(&t).assemble().unwrap();
        assert!(rho.max_abs_diff(&encoded_bell(CodeSpec::three())) < 1e-14);
        assert_abs_diff_eq!(ProductState::from_table(&t).trace(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn swap_of_product_components() {
        let zero = DMat::<C>::outer(2, 0, 0);
        let out = swap_row(&zero, &zero, &perfect(), SwapOutcome::REPRESENTATIVE, PauliFrame::IDENTITY).unwrap();
        // Phase bit is a fair coin, parity is certain.
        assert!(out.max_abs_diff(&zero.scale_real(0.5)) < 1e-15);
    }

    #[test]
    fn swap_of_bell_pairs_with_frames() {
        let phi = phi_plus();
        let mut total = DMat::zeros(2);
        for o in SwapOutcome::all() {
            let frame = PauliFrame { x: o.parity, z: o.phase };
            let out = swap_row(&phi, &phi, &perfect(), o, frame).unwrap();
            assert!(out.max_abs_diff(&phi.scale_real(0.25)) < 1e-15, "{o:?}");
            total.add_assign(&out).unwrap();
        }
        assert!(total.max_abs_diff(&phi) < 1e-15);
    }

    fn random_two_qubit() -> impl Strategy<Value = DMat<C>> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16)
            .prop_map(|v| {
                let mut m = DMat::zeros(2);
                for (e, (re, im)) in m.entries_mut().iter_mut().zip(v) {
                    *e = C::new(re, im);
                }
                m
            })
    }

    proptest! {
        #[test]
        fn fast_swap_matches_gate_by_gate(
            l in random_two_qubit(), r in random_two_qubit(),
            beta in 0.0f64..0.3, delta in 0.0f64..0.2, o in 0usize..4, fx in 0u8..2, fz in 0u8..2,
        ) {
            let p = ErrorParams::new(1.0, beta, delta).unwrap();
            let o = SwapOutcome::all()[o];
            let f = PauliFrame { x: fx, z: fz };
            let fast = swap_row(&l, &r, &p, o, f).unwrap();
            let slow = swap_reference(&l, &r, &p, o, f).unwrap();
            prop_assert!(fast.max_abs_diff(&slow) < 1e-13);
        }

        #[test]
        fn swap_outcomes_preserve_trace(l in random_two_qubit(), r in random_two_qubit(), beta in 0.0f64..1.0, delta in 0.0f64..0.5) {
            let p = ErrorParams::new(1.0, beta, delta).unwrap();
            let mut sum = C::new(0.0, 0.0);
            for o in SwapOutcome::all() {
                sum += swap_row(&l, &r, &p, o, PauliFrame::IDENTITY).unwrap().trace();
            }
            prop_assert!((sum - l.trace() * r.trace()).norm() < 1e-12);
        }
    }

    #[test]
    fn symbolic_swap_matches_numeric() {
        let p = ErrorParams::new(0.98, 0.03, 0.01).unwrap();
        let lp = remote_cnot_component::<Poly>(0, 1, &p).unwrap();
        let rp = remote_cnot_component::<Poly>(1, 1, &p).unwrap();
        let fast = swap_row(&lp, &rp, &p, SwapOutcome::REPRESENTATIVE, PauliFrame::IDENTITY).unwrap();
        let slow = swap_reference(&lp, &rp, &p, SwapOutcome::REPRESENTATIVE, PauliFrame::IDENTITY).unwrap();
        assert!(fast.evaluate(0.03).max_abs_diff(&slow.evaluate(0.03)) < 1e-14);
        let numeric = swap_row(
            &lp.evaluate(0.03),
            &rp.evaluate(0.03),
            &p,
            SwapOutcome::REPRESENTATIVE,
            PauliFrame::IDENTITY,
        )
        .unwrap();
        assert!(fast.evaluate(0.03).max_abs_diff(&numeric) < 1e-14);
    }

    #[test]
    fn level_mismatch_is_rejected() {
        let p = perfect();
        let t0 = elementary_components::<C>(CodeSpec::three(), &p).unwrap();
        let t1 = swap_components(&t0, &t0, &p).unwrap();
        assert!(matches!(swap_components(&t0, &t1, &p), Err(Error::Parameter(_))));
    }

    #[test]
    fn exact_key_counts() {
        let p = ErrorParams::new(0.99, 0.01, 0.005).unwrap();
        for n in 0..=2u32 {
            let t = build_table::<C>(CodeSpec::three(), &p, n, ApproxStrategy::Exact).unwrap();
            assert_eq!(t.len(), 1usize << (1 << (n + 1)), "level {n}");
        }
    }

    /// Level-n state from the gate-by-gate row swap over every key pair.
    fn brute_force_table(code: CodeSpec, p: &ErrorParams, n: u32) -> ComponentTable<C> {
        let mut t = elementary_components::<C>(code, p).unwrap();
        for _ in 0..n {
            let links = t.links();
            let mut entries = Vec::new();
            for (lk, lc) in t.entries() {
                for (rk, rc) in t.entries() {
                    let mat =
                        swap_reference(&lc.mat, &rc.mat, p, SwapOutcome::REPRESENTATIVE, PauliFrame::IDENTITY).unwrap();
                    entries.push((lk.concat(*rk, links), Component { weight: lc.weight * rc.weight, mat }));
                }
            }
            t = ComponentTable::from_entries(t.level() + 1, code, entries).unwrap();
        }
        t
    }

    #[test]
    fn exact_recursion_matches_brute_force() {
        let p = ErrorParams::new(0.99, 0.01, 0.005).unwrap();
        for n in 1..=2 {
            let fast = ProductState::from_table(&build_table::<C>(CodeSpec::three(), &p, n, ApproxStrategy::Exact).unwrap())
                .assemble()
                .unwrap();
            let slow = ProductState::from_table(&brute_force_table(CodeSpec::three(), &p, n)).assemble().unwrap();
            let scale = slow.entries().iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(fast.max_abs_diff(&slow) <= 1e-12 * scale.max(1e-300), "n={n}");
        }
    }

    #[test]
    fn polynomial_pipeline_matches_float() {
        let p = ErrorParams::new(0.99, 0.02, 0.005).unwrap();
        for n in 0..=2 {
            let sym = build_table::<Poly>(CodeSpec::three(), &p, n, ApproxStrategy::Exact).unwrap();
            let num = build_table::<C>(CodeSpec::three(), &p, n, ApproxStrategy::Exact).unwrap();
            let eval = sym.evaluate(p.beta);
            assert_eq!(eval.len(), num.len());
            for ((ka, a), (kb, b)) in eval.entries().iter().zip(num.entries()) {
                assert_eq!(ka, kb);
                assert!((a.weight - b.weight).norm() < 1e-12);
                assert!(a.mat.max_abs_diff(&b.mat) <= 1e-9, "n={n} {ka:?}");
            }
        }
    }

    #[test]
    fn perfect_representative_probability() {
        for code in [CodeSpec::three(), CodeSpec::five()] {
            for n in 1..=2 {
                let t = build_table::<C>(code, &perfect(), n, ApproxStrategy::Exact).unwrap();
                let raw = ProductState::from_table(&t).trace();
                let expected = (-good_pattern_count_log2(code, n)).exp2();
                assert_abs_diff_eq!(raw, expected, epsilon = 1e-12 * expected);
            }
        }
    }

    #[test]
    fn identical_only_keeps_constant_labels() {
        let p = ErrorParams::new(0.99, 0.01, 0.0).unwrap();
        let t = build_table::<C>(CodeSpec::three(), &p, 1, ApproxStrategy::IdenticalOnly).unwrap();
        let keys: Vec<(u128, u128)> = t.entries().iter().map(|(k, _)| (k.j, k.k)).collect();
        assert_eq!(keys, vec![(0, 0), (0, 3), (3, 0), (3, 3)]);
    }

    #[test]
    fn numeric_with_everything_kept_is_a_no_op() {
        let p = ErrorParams::new(0.99, 0.01, 0.005).unwrap();
        let e = elementary_components::<C>(CodeSpec::three(), &p).unwrap();
        let t = swap_components(&e, &e, &p).unwrap();
        let all = t.len() * 16;
        let out = apply_strategy(t.clone(), ApproxStrategy::Numeric { n_top: all }).unwrap();
        let nonzero: Vec<_> = t.entries().iter().filter(|(_, c)| !c.mat.is_zero()).cloned().collect();
        assert_eq!(out.entries(), &nonzero[..]);
    }

    #[test]
    fn numeric_keeps_ties_at_the_cut() {
        let code = CodeSpec::three();
        let mut a = DMat::<C>::zeros(2);
        a.set(0, 0, c(1.0));
        a.set(1, 1, c(0.5));
        let mut b = DMat::<C>::zeros(2);
        b.set(2, 2, c(0.5));
        b.set(3, 3, c(0.1));
        let t = ComponentTable::from_entries(
            0,
            code,
            vec![
                (ComponentKey::new(0, 0), Component { weight: c(1.0), mat: a }),
                (ComponentKey::new(1, 1), Component { weight: c(1.0), mat: b }),
            ],
        )
        .unwrap();
        let out = apply_strategy(t, ApproxStrategy::Numeric { n_top: 2 }).unwrap();
        let kept: usize = out.entries().iter().map(|(_, c)| c.mat.entries().iter().filter(|v| v.norm() > 0.0).count()).sum();
        assert_eq!(kept, 3);
        let out = apply_strategy(out, ApproxStrategy::Numeric { n_top: 1 }).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn analytic_purges_high_order_components() {
        let code = CodeSpec::three();
        let mut m = DMat::<Poly>::zeros(2);
        m.set(0, 0, Poly::from_real_coeffs(&[0.0, 0.0, 1.0, 3.0]));
        m.set(1, 2, Poly::from_real_coeffs(&[0.0, 0.0, 0.0, 2.0]));
        let mut keep = DMat::<Poly>::zeros(2);
        keep.set(0, 0, Poly::from_real_coeffs(&[0.0, 1.0, 5.0]));
        keep.set(3, 3, Poly::from_real_coeffs(&[0.0, 0.0, 1.0]));
        let t = ComponentTable::from_entries(
            0,
            code,
            vec![
                (ComponentKey::new(0, 1), Component { weight: Poly::one(), mat: m }),
                (ComponentKey::new(1, 1), Component { weight: Poly::one(), mat: keep }),
            ],
        )
        .unwrap();
        let out = apply_strategy(t, ApproxStrategy::Analytic { max_order: 1 }).unwrap();
        assert_eq!(out.len(), 1);
        let kept = &out.get(ComponentKey::new(1, 1)).unwrap().mat;
        assert_eq!(kept.get(0, 0), &Poly::from_real_coeffs(&[0.0, 1.0, 5.0]));
        assert!(kept.get(3, 3).is_zero());
    }

    #[test]
    fn strategy_needs_matching_scalar() {
        let p = perfect();
        let e = elementary_components::<C>(CodeSpec::three(), &p).unwrap();
        assert!(apply_strategy(e, ApproxStrategy::Analytic { max_order: 1 }).is_err());
        let e = elementary_components::<Poly>(CodeSpec::three(), &p).unwrap();
        assert!(apply_strategy(e, ApproxStrategy::Numeric { n_top: 20 }).is_err());
    }

    #[test]
    fn numeric_converges_monotonically_at_level_two() {
        let p = ErrorParams::new(1.0, 0.02, 0.0).unwrap();
        let code = CodeSpec::three();
        let exact = ProductState::from_table(&build_table::<C>(code, &p, 2, ApproxStrategy::Exact).unwrap())
            .assemble()
            .unwrap();
        let mut last = f64::INFINITY;
        for n_top in [20, 100, 256 * 16] {
            let approx = ProductState::from_table(&build_table::<C>(code, &p, 2, ApproxStrategy::Numeric { n_top }).unwrap())
                .assemble()
                .unwrap();
            let dev = approx.max_abs_diff(&exact);
            assert!(dev <= last + 1e-15, "n_top={n_top}: {dev} > {last}");
            last = dev;
        }
        assert!(last < 1e-15);
    }

    #[test]
    fn truncated_trace_never_exceeds_exact() {
        let p = ErrorParams::new(0.99, 0.02, 0.005).unwrap();
        let code = CodeSpec::three();
        for n in 1..=2 {
            let exact = ProductState::from_table(&build_table::<C>(code, &p, n, ApproxStrategy::Exact).unwrap()).trace();
            for s in [ApproxStrategy::IdenticalOnly, ApproxStrategy::Numeric { n_top: 20 }] {
                let t = ProductState::from_table(&build_table::<C>(code, &p, n, s).unwrap()).trace();
                assert!(t <= exact + 1e-12, "{s:?} n={n}: {t} > {exact}");
            }
            for m in 1..=2 {
                let t = build_table::<Poly>(code, &p, n, ApproxStrategy::Analytic { max_order: m }).unwrap();
                let t = ProductState::from_table(&t.evaluate(p.beta)).trace();
                assert!(t <= exact + 1e-12, "analytic{m} n={n}: {t} > {exact}");
            }
        }
    }

    #[test]
    fn level_one_enumeration_is_complete() {
        for (code, p) in [
            (CodeSpec::three(), ErrorParams::new(0.98, 0.01, 0.005).unwrap()),
            (CodeSpec::five(), ErrorParams::new(1.0, 0.02, 0.0).unwrap()),
        ] {
            let branches = enumerate_outcomes_level1(code, &p).unwrap();
            assert_eq!(branches.len(), 1 << (2 * code.size()));
            let total: f64 = branches.iter().map(OutcomeBranch::probability).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn good_outcomes_share_statistics() {
        let code = CodeSpec::three();
        let p = ErrorParams::new(0.98, 0.01, 0.005).unwrap();
        let branches = enumerate_outcomes_level1(code, &p).unwrap();
        let rep = ProductState::from_table(&build_table::<C>(code, &p, 1, ApproxStrategy::Exact).unwrap());
        let rep_rho = rep.assemble().unwrap();
        let good: Vec<_> = branches.iter().filter(|b| b.record.is_good()).collect();
        assert_eq!(good.len(), 2 << code.size());
        for b in good {
            let rho = b.state.assemble().unwrap();
            assert!(rho.max_abs_diff(&rep_rho) < 1e-14, "{:?}", b.record);
        }
        let p_good: f64 = branches.iter().filter(|b| b.record.is_good()).map(OutcomeBranch::probability).sum();
        let scaled = rep.trace() * good_pattern_count_log2(code, 1).exp2() / code_form_norm(code, p.beta, 1);
        assert_abs_diff_eq!(p_good, scaled, epsilon = 1e-12);
        assert!(p_good < 1.0);
    }

    #[test]
    fn perfect_enumeration_representative_weight() {
        let code = CodeSpec::three();
        let branches = enumerate_outcomes_level1(code, &perfect()).unwrap();
        for b in &branches {
            let pr = b.probability();
            if b.record.is_good() {
                assert_abs_diff_eq!(pr, 1.0 / 16.0, epsilon = 1e-14);
            } else {
                assert_abs_diff_eq!(pr, 0.0, epsilon = 1e-14);
            }
        }
        let rho = branches[0].state.assemble().unwrap();
        assert!(rho.max_abs_diff(&encoded_bell(code).scale_real(1.0 / 16.0)) < 1e-14);
    }
}
