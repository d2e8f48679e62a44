//! Dense few-qubit density matrices over a pluggable [`Scalar`], and the
//! elementary noise channels: Werner pairs, depolarizing CNOT and noisy
//! single-qubit measurement.
//!
//! Qubit 0 is the most significant bit of a basis index, so `|q0 q1 ... >`
//! reads left to right.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{param_err, Result};
use crate::params::{check_beta, check_delta, check_f0};
use crate::scalar::Scalar;

/// Largest register handled by the dense representation.
pub const MAX_QUBITS: usize = 12;

/// Single-qubit gates, all assumed error free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    H,
    X,
    Z,
}

impl Gate {
    fn matrix(self) -> [[f64; 2]; 2] {
        match self {
            Gate::H => [[FRAC_1_SQRT_2, FRAC_1_SQRT_2], [FRAC_1_SQRT_2, -FRAC_1_SQRT_2]],
            Gate::X => [[0.0, 1.0], [1.0, 0.0]],
            Gate::Z => [[1.0, 0.0], [0.0, -1.0]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Basis {
    Z,
    X,
}

/// Square matrix over `2^qubits` basis states.
///
/// `normalized` marks matrices that represent a full (trace one) state;
/// sub-normalized post-measurement matrices carry the outcome probability
/// as their trace, and linear-decomposition components need not be states.
#[derive(Debug, Clone, PartialEq)]
pub struct DMat<S> {
    qubits: usize,
    data: Vec<S>,
    pub normalized: bool,
}

impl<S: Scalar> DMat<S> {
    pub fn zeros(qubits: usize) -> Self {
        assert!(qubits >= 1 && qubits <= MAX_QUBITS, "unsupported register size {qubits}");
        let dim = 1usize << qubits;
        DMat { qubits, data: vec![S::zero(); dim * dim], normalized: false }
    }

    pub fn identity(qubits: usize) -> Self {
        let mut m = Self::zeros(qubits);
        for i in 0..m.dim() {
            m.set(i, i, S::one());
        }
        m
    }

    /// `|row><col|` on a register of `qubits` qubits.
    pub fn outer(qubits: usize, row: usize, col: usize) -> Self {
        let mut m = Self::zeros(qubits);
        m.set(row, col, S::one());
        m
    }

    pub fn from_fn(qubits: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut m = Self::zeros(qubits);
        let dim = m.dim();
        for r in 0..dim {
            for c in 0..dim {
                m.data[r * dim + c] = f(r, c);
            }
        }
        m
    }

    /// Pure state `|psi><psi|` from real amplitudes.
    pub fn pure_real(qubits: usize, amps: &[f64]) -> Self {
        assert_eq!(amps.len(), 1 << qubits);
        let mut m = Self::from_fn(qubits, |r, c| S::from_real(amps[r] * amps[c]));
        m.normalized = true;
        m
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.qubits
    }

    pub fn get(&self, r: usize, c: usize) -> &S {
        &self.data[r * self.dim() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        let dim = self.dim();
        self.data[r * dim + c] = v;
    }

    pub fn entries(&self) -> &[S] {
        &self.data
    }

    pub fn entries_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn trace(&self) -> S {
        let dim = self.dim();
        let mut t = S::zero();
        for i in 0..dim {
            t.add_assign(&self.data[i * dim + i]);
        }
        t
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a.add(b)).collect();
        Ok(DMat { qubits: self.qubits, data, normalized: false })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            a.add_assign(b);
        }
        self.normalized = false;
        Ok(())
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, k: &S, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            a.mul_add_assign(k, b);
        }
        self.normalized = false;
        Ok(())
    }

    pub fn scale(&self, k: &S) -> Self {
        DMat { qubits: self.qubits, data: self.data.iter().map(|a| a.mul(k)).collect(), normalized: false }
    }

    pub fn scale_real(&self, k: f64) -> Self {
        DMat { qubits: self.qubits, data: self.data.iter().map(|a| a.scale(k)).collect(), normalized: false }
    }

    pub fn dagger(&self) -> Self {
        let dim = self.dim();
        Self::from_fn(self.qubits, |r, c| self.data[c * dim + r].conj())
    }

    /// Replace the matrix by `(rho + rho^dagger) / 2`.
    pub fn hermitize(&mut self) {
        let dim = self.dim();
        for r in 0..dim {
            for c in r..dim {
                let avg = self.data[r * dim + c].add(&self.data[c * dim + r].conj()).scale(0.5);
                self.data[c * dim + r] = avg.conj();
                self.data[r * dim + c] = avg;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(Scalar::is_zero)
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        let dim = self.dim();
        let mut out = Self::zeros(self.qubits);
        for r in 0..dim {
            for k in 0..dim {
                let a = &self.data[r * dim + k];
                if a.is_zero() {
                    continue;
                }
                for c in 0..dim {
                    out.data[r * dim + c].mul_add_assign(a, &other.data[k * dim + c]);
                }
            }
        }
        Ok(out)
    }

    /// `Tr(self * other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> Result<S> {
        self.same_shape(other)?;
        let dim = self.dim();
        let mut t = S::zero();
        for r in 0..dim {
            for c in 0..dim {
                t.mul_add_assign(&self.data[r * dim + c], &other.data[c * dim + r]);
            }
        }
        Ok(t)
    }

    /// Kronecker product; `self` occupies the leading qubits.
    pub fn tensor(&self, other: &Self) -> Self {
        let (da, db) = (self.dim(), other.dim());
        let qubits = self.qubits + other.qubits;
        let dim = da * db;
        let mut data = Vec::with_capacity(dim * dim);
        for ra in 0..da {
            for rb in 0..db {
                for ca in 0..da {
                    let a = &self.data[ra * da + ca];
                    for cb in 0..db {
                        data.push(a.mul(&other.data[rb * db + cb]));
                    }
                }
            }
        }
        DMat { qubits, data, normalized: self.normalized && other.normalized }
    }

    /// Trace out every qubit not listed in `keep`; the result orders its
    /// qubits as they appear in `keep`.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        let n = self.qubits;
        if keep.is_empty() {
            return param_err("partial trace must keep at least one qubit");
        }
        let mut seen = vec![false; n];
        for &q in keep {
            if q >= n || seen[q] {
                return param_err(format!("invalid keep set {keep:?} for {n} qubits"));
            }
            seen[q] = true;
        }
        let traced: Vec<usize> = (0..n).filter(|q| !seen[*q]).collect();
        let offsets = |qs: &[usize]| -> Vec<usize> {
            let k = qs.len();
            (0..1usize << k)
                .map(|v| {
                    qs.iter()
                        .enumerate()
                        .map(|(pos, &q)| ((v >> (k - 1 - pos)) & 1) << (n - 1 - q))
                        .sum()
                })
                .collect()
        };
        let kept_off = offsets(keep);
        let traced_off = offsets(&traced);
        let dim = self.dim();
        let mut out = Self::zeros(keep.len());
        let odim = out.dim();
        for r in 0..odim {
            for c in 0..odim {
                let mut acc = S::zero();
                for t in &traced_off {
                    acc.add_assign(&self.data[(kept_off[r] | t) * dim + (kept_off[c] | t)]);
                }
                out.data[r * odim + c] = acc;
            }
        }
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Reorder qubits: new qubit `m` is old qubit `order[m]`.
    pub fn permute_qubits(&self, order: &[usize]) -> Result<Self> {
        let n = self.qubits;
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&q| q >= n || std::mem::replace(&mut seen[q], true)) {
            return param_err(format!("{order:?} is not a permutation of {n} qubits"));
        }
        let dim = self.dim();
        let map: Vec<usize> = (0..dim)
            .map(|new| {
                (0..n)
                    .map(|m| ((new >> (n - 1 - m)) & 1) << (n - 1 - order[m]))
                    .sum()
            })
            .collect();
        let mut out = Self::from_fn(n, |r, c| self.data[map[r] * dim + map[c]].clone());
        out.normalized = self.normalized;
        Ok(out)
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.qubits {
            return param_err(format!("qubit {q} out of range for {} qubits", self.qubits));
        }
        Ok(())
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.qubits != other.qubits {
            return param_err(format!("dimension mismatch: {} vs {} qubits", self.qubits, other.qubits));
        }
        Ok(())
    }

    /// `G rho G^dagger` for an error-free single-qubit gate.
    pub fn apply_local_unitary(&self, gate: Gate, qubit: usize) -> Result<Self> {
        self.check_qubit(qubit)?;
        let g = gate.matrix();
        let dim = self.dim();
        let bit = 1usize << (self.qubits - 1 - qubit);
        let mut out = Self::zeros(self.qubits);
        for r in 0..dim {
            let rb = usize::from(r & bit != 0);
            for c in 0..dim {
                let cb = usize::from(c & bit != 0);
                let mut acc = S::zero();
                for a in 0..2 {
                    let ga = g[rb][a];
                    if ga == 0.0 {
                        continue;
                    }
                    let ri = if a == 1 { r | bit } else { r & !bit };
                    for b in 0..2 {
                        let gb = g[cb][b];
                        if gb == 0.0 {
                            continue;
                        }
                        let ci = if b == 1 { c | bit } else { c & !bit };
                        acc.add_assign(&self.data[ri * dim + ci].scale(ga * gb));
                    }
                }
                out.data[r * dim + c] = acc;
            }
        }
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Depolarizing CNOT: `(1-β) U ρ U† + (β/4) Tr_{c,t}(ρ) ⊗ 𝕀_{c,t}`.
    ///
    /// `beta` is a scalar so the polynomial realization can pass the
    /// monomial β itself.
    pub fn noisy_cnot(&self, control: usize, target: usize, beta: &S) -> Result<Self> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return param_err("CNOT control and target coincide");
        }
        let n = self.qubits;
        let dim = self.dim();
        let cm = 1usize << (n - 1 - control);
        let tm = 1usize << (n - 1 - target);
        let mask = cm | tm;
        let perm = |x: usize| if x & cm != 0 { x ^ tm } else { x };
        let keep = S::one().sub(beta);
        let quarter = beta.scale(0.25);
        let pairs = [0, tm, cm, cm | tm];

        let mut out = Self::zeros(n);
        for r in 0..dim {
            for c in 0..dim {
                let v = &self.data[r * dim + c];
                if !v.is_zero() {
                    out.data[perm(r) * dim + perm(c)].mul_add_assign(&keep, v);
                }
            }
        }
        if !beta.is_zero() {
            for r in 0..dim {
                for c in 0..dim {
                    if r & mask != c & mask {
                        continue;
                    }
                    let (rb, cb) = (r & !mask, c & !mask);
                    let mut acc = S::zero();
                    for p in pairs {
                        acc.add_assign(&self.data[(rb | p) * dim + (cb | p)]);
                    }
                    out.data[r * dim + c].mul_add_assign(&quarter, &acc);
                }
            }
        }
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Noisy measurement of one qubit with POVM element
    /// `(1-δ)|o><o| + δ|ō><ō|` in the chosen basis (outcome 0 is `|+>` in X).
    ///
    /// Returns the sub-normalized post-measurement matrix `√P ρ √P`, whose
    /// trace is the outcome probability. The measured qubit stays in the
    /// register; trace it out with [`DMat::partial_trace`] if needed.
    pub fn noisy_measure(&self, qubit: usize, basis: Basis, outcome: u8, delta: f64) -> Result<Self> {
        self.check_qubit(qubit)?;
        check_delta(delta)?;
        if outcome > 1 {
            return param_err(format!("measurement outcome {outcome} is not a bit"));
        }
        let rotated = match basis {
            Basis::Z => None,
            Basis::X => Some(self.apply_local_unitary(Gate::H, qubit)?),
        };
        let src = rotated.as_ref().unwrap_or(self);
        let amp = if outcome == 0 {
            [(1.0 - delta).sqrt(), delta.sqrt()]
        } else {
            [delta.sqrt(), (1.0 - delta).sqrt()]
        };
        let bit = 1usize << (self.qubits - 1 - qubit);
        let dim = self.dim();
        let mut out = Self::zeros(self.qubits);
        for r in 0..dim {
            let ar = amp[usize::from(r & bit != 0)];
            for c in 0..dim {
                let ac = amp[usize::from(c & bit != 0)];
                let k = ar * ac;
                if k != 0.0 {
                    out.data[r * dim + c] = src.data[r * dim + c].scale(k);
                }
            }
        }
        match basis {
            Basis::Z => Ok(out),
            Basis::X => out.apply_local_unitary(Gate::H, qubit),
        }
    }

    /// Zero every entry whose leading order in β exceeds `max_order`; kept
    /// entries retain all of their higher-order terms.
    pub fn truncate_by_order(&self, max_order: u32) -> Self {
        let data = self
            .data
            .iter()
            .map(|v| match v.leading_order() {
                Some(k) if k <= max_order => v.clone(),
                _ => S::zero(),
            })
            .collect();
        DMat { qubits: self.qubits, data, normalized: false }
    }

    /// Numeric value of every entry at the given β.
    pub fn evaluate(&self, beta: f64) -> DMat<Complex64> {
        DMat {
            qubits: self.qubits,
            data: self.data.iter().map(|v| v.eval(beta)).collect(),
            normalized: self.normalized,
        }
    }
}

impl DMat<Complex64> {
    /// `max |ρ - ρ†|` over entries.
    pub fn hermitian_deviation(&self) -> f64 {
        let dim = self.dim();
        let mut worst = 0.0f64;
        for r in 0..dim {
            for c in r..dim {
                worst = worst.max((self.data[r * dim + c] - self.data[c * dim + r].conj()).norm());
            }
        }
        worst
    }

    pub fn trace_re(&self) -> f64 {
        self.trace().re
    }

    /// Largest entrywise distance to another matrix of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.qubits, other.qubits);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let dim = self.dim();
        let m = DMatrix::from_fn(dim, dim, |r, c| (self.data[r * dim + c] + self.data[c * dim + r].conj()) * 0.5);
        SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Werner pair `F0|φ+><φ+| + (1-F0)/3 (𝕀 - |φ+><φ+|)` on two qubits.
pub fn werner<S: Scalar>(f0: f64) -> Result<DMat<S>> {
    check_f0(f0)?;
    let noise = (1.0 - f0) / 3.0;
    let mut m = DMat::zeros(2);
    for i in 0..4 {
        m.set(i, i, S::from_real(noise));
    }
    // |φ+><φ+| has 1/2 on the four corners of the {00, 11} block.
    let bell = (f0 - noise) * 0.5;
    for &(r, c) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
        let v = m.get(r, c).add(&S::from_real(bell));
        m.set(r, c, v);
    }
    m.normalized = true;
    Ok(m)
}

/// Populations of a two-qubit state in the Bell basis ordered
/// (φ+, φ−, ψ+, ψ−).
pub fn bell_populations(rho: &DMat<Complex64>) -> Result<[f64; 4]> {
    if rho.qubits() != 2 {
        return param_err("Bell populations need a two-qubit matrix");
    }
    let h = FRAC_1_SQRT_2;
    let states: [[f64; 4]; 4] = [[h, 0.0, 0.0, h], [h, 0.0, 0.0, -h], [0.0, h, h, 0.0], [0.0, h, -h, 0.0]];
    let mut out = [0.0; 4];
    for (k, v) in states.iter().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..4 {
            for c in 0..4 {
                acc += rho.get(r, c) * (v[r] * v[c]);
            }
        }
        out[k] = acc.re;
    }
    Ok(out)
}

/// Checked β for callers that build a numeric channel parameter.
pub fn beta_scalar<S: Scalar>(beta: f64) -> Result<S> {
    check_beta(beta)?;
    Ok(S::from_real(beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Poly;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    type C = Complex64;

    fn c(x: f64) -> C {
        C::new(x, 0.0)
    }

    fn phi_plus() -> DMat<C> {
        let h = FRAC_1_SQRT_2;
        DMat::pure_real(2, &[h, 0.0, 0.0, h])
    }

    #[test]
    fn werner_limits() {
        let w1: DMat<C> = werner(1.0).unwrap();
        assert!(w1.max_abs_diff(&phi_plus()) < 1e-15);
        let wq: DMat<C> = werner(0.25).unwrap();
        assert!(wq.max_abs_diff(&DMat::identity(2).scale_real(0.25)) < 1e-15);
        assert!(werner::<C>(0.2).is_err());
        assert!(werner::<C>(1.01).is_err());
    }

    #[test]
    fn werner_bell_populations_at_099() {
        let w: DMat<C> = werner(0.99).unwrap();
        let pops = bell_populations(&w).unwrap();
        let expected = [0.99, 0.01 / 3.0, 0.01 / 3.0, 0.01 / 3.0];
        for k in 0..4 {
            assert_abs_diff_eq!(pops[k], expected[k], epsilon = 1e-14);
        }
        assert_abs_diff_eq!(w.trace_re(), 1.0, epsilon = 1e-14);
        assert!(w.min_eigenvalue() > -1e-12);
        // Computational-basis diagonal: (F0 + (1-F0)/3)/2 on |00>,|11>, (1-F0)/3 on |01>,|10>.
        assert_abs_diff_eq!(w.get(0, 0).re, 0.4966666666666667, epsilon = 1e-12);
        assert_abs_diff_eq!(w.get(1, 1).re, 0.0033333333333333, epsilon = 1e-12);
    }

    #[test]
    fn ideal_cnot_flips_target() {
        let rho: DMat<C> = DMat::outer(2, 0b10, 0b10);
        let out = rho.noisy_cnot(0, 1, &c(0.0)).unwrap();
        assert!(out.max_abs_diff(&DMat::outer(2, 0b11, 0b11)) < 1e-15);
    }

    #[test]
    fn fully_depolarizing_cnot() {
        let rho: DMat<C> = werner(0.9).unwrap();
        let out = rho.noisy_cnot(1, 0, &c(1.0)).unwrap();
        assert!(out.max_abs_diff(&DMat::identity(2).scale_real(0.25)) < 1e-15);
    }

    #[test]
    fn partially_depolarizing_cnot() {
        let rho: DMat<C> = DMat::outer(2, 0b10, 0b10);
        let out = rho.noisy_cnot(0, 1, &c(0.1)).unwrap();
        let mut expected = DMat::<C>::outer(2, 0b11, 0b11).scale_real(0.9);
        expected.add_assign(&DMat::identity(2).scale_real(0.025)).unwrap();
        assert!(out.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn cnot_rejects_bad_indices() {
        let rho: DMat<C> = DMat::identity(2);
        assert!(rho.noisy_cnot(0, 0, &c(0.1)).is_err());
        assert!(rho.noisy_cnot(0, 2, &c(0.1)).is_err());
    }

    #[test]
    fn measurement_examples() {
        let one: DMat<C> = DMat::outer(1, 1, 1);
        assert!(one.noisy_measure(0, Basis::Z, 0, 0.0).unwrap().is_zero());
        assert_abs_diff_eq!(one.noisy_measure(0, Basis::Z, 0, 0.1).unwrap().trace_re(), 0.1, epsilon = 1e-15);
        let zero: DMat<C> = DMat::outer(1, 0, 0);
        assert_abs_diff_eq!(zero.noisy_measure(0, Basis::X, 0, 0.0).unwrap().trace_re(), 0.5, epsilon = 1e-15);
        assert!(zero.noisy_measure(0, Basis::X, 2, 0.0).is_err());
        assert!(zero.noisy_measure(1, Basis::X, 0, 0.0).is_err());
    }

    #[test]
    fn plumbing_examples() {
        let half: DMat<C> = DMat::identity(1).scale_real(0.5);
        assert!(half.tensor(&half).max_abs_diff(&DMat::identity(2).scale_real(0.25)) < 1e-15);
        let reduced = phi_plus().partial_trace(&[0]).unwrap();
        assert!(reduced.max_abs_diff(&half) < 1e-15);
        let plus = DMat::<C>::outer(1, 0, 0).apply_local_unitary(Gate::H, 0).unwrap();
        assert!(plus.max_abs_diff(&DMat::pure_real(1, &[FRAC_1_SQRT_2, FRAC_1_SQRT_2])) < 1e-15);
        assert!(phi_plus().partial_trace(&[0, 0]).is_err());
        assert!(phi_plus().add(&half).is_err());
    }

    #[test]
    fn partial_trace_respects_keep_order() {
        // |01><01| keeping (1, 0) must give |10><10|.
        let rho: DMat<C> = DMat::outer(2, 0b01, 0b01);
        let swapped = rho.partial_trace(&[1, 0]).unwrap();
        assert!(swapped.max_abs_diff(&DMat::outer(2, 0b10, 0b10)) < 1e-15);
        assert!(rho.permute_qubits(&[1, 0]).unwrap().max_abs_diff(&swapped) < 1e-15);
    }

    #[test]
    fn truncation_by_order_examples() {
        let mut m: DMat<Poly> = DMat::zeros(1);
        m.set(0, 0, Poly::from_real_coeffs(&[0.0, 0.0, 1.0, 1.0]));
        m.set(0, 1, Poly::from_real_coeffs(&[1.0, -1.0]));
        m.set(1, 1, Poly::from_real_coeffs(&[0.0, 0.0, 1.0]));
        let t1 = m.truncate_by_order(1);
        assert!(t1.get(0, 0).is_zero());
        assert_eq!(t1.get(0, 1), m.get(0, 1));
        assert!(t1.get(1, 1).is_zero());
        let t2 = m.truncate_by_order(2);
        assert_eq!(t2.get(1, 1), m.get(1, 1));
        assert_eq!(t2.get(0, 0), m.get(0, 0));
    }

    #[test]
    fn noisy_cnot_preserves_trace_symbolically() {
        let w: DMat<Poly> = werner(0.9).unwrap();
        let rho = w.tensor(&DMat::outer(1, 1, 1));
        let out = rho.noisy_cnot(2, 0, &Poly::beta()).unwrap();
        let diff = out.trace().sub(&rho.trace());
        assert!(diff.coeffs().iter().all(|c| c.norm() < 1e-15), "{diff:?}");
    }

    fn random_state(seed: &[f64]) -> DMat<C> {
        // Gram construction G G† over a 3-qubit register, normalized.
        let g = DMat::<C>::from_fn(3, |r, cc| C::new(seed[(r * 8 + cc) % seed.len()], seed[(r * 3 + cc * 5 + 1) % seed.len()]));
        let mut rho = g.matmul(&g.dagger()).unwrap();
        let t = rho.trace_re();
        rho = rho.scale_real(1.0 / t);
        rho.normalized = true;
        rho
    }

    proptest! {
        #[test]
        fn measurement_outcomes_sum_to_trace(seed in prop::collection::vec(-1.0f64..1.0, 16..32), delta in 0.0f64..0.5, q in 0usize..3, x in any::<bool>()) {
            let rho = random_state(&seed);
            let basis = if x { Basis::X } else { Basis::Z };
            let p0 = rho.noisy_measure(q, basis, 0, delta).unwrap().trace_re();
            let p1 = rho.noisy_measure(q, basis, 1, delta).unwrap().trace_re();
            prop_assert!((p0 + p1 - rho.trace_re()).abs() < 1e-12);
            prop_assert!(p0 >= -1e-12 && p1 >= -1e-12);
        }

        #[test]
        fn cnot_keeps_states_physical(seed in prop::collection::vec(-1.0f64..1.0, 16..32), beta in 0.0f64..1.0, ct in (0usize..3, 0usize..3)) {
            prop_assume!(ct.0 != ct.1);
            let rho = random_state(&seed);
            let out = rho.noisy_cnot(ct.0, ct.1, &c(beta)).unwrap();
            prop_assert!((out.trace_re() - 1.0).abs() < 1e-12);
            prop_assert!(out.hermitian_deviation() < 1e-10);
            prop_assert!(out.min_eigenvalue() > -1e-9);
        }

        #[test]
        fn polynomial_pipeline_matches_float_pipeline(beta in 0.0f64..1.0, delta in 0.0f64..0.5, f0 in 0.3f64..1.0) {
            // 4-qubit pipeline: two Werner pairs, cross CNOTs, a measurement.
            fn pipeline<S: Scalar>(beta: &S, delta: f64, f0: f64) -> DMat<S> {
                let w: DMat<S> = werner(f0).unwrap();
                let rho = w.tensor(&w);
                let rho = rho.noisy_cnot(1, 2, beta).unwrap();
                let rho = rho.apply_local_unitary(Gate::H, 1).unwrap();
                let rho = rho.noisy_cnot(0, 3, beta).unwrap();
                let rho = rho.noisy_measure(2, Basis::Z, 0, delta).unwrap();
                rho.noisy_measure(1, Basis::X, 1, delta).unwrap()
            }
            let symbolic = pipeline(&Poly::beta(), delta, f0).evaluate(beta);
            let numeric = pipeline(&c(beta), delta, f0);
            prop_assert!(symbolic.max_abs_diff(&numeric) <= 1e-10);
        }
    }
}
