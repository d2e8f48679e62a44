//! Repetition codes: noisy encoder weights, logical measurement operators
//! for the measurement-only decoders, and the CNOT-based decoding circuit.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dmat::{Basis, DMat, Gate};
use crate::error::{param_err, Error, Result};
use crate::params::ErrorParams;
use crate::scalar::Scalar;

/// Bit-flip repetition code `|0…0>`, `|1…1>` on `q` physical qubits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct CodeSpec {
    q: usize,
}

impl CodeSpec {
    pub fn new(q: usize) -> Result<Self> {
        match q {
            3 | 5 => Ok(CodeSpec { q }),
            _ => Err(Error::Unsupported(format!("repetition code size {q} (supported: 3, 5)"))),
        }
    }

    pub fn three() -> Self {
        CodeSpec { q: 3 }
    }

    pub fn five() -> Self {
        CodeSpec { q: 5 }
    }

    pub fn size(self) -> usize {
        self.q
    }

    /// Logical value of a Z-basis outcome string under the majority rule.
    pub fn majority(self, ones: usize) -> u8 {
        u8::from(2 * ones > self.q)
    }
}

impl TryFrom<usize> for CodeSpec {
    type Error = Error;
    fn try_from(q: usize) -> Result<Self> {
        CodeSpec::new(q)
    }
}

impl From<CodeSpec> for usize {
    fn from(c: CodeSpec) -> usize {
        c.q
    }
}

/// Code-form part of the noisy encoder output
/// `c_diag (|0…0><0…0| + |1…1><1…1|) + c_cross (|0…0><1…1| + h.c.)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel<S> {
    pub c_diag: S,
    pub c_cross: S,
}

impl<S: Scalar> EncoderModel<S> {
    /// Weight of the `|j><k|` product component on one elementary link.
    pub fn weight(&self, j: u8, k: u8) -> &S {
        if j == k {
            &self.c_diag
        } else {
            &self.c_cross
        }
    }

    pub fn evaluate(&self, beta: f64) -> EncoderModel<Complex64> {
        EncoderModel { c_diag: self.c_diag.eval(beta), c_cross: self.c_cross.eval(beta) }
    }
}

fn horner<S: Scalar>(coeffs: &[f64], x: &S) -> S {
    coeffs.iter().rev().fold(S::zero(), |acc, &c| acc.mul(x).add(&S::from_real(c)))
}

/// Encoder weights for a `q`-qubit code built from `(|0>+|1>)|0…0>/√2` by
/// noisy CNOTs from the first qubit to each of the others in turn.
pub fn encoder_weights<S: Scalar>(code: CodeSpec, beta: &S) -> EncoderModel<S> {
    let one_minus = S::one().sub(beta);
    match code.size() {
        3 => EncoderModel {
            c_diag: horner(&[16.0, -20.0, 8.0], beta).scale(1.0 / 32.0),
            c_cross: one_minus.mul(&one_minus).scale(0.5),
        },
        5 => {
            let sq = one_minus.mul(&one_minus);
            EncoderModel {
                c_diag: horner(&[16.0, -44.0, 49.0, -25.0, 5.0], beta).scale(1.0 / 32.0),
                c_cross: sq.mul(&sq).scale(0.5),
            }
        }
        q => unreachable!("CodeSpec admits only 3 and 5, got {q}"),
    }
}

/// Z-basis acceptance rule for the measurement-only decoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogicalRule {
    /// Majority vote over the q outcomes.
    Majority,
    /// Accept only all-equal strings; everything else is rejected.
    Strict,
}

/// Single-qubit POVM element `(1-δ)|o><o| + δ|ō><ō|` in the given basis.
pub fn povm_element(basis: Basis, outcome: u8, delta: f64) -> DMat<Complex64> {
    let mut m = DMat::zeros(1);
    let (p0, p1) = if outcome == 0 { (1.0 - delta, delta) } else { (delta, 1.0 - delta) };
    m.set(0, 0, Complex64::new(p0, 0.0));
    m.set(1, 1, Complex64::new(p1, 0.0));
    match basis {
        Basis::Z => m,
        Basis::X => m.apply_local_unitary(Gate::H, 0).expect("single-qubit H"),
    }
}

/// Logical bit of an outcome string (bit `i` of `s` is qubit `i`'s result,
/// qubit 0 most significant), or `None` when the rule rejects it.
pub fn classify_string(code: CodeSpec, basis: Basis, rule: LogicalRule, s: usize) -> Option<u8> {
    let weight = s.count_ones() as usize;
    match basis {
        // In X, a 1 is a '−' result; even '−' count decodes to bit 0.
        Basis::X => Some((weight % 2) as u8),
        Basis::Z => match rule {
            LogicalRule::Majority => Some(code.majority(weight)),
            LogicalRule::Strict if weight == 0 => Some(0),
            LogicalRule::Strict if weight == code.size() => Some(1),
            LogicalRule::Strict => None,
        },
    }
}

fn string_operator(code: CodeSpec, basis: Basis, delta: f64, accept: impl Fn(usize) -> bool) -> DMat<Complex64> {
    let q = code.size();
    let elems = [povm_element(basis, 0, delta), povm_element(basis, 1, delta)];
    let mut total = DMat::zeros(q);
    for s in (0..1usize << q).filter(|&s| accept(s)) {
        let mut op = elems[(s >> (q - 1)) & 1].clone();
        for i in 1..q {
            op = op.tensor(&elems[(s >> (q - 1 - i)) & 1]);
        }
        total.add_assign(&op).expect("same register");
    }
    total
}

/// Sum over accepted outcome strings of products of noisy single-qubit
/// POVM elements: the logical measurement operator for `bit`.
pub fn logical_projector(code: CodeSpec, basis: Basis, rule: LogicalRule, bit: u8, delta: f64) -> DMat<Complex64> {
    string_operator(code, basis, delta, |s| classify_string(code, basis, rule, s) == Some(bit))
}

/// Operator for the strings discarded by the strict Z rule.
pub fn rejection_operator(code: CodeSpec, delta: f64) -> DMat<Complex64> {
    string_operator(code, Basis::Z, delta, |s| classify_string(code, Basis::Z, LogicalRule::Strict, s).is_none())
}

/// One syndrome branch of the two-sided decoding circuit.
#[derive(Debug, Clone)]
pub struct DecoderBranch {
    /// Alice's syndrome: high bit is qubit 2's result, low bit qubit 3's.
    pub d_a: u8,
    pub d_b: u8,
    /// Probability of this branch relative to a unit-trace input.
    pub prob: f64,
    /// Sub-normalized state of the two retained qubits (Alice, Bob).
    pub state: DMat<Complex64>,
}

/// Run the three-qubit decoding circuit at both users: CNOT 1→2 then 1→3
/// (decoder β), Z-measure qubits 2 and 3 (decoder δ), and flip qubit 1 when
/// both read 1. `rho` orders qubits as (A1, A2, A3, B1, B2, B3).
pub fn decoder_circuit(rho: &DMat<Complex64>, params: &ErrorParams) -> Result<Vec<DecoderBranch>> {
    if rho.qubits() != 6 {
        return Err(Error::Unsupported(format!(
            "decoder circuit is defined for the three-qubit code only (got {} qubits)",
            rho.qubits()
        )));
    }
    let beta = Complex64::new(params.dec_beta(), 0.0);
    let delta = params.dec_delta();
    let mut state = rho.clone();
    for (c, t) in [(0, 1), (0, 2), (3, 4), (3, 5)] {
        state = state.noisy_cnot(c, t, &beta)?;
    }
    let mut branches = Vec::with_capacity(16);
    for d_a in 0..4u8 {
        for d_b in 0..4u8 {
            let mut m = state.clone();
            for (qubit, bit) in [(1, d_a >> 1), (2, d_a & 1), (4, d_b >> 1), (5, d_b & 1)] {
                m = m.noisy_measure(qubit, Basis::Z, bit, delta)?;
            }
            let mut kept = m.partial_trace(&[0, 3])?;
            if d_a == 0b11 {
                kept = kept.apply_local_unitary(Gate::X, 0)?;
            }
            if d_b == 0b11 {
                kept = kept.apply_local_unitary(Gate::X, 1)?;
            }
            kept.normalized = false;
            branches.push(DecoderBranch { d_a, d_b, prob: kept.trace_re(), state: kept });
        }
    }
    Ok(branches)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdealDecoder {
    /// CNOT-based decoder, measured on the first qubit.
    CircuitTwo,
    /// Direct three-qubit measurement with the majority/parity rules.
    DirectThree,
}

/// Effective ideal measurement operator on the three code qubits for
/// logical `bit` in `basis`.
///
/// For the circuit decoder the operator right before the final
/// measurements is pulled back through CNOT 1→2 and CNOT 1→3.
pub fn ideal_decoder_operator(which: IdealDecoder, basis: Basis, bit: u8) -> Result<DMat<Complex64>> {
    if bit > 1 {
        return param_err(format!("logical bit {bit}"));
    }
    let code = CodeSpec::three();
    match which {
        IdealDecoder::DirectThree => Ok(logical_projector(code, basis, LogicalRule::Majority, bit, 0.0)),
        IdealDecoder::CircuitTwo => {
            let flip = povm_element(basis, bit, 0.0).apply_local_unitary(Gate::X, 0)?;
            let keep = povm_element(basis, bit, 0.0);
            let mut mid = DMat::zeros(3);
            for d in 0..4usize {
                let first = if d == 0b11 { &flip } else { &keep };
                let syndrome = DMat::outer(2, d, d);
                mid.add_assign(&first.tensor(&syndrome))?;
            }
            // U = CNOT13 · CNOT12, and the pulled-back operator is U† M U.
            let u = cnot_unitary(3, 0, 2).matmul(&cnot_unitary(3, 0, 1))?;
            u.dagger().matmul(&mid)?.matmul(&u)
        }
    }
}

fn cnot_unitary(qubits: usize, control: usize, target: usize) -> DMat<Complex64> {
    let cm = 1usize << (qubits - 1 - control);
    let tm = 1usize << (qubits - 1 - target);
    DMat::from_fn(qubits, |r, c| {
        let image = if c & cm != 0 { c ^ tm } else { c };
        Complex64::new(if r == image { 1.0 } else { 0.0 }, 0.0)
    })
}

/// Encoded Bell state `(|0…0>|0…0> + |1…1>|1…1>)/√2` over `2q` qubits with
/// Alice's block first.
pub fn encoded_bell(code: CodeSpec) -> DMat<Complex64> {
    let n = 2 * code.size();
    let mut amps = vec![0.0; 1 << n];
    amps[0] = FRAC_1_SQRT_2;
    amps[(1 << n) - 1] = FRAC_1_SQRT_2;
    DMat::pure_real(n, &amps)
}
