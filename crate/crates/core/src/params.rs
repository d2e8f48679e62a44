//! Error model parameters shared by the whole pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

/// Werner fidelity, two-qubit gate error and measurement error, plus
/// optional overrides that apply only inside the users' decoder modules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorParams {
    pub f0: f64,
    pub beta: f64,
    pub delta: f64,
    #[serde(default)]
    pub decoder_beta: Option<f64>,
    #[serde(default)]
    pub decoder_delta: Option<f64>,
}

impl ErrorParams {
    pub fn new(f0: f64, beta: f64, delta: f64) -> Result<Self> {
        let p = ErrorParams { f0, beta, delta, decoder_beta: None, decoder_delta: None };
        p.validate()?;
        Ok(p)
    }

    /// Error-free setting: F0 = 1, β = δ = 0.
    pub fn ideal() -> Self {
        ErrorParams { f0: 1.0, beta: 0.0, delta: 0.0, decoder_beta: None, decoder_delta: None }
    }

    pub fn with_decoder(mut self, beta: Option<f64>, delta: Option<f64>) -> Result<Self> {
        self.decoder_beta = beta;
        self.decoder_delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_f0(self.f0)?;
        check_beta(self.beta)?;
        check_delta(self.delta)?;
        if let Some(b) = self.decoder_beta {
            check_beta(b)?;
        }
        if let Some(d) = self.decoder_delta {
            check_delta(d)?;
        }
        Ok(())
    }

    pub fn dec_beta(&self) -> f64 {
        self.decoder_beta.unwrap_or(self.beta)
    }

    pub fn dec_delta(&self) -> f64 {
        self.decoder_delta.unwrap_or(self.delta)
    }
}

pub(crate) fn check_f0(f0: f64) -> Result<()> {
    // 0.25 itself is admitted: it is the maximally mixed limit.
    if !(0.25..=1.0).contains(&f0) {
        return param_err(format!("f0 = {f0} outside [0.25, 1]"));
    }
    Ok(())
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return param_err(format!("beta = {beta} outside [0, 1]"));
    }
    Ok(())
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&delta) {
        return param_err(format!("delta = {delta} outside [0, 0.5]"));
    }
    Ok(())
}
