//! Run configuration: one JSON document per invocation.

use std::path::{Path, PathBuf};

use qrkey::chain::{ApproxStrategy, MAX_LEVEL};
use qrkey::codes::CodeSpec;
use qrkey::keyrate::Decoder;
use qrkey::throughput::ThroughputParams;
use qrkey::ErrorParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_N_TOP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    #[default]
    Exact,
    Identical,
    Analytic1,
    Analytic2,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Beta,
    Delta,
    F0,
    LTot,
    L0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Det,
    Mux,
    Prob,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::Det => "det",
            Protocol::Mux => "mux",
            Protocol::Prob => "prob",
        }
    }
}

/// Evenly spaced values between two endpoints, both included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    #[serde(default)]
    pub scale: Scale,
}

impl Axis {
    fn validate(&self, what: &str) -> Result<(), CliError> {
        if self.points < 2 {
            return Err(CliError::Config(format!("{what}: points must be at least 2")));
        }
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(CliError::Config(format!("{what}: need finite min <= max")));
        }
        if self.scale == Scale::Log && self.min <= 0.0 {
            return Err(CliError::Config(format!("{what}: log scale needs min > 0")));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                if i + 1 == self.points {
                    return self.max;
                }
                let t = i as f64 / last;
                match self.scale {
                    Scale::Linear => self.min + (self.max - self.min) * t,
                    Scale::Log => (self.min.ln() + (self.max.ln() - self.min.ln()) * t).exp(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub min: f64,
    pub max: f64,
    pub points: usize,
    #[serde(default)]
    pub scale: Scale,
}

impl SweepSpec {
    pub fn axis(&self) -> Axis {
        Axis { min: self.min, max: self.max, points: self.points, scale: self.scale }
    }
}

fn default_l_att() -> f64 {
    22.0
}

fn default_c() -> f64 {
    2e5
}

fn default_n_m() -> u32 {
    1
}

/// Link and detector parameters; the elementary length follows from the
/// distance sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub p: f64,
    pub eta_d: f64,
    #[serde(default)]
    pub p_m: Option<f64>,
    #[serde(default = "default_l_att")]
    pub l_att: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_n_m")]
    pub n_m: u32,
}

impl LinkConfig {
    pub fn at(&self, l0: f64) -> Result<ThroughputParams, CliError> {
        let tp = ThroughputParams { l0, l_att: self.l_att, c: self.c, p: self.p, p_m: self.p_m, eta_d: self.eta_d, n_m: self.n_m };
        tp.validate()?;
        Ok(tp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionGrid {
    pub one_minus_f0: Axis,
    pub beta: Axis,
    pub delta: Axis,
}

fn default_code_size() -> usize {
    3
}

fn default_f0() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_code_size")]
    pub code_size: usize,
    /// Single nesting level; exclusive with `n_max`.
    #[serde(default)]
    pub n: Option<u32>,
    #[serde(default)]
    pub n_max: Option<u32>,
    #[serde(default = "default_f0")]
    pub f0: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub decoder_beta: Option<f64>,
    #[serde(default)]
    pub decoder_delta: Option<f64>,
    #[serde(default)]
    pub strategy: StrategyName,
    #[serde(default)]
    pub n_top: Option<usize>,
    /// Decoder numbers; defaults to every decoder the code supports.
    #[serde(default)]
    pub decoders: Option<Vec<u8>>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub throughput: Option<LinkConfig>,
    #[serde(default)]
    pub protocols: Option<Vec<Protocol>>,
    #[serde(default)]
    pub l_tot: Option<f64>,
    #[serde(default)]
    pub region: Option<RegionGrid>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.code()?;
        self.error_params()?;
        self.approx()?;
        self.decoders()?;
        self.levels()?;
        if let Some(s) = &self.sweep {
            s.axis().validate("sweep")?;
        }
        if let Some(g) = &self.region {
            g.one_minus_f0.validate("region.one_minus_f0")?;
            g.beta.validate("region.beta")?;
            g.delta.validate("region.delta")?;
        }
        if self.n_top.is_some() && self.strategy != StrategyName::Numeric {
            return Err(CliError::Config("n_top only applies to the numeric strategy".into()));
        }
        if let Some(l) = self.l_tot {
            if !(l.is_finite() && l > 0.0) {
                return Err(CliError::Config(format!("l_tot = {l} must be positive")));
            }
        }
        Ok(())
    }

    pub fn code(&self) -> Result<CodeSpec, CliError> {
        Ok(CodeSpec::new(self.code_size)?)
    }

    pub fn error_params(&self) -> Result<ErrorParams, CliError> {
        Ok(ErrorParams::new(self.f0, self.beta, self.delta)?.with_decoder(self.decoder_beta, self.decoder_delta)?)
    }

    pub fn approx(&self) -> Result<ApproxStrategy, CliError> {
        let s = match self.strategy {
            StrategyName::Exact => ApproxStrategy::Exact,
            StrategyName::Identical => ApproxStrategy::IdenticalOnly,
            StrategyName::Analytic1 => ApproxStrategy::Analytic { max_order: 1 },
            StrategyName::Analytic2 => ApproxStrategy::Analytic { max_order: 2 },
            StrategyName::Numeric => ApproxStrategy::Numeric { n_top: self.n_top.unwrap_or(DEFAULT_N_TOP) },
        };
        if s == (ApproxStrategy::Numeric { n_top: 0 }) {
            return Err(CliError::Config("n_top must be positive".into()));
        }
        Ok(s)
    }

    pub fn decoders(&self) -> Result<Vec<Decoder>, CliError> {
        let code = self.code()?;
        match &self.decoders {
            None => Ok(Decoder::ALL.into_iter().filter(|d| d.supports(code)).collect()),
            Some(list) => {
                let mut out = Vec::new();
                for &n in list {
                    let d = Decoder::from_number(n)?;
                    if !d.supports(code) {
                        return Err(CliError::Config(format!("decoder {n} is not available for q = {}", code.size())));
                    }
                    if !out.contains(&d) {
                        out.push(d);
                    }
                }
                if out.is_empty() {
                    return Err(CliError::Config("decoders list is empty".into()));
                }
                out.sort();
                Ok(out)
            }
        }
    }

    /// Nesting levels to report, ascending.
    pub fn levels(&self) -> Result<Vec<u32>, CliError> {
        let default_max = if self.strategy == StrategyName::Numeric { 7 } else { 3 };
        let levels: Vec<u32> = match (self.n, self.n_max) {
            (Some(_), Some(_)) => return Err(CliError::Config("set either n or n_max, not both".into())),
            (Some(n), None) => vec![n],
            (None, m) => (1..=m.unwrap_or(default_max)).collect(),
        };
        match levels.last() {
            None => Err(CliError::Config("n_max must be at least 1".into())),
            Some(&hi) if hi > MAX_LEVEL => Err(CliError::Config(format!("nesting level {hi} exceeds {MAX_LEVEL}"))),
            _ if levels[0] == 0 => Err(CliError::Config("nesting level must be at least 1".into())),
            _ => Ok(levels),
        }
    }

    pub fn link(&self) -> Result<LinkConfig, CliError> {
        self.throughput.ok_or_else(|| CliError::Config("missing throughput parameters".into()))
    }

    /// Canonical JSON, sorted keys, without the output path.
    pub fn canonical(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output");
        }
        v
    }
}
