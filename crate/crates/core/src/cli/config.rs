//! Run configuration: one JSON document with embedded defaults.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::geometry::GeometryConfig;
use crate::ineq::{check_admissible, HardyVariant, WeightSpec, DEFAULT_C_HL};
use crate::sharp::QuotientKind;

/// Grid size written as `NXxNY`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Resolution {
    pub nx: usize,
    pub ny: usize,
}

impl Resolution {
    pub fn new(nx: usize, ny: usize) -> Self {
        Self { nx, ny }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.nx, self.ny)
    }
}

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("resolution `{s}` is not of the form NXxNY"))?;
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("resolution `{s}`: {e}"));
        Ok(Self { nx: parse(a)?, ny: parse(b)? })
    }
}

impl Serialize for Resolution {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub count: usize,
    pub modes: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { seed: 20_240_917, count: 100, modes: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub variants: Vec<HardyVariant>,
    /// Mean-value check balls per field.
    pub lemma_samples: usize,
    pub pointwise: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { variants: vec![HardyVariant::Eps, HardyVariant::Rho], lemma_samples: 20, pointwise: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub kinds: Vec<QuotientKind>,
    /// Relative tolerance; `null` picks `1e-8` for `p = 2` and `1e-6` otherwise.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub starts: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self { kinds: QuotientKind::ALL.to_vec(), tol: None, max_iter: 2000, starts: crate::sharp::ASCENT_STARTS }
    }
}

/// Sweep axes; an empty axis falls back to the base configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub deltas: Vec<f64>,
    pub ns: Vec<u32>,
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub weights: Vec<WeightSpec>,
    pub resolutions: Vec<Resolution>,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default = "default_c_hl")]
    pub c_hl: f64,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub estimate: EstimateConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_c_hl() -> f64 {
    DEFAULT_C_HL
}

impl Default for RunConfig {
    fn default() -> Self {
        let weights = [1.5, 2.0, 3.0]
            .iter()
            .flat_map(|&p| [0.0, 0.04].map(|a| WeightSpec::new(p, a).expect("valid default weight")))
            .collect();
        Self {
            geometry: GeometryConfig::new(1.0, 1.0, 8, 0.5).expect("valid default geometry"),
            weights,
            resolutions: vec![Resolution::new(128, 128)],
            corpus: CorpusConfig::default(),
            c_hl: DEFAULT_C_HL,
            verify: VerifyConfig::default(),
            estimate: EstimateConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses JSON; errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            LabError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(LabError::Config("`weights` must list at least one weight".into()));
        }
        if self.resolutions.is_empty() {
            return Err(LabError::Config("`resolutions` must list at least one grid".into()));
        }
        if self.corpus.count == 0 {
            return Err(LabError::Config("`corpus.count` must be at least 1".into()));
        }
        if self.corpus.modes == 0 {
            return Err(LabError::Config("`corpus.modes` must be at least 1".into()));
        }
        if !(self.c_hl > 0.0 && self.c_hl.is_finite()) {
            return Err(LabError::Config("`c_hl` must be positive".into()));
        }
        if let Some(t) = self.estimate.tol {
            if !(t > 0.0) {
                return Err(LabError::Config("`estimate.tol` must be positive".into()));
            }
        }
        if self.estimate.starts == 0 || self.estimate.max_iter == 0 {
            return Err(LabError::Config("`estimate.starts` and `estimate.max_iter` must be positive".into()));
        }
        for (k, r) in self.resolutions.iter().enumerate() {
            if !r.ny.is_multiple_of(self.geometry.n() as usize) {
                return Err(LabError::Config(format!(
                    "`resolutions[{k}]` = {r}: ny must be a multiple of n = {}",
                    self.geometry.n()
                )));
            }
        }
        for &d in &self.sweep.deltas {
            GeometryConfig::new(self.geometry.a(), self.geometry.b(), self.geometry.n(), d)?;
        }
        Ok(())
    }

    /// Every weight must satisfy `alpha < alpha_max` before quotients are verified.
    pub fn check_admissible(&self) -> Result<()> {
        for (k, w) in self.weights.iter().enumerate() {
            check_admissible(&self.geometry, w, self.c_hl)
                .map_err(|e| LabError::Config(format!("`weights[{k}]`: {e}")))?;
        }
        Ok(())
    }

    /// Pretty JSON of the full configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("configuration serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}
