//! Run configuration: an optional JSON file overlaid with command-line
//! flags (flags win), resolved into validated engine settings.

use std::path::Path;

use barkid_core::detector::DetectorConfig;
use barkid_core::matching::{GvParams, MatchParams};
use barkid_core::retrieval::{QueryParams, ScoreMethod, DEFAULT_TOP_T};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::read_file;
use crate::pipeline::DescriptorSource;

/// Every tunable setting; absent fields take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub gamma: Option<usize>,
    pub phi: Option<f32>,
    pub sigma: Option<f32>,
    pub descriptor: Option<String>,
    pub method: Option<String>,
    pub ratio: Option<f32>,
    pub alpha: Option<usize>,
    pub rho: Option<f64>,
    pub top_t: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `flags` replace those of `self`.
    pub fn overlay(self, flags: RunConfig) -> RunConfig {
        RunConfig {
            gamma: flags.gamma.or(self.gamma),
            phi: flags.phi.or(self.phi),
            sigma: flags.sigma.or(self.sigma),
            descriptor: flags.descriptor.or(self.descriptor),
            method: flags.method.or(self.method),
            ratio: flags.ratio.or(self.ratio),
            alpha: flags.alpha.or(self.alpha),
            rho: flags.rho.or(self.rho),
            top_t: flags.top_t.or(self.top_t),
            seed: flags.seed.or(self.seed),
        }
    }

    /// Detector defaults follow the descriptor: pre-blurred for the builtin
    /// descriptor, unblurred for external ones.
    pub fn resolve(&self) -> Result<Settings> {
        let descriptor: DescriptorSource = self.descriptor.as_deref().unwrap_or("builtin").parse()?;
        let base = match descriptor {
            DescriptorSource::Builtin => DetectorConfig::builtin(),
            DescriptorSource::External(_) => DetectorConfig::learned(),
        };
        let detector = DetectorConfig {
            gamma: self.gamma.unwrap_or(base.gamma),
            phi: self.phi.unwrap_or(base.phi),
            sigma_blur: self.sigma.unwrap_or(base.sigma_blur),
            ..base
        };
        detector.validate()?;
        let method = ScoreMethod::parse(self.method.as_deref().unwrap_or("gv"))?;
        let defaults = MatchParams::default();
        let query = QueryParams {
            matching: MatchParams {
                ratio: self.ratio.unwrap_or(defaults.ratio),
                gv: GvParams { alpha: self.alpha.unwrap_or(defaults.gv.alpha), rho: self.rho.unwrap_or(defaults.gv.rho) },
            },
            top_t: self.top_t.unwrap_or(DEFAULT_TOP_T),
        };
        query.matching.validate()?;
        if query.top_t < 1 {
            return Err(Error::Config("top_t must be >= 1".into()));
        }
        Ok(Settings { detector, descriptor, method, query, seed: self.seed.unwrap_or(0) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub detector: DetectorConfig,
    #[serde(serialize_with = "display")]
    pub descriptor: DescriptorSource,
    pub method: ScoreMethod,
    pub query: QueryParams,
    pub seed: u64,
}

fn display<S: serde::Serializer>(v: &DescriptorSource, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}
