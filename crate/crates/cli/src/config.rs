//! TOML run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use sparse_sounder::benchmark::SweepConfig;
use sparse_sounder::channel::{azimuth_ring, reference_channel};
use sparse_sounder::{AbsorptionModel, AntennaPattern, FrequencyGrid, PathParams, Pointing, SageConfig, Scheme, SoundingModel};

/// Configuration problems, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub scheme: SchemeSpec,
    /// Synthetic channel. Required by `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelSpec>,
    /// Absorption used for synthesis and rectification.
    #[serde(default = "AbsorptionModel::default_water")]
    pub absorption: AbsorptionModel,
    #[serde(default)]
    pub antenna: AntennaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sage: Option<SageConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: default_output_dir(),
            base_seed: 0,
            scheme: SchemeSpec::default(),
            channel: None,
            absorption: AbsorptionModel::default_water(),
            antenna: AntennaSpec::default(),
            sage: None,
            sweep: None,
        }
    }
}

/// Grid description. The band is `[fc - bw/2, fc + bw/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    #[serde(rename = "type")]
    pub kind: Scheme,
    pub fc_hz: f64,
    pub bandwidth_hz: f64,
    pub k: usize,
    /// Explicit coprime pair; `k` is ignored when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    /// Explicit nested pair; `k` is ignored when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n1: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<u64>,
}

impl Default for SchemeSpec {
    fn default() -> Self {
        Self {
            kind: Scheme::Pfs,
            fc_hz: 380e9,
            bandwidth_hz: 20e9,
            k: 100,
            m: None,
            n: None,
            n1: None,
            n2: None,
        }
    }
}

impl SchemeSpec {
    pub fn f_start(&self) -> f64 {
        self.fc_hz - self.bandwidth_hz / 2.0
    }

    pub fn build(&self) -> anyhow::Result<FrequencyGrid> {
        let f0 = self.f_start();
        let b = self.bandwidth_hz;
        let grid = match (self.kind, self.m.zip(self.n), self.n1.zip(self.n2)) {
            (Scheme::Cfs, Some((m, n)), _) => FrequencyGrid::cfs(f0, b, m, n)?,
            (Scheme::Nfs, _, Some((n1, n2))) => FrequencyGrid::nfs(f0, b, n1, n2)?,
            (Scheme::Custom, ..) => bail!(config_error("custom grids are loaded from files, not generated")),
            (kind, ..) => FrequencyGrid::generate(kind, f0, b, self.k)?,
        };
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub paths: Vec<PathParams>,
    /// Per-sample SNR of the strongest path; absent for noiseless data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntennaSpec {
    pub pattern: AntennaPattern,
    /// Number of pointings evenly spaced in azimuth on the horizon.
    pub pointings: usize,
}

impl Default for AntennaSpec {
    fn default() -> Self {
        Self {
            pattern: AntennaPattern::Isotropic,
            pointings: 1,
        }
    }
}

impl AntennaSpec {
    pub fn pointing_list(&self) -> Vec<Pointing> {
        azimuth_ring(self.pointings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "all_schemes")]
    pub schemes: Vec<Scheme>,
    pub ks: Vec<usize>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default = "both")]
    pub rectified: Vec<bool>,
    #[serde(default = "both")]
    pub absorption_on: Vec<bool>,
    /// Paths scored per trial; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_n: Option<usize>,
    #[serde(default)]
    pub plain_knows_absorption: bool,
}

fn all_schemes() -> Vec<Scheme> {
    Scheme::ALL_GENERATED.to_vec()
}
fn default_trials() -> usize {
    10
}
fn both() -> Vec<bool> {
    vec![false, true]
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Writes the resolved configuration next to the outputs.
    pub fn persist(&self) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir).with_context(|| format!("creating {}", self.output_dir.display()))?;
        let path = self.output_dir.join("resolved_config.toml");
        std::fs::write(&path, toml::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    pub fn channel(&self) -> anyhow::Result<&ChannelSpec> {
        let ch = self.channel.as_ref().ok_or_else(|| config_error("config has no [channel] section with paths"))?;
        if ch.paths.is_empty() {
            bail!(config_error("[channel] paths must not be empty"));
        }
        for p in &ch.paths {
            p.validate().map_err(|e| config_error(e.to_string()))?;
        }
        Ok(ch)
    }

    pub fn model(&self, grid: FrequencyGrid) -> anyhow::Result<SoundingModel> {
        if self.antenna.pointings == 0 {
            bail!(config_error("antenna.pointings must be at least 1"));
        }
        Ok(SoundingModel::new(grid, self.antenna.pointing_list(), self.antenna.pattern, self.absorption.clone())?)
    }

    /// Estimator settings; defaults to one path per configured channel path
    /// (five without a channel) and a 0 to 220 ns search.
    pub fn sage_or_default(&self) -> SageConfig {
        self.sage.clone().unwrap_or_else(|| {
            let n = self.channel.as_ref().map_or(5, |c| c.paths.len().max(1));
            SageConfig::new(n, 0.0, 220e-9)
        })
    }

    pub fn sweep_config(&self) -> anyhow::Result<SweepConfig> {
        let spec = self.sweep.as_ref().ok_or_else(|| config_error("benchmark needs a [sweep] section or --ks"))?;
        let (paths, snr_db) = match &self.channel {
            Some(_) => {
                let ch = self.channel()?;
                (ch.paths.clone(), ch.snr_db)
            }
            None => (reference_channel(), Some(50.0)),
        };
        let sage = self.sage.clone().unwrap_or_else(|| SageConfig::new(paths.len(), 0.0, 220e-9));
        let cfg = SweepConfig {
            schemes: spec.schemes.clone(),
            ks: spec.ks.clone(),
            rectified: spec.rectified.clone(),
            absorption_on: spec.absorption_on.clone(),
            n_trials: spec.n_trials,
            base_seed: self.base_seed,
            snr_db,
            f_start_hz: self.scheme.f_start(),
            bandwidth_hz: self.scheme.bandwidth_hz,
            top_n: spec.top_n.unwrap_or(paths.len()),
            paths,
            absorption: self.absorption.clone(),
            sage,
            plain_knows_absorption: spec.plain_knows_absorption,
        };
        cfg.validate().map_err(|e| config_error(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.channel = Some(ChannelSpec {
            paths: reference_channel(),
            snr_db: Some(30.0),
        });
        cfg.sweep = Some(SweepSpec {
            schemes: all_schemes(),
            ks: vec![50, 100],
            n_trials: 2,
            rectified: both(),
            absorption_on: vec![true],
            top_n: None,
            plain_knows_absorption: false,
        });
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[scheme]\ntype = \"pfs\"\nfc_hz = 1e9\nbandwidth_hz = 1e8\nk = 10\nextra = 2").is_err());
    }

    #[test]
    fn missing_channel_is_a_config_error() {
        let err = RunConfig::default().channel().unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn band_is_centred() {
        let s = SchemeSpec {
            kind: Scheme::Ufs,
            fc_hz: 380e9,
            bandwidth_hz: 10e9,
            k: 11,
            ..SchemeSpec::default()
        };
        let g = s.build().unwrap();
        assert_eq!(g.frequencies()[0], 375e9);
        assert_eq!(*g.frequencies().last().unwrap(), 385e9);
    }
}
