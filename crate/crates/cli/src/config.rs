//! Run configuration file.

use std::path::{Path, PathBuf};

use aef_core::agents::{AgentKind, Hyper};
use aef_core::circuit::{ComponentSet, FilterModel, InjectionTank, OpAmpModel};
use aef_core::env::{EnvConfig, EnvParams};
use aef_core::signal::{generate_synthetic_dataset, load_dataset, EmiDataset, SyntheticProfile};
use aef_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

/// Where a dataset comes from: a measurement file with its band, or a synthetic profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// `[low, high]` in Hz; required with `path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticProfile>,
    #[serde(default)]
    pub synthetic_seed: u64,
}

impl DatasetSource {
    pub fn validate(&self) -> Result<()> {
        match (&self.path, &self.synthetic) {
            (Some(_), None) if self.band.is_none() => Err(Error::Config("dataset `path` needs a `band`".into())),
            (Some(_), None) => Ok(()),
            (None, Some(p)) => p.validate(),
            _ => Err(Error::Config(
                "dataset needs exactly one of `path` or `synthetic`".into(),
            )),
        }
    }

    /// Load or generate; relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<EmiDataset> {
        self.validate()?;
        match (&self.path, &self.synthetic, self.band) {
            (Some(p), _, Some([lo, hi])) => load_dataset(base.join(p), lo, hi),
            (_, Some(profile), _) => generate_synthetic_dataset(profile, self.synthetic_seed),
            _ => unreachable!("validated above"),
        }
    }
}

/// Seeded line-level split of the training dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_train_fraction() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Held-out dataset; defaults to the split's test part, else the training dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSource>,
    /// Multiply every evaluation line frequency by this factor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_shift: Option<f64>,
    /// Greedy rollouts per seed from seeded starting capacitances.
    pub episodes: usize,
    /// Start every rollout here instead (a single rollout per seed).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_c: Option<f64>,
    /// Limit line for the required insertion loss; the env threshold when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit_dbua: Option<f64>,
    /// Upper edge of the low-frequency insertion-loss average.
    pub low_freq_high: f64,
    /// Fixed capacitance of the non-learning baseline.
    pub baseline_c: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            dataset: None,
            frequency_shift: None,
            episodes: 10,
            start_c: None,
            limit_dbua: None,
            low_freq_high: aef_core::eval::LOW_FREQ_EDGE_HZ,
            baseline_c: 470e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub components: ComponentSet,
    #[serde(default)]
    pub opamp: OpAmpModel,
    #[serde(default)]
    pub tank: InjectionTank,
    #[serde(default)]
    pub env: EnvParams,
    #[serde(default = "default_agent")]
    pub agent: AgentKind,
    #[serde(default)]
    pub hyper: Hyper,
    pub dataset: DatasetSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub eval: EvalSettings,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_agent() -> AgentKind {
    AgentKind::EqrlDeep
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Training and evaluation datasets resolved from a config.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: EmiDataset,
    pub eval: EmiDataset,
}

impl RunConfig {
    /// A small synthetic starting point, as printed by `--dump-config`.
    pub fn example() -> Self {
        Self {
            version: CONFIG_VERSION,
            components: ComponentSet::default(),
            opamp: OpAmpModel::default(),
            tank: InjectionTank::default(),
            env: EnvParams::default(),
            agent: default_agent(),
            hyper: Hyper::default(),
            dataset: DatasetSource {
                synthetic: Some(SyntheticProfile::new(150e3, 30e6, 50)),
                ..DatasetSource::default()
            },
            split: None,
            eval: EvalSettings::default(),
            seeds: vec![0],
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        self.dataset.validate()?;
        if let Some(d) = &self.eval.dataset {
            d.validate()?;
        }
        if let Some(s) = self.split {
            if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
                return Err(Error::Config(format!(
                    "split fraction {} must be in (0, 1)",
                    s.train_fraction
                )));
            }
        }
        if let Some(f) = self.eval.frequency_shift {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::Config(format!("frequency_shift {f} must be > 0")));
            }
        }
        if self.eval.episodes == 0 {
            return Err(Error::Config("eval.episodes must be >= 1".into()));
        }
        self.model().validate()?;
        self.env.validate()?;
        self.hyper.validate()
    }

    pub fn model(&self) -> FilterModel {
        FilterModel {
            components: self.components,
            opamp: self.opamp,
            tank: self.tank,
        }
    }

    pub fn datasets(&self, base: &Path) -> Result<Datasets> {
        let full = self.dataset.load(base)?;
        let (train, held_out) = match self.split {
            Some(s) => {
                let (a, b) = full.split(s.train_fraction, s.seed)?;
                (a, Some(b))
            }
            None => (full, None),
        };
        let eval = match (&self.eval.dataset, held_out) {
            (Some(src), _) => src.load(base)?,
            (None, Some(b)) => b,
            (None, None) => train.clone(),
        };
        let eval = match self.eval.frequency_shift {
            Some(f) => {
                let name = format!("{}-shift{f}", eval.name);
                eval.shifted(f, name)?
            }
            None => eval,
        };
        Ok(Datasets { train, eval })
    }

    pub fn env_config(&self, dataset: EmiDataset) -> EnvConfig {
        EnvConfig {
            model: self.model(),
            dataset,
            params: self.env.clone(),
        }
    }

    pub fn limit_dbua(&self) -> f64 {
        self.eval.limit_dbua.unwrap_or(self.env.tau_emi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_round_trips() {
        let cfg = RunConfig::example();
        cfg.validate().unwrap();
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"version": 1, "seeds": [3], "dataset": {"synthetic": {"name": "s", "band_low": 150000,
               "band_high": 2000000, "line_count": 4, "amplitude_range_dbua": [20, 40]}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.agent, AgentKind::EqrlDeep);
        assert_eq!(cfg.env, EnvParams::default());
        assert_eq!(cfg.datasets(Path::new(".")).unwrap().train.len(), 4);
    }

    #[test]
    fn dataset_source_must_be_unique() {
        let mut cfg = RunConfig::example();
        cfg.dataset.path = Some("x.csv".into());
        cfg.dataset.band = Some([1e5, 1e6]);
        assert!(cfg.validate().is_err());
        cfg.dataset.synthetic = None;
        cfg.validate().unwrap();
        cfg.dataset.band = None;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::example();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::example();
        cfg.version = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn split_feeds_evaluation() {
        let mut cfg = RunConfig::example();
        cfg.split = Some(SplitConfig {
            train_fraction: 0.75,
            seed: 1,
        });
        let d = cfg.datasets(Path::new(".")).unwrap();
        assert_eq!((d.train.len(), d.eval.len()), (38, 12));
        cfg.eval.frequency_shift = Some(1.1);
        let shifted = cfg.datasets(Path::new(".")).unwrap().eval;
        assert_eq!(shifted.len(), 12);
        assert!((shifted.lines()[0].frequency / d.eval.lines()[0].frequency - 1.1).abs() < 1e-12);
    }
}
