//! Run configuration: one TOML document plus command-line overrides.

use std::path::{Path, PathBuf};

use poco_core::cloud::synth::SynthConfig;
use poco_core::cloud::Split;
use poco_core::retrieve::{DEFAULT_DB_SPACING, DEFAULT_MATCH_RADIUS};
use poco_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SEED_ENV: &str = "POCO_SEED";

/// Where a run reads and writes, relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset tree: `manifest.toml` plus `frames/*.pcf`.
    pub dataset: PathBuf,
    /// Checkpoints, metrics, index and reports.
    pub run: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "data".into(),
            run: "run".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
    /// Database spacing within a scene, meters.
    pub db_spacing: f64,
    /// A retrieved frame matches when it is in the query's scene and its
    /// camera is within this distance.
    pub match_radius: f64,
    pub ks: Vec<usize>,
    /// Rows printed by `query`.
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: Split::Test,
            db_spacing: DEFAULT_DB_SPACING,
            match_radius: DEFAULT_MATCH_RADIUS,
            ks: vec![1, 2, 3],
            top_k: 10,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.db_spacing >= 0.0 && self.match_radius >= 0.0) {
            return Err(Error::Config("eval distances must be non-negative".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) || self.top_k == 0 {
            return Err(Error::Config("eval ks and top_k must be positive".into()));
        }
        if self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "eval ks must be strictly increasing, got {:?}",
                self.ks
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed for sections that do not set their own.
    pub seed: Option<u64>,
    /// Worker threads for frame processing; all cores when unset.
    pub jobs: Option<usize>,
    pub paths: Paths,
    pub dataset: SynthConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    /// Value of `POCO_SEED`, used when neither the flag nor the file sets a
    /// global seed.
    pub env_seed: Option<String>,
}

impl RunConfig {
    /// Parses a document, rejecting unknown keys, then applies seeds.
    ///
    /// Seed precedence: `--seed` sets every seed. Otherwise the global seed
    /// (file `seed`, else `POCO_SEED`) fills the `dataset.seed` and
    /// `train.seed` values the file leaves out.
    pub fn from_toml(text: &str, ov: &Overrides) -> Result<RunConfig> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        let explicit = |section: &str| table.get(section).and_then(|s| s.get("seed")).is_some();
        let (data_seed, train_seed) = (explicit("dataset"), explicit("train"));
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        let env = match &ov.env_seed {
            Some(s) => Some(s.trim().parse::<u64>().map_err(|_| {
                Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))
            })?),
            None => None,
        };
        if let Some(s) = ov.seed {
            cfg.seed = Some(s);
            cfg.dataset.seed = s;
            cfg.train.seed = s;
        } else if let Some(s) = cfg.seed.or(env) {
            cfg.seed = Some(s);
            if !data_seed {
                cfg.dataset.seed = s;
            }
            if !train_seed {
                cfg.train.seed = s;
            }
        }
        if ov.jobs.is_some() {
            cfg.jobs = ov.jobs;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or starts from defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        RunConfig::from_toml(&text, ov).map_err(|e| match (e, path) {
            (Error::Config(m), Some(p)) => Error::Config(format!("{}: {m}", p.display())),
            (e, _) => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        let d = &self.dataset;
        if d.rooms == 0 || d.frames_per_room == 0 || d.points_per_frame == 0 {
            return Err(Error::Config(
                "dataset rooms, frames_per_room and points_per_frame must be positive".into(),
            ));
        }
        self.train.validate()?;
        self.eval.validate()
    }

    /// The resolved document echoed into output directories.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov() -> Overrides {
        Overrides::default()
    }

    #[test]
    fn empty_document_is_defaults() {
        assert_eq!(
            RunConfig::from_toml("", &ov()).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("bogus = 1", &ov()).is_err());
        assert!(RunConfig::from_toml("[train]\nlr = 1.0", &ov()).is_err());
        assert!(RunConfig::from_toml("[train.model]\nwidth = 3", &ov()).is_err());
    }

    #[test]
    fn seed_precedence() {
        let env = Overrides {
            env_seed: Some("5".into()),
            ..ov()
        };
        let c = RunConfig::from_toml("", &env).unwrap();
        assert_eq!((c.dataset.seed, c.train.seed), (5, 5));
        let c = RunConfig::from_toml("seed = 9\n[dataset]\nseed = 3", &env).unwrap();
        assert_eq!((c.dataset.seed, c.train.seed), (3, 9));
        let flag = Overrides {
            seed: Some(11),
            ..env
        };
        let c = RunConfig::from_toml("seed = 9\n[dataset]\nseed = 3", &flag).unwrap();
        assert_eq!((c.dataset.seed, c.train.seed), (11, 11));
        assert!(RunConfig::from_toml(
            "",
            &Overrides {
                env_seed: Some("x".into()),
                ..ov()
            }
        )
        .is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::from_toml("seed = 4\njobs = 2\n[eval]\nks = [1, 5]", &ov()).unwrap();
        let back = RunConfig::from_toml(&c.to_toml().unwrap(), &ov()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[train]\nepochs = 0", &ov()).is_err());
        assert!(RunConfig::from_toml("[eval]\nks = [2, 1]", &ov()).is_err());
        assert!(RunConfig::from_toml("jobs = 0", &ov()).is_err());
    }
}
