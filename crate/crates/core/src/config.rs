//! Experiment configuration and its flat `key = value` text form.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key ws* '=' ws* value ws* ('#' any*)?
//! key     := [a-z0-9_.]+
//! ```
//!
//! Values are decimal numbers, `true`/`false`, `none` (for optional
//! integers), or bare strings (paths, execution mode). Unknown keys and
//! repeated keys are errors. Omitted keys keep their defaults. `data` selects
//! a CSV file; without it the cohort comes from the `synthetic.*` keys.
//! Per-feature synthetic keys take the form
//! `synthetic.<feature>.{transplanted_mean,transplanted_sd,discarded_mean,discarded_sd}`
//! for continuous features and `synthetic.<feature>.{p_transplanted,p_discarded}`
//! for binary ones.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::boosting::BoostConfig;
use crate::data::DONOR_FEATURES;
use crate::error::{Error, Result};
use crate::evaluate::DEFAULT_THRESHOLD;
use crate::exec::Exec;
use crate::forest::ForestConfig;
use crate::logistic::LogisticConfig;
use crate::preprocess::DEFAULT_MAD_CUTOFF;
use crate::synthetic::{FeatureDist, SyntheticSpec};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub seed: u64,
    pub train_fraction: f64,
    pub stratify: bool,
    pub threshold: f64,
    pub out_dir: PathBuf,
    pub outlier_cutoff: f64,
    pub winsorize: bool,
    pub logistic: LogisticConfig,
    pub forest: ForestConfig,
    pub boosting: BoostConfig,
    /// Does not affect results, only wall time.
    pub exec: Exec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SyntheticSpec::default()),
            seed: DEFAULT_SEED,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            stratify: false,
            threshold: DEFAULT_THRESHOLD,
            out_dir: PathBuf::from("out"),
            outlier_cutoff: DEFAULT_MAD_CUTOFF,
            winsorize: false,
            logistic: LogisticConfig::default(),
            forest: ForestConfig::default(),
            boosting: BoostConfig::default(),
            exec: Exec::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

impl ExperimentConfig {
    /// Checks every value that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(invalid(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if !(self.outlier_cutoff > 0.0 && self.outlier_cutoff.is_finite()) {
            return Err(invalid(format!(
                "outliers.cutoff must be positive, got {}",
                self.outlier_cutoff
            )));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        self.logistic.validate()?;
        // mtry is checked against the real feature count once data is loaded.
        ForestConfig {
            mtry: None,
            ..self.forest
        }
        .validate(1)?;
        self.boosting.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        let mut data_path = None;
        let mut spec = SyntheticSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(invalid(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            let ctx = |e: Error| match e {
                Error::InvalidConfig(m) => invalid(format!("line {}: {m}", lineno + 1)),
                other => other,
            };
            cfg.set(key, value, &mut data_path, &mut spec).map_err(ctx)?;
        }
        cfg.data = match data_path {
            Some(p) => DataSource::Csv(p),
            None => DataSource::Synthetic(spec),
        };
        Ok(cfg)
    }

    fn set(
        &mut self,
        key: &str,
        value: &str,
        data_path: &mut Option<PathBuf>,
        spec: &mut SyntheticSpec,
    ) -> Result<()> {
        match key {
            "data" => *data_path = Some(PathBuf::from(value)),
            "seed" => self.seed = num(key, value)?,
            "train_fraction" => self.train_fraction = num(key, value)?,
            "stratify" => self.stratify = boolean(key, value)?,
            "threshold" => self.threshold = num(key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "outliers.cutoff" => self.outlier_cutoff = num(key, value)?,
            "outliers.winsorize" => self.winsorize = boolean(key, value)?,
            "exec" => {
                self.exec = match value {
                    "parallel" => Exec::Parallel,
                    "sequential" => Exec::Sequential,
                    _ => return Err(invalid(format!("exec must be parallel or sequential, got `{value}`"))),
                }
            }
            "lr.learning_rate" => self.logistic.learning_rate = num(key, value)?,
            "lr.max_iters" => self.logistic.max_iters = num(key, value)?,
            "lr.tolerance" => self.logistic.tolerance = num(key, value)?,
            "rf.n_tree" => self.forest.n_tree = num(key, value)?,
            "rf.mtry" => self.forest.mtry = optional(key, value)?,
            "rf.max_depth" => self.forest.max_depth = optional(key, value)?,
            "rf.min_samples_leaf" => self.forest.min_samples_leaf = num(key, value)?,
            "rf.bootstrap" => self.forest.bootstrap = boolean(key, value)?,
            "gbc.n_stages" => self.boosting.n_stages = num(key, value)?,
            "gbc.learning_rate" => self.boosting.learning_rate = num(key, value)?,
            "gbc.max_depth" => self.boosting.max_depth = num(key, value)?,
            "gbc.min_samples_leaf" => self.boosting.min_samples_leaf = num(key, value)?,
            "synthetic.n" => spec.n = num(key, value)?,
            "synthetic.positive_fraction" => spec.positive_fraction = num(key, value)?,
            "synthetic.noise_columns" => spec.noise_columns = num(key, value)?,
            "synthetic.missing_rate" => spec.missing_rate = num(key, value)?,
            _ => return set_feature_dist(spec, key, value),
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match &self.data {
            DataSource::Csv(p) => kv("data", p.display().to_string()),
            DataSource::Synthetic(spec) => {
                kv("synthetic.n", spec.n.to_string());
                kv("synthetic.positive_fraction", spec.positive_fraction.to_string());
                kv("synthetic.noise_columns", spec.noise_columns.to_string());
                kv("synthetic.missing_rate", spec.missing_rate.to_string());
                for (name, dist) in DONOR_FEATURES.iter().zip(&spec.features) {
                    match *dist {
                        FeatureDist::Gaussian {
                            transplanted_mean,
                            transplanted_sd,
                            discarded_mean,
                            discarded_sd,
                        } => {
                            kv(&format!("synthetic.{name}.transplanted_mean"), transplanted_mean.to_string());
                            kv(&format!("synthetic.{name}.transplanted_sd"), transplanted_sd.to_string());
                            kv(&format!("synthetic.{name}.discarded_mean"), discarded_mean.to_string());
                            kv(&format!("synthetic.{name}.discarded_sd"), discarded_sd.to_string());
                        }
                        FeatureDist::Bernoulli {
                            p_transplanted,
                            p_discarded,
                        } => {
                            kv(&format!("synthetic.{name}.p_transplanted"), p_transplanted.to_string());
                            kv(&format!("synthetic.{name}.p_discarded"), p_discarded.to_string());
                        }
                    }
                }
            }
        }
        kv("seed", self.seed.to_string());
        kv("train_fraction", self.train_fraction.to_string());
        kv("stratify", self.stratify.to_string());
        kv("threshold", self.threshold.to_string());
        kv("out", self.out_dir.display().to_string());
        kv("outliers.cutoff", self.outlier_cutoff.to_string());
        kv("outliers.winsorize", self.winsorize.to_string());
        kv(
            "exec",
            match self.exec {
                Exec::Parallel => "parallel",
                Exec::Sequential => "sequential",
            }
            .into(),
        );
        kv("lr.learning_rate", self.logistic.learning_rate.to_string());
        kv("lr.max_iters", self.logistic.max_iters.to_string());
        kv("lr.tolerance", self.logistic.tolerance.to_string());
        kv("rf.n_tree", self.forest.n_tree.to_string());
        kv("rf.mtry", opt_text(self.forest.mtry));
        kv("rf.max_depth", opt_text(self.forest.max_depth));
        kv("rf.min_samples_leaf", self.forest.min_samples_leaf.to_string());
        kv("rf.bootstrap", self.forest.bootstrap.to_string());
        kv("gbc.n_stages", self.boosting.n_stages.to_string());
        kv("gbc.learning_rate", self.boosting.learning_rate.to_string());
        kv("gbc.max_depth", self.boosting.max_depth.to_string());
        kv("gbc.min_samples_leaf", self.boosting.min_samples_leaf.to_string());
        out
    }

    /// Same as [`to_text`](Self::to_text) minus the keys that cannot change
    /// results (`out`, `exec`). Written next to the outputs.
    pub fn to_reproducible_text(&self) -> String {
        self.to_text()
            .lines()
            .filter(|l| !l.starts_with("out =") && !l.starts_with("exec ="))
            .map(|l| format!("{l}\n"))
            .collect()
    }
}

fn set_feature_dist(spec: &mut SyntheticSpec, key: &str, value: &str) -> Result<()> {
    let unknown = || invalid(format!("unknown key `{key}`"));
    let rest = key.strip_prefix("synthetic.").ok_or_else(unknown)?;
    let (feature, param) = rest.split_once('.').ok_or_else(unknown)?;
    let j = DONOR_FEATURES
        .iter()
        .position(|f| *f == feature)
        .ok_or_else(unknown)?;
    let v: f64 = num(key, value)?;
    match (&mut spec.features[j], param) {
        (FeatureDist::Gaussian { transplanted_mean, .. }, "transplanted_mean") => *transplanted_mean = v,
        (FeatureDist::Gaussian { transplanted_sd, .. }, "transplanted_sd") => *transplanted_sd = v,
        (FeatureDist::Gaussian { discarded_mean, .. }, "discarded_mean") => *discarded_mean = v,
        (FeatureDist::Gaussian { discarded_sd, .. }, "discarded_sd") => *discarded_sd = v,
        (FeatureDist::Bernoulli { p_transplanted, .. }, "p_transplanted") => *p_transplanted = v,
        (FeatureDist::Bernoulli { p_discarded, .. }, "p_discarded") => *p_discarded = v,
        _ => return Err(unknown()),
    }
    Ok(())
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| invalid(format!("`{key}`: cannot parse `{value}`")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn optional(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "none" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn opt_text(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}
