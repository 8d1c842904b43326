//! Experiment configuration in a flat `key = value` text format.
//!
//! One assignment per line; `#` starts a comment; sections are dotted key
//! prefixes (`hp.tau`, `split.n_labeled`, ...). Unknown keys are rejected and
//! every omitted key takes its default. [`ExperimentConfig::to_text`] writes a
//! file that parses back to an equal config.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::{OverlapMode, SplitSpec};
use crate::error::{Error, Result};
use crate::losses::{Hyperparams, RankKind};
use crate::trainer::{Objective, OptimizerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    TwoMoons,
    Shapes,
    Idx,
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "two_moons" => Ok(DatasetKind::TwoMoons),
            "shapes" => Ok(DatasetKind::Shapes),
            "idx" => Ok(DatasetKind::Idx),
            other => Err(format!("unknown dataset kind `{other}`, expected two_moons, shapes or idx")),
        }
    }
}

impl DatasetKind {
    fn as_str(self) -> &'static str {
        match self {
            DatasetKind::TwoMoons => "two_moons",
            DatasetKind::Shapes => "shapes",
            DatasetKind::Idx => "idx",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub noise: f64,
    pub size: usize,
    pub classes: usize,
    pub seed: u64,
    /// Z-score vector features with statistics of the training rows.
    pub standardize: bool,
    /// Directory that relative IDX paths resolve against.
    pub dir: PathBuf,
    pub images: PathBuf,
    pub labels: PathBuf,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::TwoMoons,
            n: 1000,
            noise: 0.1,
            size: 12,
            classes: 4,
            seed: 0,
            standardize: true,
            dir: PathBuf::from("data"),
            images: PathBuf::from("train-images-idx3-ubyte"),
            labels: PathBuf::from("train-labels-idx1-ubyte"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub rep_dim: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            rep_dim: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub objective: Objective,
    pub rank_kind: RankKind,
    pub epochs: usize,
    /// Overrides the derived epoch length when nonzero.
    pub steps_per_epoch: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            objective: Objective::ReRankMatch,
            rank_kind: RankKind::Contrastive,
            epochs: 10,
            steps_per_epoch: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub hp: Hyperparams,
    pub optim: OptimizerConfig,
    pub model: ModelSpec,
    pub augment: AugmentConfig,
    pub train: TrainSpec,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetSpec::default(),
            split: SplitSpec::default(),
            hp: Hyperparams::default(),
            optim: OptimizerConfig::default(),
            model: ModelSpec::default(),
            augment: AugmentConfig::default(),
            train: TrainSpec::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn num<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| format!("cannot parse `{value}`: {e}"))
}

fn detail_of(e: Error) -> String {
    match e {
        Error::Config { detail, .. } => detail,
        other => other.to_string(),
    }
}

fn list(value: &str) -> std::result::Result<Vec<usize>, String> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(v.trim())).collect()
}

impl ExperimentConfig {
    /// Every recognised key, in file order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "dataset.kind",
        "dataset.n",
        "dataset.noise",
        "dataset.size",
        "dataset.classes",
        "dataset.seed",
        "dataset.standardize",
        "dataset.dir",
        "dataset.images",
        "dataset.labels",
        "split.n_labeled",
        "split.overlap_mode",
        "split.seed",
        "split.val_frac",
        "split.test_frac",
        "hp.batch_size",
        "hp.mu",
        "hp.tau",
        "hp.margin",
        "hp.temperature",
        "hp.psi",
        "hp.phi",
        "hp.lambda_u",
        "hp.lambda_r",
        "hp.lambda_s",
        "optim.lr",
        "optim.momentum",
        "optim.weight_decay",
        "model.hidden",
        "model.rep_dim",
        "augment.shift_max",
        "augment.flip_prob",
        "augment.noise_rel",
        "augment.jitter_scale",
        "augment.cutout_frac",
        "train.objective",
        "train.rank_kind",
        "train.epochs",
        "train.steps_per_epoch",
        "output.dir",
    ];

    /// Assigns one key; the error message omits the key, callers add it.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => self.seed = num(v)?,
            "dataset.kind" => self.dataset.kind = v.parse()?,
            "dataset.n" => self.dataset.n = num(v)?,
            "dataset.noise" => self.dataset.noise = num(v)?,
            "dataset.size" => self.dataset.size = num(v)?,
            "dataset.classes" => self.dataset.classes = num(v)?,
            "dataset.seed" => self.dataset.seed = num(v)?,
            "dataset.standardize" => self.dataset.standardize = num(v)?,
            "dataset.dir" => self.dataset.dir = PathBuf::from(v),
            "dataset.images" => self.dataset.images = PathBuf::from(v),
            "dataset.labels" => self.dataset.labels = PathBuf::from(v),
            "split.n_labeled" => self.split.n_labeled = num(v)?,
            "split.overlap_mode" => {
                self.split.overlap_mode = v.parse::<OverlapMode>().map_err(detail_of)?
            }
            "split.seed" => self.split.seed = num(v)?,
            "split.val_frac" => self.split.val_frac = num(v)?,
            "split.test_frac" => self.split.test_frac = num(v)?,
            "hp.batch_size" => self.hp.batch_size = num(v)?,
            "hp.mu" => self.hp.mu = num(v)?,
            "hp.tau" => self.hp.tau = num(v)?,
            "hp.margin" => self.hp.margin = num(v)?,
            "hp.temperature" => self.hp.temperature = num(v)?,
            "hp.psi" => self.hp.psi = num(v)?,
            "hp.phi" => self.hp.phi = num(v)?,
            "hp.lambda_u" => self.hp.lambda_u = num(v)?,
            "hp.lambda_r" => self.hp.lambda_r = num(v)?,
            "hp.lambda_s" => self.hp.lambda_s = num(v)?,
            "optim.lr" => self.optim.lr = num(v)?,
            "optim.momentum" => self.optim.momentum = num(v)?,
            "optim.weight_decay" => self.optim.weight_decay = num(v)?,
            "model.hidden" => self.model.hidden = list(v)?,
            "model.rep_dim" => self.model.rep_dim = num(v)?,
            "augment.shift_max" => self.augment.shift_max = num(v)?,
            "augment.flip_prob" => self.augment.flip_prob = num(v)?,
            "augment.noise_rel" => self.augment.noise_rel = num(v)?,
            "augment.jitter_scale" => self.augment.jitter_scale = num(v)?,
            "augment.cutout_frac" => self.augment.cutout_frac = num(v)?,
            "train.objective" => self.train.objective = v.parse().map_err(detail_of)?,
            "train.rank_kind" => self.train.rank_kind = v.parse().map_err(detail_of)?,
            "train.epochs" => self.train.epochs = num(v)?,
            "train.steps_per_epoch" => self.train.steps_per_epoch = num(v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let hidden: Vec<String> = self.model.hidden.iter().map(usize::to_string).collect();
        Some(match key {
            "seed" => self.seed.to_string(),
            "dataset.kind" => self.dataset.kind.as_str().to_string(),
            "dataset.n" => self.dataset.n.to_string(),
            "dataset.noise" => self.dataset.noise.to_string(),
            "dataset.size" => self.dataset.size.to_string(),
            "dataset.classes" => self.dataset.classes.to_string(),
            "dataset.seed" => self.dataset.seed.to_string(),
            "dataset.standardize" => self.dataset.standardize.to_string(),
            "dataset.dir" => self.dataset.dir.display().to_string(),
            "dataset.images" => self.dataset.images.display().to_string(),
            "dataset.labels" => self.dataset.labels.display().to_string(),
            "split.n_labeled" => self.split.n_labeled.to_string(),
            "split.overlap_mode" => self.split.overlap_mode.to_string(),
            "split.seed" => self.split.seed.to_string(),
            "split.val_frac" => self.split.val_frac.to_string(),
            "split.test_frac" => self.split.test_frac.to_string(),
            "hp.batch_size" => self.hp.batch_size.to_string(),
            "hp.mu" => self.hp.mu.to_string(),
            "hp.tau" => self.hp.tau.to_string(),
            "hp.margin" => self.hp.margin.to_string(),
            "hp.temperature" => self.hp.temperature.to_string(),
            "hp.psi" => self.hp.psi.to_string(),
            "hp.phi" => self.hp.phi.to_string(),
            "hp.lambda_u" => self.hp.lambda_u.to_string(),
            "hp.lambda_r" => self.hp.lambda_r.to_string(),
            "hp.lambda_s" => self.hp.lambda_s.to_string(),
            "optim.lr" => self.optim.lr.to_string(),
            "optim.momentum" => self.optim.momentum.to_string(),
            "optim.weight_decay" => self.optim.weight_decay.to_string(),
            "model.hidden" => hidden.join(","),
            "model.rep_dim" => self.model.rep_dim.to_string(),
            "augment.shift_max" => self.augment.shift_max.to_string(),
            "augment.flip_prob" => self.augment.flip_prob.to_string(),
            "augment.noise_rel" => self.augment.noise_rel.to_string(),
            "augment.jitter_scale" => self.augment.jitter_scale.to_string(),
            "augment.cutout_frac" => self.augment.cutout_frac.to_string(),
            "train.objective" => self.train.objective.to_string(),
            "train.rank_kind" => self.train.rank_kind.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.steps_per_epoch" => self.train.steps_per_epoch.to_string(),
            "output.dir" => self.output_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Parses config text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigLine {
                line: i + 1,
                key: line.to_string(),
                detail: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            self.set(key, value).map_err(|detail| Error::ConfigLine {
                line: i + 1,
                key: key.to_string(),
                detail,
            })?;
        }
        Ok(())
    }

    /// Loads an optional file, then applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            cfg.apply_text(&std::fs::read_to_string(p)?)?;
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o.clone(), "override must be key=value"))?;
            cfg.set(key.trim(), value)
                .map_err(|detail| Error::config(key.trim(), detail))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.optim.validate()?;
        if self.model.rep_dim == 0 || self.model.hidden.contains(&0) {
            return Err(Error::config("model", "layer sizes must be positive"));
        }
        if self.train.epochs == 0 {
            return Err(Error::config("train.epochs", "must be >= 1"));
        }
        for (key, v) in [
            ("augment.flip_prob", self.augment.flip_prob),
            ("augment.cutout_frac", self.augment.cutout_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(key, format!("must lie in [0, 1], got {v}")));
            }
        }
        for (key, v) in [
            ("augment.noise_rel", self.augment.noise_rel),
            ("augment.jitter_scale", self.augment.jitter_scale),
            ("dataset.noise", self.dataset.noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be >= 0, got {v}")));
            }
        }
        for (key, v) in [
            ("split.val_frac", self.split.val_frac),
            ("split.test_frac", self.split.test_frac),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key, format!("must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let value = self.get(key).expect("every listed key has a value");
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    /// True when no unlabeled loss term can influence training.
    pub fn is_supervised_baseline(&self) -> bool {
        self.train.objective == Objective::Supervised
            || (self.hp.lambda_u == 0.0 && self.hp.lambda_r == 0.0 && self.hp.lambda_s == 0.0)
    }

    /// Human-readable run label for summaries.
    pub fn label(&self) -> String {
        if self.is_supervised_baseline() {
            return "supervised baseline".to_string();
        }
        match self.train.objective {
            Objective::ReRankMatch => format!("ReRankMatch-{}", self.train.rank_kind),
            Objective::RankingMatch => format!("RankingMatch-{}", self.train.rank_kind),
            Objective::Supervised => unreachable!(),
        }
    }
}
