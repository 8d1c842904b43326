//! End-to-end runs: data, split, training, evaluation and the files a run leaves behind.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::Augmenter;
use crate::autodiff::{Graph, Tensor};
use crate::config::{DatasetKind, ExperimentConfig};
use crate::data::{load_idx, make_shapes, make_two_moons, split_ssl, Dataset, SampleKind, SslSplit};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::trainer::{evaluate, StepConfig, StepRecord, Trainer};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.txt";

fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    match d.kind {
        DatasetKind::TwoMoons => make_two_moons(d.n, d.noise, d.seed),
        DatasetKind::Shapes => make_shapes(d.n, d.size, d.classes, d.seed),
        DatasetKind::Idx => load_idx(&d.dir.join(&d.images), &d.dir.join(&d.labels)),
    }
}

/// The configured dataset and its split. Vector features are standardised
/// with labeled plus unlabeled row statistics when `dataset.standardize` is set.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(Dataset, SslSplit)> {
    let ds = generate(cfg)?;
    let split = split_ssl(&ds, &cfg.split)?;
    if !cfg.dataset.standardize || !matches!(ds.kind(), SampleKind::Vector { .. }) {
        return Ok((ds, split));
    }
    let rows: Vec<usize> = split.labeled.iter().chain(&split.unlabeled).copied().collect();
    let z = ds.standardized(&ds.feature_means(&rows), &ds.feature_stds(&rows))?;
    Ok((z, split))
}

/// The configured dataset after any preprocessing.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    Ok(prepare_data(cfg)?.0)
}

/// Layer widths: input, hidden layers, representation, one logit per labeled-pool class.
pub fn model_dims(cfg: &ExperimentConfig, ds: &Dataset, split: &SslSplit) -> Vec<usize> {
    let mut dims = vec![ds.feature_dim()];
    dims.extend(&cfg.model.hidden);
    dims.push(cfg.model.rep_dim);
    dims.push(split.labeled_classes.len());
    dims
}

/// Steps per epoch: explicit if configured, otherwise enough batches to
/// cover the larger of the labeled pool and the unlabeled pool once.
pub fn steps_per_epoch(cfg: &ExperimentConfig, split: &SslSplit) -> usize {
    if cfg.train.steps_per_epoch > 0 {
        return cfg.train.steps_per_epoch;
    }
    let b = cfg.hp.batch_size;
    let by_labeled = split.labeled.len().div_ceil(b);
    let by_unlabeled = split.unlabeled.len().div_ceil(b * cfg.hp.mu.max(1));
    by_labeled.max(by_unlabeled).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub step: usize,
    pub test_error: f64,
    pub validation_error: Option<f64>,
    pub mean_total_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub seed: u64,
    pub split_seed: u64,
    pub objective: String,
    pub rank_kind: String,
    pub overlap_mode: String,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub total_steps: usize,
    pub epochs: Vec<EpochStat>,
    pub final_test_error: f64,
    pub final_validation_error: Option<f64>,
    pub wall_seconds: f64,
}

/// Everything a run produces, kept in memory.
pub struct RunOutcome {
    pub summary: RunSummary,
    pub records: Vec<StepRecord>,
    pub params: ModelParams,
    pub split: SslSplit,
}

/// Fresh model, optimizer and data streams for `cfg` over a prepared split.
pub fn build_trainer<'a>(
    cfg: &ExperimentConfig,
    ds: &'a Dataset,
    split: &SslSplit,
    total_steps: usize,
) -> Result<Trainer<'a>> {
    let params = ModelParams::init(cfg.seed, &model_dims(cfg, ds, split))?;
    let train_rows: Vec<usize> = split.labeled.iter().chain(&split.unlabeled).copied().collect();
    let augmenter = Augmenter::for_dataset(&cfg.augment, ds, &train_rows)?;
    let step_cfg = StepConfig {
        hp: cfg.hp.clone(),
        rank_kind: cfg.train.rank_kind,
        objective: cfg.train.objective,
    };
    Trainer::new(
        params,
        &cfg.optim,
        step_cfg,
        ds,
        augmenter,
        split.labeled.clone(),
        split.unlabeled.clone(),
        total_steps,
        cfg.seed,
    )
}

/// Trains one configuration. With `out` set, writes the config, metrics CSV,
/// summary JSON and final checkpoint into that directory.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let (ds, split) = prepare_data(cfg)?;
    let per_epoch = steps_per_epoch(cfg, &split);
    let total_steps = per_epoch * cfg.train.epochs;
    let mut trainer = build_trainer(cfg, &ds, &split, total_steps)?;

    let mut csv = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
            let mut w = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
            writeln!(w, "{}", StepRecord::CSV_HEADER)?;
            Some(w)
        }
        None => None,
    };

    let mut records = Vec::with_capacity(total_steps);
    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    for epoch in 1..=cfg.train.epochs {
        let mut loss_sum = 0.0;
        for _ in 0..per_epoch {
            let (record, _) = trainer.step()?;
            if let Some(w) = csv.as_mut() {
                writeln!(w, "{}", record.csv_row())?;
            }
            loss_sum += record.total;
            records.push(record);
        }
        let validation_error = if split.validation.is_empty() {
            None
        } else {
            Some(evaluate(&trainer.params, &ds, &split.validation)?)
        };
        epochs.push(EpochStat {
            epoch,
            step: trainer.step_index(),
            test_error: evaluate(&trainer.params, &ds, &split.test)?,
            validation_error,
            mean_total_loss: loss_sum / per_epoch as f64,
        });
    }
    if let Some(mut w) = csv {
        w.flush()?;
    }

    let last = epochs.last().expect("at least one epoch");
    let summary = RunSummary {
        label: cfg.label(),
        seed: cfg.seed,
        split_seed: cfg.split.seed,
        objective: cfg.train.objective.to_string(),
        rank_kind: cfg.train.rank_kind.to_string(),
        overlap_mode: cfg.split.overlap_mode.to_string(),
        n_labeled: split.labeled.len(),
        n_unlabeled: split.unlabeled.len(),
        total_steps,
        final_test_error: last.test_error,
        final_validation_error: last.validation_error,
        epochs,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let params = trainer.params;
    if let Some(dir) = out {
        params.save(&dir.join(CHECKPOINT_FILE))?;
        std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(RunOutcome {
        summary,
        records,
        params,
        split,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub label: String,
    pub seeds: Vec<u64>,
    pub test_errors: Vec<f64>,
    pub mean_test_error: f64,
    pub std_test_error: f64,
}

impl SweepSummary {
    /// `mean ± std` in percent.
    pub fn report(&self) -> String {
        format!(
            "{}: {:.2} ± {:.2} % test error over {} seeds",
            self.label,
            100.0 * self.mean_test_error,
            100.0 * self.std_test_error,
            self.seeds.len()
        )
    }
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `cfg` once per seed in parallel. Each seed drives initialisation,
/// batching, augmentation and the labeled subset.
pub fn run_sweep(cfg: &ExperimentConfig, seeds: &[u64], out: Option<&Path>) -> Result<SweepSummary> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "sweep needs at least one seed"));
    }
    let results: Vec<Result<RunSummary>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let mut c = cfg.clone();
                c.seed = seed;
                c.split.seed = seed;
                let dir = out.map(|d| d.join(format!("seed-{seed}")));
                scope.spawn(move || run_experiment(&c, dir.as_deref()).map(|o| o.summary))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;
    let test_errors: Vec<f64> = summaries.iter().map(|s| s.final_test_error).collect();
    let (mean, std) = mean_std(&test_errors);
    let sweep = SweepSummary {
        label: cfg.label(),
        seeds: seeds.to_vec(),
        test_errors,
        mean_test_error: mean,
        std_test_error: std,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&sweep)?)?;
    }
    Ok(sweep)
}

/// Loads a checkpoint and checks that it fits the dataset and split of `cfg`.
pub fn load_for_config(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<(ModelParams, Dataset, SslSplit)> {
    let (ds, split) = prepare_data(cfg)?;
    let params = ModelParams::load(checkpoint)?;
    let expected = model_dims(cfg, &ds, &split);
    if params.input_dim() != expected[0] || params.class_count() != *expected.last().unwrap() {
        return Err(Error::Checkpoint(format!(
            "checkpoint dims {:?} do not fit the configured data (input {}, classes {})",
            params.dims(),
            expected[0],
            expected.last().unwrap()
        )));
    }
    Ok((params, ds, split))
}

/// Test-split error rate of a saved checkpoint.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<f64> {
    let (params, ds, split) = load_for_config(cfg, checkpoint)?;
    evaluate(&params, &ds, &split.test)
}

/// L2-normalised logits of `samples`, one row each.
pub fn normalized_logits(params: &ModelParams, samples: &Tensor) -> Result<Tensor> {
    let (_, logits) = params.predict(samples)?;
    let mut g = Graph::new();
    let v = g.constant(logits);
    let n = g.l2_normalize(v)?;
    Ok(g.value(n).clone())
}

/// Writes a TSV with header `e0..e{C-1}\tlabel` and one row per sample.
pub fn write_embeddings<W: Write>(
    params: &ModelParams,
    samples: &Tensor,
    labels: &[usize],
    out: W,
) -> Result<()> {
    if samples.rows() != labels.len() {
        return Err(Error::shape(
            "export",
            format!("{} samples but {} labels", samples.rows(), labels.len()),
        ));
    }
    let emb = normalized_logits(params, samples)?;
    let mut w = BufWriter::new(out);
    let mut header: Vec<String> = (0..emb.cols()).map(|j| format!("e{j}")).collect();
    header.push("label".into());
    writeln!(w, "{}", header.join("\t"))?;
    for (r, label) in labels.iter().enumerate() {
        let mut cells: Vec<String> = emb.row(r).iter().map(f64::to_string).collect();
        cells.push(label.to_string());
        writeln!(w, "{}", cells.join("\t"))?;
    }
    w.flush()?;
    Ok(())
}

/// Which samples an export covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportSet {
    All,
    Test,
}

pub fn export_embeddings(cfg: &ExperimentConfig, checkpoint: &Path, set: ExportSet, out: &Path) -> Result<usize> {
    let (params, ds, split) = load_for_config(cfg, checkpoint)?;
    let rows: Vec<usize> = match set {
        ExportSet::All => (0..ds.len()).collect(),
        ExportSet::Test => split.test.clone(),
    };
    let samples = ds.gather(&rows);
    write_embeddings(&params, &samples, &ds.gather_labels(&rows), File::create(out)?)?;
    Ok(rows.len())
}
