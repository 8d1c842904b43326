//! Objective composition, SGD with momentum under cosine decay, and per-step metrics.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentKind, Augmenter};
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{
    combined_ce, one_hot, pseudo_labels, ranking_loss, semantic_loss, supervised_ce, unlabeled_ce,
    Hyperparams, NormalizedLogitsBatch, RankKind,
};
use crate::model::ModelParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("optim.lr", format!("must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(
                "optim.momentum",
                format!("must lie in [0, 1), got {}", self.momentum),
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("optim.weight_decay", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor>,
    pub momentum: f64,
    pub base_lr: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, cfg: &OptimizerConfig) -> Self {
        Self {
            velocity: params.tensors().map(Tensor::zeros_like).collect(),
            momentum: cfg.momentum,
            base_lr: cfg.lr,
            weight_decay: cfg.weight_decay,
        }
    }
}

/// `η₀ · cos(7πk / 16K)`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    assert!(total_steps > 0, "total_steps must be positive");
    let k = step.min(total_steps) as f64;
    base_lr * (7.0 * std::f64::consts::PI * k / (16.0 * total_steps as f64)).cos()
}

/// `v ← βv + g + wd·θ; θ ← θ − ηv`. Nothing is updated if any gradient is non-finite.
pub fn sgd_momentum_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let names = params.names();
    if grads.len() != names.len() || state.velocity.len() != names.len() {
        return Err(Error::shape(
            "sgd_momentum_step",
            format!(
                "{} parameters, {} gradients, {} velocities",
                names.len(),
                grads.len(),
                state.velocity.len()
            ),
        ));
    }
    for ((name, p), g) in names.iter().zip(params.tensors()).zip(grads) {
        if g.shape() != p.shape() {
            return Err(Error::shape(
                "sgd_momentum_step",
                format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { param: name.clone() });
        }
    }
    let (beta, wd) = (state.momentum, state.weight_decay);
    for ((p, g), v) in params.tensors_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((theta, &grad), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vel = beta * *vel + grad + wd * *theta;
            *theta -= lr * *vel;
        }
    }
    Ok(())
}

/// Which loss families enter the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Cross-entropy, ranking and semantics-oriented feature contrast.
    ReRankMatch,
    /// Cross-entropy and ranking only; the semantics module is never invoked.
    RankingMatch,
    /// Labeled cross-entropy only; unlabeled data is never touched.
    Supervised,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rerankmatch" => Ok(Objective::ReRankMatch),
            "rankingmatch" => Ok(Objective::RankingMatch),
            "supervised" => Ok(Objective::Supervised),
            other => Err(Error::config(
                "train.objective",
                format!("unknown objective `{other}`"),
            )),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::ReRankMatch => "rerankmatch",
            Objective::RankingMatch => "rankingmatch",
            Objective::Supervised => "supervised",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub ce_x: f64,
    pub ce_u: f64,
    pub rank: f64,
    pub featcont: f64,
    pub total: f64,
    pub mask_rate: f64,
    pub pair_pos_rate: f64,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "step,lr,ce_x,ce_u,rank,featcont,total,mask_rate,pair_pos_rate";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.step,
            self.lr,
            self.ce_x,
            self.ce_u,
            self.rank,
            self.featcont,
            self.total,
            self.mask_rate,
            self.pair_pos_rate
        )
    }

    /// `ce_x + λ_u·ce_u + λ_r·rank + λ_s·featcont`.
    pub fn recombined(&self, hp: &Hyperparams) -> f64 {
        self.ce_x + hp.lambda_u * self.ce_u + hp.lambda_r * self.rank + hp.lambda_s * self.featcont
    }
}

pub fn total_loss(g: &mut Graph, ce: Var, rank: Var, featcont: Var, hp: &Hyperparams) -> Result<Var> {
    let r = g.scale(rank, hp.lambda_r);
    let s = g.scale(featcont, hp.lambda_s);
    let partial = g.add(ce, r)?;
    g.add(partial, s)
}

/// One materialised training step: weak labeled view, weak and strong unlabeled views.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub x_weak: Tensor,
    pub labels: Vec<usize>,
    pub u_weak: Tensor,
    pub u_strong: Tensor,
}

/// Step settings that stay fixed across a run.
#[derive(Clone, Debug, PartialEq)]
pub struct StepConfig {
    pub hp: Hyperparams,
    pub rank_kind: RankKind,
    pub objective: Objective,
}

/// Extra per-step observations not carried in the CSV record.
#[derive(Clone, Debug, Default)]
pub struct StepDetails {
    /// Classes that received a reference representation this step.
    pub reference_classes: Vec<usize>,
    /// Similarity representations `[μB × K]`, weak then strong.
    pub similarity: Vec<Tensor>,
    /// Labels of the labeled batch.
    pub labels: Vec<usize>,
}

/// Forward all views, build the objective, back-propagate and update `params` once.
pub fn train_step<R: Rng + ?Sized>(
    params: &mut ModelParams,
    batch: &TrainBatch,
    cfg: &StepConfig,
    state: &mut OptimizerState,
    lr: f64,
    step: usize,
    reference_rng: &mut R,
) -> Result<(StepRecord, StepDetails)> {
    let hp = &cfg.hp;
    let classes = params.class_count();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let mut details = StepDetails {
        labels: batch.labels.clone(),
        ..StepDetails::default()
    };

    let xw = g.constant(batch.x_weak.clone());
    let out_x = params.forward(&mut g, &bound, xw)?;
    let ce_x = supervised_ce(&mut g, out_x.logits, &one_hot(&batch.labels, classes))?;

    let (total, ce_u, rank, featcont, mask_rate, pair_pos_rate) = if cfg.objective == Objective::Supervised {
        (ce_x, None, None, None, 0.0, 0.0)
    } else {
        let uw = g.constant(batch.u_weak.clone());
        let us = g.constant(batch.u_strong.clone());
        let out_uw = params.forward(&mut g, &bound, uw)?;
        let out_us = params.forward(&mut g, &bound, us)?;

        let pl = pseudo_labels(g.value(out_uw.logits), hp.tau);
        let ce_u = unlabeled_ce(&mut g, out_us.logits, &pl)?;
        let ce = combined_ce(&mut g, ce_x, ce_u, hp.lambda_u)?;

        let labeled = NormalizedLogitsBatch::from_logits(&mut g, out_x.logits, batch.labels.clone())?;
        let confident = pl.confident_rows();
        let strong_confident = g.gather_rows(out_us.logits, &confident)?;
        let confident_labels = confident.iter().map(|&i| pl.q_hat[i]).collect();
        let unlabeled = NormalizedLogitsBatch::from_logits(&mut g, strong_confident, confident_labels)?;
        let rank = ranking_loss(&mut g, cfg.rank_kind, &labeled, &unlabeled, hp)?;

        let (featcont, pair_rate) = if cfg.objective == Objective::ReRankMatch {
            let sem = semantic_loss(
                &mut g,
                out_x.representation,
                &batch.labels,
                out_uw.representation,
                out_us.representation,
                hp,
                reference_rng,
            )?;
            details.reference_classes = sem.references.class_ids.clone();
            for s in [sem.similarity_weak, sem.similarity_strong] {
                details.similarity.push(g.value(s.scores).clone());
            }
            (sem.loss.value, sem.pair_positive_rate())
        } else {
            (g.scalar(0.0), 0.0)
        };
        let total = total_loss(&mut g, ce, rank.value, featcont, hp)?;
        (total, Some(ce_u), Some(rank.value), Some(featcont), pl.mask_rate(), pair_rate)
    };

    let value = |g: &Graph, v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
    let record = StepRecord {
        step,
        lr,
        ce_x: g.value(ce_x).item(),
        ce_u: value(&g, ce_u),
        rank: value(&g, rank),
        featcont: value(&g, featcont),
        total: g.value(total).item(),
        mask_rate,
        pair_pos_rate,
    };

    let grads = g.backward(total)?;
    let grads: Vec<Tensor> = bound
        .vars()
        .zip(params.tensors())
        .map(|(v, p)| grads.get_or_zeros(v, p))
        .collect();
    sgd_momentum_step(params, &grads, state, lr)?;
    Ok((record, details))
}

/// Cycles through a pool in shuffled passes, reshuffling after each pass.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(pool: Vec<usize>, rng: ChaCha8Rng) -> Self {
        Self {
            order: Vec::new(),
            cursor: 0,
            pool,
            rng,
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        if self.pool.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order = self.pool.clone();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Independent random streams so that switching loss terms on or off never
/// perturbs the randomness of the others.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Owns the model, optimizer and data streams for one run.
pub struct Trainer<'a> {
    pub params: ModelParams,
    pub state: OptimizerState,
    pub cfg: StepConfig,
    dataset: &'a Dataset,
    augmenter: Augmenter,
    labeled: BatchSampler,
    unlabeled: BatchSampler,
    aug_labeled: ChaCha8Rng,
    aug_unlabeled: ChaCha8Rng,
    references: ChaCha8Rng,
    step: usize,
    total_steps: usize,
}

impl<'a> Trainer<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: ModelParams,
        optim: &OptimizerConfig,
        cfg: StepConfig,
        dataset: &'a Dataset,
        augmenter: Augmenter,
        labeled: Vec<usize>,
        unlabeled: Vec<usize>,
        total_steps: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.hp.validate()?;
        optim.validate()?;
        if labeled.is_empty() {
            return Err(Error::config("split.n_labeled", "training needs labeled samples"));
        }
        if total_steps == 0 {
            return Err(Error::config("train.epochs", "run has zero steps"));
        }
        Ok(Self {
            state: OptimizerState::new(&params, optim),
            params,
            cfg,
            dataset,
            augmenter,
            labeled: BatchSampler::new(labeled, stream(seed, 1)),
            unlabeled: BatchSampler::new(unlabeled, stream(seed, 2)),
            aug_labeled: stream(seed, 3),
            aug_unlabeled: stream(seed, 4),
            references: stream(seed, 5),
            step: 0,
            total_steps,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn next_batch(&mut self) -> TrainBatch {
        let hp = &self.cfg.hp;
        let lab = self.labeled.next_batch(hp.batch_size);
        let x_weak = self
            .augmenter
            .batch(self.dataset, &lab, AugmentKind::Weak, &mut self.aug_labeled);
        let labels = self.dataset.gather_labels(&lab);
        let d = self.dataset.feature_dim();
        let (u_weak, u_strong) = if self.cfg.objective == Objective::Supervised {
            (Tensor::zeros(0, d), Tensor::zeros(0, d))
        } else {
            let unl = self.unlabeled.next_batch(hp.unlabeled_batch_size());
            let w = self
                .augmenter
                .batch(self.dataset, &unl, AugmentKind::Weak, &mut self.aug_unlabeled);
            let s = self
                .augmenter
                .batch(self.dataset, &unl, AugmentKind::Strong, &mut self.aug_unlabeled);
            (w, s)
        };
        TrainBatch {
            x_weak,
            labels,
            u_weak,
            u_strong,
        }
    }

    pub fn step(&mut self) -> Result<(StepRecord, StepDetails)> {
        let batch = self.next_batch();
        let lr = cosine_lr(self.step, self.total_steps, self.state.base_lr);
        let out = train_step(
            &mut self.params,
            &batch,
            &self.cfg,
            &mut self.state,
            lr,
            self.step,
            &mut self.references,
        )?;
        self.step += 1;
        Ok(out)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `indices` whose arg-max prediction differs from the label.
pub fn evaluate(params: &ModelParams, ds: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::config("split.test_frac", "evaluation set is empty"));
    }
    let x = ds.gather(indices);
    let (_, logits) = params.predict(&x)?;
    let wrong = indices
        .iter()
        .enumerate()
        .filter(|&(r, &i)| argmax(logits.row(r)) != ds.labels()[i])
        .count();
    Ok(wrong as f64 / indices.len() as f64)
}
