//! Cross-entropy on labeled and pseudo-labeled data, and the two ranking losses
//! over L2-normalised logits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Diagnostic, Loss};
use crate::autodiff::{softmax_rows, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Named constants shared by every loss term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Labeled batch size `B`.
    pub batch_size: usize,
    /// Unlabeled-to-labeled batch ratio `μ`.
    pub mu: usize,
    /// Pseudo-label confidence threshold `τ`.
    pub tau: f64,
    /// BatchMean triplet margin `m`.
    pub margin: f64,
    /// Contrastive temperature `T`.
    pub temperature: f64,
    /// Pair-label threshold `ψ` on similarity-representation distance.
    pub psi: f64,
    /// Feature contrastive margin `φ`.
    pub phi: f64,
    pub lambda_u: f64,
    pub lambda_r: f64,
    pub lambda_s: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            batch_size: 64,
            mu: 7,
            tau: 0.95,
            margin: 0.5,
            temperature: 0.2,
            psi: 0.5,
            phi: 0.3,
            lambda_u: 1.0,
            lambda_r: 1.0,
            lambda_s: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn unlabeled_batch_size(&self) -> usize {
        self.batch_size * self.mu
    }

    /// Checks every range constraint; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("hp.{key}"), format!("must be > 0, got {v}")))
            }
        };
        let nonneg = |key: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("hp.{key}"), format!("must be >= 0, got {v}")))
            }
        };
        if self.batch_size == 0 {
            return Err(Error::config("hp.batch_size", "must be >= 1"));
        }
        if self.mu == 0 {
            return Err(Error::config("hp.mu", "must be >= 1"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config(
                "hp.tau",
                format!("must lie in (0, 1], got {}", self.tau),
            ));
        }
        nonneg("margin", self.margin)?;
        positive("temperature", self.temperature)?;
        positive("psi", self.psi)?;
        positive("phi", self.phi)?;
        nonneg("lambda_u", self.lambda_u)?;
        nonneg("lambda_r", self.lambda_r)?;
        nonneg("lambda_s", self.lambda_s)?;
        Ok(())
    }
}

/// Which ranking loss the objective uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankKind {
    /// BatchMean triplet.
    #[serde(rename = "BM")]
    BatchMean,
    /// Temperature-scaled contrastive.
    #[serde(rename = "CT")]
    Contrastive,
}

impl FromStr for RankKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BM" => Ok(RankKind::BatchMean),
            "CT" => Ok(RankKind::Contrastive),
            other => Err(Error::config(
                "train.rank_kind",
                format!("unknown ranking loss `{other}`, expected BM or CT"),
            )),
        }
    }
}

impl fmt::Display for RankKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankKind::BatchMean => "BM",
            RankKind::Contrastive => "CT",
        })
    }
}

/// Softmaxed weak-view predictions and the confidence-gated hard labels derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelResult {
    pub q_tilde: Tensor,
    pub q_hat: Vec<usize>,
    pub mask: Vec<bool>,
}

impl PseudoLabelResult {
    pub fn mask_rate(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }

    /// Row indices that pass the threshold, ascending.
    pub fn confident_rows(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// A batch of unit-norm logits with one class label per row.
#[derive(Clone, Debug)]
pub struct NormalizedLogitsBatch {
    pub vectors: Var,
    pub labels: Vec<usize>,
}

impl NormalizedLogitsBatch {
    /// L2-normalises `logits` row-wise.
    pub fn from_logits(g: &mut Graph, logits: Var, labels: Vec<usize>) -> Result<Self> {
        let rows = g.value(logits).rows();
        if rows != labels.len() {
            return Err(Error::shape(
                "normalized_logits",
                format!("{rows} rows but {} labels", labels.len()),
            ));
        }
        let vectors = g.l2_normalize(logits)?;
        Ok(Self { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn label_masks(&self) -> (Tensor, Tensor) {
        let n = self.len();
        let mut same = Tensor::zeros(n, n);
        let mut diff = Tensor::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                if self.labels[a] == self.labels[b] {
                    same.data_mut()[a * n + b] = 1.0;
                } else {
                    diff.data_mut()[a * n + b] = 1.0;
                }
            }
        }
        (same, diff)
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(labels.len(), classes);
    for (r, &l) in labels.iter().enumerate() {
        t.data_mut()[r * classes + l] = 1.0;
    }
    t
}

fn check_one_hot(labels: &Tensor) -> Result<()> {
    for r in 0..labels.rows() {
        let row = labels.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Label {
                row: r,
                detail: format!("not one-hot: {row:?}"),
            });
        }
    }
    Ok(())
}

/// `-mean_b Σ_c w[b][c] ln softmax(logits)[b][c]`, averaged over `denom` rows.
fn weighted_nll(g: &mut Graph, logits: Var, weights: Tensor, denom: usize) -> Result<Var> {
    if denom == 0 {
        return Ok(g.scalar(0.0));
    }
    let logp = g.log_softmax(logits);
    let w = g.constant(weights);
    let picked = g.mul(logp, w)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0 / denom as f64))
}

/// Mean cross-entropy between one-hot `labels` and `softmax(logits)`.
pub fn supervised_ce(g: &mut Graph, logits: Var, labels: &Tensor) -> Result<Var> {
    let lv = g.value(logits);
    if lv.rows() != labels.rows() || lv.cols() != labels.cols() {
        return Err(Error::shape(
            "supervised_ce",
            format!("logits {:?} vs labels {:?}", lv.shape(), labels.shape()),
        ));
    }
    check_one_hot(labels)?;
    let rows = labels.rows();
    weighted_nll(g, logits, labels.clone(), rows)
}

/// Arg-max pseudo-labels of the weak-view logits, gated by confidence `tau`.
pub fn pseudo_labels(logits_weak: &Tensor, tau: f64) -> PseudoLabelResult {
    let q_tilde = softmax_rows(logits_weak);
    let mut q_hat = Vec::with_capacity(q_tilde.rows());
    let mut mask = Vec::with_capacity(q_tilde.rows());
    for r in 0..q_tilde.rows() {
        let row = q_tilde.row(r);
        let mut best = 0;
        for (c, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = c;
            }
        }
        q_hat.push(best);
        mask.push(row[best] >= tau);
    }
    PseudoLabelResult {
        q_tilde,
        q_hat,
        mask,
    }
}

/// Cross-entropy of the strong view against confident pseudo-labels, summed
/// over confident rows and divided by the full unlabeled batch size.
pub fn unlabeled_ce(g: &mut Graph, logits_strong: Var, pl: &PseudoLabelResult) -> Result<Var> {
    let lv = g.value(logits_strong);
    if lv.rows() != pl.q_hat.len() || lv.cols() != pl.q_tilde.cols() {
        return Err(Error::shape(
            "unlabeled_ce",
            format!(
                "strong logits {:?} vs pseudo-labels [{}x{}]",
                lv.shape(),
                pl.q_hat.len(),
                pl.q_tilde.cols()
            ),
        ));
    }
    let classes = lv.cols();
    let mut weights = one_hot(&pl.q_hat, classes);
    for (r, &keep) in pl.mask.iter().enumerate() {
        if !keep {
            weights.row_mut(r).fill(0.0);
        }
    }
    weighted_nll(g, logits_strong, weights, pl.q_hat.len())
}

pub fn combined_ce(g: &mut Graph, l_x: Var, l_u: Var, lambda_u: f64) -> Result<Var> {
    let weighted = g.scale(l_u, lambda_u);
    g.add(l_x, weighted)
}

/// BatchMean triplet loss. Both inner distance sums are divided by the full
/// batch size, and the anchor counts among its own positives.
pub fn batchmean_triplet(g: &mut Graph, batch: &NormalizedLogitsBatch, margin: f64) -> Result<Loss> {
    let n = batch.len();
    if n == 0 {
        return Ok(Loss::flagged(g.scalar(0.0), Diagnostic::EmptyBatch));
    }
    let (same, diff) = batch.label_masks();
    let d = g.cdist(batch.vectors, batch.vectors)?;
    let same = g.constant(same);
    let diff = g.constant(diff);
    let pos = g.mul(d, same)?;
    let pos = g.sum_rows(pos);
    let neg = g.mul(d, diff)?;
    let neg = g.sum_rows(neg);
    let gap = g.sub(pos, neg)?;
    let gap = g.scale(gap, 1.0 / n as f64);
    let inner = g.add_scalar(gap, margin);
    let per_anchor = g.softplus(inner);
    Ok(Loss::ok(g.mean(per_anchor)))
}

/// Contrastive ranking loss over ordered same-label pairs `(a, p)`, `a ≠ p`.
///
/// Each pair contributes `softplus(lse_n(sim_an / T) - sim_ap / T)`, which is
/// the `-ln(e^{s_ap} / (e^{s_ap} + Σ_n e^{s_an}))` form rewritten stably. The
/// sum is divided by the number of such pairs.
pub fn contrastive_rank(g: &mut Graph, batch: &NormalizedLogitsBatch, temperature: f64) -> Result<Loss> {
    if !(temperature > 0.0) {
        return Err(Error::config(
            "hp.temperature",
            format!("must be > 0, got {temperature}"),
        ));
    }
    let n = batch.len();
    let (same, diff) = batch.label_masks();
    let mut pairs = same;
    let mut pair_count = 0usize;
    for a in 0..n {
        let has_negative = diff.row(a).iter().any(|&v| v != 0.0);
        for p in 0..n {
            let idx = a * n + p;
            if a == p || pairs.data()[idx] == 0.0 {
                pairs.data_mut()[idx] = 0.0;
                continue;
            }
            pair_count += 1;
            // Without negatives the ratio is exactly 1 and the pair adds nothing.
            if !has_negative {
                pairs.data_mut()[idx] = 0.0;
            }
        }
    }
    if pair_count == 0 {
        return Ok(Loss::flagged(g.scalar(0.0), Diagnostic::NoValidPairs));
    }
    let vt = g.transpose(batch.vectors);
    let sim = g.matmul(batch.vectors, vt)?;
    let logits = g.scale(sim, 1.0 / temperature);
    let lse_neg = g.masked_logsumexp(logits, diff)?;
    let neg_logits = g.neg(logits);
    let gap = g.add_col(neg_logits, lse_neg)?;
    let terms = g.softplus(gap);
    let pairs = g.constant(pairs);
    let picked = g.mul(terms, pairs)?;
    let total = g.sum(picked);
    Ok(Loss::ok(g.scale(total, 1.0 / pair_count as f64)))
}

/// Labeled plus unlabeled ranking term of the selected kind.
pub fn ranking_loss(
    g: &mut Graph,
    kind: RankKind,
    labeled: &NormalizedLogitsBatch,
    unlabeled: &NormalizedLogitsBatch,
    hp: &Hyperparams,
) -> Result<Loss> {
    let term = |g: &mut Graph, b: &NormalizedLogitsBatch| match kind {
        RankKind::BatchMean => batchmean_triplet(g, b, hp.margin),
        RankKind::Contrastive => contrastive_rank(g, b, hp.temperature),
    };
    let lx = term(g, labeled)?;
    if unlabeled.is_empty() {
        return Ok(lx);
    }
    let lu = term(g, unlabeled)?;
    let value = g.add(lx.value, lu.value)?;
    let mut diagnostics = lx.diagnostics;
    diagnostics.extend(lu.diagnostics);
    Ok(Loss { value, diagnostics })
}
