//! Semantics-oriented feature contrast for unlabeled data.
//!
//! Each step picks one labeled representation per class present in the batch
//! as a reference. Every unlabeled representation is described by its cosine
//! similarity to those references; two unlabeled samples whose similarity
//! vectors are closer than `ψ` are treated as a positive pair, all others as
//! negative. Positive pairs are pulled together in representation space and
//! negative pairs pushed at least `φ` apart. Nothing here reads unlabeled
//! ground truth, so the unlabeled pool may hold classes the labeled pool lacks.

use rand::Rng;

use super::{Diagnostic, Hyperparams, Loss};
use crate::autodiff::{Graph, Tensor, Var, NORM_EPS};
use crate::error::{Error, Result};

/// One labeled representation per class, sorted by class id.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    /// `[K × d_f]`, detached from the graph.
    pub reps: Tensor,
    pub class_ids: Vec<usize>,
    /// Row of the source batch each reference was taken from.
    pub source_rows: Vec<usize>,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }
}

/// Cosine similarities `[n × K]` between unlabeled representations and references.
#[derive(Clone, Copy, Debug)]
pub struct SimilarityRep {
    pub scores: Var,
}

/// Symmetric same/different decisions for every pair of unlabeled samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairLabelMatrix {
    n: usize,
    t: Vec<bool>,
}

impl PairLabelMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut t = vec![false; n * n];
        for i in 0..n {
            t[i * n + i] = true;
            for j in i + 1..n {
                let v = f(i, j);
                t[i * n + j] = v;
                t[j * n + i] = v;
            }
        }
        Self { n, t }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.t[i * self.n + j]
    }

    /// Count of positive unordered pairs `i < j`.
    pub fn positive_pairs(&self) -> usize {
        (0..self.n)
            .map(|i| (i + 1..self.n).filter(|&j| self.get(i, j)).count())
            .sum()
    }

    pub fn total_pairs(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }
}

/// Picks one row uniformly at random for each distinct label in `labels`.
pub fn sample_references<R: Rng + ?Sized>(
    reps_x: &Tensor,
    labels: &[usize],
    rng: &mut R,
) -> Result<ReferenceSet> {
    if reps_x.rows() != labels.len() {
        return Err(Error::shape(
            "sample_references",
            format!("{} representations but {} labels", reps_x.rows(), labels.len()),
        ));
    }
    let mut class_ids: Vec<usize> = labels.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    let source_rows: Vec<usize> = class_ids
        .iter()
        .map(|&c| {
            let rows: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter_map(|(i, &l)| (l == c).then_some(i))
                .collect();
            rows[rng.random_range(0..rows.len())]
        })
        .collect();
    let reps = reps_x.select_rows(&source_rows);
    let reps = Tensor::new(vec![source_rows.len(), reps_x.cols()], reps.into_data())?;
    Ok(ReferenceSet {
        reps,
        class_ids,
        source_rows,
    })
}

/// `scores[b][k] = cos(reps_u[b], refs[k])`. References are constants.
pub fn similarity_representation(g: &mut Graph, reps_u: Var, refs: &ReferenceSet) -> Result<SimilarityRep> {
    let d = g.value(reps_u).cols();
    if refs.reps.cols() != d {
        return Err(Error::shape(
            "similarity_representation",
            format!("representations have {d} dims, references {}", refs.reps.cols()),
        ));
    }
    for r in 0..refs.reps.rows() {
        let norm = refs.reps.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= NORM_EPS {
            return Err(Error::DegenerateRow { row: r, norm });
        }
    }
    let unit_u = g.l2_normalize(reps_u)?;
    let refs_var = g.constant(refs.reps.clone());
    let unit_r = g.l2_normalize(refs_var)?;
    let unit_r_t = g.transpose(unit_r);
    let cos = g.matmul(unit_u, unit_r_t)?;
    Ok(SimilarityRep {
        scores: g.clamp(cos, -1.0, 1.0),
    })
}

/// `t[i][j] = ||s_i - s_j|| < ψ`, computed on values only.
pub fn assign_pair_labels(scores: &Tensor, psi: f64) -> Result<PairLabelMatrix> {
    if !(psi > 0.0) {
        return Err(Error::config("hp.psi", format!("must be > 0, got {psi}")));
    }
    Ok(PairLabelMatrix::from_fn(scores.rows(), |i, j| {
        let d2: f64 = scores
            .row(i)
            .iter()
            .zip(scores.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        d2.sqrt() < psi
    }))
}

/// Loss for a single pair: the distance when `same`, else the hinge `max(0, φ - distance)`.
pub fn feature_contrastive_pair(g: &mut Graph, f_i: Var, f_j: Var, same: bool, phi: f64) -> Result<Var> {
    let d = g.cdist(f_i, f_j)?;
    if g.value(d).numel() != 1 {
        return Err(Error::shape(
            "feature_contrastive_pair",
            format!("expected single rows, got distance shape {:?}", g.value(d).shape()),
        ));
    }
    if same {
        return Ok(g.sum(d));
    }
    let neg = g.neg(d);
    let gap = g.add_scalar(neg, phi);
    let hinge = g.relu(gap);
    Ok(g.sum(hinge))
}

/// Mean pair loss over all unordered pairs `i < j` of one stream.
fn stream_loss(g: &mut Graph, reps: Var, t: &PairLabelMatrix, phi: f64) -> Result<Var> {
    let n = t.len();
    let mut pos = Tensor::zeros(n, n);
    let mut neg = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if t.get(i, j) {
                pos.data_mut()[i * n + j] = 1.0;
            } else {
                neg.data_mut()[i * n + j] = 1.0;
            }
        }
    }
    let d = g.cdist(reps, reps)?;
    let pos = g.constant(pos);
    let pull = g.mul(d, pos)?;
    let pull = g.sum(pull);
    let neg_d = g.neg(d);
    let gap = g.add_scalar(neg_d, phi);
    let hinge = g.relu(gap);
    let neg = g.constant(neg);
    let push = g.mul(hinge, neg)?;
    let push = g.sum(push);
    let total = g.add(pull, push)?;
    Ok(g.scale(total, 1.0 / t.total_pairs() as f64))
}

/// Weak-stream plus strong-stream feature contrastive loss.
pub fn feature_contrastive_batch(
    g: &mut Graph,
    reps_weak: Var,
    reps_strong: Var,
    t_weak: &PairLabelMatrix,
    t_strong: &PairLabelMatrix,
    phi: f64,
) -> Result<Loss> {
    if !(phi > 0.0) {
        return Err(Error::config("hp.phi", format!("must be > 0, got {phi}")));
    }
    let (nw, ns) = (g.value(reps_weak).rows(), g.value(reps_strong).rows());
    if nw != ns || t_weak.len() != nw || t_strong.len() != ns {
        return Err(Error::shape(
            "feature_contrastive_batch",
            format!(
                "weak {nw} rows / {} labels, strong {ns} rows / {} labels",
                t_weak.len(),
                t_strong.len()
            ),
        ));
    }
    if nw < 2 {
        return Ok(Loss::flagged(g.scalar(0.0), Diagnostic::TooFewSamples));
    }
    let lw = stream_loss(g, reps_weak, t_weak, phi)?;
    let ls = stream_loss(g, reps_strong, t_strong, phi)?;
    Ok(Loss::ok(g.add(lw, ls)?))
}

/// Everything the semantics-oriented pipeline produced in one step.
#[derive(Clone, Debug)]
pub struct SemanticOutput {
    pub loss: Loss,
    pub references: ReferenceSet,
    pub similarity_weak: SimilarityRep,
    pub similarity_strong: SimilarityRep,
    pub pairs_weak: PairLabelMatrix,
    pub pairs_strong: PairLabelMatrix,
}

impl SemanticOutput {
    /// Fraction of positive unordered pairs across both streams.
    pub fn pair_positive_rate(&self) -> f64 {
        let total = self.pairs_weak.total_pairs() + self.pairs_strong.total_pairs();
        if total == 0 {
            return 0.0;
        }
        (self.pairs_weak.positive_pairs() + self.pairs_strong.positive_pairs()) as f64 / total as f64
    }
}

/// References from the weak labeled representations, similarity vectors and
/// pair labels per unlabeled stream, then the feature contrastive loss.
pub fn semantic_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    reps_x: Var,
    labels_x: &[usize],
    reps_uw: Var,
    reps_us: Var,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<SemanticOutput> {
    if labels_x.is_empty() {
        return Err(Error::config(
            "hp.batch_size",
            "semantic loss needs a nonempty labeled batch",
        ));
    }
    let references = sample_references(g.value(reps_x), labels_x, rng)?;
    let similarity_weak = similarity_representation(g, reps_uw, &references)?;
    let similarity_strong = similarity_representation(g, reps_us, &references)?;
    let pairs_weak = assign_pair_labels(g.value(similarity_weak.scores), hp.psi)?;
    let pairs_strong = assign_pair_labels(g.value(similarity_strong.scores), hp.psi)?;
    let loss = feature_contrastive_batch(g, reps_uw, reps_us, &pairs_weak, &pairs_strong, hp.phi)?;
    Ok(SemanticOutput {
        loss,
        references,
        similarity_weak,
        similarity_strong,
        pairs_weak,
        pairs_strong,
    })
}
