//! Loss terms of the semi-supervised objective.

pub mod class_specific;
pub mod semantic;

pub use class_specific::{
    batchmean_triplet, combined_ce, contrastive_rank, one_hot, pseudo_labels, ranking_loss,
    supervised_ce, unlabeled_ce, Hyperparams, NormalizedLogitsBatch, PseudoLabelResult, RankKind,
};
pub use semantic::{
    assign_pair_labels, feature_contrastive_batch, feature_contrastive_pair, sample_references,
    semantic_loss, similarity_representation, PairLabelMatrix, ReferenceSet, SemanticOutput,
    SimilarityRep,
};

use crate::autodiff::Var;

/// Why a loss came back as a constant zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    EmptyBatch,
    NoValidPairs,
    TooFewSamples,
}

/// A scalar loss node plus any degenerate-input flags raised while building it.
#[derive(Clone, Debug)]
pub struct Loss {
    pub value: Var,
    pub diagnostics: Vec<Diagnostic>,
}

impl Loss {
    pub fn ok(value: Var) -> Self {
        Self {
            value,
            diagnostics: Vec::new(),
        }
    }

    pub fn flagged(value: Var, diagnostic: Diagnostic) -> Self {
        Self {
            value,
            diagnostics: vec![diagnostic],
        }
    }
}
