use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Labeled and unlabeled pools draw from every class.
    Overlapping,
    /// The lower half of the classes is labeled, the upper half unlabeled.
    DisjointClasses,
}

impl FromStr for OverlapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "overlapping" => Ok(OverlapMode::Overlapping),
            "disjoint_classes" | "disjoint-classes" => Ok(OverlapMode::DisjointClasses),
            other => Err(Error::config(
                "split.overlap_mode",
                format!("unknown mode `{other}`, expected overlapping or disjoint_classes"),
            )),
        }
    }
}

impl fmt::Display for OverlapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlapMode::Overlapping => "overlapping",
            OverlapMode::DisjointClasses => "disjoint_classes",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_labeled: usize,
    pub overlap_mode: OverlapMode,
    pub seed: u64,
    /// Fraction of the non-test samples held out for validation.
    pub val_frac: f64,
    /// Fraction of all samples held out for testing, carved before anything else.
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            n_labeled: 20,
            overlap_mode: OverlapMode::Overlapping,
            seed: 0,
            val_frac: 0.1,
            test_frac: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SslSplit {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub overlap_mode: OverlapMode,
    /// Classes the labeled pool (and so the classifier head) covers, ascending.
    pub labeled_classes: Vec<usize>,
    pub unlabeled_classes: Vec<usize>,
}

/// Splits `ds` into test, validation, labeled and unlabeled index sets.
///
/// Test then validation are carved from a seeded shuffle first; the labeled
/// set is stratified over the labeled-pool classes from what remains. In
/// disjoint-classes mode, evaluation sets keep only labeled-pool classes.
pub fn split_ssl(ds: &Dataset, spec: &SplitSpec) -> Result<SslSplit> {
    for (key, v) in [("split.val_frac", spec.val_frac), ("split.test_frac", spec.test_frac)] {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::config(key, format!("must lie in [0, 1), got {v}")));
        }
    }
    if spec.n_labeled == 0 {
        return Err(Error::config("split.n_labeled", "must be >= 1"));
    }
    let classes = ds.class_count();
    let (labeled_classes, unlabeled_classes): (Vec<usize>, Vec<usize>) = match spec.overlap_mode {
        OverlapMode::Overlapping => ((0..classes).collect(), (0..classes).collect()),
        OverlapMode::DisjointClasses => {
            if classes < 4 {
                return Err(Error::config(
                    "split.overlap_mode",
                    format!("disjoint_classes needs at least 4 classes, dataset has {classes}"),
                ));
            }
            ((0..classes / 2).collect(), (classes / 2..classes).collect())
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let n_test = (spec.test_frac * ds.len() as f64).round() as usize;
    let (test, rest) = order.split_at(n_test);
    let n_val = (spec.val_frac * rest.len() as f64).round() as usize;
    let (validation, train) = rest.split_at(n_val);

    if spec.n_labeled > train.len() {
        return Err(Error::config(
            "split.n_labeled",
            format!("{} requested but only {} training samples", spec.n_labeled, train.len()),
        ));
    }

    let labels = ds.labels();
    let per_class: Vec<Vec<usize>> = labeled_classes
        .iter()
        .map(|&c| train.iter().copied().filter(|&i| labels[i] == c).collect())
        .collect();
    let pool_size: usize = per_class.iter().map(Vec::len).sum();
    let k = labeled_classes.len();
    let quotas: Vec<usize> = if spec.n_labeled == pool_size {
        per_class.iter().map(Vec::len).collect()
    } else {
        (0..k)
            .map(|i| spec.n_labeled / k + usize::from(i < spec.n_labeled % k))
            .collect()
    };
    if quotas.iter().zip(&per_class).any(|(&q, avail)| q > avail.len()) {
        let availability: Vec<String> = labeled_classes
            .iter()
            .zip(&per_class)
            .zip(&quotas)
            .map(|((c, avail), q)| format!("class {c}: need {q}, have {}", avail.len()))
            .collect();
        return Err(Error::config(
            "split.n_labeled",
            format!("cannot stratify {} labels ({})", spec.n_labeled, availability.join(", ")),
        ));
    }
    let mut labeled: Vec<usize> = per_class
        .iter()
        .zip(&quotas)
        .flat_map(|(avail, &q)| avail[..q].iter().copied())
        .collect();
    labeled.sort_unstable();

    let is_labeled = {
        let mut flags = vec![false; ds.len()];
        labeled.iter().for_each(|&i| flags[i] = true);
        flags
    };
    let mut unlabeled: Vec<usize> = train
        .iter()
        .copied()
        .filter(|&i| !is_labeled[i] && unlabeled_classes.contains(&labels[i]))
        .collect();
    unlabeled.sort_unstable();

    let keep_eval = |set: &[usize]| -> Vec<usize> {
        let mut v: Vec<usize> = set
            .iter()
            .copied()
            .filter(|&i| labeled_classes.contains(&labels[i]))
            .collect();
        v.sort_unstable();
        v
    };

    Ok(SslSplit {
        labeled,
        unlabeled,
        validation: keep_eval(validation),
        test: keep_eval(test),
        overlap_mode: spec.overlap_mode,
        labeled_classes,
        unlabeled_classes,
    })
}
