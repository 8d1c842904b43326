//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test --test acceptance -- 3 8`.

mod common;

use std::time::Instant;

use common::suites::{gradient_suite, oracle_suite};
use rerankmatch::autodiff::{softplus, Graph, Tensor};
use rerankmatch::config::{DatasetKind, ExperimentConfig};
use rerankmatch::data::OverlapMode;
use rerankmatch::experiment::{build_trainer, prepare_data, run_experiment, METRICS_FILE};
use rerankmatch::losses::{
    batchmean_triplet, feature_contrastive_pair, one_hot, supervised_ce, NormalizedLogitsBatch,
    RankKind,
};
use rerankmatch::trainer::Objective;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const GRADIENT_TOL: f64 = 1e-4;
const ORACLE_TOL: f64 = 1e-10;
const SUITE_SECONDS: f64 = 30.0;
const RUN_SECONDS: f64 = 120.0;

fn gradient_criterion() -> Outcome {
    let t = Instant::now();
    let results = gradient_suite(2024, 10);
    let secs = t.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let parts: Vec<String> = results.iter().map(|(n, e)| format!("{n}={e:.1e}")).collect();
    outcome(
        worst < GRADIENT_TOL && secs < SUITE_SECONDS,
        format!("max rel err {worst:.2e} < {GRADIENT_TOL:e} in {secs:.1}s [{}]", parts.join(", ")),
    )
}

fn oracle_criterion() -> Outcome {
    let t = Instant::now();
    let results = oracle_suite(2025, 100);
    let secs = t.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let parts: Vec<String> = results.iter().map(|(n, e)| format!("{n}={e:.1e}")).collect();
    outcome(
        worst <= ORACLE_TOL && secs < SUITE_SECONDS,
        format!("max rel err {worst:.2e} <= {ORACLE_TOL:e} over 100 instances in {secs:.1}s [{}]", parts.join(", ")),
    )
}

fn spot_values_criterion() -> Outcome {
    let sp = softplus(0.5);

    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_rows(&[vec![0.3, -1.2, 0.8], vec![0.3, -1.2, 0.8]]).unwrap());
    let batch = NormalizedLogitsBatch::from_logits(&mut g, x, vec![2, 2]).unwrap();
    let bm = batchmean_triplet(&mut g, &batch, 0.5).unwrap().value;
    let bm = g.value(bm).item();

    let f = g.leaf(Tensor::from_rows(&[vec![1.5, -0.5, 2.0]]).unwrap());
    let fc = feature_contrastive_pair(&mut g, f, f, false, 0.3).unwrap();
    let fc = g.value(fc).item();

    let z = g.leaf(Tensor::zeros(5, 7));
    let ce = supervised_ce(&mut g, z, &one_hot(&[0, 3, 6, 2, 2], 7)).unwrap();
    let ce = g.value(ce).item();

    let pass = (sp - 0.974077).abs() <= 1e-6
        && (bm - softplus(0.5)).abs() <= 1e-12
        && fc == 0.3
        && (ce - 7f64.ln()).abs() <= 1e-9;
    outcome(
        pass,
        format!("softplus(0.5)={sp:.7}, identical-pair BM={bm:.7}, coincident t=0 pair={fc}, zero-logit CE={ce:.10} vs ln 7"),
    )
}

fn reduction_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.hp.batch_size = 32;
    cfg.hp.mu = 4;
    cfg.train.epochs = 1;
    cfg.train.steps_per_epoch = 50;
    cfg
}

/// Runs both configs step by step and returns the first step at which any
/// parameter bit pattern differs.
fn first_divergence(a: &ExperimentConfig, b: &ExperimentConfig, steps: usize) -> Option<usize> {
    let (ds, split) = prepare_data(a).unwrap();
    let mut ta = build_trainer(a, &ds, &split, steps).unwrap();
    let mut tb = build_trainer(b, &ds, &split, steps).unwrap();
    for step in 0..steps {
        ta.step().unwrap();
        tb.step().unwrap();
        let same = ta
            .params
            .tensors()
            .zip(tb.params.tensors())
            .all(|(x, y)| x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        if !same {
            return Some(step);
        }
    }
    None
}

fn reduction_criterion() -> Outcome {
    let steps = 50;
    let mut zeroed = reduction_config();
    zeroed.hp.lambda_u = 0.0;
    zeroed.hp.lambda_r = 0.0;
    zeroed.hp.lambda_s = 0.0;
    let mut supervised = reduction_config();
    supervised.train.objective = Objective::Supervised;
    let baseline = first_divergence(&zeroed, &supervised, steps);

    let mut no_semantics = reduction_config();
    no_semantics.hp.lambda_s = 0.0;
    let mut ranking = reduction_config();
    ranking.train.objective = Objective::RankingMatch;
    let ranking_only = first_divergence(&no_semantics, &ranking, steps);
    // Control: the comparison must be able to see a difference.
    let control = first_divergence(&reduction_config(), &ranking, steps);

    let describe = |d: Option<usize>| match d {
        None => format!("identical over {steps} steps"),
        Some(s) => format!("diverged at step {s}"),
    };
    outcome(
        baseline.is_none() && ranking_only.is_none() && control.is_some(),
        format!(
            "all lambdas 0 vs supervised: {}; lambda_s 0 vs ranking-only: {}; control lambda_s 1 vs ranking-only: {}",
            describe(baseline),
            describe(ranking_only),
            describe(control)
        ),
    )
}

/// Two-moons with 20 labels and 800 unlabeled samples.
fn ssl_benefit_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.n = 1025;
    cfg.split.test_frac = 0.2;
    cfg.split.val_frac = 0.0;
    cfg.split.n_labeled = 20;
    cfg.train.rank_kind = RankKind::Contrastive;
    cfg.train.epochs = 100;
    cfg
}

fn ssl_benefit_criterion() -> Outcome {
    let mut wins = 0;
    let mut slowest: f64 = 0.0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let mut ssl = ssl_benefit_config();
        ssl.seed = seed;
        ssl.split.seed = seed;
        let mut sup = ssl.clone();
        sup.train.objective = Objective::Supervised;
        let t = Instant::now();
        let s = run_experiment(&ssl, None).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let b = run_experiment(&sup, None).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        assert_eq!((s.summary.n_labeled, s.summary.n_unlabeled), (20, 800));
        if s.summary.final_test_error <= b.summary.final_test_error {
            wins += 1;
        }
        pairs.push(format!(
            "{:.1}/{:.1}",
            100.0 * s.summary.final_test_error,
            100.0 * b.summary.final_test_error
        ));
    }
    outcome(
        wins >= 4 && slowest < RUN_SECONDS,
        format!(
            "ReRankMatch-CT <= supervised on {wins}/5 seeds (need 4), test error % ssl/sup {}, slowest run {slowest:.1}s",
            pairs.join(" ")
        ),
    )
}

fn quarter_ratio(totals: &[f64]) -> f64 {
    let q = totals.len() / 4;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    mean(&totals[totals.len() - q..]) / mean(&totals[..q])
}

fn scarce_config(n_labeled: usize, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.kind = DatasetKind::Shapes;
    cfg.dataset.n = 1000;
    cfg.dataset.size = 12;
    cfg.dataset.classes = 4;
    cfg.split.n_labeled = n_labeled;
    cfg.model.hidden = vec![64, 32];
    cfg.train.rank_kind = RankKind::BatchMean;
    cfg.train.epochs = 40;
    cfg.seed = seed;
    cfg.split.seed = seed;
    cfg
}

fn scarce_label_criterion() -> Outcome {
    let ratios = |n_labeled: usize| -> Vec<f64> {
        (0..5u64)
            .map(|seed| {
                let out = run_experiment(&scarce_config(n_labeled, seed), None).unwrap();
                let totals: Vec<f64> = out.records.iter().map(|r| r.total).collect();
                quarter_ratio(&totals)
            })
            .collect()
    };
    let scarce = ratios(4);
    let plenty = ratios(200);
    let stalls = scarce.iter().filter(|&&r| r >= 0.8).count();
    let converged = plenty.iter().filter(|&&r| r < 0.3).count();
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(" ");
    outcome(
        stalls >= 1 && converged == plenty.len(),
        format!(
            "final/first quarter loss, 4 labels: [{}] ({stalls} >= 0.8, need 1); 200 labels: [{}] ({converged}/5 < 0.3, need 5)",
            fmt(&scarce),
            fmt(&plenty)
        ),
    )
}

fn disjoint_criterion() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.kind = DatasetKind::Shapes;
    cfg.dataset.n = 600;
    cfg.dataset.size = 10;
    cfg.dataset.classes = 4;
    cfg.split.overlap_mode = OverlapMode::DisjointClasses;
    cfg.split.n_labeled = 40;
    cfg.hp.batch_size = 16;
    cfg.hp.mu = 4;
    let steps = 30;
    let (ds, split) = match prepare_data(&cfg) {
        Ok(v) => v,
        Err(e) => return outcome(false, format!("split failed: {e}")),
    };
    let mut problems = Vec::new();
    if split.labeled_classes != [0, 1] || split.unlabeled_classes != [2, 3] {
        problems.push("class pools are not {0,1} / {2,3}".to_string());
    }
    if split.unlabeled.iter().any(|&i| ds.labels()[i] < 2) {
        problems.push("unlabeled pool contains a labeled-pool class".to_string());
    }
    let mut trainer = build_trainer(&cfg, &ds, &split, steps).unwrap();
    for step in 0..steps {
        let (record, details) = match trainer.step() {
            Ok(v) => v,
            Err(e) => return outcome(false, format!("step {step} failed: {e}")),
        };
        let mut present = details.labels.clone();
        present.sort_unstable();
        present.dedup();
        if details.similarity.len() != 2 || details.reference_classes != present {
            problems.push(format!("step {step}: references {:?} vs batch classes {present:?}", details.reference_classes));
        }
        for s in &details.similarity {
            let ok = s.shape() == [cfg.hp.unlabeled_batch_size(), present.len()]
                && s.data().iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v));
            if !ok {
                problems.push(format!("step {step}: malformed similarity {:?}", s.shape()));
            }
        }
        if !record.total.is_finite() {
            problems.push(format!("step {step}: non-finite loss"));
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{steps} steps, labeled classes {{0,1}}, unlabeled {{2,3}}, every SimilarityRep is [{} x K] with K = classes in the labeled batch", cfg.hp.unlabeled_batch_size())
        } else {
            problems.join("; ")
        },
    )
}

fn defaults_criterion() -> Outcome {
    let cfg = ExperimentConfig::parse("").unwrap();
    let hp = &cfg.hp;
    let checks = [
        ("B", hp.batch_size as f64, 64.0),
        ("mu", hp.mu as f64, 7.0),
        ("tau", hp.tau, 0.95),
        ("m", hp.margin, 0.5),
        ("T", hp.temperature, 0.2),
        ("psi", hp.psi, 0.5),
        ("phi", hp.phi, 0.3),
        ("lambda_u", hp.lambda_u, 1.0),
        ("lambda_r", hp.lambda_r, 1.0),
        ("lambda_s", hp.lambda_s, 1.0),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|c| c.1 != c.2)
        .map(|c| format!("{}={} (want {})", c.0, c.1, c.2))
        .collect();
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            "B=64 mu=7 tau=0.95 m=0.5 T=0.2 psi=0.5 phi=0.3 lambda_u=lambda_r=lambda_s=1".to_string()
        } else {
            bad.join(", ")
        },
    )
}

fn determinism_criterion() -> Outcome {
    let mut cfg = ssl_benefit_config();
    cfg.train.epochs = 10;
    cfg.seed = 17;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, Some(a.path())).unwrap();
    run_experiment(&cfg, Some(b.path())).unwrap();
    let x = std::fs::read(a.path().join(METRICS_FILE)).unwrap();
    let y = std::fs::read(b.path().join(METRICS_FILE)).unwrap();
    outcome(
        x == y && !x.is_empty(),
        format!("two runs, {} bytes of metrics each, identical: {}", x.len(), x == y),
    )
}

fn robustness_criterion() -> Outcome {
    let mut accs = Vec::new();
    for psi in [0.1, 0.3, 0.5] {
        for phi in [0.3, 0.5, 1.0] {
            let mut cfg = ssl_benefit_config();
            cfg.hp.psi = psi;
            cfg.hp.phi = phi;
            let err = run_experiment(&cfg, None).unwrap().summary.final_test_error;
            accs.push((psi, phi, 100.0 * (1.0 - err)));
        }
    }
    let hi = accs.iter().map(|a| a.2).fold(f64::MIN, f64::max);
    let lo = accs.iter().map(|a| a.2).fold(f64::MAX, f64::min);
    let cells: Vec<String> = accs.iter().map(|(p, f, a)| format!("({p},{f})={a:.1}")).collect();
    outcome(
        hi - lo <= 5.0,
        format!("accuracy spread {:.2} points (max 5) [{}]", hi - lo, cells.join(" ")),
    )
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "gradient suite", gradient_criterion),
        (2, "oracle suite", oracle_criterion),
        (3, "closed-form spot values", spot_values_criterion),
        (4, "reduction and ablation identities", reduction_criterion),
        (5, "SSL benefit on two-moons", ssl_benefit_criterion),
        (6, "scarce-label degradation", scarce_label_criterion),
        (7, "non-overlapping classes", disjoint_criterion),
        (8, "hyperparameter defaults", defaults_criterion),
        (9, "determinism", determinism_criterion),
        (10, "psi/phi robustness", robustness_criterion),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} criterion {id:>2} {name}: {} [{:.1}s]",
            o.detail,
            t.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
