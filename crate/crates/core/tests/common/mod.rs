//! Straight-line reference implementations and random instance generators
//! shared by the integration test targets.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rerankmatch::autodiff::Tensor;

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

pub fn tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

pub fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn norm(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x * x;
    }
    s.sqrt()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s.sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

pub fn softplus_ref(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

/// BatchMean triplet over L2-normalised rows, anchor included in its positives.
pub fn batchmean_oracle(rows: &[Vec<f64>], labels: &[usize], margin: f64) -> f64 {
    let n = rows.len();
    let x: Vec<Vec<f64>> = rows.iter().map(|r| unit(r)).collect();
    let mut total = 0.0;
    for a in 0..n {
        let mut pos = 0.0;
        let mut neg = 0.0;
        for j in 0..n {
            let d = dist(&x[a], &x[j]);
            if labels[j] == labels[a] {
                pos += d;
            } else {
                neg += d;
            }
        }
        total += softplus_ref(margin + (pos - neg) / n as f64);
    }
    total / n as f64
}

/// Contrastive ranking over ordered same-label pairs, written as the ratio form.
pub fn contrastive_oracle(rows: &[Vec<f64>], labels: &[usize], temperature: f64) -> f64 {
    let n = rows.len();
    let x: Vec<Vec<f64>> = rows.iter().map(|r| unit(r)).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..n {
        for p in 0..n {
            if a == p || labels[a] != labels[p] {
                continue;
            }
            pairs += 1;
            let num = (dot(&x[a], &x[p]) / temperature).exp();
            let mut den = num;
            for k in 0..n {
                if labels[k] != labels[a] {
                    den += (dot(&x[a], &x[k]) / temperature).exp();
                }
            }
            total += -(num / den).ln();
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

pub fn similarity_oracle(reps: &[Vec<f64>], refs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    reps.iter()
        .map(|f| {
            refs.iter()
                .map(|r| (dot(f, r) / (norm(f) * norm(r))).clamp(-1.0, 1.0))
                .collect()
        })
        .collect()
}

pub fn pair_label_oracle(scores: &[Vec<f64>], psi: f64) -> Vec<Vec<bool>> {
    let n = scores.len();
    let mut t = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            t[i][j] = dist(&scores[i], &scores[j]) < psi;
        }
    }
    t
}

fn stream_oracle(reps: &[Vec<f64>], t: &[Vec<bool>], phi: f64) -> f64 {
    let n = reps.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(&reps[i], &reps[j]);
            let same = if t[i][j] { 1.0 } else { 0.0 };
            total += same * d + (1.0 - same) * (phi - d).max(0.0);
            pairs += 1;
        }
    }
    total / pairs as f64
}

pub fn featcont_oracle(
    weak: &[Vec<f64>],
    strong: &[Vec<f64>],
    t_weak: &[Vec<bool>],
    t_strong: &[Vec<bool>],
    phi: f64,
) -> f64 {
    stream_oracle(weak, t_weak, phi) + stream_oracle(strong, t_strong, phi)
}

pub fn ce_oracle(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let mut z = 0.0;
        for v in row {
            z += v.exp();
        }
        total += -(row[y].exp() / z).ln();
    }
    total / logits.len() as f64
}

pub mod suites {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rerankmatch::autodiff::{check_gradient, Graph, Tensor, Var};
    use rerankmatch::losses::{
        assign_pair_labels, batchmean_triplet, combined_ce, contrastive_rank,
        feature_contrastive_batch, one_hot, pseudo_labels, ranking_loss, similarity_representation,
        supervised_ce, unlabeled_ce, Hyperparams, NormalizedLogitsBatch, PairLabelMatrix,
        PseudoLabelResult, RankKind, ReferenceSet,
    };
    use rerankmatch::trainer::total_loss;

    use super::*;

    /// Largest relative deviation between the graph losses and the nested-loop
    /// oracles, per loss, over `instances` random instances with n in 2..=8.
    pub fn oracle_suite(seed: u64, instances: usize) -> Vec<(&'static str, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = [0.0f64; 5];
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        for _ in 0..instances {
            let n = rng.random_range(2..=8);
            let c = rng.random_range(2..=5);
            let rows = random_rows(&mut rng, n, c);
            let labels = random_labels(&mut rng, n, c);
            let margin = rng.random_range(0.1..1.0);
            let temp = rng.random_range(0.1..1.0);

            let mut g = Graph::new();
            let x = g.leaf(tensor(&rows));
            let batch = NormalizedLogitsBatch::from_logits(&mut g, x, labels.clone()).unwrap();
            let bm = batchmean_triplet(&mut g, &batch, margin).unwrap().value;
            let ct = contrastive_rank(&mut g, &batch, temp).unwrap().value;
            worst[0] = worst[0].max(rel(g.value(bm).item(), batchmean_oracle(&rows, &labels, margin)));
            worst[1] = worst[1].max(rel(g.value(ct).item(), contrastive_oracle(&rows, &labels, temp)));

            let d = rng.random_range(2..=6);
            let k = rng.random_range(1..=4);
            let weak = random_rows(&mut rng, n, d);
            let strong = random_rows(&mut rng, n, d);
            let refs = random_rows(&mut rng, k, d);
            let reference_set = ReferenceSet {
                reps: tensor(&refs),
                class_ids: (0..k).collect(),
                source_rows: (0..k).collect(),
            };
            let w = g.leaf(tensor(&weak));
            let s = g.leaf(tensor(&strong));
            let sim = similarity_representation(&mut g, w, &reference_set).unwrap();
            let sim_rows = rows_of(g.value(sim.scores));
            let sim_ref = similarity_oracle(&weak, &refs);
            for (a, b) in sim_rows.iter().flatten().zip(sim_ref.iter().flatten()) {
                worst[2] = worst[2].max(rel(*a, *b));
            }

            let psi = rng.random_range(0.1..1.5);
            let t = assign_pair_labels(g.value(sim.scores), psi).unwrap();
            let t_ref = pair_label_oracle(&sim_ref, psi);
            for i in 0..n {
                for j in 0..n {
                    if t.get(i, j) != t_ref[i][j] {
                        worst[3] = f64::INFINITY;
                    }
                }
            }

            let phi = rng.random_range(0.1..3.0);
            let tw = random_pairs(&mut rng, n);
            let ts = random_pairs(&mut rng, n);
            let fc = feature_contrastive_batch(&mut g, w, s, &tw, &ts, phi).unwrap().value;
            let oracle = featcont_oracle(&weak, &strong, &dense(&tw), &dense(&ts), phi);
            worst[4] = worst[4].max(rel(g.value(fc).item(), oracle));
        }
        vec![
            ("batchmean_triplet", worst[0]),
            ("contrastive_rank", worst[1]),
            ("similarity_representation", worst[2]),
            ("assign_pair_labels", worst[3]),
            ("feature_contrastive_batch", worst[4]),
        ]
    }

    pub fn random_pairs(rng: &mut ChaCha8Rng, n: usize) -> PairLabelMatrix {
        let coin: Vec<bool> = (0..n * n).map(|_| rng.random_bool(0.5)).collect();
        PairLabelMatrix::from_fn(n, |i, j| i == j || coin[i.min(j) * n + i.max(j)])
    }

    pub fn dense(t: &PairLabelMatrix) -> Vec<Vec<bool>> {
        (0..t.len()).map(|i| (0..t.len()).map(|j| t.get(i, j)).collect()).collect()
    }

    const STEP: f64 = 1e-6;

    /// Pairwise distances of all rows stay clear of `phi` and of zero, so the
    /// hinge and norm kinks are out of finite-difference reach.
    fn clear_of_kinks(rows: &[Vec<f64>], phi: f64) -> bool {
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if d < 1e-2 || (d - phi).abs() < 1e-2 {
                    return false;
                }
            }
        }
        true
    }

    fn draw_clear(rng: &mut ChaCha8Rng, n: usize, d: usize, phi: f64) -> Vec<Vec<f64>> {
        loop {
            let rows = random_rows(rng, n, d);
            if clear_of_kinks(&rows, phi) {
                return rows;
            }
        }
    }

    /// Pseudo-labels with a mask that keeps some rows and drops others.
    fn mixed_pseudo_labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> PseudoLabelResult {
        let mut weak = random_rows(rng, n, c);
        for (i, row) in weak.iter_mut().enumerate() {
            if i % 2 == 0 {
                row[i % c] += 8.0;
            }
        }
        pseudo_labels(&tensor(&weak), 0.9)
    }

    /// Worst relative gradient error per loss over `points` random points.
    pub fn gradient_suite(seed: u64, points: usize) -> Vec<(&'static str, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hp = Hyperparams::default();
        let mut worst = [0.0f64; 6];
        for _ in 0..points {
            let n = rng.random_range(3..=6);
            let c = rng.random_range(2..=4);
            let labels = random_labels(&mut rng, n, c);
            let targets = one_hot(&labels, c);
            let x = tensor(&random_rows(&mut rng, n, c));

            worst[0] = worst[0].max(
                check_gradient(|g: &mut Graph, v: Var| supervised_ce(g, v, &targets), &x, STEP).unwrap(),
            );

            let pl = mixed_pseudo_labels(&mut rng, n, c);
            worst[1] = worst[1].max(
                check_gradient(|g: &mut Graph, v: Var| unlabeled_ce(g, v, &pl), &x, STEP).unwrap(),
            );

            let bm = |g: &mut Graph, v: Var| {
                let b = NormalizedLogitsBatch::from_logits(g, v, labels.clone())?;
                Ok(batchmean_triplet(g, &b, hp.margin)?.value)
            };
            worst[2] = worst[2].max(check_gradient(bm, &x, STEP).unwrap());

            let ct = |g: &mut Graph, v: Var| {
                let b = NormalizedLogitsBatch::from_logits(g, v, labels.clone())?;
                Ok(contrastive_rank(g, &b, hp.temperature)?.value)
            };
            worst[3] = worst[3].max(check_gradient(ct, &x, STEP).unwrap());

            let d = rng.random_range(2..=5);
            let reps = tensor(&draw_clear(&mut rng, n, d, hp.phi));
            let strong = g_const(&draw_clear(&mut rng, n, d, hp.phi));
            let tw = random_pairs(&mut rng, n);
            let ts = random_pairs(&mut rng, n);
            let fc = |g: &mut Graph, v: Var| {
                let s = g.constant(strong.clone());
                Ok(feature_contrastive_batch(g, v, s, &tw, &ts, hp.phi)?.value)
            };
            worst[4] = worst[4].max(check_gradient(fc, &reps, STEP).unwrap());

            worst[5] = worst[5].max(composed_point(&mut rng, &hp));
        }
        vec![
            ("supervised_ce", worst[0]),
            ("unlabeled_ce", worst[1]),
            ("batchmean_triplet", worst[2]),
            ("contrastive_rank", worst[3]),
            ("feature_contrastive_batch", worst[4]),
            ("total_objective", worst[5]),
        ]
    }

    fn g_const(rows: &[Vec<f64>]) -> Tensor {
        tensor(rows)
    }

    /// Gradient of the full objective with respect to a linear map `W` that
    /// produces both representations and logits from fixed inputs. Pseudo-labels
    /// and pair labels are decisions taken at the base point and held fixed.
    fn composed_point(rng: &mut ChaCha8Rng, hp: &Hyperparams) -> f64 {
        let (nx, nu, d_in, c) = (4, 5, 3, 3);
        loop {
            let xin = tensor(&random_rows(rng, nx, d_in));
            let uw = tensor(&random_rows(rng, nu, d_in));
            let us = tensor(&random_rows(rng, nu, d_in));
            let labels = random_labels(rng, nx, c);
            let w0 = tensor(&random_rows(rng, d_in, c));
            let kind = if rng.random_bool(0.5) { RankKind::BatchMean } else { RankKind::Contrastive };

            let weak_logits = uw.matmul(&w0).unwrap();
            let strong_reps = us.matmul(&w0).unwrap();
            if !clear_of_kinks(&rows_of(&weak_logits), hp.phi) || !clear_of_kinks(&rows_of(&strong_reps), hp.phi) {
                continue;
            }
            let pl = pseudo_labels(&weak_logits, 0.5);
            let tw = random_pairs(rng, nu);
            let ts = random_pairs(rng, nu);
            let targets = one_hot(&labels, c);
            let f = |g: &mut Graph, w: Var| {
                let xv = g.constant(xin.clone());
                let uwv = g.constant(uw.clone());
                let usv = g.constant(us.clone());
                let lx = g.matmul(xv, w)?;
                let lw = g.matmul(uwv, w)?;
                let ls = g.matmul(usv, w)?;
                let ce_x = supervised_ce(g, lx, &targets)?;
                let ce_u = unlabeled_ce(g, ls, &pl)?;
                let ce = combined_ce(g, ce_x, ce_u, hp.lambda_u)?;
                let lab = NormalizedLogitsBatch::from_logits(g, lx, labels.clone())?;
                let rows = pl.confident_rows();
                let picked = g.gather_rows(ls, &rows)?;
                let unl = NormalizedLogitsBatch::from_logits(g, picked, rows.iter().map(|&r| pl.q_hat[r]).collect())?;
                let rank = ranking_loss(g, kind, &lab, &unl, hp)?.value;
                let fc = feature_contrastive_batch(g, lw, ls, &tw, &ts, hp.phi)?.value;
                total_loss(g, ce, rank, fc, hp)
            };
            return check_gradient(f, &w0, STEP).unwrap();
        }
    }
}
