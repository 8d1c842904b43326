use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, SampleKind};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Two interleaving half circles in the plane.
///
/// Class 0 lies on the upper unit half circle, class 1 on the lower one
/// shifted to `(1, 0.5)`. Angles are evenly spaced; isotropic Gaussian noise
/// of std `noise` is added and the sample order is shuffled.
pub fn make_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::config("dataset.n", "two moons needs at least 2 samples"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::config("dataset.noise", format!("must be >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_upper = n.div_ceil(2);
    let n_lower = n - n_upper;
    let angle = |i: usize, count: usize| {
        if count <= 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (count - 1) as f64
        }
    };
    let mut points: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    for i in 0..n_upper {
        let t = angle(i, n_upper);
        points.push(([t.cos(), t.sin()], 0));
    }
    for i in 0..n_lower {
        let t = angle(i, n_lower);
        points.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).expect("valid std");
        for (p, _) in points.iter_mut() {
            p[0] += normal.sample(&mut rng);
            p[1] += normal.sample(&mut rng);
        }
    }
    points.shuffle(&mut rng);
    let data = points.iter().flat_map(|(p, _)| *p).collect();
    let labels = points.iter().map(|&(_, l)| l).collect();
    Dataset::new(
        Tensor::new(vec![n, 2], data)?,
        labels,
        2,
        SampleKind::Vector { dim: 2 },
    )
}

/// Glyph family drawn for each class of [`make_shapes`], in class order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Glyph {
    HorizontalBar,
    VerticalBar,
    Cross,
    Box,
    Disk,
    Diagonal,
    AntiDiagonal,
    Ring,
}

impl Glyph {
    pub const ALL: [Glyph; 8] = [
        Glyph::HorizontalBar,
        Glyph::VerticalBar,
        Glyph::Cross,
        Glyph::Box,
        Glyph::Disk,
        Glyph::Diagonal,
        Glyph::AntiDiagonal,
        Glyph::Ring,
    ];

    /// Whether pixel `(r, c)` is inked for a glyph of half-extent `s` centred at `(cy, cx)`.
    fn covers(self, r: f64, c: f64, cy: f64, cx: f64, s: f64) -> bool {
        let (dy, dx) = (r - cy, c - cx);
        let inside = dy.abs() <= s && dx.abs() <= s;
        match self {
            Glyph::HorizontalBar => dy.abs() <= 0.75 && dx.abs() <= s,
            Glyph::VerticalBar => dx.abs() <= 0.75 && dy.abs() <= s,
            Glyph::Cross => inside && (dy.abs() <= 0.75 || dx.abs() <= 0.75),
            Glyph::Box => inside && (dy.abs() >= s - 0.75 || dx.abs() >= s - 0.75),
            Glyph::Disk => dy * dy + dx * dx <= s * s * 0.8,
            Glyph::Diagonal => inside && (dy - dx).abs() <= 0.75,
            Glyph::AntiDiagonal => inside && (dy + dx).abs() <= 0.75,
            Glyph::Ring => {
                let rr = (dy * dy + dx * dx).sqrt();
                rr <= s && rr >= s - 1.25
            }
        }
    }
}

/// Grayscale `size × size` images of one glyph family per class, with random
/// position, extent and intensity plus faint pixel noise; values in `[0, 1]`.
pub fn make_shapes(n: usize, size: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if size < 8 {
        return Err(Error::config("dataset.size", format!("must be >= 8, got {size}")));
    }
    if !(2..=8).contains(&classes) {
        return Err(Error::config(
            "dataset.classes",
            format!("must lie in [2, 8], got {classes}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid std");
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    let sz = size as f64;
    for i in 0..n {
        let class = i % classes;
        let glyph = Glyph::ALL[class];
        let half = rng.random_range(0.22 * sz..0.34 * sz);
        let margin = half + 0.5;
        let cy = rng.random_range(margin..sz - 1.0 - margin).max(margin);
        let cx = rng.random_range(margin..sz - 1.0 - margin).max(margin);
        let intensity = rng.random_range(0.6..1.0);
        for r in 0..size {
            for c in 0..size {
                let base = if glyph.covers(r as f64, c as f64, cy, cx, half) {
                    intensity
                } else {
                    0.0
                };
                let v: f64 = base + noise.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    // Shuffle sample order so class is not a function of index.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let pixels = size * size;
    let mut shuffled = Vec::with_capacity(data.len());
    for &o in &order {
        shuffled.extend_from_slice(&data[o * pixels..(o + 1) * pixels]);
    }
    let labels = order.iter().map(|&o| labels[o]).collect();
    Dataset::new(
        Tensor::new(vec![n, size, size], shuffled)?,
        labels,
        classes,
        SampleKind::Image {
            height: size,
            width: size,
        },
    )
}
