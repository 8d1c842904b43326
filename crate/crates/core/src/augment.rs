//! Weak and strong stochastic views.
//!
//! Weak: pad-and-crop shift plus horizontal flip for images, additive Gaussian
//! noise for vectors. Strong: the weak view, then a multiplicative intensity
//! jitter and a cutout patch filled with the dataset mean.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{Dataset, SampleKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentKind {
    Weak,
    Strong,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub kind: AugmentKind,
    pub noise_sigma: f64,
    pub shift_max: usize,
    pub flip_prob: f64,
    pub cutout_frac: f64,
    pub jitter_scale: f64,
}

impl AugmentPolicy {
    pub fn identity(kind: AugmentKind) -> Self {
        Self {
            kind,
            noise_sigma: 0.0,
            shift_max: 0,
            flip_prob: 0.0,
            cutout_frac: 0.0,
            jitter_scale: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(key, format!("must lie in [0, 1], got {v}")))
            }
        };
        unit("augment.flip_prob", self.flip_prob)?;
        unit("augment.cutout_frac", self.cutout_frac)?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("augment.noise_sigma", "must be >= 0"));
        }
        if !(self.jitter_scale >= 0.0 && self.jitter_scale.is_finite()) {
            return Err(Error::config("augment.jitter_scale", "must be >= 0"));
        }
        if self.kind == AugmentKind::Weak && (self.cutout_frac != 0.0 || self.jitter_scale != 0.0) {
            return Err(Error::config(
                "augment.weak",
                "weak policy cannot use cutout or jitter",
            ));
        }
        Ok(())
    }
}

/// Augmentation knobs as they appear in the experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub shift_max: usize,
    pub flip_prob: f64,
    /// Vector noise std as a multiple of the mean feature std.
    pub noise_rel: f64,
    pub jitter_scale: f64,
    pub cutout_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            shift_max: 2,
            flip_prob: 0.5,
            noise_rel: 0.05,
            jitter_scale: 0.3,
            cutout_frac: 0.25,
        }
    }
}

/// Weak and strong policies bound to one dataset's layout and statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmenter {
    pub weak: AugmentPolicy,
    pub strong: AugmentPolicy,
    kind: SampleKind,
    /// Cutout fill value per feature.
    fill: Vec<f64>,
    value_range: Option<(f64, f64)>,
}

/// Mirrors an `h × w` row-major image left to right.
pub fn hflip(image: &mut [f64], width: usize) {
    for row in image.chunks_mut(width) {
        row.reverse();
    }
}

fn shift_image(image: &[f64], height: usize, width: usize, dy: isize, dx: isize) -> Vec<f64> {
    let mut out = vec![0.0; image.len()];
    for r in 0..height {
        let sr = r as isize + dy;
        if sr < 0 || sr >= height as isize {
            continue;
        }
        for c in 0..width {
            let sc = c as isize + dx;
            if sc < 0 || sc >= width as isize {
                continue;
            }
            out[r * width + c] = image[sr as usize * width + sc as usize];
        }
    }
    out
}

impl Augmenter {
    pub fn new(
        weak: AugmentPolicy,
        strong: AugmentPolicy,
        kind: SampleKind,
        fill: Vec<f64>,
        value_range: Option<(f64, f64)>,
    ) -> Result<Self> {
        weak.validate()?;
        strong.validate()?;
        if fill.len() != kind.feature_dim() {
            return Err(Error::shape(
                "augmenter",
                format!("fill has {} values for {} features", fill.len(), kind.feature_dim()),
            ));
        }
        Ok(Self {
            weak,
            strong,
            kind,
            fill,
            value_range,
        })
    }

    /// Builds both policies from config knobs and statistics of `ds` over `rows`.
    ///
    /// Images use a scalar pixel-mean fill and the `[0, 1]` range; vectors use
    /// per-feature means and noise scaled by the mean feature std.
    pub fn for_dataset(cfg: &AugmentConfig, ds: &Dataset, rows: &[usize]) -> Result<Self> {
        let kind = ds.kind();
        let means = ds.feature_means(rows);
        let (fill, range, noise_sigma) = match kind {
            SampleKind::Image { .. } => {
                let m = means.iter().sum::<f64>() / means.len().max(1) as f64;
                (vec![m; means.len()], Some((0.0, 1.0)), 0.0)
            }
            SampleKind::Vector { .. } => {
                let stds = ds.feature_stds(rows);
                let mean_std = stds.iter().sum::<f64>() / stds.len().max(1) as f64;
                (means, None, cfg.noise_rel * mean_std)
            }
        };
        let weak = AugmentPolicy {
            kind: AugmentKind::Weak,
            noise_sigma,
            shift_max: cfg.shift_max,
            flip_prob: cfg.flip_prob,
            cutout_frac: 0.0,
            jitter_scale: 0.0,
        };
        let strong = AugmentPolicy {
            kind: AugmentKind::Strong,
            cutout_frac: cfg.cutout_frac,
            jitter_scale: cfg.jitter_scale,
            ..weak.clone()
        };
        Self::new(weak, strong, kind, fill, range)
    }

    fn apply_weak<R: Rng + ?Sized>(&self, policy: &AugmentPolicy, x: &[f64], rng: &mut R) -> Vec<f64> {
        match self.kind {
            SampleKind::Image { height, width } => {
                let mut out = if policy.shift_max > 0 {
                    let s = policy.shift_max as i64;
                    let dy = rng.random_range(-s..=s) as isize;
                    let dx = rng.random_range(-s..=s) as isize;
                    shift_image(x, height, width, dy, dx)
                } else {
                    x.to_vec()
                };
                if policy.flip_prob > 0.0 && rng.random_bool(policy.flip_prob) {
                    hflip(&mut out, width);
                }
                out
            }
            SampleKind::Vector { .. } => {
                let mut out = x.to_vec();
                if policy.noise_sigma > 0.0 {
                    let normal = Normal::new(0.0, policy.noise_sigma).expect("valid std");
                    for v in out.iter_mut() {
                        *v += normal.sample(rng);
                    }
                }
                out
            }
        }
    }

    pub fn weak_augment<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        self.apply_weak(&self.weak, x, rng)
    }

    pub fn strong_augment<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let p = &self.strong;
        let mut out = self.apply_weak(p, x, rng);
        if p.jitter_scale > 0.0 {
            let factor = 1.0 + rng.random_range(-p.jitter_scale..=p.jitter_scale);
            for v in out.iter_mut() {
                *v *= factor;
                if let Some((lo, hi)) = self.value_range {
                    *v = v.clamp(lo, hi);
                }
            }
        }
        if p.cutout_frac > 0.0 {
            match self.kind {
                SampleKind::Image { height, width } => {
                    let side = p.cutout_frac.sqrt();
                    let sh = ((side * height as f64).round() as usize).min(height);
                    let sw = ((side * width as f64).round() as usize).min(width);
                    let top = rng.random_range(0..=height - sh);
                    let left = rng.random_range(0..=width - sw);
                    for r in top..top + sh {
                        for c in left..left + sw {
                            out[r * width + c] = self.fill[r * width + c];
                        }
                    }
                }
                SampleKind::Vector { dim } => {
                    let len = ((p.cutout_frac * dim as f64).floor() as usize).min(dim);
                    if len > 0 {
                        let start = rng.random_range(0..=dim - len);
                        out[start..start + len].copy_from_slice(&self.fill[start..start + len]);
                    }
                }
            }
        }
        out
    }

    /// Augments the rows `indices` of `ds` into a flat `[n × d]` batch.
    pub fn batch<R: Rng + ?Sized>(
        &self,
        ds: &Dataset,
        indices: &[usize],
        kind: AugmentKind,
        rng: &mut R,
    ) -> Tensor {
        let d = ds.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            let x = ds.sample(i);
            let v = match kind {
                AugmentKind::Weak => self.weak_augment(x, rng),
                AugmentKind::Strong => self.strong_augment(x, rng),
            };
            data.extend(v);
        }
        Tensor::new(vec![indices.len(), d], data).expect("batch shape")
    }
}
