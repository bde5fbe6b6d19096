//! Synthetic scenes and feature maps with a known answer.
//!
//! Score channels carry a bin indicator: face channel `(i, j)` is 1 on every
//! cell that a bilinear sample inside bin `(i, j)` of some ground truth can
//! touch, so a RoI equal to a ground truth pools exactly 1 on the face class
//! and 0 on background. Regression channels carry linear fields whose pooled
//! value moves any nearby RoI toward the ground truth that owns the region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::psroi::{Branch, PoolConfig, BACKGROUND, FACE};
use crate::tensor::FeatureMap;

const NOISE_STREAM: u64 = 0x5eed_f00d;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub image_width: f64,
    pub image_height: f64,
    pub gts: Vec<BBox>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_width: f64,
    pub image_height: f64,
    pub min_boxes: usize,
    pub max_boxes: usize,
    pub min_side: f64,
    pub max_side: f64,
    pub iou_ceiling: f64,
    /// Rejections allowed per box before giving up.
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_width: 1024.0,
            image_height: 1024.0,
            min_boxes: 10,
            max_boxes: 50,
            min_side: 16.0,
            max_side: 512.0,
            iou_ceiling: 0.3,
            max_attempts: 10_000,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let fits = self.max_side <= self.image_width.min(self.image_height);
        if !(self.min_side >= 1.0 && self.min_side <= self.max_side && fits) {
            return Err(Error::InvalidConfig(format!(
                "side range [{}, {}] must be within 1..={}",
                self.min_side,
                self.max_side,
                self.image_width.min(self.image_height)
            )));
        }
        if self.min_boxes > self.max_boxes {
            return Err(Error::InvalidConfig("min_boxes exceeds max_boxes".into()));
        }
        if !(0.0..=1.0).contains(&self.iou_ceiling) {
            return Err(Error::InvalidConfig(format!("iou_ceiling must be in [0, 1], got {}", self.iou_ceiling)));
        }
        Ok(())
    }
}

/// Places between `min_boxes` and `max_boxes` square boxes with log-uniform
/// sides, rejecting any candidate whose IoU with an earlier box exceeds the
/// ceiling.
pub fn synth_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(cfg.min_boxes..=cfg.max_boxes);
    let (lo, hi) = (cfg.min_side.ln(), cfg.max_side.ln());
    let mut gts: Vec<BBox> = Vec::with_capacity(n);
    while gts.len() < n {
        let mut attempts = 0;
        let placed = loop {
            if attempts == cfg.max_attempts {
                break None;
            }
            attempts += 1;
            let side = if hi > lo { rng.random_range(lo..hi).exp() } else { cfg.min_side };
            let x = rng.random_range(0.0..=cfg.image_width - side);
            let y = rng.random_range(0.0..=cfg.image_height - side);
            let b = BBox::from_xywh(x, y, side, side);
            if gts.iter().all(|g| iou(g, &b) <= cfg.iou_ceiling) {
                break Some(b);
            }
        };
        match placed {
            Some(b) => gts.push(b),
            None => return Err(Error::PlacementInfeasible { placed: gts.len(), requested: n }),
        }
    }
    Ok(Scene { image_width: cfg.image_width, image_height: cfg.image_height, gts, seed })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub stride: f64,
    pub noise_sd: f64,
    /// Reach of a bin's regression field around the bin center, as a
    /// fraction of the box side ...
    pub influence: f64,
    /// ... plus this many pixels.
    pub influence_pad: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { stride: 4.0, noise_sd: 0.0, influence: 0.35, influence_pad: 8.0 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stride.is_finite() && self.stride > 0.0) {
            return Err(Error::InvalidConfig(format!("stride must be positive, got {}", self.stride)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if !(self.influence >= 0.0 && self.influence_pad >= 0.0 && self.influence + self.influence_pad > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "influence reach must be positive, got {} * side + {}",
                self.influence, self.influence_pad
            )));
        }
        Ok(())
    }
}

/// Grid size that keeps every bilinear tap of an in-image sample on the map.
pub fn grid_size(extent: f64, stride: f64) -> usize {
    (extent / stride).floor() as usize + 2
}

/// Cell index range `[lo, hi)` within `[a - 1, b + 1]` (feature units).
fn dilated(a: f64, b: f64, n: usize) -> (usize, usize) {
    let lo = (a - 1.0).ceil().max(0.0) as usize;
    let hi = ((b + 1.0).floor() + 1.0).clamp(0.0, n as f64) as usize;
    (lo.min(hi), hi)
}

/// Builds the score and regression maps for `scene`.
pub fn synth_features(scene: &Scene, pool: &PoolConfig, cfg: &FeatureConfig) -> Result<(FeatureMap, FeatureMap)> {
    pool.validate()?;
    cfg.validate()?;
    let s = cfg.stride;
    let (h, w) = (grid_size(scene.image_height, s), grid_size(scene.image_width, s));
    let k = pool.k;
    let bins = pool.bins();

    let mut score = FeatureMap::zeros(h, w, pool.channels(Branch::Score), s)?;
    let sc = score.channels();
    let face = score.data_mut();
    for gt in &scene.gts {
        let (fx1, fy1) = (gt.x1 / s, gt.y1 / s);
        let (bw, bh) = (gt.width() / s / k as f64, gt.height() / s / k as f64);
        for i in 0..k {
            let (r0, r1) = dilated(fy1 + i as f64 * bh, fy1 + (i + 1) as f64 * bh, h);
            for j in 0..k {
                let (c0, c1) = dilated(fx1 + j as f64 * bw, fx1 + (j + 1) as f64 * bw, w);
                let ch = pool.channel(FACE, i, j);
                for r in r0..r1 {
                    for c in c0..c1 {
                        face[(r * w + c) * sc + ch] = 1.0;
                    }
                }
            }
        }
    }
    for cell in face.chunks_exact_mut(sc) {
        for b in 0..bins {
            cell[BACKGROUND * bins + b] = 1.0 - cell[FACE * bins + b];
        }
    }

    let mut regress = FeatureMap::zeros(h, w, pool.channels(Branch::Regress), s)?;
    paint_regression(&mut regress, &scene.gts, pool, cfg);
    if cfg.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ NOISE_STREAM);
        let normal = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for v in score.data_mut().iter_mut().chain(regress.data_mut().iter_mut()) {
            *v += normal.sample(&mut rng);
        }
    }
    Ok((score, regress))
}

/// Fills the regression channels. Channel group `(i, j)` at a cell belongs to
/// the ground truth whose bin-`(i, j)` center is nearest in Chebyshev
/// distance, among those within reach (`influence * side + influence_pad`);
/// ties go to the lower index. The owner contributes `dx = (gcx - px) / gw`,
/// `dy = (gcy - py) / gh` and size terms linear in the cell position, so that
/// a RoI of width `w` pooled around the box reads `dw = 1 - w / gw` (and
/// likewise `dh`).
fn paint_regression(map: &mut FeatureMap, gts: &[BBox], pool: &PoolConfig, cfg: &FeatureConfig) {
    let (h, w, s) = (map.height(), map.width(), map.stride());
    let (k, bins) = (pool.k, pool.bins());
    let ch = map.channels();
    let offsets: Vec<f64> = (0..k).map(|j| pool.bin_offset(j)).collect();
    let m2 = offsets.iter().map(|t| t * t).sum::<f64>() / k as f64;
    let mut best = vec![f64::INFINITY; h * w * bins];
    let data = map.data_mut();
    let (mut ax, mut ay) = (vec![0.0; k], vec![0.0; k]);
    for gt in gts {
        let (gw, gh, gcx, gcy) = (gt.width(), gt.height(), gt.center_x(), gt.center_y());
        let reach = cfg.influence * gw.max(gh) + cfg.influence_pad;
        let span = |c: f64, side: f64, n: usize| {
            let half = (0.5 - 0.5 / k as f64) * side + reach;
            let lo = ((c - half) / s).ceil().max(0.0) as usize;
            let hi = (((c + half) / s).floor() + 1.0).clamp(0.0, n as f64) as usize;
            lo.min(hi)..hi
        };
        for r in span(gcy, gh, h) {
            let py = r as f64 * s;
            let uy = (py - gcy) / gh;
            for (a, t) in ay.iter_mut().zip(&offsets) {
                *a = (py - (gcy + t * gh)).abs();
            }
            for c in span(gcx, gw, w) {
                let px = c as f64 * s;
                let ux = (px - gcx) / gw;
                for (a, t) in ax.iter_mut().zip(&offsets) {
                    *a = (px - (gcx + t * gw)).abs();
                }
                let cell = r * w + c;
                let out = &mut data[cell * ch..][..ch];
                for i in 0..k {
                    for j in 0..k {
                        let b = i * k + j;
                        let d = ax[j].max(ay[i]);
                        let slot = &mut best[cell * bins + b];
                        if d > reach || d >= *slot {
                            continue;
                        }
                        *slot = d;
                        out[b] = -ux;
                        out[bins + b] = -uy;
                        if m2 > 0.0 {
                            out[2 * bins + b] = 1.0 - ux * offsets[j] / m2;
                            out[3 * bins + b] = 1.0 - uy * offsets[i] / m2;
                        }
                    }
                }
            }
        }
    }
}
