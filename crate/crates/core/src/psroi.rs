//! Position-sensitive RoI pooling.
//!
//! An RoI is divided into `k x k` bins. Bin `(i, j)` of output `o` reads only
//! channel `o * k^2 + i * k + j`, averaging `samples_per_bin^2` bilinear
//! samples placed uniformly inside the bin; the output is the mean over all
//! bins. The score branch has one output per class (background is class 0,
//! face is class 1) and the regression branch has four outputs
//! `(dx, dy, dw, dh)` shared by all classes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Delta};
use crate::tensor::FeatureMap;

pub const BACKGROUND: usize = 0;
pub const FACE: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub k: usize,
    pub classes: usize,
    pub samples_per_bin: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self { k: 7, classes: 2, samples_per_bin: 2 }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("pool k must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig("pool needs at least 2 classes".into()));
        }
        if self.samples_per_bin == 0 {
            return Err(Error::InvalidConfig("samples_per_bin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.k * self.k
    }

    pub fn outputs(&self, branch: Branch) -> usize {
        match branch {
            Branch::Score => self.classes,
            Branch::Regress => 4,
        }
    }

    pub fn channels(&self, branch: Branch) -> usize {
        self.outputs(branch) * self.bins()
    }

    /// Channel read by bin `(row, col)` for output `o`.
    #[inline]
    pub fn channel(&self, o: usize, row: usize, col: usize) -> usize {
        o * self.bins() + row * self.k + col
    }

    /// Offset of the bin-`j` center from the RoI center, as a fraction of the
    /// RoI side: `(j + 1/2) / k - 1/2`.
    pub fn bin_offset(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.k as f64 - 0.5
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Score,
    Regress,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PooledResult {
    /// Average-pooled response per class, before normalization.
    pub class_scores: Vec<f64>,
    pub delta: Delta,
}

impl PooledResult {
    /// Softmax probability of the face class.
    pub fn face_probability(&self) -> f64 {
        softmax(&self.class_scores)[FACE]
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check(map: &FeatureMap, roi: &BBox, cfg: &PoolConfig, branch: Branch) -> Result<()> {
    cfg.validate()?;
    let expected = cfg.channels(branch);
    if map.channels() != expected {
        return Err(Error::ChannelMismatch { expected, actual: map.channels() });
    }
    if !(roi.is_finite() && roi.width() > 0.0 && roi.height() > 0.0) {
        return Err(Error::DegenerateRoi(roi.to_array()));
    }
    Ok(())
}

/// Visits every sample point of every bin as `(row, col, x, y)` in feature
/// coordinates.
#[inline]
fn for_each_sample(map: &FeatureMap, roi: &BBox, cfg: &PoolConfig, mut f: impl FnMut(usize, usize, f64, f64)) {
    let inv = 1.0 / map.stride();
    let (fx1, fy1) = (roi.x1 * inv, roi.y1 * inv);
    let k = cfg.k as f64;
    let bin_w = (roi.x2 * inv - fx1) / k;
    let bin_h = (roi.y2 * inv - fy1) / k;
    let s = cfg.samples_per_bin;
    let step = 1.0 / s as f64;
    for i in 0..cfg.k {
        for sy in 0..s {
            let y = fy1 + (i as f64 + (sy as f64 + 0.5) * step) * bin_h;
            for j in 0..cfg.k {
                for sx in 0..s {
                    let x = fx1 + (j as f64 + (sx as f64 + 0.5) * step) * bin_w;
                    f(i, j, x, y);
                }
            }
        }
    }
}

/// Pools one branch for one RoI given in image coordinates.
///
/// Returns one value per output: class scores for [`Branch::Score`],
/// `[dx, dy, dw, dh]` for [`Branch::Regress`].
pub fn psroi_pool(map: &FeatureMap, roi: &BBox, cfg: &PoolConfig, branch: Branch) -> Result<Vec<f64>> {
    check(map, roi, cfg, branch)?;
    Ok(pool_unchecked(map, roi, cfg, branch))
}

/// Bilinear neighbours of one sample coordinate along one axis.
#[derive(Clone, Copy)]
struct AxisTaps {
    idx: [usize; 2],
    weight: [f64; 2],
    n: usize,
}

impl AxisTaps {
    /// Same zero-padding and zero-weight rules as [`FeatureMap::taps`].
    #[inline]
    fn new(coord: f64, len: usize) -> Self {
        let mut out = Self { idx: [0; 2], weight: [0.0; 2], n: 0 };
        let c0 = coord.floor();
        let f = coord - c0;
        let ci = c0 as i64;
        for (d, w) in [(0i64, 1.0 - f), (1, f)] {
            let i = ci + d;
            if w == 0.0 || i < 0 || i >= len as i64 {
                continue;
            }
            out.idx[out.n] = i as usize;
            out.weight[out.n] = w;
            out.n += 1;
        }
        out
    }
}

/// The sample lattice of one RoI is separable: row taps depend only on
/// `(i, sy)` and column taps only on `(j, sx)`.
struct SampleGrid {
    rows: Vec<AxisTaps>,
    cols: Vec<AxisTaps>,
}

impl SampleGrid {
    fn new(map: &FeatureMap, roi: &BBox, cfg: &PoolConfig) -> Self {
        let inv = 1.0 / map.stride();
        let (fx1, fy1) = (roi.x1 * inv, roi.y1 * inv);
        let k = cfg.k as f64;
        let bin_w = (roi.x2 * inv - fx1) / k;
        let bin_h = (roi.y2 * inv - fy1) / k;
        let s = cfg.samples_per_bin;
        let step = 1.0 / s as f64;
        let axis = |start: f64, bin: f64, len: usize| -> Vec<AxisTaps> {
            (0..cfg.k)
                .flat_map(|b| (0..s).map(move |q| (b, q)))
                .map(|(b, q)| AxisTaps::new(start + (b as f64 + (q as f64 + 0.5) * step) * bin, len))
                .collect()
        };
        Self { rows: axis(fy1, bin_h, map.height()), cols: axis(fx1, bin_w, map.width()) }
    }
}

fn pool_grid(map: &FeatureMap, grid: &SampleGrid, cfg: &PoolConfig, branch: Branch) -> Vec<f64> {
    let mut acc = vec![0.0; cfg.outputs(branch)];
    let (width, channels, data) = (map.width(), map.channels(), map.data());
    let s = cfg.samples_per_bin;
    for i in 0..cfg.k {
        for ry in &grid.rows[i * s..(i + 1) * s] {
            for j in 0..cfg.k {
                for cx in &grid.cols[j * s..(j + 1) * s] {
                    for (o, slot) in acc.iter_mut().enumerate() {
                        let ch = cfg.channel(o, i, j);
                        let mut v = 0.0;
                        for a in 0..ry.n {
                            let row = ry.idx[a] * width;
                            for b in 0..cx.n {
                                v += ry.weight[a] * cx.weight[b] * data[(row + cx.idx[b]) * channels + ch];
                            }
                        }
                        *slot += v;
                    }
                }
            }
        }
    }
    let norm = 1.0 / (cfg.bins() * s * s) as f64;
    acc.iter_mut().for_each(|v| *v *= norm);
    acc
}

fn pool_unchecked(map: &FeatureMap, roi: &BBox, cfg: &PoolConfig, branch: Branch) -> Vec<f64> {
    pool_grid(map, &SampleGrid::new(map, roi, cfg), cfg, branch)
}

/// Gradient of `sum_o upstream[o] * psroi_pool(map, roi)[o]` with respect to
/// every map value.
pub fn psroi_pool_grad(
    map: &FeatureMap,
    roi: &BBox,
    cfg: &PoolConfig,
    branch: Branch,
    upstream: &[f64],
) -> Result<FeatureMap> {
    let mut grad = FeatureMap::zeros(map.height(), map.width(), map.channels(), map.stride())?;
    accumulate_grad(map, roi, cfg, branch, upstream, grad.data_mut())?;
    Ok(grad)
}

/// Adds the pooling gradient for one RoI into `grad`, which must have the
/// map's layout. Use this to sum gradients over many RoIs.
pub fn accumulate_grad(
    map: &FeatureMap,
    roi: &BBox,
    cfg: &PoolConfig,
    branch: Branch,
    upstream: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    check(map, roi, cfg, branch)?;
    let outputs = cfg.outputs(branch);
    if upstream.len() != outputs {
        return Err(Error::InvalidConfig(format!(
            "upstream has {} values, branch has {outputs} outputs",
            upstream.len()
        )));
    }
    if grad.len() != map.data().len() {
        return Err(Error::InvalidMap("gradient buffer does not match map layout".into()));
    }
    let norm = 1.0 / (cfg.bins() * cfg.samples_per_bin * cfg.samples_per_bin) as f64;
    let scaled: Vec<f64> = upstream.iter().map(|u| u * norm).collect();
    for_each_sample(map, roi, cfg, |i, j, x, y| {
        let (taps, n) = map.taps(x, y);
        for (o, u) in scaled.iter().enumerate() {
            if *u == 0.0 {
                continue;
            }
            let ch = cfg.channel(o, i, j);
            for t in &taps[..n] {
                grad[t.cell + ch] += t.weight * u;
            }
        }
    });
    Ok(())
}

/// Pools both branches for every RoI, in input order.
pub fn batch_pool(
    score_map: &FeatureMap,
    regress_map: &FeatureMap,
    rois: &[BBox],
    cfg: &PoolConfig,
) -> Result<Vec<PooledResult>> {
    cfg.validate()?;
    if score_map.stride() != regress_map.stride() {
        return Err(Error::StrideMismatch { score: score_map.stride(), regress: regress_map.stride() });
    }
    for (map, branch) in [(score_map, Branch::Score), (regress_map, Branch::Regress)] {
        let expected = cfg.channels(branch);
        if map.channels() != expected {
            return Err(Error::ChannelMismatch { expected, actual: map.channels() });
        }
    }
    let same_grid = (score_map.height(), score_map.width()) == (regress_map.height(), regress_map.width());
    rois.par_iter()
        .with_min_len(256)
        .map(|roi| {
            check(score_map, roi, cfg, Branch::Score)?;
            let grid = SampleGrid::new(score_map, roi, cfg);
            let class_scores = pool_grid(score_map, &grid, cfg, Branch::Score);
            let d = if same_grid {
                pool_grid(regress_map, &grid, cfg, Branch::Regress)
            } else {
                pool_unchecked(regress_map, roi, cfg, Branch::Regress)
            };
            Ok(PooledResult { class_scores, delta: Delta::new(d[0], d[1], d[2], d[3]) })
        })
        .collect()
}
