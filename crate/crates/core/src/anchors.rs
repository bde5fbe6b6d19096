//! Floating anchor placement.
//!
//! Every (scale, ratio) pair gets its own square lattice whose pitch depends
//! only on the scale: `max(c, s / d)`. Large anchors are therefore placed
//! sparsely, small ones at the minimum stride `c`. Because anchors are pooled
//! rather than tied to feature cells, the same enumerator serves a uniform
//! stride chosen at inference time and verbatim ground-truth boxes at
//! fractional coordinates.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clip, BBox};

pub const DEFAULT_MIN_STRIDE: f64 = 16.0;
pub const DEFAULT_STRIDE_DIVISOR: f64 = 5.0;

/// Anchors narrower or shorter than this after clipping are dropped.
pub const MIN_ANCHOR_SIDE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Anchor side lengths (square root of the area), in pixels.
    pub scales: Vec<f64>,
    /// Aspect ratios as height / width.
    pub ratios: Vec<f64>,
    /// Minimum lattice pitch `c`.
    pub min_stride: f64,
    /// Pitch divisor `d`.
    pub stride_divisor: f64,
    pub image_width: f64,
    pub image_height: f64,
}

impl AnchorConfig {
    /// Square anchors at scales 16..512, the face-detection setting.
    pub fn faces(image_width: f64, image_height: f64) -> Self {
        Self {
            scales: vec![16.0, 32.0, 64.0, 128.0, 256.0, 512.0],
            ratios: vec![1.0],
            min_stride: DEFAULT_MIN_STRIDE,
            stride_divisor: DEFAULT_STRIDE_DIVISOR,
            image_width,
            image_height,
        }
    }

    /// Five scales (32..512) by three aspect ratios (0.5, 1, 2), the
    /// generic-proposal setting used for count benchmarks.
    pub fn five_scale(image_width: f64, image_height: f64) -> Self {
        Self {
            scales: vec![32.0, 64.0, 128.0, 256.0, 512.0],
            ratios: vec![0.5, 1.0, 2.0],
            ..Self::faces(image_width, image_height)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if let Some(s) = self.scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return bad(format!("anchor scale must be positive, got {s}"));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return bad(format!("aspect ratio must be positive, got {r}"));
        }
        if !(self.min_stride.is_finite() && self.min_stride > 0.0) {
            return bad(format!("min_stride must be positive, got {}", self.min_stride));
        }
        if !(self.stride_divisor.is_finite() && self.stride_divisor > 0.0) {
            return bad(format!("stride_divisor must be positive, got {}", self.stride_divisor));
        }
        if !(self.image_width >= 1.0 && self.image_height >= 1.0) {
            return bad(format!("image must be at least 1x1 pixel, got {}x{}", self.image_width, self.image_height));
        }
        Ok(())
    }
}

/// Where an anchor came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Grid { scale_idx: usize, ratio_idx: usize, row: usize, col: usize },
    GroundTruth { gt_idx: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub bbox: BBox,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnchorSet {
    pub anchors: Vec<Anchor>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn boxes(&self) -> impl ExactSizeIterator<Item = &BBox> + '_ {
        self.anchors.iter().map(|a| &a.bbox)
    }

    pub fn to_boxes(&self) -> Vec<BBox> {
        self.boxes().copied().collect()
    }

    /// Wraps arbitrary boxes as an anchor set with ground-truth provenance.
    pub fn from_boxes(boxes: &[BBox]) -> Self {
        Self {
            anchors: boxes
                .iter()
                .enumerate()
                .map(|(gt_idx, b)| Anchor { bbox: *b, provenance: Provenance::GroundTruth { gt_idx } })
                .collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self { anchors: indices.iter().map(|&i| self.anchors[i]).collect() }
    }

    /// CSV with header `x1,y1,x2,y2,scale_idx,ratio_idx`. Ground-truth anchors
    /// carry `-1` in both index columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1,y1,x2,y2,scale_idx,ratio_idx\n");
        for a in &self.anchors {
            let (s, r) = match a.provenance {
                Provenance::Grid { scale_idx, ratio_idx, .. } => (scale_idx as i64, ratio_idx as i64),
                Provenance::GroundTruth { .. } => (-1, -1),
            };
            let b = a.bbox;
            let _ = writeln!(out, "{},{},{},{},{},{}", b.x1, b.y1, b.x2, b.y2, s, r);
        }
        out
    }
}

/// Lattice pitch for an anchor of side `s`: `max(c, s / d)`.
pub fn scale_stride(s: f64, c: f64, d: f64) -> f64 {
    c.max(s / d)
}

/// Lattice centers `pitch/2 + n * pitch` strictly inside `[0, extent)`.
fn lattice(extent: f64, pitch: f64) -> impl Iterator<Item = f64> {
    (0..).map(move |n| pitch / 2.0 + n as f64 * pitch).take_while(move |c| *c < extent)
}

fn enumerate(config: &AnchorConfig, pitch_for: impl Fn(f64) -> f64 + Sync) -> Result<AnchorSet> {
    config.validate()?;
    let (iw, ih) = (config.image_width, config.image_height);
    let pairs: Vec<(usize, usize)> =
        (0..config.scales.len()).flat_map(|s| (0..config.ratios.len()).map(move |r| (s, r))).collect();
    let chunks: Vec<Vec<Anchor>> = pairs
        .par_iter()
        .map(|&(scale_idx, ratio_idx)| {
            let s = config.scales[scale_idx];
            let ratio = config.ratios[ratio_idx];
            let pitch = pitch_for(s);
            let w = s / ratio.sqrt();
            let h = s * ratio.sqrt();
            let mut out = Vec::new();
            for (row, cy) in lattice(ih, pitch).enumerate() {
                for (col, cx) in lattice(iw, pitch).enumerate() {
                    let b = clip(&BBox::from_center(cx, cy, w, h), iw, ih);
                    if b.has_min_side(MIN_ANCHOR_SIDE) {
                        out.push(Anchor { bbox: b, provenance: Provenance::Grid { scale_idx, ratio_idx, row, col } });
                    }
                }
            }
            out
        })
        .collect();
    Ok(AnchorSet { anchors: chunks.into_iter().flatten().collect() })
}

/// Places anchors with the scale-dependent pitch `max(c, s / d)`.
///
/// Ordering is scale-major, then ratio, then row-major over the lattice.
pub fn place(config: &AnchorConfig) -> Result<AnchorSet> {
    let (c, d) = (config.min_stride, config.stride_divisor);
    enumerate(config, move |s| scale_stride(s, c, d))
}

/// Places anchors with the same `uniform_stride` for every scale.
pub fn place_dense(config: &AnchorConfig, uniform_stride: f64) -> Result<AnchorSet> {
    if !(uniform_stride.is_finite() && uniform_stride > 0.0) {
        return Err(Error::InvalidConfig(format!("uniform stride must be positive, got {uniform_stride}")));
    }
    enumerate(config, move |_| uniform_stride)
}

/// Appends each ground-truth box verbatim, keeping fractional coordinates.
pub fn augment_with_ground_truth(set: &AnchorSet, gts: &[BBox]) -> AnchorSet {
    let mut out = set.clone();
    out.anchors.extend(
        gts.iter().enumerate().map(|(gt_idx, b)| Anchor { bbox: *b, provenance: Provenance::GroundTruth { gt_idx } }),
    );
    out
}
