//! Training-side label assignment, minibatch sampling, RoI capping and
//! scale-range filtering.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignConfig {
    /// Anchors with max IoU strictly above this are positive.
    pub pos_iou: f64,
    /// Anchors with max IoU strictly below this are negative.
    pub neg_iou: f64,
    pub max_pos: usize,
    pub max_neg: usize,
    pub hard_neg: usize,
    pub hard_neg_min_iou: f64,
    /// When true, hard negatives are part of the `max_neg` budget; otherwise
    /// they are drawn on top of it.
    pub hard_neg_within_budget: bool,
    pub roi_cap: usize,
    /// Max IoU at which `cap_rois` treats an anchor as near a ground truth.
    pub cap_priority_iou: f64,
    pub rng_seed: u64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            pos_iou: 0.5,
            neg_iou: 0.4,
            max_pos: 128,
            max_neg: 128,
            hard_neg: 32,
            hard_neg_min_iou: 0.1,
            hard_neg_within_budget: true,
            roi_cap: 50_000,
            cap_priority_iou: 0.1,
            rng_seed: 0,
        }
    }
}

impl AssignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.neg_iou && self.neg_iou <= self.pos_iou && self.pos_iou <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= neg_iou <= pos_iou <= 1, got neg={} pos={}",
                self.neg_iou, self.pos_iou
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Positive { gt: usize },
    Negative,
    Ignored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    pub labels: Vec<Label>,
    pub max_iou: Vec<f64>,
}

impl LabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> Vec<usize> {
        self.indices(|l| matches!(l, Label::Positive { .. }))
    }

    pub fn negatives(&self) -> Vec<usize> {
        self.indices(|l| *l == Label::Negative)
    }

    fn indices(&self, f: impl Fn(&Label) -> bool) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, l)| f(l)).map(|(i, _)| i).collect()
    }
}

/// Best IoU of `anchor` over `gts` and the first gt attaining it.
fn best_match(anchor: &BBox, gts: &[BBox]) -> (f64, Option<usize>) {
    let mut best = (0.0, None);
    for (g, gt) in gts.iter().enumerate() {
        let o = iou(anchor, gt);
        if best.1.is_none() || o > best.0 {
            best = (o, Some(g));
        }
    }
    best
}

/// Per-anchor max IoU against `gts` (0 when there are none).
pub fn max_ious(anchors: &[BBox], gts: &[BBox]) -> Vec<f64> {
    anchors.par_iter().with_min_len(1024).map(|a| best_match(a, gts).0).collect()
}

/// Labels every anchor positive, negative or ignored.
pub fn assign(anchors: &AnchorSet, gts: &[BBox], cfg: &AssignConfig) -> Result<LabelSet> {
    cfg.validate()?;
    let (labels, max_iou) = anchors
        .anchors
        .par_iter()
        .with_min_len(1024)
        .map(|a| {
            let (o, g) = best_match(&a.bbox, gts);
            let label = match g {
                Some(gt) if o > cfg.pos_iou => Label::Positive { gt },
                _ if o < cfg.neg_iou => Label::Negative,
                _ => Label::Ignored,
            };
            (label, o)
        })
        .unzip();
    Ok(LabelSet { labels, max_iou })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sample {
    pub positives: Vec<usize>,
    /// All sampled negatives, hard ones included.
    pub negatives: Vec<usize>,
    /// The hard-negative subset of `negatives`.
    pub hard_negatives: Vec<usize>,
}

fn choose(pool: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if pool.len() <= n {
        return pool.to_vec();
    }
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

/// Draws a training minibatch of anchor indices, deterministic in
/// `cfg.rng_seed`.
pub fn sample(labels: &LabelSet, cfg: &AssignConfig) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let positives = choose(&labels.positives(), cfg.max_pos, &mut rng);
    let negatives_all = labels.negatives();
    let hard_pool: Vec<usize> = negatives_all
        .iter()
        .copied()
        .filter(|&i| labels.max_iou[i] >= cfg.hard_neg_min_iou && labels.max_iou[i] < cfg.neg_iou)
        .collect();
    let hard_quota = if cfg.hard_neg_within_budget { cfg.hard_neg.min(cfg.max_neg) } else { cfg.hard_neg };
    let hard_negatives = choose(&hard_pool, hard_quota, &mut rng);
    let easy_budget = if cfg.hard_neg_within_budget { cfg.max_neg - hard_negatives.len() } else { cfg.max_neg };
    let rest: Vec<usize> = negatives_all.into_iter().filter(|i| hard_negatives.binary_search(i).is_err()).collect();
    let mut negatives = choose(&rest, easy_budget, &mut rng);
    negatives.extend_from_slice(&hard_negatives);
    negatives.sort_unstable();
    Sample { positives, negatives, hard_negatives }
}

/// Indices kept by [`cap_rois`], in ascending order.
pub fn cap_roi_indices(anchors: &AnchorSet, gts: &[BBox], cfg: &AssignConfig) -> Vec<usize> {
    let n = anchors.len();
    if n <= cfg.roi_cap {
        return (0..n).collect();
    }
    let ious = max_ious(&anchors.to_boxes(), gts);
    let (mut near, far): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| ious[i] >= cfg.cap_priority_iou);
    let mut kept = if near.len() >= cfg.roi_cap {
        near.sort_by(|&a, &b| ious[b].total_cmp(&ious[a]).then(a.cmp(&b)));
        near.truncate(cfg.roi_cap);
        near
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let fill = choose(&far, cfg.roi_cap - near.len(), &mut rng);
        near.extend(fill);
        near
    };
    kept.sort_unstable();
    kept
}

/// Limits the RoIs of one image to `cfg.roi_cap`, keeping anchors that
/// overlap a ground truth by at least `cfg.cap_priority_iou` first and
/// filling the remainder by seeded uniform sampling.
pub fn cap_rois(anchors: &AnchorSet, gts: &[BBox], cfg: &AssignConfig) -> AnchorSet {
    anchors.subset(&cap_roi_indices(anchors, gts, cfg))
}

/// Half-open interval `[min_side, max_side)` of valid box sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRange {
    pub min_side: f64,
    /// `None` means unbounded.
    pub max_side: Option<f64>,
}

impl ScaleRange {
    pub fn new(min_side: f64, max_side: Option<f64>) -> Result<Self> {
        let r = Self { min_side, max_side };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.min_side >= 0.0 && self.max_side.is_none_or(|m| m > self.min_side);
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "scale range needs 0 <= min < max, got [{}, {:?})",
                self.min_side, self.max_side
            )));
        }
        Ok(())
    }

    pub fn contains(&self, side: f64) -> bool {
        side >= self.min_side && self.max_side.is_none_or(|m| side < m)
    }
}

/// Valid-for-training mask: `sqrt(area)` must fall in `range`. Invalid boxes
/// stay in place and are only excluded from the loss.
pub fn snip_filter(boxes: &[BBox], range: &ScaleRange) -> Vec<bool> {
    boxes.iter().map(|b| range.contains(b.side_scale())).collect()
}
