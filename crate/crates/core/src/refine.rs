//! Proposal scoring and iterative refinement.
//!
//! Anchors are pooled on both branches, scored by the softmax face
//! probability, and the best `top_k` are moved by their pooled offsets and
//! pooled again from the same feature maps. Each round re-ranks the
//! proposals on features taken from the refined boxes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::anchors::{place, AnchorConfig, AnchorSet, MIN_ANCHOR_SIDE};
use crate::error::{Error, Result};
use crate::geometry::{clip, decode, BBox, Delta};
use crate::psroi::{batch_pool, PoolConfig};
use crate::tensor::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BBox,
    /// Face probability in `[0, 1]`.
    pub score: f64,
    /// Refinement round that produced the box; 0 for raw anchors.
    pub iteration: u32,
}

/// A proposal together with the offsets pooled for it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub proposal: Proposal,
    pub delta: Delta,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub iterations: usize,
    pub top_k: usize,
    pub output_n: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { iterations: 1, top_k: 20_000, output_n: 1_000 }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.output_n == 0 || self.top_k < self.output_n {
            return Err(Error::InvalidConfig(format!(
                "need top_k >= output_n >= 1, got top_k={} output_n={}",
                self.top_k, self.output_n
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

impl ImageSize {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }
}

/// Pools every anchor and scores it. Output follows anchor order, iteration 0.
pub fn score_all(
    score_map: &FeatureMap,
    regress_map: &FeatureMap,
    anchors: &[BBox],
    pool_cfg: &PoolConfig,
) -> Result<Vec<Scored>> {
    score_boxes(score_map, regress_map, anchors, pool_cfg, 0)
}

fn score_boxes(
    score_map: &FeatureMap,
    regress_map: &FeatureMap,
    boxes: &[BBox],
    pool_cfg: &PoolConfig,
    iteration: u32,
) -> Result<Vec<Scored>> {
    let pooled = batch_pool(score_map, regress_map, boxes, pool_cfg)?;
    Ok(boxes
        .iter()
        .zip(pooled)
        .map(|(b, p)| Scored {
            proposal: Proposal { bbox: *b, score: p.face_probability(), iteration },
            delta: p.delta,
        })
        .collect())
}

/// Indices of the `n` best proposals, by descending score with ties kept in
/// input order.
pub fn top_indices(proposals: &[Scored], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| proposals[b].proposal.score.total_cmp(&proposals[a].proposal.score));
    order.truncate(n);
    order
}

/// One refinement round: keep the best `cfg.top_k`, apply their offsets,
/// clip, drop degenerate boxes, then pool and score again.
pub fn refine_step(
    score_map: &FeatureMap,
    regress_map: &FeatureMap,
    proposals: &[Scored],
    image: ImageSize,
    cfg: &RefineConfig,
    pool_cfg: &PoolConfig,
) -> Result<Vec<Scored>> {
    let iteration = proposals.iter().map(|p| p.proposal.iteration).max().unwrap_or(0) + 1;
    let boxes: Vec<BBox> = top_indices(proposals, cfg.top_k)
        .into_iter()
        .filter_map(|i| {
            let p = &proposals[i];
            let moved = decode(&p.proposal.bbox, &p.delta).ok()?;
            let b = clip(&moved, image.width, image.height);
            b.has_min_side(MIN_ANCHOR_SIDE).then_some(b)
        })
        .collect();
    score_boxes(score_map, regress_map, &boxes, pool_cfg, iteration)
}

/// Scores `anchors`, runs `cfg.iterations` refinement rounds, and returns the
/// best `cfg.output_n` proposals by descending score.
pub fn propose_from_anchors(
    score_map: &FeatureMap,
    regress_map: &FeatureMap,
    anchors: &AnchorSet,
    image: ImageSize,
    cfg: &RefineConfig,
    pool_cfg: &PoolConfig,
) -> Result<Vec<Proposal>> {
    cfg.validate()?;
    let mut current = score_all(score_map, regress_map, &anchors.to_boxes(), pool_cfg)?;
    for _ in 0..cfg.iterations {
        current = refine_step(score_map, regress_map, &current, image, cfg, pool_cfg)?;
    }
    Ok(top_indices(&current, cfg.output_n).into_iter().map(|i| current[i].proposal).collect())
}

/// Full pipeline: place anchors, score, refine, rank.
pub fn propose(
    score_map: &FeatureMap,
    regress_map: &FeatureMap,
    anchor_cfg: &AnchorConfig,
    cfg: &RefineConfig,
    pool_cfg: &PoolConfig,
) -> Result<Vec<Proposal>> {
    let anchors = place(anchor_cfg)?;
    let image = ImageSize::new(anchor_cfg.image_width, anchor_cfg.image_height);
    propose_from_anchors(score_map, regress_map, &anchors, image, cfg, pool_cfg)
}

pub const PROPOSAL_CSV_HEADER: &str = "x1,y1,x2,y2,score,iteration";

/// CSV with header `x1,y1,x2,y2,score,iteration`.
pub fn proposals_to_csv(proposals: &[Proposal]) -> String {
    let mut out = format!("{PROPOSAL_CSV_HEADER}\n");
    for p in proposals {
        let b = p.bbox;
        let _ = writeln!(out, "{},{},{},{},{},{}", b.x1, b.y1, b.x2, b.y2, p.score, p.iteration);
    }
    out
}

pub fn proposals_from_csv(text: &str) -> Result<Vec<Proposal>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line == PROPOSAL_CSV_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::parse(line_no, format!("expected 6 columns, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].trim().parse::<f64>().map_err(|e| Error::parse(line_no, format!("column {}: {e}", i + 1)))
        };
        let iteration =
            fields[5].trim().parse::<u32>().map_err(|e| Error::parse(line_no, format!("iteration: {e}")))?;
        out.push(Proposal { bbox: BBox::new(num(0)?, num(1)?, num(2)?, num(3)?), score: num(4)?, iteration });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn maps(
        score: impl Fn(usize, usize, usize) -> f64,
        regress: impl Fn(usize, usize, usize) -> f64,
    ) -> (FeatureMap, FeatureMap) {
        let cfg = PoolConfig::default();
        (
            FeatureMap::from_fn(16, 16, cfg.channels(crate::psroi::Branch::Score), 16.0, score).unwrap(),
            FeatureMap::from_fn(16, 16, cfg.channels(crate::psroi::Branch::Regress), 16.0, regress).unwrap(),
        )
    }

    fn small_anchor_cfg() -> AnchorConfig {
        AnchorConfig { scales: vec![32.0, 64.0], ..AnchorConfig::faces(256.0, 256.0) }
    }

    #[test]
    fn empty_anchors() {
        let (s, r) = maps(|_, _, _| 0.0, |_, _, _| 0.0);
        assert!(score_all(&s, &r, &[], &PoolConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn constant_score_map_gives_half() {
        let (s, r) = maps(|_, _, _| 0.8, |_, _, _| 0.0);
        let anchors = place(&small_anchor_cfg()).unwrap().to_boxes();
        for p in score_all(&s, &r, &anchors, &PoolConfig::default()).unwrap() {
            assert!((p.proposal.score - 0.5).abs() < 1e-12);
            assert_eq!(p.proposal.iteration, 0);
        }
    }

    #[test]
    fn zero_deltas_change_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise: Vec<f64> = (0..16 * 16 * 98).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (s, r) = maps(|row, col, ch| noise[(row * 16 + col) * 98 + ch], |_, _, _| 0.0);
        let pool = PoolConfig::default();
        let anchors = place(&small_anchor_cfg()).unwrap().to_boxes();
        let before = score_all(&s, &r, &anchors, &pool).unwrap();
        let cfg = RefineConfig { iterations: 1, top_k: 10_000, output_n: 10 };
        let after = refine_step(&s, &r, &before, ImageSize::new(256.0, 256.0), &cfg, &pool).unwrap();
        assert_eq!(after.len(), before.len());
        let order = top_indices(&before, cfg.top_k);
        for (a, &i) in after.iter().zip(&order) {
            assert_eq!(a.proposal.bbox, before[i].proposal.bbox);
            assert_eq!(a.proposal.score, before[i].proposal.score);
            assert_eq!(a.proposal.iteration, 1);
        }
    }

    #[test]
    fn top_k_limits_refined_set() {
        let (s, r) = maps(|_, _, _| 0.0, |_, _, _| 0.0);
        let pool = PoolConfig::default();
        let anchors = place(&small_anchor_cfg()).unwrap().to_boxes();
        let before = score_all(&s, &r, &anchors, &pool).unwrap();
        let cfg = RefineConfig { iterations: 1, top_k: 7, output_n: 5 };
        let after = refine_step(&s, &r, &before, ImageSize::new(256.0, 256.0), &cfg, &pool).unwrap();
        assert_eq!(after.len(), 7);
    }

    #[test]
    fn propose_output_is_sorted_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sn: Vec<f64> = (0..16 * 16 * 98).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rn: Vec<f64> = (0..16 * 16 * 196).map(|_| rng.random_range(-0.2..0.2)).collect();
        let (s, r) = maps(|a, b, c| sn[(a * 16 + b) * 98 + c], |a, b, c| rn[(a * 16 + b) * 196 + c]);
        let acfg = small_anchor_cfg();
        let cfg = RefineConfig { iterations: 2, top_k: 200, output_n: 50 };
        let out = propose(&s, &r, &acfg, &cfg, &PoolConfig::default()).unwrap();
        assert_eq!(out.len(), 50);
        for w in out.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for p in &out {
            assert!(p.bbox.x1 >= 0.0 && p.bbox.y1 >= 0.0 && p.bbox.x2 <= 256.0 && p.bbox.y2 <= 256.0);
            assert!(p.bbox.has_min_side(1.0));
            assert_eq!(p.iteration, 2);
        }
        let again = propose(&s, &r, &acfg, &cfg, &PoolConfig::default()).unwrap();
        assert_eq!(out, again);
        let short = propose(&s, &r, &acfg, &RefineConfig { output_n: 20, ..cfg }, &PoolConfig::default()).unwrap();
        assert_eq!(short[..], out[..20]);
    }

    #[test]
    fn invalid_refine_config() {
        let (s, r) = maps(|_, _, _| 0.0, |_, _, _| 0.0);
        let cfg = RefineConfig { iterations: 0, top_k: 5, output_n: 10 };
        assert!(propose(&s, &r, &small_anchor_cfg(), &cfg, &PoolConfig::default()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ps = vec![
            Proposal { bbox: BBox::new(0.1, 2.0, 30.25, 40.0), score: 0.123456789012345, iteration: 1 },
            Proposal { bbox: BBox::new(1.0, 1.0, 2.0, 2.0), score: 1.0, iteration: 0 },
        ];
        let csv = proposals_to_csv(&ps);
        assert!(csv.starts_with("x1,y1,x2,y2,score,iteration\n"));
        assert_eq!(proposals_from_csv(&csv).unwrap(), ps);
        assert!(matches!(
            proposals_from_csv("x1,y1,x2,y2,score,iteration\n1,2,3\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
