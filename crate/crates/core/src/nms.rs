//! Gaussian Soft-NMS and classic greedy NMS.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::refine::Proposal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmsMode {
    Soft,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub sigma: f64,
    pub score_floor: f64,
    pub hard_iou: f64,
    pub mode: NmsMode,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self { sigma: 0.35, score_floor: 0.001, hard_iou: 0.5, mode: NmsMode::Soft }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("nms sigma must be positive, got {}", self.sigma)));
        }
        if self.score_floor.is_nan() || self.score_floor < 0.0 {
            return Err(Error::InvalidConfig(format!("score_floor must be >= 0, got {}", self.score_floor)));
        }
        if !(0.0..=1.0).contains(&self.hard_iou) {
            return Err(Error::InvalidConfig(format!("hard_iou must be in [0, 1], got {}", self.hard_iou)));
        }
        Ok(())
    }
}

/// Runs the suppression selected by `cfg.mode`.
pub fn suppress(proposals: &[Proposal], cfg: &NmsConfig) -> Vec<Proposal> {
    match cfg.mode {
        NmsMode::Soft => soft_nms(proposals, cfg),
        NmsMode::Hard => hard_nms(proposals, cfg),
    }
}

/// Gaussian Soft-NMS.
///
/// Repeatedly emits the highest-scoring remaining proposal (lowest input
/// index on ties) and multiplies every other remaining score by
/// `exp(-iou^2 / sigma)`. Proposals whose score falls below
/// `cfg.score_floor` are discarded. Output is in selection order with the
/// rescored values.
pub fn soft_nms(proposals: &[Proposal], cfg: &NmsConfig) -> Vec<Proposal> {
    let mut live: Vec<(usize, f64)> =
        proposals.iter().enumerate().filter(|(_, p)| p.score >= cfg.score_floor).map(|(i, p)| (i, p.score)).collect();
    let mut out = Vec::with_capacity(live.len());
    while !live.is_empty() {
        let mut best = 0;
        for (pos, &(idx, score)) in live.iter().enumerate().skip(1) {
            let (bidx, bscore) = live[best];
            if score > bscore || (score == bscore && idx < bidx) {
                best = pos;
            }
        }
        let (idx, score) = live.swap_remove(best);
        let top = proposals[idx].bbox;
        out.push(Proposal { score, ..proposals[idx] });
        live.retain_mut(|(i, s)| {
            let o = iou(&top, &proposals[*i].bbox);
            *s *= (-(o * o) / cfg.sigma).exp();
            *s >= cfg.score_floor
        });
    }
    out
}

/// Greedy NMS: keeps a proposal unless it overlaps an already kept one with
/// IoU strictly above `cfg.hard_iou`. Output is sorted by score, ties by
/// input index.
pub fn hard_nms(proposals: &[Proposal], cfg: &NmsConfig) -> Vec<Proposal> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| proposals[b].score.total_cmp(&proposals[a].score).then(a.cmp(&b)));
    let mut kept: Vec<Proposal> = Vec::new();
    for i in order {
        let p = proposals[i];
        if kept.iter().all(|k| iou(&k.bbox, &p.bbox) <= cfg.hard_iou) {
            kept.push(p);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prop(b: [f64; 4], score: f64) -> Proposal {
        Proposal { bbox: BBox::from(b), score, iteration: 0 }
    }

    fn random_props(rng: &mut ChaCha8Rng, n: usize) -> Vec<Proposal> {
        (0..n)
            .map(|_| {
                let x = rng.random_range(0.0..100.0);
                let y = rng.random_range(0.0..100.0);
                let w = rng.random_range(5.0..40.0);
                let h = rng.random_range(5.0..40.0);
                prop([x, y, x + w, y + h], rng.random_range(0.0..1.0))
            })
            .collect()
    }

    /// O(n^2) reference: sorts the survivors from scratch every round.
    fn brute_soft(ps: &[Proposal], sigma: f64, floor: f64) -> Vec<(usize, f64)> {
        let mut pool: Vec<(usize, f64)> =
            ps.iter().enumerate().map(|(i, p)| (i, p.score)).filter(|x| x.1 >= floor).collect();
        let mut out = vec![];
        while !pool.is_empty() {
            pool.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let head = pool.remove(0);
            out.push(head);
            pool = pool
                .into_iter()
                .map(|(i, s)| {
                    let o = iou(&ps[head.0].bbox, &ps[i].bbox);
                    (i, s * (-o * o / sigma).exp())
                })
                .filter(|x| x.1 >= floor)
                .collect();
        }
        out
    }

    fn brute_hard(ps: &[Proposal], thr: f64) -> Vec<usize> {
        let n = ps.len();
        let mut suppressed = vec![false; n];
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|a, b| ps[*b].score.partial_cmp(&ps[*a].score).unwrap().then(a.cmp(b)));
        let mut keep = vec![];
        for a in 0..n {
            let i = idx[a];
            if suppressed[i] {
                continue;
            }
            keep.push(i);
            for &j in &idx[a + 1..] {
                if iou(&ps[i].bbox, &ps[j].bbox) > thr {
                    suppressed[j] = true;
                }
            }
        }
        keep
    }

    #[test]
    fn single_proposal_unchanged() {
        let p = vec![prop([0.0, 0.0, 10.0, 10.0], 0.7)];
        assert_eq!(soft_nms(&p, &NmsConfig::default()), p);
    }

    #[test]
    fn identical_pair_decay() {
        let b = [0.0, 0.0, 10.0, 10.0];
        let out = soft_nms(&[prop(b, 0.9), prop(b, 0.8)], &NmsConfig::default());
        assert_eq!(out[0].score, 0.9);
        let expected = 0.8 * (-1.0f64 / 0.35).exp();
        assert!((out[1].score - expected).abs() < 1e-12);
        assert!((out[1].score - 0.04593).abs() < 5e-5);
    }

    #[test]
    fn disjoint_boxes_untouched() {
        let ps = vec![prop([0.0, 0.0, 5.0, 5.0], 0.3), prop([10.0, 10.0, 20.0, 20.0], 0.6)];
        let out = soft_nms(&ps, &NmsConfig::default());
        assert_eq!(out, vec![ps[1], ps[0]]);
    }

    #[test]
    fn hard_examples() {
        let cfg = NmsConfig::default();
        let b = [0.0, 0.0, 10.0, 10.0];
        assert_eq!(hard_nms(&[prop(b, 0.9), prop(b, 0.8)], &cfg).len(), 1);
        // iou = 45 / 95 < 0.5
        let ps = [prop(b, 0.9), prop([0.0, 0.0, 10.0, 4.5], 0.8)];
        assert!(iou(&ps[0].bbox, &ps[1].bbox) < 0.5);
        assert_eq!(hard_nms(&ps, &cfg).len(), 2);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = NmsConfig::default();
        for _ in 0..100 {
            let ps = random_props(&mut rng, 50);
            let fast = soft_nms(&ps, &cfg);
            let slow = brute_soft(&ps, cfg.sigma, cfg.score_floor);
            assert_eq!(fast.len(), slow.len());
            for (f, (i, s)) in fast.iter().zip(&slow) {
                assert_eq!(f.bbox, ps[*i].bbox);
                assert!((f.score - s).abs() < 1e-9);
            }
            let hard: Vec<BBox> = hard_nms(&ps, &cfg).iter().map(|p| p.bbox).collect();
            let reference: Vec<BBox> = brute_hard(&ps, cfg.hard_iou).iter().map(|&i| ps[i].bbox).collect();
            assert_eq!(hard, reference);
        }
    }

    #[test]
    fn tiny_sigma_approaches_hard_nms() {
        let cfg = NmsConfig { sigma: 1e-6, hard_iou: 0.0, ..NmsConfig::default() };
        let ps = vec![
            prop([0.0, 0.0, 10.0, 10.0], 0.9),
            prop([2.0, 2.0, 12.0, 12.0], 0.8),   // overlapping
            prop([10.0, 0.0, 20.0, 10.0], 0.7),  // touching, iou 0
            prop([30.0, 30.0, 40.0, 40.0], 0.6), // far away
        ];
        let soft: Vec<BBox> = soft_nms(&ps, &cfg).iter().map(|p| p.bbox).collect();
        let hard: Vec<BBox> = hard_nms(&ps, &cfg).iter().map(|p| p.bbox).collect();
        assert_eq!(soft, hard);
        assert_eq!(soft.len(), 3);
    }

    proptest! {
        #[test]
        fn never_raises_scores(seed in 0u64..1000, n in 0usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ps = random_props(&mut rng, n);
            for out in soft_nms(&ps, &NmsConfig::default()) {
                let orig = ps.iter().find(|p| p.bbox == out.bbox).unwrap();
                prop_assert!(out.score <= orig.score);
            }
        }

        #[test]
        fn permutation_invariant(seed in 0u64..1000, n in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ps = random_props(&mut rng, n);
            let mut shuffled = ps.clone();
            for i in (1..n).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            // scores are continuous random draws, so no ties: the kept set and
            // order do not depend on input order
            let a = soft_nms(&ps, &NmsConfig::default());
            let b = soft_nms(&shuffled, &NmsConfig::default());
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.bbox, y.bbox);
                prop_assert!((x.score - y.score).abs() < 1e-12);
            }
        }
    }
}
