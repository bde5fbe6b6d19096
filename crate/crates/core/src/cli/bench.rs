use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::BBox;
use crate::psroi::{batch_pool, Branch, PoolConfig};
use crate::synth::grid_size;
use crate::tensor::FeatureMap;

const IMAGE: f64 = 1024.0;
const STRIDE: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub rois: usize,
    pub classes: usize,
    pub median_s: f64,
}

fn random_map(channels: usize, rng: &mut ChaCha8Rng) -> Result<FeatureMap> {
    let n = grid_size(IMAGE, STRIDE);
    FeatureMap::from_fn(n, n, channels, STRIDE, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Median wall-clock seconds of `batch_pool` over `runs` repetitions, for
/// `rois` random boxes on random maps of a 1024x1024 image at stride 16.
pub fn pool_timing(rois: usize, classes: usize, k: usize, runs: usize, seed: u64) -> Result<BenchRow> {
    let cfg = PoolConfig { k, classes, ..PoolConfig::default() };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let score = random_map(cfg.channels(Branch::Score), &mut rng)?;
    let regress = random_map(cfg.channels(Branch::Regress), &mut rng)?;
    let boxes: Vec<BBox> = (0..rois)
        .map(|_| {
            let side = rng.random_range(16f64.ln()..512f64.ln()).exp();
            BBox::from_xywh(rng.random_range(0.0..IMAGE - side), rng.random_range(0.0..IMAGE - side), side, side)
        })
        .collect();
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs.max(1) {
        let t = Instant::now();
        let out = batch_pool(&score, &regress, &boxes, &cfg)?;
        times.push(t.elapsed().as_secs_f64());
        std::hint::black_box(out);
    }
    times.sort_by(f64::total_cmp);
    Ok(BenchRow { rois, classes, median_s: times[times.len() / 2] })
}
