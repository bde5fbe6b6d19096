//! Flat run configuration with dotted keys.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::anchors::{AnchorConfig, DEFAULT_MIN_STRIDE, DEFAULT_STRIDE_DIVISOR};
use crate::evalrec::{MatchRule, ReportFormat};
use crate::nms::{NmsConfig, NmsMode};
use crate::psroi::PoolConfig;
use crate::refine::RefineConfig;
use crate::synth::{FeatureConfig, SceneConfig};
use crate::targets::{AssignConfig, ScaleRange};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NmsChoice {
    #[default]
    Soft,
    Hard,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(rename = "image.width")]
    pub image_width: f64,
    #[serde(rename = "image.height")]
    pub image_height: f64,

    #[serde(rename = "anchor.scales")]
    pub anchor_scales: Vec<f64>,
    #[serde(rename = "anchor.ratios")]
    pub anchor_ratios: Vec<f64>,
    #[serde(rename = "anchor.min_stride")]
    pub anchor_min_stride: f64,
    #[serde(rename = "anchor.stride_divisor")]
    pub anchor_stride_divisor: f64,
    /// When set, anchors sit on this single stride for every scale instead
    /// of the scale-dependent one.
    #[serde(rename = "anchor.uniform_stride")]
    pub anchor_uniform_stride: Option<f64>,
    /// Stride of the dense baseline reported by `anchors`.
    #[serde(rename = "anchor.dense_stride")]
    pub anchor_dense_stride: f64,

    #[serde(rename = "pool.k")]
    pub pool_k: usize,
    #[serde(rename = "pool.classes")]
    pub pool_classes: usize,
    #[serde(rename = "pool.samples_per_bin")]
    pub pool_samples_per_bin: usize,

    #[serde(rename = "assign.pos_iou")]
    pub assign_pos_iou: f64,
    #[serde(rename = "assign.neg_iou")]
    pub assign_neg_iou: f64,
    #[serde(rename = "assign.max_pos")]
    pub assign_max_pos: usize,
    #[serde(rename = "assign.max_neg")]
    pub assign_max_neg: usize,
    #[serde(rename = "assign.hard_neg")]
    pub assign_hard_neg: usize,
    #[serde(rename = "assign.hard_neg_min_iou")]
    pub assign_hard_neg_min_iou: f64,
    #[serde(rename = "assign.hard_neg_within_budget")]
    pub assign_hard_neg_within_budget: bool,
    #[serde(rename = "assign.roi_cap")]
    pub assign_roi_cap: usize,
    #[serde(rename = "assign.seed")]
    pub assign_seed: u64,

    #[serde(rename = "refine.iterations")]
    pub refine_iterations: usize,
    #[serde(rename = "refine.top_k")]
    pub refine_top_k: usize,
    #[serde(rename = "refine.output_n")]
    pub refine_output_n: usize,

    #[serde(rename = "nms.mode")]
    pub nms_mode: NmsChoice,
    #[serde(rename = "nms.sigma")]
    pub nms_sigma: f64,
    #[serde(rename = "nms.score_floor")]
    pub nms_score_floor: f64,
    #[serde(rename = "nms.hard_iou")]
    pub nms_hard_iou: f64,

    /// Proposals whose side falls outside `[snip.min_side, snip.max_side)`
    /// are dropped by `propose` when enabled.
    #[serde(rename = "snip.enabled")]
    pub snip_enabled: bool,
    #[serde(rename = "snip.min_side")]
    pub snip_min_side: f64,
    #[serde(rename = "snip.max_side")]
    pub snip_max_side: Option<f64>,

    #[serde(rename = "synth.seed")]
    pub synth_seed: u64,
    #[serde(rename = "synth.scenes")]
    pub synth_scenes: usize,
    #[serde(rename = "synth.min_boxes")]
    pub synth_min_boxes: usize,
    #[serde(rename = "synth.max_boxes")]
    pub synth_max_boxes: usize,
    #[serde(rename = "synth.min_side")]
    pub synth_min_side: f64,
    #[serde(rename = "synth.max_side")]
    pub synth_max_side: f64,
    #[serde(rename = "synth.iou_ceiling")]
    pub synth_iou_ceiling: f64,
    #[serde(rename = "synth.stride")]
    pub synth_stride: f64,
    #[serde(rename = "synth.noise_sd")]
    pub synth_noise_sd: f64,
    #[serde(rename = "synth.influence")]
    pub synth_influence: f64,
    #[serde(rename = "synth.influence_pad")]
    pub synth_influence_pad: f64,

    #[serde(rename = "eval.top_n")]
    pub eval_top_n: Vec<usize>,
    #[serde(rename = "eval.iou")]
    pub eval_iou: Vec<f64>,
    #[serde(rename = "eval.match")]
    pub eval_match: MatchRule,
    #[serde(rename = "eval.format")]
    pub eval_format: ReportFormat,

    #[serde(rename = "bench.rois")]
    pub bench_rois: usize,
    #[serde(rename = "bench.classes")]
    pub bench_classes: usize,
    #[serde(rename = "bench.runs")]
    pub bench_runs: usize,
    #[serde(rename = "bench.seed")]
    pub bench_seed: u64,

    #[serde(rename = "io.out_dir")]
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses the available parallelism.
    #[serde(rename = "io.workers")]
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let anchor = AnchorConfig::faces(1024.0, 1024.0);
        let pool = PoolConfig::default();
        let assign = AssignConfig::default();
        let refine = RefineConfig::default();
        let nms = NmsConfig::default();
        let scene = SceneConfig::default();
        let feat = FeatureConfig::default();
        Self {
            image_width: anchor.image_width,
            image_height: anchor.image_height,
            anchor_scales: anchor.scales,
            anchor_ratios: anchor.ratios,
            anchor_min_stride: DEFAULT_MIN_STRIDE,
            anchor_stride_divisor: DEFAULT_STRIDE_DIVISOR,
            anchor_uniform_stride: None,
            anchor_dense_stride: 16.0,
            pool_k: pool.k,
            pool_classes: pool.classes,
            pool_samples_per_bin: pool.samples_per_bin,
            assign_pos_iou: assign.pos_iou,
            assign_neg_iou: assign.neg_iou,
            assign_max_pos: assign.max_pos,
            assign_max_neg: assign.max_neg,
            assign_hard_neg: assign.hard_neg,
            assign_hard_neg_min_iou: assign.hard_neg_min_iou,
            assign_hard_neg_within_budget: assign.hard_neg_within_budget,
            assign_roi_cap: assign.roi_cap,
            assign_seed: assign.rng_seed,
            refine_iterations: refine.iterations,
            refine_top_k: refine.top_k,
            refine_output_n: refine.output_n,
            nms_mode: NmsChoice::Soft,
            nms_sigma: nms.sigma,
            nms_score_floor: nms.score_floor,
            nms_hard_iou: nms.hard_iou,
            snip_enabled: false,
            snip_min_side: 0.0,
            snip_max_side: None,
            synth_seed: 0,
            synth_scenes: 10,
            synth_min_boxes: scene.min_boxes,
            synth_max_boxes: scene.max_boxes,
            synth_min_side: scene.min_side,
            synth_max_side: scene.max_side,
            synth_iou_ceiling: scene.iou_ceiling,
            synth_stride: feat.stride,
            synth_noise_sd: feat.noise_sd,
            synth_influence: feat.influence,
            synth_influence_pad: feat.influence_pad,
            eval_top_n: vec![100, 300, 1000],
            eval_iou: vec![0.5, 0.7],
            eval_match: MatchRule::Max,
            eval_format: ReportFormat::Csv,
            bench_rois: 25_000,
            bench_classes: 2,
            bench_runs: 5,
            bench_seed: 0,
            out_dir: PathBuf::from("out"),
            workers: 0,
        }
    }
}

/// Parses a `--set` value as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Loads `path` (if any), applies `key=value` overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut map = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                match serde_json::from_str::<Value>(&text).with_context(|| format!("parsing config {}", p.display()))? {
                    Value::Object(m) => m,
                    _ => bail!("config {} must be a JSON object", p.display()),
                }
            }
            None => Map::new(),
        };
        for item in overrides {
            let Some((key, raw)) = item.split_once('=') else {
                bail!("--set expects key=value, got {item:?}");
            };
            map.insert(key.trim().to_string(), parse_value(raw.trim()));
        }
        let cfg: RunConfig = serde_json::from_value(Value::Object(map)).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.anchor_config(self.image_width, self.image_height).validate()?;
        self.pool().validate()?;
        self.assign().validate()?;
        self.refine().validate()?;
        self.nms().validate()?;
        self.scale_range().validate()?;
        self.features().validate()?;
        if let Some(s) = self.anchor_uniform_stride {
            if !(s.is_finite() && s > 0.0) {
                bail!("anchor.uniform_stride must be positive, got {s}");
            }
        }
        if !(self.anchor_dense_stride.is_finite() && self.anchor_dense_stride > 0.0) {
            bail!("anchor.dense_stride must be positive, got {}", self.anchor_dense_stride);
        }
        if self.eval_iou.iter().any(|t| !(0.0..=1.0).contains(t)) {
            bail!("eval.iou thresholds must lie in [0, 1]");
        }
        if self.bench_runs == 0 || self.bench_rois == 0 || self.bench_classes < 2 {
            bail!("bench needs runs >= 1, rois >= 1 and classes >= 2");
        }
        Ok(())
    }

    pub fn anchor_config(&self, width: f64, height: f64) -> AnchorConfig {
        AnchorConfig {
            scales: self.anchor_scales.clone(),
            ratios: self.anchor_ratios.clone(),
            min_stride: self.anchor_min_stride,
            stride_divisor: self.anchor_stride_divisor,
            image_width: width,
            image_height: height,
        }
    }

    pub fn pool(&self) -> PoolConfig {
        PoolConfig { k: self.pool_k, classes: self.pool_classes, samples_per_bin: self.pool_samples_per_bin }
    }

    pub fn assign(&self) -> AssignConfig {
        AssignConfig {
            pos_iou: self.assign_pos_iou,
            neg_iou: self.assign_neg_iou,
            max_pos: self.assign_max_pos,
            max_neg: self.assign_max_neg,
            hard_neg: self.assign_hard_neg,
            hard_neg_min_iou: self.assign_hard_neg_min_iou,
            hard_neg_within_budget: self.assign_hard_neg_within_budget,
            roi_cap: self.assign_roi_cap,
            rng_seed: self.assign_seed,
            ..AssignConfig::default()
        }
    }

    pub fn refine(&self) -> RefineConfig {
        RefineConfig { iterations: self.refine_iterations, top_k: self.refine_top_k, output_n: self.refine_output_n }
    }

    pub fn nms(&self) -> NmsConfig {
        NmsConfig {
            sigma: self.nms_sigma,
            score_floor: self.nms_score_floor,
            hard_iou: self.nms_hard_iou,
            mode: if self.nms_mode == NmsChoice::Hard { NmsMode::Hard } else { NmsMode::Soft },
        }
    }

    pub fn scale_range(&self) -> ScaleRange {
        ScaleRange { min_side: self.snip_min_side, max_side: self.snip_max_side }
    }

    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            image_width: self.image_width,
            image_height: self.image_height,
            min_boxes: self.synth_min_boxes,
            max_boxes: self.synth_max_boxes,
            min_side: self.synth_min_side,
            max_side: self.synth_max_side,
            iou_ceiling: self.synth_iou_ceiling,
            ..SceneConfig::default()
        }
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            stride: self.synth_stride,
            noise_sd: self.synth_noise_sd,
            influence: self.synth_influence,
            influence_pad: self.synth_influence_pad,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.to_json().contains("\"anchor.scales\""));
    }

    #[test]
    fn overrides() {
        let cfg = RunConfig::load(
            None,
            &["anchor.scales=[16]".into(), "io.out_dir=/tmp/x".into(), "nms.mode=hard".into(), "pool.k=3".into()],
        )
        .unwrap();
        assert_eq!(cfg.anchor_scales, vec![16.0]);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.nms_mode, NmsChoice::Hard);
        assert_eq!(cfg.pool_k, 3);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::load(None, &["anchor.bogus=1".into()]).is_err());
        assert!(RunConfig::load(None, &["pool.k".into()]).is_err());
        assert!(RunConfig::load(None, &["pool.k=0".into()]).is_err());
        assert!(RunConfig::load(None, &["refine.output_n=5".into(), "refine.top_k=2".into()]).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"synth.seed": 7, "refine.iterations": 2}"#).unwrap();
        let cfg = RunConfig::load(Some(&p), &["synth.seed=9".into()]).unwrap();
        assert_eq!(cfg.synth_seed, 9);
        assert_eq!(cfg.refine_iterations, 2);
        std::fs::write(&p, "[1]").unwrap();
        assert!(RunConfig::load(Some(&p), &[]).is_err());
    }
}
