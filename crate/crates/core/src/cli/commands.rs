use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use rayon::prelude::*;

use super::bench::pool_timing;
use super::config::{NmsChoice, RunConfig};
use super::{Cli, Command, Common};
use crate::anchors::{place, place_dense, AnchorSet};
use crate::evalrec::{
    emit_report, format_annotations, parse_annotations, parse_report, recall_at, Dataset, Entry, ReportFormat,
};
use crate::nms::suppress;
use crate::refine::{proposals_from_csv, proposals_to_csv, propose_from_anchors, ImageSize, Proposal};
use crate::synth::{synth_features, synth_scene};
use crate::targets::snip_filter;
use crate::tensor::{read_tensor, write_tensor};

pub const CONFIG_FILE: &str = "config.json";
pub const ANNOTATIONS_FILE: &str = "annotations.txt";

/// File-name-safe form of an image id: every character outside
/// `[A-Za-z0-9._-]` becomes `_`.
pub fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

fn stems(ds: &Dataset) -> anyhow::Result<Vec<String>> {
    let mut seen = HashSet::new();
    ds.entries
        .iter()
        .map(|e| {
            let s = file_stem(&e.id);
            ensure!(seen.insert(s.clone()), "image ids collide after sanitizing: {:?}", e.id);
            Ok(s)
        })
        .collect()
}

fn quoted(v: impl serde::Serialize) -> String {
    serde_json::to_string(&v).expect("value serializes")
}

/// Loads the configuration and folds explicit flags in as overrides.
fn resolve(common: &Common, extra: Vec<String>) -> anyhow::Result<RunConfig> {
    let mut sets = common.set.clone();
    if let Some(out) = &common.out {
        sets.push(format!("io.out_dir={}", quoted(out)));
    }
    if let Some(w) = common.workers {
        sets.push(format!("io.workers={w}"));
    }
    sets.extend(extra);
    RunConfig::load(common.config.as_deref(), &sets)
}

fn prepare_out(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, cfg.to_json()).with_context(|| format!("writing {}", path.display()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Anchors { common, dense } => anchors(&resolve(&common, vec![])?, dense),
        Command::Synth { common } => synth(&resolve(&common, vec![])?),
        Command::Propose { common, input, annotations, iterations, nms, uniform_stride } => {
            let mut extra = vec![];
            if let Some(n) = iterations {
                extra.push(format!("refine.iterations={n}"));
            }
            if let Some(m) = nms {
                extra.push(format!("nms.mode={}", quoted(m)));
            }
            if let Some(s) = uniform_stride {
                extra.push(format!("anchor.uniform_stride={s}"));
            }
            let ann = annotations.unwrap_or_else(|| input.join(ANNOTATIONS_FILE));
            propose(&resolve(&common, extra)?, &input, &ann)
        }
        Command::Eval { common, proposals, annotations, topn, iou, format, match_rule } => {
            let mut extra = vec![];
            if !topn.is_empty() {
                extra.push(format!("eval.top_n={}", quoted(topn)));
            }
            if !iou.is_empty() {
                extra.push(format!("eval.iou={}", quoted(iou)));
            }
            if let Some(f) = format {
                extra.push(format!("eval.format={}", quoted(f)));
            }
            if let Some(m) = match_rule {
                extra.push(format!("eval.match={}", quoted(m)));
            }
            eval(&resolve(&common, extra)?, &proposals, &annotations)
        }
        Command::Bench { common } => bench(&resolve(&common, vec![])?),
    }
}

fn summary_line(strided: usize, dense: usize) -> String {
    format!("strided={strided} dense={dense} ratio={:.4}", dense as f64 / strided as f64)
}

fn anchors(cfg: &RunConfig, dense: bool) -> anyhow::Result<()> {
    let ac = cfg.anchor_config(cfg.image_width, cfg.image_height);
    let strided = place(&ac)?;
    let uniform = place_dense(&ac, cfg.anchor_dense_stride)?;
    let dir = prepare_out(cfg)?;
    let chosen = if dense { &uniform } else { &strided };
    let path = dir.join("anchors.csv");
    write(&path, &chosen.to_csv())?;
    let rows = read(&path)?.lines().count();
    ensure!(rows == chosen.len() + 1, "{} has {rows} lines, expected {}", path.display(), chosen.len() + 1);
    let line = summary_line(strided.len(), uniform.len());
    write(&dir.join("summary.txt"), &format!("{line}\n"))?;
    println!("{line}");
    Ok(())
}

fn synth(cfg: &RunConfig) -> anyhow::Result<()> {
    let (scene_cfg, feat_cfg, pool_cfg) = (cfg.scene(), cfg.features(), cfg.pool());
    scene_cfg.validate()?;
    let dir = prepare_out(cfg)?;
    let ids: Vec<String> = (0..cfg.synth_scenes).map(|i| format!("scene_{i:04}")).collect();
    let entries: Vec<Entry> = pool(cfg.workers)?.install(|| {
        ids.par_iter()
            .enumerate()
            .map(|(i, id)| -> anyhow::Result<Entry> {
                let scene = synth_scene(cfg.synth_seed + i as u64, &scene_cfg)?;
                let (score, regress) = synth_features(&scene, &pool_cfg, &feat_cfg)?;
                for (map, kind) in [(&score, "score"), (&regress, "regress")] {
                    let path = dir.join(format!("{id}.{kind}.farp"));
                    write_tensor(map, &path).with_context(|| format!("writing {}", path.display()))?;
                    let back = read_tensor(&path).with_context(|| format!("re-reading {}", path.display()))?;
                    ensure!(
                        (back.height(), back.width(), back.channels()) == (map.height(), map.width(), map.channels()),
                        "{} does not read back with the written shape",
                        path.display()
                    );
                }
                Ok(Entry { id: id.clone(), width: scene.image_width, height: scene.image_height, gts: scene.gts })
            })
            .collect::<anyhow::Result<_>>()
    })?;
    let ds = Dataset { entries, dropped: 0 };
    let path = dir.join(ANNOTATIONS_FILE);
    write(&path, &format_annotations(&ds))?;
    let back = parse_annotations(&read(&path)?)?;
    ensure!(back.gt_count() == ds.gt_count() && back.dropped == 0, "{} did not validate", path.display());
    println!("scenes={} boxes={} dir={}", ds.entries.len(), ds.gt_count(), dir.display());
    Ok(())
}

fn propose(cfg: &RunConfig, input: &Path, annotations: &Path) -> anyhow::Result<()> {
    let ds = parse_annotations(&read(annotations)?)?;
    let stems = stems(&ds)?;
    let dir = prepare_out(cfg)?;
    let out = dir.join("proposals");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let (refine, pool_cfg, nms, range) = (cfg.refine(), cfg.pool(), cfg.nms(), cfg.scale_range());
    let counts: Vec<usize> = pool(cfg.workers)?.install(|| {
        ds.entries
            .par_iter()
            .zip(&stems)
            .map(|(e, stem)| -> anyhow::Result<usize> {
                let load = |kind: &str| {
                    let p = input.join(format!("{stem}.{kind}.farp"));
                    read_tensor(&p).with_context(|| format!("reading {}", p.display()))
                };
                let (score, regress) = (load("score")?, load("regress")?);
                let ac = cfg.anchor_config(e.width, e.height);
                let anchors: AnchorSet = match cfg.anchor_uniform_stride {
                    Some(s) => place_dense(&ac, s)?,
                    None => place(&ac)?,
                };
                let image = ImageSize::new(e.width, e.height);
                let mut props = propose_from_anchors(&score, &regress, &anchors, image, &refine, &pool_cfg)?;
                if cfg.nms_mode != NmsChoice::None {
                    props = suppress(&props, &nms);
                }
                if cfg.snip_enabled {
                    let boxes: Vec<_> = props.iter().map(|p| p.bbox).collect();
                    let keep = snip_filter(&boxes, &range);
                    props = props.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect();
                }
                let path = out.join(format!("{stem}.csv"));
                write(&path, &proposals_to_csv(&props))?;
                let back = proposals_from_csv(&read(&path)?)?;
                ensure!(back.len() == props.len(), "{} did not validate", path.display());
                Ok(props.len())
            })
            .collect::<anyhow::Result<_>>()
    })?;
    println!("images={} proposals={} dir={}", counts.len(), counts.iter().sum::<usize>(), out.display());
    Ok(())
}

fn eval(cfg: &RunConfig, proposals: &Path, annotations: &Path) -> anyhow::Result<()> {
    let ds = parse_annotations(&read(annotations)?)?;
    let stems = stems(&ds)?;
    let lists: Vec<Vec<crate::geometry::BBox>> = stems
        .iter()
        .map(|s| -> anyhow::Result<_> {
            let p = proposals.join(format!("{s}.csv"));
            let props: Vec<Proposal> =
                proposals_from_csv(&read(&p)?).with_context(|| format!("parsing {}", p.display()))?;
            Ok(props.into_iter().map(|p| p.bbox).collect())
        })
        .collect::<anyhow::Result<_>>()?;
    let report = pool(cfg.workers)?.install(|| recall_at(&lists, &ds, &cfg.eval_iou, &cfg.eval_top_n, cfg.eval_match));
    let dir = prepare_out(cfg)?;
    let ext = match cfg.eval_format {
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    };
    let text = emit_report(&report, cfg.eval_format);
    let path = dir.join(format!("report.{ext}"));
    write(&path, &text)?;
    let back = parse_report(&read(&path)?, cfg.eval_format)?;
    ensure!(back.len() == report.rows.len(), "{} did not validate", path.display());
    if ds.dropped > 0 {
        eprintln!("warning: dropped {} zero-area boxes", ds.dropped);
    }
    print!("{text}");
    Ok(())
}

fn bench(cfg: &RunConfig) -> anyhow::Result<()> {
    let (n, c, k, runs, seed) = (cfg.bench_rois, cfg.bench_classes, cfg.pool_k, cfg.bench_runs, cfg.bench_seed);
    let rows = pool(cfg.workers)?.install(|| -> anyhow::Result<_> {
        Ok([
            ("rois", pool_timing(n, c, k, runs, seed)?),
            ("rois", pool_timing(2 * n, c, k, runs, seed)?),
            ("classes", pool_timing(n, c, k, runs, seed)?),
            ("classes", pool_timing(n, 2 * c, k, runs, seed)?),
        ])
    })?;
    let mut table = String::from("case,rois,classes,median_s\n");
    for (case, r) in &rows {
        let _ = writeln!(table, "{case},{},{},{:.6}", r.rois, r.classes, r.median_s);
    }
    let roi_ratio = rows[1].1.median_s / rows[0].1.median_s;
    let class_ratio = rows[3].1.median_s / rows[2].1.median_s;
    if !(roi_ratio.is_finite() && class_ratio.is_finite()) {
        bail!("timings too small to compare");
    }
    let dir = prepare_out(cfg)?;
    write(&dir.join("bench.csv"), &table)?;
    print!("{table}");
    println!("roi_ratio={roi_ratio:.3} class_ratio={class_ratio:.3}");
    Ok(())
}
