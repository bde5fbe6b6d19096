//! Ground-truth annotations and proposal recall.
//!
//! Annotation text is a sequence of blocks:
//!
//! ```text
//! image_id
//! W H
//! n
//! x y w h    (n lines)
//! ```

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clip, iou, BBox};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub gts: Vec<BBox>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub entries: Vec<Entry>,
    /// Boxes discarded because they had zero area after clipping.
    pub dropped: usize,
}

impl Dataset {
    pub fn gt_count(&self) -> usize {
        self.entries.iter().map(|e| e.gts.len()).sum()
    }
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    /// Next non-blank line with its 1-based number.
    fn next(&mut self) -> Option<(usize, &'a str)> {
        self.inner.by_ref().map(|(n, l)| (n + 1, l.trim())).find(|(_, l)| !l.is_empty())
    }

    fn expect(&mut self, what: &str, last: usize) -> Result<(usize, &'a str)> {
        self.next().ok_or_else(|| Error::parse(last + 1, format!("unexpected end of input, expected {what}")))
    }
}

fn numbers(line: &str, n: usize, line_no: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::parse(line_no, format!("{t:?}: {e}"))))
        .collect::<Result<_>>()?;
    if vals.len() != n {
        return Err(Error::parse(line_no, format!("expected {n} numbers, found {}", vals.len())));
    }
    if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
        return Err(Error::parse(line_no, format!("non-finite value {v}")));
    }
    Ok(vals)
}

pub fn parse_annotations(text: &str) -> Result<Dataset> {
    let mut lines = Lines { inner: text.lines().enumerate().peekable() };
    let mut ds = Dataset::default();
    while let Some((id_line, id)) = lines.next() {
        let (n1, size) = lines.expect("image size", id_line)?;
        let wh = numbers(size, 2, n1)?;
        let (width, height) = (wh[0], wh[1]);
        if width <= 0.0 || height <= 0.0 {
            return Err(Error::parse(n1, format!("image size must be positive, got {width} {height}")));
        }
        let (n2, count) = lines.expect("box count", n1)?;
        let count: usize = count.parse().map_err(|e| Error::parse(n2, format!("box count {count:?}: {e}")))?;
        let mut gts = Vec::with_capacity(count);
        let mut last = n2;
        for _ in 0..count {
            let (n, l) = lines.expect("box line", last)?;
            last = n;
            let v = numbers(l, 4, n)?;
            let b = clip(&BBox::from_xywh(v[0], v[1], v[2], v[3]), width, height);
            if b.area() > 0.0 {
                gts.push(b);
            } else {
                ds.dropped += 1;
            }
        }
        ds.entries.push(Entry { id: id.to_string(), width, height, gts });
    }
    Ok(ds)
}

pub fn format_annotations(ds: &Dataset) -> String {
    let mut out = String::new();
    for e in &ds.entries {
        let _ = writeln!(out, "{}\n{} {}\n{}", e.id, e.width, e.height, e.gts.len());
        for b in &e.gts {
            let _ = writeln!(out, "{} {} {} {}", b.x1, b.y1, b.width(), b.height());
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MatchRule {
    /// Ground truths in order, each taking the best-ranked free proposal.
    Greedy,
    /// Maximum one-to-one matching, preferring better-ranked proposals.
    #[default]
    Max,
}

/// For each gt, the proposal indices (ascending rank) with IoU >= `thresh`.
fn candidates(gts: &[BBox], proposals: &[BBox], thresh: f64) -> Vec<Vec<usize>> {
    gts.iter().map(|g| (0..proposals.len()).filter(|&p| iou(g, &proposals[p]) >= thresh).collect()).collect()
}

/// Rank-greedy matching: each gt in turn takes the highest-ranked unmatched
/// proposal it overlaps by at least `thresh`. Returns the matched count.
pub fn greedy_match(gts: &[BBox], proposals: &[BBox], thresh: f64) -> usize {
    let mut used = vec![false; proposals.len()];
    let mut matched = 0;
    for cands in candidates(gts, proposals, thresh) {
        if let Some(&p) = cands.iter().find(|&&p| !used[p]) {
            used[p] = true;
            matched += 1;
        }
    }
    matched
}

/// Size of a maximum one-to-one matching between gts and proposals with IoU
/// at least `thresh` (augmenting paths, candidates tried in rank order).
pub fn max_match(gts: &[BBox], proposals: &[BBox], thresh: f64) -> usize {
    let adj = candidates(gts, proposals, thresh);
    let mut owner: Vec<Option<usize>> = vec![None; proposals.len()];
    let mut matched = 0;
    for g in 0..gts.len() {
        let mut seen = vec![false; proposals.len()];
        if augment(g, &adj, &mut owner, &mut seen) {
            matched += 1;
        }
    }
    matched
}

fn augment(g: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &p in &adj[g] {
        if seen[p] {
            continue;
        }
        seen[p] = true;
        if owner[p].is_none_or(|other| augment(other, adj, owner, seen)) {
            owner[p] = Some(g);
            return true;
        }
    }
    false
}

pub fn match_count(rule: MatchRule, gts: &[BBox], proposals: &[BBox], thresh: f64) -> usize {
    match rule {
        MatchRule::Greedy => greedy_match(gts, proposals, thresh),
        MatchRule::Max => max_match(gts, proposals, thresh),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub top_n: usize,
    pub iou_thresh: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecall {
    pub id: String,
    pub gts: usize,
    pub proposals: usize,
    /// Matched gt count per report row.
    pub matched: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub rows: Vec<ReportRow>,
    pub images: Vec<ImageRecall>,
}

/// Recall for every `(top_n, threshold)` pair, rows ordered by `top_n` then
/// threshold as given. `proposals[i]` holds the ranked boxes for
/// `dataset.entries[i]`; missing lists count as empty. A dataset without any
/// ground truth has recall 1.
pub fn recall_at(
    proposals: &[Vec<BBox>],
    dataset: &Dataset,
    iou_thresholds: &[f64],
    top_ns: &[usize],
    rule: MatchRule,
) -> RecallReport {
    let pairs: Vec<(usize, f64)> = top_ns.iter().flat_map(|&n| iou_thresholds.iter().map(move |&t| (n, t))).collect();
    let images: Vec<ImageRecall> = dataset
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let props = proposals.get(i).map(Vec::as_slice).unwrap_or(&[]);
            let matched =
                pairs.iter().map(|&(n, t)| match_count(rule, &e.gts, &props[..n.min(props.len())], t)).collect();
            ImageRecall { id: e.id.clone(), gts: e.gts.len(), proposals: props.len(), matched }
        })
        .collect();
    let total = dataset.gt_count();
    let rows = pairs
        .iter()
        .enumerate()
        .map(|(c, &(top_n, iou_thresh))| {
            let hit: usize = images.iter().map(|im| im.matched[c]).sum();
            let recall = if total == 0 { 1.0 } else { hit as f64 / total as f64 };
            ReportRow { top_n, iou_thresh, recall }
        })
        .collect();
    RecallReport { rows, images }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

pub const REPORT_CSV_HEADER: &str = "top_n,iou_thresh,recall";

pub fn emit_report(report: &RecallReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = format!("{REPORT_CSV_HEADER}\n");
            for r in &report.rows {
                let _ = writeln!(out, "{},{},{}", r.top_n, r.iou_thresh, r.recall);
            }
            out
        }
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&report.rows).expect("rows serialize");
            s.push('\n');
            s
        }
    }
}

pub fn parse_report(text: &str, format: ReportFormat) -> Result<Vec<ReportRow>> {
    match format {
        ReportFormat::Json => serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string())),
        ReportFormat::Csv => {
            let mut lines = text.lines().enumerate();
            match lines.next() {
                Some((_, h)) if h.trim() == REPORT_CSV_HEADER => {}
                Some(_) => return Err(Error::parse(1, format!("expected header {REPORT_CSV_HEADER:?}"))),
                None => return Ok(Vec::new()),
            }
            let mut rows = Vec::new();
            for (n, line) in lines {
                let line_no = n + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let f: Vec<&str> = line.split(',').map(str::trim).collect();
                if f.len() != 3 {
                    return Err(Error::parse(line_no, format!("expected 3 columns, found {}", f.len())));
                }
                let bad = |e: &dyn std::fmt::Display| Error::parse(line_no, e.to_string());
                rows.push(ReportRow {
                    top_n: f[0].parse().map_err(|e| bad(&e))?,
                    iou_thresh: f[1].parse().map_err(|e| bad(&e))?,
                    recall: f[2].parse().map_err(|e| bad(&e))?,
                });
            }
            Ok(rows)
        }
    }
}
