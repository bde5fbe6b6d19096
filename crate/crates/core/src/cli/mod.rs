//! The `farpn` command line.

mod bench;
mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use bench::{pool_timing, BenchRow};
pub use commands::{file_stem, run};
pub use config::{NmsChoice, RunConfig};

use crate::evalrec::{MatchRule, ReportFormat};

#[derive(Debug, Parser)]
#[command(name = "farpn", version, about = "Floating-anchor region proposals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON file with dotted keys, e.g. {"anchor.scales": [16, 32]}.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key; the value is parsed as JSON, else taken as a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (io.out_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads, 0 for all cores (io.workers).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Place anchors, write them as CSV and print strided vs dense counts.
    Anchors {
        #[command(flatten)]
        common: Common,
        /// Write the dense uniform-stride anchors instead.
        #[arg(long)]
        dense: bool,
    },
    /// Generate synthetic scenes with annotations and feature maps.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Score, refine and rank proposals for every image of a synth directory.
    Propose {
        #[command(flatten)]
        common: Common,
        /// Directory holding feature maps named <id>.score.farp and <id>.regress.farp.
        #[arg(long)]
        input: PathBuf,
        /// Annotation file listing the images; defaults to <input>/annotations.txt.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_enum)]
        nms: Option<NmsChoice>,
        /// Place anchors on this single stride instead of the per-scale one.
        #[arg(long)]
        uniform_stride: Option<f64>,
    },
    /// Recall of proposal CSVs against annotations.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding <id>.csv proposal files.
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, value_delimiter = ',')]
        topn: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        iou: Vec<f64>,
        #[arg(long, value_enum)]
        format: Option<ReportFormat>,
        #[arg(long = "match", value_enum)]
        match_rule: Option<MatchRule>,
    },
    /// Time pooling against RoI count and class count.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}
