use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate anchor")]
    DegenerateAnchor,

    #[error("degenerate roi {0:?}")]
    DegenerateRoi([f64; 4]),

    #[error("channel {channel} out of range for map with {channels} channels")]
    InvalidChannel { channel: usize, channels: usize },

    #[error("branch/channel mismatch: expected {expected} channels, map has {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("stride mismatch between score ({score}) and regression ({regress}) maps")]
    StrideMismatch { score: f64, regress: f64 },

    #[error("invalid feature map: {0}")]
    InvalidMap(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic: expected \"FARP\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated tensor payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("tensor dimensions overflow: {height}x{width}x{channels}")]
    DimensionOverflow { height: u32, width: u32, channels: u32 },

    #[error("placement infeasible: placed {placed} of {requested} boxes")]
    PlacementInfeasible { placed: usize, requested: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }
}
