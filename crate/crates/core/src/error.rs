use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("crystal ({ring}, {index}) outside scanner with {rings} rings x {crystals} crystals")]
    CrystalOutOfRange {
        ring: usize,
        index: usize,
        rings: usize,
        crystals: usize,
    },

    #[error("bin (plane {plane}, radial {radial}, angle {angle}) out of range")]
    BinOutOfRange {
        plane: usize,
        radial: usize,
        angle: usize,
    },

    #[error("invalid chessboard pattern: {0}")]
    Pattern(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty mask: masked loss needs at least one active pixel")]
    EmptyMask,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
