use thiserror::Error;

use crate::model::CellIndex;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("grid must have at least one row and one column (got {rows}x{cols})")]
    InvalidGrid { rows: usize, cols: usize },
    #[error("invalid resistance field: {}", .0.join("; "))]
    InvalidField(Vec<String>),
    #[error("invalid drive setup: {0}")]
    InvalidDrive(String),
    #[error("incomplete measurement frame: {0}")]
    IncompleteFrame(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cell {cell} is outside the {rows}x{cols} grid")]
    CellOutOfRange { cell: CellIndex, rows: usize, cols: usize },
    #[error("conductance matrix is singular")]
    Singular,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("frame grid {frame} does not match ensemble grid {ensemble}")]
    GridMismatch { frame: String, ensemble: String },
    #[error("unusable reading at cell {cell} config {label}: v_s = {v_s}")]
    InvalidReading { cell: CellIndex, label: String, v_s: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibration for cell {0} needs at least two distinct feature values")]
    DegenerateSpread(CellIndex),
    #[error("no calibration model for cell {0}")]
    MissingModel(CellIndex),
    #[error("model for cell {cell} uses feature {found:?}, expected {expected:?}")]
    WrongFeature { cell: CellIndex, expected: String, found: String },
    #[error("grid dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error("mask selects no cells")]
    EmptyMask,
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
