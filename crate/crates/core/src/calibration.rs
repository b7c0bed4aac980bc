//! Single-touch calibration, per-cell affine force models, force prediction
//! from solved resistances, time-series processing and error metrics.

use serde::{Deserialize, Serialize};

use crate::error::CalibrationError;
use crate::model::{CellIndex, ConfigLabel, DriveSetup, GridSpec, MeasurementFrame, ResistanceField};
use crate::optimizer::{Estimator, SolveReport, StateEnsemble};
use crate::sim::synthesize_frame;

/// Input quantity of a per-cell force model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Estimated contact conductance (1/MΩ).
    SolvedConductance,
    /// Raw config-A `v_r` (V).
    RawVoltage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub cell: CellIndex,
    /// N
    pub force: f64,
    /// 1/MΩ
    pub conductance: f64,
    /// V
    pub raw_v_r: f64,
}

impl CalibrationSample {
    pub fn feature(&self, kind: FeatureKind) -> f64 {
        match kind {
            FeatureKind::SolvedConductance => self.conductance,
            FeatureKind::RawVoltage => self.raw_v_r,
        }
    }
}

/// `force = slope * feature + intercept`, clamped below at 0 N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRegressionModel {
    pub cell: CellIndex,
    pub slope: f64,
    pub intercept: f64,
    pub feature: FeatureKind,
}

impl CellRegressionModel {
    pub fn predict(&self, feature: f64) -> f64 {
        (self.slope * feature + self.intercept).max(0.0)
    }

    pub(crate) fn expect_feature(&self, kind: FeatureKind) -> Result<(), CalibrationError> {
        if self.feature == kind {
            Ok(())
        } else {
            Err(CalibrationError::WrongFeature {
                cell: self.cell,
                expected: format!("{kind:?}"),
                found: format!("{:?}", self.feature),
            })
        }
    }
}

/// Force models for a set of cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub models: Vec<CellRegressionModel>,
}

impl ModelSet {
    pub fn new(models: Vec<CellRegressionModel>) -> Self {
        Self { models }
    }

    pub fn get(&self, cell: CellIndex) -> Option<&CellRegressionModel> {
        self.models.iter().find(|m| m.cell == cell)
    }
}

/// Ordinary least-squares affine fit of force against `feature` for one
/// cell. All samples must belong to the same cell.
pub fn fit_cell_regression(
    samples: &[CalibrationSample],
    feature: FeatureKind,
) -> Result<CellRegressionModel, CalibrationError> {
    let first = samples.first().ok_or(CalibrationError::EmptyMask)?;
    let cell = first.cell;
    if let Some(other) = samples.iter().find(|s| s.cell != cell) {
        return Err(CalibrationError::DimensionMismatch(format!(
            "samples mix cells {cell} and {}",
            other.cell
        )));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.feature(feature)).collect();
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.force).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(samples).map(|(x, s)| (x - mean_x) * (s.force - mean_y)).sum();
    let scale = xs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if samples.len() < 2 || sxx <= (1e-12 * scale).powi(2) * n {
        return Err(CalibrationError::DegenerateSpread(cell));
    }
    let slope = sxy / sxx;
    Ok(CellRegressionModel { cell, slope, intercept: mean_y - slope * mean_x, feature })
}

/// Fits one model per cell present in `samples`.
pub fn fit_models(samples: &[CalibrationSample], feature: FeatureKind) -> Result<ModelSet, CalibrationError> {
    let mut cells: Vec<CellIndex> = samples.iter().map(|s| s.cell).collect();
    cells.sort();
    cells.dedup();
    let models = cells
        .into_iter()
        .map(|cell| {
            let own: Vec<CalibrationSample> = samples.iter().filter(|s| s.cell == cell).copied().collect();
            fit_cell_regression(&own, feature)
        })
        .collect::<Result<_, _>>()?;
    Ok(ModelSet::new(models))
}

/// Forces from solved cell resistances (MΩ) through conductance models.
pub fn predict_forces(resistance: &[Vec<f64>], models: &ModelSet) -> Result<Vec<Vec<f64>>, CalibrationError> {
    resistance
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &r)| {
                    let cell = CellIndex::new(i, j);
                    let m = models.get(cell).ok_or(CalibrationError::MissingModel(cell))?;
                    m.expect_feature(FeatureKind::SolvedConductance)?;
                    Ok(m.predict(1.0 / r))
                })
                .collect()
        })
        .collect()
}

/// Root mean squared difference over the masked cells, or over all cells
/// when `mask` is `None`.
pub fn rmse(estimate: &[Vec<f64>], truth: &[Vec<f64>], mask: Option<&[CellIndex]>) -> Result<f64, CalibrationError> {
    let same_shape = estimate.len() == truth.len() && estimate.iter().zip(truth).all(|(a, b)| a.len() == b.len());
    if !same_shape {
        return Err(CalibrationError::DimensionMismatch(format!(
            "{} rows vs {} rows",
            estimate.len(),
            truth.len()
        )));
    }
    let all: Vec<CellIndex>;
    let cells = match mask {
        Some(m) => m,
        None => {
            all = (0..truth.len())
                .flat_map(|i| (0..truth[i].len()).map(move |j| CellIndex::new(i, j)))
                .collect();
            &all
        }
    };
    if cells.is_empty() {
        return Err(CalibrationError::EmptyMask);
    }
    let mut sum = 0.0;
    for c in cells {
        let (Some(a), Some(b)) = (
            estimate.get(c.row).and_then(|r| r.get(c.col)),
            truth.get(c.row).and_then(|r| r.get(c.col)),
        ) else {
            return Err(CalibrationError::DimensionMismatch(format!("mask cell {c} outside grid")));
        };
        sum += (a - b).powi(2);
    }
    Ok((sum / cells.len() as f64).sqrt())
}

/// Synthetic contact law `R(F) = r0 / (1 + c·F)`. Conductance is affine in
/// force, which is the family the conductance models assume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceLaw {
    /// Unloaded resistance (MΩ).
    pub r0: f64,
    /// Sensitivity (1/N).
    pub c: f64,
}

impl Default for ForceLaw {
    fn default() -> Self {
        Self { r0: 1.0, c: 0.5 }
    }
}

impl ForceLaw {
    pub fn resistance(&self, force: f64) -> f64 {
        self.r0 / (1.0 + self.c * force.max(0.0))
    }

    pub fn force(&self, resistance: f64) -> f64 {
        ((self.r0 / resistance - 1.0) / self.c).max(0.0)
    }

    /// Cell resistance grid for a force grid.
    pub fn field_cells(&self, grid: GridSpec, forces: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..grid.rows).map(|i| (0..grid.cols).map(|j| self.resistance(forces[i][j])).collect()).collect()
    }
}

/// One calibration sweep: every cell pressed alone at each of `forces`
/// while the rest sit at the unloaded resistance. Each frame is solved with
/// `estimator` and the cell's solved conductance and raw config-A `v_r`
/// recorded.
#[allow(clippy::too_many_arguments)]
pub fn single_touch_samples(
    grid: GridSpec,
    drive: &DriveSetup,
    law: &ForceLaw,
    wire: f64,
    forces: &[f64],
    noise_std: f64,
    seed: u64,
    estimator: &Estimator,
) -> Result<Vec<CalibrationSample>, CalibrationError> {
    let mut samples = Vec::with_capacity(grid.cells() * forces.len());
    for (n, (cell, &force)) in grid.row_major().flat_map(|c| forces.iter().map(move |f| (c, f))).enumerate() {
        let field = ResistanceField::uniform(grid, law.r0, wire).with_cell(cell, law.resistance(force));
        let frame = synthesize_frame(&field, drive, noise_std, seed.wrapping_add(n as u64))?;
        let est = estimator.estimate(&frame, drive)?;
        samples.push(CalibrationSample {
            cell,
            force,
            conductance: 1.0 / est.resistance[cell.row][cell.col],
            raw_v_r: frame.reading(cell, ConfigLabel::A).v_r,
        });
    }
    Ok(samples)
}

/// Outcome of one frame of a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub timestamp: Option<u64>,
    pub conductance: Vec<Vec<f64>>,
    pub force: Vec<Vec<f64>>,
    /// Stage-one and stage-two reports; `None` when the frame failed.
    pub reports: Option<(SolveReport, SolveReport)>,
    /// Why the frame failed, if it did. Its outputs repeat the previous
    /// frame's.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamOutput {
    pub frames: Vec<FrameOutcome>,
}

impl StreamOutput {
    /// Conductance time series of one cell.
    pub fn conductance_series(&self, cell: CellIndex) -> Vec<f64> {
        self.frames.iter().map(|f| f.conductance[cell.row][cell.col]).collect()
    }

    pub fn force_series(&self, cell: CellIndex) -> Vec<f64> {
        self.frames.iter().map(|f| f.force[cell.row][cell.col]).collect()
    }
}

/// Sequential estimation over a stream. Each frame after the first starts
/// from the previous frame's solution. A frame whose estimate fails keeps the
/// previous outputs and warm start.
pub fn process_stream(
    frames: &[MeasurementFrame],
    drive: &DriveSetup,
    models: &ModelSet,
    estimator: &Estimator,
) -> Result<StreamOutput, CalibrationError> {
    let Some(first) = frames.first() else {
        return Ok(StreamOutput { frames: Vec::new() });
    };
    let grid = first.grid;
    if let Some(bad) = frames.iter().find(|f| f.grid != grid) {
        return Err(CalibrationError::DimensionMismatch(format!("stream mixes grids {grid} and {}", bad.grid)));
    }
    let mut warm: Option<StateEnsemble> = None;
    let mut last: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = None;
    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        let attempt = match &warm {
            Some(prev) => estimator.estimate_warm(frame, prev),
            None => estimator.estimate(frame, drive),
        };
        let outcome = match attempt {
            Ok(est) => {
                let conductance: Vec<Vec<f64>> = est.resistance.iter().map(|r| r.iter().map(|v| 1.0 / v).collect()).collect();
                let force = predict_forces(&est.resistance, models)?;
                last = Some((conductance.clone(), force.clone()));
                warm = est.ensemble;
                FrameOutcome {
                    timestamp: frame.timestamp,
                    conductance,
                    force,
                    reports: Some((est.feasible_report, est.regularized_report)),
                    error: None,
                }
            }
            Err(e) => {
                let (conductance, force) =
                    last.clone().unwrap_or_else(|| (vec![vec![0.0; grid.cols]; grid.rows], vec![vec![0.0; grid.cols]; grid.rows]));
                FrameOutcome { timestamp: frame.timestamp, conductance, force, reports: None, error: Some(e.to_string()) }
            }
        };
        out.push(outcome);
    }
    Ok(StreamOutput { frames: out })
}

/// Pearson correlation of two equal-length series; 0 when either is
/// constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (x, y) = (a[k] - ma, b[k] - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Largest absolute correlation between `touched`'s series and the series
/// of every cell sharing its row or column.
pub fn ghost_correlation(series: impl Fn(CellIndex) -> Vec<f64>, grid: GridSpec, touched: CellIndex) -> f64 {
    let base = series(touched);
    grid.row_major()
        .filter(|c| *c != touched && (c.row == touched.row || c.col == touched.col))
        .map(|c| pearson(&base, &series(c)).abs())
        .fold(0.0, f64::max)
}
