//! Scenario runners. Each returns its artifacts in memory; [`RunOutput::write`]
//! is the only place that touches the file system, so file order and bytes
//! depend on nothing but the configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crossbar_core::calibration::{
    fit_models, ghost_correlation, predict_forces, process_stream, rmse, single_touch_samples, CalibrationSample,
    FeatureKind, ModelSet,
};
use crossbar_core::naive::{naive_force_baseline, naive_resistance};
use crossbar_core::optimizer::{Estimate, Estimator, EstimatorConfig, SolverOptions};
use crossbar_core::sim::synthesize_frame;
use crossbar_core::{CellIndex, MeasurementFrame, ResistanceField};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Scenario};
use crate::error::HarnessError;
use crate::heatmap::render_pgm;

/// A named output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    /// Human-readable table for stdout.
    pub summary: String,
    /// Points or frames that failed or did not converge.
    pub failures: usize,
}

impl RunOutput {
    /// Writes every artifact under `dir`, in order.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| HarnessError::Io { path, source }
        };
        let mut written = Vec::with_capacity(self.artifacts.len());
        for a in &self.artifacts {
            let path = dir.join(&a.name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(io(parent))?;
            }
            std::fs::write(&path, &a.bytes).map_err(io(&path))?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

/// Stateless helpers shared by the runners.
fn estimator(cfg: &ExperimentConfig) -> Estimator {
    Estimator::new(EstimatorConfig {
        feasible: cfg.weights_lsq,
        regularized: cfg.weights_reg,
        options: SolverOptions::default(),
    })
}

fn json(name: &str, value: &impl Serialize) -> Result<Artifact, HarnessError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(Artifact { name: name.into(), bytes })
}

fn csv_rows<R: Serialize>(name: &str, rows: &[R]) -> Result<Artifact, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))?;
    Ok(Artifact { name: name.into(), bytes })
}

fn heatmap(name: String, values: &[Vec<f64>], scale: (f64, f64), block: usize) -> Result<Artifact, HarnessError> {
    Ok(Artifact { name, bytes: render_pgm(values, scale, block)? })
}

fn pressed_field(cfg: &ExperimentConfig, cell_value: f64, wire: f64) -> ResistanceField {
    let mut field = ResistanceField::uniform(cfg.grid, cfg.unpressed_resistance, wire);
    for c in &cfg.pressed_cells {
        field.cell[c.row][c.col] = cell_value;
    }
    field
}

fn converged(est: &Estimate) -> bool {
    est.feasible_report.converged && est.regularized_report.converged
}

fn conductances(r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    r.iter().map(|row| row.iter().map(|v| 1.0 / v).collect()).collect()
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    cfg.check()?;
    let mut out = match cfg.scenario {
        Scenario::WireSweep | Scenario::CellSweep | Scenario::GhostDemo | Scenario::Custom => run_sweep(cfg)?,
        Scenario::ForcePipeline => run_force_pipeline(cfg)?,
        Scenario::StreamReplay => run_stream_replay(cfg)?,
    };
    out.artifacts.insert(0, json("config.json", cfg)?);
    Ok(out)
}

/// One row of `records.csv`. Failed points keep their row with NaN metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub index: usize,
    /// Wire resistance (wire sweep, ghost demo, custom) or pressed-cell
    /// resistance (cell sweep), MΩ.
    pub value: f64,
    pub naive_rmse: f64,
    pub feasible_rmse: f64,
    pub regularized_rmse: f64,
    pub feasible_objective: f64,
    pub regularized_objective: f64,
    pub iterations: usize,
    /// Solver's own KCL residual (µA).
    pub max_kcl_residual: f64,
    pub converged: bool,
    pub error: Option<String>,
}

/// Grids behind one sweep record.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub record: SweepRecord,
    pub truth: ResistanceField,
    pub frame: MeasurementFrame,
    pub naive: Vec<Vec<f64>>,
    pub estimate: Option<Estimate>,
}

/// Ground truth of every point of a sweep-type scenario, in order.
pub fn sweep_fields(cfg: &ExperimentConfig) -> Result<Vec<(f64, ResistanceField)>, HarnessError> {
    Ok(match cfg.scenario {
        Scenario::WireSweep | Scenario::GhostDemo => {
            cfg.sweep_values.iter().map(|&w| (w, pressed_field(cfg, cfg.pressed_resistance, w))).collect()
        }
        Scenario::CellSweep => {
            cfg.sweep_values.iter().map(|&r| (r, pressed_field(cfg, r, cfg.wire_resistance))).collect()
        }
        Scenario::Custom => {
            let field = match &cfg.field_file {
                Some(path) => {
                    let text =
                        std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
                    let f = ResistanceField::from_json(&text)?;
                    if f.grid() != cfg.grid {
                        return Err(HarnessError::Config(format!(
                            "field file is {} but grid is {}",
                            f.grid(),
                            cfg.grid
                        )));
                    }
                    f
                }
                None => pressed_field(cfg, cfg.pressed_resistance, cfg.wire_resistance),
            };
            vec![(cfg.wire_resistance, field)]
        }
        Scenario::ForcePipeline | Scenario::StreamReplay => {
            return Err(HarnessError::Config(format!("{:?} is not a sweep scenario", cfg.scenario)))
        }
    })
}

/// Runs every point, in parallel, keeping order. A point whose synthesis
/// fails is an error; a point whose estimate fails is recorded as failed.
pub fn sweep_points(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>, HarnessError> {
    let est = estimator(cfg);
    sweep_fields(cfg)?
        .into_par_iter()
        .enumerate()
        .map(|(index, (value, truth))| {
            let frame = synthesize_frame(&truth, &cfg.drive, cfg.noise_std, cfg.seed.wrapping_add(index as u64))?;
            let naive = naive_resistance(&frame, &cfg.drive);
            let naive_rmse = rmse(&naive, &truth.cell, None)?;
            let mut record = SweepRecord {
                index,
                value,
                naive_rmse,
                feasible_rmse: f64::NAN,
                regularized_rmse: f64::NAN,
                feasible_objective: f64::NAN,
                regularized_objective: f64::NAN,
                iterations: 0,
                max_kcl_residual: f64::NAN,
                converged: false,
                error: None,
            };
            let estimate = match est.estimate(&frame, &cfg.drive) {
                Ok(e) => {
                    record.feasible_rmse = rmse(&e.feasible_resistance, &truth.cell, None)?;
                    record.regularized_rmse = rmse(&e.resistance, &truth.cell, None)?;
                    record.feasible_objective = e.feasible_report.objective;
                    record.regularized_objective = e.regularized_report.objective;
                    record.iterations = e.feasible_report.iterations + e.regularized_report.iterations;
                    record.max_kcl_residual =
                        e.feasible_report.max_kcl_residual.max(e.regularized_report.max_kcl_residual);
                    record.converged = converged(&e);
                    Some(e)
                }
                Err(e) => {
                    record.error = Some(e.to_string());
                    None
                }
            };
            Ok(SweepPoint { record, truth, frame, naive, estimate })
        })
        .collect()
}

/// Per unpressed cell of a ghost demo.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GhostRow {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub truth: f64,
    pub naive: f64,
    pub estimate: f64,
    pub naive_false_touch: bool,
    pub estimate_false_touch: bool,
}

fn run_sweep(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let points = sweep_points(cfg)?;
    let scale = (0.0, cfg.unpressed_resistance);
    let mut artifacts = Vec::new();
    let records: Vec<SweepRecord> = points.iter().map(|p| p.record.clone()).collect();
    artifacts.push(csv_rows("records.csv", &records)?);
    artifacts.push(json("records.json", &records)?);
    let mut ghosts = Vec::new();
    for p in &points {
        let k = p.record.index;
        let mut panels: Vec<(&str, &[Vec<f64>])> = vec![("truth", &p.truth.cell), ("naive", &p.naive)];
        if let Some(e) = &p.estimate {
            panels.push(("feasible", &e.feasible_resistance));
            panels.push(("regularized", &e.resistance));
        }
        for (label, grid) in panels {
            artifacts.push(heatmap(format!("heatmaps/{k:02}_{label}.pgm"), grid, scale, cfg.heatmap_block)?);
        }
        if cfg.scenario == Scenario::GhostDemo {
            let threshold = 0.5 * cfg.unpressed_resistance;
            let estimate = p.estimate.as_ref().map(|e| &e.resistance);
            for c in cfg.grid.row_major().filter(|c| !cfg.pressed_cells.contains(c)) {
                let est = estimate.map_or(f64::NAN, |r| r[c.row][c.col]);
                ghosts.push(GhostRow {
                    index: k,
                    row: c.row,
                    col: c.col,
                    truth: p.truth.cell[c.row][c.col],
                    naive: p.naive[c.row][c.col],
                    estimate: est,
                    naive_false_touch: p.naive[c.row][c.col] < threshold,
                    estimate_false_touch: !(est > threshold),
                });
            }
        }
    }
    if !ghosts.is_empty() {
        artifacts.push(csv_rows("ghost.csv", &ghosts)?);
    }
    let mut summary = format!(
        "{:>5} {:>12} {:>12} {:>12} {:>12} {:>9}\n",
        "point", "value", "naive", "feasible", "regularized", "converged"
    );
    for r in &records {
        let _ = writeln!(
            summary,
            "{:>5} {:>12.4e} {:>12.6} {:>12.6} {:>12.6} {:>9}",
            r.index, r.value, r.naive_rmse, r.feasible_rmse, r.regularized_rmse, r.converged
        );
    }
    for g in &ghosts {
        let _ = writeln!(
            summary,
            "unpressed ({},{}): naive {:.4} estimate {:.4}",
            g.row, g.col, g.naive, g.estimate
        );
    }
    let failures = records.iter().filter(|r| !r.converged).count();
    Ok(RunOutput { artifacts, summary, failures })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ModelRow {
    row: usize,
    col: usize,
    feature: FeatureKind,
    slope: f64,
    intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SampleRow {
    row: usize,
    col: usize,
    force: f64,
    conductance: f64,
    raw_v_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ForceRow {
    row: usize,
    col: usize,
    truth: f64,
    solved: f64,
    raw_voltage: f64,
}

/// Outcome of the calibration plus multi-touch run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForceReport {
    pub solved_rmse: f64,
    pub raw_voltage_rmse: f64,
    /// `(raw - solved) / raw * 100`; 0 when both are 0.
    pub improvement_percent: f64,
    pub converged: bool,
    pub iterations: usize,
    pub calibration_frames: usize,
}

/// Percentage reduction of `ours` against `naive`.
pub fn improvement_percent(naive: f64, ours: f64) -> f64 {
    if naive == 0.0 {
        if ours == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        (naive - ours) / naive * 100.0
    }
}

fn model_rows(models: &ModelSet) -> Vec<ModelRow> {
    models
        .models
        .iter()
        .map(|m| ModelRow { row: m.cell.row, col: m.cell.col, feature: m.feature, slope: m.slope, intercept: m.intercept })
        .collect()
}

fn calibrate(cfg: &ExperimentConfig, est: &Estimator) -> Result<(Vec<CalibrationSample>, ModelSet, ModelSet), HarnessError> {
    let samples = single_touch_samples(
        cfg.grid,
        &cfg.drive,
        &cfg.force_law,
        cfg.wire_resistance,
        &cfg.calibration_forces,
        cfg.noise_std,
        cfg.seed,
        est,
    )?;
    let solved = fit_models(&samples, FeatureKind::SolvedConductance)?;
    let raw = fit_models(&samples, FeatureKind::RawVoltage)?;
    Ok((samples, solved, raw))
}

fn run_force_pipeline(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let est = estimator(cfg);
    let (samples, solved_models, raw_models) = calibrate(cfg, &est)?;
    let g = cfg.grid;
    let mut forces = vec![vec![0.0; g.cols]; g.rows];
    for t in &cfg.touches {
        forces[t.cell.row][t.cell.col] += t.force;
    }
    let mut field = ResistanceField::uniform(g, cfg.force_law.r0, cfg.wire_resistance);
    field.cell = cfg.force_law.field_cells(g, &forces);
    let frame = synthesize_frame(&field, &cfg.drive, cfg.noise_std, cfg.seed.wrapping_add(samples.len() as u64))?;
    let e = est.estimate(&frame, &cfg.drive)?;
    let solved = predict_forces(&e.resistance, &solved_models)?;
    let raw = naive_force_baseline(&frame, &raw_models)?;
    let solved_rmse = rmse(&solved, &forces, None)?;
    let raw_voltage_rmse = rmse(&raw, &forces, None)?;
    let report = ForceReport {
        solved_rmse,
        raw_voltage_rmse,
        improvement_percent: improvement_percent(raw_voltage_rmse, solved_rmse),
        converged: converged(&e),
        iterations: e.feasible_report.iterations + e.regularized_report.iterations,
        calibration_frames: samples.len(),
    };
    let sample_rows: Vec<SampleRow> = samples
        .iter()
        .map(|s| SampleRow { row: s.cell.row, col: s.cell.col, force: s.force, conductance: s.conductance, raw_v_r: s.raw_v_r })
        .collect();
    let mut models = model_rows(&solved_models);
    models.extend(model_rows(&raw_models));
    let rows: Vec<ForceRow> = g
        .row_major()
        .map(|c| ForceRow {
            row: c.row,
            col: c.col,
            truth: forces[c.row][c.col],
            solved: solved[c.row][c.col],
            raw_voltage: raw[c.row][c.col],
        })
        .collect();
    let top = forces.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    // bright = strong press
    let scale = (top, 0.0);
    let mut artifacts = vec![
        csv_rows("calibration_samples.csv", &sample_rows)?,
        csv_rows("models.csv", &models)?,
        csv_rows("forces.csv", &rows)?,
        json("report.json", &report)?,
    ];
    for (label, grid) in [("truth", &forces), ("solved", &solved), ("raw_voltage", &raw)] {
        artifacts.push(heatmap(format!("heatmaps/force_{label}.pgm"), grid, scale, cfg.heatmap_block)?);
    }
    let mut summary = format!("{:>9} {:>9} {:>9} {:>11}\n", "cell", "truth", "solved", "raw-volt");
    for r in &rows {
        let _ = writeln!(summary, "{:>9} {:>9.4} {:>9.4} {:>11.4}", format!("({},{})", r.row, r.col), r.truth, r.solved, r.raw_voltage);
    }
    let _ = writeln!(
        summary,
        "RMSE solved {solved_rmse:.4} N, raw voltage {raw_voltage_rmse:.4} N, improvement {:.1}%",
        report.improvement_percent
    );
    Ok(RunOutput { artifacts, summary, failures: usize::from(!report.converged) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SeriesRow {
    frame: usize,
    timestamp: Option<u64>,
    row: usize,
    col: usize,
    conductance: f64,
    force: f64,
    naive_conductance: f64,
    raw_voltage_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamReport {
    pub frames: usize,
    pub failed_frames: usize,
    pub unconverged_frames: usize,
    pub touched: CellIndex,
    /// Largest |Pearson r| between the touched cell's conductance series and
    /// any cell sharing its row or column.
    pub ghost_correlation_solved: f64,
    pub ghost_correlation_naive: f64,
    pub cold_iterations: usize,
    pub mean_warm_iterations: f64,
}

/// The frames a stream replay runs on.
pub fn stream_frames(cfg: &ExperimentConfig) -> Result<Vec<MeasurementFrame>, HarnessError> {
    if let Some(path) = &cfg.frames_file {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
        let malformed = |reason: String| HarnessError::FrameFile { path: path.clone(), reason };
        let frames: Vec<MeasurementFrame> = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
        for (k, f) in frames.iter().enumerate() {
            f.check().map_err(|e| malformed(format!("frame {k}: {e}")))?;
            if f.grid != cfg.grid {
                return Err(malformed(format!("frame {k} is {} but grid is {}", f.grid, cfg.grid)));
            }
        }
        return Ok(frames);
    }
    let s = &cfg.stream;
    (0..s.frames)
        .map(|t| {
            let mut field = pressed_field(cfg, cfg.pressed_resistance, cfg.wire_resistance);
            for c in cfg.grid.row_major().filter(|c| !cfg.pressed_cells.contains(c)) {
                field.cell[c.row][c.col] = cfg.force_law.r0;
            }
            let pressed = (s.press.0..s.press.1).contains(&t);
            field.cell[s.touched.row][s.touched.col] = cfg.force_law.resistance(if pressed { s.force } else { 0.0 });
            let mut frame = synthesize_frame(&field, &cfg.drive, cfg.noise_std, cfg.seed.wrapping_add(t as u64))?;
            frame.timestamp = Some(t as u64);
            Ok(frame)
        })
        .collect()
}

fn run_stream_replay(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let est = estimator(cfg);
    let frames = stream_frames(cfg)?;
    let calib = ExperimentConfig { noise_std: 0.0, ..cfg.clone() };
    let (_, solved_models, raw_models) = calibrate(&calib, &est)?;
    let out = process_stream(&frames, &cfg.drive, &solved_models, &est)?;
    let naive: Vec<Vec<Vec<f64>>> = frames.iter().map(|f| conductances(&naive_resistance(f, &cfg.drive))).collect();
    let raw: Vec<Vec<Vec<f64>>> =
        frames.iter().map(|f| naive_force_baseline(f, &raw_models)).collect::<Result<_, _>>()?;
    let touched = cfg.stream.touched;
    let naive_series = |c: CellIndex| naive.iter().map(|g| g[c.row][c.col]).collect::<Vec<_>>();
    let iterations: Vec<usize> = out
        .frames
        .iter()
        .filter_map(|f| f.reports.map(|(a, b)| a.iterations + b.iterations))
        .collect();
    let warm = iterations.get(1..).unwrap_or(&[]);
    let report = StreamReport {
        frames: frames.len(),
        failed_frames: out.frames.iter().filter(|f| f.error.is_some()).count(),
        unconverged_frames: out
            .frames
            .iter()
            .filter(|f| f.reports.is_some_and(|(a, b)| !(a.converged && b.converged)))
            .count(),
        touched,
        ghost_correlation_solved: ghost_correlation(|c| out.conductance_series(c), cfg.grid, touched),
        ghost_correlation_naive: ghost_correlation(naive_series, cfg.grid, touched),
        cold_iterations: iterations.first().copied().unwrap_or(0),
        mean_warm_iterations: if warm.is_empty() { 0.0 } else { warm.iter().sum::<usize>() as f64 / warm.len() as f64 },
    };
    let mut rows = Vec::with_capacity(frames.len() * cfg.grid.cells());
    for (k, f) in out.frames.iter().enumerate() {
        for c in cfg.grid.row_major() {
            rows.push(SeriesRow {
                frame: k,
                timestamp: f.timestamp,
                row: c.row,
                col: c.col,
                conductance: f.conductance[c.row][c.col],
                force: f.force[c.row][c.col],
                naive_conductance: naive[k][c.row][c.col],
                raw_voltage_force: raw[k][c.row][c.col],
            });
        }
    }
    let errors: Vec<(usize, &str)> =
        out.frames.iter().enumerate().filter_map(|(k, f)| f.error.as_deref().map(|e| (k, e))).collect();
    let mut summary = format!(
        "{} frames, touched {}: ghost correlation solved {:.4}, naive {:.4}\n",
        report.frames, touched, report.ghost_correlation_solved, report.ghost_correlation_naive
    );
    let _ = writeln!(
        summary,
        "iterations: cold {}, mean warm {:.1}",
        report.cold_iterations, report.mean_warm_iterations
    );
    for (k, e) in &errors {
        let _ = writeln!(summary, "frame {k} failed: {e}");
    }
    let failures = report.failed_frames + report.unconverged_frames;
    let artifacts = vec![csv_rows("series.csv", &rows)?, json("report.json", &report)?];
    Ok(RunOutput { artifacts, summary, failures })
}
