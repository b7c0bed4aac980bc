//! Two-stage constrained least-squares estimation of every circuit state in
//! a frame.
//!
//! Each measurement gets its own copy of the whole resistance field. Every
//! copy must reproduce its own reading exactly (Kirchhoff's current law at all
//! nodes, with the sensed electrode at the measured `v_r`), while the
//! objective pulls copies toward each other: A against B and C against D
//! ([`cost_f`]), and each configuration against the same configuration at the
//! next cell in readout order ([`cost_c`]). A second stage adds an L2 penalty
//! on wire resistance ([`cost_r`]) and restarts from the first solution.
//!
//! Internally the decision variables are log-conductances. Node voltages are
//! eliminated by the forward solve, so KCL holds by construction and the only
//! explicit constraint per state is its sensed voltage.

mod banded;
mod solver;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::EstimateError;
use crate::model::{
    frame_ordering, CellIndex, CircuitState, ConfigLabel, DriveSetup, GridSpec, MeasurementFrame, Reading,
    ResistanceField, MIN_RESISTANCE, OPEN_CIRCUIT,
};
use crate::naive::{naive_resistance, two_terminal_resistance};
use crate::sim::{build_netlist_with, solve_nodes, state_kcl_residual, Excitation};

/// Wire resistance every state starts from (MΩ).
pub const WIRE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl ObjectiveWeights {
    /// Stage one: `α = β = 1e6`, no regularization.
    pub const FEASIBLE: ObjectiveWeights = ObjectiveWeights { alpha: 1e6, beta: 1e6, lambda: 0.0 };
    /// Stage two: `α = β = 1`, `λ = 1e9`.
    pub const REGULARIZED: ObjectiveWeights = ObjectiveWeights { alpha: 1.0, beta: 1.0, lambda: 1e9 };

    pub fn check(&self) -> Result<(), EstimateError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.alpha) && ok(self.beta) && ok(self.lambda) {
            Ok(())
        } else {
            Err(crate::error::ModelError::Parse(format!("objective weights must be non-negative: {self:?}")).into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Largest KCL residual (µA) a converged solution may carry.
    pub feasibility_tol: f64,
    /// Relative objective decrease below which the solve stops.
    pub stationarity_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 200, feasibility_tol: 1e-6, stationarity_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective: f64,
    /// Largest KCL residual over all states and nodes (µA).
    pub max_kcl_residual: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub converged: bool,
}

/// One circuit state per measurement, in [`frame_ordering`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEnsemble {
    pub grid: GridSpec,
    pub drive: DriveSetup,
    pub frame: MeasurementFrame,
    pub states: Vec<CircuitState>,
}

/// The reading a state is asked to reproduce. Readings a physical divider
/// cannot produce (`v_r` outside `(0, v_s)` or implying a resistance beyond
/// the representable range) are moved to the nearest producible value.
fn bound_reading(reading: Reading, cell: CellIndex, label: ConfigLabel, r_ref_ground: f64) -> Result<Reading, EstimateError> {
    if !(reading.v_s > 0.0) || !reading.v_s.is_finite() {
        return Err(EstimateError::InvalidReading { cell, label: label.to_string(), v_s: reading.v_s });
    }
    let r = two_terminal_resistance(reading, r_ref_ground);
    let in_range = reading.v_r > 0.0 && reading.v_r < reading.v_s && r > MIN_RESISTANCE && r < OPEN_CIRCUIT;
    if in_range {
        Ok(reading)
    } else {
        Ok(Reading::new(reading.v_s, reading.v_s * r_ref_ground / (r + r_ref_ground)))
    }
}

impl StateEnsemble {
    pub fn state_index(&self, position: usize, label: ConfigLabel) -> usize {
        4 * position + label.index()
    }

    /// State measuring `cell` under `label`.
    pub fn state(&self, cell: CellIndex, label: ConfigLabel) -> &CircuitState {
        let pos = cell.col * self.grid.rows + cell.row;
        &self.states[self.state_index(pos, label)]
    }

    /// Keeps every state's resistances, binds the states to `frame` and
    /// recomputes node voltages. This is the warm start for the next frame of
    /// a stream.
    pub fn rebind(&self, frame: &MeasurementFrame) -> Result<StateEnsemble, EstimateError> {
        if frame.grid != self.grid {
            return Err(EstimateError::GridMismatch { frame: frame.grid.to_string(), ensemble: self.grid.to_string() });
        }
        let fields: Vec<ResistanceField> = self.states.iter().map(|s| s.field.clone()).collect();
        assemble_ensemble(frame, &self.drive, fields)
    }

    /// Largest KCL residual over all states (µA).
    pub fn max_kcl_residual(&self) -> f64 {
        self.states.iter().map(|s| state_kcl_residual(s, self.drive.r_ref_ground)).fold(0.0, f64::max)
    }

    /// Final per-cell estimate: mean over the cell's four states of that
    /// state's own value for the cell.
    pub fn cell_resistances(&self) -> Vec<Vec<f64>> {
        let g = self.grid;
        (0..g.rows)
            .map(|i| {
                (0..g.cols)
                    .map(|j| {
                        let cell = CellIndex::new(i, j);
                        ConfigLabel::ALL.iter().map(|&k| self.state(cell, k).field.cell[i][j]).sum::<f64>() / 4.0
                    })
                    .collect()
            })
            .collect()
    }
}

fn assemble_ensemble(
    frame: &MeasurementFrame,
    drive: &DriveSetup,
    fields: Vec<ResistanceField>,
) -> Result<StateEnsemble, EstimateError> {
    let grid = frame.grid;
    let mut states = Vec::with_capacity(grid.states());
    for ((cell, config), field) in frame_ordering(grid).into_iter().zip(fields) {
        let data = bound_reading(frame.reading(cell, config.label), cell, config.label, drive.r_ref_ground)?;
        let net = build_netlist_with(&field, Excitation::Clamped { v_s: data.v_s }, drive.r_ref_ground, config, cell)?;
        let v = solve_nodes(&net)?;
        let pick = |f: &dyn Fn(CellIndex) -> usize| -> Vec<Vec<f64>> {
            (0..grid.rows).map(|i| (0..grid.cols).map(|j| v.at(f(CellIndex::new(i, j)))).collect()).collect()
        };
        let v_top = pick(&|c| net.nodes.top(c));
        let v_bottom = pick(&|c| net.nodes.bottom(c));
        states.push(CircuitState { config, cell, field, v_top, v_bottom, v_s: data.v_s, v_r: data.v_r });
    }
    Ok(StateEnsemble { grid, drive: *drive, frame: frame.clone(), states })
}

/// Initial ensemble: every state gets the naive cell resistances, wires at
/// [`WIRE_FLOOR`], and node voltages from a forward solve with the driven
/// electrode at the measured `v_s`.
pub fn bootstrap_states(frame: &MeasurementFrame, drive: &DriveSetup) -> Result<StateEnsemble, EstimateError> {
    frame.check()?;
    drive.check()?;
    let naive = naive_resistance(frame, drive);
    let mut field = ResistanceField::uniform(frame.grid, 1.0, WIRE_FLOOR);
    field.cell = naive;
    assemble_ensemble(frame, drive, vec![field; frame.grid.states()])
}

fn conductances(field: &ResistanceField) -> impl Iterator<Item = f64> + '_ {
    field.cell.iter().chain(&field.top_wire).chain(&field.bottom_wire).flatten().map(|r| 1.0 / r)
}

fn sq_diff(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Discrepancy between the A/B and C/D states of every cell over all
/// resistances (as conductances) and node voltages.
pub fn cost_f(ensemble: &StateEnsemble) -> f64 {
    let mut total = 0.0;
    for pos in 0..ensemble.grid.cells() {
        for (p, q) in [(ConfigLabel::A, ConfigLabel::B), (ConfigLabel::C, ConfigLabel::D)] {
            let a = &ensemble.states[ensemble.state_index(pos, p)];
            let b = &ensemble.states[ensemble.state_index(pos, q)];
            total += sq_diff(conductances(&a.field), conductances(&b.field));
            total += sq_diff(a.v_top.iter().flatten().copied(), b.v_top.iter().flatten().copied());
            total += sq_diff(a.v_bottom.iter().flatten().copied(), b.v_bottom.iter().flatten().copied());
        }
    }
    total
}

/// Discrepancy between same-configuration states of consecutive cells in
/// readout order, over resistances only (as conductances).
pub fn cost_c(ensemble: &StateEnsemble) -> f64 {
    let mut total = 0.0;
    for pos in 0..ensemble.grid.cells().saturating_sub(1) {
        for k in ConfigLabel::ALL {
            let a = &ensemble.states[ensemble.state_index(pos, k)];
            let b = &ensemble.states[ensemble.state_index(pos + 1, k)];
            total += sq_diff(conductances(&a.field), conductances(&b.field));
        }
    }
    total
}

/// Sum of squared wire resistances (MΩ²) over all states.
pub fn cost_r(ensemble: &StateEnsemble) -> f64 {
    ensemble
        .states
        .iter()
        .map(|s| s.field.top_wire.iter().chain(&s.field.bottom_wire).flatten().map(|r| r * r).sum::<f64>())
        .sum()
}

/// `α·cost_f + β·cost_c + λ·cost_r`.
pub fn objective(ensemble: &StateEnsemble, w: &ObjectiveWeights) -> f64 {
    let mut total = w.alpha * cost_f(ensemble) + w.beta * cost_c(ensemble);
    if w.lambda != 0.0 {
        total += w.lambda * cost_r(ensemble);
    }
    total
}

fn run_stage(
    ensemble: &StateEnsemble,
    weights: &ObjectiveWeights,
    options: &SolverOptions,
) -> Result<(StateEnsemble, SolveReport), EstimateError> {
    weights.check()?;
    let start = Instant::now();
    let outcome = solver::minimize(ensemble, weights, options)?;
    let solved = assemble_ensemble(&ensemble.frame, &ensemble.drive, outcome.fields)?;
    let max_kcl_residual = solved.max_kcl_residual();
    let report = SolveReport {
        objective: objective(&solved, weights),
        max_kcl_residual,
        iterations: outcome.iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged: outcome.stationary && max_kcl_residual <= options.feasibility_tol,
    };
    Ok((solved, report))
}

/// Stage one: minimize `α·cost_f + β·cost_c` over feasible ensembles.
pub fn solve_feasible(
    ensemble: &StateEnsemble,
    weights: &ObjectiveWeights,
) -> Result<(StateEnsemble, SolveReport), EstimateError> {
    run_stage(ensemble, weights, &SolverOptions::default())
}

pub fn solve_feasible_with(
    ensemble: &StateEnsemble,
    weights: &ObjectiveWeights,
    options: &SolverOptions,
) -> Result<(StateEnsemble, SolveReport), EstimateError> {
    run_stage(ensemble, weights, options)
}

/// Stage two: the same program with the wire penalty, started from the
/// stage-one ensemble.
pub fn solve_regularized(
    ensemble: &StateEnsemble,
    weights: &ObjectiveWeights,
) -> Result<(StateEnsemble, SolveReport), EstimateError> {
    run_stage(ensemble, weights, &SolverOptions::default())
}

pub fn solve_regularized_with(
    ensemble: &StateEnsemble,
    weights: &ObjectiveWeights,
    options: &SolverOptions,
) -> Result<(StateEnsemble, SolveReport), EstimateError> {
    run_stage(ensemble, weights, options)
}

/// Result of a full two-stage estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimate {
    /// Final per-cell resistances (MΩ), after regularization.
    pub resistance: Vec<Vec<f64>>,
    /// Per-cell resistances after stage one.
    pub feasible_resistance: Vec<Vec<f64>>,
    pub feasible_report: SolveReport,
    pub regularized_report: SolveReport,
    #[serde(skip)]
    pub ensemble: Option<StateEnsemble>,
}

/// Settings for [`Estimator`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub feasible: ObjectiveWeights,
    pub regularized: ObjectiveWeights,
    pub options: SolverOptions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            feasible: ObjectiveWeights::FEASIBLE,
            regularized: ObjectiveWeights::REGULARIZED,
            options: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Estimator {
    pub config: EstimatorConfig,
}

impl Estimator {
    pub fn new(config: EstimatorConfig) -> Self {
        Self { config }
    }

    /// Bootstrap, stage one, stage two.
    pub fn estimate(&self, frame: &MeasurementFrame, drive: &DriveSetup) -> Result<Estimate, EstimateError> {
        let start = bootstrap_states(frame, drive)?;
        self.estimate_from(start)
    }

    /// Both stages started from `previous`'s resistances rebound to `frame`.
    pub fn estimate_warm(&self, frame: &MeasurementFrame, previous: &StateEnsemble) -> Result<Estimate, EstimateError> {
        frame.check()?;
        self.estimate_from(previous.rebind(frame)?)
    }

    fn estimate_from(&self, start: StateEnsemble) -> Result<Estimate, EstimateError> {
        let c = &self.config;
        let (feasible, feasible_report) = run_stage(&start, &c.feasible, &c.options)?;
        let (regularized, regularized_report) = run_stage(&feasible, &c.regularized, &c.options)?;
        Ok(Estimate {
            resistance: regularized.cell_resistances(),
            feasible_resistance: feasible.cell_resistances(),
            feasible_report,
            regularized_report,
            ensemble: Some(regularized),
        })
    }
}

/// Full estimate with default solver options.
pub fn estimate(
    frame: &MeasurementFrame,
    drive: &DriveSetup,
    weights_lsq: &ObjectiveWeights,
    weights_reg: &ObjectiveWeights,
) -> Result<Estimate, EstimateError> {
    Estimator::new(EstimatorConfig { feasible: *weights_lsq, regularized: *weights_reg, options: SolverOptions::default() })
        .estimate(frame, drive)
}
