//! Experiment configuration: per-scenario defaults, JSON overlay, flag
//! overrides.

use std::path::PathBuf;

use crossbar_core::calibration::ForceLaw;
use crossbar_core::optimizer::ObjectiveWeights;
use crossbar_core::{CellIndex, DriveSetup, GridSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Scenario {
    WireSweep,
    CellSweep,
    GhostDemo,
    ForcePipeline,
    StreamReplay,
    Custom,
}

/// A load applied to one cell (N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Touch {
    pub cell: CellIndex,
    pub force: f64,
}

/// Synthetic press-and-release script for stream replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamScript {
    pub frames: usize,
    pub touched: CellIndex,
    pub force: f64,
    /// First and one-past-last frame of the press.
    pub press: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub grid: GridSpec,
    pub drive: DriveSetup,
    /// Wire resistances (wire sweep) or pressed-cell resistances (cell
    /// sweep), MΩ.
    pub sweep_values: Vec<f64>,
    pub pressed_cells: Vec<CellIndex>,
    pub pressed_resistance: f64,
    pub unpressed_resistance: f64,
    pub wire_resistance: f64,
    pub noise_std: f64,
    pub weights_lsq: ObjectiveWeights,
    pub weights_reg: ObjectiveWeights,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub force_law: ForceLaw,
    pub calibration_forces: Vec<f64>,
    pub touches: Vec<Touch>,
    pub stream: StreamScript,
    /// Recorded frames (JSON array) to replay instead of the synthetic script.
    pub frames_file: Option<PathBuf>,
    /// Ground-truth field (JSON) for the custom scenario.
    pub field_file: Option<PathBuf>,
    /// Heatmap pixels per cell edge.
    pub heatmap_block: usize,
}

fn cells(list: &[(usize, usize)]) -> Vec<CellIndex> {
    list.iter().map(|&(r, c)| CellIndex::new(r, c)).collect()
}

impl ExperimentConfig {
    pub fn defaults(scenario: Scenario) -> Self {
        let three = GridSpec { rows: 3, cols: 3 };
        let two = GridSpec { rows: 2, cols: 2 };
        let base = ExperimentConfig {
            scenario,
            grid: three,
            drive: DriveSetup::default(),
            sweep_values: vec![1e-4, 1e-3, 5e-3, 2e-2, 4.1e-2],
            pressed_cells: cells(&[(0, 0), (0, 2), (2, 0)]),
            pressed_resistance: 0.001,
            unpressed_resistance: 1.0,
            wire_resistance: 0.001,
            noise_std: 0.0,
            weights_lsq: ObjectiveWeights::FEASIBLE,
            weights_reg: ObjectiveWeights::REGULARIZED,
            seed: 0,
            out_dir: PathBuf::from("out"),
            force_law: ForceLaw::default(),
            calibration_forces: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            touches: vec![
                Touch { cell: CellIndex::new(0, 0), force: 2.0 },
                Touch { cell: CellIndex::new(1, 0), force: 4.0 },
            ],
            stream: StreamScript { frames: 10, touched: CellIndex::new(1, 1), force: 6.0, press: (3, 7) },
            frames_file: None,
            field_file: None,
            heatmap_block: 8,
        };
        match scenario {
            Scenario::WireSweep => base,
            Scenario::CellSweep => ExperimentConfig { sweep_values: vec![0.01, 0.05, 0.1, 0.3, 0.5, 0.7], ..base },
            Scenario::GhostDemo => ExperimentConfig {
                grid: two,
                pressed_cells: cells(&[(0, 0), (0, 1), (1, 0)]),
                sweep_values: vec![0.001],
                ..base
            },
            Scenario::ForcePipeline => ExperimentConfig { grid: two, wire_resistance: 5e-4, pressed_cells: vec![], ..base },
            Scenario::StreamReplay => ExperimentConfig {
                grid: two,
                wire_resistance: 1e-4,
                noise_std: 1e-4,
                pressed_cells: cells(&[(0, 0)]),
                pressed_resistance: ForceLaw::default().resistance(4.0),
                ..base
            },
            Scenario::Custom => ExperimentConfig { grid: two, pressed_cells: cells(&[(0, 0)]), ..base },
        }
    }

    /// Defaults for the file's (or `scenario`'s) scenario with the file's
    /// keys laid over them.
    pub fn from_json(text: &str, scenario: Option<Scenario>) -> Result<Self, HarnessError> {
        let overlay: Value = serde_json::from_str(text)?;
        let Value::Object(map) = overlay else {
            return Err(HarnessError::Config("config file must hold a JSON object".into()));
        };
        let chosen = match scenario {
            Some(s) => s,
            None => match map.get("scenario") {
                Some(v) => serde_json::from_value(v.clone())?,
                None => Scenario::WireSweep,
            },
        };
        let Value::Object(mut merged) = serde_json::to_value(Self::defaults(chosen))? else {
            unreachable!("config serializes to an object")
        };
        for (k, v) in map {
            if !merged.contains_key(&k) {
                return Err(HarnessError::Config(format!("unknown config key {k:?}")));
            }
            merged.insert(k, v);
        }
        merged.insert("scenario".into(), serde_json::to_value(chosen)?);
        let cfg: ExperimentConfig = serde_json::from_value(Value::Object(merged))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        self.drive.check()?;
        self.weights_lsq.check()?;
        self.weights_reg.check()?;
        let bad = |m: String| Err(HarnessError::Config(m));
        if let Some(v) = self.sweep_values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return bad(format!("sweep values must be positive, got {v}"));
        }
        let touches = match self.scenario {
            Scenario::ForcePipeline => self.touches.iter().map(|t| t.cell).collect(),
            Scenario::StreamReplay => vec![self.stream.touched],
            _ => Vec::new(),
        };
        if let Some(c) = self.pressed_cells.iter().chain(&touches).find(|c| !self.grid.contains(**c)) {
            return bad(format!("cell {c} is outside the {} grid", self.grid));
        }
        if !(self.noise_std >= 0.0) {
            return bad(format!("noise_std must be non-negative, got {}", self.noise_std));
        }
        if self.heatmap_block == 0 {
            return bad("heatmap_block must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_keys_override_scenario_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"scenario": "cell-sweep", "sweep_values": [0.2], "seed": 5}"#, None).unwrap();
        assert_eq!(cfg.scenario, Scenario::CellSweep);
        assert_eq!(cfg.sweep_values, vec![0.2]);
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.wire_resistance, 0.001);
        assert_eq!(cfg.grid, GridSpec { rows: 3, cols: 3 });
    }

    #[test]
    fn explicit_scenario_wins_over_file() {
        let cfg = ExperimentConfig::from_json(r#"{"scenario": "cell-sweep"}"#, Some(Scenario::GhostDemo)).unwrap();
        assert_eq!(cfg.scenario, Scenario::GhostDemo);
        assert_eq!(cfg.pressed_cells.len(), 3);
    }

    #[test]
    fn rejects_bad_configs() {
        let err = |text: &str| ExperimentConfig::from_json(text, None).unwrap_err();
        assert!(matches!(err(r#"{"sweep_value": [1]}"#), HarnessError::Config(_)));
        assert!(matches!(err(r#"{"sweep_values": [0.0]}"#), HarnessError::Config(_)));
        assert!(matches!(err(r#"{"pressed_cells": [{"row": 3, "col": 0}]}"#), HarnessError::Config(_)));
        assert!(matches!(err("[1, 2]"), HarnessError::Config(_)));
        assert!(matches!(err("{"), HarnessError::Json(_)));
    }

    #[test]
    fn defaults_are_valid() {
        for s in [
            Scenario::WireSweep,
            Scenario::CellSweep,
            Scenario::GhostDemo,
            Scenario::ForcePipeline,
            Scenario::StreamReplay,
            Scenario::Custom,
        ] {
            ExperimentConfig::defaults(s).check().unwrap();
        }
    }
}
