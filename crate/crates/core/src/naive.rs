//! Per-reading Ohm's-law inversion. It treats each measurement as an
//! isolated series divider, so every parallel path through pressed
//! neighbours shows up as a false drop in resistance.

use crate::calibration::{FeatureKind, ModelSet};
use crate::error::CalibrationError;
use crate::model::{ConfigLabel, DriveSetup, MeasurementFrame, Reading, MIN_RESISTANCE, OPEN_CIRCUIT};

/// Two-terminal resistance seen by one reading (MΩ), clamped to
/// `[MIN_RESISTANCE, OPEN_CIRCUIT]`. A non-positive `v_r` means no current
/// and maps to the open-circuit value.
pub fn two_terminal_resistance(reading: Reading, r_ref_ground: f64) -> f64 {
    if reading.v_r <= 0.0 {
        return OPEN_CIRCUIT;
    }
    let current = reading.v_r / r_ref_ground;
    let r = (reading.v_s - reading.v_r) / current;
    if r.is_nan() {
        OPEN_CIRCUIT
    } else {
        r.clamp(MIN_RESISTANCE, OPEN_CIRCUIT)
    }
}

/// Naive cell resistances: mean of the A and C two-terminal values.
pub fn naive_resistance(frame: &MeasurementFrame, drive: &DriveSetup) -> Vec<Vec<f64>> {
    let g = frame.grid;
    (0..g.rows)
        .map(|i| {
            (0..g.cols)
                .map(|j| {
                    let cell = crate::CellIndex::new(i, j);
                    let a = two_terminal_resistance(frame.reading(cell, ConfigLabel::A), drive.r_ref_ground);
                    let c = two_terminal_resistance(frame.reading(cell, ConfigLabel::C), drive.r_ref_ground);
                    0.5 * (a + c)
                })
                .collect()
        })
        .collect()
}

/// Forces predicted straight from the raw config-A `v_r` of each cell, using
/// models fitted on raw voltages. Negative predictions are reported as 0 N.
pub fn naive_force_baseline(frame: &MeasurementFrame, models: &ModelSet) -> Result<Vec<Vec<f64>>, CalibrationError> {
    let g = frame.grid;
    let mut out = vec![vec![0.0; g.cols]; g.rows];
    for cell in g.row_major() {
        let model = models.get(cell).ok_or(CalibrationError::MissingModel(cell))?;
        model.expect_feature(FeatureKind::RawVoltage)?;
        out[cell.row][cell.col] = model.predict(frame.reading(cell, ConfigLabel::A).v_r);
    }
    Ok(out)
}
