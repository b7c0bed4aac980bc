//! Resistive tactile-skin crossbar toolkit.
//!
//! A two-layer textile skin is modelled as a grid of contact resistors joined
//! by resistive stripe segments. [`sim`] synthesizes the four-configuration
//! ohmmeter readout of such a grid, [`naive`] inverts each reading on its own
//! (and therefore sees ghost touches), and [`optimizer`] recovers the whole
//! circuit by a two-stage constrained least-squares estimate that removes
//! most of the ghosting. [`calibration`] turns solved resistances into forces.

pub mod calibration;
pub mod error;
pub mod model;
pub mod naive;
pub mod optimizer;
pub mod sim;

pub use error::{CalibrationError, EstimateError, ModelError, SimError};
pub use model::{
    frame_ordering, validate_field, CellIndex, CircuitState, ConfigLabel, DriveLayer, DriveSetup, GridSpec,
    MeasurementFrame, OhmmeterConfig, Reading, ResistanceField, SenseSide, UnselectedPolicy, Violation, MIN_RESISTANCE,
    OPEN_CIRCUIT,
};
