//! Domain types shared across the crate: grid geometry, resistance fields,
//! the four-configuration readout protocol, measurement frames and the
//! per-measurement circuit state.
//!
//! Units are MΩ for resistance, V for voltage, and therefore µA (V/MΩ) for
//! current and 1/MΩ for conductance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Resistance used to represent an open circuit (MΩ).
pub const OPEN_CIRCUIT: f64 = 1e6;

/// Smallest resistance an estimate is allowed to report (MΩ).
pub const MIN_RESISTANCE: f64 = 1e-6;

/// Dimensions of the crossbar: `rows` top-layer stripes crossing `cols`
/// bottom-layer stripes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self, ModelError> {
        if rows == 0 || cols == 0 {
            return Err(ModelError::InvalidGrid { rows, cols });
        }
        Ok(Self { rows, cols })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Circuit states per frame: one per cell and configuration.
    pub fn states(&self) -> usize {
        4 * self.cells()
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    /// Row-major flat index.
    pub fn flat(&self, cell: CellIndex) -> usize {
        cell.row * self.cols + cell.col
    }

    pub fn cell_at(&self, flat: usize) -> CellIndex {
        CellIndex::new(flat / self.cols, flat % self.cols)
    }

    /// Cells in readout order: column-major, so the row index varies fastest.
    pub fn column_major(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.cols).flat_map(move |col| (0..self.rows).map(move |row| CellIndex::new(row, col)))
    }

    /// Cells in row-major order.
    pub fn row_major(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.cells()).map(move |k| self.cell_at(k))
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for GridSpec {
    type Err = ModelError;

    /// Parses `"NxM"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::Parse(format!("expected grid as NxM, got {s:?}"));
        let (r, c) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let rows = r.trim().parse().map_err(|_| bad())?;
        let cols = c.trim().parse().map_err(|_| bad())?;
        GridSpec::new(rows, cols)
    }
}

/// Zero-based (row, column) position of a sensing cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// A shape or value problem found by [`validate_field`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch {
        layer: &'static str,
        expected: (usize, usize),
        found: String,
    },
    NonPositive {
        layer: &'static str,
        cell: CellIndex,
        value: f64,
    },
    NonFinite {
        layer: &'static str,
        cell: CellIndex,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch { layer, expected, found } => write!(
                f,
                "dimension mismatch in {layer}: expected {}x{}, found {found}",
                expected.0, expected.1
            ),
            Violation::NonPositive { layer, cell, value } if *layer == "cell" => {
                write!(f, "non-positive resistance at cell {cell}: {value}")
            }
            Violation::NonPositive { layer, cell, value } => {
                write!(f, "negative resistance in {layer} at {cell}: {value}")
            }
            Violation::NonFinite { layer, cell } => {
                write!(f, "non-finite resistance in {layer} at {cell}")
            }
        }
    }
}

/// Per-cell contact resistances and per-segment wire resistances (MΩ).
///
/// `top_wire[i][j]` is the segment of top stripe `i` feeding node `(i, j)`
/// from the readout end (the electrode for `j == 0`, node `(i, j-1)`
/// otherwise). `bottom_wire[i][j]` is the segment of bottom stripe `j`
/// feeding node `(i, j)` from node `(i-1, j)` or the electrode.
///
/// Cell resistances must be strictly positive. Wire segments may be zero,
/// which the simulator treats as an ideal short.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResistanceField {
    pub cell: Vec<Vec<f64>>,
    pub top_wire: Vec<Vec<f64>>,
    pub bottom_wire: Vec<Vec<f64>>,
}

fn filled(grid: GridSpec, value: f64) -> Vec<Vec<f64>> {
    vec![vec![value; grid.cols]; grid.rows]
}

impl ResistanceField {
    pub fn uniform(grid: GridSpec, cell: f64, wire: f64) -> Self {
        Self {
            cell: filled(grid, cell),
            top_wire: filled(grid, wire),
            bottom_wire: filled(grid, wire),
        }
    }

    /// Grid implied by the cell array. Only meaningful after validation.
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            rows: self.cell.len(),
            cols: self.cell.first().map_or(0, Vec::len),
        }
    }

    pub fn with_cell(mut self, cell: CellIndex, value: f64) -> Self {
        self.cell[cell.row][cell.col] = value;
        self
    }

    pub fn cell_resistance(&self, cell: CellIndex) -> f64 {
        self.cell[cell.row][cell.col]
    }

    /// Multiplies every resistance by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |g: &Vec<Vec<f64>>| g.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect();
        Self {
            cell: s(&self.cell),
            top_wire: s(&self.top_wire),
            bottom_wire: s(&self.bottom_wire),
        }
    }

    pub fn check(&self, grid: GridSpec) -> Result<(), ModelError> {
        let violations = validate_field(self, grid);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidField(violations.iter().map(ToString::to_string).collect()))
        }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV with header `i,j,cell,top_wire,bottom_wire`, one row per cell in
    /// row-major order.
    pub fn to_csv(&self) -> Result<String, ModelError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["i", "j", "cell", "top_wire", "bottom_wire"])?;
        for (i, row) in self.cell.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    c.to_string(),
                    self.top_wire[i][j].to_string(),
                    self.bottom_wire[i][j].to_string(),
                ])?;
            }
        }
        csv_string(w)
    }

    pub fn from_csv(text: &str) -> Result<Self, ModelError> {
        let mut rows: Vec<(usize, usize, [f64; 3])> = Vec::new();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        for rec in r.records() {
            let rec = rec?;
            let i = parse_field(&rec, 0)?;
            let j = parse_field(&rec, 1)?;
            rows.push((i, j, [parse_field(&rec, 2)?, parse_field(&rec, 3)?, parse_field(&rec, 4)?]));
        }
        let grid = grid_from_indices(rows.iter().map(|(i, j, _)| (*i, *j)))?;
        let mut field = ResistanceField::uniform(grid, f64::NAN, f64::NAN);
        for (i, j, [c, t, b]) in rows {
            field.cell[i][j] = c;
            field.top_wire[i][j] = t;
            field.bottom_wire[i][j] = b;
        }
        field.check(grid)?;
        Ok(field)
    }
}

/// Checks shape and positivity of `field` against `grid`. Returns every
/// violation found; an empty list means the field is valid.
pub fn validate_field(field: &ResistanceField, grid: GridSpec) -> Vec<Violation> {
    let layers: [(&'static str, &Vec<Vec<f64>>, bool); 3] = [
        ("cell", &field.cell, true),
        ("top_wire", &field.top_wire, false),
        ("bottom_wire", &field.bottom_wire, false),
    ];
    let mut out = Vec::new();
    for (layer, values, strict) in layers {
        let shape_ok = values.len() == grid.rows && values.iter().all(|r| r.len() == grid.cols);
        if !shape_ok {
            let cols: Vec<String> = values.iter().map(|r| r.len().to_string()).collect();
            out.push(Violation::DimensionMismatch {
                layer,
                expected: (grid.rows, grid.cols),
                found: format!("{} rows with lengths [{}]", values.len(), cols.join(",")),
            });
            continue;
        }
        for (i, row) in values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let cell = CellIndex::new(i, j);
                if !v.is_finite() {
                    out.push(Violation::NonFinite { layer, cell });
                } else if v < 0.0 || (strict && v == 0.0) {
                    out.push(Violation::NonPositive { layer, cell, value: v });
                }
            }
        }
    }
    out
}

/// Which layer the supply drives during a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DriveLayer {
    TopDriven,
    BottomDriven,
}

/// Which reference resistor the second channel of a pair is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SenseSide {
    SourceRef,
    GroundRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConfigLabel {
    A,
    B,
    C,
    D,
}

impl ConfigLabel {
    pub const ALL: [ConfigLabel; 4] = [ConfigLabel::A, ConfigLabel::B, ConfigLabel::C, ConfigLabel::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn config(self) -> OhmmeterConfig {
        OhmmeterConfig::ALL[self.index()]
    }
}

impl fmt::Display for ConfigLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConfigLabel::A => "A",
            ConfigLabel::B => "B",
            ConfigLabel::C => "C",
            ConfigLabel::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for ConfigLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(ConfigLabel::A),
            "B" | "b" => Ok(ConfigLabel::B),
            "C" | "c" => Ok(ConfigLabel::C),
            "D" | "d" => Ok(ConfigLabel::D),
            other => Err(ModelError::Parse(format!("unknown ohmmeter configuration {other:?}"))),
        }
    }
}

/// One of the four ohmmeter arrangements used for every cell.
///
/// A and B drive the top stripe of the cell's row and return through the
/// bottom stripe of its column; C and D swap the layers. Within a pair the
/// two readings are taken back to back with the same input configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OhmmeterConfig {
    pub label: ConfigLabel,
    pub drive_layer: DriveLayer,
    pub sense_side: SenseSide,
}

impl OhmmeterConfig {
    pub const ALL: [OhmmeterConfig; 4] = [
        OhmmeterConfig { label: ConfigLabel::A, drive_layer: DriveLayer::TopDriven, sense_side: SenseSide::SourceRef },
        OhmmeterConfig { label: ConfigLabel::B, drive_layer: DriveLayer::TopDriven, sense_side: SenseSide::GroundRef },
        OhmmeterConfig { label: ConfigLabel::C, drive_layer: DriveLayer::BottomDriven, sense_side: SenseSide::SourceRef },
        OhmmeterConfig { label: ConfigLabel::D, drive_layer: DriveLayer::BottomDriven, sense_side: SenseSide::GroundRef },
    ];
}

/// Behaviour of row/column electrodes that are not part of the current
/// measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum UnselectedPolicy {
    #[default]
    Floating,
}

/// Supply voltage and the two reference resistors of the readout circuit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSetup {
    pub v_dd: f64,
    pub r_ref_source: f64,
    pub r_ref_ground: f64,
    #[serde(default)]
    pub unselected_policy: UnselectedPolicy,
}

impl Default for DriveSetup {
    fn default() -> Self {
        Self {
            v_dd: 1.0,
            r_ref_source: 0.1,
            r_ref_ground: 0.1,
            unselected_policy: UnselectedPolicy::Floating,
        }
    }
}

impl DriveSetup {
    pub fn new(v_dd: f64, r_ref_source: f64, r_ref_ground: f64) -> Result<Self, ModelError> {
        let d = Self { v_dd, r_ref_source, r_ref_ground, unselected_policy: UnselectedPolicy::Floating };
        d.check()?;
        Ok(d)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.v_dd) && ok(self.r_ref_source) && ok(self.r_ref_ground) {
            Ok(())
        } else {
            Err(ModelError::InvalidDrive(format!(
                "v_dd, r_ref_source and r_ref_ground must be positive (got {}, {}, {})",
                self.v_dd, self.r_ref_source, self.r_ref_ground
            )))
        }
    }

    /// Same drive with both reference resistors multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { r_ref_source: self.r_ref_source * factor, r_ref_ground: self.r_ref_ground * factor, ..*self }
    }
}

/// `v_s` is the potential at the driven electrode, `v_r` the drop across the
/// ground-side reference resistor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Reading {
    pub v_s: f64,
    pub v_r: f64,
}

impl Reading {
    pub const fn new(v_s: f64, v_r: f64) -> Self {
        Self { v_s, v_r }
    }
}

/// Full scan of the skin: every cell under every configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub grid: GridSpec,
    /// `readings[i][j][k]`, `k` indexing configurations A..D.
    pub readings: Vec<Vec<[Reading; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl MeasurementFrame {
    pub fn filled(grid: GridSpec, reading: Reading) -> Self {
        Self { grid, readings: vec![vec![[reading; 4]; grid.cols]; grid.rows], timestamp: None }
    }

    pub fn reading(&self, cell: CellIndex, label: ConfigLabel) -> Reading {
        self.readings[cell.row][cell.col][label.index()]
    }

    pub fn set(&mut self, cell: CellIndex, label: ConfigLabel, reading: Reading) {
        self.readings[cell.row][cell.col][label.index()] = reading;
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let g = self.grid;
        GridSpec::new(g.rows, g.cols)?;
        let complete = self.readings.len() == g.rows && self.readings.iter().all(|r| r.len() == g.cols);
        if !complete {
            return Err(ModelError::IncompleteFrame(format!("expected {g} cells of readings")));
        }
        for cell in g.row_major() {
            for label in ConfigLabel::ALL {
                let r = self.reading(cell, label);
                if !r.v_s.is_finite() || !r.v_r.is_finite() {
                    return Err(ModelError::IncompleteFrame(format!("non-finite reading at {cell} {label}")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let frame: Self = serde_json::from_str(text)?;
        frame.check()?;
        Ok(frame)
    }

    /// CSV with header `i,j,config,v_s,v_r`, rows in readout order.
    pub fn to_csv(&self) -> Result<String, ModelError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["i", "j", "config", "v_s", "v_r"])?;
        for (cell, config) in frame_ordering(self.grid) {
            let r = self.reading(cell, config.label);
            w.write_record([
                cell.row.to_string(),
                cell.col.to_string(),
                config.label.to_string(),
                r.v_s.to_string(),
                r.v_r.to_string(),
            ])?;
        }
        csv_string(w)
    }

    pub fn from_csv(text: &str) -> Result<Self, ModelError> {
        let mut rows = Vec::new();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        for rec in r.records() {
            let rec = rec?;
            let i: usize = parse_field(&rec, 0)?;
            let j: usize = parse_field(&rec, 1)?;
            let label: ConfigLabel = rec.get(2).unwrap_or("").parse()?;
            rows.push((i, j, label, Reading::new(parse_field(&rec, 3)?, parse_field(&rec, 4)?)));
        }
        let grid = grid_from_indices(rows.iter().map(|(i, j, _, _)| (*i, *j)))?;
        let mut frame = MeasurementFrame::filled(grid, Reading::new(f64::NAN, f64::NAN));
        for (i, j, label, reading) in rows {
            frame.set(CellIndex::new(i, j), label, reading);
        }
        frame.check()?;
        Ok(frame)
    }
}

/// Decision variables of one measurement: a full resistance field plus the
/// top/bottom node voltages, bound to the `(v_s, v_r)` reading it explains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitState {
    pub config: OhmmeterConfig,
    pub cell: CellIndex,
    pub field: ResistanceField,
    pub v_top: Vec<Vec<f64>>,
    pub v_bottom: Vec<Vec<f64>>,
    pub v_s: f64,
    pub v_r: f64,
}

/// Measurement sequence of one frame: column-major over cells, and A, B, C,
/// D consecutively within each cell.
pub fn frame_ordering(grid: GridSpec) -> Vec<(CellIndex, OhmmeterConfig)> {
    grid.column_major()
        .flat_map(|cell| OhmmeterConfig::ALL.into_iter().map(move |k| (cell, k)))
        .collect()
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String, ModelError> {
    let bytes = w.into_inner().map_err(|e| ModelError::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ModelError::Parse(e.to_string()))
}

fn parse_field<T: FromStr>(rec: &csv::StringRecord, k: usize) -> Result<T, ModelError> {
    let raw = rec.get(k).ok_or_else(|| ModelError::Parse(format!("missing column {k}")))?;
    raw.trim().parse().map_err(|_| ModelError::Parse(format!("bad value {raw:?} in column {k}")))
}

fn grid_from_indices(idx: impl Iterator<Item = (usize, usize)>) -> Result<GridSpec, ModelError> {
    let (mut rows, mut cols) = (0, 0);
    for (i, j) in idx {
        rows = rows.max(i + 1);
        cols = cols.max(j + 1);
    }
    GridSpec::new(rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(r: usize, c: usize) -> GridSpec {
        GridSpec::new(r, c).unwrap()
    }

    #[test]
    fn valid_uniform_field() {
        let f = ResistanceField::uniform(g(2, 2), 1.0, 1.0);
        assert!(validate_field(&f, g(2, 2)).is_empty());
    }

    #[test]
    fn zero_cell_is_reported() {
        let f = ResistanceField::uniform(g(2, 2), 1.0, 1.0).with_cell(CellIndex::new(0, 0), 0.0);
        let v = validate_field(&f, g(2, 2));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "non-positive resistance at cell (0,0): 0");
    }

    #[test]
    fn extra_wire_row_is_a_dimension_mismatch() {
        let mut f = ResistanceField::uniform(g(2, 2), 1.0, 1.0);
        f.top_wire.push(vec![1.0, 1.0]);
        let v = validate_field(&f, g(2, 2));
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("dimension mismatch"), "{}", v[0]);
    }

    #[test]
    fn negative_and_nan_wires() {
        let mut f = ResistanceField::uniform(g(1, 2), 1.0, 0.0);
        f.top_wire[0][1] = -1.0;
        f.bottom_wire[0][0] = f64::NAN;
        assert_eq!(validate_field(&f, g(1, 2)).len(), 2);
        assert!(f.check(g(1, 2)).is_err());
    }

    #[test]
    fn ordering_2x2() {
        let order = frame_ordering(g(2, 2));
        assert_eq!(order.len(), 16);
        let cells: Vec<_> = order.iter().step_by(4).map(|(c, _)| *c).collect();
        assert_eq!(
            cells,
            vec![CellIndex::new(0, 0), CellIndex::new(1, 0), CellIndex::new(0, 1), CellIndex::new(1, 1)]
        );
        for chunk in order.chunks(4) {
            let labels: Vec<_> = chunk.iter().map(|(_, k)| k.label).collect();
            assert_eq!(labels, ConfigLabel::ALL);
            assert!(chunk.iter().all(|(c, _)| *c == chunk[0].0));
        }
    }

    #[test]
    fn ordering_1x1_and_3x3() {
        let one = frame_ordering(g(1, 1));
        assert_eq!(one.len(), 4);
        assert_eq!(one.iter().map(|(_, k)| k.label).collect::<Vec<_>>(), ConfigLabel::ALL);
        let three = frame_ordering(g(3, 3));
        assert_eq!(three.len(), 36);
        // fifth entry, one-based
        assert_eq!(three[4], (CellIndex::new(1, 0), ConfigLabel::A.config()));
    }

    #[test]
    fn config_pairs_share_drive() {
        let [a, b, c, d] = OhmmeterConfig::ALL;
        assert_eq!(a.drive_layer, b.drive_layer);
        assert_eq!(c.drive_layer, d.drive_layer);
        assert_eq!(a.drive_layer, DriveLayer::TopDriven);
        assert_eq!(c.drive_layer, DriveLayer::BottomDriven);
        assert_eq!((a.sense_side, b.sense_side), (SenseSide::SourceRef, SenseSide::GroundRef));
        assert_eq!((c.sense_side, d.sense_side), (SenseSide::SourceRef, SenseSide::GroundRef));
    }

    #[test]
    fn grid_parsing() {
        assert_eq!("3x4".parse::<GridSpec>().unwrap(), g(3, 4));
        assert!("0x4".parse::<GridSpec>().is_err());
        assert!("3by4".parse::<GridSpec>().is_err());
    }

    #[test]
    fn frame_csv_layout() {
        let mut frame = MeasurementFrame::filled(g(1, 2), Reading::new(0.5, 0.25));
        frame.set(CellIndex::new(0, 1), ConfigLabel::C, Reading::new(0.75, 0.125));
        let csv = frame.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("i,j,config,v_s,v_r"));
        assert_eq!(lines.next(), Some("0,0,A,0.5,0.25"));
        assert_eq!(csv.lines().count(), 9);
        assert_eq!(MeasurementFrame::from_csv(&csv).unwrap(), frame);
    }

    #[test]
    fn incomplete_frame_rejected() {
        let mut frame = MeasurementFrame::filled(g(2, 2), Reading::new(0.5, 0.25));
        frame.readings.pop();
        assert!(matches!(frame.check(), Err(ModelError::IncompleteFrame(_))));
        let json = serde_json::to_string(&frame).unwrap();
        assert!(MeasurementFrame::from_json(&json).is_err());
    }

    #[test]
    fn field_csv_roundtrip() {
        let f = ResistanceField::uniform(g(2, 3), 0.3, 0.001).with_cell(CellIndex::new(1, 2), 1.0 / 3.0);
        assert_eq!(ResistanceField::from_csv(&f.to_csv().unwrap()).unwrap(), f);
    }
}
