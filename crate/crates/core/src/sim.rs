//! Forward simulation of one ohmmeter measurement by nodal analysis.
//!
//! Every measurement selects one top stripe and one bottom stripe. The
//! driven electrode is fed from the supply through the source-side reference
//! resistor, the sensed electrode returns to ground through the ground-side
//! reference resistor, and all other electrodes float. Both electrodes sit at
//! the readout end of their stripe (column 0 for top stripes, row 0 for
//! bottom stripes).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::SimError;
use crate::model::{
    frame_ordering, CellIndex, CircuitState, DriveLayer, DriveSetup, GridSpec, MeasurementFrame, OhmmeterConfig,
    Reading, ResistanceField,
};

/// Endpoint of a netlist edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Terminal {
    Node(usize),
    Ground,
    Supply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Cell(CellIndex),
    TopWire(CellIndex),
    BottomWire(CellIndex),
    SourceRef,
    GroundRef,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: Terminal,
    pub b: Terminal,
    /// MΩ; zero means an ideal short.
    pub resistance: f64,
    pub kind: EdgeKind,
}

/// How the driven electrode is excited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Excitation {
    /// Supply voltage behind the source-side reference resistor.
    Supply { v_dd: f64, r_ref_source: f64 },
    /// Driven electrode held at a known potential. Used by the estimator,
    /// which takes the measured `v_s` as given.
    Clamped { v_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Class {
    Unknown(usize),
    Fixed(f64),
}

/// Physical node numbering for a grid: top nodes, bottom nodes, then the
/// driven and sensed electrodes.
#[derive(Debug, Clone, Copy)]
pub struct NodeMap {
    grid: GridSpec,
}

impl NodeMap {
    pub fn new(grid: GridSpec) -> Self {
        Self { grid }
    }

    pub fn top(&self, cell: CellIndex) -> usize {
        self.grid.flat(cell)
    }

    pub fn bottom(&self, cell: CellIndex) -> usize {
        self.grid.cells() + self.grid.flat(cell)
    }

    pub fn driven(&self) -> usize {
        2 * self.grid.cells()
    }

    pub fn sensed(&self) -> usize {
        2 * self.grid.cells() + 1
    }

    pub fn node_count(&self) -> usize {
        2 * self.grid.cells() + 2
    }
}

/// Assembled nodal system for one measurement.
///
/// Nodes joined by zero-resistance segments are merged before assembly, and
/// clamped nodes are eliminated, so `conductance` is the symmetric positive
/// definite matrix over the remaining unknown node classes.
#[derive(Debug, Clone)]
pub struct Netlist {
    pub grid: GridSpec,
    pub config: OhmmeterConfig,
    pub cell: CellIndex,
    pub nodes: NodeMap,
    pub edges: Vec<Edge>,
    pub excitation: Excitation,
    pub conductance: DMatrix<f64>,
    pub injection: DVector<f64>,
    class_of: Vec<usize>,
    classes: Vec<Class>,
    stamps: Vec<Stamp>,
}

#[derive(Debug, Clone, Copy)]
struct Stamp {
    a: Class,
    b: Class,
    g: f64,
}

/// Voltage at every physical node, indexed by [`NodeMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct NodeVoltages(pub Vec<f64>);

impl NodeVoltages {
    pub fn at(&self, node: usize) -> f64 {
        self.0[node]
    }
}

/// Builds the netlist of a supply-driven measurement.
pub fn build_netlist(
    field: &ResistanceField,
    drive: &DriveSetup,
    config: OhmmeterConfig,
    cell: CellIndex,
) -> Result<Netlist, SimError> {
    drive.check()?;
    build_netlist_with(
        field,
        Excitation::Supply { v_dd: drive.v_dd, r_ref_source: drive.r_ref_source },
        drive.r_ref_ground,
        config,
        cell,
    )
}

pub fn build_netlist_with(
    field: &ResistanceField,
    excitation: Excitation,
    r_ref_ground: f64,
    config: OhmmeterConfig,
    cell: CellIndex,
) -> Result<Netlist, SimError> {
    let grid = field.grid();
    field.check(grid)?;
    if !grid.contains(cell) {
        return Err(SimError::CellOutOfRange { cell, rows: grid.rows, cols: grid.cols });
    }
    let nodes = NodeMap::new(grid);
    let edges = skin_edges(field, &nodes, config, cell, excitation, r_ref_ground);
    assemble(grid, config, cell, nodes, edges, excitation)
}

fn skin_edges(
    field: &ResistanceField,
    nodes: &NodeMap,
    config: OhmmeterConfig,
    sel: CellIndex,
    excitation: Excitation,
    r_ref_ground: f64,
) -> Vec<Edge> {
    let grid = field.grid();
    let node = Terminal::Node;
    let (top_electrode, bottom_electrode) = match config.drive_layer {
        DriveLayer::TopDriven => (nodes.driven(), nodes.sensed()),
        DriveLayer::BottomDriven => (nodes.sensed(), nodes.driven()),
    };
    let mut edges = Vec::with_capacity(3 * grid.cells() + 2);
    for c in grid.row_major() {
        edges.push(Edge {
            a: node(nodes.top(c)),
            b: node(nodes.bottom(c)),
            resistance: field.cell[c.row][c.col],
            kind: EdgeKind::Cell(c),
        });
    }
    for c in grid.row_major() {
        let upstream = if c.col > 0 {
            Some(nodes.top(CellIndex::new(c.row, c.col - 1)))
        } else if c.row == sel.row {
            Some(top_electrode)
        } else {
            None
        };
        if let Some(u) = upstream {
            edges.push(Edge {
                a: node(u),
                b: node(nodes.top(c)),
                resistance: field.top_wire[c.row][c.col],
                kind: EdgeKind::TopWire(c),
            });
        }
    }
    for c in grid.row_major() {
        let upstream = if c.row > 0 {
            Some(nodes.bottom(CellIndex::new(c.row - 1, c.col)))
        } else if c.col == sel.col {
            Some(bottom_electrode)
        } else {
            None
        };
        if let Some(u) = upstream {
            edges.push(Edge {
                a: node(u),
                b: node(nodes.bottom(c)),
                resistance: field.bottom_wire[c.row][c.col],
                kind: EdgeKind::BottomWire(c),
            });
        }
    }
    if let Excitation::Supply { r_ref_source, .. } = excitation {
        edges.push(Edge {
            a: Terminal::Supply,
            b: node(nodes.driven()),
            resistance: r_ref_source,
            kind: EdgeKind::SourceRef,
        });
    }
    edges.push(Edge { a: node(nodes.sensed()), b: Terminal::Ground, resistance: r_ref_ground, kind: EdgeKind::GroundRef });
    edges
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn assemble(
    grid: GridSpec,
    config: OhmmeterConfig,
    cell: CellIndex,
    nodes: NodeMap,
    edges: Vec<Edge>,
    excitation: Excitation,
) -> Result<Netlist, SimError> {
    let n = nodes.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    for e in edges.iter().filter(|e| e.resistance == 0.0) {
        if let (Terminal::Node(a), Terminal::Node(b)) = (e.a, e.b) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let roots: Vec<usize> = (0..n).map(|k| find(&mut parent, k)).collect();
    let clamped_root = match excitation {
        Excitation::Clamped { .. } => Some(roots[nodes.driven()]),
        Excitation::Supply { .. } => None,
    };

    // Compact class ids in order of first appearance.
    let mut class_of = vec![usize::MAX; n];
    let mut root_class = vec![usize::MAX; n];
    let mut classes = Vec::new();
    let mut unknowns = 0;
    for k in 0..n {
        let r = roots[k];
        if root_class[r] == usize::MAX {
            root_class[r] = classes.len();
            let class = match (clamped_root, excitation) {
                (Some(cr), Excitation::Clamped { v_s }) if cr == r => Class::Fixed(v_s),
                _ => {
                    unknowns += 1;
                    Class::Unknown(unknowns - 1)
                }
            };
            classes.push(class);
        }
        class_of[k] = root_class[r];
    }

    let supply_v = match excitation {
        Excitation::Supply { v_dd, .. } => v_dd,
        Excitation::Clamped { .. } => 0.0,
    };
    let resolve = |t: Terminal| match t {
        Terminal::Node(k) => classes[class_of[k]],
        Terminal::Ground => Class::Fixed(0.0),
        Terminal::Supply => Class::Fixed(supply_v),
    };

    let mut g = DMatrix::zeros(unknowns, unknowns);
    let mut b = DVector::zeros(unknowns);
    let mut stamps = Vec::with_capacity(edges.len());
    for e in edges.iter().filter(|e| e.resistance > 0.0) {
        let cond = 1.0 / e.resistance;
        let (ca, cb) = (resolve(e.a), resolve(e.b));
        stamps.push(Stamp { a: ca, b: cb, g: cond });
        match (ca, cb) {
            (Class::Unknown(p), Class::Unknown(q)) if p != q => {
                g[(p, p)] += cond;
                g[(q, q)] += cond;
                g[(p, q)] -= cond;
                g[(q, p)] -= cond;
            }
            (Class::Unknown(p), Class::Fixed(v)) | (Class::Fixed(v), Class::Unknown(p)) => {
                g[(p, p)] += cond;
                b[p] += cond * v;
            }
            _ => {}
        }
    }
    Ok(Netlist { grid, config, cell, nodes, edges, excitation, conductance: g, injection: b, class_of, classes, stamps })
}

impl Netlist {
    pub fn node_count(&self) -> usize {
        self.nodes.node_count()
    }

    /// Number of unknowns in the reduced system.
    pub fn unknowns(&self) -> usize {
        self.injection.len()
    }

    fn expand(&self, reduced: &DVector<f64>) -> NodeVoltages {
        NodeVoltages(
            self.class_of
                .iter()
                .map(|&c| match self.classes[c] {
                    Class::Unknown(k) => reduced[k],
                    Class::Fixed(v) => v,
                })
                .collect(),
        )
    }

    fn reduce(&self, v: &NodeVoltages) -> DVector<f64> {
        let mut out = DVector::zeros(self.unknowns());
        for (node, &c) in self.class_of.iter().enumerate() {
            if let Class::Unknown(k) = self.classes[c] {
                out[k] = v.0[node];
            }
        }
        out
    }

    /// `‖G·v − injection‖∞` over the reduced system.
    pub fn kcl_residual(&self, v: &NodeVoltages) -> f64 {
        let r = &self.conductance * self.reduce(v) - &self.injection;
        r.amax()
    }

    /// Largest net current leaving any physical node, summed edge by edge.
    /// Ignores shorted segments, which carry an undetermined current.
    pub fn edge_kcl_residual(&self, v: &NodeVoltages) -> f64 {
        let supply = match self.excitation {
            Excitation::Supply { v_dd, .. } => v_dd,
            Excitation::Clamped { .. } => 0.0,
        };
        let volt = |t: Terminal| match t {
            Terminal::Node(k) => v.0[k],
            Terminal::Ground => 0.0,
            Terminal::Supply => supply,
        };
        let mut net = vec![0.0; self.node_count()];
        let mut touched_short = vec![false; self.node_count()];
        for e in &self.edges {
            if e.resistance == 0.0 {
                for t in [e.a, e.b] {
                    if let Terminal::Node(k) = t {
                        touched_short[k] = true;
                    }
                }
                continue;
            }
            let i = (volt(e.a) - volt(e.b)) / e.resistance;
            if let Terminal::Node(k) = e.a {
                net[k] += i;
            }
            if let Terminal::Node(k) = e.b {
                net[k] -= i;
            }
        }
        net.iter()
            .enumerate()
            .filter(|(k, _)| !touched_short[*k] && matches!(self.classes[self.class_of[*k]], Class::Unknown(_)))
            .map(|(_, x)| x.abs())
            .fold(0.0, f64::max)
    }

    /// Node voltages together with `∂v/∂g` for every edge with positive
    /// resistance, where `g` is that edge's conductance. The returned
    /// sensitivities are indexed like `edges`; shorted edges get `None`.
    pub fn solve_with_sensitivities(&self) -> Result<(NodeVoltages, Vec<Option<Vec<f64>>>), SimError> {
        let chol = self.conductance.clone().cholesky().ok_or(SimError::Singular)?;
        let inv = chol.inverse();
        let reduced = refined_solve(self, &chol);
        let volts = self.expand(&reduced);
        let supply = match self.excitation {
            Excitation::Supply { v_dd, .. } => v_dd,
            Excitation::Clamped { .. } => 0.0,
        };
        let side = |t: Terminal| -> (Option<usize>, f64) {
            match t {
                Terminal::Node(k) => match self.classes[self.class_of[k]] {
                    Class::Unknown(u) => (Some(u), reduced[u]),
                    Class::Fixed(v) => (None, v),
                },
                Terminal::Ground => (None, 0.0),
                Terminal::Supply => (None, supply),
            }
        };
        let sens = self
            .edges
            .iter()
            .map(|e| {
                if e.resistance == 0.0 {
                    return None;
                }
                let (pa, va) = side(e.a);
                let (pb, vb) = side(e.b);
                let drop = va - vb;
                // dv = -G⁻¹ (e_a - e_b) drop
                let mut d = DVector::<f64>::zeros(self.unknowns());
                if let Some(p) = pa {
                    d -= inv.column(p) * drop;
                }
                if let Some(q) = pb {
                    d += inv.column(q) * drop;
                }
                Some(self.expand_zero_fixed(&d))
            })
            .collect();
        Ok((volts, sens))
    }

    fn expand_zero_fixed(&self, reduced: &DVector<f64>) -> Vec<f64> {
        self.class_of
            .iter()
            .map(|&c| match self.classes[c] {
                Class::Unknown(k) => reduced[k],
                Class::Fixed(_) => 0.0,
            })
            .collect()
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Net current into every unknown node, accumulated edge by edge in
/// double-double. Working from the edge list rather than `G` keeps the
/// residual exactly that of the rounded conductances, with no leak
/// introduced by rounding the diagonal sums.
fn compensated_residual(net: &Netlist, x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let mut hi = vec![0.0; n];
    let mut lo = vec![0.0; n];
    let value = |c: Class| match c {
        Class::Unknown(k) => x[k],
        Class::Fixed(v) => v,
    };
    let mut add = |k: usize, v: f64, err: f64| {
        let (s, e) = two_sum(hi[k], v);
        hi[k] = s;
        lo[k] += e + err;
    };
    for st in &net.stamps {
        let (d, dlo) = two_sum(value(st.b), -value(st.a));
        let p = st.g * d;
        let perr = st.g.mul_add(d, -p) + st.g * dlo;
        // current a <- b is g (v_b - v_a)
        if let Class::Unknown(k) = st.a {
            add(k, p, perr);
        }
        if let Class::Unknown(k) = st.b {
            add(k, -p, -perr);
        }
    }
    DVector::from_iterator(n, (0..n).map(|k| hi[k] + lo[k]))
}

/// Cholesky solve followed by iterative refinement against an extended
/// precision residual. Node potentials are componentwise well conditioned in
/// the conductances, so this recovers them to a few ulps even when the
/// conductance matrix itself is badly conditioned.
fn refined_solve(net: &Netlist, chol: &nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>) -> DVector<f64> {
    let mut x = chol.solve(&net.injection);
    for _ in 0..4 {
        let r = compensated_residual(net, &x);
        let dx = chol.solve(&r);
        x += &dx;
        if dx.amax() <= 1e-3 * f64::EPSILON * x.amax() {
            break;
        }
    }
    x
}

/// Solves `G·v = injection` and returns the voltage of every physical node.
pub fn solve_nodes(netlist: &Netlist) -> Result<NodeVoltages, SimError> {
    let chol = netlist.conductance.clone().cholesky().ok_or(SimError::Singular)?;
    Ok(netlist.expand(&refined_solve(netlist, &chol)))
}

/// `(v_s, v_r)` for one measurement: the driven electrode potential and the
/// drop across the ground-side reference resistor.
pub fn simulate_measurement(
    field: &ResistanceField,
    drive: &DriveSetup,
    config: OhmmeterConfig,
    cell: CellIndex,
) -> Result<Reading, SimError> {
    let net = build_netlist(field, drive, config, cell)?;
    let v = solve_nodes(&net)?;
    Ok(Reading::new(v.at(net.nodes.driven()), v.at(net.nodes.sensed())))
}

/// Noise-free or noisy synthetic scan of `field`. Zero-mean Gaussian noise
/// with standard deviation `noise_std` (V) is added independently to every
/// voltage, drawn in readout order from a generator seeded with `seed`.
pub fn synthesize_frame(
    field: &ResistanceField,
    drive: &DriveSetup,
    noise_std: f64,
    seed: u64,
) -> Result<MeasurementFrame, SimError> {
    let grid = field.grid();
    field.check(grid)?;
    let mut frame = MeasurementFrame::filled(grid, Reading::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (noise_std > 0.0)
        .then(|| Normal::new(0.0, noise_std).map_err(|e| crate::error::ModelError::Parse(e.to_string())))
        .transpose()?;
    for (cell, config) in frame_ordering(grid) {
        let mut r = simulate_measurement(field, drive, config, cell)?;
        if let Some(n) = &noise {
            r.v_s += n.sample(&mut rng);
            r.v_r += n.sample(&mut rng);
        }
        frame.set(cell, config.label, r);
    }
    Ok(frame)
}

/// Largest KCL violation of a circuit state, in µA.
///
/// Checks every top and bottom node plus the sensed electrode, with the
/// driven electrode held at the state's `v_s` and the sensed electrode at its
/// `v_r`. Current into the sensed electrode must equal `v_r / r_ref_ground`.
pub fn state_kcl_residual(state: &CircuitState, r_ref_ground: f64) -> f64 {
    let grid = state.field.grid();
    let nodes = NodeMap::new(grid);
    let edges = skin_edges(&state.field, &nodes, state.config, state.cell, Excitation::Clamped { v_s: state.v_s }, r_ref_ground);
    let mut v = vec![0.0; nodes.node_count()];
    for c in grid.row_major() {
        v[nodes.top(c)] = state.v_top[c.row][c.col];
        v[nodes.bottom(c)] = state.v_bottom[c.row][c.col];
    }
    v[nodes.driven()] = state.v_s;
    v[nodes.sensed()] = state.v_r;
    let volt = |t: Terminal| match t {
        Terminal::Node(k) => v[k],
        _ => 0.0,
    };
    let mut net = vec![0.0; nodes.node_count()];
    for e in &edges {
        let i = (volt(e.a) - volt(e.b)) / e.resistance;
        if let Terminal::Node(k) = e.a {
            net[k] += i;
        }
        if let Terminal::Node(k) = e.b {
            net[k] -= i;
        }
    }
    net[nodes.driven()] = 0.0;
    net.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConfigLabel;
    use approx::assert_relative_eq;

    fn grid(r: usize, c: usize) -> GridSpec {
        GridSpec::new(r, c).unwrap()
    }

    fn unit_drive() -> DriveSetup {
        DriveSetup::new(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn one_by_one_topology() {
        let f = ResistanceField::uniform(grid(1, 1), 1.0, 0.01);
        let net = build_netlist(&f, &unit_drive(), ConfigLabel::A.config(), CellIndex::new(0, 0)).unwrap();
        assert_eq!(net.node_count(), 4);
        let skin = net.edges.iter().filter(|e| !matches!(e.kind, EdgeKind::SourceRef | EdgeKind::GroundRef)).count();
        assert_eq!(skin, 3);
        assert_eq!(net.edges.len(), 5);
        assert_eq!(net.unknowns(), 4);
    }

    #[test]
    fn two_by_two_topology() {
        // Construction rule: n·m cells, n(m-1) top and (n-1)m bottom inter-node
        // segments, one electrode segment per selected stripe, two references.
        let f = ResistanceField::uniform(grid(2, 2), 1.0, 0.01);
        let net = build_netlist(&f, &DriveSetup::default(), ConfigLabel::A.config(), CellIndex::new(0, 0)).unwrap();
        assert_eq!(net.node_count(), 10);
        let count = |pred: fn(&EdgeKind) -> bool| net.edges.iter().filter(|e| pred(&e.kind)).count();
        assert_eq!(count(|k| matches!(k, EdgeKind::Cell(_))), 4);
        assert_eq!(count(|k| matches!(k, EdgeKind::TopWire(_))), 3);
        assert_eq!(count(|k| matches!(k, EdgeKind::BottomWire(_))), 3);
        assert_eq!(net.edges.len(), 12);
        let g = &net.conductance;
        assert_relative_eq!(g.clone(), g.transpose());
        for i in 0..g.nrows() {
            let off: f64 = (0..g.ncols()).filter(|&j| j != i).map(|j| g[(i, j)].abs()).sum();
            assert!(g[(i, i)] >= off - 1e-12);
        }
    }

    #[test]
    fn config_c_swaps_layers() {
        let f = ResistanceField::uniform(grid(1, 1), 1.0, 0.01);
        let d = DriveSetup::default();
        let a = build_netlist(&f, &d, ConfigLabel::A.config(), CellIndex::new(0, 0)).unwrap();
        let c = build_netlist(&f, &d, ConfigLabel::C.config(), CellIndex::new(0, 0)).unwrap();
        assert_eq!(a.edges.len(), c.edges.len());
        let top_end = |n: &Netlist| n.edges.iter().find(|e| matches!(e.kind, EdgeKind::TopWire(_))).unwrap().a;
        assert_eq!(top_end(&a), Terminal::Node(a.nodes.driven()));
        assert_eq!(top_end(&c), Terminal::Node(c.nodes.sensed()));
    }

    #[test]
    fn series_divider() {
        let f = ResistanceField::uniform(grid(1, 1), 1.0, 0.0);
        let r = simulate_measurement(&f, &unit_drive(), ConfigLabel::A.config(), CellIndex::new(0, 0)).unwrap();
        assert_relative_eq!(r.v_s, 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.v_r, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn open_circuit_limit() {
        let f = ResistanceField::uniform(grid(1, 1), 1e6, 0.0);
        let r = simulate_measurement(&f, &unit_drive(), ConfigLabel::A.config(), CellIndex::new(0, 0)).unwrap();
        assert!(r.v_s >= 0.999998, "{}", r.v_s);
        assert!(r.v_r <= 2e-6, "{}", r.v_r);
    }

    #[test]
    fn residual_is_tiny() {
        let mut f = ResistanceField::uniform(grid(3, 3), 1.0, 0.001);
        f.cell[0][0] = 0.001;
        f.cell[2][1] = 1e6;
        let net = build_netlist(&f, &DriveSetup::default(), ConfigLabel::C.config(), CellIndex::new(1, 2)).unwrap();
        let v = solve_nodes(&net).unwrap();
        assert!(net.kcl_residual(&v) <= 1e-9);
        assert!(net.edge_kcl_residual(&v) <= 1e-9);
    }

    #[test]
    fn out_of_range_cell() {
        let f = ResistanceField::uniform(grid(2, 2), 1.0, 0.001);
        let err = build_netlist(&f, &DriveSetup::default(), ConfigLabel::A.config(), CellIndex::new(2, 0));
        assert!(matches!(err, Err(SimError::CellOutOfRange { .. })));
    }

    #[test]
    fn ghost_path_lowers_resistance() {
        let g = grid(2, 2);
        let mut field = ResistanceField::uniform(g, 0.001, 0.01);
        let ghost = CellIndex::new(1, 1);
        field.cell[1][1] = 1.0;
        let d = DriveSetup::default();
        let with_ghost = simulate_measurement(&field, &d, ConfigLabel::A.config(), ghost).unwrap();
        let mut isolated = field.clone();
        for c in g.row_major().filter(|c| *c != ghost) {
            isolated.cell[c.row][c.col] = 1e12;
        }
        let alone = simulate_measurement(&isolated, &d, ConfigLabel::A.config(), ghost).unwrap();
        assert!(with_ghost.v_r > 5.0 * alone.v_r, "{} vs {}", with_ghost.v_r, alone.v_r);
    }

    #[test]
    fn noise_free_frame_has_divider_ordering() {
        let mut f = ResistanceField::uniform(grid(3, 2), 0.5, 0.003);
        f.cell[1][1] = 0.002;
        let d = DriveSetup::default();
        let frame = synthesize_frame(&f, &d, 0.0, 1).unwrap();
        for c in f.grid().row_major() {
            for k in ConfigLabel::ALL {
                let r = frame.reading(c, k);
                assert!(0.0 <= r.v_r && r.v_r <= r.v_s && r.v_s <= d.v_dd);
            }
        }
    }

    #[test]
    fn noise_is_seeded() {
        let f = ResistanceField::uniform(grid(2, 2), 0.5, 0.003);
        let d = DriveSetup::default();
        let a = synthesize_frame(&f, &d, 1e-3, 9).unwrap();
        let b = synthesize_frame(&f, &d, 1e-3, 9).unwrap();
        let c = synthesize_frame(&f, &d, 1e-3, 10).unwrap();
        let clean = synthesize_frame(&f, &d, 0.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, clean);
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let mut f = ResistanceField::uniform(grid(2, 2), 0.3, 0.01);
        f.cell[1][0] = 0.002;
        f.top_wire[1][1] = 0.05;
        let cfg = ConfigLabel::C.config();
        let cell = CellIndex::new(1, 1);
        let net = build_netlist_with(&f, Excitation::Clamped { v_s: 0.8 }, 0.1, cfg, cell).unwrap();
        let (v0, sens) = net.solve_with_sensitivities().unwrap();
        for (k, e) in net.edges.iter().enumerate() {
            let EdgeKind::Cell(c) = e.kind else { continue };
            let h = 1e-6 / e.resistance;
            let mut f2 = f.clone();
            f2.cell[c.row][c.col] = 1.0 / (1.0 / e.resistance + h);
            let n2 = build_netlist_with(&f2, Excitation::Clamped { v_s: 0.8 }, 0.1, cfg, cell).unwrap();
            let v2 = solve_nodes(&n2).unwrap();
            let s = sens[k].as_ref().unwrap();
            for node in 0..net.node_count() {
                let fd = (v2.at(node) - v0.at(node)) / h;
                assert!((fd - s[node]).abs() <= 1e-4 * (1.0 + s[node].abs()), "edge {k} node {node}: {fd} vs {}", s[node]);
            }
        }
    }
}
