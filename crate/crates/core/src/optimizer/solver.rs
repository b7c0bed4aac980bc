//! Damped Gauss-Newton SQP over log-conductances.
//!
//! Each outer iteration linearizes the residuals of the weighted objective
//! and the per-state sensed-voltage constraints, solves the equality-
//! constrained quadratic model through a Schur complement on the banded
//! Gauss-Newton matrix, then projects every state back onto its constraint
//! with a few Newton steps. A trial point is kept only if the objective
//! drops; otherwise the damping grows.

use nalgebra::{DMatrix, DVector};

use super::banded::BandMatrix;
use super::{ObjectiveWeights, SolverOptions, StateEnsemble, WIRE_FLOOR};
use crate::error::EstimateError;
use crate::model::{CellIndex, GridSpec, OhmmeterConfig, ResistanceField, MIN_RESISTANCE, OPEN_CIRCUIT};
use crate::sim::{build_netlist_with, EdgeKind, Excitation};

const MAX_LOG_STEP: f64 = 5.0;
const PROJECTION_ITERS: usize = 30;
const PROJECTION_TOL: f64 = 1e-13;
const ACCEPT_TOL: f64 = 1e-10;
const MU_START: f64 = 1e-3;
const MU_MIN: f64 = 1e-18;
const MU_MAX: f64 = 1e10;

pub(crate) struct Outcome {
    pub fields: Vec<ResistanceField>,
    pub iterations: usize,
    pub stationary: bool,
}

struct StateSpec {
    config: OhmmeterConfig,
    cell: CellIndex,
    v_s: f64,
    ln_target: f64,
}

/// Forward solve of one state at the current variables.
struct Eval {
    /// Top then bottom node voltages.
    volts: Vec<f64>,
    /// `ln v_sense - ln v_r`.
    c: f64,
    grad_c: Vec<f64>,
    /// `∂volts/∂x`, row-major `volts.len() × K`.
    jv: Vec<f64>,
}

struct Problem {
    grid: GridSpec,
    nm: usize,
    k: usize,
    specs: Vec<StateSpec>,
    r_ref_ground: f64,
    w: ObjectiveWeights,
    lo: f64,
    cell_hi: f64,
    wire_hi: f64,
}

impl Problem {
    fn states(&self) -> usize {
        self.specs.len()
    }

    /// Upper log-conductance bound of variable `v` within a state.
    fn hi(&self, v: usize) -> f64 {
        if v % self.k < self.nm {
            self.cell_hi
        } else {
            self.wire_hi
        }
    }

    fn field(&self, x: &[f64]) -> ResistanceField {
        let (rows, cols, nm) = (self.grid.rows, self.grid.cols, self.nm);
        let layer = |off: usize| -> Vec<Vec<f64>> {
            (0..rows).map(|i| (0..cols).map(|j| (-x[off + i * cols + j]).exp()).collect()).collect()
        };
        ResistanceField { cell: layer(0), top_wire: layer(nm), bottom_wire: layer(2 * nm) }
    }

    fn eval(&self, s: usize, x: &[f64]) -> Result<Eval, EstimateError> {
        let spec = &self.specs[s];
        let field = self.field(x);
        let net = build_netlist_with(&field, Excitation::Clamped { v_s: spec.v_s }, self.r_ref_ground, spec.config, spec.cell)?;
        let (v, sens) = net.solve_with_sensitivities()?;
        let (nm, k) = (self.nm, self.k);
        let nv = 2 * nm;
        let sensed = net.nodes.sensed();
        let v_sense = v.at(sensed);
        let mut jv = vec![0.0; nv * k];
        let mut grad_c = vec![0.0; k];
        for (edge, dv) in net.edges.iter().zip(&sens) {
            let Some(dv) = dv else { continue };
            let var = match edge.kind {
                EdgeKind::Cell(c) => self.grid.flat(c),
                EdgeKind::TopWire(c) => nm + self.grid.flat(c),
                EdgeKind::BottomWire(c) => 2 * nm + self.grid.flat(c),
                EdgeKind::SourceRef | EdgeKind::GroundRef => continue,
            };
            let g = 1.0 / edge.resistance;
            for n in 0..nv {
                jv[n * k + var] = g * dv[n];
            }
            grad_c[var] = g * dv[sensed] / v_sense;
        }
        Ok(Eval { volts: v.0[..nv].to_vec(), c: v_sense.ln() - spec.ln_target, grad_c, jv })
    }

    /// Newton iterations on one state's constraint, each taking the
    /// shortest log-space step over variables not pinned at a bound.
    fn project(&self, s: usize, x: &mut [f64]) -> Result<Eval, EstimateError> {
        let mut e = self.eval(s, x)?;
        for _ in 0..PROJECTION_ITERS {
            if e.c.abs() <= PROJECTION_TOL {
                break;
            }
            let mut free = vec![true; self.k];
            let mut norm = 0.0;
            for (v, f) in free.iter_mut().enumerate() {
                let dir = -e.c * e.grad_c[v];
                if (x[v] <= self.lo && dir < 0.0) || (x[v] >= self.hi(v) && dir > 0.0) {
                    *f = false;
                } else {
                    norm += e.grad_c[v] * e.grad_c[v];
                }
            }
            if !(norm > 0.0) {
                break;
            }
            let t = -e.c / norm;
            let biggest = e.grad_c.iter().zip(&free).filter(|(_, f)| **f).map(|(a, _)| (t * a).abs()).fold(0.0, f64::max);
            let damp = if biggest > 2.0 { 2.0 / biggest } else { 1.0 };
            for v in 0..self.k {
                if free[v] {
                    x[v] = (x[v] + damp * t * e.grad_c[v]).clamp(self.lo, self.hi(v));
                }
            }
            e = self.eval(s, x)?;
        }
        Ok(e)
    }

    /// Fits one field to every state's reading by moving cell variables
    /// only, starting from the log-space mean of the states and taking
    /// minimum-norm Gauss-Newton steps. Wires keep their starting values.
    /// Returns that field copied into every state.
    fn consensus(&self, x: &[f64]) -> Result<Vec<f64>, EstimateError> {
        let (k, ns) = (self.k, self.states());
        let mut y: Vec<f64> = (0..k).map(|v| (0..ns).map(|s| x[s * k + v]).sum::<f64>() / ns as f64).collect();
        for _ in 0..PROJECTION_ITERS {
            let evals = (0..ns).map(|s| self.eval(s, &y)).collect::<Result<Vec<_>, _>>()?;
            let mut jac = DMatrix::<f64>::from_fn(ns, k, |s, v| evals[s].grad_c[v]);
            let res = DVector::from_fn(ns, |s, _| evals[s].c);
            for v in 0..k {
                let push = -(0..ns).map(|s| jac[(s, v)] * res[s]).sum::<f64>();
                if v >= self.nm || (y[v] <= self.lo && push < 0.0) || (y[v] >= self.hi(v) && push > 0.0) {
                    jac.column_mut(v).fill(0.0);
                }
            }
            let mut gram = &jac * jac.transpose();
            let ridge = 1e-12 * (0..ns).map(|s| gram[(s, s)]).fold(0.0, f64::max);
            for s in 0..ns {
                gram[(s, s)] += ridge.max(f64::MIN_POSITIVE);
            }
            let Some(chol) = gram.cholesky() else { break };
            let step = -(jac.transpose() * chol.solve(&res));
            let biggest = step.amax();
            if !biggest.is_finite() || biggest <= 1e-14 {
                break;
            }
            let damp = if biggest > 2.0 { 2.0 / biggest } else { 1.0 };
            for v in 0..k {
                y[v] = (y[v] + damp * step[v]).clamp(self.lo, self.hi(v));
            }
            if res.amax() <= PROJECTION_TOL {
                break;
            }
        }
        Ok((0..ns).flat_map(|_| y.iter().copied()).collect())
    }

    fn objective(&self, x: &[f64], evals: &[Eval]) -> f64 {
        let (k, nm) = (self.k, self.nm);
        let gdiff = |s: usize, t: usize| -> f64 { (0..k).map(|v| (x[s * k + v].exp() - x[t * k + v].exp()).powi(2)).sum() };
        let mut f = 0.0;
        for pos in 0..nm {
            for (p, q) in [(0, 1), (2, 3)] {
                let (s, t) = (4 * pos + p, 4 * pos + q);
                f += gdiff(s, t);
                f += evals[s].volts.iter().zip(&evals[t].volts).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
        }
        let mut c = 0.0;
        for pos in 0..nm.saturating_sub(1) {
            for l in 0..4 {
                c += gdiff(4 * pos + l, 4 * (pos + 1) + l);
            }
        }
        let mut total = self.w.alpha * f + self.w.beta * c;
        if self.w.lambda != 0.0 {
            let r: f64 = (0..self.states()).flat_map(|s| (nm..k).map(move |v| s * k + v)).map(|i| (-2.0 * x[i]).exp()).sum();
            total += self.w.lambda * r;
        }
        total
    }

    /// Gauss-Newton matrix and gradient of the objective.
    fn linearize(&self, x: &[f64], evals: &[Eval]) -> (BandMatrix, Vec<f64>) {
        let (k, nm) = (self.k, self.nm);
        let n = self.states() * k;
        let mut h = BandMatrix::zeros(n, 4 * k);
        let mut g = vec![0.0; n];
        let conductance_pair = |h: &mut BandMatrix, g: &mut [f64], i: usize, j: usize, w: f64| {
            let (gi, gj) = (x[i].exp(), x[j].exp());
            let r = gi - gj;
            g[i] += 2.0 * w * r * gi;
            g[j] -= 2.0 * w * r * gj;
            h.add(i, i, 2.0 * w * gi * gi);
            h.add(j, j, 2.0 * w * gj * gj);
            h.add(j, i, -2.0 * w * gi * gj);
        };
        let nv = 2 * nm;
        for pos in 0..nm {
            for (p, q) in [(0, 1), (2, 3)] {
                let (s, t) = (4 * pos + p, 4 * pos + q);
                let w = self.w.alpha;
                for v in 0..k {
                    conductance_pair(&mut h, &mut g, s * k + v, t * k + v, w);
                }
                let (es, et) = (&evals[s], &evals[t]);
                for node in 0..nv {
                    let r = es.volts[node] - et.volts[node];
                    let js = &es.jv[node * k..(node + 1) * k];
                    let jt = &et.jv[node * k..(node + 1) * k];
                    for a in 0..k {
                        g[s * k + a] += 2.0 * w * r * js[a];
                        g[t * k + a] -= 2.0 * w * r * jt[a];
                    }
                    for a in 0..k {
                        if js[a] != 0.0 {
                            for b in 0..=a {
                                h.add(s * k + a, s * k + b, 2.0 * w * js[a] * js[b]);
                            }
                        }
                        if jt[a] != 0.0 {
                            for b in 0..=a {
                                h.add(t * k + a, t * k + b, 2.0 * w * jt[a] * jt[b]);
                            }
                            for b in 0..k {
                                h.add(t * k + a, s * k + b, -2.0 * w * jt[a] * js[b]);
                            }
                        }
                    }
                }
            }
        }
        for pos in 0..nm.saturating_sub(1) {
            for l in 0..4 {
                let (s, t) = (4 * pos + l, 4 * (pos + 1) + l);
                for v in 0..k {
                    conductance_pair(&mut h, &mut g, s * k + v, t * k + v, self.w.beta);
                }
            }
        }
        if self.w.lambda != 0.0 {
            for s in 0..self.states() {
                for v in nm..k {
                    let i = s * k + v;
                    let r2 = (-2.0 * x[i]).exp();
                    g[i] -= 2.0 * self.w.lambda * r2;
                    h.add(i, i, 4.0 * self.w.lambda * r2);
                }
            }
        }
        (h, g)
    }
}

fn project_all(p: &Problem, x: &mut [f64]) -> Result<Vec<Eval>, EstimateError> {
    let k = p.k;
    (0..p.states()).map(|s| p.project(s, &mut x[s * k..(s + 1) * k])).collect()
}

fn max_violation(evals: &[Eval]) -> f64 {
    evals.iter().map(|e| e.c.abs()).fold(0.0, f64::max)
}

/// Quadratic-model step in the original variables, or `None` if the damped
/// system could not be factored.
fn model_step(
    p: &Problem,
    h: &BandMatrix,
    grad: &[f64],
    evals: &[Eval],
    scale: &[f64],
    frozen: &[bool],
    mu: f64,
) -> Option<Vec<f64>> {
    let (k, ns) = (p.k, p.states());
    let n = ns * k;
    let mut m = h.clone();
    let mut gs: Vec<f64> = grad.iter().zip(scale).map(|(a, b)| a * b).collect();
    for i in 0..n {
        m.add(i, i, mu);
    }
    for i in (0..n).filter(|&i| frozen[i]) {
        m.isolate(i, 1.0);
        gs[i] = 0.0;
    }
    let chol = m.cholesky()?;
    let rows: Vec<Vec<f64>> = (0..ns)
        .map(|s| (0..k).map(|a| if frozen[s * k + a] { 0.0 } else { evals[s].grad_c[a] * scale[s * k + a] }).collect())
        .collect();
    let mut u = gs;
    chol.solve_in_place(&mut u);
    let mut w = vec![vec![0.0; n]; ns];
    for s in 0..ns {
        w[s][s * k..(s + 1) * k].copy_from_slice(&rows[s]);
        chol.solve_sparse_rhs(&mut w[s], s * k);
    }
    let dot_row = |s: usize, v: &[f64]| -> f64 { (0..k).map(|a| rows[s][a] * v[s * k + a]).sum() };
    let mut schur = DMatrix::<f64>::from_fn(ns, ns, |s, t| dot_row(s, &w[t]));
    let ridge = 1e-14 * (0..ns).map(|s| schur[(s, s)]).fold(0.0, f64::max);
    for s in 0..ns {
        schur[(s, s)] += ridge.max(f64::MIN_POSITIVE);
    }
    let rhs = DVector::from_fn(ns, |s, _| evals[s].c - dot_row(s, &u));
    let y = schur.cholesky()?.solve(&rhs);
    let mut d = vec![0.0; n];
    for i in 0..n {
        let mut z = u[i];
        for s in 0..ns {
            z += w[s][i] * y[s];
        }
        d[i] = -scale[i] * z;
    }
    if d.iter().all(|v| v.is_finite()) {
        Some(d)
    } else {
        None
    }
}

pub(crate) fn minimize(
    start: &StateEnsemble,
    weights: &ObjectiveWeights,
    options: &SolverOptions,
) -> Result<Outcome, EstimateError> {
    let grid = start.grid;
    let nm = grid.cells();
    let k = 3 * nm;
    let specs = start
        .states
        .iter()
        .map(|s| StateSpec { config: s.config, cell: s.cell, v_s: s.v_s, ln_target: s.v_r.ln() })
        .collect();
    let p = Problem {
        grid,
        nm,
        k,
        specs,
        r_ref_ground: start.drive.r_ref_ground,
        w: *weights,
        lo: (1.0 / OPEN_CIRCUIT).ln(),
        cell_hi: (1.0 / MIN_RESISTANCE).ln(),
        wire_hi: (1.0 / WIRE_FLOOR).ln(),
    };
    let mut x: Vec<f64> = start
        .states
        .iter()
        .flat_map(|s| {
            let f = &s.field;
            f.cell.iter().chain(&f.top_wire).chain(&f.bottom_wire).flatten().map(|r| (1.0 / r).ln()).collect::<Vec<_>>()
        })
        .collect();
    for (i, v) in x.iter_mut().enumerate() {
        *v = v.clamp(p.lo, p.hi(i));
    }
    let mut evals = project_all(&p, &mut x)?;
    let mut phi = p.objective(&x, &evals);
    if !(phi == 0.0) {
        // one field shared by every state has zero objective whenever it
        // fits all readings, so it is the natural first candidate
        let mut shared = p.consensus(&x)?;
        let shared_evals = project_all(&p, &mut shared)?;
        let shared_phi = p.objective(&shared, &shared_evals);
        let ok = |e: &[Eval]| max_violation(e) <= ACCEPT_TOL;
        if ok(&shared_evals) && (!ok(&evals) || shared_phi < phi) {
            x = shared;
            evals = shared_evals;
            phi = shared_phi;
        }
    }
    let mut mu = MU_START;
    let mut iterations = 0;
    let mut stationary = false;
    let n = x.len();

    while iterations < options.max_iterations {
        if phi == 0.0 {
            stationary = true;
            break;
        }
        iterations += 1;
        let (mut h, grad) = p.linearize(&x, &evals);
        let hmax = (0..n).map(|i| h.diag(i)).fold(0.0, f64::max);
        let floor = if hmax > 0.0 { 1e-14 * hmax } else { 1.0 };
        let scale: Vec<f64> = (0..n).map(|i| 1.0 / h.diag(i).max(floor).sqrt()).collect();
        h.scale_symmetric(&scale);
        let frozen: Vec<bool> = (0..n).map(|i| (x[i] <= p.lo && grad[i] > 0.0) || (x[i] >= p.hi(i) && grad[i] < 0.0)).collect();

        let mut accepted = false;
        while mu <= MU_MAX {
            let Some(mut d) = model_step(&p, &h, &grad, &evals, &scale, &frozen, mu) else {
                mu *= 10.0;
                continue;
            };
            let mut trial = x.clone();
            for i in 0..n {
                d[i] = d[i].clamp(-MAX_LOG_STEP, MAX_LOG_STEP);
                trial[i] = (x[i] + d[i]).clamp(p.lo, p.hi(i));
            }
            if trial.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 1e-12) {
                break;
            }
            let trial_evals = project_all(&p, &mut trial)?;
            let trial_phi = p.objective(&trial, &trial_evals);
            if max_violation(&trial_evals) <= ACCEPT_TOL && trial_phi < phi {
                let rel = (phi - trial_phi) / phi;
                x = trial;
                evals = trial_evals;
                phi = trial_phi;
                mu = (mu / 3.0).max(MU_MIN);
                accepted = true;
                if rel <= options.stationarity_tol {
                    stationary = true;
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            stationary = true;
        }
        if stationary {
            break;
        }
    }

    let fields = (0..p.states()).map(|s| p.field(&x[s * k..(s + 1) * k])).collect();
    Ok(Outcome { fields, iterations, stationary })
}
