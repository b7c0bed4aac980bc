//! Loop-current reference solver for the crossbar readout circuit.
//!
//! Builds the circuit graph independently of the crate's netlist code,
//! picks a BFS spanning tree that contains the supply, and solves the
//! fundamental-loop equations `(B R Bᵀ) I = B E`. Node potentials are then
//! recovered by walking the tree out from ground.

use std::collections::VecDeque;

use crossbar_core::{CellIndex, DriveLayer, DriveSetup, OhmmeterConfig, ResistanceField};
use nalgebra::{DMatrix, DVector};

pub struct OracleSolution {
    pub top: Vec<Vec<f64>>,
    pub bottom: Vec<Vec<f64>>,
    pub driven: f64,
    pub sensed: f64,
}

struct Branch {
    from: usize,
    to: usize,
    r: f64,
    emf: f64,
}

pub fn loop_current_solve(
    field: &ResistanceField,
    drive: &DriveSetup,
    config: OhmmeterConfig,
    sel: CellIndex,
) -> OracleSolution {
    let (n, m) = (field.cell.len(), field.cell[0].len());
    // 0 ground, 1 supply, 2 row electrode, 3 column electrode, then nodes
    let t = |i: usize, j: usize| 4 + i * m + j;
    let b = |i: usize, j: usize| 4 + n * m + i * m + j;
    let nodes = 4 + 2 * n * m;
    let (row_el, col_el) = (2, 3);
    let (driven, sensed) = match config.drive_layer {
        DriveLayer::TopDriven => (row_el, col_el),
        DriveLayer::BottomDriven => (col_el, row_el),
    };

    let mut br = vec![
        Branch { from: 0, to: 1, r: 0.0, emf: drive.v_dd },
        Branch { from: 1, to: driven, r: drive.r_ref_source, emf: 0.0 },
        Branch { from: sensed, to: 0, r: drive.r_ref_ground, emf: 0.0 },
    ];
    for i in 0..n {
        for j in 0..m {
            br.push(Branch { from: t(i, j), to: b(i, j), r: field.cell[i][j], emf: 0.0 });
            if j == 0 {
                if i == sel.row {
                    br.push(Branch { from: row_el, to: t(i, 0), r: field.top_wire[i][0], emf: 0.0 });
                }
            } else {
                br.push(Branch { from: t(i, j - 1), to: t(i, j), r: field.top_wire[i][j], emf: 0.0 });
            }
            if i == 0 {
                if j == sel.col {
                    br.push(Branch { from: col_el, to: b(0, j), r: field.bottom_wire[0][j], emf: 0.0 });
                }
            } else {
                br.push(Branch { from: b(i - 1, j), to: b(i, j), r: field.bottom_wire[i][j], emf: 0.0 });
            }
        }
    }

    let mut adj = vec![Vec::new(); nodes];
    for (k, e) in br.iter().enumerate() {
        adj[e.from].push(k);
        adj[e.to].push(k);
    }
    let mut parent_edge = vec![usize::MAX; nodes];
    let mut depth = vec![usize::MAX; nodes];
    let mut in_tree = vec![false; br.len()];
    let mut order = Vec::new();
    let mut q = VecDeque::from([0usize]);
    depth[0] = 0;
    while let Some(u) = q.pop_front() {
        order.push(u);
        for &k in &adj[u] {
            let v = if br[k].from == u { br[k].to } else { br[k].from };
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                parent_edge[v] = k;
                in_tree[k] = true;
                q.push_back(v);
            }
        }
    }
    assert!(in_tree[0], "supply must be a tree branch");

    let other = |k: usize, u: usize| if br[k].from == u { br[k].to } else { br[k].from };
    // Loop rows: the link forward, then the tree path from its head back to its tail.
    let links: Vec<usize> = (0..br.len()).filter(|k| !in_tree[*k]).collect();
    let mut bmat = DMatrix::<f64>::zeros(links.len(), br.len());
    for (l, &k) in links.iter().enumerate() {
        bmat[(l, k)] = 1.0;
        let (mut u, mut v) = (br[k].to, br[k].from);
        // walk u (head) and v (tail) up to their common ancestor
        let mut up_u = Vec::new();
        let mut up_v = Vec::new();
        while u != v {
            if depth[u] >= depth[v] {
                up_u.push((parent_edge[u], u));
                u = other(parent_edge[u], u);
            } else {
                up_v.push((parent_edge[v], v));
                v = other(parent_edge[v], v);
            }
        }
        // head -> ancestor: traversing from child to parent
        for (e, child) in up_u {
            bmat[(l, e)] += if br[e].from == child { 1.0 } else { -1.0 };
        }
        // ancestor -> tail: traversing from parent to child
        for (e, child) in up_v {
            bmat[(l, e)] += if br[e].to == child { 1.0 } else { -1.0 };
        }
    }
    let r = DMatrix::from_diagonal(&DVector::from_iterator(br.len(), br.iter().map(|e| e.r)));
    let emf = DVector::from_iterator(br.len(), br.iter().map(|e| e.emf));
    let z = &bmat * r * bmat.transpose();
    let loops = z.lu().solve(&(&bmat * emf)).expect("loop matrix is nonsingular");
    let current = bmat.transpose() * loops;

    let mut pot = vec![0.0; nodes];
    for &u in order.iter().skip(1) {
        let k = parent_edge[u];
        let drop = br[k].r * current[k] - br[k].emf; // V_from - V_to
        pot[u] = if br[k].to == u { pot[br[k].from] - drop } else { pot[br[k].to] + drop };
    }

    OracleSolution {
        top: (0..n).map(|i| (0..m).map(|j| pot[t(i, j)]).collect()).collect(),
        bottom: (0..n).map(|i| (0..m).map(|j| pot[b(i, j)]).collect()).collect(),
        driven: pot[driven],
        sensed: pot[sensed],
    }
}
