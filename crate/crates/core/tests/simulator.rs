mod common;

use common::mesh_oracle::loop_current_solve;
use crossbar_core::sim::{build_netlist, simulate_measurement, solve_nodes};
use crossbar_core::{frame_ordering, CellIndex, ConfigLabel, DriveSetup, GridSpec, ResistanceField};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn random_field(rng: &mut impl Rng, grid: GridSpec) -> ResistanceField {
    let mut f = ResistanceField::uniform(grid, 1.0, 1.0);
    for layer in [&mut f.cell, &mut f.top_wire, &mut f.bottom_wire] {
        for v in layer.iter_mut().flatten() {
            *v = log_uniform(rng, 1e-3, 1e3);
        }
    }
    f
}

#[test]
fn matches_loop_current_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..60 {
        let grid = GridSpec::new(rng.gen_range(1..=3), rng.gen_range(1..=3)).unwrap();
        let field = random_field(&mut rng, grid);
        let drive = DriveSetup::new(1.0, log_uniform(&mut rng, 1e-3, 1e3), log_uniform(&mut rng, 1e-3, 1e3)).unwrap();
        for (cell, config) in frame_ordering(grid) {
            let net = build_netlist(&field, &drive, config, cell).unwrap();
            let v = solve_nodes(&net).unwrap();
            let o = loop_current_solve(&field, &drive, config, cell);
            for c in grid.row_major() {
                worst = worst.max((v.at(net.nodes.top(c)) - o.top[c.row][c.col]).abs());
                worst = worst.max((v.at(net.nodes.bottom(c)) - o.bottom[c.row][c.col]).abs());
            }
            worst = worst.max((v.at(net.nodes.driven()) - o.driven).abs());
            worst = worst.max((v.at(net.nodes.sensed()) - o.sensed).abs());
        }
    }
    assert!(worst <= 1e-9, "max deviation {worst:e}");
}

#[test]
fn zero_wires_are_shorts() {
    let g = GridSpec::new(2, 2).unwrap();
    let mut f = ResistanceField::uniform(g, 0.5, 0.0);
    f.cell[0][1] = 0.01;
    let d = DriveSetup::default();
    let shorted = simulate_measurement(&f, &d, ConfigLabel::A.config(), CellIndex::new(1, 1)).unwrap();
    let mut tiny = f.clone();
    for v in tiny.top_wire.iter_mut().chain(tiny.bottom_wire.iter_mut()).flatten() {
        *v = 1e-12;
    }
    let nearly = simulate_measurement(&tiny, &d, ConfigLabel::A.config(), CellIndex::new(1, 1)).unwrap();
    assert!((shorted.v_r - nearly.v_r).abs() < 1e-9, "{shorted:?} {nearly:?}");
    assert!((shorted.v_s - nearly.v_s).abs() < 1e-9);
}

fn field_strategy() -> impl Strategy<Value = ResistanceField> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(r, c)| {
        let n = r * c;
        let v = prop::collection::vec(-3.0f64..3.0, 3 * n);
        v.prop_map(move |exps| {
            let grid = GridSpec::new(r, c).unwrap();
            let mut f = ResistanceField::uniform(grid, 1.0, 1.0);
            let mut it = exps.into_iter().map(|e| 10f64.powf(e));
            for layer in [&mut f.cell, &mut f.top_wire, &mut f.bottom_wire] {
                for v in layer.iter_mut().flatten() {
                    *v = it.next().unwrap();
                }
            }
            f
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_invariance(field in field_strategy(), s in 0.01f64..100.0) {
        let d = DriveSetup::default();
        for (cell, config) in frame_ordering(field.grid()) {
            let a = simulate_measurement(&field, &d, config, cell).unwrap();
            let b = simulate_measurement(&field.scaled(s), &d.scaled(s), config, cell).unwrap();
            prop_assert!((a.v_s - b.v_s).abs() <= 1e-12 * a.v_s.abs().max(1e-300) + 1e-15);
            prop_assert!((a.v_r - b.v_r).abs() <= 1e-12 * a.v_r.abs() + 1e-300, "{} vs {}", a.v_r, b.v_r);
        }
    }

    #[test]
    fn reciprocity_between_a_and_c(field in field_strategy()) {
        let d = DriveSetup::new(1.0, 0.1, 0.1).unwrap();
        for cell in field.grid().row_major() {
            let a = simulate_measurement(&field, &d, ConfigLabel::A.config(), cell).unwrap();
            let c = simulate_measurement(&field, &d, ConfigLabel::C.config(), cell).unwrap();
            prop_assert!((a.v_r - c.v_r).abs() <= 1e-12 * a.v_r.abs(), "{} vs {}", a.v_r, c.v_r);
        }
    }

    #[test]
    fn kcl_holds_at_every_node(field in field_strategy()) {
        let d = DriveSetup::default();
        for (cell, config) in frame_ordering(field.grid()) {
            let net = build_netlist(&field, &d, config, cell).unwrap();
            let v = solve_nodes(&net).unwrap();
            prop_assert!(net.edge_kcl_residual(&v) <= 1e-9);
        }
    }

    #[test]
    fn single_cell_sense_voltage_decreases_with_resistance(r1 in -3.0f64..3.0, dr in 0.01f64..2.0, w in 0.0f64..0.1) {
        let g = GridSpec::new(1, 1).unwrap();
        let d = DriveSetup::default();
        let lo = ResistanceField::uniform(g, 10f64.powf(r1), w);
        let hi = ResistanceField::uniform(g, 10f64.powf(r1 + dr), w);
        let a = simulate_measurement(&lo, &d, ConfigLabel::A.config(), CellIndex::new(0, 0)).unwrap();
        let b = simulate_measurement(&hi, &d, ConfigLabel::A.config(), CellIndex::new(0, 0)).unwrap();
        prop_assert!(b.v_r < a.v_r);
    }
}
