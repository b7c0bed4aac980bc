use crossbar_core::calibration::{fit_models, ghost_correlation, process_stream, single_touch_samples, FeatureKind, ForceLaw};
use crossbar_core::naive::naive_resistance;
use crossbar_core::optimizer::{
    bootstrap_states, objective, solve_feasible, solve_regularized, Estimator, ObjectiveWeights,
};
use crossbar_core::sim::synthesize_frame;
use crossbar_core::{CellIndex, DriveSetup, GridSpec, ResistanceField};
use proptest::prelude::*;

fn field_2x2(spread: f64) -> impl Strategy<Value = ResistanceField> {
    let cells = prop::collection::vec(-spread..spread, 4);
    let wires = prop::collection::vec(-4.0f64..-3.0, 8);
    (cells, wires).prop_map(|(c, w)| {
        let g = GridSpec::new(2, 2).unwrap();
        let mut f = ResistanceField::uniform(g, 1.0, 0.0);
        for k in 0..4 {
            let (i, j) = (k / 2, k % 2);
            f.cell[i][j] = 10f64.powf(c[k]);
            f.top_wire[i][j] = 10f64.powf(w[k]);
            f.bottom_wire[i][j] = 10f64.powf(w[4 + k]);
        }
        f
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stages_stay_feasible(field in field_2x2(1.0)) {
        let d = DriveSetup::default();
        let frame = synthesize_frame(&field, &d, 0.0, 0).unwrap();
        let start = bootstrap_states(&frame, &d).unwrap();
        let (feasible, r1) = solve_feasible(&start, &ObjectiveWeights::FEASIBLE).unwrap();
        prop_assert!(r1.converged);
        prop_assert!(r1.max_kcl_residual <= 1e-6);
        prop_assert!(r1.objective <= 1e-8, "{}", r1.objective);
        let entry = objective(&feasible, &ObjectiveWeights::REGULARIZED);
        let (_, r2) = solve_regularized(&feasible, &ObjectiveWeights::REGULARIZED).unwrap();
        prop_assert!(r2.converged);
        prop_assert!(r2.max_kcl_residual <= 1e-6);
        prop_assert!(r2.objective <= entry);
    }

    // cell contrast up to 10x; larger contrasts with wires near 1e-3 admit
    // ghost-like exact fits
    #[test]
    fn recovers_cells(field in field_2x2(0.5)) {
        let d = DriveSetup::default();
        let frame = synthesize_frame(&field, &d, 0.0, 0).unwrap();
        let est = Estimator::default().estimate(&frame, &d).unwrap();
        for (e, t) in est.resistance.iter().flatten().zip(field.cell.iter().flatten()) {
            prop_assert!(((e - t) / t).abs() <= 0.05, "{e} vs {t}");
        }
    }
}

#[test]
fn constant_stream_is_stationary() {
    let g = GridSpec::new(2, 2).unwrap();
    let d = DriveSetup::default();
    let law = ForceLaw::default();
    let est = Estimator::default();
    let samples = single_touch_samples(g, &d, &law, 5e-4, &[0.5, 2.0, 6.0], 0.0, 0, &est).unwrap();
    let models = fit_models(&samples, FeatureKind::SolvedConductance).unwrap();
    let field = ResistanceField::uniform(g, 1.0, 5e-4).with_cell(CellIndex::new(0, 1), law.resistance(3.0));
    let frame = synthesize_frame(&field, &d, 0.0, 0).unwrap();
    let frames = vec![frame; 10];
    let out = process_stream(&frames, &d, &models, &est).unwrap();
    assert_eq!(out.frames.len(), 10);
    let reference = &out.frames[1];
    for f in &out.frames[1..] {
        assert!(f.error.is_none());
        for (a, b) in f.conductance.iter().flatten().zip(reference.conductance.iter().flatten()) {
            assert!((a - b).abs() <= 1e-5 * b.abs(), "{a} vs {b}");
        }
    }
    let cold: usize = out.frames[0].reports.map(|(a, b)| a.iterations + b.iterations).unwrap();
    let warm: f64 = out.frames[1..]
        .iter()
        .map(|f| f.reports.map(|(a, b)| a.iterations + b.iterations).unwrap() as f64)
        .sum::<f64>()
        / 9.0;
    assert!(warm < cold as f64, "warm {warm} cold {cold}");
}

#[test]
fn step_stream_suppresses_ghost_correlation() {
    let g = GridSpec::new(2, 2).unwrap();
    let d = DriveSetup::default();
    let law = ForceLaw::default();
    let touched = CellIndex::new(1, 1);
    let background = [CellIndex::new(0, 0)];
    let frames: Vec<_> = (0..10u64)
        .map(|t| {
            let force = if t >= 5 { 8.0 } else { 0.0 };
            let mut field = ResistanceField::uniform(g, 1.0, 1e-4).with_cell(touched, law.resistance(force));
            for c in background {
                field.cell[c.row][c.col] = law.resistance(4.0);
            }
            let mut f = synthesize_frame(&field, &d, 0.0, t).unwrap();
            f.timestamp = Some(t);
            f
        })
        .collect();
    let est = Estimator::default();
    let samples = single_touch_samples(g, &d, &law, 1e-4, &[0.5, 2.0, 6.0], 0.0, 0, &est).unwrap();
    let models = fit_models(&samples, FeatureKind::SolvedConductance).unwrap();
    let out = process_stream(&frames, &d, &models, &est).unwrap();
    let series = out.conductance_series(touched);
    assert!(series[9] > 2.0 * series[0]);
    let naive_series = |c: CellIndex| -> Vec<f64> { frames.iter().map(|f| 1.0 / naive_resistance(f, &d)[c.row][c.col]).collect() };
    let ours = ghost_correlation(|c| out.conductance_series(c), g, touched);
    let naive = ghost_correlation(naive_series, g, touched);
    assert!(ours < naive, "ours {ours} naive {naive}");
}
