use proptest::prelude::*;
use singular_shooting::batch::GridSpec;
use singular_shooting::benchmarks;
use singular_shooting::problem::{singular_control, singular_control_generic};
use singular_shooting::{Formulation, TrajectoryRecord};

fn regulator_nu() -> impl Strategy<Value = Vec<f64>> {
    (-3.0..3.0f64, -3.0..3.0f64, 0.2..4.8f64).prop_map(|(a, b, t)| vec![a, b, t])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layout_round_trips(nu in prop::collection::vec(-100.0..100.0f64, 6)) {
        let sp = benchmarks::goddard().shooting(Formulation::Extended).unwrap();
        let pt = sp.layout.decode(&nu).unwrap();
        prop_assert_eq!(sp.layout.encode(&pt), nu);
    }

    #[test]
    fn residual_length_matches_row_count(nu in regulator_nu()) {
        for f in [Formulation::Classical, Formulation::Extended] {
            let sp = benchmarks::regulator().shooting(f).unwrap();
            let res = sp.assemble(&nu).unwrap();
            prop_assert_eq!(res.len(), sp.rows());
        }
    }

    #[test]
    fn hamiltonian_is_constant_on_bang_arcs(nu in regulator_nu()) {
        // The first regulator arc has a fixed control, so H is a first
        // integral there up to the RK4 error.
        let sp = benchmarks::regulator().shooting(Formulation::Extended).unwrap();
        let traj = sp.trajectory(&nu).unwrap();
        let h = &traj.arcs[0].h;
        let dev = h.iter().map(|v| (v - h[0]).abs()).fold(0.0, f64::max);
        prop_assert!(dev <= 1e-9 * (1.0 + h[0].abs()), "deviation {}", dev);
    }

    #[test]
    fn trajectory_csv_is_lossless(nu in regulator_nu()) {
        let sp = benchmarks::regulator().shooting(Formulation::Extended).unwrap();
        let traj = sp.trajectory(&nu).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let back = TrajectoryRecord::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.arcs, traj.arcs);
    }

    #[test]
    fn grid_indices_are_a_bijection(counts in prop::collection::vec(2usize..5, 1..4)) {
        let spec: Vec<String> = counts.iter().enumerate().map(|(i, c)| format!("a{i}=0:1:{c}")).collect();
        let grid = GridSpec::parse(&spec.join(",")).unwrap();
        prop_assert_eq!(grid.len(), counts.iter().product::<usize>());
        let mut seen = std::collections::HashSet::new();
        for flat in 0..grid.len() {
            let idx = grid.multi_index(flat);
            prop_assert!(idx.iter().zip(&counts).all(|(i, c)| i < c));
            prop_assert!(seen.insert(idx));
        }
    }

    #[test]
    fn fishing_closed_form_matches_generic(x in 5.0..80.0f64, p1 in -2.0..2.0f64) {
        let case = benchmarks::fishing();
        let xs = [x, 0.0];
        let ps = [p1, 1.0];
        let a = singular_control(&case.problem, &xs, &ps, &[0], &[0.0]).unwrap();
        let b = singular_control_generic(&case.problem, &xs, &ps, &[0], &[0.0]).unwrap();
        prop_assert!((a[0] - b[0]).abs() <= 1e-9 * (1.0 + a[0].abs()), "{} vs {}", a[0], b[0]);
    }
}
