use singular_shooting::benchmarks::{self, default_method, BenchmarkCase};
use singular_shooting::diagnostics::{check_solution, implied_jumps, Tolerances};
use singular_shooting::solver::solve;
use singular_shooting::{
    ControlStructure, EntryConditions, Formulation, Mode, ShootError, ShootingProblem,
};

const BOTH: [Formulation; 2] = [Formulation::Classical, Formulation::Extended];

fn solve_from_reference(case: &BenchmarkCase, f: Formulation) -> Vec<f64> {
    let sp = case.shooting(f).unwrap();
    let start = case.reference(f).unwrap();
    let rep = solve(&sp, start, default_method(f), &case.solver_settings());
    assert!(rep.converged(), "{} {f}: {}", case.name, rep.text());
    assert!(
        rep.iterations() <= 3,
        "{} {f}: {} iterations",
        case.name,
        rep.iterations()
    );
    rep.solution().to_vec()
}

#[test]
fn formulations_agree_from_the_published_solution() {
    for case in benchmarks::all() {
        let c = solve_from_reference(&case, Formulation::Classical);
        let e = solve_from_reference(&case, Formulation::Extended);
        let gap = c
            .iter()
            .zip(&e)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = 1.0 + c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(
            gap <= 1e-9 * scale,
            "{}: formulations differ by {gap:e}",
            case.name
        );
    }
}

#[test]
fn objectives_match_published_values() {
    // Published objectives carry 7 to 11 significant digits. The regulator's
    // classical root is only resolved to about sqrt(tol) in nu.
    for (case, tol) in [
        (benchmarks::fishing(), 5e-8),
        (benchmarks::regulator(), 1e-10),
        (benchmarks::goddard(), 5e-10),
    ] {
        let published = case.published.as_ref().unwrap().objective;
        for f in BOTH {
            let nu = solve_from_reference(&case, f);
            let obj = case.shooting(f).unwrap().objective(&nu).unwrap();
            assert!(
                (obj - published).abs() <= tol,
                "{} {f}: {obj} vs {published}",
                case.name
            );
        }
    }
}

#[test]
fn dropped_jumps_vanish_at_extended_solutions() {
    for case in benchmarks::all() {
        let nu = solve_from_reference(&case, Formulation::Extended);
        let jumps = implied_jumps(&case.problem, &case.structure, &nu).unwrap();
        assert!(!jumps.is_empty(), "{}", case.name);
        for j in jumps {
            assert!(j.abs() <= 1e-8, "{}: dropped jump {j:e}", case.name);
        }
    }
}

#[test]
fn optimality_checks_pass_at_each_solution() {
    for case in benchmarks::all() {
        for f in BOTH {
            let nu = solve_from_reference(&case, f);
            let traj = case.shooting(f).unwrap().trajectory(&nu).unwrap();
            let rep = check_solution(
                &case.problem,
                &case.structure,
                &traj,
                &Tolerances::default(),
            );
            assert!(rep.passed(), "{} {f}\n{}", case.name, rep.table());
        }
    }
}

#[test]
fn regulator_classical_needs_the_squared_entry_row() {
    let case = benchmarks::regulator();
    let err = ShootingProblem::with_entry_conditions(
        case.problem.clone(),
        case.structure.clone(),
        Formulation::Classical,
        EntryConditions::Separate,
    )
    .unwrap_err();
    match err {
        ShootError::NotSquare { rows, unknowns, .. } => assert_eq!((rows, unknowns), (4, 3)),
        other => panic!("unexpected {other}"),
    }
    assert_eq!(case.shooting(Formulation::Classical).unwrap().rows(), 3);
    assert_eq!(case.shooting(Formulation::Extended).unwrap().rows(), 5);
}

#[test]
fn extended_row_counts() {
    // Fishing: pT, Phi, Phi_dot, two jumps. Goddard: six classical rows plus two jumps.
    assert_eq!(
        benchmarks::fishing()
            .shooting(Formulation::Extended)
            .unwrap()
            .rows(),
        5
    );
    assert_eq!(
        benchmarks::fishing()
            .shooting(Formulation::Classical)
            .unwrap()
            .rows(),
        3
    );
    assert_eq!(
        benchmarks::goddard()
            .shooting(Formulation::Extended)
            .unwrap()
            .rows(),
        8
    );
    assert_eq!(
        benchmarks::goddard()
            .shooting(Formulation::Classical)
            .unwrap()
            .rows(),
        6
    );
}

#[test]
fn regulator_extended_from_a_rough_guess() {
    let case = benchmarks::regulator();
    let sp = case.shooting(Formulation::Extended).unwrap();
    let rep = solve(
        &sp,
        &[1.0, 1.5, 1.4],
        default_method(Formulation::Extended),
        &case.solver_settings(),
    );
    assert!(rep.converged());
    let reference = case.reference(Formulation::Extended).unwrap();
    for (a, b) in rep.solution().iter().zip(reference) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn fishing_singular_arc_reaching_the_horizon_has_no_square_classical_system() {
    let structure = ControlStructure::scalar(&[Mode::Upper, Mode::Singular]).unwrap();
    let case = BenchmarkCase::from_family(benchmarks::fishing().family, Some(structure)).unwrap();
    assert!(case.published.is_none());
    assert!(matches!(
        case.shooting(Formulation::Classical),
        Err(ShootError::NotSquare { .. })
    ));
    assert!(case.shooting(Formulation::Extended).is_ok());
}

#[test]
fn rk4_is_fourth_order_at_each_solution() {
    // 2000 steps already reach the roundoff floor on fishing (|x| ~ 1e2).
    for case in benchmarks::all() {
        let f = Formulation::Extended;
        let sp = case.shooting(f).unwrap();
        let orders = sp
            .observed_orders(case.reference(f).unwrap(), 250, 2, 16000)
            .unwrap();
        for q in &orders {
            assert!((3.7..=4.3).contains(q), "{}: orders {orders:?}", case.name);
        }
    }
}

#[test]
fn solution_jacobians_reconstruct_from_their_svd() {
    for case in benchmarks::all() {
        for f in BOTH {
            let sp = case.shooting(f).unwrap();
            let rep = solve(
                &sp,
                case.reference(f).unwrap(),
                default_method(f),
                &case.solver_settings(),
            );
            let svd = rep.svd.expect("final Jacobian");
            assert!(
                svd.reconstruction_error <= singular_shooting::solver::SVD_RECONSTRUCTION_TOL,
                "{} {f}: {svd:?}",
                case.name
            );
        }
    }
}
