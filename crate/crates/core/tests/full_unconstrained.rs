mod common;

use approx::assert_abs_diff_eq;
use singular_shooting::shooting::BlockKind;
use singular_shooting::solver::{gauss_newton, SolverSettings};
use singular_shooting::{
    ControlBound, ControlStructure, EndpointConstraints, EndpointCost, Formulation, Mode,
    ShootError, ShootingProblem,
};

fn any_structure() -> ControlStructure {
    ControlStructure::scalar(&[Mode::Singular]).unwrap()
}

#[test]
fn toy_converges_to_closed_form() {
    let (a, w, t) = (1.0, 2.0, 1.0);
    let sp = ShootingProblem::new(
        common::toy(a, w, t),
        any_structure(),
        Formulation::FullUnconstrained,
    )
    .unwrap();
    assert_eq!(sp.layout.names(), ["x0_1", "x0_2", "p1", "p2", "beta1"]);
    assert_eq!(sp.rows(), 7);
    let rep = gauss_newton(&sp, &[0.5, 0.0, 0.0, 0.3, 0.0], &SolverSettings::default());
    assert!(rep.converged(), "{}", rep.text());
    let expected = common::toy_solution(a, w, t);
    for (got, want) in rep.solution().iter().zip(&expected) {
        assert_abs_diff_eq!(*got, *want, epsilon = 1e-10);
    }
}

#[test]
fn toy_residual_blocks() {
    let sp = ShootingProblem::new(
        common::toy(1.0, 2.0, 1.0),
        any_structure(),
        Formulation::FullUnconstrained,
    )
    .unwrap();
    let res = sp.assemble(&common::toy_solution(1.0, 2.0, 1.0)).unwrap();
    let kinds: Vec<BlockKind> = res.blocks.iter().map(|b| b.kind).collect();
    assert_eq!(
        kinds,
        [
            BlockKind::EndpointConstraints,
            BlockKind::InitialTransversality,
            BlockKind::FinalTransversality,
            BlockKind::TerminalSwitching,
            BlockKind::InitialSwitchingRate,
        ]
    );
    // The closed form satisfies every row up to the RK4 error.
    assert!(res.norm() < 1e-9, "{}", res.report());
}

#[test]
fn four_endpoint_constraints_give_ten_rows() {
    let eta = EndpointConstraints::new(
        4,
        |x0, xt, out| {
            out[0] = x0[0] - 1.0;
            out[1] = x0[1];
            out[2] = xt[0];
            out[3] = xt[1];
        },
        |_, _, j0, jt| {
            j0.fill(0.0);
            jt.fill(0.0);
            j0[0] = 1.0;
            j0[3 + 1] = 1.0;
            jt[2 * 3] = 1.0;
            jt[3 * 3 + 1] = 1.0;
        },
    );
    let prob = common::toy_with(EndpointCost::linear_terminal(vec![0.0, 0.0, 1.0]), eta, 1.0);
    let sp = ShootingProblem::new(prob, any_structure(), Formulation::FullUnconstrained).unwrap();
    assert_eq!(sp.rows(), 10);
    assert_eq!(sp.unknowns(), 8);
}

#[test]
fn bounded_problems_are_rejected() {
    let bounded = common::toy(1.0, 2.0, 1.0)
        .with_bounds(vec![ControlBound {
            lower: -1.0,
            upper: 1.0,
        }])
        .unwrap();
    let err =
        ShootingProblem::new(bounded, any_structure(), Formulation::FullUnconstrained).unwrap_err();
    assert!(matches!(err, ShootError::Config(_)));
}
