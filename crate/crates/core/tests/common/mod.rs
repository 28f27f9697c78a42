#![allow(dead_code)]

use singular_shooting::{EndpointConstraints, EndpointCost, FinalTime, ProblemDef, VectorField};

/// Double integrator `x1' = x2, x2' = u` with running cost `(x1^2 + x2^2)/2`
/// in the cost state `z`, no control bounds, fixed horizon `t_final`,
/// constraint `x1(0) = a` and endpoint cost `w/2 (x1(T) - 1)^2 + z(T)`.
pub fn toy(a: f64, w: f64, t_final: f64) -> ProblemDef {
    let cost = EndpointCost::new(
        move |_, xt| 0.5 * w * (xt[0] - 1.0).powi(2) + xt[2],
        move |_, xt, g0, gt| {
            g0.fill(0.0);
            gt[0] = w * (xt[0] - 1.0);
            gt[1] = 0.0;
            gt[2] = 1.0;
        },
    );
    let eta = EndpointConstraints::new(
        1,
        move |x0, _, out| out[0] = x0[0] - a,
        |_, _, j0, jt| {
            j0.fill(0.0);
            jt.fill(0.0);
            j0[0] = 1.0;
        },
    );
    toy_with(cost, eta, t_final)
}

pub fn toy_with(cost: EndpointCost, eta: EndpointConstraints, t_final: f64) -> ProblemDef {
    let f0 = VectorField::new(|x, out| {
        out[0] = x[1];
        out[1] = 0.0;
        out[2] = 0.5 * (x[0] * x[0] + x[1] * x[1]);
    })
    .with_jacobian(|x, j| {
        j.fill(0.0);
        j[1] = 1.0;
        j[6] = x[0];
        j[7] = x[1];
    })
    .with_second_derivative(|_, v, w, out| {
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = v[0] * w[0] + v[1] * w[1];
    });
    let f1 = VectorField::new(|_, out| {
        out[0] = 0.0;
        out[1] = 1.0;
        out[2] = 0.0;
    })
    .with_jacobian(|_, j| j.fill(0.0))
    .with_second_derivative(|_, _, _, out| out.fill(0.0));
    ProblemDef::new("toy", 3, vec![f0, f1], cost, eta, FinalTime::Fixed(t_final))
        .unwrap()
        .with_cost_state(2)
        .unwrap()
}

/// Closed-form extremal of [`toy`]: on the singular arc `u = x1`, so
/// `x1 = a cosh t + c sinh t`, `p1 = -x2`, `p2 = 0`. Returns
/// `(x0_1, x0_2, p1, p2, beta)`.
pub fn toy_solution(a: f64, w: f64, t_final: f64) -> Vec<f64> {
    let (s, c) = (t_final.sinh(), t_final.cosh());
    let b = (w - a * (s + w * c)) / (c + w * s);
    vec![a, b, -b, 0.0, b]
}
