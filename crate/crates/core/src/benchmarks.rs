//! Ready-made test problems: a fishery harvest, a bounded linear-quadratic
//! regulator and the vertical Goddard rocket ascent, with their published
//! shooting solutions.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShootError};
use crate::problem::{
    ControlBound, EndpointConstraints, EndpointCost, FinalTime, ProblemDef, VectorField,
};
use crate::shooting::{EntryConditions, Formulation, ShootingProblem};
use crate::solver::{Method, SolverSettings};
use crate::structure::{ControlStructure, Mode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FishingParams {
    pub final_time: f64,
    pub e: f64,
    pub c: f64,
    pub r: f64,
    pub k: f64,
    pub u_max: f64,
    pub x0: f64,
    /// Multiplies the running cost; 1 for the original problem.
    #[serde(default = "one")]
    pub cost_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for FishingParams {
    fn default() -> Self {
        FishingParams {
            final_time: 10.0,
            e: 1.0,
            c: 17.5,
            r: 0.71,
            k: 80.5,
            u_max: 20.0,
            x0: 70.0,
            cost_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulatorParams {
    pub final_time: f64,
    pub x0: [f64; 2],
    pub lower: f64,
    pub upper: f64,
}

impl Default for RegulatorParams {
    fn default() -> Self {
        RegulatorParams {
            final_time: 5.0,
            x0: [0.0, 1.0],
            lower: -1.0,
            upper: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoddardParams {
    pub b: f64,
    pub thrust_max: f64,
    pub drag_coeff: f64,
    pub drag_decay: f64,
    pub x0: [f64; 3],
    pub r_target: f64,
    pub final_time_guess: f64,
}

impl Default for GoddardParams {
    fn default() -> Self {
        GoddardParams {
            b: 2.0,
            thrust_max: 3.5,
            drag_coeff: 310.0,
            drag_decay: 500.0,
            x0: [1.0, 0.0, 1.0],
            r_target: 1.01,
            final_time_guess: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    Fishing(FishingParams),
    Regulator(RegulatorParams),
    Goddard(GoddardParams),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Fishing(_) => "fishing",
            Family::Regulator(_) => "regulator",
            Family::Goddard(_) => "goddard",
        }
    }

    pub fn by_name(name: &str) -> Result<Family> {
        match name.to_ascii_lowercase().as_str() {
            "fishing" => Ok(Family::Fishing(FishingParams::default())),
            "regulator" => Ok(Family::Regulator(RegulatorParams::default())),
            "goddard" => Ok(Family::Goddard(GoddardParams::default())),
            other => Err(ShootError::Config(format!(
                "unknown problem '{other}' (expected fishing, regulator or goddard)"
            ))),
        }
    }

    pub fn problem(&self) -> Result<ProblemDef> {
        match self {
            Family::Fishing(p) => fishing_problem(p),
            Family::Regulator(p) => regulator_problem(p),
            Family::Goddard(p) => goddard_problem(p),
        }
    }

    pub fn default_structure(&self) -> ControlStructure {
        let modes: &[Mode] = match self {
            Family::Fishing(_) => &[Mode::Upper, Mode::Singular, Mode::Upper],
            Family::Regulator(_) => &[Mode::Lower, Mode::Singular],
            Family::Goddard(_) => &[Mode::Upper, Mode::Singular, Mode::Lower],
        };
        ControlStructure::scalar(modes).expect("non-empty scalar structure")
    }

    /// The regulator's singular arc runs to the final time, so its classical
    /// system only becomes square with the two entry conditions summed.
    pub fn classical_entry(&self) -> EntryConditions {
        match self {
            Family::Regulator(_) => EntryConditions::SquaredSum,
            _ => EntryConditions::Separate,
        }
    }

    pub fn default_grid(&self) -> &'static str {
        match self {
            Family::Fishing(_) => "p1=-10:10:21,t1=0:10:21,t2=0:10:21",
            Family::Regulator(_) => "p1=-10:10:21,p2=-10:10:21,t1=0:5:21",
            Family::Goddard(_) => {
                "p1=-10:10:4,p2=-10:10:4,p3=-10:10:4,t1=0:0.2:5,t2=0:0.2:5,T=0:0.2:5"
            }
        }
    }

    fn published(&self) -> Option<Published> {
        match self {
            Family::Fishing(p) if *p == FishingParams::default() => Some(Published {
                nu_classical: vec![-0.462254744307241, 2.37041478456004, 6.98877992494185],
                nu_extended: vec![-0.462254744307242, 2.37041478456004, 6.98877992494185],
                objective: -106.9059979,
                sv_classical: vec![3.61, 0.43, 5.63e-2],
                kappa_classical: 64.12,
                sv_extended: vec![27.2, 1.71, 3.53e-1],
                kappa_extended: 77.05,
                success_classical: 21.28,
                success_extended: 22.52,
            }),
            Family::Regulator(p) if *p == RegulatorParams::default() => Some(Published {
                nu_classical: vec![0.942173346483640, 1.44191017584598, 1.41376408762863],
                nu_extended: vec![0.942173346476773, 1.44191017581021, 1.41376408762893],
                objective: 0.37699193037,
                sv_classical: vec![24.66, 5.19, 1.96e-8],
                kappa_classical: 1.26e9,
                sv_extended: vec![24.70, 5.97, 1.13],
                kappa_extended: 21.86,
                success_classical: 94.14,
                success_extended: 99.36,
            }),
            Family::Goddard(p) if *p == GoddardParams::default() => Some(Published {
                nu_classical: vec![
                    -50.9280055899288,
                    -1.94115676279896,
                    -0.693270270795148,
                    0.02350968417421373,
                    0.06684546924474312,
                    0.174129456729642,
                ],
                nu_extended: vec![
                    -50.9280055901093,
                    -1.94115676280611,
                    -0.693270270787320,
                    0.02350968417420884,
                    0.06684546924565564,
                    0.174129456733106,
                ],
                objective: -0.634130666,
                sv_classical: vec![6182.0, 9.44, 8.13, 2.46, 0.86, 1.09e-3],
                kappa_classical: 5.67e6,
                sv_extended: vec![6189.0, 12.30, 8.23, 2.49, 0.86, 1.09e-3],
                kappa_extended: 5.67e6,
                success_classical: 0.82,
                success_extended: 0.85,
            }),
            _ => None,
        }
    }
}

/// Reference results for the default parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Published {
    pub nu_classical: Vec<f64>,
    pub nu_extended: Vec<f64>,
    pub objective: f64,
    pub sv_classical: Vec<f64>,
    pub kappa_classical: f64,
    pub sv_extended: Vec<f64>,
    pub kappa_extended: f64,
    /// Grid success rates, in percent.
    pub success_classical: f64,
    pub success_extended: f64,
}

impl Published {
    pub fn nu(&self, formulation: Formulation) -> &[f64] {
        match formulation {
            Formulation::Classical => &self.nu_classical,
            _ => &self.nu_extended,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkCase {
    pub name: String,
    pub family: Family,
    pub problem: ProblemDef,
    pub structure: ControlStructure,
    pub classical_entry: EntryConditions,
    /// Present for the default parameters and structure only.
    pub published: Option<Published>,
    pub grid: String,
}

impl BenchmarkCase {
    pub fn from_family(family: Family, structure: Option<ControlStructure>) -> Result<Self> {
        let problem = family.problem()?;
        let default_structure = family.default_structure();
        let structure = structure.unwrap_or_else(|| default_structure.clone());
        structure.check_against(&problem)?;
        let published = if structure == default_structure {
            family.published()
        } else {
            None
        };
        Ok(BenchmarkCase {
            name: family.name().to_string(),
            classical_entry: family.classical_entry(),
            grid: family.default_grid().to_string(),
            published,
            problem,
            structure,
            family,
        })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Self::from_family(Family::by_name(name)?, None)
    }

    pub fn shooting(&self, formulation: Formulation) -> Result<ShootingProblem> {
        let entry = match formulation {
            Formulation::Classical => self.classical_entry,
            _ => EntryConditions::Separate,
        };
        ShootingProblem::with_entry_conditions(
            self.problem.clone(),
            self.structure.clone(),
            formulation,
            entry,
        )
    }

    pub fn reference(&self, formulation: Formulation) -> Option<&[f64]> {
        self.published.as_ref().map(|p| p.nu(formulation))
    }

    /// Residual tolerance the case can reach in double precision. Goddard's
    /// entry residual amplifies the rounding of the altitude near `r = 1` to
    /// about `3e-10`, so it uses `1e-9`.
    pub fn tolerance(&self) -> f64 {
        match self.family {
            Family::Goddard(_) => 1e-9,
            _ => 1e-12,
        }
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.tolerance(),
            ..Default::default()
        }
    }
}

/// Newton for square classical systems, Gauss-Newton otherwise.
pub fn default_method(formulation: Formulation) -> Method {
    match formulation {
        Formulation::Classical => Method::Newton,
        _ => Method::GaussNewton,
    }
}

pub fn fishing() -> BenchmarkCase {
    BenchmarkCase::from_family(Family::Fishing(FishingParams::default()), None)
        .expect("valid benchmark")
}

pub fn regulator() -> BenchmarkCase {
    BenchmarkCase::from_family(Family::Regulator(RegulatorParams::default()), None)
        .expect("valid benchmark")
}

pub fn goddard() -> BenchmarkCase {
    BenchmarkCase::from_family(Family::Goddard(GoddardParams::default()), None)
        .expect("valid benchmark")
}

pub fn all() -> Vec<BenchmarkCase> {
    vec![fishing(), regulator(), goddard()]
}

/// State `(x, z)`: fish stock and accumulated cost `s (c/x - E) v`. The
/// control is the harvest rate `v = u U_max` in `[0, U_max]`, which keeps the
/// switching function free of the `U_max` factor.
pub fn fishing_problem(p: &FishingParams) -> Result<ProblemDef> {
    let &FishingParams {
        final_time,
        e,
        c,
        r,
        k,
        u_max,
        x0,
        cost_scale: s,
    } = p;
    if !(x0 > 0.0 && k > 0.0 && u_max > 0.0) {
        return Err(ShootError::Config(
            "fishing needs positive x0, k and u_max".into(),
        ));
    }
    let f0 = VectorField::new(move |x, out| {
        out[0] = r * x[0] * (1.0 - x[0] / k);
        out[1] = 0.0;
    })
    .with_jacobian(move |x, j| {
        j.fill(0.0);
        j[0] = r * (1.0 - 2.0 * x[0] / k);
    })
    .with_second_derivative(move |_, v, w, out| {
        out[0] = -2.0 * r / k * v[0] * w[0];
        out[1] = 0.0;
    });
    let f1 = VectorField::new(move |x, out| {
        out[0] = -1.0;
        out[1] = s * (c / x[0] - e);
    })
    .with_jacobian(move |x, j| {
        j.fill(0.0);
        j[2] = -s * c / (x[0] * x[0]);
    })
    .with_second_derivative(move |x, v, w, out| {
        out[0] = 0.0;
        out[1] = 2.0 * s * c / x[0].powi(3) * v[0] * w[0];
    });
    ProblemDef::new(
        "fishing",
        2,
        vec![f0, f1],
        EndpointCost::linear_terminal(vec![0.0, 1.0]),
        EndpointConstraints::pinned(2, vec![(0, x0)], vec![]),
        FinalTime::Fixed(final_time),
    )?
    .with_bounds(vec![ControlBound {
        lower: 0.0,
        upper: u_max,
    }])?
    .with_cost_state(1)
    .map(|prob| {
        prob.with_singular_law(move |x, p, _, _, out| {
            let xs = x[0];
            // The costate of the scaled problem is s times the unscaled one.
            let pt = p[0] / s;
            out[0] = k * r / (2.0 * (c / xs - pt))
                * (c / xs - c / k - pt + 2.0 * pt * xs / k - 2.0 * pt * xs * xs / (k * k));
            Ok(())
        })
    })
}

/// State `(x1, x2, z)` with `z' = (x1^2 + x2^2) / 2`; singular control `u = x1`.
pub fn regulator_problem(p: &RegulatorParams) -> Result<ProblemDef> {
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
    ProblemDef::new(
        "regulator",
        3,
        vec![f0, f1],
        EndpointCost::linear_terminal(vec![0.0, 0.0, 1.0]),
        EndpointConstraints::pinned(3, vec![(0, p.x0[0]), (1, p.x0[1])], vec![]),
        FinalTime::Fixed(p.final_time),
    )?
    .with_bounds(vec![ControlBound {
        lower: p.lower,
        upper: p.upper,
    }])?
    .with_cost_state(2)
    .map(|prob| {
        prob.with_singular_law(|x, _, _, _, out| {
            out[0] = x[0];
            Ok(())
        })
    })
}

/// State `(r, v, m)`; maximizes `m_T` as the minimization of `-m_T`. The
/// singular control comes from the generic resolver.
pub fn goddard_problem(p: &GoddardParams) -> Result<ProblemDef> {
    let &GoddardParams {
        b,
        thrust_max: tm,
        drag_coeff: dc,
        drag_decay: dd,
        x0,
        r_target,
        final_time_guess,
    } = p;
    // D and its derivatives up to second order.
    let drag = move |x: &[f64]| {
        let (r, v) = (x[0], x[1]);
        let ex = (-dd * (r - 1.0)).exp();
        let d = dc * v * v * ex;
        let d_r = -dd * d;
        let d_v = 2.0 * dc * v * ex;
        let d_rr = dd * dd * d;
        let d_rv = -dd * d_v;
        let d_vv = 2.0 * dc * ex;
        (d, d_r, d_v, d_rr, d_rv, d_vv)
    };
    let f0 = VectorField::new(move |x, out| {
        let (d, ..) = drag(x);
        out[0] = x[1];
        out[1] = -1.0 / (x[0] * x[0]) - d / x[2];
        out[2] = 0.0;
    })
    .with_jacobian(move |x, j| {
        let (r, m) = (x[0], x[2]);
        let (d, d_r, d_v, ..) = drag(x);
        j.fill(0.0);
        j[1] = 1.0;
        j[3] = 2.0 / r.powi(3) - d_r / m;
        j[4] = -d_v / m;
        j[5] = d / (m * m);
    })
    .with_second_derivative(move |x, a, c, out| {
        let (r, m) = (x[0], x[2]);
        let (d, d_r, d_v, d_rr, d_rv, d_vv) = drag(x);
        let g_rr = -6.0 / r.powi(4) - d_rr / m;
        let g_rv = -d_rv / m;
        let g_rm = d_r / (m * m);
        let g_vv = -d_vv / m;
        let g_vm = d_v / (m * m);
        let g_mm = -2.0 * d / m.powi(3);
        out[0] = 0.0;
        out[1] = g_rr * a[0] * c[0]
            + g_vv * a[1] * c[1]
            + g_mm * a[2] * c[2]
            + g_rv * (a[0] * c[1] + a[1] * c[0])
            + g_rm * (a[0] * c[2] + a[2] * c[0])
            + g_vm * (a[1] * c[2] + a[2] * c[1]);
        out[2] = 0.0;
    });
    let f1 = VectorField::new(move |x, out| {
        out[0] = 0.0;
        out[1] = tm / x[2];
        out[2] = -b * tm;
    })
    .with_jacobian(move |x, j| {
        j.fill(0.0);
        j[5] = -tm / (x[2] * x[2]);
    })
    .with_second_derivative(move |x, a, c, out| {
        out[0] = 0.0;
        out[1] = 2.0 * tm / x[2].powi(3) * a[2] * c[2];
        out[2] = 0.0;
    });
    ProblemDef::new(
        "goddard",
        3,
        vec![f0, f1],
        EndpointCost::linear_terminal(vec![0.0, 0.0, -1.0]),
        EndpointConstraints::pinned(
            3,
            vec![(0, x0[0]), (1, x0[1]), (2, x0[2])],
            vec![(0, r_target)],
        ),
        FinalTime::Free {
            guess: final_time_guess,
        },
    )?
    .with_bounds(vec![ControlBound {
        lower: 0.0,
        upper: 1.0,
    }])
}
