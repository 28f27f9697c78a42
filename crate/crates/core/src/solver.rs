//! Newton and Gauss-Newton iterations with finite-difference Jacobians.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Dyn, SVD};

use crate::error::{Result, ShootError};

/// Squared condition number of `J` above which the normal equations are
/// treated as rank deficient.
pub const MAX_NORMAL_COND: f64 = 1e14;

/// Reconstruction error `||M - U S V^T||_F / sigma_1` accepted without
/// trying the transposed decomposition.
pub const SVD_RECONSTRUCTION_TOL: f64 = 1e-10;

/// A residual map `R^r -> R^q`.
pub trait ResidualMap {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn residual(&self, nu: &[f64]) -> Result<Vec<f64>>;
}

/// Wraps a closure as a [`ResidualMap`].
pub struct FnResidual<F> {
    input: usize,
    output: usize,
    f: F,
}

impl<F> FnResidual<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    pub fn new(input: usize, output: usize, f: F) -> Self {
        FnResidual { input, output, f }
    }
}

impl<F> ResidualMap for FnResidual<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn input_dim(&self) -> usize {
        self.input
    }
    fn output_dim(&self) -> usize {
        self.output
    }
    fn residual(&self, nu: &[f64]) -> Result<Vec<f64>> {
        (self.f)(nu)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    GaussNewton,
    Newton,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step: `h_j = fd_step * (1 + |nu_j|)`.
    pub fd_step: f64,
    pub max_normal_cond: f64,
    /// Recompute the Jacobian and its SVD at the final iterate.
    pub final_jacobian: bool,
    /// Give up once the residual norm exceeds this value.
    pub divergence_norm: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-12,
            max_iter: 1000,
            fd_step: 1e-7,
            max_normal_cond: MAX_NORMAL_COND,
            final_jacobian: true,
            divergence_norm: None,
        }
    }
}

/// Central-difference Jacobian, one column per unknown.
pub fn fd_jacobian(map: &dyn ResidualMap, nu: &[f64], h_rel: f64) -> Result<DMatrix<f64>> {
    let q = map.output_dim();
    let r = nu.len();
    let mut jac = DMatrix::zeros(q, r);
    let mut probe = nu.to_vec();
    for j in 0..r {
        let h = h_rel * (1.0 + nu[j].abs());
        let wrap = |e| ShootError::Probe {
            coord: j,
            source: Box::new(e),
        };
        probe[j] = nu[j] + h;
        let plus = map.residual(&probe).map_err(wrap)?;
        probe[j] = nu[j] - h;
        let minus = map.residual(&probe).map_err(wrap)?;
        probe[j] = nu[j];
        // The actual spacing after rounding of nu +- h.
        let width = (nu[j] + h) - (nu[j] - h);
        for i in 0..q {
            jac[(i, j)] = (plus[i] - minus[i]) / width;
        }
    }
    Ok(jac)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvdDiagnostics {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// `sigma_1 / sigma_r`; infinite when the smallest is zero.
    pub condition: f64,
    /// `||J - U S V^T||_F / sigma_1`.
    pub reconstruction_error: f64,
}

fn relative_reconstruction_error(m: &DMatrix<f64>, svd: &SVD<f64, Dyn, Dyn>) -> f64 {
    let rebuilt = svd.clone().recompose().expect("U and V were requested");
    let err = (m - rebuilt).norm();
    let s1 = svd.singular_values.max();
    if s1 > 0.0 {
        err / s1
    } else {
        err
    }
}

/// SVD of `m` with its relative reconstruction error. nalgebra's convergence
/// test can stop early on nearly rank-deficient matrices; when that leaves an
/// error above [`SVD_RECONSTRUCTION_TOL`], the decomposition of `m^T` (factors
/// swapped) is tried and the better of the two kept.
pub fn accurate_svd(m: &DMatrix<f64>) -> (SVD<f64, Dyn, Dyn>, f64) {
    let direct = m.clone().svd(true, true);
    let err = relative_reconstruction_error(m, &direct);
    if err <= SVD_RECONSTRUCTION_TOL {
        return (direct, err);
    }
    let t = m.transpose().svd(true, true);
    let swapped = SVD {
        u: t.v_t.map(|v| v.transpose()),
        v_t: t.u.map(|u| u.transpose()),
        singular_values: t.singular_values,
    };
    let err_t = relative_reconstruction_error(m, &swapped);
    if err_t < err {
        (swapped, err_t)
    } else {
        (direct, err)
    }
}

pub fn svd_diagnostics(jac: &DMatrix<f64>) -> SvdDiagnostics {
    let (svd, err) = accurate_svd(jac);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let s1 = sv.first().copied().unwrap_or(0.0);
    let smallest = sv.last().copied().unwrap_or(0.0);
    SvdDiagnostics {
        condition: if smallest > 0.0 {
            s1 / smallest
        } else {
            f64::INFINITY
        },
        reconstruction_error: err,
        singular_values: sv,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    Converged,
    MaxIterations,
    Error(ShootError),
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub method: Method,
    /// `nu_0, nu_1, ...`; the last entry is the final iterate.
    pub iterates: Vec<Vec<f64>>,
    pub residual_norms: Vec<f64>,
    pub step_norms: Vec<f64>,
    pub stop: StopReason,
    /// Residual at the final iterate (empty if it could not be evaluated).
    pub residual: Vec<f64>,
    pub tol: f64,
    pub jacobian: Option<DMatrix<f64>>,
    pub svd: Option<SvdDiagnostics>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    pub fn iterations(&self) -> usize {
        self.step_norms.len()
    }

    pub fn solution(&self) -> &[f64] {
        self.iterates.last().expect("at least the starting point")
    }

    pub fn final_norm(&self) -> f64 {
        self.residual_norms.last().copied().unwrap_or(f64::NAN)
    }

    /// Errors `e_k = ||nu_k - reference||_2`.
    pub fn errors(&self, reference: &[f64]) -> Vec<f64> {
        self.iterates
            .iter()
            .map(|nu| {
                nu.iter()
                    .zip(reference)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Ratios `e_{k+1} / e_k^2` for the steps whose new error is still above
    /// `floor` (steps past that are considered saturated).
    pub fn quadratic_ratios(&self, reference: &[f64], floor: f64) -> Vec<f64> {
        let e = self.errors(reference);
        e.windows(2)
            .take_while(|w| w[1] > floor)
            .map(|w| w[1] / (w[0] * w[0]))
            .collect()
    }

    /// One line per iterate: `k  ||S||  step norm`.
    pub fn text(&self) -> String {
        let mut s = String::new();
        let method = match self.method {
            Method::GaussNewton => "gauss-newton",
            Method::Newton => "newton",
        };
        let _ = writeln!(s, "# method {method}  tol {:e}", self.tol);
        let _ = writeln!(s, "# k residual_norm step_norm");
        for (k, r) in self.residual_norms.iter().enumerate() {
            let step = if k == 0 {
                "-".to_string()
            } else {
                format!("{:.6e}", self.step_norms[k - 1])
            };
            let _ = writeln!(s, "{k} {r:.6e} {step}");
        }
        let verdict = match &self.stop {
            StopReason::Converged => "converged".to_string(),
            StopReason::MaxIterations => "max_iterations".to_string(),
            StopReason::Error(e) => format!("error: {e}"),
        };
        let _ = writeln!(s, "# stop {verdict}");
        let _ = writeln!(s, "# iterations {}", self.iterations());
        let sol: Vec<String> = self.solution().iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "# solution {}", sol.join(" "));
        if let Some(d) = &self.svd {
            let sv: Vec<String> = d
                .singular_values
                .iter()
                .map(|v| format!("{v:.6e}"))
                .collect();
            let _ = writeln!(s, "# singular_values {}", sv.join(" "));
            let _ = writeln!(s, "# condition {:.6e}", d.condition);
        }
        s
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gauss_newton_step(jac: &DMatrix<f64>, r: &[f64], max_normal_cond: f64) -> Result<DVector<f64>> {
    // Least-squares solution of J d = -r through the SVD of J, which solves
    // the normal equations without forming J^T J.
    let (svd, _) = accurate_svd(jac);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 {
        (smax / smin).powi(2)
    } else {
        f64::INFINITY
    };
    if !(cond <= max_normal_cond) {
        return Err(ShootError::JacobianRankDeficient { cond });
    }
    let rhs = -DVector::from_column_slice(r);
    svd.solve(&rhs, 0.0)
        .map_err(|_| ShootError::JacobianRankDeficient { cond })
}

fn newton_step(jac: &DMatrix<f64>, r: &[f64]) -> Result<DVector<f64>> {
    let rhs = -DVector::from_column_slice(r);
    let d = jac
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(ShootError::JacobianSingular)?;
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(ShootError::JacobianSingular)
    }
}

pub fn solve(
    map: &dyn ResidualMap,
    nu0: &[f64],
    method: Method,
    settings: &SolverSettings,
) -> SolveReport {
    let mut report = SolveReport {
        method,
        iterates: vec![nu0.to_vec()],
        residual_norms: Vec::new(),
        step_norms: Vec::new(),
        stop: StopReason::MaxIterations,
        residual: Vec::new(),
        tol: settings.tol,
        jacobian: None,
        svd: None,
    };
    let dims_ok = match method {
        Method::GaussNewton => map.output_dim() >= map.input_dim(),
        Method::Newton => map.output_dim() == map.input_dim(),
    };
    if !dims_ok || nu0.len() != map.input_dim() {
        report.stop = StopReason::Error(ShootError::Config(format!(
            "{method:?} needs matching dimensions: {} residuals, {} unknowns, start of length {}",
            map.output_dim(),
            map.input_dim(),
            nu0.len()
        )));
        return report;
    }
    let mut nu = nu0.to_vec();
    let mut r = match map.residual(&nu) {
        Ok(r) => r,
        Err(e) => {
            report.stop = StopReason::Error(e);
            return report;
        }
    };
    let mut rn = norm(&r);
    report.residual_norms.push(rn);
    let mut k = 0;
    let stop = loop {
        if !rn.is_finite() || settings.divergence_norm.is_some_and(|d| rn > d) {
            break StopReason::Error(ShootError::Diverged { iteration: k });
        }
        if rn <= settings.tol {
            break StopReason::Converged;
        }
        if k == settings.max_iter {
            break StopReason::MaxIterations;
        }
        let step = fd_jacobian(map, &nu, settings.fd_step).and_then(|jac| match method {
            Method::GaussNewton => gauss_newton_step(&jac, &r, settings.max_normal_cond),
            Method::Newton => newton_step(&jac, &r),
        });
        let d = match step {
            Ok(d) => d,
            Err(e) => break StopReason::Error(e),
        };
        for (v, dv) in nu.iter_mut().zip(d.iter()) {
            *v += dv;
        }
        k += 1;
        report.step_norms.push(d.norm());
        report.iterates.push(nu.clone());
        r = match map.residual(&nu) {
            Ok(r) => r,
            Err(e) => {
                r = Vec::new();
                break StopReason::Error(e);
            }
        };
        rn = norm(&r);
        report.residual_norms.push(rn);
    };
    report.stop = stop;
    report.residual = r;
    if settings.final_jacobian && !report.residual.is_empty() && rn.is_finite() {
        if let Ok(jac) = fd_jacobian(map, &nu, settings.fd_step) {
            report.svd = Some(svd_diagnostics(&jac));
            report.jacobian = Some(jac);
        }
    }
    report
}

pub fn gauss_newton(map: &dyn ResidualMap, nu0: &[f64], settings: &SolverSettings) -> SolveReport {
    solve(map, nu0, Method::GaussNewton, settings)
}

pub fn newton(map: &dyn ResidualMap, nu0: &[f64], settings: &SolverSettings) -> SolveReport {
    solve(map, nu0, Method::Newton, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_converges_in_one_step() {
        let map = FnResidual::new(3, 3, |v: &[f64]| Ok(v.to_vec()));
        let rep = gauss_newton(&map, &[1.0, -2.0, 3.5], &SolverSettings::default());
        assert!(rep.converged());
        assert_eq!(rep.iterations(), 1);
        assert!(rep.solution().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn overdetermined_linear() {
        let map = FnResidual::new(2, 3, |v: &[f64]| Ok(vec![v[0], v[1], v[0] + v[1]]));
        let rep = gauss_newton(&map, &[0.7, -0.2], &SolverSettings::default());
        assert!(rep.converged());
        // One exact step up to the finite-difference roundoff, then a cleanup step.
        assert!(rep.iterations() <= 2);
        assert!(rep.residual_norms[1] < 1e-8);
        let sv = &rep.svd.as_ref().unwrap().singular_values;
        // J^T J = [[2,1],[1,2]] has eigenvalues 3 and 1.
        assert_relative_eq!(sv[0], 3f64.sqrt(), epsilon = 1e-9);
        assert_relative_eq!(sv[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn scalar_newton() {
        let map = FnResidual::new(1, 1, |v: &[f64]| Ok(vec![v[0] * v[0] - 4.0]));
        let rep = newton(&map, &[3.0], &SolverSettings::default());
        assert!(rep.converged());
        assert!(rep.iterations() <= 8);
        assert!((rep.solution()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fd_exact_on_linear_and_cubic() {
        let a = [[1.0, 2.0], [-3.0, 0.5], [4.0, -1.0]];
        let map = FnResidual::new(2, 3, move |v: &[f64]| {
            Ok(a.iter().map(|row| row[0] * v[0] + row[1] * v[1]).collect())
        });
        let jac = fd_jacobian(&map, &[0.3, -1.7], 1e-7).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!((jac[(i, j)] - a[i][j]).abs() < 1e-9);
            }
        }
        let cube = FnResidual::new(1, 1, |v: &[f64]| Ok(vec![v[0].powi(3)]));
        let jac = fd_jacobian(&cube, &[1.0], 1e-7).unwrap();
        assert!((jac[(0, 0)] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn svd_of_identity() {
        let d = svd_diagnostics(&DMatrix::identity(3, 3));
        assert_eq!(d.singular_values, vec![1.0, 1.0, 1.0]);
        assert_eq!(d.condition, 1.0);
        assert!(d.reconstruction_error <= 1e-10);
    }

    #[test]
    fn nearly_singular_jacobian_reconstructs() {
        // Central-difference Jacobian of a squared-entry system near its root;
        // nalgebra's direct decomposition misses it by about 1e-6 sigma_1.
        let jac = DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0,
                0.0,
                24.133651255465047,
                -4.999999999492752,
                1.0,
                5.072370788469131,
                -5.912424766461363e-11,
                5.212467084477116e-11,
                -2.063718393584368e-11,
            ],
        );
        let d = svd_diagnostics(&jac);
        assert!(d.reconstruction_error <= SVD_RECONSTRUCTION_TOL, "{d:?}");
        assert!((d.condition / 6.13e11 - 1.0).abs() < 1e-2, "{d:?}");
    }

    #[test]
    fn rank_deficient_reported() {
        let map = FnResidual::new(2, 3, |v: &[f64]| {
            Ok(vec![v[0] + v[1], 2.0 * (v[0] + v[1]), 1.0])
        });
        let rep = gauss_newton(&map, &[1.0, 1.0], &SolverSettings::default());
        assert!(matches!(
            rep.stop,
            StopReason::Error(ShootError::JacobianRankDeficient { .. })
        ));
    }

    #[test]
    fn singular_newton_reported() {
        let map = FnResidual::new(2, 2, |v: &[f64]| Ok(vec![v[0] + v[1], v[0] + v[1] - 1.0]));
        let rep = newton(&map, &[0.0, 0.0], &SolverSettings::default());
        assert!(matches!(
            rep.stop,
            StopReason::Error(ShootError::JacobianSingular)
        ));
    }

    #[test]
    fn non_finite_residual_is_divergence() {
        let map = FnResidual::new(1, 1, |v: &[f64]| {
            Ok(vec![if v[0] > 0.5 { f64::NAN } else { v[0] - 1.0 }])
        });
        let rep = newton(&map, &[0.0], &SolverSettings::default());
        assert!(matches!(
            rep.stop,
            StopReason::Error(ShootError::Diverged { iteration: 1 })
        ));
        assert!(!rep.converged());
    }

    #[test]
    fn probe_failure_carries_coordinate() {
        let map = FnResidual::new(2, 2, |v: &[f64]| {
            if v[1] > 1.0 {
                Err(ShootError::IntegrationDiverged { t: 0.0 })
            } else {
                Ok(v.to_vec())
            }
        });
        let err = fd_jacobian(&map, &[0.0, 1.0], 1e-7).unwrap_err();
        assert!(matches!(err, ShootError::Probe { coord: 1, .. }));
    }

    #[test]
    fn max_iterations_is_not_convergence() {
        let map = FnResidual::new(1, 1, |v: &[f64]| Ok(vec![v[0] * v[0] + 1.0]));
        let settings = SolverSettings {
            max_iter: 5,
            ..Default::default()
        };
        let rep = newton(&map, &[0.3], &settings);
        assert_eq!(rep.stop, StopReason::MaxIterations);
        assert_eq!(rep.iterations(), 5);
        assert!(rep.text().lines().filter(|l| !l.starts_with('#')).count() == 6);
    }
}
