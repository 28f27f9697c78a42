//! Post-solution checks of the optimality conditions that can be verified
//! numerically along a computed trajectory.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::benchmarks::{default_method, BenchmarkCase, Family, FishingParams};
use crate::error::{Result, ShootError};
use crate::integrate::TrajectoryRecord;
use crate::problem::{goh_matrix, legendre_clebsch_matrix, ProblemDef};
use crate::shooting::{
    classical_plan, BlockKind, EntryConditions, Formulation, ShootingLayout, ShootingProblem,
};
use crate::solver::{solve, SolverSettings};
use crate::structure::{ControlStructure, Mode};

#[derive(Clone, Debug, PartialEq)]
pub struct Tolerances {
    pub goh_symmetry: f64,
    /// Relative to `1 + |H(0)|`.
    pub hamiltonian: f64,
    /// Relative to `max |Phi_i|` over the horizon.
    pub singular_phi: f64,
    pub singular_phi_dot: f64,
    /// Relative to `max |Phi_dot_i|` over the horizon.
    pub bang_bang_phi_dot: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            goh_symmetry: 1e-8,
            hamiltonian: 1e-5,
            singular_phi: 1e-7,
            singular_phi_dot: 1e-6,
            bang_bang_phi_dot: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Worst value found; `None` when the check has nothing to inspect.
    pub value: Option<f64>,
    pub threshold: f64,
    /// `true` for checks of the form `value <= threshold`, `false` for
    /// `value > threshold`.
    pub upper_bound: bool,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(
        name: &'static str,
        value: Option<f64>,
        threshold: f64,
        upper_bound: bool,
        detail: String,
    ) -> Self {
        let passed = match value {
            None => true,
            Some(v) if upper_bound => v <= threshold,
            Some(v) => v > threshold,
        };
        Check {
            name,
            value,
            threshold,
            upper_bound,
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsReport {
    pub checks: Vec<Check>,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<22} {:>6} {:>14} {:>14}  detail",
            "check", "status", "value", "threshold"
        );
        for c in &self.checks {
            let value = c.value.map_or("n/a".to_string(), |v| format!("{v:.4e}"));
            let cmp = if c.upper_bound { "<=" } else { ">" };
            let _ = writeln!(
                s,
                "{:<22} {:>6} {:>14} {:>2}{:>12.4e}  {}",
                c.name,
                if c.passed { "pass" } else { "FAIL" },
                value,
                cmp,
                c.threshold,
                c.detail
            );
        }
        s
    }

    /// `name.field = value` lines.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{}.passed = {}", c.name, c.passed);
            let _ = writeln!(
                s,
                "{}.value = {}",
                c.name,
                c.value.map_or("n/a".to_string(), |v| format!("{v:?}"))
            );
            let _ = writeln!(s, "{}.threshold = {:?}", c.name, c.threshold);
        }
        let _ = writeln!(s, "all.passed = {}", self.passed());
        s
    }

    fn push(&mut self, c: Check) {
        self.checks.push(c);
    }
}

/// Indices of the samples strictly inside an arc.
fn interior(len: usize) -> std::ops::Range<usize> {
    if len > 2 {
        1..len - 1
    } else {
        0..0
    }
}

fn symmetric_min_eigenvalue(r: &DMatrix<f64>) -> f64 {
    let sym = (r + r.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Runs all checks on a trajectory produced for `structure`.
pub fn check_solution(
    prob: &ProblemDef,
    structure: &ControlStructure,
    traj: &TrajectoryRecord,
    tol: &Tolerances,
) -> DiagnosticsReport {
    let mut report = DiagnosticsReport { checks: Vec::new() };
    let m = prob.m();
    if traj.arcs.len() != structure.arcs() || traj.n != prob.n() || traj.m != m {
        report.push(Check::new(
            "trajectory_shape",
            Some(1.0),
            0.0,
            true,
            "trajectory does not match the problem and structure".into(),
        ));
        return report;
    }

    // Per-component scales over the whole horizon.
    let mut phi_scale = vec![0.0_f64; m];
    let mut phid_scale = vec![0.0_f64; m];
    for arc in &traj.arcs {
        for j in 0..arc.len() {
            for i in 0..m {
                phi_scale[i] = phi_scale[i].max(arc.phi[j][i].abs());
                phid_scale[i] = phid_scale[i].max(arc.phi_dot[j][i].abs());
            }
        }
    }

    // (a) Goh symmetry and (b) Legendre-Clebsch along singular arcs.
    let mut goh: Option<f64> = None;
    let mut lc: Option<f64> = None;
    let mut lc_detail = String::new();
    let mut fixed = vec![0.0; m];
    for (k, arc) in traj.arcs.iter().enumerate() {
        let sset = structure.singular_set(k);
        if sset.is_empty() {
            continue;
        }
        structure.fixed_controls(prob, k, &mut fixed);
        for j in 0..arc.len() {
            let (x, p) = (&arc.x[j], &arc.p[j]);
            match goh_matrix(prob, x, p) {
                Ok(cb) => {
                    let d = (&cb - cb.transpose()).amax();
                    goh = Some(goh.map_or(d, |g| g.max(d)));
                }
                Err(e) => {
                    goh = Some(f64::INFINITY);
                    lc_detail = e.to_string();
                }
            }
            let eig = match legendre_clebsch_matrix(prob, x, p, &sset, &fixed) {
                Ok(r) => symmetric_min_eigenvalue(&r),
                Err(e) => {
                    if lc_detail.is_empty() {
                        lc_detail = format!("{e} at t = {}", arc.t[j]);
                    }
                    f64::NEG_INFINITY
                }
            };
            lc = Some(lc.map_or(eig, |v| v.min(eig)));
        }
    }
    report.push(Check::new(
        "goh_symmetry",
        goh,
        tol.goh_symmetry,
        true,
        "max |CB - (CB)^T| on singular arcs".into(),
    ));
    let lc_detail = if lc_detail.is_empty() {
        "min eigenvalue of R = -dPhi_ddot/du on singular arcs".to_string()
    } else {
        lc_detail
    };
    report.push(Check::new("legendre_clebsch", lc, 0.0, false, lc_detail));

    // (c) Constancy of the pre-Hamiltonian.
    let h0 = traj.arcs[0].h[0];
    let dev = traj
        .arcs
        .iter()
        .flat_map(|a| a.h.iter())
        .map(|h| (h - h0).abs())
        .fold(0.0_f64, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) });
    report.push(Check::new(
        "hamiltonian_constancy",
        Some(dev),
        tol.hamiltonian * (1.0 + h0.abs()),
        true,
        format!("max |H(t) - H(0)|, H(0) = {h0:.6e}"),
    ));

    // (d) Strict sign of Phi on bang arcs.
    let mut margin: Option<f64> = None;
    let mut where_worst = String::new();
    if prob.bounds().is_some() {
        for (k, arc) in traj.arcs.iter().enumerate() {
            for (i, mode) in structure.arc(k).iter().enumerate() {
                let sign = match mode {
                    Mode::Lower => 1.0,
                    Mode::Upper => -1.0,
                    _ => continue,
                };
                for j in interior(arc.len()) {
                    let v = sign * arc.phi[j][i];
                    if margin.is_none_or(|mm| v < mm) {
                        margin = Some(v);
                        where_worst = format!("arc {k}, control {}, t = {:.6}", i + 1, arc.t[j]);
                    }
                }
            }
        }
    }
    report.push(Check::new(
        "bang_sign",
        margin,
        0.0,
        false,
        if where_worst.is_empty() {
            "no bang arcs".into()
        } else {
            format!("min signed Phi margin ({where_worst})")
        },
    ));

    // (e) Phi_dot away from zero at bang-bang switches.
    let mut bb: Option<f64> = None;
    let mut bb_threshold = 0.0_f64;
    for k in 1..structure.arcs() {
        for i in structure.switching_components(k) {
            let (a, b) = (structure.arc(k - 1)[i], structure.arc(k)[i]);
            let bang_bang = matches!(
                (a, b),
                (Mode::Lower, Mode::Upper) | (Mode::Upper, Mode::Lower)
            );
            if !bang_bang {
                continue;
            }
            let v = traj.arcs[k].phi_dot[0][i].abs();
            bb = Some(bb.map_or(v, |w| w.min(v)));
            bb_threshold = bb_threshold.max(tol.bang_bang_phi_dot * phid_scale[i]);
        }
    }
    report.push(Check::new(
        "bang_bang_phi_dot",
        bb,
        bb_threshold,
        false,
        if bb.is_some() {
            "min |Phi_dot| at bang-bang switching times".into()
        } else {
            "no bang-bang switches".into()
        },
    ));

    // Switching function and its derivative vanish on singular arcs.
    let mut rel_phi: Option<f64> = None;
    let mut rel_phid: Option<f64> = None;
    for (k, arc) in traj.arcs.iter().enumerate() {
        for i in structure.singular_set(k) {
            let s = if phi_scale[i] > 0.0 {
                phi_scale[i]
            } else {
                1.0
            };
            for j in 0..arc.len() {
                let a = arc.phi[j][i].abs() / s;
                let b = arc.phi_dot[j][i].abs() / s;
                rel_phi = Some(rel_phi.map_or(a, |v| v.max(a)));
                rel_phid = Some(rel_phid.map_or(b, |v| v.max(b)));
            }
        }
    }
    report.push(Check::new(
        "singular_phi",
        rel_phi,
        tol.singular_phi,
        true,
        "max |Phi| / max_t |Phi| on singular arcs".into(),
    ));
    report.push(Check::new(
        "singular_phi_dot",
        rel_phid,
        tol.singular_phi_dot,
        true,
        "max |Phi_dot| / max_t |Phi| on singular arcs".into(),
    ));
    report
}

/// Values of the jump rows that the classical reduction drops, evaluated at
/// `nu` (an unknown of the extended formulation).
pub fn implied_jumps(
    prob: &ProblemDef,
    structure: &ControlStructure,
    nu: &[f64],
) -> Result<Vec<f64>> {
    let ext = ShootingProblem::new(prob.clone(), structure.clone(), Formulation::Extended)?;
    let layout = ShootingLayout::auto(prob, structure);
    // Entry rows never change the kept-jump pattern; squared sums only
    // change the row count.
    let plan = classical_plan(prob, structure, &layout, EntryConditions::Separate)
        .or_else(|_| classical_plan(prob, structure, &layout, EntryConditions::SquaredSum))?;
    let res = ext.assemble(nu)?;
    let jumps = res
        .block(BlockKind::HamiltonianJumps)
        .map(|b| b.values.clone())
        .unwrap_or_default();
    Ok((1..structure.arcs())
        .filter(|&k| !plan.keep_jump[k])
        .map(|k| jumps[k - 1])
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationResult {
    pub mu: f64,
    pub calibration_mu: f64,
    /// `|nu(mu) - nu(0)|_inf`.
    pub drift: f64,
    pub calibration_drift: f64,
    /// `safety * calibration_drift / calibration_mu`.
    pub k: f64,
    pub converged: bool,
    pub passed: bool,
}

impl PerturbationResult {
    pub fn line(&self) -> String {
        format!(
            "perturbation mu = {:e}: converged = {}, drift = {:.4e}, bound K*mu = {:.4e} (K = {:.4e} from mu = {:e}) -> {}",
            self.mu,
            self.converged,
            self.drift,
            self.k * self.mu,
            self.k,
            self.calibration_mu,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

/// Safety factor applied to the drift constant measured at the calibration
/// perturbation.
pub const PERTURBATION_SAFETY: f64 = 2.0;
/// Upper limit on the calibrated drift constant.
pub const PERTURBATION_MAX_K: f64 = 1e3;

/// Scales the fishing running cost by `1 + mu`, re-solves from the unperturbed
/// solution and compares the drift with `K mu`, `K` calibrated at
/// `calibration_mu`.
pub fn fishing_perturbation(
    base: &FishingParams,
    formulation: Formulation,
    mu: f64,
    calibration_mu: f64,
) -> Result<PerturbationResult> {
    let settings = SolverSettings {
        final_jacobian: false,
        ..Default::default()
    };
    let solve_at = |scale: f64, start: &[f64]| -> Result<(bool, Vec<f64>)> {
        let fam = Family::Fishing(FishingParams {
            cost_scale: base.cost_scale * scale,
            ..base.clone()
        });
        let case = BenchmarkCase::from_family(fam, None)?;
        let sp = case.shooting(formulation)?;
        let rep = solve(&sp, start, default_method(formulation), &settings);
        Ok((rep.converged(), rep.solution().to_vec()))
    };
    let start = BenchmarkCase::from_family(Family::Fishing(base.clone()), None)?
        .reference(formulation)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![-0.46, 2.37, 6.99]);
    let (ok0, nu0) = solve_at(1.0, &start)?;
    if !ok0 {
        return Err(ShootError::Config(
            "unperturbed fishing solve did not converge".into(),
        ));
    }
    let dist = |a: &[f64]| {
        a.iter()
            .zip(&nu0)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let (ok_c, nu_c) = solve_at(1.0 + calibration_mu, &nu0)?;
    let (ok, nu) = solve_at(1.0 + mu, &nu0)?;
    let calibration_drift = dist(&nu_c);
    let drift = dist(&nu);
    let k = PERTURBATION_SAFETY * calibration_drift / calibration_mu;
    let converged = ok && ok_c;
    Ok(PerturbationResult {
        mu,
        calibration_mu,
        drift,
        calibration_drift,
        k,
        converged,
        passed: converged && drift <= k * mu && k <= PERTURBATION_MAX_K,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{ArcSamples, BoundaryValue};

    fn record(arcs: Vec<ArcSamples>) -> TrajectoryRecord {
        let n = arcs[0].x[0].len();
        let m = arcs[0].u[0].len();
        let boundaries = (0..=arcs.len())
            .map(|k| BoundaryValue {
                t: k as f64,
                x: vec![0.0; n],
                p: vec![0.0; n],
                h_minus: None,
                h_plus: None,
            })
            .collect();
        TrajectoryRecord {
            n,
            m,
            arcs,
            boundaries,
        }
    }

    fn samples(ts: &[f64], x: Vec<f64>, p: Vec<f64>, phi: &[f64], h: f64) -> ArcSamples {
        ArcSamples {
            t: ts.to_vec(),
            x: vec![x; ts.len()],
            p: vec![p; ts.len()],
            u: vec![vec![0.0]; ts.len()],
            phi: phi.iter().map(|v| vec![*v]).collect(),
            phi_dot: vec![vec![0.0]; ts.len()],
            h: vec![h; ts.len()],
        }
    }

    #[test]
    fn zero_costate_flags_legendre_clebsch() {
        let case = crate::benchmarks::regulator();
        let structure = ControlStructure::scalar(&[Mode::Singular]).unwrap();
        let traj = record(vec![samples(
            &[0.0, 0.5, 1.0],
            vec![0.1, 0.2, 0.0],
            vec![0.0; 3],
            &[0.0; 3],
            0.0,
        )]);
        let rep = check_solution(&case.problem, &structure, &traj, &Tolerances::default());
        // The regulator's Phi_ddot coefficient does not depend on p, so use the
        // fishing problem for the degenerate-costate case.
        assert!(rep.check("goh_symmetry").unwrap().passed);
        assert!(rep.check("hamiltonian_constancy").unwrap().passed);

        let fish = crate::benchmarks::fishing();
        let traj = record(vec![samples(
            &[0.0, 0.5, 1.0],
            vec![50.0, 0.0],
            vec![0.0, 0.0],
            &[0.0; 3],
            0.0,
        )]);
        let rep = check_solution(&fish.problem, &structure, &traj, &Tolerances::default());
        assert!(rep.check("goh_symmetry").unwrap().passed);
        assert!(rep.check("hamiltonian_constancy").unwrap().passed);
        assert!(!rep.check("legendre_clebsch").unwrap().passed);
        assert!(!rep.passed());
    }

    #[test]
    fn regulator_r_is_one() {
        let case = crate::benchmarks::regulator();
        let structure = ControlStructure::scalar(&[Mode::Singular]).unwrap();
        let traj = record(vec![samples(
            &[0.0, 0.5, 1.0],
            vec![0.3, -0.2, 0.0],
            vec![0.4, 0.0, 1.0],
            &[0.0; 3],
            0.0,
        )]);
        let rep = check_solution(&case.problem, &structure, &traj, &Tolerances::default());
        let lc = rep.check("legendre_clebsch").unwrap();
        assert!((lc.value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_sign_on_bang_arc_fails() {
        let case = crate::benchmarks::regulator();
        let structure = ControlStructure::scalar(&[Mode::Lower]).unwrap();
        // Lower bound needs Phi > 0; one interior sample is negative.
        let traj = record(vec![samples(
            &[0.0, 0.25, 0.5, 0.75, 1.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            &[0.0, 1.0, -0.5, 2.0, 0.0],
            0.5,
        )]);
        let rep = check_solution(&case.problem, &structure, &traj, &Tolerances::default());
        let c = rep.check("bang_sign").unwrap();
        assert_eq!(c.value, Some(-0.5));
        assert!(!c.passed);
        assert!(rep.table().contains("FAIL"));
        assert!(rep.key_values().contains("all.passed = false"));
    }
}
