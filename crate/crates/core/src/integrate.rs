//! Fixed-step RK4 integration of the coupled state-costate system across the
//! arcs of a control structure.
//!
//! The costate is carried forward together with the state. On fixed arcs the
//! control comes from the structure table; on singular arcs it is re-resolved
//! at every RK4 stage. Arcs of negative length (switching times out of order)
//! are integrated backwards with a negative step.

use std::io::{Read, Write};

use crate::error::{Result, ShootError};
use crate::problem::{ProblemDef, Workspace};
use crate::structure::ControlStructure;

pub const DEFAULT_TOTAL_STEPS: usize = 500;
pub const MIN_STEPS_PER_ARC: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrationSettings {
    /// Step budget shared by all arcs in proportion to their lengths.
    pub total_steps: usize,
    pub min_steps_per_arc: usize,
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        IntegrationSettings {
            total_steps: DEFAULT_TOTAL_STEPS,
            min_steps_per_arc: MIN_STEPS_PER_ARC,
        }
    }
}

impl IntegrationSettings {
    pub fn with_total_steps(total_steps: usize) -> Self {
        IntegrationSettings {
            total_steps,
            ..Default::default()
        }
    }
}

/// Splits the step budget over the arcs delimited by `boundaries`.
pub fn allocate_steps(boundaries: &[f64], settings: &IntegrationSettings) -> Vec<usize> {
    let lengths: Vec<f64> = boundaries.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let total: f64 = lengths.iter().sum();
    lengths
        .iter()
        .map(|&l| {
            let share = if total > 0.0 && total.is_finite() {
                (settings.total_steps as f64 * l / total).round() as usize
            } else {
                0
            };
            share.max(settings.min_steps_per_arc)
        })
        .collect()
}

/// Samples of one arc, on its uniform grid (endpoints included).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArcSamples {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub phi_dot: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

impl ArcSamples {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// State and costate at an arc boundary, with the pre-Hamiltonian on either side.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryValue {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub h_minus: Option<f64>,
    pub h_plus: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub n: usize,
    pub m: usize,
    pub arcs: Vec<ArcSamples>,
    pub boundaries: Vec<BoundaryValue>,
}

/// Per-arc RK4 machinery with preallocated buffers.
pub(crate) struct Stepper<'a> {
    prob: &'a ProblemDef,
    ws: Workspace,
    singular_set: Vec<usize>,
    fixed: Vec<f64>,
    sing_u: Vec<f64>,
    u: Vec<f64>,
    kx: [Vec<f64>; 4],
    kp: [Vec<f64>; 4],
    xs: Vec<f64>,
    ps: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(prob: &'a ProblemDef) -> Self {
        let (n, m) = (prob.n(), prob.m());
        let zn = || vec![0.0; n];
        Stepper {
            prob,
            ws: prob.workspace(),
            singular_set: Vec::with_capacity(m),
            fixed: vec![0.0; m],
            sing_u: vec![0.0; m],
            u: vec![0.0; m],
            kx: [zn(), zn(), zn(), zn()],
            kp: [zn(), zn(), zn(), zn()],
            xs: zn(),
            ps: zn(),
        }
    }

    pub(crate) fn set_arc(&mut self, structure: &ControlStructure, k: usize) {
        self.singular_set = structure.singular_set(k);
        structure.fixed_controls(self.prob, k, &mut self.fixed);
    }

    /// Loads fields at `x` and resolves the control into `self.u`.
    fn resolve(&mut self, x: &[f64], p: &[f64]) -> Result<()> {
        self.prob.load_fields(x, &mut self.ws, true)?;
        self.u.copy_from_slice(&self.fixed);
        if !self.singular_set.is_empty() {
            let k = self.singular_set.len();
            self.prob.singular_control_ws(
                &mut self.ws,
                x,
                p,
                &self.singular_set,
                &self.fixed,
                &mut self.sing_u[..k],
            )?;
            for (j, &s) in self.singular_set.iter().enumerate() {
                self.u[s] = self.sing_u[j];
            }
        }
        Ok(())
    }

    fn rates(&mut self, x: &[f64], p: &[f64], stage: usize) -> Result<()> {
        self.resolve(x, p)?;
        self.prob.state_rate(&self.ws, &self.u, &mut self.kx[stage]);
        self.prob
            .costate_rate(&self.ws, p, &self.u, &mut self.kp[stage]);
        Ok(())
    }

    fn step(&mut self, x: &mut [f64], p: &mut [f64], h: f64) -> Result<()> {
        let n = x.len();
        self.rates(x, p, 0)?;
        for (stage, frac) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
            for i in 0..n {
                self.xs[i] = x[i] + frac * h * self.kx[stage - 1][i];
                self.ps[i] = p[i] + frac * h * self.kp[stage - 1][i];
            }
            let (xs, ps) = (std::mem::take(&mut self.xs), std::mem::take(&mut self.ps));
            let r = self.rates(&xs, &ps, stage);
            self.xs = xs;
            self.ps = ps;
            r?;
        }
        for i in 0..n {
            x[i] += h / 6.0
                * (self.kx[0][i] + 2.0 * self.kx[1][i] + 2.0 * self.kx[2][i] + self.kx[3][i]);
            p[i] += h / 6.0
                * (self.kp[0][i] + 2.0 * self.kp[1][i] + 2.0 * self.kp[2][i] + self.kp[3][i]);
        }
        Ok(())
    }

    /// Control, `Phi`, `Phi_dot` and `H` at `(x, p)` for the current arc.
    pub(crate) fn point(
        &mut self,
        x: &[f64],
        p: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
        self.resolve(x, p)?;
        let m = self.prob.m();
        let mut phi = vec![0.0; m];
        let mut phi_dot = vec![0.0; m];
        self.prob.switching_ws(&self.ws, p, &mut phi);
        let u = self.u.clone();
        self.prob
            .switching_rate_ws(&mut self.ws, p, &u, &mut phi_dot);
        let h = self.prob.hamiltonian_ws(&self.ws, p, &u);
        Ok((u, phi, phi_dot, h))
    }

    /// Pre-Hamiltonian at `(x, p)` for the current arc.
    pub(crate) fn hamiltonian(&mut self, x: &[f64], p: &[f64]) -> Result<f64> {
        self.resolve(x, p)?;
        Ok(self.prob.hamiltonian_ws(&self.ws, p, &self.u))
    }

    /// Integrates one arc in place. `sample` receives every grid point.
    fn arc(
        &mut self,
        x: &mut [f64],
        p: &mut [f64],
        t0: f64,
        t1: f64,
        steps: usize,
        mut sample: Option<&mut ArcSamples>,
    ) -> Result<()> {
        let h = (t1 - t0) / steps as f64;
        if let Some(s) = sample.as_deref_mut() {
            self.record(s, t0, x, p)?;
        }
        for i in 0..steps {
            let t = t0 + i as f64 * h;
            self.step(x, p, h).map_err(|e| with_time(e, t))?;
            let t_next = if i + 1 == steps {
                t1
            } else {
                t0 + (i + 1) as f64 * h
            };
            if x.iter().chain(p.iter()).any(|v| !v.is_finite()) {
                return Err(ShootError::IntegrationDiverged { t: t_next });
            }
            if let Some(s) = sample.as_deref_mut() {
                self.record(s, t_next, x, p)?;
            }
        }
        Ok(())
    }

    fn record(&mut self, s: &mut ArcSamples, t: f64, x: &[f64], p: &[f64]) -> Result<()> {
        let (u, phi, phi_dot, h) = self.point(x, p).map_err(|e| with_time(e, t))?;
        s.t.push(t);
        s.x.push(x.to_vec());
        s.p.push(p.to_vec());
        s.u.push(u);
        s.phi.push(phi);
        s.phi_dot.push(phi_dot);
        s.h.push(h);
        Ok(())
    }
}

fn with_time(e: ShootError, t: f64) -> ShootError {
    match e {
        ShootError::LegendreClebsch { t: None, cond } => {
            ShootError::LegendreClebsch { t: Some(t), cond }
        }
        other => other,
    }
}

/// `[0, T_1, ..., T_{N-1}, T]` from the switching times and final time.
pub fn arc_boundaries(switch_times: &[f64], final_time: f64) -> Vec<f64> {
    let mut b = Vec::with_capacity(switch_times.len() + 2);
    b.push(0.0);
    b.extend_from_slice(switch_times);
    b.push(final_time);
    b
}

fn check_inputs(
    prob: &ProblemDef,
    structure: &ControlStructure,
    boundaries: &[f64],
    x0: &[f64],
    p0: &[f64],
) -> Result<()> {
    structure.check_against(prob)?;
    if boundaries.len() != structure.arcs() + 1 {
        return Err(ShootError::Config(format!(
            "{} arcs need {} boundary times, got {}",
            structure.arcs(),
            structure.arcs() + 1,
            boundaries.len()
        )));
    }
    if let Some(t) = boundaries.iter().find(|t| !t.is_finite()) {
        return Err(ShootError::Config(format!("non-finite time {t}")));
    }
    if x0.len() != prob.n() || p0.len() != prob.n() {
        return Err(ShootError::Config(
            "initial state/costate dimension mismatch".into(),
        ));
    }
    Ok(())
}

/// State and costate at each arc boundary, without per-step sampling.
pub(crate) fn propagate(
    prob: &ProblemDef,
    structure: &ControlStructure,
    boundaries: &[f64],
    x0: &[f64],
    p0: &[f64],
    settings: &IntegrationSettings,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_inputs(prob, structure, boundaries, x0, p0)?;
    let steps = allocate_steps(boundaries, settings);
    let mut stepper = Stepper::new(prob);
    let (mut x, mut p) = (x0.to_vec(), p0.to_vec());
    let mut xs = vec![x.clone()];
    let mut ps = vec![p.clone()];
    for k in 0..structure.arcs() {
        stepper.set_arc(structure, k);
        stepper.arc(
            &mut x,
            &mut p,
            boundaries[k],
            boundaries[k + 1],
            steps[k],
            None,
        )?;
        xs.push(x.clone());
        ps.push(p.clone());
    }
    Ok((xs, ps))
}

/// Integrates all arcs from `(x0, p0)`, sampling every grid point.
///
/// `boundaries` is `[0, T_1, ..., T_{N-1}, T]` (see [`arc_boundaries`]).
pub fn integrate_arcs(
    prob: &ProblemDef,
    structure: &ControlStructure,
    boundaries: &[f64],
    x0: &[f64],
    p0: &[f64],
    settings: &IntegrationSettings,
) -> Result<TrajectoryRecord> {
    check_inputs(prob, structure, boundaries, x0, p0)?;
    let steps = allocate_steps(boundaries, settings);
    let mut stepper = Stepper::new(prob);
    let (mut x, mut p) = (x0.to_vec(), p0.to_vec());
    let n_arcs = structure.arcs();
    let mut arcs = Vec::with_capacity(n_arcs);
    let mut bounds = Vec::with_capacity(n_arcs + 1);
    for k in 0..n_arcs {
        stepper.set_arc(structure, k);
        let mut samples = ArcSamples::default();
        stepper.arc(
            &mut x,
            &mut p,
            boundaries[k],
            boundaries[k + 1],
            steps[k],
            Some(&mut samples),
        )?;
        bounds.push(BoundaryValue {
            t: boundaries[k],
            x: samples.x[0].clone(),
            p: samples.p[0].clone(),
            h_minus: None,
            h_plus: Some(samples.h[0]),
        });
        arcs.push(samples);
    }
    bounds.push(BoundaryValue {
        t: boundaries[n_arcs],
        x: x.clone(),
        p: p.clone(),
        h_minus: None,
        h_plus: None,
    });
    for k in 1..=n_arcs {
        bounds[k].h_minus = arcs[k - 1].h.last().copied();
    }
    Ok(TrajectoryRecord {
        n: prob.n(),
        m: prob.m(),
        arcs,
        boundaries: bounds,
    })
}

fn fmt_num(v: f64) -> String {
    // Shortest representation that round-trips exactly.
    format!("{v:?}")
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> &[f64] {
        &self.boundaries.last().expect("at least one boundary").x
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.boundaries[0].x
    }

    /// Column names of the CSV export.
    pub fn csv_header(n: usize, m: usize) -> Vec<String> {
        let mut h = vec!["arc".to_string(), "side".to_string(), "t".to_string()];
        h.extend((1..=n).map(|i| format!("x{i}")));
        h.extend((1..=n).map(|i| format!("p{i}")));
        h.extend((1..=m).map(|i| format!("u{i}")));
        h.extend((1..=m).map(|i| format!("phi{i}")));
        h.extend((1..=m).map(|i| format!("phidot{i}")));
        h.push("H".to_string());
        h
    }

    /// One row per grid point. Interior arc boundaries appear twice: as the
    /// last row of the left arc (side `-`) and the first row of the right arc
    /// (side `+`).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| ShootError::Io(e.to_string());
        wr.write_record(Self::csv_header(self.n, self.m))
            .map_err(io)?;
        let last_arc = self.arcs.len().saturating_sub(1);
        for (k, arc) in self.arcs.iter().enumerate() {
            for j in 0..arc.len() {
                let side = if j == 0 && k > 0 {
                    "+"
                } else if j + 1 == arc.len() && k < last_arc {
                    "-"
                } else {
                    ""
                };
                let mut row = vec![k.to_string(), side.to_string(), fmt_num(arc.t[j])];
                row.extend(arc.x[j].iter().map(|v| fmt_num(*v)));
                row.extend(arc.p[j].iter().map(|v| fmt_num(*v)));
                row.extend(arc.u[j].iter().map(|v| fmt_num(*v)));
                row.extend(arc.phi[j].iter().map(|v| fmt_num(*v)));
                row.extend(arc.phi_dot[j].iter().map(|v| fmt_num(*v)));
                row.push(fmt_num(arc.h[j]));
                wr.write_record(&row).map_err(io)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let bad = |msg: String| ShootError::Io(format!("malformed trajectory file: {msg}"));
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd
            .headers()
            .map_err(|e| bad(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| {
                    h.strip_prefix(prefix).is_some_and(|rest| {
                        !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit())
                    })
                })
                .count()
        };
        let (n, m) = (count("x"), count("u"));
        if n == 0 || m == 0 || header != Self::csv_header(n, m) {
            return Err(bad("unexpected header".into()));
        }
        let mut arcs: Vec<ArcSamples> = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != header.len() {
                return Err(bad("row length mismatch".into()));
            }
            let k: usize = rec[0]
                .parse()
                .map_err(|_| bad(format!("bad arc index '{}'", &rec[0])))?;
            let vals: Vec<f64> = rec
                .iter()
                .skip(2)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(e.to_string()))?;
            if k == arcs.len() {
                arcs.push(ArcSamples::default());
            } else if k + 1 != arcs.len() {
                return Err(bad(format!("arc index {k} out of sequence")));
            }
            let a = arcs.last_mut().expect("pushed above");
            let mut it = vals.into_iter();
            a.t.push(it.next().expect("length checked"));
            a.x.push(it.by_ref().take(n).collect());
            a.p.push(it.by_ref().take(n).collect());
            a.u.push(it.by_ref().take(m).collect());
            a.phi.push(it.by_ref().take(m).collect());
            a.phi_dot.push(it.by_ref().take(m).collect());
            a.h.push(it.next().expect("length checked"));
        }
        if arcs.is_empty() {
            return Err(bad("no samples".into()));
        }
        let mut boundaries: Vec<BoundaryValue> = arcs
            .iter()
            .enumerate()
            .map(|(k, a)| BoundaryValue {
                t: a.t[0],
                x: a.x[0].clone(),
                p: a.p[0].clone(),
                h_minus: if k > 0 {
                    arcs[k - 1].h.last().copied()
                } else {
                    None
                },
                h_plus: Some(a.h[0]),
            })
            .collect();
        let last = arcs.last().expect("non-empty");
        boundaries.push(BoundaryValue {
            t: *last.t.last().expect("non-empty"),
            x: last.x.last().expect("non-empty").clone(),
            p: last.p.last().expect("non-empty").clone(),
            h_minus: last.h.last().copied(),
            h_plus: None,
        });
        Ok(TrajectoryRecord {
            n,
            m,
            arcs,
            boundaries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{EndpointConstraints, EndpointCost, FinalTime, VectorField};
    use crate::structure::Mode;

    fn zero_problem() -> ProblemDef {
        ProblemDef::new(
            "zero",
            2,
            vec![VectorField::zero(), VectorField::zero()],
            EndpointCost::zero(),
            EndpointConstraints::none(),
            FinalTime::Fixed(3.0),
        )
        .unwrap()
        .with_bounds(vec![crate::problem::ControlBound {
            lower: 0.0,
            upper: 1.0,
        }])
        .unwrap()
    }

    #[test]
    fn zero_dynamics_keep_initial_values() {
        let prob = zero_problem();
        let s = ControlStructure::scalar(&[Mode::Lower, Mode::Singular, Mode::Upper]).unwrap();
        // zero fields make the generic resolver fail on the singular arc, so
        // check the fixed arcs only
        let s_fixed = ControlStructure::scalar(&[Mode::Lower, Mode::Upper]).unwrap();
        let rec = integrate_arcs(
            &prob,
            &s_fixed,
            &[0.0, 1.2, 3.0],
            &[0.5, -1.0],
            &[2.0, 3.0],
            &Default::default(),
        )
        .unwrap();
        for arc in &rec.arcs {
            for (x, p) in arc.x.iter().zip(&arc.p) {
                assert_eq!(x, &vec![0.5, -1.0]);
                assert_eq!(p, &vec![2.0, 3.0]);
            }
        }
        assert!(integrate_arcs(
            &prob,
            &s,
            &[0.0, 1.0, 2.0, 3.0],
            &[0.5, -1.0],
            &[2.0, 3.0],
            &Default::default()
        )
        .is_err());
    }

    #[test]
    fn step_allocation_is_proportional_with_floor() {
        let steps = allocate_steps(&[0.0, 1.0, 9.99, 10.0], &IntegrationSettings::default());
        assert_eq!(steps, vec![50, 450, 10]);
        let steps = allocate_steps(&[0.0, 0.0, 0.0], &IntegrationSettings::default());
        assert_eq!(steps, vec![10, 10]);
    }

    #[test]
    fn grids_are_contiguous_and_uniform() {
        let prob = zero_problem();
        let s = ControlStructure::scalar(&[Mode::Lower, Mode::Upper, Mode::Lower]).unwrap();
        let rec = integrate_arcs(
            &prob,
            &s,
            &[0.0, 0.7, 2.2, 3.0],
            &[1.0, 1.0],
            &[1.0, 1.0],
            &Default::default(),
        )
        .unwrap();
        for k in 0..rec.arcs.len() {
            let t = &rec.arcs[k].t;
            assert_eq!(t[0], [0.0, 0.7, 2.2][k]);
            assert_eq!(*t.last().unwrap(), [0.7, 2.2, 3.0][k]);
            let h = t[1] - t[0];
            for w in t.windows(2) {
                assert!(((w[1] - w[0]) - h).abs() < 1e-12);
            }
            if k + 1 < rec.arcs.len() {
                assert_eq!(rec.arcs[k].x.last().unwrap(), &rec.arcs[k + 1].x[0]);
            }
        }
    }
}
