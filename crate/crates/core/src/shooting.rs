//! Shooting unknowns and residual assembly.
//!
//! Three formulations share one evaluation pass:
//!
//! * **extended**: endpoint conditions, entry conditions `Phi = Phi_dot = 0`
//!   for every singular arc, `H_T = 0` for a free horizon and the
//!   pre-Hamiltonian jumps `[H] = H(t+) - H(t-)` at every switching time;
//! * **classical**: the same rows with the jumps at pure bang/singular
//!   junctions dropped, which is square for interior singular arcs;
//! * **full unconstrained**: one singular arc over `[0, T]` with
//!   `Phi(T) = 0` and `Phi_dot(0) = 0` as the switching conditions.
//!
//! States and costates are continued across arcs in a single pass; there
//! are no per-arc duplicated unknowns.

use std::fmt;

use crate::error::{Result, ShootError};
use crate::integrate::{
    arc_boundaries, integrate_arcs, propagate, IntegrationSettings, Stepper, TrajectoryRecord,
};
use crate::problem::{FinalTime, ProblemDef};
use crate::structure::{ControlStructure, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Formulation {
    Classical,
    Extended,
    FullUnconstrained,
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Formulation::Classical => "classical",
            Formulation::Extended => "extended",
            Formulation::FullUnconstrained => "full",
        })
    }
}

impl std::str::FromStr for Formulation {
    type Err = ShootError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classical" => Ok(Formulation::Classical),
            "extended" => Ok(Formulation::Extended),
            "full" | "full-unconstrained" => Ok(Formulation::FullUnconstrained),
            other => Err(ShootError::Config(format!("unknown formulation '{other}'"))),
        }
    }
}

/// How the classical formulation imposes the two entry conditions of a
/// singular arc.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EntryConditions {
    /// `Phi = 0` and `Phi_dot = 0` as two rows.
    #[default]
    Separate,
    /// One row `Phi^2 + Phi_dot^2`, for structures with a single free
    /// junction per singular arc (classical mode only).
    SquaredSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    EndpointConstraints,
    InitialTransversality,
    FinalTransversality,
    SingularEntryPhi,
    SingularEntryPhiDot,
    SingularEntryCombined,
    FreeTimeHamiltonian,
    HamiltonianJumps,
    TerminalSwitching,
    InitialSwitchingRate,
}

impl BlockKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::EndpointConstraints => "endpoint_constraints",
            BlockKind::InitialTransversality => "initial_transversality",
            BlockKind::FinalTransversality => "final_transversality",
            BlockKind::SingularEntryPhi => "singular_entry_phi",
            BlockKind::SingularEntryPhiDot => "singular_entry_phidot",
            BlockKind::SingularEntryCombined => "singular_entry_combined",
            BlockKind::FreeTimeHamiltonian => "free_time_h_t",
            BlockKind::HamiltonianJumps => "hamiltonian_jumps",
            BlockKind::TerminalSwitching => "terminal_switching",
            BlockKind::InitialSwitchingRate => "initial_switching_rate",
        }
    }

    /// The condition each row of the block expresses.
    pub fn condition(&self) -> &'static str {
        match self {
            BlockKind::EndpointConstraints => "eta(x0, xT) = 0",
            BlockKind::InitialTransversality => "p0 + D_x0 l = 0",
            BlockKind::FinalTransversality => "pT - D_xT l = 0",
            BlockKind::SingularEntryPhi => "Phi(t_entry+) = 0",
            BlockKind::SingularEntryPhiDot => "Phi_dot(t_entry+) = 0",
            BlockKind::SingularEntryCombined => "Phi(t_entry+)^2 + Phi_dot(t_entry+)^2 = 0",
            BlockKind::FreeTimeHamiltonian => "H(T) = 0",
            BlockKind::HamiltonianJumps => "H(T_k+) - H(T_k-) = 0",
            BlockKind::TerminalSwitching => "pT B(xT) = 0",
            BlockKind::InitialSwitchingRate => "p0 B1(x0, u0) = 0",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub kind: BlockKind,
    /// One label per row.
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualVector {
    pub blocks: Vec<ResidualBlock>,
}

impl ResidualVector {
    fn push(&mut self, kind: BlockKind, labels: Vec<String>, values: Vec<f64>) {
        debug_assert_eq!(labels.len(), values.len());
        if !values.is_empty() {
            self.blocks.push(ResidualBlock {
                kind,
                labels,
                values,
            });
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.values.iter().copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn block(&self, kind: BlockKind) -> Option<&ResidualBlock> {
        self.blocks.iter().find(|b| b.kind == kind)
    }

    /// Diagnostic text report: block name, condition, then one line per row.
    pub fn report(&self) -> String {
        let mut s = String::new();
        for b in &self.blocks {
            s.push_str(&format!("[{}]  {}\n", b.kind.name(), b.kind.condition()));
            for (l, v) in b.labels.iter().zip(&b.values) {
                s.push_str(&format!("  {l:<24} {v:+.16e}\n"));
            }
        }
        s.push_str(&format!("norm = {:.6e}\n", self.norm()));
        s
    }
}

/// A decoded shooting unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct ShootingPoint {
    pub x0_free: Vec<f64>,
    pub p0: Vec<f64>,
    pub beta: Vec<f64>,
    pub switch_times: Vec<f64>,
    pub final_time: Option<f64>,
}

impl ShootingPoint {
    /// `0 < T_1 < ... < T_{N-1} < T`.
    pub fn times_ordered(&self, horizon: f64) -> bool {
        let t_end = self.final_time.unwrap_or(horizon);
        let mut prev = 0.0;
        for &t in self.switch_times.iter().chain(std::iter::once(&t_end)) {
            if !(t > prev) {
                return false;
            }
            prev = t;
        }
        true
    }
}

/// Maps between [`ShootingPoint`] and the flat unknown vector, ordered as
/// free initial states, initial costates, multipliers, switching times and
/// final time.
#[derive(Clone, Debug, PartialEq)]
pub struct ShootingLayout {
    n: usize,
    free_x0: Vec<usize>,
    costates: Vec<usize>,
    beta_dim: usize,
    switch_count: usize,
    free_final_time: bool,
    cost_state: Option<usize>,
    /// Initial-state values for coordinates that are not unknowns.
    base_x0: Vec<f64>,
    eliminated: bool,
}

impl ShootingLayout {
    /// Eliminates the endpoint multipliers when the initial state is fully
    /// pinned; otherwise keeps initial state and multipliers as unknowns.
    pub fn auto(prob: &ProblemDef, structure: &ControlStructure) -> Self {
        Self::build(prob, structure, Self::can_eliminate(prob))
    }

    /// Keeps the initial state and the multipliers as unknowns.
    pub fn with_multipliers(prob: &ProblemDef, structure: &ControlStructure) -> Self {
        Self::build(prob, structure, false)
    }

    fn can_eliminate(prob: &ProblemDef) -> bool {
        match prob.constraints().pins() {
            Some(pins) => prob
                .costate_indices()
                .iter()
                .all(|i| pins.initial.iter().any(|(j, _)| j == i)),
            None => false,
        }
    }

    fn build(prob: &ProblemDef, structure: &ControlStructure, eliminated: bool) -> Self {
        let n = prob.n();
        let costates = prob.costate_indices();
        let mut base_x0 = vec![0.0; n];
        let free_x0 = if eliminated {
            let pins = prob.constraints().pins().expect("checked by can_eliminate");
            for &(i, a) in &pins.initial {
                base_x0[i] = a;
            }
            Vec::new()
        } else {
            costates.clone()
        };
        ShootingLayout {
            n,
            free_x0,
            beta_dim: if eliminated {
                0
            } else {
                prob.constraints().dim()
            },
            costates,
            switch_count: structure.switch_count(),
            free_final_time: prob.final_time().is_free(),
            cost_state: prob.cost_state(),
            base_x0,
            eliminated,
        }
    }

    pub fn dim(&self) -> usize {
        self.free_x0.len()
            + self.costates.len()
            + self.beta_dim
            + self.switch_count
            + usize::from(self.free_final_time)
    }

    pub fn multipliers_eliminated(&self) -> bool {
        self.eliminated
    }

    pub fn costates(&self) -> &[usize] {
        &self.costates
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .free_x0
            .iter()
            .map(|i| format!("x0_{}", i + 1))
            .collect();
        v.extend(self.costates.iter().map(|i| format!("p{}", i + 1)));
        v.extend((1..=self.beta_dim).map(|j| format!("beta{j}")));
        v.extend((1..=self.switch_count).map(|k| format!("t{k}")));
        if self.free_final_time {
            v.push("T".into());
        }
        v
    }

    pub fn encode(&self, pt: &ShootingPoint) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&pt.x0_free);
        v.extend_from_slice(&pt.p0);
        v.extend_from_slice(&pt.beta);
        v.extend_from_slice(&pt.switch_times);
        v.extend(pt.final_time);
        v
    }

    pub fn decode(&self, nu: &[f64]) -> Result<ShootingPoint> {
        if nu.len() != self.dim() {
            return Err(ShootError::Config(format!(
                "shooting vector has length {}, expected {}",
                nu.len(),
                self.dim()
            )));
        }
        let mut it = nu.iter().copied();
        let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<f64>>();
        let x0_free = take(self.free_x0.len());
        let p0 = take(self.costates.len());
        let beta = take(self.beta_dim);
        let switch_times = take(self.switch_count);
        let final_time = if self.free_final_time {
            take(1).pop()
        } else {
            None
        };
        Ok(ShootingPoint {
            x0_free,
            p0,
            beta,
            switch_times,
            final_time,
        })
    }

    /// Full initial state and costate (cost-state costate pinned to 1).
    pub fn initial_values(&self, pt: &ShootingPoint) -> (Vec<f64>, Vec<f64>) {
        let mut x0 = self.base_x0.clone();
        for (&i, &v) in self.free_x0.iter().zip(&pt.x0_free) {
            x0[i] = v;
        }
        let mut p0 = vec![0.0; self.n];
        for (&i, &v) in self.costates.iter().zip(&pt.p0) {
            p0[i] = v;
        }
        if let Some(c) = self.cost_state {
            x0[c] = 0.0;
            p0[c] = 1.0;
        }
        (x0, p0)
    }
}

/// Which jumps the classical reduction keeps, after checking squareness.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalPlan {
    /// Indexed by interior boundary `k = 1..N-1` (entry 0 unused).
    pub keep_jump: Vec<bool>,
    pub rows: usize,
}

/// Whether the structure admits a square classical system: every singular
/// arc is interior and exactly one control switches at each switching time.
pub fn square_criterion(structure: &ControlStructure) -> bool {
    let n = structure.arcs();
    let m = structure.controls();
    for i in 0..m {
        if structure.arc(0)[i].is_singular() || structure.arc(n - 1)[i].is_singular() {
            return false;
        }
    }
    (1..n).all(|k| structure.switching_components(k).len() == 1)
}

fn is_bang_singular_switch(before: Mode, after: Mode) -> bool {
    before.is_singular() != after.is_singular()
}

fn terminal_pinned(prob: &ProblemDef) -> Vec<(usize, f64)> {
    prob.constraints()
        .pins()
        .map(|p| p.terminal.clone())
        .unwrap_or_default()
}

/// Shared evaluation of the state at arc boundaries.
struct Evaluation {
    x: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    boundaries: Vec<f64>,
    point: ShootingPoint,
}

fn horizon(prob: &ProblemDef, pt: &ShootingPoint) -> f64 {
    match prob.final_time() {
        FinalTime::Fixed(t) => t,
        FinalTime::Free { .. } => pt.final_time.expect("layout has a final-time slot"),
    }
}

fn evaluate(
    prob: &ProblemDef,
    structure: &ControlStructure,
    layout: &ShootingLayout,
    nu: &[f64],
    settings: &IntegrationSettings,
) -> Result<Evaluation> {
    let point = layout.decode(nu)?;
    if let Some(v) = nu.iter().find(|v| !v.is_finite()) {
        return Err(ShootError::Config(format!(
            "non-finite shooting unknown {v}"
        )));
    }
    let (x0, p0) = layout.initial_values(&point);
    let boundaries = arc_boundaries(&point.switch_times, horizon(prob, &point));
    let (x, p) = propagate(prob, structure, &boundaries, &x0, &p0, settings)?;
    Ok(Evaluation {
        x,
        p,
        boundaries,
        point,
    })
}

/// Rows shared by the classical and extended formulations, in order:
/// endpoint constraints, transversality, entry conditions, `H_T`, jumps.
fn assemble_common(
    prob: &ProblemDef,
    structure: &ControlStructure,
    layout: &ShootingLayout,
    ev: &Evaluation,
    entry: EntryConditions,
    keep_jump: &dyn Fn(usize) -> bool,
) -> Result<ResidualVector> {
    let n = prob.n();
    let n_arcs = structure.arcs();
    let (x0, p0) = (&ev.x[0], &ev.p[0]);
    let (xt, pt) = (&ev.x[n_arcs], &ev.p[n_arcs]);
    let mut out = ResidualVector::default();
    let mut g0 = vec![0.0; n];
    let mut gt = vec![0.0; n];
    prob.cost().gradient(x0, xt, &mut g0, &mut gt);

    if layout.eliminated {
        let tp = terminal_pinned(prob);
        out.push(
            BlockKind::EndpointConstraints,
            tp.iter()
                .map(|(j, _)| format!("x{}(T) - target", j + 1))
                .collect(),
            tp.iter().map(|&(j, b)| xt[j] - b).collect(),
        );
        let rows: Vec<usize> = layout
            .costates
            .iter()
            .copied()
            .filter(|i| !tp.iter().any(|(j, _)| j == i))
            .collect();
        out.push(
            BlockKind::FinalTransversality,
            rows.iter().map(|i| format!("p{}(T)", i + 1)).collect(),
            rows.iter().map(|&i| pt[i] - gt[i]).collect(),
        );
    } else {
        let (l0, lt) = lagrangian_gradients(prob, x0, xt, &ev.point.beta, &g0, &gt);
        let d = prob.constraints().dim();
        let mut eta = vec![0.0; d];
        prob.constraints().value(x0, xt, &mut eta);
        out.push(
            BlockKind::EndpointConstraints,
            (1..=d).map(|j| format!("eta{j}")).collect(),
            eta,
        );
        out.push(
            BlockKind::InitialTransversality,
            layout
                .costates
                .iter()
                .map(|i| format!("p{}(0)", i + 1))
                .collect(),
            layout.costates.iter().map(|&i| p0[i] + l0[i]).collect(),
        );
        out.push(
            BlockKind::FinalTransversality,
            layout
                .costates
                .iter()
                .map(|i| format!("p{}(T)", i + 1))
                .collect(),
            layout.costates.iter().map(|&i| pt[i] - lt[i]).collect(),
        );
    }

    let mut stepper = Stepper::new(prob);
    let mut phi_rows = (Vec::new(), Vec::new());
    let mut phid_rows = (Vec::new(), Vec::new());
    let mut comb_rows = (Vec::new(), Vec::new());
    for (k, i) in structure.singular_entries() {
        stepper.set_arc(structure, k);
        let (_, phi, phi_dot, _) = stepper.point(&ev.x[k], &ev.p[k])?;
        let when = if k == 0 {
            "0".to_string()
        } else {
            format!("t{k}")
        };
        match entry {
            EntryConditions::Separate => {
                phi_rows.0.push(format!("Phi{}({when})", i + 1));
                phi_rows.1.push(phi[i]);
                phid_rows.0.push(format!("Phidot{}({when})", i + 1));
                phid_rows.1.push(phi_dot[i]);
            }
            EntryConditions::SquaredSum => {
                comb_rows
                    .0
                    .push(format!("Phi{0}^2+Phidot{0}^2({when})", i + 1));
                comb_rows.1.push(phi[i] * phi[i] + phi_dot[i] * phi_dot[i]);
            }
        }
    }
    out.push(BlockKind::SingularEntryPhi, phi_rows.0, phi_rows.1);
    out.push(BlockKind::SingularEntryPhiDot, phid_rows.0, phid_rows.1);
    out.push(BlockKind::SingularEntryCombined, comb_rows.0, comb_rows.1);

    if prob.final_time().is_free() {
        stepper.set_arc(structure, n_arcs - 1);
        let h = stepper.hamiltonian(xt, pt)?;
        out.push(BlockKind::FreeTimeHamiltonian, vec!["H(T)".into()], vec![h]);
    }

    let mut jumps = (Vec::new(), Vec::new());
    for k in 1..n_arcs {
        if !keep_jump(k) {
            continue;
        }
        stepper.set_arc(structure, k - 1);
        let h_minus = stepper.hamiltonian(&ev.x[k], &ev.p[k])?;
        stepper.set_arc(structure, k);
        let h_plus = stepper.hamiltonian(&ev.x[k], &ev.p[k])?;
        jumps.0.push(format!("[H](t{k})"));
        jumps.1.push(h_plus - h_minus);
    }
    out.push(BlockKind::HamiltonianJumps, jumps.0, jumps.1);
    Ok(out)
}

/// Gradients of `l = phi_0 + beta . eta` with respect to both endpoints.
fn lagrangian_gradients(
    prob: &ProblemDef,
    x0: &[f64],
    xt: &[f64],
    beta: &[f64],
    g0: &[f64],
    gt: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = prob.n();
    let d = prob.constraints().dim();
    let mut j0 = vec![0.0; d * n];
    let mut jt = vec![0.0; d * n];
    prob.constraints().jacobian(x0, xt, &mut j0, &mut jt);
    let mut l0 = g0.to_vec();
    let mut lt = gt.to_vec();
    for (r, &b) in beta.iter().enumerate() {
        for c in 0..n {
            l0[c] += b * j0[r * n + c];
            lt[c] += b * jt[r * n + c];
        }
    }
    (l0, lt)
}

/// Extended formulation: all rows including the pre-Hamiltonian jumps.
pub fn assemble_extended(
    prob: &ProblemDef,
    structure: &ControlStructure,
    layout: &ShootingLayout,
    nu: &[f64],
    settings: &IntegrationSettings,
) -> Result<ResidualVector> {
    structure.check_against(prob)?;
    let ev = evaluate(prob, structure, layout, nu, settings)?;
    assemble_common(
        prob,
        structure,
        layout,
        &ev,
        EntryConditions::Separate,
        &|_| true,
    )
}

/// Row plan of the classical reduction; fails with `NotSquare` when the
/// reduced system has more or fewer rows than unknowns.
pub fn classical_plan(
    prob: &ProblemDef,
    structure: &ControlStructure,
    layout: &ShootingLayout,
    entry: EntryConditions,
) -> Result<ClassicalPlan> {
    structure.check_against(prob)?;
    let n_arcs = structure.arcs();
    let mut keep_jump = vec![false; n_arcs];
    let mut simultaneous = Vec::new();
    for k in 1..n_arcs {
        let comps = structure.switching_components(k);
        if comps.len() > 1 {
            simultaneous.push(k);
        }
        let all_bang_singular = !comps.is_empty()
            && comps
                .iter()
                .all(|&i| is_bang_singular_switch(structure.arc(k - 1)[i], structure.arc(k)[i]));
        keep_jump[k] = !all_bang_singular;
    }
    let endpoint_rows = if layout.eliminated {
        let tp = terminal_pinned(prob);
        tp.len()
            + layout
                .costates
                .iter()
                .filter(|i| !tp.iter().any(|(j, _)| j == *i))
                .count()
    } else {
        prob.constraints().dim() + 2 * layout.costates.len()
    };
    let entries = structure.singular_entries().len();
    let entry_rows = match entry {
        EntryConditions::Separate => 2 * entries,
        EntryConditions::SquaredSum => entries,
    };
    let rows = endpoint_rows
        + entry_rows
        + usize::from(prob.final_time().is_free())
        + keep_jump.iter().filter(|&&k| k).count();
    let unknowns = layout.dim();
    if rows != unknowns || !simultaneous.is_empty() {
        let mut detail = Vec::new();
        if rows > unknowns {
            detail.push(format!("surplus of {} row(s)", rows - unknowns));
        } else if rows < unknowns {
            detail.push(format!("deficit of {} row(s)", unknowns - rows));
        }
        for (k, i) in structure.singular_entries() {
            if k == 0
                || structure.arc(n_arcs - 1)[i].is_singular()
                    && is_last_singular_run(structure, k, i)
            {
                detail.push(format!(
                    "singular arc of control {} touches the horizon end (entry block over-determines)",
                    i + 1
                ));
            }
        }
        for k in simultaneous {
            detail.push(format!("several controls switch at t{k}"));
        }
        return Err(ShootError::NotSquare {
            rows,
            unknowns,
            detail: detail.join("; "),
        });
    }
    Ok(ClassicalPlan { keep_jump, rows })
}

fn is_last_singular_run(structure: &ControlStructure, k: usize, i: usize) -> bool {
    (k..structure.arcs()).all(|j| structure.arc(j)[i].is_singular())
}

/// Classical formulation: square system with implied jumps dropped.
pub fn assemble_classical(
    prob: &ProblemDef,
    structure: &ControlStructure,
    layout: &ShootingLayout,
    nu: &[f64],
    entry: EntryConditions,
    settings: &IntegrationSettings,
) -> Result<ResidualVector> {
    let plan = classical_plan(prob, structure, layout, entry)?;
    let ev = evaluate(prob, structure, layout, nu, settings)?;
    assemble_common(prob, structure, layout, &ev, entry, &|k| plan.keep_jump[k])
}

/// Single fully singular arc on `[0, T]` for a problem without control
/// bounds; rows: `eta`, both transversality blocks, `pT B(xT)` and
/// `p0 B1(x0, u0)`.
pub fn assemble_full_unconstrained(
    prob: &ProblemDef,
    layout: &ShootingLayout,
    nu: &[f64],
    settings: &IntegrationSettings,
) -> Result<ResidualVector> {
    let structure = full_singular_structure(prob)?;
    if layout.eliminated {
        return Err(ShootError::Config(
            "full formulation keeps the multipliers as unknowns".into(),
        ));
    }
    let ev = evaluate(prob, &structure, layout, nu, settings)?;
    let mut out = assemble_common(
        prob,
        &structure,
        layout,
        &ev,
        EntryConditions::Separate,
        &|_| false,
    )?;
    // Replace the entry conditions by the terminal/initial switching rows.
    out.blocks.retain(|b| {
        !matches!(
            b.kind,
            BlockKind::SingularEntryPhi
                | BlockKind::SingularEntryPhiDot
                | BlockKind::FreeTimeHamiltonian
        )
    });
    let mut stepper = Stepper::new(prob);
    stepper.set_arc(&structure, 0);
    let (_, phi_t, _, _) = stepper.point(&ev.x[1], &ev.p[1])?;
    let (_, _, phi_dot0, _) = stepper.point(&ev.x[0], &ev.p[0])?;
    let m = prob.m();
    out.push(
        BlockKind::TerminalSwitching,
        (1..=m).map(|i| format!("Phi{i}(T)")).collect(),
        phi_t,
    );
    // p0 B1 = -Phi_dot(0)
    out.push(
        BlockKind::InitialSwitchingRate,
        (1..=m).map(|i| format!("p0 B1_{i}")).collect(),
        phi_dot0.iter().map(|v| -v).collect(),
    );
    Ok(out)
}

fn full_singular_structure(prob: &ProblemDef) -> Result<ControlStructure> {
    if prob.bounds().is_some() {
        return Err(ShootError::Config(
            "the fully singular formulation needs a problem without control bounds".into(),
        ));
    }
    if prob.final_time().is_free() {
        return Err(ShootError::Config(
            "the fully singular formulation needs a fixed horizon".into(),
        ));
    }
    ControlStructure::new(vec![vec![Mode::Singular; prob.m()]])
}

/// A residual map bundling problem, structure, layout and formulation.
#[derive(Clone, Debug)]
pub struct ShootingProblem {
    pub problem: ProblemDef,
    pub structure: ControlStructure,
    pub layout: ShootingLayout,
    pub formulation: Formulation,
    pub entry: EntryConditions,
    pub integration: IntegrationSettings,
    rows: usize,
}

impl ShootingProblem {
    pub fn new(
        problem: ProblemDef,
        structure: ControlStructure,
        formulation: Formulation,
    ) -> Result<Self> {
        Self::with_entry_conditions(problem, structure, formulation, EntryConditions::Separate)
    }

    pub fn with_entry_conditions(
        problem: ProblemDef,
        structure: ControlStructure,
        formulation: Formulation,
        entry: EntryConditions,
    ) -> Result<Self> {
        let (structure, layout) = match formulation {
            Formulation::FullUnconstrained => {
                let s = full_singular_structure(&problem)?;
                let l = ShootingLayout::with_multipliers(&problem, &s);
                (s, l)
            }
            _ => {
                structure.check_against(&problem)?;
                let l = ShootingLayout::auto(&problem, &structure);
                (structure, l)
            }
        };
        if formulation != Formulation::Classical && entry != EntryConditions::Separate {
            return Err(ShootError::Config(
                "squared entry conditions are a classical-only device".into(),
            ));
        }
        let mut sp = ShootingProblem {
            problem,
            structure,
            layout,
            formulation,
            entry,
            integration: IntegrationSettings::default(),
            rows: 0,
        };
        sp.rows = sp.count_rows()?;
        Ok(sp)
    }

    pub fn with_integration(mut self, settings: IntegrationSettings) -> Self {
        self.integration = settings;
        self
    }

    fn count_rows(&self) -> Result<usize> {
        let prob = &self.problem;
        let l = &self.layout;
        let entries = self.structure.singular_entries().len();
        let endpoint = if l.eliminated {
            let tp = terminal_pinned(prob);
            tp.len()
                + l.costates
                    .iter()
                    .filter(|i| !tp.iter().any(|(j, _)| j == *i))
                    .count()
        } else {
            prob.constraints().dim() + 2 * l.costates.len()
        };
        Ok(match self.formulation {
            Formulation::Extended => {
                endpoint
                    + 2 * entries
                    + usize::from(prob.final_time().is_free())
                    + self.structure.switch_count()
            }
            Formulation::Classical => classical_plan(prob, &self.structure, l, self.entry)?.rows,
            Formulation::FullUnconstrained => endpoint + 2 * prob.m(),
        })
    }

    pub fn unknowns(&self) -> usize {
        self.layout.dim()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn assemble(&self, nu: &[f64]) -> Result<ResidualVector> {
        match self.formulation {
            Formulation::Extended => assemble_extended(
                &self.problem,
                &self.structure,
                &self.layout,
                nu,
                &self.integration,
            ),
            Formulation::Classical => assemble_classical(
                &self.problem,
                &self.structure,
                &self.layout,
                nu,
                self.entry,
                &self.integration,
            ),
            Formulation::FullUnconstrained => {
                assemble_full_unconstrained(&self.problem, &self.layout, nu, &self.integration)
            }
        }
    }

    pub fn boundaries(&self, nu: &[f64]) -> Result<Vec<f64>> {
        let pt = self.layout.decode(nu)?;
        Ok(arc_boundaries(
            &pt.switch_times,
            horizon(&self.problem, &pt),
        ))
    }

    /// Sampled trajectory for the unknown `nu`.
    pub fn trajectory(&self, nu: &[f64]) -> Result<TrajectoryRecord> {
        let pt = self.layout.decode(nu)?;
        let (x0, p0) = self.layout.initial_values(&pt);
        let b = arc_boundaries(&pt.switch_times, horizon(&self.problem, &pt));
        integrate_arcs(
            &self.problem,
            &self.structure,
            &b,
            &x0,
            &p0,
            &self.integration,
        )
    }

    /// Empirical RK4 orders `log2(e_N / e_2N)` along `nu` for
    /// `N = base, 2 base, ...`, where `e_N` is the max-norm error of `x(T)`
    /// against a `reference_steps` run.
    pub fn observed_orders(
        &self,
        nu: &[f64],
        base: usize,
        refinements: usize,
        reference_steps: usize,
    ) -> Result<Vec<f64>> {
        let pt = self.layout.decode(nu)?;
        let (x0, p0) = self.layout.initial_values(&pt);
        let b = arc_boundaries(&pt.switch_times, horizon(&self.problem, &pt));
        let final_state = |steps: usize| -> Result<Vec<f64>> {
            let settings = IntegrationSettings::with_total_steps(steps);
            Ok(
                integrate_arcs(&self.problem, &self.structure, &b, &x0, &p0, &settings)?
                    .final_state()
                    .to_vec(),
            )
        };
        let reference = final_state(reference_steps)?;
        let errors = (0..=refinements)
            .map(|k| {
                let x = final_state(base << k)?;
                Ok(x.iter()
                    .zip(&reference)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect())
    }

    /// Endpoint cost at the trajectory generated by `nu`.
    pub fn objective(&self, nu: &[f64]) -> Result<f64> {
        let ev = evaluate(
            &self.problem,
            &self.structure,
            &self.layout,
            nu,
            &self.integration,
        )?;
        let last = ev.x.len() - 1;
        Ok(self.problem.cost().value(&ev.x[0], &ev.x[last]))
    }

    /// Whether the switching times decoded from `nu` are ordered in `(0, T)`.
    pub fn times_ordered(&self, nu: &[f64]) -> bool {
        match self.layout.decode(nu) {
            Ok(pt) => pt.times_ordered(horizon(&self.problem, &pt)),
            Err(_) => false,
        }
    }

    #[doc(hidden)]
    pub fn boundary_states(&self, nu: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let ev = evaluate(
            &self.problem,
            &self.structure,
            &self.layout,
            nu,
            &self.integration,
        )?;
        Ok((ev.boundaries, ev.x, ev.p))
    }
}

impl crate::solver::ResidualMap for ShootingProblem {
    fn input_dim(&self) -> usize {
        self.unknowns()
    }

    fn output_dim(&self) -> usize {
        self.rows
    }

    fn residual(&self, nu: &[f64]) -> Result<Vec<f64>> {
        Ok(self.assemble(nu)?.flat())
    }
}
