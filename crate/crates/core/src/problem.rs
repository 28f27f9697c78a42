//! Control-affine problem data and the pointwise Pontryagin quantities.
//!
//! The dynamics are `x' = f_0(x) + sum_i u_i f_i(x)`. Every quantity in this
//! module is evaluated with the convention `u_0 = 1`, so the drift `f_0` is
//! handled exactly like the controlled fields. Jacobians are stored row-major
//! (`jac[r * n + c] = d f_r / d x_c`).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ShootError};

/// Condition number of the singular-control coefficient matrix above which
/// the strengthened Legendre-Clebsch condition is reported as violated.
pub const LEGENDRE_CLEBSCH_MAX_COND: f64 = 1e12;

type PointMap = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type BilinearMap = dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;
type EndpointScalar = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type EndpointVector = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type EndpointPair = dyn Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync;

/// Closed-form singular control: `(x, p, singular_set, bang_values, out)`.
/// `bang_values` has length `m`; entries of the singular set are ignored.
pub type SingularLaw =
    dyn Fn(&[f64], &[f64], &[usize], &[f64], &mut [f64]) -> Result<()> + Send + Sync;

/// One vector field `f_i : R^n -> R^n` with optional first and second derivatives.
#[derive(Clone)]
pub struct VectorField {
    value: Arc<PointMap>,
    jacobian: Option<Arc<PointMap>>,
    second: Option<Arc<BilinearMap>>,
}

impl VectorField {
    pub fn new(value: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        VectorField {
            value: Arc::new(value),
            jacobian: None,
            second: None,
        }
    }

    /// Row-major `n x n` Jacobian.
    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    /// Symmetric bilinear second derivative `(x, v, w) -> f''(x)[v, w]`.
    pub fn with_second_derivative(
        mut self,
        second: impl Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.second = Some(Arc::new(second));
        self
    }

    /// The identically zero field, with all derivatives.
    pub fn zero() -> Self {
        VectorField::new(|_, out| out.fill(0.0))
            .with_jacobian(|_, out| out.fill(0.0))
            .with_second_derivative(|_, _, _, out| out.fill(0.0))
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.value)(x, out)
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn has_second_derivative(&self) -> bool {
        self.second.is_some()
    }

    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.jacobian {
            Some(j) => {
                j(x, out);
                Ok(())
            }
            None => Err(ShootError::Config("vector field has no Jacobian".into())),
        }
    }

    pub fn second_derivative(
        &self,
        x: &[f64],
        v: &[f64],
        w: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        match &self.second {
            Some(h) => {
                h(x, v, w, out);
                Ok(())
            }
            None => Err(ShootError::Config(
                "vector field has no second derivative".into(),
            )),
        }
    }
}

/// Endpoint cost `phi_0(x0, xT)` and its gradients.
#[derive(Clone)]
pub struct EndpointCost {
    value: Arc<EndpointScalar>,
    gradient: Arc<EndpointPair>,
}

impl EndpointCost {
    pub fn new(
        value: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        EndpointCost {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    pub fn zero() -> Self {
        EndpointCost::new(
            |_, _| 0.0,
            |_, _, g0, gt| {
                g0.fill(0.0);
                gt.fill(0.0);
            },
        )
    }

    /// `phi_0 = c . x_T`.
    pub fn linear_terminal(coeffs: Vec<f64>) -> Self {
        let c = Arc::new(coeffs);
        let c2 = c.clone();
        EndpointCost::new(
            move |_, xt| c.iter().zip(xt).map(|(a, b)| a * b).sum(),
            move |_, _, g0, gt| {
                g0.fill(0.0);
                gt.copy_from_slice(&c2);
            },
        )
    }

    pub fn value(&self, x0: &[f64], xt: &[f64]) -> f64 {
        (self.value)(x0, xt)
    }

    pub fn gradient(&self, x0: &[f64], xt: &[f64], g0: &mut [f64], gt: &mut [f64]) {
        (self.gradient)(x0, xt, g0, gt)
    }
}

/// Coordinates fixed by the endpoint constraints, `x0[i] = a` and `xT[j] = b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pins {
    pub initial: Vec<(usize, f64)>,
    pub terminal: Vec<(usize, f64)>,
}

/// Endpoint equality constraints `eta(x0, xT) = 0`.
#[derive(Clone)]
pub struct EndpointConstraints {
    dim: usize,
    value: Arc<EndpointVector>,
    jacobian: Arc<EndpointPair>,
    pins: Option<Pins>,
}

impl EndpointConstraints {
    /// General constraints; `jacobian` fills two row-major `dim x n` blocks.
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        jacobian: impl Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        EndpointConstraints {
            dim,
            value: Arc::new(value),
            jacobian: Arc::new(jacobian),
            pins: None,
        }
    }

    pub fn none() -> Self {
        EndpointConstraints::new(0, |_, _, _| {}, |_, _, _, _| {})
    }

    /// Constraints that only fix individual coordinates.
    pub fn pinned(n: usize, initial: Vec<(usize, f64)>, terminal: Vec<(usize, f64)>) -> Self {
        let pins = Pins { initial, terminal };
        let dim = pins.initial.len() + pins.terminal.len();
        let (pv, pj) = (pins.clone(), pins.clone());
        EndpointConstraints {
            dim,
            value: Arc::new(move |x0, xt, out| {
                let k = pv.initial.len();
                for (r, &(i, a)) in pv.initial.iter().enumerate() {
                    out[r] = x0[i] - a;
                }
                for (r, &(j, b)) in pv.terminal.iter().enumerate() {
                    out[k + r] = xt[j] - b;
                }
            }),
            jacobian: Arc::new(move |_, _, j0, jt| {
                j0.fill(0.0);
                jt.fill(0.0);
                let k = pj.initial.len();
                for (r, &(i, _)) in pj.initial.iter().enumerate() {
                    j0[r * n + i] = 1.0;
                }
                for (r, &(j, _)) in pj.terminal.iter().enumerate() {
                    jt[(k + r) * n + j] = 1.0;
                }
            }),
            pins: Some(pins),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pins(&self) -> Option<&Pins> {
        self.pins.as_ref()
    }

    pub fn value(&self, x0: &[f64], xt: &[f64], out: &mut [f64]) {
        (self.value)(x0, xt, out)
    }

    pub fn jacobian(&self, x0: &[f64], xt: &[f64], j0: &mut [f64], jt: &mut [f64]) {
        (self.jacobian)(x0, xt, j0, jt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FinalTime {
    Fixed(f64),
    Free { guess: f64 },
}

impl FinalTime {
    pub fn is_free(&self) -> bool {
        matches!(self, FinalTime::Free { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlBound {
    pub lower: f64,
    pub upper: f64,
}

/// A control-affine optimal control problem.
///
/// Immutable once built; clones share the underlying closures.
#[derive(Clone)]
pub struct ProblemDef {
    name: String,
    n: usize,
    m: usize,
    fields: Vec<VectorField>,
    cost: EndpointCost,
    constraints: EndpointConstraints,
    bounds: Option<Vec<ControlBound>>,
    final_time: FinalTime,
    singular_law: Option<Arc<SingularLaw>>,
    cost_state: Option<usize>,
}

impl fmt::Debug for ProblemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDef")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("bounds", &self.bounds)
            .field("final_time", &self.final_time)
            .field("cost_state", &self.cost_state)
            .finish_non_exhaustive()
    }
}

impl ProblemDef {
    /// `fields` holds `f_0, ..., f_m`.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        fields: Vec<VectorField>,
        cost: EndpointCost,
        constraints: EndpointConstraints,
        final_time: FinalTime,
    ) -> Result<Self> {
        if n == 0 {
            return Err(ShootError::Config(
                "state dimension must be positive".into(),
            ));
        }
        if fields.len() < 2 {
            return Err(ShootError::Config(
                "need the drift and at least one controlled field".into(),
            ));
        }
        let m = fields.len() - 1;
        let probe = vec![1.0; n];
        let mut out = vec![f64::NAN; n];
        for (i, f) in fields.iter().enumerate() {
            f.eval(&probe, &mut out);
            if out.iter().any(|v| v.is_nan()) {
                return Err(ShootError::Config(format!(
                    "field f_{i} did not fill an output of dimension {n}"
                )));
            }
        }
        if let Some(p) = constraints.pins() {
            if p.initial.iter().chain(&p.terminal).any(|&(i, _)| i >= n) {
                return Err(ShootError::Config("pinned coordinate out of range".into()));
            }
        }
        match final_time {
            FinalTime::Fixed(t) | FinalTime::Free { guess: t } if !(t.is_finite() && t > 0.0) => {
                return Err(ShootError::Config(format!(
                    "final time must be positive, got {t}"
                )));
            }
            _ => {}
        }
        Ok(ProblemDef {
            name: name.into(),
            n,
            m,
            fields,
            cost,
            constraints,
            bounds: None,
            final_time,
            singular_law: None,
            cost_state: None,
        })
    }

    pub fn with_bounds(mut self, bounds: Vec<ControlBound>) -> Result<Self> {
        if bounds.len() != self.m {
            return Err(ShootError::Config(format!(
                "expected {} control bounds, got {}",
                self.m,
                bounds.len()
            )));
        }
        if let Some(b) = bounds.iter().find(|b| !(b.lower < b.upper)) {
            return Err(ShootError::Config(format!(
                "control bound lower {} must be below upper {}",
                b.lower, b.upper
            )));
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn with_singular_law(
        mut self,
        law: impl Fn(&[f64], &[f64], &[usize], &[f64], &mut [f64]) -> Result<()> + Send + Sync + 'static,
    ) -> Self {
        self.singular_law = Some(Arc::new(law));
        self
    }

    /// Marks an augmented state accumulating a running cost. Its costate is
    /// pinned to 1 and its initial value to 0; it is never a shooting unknown.
    pub fn with_cost_state(mut self, index: usize) -> Result<Self> {
        if index >= self.n {
            return Err(ShootError::Config("cost state index out of range".into()));
        }
        self.cost_state = Some(index);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }
    pub fn cost(&self) -> &EndpointCost {
        &self.cost
    }
    pub fn constraints(&self) -> &EndpointConstraints {
        &self.constraints
    }
    pub fn bounds(&self) -> Option<&[ControlBound]> {
        self.bounds.as_deref()
    }
    pub fn final_time(&self) -> FinalTime {
        self.final_time
    }
    pub fn cost_state(&self) -> Option<usize> {
        self.cost_state
    }
    pub fn has_singular_law(&self) -> bool {
        self.singular_law.is_some()
    }

    /// Whether every field carries second derivatives (generic resolver available).
    pub fn has_second_derivatives(&self) -> bool {
        self.fields
            .iter()
            .all(|f| f.has_second_derivative() && f.has_jacobian())
    }

    /// State coordinates that carry a genuine costate unknown.
    pub fn costate_indices(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| Some(i) != self.cost_state)
            .collect()
    }
}

/// Scratch buffers for allocation-free pointwise evaluation.
#[derive(Clone, Debug)]
pub(crate) struct Workspace {
    n: usize,
    /// `f_j(x)` for `j = 0..=m`, each of length `n`.
    pub(crate) fx: Vec<f64>,
    /// Row-major Jacobians of `f_j`.
    pub(crate) jx: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    btilde: Vec<f64>,
    xdot: Vec<f64>,
    u_full: Vec<f64>,
    ddot0: Vec<f64>,
    ddot1: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(n: usize, m: usize) -> Self {
        Workspace {
            n,
            fx: vec![0.0; (m + 1) * n],
            jx: vec![0.0; (m + 1) * n * n],
            a: vec![0.0; n],
            b: vec![0.0; n],
            c: vec![0.0; n],
            d: vec![0.0; n],
            btilde: vec![0.0; n],
            xdot: vec![0.0; n],
            u_full: vec![0.0; m],
            ddot0: vec![0.0; m],
            ddot1: vec![0.0; m],
        }
    }

    pub(crate) fn f(&self, j: usize) -> &[f64] {
        &self.fx[j * self.n..(j + 1) * self.n]
    }

    pub(crate) fn jac(&self, j: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.jx[j * nn..(j + 1) * nn]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += s * J v` for a row-major square `J`.
#[inline]
fn matvec_acc(j: &[f64], v: &[f64], s: f64, out: &mut [f64]) {
    let n = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += s * dot(&j[r * n..(r + 1) * n], v);
    }
}

/// `out += s * p J` (row vector times matrix).
#[inline]
fn vecmat_acc(p: &[f64], j: &[f64], s: f64, out: &mut [f64]) {
    let n = p.len();
    for (r, &pr) in p.iter().enumerate() {
        if pr == 0.0 {
            continue;
        }
        let row = &j[r * n..(r + 1) * n];
        for (o, &jr) in out.iter_mut().zip(row) {
            *o += s * pr * jr;
        }
    }
}

#[inline]
fn control_weight(u: &[f64], j: usize) -> f64 {
    if j == 0 {
        1.0
    } else {
        u[j - 1]
    }
}

impl ProblemDef {
    pub(crate) fn workspace(&self) -> Workspace {
        Workspace::new(self.n, self.m)
    }

    /// Fills `ws.fx` (and `ws.jx` when `with_jac`) at `x`.
    pub(crate) fn load_fields(&self, x: &[f64], ws: &mut Workspace, with_jac: bool) -> Result<()> {
        let n = self.n;
        for (j, f) in self.fields.iter().enumerate() {
            f.eval(x, &mut ws.fx[j * n..(j + 1) * n]);
            if with_jac {
                f.jacobian(x, &mut ws.jx[j * n * n..(j + 1) * n * n])?;
            }
        }
        Ok(())
    }

    /// `x' = sum_j u_j f_j(x)` from loaded fields.
    pub(crate) fn state_rate(&self, ws: &Workspace, u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for j in 0..=self.m {
            let w = control_weight(u, j);
            if w != 0.0 {
                for (o, fj) in out.iter_mut().zip(ws.f(j)) {
                    *o += w * fj;
                }
            }
        }
    }

    /// `p' = -p A(x, u)` from loaded Jacobians.
    pub(crate) fn costate_rate(&self, ws: &Workspace, p: &[f64], u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for j in 0..=self.m {
            let w = control_weight(u, j);
            if w != 0.0 {
                vecmat_acc(p, ws.jac(j), -w, out);
            }
        }
    }

    pub(crate) fn hamiltonian_ws(&self, ws: &Workspace, p: &[f64], u: &[f64]) -> f64 {
        (0..=self.m)
            .map(|j| control_weight(u, j) * dot(p, ws.f(j)))
            .sum()
    }

    pub(crate) fn switching_ws(&self, ws: &Workspace, p: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(p, ws.f(i + 1));
        }
    }

    /// `Phi_dot_i = -p b1_i` with `b1_i = sum_j u_j (f_j' f_i - f_i' f_j)`.
    pub(crate) fn switching_rate_ws(
        &self,
        ws: &mut Workspace,
        p: &[f64],
        u: &[f64],
        out: &mut [f64],
    ) {
        let n = self.n;
        for i in 1..=self.m {
            let mut b1 = std::mem::take(&mut ws.a);
            b1.fill(0.0);
            for j in 0..=self.m {
                let w = control_weight(u, j);
                if w == 0.0 || j == i {
                    continue;
                }
                matvec_acc(ws.jac(j), ws.f(i), w, &mut b1);
                matvec_acc(ws.jac(i), ws.f(j), -w, &mut b1);
            }
            out[i - 1] = -dot(p, &b1[..n]);
            ws.a = b1;
        }
    }

    /// Second time derivative of the switching function for the singular
    /// components (`singular[i]` true), with the full control `u`.
    ///
    /// Terms `u_j (f_j' f_i - f_i' f_j)` with `j` singular are left out of
    /// `b1_i`: along a singular arc `p` annihilates them, and without them the
    /// result is affine in the singular controls. Needs loaded Jacobians.
    pub(crate) fn phi_ddot_ws(
        &self,
        ws: &mut Workspace,
        x: &[f64],
        p: &[f64],
        u: &[f64],
        singular: &[bool],
        out: &mut [f64],
    ) -> Result<()> {
        let n = self.n;
        let m = self.m;
        let mut xdot = std::mem::take(&mut ws.xdot);
        self.state_rate(ws, u, &mut xdot);
        let mut bt = std::mem::take(&mut ws.btilde);
        let mut a = std::mem::take(&mut ws.a);
        let mut b = std::mem::take(&mut ws.b);
        let mut c = std::mem::take(&mut ws.c);
        let mut d = std::mem::take(&mut ws.d);
        let res = (|| -> Result<()> {
            for i in 1..=m {
                if !singular[i - 1] {
                    out[i - 1] = 0.0;
                    continue;
                }
                let fi = &ws.fx[i * n..(i + 1) * n];
                let ji = &ws.jx[i * n * n..(i + 1) * n * n];
                bt.fill(0.0);
                // d = D btilde [xdot]
                d.fill(0.0);
                for j in 0..=m {
                    if j == i || (j > 0 && singular[j - 1]) {
                        continue;
                    }
                    let w = control_weight(u, j);
                    if w == 0.0 {
                        continue;
                    }
                    let fj = &ws.fx[j * n..(j + 1) * n];
                    let jj = &ws.jx[j * n * n..(j + 1) * n * n];
                    matvec_acc(jj, fi, w, &mut bt);
                    matvec_acc(ji, fj, -w, &mut bt);

                    self.fields[j].second_derivative(x, fi, &xdot, &mut a)?;
                    self.fields[i].second_derivative(x, fj, &xdot, &mut b)?;
                    // c = J_i xdot, then J_j c ; likewise J_j xdot then J_i
                    c.fill(0.0);
                    matvec_acc(ji, &xdot, 1.0, &mut c);
                    for r in 0..n {
                        d[r] += w * (a[r] - b[r]);
                    }
                    matvec_acc(jj, &c, w, &mut d);
                    c.fill(0.0);
                    matvec_acc(jj, &xdot, 1.0, &mut c);
                    matvec_acc(ji, &c, -w, &mut d);
                }
                // p A btilde
                let mut pab = 0.0;
                for j in 0..=m {
                    let w = control_weight(u, j);
                    if w == 0.0 {
                        continue;
                    }
                    let jj = &ws.jx[j * n * n..(j + 1) * n * n];
                    c.fill(0.0);
                    matvec_acc(jj, &bt, 1.0, &mut c);
                    pab += w * dot(p, &c);
                }
                out[i - 1] = pab - dot(p, &d);
            }
            Ok(())
        })();
        ws.xdot = xdot;
        ws.btilde = bt;
        ws.a = a;
        ws.b = b;
        ws.c = c;
        ws.d = d;
        res
    }

    /// Affine decomposition `Phi_ddot_S = c0 + C1 u_S` at `(x, p)`, bang
    /// components frozen at `bang_values`. Returns `(c0, C1)`.
    pub(crate) fn singular_affine_ws(
        &self,
        ws: &mut Workspace,
        x: &[f64],
        p: &[f64],
        singular_set: &[usize],
        bang_values: &[f64],
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let k = singular_set.len();
        let mut mask = vec![false; self.m];
        for &s in singular_set {
            mask[s] = true;
        }
        let mut u = std::mem::take(&mut ws.u_full);
        u.copy_from_slice(bang_values);
        for &s in singular_set {
            u[s] = 0.0;
        }
        let mut base = std::mem::take(&mut ws.ddot0);
        let mut probe = std::mem::take(&mut ws.ddot1);
        let res = (|| {
            self.phi_ddot_ws(ws, x, p, &u, &mask, &mut base)?;
            let c0: Vec<f64> = singular_set.iter().map(|&s| base[s]).collect();
            let mut c1 = DMatrix::zeros(k, k);
            for (col, &s) in singular_set.iter().enumerate() {
                u[s] = 1.0;
                self.phi_ddot_ws(ws, x, p, &u, &mask, &mut probe)?;
                u[s] = 0.0;
                for (row, &r) in singular_set.iter().enumerate() {
                    c1[(row, col)] = probe[r] - base[r];
                }
            }
            Ok((c0, c1))
        })();
        ws.u_full = u;
        ws.ddot0 = base;
        ws.ddot1 = probe;
        res
    }

    /// Generic resolver: solves `C1 u_S = -c0`. Needs loaded Jacobians.
    pub(crate) fn singular_control_generic_ws(
        &self,
        ws: &mut Workspace,
        x: &[f64],
        p: &[f64],
        singular_set: &[usize],
        bang_values: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let (c0, c1) = self.singular_affine_ws(ws, x, p, singular_set, bang_values)?;
        if singular_set.len() == 1 {
            let a = c1[(0, 0)];
            if a == 0.0 || !a.is_finite() {
                return Err(ShootError::LegendreClebsch {
                    t: None,
                    cond: f64::INFINITY,
                });
            }
            out[0] = -c0[0] / a;
            return Ok(());
        }
        let (svd, _) = crate::solver::accurate_svd(&c1);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let cond = if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        };
        if !(cond <= LEGENDRE_CLEBSCH_MAX_COND) {
            return Err(ShootError::LegendreClebsch { t: None, cond });
        }
        let rhs = DVector::from_iterator(c0.len(), c0.iter().map(|v| -v));
        let sol = svd
            .solve(&rhs, 0.0)
            .map_err(|e| ShootError::Config(e.to_string()))?;
        out.copy_from_slice(sol.as_slice());
        Ok(())
    }

    /// Resolves the singular control, preferring the closed-form law.
    pub(crate) fn singular_control_ws(
        &self,
        ws: &mut Workspace,
        x: &[f64],
        p: &[f64],
        singular_set: &[usize],
        bang_values: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        match &self.singular_law {
            Some(law) => law(x, p, singular_set, bang_values, out),
            None => {
                if !self.has_second_derivatives() {
                    return Err(ShootError::Config(format!(
                        "problem '{}' has neither a singular-control law nor field second derivatives",
                        self.name
                    )));
                }
                self.singular_control_generic_ws(ws, x, p, singular_set, bang_values, out)
            }
        }
    }
}

fn check_dims(prob: &ProblemDef, x: &[f64], p: Option<&[f64]>, u: Option<&[f64]>) -> Result<()> {
    if x.len() != prob.n {
        return Err(ShootError::Config(format!(
            "state has length {}, expected {}",
            x.len(),
            prob.n
        )));
    }
    if let Some(p) = p {
        if p.len() != prob.n {
            return Err(ShootError::Config(format!(
                "costate has length {}, expected {}",
                p.len(),
                prob.n
            )));
        }
    }
    if let Some(u) = u {
        if u.len() != prob.m {
            return Err(ShootError::Config(format!(
                "control has length {}, expected {}",
                u.len(),
                prob.m
            )));
        }
    }
    Ok(())
}

fn row_major(n: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, data)
}

/// `A(x,u) = sum_j u_j f_j'(x)`, `B(x)` with columns `f_i(x)` and
/// `B1 = A B - dB/dt` where `dB/dt` has columns `f_i'(x) x'`.
pub fn eval_matrices(
    prob: &ProblemDef,
    x: &[f64],
    u: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    check_dims(prob, x, None, Some(u))?;
    let (n, m) = (prob.n, prob.m);
    let mut ws = prob.workspace();
    prob.load_fields(x, &mut ws, true)?;
    let mut a = DMatrix::zeros(n, n);
    for j in 0..=m {
        a += row_major(n, ws.jac(j)) * control_weight(u, j);
    }
    let mut b = DMatrix::zeros(n, m);
    for i in 0..m {
        b.set_column(i, &DVector::from_column_slice(ws.f(i + 1)));
    }
    let mut xdot = vec![0.0; n];
    prob.state_rate(&ws, u, &mut xdot);
    let xdot = DVector::from_vec(xdot);
    let mut db = DMatrix::zeros(n, m);
    for i in 0..m {
        db.set_column(i, &(row_major(n, ws.jac(i + 1)) * &xdot));
    }
    let b1 = &a * &b - db;
    Ok((a, b, b1))
}

/// Pointwise Pontryagin quantities at `(x, p, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PontryaginPoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub u: Vec<f64>,
    pub h: f64,
    pub phi: Vec<f64>,
    pub phi_dot: Vec<f64>,
}

pub fn eval_point(prob: &ProblemDef, x: &[f64], p: &[f64], u: &[f64]) -> Result<PontryaginPoint> {
    check_dims(prob, x, Some(p), Some(u))?;
    let mut ws = prob.workspace();
    prob.load_fields(x, &mut ws, true)?;
    let mut phi = vec![0.0; prob.m];
    let mut phi_dot = vec![0.0; prob.m];
    prob.switching_ws(&ws, p, &mut phi);
    prob.switching_rate_ws(&mut ws, p, u, &mut phi_dot);
    Ok(PontryaginPoint {
        x: x.to_vec(),
        p: p.to_vec(),
        u: u.to_vec(),
        h: prob.hamiltonian_ws(&ws, p, u),
        phi,
        phi_dot,
    })
}

fn check_singular_set(
    prob: &ProblemDef,
    singular_set: &[usize],
    bang_values: &[f64],
) -> Result<()> {
    if singular_set.is_empty() || singular_set.iter().any(|&s| s >= prob.m) {
        return Err(ShootError::Config(format!(
            "invalid singular set {singular_set:?}"
        )));
    }
    if bang_values.len() != prob.m {
        return Err(ShootError::Config("bang values must have length m".into()));
    }
    Ok(())
}

/// Singular control solving `Phi_ddot_S = 0`; closed form if the problem
/// ships one, otherwise the generic resolver.
pub fn singular_control(
    prob: &ProblemDef,
    x: &[f64],
    p: &[f64],
    singular_set: &[usize],
    bang_values: &[f64],
) -> Result<Vec<f64>> {
    check_dims(prob, x, Some(p), None)?;
    check_singular_set(prob, singular_set, bang_values)?;
    let mut ws = prob.workspace();
    if !prob.has_singular_law() {
        prob.load_fields(x, &mut ws, true)?;
    }
    let mut out = vec![0.0; singular_set.len()];
    prob.singular_control_ws(&mut ws, x, p, singular_set, bang_values, &mut out)?;
    Ok(out)
}

/// The generic resolver, bypassing any closed-form law.
pub fn singular_control_generic(
    prob: &ProblemDef,
    x: &[f64],
    p: &[f64],
    singular_set: &[usize],
    bang_values: &[f64],
) -> Result<Vec<f64>> {
    check_dims(prob, x, Some(p), None)?;
    check_singular_set(prob, singular_set, bang_values)?;
    if !prob.has_second_derivatives() {
        return Err(ShootError::Config(
            "generic resolver needs field second derivatives".into(),
        ));
    }
    let mut ws = prob.workspace();
    prob.load_fields(x, &mut ws, true)?;
    let mut out = vec![0.0; singular_set.len()];
    prob.singular_control_generic_ws(&mut ws, x, p, singular_set, bang_values, &mut out)?;
    Ok(out)
}

/// `Phi_ddot` for the components in `singular_set` at full control `u`.
pub fn phi_ddot(
    prob: &ProblemDef,
    x: &[f64],
    p: &[f64],
    u: &[f64],
    singular_set: &[usize],
) -> Result<Vec<f64>> {
    check_dims(prob, x, Some(p), Some(u))?;
    check_singular_set(prob, singular_set, u)?;
    let mut mask = vec![false; prob.m];
    for &s in singular_set {
        mask[s] = true;
    }
    let mut ws = prob.workspace();
    prob.load_fields(x, &mut ws, true)?;
    let mut out = vec![0.0; prob.m];
    prob.phi_ddot_ws(&mut ws, x, p, u, &mask, &mut out)?;
    Ok(singular_set.iter().map(|&s| out[s]).collect())
}

/// `R = -d Phi_ddot_S / d u_S`.
pub fn legendre_clebsch_matrix(
    prob: &ProblemDef,
    x: &[f64],
    p: &[f64],
    singular_set: &[usize],
    bang_values: &[f64],
) -> Result<DMatrix<f64>> {
    check_dims(prob, x, Some(p), None)?;
    check_singular_set(prob, singular_set, bang_values)?;
    let mut ws = prob.workspace();
    prob.load_fields(x, &mut ws, true)?;
    let (_, c1) = prob.singular_affine_ws(&mut ws, x, p, singular_set, bang_values)?;
    Ok(-c1)
}

/// `C B` with `C` the `m x n` matrix of rows `p f_i'(x)`.
pub fn goh_matrix(prob: &ProblemDef, x: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
    check_dims(prob, x, Some(p), None)?;
    let (n, m) = (prob.n, prob.m);
    let mut ws = prob.workspace();
    prob.load_fields(x, &mut ws, true)?;
    let pv = DVector::from_column_slice(p).transpose();
    let mut cb = DMatrix::zeros(m, m);
    for i in 0..m {
        let row = &pv * row_major(n, ws.jac(i + 1));
        for j in 0..m {
            cb[(i, j)] = dot(row.as_slice(), ws.f(j + 1));
        }
    }
    Ok(cb)
}

/// Worst discrepancy found by [`check_derivatives`].
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeCheck {
    pub max_jacobian_error: f64,
    pub max_second_error: f64,
    pub passed: bool,
}

/// Compares supplied Jacobians (and second derivatives, where present) with
/// central differences at step `1e-6 (1 + |x_k|)`, relative tolerance `1e-5`.
pub fn check_derivatives(prob: &ProblemDef, points: &[Vec<f64>]) -> Result<DerivativeCheck> {
    const TOL: f64 = 1e-5;
    let n = prob.n;
    let mut worst_j: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    let mut passed = true;
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    let mut jac = vec![0.0; n * n];
    let mut jp = vec![0.0; n * n];
    let mut jm = vec![0.0; n * n];
    let mut hv = vec![0.0; n];
    for x in points {
        check_dims(prob, x, None, None)?;
        for f in &prob.fields {
            f.jacobian(x, &mut jac)?;
            let scale = 1.0 + jac.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let mut xs = x.clone();
            for c in 0..n {
                let h = 1e-6 * (1.0 + x[c].abs());
                xs[c] = x[c] + h;
                f.eval(&xs, &mut fp);
                xs[c] = x[c] - h;
                f.eval(&xs, &mut fm);
                xs[c] = x[c];
                for r in 0..n {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    let err = (fd - jac[r * n + c]).abs() / scale;
                    worst_j = worst_j.max(err);
                    if !(err <= TOL) {
                        passed = false;
                    }
                }
            }
            if f.has_second_derivative() {
                // f''[e_a, e_c] against differences of the Jacobian column a.
                let mut ea = vec![0.0; n];
                let mut ec = vec![0.0; n];
                for c in 0..n {
                    let h = 1e-6 * (1.0 + x[c].abs());
                    xs[c] = x[c] + h;
                    f.jacobian(&xs, &mut jp)?;
                    xs[c] = x[c] - h;
                    f.jacobian(&xs, &mut jm)?;
                    xs[c] = x[c];
                    let hscale = 1.0
                        + jp.iter()
                            .zip(&jm)
                            .fold(0.0_f64, |a, (p, m)| a.max(((p - m) / (2.0 * h)).abs()));
                    ec.fill(0.0);
                    ec[c] = 1.0;
                    for a in 0..n {
                        ea.fill(0.0);
                        ea[a] = 1.0;
                        f.second_derivative(x, &ea, &ec, &mut hv)?;
                        for r in 0..n {
                            let fd = (jp[r * n + a] - jm[r * n + a]) / (2.0 * h);
                            let err = (fd - hv[r]).abs() / hscale;
                            worst_h = worst_h.max(err);
                            if !(err <= TOL) {
                                passed = false;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(DerivativeCheck {
        max_jacobian_error: worst_j,
        max_second_error: worst_h,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_problem(n: usize, m: usize) -> ProblemDef {
        ProblemDef::new(
            "zero",
            n,
            (0..=m).map(|_| VectorField::zero()).collect(),
            EndpointCost::zero(),
            EndpointConstraints::none(),
            FinalTime::Fixed(1.0),
        )
        .unwrap()
    }

    /// Double integrator with running cost (x1^2 + x2^2)/2 in a third state.
    fn regulator_like() -> ProblemDef {
        let f0 = VectorField::new(|x, o| {
            o[0] = x[1];
            o[1] = 0.0;
            o[2] = 0.5 * (x[0] * x[0] + x[1] * x[1]);
        })
        .with_jacobian(|x, j| {
            j.fill(0.0);
            j[1] = 1.0;
            j[6] = x[0];
            j[7] = x[1];
        })
        .with_second_derivative(|_, v, w, o| {
            o[0] = 0.0;
            o[1] = 0.0;
            o[2] = v[0] * w[0] + v[1] * w[1];
        });
        let f1 = VectorField::new(|_, o| {
            o.copy_from_slice(&[0.0, 1.0, 0.0]);
        })
        .with_jacobian(|_, j| j.fill(0.0))
        .with_second_derivative(|_, _, _, o| o.fill(0.0));
        ProblemDef::new(
            "reg",
            3,
            vec![f0, f1],
            EndpointCost::linear_terminal(vec![0.0, 0.0, 1.0]),
            EndpointConstraints::none(),
            FinalTime::Fixed(5.0),
        )
        .unwrap()
        .with_cost_state(2)
        .unwrap()
    }

    #[test]
    fn zero_fields_give_zero_matrices() {
        let prob = zero_problem(3, 2);
        let (a, b, b1) = eval_matrices(&prob, &[1.0, -2.0, 0.5], &[0.3, 0.7]).unwrap();
        assert!(a.iter().all(|v| *v == 0.0));
        assert!(b.iter().all(|v| *v == 0.0));
        assert!(b1.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_costate_gives_zero_point() {
        let prob = regulator_like();
        let pt = eval_point(&prob, &[0.3, -0.2, 1.0], &[0.0; 3], &[0.4]).unwrap();
        assert_eq!(pt.h, 0.0);
        assert_eq!(pt.phi, vec![0.0]);
        assert_eq!(pt.phi_dot, vec![0.0]);
    }

    #[test]
    fn regulator_b1_is_shifted_column() {
        let prob = regulator_like();
        let (_, b, b1) = eval_matrices(&prob, &[0.7, -1.3, 2.0], &[0.2]).unwrap();
        assert_eq!(b.column(0).as_slice(), &[0.0, 1.0, 0.0]);
        // Non-augmented block is (1, 0); the cost row carries x2.
        assert_eq!(b1[(0, 0)], 1.0);
        assert_eq!(b1[(1, 0)], 0.0);
        assert!((b1[(2, 0)] - (-1.3)).abs() < 1e-15);
    }

    #[test]
    fn regulator_point_quantities() {
        let prob = regulator_like();
        let (x, p, u) = ([0.4, 0.9, 0.0], [1.5, -0.25, 1.0], [0.6]);
        let pt = eval_point(&prob, &x, &p, &u).unwrap();
        assert_eq!(pt.phi[0], p[1]);
        let h = 0.5 * (x[0] * x[0] + x[1] * x[1]) + p[0] * x[1] + p[1] * u[0];
        assert!((pt.h - h).abs() < 1e-15);
        // Phi_dot = -(p1 + x2 p3)
        assert!((pt.phi_dot[0] + (p[0] + x[1])).abs() < 1e-15);
    }

    #[test]
    fn regulator_generic_singular_control_is_x1() {
        let prob = regulator_like();
        let u = singular_control_generic(&prob, &[0.37, -2.0, 3.0], &[0.1, 0.0, 1.0], &[0], &[0.0])
            .unwrap();
        assert!((u[0] - 0.37).abs() < 1e-14);
        let r = legendre_clebsch_matrix(&prob, &[0.37, -2.0, 3.0], &[0.1, 0.0, 1.0], &[0], &[0.0])
            .unwrap();
        assert!((r[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn phi_ddot_midpoint_identity() {
        let prob = regulator_like();
        let (x, p) = ([0.2, 0.5, 0.0], [0.3, -0.7, 1.0]);
        let a = phi_ddot(&prob, &x, &p, &[-0.8], &[0]).unwrap()[0];
        let b = phi_ddot(&prob, &x, &p, &[1.4], &[0]).unwrap()[0];
        let mid = phi_ddot(&prob, &x, &p, &[0.3], &[0]).unwrap()[0];
        assert!((mid - 0.5 * (a + b)).abs() < 1e-10);
    }

    #[test]
    fn zero_costate_violates_legendre_clebsch() {
        let prob = regulator_like();
        let err =
            singular_control_generic(&prob, &[0.2, 0.5, 0.0], &[0.0; 3], &[0], &[0.0]).unwrap_err();
        assert!(matches!(err, ShootError::LegendreClebsch { .. }));
    }

    #[test]
    fn missing_jacobian_is_config_error() {
        let f = VectorField::new(|_, o: &mut [f64]| o.fill(1.0));
        let prob = ProblemDef::new(
            "nojac",
            1,
            vec![f.clone(), f],
            EndpointCost::zero(),
            EndpointConstraints::none(),
            FinalTime::Fixed(1.0),
        )
        .unwrap();
        assert!(matches!(
            eval_matrices(&prob, &[0.0], &[1.0]),
            Err(ShootError::Config(_))
        ));
        assert!(matches!(
            singular_control(&prob, &[0.0], &[1.0], &[0], &[0.0]),
            Err(ShootError::Config(_))
        ));
    }

    #[test]
    fn bounds_must_be_ordered() {
        let prob = zero_problem(1, 1);
        assert!(prob
            .clone()
            .with_bounds(vec![ControlBound {
                lower: 1.0,
                upper: 1.0
            }])
            .is_err());
        assert!(prob
            .with_bounds(vec![ControlBound {
                lower: 0.0,
                upper: 1.0
            }])
            .is_ok());
    }

    #[test]
    fn derivative_check_catches_wrong_jacobian() {
        let good = regulator_like();
        let pts = vec![vec![0.3, -0.4, 0.0], vec![1.2, 2.0, -1.0]];
        assert!(check_derivatives(&good, &pts).unwrap().passed);
        let bad_f0 = VectorField::new(|x, o: &mut [f64]| o[0] = x[0] * x[0])
            .with_jacobian(|x, j| j[0] = x[0]);
        let f1 = VectorField::new(|_, o: &mut [f64]| o[0] = 1.0).with_jacobian(|_, j| j[0] = 0.0);
        let bad = ProblemDef::new(
            "bad",
            1,
            vec![bad_f0, f1],
            EndpointCost::zero(),
            EndpointConstraints::none(),
            FinalTime::Fixed(1.0),
        )
        .unwrap();
        assert!(!check_derivatives(&bad, &[vec![0.7]]).unwrap().passed);
    }

    #[test]
    fn goh_matrix_symmetric_for_scalar_control() {
        let prob = regulator_like();
        let cb = goh_matrix(&prob, &[0.3, 0.1, 0.0], &[0.2, 0.4, 1.0]).unwrap();
        assert_eq!(cb.nrows(), 1);
    }
}
