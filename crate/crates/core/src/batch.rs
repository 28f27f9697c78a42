//! Sweeps of the shooting solve over grids of initial guesses.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::benchmarks::{default_method, BenchmarkCase};
use crate::error::{Result, ShootError};
use crate::shooting::{Formulation, ShootingProblem};
use crate::solver::{solve, SolverSettings};

/// One uniformly spaced grid axis, endpoints included.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn value(&self, i: usize) -> f64 {
        if self.count == 1 {
            return self.lo;
        }
        if i + 1 == self.count {
            return self.hi;
        }
        self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64
    }
}

/// A tensor grid written as `name=lo:hi:count,...`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl GridSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |msg: String| ShootError::Config(format!("grid `{s}`: {msg}"));
        let mut axes: Vec<Axis> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, range) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("`{part}` is not name=lo:hi:count")))?;
            let fields: Vec<&str> = range.split(':').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(bad(format!("`{part}` is not name=lo:hi:count")));
            }
            let num = |f: &str| {
                f.parse::<f64>()
                    .map_err(|_| bad(format!("`{f}` is not a number")))
            };
            let (lo, hi) = (num(fields[0])?, num(fields[1])?);
            let count: usize = fields[2]
                .parse()
                .map_err(|_| bad(format!("`{}` is not a point count", fields[2])))?;
            if !(lo.is_finite() && hi.is_finite()) || hi < lo {
                return Err(bad(format!("axis `{name}` needs finite lo <= hi")));
            }
            if count < 2 && !(count == 1 && lo == hi) {
                return Err(bad(format!(
                    "axis `{name}` needs at least 2 points (or lo = hi with 1)"
                )));
            }
            let name = name.trim().to_string();
            if axes.iter().any(|a| a.name == name) {
                return Err(bad(format!("axis `{name}` given twice")));
            }
            axes.push(Axis {
                name,
                lo,
                hi,
                count,
            });
        }
        if axes.is_empty() {
            return Err(bad("no axes".into()));
        }
        Ok(GridSpec { axes })
    }

    /// A single point, for sanity runs.
    pub fn point(names: &[String], values: &[f64]) -> Self {
        GridSpec {
            axes: names
                .iter()
                .zip(values)
                .map(|(n, &v)| Axis {
                    name: n.clone(),
                    lo: v,
                    hi: v,
                    count: 1,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reorders the axes to follow `names`; every name must have an axis.
    pub fn aligned(&self, names: &[String]) -> Result<Self> {
        if self.axes.len() != names.len() {
            return Err(ShootError::Config(format!(
                "grid has {} axes but the unknown has {} components ({})",
                self.axes.len(),
                names.len(),
                names.join(", ")
            )));
        }
        let axes = names
            .iter()
            .map(|n| {
                self.axes
                    .iter()
                    .find(|a| &a.name == n)
                    .cloned()
                    .ok_or_else(|| {
                        ShootError::Config(format!(
                            "grid has no axis `{n}` (unknowns: {})",
                            names.join(", ")
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GridSpec { axes })
    }

    /// Row-major multi-index of point `flat` (last axis fastest).
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            idx[k] = flat % a.count;
            flat /= a.count;
        }
        idx
    }

    pub fn values(&self, idx: &[usize]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(idx)
            .map(|(a, &i)| a.value(i))
            .collect()
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .axes
            .iter()
            .map(|a| format!("{}={}:{}:{}", a.name, a.lo, a.hi, a.count))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    ConvergedToReference,
    ConvergedElsewhere,
    Failed,
}

impl Outcome {
    pub fn name(&self) -> &'static str {
        match self {
            Outcome::ConvergedToReference => "reference",
            Outcome::ConvergedElsewhere => "elsewhere",
            Outcome::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub index: Vec<usize>,
    pub outcome: Outcome,
    pub iterations: usize,
    /// `NaN` when no residual could be evaluated.
    pub final_residual: f64,
    pub solution: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchSettings {
    pub solver: SolverSettings,
    /// Defaults to `1e-6 (1 + |nu_ref|_inf)`.
    pub match_tol: Option<f64>,
    /// `None` uses every available core.
    pub workers: Option<usize>,
}

impl BatchSettings {
    /// Settings used for campaigns: no final Jacobian, and iterates whose
    /// residual exceeds `1e8` count as diverged.
    pub fn for_case(case: &BenchmarkCase) -> Self {
        BatchSettings {
            solver: SolverSettings {
                final_jacobian: false,
                divergence_norm: Some(DIVERGENCE_NORM),
                ..case.solver_settings()
            },
            match_tol: None,
            workers: None,
        }
    }
}

/// Residual norm above which a batch solve is abandoned.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Clone, Debug)]
pub struct BatchReport {
    pub case: String,
    pub formulation: Formulation,
    pub grid: GridSpec,
    pub names: Vec<String>,
    pub points: Vec<PointResult>,
    pub wall_time: Duration,
    pub reference: Option<Vec<f64>>,
    pub match_tol: f64,
    /// Objective at the best point that reached the reference.
    pub objective: Option<f64>,
}

impl BatchReport {
    pub fn count(&self, outcome: Outcome) -> usize {
        self.points.iter().filter(|p| p.outcome == outcome).count()
    }

    pub fn success_rate(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.count(Outcome::ConvergedToReference) as f64 / self.points.len() as f64
    }

    /// Smallest final residual among successful points.
    pub fn best_residual(&self) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.outcome == Outcome::ConvergedToReference)
            .map(|p| p.final_residual)
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.min(r))))
    }

    /// Iteration counts of converged points.
    pub fn iteration_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for p in self.points.iter().filter(|p| p.outcome != Outcome::Failed) {
            *h.entry(p.iterations).or_insert(0) += 1;
        }
        h
    }

    pub fn reference_found(&self) -> bool {
        self.count(Outcome::ConvergedToReference) > 0
    }

    pub fn summary_header() -> &'static str {
        "case       shooting   points     CPU(s)   Success  Convergence       Objective"
    }

    /// CPU, success rate, residual at the solution and objective.
    pub fn summary(&self) -> String {
        let conv = self
            .best_residual()
            .map_or("n/a".to_string(), |r| format!("{r:.2e}"));
        let obj = self
            .objective
            .map_or("n/a".to_string(), |o| format!("{o:.9}"));
        format!(
            "{:<10} {:<10} {:>6} {:>10.2} {:>8.2}% {:>12} {:>15}",
            self.case,
            self.formulation.to_string(),
            self.points.len(),
            self.wall_time.as_secs_f64(),
            100.0 * self.success_rate(),
            conv,
            obj
        )
    }

    /// One row per point: multi-index, outcome, iterations, final residual.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = self.names.iter().map(|n| format!("i_{n}")).collect();
        header.extend(["outcome", "iterations", "final_residual"].map(String::from));
        wr.write_record(&header).map_err(csv_err)?;
        for p in &self.points {
            let mut rec: Vec<String> = p.index.iter().map(|i| i.to_string()).collect();
            rec.push(p.outcome.name().into());
            rec.push(p.iterations.to_string());
            rec.push(format!("{:?}", p.final_residual));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> ShootError {
    ShootError::Io(e.to_string())
}

fn default_match_tol(reference: &[f64]) -> f64 {
    1e-6 * (1.0 + reference.iter().fold(0.0_f64, |a, v| a.max(v.abs())))
}

fn run_point(
    sp: &ShootingProblem,
    formulation: Formulation,
    nu0: &[f64],
    index: Vec<usize>,
    settings: &SolverSettings,
    reference: Option<&[f64]>,
    match_tol: f64,
) -> PointResult {
    let rep = solve(sp, nu0, default_method(formulation), settings);
    let final_residual = rep.residual_norms.last().copied().unwrap_or(f64::NAN);
    let outcome = if !rep.converged() {
        Outcome::Failed
    } else if reference.is_some_and(|r| {
        rep.solution()
            .iter()
            .zip(r)
            .all(|(a, b)| (a - b).abs() <= match_tol)
    }) {
        Outcome::ConvergedToReference
    } else {
        Outcome::ConvergedElsewhere
    };
    PointResult {
        index,
        outcome,
        iterations: rep.iterations(),
        final_residual,
        solution: rep.solution().to_vec(),
    }
}

/// Solves from every grid point. Outcomes are stored in row-major grid order,
/// so the report does not depend on the worker count.
pub fn run_grid(
    case: &BenchmarkCase,
    formulation: Formulation,
    grid: &GridSpec,
    reference: Option<&[f64]>,
    settings: &BatchSettings,
) -> Result<BatchReport> {
    let sp = case.shooting(formulation)?;
    let names = sp.layout.names();
    let grid = grid.aligned(&names)?;
    let match_tol = settings
        .match_tol
        .unwrap_or_else(|| reference.map_or(0.0, default_match_tol));
    if let Some(r) = reference {
        if r.len() != names.len() {
            return Err(ShootError::Config(format!(
                "reference has {} components, unknown has {}",
                r.len(),
                names.len()
            )));
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = settings.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| ShootError::Config(format!("cannot start worker pool: {e}")))?;

    let start = Instant::now();
    let points: Vec<PointResult> = pool.install(|| {
        (0..grid.len())
            .into_par_iter()
            .map(|flat| {
                let idx = grid.multi_index(flat);
                let nu0 = grid.values(&idx);
                run_point(
                    &sp,
                    formulation,
                    &nu0,
                    idx,
                    &settings.solver,
                    reference,
                    match_tol,
                )
            })
            .collect()
    });
    let wall_time = start.elapsed();

    let best = points
        .iter()
        .filter(|p| p.outcome == Outcome::ConvergedToReference)
        .min_by(|a, b| a.final_residual.total_cmp(&b.final_residual));
    let objective = match best {
        Some(p) => sp.objective(&p.solution).ok(),
        None => None,
    };
    Ok(BatchReport {
        case: case.name.clone(),
        formulation,
        grid,
        names,
        points,
        wall_time,
        reference: reference.map(<[f64]>::to_vec),
        match_tol,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_order() {
        let g = GridSpec::parse("a=0:1:3, b=-1:1:2").unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.multi_index(0), vec![0, 0]);
        assert_eq!(g.multi_index(1), vec![0, 1]);
        assert_eq!(g.multi_index(5), vec![2, 1]);
        assert_eq!(g.values(&[1, 1]), vec![0.5, 1.0]);
        assert_eq!(GridSpec::parse(&g.to_string()).unwrap(), g);
    }

    #[test]
    fn aligned_follows_codec_order() {
        let g = GridSpec::parse("t1=0:5:21,p1=-10:10:21,p2=-10:10:21").unwrap();
        let names: Vec<String> = ["p1", "p2", "t1"].map(String::from).to_vec();
        let a = g.aligned(&names).unwrap();
        assert_eq!(a.axes[2].hi, 5.0);
        assert!(g.aligned(&names[..2]).is_err());
    }

    #[test]
    fn bad_specs_rejected() {
        for s in [
            "",
            "a=0:1",
            "a=0:1:1",
            "a=1:0:3",
            "a=x:1:3",
            "a=0:1:3,a=0:1:3",
            "a0:1:3",
        ] {
            assert!(GridSpec::parse(s).is_err(), "{s}");
        }
    }

    #[test]
    fn goddard_default_grid_has_8000_points() {
        let g = GridSpec::parse(crate::benchmarks::goddard().grid.as_str()).unwrap();
        assert_eq!(g.len(), 8000);
    }
}
