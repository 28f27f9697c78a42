//! Assumed arc sequences.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, ShootError};
use crate::problem::ProblemDef;

/// What one control component does on one arc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Lower,
    Upper,
    Singular,
    Value(f64),
}

impl Mode {
    pub fn is_singular(&self) -> bool {
        matches!(self, Mode::Singular)
    }

    /// Bang-like: the control is fixed by the structure table.
    pub fn is_fixed(&self) -> bool {
        !self.is_singular()
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Lower => write!(f, "lower"),
            Mode::Upper => write!(f, "upper"),
            Mode::Singular => write!(f, "singular"),
            Mode::Value(c) => write!(f, "value:{c}"),
        }
    }
}

impl FromStr for Mode {
    type Err = ShootError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "lower" | "min" => Ok(Mode::Lower),
            "upper" | "max" => Ok(Mode::Upper),
            "singular" | "sing" => Ok(Mode::Singular),
            other => match other.strip_prefix("value:") {
                Some(v) => v
                    .trim()
                    .parse::<f64>()
                    .map(Mode::Value)
                    .map_err(|_| ShootError::Config(format!("bad mode value '{s}'"))),
                None => Err(ShootError::Config(format!("unknown control mode '{s}'"))),
            },
        }
    }
}

/// Arc-by-arc control modes. `N` arcs give `N - 1` switching-time slots,
/// plus a final-time slot when the horizon is free.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlStructure {
    modes: Vec<Vec<Mode>>,
}

impl ControlStructure {
    pub fn new(modes: Vec<Vec<Mode>>) -> Result<Self> {
        if modes.is_empty() {
            return Err(ShootError::Config(
                "a control structure needs at least one arc".into(),
            ));
        }
        let m = modes[0].len();
        if m == 0 || modes.iter().any(|row| row.len() != m) {
            return Err(ShootError::Config(
                "every arc must list one mode per control".into(),
            ));
        }
        Ok(ControlStructure { modes })
    }

    /// Single-control shorthand.
    pub fn scalar(modes: &[Mode]) -> Result<Self> {
        ControlStructure::new(modes.iter().map(|&m| vec![m]).collect())
    }

    pub fn arcs(&self) -> usize {
        self.modes.len()
    }

    pub fn controls(&self) -> usize {
        self.modes[0].len()
    }

    pub fn switch_count(&self) -> usize {
        self.modes.len() - 1
    }

    pub fn modes(&self) -> &[Vec<Mode>] {
        &self.modes
    }

    pub fn arc(&self, k: usize) -> &[Mode] {
        &self.modes[k]
    }

    pub fn singular_set(&self, k: usize) -> Vec<usize> {
        self.modes[k]
            .iter()
            .enumerate()
            .filter(|(_, m)| m.is_singular())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn has_singular(&self) -> bool {
        self.modes.iter().flatten().any(Mode::is_singular)
    }

    /// Components whose mode changes at interior boundary `k` (between arcs
    /// `k - 1` and `k`).
    pub fn switching_components(&self, k: usize) -> Vec<usize> {
        (0..self.controls())
            .filter(|&i| self.modes[k - 1][i] != self.modes[k][i])
            .collect()
    }

    /// `(arc, component)` pairs where a singular arc of that component starts.
    pub fn singular_entries(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for k in 0..self.arcs() {
            for i in 0..self.controls() {
                if self.modes[k][i].is_singular() && (k == 0 || !self.modes[k - 1][i].is_singular())
                {
                    out.push((k, i));
                }
            }
        }
        out
    }

    /// Checks the table against the problem's control bounds.
    pub fn check_against(&self, prob: &ProblemDef) -> Result<()> {
        if self.controls() != prob.m() {
            return Err(ShootError::Config(format!(
                "structure has {} controls, problem has {}",
                self.controls(),
                prob.m()
            )));
        }
        for (k, row) in self.modes.iter().enumerate() {
            for (i, mode) in row.iter().enumerate() {
                match (mode, prob.bounds()) {
                    (Mode::Lower | Mode::Upper, None) => {
                        return Err(ShootError::Config(format!(
                            "arc {k} puts control {i} at a bound but the problem is unconstrained"
                        )))
                    }
                    (Mode::Value(c), Some(b)) if !(b[i].lower <= *c && *c <= b[i].upper) => {
                        return Err(ShootError::Config(format!(
                            "arc {k}: value {c} for control {i} lies outside its bounds"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Control values of the fixed components on arc `k`; singular slots are 0.
    pub fn fixed_controls(&self, prob: &ProblemDef, k: usize, out: &mut [f64]) {
        for (i, mode) in self.modes[k].iter().enumerate() {
            out[i] = match mode {
                Mode::Lower => prob.bounds().map_or(0.0, |b| b[i].lower),
                Mode::Upper => prob.bounds().map_or(0.0, |b| b[i].upper),
                Mode::Value(c) => *c,
                Mode::Singular => 0.0,
            };
        }
    }
}

impl fmt::Display for ControlStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arcs: Vec<String> = self
            .modes
            .iter()
            .map(|row| {
                row.iter()
                    .map(Mode::to_string)
                    .collect::<Vec<_>>()
                    .join("/")
            })
            .collect();
        write!(f, "{}", arcs.join(" - "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_modes() {
        assert_eq!("lower".parse::<Mode>().unwrap(), Mode::Lower);
        assert_eq!("Singular".parse::<Mode>().unwrap(), Mode::Singular);
        assert_eq!("value:0.25".parse::<Mode>().unwrap(), Mode::Value(0.25));
        assert!("sideways".parse::<Mode>().is_err());
        let s = Mode::Value(-1.5).to_string();
        assert_eq!(s.parse::<Mode>().unwrap(), Mode::Value(-1.5));
    }

    #[test]
    fn singular_spanning_two_arcs_enters_once() {
        let s = ControlStructure::new(vec![
            vec![Mode::Lower, Mode::Upper],
            vec![Mode::Singular, Mode::Upper],
            vec![Mode::Singular, Mode::Lower],
        ])
        .unwrap();
        assert_eq!(s.singular_entries(), vec![(1, 0)]);
        assert_eq!(s.switching_components(2), vec![1]);
    }

    #[test]
    fn ragged_table_rejected() {
        assert!(ControlStructure::new(vec![vec![Mode::Lower], vec![]]).is_err());
        assert!(ControlStructure::new(vec![]).is_err());
    }
}
