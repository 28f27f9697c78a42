//! TOML problem files. Dynamics are registered in code; a file picks a
//! family, sets its constants and the arc structure, and may carry known
//! solutions.
//!
//! ```toml
//! [problem]
//! family = "fishing"
//! final_time = 10.0
//! # ... remaining family constants
//!
//! [dimensions]
//! states = 2
//! controls = 1
//!
//! [structure]
//! arcs = ["upper", "singular", "upper"]
//! classical_entry = "separate"
//!
//! [solution]
//! nu_classical = [-0.46, 2.37, 6.99]
//! nu_extended = [-0.46, 2.37, 6.99]
//! objective = -106.9
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::benchmarks::{BenchmarkCase, Family, Published};
use crate::error::{Result, ShootError};
use crate::shooting::EntryConditions;
use crate::structure::{ControlStructure, Mode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensions {
    pub states: usize,
    pub controls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSection {
    /// One entry per arc; multi-input arcs list their modes separated by `/`.
    pub arcs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classical_entry: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_classical: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_extended: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub problem: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimensions: Option<Dimensions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<SolutionSection>,
}

fn entry_name(e: EntryConditions) -> &'static str {
    match e {
        EntryConditions::Separate => "separate",
        EntryConditions::SquaredSum => "squared_sum",
    }
}

fn parse_entry(s: &str) -> Result<EntryConditions> {
    match s.trim().to_ascii_lowercase().as_str() {
        "separate" => Ok(EntryConditions::Separate),
        "squared_sum" | "squared-sum" => Ok(EntryConditions::SquaredSum),
        other => Err(ShootError::Config(format!(
            "unknown classical_entry '{other}' (expected separate or squared_sum)"
        ))),
    }
}

fn parse_structure(arcs: &[String]) -> Result<ControlStructure> {
    let modes = arcs
        .iter()
        .map(|a| a.split('/').map(str::parse).collect::<Result<Vec<Mode>>>())
        .collect::<Result<Vec<_>>>()?;
    ControlStructure::new(modes)
}

impl ProblemConfig {
    pub fn from_case(case: &BenchmarkCase) -> Self {
        let arcs = case
            .structure
            .modes()
            .iter()
            .map(|row| {
                row.iter()
                    .map(Mode::to_string)
                    .collect::<Vec<_>>()
                    .join("/")
            })
            .collect();
        let solution = case.published.as_ref().map(|p| SolutionSection {
            nu_classical: Some(p.nu_classical.clone()),
            nu_extended: Some(p.nu_extended.clone()),
            objective: Some(p.objective),
        });
        ProblemConfig {
            problem: case.family.clone(),
            dimensions: Some(Dimensions {
                states: case.problem.n(),
                controls: case.problem.m(),
            }),
            structure: Some(StructureSection {
                arcs,
                classical_entry: Some(entry_name(case.classical_entry).to_string()),
            }),
            solution,
        }
    }

    pub fn to_case(&self) -> Result<BenchmarkCase> {
        let structure = match &self.structure {
            Some(s) => Some(parse_structure(&s.arcs)?),
            None => None,
        };
        let mut case = BenchmarkCase::from_family(self.problem.clone(), structure)?;
        if let Some(d) = &self.dimensions {
            if d.states != case.problem.n() || d.controls != case.problem.m() {
                return Err(ShootError::Config(format!(
                    "dimensions {}x{} do not match family {} ({}x{})",
                    d.states,
                    d.controls,
                    case.name,
                    case.problem.n(),
                    case.problem.m()
                )));
            }
        }
        if let Some(e) = self
            .structure
            .as_ref()
            .and_then(|s| s.classical_entry.as_deref())
        {
            case.classical_entry = parse_entry(e)?;
        }
        if let Some(sol) = &self.solution {
            let mut p = case.published.take().unwrap_or_else(|| Published {
                nu_classical: Vec::new(),
                nu_extended: Vec::new(),
                objective: f64::NAN,
                sv_classical: Vec::new(),
                kappa_classical: f64::NAN,
                sv_extended: Vec::new(),
                kappa_extended: f64::NAN,
                success_classical: f64::NAN,
                success_extended: f64::NAN,
            });
            if let Some(v) = &sol.nu_classical {
                p.nu_classical = v.clone();
            }
            if let Some(v) = &sol.nu_extended {
                p.nu_extended = v.clone();
            }
            if let Some(o) = sol.objective {
                p.objective = o;
            }
            if p.nu_classical.is_empty() {
                p.nu_classical = p.nu_extended.clone();
            }
            if p.nu_extended.is_empty() {
                p.nu_extended = p.nu_classical.clone();
            }
            case.published = if p.nu_extended.is_empty() {
                None
            } else {
                Some(p)
            };
        }
        Ok(case)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| ShootError::Config(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| ShootError::Config(format!("malformed config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ShootError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

/// Loads a case from a registered name or a config file path.
pub fn load_case(name_or_path: &str) -> Result<BenchmarkCase> {
    let path = Path::new(name_or_path);
    if path.extension().is_some_and(|e| e == "toml") || path.is_file() {
        ProblemConfig::load(path)?.to_case()
    } else {
        BenchmarkCase::by_name(name_or_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;

    #[test]
    fn round_trip_keeps_case() {
        for case in benchmarks::all() {
            let text = ProblemConfig::from_case(&case).to_toml().unwrap();
            let back = ProblemConfig::from_toml(&text).unwrap().to_case().unwrap();
            assert_eq!(back.family, case.family);
            assert_eq!(back.structure, case.structure);
            assert_eq!(back.classical_entry, case.classical_entry);
            assert_eq!(back.published, case.published);
        }
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ProblemConfig::from_toml(
            "[problem]\nfamily = \"regulator\"\nfinal_time = 5.0\nx0 = [0.0, 1.0]\nlower = -1.0\nupper = 1.0\n",
        )
        .unwrap();
        let case = cfg.to_case().unwrap();
        assert_eq!(case.structure.arcs(), 2);
        assert!(case.published.is_some());
    }

    #[test]
    fn new_parameters_drop_published_data_unless_given() {
        let mut cfg = ProblemConfig::from_case(&benchmarks::fishing());
        if let Family::Fishing(p) = &mut cfg.problem {
            p.cost_scale = 1.001;
        }
        let sol = cfg.solution.take();
        assert!(cfg.to_case().unwrap().published.is_none());
        cfg.solution = sol;
        assert!(cfg.to_case().unwrap().published.is_some());
    }

    #[test]
    fn malformed_files_are_config_errors() {
        for text in [
            "[problem]\nfamily = \"rocket\"\n",
            "not toml at all [",
            "[problem]\nfamily = \"fishing\"\n",
        ] {
            assert!(
                matches!(ProblemConfig::from_toml(text), Err(ShootError::Config(_))),
                "{text}"
            );
        }
        let mut cfg = ProblemConfig::from_case(&benchmarks::regulator());
        cfg.dimensions = Some(Dimensions {
            states: 2,
            controls: 1,
        });
        assert!(cfg.to_case().is_err());
        cfg.dimensions = None;
        cfg.structure = Some(StructureSection {
            arcs: vec!["upper/lower".into()],
            classical_entry: None,
        });
        assert!(cfg.to_case().is_err());
    }
}
