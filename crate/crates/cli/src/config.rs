//! Run configuration: TOML sections per module, dotted overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use emfg_core::discretization::SpaceTimeGrid;
use emfg_core::models::{CommonParams, Congestion, ModelError, ModelRef, Monotone, SeparatedPower, Sql};
use emfg_core::solver::ContinuationConfig;
use emfg_core::verification::{CertifyOptions, SampleBox};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Sql,
    Congestion,
    SeparatedPower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonotoneChoice {
    Log,
    Power,
}

/// Override of the structural constants `C0` and `gamma2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSection {
    pub c0: f64,
    pub gamma2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub name: ModelName,
    pub kappa_v: f64,
    pub amplitude: f64,
    pub coupling: MonotoneChoice,
    pub coupling_exponent: f64,
    pub terminal: MonotoneChoice,
    pub terminal_exponent: f64,
    pub terminal_shift: f64,
    /// Congestion exponent.
    pub alpha: f64,
    /// Congestion offset.
    pub c0: f64,
    /// Growth exponent of the separated power model.
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureSection>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            name: ModelName::Sql,
            kappa_v: 0.1,
            amplitude: 0.2,
            coupling: MonotoneChoice::Log,
            coupling_exponent: 1.0,
            terminal: MonotoneChoice::Log,
            terminal_exponent: 1.0,
            terminal_shift: 0.0,
            alpha: 1.0,
            c0: 1.0,
            gamma: 2.0,
            structure: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub d: usize,
    pub nx: usize,
    pub nt: usize,
    pub horizon: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            d: 1,
            nx: 32,
            nt: 32,
            horizon: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    pub samples: usize,
    pub p_max: f64,
    pub m_min: f64,
    pub m_max: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        let b = SampleBox::default();
        Self {
            samples: 2000,
            p_max: b.p_max,
            m_min: b.m_min,
            m_max: b.m_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySection {
    pub search_cmax: f64,
    pub mass_tol: f64,
    /// Defaults to `u.txt` in the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_field: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_field: Option<PathBuf>,
}

impl Default for CertifySection {
    fn default() -> Self {
        let o = CertifyOptions::default();
        Self {
            search_cmax: o.search_cmax,
            mass_tol: o.mass_tol,
            u_field: None,
            m_field: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    pub nx: Vec<usize>,
    pub nt: Vec<usize>,
    pub order_min: f64,
    pub order_max: f64,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self {
            nx: vec![16, 32, 64],
            nt: vec![16, 32, 64],
            order_min: 1.7,
            order_max: 2.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub continuation: ContinuationConfig,
    pub check: CheckSection,
    pub certify: CertifySection,
    pub convergence: ConvergenceSection,
    pub output: OutputSection,
}

/// Parse `text`, apply `KEY=VALUE` overrides, then deserialize.
pub fn resolve(text: &str, overrides: &[String]) -> Result<RunConfig, Failure> {
    let mut table: Table = toml::from_str(text).map_err(|e| Failure::Config(format!("config: {e}")))?;
    for item in overrides {
        apply_override(&mut table, item)?;
    }
    let cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Failure::Config(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, Failure> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    resolve(&text, overrides)
}

fn apply_override(table: &mut Table, item: &str) -> Result<(), Failure> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Failure::Config(format!("override `{item}` is not KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|k| k.is_empty()) {
        return Err(Failure::Config(format!("override key `{key}` is malformed")));
    }
    // Bare words that are not TOML literals become strings.
    let value = toml::from_str::<Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("non-empty key");
    let mut cur = table;
    for k in parents {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Failure::Config(format!("override `{key}`: `{k}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Checks that need no model or grid construction.
    fn validate(&self) -> Result<(), Failure> {
        self.continuation.validate().map_err(Failure::Config)?;
        if self.check.samples == 0 {
            return Err(Failure::Config("check.samples must be positive".into()));
        }
        self.sample_box().validate().map_err(Failure::Config)?;
        if !(self.certify.search_cmax > 0.0 && self.certify.mass_tol > 0.0) {
            return Err(Failure::Config("certify.search_cmax and certify.mass_tol must be positive".into()));
        }
        let c = &self.convergence;
        if c.nx.len() != c.nt.len() {
            return Err(Failure::Config("convergence.nx and convergence.nt differ in length".into()));
        }
        if !(c.order_min <= c.order_max) {
            return Err(Failure::Config("convergence.order_min exceeds order_max".into()));
        }
        Ok(())
    }

    pub fn sample_box(&self) -> SampleBox {
        SampleBox {
            p_max: self.check.p_max,
            m_min: self.check.m_min,
            m_max: self.check.m_max,
        }
    }

    pub fn certify_options(&self) -> CertifyOptions {
        CertifyOptions {
            search_cmax: self.certify.search_cmax,
            mass_tol: self.certify.mass_tol,
        }
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid, Failure> {
        let g = &self.grid;
        SpaceTimeGrid::new(g.d, g.nx, g.nt, g.horizon).map_err(|e| Failure::Invalid(e.to_string()))
    }

    pub fn convergence_grids(&self) -> Result<Vec<SpaceTimeGrid>, Failure> {
        let g = &self.grid;
        self.convergence
            .nx
            .iter()
            .zip(&self.convergence.nt)
            .map(|(&nx, &nt)| SpaceTimeGrid::new(g.d, nx, nt, g.horizon).map_err(|e| Failure::Invalid(e.to_string())))
            .collect()
    }

    pub fn model(&self) -> Result<ModelRef, Failure> {
        self.build_model().map_err(|e| Failure::Invalid(e.to_string()))
    }

    fn build_model(&self) -> Result<ModelRef, ModelError> {
        let m = &self.model;
        let monotone = |choice, q| match choice {
            MonotoneChoice::Log => Monotone::Log,
            MonotoneChoice::Power => Monotone::Power(q),
        };
        let params = CommonParams {
            dim: self.grid.d,
            kappa_v: m.kappa_v,
            amplitude: m.amplitude,
            coupling: monotone(m.coupling, m.coupling_exponent),
            terminal: monotone(m.terminal, m.terminal_exponent),
            terminal_shift: m.terminal_shift,
        };
        let s = m.structure.as_ref();
        Ok(match m.name {
            ModelName::Sql => {
                let model = Sql::new(params)?;
                Arc::new(match s {
                    Some(s) => model.with_structure(s.c0, s.gamma2)?,
                    None => model,
                })
            }
            ModelName::Congestion => {
                let model = Congestion::new(params, m.alpha, m.c0)?;
                Arc::new(match s {
                    Some(s) => model.with_structure(s.c0, s.gamma2)?,
                    None => model,
                })
            }
            ModelName::SeparatedPower => {
                let model = SeparatedPower::new(params, m.gamma)?;
                Arc::new(match s {
                    Some(s) => model.with_structure(s.c0, s.gamma2)?,
                    None => model,
                })
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_create_sections_and_parse_literals() {
        let cfg = resolve(
            "[grid]\nnx = 16\n",
            &["grid.nt=24".into(), "model.name=congestion".into(), "continuation.dtheta_init=0.2".into()],
        )
        .unwrap();
        assert_eq!((cfg.grid.nx, cfg.grid.nt), (16, 24));
        assert_eq!(cfg.model.name, ModelName::Congestion);
        assert_eq!(cfg.continuation.dtheta_init, 0.2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(resolve("[grid]\nnz = 3\n", &[]), Err(Failure::Config(_))));
        assert!(matches!(resolve("", &["solver.tol=1".into()]), Err(Failure::Config(_))));
        assert!(matches!(resolve("", &["grid.nx".into()]), Err(Failure::Config(_))));
    }

    #[test]
    fn invariant_violations_map_to_invalid() {
        let cfg = resolve("", &["grid.nx=4".into()]).unwrap();
        assert!(matches!(cfg.grid(), Err(Failure::Invalid(_))));
        let cfg = resolve("", &["model.amplitude=1.5".into()]).unwrap();
        assert!(matches!(cfg.model(), Err(Failure::Invalid(_))));
    }
}
