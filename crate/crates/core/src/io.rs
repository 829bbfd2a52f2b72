//! JSON plant and run-configuration files.
//!
//! Plant file (SI units: kg, N s/m, N/m, or their rotational counterparts):
//!
//! ```json
//! {
//!   "modal": { "mass": [..], "damping": [..], "stiffness": [..] },
//!   "P": [[..], ..],          // n_modes x n_inputs
//!   "Q": [[..], ..],          // n_outputs x n_modes
//!   "T_u": [[..], ..],        // n_inputs x n_inputs, optional (identity)
//!   "T_y": [[..], ..],        // n_channels x n_outputs, optional (identity)
//!   "n_channels": 7           // optional (number of outputs)
//! }
//! ```

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerParams, ControllerStructure, NotchSpec, PidLowpassSpec};
use crate::error::{Error, Result};
use crate::freq::GridSpec;
use crate::lti::{DecoupledPlant, ModalPlant};
use crate::nsopt::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalBlock {
    pub mass: Vec<f64>,
    pub damping: Vec<f64>,
    pub stiffness: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantFile {
    pub modal: ModalBlock,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "T_u", default, skip_serializing_if = "Option::is_none")]
    pub t_u: Option<Vec<Vec<f64>>>,
    #[serde(rename = "T_y", default, skip_serializing_if = "Option::is_none")]
    pub t_y: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_channels: Option<usize>,
}

/// Deserializes `text`, reporting the failing field path with line and column.
pub fn parse_json<T: DeserializeOwned>(text: &str, file: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse { file: file.into(), path, line: inner.line(), column: inner.column(), message: strip_position(&inner.to_string()) }
    })
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

fn matrix(rows: &[Vec<f64>], field: &str, file: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if let Some(i) = rows.iter().position(|r| r.len() != m) {
        return Err(Error::InvalidPlant(format!("{file}: {field}[{i}] has {} entries, expected {m}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl PlantFile {
    pub fn to_plant(&self, file: &str) -> Result<DecoupledPlant> {
        let ctx = |e: Error| match e {
            Error::InvalidPlant(m) => Error::InvalidPlant(format!("{file}: {m}")),
            other => other,
        };
        let p = matrix(&self.p, "P", file)?;
        let q = matrix(&self.q, "Q", file)?;
        let base = ModalPlant::new(self.modal.mass.clone(), self.modal.damping.clone(), self.modal.stiffness.clone(), p, q).map_err(ctx)?;
        let n = self.n_channels.unwrap_or(base.n_outputs());
        let t_u = match &self.t_u {
            Some(t) => matrix(t, "T_u", file)?,
            None => DMatrix::identity(base.n_inputs(), base.n_inputs()),
        };
        let t_y = match &self.t_y {
            Some(t) => matrix(t, "T_y", file)?,
            None => DMatrix::identity(n, base.n_outputs()),
        };
        DecoupledPlant::new(base, t_u, t_y, n).map_err(ctx)
    }

    pub fn from_plant(plant: &DecoupledPlant) -> Self {
        let b = plant.base();
        Self {
            modal: ModalBlock { mass: b.mass().to_vec(), damping: b.damping().to_vec(), stiffness: b.stiffness().to_vec() },
            p: rows(b.input()),
            q: rows(b.output()),
            t_u: Some(rows(plant.t_u())),
            t_y: Some(rows(plant.t_y())),
            n_channels: Some(plant.n_channels()),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn parse_plant(text: &str, file: &str) -> Result<DecoupledPlant> {
    parse_json::<PlantFile>(text, file)?.to_plant(file)
}

pub fn load_plant(path: &Path) -> Result<DecoupledPlant> {
    parse_plant(&read(path)?, &path.display().to_string())
}

pub fn plant_to_json(plant: &DecoupledPlant) -> String {
    serde_json::to_string_pretty(&PlantFile::from_plant(plant)).expect("plant serializes")
}

pub fn save_plant(plant: &DecoupledPlant, path: &Path) -> Result<()> {
    std::fs::write(path, plant_to_json(plant) + "\n").map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Controller block: structure plus the initial point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerBlock {
    pub channels: Vec<PidLowpassSpec>,
    #[serde(default)]
    pub notches: Vec<NotchSpec>,
    pub omega_c0: Vec<f64>,
    #[serde(default)]
    pub beta0: Vec<f64>,
    #[serde(default)]
    pub zeta0: Vec<f64>,
    /// Defaults to `omega_c0` for bandwidths and 1 for notch parameters.
    #[serde(default)]
    pub scaling: Option<Vec<f64>>,
}

impl ControllerBlock {
    pub fn structure(&self) -> Result<ControllerStructure> {
        ControllerStructure::new(self.channels.clone(), self.notches.clone())
    }

    pub fn initial(&self, structure: &ControllerStructure) -> Result<ControllerParams> {
        let scaling = match &self.scaling {
            Some(s) => s.clone(),
            None => self.omega_c0.iter().copied().chain(std::iter::repeat_n(1.0, 2 * self.notches.len())).collect(),
        };
        ControllerParams::new(structure, self.omega_c0.clone(), self.beta0.clone(), self.zeta0.clone(), scaling)
    }
}

/// Everything a synthesis run needs besides CLI overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Plant file, relative to the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<PathBuf>,
    pub controller: ControllerBlock,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub grid: GridSpec,
}

fn merge(base: &mut serde_json::Value, layer: serde_json::Value) {
    match (base, layer) {
        (serde_json::Value::Object(b), serde_json::Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Loads one or more layered configuration files; later files override
/// earlier ones key by key. A relative `plant` path resolves against the
/// file that sets it.
pub fn load_config(paths: &[PathBuf]) -> Result<RunConfig> {
    if paths.is_empty() {
        return Err(Error::InvalidConfig("no configuration file given".into()));
    }
    if let [single] = paths {
        let mut cfg: RunConfig = parse_json(&read(single)?, &single.display().to_string())?;
        cfg.plant = cfg.plant.map(|p| resolve(single, p));
        return Ok(cfg);
    }
    let mut merged = serde_json::Value::Object(Default::default());
    let mut plant = None;
    for path in paths {
        let mut layer: serde_json::Value = parse_json(&read(path)?, &path.display().to_string())?;
        if let Some(p) = layer.as_object_mut().and_then(|o| o.remove("plant")) {
            let p: PathBuf = serde_json::from_value(p).map_err(|e| Error::InvalidConfig(format!("{}: plant: {e}", path.display())))?;
            plant = Some(resolve(path, p));
        }
        merge(&mut merged, layer);
    }
    let label = paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" + ");
    let mut cfg: RunConfig = serde_path_to_error::deserialize(merged).map_err(|e| Error::Parse {
        file: label,
        path: e.path().to_string(),
        line: 0,
        column: 0,
        message: e.into_inner().to_string(),
    })?;
    cfg.plant = plant;
    Ok(cfg)
}

fn resolve(config: &Path, plant: PathBuf) -> PathBuf {
    if plant.is_absolute() {
        plant
    } else {
        config.parent().unwrap_or(Path::new("")).join(plant)
    }
}
