//! Run configuration: parsing, validation and the stable hash used in file names.

use std::path::{Path, PathBuf};

use peer_bench::{PcaConfig, PcaParams, PcaWeights, Protocol};
use peer_core::mesh::AdaptOptions;
use peer_core::optimize::OptimizerOptions;
use peer_core::{build_triplet, Grid, PeerTriplet, SolverOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Heat1d,
    Pca2d,
}

/// One step count or a list of them; `N` counts the steps minus one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepList {
    One(usize),
    Many(Vec<usize>),
}

impl StepList {
    pub fn values(&self) -> Vec<usize> {
        match self {
            StepList::One(n) => vec![*n],
            StepList::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSpec {
    Uniform,
    Adapt,
    /// Grid points read from a file with one time per line (a header line and
    /// `#` comments are allowed).
    File(PathBuf),
}

/// Initial control of an optimization run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialControl {
    Zero,
    /// The standard drug protocol (PCa only).
    Standard,
}

/// Artifacts written by `solve` and `adapt-demo`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Artifact {
    Trace,
    Controls,
    Trajectory,
    Observables,
    Grid,
    Density,
    Summary,
}

pub const ALL_ARTIFACTS: [Artifact; 7] = [
    Artifact::Trace,
    Artifact::Controls,
    Artifact::Trajectory,
    Artifact::Observables,
    Artifact::Grid,
    Artifact::Density,
    Artifact::Summary,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    /// Spatial points of the heat problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Grid points per side of the PCa problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_side: Option<usize>,
    #[serde(default = "default_triplet")]
    pub triplet: String,
    #[serde(rename = "N")]
    pub n: StepList,
    #[serde(default = "default_grid")]
    pub grid: GridSpec,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub adapt: AdaptOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PcaWeights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PcaParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_therapy_steps: Option<usize>,
    #[serde(default = "default_initial")]
    pub initial: InitialControl,
    /// Defaults to every artifact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<Artifact>>,
}

fn default_triplet() -> String {
    "AP4o33vgi".into()
}

fn default_grid() -> GridSpec {
    GridSpec::Uniform
}

fn default_initial() -> InitialControl {
    InitialControl::Zero
}

pub const HEAT_DEFAULT_M: usize = 250;
pub const PCA_DEFAULT_M_SIDE: usize = 64;

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let pca_only = [
            ("m_side", self.m_side.is_some()),
            ("weights", self.weights.is_some()),
            ("protocol", self.protocol.is_some()),
            ("params", self.params.is_some()),
            ("pre_therapy_steps", self.pre_therapy_steps.is_some()),
        ];
        match self.problem {
            ProblemKind::Heat1d => {
                if let Some((key, _)) = pca_only.iter().find(|(_, set)| *set) {
                    return bad(format!("key `{key}` applies to pca2d only"));
                }
                if self.m.is_some_and(|m| m < 4) {
                    return bad("heat1d needs m ≥ 4".into());
                }
                if self.initial == InitialControl::Standard {
                    return bad("the standard initial control applies to pca2d only".into());
                }
            }
            ProblemKind::Pca2d => {
                if self.m.is_some() {
                    return bad("key `m` applies to heat1d only; use `m_side`".into());
                }
                if self.m_side.is_some_and(|m| m < 16) {
                    return bad("pca2d needs m_side ≥ 16".into());
                }
                if let Some(p) = &self.params {
                    p.validate().map_err(|e| CliError::Config(e.to_string()))?;
                }
                if let Some(w) = &self.weights {
                    if [w.k1, w.k2, w.k3, w.k4].iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
                        return bad("weights must be finite and non-negative".into());
                    }
                }
            }
        }
        let steps = self.n.values();
        if steps.is_empty() {
            return bad("`N` must not be empty".into());
        }
        if let Some(n) = steps.iter().find(|&&n| n < 4) {
            return bad(format!("`N` must be at least 4, got {n}"));
        }
        build_triplet(&self.triplet).map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.optimizer.tol > 0.0) {
            return bad("optimizer.tol must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.adapt.delta) {
            return bad("adapt.delta must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn triplet(&self) -> Result<PeerTriplet, CliError> {
        build_triplet(&self.triplet).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn heat_m(&self) -> usize {
        self.m.unwrap_or(HEAT_DEFAULT_M)
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol.unwrap_or(Protocol::D1Target)
    }

    pub fn pca_config(&self) -> PcaConfig {
        let mut cfg = PcaConfig {
            m_side: self.m_side.unwrap_or(PCA_DEFAULT_M_SIDE),
            protocol: self.protocol(),
            weights: self.weights,
            ..PcaConfig::default()
        };
        if let Some(p) = self.params {
            cfg.params = p;
        }
        if let Some(s) = self.pre_therapy_steps {
            cfg.pre_therapy_steps = s;
        }
        cfg
    }

    pub fn horizon(&self) -> f64 {
        match self.problem {
            ProblemKind::Heat1d => 1.0,
            ProblemKind::Pca2d => PcaConfig::default().therapy_days,
        }
    }

    pub fn wants(&self, a: Artifact) -> bool {
        self.outputs.as_ref().map_or(true, |o| o.contains(&a))
    }

    /// Base grid with `N + 1` steps: uniform, or read from the configured file.
    pub fn base_grid(&self, n: usize) -> Result<Grid, CliError> {
        match &self.grid {
            GridSpec::File(path) => {
                let grid = read_grid(path)?;
                if grid.steps() != n + 1 {
                    return Err(CliError::Config(format!(
                        "grid file has {} steps, N + 1 = {}",
                        grid.steps(),
                        n + 1
                    )));
                }
                if (grid.horizon() - self.horizon()).abs() > 1e-12 * self.horizon() {
                    return Err(CliError::Config(format!(
                        "grid file ends at {}, expected {}",
                        grid.horizon(),
                        self.horizon()
                    )));
                }
                Ok(grid)
            }
            _ => Grid::uniform(self.horizon(), n + 1).map_err(|e| CliError::Config(e.to_string())),
        }
    }

    /// First 64 bits of the SHA-256 of the canonical JSON form, as hex.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config is serializable");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Reads grid points: the first column of each data line; lines starting with
/// `#` and a non-numeric header line are skipped.
pub fn read_grid(path: &Path) -> Result<Grid, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read grid file {}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let first = line.split(',').next().unwrap_or("").trim();
        match first.parse::<f64>() {
            Ok(v) => points.push(v),
            Err(_) if points.is_empty() => continue,
            Err(_) => {
                return Err(CliError::Config(format!(
                    "grid file {} line {}: `{first}` is not a number",
                    path.display(),
                    k + 1
                )))
            }
        }
    }
    Grid::new(points).map_err(|e| CliError::Config(format!("grid file {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_heat_config() {
        let cfg = RunConfig::from_json(r#"{"problem": "heat1d", "N": [15, 31]}"#).unwrap();
        assert_eq!(cfg.n.values(), vec![15, 31]);
        assert_eq!(cfg.heat_m(), 250);
        assert_eq!(cfg.grid, GridSpec::Uniform);
        assert!(cfg.wants(Artifact::Trace));
    }

    #[test]
    fn rejects_unknown_and_misplaced_keys() {
        assert!(matches!(
            RunConfig::from_json(r#"{"problem": "heat1d", "N": 15, "colour": 1}"#),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"problem": "heat1d", "N": 15, "m_side": 32}"#),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"problem": "heat1d", "N": 15, "optimizer": {"tol": 1e-6, "speed": 2}}"#),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"problem": "heat1d", "N": 15, "triplet": "RK4"}"#),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn pca_keys_and_grid_file() {
        let cfg = RunConfig::from_json(
            r#"{"problem": "pca2d", "m_side": 32, "N": 20, "protocol": "d3-target",
                "grid": {"file": "g.csv"}, "weights": {"k1": 1, "k2": 1, "k3": 1, "k4": 6}}"#,
        )
        .unwrap();
        assert_eq!(cfg.grid, GridSpec::File("g.csv".into()));
        let pc = cfg.pca_config();
        assert_eq!(pc.m_side, 32);
        assert_eq!(pc.weights().k4, 6.0);
        assert_eq!(pc.protocol, Protocol::D3Target);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::from_json(r#"{"problem": "heat1d", "N": 15}"#).unwrap();
        let b = RunConfig::from_json(r#"{ "N": 15, "problem": "heat1d" }"#).unwrap();
        let c = RunConfig::from_json(r#"{"problem": "heat1d", "N": 16}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
