//! Scenario files: JSON with matrices as nested row arrays.
//!
//! Sensors are labelled `1..=N` in edge lists. The schema is described in
//! `docs/scenario-format.md`.

use std::path::Path;

use cmdf_core::linalg::{Matrix, SymMatrix, Vector};
use cmdf_core::montecarlo::McConfig;
use cmdf_core::network::{metropolis_weights_raw, ConsensusMatrix, NeighborConvention, Topology};
use cmdf_core::{NoiseSpec, SystemModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Issue};
use crate::span::LineIndex;

pub type Rows = Vec<Vec<f64>>;

/// Relative asymmetry accepted in covariance inputs.
const SYMMETRY_RTOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub topology: TopologySpec,
    pub model: ModelSpec,
    pub noise: NoiseFile,
    pub init: InitSpec,
    pub sweep: SweepSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub n_sensors: usize,
    /// 1-based sensor labels.
    pub edges: Vec<[usize; 2]>,
    #[serde(default)]
    pub convention: NeighborConvention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "F")]
    pub f: Rows,
    #[serde(rename = "H")]
    pub h: Vec<Rows>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseFile {
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "Qu")]
    pub qu: Rows,
    #[serde(rename = "R")]
    pub r: Vec<Rows>,
    #[serde(rename = "Ru")]
    pub ru: Vec<Rows>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub xhat0: Vec<f64>,
    pub sigma0: Rows,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    /// One step from an equal start at every fusion step.
    #[serde(rename = "indices_vs_L")]
    IndicesVsL,
    /// Index recursions over `k = 0..=horizon`.
    IndicesVsK,
    Phi,
    /// One-step relation theorems.
    Relations,
    /// Multi-step relation bundles along the recursion.
    Recursive,
    SteadyState,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(rename = "L_list")]
    pub l_list: Vec<usize>,
    pub horizon: usize,
    /// Append the finite stand-in for `L → ∞`.
    #[serde(default)]
    pub include_surrogate: bool,
    pub analyses: Vec<Analysis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub n_runs: usize,
    pub horizon: usize,
    pub seed: u64,
    pub ci_level: f64,
    /// Defaults to the first entry of `L_list`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion_steps: Option<usize>,
}

/// A parsed and validated scenario with its core objects built.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub topology: Topology,
    pub consensus: ConsensusMatrix,
    pub model: SystemModel,
    pub noise: NoiseSpec,
    pub xhat0: Vector,
    pub sigma0: SymMatrix,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<(Scenario, Vec<u8>), CliError> {
        let bytes = std::fs::read(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let origin = path.display().to_string();
        let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Validation {
            origin: origin.clone(),
            issues: vec![Issue {
                line: None,
                pointer: String::new(),
                message: format!("not UTF-8: {e}"),
            }],
        })?;
        Ok((Scenario::parse(&text, &origin)?, bytes))
    }

    pub fn parse(text: &str, origin: &str) -> Result<Scenario, CliError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| CliError::Validation {
            origin: origin.to_string(),
            issues: vec![Issue {
                line: Some(e.line()),
                pointer: String::new(),
                message: strip_location(&e.to_string()),
            }],
        })?;
        let mut v = Validator {
            index: LineIndex::build(text),
            issues: Vec::new(),
        };
        match v.build(file) {
            Some(s) if v.issues.is_empty() => Ok(s),
            _ => Err(CliError::Validation {
                origin: origin.to_string(),
                issues: v.issues,
            }),
        }
    }

    pub fn mc_config(&self, seed_override: Option<u64>) -> Option<(McConfig, usize)> {
        let mc = self.file.mc.as_ref()?;
        let cfg = McConfig {
            n_runs: mc.n_runs,
            horizon: mc.horizon,
            seed: seed_override.unwrap_or(mc.seed),
            ci_level: mc.ci_level,
        };
        Some((cfg, mc.fusion_steps.unwrap_or(self.file.sweep.l_list[0])))
    }

    pub fn runs(&self, a: Analysis) -> bool {
        self.file.sweep.analyses.contains(&a)
    }
}

/// serde_json appends " at line L column C"; the issue carries the line.
fn strip_location(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

struct Validator {
    index: LineIndex,
    issues: Vec<Issue>,
}

impl Validator {
    fn fail(&mut self, pointer: &str, message: impl Into<String>) {
        self.issues.push(Issue {
            line: self.index.line(pointer),
            pointer: pointer.to_string(),
            message: message.into(),
        });
    }

    fn matrix(&mut self, pointer: &str, rows: &Rows, shape: (usize, usize)) -> Option<Matrix> {
        if rows.len() != shape.0 {
            self.fail(pointer, format!("expected {} rows, found {}", shape.0, rows.len()));
            return None;
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != shape.1 {
                self.fail(
                    &format!("{pointer}/{i}"),
                    format!("expected {} columns, found {}", shape.1, r.len()),
                );
                return None;
            }
        }
        Some(Matrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
    }

    fn covariance(&mut self, pointer: &str, rows: &Rows, n: usize) -> Option<SymMatrix> {
        let m = self.matrix(pointer, rows, (n, n))?;
        let scale = 1.0 + m.amax();
        if (&m - m.transpose()).amax() > SYMMETRY_RTOL * scale {
            self.fail(pointer, "covariance is not symmetric");
            return None;
        }
        let s = SymMatrix::new(m).ok()?;
        if !s.is_positive_definite() {
            self.fail(
                pointer,
                format!("covariance is not positive definite (min eigenvalue {:e})", s.min_eigenvalue()),
            );
            return None;
        }
        Some(s)
    }

    fn build(&mut self, file: ScenarioFile) -> Option<Scenario> {
        let topology = self.topology(&file.topology);
        let n_sensors = file.topology.n_sensors;

        let n = file.model.f.len();
        if n == 0 {
            self.fail("/model/F", "state dimension must be at least 1");
            return None;
        }
        let f = self.matrix("/model/F", &file.model.f, (n, n));
        if file.model.h.len() != n_sensors {
            self.fail(
                "/model/H",
                format!("expected one H per sensor ({n_sensors}), found {}", file.model.h.len()),
            );
        }
        let mut h = Vec::new();
        for (j, hj) in file.model.h.iter().enumerate() {
            let p = format!("/model/H/{j}");
            if hj.is_empty() {
                self.fail(&p, "measurement dimension must be at least 1");
                continue;
            }
            if let Some(m) = self.matrix(&p, hj, (hj.len(), n)) {
                h.push(m);
            }
        }

        let q = self.covariance("/noise/Q", &file.noise.q, n);
        let qu = self.covariance("/noise/Qu", &file.noise.qu, n);
        let dims: Vec<usize> = file.model.h.iter().map(|hj| hj.len()).collect();
        let r = self.covariance_list("/noise/R", &file.noise.r, &dims);
        let ru = self.covariance_list("/noise/Ru", &file.noise.ru, &dims);

        if file.init.xhat0.len() != n {
            self.fail("/init/xhat0", format!("expected length {n}, found {}", file.init.xhat0.len()));
        }
        let sigma0 = self.covariance("/init/sigma0", &file.init.sigma0, n);

        self.sweep(&file);

        let topology = topology?;
        let consensus = match ConsensusMatrix::new(metropolis_weights_raw(&topology, file.topology.convention)) {
            Ok(c) => c,
            Err(e) => {
                self.fail(
                    "/topology/convention",
                    format!("Metropolis weights are not a valid consensus matrix: {e}"),
                );
                return None;
            }
        };
        let (f, q, qu, r, ru, sigma0) = (f?, q?, qu?, r?, ru?, sigma0?);
        if h.len() != n_sensors || !self.issues.is_empty() {
            return None;
        }
        let model = match SystemModel::new(f, h) {
            Ok(m) => m,
            Err(e) => {
                self.fail("/model", e.to_string());
                return None;
            }
        };
        let noise = match NoiseSpec::new(&model, q, qu, r, ru) {
            Ok(s) => s,
            Err(e) => {
                self.fail("/noise", e.to_string());
                return None;
            }
        };
        Some(Scenario {
            xhat0: Vector::from_column_slice(&file.init.xhat0),
            file,
            topology,
            consensus,
            model,
            noise,
            sigma0,
        })
    }

    fn covariance_list(&mut self, pointer: &str, list: &[Rows], dims: &[usize]) -> Option<Vec<SymMatrix>> {
        if list.len() != dims.len() {
            self.fail(
                pointer,
                format!("expected one covariance per sensor ({}), found {}", dims.len(), list.len()),
            );
            return None;
        }
        let out: Vec<Option<SymMatrix>> = list
            .iter()
            .zip(dims)
            .enumerate()
            .map(|(j, (rows, &m))| self.covariance(&format!("{pointer}/{j}"), rows, m))
            .collect();
        out.into_iter().collect()
    }

    fn topology(&mut self, spec: &TopologySpec) -> Option<Topology> {
        let n = spec.n_sensors;
        if n == 0 {
            self.fail("/topology/n_sensors", "need at least one sensor");
            return None;
        }
        let mut edges = Vec::new();
        for (e, &[a, b]) in spec.edges.iter().enumerate() {
            let p = format!("/topology/edges/{e}");
            if a == 0 || b == 0 || a > n || b > n {
                self.fail(&p, format!("sensor labels must lie in 1..={n}"));
            } else if a == b {
                self.fail(&p, "self-loops are implicit and not allowed");
            } else {
                edges.push((a - 1, b - 1));
            }
        }
        match Topology::new(n, &edges) {
            Ok(t) => Some(t),
            Err(cmdf_core::Error::Disconnected) => {
                self.fail("/topology/edges", "communication topology is disconnected");
                None
            }
            Err(e) => {
                self.fail("/topology", e.to_string());
                None
            }
        }
    }

    fn sweep(&mut self, file: &ScenarioFile) {
        let s = &file.sweep;
        if s.l_list.is_empty() {
            self.fail("/sweep/L_list", "L_list must not be empty");
        }
        for (i, &l) in s.l_list.iter().enumerate() {
            if l == 0 {
                self.fail(&format!("/sweep/L_list/{i}"), "fusion steps must be at least 1");
            }
        }
        if s.horizon == 0 {
            self.fail("/sweep/horizon", "horizon must be at least 1");
        }
        if s.analyses.is_empty() {
            self.fail("/sweep/analyses", "no analyses requested");
        }
        match &file.mc {
            None if s.analyses.contains(&Analysis::MonteCarlo) => {
                self.fail("/sweep/analyses", "monte_carlo requested but no mc section given");
            }
            None => {}
            Some(mc) => {
                let cfg = McConfig {
                    n_runs: mc.n_runs,
                    horizon: mc.horizon,
                    seed: mc.seed,
                    ci_level: mc.ci_level,
                };
                if let Err(e) = cfg.validate() {
                    self.fail("/mc", e.to_string());
                }
                if mc.fusion_steps == Some(0) {
                    self.fail("/mc/fusion_steps", "fusion steps must be at least 1");
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "name": "t",
  "topology": {"n_sensors": 2, "edges": [[1, 2]]},
  "model": {"F": [[1.0]], "H": [[[1.0]], [[1.0]]]},
  "noise": {
    "Q": [[1.0]],
    "Qu": [[2.0]],
    "R": [[[1.0]], [[1.0]]],
    "Ru": [[[1.0]], [[1.5]]]
  },
  "init": {"xhat0": [0.0], "sigma0": [[1.0]]},
  "sweep": {"L_list": [1, 2], "horizon": 3, "analyses": ["indices_vs_L"]}
}"#;

    fn issues(text: &str) -> Vec<Issue> {
        match Scenario::parse(text, "t.json") {
            Err(CliError::Validation { issues, .. }) => issues,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_parses() {
        let s = Scenario::parse(MINIMAL, "t.json").unwrap();
        assert_eq!(s.model.n_sensors(), 2);
        assert_eq!(s.file.topology.convention, NeighborConvention::IncludeSelf);
    }

    #[test]
    fn non_spd_is_anchored() {
        let text = MINIMAL.replace("\"Qu\": [[2.0]]", "\"Qu\": [[-2.0]]");
        let i = issues(&text);
        assert_eq!(i.len(), 1);
        assert_eq!(i[0].pointer, "/noise/Qu");
        assert_eq!(i[0].line, Some(7));
    }

    #[test]
    fn zero_fusion_step_rejected() {
        let i = issues(&MINIMAL.replace("[1, 2], \"horizon\"", "[1, 0], \"horizon\""));
        assert_eq!(i[0].pointer, "/sweep/L_list/1");
        assert_eq!(i[0].line, Some(12));
    }

    #[test]
    fn disconnected_rejected() {
        let text = MINIMAL.replace("\"edges\": [[1, 2]]", "\"edges\": []");
        assert!(issues(&text)[0].message.contains("disconnected"));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let text = MINIMAL.replace("\"R\": [[[1.0]], [[1.0]]]", "\"R\": [[[1.0, 0.0]], [[1.0]]]");
        let i = issues(&text);
        assert!(i[0].pointer.starts_with("/noise/R/0"), "{i:?}");
    }

    #[test]
    fn unknown_analysis_is_parse_error_with_line() {
        let i = issues(&MINIMAL.replace("indices_vs_L", "fourier"));
        assert_eq!(i[0].line, Some(12));
    }

    #[test]
    fn asymmetric_rejected() {
        let text = MINIMAL
            .replace("\"F\": [[1.0]]", "\"F\": [[1.0, 0.0], [0.0, 1.0]]")
            .replace("\"H\": [[[1.0]], [[1.0]]]", "\"H\": [[[1.0, 0.0]], [[0.0, 1.0]]]")
            .replace("\"Q\": [[1.0]]", "\"Q\": [[1.0, 0.5], [0.4, 1.0]]")
            .replace("\"Qu\": [[2.0]]", "\"Qu\": [[2.0, 0.0], [0.0, 2.0]]")
            .replace(
                "\"xhat0\": [0.0], \"sigma0\": [[1.0]]",
                "\"xhat0\": [0.0, 0.0], \"sigma0\": [[1.0, 0.0], [0.0, 1.0]]",
            );
        let i = issues(&text);
        assert_eq!(i.len(), 1, "{i:?}");
        assert!(i[0].message.contains("symmetric"));
    }
}
