//! Executes the analyses of a scenario and writes plot-ready CSVs plus a run
//! manifest.
//!
//! Every output is rendered to memory first, then written and hashed in a
//! fixed order, so identical inputs give byte-identical files.

use std::path::{Path, PathBuf};

use cmdf_core::analysis::{classify_relation, decompose_ts, recursive_relation_check, Bundle, ClassifyOptions, OneStep};
use cmdf_core::linalg::SymMatrix;
use cmdf_core::montecarlo::run_monte_carlo;
use cmdf_core::network::{surrogate_fusion_step, SURROGATE_TOL};
use cmdf_core::steady_state::{steady_states, write_steady_csv, IterOptions, SteadyState};
use cmdf_core::IndexPropagator;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{numerical, CliError};
use crate::scenario::{Analysis, Scenario};

/// Largest power searched for the `L → ∞` stand-in.
pub const SURROGATE_MAX: usize = 10_000;
pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Versions {
    pub cmdf_cli: &'static str,
    pub cmdf_core: &'static str,
    pub manifest_format: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
    pub fusion_steps: Vec<usize>,
    pub surrogate_fusion_step: Option<usize>,
    pub analyses: Vec<Analysis>,
    pub monte_carlo_pass: Option<bool>,
    pub versions: Versions,
    pub outputs: Vec<OutputFile>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loads, validates and runs a scenario file.
pub fn run_scenario(path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let (scenario, bytes) = Scenario::load(path)?;
    let out_dir = opts
        .out
        .clone()
        .or_else(|| scenario.file.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.file.name));
    let (outputs, manifest) = render(&scenario, &bytes, opts.seed)?;
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    for (name, body) in &outputs {
        let p = out_dir.join(name);
        std::fs::write(&p, body).map_err(io_err(&p))?;
    }
    let p = out_dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    std::fs::write(&p, json).map_err(io_err(&p))?;
    Ok(RunSummary { out_dir, manifest })
}

fn io_err(p: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: p.display().to_string(),
        source,
    }
}

/// Long-format table: `sensor, L, k, quantity, value`.
struct Long(csv::Writer<Vec<u8>>);

impl Long {
    fn new() -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sensor", "L", "k", "quantity", "value"]).expect("in-memory write");
        Long(w)
    }

    fn push(&mut self, sensor: usize, l: usize, k: Option<usize>, quantity: &str, value: f64) {
        let k = k.map(|k| k.to_string()).unwrap_or_default();
        self.0
            .write_record([(sensor + 1).to_string(), l.to_string(), k, quantity.to_string(), value.to_string()])
            .expect("in-memory write");
    }

    fn finish(self) -> Vec<u8> {
        self.0.into_inner().expect("in-memory flush")
    }
}

fn lmin(a: &SymMatrix, b: &SymMatrix) -> f64 {
    (a - b).min_eigenvalue()
}

struct OneStepRow {
    step: OneStep,
    r_ts: SymMatrix,
    sigma_t_tilde: SymMatrix,
    relations: Vec<cmdf_core::RelationReport>,
}

fn one_step_sweep(s: &Scenario, ls: &[usize], surrogate: Option<usize>) -> Result<Vec<Vec<OneStepRow>>, CliError> {
    let n_sensors = s.model.n_sensors();
    ls.par_iter()
        .map(|&l| {
            let p = s.consensus.power(l);
            (0..n_sensors)
                .map(|i| {
                    let row: Vec<f64> = p.row(i).iter().copied().collect();
                    let step = OneStep::from_equal_start(&s.model, &s.noise, &row, &s.sigma0)
                        .map_err(numerical("analysis", "OneStep::from_equal_start"))?;
                    let ts = decompose_ts(&step).map_err(numerical("analysis", "decompose_ts"))?;
                    let opts = ClassifyOptions {
                        at_limit: Some(l) == surrogate,
                        ..ClassifyOptions::default()
                    };
                    let relations =
                        classify_relation(&step, &s.noise, n_sensors, opts).map_err(numerical("analysis", "classify_relation"))?;
                    Ok(OneStepRow {
                        r_ts: ts.r_ts,
                        sigma_t_tilde: ts.sigma_t_tilde,
                        step,
                        relations,
                    })
                })
                .collect()
        })
        .collect()
}

/// Runs every requested analysis and returns `(file name, body)` pairs in
/// output order together with the manifest.
pub fn render(s: &Scenario, config: &[u8], seed: Option<u64>) -> Result<(Vec<(String, Vec<u8>)>, Manifest), CliError> {
    let sweep = &s.file.sweep;
    let surrogate = if sweep.include_surrogate {
        Some(surrogate_fusion_step(&s.consensus, SURROGATE_TOL, SURROGATE_MAX).map_err(numerical("network", "surrogate_fusion_step"))?)
    } else {
        None
    };
    let mut ls = sweep.l_list.clone();
    if let Some(m) = surrogate {
        if !ls.contains(&m) {
            ls.push(m);
        }
    }
    let mut outputs = Vec::new();

    let wants_one_step = s.runs(Analysis::IndicesVsL) || s.runs(Analysis::Phi) || s.runs(Analysis::Relations);
    if wants_one_step {
        let table = one_step_sweep(s, &ls, surrogate)?;
        if s.runs(Analysis::IndicesVsL) {
            let mut w = Long::new();
            for (&l, rows) in ls.iter().zip(&table) {
                for (i, r) in rows.iter().enumerate() {
                    let t = &r.step.next;
                    let k = Some(1);
                    w.push(i, l, k, "tr_sigma", t.sigma.trace());
                    w.push(i, l, k, "tr_sigma_f", t.sigma_f.trace());
                    w.push(i, l, k, "tr_sigma_t", t.sigma_t.trace());
                    w.push(i, l, k, "tr_sigma_t_tilde", r.sigma_t_tilde.trace());
                    w.push(i, l, k, "tr_r_ts", r.r_ts.trace());
                    w.push(i, l, k, "lmin_sigma_t_minus_sigma", lmin(&t.sigma_t, &t.sigma));
                    w.push(i, l, k, "lmin_sigma_f_minus_sigma", lmin(&t.sigma_f, &t.sigma));
                    w.push(i, l, k, "lmin_sigma_f_minus_sigma_t", lmin(&t.sigma_f, &t.sigma_t));
                }
            }
            outputs.push(("indices_vs_L.csv".to_string(), w.finish()));
        }
        if s.runs(Analysis::Phi) {
            let mut w = Long::new();
            for (&l, rows) in ls.iter().zip(&table) {
                for (i, r) in rows.iter().enumerate() {
                    let p = &r.step.phi;
                    w.push(i, l, None, "tr_phi", p.phi.trace());
                    w.push(i, l, None, "tr_phi_f", p.phi_f.trace());
                    w.push(i, l, None, "tr_phi_t", p.phi_t.trace());
                    w.push(i, l, None, "tr_phi_ts", p.phi_ts.trace());
                    w.push(i, l, None, "tr_phi_bar_tf", p.phi_bar_tf.trace());
                    w.push(i, l, None, "lmin_phi_ts", p.phi_ts.min_eigenvalue());
                    w.push(i, l, None, "phi_split_residual", p.phi_split_residual);
                }
            }
            outputs.push(("phi.csv".to_string(), w.finish()));
        }
        if s.runs(Analysis::Relations) {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "sensor",
                "L",
                "k",
                "theorem",
                "asserted",
                "holds",
                "predicted",
                "epsilon_L",
                "failed_preconditions",
            ])
            .expect("in-memory write");
            for (&l, rows) in ls.iter().zip(&table) {
                for (i, r) in rows.iter().enumerate() {
                    for rep in &r.relations {
                        let failed: Vec<&str> = rep.preconditions.iter().filter(|p| !p.pass).map(|p| p.name.as_ref()).collect();
                        w.write_record([
                            (i + 1).to_string(),
                            l.to_string(),
                            "1".to_string(),
                            rep.theorem.name().to_string(),
                            rep.asserted.to_string(),
                            rep.holds.to_string(),
                            rep.predicted.clone(),
                            rep.epsilon_l.to_string(),
                            failed.join(";"),
                        ])
                        .expect("in-memory write");
                    }
                }
            }
            outputs.push(("relations.csv".to_string(), w.into_inner().expect("in-memory flush")));
        }
    }

    if s.runs(Analysis::IndicesVsK) {
        let runs: Vec<_> = ls
            .par_iter()
            .map(|&l| {
                let prop =
                    IndexPropagator::new(&s.model, &s.noise, &s.consensus, l).map_err(numerical("filter", "IndexPropagator::new"))?;
                prop.run(&s.sigma0, sweep.horizon)
                    .map(|(t, _)| t)
                    .map_err(numerical("filter", "IndexPropagator::run"))
            })
            .collect::<Result<_, CliError>>()?;
        let mut w = Long::new();
        for (&l, traj) in ls.iter().zip(&runs) {
            for (k, step) in traj.iter().enumerate() {
                for (i, t) in step.iter().enumerate() {
                    let k = Some(k);
                    w.push(i, l, k, "tr_sigma", t.sigma.trace());
                    w.push(i, l, k, "tr_sigma_f", t.sigma_f.trace());
                    w.push(i, l, k, "tr_sigma_t", t.sigma_t.trace());
                    w.push(i, l, k, "lmin_sigma_t_minus_sigma", lmin(&t.sigma_t, &t.sigma));
                    w.push(i, l, k, "lmin_sigma_f_minus_sigma", lmin(&t.sigma_f, &t.sigma));
                    w.push(i, l, k, "lmin_sigma_f_minus_sigma_t", lmin(&t.sigma_f, &t.sigma_t));
                }
            }
        }
        outputs.push(("indices_vs_k.csv".to_string(), w.finish()));
    }

    if s.runs(Analysis::Recursive) {
        let runs: Vec<_> = ls
            .par_iter()
            .map(|&l| {
                recursive_relation_check(&s.model, &s.noise, &s.consensus, l, &s.sigma0, sweep.horizon)
                    .map_err(numerical("analysis", "recursive_relation_check"))
            })
            .collect::<Result<_, CliError>>()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sensor", "L", "k", "bundle", "holds"]).expect("in-memory write");
        for (&l, steps) in ls.iter().zip(&runs) {
            for st in steps {
                let bundle = match st.bundle {
                    Some(Bundle::One) => "1",
                    Some(Bundle::Two) => "2",
                    None => "",
                };
                w.write_record([
                    (st.sensor + 1).to_string(),
                    l.to_string(),
                    st.k.to_string(),
                    bundle.to_string(),
                    st.holds.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        outputs.push(("recursive.csv".to_string(), w.into_inner().expect("in-memory flush")));
    }

    if s.runs(Analysis::SteadyState) {
        let mut all: Vec<SteadyState> = Vec::new();
        for &l in &ls {
            all.extend(
                steady_states(&s.model, &s.noise, &s.consensus, l, &s.sigma0, IterOptions::default())
                    .map_err(numerical("steady_state", "steady_states"))?,
            );
        }
        let mut body = Vec::new();
        write_steady_csv(&all, &mut body).map_err(numerical("steady_state", "write_steady_csv"))?;
        outputs.push(("steady_state.csv".to_string(), body));
    }

    let mut mc_pass = None;
    let mc = s.mc_config(seed);
    if s.runs(Analysis::MonteCarlo) {
        let (cfg, l) = mc.expect("validated: mc section present");
        let rep = run_monte_carlo(&s.model, &s.noise, &s.consensus, l, &s.xhat0, &s.sigma0, cfg)
            .map_err(numerical("montecarlo", "run_monte_carlo"))?;
        let mut body = Vec::new();
        rep.write_csv(&mut body).map_err(numerical("montecarlo", "write_csv"))?;
        outputs.push(("monte_carlo.csv".to_string(), body));
        mc_pass = Some(rep.pass);
    }

    let manifest = Manifest {
        scenario: s.file.name.clone(),
        config_sha256: sha256_hex(config),
        seed: mc.map(|(c, _)| c.seed).unwrap_or_else(|| seed.unwrap_or(s.file.seed)),
        fusion_steps: ls,
        surrogate_fusion_step: surrogate,
        analyses: sweep.analyses.clone(),
        monte_carlo_pass: mc_pass,
        versions: Versions {
            cmdf_cli: env!("CARGO_PKG_VERSION"),
            cmdf_core: cmdf_core::VERSION,
            manifest_format: MANIFEST_FORMAT,
        },
        outputs: outputs
            .iter()
            .map(|(name, body)| OutputFile {
                file: name.clone(),
                sha256: sha256_hex(body),
                bytes: body.len(),
            })
            .collect(),
    };
    Ok((outputs, manifest))
}
