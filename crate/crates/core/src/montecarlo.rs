//! Monte-Carlo check that the true-covariance recursion is the actual error
//! second moment of the nominal filter.
//!
//! Runs draw noise with the actual covariances while the filter uses the
//! nominal ones. Each run owns an RNG stream derived from `(seed, run)`, and
//! runs are accumulated in fixed blocks reduced in block order, so results do
//! not depend on the thread count.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{simulate_with, Cmdf, IndexPropagator, NoiseSamplers};
use crate::linalg::{Matrix, SymMatrix, Vector};
use crate::model::{NoiseSpec, SystemModel};
use crate::network::ConsensusMatrix;
use crate::stats::{linear_fit, LinearFit};

pub const MIN_RUNS: usize = 100;
const BLOCK: usize = 4096;
/// Floor of the relative-error tolerance.
pub const TOLERANCE_FLOOR: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McConfig {
    pub n_runs: usize,
    pub horizon: usize,
    pub seed: u64,
    pub ci_level: f64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs < MIN_RUNS {
            return Err(Error::InvalidArgument(format!(
                "n_runs must be at least {MIN_RUNS}, got {}",
                self.n_runs
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McCell {
    pub k: usize,
    pub sensor: usize,
    /// `(1/n) Σ e eᵀ`.
    pub empirical: SymMatrix,
    pub analytic: SymMatrix,
    pub mean: Vector,
    /// `‖empirical − analytic‖_F / ‖analytic‖_F`.
    pub rel_error: f64,
    /// Gaussian standard error of `rel_error`.
    pub expected_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Every mean component within four standard errors of zero.
    pub mean_ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McReport {
    pub config: McConfig,
    pub fusion_steps: usize,
    pub cells: Vec<McCell>,
    pub pass: bool,
}

impl McReport {
    pub fn max_rel_error(&self) -> f64 {
        self.cells.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn cells_at(&self, k: usize) -> impl Iterator<Item = &McCell> {
        self.cells.iter().filter(move |c| c.k == k)
    }

    /// CSV with the seed and run count in a leading comment line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# seed={} n_runs={} horizon={} L={}",
            self.config.seed, self.config.n_runs, self.config.horizon, self.fusion_steps
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k",
            "sensor",
            "tr_empirical",
            "tr_analytic",
            "rel_error",
            "expected_error",
            "tolerance",
            "pass",
            "mean_ok",
        ])?;
        for c in &self.cells {
            w.write_record(&[
                c.k.to_string(),
                (c.sensor + 1).to_string(),
                c.empirical.trace().to_string(),
                c.analytic.trace().to_string(),
                c.rel_error.to_string(),
                c.expected_error.to_string(),
                c.tolerance.to_string(),
                c.pass.to_string(),
                c.mean_ok.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Flat sums of `e` and `e eᵀ` per `(k, sensor)`.
#[derive(Clone)]
struct Accumulator {
    n: usize,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Accumulator {
    fn new(cells: usize, n: usize) -> Self {
        Accumulator {
            n,
            first: vec![0.0; cells * n],
            second: vec![0.0; cells * n * n],
        }
    }

    fn add(&mut self, cell: usize, e: &Vector) {
        let n = self.n;
        for a in 0..n {
            self.first[cell * n + a] += e[a];
            for b in 0..n {
                self.second[cell * n * n + b * n + a] += e[a] * e[b];
            }
        }
    }

    fn merge(&mut self, o: &Accumulator) {
        self.first.iter_mut().zip(&o.first).for_each(|(a, b)| *a += b);
        self.second.iter_mut().zip(&o.second).for_each(|(a, b)| *a += b);
    }
}

/// Counter-based per-run generator.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

/// `sqrt(((tr Σ)² + ‖Σ‖²_F) / n) / ‖Σ‖_F`, the Gaussian standard error of
/// the relative Frobenius error of a second-moment estimate.
pub fn expected_relative_error(sigma: &SymMatrix, n_runs: usize) -> f64 {
    let fro = sigma.frobenius();
    let tr = sigma.trace();
    ((tr * tr + fro * fro) / n_runs as f64).sqrt() / fro
}

pub fn run_monte_carlo(
    model: &SystemModel,
    noise: &NoiseSpec,
    consensus: &ConsensusMatrix,
    fusion_steps: usize,
    xhat0: &Vector,
    sigma0: &SymMatrix,
    cfg: McConfig,
) -> Result<McReport> {
    cfg.validate()?;
    let n = model.n();
    let ns = model.n_sensors();
    if xhat0.len() != n {
        return Err(Error::DimensionMismatch {
            op: "Monte Carlo: initial estimate",
            expected: (n, 1),
            found: (xhat0.len(), 1),
        });
    }
    let cmdf = Cmdf::new(model, noise, consensus, fusion_steps)?;
    let schedule = cmdf.schedule(sigma0, cfg.horizon)?;
    let samplers = NoiseSamplers::new(model, noise, sigma0)?;
    let (analytic, _) = IndexPropagator::new(model, noise, consensus, fusion_steps)?.run(sigma0, cfg.horizon)?;
    let cells = cfg.horizon * ns;

    let n_blocks = cfg.n_runs.div_ceil(BLOCK);
    let blocks: Vec<Accumulator> = (0..n_blocks)
        .into_par_iter()
        .map(|b| -> Result<Accumulator> {
            let mut acc = Accumulator::new(cells, n);
            for run in b * BLOCK..((b + 1) * BLOCK).min(cfg.n_runs) {
                let mut rng = run_rng(cfg.seed, run as u64);
                let truth = simulate_with(model, &samplers, xhat0, cfg.horizon, &mut rng);
                let mut xhat = vec![xhat0.clone(); ns];
                for k in 1..=cfg.horizon {
                    xhat = cmdf.step_scheduled(&schedule[k - 1], &xhat, &truth.measurements[k - 1])?;
                    for (i, x) in xhat.iter().enumerate() {
                        let e = &truth.states[k] - x;
                        if !e.iter().all(|v| v.is_finite()) {
                            return Err(Error::NonFinite { run });
                        }
                        acc.add((k - 1) * ns + i, &e);
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = Accumulator::new(cells, n);
    for b in &blocks {
        total.merge(b);
    }

    let nr = cfg.n_runs as f64;
    let mut out = Vec::with_capacity(cells);
    for k in 1..=cfg.horizon {
        for i in 0..ns {
            let c = (k - 1) * ns + i;
            let mean = Vector::from_column_slice(&total.first[c * n..(c + 1) * n]) / nr;
            let empirical = SymMatrix::from_square(Matrix::from_column_slice(n, n, &total.second[c * n * n..(c + 1) * n * n]) / nr);
            let sigma_t = analytic[k][i].sigma_t.clone();
            let rel_error = (empirical.matrix() - sigma_t.matrix()).norm() / sigma_t.frobenius();
            let expected_error = expected_relative_error(&sigma_t, cfg.n_runs);
            let tolerance = (3.0 * expected_error).max(TOLERANCE_FLOOR);
            let mean_ok = (0..n).all(|a| mean[a].abs() <= 4.0 * (empirical[(a, a)] / nr).sqrt());
            out.push(McCell {
                k,
                sensor: i,
                pass: rel_error <= tolerance,
                empirical,
                analytic: sigma_t,
                mean,
                rel_error,
                expected_error,
                tolerance,
                mean_ok,
            });
        }
    }
    Ok(McReport {
        config: cfg,
        fusion_steps,
        pass: out.iter().all(|c| c.pass && c.mean_ok),
        cells: out,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeReport {
    pub n_runs: Vec<usize>,
    /// Root-mean-square of the worst relative error over replicates.
    pub rms_errors: Vec<f64>,
    /// Fit of `log10(rms error)` against `log10(n_runs)`.
    pub fit: Option<LinearFit>,
}

/// Sampling-rate check: repeats the simulation with independent seeds
/// `seed + r` for every run count.
#[allow(clippy::too_many_arguments)]
pub fn sampling_slope(
    model: &SystemModel,
    noise: &NoiseSpec,
    consensus: &ConsensusMatrix,
    fusion_steps: usize,
    xhat0: &Vector,
    sigma0: &SymMatrix,
    base: McConfig,
    n_list: &[usize],
    replicates: usize,
) -> Result<SlopeReport> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let mut rms_errors = Vec::with_capacity(n_list.len());
    for &n_runs in n_list {
        let mut sq = 0.0;
        for r in 0..replicates {
            let cfg = McConfig {
                n_runs,
                seed: base.seed.wrapping_add(r as u64),
                ..base
            };
            let e = run_monte_carlo(model, noise, consensus, fusion_steps, xhat0, sigma0, cfg)?.max_rel_error();
            sq += e * e;
        }
        rms_errors.push((sq / replicates as f64).sqrt());
    }
    let x: Vec<f64> = n_list.iter().map(|&n| (n as f64).log10()).collect();
    let y: Vec<f64> = rms_errors.iter().map(|e| e.log10()).collect();
    Ok(SlopeReport {
        n_runs: n_list.to_vec(),
        fit: linear_fit(&x, &y),
        rms_errors,
    })
}
