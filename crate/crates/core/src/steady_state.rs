//! Steady-state nominal index (DARE), steady-state true error covariance
//! (DLE) and the trace bounds relating them.
//!
//! The steady-state trace quantities are prior (one-step-predicted) matrices.
//! Posteriors are derived from them and reported alongside.

use std::io::Write;

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::IndexPropagator;
use crate::linalg::{
    frobenius_inner, lyapunov_residual, rel_diff, solve, solve_discrete_lyapunov, spectral_radius, unvec, vec, LyapunovSide, Matrix,
    SymMatrix, Vector,
};
use crate::model::{build_stacked, NoiseSpec, StackedOperators, SystemModel};
use crate::network::{consensus_power, ConsensusMatrix};

pub const DEFAULT_MAX_ITER: usize = 1_000_000;
pub const DEFAULT_TOL: f64 = 1e-12;
/// PBH threshold on the smallest singular value.
pub const PBH_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IterOptions {
    fn default() -> Self {
        IterOptions {
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Detectability {
    pub detectable: bool,
    pub stabilizable: bool,
    /// Smallest singular value of `[F − λI; H̃]` over modes with `|λ| ≥ 1 − 1e-8`.
    pub min_sv_observability: f64,
    /// Smallest singular value of `[F − λI, D]` with `Qu = DDᵀ`.
    pub min_sv_controllability: f64,
    pub marginal_modes: usize,
}

fn complex(m: &Matrix) -> DMatrix<Complex<f64>> {
    m.map(|v| Complex::new(v, 0.0))
}

fn min_sv(m: DMatrix<Complex<f64>>) -> f64 {
    m.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// PBH-style test of `(F, H̃)` detectability and, when `qu` is given,
/// stabilizability of `(F, D)`.
pub fn check_detectability(f: &Matrix, htilde: &Matrix, qu: Option<&SymMatrix>) -> Detectability {
    let n = f.nrows();
    let eig = f.complex_eigenvalues();
    let d = qu.and_then(|q| q.matrix().clone().cholesky().map(|c| c.l()));
    let mut obs = f64::INFINITY;
    let mut ctrl = f64::INFINITY;
    let mut marginal = 0;
    for lambda in eig.iter().filter(|l| l.norm() >= 1.0 - 1e-8) {
        marginal += 1;
        let shifted = complex(f) - DMatrix::<Complex<f64>>::identity(n, n) * *lambda;
        let mut tall = DMatrix::zeros(n + htilde.nrows(), n);
        tall.view_mut((0, 0), (n, n)).copy_from(&shifted);
        tall.view_mut((n, 0), (htilde.nrows(), n)).copy_from(&complex(htilde));
        obs = obs.min(min_sv(tall));
        if let Some(d) = &d {
            let mut wide = DMatrix::zeros(n, n + d.ncols());
            wide.view_mut((0, 0), (n, n)).copy_from(&shifted);
            wide.view_mut((0, n), (n, d.ncols())).copy_from(&complex(d));
            ctrl = ctrl.min(min_sv(wide));
        }
    }
    Detectability {
        detectable: obs > PBH_THRESHOLD,
        stabilizable: qu.is_none() || (d.is_some() && ctrl > PBH_THRESHOLD),
        min_sv_observability: obs,
        min_sv_controllability: ctrl,
        marginal_modes: marginal,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DareSolution {
    /// Prior `Σ̄f`.
    pub sigma_f_bar: SymMatrix,
    /// Posterior `Σf = (Σ̄f⁻¹ + Φf)⁻¹`.
    pub sigma_f: SymMatrix,
    pub gain: Matrix,
    /// `F (I − K H̃)`.
    pub fbar: Matrix,
    pub iterations: usize,
    /// `‖Σ̄f − F Σf Fᵀ − Qu‖ / ‖Σ̄f‖`.
    pub residual: f64,
    pub spectral_radius: f64,
}

fn posterior(prior: &SymMatrix, info: &SymMatrix) -> Result<SymMatrix> {
    (&prior.inverse("steady state: prior")? + info).inverse("steady state: information")
}

/// Fixed-point iteration of the nominal prior recursion from `F Σ0 Fᵀ + Qu`.
pub fn solve_dare(
    model: &SystemModel,
    noise: &NoiseSpec,
    stacked: &StackedOperators,
    sigma0: &SymMatrix,
    opts: IterOptions,
) -> Result<DareSolution> {
    let f = model.f();
    let h = &stacked.htilde;
    let ru_inv_h = stacked.rtilde_u.solve(h, "DARE: R̃u")?;
    let info = SymMatrix::from_square(h.transpose() * &ru_inv_h);
    let mut prior = &sigma0.congruence(f) + noise.qu();
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let next = &posterior(&prior, &info)?.congruence(f) + noise.qu();
        iterations += 1;
        step = (next.matrix() - prior.matrix()).norm();
        let converged = step < opts.tol * (1.0 + prior.frobenius());
        prior = next;
        if converged {
            break;
        }
    }
    if !(step < opts.tol * (1.0 + prior.frobenius())) {
        return Err(Error::NoConvergence {
            what: "DARE",
            iterations,
            last_step: step,
            detectable: check_detectability(f, h, Some(noise.qu())).detectable,
        });
    }
    let post = posterior(&prior, &info)?;
    let gain = post.matrix() * ru_inv_h.transpose();
    let n = model.n();
    let fbar = f * (Matrix::identity(n, n) - &gain * h);
    let rho = spectral_radius(&fbar);
    if !(rho < 1.0) {
        return Err(Error::NotSchurStable { spectral_radius: rho });
    }
    let mapped = &post.congruence(f) + noise.qu();
    Ok(DareSolution {
        residual: (prior.matrix() - mapped.matrix()).norm() / prior.frobenius().max(f64::MIN_POSITIVE),
        sigma_f_bar: prior,
        sigma_f: post,
        gain,
        fbar,
        iterations,
        spectral_radius: rho,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DleSolution {
    /// Prior `Σ̄t` from the fixed-point iteration.
    pub sigma_t_bar: SymMatrix,
    /// Prior `Σ̄t` from the vectorized closed form.
    pub sigma_t_bar_kron: SymMatrix,
    /// Posterior `(I − KH̃) Σ̄t (I − KH̃)ᵀ + K R̄ Kᵀ`.
    pub sigma_t: SymMatrix,
    pub iterations: usize,
    pub route_gap: f64,
    pub residual: f64,
}

/// `Σ̄t = F̄ Σ̄t F̄ᵀ + F K R̄ Kᵀ Fᵀ + Q`, solved by iteration and by
/// `vec(Σ̄t) = T⁻¹ ((FΣf)⊗(FΣf) vec(Φt) + vec(Q))` with `T = I − F̄⊗F̄`.
pub fn solve_dle(
    model: &SystemModel,
    noise: &NoiseSpec,
    stacked: &StackedOperators,
    dare: &DareSolution,
    opts: IterOptions,
) -> Result<DleSolution> {
    let f = model.f();
    let n = model.n();
    let fbar = &dare.fbar;
    let rho = spectral_radius(fbar);
    if !(rho < 1.0) {
        return Err(Error::NotSchurStable { spectral_radius: rho });
    }
    let k = &dare.gain;
    let g = &stacked.rbar.congruence(&(f * k)) + noise.q();
    let mut x = dare.sigma_f_bar.clone();
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let next = &SymMatrix::from_square(fbar * x.matrix() * fbar.transpose()) + &g;
        iterations += 1;
        step = (next.matrix() - x.matrix()).norm();
        let converged = step < opts.tol * (1.0 + x.frobenius());
        x = next;
        if converged {
            break;
        }
    }
    if !(step < opts.tol * (1.0 + x.frobenius())) {
        return Err(Error::NoConvergence {
            what: "DLE",
            iterations,
            last_step: step,
            detectable: check_detectability(f, &stacked.htilde, Some(noise.qu())).detectable,
        });
    }
    let fs = f * dare.sigma_f.matrix();
    let ru_inv_h = stacked.rtilde_u.solve(&stacked.htilde, "DLE: R̃u")?;
    let phi_t = ru_inv_h.transpose() * stacked.rbar.matrix() * &ru_inv_h;
    let t = Matrix::identity(n * n, n * n) - fbar.kronecker(fbar);
    let rhs = fs.kronecker(&fs) * vec(&phi_t) + vec(noise.q().matrix());
    let rhs = Matrix::from_column_slice(n * n, 1, rhs.as_slice());
    let sol = solve(&t, &rhs, "DLE: I − F̄⊗F̄")?;
    let kron = SymMatrix::from_square(Matrix::from_column_slice(n, n, sol.as_slice()));
    let ikh = Matrix::identity(n, n) - k * &stacked.htilde;
    let sigma_t = &x.congruence(&ikh) + &stacked.rbar.congruence(k);
    Ok(DleSolution {
        route_gap: rel_diff(x.matrix(), kron.matrix()),
        residual: lyapunov_residual(fbar, &g, &x, LyapunovSide::Direct) / x.frobenius().max(f64::MIN_POSITIVE),
        sigma_t_bar: x,
        sigma_t_bar_kron: kron,
        sigma_t,
        iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceBound {
    pub tr_sigma_f_bar: f64,
    pub tr_sigma_t_bar: f64,
    pub tr_sigma_f: f64,
    pub tr_sigma_t: f64,
    pub lower: f64,
    pub upper: f64,
    /// Norm bound on `ρ^b` using `|l̄|`.
    pub rho_l: f64,
    /// Same bound with signed `l̄` in the consensus term.
    pub rho_l_signed: f64,
    pub consensus_term: f64,
    pub dr_term: f64,
    pub dq_term: f64,
    /// Signed `Tr(Σ̄t) − Tr(Σ̄f)` from the inner-product identity.
    pub rho_b: f64,
    pub identity_residual: f64,
    pub dr_bar_norm: f64,
    /// `‖vec(P)ᵀ − vec(I)ᵀ T⁻¹‖`, relative.
    pub p_vec_residual: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceTerms {
    pub p: SymMatrix,
    /// `Σf Fᵀ P F Σf`.
    pub sf: SymMatrix,
    pub bound: TraceBound,
}

pub fn trace_bound(
    model: &SystemModel,
    noise: &NoiseSpec,
    stacked: &StackedOperators,
    dare: &DareSolution,
    dle: &DleSolution,
) -> Result<TraceTerms> {
    let f = model.f();
    let n = model.n();
    let ns = model.n_sensors() as f64;
    let fbar = &dare.fbar;
    let p = solve_discrete_lyapunov(fbar, &SymMatrix::identity(n), LyapunovSide::Transposed)?;
    let t = Matrix::identity(n * n, n * n) - fbar.kronecker(fbar);
    let vec_i = Matrix::from_column_slice(1, n * n, vec(&Matrix::identity(n, n)).as_slice());
    let ti = solve(&t.transpose(), &vec_i.transpose(), "trace bound: T")?;
    let p_vec_residual = rel_diff(&unvec(&Vector::from_column_slice(ti.as_slice()), n, n), p.matrix());

    let sf = SymMatrix::from_square(dare.sigma_f.matrix() * f.transpose() * p.matrix() * f * dare.sigma_f.matrix());
    let mut consensus = 0.0;
    let mut consensus_abs = 0.0;
    let mut consensus_signed_bound = 0.0;
    for &j in &stacked.active {
        let nl = ns * stacked.row[j];
        let lbar = nl * (nl - 1.0);
        let kernel = noise.ru_inv(j).congruence(&model.h(j).transpose());
        consensus += lbar * frobenius_inner(sf.matrix(), kernel.matrix());
        consensus_abs += lbar.abs() * sf.frobenius() * kernel.frobenius();
        consensus_signed_bound += lbar * sf.frobenius() * kernel.frobenius();
    }
    let ru_inv = stacked.rtilde_u_inv(noise);
    let w = SymMatrix::from_square(ru_inv.matrix() * &stacked.htilde * sf.matrix() * stacked.htilde.transpose() * ru_inv.matrix());
    let dr_bar_norm = stacked.drbar.frobenius();
    let dq = noise.dq();
    let rho_b = consensus - frobenius_inner(w.matrix(), stacked.drbar.matrix()) - frobenius_inner(p.matrix(), dq.matrix());
    let dr_term = w.frobenius() * dr_bar_norm;
    let dq_term = p.frobenius() * dq.frobenius();
    let rho_l = consensus_abs + dr_term + dq_term;
    let tr_f = dare.sigma_f_bar.trace();
    let tr_t = dle.sigma_t_bar.trace();
    let lower = (tr_f - rho_l).max(0.0);
    let upper = tr_f + rho_l;
    let slack = 1e-9 * (1.0 + tr_f.abs());
    Ok(TraceTerms {
        bound: TraceBound {
            tr_sigma_f_bar: tr_f,
            tr_sigma_t_bar: tr_t,
            tr_sigma_f: dare.sigma_f.trace(),
            tr_sigma_t: dle.sigma_t.trace(),
            lower,
            upper,
            rho_l,
            rho_l_signed: consensus_signed_bound + dr_term + dq_term,
            consensus_term: consensus_abs,
            dr_term,
            dq_term,
            rho_b,
            identity_residual: (tr_t - tr_f - rho_b).abs() / (1.0 + tr_f.abs()),
            dr_bar_norm,
            p_vec_residual,
            holds: lower - slack <= tr_t && tr_t <= upper + slack,
        },
        p,
        sf,
    })
}

/// Full steady-state picture for one sensor at one fusion step.
#[derive(Clone, Debug, PartialEq)]
pub struct SteadyState {
    pub sensor: usize,
    pub fusion_steps: usize,
    pub dare: DareSolution,
    pub dle: DleSolution,
    pub terms: TraceTerms,
    pub detectability: Detectability,
}

pub fn steady_state_for_row(
    model: &SystemModel,
    noise: &NoiseSpec,
    row: &[f64],
    sigma0: &SymMatrix,
    opts: IterOptions,
) -> Result<(DareSolution, DleSolution, TraceTerms, Detectability)> {
    let stacked = build_stacked(model, noise, row)?;
    let detect = check_detectability(model.f(), &stacked.htilde, Some(noise.qu()));
    let dare = solve_dare(model, noise, &stacked, sigma0, opts)?;
    let dle = solve_dle(model, noise, &stacked, &dare, opts)?;
    let terms = trace_bound(model, noise, &stacked, &dare, &dle)?;
    Ok((dare, dle, terms, detect))
}

/// Steady states of every sensor, computed in parallel.
pub fn steady_states(
    model: &SystemModel,
    noise: &NoiseSpec,
    consensus: &ConsensusMatrix,
    fusion_steps: usize,
    sigma0: &SymMatrix,
    opts: IterOptions,
) -> Result<Vec<SteadyState>> {
    if fusion_steps == 0 {
        return Err(Error::InvalidArgument("fusion steps must be at least 1".into()));
    }
    let power = consensus_power(consensus, fusion_steps);
    (0..model.n_sensors())
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = power.row(i).iter().copied().collect();
            let (dare, dle, terms, detectability) = steady_state_for_row(model, noise, &row, sigma0, opts)?;
            Ok(SteadyState {
                sensor: i,
                fusion_steps,
                dare,
                dle,
                terms,
                detectability,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub horizon: usize,
    /// Worst relative gap between the iterated and steady nominal priors.
    pub nominal_gap: f64,
    /// Worst relative gap between the iterated and steady true priors.
    pub true_gap: f64,
}

/// Runs the time-varying recursions for `horizon` steps and compares the
/// final priors with the steady-state solutions.
pub fn check_convergence(
    propagator: &IndexPropagator,
    sigma0: &SymMatrix,
    horizon: usize,
    steady: &[SteadyState],
) -> Result<ConvergenceReport> {
    let (traj, _) = propagator.run(sigma0, horizon)?;
    let last = traj.last().expect("trajectory has at least the initial step");
    if steady.len() != last.len() {
        return Err(Error::InvalidArgument("steady states do not match the sensor count".into()));
    }
    let mut nominal_gap: f64 = 0.0;
    let mut true_gap: f64 = 0.0;
    for (t, s) in last.iter().zip(steady) {
        nominal_gap = nominal_gap.max(rel_diff(t.sigma_f_prior.matrix(), s.dare.sigma_f_bar.matrix()));
        true_gap = true_gap.max(rel_diff(t.sigma_t_prior.matrix(), s.dle.sigma_t_bar.matrix()));
    }
    Ok(ConvergenceReport {
        horizon,
        nominal_gap,
        true_gap,
    })
}

/// One CSV line per sensor and fusion step.
pub fn write_steady_csv<W: Write>(states: &[SteadyState], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sensor",
        "L",
        "tr_sigma_f_bar",
        "tr_sigma_t_bar",
        "tr_sigma_f",
        "tr_sigma_t",
        "lower",
        "upper",
        "rho_L",
        "rho_b",
        "iterations",
    ])?;
    for s in states {
        let b = &s.terms.bound;
        w.write_record(&[
            (s.sensor + 1).to_string(),
            s.fusion_steps.to_string(),
            b.tr_sigma_f_bar.to_string(),
            b.tr_sigma_t_bar.to_string(),
            b.tr_sigma_f.to_string(),
            b.tr_sigma_t.to_string(),
            b.lower.to_string(),
            b.upper.to_string(),
            b.rho_l.to_string(),
            b.rho_b.to_string(),
            s.dare.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
