//! The distributed filter and the three covariance recursions it induces:
//! the standard index Σ (filter run with actual covariances), the nominal
//! index Σf (what the filter computes with its nominal covariances) and the
//! true error covariance Σt of the nominal filter.

use std::io::Write;

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{joseph_form, optimal_gain, rel_diff, Matrix, SymMatrix, Vector};
use crate::model::{build_stacked, NoiseSpec, StackedOperators, SystemModel};
use crate::network::{consensus_power, ConsensusMatrix};

/// Covariance indices of one sensor at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexTriple {
    pub sigma: SymMatrix,
    pub sigma_f: SymMatrix,
    pub sigma_t: SymMatrix,
    pub sigma_prior: SymMatrix,
    pub sigma_f_prior: SymMatrix,
    pub sigma_t_prior: SymMatrix,
    /// Nominal gain of the last correction; `n × 0` before the first step.
    pub gain: Matrix,
}

impl IndexTriple {
    /// All three indices equal to `sigma0`.
    pub fn equal_start(sigma0: &SymMatrix) -> Self {
        IndexTriple {
            sigma: sigma0.clone(),
            sigma_f: sigma0.clone(),
            sigma_t: sigma0.clone(),
            sigma_prior: sigma0.clone(),
            sigma_f_prior: sigma0.clone(),
            sigma_t_prior: sigma0.clone(),
            gain: Matrix::zeros(sigma0.dim(), 0),
        }
    }

    /// Largest Frobenius gap between the three posterior indices.
    pub fn start_gap(&self) -> f64 {
        let a = (self.sigma.matrix() - self.sigma_f.matrix()).norm();
        let b = (self.sigma.matrix() - self.sigma_t.matrix()).norm();
        a.max(b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StandardStep {
    pub prior: SymMatrix,
    pub post: SymMatrix,
    /// Relative gap between the information and covariance forms.
    pub form_residual: f64,
}

/// `Σ⁻ = FΣFᵀ + Q`, `Σ = (Σ⁻⁻¹ + H̃ᵀR̃⁻¹H̃)⁻¹`.
pub fn standard_index_step(sigma_prev: &SymMatrix, f: &Matrix, q: &SymMatrix, stacked: &StackedOperators) -> Result<StandardStep> {
    let prior = &sigma_prev.congruence(f) + q;
    let h = &stacked.htilde;
    let info = SymMatrix::from_square(h.transpose() * stacked.rtilde.solve(h, "standard index: R̃")?);
    let post = (&prior.inverse("standard index: prior")? + &info).inverse("standard index: information")?;
    let s = SymMatrix::from_square(stacked.rtilde.matrix() + h * prior.matrix() * h.transpose());
    let ph = h * prior.matrix();
    let cov_form = prior.matrix() - ph.transpose() * s.solve(&ph, "standard index: innovation")?;
    let form_residual = rel_diff(post.matrix(), &cov_form);
    Ok(StandardStep {
        prior,
        post,
        form_residual,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NominalStep {
    pub prior: SymMatrix,
    pub post: SymMatrix,
    pub gain: Matrix,
    /// Gap between the two gain expressions.
    pub gain_residual: f64,
    /// Gap between `I − KH̃` and `Σf Σf⁻⁻¹`.
    pub ikh_residual: f64,
    /// Gap between the information form and the Joseph form.
    pub joseph_residual: f64,
}

/// Nominal index recursion, run with `Qu` and the stacked nominal `R̃u`.
pub fn nominal_index_step(sigma_f_prev: &SymMatrix, f: &Matrix, qu: &SymMatrix, stacked: &StackedOperators) -> Result<NominalStep> {
    let prior = &sigma_f_prev.congruence(f) + qu;
    let h = &stacked.htilde;
    let ru_inv_h = stacked.rtilde_u.solve(h, "nominal index: R̃u")?;
    let info = SymMatrix::from_square(h.transpose() * &ru_inv_h);
    let post = (&prior.inverse("nominal index: prior")? + &info).inverse("nominal index: information")?;
    let gain = post.matrix() * ru_inv_h.transpose();
    let gain_alt = optimal_gain(&prior, h, &stacked.rtilde_u)?;
    let n = prior.dim();
    let ikh = Matrix::identity(n, n) - &gain * h;
    let post_prior_inv = prior.solve(post.matrix(), "nominal index: prior")?.transpose();
    let joseph = joseph_form(&prior, h, &stacked.rtilde_u, &gain);
    Ok(NominalStep {
        gain_residual: rel_diff(&gain, &gain_alt),
        ikh_residual: (&ikh - post_prior_inv).norm() / ikh.norm().max(1.0),
        joseph_residual: rel_diff(post.matrix(), joseph.matrix()),
        prior,
        post,
        gain,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrueStep {
    pub prior: SymMatrix,
    pub post: SymMatrix,
    /// Gap between the Joseph and the sandwich forms.
    pub form_residual: f64,
}

/// True error covariance of the nominal filter, with actual `Q` and `R̄`.
pub fn true_covariance_step(
    sigma_t_prev: &SymMatrix,
    f: &Matrix,
    q: &SymMatrix,
    stacked: &StackedOperators,
    nominal: &NominalStep,
) -> Result<TrueStep> {
    let prior = &sigma_t_prev.congruence(f) + q;
    let k = &nominal.gain;
    if k.ncols() != stacked.htilde.nrows() || k.nrows() != prior.dim() {
        return Err(Error::DimensionMismatch {
            op: "true covariance: gain",
            expected: (prior.dim(), stacked.htilde.nrows()),
            found: k.shape(),
        });
    }
    let post = joseph_form(&prior, &stacked.htilde, &stacked.rbar, k);
    let a = nominal
        .prior
        .solve(nominal.post.matrix(), "true covariance: nominal prior")?
        .transpose();
    let w = stacked.rtilde_u.solve(&stacked.htilde, "true covariance: R̃u")?;
    let b = nominal.post.matrix() * w.transpose();
    let sandwich = &a * prior.matrix() * a.transpose() + &b * stacked.rbar.matrix() * b.transpose();
    Ok(TrueStep {
        form_residual: rel_diff(post.matrix(), &sandwich),
        prior,
        post,
    })
}

/// Largest form-consistency residual seen across a step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepResiduals {
    pub standard_form: f64,
    pub gain: f64,
    pub ikh: f64,
    pub joseph: f64,
    pub true_form: f64,
}

impl StepResiduals {
    pub fn max(&self) -> f64 {
        [self.standard_form, self.gain, self.ikh, self.joseph, self.true_form]
            .into_iter()
            .fold(0.0, f64::max)
    }

    fn absorb(&mut self, o: &StepResiduals) {
        self.standard_form = self.standard_form.max(o.standard_form);
        self.gain = self.gain.max(o.gain);
        self.ikh = self.ikh.max(o.ikh);
        self.joseph = self.joseph.max(o.joseph);
        self.true_form = self.true_form.max(o.true_form);
    }
}

/// One step of all three recursions for one sensor.
pub fn advance_indices(
    prev: &IndexTriple,
    model: &SystemModel,
    noise: &NoiseSpec,
    stacked: &StackedOperators,
) -> Result<(IndexTriple, StepResiduals)> {
    let f = model.f();
    let std = standard_index_step(&prev.sigma, f, noise.q(), stacked)?;
    let nom = nominal_index_step(&prev.sigma_f, f, noise.qu(), stacked)?;
    let tru = true_covariance_step(&prev.sigma_t, f, noise.q(), stacked, &nom)?;
    let residuals = StepResiduals {
        standard_form: std.form_residual,
        gain: nom.gain_residual,
        ikh: nom.ikh_residual,
        joseph: nom.joseph_residual,
        true_form: tru.form_residual,
    };
    Ok((
        IndexTriple {
            sigma: std.post,
            sigma_f: nom.post,
            sigma_t: tru.post,
            sigma_prior: std.prior,
            sigma_f_prior: nom.prior,
            sigma_t_prior: tru.prior,
            gain: nom.gain,
        },
        residuals,
    ))
}

/// Index recursions for every sensor at a fixed number of fusion steps.
#[derive(Clone, Debug)]
pub struct IndexPropagator {
    model: SystemModel,
    noise: NoiseSpec,
    fusion_steps: usize,
    power: Matrix,
    stacked: Vec<StackedOperators>,
}

impl IndexPropagator {
    pub fn new(model: &SystemModel, noise: &NoiseSpec, consensus: &ConsensusMatrix, fusion_steps: usize) -> Result<Self> {
        require_fusion_steps(fusion_steps)?;
        if consensus.n_sensors() != model.n_sensors() {
            return Err(Error::InvalidArgument(format!(
                "consensus matrix has {} sensors, model has {}",
                consensus.n_sensors(),
                model.n_sensors()
            )));
        }
        let power = consensus_power(consensus, fusion_steps);
        let stacked = (0..model.n_sensors())
            .map(|i| build_stacked(model, noise, &power.row(i).iter().copied().collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Ok(IndexPropagator {
            model: model.clone(),
            noise: noise.clone(),
            fusion_steps,
            power,
            stacked,
        })
    }

    pub fn fusion_steps(&self) -> usize {
        self.fusion_steps
    }

    /// `L^L`.
    pub fn power(&self) -> &Matrix {
        &self.power
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.power.row(i).iter().copied().collect()
    }

    pub fn stacked(&self, i: usize) -> &StackedOperators {
        &self.stacked[i]
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn step(&self, prev: &[IndexTriple]) -> Result<(Vec<IndexTriple>, StepResiduals)> {
        let mut worst = StepResiduals::default();
        let mut out = Vec::with_capacity(prev.len());
        for (p, s) in prev.iter().zip(&self.stacked) {
            let (t, r) = advance_indices(p, &self.model, &self.noise, s)?;
            worst.absorb(&r);
            out.push(t);
        }
        Ok((out, worst))
    }

    /// Trajectory `k = 0..=horizon` from an equal start.
    pub fn run(&self, sigma0: &SymMatrix, horizon: usize) -> Result<(Vec<Vec<IndexTriple>>, StepResiduals)> {
        let mut worst = StepResiduals::default();
        let mut traj = Vec::with_capacity(horizon + 1);
        traj.push(vec![IndexTriple::equal_start(sigma0); self.model.n_sensors()]);
        for _ in 0..horizon {
            let (next, r) = self.step(traj.last().expect("non-empty"))?;
            worst.absorb(&r);
            traj.push(next);
        }
        Ok((traj, worst))
    }
}

fn require_fusion_steps(l: usize) -> Result<()> {
    if l == 0 {
        return Err(Error::InvalidArgument("fusion steps must be at least 1".into()));
    }
    Ok(())
}

/// Estimates held by every sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub k: usize,
    pub xhat_prior: Vec<Vector>,
    pub xhat_post: Vec<Vector>,
    pub sigma_f_prior: Vec<SymMatrix>,
    pub sigma_f_post: Vec<SymMatrix>,
}

impl FilterState {
    pub fn initial(xhat0: &Vector, sigma0: &SymMatrix, n_sensors: usize) -> Self {
        FilterState {
            k: 0,
            xhat_prior: vec![xhat0.clone(); n_sensors],
            xhat_post: vec![xhat0.clone(); n_sensors],
            sigma_f_prior: vec![sigma0.clone(); n_sensors],
            sigma_f_post: vec![sigma0.clone(); n_sensors],
        }
    }
}

/// Data-independent part of the filter for one step and sensor:
/// `x⁺ = A x⁻ + Σf V^(L)` with `A = Σf (Σf⁻)⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleEntry {
    pub a: Matrix,
    pub sigma_f_post: Matrix,
}

/// The consensus-on-measurement filter, run with nominal covariances and
/// fusing only over communication links.
#[derive(Clone, Debug)]
pub struct Cmdf {
    model: SystemModel,
    noise: NoiseSpec,
    weights: Vec<Vec<(usize, f64)>>,
    fusion_steps: usize,
    /// `N Hᵢᵀ Ruᵢ⁻¹`.
    info_gain: Vec<Matrix>,
}

impl Cmdf {
    pub fn new(model: &SystemModel, noise: &NoiseSpec, consensus: &ConsensusMatrix, fusion_steps: usize) -> Result<Self> {
        require_fusion_steps(fusion_steps)?;
        let n_sensors = model.n_sensors();
        if consensus.n_sensors() != n_sensors {
            return Err(Error::InvalidArgument(format!(
                "consensus matrix has {} sensors, model has {n_sensors}",
                consensus.n_sensors()
            )));
        }
        let l = consensus.matrix();
        let weights = (0..n_sensors)
            .map(|i| (0..n_sensors).filter(|&j| l[(i, j)] != 0.0).map(|j| (j, l[(i, j)])).collect())
            .collect();
        let nf = n_sensors as f64;
        let info_gain = (0..n_sensors)
            .map(|j| model.h(j).transpose() * noise.ru_inv(j).matrix() * nf)
            .collect();
        Ok(Cmdf {
            model: model.clone(),
            noise: noise.clone(),
            weights,
            fusion_steps,
            info_gain,
        })
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn fusion_steps(&self) -> usize {
        self.fusion_steps
    }

    /// `L` weighted-sum sweeps over each sensor's neighborhood.
    pub fn fuse<T: Clone>(&self, init: Vec<T>, axpy: impl Fn(&mut T, f64, &T), zero: impl Fn() -> T) -> Vec<T> {
        let mut cur = init;
        for _ in 0..self.fusion_steps {
            cur = self
                .weights
                .iter()
                .map(|nbrs| {
                    let mut acc = zero();
                    for &(j, w) in nbrs {
                        axpy(&mut acc, w, &cur[j]);
                    }
                    acc
                })
                .collect();
        }
        cur
    }

    fn fuse_matrices(&self, init: Vec<Matrix>) -> Vec<Matrix> {
        let shape = init[0].shape();
        self.fuse(init, |acc, w, m| *acc += m * w, || Matrix::zeros(shape.0, shape.1))
    }

    fn fuse_vectors(&self, init: Vec<Vector>) -> Vec<Vector> {
        let n = init[0].len();
        self.fuse(init, |acc, w, v| acc.axpy(w, v, 1.0), || Vector::zeros(n))
    }

    /// Fused information matrices `U^(L)`.
    pub fn fused_information(&self) -> Vec<Matrix> {
        let u0 = (0..self.model.n_sensors()).map(|j| &self.info_gain[j] * self.model.h(j)).collect();
        self.fuse_matrices(u0)
    }

    /// Fused information vectors `V^(L)`.
    pub fn fused_measurements(&self, y: &[Vector]) -> Result<Vec<Vector>> {
        if y.len() != self.model.n_sensors() {
            return Err(Error::InvalidArgument(format!(
                "{} measurements for {} sensors",
                y.len(),
                self.model.n_sensors()
            )));
        }
        let v0 = y
            .iter()
            .zip(&self.info_gain)
            .map(|(yj, g)| {
                if yj.len() != g.ncols() {
                    return Err(Error::DimensionMismatch {
                        op: "measurement",
                        expected: (g.ncols(), 1),
                        found: (yj.len(), 1),
                    });
                }
                Ok(g * yj)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.fuse_vectors(v0))
    }

    /// One prediction, fusion and correction for every sensor.
    pub fn step(&self, state: &FilterState, y: &[Vector]) -> Result<FilterState> {
        let f = self.model.f();
        let u = self.fused_information();
        let v = self.fused_measurements(y)?;
        let n_sensors = self.model.n_sensors();
        let mut next = FilterState {
            k: state.k + 1,
            xhat_prior: Vec::with_capacity(n_sensors),
            xhat_post: Vec::with_capacity(n_sensors),
            sigma_f_prior: Vec::with_capacity(n_sensors),
            sigma_f_post: Vec::with_capacity(n_sensors),
        };
        for i in 0..n_sensors {
            let x_prior = f * &state.xhat_post[i];
            let p_prior = &state.sigma_f_post[i].congruence(f) + self.noise.qu();
            let p_prior_inv = p_prior.inverse("filter: prior covariance")?;
            let p_post = SymMatrix::from_square(p_prior_inv.matrix() + &u[i]).inverse("filter: information matrix")?;
            let x_post = p_post.matrix() * (p_prior_inv.matrix() * &x_prior + &v[i]);
            next.xhat_prior.push(x_prior);
            next.xhat_post.push(x_post);
            next.sigma_f_prior.push(p_prior);
            next.sigma_f_post.push(p_post);
        }
        Ok(next)
    }

    /// Precomputes the data-independent coefficients for `k = 1..=horizon`.
    pub fn schedule(&self, sigma0: &SymMatrix, horizon: usize) -> Result<Vec<Vec<ScheduleEntry>>> {
        let f = self.model.f();
        let u = self.fused_information();
        let mut p = vec![sigma0.clone(); self.model.n_sensors()];
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let mut row = Vec::with_capacity(p.len());
            for (i, pi) in p.iter_mut().enumerate() {
                let prior = &pi.congruence(f) + self.noise.qu();
                let prior_inv = prior.inverse("filter: prior covariance")?;
                let post = SymMatrix::from_square(prior_inv.matrix() + &u[i]).inverse("filter: information matrix")?;
                row.push(ScheduleEntry {
                    a: post.matrix() * prior_inv.matrix(),
                    sigma_f_post: post.matrix().clone(),
                });
                *pi = post;
            }
            out.push(row);
        }
        Ok(out)
    }

    /// Estimate update using a precomputed schedule entry per sensor.
    pub fn step_scheduled(&self, entries: &[ScheduleEntry], xhat_post: &[Vector], y: &[Vector]) -> Result<Vec<Vector>> {
        let f = self.model.f();
        let v = self.fused_measurements(y)?;
        Ok(entries
            .iter()
            .zip(xhat_post)
            .zip(&v)
            .map(|((e, x), vi)| &e.a * (f * x) + &e.sigma_f_post * vi)
            .collect())
    }
}

/// Lower Cholesky factor used to draw `N(0, Σ)` samples.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    factor: Matrix,
}

impl GaussianSampler {
    pub fn new(cov: &SymMatrix, what: &str) -> Result<Self> {
        let chol = Cholesky::new(cov.matrix().clone()).ok_or_else(|| Error::NotPositiveDefinite {
            what: what.to_string(),
            min_eigenvalue: cov.min_eigenvalue(),
        })?;
        Ok(GaussianSampler { factor: chol.l() })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let z = Vector::from_fn(self.dim(), |_, _| rng.sample(StandardNormal));
        &self.factor * z
    }
}

/// Samplers for every noise source of a model under the actual covariances.
#[derive(Clone, Debug)]
pub struct NoiseSamplers {
    pub initial: GaussianSampler,
    pub process: GaussianSampler,
    pub measurement: Vec<GaussianSampler>,
}

impl NoiseSamplers {
    pub fn new(model: &SystemModel, noise: &NoiseSpec, sigma0: &SymMatrix) -> Result<Self> {
        Ok(NoiseSamplers {
            initial: GaussianSampler::new(sigma0, "initial covariance")?,
            process: GaussianSampler::new(noise.q(), "Q")?,
            measurement: (0..model.n_sensors())
                .map(|j| GaussianSampler::new(noise.r(j), &format!("R[{j}]")))
                .collect::<Result<_>>()?,
        })
    }
}

/// Simulated ground truth and its noise realizations.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    /// `x_0 … x_horizon`.
    pub states: Vec<Vector>,
    /// `w_0 … w_{horizon-1}`, with `x_{k+1} = F x_k + w_k`.
    pub process_noise: Vec<Vector>,
    /// Per step `k = 1..=horizon`, per sensor.
    pub measurement_noise: Vec<Vec<Vector>>,
    pub measurements: Vec<Vec<Vector>>,
}

/// Draws one trajectory with the actual covariances; `x_0 ~ N(x̂_0, Σ_0)`.
pub fn simulate_with<R: Rng + ?Sized>(model: &SystemModel, samplers: &NoiseSamplers, xhat0: &Vector, horizon: usize, rng: &mut R) -> Truth {
    let mut x = xhat0 + samplers.initial.sample(rng);
    let mut truth = Truth {
        states: vec![x.clone()],
        process_noise: Vec::with_capacity(horizon),
        measurement_noise: Vec::with_capacity(horizon),
        measurements: Vec::with_capacity(horizon),
    };
    for _ in 0..horizon {
        let w = samplers.process.sample(rng);
        x = model.f() * &x + &w;
        let v: Vec<Vector> = samplers.measurement.iter().map(|s| s.sample(rng)).collect();
        let y = v.iter().enumerate().map(|(j, vj)| model.h(j) * &x + vj).collect();
        truth.states.push(x.clone());
        truth.process_noise.push(w);
        truth.measurement_noise.push(v);
        truth.measurements.push(y);
    }
    truth
}

/// Full record of one simulated run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub rng_seed: u64,
    pub truth: Truth,
    /// Posterior estimates per step `k = 0..=horizon`, per sensor.
    pub estimates: Vec<Vec<Vector>>,
    /// Prior estimates per step `k = 1..=horizon`, per sensor.
    pub prior_estimates: Vec<Vec<Vector>>,
    /// Indices per step `k = 0..=horizon`, per sensor.
    pub indices: Vec<Vec<IndexTriple>>,
}

pub fn simulate_truth(
    model: &SystemModel,
    noise: &NoiseSpec,
    xhat0: &Vector,
    sigma0: &SymMatrix,
    horizon: usize,
    seed: u64,
) -> Result<Truth> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let samplers = NoiseSamplers::new(model, noise, sigma0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(simulate_with(model, &samplers, xhat0, horizon, &mut rng))
}

/// Simulates, filters and propagates the indices over one trajectory.
pub fn run_trajectory(
    cmdf: &Cmdf,
    propagator: &IndexPropagator,
    noise: &NoiseSpec,
    xhat0: &Vector,
    sigma0: &SymMatrix,
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let model = cmdf.model();
    let truth = simulate_truth(model, noise, xhat0, sigma0, horizon, seed)?;
    let (indices, _) = propagator.run(sigma0, horizon)?;
    let mut state = FilterState::initial(xhat0, sigma0, model.n_sensors());
    let mut estimates = vec![state.xhat_post.clone()];
    let mut prior_estimates = Vec::with_capacity(horizon);
    for y in &truth.measurements {
        state = cmdf.step(&state, y)?;
        estimates.push(state.xhat_post.clone());
        prior_estimates.push(state.xhat_prior.clone());
    }
    Ok(TrajectoryRecord {
        rng_seed: seed,
        truth,
        estimates,
        prior_estimates,
        indices,
    })
}

impl TrajectoryRecord {
    /// Largest deviation between the realized posterior error and the
    /// closed-form error recursion driven by the stored noises.
    pub fn error_recursion_residual(&self, propagator: &IndexPropagator) -> Result<f64> {
        let model = propagator.model();
        let mut worst: f64 = 0.0;
        for k in 1..self.estimates.len() {
            let x = &self.truth.states[k];
            for i in 0..model.n_sensors() {
                let t = &self.indices[k][i];
                let s = propagator.stacked(i);
                let e_prior = x - &self.prior_estimates[k - 1][i];
                let e_post = x - &self.estimates[k][i];
                let nu = Vector::from_iterator(
                    s.htilde.nrows(),
                    s.active
                        .iter()
                        .flat_map(|&j| self.truth.measurement_noise[k - 1][j].iter().copied()),
                );
                let a = t.sigma_f_prior.solve(t.sigma_f.matrix(), "error recursion")?.transpose();
                let w = s
                    .rtilde_u
                    .solve(&Matrix::from_column_slice(nu.len(), 1, nu.as_slice()), "error recursion")?;
                let predicted = a * e_prior - t.sigma_f.matrix() * s.htilde.transpose() * w;
                let scale = 1.0 + e_post.norm();
                worst = worst.max((predicted - e_post).norm() / scale);
            }
        }
        Ok(worst)
    }

    /// One row per `(k, sensor)`: index traces, estimate and truth.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.truth.states[0].len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "k".to_string(),
            "sensor".into(),
            "tr_sigma".into(),
            "tr_sigma_f".into(),
            "tr_sigma_t".into(),
        ];
        header.extend((0..n).map(|c| format!("xhat_{c}")));
        header.extend((0..n).map(|c| format!("x_{c}")));
        w.write_record(&header)?;
        for (k, (est, idx)) in self.estimates.iter().zip(&self.indices).enumerate() {
            for (i, (x, t)) in est.iter().zip(idx).enumerate() {
                let mut rec = vec![
                    k.to_string(),
                    (i + 1).to_string(),
                    t.sigma.trace().to_string(),
                    t.sigma_f.trace().to_string(),
                    t.sigma_t.trace().to_string(),
                ];
                rec.extend(x.iter().map(|v| v.to_string()));
                rec.extend(self.truth.states[k].iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
