//! Information-like Φ matrices, the difference decompositions between the
//! three indices and the conditional ordering theorems built on them.
//!
//! Every theorem check evaluates its preconditions first. A failed
//! precondition yields a report that is "not asserted"; only when all
//! preconditions pass is the predicted ordering compared against the
//! computed indices.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{advance_indices, IndexTriple, StepResiduals};
use crate::linalg::{loewner_compare, LoewnerVerdict, Matrix, SymMatrix};
use crate::model::{build_stacked, weighted_kernel_sum, NoiseSpec, StackedOperators, SystemModel};
use crate::network::{consensus_power, ConsensusMatrix};
use crate::stats::{linear_fit, LinearFit};

/// Relative tolerance for precondition tests.
pub const PRECONDITION_RTOL: f64 = 1e-12;
/// Relative tolerance for predicted orderings.
pub const CONCLUSION_RTOL: f64 = 1e-9;

fn rtol(rel: f64, mats: &[&Matrix]) -> f64 {
    rel * (1.0 + mats.iter().map(|m| m.norm()).fold(0.0, f64::max))
}

/// Φ matrices of one sensor at one fusion step.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiSet {
    /// `Σ N l Hᵀ Ru⁻¹ H`
    pub phi_f: SymMatrix,
    /// `Σ N l Hᵀ R⁻¹ H`
    pub phi: SymMatrix,
    /// `Σ (N l)² Hᵀ Ru⁻¹ R Ru⁻¹ H`
    pub phi_t: SymMatrix,
    /// `Σ ((N l)² − N l) Hᵀ Ru⁻¹ R Ru⁻¹ H`
    pub phi_ts: SymMatrix,
    /// `Σ N l Hᵀ Ru⁻¹ ΔR Ru⁻¹ H`
    pub phi_bar_tf: SymMatrix,
    /// `‖Φts − (Φt − Φf) − Φ̄tf‖` relative to the largest term.
    pub phi_split_residual: f64,
}

/// `Ru⁻¹ R Ru⁻¹` for every sensor.
fn sandwich_kernels(noise: &NoiseSpec, n_sensors: usize) -> Vec<SymMatrix> {
    (0..n_sensors).map(|j| noise.r(j).congruence(noise.ru_inv(j))).collect()
}

pub fn compute_phi_set(model: &SystemModel, noise: &NoiseSpec, row: &[f64]) -> Result<PhiSet> {
    let ns = model.n_sensors();
    crate::model::validate_row(row, ns)?;
    let h = model.hs();
    let ru_inv: Vec<_> = (0..ns).map(|j| noise.ru_inv(j).clone()).collect();
    let r_inv: Vec<_> = (0..ns).map(|j| noise.r_inv(j).clone()).collect();
    let sand = sandwich_kernels(noise, ns);
    let dr_sand: Vec<_> = (0..ns).map(|j| noise.dr(j).congruence(noise.ru_inv(j))).collect();
    let phi_f = weighted_kernel_sum(row, h, &ru_inv, |nl| nl)?;
    let phi = weighted_kernel_sum(row, h, &r_inv, |nl| nl)?;
    let phi_t = weighted_kernel_sum(row, h, &sand, |nl| nl * nl)?;
    let phi_ts = weighted_kernel_sum(row, h, &sand, |nl| nl * nl - nl)?;
    let phi_bar_tf = weighted_kernel_sum(row, h, &dr_sand, |nl| nl)?;
    let gap = phi_ts.matrix() - (phi_t.matrix() - phi_f.matrix()) - phi_bar_tf.matrix();
    let scale = [&phi_f, &phi_t, &phi_ts, &phi_bar_tf]
        .iter()
        .map(|m| m.frobenius())
        .fold(0.0, f64::max);
    let phi_split_residual = if scale == 0.0 { gap.norm() } else { gap.norm() / scale };
    Ok(PhiSet {
        phi_f,
        phi,
        phi_t,
        phi_ts,
        phi_bar_tf,
        phi_split_residual,
    })
}

/// One step of the three recursions from a given previous state, together
/// with everything the decompositions need.
#[derive(Clone, Debug)]
pub struct OneStep {
    pub prev: IndexTriple,
    pub next: IndexTriple,
    pub stacked: StackedOperators,
    pub phi: PhiSet,
    pub dq: SymMatrix,
    /// Whether the previous indices coincided.
    pub equal_start: bool,
    pub residuals: StepResiduals,
}

impl OneStep {
    pub fn from_equal_start(model: &SystemModel, noise: &NoiseSpec, row: &[f64], sigma_prev: &SymMatrix) -> Result<Self> {
        Self::from_state(model, noise, row, &IndexTriple::equal_start(sigma_prev), false)
    }

    /// With `diagnostic = false`, unequal previous indices are an error.
    pub fn from_state(model: &SystemModel, noise: &NoiseSpec, row: &[f64], prev: &IndexTriple, diagnostic: bool) -> Result<Self> {
        let gap = prev.start_gap();
        let equal_start = gap <= PRECONDITION_RTOL * (1.0 + prev.sigma.frobenius());
        if !equal_start && !diagnostic {
            return Err(Error::UnequalStart { gap });
        }
        let stacked = build_stacked(model, noise, row)?;
        let (next, residuals) = advance_indices(prev, model, noise, &stacked)?;
        Ok(OneStep {
            prev: prev.clone(),
            next,
            stacked,
            phi: compute_phi_set(model, noise, row)?,
            dq: noise.dq(),
            equal_start,
            residuals,
        })
    }

    fn scale(&self) -> f64 {
        let t = &self.next;
        [&t.sigma, &t.sigma_f, &t.sigma_t].iter().map(|m| m.frobenius()).fold(0.0, f64::max)
    }

    fn i_minus_kh(&self) -> Matrix {
        let n = self.next.sigma.dim();
        Matrix::identity(n, n) - &self.next.gain * &self.stacked.htilde
    }
}

fn rel(diff: &Matrix, scale: f64) -> f64 {
    if scale == 0.0 {
        diff.norm()
    } else {
        diff.norm() / scale
    }
}

/// Components of `Σt − Σ = (Σ̃t − Σ) + R^ts`.
#[derive(Clone, Debug)]
pub struct TsDecomposition {
    pub d_ts: SymMatrix,
    pub sigma_t_tilde: SymMatrix,
    /// `Σf⁻ C̄ Φts C̄ᵀ Σf⁻`.
    pub r_ts: SymMatrix,
    /// `K (R̄ − R̃) Kᵀ`.
    pub r_ts_raw: SymMatrix,
    pub c_bar: Matrix,
    pub reconstruction_residual: f64,
    pub raw_form_residual: f64,
    /// `λ_min(Σ̃t − Σ)`.
    pub tilde_gap_min_eig: f64,
    /// Tolerance-checked `Σ̃t ⪰ Σ`; only meaningful for an equal start.
    pub tilde_gap_psd: bool,
}

pub fn decompose_ts(step: &OneStep) -> Result<TsDecomposition> {
    let t = &step.next;
    let s = &step.stacked;
    let k = &t.gain;
    let ikh = step.i_minus_kh();
    let sigma_t_tilde = SymMatrix::from_square(&ikh * t.sigma_t_prior.matrix() * ikh.transpose() + k * s.rtilde.matrix() * k.transpose());
    let n = t.sigma.dim();
    let c_bar = Matrix::identity(n, n) - step.phi.phi_f.matrix() * t.sigma_f.matrix();
    let r_ts =
        SymMatrix::from_square(t.sigma_f_prior.matrix() * &c_bar * step.phi.phi_ts.matrix() * c_bar.transpose() * t.sigma_f_prior.matrix());
    let r_ts_raw = SymMatrix::from_square(k * (s.rbar.matrix() - s.rtilde.matrix()) * k.transpose());
    let d_ts = &t.sigma_t - &t.sigma;
    let tilde_gap = &sigma_t_tilde - &t.sigma;
    let recon = tilde_gap.matrix() + r_ts.matrix();
    let scale = step.scale();
    let tilde_gap_min_eig = tilde_gap.min_eigenvalue();
    Ok(TsDecomposition {
        reconstruction_residual: rel(&(d_ts.matrix() - recon), scale),
        raw_form_residual: rel(&(r_ts.matrix() - r_ts_raw.matrix()), scale),
        tilde_gap_psd: tilde_gap_min_eig >= -CONCLUSION_RTOL * (1.0 + scale),
        tilde_gap_min_eig,
        d_ts,
        sigma_t_tilde,
        r_ts,
        r_ts_raw,
        c_bar,
    })
}

/// Components of `Σt − Σf = Σf (Φt − Φf) Σf + Ψtf`.
#[derive(Clone, Debug)]
pub struct TfDecomposition {
    pub d_tf: SymMatrix,
    pub phi_t_minus_phi_f: SymMatrix,
    /// `Σ N l Hᵀ Ru⁻¹ ((N l − 1) I − N l ΔR Ru⁻¹) H`.
    pub phi_t_minus_phi_f_expanded: SymMatrix,
    /// `−(I − KH̃) ΔQ (I − KH̃)ᵀ`.
    pub psi_tf: SymMatrix,
    pub reconstruction_residual: f64,
    pub expansion_residual: f64,
}

pub fn decompose_tf(step: &OneStep, model: &SystemModel, noise: &NoiseSpec) -> Result<TfDecomposition> {
    let t = &step.next;
    let ikh = step.i_minus_kh();
    let psi_tf = SymMatrix::from_square(-(&ikh * step.dq.matrix() * ikh.transpose()));
    let phi_diff = &step.phi.phi_t - &step.phi.phi_f;
    let recon = phi_diff.congruence(t.sigma_f.matrix()).matrix() + psi_tf.matrix();
    let d_tf = &t.sigma_t - &t.sigma_f;
    let ns = model.n_sensors();
    let nf = ns as f64;
    let mut expanded = Matrix::zeros(model.n(), model.n());
    for j in crate::model::active_set(&step.stacked.row) {
        let nl = nf * step.stacked.row[j];
        let m = model.h(j).nrows();
        let inner = Matrix::identity(m, m) * (nl - 1.0) - noise.dr(j).matrix() * noise.ru_inv(j).matrix() * nl;
        expanded += model.h(j).transpose() * noise.ru_inv(j).matrix() * inner * model.h(j) * nl;
    }
    let expanded = SymMatrix::from_square(expanded);
    let phi_scale = step.phi.phi_t.frobenius().max(step.phi.phi_f.frobenius());
    Ok(TfDecomposition {
        reconstruction_residual: rel(&(d_tf.matrix() - recon), step.scale()),
        expansion_residual: rel(&(phi_diff.matrix() - expanded.matrix()), phi_scale),
        d_tf,
        phi_t_minus_phi_f: phi_diff,
        phi_t_minus_phi_f_expanded: expanded,
        psi_tf,
    })
}

/// Components of `Σf⁻¹ − Σ⁻¹ = (Φf − Φ) + Ψfs`.
#[derive(Clone, Debug)]
pub struct FsDecomposition {
    pub d_fs_inv: SymMatrix,
    pub phi_f_minus_phi: SymMatrix,
    /// `Σ N l Hᵀ (−R⁻¹ ΔR Ru⁻¹) H`.
    pub phi_f_minus_phi_expanded: SymMatrix,
    /// `(Σf⁻)⁻¹ − (Σ⁻)⁻¹`.
    pub psi_fs: SymMatrix,
    pub reconstruction_residual: f64,
    pub expansion_residual: f64,
}

pub fn decompose_fs(step: &OneStep, model: &SystemModel, noise: &NoiseSpec) -> Result<FsDecomposition> {
    let t = &step.next;
    let sf_inv = t.sigma_f.inverse("Σf")?;
    let s_inv = t.sigma.inverse("Σ")?;
    let d_fs_inv = &sf_inv - &s_inv;
    let psi_fs = &t.sigma_f_prior.inverse("Σf prior")? - &t.sigma_prior.inverse("Σ prior")?;
    let phi_diff = &step.phi.phi_f - &step.phi.phi;
    let nf = model.n_sensors() as f64;
    let mut expanded = Matrix::zeros(model.n(), model.n());
    for j in crate::model::active_set(&step.stacked.row) {
        let nl = nf * step.stacked.row[j];
        let inner = -(noise.r_inv(j).matrix() * noise.dr(j).matrix() * noise.ru_inv(j).matrix());
        expanded += model.h(j).transpose() * inner * model.h(j) * nl;
    }
    let expanded = SymMatrix::from_square(expanded);
    let scale = sf_inv.frobenius().max(s_inv.frobenius());
    let phi_scale = step.phi.phi_f.frobenius().max(step.phi.phi.frobenius());
    Ok(FsDecomposition {
        reconstruction_residual: rel(&(d_fs_inv.matrix() - phi_diff.matrix() - psi_fs.matrix()), scale),
        expansion_residual: rel(&(phi_diff.matrix() - expanded.matrix()), phi_scale),
        d_fs_inv,
        phi_f_minus_phi: phi_diff,
        phi_f_minus_phi_expanded: expanded,
        psi_fs,
    })
}

/// One of the three posterior indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Index {
    #[serde(rename = "sigma")]
    Sigma,
    #[serde(rename = "sigma_f")]
    SigmaF,
    #[serde(rename = "sigma_t")]
    SigmaT,
}

impl Index {
    pub fn of<'a>(&self, t: &'a IndexTriple) -> &'a SymMatrix {
        match self {
            Index::Sigma => &t.sigma,
            Index::SigmaF => &t.sigma_f,
            Index::SigmaT => &t.sigma_t,
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Index::Sigma => "Σ",
            Index::SigmaF => "Σf",
            Index::SigmaT => "Σt",
        }
    }
}

/// The ordering statements checked by [`classify_relation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TheoremId {
    /// `Φts ⪰ 0 ⇒ Σt ⪰ Σ`.
    T2_1,
    T3_1,
    T3_2,
    T3_3,
    /// `ΔQ = 0`, `ΔR ⪰ 0` with one `≻ 0`: `Σ ≺ Σt ≺ Σf` in the limit.
    T4_1,
    /// `ΔQ = 0`, `ΔR ⪯ 0` with one `≺ 0`: `Σf ≺ Σ ≺ Σt` in the limit.
    T4_2,
    /// `ΔQ = 0`, `ΔR = 0`: `Σf = Σ`, and `Σt = Σf` in the limit.
    T4_3,
    /// `ΔR = 0`, `ΔQ ≻ 0`: `Σ ≺ Σf`, and `Σ ≺ Σt ≺ Σf` in the limit.
    T5_1,
    /// `ΔR = 0`, `ΔQ ≺ 0`: `Σf ≺ Σ`, and `Σf ⪯ Σ ⪯ Σt` in the limit.
    T5_2,
    T6_1,
    T6_2,
}

impl TheoremId {
    pub const ALL: [TheoremId; 11] = [
        TheoremId::T2_1,
        TheoremId::T3_1,
        TheoremId::T3_2,
        TheoremId::T3_3,
        TheoremId::T4_1,
        TheoremId::T4_2,
        TheoremId::T4_3,
        TheoremId::T5_1,
        TheoremId::T5_2,
        TheoremId::T6_1,
        TheoremId::T6_2,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TheoremId::T2_1 => "T2-1",
            TheoremId::T3_1 => "T3-1",
            TheoremId::T3_2 => "T3-2",
            TheoremId::T3_3 => "T3-3",
            TheoremId::T4_1 => "T4-1",
            TheoremId::T4_2 => "T4-2",
            TheoremId::T4_3 => "T4-3",
            TheoremId::T5_1 => "T5-1",
            TheoremId::T5_2 => "T5-2",
            TheoremId::T6_1 => "T6-1",
            TheoremId::T6_2 => "T6-2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Precondition {
    pub name: String,
    pub pass: bool,
}

/// `greater ⪰ lesser` (or `≻` when `strict`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Link {
    pub greater: Index,
    pub lesser: Index,
    pub strict: bool,
    pub equal: bool,
    /// Only checked when the fusion step stands in for the limit.
    pub limit_only: bool,
}

const fn geq(greater: Index, lesser: Index, strict: bool, limit_only: bool) -> Link {
    Link {
        greater,
        lesser,
        strict,
        equal: false,
        limit_only,
    }
}

const fn eq(a: Index, b: Index, limit_only: bool) -> Link {
    Link {
        greater: a,
        lesser: b,
        strict: false,
        equal: true,
        limit_only,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkResult {
    pub link: Link,
    pub verdict: LoewnerVerdict,
    pub holds: bool,
    pub strict_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelationReport {
    pub theorem: TheoremId,
    pub preconditions: Vec<Precondition>,
    pub predicted: String,
    /// All preconditions passed.
    pub asserted: bool,
    /// Links checked at this fusion step; empty when not asserted.
    pub checked: Vec<LinkResult>,
    /// `asserted` and every checked link holds.
    pub holds: bool,
    /// `min(0, λ_min(Σt − Σ))`.
    pub epsilon_l: f64,
}

impl RelationReport {
    pub fn counterexample(&self) -> bool {
        self.asserted && !self.holds
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifyOptions {
    /// The fusion step stands in for `L → ∞`.
    pub at_limit: bool,
    pub precondition_rtol: f64,
    pub conclusion_rtol: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            at_limit: false,
            precondition_rtol: PRECONDITION_RTOL,
            conclusion_rtol: CONCLUSION_RTOL,
        }
    }
}

/// Sign pattern of a symmetric matrix under a tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Sign {
    zero: bool,
    psd: bool,
    nsd: bool,
    pd: bool,
    nd: bool,
}

fn sign_of(m: &SymMatrix, rel: f64) -> Sign {
    let tol = rel * (1.0 + m.frobenius());
    let e = m.eigenvalues();
    let (lo, hi) = (e.min(), e.max());
    Sign {
        zero: lo >= -tol && hi <= tol,
        psd: lo >= -tol,
        nsd: hi <= tol,
        pd: lo > tol,
        nd: hi < -tol,
    }
}

fn leq(a: &SymMatrix, b: &SymMatrix, rel: f64) -> bool {
    let tol = rtol(rel, &[a.matrix(), b.matrix()]);
    loewner_compare(a, b, tol).map(|v| v.is_leq()).unwrap_or(false)
}

struct Facts {
    phi_le_phif: bool,
    phif_le_phit: bool,
    phif_le_phi: bool,
    phit_le_phif: bool,
    phits_psd: bool,
    dq: Sign,
    dr: Vec<Sign>,
}

impl Facts {
    fn gather(step: &OneStep, dr: &[SymMatrix], rel: f64) -> Facts {
        let p = &step.phi;
        Facts {
            phi_le_phif: leq(&p.phi, &p.phi_f, rel),
            phif_le_phit: leq(&p.phi_f, &p.phi_t, rel),
            phif_le_phi: leq(&p.phi_f, &p.phi, rel),
            phit_le_phif: leq(&p.phi_t, &p.phi_f, rel),
            phits_psd: sign_of(&p.phi_ts, rel).psd,
            dq: sign_of(&step.dq, rel),
            dr: dr.iter().map(|m| sign_of(m, rel)).collect(),
        }
    }

    fn dr_all(&self, f: impl Fn(&Sign) -> bool) -> bool {
        self.dr.iter().all(f)
    }

    fn dr_any(&self, f: impl Fn(&Sign) -> bool) -> bool {
        self.dr.iter().any(f)
    }
}

fn pre(name: &str, pass: bool) -> Precondition {
    Precondition {
        name: name.to_string(),
        pass,
    }
}

use Index::{Sigma as S, SigmaF as SF, SigmaT as ST};

fn statement(id: TheoremId, f: &Facts) -> (Vec<Precondition>, Vec<Link>) {
    let dq_zero = pre("ΔQ = 0", f.dq.zero);
    let dr_zero = pre("ΔR_j = 0 for all j", f.dr_all(|s| s.zero));
    let phits = pre("Φts ⪰ 0", f.phits_psd);
    match id {
        TheoremId::T2_1 => (vec![phits], vec![geq(ST, S, false, false)]),
        TheoremId::T3_1 => (
            vec![dq_zero, pre("Φ ⪯ Φf", f.phi_le_phif), pre("Φf ⪯ Φt", f.phif_le_phit), phits],
            vec![geq(S, SF, false, false), geq(ST, S, false, false)],
        ),
        TheoremId::T3_2 => (
            vec![dq_zero, pre("Φf ⪯ Φ", f.phif_le_phi), pre("Φf ⪯ Φt", f.phif_le_phit), phits],
            vec![geq(SF, S, false, false), geq(ST, SF, false, false)],
        ),
        TheoremId::T3_3 => (
            vec![dq_zero, pre("Φt ⪯ Φf", f.phit_le_phif), pre("Φf ⪯ Φ", f.phif_le_phi), phits],
            vec![geq(ST, S, false, false), geq(SF, ST, false, false)],
        ),
        TheoremId::T4_1 => (
            vec![
                dq_zero,
                pre("ΔR_j ⪰ 0 for all j", f.dr_all(|s| s.psd)),
                pre("ΔR_j ≻ 0 for some j", f.dr_any(|s| s.pd)),
            ],
            vec![geq(ST, S, true, true), geq(SF, ST, true, true)],
        ),
        TheoremId::T4_2 => (
            vec![
                dq_zero,
                pre("ΔR_j ⪯ 0 for all j", f.dr_all(|s| s.nsd)),
                pre("ΔR_j ≺ 0 for some j", f.dr_any(|s| s.nd)),
            ],
            vec![geq(S, SF, true, true), geq(ST, S, true, true)],
        ),
        TheoremId::T4_3 => (vec![dq_zero, dr_zero], vec![eq(SF, S, false), eq(ST, SF, true)]),
        TheoremId::T5_1 => (
            vec![dr_zero, pre("ΔQ ≻ 0", f.dq.pd)],
            vec![geq(SF, S, true, false), geq(ST, S, true, true), geq(SF, ST, true, true)],
        ),
        TheoremId::T5_2 => (
            vec![dr_zero, pre("ΔQ ≺ 0", f.dq.nd)],
            vec![geq(S, SF, true, false), geq(ST, S, false, true)],
        ),
        TheoremId::T6_1 => (
            vec![
                pre("Φ ⪯ Φf", f.phi_le_phif),
                pre("Φf ⪯ Φt", f.phif_le_phit),
                phits,
                pre("ΔQ ≺ 0", f.dq.nd),
            ],
            vec![geq(S, SF, false, false), geq(ST, S, false, false)],
        ),
        TheoremId::T6_2 => (
            vec![
                pre("Φt ⪯ Φf", f.phit_le_phif),
                pre("Φf ⪯ Φ", f.phif_le_phi),
                phits,
                pre("ΔQ ≻ 0", f.dq.pd),
            ],
            vec![geq(ST, S, false, false), geq(SF, ST, false, false)],
        ),
    }
}

fn chain_text(links: &[Link]) -> String {
    links
        .iter()
        .map(|l| {
            let op = if l.equal {
                "="
            } else if l.strict {
                "≻"
            } else {
                "⪰"
            };
            let lim = if l.limit_only { " (limit)" } else { "" };
            format!("{} {op} {}{lim}", l.greater.symbol(), l.lesser.symbol())
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn check_link(link: Link, t: &IndexTriple, rel: f64) -> Result<LinkResult> {
    let a = link.greater.of(t);
    let b = link.lesser.of(t);
    let tol = rtol(rel, &[t.sigma.matrix(), t.sigma_f.matrix(), t.sigma_t.matrix()]);
    let verdict = loewner_compare(a, b, tol)?;
    let holds = if link.equal { verdict.is_eq() } else { verdict.is_geq() };
    let strict_holds = if link.equal { holds } else { verdict.is_strictly_greater(tol) };
    Ok(LinkResult {
        link,
        verdict,
        holds,
        strict_holds,
    })
}

/// `min(0, λ_min(Σt − Σ))`.
pub fn epsilon_l(t: &IndexTriple) -> f64 {
    (&t.sigma_t - &t.sigma).min_eigenvalue().min(0.0)
}

/// Evaluates every ordering statement for one step. Theorem assertions are
/// suppressed unless the step started from equal indices.
pub fn classify_relation(step: &OneStep, noise: &NoiseSpec, n_sensors: usize, opts: ClassifyOptions) -> Result<Vec<RelationReport>> {
    let dr: Vec<_> = (0..n_sensors).map(|j| noise.dr(j)).collect();
    let facts = Facts::gather(step, &dr, opts.precondition_rtol);
    let eps = epsilon_l(&step.next);
    TheoremId::ALL
        .iter()
        .map(|&id| {
            let (mut preconditions, links) = statement(id, &facts);
            preconditions.insert(0, pre("equal start", step.equal_start));
            let asserted = preconditions.iter().all(|p| p.pass);
            let mut checked = Vec::new();
            if asserted {
                for &l in links.iter().filter(|l| opts.at_limit || !l.limit_only) {
                    checked.push(check_link(l, &step.next, opts.conclusion_rtol)?);
                }
            }
            Ok(RelationReport {
                theorem: id,
                predicted: chain_text(&links),
                holds: asserted && checked.iter().all(|c| c.holds),
                asserted,
                preconditions,
                checked,
                epsilon_l: eps,
            })
        })
        .collect()
}

/// Which precondition bundle of the multi-step theorem applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Bundle {
    /// `Φ ⪯ Φf ⪯ Φt`, `Φts ⪰ 0`, `ΔQ ≺ 0` ⇒ `Σf ⪯ Σ ⪯ Σt`.
    One,
    /// `Φt ⪯ Φf ⪯ Φ`, `Φts ⪰ 0`, `ΔQ ≻ 0` ⇒ `Σ ⪯ Σt ⪯ Σf`.
    Two,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecursiveStep {
    pub k: usize,
    pub sensor: usize,
    /// Bundle whose preconditions held at every step so far.
    pub bundle: Option<Bundle>,
    pub checked: Vec<LinkResult>,
    pub holds: bool,
}

/// Runs the recursions from an equal start and checks the multi-step chain
/// at `k = 1..=horizon` for every sensor.
pub fn recursive_relation_check(
    model: &SystemModel,
    noise: &NoiseSpec,
    consensus: &ConsensusMatrix,
    fusion_steps: usize,
    sigma0: &SymMatrix,
    horizon: usize,
) -> Result<Vec<RecursiveStep>> {
    let prop = crate::filter::IndexPropagator::new(model, noise, consensus, fusion_steps)?;
    let ns = model.n_sensors();
    let mut prev = vec![IndexTriple::equal_start(sigma0); ns];
    let mut alive = vec![[true, true]; ns];
    let mut out = Vec::with_capacity(horizon * ns);
    for k in 1..=horizon {
        let (next, _) = prop.step(&prev)?;
        for i in 0..ns {
            let phi = compute_phi_set(model, noise, &prop.row(i))?;
            let dq = sign_of(&noise.dq(), PRECONDITION_RTOL);
            let r = PRECONDITION_RTOL;
            let phits = sign_of(&phi.phi_ts, r).psd;
            let b1 = leq(&phi.phi, &phi.phi_f, r) && leq(&phi.phi_f, &phi.phi_t, r) && phits && dq.nd;
            let b2 = leq(&phi.phi_t, &phi.phi_f, r) && leq(&phi.phi_f, &phi.phi, r) && phits && dq.pd;
            alive[i][0] &= b1;
            alive[i][1] &= b2;
            let bundle = if alive[i][0] {
                Some(Bundle::One)
            } else if alive[i][1] {
                Some(Bundle::Two)
            } else {
                None
            };
            let links: &[Link] = match bundle {
                Some(Bundle::One) => &[geq(S, SF, false, false), geq(ST, S, false, false)],
                Some(Bundle::Two) => &[geq(ST, S, false, false), geq(SF, ST, false, false)],
                None => &[],
            };
            let checked = links
                .iter()
                .map(|&l| check_link(l, &next[i], CONCLUSION_RTOL))
                .collect::<Result<Vec<_>>>()?;
            out.push(RecursiveStep {
                k,
                sensor: i,
                bundle,
                holds: bundle.is_some() && checked.iter().all(|c| c.holds),
                checked,
            });
        }
        prev = next;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VanishingPoint {
    pub fusion_steps: usize,
    pub sensor: usize,
    pub phi_ts_norm: f64,
    pub r_ts_norm: f64,
    /// `‖Σt − Σf‖_F`.
    pub tf_gap: f64,
    /// `‖Φt − Φ‖_F`.
    pub phi_t_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VanishingReport {
    pub points: Vec<VanishingPoint>,
    /// Fit of `ln ‖Φts‖` against `L` per sensor over the given tail.
    pub phi_ts_fits: Vec<Option<LinearFit>>,
    pub r_ts_fits: Vec<Option<LinearFit>>,
}

/// Consensus-induced terms as the number of fusion steps grows. Fits use
/// points with `L ≥ tail_from` whose norms are above `1e-300`.
pub fn check_phi_vanishing(
    model: &SystemModel,
    noise: &NoiseSpec,
    consensus: &ConsensusMatrix,
    sigma_prev: &SymMatrix,
    l_list: &[usize],
    tail_from: usize,
) -> Result<VanishingReport> {
    if l_list.windows(2).any(|w| w[0] >= w[1]) || l_list.first() == Some(&0) {
        return Err(Error::InvalidArgument("fusion steps must be increasing and positive".into()));
    }
    let ns = model.n_sensors();
    let mut points = Vec::new();
    for &l in l_list {
        let power = consensus_power(consensus, l);
        for i in 0..ns {
            let row: Vec<f64> = power.row(i).iter().copied().collect();
            let step = OneStep::from_equal_start(model, noise, &row, sigma_prev)?;
            let ts = decompose_ts(&step)?;
            points.push(VanishingPoint {
                fusion_steps: l,
                sensor: i,
                phi_ts_norm: step.phi.phi_ts.frobenius(),
                r_ts_norm: ts.r_ts.frobenius(),
                tf_gap: (step.next.sigma_t.matrix() - step.next.sigma_f.matrix()).norm(),
                phi_t_gap: (step.phi.phi_t.matrix() - step.phi.phi.matrix()).norm(),
            });
        }
    }
    let fit = |i: usize, get: fn(&VanishingPoint) -> f64| {
        let (x, y): (Vec<f64>, Vec<f64>) = points
            .iter()
            .filter(|p| p.sensor == i && p.fusion_steps >= tail_from && get(p) > 1e-300)
            .map(|p| (p.fusion_steps as f64, get(p).ln()))
            .unzip();
        linear_fit(&x, &y)
    };
    Ok(VanishingReport {
        phi_ts_fits: (0..ns).map(|i| fit(i, |p| p.phi_ts_norm)).collect(),
        r_ts_fits: (0..ns).map(|i| fit(i, |p| p.r_ts_norm)).collect(),
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorollaryPoint {
    pub m: usize,
    pub sensor: usize,
    pub phi_ts_psd: bool,
    pub phi_ts_below_reference: bool,
    pub sigma_t_geq_sigma: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorollaryReport {
    pub d: usize,
    pub points: Vec<CorollaryPoint>,
    pub pass: bool,
}

/// With identical kernels `H_jᵀ Ru_j⁻¹ R_j Ru_j⁻¹ H_j`, checks
/// `0 ⪯ Φts(m) ⪯ Φts(d)` and `Σt ⪰ Σ` for `m = d..=m_max`.
pub fn check_corollary_identical_sensors(
    model: &SystemModel,
    noise: &NoiseSpec,
    consensus: &ConsensusMatrix,
    sigma_prev: &SymMatrix,
    d: usize,
    m_max: usize,
) -> Result<CorollaryReport> {
    if d == 0 || m_max < d {
        return Err(Error::InvalidArgument(format!(
            "need m_max >= d >= 1, got d = {d}, m_max = {m_max}"
        )));
    }
    let ns = model.n_sensors();
    let kernels: Vec<Matrix> = sandwich_kernels(noise, ns)
        .iter()
        .enumerate()
        .map(|(j, k)| k.congruence(&model.h(j).transpose()).into_matrix())
        .collect();
    let kscale = kernels.iter().map(|k| k.norm()).fold(0.0, f64::max);
    if kernels.iter().any(|k| (k - &kernels[0]).norm() > 1e-12 * (1.0 + kscale)) {
        return Err(Error::InvalidArgument("sensor kernels are not identical".into()));
    }
    let phi_ts_at = |m: usize, i: usize| -> Result<SymMatrix> {
        let row: Vec<f64> = consensus_power(consensus, m).row(i).iter().copied().collect();
        Ok(compute_phi_set(model, noise, &row)?.phi_ts)
    };
    let mut points = Vec::new();
    for i in 0..ns {
        let reference = phi_ts_at(d, i)?;
        for m in d..=m_max {
            let row: Vec<f64> = consensus_power(consensus, m).row(i).iter().copied().collect();
            let step = OneStep::from_equal_start(model, noise, &row, sigma_prev)?;
            let phi_ts = &step.phi.phi_ts;
            let t = &step.next;
            let tol = rtol(CONCLUSION_RTOL, &[t.sigma.matrix(), t.sigma_t.matrix()]);
            points.push(CorollaryPoint {
                m,
                sensor: i,
                phi_ts_psd: sign_of(phi_ts, PRECONDITION_RTOL).psd,
                phi_ts_below_reference: leq(phi_ts, &reference, PRECONDITION_RTOL),
                sigma_t_geq_sigma: loewner_compare(&t.sigma_t, &t.sigma, tol)?.is_geq(),
            });
        }
    }
    let pass = points
        .iter()
        .all(|p| p.phi_ts_psd && p.phi_ts_below_reference && p.sigma_t_geq_sigma);
    Ok(CorollaryReport { d, points, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{metropolis_weights, NeighborConvention, Topology};

    fn scalar(r: &[f64], ru: &[f64], q: f64, qu: f64) -> (SystemModel, NoiseSpec) {
        let model = SystemModel::scalar(1.0, 1.0, r.len()).unwrap();
        let noise = NoiseSpec::new(
            &model,
            SymMatrix::scalar(q),
            SymMatrix::scalar(qu),
            r.iter().map(|&v| SymMatrix::scalar(v)).collect(),
            ru.iter().map(|&v| SymMatrix::scalar(v)).collect(),
        )
        .unwrap();
        (model, noise)
    }

    fn example1() -> (SystemModel, NoiseSpec, ConsensusMatrix) {
        let (m, n) = scalar(&[1.0, 1.0, 0.1], &[1.0, 1.0, 0.11], 1.0, 2.0);
        let l = metropolis_weights(&Topology::path(3).unwrap(), NeighborConvention::IncludeSelf).unwrap();
        (m, n, l)
    }

    fn row(l: &ConsensusMatrix, steps: usize, i: usize) -> Vec<f64> {
        consensus_power(l, steps).row(i).iter().copied().collect()
    }

    #[test]
    fn single_sensor_has_zero_phi_ts() {
        let (m, n) = scalar(&[1.0], &[3.0], 1.0, 1.0);
        let p = compute_phi_set(&m, &n, &[1.0]).unwrap();
        assert_eq!(p.phi_ts.matrix().norm(), 0.0);
    }

    #[test]
    fn matched_r_gives_equal_phi() {
        let (m, n) = scalar(&[1.0, 2.0, 0.5], &[1.0, 2.0, 0.5], 1.0, 1.0);
        let p = compute_phi_set(&m, &n, &[0.2, 0.3, 0.5]).unwrap();
        assert!((p.phi_f.matrix() - p.phi.matrix()).norm() < 1e-15);
        assert!((p.phi_ts.matrix() - (p.phi_t.matrix() - p.phi_f.matrix())).norm() < 1e-14);
        assert!(p.phi_split_residual < 1e-14);
    }

    #[test]
    fn uniform_row_has_zero_phi_ts() {
        let (m, n) = scalar(&[1.0, 2.0, 0.5, 4.0], &[2.0, 1.0, 0.7, 4.0], 1.0, 1.0);
        let p = compute_phi_set(&m, &n, &[0.25; 4]).unwrap();
        assert_eq!(p.phi_ts.matrix().norm(), 0.0);
    }

    #[test]
    fn example_one_sensor_one_counterexample() {
        let (m, n, l) = example1();
        let step = OneStep::from_equal_start(&m, &n, &row(&l, 2, 0), &SymMatrix::scalar(4.0)).unwrap();
        let ts = decompose_ts(&step).unwrap();
        assert!((ts.d_ts[(0, 0)] - (0.1406 - 0.1613)).abs() < 1e-4, "{}", ts.d_ts[(0, 0)]);
        assert!(ts.reconstruction_residual < 1e-12);
        assert!(ts.raw_form_residual < 1e-12);
        assert!(ts.tilde_gap_psd);
        let tf = decompose_tf(&step, &m, &n).unwrap();
        assert!(tf.reconstruction_residual < 1e-12 && tf.expansion_residual < 1e-12);
        let fs = decompose_fs(&step, &m, &n).unwrap();
        assert!(fs.reconstruction_residual < 1e-12 && fs.expansion_residual < 1e-12);
        let reports = classify_relation(&step, &n, 3, ClassifyOptions::default()).unwrap();
        let t2 = reports.iter().find(|r| r.theorem == TheoremId::T2_1).unwrap();
        assert!(!t2.asserted);
        assert!(t2.epsilon_l < 0.0);
    }

    #[test]
    fn unequal_start_rejected_without_diagnostic() {
        let (m, n, l) = example1();
        let mut prev = IndexTriple::equal_start(&SymMatrix::scalar(4.0));
        prev.sigma_t = SymMatrix::scalar(5.0);
        let r = row(&l, 2, 0);
        assert!(matches!(
            OneStep::from_state(&m, &n, &r, &prev, false),
            Err(Error::UnequalStart { .. })
        ));
        let step = OneStep::from_state(&m, &n, &r, &prev, true).unwrap();
        let reports = classify_relation(&step, &n, 3, ClassifyOptions::default()).unwrap();
        assert!(reports.iter().all(|r| !r.asserted));
    }

    #[test]
    fn matched_noise_decomposition() {
        let (m, n) = scalar(&[1.0, 2.0, 0.5], &[1.0, 2.0, 0.5], 1.0, 1.0);
        let l = metropolis_weights(&Topology::path(3).unwrap(), NeighborConvention::IncludeSelf).unwrap();
        let step = OneStep::from_equal_start(&m, &n, &row(&l, 1, 1), &SymMatrix::scalar(2.0)).unwrap();
        let ts = decompose_ts(&step).unwrap();
        assert!(ts.sigma_t_tilde.matrix().relative_eq(step.next.sigma.matrix(), 1e-14, 1e-14));
        assert!((ts.d_ts.matrix() - ts.r_ts.matrix()).norm() < 1e-14);
        let fs = decompose_fs(&step, &m, &n).unwrap();
        assert!(fs.d_fs_inv.matrix().norm() < 1e-12);
        let tf = decompose_tf(&step, &m, &n).unwrap();
        assert_eq!(tf.psi_tf.matrix().norm(), 0.0);
    }

    #[test]
    fn matched_noise_collapses_on_uniform_rows() {
        let (m, n) = scalar(&[1.0, 2.0, 0.5], &[1.0, 2.0, 0.5], 1.0, 1.0);
        let l = metropolis_weights(&Topology::complete(3).unwrap(), NeighborConvention::IncludeSelf).unwrap();
        let step = OneStep::from_equal_start(&m, &n, &row(&l, 1, 0), &SymMatrix::scalar(2.0)).unwrap();
        assert!(step.next.start_gap() < 1e-14);
    }

    #[test]
    fn delta_q_only_gives_psi_fs() {
        let (m, n) = scalar(&[1.0, 2.0], &[1.0, 2.0], 1.0, 3.0);
        let step = OneStep::from_equal_start(&m, &n, &[0.3, 0.7], &SymMatrix::scalar(2.0)).unwrap();
        let fs = decompose_fs(&step, &m, &n).unwrap();
        assert!((fs.d_fs_inv.matrix() - fs.psi_fs.matrix()).norm() < 1e-14);
    }

    #[test]
    fn theorem_five_every_l() {
        let (m, n) = scalar(&[10.0; 5], &[10.0; 5], 10.0, 20.0);
        let l = metropolis_weights(&Topology::five_node(), NeighborConvention::IncludeSelf).unwrap();
        for steps in 1..6 {
            let step = OneStep::from_equal_start(&m, &n, &row(&l, steps, 0), &SymMatrix::scalar(20.0)).unwrap();
            let reports = classify_relation(&step, &n, 5, ClassifyOptions::default()).unwrap();
            let t5 = reports.iter().find(|r| r.theorem == TheoremId::T5_1).unwrap();
            assert!(t5.asserted && t5.holds);
            assert!(t5.checked.iter().all(|c| c.strict_holds));
            assert_eq!(t5.checked.len(), 1);
        }
    }

    #[test]
    fn recursive_case_five() {
        let (m, n) = scalar(&[10.0; 5], &[20.0; 5], 10.0, 20.0);
        let m = SystemModel::new(Matrix::from_element(1, 1, 2.0), m.hs().to_vec()).unwrap();
        let l = metropolis_weights(&Topology::five_node(), NeighborConvention::IncludeSelf).unwrap();
        let steps = recursive_relation_check(&m, &n, &l, 5, &SymMatrix::scalar(20.0), 30).unwrap();
        assert!(steps.iter().all(|s| s.bundle == Some(Bundle::Two) && s.holds));
    }

    #[test]
    fn corollary_identical_sensors() {
        let (m, n) = scalar(&[1.0; 4], &[1.5; 4], 1.0, 1.0);
        let l = metropolis_weights(&Topology::path(4).unwrap(), NeighborConvention::IncludeSelf).unwrap();
        let r = check_corollary_identical_sensors(&m, &n, &l, &SymMatrix::scalar(1.0), 1, 20).unwrap();
        assert!(r.pass);
        let (m2, n2) = scalar(&[1.0, 2.0], &[1.0, 1.0], 1.0, 1.0);
        let l2 = metropolis_weights(&Topology::path(2).unwrap(), NeighborConvention::IncludeSelf).unwrap();
        assert!(check_corollary_identical_sensors(&m2, &n2, &l2, &SymMatrix::scalar(1.0), 1, 3).is_err());
    }

    #[test]
    fn phi_ts_vanishes_with_fusion() {
        let (m, n) = scalar(&[10.0; 5], &[10.0, 20.0, 10.0, 20.0, 10.0], 10.0, 10.0);
        let l = metropolis_weights(&Topology::five_node(), NeighborConvention::IncludeSelf).unwrap();
        let ls: Vec<usize> = (1..=30).collect();
        let r = check_phi_vanishing(&m, &n, &l, &SymMatrix::scalar(20.0), &ls, 5).unwrap();
        for f in r.phi_ts_fits.iter().chain(&r.r_ts_fits) {
            let f = f.unwrap();
            assert!(f.slope < 0.0 && f.slope.exp() < 1.0);
        }
        assert!(check_phi_vanishing(&m, &n, &l, &SymMatrix::scalar(20.0), &[3, 2], 1).is_err());
    }
}
