//! System and noise models, and the per-sensor stacked operators
//! built from one row of the fused consensus matrix.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymMatrix};

/// Row entries above this count as communicating sensors.
pub const ACTIVE_THRESHOLD: f64 = 1e-14;

/// `x_{k+1} = F x_k + w_k`, `y_i = H_i x + v_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    f: Matrix,
    h: Vec<Matrix>,
}

impl SystemModel {
    pub fn new(f: Matrix, h: Vec<Matrix>) -> Result<Self> {
        if !f.is_square() || f.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                op: "SystemModel: F",
                expected: (f.nrows(), f.nrows()),
                found: f.shape(),
            });
        }
        if h.is_empty() {
            return Err(Error::InvalidArgument("at least one sensor is required".into()));
        }
        let n = f.nrows();
        for hi in &h {
            if hi.ncols() != n || hi.nrows() == 0 {
                return Err(Error::DimensionMismatch {
                    op: "SystemModel: H",
                    expected: (hi.nrows().max(1), n),
                    found: hi.shape(),
                });
            }
        }
        Ok(SystemModel { f, h })
    }

    /// Scalar system with `N` sensors all observing `H = h`.
    pub fn scalar(f: f64, h: f64, n_sensors: usize) -> Result<Self> {
        Self::new(Matrix::from_element(1, 1, f), vec![Matrix::from_element(1, 1, h); n_sensors])
    }

    pub fn f(&self) -> &Matrix {
        &self.f
    }

    pub fn h(&self, j: usize) -> &Matrix {
        &self.h[j]
    }

    pub fn hs(&self) -> &[Matrix] {
        &self.h
    }

    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    pub fn n_sensors(&self) -> usize {
        self.h.len()
    }

    pub fn sensor_dims(&self) -> Vec<usize> {
        self.h.iter().map(|h| h.nrows()).collect()
    }
}

/// Actual and nominal covariances, with cached inverses of the measurement
/// covariances.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    q: SymMatrix,
    qu: SymMatrix,
    r: Vec<SymMatrix>,
    ru: Vec<SymMatrix>,
    r_inv: Vec<SymMatrix>,
    ru_inv: Vec<SymMatrix>,
}

fn check_dim(what: &str, m: &SymMatrix, dim: usize) -> Result<()> {
    if m.dim() != dim {
        return Err(Error::InvalidArgument(format!("{what} is {0}x{0}, expected {dim}x{dim}", m.dim())));
    }
    Ok(())
}

impl NoiseSpec {
    pub fn new(model: &SystemModel, q: SymMatrix, qu: SymMatrix, r: Vec<SymMatrix>, ru: Vec<SymMatrix>) -> Result<Self> {
        let n = model.n();
        check_dim("Q", &q, n)?;
        check_dim("Qu", &qu, n)?;
        q.require_positive_definite("Q")?;
        qu.require_positive_definite("Qu")?;
        let dims = model.sensor_dims();
        if r.len() != dims.len() || ru.len() != dims.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} measurement covariances, got {} actual and {} nominal",
                dims.len(),
                r.len(),
                ru.len()
            )));
        }
        for (j, &m) in dims.iter().enumerate() {
            check_dim(&format!("R[{j}]"), &r[j], m)?;
            check_dim(&format!("Ru[{j}]"), &ru[j], m)?;
            r[j].require_positive_definite(format!("R[{j}]"))?;
            ru[j].require_positive_definite(format!("Ru[{j}]"))?;
        }
        let r_inv = r.iter().map(|m| m.inverse("R")).collect::<Result<_>>()?;
        let ru_inv = ru.iter().map(|m| m.inverse("Ru")).collect::<Result<_>>()?;
        Ok(NoiseSpec {
            q,
            qu,
            r,
            ru,
            r_inv,
            ru_inv,
        })
    }

    /// The same noise with nominal covariances set equal to the actual ones.
    pub fn matched(&self) -> NoiseSpec {
        NoiseSpec {
            qu: self.q.clone(),
            ru: self.r.clone(),
            ru_inv: self.r_inv.clone(),
            ..self.clone()
        }
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn qu(&self) -> &SymMatrix {
        &self.qu
    }

    pub fn r(&self, j: usize) -> &SymMatrix {
        &self.r[j]
    }

    pub fn ru(&self, j: usize) -> &SymMatrix {
        &self.ru[j]
    }

    pub fn r_inv(&self, j: usize) -> &SymMatrix {
        &self.r_inv[j]
    }

    pub fn ru_inv(&self, j: usize) -> &SymMatrix {
        &self.ru_inv[j]
    }

    /// `ΔQ = Qu − Q`.
    pub fn dq(&self) -> SymMatrix {
        &self.qu - &self.q
    }

    /// `ΔR_j = Ru_j − R_j`.
    pub fn dr(&self, j: usize) -> SymMatrix {
        &self.ru[j] - &self.r[j]
    }
}

/// Stacked measurement model of sensor `i` after fusion.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedOperators {
    /// Fused weights `l_ij` for every `j`.
    pub row: Vec<f64>,
    /// Sensors with `l_ij > ACTIVE_THRESHOLD`, in increasing order.
    pub active: Vec<usize>,
    /// `1/(N l_ij)` for active `j`, zero otherwise.
    pub h_weights: Vec<f64>,
    pub htilde: Matrix,
    pub rtilde: SymMatrix,
    pub rbar: SymMatrix,
    pub rtilde_u: SymMatrix,
    pub rbar_u: SymMatrix,
    pub drbar: SymMatrix,
    /// Row offset of each active sensor's block.
    pub offsets: Vec<usize>,
}

fn block_diag(blocks: &[Matrix]) -> Matrix {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(total, total);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), b.shape()).copy_from(b);
        at += b.nrows();
    }
    out
}

pub fn validate_row(row: &[f64], n_sensors: usize) -> Result<()> {
    if row.len() != n_sensors {
        return Err(Error::InvalidArgument(format!(
            "consensus row has {} entries, expected {n_sensors}",
            row.len()
        )));
    }
    if row.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument("consensus row has a negative entry".into()));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("consensus row sums to {sum}")));
    }
    Ok(())
}

pub fn active_set(row: &[f64]) -> Vec<usize> {
    row.iter()
        .enumerate()
        .filter(|(_, &l)| l > ACTIVE_THRESHOLD)
        .map(|(j, _)| j)
        .collect()
}

pub fn build_stacked(model: &SystemModel, noise: &NoiseSpec, row: &[f64]) -> Result<StackedOperators> {
    let n_sensors = model.n_sensors();
    validate_row(row, n_sensors)?;
    let active = active_set(row);
    if active.is_empty() {
        return Err(Error::InvalidArgument("consensus row has no active sensor".into()));
    }
    let nf = n_sensors as f64;
    let mut h_weights = vec![0.0; n_sensors];
    for &j in &active {
        h_weights[j] = 1.0 / (nf * row[j]);
    }
    let mut offsets = Vec::with_capacity(active.len());
    let mut at = 0;
    for &j in &active {
        offsets.push(at);
        at += model.h(j).nrows();
    }
    let mut htilde = Matrix::zeros(at, model.n());
    for (&j, &off) in active.iter().zip(&offsets) {
        htilde.view_mut((off, 0), model.h(j).shape()).copy_from(model.h(j));
    }
    let stack = |f: &dyn Fn(usize) -> Matrix| -> SymMatrix {
        SymMatrix::from_square(block_diag(&active.iter().map(|&j| f(j)).collect::<Vec<_>>()))
    };
    Ok(StackedOperators {
        rtilde: stack(&|j| noise.r(j).matrix() * h_weights[j]),
        rbar: stack(&|j| noise.r(j).matrix().clone()),
        rtilde_u: stack(&|j| noise.ru(j).matrix() * h_weights[j]),
        rbar_u: stack(&|j| noise.ru(j).matrix().clone()),
        drbar: stack(&|j| noise.dr(j).into_matrix()),
        row: row.to_vec(),
        active,
        h_weights,
        htilde,
        offsets,
    })
}

impl StackedOperators {
    /// Inverse of the block-diagonal `diag(c_j M_j)` given per-sensor inverses.
    fn block_inverse(&self, inv: impl Fn(usize) -> Matrix) -> SymMatrix {
        SymMatrix::from_square(block_diag(&self.active.iter().map(|&j| inv(j)).collect::<Vec<_>>()))
    }

    /// `R̃⁻¹`, assembled blockwise.
    pub fn rtilde_inv(&self, noise: &NoiseSpec) -> SymMatrix {
        self.block_inverse(|j| noise.r_inv(j).matrix() / self.h_weights[j])
    }

    /// `R̃u⁻¹`, assembled blockwise.
    pub fn rtilde_u_inv(&self, noise: &NoiseSpec) -> SymMatrix {
        self.block_inverse(|j| noise.ru_inv(j).matrix() / self.h_weights[j])
    }

    /// `H̃ᵀ W H̃` for a symmetric weight `W` on the stacked measurement space.
    pub fn project(&self, w: &Matrix) -> SymMatrix {
        SymMatrix::from_square(self.htilde.transpose() * w * &self.htilde)
    }
}

/// `Σ_j N l_j H_jᵀ W_j H_j` over the active set.
pub fn information_sum(row: &[f64], h: &[Matrix], w_list: &[SymMatrix]) -> Result<SymMatrix> {
    weighted_kernel_sum(row, h, w_list, |nl| nl)
}

/// `Σ_j c(N l_j) H_jᵀ W_j H_j` over the active set.
pub fn weighted_kernel_sum(row: &[f64], h: &[Matrix], w_list: &[SymMatrix], c: impl Fn(f64) -> f64) -> Result<SymMatrix> {
    if row.len() != h.len() || h.len() != w_list.len() || h.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "row, H and weight lists have lengths {}, {}, {}",
            row.len(),
            h.len(),
            w_list.len()
        )));
    }
    let n = h[0].ncols();
    let nf = row.len() as f64;
    let mut acc = Matrix::zeros(n, n);
    for j in active_set(row) {
        acc += h[j].transpose() * w_list[j].matrix() * &h[j] * c(nf * row[j]);
    }
    Ok(SymMatrix::from_square(acc))
}
