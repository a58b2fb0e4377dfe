//! Communication topology, Metropolis consensus weights and the properties
//! of their powers.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_singular_value, Matrix};

const STOCHASTIC_TOL: f64 = 1e-12;
const BOUND_SLACK: f64 = 1e-12;

/// Undirected connected graph on `n` nodes, 0-indexed. Every node implicitly
/// communicates with itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Topology {
    /// Builds from 0-indexed edges. Duplicates and orientation are ignored;
    /// self-loops are rejected since they are implicit.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let t = Self::unchecked(n, edges)?;
        if !t.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(t)
    }

    fn unchecked(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("topology needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!("edge ({a}, {b}) references a node outside 0..{n}")));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop on node {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Topology { n, edges: set })
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &edges)
    }

    pub fn ring(n: usize) -> Result<Self> {
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n > 2 {
            edges.push((n - 1, 0));
        }
        Self::new(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self::new(n, &edges)
    }

    /// Ring 1–2–3–4–5–1 with the chord 2–4, the 5-sensor simulation network.
    pub fn five_node() -> Self {
        Self::new(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)]).expect("five-node topology is connected")
    }

    pub fn n_sensors(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Neighbors of `i`, excluding `i` itself.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| j != i && self.are_adjacent(i, j)).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// How `|N_i|` is counted in the Metropolis rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborConvention {
    /// `|N_i| = degree + 1`.
    #[default]
    IncludeSelf,
    /// `|N_i| = degree`.
    ExcludeSelf,
}

impl NeighborConvention {
    fn count(self, topology: &Topology, i: usize) -> usize {
        match self {
            NeighborConvention::IncludeSelf => topology.degree(i) + 1,
            NeighborConvention::ExcludeSelf => topology.degree(i),
        }
    }
}

/// Doubly stochastic weight matrix with positive diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusMatrix {
    l: Matrix,
}

impl ConsensusMatrix {
    pub fn new(l: Matrix) -> Result<Self> {
        if !l.is_square() || l.nrows() == 0 {
            return Err(Error::InvalidConsensus(format!("shape {:?} is not square", l.shape())));
        }
        if l.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidConsensus("negative or non-finite entry".into()));
        }
        let n = l.nrows();
        for i in 0..n {
            let r = l.row(i).sum();
            let c = l.column(i).sum();
            if (r - 1.0).abs() > STOCHASTIC_TOL || (c - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidConsensus(format!("row/column {i} sums to {r}/{c}")));
            }
            if !(l[(i, i)] > 0.0) {
                return Err(Error::InvalidConsensus(format!("diagonal entry {i} is not positive")));
            }
        }
        Ok(ConsensusMatrix { l })
    }

    pub fn n_sensors(&self) -> usize {
        self.l.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.l
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.l.row_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.l.column_iter().map(|c| c.sum()).collect()
    }

    pub fn power(&self, m: usize) -> Matrix {
        consensus_power(self, m)
    }
}

/// Metropolis weights without the consensus-matrix validation, so that
/// conventions producing a zero diagonal can still be evaluated.
pub fn metropolis_weights_raw(topology: &Topology, convention: NeighborConvention) -> Matrix {
    let n = topology.n_sensors();
    let mut l = Matrix::zeros(n, n);
    for (a, b) in topology.edges() {
        let w = 1.0 / convention.count(topology, a).max(convention.count(topology, b)) as f64;
        l[(a, b)] = w;
        l[(b, a)] = w;
    }
    for i in 0..n {
        l[(i, i)] = 1.0 - l.row(i).sum();
    }
    l
}

pub fn metropolis_weights(topology: &Topology, convention: NeighborConvention) -> Result<ConsensusMatrix> {
    if !topology.is_connected() {
        return Err(Error::Disconnected);
    }
    ConsensusMatrix::new(metropolis_weights_raw(topology, convention))
}

/// `L^m` by repeated multiplication.
pub fn consensus_power(l: &ConsensusMatrix, m: usize) -> Matrix {
    matrix_power(l.matrix(), m)
}

pub fn matrix_power(l: &Matrix, m: usize) -> Matrix {
    let mut p = Matrix::identity(l.nrows(), l.ncols());
    for _ in 0..m {
        p = &p * l;
    }
    p
}

/// All powers `L^0 … L^max_m`, each obtained from the previous one.
pub fn consensus_powers(l: &ConsensusMatrix, max_m: usize) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(max_m + 1);
    out.push(Matrix::identity(l.n_sensors(), l.n_sensors()));
    for m in 1..=max_m {
        out.push(&out[m - 1] * l.matrix());
    }
    out
}

/// The weight `γ` in `(N l)² − γ N l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Gamma {
    Zero,
    One,
}

impl Gamma {
    pub fn value(self) -> f64 {
        match self {
            Gamma::Zero => 0.0,
            Gamma::One => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusDeviation {
    pub lbar: Matrix,
    pub gamma: Gamma,
    pub m: usize,
}

pub fn deviation_entry(n: usize, l: f64, gamma: Gamma) -> f64 {
    let nl = n as f64 * l;
    nl * nl - gamma.value() * nl
}

pub fn deviation_from_power(lm: &Matrix, gamma: Gamma) -> Matrix {
    let n = lm.nrows();
    lm.map(|v| deviation_entry(n, v, gamma))
}

pub fn consensus_deviation(l: &ConsensusMatrix, m: usize, gamma: Gamma) -> ConsensusDeviation {
    ConsensusDeviation {
        lbar: deviation_from_power(&consensus_power(l, m), gamma),
        gamma,
        m,
    }
}

/// `‖L^m − 11ᵀ/N‖_F`.
pub fn consensus_error(lm: &Matrix) -> f64 {
    let n = lm.nrows();
    let j = Matrix::from_element(n, n, 1.0 / n as f64);
    (lm - j).norm()
}

fn check_order(d: usize, m: usize) -> Result<()> {
    if d == 0 || m < d {
        return Err(Error::InvalidArgument(format!("need m >= d >= 1, got d = {d}, m = {m}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowSumCheck {
    pub row: usize,
    pub lower: f64,
    pub sum_m: f64,
    pub sum_d: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MajorizationReport {
    pub d: usize,
    pub m: usize,
    pub gamma: Gamma,
    pub rows: Vec<RowSumCheck>,
    pub pass: bool,
}

/// Per row: `(1−γ)N ≤ Σ_j l̄^(m)_ij ≤ Σ_j l̄^(d)_ij`.
pub fn check_majorization_sums(l: &ConsensusMatrix, d: usize, m: usize, gamma: Gamma) -> Result<MajorizationReport> {
    check_order(d, m)?;
    let n = l.n_sensors();
    let lbar_d = deviation_from_power(&consensus_power(l, d), gamma);
    let lbar_m = deviation_from_power(&consensus_power(l, m), gamma);
    let lower = (1.0 - gamma.value()) * n as f64;
    let rows: Vec<_> = (0..n)
        .map(|i| {
            let sum_m = lbar_m.row(i).sum();
            let sum_d = lbar_d.row(i).sum();
            let slack = BOUND_SLACK * (1.0 + sum_d.abs());
            RowSumCheck {
                row: i,
                lower,
                sum_m,
                sum_d,
                pass: sum_m >= lower - slack && sum_m <= sum_d + slack,
            }
        })
        .collect();
    let pass = rows.iter().all(|r| r.pass);
    Ok(MajorizationReport { d, m, gamma, rows, pass })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntryBoundsReport {
    pub d: usize,
    pub m: usize,
    /// Smallest entry of `L^d`.
    pub l_low: f64,
    /// Largest entry of `L^d`.
    pub l_high: f64,
    pub entry_min: f64,
    pub entry_max: f64,
    pub pass: bool,
}

/// `l̲ ≤ [L^m]_ij ≤ l̄` with `l̲, l̄` the extreme entries of `L^d`, together
/// with `1/N ≤ l̄ ≤ 1` and `0 ≤ l̲ ≤ 1/N`.
pub fn check_entry_bounds(l: &ConsensusMatrix, d: usize, m: usize) -> Result<EntryBoundsReport> {
    check_order(d, m)?;
    let inv_n = 1.0 / l.n_sensors() as f64;
    let ld = consensus_power(l, d);
    let lm = consensus_power(l, m);
    let (l_low, l_high) = (ld.min(), ld.max());
    let (entry_min, entry_max) = (lm.min(), lm.max());
    let s = BOUND_SLACK;
    let pass =
        entry_min >= l_low - s && entry_max <= l_high + s && l_high >= inv_n - s && l_high <= 1.0 + s && l_low >= -s && l_low <= inv_n + s;
    Ok(EntryBoundsReport {
        d,
        m,
        l_low,
        l_high,
        entry_min,
        entry_max,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LbarBoundsReport {
    pub d: usize,
    pub m: usize,
    pub gamma: Gamma,
    pub lower: f64,
    pub upper: f64,
    pub entry_min: f64,
    pub entry_max: f64,
    pub pass: bool,
}

/// `min{−γ/4, f(l̲)} ≤ [L̄^m]_ij ≤ f(l̄)` with `f(x) = (Nx)² − γNx`.
pub fn check_lbar_bounds(l: &ConsensusMatrix, d: usize, m: usize, gamma: Gamma) -> Result<LbarBoundsReport> {
    check_order(d, m)?;
    let n = l.n_sensors();
    let ld = consensus_power(l, d);
    let lbar = deviation_from_power(&consensus_power(l, m), gamma);
    let lower = (-gamma.value() / 4.0).min(deviation_entry(n, ld.min(), gamma));
    let upper = deviation_entry(n, ld.max(), gamma);
    let (entry_min, entry_max) = (lbar.min(), lbar.max());
    let slack = BOUND_SLACK * (1.0 + upper.abs());
    Ok(LbarBoundsReport {
        d,
        m,
        gamma,
        lower,
        upper,
        entry_min,
        entry_max,
        pass: entry_min >= lower - slack && entry_max <= upper + slack,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HadamardVerdict {
    pub sigma_product: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `σ_max(A∘B) ≤ σ_max(A)·σ_max(B)` with `1e-12` slack.
pub fn check_hadamard_singular(a: &Matrix, b: &Matrix) -> Result<HadamardVerdict> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            op: "check_hadamard_singular",
            expected: a.shape(),
            found: b.shape(),
        });
    }
    let sigma_product = max_singular_value(&a.component_mul(b));
    let bound = max_singular_value(a) * max_singular_value(b);
    Ok(HadamardVerdict {
        sigma_product,
        bound,
        holds: sigma_product <= bound + 1e-12,
    })
}

/// Second largest eigenvalue modulus, which sets the consensus rate.
pub fn second_largest_abs_eigenvalue(l: &ConsensusMatrix) -> f64 {
    let mut mags: Vec<f64> = l.matrix().complex_eigenvalues().iter().map(|c| c.norm()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags.get(1).copied().unwrap_or(0.0)
}

/// Smallest `m ≥ 1` with `‖L^m − 11ᵀ/N‖_F < tol`, the finite stand-in for
/// an infinite number of fusion steps.
pub fn surrogate_fusion_step(l: &ConsensusMatrix, tol: f64, max_m: usize) -> Result<usize> {
    let mut p = l.matrix().clone();
    for m in 1..=max_m {
        if consensus_error(&p) < tol {
            return Ok(m);
        }
        p = &p * l.matrix();
    }
    Err(Error::NoConvergence {
        what: "consensus power",
        iterations: max_m,
        last_step: consensus_error(&p),
        detectable: true,
    })
}

/// Default tolerance for [`surrogate_fusion_step`].
pub const SURROGATE_TOL: f64 = 1e-10;

pub fn uniform_matrix(n: usize) -> Matrix {
    DMatrix::from_element(n, n, 1.0 / n as f64)
}
