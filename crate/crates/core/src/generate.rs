//! Seeded random scenario generators for property tests, acceptance runs and
//! benchmarks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{Matrix, SymMatrix};
use crate::model::{NoiseSpec, SystemModel};
use crate::network::{metropolis_weights, ConsensusMatrix, NeighborConvention, Topology};

/// Sign of a covariance mismatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MismatchSign {
    Negative,
    Zero,
    Positive,
}

impl MismatchSign {
    pub const ALL: [MismatchSign; 3] = [MismatchSign::Negative, MismatchSign::Zero, MismatchSign::Positive];
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `A Aᵀ / n + floor·I` with Gaussian `A`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, floor: f64) -> SymMatrix {
    let a = gaussian_matrix(rng, n, n);
    SymMatrix::from_square(&a * a.transpose() / n as f64 + Matrix::identity(n, n) * floor)
}

/// `base + s·E` with `E ≻ 0` and `‖E‖₂ ≤ frac·λ_min(base)`, so the result
/// stays positive definite for `frac < 1`.
pub fn perturb<R: Rng + ?Sized>(rng: &mut R, base: &SymMatrix, sign: MismatchSign, frac: f64) -> SymMatrix {
    let s = match sign {
        MismatchSign::Zero => return base.clone(),
        MismatchSign::Positive => 1.0,
        MismatchSign::Negative => -1.0,
    };
    let e = random_spd(rng, base.dim(), 0.1);
    let scale = frac * base.min_eigenvalue() / e.max_eigenvalue();
    &base.clone() + &e.scale(s * scale)
}

/// Random spanning tree plus each remaining pair with probability `p_extra`.
pub fn random_connected_topology<R: Rng + ?Sized>(rng: &mut R, n: usize, p_extra: f64) -> Topology {
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.random_range(0..i), i));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !edges.contains(&(i, j)) && rng.random_bool(p_extra) {
                edges.push((i, j));
            }
        }
    }
    Topology::new(n, &edges).expect("spanning tree is connected")
}

/// A random linear model with its noise, network and previous covariance.
#[derive(Clone, Debug)]
pub struct RandomScenario {
    pub model: SystemModel,
    pub noise: NoiseSpec,
    pub consensus: ConsensusMatrix,
    pub sigma_prev: SymMatrix,
}

#[derive(Clone, Copy, Debug)]
pub struct ScenarioShape {
    pub n: usize,
    pub n_sensors: usize,
    /// Largest per-sensor measurement dimension.
    pub max_m: usize,
}

impl ScenarioShape {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_n: usize, max_sensors: usize) -> Self {
        let n = rng.random_range(1..=max_n);
        ScenarioShape {
            n,
            n_sensors: rng.random_range(1..=max_sensors),
            max_m: n.min(2),
        }
    }
}

/// Random model with independent random nominal covariances.
pub fn random_scenario<R: Rng + ?Sized>(rng: &mut R, shape: ScenarioShape) -> RandomScenario {
    build(rng, shape, |rng, base| random_spd(rng, base.dim(), 0.2))
}

/// Random model whose nominal covariances deviate from the actual ones with
/// the given signs: `dq` for the process noise, `dr[j]` per sensor.
pub fn signed_scenario<R: Rng + ?Sized>(rng: &mut R, shape: ScenarioShape, dq: MismatchSign, dr: &[MismatchSign]) -> RandomScenario {
    assert_eq!(dr.len(), shape.n_sensors, "one sign per sensor");
    let mut idx = 0;
    let signs: Vec<MismatchSign> = std::iter::once(dq).chain(dr.iter().copied()).collect();
    build(rng, shape, |rng, base| {
        let s = signs[idx];
        idx += 1;
        perturb(rng, base, s, 0.6)
    })
}

fn build<R: Rng + ?Sized>(rng: &mut R, shape: ScenarioShape, mut nominal: impl FnMut(&mut R, &SymMatrix) -> SymMatrix) -> RandomScenario {
    let ScenarioShape { n, n_sensors, max_m } = shape;
    let f = gaussian_matrix(rng, n, n) / (n as f64).sqrt();
    let h: Vec<Matrix> = (0..n_sensors)
        .map(|_| {
            let m = rng.random_range(1..=max_m.max(1));
            gaussian_matrix(rng, m, n)
        })
        .collect();
    let model = SystemModel::new(f, h).expect("shapes are consistent");
    let q = random_spd(rng, n, 0.2);
    let qu = nominal(rng, &q);
    let r: Vec<SymMatrix> = model.sensor_dims().iter().map(|&m| random_spd(rng, m, 0.2)).collect();
    let ru: Vec<SymMatrix> = r.iter().map(|rj| nominal(rng, rj)).collect();
    let noise = NoiseSpec::new(&model, q, qu, r, ru).expect("generated covariances are SPD");
    let topology = random_connected_topology(rng, n_sensors, 0.3);
    let consensus = metropolis_weights(&topology, NeighborConvention::IncludeSelf).expect("connected topology");
    let sigma_prev = random_spd(rng, n, 0.2);
    RandomScenario {
        model,
        noise,
        consensus,
        sigma_prev,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perturbation_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let base = random_spd(&mut rng, 3, 0.2);
            let up = perturb(&mut rng, &base, MismatchSign::Positive, 0.6);
            let down = perturb(&mut rng, &base, MismatchSign::Negative, 0.6);
            assert!((&up - &base).min_eigenvalue() > 0.0);
            assert!((&down - &base).max_eigenvalue() < 0.0);
            assert!(down.is_positive_definite());
        }
    }

    #[test]
    fn scenarios_are_reproducible() {
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let shape = ScenarioShape::random(&mut rng, 4, 6);
            random_scenario(&mut rng, shape)
        };
        let (a, b) = (make(), make());
        assert_eq!(a.model, b.model);
        assert_eq!(a.sigma_prev, b.sigma_prev);
    }
}
