//! Recovers the 3-sensor example network from its reference one-step values.

use std::io::Write;

use cmdf_core::analysis::OneStep;
use cmdf_core::linalg::SymMatrix;
use cmdf_core::network::{matrix_power, metropolis_weights_raw, ConsensusMatrix, NeighborConvention, Topology};
use cmdf_core::{NoiseSpec, SystemModel};
use serde::Serialize;

use crate::error::{numerical, CliError};

/// Reference `Σt` per sensor after one step at `L = 2`.
pub const EXAMPLE1_SIGMA_T: [f64; 3] = [0.1406, 0.0821, 0.0873];
/// Reference `Σ` per sensor after one step at `L = 2`.
pub const EXAMPLE1_SIGMA: [f64; 3] = [0.1613, 0.0820, 0.0549];
pub const EXAMPLE1_FUSION_STEPS: usize = 2;
pub const EXAMPLE1_SIGMA_PREV: f64 = 4.0;
/// Reference values carry four decimals.
pub const EXAMPLE1_TOL: f64 = 5e-5;

pub fn example1_model() -> (SystemModel, NoiseSpec) {
    let model = SystemModel::scalar(1.0, 1.0, 3).expect("scalar model");
    let s = SymMatrix::scalar;
    let noise =
        NoiseSpec::new(&model, s(1.0), s(2.0), vec![s(1.0), s(1.0), s(0.1)], vec![s(1.0), s(1.0), s(0.11)]).expect("positive covariances");
    (model, noise)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub label: String,
    /// 1-based.
    pub edges: Vec<[usize; 2]>,
    pub convention: NeighborConvention,
    /// The Metropolis matrix has a positive diagonal.
    pub valid_consensus: bool,
    pub sigma_t: [f64; 3],
    pub sigma: [f64; 3],
    pub max_deviation: f64,
}

impl Candidate {
    pub fn matches(&self) -> bool {
        self.max_deviation < EXAMPLE1_TOL
    }
}

/// The three labelled paths and the triangle on `{1, 2, 3}`.
pub fn three_node_graphs() -> Vec<(String, Vec<[usize; 2]>)> {
    vec![
        ("path 2-1-3".into(), vec![[1, 2], [1, 3]]),
        ("path 1-2-3".into(), vec![[1, 2], [2, 3]]),
        ("path 1-3-2".into(), vec![[1, 3], [2, 3]]),
        ("triangle".into(), vec![[1, 2], [1, 3], [2, 3]]),
    ]
}

/// All candidates ranked by maximum absolute deviation from the six
/// reference values.
pub fn infer_example_topology() -> Result<Vec<Candidate>, CliError> {
    let (model, noise) = example1_model();
    let sigma_prev = SymMatrix::scalar(EXAMPLE1_SIGMA_PREV);
    let mut out = Vec::new();
    for (label, edges) in three_node_graphs() {
        let zero_based: Vec<(usize, usize)> = edges.iter().map(|&[a, b]| (a - 1, b - 1)).collect();
        let topology = Topology::new(3, &zero_based).map_err(numerical("network", "Topology::new"))?;
        for convention in [NeighborConvention::IncludeSelf, NeighborConvention::ExcludeSelf] {
            let raw = metropolis_weights_raw(&topology, convention);
            let valid_consensus = ConsensusMatrix::new(raw.clone()).is_ok();
            let power = matrix_power(&raw, EXAMPLE1_FUSION_STEPS);
            let mut sigma_t = [0.0; 3];
            let mut sigma = [0.0; 3];
            let mut dev: f64 = 0.0;
            for i in 0..3 {
                let row: Vec<f64> = power.row(i).iter().copied().collect();
                let step = OneStep::from_equal_start(&model, &noise, &row, &sigma_prev)
                    .map_err(numerical("analysis", "OneStep::from_equal_start"))?;
                sigma_t[i] = step.next.sigma_t[(0, 0)];
                sigma[i] = step.next.sigma[(0, 0)];
                dev = dev
                    .max((sigma_t[i] - EXAMPLE1_SIGMA_T[i]).abs())
                    .max((sigma[i] - EXAMPLE1_SIGMA[i]).abs());
            }
            out.push(Candidate {
                label: label.clone(),
                edges: edges.clone(),
                convention,
                valid_consensus,
                sigma_t,
                sigma,
                max_deviation: dev,
            });
        }
    }
    out.sort_by(|a, b| a.max_deviation.total_cmp(&b.max_deviation));
    Ok(out)
}

pub fn write_candidates_csv<W: Write>(cands: &[Candidate], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rank",
        "label",
        "convention",
        "valid_consensus",
        "sigma_t_1",
        "sigma_t_2",
        "sigma_t_3",
        "sigma_1",
        "sigma_2",
        "sigma_3",
        "max_deviation",
    ])?;
    for (rank, c) in cands.iter().enumerate() {
        let conv = match c.convention {
            NeighborConvention::IncludeSelf => "include_self",
            NeighborConvention::ExcludeSelf => "exclude_self",
        };
        let mut rec = vec![
            (rank + 1).to_string(),
            c.label.clone(),
            conv.to_string(),
            c.valid_consensus.to_string(),
        ];
        rec.extend(c.sigma_t.iter().chain(&c.sigma).map(|v| v.to_string()));
        rec.push(c.max_deviation.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_candidates_and_unique_match() {
        let c = infer_example_topology().unwrap();
        assert_eq!(c.len(), 8);
        assert!(c[0].matches(), "{:?}", c[0]);
        assert!(!c[1].matches());
        assert_eq!(c[0].label, "path 1-2-3");
        assert_eq!(c[0].convention, NeighborConvention::IncludeSelf);
        assert!(c.windows(2).all(|w| w[0].max_deviation <= w[1].max_deviation));
    }
}
