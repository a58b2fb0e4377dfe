//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use cmdf_cli::infer::{infer_example_topology, EXAMPLE1_FUSION_STEPS, EXAMPLE1_SIGMA, EXAMPLE1_SIGMA_T, EXAMPLE1_TOL};
use cmdf_cli::Scenario;
use cmdf_core::analysis::{
    classify_relation, decompose_fs, decompose_tf, decompose_ts, ClassifyOptions, OneStep, RelationReport, TheoremId,
};
use cmdf_core::generate::{random_scenario, signed_scenario, MismatchSign, ScenarioShape};
use cmdf_core::linalg::{loewner_compare, SymMatrix, Vector};
use cmdf_core::model::build_stacked;
use cmdf_core::montecarlo::{run_monte_carlo, sampling_slope, McConfig};
use cmdf_core::network::{
    check_entry_bounds, check_lbar_bounds, check_majorization_sums, consensus_deviation, consensus_error, consensus_power,
    metropolis_weights, second_largest_abs_eigenvalue, surrogate_fusion_step, ConsensusMatrix, Gamma, NeighborConvention, Topology,
    SURROGATE_TOL,
};
use cmdf_core::stats::linear_fit;
use cmdf_core::steady_state::{check_convergence, solve_dare, steady_states, IterOptions};
use cmdf_core::{IndexPropagator, NoiseSpec, SystemModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHIPPED: [&str; 7] = ["example1", "case1", "case2", "case3a", "case3b", "case4", "case5"];
const SURROGATE_MAX: usize = 10_000;

type Outcome = Result<(bool, String), String>;

fn core_err(e: cmdf_core::Error) -> String {
    e.to_string()
}

fn shipped(name: &str) -> Result<Scenario, String> {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"));
    Scenario::load(&p).map(|(s, _)| s).map_err(|e| e.to_string())
}

fn row(l: &ConsensusMatrix, m: usize, i: usize) -> Vec<f64> {
    consensus_power(l, m).row(i).iter().copied().collect()
}

fn surrogate(l: &ConsensusMatrix) -> Result<usize, String> {
    surrogate_fusion_step(l, SURROGATE_TOL, SURROGATE_MAX).map_err(core_err)
}

fn scalar_noise(model: &SystemModel, q: f64, qu: f64, r: &[f64], ru: &[f64]) -> Result<NoiseSpec, String> {
    let s = SymMatrix::scalar;
    NoiseSpec::new(
        model,
        s(q),
        s(qu),
        r.iter().map(|&v| s(v)).collect(),
        ru.iter().map(|&v| s(v)).collect(),
    )
    .map_err(core_err)
}

/// Example 1 with the best inferred network.
fn ac01() -> Outcome {
    let cands = infer_example_topology().map_err(|e| e.to_string())?;
    let best = &cands[0];
    let s = shipped("example1")?;
    let frozen = s.file.topology.edges == best.edges && s.file.topology.convention == best.convention;
    let mut dev: f64 = 0.0;
    for i in 0..3 {
        let step =
            OneStep::from_equal_start(&s.model, &s.noise, &row(&s.consensus, EXAMPLE1_FUSION_STEPS, i), &s.sigma0).map_err(core_err)?;
        dev = dev.max((step.next.sigma_t[(0, 0)] - EXAMPLE1_SIGMA_T[i]).abs());
        dev = dev.max((step.next.sigma[(0, 0)] - EXAMPLE1_SIGMA[i]).abs());
    }
    Ok((
        dev < EXAMPLE1_TOL && frozen,
        format!(
            "best {} ({:?}) deviation {:.2e}, runner-up {:.2e}; shipped scenario deviation {:.2e}; frozen topology matches best: {frozen}",
            best.label, best.convention, best.max_deviation, cands[1].max_deviation, dev
        ),
    ))
}

/// Matched covariances: all three indices coincide.
fn ac02() -> Outcome {
    let (mut worst_f, mut worst_t) = (0.0f64, 0.0f64);
    let mut at = String::new();
    let mut limit_t: f64 = 0.0;
    for name in SHIPPED {
        let s = shipped(name)?;
        let noise = s.noise.matched();
        for l in 1..=10 {
            let prop = IndexPropagator::new(&s.model, &noise, &s.consensus, l).map_err(core_err)?;
            let (traj, _) = prop.run(&s.sigma0, 100).map_err(core_err)?;
            for (k, step) in traj.iter().enumerate().skip(1) {
                for (i, t) in step.iter().enumerate() {
                    let scale = 1.0 + t.sigma.frobenius();
                    let gf = (t.sigma.matrix() - t.sigma_f.matrix()).norm() / scale;
                    let gt = (t.sigma.matrix() - t.sigma_t.matrix()).norm() / scale;
                    worst_f = worst_f.max(gf);
                    if gt > worst_t {
                        worst_t = gt;
                        at = format!("{name} L={l} k={k} sensor {}", i + 1);
                    }
                }
            }
        }
        let ls = surrogate(&s.consensus)?;
        let prop = IndexPropagator::new(&s.model, &noise, &s.consensus, ls).map_err(core_err)?;
        let (traj, _) = prop.run(&s.sigma0, 100).map_err(core_err)?;
        for t in traj.iter().skip(1).flatten() {
            limit_t = limit_t.max((t.sigma.matrix() - t.sigma_t.matrix()).norm() / (1.0 + t.sigma.frobenius()));
        }
    }
    let tol = 1e-10;
    Ok((
        worst_f < tol && worst_t < tol,
        format!(
            "max ‖Σ−Σf‖/scale {worst_f:.2e}, max ‖Σ−Σt‖/scale {worst_t:.2e} (at {at}), tolerance {tol:.0e}; at the L→∞ stand-in ‖Σ−Σt‖/scale {limit_t:.2e}"
        ),
    ))
}

/// Difference decompositions on random scenarios.
fn ac03() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC03);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut bump = |k: &'static str, v: f64| {
        let e = worst.entry(k).or_insert(0.0);
        *e = e.max(v);
    };
    let mut steps = 0;
    for _ in 0..1000 {
        let shape = ScenarioShape::random(&mut rng, 4, 6);
        let sc = random_scenario(&mut rng, shape);
        let l = rng.random_range(1..=6);
        let p = consensus_power(&sc.consensus, l);
        for i in 0..shape.n_sensors {
            let r: Vec<f64> = p.row(i).iter().copied().collect();
            let step = OneStep::from_equal_start(&sc.model, &sc.noise, &r, &sc.sigma_prev).map_err(core_err)?;
            let ts = decompose_ts(&step).map_err(core_err)?;
            let tf = decompose_tf(&step, &sc.model, &sc.noise).map_err(core_err)?;
            let fs = decompose_fs(&step, &sc.model, &sc.noise).map_err(core_err)?;
            bump("ts", ts.reconstruction_residual.max(ts.raw_form_residual));
            bump("tf", tf.reconstruction_residual.max(tf.expansion_residual));
            bump("fs", fs.reconstruction_residual.max(fs.expansion_residual));
            bump("phi_split", step.phi.phi_split_residual);
            steps += 1;
        }
    }
    let props_ok = ["ts", "tf", "fs"].iter().all(|k| worst[k] < 1e-9);
    Ok((
        props_ok && worst["phi_split"] < 1e-10,
        format!(
            "1000 scenarios, {steps} sensor steps; max residual t−s {:.2e}, t−f {:.2e}, f−s {:.2e} (tol 1e-9); Φ split {:.2e} (tol 1e-10)",
            worst["ts"], worst["tf"], worst["fs"], worst["phi_split"]
        ),
    ))
}

/// Single sensor: the true covariance never beats the standard index.
fn ac04() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC04);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let mut shape = ScenarioShape::random(&mut rng, 4, 1);
        shape.n_sensors = 1;
        let sc = random_scenario(&mut rng, shape);
        let step = OneStep::from_equal_start(&sc.model, &sc.noise, &[1.0], &sc.sigma_prev).map_err(core_err)?;
        let t = &step.next;
        let margin = (&t.sigma_t - &t.sigma).min_eigenvalue() / (1.0 + t.sigma_t.frobenius());
        worst = worst.min(margin);
    }
    Ok((
        worst >= -1e-9,
        format!("1000 single-sensor mismatches; min λmin(Σt−Σ)/scale {worst:.2e} (bound −1e-9)"),
    ))
}

/// Geometric decay of the consensus deviations on the 5-node network.
fn ac05() -> Outcome {
    let l = metropolis_weights(&Topology::five_node(), NeighborConvention::IncludeSelf).map_err(core_err)?;
    let ms: Vec<f64> = (5..=40).map(|m| m as f64).collect();
    let lbar: Vec<f64> = (5..=40).map(|m| consensus_deviation(&l, m, Gamma::One).lbar.norm().ln()).collect();
    let dev: Vec<f64> = (5..=40).map(|m| consensus_error(&consensus_power(&l, m)).ln()).collect();
    let a = linear_fit(&ms, &lbar).ok_or("degenerate fit")?;
    let b = linear_fit(&ms, &dev).ok_or("degenerate fit")?;
    let lambda2 = second_largest_abs_eigenvalue(&l);
    Ok((
        a.slope < 0.0 && a.r_squared > 0.99 && b.slope < 0.0 && b.r_squared > 0.99,
        format!(
            "‖L̄^m‖ slope {:.4} R² {:.6}; ‖L^m−J‖ slope {:.4} R² {:.6}; ln λ2 = {:.4}",
            a.slope,
            a.r_squared,
            b.slope,
            b.r_squared,
            lambda2.ln()
        ),
    ))
}

/// Majorization sums, entry bounds and L̄ bounds.
fn ac06() -> Outcome {
    let tops = [
        ("five-node", Topology::five_node()),
        ("path-3", Topology::path(3).map_err(core_err)?),
        ("ring-6", Topology::ring(6).map_err(core_err)?),
    ];
    let (mut checks, mut failures) = (0usize, Vec::new());
    for (name, t) in &tops {
        let l = metropolis_weights(t, NeighborConvention::IncludeSelf).map_err(core_err)?;
        for m in 1..=50 {
            for d in 1..=m {
                let mut ok = check_entry_bounds(&l, d, m).map_err(core_err)?.pass;
                checks += 1;
                for g in [Gamma::Zero, Gamma::One] {
                    ok &= check_majorization_sums(&l, d, m, g).map_err(core_err)?.pass;
                    ok &= check_lbar_bounds(&l, d, m, g).map_err(core_err)?.pass;
                    checks += 2;
                }
                if !ok {
                    failures.push(format!("{name} d={d} m={m}"));
                }
            }
        }
    }
    let shown: Vec<_> = failures.iter().take(5).cloned().collect();
    Ok((
        failures.is_empty(),
        format!("{checks} checks on 3 topologies, {} failing (d, m) pairs {shown:?}", failures.len()),
    ))
}

fn dr_patterns(n: usize) -> Vec<(&'static str, Vec<MismatchSign>)> {
    use MismatchSign::*;
    let mut one_pos = vec![Zero; n];
    one_pos[0] = Positive;
    let mut one_neg = vec![Zero; n];
    one_neg[0] = Negative;
    let mixed: Vec<MismatchSign> = (0..n).map(|j| if j % 2 == 0 { Positive } else { Negative }).collect();
    vec![
        ("zero", vec![Zero; n]),
        ("all+", vec![Positive; n]),
        ("all-", vec![Negative; n]),
        ("one+", one_pos),
        ("one-", one_neg),
        ("mixed", mixed),
    ]
}

/// One-step relation theorems over a sign-patterned grid.
fn ac07() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC07);
    let l_max = 10;
    let mut asserted: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut counter = Vec::new();
    let mut evaluated = 0usize;
    for dq in MismatchSign::ALL {
        for rep in 0..12 {
            let shape = ScenarioShape::random(&mut rng, 3, 5);
            for (pname, dr) in dr_patterns(shape.n_sensors) {
                let sc = signed_scenario(&mut rng, shape, dq, &dr);
                let ls = surrogate(&sc.consensus)?;
                let mut list: Vec<(usize, bool)> = (1..=l_max).map(|l| (l, false)).collect();
                list.push((ls.max(l_max + 1), true));
                for (l, at_limit) in list {
                    let p = consensus_power(&sc.consensus, l);
                    for i in 0..shape.n_sensors {
                        let r: Vec<f64> = p.row(i).iter().copied().collect();
                        let step = OneStep::from_equal_start(&sc.model, &sc.noise, &r, &sc.sigma_prev).map_err(core_err)?;
                        let opts = ClassifyOptions {
                            at_limit,
                            ..ClassifyOptions::default()
                        };
                        for rep_ in classify_relation(&step, &sc.noise, shape.n_sensors, opts).map_err(core_err)? {
                            evaluated += 1;
                            if rep_.asserted {
                                *asserted.entry(rep_.theorem.name()).or_default() += 1;
                            }
                            if rep_.counterexample() {
                                counter.push(format!(
                                    "{} ΔQ {dq:?} ΔR {pname} rep {rep} L={l} sensor {}",
                                    rep_.theorem.name(),
                                    i + 1
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    let shown: Vec<_> = counter.iter().take(5).cloned().collect();
    Ok((
        counter.is_empty(),
        format!(
            "{evaluated} theorem evaluations, asserted per theorem {asserted:?}; counterexamples {} {shown:?}",
            counter.len()
        ),
    ))
}

/// Multi-step chain for a Case-5-style scenario.
fn ac08() -> Outcome {
    let model = SystemModel::scalar(2.0, 1.0, 5).map_err(core_err)?;
    let noise = scalar_noise(&model, 10.0, 20.0, &[10.0; 5], &[20.0; 5])?;
    let l = metropolis_weights(&Topology::five_node(), NeighborConvention::IncludeSelf).map_err(core_err)?;
    let prop = IndexPropagator::new(&model, &noise, &l, 5).map_err(core_err)?;
    let (traj, _) = prop.run(&SymMatrix::scalar(20.0), 200).map_err(core_err)?;
    let (mut ft, mut ts) = (f64::INFINITY, f64::INFINITY);
    let mut ok = true;
    for t in traj.iter().skip(1).flatten() {
        let tol = 1e-9 * (1.0 + t.sigma_f.frobenius());
        ok &= loewner_compare(t.sigma_f.matrix(), t.sigma_t.matrix(), tol)
            .map_err(core_err)?
            .is_geq();
        ok &= loewner_compare(t.sigma_t.matrix(), t.sigma.matrix(), tol)
            .map_err(core_err)?
            .is_geq();
        ft = ft.min((&t.sigma_f - &t.sigma_t).min_eigenvalue());
        ts = ts.min((&t.sigma_t - &t.sigma).min_eigenvalue());
    }
    Ok((
        ok,
        format!("k = 1..200, 5 sensors; min λmin(Σf−Σt) {ft:.3e}, min λmin(Σt−Σ) {ts:.3e}"),
    ))
}

fn scenario_fusion_list(s: &Scenario) -> Result<Vec<usize>, String> {
    let mut ls = s.file.sweep.l_list.clone();
    if s.file.sweep.include_surrogate {
        let m = surrogate(&s.consensus)?;
        if !ls.contains(&m) {
            ls.push(m);
        }
    }
    Ok(ls)
}

/// Steady state reached by the recursions, and the two DLE routes agree.
fn ac09() -> Outcome {
    let (mut nominal, mut truth, mut route) = (0.0f64, 0.0f64, 0.0f64);
    let mut runs = 0;
    for name in SHIPPED {
        let s = shipped(name)?;
        for l in scenario_fusion_list(&s)? {
            let ss = steady_states(&s.model, &s.noise, &s.consensus, l, &s.sigma0, IterOptions::default()).map_err(core_err)?;
            let prop = IndexPropagator::new(&s.model, &s.noise, &s.consensus, l).map_err(core_err)?;
            let c = check_convergence(&prop, &s.sigma0, 2000, &ss).map_err(core_err)?;
            nominal = nominal.max(c.nominal_gap);
            truth = truth.max(c.true_gap);
            for st in &ss {
                route = route.max(st.dle.route_gap);
            }
            runs += 1;
        }
    }
    let model = SystemModel::scalar(1.0, 1.0, 1).map_err(core_err)?;
    let noise = scalar_noise(&model, 1.0, 1.0, &[1.0], &[1.0])?;
    let stacked = build_stacked(&model, &noise, &[1.0]).map_err(core_err)?;
    let dare = solve_dare(&model, &noise, &stacked, &SymMatrix::scalar(1.0), IterOptions::default()).map_err(core_err)?;
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let g = (dare.sigma_f_bar[(0, 0)] - golden).abs();
    Ok((
        nominal < 1e-8 && truth < 1e-8 && route < 1e-9 && g < 1e-10,
        format!(
            "{runs} (scenario, L) pairs at k=2000: max rel gap nominal {nominal:.2e}, true {truth:.2e} (tol 1e-8); DLE route gap {route:.2e} (tol 1e-9); golden-ratio error {g:.2e}"
        ),
    ))
}

/// Steady-state trace bound and its pre-norm identity.
fn ac10() -> Outcome {
    let (mut violations, mut identity, mut evaluated) = (Vec::new(), 0.0f64, 0usize);
    let mut consensus_ok = true;
    let mut tails = Vec::new();
    for name in SHIPPED {
        let s = shipped(name)?;
        let ls = surrogate(&s.consensus)?;
        let mut list: Vec<usize> = (1..=10).collect();
        list.push(ls.max(11));
        let mut ct = Vec::new();
        for &l in &list {
            let ss = steady_states(&s.model, &s.noise, &s.consensus, l, &s.sigma0, IterOptions::default()).map_err(core_err)?;
            let mut worst_ct: f64 = 0.0;
            for st in &ss {
                let b = &st.terms.bound;
                evaluated += 1;
                identity = identity.max(b.identity_residual);
                if !b.holds {
                    violations.push(format!("{name} L={l} sensor {}", st.sensor + 1));
                }
                worst_ct = worst_ct.max(b.consensus_term.abs() / (1.0 + b.tr_sigma_f_bar));
            }
            ct.push(worst_ct);
        }
        let last = *ct.last().unwrap();
        consensus_ok &= last < 1e-8 && last <= ct[0];
        tails.push(format!("{name} {:.1e}→{:.1e}", ct[0], last));
    }
    Ok((
        violations.is_empty() && identity < 1e-9 && consensus_ok,
        format!(
            "{evaluated} (scenario, L, sensor) bounds, {} violations {:?}; identity residual {identity:.2e}; relative consensus term L=1→L∞ [{}]",
            violations.len(),
            violations.iter().take(5).collect::<Vec<_>>(),
            tails.join(", ")
        ),
    ))
}

/// Monte-Carlo second moment and its sampling rate.
fn ac11() -> Outcome {
    let s = shipped("example1")?;
    let cfg = McConfig {
        n_runs: 1_000_000,
        horizon: 1,
        seed: 0xAC11,
        ci_level: 0.95,
    };
    let x0 = Vector::zeros(1);
    let rep = run_monte_carlo(&s.model, &s.noise, &s.consensus, EXAMPLE1_FUSION_STEPS, &x0, &s.sigma0, cfg).map_err(core_err)?;
    let worst = rep.max_rel_error();
    let base = McConfig { n_runs: 1000, ..cfg };
    let slope = sampling_slope(
        &s.model,
        &s.noise,
        &s.consensus,
        EXAMPLE1_FUSION_STEPS,
        &x0,
        &s.sigma0,
        base,
        &[1_000, 10_000, 100_000],
        16,
    )
    .map_err(core_err)?;
    let fit = slope.fit.ok_or("degenerate slope fit")?;
    Ok((
        worst < 0.01 && (fit.slope + 0.5).abs() <= 0.15,
        format!(
            "1e6 runs: max per-sensor relative Frobenius error {worst:.2e} (tol 1e-2), cell checks pass {}; sampling slope {:.3} (target −0.5 ± 0.15, R² {:.3})",
            rep.pass, fit.slope, fit.r_squared
        ),
    ))
}

fn find(reps: &[RelationReport], id: TheoremId) -> &RelationReport {
    reps.iter().find(|r| r.theorem == id).expect("every theorem is reported")
}

/// Qualitative structure of the simulation cases on the shipped network.
fn ac12() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let c1 = shipped("case1")?;
    let mut crossings = Vec::new();
    for i in 0..5 {
        let mut first_t32 = None;
        let mut first_t31_after = None;
        for l in 1..=30 {
            let step = OneStep::from_equal_start(&c1.model, &c1.noise, &row(&c1.consensus, l, i), &c1.sigma0).map_err(core_err)?;
            let reps = classify_relation(&step, &c1.noise, 5, ClassifyOptions::default()).map_err(core_err)?;
            let t32 = find(&reps, TheoremId::T3_2);
            let t31 = find(&reps, TheoremId::T3_1);
            if t32.asserted && t32.holds && first_t32.is_none() {
                first_t32 = Some(l);
            }
            if first_t32.is_some() && first_t31_after.is_none() && t31.asserted && t31.holds {
                first_t31_after = Some(l);
            }
        }
        if let (Some(a), Some(b)) = (first_t32, first_t31_after) {
            crossings.push(format!("sensor {} T3-2 at L={a}, T3-1 from L={b}", i + 1));
        }
    }
    ok &= !crossings.is_empty();
    notes.push(format!("case1 crossover [{}]", crossings.join("; ")));

    let opts = ClassifyOptions {
        at_limit: true,
        ..ClassifyOptions::default()
    };
    for (name, id) in [("case2", TheoremId::T4_1), ("case3a", TheoremId::T5_1), ("case3b", TheoremId::T5_2)] {
        let s = shipped(name)?;
        let ls = surrogate(&s.consensus)?;
        let mut held = 0;
        for i in 0..5 {
            let step = OneStep::from_equal_start(&s.model, &s.noise, &row(&s.consensus, ls, i), &s.sigma0).map_err(core_err)?;
            let reps = classify_relation(&step, &s.noise, 5, opts).map_err(core_err)?;
            let r = find(&reps, id);
            if r.asserted && r.holds {
                held += 1;
            }
        }
        ok &= held == 5;
        notes.push(format!("{name} {} at L={ls}: {held}/5", id.name()));
    }

    // Φts vanishes at the stand-in, so the T6-2 bundle sits on its boundary;
    // the ordering itself is checked directly.
    let c4 = shipped("case4")?;
    let ls = surrogate(&c4.consensus)?;
    let mut chain = 0;
    for i in 0..5 {
        let t = OneStep::from_equal_start(&c4.model, &c4.noise, &row(&c4.consensus, ls, i), &c4.sigma0)
            .map_err(core_err)?
            .next;
        let tol = 1e-9 * (1.0 + t.sigma_f.frobenius());
        let a = loewner_compare(t.sigma_t.matrix(), t.sigma.matrix(), tol)
            .map_err(core_err)?
            .is_geq();
        let b = loewner_compare(t.sigma_f.matrix(), t.sigma_t.matrix(), tol)
            .map_err(core_err)?
            .is_geq();
        if a && b {
            chain += 1;
        }
    }
    ok &= chain == 5;
    notes.push(format!("case4 Σ ⪯ Σt ⪯ Σf at L={ls}: {chain}/5"));

    let c5 = shipped("case5")?;
    let mut held = 0;
    for i in 0..5 {
        let step = OneStep::from_equal_start(&c5.model, &c5.noise, &row(&c5.consensus, 5, i), &c5.sigma0).map_err(core_err)?;
        let r = classify_relation(&step, &c5.noise, 5, ClassifyOptions::default()).map_err(core_err)?;
        if find(&r, TheoremId::T6_2).asserted && find(&r, TheoremId::T6_2).holds {
            held += 1;
        }
    }
    ok &= held == 5;
    notes.push(format!("case5 T6-2 at L=5: {held}/5"));

    let mut flat = Vec::new();
    for name in ["case1", "case2", "case3a", "case3b", "case4", "case5"] {
        let s = shipped(name)?;
        let ls = surrogate(&s.consensus)?;
        let idx = |l: usize, i: usize| -> Result<[f64; 3], String> {
            let st = OneStep::from_equal_start(&s.model, &s.noise, &row(&s.consensus, l, i), &s.sigma0).map_err(core_err)?;
            Ok([st.next.sigma.trace(), st.next.sigma_f.trace(), st.next.sigma_t.trace()])
        };
        let (mut g1, mut g30) = (0.0f64, 0.0f64);
        for i in 0..5 {
            let lim = idx(ls, i)?;
            let a = idx(1, i)?;
            let b = idx(30, i)?;
            for c in 0..3 {
                g1 = g1.max((a[c] - lim[c]).abs() / (1.0 + lim[c].abs()));
                g30 = g30.max((b[c] - lim[c]).abs() / (1.0 + lim[c].abs()));
            }
        }
        ok &= g30 < 1e-4 && g30 <= 1e-3 * g1.max(f64::MIN_POSITIVE) || g1 == 0.0;
        flat.push(format!("{name} {g1:.1e}→{g30:.1e}"));
    }
    notes.push(format!("index gap to L∞ at L=1→L=30 [{}]", flat.join(", ")));
    Ok((ok, notes.join("; ")))
}

fn main() {
    let criteria: [(&str, &str, f64, fn() -> Outcome); 12] = [
        ("AC-01", "example-1 regression", 1.0, ac01),
        ("AC-02", "matched-covariance collapse", 5.0, ac02),
        ("AC-03", "proposition reconstructions", 60.0, ac03),
        ("AC-04", "single-sensor ordering", 10.0, ac04),
        ("AC-05", "consensus decay", 1.0, ac05),
        ("AC-06", "consensus matrix bounds", 5.0, ac06),
        ("AC-07", "one-step relation theorems", 120.0, ac07),
        ("AC-08", "recursive chain", 5.0, ac08),
        ("AC-09", "steady-state convergence", 30.0, ac09),
        ("AC-10", "steady-state trace bounds", 30.0, ac10),
        ("AC-11", "monte-carlo validation", 300.0, ac11),
        ("AC-12", "simulation cases, qualitative", 30.0, ac12),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC-")).collect();
    let mut failed = Vec::new();
    for (id, name, budget, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = f();
        let secs = t0.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok((p, d)) => (p && secs <= budget, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let over = if secs > budget { " over budget" } else { "" };
        println!(
            "{} {id} {name} [{secs:.2} s / {budget} s{over}]: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: {} failing: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}
