use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmdf"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

fn tmp(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cmdf-cli-test-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// `(sensor, L, k, quantity) -> value` rows of a long-format CSV.
fn long_rows(path: &Path) -> Vec<(usize, usize, String, String, f64)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (
                rec[0].parse().unwrap(),
                rec[1].parse().unwrap(),
                rec[2].to_string(),
                rec[3].to_string(),
                rec[4].parse().unwrap(),
            )
        })
        .collect()
}

fn write_variant(tag: &str, base: &str, edit: impl Fn(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(scenario(base)).unwrap()).unwrap();
    edit(&mut v);
    let dir = tmp(tag);
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("scenario.json");
    std::fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

#[test]
fn every_bundled_scenario_validates() {
    for name in ["example1", "case1", "case2", "case3a", "case3b", "case4", "case5"] {
        let o = run(&["validate", scenario(name).to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}

#[test]
fn example1_run_reproduces_reference_values() {
    let out = tmp("ex1");
    let o = run(&["run", scenario("example1").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = long_rows(&out.join("indices_vs_L.csv"));
    let get = |sensor: usize, q: &str| rows.iter().find(|r| r.0 == sensor && r.1 == 2 && r.3 == q).unwrap().4;
    let st = [0.1406, 0.0821, 0.0873];
    let s = [0.1613, 0.0820, 0.0549];
    for i in 0..3 {
        assert!((get(i + 1, "tr_sigma_t") - st[i]).abs() < 5e-5);
        assert!((get(i + 1, "tr_sigma") - s[i]).abs() < 5e-5);
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["monte_carlo_pass"], true);
    assert_eq!(manifest["seed"], 20240601);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let (a, b) = (tmp("rerun-a"), tmp("rerun-b"));
    let p = scenario("example1");
    assert!(run(&["run", p.to_str().unwrap(), "--out", a.to_str().unwrap(), "--threads", "1"])
        .status
        .success());
    assert!(run(&["run", p.to_str().unwrap(), "--out", b.to_str().unwrap(), "--threads", "4"])
        .status
        .success());
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 6);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn seed_override_changes_only_monte_carlo() {
    let (a, b) = (tmp("seed-a"), tmp("seed-b"));
    let p = scenario("example1");
    assert!(run(&["run", p.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.success());
    assert!(run(&["run", p.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "7"])
        .status
        .success());
    assert_ne!(
        std::fs::read(a.join("monte_carlo.csv")).unwrap(),
        std::fs::read(b.join("monte_carlo.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("indices_vs_L.csv")).unwrap(),
        std::fs::read(b.join("indices_vs_L.csv")).unwrap()
    );
    assert!(std::fs::read_to_string(b.join("monte_carlo.csv")).unwrap().starts_with("# seed=7 "));
}

#[test]
fn case1_outputs_cover_fusion_sweep_quantities() {
    let out = tmp("case1");
    assert!(run(&["run", scenario("case1").to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status
        .success());
    let rows = long_rows(&out.join("indices_vs_L.csv"));
    for q in ["tr_sigma", "tr_sigma_f", "tr_sigma_t", "tr_r_ts"] {
        assert_eq!(rows.iter().filter(|r| r.3 == q).count(), 5 * 31, "{q}");
    }
    let phi = long_rows(&out.join("phi.csv"));
    for q in ["tr_phi", "tr_phi_f", "tr_phi_t", "tr_phi_ts"] {
        assert!(phi.iter().any(|r| r.3 == q));
    }
    let rel = std::fs::read_to_string(out.join("relations.csv")).unwrap();
    assert!(
        rel.lines().skip(1).all(|l| !l.contains(",true,false,")),
        "a theorem counterexample was reported"
    );
}

#[test]
fn case5_outputs_time_series() {
    let out = tmp("case5");
    assert!(run(&["run", scenario("case5").to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status
        .success());
    let rows = long_rows(&out.join("indices_vs_k.csv"));
    let ks: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.2.parse().unwrap()).collect();
    assert_eq!(ks.len(), 201);
    let rec = std::fs::read_to_string(out.join("recursive.csv")).unwrap();
    assert!(
        rec.lines().skip(1).all(|l| l.ends_with(",2,true")),
        "bundle 2 must hold at every step"
    );
}

#[test]
fn validation_failures_exit_2_with_line() {
    let cases: Vec<(&str, Box<dyn Fn(&mut serde_json::Value)>, &str)> = vec![
        (
            "nonspd",
            Box::new(|v| v["noise"]["Ru"][1] = serde_json::json!([[-1.0]])),
            "/noise/Ru/1",
        ),
        (
            "dims",
            Box::new(|v| v["noise"]["R"][0] = serde_json::json!([[1.0, 0.0], [0.0, 1.0]])),
            "/noise/R/0",
        ),
        (
            "disconnected",
            Box::new(|v| v["topology"]["edges"] = serde_json::json!([[1, 2]])),
            "disconnected",
        ),
        (
            "lzero",
            Box::new(|v| v["sweep"]["L_list"][0] = serde_json::json!(0)),
            "/sweep/L_list/0",
        ),
    ];
    for (tag, edit, needle) in cases {
        let p = write_variant(tag, "example1", edit);
        let o = run(&["validate", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{tag}");
        let e = stderr(&o);
        assert!(e.contains(needle), "{tag}: {e}");
        assert!(e.contains(":line "), "{tag}: {e}");
        let o = run(&["run", p.to_str().unwrap(), "--out", tmp(&format!("{tag}-out")).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{tag}");
    }
}

#[test]
fn syntax_error_is_line_anchored() {
    let dir = tmp("syntax");
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("bad.json");
    std::fs::write(&p, "{\n  \"name\": \"x\",\n  \"topology\": {\n    \"n_sensors\": 2,,\n  }\n}\n").unwrap();
    let o = run(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":line 4:"), "{}", stderr(&o));
}

#[test]
fn numerical_failure_exits_3_naming_operation() {
    let p = write_variant("undetectable", "case5", |v| {
        v["model"]["H"] = serde_json::json!([[[0.0]], [[0.0]], [[0.0]], [[0.0]], [[0.0]]]);
        v["sweep"]["analyses"] = serde_json::json!(["steady_state"]);
    });
    let o = run(&["run", p.to_str().unwrap(), "--out", tmp("undetectable-out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("steady_state::"), "{}", stderr(&o));
}

#[test]
fn infer_topology_ranks_eight_candidates() {
    let out = tmp("infer");
    let o = run(&["infer-topology", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("best: path 1-2-3 (IncludeSelf)"), "{text}");
    let csv = std::fs::read_to_string(out.join("infer_topology.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
}
