use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gabp::io::{self, BELIEFS_HEADER, TRAJECTORY_HEADER};
use gabp::mrf_bridge::mrf_to_linear_gaussian;
use gabp::testkit;
use tempfile::TempDir;

fn gabp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gabp"))
        .args(args)
        .env_remove("GABP_LOG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SINGLE_AGENT: &str = r#"{
  "variables": [{"id": 1, "dim": 1, "prior_cov": {"rows": 1, "cols": 1, "data": [4.0]}}],
  "factors": [{"id": 1, "scope": [1],
    "coeff": {"1": {"rows": 1, "cols": 1, "data": [2.0]}},
    "noise_cov": {"rows": 1, "cols": 1, "data": [1.0]}, "obs": [3.0]}]
}"#;

fn loopy_mrf_json(scale: f64) -> String {
    let j = testkit::loopy_mrf_j();
    let rows: Vec<Vec<f64>> = (0..4)
        .map(|a| (0..4).map(|b| j[(a, b)] * scale).collect())
        .collect();
    serde_json::json!({"J": rows, "h": [0.0, 0.0, 0.0, 0.0]}).to_string()
}

#[test]
fn validate_reports_and_classifies_failures() {
    let dir = TempDir::new().unwrap();
    let good = write(dir.path(), "good.json", SINGLE_AGENT);
    let out = gabp(&["validate", s(&good), "--out", s(&dir.path().join("v"))]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&dir.path().join("v/validation.json"))["valid"], true);

    let rank = SINGLE_AGENT.replace(
        r#"{"rows": 1, "cols": 1, "data": [2.0]}"#,
        r#"{"rows": 1, "cols": 1, "data": [0.0]}"#,
    );
    let out = gabp(&["validate", s(&write(dir.path(), "rank.json", &rank))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("(1,1)"), "{}", stderr(&out));

    let bad_dims = SINGLE_AGENT.replace(
        r#"{"rows": 1, "cols": 1, "data": [4.0]}"#,
        r#"{"rows": 2, "cols": 2, "data": [4.0]}"#,
    );
    assert_eq!(
        code(&gabp(&[
            "validate",
            s(&write(dir.path(), "dims.json", &bad_dims))
        ])),
        2
    );
    assert_eq!(
        code(&gabp(&[
            "validate",
            s(&write(dir.path(), "junk.json", "{not json"))
        ])),
        2
    );
    assert_eq!(
        code(&gabp(&["validate", s(&dir.path().join("missing.json"))])),
        2
    );
}

#[test]
fn solve_single_agent_by_hand() {
    let dir = TempDir::new().unwrap();
    let model = write(dir.path(), "m.json", SINGLE_AGENT);
    let out = gabp(&["solve", s(&model)]);
    assert_eq!(code(&out), 0);
    // precision 1/4 + 4 = 17/4, information 2*3 = 6
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let mean = doc["agents"][0]["mean"][0].as_f64().unwrap();
    let var = doc["agents"][0]["cov"]["data"][0].as_f64().unwrap();
    assert!((mean - 24.0 / 17.0).abs() < 1e-15);
    assert!((var - 4.0 / 17.0).abs() < 1e-15);
    assert_eq!(gabp(&["solve", s(&model)]).stdout, out.stdout);
}

#[test]
fn solve_unobservable_needs_posterior_flag() {
    let dir = TempDir::new().unwrap();
    let model = write(
        dir.path(),
        "m.json",
        &io::model_to_json(&testkit::loopy_mrf_model([0.0; 3]), None),
    );
    assert_eq!(code(&gabp(&["solve", s(&model)])), 1);
    let out = gabp(&["solve", s(&model), "--posterior"]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for agent in doc["agents"].as_array().unwrap() {
        assert_eq!(agent["mean"][0].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn run_forest_writes_golden_csv_headers() {
    let dir = TempDir::new().unwrap();
    let model = write(
        dir.path(),
        "m.json",
        &io::model_to_json(&testkit::forest(3, 8, 2), None),
    );
    let out_dir = dir.path().join("run");
    let out = gabp(&["run", s(&model), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let traj = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    let beliefs = fs::read_to_string(out_dir.join("beliefs.csv")).unwrap();
    assert_eq!(
        traj.lines().next(),
        Some("iter,edge_kind,from,to,dJ_fro,dv_inf,part_metric_to_ref")
    );
    assert_eq!(
        beliefs.lines().next(),
        Some("agent,component,mean,variance")
    );
    assert_eq!(traj.lines().next(), Some(TRAJECTORY_HEADER));
    assert_eq!(beliefs.lines().next(), Some(BELIEFS_HEADER));
    assert!(traj.lines().skip(1).all(|l| l.split(',').count() == 7));
    let summary = json(&out_dir.join("run.json"));
    assert_eq!(summary["status"], "converged");
    assert_eq!(summary["reference"], "centralized");
    assert!(summary["max_mean_error"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn run_exit_codes_by_status() {
    let dir = TempDir::new().unwrap();
    let loopy = write(
        dir.path(),
        "loopy.json",
        &io::model_to_json(&testkit::loopy_corpus(2)[1], None),
    );
    let out = gabp(&["run", s(&loopy), "--max-iters", "1"]);
    assert_eq!(code(&out), 3);

    let (model, rho, _) = testkit::divergent_instance(1).expect("divergent instance");
    assert!(rho >= 1.02);
    let div = write(dir.path(), "div.json", &io::model_to_json(&model, None));
    let out = gabp(&["run", s(&div)]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stdout));

    assert_eq!(code(&gabp(&["run", s(&loopy), "--tol-j", "0"])), 2);
    assert_eq!(code(&gabp(&["run", s(&loopy), "--max-iters", "0"])), 2);
    assert_eq!(code(&gabp(&["run", s(&loopy), "--init", "sideways"])), 2);
    assert_eq!(code(&gabp(&["run", s(&loopy), "--schedule", "nope"])), 2);
}

#[test]
fn run_schedules_and_inits_agree() {
    let dir = TempDir::new().unwrap();
    let model = testkit::single_loop(21, 5, 2);
    let path = write(dir.path(), "m.json", &io::model_to_json(&model, None));
    let problem = gabp::Problem::new(&model).unwrap();
    let init = match testkit::random_psd_init(&problem, 5) {
        gabp::InitStrategy::CustomPsd(m) => m,
        _ => unreachable!(),
    };
    let custom = write(dir.path(), "init.json", &io::custom_init_to_json(&init));
    let custom_arg = format!("--init=custom:{}", s(&custom));
    let variants: Vec<Vec<&str>> = vec![
        vec![],
        vec!["--schedule", "seq"],
        vec!["--schedule", "random", "--seed", "9"],
        vec!["--init", "lower"],
        vec!["--init", "upper", "--strict"],
        vec![custom_arg.as_str(), "--strict"],
    ];
    for extra in variants {
        let mut args = vec!["run", s(&path)];
        args.extend(&extra);
        let out = gabp(&args);
        assert_eq!(code(&out), 0, "{extra:?}: {}", stderr(&out));
        let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(
            summary["max_mean_error"].as_f64().unwrap() <= 1e-8,
            "{extra:?}"
        );
    }
}

#[test]
fn run_rejects_bad_custom_init() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "m.json", SINGLE_AGENT);
    let non_psd =
        r#"{"edges": [{"factor": 1, "var": 1, "info": {"rows": 1, "cols": 1, "data": [-1.0]}}]}"#;
    let unknown =
        r#"{"edges": [{"factor": 7, "var": 1, "info": {"rows": 1, "cols": 1, "data": [1.0]}}]}"#;
    for (name, text) in [("neg.json", non_psd), ("unk.json", unknown)] {
        let init = write(dir.path(), name, text);
        let out = gabp(&["run", s(&path), &format!("--init=custom:{}", s(&init))]);
        assert_eq!(code(&out), 2, "{name}: {}", stderr(&out));
    }
}

#[test]
fn analyze_verdicts() {
    let dir = TempDir::new().unwrap();
    let loopy = write(
        dir.path(),
        "l.json",
        &io::model_to_json(&testkit::loopy_mrf_model([1.0, 1.0, 1.0]), None),
    );
    let out = gabp(&["analyze", s(&loopy), "--certify", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["verdict"], "guaranteed_by_topology");
    assert_eq!(report["topology"], "single_loop_plus_forest");
    assert!(report["cross_check"]["max_mean_error"].as_f64().unwrap() <= 1e-8);

    let forest = write(
        dir.path(),
        "f.json",
        &io::model_to_json(&testkit::forest(4, 9, 2), None),
    );
    let out = gabp(&["analyze", s(&forest)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["rho_q"].as_f64(), Some(0.0));
    assert_eq!(report["verdict"], "guaranteed_by_topology");

    let (model, _, _) = testkit::divergent_instance(1).unwrap();
    let div = write(dir.path(), "d.json", &io::model_to_json(&model, None));
    let out = gabp(&["analyze", s(&div)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["verdict"], "diverges_rho_ge_1");
}

#[test]
fn convert_mrf_outcomes() {
    let dir = TempDir::new().unwrap();
    let eye = write(
        dir.path(),
        "eye.json",
        r#"{"J": [[1, 0], [0, 1]], "h": [0, 0]}"#,
    );
    assert_eq!(code(&gabp(&["convert-mrf", s(&eye)])), 0);

    let loopy = write(dir.path(), "loopy.json", &loopy_mrf_json(1.0));
    let out_dir = dir.path().join("fail");
    let out = gabp(&["convert-mrf", s(&loopy), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("-0.0754"), "{}", stderr(&out));
    assert_eq!(
        json(&out_dir.join("walk_summability.json"))["walk_summable"],
        false
    );

    // unnormalized input goes through the same path
    let scaled = write(dir.path(), "scaled.json", &loopy_mrf_json(3.0));
    assert_eq!(code(&gabp(&["convert-mrf", s(&scaled)])), 1);

    let ragged = write(
        dir.path(),
        "ragged.json",
        r#"{"J": [[1, 0], [0]], "h": [0, 0]}"#,
    );
    assert_eq!(code(&gabp(&["convert-mrf", s(&ragged)])), 2);
}

#[test]
fn convert_then_run_pipeline() {
    let dir = TempDir::new().unwrap();
    let mrf = testkit::walk_summable_mrf(17, 6);
    let mrf_path = write(dir.path(), "mrf.json", &io::mrf_to_json(&mrf.j, &mrf.h));
    let conv = dir.path().join("conv");
    let out = gabp(&["convert-mrf", s(&mrf_path), "--out", s(&conv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let model_path = conv.join("model.json");
    let (model, provenance) = io::read_model(&model_path).unwrap();
    assert!(provenance.is_some());
    let fac = gabp::mrf_bridge::factor_width_two(&mrf, None).unwrap();
    assert_eq!(model, mrf_to_linear_gaussian(&mrf, &fac).unwrap());

    let run_dir = dir.path().join("run");
    let out = gabp(&["run", s(&model_path), "--out", s(&run_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let exact = gabp::mrf_bridge::mrf_marginal_oracle(&mrf).unwrap();
    let beliefs = fs::read_to_string(run_dir.join("beliefs.csv")).unwrap();
    for line in beliefs.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let agent: usize = cols[0].parse().unwrap();
        let mean: f64 = cols[2].parse().unwrap();
        assert!((mean - exact[agent - 1]).abs() <= 1e-8, "agent {agent}");
    }
}

#[test]
fn gen_is_deterministic_and_valid() {
    let dir = TempDir::new().unwrap();
    let args = [
        "gen",
        "--seed",
        "1",
        "--agents",
        "5",
        "--topology",
        "forest",
    ];
    let a = gabp(&args);
    let b = gabp(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let path = write(
        dir.path(),
        "g.json",
        std::str::from_utf8(&a.stdout).unwrap(),
    );
    assert_eq!(code(&gabp(&["validate", s(&path)])), 0);

    for topo in ["single-loop", "multi-loop"] {
        let out = gabp(&[
            "gen",
            "--seed",
            "2",
            "--agents",
            "6",
            "--topology",
            topo,
            "--max-dim",
            "2",
        ]);
        assert_eq!(code(&out), 0, "{topo}: {}", stderr(&out));
    }
    let out = gabp(&[
        "gen",
        "--seed",
        "1",
        "--agents",
        "1",
        "--topology",
        "single-loop",
    ]);
    assert_eq!(code(&out), 1);
}
