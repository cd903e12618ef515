use std::path::Path;
use std::process::{Command, Output};

use longterm::report::ReportFile;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longterm")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen-synthetic", "--d", "3", "--k", "2", "--n", "40", "--T", "6"];
    args.extend_from_slice(extra);
    if !extra.contains(&"--seed") {
        args.extend(["--seed", "1"]);
    }
    ok(dir, &args);
}

#[test]
fn gen_synthetic_row_count_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        dir.path(),
        &["gen-synthetic", "--d", "4", "--k", "4", "--n", "200", "--T", "10", "--alpha", "1.0", "--seed", "7"],
    );
    let csv = std::fs::read_to_string(dir.path().join("synthetic.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 200 * 11);
    assert!(csv.starts_with("individual_id,policy_id,t,f0,f1,f2,f3\n"));
    assert!(stdout.contains("synthetic.truth.json"));
    assert_eq!(stdout.matches("delta[").count(), 3);

    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("synthetic.truth.json")).unwrap()).unwrap();
    assert_eq!(truth["matrices"].as_array().unwrap().len(), 4);
    assert_eq!(truth["z_scaled"].as_array().unwrap().len(), 11);
    assert_eq!(truth["alpha"], 1.0);
    assert_eq!(truth["seed"], 7);
    assert_eq!(truth["s0_mean"].as_array().unwrap().len(), 4);
    assert_eq!(truth["gamma_free_truth"]["delta"].as_array().unwrap().len(), 3);
}

#[test]
fn gen_synthetic_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--out", "a.csv"]);
    gen(dir.path(), &["--out", "b.csv"]);
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.truth.json"), read("b.truth.json"));
    gen(dir.path(), &["--out", "c.csv", "--seed", "2"]);
    assert_ne!(read("a.csv"), read("c.csv"));
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(run(p, &["gen-synthetic", "--T", "0"]).status.code(), Some(2));
    assert_eq!(run(p, &["gen-synthetic", "--alpha", "-1"]).status.code(), Some(2));
    gen(p, &[]);
    let base = ["estimate", "--data", "synthetic.csv", "--out", "r.json"];
    for bad in [
        vec!["--reward-feature", "0", "--gamma", "1.0"],
        vec!["--reward-feature", "0", "--gamma", "0"],
        vec![],
        vec!["--reward-feature", "0", "--reward-fit"],
        vec!["--reward-feature", "0", "--method", "magic"],
    ] {
        let mut args = base.to_vec();
        args.extend(bad.iter());
        let out = run(p, &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert!(!p.join("r.json").exists());
}

#[test]
fn runtime_errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = run(p, &["estimate", "--data", "missing.csv", "--reward-feature", "0", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    gen(p, &[]);
    let out = run(p, &["estimate", "--data", "synthetic.csv", "--reward-feature", "7", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(p, &["estimate", "--data", "synthetic.csv", "--reward-feature", "0", "--out", "synthetic.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("same file"));

    let out = run(p, &["gen-synthetic", "--d", "3", "--s0-mean", "1,2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn estimate_nonstationary_writes_monotone_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen(p, &[]);
    let stdout = ok(
        p,
        &["estimate", "--method", "nonstationary", "--gamma", "0.99", "--data", "synthetic.csv", "--reward-feature", "0", "--out", "r.json"],
    );
    assert!(stdout.contains("delta_hat[1]"));
    assert!(stdout.contains("converged"));
    let report = ReportFile::load(p.join("r.json")).unwrap();
    assert_eq!(report.effects.len(), 1);
    assert_eq!(report.matrices.len(), 2);
    assert_eq!(report.z.len(), 7);
    assert!(report.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(report.values[1] - report.values[0], report.effects[0]);

    let rendered = ok(p, &["report", "r.json"]);
    assert!(rendered.contains("delta_hat[1]"));
}

#[test]
fn estimate_methods_and_reward_modes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen(p, &["--alpha", "0"]);
    std::fs::write(p.join("theta.json"), r#"{"theta": [1.0, 0.0, 0.0]}"#).unwrap();
    let effect = |args: &[&str]| {
        let mut all = vec!["estimate", "--data", "synthetic.csv", "--gamma", "0.9", "--out", "r.json"];
        all.extend_from_slice(args);
        ok(p, &all);
        ReportFile::load(p.join("r.json")).unwrap()
    };
    let by_index = effect(&["--method", "stationary", "--reward-feature", "0"]);
    let by_file = effect(&["--method", "stationary", "--reward-coeffs", "theta.json"]);
    assert_eq!(by_index.effects, by_file.effects);
    assert_eq!(by_index.method.as_str(), "stationary");

    let naive = effect(&["--method", "naive", "--reward-feature", "0"]);
    let unscaled = effect(&["--method", "naive", "--reward-feature", "0", "--naive-unscaled"]);
    assert!((naive.effects[0] - unscaled.effects[0] * 10.0).abs() < 1e-9 * naive.effects[0].abs().max(1.0));
}

#[test]
fn reward_fit_uses_reward_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut csv = String::from("individual_id,policy_id,t,f0,f1,r\n");
    for (id, policy) in [(0, 0), (1, 0), (2, 1), (3, 1)] {
        for t in 0..4 {
            let (a, b) = (1.0 + id as f64 * 0.3 + t as f64 * 0.1, 0.5 - t as f64 * 0.2 + (id * t) as f64 * 0.05);
            csv.push_str(&format!("{id},{policy},{t},{a},{b},{}\n", 2.0 * a - b));
        }
    }
    std::fs::write(p.join("d.csv"), csv).unwrap();
    ok(p, &["estimate", "--method", "naive", "--data", "d.csv", "--reward-fit", "--out", "fit.json"]);
    std::fs::write(p.join("theta.json"), r#"{"theta": [2.0, -1.0]}"#).unwrap();
    ok(p, &["estimate", "--method", "naive", "--data", "d.csv", "--reward-coeffs", "theta.json", "--out", "known.json"]);
    let a = ReportFile::load(p.join("fit.json")).unwrap().effects[0];
    let b = ReportFile::load(p.join("known.json")).unwrap().effects[0];
    assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} vs {b}");
}

#[test]
fn naive_is_zero_on_identical_groups() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut csv = String::from("individual_id,policy_id,t,f0,f1\n");
    for policy in 0..2 {
        for j in 0..3 {
            for t in 0..5 {
                csv.push_str(&format!("{policy}-{j},{policy},{t},{},{}\n", j as f64 + 0.5 * t as f64, (j * t) as f64));
            }
        }
    }
    std::fs::write(p.join("same.csv"), csv).unwrap();
    ok(p, &["estimate", "--method", "naive", "--data", "same.csv", "--reward-feature", "1", "--out", "r.json"]);
    assert_eq!(ReportFile::load(p.join("r.json")).unwrap().effects, vec![0.0]);
}

#[test]
fn config_file_is_applied_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen(p, &[]);
    std::fs::write(p.join("cfg.json"), r#"{"gamma": 0.9, "max_iters": 1}"#).unwrap();
    ok(p, &["estimate", "--data", "synthetic.csv", "--reward-feature", "0", "--config", "cfg.json", "--out", "r.json"]);
    let report = ReportFile::load(p.join("r.json")).unwrap();
    assert_eq!(report.gamma, 0.9);
    assert_eq!(report.iterations, 1);

    ok(
        p,
        &["estimate", "--data", "synthetic.csv", "--reward-feature", "0", "--config", "cfg.json", "--gamma", "0.8", "--out", "r.json"],
    );
    assert_eq!(ReportFile::load(p.join("r.json")).unwrap().gamma, 0.8);

    std::fs::write(p.join("bad.json"), r#"{"gama": 0.9}"#).unwrap();
    let out = run(p, &["estimate", "--data", "synthetic.csv", "--reward-feature", "0", "--config", "bad.json", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
}

#[test]
fn sweep_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = |out: &'static str, workers: &'static str| {
        vec![
            "sweep", "--param", "n", "--values", "100,1000", "--reps", "5", "--seed", "3", "--d", "3", "--k", "3", "--workers",
            workers, "--out", out,
        ]
    };
    let mut first = args("res.csv", "1");
    first.extend(["--svg", "out.svg", "--summary", "summary.csv"]);
    let table = ok(p, &first);
    assert!(table.contains("nonstationary"));
    let res = std::fs::read_to_string(p.join("res.csv")).unwrap();
    assert_eq!(res.lines().count(), 1 + 2 * 5 * 3 * 2);
    assert!(res.starts_with("param,value,rep,method,policy,delta_hat,delta_true,sq_err,ape,wall_ms,seed,error\n"));
    assert_eq!(std::fs::read_to_string(p.join("summary.csv")).unwrap().lines().count(), 1 + 2 * 3);

    let svg = std::fs::read_to_string(p.join("out.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert_eq!(svg.matches('<').count(), svg.matches('>').count());

    ok(p, &args("again.csv", "3"));
    assert_eq!(res, std::fs::read_to_string(p.join("again.csv")).unwrap());

    let rendered = ok(p, &["report", "res.csv", "--summary", "summary2.csv", "--svg", "out2.svg"]);
    assert_eq!(rendered, table);
    assert_eq!(std::fs::read(p.join("summary.csv")).unwrap(), std::fs::read(p.join("summary2.csv")).unwrap());
    assert_eq!(std::fs::read(p.join("out.svg")).unwrap(), std::fs::read(p.join("out2.svg")).unwrap());
}

#[test]
fn sweep_rejects_bad_grids() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = run(p, &["sweep", "--param", "n", "--values", "0.5", "--reps", "1", "--out", "r.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(p, &["sweep", "--param", "q", "--values", "1", "--out", "r.csv"]);
    assert_eq!(out.status.code(), Some(2));
}
