use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const GAUSSIAN: &str = r#"
seed = 11

[schedule]
kind = "ve"
g_base = 25.0
t_min = 1e-4

[density]
kind = "diagonal_gaussian"
mean = [0.0, 0.0]
variances = [0.5, 2.0]

[remainder]
kind = "variance_rotation"
i = 0
j = 1
"#;

fn gaugeflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaugeflow"))
        .args(args)
        .output()
        .unwrap()
}

fn run_in(dir: &Path, config: Option<&str>, args: &[&str]) -> Output {
    let mut full: Vec<String> = Vec::new();
    if let Some(text) = config {
        let path = dir.join("run.toml");
        std::fs::write(&path, text).unwrap();
        full.extend(["--config".into(), path.display().to_string()]);
    }
    full.extend(args.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = full.iter().map(String::as_str).collect();
    gaugeflow(&refs)
}

fn out(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn sample_then_likelihood_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "o");
    let os = o.to_str().unwrap();
    let r = run_in(
        dir.path(),
        Some(GAUSSIAN),
        &["sample", "--n", "4", "--trajectories", "--out", os],
    );
    assert!(r.status.success(), "{}", stderr(&r));
    let samples = std::fs::read_to_string(o.join("samples.csv")).unwrap();
    assert!(samples.starts_with("x0,x1\n"));
    assert_eq!(samples.lines().count(), 5);
    let traj = std::fs::read_to_string(o.join("trajectories.csv")).unwrap();
    assert!(traj.starts_with("trajectory,t,x0,x1\n"));

    let points = o.join("samples.csv");
    let r = run_in(
        dir.path(),
        Some(GAUSSIAN),
        &["likelihood", "--points", points.to_str().unwrap(), "--out", os],
    );
    assert!(r.status.success(), "{}", stderr(&r));
    let text = std::fs::read_to_string(o.join("logp.csv")).unwrap();
    assert!(text.starts_with("x0,x1,logp_model,logp_analytic,abs_err\n"));
    for row in csv_rows(&o.join("logp.csv")) {
        assert!(row[4] < 1e-4, "{row:?}");
    }
}

#[test]
fn zero_samples_write_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "o");
    let r = run_in(
        dir.path(),
        Some(GAUSSIAN),
        &["sample", "--n", "0", "--out", o.to_str().unwrap()],
    );
    assert!(r.status.success(), "{}", stderr(&r));
    assert_eq!(std::fs::read_to_string(o.join("samples.csv")).unwrap(), "x0,x1\n");
}

#[test]
fn seed_flag_controls_samples() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let o = out(dir.path(), name);
        let r = run_in(
            dir.path(),
            Some(GAUSSIAN),
            &["--seed", seed, "sample", "--n", "3", "--out", o.to_str().unwrap()],
        );
        assert!(r.status.success(), "{}", stderr(&r));
        std::fs::read(o.join("samples.csv")).unwrap()
    };
    assert_eq!(run("a", "5"), run("b", "5"));
    assert_ne!(run("a", "5"), run("c", "6"));
}

#[test]
fn gauge_check_of_a_gauge_remainder_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "o");
    let config = format!("{GAUSSIAN}\n[gauge]\ntimes = [0.001, 0.5, 1.0]\nn_mc = 200\n");
    let r = run_in(
        dir.path(),
        Some(&config),
        &["gauge-check", "--out", o.to_str().unwrap()],
    );
    assert!(r.status.success(), "{}", stderr(&r));
    let rows = csv_rows(&o.join("gauge.csv"));
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!(row[1] < 1e-10, "{row:?}");
        assert_eq!(row[3], 200.0);
    }
}

#[test]
fn id_writes_per_sample_table_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "o");
    let config = "seed = 3\n[manifold]\nkind = \"sphere\"\nintrinsic_dim = 1\nambient_dim = 3\nn_centers = 64\n[id]\nn_samples = 4\n";
    let r = run_in(dir.path(), Some(config), &["id", "--out", o.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    let rows = csv_rows(&o.join("id.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.len() == 5 && r[1] == 1.0), "{rows:?}");
    let agg = std::fs::read_to_string(o.join("id_aggregate.json")).unwrap();
    assert!(agg.contains("\"modal_d\": 1"), "{agg}");
}

#[test]
fn id_without_manifold_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "o");
    let r = run_in(dir.path(), Some(GAUSSIAN), &["id", "--out", o.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("[manifold]"));
    assert!(!o.exists());
}

#[test]
fn unknown_scenario_lists_names_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "o");
    let r = gaugeflow(&["scenario", "nope", "--out", o.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("section4_counterexample"));
    assert!(!o.exists());
}

#[test]
fn expected_failures_do_not_fail_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "o");
    let r = gaugeflow(&["scenario", "commuting_flows_noncommuting", "--out", o.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    let report = std::fs::read_to_string(o.join("report.json")).unwrap();
    assert!(report.contains("\"expected_fail\": true"));
    assert!(report.contains("\"verdict\": \"fail\""));
    assert!(String::from_utf8_lossy(&r.stdout).contains("fail (expected)"));
}

#[test]
fn invalid_configs_exit_2_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "o");
    let os = o.to_str().unwrap();
    let cases = [
        (GAUSSIAN.replace("g_base = 25.0", "g_base = -1.0"), "g_base"),
        (
            GAUSSIAN.replace("variances = [0.5, 2.0]", "variances = [0.5]"),
            "dimension mismatch",
        ),
        (format!("{GAUSSIAN}\nbogus = 1\n"), "bogus"),
        (GAUSSIAN.replace("mean = [0.0, 0.0]", "mean = [1.0, 0.0]"), "zero-mean"),
    ];
    for (config, needle) in cases {
        let r = run_in(dir.path(), Some(&config), &["sample", "--n", "2", "--out", os]);
        assert_eq!(r.status.code(), Some(2), "{needle}: {}", stderr(&r));
        assert!(stderr(&r).contains(needle), "{needle}: {}", stderr(&r));
        assert!(!o.exists());
    }
    let r = run_in(dir.path(), None, &["sample", "--out", os]);
    assert_eq!(r.status.code(), Some(2));
    let missing = dir.path().join("absent.toml");
    let r = gaugeflow(&["--config", missing.to_str().unwrap(), "sample", "--out", os]);
    assert_eq!(r.status.code(), Some(2));
    let r = gaugeflow(&["sample", "--frobnicate"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn malformed_points_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "o");
    let points = dir.path().join("p.csv");
    for (body, needle) in [("x0\n1\n", "columns"), ("x0,x1\n1,abc\n", "abc")] {
        std::fs::write(&points, body).unwrap();
        let r = run_in(
            dir.path(),
            Some(GAUSSIAN),
            &[
                "likelihood",
                "--points",
                points.to_str().unwrap(),
                "--out",
                o.to_str().unwrap(),
            ],
        );
        assert_eq!(r.status.code(), Some(2), "{}", stderr(&r));
        assert!(stderr(&r).contains(needle), "{}", stderr(&r));
        assert!(!o.exists());
    }
}
