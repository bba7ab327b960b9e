use std::fs;
use std::process::Command;

use approx::assert_abs_diff_eq;
use squeezelab::cli::{run, EXIT_CONFIG, EXIT_IO, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_SEPARABLE};
use squeezelab::estimation::{generate_synthetic_dataset, RECONSTRUCTION_POWERS_MW};
use squeezelab::FitResult;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn sq(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["squeezelab"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.trim().strip_prefix('=')))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
        .trim()
        .parse()
        .unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn model_rows() {
    let r = sq(&["model", "--powers", "0,28"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.starts_with("power_mw,squeezing_db,antisqueezing_db\n"));
    let rows = csv_rows(&r.stdout);
    assert_eq!(rows[0], vec![0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(rows[1][1], -1.90, epsilon = 0.005);
    assert_abs_diff_eq!(rows[1][2], 3.08, epsilon = 0.005);
    assert!(r.stderr.contains("at 28 mW"), "{}", r.stderr);
}

#[test]
fn model_without_squeezing() {
    let r = sq(&["model", "--mu", "0", "--range", "0:28:7"]);
    assert_eq!(r.code, EXIT_OK);
    let rows = csv_rows(&r.stdout);
    assert_eq!(rows.len(), 5);
    for row in rows {
        assert_eq!(&row[1..], &[0.0, 0.0]);
    }
}

#[test]
fn model_to_file_and_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.csv");
    let r = sq(&["model", "--out", path.to_str().unwrap(), "--json"]);
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(csv_rows(&fs::read_to_string(&path).unwrap()).len(), 15);
    let summary: serde_json::Value = serde_json::from_str(r.stdout.trim()).unwrap();
    assert_eq!(summary["power_mw"], 28.0);

    let bad = dir.path().join("missing").join("model.csv");
    let r = sq(&["model", "--out", bad.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_IO);
    assert!(r.stderr.contains("missing"), "{}", r.stderr);
}

#[test]
fn config_precedence_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# test\nmu = 0\neta = 0.9\n").unwrap();
    let c = cfg.to_str().unwrap();

    let r = sq(&["model", "--config", c, "--powers", "28"]);
    assert_eq!(csv_rows(&r.stdout)[0][1], 0.0);
    // --set beats the file, the subcommand flag beats --set.
    let r = sq(&["model", "--config", c, "--set", "mu=0.101", "--powers", "28"]);
    let from_set = csv_rows(&r.stdout)[0][1];
    assert!(from_set < -1.0);
    let r = sq(&["model", "--config", c, "--set", "mu=0.101", "--mu", "0", "--powers", "28"]);
    assert_eq!(csv_rows(&r.stdout)[0][1], 0.0);

    fs::write(&cfg, "mu = 0.1\nwidget = 3\n").unwrap();
    let r = sq(&["model", "--config", c]);
    assert_eq!(r.code, EXIT_CONFIG);
    assert!(r.stderr.contains("widget"), "{}", r.stderr);

    let r = sq(&["model", "--config", dir.path().join("nope.cfg").to_str().unwrap()]);
    assert_eq!(r.code, EXIT_IO);
    assert_eq!(sq(&["model", "--set", "eta=1.5"]).code, EXIT_CONFIG);
    assert_eq!(sq(&["model", "--powers", "-1"]).code, EXIT_CONFIG);
    assert_eq!(sq(&["frobnicate"]).code, EXIT_CONFIG);
    assert_eq!(sq(&["--help"]).code, EXIT_OK);
}

#[test]
fn fit_synthetic_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("fit.txt");
    let r = sq(&["fit", "--out", report.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let mu = value(&r.stdout, "mu");
    let eta = value(&r.stdout, "eta");
    assert_abs_diff_eq!(mu, 0.101, epsilon = 0.006);
    assert_abs_diff_eq!(eta, 0.54, epsilon = 0.03);
    assert_eq!(fs::read_to_string(&report).unwrap(), r.stdout);
    let json: FitResult = serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert_eq!(json.mu, mu);
    assert!(json.converged);
}

#[test]
fn fit_noiseless_dataset_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let data = generate_synthetic_dataset(0.101, 0.54, &RECONSTRUCTION_POWERS_MW, 0.0, 0).unwrap();
    data.write_csv(fs::File::create(&path).unwrap()).unwrap();
    let r = sq(&["fit", path.to_str().unwrap(), "--json"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let fit: FitResult = serde_json::from_str(&r.stdout).unwrap();
    assert_abs_diff_eq!(fit.mu, 0.101, epsilon = 1e-9);
    assert_abs_diff_eq!(fit.eta, 0.54, epsilon = 1e-9);
    assert!(fit.chi2 < 1e-12);
}

#[test]
fn fit_rejects_short_and_malformed_data() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.csv");
    fs::write(&path, "power_mw,squeezing_db,antisqueezing_db\n10,-1.0,1.5\n20,-1.5,2.4\n").unwrap();
    let r = sq(&["fit", path.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_CONFIG);
    assert!(r.stderr.contains("at least 3 rows"), "{}", r.stderr);

    fs::write(&path, "power_mw,squeezing_db,antisqueezing_db\n10,-1.0,1.5\n20,oops,2.4\n28,-1.9,3.1\n").unwrap();
    let r = sq(&["fit", path.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_CONFIG);
    assert!(r.stderr.contains("line 3"), "{}", r.stderr);

    let r = sq(&["fit", dir.path().join("absent.csv").to_str().unwrap()]);
    assert_eq!(r.code, EXIT_IO);
}

#[test]
fn fit_iteration_cap_reports_non_convergence() {
    let r = sq(&["fit", "--max-iterations", "1", "--initial-mu", "0.02", "--initial-eta", "0.9"]);
    assert_eq!(r.code, EXIT_NOT_CONVERGED, "{}", r.stdout);
    assert!(r.stdout.contains("converged = false"), "{}", r.stdout);
}

#[test]
fn trace_defaults_and_vacuum() {
    let r = sq(&["trace", "--json"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.stdout.lines().count(), 5001);
    let ex: serde_json::Value = serde_json::from_str(r.stderr.trim()).unwrap();
    let (s, se) = (ex["squeezing_db"].as_f64().unwrap(), ex["squeezing_se_db"].as_f64().unwrap());
    let (a, ae) = (ex["antisqueezing_db"].as_f64().unwrap(), ex["antisqueezing_se_db"].as_f64().unwrap());
    assert!((s + 1.9015).abs() < 3.0 * se, "{s} +- {se}");
    assert!((a - 3.0804).abs() < 3.0 * ae, "{a} +- {ae}");

    let r = sq(&["trace", "--power", "0", "--json"]);
    let ex: serde_json::Value = serde_json::from_str(r.stderr.trim()).unwrap();
    assert!(ex["squeezing_db"].as_f64().unwrap().abs() < 0.01);
    assert!(ex["antisqueezing_db"].as_f64().unwrap().abs() < 0.01);
}

#[test]
fn trace_files_are_deterministic() {
    let bin = env!("CARGO_BIN_EXE_squeezelab");
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<_> = ["a.csv", "b.csv", "c.csv"].iter().map(|f| dir.path().join(f)).collect();
    for (f, seed) in files.iter().zip(["7", "7", "8"]) {
        let status = Command::new(bin)
            .args(["trace", "--seed", seed, "--out", f.to_str().unwrap()])
            .output()
            .unwrap();
        assert_eq!(status.status.code(), Some(EXIT_OK));
        assert!(String::from_utf8_lossy(&status.stdout).contains("squeezing ="));
    }
    let bytes: Vec<_> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    assert_eq!(bytes[0], bytes[1]);
    assert_ne!(bytes[0], bytes[2]);
}

#[test]
fn budget_reports() {
    let r = sq(&["budget"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_abs_diff_eq!(value(&r.stdout, "eta_est"), 0.650, epsilon = 5e-4);
    assert_abs_diff_eq!(value(&r.stdout, "inferred_source_squeezing_db"), -3.27, epsilon = 5e-3);
    assert_abs_diff_eq!(value(&r.stdout, "coupled_pump_mw"), 28.0, epsilon = 0.1);

    let r = sq(&["budget", "--eta-fit", "0.54"]);
    assert_abs_diff_eq!(value(&r.stdout, "waveguide_loss_db_per_cm"), 0.40, epsilon = 0.005);

    let r = sq(&["budget", "--set", "eta_c=1", "--set", "eta_t=1", "--set", "eta_d=1", "--set", "snr_db=inf", "--json"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["eta_est"], 1.0);
    assert_abs_diff_eq!(v["inferred_source_squeezing_db"].as_f64().unwrap(), -1.83, epsilon = 1e-12);

    let r = sq(&["budget", "--measured-db", "-6"]);
    assert_eq!(r.code, EXIT_CONFIG);
    assert!(r.stderr.contains("loss floor"), "{}", r.stderr);
    assert_eq!(sq(&["budget", "--eta-fit", "0.7"]).code, EXIT_CONFIG);
}

#[test]
fn duan_reports_and_exit_codes() {
    let r = sq(&["duan", "--squeezing", "-1.83", "--bs-loss", "0.05"]);
    assert_eq!(r.code, EXIT_OK);
    assert_abs_diff_eq!(value(&r.stdout, "correlation_variance"), 0.66, epsilon = 0.005);
    assert!(r.stdout.contains("entangled = true"));

    let r = sq(&["duan", "--squeezing", "0"]);
    assert_eq!(r.code, EXIT_CONFIG);
    assert!(r.stderr.contains("negative"), "{}", r.stderr);

    // At 60 dB the margin is ~3e-7: still below the bound.
    let r = sq(&["duan", "--squeezing", "-1.83", "--bs-loss", "60"]);
    assert_abs_diff_eq!(value(&r.stdout, "correlation_variance"), 1.0, epsilon = 1e-6);
    assert_eq!(r.code, EXIT_OK);

    let r = sq(&["duan", "--squeezing", "-1.83", "--bs-loss", "200", "--json"]);
    assert_eq!(r.code, EXIT_SEPARABLE);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["entangled"], false);

    let r = sq(&["duan", "--squeezing", "-3", "--pure", "--bs-loss", "0"]);
    assert_abs_diff_eq!(value(&r.stdout, "correlation_variance"), 10f64.powf(-0.3), epsilon = 1e-12);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_squeezelab");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(code(&["duan", "--squeezing", "-1.83"]), Some(EXIT_OK));
    assert_eq!(code(&["duan", "--squeezing", "-1.83", "--bs-loss", "200"]), Some(EXIT_SEPARABLE));
    assert_eq!(code(&["budget", "--set", "bogus=1"]), Some(EXIT_CONFIG));
    assert_eq!(code(&["fit", "/nonexistent/data.csv"]), Some(EXIT_IO));
}
