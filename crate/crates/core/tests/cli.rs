use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

fn unfoldcov(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unfoldcov"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn count(root: &Path, name_matches: &dyn Fn(&str) -> bool) -> usize {
    let mut n = 0;
    let mut pending = vec![root.to_path_buf()];
    while let Some(dir) = pending.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                pending.push(path);
            } else if name_matches(path.file_name().unwrap().to_str().unwrap()) {
                n += 1;
            }
        }
    }
    n
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = unfoldcov(&["run", "--toys", "20"], &shipped("double_gaussian"), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = dir.path().join("double_gaussian");
    assert_eq!(count(&root, &|n| n == "covariance.csv"), 12);
    assert_eq!(count(&root, &|n| n.starts_with("reldiff_")), 8);
    assert_eq!(count(&root, &|n| n == "fit.json"), 4);
    assert!(!root.join("FAILED").exists());

    let summary = fs::read_to_string(root.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 13);
    assert_eq!(
        rows[0],
        "scenario,method,tau,avg_sigma_rel,avg_global_corr,chi2_ndf,T_used,converged_fraction,validity"
    );
    assert!(rows.iter().any(|r| r.starts_with("double_gaussian,inverse_hessian,5e-5,")
        && r.ends_with("regularized: RCB assumptions violated")));
    assert!(rows.iter().any(|r| r.starts_with("double_gaussian,inverse_hessian,0,") && r.ends_with(",valid")));

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["provenance"]["seed"], 12345);
    assert_eq!(report["provenance"]["config_hash"].as_str().unwrap().len(), 64);
    for entry in report["estimates"].as_array().unwrap() {
        assert!(root.join(entry["covariance"].as_str().unwrap()).exists());
    }
}

#[test]
fn single_method_single_tau() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "scenario = \"double_gaussian\"\ntau = [\"0\"]\nmethods = [\"inverse_hessian\"]\n").unwrap();
    let out = unfoldcov(&["run"], &config, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = dir.path().join("double_gaussian");
    assert_eq!(count(&root, &|n| n == "covariance.csv"), 1);
    assert_eq!(count(&root, &|n| n.starts_with("reldiff_")), 0);
    assert_eq!(fs::read_to_string(root.join("summary.csv")).unwrap().lines().count(), 2);
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = unfoldcov(
        &["run", "--methods", "frequentist_toys", "--toys", "5", "--seed", "3", "--threads", "2"],
        &shipped("exponential"),
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = dir.path().join("exponential");
    assert_eq!(count(&root, &|n| n == "covariance.csv"), 4);
    let estimates = fs::read_to_string(root.join("tau_0/frequentist_toys/estimates.csv")).unwrap();
    assert_eq!(estimates.lines().count(), 6);
    let report = fs::read_to_string(root.join("report.json")).unwrap();
    assert!(report.contains("\"seed\": 3"));
}

#[test]
fn stage_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let config = shipped("double_gaussian");
    let out = unfoldcov(&["gen-response"], &config, dir.path());
    assert!(out.status.success());
    let inputs = dir.path().join("double_gaussian/inputs");
    for name in ["truth.csv", "expected.csv", "observed.csv", "background.csv", "response.csv"] {
        assert!(inputs.join(name).exists(), "{name}");
    }

    let out = unfoldcov(&["fit"], &config, dir.path());
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 4);
    assert!(dir.path().join("double_gaussian/tau_1e-6/fit.json").exists());

    let out = unfoldcov(&["toys", "--toys", "5"], &config, dir.path());
    assert!(out.status.success());
    let root = dir.path().join("double_gaussian");
    assert_eq!(count(&root, &|n| n == "covariance.csv"), 8);
    assert!(!root.join("tau_0/inverse_hessian").exists());

    let out = unfoldcov(&["toys", "--methods", "inverse_hessian"], &config, dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_errors_exit_with_status_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    for (text, message) in [
        ("scenario = \"double_gaussian\"\nfoo = 1\n", "unknown key: foo"),
        ("scenario = \"double_gaussian\"\ntau = [-1]\n", "tau must be finite and >= 0"),
        ("tau = [0]\n", "missing required key: scenario"),
        ("scenario = \"nowhere.toml\"\n", "nowhere.toml"),
    ] {
        fs::write(&config, text).unwrap();
        let out = unfoldcov(&["run"], &config, dir.path());
        assert_eq!(out.status.code(), Some(1), "{text}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(message), "{text}");
    }
    let out = unfoldcov(&["run", "--methods", "bootstrap"], &shipped("double_gaussian"), dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_unfoldcov")).arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numerical_failure_leaves_marker() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "scenario = \"double_gaussian\"\nresponse_model = \"monte_carlo\"\nn_mc = 1000\n",
    )
    .unwrap();
    let out = unfoldcov(&["run"], &config, dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let marker = fs::read_to_string(dir.path().join("double_gaussian/FAILED")).unwrap();
    assert!(marker.starts_with("scenario double_gaussian, preparation: truth bin"), "{marker}");
}

#[test]
fn custom_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("flat.toml"),
        r#"
        name = "flat"
        signal = "uniform"
        signal_params = [0.0, 10.0]
        background = "exponential"
        background_params = [0.5]
        n_sig = 20000
        n_bkg = 500
        truth_edges = [0.0, 2.5, 5.0, 7.5, 10.0]
        reco_edges = [0.0, 2.5, 5.0, 7.5, 10.0]
        a = 0.0
        b = 0.0
        theta_aux = [1.0, 0.3, 0.95]
        theta_sigma = [0.01, 0.05, 0.02]
        "#,
    )
    .unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "scenario = \"flat.toml\"\ntau = [0]\ntoys = 20\n").unwrap();
    let out = unfoldcov(&["run"], &config, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("flat/tau_0/hybrid_toys/covariance.csv").exists());
}
