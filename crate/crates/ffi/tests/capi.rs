use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use unfoldcov_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(uc_last_error()) }.to_string_lossy().into_owned()
}

struct SingleBin {
    problem: *mut UcProblem,
    fit: *mut UcFit,
}

impl SingleBin {
    fn new(n: f64) -> Self {
        let mut problem = ptr::null_mut();
        let mut fit = ptr::null_mut();
        unsafe {
            assert_eq!(uc_problem_new(&n, &1.0, &0.0, 1, 1, 0.0, &mut problem), UcStatus::Ok);
            assert_eq!(uc_fit(problem, &mut fit), UcStatus::Ok);
        }
        SingleBin { problem, fit }
    }

    fn variance(&self, method: UcMethod, toys: usize) -> f64 {
        let mut cov = ptr::null_mut();
        let mut value = 0.0;
        unsafe {
            assert_eq!(uc_covariance(self.problem, self.fit, method as u32, toys, 7, &mut cov), UcStatus::Ok);
            assert_eq!(uc_covariance_dim(cov), 1);
            assert_eq!(uc_covariance_values(cov, &mut value, 1), UcStatus::Ok);
            uc_covariance_free(cov);
        }
        value
    }
}

impl Drop for SingleBin {
    fn drop(&mut self) {
        unsafe {
            uc_fit_free(self.fit);
            uc_problem_free(self.problem);
        }
    }
}

#[test]
fn single_bin_variance_by_every_method() {
    let s = SingleBin::new(100.0);
    unsafe {
        assert!(uc_fit_converged(s.fit));
        let mut mu = 0.0;
        assert_eq!(uc_fit_mu(s.fit, &mut mu, 1), UcStatus::Ok);
        assert!((mu - 100.0).abs() < 1e-6, "{mu}");
        assert_eq!(uc_fit_theta(s.fit, ptr::null_mut(), 0), UcStatus::Ok);
        assert_eq!(uc_problem_n_truth(s.problem), 1);
        assert_eq!(uc_problem_n_nuisance(s.problem), 0);
    }
    assert!((s.variance(UcMethod::InverseHessian, 0) - 100.0).abs() < 1.0);
    let tol = 3.0 * (2.0f64 / 2000.0).sqrt() * 100.0;
    assert!((s.variance(UcMethod::FrequentistToys, 2000) - 100.0).abs() < tol);
    assert!((s.variance(UcMethod::HybridToys, 2000) - 100.0).abs() < tol);
}

#[test]
fn statistics_through_handles() {
    let s = SingleBin::new(100.0);
    let mut cov = ptr::null_mut();
    unsafe {
        assert_eq!(uc_covariance(s.problem, s.fit, 0, 0, 0, &mut cov), UcStatus::Ok);
        let mut out = f64::NAN;
        assert_eq!(uc_avg_rel_error(cov, &100.0, 1, &mut out), UcStatus::Ok);
        assert!((out - 0.1).abs() < 1e-3, "{out}");
        assert_eq!(uc_avg_global_correlation(cov, &mut out), UcStatus::Ok);
        assert_eq!(out, 0.0);
        assert_eq!(uc_chi2_ndf(cov, &110.0, &100.0, 1, &mut out), UcStatus::Ok);
        assert!((out - 1.0).abs() < 1e-2, "{out}");
        assert_eq!(uc_avg_rel_error(cov, &-1.0, 1, &mut out), UcStatus::InvalidArgument);
        uc_covariance_free(cov);
    }
}

#[test]
fn errors_set_status_and_message() {
    let s = SingleBin::new(50.0);
    let mut cov = ptr::null_mut();
    let mut small = [0.0; 1];
    unsafe {
        assert_eq!(uc_fit(ptr::null(), ptr::null_mut()), UcStatus::NullPointer);
        assert!(last_error().contains("problem is null"), "{}", last_error());

        assert_eq!(uc_covariance(s.problem, s.fit, 9, 10, 0, &mut cov), UcStatus::InvalidArgument);
        assert!(last_error().contains("unknown method code 9"));
        assert!(cov.is_null());

        assert_eq!(uc_covariance(s.problem, s.fit, 1, 1, 0, &mut cov), UcStatus::InvalidArgument);

        assert_eq!(uc_fit_mu(s.fit, small.as_mut_ptr(), 0), UcStatus::BufferTooSmall);
        assert_eq!(uc_fit_mu(s.fit, small.as_mut_ptr(), 1), UcStatus::Ok);
        assert_eq!(last_error(), "");

        let mut problem = ptr::null_mut();
        assert_eq!(uc_problem_new(&1.0, &1.5, &0.0, 1, 1, 0.0, &mut problem), UcStatus::InvalidArgument);
        assert_eq!(uc_problem_new(&1.0, &1.0, &0.0, 0, 1, 0.0, &mut problem), UcStatus::InvalidArgument);
        assert!(problem.is_null());

        uc_fit_free(ptr::null_mut());
        uc_problem_free(ptr::null_mut());
        uc_covariance_free(ptr::null_mut());
        uc_config_free(ptr::null_mut());
        uc_report_free(ptr::null_mut());
    }
}

#[test]
fn config_setters_validate() {
    let name = CString::new("double_gaussian").unwrap();
    let mut config = ptr::null_mut();
    unsafe {
        assert_eq!(uc_config_builtin(name.as_ptr(), &mut config), UcStatus::Ok);
        assert_eq!(uc_config_set_taus(config, [-1.0].as_ptr(), 1), UcStatus::Config);
        assert!(last_error().contains(">= 0"));
        assert_eq!(uc_config_set_taus(config, [1e-5, 1e-6].as_ptr(), 2), UcStatus::Config);
        assert_eq!(uc_config_set_taus(config, ptr::null(), 0), UcStatus::Config);
        assert_eq!(uc_config_set_methods(config, [7u32].as_ptr(), 1), UcStatus::InvalidArgument);
        assert_eq!(uc_config_set_toys(config, 1), UcStatus::Config);
        assert_eq!(uc_config_set_toys(config, 20), UcStatus::Ok);
        assert_eq!(uc_config_set_seed(config, 3), UcStatus::Ok);

        let mut problem = ptr::null_mut();
        assert_eq!(uc_problem_from_config(config, 1e-6, &mut problem), UcStatus::Ok);
        assert_eq!(uc_problem_n_truth(problem), 5);
        assert_eq!(uc_problem_n_nuisance(problem), 3);
        uc_problem_free(problem);
        uc_config_free(config);

        let missing = CString::new("/nonexistent/run.toml").unwrap();
        assert_eq!(uc_config_from_file(missing.as_ptr(), &mut config), UcStatus::Io);
    }
}

#[test]
fn scenario_run_reports_rows() {
    let dir = tempfile::tempdir().unwrap();
    let name = CString::new("double_gaussian").unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut config = ptr::null_mut();
    let mut report = ptr::null_mut();
    unsafe {
        assert_eq!(uc_config_builtin(name.as_ptr(), &mut config), UcStatus::Ok);
        assert_eq!(uc_config_set_taus(config, [0.0, 1e-5].as_ptr(), 2), UcStatus::Ok);
        assert_eq!(uc_config_set_methods(config, [0u32].as_ptr(), 1), UcStatus::Ok);
        assert_eq!(uc_config_set_output_dir(config, out.as_ptr()), UcStatus::Ok);
        assert_eq!(uc_run_scenario(config, &mut report), UcStatus::Ok, "{}", last_error());
        assert_eq!(uc_report_len(report), 2);
        let mut row = std::mem::MaybeUninit::<UcSummary>::uninit();
        assert_eq!(uc_report_summary(report, 1, row.as_mut_ptr()), UcStatus::Ok);
        let row = row.assume_init();
        assert_eq!(row.method, UcMethod::InverseHessian);
        assert_eq!(row.tau, 1e-5);
        assert!(!row.valid);
        assert!(row.avg_sigma_rel > 0.0);
        let mut spare = row;
        assert_eq!(uc_report_summary(report, 2, &mut spare), UcStatus::InvalidArgument);
        uc_report_free(report);
        uc_config_free(config);
    }
    assert!(dir.path().join("double_gaussian/tau_1e-5/inverse_hessian/covariance.csv").exists());
}

#[test]
fn header_declares_the_api_and_compiles() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/unfoldcov.h")).unwrap();
    for symbol in [
        "typedef struct UcProblem UcProblem;",
        "UC_STATUS_TOY_LOSS = 6",
        "UC_METHOD_HYBRID_TOYS = 2",
        "const char *uc_last_error(void);",
        "enum UcStatus uc_covariance(",
        "void uc_report_free(struct UcReport *report);",
    ] {
        assert!(header.contains(symbol), "missing {symbol}");
    }
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        return;
    };
    assert!(cc.status.success());
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(dir.join("examples/single_bin.c"))
        .status()
        .unwrap();
    assert!(status.success());
}
