//! C ABI for `unfoldcov`.
//!
//! Objects live behind opaque handles created by `uc_*_new`/`uc_*_from_*`
//! calls and released with the matching `uc_*_free`. Every fallible call
//! returns a [`UcStatus`]; on failure [`uc_last_error`] describes the
//! problem. Array outputs are copied into caller buffers whose length is
//! checked against the required size.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use nalgebra::DMatrix;
use unfoldcov::cli::{prepare_scenario, run_scenario, RunConfig, RunReport};
use unfoldcov::covest::{avg_global_correlation, avg_rel_error, chi2_ndf, CovarianceEstimate, Method};
use unfoldcov::fit::{maximize_phi, FitConfig, FitResult};
use unfoldcov::hist::{BinEdges, Histogram1D, ResponseMatrix};
use unfoldcov::objective::{FixedResponse, UnfoldingProblem};
use unfoldcov::simkit::NuisanceSet;
use unfoldcov::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Config = 4,
    Numerical = 5,
    ToyLoss = 6,
    Io = 7,
    Panic = 8,
}

/// Covariance estimation methods.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcMethod {
    InverseHessian = 0,
    FrequentistToys = 1,
    HybridToys = 2,
}

/// Run configuration.
pub struct UcConfig {
    inner: RunConfig,
}

/// Data, response model, constraints and τ.
pub struct UcProblem {
    inner: UnfoldingProblem,
}

/// Result of a nominal fit.
pub struct UcFit {
    inner: FitResult,
}

/// Covariance matrix over the truth bins.
pub struct UcCovariance {
    inner: CovarianceEstimate,
}

/// Outcome of a full scenario run.
pub struct UcReport {
    inner: RunReport,
}

/// One row of a run's summary table.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcSummary {
    pub method: UcMethod,
    pub tau: f64,
    pub avg_sigma_rel: f64,
    pub avg_global_corr: f64,
    pub chi2_ndf: f64,
    pub t_used: usize,
    pub converged_fraction: f64,
    /// 0 when the inverse Hessian is used with regularization.
    pub valid: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

/// Message describing the most recent failure on the calling thread; empty
/// when none. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn uc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

struct Failure(UcStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let status = match err.root() {
            Error::Binning(_) | Error::InvalidInput(_) | Error::Dimension(_) => UcStatus::InvalidArgument,
            Error::UnknownKey(_) | Error::MissingKey(_) | Error::Config(_) => UcStatus::Config,
            Error::Io { .. } | Error::Csv(_) | Error::Json(_) => UcStatus::Io,
            Error::ToyLoss { .. } => UcStatus::ToyLoss,
            _ => UcStatus::Numerical,
        };
        Failure(status, err.to_string())
    }
}

impl Failure {
    fn null(what: &str) -> Self {
        Failure(UcStatus::NullPointer, format!("{what} is null"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Failure(UcStatus::InvalidArgument, message.into())
    }
}

type FfiResult<T> = Result<T, Failure>;

/// Runs `body`, converting errors and panics into a status.
fn guard<F: FnOnce() -> FfiResult<()>>(body: F) -> UcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            UcStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            UcStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(ptr: *const T, what: &str) -> FfiResult<&'a T> {
    ptr.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn borrow_mut<'a, T>(ptr: *mut T, what: &str) -> FfiResult<&'a mut T> {
    ptr.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn string(ptr: *const c_char, what: &str) -> FfiResult<String> {
    if ptr.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(str::to_string)
        .map_err(|_| Failure::invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    let out = borrow_mut(out, "output handle")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> FfiResult<()> {
    if len < values.len() {
        return Err(Failure(
            UcStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    if !values.is_empty() {
        if out.is_null() {
            return Err(Failure::null("output buffer"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

unsafe fn free<T>(ptr: *mut T) {
    if !ptr.is_null() {
        drop(Box::from_raw(ptr));
    }
}

fn from_method(method: Method) -> UcMethod {
    match method {
        Method::InverseHessian => UcMethod::InverseHessian,
        Method::FrequentistToys => UcMethod::FrequentistToys,
        Method::HybridToys => UcMethod::HybridToys,
    }
}

fn method_from_code(code: u32) -> FfiResult<Method> {
    match code {
        0 => Ok(Method::InverseHessian),
        1 => Ok(Method::FrequentistToys),
        2 => Ok(Method::HybridToys),
        other => Err(Failure::invalid(format!("unknown method code {other}"))),
    }
}

/// Reads a run config file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uc_config_from_file(path: *const c_char, out: *mut *mut UcConfig) -> UcStatus {
    guard(|| {
        let path = PathBuf::from(string(path, "path")?);
        store(out, UcConfig { inner: RunConfig::from_file(&path)? })
    })
}

/// Default config for a built-in scenario (`double_gaussian` or `exponential`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uc_config_builtin(name: *const c_char, out: *mut *mut UcConfig) -> UcStatus {
    guard(|| {
        let name = string(name, "name")?;
        store(out, UcConfig { inner: RunConfig::builtin(&name)? })
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn uc_config_set_seed(config: *mut UcConfig, seed: u64) -> UcStatus {
    guard(|| {
        borrow_mut(config, "config")?.inner.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn uc_config_set_toys(config: *mut UcConfig, toys: usize) -> UcStatus {
    guard(|| {
        let config = borrow_mut(config, "config")?;
        let previous = config.inner.toys;
        config.inner.toys = toys;
        config.inner.validate().inspect_err(|_| config.inner.toys = previous)?;
        Ok(())
    })
}

/// Replaces the τ grid.
///
/// # Safety
/// `config` must be a live handle and `taus` point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn uc_config_set_taus(config: *mut UcConfig, taus: *const f64, n: usize) -> UcStatus {
    guard(|| {
        let config = borrow_mut(config, "config")?;
        let points = slice(taus, n, "taus")?
            .iter()
            .map(|&t| unfoldcov::cli::TauPoint::from_value(t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut updated = config.inner.clone();
        updated.taus = points;
        updated.validate()?;
        config.inner = updated;
        Ok(())
    })
}

/// Selects methods by code, see [`UcMethod`].
///
/// # Safety
/// `config` must be a live handle and `methods` point to `n` codes.
#[no_mangle]
pub unsafe extern "C" fn uc_config_set_methods(config: *mut UcConfig, methods: *const u32, n: usize) -> UcStatus {
    guard(|| {
        let config = borrow_mut(config, "config")?;
        if n > 0 && methods.is_null() {
            return Err(Failure::null("methods"));
        }
        let codes = if n == 0 { &[][..] } else { std::slice::from_raw_parts(methods, n) };
        let mut updated = config.inner.clone();
        updated.methods = codes.iter().map(|&c| method_from_code(c)).collect::<FfiResult<_>>()?;
        updated.validate()?;
        config.inner = updated;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn uc_config_set_output_dir(config: *mut UcConfig, dir: *const c_char) -> UcStatus {
    guard(|| {
        let dir = string(dir, "dir")?;
        borrow_mut(config, "config")?.inner.output_dir = PathBuf::from(dir);
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uc_config_free(config: *mut UcConfig) {
    free(config)
}

/// Runs the full comparison and writes its output files.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uc_run_scenario(config: *const UcConfig, out: *mut *mut UcReport) -> UcStatus {
    guard(|| {
        let report = run_scenario(&borrow(config, "config")?.inner)?;
        store(out, UcReport { inner: report })
    })
}

/// Number of summary rows, one per (τ, method).
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn uc_report_len(report: *const UcReport) -> usize {
    report.as_ref().map_or(0, |r| r.inner.estimates.len())
}

/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uc_report_summary(report: *const UcReport, index: usize, out: *mut UcSummary) -> UcStatus {
    guard(|| {
        let report = &borrow(report, "report")?.inner;
        let entry = report
            .estimates
            .get(index)
            .ok_or_else(|| Failure::invalid(format!("row {index} of {}", report.estimates.len())))?;
        let tau = entry
            .summary
            .tau
            .parse()
            .map_err(|_| Failure::invalid(format!("tau label {}", entry.summary.tau)))?;
        let row = &entry.summary;
        *borrow_mut(out, "out")? = UcSummary {
            method: from_method(entry.method),
            tau,
            avg_sigma_rel: row.avg_sigma_rel,
            avg_global_corr: row.avg_global_corr,
            chi2_ndf: row.chi2_ndf,
            t_used: row.t_used,
            converged_fraction: row.converged_fraction,
            valid: row.validity == "valid",
        };
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uc_report_free(report: *mut UcReport) {
    free(report)
}

/// Problem of a configured scenario at one τ, with its observed data drawn
/// from the config's seed.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uc_problem_from_config(
    config: *const UcConfig,
    tau: f64,
    out: *mut *mut UcProblem,
) -> UcStatus {
    guard(|| {
        let prepared = prepare_scenario(&borrow(config, "config")?.inner)?;
        store(out, UcProblem { inner: prepared.problem(tau)? })
    })
}

/// Problem with a fixed response and no nuisance parameters. `response` is
/// row-major with `n_reco` rows and `n_truth` columns; bins are unit-width.
///
/// # Safety
/// `observed` and `background` must point to `n_reco` values, `response`
/// to `n_reco * n_truth` values, and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn uc_problem_new(
    observed: *const f64,
    response: *const f64,
    background: *const f64,
    n_reco: usize,
    n_truth: usize,
    tau: f64,
    out: *mut *mut UcProblem,
) -> UcStatus {
    guard(|| {
        if n_reco == 0 || n_truth == 0 {
            return Err(Failure::invalid("need at least one reco and one truth bin"));
        }
        let size = n_reco
            .checked_mul(n_truth)
            .ok_or_else(|| Failure::invalid("response size overflows"))?;
        let observed = slice(observed, n_reco, "observed")?;
        let entries = slice(response, size, "response")?;
        let background = slice(background, n_reco, "background")?;
        let reco = BinEdges::uniform(0.0, n_reco as f64, n_reco)?;
        let truth = BinEdges::uniform(0.0, n_truth as f64, n_truth)?;
        let matrix = ResponseMatrix::new(DMatrix::from_row_slice(n_reco, n_truth, entries), truth, reco.clone())?;
        let model = FixedResponse::new(matrix, background.to_vec())?;
        let data = Histogram1D::from_contents(reco, observed.to_vec())?;
        let problem = UnfoldingProblem::new(data, Arc::new(model), NuisanceSet::empty(), tau)?;
        store(out, UcProblem { inner: problem })
    })
}

/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn uc_problem_n_truth(problem: *const UcProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.n_truth())
}

/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn uc_problem_n_nuisance(problem: *const UcProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.n_nuisance())
}

/// # Safety
/// `problem` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uc_problem_free(problem: *mut UcProblem) {
    free(problem)
}

/// Maximizes Φ from the data-driven starting point.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uc_fit(problem: *const UcProblem, out: *mut *mut UcFit) -> UcStatus {
    guard(|| {
        let fit = maximize_phi(&borrow(problem, "problem")?.inner, &FitConfig::default())?;
        store(out, UcFit { inner: fit })
    })
}

/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn uc_fit_converged(fit: *const UcFit) -> bool {
    fit.as_ref().is_some_and(|f| f.inner.converged)
}

/// Copies μ̂ into `out`, which holds `len` values.
///
/// # Safety
/// `fit` must be a live handle and `out` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn uc_fit_mu(fit: *const UcFit, out: *mut f64, len: usize) -> UcStatus {
    guard(|| copy_out(&borrow(fit, "fit")?.inner.mu_hat, out, len))
}

/// Copies θ̂ into `out`, which holds `len` values.
///
/// # Safety
/// `fit` must be a live handle and `out` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn uc_fit_theta(fit: *const UcFit, out: *mut f64, len: usize) -> UcStatus {
    guard(|| copy_out(&borrow(fit, "fit")?.inner.theta_hat, out, len))
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uc_fit_free(fit: *mut UcFit) {
    free(fit)
}

/// Covariance of μ̂ by `method`, a [`UcMethod`] code. `n_toys` and `seed`
/// are ignored by the inverse Hessian.
///
/// # Safety
/// `problem` and `fit` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uc_covariance(
    problem: *const UcProblem,
    fit: *const UcFit,
    method: u32,
    n_toys: usize,
    seed: u64,
    out: *mut *mut UcCovariance,
) -> UcStatus {
    guard(|| {
        let problem = &borrow(problem, "problem")?.inner;
        let fit = &borrow(fit, "fit")?.inner;
        let (estimate, _) = unfoldcov::cli::estimate(method_from_code(method)?, problem, fit, n_toys, seed)?;
        store(out, UcCovariance { inner: estimate })
    })
}

/// # Safety
/// `cov` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn uc_covariance_dim(cov: *const UcCovariance) -> usize {
    cov.as_ref().map_or(0, |c| c.inner.dim())
}

/// Copies the matrix row-major into `out`, which holds `len` values.
///
/// # Safety
/// `cov` must be a live handle and `out` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn uc_covariance_values(cov: *const UcCovariance, out: *mut f64, len: usize) -> UcStatus {
    guard(|| {
        let m = &borrow(cov, "covariance")?.inner.matrix;
        let row_major: Vec<f64> = m.transpose().iter().copied().collect();
        copy_out(&row_major, out, len)
    })
}

/// Mean over bins of √V_ii / μ̂_i.
///
/// # Safety
/// `cov` must be a live handle, `mu_hat` point to `n` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn uc_avg_rel_error(
    cov: *const UcCovariance,
    mu_hat: *const f64,
    n: usize,
    out: *mut f64,
) -> UcStatus {
    guard(|| {
        let value = avg_rel_error(&borrow(cov, "covariance")?.inner, slice(mu_hat, n, "mu_hat")?)?;
        *borrow_mut(out, "out")? = value;
        Ok(())
    })
}

/// Mean global correlation coefficient.
///
/// # Safety
/// `cov` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn uc_avg_global_correlation(cov: *const UcCovariance, out: *mut f64) -> UcStatus {
    guard(|| {
        let value = avg_global_correlation(&borrow(cov, "covariance")?.inner)?;
        *borrow_mut(out, "out")? = value;
        Ok(())
    })
}

/// χ²/ndf of `mu_hat` against `mu_true`.
///
/// # Safety
/// `cov` must be a live handle, `mu_hat` and `mu_true` point to `n` values
/// and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn uc_chi2_ndf(
    cov: *const UcCovariance,
    mu_hat: *const f64,
    mu_true: *const f64,
    n: usize,
    out: *mut f64,
) -> UcStatus {
    guard(|| {
        let value = chi2_ndf(
            slice(mu_hat, n, "mu_hat")?,
            slice(mu_true, n, "mu_true")?,
            &borrow(cov, "covariance")?.inner,
        )?;
        *borrow_mut(out, "out")? = value;
        Ok(())
    })
}

/// # Safety
/// `cov` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uc_covariance_free(cov: *mut UcCovariance) {
    free(cov)
}
