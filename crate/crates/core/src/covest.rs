//! Covariance of the truth-bin estimators by inverse Hessian, frequentist
//! pseudo-experiments and hybrid pseudo-experiments, plus the summary
//! statistics used to compare them.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{refit_for_toy, FitConfig, FitResult, InitStrategy};
use crate::hist::write_matrix_csv;
use crate::objective::{evaluate, hessian_phi, FixedResponse, ParamVector, UnfoldingProblem};
use crate::simkit::{poisson_draw, NuisanceSet, RngStream};

/// Condition number above which a matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;
/// Largest tolerated fraction of failed pseudo-experiments.
pub const MAX_TOY_LOSS: f64 = 0.05;
/// Prior redraws allowed per hybrid toy before giving up.
pub const MAX_REDRAWS: usize = 100;
pub const DEFAULT_TOYS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    InverseHessian,
    FrequentistToys,
    HybridToys,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::InverseHessian, Method::FrequentistToys, Method::HybridToys];

    pub fn label(self) -> &'static str {
        match self {
            Method::InverseHessian => "inverse_hessian",
            Method::FrequentistToys => "frequentist_toys",
            Method::HybridToys => "hybrid_toys",
        }
    }

    pub fn from_label(label: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.label() == label)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Covariance matrix over the truth bins and how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub method: Method,
    /// Pseudo-experiments behind the matrix; 0 for the inverse Hessian.
    pub n_toys_used: usize,
    pub tau: f64,
}

impl CovarianceEstimate {
    /// The inverse Hessian bounds the covariance only for an unbiased
    /// estimator, so it is flagged whenever regularization is on.
    pub fn is_valid(&self) -> bool {
        !(self.method == Method::InverseHessian && self.tau > 0.0)
    }

    pub fn validity(&self) -> &'static str {
        if self.is_valid() {
            "valid"
        } else {
            "regularized: RCB assumptions violated"
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_matrix_csv(&self.matrix, writer)
    }

    /// Largest asymmetry `|V_ij − V_ji|` relative to `max |V|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.matrix.amax();
        if scale == 0.0 {
            return 0.0;
        }
        (&self.matrix - self.matrix.transpose()).amax() / scale
    }

    pub fn min_eigenvalue(&self) -> f64 {
        symmetric_part(&self.matrix)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyMode {
    Frequentist,
    Hybrid,
}

impl ToyMode {
    pub fn method(self) -> Method {
        match self {
            ToyMode::Frequentist => Method::FrequentistToys,
            ToyMode::Hybrid => Method::HybridToys,
        }
    }

    fn stream_label(self) -> &'static str {
        self.method().label()
    }
}

/// Per-toy estimates of one pseudo-experiment run.
#[derive(Debug, Clone)]
pub struct ToyEnsemble {
    pub mode: ToyMode,
    pub tau: f64,
    /// Estimates of the converged toys, in toy-index order.
    pub estimates: Vec<ParamVector>,
    /// Convergence flag for every generated toy.
    pub converged: Vec<bool>,
}

impl ToyEnsemble {
    pub fn n_generated(&self) -> usize {
        self.converged.len()
    }

    pub fn n_used(&self) -> usize {
        self.estimates.len()
    }

    pub fn converged_fraction(&self) -> f64 {
        if self.converged.is_empty() {
            return 0.0;
        }
        self.n_used() as f64 / self.n_generated() as f64
    }

    /// Mean of the μ estimates over the ensemble.
    pub fn mean_mu(&self) -> Vec<f64> {
        let m = self.estimates.first().map_or(0, |p| p.mu.len());
        let mut mean = vec![0.0; m];
        for p in &self.estimates {
            for (a, b) in mean.iter_mut().zip(&p.mu) {
                *a += b;
            }
        }
        let t = self.n_used().max(1) as f64;
        mean.iter_mut().for_each(|a| *a /= t);
        mean
    }
}

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse via LU with partial pivoting, refusing ill-conditioned input.
fn checked_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    m.clone().lu().try_inverse().ok_or(Error::Singular { condition })
}

/// `(−H)⁻¹` of Φ at the fitted point, inverted over all of (μ, θ) and then
/// restricted to the μ block.
pub fn cov_inverse_hessian(problem: &UnfoldingProblem, fit: &FitResult) -> Result<CovarianceEstimate> {
    if !fit.converged {
        return Err(Error::NotConverged("inverse Hessian needs a converged fit".into()));
    }
    let neg = -hessian_phi(problem, &fit.params())?;
    let eigen = neg.clone().symmetric_eigenvalues();
    let min = eigen.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eigen.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(min > 0.0) {
        return Err(Error::NotNegativeDefinite { eigenvalue: -min });
    }
    if max / min > MAX_CONDITION {
        return Err(Error::Singular { condition: max / min });
    }
    let inverse = symmetric_part(&checked_inverse(&neg)?);
    let m = problem.n_truth();
    Ok(CovarianceEstimate {
        matrix: inverse.view((0, 0), (m, m)).into_owned(),
        method: Method::InverseHessian,
        n_toys_used: 0,
        tau: problem.tau(),
    })
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + sd * z
}

fn poisson_counts<R: Rng + ?Sized>(nu: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    nu.iter().map(|&v| poisson_draw(v, rng)).collect()
}

fn check_toys(n_toys: usize) -> Result<()> {
    if n_toys < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 pseudo-experiments, got {n_toys}")));
    }
    Ok(())
}

/// Drops failed toys, erroring if more than [`MAX_TOY_LOSS`] failed.
fn collect_ensemble(mode: ToyMode, tau: f64, results: Vec<Result<Option<ParamVector>>>) -> Result<ToyEnsemble> {
    let total = results.len();
    let mut estimates = Vec::with_capacity(total);
    let mut converged = Vec::with_capacity(total);
    for r in results {
        match r? {
            Some(p) => {
                estimates.push(p);
                converged.push(true);
            }
            None => converged.push(false),
        }
    }
    let failed = total - estimates.len();
    if failed as f64 > MAX_TOY_LOSS * total as f64 {
        return Err(Error::ToyLoss { failed, total });
    }
    Ok(ToyEnsemble {
        mode,
        tau,
        estimates,
        converged,
    })
}

fn fitted(r: Result<FitResult>) -> Result<Option<ParamVector>> {
    match r {
        Ok(f) if f.converged => Ok(Some(f.params())),
        Ok(_) => Ok(None),
        // A toy that drives the fit somewhere non-finite is a failed toy;
        // anything else is a setup error.
        Err(Error::NonFinite(_)) | Err(Error::NonPositiveWidth { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Pseudo-experiments drawn from the fitted model: counts from
/// `ν(μ̂, θ̂)`, auxiliary measurements from `Gaus(θ̂, σ)`, each refit with
/// the full objective at the same τ.
///
/// Toy `t` draws from `RngStream(seed, "frequentist_toys", t)`, so the
/// ensemble does not depend on the number of worker threads.
pub fn run_frequentist_toys(
    problem: &UnfoldingProblem,
    fit: &FitResult,
    n_toys: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<ToyEnsemble> {
    check_toys(n_toys)?;
    if !fit.converged {
        return Err(Error::NotConverged("toys need a converged nominal fit".into()));
    }
    let nu = evaluate(problem, &fit.mu_hat, &fit.theta_hat)?.nu;
    let widths = problem.constraints().widths().to_vec();
    let config = FitConfig {
        init: InitStrategy::Given(fit.params()),
        ..config.clone()
    };
    let mode = ToyMode::Frequentist;
    let results: Vec<Result<Option<ParamVector>>> = (0..n_toys)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(seed, mode.stream_label(), t as u64);
            let counts = poisson_counts(&nu, &mut rng)?;
            let aux = fit
                .theta_hat
                .iter()
                .zip(&widths)
                .map(|(&th, &s)| gaussian(&mut rng, th, s))
                .collect();
            fitted(refit_for_toy(problem, counts, Some(aux), &config))
        })
        .collect();
    collect_ensemble(mode, problem.tau(), results)
}

/// Pseudo-experiments with nuisance values drawn from the prior
/// `Gaus(θ̃, σ)` at generation only. Each toy is unfolded with the response
/// and background frozen at θ̃ and no nuisance parameters in the fit.
///
/// Draws outside the model's admissible region are redrawn up to
/// [`MAX_REDRAWS`] times.
pub fn run_hybrid_toys(
    problem: &UnfoldingProblem,
    fit: &FitResult,
    n_toys: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<ToyEnsemble> {
    check_toys(n_toys)?;
    let model = problem.model();
    let prior = problem.constraints();
    let nominal = UnfoldingProblem::new(
        problem.observed().clone(),
        Arc::new(FixedResponse::frozen(model.as_ref(), prior.aux())?),
        NuisanceSet::empty(),
        problem.tau(),
    )?;
    let config = FitConfig {
        init: InitStrategy::Given(ParamVector::new(fit.mu_hat.clone(), vec![])),
        ..config.clone()
    };
    let mode = ToyMode::Hybrid;
    let results: Vec<Result<Option<ParamVector>>> = (0..n_toys)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(seed, mode.stream_label(), t as u64);
            let mut redraws = 0;
            let theta = loop {
                let theta: Vec<f64> = prior
                    .aux()
                    .iter()
                    .zip(prior.widths())
                    .map(|(&a, &s)| gaussian(&mut rng, a, s))
                    .collect();
                if model.admissible(&theta) {
                    break theta;
                }
                redraws += 1;
                if redraws >= MAX_REDRAWS {
                    return Err(Error::RedrawLimit {
                        toy: t,
                        limit: MAX_REDRAWS,
                    });
                }
            };
            let nu = evaluate(problem, &fit.mu_hat, &theta)?.nu;
            let counts = poisson_counts(&nu, &mut rng)?;
            fitted(refit_for_toy(&nominal, counts, None, &config))
        })
        .collect();
    collect_ensemble(mode, problem.tau(), results)
}

/// Unbiased sample covariance of all estimated parameters, μ then θ.
pub fn full_sample_covariance(ensemble: &ToyEnsemble) -> Result<DMatrix<f64>> {
    let t = ensemble.n_used();
    if t < 2 {
        return Err(Error::InvalidInput(format!("sample covariance needs at least 2 toys, got {t}")));
    }
    let dim = ensemble.estimates[0].len();
    let rows: Vec<Vec<f64>> = ensemble.estimates.iter().map(ParamVector::packed).collect();
    let mut mean = vec![0.0; dim];
    for r in &rows {
        for (a, b) in mean.iter_mut().zip(r) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|a| *a /= t as f64);
    let mut cov = DMatrix::zeros(dim, dim);
    for r in &rows {
        let d: Vec<f64> = r.iter().zip(&mean).map(|(a, b)| a - b).collect();
        for i in 0..dim {
            for j in 0..=i {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[(i, j)] / (t - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// μ block of [`full_sample_covariance`].
pub fn sample_covariance(ensemble: &ToyEnsemble) -> Result<CovarianceEstimate> {
    let full = full_sample_covariance(ensemble)?;
    let m = ensemble.estimates[0].mu.len();
    Ok(CovarianceEstimate {
        matrix: full.view((0, 0), (m, m)).into_owned(),
        method: ensemble.mode.method(),
        n_toys_used: ensemble.n_used(),
        tau: ensemble.tau,
    })
}

/// Monte Carlo standard error of each sample-covariance element under a
/// Gaussian approximation, `√((V_ii V_jj + V_ij²)/(T − 1))`.
pub fn covariance_standard_error(v: &CovarianceEstimate) -> DMatrix<f64> {
    let m = &v.matrix;
    let t = v.n_toys_used.max(2) as f64;
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        ((m[(i, i)] * m[(j, j)] + m[(i, j)] * m[(i, j)]) / (t - 1.0)).sqrt()
    })
}

/// Mean over bins of `√V_ii / μ̂_i`.
pub fn avg_rel_error(v: &CovarianceEstimate, mu_hat: &[f64]) -> Result<f64> {
    if mu_hat.len() != v.dim() {
        return Err(Error::Dimension(format!(
            "{} estimates against a {}-bin covariance",
            mu_hat.len(),
            v.dim()
        )));
    }
    if let Some((i, m)) = mu_hat.iter().enumerate().find(|(_, m)| !(**m > 0.0)) {
        return Err(Error::InvalidInput(format!("mu_hat[{i}] = {m} must be positive")));
    }
    let sum: f64 = mu_hat
        .iter()
        .enumerate()
        .map(|(i, m)| v.matrix[(i, i)].max(0.0).sqrt() / m)
        .sum();
    Ok(sum / mu_hat.len() as f64)
}

/// Standard error of [`avg_rel_error`] from the per-bin variance of a
/// sample variance, treating bins as independent.
pub fn avg_rel_error_standard_error(v: &CovarianceEstimate, mu_hat: &[f64]) -> Result<f64> {
    avg_rel_error(v, mu_hat)?;
    let t = v.n_toys_used.max(2) as f64;
    let n = mu_hat.len() as f64;
    // sd(√V) ≈ √V / √(2(T − 1))
    let var: f64 = mu_hat
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let s = v.matrix[(i, i)].max(0.0).sqrt() / m;
            s * s / (2.0 * (t - 1.0))
        })
        .sum();
    Ok(var.sqrt() / n)
}

/// Mean over bins of the global correlation coefficient
/// `√(1 − 1/(V_ii (V⁻¹)_ii))`.
pub fn avg_global_correlation(v: &CovarianceEstimate) -> Result<f64> {
    let inverse = checked_inverse(&v.matrix)?;
    let n = v.dim();
    let sum: f64 = (0..n)
        .map(|i| (1.0 - 1.0 / (v.matrix[(i, i)] * inverse[(i, i)])).clamp(0.0, 1.0).sqrt())
        .sum();
    Ok(sum / n as f64)
}

/// `(μ̂ − μ)ᵀ V⁻¹ (μ̂ − μ) / M`.
pub fn chi2_ndf(mu_hat: &[f64], mu_true: &[f64], v: &CovarianceEstimate) -> Result<f64> {
    if mu_hat.len() != v.dim() || mu_true.len() != v.dim() {
        return Err(Error::Dimension(format!(
            "{} estimates and {} truth values against a {}-bin covariance",
            mu_hat.len(),
            mu_true.len(),
            v.dim()
        )));
    }
    let inverse = checked_inverse(&v.matrix)?;
    let d = nalgebra::DVector::from_iterator(mu_hat.len(), mu_hat.iter().zip(mu_true).map(|(a, b)| a - b));
    Ok((d.transpose() * inverse * &d)[(0, 0)].max(0.0) / mu_hat.len() as f64)
}

/// `100·(Va − Vb)/Vb` elementwise in percent; NaN where `|Vb_ij|` is below
/// `1e-12·max|Vb|`.
pub fn relative_difference(a: &CovarianceEstimate, b: &CovarianceEstimate) -> Result<DMatrix<f64>> {
    if a.matrix.shape() != b.matrix.shape() {
        return Err(Error::Dimension(format!(
            "comparing {:?} with {:?} matrices",
            a.matrix.shape(),
            b.matrix.shape()
        )));
    }
    if a.tau != b.tau {
        return Err(Error::InvalidInput(format!(
            "comparing covariances at tau {} and {}",
            a.tau, b.tau
        )));
    }
    let floor = 1e-12 * b.matrix.amax();
    Ok(a.matrix.zip_map(&b.matrix, |x, y| {
        if y.abs() < floor || y == 0.0 {
            f64::NAN
        } else {
            100.0 * (x - y) / y
        }
    }))
}

/// Mean of `|relative difference|` over the diagonal, in percent.
pub fn mean_abs_diagonal_difference(a: &CovarianceEstimate, b: &CovarianceEstimate) -> Result<f64> {
    let d = relative_difference(a, b)?;
    let diag: Vec<f64> = d.diagonal().iter().copied().filter(|x| x.is_finite()).collect();
    if diag.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(diag.iter().map(|x| x.abs()).sum::<f64>() / diag.len() as f64)
}
