//! Regularized maximum-likelihood fit: maximizes Φ over (μ, θ).
//!
//! The optimizer is a damped Fisher-scoring ascent in transformed
//! coordinates `u = ln μ` and `v = (θ − θ̃)/σ`, with an Armijo backtracking
//! line search on Φ. Truth-bin estimates that want to go to zero stop at
//! [`MU_FLOOR`].

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{
    gradient_from, local_model, log_factorial_sum, phi_deviance, second_difference_gram, LocalModel,
    ParamVector, UnfoldingProblem,
};

/// Smallest truth-bin estimate; zero estimates are reported at this value.
pub const MU_FLOOR: f64 = 1e-3;

const MAX_STEP: f64 = 10.0;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;
/// Relative gain in Φ below which a failed line search counts as converged.
const ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    /// Start from the data, see [`initial_point`].
    DataDriven,
    Given(ParamVector),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Optimize over `ln μ`.
    Log,
    /// Optimize over `μ` directly.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Convergence when the gradient norm falls below this times `max(|Φ|, 1)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub init: InitStrategy,
    pub transform: Transform,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tolerance: 1e-6,
            max_iterations: 500,
            init: InitStrategy::DataDriven,
            transform: Transform::Log,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidInput(format!(
                "fit tolerance {} must be positive and max iterations {} at least 1",
                self.tolerance, self.max_iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub mu_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub phi_value: f64,
    pub converged: bool,
    pub n_iterations: usize,
    /// Norm of the gradient in the optimizer's coordinates.
    pub final_gradient_norm: f64,
}

impl FitResult {
    pub fn params(&self) -> ParamVector {
        ParamVector::new(self.mu_hat.clone(), self.theta_hat.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Starting point: θ at the auxiliary measurements and μ from background
/// subtracted counts corrected for efficiency.
///
/// With matching truth and reco binning each bin is inverted on its own;
/// otherwise the net count is spread over the truth bins following the
/// model's truth shape (flat when it has none).
pub fn initial_point(problem: &UnfoldingProblem) -> Result<ParamVector> {
    let theta = problem.constraints().aux().to_vec();
    let (response, beta) = problem.model().evaluate(&theta)?;
    let n = problem.observed().contents();
    let eff = response.column_sums();
    let m = problem.n_truth();
    let mu = if response.truth_edges() == response.reco_edges() {
        (0..m)
            .map(|j| {
                let net = n[j] - beta[j];
                if eff[j] > 0.0 {
                    (net / eff[j]).max(MU_FLOOR)
                } else {
                    MU_FLOOR
                }
            })
            .collect()
    } else {
        let shape = problem
            .model()
            .truth_shape()
            .filter(|s| s.len() == m && s.iter().all(|v| *v >= 0.0) && s.iter().sum::<f64>() > 0.0)
            .unwrap_or_else(|| vec![1.0; m]);
        let net: f64 = n.iter().sum::<f64>() - beta.iter().sum::<f64>();
        let folded: f64 = shape.iter().zip(&eff).map(|(s, e)| s * e).sum();
        let scale = if folded > 0.0 { net / folded } else { 0.0 };
        shape.iter().map(|s| (s * scale).max(MU_FLOOR)).collect()
    };
    Ok(ParamVector::new(mu, theta))
}

struct Coordinates<'a> {
    problem: &'a UnfoldingProblem,
    transform: Transform,
    m: usize,
    lower: f64,
    /// Upper bound per coordinate, finite only where the model saturates.
    upper: Vec<f64>,
}

impl Coordinates<'_> {
    fn to_z(&self, p: &ParamVector) -> Vec<f64> {
        let c = self.problem.constraints();
        let mut z: Vec<f64> = p
            .mu
            .iter()
            .map(|&mu| match self.transform {
                Transform::Log => mu.max(MU_FLOOR).ln(),
                Transform::Identity => mu.max(MU_FLOOR),
            })
            .collect();
        z.extend((0..p.theta.len()).map(|k| (p.theta[k] - c.aux()[k]) / c.widths()[k]));
        for (zi, &hi) in z.iter_mut().zip(&self.upper) {
            *zi = zi.min(hi);
        }
        z
    }

    fn from_z(&self, z: &[f64]) -> ParamVector {
        let c = self.problem.constraints();
        let mu = z[..self.m]
            .iter()
            .map(|&u| match self.transform {
                _ if u <= self.lower => MU_FLOOR,
                Transform::Log => u.exp(),
                Transform::Identity => u,
            })
            .collect();
        let theta = (0..z.len() - self.m)
            .map(|k| c.aux()[k] + c.widths()[k] * z[self.m + k])
            .collect();
        ParamVector::new(mu, theta)
    }

    /// `dλ/dz` per coordinate.
    fn scale(&self, p: &ParamVector) -> Vec<f64> {
        let mut s: Vec<f64> = p
            .mu
            .iter()
            .map(|&mu| match self.transform {
                Transform::Log => mu,
                Transform::Identity => 1.0,
            })
            .collect();
        s.extend_from_slice(self.problem.constraints().widths());
        s
    }

    fn objective(&self, p: &ParamVector) -> f64 {
        if !self.problem.model().admissible(&p.theta) {
            return f64::NEG_INFINITY;
        }
        match phi_deviance(self.problem, p) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Curvature of −Φ in the original coordinates.
///
/// With `newton` set this is the full second derivative; otherwise the
/// Fisher-scoring form `Jᵀ diag(1/ν) J + 2τ DᵀD + diag(1/σ²)`, which stays
/// positive definite away from the optimum.
fn curvature(problem: &UnfoldingProblem, local: &LocalModel, newton: bool) -> DMatrix<f64> {
    let response = local.response.matrix();
    let (n_reco, m) = response.shape();
    let k = local.jac_theta.ncols();
    let counts = problem.observed().contents();
    let mut j = DMatrix::zeros(n_reco, m + k);
    j.view_mut((0, 0), (n_reco, m)).copy_from(response);
    j.view_mut((0, m), (n_reco, k)).copy_from(&local.jac_theta);
    let mut weighted = j.clone();
    for (i, &v) in local.nu.iter().enumerate() {
        let w = match (v > 0.0, newton) {
            (false, _) => 0.0,
            (true, true) => counts[i] / (v * v),
            (true, false) => 1.0 / v,
        };
        weighted.row_mut(i).scale_mut(w);
    }
    let mut c = j.tr_mul(&weighted);
    if problem.tau() > 0.0 {
        let g = second_difference_gram(m) * (2.0 * problem.tau());
        let mut block = c.view_mut((0, 0), (m, m));
        block += g;
    }
    for (kk, s) in problem.constraints().widths().iter().enumerate() {
        c[(m + kk, m + kk)] += 1.0 / (s * s);
    }
    if newton {
        let resid: Vec<f64> = counts
            .iter()
            .zip(&local.nu)
            .map(|(&n, &v)| if v > 0.0 { n / v - 1.0 } else { 0.0 })
            .collect();
        for a in 0..k {
            for jj in 0..m {
                let cross: f64 = (0..n_reco).map(|i| resid[i] * local.d_response[a][(i, jj)]).sum();
                c[(jj, m + a)] -= cross;
                c[(m + a, jj)] -= cross;
            }
            for b in 0..k {
                let second: f64 = (0..n_reco).map(|i| resid[i] * local.d2_nu[a][b][i]).sum();
                c[(m + a, m + b)] -= second;
            }
        }
    }
    c
}

fn solve_damped(c: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = Cholesky::new(c.clone()) {
        return Some(ch.solve(g));
    }
    let max_diag = c.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let mut lambda = 1e-10 * max_diag;
    for _ in 0..30 {
        let mut damped = c.clone();
        for i in 0..c.nrows() {
            damped[(i, i)] += lambda;
        }
        if let Some(ch) = Cholesky::new(damped) {
            return Some(ch.solve(g));
        }
        lambda *= 10.0;
    }
    None
}

/// Maximizes Φ. Running out of iterations or line-search progress returns the
/// best point flagged `converged = false`; a start point where Φ is not
/// finite is an error.
pub fn maximize_phi(problem: &UnfoldingProblem, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let start = match &config.init {
        InitStrategy::DataDriven => initial_point(problem)?,
        InitStrategy::Given(p) => p.clone(),
    };
    let m = problem.n_truth();
    let coords = Coordinates {
        problem,
        transform: config.transform,
        m,
        lower: match config.transform {
            Transform::Log => MU_FLOOR.ln(),
            Transform::Identity => MU_FLOOR,
        },
        upper: std::iter::repeat_n(f64::INFINITY, m)
            .chain(
                problem
                    .ceiling()
                    .iter()
                    .zip(problem.constraints().aux())
                    .zip(problem.constraints().widths())
                    .map(|((c, a), w)| (c - a) / w),
            )
            .collect(),
    };
    let mut z = coords.to_z(&start);
    let mut p = coords.from_z(&z);
    let mut phi = coords.objective(&p);
    if !phi.is_finite() {
        return Err(Error::NonFinite(format!("objective at the start point {p:?}")));
    }
    let constant = log_factorial_sum(problem.observed().contents());
    let threshold = |phi_dev: f64| config.tolerance * (phi_dev + constant).abs().max(1.0);

    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm;
    loop {
        let local = local_model(problem, &p.mu, &p.theta)?;
        let g = gradient_from(problem, &p, &local.response, &local.nu, &local.jac_theta)?;
        let scale = coords.scale(&p);
        let gt: Vec<f64> = g.iter().zip(&scale).map(|(a, s)| a * s).collect();
        let free: Vec<usize> = (0..gt.len())
            .filter(|&i| {
                let at_floor = i < m && z[i] <= coords.lower + 1e-12 && gt[i] < 0.0;
                let at_ceiling = z[i] >= coords.upper[i] - 1e-12 && gt[i] > 0.0;
                !(at_floor || at_ceiling)
            })
            .collect();
        grad_norm = free.iter().map(|&i| gt[i] * gt[i]).sum::<f64>().sqrt();
        if grad_norm <= threshold(phi) {
            converged = true;
            break;
        }
        if iterations >= config.max_iterations {
            break;
        }
        iterations += 1;

        let log = config.transform == Transform::Log;
        let full_newton = curvature(problem, &local, true);
        let mut fisher = None;
        let solve = |free: &[usize], fisher: &mut Option<DMatrix<f64>>| {
            let nf = free.len();
            let gf = DVector::from_iterator(nf, free.iter().map(|&i| gt[i]));
            let transformed = |c: &DMatrix<f64>, newton: bool| {
                let mut ct = DMatrix::zeros(nf, nf);
                for (a, &i) in free.iter().enumerate() {
                    for (b, &jj) in free.iter().enumerate() {
                        ct[(a, b)] = scale[i] * c[(i, jj)] * scale[jj];
                    }
                    if i < m && log {
                        ct[(a, a)] -= if newton { gt[i] } else { gt[i].min(0.0) };
                    }
                }
                ct
            };
            match Cholesky::new(transformed(&full_newton, true)) {
                Some(ch) => Some(ch.solve(&gf)),
                None => {
                    let c = fisher.get_or_insert_with(|| curvature(problem, &local, false));
                    solve_damped(&transformed(c, false), &gf)
                }
            }
        };
        // Variables on a bound whose step points outward join the active set.
        let mut free = free;
        let mut step = solve(&free, &mut fisher);
        while let Some(d) = &step {
            let keep: Vec<usize> = free
                .iter()
                .zip(d.iter())
                .filter(|&(&i, &di)| {
                    let out_low = i < m && z[i] <= coords.lower + 1e-12 && di < 0.0;
                    let out_high = z[i] >= coords.upper[i] - 1e-12 && di > 0.0;
                    !(out_low || out_high)
                })
                .map(|(&i, _)| i)
                .collect();
            if keep.len() == free.len() || keep.is_empty() {
                break;
            }
            free = keep;
            step = solve(&free, &mut fisher);
        }
        let Some(delta) = step else {
            break;
        };
        let limit = |mut d: DVector<f64>| {
            let biggest = d.amax();
            if biggest > MAX_STEP {
                d *= MAX_STEP / biggest;
            }
            d
        };
        let search = |delta: &DVector<f64>| {
            let mut alpha = 1.0;
            for _ in 0..MAX_HALVINGS {
                let mut trial = z.clone();
                for (a, &i) in free.iter().enumerate() {
                    trial[i] += alpha * delta[a];
                    if i < m {
                        trial[i] = trial[i].max(coords.lower);
                    }
                    trial[i] = trial[i].min(coords.upper[i]);
                }
                if trial == z {
                    return None;
                }
                let predicted: f64 = free.iter().map(|&i| gt[i] * (trial[i] - z[i])).sum();
                let tp = coords.from_z(&trial);
                let value = coords.objective(&tp);
                if value.is_finite() && value > phi && value >= phi + ARMIJO * predicted && predicted >= 0.0 {
                    return Some((trial, tp, value));
                }
                alpha *= 0.5;
            }
            None
        };
        // Projection can bend a curvature step away from ascent; the
        // projected gradient path always ascends for small enough steps.
        let accepted = search(&limit(delta.clone())).or_else(|| {
            let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| gt[i]));
            search(&limit(gf))
        });
        let Some((trial, tp, value)) = accepted else {
            // No representable ascent left: accept when the quadratic model
            // predicts a gain below the rounding level of Φ.
            let gain: f64 = 0.5 * free.iter().zip(delta.iter()).map(|(&i, d)| gt[i] * d).sum::<f64>();
            converged = gain.abs() <= ROUNDING * (phi + constant).abs().max(1.0);
            break;
        };
        z = trial;
        p = tp;
        phi = value;
    }

    // A nuisance parked at its ceiling only pays constraint cost below its
    // auxiliary value; above the ceiling the model is flat, so move there.
    let c = problem.constraints();
    let mut lifted = false;
    for k in 0..p.theta.len() {
        let ceiling = problem.ceiling()[k];
        if p.theta[k] >= ceiling && c.aux()[k] > ceiling {
            p.theta[k] = c.aux()[k];
            lifted = true;
        }
    }
    if lifted {
        phi = coords.objective(&p);
    }

    Ok(FitResult {
        mu_hat: p.mu,
        theta_hat: p.theta,
        phi_value: phi + constant,
        converged,
        n_iterations: iterations,
        final_gradient_norm: grad_norm,
    })
}

/// Refits `template` with the observed counts and, optionally, the
/// auxiliary measurements replaced.
pub fn refit_for_toy(
    template: &UnfoldingProblem,
    counts: Vec<f64>,
    aux: Option<Vec<f64>>,
    config: &FitConfig,
) -> Result<FitResult> {
    let mut problem = template.with_data(counts)?;
    if let Some(aux) = aux {
        problem = problem.with_aux(aux)?;
    }
    maximize_phi(&problem, config)
}
