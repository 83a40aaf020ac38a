//! The regularized log-objective `Φ(μ, θ) = log L(μ, θ) + τ·S(μ)` and its
//! derivatives.

use std::fmt::Debug;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::hist::{write_matrix_csv, BinEdges, Histogram1D, ResponseMatrix};
use crate::simkit::NuisanceSet;

/// Floor on the θ stencil step relative to `1 + |θ|`, so that very narrow
/// constraints do not push differences into rounding noise.
const MIN_THETA_STEP: f64 = 1e-8;

/// Maps nuisance values to a response matrix and an expected background.
pub trait ResponseModel: Debug + Send + Sync {
    fn truth_edges(&self) -> &BinEdges;

    fn reco_edges(&self) -> &BinEdges;

    fn n_nuisance(&self) -> usize;

    /// Response matrix and expected background per reco bin at `theta`.
    fn evaluate(&self, theta: &[f64]) -> Result<(ResponseMatrix, Vec<f64>)>;

    /// Whether `theta` lies where the model is defined.
    fn admissible(&self, _theta: &[f64]) -> bool {
        true
    }

    /// Per nuisance parameter, the value above which the model output no
    /// longer changes (a saturating efficiency, say). Infinite by default.
    fn nuisance_ceiling(&self) -> Vec<f64> {
        vec![f64::INFINITY; self.n_nuisance()]
    }

    /// Finite-difference step in θ for gradients, as a fraction of each
    /// constraint width.
    fn theta_step(&self) -> f64 {
        0.1
    }

    /// Per nuisance parameter, values where the model's second derivative
    /// jumps; finite-difference stencils do not straddle them.
    fn nuisance_breaks(&self) -> Vec<Vec<f64>> {
        vec![Vec::new(); self.n_nuisance()]
    }

    /// Expected truth spectrum shape, used to start fits when the reco and
    /// truth binnings differ.
    fn truth_shape(&self) -> Option<Vec<f64>> {
        None
    }
}

/// A response and background that do not depend on the nuisance values.
#[derive(Debug, Clone)]
pub struct FixedResponse {
    response: ResponseMatrix,
    background: Vec<f64>,
    n_nuisance: usize,
    truth_shape: Option<Vec<f64>>,
}

impl FixedResponse {
    pub fn new(response: ResponseMatrix, background: Vec<f64>) -> Result<Self> {
        if background.len() != response.n_reco() {
            return Err(Error::Dimension(format!(
                "background has {} bins, response has {} reco bins",
                background.len(),
                response.n_reco()
            )));
        }
        if let Some(b) = background.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
            return Err(Error::InvalidInput(format!("background entry {b} must be finite and >= 0")));
        }
        Ok(FixedResponse {
            response,
            background,
            n_nuisance: 0,
            truth_shape: None,
        })
    }

    /// Declares `k` nuisance parameters the model ignores.
    pub fn with_nuisance(mut self, k: usize) -> Self {
        self.n_nuisance = k;
        self
    }

    pub fn with_truth_shape(mut self, shape: Vec<f64>) -> Self {
        self.truth_shape = Some(shape);
        self
    }

    /// Freezes any model at `theta`.
    pub fn frozen(model: &dyn ResponseModel, theta: &[f64]) -> Result<Self> {
        let (response, background) = model.evaluate(theta)?;
        let mut fixed = FixedResponse::new(response, background)?;
        fixed.truth_shape = model.truth_shape();
        Ok(fixed)
    }

    pub fn response(&self) -> &ResponseMatrix {
        &self.response
    }

    pub fn background(&self) -> &[f64] {
        &self.background
    }
}

impl ResponseModel for FixedResponse {
    fn truth_edges(&self) -> &BinEdges {
        self.response.truth_edges()
    }

    fn reco_edges(&self) -> &BinEdges {
        self.response.reco_edges()
    }

    fn n_nuisance(&self) -> usize {
        self.n_nuisance
    }

    fn evaluate(&self, theta: &[f64]) -> Result<(ResponseMatrix, Vec<f64>)> {
        if theta.len() != self.n_nuisance {
            return Err(Error::Dimension(format!(
                "model takes {} nuisance values, got {}",
                self.n_nuisance,
                theta.len()
            )));
        }
        Ok((self.response.clone(), self.background.clone()))
    }

    fn truth_shape(&self) -> Option<Vec<f64>> {
        self.truth_shape.clone()
    }
}

/// Observed counts, response model, constraints and regularization strength.
#[derive(Debug, Clone)]
pub struct UnfoldingProblem {
    observed: Histogram1D,
    model: Arc<dyn ResponseModel>,
    constraints: NuisanceSet,
    tau: f64,
    ceiling: Vec<f64>,
    /// Stencil break points per nuisance, the ceiling included.
    breaks: Vec<Vec<f64>>,
}

impl UnfoldingProblem {
    pub fn new(
        observed: Histogram1D,
        model: Arc<dyn ResponseModel>,
        constraints: NuisanceSet,
        tau: f64,
    ) -> Result<Self> {
        observed.validate_counts()?;
        if observed.edges() != model.reco_edges() {
            return Err(Error::Dimension("observed binning differs from the model's reco binning".into()));
        }
        if constraints.len() != model.n_nuisance() {
            return Err(Error::Dimension(format!(
                "model takes {} nuisance parameters, constraints have {}",
                model.n_nuisance(),
                constraints.len()
            )));
        }
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidInput(format!("tau = {tau} must be finite and >= 0")));
        }
        let ceiling = model.nuisance_ceiling();
        if ceiling.len() != constraints.len() {
            return Err(Error::Dimension("model ceiling length differs from its nuisance count".into()));
        }
        let mut breaks = model.nuisance_breaks();
        if breaks.len() != constraints.len() {
            return Err(Error::Dimension("model break list length differs from its nuisance count".into()));
        }
        for (b, &c) in breaks.iter_mut().zip(&ceiling) {
            if c.is_finite() {
                b.push(c);
            }
        }
        Ok(UnfoldingProblem {
            observed,
            model,
            constraints,
            tau,
            ceiling,
            breaks,
        })
    }

    pub fn observed(&self) -> &Histogram1D {
        &self.observed
    }

    pub fn model(&self) -> &Arc<dyn ResponseModel> {
        &self.model
    }

    pub fn constraints(&self) -> &NuisanceSet {
        &self.constraints
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_truth(&self) -> usize {
        self.model.truth_edges().n_bins()
    }

    pub fn n_nuisance(&self) -> usize {
        self.constraints.len()
    }

    /// Per nuisance parameter, the value above which the model no longer
    /// depends on it.
    pub fn ceiling(&self) -> &[f64] {
        &self.ceiling
    }

    /// Same problem with the observed counts replaced.
    pub fn with_data(&self, counts: Vec<f64>) -> Result<Self> {
        let observed = Histogram1D::from_contents(self.observed.edges().clone(), counts)?;
        Self::new(observed, self.model.clone(), self.constraints.clone(), self.tau)
    }

    /// Same problem with the auxiliary measurements replaced.
    pub fn with_aux(&self, aux: Vec<f64>) -> Result<Self> {
        let constraints = self.constraints.with_aux(aux)?;
        Self::new(self.observed.clone(), self.model.clone(), constraints, self.tau)
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.observed.clone(), self.model.clone(), self.constraints.clone(), tau)
    }

    fn check(&self, p: &ParamVector) -> Result<()> {
        if p.mu.len() != self.n_truth() || p.theta.len() != self.n_nuisance() {
            return Err(Error::Dimension(format!(
                "parameter vector ({}, {}) against problem ({}, {})",
                p.mu.len(),
                p.theta.len(),
                self.n_truth(),
                self.n_nuisance()
            )));
        }
        Ok(())
    }
}

/// Truth-bin expectations followed by nuisance values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub mu: Vec<f64>,
    pub theta: Vec<f64>,
}

impl ParamVector {
    pub fn new(mu: Vec<f64>, theta: Vec<f64>) -> Self {
        ParamVector { mu, theta }
    }

    pub fn len(&self) -> usize {
        self.mu.len() + self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Packed `(μ₁..μ_M, θ₁..θ_K)`.
    pub fn packed(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.theta).copied().collect()
    }

    pub fn unpack(values: &[f64], n_truth: usize) -> Self {
        ParamVector {
            mu: values[..n_truth].to_vec(),
            theta: values[n_truth..].to_vec(),
        }
    }
}

/// `ν = R·μ + β`.
pub fn expected_counts(response: &ResponseMatrix, mu: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != response.n_truth() || beta.len() != response.n_reco() {
        return Err(Error::Dimension(format!(
            "R is {}x{}, mu has {}, beta has {}",
            response.n_reco(),
            response.n_truth(),
            mu.len(),
            beta.len()
        )));
    }
    let nu = response.matrix() * DVector::from_column_slice(mu);
    Ok(nu.iter().zip(beta).map(|(a, b)| a + b).collect())
}

/// `Σ n log ν − ν − log n!`; `-inf` when some `ν_i <= 0` has `n_i > 0`.
pub fn poisson_loglik(n: &[f64], nu: &[f64]) -> f64 {
    n.iter()
        .zip(nu)
        .map(|(&n, &nu)| {
            if n == 0.0 {
                -nu
            } else if nu <= 0.0 {
                f64::NEG_INFINITY
            } else {
                n * nu.ln() - nu - ln_gamma(n + 1.0)
            }
        })
        .sum()
}

/// Poisson log-likelihood minus its saturated value, `Σ n log(ν/n) − (ν − n)`.
/// Same derivatives as [`poisson_loglik`], better conditioned for comparisons.
pub(crate) fn poisson_deviance(n: &[f64], nu: &[f64]) -> f64 {
    n.iter()
        .zip(nu)
        .map(|(&n, &nu)| {
            if n == 0.0 {
                -nu
            } else if nu <= 0.0 {
                f64::NEG_INFINITY
            } else {
                n * (nu / n).ln() - (nu - n)
            }
        })
        .sum()
}

/// Gaussian constraint terms, `-½ Σ ((θ − θ̃)/σ)²`.
pub fn constraint_loglik(theta: &[f64], constraints: &NuisanceSet) -> f64 {
    theta
        .iter()
        .zip(constraints.aux())
        .zip(constraints.widths())
        .map(|((t, a), s)| {
            let pull = (t - a) / s;
            -0.5 * pull * pull
        })
        .sum()
}

/// Negative sum of squared second differences.
pub fn tikhonov(mu: &[f64]) -> f64 {
    -mu.windows(3)
        .map(|w| {
            let d = -w[0] + 2.0 * w[1] - w[2];
            d * d
        })
        .sum::<f64>()
}

pub fn tikhonov_gradient(mu: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; mu.len()];
    for (i, w) in mu.windows(3).enumerate() {
        let d = -w[0] + 2.0 * w[1] - w[2];
        g[i] += 2.0 * d;
        g[i + 1] -= 4.0 * d;
        g[i + 2] += 2.0 * d;
    }
    g
}

/// `DᵀD` for the second-difference operator `D`; `-S(μ) = μᵀ DᵀD μ`.
pub(crate) fn second_difference_gram(m: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(m, m);
    let stencil = [-1.0, 2.0, -1.0];
    for r in 0..m.saturating_sub(2) {
        for a in 0..3 {
            for b in 0..3 {
                g[(r + a, r + b)] += stencil[a] * stencil[b];
            }
        }
    }
    g
}

pub(crate) fn log_factorial_sum(n: &[f64]) -> f64 {
    n.iter().filter(|&&n| n > 0.0).map(|&n| n * n.ln() - n - ln_gamma(n + 1.0)).sum()
}

/// Model evaluation at a point: response, background, expectations.
pub(crate) struct Evaluation {
    pub response: ResponseMatrix,
    pub nu: Vec<f64>,
}

pub(crate) fn evaluate(problem: &UnfoldingProblem, mu: &[f64], theta: &[f64]) -> Result<Evaluation> {
    let (response, beta) = problem.model.evaluate(theta)?;
    let nu = expected_counts(&response, mu, &beta)?;
    Ok(Evaluation { response, nu })
}

/// Stencil direction for coordinate `c`: central (0) unless the stencil
/// would straddle one of the model's break points, then one-sided on the
/// side of the current point. A point exactly on a break looks down.
fn stencil_side(problem: &UnfoldingProblem, theta: &[f64], c: usize, h: f64) -> f64 {
    let nearest = problem.breaks[c]
        .iter()
        .copied()
        .filter(|b| (theta[c] - b).abs() < 2.0 * h)
        .min_by(|a, b| (theta[c] - a).abs().total_cmp(&(theta[c] - b).abs()));
    match nearest {
        None => 0.0,
        Some(b) if theta[c] <= b => -1.0,
        Some(_) => 1.0,
    }
}

struct ThetaStencil {
    centre: Evaluation,
    /// Evaluation one step from the centre, toward `+h` for central
    /// stencils and along the one-sided direction otherwise.
    near: Vec<Evaluation>,
    /// Step sign per coordinate used for `near`.
    sign: Vec<f64>,
    steps: Vec<f64>,
    jac: DMatrix<f64>,
    /// `∂²ν/∂θ_k²` and `∂R/∂θ_k`.
    d2_diag: Vec<Vec<f64>>,
    d_response: Vec<DMatrix<f64>>,
}

fn theta_stencil(problem: &UnfoldingProblem, mu: &[f64], theta: &[f64]) -> Result<ThetaStencil> {
    let centre = evaluate(problem, mu, theta)?;
    let k = theta.len();
    let n = centre.nu.len();
    let fraction = problem.model.theta_step();
    let steps: Vec<f64> = problem
        .constraints
        .widths()
        .iter()
        .zip(theta)
        .map(|(s, t)| (fraction * s).max(MIN_THETA_STEP * (1.0 + t.abs())))
        .collect();
    let at = |c: usize, offset: f64| -> Result<Evaluation> {
        let mut shifted = theta.to_vec();
        shifted[c] += offset;
        evaluate(problem, mu, &shifted)
    };
    let mut jac = DMatrix::zeros(n, k);
    let mut near = Vec::with_capacity(k);
    let mut sign = Vec::with_capacity(k);
    let mut d2_diag = Vec::with_capacity(k);
    let mut d_response = Vec::with_capacity(k);
    for c in 0..k {
        let h = steps[c];
        let side = stencil_side(problem, theta, c, h);
        let f0 = &centre.nu;
        let mut d2 = vec![0.0; n];
        if side == 0.0 {
            let (u1, d1) = (at(c, h)?, at(c, -h)?);
            let (u2, d2e) = (at(c, 2.0 * h)?, at(c, -2.0 * h)?);
            for i in 0..n {
                jac[(i, c)] = (8.0 * (u1.nu[i] - d1.nu[i]) - (u2.nu[i] - d2e.nu[i])) / (12.0 * h);
                d2[i] = (u1.nu[i] - 2.0 * f0[i] + d1.nu[i]) / (h * h);
            }
            d_response.push((u1.response.matrix() - d1.response.matrix()) / (2.0 * h));
            near.push(u1);
            sign.push(1.0);
        } else {
            let s1 = at(c, side * h)?;
            let s2 = at(c, 2.0 * side * h)?;
            for i in 0..n {
                jac[(i, c)] = side * (-3.0 * f0[i] + 4.0 * s1.nu[i] - s2.nu[i]) / (2.0 * h);
                d2[i] = (f0[i] - 2.0 * s1.nu[i] + s2.nu[i]) / (h * h);
            }
            d_response.push((s1.response.matrix() - centre.response.matrix()) * (side / h));
            near.push(s1);
            sign.push(side);
        }
        d2_diag.push(d2);
    }
    Ok(ThetaStencil {
        centre,
        near,
        sign,
        steps,
        jac,
        d2_diag,
        d_response,
    })
}

/// Jacobian `∂ν/∂θ`, `N × K`, from the fourth-order central stencil at
/// `±h, ±2h` with `h` the model's step fraction of `σ_k`. Next to a model break the stencil turns
/// one-sided, second order, on the side of the current point.
pub(crate) fn nu_theta_jacobian(problem: &UnfoldingProblem, mu: &[f64], theta: &[f64]) -> Result<DMatrix<f64>> {
    Ok(theta_stencil(problem, mu, theta)?.jac)
}

/// First and second θ-derivatives of the model around one point, for the
/// optimizer's Newton steps.
pub(crate) struct LocalModel {
    pub response: ResponseMatrix,
    pub nu: Vec<f64>,
    pub jac_theta: DMatrix<f64>,
    /// `∂R/∂θ_k`.
    pub d_response: Vec<DMatrix<f64>>,
    /// `∂²ν/∂θ_k∂θ_l` per reco bin, indexed `[k][l]`.
    pub d2_nu: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn local_model(problem: &UnfoldingProblem, mu: &[f64], theta: &[f64]) -> Result<LocalModel> {
    let st = theta_stencil(problem, mu, theta)?;
    let k = theta.len();
    let n = st.centre.nu.len();
    let mut d2_nu = vec![vec![vec![0.0; n]; k]; k];
    for a in 0..k {
        d2_nu[a][a] = st.d2_diag[a].clone();
        for b in a + 1..k {
            let (ha, hb) = (st.sign[a] * st.steps[a], st.sign[b] * st.steps[b]);
            let mut shifted = theta.to_vec();
            shifted[a] += ha;
            shifted[b] += hb;
            let both = evaluate(problem, mu, &shifted)?.nu;
            for i in 0..n {
                let v = (both[i] - st.near[a].nu[i] - st.near[b].nu[i] + st.centre.nu[i]) / (ha * hb);
                d2_nu[a][b][i] = v;
                d2_nu[b][a][i] = v;
            }
        }
    }
    Ok(LocalModel {
        response: st.centre.response,
        nu: st.centre.nu,
        jac_theta: st.jac,
        d_response: st.d_response,
        d2_nu,
    })
}

/// Φ with the Poisson term measured from its saturated value.
pub(crate) fn phi_deviance(problem: &UnfoldingProblem, p: &ParamVector) -> Result<f64> {
    problem.check(p)?;
    let ev = evaluate(problem, &p.mu, &p.theta)?;
    Ok(poisson_deviance(problem.observed.contents(), &ev.nu)
        + constraint_loglik(&p.theta, &problem.constraints)
        + problem.tau * tikhonov(&p.mu))
}

pub fn phi(problem: &UnfoldingProblem, p: &ParamVector) -> Result<f64> {
    problem.check(p)?;
    let ev = evaluate(problem, &p.mu, &p.theta)?;
    Ok(poisson_loglik(problem.observed.contents(), &ev.nu)
        + constraint_loglik(&p.theta, &problem.constraints)
        + problem.tau * tikhonov(&p.mu))
}

/// Gradient of Φ given the model already evaluated at `p`.
pub(crate) fn gradient_from(
    problem: &UnfoldingProblem,
    p: &ParamVector,
    response: &ResponseMatrix,
    nu: &[f64],
    jac_theta: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let n = problem.observed.contents();
    let mut resid = Vec::with_capacity(n.len());
    for (i, (&n, &nu)) in n.iter().zip(nu).enumerate() {
        if n > 0.0 && !(nu > 0.0) {
            return Err(Error::NonFinite(format!("reco bin {i} has n = {n} but nu = {nu}")));
        }
        resid.push(if n == 0.0 { -1.0 } else { n / nu - 1.0 });
    }
    let resid = DVector::from_vec(resid);
    let g_mu = response.matrix().tr_mul(&resid);
    let reg = tikhonov_gradient(&p.mu);
    let g_theta = jac_theta.tr_mul(&resid);
    let mut g = Vec::with_capacity(p.len());
    g.extend(g_mu.iter().zip(&reg).map(|(a, r)| a + problem.tau * r));
    for (c, gt) in g_theta.iter().enumerate() {
        let (a, s) = (problem.constraints.aux()[c], problem.constraints.widths()[c]);
        g.push(gt - (p.theta[c] - a) / (s * s));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient at {p:?}")));
    }
    Ok(g)
}

/// `∂Φ/∂(μ, θ)`: analytic in μ, central differences through the model in θ.
pub fn gradient_phi(problem: &UnfoldingProblem, p: &ParamVector) -> Result<Vec<f64>> {
    problem.check(p)?;
    let ev = evaluate(problem, &p.mu, &p.theta)?;
    let jac = nu_theta_jacobian(problem, &p.mu, &p.theta)?;
    gradient_from(problem, p, &ev.response, &ev.nu, &jac)
}

/// Finite-difference Hessian of Φ from central differences of
/// [`gradient_phi`], symmetrized.
pub fn hessian_phi(problem: &UnfoldingProblem, p: &ParamVector) -> Result<DMatrix<f64>> {
    problem.check(p)?;
    let m = p.mu.len();
    let dim = p.len();
    let base = p.packed();
    let mut h = DMatrix::zeros(dim, dim);
    let mut x = base.clone();
    for c in 0..dim {
        let step = if c < m {
            (1e-3 * base[c].abs()).max(1e-2)
        } else {
            0.1 * problem.constraints.widths()[c - m]
        };
        x[c] = base[c] + step;
        let up = gradient_phi(problem, &ParamVector::unpack(&x, m))?;
        x[c] = base[c] - step;
        let down = gradient_phi(problem, &ParamVector::unpack(&x, m))?;
        x[c] = base[c];
        for r in 0..dim {
            h[(r, c)] = (up[r] - down[r]) / (2.0 * step);
        }
    }
    let sym = (&h + h.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Hessian stencil".into()));
    }
    Ok(sym)
}

pub fn write_hessian_csv<W: Write>(hessian: &DMatrix<f64>, writer: W) -> Result<()> {
    write_matrix_csv(hessian, writer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity_problem(counts: Vec<f64>, tau: f64) -> UnfoldingProblem {
        let edges = BinEdges::uniform(0.0, counts.len() as f64, counts.len()).unwrap();
        let model = FixedResponse::new(ResponseMatrix::identity(edges.clone()), vec![0.0; counts.len()]).unwrap();
        UnfoldingProblem::new(
            Histogram1D::from_contents(edges, counts).unwrap(),
            Arc::new(model),
            NuisanceSet::empty(),
            tau,
        )
        .unwrap()
    }

    #[test]
    fn expected_counts_examples() {
        let edges = BinEdges::uniform(0.0, 2.0, 2).unwrap();
        let id = ResponseMatrix::identity(edges.clone());
        assert_eq!(expected_counts(&id, &[3.0, 4.0], &[0.0, 0.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(expected_counts(&id, &[0.0, 0.0], &[1.5, 2.5]).unwrap(), vec![1.5, 2.5]);
        let r = ResponseMatrix::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.5, 1.0]),
            edges.clone(),
            edges,
        )
        .unwrap();
        assert_eq!(expected_counts(&r, &[2.0, 1.0], &[1.0, 0.0]).unwrap(), vec![2.0, 2.0]);
        assert!(expected_counts(&r, &[2.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn poisson_examples() {
        assert_eq!(poisson_loglik(&[0.0], &[2.0]), -2.0);
        assert!((poisson_loglik(&[2.0], &[1.0]) - (-1.0 - 2f64.ln())).abs() < 1e-12);
        assert_eq!(poisson_loglik(&[1.0], &[0.0]), f64::NEG_INFINITY);
        let n = [3.0, 0.0, 12.0];
        for nu in [[2.0, 0.5, 11.0], [3.5, 1.0, 14.0]] {
            assert!(poisson_loglik(&n, &[3.0, 1e-300, 12.0]) >= poisson_loglik(&n, &nu));
        }
        let nu = [2.0, 0.5, 11.0];
        let diff = poisson_loglik(&n, &nu) - poisson_deviance(&n, &nu);
        assert!((diff - log_factorial_sum(&n)).abs() < 1e-12);
    }

    #[test]
    fn constraint_examples() {
        let c = NuisanceSet::nominal(vec![1.0, 0.3, 0.95], vec![0.01, 0.05, 0.02]).unwrap();
        assert_eq!(constraint_loglik(&[1.0, 0.3, 0.95], &c), 0.0);
        assert!((constraint_loglik(&[1.01, 0.3, 0.95], &c) + 0.5).abs() < 1e-12);
        assert!((constraint_loglik(&[1.0, 0.35, 0.95], &c) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn tikhonov_examples() {
        assert_eq!(tikhonov(&[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(tikhonov(&[1.0, 2.0, 4.0]), -1.0);
        assert_eq!(tikhonov(&[7.0; 6]), 0.0);
        assert_eq!(tikhonov(&[1.0, 5.0]), 0.0);
        let mu = [1.0, 4.0, 2.0, 8.0, 3.0];
        let g = second_difference_gram(5);
        let v = DVector::from_column_slice(&mu);
        assert!((-(v.transpose() * &g * &v)[0] - tikhonov(&mu)).abs() < 1e-12);
    }

    #[test]
    fn phi_examples() {
        let p = identity_problem(vec![4.0, 9.0, 2.0], 0.0);
        let at_max = ParamVector::new(vec![4.0, 9.0, 2.0], vec![]);
        assert_eq!(phi(&p, &at_max).unwrap(), poisson_loglik(&[4.0, 9.0, 2.0], &[4.0, 9.0, 2.0]));

        let linear = ParamVector::new(vec![1.0, 2.0, 3.0], vec![]);
        let reg = p.with_tau(0.7).unwrap();
        assert_eq!(phi(&p, &linear).unwrap(), phi(&reg, &linear).unwrap());

        let curved = ParamVector::new(vec![1.0, 5.0, 2.0], vec![]);
        assert!(phi(&reg, &curved).unwrap() < phi(&p, &curved).unwrap());
    }

    #[test]
    fn gradient_vanishes_at_maximum() {
        let p = identity_problem(vec![4.0, 9.0, 2.0], 0.0);
        let at = ParamVector::new(vec![4.0, 9.0, 2.0], vec![]);
        let g = gradient_phi(&p, &at).unwrap();
        let scale = phi(&p, &at).unwrap().abs();
        assert!(g.iter().all(|v| v.abs() <= 1e-6 * scale));
    }

    #[test]
    fn regularization_gradient_linear_in_tau() {
        let p = identity_problem(vec![4.0, 9.0, 2.0, 7.0], 0.0);
        let at = ParamVector::new(vec![3.0, 8.0, 2.5, 6.0], vec![]);
        let g0 = gradient_phi(&p, &at).unwrap();
        let g1 = gradient_phi(&p.with_tau(0.25).unwrap(), &at).unwrap();
        let g2 = gradient_phi(&p.with_tau(0.5).unwrap(), &at).unwrap();
        for i in 0..4 {
            assert!(((g2[i] - g0[i]) - 2.0 * (g1[i] - g0[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn hessian_examples() {
        let p = identity_problem(vec![100.0], 0.0);
        let h = hessian_phi(&p, &ParamVector::new(vec![100.0], vec![])).unwrap();
        assert!((h[(0, 0)] + 0.01).abs() < 1e-4 * 0.01);

        let edges = BinEdges::uniform(0.0, 1.0, 1).unwrap();
        let model = FixedResponse::new(ResponseMatrix::identity(edges.clone()), vec![0.0])
            .unwrap()
            .with_nuisance(2);
        let c = NuisanceSet::nominal(vec![1.0, 0.3], vec![0.01, 0.05]).unwrap();
        let p = UnfoldingProblem::new(
            Histogram1D::from_contents(edges, vec![50.0]).unwrap(),
            Arc::new(model),
            c,
            0.0,
        )
        .unwrap();
        let h = hessian_phi(&p, &ParamVector::new(vec![50.0], vec![1.0, 0.3])).unwrap();
        assert!((h[(1, 1)] + 1e4).abs() < 1e-6 * 1e4);
        assert!((h[(2, 2)] + 400.0).abs() < 1e-6 * 400.0);
        assert_eq!(h, h.transpose());
    }

    proptest! {
        #[test]
        fn phi_decomposes(mu in prop::collection::vec(0.5f64..50.0, 4), tau in 0.0f64..1.0) {
            let counts = vec![3.0, 0.0, 17.0, 8.0];
            let p = identity_problem(counts.clone(), tau);
            let at = ParamVector::new(mu.clone(), vec![]);
            let want = poisson_loglik(&counts, &mu) + tau * tikhonov(&mu);
            prop_assert!((phi(&p, &at).unwrap() - want).abs() < 1e-9 * want.abs().max(1.0));
        }

        #[test]
        fn tikhonov_non_positive(mu in prop::collection::vec(-1e3f64..1e3, 0..8)) {
            prop_assert!(tikhonov(&mu) <= 0.0);
        }

        #[test]
        fn tikhonov_zero_on_affine(a in -10.0f64..10.0, b in -10.0f64..10.0, m in 3usize..9) {
            let mu: Vec<f64> = (0..m).map(|i| a + b * i as f64).collect();
            prop_assert!(tikhonov(&mu).abs() < 1e-20);
        }
    }
}
