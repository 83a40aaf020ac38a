use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{RngStream, ScenarioSpec};
use crate::error::{Error, Result};
use crate::hist::{BinEdges, Histogram1D, ResponseMatrix};
use crate::objective::ResponseModel;

/// Fewest Monte Carlo events a truth bin may hold before its response
/// column is considered unmeasured.
pub const MIN_EVENTS_PER_TRUTH_BIN: u64 = 100;

/// Event budget for Monte Carlo response and background construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo {
    pub n_events: u64,
    pub min_events: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo {
            n_events: 1_000_000,
            min_events: 1_000_000,
        }
    }
}

impl MonteCarlo {
    pub fn with_events(n_events: u64) -> Self {
        MonteCarlo {
            n_events,
            min_events: n_events.min(MonteCarlo::default().min_events),
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_events < self.min_events {
            return Err(Error::InvalidInput(format!(
                "n_mc = {} is below the configured minimum {}",
                self.n_events, self.min_events
            )));
        }
        Ok(())
    }
}

fn check_theta(theta: &[f64]) -> Result<()> {
    if theta.len() != 3 {
        return Err(Error::Dimension(format!(
            "detector takes 3 nuisance values, got {}",
            theta.len()
        )));
    }
    Ok(())
}

/// Gaussian width before the scale factor: `θ₂ + a·√(x/300)`.
pub fn smear_width(theta: &[f64], detector: &super::Detector, x_true: f64) -> Result<f64> {
    let energy_term = if detector.a == 0.0 {
        0.0
    } else if x_true < 0.0 {
        return Err(Error::InvalidInput(format!(
            "energy-dependent smearing undefined at x_true = {x_true} < 0"
        )));
    } else {
        detector.a * (x_true / 300.0).sqrt()
    };
    let width = theta[1] + energy_term;
    if !(width > 0.0) {
        return Err(Error::NonPositiveWidth { width, x_true });
    }
    Ok(width)
}

/// Acceptance probability `θ₃ − b·|x|/600`, clipped to [0, 1].
pub fn efficiency(theta: &[f64], detector: &super::Detector, x_true: f64) -> f64 {
    (theta[2] - detector.b * x_true.abs() / 600.0).clamp(0.0, 1.0)
}

/// Passes one truth value through the detector. `None` means the event was
/// not reconstructed.
pub fn apply_detector<R: Rng + ?Sized>(
    x_true: f64,
    theta: &[f64],
    detector: &super::Detector,
    rng: &mut R,
) -> Result<Option<f64>> {
    check_theta(theta)?;
    let width = smear_width(theta, detector, x_true)?;
    let eps: f64 = rng.random();
    if eps < theta[2] - detector.b * x_true.abs() / 600.0 {
        let z: f64 = rng.sample(StandardNormal);
        Ok(Some(x_true + theta[0] * width * z))
    } else {
        Ok(None)
    }
}

/// Monte Carlo response matrix at nuisance values `theta`.
///
/// Truth values are drawn from [`ScenarioSpec::response_density`]. Events
/// that are lost or reconstructed outside the reco binning still count in
/// their truth bin's denominator.
pub fn build_response<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    theta: &[f64],
    mc: &MonteCarlo,
    rng: &mut R,
) -> Result<ResponseMatrix> {
    mc.check()?;
    check_theta(theta)?;
    let (n_truth, n_reco) = (spec.truth_edges.n_bins(), spec.reco_edges.n_bins());
    let mut migrations = DMatrix::<f64>::zeros(n_reco, n_truth);
    let mut denominators = vec![0u64; n_truth];
    for _ in 0..mc.n_events {
        let x = spec.sample_response_truth(rng);
        let Some(j) = spec.truth_edges.find_bin(x) else {
            continue;
        };
        denominators[j] += 1;
        if let Some(reco) = apply_detector(x, theta, &spec.detector, rng)? {
            if let Some(i) = spec.reco_edges.find_bin(reco) {
                migrations[(i, j)] += 1.0;
            }
        }
    }
    for (j, &count) in denominators.iter().enumerate() {
        if count < MIN_EVENTS_PER_TRUTH_BIN {
            return Err(Error::EmptyTruthBin {
                bin: j,
                count,
                required: MIN_EVENTS_PER_TRUTH_BIN,
            });
        }
        let d = count as f64;
        migrations.column_mut(j).iter_mut().for_each(|m| *m /= d);
    }
    ResponseMatrix::new(migrations, spec.truth_edges.clone(), spec.reco_edges.clone())
}

/// Expected background per reco bin, each Monte Carlo event weighted
/// `N_bkg / n_mc`.
pub fn build_background<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    theta: &[f64],
    mc: &MonteCarlo,
    rng: &mut R,
) -> Result<Histogram1D> {
    mc.check()?;
    check_theta(theta)?;
    let mut beta = Histogram1D::new(spec.reco_edges.clone());
    if spec.n_bkg == 0.0 {
        return Ok(beta);
    }
    let weight = spec.n_bkg / mc.n_events as f64;
    for _ in 0..mc.n_events {
        let x = spec.background.sample(rng);
        if let Some(reco) = apply_detector(x, theta, &spec.detector, rng)? {
            beta.fill(reco, weight)?;
        }
    }
    Ok(beta)
}

/// True when `θ₂ + a·√(x/300)` stays positive for every `x` in `[lo, hi]`.
pub(crate) fn width_positive_on(theta: &[f64], detector: &super::Detector, lo: f64, hi: f64) -> bool {
    let a = detector.a;
    let worst = if a == 0.0 {
        0.0
    } else if a > 0.0 {
        a * (lo.max(0.0) / 300.0).sqrt()
    } else if hi.is_finite() {
        a * (hi.max(0.0) / 300.0).sqrt()
    } else {
        return false;
    };
    theta.len() == 3 && theta[1] + worst > 0.0
}

/// Response and background rebuilt by Monte Carlo at every call, always
/// from the same seed so that nearby nuisance values share random numbers.
#[derive(Debug, Clone)]
pub struct McModel {
    spec: ScenarioSpec,
    mc: MonteCarlo,
    seed: u64,
}

impl McModel {
    pub fn new(spec: ScenarioSpec, mc: MonteCarlo, seed: u64) -> Result<Self> {
        spec.validate()?;
        mc.check()?;
        Ok(McModel { spec, mc, seed })
    }
}

impl ResponseModel for McModel {
    fn truth_edges(&self) -> &BinEdges {
        &self.spec.truth_edges
    }

    fn reco_edges(&self) -> &BinEdges {
        &self.spec.reco_edges
    }

    fn n_nuisance(&self) -> usize {
        3
    }

    fn evaluate(&self, theta: &[f64]) -> Result<(ResponseMatrix, Vec<f64>)> {
        let response = build_response(
            &self.spec,
            theta,
            &self.mc,
            &mut RngStream::new(self.seed, "response_mc", 0),
        )?;
        let background = build_background(
            &self.spec,
            theta,
            &self.mc,
            &mut RngStream::new(self.seed, "background_mc", 0),
        )?;
        Ok((response, background.into_contents()))
    }

    fn admissible(&self, theta: &[f64]) -> bool {
        let (blo, bhi) = self.spec.background.support();
        width_positive_on(theta, &self.spec.detector, self.spec.truth_edges.lo(), self.spec.truth_edges.hi())
            && (self.spec.n_bkg == 0.0 || width_positive_on(theta, &self.spec.detector, blo, bhi))
    }

    fn nuisance_ceiling(&self) -> Vec<f64> {
        let (blo, bhi) = self.spec.background.support();
        let mut reach = self.spec.truth_edges.lo().abs().max(self.spec.truth_edges.hi().abs());
        if self.spec.n_bkg > 0.0 {
            reach = reach.max(blo.abs()).max(bhi.abs());
        }
        let loss = if self.spec.detector.b == 0.0 {
            0.0
        } else {
            self.spec.detector.b.max(0.0) * reach / 600.0
        };
        vec![f64::INFINITY, f64::INFINITY, 1.0 + loss]
    }

    fn truth_shape(&self) -> Option<Vec<f64>> {
        Some(self.spec.expected_truth().into_contents())
    }
}
