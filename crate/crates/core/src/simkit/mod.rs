//! Generative side of the study: truth densities, the detector function,
//! Monte Carlo response and background construction, and pseudo-data.

mod detector;
mod quadrature;
mod rng;
mod scenario;

pub use detector::{
    apply_detector, build_background, build_response, efficiency, smear_width, McModel, MonteCarlo,
    MIN_EVENTS_PER_TRUTH_BIN,
};
pub use quadrature::QuadratureModel;
pub use rng::RngStream;
pub use scenario::{Density, Detector, ScenarioSpec, DEFAULT_SEED};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hist::Histogram1D;

/// Nuisance values with their auxiliary measurements and constraint widths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuisanceSet {
    values: Vec<f64>,
    aux: Vec<f64>,
    widths: Vec<f64>,
}

impl NuisanceSet {
    pub fn new(values: Vec<f64>, aux: Vec<f64>, widths: Vec<f64>) -> Result<Self> {
        if values.len() != aux.len() || aux.len() != widths.len() {
            return Err(Error::Dimension(format!(
                "nuisance set with {} values, {} aux, {} widths",
                values.len(),
                aux.len(),
                widths.len()
            )));
        }
        if let Some(w) = widths.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput(format!("constraint width {w} must be positive")));
        }
        Ok(NuisanceSet { values, aux, widths })
    }

    /// Nuisance set sitting at its auxiliary measurements.
    pub fn nominal(aux: Vec<f64>, widths: Vec<f64>) -> Result<Self> {
        Self::new(aux.clone(), aux, widths)
    }

    pub fn empty() -> Self {
        NuisanceSet {
            values: vec![],
            aux: vec![],
            widths: vec![],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn aux(&self) -> &[f64] {
        &self.aux
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn with_aux(&self, aux: Vec<f64>) -> Result<Self> {
        Self::new(self.values.clone(), aux, self.widths.clone())
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.aux.clone(), self.widths.clone())
    }

    pub fn with_widths(&self, widths: Vec<f64>) -> Result<Self> {
        Self::new(self.values.clone(), self.aux.clone(), widths)
    }
}

/// `n` i.i.d. truth values from the scenario's signal density.
pub fn sample_signal<R: Rng + ?Sized>(spec: &ScenarioSpec, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| spec.signal.sample(rng)).collect()
}

/// `n` i.i.d. truth values from the scenario's background density.
pub fn sample_background<R: Rng + ?Sized>(spec: &ScenarioSpec, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| spec.background.sample(rng)).collect()
}

pub(crate) fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<f64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::InvalidInput(format!("Poisson mean {mean} must be finite and >= 0")));
    }
    if mean == 0.0 {
        return Ok(0.0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::InvalidInput(format!("Poisson({mean}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Independent Poisson counts around each expected bin content.
pub fn generate_observed<R: Rng + ?Sized>(expected: &Histogram1D, rng: &mut R) -> Result<Histogram1D> {
    let counts = expected
        .contents()
        .iter()
        .map(|&nu| poisson_draw(nu, rng))
        .collect::<Result<Vec<_>>>()?;
    Histogram1D::from_contents(expected.edges().clone(), counts)
}
