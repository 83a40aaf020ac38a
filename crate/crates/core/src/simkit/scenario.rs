//! Truth densities, detector constants and the two shipped scenarios.

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Uniform};
use serde::Serialize;
use statrs::function::erf::erfc;

use super::NuisanceSet;
use crate::error::{Error, Result};
use crate::hist::{BinEdges, Histogram1D};
use crate::keyvalue;

/// Truth-level event density.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Density {
    /// Equal-weight mixture of two Gaussians.
    DoubleGaussian {
        mu1: f64,
        mu2: f64,
        sigma1: f64,
        sigma2: f64,
    },
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

impl Density {
    pub fn from_id(id: &str, params: &[f64]) -> Result<Self> {
        let want = |n: usize| -> Result<()> {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "model {id} takes {n} parameters, got {}",
                    params.len()
                )))
            }
        };
        let density = match id {
            "double_gaussian" => {
                want(4)?;
                Density::DoubleGaussian {
                    mu1: params[0],
                    mu2: params[1],
                    sigma1: params[2],
                    sigma2: params[3],
                }
            }
            "exponential" => {
                want(1)?;
                Density::Exponential { rate: params[0] }
            }
            "uniform" => {
                want(2)?;
                Density::Uniform {
                    lo: params[0],
                    hi: params[1],
                }
            }
            other => return Err(Error::Config(format!("unknown model id: {other}"))),
        };
        density.validate()?;
        Ok(density)
    }

    pub fn id(&self) -> &'static str {
        match self {
            Density::DoubleGaussian { .. } => "double_gaussian",
            Density::Exponential { .. } => "exponential",
            Density::Uniform { .. } => "uniform",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Density::DoubleGaussian {
                mu1,
                mu2,
                sigma1,
                sigma2,
            } => vec![mu1, mu2, sigma1, sigma2],
            Density::Exponential { rate } => vec![rate],
            Density::Uniform { lo, hi } => vec![lo, hi],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Density::DoubleGaussian { sigma1, sigma2, .. } => sigma1 > 0.0 && sigma2 > 0.0,
            Density::Exponential { rate } => rate > 0.0,
            Density::Uniform { lo, hi } => lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid parameters for {self:?}")))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Density::DoubleGaussian {
                mu1,
                mu2,
                sigma1,
                sigma2,
            } => {
                let g = |mu: f64, s: f64| {
                    let z = (x - mu) / s;
                    (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt())
                };
                0.5 * g(mu1, sigma1) + 0.5 * g(mu2, sigma2)
            }
            Density::Exponential { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    rate * (-rate * x).exp()
                }
            }
            Density::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Density::DoubleGaussian {
                mu1,
                mu2,
                sigma1,
                sigma2,
            } => 0.5 * normal_cdf((x - mu1) / sigma1) + 0.5 * normal_cdf((x - mu2) / sigma2),
            Density::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Density::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    /// Closed interval outside of which the density vanishes.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Density::DoubleGaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Density::Exponential { .. } => (0.0, f64::INFINITY),
            Density::Uniform { lo, hi } => (lo, hi),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Density::DoubleGaussian {
                mu1,
                mu2,
                sigma1,
                sigma2,
            } => {
                let (mu, s) = if rng.random::<bool>() {
                    (mu1, sigma1)
                } else {
                    (mu2, sigma2)
                };
                Normal::new(mu, s).expect("validated width").sample(rng)
            }
            Density::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
            Density::Uniform { lo, hi } => Uniform::new(lo, hi).expect("validated range").sample(rng),
        }
    }
}

/// Constants of the piecewise detector function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detector {
    /// Coefficient of the energy-dependent smearing term.
    pub a: f64,
    /// Coefficient of the energy-dependent efficiency loss.
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub signal: Density,
    pub background: Density,
    pub n_sig: f64,
    pub n_bkg: f64,
    pub truth_edges: BinEdges,
    pub reco_edges: BinEdges,
    pub detector: Detector,
    pub nominal: NuisanceSet,
    pub seed: u64,
}

pub const DEFAULT_SEED: u64 = 12345;

fn shipped_nuisances() -> NuisanceSet {
    NuisanceSet::new(vec![1.0, 0.3, 0.95], vec![1.0, 0.3, 0.95], vec![0.01, 0.05, 0.02])
        .expect("static nuisance set")
}

impl ScenarioSpec {
    /// Bimodal signal on a flat background, five 1.6-wide bins on [-4, 4].
    pub fn double_gaussian() -> Self {
        let edges = BinEdges::new(vec![-4.0, -2.4, -0.8, 0.8, 2.4, 4.0]).expect("static edges");
        ScenarioSpec {
            name: "double_gaussian".into(),
            signal: Density::DoubleGaussian {
                mu1: 1.5,
                mu2: -1.5,
                sigma1: 0.12,
                sigma2: 0.12,
            },
            background: Density::Uniform { lo: -4.0, hi: 4.0 },
            n_sig: 50_000.0,
            n_bkg: 5_000.0,
            truth_edges: edges.clone(),
            reco_edges: edges,
            detector: Detector { a: 0.0, b: 0.0 },
            nominal: shipped_nuisances(),
            seed: DEFAULT_SEED,
        }
    }

    /// Falling exponential spectrum with variable-width bins on [0, 60].
    pub fn exponential() -> Self {
        let truth = vec![0., 2., 4., 6., 8., 10., 12., 14., 18., 25., 35., 60.];
        let reco = vec![
            0., 1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12., 13., 14., 15., 16., 17., 18., 20.,
            25., 30., 35., 45., 60.,
        ];
        ScenarioSpec {
            name: "exponential".into(),
            signal: Density::Exponential { rate: 0.14 },
            background: Density::Exponential { rate: 0.15 },
            n_sig: 10_000.0,
            n_bkg: 40_000.0,
            truth_edges: BinEdges::new(truth).expect("static edges"),
            reco_edges: BinEdges::new(reco).expect("static edges"),
            detector: Detector { a: 1.0, b: 1.0 },
            nominal: shipped_nuisances(),
            seed: DEFAULT_SEED,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "double_gaussian" => Some(Self::double_gaussian()),
            "exponential" => Some(Self::exponential()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_sig > 0.0) || !(self.n_bkg >= 0.0) {
            return Err(Error::Config(format!(
                "need n_sig > 0 and n_bkg >= 0, got {} and {}",
                self.n_sig, self.n_bkg
            )));
        }
        if self.nominal.len() != 3 {
            return Err(Error::Config(format!(
                "the detector takes 3 nuisance parameters, got {}",
                self.nominal.len()
            )));
        }
        if self.detector.a != 0.0 {
            let lo = self.truth_edges.lo().min(self.signal.support().0).min(self.background.support().0);
            if lo < 0.0 {
                return Err(Error::Config(
                    "energy-dependent smearing (a != 0) needs truth values >= 0".into(),
                ));
            }
        }
        Ok(())
    }

    /// Expected signal events per truth bin, integrated analytically.
    pub fn expected_truth(&self) -> Histogram1D {
        let contents = (0..self.truth_edges.n_bins())
            .map(|k| {
                let (lo, hi) = self.truth_edges.bin_range(k);
                self.n_sig * (self.signal.cdf(hi) - self.signal.cdf(lo))
            })
            .collect();
        Histogram1D::from_contents(self.truth_edges.clone(), contents).expect("matching bins")
    }

    /// Truth density used to populate the response matrix: signal and
    /// background in proportion to their expected yields.
    pub fn response_density(&self, x: f64) -> f64 {
        let total = self.n_sig + self.n_bkg;
        (self.n_sig * self.signal.pdf(x) + self.n_bkg * self.background.pdf(x)) / total
    }

    pub fn sample_response_truth<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let p_sig = self.n_sig / (self.n_sig + self.n_bkg);
        if rng.random::<f64>() < p_sig {
            self.signal.sample(rng)
        } else {
            self.background.sample(rng)
        }
    }

    const KEYS: [&'static str; 13] = [
        "name",
        "signal",
        "signal_params",
        "background",
        "background_params",
        "n_sig",
        "n_bkg",
        "truth_edges",
        "reco_edges",
        "a",
        "b",
        "theta_aux",
        "theta_sigma",
    ];

    /// Reads a scenario from a key-value file. See `README.md` for the schema.
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_table(&keyvalue::read_table(path)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(&keyvalue::parse_table(text)?)
    }

    fn from_table(table: &toml::Table) -> Result<Self> {
        let mut allowed = Self::KEYS.to_vec();
        allowed.push("seed");
        keyvalue::check_keys(table, &allowed, &Self::KEYS[1..])?;
        let signal_id: String = keyvalue::require(table, "signal")?;
        let signal_params: Vec<f64> = keyvalue::require(table, "signal_params")?;
        let background_id: String = keyvalue::require(table, "background")?;
        let background_params: Vec<f64> = keyvalue::require(table, "background_params")?;
        let aux: Vec<f64> = keyvalue::require(table, "theta_aux")?;
        let widths: Vec<f64> = keyvalue::require(table, "theta_sigma")?;
        let spec = ScenarioSpec {
            name: keyvalue::get(table, "name")?.unwrap_or_else(|| "custom".to_string()),
            signal: Density::from_id(&signal_id, &signal_params)?,
            background: Density::from_id(&background_id, &background_params)?,
            n_sig: keyvalue::require(table, "n_sig")?,
            n_bkg: keyvalue::require(table, "n_bkg")?,
            truth_edges: BinEdges::new(keyvalue::require(table, "truth_edges")?)?,
            reco_edges: BinEdges::new(keyvalue::require(table, "reco_edges")?)?,
            detector: Detector {
                a: keyvalue::require(table, "a")?,
                b: keyvalue::require(table, "b")?,
            },
            nominal: NuisanceSet::new(aux.clone(), aux, widths)?,
            seed: keyvalue::get(table, "seed")?.unwrap_or(DEFAULT_SEED),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenarios_match_published_setup() {
        let dg = ScenarioSpec::double_gaussian();
        assert_eq!(dg.truth_edges.n_bins(), 5);
        assert_eq!(dg.reco_edges.as_slice(), &[-4.0, -2.4, -0.8, 0.8, 2.4, 4.0]);
        dg.validate().unwrap();

        let ex = ScenarioSpec::exponential();
        assert_eq!(ex.truth_edges.n_bins(), 11);
        assert_eq!(ex.reco_edges.n_bins(), 24);
        assert_eq!(ex.n_bkg, 40_000.0);
        assert_eq!(ex.nominal.widths(), &[0.01, 0.05, 0.02]);
        ex.validate().unwrap();
    }

    #[test]
    fn cdf_matches_pdf_quadrature() {
        for d in [
            ScenarioSpec::double_gaussian().signal,
            Density::Exponential { rate: 0.14 },
            Density::Uniform { lo: -4.0, hi: 4.0 },
        ] {
            let (a, b) = (-3.0f64.max(d.support().0), 5.0);
            let n = 200_000;
            let h = (b - a) / n as f64;
            // midpoint rule
            let integral: f64 = (0..n).map(|k| d.pdf(a + (k as f64 + 0.5) * h) * h).sum();
            assert!((integral - (d.cdf(b) - d.cdf(a))).abs() < 1e-6, "{d:?}");
        }
    }

    #[test]
    fn expected_truth_exponential() {
        let ex = ScenarioSpec::exponential();
        let mu = ex.expected_truth();
        let first = 10_000.0 * (1.0 - (-0.28f64).exp());
        assert!((mu.contents()[0] - first).abs() < 1e-9);
        let total = 10_000.0 * (1.0 - (-0.14f64 * 60.0).exp());
        assert!((mu.total() - total).abs() < 1e-8);
    }

    #[test]
    fn parses_custom_scenario() {
        let text = r#"
            name = "flat"
            signal = "uniform"
            signal_params = [0.0, 10.0]
            background = "exponential"
            background_params = [0.5]
            n_sig = 1000
            n_bkg = 100
            truth_edges = [0.0, 5.0, 10.0]
            reco_edges = [0.0, 2.5, 5.0, 7.5, 10.0]
            a = 1.0
            b = 0.0
            theta_aux = [1.0, 0.3, 0.95]
            theta_sigma = [0.01, 0.05, 0.02]
            seed = 9
        "#;
        let spec = ScenarioSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.seed, 9);
        assert_eq!(spec.signal, Density::Uniform { lo: 0.0, hi: 10.0 });
        assert_eq!(spec.reco_edges.n_bins(), 4);

        let bad = text.replace("seed = 9", "seed = 9\nfoo = 1");
        assert_eq!(ScenarioSpec::from_toml_str(&bad).unwrap_err().to_string(), "unknown key: foo");
        let missing = text.replace("n_bkg = 100", "");
        assert!(matches!(ScenarioSpec::from_toml_str(&missing), Err(Error::MissingKey(k)) if k == "n_bkg"));
        let unknown_model = text.replace("\"uniform\"", "\"lorentzian\"");
        assert!(ScenarioSpec::from_toml_str(&unknown_model).is_err());
    }
}
