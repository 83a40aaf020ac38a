//! Config-driven pipeline: scenario preparation, the τ scan over the
//! selected covariance methods, and the files it leaves behind.
//!
//! Layout under `<output_dir>/<scenario>/`:
//!
//! ```text
//! inputs/{truth,expected,observed,background}.csv, inputs/response.csv
//! tau_<label>/fit.json
//! tau_<label>/<method>/covariance.csv
//! tau_<label>/<method>/estimates.csv          (toy methods)
//! tau_<label>/reldiff_<method>_vs_frequentist_toys.csv
//! summary.csv, report.json, FAILED            (on error)
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::covest::{
    avg_global_correlation, avg_rel_error, chi2_ndf, cov_inverse_hessian, mean_abs_diagonal_difference,
    relative_difference, run_frequentist_toys, run_hybrid_toys, sample_covariance, CovarianceEstimate, Method,
    ToyEnsemble, DEFAULT_TOYS,
};
use crate::error::{Error, Result};
use crate::fit::{maximize_phi, FitConfig, FitResult};
use crate::hist::{write_matrix_csv, Histogram1D};
use crate::keyvalue;
use crate::objective::{expected_counts, ResponseModel, UnfoldingProblem};
use crate::simkit::{generate_observed, McModel, MonteCarlo, QuadratureModel, RngStream, ScenarioSpec};

pub const DEFAULT_TAUS: [&str; 4] = ["0", "1e-6", "1e-5", "5e-5"];
pub const DEFAULT_N_MC: u64 = 1_000_000;
pub const FAILURE_MARKER: &str = "FAILED";

const CONFIG_KEYS: [&str; 9] = [
    "scenario",
    "tau",
    "methods",
    "toys",
    "seed",
    "output_dir",
    "n_mc",
    "response_model",
    "threads",
];

/// A regularization strength and the text it was written as, which names
/// its output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauPoint {
    pub value: f64,
    pub label: String,
}

impl TauPoint {
    pub fn parse(text: &str) -> Result<Self> {
        let label = text.trim();
        let value: f64 = label
            .parse()
            .map_err(|_| Error::Config(format!("tau value {label:?} is not a number")))?;
        Self::checked(value, label.to_string())
    }

    pub fn from_value(value: f64) -> Result<Self> {
        let label = if value == 0.0 { "0".to_string() } else { format!("{value:e}") };
        Self::checked(value, label)
    }

    fn checked(value: f64, label: String) -> Result<Self> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::Config(format!("tau must be finite and >= 0, got {label}")));
        }
        Ok(TauPoint { value, label })
    }

    pub fn dir_name(&self) -> String {
        format!("tau_{}", self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    /// Deterministic quadrature over the truth density.
    Quadrature,
    /// Monte Carlo with `n_mc` events per rebuild.
    MonteCarlo,
}

impl ResponseKind {
    fn from_label(label: &str) -> Result<Self> {
        match label {
            "quadrature" => Ok(ResponseKind::Quadrature),
            "monte_carlo" => Ok(ResponseKind::MonteCarlo),
            other => Err(Error::Config(format!(
                "response_model must be quadrature or monte_carlo, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub taus: Vec<TauPoint>,
    pub methods: Vec<Method>,
    pub toys: usize,
    pub seed: u64,
    pub n_mc: u64,
    pub response_model: ResponseKind,
    #[serde(skip)]
    pub output_dir: PathBuf,
    /// Worker cap; `None` uses every available core.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Reads a run config. A scenario that is not a built-in name is read
    /// as a scenario file relative to the config's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let table = keyvalue::read_table(path)?;
        Self::from_table(&table, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        Self::from_table(&keyvalue::parse_table(text)?, base)
    }

    /// Defaults for a built-in scenario.
    pub fn builtin(name: &str) -> Result<Self> {
        Self::from_toml_str(&format!("scenario = {name:?}"), Path::new("."))
    }

    fn from_table(table: &toml::Table, base: &Path) -> Result<Self> {
        keyvalue::check_keys(table, &CONFIG_KEYS, &["scenario"])?;
        let id: String = keyvalue::require(table, "scenario")?;
        let scenario = match ScenarioSpec::builtin(&id) {
            Some(spec) => spec,
            None => ScenarioSpec::from_file(&base.join(&id))?,
        };
        let taus = match table.get("tau") {
            None => DEFAULT_TAUS.iter().map(|t| TauPoint::parse(t)).collect::<Result<_>>()?,
            Some(toml::Value::Array(items)) => items.iter().map(tau_from_value).collect::<Result<_>>()?,
            Some(_) => return Err(Error::Config("tau must be a list".into())),
        };
        let methods = match keyvalue::get::<Vec<String>>(table, "methods")? {
            None => Method::ALL.to_vec(),
            Some(labels) => parse_methods(&labels)?,
        };
        let response_model = match keyvalue::get::<String>(table, "response_model")? {
            None => ResponseKind::Quadrature,
            Some(label) => ResponseKind::from_label(&label)?,
        };
        let config = RunConfig {
            seed: keyvalue::get(table, "seed")?.unwrap_or(scenario.seed),
            scenario,
            taus,
            methods,
            toys: keyvalue::get(table, "toys")?.unwrap_or(DEFAULT_TOYS),
            n_mc: keyvalue::get(table, "n_mc")?.unwrap_or(DEFAULT_N_MC),
            response_model,
            output_dir: keyvalue::get::<String>(table, "output_dir")?
                .map_or_else(|| PathBuf::from("out"), PathBuf::from),
            threads: keyvalue::get(table, "threads")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.taus.is_empty() {
            return Err(Error::Config("tau grid is empty".into()));
        }
        for pair in self.taus.windows(2) {
            if !(pair[0].value < pair[1].value) {
                return Err(Error::Config(format!(
                    "tau grid must be strictly increasing ({} then {})",
                    pair[0].label, pair[1].label
                )));
            }
        }
        if let Some(t) = self.taus.iter().find(|t| !(t.value >= 0.0)) {
            return Err(Error::Config(format!("tau must be finite and >= 0, got {}", t.label)));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no covariance methods selected".into()));
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return Err(Error::Config("methods are listed more than once".into()));
        }
        if self.toys < 2 {
            return Err(Error::Config(format!("toys must be at least 2, got {}", self.toys)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.scenario.validate()
    }

    /// SHA-256 over every setting that affects results.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn scenario_dir(&self) -> PathBuf {
        self.output_dir.join(&self.scenario.name)
    }
}

fn tau_from_value(value: &toml::Value) -> Result<TauPoint> {
    match value {
        toml::Value::String(s) => TauPoint::parse(s),
        toml::Value::Float(v) => TauPoint::from_value(*v),
        toml::Value::Integer(v) => TauPoint::from_value(*v as f64),
        other => Err(Error::Config(format!("tau entries must be numbers, got {other}"))),
    }
}

pub fn parse_methods<S: AsRef<str>>(labels: &[S]) -> Result<Vec<Method>> {
    labels
        .iter()
        .map(|l| {
            let l = l.as_ref().trim();
            Method::from_label(l).ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {l:?} (expected inverse_hessian, frequentist_toys or hybrid_toys)"
                ))
            })
        })
        .collect()
}

/// Everything a fit needs that does not depend on τ.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: ScenarioSpec,
    pub model: Arc<dyn ResponseModel>,
    /// Expected signal per truth bin, integrated from the density.
    pub truth: Histogram1D,
    /// `R(θ̃)·truth + β(θ̃)`.
    pub expected: Histogram1D,
    /// One Poisson draw of `expected`.
    pub observed: Histogram1D,
}

impl Prepared {
    pub fn problem(&self, tau: f64) -> Result<UnfoldingProblem> {
        UnfoldingProblem::new(self.observed.clone(), self.model.clone(), self.spec.nominal.clone(), tau)
    }
}

pub fn build_model(config: &RunConfig) -> Result<Arc<dyn ResponseModel>> {
    Ok(match config.response_model {
        ResponseKind::Quadrature => Arc::new(QuadratureModel::new(config.scenario.clone())?),
        ResponseKind::MonteCarlo => Arc::new(McModel::new(
            config.scenario.clone(),
            MonteCarlo::with_events(config.n_mc),
            config.seed,
        )?),
    })
}

/// Builds the response model and draws the observed data set from
/// `RngStream(seed, "observed", 0)`.
pub fn prepare_scenario(config: &RunConfig) -> Result<Prepared> {
    let spec = config.scenario.clone();
    let model = build_model(config)?;
    let (response, background) = model.evaluate(spec.nominal.values())?;
    let truth = spec.expected_truth();
    let nu = expected_counts(&response, truth.contents(), &background)?;
    let expected = Histogram1D::from_contents(spec.reco_edges.clone(), nu)?;
    let observed = generate_observed(&expected, &mut RngStream::new(config.seed, "observed", 0))?;
    Ok(Prepared {
        spec,
        model,
        truth,
        expected,
        observed,
    })
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: Method,
    pub tau: String,
    pub avg_sigma_rel: f64,
    pub avg_global_corr: f64,
    pub chi2_ndf: f64,
    #[serde(rename = "T_used")]
    pub t_used: usize,
    pub converged_fraction: f64,
    pub validity: String,
}

impl SummaryRow {
    /// Statistics that are undefined for this matrix (a singular one, say)
    /// are reported as NaN.
    pub fn new(
        scenario: &str,
        tau: &TauPoint,
        estimate: &CovarianceEstimate,
        fit: &FitResult,
        truth: &[f64],
        converged_fraction: f64,
    ) -> Self {
        SummaryRow {
            scenario: scenario.to_string(),
            method: estimate.method,
            tau: tau.label.clone(),
            avg_sigma_rel: avg_rel_error(estimate, &fit.mu_hat).unwrap_or(f64::NAN),
            avg_global_corr: avg_global_correlation(estimate).unwrap_or(f64::NAN),
            chi2_ndf: chi2_ndf(&fit.mu_hat, truth, estimate).unwrap_or(f64::NAN),
            t_used: estimate.n_toys_used,
            converged_fraction,
            validity: estimate.validity().to_string(),
        }
    }
}

pub fn emit_summary<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitEntry {
    pub tau: String,
    pub path: PathBuf,
    pub converged: bool,
    pub phi_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateEntry {
    pub tau: String,
    pub method: Method,
    pub covariance: PathBuf,
    /// Per-toy estimates, for the toy methods.
    pub estimates: Option<PathBuf>,
    pub summary: SummaryRow,
    /// Toy-ensemble mean minus the truth histogram.
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelDiffEntry {
    pub tau: String,
    pub method: Method,
    pub baseline: Method,
    pub path: PathBuf,
    pub mean_abs_diagonal: f64,
}

/// What a run wrote. Paths are relative to [`RunReport::root`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub provenance: Provenance,
    pub fits: Vec<FitEntry>,
    pub estimates: Vec<EstimateEntry>,
    pub relative_differences: Vec<RelDiffEntry>,
    pub summary: PathBuf,
    #[serde(skip)]
    pub root: PathBuf,
}

impl RunReport {
    pub fn files(&self) -> Vec<PathBuf> {
        let mut files: Vec<PathBuf> = self.fits.iter().map(|f| f.path.clone()).collect();
        for e in &self.estimates {
            files.push(e.covariance.clone());
            files.extend(e.estimates.clone());
        }
        files.extend(self.relative_differences.iter().map(|r| r.path.clone()));
        files.push(self.summary.clone());
        files.push(PathBuf::from("report.json"));
        files.into_iter().map(|p| self.root.join(p)).collect()
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.estimates.iter().map(|e| e.summary.clone()).collect()
    }
}

fn write_with<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    body(&mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_with(path, |w| w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e)))
}

fn write_estimates(path: &Path, ensemble: &ToyEnsemble) -> Result<()> {
    write_with(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        let m = ensemble.estimates.first().map_or(0, |p| p.mu.len());
        out.write_record((0..m).map(|i| format!("mu_{i}")))?;
        for p in &ensemble.estimates {
            out.write_record(p.mu.iter().map(|v| v.to_string()))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    })
}

fn in_stage<T>(context: impl FnOnce() -> String, result: Result<T>) -> Result<T> {
    result.map_err(|source| Error::Stage {
        context: context(),
        source: Box::new(source),
    })
}

/// Writes the nominal truth, expected and observed spectra, the response
/// matrix and the background under `inputs/`.
pub fn write_inputs(config: &RunConfig, prepared: &Prepared) -> Result<Vec<PathBuf>> {
    let dir = config.scenario_dir().join("inputs");
    let (response, background) = prepared.model.evaluate(prepared.spec.nominal.values())?;
    let background = Histogram1D::from_contents(prepared.spec.reco_edges.clone(), background)?;
    let mut written = Vec::new();
    for (name, hist) in [
        ("truth.csv", &prepared.truth),
        ("expected.csv", &prepared.expected),
        ("observed.csv", &prepared.observed),
        ("background.csv", &background),
    ] {
        let path = dir.join(name);
        write_with(&path, |w| hist.write_csv(w))?;
        written.push(path);
    }
    let path = dir.join("response.csv");
    write_with(&path, |w| response.write_csv(w))?;
    written.push(path);
    Ok(written)
}

/// Nominal fit at every τ of the grid; each result goes to `fit.json`.
pub fn run_fits(config: &RunConfig, prepared: &Prepared) -> Result<Vec<(TauPoint, FitResult)>> {
    let root = config.scenario_dir();
    let name = &config.scenario.name;
    config
        .taus
        .iter()
        .map(|tau| {
            let context = || format!("scenario {name}, tau {}, nominal fit", tau.label);
            let fit = in_stage(context, fit_at(prepared, tau.value))?;
            let path = root.join(tau.dir_name()).join("fit.json");
            write_text(&path, &fit.to_json()?)?;
            Ok((tau.clone(), fit))
        })
        .collect()
}

fn fit_at(prepared: &Prepared, tau: f64) -> Result<FitResult> {
    let fit = maximize_phi(&prepared.problem(tau)?, &FitConfig::default())?;
    if !fit.converged {
        return Err(Error::NotConverged(format!(
            "nominal fit stopped after {} iterations with gradient norm {:e}",
            fit.n_iterations, fit.final_gradient_norm
        )));
    }
    Ok(fit)
}

/// Covariance by one method, with the toy ensemble behind it if any.
pub fn estimate(
    method: Method,
    problem: &UnfoldingProblem,
    fit: &FitResult,
    toys: usize,
    seed: u64,
) -> Result<(CovarianceEstimate, Option<ToyEnsemble>)> {
    let config = FitConfig::default();
    match method {
        Method::InverseHessian => Ok((cov_inverse_hessian(problem, fit)?, None)),
        Method::FrequentistToys => {
            let ensemble = run_frequentist_toys(problem, fit, toys, seed, &config)?;
            Ok((sample_covariance(&ensemble)?, Some(ensemble)))
        }
        Method::HybridToys => {
            let ensemble = run_hybrid_toys(problem, fit, toys, seed, &config)?;
            Ok((sample_covariance(&ensemble)?, Some(ensemble)))
        }
    }
}

/// Full comparison over the τ grid. On error a `FAILED` marker naming the
/// failing stage is left beside whatever was already written.
pub fn run_scenario(config: &RunConfig) -> Result<RunReport> {
    let root = config.scenario_dir();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let marker = root.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let result = run_in(config, &root);
    if let Err(err) = &result {
        write_text(&marker, &format!("{err}\n"))?;
    }
    result
}

fn run_in(config: &RunConfig, root: &Path) -> Result<RunReport> {
    let name = config.scenario.name.clone();
    let prepared = in_stage(|| format!("scenario {name}, preparation"), prepare_scenario(config))?;
    write_inputs(config, &prepared)?;
    let mut report = RunReport {
        scenario: name.clone(),
        provenance: Provenance {
            seed: config.seed,
            config_hash: config.hash()?,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        fits: Vec::new(),
        estimates: Vec::new(),
        relative_differences: Vec::new(),
        summary: PathBuf::from("summary.csv"),
        root: root.to_path_buf(),
    };
    for (tau, fit) in run_fits(config, &prepared)? {
        let tau_dir = PathBuf::from(tau.dir_name());
        report.fits.push(FitEntry {
            tau: tau.label.clone(),
            path: tau_dir.join("fit.json"),
            converged: fit.converged,
            phi_value: fit.phi_value,
        });
        let problem = prepared.problem(tau.value)?;
        let mut matrices = Vec::new();
        for &method in &config.methods {
            let context = || format!("scenario {name}, tau {}, method {method}", tau.label);
            let (cov, ensemble) = in_stage(context, estimate(method, &problem, &fit, config.toys, config.seed))?;
            let method_dir = tau_dir.join(method.label());
            let covariance = method_dir.join("covariance.csv");
            write_with(&root.join(&covariance), |w| cov.write_csv(w))?;
            let estimates = match &ensemble {
                Some(e) => {
                    let path = method_dir.join("estimates.csv");
                    write_estimates(&root.join(&path), e)?;
                    Some(path)
                }
                None => None,
            };
            let converged_fraction = ensemble.as_ref().map_or(1.0, ToyEnsemble::converged_fraction);
            let bias = ensemble.as_ref().map(|e| {
                e.mean_mu()
                    .iter()
                    .zip(prepared.truth.contents())
                    .map(|(m, t)| m - t)
                    .collect()
            });
            report.estimates.push(EstimateEntry {
                tau: tau.label.clone(),
                method,
                covariance,
                estimates,
                summary: SummaryRow::new(&name, &tau, &cov, &fit, prepared.truth.contents(), converged_fraction),
                bias,
            });
            matrices.push(cov);
        }
        let Some(baseline) = matrices.iter().find(|c| c.method == Method::FrequentistToys) else {
            continue;
        };
        for other in matrices.iter().filter(|c| c.method != Method::FrequentistToys) {
            let path = tau_dir.join(format!("reldiff_{}_vs_{}.csv", other.method, baseline.method));
            let diff = relative_difference(other, baseline)?;
            write_with(&root.join(&path), |w| write_matrix_csv(&diff, w))?;
            report.relative_differences.push(RelDiffEntry {
                tau: tau.label.clone(),
                method: other.method,
                baseline: baseline.method,
                path,
                mean_abs_diagonal: mean_abs_diagonal_difference(other, baseline)?,
            });
        }
    }
    write_with(&root.join(&report.summary), |w| emit_summary(&report.summary_rows(), w))?;
    write_text(&root.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHIPPED_DG: &str = include_str!("../../../configs/double_gaussian.toml");
    const SHIPPED_EXP: &str = include_str!("../../../configs/exponential.toml");

    #[test]
    fn shipped_double_gaussian_config() {
        let c = RunConfig::from_toml_str(SHIPPED_DG, Path::new(".")).unwrap();
        assert_eq!(c.scenario.truth_edges.n_bins(), 5);
        assert_eq!(c.taus.len(), 4);
        assert_eq!(
            c.taus.iter().map(|t| t.label.as_str()).collect::<Vec<_>>(),
            DEFAULT_TAUS
        );
        assert_eq!(c.methods, Method::ALL);
        assert_eq!(c.toys, 1000);
        let e = RunConfig::from_toml_str(SHIPPED_EXP, Path::new(".")).unwrap();
        assert_eq!(e.scenario.truth_edges.n_bins(), 11);
    }

    #[test]
    fn rejects_bad_configs() {
        let err = RunConfig::from_toml_str("scenario = \"double_gaussian\"\nfoo = 1", Path::new(".")).unwrap_err();
        assert_eq!(err.to_string(), "unknown key: foo");
        assert_eq!(err.exit_code(), 1);

        let err = RunConfig::from_toml_str("scenario = \"double_gaussian\"\ntau = [-1]", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains(">= 0"), "{err}");

        let err = RunConfig::from_toml_str("tau = [0]", Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::MissingKey(k) if k == "scenario"));

        for bad in [
            "tau = [\"1e-5\", \"1e-6\"]",
            "tau = []",
            "methods = []",
            "methods = [\"bootstrap\"]",
            "toys = 1",
            "threads = 0",
            "response_model = \"lookup\"",
            "toys = \"many\"",
        ] {
            let text = format!("scenario = \"double_gaussian\"\n{bad}");
            let err = RunConfig::from_toml_str(&text, Path::new(".")).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{bad}: {err}");
        }
    }

    #[test]
    fn tau_labels_follow_the_config_text() {
        assert_eq!(TauPoint::parse("5e-5").unwrap().dir_name(), "tau_5e-5");
        assert_eq!(TauPoint::parse("0.00005").unwrap().label, "0.00005");
        assert_eq!(TauPoint::from_value(1e-6).unwrap().label, "1e-6");
        assert_eq!(TauPoint::from_value(0.0).unwrap().label, "0");
        let c = RunConfig::from_toml_str("scenario = \"exponential\"\ntau = [0, 2.5e-6]", Path::new(".")).unwrap();
        assert_eq!(c.taus[1].label, "2.5e-6");
    }

    #[test]
    fn hash_ignores_output_location_and_threads() {
        let a = RunConfig::builtin("double_gaussian").unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        b.threads = Some(3);
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn summary_for_exact_estimate_has_zero_chi2() {
        let estimate = CovarianceEstimate {
            matrix: nalgebra::DMatrix::from_diagonal_element(2, 2, 4.0),
            method: Method::FrequentistToys,
            n_toys_used: 10,
            tau: 0.0,
        };
        let fit = FitResult {
            mu_hat: vec![2.0, 4.0],
            theta_hat: vec![],
            phi_value: 0.0,
            converged: true,
            n_iterations: 1,
            final_gradient_norm: 0.0,
        };
        let tau = TauPoint::from_value(0.0).unwrap();
        let row = SummaryRow::new("toy", &tau, &estimate, &fit, &[2.0, 4.0], 1.0);
        assert_eq!(row.chi2_ndf, 0.0);
        assert_eq!(row.avg_sigma_rel, 0.75);
        assert_eq!(row.avg_global_corr, 0.0);
        let mut buf = Vec::new();
        emit_summary(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "scenario,method,tau,avg_sigma_rel,avg_global_corr,chi2_ndf,T_used,converged_fraction,validity"
        );
        assert_eq!(text.lines().count(), 2);
    }
}
