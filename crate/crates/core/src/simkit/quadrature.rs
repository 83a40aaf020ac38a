use std::f64::consts::SQRT_2;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;
use statrs::function::erf::erfc;

use super::detector::width_positive_on;
use super::ScenarioSpec;
use crate::error::{Error, Result};
use crate::hist::{BinEdges, ResponseMatrix};
use crate::objective::ResponseModel;

const NODES_PER_PANEL: usize = 6;
const MAX_PANEL_WIDTH: f64 = 0.4;
/// Beyond this many widths the Gaussian CDF is taken as exactly 0 or 1.
const CDF_CUTOFF: f64 = 8.5;
/// Background integration margin beyond the reco range, in nominal widths.
const BACKGROUND_MARGIN: f64 = 12.0;

#[derive(Debug, Clone, Copy)]
struct Node {
    x: f64,
    weight: f64,
    energy: f64,
    /// Slice of truth the node stands for.
    cell: (f64, f64),
}

/// Antiderivative of `clamp(t, 0, 1)`.
fn ramp_integral(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t <= 1.0 {
        0.5 * t * t
    } else {
        t - 0.5
    }
}

/// Mean of `clamp(θ₃ − b|x|/600, 0, 1)` over `x ∈ [lo, hi]`.
///
/// Averaging over the node's cell instead of sampling at the node makes the
/// model continuously differentiable in θ₃ where efficiencies saturate.
fn mean_efficiency(theta3: f64, b: f64, lo: f64, hi: f64) -> f64 {
    let piece = |p: f64, q: f64| {
        let (tp, tq) = (theta3 - b * p.abs() / 600.0, theta3 - b * q.abs() / 600.0);
        if (tp - tq).abs() < 1e-12 {
            (0.5 * (tp + tq)).clamp(0.0, 1.0)
        } else {
            (ramp_integral(tp) - ramp_integral(tq)) / (tp - tq)
        }
    };
    if b == 0.0 || hi <= lo {
        return piece(lo, lo);
    }
    if lo < 0.0 && hi > 0.0 {
        (-lo * piece(lo, 0.0) + hi * piece(0.0, hi)) / (hi - lo)
    } else {
        piece(lo, hi)
    }
}

/// Response and background computed by deterministic quadrature over the
/// truth density instead of Monte Carlo sampling.
///
/// The detector acts analytically on each node: efficiency scales the node
/// weight and the Gaussian CDF at the reco edges distributes it. The result
/// is a smooth function of the nuisance values, so finite differences in θ
/// carry no sampling noise.
#[derive(Debug, Clone)]
pub struct QuadratureModel {
    spec: ScenarioSpec,
    truth_nodes: Vec<Vec<Node>>,
    background_nodes: Vec<Node>,
    x_range: (f64, f64),
}

/// Gauss-Legendre nodes on panels no wider than [`MAX_PANEL_WIDTH`], split
/// at `breaks`. Each entry is `(x, weight, cell)`, where the cells tile the
/// panel with widths equal to the weights and each holds its own node.
fn panels(lo: f64, hi: f64, breaks: &[f64], rule: &GaussLegendre) -> Vec<(f64, f64, (f64, f64))> {
    let mut cuts = vec![lo];
    cuts.extend(breaks.iter().copied().filter(|&e| e > lo && e < hi));
    cuts.push(hi);
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let n = ((w[1] - w[0]) / MAX_PANEL_WIDTH).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / n as f64;
        for p in 0..n {
            let a = w[0] + h * p as f64;
            let b = if p + 1 == n { w[1] } else { a + h };
            let mut left = a;
            let pairs = rule.as_node_weight_pairs();
            for (k, &(t, gw)) in pairs.iter().enumerate() {
                let weight = 0.5 * (b - a) * gw;
                let right = if k + 1 == pairs.len() { b } else { left + weight };
                out.push((0.5 * (b - a) * t + 0.5 * (b + a), weight, (left, right)));
                left = right;
            }
        }
    }
    out
}

impl QuadratureModel {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let rule = GaussLegendre::new(NonZeroUsize::new(NODES_PER_PANEL).expect("non-zero"));
        let det = spec.detector;
        let node = |x: f64, weight: f64, cell: (f64, f64)| Node {
            x,
            weight,
            energy: if det.a == 0.0 { 0.0 } else { det.a * (x.max(0.0) / 300.0).sqrt() },
            cell,
        };
        let breaks = spec.reco_edges.as_slice();

        let mut truth_nodes = Vec::with_capacity(spec.truth_edges.n_bins());
        for j in 0..spec.truth_edges.n_bins() {
            let (lo, hi) = spec.truth_edges.bin_range(j);
            let raw = panels(lo, hi, breaks, &rule);
            let mass: f64 = raw.iter().map(|&(x, w, _)| spec.response_density(x) * w).sum();
            if !(mass > 0.0) {
                return Err(Error::EmptyTruthBin {
                    bin: j,
                    count: 0,
                    required: 1,
                });
            }
            truth_nodes.push(
                raw.iter()
                    .map(|&(x, w, cell)| node(x, spec.response_density(x) * w / mass, cell))
                    .collect(),
            );
        }

        let theta = spec.nominal.aux();
        let far_width = theta[0].abs() * (theta[1] + det.a * (spec.reco_edges.hi().max(0.0) / 300.0).sqrt());
        let margin = BACKGROUND_MARGIN * far_width.max(0.0);
        let (slo, shi) = spec.background.support();
        let (blo, bhi) = (
            slo.max(spec.reco_edges.lo() - margin),
            shi.min(spec.reco_edges.hi() + margin),
        );
        let background_nodes = if spec.n_bkg > 0.0 && blo < bhi {
            panels(blo, bhi, breaks, &rule)
                .into_iter()
                .map(|(x, w, cell)| node(x, spec.n_bkg * spec.background.pdf(x) * w, cell))
                .filter(|n| n.weight > 0.0)
                .collect()
        } else {
            Vec::new()
        };

        let mut x_range = (spec.truth_edges.lo(), spec.truth_edges.hi());
        if let (Some(first), Some(last)) = (background_nodes.first(), background_nodes.last()) {
            x_range = (x_range.0.min(first.x), x_range.1.max(last.x));
        }
        Ok(QuadratureModel {
            spec,
            truth_nodes,
            background_nodes,
            x_range,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    /// Smallest and largest `|x|` covered by any node cell.
    fn reach(&self) -> (f64, f64) {
        let mut near = f64::INFINITY;
        let mut far: f64 = 0.0;
        for n in self.truth_nodes.iter().flatten().chain(&self.background_nodes) {
            let (lo, hi) = n.cell;
            near = near.min(if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) });
            far = far.max(lo.abs().max(hi.abs()));
        }
        (near, far)
    }

    pub fn n_nodes(&self) -> usize {
        self.truth_nodes.iter().map(Vec::len).sum::<usize>() + self.background_nodes.len()
    }

    /// Adds the reco-level image of one node to `out`.
    fn deposit(&self, n: &Node, theta: &[f64], out: &mut [f64]) -> Result<()> {
        let width = theta[1] + n.energy;
        if !(width > 0.0) {
            return Err(Error::NonPositiveWidth { width, x_true: n.x });
        }
        let eff = mean_efficiency(theta[2], self.spec.detector.b, n.cell.0, n.cell.1);
        if eff == 0.0 {
            return Ok(());
        }
        let mass = n.weight * eff;
        let edges = self.spec.reco_edges.as_slice();
        let scale = theta[0].abs() * width;
        if scale == 0.0 {
            if let Some(i) = self.spec.reco_edges.find_bin(n.x) {
                out[i] += mass;
            }
            return Ok(());
        }
        let cut = CDF_CUTOFF * scale;
        let first = edges.partition_point(|&e| e < n.x - cut);
        let last = edges.partition_point(|&e| e <= n.x + cut);
        let cdf = |k: usize| -> f64 {
            if k < first {
                0.0
            } else if k >= last {
                1.0
            } else {
                0.5 * erfc((n.x - edges[k]) / (scale * SQRT_2))
            }
        };
        let lo_bin = first.saturating_sub(1);
        let hi_bin = last.min(out.len());
        let mut below = cdf(lo_bin);
        for (i, slot) in out.iter_mut().enumerate().take(hi_bin).skip(lo_bin) {
            let above = cdf(i + 1);
            *slot += mass * (above - below).max(0.0);
            below = above;
        }
        Ok(())
    }
}

impl ResponseModel for QuadratureModel {
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
        if theta.len() != 3 {
            return Err(Error::Dimension(format!(
                "detector takes 3 nuisance values, got {}",
                theta.len()
            )));
        }
        let n_reco = self.spec.reco_edges.n_bins();
        let n_truth = self.truth_nodes.len();
        let mut entries = DMatrix::<f64>::zeros(n_reco, n_truth);
        let mut column = vec![0.0; n_reco];
        for (j, nodes) in self.truth_nodes.iter().enumerate() {
            column.iter_mut().for_each(|c| *c = 0.0);
            for n in nodes {
                self.deposit(n, theta, &mut column)?;
            }
            for (i, &c) in column.iter().enumerate() {
                entries[(i, j)] = c.min(1.0);
            }
        }
        let mut beta = vec![0.0; n_reco];
        for n in &self.background_nodes {
            self.deposit(n, theta, &mut beta)?;
        }
        let response = ResponseMatrix::new(entries, self.spec.truth_edges.clone(), self.spec.reco_edges.clone())?;
        Ok((response, beta))
    }

    fn admissible(&self, theta: &[f64]) -> bool {
        width_positive_on(theta, &self.spec.detector, self.x_range.0, self.x_range.1)
    }

    /// The model carries no sampling noise, so a fine step resolves the
    /// structure a saturating efficiency puts into the likelihood.
    fn theta_step(&self) -> f64 {
        0.001
    }

    fn nuisance_ceiling(&self) -> Vec<f64> {
        let (_, far) = self.reach();
        vec![f64::INFINITY, f64::INFINITY, 1.0 + self.spec.detector.b.max(0.0) * far / 600.0]
    }

    fn nuisance_breaks(&self) -> Vec<Vec<f64>> {
        // The second derivative in θ₃ jumps where efficiencies start to
        // saturate and where the saturation front crosses a truth bin edge.
        let b = self.spec.detector.b;
        if b == 0.0 {
            return vec![vec![], vec![], vec![]];
        }
        let (near, far) = self.reach();
        let mut at: Vec<f64> = vec![near, far];
        at.extend(self.spec.truth_edges.as_slice().iter().map(|e| e.abs()));
        let mut breaks: Vec<f64> = at.iter().map(|x| 1.0 + b * x / 600.0).collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        vec![vec![], vec![], breaks]
    }

    fn truth_shape(&self) -> Option<Vec<f64>> {
        Some(self.spec.expected_truth().into_contents())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkit::{build_background, build_response, MonteCarlo, RngStream};

    fn mc(n: u64) -> MonteCarlo {
        MonteCarlo {
            n_events: n,
            min_events: 0,
        }
    }

    #[test]
    fn identity_detector_is_identity() {
        let model = QuadratureModel::new(ScenarioSpec::double_gaussian()).unwrap();
        let (r, beta) = model.evaluate(&[0.0, 0.3, 1.0]).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((r.get(i, j) - want).abs() < 1e-12);
            }
        }
        let total: f64 = beta.iter().sum();
        assert!((total - 5000.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn agrees_with_monte_carlo() {
        for spec in [ScenarioSpec::double_gaussian(), ScenarioSpec::exponential()] {
            let theta = spec.nominal.values().to_vec();
            let model = QuadratureModel::new(spec.clone()).unwrap();
            let (r, beta) = model.evaluate(&theta).unwrap();
            let n = 1_000_000;
            let r_mc = build_response(&spec, &theta, &mc(n), &mut RngStream::new(5, "xcheck", 0)).unwrap();
            let b_mc = build_background(&spec, &theta, &mc(n), &mut RngStream::new(5, "xcheck", 1)).unwrap();
            // per-column binomial errors with the MC denominators
            let p_sig = spec.n_sig / (spec.n_sig + spec.n_bkg);
            for j in 0..r.n_truth() {
                let (lo, hi) = spec.truth_edges.bin_range(j);
                let frac = p_sig * (spec.signal.cdf(hi) - spec.signal.cdf(lo))
                    + (1.0 - p_sig) * (spec.background.cdf(hi) - spec.background.cdf(lo));
                let denom = frac * n as f64;
                for i in 0..r.n_reco() {
                    let p = r.get(i, j);
                    let se = (p * (1.0 - p) / denom).sqrt().max(1.0 / denom);
                    assert!(
                        (r_mc.get(i, j) - p).abs() < 5.0 * se,
                        "{} R[{i},{j}]: quad {p} mc {}",
                        spec.name,
                        r_mc.get(i, j)
                    );
                }
            }
            let w = spec.n_bkg / n as f64;
            for (i, (&q, &m)) in beta.iter().zip(b_mc.contents()).enumerate() {
                let se = (q * w).sqrt().max(w);
                assert!((q - m).abs() < 5.0 * se, "{} beta[{i}]: quad {q} mc {m}", spec.name);
            }
        }
    }

    #[test]
    fn smooth_in_theta() {
        let model = QuadratureModel::new(ScenarioSpec::exponential()).unwrap();
        let base = [1.0, 0.3, 0.95];
        let (r0, _) = model.evaluate(&base).unwrap();
        let (r1, _) = model.evaluate(&[1.0 + 1e-7, 0.3, 0.95]).unwrap();
        let diff = (r1.matrix() - r0.matrix()).abs().max();
        assert!(diff > 0.0 && diff < 1e-6, "{diff}");
    }

    #[test]
    fn rejects_bad_width() {
        let model = QuadratureModel::new(ScenarioSpec::double_gaussian()).unwrap();
        assert!(!model.admissible(&[1.0, -0.01, 0.95]));
        assert!(model.admissible(&[1.0, 0.3, 0.95]));
        assert!(matches!(
            model.evaluate(&[1.0, -0.01, 0.95]),
            Err(Error::NonPositiveWidth { .. })
        ));
    }
}
