//! Binned containers: bin edges, one-dimensional histograms and response
//! matrices, plus their CSV forms.
//!
//! Bins are half-open `[lo, hi)` except the last one, which also contains
//! the global upper edge. Values outside the declared range are not an
//! error; they are tallied as overflow and otherwise dropped.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on response column sums above one.
pub const COLUMN_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BinEdges(Vec<f64>);

impl BinEdges {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::Binning(format!(
                "need at least two edges, got {}",
                edges.len()
            )));
        }
        if let Some(bad) = edges.iter().find(|e| !e.is_finite()) {
            return Err(Error::Binning(format!("edge {bad} is not finite")));
        }
        if let Some(k) = edges.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Binning(format!(
                "edges not strictly increasing at index {k}: {} >= {}",
                edges[k],
                edges[k + 1]
            )));
        }
        Ok(BinEdges(edges))
    }

    /// `n` equal-width bins on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Binning("need at least one bin".into()));
        }
        let width = (hi - lo) / n as f64;
        let mut edges: Vec<f64> = (0..n).map(|k| lo + width * k as f64).collect();
        edges.push(hi);
        Self::new(edges)
    }

    pub fn n_bins(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn lo(&self) -> f64 {
        self.0[0]
    }

    pub fn hi(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn bin_range(&self, k: usize) -> (f64, f64) {
        (self.0[k], self.0[k + 1])
    }

    /// Index `k` with `edges[k] <= x < edges[k+1]`; the global upper edge
    /// belongs to the last bin.
    pub fn find_bin(&self, x: f64) -> Option<usize> {
        let edges = &self.0;
        let hi = self.hi();
        if !(x >= edges[0] && x <= hi) {
            return None;
        }
        if x == hi {
            return Some(self.n_bins() - 1);
        }
        // first edge strictly greater than x, minus one
        Some(edges.partition_point(|&e| e <= x) - 1)
    }
}

impl TryFrom<Vec<f64>> for BinEdges {
    type Error = Error;

    fn try_from(edges: Vec<f64>) -> Result<Self> {
        BinEdges::new(edges)
    }
}

impl From<BinEdges> for Vec<f64> {
    fn from(edges: BinEdges) -> Self {
        edges.0
    }
}

/// Free-function form of [`BinEdges::find_bin`].
pub fn find_bin(edges: &BinEdges, x: f64) -> Option<usize> {
    edges.find_bin(x)
}

/// Histogram over [`BinEdges`] with real-valued contents. Holds observed
/// counts, expectations, or weighted Monte Carlo fills depending on role.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram1D {
    edges: BinEdges,
    contents: Vec<f64>,
    overflow: f64,
}

impl Histogram1D {
    pub fn new(edges: BinEdges) -> Self {
        let n = edges.n_bins();
        Histogram1D {
            edges,
            contents: vec![0.0; n],
            overflow: 0.0,
        }
    }

    pub fn from_contents(edges: BinEdges, contents: Vec<f64>) -> Result<Self> {
        if contents.len() != edges.n_bins() {
            return Err(Error::Dimension(format!(
                "{} contents for {} bins",
                contents.len(),
                edges.n_bins()
            )));
        }
        Ok(Histogram1D {
            edges,
            contents,
            overflow: 0.0,
        })
    }

    /// Add `weight` to the bin containing `x`. Out-of-range values go to the
    /// overflow tally.
    pub fn fill(&mut self, x: f64, weight: f64) -> Result<()> {
        if !(weight >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "fill weight must be non-negative, got {weight}"
            )));
        }
        match self.edges.find_bin(x) {
            Some(k) => self.contents[k] += weight,
            None => self.overflow += weight,
        }
        Ok(())
    }

    pub fn edges(&self) -> &BinEdges {
        &self.edges
    }

    pub fn contents(&self) -> &[f64] {
        &self.contents
    }

    pub fn into_contents(self) -> Vec<f64> {
        self.contents
    }

    pub fn n_bins(&self) -> usize {
        self.contents.len()
    }

    /// Summed weight of fills that fell outside the binning.
    pub fn overflow(&self) -> f64 {
        self.overflow
    }

    pub fn total(&self) -> f64 {
        self.contents.iter().sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.contents {
            *c *= factor;
        }
        self.overflow *= factor;
    }

    /// Elementwise merge of a histogram filled on the same binning.
    pub fn merge(&mut self, other: &Histogram1D) -> Result<()> {
        if self.edges != other.edges {
            return Err(Error::Dimension("cannot merge histograms with different edges".into()));
        }
        for (a, b) in self.contents.iter_mut().zip(&other.contents) {
            *a += b;
        }
        self.overflow += other.overflow;
        Ok(())
    }

    /// Checks that every bin holds a non-negative integer count.
    pub fn validate_counts(&self) -> Result<()> {
        for (k, &c) in self.contents.iter().enumerate() {
            if !(c >= 0.0) || c.fract() != 0.0 || !c.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "bin {k} holds {c}, expected a non-negative integer count"
                )));
            }
        }
        Ok(())
    }

    /// Rows of `lo,hi,content` under a header line.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["lo", "hi", "content"])?;
        for (k, c) in self.contents.iter().enumerate() {
            let (lo, hi) = self.edges.bin_range(k);
            out.write_record([lo.to_string(), hi.to_string(), c.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        let mut edges = Vec::new();
        let mut contents = Vec::new();
        for record in input.records() {
            let record = record?;
            let field = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("bad histogram row {record:?}")))
            };
            let (lo, hi, c) = (field(0)?, field(1)?, field(2)?);
            match edges.last() {
                None => edges.push(lo),
                Some(&prev) if prev != lo => {
                    return Err(Error::Binning(format!("gap between {prev} and {lo}")))
                }
                _ => {}
            }
            edges.push(hi);
            contents.push(c);
        }
        Histogram1D::from_contents(BinEdges::new(edges)?, contents)
    }
}

/// `R[i][j] = P(reco bin i | truth bin j)`; column sums are the
/// reconstruction efficiencies.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    entries: DMatrix<f64>,
    truth_edges: BinEdges,
    reco_edges: BinEdges,
}

impl ResponseMatrix {
    pub fn new(entries: DMatrix<f64>, truth_edges: BinEdges, reco_edges: BinEdges) -> Result<Self> {
        if entries.nrows() != reco_edges.n_bins() || entries.ncols() != truth_edges.n_bins() {
            return Err(Error::Dimension(format!(
                "response is {}x{} but binning is {} reco x {} truth",
                entries.nrows(),
                entries.ncols(),
                reco_edges.n_bins(),
                truth_edges.n_bins()
            )));
        }
        for j in 0..entries.ncols() {
            for i in 0..entries.nrows() {
                let r = entries[(i, j)];
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::InvalidInput(format!(
                        "response entry ({i}, {j}) = {r} outside [0, 1]"
                    )));
                }
            }
        }
        for (j, col) in entries.column_iter().enumerate() {
            let s: f64 = col.iter().sum();
            if s > 1.0 + COLUMN_SUM_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "response column {j} sums to {s} > 1"
                )));
            }
        }
        Ok(ResponseMatrix {
            entries,
            truth_edges,
            reco_edges,
        })
    }

    pub fn identity(edges: BinEdges) -> Self {
        let n = edges.n_bins();
        ResponseMatrix {
            entries: DMatrix::identity(n, n),
            truth_edges: edges.clone(),
            reco_edges: edges,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, reco: usize, truth: usize) -> f64 {
        self.entries[(reco, truth)]
    }

    pub fn n_reco(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_truth(&self) -> usize {
        self.entries.ncols()
    }

    pub fn truth_edges(&self) -> &BinEdges {
        &self.truth_edges
    }

    pub fn reco_edges(&self) -> &BinEdges {
        &self.reco_edges
    }

    /// Reconstruction efficiency of each truth bin.
    pub fn column_sums(&self) -> Vec<f64> {
        self.entries.column_iter().map(|c| c.iter().sum()).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_matrix_csv(&self.entries, writer)
    }
}

/// Free-function form of [`ResponseMatrix::column_sums`].
pub fn column_sums(response: &ResponseMatrix) -> Vec<f64> {
    response.column_sums()
}

/// Dense grid with a header row and a header column of bin indices.
pub fn write_matrix_csv<W: Write>(matrix: &DMatrix<f64>, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend((0..matrix.ncols()).map(|j| j.to_string()));
    out.write_record(&header)?;
    for (i, row) in matrix.row_iter().enumerate() {
        let mut record = vec![i.to_string()];
        record.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&record)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut input = csv::Reader::from_reader(reader);
    let ncols = input.headers()?.len().saturating_sub(1);
    let mut values = Vec::new();
    let mut nrows = 0;
    for record in input.records() {
        let record = record?;
        if record.len() != ncols + 1 {
            return Err(Error::Dimension(format!("ragged matrix row {nrows}")));
        }
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad matrix entry {field:?}")))?;
            values.push(v);
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn edges(v: &[f64]) -> BinEdges {
        BinEdges::new(v.to_vec()).unwrap()
    }

    #[test]
    fn find_bin_examples() {
        let e = edges(&[0.0, 1.0, 2.0]);
        assert_eq!(e.find_bin(0.5), Some(0));
        assert_eq!(e.find_bin(1.0), Some(1));
        assert_eq!(e.find_bin(2.0), Some(1));
        assert_eq!(e.find_bin(-0.1), None);
        assert_eq!(e.find_bin(2.0001), None);
        assert_eq!(e.find_bin(f64::NAN), None);

        let truth = edges(&[0., 2., 4., 6., 8., 10., 12., 14., 18., 25., 35., 60.]);
        assert_eq!(truth.find_bin(20.0), Some(8));
    }

    #[test]
    fn invalid_edges_rejected() {
        assert!(BinEdges::new(vec![1.0]).is_err());
        assert!(BinEdges::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(BinEdges::new(vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn fill_examples() {
        let mut h = Histogram1D::new(edges(&[0.0, 1.0, 2.0]));
        h.fill(0.5, 1.0).unwrap();
        assert_eq!(h.contents(), &[1.0, 0.0]);
        h.fill(7.0, 1.0).unwrap();
        assert_eq!(h.contents(), &[1.0, 0.0]);
        assert_eq!(h.overflow(), 1.0);
        assert!(h.fill(0.5, -1.0).is_err());

        let mut h = Histogram1D::new(edges(&[0.0, 1.0, 2.0]));
        for k in 0..10 {
            h.fill(0.15 * k as f64, 1.0).unwrap();
        }
        assert_eq!(h.total(), 10.0);
    }

    #[test]
    fn column_sum_examples() {
        let e = edges(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(ResponseMatrix::identity(e.clone()).column_sums(), vec![1.0, 1.0, 1.0]);

        let m = DMatrix::from_row_slice(3, 3, &[0.5, 0.0, 0.1, 0.2, 0.0, 0.0, 0.0, 0.0, 0.7]);
        let r = ResponseMatrix::new(m, e.clone(), e).unwrap();
        assert_eq!(r.column_sums()[1], 0.0);

        let e2 = edges(&[0.0, 1.0, 2.0]);
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.4, 0.9]);
        let r = ResponseMatrix::new(m, e2.clone(), e2).unwrap();
        let sums = column_sums(&r);
        assert!((sums[0] - 0.9).abs() < 1e-15 && (sums[1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn response_validation() {
        let e = edges(&[0.0, 1.0, 2.0]);
        let neg = DMatrix::from_row_slice(2, 2, &[-0.1, 0.0, 0.5, 0.5]);
        assert!(ResponseMatrix::new(neg, e.clone(), e.clone()).is_err());
        let over = DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.5, 0.5]);
        assert!(ResponseMatrix::new(over, e.clone(), e.clone()).is_err());
        let wrong_shape = DMatrix::zeros(3, 2);
        assert!(ResponseMatrix::new(wrong_shape, e.clone(), e).is_err());
    }

    #[test]
    fn count_validation() {
        let e = edges(&[0.0, 1.0, 2.0]);
        assert!(Histogram1D::from_contents(e.clone(), vec![3.0, 0.0]).unwrap().validate_counts().is_ok());
        assert!(Histogram1D::from_contents(e.clone(), vec![3.5, 0.0]).unwrap().validate_counts().is_err());
        assert!(Histogram1D::from_contents(e, vec![-1.0, 0.0]).unwrap().validate_counts().is_err());
    }

    #[test]
    fn csv_forms() {
        let e = edges(&[0.0, 1.5, 4.0]);
        let h = Histogram1D::from_contents(e, vec![3.0, 0.25]).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "lo,hi,content\n0,1.5,3\n1.5,4,0.25\n");
        assert_eq!(Histogram1D::read_csv(buf.as_slice()).unwrap(), h);

        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.4, 0.9]);
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), ",0,1\n0,0.5,0\n1,0.4,0.9\n");
        assert_eq!(read_matrix_csv(buf.as_slice()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn fills_conserve_weight(xs in prop::collection::vec((0.0f64..10.0, 0.0f64..5.0), 0..200)) {
            let mut h = Histogram1D::new(BinEdges::uniform(0.0, 10.0, 7).unwrap());
            let mut expected = 0.0;
            for &(x, w) in &xs {
                h.fill(x, w).unwrap();
                expected += w;
            }
            prop_assert!((h.total() - expected).abs() <= 1e-9 * expected.max(1.0));
            prop_assert_eq!(h.overflow(), 0.0);
        }

        #[test]
        fn find_bin_consistent_with_edges(
            widths in prop::collection::vec(0.01f64..3.0, 1..20),
            k_frac in 0.0f64..1.0,
            t in 0.001f64..0.999,
        ) {
            let mut e = vec![-1.0];
            for w in &widths {
                let last = *e.last().unwrap();
                e.push(last + w);
            }
            let edges = BinEdges::new(e).unwrap();
            let k = ((k_frac * edges.n_bins() as f64) as usize).min(edges.n_bins() - 1);
            let (lo, hi) = edges.bin_range(k);
            let x = lo + t * (hi - lo);
            prop_assume!(x > lo && x < hi);
            prop_assert_eq!(edges.find_bin(x), Some(k));
        }
    }
}
