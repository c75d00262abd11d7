use serde::{Deserialize, Serialize};

use super::DataError;

/// Fixed-edge histogram. Bin `i` covers `[edges[i], edges[i + 1])`; the last
/// bin is closed on the right. Samples outside the range are counted in the
/// nearest end bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    bin_edges: Vec<f64>,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bin_edges: Vec<f64>, counts: Vec<u64>) -> Result<Self, DataError> {
        if bin_edges.len() < 3 {
            return Err(DataError::InvalidHistogram("at least 2 bins are required".into()));
        }
        if bin_edges.iter().any(|e| !e.is_finite()) || bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::InvalidHistogram("edges must be finite and strictly increasing".into()));
        }
        if counts.len() + 1 != bin_edges.len() {
            return Err(DataError::InvalidHistogram(format!(
                "{} edges need {} counts, got {}",
                bin_edges.len(),
                bin_edges.len() - 1,
                counts.len()
            )));
        }
        Ok(Self { bin_edges, counts })
    }

    pub fn empty(bin_edges: Vec<f64>) -> Result<Self, DataError> {
        let n = bin_edges.len().saturating_sub(1);
        Self::new(bin_edges, vec![0; n])
    }

    /// `bins` equal-width bins over `[lo, hi]`.
    pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>, DataError> {
        if bins < 2 || !(lo < hi) {
            return Err(DataError::InvalidHistogram(format!("bad uniform range [{lo}, {hi}] x {bins}")));
        }
        let width = (hi - lo) / bins as f64;
        Ok((0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect())
    }

    pub fn from_samples(bin_edges: Vec<f64>, samples: impl IntoIterator<Item = f64>) -> Result<Self, DataError> {
        let mut h = Self::empty(bin_edges)?;
        for s in samples {
            h.add(s);
        }
        Ok(h)
    }

    pub fn add(&mut self, value: f64) {
        let idx = self.bin_index(value);
        self.counts[idx] += 1;
    }

    fn bin_index(&self, value: f64) -> usize {
        let bins = self.counts.len();
        // partition_point gives the number of edges <= value
        let above = self.bin_edges.partition_point(|e| *e <= value);
        above.saturating_sub(1).min(bins - 1)
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Kullback-Leibler divergence `D(p || q)` in nats.
///
/// Both histograms are smoothed by adding `epsilon` to every bin count and
/// then normalized, so empty bins give a large but finite result.
pub fn kl_divergence(p: &Histogram, q: &Histogram, epsilon: f64) -> Result<f64, DataError> {
    if p.bin_edges != q.bin_edges {
        return Err(DataError::BinMismatch);
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(DataError::InvalidHistogram(format!("epsilon must be positive, got {epsilon}")));
    }
    let bins = p.counts.len() as f64;
    let p_total = p.total() as f64 + epsilon * bins;
    let q_total = q.total() as f64 + epsilon * bins;
    let d: f64 = p
        .counts
        .iter()
        .zip(&q.counts)
        .map(|(&pc, &qc)| {
            let pi = (pc as f64 + epsilon) / p_total;
            let qi = (qc as f64 + epsilon) / q_total;
            pi * (pi / qi).ln()
        })
        .sum();
    Ok(d.max(0.0))
}
