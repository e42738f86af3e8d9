//! Output smoothing and frequency-balanced loss weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmap::Layer;

pub const MIN_WEIGHT: f64 = 0.2;
pub const MAX_WEIGHT: f64 = 5.0;
pub const DEFAULT_BINS: usize = 100;
pub const TRAVERSABILITY_RANGE: (f64, f64) = (0.0, 1.0);
pub const NORMALIZED_ELEVATION_RANGE: (f64, f64) = (-1.0, 1.0);

const MEDIAN_RADIUS: usize = 2;

/// 5x5 median over valid neighbors; invalid cells stay invalid.
///
/// With an even number of valid neighbors the lower median is taken.
pub fn median_filter_5x5(layer: &Layer) -> Layer {
    let (h, w) = (layer.height(), layer.width());
    let mut out = Layer::new(h, w);
    let mut window = Vec::with_capacity(25);
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if layer.at(i).is_none() {
                continue;
            }
            window.clear();
            for r in row.saturating_sub(MEDIAN_RADIUS)..(row + MEDIAN_RADIUS + 1).min(h) {
                for c in col.saturating_sub(MEDIAN_RADIUS)..(col + MEDIAN_RADIUS + 1).min(w) {
                    if let Some(v) = layer.at(r * w + c) {
                        window.push(v);
                    }
                }
            }
            window.sort_unstable_by(f64::total_cmp);
            out.set_index(i, window[(window.len() - 1) / 2]);
        }
    }
    out
}

/// Value histogram with fixed, evenly spaced bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn new(n_bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::invalid("histogram needs at least one bin"));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!(
                "invalid histogram range [{lo}, {hi}]"
            )));
        }
        let edges = (0..=n_bins)
            .map(|k| {
                if k == n_bins {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / n_bins as f64
                }
            })
            .collect();
        Ok(Self {
            edges,
            counts: vec![0; n_bins],
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin of a value; internal edges belong to the upper bin, values
    /// outside the range go to the first or last bin.
    pub fn bin_of(&self, value: f64) -> usize {
        bin_of(&self.edges, value)
    }

    pub fn add(&mut self, value: f64) {
        if value.is_finite() {
            let b = self.bin_of(value);
            self.counts[b] += 1;
        }
    }

    pub fn extend(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.add(v);
        }
    }

    /// Add counts of a histogram with identical bins.
    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if self.edges != other.edges {
            return Err(Error::invalid(
                "cannot merge histograms with different bins",
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Normalized frequency per bin.
    pub fn frequencies(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }
}

fn bin_of(edges: &[f64], value: f64) -> usize {
    let n_bins = edges.len() - 1;
    edges[1..n_bins].partition_point(|&e| e <= value)
}

/// Per-bin loss weights `clip((F * N_bins)^-1, 0.2, 5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightTable {
    pub n_bins: usize,
    pub edges: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightTable {
    pub fn from_histogram(hist: &Histogram) -> Result<Self> {
        let total = hist.total();
        if total == 0 {
            return Err(Error::invalid(
                "weight table needs at least one valid value",
            ));
        }
        let n = hist.n_bins() as f64;
        // total / (count * n) equals (F * n)^-1 and stays exact for uniform counts
        let weights = hist
            .counts()
            .iter()
            .map(|&c| (total as f64 / (c as f64 * n)).clamp(MIN_WEIGHT, MAX_WEIGHT))
            .collect();
        Ok(Self {
            n_bins: hist.n_bins(),
            edges: hist.edges().to_vec(),
            weights,
        })
    }

    /// Every bin weighted 1.
    pub fn uniform(n_bins: usize, lo: f64, hi: f64) -> Result<Self> {
        let hist = Histogram::new(n_bins, lo, hi)?;
        Ok(Self {
            n_bins,
            edges: hist.edges().to_vec(),
            weights: vec![1.0; n_bins],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0
            || self.edges.len() != self.n_bins + 1
            || self.weights.len() != self.n_bins
        {
            return Err(Error::invalid("weight table sizes are inconsistent"));
        }
        if self.edges.windows(2).any(|e| !(e[0] < e[1])) {
            return Err(Error::invalid("weight table edges must increase"));
        }
        Ok(())
    }

    pub fn weight(&self, value: f64) -> f64 {
        self.weights[bin_of(&self.edges, value)]
    }
}

/// Histogram `values` over `[lo, hi)` into `n_bins` and derive the weights.
pub fn build_weight_table(
    values: impl IntoIterator<Item = f64>,
    n_bins: usize,
    range: (f64, f64),
) -> Result<WeightTable> {
    let mut hist = Histogram::new(n_bins, range.0, range.1)?;
    hist.extend(values);
    WeightTable::from_histogram(&hist)
}

/// Weighted MSE over jointly valid cells, weight looked up from the target value.
pub fn wmse_loss(target: &Layer, prediction: &Layer, table: &WeightTable) -> Result<f64> {
    if !target.same_shape(prediction) {
        return Err(Error::invalid("target and prediction shapes differ"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, t) in target.iter_valid() {
        if let Some(p) = prediction.at(i) {
            let d = t - p;
            sum += table.weight(t) * d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(sum / count as f64)
}

/// Training objective: traversability loss plus elevation loss.
pub fn final_loss(
    traversability: (&Layer, &Layer, &WeightTable),
    elevation: (&Layer, &Layer, &WeightTable),
) -> Result<f64> {
    Ok(
        wmse_loss(traversability.0, traversability.1, traversability.2)?
            + wmse_loss(elevation.0, elevation.1, elevation.2)?,
    )
}
