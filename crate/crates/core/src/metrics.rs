//! Evaluation of predicted grid maps against (pseudo) ground truth.
//!
//! All metrics use joint validity: a cell contributes only if it is valid in
//! both the target and the prediction. Sums and counts are accumulated
//! exactly so per-sample results merge into dataset-level reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::gridmap::{GridMap, GridSpec, Layer, ELEVATION, RELIABILITY, TRAVERSABILITY};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Traversability at or above this value is a hazard.
    pub fatal_threshold: f64,
    /// Width of the distance bins in meters.
    pub bin_width: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fatal_threshold: 0.9,
            bin_width: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fatal_threshold) {
            return Err(Error::invalid("fatal threshold must lie in [0, 1]"));
        }
        if !(self.bin_width > 0.0) {
            return Err(Error::invalid("distance bin width must be positive"));
        }
        Ok(())
    }
}

/// Exact running sums behind MAE/MSE/WMAE/WMSE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSums {
    pub count: u64,
    pub sum_abs: f64,
    pub sum_sq: f64,
    pub sum_weighted_abs: f64,
    pub sum_weighted_sq: f64,
    /// Counted cells that had no reliability weight.
    pub unweighted: u64,
}

impl ErrorSums {
    #[inline]
    pub fn add(&mut self, target: f64, prediction: f64, weight: Option<f64>) {
        let d = target - prediction;
        self.count += 1;
        self.sum_abs += d.abs();
        self.sum_sq += d * d;
        match weight {
            Some(c) => {
                self.sum_weighted_abs += c * d.abs();
                self.sum_weighted_sq += c * d * d;
            }
            None => self.unweighted += 1,
        }
    }

    pub fn merge(&mut self, other: &ErrorSums) {
        self.count += other.count;
        self.sum_abs += other.sum_abs;
        self.sum_sq += other.sum_sq;
        self.sum_weighted_abs += other.sum_weighted_abs;
        self.sum_weighted_sq += other.sum_weighted_sq;
        self.unweighted += other.unweighted;
    }

    fn mean(&self, sum: f64) -> Option<f64> {
        (self.count > 0).then(|| sum / self.count as f64)
    }

    fn weighted_mean(&self, sum: f64) -> Option<f64> {
        (self.unweighted == 0).then(|| self.mean(sum)).flatten()
    }

    pub fn metrics(&self) -> Option<ErrorMetrics> {
        Some(ErrorMetrics {
            cells: self.count,
            mae: self.mean(self.sum_abs)?,
            mse: self.mean(self.sum_sq)?,
            wmae: self.weighted_mean(self.sum_weighted_abs),
            wmse: self.weighted_mean(self.sum_weighted_sq),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub cells: u64,
    pub mae: f64,
    pub mse: f64,
    /// `None` when reliability was unavailable for some counted cell.
    pub wmae: Option<f64>,
    pub wmse: Option<f64>,
}

fn check_shapes(a: &Layer, b: &Layer) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "layer shapes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

fn layer_sums(
    target: &Layer,
    prediction: &Layer,
    reliability: Option<&Layer>,
) -> Result<ErrorSums> {
    check_shapes(target, prediction)?;
    if let Some(c) = reliability {
        check_shapes(target, c)?;
    }
    let mut sums = ErrorSums::default();
    for (i, t) in target.iter_valid() {
        if let Some(p) = prediction.at(i) {
            let weight = match reliability {
                Some(c) => Some(c.at(i).ok_or_else(|| {
                    Error::invalid(format!(
                        "reliability is invalid at cell {i} where the target is valid"
                    ))
                })?),
                None => None,
            };
            sums.add(t, p, weight);
        }
    }
    if sums.count == 0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(sums)
}

/// Mean absolute error over jointly valid cells.
pub fn mae(target: &Layer, prediction: &Layer) -> Result<f64> {
    let s = layer_sums(target, prediction, None)?;
    Ok(s.sum_abs / s.count as f64)
}

/// Mean squared error over jointly valid cells.
pub fn mse(target: &Layer, prediction: &Layer) -> Result<f64> {
    let s = layer_sums(target, prediction, None)?;
    Ok(s.sum_sq / s.count as f64)
}

/// Reliability-weighted MAE, normalized by the number of cells (not by the
/// sum of weights).
pub fn wmae(target: &Layer, prediction: &Layer, reliability: &Layer) -> Result<f64> {
    let s = layer_sums(target, prediction, Some(reliability))?;
    Ok(s.sum_weighted_abs / s.count as f64)
}

/// Reliability-weighted MSE, normalized by the number of cells.
pub fn wmse(target: &Layer, prediction: &Layer, reliability: &Layer) -> Result<f64> {
    let s = layer_sums(target, prediction, Some(reliability))?;
    Ok(s.sum_weighted_sq / s.count as f64)
}

/// Binary hazard layer (1 = hazard, 0 = safe); validity follows the input.
pub fn hazard_classify(traversability: &Layer, fatal_threshold: f64) -> Layer {
    traversability.map_valid(|v| if v >= fatal_threshold { 1.0 } else { 0.0 })
}

/// Confusion-matrix counts for hazard detection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    #[inline]
    pub fn add(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn prf(&self) -> Prf {
        let precision =
            (self.tp + self.fp > 0).then(|| self.tp as f64 / (self.tp + self.fp) as f64);
        let recall = (self.tp + self.fn_ > 0).then(|| self.tp as f64 / (self.tp + self.fn_) as f64);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        Prf {
            precision,
            recall,
            f1,
            confusion: *self,
        }
    }
}

/// Precision, recall and F1; `None` where undefined (no positives).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub confusion: Confusion,
}

/// Hazard detection scores of two binary layers over jointly valid cells.
pub fn hazard_prf(gt_binary: &Layer, pred_binary: &Layer) -> Result<Prf> {
    check_shapes(gt_binary, pred_binary)?;
    let mut confusion = Confusion::default();
    for (i, t) in gt_binary.iter_valid() {
        if let Some(p) = pred_binary.at(i) {
            confusion.add(t != 0.0, p != 0.0);
        }
    }
    Ok(confusion.prf())
}

/// Metrics of one 1-meter (or `bin_width`) ring around the vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub bin: usize,
    pub lower_m: f64,
    pub upper_m: f64,
    /// Jointly valid traversability cells in the ring.
    pub cells: u64,
    pub hazard: Prf,
    pub traversability_mse: Option<f64>,
    pub elevation_mae: Option<f64>,
}

/// Distance bin of a cell, by lattice distance from the center cell.
pub fn distance_bin(spec: &GridSpec, row: usize, col: usize, bin_width: f64) -> usize {
    (spec.distance_from_center(row, col) / bin_width).floor() as usize
}

fn bin_count(spec: &GridSpec, bin_width: f64) -> usize {
    let corners = [
        (0, 0),
        (0, spec.width_cells - 1),
        (spec.height_cells - 1, 0),
        (spec.height_cells - 1, spec.width_cells - 1),
    ];
    corners
        .iter()
        .map(|&(r, c)| distance_bin(spec, r, c, bin_width))
        .max()
        .unwrap_or(0)
        + 1
}

#[derive(Clone, Debug, Default, PartialEq)]
struct GroupAcc {
    elevation: ErrorSums,
    traversability: ErrorSums,
    hazard: Confusion,
}

impl GroupAcc {
    fn merge(&mut self, other: &GroupAcc) {
        self.elevation.merge(&other.elevation);
        self.traversability.merge(&other.traversability);
        self.hazard.merge(&other.hazard);
    }

    fn report(&self) -> GroupMetrics {
        GroupMetrics {
            elevation: self.elevation.metrics(),
            traversability: self.traversability.metrics(),
            hazard: self.hazard.prf(),
        }
    }
}

/// Metrics of one subset of cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub elevation: Option<ErrorMetrics>,
    pub traversability: Option<ErrorMetrics>,
    pub hazard: Prf,
}

/// Cells with / without a registered LiDAR return, and all cells together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub observed: GroupMetrics,
    pub unobserved: GroupMetrics,
    pub combined: GroupMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: u64,
    pub config: EvalConfig,
    pub elevation: Option<ErrorMetrics>,
    pub traversability: Option<ErrorMetrics>,
    pub hazard: Prf,
    pub distance_bins: Vec<DistanceBin>,
    /// Present when point clouds were supplied for every sample.
    pub split: Option<SplitReport>,
}

/// Dataset-level accumulation of every metric.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalAccumulator {
    config: EvalConfig,
    samples: u64,
    samples_with_cloud: u64,
    combined: GroupAcc,
    observed: GroupAcc,
    unobserved: GroupAcc,
    bins: Vec<GroupAcc>,
}

fn optional_layer<'a>(map: &'a GridMap, name: &str) -> Result<Option<&'a Layer>> {
    match map.layer(name) {
        Some(l) if l.height() == map.spec.height_cells && l.width() == map.spec.width_cells => {
            Ok(Some(l))
        }
        Some(_) => Err(Error::invalid(format!(
            "layer `{name}` does not match its map"
        ))),
        None => Ok(None),
    }
}

/// Cells receiving at least one point of `cloud` (given in the map frame).
pub fn observed_mask(spec: &GridSpec, cloud: &PointCloud) -> Vec<bool> {
    let mut mask = vec![false; spec.cell_count()];
    for p in &cloud.points {
        if let Some((r, c)) = spec.world_to_cell(p.x, p.y) {
            mask[spec.index(r, c)] = true;
        }
    }
    mask
}

impl EvalAccumulator {
    pub fn new(config: EvalConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            samples: 0,
            samples_with_cloud: 0,
            combined: GroupAcc::default(),
            observed: GroupAcc::default(),
            unobserved: GroupAcc::default(),
            bins: Vec::new(),
        })
    }

    /// Add one ground-truth / prediction pair; `cloud` (in the map frame)
    /// enables the observed/unobserved split.
    pub fn add(&mut self, gt: &GridMap, pred: &GridMap, cloud: Option<&PointCloud>) -> Result<()> {
        if !gt.spec.same_shape(&pred.spec) {
            return Err(Error::invalid(
                "ground truth and prediction grids differ in shape",
            ));
        }
        let spec = gt.spec;
        let gt_elev = optional_layer(gt, ELEVATION)?;
        let pred_elev = optional_layer(pred, ELEVATION)?;
        let gt_trav = optional_layer(gt, TRAVERSABILITY)?;
        let pred_trav = optional_layer(pred, TRAVERSABILITY)?;
        let reliability = optional_layer(gt, RELIABILITY)?;
        let mask = cloud.map(|c| observed_mask(&spec, c));

        let needed = bin_count(&spec, self.config.bin_width);
        if self.bins.len() < needed {
            self.bins.resize(needed, GroupAcc::default());
        }
        let threshold = self.config.fatal_threshold;
        let mut sample = GroupAcc::default();
        let mut observed = GroupAcc::default();
        let mut unobserved = GroupAcc::default();

        for row in 0..spec.height_cells {
            for col in 0..spec.width_cells {
                let i = spec.index(row, col);
                let bin = distance_bin(&spec, row, col, self.config.bin_width);
                let weight = reliability.and_then(|c| c.at(i));
                let split = mask
                    .as_ref()
                    .map(|m| if m[i] { &mut observed } else { &mut unobserved });
                let mut touched: [Option<&mut GroupAcc>; 3] =
                    [Some(&mut sample), Some(&mut self.bins[bin]), split];

                if let (Some(t), Some(p)) = (
                    gt_elev.and_then(|l| l.at(i)),
                    pred_elev.and_then(|l| l.at(i)),
                ) {
                    for acc in touched.iter_mut().flatten() {
                        acc.elevation.add(t, p, weight);
                    }
                }
                if let (Some(t), Some(p)) = (
                    gt_trav.and_then(|l| l.at(i)),
                    pred_trav.and_then(|l| l.at(i)),
                ) {
                    for acc in touched.iter_mut().flatten() {
                        acc.traversability.add(t, p, weight);
                        acc.hazard.add(t >= threshold, p >= threshold);
                    }
                }
            }
        }
        self.combined.merge(&sample);
        if mask.is_some() {
            self.observed.merge(&observed);
            self.unobserved.merge(&unobserved);
            self.samples_with_cloud += 1;
        }
        self.samples += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &EvalAccumulator) -> Result<()> {
        if self.config != other.config {
            return Err(Error::invalid(
                "cannot merge evaluations with different configurations",
            ));
        }
        self.samples += other.samples;
        self.samples_with_cloud += other.samples_with_cloud;
        self.combined.merge(&other.combined);
        self.observed.merge(&other.observed);
        self.unobserved.merge(&other.unobserved);
        if self.bins.len() < other.bins.len() {
            self.bins.resize(other.bins.len(), GroupAcc::default());
        }
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.merge(b);
        }
        Ok(())
    }

    pub fn report(&self) -> EvalReport {
        let w = self.config.bin_width;
        let distance_bins = self
            .bins
            .iter()
            .enumerate()
            .map(|(bin, acc)| DistanceBin {
                bin,
                lower_m: bin as f64 * w,
                upper_m: (bin + 1) as f64 * w,
                cells: acc.traversability.count,
                hazard: acc.hazard.prf(),
                traversability_mse: acc.traversability.metrics().map(|m| m.mse),
                elevation_mae: acc.elevation.metrics().map(|m| m.mae),
            })
            .collect();
        let split =
            (self.samples > 0 && self.samples_with_cloud == self.samples).then(|| SplitReport {
                observed: self.observed.report(),
                unobserved: self.unobserved.report(),
                combined: self.combined.report(),
            });
        EvalReport {
            samples: self.samples,
            config: self.config,
            elevation: self.combined.elevation.metrics(),
            traversability: self.combined.traversability.metrics(),
            hazard: self.combined.hazard.prf(),
            distance_bins,
            split,
        }
    }
}

/// Per-distance-bin hazard scores, traversability MSE and elevation MAE.
pub fn distance_binned(
    gt: &GridMap,
    pred: &GridMap,
    config: &EvalConfig,
) -> Result<Vec<DistanceBin>> {
    let mut acc = EvalAccumulator::new(*config)?;
    acc.add(gt, pred, None)?;
    Ok(acc.report().distance_bins)
}

/// Metrics on cells with a LiDAR return, without one, and on all cells.
pub fn split_observed(
    gt: &GridMap,
    pred: &GridMap,
    cloud: &PointCloud,
    config: &EvalConfig,
) -> Result<SplitReport> {
    let mut acc = EvalAccumulator::new(*config)?;
    acc.add(gt, pred, Some(cloud))?;
    Ok(acc.report().split.expect("cloud supplied"))
}

/// Full report for a single pair.
pub fn evaluate_pair(
    gt: &GridMap,
    pred: &GridMap,
    cloud: Option<&PointCloud>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let mut acc = EvalAccumulator::new(*config)?;
    acc.add(gt, pred, cloud)?;
    Ok(acc.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    fn layer(values: &[f64]) -> Layer {
        Layer::from_parts(1, values.len(), values.to_vec(), vec![true; values.len()]).unwrap()
    }

    #[test]
    fn hand_arithmetic() {
        let t = layer(&[1.0, 3.0]);
        let p = layer(&[2.0, 5.0]);
        assert_eq!(mae(&t, &p).unwrap(), 1.5);
        assert_eq!(mse(&t, &p).unwrap(), 2.5);
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        assert_eq!(mse(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn reliability_extremes() {
        let t = layer(&[1.0, 3.0, -2.0]);
        let p = layer(&[2.0, 5.0, 0.5]);
        let ones = layer(&[1.0; 3]);
        let zeros = layer(&[0.0; 3]);
        assert_eq!(wmae(&t, &p, &ones).unwrap(), mae(&t, &p).unwrap());
        assert_eq!(wmse(&t, &p, &ones).unwrap(), mse(&t, &p).unwrap());
        assert_eq!(wmae(&t, &p, &zeros).unwrap(), 0.0);
        assert_eq!(wmse(&t, &p, &zeros).unwrap(), 0.0);
    }

    #[test]
    fn missing_reliability_is_rejected() {
        let t = layer(&[1.0, 3.0]);
        let mut c = layer(&[1.0, 1.0]);
        c.invalidate(0, 1).unwrap();
        assert!(wmae(&t, &t, &c).is_err());
    }

    #[test]
    fn no_joint_cells_is_undefined() {
        let t = layer(&[1.0]);
        let p = Layer::new(1, 1);
        assert!(matches!(mae(&t, &p), Err(Error::UndefinedMetric)));
        assert!(matches!(mse(&p, &t), Err(Error::UndefinedMetric)));
    }

    #[test]
    fn hazard_thresholds() {
        let l = layer(&[0.2, 0.9, 0.5]);
        assert_eq!(hazard_classify(&l, 0.5).values(), &[0.0, 1.0, 1.0]);
        assert!(hazard_classify(&l, 0.0).values().iter().all(|&v| v == 1.0));
        assert!(hazard_classify(&l, 0.9 + 1e-12)
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn confusion_arithmetic() {
        let c = Confusion {
            tp: 3,
            fp: 1,
            fn_: 2,
            tn: 7,
        };
        let prf = c.prf();
        assert_eq!(prf.precision, Some(0.75));
        assert_eq!(prf.recall, Some(0.6));
        assert!((prf.f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let none = Confusion {
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 4,
        }
        .prf();
        assert_eq!((none.precision, none.recall, none.f1), (None, None, None));
    }

    #[test]
    fn perfect_hazard_detection() {
        let gt = layer(&[1.0, 0.0, 1.0]);
        let prf = hazard_prf(&gt, &gt).unwrap();
        assert_eq!(
            (prf.precision, prf.recall, prf.f1),
            (Some(1.0), Some(1.0), Some(1.0))
        );
    }

    fn map(spec: GridSpec, trav: f64) -> GridMap {
        let mut m = GridMap::new(spec, 0.0);
        m.insert_layer(
            TRAVERSABILITY,
            Layer::filled(spec.height_cells, spec.width_cells, trav),
        )
        .unwrap();
        m
    }

    #[test]
    fn distance_bins() {
        let spec = GridSpec::new(501, 501, 0.1).unwrap();
        assert_eq!(distance_bin(&spec, 250, 250, 1.0), 0);
        // 253 cells straight ahead = 25.3 m
        let far = GridSpec::new(600, 600, 0.1).unwrap();
        assert_eq!(distance_bin(&far, 300 + 253, 300, 1.0), 25);
        let bins =
            distance_binned(&map(spec, 0.2), &map(spec, 0.4), &EvalConfig::default()).unwrap();
        let total: u64 = bins.iter().map(|b| b.cells).sum();
        assert_eq!(total, 501 * 501);
        assert!(bins
            .iter()
            .all(|b| b.cells == 0 || (b.traversability_mse.unwrap() - 0.04).abs() < 1e-12));
    }

    #[test]
    fn split_extremes() {
        let spec = GridSpec::new(4, 4, 1.0).unwrap();
        let gt = map(spec, 0.95);
        let pred = map(spec, 0.5);
        let empty =
            split_observed(&gt, &pred, &PointCloud::new(0.0, 0), &EvalConfig::default()).unwrap();
        assert!(empty.observed.traversability.is_none());
        assert_eq!(empty.unobserved.traversability.unwrap().cells, 16);
        let mut cloud = PointCloud::new(0.0, 0);
        for r in 0..4 {
            for c in 0..4 {
                let center = spec.cell_center(r, c);
                cloud.push(Point3::new(center.x, center.y, 0.0), 0.0);
            }
        }
        let full = split_observed(&gt, &pred, &cloud, &EvalConfig::default()).unwrap();
        assert!(full.unobserved.traversability.is_none());
        assert_eq!(full.observed, full.combined);
    }
}
