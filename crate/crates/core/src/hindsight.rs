//! Hindsight label generation.
//!
//! Per-timestep elevation, reliability and traversability maps collected
//! around a reference sample are moved into the reference frame and fused
//! cell by cell: elevation keeps the minimum, reliability the maximum, and
//! traversability the most recent value whose reliability clears a threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmap::{
    GridMap, GridSpec, Layer, Resampler, ELEVATION, OFF_SOURCE, RELIABILITY, TRAVERSABILITY,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionPolicy {
    /// Minimum reliability for a traversability value to be accepted.
    pub confidence_threshold: f64,
    /// Total width of the time window in seconds, centered on the reference.
    pub window: f64,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.5,
            window: 60.0,
        }
    }
}

impl FusionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::invalid(format!(
                "confidence threshold {} is outside [0, 1]",
                self.confidence_threshold
            )));
        }
        if !(self.window > 0.0) {
            return Err(Error::invalid("fusion window must be positive"));
        }
        Ok(())
    }
}

/// Which fusion rule a layer follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Elevation,
    Reliability,
    Traversability,
}

impl LayerKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            ELEVATION => Ok(Self::Elevation),
            RELIABILITY => Ok(Self::Reliability),
            TRAVERSABILITY => Ok(Self::Traversability),
            other => Err(Error::UnknownLayer(other.to_owned())),
        }
    }
}

/// Accumulated state of one output cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellState {
    pub value: f64,
    pub valid: bool,
    /// Timestamp of the last accepted measurement.
    pub latest_time: f64,
}

impl CellState {
    /// Initial state: unreliable, infinitely high, traversable.
    pub fn initial(kind: LayerKind) -> Self {
        match kind {
            // +inf is carried as f64::MAX behind an invalid flag
            LayerKind::Elevation => Self {
                value: f64::MAX,
                valid: false,
                latest_time: f64::NEG_INFINITY,
            },
            LayerKind::Reliability => Self {
                value: 0.0,
                valid: true,
                latest_time: f64::NEG_INFINITY,
            },
            LayerKind::Traversability => Self {
                value: 0.0,
                valid: false,
                latest_time: f64::NEG_INFINITY,
            },
        }
    }
}

/// A measurement of one cell from a map already moved into the reference frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncomingCell {
    pub value: f64,
    pub valid: bool,
    /// Reliability of the same cell in the same map (0 when unknown).
    pub reliability: f64,
    pub time: f64,
}

/// Fuse one incoming measurement into an accumulated cell.
#[inline]
pub fn fuse_cell(
    policy: &FusionPolicy,
    kind: LayerKind,
    acc: CellState,
    incoming: IncomingCell,
) -> CellState {
    if !incoming.valid {
        return acc;
    }
    match kind {
        LayerKind::Elevation => CellState {
            value: acc.value.min(incoming.value),
            valid: true,
            latest_time: acc.latest_time.max(incoming.time),
        },
        LayerKind::Reliability => CellState {
            value: acc.value.max(incoming.value),
            valid: true,
            latest_time: acc.latest_time.max(incoming.time),
        },
        LayerKind::Traversability => {
            if incoming.reliability >= policy.confidence_threshold
                && incoming.time >= acc.latest_time
            {
                CellState {
                    value: incoming.value,
                    valid: true,
                    latest_time: incoming.time,
                }
            } else {
                acc
            }
        }
    }
}

/// Layer-name version of [`fuse_cell`].
pub fn fuse_named_cell(
    policy: &FusionPolicy,
    layer: &str,
    acc: CellState,
    incoming: IncomingCell,
) -> Result<CellState> {
    Ok(fuse_cell(
        policy,
        LayerKind::from_name(layer)?,
        acc,
        incoming,
    ))
}

/// Indices of the timestamps within `window / 2` of `reference_time`, in
/// increasing time order (ties keep input order).
pub fn window_indices(timestamps: &[f64], reference_time: f64, window: f64) -> Vec<usize> {
    let half = window / 2.0;
    let mut idx: Vec<usize> = (0..timestamps.len())
        .filter(|&i| (timestamps[i] - reference_time).abs() <= half)
        .collect();
    idx.sort_by(|&a, &b| timestamps[a].total_cmp(&timestamps[b]));
    idx
}

/// Maps within `window / 2` of `reference_time`, sorted by increasing timestamp.
pub fn select_window(maps: &[GridMap], reference_time: f64, window: f64) -> Vec<&GridMap> {
    let times: Vec<f64> = maps.iter().map(|m| m.timestamp).collect();
    window_indices(&times, reference_time, window)
        .into_iter()
        .map(|i| &maps[i])
        .collect()
}

/// Streaming form of the hindsight fusion: feed maps in increasing time
/// order, then [`finish`](Self::finish).
///
/// Applies the same rules as [`fuse_cell`], with the per-layer state kept
/// in flat arrays.
#[derive(Clone, Debug)]
pub struct HindsightFusion {
    target: GridSpec,
    policy: FusionPolicy,
    elevation: Vec<f64>,
    elevation_valid: Vec<bool>,
    reliability: Vec<f64>,
    traversability: Vec<f64>,
    traversability_valid: Vec<bool>,
    traversability_time: Vec<f64>,
    latest_timestamp: Option<f64>,
}

type LayerView<'a> = Option<(&'a [f64], &'a [bool])>;

fn view<'a>(map: &'a GridMap, name: &str) -> LayerView<'a> {
    map.layer(name).map(|l| (l.values(), l.validity()))
}

/// `if pick { a } else { b }` without a branch.
#[inline(always)]
fn blend(pick: bool, a: f64, b: f64) -> f64 {
    let mask = (pick as u64).wrapping_neg();
    f64::from_bits((a.to_bits() & mask) | (b.to_bits() & !mask))
}

impl HindsightFusion {
    /// `target` fixes the output lattice and the reference pose.
    pub fn new(target: GridSpec, policy: FusionPolicy) -> Result<Self> {
        target.validate()?;
        policy.validate()?;
        let n = target.cell_count();
        let elevation = CellState::initial(LayerKind::Elevation);
        let reliability = CellState::initial(LayerKind::Reliability);
        let traversability = CellState::initial(LayerKind::Traversability);
        Ok(Self {
            target,
            policy,
            elevation: vec![elevation.value; n],
            elevation_valid: vec![elevation.valid; n],
            reliability: vec![reliability.value; n],
            traversability: vec![traversability.value; n],
            traversability_valid: vec![traversability.valid; n],
            traversability_time: vec![traversability.latest_time; n],
            latest_timestamp: None,
        })
    }

    pub fn target(&self) -> &GridSpec {
        &self.target
    }

    /// Move `map` into the reference frame and fuse every cell.
    pub fn fuse(&mut self, map: &GridMap) -> Result<()> {
        if !map.spec.same_shape(&self.target) {
            return Err(Error::invalid(format!(
                "map at t={} is {}x{}@{}, reference is {}x{}@{}",
                map.timestamp,
                map.spec.height_cells,
                map.spec.width_cells,
                map.spec.resolution,
                self.target.height_cells,
                self.target.width_cells,
                self.target.resolution
            )));
        }
        let target_to_source = map
            .spec
            .center_pose
            .inverse()
            .compose(&self.target.center_pose);
        let resampler = Resampler::new(&self.target, &map.spec, &target_to_source);
        let n = map.spec.cell_count();
        let views = [ELEVATION, RELIABILITY, TRAVERSABILITY].map(|name| view(map, name));
        let (missing_values, missing_valid) = if views.iter().any(Option::is_none) {
            (vec![0.0; n], vec![false; n])
        } else {
            (Vec::new(), Vec::new())
        };
        let layer = |k: usize| views[k].unwrap_or((&missing_values[..], &missing_valid[..]));
        let (ev, eok) = layer(0);
        let (rv, rok) = layer(1);
        let (tv, tok) = layer(2);
        let time = map.timestamp;
        let threshold = self.policy.confidence_threshold;
        let width = self.target.width_cells;
        let Self {
            elevation,
            elevation_valid,
            reliability,
            traversability,
            traversability_valid,
            traversability_time,
            ..
        } = self;

        // validity is data dependent and would defeat the branch predictor,
        // so invalid inputs are blended to the identity of each rule instead
        let mut sources = Vec::with_capacity(width);
        for row in 0..self.target.height_cells {
            resampler.row_sources(row, 0..width, &mut sources);
            let cells = row * width..(row + 1) * width;
            let state = elevation[cells.clone()]
                .iter_mut()
                .zip(&mut elevation_valid[cells.clone()]);
            for (&s, (e, e_valid)) in sources.iter().zip(state) {
                if s != OFF_SOURCE {
                    let ok = eok[s];
                    *e = e.min(blend(ok, ev[s], f64::INFINITY));
                    *e_valid |= ok;
                }
            }
            for (&s, r) in sources.iter().zip(&mut reliability[cells.clone()]) {
                if s != OFF_SOURCE {
                    *r = r.max(blend(rok[s], rv[s], f64::NEG_INFINITY));
                }
            }
            let state = traversability[cells.clone()]
                .iter_mut()
                .zip(&mut traversability_valid[cells.clone()])
                .zip(&mut traversability_time[cells]);
            for (&s, ((t, t_valid), t_time)) in sources.iter().zip(state) {
                if s != OFF_SOURCE {
                    let rel = blend(rok[s], rv[s], 0.0);
                    let accept = tok[s] & (rel >= threshold) & (time >= *t_time);
                    *t = blend(accept, tv[s], *t);
                    *t_valid |= accept;
                    *t_time = blend(accept, time, *t_time);
                }
            }
        }
        self.latest_timestamp = Some(self.latest_timestamp.map_or(time, |t: f64| t.max(time)));
        Ok(())
    }

    /// Output map, stamped with the latest fused timestamp (0 when nothing was fused).
    pub fn finish(self) -> GridMap {
        let (h, w) = (self.target.height_cells, self.target.width_cells);
        let n = self.target.cell_count();
        let mut out = GridMap::new(self.target, self.latest_timestamp.unwrap_or(0.0));
        for (name, values, valid) in [
            (ELEVATION, self.elevation, self.elevation_valid),
            (RELIABILITY, self.reliability, vec![true; n]),
            (
                TRAVERSABILITY,
                self.traversability,
                self.traversability_valid,
            ),
        ] {
            let layer =
                Layer::from_parts(h, w, values, valid).expect("accumulator matches target shape");
            out.insert_layer(name, layer)
                .expect("accumulator matches target shape");
        }
        out
    }
}

/// Fuse `maps` into pseudo ground truth on the `reference` lattice.
///
/// Maps are sorted by increasing timestamp first (stable for ties), so
/// among equal timestamps the later map in `maps` wins for traversability.
pub fn compute_hindsight(
    maps: &[GridMap],
    reference: &GridSpec,
    policy: &FusionPolicy,
) -> Result<GridMap> {
    let mut order: Vec<&GridMap> = maps.iter().collect();
    order.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let mut fusion = HindsightFusion::new(*reference, *policy)?;
    for map in order {
        fusion.fuse(map)?;
    }
    Ok(fusion.finish())
}
