//! Multi-layer, vehicle-centric grid maps.
//!
//! Cell `(row, col)` covers `[(row - H/2) * res, (row - H/2 + 1) * res)` along
//! the `BG` x axis (vehicle forward) and the same along y (vehicle left) for
//! columns, so the vehicle origin is the lower corner of cell `(H/2, W/2)`.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose2;

pub const ELEVATION: &str = "elevation";
pub const TRAVERSABILITY: &str = "traversability";
pub const RELIABILITY: &str = "reliability";

/// Value stored in cells that hold no data.
pub const INVALID_SENTINEL: f64 = 0.0;

/// Geometry of a grid map: size, resolution and the pose of its frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub height_cells: usize,
    pub width_cells: usize,
    /// Meters per cell.
    pub resolution: f64,
    /// Pose of the map frame (`BG`) in the odometry frame.
    #[serde(default)]
    pub center_pose: Pose2,
}

impl GridSpec {
    pub fn new(height_cells: usize, width_cells: usize, resolution: f64) -> Result<Self> {
        let spec = Self {
            height_cells,
            width_cells,
            resolution,
            center_pose: Pose2::identity(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 100 m x 100 m at 0.2 m.
    pub fn default_vehicle_map() -> Self {
        Self {
            height_cells: 500,
            width_cells: 500,
            resolution: 0.2,
            center_pose: Pose2::identity(),
        }
    }

    pub fn with_pose(mut self, pose: Pose2) -> Self {
        self.center_pose = pose;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.height_cells == 0 || self.width_cells == 0 {
            return Err(Error::invalid("grid dimensions must be at least 1x1"));
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.height_cells * self.width_cells
    }

    pub fn center_cell(&self) -> (usize, usize) {
        (self.height_cells / 2, self.width_cells / 2)
    }

    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.height_cells == other.height_cells
            && self.width_cells == other.width_cells
            && self.resolution == other.resolution
    }

    /// Half the cells per axis at twice the cell size, same extent and pose.
    pub fn half_resolution(&self) -> GridSpec {
        GridSpec {
            height_cells: (self.height_cells / 2).max(1),
            width_cells: (self.width_cells / 2).max(1),
            resolution: self.resolution * 2.0,
            center_pose: self.center_pose,
        }
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width_cells + col
    }

    /// Cell containing a point given in the map frame, or `None` off the map.
    #[inline]
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let row = quantize(x, self.resolution, self.height_cells)?;
        let col = quantize(y, self.resolution, self.width_cells)?;
        Some((row, col))
    }

    /// Center of a cell in the map frame.
    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> Vector2<f64> {
        Vector2::new(
            axis_center(row, self.height_cells, self.resolution),
            axis_center(col, self.width_cells, self.resolution),
        )
    }

    /// Distance in meters between a cell and the center cell, on the lattice.
    pub fn distance_from_center(&self, row: usize, col: usize) -> f64 {
        let (cr, cc) = self.center_cell();
        let dr = row as f64 - cr as f64;
        let dc = col as f64 - cc as f64;
        dr.hypot(dc) * self.resolution
    }
}

#[inline]
pub(crate) fn quantize(v: f64, resolution: f64, cells: usize) -> Option<usize> {
    let idx = (v / resolution).floor() + (cells / 2) as f64;
    if idx >= 0.0 && idx < cells as f64 {
        Some(idx as usize)
    } else {
        None
    }
}

#[inline]
fn axis_center(idx: usize, cells: usize, resolution: f64) -> f64 {
    (idx as f64 - (cells / 2) as f64 + 0.5) * resolution
}

/// One layer of cell values with its validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    height: usize,
    width: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl Layer {
    /// All cells invalid.
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![INVALID_SENTINEL; height * width],
            valid: vec![false; height * width],
        }
    }

    /// All cells valid and set to `value`.
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
            valid: vec![true; height * width],
        }
    }

    pub fn from_parts(
        height: usize,
        width: usize,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = height * width;
        if values.len() != n || valid.len() != n {
            return Err(Error::invalid(format!(
                "layer of {height}x{width} needs {n} cells, got {} values / {} flags",
                values.len(),
                valid.len()
            )));
        }
        let values = values
            .into_iter()
            .zip(&valid)
            .map(|(v, &ok)| if ok { v } else { INVALID_SENTINEL })
            .collect();
        Ok(Self {
            height,
            width,
            values,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
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

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn same_shape(&self, other: &Layer) -> bool {
        self.height == other.height && self.width == other.width
    }

    fn check(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.height || col >= self.width {
            return Err(Error::OutOfBounds {
                row,
                col,
                height: self.height,
                width: self.width,
            });
        }
        Ok(row * self.width + col)
    }

    pub fn get(&self, row: usize, col: usize) -> Result<(f64, bool)> {
        let i = self.check(row, col)?;
        Ok((self.values[i], self.valid[i]))
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        let i = self.check(row, col)?;
        self.set_index(i, value);
        Ok(())
    }

    pub fn invalidate(&mut self, row: usize, col: usize) -> Result<()> {
        let i = self.check(row, col)?;
        self.invalidate_index(i);
        Ok(())
    }

    /// Value at a flat index if valid.
    #[inline]
    pub fn at(&self, index: usize) -> Option<f64> {
        if self.valid[index] {
            Some(self.values[index])
        } else {
            None
        }
    }

    #[inline]
    pub fn set_index(&mut self, index: usize, value: f64) {
        self.values[index] = value;
        self.valid[index] = true;
    }

    #[inline]
    pub fn invalidate_index(&mut self, index: usize) {
        self.values[index] = INVALID_SENTINEL;
        self.valid[index] = false;
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// `(flat index, value)` of every valid cell.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter_map(|(i, (&v, &ok))| ok.then_some((i, v)))
    }

    /// Copy with every invalid cell made valid and set to `value`.
    pub fn fill_invalid(&self, value: f64) -> Layer {
        Layer {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&self.valid)
                .map(|(&v, &ok)| if ok { v } else { value })
                .collect(),
            valid: vec![true; self.values.len()],
        }
    }

    /// Apply `f` to every valid value.
    pub fn map_valid(&self, f: impl Fn(f64) -> f64) -> Layer {
        Layer {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&self.valid)
                .map(|(&v, &ok)| if ok { f(v) } else { INVALID_SENTINEL })
                .collect(),
            valid: self.valid.clone(),
        }
    }
}

/// Named layers sharing one [`GridSpec`], stamped with a dataset time.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    pub spec: GridSpec,
    pub timestamp: f64,
    layers: BTreeMap<String, Layer>,
}

impl GridMap {
    pub fn new(spec: GridSpec, timestamp: f64) -> Self {
        Self {
            spec,
            timestamp,
            layers: BTreeMap::new(),
        }
    }

    /// Map with the given layers, all invalid.
    pub fn with_layers<'a>(
        spec: GridSpec,
        timestamp: f64,
        names: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let mut map = Self::new(spec, timestamp);
        for name in names {
            map.add_layer(name);
        }
        map
    }

    /// Add an all-invalid layer (or return the existing one).
    pub fn add_layer(&mut self, name: &str) -> &mut Layer {
        let (h, w) = (self.spec.height_cells, self.spec.width_cells);
        self.layers
            .entry(name.to_owned())
            .or_insert_with(|| Layer::new(h, w))
    }

    pub fn insert_layer(&mut self, name: &str, layer: Layer) -> Result<()> {
        if layer.height != self.spec.height_cells || layer.width != self.spec.width_cells {
            return Err(Error::invalid(format!(
                "layer `{name}` is {}x{}, map is {}x{}",
                layer.height, layer.width, self.spec.height_cells, self.spec.width_cells
            )));
        }
        self.layers.insert(name.to_owned(), layer);
        Ok(())
    }

    pub fn remove_layer(&mut self, name: &str) -> Option<Layer> {
        self.layers.remove(name)
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.get(name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer> {
        self.layers.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Layer> {
        self.layer(name)
            .ok_or_else(|| Error::UnknownLayer(name.to_owned()))
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Layer)> {
        self.layers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get_cell(&self, layer: &str, row: usize, col: usize) -> Result<(f64, bool)> {
        self.require(layer)?.get(row, col)
    }

    pub fn set_cell(&mut self, layer: &str, row: usize, col: usize, value: f64) -> Result<()> {
        self.layers
            .get_mut(layer)
            .ok_or_else(|| Error::UnknownLayer(layer.to_owned()))?
            .set(row, col, value)
    }
}

/// Maps cells of a target lattice onto the nearest cell of a source lattice.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Resampler {
    cos: f64,
    sin: f64,
    tx: f64,
    ty: f64,
    target_h: usize,
    target_w: usize,
    target_res: f64,
    source_h: usize,
    source_w: usize,
    source_res: f64,
}

impl Resampler {
    /// `target_to_source` expresses the target frame in the source frame.
    pub(crate) fn new(target: &GridSpec, source: &GridSpec, target_to_source: &Pose2) -> Self {
        let (sin, cos) = target_to_source.yaw().sin_cos();
        Self {
            cos,
            sin,
            tx: target_to_source.x(),
            ty: target_to_source.y(),
            target_h: target.height_cells,
            target_w: target.width_cells,
            target_res: target.resolution,
            source_h: source.height_cells,
            source_w: source.width_cells,
            source_res: source.resolution,
        }
    }

    /// Flat source index for every target row, `None` where it falls off the source.
    pub(crate) fn for_each_row(&self, row: usize, mut f: impl FnMut(usize, Option<usize>)) {
        let mut sources = Vec::new();
        self.row_sources(row, 0..self.target_w, &mut sources);
        for (col, &s) in sources.iter().enumerate() {
            f(col, (s != OFF_SOURCE).then_some(s));
        }
    }

    /// Fills `out` with one flat source index per target column of `row` in `cols`,
    /// [`OFF_SOURCE`] where the cell center falls off the source.
    ///
    /// Agrees with [`quantize`] on both axes but avoids its libm `floor`
    /// call, which dominates when fusing many large maps.
    pub(crate) fn row_sources(&self, row: usize, cols: Range<usize>, out: &mut Vec<usize>) {
        let xt = axis_center(row, self.target_h, self.target_res);
        let bx = self.cos * xt + self.tx;
        let by = self.sin * xt + self.ty;
        let (half_h, half_w) = ((self.source_h / 2) as f64, (self.source_w / 2) as f64);
        let (top_h, top_w) = (self.source_h as f64 - half_h, self.source_w as f64 - half_w);
        out.clear();
        out.extend(cols.map(|col| {
            let yt = axis_center(col, self.target_w, self.target_res);
            let qr = (bx - self.sin * yt) / self.source_res;
            let qc = (by + self.cos * yt) / self.source_res;
            if (qr >= -half_h) & (qr < top_h) & (qc >= -half_w) & (qc < top_w) {
                let r = (floor_index(qr) + half_h as i64) as usize;
                let c = (floor_index(qc) + half_w as i64) as usize;
                r * self.source_w + c
            } else {
                OFF_SOURCE
            }
        }));
    }
}

pub(crate) const OFF_SOURCE: usize = usize::MAX;

/// `floor(q)` for `q` well within `i64` range.
#[inline]
fn floor_index(q: f64) -> i64 {
    let t = q as i64;
    t - ((t as f64) > q) as i64
}

/// Nearest-neighbor resample of every layer into a new frame.
///
/// `relative_pose` is the pose of the source map's frame expressed in the
/// target frame. Target cells whose center falls outside the source become
/// invalid.
pub fn transform_grid(map: &GridMap, relative_pose: &Pose2) -> GridMap {
    let target_to_source = relative_pose.inverse();
    let spec = GridSpec {
        center_pose: map.spec.center_pose.compose(&target_to_source),
        ..map.spec
    };
    let resampler = Resampler::new(&spec, &map.spec, &target_to_source);
    let mut out = GridMap::new(spec, map.timestamp);
    for (name, src) in map.layers() {
        let mut dst = Layer::new(spec.height_cells, spec.width_cells);
        for row in 0..spec.height_cells {
            resampler.for_each_row(row, |col, s| {
                if let Some(v) = s.and_then(|s| src.at(s)) {
                    dst.set_index(row * spec.width_cells + col, v);
                }
            });
        }
        out.layers.insert(name.to_owned(), dst);
    }
    out
}

/// Resample `map` onto the lattice of `target` (a spec posed in the odometry frame).
pub fn transform_to(map: &GridMap, target: &GridSpec) -> GridMap {
    // relative pose of the source frame in the target frame
    let relative = target.center_pose.inverse().compose(&map.spec.center_pose);
    let mut out = transform_grid(map, &relative);
    out.spec.center_pose = target.center_pose;
    out
}
