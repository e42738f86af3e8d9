//! Brute-force reference implementations shared by the integration tests.
//! Each one is written as plainly as possible, independent of the library
//! code paths it checks.
#![allow(dead_code)]

use hbev_core::gridmap::{ELEVATION, RELIABILITY, TRAVERSABILITY};
use hbev_core::hindsight::FusionPolicy;
use hbev_core::{GridMap, GridSpec, Layer, Pose2};
use nalgebra::Vector2;
use rand::Rng;

/// Cell of a map-local point, or `None` off the grid.
pub fn cell_of(spec: &GridSpec, x: f64, y: f64) -> Option<(usize, usize)> {
    let r = (x / spec.resolution).floor() + (spec.height_cells / 2) as f64;
    let c = (y / spec.resolution).floor() + (spec.width_cells / 2) as f64;
    let inside =
        r >= 0.0 && c >= 0.0 && r < spec.height_cells as f64 && c < spec.width_cells as f64;
    inside.then_some((r as usize, c as usize))
}

pub fn center_of(spec: &GridSpec, row: usize, col: usize) -> (f64, f64) {
    let x = (row as f64 - (spec.height_cells / 2) as f64 + 0.5) * spec.resolution;
    let y = (col as f64 - (spec.width_cells / 2) as f64 + 0.5) * spec.resolution;
    (x, y)
}

/// Nearest-neighbor lookup of the source cell under a target cell, with
/// the target frame expressed in the source frame.
pub fn lookup(
    target: &GridSpec,
    source: &GridSpec,
    target_in_source: &Pose2,
    row: usize,
    col: usize,
) -> Option<(usize, usize)> {
    let (x, y) = center_of(target, row, col);
    let p = target_in_source.transform_point(&Vector2::new(x, y));
    cell_of(source, p.x, p.y)
}

fn value(map: &GridMap, layer: &str, cell: (usize, usize)) -> Option<f64> {
    let (v, ok) = map.layer(layer)?.get(cell.0, cell.1).ok()?;
    ok.then_some(v)
}

/// Per-cell hindsight fusion, one output cell at a time.
pub fn hindsight_oracle(maps: &[GridMap], reference: &GridSpec, policy: &FusionPolicy) -> GridMap {
    let mut order: Vec<usize> = (0..maps.len()).collect();
    // insertion sort: stable and obviously so
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && maps[order[j - 1]].timestamp > maps[order[j]].timestamp {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let (h, w) = (reference.height_cells, reference.width_cells);
    let mut elevation = Layer::new(h, w);
    let mut reliability = Layer::filled(h, w, 0.0);
    let mut traversability = Layer::new(h, w);
    for row in 0..h {
        for col in 0..w {
            let mut elev: Option<f64> = None;
            let mut rel = 0.0f64;
            let mut trav: Option<f64> = None;
            for &k in &order {
                let map = &maps[k];
                // through the odometry frame rather than a composed relative pose
                let (x, y) = center_of(reference, row, col);
                let world = reference.center_pose.transform_point(&Vector2::new(x, y));
                let local = map.spec.center_pose.inverse().transform_point(&world);
                let Some(cell) = cell_of(&map.spec, local.x, local.y) else {
                    continue;
                };
                let r = value(map, RELIABILITY, cell);
                if let Some(e) = value(map, ELEVATION, cell) {
                    elev = Some(elev.map_or(e, |m| m.min(e)));
                }
                if let Some(r) = r {
                    rel = rel.max(r);
                }
                if let Some(t) = value(map, TRAVERSABILITY, cell) {
                    if r.unwrap_or(0.0) >= policy.confidence_threshold {
                        trav = Some(t);
                    }
                }
            }
            if let Some(e) = elev {
                elevation.set(row, col, e).unwrap();
            }
            reliability.set(row, col, rel).unwrap();
            if let Some(t) = trav {
                traversability.set(row, col, t).unwrap();
            }
        }
    }
    let mut out = GridMap::new(*reference, 0.0);
    out.insert_layer(ELEVATION, elevation).unwrap();
    out.insert_layer(RELIABILITY, reliability).unwrap();
    out.insert_layer(TRAVERSABILITY, traversability).unwrap();
    out
}

/// Random per-timestep map: about 70 % valid cells per layer, reliability
/// in [0, 1], occasionally without a reliability layer.
pub fn random_map<R: Rng>(rng: &mut R, spec: GridSpec, timestamp: f64) -> GridMap {
    let (h, w) = (spec.height_cells, spec.width_cells);
    let mut map = GridMap::new(spec, timestamp);
    let with_reliability = rng.gen_bool(0.9);
    let fill = |rng: &mut R, lo: f64, hi: f64| {
        let mut l = Layer::new(h, w);
        for i in 0..h * w {
            if rng.gen_bool(0.7) {
                l.set_index(i, rng.gen_range(lo..hi));
            }
        }
        l
    };
    let e = fill(rng, -2.0, 2.0);
    let t = fill(rng, 0.0, 1.0);
    map.insert_layer(ELEVATION, e).unwrap();
    map.insert_layer(TRAVERSABILITY, t).unwrap();
    if with_reliability {
        let r = fill(rng, 0.0, 1.0);
        map.insert_layer(RELIABILITY, r).unwrap();
    }
    map
}

pub fn random_pose<R: Rng>(rng: &mut R, max_offset: f64) -> Pose2 {
    Pose2::new(
        rng.gen_range(-max_offset..max_offset),
        rng.gen_range(-max_offset..max_offset),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
}

/// Layer comparison on values and validity, bit for bit.
pub fn layers_identical(a: &Layer, b: &Layer) -> bool {
    a.same_shape(b)
        && a.validity() == b.validity()
        && a.values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn random_layer<R: Rng>(
    rng: &mut R,
    h: usize,
    w: usize,
    p_valid: f64,
    lo: f64,
    hi: f64,
) -> Layer {
    let mut l = Layer::new(h, w);
    for r in 0..h {
        for c in 0..w {
            if rng.gen_bool(p_valid) {
                l.set(r, c, rng.gen_range(lo..hi)).unwrap();
            }
        }
    }
    l
}

/// Naive metric sums over a double loop: (count, Σ|d|, Σd², Σw|d|, Σw d²).
pub fn naive_sums(
    target: &Layer,
    pred: &Layer,
    weight: Option<&Layer>,
) -> (usize, f64, f64, f64, f64) {
    let (mut n, mut a, mut s, mut wa, mut ws) = (0, 0.0, 0.0, 0.0, 0.0);
    for r in 0..target.height() {
        for c in 0..target.width() {
            let (t, tv) = target.get(r, c).unwrap();
            let (p, pv) = pred.get(r, c).unwrap();
            if !(tv && pv) {
                continue;
            }
            let d = t - p;
            let w = weight.map_or(1.0, |l| l.get(r, c).unwrap().0);
            n += 1;
            a += d.abs();
            s += d * d;
            wa += w * d.abs();
            ws += w * d * d;
        }
    }
    (n, a, s, wa, ws)
}

/// (tp, fp, fn, tn) over jointly valid cells of two binary layers.
pub fn naive_confusion(gt: &Layer, pred: &Layer) -> (u64, u64, u64, u64) {
    let mut m = [[0u64; 2]; 2];
    for r in 0..gt.height() {
        for c in 0..gt.width() {
            let (t, tv) = gt.get(r, c).unwrap();
            let (p, pv) = pred.get(r, c).unwrap();
            if tv && pv {
                m[(t == 1.0) as usize][(p == 1.0) as usize] += 1;
            }
        }
    }
    (m[1][1], m[0][1], m[1][0], m[0][0])
}

/// 5x5 median by collecting and fully sorting the valid neighborhood.
pub fn median_oracle(layer: &Layer) -> Layer {
    let (h, w) = (layer.height() as i64, layer.width() as i64);
    let mut out = Layer::new(layer.height(), layer.width());
    for r in 0..h {
        for c in 0..w {
            if !layer.get(r as usize, c as usize).unwrap().1 {
                continue;
            }
            let mut vals = Vec::new();
            for dr in -2..=2 {
                for dc in -2..=2 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && cc >= 0 && rr < h && cc < w {
                        let (v, ok) = layer.get(rr as usize, cc as usize).unwrap();
                        if ok {
                            vals.push(v);
                        }
                    }
                }
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.set(r as usize, c as usize, vals[(vals.len() - 1) / 2])
                .unwrap();
        }
    }
    out
}
