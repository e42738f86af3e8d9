use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use hbev_core::bevlift::{normalize_elevation, ELEVATION_SCALE};
use hbev_core::gridmap::{ELEVATION, TRAVERSABILITY};
use hbev_core::hindsight::{window_indices, FusionPolicy, HindsightFusion};
use hbev_core::io;
use hbev_core::postproc::{
    Histogram, WeightTable, NORMALIZED_ELEVATION_RANGE, TRAVERSABILITY_RANGE,
};
use hbev_core::{GridMap, GridSpec, Pose2};
use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{
    read_manifest, sample_file, select_by_travel, DatasetManifest, LabelEntry, LabelManifest,
    MANIFEST, MANIFEST_VERSION,
};

#[derive(Debug, Args)]
pub struct HindsightArgs {
    /// Dataset directory written by `gen-world`; one label per reference sample.
    #[arg(long, required_unless_present = "maps", conflicts_with_all = ["maps", "ref_time"])]
    pub dataset: Option<PathBuf>,
    /// Directory of per-timestep `.hbgm` maps; fuses a single label.
    #[arg(long, requires = "ref_time")]
    pub maps: Option<PathBuf>,
    /// Reference time for `--maps`; the map closest in time sets the output lattice.
    #[arg(long)]
    pub ref_time: Option<f64>,
    /// Window width in seconds, centered on the reference time.
    #[arg(long)]
    pub window: Option<f64>,
    /// Minimum reliability for accepting a traversability value.
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Output directory (`--dataset`) or map file (`--maps`).
    #[arg(long)]
    pub out: PathBuf,
    /// Override the minimum travel distance between reference samples.
    #[arg(long, conflicts_with = "maps")]
    pub min_travel: Option<f64>,
}

/// Loss weights derived from the produced labels.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelWeights {
    pub traversability: WeightTable,
    /// Over elevation relative to the vehicle, normalized and clipped.
    pub elevation: WeightTable,
}

pub fn run(args: &HindsightArgs, mut config: RunConfig) -> anyhow::Result<()> {
    if let Some(v) = args.min_travel {
        config.labels.min_travel = v;
    }
    if let Some(v) = args.window {
        config.fusion.window = v;
    }
    if let Some(v) = args.confidence {
        config.fusion.confidence_threshold = v;
    }
    config.validate()?;
    match (&args.dataset, &args.maps, args.ref_time) {
        (Some(dir), _, _) => run_dataset(dir, &args.out, &config),
        (None, Some(dir), Some(t)) => run_single(dir, t, &args.out, &config.fusion),
        _ => bail!("either --dataset or --maps with --ref-time is required"),
    }
}

/// Fuse the maps in `dir` within the window around `ref_time` into one label.
fn run_single(dir: &Path, ref_time: f64, out: &Path, policy: &FusionPolicy) -> anyhow::Result<()> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .with_context(|| format!("listing {}", dir.display()))?
            .path();
        if path.extension().is_some_and(|e| e == "hbgm") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no .hbgm maps in {}", dir.display());
    }
    let headers: Vec<(GridSpec, f64)> = files
        .par_iter()
        .map(|f| io::read_map_header(f))
        .collect::<Result<_, _>>()?;
    let times: Vec<f64> = headers.iter().map(|h| h.1).collect();
    // closest in time; the first file wins ties
    let reference = (0..files.len())
        .min_by(|&a, &b| {
            (times[a] - ref_time)
                .abs()
                .total_cmp(&(times[b] - ref_time).abs())
        })
        .expect("non-empty");
    let members = window_indices(&times, ref_time, policy.window);
    info!(
        "fusing {} of {} maps onto {}",
        members.len(),
        files.len(),
        files[reference].display()
    );
    let mut fusion = HindsightFusion::new(headers[reference].0, *policy)?;
    for chunk in members.chunks(rayon::current_num_threads().max(1) * 2) {
        let maps: Vec<GridMap> = chunk
            .par_iter()
            .map(|&i| io::read_map(&files[i]))
            .collect::<Result<_, _>>()?;
        for (map, &i) in maps.iter().zip(chunk) {
            fusion
                .fuse(map)
                .with_context(|| format!("fusing {}", files[i].display()))?;
        }
    }
    let mut label = fusion.finish();
    label.timestamp = ref_time;
    io::write_map(out, &label)?;
    Ok(())
}

fn run_dataset(dir: &Path, out: &Path, config: &RunConfig) -> anyhow::Result<()> {
    let dataset: DatasetManifest = read_manifest(dir)?;
    dataset.validate()?;
    let policy = config.fusion;

    let bg_poses = dataset
        .steps
        .iter()
        .map(|s| s.bg_pose.to_pose())
        .collect::<anyhow::Result<Vec<_>>>()?;
    let planar: Vec<Pose2> = bg_poses.iter().map(Pose2::from_pose3).collect();
    let times: Vec<f64> = dataset.steps.iter().map(|s| s.time).collect();
    let references = select_by_travel(&planar, config.labels.min_travel);
    info!(
        "{} of {} samples selected as references",
        references.len(),
        times.len()
    );

    let n_bins = config.labels.n_bins;
    let mut trav_hist = Histogram::new(n_bins, TRAVERSABILITY_RANGE.0, TRAVERSABILITY_RANGE.1)?;
    let mut elev_hist = Histogram::new(
        n_bins,
        NORMALIZED_ELEVATION_RANGE.0,
        NORMALIZED_ELEVATION_RANGE.1,
    )?;
    let mut labels = Vec::with_capacity(references.len());

    // sliding cache of loaded estimates covering the current batch's windows
    let half = policy.window / 2.0;
    let mut cache: VecDeque<GridMap> = VecDeque::new();
    let mut cache_start = 0usize;
    let batch = rayon::current_num_threads().max(1) * 2;
    for refs in references.chunks(batch) {
        let lo = times.partition_point(|&t| t < times[refs[0]] - half);
        let hi = times.partition_point(|&t| t <= times[*refs.last().expect("non-empty")] + half);
        while cache_start < lo && !cache.is_empty() {
            cache.pop_front();
            cache_start += 1;
        }
        if cache.is_empty() {
            cache_start = lo;
        }
        let loaded = cache_start + cache.len();
        let fresh: Vec<GridMap> = (loaded..hi)
            .into_par_iter()
            .map(|i| Ok(io::read_map(&dir.join(&dataset.steps[i].estimate))?))
            .collect::<anyhow::Result<_>>()?;
        cache.extend(fresh);
        let window_maps = cache.make_contiguous();
        let window_times = &times[cache_start..cache_start + window_maps.len()];

        let results: Vec<(LabelEntry, Histogram, Histogram)> = refs
            .par_iter()
            .map(|&r| -> anyhow::Result<_> {
                let reference = &window_maps[r - cache_start];
                let mut fusion = HindsightFusion::new(reference.spec, policy)?;
                let members = window_indices(window_times, times[r], policy.window);
                for &m in &members {
                    fusion.fuse(&window_maps[m])?;
                }
                let mut label = fusion.finish();
                label.timestamp = times[r];
                let entry = LabelEntry {
                    index: dataset.steps[r].index,
                    time: times[r],
                    fused: members.len(),
                    file: format!("labels/{}", sample_file(dataset.steps[r].index, "hbgm")),
                };
                io::write_map(&out.join(&entry.file), &label)?;
                debug!("label {} fused {} maps", entry.index, entry.fused);

                let mut th =
                    Histogram::new(n_bins, TRAVERSABILITY_RANGE.0, TRAVERSABILITY_RANGE.1)?;
                th.extend(label.require(TRAVERSABILITY)?.iter_valid().map(|(_, v)| v));
                let mut eh = Histogram::new(
                    n_bins,
                    NORMALIZED_ELEVATION_RANGE.0,
                    NORMALIZED_ELEVATION_RANGE.1,
                )?;
                let base = bg_poses[r].translation.z;
                let relative = label.require(ELEVATION)?.map_valid(|e| e - base);
                eh.extend(
                    normalize_elevation(&relative, ELEVATION_SCALE)
                        .iter_valid()
                        .map(|(_, v)| v),
                );
                Ok((entry, th, eh))
            })
            .collect::<anyhow::Result<_>>()?;
        for (entry, th, eh) in results {
            trav_hist.merge(&th)?;
            elev_hist.merge(&eh)?;
            labels.push(entry);
        }
    }

    let weights = if labels.is_empty() {
        None
    } else if trav_hist.total() == 0 || elev_hist.total() == 0 {
        bail!("labels contain no valid cells to derive loss weights from");
    } else {
        let file = "weights.json".to_string();
        let tables = LabelWeights {
            traversability: WeightTable::from_histogram(&trav_hist)?,
            elevation: WeightTable::from_histogram(&elev_hist)?,
        };
        io::write_json(&out.join(&file), &tables)?;
        Some(file)
    };
    let manifest = LabelManifest {
        version: MANIFEST_VERSION,
        config_hash: config.hash(),
        dataset_config_hash: dataset.config_hash.clone(),
        policy,
        min_travel: config.labels.min_travel,
        labels,
        weights,
    };
    io::write_json(&out.join(MANIFEST), &manifest).context("writing label manifest")?;
    info!(
        "wrote {} labels to {}",
        manifest.labels.len(),
        out.display()
    );
    Ok(())
}
