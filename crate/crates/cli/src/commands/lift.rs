use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::Args;
use hbev_core::bevlift::{
    default_camera_rig, generate_frustum, lift, splat_parallel, FrustumPointSet,
};
use hbev_core::io::{self, Tensor};
use hbev_core::{CameraIntrinsics, GridMap, Pose3};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::PoseRecord;

/// Fixed so the summation order, and therefore the output bytes, do not
/// depend on the thread count.
const SPLAT_SHARDS: usize = 8;

#[derive(Debug, Args)]
pub struct LiftArgs {
    /// JSON list of cameras; defaults to a four-camera surround rig.
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    /// Depth logits tensor shaped [cameras, rows, cols, depth bins];
    /// synthesized from `--seed` when absent.
    #[arg(long)]
    pub logits: Option<PathBuf>,
    /// Feature tensor shaped [cameras, rows, cols, channels];
    /// synthesized when absent.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Channels of synthesized features.
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output grid map with one layer per feature channel.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Time the splat this many times and print statistics as JSON.
    #[arg(long)]
    pub bench: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub intrinsics: CameraIntrinsics,
    /// Optical frame (z forward, x right, y down) in the gravity-aligned base frame.
    pub extrinsic: PoseRecord,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub points: usize,
    pub channels: usize,
    pub repetitions: usize,
    pub min_ms: f64,
    pub mean_ms: f64,
    pub points_per_second: f64,
}

fn load_cameras(
    args: &LiftArgs,
    config: &RunConfig,
) -> anyhow::Result<Vec<(CameraIntrinsics, Pose3)>> {
    let Some(path) = &args.cameras else {
        return Ok(default_camera_rig(&config.frustum));
    };
    let records: Vec<CameraRecord> =
        io::read_json(path).with_context(|| format!("reading cameras {}", path.display()))?;
    records
        .iter()
        .map(|r| {
            r.intrinsics.validate()?;
            Ok((r.intrinsics, r.extrinsic.to_pose()?))
        })
        .collect()
}

fn load_or_synthesize(
    path: Option<&PathBuf>,
    shape: [usize; 4],
    check_last: bool,
    rng: &mut ChaCha8Rng,
    what: &str,
) -> anyhow::Result<Tensor> {
    match path {
        Some(p) => {
            let t = io::read_tensor(p)?;
            let matches = t.shape.len() == 4
                && t.shape[..3] == shape[..3]
                && (!check_last || t.shape[3] == shape[3]);
            if !matches {
                bail!(
                    "{what} tensor {} has shape {:?}, expected {:?}",
                    p.display(),
                    t.shape,
                    shape
                );
            }
            Ok(t)
        }
        None => {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
            Ok(Tensor::new(shape.to_vec(), data)?)
        }
    }
}

/// Lift every camera's features into one weighted point set in `BG`.
pub fn lift_all(args: &LiftArgs, config: &RunConfig) -> anyhow::Result<FrustumPointSet> {
    let cameras = load_cameras(args, config)?;
    let f = &config.frustum;
    let (rows, cols, bins) = (f.feature_height, f.feature_width, f.depth_bins());
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let logits = load_or_synthesize(
        args.logits.as_ref(),
        [cameras.len(), rows, cols, bins],
        true,
        &mut rng,
        "logits",
    )?;
    let features = load_or_synthesize(
        args.features.as_ref(),
        [cameras.len(), rows, cols, args.channels],
        false,
        &mut rng,
        "features",
    )?;
    let channels = features.shape[3];
    let logits = logits.to_f64();
    let features = features.to_f64();

    let mut all = FrustumPointSet::default();
    for (k, (intrinsics, pose)) in cameras.iter().enumerate() {
        let frustum = generate_frustum(intrinsics, pose, f, k as u32)?;
        let per_logits = rows * cols * bins;
        let per_features = rows * cols * channels;
        let lifted = lift(
            &frustum,
            f,
            &logits[k * per_logits..(k + 1) * per_logits],
            &features[k * per_features..(k + 1) * per_features],
            channels,
        )?;
        all.extend(lifted)?;
    }
    Ok(all)
}

pub fn run(args: &LiftArgs, config: RunConfig) -> anyhow::Result<()> {
    config.validate()?;
    if args.out.is_none() && args.bench.is_none() {
        bail!("nothing to do: pass --out and/or --bench");
    }
    let points = lift_all(args, &config)?;
    info!(
        "lifted {} points with {} channels",
        points.len(),
        points.channels
    );
    let spec = config.grid;
    let map: GridMap = splat_parallel(&points, &spec, SPLAT_SHARDS)?;
    if let Some(out) = &args.out {
        io::write_map(out, &map)?;
    }
    if let Some(reps) = args.bench {
        let reps = reps.max(1);
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = Instant::now();
            let m = splat_parallel(&points, &spec, SPLAT_SHARDS)?;
            times.push(start.elapsed().as_secs_f64());
            drop(m);
        }
        let mean = times.iter().sum::<f64>() / reps as f64;
        let min = times.iter().copied().fold(f64::INFINITY, f64::min);
        let report = BenchReport {
            points: points.len(),
            channels: points.channels,
            repetitions: reps,
            min_ms: min * 1e3,
            mean_ms: mean * 1e3,
            points_per_second: points.len() as f64 / min,
        };
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(())
}
