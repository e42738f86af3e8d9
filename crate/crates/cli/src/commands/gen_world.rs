use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use hbev_core::io;
use hbev_core::synthworld::{simulate_step, TrajectoryKind, WorldSpec};
use log::info;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{
    sample_file, DatasetManifest, PoseRecord, StepEntry, MANIFEST, MANIFEST_VERSION,
};

#[derive(Debug, Args)]
pub struct GenWorldArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Side length of the square world in meters.
    #[arg(long)]
    pub extent: Option<f64>,
    #[arg(long)]
    pub obstacles: Option<usize>,
    /// Trajectory shape: loop or line.
    #[arg(long = "traj")]
    pub trajectory: Option<TrajectoryKind>,
    /// Sample rate in Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Trajectory duration in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &GenWorldArgs, mut config: RunConfig) -> anyhow::Result<()> {
    let w = &mut config.world;
    if let Some(v) = args.seed {
        w.seed = v;
    }
    if let Some(v) = args.extent {
        w.extent = v;
    }
    if let Some(v) = args.obstacles {
        w.obstacles = v;
    }
    if let Some(v) = args.trajectory {
        w.trajectory = v;
    }
    if let Some(v) = args.rate {
        w.rate = v;
    }
    if let Some(v) = args.duration {
        w.duration = v;
    }
    config.validate()?;

    let world = WorldSpec::generate(&config.world)?;
    let out = &args.out;
    info!(
        "generating {} samples with {} obstacles into {}",
        world.trajectory.len(),
        world.description.obstacles.len(),
        out.display()
    );
    io::write_trajectory(&out.join("trajectory.csv"), &world.trajectory)?;

    // bounded batches keep at most a few samples' maps in memory
    let batch = rayon::current_num_threads().max(1) * 2;
    let mut steps = Vec::with_capacity(world.trajectory.len());
    let indices: Vec<usize> = (0..world.trajectory.len()).collect();
    for chunk in indices.chunks(batch) {
        let entries: Vec<StepEntry> = chunk
            .par_iter()
            .map(|&i| -> anyhow::Result<StepEntry> {
                let step = simulate_step(&world, &config.sensor, &config.grid, i)?;
                let entry = StepEntry {
                    index: i,
                    time: step.time,
                    bg_pose: PoseRecord::from(&step.bg_pose),
                    points: step.cloud.len(),
                    cloud: format!("clouds/{}", sample_file(i, "hbpc")),
                    estimate: format!("estimates/{}", sample_file(i, "hbgm")),
                    oracle: format!("oracle/{}", sample_file(i, "hbgm")),
                };
                io::write_cloud(&out.join(&entry.cloud), &step.cloud)?;
                io::write_map(&out.join(&entry.estimate), &step.estimate)?;
                io::write_map(&out.join(&entry.oracle), &step.oracle)?;
                Ok(entry)
            })
            .collect::<anyhow::Result<_>>()?;
        steps.extend(entries);
    }

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        config_hash: config.hash(),
        config,
        world: world.description.clone(),
        trajectory: "trajectory.csv".into(),
        steps,
    };
    io::write_json(&out.join(MANIFEST), &manifest).context("writing dataset manifest")?;
    info!("wrote {} samples", manifest.steps.len());
    Ok(())
}
