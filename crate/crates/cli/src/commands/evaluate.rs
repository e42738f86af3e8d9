use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use hbev_core::gridmap::transform_to;
use hbev_core::io;
use hbev_core::metrics::{EvalAccumulator, EvalReport};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of ground-truth maps (`*.hbgm`); a label directory's
    /// `labels/` subdirectory is used when present.
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory of predicted maps with matching file names.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of point clouds (`<name>.hbpc`, in the map frame) for the
    /// observed/unobserved split.
    #[arg(long)]
    pub clouds: Option<PathBuf>,
    /// Receives `report.json` and `distance_bins.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

fn map_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let labels = dir.join("labels");
    let dir = if labels.is_dir() {
        labels
    } else {
        dir.to_path_buf()
    };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry
            .with_context(|| format!("listing {}", dir.display()))?
            .path();
        if path.extension().is_some_and(|e| e == "hbgm") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Serialize)]
struct BinRow {
    bin: usize,
    lower_m: f64,
    upper_m: f64,
    cells: u64,
    tp: u64,
    fp: u64,
    fn_: u64,
    tn: u64,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
    traversability_mse: Option<f64>,
    elevation_mae: Option<f64>,
}

pub fn distance_csv(report: &EvalReport) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for b in &report.distance_bins {
        let c = &b.hazard.confusion;
        w.serialize(BinRow {
            bin: b.bin,
            lower_m: b.lower_m,
            upper_m: b.upper_m,
            cells: b.cells,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
            precision: b.hazard.precision,
            recall: b.hazard.recall,
            f1: b.hazard.f1,
            traversability_mse: b.traversability_mse,
            elevation_mae: b.elevation_mae,
        })?;
    }
    Ok(w.into_inner()?)
}

pub fn run(args: &EvaluateArgs, config: RunConfig) -> anyhow::Result<()> {
    config.validate()?;
    let gt_files = map_files(&args.gt)?;
    let pred_dir = {
        let labels = args.pred.join("labels");
        if labels.is_dir() {
            labels
        } else {
            args.pred.clone()
        }
    };
    let pairs: Vec<(PathBuf, PathBuf, Option<PathBuf>)> = gt_files
        .into_iter()
        .map(|gt| {
            let name = gt.file_name().expect("listed file").to_owned();
            let pred = pred_dir.join(&name);
            if !pred.is_file() {
                bail!(
                    "no prediction {} for ground truth {}",
                    pred.display(),
                    gt.display()
                );
            }
            let cloud = args
                .clouds
                .as_ref()
                .map(|d| d.join(Path::new(&name).with_extension("hbpc")));
            Ok((gt, pred, cloud))
        })
        .collect::<anyhow::Result<_>>()?;
    info!("evaluating {} map pairs", pairs.len());

    // per-pair accumulators merged in file order keep the sums reproducible
    let partial: Vec<EvalAccumulator> = pairs
        .par_iter()
        .map(|(gt_path, pred_path, cloud_path)| -> anyhow::Result<_> {
            let gt = io::read_map(gt_path)?;
            let mut pred = io::read_map(pred_path)?;
            if pred.spec != gt.spec {
                if !pred.spec.same_shape(&gt.spec) {
                    bail!(
                        "{} and {} have different grid shapes",
                        gt_path.display(),
                        pred_path.display()
                    );
                }
                pred = transform_to(&pred, &gt.spec);
            }
            let cloud = cloud_path.as_ref().map(|p| io::read_cloud(p)).transpose()?;
            let mut acc = EvalAccumulator::new(config.eval)?;
            acc.add(&gt, &pred, cloud.as_ref())
                .with_context(|| format!("evaluating {}", gt_path.display()))?;
            Ok(acc)
        })
        .collect::<anyhow::Result<_>>()?;
    let mut total = EvalAccumulator::new(config.eval)?;
    for acc in &partial {
        total.merge(acc)?;
    }
    let report = total.report();
    io::write_json(&args.out.join("report.json"), &report)?;
    io::write_atomic(&args.out.join("distance_bins.csv"), &distance_csv(&report)?)?;
    info!("report written to {}", args.out.display());
    Ok(())
}
