//! `nucleoforge` — file-to-file pipelines over NPY arrays: stain
//! deconvolution, training-target generation, watershed post-processing,
//! challenge metrics and fold selection.

mod commands;
mod config;
mod outputs;
mod report;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nucleoforge",
    version,
    about = "Nuclei segmentation pipeline tools: stain deconvolution, training targets, watershed post-processing, evaluation and fold selection"
)]
struct Cli {
    /// JSON pipeline configuration file
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory for outputs without an explicit path
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,

    /// Worker threads (falls back to NUCLEOFORGE_THREADS, then all cores)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an RGB image stack to HED stain concentrations
    Deconvolve {
        /// Input N×H×W×3 u8 stack
        #[arg(long, value_name = "NPY")]
        images: PathBuf,
        /// Output N×H×W×3 f32 HED stack (default <out-dir>/hed.npy)
        #[arg(long, value_name = "NPY")]
        out: Option<PathBuf>,
        /// Also write one PPM panel of the normalized H channel per image
        #[arg(long)]
        ppm: bool,
    },
    /// Build NP/HV/TP training targets from images and labels
    Targets {
        /// Input N×H×W×3 u8 stack
        #[arg(long, value_name = "NPY")]
        images: PathBuf,
        /// Input N×H×W×2 integer stack (instance, class)
        #[arg(long, value_name = "NPY")]
        labels: PathBuf,
        /// Output N×H×W f32 nuclei-pixel target (default <out-dir>/np.npy)
        #[arg(long, value_name = "NPY")]
        np_out: Option<PathBuf>,
        /// Output N×H×W×2 f32 HV target (default <out-dir>/hv.npy)
        #[arg(long, value_name = "NPY")]
        hv_out: Option<PathBuf>,
        /// Output N×H×W×(C+1) f32 smoothed type target (default <out-dir>/tp.npy)
        #[arg(long, value_name = "NPY")]
        tp_out: Option<PathBuf>,
        /// Number of nucleus classes C
        #[arg(long, value_name = "C")]
        num_classes: Option<u32>,
    },
    /// Recover typed instances from predicted NP/HV/TP maps
    Postprocess {
        /// Predicted N×H×W f32 nuclei-pixel probabilities
        #[arg(long, value_name = "NPY")]
        np: PathBuf,
        /// Predicted N×H×W×2 f32 HV maps
        #[arg(long, value_name = "NPY")]
        hv: PathBuf,
        /// Predicted N×H×W×(C+1) f32 type probabilities
        #[arg(long, value_name = "NPY")]
        tp: PathBuf,
        /// Output N×H×W i32 instance maps (default <out-dir>/inst.npy)
        #[arg(long, value_name = "NPY")]
        inst_out: Option<PathBuf>,
        /// Output per-instance types (default <out-dir>/types.json)
        #[arg(long, value_name = "JSON")]
        types_out: Option<PathBuf>,
    },
    /// Score predictions against ground truth (PQ, mPQ+, multi-class R²)
    Evaluate {
        /// Ground-truth N×H×W×2 integer stack (instance, class)
        #[arg(long, value_name = "NPY")]
        gt_labels: PathBuf,
        /// Predicted N×H×W i32 instance maps
        #[arg(long, value_name = "NPY")]
        pred_inst: PathBuf,
        /// Predicted per-instance types as written by postprocess
        #[arg(long, value_name = "JSON")]
        pred_types: PathBuf,
        /// Output JSON report (default <out-dir>/report.json)
        #[arg(long, value_name = "JSON")]
        report_json: Option<PathBuf>,
        /// Output CSV report (default <out-dir>/report.csv)
        #[arg(long, value_name = "CSV")]
        report_csv: Option<PathBuf>,
        /// Number of nucleus classes C
        #[arg(long, value_name = "C")]
        num_classes: Option<u32>,
    },
    /// Rank folds by train/valid class-distribution similarity
    Foldselect {
        /// Directory of fold_XX_{train,valid}_labels.npy stacks
        #[arg(long, value_name = "DIR")]
        folds: PathBuf,
        /// Output ranking CSV (default <out-dir>/ranking.csv)
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
        /// Number of nucleus classes C
        #[arg(long, value_name = "C")]
        num_classes: Option<u32>,
    },
    /// Compute the TP-branch loss (3·focal + dice) between two stacks
    Loss {
        /// Predicted probabilities, any f32 array
        #[arg(long, value_name = "NPY")]
        pred: PathBuf,
        /// Target probabilities, same shape
        #[arg(long, value_name = "NPY")]
        target: PathBuf,
        /// Focal loss focusing parameter
        #[arg(long)]
        gamma: Option<f64>,
        /// Dice smoothing epsilon
        #[arg(long)]
        eps: Option<f64>,
    },
}

fn resolve_threads(flag: Option<usize>) -> anyhow::Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var("NUCLEOFORGE_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map_err(|_| anyhow::anyhow!("NUCLEOFORGE_THREADS must be an integer, got '{v}'")),
        Err(_) => Ok(0), // rayon default: all cores
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut tracker = outputs::OutputTracker::default();
    let result = resolve_threads(cli.threads).and_then(|threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(anyhow::Error::from)?;
        pool.install(|| commands::run(&cli, &mut tracker))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            tracker.remove_partial_outputs();
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
