use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nilbs_core::dataset::{AnimationSet, DEFAULT_FRAMES};
use nilbs_core::io::{self, checkpoint_to_json, grid_to_json, parse_checkpoint, parse_grid};
use nilbs_core::occupancy::OccupancyGrid;
use nilbs_core::render::render_field;
use nilbs_core::trainer::{evaluate_iou, train_from, train_with, NeuralOccupancy, PosedOccupancy, TrainConfig, TrainReport};
use nilbs_core::weightnet::WeightNet;
use nilbs_core::{Error, Result};

const CHECKPOINT_FILE: &str = "checkpoint.json";
const REPORT_FILE: &str = "report.csv";
const IOU_FILE: &str = "iou.json";
const PROGRESS_EVERY: usize = 500;

#[derive(Parser)]
#[command(name = "nilbs", version, about = "Neural inverse skinning of occupancy for 2D characters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the gingerbread dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FRAMES)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Bake the rest-pose occupancy grid.
    Bake {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 128)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the weight field; writes checkpoint.json, report.csv and iou.json.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// key = value file; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Start from this checkpoint instead of a fresh network.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Per-pose IoU of a checkpoint against the ground truth.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 128)]
        res: usize,
        /// Also write the IoU list as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a posed occupancy field as a PGM image.
    Render {
        #[arg(long, required_unless_present = "gt")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "gt")]
        grid: Option<PathBuf>,
        #[arg(long)]
        pose: usize,
        #[arg(long, default_value_t = 128)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
        /// Render the exact occupancy instead of the model.
        #[arg(long)]
        gt: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { out, frames, seed } => {
            let set = AnimationSet::gingerbread(frames, seed)?;
            io::write_dataset(&out, &set)?;
            println!("wrote {} frames to {}", set.len(), out.display());
        }
        Command::Bake { data, res, out } => {
            if res < 2 {
                return Err(Error::InvalidResolution(res));
            }
            let set = io::read_dataset(&data)?;
            let grid = OccupancyGrid::bake(set.rest_polygon(), set.bbox, [res, res])?;
            io::write_file(&out, &grid_to_json(&grid))?;
            println!("baked {res}x{res} grid to {}", out.display());
        }
        Command::Train { data, grid, config, out, init } => cmd_train(&data, &grid, config.as_deref(), &out, init.as_deref())?,
        Command::Eval { checkpoint, data, grid, res, out } => {
            let set = io::read_dataset(&data)?;
            let grid = io::load(&grid, parse_grid)?;
            let net = load_checkpoint(&checkpoint, &set)?;
            let model = NeuralOccupancy::new(&net, &grid, &set)?;
            let report = TrainReport {
                steps: Vec::new(),
                final_iou: (0..set.len()).map(|t| evaluate_iou(&model, &set, t, res)).collect::<Result<_>>()?,
            };
            for (t, iou) in report.final_iou.iter().enumerate() {
                println!("pose {t}: iou {iou:.4}");
            }
            println!("mean iou {:.4}", report.mean_iou());
            if let Some(out) = out {
                io::write_file(&out, &report.iou_json())?;
            }
        }
        Command::Render { checkpoint, data, grid, pose, res, out, gt } => {
            let set = io::read_dataset(&data)?;
            if pose >= set.len() {
                return Err(Error::IndexOutOfRange { index: pose, len: set.len() });
            }
            let image = if gt {
                render_field(&set.bbox, res, |p| Ok(f64::from(set.gt_occupancy(pose, p))))?
            } else {
                let (checkpoint, grid) = checkpoint.zip(grid).expect("clap requires both without --gt");
                let grid = io::load(&grid, parse_grid)?;
                let net = load_checkpoint(&checkpoint, &set)?;
                let model = NeuralOccupancy::new(&net, &grid, &set)?;
                render_field(&set.bbox, res, |p| match model.occupancy(pose, p) {
                    Err(Error::SingularBlend) => Ok(0.0),
                    r => r,
                })?
            };
            io::write_file(&out, &image.to_pgm())?;
        }
    }
    Ok(())
}

fn load_checkpoint(path: &Path, set: &AnimationSet) -> Result<WeightNet> {
    let net = io::load(path, parse_checkpoint)?;
    if net.bone_count() != set.rig.bone_count() {
        return Err(Error::Config(format!(
            "{}: checkpoint has {} bones, rig has {}",
            path.display(),
            net.bone_count(),
            set.rig.bone_count()
        )));
    }
    Ok(net)
}

fn cmd_train(data: &Path, grid: &Path, config: Option<&Path>, out: &Path, init: Option<&Path>) -> Result<()> {
    let config = match config {
        Some(path) => {
            let bytes = io::read_file(path)?;
            let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
            TrainConfig::parse(&text).map_err(|e| Error::InFile { path: path.to_path_buf(), source: Box::new(e) })?
        }
        None => TrainConfig::default(),
    };
    let set = io::read_dataset(data)?;
    let grid = io::load(grid, parse_grid)?;
    let init = init.map(|p| load_checkpoint(p, &set)).transpose()?;
    std::fs::create_dir_all(out).map_err(|source| Error::Io { path: out.to_path_buf(), source })?;
    let checkpoint_path = out.join(CHECKPOINT_FILE);

    let mut on_step = |r: &nilbs_core::trainer::StepRecord, net: &WeightNet| -> Result<()> {
        let done = r.step + 1;
        if done.is_multiple_of(PROGRESS_EVERY) || done == config.steps {
            eprintln!("step {done}/{}: loss_occ {:.5} loss_w {:.5}", config.steps, r.loss_occ, r.loss_w);
        }
        if config.checkpoint_every > 0 && done.is_multiple_of(config.checkpoint_every) {
            io::write_file(&checkpoint_path, &checkpoint_to_json(net))?;
        }
        Ok(())
    };
    let (net, report) = match init {
        Some(net) => train_from(net, &config, &set, &grid, &mut on_step)?,
        None => train_with(&config, &set, &grid, on_step)?,
    };
    io::write_file(&checkpoint_path, &checkpoint_to_json(&net))?;
    io::write_file(&out.join(REPORT_FILE), &report.to_csv())?;
    io::write_file(&out.join(IOU_FILE), &report.iou_json())?;
    println!("mean iou {:.4}", report.mean_iou());
    Ok(())
}
