use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gpsm::pipeline::{
    cmd_build, cmd_eval, cmd_toy2d, export_rgbd, export_tree, InputSource, Method, QuerySet,
    RunConfig, StageError,
};
use gpsm::pointcloud::CameraIntrinsics;
use gpsm::GpsmError;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gpsm",
    version,
    about = "Continuous GP semantic maps and a semantic octree baseline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the GP map and/or the semantic octree from a labeled cloud.
    Build(RunArgs),
    /// Score built maps against ground truth.
    Eval(RunArgs),
    /// Three-cluster 2D classification study written as CSV.
    Toy2d {
        #[arg(long, default_value = "toy2d_out")]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert artifacts to PLY.
    #[command(subcommand)]
    Export(Export),
}

#[derive(Subcommand)]
enum Export {
    /// Occupied leaves of a tree dump, colored by hard label.
    Tree {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        class_set: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Back-project depth/label/color PNGs.
    Rgbd {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        color: Option<PathBuf>,
        /// Camera intrinsics JSON; defaults to example Kinect values.
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gpsm,
    Som,
    Both,
}

/// Every flag overrides the matching field of `--config`.
#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labeled PLY input.
    #[arg(long, conflicts_with = "synthetic_room")]
    input: Option<PathBuf>,
    /// Use the synthetic room rendered with this seed.
    #[arg(long)]
    synthetic_room: Option<u64>,
    #[arg(long)]
    class_set: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    max_train_points: Option<usize>,
    #[arg(long, conflicts_with = "exact")]
    num_inducing: Option<usize>,
    /// Exact (non-sparse) GP inference.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    optimize: bool,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    lengthscale: Option<f64>,
    #[arg(long)]
    signal_std: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    p_hit: Option<f64>,
    #[arg(long)]
    p_miss: Option<f64>,
    #[arg(long)]
    l_min: Option<f64>,
    #[arg(long)]
    l_max: Option<f64>,
    /// Sensor origin as x,y,z.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    origin: Option<Vec<f64>>,
    #[arg(long)]
    downsample: Option<usize>,
    #[arg(long)]
    label_noise: Option<f64>,
    /// Query the GP map on a grid with this spacing instead of the input.
    #[arg(long)]
    query_grid: Option<f64>,
    /// Evaluate right after building.
    #[arg(long)]
    evaluate: bool,
    #[arg(long)]
    roc_csv: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig, StageError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p).map_err(|error| StageError {
                stage: "config",
                error,
            })?,
            None => RunConfig::default(),
        };
        if let Some(path) = self.input {
            c.input = InputSource::Ply { path };
        }
        if let Some(seed) = self.synthetic_room {
            c.input = InputSource::SyntheticRoom { seed };
        }
        set(&mut c.class_set, self.class_set.map(Some));
        set(&mut c.ground_truth, self.ground_truth.map(Some));
        set(
            &mut c.method,
            self.method.map(|m| match m {
                MethodArg::Gpsm => Method::Gpsm,
                MethodArg::Som => Method::Som,
                MethodArg::Both => Method::Both,
            }),
        );
        set(&mut c.gp.max_train_points, self.max_train_points);
        set(&mut c.gp.num_inducing, self.num_inducing.map(Some));
        if self.exact {
            c.gp.num_inducing = None;
        }
        c.gp.optimize |= self.optimize;
        set(&mut c.gp.budget, self.budget);
        set(&mut c.gp.theta0.lengthscale, self.lengthscale);
        set(&mut c.gp.theta0.signal_std, self.signal_std);
        set(&mut c.gp.theta0.noise_std, self.noise_std);
        set(&mut c.som.resolution, self.resolution);
        set(&mut c.som.sensor.p_hit, self.p_hit);
        set(&mut c.som.sensor.p_miss, self.p_miss);
        set(&mut c.som.sensor.l_min, self.l_min);
        set(&mut c.som.sensor.l_max, self.l_max);
        if let Some(o) = self.origin {
            c.som.origin = [o[0], o[1], o[2]];
        }
        set(&mut c.downsample, self.downsample);
        set(&mut c.label_noise, self.label_noise);
        if let Some(spacing) = self.query_grid {
            c.query = QuerySet::Grid { spacing };
        }
        c.evaluate |= self.evaluate;
        c.roc_csv |= self.roc_csv;
        set(&mut c.output_dir, self.output_dir);
        set(&mut c.seed, self.seed);
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("summaries serialize")
    );
}

fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Build(args) => print_json(&cmd_build(&args.resolve()?)?),
        Command::Eval(args) => print_json(&cmd_eval(&args.resolve()?)?),
        Command::Toy2d { output_dir, seed } => print_json(&cmd_toy2d(&output_dir, seed)?),
        Command::Export(Export::Tree {
            tree,
            class_set,
            threshold,
            output,
        }) => {
            let n = export_tree(&tree, &class_set, threshold, &output)?;
            println!("wrote {n} occupied voxels to {}", output.display());
        }
        Command::Export(Export::Rgbd {
            depth,
            labels,
            color,
            intrinsics,
            output,
        }) => {
            let intr = match intrinsics {
                Some(p) => std::fs::read_to_string(&p)
                    .map_err(GpsmError::from)
                    .and_then(|s| {
                        serde_json::from_str(&s).map_err(|e| GpsmError::Config(e.to_string()))
                    })
                    .map_err(|error| StageError {
                        stage: "config",
                        error,
                    })?,
                None => CameraIntrinsics::kinect_v1(),
            };
            let n = export_rgbd(&depth, labels.as_deref(), color.as_deref(), &intr, &output)?;
            println!("wrote {n} points to {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gpsm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
