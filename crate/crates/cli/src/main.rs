use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};

use polarstream::bench::{canvas_table, latency_table};
use polarstream::context::PaddingMode;
use polarstream::formats::{self, PredictionFile};
use polarstream::geometry::{PolarGridSpec, RigidMotion2D};
use polarstream::heads::{NetConfig, ReferenceNet};
use polarstream::pipeline::{evaluate, run_scene, Heads, HeatmapKind, MetricSet, PipelineConfig};
use polarstream::postprocess::FusionMode;
use polarstream::stream::{slice_sweep, AccumulationConfig, Sweep};
use polarstream::synth::{generate, read_scene, write_scene, SceneSpec, SynthScene};

const THREADS_VAR: &str = "POLARSTREAM_THREADS";

#[derive(Parser)]
#[command(
    name = "polarstream",
    version,
    about = "Streaming polar-pillar lidar perception toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split one point file into azimuth sectors.
    Slice {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        sectors: usize,
        #[arg(long, action = ArgAction::Set, default_value_t = true)]
        canonical: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic scene directory.
    Synth(SynthArgs),
    /// Stream a scene through the pipeline and write predictions.
    Run(RunArgs),
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Score a prediction file against a scene directory.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "map,miou,pq")]
        metrics: String,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    #[command(subcommand)]
    Weights(WeightsCommand),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    sweeps: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    boxes_min: Option<usize>,
    #[arg(long)]
    boxes_max: Option<usize>,
    #[arg(long)]
    points_per_box: Option<usize>,
    /// Ground points per square metre.
    #[arg(long)]
    ground_density: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    sectors: usize,
    #[arg(long, default_value = "bidirectional")]
    padding: String,
    #[arg(long, default_value = "polar")]
    heatmap_grid: String,
    /// Network weights; without them the heads are built from the scene's
    /// ground truth.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "global")]
    fusion: String,
    /// Sweeps merged into each input, including the current one.
    #[arg(long, default_value_t = 1)]
    history: usize,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    canonical: bool,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Per-sector canvas size and memory.
    Memory {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
        sectors: Vec<usize>,
        /// Write the table as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// End-to-end latency: scan time plus per-sector runtime.
    Latency {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
        sectors: Vec<usize>,
        /// CSV output; an SVG scatter is written next to it.
        #[arg(long)]
        report: PathBuf,
        /// Per-sector runtimes in ms, one per sector count. Measured with a
        /// seeded network when omitted.
        #[arg(long, value_delimiter = ',')]
        runtime_ms: Option<Vec<f64>>,
        /// Channel width of the measured network.
        #[arg(long, default_value_t = 8)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum WeightsCommand {
    /// Write seeded network weights.
    Init {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Uniform channel width; the full default widths when omitted.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long, default_value_t = 8)]
        strata: usize,
        /// Use fixed bilinear undistortion instead of the learned one.
        #[arg(long)]
        oracle_undistortion: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        polarstream::Error::InvalidConfig(format!(
            "{THREADS_VAR} must be a positive integer, got '{value}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn slice(input: &Path, sectors: usize, canonical: bool, out: &Path) -> Result<()> {
    let points = formats::read_pspc(
        &mut formats::open(input).with_context(|| format!("opening {}", input.display()))?,
    )?;
    let sweep = Sweep {
        id: 0,
        points,
        ego_pose: RigidMotion2D::default(),
    };
    let grid = PolarGridSpec::full_sweep();
    std::fs::create_dir_all(out)?;
    for sector in slice_sweep(&sweep, sectors, canonical, &grid)? {
        let path = out.join(format!("sector_{:03}.pspc", sector.spec.index));
        let mut w = formats::create(&path)?;
        formats::write_pspc(&mut w, &sector.points)?;
        std::io::Write::flush(&mut w)?;
        println!("{}\t{}", path.display(), sector.points.len());
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let defaults = SceneSpec::default();
    let spec = SceneSpec {
        seed: args.seed,
        sweeps: args.sweeps,
        boxes_min: args.boxes_min.unwrap_or(defaults.boxes_min),
        boxes_max: args.boxes_max.unwrap_or(defaults.boxes_max),
        points_per_box: args.points_per_box.unwrap_or(defaults.points_per_box),
        ground_density: args.ground_density.unwrap_or(defaults.ground_density),
        ..defaults
    };
    let scene = generate(&spec)?;
    write_scene(&args.out, &scene)?;
    let points: usize = scene.sweeps.iter().map(|s| s.points.len()).sum();
    println!(
        "wrote {} sweeps, {} boxes, {} points to {}",
        scene.sweeps.len(),
        scene.boxes.first().map_or(0, Vec::len),
        points,
        args.out.display()
    );
    Ok(())
}

fn load_heads(weights: Option<&Path>) -> Result<Heads> {
    Ok(match weights {
        None => Heads::Oracle,
        Some(path) => {
            let tensors = formats::read_pswt(
                &mut formats::open(path).with_context(|| format!("opening {}", path.display()))?,
            )?;
            Heads::Network(Box::new(ReferenceNet::from_tensors(&tensors, true)?))
        }
    })
}

fn run(args: &RunArgs) -> Result<()> {
    let padding: PaddingMode = args.padding.parse()?;
    let heatmap: HeatmapKind = args.heatmap_grid.parse()?;
    let fusion: FusionMode = args.fusion.parse()?;
    let heads = load_heads(args.weights.as_deref())?;
    let scene = read_scene(&args.scene)?;
    let cfg = PipelineConfig {
        sectors: args.sectors,
        canonicalize: args.canonical,
        padding,
        heatmap,
        accumulation: AccumulationConfig {
            history_sweeps: args.history,
            ..AccumulationConfig::default()
        },
        ..PipelineConfig::default()
    };
    let out = run_scene(&scene, &cfg, &heads, fusion)?;
    write_json(&args.report, &out.predictions)?;
    let boxes: usize = out.predictions.sweeps.iter().map(|s| s.boxes.len()).sum();
    println!(
        "{} sweeps, {} sectors, {boxes} boxes -> {}",
        out.predictions.sweeps.len(),
        out.sector_ms.len(),
        args.report.display()
    );
    Ok(())
}

/// Mean per-sector runtime of a seeded network on a one-sweep scene.
fn measure_runtime(n: usize, width: usize, seed: u64) -> Result<f64> {
    let scene: SynthScene = generate(&SceneSpec {
        seed,
        sweeps: 1,
        ..SceneSpec::default()
    })?;
    let net = ReferenceNet::seeded(NetConfig::narrow(width), seed)?;
    let cfg = PipelineConfig {
        sectors: n,
        ..PipelineConfig::default()
    };
    let out = run_scene(
        &scene,
        &cfg,
        &Heads::Network(Box::new(net)),
        FusionMode::Stateful,
    )?;
    Ok(out.sector_ms.iter().sum::<f64>() / out.sector_ms.len() as f64)
}

fn bench(cmd: &BenchCommand) -> Result<()> {
    match cmd {
        BenchCommand::Memory { sectors, report } => {
            let table = canvas_table(sectors, &PolarGridSpec::full_sweep())?;
            let csv = table.to_csv();
            print!("{csv}");
            if let Some(path) = report {
                write_text(path, &csv)?;
            }
        }
        BenchCommand::Latency {
            sectors,
            report,
            runtime_ms,
            width,
            seed,
        } => {
            let runtimes = match runtime_ms {
                Some(r) => r.clone(),
                None => sectors
                    .iter()
                    .map(|&n| measure_runtime(n, *width, *seed))
                    .collect::<Result<_>>()?,
            };
            let table = latency_table(sectors, &runtimes)?;
            let csv = table.to_csv();
            print!("{csv}");
            write_text(report, &csv)?;
            write_text(&report.with_extension("svg"), &table.to_svg())?;
        }
    }
    Ok(())
}

fn eval(pred: &Path, gt: &Path, metrics: &str, report: Option<&Path>) -> Result<()> {
    let metrics: MetricSet = metrics.parse()?;
    let text =
        std::fs::read_to_string(pred).with_context(|| format!("reading {}", pred.display()))?;
    let predictions: PredictionFile = serde_json::from_str(&text)?;
    let scene = read_scene(gt)?;
    let result = evaluate(&predictions, &scene, metrics)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    if let Some(path) = report {
        write_json(path, &result)?;
    }
    Ok(())
}

fn weights(cmd: &WeightsCommand) -> Result<()> {
    let WeightsCommand::Init {
        seed,
        width,
        strata,
        oracle_undistortion,
        out,
    } = cmd;
    let base = width.map_or_else(NetConfig::default, NetConfig::narrow);
    let cfg = NetConfig {
        strata: *strata,
        learned_undistortion: !oracle_undistortion,
        ..base
    };
    let net = ReferenceNet::seeded(cfg, *seed)?;
    let mut w = formats::create(out)?;
    formats::write_pswt(&mut w, &net.to_tensors())?;
    std::io::Write::flush(&mut w)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Slice {
            input,
            sectors,
            canonical,
            out,
        } => slice(input, *sectors, *canonical, out),
        Command::Synth(args) => synth(args),
        Command::Run(args) => run(args),
        Command::Bench(cmd) => bench(cmd),
        Command::Eval {
            pred,
            gt,
            metrics,
            report,
        } => eval(pred, gt, metrics, report.as_deref()),
        Command::Weights(cmd) => weights(cmd),
    }
}

/// I/O failures exit with 1; every other error rejects the input and exits
/// with 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<std::io::Error>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<polarstream::Error>() {
            return if matches!(e, polarstream::Error::Io(_)) {
                1
            } else {
                2
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
