use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use desirelines::compliance::ClassificationMode;
use desirelines::ingest::write_trajectories;
use desirelines::pathcluster::{Cut, Linkage};
use desirelines::pipeline::{run, RunConfig, Stage};
use desirelines::synth::{generate, write_ground_truth, SynthSpec};
use desirelines::Error;

#[derive(Parser, Debug)]
#[command(
    name = "desirelines",
    version,
    about = "Cluster road-user trajectories and compare them with designed paths"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full pipeline: clustering, compliance report, overlay and figures.
    Run(PipelineArgs),
    /// Filter trajectories and cluster their endpoints into SD-clusters.
    ClusterEndpoints(PipelineArgs),
    /// SD-clusters plus DTW path-clusters within each.
    ClusterPaths(PipelineArgs),
    /// Clustering and the compliance report, without overlay or figures.
    Report(PipelineArgs),
    /// Generate a synthetic scene with ground truth and a ready-to-run config.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LinkageArg {
    Average,
    Complete,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Medoid,
    PerTrajectory,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads. Results do not depend on this value.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    trajectories: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    directives: Option<PathBuf>,
    /// DBSCAN radius in pixels at 640x360.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
    /// Samples per resampled path.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    linkage: Option<LinkageArg>,
    #[arg(long, conflicts_with = "distance_threshold")]
    target_count: Option<usize>,
    /// Dendrogram cut in DTW units for 64 samples at 640x360.
    #[arg(long)]
    distance_threshold: Option<f64>,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    /// Compliance corridor half-width in pixels at 640x360.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    gate_snap: Option<f64>,
    /// Also write the pairwise DTW matrices.
    #[arg(long)]
    dump_distances: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Pipeline(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Pipeline(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Pipeline(e) => e.exit_code() as u8,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Pipeline(e) => write!(f, "{e}"),
        }
    }
}

fn build_config(args: &PipelineArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.common.config {
        Some(path) => RunConfig::load(path)?,
        None => match (&args.trajectories, &args.scene) {
            (Some(t), Some(s)) => RunConfig::new(t, s),
            _ => {
                return Err(CliError::Usage(
                    "either --config or both --trajectories and --scene are required".into(),
                ))
            }
        },
    };
    if let Some(t) = &args.trajectories {
        cfg.trajectories = t.clone();
    }
    if let Some(s) = &args.scene {
        cfg.scene = s.clone();
    }
    if let Some(d) = &args.directives {
        cfg.directives = Some(d.clone());
    }
    if let Some(v) = args.eps {
        cfg.cluster.eps = v;
    }
    if let Some(v) = args.min_pts {
        cfg.cluster.min_pts = v;
    }
    if let Some(v) = args.samples {
        cfg.samples = v;
    }
    if let Some(v) = args.linkage {
        cfg.path_cluster.linkage = match v {
            LinkageArg::Average => Linkage::Average,
            LinkageArg::Complete => Linkage::Complete,
        };
    }
    if let Some(v) = args.target_count {
        cfg.path_cluster.cut = Cut::TargetCount(v);
    }
    if let Some(v) = args.distance_threshold {
        cfg.path_cluster.cut = Cut::DistanceThreshold(v);
    }
    if let Some(v) = args.min_cluster_size {
        cfg.path_cluster.min_cluster_size = v;
    }
    if let Some(v) = args.tau {
        cfg.compliance.deviation_threshold = v;
    }
    if let Some(v) = args.quantile {
        cfg.compliance.deviation_quantile = v;
    }
    if let Some(v) = args.mode {
        cfg.compliance.mode = match v {
            ModeArg::Medoid => ClassificationMode::Medoid,
            ModeArg::PerTrajectory => ClassificationMode::PerTrajectory,
        };
    }
    if let Some(v) = args.gate_snap {
        cfg.gate_snap = v;
    }
    if args.dump_distances {
        cfg.exports.distance_matrices = true;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, fallback: Option<&PathBuf>) -> Result<PathBuf, CliError> {
    common
        .out
        .clone()
        .or_else(|| fallback.cloned())
        .ok_or_else(|| {
            CliError::Usage("no output directory; pass --out or set `out` in the config".into())
        })
}

fn run_stage(args: &PipelineArgs, stage: Stage) -> Result<(), CliError> {
    let cfg = build_config(args)?;
    let out = out_dir(&args.common, cfg.out.as_ref())?;
    let outcome = run(&cfg, stage, args.common.threads)?;
    let files = outcome
        .write_artifacts(&out, stage)
        .map_err(|e| e.in_stage("export"))?;
    if let Some(report) = &outcome.report {
        print!("{}", report.to_table());
    } else {
        println!(
            "{} SD-clusters, {} trajectories kept",
            outcome.endpoints.sd_clusters.len(),
            outcome.endpoints.filter.kept.len()
        );
    }
    log::info!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<(), Error> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let path = args
        .common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("synth needs --config <spec.json>".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut spec = SynthSpec::parse(&text)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let out = out_dir(&args.common, None)?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let (set, truth) = match args.common.threads {
        Some(n) => rayon_pool(n)?.install(|| generate(&spec)),
        None => generate(&spec),
    }?;
    write_file(&out.join("trajectories.csv"), |w| {
        write_trajectories(&set, w)
    })?;
    write_file(&out.join("ground_truth.csv"), |w| {
        write_ground_truth(&truth, w)
    })?;
    let scene = spec.scene.to_json();
    write_file(&out.join("scene.json"), |w| writeln!(w, "{scene}"))?;
    let cfg = serde_json::to_string_pretty(&RunConfig::new("trajectories.csv", "scene.json"))
        .map_err(Error::from)?;
    write_file(&out.join("config.json"), |w| writeln!(w, "{cfg}"))?;
    println!("{} trajectories written to {}", set.len(), out.display());
    Ok(())
}

fn rayon_pool(n: usize) -> Result<desirelines::pipeline::ThreadPool, CliError> {
    desirelines::pipeline::thread_pool(n).map_err(CliError::from)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => run_stage(a, Stage::Full),
        Command::ClusterEndpoints(a) => run_stage(a, Stage::Endpoints),
        Command::ClusterPaths(a) => run_stage(a, Stage::Paths),
        Command::Report(a) => run_stage(a, Stage::Report),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
