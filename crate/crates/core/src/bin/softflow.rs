use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use softflow::io::Checkpoint;
use softflow::metrics::Metric;
use softflow::pointflow::{PointData, Shape, ShapeFamily};
use softflow::run::{
    cmd_datagen, cmd_eval, cmd_sample, cmd_train, DatagenOptions, DatagenSource, EvalOptions, ExperimentKind,
    RunConfig, SampleOptions, TrainOptions, CSP_SWEEP,
};
use softflow::softflow::{NoiseSchedule, ToyDataset};
use softflow::Error;

#[derive(Parser)]
#[command(name = "softflow", version, about = "Train, sample and evaluate noise-conditioned flows")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes config.toml, train_log.csv and checkpoints.
    Train(TrainArgs),
    /// Sample a trained model to CSV and SVG.
    Sample(SampleArgs),
    /// Distance matrices and 1-NNA between two directories of point sets.
    Eval(EvalArgs),
    /// Write a 2-D dataset or a directory of synthetic point sets.
    Datagen(DatagenArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; missing fields take the kind's defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// softflow-2d, cnf-2d or softpointflow.
    #[arg(long)]
    kind: Option<ExperimentKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// 2-D dataset: 2sines, target, circles, two-arcs or line-grid.
    #[arg(long)]
    dataset: Option<ToyDataset>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Lower bound of the training noise level.
    #[arg(long)]
    a: Option<f64>,
    /// Upper bound of the training noise level.
    #[arg(long)]
    b: Option<f64>,
    /// Condition multiplier, `c_in = scale · c`.
    #[arg(long)]
    scale: Option<f64>,
    /// Train without noise (a = b = 0).
    #[arg(long)]
    ablation: bool,
    /// Points per set (softpointflow).
    #[arg(long)]
    points: Option<usize>,
    /// Shape latent size (softpointflow).
    #[arg(long)]
    latent: Option<usize>,
    /// Train on one parametric shape: chair or cross.
    #[arg(long, conflicts_with_all = ["family", "data_dir"])]
    shape: Option<ShapeFamily>,
    /// Train on shapes drawn from a family: chair or cross.
    #[arg(long, conflicts_with = "data_dir")]
    family: Option<ShapeFamily>,
    /// Shapes drawn with --family.
    #[arg(long, requires = "family")]
    count: Option<usize>,
    /// Train on the .xyz files of a directory.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Record elapsed seconds in the log.
    #[arg(long)]
    wall_time: bool,
    /// Print progress every this many steps.
    #[arg(long, default_value_t = 0)]
    progress: u64,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Samples (2-D) or points per set (3-D).
    #[arg(short, long, default_value_t = 1000)]
    n: usize,
    /// Sampling conditions, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "sweep")]
    c_sp: Vec<f64>,
    /// Sample at c_sp = 0, 0.025, 0.05, 0.075 and 0.1.
    #[arg(long)]
    sweep: bool,
    /// Latent scales, comma separated (3-D).
    #[arg(long, value_delimiter = ',')]
    sigma_z: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add a logp column (2-D).
    #[arg(long)]
    logp: bool,
    /// Reconstruct this point file instead of sampling the prior (3-D).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Point sets per setting (3-D).
    #[arg(long, default_value_t = 1)]
    sets: usize,
    /// Refuse checkpoints of any other kind.
    #[arg(long)]
    kind: Option<ExperimentKind>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "gen")]
    gen_dir: PathBuf,
    #[arg(long = "ref")]
    ref_dir: PathBuf,
    /// cd, emd, or both comma separated.
    #[arg(long, value_delimiter = ',', default_value = "cd,emd")]
    metric: Vec<Metric>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DatagenArgs {
    /// 2-D dataset to write.
    #[arg(long, conflicts_with_all = ["shape", "family"], required_unless_present_any = ["shape", "family"])]
    dataset: Option<ToyDataset>,
    /// Sample one shape repeatedly: chair or cross.
    #[arg(long, conflicts_with = "family")]
    shape: Option<ShapeFamily>,
    /// Draw shapes from a family: chair or cross.
    #[arg(long)]
    family: Option<ShapeFamily>,
    /// Points in the 2-D dataset.
    #[arg(short, long, default_value_t = 10_000)]
    n: usize,
    /// Point sets to write.
    #[arg(long, default_value_t = 16)]
    count: usize,
    /// Points per set.
    #[arg(long, default_value_t = 128)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn base_shape(f: ShapeFamily) -> Shape {
    match f {
        ShapeFamily::Chair => Shape::chair(),
        ShapeFamily::Cross => Shape::cross(),
    }
}

fn train_config(a: &TrainArgs) -> softflow::Result<RunConfig> {
    let mut cfg = match (&a.config, &a.resume) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(ck)) => Checkpoint::load(ck)?.config,
        (None, None) => RunConfig::for_kind(a.kind.unwrap_or(ExperimentKind::SoftFlow2d)),
    };
    if let Some(kind) = a.kind {
        if kind != cfg.kind {
            let mut fresh = RunConfig::for_kind(kind);
            fresh.seed = cfg.seed;
            cfg = fresh;
        }
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = &a.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = a.dataset {
        cfg.toy.dataset = v;
    }
    if let Some(v) = a.batch {
        if cfg.kind.is_2d() {
            cfg.toy.batch = v;
        } else {
            cfg.point.batch = v;
        }
    }
    if let Some(v) = a.lr {
        if cfg.kind.is_2d() {
            cfg.toy.lr = v;
        } else {
            cfg.point.lr = v;
        }
    }
    let mut s = cfg.schedule();
    s.a = a.a.unwrap_or(s.a);
    s.b = a.b.unwrap_or(s.b);
    s.scale = a.scale.unwrap_or(s.scale);
    if a.ablation {
        s = s.baseline();
    }
    let s = NoiseSchedule::new(s.a, s.b, s.scale).map_err(|e| Error::Config {
        field: "schedule".into(),
        msg: e.to_string(),
    })?;
    if cfg.kind.is_2d() {
        cfg.toy.schedule = s;
    } else {
        cfg.point.schedule = s;
    }
    if let Some(v) = a.points {
        cfg.point.points = v;
    }
    if let Some(v) = a.latent {
        cfg.point.latent = v;
    }
    if let Some(f) = a.shape {
        cfg.point.data = PointData::Shape { shape: base_shape(f) };
    }
    if let Some(family) = a.family {
        cfg.point.data = PointData::Family {
            family,
            count: a.count.unwrap_or(16),
        };
    }
    if let Some(p) = &a.data_dir {
        cfg.point.data = PointData::Dir { path: p.clone() };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> softflow::Result<()> {
    match cli.cmd {
        Cmd::Train(a) => {
            let cfg = train_config(&a)?;
            let report = cmd_train(
                &cfg,
                &TrainOptions {
                    resume: a.resume.clone(),
                    wall_time: a.wall_time,
                    progress_every: a.progress,
                },
            )?;
            println!(
                "trained {} steps, final loss {}, checkpoint {}",
                report.steps,
                report.last_loss,
                report.checkpoint.display()
            );
        }
        Cmd::Sample(a) => {
            let c_sp = if a.sweep {
                CSP_SWEEP.to_vec()
            } else if a.c_sp.is_empty() {
                vec![0.0]
            } else {
                a.c_sp
            };
            let files = cmd_sample(&SampleOptions {
                checkpoint: a.checkpoint,
                out: a.out,
                n: a.n,
                c_sp,
                sigma_z: a.sigma_z,
                seed: a.seed,
                logp: a.logp,
                input: a.input,
                sets: a.sets,
                expect: a.kind,
            })?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Cmd::Eval(a) => {
            let report = cmd_eval(&EvalOptions {
                gen_dir: a.gen_dir,
                ref_dir: a.ref_dir,
                metrics: a.metric,
                out: a.out,
            })?;
            for (m, acc) in report.one_nna {
                println!("1-NNA {m}: {acc}% ({} gen, {} ref)", report.n_gen, report.n_ref);
            }
        }
        Cmd::Datagen(a) => {
            let source = match (a.dataset, a.shape, a.family) {
                (Some(dataset), _, _) => DatagenSource::Toy { dataset, n: a.n },
                (_, Some(f), _) => DatagenSource::Shape {
                    shape: base_shape(f),
                    count: a.count,
                    points: a.points,
                },
                (_, _, Some(family)) => DatagenSource::Family {
                    family,
                    count: a.count,
                    points: a.points,
                },
                _ => unreachable!("clap requires one source"),
            };
            let files = cmd_datagen(&DatagenOptions {
                source,
                seed: a.seed,
                out: a.out,
            })?;
            println!("wrote {} files", files.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
