use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::io::{read_point_dir, read_points, scatter, write_points, Checkpoint, CsvOut, Sidecar};
use crate::metrics::{one_nna_from_matrix, Metric};
use crate::pointflow::{PointSet, Shape, ShapeFamily};
use crate::rng::{aux_rng, Purpose};
use crate::softflow::{density, sample, softflow_sample, ToyDataset};
use crate::tensor::Tensor;

use super::{resolve_out, ExperimentKind, Model, RunConfig, Trainer};

/// Sampling conditions of the `--sweep` flag.
pub const CSP_SWEEP: [f64; 5] = [0.0, 0.025, 0.05, 0.075, 0.1];

/// Columns of `train_log.csv`. Loss is in nats (per point for the
/// point-set model); the wall-time column is `NA` unless requested.
pub const LOG_COLUMNS: [&str; 4] = ["step", "loss_nats", "lr", "wall_time_s"];

const VIEW_2D: (f64, f64) = (-4.0, 4.0);

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint instead of starting fresh.
    pub resume: Option<PathBuf>,
    /// Record elapsed seconds in the log. Makes the log non-reproducible.
    pub wall_time: bool,
    /// Print a progress line every this many steps; 0 is silent.
    pub progress_every: u64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub out_dir: PathBuf,
    /// Final checkpoint, `<out>/checkpoint.json`.
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub steps: u64,
    pub last_loss: f64,
}

fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.json")
}

/// Fields that may change when a run is resumed.
fn same_run(a: &RunConfig, b: &RunConfig) -> bool {
    let mut b = b.clone();
    b.steps = a.steps;
    b.checkpoint_every = a.checkpoint_every;
    b.out_dir = a.out_dir.clone();
    *a == b
}

/// Trains `cfg.steps` steps, writing `config.toml`, `train_log.csv`,
/// periodic checkpoints under `checkpoints/`, and `checkpoint.json`.
///
/// On resume the model, optimizer and step come from the checkpoint, and
/// log rows past its step are dropped before new rows are appended, so the
/// finished directory matches an uninterrupted run.
pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    let out = cfg.resolved_out_dir();
    let ck_dir = out.join("checkpoints");
    fs::create_dir_all(&ck_dir)?;
    let log_path = out.join("train_log.csv");

    let mut trainer = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if !same_run(cfg, &ck.config) {
                return Err(Error::config(
                    "resume",
                    format!("{} was written by a different configuration", path.display()),
                ));
            }
            truncate_log(&log_path, ck.step)?;
            Trainer::resume(&ck)?
        }
        None => {
            if log_path.exists() {
                fs::remove_file(&log_path)?;
            }
            Trainer::new(cfg)?
        }
    };
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;

    let header = cfg.header();
    let mut log = CsvOut::append(&log_path, &header, &LOG_COLUMNS)?;
    let start = Instant::now();
    let mut last_loss = f64::NAN;
    while trainer.steps_done() < cfg.steps {
        let lr = trainer.lr();
        let loss = trainer.step()?;
        let step = trainer.steps_done();
        if !loss.is_finite() {
            log.finish()?;
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        last_loss = loss;
        let wall = if opts.wall_time {
            format!("{:.3}", start.elapsed().as_secs_f64())
        } else {
            "NA".to_string()
        };
        log.row([step.to_string(), loss.to_string(), lr.to_string(), wall])?;
        if opts.progress_every > 0 && step % opts.progress_every == 0 {
            eprintln!("step {step:>7}  loss {loss:.4}  lr {lr:.2e}");
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps {
            Checkpoint::capture(cfg, step, trainer.store(), trainer.adam()).save(&ck_dir.join(checkpoint_name(step)))?;
        }
    }
    log.finish()?;
    let steps = trainer.steps_done();
    let ck = Checkpoint::capture(cfg, steps, trainer.store(), trainer.adam());
    ck.save(&ck_dir.join(checkpoint_name(steps)))?;
    let final_path = out.join("checkpoint.json");
    ck.save(&final_path)?;
    Ok(TrainReport {
        out_dir: out,
        checkpoint: final_path,
        log: log_path,
        steps,
        last_loss,
    })
}

fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let mut kept = String::with_capacity(text.len());
    for line in text.lines() {
        let keep = match line.split(',').next().and_then(|f| f.parse::<u64>().ok()) {
            Some(s) => s <= step,
            None => true,
        };
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SampleOptions {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    /// Samples (2-D) or points per set (3-D).
    pub n: usize,
    pub c_sp: Vec<f64>,
    /// Latent scales for the point-set model; empty means `[1.0]`.
    pub sigma_z: Vec<f64>,
    pub seed: u64,
    /// Add a `logp` column (2-D only).
    pub logp: bool,
    /// Reconstruct this point file instead of sampling the prior (3-D only).
    pub input: Option<PathBuf>,
    /// Point sets per setting (3-D only).
    pub sets: usize,
    /// Fail unless the checkpoint holds this kind.
    pub expect: Option<ExperimentKind>,
}

impl SampleOptions {
    pub fn new(checkpoint: impl Into<PathBuf>, out: impl Into<PathBuf>, n: usize) -> Self {
        Self {
            checkpoint: checkpoint.into(),
            out: out.into(),
            n,
            c_sp: vec![0.0],
            sigma_z: Vec::new(),
            seed: 0,
            logp: false,
            input: None,
            sets: 1,
            expect: None,
        }
    }
}

fn mismatch(kind: ExperimentKind, what: &str) -> Error {
    Error::Invalid(format!("model-kind mismatch: checkpoint holds a {kind} model, {what}"))
}

/// Draws samples for every requested setting. Each setting restarts the
/// sampling generator from the same seed, so sweeps differ only in the
/// swept value. Returns the files written.
pub fn cmd_sample(opts: &SampleOptions) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(&opts.checkpoint)?;
    let kind = ck.config.kind;
    if let Some(want) = opts.expect {
        if want != kind {
            return Err(mismatch(kind, &format!("expected {want}")));
        }
    }
    if opts.c_sp.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::config("c_sp", "values must be finite and non-negative"));
    }
    if opts.sigma_z.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::config("sigma_z", "values must be finite and non-negative"));
    }
    let out = resolve_out(&opts.out);
    fs::create_dir_all(&out)?;
    let model = Model::from_checkpoint(&ck)?;
    let mut base = vec![
        ("kind".to_string(), kind.name().to_string()),
        ("checkpoint_step".to_string(), ck.step.to_string()),
        ("seed".to_string(), opts.seed.to_string()),
    ];
    let mut written = Vec::new();
    match &model {
        Model::Toy { backend, store } => {
            if !opts.sigma_z.is_empty() || opts.input.is_some() || opts.sets != 1 {
                return Err(mismatch(kind, "but sigma_z, input and sets apply to point-set models"));
            }
            let sched = ck.config.toy.schedule;
            for &c in &opts.c_sp {
                let mut rng = aux_rng(opts.seed, Purpose::Sample);
                let x = softflow_sample(opts.n, c, &sched, backend, store, &mut rng)?;
                let lp = if opts.logp {
                    Some(density(&x, c * sched.scale, backend, store)?)
                } else {
                    None
                };
                let stem = format!("samples_csp{c}");
                let mut comments = base.clone();
                comments.push(("c_sp".into(), c.to_string()));
                let header: &[&str] = if opts.logp { &["x", "y", "logp"] } else { &["x", "y"] };
                let csv = out.join(format!("{stem}.csv"));
                let mut w = CsvOut::create(&csv, &comments, header)?;
                for i in 0..x.rows() {
                    let r = x.row(i);
                    let mut fields = vec![r[0].to_string(), r[1].to_string()];
                    if let Some(lp) = &lp {
                        fields.push(lp[i].to_string());
                    }
                    w.row(fields)?;
                }
                w.finish()?;
                let svg = out.join(format!("{stem}.svg"));
                let pts: Vec<(f64, f64)> = (0..x.rows()).map(|i| (x.row(i)[0], x.row(i)[1])).collect();
                fs::write(&svg, scatter(&pts, &format!("{kind} c_sp={c}"), Some(VIEW_2D)))?;
                written.extend([csv, svg]);
            }
        }
        Model::Point { model, store } => {
            if opts.logp {
                return Err(mismatch(kind, "but logp applies to 2-D models"));
            }
            let input = match &opts.input {
                Some(p) => {
                    base.push(("input".into(), p.display().to_string()));
                    Some(PointSet::ingest(&read_points(p)?, p.display().to_string())?)
                }
                None => None,
            };
            let sigmas = if opts.sigma_z.is_empty() { vec![1.0] } else { opts.sigma_z.clone() };
            for &c in &opts.c_sp {
                for &sz in &sigmas {
                    let mut rng = aux_rng(opts.seed, Purpose::Sample);
                    for k in 0..opts.sets {
                        let pts = match &input {
                            Some(set) => {
                                let r = model.reconstruct(store, set, opts.n, c, sz, &mut rng)?;
                                r.to_original(&r.points)
                            }
                            None => model.generate(store, opts.n, c, sz, &mut rng)?.points,
                        };
                        let mut stem = format!("samples_csp{c}_sz{sz}");
                        if opts.sets > 1 {
                            stem.push_str(&format!("_set{k:03}"));
                        }
                        let mut comments = base.clone();
                        comments.push(("c_sp".into(), c.to_string()));
                        comments.push(("sigma_z".into(), sz.to_string()));
                        written.extend(write_3d(&out, &stem, &pts, &comments)?);
                    }
                }
            }
        }
    }
    Ok(written)
}

fn write_3d(out: &Path, stem: &str, pts: &Tensor, comments: &[(String, String)]) -> Result<Vec<PathBuf>> {
    let csv = out.join(format!("{stem}.csv"));
    let mut w = CsvOut::create(&csv, comments, &["x", "y", "z"])?;
    for i in 0..pts.rows() {
        w.row(pts.row(i).iter().map(|v| v.to_string()))?;
    }
    w.finish()?;
    let xyz = out.join(format!("{stem}.xyz"));
    write_points(&xyz, pts, None)?;
    let mut files = vec![csv, xyz];
    for (name, a, b) in [("xy", 0, 1), ("xz", 0, 2), ("yz", 1, 2)] {
        let proj: Vec<(f64, f64)> = (0..pts.rows()).map(|i| (pts.row(i)[a], pts.row(i)[b])).collect();
        let path = out.join(format!("{stem}_{name}.svg"));
        fs::write(&path, scatter(&proj, &format!("{stem} {name}"), None))?;
        files.push(path);
    }
    Ok(files)
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub gen_dir: PathBuf,
    pub ref_dir: PathBuf,
    pub metrics: Vec<Metric>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n_gen: usize,
    pub n_ref: usize,
    /// 1-NNA in percent per metric.
    pub one_nna: Vec<(Metric, f64)>,
}

/// Compares every `.xyz` set in `gen_dir` with every set in `ref_dir`.
/// Writes `distances.csv` (`gen_id,ref_id,metric,value`), then
/// `one_nna.csv`. With fewer than two sets in either list the distances
/// are still written and 1-NNA is refused.
pub fn cmd_eval(opts: &EvalOptions) -> Result<EvalReport> {
    if opts.metrics.is_empty() {
        return Err(Error::config("metric", "at least one metric is required"));
    }
    let gen = read_point_dir(&opts.gen_dir)?;
    let reference = read_point_dir(&opts.ref_dir)?;
    if gen.is_empty() || reference.is_empty() {
        return Err(Error::Empty);
    }
    let m = gen[0].1.rows();
    for (id, pts) in gen.iter().chain(&reference) {
        if pts.rows() != m {
            return Err(Error::Invalid(format!(
                "cardinality mismatch: set `{id}` has {} points, expected {m}",
                pts.rows()
            )));
        }
    }
    let out = resolve_out(&opts.out);
    fs::create_dir_all(&out)?;
    let (g, r) = (gen.len(), reference.len());
    let pooled: Vec<&Tensor> = gen.iter().chain(&reference).map(|(_, t)| t).collect();
    let n = pooled.len();
    let mut dist = CsvOut::create(&out.join("distances.csv"), &[], &["gen_id", "ref_id", "metric", "value"])?;
    let mut matrices = Vec::with_capacity(opts.metrics.len());
    for &metric in &opts.metrics {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = metric.distance(pooled[i], pooled[j])?;
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        for (i, (gid, _)) in gen.iter().enumerate() {
            for (j, (rid, _)) in reference.iter().enumerate() {
                dist.row([gid.as_str(), rid.as_str(), metric.name(), &d[i * n + g + j].to_string()])?;
            }
        }
        matrices.push((metric, d));
    }
    dist.finish()?;
    if g < 2 || r < 2 {
        return Err(Error::Invalid(format!(
            "1-NNA needs at least 2 sets per list, got {g} generated and {r} reference"
        )));
    }
    let mut w = CsvOut::create(&out.join("one_nna.csv"), &[], &["metric", "n_gen", "n_ref", "accuracy_pct"])?;
    let mut one_nna = Vec::new();
    for (metric, d) in matrices {
        let acc = one_nna_from_matrix(&d, g, r);
        w.row([metric.name().to_string(), g.to_string(), r.to_string(), acc.to_string()])?;
        one_nna.push((metric, acc));
    }
    w.finish()?;
    Ok(EvalReport {
        n_gen: g,
        n_ref: r,
        one_nna,
    })
}

#[derive(Clone, Debug)]
pub enum DatagenSource {
    /// `n` points of a 2-D dataset.
    Toy { dataset: ToyDataset, n: usize },
    /// `count` independent samplings of one shape.
    Shape { shape: Shape, count: usize, points: usize },
    /// `count` shapes drawn from a family.
    Family {
        family: ShapeFamily,
        count: usize,
        points: usize,
    },
}

#[derive(Clone, Debug)]
pub struct DatagenOptions {
    pub source: DatagenSource,
    pub seed: u64,
    pub out: PathBuf,
}

/// Writes a 2-D dataset as `<dataset>.csv` and `.svg`, or point sets as
/// `shapeNNN.xyz` files with sidecars. Point files hold original
/// coordinates; the sidecar records the ingest normalization.
pub fn cmd_datagen(opts: &DatagenOptions) -> Result<Vec<PathBuf>> {
    let out = resolve_out(&opts.out);
    fs::create_dir_all(&out)?;
    let mut rng = aux_rng(opts.seed, Purpose::Data);
    let comments = vec![("seed".to_string(), opts.seed.to_string())];
    match opts.source {
        DatagenSource::Toy { dataset, n } => {
            let x = sample(dataset, n, &mut rng)?;
            let csv = out.join(format!("{dataset}.csv"));
            let mut c = comments.clone();
            c.insert(0, ("dataset".into(), dataset.name().into()));
            let mut w = CsvOut::create(&csv, &c, &["x", "y"])?;
            for i in 0..x.rows() {
                w.row(x.row(i).iter().map(|v| v.to_string()))?;
            }
            w.finish()?;
            let svg = out.join(format!("{dataset}.svg"));
            let pts: Vec<(f64, f64)> = (0..x.rows()).map(|i| (x.row(i)[0], x.row(i)[1])).collect();
            fs::write(&svg, scatter(&pts, dataset.name(), Some(VIEW_2D)))?;
            Ok(vec![csv, svg])
        }
        DatagenSource::Shape { count, points, .. } | DatagenSource::Family { count, points, .. } => {
            if points == 0 || count == 0 {
                return Err(Error::config("points", "count and points must be positive"));
            }
            let mut files = Vec::with_capacity(count);
            for i in 0..count {
                let shape = match opts.source {
                    DatagenSource::Shape { shape, .. } => shape,
                    DatagenSource::Family { family, .. } => family.draw(&mut rng),
                    DatagenSource::Toy { .. } => unreachable!(),
                };
                let pts = shape.sample(points, &mut rng);
                let id = format!("shape{i:03}");
                let set = PointSet::ingest(&pts, id.clone())?;
                let path = out.join(format!("{id}.xyz"));
                write_points(
                    &path,
                    &pts,
                    Some(&Sidecar {
                        id,
                        normalization: set.norm,
                    }),
                )?;
                files.push(path);
            }
            Ok(files)
        }
    }
}
