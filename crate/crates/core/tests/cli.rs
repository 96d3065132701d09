use std::fs;
use std::path::Path;
use std::process::Command;

use softflow::io::Checkpoint;
use softflow::metrics::Metric;
use softflow::pointflow::ShapeFamily;
use softflow::run::{
    cmd_datagen, cmd_eval, cmd_sample, cmd_train, DatagenOptions, DatagenSource, EvalOptions, ExperimentKind,
    RunConfig, SampleOptions, TrainOptions, CSP_SWEEP,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_softflow"))
}

fn toy_run(dir: &Path, steps: u64) -> RunConfig {
    let mut cfg = RunConfig::for_kind(ExperimentKind::SoftFlow2d);
    cfg.seed = 7;
    cfg.steps = steps;
    cfg.checkpoint_every = 250;
    cfg.out_dir = dir.to_path_buf();
    cfg
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn train_logs_every_step_and_resumes_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let report = cmd_train(&toy_run(&a, 500), &TrainOptions::default()).unwrap();
    assert_eq!(report.steps, 500);
    let rows = data_rows(&report.log);
    assert_eq!(rows.len(), 500);
    let loss = |r: &str| r.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!(loss(&rows[499]) < loss(&rows[0]));
    assert!(rows.iter().all(|r| r.ends_with(",NA")));
    let header = fs::read_to_string(&report.log).unwrap();
    assert!(header.contains("# ablation=false\n"));
    assert!(header.contains("step,loss_nats,lr,wall_time_s\n"));

    let b = tmp.path().join("b");
    fs::create_dir_all(&b).unwrap();
    let resumed = cmd_train(
        &toy_run(&b, 500),
        &TrainOptions {
            resume: Some(a.join("checkpoints/step_000250.json")),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let ca = Checkpoint::load(&report.checkpoint).unwrap();
    let cb = Checkpoint::load(&resumed.checkpoint).unwrap();
    assert_eq!(ca.step, cb.step);
    assert_eq!(ca.sections, cb.sections);
    assert_eq!(ca.optimizer, cb.optimizer);
    assert_eq!(data_rows(&resumed.log), rows[250..].to_vec());
}

#[test]
fn resume_into_the_same_directory_reproduces_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let first = cmd_train(&toy_run(&out, 40), &TrainOptions::default()).unwrap();
    let log = fs::read(&first.log).unwrap();
    let ck = fs::read(&first.checkpoint).unwrap();
    let mut cfg = toy_run(&out, 40);
    cfg.checkpoint_every = 20;
    cmd_train(&cfg, &TrainOptions::default()).unwrap();
    cmd_train(
        &cfg,
        &TrainOptions {
            resume: Some(out.join("checkpoints/step_000020.json")),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    assert_eq!(fs::read(&first.log).unwrap(), log);
    let again = Checkpoint::load(&first.checkpoint).unwrap();
    let orig: Checkpoint = serde_json::from_slice(&ck).unwrap();
    assert_eq!(again.sections, orig.sections);
}

#[test]
fn ablation_is_recorded_in_the_log_header() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = toy_run(tmp.path(), 3);
    cfg.toy.schedule = cfg.toy.schedule.baseline();
    let r = cmd_train(&cfg, &TrainOptions::default()).unwrap();
    let text = fs::read_to_string(r.log).unwrap();
    assert!(text.contains("# a=0\n# b=0\n"));
    assert!(text.contains("# ablation=true\n"));
}

#[test]
fn sampling_sweeps_and_repeats_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let r = cmd_train(&toy_run(&tmp.path().join("run"), 5), &TrainOptions::default()).unwrap();
    let mut opts = SampleOptions::new(&r.checkpoint, tmp.path().join("s1"), 50);
    opts.c_sp = CSP_SWEEP.to_vec();
    opts.logp = true;
    let files = cmd_sample(&opts).unwrap();
    assert_eq!(files.iter().filter(|f| f.extension().unwrap() == "csv").count(), 5);
    for c in ["0", "0.025", "0.05", "0.075", "0.1"] {
        let p = tmp.path().join(format!("s1/samples_csp{c}.csv"));
        assert_eq!(data_rows(&p).len(), 50);
        assert!(tmp.path().join(format!("s1/samples_csp{c}.svg")).exists());
    }
    opts.out = tmp.path().join("s2");
    cmd_sample(&opts).unwrap();
    for f in &files {
        let twin = tmp.path().join("s2").join(f.file_name().unwrap());
        assert_eq!(fs::read(f).unwrap(), fs::read(twin).unwrap());
    }

    let mut empty = SampleOptions::new(&r.checkpoint, tmp.path().join("e"), 0);
    empty.logp = true;
    cmd_sample(&empty).unwrap();
    let text = fs::read_to_string(tmp.path().join("e/samples_csp0.csv")).unwrap();
    assert!(text.ends_with("x,y,logp\n"));
    assert!(data_rows(&tmp.path().join("e/samples_csp0.csv")).is_empty());
}

#[test]
fn sampling_rejects_the_wrong_model_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let r = cmd_train(&toy_run(&tmp.path().join("run"), 2), &TrainOptions::default()).unwrap();
    let mut opts = SampleOptions::new(&r.checkpoint, tmp.path().join("s"), 10);
    opts.expect = Some(ExperimentKind::SoftPointFlow);
    assert!(cmd_sample(&opts).unwrap_err().to_string().contains("mismatch"));
    let mut opts = SampleOptions::new(&r.checkpoint, tmp.path().join("s"), 10);
    opts.sigma_z = vec![1.0];
    assert!(cmd_sample(&opts).unwrap_err().to_string().contains("mismatch"));
}

#[test]
fn point_model_sampling_writes_projections() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::for_kind(ExperimentKind::SoftPointFlow);
    cfg.steps = 3;
    cfg.point.points = 32;
    cfg.point.latent = 8;
    cfg.point.width = 8;
    cfg.point.encoder_hidden = 8;
    cfg.out_dir = tmp.path().join("p");
    let r = cmd_train(&cfg, &TrainOptions::default()).unwrap();
    let mut opts = SampleOptions::new(&r.checkpoint, tmp.path().join("s"), 40);
    opts.sigma_z = vec![0.5, 1.0, 1.5];
    let files = cmd_sample(&opts).unwrap();
    assert_eq!(files.len(), 3 * 5);
    for suffix in ["_xy.svg", "_xz.svg", "_yz.svg", ".xyz"] {
        assert!(tmp.path().join(format!("s/samples_csp0_sz1.5{suffix}")).exists());
    }
    assert_eq!(data_rows(&tmp.path().join("s/samples_csp0_sz0.5.csv")).len(), 40);
}

fn family(out: &Path, seed: u64, count: usize) {
    cmd_datagen(&DatagenOptions {
        source: DatagenSource::Family {
            family: ShapeFamily::Chair,
            count,
            points: 32,
        },
        seed,
        out: out.to_path_buf(),
    })
    .unwrap();
}

#[test]
fn eval_duplicates_splits_and_arity() {
    let tmp = tempfile::tempdir().unwrap();
    let (g, r) = (tmp.path().join("g"), tmp.path().join("r"));
    family(&g, 1, 30);
    family(&r, 2, 30);
    let opts = |gen: &Path, reference: &Path, out: &str| EvalOptions {
        gen_dir: gen.to_path_buf(),
        ref_dir: reference.to_path_buf(),
        metrics: vec![Metric::Cd, Metric::Emd],
        out: tmp.path().join(out),
    };
    let same = cmd_eval(&opts(&r, &r, "same")).unwrap();
    assert!(same.one_nna.iter().all(|(_, acc)| *acc == 0.0));
    let split = cmd_eval(&opts(&g, &r, "split")).unwrap();
    for (m, acc) in &split.one_nna {
        assert!((40.0..=60.0).contains(acc), "{m}: {acc}");
    }
    assert_eq!(data_rows(&tmp.path().join("split/distances.csv")).len(), 2 * 30 * 30);
    let summary = fs::read_to_string(tmp.path().join("split/one_nna.csv")).unwrap();
    assert!(summary.starts_with("metric,n_gen,n_ref,accuracy_pct\n"));

    let (g1, r1) = (tmp.path().join("g1"), tmp.path().join("r1"));
    family(&g1, 3, 1);
    family(&r1, 4, 1);
    let err = cmd_eval(&opts(&g1, &r1, "single")).unwrap_err().to_string();
    assert!(err.contains("at least 2"), "{err}");
    assert_eq!(data_rows(&tmp.path().join("single/distances.csv")).len(), 2);
}

#[test]
fn eval_names_bad_files_and_mismatched_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g");
    family(&g, 1, 2);
    fs::write(g.join("zz.xyz"), "1 2 3\n4 5\n").unwrap();
    let opts = EvalOptions {
        gen_dir: g.clone(),
        ref_dir: g.clone(),
        metrics: vec![Metric::Cd],
        out: tmp.path().join("o"),
    };
    assert!(cmd_eval(&opts).unwrap_err().to_string().contains("zz.xyz"));
    fs::write(g.join("zz.xyz"), "1 2 3\n4 5 6\n").unwrap();
    assert!(cmd_eval(&opts).unwrap_err().to_string().contains("cardinality"));
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().args(["train", "--bogus"]).output().unwrap().status.code(), Some(1));
    assert_eq!(bin().args(["sample"]).output().unwrap().status.code(), Some(1));
    let missing = bin()
        .args(["sample", "--checkpoint", "/nonexistent/ck.json", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("ck.json"));
    let bad = bin()
        .args(["train", "--steps", "0", "--out"])
        .arg(tmp.path())
        .status()
        .unwrap();
    assert_eq!(bad.code(), Some(1));
    let ok = bin()
        .args(["train", "--steps", "3", "--dataset", "circles", "--ablation", "--out"])
        .arg(tmp.path().join("t"))
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));
    let cfg = RunConfig::load(&tmp.path().join("t/config.toml")).unwrap();
    assert!(cfg.toy.schedule.is_zero());
}

#[test]
fn datagen_writes_toy_csv_and_point_files() {
    let tmp = tempfile::tempdir().unwrap();
    let files = cmd_datagen(&DatagenOptions {
        source: DatagenSource::Toy {
            dataset: softflow::softflow::ToyDataset::TwoSines,
            n: 100,
        },
        seed: 0,
        out: tmp.path().to_path_buf(),
    })
    .unwrap();
    assert_eq!(data_rows(&files[0]).len(), 100);
    let pts = tmp.path().join("pts");
    family(&pts, 5, 3);
    let sets = softflow::io::read_point_dir(&pts).unwrap();
    assert_eq!(sets.len(), 3);
    assert!(sets.iter().all(|(_, t)| t.rows() == 32));
}
