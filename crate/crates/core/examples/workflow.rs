//! The train → sample → eval workflow that the `softflow` binary exposes,
//! driven from code. Every output lands under one directory.
//!
//!     cargo run --release --example workflow -- [out_dir]

use std::path::PathBuf;

use softflow::metrics::Metric;
use softflow::pointflow::ShapeFamily;
use softflow::run::{
    cmd_datagen, cmd_eval, cmd_sample, cmd_train, DatagenOptions, DatagenSource, EvalOptions, ExperimentKind,
    RunConfig, SampleOptions, TrainOptions, CSP_SWEEP,
};
use softflow::softflow::ToyDataset;
use softflow::Result;

fn main() -> Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "workflow_out".into()));

    let toy = cmd_datagen(&DatagenOptions {
        source: DatagenSource::Toy {
            dataset: ToyDataset::Circles,
            n: 1000,
        },
        seed: 0,
        out: root.join("data"),
    })?;
    println!("datagen wrote {}", toy[0].display());

    let mut cfg = RunConfig::for_kind(ExperimentKind::Cnf2d);
    cfg.toy.dataset = ToyDataset::Circles;
    cfg.steps = 300;
    cfg.checkpoint_every = 100;
    cfg.out_dir = root.join("train");
    let report = cmd_train(&cfg, &TrainOptions::default())?;
    println!("trained {} steps, last loss {:.3}", report.steps, report.last_loss);

    let mut opts = SampleOptions::new(&report.checkpoint, root.join("samples"), 1000);
    opts.c_sp = CSP_SWEEP.to_vec();
    opts.logp = true;
    let files = cmd_sample(&opts)?;
    println!("sampling wrote {} files", files.len());

    for (dir, seed) in [("gen", 1), ("ref", 2)] {
        cmd_datagen(&DatagenOptions {
            source: DatagenSource::Family {
                family: ShapeFamily::Chair,
                count: 20,
                points: 64,
            },
            seed,
            out: root.join(dir),
        })?;
    }
    let eval = cmd_eval(&EvalOptions {
        gen_dir: root.join("gen"),
        ref_dir: root.join("ref"),
        metrics: vec![Metric::Cd, Metric::Emd],
        out: root.join("eval"),
    })?;
    for (metric, acc) in &eval.one_nna {
        println!("1-NNA {metric}: {acc:.1}% over {} + {} sets", eval.n_gen, eval.n_ref);
    }
    Ok(())
}
