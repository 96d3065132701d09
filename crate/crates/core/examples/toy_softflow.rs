//! Trains a noise-conditioned flow and an unconditioned baseline on a 2-D
//! toy set, then samples both across the `c_sp` sweep and writes the
//! samples as CSV and SVG.
//!
//!     cargo run --release --example toy_softflow -- [dataset] [steps] [out_dir]
//!
//! `dataset` is one of 2sines, target, circles, two-arcs, line-grid.

use std::path::PathBuf;

use softflow::io::{scatter, write_numeric};
use softflow::rng::{aux_rng, Purpose};
use softflow::run::CSP_SWEEP;
use softflow::softflow::{manifold_distance, softflow_sample, BackendConfig, SoftFlowConfig, SoftFlowTrainer, ToyDataset};
use softflow::Result;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dataset: ToyDataset = args.first().map(|s| s.parse()).transpose()?.unwrap_or(ToyDataset::TwoSines);
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let out = PathBuf::from(args.get(2).cloned().unwrap_or_else(|| "toy_softflow_out".into()));
    std::fs::create_dir_all(&out)?;

    for baseline in [false, true] {
        let mut cfg = SoftFlowConfig {
            dataset,
            lr: 5e-3,
            backend: BackendConfig::cnf(),
            ..SoftFlowConfig::default()
        };
        if baseline {
            cfg.schedule = cfg.schedule.baseline();
        }
        let label = if baseline { "baseline" } else { "softflow" };
        let mut trainer = SoftFlowTrainer::new(cfg, 0)?;
        trainer.train_until(steps, |step, loss, _| {
            if step % 250 == 0 {
                println!("{label} step {step:>5} loss {loss:.3}");
            }
        })?;

        for c_sp in CSP_SWEEP {
            // the same latents at every c_sp
            let mut rng = aux_rng(0, Purpose::Sample);
            let x = softflow_sample(2000, c_sp, &trainer.cfg.schedule, &trainer.backend, &trainer.store, &mut rng)?;
            let dist = manifold_distance(&x, dataset)?;
            println!("{label} c_sp {c_sp:<5} mean distance to the data manifold {dist:.4}");

            let stem = format!("{label}_csp{c_sp}");
            let rows: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
            write_numeric(&out.join(format!("{stem}.csv")), &[], &["x", "y"], &rows)?;
            let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
            std::fs::write(out.join(format!("{stem}.svg")), scatter(&pts, &stem, Some((-4.0, 4.0))))?;
        }
    }
    println!("samples written to {}", out.display());
    Ok(())
}
