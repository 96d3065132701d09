//! Trains a small conditioned flow, then integrates its density over a
//! grid at several noise conditions. Each integral should be close to 1.
//!
//!     cargo run --release --example density_grid -- [steps] [grid]

use softflow::softflow::{density, grid_mass, BackendConfig, SoftFlowConfig, SoftFlowTrainer};
use softflow::Result;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(500);
    let grid: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);

    let cfg = SoftFlowConfig {
        lr: 5e-3,
        backend: BackendConfig::cnf(),
        ..SoftFlowConfig::default()
    };
    let mut trainer = SoftFlowTrainer::new(cfg, 1)?;
    trainer.train_until(steps, |_, _, _| {})?;

    for c_in in [0.0, 1.0, 2.0] {
        let mass = grid_mass(grid, -4.0, 4.0, |x| density(x, c_in, &trainer.backend, &trainer.store))?;
        println!("c_in {c_in}: mass over [-4, 4]^2 on a {grid}x{grid} grid = {mass:.4}");
    }
    Ok(())
}
