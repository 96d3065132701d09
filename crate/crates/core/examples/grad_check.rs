//! Compares tape gradients of the noise-conditioned loss against central
//! differences for a tiny coupling flow.
//!
//!     cargo run --release --example grad_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use softflow::flows::{BlockKind, FlowStack, FlowStackConfig};
use softflow::softflow::{perturb, sample, softflow_loss, Backend, NoiseSchedule, ToyDataset};
use softflow::{grad_check, ParamStore, Result};

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let stack = FlowStack::build(
        &mut store,
        "flow",
        &FlowStackConfig {
            dim: 2,
            blocks: 2,
            kind: BlockKind::Coupling,
            width: 4,
            depth: 1,
            c_dim: 1,
            global_dim: 0,
            kernel: 1,
        },
        &mut rng,
    )?;
    store.perturb(0.2, &mut rng);
    let backend = Backend::Discrete(stack);

    let x = sample(ToyDataset::TwoSines, 16, &mut rng)?;
    let batch = perturb(&x, &NoiseSchedule::softflow_2d(), &mut rng);
    for step in [1e-3, 1e-4, 1e-5, 1e-6] {
        let err = grad_check(&store, step, |tape, s| softflow_loss(tape, &batch, &backend, s))?;
        println!("step {step:.0e}: largest relative gradient error {err:.2e} over {} parameters", store.numel());
    }
    Ok(())
}
