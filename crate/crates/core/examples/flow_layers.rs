//! Builds a conditioned coupling stack and an autoregressive stack, checks
//! that both invert, and scores a few points.
//!
//!     cargo run --release --example flow_layers

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use softflow::flows::{stack_logprob, BlockKind, ConditionVector, FlowStack, FlowStackConfig};
use softflow::{ParamStore, Result, Tape, Tensor};

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for kind in [BlockKind::Coupling, BlockKind::Autoregressive] {
        let mut store = ParamStore::new();
        let cfg = FlowStackConfig {
            dim: 3,
            blocks: 4,
            kind,
            width: 16,
            depth: 1,
            c_dim: 1,
            global_dim: 0,
            kernel: 1,
        };
        let stack = FlowStack::build(&mut store, "flow", &cfg, &mut rng)?;
        // move away from the identity so the check means something
        store.perturb(0.2, &mut rng);

        let z = Tensor::randn(&[1000, 3], 1.0, &mut rng);
        let cond = ConditionVector::constant(0.5, 1000)?;
        let tape = Tape::new();
        let c = cond.on(&tape);
        let (x, ld_fwd) = stack.forward(&tape, &store, tape.constant(z.clone()), &c)?;
        let (back, ld_inv) = stack.inverse(&tape, &store, x, &c)?;
        let ld_gap = ld_fwd.add(ld_inv)?.value().data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!(
            "{kind:?}: {} layers, {} parameters, round-trip error {:.1e}, log-det gap {ld_gap:.1e}",
            stack.layers.len(),
            store.numel(),
            back.value().max_abs_diff(&z),
        );

        let pts = Tensor::from_rows(&[[0.0, 0.0, 0.0], [1.0, -1.0, 0.5]])?;
        let lp = stack_logprob(&pts, &ConditionVector::constant(0.5, 2)?, &stack, &store)?;
        println!("  log p at origin {:.4}, at (1, -1, 0.5) {:.4}", lp[0], lp[1]);
    }
    Ok(())
}
