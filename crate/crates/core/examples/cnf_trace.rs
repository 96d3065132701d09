//! Continuous flow with an exact Jacobian trace. Compares the integrated
//! log-density of a linear field with its closed form, then shows that
//! the learned field's trace matches a finite-difference divergence.
//!
//!     cargo run --release --example cnf_trace

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use softflow::cnf::{log_prob_with, CnfConfig, CnfDynamics, LinearField, VelocityField};
use softflow::flows::LN_2PI;
use softflow::{ParamStore, Result, Tape, Tensor};

fn main() -> Result<()> {
    // dz/dt = -z from t = 0 to 1: z = e·x and log p(x) = log N(z) + 2
    let field = LinearField {
        matrix: Tensor::from_rows(&[[-1.0, 0.0], [0.0, -1.0]])?,
    };
    let x = Tensor::from_rows(&[[0.3, -0.8], [1.2, 0.5]])?;
    let store = ParamStore::new();
    for steps in [8, 16, 32] {
        let tape = Tape::new();
        let (_, lp) = log_prob_with(&field, &tape, &store, tape.constant(x.clone()), None, 0.0, 1.0, steps)?;
        let lp = lp.value();
        let gap = (0..2)
            .map(|i| {
                let r2: f64 = x.row(i).iter().map(|v| (v * 1f64.exp()).powi(2)).sum();
                (lp.data()[i] - (-0.5 * r2 - LN_2PI + 2.0)).abs()
            })
            .fold(0.0, f64::max);
        println!("RK4 with {steps:>2} steps: largest gap to the closed form {gap:.2e}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let dynamics = CnfDynamics::new(&mut store, "cnf", &CnfConfig::default(), &mut rng)?;
    store.perturb(0.5, &mut rng);
    let z = Tensor::from_rows(&[[0.4, -0.2]])?;
    let c = Tensor::full(&[1, 1], 1.0);
    let eval = |z: &Tensor| -> Result<(Tensor, f64)> {
        let tape = Tape::new();
        let (f, tr) = dynamics.eval(&tape, &store, tape.constant(z.clone()), 0.5, Some(tape.constant(c.clone())), true)?;
        Ok((f.value(), tr.map(|t| t.value().data()[0]).unwrap_or(0.0)))
    };
    let (_, trace) = eval(&z)?;
    let h = 1e-6;
    let mut div = 0.0;
    for k in 0..2 {
        let (mut up, mut dn) = (z.clone(), z.clone());
        up.data_mut()[k] += h;
        dn.data_mut()[k] -= h;
        div += (eval(&up)?.0.data()[k] - eval(&dn)?.0.data()[k]) / (2.0 * h);
    }
    println!("exact trace {trace:.8}, finite-difference divergence {div:.8}");
    Ok(())
}
