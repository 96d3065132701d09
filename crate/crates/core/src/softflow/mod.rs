//! Training flows on noise-perturbed 2-D data with the noise level as a
//! condition.
//!
//! Each training point gets its own `c ~ U[a, b]` and is perturbed by
//! `ν ~ N(0, c² I)`. The flow models `p(x + ν | c_in)` with
//! `c_in = scale · c`. Sampling picks a small or zero `c_sp` and pushes
//! normal draws through the conditioned flow.
//!
//! ```
//! use rand::SeedableRng;
//! use softflow::softflow::{perturb, sample_toy, NoiseSchedule};
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
//! let x = sample_toy("2sines", 8, &mut rng).unwrap();
//! let batch = perturb(&x, &NoiseSchedule::new(0.0, 0.1, 20.0).unwrap(), &mut rng);
//! assert!(batch.c_in.data().iter().all(|c| (0.0..=2.0).contains(c)));
//! ```

mod data;
mod train;

pub use data::{manifold_distance, point_distance, sample, sample_toy, SineGrid, ToyDataset, SINE_GRID};
pub use train::{BackendConfig, SoftFlowConfig, SoftFlowTrainer};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cnf::CnfDynamics;
use crate::error::{Error, Result};
use crate::flows::{Cond, ConditionVector, FlowStack};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `c ~ U[a, b]`, `c_in = scale · c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub a: f64,
    pub b: f64,
    pub scale: f64,
}

impl NoiseSchedule {
    /// `a == b` is accepted so that a fixed noise level (including the
    /// unperturbed `a = b = 0` baseline) can share the same code path.
    pub fn new(a: f64, b: f64, scale: f64) -> Result<Self> {
        if !(a >= 0.0 && b >= a && b.is_finite()) {
            return Err(Error::Invalid(format!("noise bounds need 0 <= a <= b, got a = {a}, b = {b}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Invalid(format!("condition scale must be positive, got {scale}")));
        }
        Ok(Self { a, b, scale })
    }

    /// Scale chosen so that the largest condition is `max_c_in`.
    pub fn max_scaled(a: f64, b: f64, max_c_in: f64) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::Invalid(format!("upper bound must be positive, got {b}")));
        }
        Self::new(a, b, max_c_in / b)
    }

    /// Two-dimensional default.
    pub fn softflow_2d() -> Self {
        Self {
            a: 0.0,
            b: 0.1,
            scale: 20.0,
        }
    }

    /// The unperturbed `a = b = 0` ablation, with the same scale.
    pub fn baseline(self) -> Self {
        Self { a: 0.0, b: 0.0, ..self }
    }

    pub fn is_zero(&self) -> bool {
        self.b == 0.0
    }
}

#[derive(Clone, Debug)]
pub struct PerturbedBatch {
    pub x: Tensor,
    pub nu: Tensor,
    pub x_prime: Tensor,
    /// `[n, 1]`.
    pub c: Tensor,
    /// `[n, 1]`.
    pub c_in: Tensor,
}

/// Draws one `c` per row, then `ν = c · ε` with `ε ~ N(0, I)`.
pub fn perturb<R: Rng + ?Sized>(x: &Tensor, sched: &NoiseSchedule, rng: &mut R) -> PerturbedBatch {
    let (n, d) = x.dims2();
    let mut c = Vec::with_capacity(n);
    let mut nu = Vec::with_capacity(n * d);
    for _ in 0..n {
        let u: f64 = rng.random();
        let ci = sched.a + (sched.b - sched.a) * u;
        c.push(ci);
        for _ in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            nu.push(ci * e);
        }
    }
    let x_prime: Vec<f64> = x.data().iter().zip(&nu).map(|(a, b)| a + b).collect();
    let c_in = c.iter().map(|v| v * sched.scale).collect();
    PerturbedBatch {
        x: x.clone(),
        nu: Tensor::from_parts(vec![n, d], nu),
        x_prime: Tensor::from_parts(vec![n, d], x_prime),
        c: Tensor::from_parts(vec![n, 1], c),
        c_in: Tensor::from_parts(vec![n, 1], c_in),
    }
}

/// The two interchangeable density models.
#[derive(Clone, Debug)]
pub enum Backend {
    Discrete(FlowStack),
    Cnf(CnfDynamics),
}

impl Backend {
    pub fn dim(&self) -> usize {
        match self {
            Backend::Discrete(s) => s.dim,
            Backend::Cnf(d) => d.cfg.dim,
        }
    }

    /// Row-wise `log p(x | c_in)` with `c_in: [n, 1]`.
    pub fn log_prob<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, c_in: Var<'t>) -> Result<Var<'t>> {
        match self {
            Backend::Discrete(s) => s.log_prob(tape, store, x, &Cond::c_in(c_in)),
            Backend::Cnf(d) => d.log_prob(tape, store, x, Some(c_in)),
        }
    }

    /// Pushes latents `z` to data space under `c_in`.
    pub fn generate<'t>(&self, tape: &'t Tape, store: &ParamStore, z: Var<'t>, c_in: Var<'t>) -> Result<Var<'t>> {
        match self {
            Backend::Discrete(s) => Ok(s.forward(tape, store, z, &Cond::c_in(c_in))?.0),
            Backend::Cnf(d) => d.transport(tape, store, z, Some(c_in)),
        }
    }
}

/// Mean negative conditional log-likelihood of a perturbed batch.
pub fn softflow_loss<'t>(
    tape: &'t Tape,
    batch: &PerturbedBatch,
    backend: &Backend,
    store: &ParamStore,
) -> Result<Var<'t>> {
    let lp = backend.log_prob(
        tape,
        store,
        tape.constant(batch.x_prime.clone()),
        tape.constant(batch.c_in.clone()),
    )?;
    lp.mean()?.neg()
}

/// `n` samples under `c_in = scale · c_sp`.
pub fn softflow_sample<R: Rng + ?Sized>(
    n: usize,
    c_sp: f64,
    sched: &NoiseSchedule,
    backend: &Backend,
    store: &ParamStore,
    rng: &mut R,
) -> Result<Tensor> {
    let cond = ConditionVector::constant(c_sp * sched.scale, n)?;
    let z = Tensor::randn(&[n, backend.dim()], 1.0, rng);
    if n == 0 {
        return Ok(z);
    }
    let tape = Tape::new();
    let c_in = cond.on(&tape).c_in.ok_or(Error::Invalid("missing condition".into()))?;
    Ok(backend.generate(&tape, store, tape.constant(z), c_in)?.value())
}

/// Row-wise `log p(x | c_in)` without gradients, in chunks.
pub fn density(x: &Tensor, c_in: f64, backend: &Backend, store: &ParamStore) -> Result<Vec<f64>> {
    const CHUNK: usize = 4096;
    let n = x.rows();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let tape = Tape::new();
        let c = tape.constant(Tensor::full(&[end - start, 1], c_in));
        let lp = backend.log_prob(&tape, store, tape.constant(x.select_rows(&idx)), c)?;
        out.extend(lp.value().into_data());
        start = end;
    }
    Ok(out)
}

/// Midpoint-rule integral of `exp(log p)` over `[lo, hi]²` with `n × n`
/// cells.
pub fn grid_mass(n: usize, lo: f64, hi: f64, log_p: impl Fn(&Tensor) -> Result<Vec<f64>>) -> Result<f64> {
    let h = (hi - lo) / n as f64;
    let mut pts = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            pts.extend([lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h]);
        }
    }
    let lp = log_p(&Tensor::from_parts(vec![n * n, 2], pts))?;
    Ok(lp.iter().map(|v| v.exp()).sum::<f64>() * h * h)
}
