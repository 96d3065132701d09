//! Continuous normalizing flow in low dimension with exact trace.
//!
//! The state `z(t)` follows `dz/dt = f(z, t, c)`. Latents live at `t0`,
//! data at `t1`. Density evaluation integrates from `t1` back to `t0` with
//! fixed-step RK4 while accumulating `Tr ∂f/∂z`, so that
//! `log p(x) = log N(z(t0)) − ∫ Tr ∂f/∂z dt`. Gradients come from
//! differentiating through the unrolled solver on the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::std_normal_logpdf;
use crate::nn::Init;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const MIN_STEPS: usize = 8;

/// A velocity field together with its Jacobian trace.
pub trait VelocityField {
    fn dim(&self) -> usize;

    /// `f(z, t, c)` per row and, if `trace` is set, `Tr ∂f/∂z` as `[n, 1]`.
    fn eval<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        t: f64,
        c: Option<Var<'t>>,
        trace: bool,
    ) -> Result<(Var<'t>, Option<Var<'t>>)>;
}

/// `f(z) = z · Aᵀ`, independent of `t` and `c`.
#[derive(Clone, Debug)]
pub struct LinearField {
    pub matrix: Tensor,
}

impl VelocityField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn eval<'t>(
        &self,
        tape: &'t Tape,
        _store: &ParamStore,
        z: Var<'t>,
        _t: f64,
        _c: Option<Var<'t>>,
        trace: bool,
    ) -> Result<(Var<'t>, Option<Var<'t>>)> {
        let f = z.matmul(tape.constant(self.matrix.clone()).transpose()?)?;
        let tr = trace.then(|| {
            let d = self.dim();
            let v: f64 = (0..d).map(|i| self.matrix.get2(i, i)).sum();
            tape.constant(Tensor::full(&[z.rows(), 1], v))
        });
        Ok((f, tr))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnfConfig {
    pub dim: usize,
    pub hidden: usize,
    /// Number of hidden tanh layers.
    pub layers: usize,
    /// Width of the extra condition (1 for `c_in`, 0 for none).
    pub c_dim: usize,
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
}

impl Default for CnfConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            hidden: 32,
            layers: 2,
            c_dim: 1,
            t0: 0.0,
            t1: 1.0,
            steps: 16,
        }
    }
}

#[derive(Clone, Debug)]
struct CLayer {
    wz: ParamId,
    wt: ParamId,
    wc: Option<ParamId>,
    b: ParamId,
}

/// Tanh network with `(t, c)` concatenated to the input of every layer.
/// The last layer starts at zero, so an untrained field is `f ≡ 0`.
#[derive(Clone, Debug)]
pub struct CnfDynamics {
    layers: Vec<CLayer>,
    pub cfg: CnfConfig,
}

impl CnfDynamics {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &CnfConfig, rng: &mut R) -> Result<Self> {
        validate(cfg)?;
        let mut sizes = vec![cfg.dim];
        sizes.extend(std::iter::repeat_n(cfg.hidden, cfg.layers));
        sizes.push(cfg.dim);
        let n = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let init = if i + 1 == n { Init::Zeros } else { Init::Scaled(1.0) };
            let fan_in = sizes[i] + 1 + cfg.c_dim;
            let (inp, out) = (sizes[i], sizes[i + 1]);
            let p = format!("{name}.{i}");
            let draw = |shape: &[usize], rng: &mut R| match init {
                Init::Zeros => Tensor::zeros(shape),
                Init::Scaled(g) => Tensor::randn(shape, g / (fan_in as f64).sqrt(), rng),
            };
            let wz = store.add(format!("{p}.wz"), draw(&[inp, out], rng));
            let wt = store.add(format!("{p}.wt"), draw(&[1, out], rng));
            let wc = (cfg.c_dim > 0).then(|| store.add(format!("{p}.wc"), draw(&[cfg.c_dim, out], rng)));
            let b = store.add(format!("{p}.b"), Tensor::zeros(&[out]));
            layers.push(CLayer { wz, wt, wc, b });
        }
        Ok(Self {
            layers,
            cfg: cfg.clone(),
        })
    }
}

fn validate(cfg: &CnfConfig) -> Result<()> {
    if cfg.steps < MIN_STEPS {
        return Err(Error::Invalid(format!("CNF needs at least {MIN_STEPS} steps, got {}", cfg.steps)));
    }
    if cfg.dim == 0 || cfg.hidden == 0 {
        return Err(Error::Invalid("CNF dimensions must be positive".into()));
    }
    if !(cfg.t1 > cfg.t0) {
        return Err(Error::Invalid(format!("time span [{}, {}] is empty", cfg.t0, cfg.t1)));
    }
    Ok(())
}

impl VelocityField for CnfDynamics {
    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn eval<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        t: f64,
        c: Option<Var<'t>>,
        trace: bool,
    ) -> Result<(Var<'t>, Option<Var<'t>>)> {
        if z.cols() != self.cfg.dim {
            return Err(Error::shape("cnf velocity", format!("expected {} columns, got {}", self.cfg.dim, z.cols())));
        }
        let c = match (c, self.cfg.c_dim) {
            (_, 0) => None,
            (Some(c), _) => Some(c),
            (None, _) => return Err(Error::Invalid("CNF expects a condition input".into())),
        };
        let n = self.layers.len();
        let mut h = z;
        // derivative of h along each input axis k
        let mut tangents: Vec<Option<Var<'t>>> = vec![None; if trace { self.cfg.dim } else { 0 }];
        for (i, l) in self.layers.iter().enumerate() {
            let wz = tape.param(store, l.wz)?;
            let mut a = h.matmul(wz)?.add(tape.param(store, l.wt)?.scale(t)?)?;
            if let (Some(wc), Some(c)) = (l.wc, c) {
                a = a.add(c.matmul(tape.param(store, wc)?)?)?;
            }
            a = a.add(tape.param(store, l.b)?)?;
            for (k, tan) in tangents.iter_mut().enumerate() {
                *tan = Some(match tan {
                    None => wz.rows_range(k, k + 1)?,
                    Some(d) => d.matmul(wz)?,
                });
            }
            if i + 1 < n {
                h = a.tanh()?;
                let slope = h.square()?.neg()?.add_scalar(1.0)?;
                for tan in tangents.iter_mut().flatten() {
                    *tan = tan.mul(slope)?;
                }
            } else {
                h = a;
            }
        }
        let tr = if trace {
            let mut acc: Option<Var<'t>> = None;
            for (k, tan) in tangents.into_iter().enumerate() {
                let tan = tan.ok_or(Error::Invalid("CNF network has no layers".into()))?;
                let mut d = tan.cols_range(k, k + 1)?;
                if d.rows() != z.rows() {
                    // a network without hidden layers has a row-constant Jacobian
                    d = tape.constant(Tensor::zeros(&[z.rows(), 1])).add(d)?;
                }
                acc = Some(match acc {
                    Some(a) => a.add(d)?,
                    None => d,
                });
            }
            acc
        } else {
            None
        };
        Ok((h, tr))
    }
}

fn axpy<'t>(z: Var<'t>, h: f64, k: Var<'t>) -> Result<Var<'t>> {
    z.add(k.scale(h)?)
}

/// Fixed-step RK4 from `t_start` to `t_end`, optionally integrating the
/// trace alongside. Returns the final state and `∫ Tr dt` over the path.
#[allow(clippy::too_many_arguments)]
pub fn rk4<'t, F: VelocityField + ?Sized>(
    field: &F,
    tape: &'t Tape,
    store: &ParamStore,
    z0: Var<'t>,
    c: Option<Var<'t>>,
    t_start: f64,
    t_end: f64,
    steps: usize,
    trace: bool,
) -> Result<(Var<'t>, Option<Var<'t>>)> {
    if steps == 0 {
        return Err(Error::Invalid("RK4 needs at least one step".into()));
    }
    let h = (t_end - t_start) / steps as f64;
    let mut z = z0;
    let mut acc = trace.then(|| tape.constant(Tensor::zeros(&[z0.rows(), 1])));
    for i in 0..steps {
        let t = t_start + i as f64 * h;
        let (k1, r1) = field.eval(tape, store, z, t, c, trace)?;
        let (k2, r2) = field.eval(tape, store, axpy(z, 0.5 * h, k1)?, t + 0.5 * h, c, trace)?;
        let (k3, r3) = field.eval(tape, store, axpy(z, 0.5 * h, k2)?, t + 0.5 * h, c, trace)?;
        let (k4, r4) = field.eval(tape, store, axpy(z, h, k3)?, t + h, c, trace)?;
        let incr = k1.add(k2.scale(2.0)?)?.add(k3.scale(2.0)?)?.add(k4)?;
        z = axpy(z, h / 6.0, incr)?;
        if let (Some(a), Some(r1), Some(r2), Some(r3), Some(r4)) = (acc, r1, r2, r3, r4) {
            let incr = r1.add(r2.scale(2.0)?)?.add(r3.scale(2.0)?)?.add(r4)?;
            acc = Some(axpy(a, h / 6.0, incr)?);
        }
        if !z.value().all_finite() {
            return Err(Error::NonFinite(format!("CNF state at step {i}")));
        }
    }
    Ok((z, acc))
}

/// `x → z(t0)` together with row-wise `log p(x)`.
#[allow(clippy::too_many_arguments)]
pub fn log_prob_with<'t, F: VelocityField + ?Sized>(
    field: &F,
    tape: &'t Tape,
    store: &ParamStore,
    x: Var<'t>,
    c: Option<Var<'t>>,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<(Var<'t>, Var<'t>)> {
    if x.cols() != field.dim() {
        return Err(Error::shape("cnf log_prob", format!("expected {} columns, got {}", field.dim(), x.cols())));
    }
    let (z0, acc) = rk4(field, tape, store, x, c, t1, t0, steps, true)?;
    let acc = acc.ok_or(Error::Invalid("trace was not integrated".into()))?;
    // integrating from t1 down to t0 yields −∫_{t0}^{t1} Tr dt directly
    Ok((z0, std_normal_logpdf(z0)?.add(acc)?))
}

impl CnfDynamics {
    /// Row-wise `log p(x | c)` on a tape.
    pub fn log_prob<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, c: Option<Var<'t>>) -> Result<Var<'t>> {
        let cfg = &self.cfg;
        Ok(log_prob_with(self, tape, store, x, c, cfg.t0, cfg.t1, cfg.steps)?.1)
    }

    /// `z(t0) → x(t1)` on a tape.
    pub fn transport<'t>(&self, tape: &'t Tape, store: &ParamStore, z: Var<'t>, c: Option<Var<'t>>) -> Result<Var<'t>> {
        let cfg = &self.cfg;
        Ok(rk4(self, tape, store, z, c, cfg.t0, cfg.t1, cfg.steps, false)?.0)
    }

    /// `x(t1) → z(t0)` on a tape.
    pub fn pull_back<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, c: Option<Var<'t>>) -> Result<Var<'t>> {
        let cfg = &self.cfg;
        Ok(rk4(self, tape, store, x, c, cfg.t1, cfg.t0, cfg.steps, false)?.0)
    }

    pub fn with_steps(mut self, steps: usize) -> Result<Self> {
        self.cfg.steps = steps;
        validate(&self.cfg)?;
        Ok(self)
    }
}

fn condition(c_in: f64, n: usize, dyn_: &CnfDynamics) -> Result<Option<Tensor>> {
    if !(c_in >= 0.0) {
        return Err(Error::Invalid(format!("c_in must be non-negative, got {c_in}")));
    }
    Ok((dyn_.cfg.c_dim > 0).then(|| Tensor::full(&[n, dyn_.cfg.c_dim], c_in)))
}

/// Row-wise `log p(x | c_in)` without gradients.
pub fn cnf_logprob(x: &Tensor, c_in: f64, dyn_: &CnfDynamics, store: &ParamStore) -> Result<Vec<f64>> {
    let c = condition(c_in, x.rows(), dyn_)?;
    let tape = Tape::new();
    let cv = c.map(|c| tape.constant(c));
    Ok(dyn_.log_prob(&tape, store, tape.constant(x.clone()), cv)?.value().into_data())
}

/// `n` draws: `z ~ N(0, I)` integrated from `t0` to `t1` under `c_in`.
pub fn cnf_sample<R: Rng + ?Sized>(
    n: usize,
    c_in: f64,
    dyn_: &CnfDynamics,
    store: &ParamStore,
    rng: &mut R,
) -> Result<Tensor> {
    let z = Tensor::randn(&[n, dyn_.cfg.dim], 1.0, rng);
    if n == 0 {
        return Ok(z);
    }
    let c = condition(c_in, n, dyn_)?;
    let tape = Tape::new();
    let cv = c.map(|c| tape.constant(c));
    Ok(dyn_.transport(&tape, store, tape.constant(z), cv)?.value())
}
