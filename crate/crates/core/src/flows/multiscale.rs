//! Multi-scale flow over a latent vector squeezed to a `[positions, 8]`
//! layout, with channels factored out between block groups.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::{std_normal_logpdf, BlockKind, Cond, ConditionVector, FlowStack, FlowStackConfig};

pub const CHANNELS: usize = 8;
pub const FACTOR: usize = 2;
pub const BLOCKS_PER_STAGE: usize = 4;

/// Reshapes `[batch, dim]` into `[batch · dim/8, 8]`: position `l` of
/// sample `b` is row `b · dim/8 + l`.
pub fn squeeze(s: &Tensor) -> Result<Tensor> {
    let (b, d) = s.dims2();
    if d % CHANNELS != 0 || d == 0 {
        return Err(Error::shape("squeeze", format!("length {d} is not a multiple of {CHANNELS}")));
    }
    s.reshape(&[b * d / CHANNELS, CHANNELS])
}

/// Squeezes `s` and splits off the channels factored out after `stage`
/// groups: `kept` has `8 − 2·stage` channels, `factored` the rest.
pub fn squeeze_factor(s: &Tensor, stage: usize) -> Result<(Tensor, Tensor)> {
    let h = squeeze(s)?;
    if FACTOR * stage >= CHANNELS {
        return Err(Error::Invalid(format!("stage {stage} would factor out every channel")));
    }
    let keep = CHANNELS - FACTOR * stage;
    let tape = Tape::new();
    let v = tape.constant(h);
    Ok((v.cols_range(0, keep)?.value(), v.cols_range(keep, CHANNELS)?.value()))
}

/// Inverse of [`squeeze_factor`] for `batch` samples.
pub fn unsqueeze(kept: &Tensor, factored: &Tensor, batch: usize) -> Result<Tensor> {
    let tape = Tape::new();
    let h = Var::concat_cols(&[tape.constant(kept.clone()), tape.constant(factored.clone())])?.value();
    if h.cols() != CHANNELS || batch == 0 || h.rows() % batch != 0 {
        return Err(Error::shape("unsqueeze", format!("{:?} into {batch} samples", h.shape())));
    }
    h.reshape(&[batch, h.len() / batch])
}

#[derive(Clone, Debug)]
pub struct MultiScaleConfig {
    /// Latent length, a multiple of 8.
    pub dim: usize,
    pub blocks: usize,
    pub width: usize,
    pub depth: usize,
    /// Row-convolution kernel along positions.
    pub kernel: usize,
}

/// Coupling flow over squeezed latents. Each group of 4 blocks but the
/// last is followed by factoring out 2 channels, which are scored against
/// the standard normal immediately.
#[derive(Clone, Debug)]
pub struct MultiScaleFlow {
    pub groups: Vec<FlowStack>,
    pub dim: usize,
    positions: usize,
}

impl MultiScaleFlow {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &MultiScaleConfig, rng: &mut R) -> Result<Self> {
        if !cfg.dim.is_multiple_of(CHANNELS) || cfg.dim == 0 {
            return Err(Error::Invalid(format!("latent length {} is not a multiple of {CHANNELS}", cfg.dim)));
        }
        if cfg.blocks == 0 {
            return Err(Error::Invalid("multi-scale flow needs at least one block".into()));
        }
        let positions = cfg.dim / CHANNELS;
        let n_groups = cfg.blocks.div_ceil(BLOCKS_PER_STAGE);
        if FACTOR * (n_groups - 1) >= CHANNELS - 1 {
            return Err(Error::Invalid(format!("{} blocks factor out too many channels", cfg.blocks)));
        }
        let mut groups = Vec::with_capacity(n_groups);
        for g in 0..n_groups {
            let blocks = (cfg.blocks - g * BLOCKS_PER_STAGE).min(BLOCKS_PER_STAGE);
            let stack = FlowStack::build(
                store,
                &format!("{name}.group{g}"),
                &FlowStackConfig {
                    dim: CHANNELS - FACTOR * g,
                    blocks,
                    kind: BlockKind::Coupling,
                    width: cfg.width,
                    depth: cfg.depth,
                    c_dim: 0,
                    global_dim: 0,
                    kernel: cfg.kernel,
                },
                rng,
            )?;
            groups.push(stack.with_block(positions));
        }
        Ok(Self {
            groups,
            dim: cfg.dim,
            positions,
        })
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.dim {
            return Err(Error::shape("multi-scale flow", format!("expected {} columns, got {cols}", self.dim)));
        }
        Ok(())
    }

    /// `s → z` with the summed log-det, both per sample. `z` places every
    /// factored channel back in its original slot, so `log p(s) =
    /// log N(z) + logdet`.
    pub fn inverse<'t>(&self, tape: &'t Tape, store: &ParamStore, s: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        self.check(s.cols())?;
        let batch = s.rows();
        let mut h = s.reshape(&[batch * self.positions, CHANNELS])?;
        let mut factored = Vec::new();
        let mut logdet = tape.constant(Tensor::zeros(&[batch * self.positions, 1]));
        let none = Cond::none();
        for (g, stack) in self.groups.iter().enumerate() {
            let (y, ld) = stack.inverse(tape, store, h, &none)?;
            logdet = logdet.add(ld)?;
            h = y;
            if g + 1 < self.groups.len() {
                let c = h.cols();
                factored.push(h.cols_range(c - FACTOR, c)?);
                h = h.cols_range(0, c - FACTOR)?;
            }
        }
        factored.reverse();
        let mut parts = vec![h];
        parts.extend(factored);
        let z = Var::concat_cols(&parts)?.reshape(&[batch, self.dim])?;
        let logdet = logdet.reshape(&[batch, self.positions])?.sum_cols()?;
        Ok((z, logdet))
    }

    /// `z → s`, the inverse of [`MultiScaleFlow::inverse`].
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        self.check(z.cols())?;
        let batch = z.rows();
        let full = z.reshape(&[batch * self.positions, CHANNELS])?;
        let last = self.groups.len() - 1;
        let mut width = CHANNELS - FACTOR * last;
        let mut h = full.cols_range(0, width)?;
        let mut logdet = tape.constant(Tensor::zeros(&[batch * self.positions, 1]));
        let none = Cond::none();
        for (g, stack) in self.groups.iter().enumerate().rev() {
            if g < last {
                h = Var::concat_cols(&[h, full.cols_range(width, width + FACTOR)?])?;
                width += FACTOR;
            }
            let (y, ld) = stack.forward(tape, store, h, &none)?;
            logdet = logdet.add(ld)?;
            h = y;
        }
        let logdet = logdet.reshape(&[batch, self.positions])?.sum_cols()?;
        Ok((h.reshape(&[batch, self.dim])?, logdet))
    }

    /// Per-sample `log p(s)`, `[batch, 1]`.
    pub fn log_prob<'t>(&self, tape: &'t Tape, store: &ParamStore, s: Var<'t>) -> Result<Var<'t>> {
        let (z, logdet) = self.inverse(tape, store, s)?;
        std_normal_logpdf(z)?.add(logdet)
    }

    /// Number of latent dimensions scored at each stage, in density
    /// order; sums to `dim`.
    pub fn scored_dims(&self) -> Vec<usize> {
        let n = self.groups.len();
        (0..n)
            .map(|g| {
                let c = if g + 1 < n { FACTOR } else { CHANNELS - FACTOR * g };
                c * self.positions
            })
            .collect()
    }

    /// Data-dependent actnorm initialization on a batch of latents.
    pub fn init_actnorm(&self, store: &mut ParamStore, s: &Tensor) -> Result<()> {
        self.check(s.cols())?;
        let mut h = squeeze(s)?;
        for (g, stack) in self.groups.iter().enumerate() {
            stack.init_actnorm(store, &h, &ConditionVector::none())?;
            let tape = Tape::new();
            let (y, _) = stack.inverse(&tape, store, tape.constant(h), &Cond::none())?;
            h = y.value();
            if g + 1 < self.groups.len() {
                h = y.cols_range(0, h.cols() - FACTOR)?.value();
            }
        }
        Ok(())
    }

    /// `n` draws `s = f(σ·z)`, `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, sigma: f64, store: &ParamStore, rng: &mut R) -> Result<Tensor> {
        let z = Tensor::randn(&[n, self.dim], sigma, rng);
        let tape = Tape::new();
        Ok(self.forward(&tape, store, tape.constant(z))?.0.value())
    }
}
