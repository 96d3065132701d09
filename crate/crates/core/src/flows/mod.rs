//! Invertible layers and their composition.
//!
//! Every layer maps a latent batch `z` to a data batch `x` with
//! [`FlowLayer::forward`] and back with [`FlowLayer::inverse`]. Both return
//! a per-row log-determinant column `[n, 1]`; the inverse reports exactly
//! the negative of the forward value at corresponding points.
//!
//! A [`FlowStack`] applies layers in order for `z → x` and in reverse order
//! for `x → z`, so density evaluation is
//! `log p(x) = log N(z; 0, I) − Σ forward log-dets`.

mod actnorm;
mod autoregressive;
mod coupling;
mod inv1x1;
mod multiscale;

pub use actnorm::ActNorm;
pub use autoregressive::{ArConfig, ArLayer};
pub use coupling::{AffineCoupling, CouplingConfig, S_MAX};
pub use inv1x1::Inv1x1;
pub use multiscale::{squeeze, squeeze_factor, unsqueeze, MultiScaleConfig, MultiScaleFlow};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Value-level conditioning for a batch.
#[derive(Clone, Debug, Default)]
pub struct ConditionVector {
    /// Scaled noise condition, one value per row: `[n, 1]`.
    pub c_in: Option<Tensor>,
    /// Global condition, either one row per sample row or one row per group
    /// of `global_repeat` sample rows.
    pub global: Option<Tensor>,
    pub global_repeat: usize,
}

impl ConditionVector {
    pub fn none() -> Self {
        Self::default()
    }

    /// The same `c_in` for all `n` rows.
    pub fn constant(c_in: f64, n: usize) -> Result<Self> {
        if !(c_in >= 0.0) {
            return Err(Error::Invalid(format!("c_in must be non-negative, got {c_in}")));
        }
        Ok(Self {
            c_in: Some(Tensor::full(&[n, 1], c_in)),
            global: None,
            global_repeat: 1,
        })
    }

    pub fn per_row(c_in: Vec<f64>) -> Result<Self> {
        if c_in.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::Invalid("c_in must be non-negative".into()));
        }
        Ok(Self {
            c_in: Some(Tensor::column(c_in)?),
            global: None,
            global_repeat: 1,
        })
    }

    pub fn with_global(mut self, global: Tensor, repeat: usize) -> Self {
        self.global = Some(global);
        self.global_repeat = repeat.max(1);
        self
    }

    /// Records the condition on a tape.
    pub fn on<'t>(&self, tape: &'t Tape) -> Cond<'t> {
        Cond {
            c_in: self.c_in.clone().map(|t| tape.constant(t)),
            global: self.global.clone().map(|t| tape.constant(t)),
            global_repeat: self.global_repeat.max(1),
        }
    }
}

/// Tape-level conditioning; see [`ConditionVector`].
#[derive(Clone, Copy, Debug)]
pub struct Cond<'t> {
    pub c_in: Option<Var<'t>>,
    pub global: Option<Var<'t>>,
    pub global_repeat: usize,
}

impl<'t> Cond<'t> {
    pub fn none() -> Self {
        Self {
            c_in: None,
            global: None,
            global_repeat: 1,
        }
    }

    pub fn c_in(c: Var<'t>) -> Self {
        Self {
            c_in: Some(c),
            global: None,
            global_repeat: 1,
        }
    }

    pub fn with_global(mut self, global: Var<'t>, repeat: usize) -> Self {
        self.global = Some(global);
        self.global_repeat = repeat.max(1);
        self
    }

    /// Global condition expanded to one row per sample row.
    pub fn global_rows(&self) -> Result<Option<Var<'t>>> {
        match self.global {
            Some(g) if self.global_repeat > 1 => Ok(Some(g.repeat_rows(self.global_repeat)?)),
            g => Ok(g),
        }
    }

    /// `[c_in, global]` per row, or `None` if neither is present.
    pub fn features(&self) -> Result<Option<Var<'t>>> {
        let g = self.global_rows()?;
        match (self.c_in, g) {
            (Some(c), Some(g)) => Ok(Some(Var::concat_cols(&[c, g])?)),
            (Some(c), None) => Ok(Some(c)),
            (None, Some(g)) => Ok(Some(g)),
            (None, None) => Ok(None),
        }
    }
}

/// Row-wise `log N(z; 0, I)`, shape `[n, 1]`.
pub fn std_normal_logpdf<'t>(z: Var<'t>) -> Result<Var<'t>> {
    let d = z.cols() as f64;
    z.square()?.sum_cols()?.scale(-0.5)?.add_scalar(-0.5 * d * LN_2PI)
}

/// Per-row column filled with `value`.
pub(crate) fn const_logdet<'t>(tape: &'t Tape, n: usize, value: Var<'t>) -> Result<Var<'t>> {
    tape.constant(Tensor::zeros(&[n, 1])).add(value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Actnorm,
    Inv1x1,
    AffineCoupling,
    Autoregressive,
}

#[derive(Clone, Debug)]
pub enum FlowLayer {
    ActNorm(ActNorm),
    Inv1x1(Inv1x1),
    Coupling(AffineCoupling),
    Autoregressive(ArLayer),
}

impl FlowLayer {
    pub fn kind(&self) -> LayerKind {
        match self {
            FlowLayer::ActNorm(_) => LayerKind::Actnorm,
            FlowLayer::Inv1x1(_) => LayerKind::Inv1x1,
            FlowLayer::Coupling(_) => LayerKind::AffineCoupling,
            FlowLayer::Autoregressive(_) => LayerKind::Autoregressive,
        }
    }

    /// `z → x`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        cond: &Cond<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        match self {
            FlowLayer::ActNorm(l) => l.forward(tape, store, z),
            FlowLayer::Inv1x1(l) => l.forward(tape, store, z),
            FlowLayer::Coupling(l) => l.forward(tape, store, z, cond),
            FlowLayer::Autoregressive(l) => l.forward(tape, store, z, cond),
        }
    }

    /// `x → z`.
    pub fn inverse<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        cond: &Cond<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        match self {
            FlowLayer::ActNorm(l) => l.inverse(tape, store, x),
            FlowLayer::Inv1x1(l) => l.inverse(tape, store, x),
            FlowLayer::Coupling(l) => l.inverse(tape, store, x, cond),
            FlowLayer::Autoregressive(l) => l.inverse(tape, store, x, cond),
        }
    }
}

/// Which block recipe a stack is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// actnorm, invertible 1×1, affine coupling.
    Coupling,
    /// actnorm, invertible 1×1, autoregressive layer.
    Autoregressive,
}

#[derive(Clone, Debug)]
pub struct FlowStackConfig {
    pub dim: usize,
    pub blocks: usize,
    pub kind: BlockKind,
    /// Width of coupling conditioners / AR hidden layers.
    pub width: usize,
    /// Gated layers per coupling conditioner.
    pub depth: usize,
    /// 1 for the scalar `c_in`, 0 for none.
    pub c_dim: usize,
    pub global_dim: usize,
    /// Row-convolution kernel for coupling conditioners.
    pub kernel: usize,
}

/// Ordered layers; `layers[0]` is applied first on the way from `z` to `x`.
#[derive(Clone, Debug)]
pub struct FlowStack {
    pub layers: Vec<FlowLayer>,
    pub dim: usize,
    /// Rows per sample for row-convolution conditioners.
    pub block: usize,
}

impl FlowStack {
    pub fn new(layers: Vec<FlowLayer>, dim: usize) -> Self {
        Self {
            layers,
            dim,
            block: 1,
        }
    }

    /// Builds `blocks` blocks. Read from the data side, each block is
    /// actnorm → invertible 1×1 → (coupling | AR); coupling blocks
    /// alternate which half conditions the other.
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &FlowStackConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut data_side = Vec::new();
        for b in 0..cfg.blocks {
            let prefix = format!("{name}.block{b}");
            data_side.push(FlowLayer::ActNorm(ActNorm::new(store, &format!("{prefix}.actnorm"), cfg.dim)));
            data_side.push(FlowLayer::Inv1x1(Inv1x1::random(
                store,
                &format!("{prefix}.inv1x1"),
                cfg.dim,
                rng,
            )?));
            let last = match cfg.kind {
                BlockKind::Coupling => FlowLayer::Coupling(AffineCoupling::new(
                    store,
                    &format!("{prefix}.coupling"),
                    CouplingConfig {
                        dim: cfg.dim,
                        flip: b % 2 == 1,
                        width: cfg.width,
                        depth: cfg.depth,
                        cond_dim: cfg.c_dim + cfg.global_dim,
                        kernel: cfg.kernel,
                    },
                    rng,
                )?),
                BlockKind::Autoregressive => FlowLayer::Autoregressive(ArLayer::new(
                    store,
                    &format!("{prefix}.ar"),
                    ArConfig {
                        dim: cfg.dim,
                        hidden: cfg.width,
                        c_dim: cfg.c_dim,
                        global_dim: cfg.global_dim,
                    },
                    rng,
                )?),
            };
            data_side.push(last);
        }
        data_side.reverse();
        Ok(Self::new(data_side, cfg.dim))
    }

    pub fn with_block(mut self, block: usize) -> Self {
        self.block = block.max(1);
        for l in &mut self.layers {
            if let FlowLayer::Coupling(c) = l {
                c.block = self.block;
            }
        }
        self
    }

    /// `z → x`, with the summed forward log-det.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        cond: &Cond<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let mut x = z;
        let mut total = tape.constant(Tensor::zeros(&[z.rows(), 1]));
        for layer in &self.layers {
            let (y, ld) = layer.forward(tape, store, x, cond)?;
            x = y;
            total = total.add(ld)?;
        }
        Ok((x, total))
    }

    /// `x → z`, with the summed inverse log-det.
    pub fn inverse<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        cond: &Cond<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let mut z = x;
        let mut total = tape.constant(Tensor::zeros(&[x.rows(), 1]));
        for layer in self.layers.iter().rev() {
            let (y, ld) = layer.inverse(tape, store, z, cond)?;
            z = y;
            total = total.add(ld)?;
        }
        Ok((z, total))
    }

    /// Row-wise `log p(x | cond)`, shape `[n, 1]`.
    pub fn log_prob<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, cond: &Cond<'t>) -> Result<Var<'t>> {
        if x.cols() != self.dim {
            return Err(Error::shape("log_prob", format!("expected {} columns, got {}", self.dim, x.cols())));
        }
        let (z, ld) = self.inverse(tape, store, x, cond)?;
        std_normal_logpdf(z)?.add(ld)
    }

    /// Data-dependent actnorm initialization: pushes `x` through the stack
    /// towards `z` and sets every actnorm layer so its latent-side output is
    /// standardized on this batch.
    pub fn init_actnorm(&self, store: &mut ParamStore, x: &Tensor, cond: &ConditionVector) -> Result<()> {
        let mut cur = x.clone();
        for layer in self.layers.iter().rev() {
            if let FlowLayer::ActNorm(a) = layer {
                a.init_inverse_from_batch(store, &cur)?;
            }
            let tape = Tape::new();
            let c = cond.on(&tape);
            let (y, _) = layer.inverse(&tape, store, tape.constant(cur), &c)?;
            cur = y.value();
        }
        Ok(())
    }
}

/// Row-wise `log p(x | cond)` without gradients.
pub fn stack_logprob(x: &Tensor, cond: &ConditionVector, stack: &FlowStack, store: &ParamStore) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let c = cond.on(&tape);
    Ok(stack.log_prob(&tape, store, tape.constant(x.clone()), &c)?.value().into_data())
}

/// Draws `n` samples `x = f(z | cond)` with `z ~ N(0, I)`.
pub fn stack_sample<R: Rng + ?Sized>(
    n: usize,
    cond: &ConditionVector,
    stack: &FlowStack,
    store: &ParamStore,
    rng: &mut R,
) -> Result<Tensor> {
    let z = Tensor::randn(&[n, stack.dim], 1.0, rng);
    let tape = Tape::new();
    let c = cond.on(&tape);
    let (x, _) = stack.forward(&tape, store, tape.constant(z), &c)?;
    Ok(x.value())
}
