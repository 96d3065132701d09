//! Small network building blocks used as flow conditioners and encoders.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// `N(0, gain² / fan_in)`.
    Scaled(f64),
}

impl Init {
    fn tensor<R: Rng + ?Sized>(self, fan_in: usize, shape: &[usize], rng: &mut R) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Scaled(gain) => Tensor::randn(shape, gain / (fan_in.max(1) as f64).sqrt(), rng),
        }
    }
}

/// Affine map `x · W + b` over the rows of `x`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init.tensor(in_dim, &[in_dim, out_dim], rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(tape.param(store, self.weight)?)?
            .add(tape.param(store, self.bias)?)
    }
}

/// Convolution along the row axis within groups of `block` consecutive rows
/// (one group per sample), zero-padded at group edges. With `kernel == 1`
/// this is a [`Linear`] map applied to every row.
#[derive(Clone, Debug)]
pub struct RowConv {
    pub kernel: usize,
    pub linear: Linear,
}

impl RowConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Invalid(format!("kernel size must be odd, got {kernel}")));
        }
        Ok(Self {
            kernel,
            linear: Linear::new(store, name, in_dim * kernel, out_dim, init, rng),
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, block: usize) -> Result<Var<'t>> {
        if self.kernel == 1 {
            return self.linear.forward(tape, store, x);
        }
        let half = (self.kernel / 2) as isize;
        let taps: Vec<Var<'t>> = (-half..=half)
            .map(|off| if off == 0 { Ok(x) } else { x.shift_rows(off, block) })
            .collect::<Result<_>>()?;
        self.linear.forward(tape, store, Var::concat_cols(&taps)?)
    }
}

/// One gated residual layer: `o = tanh(f) ⊙ σ(g)` where `[f, g]` come from
/// a convolution of the hidden state plus a projection of the condition.
/// `o` feeds both a residual update and a skip accumulator.
#[derive(Clone, Debug)]
pub struct GatedLayer {
    filter_gate: RowConv,
    cond: Option<Linear>,
    res_skip: Linear,
    width: usize,
}

/// Conditioner network: input projection, a stack of [`GatedLayer`]s with
/// residual and skip connections, and a zero-initialized output projection
/// reading the skip sum.
#[derive(Clone, Debug)]
pub struct GatedResNet {
    input: RowConv,
    layers: Vec<GatedLayer>,
    pub output: Linear,
    pub in_dim: usize,
    pub cond_dim: usize,
    pub out_dim: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GatedResNetConfig {
    pub in_dim: usize,
    pub cond_dim: usize,
    pub out_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub kernel: usize,
}

impl GatedResNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: GatedResNetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let w = cfg.width;
        let input = RowConv::new(
            store,
            &format!("{name}.input"),
            cfg.in_dim + cfg.cond_dim,
            w,
            cfg.kernel,
            Init::Scaled(1.0),
            rng,
        )?;
        let mut layers = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let filter_gate = RowConv::new(
                store,
                &format!("{name}.layer{l}.filter_gate"),
                w,
                2 * w,
                cfg.kernel,
                Init::Scaled(1.0),
                rng,
            )?;
            let cond = (cfg.cond_dim > 0).then(|| {
                Linear::new(
                    store,
                    &format!("{name}.layer{l}.cond"),
                    cfg.cond_dim,
                    2 * w,
                    Init::Scaled(1.0),
                    rng,
                )
            });
            let res_skip = Linear::new(
                store,
                &format!("{name}.layer{l}.res_skip"),
                w,
                2 * w,
                Init::Scaled(0.5),
                rng,
            );
            layers.push(GatedLayer {
                filter_gate,
                cond,
                res_skip,
                width: w,
            });
        }
        let output = Linear::new(store, &format!("{name}.output"), w, cfg.out_dim, Init::Zeros, rng);
        Ok(Self {
            input,
            layers,
            output,
            in_dim: cfg.in_dim,
            cond_dim: cfg.cond_dim,
            out_dim: cfg.out_dim,
            width: w,
        })
    }

    /// `x: [rows, in_dim]`, `cond: [rows, cond_dim]` (required iff
    /// `cond_dim > 0`); rows come in groups of `block` for the convolution.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        cond: Option<Var<'t>>,
        block: usize,
    ) -> Result<Var<'t>> {
        let input = match (cond, self.cond_dim) {
            (_, 0) => x,
            (Some(c), _) => Var::concat_cols(&[x, c])?,
            (None, _) => return Err(Error::Invalid("conditioner expects a condition input".into())),
        };
        let mut h = self.input.forward(tape, store, input, block)?;
        let mut skip: Option<Var<'t>> = None;
        for layer in &self.layers {
            let mut a = layer.filter_gate.forward(tape, store, h, block)?;
            if let (Some(proj), Some(c)) = (&layer.cond, cond) {
                a = a.add(proj.forward(tape, store, c)?)?;
            }
            let w = layer.width;
            let o = a.cols_range(0, w)?.tanh()?.mul(a.cols_range(w, 2 * w)?.sigmoid()?)?;
            let rs = layer.res_skip.forward(tape, store, o)?;
            h = h.add(rs.cols_range(0, w)?)?;
            let s = rs.cols_range(w, 2 * w)?;
            skip = Some(match skip {
                Some(acc) => acc.add(s)?,
                None => s,
            });
        }
        self.output.forward(tape, store, skip.unwrap_or(h))
    }
}

/// Plain tanh multilayer perceptron.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        last_init: Init,
        rng: &mut R,
    ) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n { last_init } else { Init::Scaled(1.0) };
                Linear::new(store, &format!("{name}.{i}"), sizes[i], sizes[i + 1], init, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, store, h)?;
            if i + 1 < self.layers.len() {
                h = h.tanh()?;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_output_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cfg = GatedResNetConfig {
            in_dim: 3,
            cond_dim: 1,
            out_dim: 4,
            width: 8,
            depth: 2,
            kernel: 3,
        };
        let net = GatedResNet::new(&mut store, "net", cfg, &mut rng).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::randn(&[8, 3], 1.0, &mut rng));
        let c = tape.constant(Tensor::full(&[8, 1], 0.5));
        let y = net.forward(&tape, &store, x, Some(c), 4).unwrap();
        assert_eq!(y.shape(), vec![8, 4]);
        assert!(y.value().data().iter().all(|v| *v == 0.0));
        assert!(net.forward(&tape, &store, x, None, 4).is_err());
    }

    #[test]
    fn row_conv_respects_sample_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let conv = RowConv::new(&mut store, "c", 2, 3, 3, Init::Scaled(1.0), &mut rng).unwrap();
        let x = Tensor::randn(&[8, 2], 1.0, &mut rng);
        let tape = Tape::new();
        let full = conv.forward(&tape, &store, tape.constant(x.clone()), 4).unwrap().value();
        // the second sample alone gives the same rows
        let tail = x.select_rows(&[4, 5, 6, 7]);
        let part = conv.forward(&tape, &store, tape.constant(tail), 4).unwrap().value();
        assert!(part.max_abs_diff(&full.select_rows(&[4, 5, 6, 7])) < 1e-14);
    }
}
