use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Init, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::{Cond, S_MAX};

#[derive(Clone, Copy, Debug)]
pub struct ArConfig {
    pub dim: usize,
    pub hidden: usize,
    /// 1 when the layer consumes the scalar `c_in`.
    pub c_dim: usize,
    pub global_dim: usize,
}

/// One masked gated layer: `tanh(f) ⊙ σ(g)` with `[f, g] = h · (W ⊙ M) + b`
/// plus unmasked condition projections.
#[derive(Clone, Debug)]
struct MaskedGated {
    weight: ParamId,
    bias: ParamId,
    mask: Tensor,
    c_proj: Option<Linear>,
    g_proj: Option<Linear>,
    width: usize,
}

/// Affine autoregressive layer, `x_k = z_k · exp(s_k) + t_k` where
/// `(s_k, t_k)` depend on `x_{<k}` and the condition only.
///
/// Density evaluation (`x → z`) needs one network pass; sampling
/// (`z → x`) needs `dim` passes, one per coordinate.
#[derive(Clone, Debug)]
pub struct ArLayer {
    layers: Vec<MaskedGated>,
    out_weight: ParamId,
    out_bias: ParamId,
    out_mask: Tensor,
    pub dim: usize,
    pub c_dim: usize,
    pub global_dim: usize,
}

/// Degree of hidden unit `j`; a unit of degree `m` sees inputs `< m`.
fn degree(j: usize, dim: usize) -> usize {
    j % dim
}

impl ArLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: ArConfig, rng: &mut R) -> Result<Self> {
        let (d, h) = (cfg.dim, cfg.hidden);
        if d == 0 || h < d {
            return Err(Error::Invalid(format!("AR layer needs hidden >= dim >= 1, got {h} and {d}")));
        }
        let mut layers = Vec::with_capacity(2);
        for l in 0..2 {
            let in_dim = if l == 0 { d } else { h };
            let mut mask = vec![0.0; in_dim * 2 * h];
            for i in 0..in_dim {
                for j in 0..2 * h {
                    let allowed = if l == 0 {
                        i < degree(j % h, d)
                    } else {
                        degree(i, d) <= degree(j % h, d)
                    };
                    if allowed {
                        mask[i * 2 * h + j] = 1.0;
                    }
                }
            }
            let prefix = format!("{name}.layer{l}");
            let weight = store.add(
                format!("{prefix}.weight"),
                Tensor::randn(&[in_dim, 2 * h], 1.0 / (in_dim as f64).sqrt(), rng),
            );
            let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[2 * h]));
            let c_proj = (cfg.c_dim > 0)
                .then(|| Linear::new(store, &format!("{prefix}.c_in"), cfg.c_dim, 2 * h, Init::Scaled(1.0), rng));
            let g_proj = (cfg.global_dim > 0).then(|| {
                Linear::new(
                    store,
                    &format!("{prefix}.global"),
                    cfg.global_dim,
                    2 * h,
                    Init::Scaled(1.0),
                    rng,
                )
            });
            layers.push(MaskedGated {
                weight,
                bias,
                mask: Tensor::from_parts(vec![in_dim, 2 * h], mask),
                c_proj,
                g_proj,
                width: h,
            });
        }
        let mut out_mask = vec![0.0; h * 2 * d];
        for j in 0..h {
            for k in 0..d {
                if degree(j, d) <= k {
                    out_mask[j * 2 * d + k] = 1.0;
                    out_mask[j * 2 * d + d + k] = 1.0;
                }
            }
        }
        let out_weight = store.add(format!("{name}.out.weight"), Tensor::zeros(&[h, 2 * d]));
        let out_bias = store.add(format!("{name}.out.bias"), Tensor::zeros(&[2 * d]));
        Ok(Self {
            layers,
            out_weight,
            out_bias,
            out_mask: Tensor::from_parts(vec![h, 2 * d], out_mask),
            dim: d,
            c_dim: cfg.c_dim,
            global_dim: cfg.global_dim,
        })
    }

    /// Per-layer condition terms, computed once per call. The global
    /// condition is projected per group and then expanded.
    fn cond_terms<'t>(&self, store: &ParamStore, cond: &Cond<'t>) -> Result<Vec<Option<Var<'t>>>> {
        if self.c_dim > 0 && cond.c_in.is_none() {
            return Err(Error::Invalid("AR layer expects a c_in condition".into()));
        }
        if self.global_dim > 0 && cond.global.is_none() {
            return Err(Error::Invalid("AR layer expects a global condition".into()));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut term: Option<Var<'t>> = None;
            if let (Some(p), Some(c)) = (&layer.c_proj, cond.c_in) {
                term = Some(p.forward(c.tape(), store, c)?);
            }
            if let (Some(p), Some(g)) = (&layer.g_proj, cond.global) {
                let mut v = p.forward(g.tape(), store, g)?;
                if cond.global_repeat > 1 {
                    v = v.repeat_rows(cond.global_repeat)?;
                }
                term = Some(match term {
                    Some(t) => t.add(v)?,
                    None => v,
                });
            }
            out.push(term);
        }
        Ok(out)
    }

    /// `(s, t)` for every coordinate, each `[n, dim]`.
    fn scale_shift<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        terms: &[Option<Var<'t>>],
    ) -> Result<(Var<'t>, Var<'t>)> {
        let mut h = x;
        for (layer, term) in self.layers.iter().zip(terms) {
            let w = tape.param(store, layer.weight)?.mul(tape.constant(layer.mask.clone()))?;
            let mut a = h.matmul(w)?.add(tape.param(store, layer.bias)?)?;
            if let Some(t) = term {
                a = a.add(*t)?;
            }
            let k = layer.width;
            h = a.cols_range(0, k)?.tanh()?.mul(a.cols_range(k, 2 * k)?.sigmoid()?)?;
        }
        let w = tape.param(store, self.out_weight)?.mul(tape.constant(self.out_mask.clone()))?;
        let raw = h.matmul(w)?.add(tape.param(store, self.out_bias)?)?;
        let d = self.dim;
        let s = raw.cols_range(0, d)?.scale(1.0 / S_MAX)?.tanh()?.scale(S_MAX)?;
        Ok((s, raw.cols_range(d, 2 * d)?))
    }

    /// Serial `z → x`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        cond: &Cond<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        if z.cols() != self.dim {
            return Err(Error::shape("ar forward", format!("expected {} columns, got {}", self.dim, z.cols())));
        }
        let terms = self.cond_terms(store, cond)?;
        let n = z.rows();
        let zero = tape.constant(Tensor::zeros(&[n, 1]));
        let mut cols: Vec<Var<'t>> = vec![zero; self.dim];
        let mut last = None;
        for k in 0..self.dim {
            let x = Var::concat_cols(&cols)?;
            let (s, t) = self.scale_shift(tape, store, x, &terms)?;
            cols[k] = z
                .cols_range(k, k + 1)?
                .mul(s.cols_range(k, k + 1)?.exp()?)?
                .add(t.cols_range(k, k + 1)?)?;
            last = Some(s);
        }
        // coordinate k's scale at pass k equals its scale at the final pass
        let s = last.ok_or(Error::Invalid("AR layer of dimension 0".into()))?;
        Ok((Var::concat_cols(&cols)?, s.sum_cols()?))
    }

    /// Parallel `x → z`.
    pub fn inverse<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        cond: &Cond<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        if x.cols() != self.dim {
            return Err(Error::shape("ar inverse", format!("expected {} columns, got {}", self.dim, x.cols())));
        }
        let terms = self.cond_terms(store, cond)?;
        let (s, t) = self.scale_shift(tape, store, x, &terms)?;
        let z = x.sub(t)?.mul(s.neg()?.exp()?)?;
        Ok((z, s.sum_cols()?.neg()?))
    }
}
