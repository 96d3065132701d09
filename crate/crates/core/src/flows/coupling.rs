use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{GatedResNet, GatedResNetConfig};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

use super::Cond;

/// Bound on the log-scale of coupling and autoregressive layers.
pub const S_MAX: f64 = 5.0;

#[derive(Clone, Copy, Debug)]
pub struct CouplingConfig {
    pub dim: usize,
    /// Swap which half conditions the other.
    pub flip: bool,
    pub width: usize,
    pub depth: usize,
    /// Width of the per-row condition features (`c_in` and global).
    pub cond_dim: usize,
    pub kernel: usize,
}

/// Affine coupling: one half `x_a` passes through, the other becomes
/// `x_b = z_b ⊙ exp(s) + t` with `(s, t)` computed from `x_a` and the
/// condition.
#[derive(Clone, Debug)]
pub struct AffineCoupling {
    pub net: GatedResNet,
    pub dim: usize,
    pub flip: bool,
    /// Rows per sample for the conditioner's row convolution.
    pub block: usize,
}

impl AffineCoupling {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: CouplingConfig, rng: &mut R) -> Result<Self> {
        if cfg.dim < 2 {
            return Err(Error::Invalid(format!("coupling needs dim >= 2, got {}", cfg.dim)));
        }
        // both orientations pass `dim / 2` columns through
        let (a, b) = (cfg.dim / 2, cfg.dim - cfg.dim / 2);
        let net = GatedResNet::new(
            store,
            &format!("{name}.net"),
            GatedResNetConfig {
                in_dim: a,
                cond_dim: cfg.cond_dim,
                out_dim: 2 * b,
                width: cfg.width,
                depth: cfg.depth,
                kernel: cfg.kernel,
            },
            rng,
        )?;
        Ok(Self {
            net,
            dim: cfg.dim,
            flip: cfg.flip,
            block: 1,
        })
    }

    /// Column ranges `(a, b)` of the passive and transformed halves.
    fn ranges(&self) -> ((usize, usize), (usize, usize)) {
        let h = self.dim / 2;
        if self.flip {
            ((self.dim - h, self.dim), (0, self.dim - h))
        } else {
            ((0, h), (h, self.dim))
        }
    }

    fn scale_shift<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        xa: Var<'t>,
        cond: &Cond<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let features = if self.net.cond_dim > 0 { cond.features()? } else { None };
        let raw = self.net.forward(tape, store, xa, features, self.block)?;
        let nb = raw.cols() / 2;
        let s = raw.cols_range(0, nb)?.scale(1.0 / S_MAX)?.tanh()?.scale(S_MAX)?;
        Ok((s, raw.cols_range(nb, 2 * nb)?))
    }

    fn join<'t>(&self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        if self.flip {
            Var::concat_cols(&[b, a])
        } else {
            Var::concat_cols(&[a, b])
        }
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        cond: &Cond<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let ((a0, a1), (b0, b1)) = self.ranges();
        let za = z.cols_range(a0, a1)?;
        let (s, t) = self.scale_shift(tape, store, za, cond)?;
        let xb = z.cols_range(b0, b1)?.mul(s.exp()?)?.add(t)?;
        Ok((self.join(za, xb)?, s.sum_cols()?))
    }

    pub fn inverse<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        cond: &Cond<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let ((a0, a1), (b0, b1)) = self.ranges();
        let xa = x.cols_range(a0, a1)?;
        let (s, t) = self.scale_shift(tape, store, xa, cond)?;
        let zb = x.cols_range(b0, b1)?.sub(t)?.mul(s.neg()?.exp()?)?;
        Ok((self.join(xa, zb)?, s.sum_cols()?.neg()?))
    }
}
