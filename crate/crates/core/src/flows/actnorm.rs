use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::const_logdet;

/// Per-dimension affine layer, `x = scale ⊙ (z + bias)`.
#[derive(Clone, Debug)]
pub struct ActNorm {
    pub dim: usize,
    pub scale: ParamId,
    pub bias: ParamId,
}

impl ActNorm {
    /// Identity initialization (`scale = 1`, `bias = 0`).
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let scale = store.add(format!("{name}.scale"), Tensor::full(&[dim], 1.0));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dim]));
        Self { dim, scale, bias }
    }

    fn checked_scale<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<Var<'t>> {
        if store.get(self.scale).data().contains(&0.0) {
            return Err(Error::Invalid("actnorm scale has a zero entry".into()));
        }
        tape.param(store, self.scale)
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let scale = self.checked_scale(tape, store)?;
        let x = z.add(tape.param(store, self.bias)?)?.mul(scale)?;
        let ld = scale.abs()?.log()?.sum()?;
        Ok((x, const_logdet(tape, z.rows(), ld)?))
    }

    pub fn inverse<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let scale = self.checked_scale(tape, store)?;
        let z = x.mul(scale.recip()?)?.sub(tape.param(store, self.bias)?)?;
        let ld = scale.abs()?.log()?.sum()?.neg()?;
        Ok((z, const_logdet(tape, x.rows(), ld)?))
    }

    /// Sets parameters so that [`ActNorm::forward`] maps `batch` to
    /// per-dimension mean 0 and variance 1.
    pub fn init_from_batch(&self, store: &mut ParamStore, batch: &Tensor) -> Result<()> {
        let (mean, std) = moments(batch, self.dim)?;
        let scale: Vec<f64> = std.iter().map(|s| 1.0 / s).collect();
        let bias: Vec<f64> = mean.iter().map(|m| -m).collect();
        store.set(self.scale, &scale)?;
        store.set(self.bias, &bias)
    }

    /// Sets parameters so that [`ActNorm::inverse`] maps `batch` to
    /// per-dimension mean 0 and variance 1.
    pub fn init_inverse_from_batch(&self, store: &mut ParamStore, batch: &Tensor) -> Result<()> {
        let (mean, std) = moments(batch, self.dim)?;
        let bias: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m / s).collect();
        store.set(self.scale, &std)?;
        store.set(self.bias, &bias)
    }
}

/// Per-column mean and population standard deviation.
fn moments(batch: &Tensor, dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, d) = batch.dims2();
    if d != dim {
        return Err(Error::shape("actnorm init", format!("expected {dim} columns, got {d}")));
    }
    if n < 2 {
        return Err(Error::Degenerate(format!("need at least 2 samples, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(batch.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(batch.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
    if let Some(j) = std.iter().position(|s| *s <= 1e-8) {
        return Err(Error::Degenerate(format!("dimension {j} has zero variance")));
    }
    Ok((mean, std))
}
