use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::const_logdet;

/// Invertible linear map `x = W z` per row, with `W = P · L · U`.
///
/// `P` is a fixed permutation, `L` unit lower-triangular and `U` upper
/// triangular with diagonal `sign ⊙ exp(log_diag)`. Only the strict
/// triangles of the `lower`/`upper` parameters are read.
#[derive(Clone, Debug)]
pub struct Inv1x1 {
    pub dim: usize,
    /// `P[perm[i], i] = 1`.
    pub perm: Vec<usize>,
    pub sign: Vec<f64>,
    pub lower: ParamId,
    pub upper: ParamId,
    pub log_diag: ParamId,
}

impl Inv1x1 {
    /// LU form of a random rotation.
    pub fn random<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        Self::from_matrix(store, name, &random_orthogonal(dim, rng))
    }

    /// LU form of a given invertible `W` (`[dim, dim]`).
    pub fn from_matrix(store: &mut ParamStore, name: &str, w: &Tensor) -> Result<Self> {
        let (d, d2) = w.dims2();
        if d != d2 {
            return Err(Error::shape("inv1x1", format!("weight must be square, got {:?}", w.shape())));
        }
        let (perm, l, u) = plu(w.data(), d)?;
        let mut sign = Vec::with_capacity(d);
        let mut log_diag = Vec::with_capacity(d);
        let mut upper = u.clone();
        for i in 0..d {
            let v = u[i * d + i];
            sign.push(v.signum());
            log_diag.push(v.abs().ln());
            upper[i * d + i] = 0.0;
        }
        let mut lower = l;
        for i in 0..d {
            lower[i * d + i] = 0.0;
        }
        Ok(Self {
            dim: d,
            perm,
            sign,
            lower: store.add(format!("{name}.lower"), Tensor::new(vec![d, d], lower)?),
            upper: store.add(format!("{name}.upper"), Tensor::new(vec![d, d], upper)?),
            log_diag: store.add(format!("{name}.log_diag"), Tensor::new(vec![d], log_diag)?),
        })
    }

    fn masks(&self) -> (Tensor, Tensor) {
        let d = self.dim;
        let mut lo = vec![0.0; d * d];
        let mut up = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                if j < i {
                    lo[i * d + j] = 1.0;
                } else if j > i {
                    up[i * d + j] = 1.0;
                }
            }
        }
        (
            Tensor::from_parts(vec![d, d], lo),
            Tensor::from_parts(vec![d, d], up),
        )
    }

    fn perm_matrix(&self) -> Tensor {
        let d = self.dim;
        let mut p = vec![0.0; d * d];
        for (i, &r) in self.perm.iter().enumerate() {
            p[r * d + i] = 1.0;
        }
        Tensor::from_parts(vec![d, d], p)
    }

    /// `(L, U)` as full matrices on the tape.
    fn factors<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        let (lm, um) = self.masks();
        let eye = tape.constant(Tensor::eye(self.dim));
        let l = tape.param(store, self.lower)?.mul(tape.constant(lm))?.add(eye)?;
        let log_diag = tape.param(store, self.log_diag)?;
        let sign = tape.constant(Tensor::from_parts(vec![1, self.dim], self.sign.clone()));
        let diag = eye.mul(log_diag.exp()?.mul(sign)?)?;
        let u = tape.param(store, self.upper)?.mul(tape.constant(um))?.add(diag)?;
        Ok((l, u, log_diag))
    }

    /// Current `W` as a plain matrix.
    pub fn weight(&self, store: &ParamStore) -> Result<Tensor> {
        let tape = Tape::new();
        let (l, u, _) = self.factors(&tape, store)?;
        Ok(tape.constant(self.perm_matrix()).matmul(l)?.matmul(u)?.value())
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (l, u, log_diag) = self.factors(tape, store)?;
        let w = tape.constant(self.perm_matrix()).matmul(l)?.matmul(u)?;
        let x = z.matmul(w.transpose()?)?;
        Ok((x, const_logdet(tape, z.rows(), log_diag.sum()?)?))
    }

    /// Undoes `P`, then `L`, then `U` by triangular solves.
    pub fn inverse<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (l, u, log_diag) = self.factors(tape, store)?;
        let y = x.matmul(tape.constant(self.perm_matrix()))?;
        let z = y.tri_solve(l, true, true)?.tri_solve(u, false, false)?;
        Ok((z, const_logdet(tape, x.rows(), log_diag.sum()?.neg()?)?))
    }
}

/// Gram–Schmidt on a Gaussian matrix.
fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Tensor {
    loop {
        let g = Tensor::randn(&[d, d], 1.0, rng);
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut ok = true;
        for i in 0..d {
            let mut v = g.row(i).to_vec();
            for b in &q {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-6 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            q.push(v);
        }
        if ok {
            return Tensor::from_parts(vec![d, d], q.concat());
        }
    }
}

/// Doolittle LU with partial pivoting: `A = P L U` with
/// `P[perm[i], i] = 1`.
fn plu(a: &[f64], d: usize) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let mut m = a.to_vec();
    let mut perm: Vec<usize> = (0..d).collect();
    let mut l = vec![0.0; d * d];
    for k in 0..d {
        let p = (k..d)
            .max_by(|&i, &j| m[i * d + k].abs().total_cmp(&m[j * d + k].abs()))
            .unwrap_or(k);
        if m[p * d + k].abs() < 1e-12 {
            return Err(Error::Invalid("inv1x1 weight is singular".into()));
        }
        if p != k {
            for j in 0..d {
                m.swap(k * d + j, p * d + j);
                l.swap(k * d + j, p * d + j);
            }
            perm.swap(k, p);
        }
        for i in k + 1..d {
            let f = m[i * d + k] / m[k * d + k];
            l[i * d + k] = f;
            for j in k..d {
                m[i * d + j] -= f * m[k * d + j];
            }
        }
    }
    for i in 0..d {
        l[i * d + i] = 1.0;
    }
    Ok((perm, l, m))
}
