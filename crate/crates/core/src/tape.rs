//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node to its
//! [`Tape`]. Nodes are only ever appended, so the tape order is already a
//! topological order and [`Tape::backward`] walks it in reverse.
//!
//! ```
//! use softflow::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
//! let tape = Tape::new();
//! let wv = tape.param(&store, w).unwrap();
//! let loss = wv.mul(wv).unwrap().sum().unwrap();
//! tape.backward(loss, &mut store).unwrap();
//! assert_eq!(store.get(w).grad().unwrap(), &[2.0, 4.0]);
//! ```

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{dims2, matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Abs(usize),
    Square(usize),
    Recip(usize),
    Sum(usize),
    SumCols(usize),
    SumRows(usize),
    SliceCols { src: usize, start: usize },
    SliceRows { src: usize, start: usize },
    Concat(Vec<usize>),
    Reshape(usize),
    Transpose(usize),
    BlockMax { src: usize, argmax: Vec<usize> },
    RepeatRows { src: usize, times: usize },
    ShiftRows { src: usize, offset: isize, block: usize },
    Clamp { src: usize, lo: f64, hi: f64 },
    TriSolve { a: usize, b: usize, lower: bool, unit: bool },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recording of primitive operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
    generation: Cell<u64>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
    generation: u64,
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    generation: u64,
}

impl Gradients {
    /// Gradient for `v`, zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Result<Vec<f64>> {
        if v.generation != self.generation {
            return Err(Error::Disconnected);
        }
        let len = v.tape.nodes.borrow()[v.idx].value.len();
        Ok(self.grads[v.idx].clone().unwrap_or_else(|| vec![0.0; len]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, name: &'static str) -> Result<Var<'_>> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Ok(Var {
            tape: self,
            idx: nodes.len() - 1,
            generation: self.generation.get(),
        })
    }

    /// Records a constant (no gradient is reported for it).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
            generation: self.generation.get(),
        }
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Leaf for a trainable parameter. Repeated calls with the same id return
    /// the same node, so fan-out accumulates into one gradient.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Result<Var<'_>> {
        if id.store != store.uid() {
            return Err(Error::Disconnected);
        }
        if let Some(&idx) = self.params.borrow().get(&id) {
            return Ok(Var {
                tape: self,
                idx,
                generation: self.generation.get(),
            });
        }
        let value = store.get(id).clone();
        let v = self.push(strip_grad(value), Op::Param, "param")?;
        self.params.borrow_mut().insert(id, v.idx);
        Ok(v)
    }

    /// Discards all nodes. Outstanding [`Var`]s become stale.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.params.borrow_mut().clear();
        self.generation.set(self.generation.get() + 1);
    }

    fn check(&self, v: Var<'_>) -> Result<()> {
        if !std::ptr::eq(v.tape, self) || v.generation != self.generation.get() {
            return Err(Error::Disconnected);
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`; the tape is left intact.
    pub fn gradients(&self, loss: Var<'_>) -> Result<Gradients> {
        self.check(loss)?;
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.idx];
        if !root.value.is_scalar() {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(vec![1.0]);
        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            propagate(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            generation: self.generation.get(),
        })
    }

    /// Computes `∂loss/∂param` for every parameter of `store` (zeros for
    /// parameters not on the tape), writes them into the parameters' grad
    /// slots, and clears the tape.
    pub fn backward(&self, loss: Var<'_>, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.zero_grad();
        for (&id, &idx) in self.params.borrow().iter() {
            if id.store != store.uid() {
                continue;
            }
            if let Some(g) = &grads.grads[idx] {
                store.get_mut(id).set_grad(g.clone())?;
            }
        }
        self.clear();
        Ok(())
    }
}

fn strip_grad(mut t: Tensor) -> Tensor {
    t.clear_grad();
    t
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, g: Vec<f64>) {
    match &mut grads[idx] {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Sums a broadcast gradient `[r, c]` back down to an operand of shape `[ar, ac]`.
fn reduce_to(g: &[f64], r: usize, c: usize, ar: usize, ac: usize) -> Vec<f64> {
    if ar == r && ac == c {
        return g.to_vec();
    }
    let mut out = vec![0.0; ar * ac];
    for i in 0..r {
        let oi = if ar == 1 { 0 } else { i };
        for j in 0..c {
            let oj = if ac == 1 { 0 } else { j };
            out[oi * ac + oj] += g[i * c + j];
        }
    }
    out
}

fn propagate(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    let out = &node.value;
    let (r, c) = out.dims2();
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (n, k) = av.dims2();
            let m = bv.cols();
            accumulate(grads, *a, matmul_nt(g, bv.data(), n, m, k));
            accumulate(grads, *b, matmul_tn(av.data(), g, n, k, m));
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let (ar, ac) = nodes[*a].value.dims2();
            let (br, bc) = nodes[*b].value.dims2();
            accumulate(grads, *a, reduce_to(g, r, c, ar, ac));
            let mut gb = reduce_to(g, r, c, br, bc);
            if matches!(node.op, Op::Sub(..)) {
                gb.iter_mut().for_each(|v| *v = -*v);
            }
            accumulate(grads, *b, gb);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (ar, ac) = av.dims2();
            let (br, bc) = bv.dims2();
            let mut ga = vec![0.0; r * c];
            let mut gb = vec![0.0; r * c];
            for ii in 0..r {
                for jj in 0..c {
                    let x = av.data()[bidx(ii, jj, ar, ac)];
                    let y = bv.data()[bidx(ii, jj, br, bc)];
                    ga[ii * c + jj] = g[ii * c + jj] * y;
                    gb[ii * c + jj] = g[ii * c + jj] * x;
                }
            }
            accumulate(grads, *a, reduce_to(&ga, r, c, ar, ac));
            accumulate(grads, *b, reduce_to(&gb, r, c, br, bc));
        }
        Op::Neg(a) => accumulate(grads, *a, g.iter().map(|v| -v).collect()),
        Op::Scale(a, s) => accumulate(grads, *a, g.iter().map(|v| v * s).collect()),
        Op::AddScalar(a) => accumulate(grads, *a, g.to_vec()),
        Op::Tanh(a) => accumulate(
            grads,
            *a,
            g.iter().zip(out.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect(),
        ),
        Op::Sigmoid(a) => accumulate(
            grads,
            *a,
            g.iter().zip(out.data()).map(|(gv, y)| gv * y * (1.0 - y)).collect(),
        ),
        Op::Exp(a) => accumulate(
            grads,
            *a,
            g.iter().zip(out.data()).map(|(gv, y)| gv * y).collect(),
        ),
        Op::Log(a) => accumulate(
            grads,
            *a,
            g.iter()
                .zip(nodes[*a].value.data())
                .map(|(gv, x)| gv / x)
                .collect(),
        ),
        Op::Abs(a) => accumulate(
            grads,
            *a,
            g.iter()
                .zip(nodes[*a].value.data())
                .map(|(gv, x)| if *x >= 0.0 { *gv } else { -gv })
                .collect(),
        ),
        Op::Square(a) => accumulate(
            grads,
            *a,
            g.iter()
                .zip(nodes[*a].value.data())
                .map(|(gv, x)| 2.0 * x * gv)
                .collect(),
        ),
        Op::Recip(a) => accumulate(
            grads,
            *a,
            g.iter().zip(out.data()).map(|(gv, y)| -gv * y * y).collect(),
        ),
        Op::Sum(a) => {
            let n = nodes[*a].value.len();
            accumulate(grads, *a, vec![g[0]; n]);
        }
        Op::SumCols(a) => {
            let (ar, ac) = nodes[*a].value.dims2();
            let mut ga = vec![0.0; ar * ac];
            for ii in 0..ar {
                ga[ii * ac..(ii + 1) * ac].iter_mut().for_each(|v| *v = g[ii]);
            }
            accumulate(grads, *a, ga);
        }
        Op::SumRows(a) => {
            let (ar, ac) = nodes[*a].value.dims2();
            let mut ga = vec![0.0; ar * ac];
            for ii in 0..ar {
                ga[ii * ac..(ii + 1) * ac].copy_from_slice(g);
            }
            accumulate(grads, *a, ga);
        }
        Op::SliceCols { src, start } => {
            let (sr, sc) = nodes[*src].value.dims2();
            let mut ga = vec![0.0; sr * sc];
            for ii in 0..sr {
                ga[ii * sc + start..ii * sc + start + c].copy_from_slice(&g[ii * c..(ii + 1) * c]);
            }
            accumulate(grads, *src, ga);
        }
        Op::SliceRows { src, start } => {
            let (sr, sc) = nodes[*src].value.dims2();
            let mut ga = vec![0.0; sr * sc];
            ga[start * sc..(start + r) * sc].copy_from_slice(g);
            accumulate(grads, *src, ga);
        }
        Op::Concat(parts) => {
            let mut off = 0;
            for &p in parts {
                let pc = nodes[p].value.cols();
                let mut gp = vec![0.0; r * pc];
                for ii in 0..r {
                    gp[ii * pc..(ii + 1) * pc].copy_from_slice(&g[ii * c + off..ii * c + off + pc]);
                }
                off += pc;
                accumulate(grads, p, gp);
            }
        }
        Op::Reshape(a) => accumulate(grads, *a, g.to_vec()),
        Op::Transpose(a) => {
            let mut ga = vec![0.0; r * c];
            for ii in 0..r {
                for jj in 0..c {
                    ga[jj * r + ii] = g[ii * c + jj];
                }
            }
            accumulate(grads, *a, ga);
        }
        Op::BlockMax { src, argmax } => {
            let n = nodes[*src].value.len();
            let mut ga = vec![0.0; n];
            for (k, &src_idx) in argmax.iter().enumerate() {
                ga[src_idx] += g[k];
            }
            accumulate(grads, *src, ga);
        }
        Op::RepeatRows { src, times } => {
            let (sr, sc) = nodes[*src].value.dims2();
            let mut ga = vec![0.0; sr * sc];
            for ii in 0..r {
                let s = ii / times;
                for jj in 0..sc {
                    ga[s * sc + jj] += g[ii * c + jj];
                }
            }
            accumulate(grads, *src, ga);
        }
        Op::ShiftRows { src, offset, block } => {
            let mut ga = vec![0.0; r * c];
            for ii in 0..r {
                if let Some(s) = shifted_row(ii, *offset, *block, r) {
                    for jj in 0..c {
                        ga[s * c + jj] += g[ii * c + jj];
                    }
                }
            }
            accumulate(grads, *src, ga);
        }
        Op::Clamp { src, lo, hi } => accumulate(
            grads,
            *src,
            g.iter()
                .zip(nodes[*src].value.data())
                .map(|(gv, x)| if x < lo || x > hi { 0.0 } else { *gv })
                .collect(),
        ),
        Op::TriSolve { a, b, lower, unit } => {
            // z = A⁻¹ b per row; dB = A⁻ᵀ g, dA = -(A⁻ᵀ g) zᵀ on the triangle.
            let av = &nodes[*a].value;
            let d = av.rows();
            let mut gb = vec![0.0; r * c];
            let mut ga = vec![0.0; d * d];
            for ii in 0..r {
                let y = solve_transposed(av.data(), d, &g[ii * c..(ii + 1) * c], *lower, *unit);
                let z = &out.data()[ii * c..(ii + 1) * c];
                for p in 0..d {
                    for q in 0..d {
                        let in_tri = if *lower { q < p || (q == p && !unit) } else { q > p || (q == p && !unit) };
                        if in_tri {
                            ga[p * d + q] -= y[p] * z[q];
                        }
                    }
                }
                gb[ii * c..(ii + 1) * c].copy_from_slice(&y);
            }
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
    }
}

#[inline]
fn bidx(i: usize, j: usize, r: usize, c: usize) -> usize {
    (if r == 1 { 0 } else { i }) * c + if c == 1 { 0 } else { j }
}

fn shifted_row(i: usize, offset: isize, block: usize, rows: usize) -> Option<usize> {
    let s = i as isize + offset;
    if s < 0 || s as usize >= rows || (s as usize) / block != i / block {
        None
    } else {
        Some(s as usize)
    }
}

/// Solves `A z = b` for triangular `A` (`d × d`, row-major).
fn solve_tri(a: &[f64], d: usize, b: &[f64], lower: bool, unit: bool) -> Vec<f64> {
    let mut z = vec![0.0; d];
    if lower {
        for p in 0..d {
            let mut s = b[p];
            for q in 0..p {
                s -= a[p * d + q] * z[q];
            }
            z[p] = if unit { s } else { s / a[p * d + p] };
        }
    } else {
        for p in (0..d).rev() {
            let mut s = b[p];
            for q in p + 1..d {
                s -= a[p * d + q] * z[q];
            }
            z[p] = if unit { s } else { s / a[p * d + p] };
        }
    }
    z
}

/// Solves `Aᵀ y = g` for triangular `A`.
fn solve_transposed(a: &[f64], d: usize, g: &[f64], lower: bool, unit: bool) -> Vec<f64> {
    let mut at = vec![0.0; d * d];
    for p in 0..d {
        for q in 0..d {
            at[q * d + p] = a[p * d + q];
        }
    }
    solve_tri(&at, d, g, !lower, unit)
}

fn broadcast_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize, Vec<usize>)> {
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let r = match (ar, br) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape()))),
    };
    let c = match (ac, bc) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape()))),
    };
    let shape = if a.shape() == b.shape() || ((r, c) == (ar, ac) && a.shape().len() >= 2) {
        a.shape().to_vec()
    } else if (r, c) == (br, bc) && b.shape().len() >= 2 {
        b.shape().to_vec()
    } else {
        vec![r, c]
    };
    Ok((r, c, shape))
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Copy of the current value.
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.idx].value.shape().to_vec()
    }

    pub fn dims2(&self) -> (usize, usize) {
        dims2(&self.shape())
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    /// Value of a scalar variable.
    pub fn item(&self) -> Result<f64> {
        self.tape.nodes.borrow()[self.idx].value.item()
    }

    fn with<T>(&self, f: impl FnOnce(&Tensor) -> T) -> Result<T> {
        self.tape.check(*self)?;
        Ok(f(&self.tape.nodes.borrow()[self.idx].value))
    }

    fn with2<T>(&self, other: Var<'t>, f: impl FnOnce(&Tensor, &Tensor) -> Result<T>) -> Result<T> {
        self.tape.check(*self)?;
        self.tape.check(other)?;
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.idx].value, &nodes[other.idx].value)
    }

    fn unary(&self, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let value = self.with(|t| Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()))?;
        self.tape.push(value, op, name)
    }

    fn binary(&self, other: Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let value = self.with2(other, |a, b| {
            let (r, c, shape) = broadcast_dims(name, a, b)?;
            let (ar, ac) = a.dims2();
            let (br, bc) = b.dims2();
            let mut data = Vec::with_capacity(r * c);
            if (ar, ac) == (br, bc) {
                data.extend(a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)));
            } else {
                for i in 0..r {
                    for j in 0..c {
                        data.push(f(a.data()[bidx(i, j, ar, ac)], b.data()[bidx(i, j, br, bc)]));
                    }
                }
            }
            Ok(Tensor::from_parts(shape, data))
        })?;
        self.tape.push(value, op, name)
    }

    /// Matrix product `[n, k] · [k, m]`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.with2(other, |a, b| {
            let (n, k) = a.dims2();
            let (k2, m) = b.dims2();
            if k != k2 || a.shape().len() > 2 || b.shape().len() > 2 {
                return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            Ok(Tensor::from_parts(vec![n, m], matmul(a.data(), b.data(), n, k, m)))
        })?;
        self.tape.push(value, Op::MatMul(self.idx, other.idx), "matmul")
    }

    /// Elementwise sum with row/column broadcasting.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.idx, other.idx), |x, y| x + y)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.idx, other.idx), |x, y| x - y)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.idx, other.idx), |x, y| x * y)
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.unary("neg", Op::Neg(self.idx), |x| -x)
    }

    pub fn scale(&self, s: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.idx, s), move |x| x * s)
    }

    pub fn add_scalar(&self, s: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", Op::AddScalar(self.idx), move |x| x + s)
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary("tanh", Op::Tanh(self.idx), f64::tanh)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid(self.idx), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp(self.idx), f64::exp)
    }

    pub fn log(&self) -> Result<Var<'t>> {
        self.unary("log", Op::Log(self.idx), f64::ln)
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        self.unary("abs", Op::Abs(self.idx), f64::abs)
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary("square", Op::Square(self.idx), |x| x * x)
    }

    /// Elementwise `1 / x`.
    pub fn recip(&self) -> Result<Var<'t>> {
        self.unary("recip", Op::Recip(self.idx), |x| 1.0 / x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.unary("clamp", Op::Clamp { src: self.idx, lo, hi }, move |x| x.clamp(lo, hi))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Result<Var<'t>> {
        let v = self.with(|t| t.data().iter().sum::<f64>())?;
        self.tape.push(Tensor::scalar(v), Op::Sum(self.idx), "sum")
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let n = self.with(|t| t.len())?;
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Row sums, `[n, m] -> [n, 1]`.
    pub fn sum_cols(&self) -> Result<Var<'t>> {
        let value = self.with(|t| {
            let (r, c) = t.dims2();
            let data = (0..r).map(|i| t.data()[i * c..(i + 1) * c].iter().sum()).collect();
            Tensor::from_parts(vec![r, 1], data)
        })?;
        self.tape.push(value, Op::SumCols(self.idx), "sum_cols")
    }

    /// Column sums, `[n, m] -> [1, m]`.
    pub fn sum_rows(&self) -> Result<Var<'t>> {
        let value = self.with(|t| {
            let (r, c) = t.dims2();
            let mut data = vec![0.0; c];
            for i in 0..r {
                for (d, v) in data.iter_mut().zip(&t.data()[i * c..(i + 1) * c]) {
                    *d += v;
                }
            }
            Tensor::from_parts(vec![1, c], data)
        })?;
        self.tape.push(value, Op::SumRows(self.idx), "sum_rows")
    }

    /// Columns `start..end`.
    pub fn cols_range(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = self.with(|t| {
            let (r, c) = t.dims2();
            if start > end || end > c {
                return Err(Error::shape("cols_range", format!("{start}..{end} of {c} columns")));
            }
            let w = end - start;
            let mut data = Vec::with_capacity(r * w);
            for i in 0..r {
                data.extend_from_slice(&t.data()[i * c + start..i * c + end]);
            }
            Ok(Tensor::from_parts(vec![r, w], data))
        })??;
        self.tape.push(value, Op::SliceCols { src: self.idx, start }, "cols_range")
    }

    /// Rows `start..end`.
    pub fn rows_range(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = self.with(|t| {
            let (r, c) = t.dims2();
            if start > end || end > r {
                return Err(Error::shape("rows_range", format!("{start}..{end} of {r} rows")));
            }
            Ok(Tensor::from_parts(vec![end - start, c], t.data()[start * c..end * c].to_vec()))
        })??;
        self.tape.push(value, Op::SliceRows { src: self.idx, start }, "rows_range")
    }

    /// Column-wise concatenation of vars with equal row counts.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let tape = first.tape;
        for p in parts {
            tape.check(*p)?;
        }
        let value = {
            let nodes = tape.nodes.borrow();
            let r = nodes[first.idx].value.rows();
            let widths: Vec<usize> = parts.iter().map(|p| nodes[p.idx].value.cols()).collect();
            if parts.iter().any(|p| nodes[p.idx].value.rows() != r) {
                return Err(Error::shape("concat_cols", "row counts differ"));
            }
            let c: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                for (p, &w) in parts.iter().zip(&widths) {
                    data.extend_from_slice(&nodes[p.idx].value.data()[i * w..(i + 1) * w]);
                }
            }
            Tensor::from_parts(vec![r, c], data)
        };
        tape.push(value, Op::Concat(parts.iter().map(|p| p.idx).collect()), "concat_cols")
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.with(|t| t.reshape(shape))??;
        self.tape.push(value, Op::Reshape(self.idx), "reshape")
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let value = self.with(|t| {
            let (r, c) = t.dims2();
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = t.data()[i * c + j];
                }
            }
            Tensor::from_parts(vec![c, r], data)
        })?;
        self.tape.push(value, Op::Transpose(self.idx), "transpose")
    }

    /// Column-wise maximum over consecutive groups of `block` rows,
    /// `[b·block, m] -> [b, m]`. Ties resolve to the earliest row.
    pub fn block_max(&self, block: usize) -> Result<Var<'t>> {
        let (value, argmax) = self.with(|t| {
            let (r, c) = t.dims2();
            if block == 0 || r % block != 0 {
                return Err(Error::shape("block_max", format!("{r} rows into blocks of {block}")));
            }
            let nb = r / block;
            let mut data = vec![f64::NEG_INFINITY; nb * c];
            let mut arg = vec![0usize; nb * c];
            for b in 0..nb {
                for i in b * block..(b + 1) * block {
                    for j in 0..c {
                        let v = t.data()[i * c + j];
                        if v > data[b * c + j] {
                            data[b * c + j] = v;
                            arg[b * c + j] = i * c + j;
                        }
                    }
                }
            }
            Ok((Tensor::from_parts(vec![nb, c], data), arg))
        })??;
        self.tape.push(value, Op::BlockMax { src: self.idx, argmax }, "block_max")
    }

    /// Repeats each row `times` times, `[b, m] -> [b·times, m]`.
    pub fn repeat_rows(&self, times: usize) -> Result<Var<'t>> {
        let value = self.with(|t| {
            let (r, c) = t.dims2();
            let mut data = Vec::with_capacity(r * times * c);
            for i in 0..r {
                for _ in 0..times {
                    data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
                }
            }
            Tensor::from_parts(vec![r * times, c], data)
        })?;
        self.tape.push(value, Op::RepeatRows { src: self.idx, times }, "repeat_rows")
    }

    /// `out[i] = in[i + offset]` within each group of `block` rows, zero
    /// where the source falls outside the group.
    pub fn shift_rows(&self, offset: isize, block: usize) -> Result<Var<'t>> {
        let value = self.with(|t| {
            let (r, c) = t.dims2();
            if block == 0 || r % block != 0 {
                return Err(Error::shape("shift_rows", format!("{r} rows into blocks of {block}")));
            }
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                if let Some(s) = shifted_row(i, offset, block, r) {
                    data[i * c..(i + 1) * c].copy_from_slice(&t.data()[s * c..(s + 1) * c]);
                }
            }
            Ok(Tensor::from_parts(vec![r, c], data))
        })??;
        self.tape.push(value, Op::ShiftRows { src: self.idx, offset, block }, "shift_rows")
    }

    /// Solves `A z = b` for every row `b` of `self`, with `a` triangular.
    /// Only the selected triangle of `a` is read; `unit` assumes a unit
    /// diagonal.
    pub fn tri_solve(&self, a: Var<'t>, lower: bool, unit: bool) -> Result<Var<'t>> {
        let value = self.with2(a, |b, am| {
            let (d, d2) = am.dims2();
            let (r, c) = b.dims2();
            if d != d2 || c != d {
                return Err(Error::shape("tri_solve", format!("{:?} with {:?}", am.shape(), b.shape())));
            }
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                data.extend(solve_tri(am.data(), d, &b.data()[i * c..(i + 1) * c], lower, unit));
            }
            Ok(Tensor::from_parts(vec![r, c], data))
        })?;
        self.tape.push(value, Op::TriSolve { a: a.idx, b: self.idx, lower, unit }, "tri_solve")
    }
}
