//! Distances between point sets and the 1-nearest-neighbor two-sample
//! test built on them.
//!
//! Sets are `[n, d]` tensors whose rows are points.
//!
//! - Chamfer distance uses squared Euclidean terms, each direction averaged
//!   over its own set.
//! - EMD is the mean unsquared Euclidean distance under the best bijection,
//!   solved exactly.
//!
//! ```
//! use softflow::metrics::{chamfer, emd};
//! use softflow::Tensor;
//!
//! let x = Tensor::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
//! let y = Tensor::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
//! assert_eq!(chamfer(&x, &y).unwrap(), 2.0);
//! assert_eq!(emd(&x, &y).unwrap(), 1.0);
//! ```

pub mod assignment;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest set size handled by the exact EMD solver.
pub const EMD_EXACT_LIMIT: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cd,
    Emd,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Cd => "cd",
            Metric::Emd => "emd",
        }
    }

    pub fn distance(self, x: &Tensor, y: &Tensor) -> Result<f64> {
        match self {
            Metric::Cd => chamfer(x, y),
            Metric::Emd => emd(x, y),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cd" => Ok(Metric::Cd),
            "emd" => Ok(Metric::Emd),
            _ => Err(Error::Invalid(format!("unknown metric `{s}` (expected cd or emd)"))),
        }
    }
}

fn sq_dist(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_pair(x: &Tensor, y: &Tensor) -> Result<()> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::Empty);
    }
    if x.cols() != y.cols() {
        return Err(Error::shape("point sets", format!("{} vs {} coordinates", x.cols(), y.cols())));
    }
    Ok(())
}

/// For every row of `x`, the squared distance to the nearest row of `y`.
pub fn nearest_sq(x: &Tensor, y: &Tensor) -> Vec<f64> {
    (0..x.rows())
        .map(|i| {
            let p = x.row(i);
            (0..y.rows()).map(|j| sq_dist(p, y.row(j))).fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// `mean_x min_y ‖x − y‖² + mean_y min_x ‖y − x‖²`.
pub fn chamfer(x: &Tensor, y: &Tensor) -> Result<f64> {
    check_pair(x, y)?;
    let a: f64 = nearest_sq(x, y).iter().sum::<f64>() / x.rows() as f64;
    let b: f64 = nearest_sq(y, x).iter().sum::<f64>() / y.rows() as f64;
    Ok(a + b)
}

/// `min_π (1/n) Σ ‖xᵢ − y_π(i)‖` over bijections, for sets of equal size up
/// to [`EMD_EXACT_LIMIT`].
pub fn emd(x: &Tensor, y: &Tensor) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.rows();
    if y.rows() != n {
        return Err(Error::Cardinality(n, y.rows()));
    }
    if n > EMD_EXACT_LIMIT {
        return Err(Error::Invalid(format!(
            "exact EMD is limited to {EMD_EXACT_LIMIT} points, got {n}"
        )));
    }
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(x.row(i), y.row(j)).sqrt())
        .collect();
    let (_, total) = assignment::solve(&cost, n)?;
    Ok(total / n as f64)
}

/// Mean over rows of `gen` of the distance to the nearest row of `reference`.
pub fn nearest_manifold_gap(gen: &Tensor, reference: &Tensor) -> Result<f64> {
    check_pair(gen, reference)?;
    Ok(nearest_sq(gen, reference).iter().map(|d| d.sqrt()).sum::<f64>() / gen.rows() as f64)
}

/// Row-major `a.len() × b.len()` matrix of set-to-set distances.
pub fn distance_matrix(a: &[Tensor], b: &[Tensor], metric: Metric) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(metric.distance(x, y)?);
        }
    }
    Ok(out)
}

/// Leave-one-out 1-NN accuracy, in percent, over the pooled list
/// `gen ++ reference`. Each set is labeled by its list and classified by
/// its nearest other set; exact ties go to the lowest pooled index.
pub fn one_nna(gen: &[Tensor], reference: &[Tensor], metric: Metric) -> Result<f64> {
    if gen.len() < 2 || reference.len() < 2 {
        return Err(Error::Invalid(format!(
            "1-NNA needs at least 2 sets per list, got {} and {}",
            gen.len(),
            reference.len()
        )));
    }
    let pooled: Vec<&Tensor> = gen.iter().chain(reference).collect();
    let n = pooled.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = metric.distance(pooled[i], pooled[j])?;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(one_nna_from_matrix(&d, gen.len(), reference.len()))
}

/// [`one_nna`] on a precomputed pooled `(g + r) × (g + r)` distance matrix
/// whose first `g` rows are the generated sets.
pub fn one_nna_from_matrix(d: &[f64], g: usize, r: usize) -> f64 {
    let n = g + r;
    let correct = (0..n)
        .filter(|&i| {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for j in (0..n).filter(|&j| j != i) {
                if d[i * n + j] < best_d {
                    best_d = d[i * n + j];
                    best = j;
                }
            }
            (best < g) == (i < g)
        })
        .count();
    100.0 * correct as f64 / n as f64
}
