//! Toy 2-D datasets supported on one-dimensional curves, and the distance
//! from a point to each curve set.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SINE_AMPLITUDE: f64 = 2.5;
/// Points per branch in the sine-curve discretization.
pub const SINE_GRID: usize = 10_000;
pub const CIRCLE_RADII: [f64; 2] = [1.0, 2.0];
const ARC_RADIUS: f64 = 1.5;
const ARC_OFFSET: [f64; 2] = [0.75, 0.25];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToyDataset {
    #[serde(rename = "2sines")]
    TwoSines,
    #[serde(rename = "target")]
    Target,
    #[serde(rename = "circles")]
    Circles,
    #[serde(rename = "two-arcs")]
    TwoArcs,
    #[serde(rename = "line-grid")]
    LineGrid,
}

impl ToyDataset {
    pub const ALL: [ToyDataset; 5] = [
        ToyDataset::TwoSines,
        ToyDataset::Target,
        ToyDataset::Circles,
        ToyDataset::TwoArcs,
        ToyDataset::LineGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToyDataset::TwoSines => "2sines",
            ToyDataset::Target => "target",
            ToyDataset::Circles => "circles",
            ToyDataset::TwoArcs => "two-arcs",
            ToyDataset::LineGrid => "line-grid",
        }
    }
}

impl fmt::Display for ToyDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToyDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToyDataset::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::UnknownDataset(s.to_string()))
    }
}

/// `bsz` points from the named dataset, `[bsz, 2]`.
pub fn sample_toy<R: Rng + ?Sized>(name: &str, bsz: usize, rng: &mut R) -> Result<Tensor> {
    sample(name.parse()?, bsz, rng)
}

pub fn sample<R: Rng + ?Sized>(ds: ToyDataset, bsz: usize, rng: &mut R) -> Result<Tensor> {
    if bsz == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(2 * bsz);
    match ds {
        ToyDataset::TwoSines => {
            let x: Vec<f64> = (0..bsz).map(|_| (rng.random::<f64>() - 0.5) * 2.0 * PI).collect();
            for xi in x {
                let u = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                out.extend([xi, u * xi.sin() * SINE_AMPLITUDE]);
            }
        }
        ToyDataset::Target => {
            // mirrors the reference generator, including the zero-weighted
            // terms that put shapes 1 and 4 on the axes
            let shapes: Vec<usize> = (0..bsz).map(|_| rng.random_range(0..7)).collect();
            let ux: Vec<f64> = (0..bsz).map(|_| rng.random::<f64>()).collect();
            let uy: Vec<f64> = (0..bsz).map(|_| rng.random::<f64>()).collect();
            for i in 0..bsz {
                let m = |k: usize| if shapes[i] == k { 1.0 } else { 0.0 };
                let theta = 2.0 * PI * i as f64 / bsz as f64;
                let x = (m(0) + m(1) + m(2)) * (ux[i] - 0.5) * 4.0
                    + (-m(3) + 0.0 * m(4) + m(5)) * 2.0
                    + m(6) * theta.cos();
                let y = (-m(0) + 0.0 * m(1) + m(2)) * 2.0
                    + (m(3) + m(4) + m(5)) * (uy[i] - 0.5) * 4.0
                    + m(6) * theta.sin();
                out.extend([x, y]);
            }
        }
        ToyDataset::Circles => {
            for _ in 0..bsz {
                let r = CIRCLE_RADII[usize::from(rng.random_bool(0.5))];
                let t = rng.random::<f64>() * 2.0 * PI;
                out.extend([r * t.cos(), r * t.sin()]);
            }
        }
        ToyDataset::TwoArcs => {
            for _ in 0..bsz {
                let upper = rng.random_bool(0.5);
                let t = rng.random::<f64>() * PI;
                let (c, t) = arc_for(upper, t);
                out.extend([c[0] + ARC_RADIUS * t.cos(), c[1] + ARC_RADIUS * t.sin()]);
            }
        }
        ToyDataset::LineGrid => {
            let segs = grid_segments();
            for _ in 0..bsz {
                let (a, b) = segs[rng.random_range(0..segs.len())];
                let u: f64 = rng.random();
                out.extend([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]);
            }
        }
    }
    Tensor::new(vec![bsz, 2], out)
}

/// Center and absolute angle for parameter `t ∈ [0, π]` on one arc.
fn arc_for(upper: bool, t: f64) -> ([f64; 2], f64) {
    if upper {
        ([-ARC_OFFSET[0], -ARC_OFFSET[1]], t)
    } else {
        ([ARC_OFFSET[0], ARC_OFFSET[1]], t + PI)
    }
}

/// Horizontal and vertical lines at −2, −1, 0, 1, 2 spanning [−2, 2].
fn grid_segments() -> Vec<([f64; 2], [f64; 2])> {
    let mut v = Vec::with_capacity(10);
    for k in -2..=2 {
        let c = f64::from(k);
        v.push(([-2.0, c], [2.0, c]));
        v.push(([c, -2.0], [c, 2.0]));
    }
    v
}

fn target_segments() -> Vec<([f64; 2], [f64; 2])> {
    let mut v = Vec::with_capacity(6);
    for c in [-2.0, 0.0, 2.0] {
        v.push(([-2.0, c], [2.0, c]));
        v.push(([c, -2.0], [c, 2.0]));
    }
    v
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let u = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    let (qx, qy) = (a[0] + u * dx, a[1] + u * dy);
    ((p[0] - qx).powi(2) + (p[1] - qy).powi(2)).sqrt()
}

/// Distance to the arc of radius `r` around `c` covering angles
/// `[lo, lo + π]`.
fn arc_distance(p: [f64; 2], c: [f64; 2], r: f64, lo: f64) -> f64 {
    let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
    let rho = (dx * dx + dy * dy).sqrt();
    let ang = (dy.atan2(dx) - lo).rem_euclid(2.0 * PI);
    if ang <= PI {
        (rho - r).abs()
    } else {
        [lo, lo + PI]
            .iter()
            .map(|t| ((c[0] + r * t.cos() - p[0]).powi(2) + (c[1] + r * t.sin() - p[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Discretized sine branches, sorted by x.
#[derive(Clone, Debug)]
pub struct SineGrid {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl SineGrid {
    pub fn new(n: usize) -> Self {
        let xs: Vec<f64> = (0..n).map(|i| -PI + 2.0 * PI * i as f64 / (n - 1) as f64).collect();
        let ys = xs.iter().map(|x| SINE_AMPLITUDE * x.sin()).collect();
        Self { xs, ys }
    }

    /// Grid points as `(x, y)` pairs; the second branch is the reflection
    /// `(x, −y)` of the first.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let mut v: Vec<[f64; 2]> = self.xs.iter().zip(&self.ys).map(|(x, y)| [*x, *y]).collect();
        v.extend(self.xs.iter().zip(&self.ys).map(|(x, y)| [*x, -*y]));
        v
    }

    /// Nearest grid point distance. Scans outward from the closest x and
    /// stops once the x-gap alone exceeds the best distance.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let n = self.xs.len();
        let start = self.xs.partition_point(|x| *x < p[0]).min(n - 1);
        let mut best2 = f64::INFINITY;
        // returns false once the x-gap alone rules out the rest of the scan
        let visit = |i: usize, best2: &mut f64| {
            let dx = self.xs[i] - p[0];
            if dx * dx > *best2 {
                return false;
            }
            let y = self.ys[i];
            *best2 = best2.min(dx * dx + (y - p[1]).powi(2).min((-y - p[1]).powi(2)));
            true
        };
        for i in (0..=start).rev() {
            if !visit(i, &mut best2) {
                break;
            }
        }
        for i in start + 1..n {
            if !visit(i, &mut best2) {
                break;
            }
        }
        best2.sqrt()
    }
}

/// Distance from one point to the dataset's support.
pub fn point_distance(p: [f64; 2], ds: ToyDataset, grid: &SineGrid) -> f64 {
    match ds {
        ToyDataset::TwoSines => grid.distance(p),
        ToyDataset::Target => {
            let seg = target_segments()
                .into_iter()
                .map(|(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            seg.min(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs())
        }
        ToyDataset::Circles => {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            CIRCLE_RADII.iter().map(|c| (r - c).abs()).fold(f64::INFINITY, f64::min)
        }
        ToyDataset::TwoArcs => [true, false]
            .iter()
            .map(|&up| {
                let (c, lo) = arc_for(up, 0.0);
                arc_distance(p, c, ARC_RADIUS, lo)
            })
            .fold(f64::INFINITY, f64::min),
        ToyDataset::LineGrid => grid_segments()
            .into_iter()
            .map(|(a, b)| segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Mean Euclidean distance from `samples` (`[n, 2]`) to the dataset's
/// support.
pub fn manifold_distance(samples: &Tensor, ds: ToyDataset) -> Result<f64> {
    let (n, d) = samples.dims2();
    if n == 0 || samples.is_empty() {
        return Err(Error::Empty);
    }
    if d != 2 {
        return Err(Error::shape("manifold_distance", format!("expected 2 columns, got {d}")));
    }
    let grid = SineGrid::new(SINE_GRID);
    let total: f64 = (0..n)
        .map(|i| point_distance([samples.get2(i, 0), samples.get2(i, 1)], ds, &grid))
        .sum();
    Ok(total / n as f64)
}
