use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Centering and scaling applied when a shape is ingested:
/// `normalized = (original − center) / radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: [0.0; 3],
            radius: 1.0,
        }
    }
}

/// A set of 3-D points, stored normalized, with the transform that maps
/// it back to original coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    /// `[m, 3]`, normalized.
    pub points: Tensor,
    pub id: String,
    pub norm: Normalization,
}

impl PointSet {
    /// Wraps points that are already in model coordinates.
    pub fn raw(points: Tensor, id: impl Into<String>) -> Result<Self> {
        check_points(&points)?;
        Ok(Self {
            points,
            id: id.into(),
            norm: Normalization::identity(),
        })
    }

    /// Centers on the mean and scales so the farthest point is at distance 1.
    pub fn ingest(points: &Tensor, id: impl Into<String>) -> Result<Self> {
        check_points(points)?;
        let m = points.rows() as f64;
        let mut center = [0.0; 3];
        for i in 0..points.rows() {
            for (c, v) in center.iter_mut().zip(points.row(i)) {
                *c += v / m;
            }
        }
        let radius = (0..points.rows())
            .map(|i| dist(points.row(i), &center))
            .fold(0.0, f64::max);
        if !(radius > 1e-12) {
            return Err(Error::Degenerate("point set collapses to a single point".into()));
        }
        let norm = Normalization { center, radius };
        Ok(Self {
            points: apply(points, |p, j| (p - center[j]) / radius),
            id: id.into(),
            norm,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    /// Points in original coordinates.
    pub fn original(&self) -> Tensor {
        let n = self.norm;
        apply(&self.points, |p, j| p * n.radius + n.center[j])
    }

    /// Maps points from original coordinates into this set's normalized frame.
    pub fn to_model(&self, points: &Tensor) -> Tensor {
        let n = self.norm;
        apply(points, |p, j| (p - n.center[j]) / n.radius)
    }

    /// Maps normalized points into this set's original coordinates.
    pub fn to_original(&self, points: &Tensor) -> Tensor {
        let n = self.norm;
        apply(points, |p, j| p * n.radius + n.center[j])
    }
}

fn check_points(points: &Tensor) -> Result<()> {
    if points.shape().len() != 2 || points.cols() != 3 {
        return Err(Error::shape("PointSet", format!("expected [m, 3], got {:?}", points.shape())));
    }
    if points.rows() == 0 {
        return Err(Error::Empty);
    }
    Ok(())
}

fn dist(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn apply(points: &Tensor, f: impl Fn(f64, usize) -> f64) -> Tensor {
    let data = points
        .data()
        .iter()
        .enumerate()
        .map(|(k, &p)| f(p, k % 3))
        .collect();
    Tensor::from_parts(vec![points.rows(), 3], data)
}

/// Parametric synthetic shapes made of thin parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Shape {
    /// Square seat of half-width `seat` in the `y = 0` plane with four
    /// vertical legs of length `leg` below the points `(±inset·seat, ±inset·seat)`.
    /// Half the points lie on the seat, half on the legs.
    Chair {
        #[serde(default = "one")]
        seat: f64,
        #[serde(default = "leg")]
        leg: f64,
        #[serde(default = "inset")]
        inset: f64,
    },
    /// Three axis-aligned segments of half-length `arm` crossing at the origin.
    Cross {
        #[serde(default = "one")]
        arm: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn leg() -> f64 {
    1.5
}
fn inset() -> f64 {
    0.8
}

impl Shape {
    pub fn chair() -> Self {
        Shape::Chair {
            seat: one(),
            leg: leg(),
            inset: inset(),
        }
    }

    pub fn cross() -> Self {
        Shape::Cross { arm: one() }
    }

    /// `n` points and, per point, whether it lies on a one-dimensional
    /// part (a leg or an arm).
    pub fn sample_labeled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Tensor, Vec<bool>) {
        let mut pts = Vec::with_capacity(3 * n);
        let mut thin = Vec::with_capacity(n);
        for _ in 0..n {
            match *self {
                Shape::Chair { seat, leg, inset } => {
                    if rng.random_bool(0.5) {
                        let x = seat * (2.0 * rng.random::<f64>() - 1.0);
                        let z = seat * (2.0 * rng.random::<f64>() - 1.0);
                        pts.extend([x, 0.0, z]);
                        thin.push(false);
                    } else {
                        let k = rng.random_range(0..4);
                        let sx = if k & 1 == 0 { 1.0 } else { -1.0 };
                        let sz = if k & 2 == 0 { 1.0 } else { -1.0 };
                        let y = -leg * rng.random::<f64>();
                        pts.extend([sx * inset * seat, y, sz * inset * seat]);
                        thin.push(true);
                    }
                }
                Shape::Cross { arm } => {
                    let axis = rng.random_range(0..3);
                    let mut p = [0.0; 3];
                    p[axis] = arm * (2.0 * rng.random::<f64>() - 1.0);
                    pts.extend(p);
                    thin.push(true);
                }
            }
        }
        (Tensor::from_parts(vec![n, 3], pts), thin)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor {
        self.sample_labeled(n, rng).0
    }

    /// Euclidean distance from `p` to the nearest one-dimensional part.
    pub fn thin_distance(&self, p: [f64; 3]) -> f64 {
        match *self {
            Shape::Chair { seat, leg, inset } => {
                let c = inset * seat;
                let mut best = f64::INFINITY;
                for (sx, sz) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
                    let y = p[1].clamp(-leg, 0.0);
                    best = best.min(dist(&p, &[sx * c, y, sz * c]));
                }
                best
            }
            Shape::Cross { arm } => (0..3)
                .map(|a| {
                    let mut q = [0.0; 3];
                    q[a] = p[a].clamp(-arm, arm);
                    dist(&p, &q)
                })
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// A family of randomized shapes for distribution-level experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    /// Chairs with seat half-width in `[0.8, 1.2]`, leg length in
    /// `[1.0, 2.0]` and leg inset in `[0.6, 0.95]`.
    Chair,
    /// Crosses with arm half-length in `[0.5, 1.5]`.
    Cross,
}

impl ShapeFamily {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> Shape {
        match self {
            ShapeFamily::Chair => Shape::Chair {
                seat: rng.random_range(0.8..1.2),
                leg: rng.random_range(1.0..2.0),
                inset: rng.random_range(0.6..0.95),
            },
            ShapeFamily::Cross => Shape::Cross {
                arm: rng.random_range(0.5..1.5),
            },
        }
    }
}

impl std::str::FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chair" => Ok(ShapeFamily::Chair),
            "cross" => Ok(ShapeFamily::Cross),
            _ => Err(Error::UnknownDataset(s.to_string())),
        }
    }
}
