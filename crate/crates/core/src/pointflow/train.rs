use std::path::PathBuf;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::ConditionVector;
use crate::optim::{adam_step, AdamState};
use crate::params::ParamStore;
use crate::rng::{aux_rng, init_rng, step_rng, Purpose};
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::{ElboDraws, PointFlowConfig, PointSet, Shape, ShapeFamily, SoftPointFlow};

/// Points drawn to fix the normalization of a parametric shape.
const NORM_POINTS: usize = 4096;

/// Where training sets come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PointData {
    /// One parametric shape, resampled every step.
    Shape { shape: Shape },
    /// `count` shapes drawn from a family with the run's data stream.
    Family {
        family: ShapeFamily,
        #[serde(default = "family_count")]
        count: usize,
    },
    /// Point files in a directory; each step subsamples every chosen file.
    Dir { path: PathBuf },
}

fn family_count() -> usize {
    16
}

impl Default for PointData {
    fn default() -> Self {
        PointData::Shape { shape: Shape::chair() }
    }
}

#[derive(Clone, Debug)]
enum Source {
    Parametric(Shape),
    Pool(Tensor),
}

/// One training shape and its fixed normalization.
#[derive(Clone, Debug)]
pub struct TrainShape {
    source: Source,
    /// Normalized reference set; its `norm` is applied to every draw.
    pub reference: PointSet,
}

impl TrainShape {
    fn parametric(shape: Shape, id: String, rng: &mut ChaCha8Rng) -> Result<Self> {
        let reference = PointSet::ingest(&shape.sample(NORM_POINTS, rng), id)?;
        Ok(Self {
            source: Source::Parametric(shape),
            reference,
        })
    }

    /// `m` normalized points.
    pub fn draw<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Tensor> {
        match &self.source {
            Source::Parametric(shape) => Ok(self.reference.to_model(&shape.sample(m, rng))),
            Source::Pool(pool) => {
                if pool.rows() < m {
                    return Err(Error::Cardinality(pool.rows(), m));
                }
                let idx = sample_indices(rng, pool.rows(), m).into_vec();
                Ok(self.reference.to_model(&pool.select_rows(&idx)))
            }
        }
    }

    pub fn shape(&self) -> Option<Shape> {
        match self.source {
            Source::Parametric(s) => Some(s),
            Source::Pool(_) => None,
        }
    }
}

impl PointData {
    pub fn resolve(&self, seed: u64) -> Result<Vec<TrainShape>> {
        let mut rng = aux_rng(seed, Purpose::Data);
        match self {
            PointData::Shape { shape } => Ok(vec![TrainShape::parametric(*shape, "shape".into(), &mut rng)?]),
            PointData::Family { family, count } => {
                if *count == 0 {
                    return Err(Error::config("data.count", "must be positive"));
                }
                (0..*count)
                    .map(|i| {
                        let shape = family.draw(&mut rng);
                        TrainShape::parametric(shape, format!("shape{i:03}"), &mut rng)
                    })
                    .collect()
            }
            PointData::Dir { path } => {
                let sets = crate::io::read_point_dir(path)?;
                if sets.is_empty() {
                    return Err(Error::config("data.path", format!("no point files in {}", path.display())));
                }
                sets.into_iter()
                    .map(|(id, pts)| {
                        let reference = PointSet::ingest(&pts, id)?;
                        Ok(TrainShape {
                            source: Source::Pool(pts),
                            reference,
                        })
                    })
                    .collect()
            }
        }
    }
}

/// Training state for the point-set model. As with the 2-D trainer, step
/// `k` draws everything from a generator that depends only on `(seed, k)`.
#[derive(Clone, Debug)]
pub struct PointFlowTrainer {
    pub cfg: PointFlowConfig,
    pub seed: u64,
    pub model: SoftPointFlow,
    pub store: ParamStore,
    pub adam: AdamState,
    pub shapes: Vec<TrainShape>,
    pub step: u64,
}

impl PointFlowTrainer {
    pub fn new(cfg: PointFlowConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let shapes = cfg.data.resolve(seed)?;
        let mut rng = init_rng(seed);
        let mut store = ParamStore::new();
        let model = SoftPointFlow::new(&mut store, &cfg, &mut rng)?;
        let mut adam = AdamState::new(cfg.lr).map_err(|e| Error::config("lr", e.to_string()))?;
        if let Some(d) = cfg.decay {
            adam = adam
                .with_decay(d.factor, d.interval)
                .map_err(|e| Error::config("decay", e.to_string()))?;
        }
        Ok(Self {
            cfg,
            seed,
            model,
            store,
            adam,
            shapes,
            step: 0,
        })
    }

    /// The batch of step `step`: `[batch · points, 3]` normalized points.
    fn batch(&self, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let parts = (0..self.cfg.batch)
            .map(|_| {
                let k = rng.random_range(0..self.shapes.len());
                self.shapes[k].draw(self.cfg.points, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::vstack(&parts)
    }

    /// One optimizer step; returns the loss `−ELBO / points` averaged over
    /// the batch, before the update.
    pub fn step(&mut self) -> Result<f64> {
        let mut rng = step_rng(self.seed, self.step);
        let m = self.cfg.points;
        let x = self.batch(&mut rng)?;
        let draws = ElboDraws::sample(&x, self.cfg.batch, self.cfg.latent, &self.cfg.schedule, &mut rng);
        if self.step == 0 {
            let tape = Tape::new();
            let (mu, _) = self.model.encoder.forward(&tape, &self.store, tape.constant(x.clone()), m)?;
            let cond = ConditionVector::per_row(draws.perturbed.c_in.data().to_vec())?.with_global(mu.value(), m);
            self.model
                .decoder
                .init_actnorm(&mut self.store, &draws.perturbed.x_prime, &cond)?;
        }
        let tape = Tape::new();
        let loss = self
            .model
            .elbo(&tape, &self.store, &x, m, &draws)
            .and_then(|t| t.total.mean()?.scale(-1.0 / m as f64))
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {}", self.step)),
                e => e,
            })?;
        let value = loss.item()?;
        tape.backward(loss, &mut self.store)?;
        adam_step(&mut self.store, &mut self.adam)?;
        self.step += 1;
        Ok(value)
    }

    /// Runs until `self.step == until`, calling `log(step, loss, lr)` after
    /// every step.
    pub fn train_until(&mut self, until: u64, mut log: impl FnMut(u64, f64, f64)) -> Result<()> {
        while self.step < until {
            let lr = self.adam.lr;
            let loss = self.step()?;
            log(self.step, loss, lr);
        }
        Ok(())
    }
}
