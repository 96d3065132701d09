//! Command-line workflows: training with checkpoints and a CSV log,
//! sampling to CSV and SVG, set-to-set evaluation, and dataset generation.
//!
//! Every output is a pure function of the inputs and seeds, so repeating
//! an invocation reproduces its files byte for byte. The one exception is
//! the optional wall-time column of the training log.

mod commands;
mod config;

pub use commands::{
    cmd_datagen, cmd_eval, cmd_sample, cmd_train, DatagenOptions, DatagenSource, EvalOptions, EvalReport,
    SampleOptions, TrainOptions, TrainReport, CSP_SWEEP, LOG_COLUMNS,
};
pub use config::{resolve_out, ExperimentKind, RunConfig, OUT_ROOT_ENV};

use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::pointflow::{PointFlowTrainer, SoftPointFlow};
use crate::rng::init_rng;
use crate::softflow::{Backend, SoftFlowTrainer};

/// Training state for any experiment kind.
#[derive(Clone, Debug)]
pub enum Trainer {
    Toy(SoftFlowTrainer),
    Point(PointFlowTrainer),
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(if cfg.kind.is_2d() {
            Trainer::Toy(SoftFlowTrainer::new(cfg.toy.clone(), cfg.seed)?)
        } else {
            Trainer::Point(PointFlowTrainer::new(cfg.point.clone(), cfg.seed)?)
        })
    }

    /// Rebuilds the trainer from the checkpoint's config and seed, then
    /// restores parameters, optimizer state and step count.
    pub fn resume(ck: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(&ck.config)?;
        ck.restore_params(t.store_mut())?;
        match &mut t {
            Trainer::Toy(x) => {
                x.adam = ck.optimizer.clone();
                x.step = ck.step;
            }
            Trainer::Point(x) => {
                x.adam = ck.optimizer.clone();
                x.step = ck.step;
            }
        }
        Ok(t)
    }

    pub fn step(&mut self) -> Result<f64> {
        match self {
            Trainer::Toy(t) => t.step(),
            Trainer::Point(t) => t.step(),
        }
    }

    /// Completed steps.
    pub fn steps_done(&self) -> u64 {
        match self {
            Trainer::Toy(t) => t.step,
            Trainer::Point(t) => t.step,
        }
    }

    pub fn lr(&self) -> f64 {
        self.adam().lr
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Trainer::Toy(t) => &t.store,
            Trainer::Point(t) => &t.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Trainer::Toy(t) => &mut t.store,
            Trainer::Point(t) => &mut t.store,
        }
    }

    pub fn adam(&self) -> &AdamState {
        match self {
            Trainer::Toy(t) => &t.adam,
            Trainer::Point(t) => &t.adam,
        }
    }
}

/// A trained model restored for inference.
#[derive(Clone, Debug)]
pub enum Model {
    Toy { backend: Backend, store: ParamStore },
    Point { model: SoftPointFlow, store: ParamStore },
}

impl Model {
    /// Rebuilds the architecture from the checkpoint's config and seed and
    /// loads its parameters. Training data is not touched.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = &ck.config;
        cfg.validate()?;
        if ck.model_kind != cfg.kind.name() {
            return Err(Error::Invalid(format!(
                "checkpoint says model kind `{}` but its config says `{}`",
                ck.model_kind, cfg.kind
            )));
        }
        let mut rng = init_rng(cfg.seed);
        let mut store = ParamStore::new();
        let model = if cfg.kind.is_2d() {
            let backend = cfg.toy.backend.build(&mut store, &mut rng)?;
            ck.restore_params(&mut store)?;
            Model::Toy { backend, store }
        } else {
            let model = SoftPointFlow::new(&mut store, &cfg.point, &mut rng)?;
            ck.restore_params(&mut store)?;
            Model::Point { model, store }
        };
        Ok(model)
    }
}
