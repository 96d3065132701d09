use serde::{Deserialize, Serialize};

use crate::cnf::{CnfConfig, CnfDynamics};
use crate::error::{Error, Result};
use crate::flows::{BlockKind, ConditionVector, FlowStack, FlowStackConfig};
use crate::optim::{adam_step, AdamState};
use crate::params::ParamStore;
use crate::rng::{init_rng, step_rng};
use crate::tape::Tape;

use super::{perturb, sample, softflow_loss, Backend, NoiseSchedule, ToyDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BackendConfig {
    /// Blocks of actnorm, invertible 1×1 and affine coupling.
    Discrete {
        #[serde(default = "d_blocks")]
        blocks: usize,
        #[serde(default = "d_width")]
        width: usize,
        #[serde(default = "d_depth")]
        depth: usize,
    },
    /// RK4-integrated velocity network.
    Cnf {
        #[serde(default = "c_hidden")]
        hidden: usize,
        #[serde(default = "c_layers")]
        layers: usize,
        #[serde(default = "c_steps")]
        steps: usize,
    },
}

fn d_blocks() -> usize {
    8
}
fn d_width() -> usize {
    64
}
fn d_depth() -> usize {
    2
}
fn c_hidden() -> usize {
    32
}
fn c_layers() -> usize {
    2
}
fn c_steps() -> usize {
    8
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::discrete()
    }
}

impl BackendConfig {
    pub fn discrete() -> Self {
        BackendConfig::Discrete {
            blocks: d_blocks(),
            width: d_width(),
            depth: d_depth(),
        }
    }

    pub fn cnf() -> Self {
        BackendConfig::Cnf {
            hidden: c_hidden(),
            layers: c_layers(),
            steps: c_steps(),
        }
    }
}

impl BackendConfig {
    pub fn is_cnf(&self) -> bool {
        matches!(self, BackendConfig::Cnf { .. })
    }

    pub fn build(&self, store: &mut ParamStore, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Backend> {
        Ok(match *self {
            BackendConfig::Discrete { blocks, width, depth } => Backend::Discrete(FlowStack::build(
                store,
                "flow",
                &FlowStackConfig {
                    dim: 2,
                    blocks,
                    kind: BlockKind::Coupling,
                    width,
                    depth,
                    c_dim: 1,
                    global_dim: 0,
                    kernel: 1,
                },
                rng,
            )?),
            BackendConfig::Cnf { hidden, layers, steps } => Backend::Cnf(CnfDynamics::new(
                store,
                "cnf",
                &CnfConfig {
                    dim: 2,
                    hidden,
                    layers,
                    c_dim: 1,
                    t0: 0.0,
                    t1: 1.0,
                    steps,
                },
                rng,
            )?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftFlowConfig {
    pub dataset: ToyDataset,
    pub batch: usize,
    pub lr: f64,
    pub schedule: NoiseSchedule,
    pub backend: BackendConfig,
}

impl Default for SoftFlowConfig {
    fn default() -> Self {
        Self {
            dataset: ToyDataset::TwoSines,
            batch: 128,
            lr: 1e-3,
            schedule: NoiseSchedule::softflow_2d(),
            backend: BackendConfig::default(),
        }
    }
}

/// Training state for a 2-D model. Step `k` draws its data and noise from
/// a generator that depends only on `(seed, k)`.
#[derive(Clone, Debug)]
pub struct SoftFlowTrainer {
    pub cfg: SoftFlowConfig,
    pub seed: u64,
    pub backend: Backend,
    pub store: ParamStore,
    pub adam: AdamState,
    pub step: u64,
}

impl SoftFlowTrainer {
    pub fn new(cfg: SoftFlowConfig, seed: u64) -> Result<Self> {
        if cfg.batch < 2 {
            return Err(Error::config("batch", "must be at least 2"));
        }
        let mut rng = init_rng(seed);
        let mut store = ParamStore::new();
        let backend = cfg.backend.build(&mut store, &mut rng)?;
        let adam = AdamState::new(cfg.lr).map_err(|e| Error::config("lr", e.to_string()))?;
        Ok(Self {
            cfg,
            seed,
            backend,
            store,
            adam,
            step: 0,
        })
    }

    /// One optimizer step; returns the loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let mut rng = step_rng(self.seed, self.step);
        let x = sample(self.cfg.dataset, self.cfg.batch, &mut rng)?;
        let batch = perturb(&x, &self.cfg.schedule, &mut rng);
        if self.step == 0 {
            if let Backend::Discrete(stack) = &self.backend {
                let cond = ConditionVector::per_row(batch.c_in.data().to_vec())?;
                stack.init_actnorm(&mut self.store, &batch.x_prime, &cond)?;
            }
        }
        let tape = Tape::new();
        let loss = softflow_loss(&tape, &batch, &self.backend, &self.store)
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
