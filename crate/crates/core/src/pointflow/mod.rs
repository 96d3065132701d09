//! Two-level generative model for 3-D point sets.
//!
//! An encoder maps a set to a Gaussian over a shape latent `S`. A
//! multi-scale prior flow scores `S`; an autoregressive decoder flow, run
//! once per point, models each noise-perturbed point given `S` and the
//! point's own noise condition. Training maximizes
//!
//! ```text
//! Σᵢ log p(x′ᵢ | S, cᵢ) + log p(S) + H[q(S | X)]
//! ```
//!
//! with one draw of `S` and of every `cᵢ` per step.

mod shapes;
mod train;

pub use shapes::{Normalization, PointSet, Shape, ShapeFamily};
pub use train::{PointData, PointFlowTrainer};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{
    BlockKind, Cond, ConditionVector, FlowStack, FlowStackConfig, MultiScaleConfig, MultiScaleFlow, LN_2PI,
};
use crate::nn::{Init, Linear, Mlp};
use crate::optim::StepDecay;
use crate::params::ParamStore;
use crate::softflow::{NoiseSchedule, PerturbedBatch};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Bounds on the encoder's log-variance.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointFlowConfig {
    /// Points per set during training.
    pub points: usize,
    /// Length of the shape latent, a multiple of 8.
    pub latent: usize,
    pub prior_blocks: usize,
    pub decoder_blocks: usize,
    /// Width of the prior couplings and decoder AR layers.
    pub width: usize,
    /// Gated layers per prior coupling conditioner.
    pub prior_depth: usize,
    pub prior_kernel: usize,
    pub encoder_hidden: usize,
    /// Sets per training step.
    pub batch: usize,
    pub lr: f64,
    pub decay: Option<StepDecay>,
    pub schedule: NoiseSchedule,
    pub data: PointData,
}

impl Default for PointFlowConfig {
    fn default() -> Self {
        Self {
            points: 128,
            latent: 32,
            prior_blocks: 4,
            decoder_blocks: 4,
            width: 64,
            prior_depth: 2,
            prior_kernel: 3,
            encoder_hidden: 64,
            batch: 4,
            lr: 2e-3,
            decay: None,
            schedule: NoiseSchedule::max_scaled(0.0, 0.075, 2.0).expect("valid default schedule"),
            data: PointData::default(),
        }
    }
}

impl PointFlowConfig {
    /// Layer counts and widths of the full-size model: 2048 points, 12
    /// prior blocks, 9 decoder blocks, width 256, and the learning rate
    /// halved every 5000 steps.
    pub fn full_scale() -> Self {
        Self {
            decay: Some(StepDecay {
                factor: 0.5,
                interval: 5000,
            }),
            points: 2048,
            latent: 128,
            prior_blocks: 12,
            decoder_blocks: 9,
            width: 256,
            prior_depth: 4,
            encoder_hidden: 256,
            batch: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::config("points", "must be positive"));
        }
        if self.latent == 0 || !self.latent.is_multiple_of(8) {
            return Err(Error::config("latent", format!("{} is not a positive multiple of 8", self.latent)));
        }
        if self.decoder_blocks == 0 || self.prior_blocks == 0 {
            return Err(Error::config("decoder_blocks", "both flows need at least one block"));
        }
        if self.width < 3 {
            return Err(Error::config("width", "must be at least 3"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        Ok(())
    }
}

/// Shared per-point network, max-pool over each set, then mean and
/// log-variance heads.
#[derive(Clone, Debug)]
pub struct Encoder {
    net: Mlp,
    mu: Linear,
    logvar: Linear,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, hidden: usize, latent: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(store, &format!("{name}.net"), &[3, hidden, hidden, hidden], Init::Scaled(1.0), rng),
            mu: Linear::new(store, &format!("{name}.mu"), hidden, latent, Init::Scaled(1.0), rng),
            logvar: Linear::new(store, &format!("{name}.logvar"), hidden, latent, Init::Scaled(0.1), rng),
        }
    }

    /// `x: [sets · m, 3]` → `(μ, log σ²)`, each `[sets, latent]`.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, m: usize) -> Result<(Var<'t>, Var<'t>)> {
        let pooled = self.net.forward(tape, store, x)?.block_max(m)?;
        let mu = self.mu.forward(tape, store, pooled)?;
        let logvar = self.logvar.forward(tape, store, pooled)?.clamp(LOGVAR_MIN, LOGVAR_MAX)?;
        Ok((mu, logvar))
    }
}

/// Posterior over the shape latent for a batch of sets.
#[derive(Clone, Copy, Debug)]
pub struct ShapeLatent<'t> {
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
    /// `μ + σ ⊙ ε`.
    pub s: Var<'t>,
}

impl<'t> ShapeLatent<'t> {
    /// Closed-form `H[q]` per set, `[sets, 1]`.
    pub fn entropy(&self) -> Result<Var<'t>> {
        let d = self.logvar.cols() as f64;
        self.logvar.sum_cols()?.scale(0.5)?.add_scalar(0.5 * d * (1.0 + LN_2PI))
    }
}

/// The per-set terms of the objective, each `[sets, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms<'t> {
    /// `Σᵢ log p(x′ᵢ | S, cᵢ)`.
    pub recon: Var<'t>,
    /// `log p(S)` under the prior flow.
    pub prior: Var<'t>,
    pub entropy: Var<'t>,
    pub total: Var<'t>,
}

/// Randomness for one evaluation of the objective.
#[derive(Clone, Debug)]
pub struct ElboDraws {
    pub perturbed: PerturbedBatch,
    /// `[sets, latent]` standard-normal draws for `S`.
    pub eps: Tensor,
}

impl ElboDraws {
    /// Perturbs every point independently, then draws `ε` for `S`.
    pub fn sample<R: Rng + ?Sized>(x: &Tensor, sets: usize, latent: usize, sched: &NoiseSchedule, rng: &mut R) -> Self {
        let perturbed = crate::softflow::perturb(x, sched, rng);
        let eps = Tensor::randn(&[sets, latent], 1.0, rng);
        Self { perturbed, eps }
    }
}

#[derive(Clone, Debug)]
pub struct SoftPointFlow {
    pub cfg: PointFlowConfig,
    pub encoder: Encoder,
    pub prior: MultiScaleFlow,
    pub decoder: FlowStack,
}

impl SoftPointFlow {
    /// Parameters are registered under `encoder.`, `prior.` and `decoder.`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &PointFlowConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::new(store, "encoder", cfg.encoder_hidden, cfg.latent, rng);
        let prior = MultiScaleFlow::new(
            store,
            "prior",
            &MultiScaleConfig {
                dim: cfg.latent,
                blocks: cfg.prior_blocks,
                width: cfg.width,
                depth: cfg.prior_depth,
                kernel: cfg.prior_kernel,
            },
            rng,
        )?;
        let decoder = FlowStack::build(
            store,
            "decoder",
            &FlowStackConfig {
                dim: 3,
                blocks: cfg.decoder_blocks,
                kind: BlockKind::Autoregressive,
                width: cfg.width,
                depth: 0,
                c_dim: 1,
                global_dim: cfg.latent,
                kernel: 1,
            },
            rng,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            prior,
            decoder,
        })
    }

    pub fn encode<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        m: usize,
        eps: &Tensor,
    ) -> Result<ShapeLatent<'t>> {
        let (mu, logvar) = self.encoder.forward(tape, store, x, m)?;
        if eps.shape() != mu.shape().as_slice() {
            return Err(Error::shape("encode", format!("ε {:?} vs μ {:?}", eps.shape(), mu.shape())));
        }
        let s = mu.add(logvar.scale(0.5)?.exp()?.mul(tape.constant(eps.clone()))?)?;
        Ok(ShapeLatent { mu, logvar, s })
    }

    /// Per-set `log p(S)`, `[sets, 1]`.
    pub fn prior_logprob<'t>(&self, tape: &'t Tape, store: &ParamStore, s: Var<'t>) -> Result<Var<'t>> {
        self.prior.log_prob(tape, store, s)
    }

    /// Per-point `log p(x′ | S, c_in)`, `[sets · m, 1]`, for sets of `m` points.
    pub fn decoder_logprob<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x_prime: Var<'t>,
        c_in: Var<'t>,
        s: Var<'t>,
        m: usize,
    ) -> Result<Var<'t>> {
        let cond = Cond::c_in(c_in).with_global(s, m);
        self.decoder.log_prob(tape, store, x_prime, &cond)
    }

    /// The objective for `x: [sets · m, 3]` under fixed draws.
    pub fn elbo<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: &Tensor,
        m: usize,
        draws: &ElboDraws,
    ) -> Result<ElboTerms<'t>> {
        let (rows, _) = x.dims2();
        if m == 0 || rows % m != 0 {
            return Err(Error::shape("elbo", format!("{rows} points do not split into sets of {m}")));
        }
        let sets = rows / m;
        let latent = self.encode(tape, store, tape.constant(x.clone()), m, &draws.eps)?;
        let lp = self.decoder_logprob(
            tape,
            store,
            tape.constant(draws.perturbed.x_prime.clone()),
            tape.constant(draws.perturbed.c_in.clone()),
            latent.s,
            m,
        )?;
        let recon = lp.reshape(&[sets, m])?.sum_cols()?;
        let prior = self.prior_logprob(tape, store, latent.s)?;
        let entropy = latent.entropy()?;
        let total = recon.add(prior)?.add(entropy)?;
        Ok(ElboTerms {
            recon,
            prior,
            entropy,
            total,
        })
    }

    /// Pushes `z: [n, 3]` through the decoder under latent `s: [1, latent]`.
    pub fn decode(&self, store: &ParamStore, s: &Tensor, z: &Tensor, c_sp: f64) -> Result<Tensor> {
        let n = z.rows();
        if n == 0 {
            return Ok(Tensor::zeros(&[0, 3]));
        }
        let cond = ConditionVector::constant(c_sp * self.cfg.schedule.scale, n)?.with_global(s.clone(), n);
        let tape = Tape::new();
        let (x, _) = self.decoder.forward(&tape, store, tape.constant(z.clone()), &cond.on(&tape))?;
        Ok(x.value())
    }

    /// Posterior mean of `S` for one set, `[1, latent]`.
    pub fn posterior_mean(&self, store: &ParamStore, set: &PointSet) -> Result<Tensor> {
        let tape = Tape::new();
        let (mu, _) = self.encoder.forward(&tape, store, tape.constant(set.points.clone()), set.len())?;
        Ok(mu.value())
    }

    /// Encodes `set` to its posterior mean and decodes `n` latents drawn
    /// from `N(0, σ_z² I)` under `c_sp`. The result shares `set`'s
    /// normalization.
    pub fn reconstruct<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        set: &PointSet,
        n: usize,
        c_sp: f64,
        sigma_z: f64,
        rng: &mut R,
    ) -> Result<PointSet> {
        let s = self.posterior_mean(store, set)?;
        let z = Tensor::randn(&[n, 3], sigma_z, rng);
        Ok(PointSet {
            points: self.decode(store, &s, &z, c_sp)?,
            id: format!("{}-recon", set.id),
            norm: set.norm,
        })
    }

    /// Draws a shape latent from the prior, then `n` points from the decoder.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        n: usize,
        c_sp: f64,
        sigma_z: f64,
        rng: &mut R,
    ) -> Result<PointSet> {
        let s = self.prior.sample(1, 1.0, store, rng)?;
        let z = Tensor::randn(&[n, 3], sigma_z, rng);
        PointSet::raw(self.decode(store, &s, &z, c_sp)?, "generated").or_else(|e| match e {
            Error::Empty => Ok(PointSet {
                points: Tensor::zeros(&[0, 3]),
                id: "generated".into(),
                norm: Normalization::identity(),
            }),
            e => Err(e),
        })
    }
}

/// Mean distance of points from their centroid.
pub fn spread(points: &Tensor) -> Result<f64> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::Empty);
    }
    let d = points.cols();
    let mut c = vec![0.0; d];
    for i in 0..n {
        for (cj, v) in c.iter_mut().zip(points.row(i)) {
            *cj += v / n as f64;
        }
    }
    Ok((0..n)
        .map(|i| {
            points
                .row(i)
                .iter()
                .zip(&c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> PointFlowConfig {
        PointFlowConfig {
            points: 4,
            latent: 8,
            prior_blocks: 2,
            decoder_blocks: 2,
            width: 6,
            prior_depth: 1,
            prior_kernel: 1,
            encoder_hidden: 5,
            batch: 1,
            ..PointFlowConfig::default()
        }
    }

    #[test]
    fn default_schedule_is_max_scaled() {
        let s = PointFlowConfig::default().schedule;
        assert_eq!((s.a, s.b), (0.0, 0.075));
        assert!((s.scale - 2.0 / 0.075).abs() < 1e-12);
        assert!(PointFlowConfig { latent: 12, ..tiny() }.validate().is_err());
    }

    #[test]
    fn entropy_of_unit_gaussian() {
        let tape = Tape::new();
        let lv = tape.constant(Tensor::zeros(&[1, 8]));
        let latent = ShapeLatent { mu: lv, logvar: lv, s: lv };
        let h = latent.entropy().unwrap().item().unwrap();
        assert!((h - 11.351_508_265_637_381).abs() < 1e-10, "{h}");
    }

    #[test]
    fn encoder_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let model = SoftPointFlow::new(&mut store, &tiny(), &mut rng).unwrap();
        let x = Tensor::randn(&[16, 3], 1.0, &mut rng);
        let mut idx: Vec<usize> = (0..16).collect();
        idx.reverse();
        idx.swap(3, 11);
        let run = |x: &Tensor| {
            let tape = Tape::new();
            let (m, l) = model.encoder.forward(&tape, &store, tape.constant(x.clone()), 16).unwrap();
            (m.value(), l.value())
        };
        let (m0, l0) = run(&x);
        let (m1, l1) = run(&x.select_rows(&idx));
        assert!(m0.max_abs_diff(&m1) < 1e-10);
        assert!(l0.max_abs_diff(&l1) < 1e-10);
    }

    #[test]
    fn zero_eps_gives_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let model = SoftPointFlow::new(&mut store, &tiny(), &mut rng).unwrap();
        let x = Tensor::randn(&[8, 3], 1.0, &mut rng);
        let tape = Tape::new();
        let l = model.encode(&tape, &store, tape.constant(x), 4, &Tensor::zeros(&[2, 8])).unwrap();
        assert_eq!(l.s.value(), l.mu.value());
    }

    #[test]
    fn identity_decoder_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let model = SoftPointFlow::new(&mut store, &tiny(), &mut rng).unwrap();
        let tape = Tape::new();
        let lp = model
            .decoder_logprob(
                &tape,
                &store,
                tape.constant(Tensor::zeros(&[4, 3])),
                tape.constant(Tensor::full(&[4, 1], 1.0)),
                tape.constant(Tensor::randn(&[1, 8], 1.0, &mut rng)),
                4,
            )
            .unwrap();
        for v in lp.value().data() {
            assert!((v + 1.5 * LN_2PI).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_sigma_decodes_one_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let model = SoftPointFlow::new(&mut store, &tiny(), &mut rng).unwrap();
        store.perturb(0.3, &mut rng);
        let set = PointSet::ingest(&Shape::chair().sample(32, &mut rng), "c").unwrap();
        let r = model.reconstruct(&store, &set, 10, 0.0, 0.0, &mut rng).unwrap();
        let first = r.points.row(0).to_vec();
        for i in 1..10 {
            assert_eq!(r.points.row(i), first.as_slice());
        }
    }

    #[test]
    fn spread_of_symmetric_pair() {
        let p = Tensor::from_rows(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(spread(&p).unwrap(), 1.0);
    }
}
