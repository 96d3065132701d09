//! End-to-end acceptance run. Prints one `PASS`/`FAIL` line per criterion
//! and exits nonzero if any fails.
//!
//! `cargo test --release --test acceptance -- 4 6` runs a subset by number.

use std::fs;
use std::path::Path;
use std::time::Instant;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softflow::cnf::{log_prob_with, CnfConfig, CnfDynamics, LinearField};
use softflow::flows::{
    ActNorm, AffineCoupling, ArConfig, ArLayer, BlockKind, ConditionVector, CouplingConfig, FlowLayer, FlowStack,
    FlowStackConfig, Inv1x1, LayerKind, MultiScaleConfig, MultiScaleFlow, LN_2PI,
};
use softflow::metrics::{assignment, chamfer, emd, one_nna, Metric};
use softflow::pointflow::{spread, ElboDraws, PointFlowConfig, PointFlowTrainer, PointSet, ShapeFamily, SoftPointFlow};
use softflow::rng::{aux_rng, Purpose};
use softflow::run::{
    cmd_datagen, cmd_eval, cmd_sample, cmd_train, DatagenOptions, DatagenSource, EvalOptions, ExperimentKind,
    RunConfig, SampleOptions, TrainOptions, CSP_SWEEP,
};
use softflow::softflow::{
    density, grid_mass, manifold_distance, perturb, softflow_loss, softflow_sample, Backend, BackendConfig,
    NoiseSchedule, SoftFlowConfig, SoftFlowTrainer, ToyDataset,
};
use softflow::{grad_check, ParamStore, Result, Tape, Tensor};

type Check = Result<(bool, String)>;

// ---------------------------------------------------------------------------
// shared helpers

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn d2(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `log|det J|` of `f` at `x` by central differences and partial pivoting.
fn fd_logdet(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let h = 1e-5;
    let mut j = vec![0.0; n * n];
    for k in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += h;
        xm[k] -= h;
        let (fp, fm) = (f(&xp), f(&xm));
        for r in 0..n {
            j[r * n + k] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    let mut logdet = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| j[a * n + c].abs().total_cmp(&j[b * n + c].abs())).unwrap();
        for k in 0..n {
            j.swap(c * n + k, p * n + k);
        }
        let d = j[c * n + c];
        logdet += d.abs().ln();
        for r in c + 1..n {
            let f = j[r * n + c] / d;
            for k in c..n {
                j[r * n + k] -= f * j[c * n + k];
            }
        }
    }
    logdet
}

fn gauss_logpdf(row: &[f64]) -> f64 {
    -0.5 * row.iter().map(|v| v * v).sum::<f64>() - 0.5 * row.len() as f64 * LN_2PI
}

/// One layer of each kind at `dim`, each with its own perturbed store.
fn single_layers(dim: usize, seed: u64) -> Result<Vec<(FlowLayer, ParamStore)>> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for kind in [LayerKind::Actnorm, LayerKind::Inv1x1, LayerKind::AffineCoupling, LayerKind::Autoregressive] {
        let flips: &[bool] = if kind == LayerKind::AffineCoupling { &[false, true] } else { &[false] };
        for &flip in flips {
            let mut store = ParamStore::new();
            let layer = match kind {
                LayerKind::Actnorm => FlowLayer::ActNorm(ActNorm::new(&mut store, "l", dim)),
                LayerKind::Inv1x1 => FlowLayer::Inv1x1(Inv1x1::random(&mut store, "l", dim, &mut r)?),
                LayerKind::AffineCoupling => FlowLayer::Coupling(AffineCoupling::new(
                    &mut store,
                    "l",
                    CouplingConfig {
                        dim,
                        flip,
                        width: 8,
                        depth: 1,
                        cond_dim: 1,
                        kernel: 1,
                    },
                    &mut r,
                )?),
                LayerKind::Autoregressive => FlowLayer::Autoregressive(ArLayer::new(
                    &mut store,
                    "l",
                    ArConfig {
                        dim,
                        hidden: 8,
                        c_dim: 1,
                        global_dim: 0,
                    },
                    &mut r,
                )?),
            };
            store.perturb(0.3, &mut r);
            out.push((layer, store));
        }
    }
    Ok(out)
}

fn random_c_in(n: usize, r: &mut ChaCha8Rng) -> Result<ConditionVector> {
    ConditionVector::per_row((0..n).map(|_| r.random_range(0.0..2.0)).collect())
}

fn has_ar(stack: &FlowStack) -> bool {
    stack.layers.iter().any(|l| l.kind() == LayerKind::Autoregressive)
}

// ---------------------------------------------------------------------------
// 1. invertibility

/// Largest `|f⁻¹(f(z)) − z|`, `|f(f⁻¹(x)) − x|` and `|ld_f + ld_f⁻¹|`.
fn roundtrip_layer(layer: &FlowLayer, store: &ParamStore, z: &Tensor, cond: &ConditionVector) -> Result<f64> {
    let tape = Tape::new();
    let c = cond.on(&tape);
    let (x, ld_f) = layer.forward(&tape, store, tape.constant(z.clone()), &c)?;
    let (back, ld_i) = layer.inverse(&tape, store, x, &c)?;
    let (zi, _) = layer.inverse(&tape, store, tape.constant(z.clone()), &c)?;
    let (again, _) = layer.forward(&tape, store, zi, &c)?;
    let ld = ld_f.add(ld_i)?.value();
    Ok(back
        .value()
        .max_abs_diff(z)
        .max(again.value().max_abs_diff(z))
        .max(ld.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))))
}

fn roundtrip_stack(stack: &FlowStack, store: &ParamStore, z: &Tensor, cond: &ConditionVector) -> Result<f64> {
    let tape = Tape::new();
    let c = cond.on(&tape);
    let (x, ld_f) = stack.forward(&tape, store, tape.constant(z.clone()), &c)?;
    let (back, ld_i) = stack.inverse(&tape, store, x, &c)?;
    let (zi, _) = stack.inverse(&tape, store, tape.constant(z.clone()), &c)?;
    let (again, _) = stack.forward(&tape, store, zi, &c)?;
    let ld = ld_f.add(ld_i)?.value();
    Ok(back
        .value()
        .max_abs_diff(z)
        .max(again.value().max_abs_diff(z))
        .max(ld.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))))
}

fn c1_invertibility() -> Check {
    let n = 1000;
    let mut r = rng(100);
    let mut worst = [0.0f64; 2];
    let mut ok = true;
    let mut count = 0;

    for dim in [2, 3] {
        for (layer, store) in single_layers(dim, 101 + dim as u64)? {
            let z = Tensor::randn(&[n, dim], 1.5, &mut r);
            let cond = random_c_in(n, &mut r)?;
            let err = roundtrip_layer(&layer, &store, &z, &cond)?;
            let (slot, tol) = if layer.kind() == LayerKind::Autoregressive { (1, 1e-6) } else { (0, 1e-8) };
            worst[slot] = worst[slot].max(err);
            ok &= err < tol;
            count += 1;
        }
    }

    for _ in 0..24 {
        let dim = r.random_range(2..=3);
        let blocks = r.random_range(1..=12);
        let kind = if r.random_bool(0.5) { BlockKind::Coupling } else { BlockKind::Autoregressive };
        let c_dim = r.random_range(0..=1);
        let global_dim = if r.random_bool(0.5) { 2 } else { 0 };
        let mut store = ParamStore::new();
        let stack = FlowStack::build(
            &mut store,
            "s",
            &FlowStackConfig {
                dim,
                blocks,
                kind,
                width: 8,
                depth: 1,
                c_dim,
                global_dim,
                kernel: 1,
            },
            &mut r,
        )?;
        store.perturb(0.2, &mut r);
        let z = Tensor::randn(&[n, dim], 1.0, &mut r);
        let mut cond = if c_dim == 1 { random_c_in(n, &mut r)? } else { ConditionVector::none() };
        if global_dim > 0 {
            cond = cond.with_global(Tensor::randn(&[n / 10, global_dim], 1.0, &mut r), 10);
        }
        let err = roundtrip_stack(&stack, &store, &z, &cond)?;
        let (slot, tol) = if has_ar(&stack) { (1, 1e-6) } else { (0, 1e-8) };
        worst[slot] = worst[slot].max(err);
        ok &= err < tol;
        count += 1;
    }

    let mut store = ParamStore::new();
    let prior = MultiScaleFlow::new(
        &mut store,
        "p",
        &MultiScaleConfig {
            dim: 16,
            blocks: 6,
            width: 8,
            depth: 1,
            kernel: 3,
        },
        &mut r,
    )?;
    store.perturb(0.2, &mut r);
    let s = Tensor::randn(&[n, 16], 1.0, &mut r);
    let tape = Tape::new();
    let (z, ld_i) = prior.inverse(&tape, &store, tape.constant(s.clone()))?;
    let (back, ld_f) = prior.forward(&tape, &store, z)?;
    let ld = ld_i.add(ld_f)?.value();
    let err = back.value().max_abs_diff(&s).max(ld.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
    worst[0] = worst[0].max(err);
    ok &= err < 1e-8;
    count += 1;

    Ok((
        ok,
        format!("{count} flows on {n} inputs, max error {:.1e} (AR {:.1e})", worst[0], worst[1]),
    ))
}

// ---------------------------------------------------------------------------
// 2. log-determinants

fn layer_logdet_gap(layer: &FlowLayer, store: &ParamStore, dim: usize, r: &mut ChaCha8Rng) -> Result<f64> {
    let c_in: f64 = r.random_range(0.0..2.0);
    let cond = ConditionVector::constant(c_in, 1)?;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let p = Tensor::randn(&[1, dim], 1.0, r);
        for forward in [true, false] {
            let apply = |v: &[f64]| -> Result<(Vec<f64>, f64)> {
                let tape = Tape::new();
                let c = cond.on(&tape);
                let t = tape.constant(Tensor::new(vec![1, dim], v.to_vec())?);
                let (y, ld) = if forward {
                    layer.forward(&tape, store, t, &c)?
                } else {
                    layer.inverse(&tape, store, t, &c)?
                };
                Ok((y.value().into_data(), ld.item()?))
            };
            let (_, ld) = apply(p.data())?;
            let want = fd_logdet(|v| apply(v).expect("layer evaluation").0, p.data());
            worst = worst.max((ld - want).abs());
        }
    }
    Ok(worst)
}

fn stack_logdet_gap(stack: &FlowStack, store: &ParamStore, r: &mut ChaCha8Rng) -> Result<f64> {
    let dim = stack.dim;
    let cond = ConditionVector::constant(r.random_range(0.0..2.0), 1)?;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let p = Tensor::randn(&[1, dim], 1.0, r);
        let apply = |v: &[f64]| -> Result<(Vec<f64>, f64)> {
            let tape = Tape::new();
            let c = cond.on(&tape);
            let (y, ld) = stack.inverse(&tape, store, tape.constant(Tensor::new(vec![1, dim], v.to_vec())?), &c)?;
            Ok((y.value().into_data(), ld.item()?))
        };
        let (_, ld) = apply(p.data())?;
        let want = fd_logdet(|v| apply(v).expect("stack evaluation").0, p.data());
        worst = worst.max((ld - want).abs());
    }
    Ok(worst)
}

/// `exp(M)` by scaling and squaring of a long Taylor series.
fn expm(m: &[f64], n: usize) -> Vec<f64> {
    let mul = |a: &[f64], b: &[f64]| {
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    c[i * n + j] += a[i * n + k] * b[k * n + j];
                }
            }
        }
        c
    };
    let squarings = 10;
    let scaled: Vec<f64> = m.iter().map(|v| v / f64::from(1 << squarings)).collect();
    let mut sum = vec![0.0; n * n];
    let mut term = vec![0.0; n * n];
    for i in 0..n {
        sum[i * n + i] = 1.0;
        term[i * n + i] = 1.0;
    }
    for k in 1..30 {
        term = mul(&term, &scaled).iter().map(|v| v / k as f64).collect();
        sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
    }
    for _ in 0..squarings {
        sum = mul(&sum, &sum);
    }
    sum
}

/// Under `dz/dt = A z` from latents at 0 to data at 1, `z = exp(−A) x` and
/// `log p(x) = log N(z) − tr A`.
fn linear_cnf_gap(a: &[f64], n: usize, r: &mut ChaCha8Rng) -> Result<f64> {
    let field = LinearField {
        matrix: Tensor::new(vec![n, n], a.to_vec())?,
    };
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    let inv = expm(&neg, n);
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let x = Tensor::randn(&[20, n], 1.0, r);
    let tape = Tape::new();
    let store = ParamStore::new();
    let (_, lp) = log_prob_with(&field, &tape, &store, tape.constant(x.clone()), None, 0.0, 1.0, 32)?;
    let lp = lp.value();
    let mut worst = 0.0f64;
    for i in 0..x.rows() {
        let z: Vec<f64> = (0..n).map(|k| (0..n).map(|j| inv[k * n + j] * x.get2(i, j)).sum()).collect();
        worst = worst.max((lp.data()[i] - (gauss_logpdf(&z) - trace)).abs());
    }
    Ok(worst)
}

fn c2_logdet() -> Check {
    let mut r = rng(200);
    let mut worst_layers = 0.0f64;
    for dim in [2, 3] {
        for (layer, store) in single_layers(dim, 201 + dim as u64)? {
            worst_layers = worst_layers.max(layer_logdet_gap(&layer, &store, dim, &mut r)?);
        }
        for kind in [BlockKind::Coupling, BlockKind::Autoregressive] {
            let mut store = ParamStore::new();
            let stack = FlowStack::build(
                &mut store,
                "s",
                &FlowStackConfig {
                    dim,
                    blocks: 3,
                    kind,
                    width: 8,
                    depth: 1,
                    c_dim: 1,
                    global_dim: 0,
                    kernel: 1,
                },
                &mut r,
            )?;
            store.perturb(0.2, &mut r);
            worst_layers = worst_layers.max(stack_logdet_gap(&stack, &store, &mut r)?);
        }
    }

    let matrices: [(Vec<f64>, usize); 4] = [
        (vec![-1.0, 0.0, 0.0, -1.0], 2),
        (vec![-0.5, 0.8, -0.3, 0.4], 2),
        (vec![0.2, -0.7, 0.0, 0.5, -0.3, 0.4, -0.1, 0.6, -0.6], 3),
        (vec![1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.5], 3),
    ];
    let mut worst_cnf = 0.0f64;
    for (a, n) in &matrices {
        worst_cnf = worst_cnf.max(linear_cnf_gap(a, *n, &mut r)?);
    }
    Ok((
        worst_layers < 1e-5 && worst_cnf < 1e-4,
        format!("layers and stacks max gap {worst_layers:.1e}, linear CNF max gap {worst_cnf:.1e}"),
    ))
}

// ---------------------------------------------------------------------------
// 3. gradients

fn tiny_stack(kind: BlockKind, r: &mut ChaCha8Rng) -> Result<(Backend, ParamStore)> {
    let mut store = ParamStore::new();
    let stack = FlowStack::build(
        &mut store,
        "flow",
        &FlowStackConfig {
            dim: 2,
            blocks: 2,
            kind,
            width: 4,
            depth: 1,
            c_dim: 1,
            global_dim: 0,
            kernel: 1,
        },
        r,
    )?;
    store.perturb(0.2, r);
    Ok((Backend::Discrete(stack), store))
}

fn c3_gradients() -> Check {
    let mut r = rng(300);
    let x = softflow::softflow::sample(ToyDataset::TwoSines, 8, &mut r)?;
    let batch = perturb(&x, &NoiseSchedule::softflow_2d(), &mut r);
    let mut models = vec![tiny_stack(BlockKind::Coupling, &mut r)?, tiny_stack(BlockKind::Autoregressive, &mut r)?];
    let mut store = ParamStore::new();
    let cnf = CnfDynamics::new(
        &mut store,
        "cnf",
        &CnfConfig {
            hidden: 4,
            layers: 1,
            ..CnfConfig::default()
        },
        &mut r,
    )?;
    store.perturb(0.2, &mut r);
    models.push((Backend::Cnf(cnf), store));

    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for (name, (backend, store)) in ["coupling", "autoregressive", "cnf"].iter().zip(&models) {
        let err = grad_check(store, 1e-5, |tape, s| softflow_loss(tape, &batch, backend, s))?;
        parts.push(format!("{name} {err:.1e}"));
        worst = worst.max(err);
    }

    let cfg = PointFlowConfig {
        points: 4,
        latent: 8,
        prior_blocks: 2,
        decoder_blocks: 2,
        width: 6,
        prior_depth: 1,
        prior_kernel: 1,
        encoder_hidden: 5,
        batch: 2,
        ..PointFlowConfig::default()
    };
    let mut store = ParamStore::new();
    let model = SoftPointFlow::new(&mut store, &cfg, &mut r)?;
    store.perturb(0.1, &mut r);
    let sets = Tensor::randn(&[8, 3], 1.0, &mut r);
    let draws = ElboDraws::sample(&sets, 2, 8, &model.cfg.schedule, &mut r);
    let err = grad_check(&store, 1e-5, |tape, s| model.elbo(tape, s, &sets, 4, &draws)?.total.mean()?.neg())?;
    parts.push(format!("elbo {err:.1e}"));
    worst = worst.max(err);
    Ok((worst < 1e-4, format!("max relative error: {}", parts.join(", "))))
}

// ---------------------------------------------------------------------------
// 4-6. two-dimensional experiments

fn toy_config(dataset: ToyDataset, baseline: bool) -> SoftFlowConfig {
    let mut cfg = SoftFlowConfig {
        dataset,
        lr: 5e-3,
        backend: BackendConfig::cnf(),
        ..SoftFlowConfig::default()
    };
    if baseline {
        cfg.schedule = cfg.schedule.baseline();
    }
    cfg
}

fn train_toy(dataset: ToyDataset, baseline: bool, seed: u64, steps: u64) -> Result<SoftFlowTrainer> {
    let mut t = SoftFlowTrainer::new(toy_config(dataset, baseline), seed)?;
    t.train_until(steps, |_, _, _| {})?;
    Ok(t)
}

/// Mean distance to the data manifold of 2000 samples at `c_sp`, with the
/// same latents for every `c_sp`.
fn sample_distance(t: &SoftFlowTrainer, c_sp: f64) -> Result<f64> {
    let mut r = aux_rng(t.seed, Purpose::Sample);
    let s = softflow_sample(2000, c_sp, &t.cfg.schedule, &t.backend, &t.store, &mut r)?;
    manifold_distance(&s, t.cfg.dataset)
}

fn c4_normalization(model: &SoftFlowTrainer) -> Check {
    let mut masses = Vec::new();
    for c_in in [0.0, 1.0, 2.0] {
        masses.push(grid_mass(400, -4.0, 4.0, |x| density(x, c_in, &model.backend, &model.store))?);
    }
    let ok = masses.iter().all(|m| (m - 1.0).abs() <= 0.02);
    Ok((ok, format!("grid mass at c_in = 0, 1, 2: {masses:.4?}")))
}

fn c5_manifold_distance() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for dataset in [ToyDataset::TwoSines, ToyDataset::Circles] {
        for seed in 0..3 {
            let start = Instant::now();
            let soft = sample_distance(&train_toy(dataset, false, seed, 1000)?, 0.0)?;
            let base = sample_distance(&train_toy(dataset, true, seed, 1000)?, 0.0)?;
            let secs = start.elapsed().as_secs_f64();
            ok &= soft < base && secs <= 600.0;
            parts.push(format!("{dataset}/{seed} {soft:.3}<{base:.3}? ({secs:.0}s)"));
        }
    }
    Ok((ok, parts.join(", ")))
}

fn c6_sweep(model: &SoftFlowTrainer) -> Check {
    let mut d = Vec::new();
    for c_sp in CSP_SWEEP {
        d.push(sample_distance(model, c_sp)?);
    }
    let ok = d.windows(2).all(|w| w[1] >= w[0]);
    Ok((ok, format!("distance over c_sp {CSP_SWEEP:?}: {d:.4?}")))
}

// ---------------------------------------------------------------------------
// 7. metrics

fn brute_chamfer(x: &Tensor, y: &Tensor) -> f64 {
    let side = |a: &Tensor, b: &Tensor| {
        (0..a.rows())
            .map(|i| (0..b.rows()).map(|j| d2(a.row(i), b.row(j))).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / a.rows() as f64
    };
    side(x, y) + side(y, x)
}

fn exhaustive_emd(x: &Tensor, y: &Tensor) -> f64 {
    let n = x.rows();
    (0..n)
        .permutations(n)
        .map(|p| (0..n).map(|i| d2(x.row(i), y.row(p[i])).sqrt()).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        / n as f64
}

/// Sets per list for the same-distribution split; see the README.
const NNA_SETS: usize = 250;
const NNA_POINTS: usize = 16;
const NNA_SEEDS: u64 = 100;

fn c7_metrics() -> Check {
    let mut r = rng(700);
    let mut parts = Vec::new();

    let mut emd_gap = 0.0f64;
    for _ in 0..20 {
        let (x, y) = (Tensor::randn(&[6, 3], 1.0, &mut r), Tensor::randn(&[6, 3], 1.0, &mut r));
        emd_gap = emd_gap.max((emd(&x, &y)? - exhaustive_emd(&x, &y)).abs());
    }
    parts.push(format!("EMD gap {emd_gap:.1e}"));

    let mut cd_gap = 0.0f64;
    for _ in 0..10 {
        let (x, y) = (Tensor::randn(&[64, 3], 1.0, &mut r), Tensor::randn(&[50, 3], 1.0, &mut r));
        cd_gap = cd_gap.max((chamfer(&x, &y)? - brute_chamfer(&x, &y)).abs());
    }
    parts.push(format!("CD gap {cd_gap:.1e}"));

    let n = 8;
    let mut lap_gap = 0.0f64;
    for trial in 0..50 {
        let cost: Vec<f64> = if trial % 5 == 4 {
            (0..n * n).map(|_| r.random_range(0..4) as f64).collect()
        } else {
            (0..n * n).map(|_| r.random_range(-5.0..5.0)).collect()
        };
        let (_, total) = assignment::solve(&cost, n)?;
        let best = (0..n)
            .permutations(n)
            .map(|p| (0..n).map(|i| cost[i * n + p[i]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        lap_gap = lap_gap.max((total - best).abs());
    }
    parts.push(format!("assignment gap {lap_gap:.1e} on 50 matrices"));

    let dup: Vec<Tensor> = (0..20).map(|_| Tensor::randn(&[16, 3], 1.0, &mut r)).collect();
    let dup_cd = one_nna(&dup, &dup, Metric::Cd)?;
    let dup_emd = one_nna(&dup, &dup, Metric::Emd)?;
    parts.push(format!("duplicates {dup_cd}%/{dup_emd}%"));

    let mut nna_ok = true;
    for metric in [Metric::Cd, Metric::Emd] {
        let mut inside = 0;
        for seed in 0..NNA_SEEDS {
            let mut er = aux_rng(seed, Purpose::Eval);
            let mut draw = || -> Vec<Tensor> {
                (0..NNA_SETS)
                    .map(|_| ShapeFamily::Chair.draw(&mut er).sample(NNA_POINTS, &mut er))
                    .collect()
            };
            let (g, rf) = (draw(), draw());
            if (40.0..=60.0).contains(&one_nna(&g, &rf, metric)?) {
                inside += 1;
            }
        }
        nna_ok &= inside as f64 >= 0.99 * NNA_SEEDS as f64;
        parts.push(format!("{} split in [40, 60] for {inside}/{NNA_SEEDS} seeds", metric.name()));
    }

    let ok = emd_gap <= 1e-10 && cd_gap <= 1e-10 && lap_gap <= 1e-10 && dup_cd == 0.0 && dup_emd == 0.0 && nna_ok;
    Ok((ok, parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 8-9. point sets

const POINT_STEPS: u64 = 3000;

fn nearest_index(p: &[f64], set: &Tensor) -> usize {
    (0..set.rows())
        .min_by(|&a, &b| d2(p, set.row(a)).total_cmp(&d2(p, set.row(b))))
        .expect("non-empty reference")
}

/// CD between the reference leg points and the generated points whose
/// nearest reference point is on a leg.
fn leg_chamfer(gen: &Tensor, dense: &Tensor, thin: &[bool]) -> Result<f64> {
    let legs: Vec<usize> = (0..dense.rows()).filter(|&i| thin[i]).collect();
    let picked: Vec<usize> = (0..gen.rows()).filter(|&i| thin[nearest_index(gen.row(i), dense)]).collect();
    if picked.is_empty() {
        return Ok(f64::INFINITY);
    }
    chamfer(&dense.select_rows(&legs), &gen.select_rows(&picked))
}

struct PointRun {
    leg_cd: f64,
    spreads: Vec<f64>,
}

fn point_run(seed: u64, ablation: bool) -> Result<PointRun> {
    let mut cfg = PointFlowConfig::default();
    if ablation {
        cfg.schedule = cfg.schedule.baseline();
    }
    let mut t = PointFlowTrainer::new(cfg, seed)?;
    t.train_until(POINT_STEPS, |_, _, _| {})?;
    let shape = t.shapes[0].shape().expect("parametric training shape");
    let reference = t.shapes[0].reference.clone();
    let mut er = aux_rng(seed, Purpose::Eval);
    let (dense, thin) = shape.sample_labeled(2048, &mut er);
    let dense = reference.to_model(&dense);
    let input = PointSet::raw(reference.to_model(&shape.sample(128, &mut er)), "input")?;
    let mut sr = aux_rng(seed, Purpose::Sample);
    let rec = t.model.reconstruct(&t.store, &input, 2048, 0.0, 1.0, &mut sr)?;
    let leg_cd = leg_chamfer(&rec.points, &dense, &thin)?;
    let mut spreads = Vec::new();
    for sigma in [0.5, 1.0, 1.5] {
        let mut sr = aux_rng(seed, Purpose::Sample);
        spreads.push(spread(&t.model.generate(&t.store, 2048, 0.0, sigma, &mut sr)?.points)?);
    }
    Ok(PointRun { leg_cd, spreads })
}

fn c8_c9_point_sets() -> Result<(Check, Check)> {
    let (mut ok8, mut ok9) = (true, true);
    let (mut p8, mut p9) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let start = Instant::now();
        let soft = point_run(seed, false)?;
        let base = point_run(seed, true)?;
        let secs = start.elapsed().as_secs_f64();
        ok8 &= soft.leg_cd < base.leg_cd && secs <= 900.0;
        p8.push(format!("seed {seed} {:.4}<{:.4}? ({secs:.0}s)", soft.leg_cd, base.leg_cd));
        ok9 &= soft.spreads.windows(2).all(|w| w[1] > w[0]);
        p9.push(format!("seed {seed} {:.4?}", soft.spreads));
    }
    Ok((
        Ok((ok8, format!("leg CD, SoftPointFlow vs c=0: {}", p8.join(", ")))),
        Ok((ok9, format!("spread at sigma_z 0.5, 1, 1.5: {}", p9.join(", ")))),
    ))
}

// ---------------------------------------------------------------------------
// 10. reproducibility

fn csv_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for entry in walk(dir)? {
        if entry.extension().is_some_and(|e| e == "csv") {
            let rel = entry.strip_prefix(dir).expect("under dir").display().to_string();
            out.push((rel, fs::read(&entry)?));
        }
    }
    out.sort();
    Ok(out)
}

fn walk(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            out.extend(walk(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

/// Train, sample and evaluate into `root`.
fn pipeline(root: &Path) -> Result<()> {
    let mut runs = Vec::new();
    for kind in ExperimentKind::ALL {
        let mut cfg = RunConfig::for_kind(kind);
        cfg.seed = 11;
        cfg.steps = 20;
        cfg.checkpoint_every = 10;
        cfg.out_dir = root.join(kind.name());
        if kind == ExperimentKind::SoftPointFlow {
            cfg.point.points = 32;
            cfg.point.width = 8;
            cfg.point.encoder_hidden = 8;
            cfg.point.latent = 8;
        }
        let report = cmd_train(&cfg, &TrainOptions::default())?;
        runs.push((kind, report.checkpoint));
    }
    for (kind, ck) in &runs {
        let mut opts = SampleOptions::new(ck, root.join(format!("samples-{}", kind.name())), 64);
        opts.c_sp = CSP_SWEEP.to_vec();
        if kind.is_2d() {
            opts.logp = true;
        } else {
            opts.sigma_z = vec![0.5, 1.0, 1.5];
        }
        cmd_sample(&opts)?;
    }
    for (name, seed) in [("gen", 1), ("ref", 2)] {
        cmd_datagen(&DatagenOptions {
            source: DatagenSource::Family {
                family: ShapeFamily::Chair,
                count: 6,
                points: 32,
            },
            seed,
            out: root.join(name),
        })?;
    }
    cmd_eval(&EvalOptions {
        gen_dir: root.join("gen"),
        ref_dir: root.join("ref"),
        metrics: vec![Metric::Cd, Metric::Emd],
        out: root.join("eval"),
    })?;
    Ok(())
}

fn c10_reproducibility() -> Check {
    let tmp = tempfile::tempdir()?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a)?;
    pipeline(&b)?;
    let (fa, fb) = (csv_files(&a)?, csv_files(&b)?);
    let same = fa == fb;
    Ok((same && !fa.is_empty(), format!("{} CSV files compared across two runs", fa.len())))
}

// ---------------------------------------------------------------------------

struct Report {
    failed: usize,
}

impl Report {
    fn record(&mut self, id: usize, name: &str, budget: Option<f64>, secs: f64, check: Check) {
        let (pass, detail) = match check {
            Ok((pass, detail)) => (pass, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = budget.is_none_or(|b| secs <= b);
        let pass = pass && in_time;
        let budget_note = budget.map(|b| format!(" / {b:.0}s budget")).unwrap_or_default();
        println!(
            "{} {id:>2} {name}: {detail} [{secs:.1}s{budget_note}]",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failed += 1;
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn main() {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |id: usize| picked.is_empty() || picked.contains(&id);
    let mut report = Report { failed: 0 };

    if want(1) {
        let (c, s) = timed(c1_invertibility);
        report.record(1, "invertibility", Some(60.0), s, c);
    }
    if want(2) {
        let (c, s) = timed(c2_logdet);
        report.record(2, "log-determinants", Some(120.0), s, c);
    }
    if want(3) {
        let (c, s) = timed(c3_gradients);
        report.record(3, "gradients", Some(120.0), s, c);
    }
    if want(4) {
        let (c, s) = timed(|| c4_normalization(&train_toy(ToyDataset::TwoSines, false, 0, 1000)?));
        report.record(4, "normalization", Some(300.0), s, c);
    }
    if want(6) {
        let (c, s) = timed(|| c6_sweep(&train_toy(ToyDataset::TwoSines, false, 0, 3000)?));
        report.record(6, "c_sp sweep", None, s, c);
    }
    if want(5) {
        let (c, s) = timed(c5_manifold_distance);
        report.record(5, "manifold distance vs baseline", None, s, c);
    }
    if want(7) {
        let (c, s) = timed(c7_metrics);
        report.record(7, "metric oracles", None, s, c);
    }
    if want(8) || want(9) {
        let (both, s) = timed(c8_c9_point_sets);
        let (c8, c9) = match both {
            Ok(pair) => pair,
            Err(e) => (
                Err(softflow::Error::Invalid(e.to_string())),
                Err(softflow::Error::Invalid(e.to_string())),
            ),
        };
        if want(8) {
            report.record(8, "thin structures", None, s, c8);
        }
        if want(9) {
            report.record(9, "latent scale spread", None, s, c9);
        }
    }
    if want(10) {
        let (c, s) = timed(c10_reproducibility);
        report.record(10, "reproducibility", None, s, c);
    }

    if report.failed > 0 {
        println!("{} criteria failed", report.failed);
        std::process::exit(1);
    }
}
