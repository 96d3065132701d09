use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use softflow::softflow::{
    manifold_distance, perturb, sample, softflow_sample, NoiseSchedule, SineGrid, SoftFlowConfig, SoftFlowTrainer,
    ToyDataset, SINE_GRID,
};
use softflow::Tensor;

const AMPLITUDE: f64 = 2.5;

#[test]
fn two_sines_lie_on_their_curve() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = sample(ToyDataset::TwoSines, 5000, &mut rng).unwrap();
    for i in 0..x.rows() {
        let (a, b) = (x.get2(i, 0), x.get2(i, 1));
        assert!((b.abs() - AMPLITUDE * a.sin().abs()).abs() < 1e-12, "({a}, {b})");
    }
}

#[test]
fn circles_have_two_radii() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = sample(ToyDataset::Circles, 5000, &mut rng).unwrap();
    let mut counts = [0usize; 2];
    for i in 0..x.rows() {
        let r = x.get2(i, 0).hypot(x.get2(i, 1));
        let k = [1.0, 2.0].iter().position(|c| (r - c).abs() < 1e-12).expect("radius off both circles");
        counts[k] += 1;
    }
    assert!(counts.iter().all(|&c| c > 1000), "{counts:?}");
}

#[test]
fn every_dataset_is_on_its_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for ds in ToyDataset::ALL {
        let x = sample(ds, 2000, &mut rng).unwrap();
        assert!(manifold_distance(&x, ds).unwrap() <= 1e-3, "{ds}");
    }
}

#[test]
fn default_schedule_conditions_stay_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = sample(ToyDataset::TwoSines, 10_000, &mut rng).unwrap();
    let b = perturb(&x, &NoiseSchedule::softflow_2d(), &mut rng);
    assert!(b.c_in.data().iter().all(|c| (0.0..=2.0).contains(c)));
    let max = b.c_in.data().iter().cloned().fold(0.0, f64::max);
    assert!(max > 1.99);
}

#[test]
fn fixed_level_noise_has_the_right_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 1_000_000;
    let x = Tensor::zeros(&[n, 2]);
    let b = perturb(&x, &NoiseSchedule::new(0.1, 0.1, 20.0).unwrap(), &mut rng);
    for j in 0..2 {
        let col: Vec<f64> = (0..n).map(|i| b.nu.get2(i, j)).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((0.0097..=0.0103).contains(&var), "dim {j}: {var}");
    }
}

#[test]
fn origin_is_one_from_the_inner_circle() {
    let o = Tensor::zeros(&[1, 2]);
    assert!((manifold_distance(&o, ToyDataset::Circles).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn sine_distance_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = SineGrid::new(SINE_GRID);
    let curve = grid.points();
    let pts = Tensor::uniform(&[200, 2], -4.0, 4.0, &mut rng);
    let brute: f64 = (0..200)
        .map(|i| {
            let p = pts.row(i);
            curve
                .iter()
                .map(|q| (p[0] - q[0]).hypot(p[1] - q[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / 200.0;
    assert!((manifold_distance(&pts, ToyDataset::TwoSines).unwrap() - brute).abs() < 1e-6);
}

fn moving_average(v: &[f64], w: usize) -> Vec<f64> {
    v.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

#[test]
fn short_training_run_lowers_the_loss() {
    let mut t = SoftFlowTrainer::new(SoftFlowConfig::default(), 7).unwrap();
    let mut losses = Vec::new();
    t.train_until(500, |_, l, _| losses.push(l)).unwrap();
    let ma = moving_average(&losses, 100);
    let quarters: Vec<f64> = (0..4).map(|k| ma[k * (ma.len() - 1) / 3]).collect();
    for w in quarters.windows(2) {
        assert!(w[1] <= w[0], "{quarters:?}");
    }
}

#[test]
fn seeded_sampling_is_deterministic() {
    let t = SoftFlowTrainer::new(SoftFlowConfig::default(), 3).unwrap();
    let draw = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        softflow_sample(256, 0.0, &t.cfg.schedule, &t.backend, &t.store, &mut rng).unwrap()
    };
    assert_eq!(draw(), draw());
}
