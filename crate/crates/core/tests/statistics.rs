//! Monte Carlo checks on the samplers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scalegan_core::augmentation::{ScalingSchedule, Transform};
use scalegan_core::data::GmmSpec;
use scalegan_core::strategy::{IntensityDistribution, Pi0Kind};
use scalegan_core::tensor::Tensor;

const DRAWS: usize = 1_000_000;

#[test]
fn uniform_intensity_frequencies() {
    let dist = IntensityDistribution::new(Pi0Kind::Uniform, 4, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 5];
    for t in dist.sample(&mut rng, DRAWS) {
        counts[t] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / DRAWS as f64).collect();
    assert!((freq[0] - 0.5).abs() < 0.01, "{freq:?}");
    for f in &freq[1..] {
        assert!((f - 0.125).abs() < 0.01, "{freq:?}");
    }
}

#[test]
fn priority_intensity_frequencies() {
    let dist = IntensityDistribution::new(Pi0Kind::Priority, 3, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut counts = [0usize; 4];
    for t in dist.sample(&mut rng, DRAWS) {
        counts[t] += 1;
    }
    let positive: usize = counts[1..].iter().sum();
    for (k, &c) in counts.iter().enumerate().skip(1) {
        let f = c as f64 / positive as f64;
        assert!((f - k as f64 / 6.0).abs() < 0.01, "k={k}: {f}");
    }
}

#[test]
fn gmm_mean_and_component_balance() {
    let spec = GmmSpec::default();
    let x = spec.sample(DRAWS, &mut ChaCha8Rng::seed_from_u64(13));
    let (mut mx, mut my) = (0.0, 0.0);
    let means = spec.means();
    let mut counts = vec![0usize; means.len()];
    for i in 0..x.rows() {
        let r = x.row(i);
        mx += r[0];
        my += r[1];
        // nearest-mode assignment is unbiased by the 8-fold symmetry
        let k = (0..means.len())
            .min_by(|&a, &b| {
                let da = (r[0] - means[a][0]).powi(2) + (r[1] - means[a][1]).powi(2);
                let db = (r[0] - means[b][0]).powi(2) + (r[1] - means[b][1]).powi(2);
                da.total_cmp(&db)
            })
            .unwrap();
        counts[k] += 1;
    }
    assert!((mx / DRAWS as f64).abs() < 0.01);
    assert!((my / DRAWS as f64).abs() < 0.01);
    for c in counts {
        assert!((c as f64 / DRAWS as f64 - 0.125).abs() < 0.01);
    }
}

#[test]
fn gmm_histogram_matches_density() {
    let spec = GmmSpec::default();
    let x = spec.sample(DRAWS, &mut ChaCha8Rng::seed_from_u64(14));
    let (lo, hi, bins) = (-2.0, 2.0, 50usize);
    let w = (hi - lo) / bins as f64;
    let mut hist = vec![0usize; bins * bins];
    for i in 0..x.rows() {
        let r = x.row(i);
        let (a, b) = (((r[0] - lo) / w).floor(), ((r[1] - lo) / w).floor());
        if a >= 0.0 && b >= 0.0 && (a as usize) < bins && (b as usize) < bins {
            hist[a as usize * bins + b as usize] += 1;
        }
    }
    // cell mass by a 4x4 midpoint rule
    let sub = 4;
    let mut pts = Vec::with_capacity(bins * bins * sub * sub * 2);
    for a in 0..bins {
        for b in 0..bins {
            for u in 0..sub {
                for v in 0..sub {
                    pts.push(lo + (a as f64 + (u as f64 + 0.5) / sub as f64) * w);
                    pts.push(lo + (b as f64 + (v as f64 + 0.5) / sub as f64) * w);
                }
            }
        }
    }
    let dens = spec.density(&Tensor::new(vec![pts.len() / 2, 2], pts).unwrap());
    let (mut occupied, mut within) = (0, 0);
    for (cell, &count) in hist.iter().enumerate() {
        if count == 0 {
            continue;
        }
        occupied += 1;
        let mass: f64 = dens[cell * sub * sub..(cell + 1) * sub * sub].iter().sum::<f64>() * w * w / (sub * sub) as f64;
        let expected = mass * DRAWS as f64;
        if (count as f64 - expected).abs() <= 3.0 * expected.sqrt().max(1.0) {
            within += 1;
        }
    }
    assert!(within as f64 >= 0.99 * occupied as f64, "{within}/{occupied}");
}

#[test]
fn diffusion_noise_covariance() {
    let schedule = ScalingSchedule::new(0.0001, 0.02, 500).unwrap();
    let sigma = 0.2;
    let tr = Transform::Diffusion { sigma_noise: sigma };
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for t in [1usize, 100, 500] {
        let s = schedule.s(t).unwrap();
        let x = Tensor::from_rows(&vec![vec![0.7, -0.3]; n]).unwrap();
        let y = tr.apply(&schedule, &x, &vec![t; n], &mut rng).unwrap();
        let mut mean = [0.0; 2];
        for i in 0..n {
            mean[0] += y.get(i, 0) / n as f64;
            mean[1] += y.get(i, 1) / n as f64;
        }
        let mut cov = [[0.0; 2]; 2];
        for i in 0..n {
            let d = [y.get(i, 0) - mean[0], y.get(i, 1) - mean[1]];
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += d[a] * d[b] / (n - 1) as f64;
                }
            }
        }
        let target = (1.0 - s * s) * sigma * sigma;
        assert!((cov[0][0] / target - 1.0).abs() < 0.05, "t={t}");
        assert!((cov[1][1] / target - 1.0).abs() < 0.05, "t={t}");
        assert!(cov[0][1].abs() < 0.05 * target, "t={t}");
        assert!((mean[0] - 0.7 * s).abs() < 5.0 * (target / n as f64).sqrt());
    }
}
