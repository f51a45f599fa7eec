use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scalegan_core::augmentation::{ScalingSchedule, Transform};
use scalegan_core::graph::Graph;
use scalegan_core::metrics::{js_on_grid, precision_recall};
use scalegan_core::models::{Conditioning, Discriminator, Mlp, MlpSpec};
use scalegan_core::objectives::{modified_reg, scale_wise_variance};
use scalegan_core::strategy::{IntensityDistribution, Pi0Kind, StrategyKind, StrategyState};
use scalegan_core::tensor::Tensor;
use scalegan_core::trainer::normal_tensor;

fn disc(seed: u64) -> Discriminator {
    Discriminator::new(2, 16, 4, 0.2, Conditioning::Ratio, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn prob_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2..64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn discriminator_output_in_open_unit_interval(seed in 0u64..1000, x in -50.0f64..50.0, y in -50.0f64..50.0, t in 0usize..=10) {
        let out = disc(seed).discriminate(&Tensor::from_rows(&[vec![x, y]]).unwrap(), &[t], 10).unwrap();
        prop_assert!(out[0] > 0.0 && out[0] < 1.0);
    }

    #[test]
    fn t_zero_output_ignores_t_max(seed in 0u64..1000, x in -2.0f64..2.0, y in -2.0f64..2.0, t_max in 1usize..1000) {
        let d = disc(seed);
        let pt = Tensor::from_rows(&[vec![x, y]]).unwrap();
        prop_assert_eq!(d.discriminate(&pt, &[0], t_max).unwrap(), d.discriminate(&pt, &[0], 7).unwrap());
    }

    #[test]
    fn backward_is_linear_and_deterministic(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec { in_dim: 3, hidden: 8, out_dim: 2, layers: 4, slope: 0.2 };
        let mlp = Mlp::init(spec, 1.0, &mut rng);
        let x = normal_tensor(&mut rng, 5, 3);
        let grads = |which: u8| {
            let mut g = Graph::new();
            let bound = mlp.bind(&mut g);
            let xn = g.leaf(x.clone());
            let out = mlp.forward(&mut g, &bound, xn).unwrap();
            let sq = g.square(out).unwrap();
            let l1 = g.sum(sq).unwrap();
            let l2 = g.mean(out).unwrap();
            let loss = match which {
                1 => l1,
                2 => l2,
                _ => g.add(l1, l2).unwrap(),
            };
            let gr = g.backward(loss).unwrap();
            bound.iter().zip(mlp.params()).flat_map(|(&id, p)| gr.get_or_zeros(id, p).into_data()).collect::<Vec<f64>>()
        };
        let (a, b, both) = (grads(1), grads(2), grads(0));
        for ((x, y), z) in a.iter().zip(&b).zip(&both) {
            prop_assert!((x + y - z).abs() <= 1e-12 * (1.0 + z.abs()));
        }
        prop_assert_eq!(both, grads(0));
    }

    #[test]
    fn schedule_is_monotone_and_bounded(beta0 in 1e-5f64..0.01, extra in 0.0f64..0.02, t_max in 1usize..800) {
        let s = ScalingSchedule::new(beta0, beta0 + extra, t_max).unwrap();
        prop_assert_eq!(s.s(0).unwrap(), 1.0);
        for t in 1..=t_max {
            let (a, b) = (s.s(t - 1).unwrap(), s.s(t).unwrap());
            prop_assert!(b < a && b > 0.0);
        }
    }

    #[test]
    fn invertible_transforms_round_trip(seed in 0u64..1000, k in 0u8..4, t in 0usize..=500) {
        let schedule = ScalingSchedule::new(0.0001, 0.02, 500).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normal_tensor(&mut rng, 16, 2);
        let ts = vec![t; 16];
        for tr in [Transform::Identity, Transform::ScaleOnly, Transform::Rotate90k { k }] {
            let y = tr.apply(&schedule, &x, &ts, &mut rng).unwrap();
            let back = tr.invert(&schedule, &y, &ts).unwrap();
            for (a, b) in back.data().iter().zip(x.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn adaptive_t_moves_by_at_most_one(rds in prop::collection::vec(-1.0f64..1.0, 1..300), t0 in 0usize..20, t_min in 0usize..5) {
        let mut s = StrategyState::new(StrategyKind::Adaptive, t_min, 20, 1000, 0.1, t0).unwrap();
        for rd in rds {
            let before = s.current_t;
            let after = s.on_overfit_estimate(rd);
            prop_assert!(after.abs_diff(before) <= 1);
            prop_assert!((t_min..=20).contains(&after));
        }
    }

    #[test]
    fn sampled_t_respects_current_t(seed in 0u64..1000, t in 0usize..50, w in 0.0f64..=1.0, priority in any::<bool>()) {
        let pi0 = if priority { Pi0Kind::Priority } else { Pi0Kind::Uniform };
        let dist = IntensityDistribution::new(pi0, t, w).unwrap();
        let pmf = dist.pmf();
        prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(pmf[0] >= w - 1e-12);
        let draws = dist.sample(&mut ChaCha8Rng::seed_from_u64(seed), 200);
        prop_assert!(draws.iter().all(|&d| d <= t));
    }

    #[test]
    fn modified_reg_dominates_variance(v in prob_vec()) {
        let var = scale_wise_variance(std::slice::from_ref(&v)).unwrap();
        prop_assert!(modified_reg(&v).unwrap() >= var - 1e-15);
        prop_assert!(var <= 0.25);
    }

    #[test]
    fn precision_recall_ranges(seed in 0u64..1000, spread in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = normal_tensor(&mut rng, 50, 2).map(|v| v * spread);
        let modes: Vec<[f64; 2]> = (1..=8)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / 8.0;
                [a.cos(), a.sin()]
            })
            .collect();
        let (p, r) = precision_recall(&pts, &modes, 0.05f64.sqrt(), 3.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
        prop_assert!(((r * 8.0) - (r * 8.0).round()).abs() < 1e-12);
    }

    #[test]
    fn js_is_symmetric_and_bounded(a in prop::collection::vec(0.01f64..1.0, 8), b in prop::collection::vec(0.01f64..1.0, 8)) {
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let (p, q) = (norm(&a), norm(&b));
        let pq = js_on_grid(&p, &q).unwrap();
        prop_assert!((pq - js_on_grid(&q, &p).unwrap()).abs() < 1e-15);
        prop_assert!((-1e-15..=std::f64::consts::LN_2 + 1e-12).contains(&pq));
        prop_assert!(js_on_grid(&p, &p).unwrap().abs() < 1e-15);
    }
}

#[test]
fn saturated_discriminator_drives_t_to_the_top() {
    let (t0, t_max, every) = (37usize, 500usize, 4u64);
    let mut s = StrategyState::new(StrategyKind::Adaptive, 0, t_max, 40_000, 0.1, t0).unwrap();
    let mut reached = None;
    for i in 1..=((t_max - t0) as u64 * every) {
        if i % every == 0 {
            let prev = s.current_t;
            s.on_overfit_estimate(1.0);
            assert!(s.current_t >= prev);
        }
        if s.current_t == t_max && reached.is_none() {
            reached = Some(i);
        }
    }
    assert!(reached.is_some());
}
