//! Acceptance criteria 1-10. Each test prints one `criterion N: PASS|FAIL` line.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scalegan_core::augmentation::{ScalingSchedule, Transform};
use scalegan_core::config::RunConfig;
use scalegan_core::graph::Graph;
use scalegan_core::metrics::{cosine_similarity_diag, js_on_grid};
use scalegan_core::models::{Conditioning, Discriminator, Generator, Mlp, MlpSpec};
use scalegan_core::objectives::{scale_wise_variance, PROB_CLAMP};
use scalegan_core::optim::Adam;
use scalegan_core::oracle::{
    bias_bound, check_bias_bounds, lambda_delta, random_delta_pair, random_pair, solve_optimal_discriminator,
    solve_q_lambda, trend_target, verify_scale_invariance, DensityGrid, QLambdaOptions, ScaleInvariantCritic,
};
use scalegan_core::tensor::Tensor;
use scalegan_core::trainer::{self, gather_rows, normal_tensor, stream_rng, streams, TrainState};

fn report(n: u32, passed: bool, detail: String) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n}: {verdict} {detail}");
    let _ = out.flush();
    assert!(passed, "criterion {n} failed: {detail}");
}

// ---- criterion 1 ----

const FD_H: f64 = 1e-5;
const FD_REL: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely; central
/// differences on an O(1) loss carry ~1e-11 round-off.
const FD_FLOOR: f64 = 1e-4;

struct Probe {
    mlp: Mlp,
    x: Tensor,
    w: Vec<f64>,
}

impl Probe {
    fn graph(&self) -> (Graph, Vec<scalegan_core::graph::NodeId>, scalegan_core::graph::NodeId, scalegan_core::graph::NodeId) {
        let mut g = Graph::new();
        let bound = self.mlp.bind(&mut g);
        let xn = g.leaf(self.x.clone());
        let out = self.mlp.forward(&mut g, &bound, xn).unwrap();
        let weighted = g.scale_elems(out, self.w.clone()).unwrap();
        let loss = g.sum(weighted).unwrap();
        (g, bound, xn, loss)
    }

    fn loss_and_pattern(&self) -> (f64, Vec<bool>) {
        let (g, _, _, loss) = self.graph();
        (g.value(loss).data()[0], g.activation_pattern())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

#[test]
fn criterion_01_autodiff_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
    for _ in 0..100 {
        let spec = MlpSpec {
            in_dim: rng.gen_range(1..=32),
            hidden: rng.gen_range(2..=32),
            out_dim: rng.gen_range(1..=32),
            layers: 4,
            slope: 0.2,
        };
        let mlp = Mlp::init(spec, 1.0, &mut rng);
        let rows = rng.gen_range(1..=4);
        let x = normal_tensor(&mut rng, rows, spec.in_dim);
        let w: Vec<f64> = (0..rows * spec.out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut probe = Probe { mlp, x, w };
        let (g, bound, xn, loss) = probe.graph();
        let grads = g.backward(loss).unwrap();
        let base_pattern = g.activation_pattern();
        let param_grads: Vec<Tensor> = bound
            .iter()
            .zip(probe.mlp.params())
            .map(|(&id, p)| grads.get_or_zeros(id, p))
            .collect();
        let input_grad = grads.get_or_zeros(xn, &probe.x);

        let mut fd = |probe: &mut Probe, get: &dyn Fn(&mut Probe) -> &mut f64, analytic: f64| {
            let orig = *get(probe);
            *get(probe) = orig + FD_H;
            let (up, pu) = probe.loss_and_pattern();
            *get(probe) = orig - FD_H;
            let (down, pd) = probe.loss_and_pattern();
            *get(probe) = orig;
            if pu != base_pattern || pd != base_pattern {
                skipped += 1;
                return;
            }
            checked += 1;
            worst = worst.max(rel_err(analytic, (up - down) / (2.0 * FD_H)));
        };
        for (k, pg) in param_grads.iter().enumerate() {
            for (j, &a) in pg.data().iter().enumerate() {
                fd(&mut probe, &move |p: &mut Probe| &mut p.mlp.params_mut()[k].data_mut()[j], a);
            }
        }
        for j in 0..input_grad.len() {
            let a = input_grad.data()[j];
            fd(&mut probe, &move |p: &mut Probe| &mut p.x.data_mut()[j], a);
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        worst <= FD_REL && elapsed < Duration::from_secs(30) && skipped * 100 < checked,
        format!("max rel err {worst:.2e} over {checked} entries ({skipped} kink probes skipped) in {elapsed:.1?}"),
    );
}

// ---- criterion 2 ----

/// Plain GAN loop written against the network, graph and optimizer primitives
/// only: no transforms, intensities, regularizer or strategy.
struct VanillaReference {
    gen: Generator,
    disc: Mlp,
    opt_g: Adam,
    opt_d: Adam,
    data: Tensor,
    rng: ChaCha8Rng,
    batch: usize,
    latent: usize,
}

fn clamped_log(g: &mut Graph, p: scalegan_core::graph::NodeId, complement: bool) -> scalegan_core::graph::NodeId {
    let c = g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP).unwrap();
    let c = if complement { g.affine(c, -1.0, 1.0).unwrap() } else { c };
    g.log(c).unwrap()
}

impl VanillaReference {
    fn new(cfg: &RunConfig) -> Self {
        let m = cfg.model;
        let mut init = stream_rng(cfg.seed, streams::INIT);
        let gen = Generator::new(m.latent_dim, 2, m.hidden, m.layers, m.slope, &mut init).unwrap();
        // the conditioning column is identically zero at t = 0
        let disc = Discriminator::new(2, m.hidden, m.layers, m.slope, Conditioning::Ratio, &mut init)
            .unwrap()
            .net;
        VanillaReference {
            opt_g: Adam::new(cfg.optim_g, gen.net.params()),
            opt_d: Adam::new(cfg.optim_d, disc.params()),
            gen,
            disc,
            data: cfg.data.sample(cfg.data.n, &mut stream_rng(cfg.seed, streams::DATA)),
            rng: stream_rng(cfg.seed, streams::SAMPLE),
            batch: cfg.batch_size,
            latent: m.latent_dim,
        }
    }

    fn d_out(&self, g: &mut Graph, bound: &[scalegan_core::graph::NodeId], x: scalegan_core::graph::NodeId) -> scalegan_core::graph::NodeId {
        let rows = g.value(x).rows();
        let zero = g.leaf(Tensor::zeros(&[rows, 1]));
        let input = g.concat_feature(x, zero).unwrap();
        let logit = self.disc.forward(g, bound, input).unwrap();
        g.sigmoid(logit).unwrap()
    }

    fn step(&mut self) -> (f64, f64) {
        let m = self.batch;
        let n = self.data.rows();
        let idx: Vec<usize> = (0..m).map(|_| self.rng.gen_range(0..n)).collect();
        let real = gather_rows(&self.data, &idx);
        let z = normal_tensor(&mut self.rng, m, self.latent);
        let fake = self.gen.generate(&z).unwrap();

        let mut g = Graph::new();
        let bd = self.disc.bind(&mut g);
        let xr = g.leaf(real);
        let xf = g.leaf(fake);
        let dr = self.d_out(&mut g, &bd, xr);
        let df = self.d_out(&mut g, &bd, xf);
        let lr = clamped_log(&mut g, dr, false);
        let a = g.mean(lr).unwrap();
        let lf = clamped_log(&mut g, df, true);
        let b = g.mean(lf).unwrap();
        let v = g.add(a, b).unwrap();
        let loss = g.scalar_mul(v, -1.0).unwrap();
        let loss_d = g.value(loss).data()[0];
        let grads = g.backward(loss).unwrap();
        let gd: Vec<Tensor> = bd.iter().zip(self.disc.params()).map(|(&id, p)| grads.get_or_zeros(id, p)).collect();
        self.opt_d.update(self.disc.params_mut(), &gd).unwrap();

        let z = normal_tensor(&mut self.rng, m, self.latent);
        let mut g = Graph::new();
        let bg = self.gen.net.bind(&mut g);
        let bd = self.disc.bind(&mut g);
        let zn = g.leaf(z);
        let x = self.gen.forward(&mut g, &bg, zn).unwrap();
        let d = self.d_out(&mut g, &bd, x);
        let l = clamped_log(&mut g, d, true);
        let loss = g.mean(l).unwrap();
        let loss_g = g.value(loss).data()[0];
        let grads = g.backward(loss).unwrap();
        let gg: Vec<Tensor> = bg.iter().zip(self.gen.net.params()).map(|(&id, p)| grads.get_or_zeros(id, p)).collect();
        self.opt_g.update(self.gen.net.params_mut(), &gg).unwrap();
        (loss_d, loss_g)
    }
}

#[test]
fn criterion_02_vanilla_degeneracy_is_bitwise() {
    let mut cfg = RunConfig::preset("toy-vanilla").unwrap();
    cfg.seed = 7;
    assert_eq!(cfg.transform, Transform::Identity);
    assert_eq!(cfg.loss.lambda, 0.0);
    let mut state = TrainState::new(cfg.clone()).unwrap();
    let mut reference = VanillaReference::new(&cfg);
    let mut first_mismatch = None;
    for i in 1..=1000u64 {
        assert_eq!(state.distribution().unwrap().pmf()[0], 1.0);
        let rec = state.step().unwrap();
        let (ld, lg) = reference.step();
        if first_mismatch.is_none() && (rec.loss_d.to_bits() != ld.to_bits() || rec.loss_g.to_bits() != lg.to_bits()) {
            first_mismatch = Some(i);
        }
    }
    let params_equal = state.gen.net.flat_params() == reference.gen.net.flat_params()
        && state.disc.net.flat_params() == reference.disc.flat_params();
    report(
        2,
        first_mismatch.is_none() && params_equal,
        format!("1000 steps, first loss mismatch {first_mismatch:?}, final parameters identical: {params_equal}"),
    );
}

// ---- criteria 3-7 ----

fn instances(seed: u64, n: usize) -> Vec<(DensityGrid, DensityGrid)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_pair(&mut rng).unwrap()).collect()
}

#[test]
fn criterion_03_lambda_zero_closed_form() {
    let mut worst = 0.0f64;
    for (p, q) in instances(3, 20) {
        let sol = solve_optimal_discriminator(&p, &q, 0.0).unwrap();
        for ((d, pi), qi) in sol.d.iter().zip(p.probs()).zip(q.probs()) {
            worst = worst.max((d - pi / (pi + qi)).abs());
        }
    }
    report(3, worst <= 1e-10, format!("max |D - p0/(p0+q)| = {worst:.2e} on 20 instances"));
}

#[test]
fn criterion_04_scale_invariance() {
    let start = Instant::now();
    let schedule = ScalingSchedule::new(0.0001, 0.02, 500).unwrap();
    let mut worst = 0.0f64;
    for (p, q) in instances(4, 20) {
        for lambda in [0.0, 0.001, 0.0027] {
            worst = worst.max(verify_scale_invariance(&p, &q, &schedule, lambda, &[50, 200, 500]).unwrap());
        }
    }
    let elapsed = start.elapsed();
    report(
        4,
        worst <= 1e-8 && elapsed < Duration::from_secs(60),
        format!("max |D_t(s_t x) - D_0(x)| = {worst:.2e} in {elapsed:.1?}"),
    );
}

#[test]
fn criterion_05_bias_bound() {
    let delta = 0.3;
    let lambda = lambda_delta(delta);
    assert!((lambda - 0.0027).abs() < 1e-15);
    let bound = 4.0 * lambda * ((1.0 - delta) / delta) * ((1.0 - delta) / delta);
    assert!((bound - bias_bound(delta, lambda)).abs() < 1e-15);
    assert!((bound - 0.0588).abs() < 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut sup, mut lower_gap) = (0.0f64, f64::INFINITY);
    for _ in 0..200 {
        let (p, q) = random_delta_pair(&mut rng, delta).unwrap();
        let sol = solve_optimal_discriminator(&p, &q, lambda).unwrap();
        for ((d, pi), qi) in sol.d.iter().zip(p.probs()).zip(q.probs()) {
            let vanilla = pi / (pi + qi);
            assert!(vanilla > delta && vanilla < 1.0 - delta);
            sup = sup.max((d - vanilla).abs());
            lower_gap = lower_gap.min(d - (vanilla - 4.0 * lambda));
        }
        let b = check_bias_bounds(&p, &q, lambda, delta).unwrap();
        assert!(b.lower_violation <= 0.0);
    }
    report(
        5,
        sup <= bound && lower_gap >= 0.0,
        format!("sup deviation {sup:.3e} <= {bound:.4}; min slack on D >= p0/(p0+q) - 4λ is {lower_gap:.3e} (200 instances)"),
    );
}

#[test]
fn criterion_06_ratio_one_collapse() {
    let mut worst = 0.0f64;
    for (p, _) in instances(6, 20) {
        for lambda in [0.0, 0.01, 0.1] {
            let sol = solve_optimal_discriminator(&p, &p, lambda).unwrap();
            worst = worst.max((sol.c - 0.5).abs());
            for d in &sol.d {
                worst = worst.max((d - 0.5).abs());
            }
        }
    }
    report(6, worst <= 1e-12, format!("max |D - 1/2|, |c - 1/2| = {worst:.2e}"));
}

#[test]
fn criterion_07_q_lambda_trend() {
    let p0 = trend_target().unwrap();
    assert_eq!(p0.len(), 16);
    let opts = QLambdaOptions::default();
    let devs: Vec<f64> = [0.1, 0.01, 0.001]
        .iter()
        .map(|&l| solve_q_lambda(&p0, l, opts).unwrap().sup_deviation)
        .collect();
    let q0 = solve_q_lambda(&p0, 0.0, opts).unwrap();
    let js = js_on_grid(p0.probs(), &q0.q).unwrap();
    let decreasing = devs.windows(2).all(|w| w[1] < w[0]);
    report(
        7,
        decreasing && js <= 1e-4,
        format!(
            "||q_λ - p0||_inf for λ = 0.1, 0.01, 0.001: {:.3e} {:.3e} {:.3e}; JS(p0, q_0) = {js:.2e}",
            devs[0], devs[1], devs[2]
        ),
    );
}

// ---- criterion 8 ----

#[test]
fn criterion_08_gradient_direction_invariance() {
    let schedule = ScalingSchedule::new(0.0001, 0.02, 500).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = Discriminator::new(2, 32, 4, 0.2, Conditioning::Ratio, &mut rng).unwrap();
    let critic = ScaleInvariantCritic { base, schedule: schedule.clone() };
    let x = normal_tensor(&mut rng, 64, 2);
    let mut worst = f64::INFINITY;
    for t in 0..=500 {
        let ts = vec![t; x.rows()];
        let c = cosine_similarity_diag(&critic, &schedule, &Transform::ScaleOnly, &x, &ts, &mut rng)
            .unwrap()
            .expect("nonzero gradients");
        worst = worst.min(c);
    }
    report(8, worst >= 1.0 - 1e-6, format!("min cosine over t = 0..=500 is 1 - {:.2e}", 1.0 - worst));
}

// ---- criterion 9 ----

#[test]
fn criterion_09_variance_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=128);
        let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let var = scale_wise_variance(std::slice::from_ref(&v)).unwrap();
        let mut pair = 0.0;
        for a in &v {
            for b in &v {
                pair += (a - b) * (a - b);
            }
        }
        pair /= (n * n) as f64;
        worst = worst.max((2.0 * var - pair).abs());
    }
    report(9, worst <= 1e-12, format!("max |2 Var - mean pairwise sq diff| = {worst:.2e} on 1000 batches"));
}

// ---- criterion 10 ----

const RUN_LIMIT: Duration = Duration::from_secs(15 * 60);

#[test]
fn criterion_10_toy_training_stability() {
    let root = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    let mut slowest = Duration::ZERO;

    let mut good = 0;
    for seed in 0..3 {
        let mut cfg = RunConfig::preset("toy-scalegan").unwrap();
        cfg.seed = seed;
        let t0 = Instant::now();
        let sum = trainer::run(&cfg, &root.path().join(format!("scalegan_{seed}"))).unwrap();
        slowest = slowest.max(t0.elapsed());
        let f = sum.final_record().unwrap();
        if f.recall >= 7.0 / 8.0 && f.precision >= 0.8 {
            good += 1;
        }
        lines.push(format!("scale-gan seed {seed}: P={:.3} R={:.3}", f.precision, f.recall));
    }

    let mut collapsed = 0;
    for seed in 0..3 {
        let mut cfg = RunConfig::preset("fixed-scale-1.5").unwrap();
        cfg.seed = seed;
        let t0 = Instant::now();
        let sum = trainer::run(&cfg, &root.path().join(format!("fixed_{seed}"))).unwrap();
        slowest = slowest.max(t0.elapsed());
        let drop = sum.max_recall_drop();
        if drop >= 0.25 {
            collapsed += 1;
        }
        lines.push(format!("s=1.5 seed {seed}: recall drop {drop:.3}"));
    }

    report(
        10,
        good >= 2 && collapsed >= 1 && slowest <= RUN_LIMIT,
        format!(
            "{good}/3 scale-gan seeds converged, {collapsed}/3 s=1.5 seeds collapsed, slowest run {:.0}s [{}]",
            slowest.as_secs_f64(),
            lines.join("; ")
        ),
    );
}

#[test]
fn criterion_11_not_reproducible() {
    let _ = writeln!(
        std::io::stdout().lock(),
        "criterion 11: NOT REPRODUCIBLE image-benchmark FID/recall needs large-scale training; no test"
    );
}
