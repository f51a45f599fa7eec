//! The full oracle invariant suite, as a list of named checks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::critic::ScaleInvariantCritic;
use super::cubic::{count_sign_changes, cubic, solve_inner_root};
use super::generator::{solve_q_lambda, QLambdaOptions};
use super::grid::DensityGrid;
use super::optimal::{
    bias_bound, check_bias_bounds, fixed_point_gap, ratios, solve_optimal_discriminator, verify_scale_invariance,
};
use crate::augmentation::{ScalingSchedule, Transform};
use crate::data::GmmSpec;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::cosine_similarity_diag;
use crate::models::{Conditioning, Discriminator};
use crate::par::Execution;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// λ used by the bias-bound checks.
    pub lambda: f64,
    pub delta: f64,
    /// Multiplies every tolerance.
    pub tolerance_scale: f64,
    /// Per-check tolerance replacements, applied after scaling.
    pub tolerances: BTreeMap<String, f64>,
    pub instances: usize,
    pub uniqueness_instances: usize,
    pub scan_points: usize,
    pub q_steps: usize,
    pub execution: Execution,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            lambda: 0.0027,
            delta: 0.3,
            tolerance_scale: 1.0,
            tolerances: BTreeMap::new(),
            instances: 20,
            uniqueness_instances: 1000,
            scan_points: 1_000_000,
            q_steps: 10_000,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    /// `measured < tolerance` instead of `<=`.
    pub strict: bool,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub options: VerifyOptions,
    pub checks: Vec<Check>,
    pub all_passed: bool,
}

impl Report {
    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const TOY_SCHEDULE: (f64, f64, usize) = (0.0001, 0.02, 500);
pub const INVARIANCE_LAMBDAS: [f64; 3] = [0.0, 0.001, 0.0027];
pub const INVARIANCE_TS: [usize; 3] = [50, 200, 500];
pub const TREND_LAMBDAS: [f64; 3] = [0.1, 0.01, 0.001];

const GRID_CELLS: usize = 64;
const BOX: (f64, f64) = (-3.0, 3.0);

fn bumps<R: Rng + ?Sized>(rng: &mut R) -> Vec<(f64, f64, f64)> {
    let k = rng.gen_range(1..=3);
    (0..k)
        .map(|_| (rng.gen_range(-2.0..2.0), rng.gen_range(0.3..1.2), rng.gen_range(0.5..2.0)))
        .collect()
}

fn bump_density(b: &[(f64, f64, f64)], x: f64) -> f64 {
    0.05 + b
        .iter()
        .map(|&(mu, sd, w)| w * (-(x - mu).powi(2) / (2.0 * sd * sd)).exp())
        .sum::<f64>()
}

/// Random strictly positive 1-D pair `(p0, q)` on a shared 64-cell grid.
pub fn random_pair<R: Rng + ?Sized>(rng: &mut R) -> Result<(DensityGrid, DensityGrid)> {
    let (bp, bq) = (bumps(rng), bumps(rng));
    let p = DensityGrid::from_density(&[BOX.0], &[BOX.1], &[GRID_CELLS], |x| bump_density(&bp, x[0]))?;
    let q = DensityGrid::from_density(&[BOX.0], &[BOX.1], &[GRID_CELLS], |x| bump_density(&bq, x[0]))?;
    Ok((p, q))
}

/// Random pair with `p0/(p0+q)` confined to `(δ, 1−δ)` on every cell.
pub fn random_delta_pair<R: Rng + ?Sized>(rng: &mut R, delta: f64) -> Result<(DensityGrid, DensityGrid)> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::config("delta", "must lie in (0, 0.5)"));
    }
    loop {
        let bp = bumps(rng);
        let p = DensityGrid::from_density(&[BOX.0], &[BOX.1], &[GRID_CELLS], |x| bump_density(&bp, x[0]))?;
        let (amp, freq, phase) = (rng.gen_range(0.1..1.0), rng.gen_range(0.5..3.0), rng.gen_range(0.0..6.3));
        let q = DensityGrid::from_density(&[BOX.0], &[BOX.1], &[GRID_CELLS], |x| {
            bump_density(&bp, x[0]) * (amp * (freq * x[0] + phase).sin()).exp()
        })?;
        let inside = p
            .probs()
            .iter()
            .zip(q.probs())
            .all(|(a, b)| a / (a + b) > delta && a / (a + b) < 1.0 - delta);
        if inside {
            return Ok((p, q));
        }
    }
}

/// 16-cell 1-D target used by the `q_λ` checks.
pub fn trend_target() -> Result<DensityGrid> {
    let w: Vec<f64> = (0..16)
        .map(|i| {
            let x = (i as f64 + 0.5) / 16.0;
            1.0 + 0.6 * (std::f64::consts::TAU * x).sin() + 0.3 * (2.0 * std::f64::consts::TAU * x).cos()
        })
        .collect();
    DensityGrid::from_weights_1d(0.0, 1.0, &w)
}

struct Suite<'a> {
    opts: &'a VerifyOptions,
    checks: Vec<Check>,
}

impl Suite<'_> {
    fn push(&mut self, name: &str, measured: f64, base_tol: f64, strict: bool, detail: String) {
        let tolerance = self
            .opts
            .tolerances
            .get(name)
            .copied()
            .unwrap_or(base_tol * self.opts.tolerance_scale);
        let passed = if strict {
            measured < tolerance
        } else {
            measured <= tolerance
        };
        self.checks.push(Check {
            name: name.to_string(),
            measured,
            tolerance,
            strict,
            passed: passed && measured.is_finite(),
            detail,
        });
    }
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

pub fn run_verification(opts: &VerifyOptions) -> Result<Report> {
    if !(opts.tolerance_scale.is_finite() && opts.tolerance_scale >= 0.0) {
        return Err(Error::config("tolerance_scale", "must be finite and >= 0"));
    }
    if !(opts.lambda.is_finite() && opts.lambda >= 0.0) {
        return Err(Error::config("lambda", "must be finite and >= 0"));
    }
    let exec = opts.execution;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut suite = Suite { opts, checks: Vec::new() };

    let pairs = (0..opts.instances.max(1))
        .map(|_| random_pair(&mut rng))
        .collect::<Result<Vec<_>>>()?;

    // closed form at λ = 0
    let devs = exec.map(&pairs, |(p, q)| -> Result<f64> {
        let sol = solve_optimal_discriminator(p, q, 0.0)?;
        Ok(max_of(
            sol.d
                .iter()
                .zip(p.probs().iter().zip(q.probs()))
                .map(|(d, (a, b))| (d - a / (a + b)).abs()),
        ))
    });
    let dev = max_of(devs.into_iter().collect::<Result<Vec<_>>>()?);
    suite.push("lambda0_closed_form", dev, 1e-10, false, format!("{} random instances", pairs.len()));

    // residuals of the regularized solve
    let res = exec.map(&pairs, |(p, q)| -> Result<(f64, f64)> {
        let sol = solve_optimal_discriminator(p, q, 0.01)?;
        Ok((sol.fixed_point_residual, sol.cubic_residual))
    });
    let res = res.into_iter().collect::<Result<Vec<_>>>()?;
    suite.push(
        "fixed_point_residual",
        max_of(res.iter().map(|r| r.0)),
        1e-10,
        false,
        "|h(c)| at λ=0.01".into(),
    );
    suite.push(
        "cubic_residual",
        max_of(res.iter().map(|r| r.1)),
        1e-10,
        false,
        "max cell |f(D,c)| at λ=0.01".into(),
    );

    // scale invariance
    let (b0, bt, tm) = TOY_SCHEDULE;
    let schedule = ScalingSchedule::new(b0, bt, tm)?;
    let mut jobs = Vec::new();
    for (i, _) in pairs.iter().enumerate().take(5) {
        for lam in INVARIANCE_LAMBDAS {
            jobs.push((i, lam));
        }
    }
    let inv = exec.map(&jobs, |&(i, lam)| {
        verify_scale_invariance(&pairs[i].0, &pairs[i].1, &schedule, lam, &INVARIANCE_TS)
    });
    let inv = max_of(inv.into_iter().collect::<Result<Vec<_>>>()?);
    suite.push(
        "scale_invariance",
        inv,
        1e-8,
        false,
        format!("λ∈{INVARIANCE_LAMBDAS:?}, t∈{INVARIANCE_TS:?}"),
    );

    // bias bounds on δ-confined instances
    let delta_pairs = (0..opts.instances.max(1))
        .map(|_| random_delta_pair(&mut rng, opts.delta))
        .collect::<Result<Vec<_>>>()?;
    let bounds = exec.map(&delta_pairs, |(p, q)| check_bias_bounds(p, q, opts.lambda, opts.delta));
    let bounds = bounds.into_iter().collect::<Result<Vec<_>>>()?;
    let bound = bias_bound(opts.delta, opts.lambda);
    suite.push(
        "bias_bound_upper",
        max_of(bounds.iter().map(|b| b.sup_deviation)),
        bound,
        false,
        format!("bound 4λ((1−δ)/δ)² = {bound:.6} at λ={}, δ={}", opts.lambda, opts.delta),
    );
    suite.push(
        "bias_bound_lower",
        bounds.iter().map(|b| b.lower_violation).fold(f64::NEG_INFINITY, f64::max),
        0.0,
        false,
        "max cell p0/(p0+q) − 4λ − D".into(),
    );

    // r ≡ 1 collapse
    let mut collapse = 0.0f64;
    for (p, _) in pairs.iter().take(5) {
        for lam in [0.0, 0.01, 0.1] {
            let sol = solve_optimal_discriminator(p, p, lam)?;
            collapse = collapse
                .max((sol.c - 0.5).abs())
                .max(max_of(sol.d.iter().map(|d| (d - 0.5).abs())))
                .max(sol.fixed_point_residual)
                .max(sol.cubic_residual);
        }
    }
    suite.push("r1_collapse", collapse, 1e-12, false, "q = p0, λ∈{0,0.01,0.1}".into());

    // bracket h(0) > 0 > h(1)
    let mut bad_brackets = 0usize;
    for (p, q) in &pairs {
        let r = ratios(p, q)?;
        for lam in [0.0, 0.0027, 0.01, 0.05] {
            if !(fixed_point_gap(p.probs(), &r, 0.0, lam) > 0.0 && fixed_point_gap(p.probs(), &r, 1.0, lam) < 0.0) {
                bad_brackets += 1;
            }
        }
    }
    suite.push(
        "fixed_point_bracket",
        bad_brackets as f64,
        0.0,
        false,
        "instances with h(0) <= 0 or h(1) >= 0".into(),
    );

    // cubic uniqueness, root residual and continuity on random (r, c, λ)
    let triples: Vec<(f64, f64, f64)> = (0..opts.uniqueness_instances)
        .map(|_| {
            let r = 10f64.powf(rng.gen_range(-2.0..2.0));
            (r, rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=0.05))
        })
        .collect();
    let points = opts.scan_points;
    let per = exec.map(&triples, |&(r, c, lam)| {
        let changes = count_sign_changes(r, c, lam, points);
        let z = solve_inner_root(r, c, lam);
        let z2 = solve_inner_root(r + 1e-6, c, lam);
        (changes, cubic(z, c, r, lam).abs(), (z2 - z).abs())
    });
    let worst_changes = per.iter().map(|p| (p.0 as f64 - 1.0).abs()).fold(0.0, f64::max);
    suite.push(
        "cubic_uniqueness",
        worst_changes,
        0.0,
        false,
        format!("{} instances × {points} scan points", triples.len()),
    );
    suite.push("inner_root_residual", max_of(per.iter().map(|p| p.1)), 1e-12, false, "max |f(z,c)|".into());
    suite.push("z_continuity", max_of(per.iter().map(|p| p.2)), 1e-3, false, "max |z(r+1e-6) − z(r)|".into());

    // q_λ trend and λ = 0 limit
    let target = trend_target()?;
    let q_opts = QLambdaOptions {
        steps: opts.q_steps,
        ..Default::default()
    };
    let mut lambdas = TREND_LAMBDAS.to_vec();
    lambdas.push(0.0);
    let sols = exec.map(&lambdas, |&lam| solve_q_lambda(&target, lam, q_opts));
    let sols = sols.into_iter().collect::<Result<Vec<_>>>()?;
    let devs: Vec<f64> = sols[..3].iter().map(|s| s.sup_deviation).collect();
    // strictly decreasing as λ shrinks ⇔ every successive difference < 0
    let worst_step = devs.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    suite.push(
        "q_lambda_trend",
        worst_step,
        0.0,
        true,
        format!("‖q_λ − p0‖∞ at λ={TREND_LAMBDAS:?}: {devs:?}"),
    );
    suite.push("q0_js", sols[3].js, 1e-4, false, format!("JS(p0, q_0) after {} steps", opts.q_steps));

    // gradient-direction invariance for D̃(y, t) = g(y / s_t)
    let mut net_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let base = Discriminator::new(2, 32, 4, 0.2, Conditioning::Ratio, &mut net_rng)?;
    let critic = ScaleInvariantCritic {
        base,
        schedule: schedule.clone(),
    };
    let x = GmmSpec::default().sample(64, &mut net_rng);
    let mut worst_cos = 0.0f64;
    for t in [1usize, 10, 50, 100, 200, 300, 400, 500] {
        let ts = vec![t; x.rows()];
        let cos = cosine_similarity_diag(&critic, &schedule, &Transform::ScaleOnly, &x, &ts, &mut net_rng)?;
        worst_cos = worst_cos.max(cos.map_or(f64::INFINITY, |c| 1.0 - c));
    }
    suite.push(
        "gradient_direction_invariance",
        worst_cos,
        1e-6,
        false,
        "1 − min_t mean cosine, scale-only transform".into(),
    );

    // 2 Var(v) = mean pairwise squared difference
    let mut worst_var = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=128);
        let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let mut g = Graph::new();
        let leaf = g.leaf(Tensor::column(v.clone()));
        let var = g.variance_over_batch(leaf)?;
        let var = g.value(var).data()[0];
        let pairwise: f64 = v
            .iter()
            .map(|a| v.iter().map(|b| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (n * n) as f64;
        worst_var = worst_var.max((2.0 * var - pairwise).abs());
    }
    suite.push(
        "variance_identity",
        worst_var,
        1e-12,
        false,
        "1000 random batches".into(),
    );

    let all_passed = suite.checks.iter().all(|c| c.passed);
    Ok(Report {
        options: opts.clone(),
        checks: suite.checks,
        all_passed,
    })
}
