//! The Scale-GAN training loop: discriminator step, generator step and the
//! intensity-strategy update, with evaluation, CSV logging and checkpoints.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::augmentation::{ScalingSchedule, Transform};
use crate::checkpoint;
use crate::config::{RdSource, RunConfig};
use crate::data::{write_csv, GmmSpec};
use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, NodeId};
use crate::metrics::{cosine_similarity_diag, disc_grad_norm, precision_recall};
use crate::models::{Discriminator, Generator};
use crate::objectives::{
    disc_objective_node, gen_loss_node, modified_reg_node, variance_reg_node, RegKind,
};
use crate::optim::Adam;
use crate::strategy::{estimate_rd, IntensityDistribution, StrategyKind, StrategyState};
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "iter,loss_d,loss_g,precision,recall,grad_norm,T,r_d,reg_value,cos_sim";

/// RNG stream ids; every stream is ChaCha8 seeded with the run seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const DATA: u64 = 1;
    pub const SAMPLE: u64 = 2;
    pub const INTENSITY: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const EVAL: u64 = 5;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Evaluation randomness depends only on `(seed, iteration)`.
pub fn eval_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = stream_rng(seed, streams::EVAL);
    rng.set_word_pos((iteration as u128) << 40);
    rng
}

pub fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

pub fn gather_rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let c = x.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::new(vec![idx.len(), c], data).expect("shape matches")
}

pub(crate) fn param_grads(grads: &Gradients, bound: &[NodeId], params: &[Tensor]) -> Vec<Tensor> {
    bound.iter().zip(params).map(|(&id, p)| grads.get_or_zeros(id, p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub reg_value: f64,
    pub r_d: f64,
    /// `T` after the step.
    pub current_t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub precision: f64,
    pub recall: f64,
    pub grad_norm: f64,
    pub current_t: usize,
    pub r_d: f64,
    pub reg_value: f64,
    pub cos_sim: Option<f64>,
}

impl EvalRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.loss_d,
            self.loss_g,
            self.precision,
            self.recall,
            self.grad_norm,
            self.current_t,
            self.r_d,
            self.reg_value,
            self.cos_sim.map(|c| c.to_string()).unwrap_or_default()
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            return Err(Error::Checkpoint(format!("metrics row has {} fields: {line}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Checkpoint(format!("bad number `{s}`: {e}")));
        Ok(EvalRecord {
            iteration: f[0].parse().map_err(|_| Error::Checkpoint(format!("bad iteration `{}`", f[0])))?,
            loss_d: num(f[1])?,
            loss_g: num(f[2])?,
            precision: num(f[3])?,
            recall: num(f[4])?,
            grad_norm: num(f[5])?,
            current_t: f[6].parse().map_err(|_| Error::Checkpoint(format!("bad T `{}`", f[6])))?,
            r_d: num(f[7])?,
            reg_value: num(f[8])?,
            cos_sim: if f[9].is_empty() { None } else { Some(num(f[9])?) },
        })
    }
}

/// Everything a run needs to continue bit-identically.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: RunConfig,
    pub gen: Generator,
    pub disc: Discriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub iteration: u64,
    pub strategy: StrategyState,
    pub schedule: ScalingSchedule,
    pub dataset: Tensor,
    pub rng_sample: ChaCha8Rng,
    pub rng_t: ChaCha8Rng,
    pub rng_noise: ChaCha8Rng,
    pub last: Option<StepRecord>,
}

impl TrainState {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let m = config.model;
        let mut init = stream_rng(seed, streams::INIT);
        let gen = Generator::new(m.latent_dim, 2, m.hidden, m.layers, m.slope, &mut init)?;
        let disc = Discriminator::new(2, m.hidden, m.layers, m.slope, m.conditioning, &mut init)?;
        let dataset = config.data.sample(config.data.n, &mut stream_rng(seed, streams::DATA));
        let s = config.strategy;
        let strategy = StrategyState::new(s.kind, s.t_min, s.t_max, config.iterations, s.d_target, s.t_init)?;
        let mut state = TrainState {
            opt_g: Adam::new(config.optim_g, gen.net.params()),
            opt_d: Adam::new(config.optim_d, disc.net.params()),
            gen,
            disc,
            iteration: 0,
            strategy,
            schedule: ScalingSchedule::new(config.schedule.beta0, config.schedule.beta_t, s.t_max)?,
            dataset,
            rng_sample: stream_rng(seed, streams::SAMPLE),
            rng_t: stream_rng(seed, streams::INTENSITY),
            rng_noise: stream_rng(seed, streams::NOISE),
            last: None,
            config,
        };
        state.sync_schedule()?;
        Ok(state)
    }

    pub fn t_max(&self) -> usize {
        self.config.strategy.t_max
    }

    fn sync_schedule(&mut self) -> Result<()> {
        if self.config.schedule.recompute_with_current_t {
            let t = self.strategy.current_t.max(1);
            if self.schedule.t_max() != t {
                let c = self.config.schedule;
                self.schedule = ScalingSchedule::new(c.beta0, c.beta_t, t)?;
            }
        }
        Ok(())
    }

    pub fn distribution(&self) -> Result<IntensityDistribution> {
        IntensityDistribution::new(self.config.strategy.pi0, self.strategy.current_t, self.config.strategy.mix_weight)
    }

    /// One iteration of the algorithm: D ascent, G descent, strategy update.
    pub fn step(&mut self) -> Result<StepRecord> {
        let i = self.iteration + 1;
        let cfg = &self.config;
        let (m, latent, t_max) = (cfg.batch_size, cfg.model.latent_dim, cfg.strategy.t_max);
        let transform = cfg.transform;
        let scale = cfg.data_scale;
        let loss_cfg = cfg.loss;
        let dist = self.distribution()?;

        // Step I: discriminator
        let n = self.dataset.rows();
        let idx: Vec<usize> = (0..m).map(|_| self.rng_sample.gen_range(0..n)).collect();
        let x_real = gather_rows(&self.dataset, &idx);
        let z = normal_tensor(&mut self.rng_sample, m, latent);
        let fake = self.gen.generate(&z)?;
        let t_real = dist.sample(&mut self.rng_t, m);
        let t_fake = dist.sample(&mut self.rng_t, m);
        let plan_r = transform.plan(&self.schedule, &t_real, 2, &mut self.rng_noise)?.scaled_by(scale, m);
        let plan_f = transform.plan(&self.schedule, &t_fake, 2, &mut self.rng_noise)?.scaled_by(scale, m);

        let mut g = Graph::new();
        let bd = self.disc.net.bind(&mut g);
        let yr = g.leaf(plan_r.apply(&x_real)?);
        let yf = g.leaf(plan_f.apply(&fake)?);
        let d_real = self.disc.forward(&mut g, &bd, yr, &t_real, t_max)?;
        let d_fake = self.disc.forward(&mut g, &bd, yf, &t_fake, t_max)?;
        let reg = if loss_cfg.regularized() {
            match loss_cfg.reg_kind {
                RegKind::Variance => {
                    let k = self.config.reg_scales.unwrap_or(m).min(m);
                    Some(variance_reg_node(
                        &mut g,
                        &self.disc,
                        &bd,
                        &self.schedule,
                        &transform,
                        scale,
                        &x_real,
                        &t_real[..k],
                        t_max,
                        &mut self.rng_noise,
                    )?)
                }
                RegKind::Modified => Some(modified_reg_node(&mut g, d_real)?),
                RegKind::None => None,
            }
        } else {
            None
        };
        let objective = disc_objective_node(&mut g, d_real, d_fake, reg, loss_cfg.lambda)?;
        let loss_d_node = g.scalar_mul(objective, -1.0)?;
        let loss_d = g.value(loss_d_node).data()[0];
        let reg_value = reg.map_or(0.0, |r| g.value(r).data()[0]);
        let real_out = g.value(d_real).data().to_vec();
        let fake_out = g.value(d_fake).data().to_vec();
        let grads = g.backward(loss_d_node)?;
        let gd = param_grads(&grads, &bd, self.disc.net.params());
        self.opt_d.update(self.disc.net.params_mut(), &gd)?;
        drop(g);

        // Step II: generator
        let z = normal_tensor(&mut self.rng_sample, m, latent);
        let t_gen = dist.sample(&mut self.rng_t, m);
        let plan_g = transform.plan(&self.schedule, &t_gen, 2, &mut self.rng_noise)?.scaled_by(scale, m);
        let mut g = Graph::new();
        let bg = self.gen.net.bind(&mut g);
        let bd = self.disc.net.bind(&mut g);
        let zn = g.leaf(z);
        let x = self.gen.forward(&mut g, &bg, zn)?;
        let y = plan_g.apply_node(&mut g, x)?;
        let d = self.disc.forward(&mut g, &bd, y, &t_gen, t_max)?;
        let loss_g_node = gen_loss_node(&mut g, d, self.config.loss.gen_loss_kind)?;
        let loss_g = g.value(loss_g_node).data()[0];
        let grads = g.backward(loss_g_node)?;
        let gg = param_grads(&grads, &bg, self.gen.net.params());
        self.opt_g.update(self.gen.net.params_mut(), &gg)?;

        // Step III: intensity strategy
        let r_d = match self.config.strategy.rd_source {
            RdSource::Real => estimate_rd(&real_out)?,
            RdSource::Both => {
                let pooled: Vec<f64> = real_out.iter().copied().chain(fake_out.iter().map(|d| 1.0 - d)).collect();
                estimate_rd(&pooled)?
            }
        };
        match self.strategy.kind {
            StrategyKind::Adaptive => {
                if i.is_multiple_of(self.config.strategy.update_every) {
                    self.strategy.on_overfit_estimate(r_d);
                }
            }
            _ => {
                self.strategy.on_iteration(i);
            }
        }
        self.sync_schedule()?;
        self.iteration = i;
        if !(loss_d.is_finite() && loss_g.is_finite()) {
            return Err(Error::NonFinite { op: "loss" });
        }
        let rec = StepRecord {
            iteration: i,
            loss_d,
            loss_g,
            reg_value,
            r_d,
            current_t: self.strategy.current_t,
        };
        self.last = Some(rec);
        Ok(rec)
    }

    /// Metrics on a fresh generator sample; randomness depends only on
    /// `(seed, iteration)` so evaluation never perturbs training.
    pub fn evaluate(&self) -> Result<EvalRecord> {
        let cfg = &self.config;
        let mut rng = eval_rng(cfg.seed, self.iteration);
        let z = normal_tensor(&mut rng, cfg.eval.samples, cfg.model.latent_dim);
        let samples = self.gen.generate(&z)?;
        let (precision, recall) =
            precision_recall(&samples, &cfg.data.means(), cfg.data.sigma(), cfg.eval.threshold_mult)?;
        let real = self.dataset.map(|v| v * cfg.data_scale);
        let critic = self.disc.critic(self.t_max());
        let zeros = vec![0; real.rows()];
        let grad_norm = disc_grad_norm(&critic, &real, &zeros)?;
        let t_cur = self.strategy.current_t;
        let t_cos: Vec<usize> = (0..real.rows())
            .map(|_| if t_cur == 0 { 0 } else { rng.gen_range(1..=t_cur) })
            .collect();
        let cos_sim = cosine_similarity_diag(&critic, &self.schedule, &cfg.transform, &real, &t_cos, &mut rng)?;
        let last = self.last.unwrap_or(StepRecord {
            iteration: self.iteration,
            loss_d: f64::NAN,
            loss_g: f64::NAN,
            reg_value: 0.0,
            r_d: 0.0,
            current_t: t_cur,
        });
        Ok(EvalRecord {
            iteration: self.iteration,
            loss_d: last.loss_d,
            loss_g: last.loss_g,
            precision,
            recall,
            grad_norm,
            current_t: t_cur,
            r_d: last.r_d,
            reg_value: last.reg_value,
            cos_sim,
        })
    }

    pub fn modes(&self) -> Vec<[f64; 2]> {
        self.config.data.means()
    }

    pub fn gmm(&self) -> GmmSpec {
        self.config.data
    }

    pub fn transform(&self) -> Transform {
        self.config.transform
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub records: Vec<EvalRecord>,
}

impl RunSummary {
    pub fn final_record(&self) -> Option<&EvalRecord> {
        self.records.last()
    }

    /// Smallest recall logged at or after half the run.
    pub fn min_recall_after_half(&self, iterations: u64) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| 2 * r.iteration >= iterations)
            .map(|r| r.recall)
            .reduce(f64::min)
    }

    pub fn max_grad_norm(&self) -> Option<f64> {
        self.records.iter().map(|r| r.grad_norm).reduce(f64::max)
    }

    /// Largest fall of recall below its running maximum.
    pub fn max_recall_drop(&self) -> f64 {
        let mut peak = f64::NEG_INFINITY;
        let mut drop = 0.0f64;
        for r in &self.records {
            peak = peak.max(r.recall);
            drop = drop.max(peak - r.recall);
        }
        drop
    }
}

pub fn metrics_path(dir: &Path) -> PathBuf {
    dir.join("metrics.csv")
}

pub fn checkpoint_dir(dir: &Path) -> PathBuf {
    dir.join("checkpoints")
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    checkpoint_dir(dir).join(format!("ckpt_{iteration}.bin"))
}

pub fn read_metrics(path: &Path) -> Result<Vec<EvalRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if k == 0 {
            if line.trim() != METRICS_HEADER {
                return Err(Error::Checkpoint(format!("{} has an unexpected header", path.display())));
            }
            continue;
        }
        if !line.trim().is_empty() {
            out.push(EvalRecord::parse_csv_row(&line)?);
        }
    }
    Ok(out)
}

/// Rewrites `metrics.csv` keeping only rows up to `iteration`.
fn truncate_metrics(path: &Path, iteration: u64) -> Result<Vec<EvalRecord>> {
    let kept: Vec<EvalRecord> = if path.exists() {
        read_metrics(path)?.into_iter().filter(|r| r.iteration <= iteration).collect()
    } else {
        Vec::new()
    };
    let mut text = String::from(METRICS_HEADER);
    text.push('\n');
    for r in &kept {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(kept)
}

fn write_dump(dir: &Path, state: &TrainState, err: &Error) -> Option<PathBuf> {
    let path = dir.join("nan_dump.json");
    let payload = serde_json::json!({
        "iteration": state.iteration,
        "error": err.to_string(),
        "last_step": state.last,
        "current_t": state.strategy.current_t,
        "checkpoint": "nan_dump.bin",
    });
    let ok = fs::write(&path, serde_json::to_string_pretty(&payload).ok()?).is_ok()
        && checkpoint::save(&dir.join("nan_dump.bin"), state).is_ok();
    ok.then_some(path)
}

/// Trains from the current state up to `until` iterations, appending
/// evaluation rows and writing checkpoints into `dir`.
pub fn continue_run(state: &mut TrainState, dir: &Path, until: u64) -> Result<Vec<EvalRecord>> {
    let path = metrics_path(dir);
    let mut records = truncate_metrics(&path, state.iteration)?;
    fs::create_dir_all(checkpoint_dir(dir)).map_err(|e| Error::io(checkpoint_dir(dir), e))?;
    let mut csv = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
    let (every, ckpt_every) = (state.config.eval.every, state.config.checkpoint_every);
    while state.iteration < until {
        let before = state.iteration;
        if let Err(e) = state.step() {
            return Err(match e {
                Error::NonFinite { .. } => Error::NumericalAbort {
                    iteration: before + 1,
                    dump: write_dump(dir, state, &e),
                },
                other => other,
            });
        }
        let i = state.iteration;
        if i.is_multiple_of(every) {
            let rec = state.evaluate()?;
            writeln!(csv, "{}", rec.csv_row()).map_err(|e| Error::io(&path, e))?;
            records.push(rec);
        }
        if (ckpt_every > 0 && i.is_multiple_of(ckpt_every)) || i == until {
            checkpoint::save(&checkpoint_path(dir, i), state)?;
        }
    }
    csv.flush().map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

/// Fresh run: writes `config.json`, `dataset.csv`, `metrics.csv` and checkpoints.
pub fn run(config: &RunConfig, dir: &Path) -> Result<RunSummary> {
    let mut state = TrainState::new(config.clone())?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    config.save(&dir.join("config.json"))?;
    write_csv(&dir.join("dataset.csv"), &state.dataset)?;
    let path = metrics_path(dir);
    fs::write(&path, format!("{METRICS_HEADER}\n")).map_err(|e| Error::io(&path, e))?;
    let records = continue_run(&mut state, dir, config.iterations)?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        records,
    })
}

/// Continues the run that wrote `ckpt` inside `dir` up to `until`
/// (default: the configured iteration budget).
pub fn resume(ckpt: &Path, dir: &Path, overrides: &[String], until: Option<u64>) -> Result<RunSummary> {
    let mut state = checkpoint::load_with_overrides(ckpt, overrides)?;
    let until = until.unwrap_or(state.config.iterations);
    state.config.save(&dir.join("config.json"))?;
    let records = continue_run(&mut state, dir, until)?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        records,
    })
}
