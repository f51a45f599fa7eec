//! Named parameter sweeps over seeds, run in parallel.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augmentation::Transform;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::par::{with_jobs, Execution};
use crate::trainer::run;

pub const SWEEPS: &[&str] = &["fixed-scales", "strategies", "noise", "diffusion", "lambda"];
pub const SUMMARY_HEADER: &str =
    "preset,point,seed,final_precision,final_recall,min_recall_after_half,max_grad_norm,status";

pub const FIXED_SCALES: [f64; 4] = [0.25, 0.5, 1.0, 1.5];
pub const NOISE_LEVELS: [f64; 3] = [0.0, 0.05, 0.2];
pub const LAMBDAS: [f64; 6] = [0.0, 0.1, 0.5, 1.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub config: RunConfig,
}

pub fn sweep_points(name: &str) -> Result<Vec<SweepPoint>> {
    let point = |label: String, config: RunConfig| SweepPoint { label, config };
    Ok(match name {
        "fixed-scales" => FIXED_SCALES
            .iter()
            .map(|s| Ok(point(format!("s={s}"), RunConfig::preset(&format!("fixed-scale-{s}"))?)))
            .collect::<Result<_>>()?,
        "strategies" => ["fix", "linear-const", "adaptive"]
            .iter()
            .map(|k| Ok(point(k.to_string(), RunConfig::preset(&format!("strategy-{k}"))?)))
            .collect::<Result<_>>()?,
        "noise" => NOISE_LEVELS
            .iter()
            .map(|&sigma| {
                let mut c = RunConfig::preset("noise-0.05")?;
                c.transform = Transform::NoiseOnly { sigma_noise: sigma };
                c.name = format!("noise-{sigma}");
                Ok(point(format!("sigma_noise={sigma}"), c))
            })
            .collect::<Result<_>>()?,
        "diffusion" => NOISE_LEVELS
            .iter()
            .map(|&sigma| {
                let mut c = RunConfig::preset("scale-only-adaptive")?;
                if sigma > 0.0 {
                    c.transform = Transform::Diffusion { sigma_noise: sigma };
                }
                c.name = format!("diffusion-{sigma}");
                Ok(point(format!("sigma_noise={sigma}"), c))
            })
            .collect::<Result<_>>()?,
        "lambda" => LAMBDAS
            .iter()
            .map(|&lam| {
                let mut c = RunConfig::preset("toy-scalegan")?;
                c.loss.lambda = lam;
                Ok(point(format!("lambda={lam}"), c))
            })
            .collect::<Result<_>>()?,
        _ => {
            return Err(Error::config(
                "sweep",
                format!("unknown sweep `{name}` (known: {})", SWEEPS.join(", ")),
            ))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub preset: String,
    pub point: String,
    pub seed: u64,
    pub final_precision: Option<f64>,
    pub final_recall: Option<f64>,
    pub min_recall_after_half: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub status: String,
    pub dir: PathBuf,
}

impl SummaryRow {
    fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.preset,
            self.point,
            self.seed,
            f(self.final_precision),
            f(self.final_recall),
            f(self.min_recall_after_half),
            f(self.max_grad_norm),
            self.status.replace(',', ";")
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub seeds: Vec<u64>,
    pub overrides: Vec<String>,
    pub jobs: Option<usize>,
    pub execution: Execution,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            seeds: vec![0, 1, 2],
            overrides: Vec::new(),
            jobs: None,
            execution: Execution::default(),
        }
    }
}

/// Runs every `(point, seed)` into `root/<point>/seed_<seed>` and writes
/// `root/summary.csv`. Failed runs are recorded, not propagated.
pub fn run_sweep(name: &str, root: &Path, opts: &SweepOptions) -> Result<Vec<SummaryRow>> {
    let points = sweep_points(name)?;
    let mut jobs = Vec::new();
    for p in &points {
        let base = p.config.with_overrides(&opts.overrides)?;
        for &seed in &opts.seeds {
            let mut c = base.clone();
            c.seed = seed;
            jobs.push((p.label.clone(), c));
        }
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let exec = opts.execution;
    let rows = with_jobs(opts.jobs, || {
        exec.map(&jobs, |(label, cfg)| {
            let dir = root.join(label.replace(['=', '/'], "_")).join(format!("seed_{}", cfg.seed));
            let mut row = SummaryRow {
                preset: cfg.name.clone(),
                point: label.clone(),
                seed: cfg.seed,
                final_precision: None,
                final_recall: None,
                min_recall_after_half: None,
                max_grad_norm: None,
                status: "ok".into(),
                dir: dir.clone(),
            };
            match run(cfg, &dir) {
                Ok(sum) => {
                    row.final_precision = sum.final_record().map(|r| r.precision);
                    row.final_recall = sum.final_record().map(|r| r.recall);
                    row.min_recall_after_half = sum.min_recall_after_half(cfg.iterations);
                    row.max_grad_norm = sum.max_grad_norm();
                }
                Err(Error::NumericalAbort { iteration, .. }) => row.status = format!("nan_abort@{iteration}"),
                Err(e) => row.status = format!("error: {e}"),
            }
            row
        })
    });
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for r in &rows {
        let _ = writeln!(text, "{}", r.csv_row());
    }
    let path = root.join("summary.csv");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grids_match_their_lists() {
        assert_eq!(sweep_points("fixed-scales").unwrap().len(), 4);
        assert_eq!(sweep_points("strategies").unwrap().len(), 3);
        let lam = sweep_points("lambda").unwrap();
        let vals: Vec<f64> = lam.iter().map(|p| p.config.loss.lambda).collect();
        assert_eq!(vals, LAMBDAS);
        assert!(sweep_points("nope").is_err());
        let fixed = sweep_points("fixed-scales").unwrap();
        assert_eq!(fixed[3].config.data_scale, 1.5);
    }

    #[test]
    fn small_sweep_writes_summary_and_records_failures() {
        let dir = tempfile::tempdir().unwrap();
        let opts = SweepOptions {
            seeds: vec![0, 1],
            overrides: vec!["iterations=4".into(), "eval.every=2".into(), "hidden=4".into(), "eval.samples=20".into()],
            jobs: Some(2),
            ..Default::default()
        };
        let rows = run_sweep("strategies", dir.path(), &opts).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.status == "ok"));
        let text = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with(SUMMARY_HEADER));
        // divergent optimizer settings abort but do not stop the sweep
        let bad = SweepOptions {
            overrides: vec!["iterations=30".into(), "hidden=4".into(), "optim_d.lr=1e6".into(), "optim_g.lr=1e6".into()],
            seeds: vec![0],
            ..opts
        };
        let rows = run_sweep("lambda", &dir.path().join("bad"), &bad).unwrap();
        assert_eq!(rows.len(), 6);
    }
}
