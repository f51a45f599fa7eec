//! Run configuration, presets and `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augmentation::{ScalingSchedule, Transform};
use crate::data::GmmSpec;
use crate::error::{Error, Result};
use crate::models::Conditioning;
use crate::objectives::{GenLossKind, LossConfig, RegKind};
use crate::optim::AdamConfig;
use crate::strategy::{Pi0Kind, StrategyKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub slope: f64,
    pub conditioning: Conditioning,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 2,
            hidden: 128,
            layers: 4,
            slope: 0.2,
            conditioning: Conditioning::Ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub beta0: f64,
    pub beta_t: f64,
    /// Rebuild `s_t` with the current `T` whenever it moves, instead of
    /// keeping the `T_max` schedule.
    pub recompute_with_current_t: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            beta0: 0.0001,
            beta_t: 0.02,
            recompute_with_current_t: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RdSource {
    /// Transformed real samples only.
    #[default]
    Real,
    /// Real and generated samples pooled (generated outputs enter as `1 − D`).
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub pi0: Pi0Kind,
    pub t_min: usize,
    pub t_max: usize,
    pub t_init: usize,
    pub d_target: f64,
    /// Probability of `t = 0`.
    pub mix_weight: f64,
    pub update_every: u64,
    pub rd_source: RdSource,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::Adaptive,
            pi0: Pi0Kind::Uniform,
            t_min: 0,
            t_max: 500,
            t_init: 0,
            d_target: 0.1,
            mix_weight: 0.5,
            update_every: 4,
            rd_source: RdSource::Real,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub every: u64,
    pub samples: usize,
    /// Mode radius in units of the component standard deviation.
    pub threshold_mult: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            every: 200,
            samples: 1000,
            threshold_mult: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub data: GmmSpec,
    pub model: ModelConfig,
    pub transform: Transform,
    pub schedule: ScheduleConfig,
    pub strategy: StrategyConfig,
    pub loss: LossConfig,
    /// How many of the real batch's intensities `t_j` feed the variance
    /// regularizer per step (`None` uses all of them).
    pub reg_scales: Option<usize>,
    /// Constant factor applied to real and generated samples before the transform.
    pub data_scale: f64,
    pub optim_g: AdamConfig,
    pub optim_d: AdamConfig,
    pub batch_size: usize,
    pub iterations: u64,
    pub eval: EvalConfig,
    /// `0` keeps only the final checkpoint.
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "custom".into(),
            seed: 0,
            data: GmmSpec::default(),
            model: ModelConfig::default(),
            transform: Transform::ScaleOnly,
            schedule: ScheduleConfig::default(),
            strategy: StrategyConfig::default(),
            loss: LossConfig {
                lambda: 0.1,
                reg_kind: RegKind::Variance,
                gen_loss_kind: GenLossKind::Saturating,
            },
            reg_scales: Some(DEFAULT_REG_SCALES),
            data_scale: 1.0,
            optim_g: AdamConfig { lr: PRESET_LR, ..AdamConfig::default() },
            optim_d: AdamConfig { lr: PRESET_LR, ..AdamConfig::default() },
            batch_size: 64,
            iterations: 40_000,
            eval: EvalConfig::default(),
            checkpoint_every: 10_000,
        }
    }
}

pub const DEFAULT_REG_SCALES: usize = 8;

/// Adam step size used by every preset.
pub const PRESET_LR: f64 = 1e-3;

pub const PRESETS: &[&str] = &[
    "toy-scalegan",
    "toy-vanilla",
    "fixed-scale-0.25",
    "fixed-scale-0.5",
    "fixed-scale-1",
    "fixed-scale-1.5",
    "strategy-fix",
    "strategy-linear-const",
    "strategy-adaptive",
    "noise-0.05",
    "noise-0.2",
    "diffusion-gan",
    "scale-only-adaptive",
];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = RunConfig {
            name: name.to_string(),
            ..Default::default()
        };
        let plain = |c: &mut RunConfig| {
            c.loss.lambda = 0.0;
            c.loss.reg_kind = RegKind::None;
        };
        let no_intensity = |c: &mut RunConfig| {
            c.strategy.kind = StrategyKind::Fix;
            c.strategy.mix_weight = 1.0;
        };
        match name {
            "toy-scalegan" | "strategy-adaptive" => {}
            "toy-vanilla" => {
                plain(&mut c);
                no_intensity(&mut c);
                c.transform = Transform::Identity;
            }
            _ if name.starts_with("fixed-scale-") => {
                let s: f64 = name["fixed-scale-".len()..]
                    .parse()
                    .map_err(|_| Error::config("preset", format!("unknown preset `{name}`")))?;
                plain(&mut c);
                no_intensity(&mut c);
                c.transform = Transform::ScaleOnly;
                c.data_scale = s;
            }
            "strategy-fix" => {
                plain(&mut c);
                c.strategy.kind = StrategyKind::Fix;
            }
            "strategy-linear-const" => {
                plain(&mut c);
                c.strategy.kind = StrategyKind::LinearConst;
            }
            "scale-only-adaptive" => plain(&mut c),
            _ if name.starts_with("noise-") => {
                let sigma: f64 = name["noise-".len()..]
                    .parse()
                    .map_err(|_| Error::config("preset", format!("unknown preset `{name}`")))?;
                plain(&mut c);
                no_intensity(&mut c);
                c.transform = Transform::NoiseOnly { sigma_noise: sigma };
            }
            "diffusion-gan" => {
                plain(&mut c);
                c.strategy.pi0 = Pi0Kind::Priority;
                c.transform = Transform::Diffusion { sigma_noise: 0.05 };
            }
            _ => return Err(Error::config("preset", format!("unknown preset `{name}`"))),
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.transform.validate()?;
        self.loss.validate()?;
        self.optim_g.validate("optim_g")?;
        self.optim_d.validate("optim_d")?;
        let m = &self.model;
        if m.latent_dim == 0 || m.hidden == 0 || m.layers == 0 {
            return Err(Error::config("model", "latent_dim, hidden and layers must be >= 1"));
        }
        if !m.slope.is_finite() {
            return Err(Error::config("model.slope", "must be finite"));
        }
        if let Conditioning::Sinusoidal { freqs: 0 } = m.conditioning {
            return Err(Error::config("model.conditioning.freqs", "must be >= 1"));
        }
        let s = &self.strategy;
        if s.t_max == 0 || s.t_min > s.t_max {
            return Err(Error::config("strategy.t_max", "need 1 <= t_max and t_min <= t_max"));
        }
        if !(0.0..=1.0).contains(&s.mix_weight) {
            return Err(Error::config("strategy.mix_weight", "must lie in [0, 1]"));
        }
        if s.update_every == 0 {
            return Err(Error::config("strategy.update_every", "must be >= 1"));
        }
        if !s.d_target.is_finite() {
            return Err(Error::config("strategy.d_target", "must be finite"));
        }
        ScalingSchedule::new(self.schedule.beta0, self.schedule.beta_t, s.t_max)?;
        if !(self.data_scale.is_finite() && self.data_scale > 0.0) {
            return Err(Error::config("data_scale", "must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be >= 2"));
        }
        if self.reg_scales == Some(0) {
            return Err(Error::config("reg_scales", "must be >= 1 when set"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be >= 1"));
        }
        if self.eval.every == 0 || self.eval.samples == 0 {
            return Err(Error::config("eval", "every and samples must be >= 1"));
        }
        if !(self.eval.threshold_mult.is_finite() && self.eval.threshold_mult > 0.0) {
            return Err(Error::config("eval.threshold_mult", "must be positive"));
        }
        Ok(())
    }

    /// Applies `key=value` overrides. Keys are dotted paths (`loss.lambda`)
    /// or a leaf name that is unique in the config tree (`lambda`). Values
    /// are parsed as JSON, falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::config(ov, "override must look like key=value"))?;
            let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let path = resolve_key(&tree, key.trim())?;
            set_path(&mut tree, &path, value);
        }
        let c: RunConfig =
            serde_json::from_value(tree).map_err(|e| Error::config("--set", e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

fn leaf_paths(v: &Value, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    if let Value::Object(map) = v {
        for (k, child) in map {
            prefix.push(k.clone());
            out.push(prefix.clone());
            leaf_paths(child, prefix, out);
            prefix.pop();
        }
    }
}

fn resolve_key(tree: &Value, key: &str) -> Result<Vec<String>> {
    let parts: Vec<String> = key.split('.').map(str::to_string).collect();
    let mut all = Vec::new();
    leaf_paths(tree, &mut Vec::new(), &mut all);
    if all.contains(&parts) {
        return Ok(parts);
    }
    let hits: Vec<&Vec<String>> = all.iter().filter(|p| p.ends_with(&parts)).collect();
    match hits.len() {
        1 => Ok(hits[0].clone()),
        0 => {
            // optional fields serialize as null; allow setting a direct child
            if parts.len() == 1 {
                return Err(Error::config(key, "no such config field"));
            }
            Ok(parts)
        }
        _ => Err(Error::config(
            key,
            format!(
                "ambiguous; candidates: {}",
                hits.iter().map(|p| p.join(".")).collect::<Vec<_>>().join(", ")
            ),
        )),
    }
}

fn set_path(tree: &mut Value, path: &[String], value: Value) {
    let mut node = tree;
    for part in &path[..path.len() - 1] {
        if !node.get(part).is_some_and(Value::is_object) {
            node[part.as_str()] = Value::Object(Default::default());
        }
        node = node.get_mut(part).expect("just inserted");
    }
    node[path[path.len() - 1].as_str()] = value;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for p in PRESETS {
            let c = RunConfig::preset(p).unwrap();
            assert_eq!(c.name, *p);
        }
        assert!(RunConfig::preset("nope").is_err());
    }

    #[test]
    fn toy_preset_matches_paper_constants() {
        let c = RunConfig::preset("toy-scalegan").unwrap();
        assert_eq!((c.strategy.t_min, c.strategy.t_max, c.iterations), (0, 500, 40_000));
        assert_eq!(c.strategy.d_target, 0.1);
        assert_eq!((c.schedule.beta0, c.schedule.beta_t), (0.0001, 0.02));
        assert_eq!(c.loss.lambda, 0.1);
        assert_eq!(c.strategy.kind, StrategyKind::Adaptive);
    }

    #[test]
    fn overrides_by_path_and_leaf() {
        let c = RunConfig::preset("toy-scalegan").unwrap();
        let d = c.with_overrides(&["lambda=0.5", "strategy.t_max=300", "reg_scales=4"]).unwrap();
        assert_eq!(d.loss.lambda, 0.5);
        assert_eq!(d.strategy.t_max, 300);
        assert_eq!(d.reg_scales, Some(4));
        let t = c.with_overrides(&["transform={\"kind\":\"noise_only\",\"sigma_noise\":0.2}"]).unwrap();
        assert_eq!(t.transform, Transform::NoiseOnly { sigma_noise: 0.2 });
    }

    #[test]
    fn bad_overrides_name_the_field() {
        let c = RunConfig::default();
        let e = c.with_overrides(&["bogus=1"]).unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
        let e = c.with_overrides(&["lambda=-1"]).unwrap_err().to_string();
        assert!(e.contains("lambda"), "{e}");
        let e = c.with_overrides(&["beta0=0.5", "beta_t=1.5"]).unwrap_err().to_string();
        assert!(e.contains("radicand") || e.contains("beta"), "{e}");
        assert!(c.with_overrides(&["t_max"]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::preset("diffusion-gan").unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }
}
