//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `SGANCKPT` |
//! | 4     | format version (`u32`) |
//! | 8     | header length `h` (`u64`) |
//! | h     | UTF-8 JSON [`Header`] |
//! | rest  | `f64` blocks in the order listed in `header.blocks` |
//!
//! Blocks are always `gen_params`, `disc_params`, `adam_g_m`, `adam_g_v`,
//! `adam_d_m`, `adam_d_v`. Parameters are flattened layer by layer as
//! `w0, b0, w1, b1, ...` with weights stored row-major `(fan_in, fan_out)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::models::{Conditioning, MlpSpec};
use crate::strategy::StrategyState;
use crate::trainer::{StepRecord, TrainState};

pub const MAGIC: &[u8; 8] = b"SGANCKPT";
pub const VERSION: u32 = 1;
const BLOCK_NAMES: [&str; 6] = ["gen_params", "disc_params", "adam_g_m", "adam_g_v", "adam_d_m", "adam_d_v"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub generator: MlpSpec,
    pub discriminator: MlpSpec,
    pub conditioning: Conditioning,
}

impl Architecture {
    pub fn of(state: &TrainState) -> Self {
        Architecture {
            generator: *state.gen.net.spec(),
            discriminator: *state.disc.net.spec(),
            conditioning: state.disc.conditioning,
        }
    }

    /// First differing field, as `(name, expected, found)`.
    fn diff(&self, found: &Architecture) -> Option<(String, String, String)> {
        let specs = [
            ("generator", &self.generator, &found.generator),
            ("discriminator", &self.discriminator, &found.discriminator),
        ];
        for (net, a, b) in specs {
            let fields = [
                ("in_dim", a.in_dim.to_string(), b.in_dim.to_string()),
                ("hidden", a.hidden.to_string(), b.hidden.to_string()),
                ("out_dim", a.out_dim.to_string(), b.out_dim.to_string()),
                ("layers", a.layers.to_string(), b.layers.to_string()),
                ("slope", a.slope.to_string(), b.slope.to_string()),
            ];
            for (name, x, y) in fields {
                if x != y {
                    return Some((format!("{net}.{name}"), x, y));
                }
            }
        }
        if self.conditioning != found.conditioning {
            return Some((
                "discriminator.conditioning".into(),
                format!("{:?}", self.conditioning),
                format!("{:?}", found.conditioning),
            ));
        }
        None
    }
}

/// RNG positions; `u128` word positions are stored as decimal strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngPositions {
    pub sample: String,
    pub intensity: String,
    pub noise: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub architecture: Architecture,
    pub seed: u64,
    pub iteration: u64,
    pub config: RunConfig,
    pub rng: RngPositions,
    pub strategy: StrategyState,
    pub adam_steps: [u64; 2],
    pub last_step: Option<StepRecord>,
    pub blocks: Vec<Block>,
}

pub fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let (gm, gv) = state.opt_g.flat_moments();
    let (dm, dv) = state.opt_d.flat_moments();
    let blocks = [state.gen.net.flat_params(), state.disc.net.flat_params(), gm, gv, dm, dv];
    let header = Header {
        architecture: Architecture::of(state),
        seed: state.config.seed,
        iteration: state.iteration,
        config: state.config.clone(),
        rng: RngPositions {
            sample: state.rng_sample.get_word_pos().to_string(),
            intensity: state.rng_t.get_word_pos().to_string(),
            noise: state.rng_noise.get_word_pos().to_string(),
        },
        strategy: state.strategy,
        adam_steps: [state.opt_g.step, state.opt_d.step],
        last_step: state.last,
        blocks: BLOCK_NAMES
            .iter()
            .zip(&blocks)
            .map(|(n, b)| Block {
                name: n.to_string(),
                len: b.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let total: usize = blocks.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 8 * total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for b in &blocks {
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save(path: &Path, state: &TrainState) -> Result<()> {
    let bytes = encode(state)?;
    let tmp = path.with_extension("bin.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Splits a checkpoint into its header and float blocks.
pub fn decode(bytes: &[u8]) -> Result<(Header, Vec<Vec<f64>>)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("missing SGANCKPT magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let body = &bytes[20..];
    if hlen > body.len() as u64 {
        return Err(Error::Checkpoint(format!("header length {hlen} exceeds file size")));
    }
    let (json, mut rest) = body.split_at(hlen as usize);
    let header: Header =
        serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("header JSON: {e}")))?;
    let names: Vec<&str> = header.blocks.iter().map(|b| b.name.as_str()).collect();
    if names != BLOCK_NAMES {
        return Err(Error::Checkpoint(format!("unexpected block list {names:?}")));
    }
    let expected: usize = header.blocks.iter().map(|b| b.len * 8).sum();
    if rest.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload has {} bytes, header describes {expected}",
            rest.len()
        )));
    }
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for b in &header.blocks {
        let (chunk, tail) = rest.split_at(b.len * 8);
        blocks.push(
            chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        );
        rest = tail;
    }
    Ok((header, blocks))
}

fn parse_pos(s: &str, which: &str) -> Result<u128> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("bad {which} RNG position `{s}`")))
}

/// Rebuilds a training state whose architecture comes from `config`,
/// filled from the checkpoint `bytes`.
pub fn restore(bytes: &[u8], config: RunConfig) -> Result<TrainState> {
    let (header, blocks) = decode(bytes)?;
    let mut state = TrainState::new(config)?;
    if let Some((field, expected, found)) = Architecture::of(&state).diff(&header.architecture) {
        return Err(Error::ArchitectureMismatch { field, expected, found });
    }
    if header.seed != state.config.seed {
        return Err(Error::ArchitectureMismatch {
            field: "seed".into(),
            expected: state.config.seed.to_string(),
            found: header.seed.to_string(),
        });
    }
    state.gen.net.load_flat(&blocks[0])?;
    state.disc.net.load_flat(&blocks[1])?;
    state.opt_g.load_flat_moments(&blocks[2], &blocks[3])?;
    state.opt_d.load_flat_moments(&blocks[4], &blocks[5])?;
    state.opt_g.step = header.adam_steps[0];
    state.opt_d.step = header.adam_steps[1];
    state.iteration = header.iteration;
    state.last = header.last_step;
    let mut strategy = header.strategy;
    // budget-dependent fields follow the (possibly extended) config
    strategy.total_iters = state.strategy.total_iters;
    state.strategy = strategy;
    state.rng_sample.set_word_pos(parse_pos(&header.rng.sample, "sample")?);
    state.rng_t.set_word_pos(parse_pos(&header.rng.intensity, "intensity")?);
    state.rng_noise.set_word_pos(parse_pos(&header.rng.noise, "noise")?);
    if state.config.schedule.recompute_with_current_t {
        let c = state.config.schedule;
        state.schedule = crate::augmentation::ScalingSchedule::new(c.beta0, c.beta_t, state.strategy.current_t.max(1))?;
    }
    Ok(state)
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads with the checkpoint's own config.
pub fn load(path: &Path) -> Result<TrainState> {
    load_with_overrides(path, &[] as &[String])
}

/// Loads with the checkpoint's config after applying `key=value` overrides.
pub fn load_with_overrides<S: AsRef<str>>(path: &Path, overrides: &[S]) -> Result<TrainState> {
    let bytes = read(path)?;
    let (header, _) = decode(&bytes)?;
    let config = header.config.with_overrides(overrides)?;
    restore(&bytes, config)
}
