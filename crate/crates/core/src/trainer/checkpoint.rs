//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every tensor as little-endian `f32` in header order. The
//! header carries the configuration, step counter, optimizer step counts,
//! sampler and data-order state, and a table of tensor names and shapes.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::TrainState;
use crate::config::TrainConfig;
use crate::data::EpochCursor;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamMoments, Param, Parameterized};
use crate::sampler::{GaussianSampler, RngState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MIXVAECK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    step: u64,
    generator_opt_steps: u64,
    discriminator_opt_steps: u64,
    sampler: RngState,
    cursor: EpochCursor,
    tensors: Vec<TensorEntry>,
}

fn collect(prefix: &str, module: &dyn Parameterized<f32>, opt: &Adam<f32>, out: &mut Vec<(String, ArrayD<f32>)>) {
    module.visit(&mut |p: &Param<f32>| out.push((format!("{prefix}/{}", p.name), p.value.clone())));
    for (name, m) in opt.moments() {
        out.push((format!("{prefix}.adam_m/{name}"), m.m.clone()));
        out.push((format!("{prefix}.adam_v/{name}"), m.v.clone()));
    }
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    collect("generator", &state.generator, &state.generator_opt, &mut tensors);
    collect("discriminator", &state.discriminator, &state.discriminator_opt, &mut tensors);
    let header = Header {
        config: state.config.clone(),
        step: state.step,
        generator_opt_steps: state.generator_opt.steps(),
        discriminator_opt_steps: state.discriminator_opt.steps(),
        sampler: state.sampler.state(),
        cursor: state.cursor,
        tensors: tensors
            .iter()
            .map(|(name, a)| TensorEntry {
                name: name.clone(),
                shape: a.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, a) in &tensors {
            for v in a.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn restore(
    prefix: &str,
    module: &mut dyn Parameterized<f32>,
    tensors: &mut HashMap<String, ArrayD<f32>>,
    opt_steps: u64,
    opt: &mut Adam<f32>,
) -> Result<()> {
    let mut problems = Vec::new();
    let mut moments = BTreeMap::new();
    module.visit_mut(&mut |p: &mut Param<f32>| {
        let key = format!("{prefix}/{}", p.name);
        match tensors.remove(&key) {
            Some(a) if a.shape() == p.value.shape() => p.value = a,
            Some(a) => problems.push(format!("{key}: shape {:?}, expected {:?}", a.shape(), p.value.shape())),
            None => problems.push(format!("{key}: missing")),
        }
        let m = tensors.remove(&format!("{prefix}.adam_m/{}", p.name));
        let v = tensors.remove(&format!("{prefix}.adam_v/{}", p.name));
        match (m, v) {
            (Some(m), Some(v)) if m.shape() == p.value.shape() && v.shape() == p.value.shape() => {
                moments.insert(p.name.clone(), AdamMoments { m, v });
            }
            (None, None) if opt_steps == 0 => {}
            _ => problems.push(format!("{key}: optimizer moments missing or misshapen")),
        }
    });
    if !problems.is_empty() {
        return Err(bad(problems.join("; ")));
    }
    *opt = Adam::from_parts(*opt.config(), opt_steps, moments);
    Ok(())
}

/// Rebuilds a [`TrainState`] from a file written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("{} is not a checkpoint", path.display())));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json)?;

    let mut tensors = HashMap::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| bad(format!("truncated data at {}", entry.name)))?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let a = ArrayD::from_shape_vec(IxDyn(&entry.shape), values).expect("length matches shape");
        tensors.insert(entry.name.clone(), a);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes after tensor data"));
    }

    let mut state = TrainState::new(&header.config)?;
    restore(
        "generator",
        &mut state.generator,
        &mut tensors,
        header.generator_opt_steps,
        &mut state.generator_opt,
    )?;
    restore(
        "discriminator",
        &mut state.discriminator,
        &mut tensors,
        header.discriminator_opt_steps,
        &mut state.discriminator_opt,
    )?;
    if !tensors.is_empty() {
        let mut extra: Vec<_> = tensors.into_keys().collect();
        extra.sort();
        return Err(bad(format!("unknown tensors: {}", extra.join(", "))));
    }
    state.step = header.step;
    state.sampler = GaussianSampler::from_state(&header.sampler);
    state.cursor = header.cursor;
    Ok(state)
}
