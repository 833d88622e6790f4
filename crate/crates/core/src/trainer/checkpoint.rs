//! Binary checkpoint container.
//!
//! Layout (little endian): magic, `u32` version, `u32` length + UTF-8 `key=value` text,
//! `u32` tensor count, then per tensor `u32` name length, name, `u8` dtype, `u32` rank,
//! `u64` dims and raw data. A trailing FNV-1a 64 checksum covers every preceding byte.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use attriforge_tensor::{DType, Tensor};

use super::{TrainState, UpdateCounters};
use crate::config::ResolvedConfig;
use crate::error::{Error, Result};
use crate::nn::{load_state_dict, state_dict};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ATFGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const GEN: &str = "generator.";
const DISC: &str = "discriminator.";
const GOPT: &str = "adam_g.";
const DOPT: &str = "adam_d.";

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Stable identifier of a checkpoint file's contents.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

/// Decoded container: metadata text and named tensors.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub version: u32,
    pub text: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dtype_code(t.dtype()));
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            t.write_le(&mut out).expect("writing to memory");
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    /// Errors carry a bare reason; callers attach the path.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
            return Err("file is too short".into());
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err("not a checkpoint file".into());
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let mut r = Cursor::new(&body[8..]);
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("format version {version}, this build reads {CHECKPOINT_VERSION}"));
        }
        if fnv1a64(body) != stored {
            return Err("checksum mismatch (truncated or corrupt)".into());
        }
        let text_len = read_u32(&mut r)? as usize;
        let text = String::from_utf8(read_bytes(&mut r, text_len)?)
            .map_err(|_| "metadata is not UTF-8".to_string())?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(read_bytes(&mut r, len)?).map_err(|_| "tensor name is not UTF-8".to_string())?;
            let mut code = [0u8; 1];
            r.read_exact(&mut code).map_err(|_| "unexpected end of file".to_string())?;
            let dtype = match code[0] {
                0 => DType::F32,
                1 => DType::F64,
                c => return Err(format!("tensor `{name}` has unknown dtype code {c}")),
            };
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| "unexpected end of file".to_string())?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let t = Tensor::read_le(&mut r, &shape, dtype).map_err(|_| format!("tensor `{name}` is truncated"))?;
            tensors.push((name, t));
        }
        if r.position() as usize != body.len() - 8 {
            return Err("trailing bytes after the last tensor".into());
        }
        Ok(Checkpoint { version, text, tensors })
    }

    fn group(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    }
}

fn read_u32(r: &mut impl Read) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| "unexpected end of file".to_string())?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize) -> std::result::Result<Vec<u8>, String> {
    let mut v = vec![0u8; n];
    r.read_exact(&mut v).map_err(|_| "unexpected end of file".to_string())?;
    Ok(v)
}

fn prefixed(prefix: &str, v: Vec<(String, Tensor)>) -> impl Iterator<Item = (String, Tensor)> + '_ {
    v.into_iter().map(move |(n, t)| (format!("{prefix}{n}"), t))
}

impl TrainState {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let resolved = ResolvedConfig { training: self.config.clone(), augmentation: self.augmentation.clone() };
        let mut text = resolved.to_kv();
        for (k, v) in [
            ("state.attribute", self.attribute.clone()),
            ("state.step", self.step.to_string()),
            ("state.critic_updates", self.counters.critic_updates.to_string()),
            ("state.generator_updates", self.counters.generator_updates.to_string()),
            ("state.adam_g_t", self.g_opt.t.to_string()),
            ("state.adam_d_t", self.d_opt.t.to_string()),
        ] {
            text.push_str(&format!("{k}={v}\n"));
        }
        let tensors = prefixed(GEN, state_dict(&self.generator))
            .chain(prefixed(DISC, state_dict(&self.discriminator)))
            .chain(prefixed(GOPT, self.g_opt.state()))
            .chain(prefixed(DOPT, self.d_opt.state()))
            .collect();
        Checkpoint { version: CHECKPOINT_VERSION, text, tensors }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> std::result::Result<Self, String> {
        let mut config_pairs = Vec::new();
        let mut meta = BTreeMap::new();
        for line in ck.text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| format!("malformed metadata line `{line}`"))?;
            match k.strip_prefix("state.") {
                Some(k) => {
                    meta.insert(k.to_string(), v.to_string());
                }
                None => config_pairs.push((k.to_string(), v.to_string())),
            }
        }
        let resolved = ResolvedConfig::from_pairs(&config_pairs).map_err(|e| e.to_string())?;
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| format!("metadata lacks `state.{k}`"));
        let num = |k: &str| get(k)?.parse::<u64>().map_err(|_| format!("`state.{k}` is not an integer"));
        let mut state = TrainState::new(resolved.training, resolved.augmentation, &get("attribute")?)
            .map_err(|e| e.to_string())?;
        load_state_dict(&state.generator, &ck.group(GEN))?;
        load_state_dict(&state.discriminator, &ck.group(DISC))?;
        state.g_opt.load_state(&ck.group(GOPT), num("adam_g_t")?).map_err(|e| e.to_string())?;
        state.d_opt.load_state(&ck.group(DOPT), num("adam_d_t")?).map_err(|e| e.to_string())?;
        state.step = num("step")?;
        state.counters = UpdateCounters {
            critic_updates: num("critic_updates")?,
            generator_updates: num("generator_updates")?,
        };
        Ok(state)
    }
}

/// Written to a sibling temporary file first, then renamed into place.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = state.to_checkpoint().to_bytes();
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint_bytes(&bytes).map_err(|reason| Error::Checkpoint { path: path.to_path_buf(), reason })
}

pub fn load_checkpoint_bytes(bytes: &[u8]) -> std::result::Result<TrainState, String> {
    TrainState::from_checkpoint(&Checkpoint::from_bytes(bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AugmentationConfig;
    use crate::nn::Module;
    use crate::trainer::TrainingConfig;

    fn state() -> TrainState {
        let cfg = TrainingConfig { network: "tiny".into(), seed: 5, ..TrainingConfig::default() };
        TrainState::new(cfg, AugmentationConfig::for_size(64), "glossy").unwrap()
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let mut s = state();
        s.step = 42;
        s.counters.critic_updates = 294;
        let bytes = s.to_checkpoint().to_bytes();
        let back = load_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back.step, 42);
        assert_eq!(back.counters.critic_updates, 294);
        assert_eq!(back.config, s.config);
        assert_eq!(back.attribute, "glossy");
        for ((n1, a), (n2, b)) in state_dict(&s.generator).iter().zip(state_dict(&back.generator).iter()) {
            assert_eq!(n1, n2);
            assert!(a.bit_eq(b), "{n1}");
        }
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = state().to_checkpoint().to_bytes();
        let err = |b: &[u8]| load_checkpoint_bytes(b).err().expect("load should fail");
        err(&bytes[..bytes.len() / 2]);
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        assert!(err(&flipped).contains("checksum"));
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(err(&wrong_version).contains("version"));
        err(b"hello");
    }

    #[test]
    fn tiny_checkpoint_is_small() {
        let s = state();
        let bytes = s.to_checkpoint().to_bytes();
        assert!(bytes.len() < 20 << 20, "{} bytes", bytes.len());
        assert!(s.generator.num_params() > 0);
    }
}
