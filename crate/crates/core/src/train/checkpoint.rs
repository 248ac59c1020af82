//! `ESSF` checkpoint container.
//!
//! Layout (little-endian): magic, version `u16`, then two length-prefixed
//! (`u32`) text blocks holding the canonical model config and the training
//! counters, then a `u32` tensor count followed by `(u32 name length, name,
//! TNSR tensor)` records. Tensor names are `param/<name>`, `adam.m/<name>`
//! and `adam.v/<name>`.

use std::fs;
use std::path::Path;

use super::{Adam, TrainState};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::serialize::Cursor;
use crate::tensor::{Element, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ESSF";
const VERSION: u16 = 1;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

fn put_block(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn take_block<'a>(cur: &mut Cursor<'a>) -> Result<&'a [u8]> {
    let n = cur.u32()? as usize;
    cur.take(n)
}

fn take_text(cur: &mut Cursor<'_>, what: &str) -> Result<String> {
    let b = take_block(cur)?;
    String::from_utf8(b.to_vec()).map_err(|_| corrupt(format!("{what} block is not UTF-8")))
}

pub fn write_checkpoint<T: Element>(state: &TrainState<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_block(&mut out, state.model.cfg.to_kv().as_bytes());
    let counters = format!("step={}\nadam_t={}\n", state.step, state.adam.t);
    put_block(&mut out, counters.as_bytes());
    let params = state.model.params.params();
    out.extend_from_slice(&(3 * params.len() as u32).to_le_bytes());
    let groups: [(&str, Vec<&Tensor<T>>); 3] = [
        ("param", params.iter().map(|p| &p.value).collect()),
        ("adam.m", state.adam.m.iter().collect()),
        ("adam.v", state.adam.v.iter().collect()),
    ];
    for (prefix, tensors) in &groups {
        for (p, t) in params.iter().zip(tensors) {
            put_block(&mut out, format!("{prefix}/{}", p.name).as_bytes());
            t.write_bytes(&mut out);
        }
    }
    out
}

/// Parses a checkpoint; when `expected` is given the stored config must equal it.
pub fn read_checkpoint<T: Element>(
    bytes: &[u8],
    expected: Option<&ModelConfig>,
) -> Result<TrainState<T>> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(corrupt("bad checkpoint magic"));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let cfg_text = take_text(&mut cur, "config")?;
    let cfg = ModelConfig::from_kv(&cfg_text).map_err(|e| corrupt(format!("config block: {e}")))?;
    if let Some(want) = expected {
        if *want != cfg {
            return Err(Error::ConfigMismatch(describe_mismatch(want, &cfg)));
        }
    }
    let counters = take_text(&mut cur, "counters")?;
    let (mut step, mut adam_t) = (None, None);
    for line in counters.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| corrupt(format!("counter line {line:?}")))?;
        let v: u64 = v
            .parse()
            .map_err(|_| corrupt(format!("counter line {line:?}")))?;
        match k {
            "step" => step = Some(v as usize),
            "adam_t" => adam_t = Some(v),
            other => return Err(corrupt(format!("unknown counter {other:?}"))),
        }
    }
    let step = step.ok_or_else(|| corrupt("missing step counter"))?;
    let adam_t = adam_t.ok_or_else(|| corrupt("missing adam_t counter"))?;

    let mut model = Model::<T>::build(&cfg, 0).map_err(|e| corrupt(e.to_string()))?;
    let mut adam = Adam::new(&model.params);
    adam.t = adam_t;
    let count = cur.u32()? as usize;
    let n = model.params.len();
    if count != 3 * n {
        return Err(corrupt(format!(
            "checkpoint holds {count} tensors, config requires {}",
            3 * n
        )));
    }
    let names: Vec<String> = model
        .params
        .params()
        .iter()
        .map(|p| p.name.clone())
        .collect();
    for _ in 0..count {
        let name = String::from_utf8(take_block(&mut cur)?.to_vec())
            .map_err(|_| corrupt("tensor name is not UTF-8"))?;
        let (t, used) = Tensor::<T>::read_bytes(cur.remaining())?;
        cur.take(used)?;
        let (prefix, pname) = name
            .split_once('/')
            .ok_or_else(|| corrupt(format!("tensor name {name:?}")))?;
        let i = names
            .iter()
            .position(|s| s == pname)
            .ok_or_else(|| corrupt(format!("unexpected tensor {name:?}")))?;
        let slot = match prefix {
            "param" => &mut model.params.params_mut()[i].value,
            "adam.m" => &mut adam.m[i],
            "adam.v" => &mut adam.v[i],
            _ => return Err(corrupt(format!("unexpected tensor {name:?}"))),
        };
        if slot.shape() != t.shape() {
            return Err(corrupt(format!(
                "tensor {name:?} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    if !cur.is_done() {
        return Err(corrupt("trailing bytes after checkpoint"));
    }
    Ok(TrainState {
        model,
        adam,
        step,
        history: Vec::new(),
    })
}

fn describe_mismatch(want: &ModelConfig, got: &ModelConfig) -> String {
    let a = want.to_kv();
    let b = got.to_kv();
    let diffs: Vec<String> = a
        .lines()
        .zip(b.lines())
        .filter(|(x, y)| x != y)
        .map(|(x, y)| format!("expected {x}, checkpoint has {y}"))
        .collect();
    diffs.join("; ")
}

pub fn save_checkpoint<T: Element>(path: impl AsRef<Path>, state: &TrainState<T>) -> Result<()> {
    fs::write(path, write_checkpoint(state))?;
    Ok(())
}

pub fn load_checkpoint<T: Element>(
    path: impl AsRef<Path>,
    expected: Option<&ModelConfig>,
) -> Result<TrainState<T>> {
    read_checkpoint(&fs::read(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_schedule;

    fn state() -> TrainState<f32> {
        let cfg = ModelConfig {
            channels: 4,
            schedule: parse_schedule("2,1/2,2").unwrap(),
            ..ModelConfig::desk(3, 2)
        };
        let mut s = TrainState::new(Model::build(&cfg, 11).unwrap());
        s.step = 5;
        s.adam.t = 5;
        s.adam.m[0].data_mut()[0] = 0.25;
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let s = state();
        let back: TrainState<f32> = read_checkpoint(&write_checkpoint(&s), None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn config_mismatch_is_reported() {
        let s = state();
        let mut other = s.model.cfg.clone();
        other.channels = 8;
        let err = read_checkpoint::<f32>(&write_checkpoint(&s), Some(&other)).unwrap_err();
        assert!(
            matches!(err, Error::ConfigMismatch(ref m) if m.contains("channels")),
            "{err}"
        );
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = write_checkpoint(&state());
        let mut bad = bytes.clone();
        let pos = bad.windows(4).position(|w| w == b"TNSR").unwrap();
        bad[pos + 1] = b'X';
        assert!(matches!(
            read_checkpoint::<f32>(&bad, None),
            Err(Error::Corrupt(_))
        ));
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                read_checkpoint::<f32>(&bytes[..cut], None),
                Err(Error::Corrupt(_))
            ));
        }
        assert!(matches!(
            read_checkpoint::<f64>(&bytes, None),
            Err(Error::Corrupt(_))
        ));
    }
}
