//! Binary checkpoints for logit tables.
//!
//! Layout: the 6-byte magic `SWIRL1`, one role byte (0 = fwm, 1 = idm),
//! three little-endian `u32` dims `(d1, d2, outcomes)`, then the logits in
//! row-major order as little-endian `f64`. A sidecar text file of
//! `key=value` lines records provenance and step counters.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, SwirlError};
use crate::policy::{ConditionalCategorical, Role};

pub const MAGIC: &[u8; 6] = b"SWIRL1";
pub const SIDECAR_VERSION: &str = "swirl-checkpoint-v1";

pub fn encode(model: &ConditionalCategorical) -> Vec<u8> {
    let (d1, d2) = model.context_dims();
    let mut out = Vec::with_capacity(19 + 8 * model.logits().len());
    out.extend_from_slice(MAGIC);
    out.push(match model.role() {
        Role::Fwm => 0,
        Role::Idm => 1,
    });
    for d in [d1, d2, model.outcome_dim()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for l in model.logits() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ConditionalCategorical> {
    let corrupt = |m: &str| SwirlError::Format(format!("corrupt checkpoint: {m}"));
    if bytes.len() < 19 || &bytes[..6] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let role = match bytes[6] {
        0 => Role::Fwm,
        1 => Role::Idm,
        b => return Err(corrupt(&format!("unknown role byte {b}"))),
    };
    let dim = |i: usize| u32::from_le_bytes(bytes[7 + 4 * i..11 + 4 * i].try_into().unwrap()) as usize;
    let (d1, d2, k) = (dim(0), dim(1), dim(2));
    let count = d1
        .checked_mul(d2)
        .and_then(|c| c.checked_mul(k))
        .ok_or_else(|| corrupt("dims overflow"))?;
    let body = &bytes[19..];
    if body.len() != count * 8 {
        return Err(corrupt(&format!(
            "dims {d1}x{d2}x{k} need {} bytes of logits, found {}",
            count * 8,
            body.len()
        )));
    }
    let logits = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ConditionalCategorical::from_logits(role, (d1, d2), k, logits)
}

pub fn write_model<W: Write>(model: &ConditionalCategorical, mut w: W) -> Result<()> {
    w.write_all(&encode(model))?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<ConditionalCategorical> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

/// Writes the checkpoint and its sidecar (`<path>.meta`).
pub fn save(path: &Path, model: &ConditionalCategorical, meta: &BTreeMap<String, String>) -> Result<()> {
    fs::write(path, encode(model))?;
    let mut text = format!("format={SIDECAR_VERSION}\nrole={}\n", model.role().as_str());
    for (k, v) in meta {
        text.push_str(&format!("{k}={v}\n"));
    }
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ConditionalCategorical> {
    decode(&fs::read(path)?)
}

pub fn load_sidecar(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(sidecar_path(path))?;
    let mut out = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| SwirlError::Format(format!("sidecar line `{line}`")))?;
        out.insert(k.to_string(), v.to_string());
    }
    match out.get("format").map(String::as_str) {
        Some(SIDECAR_VERSION) => Ok(out),
        other => Err(SwirlError::Format(format!(
            "sidecar version {other:?} does not match {SIDECAR_VERSION}"
        ))),
    }
}
