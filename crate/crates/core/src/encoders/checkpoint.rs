//! Model checkpoints and the training-subject registry file.
//!
//! Checkpoint layout (little-endian):
//! `MIAMDL01`, u32 config length, config JSON, u32 subject count, then per
//! subject a u16-length "dataset/key" string, u32 parameter count, then per
//! parameter a u16-length name, u8 rank, u32 dims, and f64 values.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::corpus::SubjectId;
use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::config::EncoderConfig;
use super::model::EncoderModel;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MIAMDL01";

fn put_str16(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint(model: &EncoderModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let config = serde_json::to_vec(model.config())?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.train_subjects().len() as u32).to_le_bytes());
    for s in model.train_subjects() {
        put_str16(&mut out, &s.to_string());
    }
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, value) in params.names().iter().zip(params.values()) {
        put_str16(&mut out, name);
        out.push(value.rank() as u8);
        for &d in value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "string is not UTF-8"))
    }
}

/// Parses checkpoint bytes; `path` is used only in error messages.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<EncoderModel> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a model checkpoint (bad magic)"));
    }
    let n = r.u32()? as usize;
    let config: EncoderConfig = serde_json::from_slice(r.take(n)?)
        .map_err(|e| Error::format(path, format!("bad config: {e}")))?;
    let mut model = EncoderModel::init(&config).map_err(|e| Error::format(path, e.to_string()))?;
    let count = r.u32()?;
    let mut subjects = BTreeSet::new();
    for _ in 0..count {
        let s = r.str16()?;
        subjects.insert(s.parse::<SubjectId>().map_err(|e| Error::format(path, e.to_string()))?);
    }
    let count = r.u32()? as usize;
    if count != model.params().len() {
        return Err(Error::format(
            path,
            format!("{count} parameter tensors, {} family expects {}", config.family, model.params().len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for slot in 0..count {
        let name = r.str16()?;
        let expected = &model.params().names()[slot];
        if &name != expected {
            return Err(Error::format(path, format!("parameter {slot} is {name:?}, expected {expected:?}")));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        if shape != model.params().value(slot).shape() {
            return Err(Error::format(path, format!("parameter {name} has shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        values.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    model.params_mut().load_values(values)?;
    model.set_train_subjects(subjects);
    Ok(model)
}

pub fn save_checkpoint(model: &EncoderModel, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Sorted JSON array of "dataset/key" strings.
pub fn encode_train_ids(subjects: &BTreeSet<SubjectId>) -> Result<String> {
    let mut ids: Vec<String> = subjects.iter().map(ToString::to_string).collect();
    ids.sort();
    Ok(serde_json::to_string_pretty(&ids)? + "\n")
}

pub fn write_train_ids(path: &Path, subjects: &BTreeSet<SubjectId>) -> Result<()> {
    fs::write(path, encode_train_ids(subjects)?).map_err(|e| Error::io(path, e))
}

pub fn read_train_ids(path: &Path) -> Result<BTreeSet<SubjectId>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ids: Vec<String> =
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("expected an array of strings: {e}")))?;
    ids.iter()
        .map(|s| s.parse::<SubjectId>().map_err(|e| Error::format(path, e.to_string())))
        .collect()
}
