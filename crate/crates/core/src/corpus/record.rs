use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const RECORD_MAGIC: &[u8; 8] = b"MIAREC01";
const HEADER_LEN: usize = 16;

/// One subject's continuous single-channel signal.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub dataset_id: String,
    pub record_id: String,
    pub sampling_rate: u32,
    pub samples: Vec<f64>,
}

impl RawRecord {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_rate as f64
    }
}

/// Writes `MIAREC01 | rate u32 | count u32 | count × f32`, all little-endian.
pub fn write_record(record: &RawRecord, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * record.samples.len());
    buf.extend_from_slice(RECORD_MAGIC);
    buf.extend_from_slice(&record.sampling_rate.to_le_bytes());
    buf.extend_from_slice(&(record.samples.len() as u32).to_le_bytes());
    for &s in &record.samples {
        buf.extend_from_slice(&(s as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a record file; dataset id comes from the parent directory name and
/// record id from the file stem.
pub fn read_record(path: &Path) -> Result<RawRecord> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != RECORD_MAGIC {
        return Err(Error::format(path, "missing MIAREC01 record header"));
    }
    let rate = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if rate == 0 {
        return Err(Error::format(path, "sampling rate must be positive"));
    }
    if bytes.len() != HEADER_LEN + 4 * count {
        return Err(Error::format(
            path,
            format!(
                "header declares {count} samples but payload holds {} bytes",
                bytes.len() - HEADER_LEN
            ),
        ));
    }
    if count == 0 {
        return Err(Error::format(path, "record has no samples"));
    }
    let samples = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let dataset_id = path
        .parent()
        .and_then(Path::file_name)
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(path, "cannot derive dataset id from parent directory"))?
        .to_string();
    let record_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(path, "cannot derive record id from file name"))?
        .to_string();
    Ok(RawRecord {
        dataset_id,
        record_id,
        sampling_rate: rate,
        samples,
    })
}

/// All `<dir>/<dataset>/<record>.rec` files, in sorted path order.
pub fn read_records_dir(dir: &Path) -> Result<Vec<RawRecord>> {
    let mut paths: Vec<PathBuf> = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let sub = entry.path();
        if !sub.is_dir() {
            continue;
        }
        for file in fs::read_dir(&sub).map_err(|e| Error::io(&sub, e))? {
            let file = file.map_err(|e| Error::io(&sub, e))?.path();
            if file.extension().is_some_and(|e| e == "rec") {
                paths.push(file);
            }
        }
    }
    paths.sort();
    paths.iter().map(|p| read_record(p)).collect()
}
