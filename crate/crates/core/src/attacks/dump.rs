//! Per-window score dumps: CSV with header
//! `dataset_id,subject_key,window_index,score`.
//!
//! Subject-level scores (embedding attack) leave `window_index` empty.

use std::fs;
use std::path::Path;

use crate::corpus::SubjectId;
use crate::error::{Error, Result};

pub const DUMP_HEADER: &str = "dataset_id,subject_key,window_index,score";

#[derive(Clone, Debug, PartialEq)]
pub struct WindowScore {
    pub subject: SubjectId,
    pub window_index: Option<usize>,
    pub value: f64,
}

pub fn encode_score_dump(rows: &[WindowScore]) -> String {
    let mut out = String::from(DUMP_HEADER);
    out.push('\n');
    for r in rows {
        let idx = r.window_index.map(|i| i.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{:?}\n",
            r.subject.dataset_id, r.subject.subject_key, idx, r.value
        ));
    }
    out
}

pub fn write_score_dump(path: &Path, rows: &[WindowScore]) -> Result<()> {
    fs::write(path, encode_score_dump(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_score_dump(path: &Path) -> Result<Vec<WindowScore>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(DUMP_HEADER) {
        return Err(Error::format(path, format!("expected header {DUMP_HEADER:?}")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::format(path, format!("line {}: {what}", i + 2));
            let fields: Vec<&str> = line.split(',').collect();
            let [ds, key, idx, score] = fields[..] else {
                return Err(bad("expected 4 fields"));
            };
            Ok(WindowScore {
                subject: SubjectId::new(ds, key).map_err(|e| bad(&e.to_string()))?,
                window_index: if idx.is_empty() {
                    None
                } else {
                    Some(idx.parse().map_err(|_| bad("bad window index"))?)
                },
                value: score.parse().map_err(|_| bad("bad score"))?,
            })
        })
        .collect()
}
