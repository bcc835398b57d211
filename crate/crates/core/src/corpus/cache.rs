use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::preprocess::preprocess_record;
use super::record::RawRecord;
use super::{subject_of, SubjectId, WINDOW_LEN};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 8] = b"MIAWIN01";

/// Windows of one preprocessed record.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusRecord {
    pub dataset_id: String,
    pub record_id: String,
    pub subject: SubjectId,
    pub windows: Vec<Vec<f64>>,
}

/// Read access to windows grouped by subject.
pub trait WindowSource {
    /// Subjects in ascending order.
    fn subjects(&self) -> Vec<SubjectId>;
    /// Windows of `subject` in corpus order; empty for unknown subjects.
    fn windows_of(&self, subject: &SubjectId) -> Vec<&[f64]>;
}

/// Cached window tensors ordered by `(dataset_id, record_id, window index)`
/// with a subject registry.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowCorpus {
    records: Vec<CorpusRecord>,
    registry: BTreeMap<SubjectId, Vec<usize>>,
}

impl WindowCorpus {
    pub fn from_records(mut records: Vec<CorpusRecord>) -> Result<Self> {
        records.sort_by(|a, b| {
            (&a.dataset_id, &a.record_id).cmp(&(&b.dataset_id, &b.record_id))
        });
        for pair in records.windows(2) {
            if pair[0].dataset_id == pair[1].dataset_id && pair[0].record_id == pair[1].record_id {
                return Err(Error::InvalidArgument(format!(
                    "duplicate record {}/{}",
                    pair[0].dataset_id, pair[0].record_id
                )));
            }
        }
        let mut registry: BTreeMap<SubjectId, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.subject.dataset_id != r.dataset_id {
                return Err(Error::InvalidArgument(format!(
                    "record {}/{} assigned to subject of another dataset ({})",
                    r.dataset_id, r.record_id, r.subject
                )));
            }
            if let Some(w) = r.windows.iter().find(|w| w.len() != WINDOW_LEN) {
                return Err(Error::InvalidArgument(format!(
                    "record {}/{} has a window of length {}",
                    r.dataset_id,
                    r.record_id,
                    w.len()
                )));
            }
            registry.entry(r.subject.clone()).or_default().push(i);
        }
        Ok(Self { records, registry })
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn datasets(&self) -> Vec<String> {
        let mut ds: Vec<String> = self.records.iter().map(|r| r.dataset_id.clone()).collect();
        ds.dedup();
        ds
    }

    pub fn subjects_in(&self, dataset_id: &str) -> Vec<SubjectId> {
        self.registry
            .keys()
            .filter(|s| s.dataset_id == dataset_id)
            .cloned()
            .collect()
    }

    /// `n_s`: number of windows stored for `subject`.
    pub fn window_count(&self, subject: &SubjectId) -> usize {
        self.registry
            .get(subject)
            .map_or(0, |ids| ids.iter().map(|&i| self.records[i].windows.len()).sum())
    }

    pub fn total_windows(&self) -> usize {
        self.records.iter().map(|r| r.windows.len()).sum()
    }

    pub fn contains(&self, subject: &SubjectId) -> bool {
        self.registry.contains_key(subject)
    }
}

impl WindowSource for WindowCorpus {
    fn subjects(&self) -> Vec<SubjectId> {
        self.registry.keys().cloned().collect()
    }

    fn windows_of(&self, subject: &SubjectId) -> Vec<&[f64]> {
        self.registry.get(subject).map_or_else(Vec::new, |ids| {
            ids.iter()
                .flat_map(|&i| self.records[i].windows.iter().map(Vec::as_slice))
                .collect()
        })
    }
}

/// Preprocesses every record and, when `cache_path` is given, writes the
/// window cache there.
pub fn build_corpus(records: &[RawRecord], cache_path: Option<&Path>) -> Result<WindowCorpus> {
    let processed = records
        .iter()
        .map(|r| {
            let windows = preprocess_record(r)?;
            Ok(CorpusRecord {
                dataset_id: r.dataset_id.clone(),
                record_id: r.record_id.clone(),
                subject: subject_of(&r.dataset_id, &r.record_id)?,
                windows: windows.into_iter().map(|w| w.values).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let corpus = WindowCorpus::from_records(processed)?;
    if let Some(path) = cache_path {
        write_cache(&corpus, path)?;
    }
    Ok(corpus)
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::InvalidArgument(format!("identifier too long: {} bytes", s.len())))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_cache(corpus: &WindowCorpus) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(16 + corpus.total_windows() * WINDOW_LEN * 8);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(corpus.records.len() as u32).to_le_bytes());
    for r in &corpus.records {
        put_str(&mut buf, &r.dataset_id)?;
        put_str(&mut buf, &r.record_id)?;
        put_str(&mut buf, &r.subject.subject_key)?;
        buf.extend_from_slice(&(r.windows.len() as u32).to_le_bytes());
        for w in &r.windows {
            for v in w {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

pub fn write_cache(corpus: &WindowCorpus, path: &Path) -> Result<()> {
    let bytes = encode_cache(corpus)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("truncated window cache at byte {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::format(self.path, "identifier is not valid UTF-8"))
    }
}

pub fn read_cache(path: &Path) -> Result<WindowCorpus> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rd = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if rd.take(8).ok() != Some(CACHE_MAGIC.as_slice()) {
        return Err(Error::format(path, "not a window cache (bad MIAWIN01 magic)"));
    }
    let count = rd.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let dataset_id = rd.string()?;
        let record_id = rd.string()?;
        let subject_key = rd.string()?;
        let n = rd.u32()? as usize;
        let payload = rd.take(n * WINDOW_LEN * 8)?;
        let windows = payload
            .chunks_exact(WINDOW_LEN * 8)
            .map(|w| {
                w.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            })
            .collect();
        let subject = SubjectId::new(dataset_id.clone(), subject_key)
            .map_err(|e| Error::format(path, e.to_string()))?;
        records.push(CorpusRecord {
            dataset_id,
            record_id,
            subject,
            windows,
        });
    }
    if rd.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last record"));
    }
    WindowCorpus::from_records(records).map_err(|e| Error::format(path, e.to_string()))
}
