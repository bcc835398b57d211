//! Signal ingestion, preprocessing, subject identity and the window cache.

mod cache;
mod preprocess;
mod record;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{build_corpus, read_cache, write_cache, CorpusRecord, WindowCorpus, WindowSource};
pub use preprocess::{preprocess_record, resample, segment, z_normalize, NORMALIZE_EPS};
pub use record::{read_record, read_records_dir, write_record, RawRecord};
pub use synth::{generate_synth_subject, SynthSubjectParams, P_WAVE_MAX_AMPLITUDE};

/// Target sampling rate of every window.
pub const TARGET_RATE_HZ: u32 = 250;
/// Samples per window (10 s at 250 Hz).
pub const WINDOW_LEN: usize = 2000;
/// Offset between consecutive window starts (5 s at 250 Hz).
pub const WINDOW_STRIDE: usize = 1250;

/// Dataset whose record ids carry the subject as a prefix before `_`.
pub const PREFIX_SUBJECT_DATASET: &str = "butqdb";

/// A participant, identified within its dataset.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubjectId {
    pub dataset_id: String,
    pub subject_key: String,
}

impl SubjectId {
    pub fn new(dataset_id: impl Into<String>, subject_key: impl Into<String>) -> Result<Self> {
        let (dataset_id, subject_key) = (dataset_id.into(), subject_key.into());
        if dataset_id.is_empty() || subject_key.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "subject id needs non-empty dataset and key, got {dataset_id:?}/{subject_key:?}"
            )));
        }
        if dataset_id.contains('/') {
            return Err(Error::InvalidArgument(format!(
                "dataset id {dataset_id:?} must not contain '/'"
            )));
        }
        Ok(Self {
            dataset_id,
            subject_key,
        })
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dataset_id, self.subject_key)
    }
}

impl FromStr for SubjectId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (dataset, key) = s.split_once('/').ok_or_else(|| {
            Error::InvalidArgument(format!("subject id {s:?} is not of the form dataset/key"))
        })?;
        SubjectId::new(dataset, key)
    }
}

impl Serialize for SubjectId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SubjectId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Subject owning a record. For `butqdb` records sharing the prefix before
/// the first underscore belong to one subject; elsewhere each record is its
/// own subject.
pub fn subject_of(dataset_id: &str, record_id: &str) -> Result<SubjectId> {
    if record_id.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty record id in dataset {dataset_id:?}"
        )));
    }
    let key = if dataset_id == PREFIX_SUBJECT_DATASET {
        record_id.split('_').next().unwrap_or(record_id)
    } else {
        record_id
    };
    SubjectId::new(dataset_id, key)
}

/// One fixed-length segment of a subject's signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub subject: SubjectId,
    pub values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn butqdb_groups_by_prefix() {
        assert_eq!(subject_of("butqdb", "100001_ECG").unwrap().subject_key, "100001");
        assert_eq!(subject_of("butqdb", "105").unwrap().subject_key, "105");
        assert_eq!(subject_of("mitdb", "100").unwrap().subject_key, "100");
        assert_eq!(subject_of("mitdb", "100_a").unwrap().subject_key, "100_a");
    }

    #[test]
    fn empty_record_id_is_rejected() {
        assert!(subject_of("mitdb", "").is_err());
    }

    #[test]
    fn subject_id_string_roundtrip() {
        let s = SubjectId::new("ltdb", "14046").unwrap();
        assert_eq!(s.to_string(), "ltdb/14046");
        assert_eq!("ltdb/14046".parse::<SubjectId>().unwrap(), s);
        assert!("nodelimiter".parse::<SubjectId>().is_err());
    }
}
