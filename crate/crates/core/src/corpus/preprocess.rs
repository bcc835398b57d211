//! Deterministic per-record pipeline: normalize, resample to 250 Hz, segment.

use super::record::RawRecord;
use super::{subject_of, Window, TARGET_RATE_HZ, WINDOW_LEN, WINDOW_STRIDE};
use crate::error::{Error, Result};

/// Standard deviation below which a record is treated as flat.
pub const NORMALIZE_EPS: f64 = 1e-8;

/// Linear-interpolation resampling onto a uniform grid at `target_rate`.
/// Output length is `round(len * target / source)`; grid points past the last
/// input sample hold the last value.
pub fn resample(record: &RawRecord, target_rate: u32) -> Result<RawRecord> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if record.samples.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "cannot resample empty record {}/{}",
            record.dataset_id, record.record_id
        )));
    }
    if record.sampling_rate == target_rate {
        return Ok(record.clone());
    }
    let src = &record.samples;
    let ratio = record.sampling_rate as f64 / target_rate as f64;
    let out_len = (src.len() as f64 * target_rate as f64 / record.sampling_rate as f64).round() as usize;
    let last = src.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = pos.floor() as usize;
            if lo >= last {
                return src[last];
            }
            let frac = pos - lo as f64;
            src[lo] + (src[lo + 1] - src[lo]) * frac
        })
        .collect();
    Ok(RawRecord {
        sampling_rate: target_rate,
        samples,
        ..record.clone()
    })
}

/// Drops non-finite samples, then rescales to zero mean and unit population
/// standard deviation. Flat records become all zeros.
pub fn z_normalize(record: &RawRecord) -> RawRecord {
    let finite: Vec<f64> = record.samples.iter().copied().filter(|v| v.is_finite()).collect();
    let n = finite.len() as f64;
    let samples = if finite.is_empty() {
        finite
    } else {
        let mean = finite.iter().sum::<f64>() / n;
        let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std > NORMALIZE_EPS {
            finite.iter().map(|v| (v - mean) / std).collect()
        } else {
            vec![0.0; finite.len()]
        }
    };
    RawRecord {
        samples,
        ..record.clone()
    }
}

/// 2000-sample windows at offsets 0, 1250, 2500, ...; short records give none.
pub fn segment(record: &RawRecord) -> Result<Vec<Window>> {
    if record.sampling_rate != TARGET_RATE_HZ {
        return Err(Error::InvalidArgument(format!(
            "segment expects {TARGET_RATE_HZ} Hz input, record {}/{} is at {} Hz",
            record.dataset_id, record.record_id, record.sampling_rate
        )));
    }
    let subject = subject_of(&record.dataset_id, &record.record_id)?;
    let n = record.samples.len();
    if n < WINDOW_LEN {
        return Ok(Vec::new());
    }
    let count = (n - WINDOW_LEN) / WINDOW_STRIDE + 1;
    Ok((0..count)
        .map(|w| Window {
            subject: subject.clone(),
            values: record.samples[w * WINDOW_STRIDE..w * WINDOW_STRIDE + WINDOW_LEN].to_vec(),
        })
        .collect())
}

/// The fixed pipeline order: normalize, resample, segment.
pub fn preprocess_record(record: &RawRecord) -> Result<Vec<Window>> {
    let normalized = z_normalize(record);
    if normalized.samples.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "record {}/{} has no finite samples",
            record.dataset_id, record.record_id
        )));
    }
    segment(&resample(&normalized, TARGET_RATE_HZ)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn rec(rate: u32, samples: Vec<f64>) -> RawRecord {
        RawRecord {
            dataset_id: "mitdb".into(),
            record_id: "100".into(),
            sampling_rate: rate,
            samples,
        }
    }

    #[test]
    fn resample_length_arithmetic() {
        let r = resample(&rec(1000, vec![0.0; 4000]), 250).unwrap();
        assert_eq!(r.samples.len(), 1000);
        assert_eq!(r.sampling_rate, 250);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let r = resample(&rec(360, vec![2.5; 3600]), 250).unwrap();
        assert_eq!(r.samples.len(), 2500);
        assert!(r.samples.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn resample_ramp_matches_closed_form() {
        let (a, b) = (0.7, -1.3);
        let src: Vec<f64> = (0..5000).map(|j| a + b * j as f64 / 500.0).collect();
        let r = resample(&rec(500, src), 250).unwrap();
        assert_eq!(r.samples.len(), 2500);
        for (i, v) in r.samples.iter().enumerate() {
            let t = i as f64 / 250.0;
            assert!((v - (a + b * t)).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_empty_errors() {
        assert!(resample(&rec(500, vec![]), 250).is_err());
    }

    #[test]
    fn segment_counts() {
        let count = |n: usize| segment(&rec(250, vec![0.0; n])).unwrap().len();
        assert_eq!(count(2500), 1);
        assert_eq!(count(5000), 3);
        assert_eq!(count(1999), 0);
        let ws = segment(&rec(250, (0..5000).map(|i| i as f64).collect())).unwrap();
        let starts: Vec<f64> = ws.iter().map(|w| w.values[0]).collect();
        assert_eq!(starts, vec![0.0, 1250.0, 2500.0]);
        assert!(ws.iter().all(|w| w.values.len() == WINDOW_LEN));
    }

    #[test]
    fn normalize_constant_is_zero() {
        let r = z_normalize(&rec(250, vec![3.0; 100]));
        assert!(r.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_moments_and_nonfinite_removal() {
        let mut rng = SeededRng::new(3, 3);
        let mut samples: Vec<f64> = (0..1000).map(|_| 5.0 + 2.0 * rng.normal()).collect();
        samples[10] = f64::NAN;
        samples[20] = f64::INFINITY;
        let r = z_normalize(&rec(250, samples));
        assert_eq!(r.samples.len(), 998);
        let n = r.samples.len() as f64;
        let mean = r.samples.iter().sum::<f64>() / n;
        let std = (r.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-10);
        assert!((std - 1.0).abs() < 1e-10);
    }

    #[test]
    fn normalize_is_affine_invariant() {
        let mut rng = SeededRng::new(4, 4);
        let x: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.5 * v - 12.0).collect();
        let nx = z_normalize(&rec(250, x));
        let ny = z_normalize(&rec(250, y));
        for (a, b) in nx.samples.iter().zip(&ny.samples) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pipeline_order_is_pinned_on_a_ramp() {
        // 24 s ramp at 500 Hz: normalize first, then resample, then segment.
        let src: Vec<f64> = (0..12000).map(|j| j as f64).collect();
        let windows = preprocess_record(&rec(500, src.clone())).unwrap();
        assert_eq!(windows.len(), 4);

        let n = src.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let std = ((n * n - 1.0) / 12.0).sqrt();
        // window 1 starts at 250 Hz sample 1250, i.e. 500 Hz sample 2500
        let expected_first = (2500.0 - mean) / std;
        assert!((windows[1].values[0] - expected_first).abs() < 1e-9);
        let expected_step = 2.0 / std;
        assert!((windows[1].values[1] - windows[1].values[0] - expected_step).abs() < 1e-9);
    }
}
