//! Seeded synthetic ECG: Gaussian P/Q/R/S/T pulses per beat plus baseline
//! wander and white noise.

use serde::{Deserialize, Serialize};

use super::record::RawRecord;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Upper bound on the P-wave peak; per-subject P amplitudes stay below it.
pub const P_WAVE_MAX_AMPLITUDE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSubjectParams {
    /// Beats per minute, within 40..=180.
    pub heart_rate: f64,
    pub qrs_amplitude: f64,
    pub t_wave_amplitude: f64,
    /// Hz.
    pub baseline_wander_freq: f64,
    #[serde(default)]
    pub baseline_wander_amplitude: f64,
    pub noise_std: f64,
    /// Drives the per-subject pulse widths, offsets and P amplitude.
    pub morphology_seed: u64,
    /// Shared shape that this subject's morphology is pulled towards.
    #[serde(default)]
    pub morphology_center: Option<u64>,
    /// 0 copies the center's shape, 1 ignores it.
    #[serde(default = "full_dispersion")]
    pub morphology_dispersion: f64,
}

fn full_dispersion() -> f64 {
    1.0
}

impl SynthSubjectParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if !(40.0..=180.0).contains(&self.heart_rate) {
            return bad(
                "heart_rate",
                format!("value {} outside [40, 180] bpm", self.heart_rate),
            );
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std", format!("value {} must be >= 0", self.noise_std));
        }
        for (field, v) in [
            ("qrs_amplitude", self.qrs_amplitude),
            ("t_wave_amplitude", self.t_wave_amplitude),
        ] {
            if !v.is_finite() {
                return bad(field, format!("value {v} must be finite"));
            }
        }
        for (field, v) in [
            ("baseline_wander_freq", self.baseline_wander_freq),
            ("baseline_wander_amplitude", self.baseline_wander_amplitude),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(field, format!("value {v} must be >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.morphology_dispersion) {
            return bad(
                "morphology_dispersion",
                format!("value {} outside [0, 1]", self.morphology_dispersion),
            );
        }
        Ok(())
    }
}

struct Morphology {
    p_amp: f64,
    p_offset: f64,
    p_width: f64,
    q_depth: f64,
    q_offset: f64,
    r_width: f64,
    s_depth: f64,
    s_offset: f64,
    t_offset: f64,
    t_width: f64,
    wander_phase: f64,
}

impl Morphology {
    /// Each shape coordinate is `c + d * (v - c)` for the center's unit draw
    /// `c` and the subject's own draw `v`.
    fn sample(seed: u64, center: Option<u64>, dispersion: f64) -> Self {
        let mut own = SeededRng::derive(seed, &["synth", "morphology"]);
        let mut shared = center.map(|c| SeededRng::derive(c, &["synth", "morphology"]));
        let mut u = || {
            let v = own.uniform();
            match shared.as_mut() {
                Some(rng) => {
                    let c = rng.uniform();
                    c + dispersion * (v - c)
                }
                None => v,
            }
        };
        Self {
            p_amp: 0.08 + 0.12 * u(),
            p_offset: -(0.16 + 0.06 * u()),
            p_width: 0.020 + 0.015 * u(),
            q_depth: 0.10 + 0.15 * u(),
            q_offset: -(0.025 + 0.010 * u()),
            r_width: 0.008 + 0.006 * u(),
            s_depth: 0.15 + 0.25 * u(),
            s_offset: 0.025 + 0.012 * u(),
            t_offset: 0.22 + 0.08 * u(),
            t_width: 0.040 + 0.030 * u(),
            wander_phase: std::f64::consts::TAU * u(),
        }
    }
}

fn add_pulse(out: &mut [f64], rate: f64, center: f64, width: f64, amp: f64) {
    if amp == 0.0 {
        return;
    }
    let lo = ((center - 5.0 * width) * rate).floor().max(0.0) as usize;
    let hi = (((center + 5.0 * width) * rate).ceil().max(0.0) as usize).min(out.len());
    for (i, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
        let dt = i as f64 / rate - center;
        *v += amp * (-0.5 * (dt / width).powi(2)).exp();
    }
}

/// Deterministic under `(params, seed)`: beat placement jitter and noise use
/// `seed`, waveform shape uses `params.morphology_seed`.
pub fn generate_synth_subject(
    dataset_id: &str,
    record_id: &str,
    params: &SynthSubjectParams,
    sampling_rate: u32,
    duration_s: f64,
    seed: u64,
) -> Result<RawRecord> {
    params.validate()?;
    if !(duration_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    if sampling_rate == 0 {
        return Err(Error::InvalidArgument("sampling rate must be positive".into()));
    }
    let rate = sampling_rate as f64;
    let n = (duration_s * rate).round().max(1.0) as usize;
    let shape = Morphology::sample(
        params.morphology_seed,
        params.morphology_center,
        params.morphology_dispersion,
    );
    let mut rng = SeededRng::derive(seed, &["synth", dataset_id, record_id]);
    let mut samples = vec![0.0; n];

    let rr = 60.0 / params.heart_rate;
    let t_scale = rr.sqrt();
    // beat k sits at first + k·rr with a bounded, non-accumulating jitter
    let first = rr * (0.25 + 0.5 * rng.uniform());
    let end = n as f64 / rate;
    let mut k = 0usize;
    loop {
        let jitter = (0.02 * rng.normal()).clamp(-0.05, 0.05) * rr;
        let beat = first + k as f64 * rr + jitter;
        if beat >= end + rr {
            break;
        }
        let gain = 1.0 + (0.03 * rng.normal()).clamp(-0.1, 0.1);
        let qrs = params.qrs_amplitude * gain;
        add_pulse(&mut samples, rate, beat + shape.p_offset, shape.p_width, shape.p_amp);
        add_pulse(&mut samples, rate, beat + shape.q_offset, 0.010, -shape.q_depth * qrs);
        add_pulse(&mut samples, rate, beat, shape.r_width, qrs);
        add_pulse(&mut samples, rate, beat + shape.s_offset, 0.010, -shape.s_depth * qrs);
        add_pulse(
            &mut samples,
            rate,
            beat + shape.t_offset * t_scale,
            shape.t_width * t_scale,
            params.t_wave_amplitude * gain,
        );
        k += 1;
    }

    let omega = std::f64::consts::TAU * params.baseline_wander_freq;
    for (i, v) in samples.iter_mut().enumerate() {
        let t = i as f64 / rate;
        *v += params.baseline_wander_amplitude * (omega * t + shape.wander_phase).sin();
        if params.noise_std > 0.0 {
            *v += params.noise_std * rng.normal();
        }
    }

    Ok(RawRecord {
        dataset_id: dataset_id.to_string(),
        record_id: record_id.to_string(),
        sampling_rate,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SynthSubjectParams {
        SynthSubjectParams {
            heart_rate: 60.0,
            qrs_amplitude: 1.0,
            t_wave_amplitude: 0.3,
            baseline_wander_freq: 0.2,
            baseline_wander_amplitude: 0.05,
            noise_std: 0.02,
            morphology_seed: 17,
            morphology_center: None,
            morphology_dispersion: 1.0,
        }
    }

    /// Local maxima above half the global maximum.
    fn count_peaks(x: &[f64]) -> usize {
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (1..x.len() - 1)
            .filter(|&i| x[i] > 0.5 * max && x[i] >= x[i - 1] && x[i] > x[i + 1])
            .count()
    }

    #[test]
    fn deterministic_under_params_and_seed() {
        let a = generate_synth_subject("s", "1", &params(), 250, 12.0, 42).unwrap();
        let b = generate_synth_subject("s", "1", &params(), 250, 12.0, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synth_subject("s", "1", &params(), 250, 12.0, 43).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn clean_sixty_bpm_has_ten_peaks_in_ten_seconds() {
        let p = SynthSubjectParams {
            noise_std: 0.0,
            ..params()
        };
        for seed in 0..20 {
            let r = generate_synth_subject("s", "1", &p, 250, 10.0, seed).unwrap();
            assert_eq!(r.samples.len(), 2500);
            assert_eq!(count_peaks(&r.samples), 10, "seed {seed}");
        }
    }

    #[test]
    fn disabled_components_leave_only_small_p_waves() {
        let p = SynthSubjectParams {
            qrs_amplitude: 0.0,
            t_wave_amplitude: 0.0,
            baseline_wander_amplitude: 0.0,
            noise_std: 0.0,
            ..params()
        };
        for seed in 0..10 {
            let p = SynthSubjectParams {
                morphology_seed: seed,
                morphology_center: None,
                morphology_dispersion: 1.0,
                ..p.clone()
            };
            let r = generate_synth_subject("s", "1", &p, 360, 10.0, seed).unwrap();
            let max = r.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max < P_WAVE_MAX_AMPLITUDE, "{max}");
        }
    }

    #[test]
    fn validation_names_the_field() {
        let p = SynthSubjectParams {
            heart_rate: 300.0,
            ..params()
        };
        let err = generate_synth_subject("s", "1", &p, 250, 10.0, 1).unwrap_err();
        assert!(err.to_string().contains("heart_rate"), "{err}");
        let p = SynthSubjectParams {
            noise_std: -1.0,
            ..params()
        };
        assert!(p.validate().unwrap_err().to_string().contains("noise_std"));
    }

    #[test]
    fn dispersion_interpolates_towards_the_center() {
        let mut p = params();
        p.noise_std = 0.0;
        p.morphology_center = Some(99);
        p.morphology_dispersion = 0.0;
        let a = generate_synth_subject("d", "a", &p, 250, 10.0, 1).unwrap();
        p.morphology_seed = 12345;
        let b = generate_synth_subject("d", "a", &p, 250, 10.0, 1).unwrap();
        assert_eq!(a.samples, b.samples);
        p.morphology_dispersion = 1.0;
        let own = generate_synth_subject("d", "a", &p, 250, 10.0, 1).unwrap();
        p.morphology_center = None;
        assert_eq!(own.samples, generate_synth_subject("d", "a", &p, 250, 10.0, 1).unwrap().samples);
        p.morphology_dispersion = 1.5;
        assert!(p.validate().unwrap_err().to_string().contains("morphology_dispersion"));
    }
}
