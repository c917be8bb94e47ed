//! Surface-EMG envelope, activity peaks and intensity grading.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{Channel, SampleSeries, SignalError};

#[derive(Debug, Error, PartialEq)]
pub enum EmgError {
    #[error("expected an EMG channel, got {0}")]
    WrongChannel(Channel),
    #[error("calibration maximum must be positive, got {0}")]
    NonPositiveCalibration(f64),
    #[error("rest segment is empty")]
    EmptyRest,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmgConfig {
    pub rms_window_ms: f64,
    /// Peaks must exceed `baseline + k * sigma`.
    pub k_sigma: f64,
    pub min_separation_ms: f64,
}

impl Default for EmgConfig {
    fn default() -> Self {
        Self {
            rms_window_ms: 100.0,
            k_sigma: 3.0,
            min_separation_ms: 250.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    Rest,
    Light,
    Moderate,
    High,
}

/// Envelope level and spread while the muscle is relaxed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestBaseline {
    pub mean: f64,
    pub sigma: f64,
}

impl RestBaseline {
    pub fn from_rest(envelope: &[f64]) -> Result<Self, EmgError> {
        if envelope.is_empty() {
            return Err(EmgError::EmptyRest);
        }
        let n = envelope.len() as f64;
        let mean = envelope.iter().sum::<f64>() / n;
        let sigma = (envelope.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self { mean, sigma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityPeak {
    pub t_ms: i64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuscleActivity {
    pub channel: Channel,
    pub envelope: SampleSeries,
    pub peaks: Vec<ActivityPeak>,
    pub intensity: Intensity,
}

pub fn emg_envelope(raw: &SampleSeries) -> Result<SampleSeries, EmgError> {
    emg_envelope_with(raw, &EmgConfig::default())
}

/// Mean removal, full-wave rectification, then a centered moving RMS.
pub fn emg_envelope_with(raw: &SampleSeries, cfg: &EmgConfig) -> Result<SampleSeries, EmgError> {
    if !raw.channel().is_emg() {
        return Err(EmgError::WrongChannel(raw.channel()));
    }
    let x = raw.values();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let rectified: Vec<f64> = x.iter().map(|v| (v - mean).abs()).collect();
    let width = ((cfg.rms_window_ms * raw.rate_hz() / 1000.0).round() as usize).max(1);
    let half_lo = (width - 1) / 2;
    let half_hi = width / 2;
    let mut prefix = Vec::with_capacity(rectified.len() + 1);
    prefix.push(0.0);
    for v in &rectified {
        prefix.push(prefix.last().unwrap() + v * v);
    }
    let n = rectified.len();
    let env = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half_lo);
            let hi = (i + half_hi + 1).min(n);
            ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).max(0.0).sqrt()
        })
        .collect();
    Ok(SampleSeries::new(raw.channel(), raw.rate_hz(), raw.t0_ms(), env)?)
}

pub fn detect_activity_peaks(envelope: &SampleSeries, rest: &RestBaseline) -> Vec<ActivityPeak> {
    detect_activity_peaks_with(envelope, rest, &EmgConfig::default())
}

/// Local maxima above `rest.mean + k * rest.sigma`, strongest first, each
/// kept only if at least `min_separation_ms` from every kept peak.
pub fn detect_activity_peaks_with(envelope: &SampleSeries, rest: &RestBaseline, cfg: &EmgConfig) -> Vec<ActivityPeak> {
    let x = envelope.values();
    let threshold = rest.mean + cfg.k_sigma * rest.sigma;
    let gap = (cfg.min_separation_ms * envelope.rate_hz() / 1000.0).ceil() as usize;
    let mut cands: Vec<usize> = (0..x.len())
        .filter(|&i| {
            let left = i == 0 || x[i] > x[i - 1];
            let right = i + 1 == x.len() || x[i] >= x[i + 1];
            left && right && x[i] > threshold
        })
        .collect();
    cands.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cands {
        if kept.iter().all(|&k| k.abs_diff(c) >= gap) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept.into_iter()
        .map(|i| ActivityPeak {
            t_ms: envelope.time_of(i),
            amplitude: x[i],
        })
        .collect()
}

/// Grades the strongest peak relative to a per-user maximum contraction.
pub fn grade_intensity(peaks: &[ActivityPeak], calibration_max: f64) -> Result<Intensity, EmgError> {
    if !(calibration_max > 0.0) {
        return Err(EmgError::NonPositiveCalibration(calibration_max));
    }
    let top = peaks.iter().map(|p| p.amplitude).fold(0.0, f64::max);
    Ok(intensity_for_ratio(top / calibration_max))
}

pub fn intensity_for_ratio(ratio: f64) -> Intensity {
    if ratio < 0.1 {
        Intensity::Rest
    } else if ratio < 0.4 {
        Intensity::Light
    } else if ratio < 0.7 {
        Intensity::Moderate
    } else {
        Intensity::High
    }
}

/// Full chain for one channel. The first `rest_ms` of the recording are
/// taken as the relaxed baseline.
pub fn analyze_muscle(raw: &SampleSeries, calibration_max: f64, rest_ms: f64, cfg: &EmgConfig) -> Result<MuscleActivity, EmgError> {
    let envelope = emg_envelope_with(raw, cfg)?;
    let rest_len = ((rest_ms * raw.rate_hz() / 1000.0).round() as usize).clamp(1, envelope.len());
    let rest = RestBaseline::from_rest(&envelope.values()[..rest_len])?;
    let peaks = detect_activity_peaks_with(&envelope, &rest, cfg);
    let intensity = grade_intensity(&peaks, calibration_max)?;
    Ok(MuscleActivity {
        channel: raw.channel(),
        envelope,
        peaks,
        intensity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emg(rate: f64, values: Vec<f64>) -> SampleSeries {
        SampleSeries::new(Channel::EmgBicep, rate, 0, values).unwrap()
    }

    fn env(rate: f64, values: Vec<f64>) -> SampleSeries {
        SampleSeries::new(Channel::EmgBicep, rate, 0, values).unwrap()
    }

    #[test]
    fn sine_envelope_is_rms() {
        // 50 Hz sine at 1 kHz: the 100 ms window spans five whole periods
        let a = 2.0;
        let x: Vec<f64> = (0..2000)
            .map(|i| a * (std::f64::consts::TAU * 50.0 * i as f64 / 1000.0).sin())
            .collect();
        let e = emg_envelope(&emg(1000.0, x)).unwrap();
        let mid = e.values()[1000];
        assert!((mid - a / 2f64.sqrt()).abs() < 1e-3, "{mid}");
    }

    #[test]
    fn zero_and_dc_inputs_give_zero_envelope() {
        let e = emg_envelope(&emg(1000.0, vec![0.0; 500])).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
        let d = emg_envelope(&emg(1000.0, vec![3.5; 500])).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_channel() {
        let ecg = SampleSeries::new(Channel::Ecg, 1000.0, 0, vec![0.0; 10]).unwrap();
        assert_eq!(emg_envelope(&ecg), Err(EmgError::WrongChannel(Channel::Ecg)));
    }

    fn bumps(rate: f64, centers_s: &[f64], amp: f64) -> Vec<f64> {
        (0..(3.0 * rate) as usize)
            .map(|i| {
                let t = i as f64 / rate;
                0.1 + centers_s
                    .iter()
                    .map(|c| amp * (-0.5 * ((t - c) / 0.03).powi(2)).exp())
                    .sum::<f64>()
            })
            .collect()
    }

    #[test]
    fn peak_examples() {
        let rest = RestBaseline { mean: 0.1, sigma: 0.01 };
        assert!(detect_activity_peaks(&env(1000.0, vec![0.1; 3000]), &rest).is_empty());

        let two = detect_activity_peaks(&env(1000.0, bumps(1000.0, &[1.0, 2.0], 0.05)), &rest);
        assert_eq!(two.len(), 2);
        assert_eq!(two[0].t_ms, 1000);
        assert_eq!(two[1].t_ms, 2000);

        let merged = detect_activity_peaks(&env(1000.0, bumps(1000.0, &[1.0, 1.1], 0.05)), &rest);
        assert_eq!(merged.len(), 1);
    }

    #[test]
    fn grading_examples() {
        assert_eq!(grade_intensity(&[], 1.0).unwrap(), Intensity::Rest);
        let p = |a| vec![ActivityPeak { t_ms: 0, amplitude: a }];
        assert_eq!(grade_intensity(&p(0.5), 1.0).unwrap(), Intensity::Moderate);
        assert_eq!(grade_intensity(&p(1.0), 1.0).unwrap(), Intensity::High);
        assert_eq!(grade_intensity(&p(0.2), 1.0).unwrap(), Intensity::Light);
        assert_eq!(grade_intensity(&p(0.2), 0.0), Err(EmgError::NonPositiveCalibration(0.0)));
    }
}
