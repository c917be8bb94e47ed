//! R-peak detection, heart rate and heart-rate-variability metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{Channel, RrSeries, SampleSeries, SignalError, StressLevel, StressReport};

/// Minimum spacing between two accepted R peaks.
pub const REFRACTORY_MS: f64 = 200.0;

/// Shortest ECG segment the detector accepts.
pub const MIN_ECG_MS: f64 = 2000.0;

/// Default NNxx threshold (pNN50).
pub const DEFAULT_XX_MS: f64 = 50.0;

#[derive(Debug, Error, PartialEq)]
pub enum HrvError {
    #[error("expected an ECG series, got {0}")]
    WrongChannel(Channel),
    #[error("ECG segment of {0} ms is shorter than the 2 s minimum")]
    SignalTooShort(f64),
    #[error("no R peaks found; check electrode contact")]
    NoPeaksFound,
    #[error("RR interval must be positive, got {0} ms")]
    NonPositiveInterval(f64),
    #[error("need at least 2 peaks, got {0}")]
    TooFewPeaks(usize),
    #[error("need at least {needed} accepted intervals, got {got}")]
    TooFewIntervals { needed: usize, got: usize },
    #[error("HRV score must be non-negative, got {0}")]
    NegativeScore(f64),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Time-domain HRV statistics over the accepted RR intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrvTimeDomain {
    pub mean_rr_ms: f64,
    pub sdnn_ms: f64,
    pub rmssd_ms: f64,
    pub mean_hr_bpm: f64,
    pub std_hr_bpm: f64,
    pub min_hr_bpm: f64,
    pub max_hr_bpm: f64,
    pub nnxx_count: usize,
    pub pnnxx_pct: f64,
    pub xx_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareMetrics {
    pub sd1_ms: f64,
    pub sd2_ms: f64,
    pub points: Vec<(f64, f64)>,
}

/// Tunables for the QRS detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub refractory_ms: f64,
    pub integration_ms: f64,
    /// Fraction of the running signal-peak estimate used as threshold.
    pub threshold_ratio: f64,
    /// Half-width of the raw-signal search around an integrator peak.
    pub search_ms: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            refractory_ms: REFRACTORY_MS,
            integration_ms: 150.0,
            threshold_ratio: 0.5,
            search_ms: 120.0,
        }
    }
}

/// Centered moving average with edge-shrinking windows.
fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    let width = width.max(1);
    let half_lo = (width - 1) / 2;
    let half_hi = width / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half_lo);
            let hi = (i + half_hi + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn samples_for(ms: f64, rate_hz: f64) -> usize {
    ((ms * rate_hz / 1000.0).round() as usize).max(1)
}

/// Band-pass, differentiate, square and integrate: the QRS energy signal.
fn qrs_energy(x: &[f64], rate_hz: f64, cfg: &DetectorConfig) -> Vec<f64> {
    // ~15 Hz low-pass: two cascaded boxcars (triangular kernel)
    let lp_width = samples_for(1000.0 / 30.0, rate_hz);
    let lp = moving_average(&moving_average(x, lp_width), lp_width);
    // ~5 Hz high-pass: subtract a 200 ms baseline
    let baseline = moving_average(&lp, samples_for(200.0, rate_hz));
    let bp: Vec<f64> = lp.iter().zip(&baseline).map(|(a, b)| a - b).collect();

    let n = bp.len();
    let at = |i: isize| bp[i.clamp(0, n as isize - 1) as usize];
    let deriv: Vec<f64> = (0..n as isize)
        .map(|i| (2.0 * at(i + 2) + at(i + 1) - at(i - 1) - 2.0 * at(i - 2)) * rate_hz / 8.0)
        .collect();
    let squared: Vec<f64> = deriv.iter().map(|d| d * d).collect();
    moving_average(&squared, samples_for(cfg.integration_ms, rate_hz))
}

/// Detects R peaks with the default detector settings.
pub fn detect_r_peaks(ecg: &SampleSeries) -> Result<Vec<usize>, HrvError> {
    detect_r_peaks_with(ecg, &DetectorConfig::default())
}

/// Pan–Tompkins style detector.
///
/// The integrated QRS energy is scanned for local maxima; a maximum is a
/// beat when it exceeds `threshold_ratio` times the running signal-peak
/// estimate and lies outside the refractory gap of the previous beat. Each
/// beat is then relocated to the largest raw sample nearby.
pub fn detect_r_peaks_with(ecg: &SampleSeries, cfg: &DetectorConfig) -> Result<Vec<usize>, HrvError> {
    if ecg.channel() != Channel::Ecg {
        return Err(HrvError::WrongChannel(ecg.channel()));
    }
    if ecg.duration_ms() < MIN_ECG_MS {
        return Err(HrvError::SignalTooShort(ecg.duration_ms()));
    }
    let x = ecg.values();
    let rate = ecg.rate_hz();
    let energy = qrs_energy(x, rate, cfg);
    let refractory = (cfg.refractory_ms * rate / 1000.0).ceil() as usize;
    let search = samples_for(cfg.search_ms, rate);

    let learning = samples_for(MIN_ECG_MS, rate).min(energy.len());
    let mut spk = energy[..learning].iter().cloned().fold(0.0, f64::max);
    let global_max = energy.iter().cloned().fold(0.0, f64::max);
    if !(global_max > 0.0) || global_max < 1e-12 {
        return Err(HrvError::NoPeaksFound);
    }
    if spk <= 0.0 {
        spk = global_max;
    }

    let mut beats: Vec<usize> = Vec::new();
    for i in 1..energy.len().saturating_sub(1) {
        let e = energy[i];
        if !(e > energy[i - 1] && e >= energy[i + 1]) {
            continue;
        }
        if e < cfg.threshold_ratio * spk {
            continue;
        }
        let lo = i.saturating_sub(search);
        let hi = (i + search + 1).min(x.len());
        let r = (lo..hi)
            .max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a)))
            .unwrap_or(i);
        if let Some(&last) = beats.last() {
            if r <= last || r - last < refractory {
                continue;
            }
        }
        beats.push(r);
        spk = 0.125 * e + 0.875 * spk;
    }
    if beats.is_empty() {
        return Err(HrvError::NoPeaksFound);
    }
    Ok(beats)
}

/// Beats per minute for one RR interval in milliseconds.
pub fn heart_rate_bpm(rr_interval_ms: f64) -> Result<f64, HrvError> {
    if !(rr_interval_ms > 0.0) {
        return Err(HrvError::NonPositiveInterval(rr_interval_ms));
    }
    Ok((1.0 / rr_interval_ms) * 60.0 * 1000.0)
}

pub fn rr_series(peaks: &[usize], rate_hz: f64) -> Result<RrSeries, HrvError> {
    if peaks.len() < 2 {
        return Err(HrvError::TooFewPeaks(peaks.len()));
    }
    Ok(RrSeries::from_peaks(peaks, rate_hz)?)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// MeanRR, SDNN (denominator n), RMSSD (denominator n-1), heart-rate
/// statistics and NNxx/pNNxx over the accepted intervals.
pub fn time_domain_metrics(rr: &RrSeries, xx_ms: f64) -> Result<HrvTimeDomain, HrvError> {
    let rr = rr.accepted();
    let n = rr.len();
    if n < 2 {
        return Err(HrvError::TooFewIntervals { needed: 2, got: n });
    }
    let mean_rr = mean(&rr);
    let sdnn = pop_std(&rr);
    let diffs: Vec<f64> = rr.windows(2).map(|w| w[1] - w[0]).collect();
    let rmssd = (diffs.iter().map(|d| d * d).sum::<f64>() / (n - 1) as f64).sqrt();
    let nnxx = diffs.iter().filter(|d| d.abs() > xx_ms).count();

    let hr: Vec<f64> = rr.iter().map(|&r| 60_000.0 / r).collect();
    let min_hr = hr.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_hr = hr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // clamp guards rounding when all rates coincide
    let mean_hr = mean(&hr).clamp(min_hr, max_hr);

    Ok(HrvTimeDomain {
        mean_rr_ms: mean_rr,
        sdnn_ms: sdnn,
        rmssd_ms: rmssd,
        mean_hr_bpm: mean_hr,
        std_hr_bpm: pop_std(&hr),
        min_hr_bpm: min_hr,
        max_hr_bpm: max_hr,
        nnxx_count: nnxx,
        pnnxx_pct: 100.0 * nnxx as f64 / (n - 1) as f64,
        xx_ms,
    })
}

/// Lag-1 Poincaré points with SD1/SD2 along the rotated axes.
pub fn poincare(rr: &RrSeries) -> Result<PoincareMetrics, HrvError> {
    let rr = rr.accepted();
    if rr.len() < 3 {
        return Err(HrvError::TooFewIntervals {
            needed: 3,
            got: rr.len(),
        });
    }
    let points: Vec<(f64, f64)> = rr.windows(2).map(|w| (w[0], w[1])).collect();
    let across: Vec<f64> = points
        .iter()
        .map(|(a, b)| (b - a) / std::f64::consts::SQRT_2)
        .collect();
    let along: Vec<f64> = points
        .iter()
        .map(|(a, b)| (b + a) / std::f64::consts::SQRT_2)
        .collect();
    Ok(PoincareMetrics {
        sd1_ms: pop_std(&across),
        sd2_ms: pop_std(&along),
        points,
    })
}

/// Bands an RMSSD-based HRV score into a stress level.
///
/// Bins are half-open: `<60` High, `[60,71)` Average, `[71,81)` Moderate,
/// `[81,90)` Low, `>=90` Very low.
pub fn stress_level(hrv_score_ms: f64) -> Result<StressReport, HrvError> {
    if !(hrv_score_ms >= 0.0) {
        return Err(HrvError::NegativeScore(hrv_score_ms));
    }
    let level = if hrv_score_ms < 60.0 {
        StressLevel::High
    } else if hrv_score_ms < 71.0 {
        StressLevel::Average
    } else if hrv_score_ms < 81.0 {
        StressLevel::Moderate
    } else if hrv_score_ms < 90.0 {
        StressLevel::Low
    } else {
        StressLevel::VeryLow
    };
    Ok(StressReport {
        hrv_score: hrv_score_ms,
        level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ecg(rate: f64, values: Vec<f64>) -> SampleSeries {
        SampleSeries::new(Channel::Ecg, rate, 0, values).unwrap()
    }

    fn gaussian_train(rate: f64, secs: f64, centers_s: &[(f64, f64)]) -> Vec<f64> {
        let n = (rate * secs) as usize;
        let sigma = 0.012;
        (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                centers_s
                    .iter()
                    .map(|(c, a)| a * (-(t - c).powi(2) / (2.0 * sigma * sigma)).exp())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn detects_one_hz_bump_train() {
        let centers: Vec<(f64, f64)> = (0..10).map(|k| (0.5 + k as f64, 1.0)).collect();
        let x = gaussian_train(250.0, 10.0, &centers);
        let peaks = detect_r_peaks(&ecg(250.0, x)).unwrap();
        assert_eq!(peaks.len(), 10);
        for (p, (c, _)) in peaks.iter().zip(&centers) {
            let expected = (c * 250.0).round() as i64;
            assert!((*p as i64 - expected).abs() <= 1, "{p} vs {expected}");
        }
    }

    #[test]
    fn flat_signal_has_no_peaks() {
        assert_eq!(
            detect_r_peaks(&ecg(250.0, vec![0.0; 2500])),
            Err(HrvError::NoPeaksFound)
        );
    }

    #[test]
    fn short_or_wrong_channel_rejected() {
        assert!(matches!(
            detect_r_peaks(&ecg(250.0, vec![0.0; 100])),
            Err(HrvError::SignalTooShort(_))
        ));
        let emg = SampleSeries::new(Channel::EmgBicep, 250.0, 0, vec![0.0; 1000]).unwrap();
        assert_eq!(detect_r_peaks(&emg), Err(HrvError::WrongChannel(Channel::EmgBicep)));
    }

    /// Oracle: raw local maxima above half the global max, strongest first,
    /// greedily kept when at least the refractory gap from every kept peak.
    fn brute_force_peaks(x: &[f64], rate: f64) -> Vec<usize> {
        let gap = (REFRACTORY_MS * rate / 1000.0).ceil() as usize;
        let max = x.iter().cloned().fold(0.0, f64::max);
        let mut cands: Vec<usize> = (1..x.len() - 1)
            .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > 0.5 * max)
            .collect();
        cands.sort_by(|&a, &b| x[b].total_cmp(&x[a]));
        let mut kept: Vec<usize> = Vec::new();
        for c in cands {
            if kept.iter().all(|&k| (k as i64 - c as i64).unsigned_abs() as usize >= gap) {
                kept.push(c);
            }
        }
        kept.sort_unstable();
        kept
    }

    #[test]
    fn close_bumps_suppressed_by_refractory_gap() {
        let x = gaussian_train(250.0, 4.0, &[(2.0, 1.0), (2.1, 0.8)]);
        let oracle = brute_force_peaks(&x, 250.0);
        assert_eq!(oracle.len(), 1);
        let peaks = detect_r_peaks(&ecg(250.0, x)).unwrap();
        assert_eq!(peaks, oracle);
    }

    #[test]
    fn heart_rate_examples() {
        assert_eq!(heart_rate_bpm(1000.0).unwrap(), 60.0);
        assert_eq!(heart_rate_bpm(800.0).unwrap(), 75.0);
        assert_eq!(heart_rate_bpm(0.0), Err(HrvError::NonPositiveInterval(0.0)));
        assert!(heart_rate_bpm(-5.0).is_err());
    }

    #[test]
    fn rr_series_examples() {
        assert_eq!(rr_series(&[0, 125, 250], 125.0).unwrap().intervals_ms(), &[1000.0, 1000.0]);
        assert_eq!(rr_series(&[0, 100], 125.0).unwrap().intervals_ms(), &[800.0]);
        assert_eq!(rr_series(&[0], 125.0), Err(HrvError::TooFewPeaks(1)));
    }

    #[test]
    fn constant_series_metrics() {
        let rr = RrSeries::from_intervals(vec![1000.0; 3]).unwrap();
        let m = time_domain_metrics(&rr, DEFAULT_XX_MS).unwrap();
        assert_eq!(m.mean_rr_ms, 1000.0);
        assert_eq!(m.sdnn_ms, 0.0);
        assert_eq!(m.rmssd_ms, 0.0);
        assert_eq!(m.nnxx_count, 0);
        assert_eq!(m.pnnxx_pct, 0.0);
    }

    #[test]
    fn two_interval_metrics_by_hand() {
        let rr = RrSeries::from_intervals(vec![800.0, 1000.0]).unwrap();
        let m = time_domain_metrics(&rr, 50.0).unwrap();
        assert_eq!(m.mean_rr_ms, 900.0);
        assert_eq!(m.rmssd_ms, 200.0);
        assert_eq!(m.sdnn_ms, 100.0);
        assert_eq!(m.mean_hr_bpm, 67.5);
        assert_eq!(m.min_hr_bpm, 60.0);
        assert_eq!(m.max_hr_bpm, 75.0);
        assert_eq!(m.nnxx_count, 1);
        assert_eq!(m.pnnxx_pct, 100.0);
    }

    #[test]
    fn too_few_intervals() {
        let rr = RrSeries::from_intervals(vec![800.0, 100.0]).unwrap();
        assert_eq!(
            time_domain_metrics(&rr, 50.0),
            Err(HrvError::TooFewIntervals { needed: 2, got: 1 })
        );
        assert!(matches!(poincare(&rr), Err(HrvError::TooFewIntervals { .. })));
    }

    #[test]
    fn poincare_constant_and_alternating() {
        let c = poincare(&RrSeries::from_intervals(vec![900.0; 6]).unwrap()).unwrap();
        assert_eq!((c.sd1_ms, c.sd2_ms), (0.0, 0.0));
        assert_eq!(c.points.len(), 5);

        let alt: Vec<f64> = (0..21).map(|i| if i % 2 == 0 { 800.0 } else { 1000.0 }).collect();
        let p = poincare(&RrSeries::from_intervals(alt).unwrap()).unwrap();
        assert!((p.sd1_ms - 100.0 * 2f64.sqrt()).abs() < 1e-9);
        assert!(p.sd2_ms.abs() < 1e-9);
    }

    #[test]
    fn stress_band_examples() {
        assert_eq!(stress_level(71.87).unwrap().level, StressLevel::Moderate);
        assert_eq!(stress_level(95.0).unwrap().level, StressLevel::VeryLow);
        assert_eq!(stress_level(59.999).unwrap().level, StressLevel::High);
        assert_eq!(stress_level(60.0).unwrap().level, StressLevel::Average);
        assert_eq!(stress_level(80.5).unwrap().level, StressLevel::Moderate);
        assert_eq!(stress_level(81.0).unwrap().level, StressLevel::Low);
        assert_eq!(stress_level(90.0).unwrap().level, StressLevel::VeryLow);
        assert_eq!(stress_level(-1.0), Err(HrvError::NegativeScore(-1.0)));
    }
}
