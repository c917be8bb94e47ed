//! Accelerometer calibration, Euler angles, body orientation, and fall
//! prediction/detection from the resultant acceleration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, Network, NetworkConfig, NnError, TrainHistory};
use crate::signal::ImuSample;
use crate::synth::{self, MotionKind};

/// Gravitational acceleration used to express SI readings in g.
pub const GRAVITY_MS2: f64 = 9.8;

#[derive(Debug, Error, PartialEq)]
pub enum MotionError {
    #[error("calibration needs at least {needed_ms} ms of data, got {got_ms} ms")]
    InsufficientData { needed_ms: i64, got_ms: i64 },
    #[error("device not still during calibration (axis std {std_g:.3} g > {limit_g} g)")]
    NotStill { std_g: f64, limit_g: f64 },
    #[error("acceleration vector is zero")]
    ZeroVector,
    #[error("window has {got} samples, expected {expected}")]
    WindowLengthMismatch { expected: usize, got: usize },
    #[error("timestamps must increase (t={0} ms)")]
    NonMonotonicTime(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuCalibration {
    pub offset_x: f64,
    pub offset_y: f64,
    pub offset_z: f64,
}

impl ImuCalibration {
    pub const NONE: ImuCalibration = ImuCalibration {
        offset_x: 0.0,
        offset_y: 0.0,
        offset_z: 0.0,
    };

    pub fn apply(&self, s: &ImuSample) -> (f64, f64, f64) {
        (s.ax - self.offset_x, s.ay - self.offset_y, s.az - self.offset_z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub min_duration_ms: i64,
    /// Maximum per-axis standard deviation, in g.
    pub max_std_g: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            min_duration_ms: 1000,
            max_std_g: 0.05,
        }
    }
}

pub fn calibrate(samples: &[ImuSample]) -> Result<ImuCalibration, MotionError> {
    calibrate_with(samples, &CalibrationConfig::default())
}

/// Offsets = per-axis mean minus the rest vector (0, 0, 1 g).
///
/// The span is measured including the last sample period, so 50 samples
/// at 50 Hz count as one second.
pub fn calibrate_with(samples: &[ImuSample], cfg: &CalibrationConfig) -> Result<ImuCalibration, MotionError> {
    let span = match samples {
        [first, .., last] => {
            let period = (last.t_ms - first.t_ms) / (samples.len() as i64 - 1);
            last.t_ms - first.t_ms + period
        }
        _ => 0,
    };
    if span < cfg.min_duration_ms {
        return Err(MotionError::InsufficientData {
            needed_ms: cfg.min_duration_ms,
            got_ms: span,
        });
    }
    let n = samples.len() as f64;
    let axes: [fn(&ImuSample) -> f64; 3] = [|s| s.ax, |s| s.ay, |s| s.az];
    let mut means = [0.0; 3];
    for (m, axis) in means.iter_mut().zip(axes) {
        // shifted mean: exact for a constant stream
        let first = axis(&samples[0]);
        *m = first + samples.iter().map(|s| axis(s) - first).sum::<f64>() / n;
        let std = (samples.iter().map(|s| (axis(s) - *m).powi(2)).sum::<f64>() / n).sqrt();
        if std > cfg.max_std_g {
            return Err(MotionError::NotStill {
                std_g: std,
                limit_g: cfg.max_std_g,
            });
        }
    }
    Ok(ImuCalibration {
        offset_x: means[0],
        offset_y: means[1],
        offset_z: means[2] - 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationLabel {
    Upright,
    BendRight,
    BendLeft,
    BendForward,
    BendBack,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll_deg: f64,
    pub pitch_deg: f64,
    /// Tilt of the gravity vector from Z; not usable as heading.
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub label: OrientationLabel,
}

/// Roll, pitch and yaw of a calibrated accelerometer reading, in degrees.
pub fn euler_angles(s: &ImuSample, cal: &ImuCalibration) -> Result<EulerAngles, MotionError> {
    let (x, y, z) = cal.apply(s);
    if x == 0.0 && y == 0.0 && z == 0.0 {
        return Err(MotionError::ZeroVector);
    }
    Ok(EulerAngles {
        roll_deg: y.atan2((x * x + z * z).sqrt()).to_degrees(),
        pitch_deg: x.atan2((y * y + z * z).sqrt()).to_degrees(),
        yaw_deg: (x * x + y * y).sqrt().atan2(z).to_degrees(),
    })
}

/// Bend threshold in degrees for [`orientation_label`].
pub const BEND_THRESHOLD_DEG: f64 = 20.0;

pub fn orientation_label(angles: &EulerAngles) -> OrientationLabel {
    orientation_label_with(angles.roll_deg, angles.pitch_deg, BEND_THRESHOLD_DEG)
}

/// Labels a posture from roll and pitch. The axis with the larger
/// magnitude decides; pitch wins ties.
pub fn orientation_label_with(roll_deg: f64, pitch_deg: f64, threshold_deg: f64) -> OrientationLabel {
    if !roll_deg.is_finite() || !pitch_deg.is_finite() {
        return OrientationLabel::Unknown;
    }
    if roll_deg.abs() < threshold_deg && pitch_deg.abs() < threshold_deg {
        return OrientationLabel::Upright;
    }
    if pitch_deg.abs() >= roll_deg.abs() {
        if pitch_deg > 0.0 {
            OrientationLabel::BendForward
        } else {
            OrientationLabel::BendBack
        }
    } else if roll_deg > 0.0 {
        OrientationLabel::BendRight
    } else {
        OrientationLabel::BendLeft
    }
}

pub fn orientation(s: &ImuSample, cal: &ImuCalibration) -> Result<Orientation, MotionError> {
    let a = euler_angles(s, cal)?;
    Ok(Orientation {
        roll_deg: a.roll_deg,
        pitch_deg: a.pitch_deg,
        yaw_deg: a.yaw_deg,
        label: orientation_label(&a),
    })
}

/// Magnitude of a reading already expressed in g (1.0 at rest).
pub fn resultant_acceleration(s: &ImuSample) -> f64 {
    s.magnitude()
}

/// Magnitude of an SI reading (m/s²) expressed in g.
pub fn resultant_from_si(x: f64, y: f64, z: f64) -> f64 {
    (x * x + y * y + z * z).sqrt() / GRAVITY_MS2
}

/// Fall thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FallConfig {
    /// Falling below this starts a candidate fall, in g.
    pub low_g: f64,
    /// Exceeding this afterwards is the impact, in g.
    pub high_g: f64,
    /// Maximum time from the minimum to the impact.
    pub window_ms: i64,
    /// Minimum drop rate (g/s) for the threshold predictor.
    pub min_drop_rate_g_per_s: f64,
    /// Samples per prediction window.
    pub prediction_len: usize,
}

impl Default for FallConfig {
    fn default() -> Self {
        Self {
            low_g: 0.90,
            high_g: 1.0,
            window_ms: 300,
            min_drop_rate_g_per_s: 1.0,
            prediction_len: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FallEvent {
    pub t_predicted_ms: i64,
    pub t_detected_ms: i64,
    pub min_g: f64,
    pub peak_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallPrediction {
    /// Threshold baseline verdict.
    pub flagged: bool,
    /// Index of the first sample that triggered the baseline.
    pub trigger_index: Option<usize>,
    /// CNN probability of "fall", when a model is supplied.
    pub cnn_score: Option<f64>,
}

/// Threshold baseline: first sample below `low_g` reached with a drop
/// steeper than `min_drop_rate_g_per_s`.
pub fn threshold_trigger(window: &[(i64, f64)], cfg: &FallConfig) -> Option<usize> {
    (1..window.len()).find(|&i| {
        let (t0, g0) = window[i - 1];
        let (t1, g1) = window[i];
        let dt_s = (t1 - t0) as f64 / 1000.0;
        g1 < cfg.low_g && dt_s > 0.0 && (g1 - g0) / dt_s <= -cfg.min_drop_rate_g_per_s
    })
}

/// Normalized CNN input for a prediction window.
pub fn fall_cnn_input(window: &[(i64, f64)]) -> Vec<f64> {
    window.iter().map(|&(_, g)| g - 1.0).collect()
}

pub fn predict_fall(window: &[(i64, f64)], cfg: &FallConfig, model: Option<&Network>) -> Result<FallPrediction, MotionError> {
    if window.len() != cfg.prediction_len {
        return Err(MotionError::WindowLengthMismatch {
            expected: cfg.prediction_len,
            got: window.len(),
        });
    }
    let trigger = threshold_trigger(window, cfg);
    let cnn_score = match model {
        Some(net) => Some(
            net.forward(&fall_cnn_input(window))
                .map_err(|_| MotionError::WindowLengthMismatch {
                    expected: net.config().input_len,
                    got: window.len(),
                })?[1],
        ),
        None => None,
    };
    Ok(FallPrediction {
        flagged: trigger.is_some(),
        trigger_index: trigger,
        cnn_score,
    })
}

/// Three conv layers (two followed by max-pooling) and a softmax over {no fall, fall}.
pub fn fall_network_config(window_len: usize, seed: u64) -> NetworkConfig {
    NetworkConfig {
        input_len: window_len,
        conv_layers: 3,
        filters_per_layer: 8,
        kernel_size: 5,
        conv_stride: 1,
        pool_size: 2,
        pool_stride: 2,
        pooled_layers: 2,
        fc_widths: vec![16, 2],
        classes: 2,
        learning_rate: 0.01,
        momentum: 0.9,
        batch_size: 16,
        class_weighting: false,
        seed,
    }
}

/// Labeled synthetic prediction windows; labels come from [`threshold_trigger`].
pub fn fall_training_corpus(n: usize, cfg: &FallConfig, seed: u64) -> (Vec<Vec<(i64, f64)>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [
        MotionKind::Still,
        MotionKind::Walking,
        MotionKind::SlowSit,
        MotionKind::Fall,
        MotionKind::Stumble,
    ];
    let rate = 50.0;
    let duration = (cfg.prediction_len as f64 * 1000.0 / rate) as i64;
    let mut windows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let trace = synth::motion_trace(kinds[i % kinds.len()], rate, duration, &mut rng);
        labels.push(usize::from(threshold_trigger(&trace, cfg).is_some()));
        windows.push(trace);
    }
    (windows, labels)
}

/// Trains the fall-prediction CNN on a synthetic corpus.
pub fn train_fall_cnn(samples: usize, epochs: usize, cfg: &FallConfig, seed: u64) -> Result<(Network, TrainHistory), NnError> {
    let (windows, labels) = fall_training_corpus(samples, cfg, seed);
    let inputs: Vec<Vec<f64>> = windows.iter().map(|w| fall_cnn_input(w)).collect();
    let mut net = Network::new(fall_network_config(cfg.prediction_len, seed))?;
    let batch = net.config().batch_size;
    let history = nn::fit(&mut net, &inputs, &labels, epochs, batch)?;
    Ok((net, history))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum FallState {
    Idle,
    Dip { t_cross: i64, min_g: f64, t_min: i64 },
    Impact { t_cross: i64, t_detect: i64, min_g: f64, peak_g: f64 },
}

/// Streaming fall detector; one instance per stream.
///
/// A fall is a drop below `low_g` followed by a rise above `high_g` no more
/// than `window_ms` after the lowest sample of the dip. The event is emitted
/// once the acceleration falls back to `high_g` or below, or at `finish`.
#[derive(Debug, Clone)]
pub struct FallDetector {
    cfg: FallConfig,
    state: FallState,
    last_t: Option<i64>,
}

impl FallDetector {
    pub fn new(cfg: FallConfig) -> Self {
        Self {
            cfg,
            state: FallState::Idle,
            last_t: None,
        }
    }

    pub fn push(&mut self, t_ms: i64, g: f64) -> Result<Option<FallEvent>, MotionError> {
        if let Some(prev) = self.last_t {
            if t_ms <= prev {
                return Err(MotionError::NonMonotonicTime(t_ms));
            }
        }
        self.last_t = Some(t_ms);
        let cfg = self.cfg;
        let mut emitted = None;
        self.state = match self.state {
            FallState::Idle => {
                if g < cfg.low_g {
                    FallState::Dip { t_cross: t_ms, min_g: g, t_min: t_ms }
                } else {
                    FallState::Idle
                }
            }
            FallState::Dip { t_cross, min_g, t_min } => {
                if g < min_g {
                    FallState::Dip { t_cross, min_g: g, t_min: t_ms }
                } else if g > cfg.high_g {
                    if t_ms - t_min <= cfg.window_ms {
                        FallState::Impact { t_cross, t_detect: t_ms, min_g, peak_g: g }
                    } else {
                        FallState::Idle
                    }
                } else {
                    FallState::Dip { t_cross, min_g, t_min }
                }
            }
            FallState::Impact { t_cross, t_detect, min_g, peak_g } => {
                if g > cfg.high_g {
                    FallState::Impact { t_cross, t_detect, min_g, peak_g: peak_g.max(g) }
                } else {
                    emitted = Some(FallEvent {
                        t_predicted_ms: t_cross,
                        t_detected_ms: t_detect,
                        min_g,
                        peak_g,
                    });
                    if g < cfg.low_g {
                        FallState::Dip { t_cross: t_ms, min_g: g, t_min: t_ms }
                    } else {
                        FallState::Idle
                    }
                }
            }
        };
        Ok(emitted)
    }

    /// Flushes an impact still in progress at the end of the stream.
    pub fn finish(&mut self) -> Option<FallEvent> {
        let out = match self.state {
            FallState::Impact { t_cross, t_detect, min_g, peak_g } => Some(FallEvent {
                t_predicted_ms: t_cross,
                t_detected_ms: t_detect,
                min_g,
                peak_g,
            }),
            _ => None,
        };
        self.state = FallState::Idle;
        out
    }
}

pub fn detect_fall(stream: &[(i64, f64)], cfg: &FallConfig) -> Result<Vec<FallEvent>, MotionError> {
    let mut det = FallDetector::new(*cfg);
    let mut events = Vec::new();
    for &(t, g) in stream {
        if let Some(e) = det.push(t, g)? {
            events.push(e);
        }
    }
    events.extend(det.finish());
    Ok(events)
}

/// `(t_ms, g)` for each IMU sample.
pub fn resultant_trace(samples: &[ImuSample]) -> Vec<(i64, f64)> {
    samples.iter().map(|s| (s.t_ms, resultant_acceleration(s))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imu(t: i64, x: f64, y: f64, z: f64) -> ImuSample {
        ImuSample::new(t, x, y, z).unwrap()
    }

    fn constant(n: usize, x: f64, y: f64, z: f64) -> Vec<ImuSample> {
        (0..n).map(|i| imu(i as i64 * 20, x, y, z)).collect()
    }

    #[test]
    fn calibration_examples() {
        assert_eq!(calibrate(&constant(50, 0.0, 0.0, 1.0)).unwrap(), ImuCalibration::NONE);
        let c = calibrate(&constant(50, 0.02, -0.01, 1.03)).unwrap();
        assert!((c.offset_x - 0.02).abs() < 1e-12);
        assert!((c.offset_y + 0.01).abs() < 1e-12);
        assert!((c.offset_z - 0.03).abs() < 1e-12);

        let swinging: Vec<ImuSample> = (0..50)
            .map(|i| imu(i * 20, if i % 2 == 0 { 0.5 } else { -0.5 }, 0.0, 1.0))
            .collect();
        assert!(matches!(calibrate(&swinging), Err(MotionError::NotStill { .. })));
        assert!(matches!(
            calibrate(&constant(10, 0.0, 0.0, 1.0)),
            Err(MotionError::InsufficientData { .. })
        ));
    }

    #[test]
    fn euler_examples() {
        let a = euler_angles(&imu(0, 0.0, 0.0, 1.0), &ImuCalibration::NONE).unwrap();
        assert_eq!((a.roll_deg, a.pitch_deg, a.yaw_deg), (0.0, 0.0, 0.0));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let b = euler_angles(&imu(0, 0.0, h, h), &ImuCalibration::NONE).unwrap();
        assert!((b.roll_deg - 45.0).abs() < 1e-6);
        assert_eq!(
            euler_angles(&imu(0, 0.0, 0.0, 0.0), &ImuCalibration::NONE),
            Err(MotionError::ZeroVector)
        );
    }

    #[test]
    fn rest_after_calibration_is_exactly_level() {
        let raw = constant(50, 0.02, -0.01, 1.03);
        let cal = calibrate(&raw).unwrap();
        let a = euler_angles(&raw[0], &cal).unwrap();
        assert_eq!((a.roll_deg, a.pitch_deg), (0.0, 0.0));
    }

    #[test]
    fn orientation_examples() {
        assert_eq!(orientation_label_with(0.0, 0.0, 20.0), OrientationLabel::Upright);
        assert_eq!(orientation_label_with(5.0, 35.0, 20.0), OrientationLabel::BendForward);
        assert_eq!(orientation_label_with(-30.0, 0.0, 20.0), OrientationLabel::BendLeft);
        assert_eq!(orientation_label_with(30.0, -10.0, 20.0), OrientationLabel::BendRight);
        assert_eq!(orientation_label_with(-25.0, -25.0, 20.0), OrientationLabel::BendBack);
        assert_eq!(orientation_label_with(f64::NAN, 0.0, 20.0), OrientationLabel::Unknown);
    }

    #[test]
    fn resultant_examples() {
        assert_eq!(resultant_acceleration(&imu(0, 0.0, 0.0, 1.0)), 1.0);
        assert!((resultant_acceleration(&imu(0, 0.6, 0.0, 0.8)) - 1.0).abs() < 1e-15);
        assert_eq!(resultant_acceleration(&imu(0, 0.0, 0.0, 0.0)), 0.0);
        assert!((resultant_from_si(0.0, 0.0, 9.8) - 1.0).abs() < 1e-15);
    }

    fn at_50hz(gs: &[f64]) -> Vec<(i64, f64)> {
        gs.iter().enumerate().map(|(i, &g)| (i as i64 * 20, g)).collect()
    }

    #[test]
    fn threshold_predictor_examples() {
        let cfg = FallConfig::default();
        let rest = at_50hz(&[1.0; 50]);
        assert!(!predict_fall(&rest, &cfg, None).unwrap().flagged);

        // 1.0 -> 0.4 over 200 ms (10 samples at 50 Hz), i.e. -3 g/s
        let mut gs = vec![1.0; 10];
        gs.extend((1..=10).map(|k| 1.0 - 0.06 * k as f64));
        gs.resize(50, 0.4);
        let p = predict_fall(&at_50hz(&gs), &cfg, None).unwrap();
        let first_below = gs.iter().position(|&g| g < 0.9).unwrap();
        assert_eq!(p.trigger_index, Some(first_below));
        assert_eq!(first_below, 11);

        assert!(matches!(
            predict_fall(&at_50hz(&[1.0; 10]), &cfg, None),
            Err(MotionError::WindowLengthMismatch { expected: 50, got: 10 })
        ));
    }

    #[test]
    fn detects_dip_and_impact() {
        let cfg = FallConfig::default();
        let trace = [(0, 1.0), (50, 0.95), (100, 0.3), (250, 1.8), (300, 1.0), (350, 1.0)];
        let ev = detect_fall(&trace, &cfg).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].min_g, 0.3);
        assert_eq!(ev[0].peak_g, 1.8);
        assert_eq!(ev[0].t_predicted_ms, 100);
        assert_eq!(ev[0].t_detected_ms, 250);
    }

    #[test]
    fn late_recovery_is_not_a_fall() {
        let cfg = FallConfig::default();
        let trace = [(0, 1.0), (100, 0.3), (400, 0.5), (700, 1.8), (750, 1.0)];
        assert!(detect_fall(&trace, &cfg).unwrap().is_empty());
        let flat = at_50hz(&[1.0; 100]);
        assert!(detect_fall(&flat, &cfg).unwrap().is_empty());
    }

    #[test]
    fn impact_at_end_is_flushed() {
        let cfg = FallConfig::default();
        let ev = detect_fall(&[(0, 1.0), (20, 0.2), (40, 2.0)], &cfg).unwrap();
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn non_monotonic_time_rejected() {
        let cfg = FallConfig::default();
        assert_eq!(
            detect_fall(&[(0, 1.0), (0, 1.0)], &cfg),
            Err(MotionError::NonMonotonicTime(0))
        );
    }
}
