//! Synthetic signal generators for tests, demos and the sensor emulator.
//!
//! Beats are sums of Gaussian waves (P, Q, R, S, T) with per-class shapes
//! and random jitter; the beat corpus cuts windows out of rendered streams
//! with the same [`extract_window`] used at inference time.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::classifier::{extract_window, WINDOW_RR_FACTOR};
use crate::signal::{BeatClass, BeatSegment, ImuSample, BEAT_RATE_HZ};

/// Class frequencies of the MIT-BIH beat training corpus (N, S, V, F, Q).
pub const MITBIH_PROPORTIONS: [f64; 5] = [0.8277, 0.0254, 0.0661, 0.0073, 0.0735];

/// One Gaussian wave: offset from the R peak (s), amplitude (mV), width (s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub offset_s: f64,
    pub amplitude: f64,
    pub sigma_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatShape {
    pub waves: Vec<Wave>,
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, v: f64, frac: f64) -> f64 {
    v * (1.0 + rng.gen_range(-frac..=frac))
}

impl BeatShape {
    /// Random morphology for a beat class.
    pub fn sample<R: Rng + ?Sized>(class: BeatClass, rng: &mut R) -> Self {
        // (offset, amplitude, sigma)
        let base: &[(f64, f64, f64)] = match class {
            BeatClass::N => &[
                (-0.16, 0.12, 0.025),
                (-0.025, -0.10, 0.008),
                (0.0, 1.00, 0.010),
                (0.028, -0.20, 0.009),
                (0.28, 0.30, 0.050),
            ],
            BeatClass::S => &[
                (-0.11, -0.08, 0.020),
                (0.0, 0.90, 0.010),
                (0.026, -0.15, 0.009),
                (0.22, 0.18, 0.040),
            ],
            BeatClass::V => &[
                (0.0, 1.30, 0.032),
                (0.07, -0.35, 0.030),
                (0.33, -0.40, 0.070),
            ],
            BeatClass::F => &[
                (-0.15, 0.06, 0.025),
                (0.0, 1.10, 0.020),
                (0.045, -0.25, 0.018),
                (0.30, 0.08, 0.060),
            ],
            BeatClass::Q => &[
                (-0.045, 1.20, 0.003),
                (0.0, 0.80, 0.028),
                (0.06, -0.30, 0.025),
                (0.31, -0.22, 0.060),
            ],
        };
        let waves = base
            .iter()
            .map(|&(o, a, s)| Wave {
                offset_s: o + rng.gen_range(-0.008..=0.008),
                amplitude: jitter(rng, a, 0.2),
                sigma_s: jitter(rng, s, 0.2),
            })
            .collect();
        Self { waves }
    }

    pub fn value_at(&self, dt_s: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| {
                let z = (dt_s - w.offset_s) / w.sigma_s;
                if z.abs() > 8.0 {
                    0.0
                } else {
                    w.amplitude * (-0.5 * z * z).exp()
                }
            })
            .sum()
    }
}

/// A beat placed at an absolute R-peak time.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedBeat {
    pub r_time_s: f64,
    pub class: BeatClass,
    pub shape: BeatShape,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub white_sd: f64,
    pub wander_amplitude: f64,
    pub wander_hz: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            white_sd: 0.015,
            wander_amplitude: 0.05,
            wander_hz: 0.25,
        }
    }
}

/// Renders beats into a uniformly sampled signal.
pub fn render_ecg<R: Rng + ?Sized>(
    beats: &[PlacedBeat],
    rate_hz: f64,
    duration_s: f64,
    noise: NoiseConfig,
    rng: &mut R,
) -> Vec<f64> {
    let n = (duration_s * rate_hz).round() as usize;
    let white = Normal::new(0.0, noise.white_sd.max(1e-300)).unwrap();
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / rate_hz;
            let wander = noise.wander_amplitude * (std::f64::consts::TAU * noise.wander_hz * t + phase).sin();
            let w = if noise.white_sd > 0.0 { white.sample(rng) } else { 0.0 };
            wander + w
        })
        .collect();
    for b in beats {
        let lo = (((b.r_time_s - 0.5) * rate_hz).floor().max(0.0)) as usize;
        let hi = (((b.r_time_s + 0.7) * rate_hz).ceil() as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            *v += b.shape.value_at(i as f64 / rate_hz - b.r_time_s);
        }
    }
    x
}

/// Nominal RR interval following a beat of `class`, relative to the base RR.
fn rr_after<R: Rng + ?Sized>(class: BeatClass, base_rr: f64, rng: &mut R) -> f64 {
    let factor = match class {
        BeatClass::N => rng.gen_range(0.92..1.08),
        BeatClass::S => rng.gen_range(1.10..1.30),
        BeatClass::V => rng.gen_range(1.30..1.60),
        BeatClass::F => rng.gen_range(1.00..1.15),
        BeatClass::Q => rng.gen_range(0.98..1.02),
    };
    base_rr * factor
}

/// Beat sequence with the given classes, starting at `start_s`.
pub fn beat_train<R: Rng + ?Sized>(classes: &[BeatClass], base_rr_s: f64, start_s: f64, rng: &mut R) -> Vec<PlacedBeat> {
    let mut t = start_s;
    let mut out = Vec::with_capacity(classes.len());
    for (k, &class) in classes.iter().enumerate() {
        if k > 0 {
            // a premature beat arrives early
            let prev = classes[k - 1];
            let mut rr = rr_after(prev, base_rr_s, rng);
            if matches!(class, BeatClass::S | BeatClass::V) {
                rr *= rng.gen_range(0.65..0.8);
            }
            t += rr;
        }
        out.push(PlacedBeat {
            r_time_s: t,
            class,
            shape: BeatShape::sample(class, rng),
        });
    }
    out
}

/// Samples a class from `proportions`.
pub fn sample_class<R: Rng + ?Sized>(proportions: &[f64; 5], rng: &mut R) -> BeatClass {
    let total: f64 = proportions.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (c, p) in BeatClass::ALL.iter().zip(proportions) {
        if u < *p {
            return *c;
        }
        u -= p;
    }
    BeatClass::N
}

/// One labeled beat window in the corpus layout.
pub fn beat_segment<R: Rng + ?Sized>(class: BeatClass, rng: &mut R) -> BeatSegment {
    let base_rr = rng.gen_range(0.65..1.1);
    let classes = [BeatClass::N, class, BeatClass::N];
    let beats = beat_train(&classes, base_rr, 0.6, rng);
    let end = beats[2].r_time_s + 1.0;
    let noise = NoiseConfig {
        white_sd: rng.gen_range(0.005..0.03),
        wander_amplitude: rng.gen_range(0.0..0.08),
        wander_hz: rng.gen_range(0.1..0.4),
    };
    let x = render_ecg(&beats, BEAT_RATE_HZ, end, noise, rng);
    let r = (beats[1].r_time_s * BEAT_RATE_HZ).round() as usize;
    let rr_next = (beats[2].r_time_s - beats[1].r_time_s) * BEAT_RATE_HZ;
    let span = (WINDOW_RR_FACTOR * rr_next).round() as usize;
    let w = extract_window(&x, r, span).expect("rendered stream covers the window");
    BeatSegment::new(w, Some(class)).expect("normalized window")
}

/// A labeled corpus with classes drawn from `proportions`.
pub fn beat_corpus<R: Rng + ?Sized>(n: usize, proportions: &[f64; 5], rng: &mut R) -> Vec<BeatSegment> {
    (0..n)
        .map(|_| {
            let c = sample_class(proportions, rng);
            beat_segment(c, rng)
        })
        .collect()
}

/// Continuous ECG with known R-peak sample indices.
pub struct SyntheticEcg {
    pub values: Vec<f64>,
    pub r_peaks: Vec<usize>,
    pub classes: Vec<BeatClass>,
}

pub fn ecg_recording<R: Rng + ?Sized>(
    classes: &[BeatClass],
    base_rr_s: f64,
    rate_hz: f64,
    noise: NoiseConfig,
    rng: &mut R,
) -> SyntheticEcg {
    let beats = beat_train(classes, base_rr_s, 0.5, rng);
    let end = beats.last().map(|b| b.r_time_s + 1.0).unwrap_or(2.0);
    let values = render_ecg(&beats, rate_hz, end, noise, rng);
    SyntheticEcg {
        values,
        r_peaks: beats.iter().map(|b| (b.r_time_s * rate_hz).round() as usize).collect(),
        classes: classes.to_vec(),
    }
}

/// ECG whose RR intervals are exactly `intervals_ms`, noise-free apart from the beats.
pub fn ecg_from_intervals(intervals_ms: &[f64], rate_hz: f64) -> SyntheticEcg {
    let shape = BeatShape {
        waves: vec![
            Wave { offset_s: -0.16, amplitude: 0.12, sigma_s: 0.025 },
            Wave { offset_s: 0.0, amplitude: 1.0, sigma_s: 0.010 },
            Wave { offset_s: 0.028, amplitude: -0.2, sigma_s: 0.009 },
            Wave { offset_s: 0.28, amplitude: 0.3, sigma_s: 0.05 },
        ],
    };
    let mut t = 0.5;
    let mut beats = vec![PlacedBeat { r_time_s: t, class: BeatClass::N, shape: shape.clone() }];
    for rr in intervals_ms {
        t += rr / 1000.0;
        beats.push(PlacedBeat { r_time_s: t, class: BeatClass::N, shape: shape.clone() });
    }
    let noise = NoiseConfig { white_sd: 0.0, wander_amplitude: 0.0, wander_hz: 0.0 };
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let values = render_ecg(&beats, rate_hz, t + 1.0, noise, &mut rng);
    SyntheticEcg {
        values,
        r_peaks: beats.iter().map(|b| (b.r_time_s * rate_hz).round() as usize).collect(),
        classes: vec![BeatClass::N; beats.len()],
    }
}

/// Kinds of accelerometer magnitude traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    /// Rest around 1 g.
    Still,
    /// Gait-like oscillation that stays above 0.9 g.
    Walking,
    /// Slow sag below 0.9 g without a steep drop.
    SlowSit,
    /// Steep drop followed by an impact within 300 ms of the minimum.
    Fall,
    /// Steep drop whose recovery comes too late to count as a fall.
    Stumble,
}

/// Resultant-acceleration trace `(t_ms, g)` sampled at `rate_hz`.
pub fn motion_trace<R: Rng + ?Sized>(kind: MotionKind, rate_hz: f64, duration_ms: i64, rng: &mut R) -> Vec<(i64, f64)> {
    let dt = 1000.0 / rate_hz;
    let n = (duration_ms as f64 / dt).round() as usize;
    let noise = Normal::new(0.0, 0.01).unwrap();
    let onset = rng.gen_range(0.25..0.45) * duration_ms as f64;
    let depth = rng.gen_range(0.1..0.6);
    let fall_ms = rng.gen_range(100.0..180.0);
    let hold = match kind {
        MotionKind::Fall => rng.gen_range(0.0..150.0),
        _ => rng.gen_range(420.0..520.0),
    };
    let peak = rng.gen_range(1.6..2.8);
    let gait_hz = rng.gen_range(1.5..2.2);
    let gait_amp = rng.gen_range(0.03..0.07);
    let sag = rng.gen_range(0.8..0.87);
    let sag_ms = rng.gen_range(600.0..900.0);
    (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            let base = match kind {
                MotionKind::Still => 1.0,
                MotionKind::Walking => 1.0 + gait_amp * (std::f64::consts::TAU * gait_hz * t / 1000.0).sin(),
                MotionKind::SlowSit => {
                    let u = ((t - onset) / sag_ms).clamp(0.0, 1.0);
                    1.0 - (1.0 - sag) * u
                }
                MotionKind::Fall | MotionKind::Stumble => {
                    let s = t - onset;
                    if s < 0.0 {
                        1.0
                    } else if s < fall_ms {
                        1.0 - (1.0 - depth) * s / fall_ms
                    } else if s < fall_ms + hold {
                        depth
                    } else if s < fall_ms + hold + 60.0 {
                        depth + (peak - depth) * (s - fall_ms - hold) / 60.0
                    } else if s < fall_ms + hold + 200.0 {
                        peak - (peak - 1.0) * (s - fall_ms - hold - 60.0) / 140.0
                    } else {
                        1.0
                    }
                }
            };
            let g = if matches!(kind, MotionKind::Still | MotionKind::Walking) {
                base + noise.sample(rng)
            } else {
                base + 0.3 * noise.sample(rng)
            };
            ((t.round()) as i64, g.max(0.0))
        })
        .collect()
}

/// IMU samples at rest whose magnitude follows `trace` along the z axis.
pub fn imu_from_trace(trace: &[(i64, f64)]) -> Vec<ImuSample> {
    trace
        .iter()
        .map(|&(t, g)| ImuSample { t_ms: t, ax: 0.0, ay: 0.0, az: g })
        .collect()
}

/// Zero-mean EMG: noise bursts of the given amplitudes centered at the given times.
pub fn emg_recording<R: Rng + ?Sized>(
    rate_hz: f64,
    duration_s: f64,
    bursts: &[(f64, f64)],
    rest_sd: f64,
    rng: &mut R,
) -> Vec<f64> {
    let n = (duration_s * rate_hz).round() as usize;
    let unit = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|i| {
            let t = i as f64 / rate_hz;
            let envelope: f64 = bursts
                .iter()
                .map(|&(center, amp)| amp * (-0.5 * ((t - center) / 0.12).powi(2)).exp())
                .sum();
            (rest_sd + envelope) * unit.sample(rng)
        })
        .collect()
}
