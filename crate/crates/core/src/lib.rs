//! Analytics for a smart garment that monitors body vitals.
//!
//! ECG is turned into heart rate, HRV metrics and a stress band; beats are
//! classified by a small 1-D convolutional network; accelerometer data
//! yields orientation and falls; EMG yields muscle activity intensity; and
//! every sensor batch can be sealed into an authenticated telemetry frame.

pub mod classifier;
pub mod emg;
pub mod hrv;
pub mod motion;
pub mod nn;
pub mod signal;
pub mod synth;
pub mod telemetry;
