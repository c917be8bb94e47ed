//! Shared domain types for every signal the analytics touch.
//!
//! All types are immutable after construction. Constructors reject
//! non-finite samples so downstream code can assume finiteness.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Physiological gate for RR intervals, in milliseconds (24 to 240 bpm).
pub const RR_GATE_MS: (f64, f64) = (250.0, 2500.0);

/// Samples per beat window in the preprocessed beat corpus.
pub const BEAT_WINDOW_LEN: usize = 187;

/// Sampling rate the beat windows are expressed at.
pub const BEAT_RATE_HZ: f64 = 125.0;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("signal has no samples")]
    EmptySignal,
    #[error("sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("sampling rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("window [{start_ms}, {start_ms}+{len_ms}) ms is outside a {duration_ms} ms series")]
    OutOfRange {
        start_ms: i64,
        len_ms: i64,
        duration_ms: f64,
    },
    #[error("beat window must have {BEAT_WINDOW_LEN} samples, got {0}")]
    WindowLength(usize),
    #[error("beat window value {value} at {index} is outside [0, 1]")]
    WindowRange { index: usize, value: f64 },
    #[error("RR interval {index} is not positive ({value} ms)")]
    NonPositiveInterval { index: usize, value: f64 },
    #[error("peak indices must be strictly increasing")]
    UnorderedPeaks,
    #[error("IMU sample is not finite")]
    NonFiniteImu,
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("expected header {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("cannot infer sampling rate: {0}")]
    Rate(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Sensor channel a series was recorded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Ecg,
    EmgBicep,
    EmgChest,
    Temperature,
}

impl Channel {
    pub fn is_emg(self) -> bool {
        matches!(self, Channel::EmgBicep | Channel::EmgChest)
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Ecg => "ecg",
            Channel::EmgBicep => "emg_bicep",
            Channel::EmgChest => "emg_chest",
            Channel::Temperature => "temperature",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A uniformly sampled scalar signal.
///
/// Duration is derived from the sample count and rate, never stored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSeries {
    channel: Channel,
    rate_hz: f64,
    t0_ms: i64,
    values: Vec<f64>,
}

impl SampleSeries {
    pub fn new(
        channel: Channel,
        rate_hz: f64,
        t0_ms: i64,
        values: Vec<f64>,
    ) -> Result<Self, SignalError> {
        if !(rate_hz > 0.0) || !rate_hz.is_finite() {
            return Err(SignalError::NonPositiveRate(rate_hz));
        }
        if values.is_empty() {
            return Err(SignalError::EmptySignal);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFiniteSample { index });
        }
        Ok(Self {
            channel,
            rate_hz,
            t0_ms,
            values,
        })
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn t0_ms(&self) -> i64 {
        self.t0_ms
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_ms(&self) -> f64 {
        1000.0 * self.values.len() as f64 / self.rate_hz
    }

    /// Timestamp of sample `index`, rounded to the millisecond.
    pub fn time_of(&self, index: usize) -> i64 {
        self.t0_ms + (index as f64 * 1000.0 / self.rate_hz).round() as i64
    }

    /// Sub-series covering `[start_ms, start_ms + len_ms)` relative to the series start.
    pub fn slice_window(&self, start_ms: i64, len_ms: i64) -> Result<SampleSeries, SignalError> {
        let out_of_range = || SignalError::OutOfRange {
            start_ms,
            len_ms,
            duration_ms: self.duration_ms(),
        };
        if start_ms < 0 || len_ms <= 0 {
            return Err(out_of_range());
        }
        let start = (start_ms as f64 * self.rate_hz / 1000.0).round() as usize;
        let count = (len_ms as f64 * self.rate_hz / 1000.0).round() as usize;
        if count == 0 || start + count > self.values.len() {
            return Err(out_of_range());
        }
        Ok(SampleSeries {
            channel: self.channel,
            rate_hz: self.rate_hz,
            t0_ms: self.t0_ms + start_ms,
            values: self.values[start..start + count].to_vec(),
        })
    }
}

/// Free-function form of [`SampleSeries::new`].
pub fn make_sample_series(
    channel: Channel,
    rate_hz: f64,
    t0_ms: i64,
    values: Vec<f64>,
) -> Result<SampleSeries, SignalError> {
    SampleSeries::new(channel, rate_hz, t0_ms, values)
}

/// RR intervals derived from detected R peaks.
///
/// Intervals outside [`RR_GATE_MS`] are kept for audit but flagged; HRV
/// metrics only consume the accepted ones.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RrSeries {
    intervals_ms: Vec<f64>,
    source_peaks: Vec<usize>,
    flagged: Vec<bool>,
}

impl RrSeries {
    /// Builds the series from strictly increasing peak sample indices.
    pub fn from_peaks(peaks: &[usize], rate_hz: f64) -> Result<Self, SignalError> {
        if !(rate_hz > 0.0) {
            return Err(SignalError::NonPositiveRate(rate_hz));
        }
        if peaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SignalError::UnorderedPeaks);
        }
        let intervals = peaks
            .windows(2)
            .map(|w| (w[1] - w[0]) as f64 * 1000.0 / rate_hz)
            .collect();
        Ok(Self::assemble(intervals, peaks.to_vec()))
    }

    /// Builds the series from intervals alone. Source peaks are synthesized
    /// as cumulative millisecond offsets (a 1 kHz sample grid).
    pub fn from_intervals(intervals_ms: Vec<f64>) -> Result<Self, SignalError> {
        if let Some((index, &value)) = intervals_ms
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            return Err(SignalError::NonPositiveInterval { index, value });
        }
        let mut peaks = Vec::with_capacity(intervals_ms.len() + 1);
        let mut acc = 0.0;
        peaks.push(0);
        for rr in &intervals_ms {
            acc += rr;
            peaks.push(acc.round() as usize);
        }
        Ok(Self::assemble(intervals_ms, peaks))
    }

    fn assemble(intervals_ms: Vec<f64>, source_peaks: Vec<usize>) -> Self {
        let flagged = intervals_ms
            .iter()
            .map(|&rr| !(RR_GATE_MS.0..=RR_GATE_MS.1).contains(&rr))
            .collect();
        Self {
            intervals_ms,
            source_peaks,
            flagged,
        }
    }

    pub fn intervals_ms(&self) -> &[f64] {
        &self.intervals_ms
    }

    pub fn source_peaks(&self) -> &[usize] {
        &self.source_peaks
    }

    pub fn flagged(&self) -> &[bool] {
        &self.flagged
    }

    pub fn len(&self) -> usize {
        self.intervals_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals_ms.is_empty()
    }

    /// Intervals that passed the physiological gate, in order.
    pub fn accepted(&self) -> Vec<f64> {
        self.intervals_ms
            .iter()
            .zip(&self.flagged)
            .filter(|(_, &f)| !f)
            .map(|(&rr, _)| rr)
            .collect()
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }
}

/// Heartbeat classes of the MIT-BIH beat corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum BeatClass {
    /// Normal
    N,
    /// Supraventricular ectopic
    S,
    /// Ventricular ectopic
    V,
    /// Fusion
    F,
    /// Unknown / paced
    Q,
}

impl BeatClass {
    pub const ALL: [BeatClass; 5] = [BeatClass::N, BeatClass::S, BeatClass::V, BeatClass::F, BeatClass::Q];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BeatClass> {
        Self::ALL.get(i).copied()
    }

    pub fn is_abnormal(self) -> bool {
        self != BeatClass::N
    }
}

/// One normalized beat window, optionally labeled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeatSegment {
    window: Vec<f64>,
    label: Option<BeatClass>,
}

impl BeatSegment {
    pub fn new(window: Vec<f64>, label: Option<BeatClass>) -> Result<Self, SignalError> {
        if window.len() != BEAT_WINDOW_LEN {
            return Err(SignalError::WindowLength(window.len()));
        }
        if let Some((index, &value)) = window
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(SignalError::WindowRange { index, value });
        }
        Ok(Self { window, label })
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn label(&self) -> Option<BeatClass> {
        self.label
    }
}

/// One accelerometer reading in units of g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t_ms: i64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

impl ImuSample {
    pub fn new(t_ms: i64, ax: f64, ay: f64, az: f64) -> Result<Self, SignalError> {
        let s = Self { t_ms, ax, ay, az };
        if !s.magnitude().is_finite() {
            return Err(SignalError::NonFiniteImu);
        }
        Ok(s)
    }

    pub fn magnitude(&self) -> f64 {
        (self.ax * self.ax + self.ay * self.ay + self.az * self.az).sqrt()
    }
}

/// Stress band derived from the HRV score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressLevel {
    VeryLow,
    Low,
    Moderate,
    Average,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub hrv_score: f64,
    pub level: StressLevel,
}

/// Sampling rate implied by evenly spaced millisecond timestamps.
pub fn infer_rate_hz(timestamps_ms: &[i64]) -> Result<f64, CsvError> {
    if timestamps_ms.len() < 2 {
        return Err(CsvError::Rate("need at least two samples".into()));
    }
    let span = timestamps_ms[timestamps_ms.len() - 1] - timestamps_ms[0];
    if span <= 0 {
        return Err(CsvError::Rate("timestamps do not advance".into()));
    }
    Ok(1000.0 * (timestamps_ms.len() - 1) as f64 / span as f64)
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>, CsvError> {
    let file = std::fs::File::open(path).map_err(|source| CsvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<(), CsvError> {
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if found != expected {
        return Err(CsvError::Header {
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, CsvError> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let raw = rec.get(i).ok_or_else(|| CsvError::Row {
        line,
        msg: format!("missing column {i}"),
    })?;
    raw.parse().map_err(|_| CsvError::Row {
        line,
        msg: format!("cannot parse {raw:?}"),
    })
}

/// Reads a `t_ms,value` channel file.
///
/// Values are parsed at sensor precision (f32) so that a recording replayed
/// from disk and the same recording carried over the telemetry wire produce
/// identical samples. The rate is inferred from the timestamps unless given.
pub fn read_series_csv(
    path: &Path,
    channel: Channel,
    rate_hz: Option<f64>,
) -> Result<SampleSeries, CsvError> {
    let (ts, vs) = read_pairs_csv(path)?;
    if ts.is_empty() {
        return Err(SignalError::EmptySignal.into());
    }
    series_from_pairs(channel, &ts, vs, rate_hz)
}

/// Raw `(t_ms, value)` columns of a channel file.
pub fn read_pairs_csv(path: &Path) -> Result<(Vec<i64>, Vec<f64>), CsvError> {
    let mut rdr = open_csv(path)?;
    check_header(&mut rdr, &["t_ms", "value"])?;
    let mut ts = Vec::new();
    let mut vs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        ts.push(field::<i64>(&rec, 0)?);
        vs.push(field::<f32>(&rec, 1)? as f64);
    }
    Ok((ts, vs))
}

/// Assembles a series from timestamped samples, inferring the rate if needed.
pub fn series_from_pairs(
    channel: Channel,
    timestamps_ms: &[i64],
    values: Vec<f64>,
    rate_hz: Option<f64>,
) -> Result<SampleSeries, CsvError> {
    let t0 = *timestamps_ms.first().ok_or(SignalError::EmptySignal)?;
    let rate = match rate_hz {
        Some(r) => r,
        None => infer_rate_hz(timestamps_ms)?,
    };
    Ok(SampleSeries::new(channel, rate, t0, values)?)
}

/// Reads a `t_ms,ax,ay,az` IMU file (values in g).
pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>, CsvError> {
    let mut rdr = open_csv(path)?;
    check_header(&mut rdr, &["t_ms", "ax", "ay", "az"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let s = ImuSample::new(
            field::<i64>(&rec, 0)?,
            field::<f32>(&rec, 1)? as f64,
            field::<f32>(&rec, 2)? as f64,
            field::<f32>(&rec, 3)? as f64,
        )?;
        out.push(s);
    }
    Ok(out)
}

/// Writes a `t_ms,value` channel file.
pub fn write_series_csv(path: &Path, series: &SampleSeries) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_ms", "value"])?;
    for (i, v) in series.values().iter().enumerate() {
        w.write_record([series.time_of(i).to_string(), (*v as f32).to_string()])?;
    }
    w.flush().map_err(|source| CsvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Writes a `t_ms,ax,ay,az` IMU file.
pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_ms", "ax", "ay", "az"])?;
    for s in samples {
        w.write_record([
            s.t_ms.to_string(),
            (s.ax as f32).to_string(),
            (s.ay as f32).to_string(),
            (s.az as f32).to_string(),
        ])?;
    }
    w.flush().map_err(|source| CsvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten_seconds() -> SampleSeries {
        let values = (0..1250).map(|i| i as f64).collect();
        SampleSeries::new(Channel::Ecg, 125.0, 1_000, values).unwrap()
    }

    #[test]
    fn constructor_accepts_valid_series() {
        let s = make_sample_series(Channel::Ecg, 125.0, 0, vec![0.1, 0.2]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.values(), &[0.1, 0.2]);
        assert_eq!(s.duration_ms(), 16.0);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert_eq!(
            make_sample_series(Channel::Ecg, 0.0, 0, vec![0.1]),
            Err(SignalError::NonPositiveRate(0.0))
        );
        assert_eq!(
            make_sample_series(Channel::Ecg, 125.0, 0, vec![]),
            Err(SignalError::EmptySignal)
        );
        assert_eq!(
            make_sample_series(Channel::Ecg, 125.0, 0, vec![0.0, f64::NAN]),
            Err(SignalError::NonFiniteSample { index: 1 })
        );
        assert!(make_sample_series(Channel::Ecg, 125.0, 0, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn full_slice_is_identity() {
        let s = ten_seconds();
        let w = s.slice_window(0, 10_000).unwrap();
        assert_eq!(w, s);
    }

    #[test]
    fn slice_offsets_index_and_t0() {
        let s = ten_seconds();
        let w = s.slice_window(2000, 4000).unwrap();
        assert_eq!(w.len(), 500);
        assert_eq!(w.values()[0], 250.0);
        assert_eq!(w.t0_ms(), 3_000);
        assert_eq!(w.rate_hz(), 125.0);
    }

    #[test]
    fn slice_past_end_is_out_of_range() {
        let s = ten_seconds();
        assert!(matches!(
            s.slice_window(9000, 4000),
            Err(SignalError::OutOfRange { .. })
        ));
        assert!(s.slice_window(-1, 10).is_err());
    }

    #[test]
    fn rr_gate_flags_out_of_band_intervals() {
        let rr = RrSeries::from_intervals(vec![100.0, 800.0, 3000.0, 900.0]).unwrap();
        assert_eq!(rr.flagged(), &[true, false, true, false]);
        assert_eq!(rr.accepted(), vec![800.0, 900.0]);
        assert_eq!(rr.source_peaks().len(), rr.len() + 1);
    }

    #[test]
    fn rr_rejects_non_positive() {
        assert!(RrSeries::from_intervals(vec![800.0, 0.0]).is_err());
        assert_eq!(
            RrSeries::from_peaks(&[5, 5], 125.0),
            Err(SignalError::UnorderedPeaks)
        );
    }

    #[test]
    fn beat_segment_validates_shape() {
        assert!(BeatSegment::new(vec![0.0; 187], Some(BeatClass::N)).is_ok());
        assert_eq!(
            BeatSegment::new(vec![0.0; 10], None),
            Err(SignalError::WindowLength(10))
        );
        let mut w = vec![0.0; 187];
        w[3] = 1.5;
        assert!(matches!(
            BeatSegment::new(w, None),
            Err(SignalError::WindowRange { index: 3, .. })
        ));
    }

    #[test]
    fn csv_round_trip_infers_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ecg.csv");
        let s = SampleSeries::new(Channel::Ecg, 250.0, 0, vec![0.25, -0.5, 1.0, 0.125]).unwrap();
        write_series_csv(&path, &s).unwrap();
        let back = read_series_csv(&path, Channel::Ecg, None).unwrap();
        assert_eq!(back.values(), s.values());
        assert!((back.rate_hz() - 250.0).abs() < 1e-12);
    }

    #[test]
    fn csv_rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "time,v\n0,1\n").unwrap();
        assert!(matches!(
            read_series_csv(&path, Channel::Ecg, None),
            Err(CsvError::Header { .. })
        ));
    }

    #[test]
    fn imu_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imu.csv");
        let samples = vec![
            ImuSample::new(0, 0.0, 0.0, 1.0).unwrap(),
            ImuSample::new(20, 0.5, -0.25, 0.75).unwrap(),
        ];
        write_imu_csv(&path, &samples).unwrap();
        assert_eq!(read_imu_csv(&path).unwrap(), samples);
    }
}
