//! The analysis chain shared by offline replay and the ingest service.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mywear_core::classifier::classify_stream;
use mywear_core::emg::{analyze_muscle, ActivityPeak, Intensity};
use mywear_core::hrv::{self, HrvError, HrvTimeDomain};
use mywear_core::motion::{self, FallEvent, ImuCalibration, OrientationLabel};
use mywear_core::nn::Network;
use mywear_core::signal::{
    read_imu_csv, read_series_csv, BeatClass, Channel, ImuSample, SampleSeries, StressLevel, StressReport,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alert::{abnormality_rule, dispatch_alert, Alert, AlertKind, DeliveryRecord, DeliveryStatus, RetryPolicy, Sink, WindowSummary};
use crate::config::{AnalysisConfig, PipelineConfig};
use crate::PipelineError;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Samples from one recording session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordingInputs {
    pub ecg: Option<SampleSeries>,
    pub emg: Vec<SampleSeries>,
    pub imu: Vec<ImuSample>,
}

/// CSV files making up a recording.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InputPaths {
    pub ecg: Option<PathBuf>,
    pub emg_bicep: Option<PathBuf>,
    pub emg_chest: Option<PathBuf>,
    pub imu: Option<PathBuf>,
}

impl RecordingInputs {
    pub fn load(paths: &InputPaths) -> Result<Self, PipelineError> {
        let ecg = paths
            .ecg
            .as_deref()
            .map(|p| read_series_csv(p, Channel::Ecg, None))
            .transpose()?;
        let mut emg = Vec::new();
        for (path, ch) in [(&paths.emg_bicep, Channel::EmgBicep), (&paths.emg_chest, Channel::EmgChest)] {
            if let Some(p) = path {
                emg.push(read_series_csv(p, ch, None)?);
            }
        }
        let imu = match &paths.imu {
            Some(p) => read_imu_csv(p)?,
            None => Vec::new(),
        };
        Ok(Self { ecg, emg, imu })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowStatus {
    Ok,
    NoSignal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareSummary {
    pub sd1_ms: f64,
    pub sd2_ms: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSummary {
    pub counts: BTreeMap<String, usize>,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub index: usize,
    pub start_ms: i64,
    pub end_ms: i64,
    pub status: WindowStatus,
    pub r_peaks: usize,
    pub flagged_intervals: usize,
    pub time_domain: Option<HrvTimeDomain>,
    pub poincare: Option<PoincareSummary>,
    pub stress: Option<StressReport>,
    pub beats: Option<BeatSummary>,
    pub caveats: Vec<String>,
}

impl WindowReport {
    pub fn summary(&self) -> WindowSummary {
        let mut beat_counts = [0; 5];
        if let Some(b) = &self.beats {
            for c in BeatClass::ALL {
                beat_counts[c.index()] = b.counts.get(&format!("{c:?}")).copied().unwrap_or(0);
            }
        }
        WindowSummary {
            t_ms: self.end_ms,
            no_signal: self.status == WindowStatus::NoSignal,
            beat_counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallSection {
    pub analyzed: bool,
    pub samples: usize,
    pub events: Vec<FallEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationSummary {
    pub calibrated: bool,
    pub label_counts: BTreeMap<String, usize>,
    pub final_label: OrientationLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmgSection {
    pub channel: Channel,
    pub intensity: Intensity,
    pub peak_envelope: f64,
    pub peaks: Vec<ActivityPeak>,
}

/// Deterministic analysis output. Holds no wall-clock time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub ecg_rate_hz: Option<f64>,
    pub windows: Vec<WindowReport>,
    pub fall: FallSection,
    pub orientation: Option<OrientationSummary>,
    pub emg: Vec<EmgSection>,
    pub alerts: Vec<Alert>,
    pub notes: Vec<String>,
}

/// Plot series that go to CSV rather than into the report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    /// R-peak sample indices into the full ECG series.
    pub r_peaks: Vec<usize>,
    /// `(window, rr_n, rr_n+1)` Poincaré points.
    pub poincare: Vec<(usize, f64, f64)>,
    pub emg_envelopes: Vec<SampleSeries>,
    pub g_trace: Vec<(i64, f64)>,
}

pub const CONSTANT_RR_CAVEAT: &str =
    "constant_rr: every RR interval is identical, so RMSSD is 0 and the High stress band reflects missing variability";

fn beat_counts_map(counts: [usize; 5]) -> BTreeMap<String, usize> {
    BeatClass::ALL.iter().map(|c| (format!("{c:?}"), counts[c.index()])).collect()
}

fn analyze_window(
    index: usize,
    window: &SampleSeries,
    start_sample: usize,
    cfg: &AnalysisConfig,
    model: Option<&Network>,
    art: &mut Artifacts,
) -> Result<WindowReport, PipelineError> {
    let end_ms = window.t0_ms() + window.duration_ms().round() as i64;
    let mut report = WindowReport {
        index,
        start_ms: window.t0_ms(),
        end_ms,
        status: WindowStatus::Ok,
        r_peaks: 0,
        flagged_intervals: 0,
        time_domain: None,
        poincare: None,
        stress: None,
        beats: None,
        caveats: Vec::new(),
    };
    let peaks = match hrv::detect_r_peaks_with(window, &cfg.detector) {
        Ok(p) => p,
        Err(HrvError::NoPeaksFound) => {
            report.status = WindowStatus::NoSignal;
            return Ok(report);
        }
        Err(e) => return Err(e.into()),
    };
    report.r_peaks = peaks.len();
    art.r_peaks.extend(peaks.iter().map(|p| p + start_sample));

    match hrv::rr_series(&peaks, window.rate_hz()) {
        Ok(rr) => {
            report.flagged_intervals = rr.flagged_count();
            match hrv::time_domain_metrics(&rr, cfg.xx_ms) {
                Ok(td) => {
                    let stress = hrv::stress_level(td.rmssd_ms)?;
                    if td.rmssd_ms == 0.0 && stress.level == StressLevel::High {
                        report.caveats.push(CONSTANT_RR_CAVEAT.to_string());
                    }
                    report.stress = Some(stress);
                    report.time_domain = Some(td);
                }
                Err(e) => report.caveats.push(format!("time-domain metrics unavailable: {e}")),
            }
            match hrv::poincare(&rr) {
                Ok(p) => {
                    art.poincare.extend(p.points.iter().map(|&(a, b)| (index, a, b)));
                    report.poincare = Some(PoincareSummary {
                        sd1_ms: p.sd1_ms,
                        sd2_ms: p.sd2_ms,
                        points: p.points.len(),
                    });
                }
                Err(e) => report.caveats.push(format!("Poincaré metrics unavailable: {e}")),
            }
        }
        Err(e) => report.caveats.push(format!("RR series unavailable: {e}")),
    }

    if let Some(net) = model {
        let stream = classify_stream(net, window, &peaks)?;
        report.beats = Some(BeatSummary {
            counts: beat_counts_map(stream.counts()),
            skipped: stream.skipped.len(),
        });
    }
    Ok(report)
}

fn analyze_ecg(
    ecg: &SampleSeries,
    cfg: &AnalysisConfig,
    model: Option<&Network>,
    art: &mut Artifacts,
) -> Result<Vec<WindowReport>, PipelineError> {
    let total_ms = ecg.duration_ms().floor() as i64;
    let mut windows = Vec::new();
    let mut start = 0i64;
    while start < total_ms {
        let len = cfg.ecg_window_ms.min(total_ms - start);
        if len < cfg.min_window_ms {
            break;
        }
        let w = ecg.slice_window(start, len)?;
        let start_sample = (start as f64 * ecg.rate_hz() / 1000.0).round() as usize;
        windows.push(analyze_window(windows.len(), &w, start_sample, cfg, model, art)?);
        start += cfg.ecg_schedule_ms;
    }
    Ok(windows)
}

fn analyze_motion(imu: &[ImuSample], cfg: &AnalysisConfig, notes: &mut Vec<String>, art: &mut Artifacts) -> Result<(FallSection, Option<OrientationSummary>), PipelineError> {
    if imu.is_empty() {
        notes.push("fall detection skipped: no IMU samples".to_string());
        return Ok((
            FallSection {
                analyzed: false,
                samples: 0,
                events: Vec::new(),
            },
            None,
        ));
    }
    art.g_trace = motion::resultant_trace(imu);
    let events = motion::detect_fall(&art.g_trace, &cfg.fall)?;

    let t0 = imu[0].t_ms;
    let rest: Vec<ImuSample> = imu.iter().take_while(|s| s.t_ms < t0 + 1000).copied().collect();
    let (cal, calibrated) = match motion::calibrate(&rest) {
        Ok(c) => (c, true),
        Err(e) => {
            notes.push(format!("orientation uncalibrated: {e}"));
            (ImuCalibration::NONE, false)
        }
    };
    let mut label_counts = BTreeMap::new();
    let mut final_label = OrientationLabel::Unknown;
    for s in imu {
        let label = match motion::orientation(s, &cal) {
            Ok(o) => o.label,
            Err(_) => OrientationLabel::Unknown,
        };
        *label_counts.entry(format!("{label:?}")).or_insert(0) += 1;
        final_label = label;
    }
    Ok((
        FallSection {
            analyzed: true,
            samples: imu.len(),
            events,
        },
        Some(OrientationSummary {
            calibrated,
            label_counts,
            final_label,
        }),
    ))
}

/// Runs every stage on one recording.
pub fn analyze(
    inputs: &RecordingInputs,
    cfg: &AnalysisConfig,
    model: Option<&Network>,
    device_id: &str,
) -> Result<(Analysis, Artifacts), PipelineError> {
    let mut art = Artifacts::default();
    let mut notes = Vec::new();

    let windows = match &inputs.ecg {
        Some(ecg) => {
            if model.is_none() {
                notes.push("beat classification skipped: no model".to_string());
            }
            analyze_ecg(ecg, cfg, model, &mut art)?
        }
        None => {
            notes.push("ECG analysis skipped: no ECG samples".to_string());
            Vec::new()
        }
    };
    let summaries: Vec<WindowSummary> = windows.iter().map(WindowReport::summary).collect();
    let mut alerts = abnormality_rule(&summaries, &cfg.alerts, device_id);

    let (fall, orientation) = analyze_motion(&inputs.imu, cfg, &mut notes, &mut art)?;
    alerts.extend(fall.events.iter().map(|e| Alert {
        t_ms: e.t_detected_ms,
        device_id: device_id.to_string(),
        kind: AlertKind::FallDetected,
        detail: format!("min {:.2} g, peak {:.2} g", e.min_g, e.peak_g),
        delivery_status: DeliveryStatus::Pending,
    }));
    alerts.sort_by_key(|a| a.t_ms);

    let mut emg = Vec::new();
    for raw in &inputs.emg {
        let m = analyze_muscle(raw, cfg.emg_calibration_max, cfg.emg_rest_ms, &cfg.emg)?;
        emg.push(EmgSection {
            channel: m.channel,
            intensity: m.intensity,
            peak_envelope: m.envelope.values().iter().copied().fold(0.0, f64::max),
            peaks: m.peaks,
        });
        art.emg_envelopes.push(m.envelope);
    }

    Ok((
        Analysis {
            ecg_rate_hz: inputs.ecg.as_ref().map(SampleSeries::rate_hz),
            windows,
            fall,
            orientation,
            emg,
            alerts,
            notes,
        },
        art,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub generated_at_ms: i64,
    pub device_id: String,
    pub config_hash: String,
    pub model_hash: Option<String>,
    pub analysis: Analysis,
    pub deliveries: Vec<DeliveryRecord>,
}

pub fn model_hash(net: &Network) -> String {
    let bytes = serde_json::to_vec(&net.to_model_file()).expect("model serializes");
    hex::encode(Sha256::digest(bytes))
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Output(format!("{}: {e}", path.display()))
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e))
}

/// Writes the report, its plot series and the alert log into `dir`.
pub fn write_outputs(dir: &Path, report: &Report, inputs: &RecordingInputs, art: &Artifacts) -> Result<PathBuf, PipelineError> {
    fs::create_dir_all(dir)?;
    let report_path = dir.join("report.json");
    fs::write(&report_path, serde_json::to_vec_pretty(report)?)?;

    if let Some(ecg) = &inputs.ecg {
        let mut is_peak = vec![false; ecg.len()];
        for &p in &art.r_peaks {
            is_peak[p] = true;
        }
        write_csv(
            &dir.join("ecg.csv"),
            &["t_ms", "value", "r_peak"],
            ecg.values()
                .iter()
                .enumerate()
                .map(|(i, v)| vec![ecg.time_of(i).to_string(), v.to_string(), u8::from(is_peak[i]).to_string()]),
        )?;
        write_csv(
            &dir.join("poincare.csv"),
            &["window", "rr_n_ms", "rr_next_ms"],
            art.poincare.iter().map(|(w, a, b)| vec![w.to_string(), a.to_string(), b.to_string()]),
        )?;
    }
    for env in &art.emg_envelopes {
        write_csv(
            &dir.join(format!("{}_envelope.csv", env.channel().name())),
            &["t_ms", "envelope"],
            env.values()
                .iter()
                .enumerate()
                .map(|(i, v)| vec![env.time_of(i).to_string(), v.to_string()]),
        )?;
    }
    if !art.g_trace.is_empty() {
        write_csv(
            &dir.join("g_trace.csv"),
            &["t_ms", "g"],
            art.g_trace.iter().map(|(t, g)| vec![t.to_string(), g.to_string()]),
        )?;
    }

    let mut log = OpenOptions::new().create(true).append(true).open(dir.join("alerts.jsonl"))?;
    for d in &report.deliveries {
        writeln!(log, "{}", serde_json::to_string(d)?)?;
    }
    Ok(report_path)
}

/// Everything a replay or an ingest session needs besides the samples.
pub struct RunContext<'a> {
    pub config: &'a PipelineConfig,
    pub model: Option<&'a Network>,
    pub model_hash: Option<String>,
    pub sinks: Vec<Sink>,
    pub policy: RetryPolicy,
}

/// Analysis, alert dispatch and output for one recording. Outputs go to
/// `<output_dir>/<device_id>/`.
pub fn run_recording(ctx: &RunContext<'_>, inputs: &RecordingInputs, device_id: &str) -> Result<(Report, PathBuf), PipelineError> {
    let (analysis, art) = analyze(inputs, &ctx.config.analysis, ctx.model, device_id)?;
    let mut deliveries = Vec::with_capacity(analysis.alerts.len());
    for a in &analysis.alerts {
        deliveries.push(dispatch_alert(a, &ctx.sinks, &ctx.policy)?);
    }
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        generated_at_ms: now_ms(),
        device_id: device_id.to_string(),
        config_hash: ctx.config.hash(),
        model_hash: ctx.model_hash.clone(),
        analysis,
        deliveries,
    };
    let path = write_outputs(&ctx.config.output_dir.join(device_id), &report, inputs, &art)?;
    Ok((report, path))
}
