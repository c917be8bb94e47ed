//! Pipeline configuration, read from TOML.
//!
//! Every key is optional. A full file with the defaults:
//!
//! ```toml
//! model_path = "model.json"        # beat classifier; classification is skipped if absent
//! key_store = "keys.json"
//! listen_addr = "127.0.0.1:7878"
//! max_sessions = 64
//! output_dir = "out"
//! seed = 0
//!
//! [analysis]
//! ecg_window_ms = 240000           # 4 min
//! ecg_schedule_ms = 1200000        # one window every 20 min
//! min_window_ms = 10000            # shorter trailing windows are dropped
//! xx_ms = 50.0
//! emg_calibration_max = 1.0
//! emg_rest_ms = 1000.0
//!
//! [analysis.detector]
//! refractory_ms = 200.0
//! integration_ms = 150.0
//! threshold_ratio = 0.5
//! search_ms = 120.0
//!
//! [analysis.fall]
//! low_g = 0.9
//! high_g = 1.0
//! window_ms = 300
//! min_drop_rate_g_per_s = 1.0
//! prediction_len = 50
//!
//! [analysis.emg]
//! rms_window_ms = 100.0
//! k_sigma = 3.0
//! min_separation_ms = 250.0
//!
//! [analysis.alerts]
//! abnormal_beat_threshold = 1
//! consecutive_abnormal = 2
//!
//! [sinks]
//! stdout = true
//! # file = "alerts-out.jsonl"
//! # webhook_url = "http://localhost:9000/alerts"
//! attempts = 3
//! backoff_ms = 100
//! backoff_cap_ms = 1000
//! timeout_ms = 2000
//! ```

use std::path::{Path, PathBuf};

use mywear_core::emg::EmgConfig;
use mywear_core::hrv::DetectorConfig;
use mywear_core::motion::FallConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlertRule {
    /// Abnormal beats needed to call a window abnormal.
    pub abnormal_beat_threshold: usize,
    /// Abnormal windows in a row that escalate to a heart-failure alert.
    pub consecutive_abnormal: usize,
}

impl Default for AlertRule {
    fn default() -> Self {
        Self {
            abnormal_beat_threshold: 1,
            consecutive_abnormal: 2,
        }
    }
}

/// Settings that influence analysis output; hashed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub ecg_window_ms: i64,
    pub ecg_schedule_ms: i64,
    pub min_window_ms: i64,
    pub xx_ms: f64,
    pub emg_calibration_max: f64,
    pub emg_rest_ms: f64,
    pub detector: DetectorConfig,
    pub fall: FallConfig,
    pub emg: EmgConfig,
    pub alerts: AlertRule,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            ecg_window_ms: 240_000,
            ecg_schedule_ms: 1_200_000,
            min_window_ms: 10_000,
            xx_ms: 50.0,
            emg_calibration_max: 1.0,
            emg_rest_ms: 1000.0,
            detector: DetectorConfig::default(),
            fall: FallConfig::default(),
            emg: EmgConfig::default(),
            alerts: AlertRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkConfig {
    pub stdout: bool,
    pub file: Option<PathBuf>,
    pub webhook_url: Option<String>,
    pub attempts: u32,
    pub backoff_ms: u64,
    pub backoff_cap_ms: u64,
    pub timeout_ms: u64,
}

impl Default for SinkConfig {
    fn default() -> Self {
        Self {
            stdout: true,
            file: None,
            webhook_url: None,
            attempts: 3,
            backoff_ms: 100,
            backoff_cap_ms: 1000,
            timeout_ms: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model_path: Option<PathBuf>,
    pub key_store: PathBuf,
    pub listen_addr: String,
    pub max_sessions: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub analysis: AnalysisConfig,
    pub sinks: SinkConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model_path: None,
            key_store: PathBuf::from("keys.json"),
            listen_addr: "127.0.0.1:7878".to_string(),
            max_sessions: 64,
            output_dir: PathBuf::from("out"),
            seed: 0,
            analysis: AnalysisConfig::default(),
            sinks: SinkConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        let a = &self.analysis;
        if a.ecg_window_ms <= 0 || a.min_window_ms <= 0 {
            return bad("ECG window lengths must be positive");
        }
        if a.ecg_schedule_ms < a.ecg_window_ms {
            return bad("ecg_schedule_ms must be at least ecg_window_ms");
        }
        if a.min_window_ms > a.ecg_window_ms {
            return bad("min_window_ms must not exceed ecg_window_ms");
        }
        let positive = [
            a.xx_ms,
            a.emg_calibration_max,
            a.emg_rest_ms,
            a.detector.refractory_ms,
            a.detector.integration_ms,
            a.detector.threshold_ratio,
            a.detector.search_ms,
            a.fall.low_g,
            a.fall.high_g,
            a.fall.min_drop_rate_g_per_s,
            a.emg.rms_window_ms,
            a.emg.k_sigma,
            a.emg.min_separation_ms,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("thresholds and window lengths must be positive and finite");
        }
        if a.fall.low_g >= a.fall.high_g {
            return bad("fall low_g must be below high_g");
        }
        if a.fall.window_ms <= 0 || a.fall.prediction_len == 0 {
            return bad("fall window must be positive");
        }
        if a.alerts.abnormal_beat_threshold == 0 || a.alerts.consecutive_abnormal == 0 {
            return bad("alert thresholds must be at least 1");
        }
        if self.max_sessions == 0 {
            return bad("max_sessions must be at least 1");
        }
        let s = &self.sinks;
        if !s.stdout && s.file.is_none() && s.webhook_url.is_none() {
            return bad("at least one alert sink is required");
        }
        if s.attempts == 0 {
            return bad("sink attempts must be at least 1");
        }
        Ok(())
    }

    /// SHA-256 of the analysis settings.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.analysis).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml_str("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn documented_example_parses() {
        let doc: String = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start().to_string() + "\n")
            .collect();
        let cfg = PipelineConfig::from_toml_str(&doc).unwrap();
        let mut expected = PipelineConfig::default();
        expected.model_path = Some("model.json".into());
        assert_eq!(cfg, expected);
    }

    #[test]
    fn partial_sections_and_rejections() {
        let cfg = PipelineConfig::from_toml_str("[analysis.fall]\nwindow_ms = 500\n").unwrap();
        assert_eq!(cfg.analysis.fall.window_ms, 500);
        assert_eq!(cfg.analysis.fall.low_g, 0.9);

        for text in [
            "[analysis]\necg_schedule_ms = 1000\n",
            "[analysis.fall]\nlow_g = 1.2\n",
            "[analysis.alerts]\nconsecutive_abnormal = 0\n",
            "[sinks]\nstdout = false\n",
            "unknown = 1\n",
        ] {
            assert!(PipelineConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn hash_tracks_analysis_settings_only() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.analysis.xx_ms = 20.0;
        assert_ne!(a.hash(), b.hash());
    }
}
