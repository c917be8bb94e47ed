//! End-to-end orchestration for the garment analytics: offline replay, the
//! encrypted ingest service, the alert engine and report output.

use std::io;
use std::path::PathBuf;

use mywear_core::classifier::ClassifierError;
use mywear_core::emg::EmgError;
use mywear_core::hrv::HrvError;
use mywear_core::motion::MotionError;
use mywear_core::nn::{Network, NnError};
use mywear_core::signal::{CsvError, SignalError};
use mywear_core::telemetry::TelemetryError;
use thiserror::Error;

pub mod alert;
pub mod analysis;
pub mod config;
pub mod service;

use alert::{sinks_from_config, DispatchError};
use analysis::{model_hash, run_recording, InputPaths, RecordingInputs, Report, RunContext};
use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Hrv(#[from] HrvError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Emg(#[from] EmgError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error("output: {0}")]
    Output(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

/// Loads the beat classifier named in the config, if any.
pub fn load_model(config: &PipelineConfig) -> Result<Option<Network>, PipelineError> {
    config.model_path.as_deref().map(Network::load).transpose().map_err(Into::into)
}

/// Analyzes recorded CSV files as if they had been streamed by `device_id`.
pub fn replay(config: &PipelineConfig, paths: &InputPaths, device_id: &str) -> Result<(Report, PathBuf), PipelineError> {
    config.validate()?;
    let model = load_model(config)?;
    replay_with_model(config, model.as_ref(), paths, device_id)
}

pub fn replay_with_model(
    config: &PipelineConfig,
    model: Option<&Network>,
    paths: &InputPaths,
    device_id: &str,
) -> Result<(Report, PathBuf), PipelineError> {
    let inputs = RecordingInputs::load(paths)?;
    let (sinks, policy) = sinks_from_config(&config.sinks);
    let ctx = RunContext {
        config,
        model,
        model_hash: model.map(model_hash),
        sinks,
        policy,
    };
    run_recording(&ctx, &inputs, device_id)
}
