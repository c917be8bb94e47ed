//! TCP ingest service and the sensor emulator that feeds it.
//!
//! A session is a sequence of length-prefixed messages on one connection.
//! Every non-empty message is one telemetry frame from a single device. An
//! empty message ends a recording: the server analyzes what it has buffered
//! and answers with a [`SessionReply`]. Rejections are answered the same way
//! before the connection is closed.

use std::collections::{HashMap, HashSet};
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use mywear_core::nn::Network;
use mywear_core::signal::{read_imu_csv, read_pairs_csv, series_from_pairs, Channel, ImuSample};
use mywear_core::telemetry::{
    decode_imu, decode_samples, encode_imu, encode_samples, read_message, write_message, DeviceId,
    FrameChannel, KeyStore, Opener, Sealer, TelemetryError, TelemetryFrame,
};
use serde::{Deserialize, Serialize};

use crate::alert::sinks_from_config;
use crate::analysis::{run_recording, InputPaths, RecordingInputs, Report, RunContext};
use crate::config::PipelineConfig;
use crate::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyStatus {
    Ok,
    Rejected,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReply {
    pub status: ReplyStatus,
    pub reason: Option<String>,
    pub report: Option<Report>,
}

impl SessionReply {
    fn rejected(reason: impl Into<String>) -> Self {
        Self {
            status: ReplyStatus::Rejected,
            reason: Some(reason.into()),
            report: None,
        }
    }
}

struct Shared {
    config: PipelineConfig,
    keys: KeyStore,
    model: Option<Network>,
    model_hash: Option<String>,
    /// Last accepted sequence number per device, kept across sessions.
    last_seq: Mutex<HashMap<DeviceId, u64>>,
    active: Mutex<HashSet<DeviceId>>,
    sessions: AtomicUsize,
}

/// Running service; dropped handles keep the listener alive until `shutdown`.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and waits for open sessions to finish.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    /// Blocks until the acceptor thread exits.
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

/// Starts the ingest service on `config.listen_addr`.
pub fn serve(config: PipelineConfig, keys: KeyStore, model: Option<Network>) -> Result<ServerHandle, PipelineError> {
    config.validate()?;
    let listener = TcpListener::bind(&config.listen_addr)?;
    let addr = listener.local_addr()?;
    let model_hash = model.as_ref().map(crate::analysis::model_hash);
    let shared = Arc::new(Shared {
        config,
        keys,
        model,
        model_hash,
        last_seq: Mutex::new(HashMap::new()),
        active: Mutex::new(HashSet::new()),
        sessions: AtomicUsize::new(0),
    });
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let acceptor = thread::spawn(move || {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        for conn in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            workers.retain(|w| !w.is_finished());
            let shared = shared.clone();
            workers.push(thread::spawn(move || {
                let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                if let Err(e) = handle_connection(stream, &shared) {
                    log::warn!("session {peer}: {e}");
                }
            }));
        }
        for w in workers {
            let _ = w.join();
        }
    });
    log::info!("listening on {addr}");
    Ok(ServerHandle {
        addr,
        stop,
        acceptor: Some(acceptor),
    })
}

#[derive(Default)]
struct Buffers {
    channels: HashMap<Channel, (Vec<i64>, Vec<f64>)>,
    imu: Vec<ImuSample>,
}

impl Buffers {
    fn push(&mut self, channel: FrameChannel, payload: &[u8]) -> Result<(), TelemetryError> {
        match channel.series_channel() {
            Some(ch) => {
                let (ts, vs) = self.channels.entry(ch).or_default();
                for (t, v) in decode_samples(payload)? {
                    ts.push(t);
                    vs.push(v as f64);
                }
            }
            None => self.imu.extend(decode_imu(payload)?),
        }
        Ok(())
    }

    fn is_empty(&self) -> bool {
        self.channels.is_empty() && self.imu.is_empty()
    }

    fn take_inputs(&mut self) -> Result<RecordingInputs, PipelineError> {
        let mut channels = std::mem::take(&mut self.channels);
        let mut series = |ch: Channel| -> Result<Option<_>, PipelineError> {
            match channels.remove(&ch) {
                Some((ts, vs)) => Ok(Some(series_from_pairs(ch, &ts, vs, None)?)),
                None => Ok(None),
            }
        };
        let ecg = series(Channel::Ecg)?;
        let emg = [series(Channel::EmgBicep)?, series(Channel::EmgChest)?]
            .into_iter()
            .flatten()
            .collect();
        Ok(RecordingInputs {
            ecg,
            emg,
            imu: std::mem::take(&mut self.imu),
        })
    }
}

struct SessionGuard<'a> {
    shared: &'a Shared,
    device: Option<(DeviceId, Opener)>,
}

impl Drop for SessionGuard<'_> {
    fn drop(&mut self) {
        if let Some((id, opener)) = &self.device {
            if let Some(s) = opener.last_seq() {
                self.shared.last_seq.lock().unwrap().insert(*id, s);
            }
            self.shared.active.lock().unwrap().remove(id);
        }
        self.shared.sessions.fetch_sub(1, Ordering::SeqCst);
    }
}

fn reply(w: &mut BufWriter<TcpStream>, r: &SessionReply) -> Result<(), PipelineError> {
    write_message(w, &serde_json::to_vec(r)?)?;
    Ok(())
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> Result<(), PipelineError> {
    let n = shared.sessions.fetch_add(1, Ordering::SeqCst) + 1;
    let mut guard = SessionGuard { shared, device: None };
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    if n > shared.config.max_sessions {
        return reply(&mut writer, &SessionReply::rejected("server at session capacity"));
    }
    let (sinks, policy) = sinks_from_config(&shared.config.sinks);
    let ctx = RunContext {
        config: &shared.config,
        model: shared.model.as_ref(),
        model_hash: shared.model_hash.clone(),
        sinks,
        policy,
    };
    let mut buffers = Buffers::default();
    let mut dropped = 0usize;

    while let Some(msg) = read_message(&mut reader)? {
        if msg.is_empty() {
            let Some((id, _)) = &guard.device else {
                reply(&mut writer, &SessionReply::rejected("end of recording before any frame"))?;
                continue;
            };
            let result = buffers
                .take_inputs()
                .and_then(|inputs| run_recording(&ctx, &inputs, &id.to_string()));
            let r = match result {
                Ok((report, path)) => {
                    log::info!("device {id}: report written to {}", path.display());
                    SessionReply {
                        status: ReplyStatus::Ok,
                        reason: (dropped > 0).then(|| format!("{dropped} replayed frames dropped")),
                        report: Some(report),
                    }
                }
                Err(e) => SessionReply {
                    status: ReplyStatus::Error,
                    reason: Some(e.to_string()),
                    report: None,
                },
            };
            reply(&mut writer, &r)?;
            dropped = 0;
            continue;
        }

        let frame = match TelemetryFrame::from_bytes(&msg) {
            Ok(f) => f,
            Err(e) => return reply(&mut writer, &SessionReply::rejected(e.to_string())),
        };
        let opener = match &mut guard.device {
            Some((id, opener)) if *id == frame.device_id => opener,
            Some((id, _)) => {
                let reason = format!("frame from {} on a session for {id}", frame.device_id);
                return reply(&mut writer, &SessionReply::rejected(reason));
            }
            None => {
                let Some(key) = shared.keys.get(&frame.device_id) else {
                    log::warn!("rejected unpaired device {}", frame.device_id);
                    return reply(&mut writer, &SessionReply::rejected(format!("device {} is not paired", frame.device_id)));
                };
                if !shared.active.lock().unwrap().insert(frame.device_id) {
                    return reply(&mut writer, &SessionReply::rejected("device already has an open session"));
                }
                let mut opener = Opener::new(key.clone());
                if let Some(&last) = shared.last_seq.lock().unwrap().get(&frame.device_id) {
                    opener.resume_after(last);
                }
                &mut guard.device.insert((frame.device_id, opener)).1
            }
        };
        match opener.open(&frame) {
            Ok((channel, payload)) => {
                if let Err(e) = buffers.push(channel, &payload) {
                    return reply(&mut writer, &SessionReply::rejected(e.to_string()));
                }
            }
            Err(e @ TelemetryError::ReplayedSequence { .. }) => {
                log::warn!("device {}: dropped frame: {e}", frame.device_id);
                dropped += 1;
            }
            Err(e) => {
                log::warn!("device {}: closing session: {e}", frame.device_id);
                return reply(&mut writer, &SessionReply::rejected(e.to_string()));
            }
        }
    }
    if !buffers.is_empty() {
        log::warn!("connection closed with unfinished recording; buffered samples discarded");
    }
    Ok(())
}

/// Default number of samples carried by one emulated frame.
pub const EMULATOR_FRAME_SAMPLES: usize = 250;

fn read_f32_pairs(path: &Path) -> Result<Vec<(i64, f32)>, PipelineError> {
    let (ts, vs) = read_pairs_csv(path)?;
    // values were parsed as f32 and widened, so narrowing is exact
    Ok(ts.into_iter().zip(vs.into_iter().map(|v| v as f32)).collect())
}

/// Seals a recording into frames in channel order: ECG, bicep, chest, IMU.
pub fn recording_frames(sealer: &mut Sealer, paths: &InputPaths, frame_samples: usize) -> Result<Vec<TelemetryFrame>, PipelineError> {
    let frame_samples = frame_samples.max(1);
    let mut frames = Vec::new();
    for (path, ch) in [
        (&paths.ecg, FrameChannel::Ecg),
        (&paths.emg_bicep, FrameChannel::EmgBicep),
        (&paths.emg_chest, FrameChannel::EmgChest),
    ] {
        if let Some(p) = path {
            for chunk in read_f32_pairs(p)?.chunks(frame_samples) {
                frames.push(sealer.seal_next(ch, &encode_samples(chunk))?);
            }
        }
    }
    if let Some(p) = &paths.imu {
        for chunk in read_imu_csv(p)?.chunks(frame_samples) {
            frames.push(sealer.seal_next(FrameChannel::Imu, &encode_imu(chunk))?);
        }
    }
    Ok(frames)
}

/// Streams a recorded session to a running service and returns its reply.
pub fn emulate<A: ToSocketAddrs>(addr: A, sealer: &mut Sealer, paths: &InputPaths, frame_samples: usize) -> Result<SessionReply, PipelineError> {
    let frames = recording_frames(sealer, paths, frame_samples)?;
    let stream = TcpStream::connect(addr)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    for f in &frames {
        if let Err(e) = write_message(&mut writer, &f.to_bytes()) {
            // the server may have rejected us; prefer its reason over the broken pipe
            return match read_message(&mut reader) {
                Ok(Some(msg)) => Ok(serde_json::from_slice(&msg)?),
                _ => Err(e.into()),
            };
        }
    }
    write_message(&mut writer, &[])?;
    match read_message(&mut reader)? {
        Some(msg) => Ok(serde_json::from_slice(&msg)?),
        None => Err(PipelineError::Protocol("server closed without replying".into())),
    }
}
