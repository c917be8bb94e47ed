use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mywear_core::classifier::{self, evaluate, load_mitbih_segments, stratified_split, write_mitbih};
use mywear_core::emg::analyze_muscle;
use mywear_core::hrv::{self, detect_r_peaks_with};
use mywear_core::motion::{self, FallConfig};
use mywear_core::nn::{Network, NetworkConfig};
use mywear_core::signal::{read_imu_csv, read_series_csv, write_imu_csv, write_series_csv, BeatSegment, Channel, SampleSeries};
use mywear_core::synth::{self, MotionKind, NoiseConfig, MITBIH_PROPORTIONS};
use mywear_core::telemetry::{
    decode_imu, decode_samples, DeviceId, FrameChannel, KeyStore, Opener, Sealer, TelemetryFrame,
};
use mywear_pipeline::analysis::InputPaths;
use mywear_pipeline::config::PipelineConfig;
use mywear_pipeline::service::{emulate, serve, ReplyStatus, EMULATOR_FRAME_SAMPLES};
use mywear_pipeline::{load_model, replay, PipelineError};
use rand::rngs::OsRng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "mywear", version, about = "Smart-garment vital-sign analytics")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Recording {
    #[arg(long)]
    ecg: Option<PathBuf>,
    #[arg(long)]
    emg_bicep: Option<PathBuf>,
    #[arg(long)]
    emg_chest: Option<PathBuf>,
    #[arg(long)]
    imu: Option<PathBuf>,
}

impl Recording {
    fn paths(&self) -> InputPaths {
        InputPaths {
            ecg: self.ecg.clone(),
            emg_bicep: self.emg_bicep.clone(),
            emg_chest: self.emg_chest.clone(),
            imu: self.imu.clone(),
        }
    }
}

#[derive(Args)]
struct BeatData {
    /// Beat corpus in the 187-sample + label CSV layout.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate this many synthetic beats instead of reading --data.
    #[arg(long, default_value_t = 12_000)]
    synthetic: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmgChannel {
    Bicep,
    Chest,
}

#[derive(Clone, Copy, ValueEnum)]
enum WireChannel {
    Ecg,
    EmgBicep,
    EmgChest,
    Temperature,
    Imu,
}

impl From<WireChannel> for FrameChannel {
    fn from(c: WireChannel) -> Self {
        match c {
            WireChannel::Ecg => FrameChannel::Ecg,
            WireChannel::EmgBicep => FrameChannel::EmgBicep,
            WireChannel::EmgChest => FrameChannel::EmgChest,
            WireChannel::Temperature => FrameChannel::Temperature,
            WireChannel::Imu => FrameChannel::Imu,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Analyze recorded CSV files and write a report bundle.
    Replay {
        #[command(flatten)]
        rec: Recording,
        #[arg(long, default_value = "0000000000000000")]
        device_id: DeviceId,
    },
    /// Run the encrypted ingest service.
    Serve,
    /// Stream recorded CSV files to a running service as encrypted frames.
    Emulate {
        #[command(flatten)]
        rec: Recording,
        #[arg(long)]
        device_id: DeviceId,
        /// Service address; defaults to the configured listen address.
        #[arg(long)]
        addr: Option<String>,
        #[arg(long, default_value_t = EMULATOR_FRAME_SAMPLES)]
        frame_samples: usize,
        /// First sequence number; defaults to the current time in ms.
        #[arg(long)]
        start_seq: Option<u64>,
    },
    /// HRV metrics and stress level of an ECG recording.
    Hrv {
        #[arg(long)]
        ecg: PathBuf,
        #[arg(long)]
        xx_ms: Option<f64>,
    },
    /// Train the beat classifier.
    Train {
        #[command(flatten)]
        data: BeatData,
        /// Held-out corpus; otherwise a stratified split of the training data.
        #[arg(long)]
        test_data: Option<PathBuf>,
        #[arg(long, default_value_t = 0.18)]
        test_fraction: f64,
        #[arg(long, default_value_t = 6)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long)]
        class_weighting: bool,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Evaluate a trained beat classifier.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: BeatData,
    },
    /// Label every beat of an ECG recording.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ecg: PathBuf,
    },
    /// Fall events in an IMU recording, with optional CNN prediction scores.
    Fall {
        #[arg(long)]
        imu: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train the fall-prediction CNN on synthetic motion.
    TrainFall {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value = "fall-model.json")]
        out: PathBuf,
    },
    /// Body orientation from an IMU recording.
    Orient {
        #[arg(long)]
        imu: PathBuf,
        /// Skip calibration against the first second of data.
        #[arg(long)]
        no_calibrate: bool,
    },
    /// Muscle activity of one EMG channel.
    Emg {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long, value_enum, default_value = "bicep")]
        channel: EmgChannel,
        #[arg(long)]
        calib_max: f64,
    },
    /// Pair a device and store its key.
    Keygen {
        /// 16 hex digits; random if omitted.
        #[arg(long)]
        device_id: Option<DeviceId>,
        /// Key store file; defaults to the configured one.
        #[arg(long)]
        keys: Option<PathBuf>,
    },
    /// Seal a CSV recording into one telemetry frame.
    Encrypt {
        #[arg(long)]
        device_id: DeviceId,
        #[arg(long)]
        keys: Option<PathBuf>,
        #[arg(long)]
        seq: u64,
        #[arg(long, value_enum)]
        channel: WireChannel,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Open a telemetry frame and write its samples as CSV.
    Decrypt {
        #[arg(long)]
        keys: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic recordings for trying the other commands.
    Synth {
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
        #[arg(long, default_value_t = 25.0)]
        ecg_minutes: f64,
        /// Beats for a synthetic corpus file; none if 0.
        #[arg(long, default_value_t = 0)]
        beats: usize,
    },
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

fn print_json(v: &impl serde::Serialize) -> Result<(), PipelineError> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_keys(path: &Path) -> Result<KeyStore, PipelineError> {
    if path.exists() {
        Ok(KeyStore::load(path)?)
    } else {
        Ok(KeyStore::new())
    }
}

fn beat_data(data: &BeatData, seed: u64) -> Result<Vec<BeatSegment>, PipelineError> {
    match &data.data {
        Some(p) => Ok(load_mitbih_segments(p)?),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(synth::beat_corpus(data.synthetic, &MITBIH_PROPORTIONS, &mut rng))
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let seed = config.seed;

    match cli.command {
        Command::Replay { rec, device_id } => {
            let (report, path) = replay(&config, &rec.paths(), &device_id.to_string())?;
            eprintln!("report written to {}", path.display());
            print_json(&json!({
                "report": path,
                "windows": report.analysis.windows.len(),
                "alerts": report.analysis.alerts,
                "notes": report.analysis.notes,
            }))?;
        }
        Command::Serve => {
            let keys = load_keys(&config.key_store)?;
            if keys.is_empty() {
                log::warn!("no paired devices in {}", config.key_store.display());
            }
            let model = load_model(&config)?;
            let handle = serve(config, keys, model)?;
            eprintln!("listening on {}", handle.local_addr());
            handle.wait();
        }
        Command::Emulate {
            rec,
            device_id,
            addr,
            frame_samples,
            start_seq,
        } => {
            let keys = load_keys(&config.key_store)?;
            let key = keys
                .get(&device_id)
                .ok_or_else(|| PipelineError::Config(format!("device {device_id} is not in the key store")))?;
            let mut sealer = Sealer::new(key.clone());
            sealer.resume_after(start_seq.unwrap_or(now_ms() as u64).saturating_sub(1));
            let addr = addr.unwrap_or_else(|| config.listen_addr.clone());
            let reply = emulate(addr.as_str(), &mut sealer, &rec.paths(), frame_samples)?;
            print_json(&reply)?;
            if reply.status != ReplyStatus::Ok {
                return Err(PipelineError::Protocol(reply.reason.unwrap_or_default()));
            }
        }
        Command::Hrv { ecg, xx_ms } => {
            let series = read_series_csv(&ecg, Channel::Ecg, None)?;
            let peaks = detect_r_peaks_with(&series, &config.analysis.detector)?;
            let rr = hrv::rr_series(&peaks, series.rate_hz())?;
            let td = hrv::time_domain_metrics(&rr, xx_ms.unwrap_or(config.analysis.xx_ms))?;
            let poincare = hrv::poincare(&rr).ok();
            let stress = hrv::stress_level(td.rmssd_ms)?;
            print_json(&json!({
                "r_peaks": peaks.len(),
                "flagged_intervals": rr.flagged_count(),
                "time_domain": td,
                "poincare": poincare.map(|p| json!({"sd1_ms": p.sd1_ms, "sd2_ms": p.sd2_ms, "points": p.points})),
                "stress": stress,
            }))?;
        }
        Command::Train {
            data,
            test_data,
            test_fraction,
            epochs,
            batch,
            lr,
            class_weighting,
            out,
        } => {
            let all = beat_data(&data, seed)?;
            let (train, test) = match &test_data {
                Some(p) => (all, load_mitbih_segments(p)?),
                None => stratified_split(&all, test_fraction, seed),
            };
            let mut net = Network::new(NetworkConfig {
                learning_rate: lr,
                batch_size: batch,
                class_weighting,
                seed,
                ..NetworkConfig::default()
            })?;
            eprintln!("training on {} beats, testing on {}", train.len(), test.len());
            let history = classifier::train(&mut net, &train, epochs, batch)?;
            for (e, (l, a)) in history.loss.iter().zip(&history.accuracy).enumerate() {
                eprintln!("epoch {:>3}  loss {l:.4}  train accuracy {a:.2}%", e + 1);
            }
            net.save(&out)?;
            eprintln!("model written to {}", out.display());
            if !test.is_empty() {
                print_json(&evaluate(&net, &test)?)?;
            }
        }
        Command::Eval { model, data } => {
            let net = Network::load(&model)?;
            let segments = beat_data(&data, seed)?;
            print_json(&evaluate(&net, &segments)?)?;
        }
        Command::Classify { model, ecg } => {
            let net = Network::load(&model)?;
            let series = read_series_csv(&ecg, Channel::Ecg, None)?;
            let peaks = detect_r_peaks_with(&series, &config.analysis.detector)?;
            let stream = classifier::classify_stream(&net, &series, &peaks)?;
            print_json(&json!({
                "counts": stream.counts(),
                "beats": stream.beats,
                "skipped": stream.skipped,
            }))?;
        }
        Command::Fall { imu, model } => {
            let samples = read_imu_csv(&imu)?;
            let cfg: FallConfig = config.analysis.fall;
            let trace = motion::resultant_trace(&samples);
            let events = motion::detect_fall(&trace, &cfg)?;
            let net = model.as_deref().map(Network::load).transpose()?;
            let step = (cfg.prediction_len / 2).max(1);
            let mut predictions = Vec::new();
            let mut start = 0;
            while start + cfg.prediction_len <= trace.len() {
                let w = &trace[start..start + cfg.prediction_len];
                let p = motion::predict_fall(w, &cfg, net.as_ref())?;
                if p.flagged || p.cnn_score.is_some_and(|s| s >= 0.5) {
                    predictions.push(json!({"t_start_ms": w[0].0, "prediction": p}));
                }
                start += step;
            }
            print_json(&json!({"events": events, "flagged_windows": predictions}))?;
        }
        Command::TrainFall { samples, epochs, out } => {
            let (net, history) = motion::train_fall_cnn(samples, epochs, &config.analysis.fall, seed)?;
            if let (Some(l), Some(a)) = (history.loss.last(), history.accuracy.last()) {
                eprintln!("final loss {l:.4}, train accuracy {a:.2}%");
            }
            net.save(&out)?;
            eprintln!("model written to {}", out.display());
        }
        Command::Orient { imu, no_calibrate } => {
            let samples = read_imu_csv(&imu)?;
            let cal = if no_calibrate {
                motion::ImuCalibration::NONE
            } else {
                let t0 = samples.first().map_or(0, |s| s.t_ms);
                let rest: Vec<_> = samples.iter().take_while(|s| s.t_ms < t0 + 1000).copied().collect();
                motion::calibrate(&rest)?
            };
            let rows: Vec<_> = samples
                .iter()
                .map(|s| motion::orientation(s, &cal).map(|o| json!({"t_ms": s.t_ms, "orientation": o})))
                .collect::<Result<_, _>>()?;
            print_json(&json!({"calibration": cal, "samples": rows}))?;
        }
        Command::Emg {
            signal,
            channel,
            calib_max,
        } => {
            let ch = match channel {
                EmgChannel::Bicep => Channel::EmgBicep,
                EmgChannel::Chest => Channel::EmgChest,
            };
            let raw = read_series_csv(&signal, ch, None)?;
            let a = &config.analysis;
            let m = analyze_muscle(&raw, calib_max, a.emg_rest_ms, &a.emg)?;
            let envelope: Vec<(i64, f64)> = m
                .envelope
                .values()
                .iter()
                .enumerate()
                .map(|(i, &v)| (m.envelope.time_of(i), v))
                .collect();
            print_json(&json!({
                "channel": m.channel,
                "intensity": m.intensity,
                "peaks": m.peaks,
                "envelope": envelope,
            }))?;
        }
        Command::Keygen { device_id, keys } => {
            let path = keys.unwrap_or(config.key_store.clone());
            let mut store = load_keys(&path)?;
            let id = device_id.unwrap_or_else(|| {
                let mut b = [0u8; 8];
                rand::RngCore::fill_bytes(&mut OsRng, &mut b);
                DeviceId(b)
            });
            let key = store.pair(id, &mut OsRng, now_ms())?;
            store.save(&path)?;
            print_json(&json!({"device_id": key.device_id, "issued_at_ms": key.issued_at_ms, "key_store": path}))?;
        }
        Command::Encrypt {
            device_id,
            keys,
            seq,
            channel,
            input,
            out,
        } => {
            let store = load_keys(&keys.unwrap_or(config.key_store.clone()))?;
            let key = store
                .get(&device_id)
                .ok_or_else(|| PipelineError::Config(format!("device {device_id} is not in the key store")))?;
            let channel = FrameChannel::from(channel);
            let payload = match channel.series_channel() {
                Some(ch) => {
                    let s = read_series_csv(&input, ch, None)?;
                    let pairs: Vec<(i64, f32)> =
                        s.values().iter().enumerate().map(|(i, &v)| (s.time_of(i), v as f32)).collect();
                    mywear_core::telemetry::encode_samples(&pairs)
                }
                None => mywear_core::telemetry::encode_imu(&read_imu_csv(&input)?),
            };
            let frame = Sealer::new(key.clone()).seal(seq, channel, &payload)?;
            std::fs::write(&out, frame.to_bytes())?;
            eprintln!("{} byte frame written to {}", frame.to_bytes().len(), out.display());
        }
        Command::Decrypt { keys, input, out } => {
            let store = load_keys(&keys.unwrap_or(config.key_store.clone()))?;
            let frame = TelemetryFrame::from_bytes(&std::fs::read(&input)?)?;
            let key = store
                .get(&frame.device_id)
                .ok_or_else(|| PipelineError::Config(format!("device {} is not in the key store", frame.device_id)))?;
            let (channel, payload) = Opener::new(key.clone()).open(&frame)?;
            let count = match channel.series_channel() {
                Some(ch) => {
                    let pairs = decode_samples(&payload)?;
                    if let Some(out) = &out {
                        let ts: Vec<i64> = pairs.iter().map(|p| p.0).collect();
                        let vs = pairs.iter().map(|p| p.1 as f64).collect();
                        write_series_csv(out, &mywear_core::signal::series_from_pairs(ch, &ts, vs, None)?)?;
                    }
                    pairs.len()
                }
                None => {
                    let imu = decode_imu(&payload)?;
                    if let Some(out) = &out {
                        write_imu_csv(out, &imu)?;
                    }
                    imu.len()
                }
            };
            print_json(&json!({"device_id": frame.device_id, "seq": frame.seq, "channel": channel, "samples": count}))?;
        }
        Command::Synth { out, ecg_minutes, beats } => write_fixtures(&out, ecg_minutes, beats, seed)?,
    }
    Ok(())
}

fn write_fixtures(out: &Path, ecg_minutes: f64, beats: usize, seed: u64) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = 250.0;
    let base_rr = 0.8;
    let n = (ecg_minutes * 60.0 / base_rr) as usize;
    let classes: Vec<_> = (0..n).map(|_| synth::sample_class(&MITBIH_PROPORTIONS, &mut rng)).collect();
    let ecg = synth::ecg_recording(&classes, base_rr, rate, NoiseConfig::default(), &mut rng);
    write_series_csv(&out.join("ecg.csv"), &SampleSeries::new(Channel::Ecg, rate, 0, ecg.values)?)?;

    for (name, ch, bursts) in [
        ("emg_bicep.csv", Channel::EmgBicep, vec![(3.0, 0.8), (6.0, 0.4)]),
        ("emg_chest.csv", Channel::EmgChest, vec![(4.0, 0.3)]),
    ] {
        let v = synth::emg_recording(1000.0, 8.0, &bursts, 0.02, &mut rng);
        write_series_csv(&out.join(name), &SampleSeries::new(ch, 1000.0, 0, v)?)?;
    }

    let mut trace = synth::motion_trace(MotionKind::Still, 50.0, 2000, &mut rng);
    for kind in [MotionKind::Walking, MotionKind::Fall, MotionKind::Still] {
        let offset = trace.last().map_or(0, |s| s.0 + 20);
        trace.extend(synth::motion_trace(kind, 50.0, 2000, &mut rng).into_iter().map(|(t, g)| (t + offset, g)));
    }
    write_imu_csv(&out.join("imu.csv"), &synth::imu_from_trace(&trace))?;

    if beats > 0 {
        write_mitbih(&out.join("beats.csv"), &synth::beat_corpus(beats, &MITBIH_PROPORTIONS, &mut rng))?;
    }
    eprintln!("fixtures written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
