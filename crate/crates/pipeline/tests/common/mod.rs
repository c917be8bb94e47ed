#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use mywear_core::nn::{Network, NetworkConfig};
use mywear_core::signal::{write_imu_csv, write_series_csv, Channel, SampleSeries};
use mywear_core::synth::{self, MotionKind, NoiseConfig, MITBIH_PROPORTIONS};
use mywear_pipeline::analysis::InputPaths;
use mywear_pipeline::config::{AnalysisConfig, PipelineConfig, SinkConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Writes a short multi-channel recording and returns its paths.
pub fn write_recording(dir: &Path, seed: u64, ecg_seconds: f64, with_imu: bool) -> InputPaths {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (ecg_seconds / 0.8) as usize;
    let classes: Vec<_> = (0..n).map(|_| synth::sample_class(&MITBIH_PROPORTIONS, &mut rng)).collect();
    let ecg = synth::ecg_recording(&classes, 0.8, 250.0, NoiseConfig::default(), &mut rng);
    let ecg_path = dir.join("ecg.csv");
    write_series_csv(&ecg_path, &SampleSeries::new(Channel::Ecg, 250.0, 0, ecg.values).unwrap()).unwrap();

    let emg = synth::emg_recording(1000.0, 6.0, &[(2.5, 0.6), (4.5, 0.3)], 0.02, &mut rng);
    let emg_path = dir.join("emg_bicep.csv");
    write_series_csv(&emg_path, &SampleSeries::new(Channel::EmgBicep, 1000.0, 0, emg).unwrap()).unwrap();

    let imu_path = dir.join("imu.csv");
    let samples = if with_imu {
        let mut trace = synth::motion_trace(MotionKind::Still, 50.0, 2000, &mut rng);
        let offset = trace.last().unwrap().0 + 20;
        trace.extend(
            synth::motion_trace(MotionKind::Fall, 50.0, 2000, &mut rng)
                .into_iter()
                .map(|(t, g)| (t + offset, g)),
        );
        synth::imu_from_trace(&trace)
    } else {
        Vec::new()
    };
    write_imu_csv(&imu_path, &samples).unwrap();

    InputPaths {
        ecg: Some(ecg_path),
        emg_bicep: Some(emg_path),
        emg_chest: None,
        imu: Some(imu_path),
    }
}

/// Short windows so a one-minute recording yields several.
pub fn test_config(out: &Path) -> PipelineConfig {
    PipelineConfig {
        listen_addr: "127.0.0.1:0".into(),
        output_dir: out.to_path_buf(),
        analysis: AnalysisConfig {
            ecg_window_ms: 20_000,
            ecg_schedule_ms: 25_000,
            min_window_ms: 5_000,
            ..AnalysisConfig::default()
        },
        sinks: SinkConfig {
            stdout: false,
            file: Some(out.join("sink.jsonl")),
            backoff_ms: 5,
            backoff_cap_ms: 20,
            ..SinkConfig::default()
        },
        ..PipelineConfig::default()
    }
}

/// An untrained but deterministic classifier; enough for transport checks.
pub fn model() -> Network {
    Network::new(NetworkConfig {
        seed: 11,
        ..NetworkConfig::default()
    })
    .unwrap()
}

/// Minimal HTTP endpoint that answers every request with `status` and
/// records the request bodies.
pub struct Webhook {
    pub url: String,
    pub bodies: Arc<Mutex<Vec<String>>>,
}

pub fn webhook(status: u16) -> Webhook {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/alerts", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let sink = bodies.clone();
    thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(mut conn) = conn else { continue };
            let mut reader = BufReader::new(conn.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            sink.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
            let _ = write!(conn, "HTTP/1.1 {status} X\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
        }
    });
    Webhook { url, bodies }
}

/// An address nothing listens on.
pub fn dead_url() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}/alerts")
}

pub fn out_dir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}
