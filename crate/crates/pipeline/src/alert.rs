//! Abnormality rule engine and alert delivery.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use mywear_core::signal::BeatClass;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AlertRule, SinkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    AbnormalBeat,
    PotentialHeartFailure,
    FallDetected,
    NoSignal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryStatus {
    Pending,
    Delivered,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub t_ms: i64,
    pub device_id: String,
    pub kind: AlertKind,
    pub detail: String,
    pub delivery_status: DeliveryStatus,
}

/// What the rule engine needs to know about one ECG window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    /// End of the window.
    pub t_ms: i64,
    /// No usable signal, so no beats could be labeled.
    pub no_signal: bool,
    /// Beat counts in N, S, V, F, Q order.
    pub beat_counts: [usize; 5],
}

impl WindowSummary {
    pub fn normal(t_ms: i64) -> Self {
        Self {
            t_ms,
            no_signal: false,
            beat_counts: [1, 0, 0, 0, 0],
        }
    }

    pub fn with_beat(t_ms: i64, class: BeatClass) -> Self {
        let mut beat_counts = [0; 5];
        beat_counts[class.index()] = 1;
        Self {
            t_ms,
            no_signal: false,
            beat_counts,
        }
    }

    pub fn no_signal(t_ms: i64) -> Self {
        Self {
            t_ms,
            no_signal: true,
            beat_counts: [0; 5],
        }
    }

    pub fn abnormal_beats(&self) -> usize {
        self.beat_counts[1..].iter().sum()
    }
}

fn describe_counts(counts: &[usize; 5]) -> String {
    BeatClass::ALL[1..]
        .iter()
        .zip(&counts[1..])
        .filter(|(_, &n)| n > 0)
        .map(|(c, n)| format!("{c:?}:{n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Turns per-window summaries (in time order) into alerts.
///
/// Each abnormal window raises `AbnormalBeat`. Reaching
/// `consecutive_abnormal` abnormal windows in a row also raises
/// `PotentialHeartFailure` and starts the count again. A normal window or a
/// window without signal breaks the run; the latter raises `NoSignal`.
pub fn abnormality_rule(windows: &[WindowSummary], rule: &AlertRule, device_id: &str) -> Vec<Alert> {
    let alert = |t_ms, kind, detail: String| Alert {
        t_ms,
        device_id: device_id.to_string(),
        kind,
        detail,
        delivery_status: DeliveryStatus::Pending,
    };
    let mut out = Vec::new();
    let mut run = 0;
    for w in windows {
        if w.no_signal {
            run = 0;
            out.push(alert(w.t_ms, AlertKind::NoSignal, "no R peaks; check electrode contact".into()));
            continue;
        }
        if w.abnormal_beats() < rule.abnormal_beat_threshold {
            run = 0;
            continue;
        }
        out.push(alert(w.t_ms, AlertKind::AbnormalBeat, describe_counts(&w.beat_counts)));
        run += 1;
        if run >= rule.consecutive_abnormal {
            out.push(alert(
                w.t_ms,
                AlertKind::PotentialHeartFailure,
                format!("{run} consecutive abnormal windows"),
            ));
            run = 0;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sink {
    Stdout,
    File(PathBuf),
    Webhook(String),
}

impl Sink {
    pub fn name(&self) -> String {
        match self {
            Sink::Stdout => "stdout".into(),
            Sink::File(p) => format!("file:{}", p.display()),
            Sink::Webhook(u) => format!("webhook:{u}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff: Duration,
    pub backoff_cap: Duration,
    pub timeout: Duration,
}

impl RetryPolicy {
    fn delay_after(&self, attempt: u32) -> Duration {
        self.backoff
            .saturating_mul(1u32 << (attempt - 1).min(16))
            .min(self.backoff_cap)
    }
}

pub fn sinks_from_config(cfg: &SinkConfig) -> (Vec<Sink>, RetryPolicy) {
    let mut sinks = Vec::new();
    if cfg.stdout {
        sinks.push(Sink::Stdout);
    }
    if let Some(p) = &cfg.file {
        sinks.push(Sink::File(p.clone()));
    }
    if let Some(u) = &cfg.webhook_url {
        sinks.push(Sink::Webhook(u.clone()));
    }
    let policy = RetryPolicy {
        attempts: cfg.attempts,
        backoff: Duration::from_millis(cfg.backoff_ms),
        backoff_cap: Duration::from_millis(cfg.backoff_cap_ms),
        timeout: Duration::from_millis(cfg.timeout_ms),
    };
    (sinks, policy)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DispatchError {
    #[error("no alert sinks configured")]
    NoSinks,
    #[error("{sink} unavailable after {attempts} attempts: {last_error}")]
    SinkUnavailable {
        sink: String,
        attempts: u32,
        last_error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkOutcome {
    pub sink: String,
    pub delivered: bool,
    pub attempts: u32,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub alert: Alert,
    pub outcomes: Vec<SinkOutcome>,
}

/// One alert as a single JSON line.
pub fn alert_json_line(alert: &Alert) -> String {
    let mut s = serde_json::to_string(alert).expect("alert serializes");
    s.push('\n');
    s
}

fn send_once(sink: &Sink, line: &str, timeout: Duration) -> Result<(), String> {
    match sink {
        Sink::Stdout => {
            let mut out = std::io::stdout().lock();
            out.write_all(line.as_bytes()).and_then(|_| out.flush()).map_err(|e| e.to_string())
        }
        Sink::File(path) => OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(|e| e.to_string()),
        Sink::Webhook(url) => {
            let agent = ureq::AgentBuilder::new().timeout(timeout).build();
            agent
                .post(url)
                .set("Content-Type", "application/json")
                .send_string(line.trim_end())
                .map(|_| ())
                .map_err(|e| e.to_string())
        }
    }
}

fn deliver(sink: &Sink, line: &str, policy: &RetryPolicy) -> Result<u32, DispatchError> {
    let mut last_error = String::new();
    for attempt in 1..=policy.attempts {
        match send_once(sink, line, policy.timeout) {
            Ok(()) => return Ok(attempt),
            Err(e) => {
                log::warn!("alert delivery to {} failed (attempt {attempt}): {e}", sink.name());
                last_error = e;
                if attempt < policy.attempts {
                    thread::sleep(policy.delay_after(attempt));
                }
            }
        }
    }
    Err(DispatchError::SinkUnavailable {
        sink: sink.name(),
        attempts: policy.attempts,
        last_error,
    })
}

/// Sends `alert` to every sink, retrying each with capped exponential
/// backoff. The alert counts as delivered only if every sink accepted it.
pub fn dispatch_alert(alert: &Alert, sinks: &[Sink], policy: &RetryPolicy) -> Result<DeliveryRecord, DispatchError> {
    if sinks.is_empty() {
        return Err(DispatchError::NoSinks);
    }
    let mut sent = alert.clone();
    sent.delivery_status = DeliveryStatus::Pending;
    let line = alert_json_line(&sent);
    let outcomes: Vec<SinkOutcome> = sinks
        .iter()
        .map(|s| match deliver(s, &line, policy) {
            Ok(attempts) => SinkOutcome {
                sink: s.name(),
                delivered: true,
                attempts,
                error: None,
            },
            Err(e) => SinkOutcome {
                sink: s.name(),
                delivered: false,
                attempts: policy.attempts,
                error: Some(e.to_string()),
            },
        })
        .collect();
    sent.delivery_status = if outcomes.iter().all(|o| o.delivered) {
        DeliveryStatus::Delivered
    } else {
        DeliveryStatus::Failed
    };
    Ok(DeliveryRecord { alert: sent, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(alerts: &[Alert]) -> Vec<AlertKind> {
        alerts.iter().map(|a| a.kind).collect()
    }

    #[test]
    fn rule_table() {
        use AlertKind::*;
        let r = AlertRule::default();
        let n = WindowSummary::normal;
        let a = |t| WindowSummary::with_beat(t, BeatClass::V);
        assert!(abnormality_rule(&[n(1), n(2)], &r, "d").is_empty());
        assert_eq!(
            kinds(&abnormality_rule(&[a(1), a(2)], &r, "d")),
            [AbnormalBeat, AbnormalBeat, PotentialHeartFailure]
        );
        assert_eq!(kinds(&abnormality_rule(&[a(1), n(2), a(3)], &r, "d")), [AbnormalBeat, AbnormalBeat]);
        // the run restarts after escalating
        assert_eq!(
            kinds(&abnormality_rule(&[a(1), a(2), a(3)], &r, "d")),
            [AbnormalBeat, AbnormalBeat, PotentialHeartFailure, AbnormalBeat]
        );
        assert_eq!(
            kinds(&abnormality_rule(&[a(1), WindowSummary::no_signal(2), a(3)], &r, "d")),
            [AbnormalBeat, NoSignal, AbnormalBeat]
        );
    }

    #[test]
    fn count_threshold_damps_single_beats() {
        let r = AlertRule {
            abnormal_beat_threshold: 2,
            consecutive_abnormal: 2,
        };
        let one = WindowSummary::with_beat(1, BeatClass::S);
        let two = WindowSummary {
            t_ms: 2,
            no_signal: false,
            beat_counts: [10, 1, 1, 0, 0],
        };
        let out = abnormality_rule(&[one, two], &r, "d");
        assert_eq!(kinds(&out), [AlertKind::AbnormalBeat]);
        assert_eq!(out[0].detail, "S:1 V:1");
        assert_eq!(out[0].t_ms, 2);
    }

    #[test]
    fn json_line_is_single_line() {
        let a = Alert {
            t_ms: 5,
            device_id: "00".into(),
            kind: AlertKind::FallDetected,
            detail: "two\nlines".into(),
            delivery_status: DeliveryStatus::Pending,
        };
        let line = alert_json_line(&a);
        assert!(line.ends_with('\n'));
        assert_eq!(line.matches('\n').count(), 1);
        let back: Alert = serde_json::from_str(&line).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn backoff_is_capped() {
        let p = RetryPolicy {
            attempts: 10,
            backoff: Duration::from_millis(100),
            backoff_cap: Duration::from_millis(350),
            timeout: Duration::from_secs(1),
        };
        let d: Vec<u128> = (1..6).map(|a| p.delay_after(a).as_millis()).collect();
        assert_eq!(d, [100, 200, 350, 350, 350]);
    }

    #[test]
    fn no_sinks_is_an_error() {
        let a = abnormality_rule(&[WindowSummary::no_signal(0)], &AlertRule::default(), "d").remove(0);
        let p = sinks_from_config(&SinkConfig::default()).1;
        assert_eq!(dispatch_alert(&a, &[], &p), Err(DispatchError::NoSinks));
    }
}
