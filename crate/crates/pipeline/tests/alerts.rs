mod common;

use std::time::{Duration, Instant};

use mywear_core::signal::BeatClass;
use mywear_pipeline::alert::{
    abnormality_rule, dispatch_alert, Alert, AlertKind, DeliveryStatus, RetryPolicy, Sink, WindowSummary,
};
use mywear_pipeline::config::AlertRule;

fn alert() -> Alert {
    Alert {
        t_ms: 1200,
        device_id: "00000000000000a1".into(),
        kind: AlertKind::AbnormalBeat,
        detail: "V:1".into(),
        delivery_status: DeliveryStatus::Pending,
    }
}

fn policy() -> RetryPolicy {
    RetryPolicy {
        attempts: 3,
        backoff: Duration::from_millis(10),
        backoff_cap: Duration::from_millis(15),
        timeout: Duration::from_millis(500),
    }
}

#[test]
fn webhook_success_is_delivered() {
    let hook = common::webhook(200);
    let rec = dispatch_alert(&alert(), &[Sink::Webhook(hook.url.clone())], &policy()).unwrap();
    assert_eq!(rec.alert.delivery_status, DeliveryStatus::Delivered);
    assert_eq!(rec.outcomes[0].attempts, 1);
    let bodies = hook.bodies.lock().unwrap();
    let got: Alert = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(got.kind, AlertKind::AbnormalBeat);
}

#[test]
fn webhook_down_fails_after_three_attempts() {
    let started = Instant::now();
    let rec = dispatch_alert(&alert(), &[Sink::Webhook(common::dead_url())], &policy()).unwrap();
    assert_eq!(rec.alert.delivery_status, DeliveryStatus::Failed);
    assert_eq!(rec.outcomes[0].attempts, 3);
    assert!(rec.outcomes[0].error.as_ref().unwrap().contains("unavailable after 3 attempts"));
    // two capped pauses of 10 and 15 ms
    assert!(started.elapsed() >= Duration::from_millis(25));
}

#[test]
fn server_error_is_retried() {
    let hook = common::webhook(503);
    let rec = dispatch_alert(&alert(), &[Sink::Webhook(hook.url.clone())], &policy()).unwrap();
    assert_eq!(rec.alert.delivery_status, DeliveryStatus::Failed);
    assert_eq!(hook.bodies.lock().unwrap().len(), 3);
}

#[test]
fn one_failing_sink_does_not_block_the_others() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("alerts.jsonl");
    let sinks = [Sink::Webhook(common::dead_url()), Sink::File(file.clone())];
    let rec = dispatch_alert(&alert(), &sinks, &policy()).unwrap();
    assert_eq!(rec.alert.delivery_status, DeliveryStatus::Failed);
    assert!(!rec.outcomes[0].delivered);
    assert!(rec.outcomes[1].delivered);
    let text = std::fs::read_to_string(file).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn rule_is_a_pure_function_of_the_label_sequence() {
    let seq: Vec<WindowSummary> = (0..40)
        .map(|i| match (i * 7) % 5 {
            0 | 3 => WindowSummary::with_beat(i, BeatClass::S),
            4 => WindowSummary::no_signal(i),
            _ => WindowSummary::normal(i),
        })
        .collect();
    let a = abnormality_rule(&seq, &AlertRule::default(), "d");
    let b = abnormality_rule(&seq, &AlertRule::default(), "d");
    assert_eq!(a, b);
    // every escalation is preceded by two abnormal-beat alerts since the last reset
    let mut run = 0;
    for al in &a {
        match al.kind {
            AlertKind::AbnormalBeat => run += 1,
            AlertKind::PotentialHeartFailure => {
                assert!(run >= 2);
                run = 0;
            }
            _ => {}
        }
    }
}
