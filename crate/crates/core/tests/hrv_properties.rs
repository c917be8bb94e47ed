use mywear_core::hrv::{heart_rate_bpm, poincare, stress_level, time_domain_metrics, detect_r_peaks, REFRACTORY_MS};
use mywear_core::signal::{Channel, RrSeries, SampleSeries, StressLevel};
use mywear_core::synth::ecg_from_intervals;
use proptest::prelude::*;

fn rr_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(300.0f64..2000.0, 3..max_len)
}

fn var(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

proptest! {
    #[test]
    fn sdnn_matches_moment_identity(rr in rr_vec(200)) {
        let m = time_domain_metrics(&RrSeries::from_intervals(rr.clone()).unwrap(), 50.0).unwrap();
        let n = rr.len() as f64;
        let mean_sq = rr.iter().map(|r| r * r).sum::<f64>() / n;
        let mean = rr.iter().sum::<f64>() / n;
        let rhs = mean_sq - mean * mean;
        // the moment form cancels catastrophically; scale the bound by mean²
        prop_assert!((m.sdnn_ms.powi(2) - rhs).abs() <= 1e-9 * mean * mean);
    }

    #[test]
    fn poincare_preserves_total_variance(rr in rr_vec(200)) {
        let p = poincare(&RrSeries::from_intervals(rr.clone()).unwrap()).unwrap();
        let x: Vec<f64> = rr[..rr.len() - 1].to_vec();
        let y: Vec<f64> = rr[1..].to_vec();
        let total = var(&x) + var(&y);
        prop_assert!((p.sd1_ms.powi(2) + p.sd2_ms.powi(2) - total).abs() <= 1e-9 * total.max(1.0));
    }

    #[test]
    fn heart_rate_inverts_and_decreases(b in 24.0f64..240.0, d in 1.0f64..500.0) {
        let hr = heart_rate_bpm(60_000.0 / b).unwrap();
        prop_assert!((hr - b).abs() <= 1e-9 * b);
        let rr = 60_000.0 / b;
        prop_assert!(heart_rate_bpm(rr + d).unwrap() < heart_rate_bpm(rr).unwrap());
    }

    #[test]
    fn gated_intervals_do_not_change_metrics(
        rr in rr_vec(100),
        head in prop::collection::vec(prop_oneof![10.0f64..249.0, 2501.0f64..6000.0], 0..4),
        tail in prop::collection::vec(prop_oneof![10.0f64..249.0, 2501.0f64..6000.0], 0..4),
    ) {
        let base = time_domain_metrics(&RrSeries::from_intervals(rr.clone()).unwrap(), 50.0).unwrap();
        let padded: Vec<f64> = head.iter().chain(rr.iter()).chain(tail.iter()).copied().collect();
        let series = RrSeries::from_intervals(padded).unwrap();
        prop_assert_eq!(series.flagged_count(), head.len() + tail.len());
        prop_assert_eq!(time_domain_metrics(&series, 50.0).unwrap(), base);
    }

    #[test]
    fn stress_level_is_total(score in 0.0f64..1e6) {
        let a = stress_level(score).unwrap();
        prop_assert_eq!(a, stress_level(score).unwrap());
    }

    #[test]
    fn detected_peaks_respect_refractory_gap(rr in prop::collection::vec(250.0f64..1500.0, 3..12)) {
        let rate = 250.0;
        let s = ecg_from_intervals(&rr, rate);
        let ecg = SampleSeries::new(Channel::Ecg, rate, 0, s.values).unwrap();
        let peaks = detect_r_peaks(&ecg).unwrap();
        for w in peaks.windows(2) {
            prop_assert!((w[1] - w[0]) as f64 * 1000.0 / rate >= REFRACTORY_MS);
        }
    }
}

#[test]
fn band_boundaries() {
    let cases = [
        (0.0, StressLevel::High),
        (59.99, StressLevel::High),
        (60.0, StressLevel::Average),
        (70.99, StressLevel::Average),
        (71.0, StressLevel::Moderate),
        (71.87, StressLevel::Moderate),
        (80.99, StressLevel::Moderate),
        (81.0, StressLevel::Low),
        (89.99, StressLevel::Low),
        (90.0, StressLevel::VeryLow),
        (500.0, StressLevel::VeryLow),
    ];
    for (score, level) in cases {
        assert_eq!(stress_level(score).unwrap().level, level, "{score}");
    }
    assert!(stress_level(-0.01).is_err());
    assert!(stress_level(f64::NAN).is_err());
}
