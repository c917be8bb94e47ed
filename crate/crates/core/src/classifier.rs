//! Five-class heartbeat classification on top of [`crate::nn`].

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, argmax, Network, NnError, TrainHistory};
use crate::signal::{BeatClass, BeatSegment, SampleSeries, BEAT_RATE_HZ, BEAT_WINDOW_LEN};

/// A beat window spans this multiple of the following RR interval.
pub const WINDOW_RR_FACTOR: f64 = 1.2;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    MalformedRow { line: usize, msg: String },
    #[error("line {line}: unknown label {label}")]
    UnknownLabel { line: usize, label: String },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("segment {0} has no label")]
    Unlabeled(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Parses the 188-column beat corpus: 187 window values then the label 0–4.
pub fn load_mitbih_segments(path: &Path) -> Result<Vec<BeatSegment>, ClassifierError> {
    let text = std::fs::read_to_string(path).map_err(|source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_mitbih(&text)
}

pub fn parse_mitbih(text: &str) -> Result<Vec<BeatSegment>, ClassifierError> {
    let mut out = Vec::new();
    for (i, row) in text.lines().enumerate() {
        let line = i + 1;
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != BEAT_WINDOW_LEN + 1 {
            return Err(ClassifierError::MalformedRow {
                line,
                msg: format!("expected {} columns, found {}", BEAT_WINDOW_LEN + 1, fields.len()),
            });
        }
        let window = fields[..BEAT_WINDOW_LEN]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| ClassifierError::MalformedRow {
                    line,
                    msg: format!("not a number: {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let raw = fields[BEAT_WINDOW_LEN];
        let unknown = || ClassifierError::UnknownLabel {
            line,
            label: raw.to_string(),
        };
        let value: f64 = raw.parse().map_err(|_| unknown())?;
        if value.fract() != 0.0 || value < 0.0 {
            return Err(unknown());
        }
        let label = BeatClass::from_index(value as usize).ok_or_else(unknown)?;
        let seg = BeatSegment::new(window, Some(label)).map_err(|e| ClassifierError::MalformedRow {
            line,
            msg: e.to_string(),
        })?;
        out.push(seg);
    }
    Ok(out)
}

/// Writes segments in the corpus format.
pub fn write_mitbih(path: &Path, segments: &[BeatSegment]) -> Result<(), ClassifierError> {
    let mut text = String::new();
    for s in segments {
        for v in s.window() {
            text.push_str(&format!("{v:e},"));
        }
        let label = s.label().map(|l| l.index()).unwrap_or(0);
        text.push_str(&format!("{label}\n"));
    }
    std::fs::write(path, text).map_err(|source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn labeled(segments: &[BeatSegment]) -> Result<(Vec<Vec<f64>>, Vec<usize>), ClassifierError> {
    let mut xs = Vec::with_capacity(segments.len());
    let mut ys = Vec::with_capacity(segments.len());
    for (i, s) in segments.iter().enumerate() {
        let label = s.label().ok_or(ClassifierError::Unlabeled(i))?;
        xs.push(s.window().to_vec());
        ys.push(label.index());
    }
    Ok((xs, ys))
}

/// Trains `net` on labeled beat segments.
pub fn train(
    net: &mut Network,
    segments: &[BeatSegment],
    epochs: usize,
    batch_size: usize,
) -> Result<TrainHistory, ClassifierError> {
    if segments.is_empty() {
        return Err(NnError::EmptyTrainingSet.into());
    }
    let (xs, ys) = labeled(segments)?;
    Ok(nn::fit(net, &xs, &ys, epochs, batch_size)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision_pct: f64,
    pub recall_pct: f64,
    /// One-vs-rest `(TP + TN) / (TP + TN + FP + FN)`.
    pub accuracy_pct: f64,
}

/// Classification metrics from a confusion matrix (`confusion[truth][predicted]`).
///
/// `accuracy_pct` is the overall trace/total; precision and recall are
/// per-class one-vs-rest values macro-averaged over the classes that occur
/// in either the truth or the predictions. A class that is never predicted
/// has precision 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy_pct: f64,
    pub precision_pct: f64,
    pub recall_pct: f64,
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
}

fn pct(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self, ClassifierError> {
        let k = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(ClassifierError::EmptyEvalSet);
        }
        let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let mut per_class = Vec::with_capacity(k);
        for c in 0..k {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = (0..k).map(|t| confusion[t][c]).sum();
            let fp = predicted - tp;
            let fn_ = support - tp;
            let tn = total - tp - fp - fn_;
            per_class.push(ClassMetrics {
                class: c,
                support,
                tp,
                fp,
                fn_,
                tn,
                precision_pct: pct(tp, tp + fp),
                recall_pct: pct(tp, tp + fn_),
                accuracy_pct: pct(tp + tn, total),
            });
        }
        let active: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support + m.fp > 0).collect();
        let macro_avg = |f: fn(&ClassMetrics) -> f64| active.iter().map(|m| f(m)).sum::<f64>() / active.len() as f64;
        Ok(Self {
            accuracy_pct: pct(trace, total),
            precision_pct: macro_avg(|m| m.precision_pct),
            recall_pct: macro_avg(|m| m.recall_pct),
            confusion,
            per_class,
        })
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

/// Confusion matrix of `net` over labeled inputs.
pub fn confusion_matrix(net: &Network, inputs: &[Vec<f64>], labels: &[usize]) -> Result<Vec<Vec<u64>>, ClassifierError> {
    let k = net.config().classes;
    let mut confusion = vec![vec![0u64; k]; k];
    for (x, &y) in inputs.iter().zip(labels) {
        let (pred, _) = net.predict(x)?;
        confusion[y][pred] += 1;
    }
    Ok(confusion)
}

pub fn evaluate(net: &Network, segments: &[BeatSegment]) -> Result<EvalReport, ClassifierError> {
    if segments.is_empty() {
        return Err(ClassifierError::EmptyEvalSet);
    }
    let (xs, ys) = labeled(segments)?;
    EvalReport::from_confusion(confusion_matrix(net, &xs, &ys)?)
}

/// Splits into (train, test), keeping each class's proportion.
pub fn stratified_split(segments: &[BeatSegment], test_fraction: f64, seed: u64) -> (Vec<BeatSegment>, Vec<BeatSegment>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in group_by_class(segments) {
        let mut idx = class;
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend(idx[..n_test].iter().map(|&i| segments[i].clone()));
        train.extend(idx[n_test..].iter().map(|&i| segments[i].clone()));
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    (train, test)
}

/// Draws `n` segments keeping class proportions (largest remainders).
pub fn stratified_subset(segments: &[BeatSegment], n: usize, seed: u64) -> Vec<BeatSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = group_by_class(segments);
    let total = segments.len().max(1) as f64;
    let n = n.min(segments.len());
    let exact: Vec<f64> = groups.iter().map(|g| g.len() as f64 * n as f64 / total).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut missing = n - quota.iter().sum::<usize>();
    for &g in order.iter().cycle().take(groups.len() * 2) {
        if missing == 0 {
            break;
        }
        if quota[g] < groups[g].len() {
            quota[g] += 1;
            missing -= 1;
        }
    }
    let mut out = Vec::with_capacity(n);
    for (g, q) in groups.into_iter().zip(quota) {
        let mut idx = g;
        idx.shuffle(&mut rng);
        out.extend(idx[..q].iter().map(|&i| segments[i].clone()));
    }
    out.shuffle(&mut rng);
    out
}

fn group_by_class(segments: &[BeatSegment]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); BeatClass::ALL.len() + 1];
    for (i, s) in segments.iter().enumerate() {
        let g = s.label().map(|l| l.index()).unwrap_or(BeatClass::ALL.len());
        groups[g].push(i);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

/// Cuts one beat window starting at R-peak index `r` of a 125 Hz signal.
///
/// The window spans `span` samples (capped at 187), is min-max normalized
/// to [0, 1] and zero-padded to 187. Returns `None` when the span runs past
/// the end of the signal.
pub fn extract_window(x: &[f64], r: usize, span: usize) -> Option<Vec<f64>> {
    let span = span.clamp(1, BEAT_WINDOW_LEN);
    if r + span > x.len() {
        return None;
    }
    let seg = &x[r..r + span];
    let lo = seg.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut out: Vec<f64> = if range > 0.0 {
        seg.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; span]
    };
    out.resize(BEAT_WINDOW_LEN, 0.0);
    Some(out)
}

/// Linear-interpolation resampling to `target_hz`. Identity when the rates match.
pub fn resample_linear(x: &[f64], rate_hz: f64, target_hz: f64) -> Vec<f64> {
    if rate_hz == target_hz || x.is_empty() {
        return x.to_vec();
    }
    let n_out = ((x.len() - 1) as f64 * target_hz / rate_hz).floor() as usize + 1;
    (0..n_out)
        .map(|j| {
            let pos = j as f64 * rate_hz / target_hz;
            let i = pos.floor() as usize;
            if i + 1 >= x.len() {
                return x[x.len() - 1];
            }
            let frac = pos - i as f64;
            x[i] * (1.0 - frac) + x[i + 1] * frac
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedBeat {
    /// Index of the peak in the input peak list.
    pub beat: usize,
    /// Sample index of the R peak in the original series.
    pub sample: usize,
    pub class: BeatClass,
    pub probability: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedStream {
    pub beats: Vec<ClassifiedBeat>,
    /// Peak-list indices whose window would run past the end of the stream.
    pub skipped: Vec<usize>,
}

impl ClassifiedStream {
    pub fn counts(&self) -> [usize; 5] {
        let mut c = [0; 5];
        for b in &self.beats {
            c[b.class.index()] += 1;
        }
        c
    }
}

/// Labels every detected beat of an ECG stream.
///
/// The stream is resampled to 125 Hz; each beat's window runs from its R
/// peak for 1.2 times the following RR interval (the previous one for the
/// last beat), matching the layout of the beat corpus.
pub fn classify_stream(net: &Network, ecg: &SampleSeries, peaks: &[usize]) -> Result<ClassifiedStream, ClassifierError> {
    let rate = ecg.rate_hz();
    let x = resample_linear(ecg.values(), rate, BEAT_RATE_HZ);
    let scaled: Vec<usize> = peaks
        .iter()
        .map(|&p| (p as f64 * BEAT_RATE_HZ / rate).round() as usize)
        .collect();
    let mut out = ClassifiedStream::default();
    for (k, &r) in scaled.iter().enumerate() {
        let rr = if k + 1 < scaled.len() {
            scaled[k + 1].saturating_sub(r)
        } else if k > 0 {
            r.saturating_sub(scaled[k - 1])
        } else {
            BEAT_WINDOW_LEN
        };
        let span = (WINDOW_RR_FACTOR * rr as f64).round() as usize;
        match extract_window(&x, r, span) {
            Some(w) => {
                let probs = net.forward(&w)?;
                let c = argmax(&probs);
                out.beats.push(ClassifiedBeat {
                    beat: k,
                    sample: peaks[k],
                    class: BeatClass::from_index(c).unwrap_or(BeatClass::Q),
                    probability: probs[c],
                });
            }
            None => out.skipped.push(k),
        }
    }
    Ok(out)
}
