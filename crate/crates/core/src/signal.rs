//! IMU preprocessing: DC removal, sampling-rate conversion, sliding windows and
//! window labels.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    NoSmm = 0,
    Smm = 1,
}

impl Label {
    pub fn from_class(class: usize) -> Option<Label> {
        match class {
            0 => Some(Label::NoSmm),
            1 => Some(Label::Smm),
            _ => None,
        }
    }
}

/// Half-open sample interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    pub start: usize,
    pub end: usize,
    pub label: Label,
}

impl Annotation {
    pub fn smm(start: usize, end: usize) -> Self {
        Annotation {
            start,
            end,
            label: Label::Smm,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// One subject's continuous multi-channel stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub rate: f64,
    pub channels: Vec<Vec<f64>>,
    pub annotations: Vec<Annotation>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        rate: f64,
        channels: Vec<Vec<f64>>,
        mut annotations: Vec<Annotation>,
    ) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::arg(format!("sampling rate must be > 0, got {rate}")));
        }
        let len = channels.first().map_or(0, Vec::len);
        if channels.is_empty() || len == 0 {
            return Err(Error::arg("recording needs at least one non-empty channel"));
        }
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::arg("all channels must have equal length"));
        }
        annotations.sort_by_key(|a| a.start);
        for a in &annotations {
            if a.is_empty() || a.end > len {
                return Err(Error::arg(format!(
                    "annotation [{}, {}) outside [0, {len})",
                    a.start, a.end
                )));
            }
        }
        if annotations.windows(2).any(|w| w[1].start < w[0].end) {
            return Err(Error::arg("annotations overlap"));
        }
        Ok(Recording {
            subject_id: subject_id.into(),
            rate,
            channels,
            annotations,
        })
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Per-sample SMM indicator.
    pub fn smm_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for a in self.annotations.iter().filter(|a| a.label == Label::Smm) {
            mask[a.start..a.end].fill(true);
        }
        mask
    }

    /// Fraction of samples inside SMM annotations.
    pub fn smm_fraction(&self) -> f64 {
        let smm: usize = self
            .annotations
            .iter()
            .filter(|a| a.label == Label::Smm)
            .map(Annotation::len)
            .sum();
        smm as f64 / self.len() as f64
    }

    fn with_channels(&self, channels: Vec<Vec<f64>>) -> Recording {
        Recording {
            subject_id: self.subject_id.clone(),
            rate: self.rate,
            channels,
            annotations: self.annotations.clone(),
        }
    }
}

/// First-order high-pass `y[n] = a (y[n-1] + x[n] - x[n-1])`. The state starts
/// as if the signal had been running around the level of its first `settle`
/// samples (`x[-1] = x[0]`, `y[-1] = x[0] - level`), which removes most of the
/// start-up transient; a constant input starts exactly in steady state.
fn highpass_pass(x: &[f64], a: f64, settle: usize) -> Vec<f64> {
    let head = &x[..settle.clamp(1, x.len())];
    let level = head.iter().sum::<f64>() / head.len() as f64;
    let mut out = Vec::with_capacity(x.len());
    let mut prev_x = x[0];
    let mut prev_y = x[0] - level;
    for &v in x {
        prev_y = a * (prev_y + v - prev_x);
        prev_x = v;
        out.push(prev_y);
    }
    out
}

/// Zero-phase DC removal: a first-order high-pass run forward, then backward.
pub fn highpass_filter(rec: &Recording, cutoff_hz: f64) -> Result<Recording> {
    if !(cutoff_hz > 0.0) || cutoff_hz >= rec.rate / 2.0 {
        return Err(Error::arg(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {}) for a {} Hz recording",
            rec.rate / 2.0,
            rec.rate
        )));
    }
    let rc = 1.0 / (2.0 * std::f64::consts::PI * cutoff_hz);
    let dt = 1.0 / rec.rate;
    let a = rc / (rc + dt);
    let settle = (rec.rate / cutoff_hz).round() as usize;
    let channels = rec
        .channels
        .iter()
        .map(|ch| {
            let mut y = highpass_pass(ch, a, settle);
            y.reverse();
            let mut y = highpass_pass(&y, a, settle);
            y.reverse();
            y
        })
        .collect();
    Ok(rec.with_channels(channels))
}

/// Number of samples on a `target_hz` grid covering the span of `len` samples
/// taken at `rate` Hz: `floor((len - 1) * target / rate) + 1`.
pub fn resampled_len(len: usize, rate: f64, target_hz: f64) -> usize {
    let span = (len - 1) as f64 * target_hz / rate;
    // guard against ratios such as 1.5 landing a hair below an integer
    (span + 1e-9).floor() as usize + 1
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Linear interpolation onto a uniform `target_hz` grid over the same time span.
pub fn resample_linear(rec: &Recording, target_hz: f64) -> Result<Recording> {
    if !(target_hz > 0.0) || !target_hz.is_finite() {
        return Err(Error::arg(format!("target rate must be > 0, got {target_hz}")));
    }
    if target_hz == rec.rate {
        return Ok(rec.clone());
    }
    let n_in = rec.len();
    let n_out = resampled_len(n_in, rec.rate, target_hz);
    let ratio = rec.rate / target_hz;
    let positions: Vec<(usize, f64)> = (0..n_out)
        .map(|k| {
            let pos = k as f64 * ratio;
            let i0 = (pos.floor() as usize).min(n_in - 1);
            let frac = if i0 + 1 < n_in { pos - i0 as f64 } else { 0.0 };
            (i0, frac)
        })
        .collect();
    let channels = rec
        .channels
        .iter()
        .map(|ch| {
            positions
                .iter()
                .map(|&(i0, frac)| {
                    if frac == 0.0 {
                        ch[i0]
                    } else {
                        ch[i0] + frac * (ch[i0 + 1] - ch[i0])
                    }
                })
                .collect()
        })
        .collect();
    let scale = target_hz / rec.rate;
    let annotations = rec
        .annotations
        .iter()
        .filter_map(|a| {
            let start = round_half_up(a.start as f64 * scale).min(n_out);
            let end = round_half_up(a.end as f64 * scale).min(n_out);
            (end > start).then_some(Annotation {
                start,
                end,
                label: a.label,
            })
        })
        .collect::<Vec<_>>();
    // rounding may make neighbours touch; never overlap
    let mut merged: Vec<Annotation> = Vec::with_capacity(annotations.len());
    for a in annotations {
        match merged.last_mut() {
            Some(last) if a.start < last.end => {
                let start = last.end;
                if a.end > start {
                    merged.push(Annotation { start, ..a });
                }
            }
            _ => merged.push(a),
        }
    }
    Recording::new(rec.subject_id.clone(), target_hz, channels, merged)
}

pub const DEFAULT_LABEL_THRESHOLD: f64 = 0.5;

/// 1 iff at least `threshold` of the window's samples lie in SMM intervals.
pub fn label_window_with(annotations: &[Annotation], start: usize, w: usize, threshold: f64) -> u8 {
    let end = start + w;
    let covered: usize = annotations
        .iter()
        .filter(|a| a.label == Label::Smm)
        .map(|a| a.end.min(end).saturating_sub(a.start.max(start)))
        .sum();
    u8::from(covered as f64 >= threshold * w as f64)
}

/// Majority rule: 1 iff at least half of the window is annotated SMM.
pub fn label_window(annotations: &[Annotation], start: usize, w: usize) -> u8 {
    label_window_with(annotations, start, w, DEFAULT_LABEL_THRESHOLD)
}

/// A fixed-length slice of a shared recording, treated as one sample.
#[derive(Debug, Clone)]
pub struct Window {
    source: Arc<Recording>,
    start: usize,
    len: usize,
    pub label: u8,
}

impl Window {
    pub fn new(source: Arc<Recording>, start: usize, len: usize, label: u8) -> Result<Self> {
        if len == 0 || start + len > source.len() {
            return Err(Error::arg(format!(
                "window [{start}, {}) outside recording of length {}",
                start + len,
                source.len()
            )));
        }
        Ok(Window {
            source,
            start,
            len,
            label,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.source.subject_id
    }

    /// Start sample in the source recording.
    pub fn t_index(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_channels(&self) -> usize {
        self.source.n_channels()
    }

    pub fn rate(&self) -> f64 {
        self.source.rate
    }

    pub fn source(&self) -> &Arc<Recording> {
        &self.source
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.source.channels[ch][self.start..self.start + self.len]
    }

    /// The window as a `[channels, len]` tensor.
    pub fn tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.n_channels() * self.len);
        for ch in 0..self.n_channels() {
            data.extend_from_slice(self.channel(ch));
        }
        Tensor::new(vec![self.n_channels(), self.len], data).expect("window shape is consistent")
    }
}

/// `floor((len - w) / step) + 1` windows, or 0 when `w > len`.
pub fn window_count(len: usize, w: usize, step: usize) -> usize {
    if w > len || step == 0 {
        0
    } else {
        (len - w) / step + 1
    }
}

pub fn segment_with(rec: &Arc<Recording>, window_s: f64, step: usize, threshold: f64) -> Result<Vec<Window>> {
    let w = (window_s * rec.rate).round() as usize;
    if step == 0 {
        return Err(Error::arg("window step must be >= 1 sample"));
    }
    if w == 0 || w > rec.len() {
        return Err(Error::arg(format!(
            "window of {w} samples does not fit a recording of {} samples",
            rec.len()
        )));
    }
    (0..window_count(rec.len(), w, step))
        .map(|k| {
            let start = k * step;
            let label = label_window_with(&rec.annotations, start, w, threshold);
            Window::new(Arc::clone(rec), start, w, label)
        })
        .collect()
}

/// Sliding windows of `window_s` seconds every `step` samples, labeled by the
/// majority rule.
pub fn segment(rec: &Arc<Recording>, window_s: f64, step: usize) -> Result<Vec<Window>> {
    segment_with(rec, window_s, step, DEFAULT_LABEL_THRESHOLD)
}

/// Fraction of samples shared by consecutive windows.
pub fn window_overlap(w: usize, step: usize) -> f64 {
    w.saturating_sub(step) as f64 / w as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rec1(values: Vec<f64>, rate: f64) -> Recording {
        Recording::new("s", rate, vec![values], vec![]).unwrap()
    }

    /// Direct DFT magnitude of bin `k`, scaled to sinusoid amplitude.
    fn dft_amplitude(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let ang = 2.0 * PI * k as f64 * t as f64 / n;
            re += v * ang.cos();
            im -= v * ang.sin();
        }
        let mag = (re * re + im * im).sqrt() / n;
        if k == 0 {
            mag
        } else {
            2.0 * mag
        }
    }

    #[test]
    fn highpass_rejects_constant() {
        let r = rec1(vec![4.2; 3000], 100.0);
        let y = highpass_filter(&r, 0.1).unwrap();
        assert_eq!(y.len(), 3000);
        assert!(y.channels[0].iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn highpass_passband_amplitude() {
        // 5 Hz at 100 Hz over 20 s: bin 100 of a 2000-point DFT
        let x: Vec<f64> = (0..2000).map(|t| (2.0 * PI * 5.0 * t as f64 / 100.0).sin()).collect();
        let y = highpass_filter(&rec1(x.clone(), 100.0), 0.1).unwrap();
        let before = dft_amplitude(&x, 100);
        let after = dft_amplitude(&y.channels[0], 100);
        assert!((after / before - 1.0).abs() < 0.01, "{before} -> {after}");
    }

    #[test]
    fn highpass_removes_offset_keeps_sinusoid() {
        // 2 Hz over 30 s: bin 60 of 3000
        let x: Vec<f64> = (0..3000)
            .map(|t| 3.0 + (2.0 * PI * 2.0 * t as f64 / 100.0).sin())
            .collect();
        let y = highpass_filter(&rec1(x, 100.0), 0.1).unwrap();
        let amp = dft_amplitude(&y.channels[0], 60);
        assert!((amp - 1.0).abs() < 0.02, "{amp}");
        assert!(dft_amplitude(&y.channels[0], 0) < 0.02 * 3.0);
    }

    #[test]
    fn highpass_cutoff_must_be_below_nyquist() {
        let r = rec1(vec![0.0; 10], 100.0);
        assert!(highpass_filter(&r, 50.0).is_err());
        assert!(highpass_filter(&r, 0.0).is_err());
    }

    #[test]
    fn resample_identity_is_bitwise() {
        let r = Recording::new("s", 60.0, vec![vec![0.1, 0.2, 0.35]], vec![Annotation::smm(1, 2)]).unwrap();
        assert_eq!(resample_linear(&r, 60.0).unwrap(), r);
    }

    #[test]
    fn resample_count_matches_enumeration() {
        for n in [2usize, 3, 7, 60, 61, 1000, 1001] {
            // enumerate grid points k / 90 s that stay within (n - 1) / 60 s
            let enumerated = (0..).take_while(|&k| 60 * k <= 90 * (n - 1)).count();
            let r = rec1(vec![0.0; n], 60.0);
            let out = resample_linear(&r, 90.0).unwrap();
            assert_eq!(out.len(), enumerated, "n = {n}");
            assert_eq!(out.len(), ((n - 1) as f64 * 1.5).floor() as usize + 1);
            assert_eq!(out.rate, 90.0);
        }
    }

    #[test]
    fn resample_ramp_stays_on_ramp() {
        let r = rec1((0..200).map(|n| n as f64).collect(), 60.0);
        let out = resample_linear(&r, 90.0).unwrap();
        for (k, v) in out.channels[0].iter().enumerate() {
            assert!((v - k as f64 * 60.0 / 90.0).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_rescales_annotations() {
        let r = Recording::new("s", 60.0, vec![vec![0.0; 100]], vec![Annotation::smm(3, 11)]).unwrap();
        let out = resample_linear(&r, 90.0).unwrap();
        // 3 * 1.5 = 4.5 -> 5 (half up), 11 * 1.5 = 16.5 -> 17
        assert_eq!(out.annotations, vec![Annotation::smm(5, 17)]);
    }

    #[test]
    fn segment_counts_and_overlap() {
        let r = Arc::new(rec1(vec![0.0; 1000], 100.0));
        let ws = segment(&r, 1.0, 10).unwrap();
        assert_eq!(ws.len(), 91);
        assert!((window_overlap(100, 10) - 0.9).abs() < 1e-12);
        assert!(ws.windows(2).all(|p| p[1].t_index() > p[0].t_index()));

        let r = Arc::new(rec1(vec![0.0; 100], 100.0));
        assert_eq!(segment(&r, 1.0, 10).unwrap().len(), 1);
        assert!(segment(&r, 1.5, 10).is_err());
        assert!((window_overlap(90, 10) - 80.0 / 90.0).abs() < 1e-12);
    }

    #[test]
    fn labels_follow_majority_rule() {
        let ann = [Annotation::smm(100, 300)];
        assert_eq!(label_window(&ann, 150, 100), 1);
        assert_eq!(label_window(&ann, 400, 100), 0);
        assert_eq!(label_window(&ann, 50, 100), 1);
        assert_eq!(label_window(&ann, 49, 100), 0);
        assert_eq!(label_window_with(&ann, 50, 100, 0.6), 0);
    }

    #[test]
    fn recording_validation() {
        assert!(Recording::new("s", 100.0, vec![vec![0.0; 3], vec![0.0; 2]], vec![]).is_err());
        assert!(Recording::new("s", 100.0, vec![vec![0.0; 3]], vec![Annotation::smm(1, 4)]).is_err());
        assert!(Recording::new(
            "s",
            100.0,
            vec![vec![0.0; 10]],
            vec![Annotation::smm(1, 4), Annotation::smm(3, 5)]
        )
        .is_err());
    }
}
