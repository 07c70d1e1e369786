//! Dataset ingestion, synthetic recordings, balancing, leave-one-subject-out
//! splits and LSTM sequence assembly.
//!
//! # CSV schema
//!
//! ```text
//! # subject=<id> rate=<hz>
//! t,ch1,ch2,...,ch9,label
//! 0,0.013,-0.2,...,0
//! ```
//!
//! `t` is the integer sample index, `ch*` are decimal floats and `label` is 0
//! (no SMM) or 1 (SMM). Runs of 1s become SMM annotation intervals.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::signal::{self, Annotation, Recording, Window};

pub const DEFAULT_CHANNELS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub channels: usize,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            channels: DEFAULT_CHANNELS,
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Run-length encodes a 0/1 label column into SMM intervals.
pub fn labels_to_annotations(labels: &[u8]) -> Vec<Annotation> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l, start) {
            (1, None) => start = Some(i),
            (0, Some(s)) => {
                out.push(Annotation::smm(s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Annotation::smm(s, labels.len()));
    }
    out
}

pub fn parse_csv(text: &str, schema: CsvSchema) -> Result<Recording> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, meta) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let meta = meta
        .strip_prefix('#')
        .ok_or_else(|| parse_err(n, "first line must be `# subject=<id> rate=<hz>`"))?;
    let (mut subject, mut rate) = (None, None);
    for field in meta.split_whitespace() {
        match field.split_once('=') {
            Some(("subject", v)) => subject = Some(v.to_string()),
            Some(("rate", v)) => {
                rate = Some(v.parse::<f64>().map_err(|_| parse_err(n, format!("bad rate `{v}`")))?)
            }
            _ => {}
        }
    }
    let subject = subject.ok_or_else(|| parse_err(n, "missing subject=<id>"))?;
    let rate = rate.ok_or_else(|| parse_err(n, "missing rate=<hz>"))?;

    let (n, header) = lines.next().ok_or_else(|| parse_err(2, "missing header row"))?;
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=schema.channels).map(|c| format!("ch{c}")))
        .chain(std::iter::once("label".to_string()))
        .collect();
    let found: Vec<&str> = header.split(',').map(str::trim).collect();
    if found != expected {
        return Err(parse_err(
            n,
            format!("header must be `{}`, found `{header}`", expected.join(",")),
        ));
    }

    let mut channels = vec![Vec::new(); schema.channels];
    let mut labels = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != schema.channels + 2 {
            return Err(parse_err(
                n,
                format!("expected {} columns, found {}", schema.channels + 2, cells.len()),
            ));
        }
        let t: usize = cells[0]
            .parse()
            .map_err(|_| parse_err(n, format!("bad sample index `{}`", cells[0])))?;
        if t != labels.len() {
            return Err(parse_err(n, format!("sample index {t}, expected {}", labels.len())));
        }
        for (ch, cell) in cells[1..=schema.channels].iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(n, format!("non-numeric value `{cell}` in ch{}", ch + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(n, format!("non-finite value in ch{}", ch + 1)));
            }
            channels[ch].push(v);
        }
        let label = match cells[schema.channels + 1] {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(n, format!("label must be 0 or 1, found `{other}`"))),
        };
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(3, "no samples"));
    }
    Recording::new(subject, rate, channels, labels_to_annotations(&labels))
}

pub fn load_csv(path: impl AsRef<Path>, schema: CsvSchema) -> Result<Recording> {
    parse_csv(&fs::read_to_string(path)?, schema)
}

/// Inverse of [`parse_csv`]. Values use the shortest round-trip representation.
pub fn format_csv(rec: &Recording) -> String {
    let mut out = String::with_capacity(rec.len() * rec.n_channels() * 12);
    let _ = writeln!(out, "# subject={} rate={}", rec.subject_id, rec.rate);
    out.push('t');
    for c in 1..=rec.n_channels() {
        let _ = write!(out, ",ch{c}");
    }
    out.push_str(",label\n");
    let mask = rec.smm_mask();
    for t in 0..rec.len() {
        let _ = write!(out, "{t}");
        for ch in &rec.channels {
            let _ = write!(out, ",{}", ch[t]);
        }
        let _ = writeln!(out, ",{}", u8::from(mask[t]));
    }
    out
}

pub fn write_csv(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_csv(rec))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Simulated,
    Real1,
    Real2,
    Synthetic,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Simulated => "simulated",
            Provenance::Real1 => "real1",
            Provenance::Real2 => "real2",
            Provenance::Synthetic => "synthetic",
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulated" => Ok(Provenance::Simulated),
            "real1" => Ok(Provenance::Real1),
            "real2" => Ok(Provenance::Real2),
            "synthetic" => Ok(Provenance::Synthetic),
            other => Err(Error::arg(format!("unknown provenance `{other}`"))),
        }
    }
}

/// Labeled windows from one or more subjects.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub windows: Vec<Window>,
    pub subjects: Vec<String>,
    pub provenance: Provenance,
    /// Segmentation step in samples; consecutive windows of a recording are this
    /// far apart.
    pub step: usize,
}

impl Dataset {
    pub fn new(windows: Vec<Window>, provenance: Provenance, step: usize) -> Self {
        let mut subjects: Vec<String> = Vec::new();
        for w in &windows {
            if !subjects.iter().any(|s| s == w.subject_id()) {
                subjects.push(w.subject_id().to_string());
            }
        }
        Dataset {
            windows,
            subjects,
            provenance,
            step,
        }
    }

    /// Segments each recording and concatenates the windows in input order.
    pub fn from_recordings(
        recordings: Vec<Arc<Recording>>,
        window_s: f64,
        step: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut windows = Vec::new();
        for rec in &recordings {
            windows.extend(signal::segment(rec, window_s, step)?);
        }
        Ok(Dataset::new(windows, provenance, step))
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// `(no-SMM, SMM)` window counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let smm = self.windows.iter().filter(|w| w.label == 1).count();
        (self.windows.len() - smm, smm)
    }

    pub fn smm_ratio(&self) -> f64 {
        let (_, smm) = self.class_counts();
        smm as f64 / self.windows.len().max(1) as f64
    }

    /// Per-subject `(no-SMM, SMM)` counts in first-seen subject order.
    pub fn subject_counts(&self) -> Vec<(String, usize, usize)> {
        self.subjects
            .iter()
            .map(|s| {
                let (mut neg, mut pos) = (0, 0);
                for w in self.windows.iter().filter(|w| w.subject_id() == s) {
                    if w.label == 1 {
                        pos += 1;
                    } else {
                        neg += 1;
                    }
                }
                (s.clone(), neg, pos)
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let windows = indices.iter().map(|&i| self.windows[i].clone()).collect();
        Dataset::new(windows, self.provenance, self.step)
    }

    pub fn of_subjects(&self, keep: impl Fn(&str) -> bool) -> Dataset {
        let windows = self
            .windows
            .iter()
            .filter(|w| keep(w.subject_id()))
            .cloned()
            .collect();
        Dataset::new(windows, self.provenance, self.step)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.windows.iter().map(|w| w.label).collect()
    }
}

/// Indices kept by minority-count undersampling, in original order. The
/// minority class is kept whole; the majority is sampled without replacement.
pub fn balance_indices(data: &Dataset, rng: &mut Rng) -> Result<Vec<usize>> {
    let (neg, pos): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| data.windows[i].label == 0);
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::arg("balancing needs both classes present"));
    }
    let (minority, mut majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    rng.shuffle(&mut majority);
    majority.truncate(minority.len());
    let mut kept = minority;
    kept.extend(majority);
    kept.sort_unstable();
    Ok(kept)
}

pub fn balance(data: &Dataset, rng: &mut Rng) -> Result<Dataset> {
    Ok(data.subset(&balance_indices(data, rng)?))
}

#[derive(Debug, Clone)]
pub struct LosoSplit {
    pub test_subject: String,
    pub train: Dataset,
    pub test: Dataset,
}

/// One split per subject, holding that subject out for testing.
pub fn loso_splits(data: &Dataset) -> Result<Vec<LosoSplit>> {
    if data.subjects.len() < 2 {
        return Err(Error::arg(format!(
            "leave-one-subject-out needs >= 2 subjects, got {}",
            data.subjects.len()
        )));
    }
    Ok(data
        .subjects
        .iter()
        .map(|s| LosoSplit {
            test_subject: s.clone(),
            train: data.of_subjects(|id| id != s),
            test: data.of_subjects(|id| id == s),
        })
        .collect())
}

/// `tau` consecutive windows starting at `start` in the parent dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceRef {
    pub start: usize,
    pub label: u8,
}

#[derive(Debug, Clone)]
pub struct SequenceDataset {
    pub tau: usize,
    pub items: Vec<SequenceRef>,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.items.iter().map(|s| s.label).collect()
    }
}

/// True when window `b` directly follows window `a` in the same recording.
pub fn are_consecutive(a: &Window, b: &Window, step: usize) -> bool {
    Arc::ptr_eq(a.source(), b.source()) && b.t_index() == a.t_index() + step
}

/// Stride-1 sequences of `tau` consecutive windows, labeled by their last window.
/// No sequence crosses a subject, recording or gap boundary.
pub fn build_sequences(data: &Dataset, tau: usize) -> Result<SequenceDataset> {
    if tau == 0 {
        return Err(Error::arg("tau must be >= 1"));
    }
    let mut items = Vec::new();
    let mut run = 0usize;
    for (i, w) in data.windows.iter().enumerate() {
        run = if i > 0 && are_consecutive(&data.windows[i - 1], w, data.step) {
            run + 1
        } else {
            1
        };
        if run >= tau {
            items.push(SequenceRef {
                start: i + 1 - tau,
                label: w.label,
            });
        }
    }
    Ok(SequenceDataset { tau, items })
}

/// Generator settings for synthetic IMU recordings.
///
/// Every subject gets a base movement frequency inside `band`, an amplitude, a
/// jittered copy of a shared per-channel gain/sign/phase pattern (the sensors
/// sit at the same body positions) and a gravity offset. Background segments
/// are low-amplitude correlated noise plus slow drift and occasional short
/// in-band "fidget" bursts that are too brief to count as SMM.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub duration_s: f64,
    pub rate: f64,
    pub smm_fraction: f64,
    pub channels: usize,
    pub band: (f64, f64),
    pub bout_s: (f64, f64),
    pub amplitude: (f64, f64),
    /// Relative gain jitter and absolute phase jitter (radians) of each
    /// subject's channel mixing around the shared template.
    pub mixing_jitter: (f64, f64),
    pub noise_std: f64,
    /// Range of the per-channel slow drift amplitude.
    pub drift: (f64, f64),
    /// Expected short bursts per minute of background.
    pub fidget_per_min: f64,
    pub fidget_s: (f64, f64),
    pub subject_prefix: String,
    /// Seed of the shared mixing template; the generator seed when `None`.
    /// Two datasets with the same template seed share a movement direction.
    pub template_seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 5,
            duration_s: 1800.0,
            rate: 100.0,
            smm_fraction: 0.27,
            channels: DEFAULT_CHANNELS,
            band: (2.0, 4.0),
            bout_s: (4.0, 12.0),
            amplitude: (0.8, 1.25),
            mixing_jitter: (0.3, 0.5),
            noise_std: 0.08,
            drift: (0.05, 0.3),
            fidget_per_min: 2.0,
            fidget_s: (0.3, 0.8),
            subject_prefix: "sub".into(),
            template_seed: None,
        }
    }
}

/// Splits `total` into `parts` positive integers with random proportions.
fn random_partition(rng: &mut Rng, total: usize, parts: usize, min_each: usize) -> Vec<usize> {
    let floor = min_each.min(total / parts.max(1));
    let spare = total - floor * parts;
    let weights: Vec<f64> = (0..parts).map(|_| rng.uniform_range(0.5, 1.5)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut out: Vec<usize> = weights
        .iter()
        .map(|w| floor + (spare as f64 * w / wsum).floor() as usize)
        .collect();
    let assigned: usize = out.iter().sum();
    out[parts - 1] += total - assigned;
    out
}

/// Movement direction shared by all subjects: per-channel signed gain and phase.
struct MixingTemplate {
    gains: Vec<f64>,
    phases: Vec<f64>,
}

impl MixingTemplate {
    fn draw(rng: &mut Rng, channels: usize) -> Self {
        let gains = (0..channels)
            .map(|_| rng.uniform_range(0.3, 1.0) * if rng.bernoulli(0.5) { 1.0 } else { -1.0 })
            .collect();
        let phases = (0..channels).map(|_| rng.uniform_range(0.0, 2.0 * PI)).collect();
        MixingTemplate { gains, phases }
    }
}

fn synth_subject(rng: &mut Rng, cfg: &SynthConfig, template: &MixingTemplate, subject: usize) -> Result<Recording> {
    let rate = cfg.rate;
    let len = (cfg.duration_s * rate).round() as usize;
    let c = cfg.channels;
    let smm_total = (cfg.smm_fraction * len as f64).round() as usize;

    let (lo, hi) = cfg.band;
    let margin = ((hi - lo) * 0.15).min(0.3);
    let base_freq = rng.uniform_range(lo + margin, hi - margin);
    let amplitude = rng.uniform_range(cfg.amplitude.0, cfg.amplitude.1);
    let (gj, pj) = cfg.mixing_jitter;
    let gains: Vec<f64> = template
        .gains
        .iter()
        .map(|g| g * rng.uniform_range(1.0 - gj, 1.0 + gj))
        .collect();
    let phases: Vec<f64> = template.phases.iter().map(|p| p + rng.uniform_range(-pj, pj)).collect();
    let gravity: Vec<f64> = (0..c).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let drift_freq: Vec<f64> = (0..c).map(|_| rng.uniform_range(0.01, 0.08)).collect();
    let drift_amp: Vec<f64> = (0..c).map(|_| rng.uniform_range(cfg.drift.0, cfg.drift.1)).collect();

    // timeline: gap, bout, gap, bout, ..., gap
    let mean_bout = 0.5 * (cfg.bout_s.0 + cfg.bout_s.1) * rate;
    let n_bouts = ((smm_total as f64 / mean_bout).round() as usize).max(1);
    let bouts = random_partition(rng, smm_total, n_bouts, (cfg.bout_s.0 * rate) as usize);
    let gaps = random_partition(rng, len - smm_total, n_bouts + 1, rate as usize);
    let mut annotations = Vec::with_capacity(n_bouts);
    let mut background = Vec::with_capacity(n_bouts + 1);
    let mut cursor = 0;
    for (k, &gap) in gaps.iter().enumerate() {
        background.push((cursor, cursor + gap));
        cursor += gap;
        if let Some(&bout) = bouts.get(k) {
            if bout > 0 {
                annotations.push(Annotation::smm(cursor, cursor + bout));
            }
            cursor += bout;
        }
    }

    let mut channels: Vec<Vec<f64>> = (0..c)
        .map(|ch| {
            let mut state = 0.0;
            let smooth = 0.8;
            let innovation = cfg.noise_std * (1.0_f64 - smooth * smooth).sqrt();
            (0..len)
                .map(|t| {
                    state = smooth * state + innovation * rng.standard_normal();
                    let secs = t as f64 / rate;
                    gravity[ch] + drift_amp[ch] * (2.0 * PI * drift_freq[ch] * secs).sin() + state
                })
                .collect()
        })
        .collect();

    let mut add_oscillation = |rng: &mut Rng, start: usize, end: usize, scale: f64| {
        let freq = (base_freq + rng.uniform_range(-0.2, 0.2)).clamp(lo, hi);
        let phase = rng.uniform_range(0.0, 2.0 * PI);
        let ramp = (0.15 * rate).max(1.0);
        for t in start..end {
            let secs = t as f64 / rate;
            let env = ((t - start) as f64 / ramp).min((end - t) as f64 / ramp).min(1.0);
            for ch in 0..c {
                let arg = 2.0 * PI * freq * secs + phase + phases[ch];
                let wave = arg.sin() + 0.25 * (2.0 * arg).sin();
                channels[ch][t] += scale * env * gains[ch] * wave;
            }
        }
    };
    for a in &annotations {
        add_oscillation(rng, a.start, a.end, amplitude);
    }
    let clearance = rate as usize;
    for &(start, end) in &background {
        if end < start + 2 * clearance {
            continue;
        }
        let usable = end - start - 2 * clearance;
        let expected = cfg.fidget_per_min * usable as f64 / (60.0 * rate);
        let count = (expected + rng.uniform()).floor() as usize;
        for _ in 0..count {
            let dur = (rng.uniform_range(cfg.fidget_s.0, cfg.fidget_s.1) * rate) as usize;
            if dur == 0 || dur >= usable {
                continue;
            }
            let s = start + clearance + rng.below(usable - dur);
            let scale = amplitude * rng.uniform_range(0.6, 1.0);
            add_oscillation(rng, s, s + dur, scale);
        }
    }

    Recording::new(
        format!("{}{}", cfg.subject_prefix, subject + 1),
        rate,
        channels,
        annotations,
    )
}

pub fn generate_synthetic_with(rng: &mut Rng, cfg: &SynthConfig) -> Result<Vec<Recording>> {
    if !(cfg.smm_fraction > 0.0 && cfg.smm_fraction < 1.0) {
        return Err(Error::arg(format!(
            "SMM fraction must lie in (0, 1), got {}",
            cfg.smm_fraction
        )));
    }
    if cfg.n_subjects == 0 || cfg.channels == 0 {
        return Err(Error::arg("need at least one subject and one channel"));
    }
    if !(cfg.rate > 2.0 * cfg.band.1) {
        return Err(Error::arg(format!(
            "rate {} Hz cannot carry a {} Hz movement band",
            cfg.rate, cfg.band.1
        )));
    }
    let len = (cfg.duration_s * cfg.rate).round() as usize;
    if len < (4.0 * cfg.bout_s.1 * cfg.rate) as usize {
        return Err(Error::arg(format!(
            "duration {} s too short for {} s bouts",
            cfg.duration_s, cfg.bout_s.1
        )));
    }
    let template_seed = cfg.template_seed.unwrap_or(rng.seed());
    let template = MixingTemplate::draw(&mut Rng::derive(template_seed, u64::MAX), cfg.channels);
    (0..cfg.n_subjects)
        .map(|s| {
            let mut sub_rng = Rng::derive(rng.seed(), s as u64);
            synth_subject(&mut sub_rng, cfg, &template, s)
        })
        .collect()
}

/// Synthetic 9-channel recordings with the default movement model.
pub fn generate_synthetic(
    rng: &mut Rng,
    n_subjects: usize,
    duration_s: f64,
    rate: f64,
    smm_fraction: f64,
) -> Result<Vec<Recording>> {
    generate_synthetic_with(
        rng,
        &SynthConfig {
            n_subjects,
            duration_s,
            rate,
            smm_fraction,
            ..SynthConfig::default()
        },
    )
}

/// Per-subject `(subject, no-SMM, SMM)` counts, sorted by subject.
pub fn count_table(data: &Dataset) -> BTreeMap<String, (usize, usize)> {
    data.subject_counts()
        .into_iter()
        .map(|(s, n, p)| (s, (n, p)))
        .collect()
}
