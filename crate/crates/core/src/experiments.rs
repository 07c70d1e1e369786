//! Evaluation metrics, linear baselines, leave-one-subject-out runners,
//! parameter transfer, best-b ensembles and Fisher separability.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::dataio::{balance, build_sequences, loso_splits, Dataset, LosoSplit};
use crate::error::{Error, Result};
use crate::layers::PoolMode;
use crate::models::{Cnn, CnnConfig, CnnLstm, LstmConfig, Model, StepSource, WeightInit, THRESHOLD};
use crate::optim::{Optimizer, ParamSet};
use crate::rng::Rng;
use crate::signal::Window;

/// Confusion counts with SMM (1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
        }
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / (self.tp + self.fp + self.fn_ + self.tn).max(1) as f64
    }
}

pub fn compute_metrics(predictions: &[u8], truth: &[u8]) -> Result<Metrics> {
    if predictions.len() != truth.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::arg("metrics of an empty prediction set"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_, tn))
}

/// Class decisions at the fixed threshold.
pub fn decide(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= THRESHOLD)).collect()
}

/// Pegasos-style settings for [`LinearSvm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-3,
            epochs: 20,
        }
    }
}

/// Linear max-margin classifier on standardized features, trained by hinge-loss
/// subgradient descent with L2 regularization.
#[derive(Debug, Clone)]
pub struct LinearSvm {
    weights: Vec<f64>,
    bias: f64,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl LinearSvm {
    pub fn fit(x: &[Vec<f64>], y: &[u8], cfg: SvmConfig, rng: &mut Rng) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::arg(format!("{} feature rows for {} labels", x.len(), y.len())));
        }
        if !(cfg.lambda > 0.0) || cfg.epochs == 0 {
            return Err(Error::arg("svm needs lambda > 0 and >= 1 epoch"));
        }
        let dim = x[0].len();
        if x.iter().any(|r| r.len() != dim) {
            return Err(Error::arg("feature rows differ in length"));
        }
        let n = x.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for r in x {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 0.0 };
        }
        let mut svm = LinearSvm {
            weights: vec![0.0; dim],
            bias: 0.0,
            mean,
            scale,
        };
        let z: Vec<Vec<f64>> = x.iter().map(|r| svm.standardize(r)).collect();
        // the bias is the weight of a constant unit feature
        let radius = 1.0 / cfg.lambda.sqrt();
        let mut t = 0usize;
        for _ in 0..cfg.epochs {
            for i in rng.permutation(z.len()) {
                t += 1;
                let eta = 1.0 / (cfg.lambda * t as f64);
                let sign = if y[i] == 1 { 1.0 } else { -1.0 };
                let margin = sign * svm.raw_score(&z[i]);
                let shrink = 1.0 - eta * cfg.lambda;
                for w in &mut svm.weights {
                    *w *= shrink;
                }
                svm.bias *= shrink;
                if margin < 1.0 {
                    for (w, v) in svm.weights.iter_mut().zip(&z[i]) {
                        *w += eta * sign * v;
                    }
                    svm.bias += eta * sign;
                }
                let norm = (svm.weights.iter().map(|w| w * w).sum::<f64>() + svm.bias * svm.bias).sqrt();
                if norm > radius {
                    for w in &mut svm.weights {
                        *w *= radius / norm;
                    }
                    svm.bias *= radius / norm;
                }
            }
        }
        if !svm.bias.is_finite() || svm.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("svm weights".into()));
        }
        Ok(svm)
    }

    fn standardize(&self, r: &[f64]) -> Vec<f64> {
        r.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    fn raw_score(&self, z: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(z).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.raw_score(&self.standardize(x))
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.decision(x) >= 0.0)
    }
}

/// All channels of a window concatenated channel by channel.
pub fn raw_features(w: &Window) -> Vec<f64> {
    (0..w.n_channels()).flat_map(|c| w.channel(c).iter().copied()).collect()
}

/// Frequency bands in Hz for the handcrafted band-power features. A DFT bin
/// at frequency `f` belongs to the band with `lo < f <= hi`.
pub const BANDS: [(f64, f64); 6] = [(0.1, 1.0), (1.0, 3.0), (3.0, 5.0), (5.0, 10.0), (10.0, 20.0), (20.0, 45.0)];

/// Time- and frequency-domain window descriptors.
pub struct HandcraftedExtractor {
    width: usize,
    rate: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl HandcraftedExtractor {
    pub fn new(width: usize, rate: f64) -> Result<Self> {
        if width < 2 || !(rate > 0.0) {
            return Err(Error::arg("handcrafted features need width >= 2 and rate > 0"));
        }
        let fft = FftPlanner::new().plan_fft_forward(width);
        Ok(HandcraftedExtractor { width, rate, fft })
    }

    /// One-sided power in each of [`BANDS`].
    pub fn band_powers(&self, x: &[f64]) -> Result<[f64; 6]> {
        if x.len() != self.width {
            return Err(Error::dim("band powers", &[self.width], &[x.len()]));
        }
        let n = self.width;
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        let mut out = [0.0; 6];
        for (k, c) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
            let f = k as f64 * self.rate / n as f64;
            let twice = if 2 * k == n { 1.0 } else { 2.0 };
            let p = twice * c.norm_sqr() / (n * n) as f64;
            if let Some(b) = BANDS.iter().position(|&(lo, hi)| f > lo && f <= hi) {
                out[b] += p;
            }
        }
        Ok(out)
    }

    /// Per channel: mean, std, zero crossings of the centered signal, energy and
    /// the six band powers; then the Pearson correlation of every channel pair.
    pub fn extract(&self, w: &Window) -> Result<Vec<f64>> {
        let c = w.n_channels();
        let mut out = Vec::with_capacity(c * 10 + c * (c - 1) / 2);
        let mut centered = Vec::with_capacity(c);
        for ch in 0..c {
            let x = w.channel(ch);
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let xc: Vec<f64> = x.iter().map(|v| v - mean).collect();
            let var = xc.iter().map(|v| v * v).sum::<f64>() / n;
            let crossings = xc
                .windows(2)
                .filter(|p| (p[0] < 0.0 && p[1] > 0.0) || (p[0] > 0.0 && p[1] < 0.0))
                .count();
            let energy = x.iter().map(|v| v * v).sum::<f64>() / n;
            out.extend([mean, var.sqrt(), crossings as f64, energy]);
            out.extend(self.band_powers(x)?);
            centered.push((xc, var));
        }
        for i in 0..c {
            for j in i + 1..c {
                let (a, va) = &centered[i];
                let (b, vb) = &centered[j];
                let denom = (va * vb).sqrt() * a.len() as f64;
                let cov: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                out.push(if denom > 1e-300 { cov / denom } else { 0.0 });
            }
        }
        Ok(out)
    }
}

fn svm_metrics(
    train: &Dataset,
    test: &Dataset,
    cfg: SvmConfig,
    rng: &mut Rng,
    features: impl Fn(&Window) -> Result<Vec<f64>>,
) -> Result<Metrics> {
    let x: Vec<Vec<f64>> = train.windows.iter().map(&features).collect::<Result<_>>()?;
    let svm = LinearSvm::fit(&x, &train.labels(), cfg, rng)?;
    let preds = test
        .windows
        .iter()
        .map(|w| Ok(svm.predict(&features(w)?)))
        .collect::<Result<Vec<u8>>>()?;
    compute_metrics(&preds, &test.labels())
}

/// Linear classifier on flattened raw windows.
pub fn raw_baseline(train: &Dataset, test: &Dataset, cfg: SvmConfig, rng: &mut Rng) -> Result<Metrics> {
    svm_metrics(train, test, cfg, rng, |w| Ok(raw_features(w)))
}

/// Linear classifier on [`HandcraftedExtractor`] features.
pub fn handcrafted_baseline(train: &Dataset, test: &Dataset, cfg: SvmConfig, rng: &mut Rng) -> Result<Metrics> {
    let first = train
        .windows
        .first()
        .ok_or_else(|| Error::arg("empty training set"))?;
    let ext = HandcraftedExtractor::new(first.len(), first.rate())?;
    svm_metrics(train, test, cfg, rng, |w| ext.extract(w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Cnn,
    CnnLstm,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Cnn => "cnn",
            Arch::CnnLstm => "cnn-lstm",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(Arch::Cnn),
            "cnn-lstm" => Ok(Arch::CnnLstm),
            other => Err(Error::arg(format!("unknown architecture `{other}` (cnn, cnn-lstm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub pool_mode: PoolMode,
    pub init: WeightInit,
}

impl Default for CnnTrainConfig {
    fn default() -> Self {
        CnnTrainConfig {
            epochs: 10,
            batch: 100,
            learning_rate: 0.01,
            momentum: 0.9,
            pool_mode: PoolMode::Max,
            init: WeightInit::HeNormal,
        }
    }
}

impl CnnTrainConfig {
    pub fn model_config(&self, data: &Dataset) -> Result<CnnConfig> {
        let w = data
            .windows
            .first()
            .ok_or_else(|| Error::arg("cannot size a model from an empty dataset"))?;
        let mut cfg = CnnConfig::new(w.n_channels(), w.len());
        cfg.pool_mode = self.pool_mode;
        cfg.init = self.init;
        Ok(cfg)
    }

    pub fn optimizer(&self) -> Result<Optimizer> {
        Optimizer::sgd_momentum(self.learning_rate, self.momentum)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmTrainConfig {
    pub tau: usize,
    pub q: usize,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub fine_tune: bool,
}

impl Default for LstmTrainConfig {
    fn default() -> Self {
        LstmTrainConfig {
            tau: 25,
            q: 10,
            epochs: 10,
            batch: 100,
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
            fine_tune: false,
        }
    }
}

impl LstmTrainConfig {
    pub fn optimizer(&self) -> Result<Optimizer> {
        Optimizer::rmsprop(self.learning_rate, self.decay, self.epsilon)
    }
}

/// Which parameters a transfer copies from the source model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferScope {
    AllLayers,
    ConvOnly,
}

impl TransferScope {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferScope::AllLayers => "all",
            TransferScope::ConvOnly => "conv",
        }
    }

    pub fn includes(self, name: &str) -> bool {
        match self {
            TransferScope::AllLayers => true,
            TransferScope::ConvOnly => name.starts_with("conv"),
        }
    }
}

impl std::str::FromStr for TransferScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TransferScope::AllLayers),
            "conv" => Ok(TransferScope::ConvOnly),
            other => Err(Error::arg(format!("unknown transfer scope `{other}` (all, conv)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransferConfig {
    pub source: ParamSet,
    pub source_tag: String,
    pub target_tag: String,
    pub scope: TransferScope,
}

/// Overwrites the in-scope parameters of `cnn` with the source ones. Returns
/// the number of tensors copied.
pub fn apply_transfer(cnn: &mut Cnn, source: &ParamSet, scope: TransferScope) -> Result<usize> {
    let mut params = cnn.params();
    let copied = params.copy_from(source, |n| scope.includes(n))?;
    cnn.set_params(&params)?;
    Ok(copied)
}

/// Trains a fresh CNN (optionally pre-initialized) and returns it together with
/// the mean training loss of every epoch.
pub fn train_cnn(
    train: &Dataset,
    cfg: &CnnTrainConfig,
    init: Option<(&ParamSet, TransferScope)>,
    rng: &mut Rng,
) -> Result<(Cnn, Vec<f64>)> {
    let mut cnn = Cnn::new(cfg.model_config(train)?, rng)?;
    if let Some((source, scope)) = init {
        apply_transfer(&mut cnn, source, scope)?;
    }
    let mut opt = cfg.optimizer()?;
    let losses = (0..cfg.epochs)
        .map(|_| cnn.train_epoch(train, &mut opt, rng, cfg.batch))
        .collect::<Result<Vec<_>>>()?;
    Ok((cnn, losses))
}

/// Full-training-set loss before training and after each epoch.
pub fn cnn_loss_curve(
    train: &Dataset,
    cfg: &CnnTrainConfig,
    init: Option<(&ParamSet, TransferScope)>,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut cnn = Cnn::new(cfg.model_config(train)?, rng)?;
    if let Some((source, scope)) = init {
        apply_transfer(&mut cnn, source, scope)?;
    }
    let mut opt = cfg.optimizer()?;
    let mut curve = vec![cnn.dataset_loss(train)?];
    for _ in 0..cfg.epochs {
        cnn.train_epoch(train, &mut opt, rng, cfg.batch)?;
        curve.push(cnn.dataset_loss(train)?);
    }
    Ok(curve)
}

/// Trains an LSTM head on top of `cnn` over the unbalanced sequences of `train`.
pub fn train_cnn_lstm(train: &Dataset, cnn: Cnn, cfg: &LstmTrainConfig, rng: &mut Rng) -> Result<(CnnLstm, Vec<f64>)> {
    let mut lcfg = LstmConfig::new(cfg.tau, cfg.q);
    lcfg.fine_tune = cfg.fine_tune;
    let mut model = CnnLstm::new(cnn, lcfg, rng)?;
    let seqs = build_sequences(train, cfg.tau)?;
    if seqs.is_empty() {
        return Err(Error::arg(format!("no run of {} consecutive windows in the training set", cfg.tau)));
    }
    let feats = if cfg.fine_tune {
        None
    } else {
        Some(model.cnn().extract_dataset(train)?)
    };
    let mut opt = cfg.optimizer()?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let source = match &feats {
            Some(f) => StepSource::Features(f),
            None => StepSource::Windows(train),
        };
        losses.push(model.train_epoch(source, &seqs, &mut opt, rng, cfg.batch)?);
    }
    Ok((model, losses))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub arch: Arch,
    /// Undersample the CNN training set to equal class counts.
    pub balanced: bool,
    pub repeats: usize,
    pub cnn: CnnTrainConfig,
    pub lstm: LstmTrainConfig,
    /// Held-out subjects to evaluate; every subject when empty.
    pub subjects: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            arch: Arch::Cnn,
            balanced: true,
            repeats: 10,
            cnn: CnnTrainConfig::default(),
            lstm: LstmTrainConfig::default(),
            subjects: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn label(&self) -> String {
        let mut s = format!("{}-{}", self.arch.as_str(), if self.balanced { "balanced" } else { "unbalanced" });
        if self.arch == Arch::CnnLstm {
            let _ = write!(s, "-tau{}-q{}", self.lstm.tau, self.lstm.q);
        }
        s
    }
}

/// One trained-and-evaluated model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub subject: String,
    pub repeat: usize,
    pub seed: u64,
    pub metrics: Metrics,
    pub final_loss: f64,
}

/// Aggregate over repeats for one held-out subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRow {
    pub subject: String,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub config: String,
    pub runs: Vec<RunRecord>,
}

impl ResultTable {
    pub fn rows(&self) -> Vec<SubjectRow> {
        let mut subjects: Vec<&str> = Vec::new();
        for r in &self.runs {
            if !subjects.contains(&r.subject.as_str()) {
                subjects.push(&r.subject);
            }
        }
        subjects
            .into_iter()
            .map(|s| {
                let runs: Vec<&RunRecord> = self.runs.iter().filter(|r| r.subject == s).collect();
                let f1: Vec<f64> = runs.iter().map(|r| r.metrics.f1).collect();
                let (mean_f1, std_f1) = mean_std(&f1);
                let avg = |f: fn(&Metrics) -> f64| runs.iter().map(|r| f(&r.metrics)).sum::<f64>() / runs.len() as f64;
                SubjectRow {
                    subject: s.to_string(),
                    mean_f1,
                    std_f1,
                    precision: avg(|m| m.precision),
                    recall: avg(|m| m.recall),
                }
            })
            .collect()
    }

    /// Mean over subjects of the per-subject mean F1.
    pub fn mean_f1(&self) -> f64 {
        let rows = self.rows();
        rows.iter().map(|r| r.mean_f1).sum::<f64>() / rows.len().max(1) as f64
    }

    pub fn mean_precision(&self) -> f64 {
        let rows = self.rows();
        rows.iter().map(|r| r.precision).sum::<f64>() / rows.len().max(1) as f64
    }

    pub fn is_finite(&self) -> bool {
        self.runs.iter().all(|r| {
            r.final_loss.is_finite() && r.metrics.f1.is_finite() && r.metrics.precision.is_finite()
        })
    }

    /// `subject,config,mean_f1,std_f1,precision,recall`, one row per subject and
    /// a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,config,mean_f1,std_f1,precision,recall\n");
        let rows = self.rows();
        for r in &rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.subject, self.config, r.mean_f1, r.std_f1, r.precision, r.recall
            );
        }
        let means: Vec<f64> = rows.iter().map(|r| r.mean_f1).collect();
        let (m, s) = mean_std(&means);
        let n = rows.len().max(1) as f64;
        let _ = writeln!(
            out,
            "mean,{},{},{},{},{}",
            self.config,
            m,
            s,
            rows.iter().map(|r| r.precision).sum::<f64>() / n,
            rows.iter().map(|r| r.recall).sum::<f64>() / n
        );
        out
    }

    /// Every individual run with its seed.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("subject,repeat,seed,tp,fp,fn,tn,precision,recall,f1,final_loss\n");
        for r in &self.runs {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.subject, r.repeat, r.seed, m.tp, m.fp, m.fn_, m.tn, m.precision, m.recall, m.f1, r.final_loss
            );
        }
        out
    }
}

/// Seed of repeat `repeat` on the split that holds out subject index `fold`.
pub fn run_seed(master: u64, fold: usize, repeat: usize) -> u64 {
    Rng::derive_seed(Rng::derive_seed(master, fold as u64), repeat as u64)
}

/// Trains one model on `split.train` and scores it on `split.test`.
pub fn run_split(
    split: &LosoSplit,
    cfg: &ExperimentConfig,
    transfer: Option<&TransferConfig>,
    seed: u64,
) -> Result<(Model, RunRecord)> {
    let mut rng = Rng::new(seed);
    let cnn_train = if cfg.balanced {
        balance(&split.train, &mut rng)?
    } else {
        split.train.clone()
    };
    let init = transfer.map(|t| (&t.source, t.scope));
    let (cnn, cnn_losses) = train_cnn(&cnn_train, &cfg.cnn, init, &mut rng)?;
    let (model, final_loss) = match cfg.arch {
        Arch::Cnn => (Model::Cnn(cnn), cnn_losses.last().copied().unwrap_or(f64::NAN)),
        Arch::CnnLstm => {
            let (m, l) = train_cnn_lstm(&split.train, cnn, &cfg.lstm, &mut rng)?;
            (Model::CnnLstm(m), l.last().copied().unwrap_or(f64::NAN))
        }
    };
    let (probs, truth) = model.predict_dataset(&split.test)?;
    let metrics = compute_metrics(&decide(&probs), &truth)?;
    Ok((
        model,
        RunRecord {
            subject: split.test_subject.clone(),
            repeat: 0,
            seed,
            metrics,
            final_loss,
        },
    ))
}

/// Leave-one-subject-out protocol returning the result table and every trained
/// model, aligned with `table.runs`. Runs execute in parallel; output order is
/// fixed by (fold, repeat).
pub fn run_protocol(
    data: &Dataset,
    cfg: &ExperimentConfig,
    transfer: Option<&TransferConfig>,
    master_seed: u64,
) -> Result<(ResultTable, Vec<Model>)> {
    if cfg.repeats == 0 {
        return Err(Error::arg("repeats must be >= 1"));
    }
    let splits = loso_splits(data)?;
    for s in &cfg.subjects {
        if !data.subjects.contains(s) {
            return Err(Error::arg(format!("unknown subject `{s}`")));
        }
    }
    let tasks: Vec<(usize, usize)> = splits
        .iter()
        .enumerate()
        .filter(|(_, s)| cfg.subjects.is_empty() || cfg.subjects.contains(&s.test_subject))
        .flat_map(|(f, _)| (0..cfg.repeats).map(move |r| (f, r)))
        .collect();
    let (models, runs): (Vec<Model>, Vec<RunRecord>) = tasks
        .par_iter()
        .map(|&(f, r)| {
            let (model, mut rec) = run_split(&splits[f], cfg, transfer, run_seed(master_seed, f, r))?;
            rec.repeat = r;
            Ok((model, rec))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let mut label = cfg.label();
    if let Some(t) = transfer {
        let _ = write!(label, "-transfer-{}", t.scope.as_str());
    }
    Ok((ResultTable { config: label, runs }, models))
}

/// Leave-one-subject-out training and testing, repeated with `cfg.repeats`
/// seeds per held-out subject.
pub fn run_feature_learning(data: &Dataset, cfg: &ExperimentConfig, master_seed: u64) -> Result<ResultTable> {
    Ok(run_protocol(data, cfg, None, master_seed)?.0)
}

/// Same protocol as [`run_feature_learning`] with every CNN pre-initialized
/// from the source parameters.
pub fn run_transfer(transfer: &TransferConfig, data: &Dataset, cfg: &ExperimentConfig, master_seed: u64) -> Result<ResultTable> {
    Ok(run_protocol(data, cfg, Some(transfer), master_seed)?.0)
}

/// Feature family of a linear baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Raw,
    Handcrafted,
}

impl Baseline {
    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::Raw => "svm-raw",
            Baseline::Handcrafted => "svm-handcrafted",
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" | "svm-raw" => Ok(Baseline::Raw),
            "handcrafted" | "svm-handcrafted" => Ok(Baseline::Handcrafted),
            other => Err(Error::arg(format!("unknown baseline `{other}` (raw | handcrafted)"))),
        }
    }
}

/// Leave-one-subject-out protocol for a linear baseline; seeds follow
/// [`run_seed`] as for the learned models.
pub fn run_baseline(
    data: &Dataset,
    kind: Baseline,
    balanced: bool,
    svm: SvmConfig,
    repeats: usize,
    master_seed: u64,
) -> Result<ResultTable> {
    if repeats == 0 {
        return Err(Error::arg("repeats must be >= 1"));
    }
    let splits = loso_splits(data)?;
    let tasks: Vec<(usize, usize)> = (0..splits.len()).flat_map(|f| (0..repeats).map(move |r| (f, r))).collect();
    let runs = tasks
        .par_iter()
        .map(|&(f, r)| {
            let split = &splits[f];
            let seed = run_seed(master_seed, f, r);
            let mut rng = Rng::new(seed);
            let train = if balanced { balance(&split.train, &mut rng)? } else { split.train.clone() };
            let metrics = match kind {
                Baseline::Raw => raw_baseline(&train, &split.test, svm, &mut rng)?,
                Baseline::Handcrafted => handcrafted_baseline(&train, &split.test, svm, &mut rng)?,
            };
            Ok(RunRecord {
                subject: split.test_subject.clone(),
                repeat: r,
                seed,
                metrics,
                final_loss: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let config = format!("{}-{}", kind.as_str(), if balanced { "balanced" } else { "unbalanced" });
    Ok(ResultTable { config, runs })
}

/// Majority vote over member decisions; ties vote SMM.
pub fn majority_vote(votes: &[Vec<u8>]) -> Result<Vec<u8>> {
    let first = votes.first().ok_or_else(|| Error::arg("vote needs >= 1 member"))?;
    if votes.iter().any(|v| v.len() != first.len()) {
        return Err(Error::arg("members voted on different item counts"));
    }
    Ok((0..first.len())
        .map(|i| {
            let yes = votes.iter().filter(|v| v[i] == 1).count();
            u8::from(2 * yes >= votes.len())
        })
        .collect())
}

/// Outcome of best-b selection over a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Training F1 of each member, in pool order.
    pub member_f1: Vec<f64>,
    /// Pool indices sorted by descending training F1 (stable on ties).
    pub ranking: Vec<usize>,
    /// Training F1 of the vote over the top-i members, for i = 1..=l.
    pub prefix_f1: Vec<f64>,
    pub b: usize,
}

/// Ranks members by training F1 and picks the prefix size whose majority vote
/// scores best on the training data; ties favor the smaller prefix.
pub fn select_best_b(member_preds: &[Vec<u8>], truth: &[u8]) -> Result<Selection> {
    if member_preds.is_empty() {
        return Err(Error::arg("ensemble pool is empty"));
    }
    let member_f1 = member_preds
        .iter()
        .map(|p| compute_metrics(p, truth).map(|m| m.f1))
        .collect::<Result<Vec<_>>>()?;
    let mut ranking: Vec<usize> = (0..member_preds.len()).collect();
    ranking.sort_by(|&a, &b| member_f1[b].total_cmp(&member_f1[a]));
    let mut prefix_f1 = Vec::with_capacity(ranking.len());
    let (mut b, mut best) = (1, f64::NEG_INFINITY);
    for i in 1..=ranking.len() {
        let votes: Vec<Vec<u8>> = ranking[..i].iter().map(|&k| member_preds[k].clone()).collect();
        let f1 = compute_metrics(&majority_vote(&votes)?, truth)?.f1;
        if f1 > best {
            (b, best) = (i, f1);
        }
        prefix_f1.push(f1);
    }
    Ok(Selection {
        member_f1,
        ranking,
        prefix_f1,
        b,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub l: usize,
    pub arch: Arch,
    /// Balance the CNN training set; LSTM sequences are never balanced.
    pub balanced_cnn: bool,
    pub cnn: CnnTrainConfig,
    pub lstm: LstmTrainConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            l: 10,
            arch: Arch::CnnLstm,
            balanced_cnn: false,
            cnn: CnnTrainConfig::default(),
            lstm: LstmTrainConfig {
                tau: 25,
                q: 40,
                ..LstmTrainConfig::default()
            },
        }
    }
}

/// A trained pool with its best-b selection.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub members: Vec<Model>,
    pub seeds: Vec<u64>,
    pub selection: Selection,
}

impl EnsembleSpec {
    /// Builds the selection for an already-trained pool.
    pub fn from_pool(members: Vec<Model>, seeds: Vec<u64>, train: &Dataset) -> Result<Self> {
        let mut preds = Vec::with_capacity(members.len());
        let mut truth = Vec::new();
        for m in &members {
            let (p, t) = m.predict_dataset(train)?;
            if !truth.is_empty() && t != truth {
                return Err(Error::arg("ensemble members score different items"));
            }
            truth = t;
            preds.push(decide(&p));
        }
        let selection = select_best_b(&preds, &truth)?;
        Ok(EnsembleSpec {
            members,
            seeds,
            selection,
        })
    }

    pub fn b(&self) -> usize {
        self.selection.b
    }

    pub fn selected(&self) -> &[usize] {
        &self.selection.ranking[..self.selection.b]
    }

    /// Majority-vote decisions of the selected members and the matching truth.
    pub fn predict(&self, data: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
        let mut votes = Vec::with_capacity(self.b());
        let mut truth = Vec::new();
        for &k in self.selected() {
            let (p, t) = self.members[k].predict_dataset(data)?;
            truth = t;
            votes.push(decide(&p));
        }
        Ok((majority_vote(&votes)?, truth))
    }

    /// Plain-text description: one `key=value` line per field.
    pub fn describe(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let ids = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "l={}", self.members.len());
        let _ = writeln!(s, "b={}", self.b());
        let _ = writeln!(s, "seeds={}", self.seeds.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        let _ = writeln!(s, "member_f1={}", join(&self.selection.member_f1));
        let _ = writeln!(s, "ranking={}", ids(&self.selection.ranking));
        let _ = writeln!(s, "prefix_f1={}", join(&self.selection.prefix_f1));
        let _ = writeln!(s, "selected={}", ids(self.selected()));
        s
    }
}

/// Trains `cfg.l` independently seeded models on `train` and selects the best
/// prefix by training-set majority-vote F1.
pub fn train_ensemble(train: &Dataset, cfg: &EnsembleConfig, master_seed: u64) -> Result<EnsembleSpec> {
    if cfg.l == 0 {
        return Err(Error::arg("ensemble size l must be >= 1"));
    }
    let seeds: Vec<u64> = (0..cfg.l).map(|k| Rng::derive_seed(master_seed, k as u64)).collect();
    let members = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = Rng::new(seed);
            let cnn_train = if cfg.balanced_cnn {
                balance(train, &mut rng)?
            } else {
                train.clone()
            };
            let (cnn, _) = train_cnn(&cnn_train, &cfg.cnn, None, &mut rng)?;
            Ok(match cfg.arch {
                Arch::Cnn => Model::Cnn(cnn),
                Arch::CnnLstm => Model::CnnLstm(train_cnn_lstm(train, cnn, &cfg.lstm, &mut rng)?.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleSpec::from_pool(members, seeds, train)
}

pub fn eval_ensemble(spec: &EnsembleSpec, test: &Dataset) -> Result<Metrics> {
    let (pred, truth) = spec.predict(test)?;
    compute_metrics(&pred, &truth)
}

/// Mean over dimensions of `(mu1 - mu0)^2 / (var1 + var0 + 1e-12)`, with
/// population variances.
pub fn fisher_score(features: &[Vec<f64>], labels: &[u8]) -> Result<f64> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::arg("fisher score needs one label per feature vector"));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::arg("feature vectors must share a nonzero length"));
    }
    let mut sum = [vec![0.0; dim], vec![0.0; dim]];
    let mut count = [0usize; 2];
    for (f, &y) in features.iter().zip(labels) {
        let c = usize::from(y == 1);
        count[c] += 1;
        for (s, v) in sum[c].iter_mut().zip(f) {
            *s += v;
        }
    }
    if count[0] == 0 || count[1] == 0 {
        return Err(Error::arg("fisher score needs both classes"));
    }
    let mean: Vec<Vec<f64>> = (0..2).map(|c| sum[c].iter().map(|s| s / count[c] as f64).collect()).collect();
    let mut var = [vec![0.0; dim], vec![0.0; dim]];
    for (f, &y) in features.iter().zip(labels) {
        let c = usize::from(y == 1);
        for ((v, x), m) in var[c].iter_mut().zip(f).zip(&mean[c]) {
            *v += (x - m) * (x - m);
        }
    }
    let score: f64 = (0..dim)
        .map(|j| {
            let gap = mean[1][j] - mean[0][j];
            gap * gap / (var[1][j] / count[1] as f64 + var[0][j] / count[0] as f64 + 1e-12)
        })
        .sum();
    Ok(score / dim as f64)
}

/// Fisher scores of the raw, handcrafted and learned CNN feature spaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparabilityReport {
    pub raw: f64,
    pub handcrafted: f64,
    pub learned: f64,
}

pub fn separability(data: &Dataset, cnn: &Cnn) -> Result<SeparabilityReport> {
    let first = data
        .windows
        .first()
        .ok_or_else(|| Error::arg("separability of an empty dataset"))?;
    let labels = data.labels();
    let raw: Vec<Vec<f64>> = data.windows.iter().map(raw_features).collect();
    let ext = HandcraftedExtractor::new(first.len(), first.rate())?;
    let hand = data.windows.iter().map(|w| ext.extract(w)).collect::<Result<Vec<_>>>()?;
    let learned: Vec<Vec<f64>> = cnn
        .extract_dataset(data)?
        .into_iter()
        .map(|t| t.into_data())
        .collect();
    Ok(SeparabilityReport {
        raw: fisher_score(&raw, &labels)?,
        handcrafted: fisher_score(&hand, &labels)?,
        learned: fisher_score(&learned, &labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Annotation, Recording};

    #[test]
    fn metrics_examples() {
        let m = compute_metrics(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!(m.f1, 1.0);
        let m = Metrics::from_counts(3, 1, 2, 0);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        let m = compute_metrics(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_eq!((m.tp, m.f1), (0, 0.0));
        assert!(compute_metrics(&[1], &[1, 0]).is_err());
        assert!(compute_metrics(&[], &[]).is_err());
    }

    #[test]
    fn votes_and_selection() {
        assert_eq!(majority_vote(&[vec![1], vec![1], vec![0]]).unwrap(), vec![1]);
        assert_eq!(majority_vote(&[vec![1, 0], vec![0, 0]]).unwrap(), vec![1, 0]);
        let truth = vec![1, 1, 0, 0, 1, 0];
        let perfect = truth.clone();
        let noisy = vec![1, 0, 1, 0, 0, 1];
        let sel = select_best_b(&[noisy.clone(), perfect.clone(), noisy], &truth).unwrap();
        assert_eq!(sel.ranking[0], 1);
        assert_eq!(sel.b, 1);
        assert_eq!(sel.prefix_f1[0], 1.0);
        let single = select_best_b(&[perfect.clone()], &truth).unwrap();
        assert_eq!((single.b, single.ranking.clone()), (1, vec![0]));
        for i in 0..sel.prefix_f1.len() {
            assert!(sel.prefix_f1[sel.b - 1] >= sel.prefix_f1[i] || i >= sel.b);
        }
    }

    #[test]
    fn fisher_examples() {
        let feats: Vec<Vec<f64>> = vec![vec![1.1], vec![0.9], vec![-1.1], vec![-0.9]];
        let labels = [1, 1, 0, 0];
        let s = fisher_score(&feats, &labels).unwrap();
        assert!((s - 4.0 / 0.02).abs() < 1e-6, "{s}");
        let shifted: Vec<Vec<f64>> = feats.iter().map(|f| vec![f[0] + 7.0]).collect();
        assert!((fisher_score(&shifted, &labels).unwrap() - s).abs() < 1e-6);
        let same: Vec<Vec<f64>> = vec![vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]];
        assert!(fisher_score(&same, &labels).unwrap().abs() < 1e-9);
        assert!(fisher_score(&feats, &[1, 1, 1, 1]).is_err());
    }

    fn window_of(channels: Vec<Vec<f64>>, rate: f64) -> Window {
        let len = channels[0].len();
        let rec = Arc::new(Recording::new("w", rate, channels, vec![]).unwrap());
        Window::new(rec, 0, len, 0).unwrap()
    }

    #[test]
    fn handcrafted_examples() {
        let ext = HandcraftedExtractor::new(100, 100.0).unwrap();
        let w = window_of(vec![vec![2.5; 100], vec![2.5; 100]], 100.0);
        let f = ext.extract(&w).unwrap();
        assert_eq!(f.len(), 2 * 10 + 1);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[2], 0.0);
        assert!(f[4..10].iter().all(|p| p.abs() < 1e-20));

        let sine: Vec<f64> = (0..100).map(|t| (2.0 * std::f64::consts::PI * 3.0 * t as f64 / 100.0).sin()).collect();
        let bands = ext.band_powers(&sine).unwrap();
        let top = (0..6).max_by(|&a, &b| bands[a].total_cmp(&bands[b])).unwrap();
        assert_eq!(top, 1, "3 Hz bin belongs to the 1-3 Hz band: {bands:?}");
        assert!((bands.iter().sum::<f64>() - 0.5).abs() < 1e-12);

        let w = window_of(vec![sine.clone(), sine], 100.0);
        let f = ext.extract(&w).unwrap();
        assert!((f[20] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svm_separates_toy_set() {
        let mut rng = Rng::new(11);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let c = (i % 2) as u8;
            let s = if c == 1 { 1.0 } else { -1.0 };
            x.push(vec![s * 2.0 + 0.5 * rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)]);
            y.push(c);
        }
        let svm = LinearSvm::fit(&x, &y, SvmConfig { lambda: 1e-3, epochs: 30 }, &mut Rng::new(1)).unwrap();
        let acc = x.iter().zip(&y).filter(|(r, &c)| svm.predict(r) == c).count();
        assert_eq!(acc, 200);
    }

    #[test]
    fn transfer_copies_scope() {
        let mut rng = Rng::new(3);
        let src = Cnn::new(CnnConfig::new(9, 100), &mut rng).unwrap();
        let mut dst = Cnn::new(CnnConfig::new(9, 100), &mut rng).unwrap();
        assert_eq!(apply_transfer(&mut dst, &src.params(), TransferScope::ConvOnly).unwrap(), 6);
        assert_eq!(dst.params().get("conv2.weight"), src.params().get("conv2.weight"));
        assert_ne!(dst.params().get("fc1.weight"), src.params().get("fc1.weight"));
        assert_eq!(apply_transfer(&mut dst, &src.params(), TransferScope::AllLayers).unwrap(), 10);
        assert_eq!(dst.params(), src.params());

        let other = Cnn::new(CnnConfig::new(9, 90), &mut rng).unwrap();
        assert!(matches!(
            apply_transfer(&mut dst, &other.params(), TransferScope::AllLayers),
            Err(Error::ShapeMismatch { .. })
        ));
        let _ = Annotation::smm(0, 1);
    }
}
