//! The two network topologies: a three-stage 1D CNN over single windows and a
//! CNN+LSTM over runs of consecutive windows.
//!
//! Parameters are exposed as [`ParamSet`]s with stable names (`conv1.weight`,
//! `fc2.bias`, `lstm.f.weight`, ...) so optimizers, transfer and serialization
//! all work on the same view.

use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::dataio::{build_sequences, Dataset, SequenceDataset};
use crate::error::{Error, Result};
use crate::layers::{softmax, softmax_xent, Conv1d, Dense, Dropout, Flatten, Pool, PoolMode, Relu};
use crate::lstm::{Gate, LstmCell, LstmState};
use crate::optim::{read_params, write_params, Optimizer, ParamSet, PARAM_MAGIC};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Decision threshold on `p(SMM)`.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv1d),
    Relu(Relu),
    Pool(Pool),
    Flatten(Flatten),
    Dense(Dense),
    Dropout(Dropout),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv1d",
            Layer::Relu(_) => "relu",
            Layer::Pool(_) => "pool",
            Layer::Flatten(_) => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Dropout(_) => "dropout",
        }
    }
}

/// Ordered stack of named layers.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    layers: Vec<(String, Layer)>,
}

impl Sequential {
    pub fn new() -> Self {
        Sequential::default()
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer) {
        self.layers.push((name.into(), layer));
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Layer)> {
        self.layers.iter().map(|(n, l)| (n.as_str(), l))
    }

    pub fn set_training(&mut self, training: bool) {
        for (_, layer) in &mut self.layers {
            if let Layer::Dropout(d) = layer {
                d.set_training(training);
            }
        }
    }

    /// Caching forward pass; dropout is active only in training mode.
    pub fn forward(&mut self, x: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        let mut cur = x.clone();
        for (_, layer) in &mut self.layers {
            cur = match layer {
                Layer::Conv(l) => l.forward(&cur)?,
                Layer::Relu(l) => l.forward(&cur),
                Layer::Pool(l) => l.forward(&cur)?,
                Layer::Flatten(l) => l.forward(&cur),
                Layer::Dense(l) => l.forward(&cur)?,
                Layer::Dropout(l) => l.forward(&cur, rng),
            };
        }
        Ok(cur)
    }

    /// Inference pass: no caches, no dropout.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for (_, layer) in &self.layers {
            cur = match layer {
                Layer::Conv(l) => l.apply(&cur)?,
                Layer::Relu(_) => crate::layers::relu(&cur),
                Layer::Pool(l) => l.apply(&cur)?,
                Layer::Flatten(_) => Tensor::from_vec(cur.data().to_vec()),
                Layer::Dense(l) => l.apply(&cur)?,
                Layer::Dropout(_) => cur,
            };
        }
        Ok(cur)
    }

    /// Backpropagates `grad` through the cached forward pass, adding parameter
    /// gradients into `grads` (which must hold every parameter name), and returns
    /// the gradient with respect to the input.
    pub fn backward(&self, grad: &Tensor, grads: &mut ParamSet) -> Result<Tensor> {
        let mut cur = grad.clone();
        for (name, layer) in self.layers.iter().rev() {
            cur = match layer {
                Layer::Conv(l) => {
                    let g = l.backward(&cur)?;
                    accumulate(grads, name, &g.filters, &g.bias)?;
                    g.input
                }
                Layer::Dense(l) => {
                    let g = l.backward(&cur)?;
                    accumulate(grads, name, &g.weights, &g.bias)?;
                    g.input
                }
                Layer::Relu(l) => l.backward(&cur)?,
                Layer::Pool(l) => l.backward(&cur)?,
                Layer::Flatten(l) => l.backward(&cur)?,
                Layer::Dropout(l) => l.backward(&cur),
            };
        }
        Ok(cur)
    }

    pub fn params(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, layer) in &self.layers {
            let (w, b) = match layer {
                Layer::Conv(l) => (l.filters(), l.bias()),
                Layer::Dense(l) => (l.weights(), l.bias()),
                _ => continue,
            };
            out.push(format!("{name}.weight"), w.clone()).expect("layer names are unique");
            out.push(format!("{name}.bias"), b.clone()).expect("layer names are unique");
        }
        out
    }

    /// Overwrites every parameter from `source`; all names must be present with
    /// matching shapes.
    pub fn set_params(&mut self, source: &ParamSet) -> Result<()> {
        for (name, layer) in &mut self.layers {
            let (w, b) = match layer {
                Layer::Conv(l) => l.params_mut(),
                Layer::Dense(l) => l.params_mut(),
                _ => continue,
            };
            assign(w, source, &format!("{name}.weight"))?;
            assign(b, source, &format!("{name}.bias"))?;
        }
        Ok(())
    }
}

fn accumulate(grads: &mut ParamSet, layer: &str, w: &Tensor, b: &Tensor) -> Result<()> {
    for (suffix, g) in [("weight", w), ("bias", b)] {
        let name = format!("{layer}.{suffix}");
        grads
            .get_mut(&name)
            .ok_or_else(|| Error::State(format!("no gradient slot for `{name}`")))?
            .add_assign(g)?;
    }
    Ok(())
}

fn assign(target: &mut Tensor, source: &ParamSet, name: &str) -> Result<()> {
    let t = source
        .get(name)
        .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
    if t.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            name: name.to_string(),
            expected: target.shape().to_vec(),
            found: t.shape().to_vec(),
        });
    }
    *target = t.clone();
    Ok(())
}

/// Weight initialization for conv and dense layers. Biases always start at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// `N(0, std^2)` for every layer.
    Normal(f64),
    /// `N(0, 2 / fan_in)`, where fan_in is `in_channels * kernel` for conv
    /// layers and `inputs` for dense layers.
    HeNormal,
}

impl WeightInit {
    pub fn std(self, fan_in: usize) -> f64 {
        match self {
            WeightInit::Normal(s) => s,
            WeightInit::HeNormal => (2.0 / fan_in as f64).sqrt(),
        }
    }
}

impl fmt::Display for WeightInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightInit::Normal(s) => write!(f, "normal:{s}"),
            WeightInit::HeNormal => f.write_str("he"),
        }
    }
}

impl std::str::FromStr for WeightInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "he" {
            return Ok(WeightInit::HeNormal);
        }
        let std = s
            .strip_prefix("normal:")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| *v >= 0.0 && v.is_finite())
            .ok_or_else(|| Error::arg(format!("weight init must be `he` or `normal:<std>`, got `{s}`")))?;
        Ok(WeightInit::Normal(std))
    }
}

/// CNN hyperparameters. [`CnnConfig::new`] gives the standard configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub channels: usize,
    pub width: usize,
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub pool_mode: PoolMode,
    pub hidden: usize,
    pub dropout: f64,
    pub init: WeightInit,
}

impl CnnConfig {
    pub fn new(channels: usize, width: usize) -> Self {
        CnnConfig {
            channels,
            width,
            filters: vec![4, 4, 8],
            kernel: 9,
            pool_window: 3,
            pool_stride: 2,
            pool_mode: PoolMode::Max,
            hidden: 8,
            dropout: 0.5,
            init: WeightInit::HeNormal,
        }
    }

    /// Lengths after each pooling stage.
    pub fn pooled_lengths(&self) -> Result<Vec<usize>> {
        let mut len = self.width;
        let mut out = Vec::with_capacity(self.filters.len());
        for stage in 0..self.filters.len() {
            if len < self.pool_window {
                return Err(Error::Config(format!(
                    "window width {} too small: stage {} input length {len} < pool window {}",
                    self.width,
                    stage + 1,
                    self.pool_window
                )));
            }
            len = (len - self.pool_window) / self.pool_stride + 1;
            out.push(len);
        }
        Ok(out)
    }

    /// Length of the flattened learned feature vector.
    pub fn feature_len(&self) -> Result<usize> {
        let last = *self.pooled_lengths()?.last().unwrap_or(&self.width);
        Ok(last * self.filters.last().copied().unwrap_or(self.channels))
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.filters.is_empty() || self.filters.contains(&0) {
            return Err(Error::Config("cnn needs >= 1 channel and non-empty filter counts".into()));
        }
        if self.kernel == 0 || self.hidden == 0 || self.pool_window == 0 || self.pool_stride == 0 {
            return Err(Error::Config("cnn kernel, hidden size and pooling must be >= 1".into()));
        }
        self.pooled_lengths().map(|_| ())
    }
}

/// Convolutional feature extractor plus dense softmax head.
#[derive(Debug, Clone)]
pub struct Cnn {
    config: CnnConfig,
    features: Sequential,
    head: Sequential,
}

impl Cnn {
    pub fn new(config: CnnConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut features = Sequential::new();
        let mut in_ch = config.channels;
        for (k, &f) in config.filters.iter().enumerate() {
            let n = k + 1;
            features.push(format!("conv{n}"), Layer::Conv(Conv1d::init(rng, in_ch, f, config.kernel, config.init.std(in_ch * config.kernel))?));
            features.push(format!("relu{n}"), Layer::Relu(Relu::new()));
            features.push(
                format!("pool{n}"),
                Layer::Pool(Pool::new(config.pool_window, config.pool_stride, config.pool_mode)?),
            );
            in_ch = f;
        }
        features.push("flatten", Layer::Flatten(Flatten::default()));
        let d = config.feature_len()?;
        let mut head = Sequential::new();
        head.push("fc1", Layer::Dense(Dense::init(rng, d, config.hidden, config.init.std(d))?));
        head.push("dropout", Layer::Dropout(Dropout::new(config.dropout)?));
        head.push("fc2", Layer::Dense(Dense::init(rng, config.hidden, 2, config.init.std(config.hidden))?));
        Ok(Cnn { config, features, head })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn feature_len(&self) -> usize {
        self.config.feature_len().expect("validated at construction")
    }

    pub fn features(&self) -> &Sequential {
        &self.features
    }

    pub fn head(&self) -> &Sequential {
        &self.head
    }

    pub fn set_training(&mut self, training: bool) {
        self.head.set_training(training);
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != [self.config.channels, self.config.width] {
            return Err(Error::dim("cnn input", &[self.config.channels, self.config.width], x.shape()));
        }
        Ok(())
    }

    /// Learned static features of one window.
    pub fn extract(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.features.apply(x)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.head.apply(&self.extract(x)?)
    }

    /// `p(SMM)` for one window, without dropout.
    pub fn predict(&self, x: &Tensor) -> Result<f64> {
        Ok(softmax(&self.logits(x)?).data()[1])
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.windows.iter().map(|w| self.predict(&w.tensor())).collect()
    }

    /// Extracted features of every window in `data`, in order.
    pub fn extract_dataset(&self, data: &Dataset) -> Result<Vec<Tensor>> {
        data.windows.iter().map(|w| self.extract(&w.tensor())).collect()
    }

    pub fn params(&self) -> ParamSet {
        let mut p = self.features.params();
        for (n, t) in self.head.params().iter() {
            p.push(n, t.clone()).expect("feature and head names are disjoint");
        }
        p
    }

    pub fn set_params(&mut self, source: &ParamSet) -> Result<()> {
        self.features.set_params(source)?;
        self.head.set_params(source)
    }

    /// Cross-entropy of one labeled window, adding its gradient into `grads`.
    pub fn loss_grad(&mut self, x: &Tensor, label: u8, rng: &mut Rng, grads: &mut ParamSet) -> Result<f64> {
        self.check_input(x)?;
        let feats = self.features.forward(x, rng)?;
        let z = self.head.forward(&feats, rng)?;
        let out = softmax_xent(&z, label as usize)?;
        let g = self.head.backward(&out.grad, grads)?;
        self.features.backward(&g, grads)?;
        Ok(out.loss)
    }

    /// Mean cross-entropy over `data` in inference mode.
    pub fn dataset_loss(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::arg("loss of an empty dataset"));
        }
        let mut total = 0.0;
        for w in &data.windows {
            total += softmax_xent(&self.logits(&w.tensor())?, w.label as usize)?.loss;
        }
        Ok(total / data.len() as f64)
    }

    /// One shuffled pass of mini-batch updates over `data`; returns the mean
    /// training loss.
    pub fn train_epoch(&mut self, data: &Dataset, opt: &mut Optimizer, rng: &mut Rng, batch: usize) -> Result<f64> {
        self.set_training(true);
        let result = minibatch_epoch(
            self,
            data.len(),
            batch,
            opt,
            rng,
            |m| m.params(),
            |m, p| m.set_params(p),
            |m, i, rng, grads| {
                let w = &data.windows[i];
                m.loss_grad(&w.tensor(), w.label, rng, grads)
            },
        );
        self.set_training(false);
        result
    }
}

/// Standard CNN for `channels` x `width` windows.
pub fn build_cnn(channels: usize, width: usize, rng: &mut Rng) -> Result<Cnn> {
    Cnn::new(CnnConfig::new(channels, width), rng)
}

#[allow(clippy::too_many_arguments)]
fn minibatch_epoch<M>(
    model: &mut M,
    n: usize,
    batch: usize,
    opt: &mut Optimizer,
    rng: &mut Rng,
    params: impl Fn(&M) -> ParamSet,
    set_params: impl Fn(&mut M, &ParamSet) -> Result<()>,
    mut sample: impl FnMut(&mut M, usize, &mut Rng, &mut ParamSet) -> Result<f64>,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    if batch == 0 {
        return Err(Error::arg("batch size must be >= 1"));
    }
    let order = rng.permutation(n);
    let mut total = 0.0;
    for chunk in order.chunks(batch) {
        let mut p = params(model);
        let mut grads = p.zeros_like();
        for &i in chunk {
            total += sample(model, i, rng, &mut grads)?;
        }
        grads.scale(1.0 / chunk.len() as f64);
        opt.step(&mut p, &grads)?;
        set_params(model, &p)?;
    }
    let mean = total / n as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmConfig {
    pub tau: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub init_std: f64,
    pub forget_bias: f64,
    pub head_init: WeightInit,
    /// Train the convolutional extractor jointly with the LSTM.
    pub fine_tune: bool,
}

impl LstmConfig {
    pub fn new(tau: usize, hidden: usize) -> Self {
        LstmConfig {
            tau,
            hidden,
            head_hidden: 8,
            dropout: 0.2,
            init_std: 0.1,
            forget_bias: 1.0,
            head_init: WeightInit::HeNormal,
            fine_tune: false,
        }
    }
}

/// Where sequence steps come from during training and prediction.
#[derive(Debug, Clone, Copy)]
pub enum StepSource<'a> {
    /// Raw windows; features are extracted by the model's CNN.
    Windows(&'a Dataset),
    /// Precomputed CNN features, one per window of the parent dataset.
    Features(&'a [Tensor]),
}

impl StepSource<'_> {
    fn len(&self) -> usize {
        match self {
            StepSource::Windows(d) => d.len(),
            StepSource::Features(f) => f.len(),
        }
    }
}

/// Shared CNN feature extractor applied to each of `tau` windows, an LSTM over
/// the resulting features and a dense softmax head on the final output.
#[derive(Debug, Clone)]
pub struct CnnLstm {
    cnn: Cnn,
    config: LstmConfig,
    cell: LstmCell,
    head: Sequential,
}

impl CnnLstm {
    pub fn new(cnn: Cnn, config: LstmConfig, rng: &mut Rng) -> Result<Self> {
        if config.tau == 0 || config.hidden == 0 || config.head_hidden == 0 {
            return Err(Error::arg(format!(
                "need tau >= 1, q >= 1 and head size >= 1, got tau={} q={} head={}",
                config.tau, config.hidden, config.head_hidden
            )));
        }
        let d = cnn.feature_len();
        let cell = LstmCell::init(rng, config.hidden, d, config.init_std, config.forget_bias)?;
        let mut head = Sequential::new();
        head.push("out1", Layer::Dense(Dense::init(rng, config.hidden, config.head_hidden, config.head_init.std(config.hidden))?));
        head.push("out_dropout", Layer::Dropout(Dropout::new(config.dropout)?));
        head.push("out2", Layer::Dense(Dense::init(rng, config.head_hidden, 2, config.head_init.std(config.head_hidden))?));
        Ok(CnnLstm { cnn, config, cell, head })
    }

    pub fn config(&self) -> &LstmConfig {
        &self.config
    }

    pub fn cnn(&self) -> &Cnn {
        &self.cnn
    }

    pub fn cell(&self) -> &LstmCell {
        &self.cell
    }

    pub fn tau(&self) -> usize {
        self.config.tau
    }

    pub fn set_fine_tune(&mut self, on: bool) {
        self.config.fine_tune = on;
    }

    /// Switches head dropout between training and inference behaviour.
    pub fn set_training(&mut self, training: bool) {
        self.head.set_training(training);
    }

    fn lstm_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for g in Gate::ALL {
            p.push(format!("lstm.{}.weight", g.tag()), self.cell.weight(g).clone()).expect("unique");
            p.push(format!("lstm.{}.bias", g.tag()), self.cell.bias(g).clone()).expect("unique");
        }
        for (n, t) in self.head.params().iter() {
            p.push(n, t.clone()).expect("unique");
        }
        p
    }

    /// Every parameter, including the (possibly frozen) convolutional ones.
    pub fn params(&self) -> ParamSet {
        let mut p = self.cnn.features.params();
        for (n, t) in self.lstm_params().iter() {
            p.push(n, t.clone()).expect("unique");
        }
        p
    }

    /// The parameters updated by training under the current freeze setting.
    pub fn trainable_params(&self) -> ParamSet {
        if self.config.fine_tune {
            self.params()
        } else {
            self.lstm_params()
        }
    }

    /// Sets every name present in `source` that this model owns; names absent
    /// from `source` must be convolutional (frozen) ones.
    pub fn set_params(&mut self, source: &ParamSet) -> Result<()> {
        if source.names().iter().any(|n| n.starts_with("conv")) {
            self.cnn.features.set_params(source)?;
        }
        for g in Gate::ALL {
            assign(self.cell.weight_mut(g), source, &format!("lstm.{}.weight", g.tag()))?;
            assign(self.cell.bias_mut(g), source, &format!("lstm.{}.bias", g.tag()))?;
        }
        self.head.set_params(source)
    }

    /// `p(SMM)` for a run of `tau` static feature vectors.
    pub fn predict_features(&self, feats: &[Tensor]) -> Result<f64> {
        if feats.len() != self.config.tau {
            return Err(Error::dim("cnn-lstm sequence", &[self.config.tau], &[feats.len()]));
        }
        let mut state = LstmState::zeros(self.config.hidden);
        for x in feats {
            state = self.cell.step(&state, x)?;
        }
        Ok(softmax(&self.head.apply(&state.h)?).data()[1])
    }

    /// `p(SMM)` for `tau` consecutive raw windows.
    pub fn predict(&self, windows: &[Tensor]) -> Result<f64> {
        let feats = windows
            .iter()
            .map(|w| self.cnn.extract(w))
            .collect::<Result<Vec<_>>>()?;
        self.predict_features(&feats)
    }

    fn check_sequences(&self, source: &StepSource<'_>, seqs: &SequenceDataset) -> Result<()> {
        if seqs.tau != self.config.tau {
            return Err(Error::arg(format!(
                "sequences built with tau={} but model expects tau={}",
                seqs.tau, self.config.tau
            )));
        }
        if let Some(last) = seqs.items.iter().map(|s| s.start + seqs.tau).max() {
            if last > source.len() {
                return Err(Error::arg("sequence index beyond the step source"));
            }
        }
        Ok(())
    }

    fn step_features(&self, source: &StepSource<'_>, start: usize) -> Result<Vec<Tensor>> {
        let range = start..start + self.config.tau;
        match source {
            StepSource::Features(f) => Ok(f[range].to_vec()),
            StepSource::Windows(d) => d.windows[range].iter().map(|w| self.cnn.extract(&w.tensor())).collect(),
        }
    }

    pub fn predict_sequences(&self, source: StepSource<'_>, seqs: &SequenceDataset) -> Result<Vec<f64>> {
        self.check_sequences(&source, seqs)?;
        seqs.items
            .iter()
            .map(|s| self.predict_features(&self.step_features(&source, s.start)?))
            .collect()
    }

    pub fn sequence_loss(&self, source: StepSource<'_>, seqs: &SequenceDataset) -> Result<f64> {
        if seqs.is_empty() {
            return Err(Error::arg("loss of an empty sequence set"));
        }
        let probs = self.predict_sequences(source, seqs)?;
        let total: f64 = probs
            .iter()
            .zip(&seqs.items)
            .map(|(&p, s)| -(if s.label == 1 { p } else { 1.0 - p }).max(f64::MIN_POSITIVE).ln())
            .sum();
        Ok(total / seqs.len() as f64)
    }

    /// Cross-entropy of one sequence of raw windows or features, adding the
    /// gradient of every trainable parameter into `grads`.
    pub fn loss_grad(
        &mut self,
        source: StepSource<'_>,
        start: usize,
        label: u8,
        rng: &mut Rng,
        grads: &mut ParamSet,
    ) -> Result<f64> {
        let tau = self.config.tau;
        let joint = self.config.fine_tune;
        let mut extractors = Vec::new();
        let inputs: Vec<Tensor> = match (source, joint) {
            (StepSource::Windows(d), true) => {
                let mut feats = Vec::with_capacity(tau);
                for w in &d.windows[start..start + tau] {
                    let mut ext = self.cnn.features.clone();
                    let x = w.tensor();
                    self.cnn.check_input(&x)?;
                    feats.push(ext.forward(&x, rng)?);
                    extractors.push(ext);
                }
                feats
            }
            (StepSource::Features(_), true) => {
                return Err(Error::arg("joint fine-tuning needs raw windows, not cached features"));
            }
            (source, false) => self.step_features(&source, start)?,
        };
        let h = self.cell.forward_sequence(&inputs, None)?;
        let z = self.head.forward(&h, rng)?;
        let out = softmax_xent(&z, label as usize)?;
        let gh = self.head.backward(&out.grad, grads)?;
        let lg = self.cell.backward_sequence(&gh)?;
        for (k, g) in Gate::ALL.iter().enumerate() {
            for (suffix, t) in [("weight", &lg.weights[k]), ("bias", &lg.biases[k])] {
                let name = format!("lstm.{}.{suffix}", g.tag());
                grads
                    .get_mut(&name)
                    .ok_or_else(|| Error::State(format!("no gradient slot for `{name}`")))?
                    .add_assign(t)?;
            }
        }
        for (ext, gx) in extractors.iter().zip(&lg.inputs) {
            ext.backward(gx, grads)?;
        }
        Ok(out.loss)
    }

    /// One shuffled pass over `seqs`; returns the mean training loss.
    pub fn train_epoch(
        &mut self,
        source: StepSource<'_>,
        seqs: &SequenceDataset,
        opt: &mut Optimizer,
        rng: &mut Rng,
        batch: usize,
    ) -> Result<f64> {
        self.check_sequences(&source, seqs)?;
        self.head.set_training(true);
        let result = minibatch_epoch(
            self,
            seqs.len(),
            batch,
            opt,
            rng,
            |m| m.trainable_params(),
            |m, p| m.set_params(p),
            |m, i, rng, grads| {
                let s = seqs.items[i];
                m.loss_grad(source, s.start, s.label, rng, grads)
            },
        );
        self.head.set_training(false);
        result
    }
}

/// CNN+LSTM on top of `cnn` with the given sequence length and LSTM size.
pub fn build_cnn_lstm(cnn: Cnn, tau: usize, q: usize, rng: &mut Rng) -> Result<CnnLstm> {
    CnnLstm::new(cnn, LstmConfig::new(tau, q), rng)
}

/// Either architecture, as stored in a model file.
#[derive(Debug, Clone)]
pub enum Model {
    Cnn(Cnn),
    CnnLstm(CnnLstm),
}

const MODEL_TAG: &str = "# smm-model";

impl Model {
    pub fn cnn_config(&self) -> &CnnConfig {
        match self {
            Model::Cnn(m) => m.config(),
            Model::CnnLstm(m) => m.cnn().config(),
        }
    }

    pub fn params(&self) -> ParamSet {
        match self {
            Model::Cnn(m) => m.params(),
            Model::CnnLstm(m) => m.params(),
        }
    }

    /// `p(SMM)` and ground truth for every scorable item of `data`: each window
    /// for a CNN, each complete run of `tau` windows for a CNN+LSTM.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<(Vec<f64>, Vec<u8>)> {
        match self {
            Model::Cnn(m) => Ok((m.predict_dataset(data)?, data.labels())),
            Model::CnnLstm(m) => {
                let seqs = build_sequences(data, m.tau())?;
                let feats = m.cnn().extract_dataset(data)?;
                Ok((m.predict_sequences(StepSource::Features(&feats), &seqs)?, seqs.labels()))
            }
        }
    }

    /// One-line architecture description used as the model file header.
    pub fn header(&self) -> String {
        let c = self.cnn_config();
        let filters: Vec<String> = c.filters.iter().map(|f| f.to_string()).collect();
        let mut s = format!(
            "{MODEL_TAG} arch={} channels={} width={} filters={} kernel={} pool={},{},{} hidden={} dropout={}",
            match self {
                Model::Cnn(_) => "cnn",
                Model::CnnLstm(_) => "cnn-lstm",
            },
            c.channels,
            c.width,
            filters.join(","),
            c.kernel,
            c.pool_window,
            c.pool_stride,
            c.pool_mode.as_str(),
            c.hidden,
            c.dropout,
        );
        if let Model::CnnLstm(m) = self {
            let l = m.config();
            s.push_str(&format!(
                " tau={} q={} head={} lstm_dropout={} fine_tune={}",
                l.tau,
                l.hidden,
                l.head_hidden,
                l.dropout,
                u8::from(l.fine_tune)
            ));
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header().into_bytes();
        out.push(b'\n');
        write_params(&self.params(), &mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("model file has no header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Format("model header is not UTF-8".into()))?;
        let fields = header
            .strip_prefix(MODEL_TAG)
            .ok_or_else(|| Error::Format(format!("model header must start with `{MODEL_TAG}`")))?;
        let kv: Vec<(&str, &str)> = fields.split_whitespace().filter_map(|f| f.split_once('=')).collect();
        let get = |key: &str| {
            kv.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Format(format!("model header lacks `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Format(format!("bad `{key}` in model header")))
        };
        let real = |key: &str| -> Result<f64> {
            get(key)?
                .parse()
                .map_err(|_| Error::Format(format!("bad `{key}` in model header")))
        };
        let mut cfg = CnnConfig::new(num("channels")?, num("width")?);
        cfg.filters = get("filters")?
            .split(',')
            .map(|f| f.parse().map_err(|_| Error::Format("bad filters in model header".into())))
            .collect::<Result<_>>()?;
        cfg.kernel = num("kernel")?;
        let pool: Vec<&str> = get("pool")?.split(',').collect();
        if pool.len() != 3 {
            return Err(Error::Format("pool must be window,stride,mode".into()));
        }
        cfg.pool_window = pool[0].parse().map_err(|_| Error::Format("bad pool window".into()))?;
        cfg.pool_stride = pool[1].parse().map_err(|_| Error::Format("bad pool stride".into()))?;
        cfg.pool_mode = pool[2].parse()?;
        cfg.hidden = num("hidden")?;
        cfg.dropout = real("dropout")?;
        let params = read_params(Cursor::new(&bytes[nl + 1..]))?;
        let mut rng = Rng::new(0);
        let mut cnn = Cnn::new(cfg, &mut rng)?;
        match get("arch")? {
            "cnn" => {
                cnn.set_params(&params)?;
                Ok(Model::Cnn(cnn))
            }
            "cnn-lstm" => {
                let mut l = LstmConfig::new(num("tau")?, num("q")?);
                l.head_hidden = num("head")?;
                l.dropout = real("lstm_dropout")?;
                l.fine_tune = num("fine_tune")? == 1;
                let mut m = CnnLstm::new(cnn, l, &mut rng)?;
                m.set_params(&params)?;
                Ok(Model::CnnLstm(m))
            }
            other => Err(Error::Format(format!("unknown architecture `{other}`"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        Model::from_bytes(&fs::read(path)?)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.header())
    }
}

/// Parameters from either a model file or a bare parameter file.
pub fn load_any_params(path: impl AsRef<Path>) -> Result<ParamSet> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(PARAM_MAGIC) {
        read_params(Cursor::new(&bytes))
    } else {
        Ok(Model::from_bytes(&bytes)?.params())
    }
}
