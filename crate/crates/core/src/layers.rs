//! CNN building blocks with explicit forward and backward passes.
//!
//! All layers operate on one sample at a time. Feature maps are `[channels, length]`
//! tensors; dense layers take rank-1 vectors. Each layer caches what its backward
//! pass needs during `forward`, so a forward/backward pair must run on the same
//! instance.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{dot, Tensor};

fn missing_forward(layer: &str) -> Error {
    Error::State(format!("{layer}: backward called before forward"))
}

/// Same-length 1D convolution over zero-padded input.
///
/// For filter length `m` the input is padded with `(m - 1) / 2` zeros on the left
/// and `m / 2` on the right, so `out[k][j] = bias[k] + sum_{ch,i} w[k][ch][i] *
/// x[ch][j + i - (m - 1) / 2]` and the output keeps the input width.
#[derive(Debug, Clone)]
pub struct Conv1d {
    filters: Tensor,
    bias: Tensor,
    input: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub filters: Tensor,
    pub bias: Tensor,
}

impl Conv1d {
    /// `filters` is `[f, c, m]`, `bias` is `[f]`.
    pub fn new(filters: Tensor, bias: Tensor) -> Result<Self> {
        if filters.rank() != 3 || bias.shape() != [filters.shape()[0]] {
            return Err(Error::dim("conv1d", filters.shape(), bias.shape()));
        }
        Ok(Conv1d {
            filters,
            bias,
            input: None,
        })
    }

    pub fn init(rng: &mut Rng, in_channels: usize, n_filters: usize, len: usize, std: f64) -> Result<Self> {
        if in_channels == 0 || n_filters == 0 || len == 0 {
            return Err(Error::Config("conv1d dimensions must be >= 1".into()));
        }
        let filters = Tensor::rand_normal(rng, &[n_filters, in_channels, len], 0.0, std)?;
        Conv1d::new(filters, Tensor::zeros(&[n_filters]))
    }

    pub fn n_filters(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.filters.shape()[1]
    }

    pub fn kernel_len(&self) -> usize {
        self.filters.shape()[2]
    }

    pub fn pad_left(&self) -> usize {
        (self.kernel_len() - 1) / 2
    }

    pub fn filters(&self) -> &Tensor {
        &self.filters
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.filters, &mut self.bias)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(out)
    }

    /// Forward pass without touching the backward cache.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (c, width) = x.dims2()?;
        if c != self.in_channels() {
            return Err(Error::dim("conv1d", self.filters.shape(), x.shape()));
        }
        let (f, m, pad) = (self.n_filters(), self.kernel_len(), self.pad_left() as isize);
        let w = self.filters.data();
        let xd = x.data();
        let mut out = vec![0.0; f * width];
        for k in 0..f {
            let row = &mut out[k * width..(k + 1) * width];
            row.fill(self.bias.data()[k]);
            for ch in 0..c {
                let xrow = &xd[ch * width..(ch + 1) * width];
                let wrow = &w[(k * c + ch) * m..(k * c + ch + 1) * m];
                for (i, &wi) in wrow.iter().enumerate() {
                    // output j reads input j + shift
                    let shift = i as isize - pad;
                    let j_lo = (-shift).max(0) as usize;
                    let j_hi = (width as isize - shift).min(width as isize).max(0) as usize;
                    for j in j_lo..j_hi {
                        row[j] += wi * xrow[(j as isize + shift) as usize];
                    }
                }
            }
        }
        Tensor::new(vec![f, width], out)
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<ConvGrads> {
        let x = self.input.as_ref().ok_or_else(|| missing_forward("conv1d"))?;
        let (c, width) = x.dims2()?;
        let (f, m, pad) = (self.n_filters(), self.kernel_len(), self.pad_left() as isize);
        if grad_out.shape() != [f, width] {
            return Err(Error::dim("conv1d backward", &[f, width], grad_out.shape()));
        }
        let w = self.filters.data();
        let xd = x.data();
        let g = grad_out.data();
        let mut gin = vec![0.0; c * width];
        let mut gw = vec![0.0; f * c * m];
        let mut gb = vec![0.0; f];
        for k in 0..f {
            let grow = &g[k * width..(k + 1) * width];
            gb[k] = grow.iter().sum();
            for ch in 0..c {
                let xrow = &xd[ch * width..(ch + 1) * width];
                let base = (k * c + ch) * m;
                for i in 0..m {
                    let shift = i as isize - pad;
                    let j_lo = (-shift).max(0) as usize;
                    let j_hi = (width as isize - shift).min(width as isize).max(0) as usize;
                    if j_lo >= j_hi {
                        continue;
                    }
                    let wi = w[base + i];
                    let (s_lo, s_hi) = ((j_lo as isize + shift) as usize, (j_hi as isize + shift) as usize);
                    gw[base + i] = dot(&grow[j_lo..j_hi], &xrow[s_lo..s_hi]);
                    let gin_row = &mut gin[ch * width + s_lo..ch * width + s_hi];
                    for (gi, gj) in gin_row.iter_mut().zip(&grow[j_lo..j_hi]) {
                        *gi += wi * gj;
                    }
                }
            }
        }
        Ok(ConvGrads {
            input: Tensor::new(vec![c, width], gin)?,
            filters: Tensor::new(vec![f, c, m], gw)?,
            bias: Tensor::new(vec![f], gb)?,
        })
    }
}

/// Elementwise `max(0, x)`; the subgradient at 0 is 0.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    input: Option<Tensor>,
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.input = Some(x.clone());
        relu(x)
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| missing_forward("relu"))?;
        if x.shape() != grad_out.shape() {
            return Err(Error::dim("relu backward", x.shape(), grad_out.shape()));
        }
        let data = x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Average,
}

impl PoolMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolMode::Max => "max",
            PoolMode::Average => "avg",
        }
    }
}

impl std::str::FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolMode::Max),
            "avg" | "average" => Ok(PoolMode::Average),
            other => Err(Error::arg(format!("unknown pooling mode `{other}`"))),
        }
    }
}

/// 1D pooling along the length axis. Incomplete trailing windows are dropped.
#[derive(Debug, Clone)]
pub struct Pool {
    window: usize,
    stride: usize,
    mode: PoolMode,
    in_shape: Option<(usize, usize)>,
    argmax: Vec<usize>,
}

impl Pool {
    pub fn new(window: usize, stride: usize, mode: PoolMode) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::Config("pool window and stride must be >= 1".into()));
        }
        Ok(Pool {
            window,
            stride,
            mode,
            in_shape: None,
            argmax: Vec::new(),
        })
    }

    pub fn mode(&self) -> PoolMode {
        self.mode
    }

    /// `floor((len - window) / stride) + 1`, or `None` when `len < window`.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        (len >= self.window).then(|| (len - self.window) / self.stride + 1)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut argmax = std::mem::take(&mut self.argmax);
        let out = self.pool(x, Some(&mut argmax))?;
        self.argmax = argmax;
        self.in_shape = Some((x.shape()[0], x.shape()[1]));
        Ok(out)
    }

    /// Forward pass without touching the backward cache.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.pool(x, None)
    }

    fn pool(&self, x: &Tensor, mut argmax: Option<&mut Vec<usize>>) -> Result<Tensor> {
        let (f, len) = x.dims2()?;
        let out_len = self
            .out_len(len)
            .ok_or_else(|| Error::dim("pool", &[self.window], x.shape()))?;
        let xd = x.data();
        let mut out = Vec::with_capacity(f * out_len);
        if let Some(a) = argmax.as_deref_mut() {
            a.clear();
        }
        for k in 0..f {
            let row = &xd[k * len..(k + 1) * len];
            for j in 0..out_len {
                let start = j * self.stride;
                let win = &row[start..start + self.window];
                match self.mode {
                    PoolMode::Average => out.push(win.iter().sum::<f64>() / self.window as f64),
                    PoolMode::Max => {
                        let mut best = 0;
                        for (i, &v) in win.iter().enumerate() {
                            if v > win[best] {
                                best = i;
                            }
                        }
                        if let Some(a) = argmax.as_deref_mut() {
                            a.push(k * len + start + best);
                        }
                        out.push(win[best]);
                    }
                }
            }
        }
        Tensor::new(vec![f, out_len], out)
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let (f, len) = self.in_shape.ok_or_else(|| missing_forward("pool"))?;
        let out_len = (len - self.window) / self.stride + 1;
        if grad_out.shape() != [f, out_len] {
            return Err(Error::dim("pool backward", &[f, out_len], grad_out.shape()));
        }
        let mut gin = vec![0.0; f * len];
        let g = grad_out.data();
        match self.mode {
            PoolMode::Max => {
                for (&src, &gv) in self.argmax.iter().zip(g) {
                    gin[src] += gv;
                }
            }
            PoolMode::Average => {
                let share = 1.0 / self.window as f64;
                for k in 0..f {
                    for j in 0..out_len {
                        let gv = g[k * out_len + j] * share;
                        let start = k * len + j * self.stride;
                        for v in &mut gin[start..start + self.window] {
                            *v += gv;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![f, len], gin)
    }
}

/// Collapses the rows of a feature map into one vector.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    in_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.in_shape = Some(x.shape().to_vec());
        Tensor::from_vec(x.data().to_vec())
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self.in_shape.as_ref().ok_or_else(|| missing_forward("flatten"))?;
        grad_out.reshape(shape)
    }
}

/// Fully-connected layer `W x + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    weights: Tensor,
    bias: Tensor,
    input: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let (out, _) = weights.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::dim("dense", weights.shape(), bias.shape()));
        }
        Ok(Dense {
            weights,
            bias,
            input: None,
        })
    }

    pub fn init(rng: &mut Rng, inputs: usize, outputs: usize, std: f64) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Config("dense dimensions must be >= 1".into()));
        }
        Dense::new(
            Tensor::rand_normal(rng, &[outputs, inputs], 0.0, std)?,
            Tensor::zeros(&[outputs]),
        )
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.weights, &mut self.bias)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 1 || x.len() != self.in_features() {
            return Err(Error::dim("dense", self.weights.shape(), x.shape()));
        }
        let out = (0..self.out_features())
            .map(|o| {
                let row = self.weights.row(o);
                self.bias.data()[o] + dot(row, x.data())
            })
            .collect();
        Ok(Tensor::from_vec(out))
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<DenseGrads> {
        let x = self.input.as_ref().ok_or_else(|| missing_forward("dense"))?;
        let (out, inp) = (self.out_features(), self.in_features());
        if grad_out.shape() != [out] {
            return Err(Error::dim("dense backward", &[out], grad_out.shape()));
        }
        let g = grad_out.data();
        let mut gin = vec![0.0; inp];
        let mut gw = vec![0.0; out * inp];
        for o in 0..out {
            let row = self.weights.row(o);
            for i in 0..inp {
                gin[i] += row[i] * g[o];
                gw[o * inp + i] = g[o] * x.data()[i];
            }
        }
        Ok(DenseGrads {
            input: Tensor::from_vec(gin),
            weights: Tensor::new(vec![out, inp], gw)?,
            bias: grad_out.clone(),
        })
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train time, so
/// inference is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    training: bool,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::arg(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Dropout {
            rate,
            training: false,
            mask: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn forward(&mut self, x: &Tensor, rng: &mut Rng) -> Tensor {
        if !self.training || self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.bernoulli(keep) { scale } else { 0.0 })
            .collect();
        let y = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        )
        .expect("mask matches input length");
        self.mask = Some(mask);
        y
    }

    pub fn backward(&self, grad_out: &Tensor) -> Tensor {
        match &self.mask {
            None => grad_out.clone(),
            Some(mask) => Tensor::new(
                grad_out.shape().to_vec(),
                grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect(),
            )
            .expect("mask matches gradient length"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SoftmaxXent {
    pub loss: f64,
    pub probs: Tensor,
    pub grad: Tensor,
}

/// Softmax probabilities with the max logit subtracted before exponentiation.
pub fn softmax(z: &Tensor) -> Tensor {
    let max = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.data().iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::from_vec(exps.into_iter().map(|e| e / total).collect())
}

/// Cross-entropy of `softmax(z)` against `label`, with its gradient in `z`.
pub fn softmax_xent(z: &Tensor, label: usize) -> Result<SoftmaxXent> {
    let k = z.len();
    if z.rank() != 1 || k < 2 {
        return Err(Error::arg(format!("softmax needs a vector of >= 2 logits, got {:?}", z.shape())));
    }
    if label >= k {
        return Err(Error::arg(format!("label {label} out of range for {k} classes")));
    }
    let max = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = z.data().iter().map(|v| v - max).collect();
    let log_total = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
    let loss = log_total - shifted[label];
    let probs = softmax(z);
    let mut grad = probs.clone();
    grad.data_mut()[label] -= 1.0;
    Ok(SoftmaxXent { loss, probs, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_keeps_width() {
        let mut rng = Rng::new(0);
        let mut conv = Conv1d::init(&mut rng, 9, 4, 9, 0.01).unwrap();
        let x = Tensor::rand_normal(&mut rng, &[9, 100], 0.0, 1.0).unwrap();
        assert_eq!(conv.forward(&x).unwrap().shape(), &[4, 100]);
    }

    #[test]
    fn conv_center_impulse_sums_channels() {
        let m = 5;
        let mut w = Tensor::zeros(&[1, 3, m]);
        for ch in 0..3 {
            w.data_mut()[ch * m + (m - 1) / 2] = 1.0;
        }
        let mut conv = Conv1d::new(w, Tensor::zeros(&[1])).unwrap();
        let mut rng = Rng::new(5);
        let x = Tensor::rand_normal(&mut rng, &[3, 12], 0.0, 1.0).unwrap();
        let y = conv.forward(&x).unwrap();
        for j in 0..12 {
            let expect = x.at2(0, j) + x.at2(1, j) + x.at2(2, j);
            assert!((y.at2(0, j) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut rng = Rng::new(0);
        let mut conv = Conv1d::init(&mut rng, 3, 2, 3, 0.1).unwrap();
        assert!(matches!(
            conv.forward(&Tensor::zeros(&[2, 10])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn conv_backward_before_forward_is_state_error() {
        let mut rng = Rng::new(0);
        let conv = Conv1d::init(&mut rng, 3, 2, 3, 0.1).unwrap();
        assert!(matches!(conv.backward(&Tensor::zeros(&[2, 4])), Err(Error::State(_))));
    }

    #[test]
    fn conv_zero_grad_gives_zero_grads() {
        let mut rng = Rng::new(1);
        let mut conv = Conv1d::init(&mut rng, 2, 3, 3, 0.5).unwrap();
        let x = Tensor::rand_normal(&mut rng, &[2, 7], 0.0, 1.0).unwrap();
        conv.forward(&x).unwrap();
        let g = conv.backward(&Tensor::zeros(&[3, 7])).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.filters.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
        assert_eq!(g.filters.shape(), conv.filters().shape());
    }

    #[test]
    fn relu_definition() {
        let mut r = Relu::new();
        let y = r.forward(&Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = r.backward(&Tensor::from_vec(vec![5.0, 5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn pool_lengths_follow_floor_rule() {
        let mut pool = Pool::new(3, 2, PoolMode::Max).unwrap();
        let lengths: Vec<usize> = [100usize, 49, 24].iter().map(|&n| pool.out_len(n).unwrap()).collect();
        assert_eq!(lengths, vec![49, 24, 11]);
        let y = pool.forward(&Tensor::zeros(&[2, 100])).unwrap();
        assert_eq!(y.shape(), &[2, 49]);
        assert!(pool.forward(&Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn avg_pool_of_constant_is_constant() {
        let mut pool = Pool::new(3, 2, PoolMode::Average).unwrap();
        let y = pool.forward(&Tensor::filled(&[2, 11], 1.5)).unwrap();
        assert!(y.data().iter().all(|&v| (v - 1.5).abs() < 1e-15));
    }

    #[test]
    fn max_pool_ties_go_to_earliest() {
        let mut pool = Pool::new(3, 2, PoolMode::Max).unwrap();
        let x = Tensor::new(vec![1, 5], vec![1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        pool.forward(&x).unwrap();
        let g = pool.backward(&Tensor::new(vec![1, 2], vec![1.0, 10.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 10.0, 0.0, 0.0]);
    }

    #[test]
    fn dense_identity_and_bias() {
        let mut d = Dense::new(Tensor::identity(3), Tensor::zeros(&[3])).unwrap();
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(d.forward(&x).unwrap(), x);
        let mut d = Dense::new(Tensor::filled(&[2, 3], 0.7), Tensor::from_vec(vec![0.1, -0.2])).unwrap();
        assert_eq!(d.forward(&Tensor::zeros(&[3])).unwrap().data(), &[0.1, -0.2]);
        assert!(d.forward(&Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn dropout_identities() {
        let mut rng = Rng::new(9);
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let mut d0 = Dropout::new(0.0).unwrap();
        d0.set_training(true);
        assert_eq!(d0.forward(&x, &mut rng), x);
        let mut d = Dropout::new(0.9).unwrap();
        assert_eq!(d.forward(&x, &mut rng), x);
        assert!(Dropout::new(1.0).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = Rng::new(31);
        let n = 100_000;
        let x = Tensor::filled(&[n], 1.0);
        let mut d = Dropout::new(0.5).unwrap();
        d.set_training(true);
        let y = d.forward(&x, &mut rng);
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((survivors - 0.5).abs() < 0.01, "{survivors}");
        let mean = y.sum() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        let g = d.backward(&Tensor::filled(&[n], 1.0));
        assert_eq!(g, y);
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_xent(&Tensor::from_vec(vec![0.0, 0.0]), 0).unwrap();
        assert_eq!(s.probs.data(), &[0.5, 0.5]);
        assert!((s.loss - std::f64::consts::LN_2).abs() < 1e-15);

        let s = softmax_xent(&Tensor::from_vec(vec![1000.0, 0.0]), 0).unwrap();
        assert!((s.probs.data()[0] - 1.0).abs() < 1e-15);
        assert!(s.probs.data()[1] >= 0.0 && s.probs.data()[1] < 1e-300);
        assert!(s.loss.is_finite());

        let s = softmax_xent(&Tensor::from_vec(vec![1000.0, 0.0]), 1).unwrap();
        assert!((s.loss - 1000.0).abs() < 1e-9);

        assert!(softmax_xent(&Tensor::from_vec(vec![0.0, 1.0]), 2).is_err());
    }
}
