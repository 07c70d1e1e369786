//! Brute-force oracles and finite-difference gradient checks shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use std::sync::Arc;

use smm_core::dataio::{Dataset, Provenance};
use smm_core::layers::{softmax_xent, Conv1d, Dense, Dropout, Pool, PoolMode, Relu};
use smm_core::lstm::{Gate, LstmCell, LstmState};
use smm_core::models::{Cnn, CnnConfig, CnnLstm, LstmConfig, StepSource};
use smm_core::signal::{Annotation, Recording};
use smm_core::{ParamSet, Rng, Tensor};

pub const FD_EPS: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-12;

// ---------------------------------------------------------------- oracles

/// Direct convolution over an explicitly zero-padded copy of the input.
pub fn conv_oracle(x: &[Vec<f64>], w: &[Vec<Vec<f64>>], b: &[f64]) -> Vec<Vec<f64>> {
    let width = x[0].len();
    let m = w[0][0].len();
    let pad_left = (m - 1) / 2;
    let pad_right = m - 1 - pad_left;
    let padded: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            let mut p = vec![0.0; pad_left];
            p.extend_from_slice(row);
            p.extend(std::iter::repeat_n(0.0, pad_right));
            p
        })
        .collect();
    w.iter()
        .zip(b)
        .map(|(filter, &bias)| {
            (0..width)
                .map(|j| {
                    let mut s = bias;
                    for (ch, taps) in filter.iter().enumerate() {
                        for (i, &wv) in taps.iter().enumerate() {
                            s += wv * padded[ch][j + i];
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn pool_oracle(x: &[Vec<f64>], p: usize, u: usize, mode: PoolMode) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let mut out = Vec::new();
            let mut start = 0;
            while start + p <= row.len() {
                let win = &row[start..start + p];
                out.push(match mode {
                    PoolMode::Max => win.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    PoolMode::Average => win.iter().sum::<f64>() / p as f64,
                });
                start += u;
            }
            out
        })
        .collect()
}

/// Scalar LSTM step; weights act on `[h_prev; x]`.
pub fn lstm_step_oracle(cell: &LstmCell, c_prev: &[f64], h_prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let q = cell.hidden();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let pre = |g: Gate, r: usize| {
        let w = cell.weight(g);
        let mut s = cell.bias(g).data()[r];
        for k in 0..q {
            s += w.at2(r, k) * h_prev[k];
        }
        for (k, &xv) in x.iter().enumerate() {
            s += w.at2(r, q + k) * xv;
        }
        s
    };
    let mut c = vec![0.0; q];
    let mut h = vec![0.0; q];
    for r in 0..q {
        let f = sig(pre(Gate::Forget, r));
        let i = sig(pre(Gate::Input, r));
        let g = pre(Gate::Candidate, r).tanh();
        let o = sig(pre(Gate::Output, r));
        c[r] = f * c_prev[r] + i * g;
        h[r] = o * c[r].tanh();
    }
    (c, h)
}

/// Number of windows found by walking the start index.
pub fn window_count_oracle(len: usize, w: usize, step: usize) -> usize {
    let mut n = 0;
    let mut start = 0;
    while start + w <= len {
        n += 1;
        start += step;
    }
    n
}

// ---------------------------------------------------------------- helpers

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, _) = t.dims2().unwrap();
    (0..r).map(|i| t.row(i).to_vec()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn normal_tensor(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    Tensor::rand_normal(rng, shape, 0.0, std).unwrap()
}

/// `||a - n|| / (||a|| + ||n||)`, or the plain difference norm when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` around `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + FD_EPS;
            let up = f(&v);
            v[i] = orig - FD_EPS;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * FD_EPS)
        })
        .collect()
}

fn with_data(t: &Tensor, data: &[f64]) -> Tensor {
    Tensor::new(t.shape().to_vec(), data.to_vec()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Error of every named gradient against finite differences of a model loss.
fn check_params(params: &ParamSet, analytic: &ParamSet, mut loss: impl FnMut(&ParamSet) -> f64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (name, t) in params.iter() {
        let num = numeric_grad(t.data(), |v| {
            let mut p = params.clone();
            *p.get_mut(name).unwrap() = with_data(t, v);
            loss(&p)
        });
        let a = analytic.get(name).unwrap();
        out.push((name.to_string(), rel_error(a.data(), &num)));
    }
    out
}

/// Values spaced at least `gap` apart in random order, so max pooling has a
/// unique winner that a perturbation of `FD_EPS` cannot change.
fn distinct_values(rng: &mut Rng, n: usize, gap: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|k| (k as f64 - n as f64 / 2.0) * gap).collect();
    for k in (1..n).rev() {
        v.swap(k, rng.below(k + 1));
    }
    v
}

/// Values bounded away from zero so ReLU stays off its kink.
fn off_kink(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let s = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            s * rng.uniform_range(0.05, 2.0)
        })
        .collect()
}

// ---------------------------------------------------------------- per-layer checks

pub fn check_conv(seed: u64) -> Vec<(String, f64)> {
    let mut rng = Rng::new(seed);
    let c = 1 + rng.below(3);
    let f = 1 + rng.below(3);
    let m = 1 + rng.below(6);
    let width = m + rng.below(10);
    let x = normal_tensor(&mut rng, &[c, width], 1.0);
    let w = normal_tensor(&mut rng, &[f, c, m], 0.5);
    let b = normal_tensor(&mut rng, &[f], 0.5);
    let r = normal_tensor(&mut rng, &[f, width], 1.0);
    let mut conv = Conv1d::new(w.clone(), b.clone()).unwrap();
    conv.forward(&x).unwrap();
    let g = conv.backward(&r).unwrap();
    let gx = numeric_grad(x.data(), |v| dot(&conv.apply(&with_data(&x, v)).unwrap(), &r));
    let gw = numeric_grad(w.data(), |v| {
        dot(&Conv1d::new(with_data(&w, v), b.clone()).unwrap().apply(&x).unwrap(), &r)
    });
    let gb = numeric_grad(b.data(), |v| {
        dot(&Conv1d::new(w.clone(), with_data(&b, v)).unwrap().apply(&x).unwrap(), &r)
    });
    vec![
        ("conv.input".into(), rel_error(g.input.data(), &gx)),
        ("conv.filters".into(), rel_error(g.filters.data(), &gw)),
        ("conv.bias".into(), rel_error(g.bias.data(), &gb)),
    ]
}

pub fn check_relu(seed: u64) -> Vec<(String, f64)> {
    let mut rng = Rng::new(seed);
    let n = 2 + rng.below(20);
    let x = Tensor::from_vec(off_kink(&mut rng, n));
    let r = normal_tensor(&mut rng, &[n], 1.0);
    let mut relu = Relu::new();
    relu.forward(&x);
    let g = relu.backward(&r).unwrap();
    let num = numeric_grad(x.data(), |v| dot(&smm_core::layers::relu(&with_data(&x, v)), &r));
    vec![("relu".into(), rel_error(g.data(), &num))]
}

pub fn check_pool(seed: u64, mode: PoolMode) -> Vec<(String, f64)> {
    let mut rng = Rng::new(seed);
    let c = 1 + rng.below(3);
    let p = 1 + rng.below(4);
    let u = 1 + rng.below(3);
    let width = p + rng.below(12);
    let x = Tensor::new(vec![c, width], distinct_values(&mut rng, c * width, 0.01)).unwrap();
    let mut pool = Pool::new(p, u, mode).unwrap();
    let y = pool.forward(&x).unwrap();
    let r = normal_tensor(&mut rng, y.shape(), 1.0);
    let g = pool.backward(&r).unwrap();
    let num = numeric_grad(x.data(), |v| dot(&pool.apply(&with_data(&x, v)).unwrap(), &r));
    vec![(format!("pool.{}", mode.as_str()), rel_error(g.data(), &num))]
}

pub fn check_dense(seed: u64) -> Vec<(String, f64)> {
    let mut rng = Rng::new(seed);
    let n_in = 1 + rng.below(8);
    let n_out = 1 + rng.below(8);
    let x = normal_tensor(&mut rng, &[n_in], 1.0);
    let w = normal_tensor(&mut rng, &[n_out, n_in], 0.5);
    let b = normal_tensor(&mut rng, &[n_out], 0.5);
    let r = normal_tensor(&mut rng, &[n_out], 1.0);
    let mut dense = Dense::new(w.clone(), b.clone()).unwrap();
    dense.forward(&x).unwrap();
    let g = dense.backward(&r).unwrap();
    let gx = numeric_grad(x.data(), |v| dot(&dense.apply(&with_data(&x, v)).unwrap(), &r));
    let gw = numeric_grad(w.data(), |v| {
        dot(&Dense::new(with_data(&w, v), b.clone()).unwrap().apply(&x).unwrap(), &r)
    });
    let gb = numeric_grad(b.data(), |v| {
        dot(&Dense::new(w.clone(), with_data(&b, v)).unwrap().apply(&x).unwrap(), &r)
    });
    vec![
        ("dense.input".into(), rel_error(g.input.data(), &gx)),
        ("dense.weights".into(), rel_error(g.weights.data(), &gw)),
        ("dense.bias".into(), rel_error(g.bias.data(), &gb)),
    ]
}

pub fn check_dropout(seed: u64) -> Vec<(String, f64)> {
    let mut rng = Rng::new(seed);
    let n = 2 + rng.below(20);
    let x = normal_tensor(&mut rng, &[n], 1.0);
    let r = normal_tensor(&mut rng, &[n], 1.0);
    let mut drop = Dropout::new(0.5).unwrap();
    drop.set_training(true);
    let mask_seed = rng.next_u64();
    drop.forward(&x, &mut Rng::new(mask_seed));
    let g = drop.backward(&r);
    let num = numeric_grad(x.data(), |v| {
        let mut d = Dropout::new(0.5).unwrap();
        d.set_training(true);
        dot(&d.forward(&with_data(&x, v), &mut Rng::new(mask_seed)), &r)
    });
    vec![("dropout".into(), rel_error(g.data(), &num))]
}

pub fn check_softmax_xent(seed: u64) -> Vec<(String, f64)> {
    let mut rng = Rng::new(seed);
    let k = 2 + rng.below(4);
    let z = normal_tensor(&mut rng, &[k], 2.0);
    let label = rng.below(k);
    let g = softmax_xent(&z, label).unwrap().grad;
    let num = numeric_grad(z.data(), |v| softmax_xent(&with_data(&z, v), label).unwrap().loss);
    vec![("softmax_xent".into(), rel_error(g.data(), &num))]
}

fn random_cell(rng: &mut Rng, q: usize, d: usize) -> LstmCell {
    let weights = Gate::ALL.map(|_| normal_tensor(rng, &[q, q + d], 0.5));
    let biases = Gate::ALL.map(|_| normal_tensor(rng, &[q], 0.5));
    LstmCell::new(weights, biases).unwrap()
}

/// BPTT through a bare cell under the loss `r . h_tau`.
pub fn check_lstm(seed: u64, tau: usize, q: usize) -> Vec<(String, f64)> {
    let mut rng = Rng::new(seed);
    let d = 1 + rng.below(4);
    let mut cell = random_cell(&mut rng, q, d);
    let inputs: Vec<Tensor> = (0..tau).map(|_| normal_tensor(&mut rng, &[d], 1.0)).collect();
    let r = normal_tensor(&mut rng, &[q], 1.0);
    cell.forward_sequence(&inputs, None).unwrap();
    let g = cell.backward_sequence(&r).unwrap();

    let loss = |cell: &LstmCell, inputs: &[Tensor]| {
        let mut s = LstmState::zeros(q);
        for x in inputs {
            s = cell.step(&s, x).unwrap();
        }
        dot(&s.h, &r)
    };
    let mut out = Vec::new();
    for (k, gate) in Gate::ALL.iter().enumerate() {
        let w = cell.weight(*gate).clone();
        let num = numeric_grad(w.data(), |v| {
            let mut c = cell.clone();
            *c.weight_mut(*gate) = with_data(&w, v);
            loss(&c, &inputs)
        });
        out.push((format!("lstm.{}.weight", gate.tag()), rel_error(g.weights[k].data(), &num)));
        let b = cell.bias(*gate).clone();
        let num = numeric_grad(b.data(), |v| {
            let mut c = cell.clone();
            *c.bias_mut(*gate) = with_data(&b, v);
            loss(&c, &inputs)
        });
        out.push((format!("lstm.{}.bias", gate.tag()), rel_error(g.biases[k].data(), &num)));
    }
    for t in 0..tau {
        let num = numeric_grad(inputs[t].data(), |v| {
            let mut xs = inputs.clone();
            xs[t] = with_data(&inputs[t], v);
            loss(&cell, &xs)
        });
        out.push((format!("lstm.input{t}"), rel_error(g.inputs[t].data(), &num)));
    }
    out
}

// ---------------------------------------------------------------- end to end

pub fn tiny_cnn_config(channels: usize, width: usize) -> CnnConfig {
    let mut cfg = CnnConfig::new(channels, width);
    cfg.filters = vec![2, 2, 2];
    cfg.kernel = 5;
    cfg.hidden = 4;
    cfg
}

/// Replaces zero-initialised biases with small random values, so that dead
/// receptive fields do not put pre-activations exactly on the ReLU kink.
fn jitter_biases(rng: &mut Rng, params: &ParamSet) -> ParamSet {
    let mut p = params.clone();
    for (name, t) in p.iter_mut() {
        if name.ends_with(".bias") {
            *t = normal_tensor(rng, t.shape(), 0.1);
        }
    }
    p
}

/// Full CNN loss (training mode, fixed dropout mask) against finite differences
/// over every parameter.
pub fn check_cnn(seed: u64) -> Vec<(String, f64)> {
    let mut rng = Rng::new(seed);
    let mut cnn = Cnn::new(tiny_cnn_config(2, 30), &mut rng).unwrap();
    cnn.set_params(&jitter_biases(&mut rng, &cnn.params())).unwrap();
    cnn.set_training(true);
    let x = normal_tensor(&mut rng, &[2, 30], 1.0);
    let mask_seed = rng.next_u64();
    let params = cnn.params();
    let mut grads = params.zeros_like();
    // Score against the less likely class so the loss is far from saturation.
    let label = if cnn.loss_grad(&x, 0, &mut Rng::new(mask_seed), &mut params.zeros_like()).unwrap() < std::f64::consts::LN_2 { 1 } else { 0 };
    cnn.loss_grad(&x, label, &mut Rng::new(mask_seed), &mut grads).unwrap();
    check_params(&params, &grads, |p| {
        let mut m = cnn.clone();
        m.set_params(p).unwrap();
        let mut scratch = p.zeros_like();
        m.loss_grad(&x, label, &mut Rng::new(mask_seed), &mut scratch).unwrap()
    })
}

/// Window dataset of one random recording, for sequence-level checks.
pub fn random_windows(rng: &mut Rng, channels: usize, width: usize, step: usize, n: usize) -> Dataset {
    let len = width + step * (n - 1);
    let data: Vec<Vec<f64>> = (0..channels).map(|_| (0..len).map(|_| rng.standard_normal()).collect()).collect();
    let ann = vec![Annotation::smm(len / 2, len)];
    let rec = Arc::new(Recording::new("s", width as f64, data, ann).unwrap());
    Dataset::from_recordings(vec![rec], 1.0, step, Provenance::Synthetic).unwrap()
}

/// Joint CNN+LSTM loss over all parameters, including the shared convolutions.
pub fn check_cnn_lstm(seed: u64, tau: usize, q: usize) -> Vec<(String, f64)> {
    let mut rng = Rng::new(seed);
    let cnn = Cnn::new(tiny_cnn_config(2, 30), &mut rng).unwrap();
    let mut cfg = LstmConfig::new(tau, q);
    cfg.head_hidden = 3;
    cfg.fine_tune = true;
    let mut model = CnnLstm::new(cnn, cfg, &mut rng).unwrap();
    model.set_params(&jitter_biases(&mut rng, &model.params())).unwrap();
    model.set_training(true);
    let data = random_windows(&mut rng, 2, 30, 5, tau);
    let mask_seed = rng.next_u64();
    let params = model.params();
    let mut grads = params.zeros_like();
    let source = StepSource::Windows(&data);
    let l0 = model.loss_grad(source, 0, 0, &mut Rng::new(mask_seed), &mut params.zeros_like()).unwrap();
    let label = if l0 < std::f64::consts::LN_2 { 1 } else { 0 };
    model
        .loss_grad(StepSource::Windows(&data), 0, label, &mut Rng::new(mask_seed), &mut grads)
        .unwrap();
    check_params(&params, &grads, |p| {
        let mut m = model.clone();
        m.set_params(p).unwrap();
        let mut scratch = p.zeros_like();
        m.loss_grad(StepSource::Windows(&data), 0, label, &mut Rng::new(mask_seed), &mut scratch)
            .unwrap()
    })
}

/// Worst relative error across every layer type and end-to-end model for one seed.
pub fn all_gradient_checks(seed: u64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    out.extend(check_conv(seed));
    out.extend(check_relu(seed));
    out.extend(check_pool(seed, PoolMode::Max));
    out.extend(check_pool(seed, PoolMode::Average));
    out.extend(check_dense(seed));
    out.extend(check_dropout(seed));
    out.extend(check_softmax_xent(seed));
    for tau in [1, 3, 5] {
        for q in [2, 5] {
            out.extend(check_lstm(seed, tau, q).into_iter().map(|(n, e)| (format!("{n}@tau{tau}q{q}"), e)));
        }
    }
    out.extend(check_cnn(seed).into_iter().map(|(n, e)| (format!("cnn.{n}"), e)));
    for (tau, q) in [(1, 2), (3, 2), (5, 5)] {
        out.extend(
            check_cnn_lstm(seed, tau, q)
                .into_iter()
                .map(|(n, e)| (format!("cnn_lstm@tau{tau}q{q}.{n}"), e)),
        );
    }
    out
}
