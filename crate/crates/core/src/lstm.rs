//! LSTM cell with full backpropagation through time.
//!
//! All four gates read the concatenation `[h_{t-1}, x_t]`:
//!
//! ```text
//! f = sigmoid(W_f [h, x] + b_f)      i = sigmoid(W_i [h, x] + b_i)
//! g = tanh(W_c [h, x] + b_c)         o = sigmoid(W_o [h, x] + b_o)
//! c' = f * c + i * g                 h' = o * tanh(c')
//! ```
//!
//! Sequences always start from the zero state unless an explicit initial state is
//! given; no state is carried between sequences.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{dot, sigmoid, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget,
    Input,
    Candidate,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Candidate, Gate::Output];

    pub fn tag(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Candidate => "c",
            Gate::Output => "o",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Tensor,
    pub h: Tensor,
}

impl LstmState {
    pub fn zeros(q: usize) -> Self {
        LstmState {
            c: Tensor::zeros(&[q]),
            h: Tensor::zeros(&[q]),
        }
    }
}

/// `tau` consecutive static-feature vectors and the label of the last one.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub inputs: Vec<Tensor>,
    pub label: usize,
}

#[derive(Debug, Clone)]
struct StepCache {
    concat: Vec<f64>,
    gates: [Vec<f64>; 4],
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Gate activations and states of one step, exposed for inspection.
#[derive(Debug, Clone)]
pub struct StepTrace<'a> {
    pub forget: &'a [f64],
    pub input: &'a [f64],
    pub candidate: &'a [f64],
    pub output: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    /// Indexed like [`Gate::ALL`].
    pub weights: [Tensor; 4],
    pub biases: [Tensor; 4],
    pub inputs: Vec<Tensor>,
    pub init_h: Tensor,
    pub init_c: Tensor,
}

#[derive(Debug, Clone)]
pub struct LstmCell {
    q: usize,
    d: usize,
    weights: [Tensor; 4],
    biases: [Tensor; 4],
    trace: Vec<StepCache>,
}

impl LstmCell {
    pub fn new(weights: [Tensor; 4], biases: [Tensor; 4]) -> Result<Self> {
        let (q, cols) = weights[0].dims2()?;
        if cols <= q {
            return Err(Error::Config(format!(
                "gate weights must be q x (q + d) with d >= 1, got {:?}",
                weights[0].shape()
            )));
        }
        for w in &weights {
            if w.shape() != [q, cols] {
                return Err(Error::dim("lstm weights", &[q, cols], w.shape()));
            }
        }
        for b in &biases {
            if b.shape() != [q] {
                return Err(Error::dim("lstm bias", &[q], b.shape()));
            }
        }
        Ok(LstmCell {
            q,
            d: cols - q,
            weights,
            biases,
            trace: Vec::new(),
        })
    }

    pub fn zeros(q: usize, d: usize) -> Result<Self> {
        if q == 0 || d == 0 {
            return Err(Error::Config("lstm needs q >= 1 and d >= 1".into()));
        }
        let w = || Tensor::zeros(&[q, q + d]);
        let b = || Tensor::zeros(&[q]);
        LstmCell::new([w(), w(), w(), w()], [b(), b(), b(), b()])
    }

    /// Weights ~ N(0, std^2), biases 0 except the forget bias.
    pub fn init(rng: &mut Rng, q: usize, d: usize, std: f64, forget_bias: f64) -> Result<Self> {
        let mut cell = LstmCell::zeros(q, d)?;
        for w in &mut cell.weights {
            *w = Tensor::rand_normal(rng, &[q, q + d], 0.0, std)?;
        }
        cell.biases[Gate::Forget.index()] = Tensor::filled(&[q], forget_bias);
        Ok(cell)
    }

    pub fn hidden(&self) -> usize {
        self.q
    }

    pub fn input_len(&self) -> usize {
        self.d
    }

    pub fn weight(&self, gate: Gate) -> &Tensor {
        &self.weights[gate.index()]
    }

    pub fn bias(&self, gate: Gate) -> &Tensor {
        &self.biases[gate.index()]
    }

    pub fn weight_mut(&mut self, gate: Gate) -> &mut Tensor {
        &mut self.weights[gate.index()]
    }

    pub fn bias_mut(&mut self, gate: Gate) -> &mut Tensor {
        &mut self.biases[gate.index()]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 1 || x.len() != self.d {
            return Err(Error::dim("lstm input", &[self.d], x.shape()));
        }
        Ok(())
    }

    fn check_state(&self, s: &LstmState) -> Result<()> {
        if s.c.shape() != [self.q] || s.h.shape() != [self.q] {
            return Err(Error::dim("lstm state", &[self.q], s.h.shape()));
        }
        Ok(())
    }

    fn compute_step(&self, c_prev: &[f64], h_prev: &[f64], x: &[f64]) -> StepCache {
        let q = self.q;
        let mut concat = Vec::with_capacity(q + self.d);
        concat.extend_from_slice(h_prev);
        concat.extend_from_slice(x);
        let gates = Gate::ALL.map(|gate| {
            let w = &self.weights[gate.index()];
            let b = self.biases[gate.index()].data();
            (0..q)
                .map(|r| {
                    let pre = b[r] + dot(w.row(r), &concat);
                    if gate == Gate::Candidate {
                        pre.tanh()
                    } else {
                        sigmoid(pre)
                    }
                })
                .collect::<Vec<f64>>()
        });
        let [f, i, g, _] = &gates;
        let tanh_c = (0..q).map(|r| (f[r] * c_prev[r] + i[r] * g[r]).tanh()).collect();
        StepCache {
            concat,
            gates,
            c_prev: c_prev.to_vec(),
            tanh_c,
        }
    }

    fn state_of(cache: &StepCache) -> (Vec<f64>, Vec<f64>) {
        let [f, i, g, o] = &cache.gates;
        let c = (0..f.len()).map(|r| f[r] * cache.c_prev[r] + i[r] * g[r]).collect();
        let h = o.iter().zip(&cache.tanh_c).map(|(o, t)| o * t).collect();
        (c, h)
    }

    /// One recurrence step; leaves the BPTT cache untouched.
    pub fn step(&self, state: &LstmState, x: &Tensor) -> Result<LstmState> {
        self.check_input(x)?;
        self.check_state(state)?;
        let cache = self.compute_step(state.c.data(), state.h.data(), x.data());
        let (c, h) = Self::state_of(&cache);
        Ok(LstmState {
            c: Tensor::from_vec(c),
            h: Tensor::from_vec(h),
        })
    }

    /// Unrolls the cell over `inputs` from `init` (zero state when `None`) and
    /// returns the final output `h`. The trajectory is cached for
    /// [`LstmCell::backward_sequence`].
    pub fn forward_sequence(&mut self, inputs: &[Tensor], init: Option<&LstmState>) -> Result<Tensor> {
        if inputs.is_empty() {
            return Err(Error::arg("lstm sequence must contain at least one step"));
        }
        let zero = LstmState::zeros(self.q);
        let init = init.unwrap_or(&zero);
        self.check_state(init)?;
        self.trace.clear();
        let mut c = init.c.data().to_vec();
        let mut h = init.h.data().to_vec();
        for x in inputs {
            self.check_input(x)?;
            let cache = self.compute_step(&c, &h, x.data());
            (c, h) = Self::state_of(&cache);
            self.trace.push(cache);
        }
        Ok(Tensor::from_vec(h))
    }

    /// Number of cached steps from the last forward pass.
    pub fn trace_len(&self) -> usize {
        self.trace.len()
    }

    pub fn trace_step(&self, t: usize) -> Option<StepTrace<'_>> {
        self.trace.get(t).map(|s| StepTrace {
            forget: &s.gates[0],
            input: &s.gates[1],
            candidate: &s.gates[2],
            output: &s.gates[3],
        })
    }

    /// Exact BPTT for a loss that depends only on the final output `h_T`.
    pub fn backward_sequence(&self, grad_h_final: &Tensor) -> Result<LstmGrads> {
        if self.trace.is_empty() {
            return Err(Error::State("lstm: backward called before forward".into()));
        }
        let (q, d) = (self.q, self.d);
        if grad_h_final.shape() != [q] {
            return Err(Error::dim("lstm backward", &[q], grad_h_final.shape()));
        }
        let cols = q + d;
        let mut gw: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; q * cols]);
        let mut gb: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; q]);
        let mut ginputs = vec![Tensor::zeros(&[d]); self.trace.len()];

        let mut dh = grad_h_final.data().to_vec();
        let mut dc = vec![0.0; q];
        let mut pre = [vec![0.0; q], vec![0.0; q], vec![0.0; q], vec![0.0; q]];
        for (t, step) in self.trace.iter().enumerate().rev() {
            let [f, i, g, o] = &step.gates;
            for r in 0..q {
                let tc = step.tanh_c[r];
                let d_o = dh[r] * tc;
                dc[r] += dh[r] * o[r] * (1.0 - tc * tc);
                let d_f = dc[r] * step.c_prev[r];
                let d_i = dc[r] * g[r];
                let d_g = dc[r] * i[r];
                pre[0][r] = d_f * f[r] * (1.0 - f[r]);
                pre[1][r] = d_i * i[r] * (1.0 - i[r]);
                pre[2][r] = d_g * (1.0 - g[r] * g[r]);
                pre[3][r] = d_o * o[r] * (1.0 - o[r]);
                dc[r] *= f[r];
            }
            let mut dz = vec![0.0; cols];
            for k in 0..4 {
                let w = self.weights[k].data();
                for r in 0..q {
                    let a = pre[k][r];
                    gb[k][r] += a;
                    if a == 0.0 {
                        continue;
                    }
                    let wrow = &w[r * cols..(r + 1) * cols];
                    let grow = &mut gw[k][r * cols..(r + 1) * cols];
                    for (gv, z) in grow.iter_mut().zip(&step.concat) {
                        *gv += a * z;
                    }
                    for (dv, wv) in dz.iter_mut().zip(wrow) {
                        *dv += a * wv;
                    }
                }
            }
            dh.copy_from_slice(&dz[..q]);
            ginputs[t] = Tensor::from_vec(dz[q..].to_vec());
        }
        let to_w = |v: Vec<f64>| Tensor::new(vec![q, cols], v);
        let [w0, w1, w2, w3] = gw;
        let [b0, b1, b2, b3] = gb;
        Ok(LstmGrads {
            weights: [to_w(w0)?, to_w(w1)?, to_w(w2)?, to_w(w3)?],
            biases: [
                Tensor::from_vec(b0),
                Tensor::from_vec(b1),
                Tensor::from_vec(b2),
                Tensor::from_vec(b3),
            ],
            inputs: ginputs,
            init_h: Tensor::from_vec(dh),
            init_c: Tensor::from_vec(dc),
        })
    }
}
