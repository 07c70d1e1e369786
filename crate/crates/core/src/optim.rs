//! Named parameter sets, SGD-with-momentum and RMSProp updates, and the portable
//! parameter file format.
//!
//! # Parameter file layout
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic    8 bytes  "SMMPARAM"
//! version  u32      currently 1
//! count    u32      number of tensor records
//! record   repeated `count` times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rank     u32, dims (rank x u64)
//!   values   product(dims) x f64
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PARAM_MAGIC: &[u8; 8] = b"SMMPARAM";
pub const PARAM_VERSION: u32 = 1;

/// Ordered, uniquely named collection of parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::arg(format!("duplicate parameter name `{name}`")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Errors unless `other` has the same names, order and shapes.
    pub fn check_aligned(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::arg(format!(
                "parameter sets differ in size: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in self.entries.iter().zip(&other.entries) {
            if n1 != n2 {
                return Err(Error::arg(format!("parameter `{n1}` aligned with `{n2}`")));
            }
            if t1.shape() != t2.shape() {
                return Err(Error::arg(format!(
                    "parameter `{n1}` has shape {:?} but its gradient has {:?}",
                    t1.shape(),
                    t2.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ParamSet) -> Result<()> {
        self.check_aligned(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in &mut self.entries {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }

    /// Overwrites every tensor of `self` whose name passes `keep` with the
    /// same-named tensor of `source`. Returns how many tensors were copied.
    pub fn copy_from(&mut self, source: &ParamSet, keep: impl Fn(&str) -> bool) -> Result<usize> {
        let mut copied = 0;
        for (name, dst) in self.entries.iter_mut().filter(|(n, _)| keep(n)) {
            let src = source
                .get(name)
                .ok_or_else(|| Error::arg(format!("source parameters lack tensor `{name}`")))?;
            if src.shape() != dst.shape() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: dst.shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            *dst = src.clone();
            copied += 1;
        }
        Ok(copied)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    RmsProp { decay: f64, epsilon: f64 },
}

/// Update rule plus its per-parameter accumulators (velocity for SGD, running
/// mean square for RMSProp). Accumulators are created on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    accumulators: Option<ParamSet>,
}

impl Optimizer {
    pub fn sgd_momentum(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::arg(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Optimizer::new(OptimizerKind::SgdMomentum { momentum }, learning_rate)
    }

    pub fn rmsprop(learning_rate: f64, decay: f64, epsilon: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::arg(format!("rmsprop decay must be in (0, 1), got {decay}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::arg(format!("rmsprop epsilon must be > 0, got {epsilon}")));
        }
        Optimizer::new(OptimizerKind::RmsProp { decay, epsilon }, learning_rate)
    }

    fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::arg(format!("learning rate must be > 0, got {learning_rate}")));
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            accumulators: None,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor> {
        self.accumulators.as_ref()?.get(name)
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_aligned(grads)?;
        let acc = self.accumulators.get_or_insert_with(|| params.zeros_like());
        acc.check_aligned(params)?;
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                sgd_momentum_step(self.learning_rate, momentum, acc, params, grads)
            }
            OptimizerKind::RmsProp { decay, epsilon } => {
                rmsprop_step(self.learning_rate, decay, epsilon, acc, params, grads)
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("parameters after optimizer step".into()));
        }
        Ok(())
    }
}

/// `v <- mu v - lr g; p <- p + v`.
fn sgd_momentum_step(lr: f64, mu: f64, velocity: &mut ParamSet, params: &mut ParamSet, grads: &ParamSet) {
    for (((_, v), (_, p)), (_, g)) in velocity.iter_mut().zip(params.iter_mut()).zip(grads.iter()) {
        for ((v, p), g) in v.data_mut().iter_mut().zip(p.data_mut()).zip(g.data()) {
            *v = mu * *v - lr * g;
            *p += *v;
        }
    }
}

/// `s <- rho s + (1 - rho) g^2; p <- p - lr g / (sqrt(s) + eps)`.
fn rmsprop_step(lr: f64, rho: f64, eps: f64, mean_sq: &mut ParamSet, params: &mut ParamSet, grads: &ParamSet) {
    for (((_, s), (_, p)), (_, g)) in mean_sq.iter_mut().zip(params.iter_mut()).zip(grads.iter()) {
        for ((s, p), g) in s.data_mut().iter_mut().zip(p.data_mut()).zip(g.data()) {
            *s = rho * *s + (1.0 - rho) * g * g;
            *p -= lr * g / (s.sqrt() + eps);
        }
    }
}

pub fn write_params<W: Write>(params: &ParamSet, mut out: W) -> io::Result<()> {
    out.write_all(PARAM_MAGIC)?;
    out.write_all(&PARAM_VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<const N: usize, R: Read>(input: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4, _>(input, what)?))
}

pub fn read_params<R: Read>(mut input: R) -> Result<ParamSet> {
    let magic = read_exact::<8, _>(&mut input, "magic")?;
    if &magic != PARAM_MAGIC {
        return Err(Error::Format(format!("bad magic bytes {magic:?}")));
    }
    let version = read_u32(&mut input, "version")?;
    if version != PARAM_VERSION {
        return Err(Error::Version {
            found: version,
            expected: PARAM_VERSION,
        });
    }
    let count = read_u32(&mut input, "tensor count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut input, "name length")? as usize;
        let mut name = vec![0u8; name_len];
        input
            .read_exact(&mut name)
            .map_err(|_| Error::Format("truncated tensor name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut input, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(read_exact::<8, _>(&mut input, "dimension")?);
            shape.push(usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let mut data = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_exact::<8, _>(&mut input, "tensor values")?));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        params
            .push(name, tensor)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok(params)
}

pub fn save_params(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_params(params, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamSet> {
    let bytes = fs::read(path)?;
    read_params(bytes.as_slice())
}
