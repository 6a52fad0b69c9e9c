use std::collections::BTreeMap;
use std::path::Path;

use super::Tensor4;
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 5] = b"BLTC1";

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: Tensor4,
    m: Tensor4,
    v: Tensor4,
}

/// Named parameter tensors with their Adam moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Entry>,
    step: u64,
}

/// Adam hyper-parameters. Defaults are the usual `0.9 / 0.999 / 1e-8`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor4) {
        let shape = value.shape();
        self.entries.insert(
            name.into(),
            Entry {
                value,
                m: Tensor4::zeros(shape),
                v: Tensor4::zeros(shape),
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Tensor4> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor4> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    /// Looks up a parameter that the caller's architecture requires.
    pub(crate) fn expect(&self, name: &str) -> Result<&Tensor4> {
        self.get(name)
            .ok_or_else(|| Error::InvalidParam(format!("missing parameter {name:?}")))
    }

    /// Parameters in sorted name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor4)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// First and second Adam moments of a parameter.
    pub fn moments(&self, name: &str) -> Option<(&Tensor4, &Tensor4)> {
        self.entries.get(name).map(|e| (&e.m, &e.v))
    }

    /// Drops optimizer state, keeping the values.
    pub fn reset_optimizer(&mut self) {
        for e in self.entries.values_mut() {
            e.m = Tensor4::zeros(e.value.shape());
            e.v = Tensor4::zeros(e.value.shape());
        }
        self.step = 0;
    }

    /// One bias-corrected Adam update. Nothing is modified on error.
    pub fn adam_step(&mut self, grads: &Grads, cfg: &AdamConfig) -> Result<()> {
        for (name, e) in &self.entries {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::InvalidParam(format!("no gradient for parameter {name:?}")))?;
            e.value.check_same("adam_step", g)?;
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {name:?}")));
            }
        }
        if let Some(extra) = grads.names().find(|n| !self.entries.contains_key(*n)) {
            return Err(Error::InvalidParam(format!("gradient for unknown parameter {extra:?}")));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, e) in self.entries.iter_mut() {
            let g = &grads.0[name];
            let it = e
                .value
                .data_mut()
                .iter_mut()
                .zip(e.m.data_mut().iter_mut())
                .zip(e.v.data_mut().iter_mut())
                .zip(g.data());
            for (((p, m), v), &gi) in it {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Serializes the values in the `BLTC1` checkpoint layout.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        for (name, e) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for d in e.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in e.value.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        if r.take(5)? != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let mut set = ParamSet::new();
        while !r.is_empty() {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::format("checkpoint", e))?
                .to_owned();
            let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
            let n: usize = shape.iter().product();
            let data = r.f32_vec(n)?;
            set.insert(name, Tensor4::from_vec(shape, data)?);
        }
        Ok(set)
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads(BTreeMap<String, Tensor4>);

impl Grads {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero gradients congruent with `params`.
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self(
            params
                .iter()
                .map(|(k, v)| (k.to_owned(), Tensor4::zeros(v.shape())))
                .collect(),
        )
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor4) {
        self.0.insert(name.into(), g);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor4> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor4> {
        self.0.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor4)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Adds `other` into `self`; names missing from `self` are inserted.
    pub fn accumulate(&mut self, other: &Grads) -> Result<()> {
        for (k, g) in &other.0 {
            match self.0.get_mut(k) {
                Some(t) => t.add_assign(g)?,
                None => {
                    self.0.insert(k.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.0.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.values().all(|g| g.data().iter().all(|&x| x == 0.0))
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &ParamSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, params.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ParamSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ParamSet::from_checkpoint_bytes(&bytes)
}

/// Little-endian cursor shared by the binary container readers.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], kind: &'static str) -> Self {
        Self { buf, pos: 0, kind }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.kind,
                format!("truncated: wanted {n} bytes at offset {}, {} left", self.pos, self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.kind, "extent overflow"))?;
        let b = self.take(bytes)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}
