//! Named parameter storage and the Adam optimizer.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::graph::Var;
use crate::nn::tensor::Tensor;

/// One named parameter: its value, an optional gradient populated after a
/// backward pass, and whether the optimizer may touch it.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub trainable: bool,
}

/// Ordered map of named parameters. Iteration order is insertion order, which
/// makes optimizer updates and serialization deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.names.push(name.to_string());
        self.entries.push(ParamEntry {
            value,
            grad: None,
            trainable,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i]),
            None => Err(Error::UnknownParam(name.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.entries.iter())
    }

    /// Leaf [`Var`] for `name`; trainable entries require grad, frozen ones
    /// don't. Values are snapshotted, so build all leaves for a step before
    /// mutating the store.
    pub fn var(&self, name: &str) -> Result<Var> {
        let e = self.get(name)?;
        Ok(Var::leaf(e.value.clone(), e.trainable))
    }

    /// Leaf that never receives a gradient regardless of the trainable flag.
    pub fn frozen_var(&self, name: &str) -> Result<Var> {
        let e = self.get(name)?;
        Ok(Var::leaf(e.value.clone(), false))
    }

    /// Copy gradients back from the leaves created by [`ParamStore::var`].
    pub fn absorb_grads(&mut self, leaves: &HashMap<String, Var>) -> Result<()> {
        for (name, var) in leaves {
            let e = self.get_mut(name)?;
            e.grad = var.grad();
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Mark every entry frozen (used for auxiliary networks during
    /// semi-adversarial training).
    pub fn freeze_all(&mut self) {
        for e in &mut self.entries {
            e.trainable = false;
        }
    }

    /// Little-endian `f32` bytes of every entry in order — the same narrowing
    /// the on-disk container applies. Used for freeze-contract hashing.
    pub fn value_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.entries {
            for &v in e.value.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }
}

/// Adam with bias correction. State is keyed by parameter name and allocated
/// lazily on the first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Apply one update to every trainable entry, consuming its gradient.
    /// Frozen entries are left bit-identical. A trainable entry without a
    /// gradient is an error.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.entries.len() {
            if !params.entries[i].trainable {
                continue;
            }
            let name = params.names[i].clone();
            let grad = params.entries[i]
                .grad
                .take()
                .ok_or_else(|| Error::MissingGrad(name.clone()))?;
            let entry = &mut params.entries[i];
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(entry.value.shape()));
            let v = self
                .v
                .entry(name)
                .or_insert_with(|| Tensor::zeros(entry.value.shape()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            for ((p, g), (mi, vi)) in entry
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
