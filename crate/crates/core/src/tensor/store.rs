use std::collections::HashMap;

use super::checkpoint::Checkpoint;
use super::tape::Gradients;
use super::{Tensor, TensorError};
use crate::scalar::{lit, Scalar};

/// Handle to a parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct Param<S> {
    name: String,
    value: Tensor<S>,
    grad: Tensor<S>,
    m: Tensor<S>,
    v: Tensor<S>,
    frozen: bool,
}

/// Named learnable tensors with accumulated gradients and Adam moments.
///
/// Names are dotted paths such as `encoder.gcn.0.W_e.2`. Entries under
/// `meta.` are non-learnable metadata carried through checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore<S> {
    params: Vec<Param<S>>,
    index: HashMap<String, usize>,
    meta: Vec<(String, Tensor<S>)>,
    step: u64,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
const ADAM_STEP: &str = "adam.step";
const META: &str = "meta.";

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new(), meta: Vec::new(), step: 0 }
    }

    /// Registers a parameter. Re-registering a name replaces its value and
    /// resets its optimizer moments.
    pub fn insert(&mut self, name: &str, value: Tensor<S>) -> ParamId {
        let shape = value.shape().to_vec();
        let param = Param {
            name: name.to_string(),
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
            frozen: false,
        };
        if let Some(&i) = self.index.get(name) {
            self.params[i] = param;
            ParamId(i)
        } else {
            self.index.insert(name.to_string(), self.params.len());
            self.params.push(param);
            ParamId(self.params.len() - 1)
        }
    }

    pub fn id(&self, name: &str) -> Result<ParamId, TensorError> {
        self.index.get(name).map(|&i| ParamId(i)).ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].grad
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.frozen = frozen;
            }
        }
    }

    pub fn unfreeze_all(&mut self) {
        for p in &mut self.params {
            p.frozen = false;
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Total number of scalar entries across parameters matching `prefix`.
    pub fn count_scalars(&self, prefix: &str) -> usize {
        self.params.iter().filter(|p| p.name.starts_with(prefix)).map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_meta(&mut self, key: &str, value: Tensor<S>) {
        let name = format!("{META}{key}");
        match self.meta.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((name, value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&Tensor<S>> {
        let name = format!("{META}{key}");
        self.meta.iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// Adds `scale * grad` for every parameter reached by a backward pass.
    pub fn accumulate(&mut self, grads: &Gradients<S>, scale: S) {
        for (id, g) in grads.params() {
            let dst = self.params[id.0].grad.data_mut();
            for (d, &s) in dst.iter_mut().zip(g.data()) {
                *d += scale * s;
            }
        }
    }

    /// One bias-corrected Adam update of every non-frozen parameter from its
    /// accumulated gradient.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let b1: S = lit(cfg.beta1);
        let b2: S = lit(cfg.beta2);
        let lr: S = lit(cfg.lr);
        let eps: S = lit(cfg.eps);
        let c1 = S::one() - b1.powi(t);
        let c2 = S::one() - b2.powi(t);
        for p in self.params.iter_mut().filter(|p| !p.frozen) {
            let g = p.grad.data();
            let m = p.m.data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + (S::one() - b1) * gi;
            }
            let v = p.v.data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
            }
            let (m, v) = (p.m.data(), p.v.data());
            for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Serializable snapshot. Optimizer state is included when
    /// `with_optimizer` is set so that training can resume exactly.
    pub fn to_checkpoint(&self, with_optimizer: bool) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for p in &self.params {
            ck.push(&p.name, p.value.cast());
        }
        for (name, t) in &self.meta {
            ck.push(name, t.cast());
        }
        if with_optimizer {
            for p in &self.params {
                ck.push(&format!("{ADAM_M}{}", p.name), p.m.cast());
                ck.push(&format!("{ADAM_V}{}", p.name), p.v.cast());
            }
            // u64 step split into two exactly representable halves
            let lo = (self.step & 0xFFFF) as f32;
            let hi = (self.step >> 16) as f32;
            ck.push(ADAM_STEP, Tensor::new(vec![2], vec![lo, hi]).expect("2 entries"));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Self {
        let mut store = Self::new();
        let mut moments = Vec::new();
        for (name, t) in ck.entries() {
            if name.starts_with(META) {
                store.meta.push((name.clone(), t.cast()));
            } else if name == ADAM_STEP {
                let d = t.data();
                store.step = d[0] as u64 + ((d.get(1).copied().unwrap_or(0.0) as u64) << 16);
            } else if name.starts_with(ADAM_M) || name.starts_with(ADAM_V) {
                moments.push((name, t));
            } else {
                store.insert(name, t.cast());
            }
        }
        for (name, t) in moments {
            let (target, is_m) = match name.strip_prefix(ADAM_M) {
                Some(rest) => (rest, true),
                None => (&name[ADAM_V.len()..], false),
            };
            if let Some(&i) = store.index.get(target) {
                let p = &mut store.params[i];
                if p.value.shape() == t.shape() {
                    if is_m {
                        p.m = t.cast();
                    } else {
                        p.v = t.cast();
                    }
                }
            }
        }
        store
    }

    /// Copies values for every name present in both stores with equal shape.
    /// Returns the names that were copied.
    pub fn copy_matching_from(&mut self, other: &Self) -> Vec<String> {
        let mut copied = Vec::new();
        for p in &mut self.params {
            if let Some(src) = other.get(&p.name) {
                if src.shape() == p.value.shape() {
                    p.value = src.clone();
                    copied.push(p.name.clone());
                }
            }
        }
        copied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParameterStore::<f32>::new();
        let id = store.insert("w", Tensor::row_vector(&[0.5, -1.25, 3.0]));
        let before = store.value(id).clone();
        for _ in 0..5 {
            store.adam_step(&AdamConfig::default());
        }
        assert_eq!(store.value(id), &before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut store = ParameterStore::<f64>::new();
        let id = store.insert("w", Tensor::scalar(2.0));
        store.params[id.0].grad = Tensor::scalar(1.0);
        let cfg = AdamConfig::default();
        store.adam_step(&cfg);
        let moved = 2.0 - store.value(id).data()[0];
        assert!((moved - cfg.lr).abs() < 1e-10, "moved {moved}");
    }

    #[test]
    fn adam_repeated_steps_move_against_gradient_sign() {
        let mut store = ParameterStore::<f32>::new();
        let id = store.insert("w", Tensor::row_vector(&[0.0, 0.0]));
        store.params[id.0].grad = Tensor::row_vector(&[1.0, -2.0]);
        let cfg = AdamConfig::default();
        store.adam_step(&cfg);
        let first = store.value(id).clone();
        store.adam_step(&cfg);
        let second = store.value(id).clone();
        assert!(first.data()[0] < 0.0 && second.data()[0] < first.data()[0]);
        assert!(first.data()[1] > 0.0 && second.data()[1] > first.data()[1]);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = ParameterStore::<f32>::new();
        let a = store.insert("enc.w", Tensor::scalar(1.0));
        let b = store.insert("dec.w", Tensor::scalar(1.0));
        store.params[a.0].grad = Tensor::scalar(1.0);
        store.params[b.0].grad = Tensor::scalar(1.0);
        store.set_frozen("enc.", true);
        store.adam_step(&AdamConfig::default());
        assert_eq!(store.value(a).data()[0], 1.0);
        assert!(store.value(b).data()[0] < 1.0);
    }

    #[test]
    fn optimizer_state_survives_checkpoint() {
        let mut store = ParameterStore::<f32>::new();
        let id = store.insert("w", Tensor::row_vector(&[0.3, 0.1]));
        store.set_meta("y_mean", Tensor::scalar(1.5));
        store.params[id.0].grad = Tensor::row_vector(&[0.2, -0.7]);
        for _ in 0..3 {
            store.adam_step(&AdamConfig::default());
        }
        let restored = ParameterStore::<f32>::from_checkpoint(&store.to_checkpoint(true));
        assert_eq!(restored.step(), 3);
        assert_eq!(restored.params[0].m, store.params[0].m);
        assert_eq!(restored.params[0].v, store.params[0].v);
        assert_eq!(restored.meta("y_mean").unwrap().data()[0], 1.5);
    }
}
