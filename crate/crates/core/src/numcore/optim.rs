use std::ops::Index;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named group of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor on `tape` as a parameter leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }

    /// Digest over names and exact bit patterns; used to prove that an
    /// optimiser step left a group untouched.
    pub fn checksum(&self) -> u64 {
        let mut h = Sha256::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            h.update(n.as_bytes());
            for x in v.data() {
                h.update(x.to_le_bytes());
            }
        }
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// A [`ParamStore`] bound to a tape.
#[derive(Debug, Clone)]
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Binds existing tape variables, in [`ParamId`] order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Bound { vars }
    }

    pub fn grads(&self, g: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| g.wrt(v)).collect()
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

impl<'t> Index<ParamId> for Bound<'t> {
    type Output = Var<'t>;
    fn index(&self, id: ParamId) -> &Var<'t> {
        &self.vars[id.0]
    }
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        AdamState {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.values().iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.values().iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One update. Weight decay is applied as `θ ← θ − η·wd·θ` before the
    /// Adam delta. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: params.get(id).shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter `{}`",
                    params.name(id)
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for i in 0..p.len() {
                p[i] -= self.lr * self.weight_decay * p[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_grad(x: f64) -> Tensor {
        Tensor::scalar(2.0 * x)
    }

    #[test]
    fn zero_gradient_without_decay_keeps_params() {
        let mut ps = ParamStore::new();
        ps.add("w", Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        let before = ps.clone();
        let mut adam = AdamState::new(&ps, 0.1, 0.0);
        adam.step(&mut ps, &[Tensor::zeros(&[1, 3])]).unwrap();
        assert_eq!(ps, before);
    }

    #[test]
    fn one_step_descends_on_square() {
        let mut ps = ParamStore::new();
        let id = ps.add("x", Tensor::scalar(1.0));
        let mut adam = AdamState::new(&ps, 0.1, 0.0);
        adam.step(&mut ps, &[quad_grad(1.0)]).unwrap();
        assert!(ps.get(id).item() < 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // Independent replay of the Adam recurrence for f(x) = x².
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=200 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        assert!(x.abs() < 1e-2, "oracle sequence ends at {x}");

        let mut ps = ParamStore::new();
        let id = ps.add("x", Tensor::scalar(1.0));
        let mut adam = AdamState::new(&ps, lr, 0.0);
        for _ in 0..200 {
            let g = quad_grad(ps.get(id).item());
            adam.step(&mut ps, &[g]).unwrap();
        }
        let got = ps.get(id).item();
        assert!(got.abs() < 1e-2);
        assert!((got - x).abs() < 1e-12);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_before_delta() {
        let mut ps = ParamStore::new();
        let id = ps.add("w", Tensor::scalar(2.0));
        let mut adam = AdamState::new(&ps, 0.5, 0.1);
        adam.step(&mut ps, &[Tensor::scalar(0.0)]).unwrap();
        assert!((ps.get(id).item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut ps = ParamStore::new();
        ps.add("encoder.w0", Tensor::scalar(1.0));
        let mut adam = AdamState::new(&ps, 0.1, 0.0);
        let err = adam.step(&mut ps, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(err.to_string().contains("encoder.w0"));
        assert_eq!(adam.step, 0);
    }
}
