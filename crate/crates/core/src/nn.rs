use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numcore::{Bound, ParamId, ParamStore, Tensor, Var};

/// Two-layer perceptron `relu(x·W1 + b1)·W2 + b2`; weights stored `in x out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: (usize, usize, usize),
        rng: &mut R,
    ) -> Self {
        let (i, h, o) = dims;
        Mlp {
            w1: store.add(format!("{name}.w1"), Tensor::glorot(i, h, rng)),
            b1: store.add(format!("{name}.b1"), Tensor::zeros(&[1, h])),
            w2: store.add(format!("{name}.w2"), Tensor::glorot(h, o, rng)),
            b2: store.add(format!("{name}.b2"), Tensor::zeros(&[1, o])),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(p[self.w1])?
            .add_bias(p[self.b1])?
            .relu()
            .matmul(p[self.w2])?
            .add_bias(p[self.b2])
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        store.get(self.w1).rows()
    }
}
