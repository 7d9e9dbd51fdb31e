use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Structural shape of a weight matrix, detected once at construction so that
/// forward passes can skip exact no-op products.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LinearKind {
    Zero,
    Identity,
    Dense,
}

/// Affine map `x · W + b` applied to row vectors; `W` is `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    weight: Array2<f64>,
    bias: Option<Array1<f64>>,
    kind: LinearKind,
}

impl Linear {
    pub fn new(weight: Array2<f64>, bias: Option<Array1<f64>>) -> Result<Self> {
        if weight.iter().any(|v| !v.is_finite()) {
            return invalid("weight matrix contains non-finite values");
        }
        if let Some(b) = &bias {
            if b.len() != weight.ncols() {
                return invalid(format!("bias length {} does not match {} outputs", b.len(), weight.ncols()));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return invalid("bias contains non-finite values");
            }
        }
        let bias_zero = bias.as_ref().is_none_or(|b| b.iter().all(|v| *v == 0.0));
        let kind = if bias_zero && weight.iter().all(|v| *v == 0.0) {
            LinearKind::Zero
        } else if bias_zero
            && weight.is_square()
            && weight.indexed_iter().all(|((i, j), v)| *v == if i == j { 1.0 } else { 0.0 })
        {
            LinearKind::Identity
        } else {
            LinearKind::Dense
        };
        Ok(Self { weight, bias, kind })
    }

    pub fn zeros(inputs: usize, outputs: usize, with_bias: bool) -> Self {
        Self::new(Array2::zeros((inputs, outputs)), with_bias.then(|| Array1::zeros(outputs))).expect("zero weights are valid")
    }

    pub fn identity(dim: usize, with_bias: bool) -> Self {
        Self::new(Array2::eye(dim), with_bias.then(|| Array1::zeros(dim))).expect("identity weights are valid")
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Array1<f64>> {
        self.bias.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.kind == LinearKind::Zero
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match self.kind {
            LinearKind::Zero => Array2::zeros((x.nrows(), self.outputs())),
            LinearKind::Identity => x.to_owned(),
            LinearKind::Dense => {
                let mut y = x.dot(&self.weight);
                if let Some(b) = &self.bias {
                    for mut row in y.axis_iter_mut(Axis(0)) {
                        row += b;
                    }
                }
                y
            }
        }
    }
}

/// Element-wise activation functions available to archives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `0.5 x (1 + tanh(√(2/π) (x + 0.044715 x³)))`
    GeluTanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::GeluTanh => {
                const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
                0.5 * x * (1.0 + (K * (x + 0.044715 * x * x * x)).tanh())
            }
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    pub fn apply_inplace(self, x: &mut Array2<f64>) {
        if self != Activation::Identity {
            x.mapv_inplace(|v| self.apply(v));
        }
    }
}
