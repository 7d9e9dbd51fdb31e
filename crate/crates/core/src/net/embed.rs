use ndarray::Array1;

use crate::error::{invalid, Result};

/// Parameters of the sinusoidal geometric embedding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeomEmbeddingParams {
    sigma: f64,
    dim: usize,
}

impl GeomEmbeddingParams {
    pub fn new(sigma: f64, dim: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return invalid(format!("embedding temperature must be positive, got {sigma}"));
        }
        if dim == 0 || !dim.is_multiple_of(2) {
            return invalid(format!("embedding dimension must be even and positive, got {dim}"));
        }
        Ok(Self { sigma, dim })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Component `2k` is `sin(v / (σ · 10000^{2k/C}))`, component `2k+1` the cosine
/// of the same argument.
pub fn sinusoidal_embed(value: f64, params: &GeomEmbeddingParams) -> Array1<f64> {
    let c = params.dim as f64;
    let mut out = Array1::zeros(params.dim);
    for k in 0..params.dim / 2 {
        let arg = value / (params.sigma * 10000f64.powf(2.0 * k as f64 / c));
        let (s, co) = arg.sin_cos();
        out[2 * k] = s;
        out[2 * k + 1] = co;
    }
    out
}
