use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::embed::{sinusoidal_embed, GeomEmbeddingParams};
use super::linear::{Activation, Linear};
use crate::error::{invalid, Result};
use crate::grid::{LocalViewDescriptor, PolarGrid};
use crate::pose::wrap_deg;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Radius-aware self-attention over the radial bins of each sector.
    Rasa,
    /// Theta-aware self-attention across sectors.
    Tasa,
    /// Multi-head cross-attention between two descriptors.
    Mhca,
}

/// Per-row normalization applied after each residual connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Layer normalization without affine parameters, eps = 1e-5.
    Layer,
    None,
}

impl NormKind {
    fn apply(self, x: &mut Array2<f64>) {
        if self == NormKind::None {
            return;
        }
        let c = x.ncols() as f64;
        for mut row in x.axis_iter_mut(Axis(0)) {
            let mean = row.sum() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
        }
    }
}

/// One attention block: multi-head attention with an optional relative
/// geometric bias, residual + norm, then a two-layer feed-forward network
/// (hidden width `2C`) with another residual + norm.
///
/// Scores follow `e_ij = (q_i W^Q)(k_j W^K + r_ij W^R)^T / √C`, evaluated per
/// head on that head's channel slice.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub kind: LayerKind,
    pub heads: usize,
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_r: Linear,
    pub w_out: Linear,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm: NormKind,
    pub activation: Activation,
}

impl AttentionWeights {
    pub fn channels(&self) -> usize {
        self.w_q.inputs()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if c == 0 || self.heads == 0 || !c.is_multiple_of(self.heads) {
            return invalid(format!("{c} channels cannot be split across {} heads", self.heads));
        }
        for (name, l) in [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_r", &self.w_r),
            ("w_out", &self.w_out),
        ] {
            if l.inputs() != c || l.outputs() != c {
                return invalid(format!("{name} must be {c}x{c}, got {}x{}", l.inputs(), l.outputs()));
            }
        }
        if self.ffn_in.inputs() != c || self.ffn_out.outputs() != c || self.ffn_in.outputs() != self.ffn_out.inputs() {
            return invalid("feed-forward shapes are not chain-compatible");
        }
        Ok(())
    }

    /// Runs the block with `x` as queries and `context` as keys/values.
    pub(crate) fn forward(&self, x: ArrayView2<'_, f64>, context: ArrayView2<'_, f64>, bias: Option<&RelativeBias>) -> Array2<f64> {
        let mut y = x.to_owned();
        if let Some(a) = self.attend(x, context, bias) {
            y += &a;
        }
        self.norm.apply(&mut y);
        if !self.ffn_out.is_zero() {
            let mut hidden = self.ffn_in.apply(y.view());
            self.activation.apply_inplace(&mut hidden);
            y += &self.ffn_out.apply(hidden.view());
        }
        self.norm.apply(&mut y);
        y
    }

    fn attend(&self, x: ArrayView2<'_, f64>, context: ArrayView2<'_, f64>, bias: Option<&RelativeBias>) -> Option<Array2<f64>> {
        if self.w_v.is_zero() || self.w_out.is_zero() {
            return None;
        }
        let c = self.channels();
        let n = x.nrows();
        let v = self.w_v.apply(context);
        let mut mixed = Array2::zeros((n, c));

        if self.w_q.is_zero() {
            // every logit is exactly zero: attention is uniform over the context
            let mean = v.mean_axis(Axis(0)).expect("non-empty context");
            for mut row in mixed.axis_iter_mut(Axis(0)) {
                row.assign(&mean);
            }
        } else {
            let q = self.w_q.apply(x);
            let k = self.w_k.apply(context);
            let projected = bias.map(|b| (self.w_r.apply(b.table.view()), &b.index));
            let dh = c / self.heads;
            let scale = 1.0 / (c as f64).sqrt();
            for h in 0..self.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let qh = q.slice(cols);
                let mut scores = qh.dot(&k.slice(cols).t());
                if let Some((table, index)) = &projected {
                    let qe = qh.dot(&table.slice(cols).t());
                    for ((i, j), sc) in scores.indexed_iter_mut() {
                        *sc += qe[[i, index[[i, j]]]];
                    }
                }
                scores *= scale;
                softmax_rows(&mut scores);
                mixed.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            }
        }
        Some(self.w_out.apply(mixed.view()))
    }
}

fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Unprojected relative embeddings: `table` holds one embedding per distinct
/// relation and `index[i, j]` selects the row for the pair `(i, j)`.
#[derive(Clone, Debug)]
pub(crate) struct RelativeBias {
    table: Array2<f64>,
    index: Array2<usize>,
}

impl RelativeBias {
    /// Distances between radial bins along one ray: `|i - j| · step`.
    pub(crate) fn radial(radial_bins: usize, radial_step_m: f64, emb: &GeomEmbeddingParams) -> Self {
        let mut table = Array2::zeros((radial_bins, emb.dim()));
        for k in 0..radial_bins {
            table.row_mut(k).assign(&sinusoidal_embed(k as f64 * radial_step_m, emb));
        }
        let index = Array2::from_shape_fn((radial_bins, radial_bins), |(i, j)| i.abs_diff(j));
        Self { table, index }
    }

    /// Relative sector angles `(i - j) · 360/T`, wrapped to `(-180, 180]` degrees.
    pub(crate) fn angular(angular_bins: usize, emb: &GeomEmbeddingParams) -> Self {
        let mut table = Array2::zeros((angular_bins, emb.dim()));
        for k in 0..angular_bins {
            table.row_mut(k).assign(&sinusoidal_embed(relative_angle_deg(k as i64, angular_bins), emb));
        }
        let t = angular_bins as i64;
        let index = Array2::from_shape_fn((angular_bins, angular_bins), |(i, j)| (i as i64 - j as i64).rem_euclid(t) as usize);
        Self { table, index }
    }
}

/// Relative angle of a sector offset, wrapped to `(-180, 180]`.
pub fn relative_angle_deg(offset: i64, angular_bins: usize) -> f64 {
    let a = wrap_deg(offset as f64 * 360.0 / angular_bins as f64);
    if a == -180.0 {
        180.0
    } else {
        a
    }
}

fn check_channels(w: &AttentionWeights, c: usize) -> Result<()> {
    w.validate()?;
    if w.channels() != c {
        return invalid(format!("layer expects {} channels, input has {c}", w.channels()));
    }
    Ok(())
}

/// Radius-aware self-attention, run independently in every angular sector
/// over its radial bins.
pub fn rasa_forward(polar: &PolarGrid, w: &AttentionWeights, emb: &GeomEmbeddingParams) -> Result<PolarGrid> {
    let (t, r, c) = polar.data().dim();
    check_channels(w, c)?;
    if emb.dim() != c {
        return invalid(format!("embedding dimension {} differs from {c} channels", emb.dim()));
    }
    let bias = RelativeBias::radial(r, polar.radial_step_m(), emb);
    let mut out = polar.data().clone();
    for sector in 0..t {
        let x = polar.data().index_axis(Axis(0), sector);
        out.index_axis_mut(Axis(0), sector).assign(&w.forward(x, x, Some(&bias)));
    }
    PolarGrid::new(out, polar.radial_step_m())
}

/// Theta-aware self-attention across the sectors of a local-view descriptor.
/// The output is left unnormalized.
pub fn tasa_forward(d: &LocalViewDescriptor, w: &AttentionWeights, emb: &GeomEmbeddingParams) -> Result<LocalViewDescriptor> {
    check_channels(w, d.channels())?;
    if emb.dim() != d.channels() {
        return invalid(format!("embedding dimension {} differs from {} channels", emb.dim(), d.channels()));
    }
    let bias = RelativeBias::angular(d.rows(), emb);
    LocalViewDescriptor::new(w.forward(d.view(), d.view(), Some(&bias)))
}

/// Symmetric cross-attention: `a` attends to `b` and `b` attends to `a`
/// with shared weights and no positional bias.
pub fn mhca_forward(
    a: &LocalViewDescriptor,
    b: &LocalViewDescriptor,
    w: &AttentionWeights,
) -> Result<(LocalViewDescriptor, LocalViewDescriptor)> {
    if a.data().dim() != b.data().dim() {
        return invalid(format!("cross-attention inputs differ: {:?} vs {:?}", a.data().dim(), b.data().dim()));
    }
    check_channels(w, a.channels())?;
    let out_a = w.forward(a.view(), b.view(), None);
    let out_b = w.forward(b.view(), a.view(), None);
    Ok((LocalViewDescriptor::new(out_a)?, LocalViewDescriptor::new(out_b)?))
}

/// Mean over the radial axis: `T×R×C → T×C`.
pub(crate) fn radial_mean(polar: &PolarGrid) -> Array2<f64> {
    polar.data().mean_axis(Axis(1)).expect("non-empty radial axis")
}
