use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, Ix1, Ix2};
use serde::{Deserialize, Serialize};

use super::{circle_raw, hinge_raw, l2, log_sum_exp, translation_raw, triplet_raw, LossMargins};
use crate::error::{invalid, Result};

/// Distances or hinge arguments closer than this to a non-differentiable
/// point are treated as kinks.
pub const KINK_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Inputs `[gs, gp, gn]`, vectors.
    Triplet,
    /// Inputs `[gs, gp, gn]`, vectors.
    Hinge,
    /// Inputs `[ds_aligned, dp]`, T×C.
    CircleYaw,
    /// Inputs `[d_true, d_biased, dp]`, T×C.
    TranslationBias,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Triplet, LossKind::Hinge, LossKind::CircleYaw, LossKind::TranslationBias];

    pub fn arity(self) -> usize {
        match self {
            LossKind::CircleYaw => 2,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Triplet => "triplet",
            LossKind::Hinge => "hinge",
            LossKind::CircleYaw => "circle_yaw",
            LossKind::TranslationBias => "translation_bias",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub value: f64,
    /// One gradient per input, same shapes.
    pub grads: Vec<ArrayD<f64>>,
    /// Set when an input sits within [`KINK_EPS`] of a non-differentiable
    /// point. The offending term then contributes a zero subgradient.
    pub at_kink: bool,
}

pub fn loss_value(kind: LossKind, inputs: &[ArrayD<f64>], m: &LossMargins) -> Result<f64> {
    match kind {
        LossKind::Triplet | LossKind::Hinge => {
            let [s, p, n] = vectors(inputs)?;
            Ok(if kind == LossKind::Triplet {
                triplet_raw(s, p, n, m)
            } else {
                hinge_raw(s, p, n, m)
            })
        }
        LossKind::CircleYaw => {
            let [a, b] = matrices::<2>(inputs)?;
            circle_raw(a, b, m)
        }
        LossKind::TranslationBias => {
            let [t, b, p] = matrices::<3>(inputs)?;
            translation_raw(t, b, p, m)
        }
    }
}

pub fn loss_gradients(kind: LossKind, inputs: &[ArrayD<f64>], m: &LossMargins) -> Result<Gradients> {
    let value = loss_value(kind, inputs, m)?;
    let (grads, at_kink) = match kind {
        LossKind::Triplet => {
            let [s, p, n] = vectors(inputs)?;
            triplet_grad(s, p, n, m)
        }
        LossKind::Hinge => {
            let [s, p, n] = vectors(inputs)?;
            hinge_grad(s, p, n, m)
        }
        LossKind::CircleYaw => {
            let [a, b] = matrices::<2>(inputs)?;
            circle_grad(a, b, m)
        }
        LossKind::TranslationBias => {
            let [t, b, p] = matrices::<3>(inputs)?;
            translation_grad(t, b, p, m)
        }
    };
    Ok(Gradients { value, grads, at_kink })
}

fn vectors(inputs: &[ArrayD<f64>]) -> Result<[ArrayView1<'_, f64>; 3]> {
    if inputs.len() != 3 {
        return invalid(format!("expected 3 inputs, got {}", inputs.len()));
    }
    let v = |i: usize| {
        inputs[i]
            .view()
            .into_dimensionality::<Ix1>()
            .map_err(|_| crate::Error::InvalidArgument(format!("input {i} must be a vector")))
    };
    let out = [v(0)?, v(1)?, v(2)?];
    if out.iter().any(|a| a.len() != out[0].len()) {
        return invalid("input vectors differ in length");
    }
    if out.iter().any(|a| a.iter().any(|x| x.is_nan())) {
        return invalid("input contains NaN");
    }
    Ok(out)
}

fn matrices<const N: usize>(inputs: &[ArrayD<f64>]) -> Result<[ArrayView2<'_, f64>; N]> {
    if inputs.len() != N {
        return invalid(format!("expected {N} inputs, got {}", inputs.len()));
    }
    let mut out = Vec::with_capacity(N);
    for (i, a) in inputs.iter().enumerate() {
        out.push(
            a.view()
                .into_dimensionality::<Ix2>()
                .map_err(|_| crate::Error::InvalidArgument(format!("input {i} must be a matrix")))?,
        );
    }
    Ok(out.try_into().expect("length checked"))
}

/// `(a − b)/‖a − b‖`, or `None` at zero distance.
fn unit(a: ArrayView1<f64>, b: ArrayView1<f64>) -> (f64, Option<Array1<f64>>) {
    let d = l2(a, b);
    if d < KINK_EPS {
        (d, None)
    } else {
        (d, Some((&a - &b) / d))
    }
}

fn triplet_grad(s: ArrayView1<f64>, p: ArrayView1<f64>, n: ArrayView1<f64>, m: &LossMargins) -> (Vec<ArrayD<f64>>, bool) {
    let zero = || Array1::<f64>::zeros(s.len());
    let (mut gs, mut gp, mut gn) = (zero(), zero(), zero());
    let (dp, up) = unit(s, p);
    let (dn, un) = unit(s, n);
    let z = dp - dn + m.triplet;
    let mut kink = z.abs() < KINK_EPS;
    if z > 0.0 && !kink {
        kink |= up.is_none() || un.is_none();
        if let Some(u) = up {
            gs += &u;
            gp -= &u;
        }
        if let Some(u) = un {
            gs -= &u;
            gn += &u;
        }
    }
    (vec![gs.into_dyn(), gp.into_dyn(), gn.into_dyn()], kink)
}

fn hinge_grad(s: ArrayView1<f64>, p: ArrayView1<f64>, n: ArrayView1<f64>, m: &LossMargins) -> (Vec<ArrayD<f64>>, bool) {
    let zero = || Array1::<f64>::zeros(s.len());
    let (mut gs, mut gp, mut gn) = (zero(), zero(), zero());
    let (dp, up) = unit(s, p);
    let (dn, un) = unit(s, n);
    let zp = dp - m.hinge_pos;
    let zn = m.hinge_neg - dn;
    let mut kink = zp.abs() < KINK_EPS || zn.abs() < KINK_EPS;
    if zp >= KINK_EPS {
        if let Some(u) = &up {
            gs += u;
            gp -= u;
        }
    }
    if zn >= KINK_EPS {
        match &un {
            Some(u) => {
                gs -= u;
                gn += u;
            }
            None => kink = true,
        }
    }
    (vec![gs.into_dyn(), gp.into_dyn(), gn.into_dyn()], kink)
}

fn circle_grad(a: ArrayView2<f64>, b: ArrayView2<f64>, m: &LossMargins) -> (Vec<ArrayD<f64>>, bool) {
    let (t, c) = a.dim();
    let mut ga = Array2::<f64>::zeros((t, c));
    let mut gb = Array2::<f64>::zeros((t, c));
    let mut kink = false;
    for i in 0..t {
        if t < 2 {
            break;
        }
        let d: Vec<(f64, Option<Array1<f64>>)> = (0..t).map(|j| unit(a.row(i), b.row(j))).collect();
        let pos = m.gamma * (d[i].0 - m.yaw_pos).powi(2);
        let js: Vec<usize> = (0..t).filter(|&j| j != i).collect();
        let neg: Vec<f64> = js.iter().map(|&j| m.gamma * (m.yaw_neg - d[j].0).powi(2)).collect();
        let lse = log_sum_exp(&neg);
        let z = pos + lse;
        // d softplus(z)/dz, scaled by the 1/T average
        let outer = sigmoid(z) / t as f64;
        let mut push = |j: usize, coeff: f64| match &d[j].1 {
            Some(u) => {
                ga.row_mut(i).scaled_add(coeff, u);
                gb.row_mut(j).scaled_add(-coeff, u);
            }
            None => kink = true,
        };
        push(i, outer * 2.0 * m.gamma * (d[i].0 - m.yaw_pos));
        for (k, &j) in js.iter().enumerate() {
            let w = (neg[k] - lse).exp();
            push(j, outer * w * -2.0 * m.gamma * (m.yaw_neg - d[j].0));
        }
    }
    (vec![ga.into_dyn(), gb.into_dyn()], kink)
}

fn translation_grad(t: ArrayView2<f64>, b: ArrayView2<f64>, p: ArrayView2<f64>, m: &LossMargins) -> (Vec<ArrayD<f64>>, bool) {
    let (rows, c) = t.dim();
    let mut gt = Array2::<f64>::zeros((rows, c));
    let mut gb = Array2::<f64>::zeros((rows, c));
    let mut gp = Array2::<f64>::zeros((rows, c));
    let z = super::row_cost(t, p) - super::row_cost(b, p) + m.translation;
    let mut kink = z.abs() < KINK_EPS;
    if z > 0.0 && !kink {
        let scale = 1.0 / rows as f64;
        for i in 0..rows {
            match unit(t.row(i), p.row(i)).1 {
                Some(u) => {
                    gt.row_mut(i).scaled_add(scale, &u);
                    gp.row_mut(i).scaled_add(-scale, &u);
                }
                None => kink = true,
            }
            match unit(b.row(i), p.row(i)).1 {
                Some(u) => {
                    gb.row_mut(i).scaled_add(-scale, &u);
                    gp.row_mut(i).scaled_add(scale, &u);
                }
                None => kink = true,
            }
        }
    }
    (vec![gt.into_dyn(), gb.into_dyn(), gp.into_dyn()], kink)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
