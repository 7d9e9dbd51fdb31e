//! Self-check of the losses against scalar re-implementations and of the
//! analytic gradients against central finite differences.

use std::fmt;

use ndarray::{Array1, Array2, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{loss_gradients, loss_value, LossKind, LossMargins};
use crate::error::Result;

pub const VALUE_TOL: f64 = 1e-9;
pub const GRAD_REL_TOL: f64 = 1e-3;
pub const CASES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<32} cases={:<4} max_err={:.3e} tol={:.0e}",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.cases,
                c.max_error,
                c.tolerance
            )?;
        }
        Ok(())
    }
}

/// Runs every check with instances drawn from `seed`.
pub fn run(seed: u64) -> Result<Report> {
    let m = LossMargins::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report::default();
    for kind in LossKind::ALL {
        let mut worst: f64 = 0.0;
        for _ in 0..CASES {
            let inputs = instance(kind, &mut rng, false);
            let got = loss_value(kind, &inputs, &m)?;
            worst = worst.max((got - scalar_oracle(kind, &inputs, &m)).abs());
        }
        report.checks.push(Check {
            name: format!("{}/value", kind.name()),
            cases: CASES,
            max_error: worst,
            tolerance: VALUE_TOL,
        });
    }
    report.checks.push(Check {
        name: "circle_yaw/two-row example".into(),
        cases: 1,
        max_error: (two_row_example(&m)? - (1.0 + 0.4f64.exp()).ln()).abs(),
        tolerance: 1e-6,
    });
    for kind in LossKind::ALL {
        let mut worst: f64 = 0.0;
        let mut n = 0;
        while n < CASES {
            let inputs = instance(kind, &mut rng, true);
            let g = loss_gradients(kind, &inputs, &m)?;
            if g.at_kink || near_kink(kind, &inputs, &m)? {
                continue;
            }
            n += 1;
            for (k, analytic) in g.grads.iter().enumerate() {
                let fd = finite_difference(kind, &inputs, k, &m)?;
                worst = worst.max(relative_error(analytic, &fd));
            }
        }
        report.checks.push(Check {
            name: format!("{}/gradient", kind.name()),
            cases: CASES,
            max_error: worst,
            tolerance: GRAD_REL_TOL,
        });
    }
    Ok(report)
}

fn two_row_example(m: &LossMargins) -> Result<f64> {
    let a = 2.0 * 0.7f64.asin();
    let d = ndarray::array![[1.0, 0.0], [a.cos(), a.sin()]].into_dyn();
    loss_value(LossKind::CircleYaw, &[d.clone(), d], m)
}

fn unit_vector(rng: &mut ChaCha8Rng, c: usize) -> Array1<f64> {
    let v: Array1<f64> = Array1::from_shape_fn(c, |_| StandardNormal.sample(rng));
    let n = v.dot(&v).sqrt();
    v / n
}

fn perturbed(rng: &mut ChaCha8Rng, base: &Array1<f64>, scale: f64) -> Array1<f64> {
    let v = base + &(unit_vector(rng, base.len()) * scale);
    let n = v.dot(&v).sqrt();
    v / n
}

fn unit_rows(rng: &mut ChaCha8Rng, t: usize, c: usize) -> Array2<f64> {
    let mut a = Array2::zeros((t, c));
    for mut row in a.rows_mut() {
        row.assign(&unit_vector(rng, c));
    }
    a
}

fn near_rows(rng: &mut ChaCha8Rng, base: &Array2<f64>, scale: f64) -> Array2<f64> {
    let mut a = base.clone();
    for mut row in a.rows_mut() {
        let p = perturbed(rng, &row.to_owned(), scale);
        row.assign(&p);
    }
    a
}

/// Random instances; `active` biases towards the region where the loss has
/// non-zero gradient.
fn instance(kind: LossKind, rng: &mut ChaCha8Rng, active: bool) -> Vec<ArrayD<f64>> {
    const C: usize = 16;
    const T: usize = 8;
    match kind {
        LossKind::Triplet | LossKind::Hinge => {
            let s = unit_vector(rng, C);
            let close = rng.random_range(0.0..if active { 0.3 } else { 1.5 });
            let scale = rng.random_range(0.02..1.0);
            let p = perturbed(rng, &s, scale);
            let n = perturbed(rng, &s, close);
            vec![s.into_dyn(), p.into_dyn(), n.into_dyn()]
        }
        LossKind::CircleYaw => {
            let a = unit_rows(rng, T, C);
            let scale = rng.random_range(0.05..0.6);
            let b = near_rows(rng, &a, scale);
            vec![a.into_dyn(), b.into_dyn()]
        }
        LossKind::TranslationBias => {
            let p = unit_rows(rng, T, C);
            let scale = rng.random_range(0.1..1.0);
            let t = near_rows(rng, &p, scale);
            let scale = rng.random_range(0.1..1.0);
            let b = near_rows(rng, &p, scale);
            vec![t.into_dyn(), b.into_dyn(), p.into_dyn()]
        }
    }
}

/// Rejects instances whose hinge arguments sit close enough to a kink for the
/// finite-difference stencil to straddle it.
fn near_kink(kind: LossKind, x: &[ArrayD<f64>], m: &LossMargins) -> Result<bool> {
    const GAP: f64 = 1e-3;
    let d = |a: &ArrayD<f64>, b: &ArrayD<f64>| a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    Ok(match kind {
        LossKind::Triplet => (d(&x[0], &x[1]) - d(&x[0], &x[2]) + m.triplet).abs() < GAP,
        LossKind::Hinge => (d(&x[0], &x[1]) - m.hinge_pos).abs() < GAP || (m.hinge_neg - d(&x[0], &x[2])).abs() < GAP,
        LossKind::CircleYaw => false,
        LossKind::TranslationBias => {
            let v = loss_value(kind, x, m)?;
            v < GAP
        }
    })
}

fn finite_difference(kind: LossKind, inputs: &[ArrayD<f64>], k: usize, m: &LossMargins) -> Result<ArrayD<f64>> {
    const H: f64 = 1e-5;
    let mut out = ArrayD::zeros(inputs[k].raw_dim());
    let mut x = inputs.to_vec();
    for idx in 0..inputs[k].len() {
        let orig = inputs[k].as_slice().expect("standard layout")[idx];
        x[k].as_slice_mut().expect("standard layout")[idx] = orig + H;
        let up = loss_value(kind, &x, m)?;
        x[k].as_slice_mut().expect("standard layout")[idx] = orig - H;
        let down = loss_value(kind, &x, m)?;
        x[k].as_slice_mut().expect("standard layout")[idx] = orig;
        out.as_slice_mut().expect("standard layout")[idx] = (up - down) / (2.0 * H);
    }
    Ok(out)
}

fn relative_error(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    let diff = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Direct transcription of each loss with plain loops and no log-space tricks.
fn scalar_oracle(kind: LossKind, x: &[ArrayD<f64>], m: &LossMargins) -> f64 {
    let dist = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]) * (a[i] - b[i]);
        }
        s.sqrt()
    };
    let flat = |a: &ArrayD<f64>| a.as_slice().expect("standard layout").to_vec();
    match kind {
        LossKind::Triplet => {
            let (s, p, n) = (flat(&x[0]), flat(&x[1]), flat(&x[2]));
            f64::max(dist(&s, &p) - dist(&s, &n) + m.triplet, 0.0)
        }
        LossKind::Hinge => {
            let (s, p, n) = (flat(&x[0]), flat(&x[1]), flat(&x[2]));
            f64::max(dist(&s, &p) - m.hinge_pos, 0.0) + f64::max(m.hinge_neg - dist(&s, &n), 0.0)
        }
        LossKind::CircleYaw => {
            let (t, c) = (x[0].shape()[0], x[0].shape()[1]);
            let (a, b) = (flat(&x[0]), flat(&x[1]));
            let row = |v: &Vec<f64>, i: usize| v[i * c..(i + 1) * c].to_vec();
            let mut total = 0.0;
            for i in 0..t {
                let pos = (m.gamma * (dist(&row(&a, i), &row(&b, i)) - m.yaw_pos).powi(2)).exp();
                let mut neg = 0.0;
                for j in 0..t {
                    if j != i {
                        neg += (m.gamma * (m.yaw_neg - dist(&row(&a, i), &row(&b, j))).powi(2)).exp();
                    }
                }
                total += (1.0 + pos * neg).ln();
            }
            total / t as f64
        }
        LossKind::TranslationBias => {
            let (t, c) = (x[0].shape()[0], x[0].shape()[1]);
            let (dt, db, dp) = (flat(&x[0]), flat(&x[1]), flat(&x[2]));
            let cost = |a: &Vec<f64>| {
                let mut s = 0.0;
                for i in 0..t {
                    s += dist(&a[i * c..(i + 1) * c], &dp[i * c..(i + 1) * c]);
                }
                s / t as f64
            };
            f64::max(cost(&dt) - cost(&db) + m.translation, 0.0)
        }
    }
}
