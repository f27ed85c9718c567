use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Probabilities are clamped to `[ADV_EPS, 1 - ADV_EPS]` before taking logs.
pub const ADV_EPS: f64 = 1e-7;
const COS_CLAMP: f64 = 1.0 - 1e-7;
const ANGLE_TOL: f64 = 1e-12;

/// A scalar loss plus named components for logging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub scalar: f64,
    pub components: BTreeMap<String, f64>,
}

impl LossValue {
    pub fn new(scalar: f64) -> Self {
        Self {
            scalar,
            components: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.components.insert(name.to_string(), value);
        self
    }
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

fn check_pair(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("length {} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("undefined direction: zero-norm vector in cosine loss".into()));
    }
    Ok((na, nb))
}

fn angle(a: ArrayView1<f64>, b: ArrayView1<f64>, na: f64, nb: f64) -> f64 {
    // 2*atan2(|a^ - b^|, |a^ + b^|) stays accurate near 0 and pi.
    let (mut d, mut s) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        d += (u - v) * (u - v);
        s += (u + v) * (u + v);
    }
    2.0 * d.sqrt().atan2(s.sqrt())
}

/// Angle between `a` and `b` in radians.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    let (a, b) = (ArrayView1::from(a), ArrayView1::from(b));
    let (na, nb) = check_pair(a, b)?;
    Ok(angle(a, b, na, nb))
}

/// Cosine distance loss between a prediction and a target.
pub fn cosine_loss(y_hat: &[f64], y: &[f64]) -> Result<LossValue> {
    let d = cosine_distance(y_hat, y)?;
    Ok(LossValue::new(d).with("reconstruction", d))
}

/// Angle and its gradient with respect to `a`.
fn cosine_row(a: ArrayView1<f64>, b: ArrayView1<f64>, mut grad: ndarray::ArrayViewMut1<f64>, scale: f64) -> Result<f64> {
    let (na, nb) = check_pair(a, b)?;
    let theta = angle(a, b, na, nb);
    if theta <= ANGLE_TOL || theta >= std::f64::consts::PI - ANGLE_TOL {
        grad.fill(0.0);
        return Ok(theta);
    }
    let u = (a.dot(&b) / (na * nb)).clamp(-COS_CLAMP, COS_CLAMP);
    let k = -scale / (na * (1.0 - u * u).sqrt());
    for ((g, x), y) in grad.iter_mut().zip(a).zip(b) {
        *g = k * (y / nb - u * x / na);
    }
    Ok(theta)
}

/// Mean angle over rows and its gradient with respect to `pred`.
pub fn cosine_loss_batch(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_batch(pred, target)?;
    let b = pred.nrows() as f64;
    let mut grad = Array2::zeros(pred.raw_dim());
    let mut total = 0.0;
    for ((p, t), g) in pred
        .axis_iter(Axis(0))
        .zip(target.axis_iter(Axis(0)))
        .zip(grad.axis_iter_mut(Axis(0)))
    {
        total += cosine_row(p, t, g, 1.0 / b)?;
    }
    Ok((total / b, grad))
}

/// Gradient of the angle between `a` and `b` with respect to `a`.
pub fn cosine_loss_grad(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let mut g = ndarray::Array1::zeros(a.len());
    cosine_row(ArrayView1::from(a), ArrayView1::from(b), g.view_mut(), 1.0)?;
    Ok(g.to_vec())
}

/// Mean over rows of the summed squared error, and its gradient.
pub fn squared_error_batch(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_batch(pred, target)?;
    let b = pred.nrows() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / b;
    Ok((loss, diff * (2.0 / b)))
}

/// Mean squared error over all entries, and its gradient.
pub fn mse_batch(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let (l, g) = squared_error_batch(pred, target)?;
    let w = pred.ncols() as f64;
    Ok((l / w, g / w))
}

fn check_batch(pred: &Array2<f64>, target: &Array2<f64>) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", pred.dim(), target.dim())));
    }
    if pred.nrows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

/// Adversarial objectives from discriminator outputs on real (prior) and
/// fake (speech-encoder) latents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialLoss {
    /// `-mean log(1 - D(fake))`, which the encoder ascends.
    pub gen: f64,
    /// `-mean log D(real) - mean log(1 - D(fake))`, which the discriminator minimizes.
    pub disc: f64,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(ADV_EPS, 1.0 - ADV_EPS)
}

fn check_probs(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Shape("empty discriminator batch".into()));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("discriminator output outside [0, 1]".into()));
    }
    Ok(())
}

pub fn adversarial_losses(d_real: &[f64], d_fake: &[f64]) -> Result<AdversarialLoss> {
    check_probs(d_real)?;
    check_probs(d_fake)?;
    let gen = -d_fake.iter().map(|&p| (1.0 - clamp_prob(p)).ln()).sum::<f64>() / d_fake.len() as f64;
    let real = -d_real.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>() / d_real.len() as f64;
    Ok(AdversarialLoss {
        gen,
        disc: real + gen,
    })
}

/// `-mean log(1 - D(fake))` alone.
pub fn gen_loss(d_fake: &[f64]) -> Result<f64> {
    check_probs(d_fake)?;
    Ok(-d_fake.iter().map(|&p| (1.0 - clamp_prob(p)).ln()).sum::<f64>() / d_fake.len() as f64)
}

/// d(disc)/d(prob) for the real and fake batches.
pub fn disc_loss_grads(d_real: &[f64], d_fake: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((disc_real_grad(d_real)?, gen_loss_grad(d_fake)?))
}

/// d(disc)/d(prob) on the real batch; the fake half equals [`gen_loss_grad`].
pub fn disc_real_grad(d_real: &[f64]) -> Result<Vec<f64>> {
    check_probs(d_real)?;
    let n = d_real.len() as f64;
    Ok(d_real
        .iter()
        .map(|&p| if p > ADV_EPS && p < 1.0 - ADV_EPS { -1.0 / (n * p) } else { 0.0 })
        .collect())
}

/// d(gen)/d(prob) on the fake batch.
pub fn gen_loss_grad(d_fake: &[f64]) -> Result<Vec<f64>> {
    check_probs(d_fake)?;
    let n = d_fake.len() as f64;
    Ok(d_fake
        .iter()
        .map(|&p| {
            if p > ADV_EPS && p < 1.0 - ADV_EPS {
                1.0 / (n * (1.0 - p))
            } else {
                0.0
            }
        })
        .collect())
}
