//! Training objectives.
//!
//! All functions return the quantity their optimizer *minimizes*. The critic minimizes
//! `E[D(fake)] - E[D(real)] + GP + lambda2 * L_Datt`; the generator minimizes
//! `-E[D(fake)] + lambda3 * L_Gatt + lambda4 * L_rec`.

use attriforge_tensor::{grad, Tensor, Var};

use crate::error::{Error, Result};

/// Trade-off weights: gradient penalty, critic attribute, generator attribute, reconstruction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 10.0, lambda2: 50.0, lambda3: 100.0, lambda4: 1000.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be strictly positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `eps * real + (1 - eps) * fake`, one `eps` per sample.
#[derive(Clone, Debug)]
pub struct InterpolatedSample {
    pub data: Tensor,
    pub epsilon: Vec<f64>,
}

impl InterpolatedSample {
    pub fn new(real: &Tensor, fake: &Tensor, epsilon: &[f64]) -> Result<Self> {
        if real.shape() != fake.shape() {
            return Err(Error::Config(format!(
                "real {:?} and fake {:?} batches differ in shape",
                real.shape(),
                fake.shape()
            )));
        }
        let n = real.shape()[0];
        if epsilon.len() != n || epsilon.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::Config(format!("need {n} interpolation weights in [0, 1]")));
        }
        let mut shape = vec![1; real.ndim()];
        shape[0] = n;
        let eps = Tensor::from_f64(epsilon.to_vec(), &shape, real.dtype()).broadcast_to(real.shape());
        let one_minus = eps.mul_scalar(-1.0).add_scalar(1.0);
        let data = eps.mul(real).add(&one_minus.mul(fake));
        Ok(InterpolatedSample { data, epsilon: epsilon.to_vec() })
    }
}

/// Per-sample L2 norms of `g` over all non-batch axes, shape `[n]`.
fn per_sample_norm(g: &Var) -> Var {
    let n = g.shape()[0];
    let flat = g.value().numel() / n;
    g.reshape(&[n, flat]).square().sum_to(&[n, 1]).sqrt().reshape(&[n])
}

/// `lambda1 * mean_i (||grad_x critic(x_hat_i)||_2 - 1)^2`, differentiable with respect to
/// the critic's parameters.
pub fn gradient_penalty(
    critic: impl Fn(&Var) -> Result<Var>,
    sample: &InterpolatedSample,
    lambda1: f64,
) -> Result<Var> {
    if !(lambda1 > 0.0) {
        return Err(Error::Config(format!("lambda1 must be positive, got {lambda1}")));
    }
    let x_hat = Var::leaf(sample.data.clone());
    let scores = critic(&x_hat)?;
    let g = grad(&scores.sum(), &[&x_hat], true)
        .pop()
        .flatten()
        .ok_or_else(|| Error::Capability("critic output does not depend on its input".into()))?;
    Ok(per_sample_norm(&g).add_scalar(-1.0).square().mean().mul_scalar(lambda1))
}

/// Critic adversarial objective: `mean(fake) - mean(real) + gp`.
pub fn d_adv_loss(scores_real: &Var, scores_fake: &Var, gp: &Var) -> Var {
    scores_fake.mean().sub(&scores_real.mean()).add(gp)
}

/// Generator adversarial objective: `-mean(fake)`.
pub fn g_adv_loss(scores_fake: &Var) -> Var {
    scores_fake.mean().neg()
}

fn l1(a: &Var, b: &Var) -> Var {
    a.sub(b).abs().mean()
}

/// Mean absolute error between source ratings and predictions on real images.
pub fn d_att_loss(att_true: &Var, att_pred: &Var) -> Var {
    l1(att_true, att_pred)
}

/// Mean absolute error between target attributes and predictions on edited images.
pub fn g_att_loss(att_target: &Var, att_pred_on_fake: &Var) -> Var {
    l1(att_target, att_pred_on_fake)
}

/// Mean absolute error over every pixel and channel.
pub fn rec_loss(x: &Var, x_rec: &Var) -> Var {
    l1(x, x_rec)
}

/// Critic-side component losses. `adv` already includes the gradient penalty.
pub struct DLossParts {
    pub adv: Var,
    pub att: Var,
}

pub struct GLossParts {
    pub adv: Option<Var>,
    pub att: Option<Var>,
    pub rec: Var,
}

pub fn total_d_loss(parts: &DLossParts, w: &LossWeights) -> Var {
    parts.adv.add(&parts.att.mul_scalar(w.lambda2))
}

/// Absent adversarial/attribute terms (no discriminator) contribute nothing.
pub fn total_g_loss(parts: &GLossParts, w: &LossWeights) -> Var {
    let mut total = parts.rec.mul_scalar(w.lambda4);
    if let Some(att) = &parts.att {
        total = total.add(&att.mul_scalar(w.lambda3));
    }
    if let Some(adv) = &parts.adv {
        total = total.add(adv);
    }
    total
}
