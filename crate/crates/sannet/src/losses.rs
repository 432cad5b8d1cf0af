//! The three loss terms and their combination.
//!
//! - reconstruction `J_D`: pixel-wise cross-entropy between input and the
//!   same-gender output, used only during pre-training;
//! - gender confusion `J_G`: cross-entropy of the auxiliary classifier on the
//!   same-gender output against the true label, plus on the opposite-gender
//!   output against the flipped label;
//! - match retention `J_M`: squared distance between the descriptors of the
//!   input and the same-gender output.
//!
//! The adversarial-phase total is `lambda_g * J_G + lambda_m * J_M`; neither
//! `J_D` nor anything derived from the neutral output enters it — the
//! signature makes that unrepresentable.
//!
//! Each term exists in two forms: a plain per-image scalar (tests, logging)
//! and a batched graph node (training), which agree and are tested to.

use crate::error::{Error, Result};
use crate::nn::graph::Var;
use crate::nn::ops::{self, BCE_EPS};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Reconstruction weight; only meaningful during pre-training.
    pub lambda_d: f64,
    pub lambda_g: f64,
    pub lambda_m: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            lambda_d: 1.0,
            lambda_g: 1.0,
            lambda_m: 1.0,
        }
    }
}

fn bce_scalar(t: f64, p: f64) -> f64 {
    let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -t * pc.ln() - (1.0 - t) * (1.0 - pc).ln()
}

/// Reconstruction loss of one image: cross-entropy summed over pixels.
pub fn loss_jd(x: &Tensor, x_sm: &Tensor) -> Result<f64> {
    if x.shape() != x_sm.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss_jd",
            detail: format!("input {:?} vs reconstruction {:?}", x.shape(), x_sm.shape()),
        });
    }
    Ok(x.data()
        .iter()
        .zip(x_sm.data())
        .map(|(&t, &p)| bce_scalar(t, p))
        .sum())
}

/// Gender-confusion loss of one image: true label on the same-gender output,
/// flipped label on the opposite-gender output.
pub fn loss_jg(y: u8, p_sm: f64, p_op: f64) -> Result<f64> {
    if y > 1 {
        return Err(Error::InvalidArgument(format!(
            "gender label must be 0 or 1, got {y}"
        )));
    }
    Ok(bce_scalar(y as f64, p_sm) + bce_scalar(1.0 - y as f64, p_op))
}

/// Match-retention loss: squared Euclidean distance between descriptors.
pub fn loss_jm(e_x: &[f64], e_sm: &[f64]) -> Result<f64> {
    if e_x.len() != e_sm.len() {
        return Err(Error::ShapeMismatch {
            op: "loss_jm",
            detail: format!("descriptor lengths {} vs {}", e_x.len(), e_sm.len()),
        });
    }
    Ok(e_x
        .iter()
        .zip(e_sm)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Adversarial-phase total. `J_D` and neutral-output terms are excluded by
/// construction: only the gender and matching terms are accepted.
pub fn loss_total(jg: f64, jm: f64, w: &LossWeights) -> f64 {
    w.lambda_g * jg + w.lambda_m * jm
}

// ---------------------------------------------------------------------------
// batched graph forms (mean over batch elements)
// ---------------------------------------------------------------------------

/// Batched `J_D`: per-image pixel sums averaged over the batch.
pub fn jd_batch(x: &Var, x_sm: &Var) -> Result<Var> {
    let n = x.shape()[0] as f64;
    let total = ops::binary_cross_entropy(x, x_sm)?;
    Ok(ops::scale(&total, 1.0 / n))
}

/// Batched `J_G` from `[N,1]` classifier outputs on the same- and
/// opposite-gender reconstructions.
pub fn jg_batch(genders: &[u8], p_sm: &Var, p_op: &Var) -> Result<Var> {
    let n = genders.len();
    if p_sm.shape() != [n, 1] || p_op.shape() != [n, 1] {
        return Err(Error::ShapeMismatch {
            op: "jg_batch",
            detail: format!(
                "expected [{n},1] probabilities, got {:?} and {:?}",
                p_sm.shape(),
                p_op.shape()
            ),
        });
    }
    let y: Vec<f64> = genders.iter().map(|&g| g as f64).collect();
    let y_flip: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let y = Var::constant(Tensor::from_vec(&[n, 1], y)?);
    let y_flip = Var::constant(Tensor::from_vec(&[n, 1], y_flip)?);
    let same = ops::binary_cross_entropy(&y, p_sm)?;
    let flipped = ops::binary_cross_entropy(&y_flip, p_op)?;
    Ok(ops::scale(&ops::add(&same, &flipped)?, 1.0 / n as f64))
}

/// Batched `J_M` from `[N,D]` descriptor matrices.
pub fn jm_batch(e_x: &Var, e_sm: &Var) -> Result<Var> {
    let n = e_x.shape()[0] as f64;
    let diff = ops::sub(&e_sm, &e_x)?;
    let sq = ops::mul(&diff, &diff)?;
    Ok(ops::scale(&ops::sum(&sq), 1.0 / n))
}

/// Batched total, mirroring [`loss_total`].
pub fn total_batch(jg: &Var, jm: &Var, w: &LossWeights) -> Result<Var> {
    ops::add(&ops::scale(jg, w.lambda_g), &ops::scale(jm, w.lambda_m))
}
