//! Supervised, consistency and fairness losses recorded on a [`Tape`].

use serde::{Deserialize, Serialize};

use crate::adaptive_threshold::{mask, normalized_histogram, MaskOutcome, ThresholdState};
use crate::error::{contract, dimension, Result};
use crate::ndcore::{argmax, Tape, Tensor, Var};

/// Floor applied to histogram entries before they are used as divisors.
pub const HIST_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FairnessVariant {
    #[default]
    None,
    /// `U . log(mean masked strong probability)`.
    UniformPrior,
    /// Histogram-normalized cross-entropy against the running class marginal.
    Saf,
}

impl FairnessVariant {
    pub fn name(&self) -> &'static str {
        match self {
            FairnessVariant::None => "none",
            FairnessVariant::UniformPrior => "uniform_prior",
            FairnessVariant::Saf => "saf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_s: f64,
    pub l_u: f64,
    pub l_f: f64,
    pub w_u: f64,
    pub w_f: f64,
    pub total: f64,
    pub n_masked_in: usize,
}

pub fn total_loss(l_s: f64, l_u: f64, l_f: f64, w_u: f64, w_f: f64) -> LossBundle {
    LossBundle {
        l_s,
        l_u,
        l_f,
        w_u,
        w_f,
        total: l_s + w_u * l_u + w_f * l_f,
        n_masked_in: 0,
    }
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<()> {
    dimension!(
        logits.shape().len() == 2 && logits.rows() == labels.len(),
        "{} labels for logits {:?}",
        labels.len(),
        logits.shape()
    );
    let c = logits.cols();
    contract!(labels.iter().all(|&y| y < c), "label out of range 0..{c}");
    Ok(())
}

/// Mean cross-entropy of `softmax(logits)` against integer labels.
pub fn supervised_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    check_labels(tape.value(logits), labels)?;
    let lp = tape.log_softmax(logits)?;
    let picked = tape.gather(lp, labels)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -1.0))
}

/// `(1/muB) * sum over passing rows of CE(softmax(strong_b), argmax weak_b)`.
/// `weak_probs` is a plain tensor, so no gradient reaches the weak branch.
pub fn consistency_loss(
    tape: &mut Tape,
    weak_probs: &Tensor,
    strong_logits: Var,
    thresholds: &[f64],
) -> Result<(Var, MaskOutcome)> {
    let sv = tape.value(strong_logits);
    dimension!(
        sv.shape() == weak_probs.shape(),
        "strong logits {:?} vs weak probabilities {:?}",
        sv.shape(),
        weak_probs.shape()
    );
    let m = mask(weak_probs, thresholds)?;
    let n = m.mask.len() as f64;
    let weights: Vec<f64> = m.mask.iter().map(|&keep| if keep { -1.0 / n } else { 0.0 }).collect();
    let w = tape.constant(Tensor::vector(weights)?);
    let lp = tape.log_softmax(strong_logits)?;
    let picked = tape.gather(lp, &m.hard_labels)?;
    let weighted = tape.mul(picked, w)?;
    Ok((tape.sum(weighted), m))
}

/// Class-fairness regularizer. Zero when no row passes its threshold.
///
/// For [`FairnessVariant::Saf`] the value is
/// `sum_c a_c * ln b_c` with
/// `a = SumNorm(p_local / hist)` from the running state (constants) and
/// `b = SumNorm(p_bar / h_bar)`, where `p_bar` averages the strong
/// probabilities of passing rows over the whole batch and `h_bar` is the
/// histogram of their strong argmax labels over the passing count.
pub fn fairness_loss(
    tape: &mut Tape,
    variant: FairnessVariant,
    state: &ThresholdState,
    weak_probs: &Tensor,
    strong_logits: Var,
    thresholds: &[f64],
) -> Result<Var> {
    if variant == FairnessVariant::None {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let c = state.num_classes;
    let sv = tape.value(strong_logits);
    dimension!(
        sv.shape() == weak_probs.shape() && sv.cols() == c,
        "strong logits {:?} vs weak probabilities {:?} with {c} classes",
        sv.shape(),
        weak_probs.shape()
    );
    let m = mask(weak_probs, thresholds)?;
    let kept = m.count();
    if kept == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let n = m.mask.len();
    let probs = tape.softmax(strong_logits)?;

    match variant {
        FairnessVariant::None => unreachable!(),
        FairnessVariant::UniformPrior => {
            // mean over the passing rows
            let sel: Vec<f64> = m.mask.iter().map(|&k| if k { 1.0 / kept as f64 } else { 0.0 }).collect();
            let sel = tape.constant(Tensor::new(vec![1, n], sel)?);
            let p_bar = tape.matmul(sel, probs)?;
            let logp = tape.log(p_bar);
            let u = tape.constant(Tensor::full(&[1, c], 1.0 / c as f64));
            let terms = tape.mul(logp, u)?;
            Ok(tape.sum(terms))
        }
        FairnessVariant::Saf => {
            let sel: Vec<f64> = m.mask.iter().map(|&k| if k { 1.0 / n as f64 } else { 0.0 }).collect();
            let sel = tape.constant(Tensor::new(vec![1, n], sel)?);
            let p_bar = tape.matmul(sel, probs)?;

            let pv = tape.value(probs);
            let strong_labels: Vec<usize> = (0..n)
                .filter(|&b| m.mask[b])
                .map(|b| argmax(pv.row(b)))
                .collect();
            let h_bar: Vec<f64> = normalized_histogram(&strong_labels, c)?
                .into_iter()
                .map(|h| h.max(HIST_FLOOR))
                .collect();
            let h_bar = tape.constant(Tensor::new(vec![1, c], h_bar)?);
            let ratio = tape.div(p_bar, h_bar)?;
            let total = tape.sum(ratio);
            let b = tape.div_scalar(ratio, total)?;

            let target = sum_norm(
                &state
                    .p_local
                    .iter()
                    .zip(&state.hist)
                    .map(|(p, h)| p / h.max(HIST_FLOOR))
                    .collect::<Vec<_>>(),
            );
            let a = tape.constant(Tensor::new(vec![1, c], target)?);
            let logb = tape.log(b);
            let terms = tape.mul(logb, a)?;
            Ok(tape.sum(terms))
        }
    }
}

pub fn sum_norm(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}
