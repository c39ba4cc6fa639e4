//! The three detection objectives, evaluated on probability matrices.
//!
//! Every objective is the mean two-class negative log-likelihood over all
//! `(type, token)` positions it covers. The true-class probability is clamped
//! from below at [`EPS`] before the log; an exact 1 stays 1, so perfect
//! predictions score exactly zero.

use crate::corpus::LabelMatrix;
use crate::error::{Error, Result};
use crate::model::PredictionMatrix;

pub const EPS: f64 = 1e-7;

/// Negative log-probability of the gold class for one position.
pub fn token_nll(prob_positive: f64, label: u8) -> f64 {
    let p = if label == 1 {
        prob_positive
    } else {
        1.0 - prob_positive
    };
    -p.max(EPS).ln()
}

/// Mean token loss with full shape checking; zero for no positions. The
/// mean is updated incrementally so that a constant loss per position comes
/// back exactly rather than with summation rounding.
fn mean_token_loss(preds: &[PredictionMatrix], gold: &[LabelMatrix]) -> Result<f64> {
    if preds.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} prediction matrices but {} label matrices",
            preds.len(),
            gold.len()
        )));
    }
    let mut mean = 0.0;
    let mut count = 0usize;
    let universe = preds.first().map(|p| &p.type_ids);
    for (p, g) in preds.iter().zip(gold) {
        if Some(&p.type_ids) != universe || p.type_ids != g.type_ids {
            return Err(Error::Shape(format!(
                "type universe differs in sentence `{}`",
                p.sent_id
            )));
        }
        if p.probs.len() != g.rows.len() {
            return Err(Error::Shape(format!(
                "sentence `{}`: {} prediction rows but {} label rows",
                p.sent_id,
                p.probs.len(),
                g.rows.len()
            )));
        }
        for (pr, gr) in p.probs.iter().zip(&g.rows) {
            if pr.len() != gr.len() {
                return Err(Error::Shape(format!(
                    "sentence `{}`: {} probabilities for {} tokens",
                    p.sent_id,
                    pr.len(),
                    gr.len()
                )));
            }
            for (&prob, &y) in pr.iter().zip(gr) {
                if !(0.0..=1.0).contains(&prob) {
                    return Err(Error::Shape(format!(
                        "sentence `{}`: probability {prob} outside [0, 1]",
                        p.sent_id
                    )));
                }
                count += 1;
                mean += (token_nll(prob, y) - mean) / count as f64;
            }
        }
    }
    Ok(mean)
}

/// `−1/(|T||N|) Σ_t Σ_i y·log ỹ` over the given sentences. An empty input
/// contributes zero.
pub fn loss_supervised(preds: &[PredictionMatrix], gold: &[LabelMatrix]) -> Result<f64> {
    mean_token_loss(preds, gold)
}

/// Base term plus `alpha` times the novel term.
pub fn loss_few_shot(
    pred_base: &[PredictionMatrix],
    gold_base: &[LabelMatrix],
    pred_novel: &[PredictionMatrix],
    gold_novel: &[LabelMatrix],
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let base = loss_supervised(pred_base, gold_base)?;
    let novel = loss_supervised(pred_novel, gold_novel)?;
    Ok(base + alpha * novel)
}

/// The supervised form restricted to base data.
pub fn loss_zero_shot(pred_base: &[PredictionMatrix], gold_base: &[LabelMatrix]) -> Result<f64> {
    loss_supervised(pred_base, gold_base)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "alpha must be a finite non-negative number, got {alpha}"
        )));
    }
    Ok(())
}
