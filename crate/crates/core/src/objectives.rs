//! Contrastive alignment between pooled audio embeddings and caption text
//! embeddings, and the combined training objective.

use aacap_autodiff::{Mat, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    /// τ; similarities are divided by it before exponentiation.
    pub temperature: f64,
    /// α; weight of the contrastive term in the total loss.
    pub alpha: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            alpha: 1.0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `aᵀc / (‖a‖‖c‖)`, in `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], c: &[f64]) -> Result<f64> {
    if a.len() != c.len() {
        return Err(Error::invalid(format!(
            "embedding widths differ: {} vs {}",
            a.len(),
            c.len()
        )));
    }
    let (na, nc) = (norm(a), norm(c));
    if na == 0.0 || nc == 0.0 || !na.is_finite() || !nc.is_finite() {
        return Err(Error::invalid("cosine similarity of a zero-norm or non-finite vector"));
    }
    let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nc)).clamp(-1.0, 1.0))
}

/// `exp(cos(a, c) / τ)`.
pub fn scaled_similarity(a: &[f64], c: &[f64], temperature: f64) -> Result<f64> {
    if temperature <= 0.0 {
        return Err(Error::invalid("temperature must be positive"));
    }
    Ok((cosine_similarity(a, c)? / temperature).exp())
}

/// Symmetric in-batch InfoNCE on a tape. `audio` and `text` are `B × D`;
/// row `i` of each forms the positive pair. The audio-direction term
/// normalizes each positive over all audio rows for its caption, the
/// text-direction term over all captions for its audio; both are averaged
/// over the batch and the result is their mean.
pub fn infonce_on_tape(tape: &mut Tape, audio: Var, text: Var, temperature: f64) -> Var {
    let b = tape.value(audio).nrows();
    let a_n = tape.l2_normalize_rows(audio);
    let c_n = tape.l2_normalize_rows(text);
    let cos = tape.matmul_nt(a_n, c_n);
    // scores[i][j] = cos(a_i, c_j) / τ
    let scores = tape.scale(cos, 1.0 / temperature);
    let diag: Vec<usize> = (0..b).collect();

    let over_captions = tape.log_softmax_rows(scores);
    let text_term = tape.pick(over_captions, &diag);

    let scores_t = tape.transpose(scores);
    let over_audio = tape.log_softmax_rows(scores_t);
    let audio_term = tape.pick(over_audio, &diag);

    let both = tape.add(text_term, audio_term);
    let total = tape.sum_all(both);
    tape.scale(total, -0.5 / b as f64)
}

fn validate_batch(audio: &Mat, text: &Mat) -> Result<()> {
    if audio.nrows() != text.nrows() {
        return Err(Error::invalid(format!(
            "batch size mismatch: {} audio rows, {} text rows",
            audio.nrows(),
            text.nrows()
        )));
    }
    if audio.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if audio.ncols() != text.ncols() {
        return Err(Error::invalid("audio and text embeddings differ in width"));
    }
    for (name, m) in [("audio", audio), ("text", text)] {
        for row in m.rows() {
            let n = row.dot(&row).sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::invalid(format!("{name} embedding with zero or non-finite norm")));
            }
        }
    }
    Ok(())
}

/// InfoNCE value for a batch of paired embeddings.
pub fn infonce_loss(audio: &Mat, text: &Mat, temperature: f64) -> Result<f64> {
    Ok(infonce_loss_with_grads(audio, text, temperature)?.0)
}

/// InfoNCE value with its gradients with respect to both embedding batches.
pub fn infonce_loss_with_grads(audio: &Mat, text: &Mat, temperature: f64) -> Result<(f64, Mat, Mat)> {
    validate_batch(audio, text)?;
    if temperature <= 0.0 {
        return Err(Error::invalid("temperature must be positive"));
    }
    let mut tape = Tape::new();
    let a = tape.input(audio.clone());
    let c = tape.input(text.clone());
    let loss = infonce_on_tape(&mut tape, a, c, temperature);
    let grads = tape.backward(loss);
    Ok((
        tape.scalar(loss),
        grads.get(a).cloned().unwrap_or_else(|| Mat::zeros(audio.dim())),
        grads.get(c).cloned().unwrap_or_else(|| Mat::zeros(text.dim())),
    ))
}

/// `nll + α · infonce`.
pub fn multitask_loss(nll: f64, infonce: f64, alpha: f64) -> f64 {
    nll + alpha * infonce
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn similarity_special_cases() {
        let a = [0.3, -1.2, 0.5];
        let same = scaled_similarity(&a, &a, 0.5).unwrap();
        assert!((same - 2f64.exp()).abs() < 1e-12);
        assert!((same - 7.3891).abs() < 1e-4);
        let ortho = scaled_similarity(&[1.0, 0.0], &[0.0, 2.0], 0.07).unwrap();
        assert_eq!(ortho, 1.0);
        let neg = scaled_similarity(&a, &a.map(|v| -v), 1.0).unwrap();
        assert!((neg - (-1f64).exp()).abs() < 1e-12);
        assert!((neg - 0.3679).abs() < 1e-4);
        assert!(scaled_similarity(&[0.0, 0.0], &[1.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn single_pair_batch_is_exactly_zero() {
        let l = infonce_loss(&array![[0.2, 0.7, -0.1]], &array![[1.0, -3.0, 2.0]], 0.5).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn mismatched_batches_are_rejected() {
        assert!(infonce_loss(&array![[1.0, 0.0]], &array![[1.0, 0.0], [0.0, 1.0]], 0.5).is_err());
        assert!(infonce_loss(&array![[0.0, 0.0]], &array![[1.0, 0.0]], 0.5).is_err());
    }

    #[test]
    fn multitask_composition() {
        assert_eq!(multitask_loss(6.9078, 0.5, 0.0), 6.9078);
        assert!((multitask_loss(6.9078, 0.12693, 1.0) - 7.03473).abs() < 1e-12);
        assert_eq!(multitask_loss(2.5, 0.0, 1.0), 2.5);
    }

    #[test]
    fn config_validation() {
        assert!(ContrastiveConfig::default().validate().is_ok());
        assert!(ContrastiveConfig { temperature: 0.0, alpha: 1.0 }.validate().is_err());
        assert!(ContrastiveConfig { temperature: 0.5, alpha: -1.0 }.validate().is_err());
    }
}
