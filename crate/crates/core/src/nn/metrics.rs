use super::model::Model;
use crate::dataset::LabeledDataset;
use crate::{Error, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-sample top-1 confidence and correctness.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    pub confidences: Vec<f64>,
    pub correct: Vec<bool>,
}

impl Predictions {
    pub fn accuracy(&self) -> f64 {
        if self.correct.is_empty() {
            return 0.0;
        }
        self.correct.iter().filter(|&&c| c).count() as f64 / self.correct.len() as f64
    }
}

const EVAL_CHUNK: usize = 256;

pub fn predictions(model: &Model, ds: &LabeledDataset) -> Result<Predictions> {
    let k = model.num_classes();
    let mut out = Predictions::default();
    for start in (0..ds.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(ds.len());
        let probs = model.predict_proba(&ds.images()[start..end])?;
        for (i, row) in probs.chunks(k).enumerate() {
            let top = argmax(row);
            out.confidences.push(row[top] as f64);
            out.correct.push(top == ds.label(start + i));
        }
    }
    Ok(out)
}

/// Top-1 accuracy in `[0, 1]`.
pub fn evaluate(model: &Model, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    Ok(predictions(model, ds)?.accuracy())
}

/// Expected calibration error over `bins` equal-width bins
/// `(0, 1/B], (1/B, 2/B], …`: `Σ_b (n_b / n) · |acc_b − conf_b|`.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.is_empty() || confidences.len() != correct.len() || bins == 0 {
        return Err(Error::invalid("ece needs equal-length, non-empty inputs and bins > 0"));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0f64; bins];
    let mut hits = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::invalid(format!("confidence {c} outside (0, 1]")));
        }
        let b = ((c * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += ok as usize;
    }
    let n = confidences.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (hits[b] as f64 / nb - conf_sum[b] / nb).abs()
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn ece_single_wrong_sample() {
        assert!((ece(&[0.9], &[false], 15).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn ece_confident_and_right_is_zero() {
        assert_eq!(ece(&[1.0; 10], &[true; 10], 15).unwrap(), 0.0);
    }

    #[test]
    fn ece_rejects_bad_input() {
        assert!(ece(&[], &[], 15).is_err());
        assert!(ece(&[0.0], &[true], 15).is_err());
        assert!(ece(&[1.2], &[true], 15).is_err());
    }
}
