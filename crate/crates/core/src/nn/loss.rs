//! Softmax, distillation KL and label-smoothed cross-entropy.
//!
//! All reductions accumulate in `f64`.

/// Floor applied to student probabilities inside logarithms.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut z = 0f64;
    for v in row.iter_mut() {
        let e = ((*v - m) as f64).exp();
        *v = e as f32;
        z += e;
    }
    for v in row.iter_mut() {
        *v = (*v as f64 / z) as f32;
    }
}

/// Row-wise softmax of a `rows × k` matrix.
pub fn softmax(logits: &[f32], k: usize) -> Vec<f32> {
    let mut out = logits.to_vec();
    out.chunks_mut(k).for_each(softmax_in_place);
    out
}

/// Row-wise log-softmax in `f64`.
pub fn log_softmax(logits: &[f32], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&v| v as f64 - lse));
    }
    out
}

/// Batch-mean `KL(target ‖ student)` from student log-probabilities, with the
/// gradient with respect to those log-probabilities. Log-probabilities below
/// `ln 1e-12` are clamped.
pub fn kl_divergence(student_log_probs: &[f64], targets: &[f64], k: usize) -> (f64, Vec<f64>) {
    assert_eq!(student_log_probs.len(), targets.len());
    let rows = targets.len() / k;
    let floor = LOG_PROB_FLOOR.ln();
    let mut loss = 0.0;
    let mut grad = vec![0.0; targets.len()];
    for (i, (&lq, &t)) in student_log_probs.iter().zip(targets).enumerate() {
        if t > 0.0 {
            loss += t * (t.ln() - lq.max(floor));
            if lq > floor {
                grad[i] = -t / rows as f64;
            }
        }
    }
    (loss / rows as f64, grad)
}

/// Batch-mean `KL(target ‖ softmax(logits))` and its gradient with respect to
/// the logits, `(softmax(logits) − target) / rows`. Target rows must sum to 1.
pub fn softmax_kl(logits: &[f32], targets: &[f32], k: usize) -> (f64, Vec<f32>) {
    assert_eq!(logits.len(), targets.len());
    let rows = logits.len() / k;
    let lp = log_softmax(logits, k);
    let floor = LOG_PROB_FLOOR.ln();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&l, &t) in lp.iter().zip(targets) {
        let t = t as f64;
        if t > 0.0 {
            loss += t * (t.ln() - l.max(floor));
        }
        grad.push(((l.exp() - t) / rows as f64) as f32);
    }
    (loss / rows as f64, grad)
}

/// Batch-mean cross-entropy `−Σ t log q` against soft targets, with the
/// logit gradient. Equal to [`softmax_kl`] plus the target entropy.
pub fn cross_entropy_smoothed(logits: &[f32], targets: &[f32], k: usize) -> (f64, Vec<f32>) {
    let rows = logits.len() / k;
    let (kl, grad) = softmax_kl(logits, targets, k);
    let entropy: f64 =
        targets.iter().filter(|&&t| t > 0.0).map(|&t| -(t as f64) * (t as f64).ln()).sum::<f64>() / rows as f64;
    (kl + entropy, grad)
}

/// `(1 − ε)·onehot(label) + ε / k`.
pub fn smoothed_one_hot(label: usize, k: usize, epsilon: f32) -> Vec<f32> {
    let mut row = vec![epsilon / k as f32; k];
    row[label] += 1.0 - epsilon;
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_of_identical_rows_is_zero() {
        let t = [0.2, 0.3, 0.5];
        let lq: Vec<f64> = t.iter().map(|v: &f64| v.ln()).collect();
        let (l, _) = kl_divergence(&lq, &t, 3);
        assert!(l.abs() < 1e-15);
    }

    #[test]
    fn kl_closed_form() {
        let t = [0.5, 0.5];
        let lq = [0.9f64.ln(), 0.1f64.ln()];
        let (l, _) = kl_divergence(&lq, &t, 2);
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn kl_floor_keeps_loss_finite() {
        let (l, g) = kl_divergence(&[f64::NEG_INFINITY, 0.0], &[0.5, 0.5], 2);
        assert!(l.is_finite());
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn smoothed_one_hot_sums_to_one() {
        let r = smoothed_one_hot(3, 10, 0.1);
        assert!((r.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!((r[3] - 0.91).abs() < 1e-6);
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0, -1000.0], 3);
        assert!((p[0] - 0.5).abs() < 1e-6 && p[2] == 0.0);
    }
}
