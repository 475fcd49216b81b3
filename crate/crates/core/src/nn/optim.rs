use super::model::Model;

/// Cosine decay from `base` at step 0 to 0 at `total` steps.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = (step.min(total) as f64) / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// SGD with heavy-ball momentum and coupled weight decay:
/// `v ← μ·v + g + λ·θ`, `θ ← θ − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(model: &Model, momentum: f32, weight_decay: f32) -> Self {
        Self { momentum, weight_decay, velocity: model.params().iter().map(|t| vec![0.0; t.data.len()]).collect() }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[Vec<f32>], lr: f32) {
        for ((p, g), v) in model.params_mut().iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, &gv), vv) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
                *vv = self.momentum * *vv + gv + self.weight_decay * *w;
                *w -= lr * *vv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0.4, 0, 100), 0.4);
        assert!(cosine_lr(0.4, 100, 100).abs() < 1e-15);
        assert!((cosine_lr(0.4, 50, 100) - 0.2).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for s in 0..=100 {
            let lr = cosine_lr(1.0, s, 100);
            assert!(lr >= 0.0 && lr <= prev);
            prev = lr;
        }
    }
}
