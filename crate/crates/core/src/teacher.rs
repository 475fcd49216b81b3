//! Teachers, ensembles and top-K sparsification of their outputs.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::dataset::{Dims, Image};
use crate::desk::DeskGenerator;
use crate::nn::Model;
use crate::{Error, Result};

static TEACHER_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of teacher batch evaluations made through [`Teacher::predict`] in
/// this process.
pub fn global_teacher_calls() -> u64 {
    TEACHER_CALLS.load(Ordering::SeqCst)
}

/// A predictor mapping a batch of images at [`Teacher::input_dims`] to a
/// row-major `batch × num_classes` probability matrix.
pub trait Teacher: Send + Sync {
    /// Provenance string recorded in store headers.
    fn identity(&self) -> String;

    fn num_classes(&self) -> usize;

    fn input_dims(&self) -> Dims;

    /// Raw evaluation. Callers should go through [`Teacher::predict`], which
    /// checks dimensions and counts the call.
    fn forward(&self, batch: &[Image]) -> Result<Vec<f32>>;

    fn predict(&self, batch: &[Image]) -> Result<Vec<f32>> {
        let dims = self.input_dims();
        if let Some(img) = batch.iter().find(|im| im.dims() != dims) {
            return Err(Error::DimensionMismatch { expected: dims.to_string(), actual: img.dims().to_string() });
        }
        TEACHER_CALLS.fetch_add(1, Ordering::SeqCst);
        self.forward(batch)
    }
}

/// A trained micro-learner used as teacher.
#[derive(Clone, Debug)]
pub struct ModelTeacher {
    model: Model,
    name: String,
}

impl ModelTeacher {
    pub fn new(model: Model, name: impl Into<String>) -> Self {
        Self { model, name: name.into() }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
}

impl Teacher for ModelTeacher {
    fn identity(&self) -> String {
        format!("{}:{}", self.model.arch(), self.name)
    }

    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    fn input_dims(&self) -> Dims {
        self.model.input_dims()
    }

    fn forward(&self, batch: &[Image]) -> Result<Vec<f32>> {
        self.model.predict_proba(batch)
    }
}

/// Bayes-style teacher built from the desk generator's class templates.
#[derive(Clone, Debug)]
pub struct OracleTeacher {
    generator: DeskGenerator,
}

impl OracleTeacher {
    pub fn new(generator: DeskGenerator) -> Self {
        Self { generator }
    }
}

impl Teacher for OracleTeacher {
    fn identity(&self) -> String {
        format!("oracle:desk-seed-{}", self.generator.config().seed)
    }

    fn num_classes(&self) -> usize {
        self.generator.num_classes()
    }

    fn input_dims(&self) -> Dims {
        self.generator.dims()
    }

    fn forward(&self, batch: &[Image]) -> Result<Vec<f32>> {
        Ok(batch.iter().flat_map(|img| self.generator.posterior(img).into_iter().map(|p| p as f32)).collect())
    }
}

/// Arithmetic mean of member outputs.
pub struct EnsembleTeacher {
    members: Vec<Box<dyn Teacher>>,
}

impl EnsembleTeacher {
    pub fn new(members: Vec<Box<dyn Teacher>>) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::invalid("an ensemble needs at least one member"))?;
        let (k, dims) = (first.num_classes(), first.input_dims());
        if members.iter().any(|m| m.num_classes() != k || m.input_dims() != dims) {
            return Err(Error::invalid("ensemble members disagree on classes or input size"));
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl Teacher for EnsembleTeacher {
    fn identity(&self) -> String {
        let ids: Vec<String> = self.members.iter().map(|m| m.identity()).collect();
        format!("ensemble[{}]", ids.join(","))
    }

    fn num_classes(&self) -> usize {
        self.members[0].num_classes()
    }

    fn input_dims(&self) -> Dims {
        self.members[0].input_dims()
    }

    fn forward(&self, batch: &[Image]) -> Result<Vec<f32>> {
        let mut acc = vec![0f64; batch.len() * self.num_classes()];
        for m in &self.members {
            for (a, v) in acc.iter_mut().zip(m.forward(batch)?) {
                *a += v as f64;
            }
        }
        let n = self.members.len() as f64;
        Ok(acc.into_iter().map(|v| (v / n) as f32).collect())
    }
}

/// Counts batch evaluations of the wrapped teacher.
pub struct CountingTeacher<T> {
    inner: T,
    calls: AtomicU64,
}

impl<T: Teacher> CountingTeacher<T> {
    pub fn new(inner: T) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: Teacher> Teacher for CountingTeacher<T> {
    fn identity(&self) -> String {
        self.inner.identity()
    }
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn input_dims(&self) -> Dims {
        self.inner.input_dims()
    }
    fn forward(&self, batch: &[Image]) -> Result<Vec<f32>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.forward(batch)
    }
}

/// Records every image the wrapped teacher is asked to evaluate.
pub struct SpyTeacher<T> {
    inner: T,
    seen: Mutex<Vec<Image>>,
}

impl<T: Teacher> SpyTeacher<T> {
    pub fn new(inner: T) -> Self {
        Self { inner, seen: Mutex::new(Vec::new()) }
    }

    pub fn seen(&self) -> Vec<Image> {
        self.seen.lock().expect("spy lock").clone()
    }
}

impl<T: Teacher> Teacher for SpyTeacher<T> {
    fn identity(&self) -> String {
        self.inner.identity()
    }
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn input_dims(&self) -> Dims {
        self.inner.input_dims()
    }
    fn forward(&self, batch: &[Image]) -> Result<Vec<f32>> {
        self.seen.lock().expect("spy lock").extend_from_slice(batch);
        self.inner.forward(batch)
    }
}

/// Top-K `(class, probability)` pairs sorted by descending probability, ties
/// by ascending class index. Values are the raw teacher outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseProbs {
    entries: Vec<(u32, f32)>,
}

impl SparseProbs {
    /// Wraps already-sorted entries (as decoded from a store).
    pub fn from_entries(entries: Vec<(u32, f32)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(u32, f32)] {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    /// Largest stored probability.
    pub fn confidence(&self) -> f64 {
        self.entries.first().map_or(0.0, |e| e.1 as f64)
    }

    pub fn mass(&self) -> f64 {
        self.entries.iter().map(|e| e.1 as f64).sum()
    }

    /// Ordering, uniqueness and range violations.
    pub fn violations(&self, num_classes: usize) -> Vec<String> {
        let mut v = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, &(c, p)) in self.entries.iter().enumerate() {
            if c as usize >= num_classes {
                v.push(format!("class index {c} >= num_classes {num_classes}"));
            }
            if !seen.insert(c) {
                v.push(format!("duplicate class index {c}"));
            }
            if !(p.is_finite() && (0.0..=1.0 + 1e-6).contains(&p)) {
                v.push(format!("probability {p} at entry {i} outside [0, 1]"));
            }
            if i > 0 {
                let (pc, pp) = self.entries[i - 1];
                if p > pp || (p == pp && c < pc) {
                    v.push(format!("entry {i} breaks descending order"));
                }
            }
        }
        if self.mass() > 1.0 + 1e-5 {
            v.push(format!("total mass {} exceeds 1", self.mass()));
        }
        v
    }
}

/// Keeps the `k` largest probabilities of `row`.
pub fn sparsify(row: &[f32], k: usize) -> Result<SparseProbs> {
    if k == 0 {
        return Err(Error::invalid("top-k with k = 0"));
    }
    if k > row.len() {
        return Err(Error::invalid(format!("k = {k} exceeds {} classes", row.len())));
    }
    let mut idx: Vec<u32> = (0..row.len() as u32).collect();
    idx.sort_by(|&a, &b| row[b as usize].total_cmp(&row[a as usize]).then(a.cmp(&b)));
    Ok(SparseProbs { entries: idx[..k].iter().map(|&i| (i, row[i as usize])).collect() })
}

/// Full distribution over `num_classes`, renormalised over the stored
/// support; classes outside the support get 0.
pub fn densify(sp: &SparseProbs, num_classes: usize) -> Result<Vec<f64>> {
    let mass = sp.mass();
    if sp.entries.is_empty() || mass <= 0.0 || !mass.is_finite() {
        return Err(Error::invalid("cannot densify an empty support"));
    }
    let mut row = vec![0f64; num_classes];
    for &(c, p) in &sp.entries {
        let slot = row.get_mut(c as usize).ok_or_else(|| Error::invalid(format!("class {c} >= {num_classes}")))?;
        *slot = p as f64 / mass;
    }
    Ok(row)
}

/// `max_j p_j`.
pub fn confidence(row: &[f64]) -> f64 {
    row.iter().copied().fold(0.0, f64::max)
}

/// `−Σ p_j ln p_j` in nats.
pub fn entropy(row: &[f64]) -> f64 {
    row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum::<f64>().max(0.0)
}

/// `−ln p_label`; `+∞` when the label has zero probability.
pub fn label_loss(row: &[f64], label: usize) -> f64 {
    match row.get(label) {
        Some(&p) if p > 0.0 => -p.ln(),
        _ => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk::DeskConfig;
    use crate::rng::SeededRng;

    struct Fixed(Vec<f32>);

    impl Teacher for Fixed {
        fn identity(&self) -> String {
            "fixed".into()
        }
        fn num_classes(&self) -> usize {
            self.0.len()
        }
        fn input_dims(&self) -> Dims {
            Dims::new(2, 2, 1)
        }
        fn forward(&self, batch: &[Image]) -> Result<Vec<f32>> {
            Ok(batch.iter().flat_map(|_| self.0.clone()).collect())
        }
    }

    #[test]
    fn ensemble_of_two_is_the_mean() {
        let e = EnsembleTeacher::new(vec![Box::new(Fixed(vec![1.0, 0.0])), Box::new(Fixed(vec![0.0, 1.0]))]).unwrap();
        let img = Image::filled(Dims::new(2, 2, 1), 0);
        assert_eq!(e.predict(&[img.clone(), img]).unwrap(), vec![0.5, 0.5, 0.5, 0.5]);
        let single = EnsembleTeacher::new(vec![Box::new(Fixed(vec![0.3, 0.7]))]).unwrap();
        assert_eq!(single.predict(&[Image::filled(Dims::new(2, 2, 1), 1)]).unwrap(), vec![0.3, 0.7]);
        assert!(EnsembleTeacher::new(vec![]).is_err());
    }

    #[test]
    fn predict_checks_dimensions() {
        let t = Fixed(vec![1.0, 0.0]);
        assert!(matches!(t.predict(&[Image::filled(Dims::new(3, 3, 1), 0)]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn oracle_recovers_generator_label() {
        let gen = DeskGenerator::new(DeskConfig::default()).unwrap();
        let t = OracleTeacher::new(gen.clone());
        let images: Vec<Image> = (0..10).map(|c| gen.mean_image(c, 0, 0)).collect();
        let probs = t.predict(&images).unwrap();
        for (c, row) in probs.chunks(10).enumerate() {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            assert_eq!(crate::nn::argmax(row), c);
        }
    }

    #[test]
    fn sparsify_examples() {
        let sp = sparsify(&[0.5, 0.3, 0.2], 2).unwrap();
        assert_eq!(sp.entries(), &[(0, 0.5), (1, 0.3)]);
        let uniform = sparsify(&[0.1; 10], 10).unwrap();
        assert!(uniform.entries().iter().all(|e| e.1 == 0.1));
        assert_eq!(uniform.entries().iter().map(|e| e.0).collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
        assert!(sparsify(&[1.0], 0).is_err());
        assert!(sparsify(&[1.0], 2).is_err());
    }

    #[test]
    fn sparsify_matches_full_sort() {
        let mut rng = SeededRng::new(3, 0);
        for _ in 0..200 {
            let n = 2 + rng.below(20);
            // Quantised values force ties.
            let row: Vec<f32> = (0..n).map(|_| rng.below(5) as f32 / 10.0).collect();
            let k = 1 + rng.below(n);
            let mut oracle: Vec<(u32, f32)> = row.iter().enumerate().map(|(i, &p)| (i as u32, p)).collect();
            oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            oracle.truncate(k);
            assert_eq!(sparsify(&row, k).unwrap().entries(), oracle.as_slice());
        }
    }

    #[test]
    fn densify_examples() {
        let sp = SparseProbs::from_entries(vec![(0, 0.5), (1, 0.3)]);
        let d = densify(&sp, 3).unwrap();
        assert!((d[0] - 0.625).abs() < 1e-7 && (d[1] - 0.375).abs() < 1e-7 && d[2] == 0.0);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(densify(&SparseProbs::from_entries(vec![]), 3).is_err());
        assert!(densify(&SparseProbs::from_entries(vec![(0, 0.0)]), 3).is_err());
    }

    #[test]
    fn metric_closed_forms() {
        let one_hot = [0.0, 1.0, 0.0];
        assert_eq!(confidence(&one_hot), 1.0);
        assert_eq!(entropy(&one_hot), 0.0);
        assert_eq!(label_loss(&one_hot, 1), 0.0);
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-12);
        assert!((label_loss(&[0.9, 0.1], 1) - std::f64::consts::LN_10).abs() < 1e-12);
        assert_eq!(label_loss(&[1.0, 0.0], 1), f64::INFINITY);
    }
}
