use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use super::loss::{cross_entropy_smoothed, smoothed_one_hot, softmax_kl};
use super::metrics::{ece, predictions};
use super::model::{images_to_input, Model};
use super::optim::{cosine_lr, Sgd};
use crate::augment::{crop_resize, replay, sample_descriptor, AugmentationPolicy, Rect};
use crate::dataset::{Image, LabeledDataset};
use crate::rng::{tags, SeededRng};
use crate::teacher::Teacher;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Objective {
    /// Hard labels with label smoothing.
    Erm,
    /// Teacher evaluated online on the augmented image.
    OnlineKdImitation,
    /// Teacher evaluated online on the clean image.
    OnlineKdInvariance,
    /// Stored sparse targets replayed from a reinforcement store.
    Reinforced,
}

impl Objective {
    pub const ALL: [Objective; 4] =
        [Objective::Erm, Objective::OnlineKdImitation, Objective::OnlineKdInvariance, Objective::Reinforced];

    pub fn is_distillation(self) -> bool {
        self != Objective::Erm
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Erm => "erm",
            Objective::OnlineKdImitation => "kd-imitation",
            Objective::OnlineKdInvariance => "kd-invariance",
            Objective::Reinforced => "reinforced",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown objective {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Used by ERM only.
    pub label_smoothing: f64,
    pub objective: Objective,
    pub seed: u64,
    pub ece_bins: usize,
}

impl TrainConfig {
    pub fn new(objective: Objective) -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            label_smoothing: 0.1,
            objective,
            seed: 0,
            ece_bins: 15,
        }
    }

    /// Distillation objectives use a tenth of the weight decay.
    pub fn effective_weight_decay(&self) -> f64 {
        if self.objective.is_distillation() {
            self.weight_decay / 10.0
        } else {
            self.weight_decay
        }
    }

    /// Distillation objectives never mix in label smoothing.
    pub fn effective_label_smoothing(&self) -> f64 {
        if self.objective.is_distillation() {
            0.0
        } else {
            self.label_smoothing
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::invalid("momentum must be in [0, 1) and weight decay >= 0"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("label smoothing must be in [0, 1)"));
        }
        Ok(())
    }
}

/// One mini-batch: student inputs, dense target rows and original labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub image_ids: Vec<usize>,
    pub images: Vec<Image>,
    /// `len × num_classes`, each row a distribution.
    pub targets: Vec<f32>,
    pub labels: Vec<u16>,
}

/// Epoch-structured supplier of training batches.
pub trait TrainSource {
    /// Samples per epoch.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn num_classes(&self) -> usize;

    /// Prepares epoch `epoch`; the next batches cover it.
    fn reset(&mut self, epoch: usize) -> Result<()>;

    /// Up to `max` samples, `None` once the epoch is exhausted.
    fn next_batch(&mut self, max: usize) -> Result<Option<TrainBatch>>;

    /// Teacher batch evaluations performed by this source so far.
    fn teacher_calls(&self) -> u64 {
        0
    }
}

/// Where the targets of an [`AugmentedSource`] come from.
#[derive(Clone, Copy)]
pub enum TargetMode<'a> {
    HardLabels { smoothing: f32 },
    Imitation(&'a dyn Teacher),
    Invariance(&'a dyn Teacher),
}

/// Online augmentation: every epoch draws fresh descriptors from
/// `hash(seed, epoch, image)` streams.
pub struct AugmentedSource<'a> {
    dataset: &'a LabeledDataset,
    policy: AugmentationPolicy,
    mode: TargetMode<'a>,
    seed: u64,
    target_hw: (usize, usize),
    epoch: usize,
    order: Vec<usize>,
    pos: usize,
    teacher_calls: u64,
}

impl<'a> AugmentedSource<'a> {
    pub fn new(
        dataset: &'a LabeledDataset,
        policy: AugmentationPolicy,
        mode: TargetMode<'a>,
        seed: u64,
        target_hw: (usize, usize),
    ) -> Result<Self> {
        policy.validate()?;
        if let TargetMode::Imitation(t) | TargetMode::Invariance(t) = mode {
            if t.num_classes() != dataset.num_classes() {
                return Err(Error::invalid("teacher and dataset disagree on the class count"));
            }
        }
        Ok(Self { dataset, policy, mode, seed, target_hw, epoch: 0, order: Vec::new(), pos: 0, teacher_calls: 0 })
    }

    fn teacher_view(t: &dyn Teacher, images: Vec<Image>) -> Vec<Image> {
        let d = t.input_dims();
        images
            .into_iter()
            .map(|im| if im.dims() == d { im } else { crop_resize(&im, Rect::FULL, d.height, d.width) })
            .collect()
    }
}

impl TrainSource for AugmentedSource<'_> {
    fn len(&self) -> usize {
        self.dataset.len()
    }

    fn num_classes(&self) -> usize {
        self.dataset.num_classes()
    }

    fn reset(&mut self, epoch: usize) -> Result<()> {
        self.epoch = epoch;
        self.pos = 0;
        let mut rng = SeededRng::derive(self.seed, &[tags::EPOCH, epoch as u64]);
        self.order = rng.permutation(self.dataset.len());
        Ok(())
    }

    fn next_batch(&mut self, max: usize) -> Result<Option<TrainBatch>> {
        if self.pos >= self.order.len() {
            return Ok(None);
        }
        let end = (self.pos + max).min(self.order.len());
        let ids = self.order[self.pos..end].to_vec();
        self.pos = end;
        let k = self.dataset.num_classes();
        let n = self.dataset.len();
        let mut images = Vec::with_capacity(ids.len());
        let mut weights = Vec::with_capacity(ids.len());
        for &id in &ids {
            let mut rng = SeededRng::derive(self.seed, &[tags::ONLINE, self.epoch as u64, id as u64]);
            let desc = sample_descriptor(&self.policy, self.dataset.dims(), id as u64, n, &mut rng)?;
            images.push(replay(&desc, self.dataset.image(id), id as u64, self.dataset, self.target_hw)?);
            weights.push((desc.primary_weight(self.target_hw.1, self.target_hw.0), desc.mix_partner()));
        }
        let targets = match self.mode {
            TargetMode::HardLabels { smoothing } => {
                let mut t = Vec::with_capacity(ids.len() * k);
                for (&id, &(w, partner)) in ids.iter().zip(&weights) {
                    let mut row = smoothed_one_hot(self.dataset.label(id), k, smoothing);
                    if let Some(p) = partner {
                        let other = smoothed_one_hot(self.dataset.label(p as usize), k, smoothing);
                        for (a, b) in row.iter_mut().zip(other) {
                            *a = w * *a + (1.0 - w) * b;
                        }
                    }
                    t.extend(row);
                }
                t
            }
            TargetMode::Imitation(teacher) => {
                self.teacher_calls += 1;
                teacher.predict(&Self::teacher_view(teacher, images.clone()))?
            }
            TargetMode::Invariance(teacher) => {
                self.teacher_calls += 1;
                let clean = ids.iter().map(|&id| self.dataset.image(id).clone()).collect();
                teacher.predict(&Self::teacher_view(teacher, clean))?
            }
        };
        let labels = ids.iter().map(|&id| self.dataset.labels()[id]).collect();
        Ok(Some(TrainBatch { image_ids: ids, images, targets, labels }))
    }

    fn teacher_calls(&self) -> u64 {
        self.teacher_calls
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: Option<f64>,
    pub ece: Option<f64>,
    pub iterations: u64,
    /// Wall-clock spent in batch assembly plus optimisation, excluding
    /// validation.
    pub train_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub objective: Option<Objective>,
    pub epochs: Vec<EpochRecord>,
    pub total_steps: u64,
    pub teacher_calls: u64,
}

impl TrainHistory {
    pub fn final_val_acc(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_acc)
    }

    pub fn final_ece(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.ece)
    }

    /// Mean wall-clock seconds per training iteration.
    pub fn mean_iteration_seconds(&self) -> f64 {
        let secs: f64 = self.epochs.iter().map(|e| e.train_seconds).sum();
        let iters: u64 = self.epochs.iter().map(|e| e.iterations).sum();
        if iters == 0 {
            0.0
        } else {
            secs / iters as f64
        }
    }

    /// `epoch,loss,val_acc,ece` rows; missing values are left empty.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut s = String::from("epoch,loss,val_acc,ece\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:.6},{},{}\n", e.epoch, e.loss, opt(e.val_acc), opt(e.ece)));
        }
        s
    }
}

/// Runs `cfg.epochs` epochs of SGD over `source`, evaluating on `val` after
/// every epoch when given.
pub fn train(
    model: &mut Model,
    source: &mut dyn TrainSource,
    val: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if source.num_classes() != model.num_classes() {
        return Err(Error::invalid("source and model disagree on the class count"));
    }
    let k = model.num_classes();
    let steps_per_epoch = source.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let mut opt = Sgd::new(model, cfg.momentum as f32, cfg.effective_weight_decay() as f32);
    let mut history = TrainHistory { objective: Some(cfg.objective), ..Default::default() };
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        source.reset(epoch)?;
        let (mut loss_sum, mut seen, mut iterations) = (0.0, 0usize, 0u64);
        while let Some(batch) = source.next_batch(cfg.batch_size)? {
            let b = batch.images.len();
            let fwd = model.forward(&images_to_input(&batch.images), b)?;
            let (loss, grad) = if cfg.objective == Objective::Erm {
                cross_entropy_smoothed(fwd.logits(), &batch.targets, k)
            } else {
                softmax_kl(fwd.logits(), &batch.targets, k)
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let grads = model.backward(&fwd, &grad);
            opt.step(model, &grads, cosine_lr(cfg.base_lr, step, total_steps) as f32);
            loss_sum += loss * b as f64;
            seen += b;
            iterations += 1;
            step += 1;
        }
        let train_seconds = start.elapsed().as_secs_f64();
        let (val_acc, val_ece) = match val {
            Some(v) if !v.is_empty() => {
                let p = predictions(model, v)?;
                (Some(p.accuracy()), Some(ece(&p.confidences, &p.correct, cfg.ece_bins)?))
            }
            _ => (None, None),
        };
        let rec = EpochRecord {
            epoch,
            loss: if seen > 0 { loss_sum / seen as f64 } else { 0.0 },
            val_acc,
            ece: val_ece,
            iterations,
            train_seconds,
        };
        log::debug!(
            "{} epoch {epoch}: loss {:.4} val_acc {:?} ({iterations} it, {train_seconds:.2}s)",
            cfg.objective,
            rec.loss,
            rec.val_acc
        );
        history.epochs.push(rec);
    }
    history.total_steps = step;
    history.teacher_calls = source.teacher_calls();
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Variant;
    use crate::desk::{DeskConfig, DeskGenerator};
    use crate::nn::model::Arch;

    fn loss_at(model: &Model, input: &[f32], targets: &[f32], b: usize) -> f64 {
        let fwd = model.forward(input, b).unwrap();
        softmax_kl(fwd.logits(), targets, model.num_classes()).0
    }

    #[test]
    fn gradients_match_finite_differences() {
        let gen = DeskGenerator::new(DeskConfig::default()).unwrap();
        let ds = gen.dataset(0, 3).unwrap();
        for arch in [Arch::Linear, Arch::Mlp { hidden: 6 }, Arch::StudentS, Arch::TeacherL, Arch::ConvPool] {
            let mut model = Model::new(arch, ds.dims(), 10, 5).unwrap();
            let input = images_to_input(ds.images());
            let targets: Vec<f32> = (0..3).flat_map(|i| smoothed_one_hot(ds.label(i), 10, 0.3)).collect();
            let fwd = model.forward(&input, 3).unwrap();
            let (_, g) = softmax_kl(fwd.logits(), &targets, 10);
            let grads = model.backward(&fwd, &g);
            let mut rng = SeededRng::new(1, 1);
            for (t, grad) in grads.iter().enumerate() {
                for _ in 0..4 {
                    let i = rng.below(model.params()[t].data.len());
                    let orig = model.params()[t].data[i];
                    let h = 1e-3f32;
                    model.params_mut()[t].data[i] = orig + h;
                    let up = loss_at(&model, &input, &targets, 3);
                    model.params_mut()[t].data[i] = orig - h;
                    let down = loss_at(&model, &input, &targets, 3);
                    model.params_mut()[t].data[i] = orig;
                    let numeric = (up - down) / (2.0 * h as f64);
                    let analytic = grad[i] as f64;
                    assert!(
                        (numeric - analytic).abs() <= 2e-3 + 0.05 * numeric.abs().max(analytic.abs()),
                        "{arch} tensor {t}[{i}]: numeric {numeric} analytic {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn erm_learns_the_desk_task() {
        let gen = DeskGenerator::new(DeskConfig::default()).unwrap();
        let train_ds = gen.dataset(0, 600).unwrap();
        let val = gen.dataset(10_000, 300).unwrap();
        let mut model = Model::new(Arch::StudentS, train_ds.dims(), 10, 3).unwrap();
        let mut cfg = TrainConfig::new(Objective::Erm);
        cfg.epochs = 4;
        cfg.batch_size = 32;
        let policy = AugmentationPolicy::degenerate(Variant::Rrc);
        let mode = TargetMode::HardLabels { smoothing: 0.1 };
        let mut src = AugmentedSource::new(&train_ds, policy, mode, 1, (16, 16)).unwrap();
        let hist = train(&mut model, &mut src, Some(&val), &cfg).unwrap();
        assert_eq!(hist.epochs.len(), 4);
        assert_eq!(hist.total_steps, 4 * 19);
        assert!(hist.final_val_acc().unwrap() > 0.3, "{:?}", hist.final_val_acc());
        assert!(hist.epochs[3].loss < hist.epochs[0].loss);
        assert!(hist.to_csv().starts_with("epoch,loss,val_acc,ece\n"));
    }

    #[test]
    fn weight_decay_and_smoothing_follow_the_objective() {
        let erm = TrainConfig::new(Objective::Erm);
        let kd = TrainConfig::new(Objective::Reinforced);
        assert_eq!(kd.effective_weight_decay(), erm.weight_decay / 10.0);
        assert_eq!(kd.effective_label_smoothing(), 0.0);
        assert_eq!(erm.effective_label_smoothing(), 0.1);
        for o in Objective::ALL {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
    }

    #[test]
    fn same_seed_gives_identical_epochs() {
        let gen = DeskGenerator::new(DeskConfig::default()).unwrap();
        let ds = gen.dataset(0, 40).unwrap();
        let policy = AugmentationPolicy::new(Variant::RrcMixingRaRe);
        let mode = TargetMode::HardLabels { smoothing: 0.0 };
        let mut a = AugmentedSource::new(&ds, policy.clone(), mode, 9, (16, 16)).unwrap();
        let mut b = AugmentedSource::new(&ds, policy, mode, 9, (16, 16)).unwrap();
        a.reset(2).unwrap();
        b.reset(2).unwrap();
        assert_eq!(a.next_batch(16).unwrap(), b.next_batch(16).unwrap());
        let batch = a.next_batch(100).unwrap().unwrap();
        assert_eq!(batch.images.len(), 24);
        for row in batch.targets.chunks(10) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
        assert!(a.next_batch(16).unwrap().is_none());
    }
}
