//! Training-time access to a reinforcement store: curriculum windows, epoch
//! plans, the reinforced batch source and partner libraries.

use std::fmt;
use std::str::FromStr;

use crate::augment::{
    cutmix_paste, erase, mixup_blend, replay, replay_geometric, AugmentationDescriptor, Partner, PartnerProvider,
};
use crate::dataset::{Image, LabeledDataset};
use crate::nn::{TrainBatch, TrainSource};
use crate::rng::{tags, SeededRng};
use crate::store::Store;
use crate::teacher::densify;
use crate::{Error, Result};

const WINDOW_EPS: f64 = 1e-9;

/// Named window endpoints of the 3×3 preset grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WindowPreset {
    Easy,
    All,
    Hard,
}

impl WindowPreset {
    pub const ALL: [WindowPreset; 3] = [WindowPreset::Easy, WindowPreset::All, WindowPreset::Hard];

    pub fn window(self) -> (f64, f64) {
        match self {
            WindowPreset::Easy => (0.0, 10.0),
            WindowPreset::All => (0.0, 100.0),
            WindowPreset::Hard => (90.0, 100.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowPreset::Easy => "easy",
            WindowPreset::All => "all",
            WindowPreset::Hard => "hard",
        }
    }
}

impl FromStr for WindowPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WindowPreset::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown window preset {s:?}")))
    }
}

/// Percentage window over confidence-sorted records that moves from `start`
/// to `end` along a half-cosine over `total_epochs`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumSchedule {
    pub start: (f64, f64),
    pub end: (f64, f64),
    pub total_epochs: usize,
}

impl CurriculumSchedule {
    pub fn new(start: (f64, f64), end: (f64, f64), total_epochs: usize) -> Result<Self> {
        for (a, b) in [start, end] {
            if !(0.0 <= a && a < b && b <= 100.0) {
                return Err(Error::invalid(format!("window ({a}, {b}) must satisfy 0 <= a < b <= 100")));
            }
        }
        Ok(Self { start, end, total_epochs })
    }

    pub fn preset(from: WindowPreset, to: WindowPreset, total_epochs: usize) -> Self {
        Self::new(from.window(), to.window(), total_epochs).expect("preset windows are valid")
    }

    /// Parses `from->to`, e.g. `easy->all`.
    pub fn parse_preset(s: &str, total_epochs: usize) -> Result<Self> {
        let (a, b) = s
            .split_once("->")
            .ok_or_else(|| Error::invalid(format!("curriculum {s:?} is not of the form from->to")))?;
        Ok(Self::preset(a.parse()?, b.parse()?, total_epochs))
    }

    /// `(a, b)` at epoch `t`, at least one percentage point wide.
    pub fn window_at(&self, t: usize) -> (f64, f64) {
        let (a, b) = if self.total_epochs == 0 {
            self.end
        } else {
            let s = t.min(self.total_epochs) as f64 / self.total_epochs as f64;
            let w = (1.0 - (std::f64::consts::PI * s).cos()) / 2.0;
            (self.start.0 + (self.end.0 - self.start.0) * w, self.start.1 + (self.end.1 - self.start.1) * w)
        };
        if b - a >= 1.0 {
            (a, b)
        } else {
            let b = (a + 1.0).min(100.0);
            (b - 1.0, b)
        }
    }
}

impl fmt::Display for CurriculumSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {})->({}, {}) over {} epochs",
            self.start.0, self.start.1, self.end.0, self.end.1, self.total_epochs
        )
    }
}

/// Record index range `[lo, hi)` of a percentage window over `n` records.
/// An empty range is widened to one index.
pub fn index_window(n: usize, window: (f64, f64)) -> (usize, usize) {
    let nf = n as f64;
    let lo = ((window.0 * nf / 100.0 - WINDOW_EPS).ceil().max(0.0) as usize).min(n);
    let hi = ((window.1 * nf / 100.0 + WINDOW_EPS).floor().max(0.0) as usize).min(n);
    if hi > lo {
        return (lo, hi);
    }
    log::debug!("window {window:?} over {n} records is empty; widening by one index");
    if lo < n {
        (lo, lo + 1)
    } else {
        (n - 1, n)
    }
}

/// One record index per image for `epoch`, uniform inside the window.
pub fn epoch_plan(store: &Store, schedule: Option<&CurriculumSchedule>, epoch: usize, seed: u64) -> Vec<usize> {
    let window = schedule.map_or((0.0, 100.0), |s| s.window_at(epoch));
    let (lo, hi) = index_window(store.samples_per_image(), window);
    let mut rng = SeededRng::derive(seed, &[tags::EPOCH, epoch as u64, 0]);
    (0..store.num_images()).map(|_| lo + rng.below(hi - lo)).collect()
}

/// Mixes pre-augmented `base` with `partner` as `desc` says, then erases.
fn finish_mix(desc: &AugmentationDescriptor, base: &Image, partner: &Image) -> Result<Image> {
    let mut out = if desc.mixup.is_applied() {
        mixup_blend(base, partner, desc.mixup.lambda)?
    } else if desc.cutmix.is_applied() {
        let mut out = base.clone();
        cutmix_paste(&mut out, partner, desc.cutmix.rect)?;
        out
    } else {
        base.clone()
    };
    if desc.erase_applied() {
        erase(&mut out, desc.erase);
    }
    Ok(out)
}

/// Batches of replayed stored reinforcements with their stored teacher
/// targets. Never calls a teacher.
pub struct ReinforcedLoader<'a> {
    store: &'a Store,
    dataset: &'a LabeledDataset,
    partners: &'a dyn PartnerProvider,
    schedule: Option<CurriculumSchedule>,
    seed: u64,
    target_hw: (usize, usize),
    workers: usize,
    plan: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> ReinforcedLoader<'a> {
    pub fn new(store: &'a Store, dataset: &'a LabeledDataset, seed: u64, target_hw: (usize, usize)) -> Result<Self> {
        let h = store.header();
        if h.num_images != dataset.len() as u64 {
            return Err(Error::invalid(format!("store covers {} images, dataset has {}", h.num_images, dataset.len())));
        }
        if h.num_classes as usize != dataset.num_classes() {
            return Err(Error::invalid(format!(
                "store has {} classes, dataset has {}",
                h.num_classes,
                dataset.num_classes()
            )));
        }
        Ok(Self {
            store,
            dataset,
            partners: dataset,
            schedule: None,
            seed,
            target_hw,
            workers: 1,
            plan: Vec::new(),
            order: Vec::new(),
            pos: 0,
        })
    }

    pub fn with_schedule(mut self, schedule: CurriculumSchedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    /// Resolves mix partners through `partners` instead of the dataset.
    pub fn with_partners(mut self, partners: &'a dyn PartnerProvider) -> Self {
        self.partners = partners;
        self
    }

    /// Decode threads per batch; output does not depend on this.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    /// Record index chosen for each image in the current epoch.
    pub fn plan(&self) -> &[usize] {
        &self.plan
    }

    fn sample(&self, id: usize) -> Result<(Image, Vec<f32>)> {
        let rec = self.store.record(id as u64, self.plan[id])?;
        let img = replay(&rec.descriptor, self.dataset.image(id), id as u64, self.partners, self.target_hw)?;
        let target = densify(&rec.probs, self.dataset.num_classes())?.into_iter().map(|p| p as f32).collect();
        Ok((img, target))
    }
}

impl TrainSource for ReinforcedLoader<'_> {
    fn len(&self) -> usize {
        self.dataset.len()
    }

    fn num_classes(&self) -> usize {
        self.dataset.num_classes()
    }

    fn reset(&mut self, epoch: usize) -> Result<()> {
        self.plan = epoch_plan(self.store, self.schedule.as_ref(), epoch, self.seed);
        let mut rng = SeededRng::derive(self.seed, &[tags::EPOCH, epoch as u64, 1]);
        self.order = rng.permutation(self.dataset.len());
        self.pos = 0;
        Ok(())
    }

    fn next_batch(&mut self, max: usize) -> Result<Option<TrainBatch>> {
        if self.pos >= self.order.len() {
            return Ok(None);
        }
        let end = (self.pos + max).min(self.order.len());
        let ids = self.order[self.pos..end].to_vec();
        self.pos = end;
        let samples: Vec<Result<(Image, Vec<f32>)>> = if self.workers <= 1 || ids.len() < 2 {
            ids.iter().map(|&id| self.sample(id)).collect()
        } else {
            let chunk = ids.len().div_ceil(self.workers);
            let this = &*self;
            std::thread::scope(|s| {
                let handles: Vec<_> = ids
                    .chunks(chunk)
                    .map(|part| s.spawn(move || part.iter().map(|&id| this.sample(id)).collect::<Vec<_>>()))
                    .collect();
                handles.into_iter().flat_map(|h| h.join().expect("decode worker panicked")).collect()
            })
        };
        let mut images = Vec::with_capacity(ids.len());
        let mut targets = Vec::with_capacity(ids.len() * self.dataset.num_classes());
        for s in samples {
            let (img, t) = s?;
            images.push(img);
            targets.extend(t);
        }
        let labels = ids.iter().map(|&i| self.dataset.labels()[i]).collect();
        Ok(Some(TrainBatch { image_ids: ids, images, targets, labels }))
    }
}

/// A fixed in-memory set of pre-augmented partner images. A requested
/// partner id is replaced by the nearest library id (modular distance,
/// ties to the smaller id).
#[derive(Clone, Debug)]
pub struct MixLibrary {
    num_images: usize,
    ids: Vec<u32>,
    images: Vec<Image>,
}

impl MixLibrary {
    /// Picks `size` images and pre-replays each with the crop, flip and RA
    /// ops of its first stored record.
    pub fn build(
        store: &Store,
        dataset: &LabeledDataset,
        size: usize,
        seed: u64,
        target_hw: (usize, usize),
    ) -> Result<Self> {
        let n = dataset.len();
        if size == 0 || size > n {
            return Err(Error::invalid(format!("library size {size} outside [1, {n}]")));
        }
        let mut rng = SeededRng::derive(seed, &[tags::LIBRARY]);
        let mut ids: Vec<u32> = rng.permutation(n)[..size].iter().map(|&i| i as u32).collect();
        ids.sort_unstable();
        let images = ids
            .iter()
            .map(|&id| {
                let rec = store.record(id as u64, 0)?;
                replay_geometric(&rec.descriptor, dataset.image(id as usize), target_hw)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { num_images: n, ids, images })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Library slot standing in for `id`.
    pub fn resolve(&self, id: u32) -> usize {
        let n = self.num_images as i64;
        let dist = |a: u32| {
            let d = (a as i64 - id as i64).rem_euclid(n);
            d.min(n - d)
        };
        (0..self.ids.len()).min_by_key(|&s| (dist(self.ids[s]), self.ids[s])).expect("library is non-empty")
    }
}

impl PartnerProvider for MixLibrary {
    fn partner(&self, id: u32) -> Option<Partner<'_>> {
        if id as usize >= self.num_images {
            return None;
        }
        Some(Partner::Prepared(&self.images[self.resolve(id)]))
    }
}

/// Expands pairs of descriptors sharing one geometric chain and partner into
/// two outputs each, loading source and partner once per pair. Pairs come
/// from [`AugmentationDescriptor::make_double_mix`].
pub fn double_mix_expand(
    pairs: &[(AugmentationDescriptor, AugmentationDescriptor)],
    image_ids: &[u64],
    dataset: &LabeledDataset,
    partners: &dyn PartnerProvider,
    target_hw: (usize, usize),
) -> Result<Vec<Image>> {
    if pairs.len() != image_ids.len() {
        return Err(Error::invalid("one image id per descriptor pair is required"));
    }
    let mut out = Vec::with_capacity(2 * pairs.len());
    for ((first, second), &id) in pairs.iter().zip(image_ids) {
        let pid = match (first.mix_partner(), second.mix_partner()) {
            (Some(a), Some(b)) if a == b => a,
            _ => return Err(Error::invalid(format!("image {id}: descriptor pair lacks a shared mix partner"))),
        };
        if first.crop != second.crop
            || first.flip != second.flip
            || first.ra != second.ra
            || first.mixup.is_applied() != second.mixup.is_applied()
        {
            return Err(Error::invalid(format!("image {id}: descriptor pair differs outside the mixing coefficients")));
        }
        let src =
            dataset.images().get(id as usize).ok_or_else(|| Error::invalid(format!("image {id} not in dataset")))?;
        let base = replay_geometric(first, src, target_hw)?;
        let partner = crate::augment::prepare_partner(first, id, pid, partners, target_hw)?;
        out.push(finish_mix(first, &base, &partner)?);
        out.push(finish_mix(second, &base, &partner)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_endpoints_and_midpoint() {
        let s = CurriculumSchedule::preset(WindowPreset::Easy, WindowPreset::All, 100);
        assert_eq!(s.window_at(0), (0.0, 10.0));
        assert_eq!(s.window_at(100), (0.0, 100.0));
        let (_, b) = s.window_at(50);
        assert!((b - 55.0).abs() < 1e-9);
        let z = CurriculumSchedule::preset(WindowPreset::Hard, WindowPreset::Easy, 0);
        assert_eq!(z.window_at(7), (0.0, 10.0));
    }

    #[test]
    fn narrow_windows_are_widened() {
        let s = CurriculumSchedule::new((99.5, 100.0), (99.5, 100.0), 10).unwrap();
        assert_eq!(s.window_at(3), (99.0, 100.0));
        assert_eq!(index_window(100, (90.0, 100.0)), (90, 100));
        assert_eq!(index_window(4, (0.0, 10.0)), (0, 1));
        assert_eq!(index_window(4, (95.0, 100.0)), (3, 4));
        assert_eq!(index_window(1, (0.0, 100.0)), (0, 1));
    }

    #[test]
    fn parse_presets() {
        let s = CurriculumSchedule::parse_preset("hard->all", 5).unwrap();
        assert_eq!(s.start, (90.0, 100.0));
        assert!(CurriculumSchedule::parse_preset("hard-all", 5).is_err());
        assert!(CurriculumSchedule::new((10.0, 10.0), (0.0, 100.0), 1).is_err());
    }

    #[test]
    fn library_resolves_by_modular_distance() {
        let lib = MixLibrary { num_images: 10, ids: vec![1, 5], images: vec![] };
        assert_eq!(lib.resolve(9), 0);
        assert_eq!(lib.resolve(3), 0);
        assert_eq!(lib.resolve(4), 1);
        assert_eq!(lib.resolve(7), 1);
    }
}
