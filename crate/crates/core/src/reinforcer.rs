//! The one-time reinforcement pass: augment, ask the teacher, sparsify,
//! select, sort and store.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Cursor, Seek, Write};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::Serialize;

use crate::augment::{replay, sample_descriptor, AugmentationDescriptor, AugmentationPolicy};
use crate::dataset::LabeledDataset;
use crate::rng::{tags, SeededRng};
use crate::store::{record_size, ReinforcementRecord, Store, StoreHeader, StoreWriter};
use crate::teacher::{confidence, densify, entropy, label_loss, sparsify, SparseProbs, Teacher};
use crate::{Error, Result};

const KMEANS_ITERATIONS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Random,
    MinConfidence,
    MaxEntropy,
    MaxLoss,
    KMeansDiverse,
}

impl Selection {
    pub const ALL: [Selection; 5] = [
        Selection::Random,
        Selection::MinConfidence,
        Selection::MaxEntropy,
        Selection::MaxLoss,
        Selection::KMeansDiverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Selection::Random => "random",
            Selection::MinConfidence => "min_confidence",
            Selection::MaxEntropy => "max_entropy",
            Selection::MaxLoss => "max_loss",
            Selection::KMeansDiverse => "kmeans_diverse",
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Selection::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown selection {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReinforceJob {
    pub policy: AugmentationPolicy,
    /// Records kept per image (N).
    pub samples_per_image: usize,
    /// Candidates drawn per kept record (M).
    pub candidate_multiplier: usize,
    pub selection: Selection,
    pub top_k: usize,
    pub seed: u64,
    pub workers: usize,
}

impl ReinforceJob {
    pub fn new(policy: AugmentationPolicy, samples_per_image: usize) -> Self {
        Self {
            policy,
            samples_per_image,
            candidate_multiplier: 1,
            selection: Selection::Random,
            top_k: 10,
            seed: 0,
            workers: 1,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let mut errs = Vec::new();
        if self.samples_per_image == 0 || self.samples_per_image > u16::MAX as usize {
            errs.push(format!("samples_per_image must be in [1, 65535], got {}", self.samples_per_image));
        }
        if self.candidate_multiplier == 0 {
            errs.push("candidate_multiplier must be at least 1".to_string());
        }
        if self.selection == Selection::KMeansDiverse && self.candidate_multiplier < 2 {
            errs.push("kmeans_diverse needs candidate_multiplier >= 2".to_string());
        }
        let max_k = num_classes.min(u8::MAX as usize);
        if self.top_k == 0 || self.top_k > max_k {
            errs.push(format!("top_k must be in [1, {max_k}], got {}", self.top_k));
        }
        if self.workers == 0 {
            errs.push("workers must be at least 1".to_string());
        }
        if let Err(e) = self.policy.validate() {
            errs.push(e.to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// A drawn augmentation with the teacher's output on it.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub descriptor: AugmentationDescriptor,
    pub probs: SparseProbs,
    /// Full teacher row, used for the selection metrics.
    pub teacher_row: Vec<f64>,
}

impl Candidate {
    pub fn confidence(&self) -> f64 {
        confidence(&self.teacher_row)
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.teacher_row)
    }

    pub fn loss(&self, label: usize) -> f64 {
        label_loss(&self.teacher_row, label)
    }
}

/// Picks `n` of `cands`, returning candidate indices in ascending order.
pub fn select_subset(
    cands: &[Candidate],
    strategy: Selection,
    n: usize,
    label: usize,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    if n == 0 || n > cands.len() {
        return Err(Error::invalid(format!("cannot select {n} of {} candidates", cands.len())));
    }
    if n == cands.len() {
        return Ok((0..n).collect());
    }
    let extreme = |score: &dyn Fn(&Candidate) -> f64| {
        let mut idx: Vec<usize> = (0..cands.len()).collect();
        // Highest score first, ties by candidate index.
        idx.sort_by(|&a, &b| score(&cands[b]).total_cmp(&score(&cands[a])).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    };
    let mut out = match strategy {
        Selection::Random => {
            let mut p = rng.permutation(cands.len());
            p.truncate(n);
            p
        }
        Selection::MinConfidence => extreme(&|c| -c.confidence()),
        Selection::MaxEntropy => extreme(&|c| c.entropy()),
        Selection::MaxLoss => extreme(&|c| c.loss(label)),
        Selection::KMeansDiverse => {
            let k = cands[0].teacher_row.len();
            let points = cands.iter().map(|c| densify(&c.probs, k)).collect::<Result<Vec<_>>>()?;
            kmeans_select(&points, n, rng)
        }
    };
    out.sort_unstable();
    Ok(out)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = dist2(point, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// One point per k-means cluster: the unused member nearest to its centroid.
/// A cluster with no unused member falls back to the nearest unused point
/// overall.
pub fn kmeans_select(points: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> Vec<usize> {
    let m = points.len();
    let (centroids, assign) = kmeans(points, k, rng);
    let mut used = vec![false; m];
    let mut out = Vec::with_capacity(k);
    for (c, cen) in centroids.iter().enumerate() {
        let pick = |members_only: bool| {
            (0..m)
                .filter(|&i| !used[i] && (!members_only || assign[i] == c))
                .min_by(|&a, &b| dist2(&points[a], cen).total_cmp(&dist2(&points[b], cen)).then(a.cmp(&b)))
        };
        let i = pick(true).or_else(|| pick(false)).expect("k <= number of points");
        used[i] = true;
        out.push(i);
    }
    out
}

/// k-means++ seeding followed by at most 50 Lloyd iterations. An empty
/// cluster keeps its previous centroid. Returns centroids and assignments.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let m = points.len();
    assert!(k >= 1 && k <= m, "k-means with k = {k} on {m} points");
    let mut centroids = vec![points[rng.below(m)].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[nearest(p, &centroids)])).collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut pick = d.iter().rposition(|&x| x > 0.0).unwrap_or(m - 1);
            for (i, &di) in d.iter().enumerate() {
                if di > 0.0 && target < di {
                    pick = i;
                    break;
                }
                target -= di;
            }
            pick
        } else {
            rng.below(m)
        };
        centroids.push(points[next].clone());
    }
    let mut assign = vec![usize::MAX; m];
    for _ in 0..KMEANS_ITERATIONS {
        let new: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if new == assign {
            break;
        }
        assign = new;
        for (c, cen) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = (0..m).filter(|&i| assign[i] == c).map(|i| &points[i]).collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in cen.iter_mut().enumerate() {
                *v = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    (centroids, assign)
}

/// Monotone counters shared with a running job.
#[derive(Debug)]
pub struct ReinforceProgress {
    started: Instant,
    total_images: AtomicU64,
    images_done: AtomicU64,
    records_written: AtomicU64,
    bytes_written: AtomicU64,
}

impl Default for ReinforceProgress {
    fn default() -> Self {
        Self {
            started: Instant::now(),
            total_images: AtomicU64::new(0),
            images_done: AtomicU64::new(0),
            records_written: AtomicU64::new(0),
            bytes_written: AtomicU64::new(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProgressSnapshot {
    pub total_images: u64,
    pub images_done: u64,
    pub records_written: u64,
    pub bytes_written: u64,
    pub elapsed_secs: f64,
    /// Images per second.
    pub throughput: f64,
    pub eta_secs: Option<f64>,
}

impl ReinforceProgress {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> ProgressSnapshot {
        let total = self.total_images.load(Ordering::SeqCst);
        let done = self.images_done.load(Ordering::SeqCst);
        let elapsed = self.started.elapsed().as_secs_f64();
        let throughput = if elapsed > 0.0 { done as f64 / elapsed } else { 0.0 };
        ProgressSnapshot {
            total_images: total,
            images_done: done,
            records_written: self.records_written.load(Ordering::SeqCst),
            bytes_written: self.bytes_written.load(Ordering::SeqCst),
            elapsed_secs: elapsed,
            throughput,
            eta_secs: (throughput > 0.0).then(|| total.saturating_sub(done) as f64 / throughput),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReinforceStats {
    pub images: u64,
    pub records: u64,
    pub bytes: u64,
    pub record_size: usize,
    pub wall_secs: f64,
    /// Images per second.
    pub throughput: f64,
    pub teacher_calls: u64,
    pub mean_stored_confidence: f64,
}

/// Sorted record group of image `i`, deterministic in `(job.seed, i)`.
/// All candidates go to the teacher as one batch.
pub fn reinforce_image(
    dataset: &LabeledDataset,
    teacher: &dyn Teacher,
    job: &ReinforceJob,
    i: usize,
) -> Result<Vec<ReinforcementRecord>> {
    let td = teacher.input_dims();
    let hw = (td.height, td.width);
    let m = job.samples_per_image * job.candidate_multiplier;
    let src = dataset.image(i);
    let mut descs = Vec::with_capacity(m);
    let mut images = Vec::with_capacity(m);
    for c in 0..m {
        let mut rng = SeededRng::derive(job.seed, &[tags::AUGMENT, i as u64, c as u64]);
        let d = sample_descriptor(&job.policy, dataset.dims(), i as u64, dataset.len(), &mut rng)?;
        images.push(replay(&d, src, i as u64, dataset, hw)?);
        descs.push(d);
    }
    let k = teacher.num_classes();
    let teacher_err = |e: Error| Error::Teacher { image: i as u64, source: Box::new(e) };
    let probs = teacher.predict(&images).map_err(teacher_err)?;
    if probs.len() != m * k {
        return Err(teacher_err(Error::invalid(format!("teacher returned {} values for {m}×{k}", probs.len()))));
    }
    let cands = descs
        .into_iter()
        .zip(probs.chunks(k))
        .map(|(descriptor, row)| {
            Ok(Candidate {
                descriptor,
                probs: sparsify(row, job.top_k)?,
                teacher_row: row.iter().map(|&p| p as f64).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = SeededRng::derive(job.seed, &[tags::SELECT, i as u64]);
    let mut chosen = select_subset(&cands, job.selection, job.samples_per_image, dataset.label(i), &mut rng)?;
    // Stable sort: equal confidences keep candidate order.
    chosen.sort_by(|&a, &b| cands[b].probs.confidence().total_cmp(&cands[a].probs.confidence()));
    Ok(chosen
        .into_iter()
        .map(|c| ReinforcementRecord { probs: cands[c].probs.clone(), descriptor: cands[c].descriptor })
        .collect())
}

/// Runs `job` and streams the store into `out`. Workers build image groups
/// in any order; this thread writes them in image order.
pub fn reinforce_into<W: Write + Seek>(
    dataset: &LabeledDataset,
    teacher: &dyn Teacher,
    job: &ReinforceJob,
    out: W,
    progress: Option<&ReinforceProgress>,
) -> Result<(W, ReinforceStats)> {
    job.validate(dataset.num_classes())?;
    if teacher.num_classes() != dataset.num_classes() {
        return Err(Error::invalid(format!(
            "teacher predicts {} classes, dataset has {}",
            teacher.num_classes(),
            dataset.num_classes()
        )));
    }
    if teacher.input_dims().channels != dataset.dims().channels {
        return Err(Error::DimensionMismatch {
            expected: format!("{} channels", teacher.input_dims().channels),
            actual: format!("{} channels", dataset.dims().channels),
        });
    }
    let header = StoreHeader::new(
        job.policy.flags(),
        dataset.num_classes() as u32,
        job.top_k as u8,
        job.samples_per_image as u16,
        dataset.len() as u64,
        teacher.identity(),
    )?;
    let local = ReinforceProgress::new();
    let progress = progress.unwrap_or(&local);
    progress.total_images.store(dataset.len() as u64, Ordering::SeqCst);
    let start = Instant::now();
    let mut writer = StoreWriter::new(out, header)?;
    progress.bytes_written.store(writer.bytes_written(), Ordering::SeqCst);
    let mut conf_sum = 0.0;
    let mut emit = |writer: &mut StoreWriter<W>, group: Vec<ReinforcementRecord>| -> Result<()> {
        writer.write_group(&group)?;
        conf_sum += group.iter().map(|r| r.confidence()).sum::<f64>();
        progress.images_done.fetch_add(1, Ordering::SeqCst);
        progress.records_written.fetch_add(group.len() as u64, Ordering::SeqCst);
        progress.bytes_written.store(writer.bytes_written(), Ordering::SeqCst);
        Ok(())
    };
    let workers = job.workers.min(dataset.len().max(1));
    if workers <= 1 {
        for i in 0..dataset.len() {
            emit(&mut writer, reinforce_image(dataset, teacher, job, i)?)?;
        }
    } else {
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        std::thread::scope(|s| -> Result<()> {
            type Done = (usize, Result<Vec<ReinforcementRecord>>);
            let (tx, rx) = mpsc::sync_channel::<Done>(workers * 4);
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, failed) = (&next, &failed);
                s.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= dataset.len() || failed.load(Ordering::SeqCst) {
                        break;
                    }
                    if tx.send((i, reinforce_image(dataset, teacher, job, i))).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            let mut pending = BTreeMap::new();
            let mut want = 0usize;
            for (i, group) in rx {
                match group {
                    Ok(g) => {
                        pending.insert(i, g);
                    }
                    Err(e) => {
                        failed.store(true, Ordering::SeqCst);
                        return Err(e);
                    }
                }
                while let Some(g) = pending.remove(&want) {
                    if let Err(e) = emit(&mut writer, g) {
                        failed.store(true, Ordering::SeqCst);
                        return Err(e);
                    }
                    want += 1;
                }
            }
            Ok(())
        })?;
    }
    let (out, bytes) = writer.finish()?;
    let wall = start.elapsed().as_secs_f64();
    let records = (dataset.len() * job.samples_per_image) as u64;
    let stats = ReinforceStats {
        images: dataset.len() as u64,
        records,
        bytes,
        record_size: record_size(job.top_k, job.policy.flags()),
        wall_secs: wall,
        throughput: if wall > 0.0 { dataset.len() as f64 / wall } else { 0.0 },
        teacher_calls: dataset.len() as u64,
        mean_stored_confidence: if records > 0 { conf_sum / records as f64 } else { 0.0 },
    };
    log::info!("reinforced {} images × {} samples in {wall:.1}s ({bytes} bytes)", stats.images, job.samples_per_image);
    Ok((out, stats))
}

/// Runs `job` into an in-memory store.
pub fn reinforce(
    dataset: &LabeledDataset,
    teacher: &dyn Teacher,
    job: &ReinforceJob,
) -> Result<(Store, ReinforceStats)> {
    let (cur, stats) = reinforce_into(dataset, teacher, job, Cursor::new(Vec::new()), None)?;
    Ok((Store::from_bytes(cur.into_inner(), false)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Variant;

    fn cand(row: Vec<f64>) -> Candidate {
        let r32: Vec<f32> = row.iter().map(|&p| p as f32).collect();
        Candidate {
            descriptor: AugmentationDescriptor::identity(Variant::Rrc.flags()),
            probs: sparsify(&r32, r32.len()).unwrap(),
            teacher_row: row,
        }
    }

    #[test]
    fn min_confidence_picks_the_least_confident() {
        let cands: Vec<_> = [0.9, 0.5, 0.7, 0.3]
            .iter()
            .map(|&c| {
                let mut row = vec![(1.0 - c) / 9.0; 10];
                row[0] = c;
                cand(row)
            })
            .collect();
        let mut rng = SeededRng::new(0, 0);
        let got = select_subset(&cands, Selection::MinConfidence, 2, 0, &mut rng).unwrap();
        assert_eq!(got, vec![1, 3]);
    }

    #[test]
    fn full_selection_is_identity() {
        let cands: Vec<_> = (0..5).map(|i| cand(vec![0.1 * i as f64, 1.0 - 0.1 * i as f64])).collect();
        for s in Selection::ALL {
            let mut rng = SeededRng::new(0, 0);
            assert_eq!(select_subset(&cands, s, 5, 0, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn kmeans_takes_one_per_cluster() {
        let cands: Vec<_> = [
            [0.95, 0.03, 0.02],
            [0.93, 0.04, 0.03],
            [0.94, 0.05, 0.01],
            [0.02, 0.03, 0.95],
            [0.01, 0.05, 0.94],
            [0.03, 0.04, 0.93],
        ]
        .iter()
        .map(|r| cand(r.to_vec()))
        .collect();
        for seed in 0..20 {
            let mut rng = SeededRng::new(seed, 0);
            let got = select_subset(&cands, Selection::KMeansDiverse, 2, 0, &mut rng).unwrap();
            assert!(got[0] < 3 && got[1] >= 3, "seed {seed}: {got:?}");
        }
    }

    #[test]
    fn selection_names_roundtrip() {
        for s in Selection::ALL {
            assert_eq!(s.name().parse::<Selection>().unwrap(), s);
        }
    }

    #[test]
    fn job_validation_lists_every_problem() {
        let mut job = ReinforceJob::new(AugmentationPolicy::new(Variant::Rrc), 0);
        job.top_k = 0;
        job.workers = 0;
        job.selection = Selection::KMeansDiverse;
        match job.validate(10) {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 4, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }
}
