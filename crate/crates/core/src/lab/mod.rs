//! Desk-scale experiment drivers shared by the acceptance suite and the
//! `report` command.

use std::time::Instant;

use serde::Serialize;

use crate::augment::{AugmentationPolicy, Variant};
use crate::dataset::LabeledDataset;
use crate::desk::{DeskConfig, DeskGenerator};
use crate::loader::{CurriculumSchedule, MixLibrary, ReinforcedLoader};
use crate::nn::{
    evaluate, train, Arch, AugmentedSource, Model, Objective, TargetMode, TrainConfig, TrainHistory, TrainSource,
};
use crate::reinforcer::{reinforce, ReinforceJob, ReinforceStats};
use crate::store::Store;
use crate::teacher::{global_teacher_calls, ModelTeacher, Teacher};
use crate::Result;

pub mod properties;
mod report;

pub use report::{
    ece_oracle_error, run_report, storage_table, CriterionOutcome, Report, Session, IMAGENET_SAMPLES,
    IMAGENET_TRAIN_IMAGES,
};

/// Offset of the validation samples in the generator's index space.
const VAL_OFFSET: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabConfig {
    #[serde(skip)]
    pub desk: DeskConfig,
    pub train_size: usize,
    pub val_size: usize,
    pub teacher_arch: String,
    pub teacher_epochs: usize,
    pub teacher_lr: f64,
    pub student_arch: String,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Augmentation variant shared by every student objective.
    pub variant: String,
    pub crop_scale: (f64, f64),
    pub ra_magnitude: f64,
    pub top_k: usize,
    pub samples_per_image: usize,
    pub large_samples_per_image: usize,
    pub timing_epochs: usize,
    pub library_size: usize,
    pub workers: usize,
}

impl LabConfig {
    /// Settings used by the acceptance suite.
    pub fn full() -> Self {
        Self {
            desk: DeskConfig::default(),
            train_size: 5000,
            val_size: 1000,
            teacher_arch: Arch::TeacherL.to_string(),
            teacher_epochs: 30,
            teacher_lr: 0.05,
            student_arch: Arch::StudentS.to_string(),
            epochs: 100,
            seeds: vec![0, 1, 2],
            batch_size: 64,
            base_lr: 0.05,
            weight_decay: 5e-4,
            variant: Variant::RrcRaRe.to_string(),
            crop_scale: (0.35, 1.0),
            ra_magnitude: 5.0,
            top_k: 5,
            samples_per_image: 50,
            large_samples_per_image: 400,
            timing_epochs: 5,
            library_size: 100,
            workers: 1,
        }
    }

    /// A small configuration that finishes in well under a minute.
    pub fn quick() -> Self {
        Self {
            train_size: 1000,
            val_size: 400,
            teacher_epochs: 10,
            epochs: 10,
            seeds: vec![0],
            samples_per_image: 10,
            large_samples_per_image: 40,
            timing_epochs: 2,
            library_size: 20,
            ..Self::full()
        }
    }

    pub fn student(&self) -> Result<Arch> {
        self.student_arch.parse()
    }

    pub fn teacher(&self) -> Result<Arch> {
        self.teacher_arch.parse()
    }

    pub fn variant_parsed(&self) -> Result<Variant> {
        self.variant.parse()
    }
}

/// How a student run gets its batches.
#[derive(Clone, Copy)]
pub enum Regime<'a> {
    Erm,
    Imitation,
    Invariance,
    Reinforced { store: &'a Store, schedule: Option<&'a CurriculumSchedule>, library: Option<&'a MixLibrary> },
}

impl Regime<'_> {
    pub fn objective(&self) -> Objective {
        match self {
            Regime::Erm => Objective::Erm,
            Regime::Imitation => Objective::OnlineKdImitation,
            Regime::Invariance => Objective::OnlineKdInvariance,
            Regime::Reinforced { .. } => Objective::Reinforced,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub objective: Objective,
    pub seed: u64,
    pub val_acc: f64,
    pub ece: f64,
    pub iterations: u64,
    pub mean_iter_secs: f64,
    /// Teacher batch evaluations observed process-wide during the run.
    pub teacher_calls: u64,
    pub history: TrainHistory,
}

/// Prepared datasets plus a trained teacher.
pub struct Lab {
    pub cfg: LabConfig,
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub teacher: ModelTeacher,
    pub teacher_acc: f64,
    pub teacher_secs: f64,
}

impl Lab {
    pub fn prepare(cfg: LabConfig) -> Result<Self> {
        let gen = DeskGenerator::new(cfg.desk.clone())?;
        let train_ds = gen.dataset(0, cfg.train_size)?;
        let val = gen.dataset(VAL_OFFSET, cfg.val_size)?;
        let start = Instant::now();
        let mut model = Model::new(cfg.teacher()?, train_ds.dims(), train_ds.num_classes(), 7)?;
        // The teacher sees resized full images only; it is the augmentation
        // of its inputs at reinforcement time that carries the signal.
        let policy = AugmentationPolicy::degenerate(Variant::Rrc);
        let mut tc = TrainConfig::new(Objective::Erm);
        tc.epochs = cfg.teacher_epochs;
        tc.batch_size = cfg.batch_size;
        tc.base_lr = cfg.teacher_lr;
        tc.weight_decay = cfg.weight_decay;
        tc.seed = 7;
        let hw = (train_ds.dims().height, train_ds.dims().width);
        let mut src = AugmentedSource::new(
            &train_ds,
            policy,
            TargetMode::HardLabels { smoothing: tc.effective_label_smoothing() as f32 },
            7,
            hw,
        )?;
        train(&mut model, &mut src, None, &tc)?;
        let teacher_acc = evaluate(&model, &val)?;
        let teacher_secs = start.elapsed().as_secs_f64();
        log::info!("teacher {} val acc {teacher_acc:.4} ({teacher_secs:.1}s)", cfg.teacher_arch);
        Ok(Self {
            teacher: ModelTeacher::new(model, format!("desk-{}", cfg.teacher_arch)),
            cfg,
            train: train_ds,
            val,
            teacher_acc,
            teacher_secs,
        })
    }

    pub fn target_hw(&self) -> (usize, usize) {
        (self.train.dims().height, self.train.dims().width)
    }

    pub fn policy(&self, variant: Variant) -> AugmentationPolicy {
        let mut p = AugmentationPolicy::new(variant);
        p.crop_scale = self.cfg.crop_scale;
        p.ra_magnitude = self.cfg.ra_magnitude;
        p
    }

    pub fn reinforce(&self, variant: Variant, samples_per_image: usize) -> Result<(Store, ReinforceStats)> {
        let mut job = ReinforceJob::new(self.policy(variant), samples_per_image);
        job.top_k = self.cfg.top_k;
        job.seed = 11;
        job.workers = self.cfg.workers;
        reinforce(&self.train, &self.teacher, &job)
    }

    pub fn train_config(&self, objective: Objective, seed: u64, epochs: usize) -> TrainConfig {
        let mut tc = TrainConfig::new(objective);
        tc.epochs = epochs;
        tc.batch_size = self.cfg.batch_size;
        tc.base_lr = self.cfg.base_lr;
        tc.weight_decay = self.cfg.weight_decay;
        tc.seed = seed;
        tc
    }

    /// Trains a fresh student under `regime` and evaluates it.
    pub fn run(&self, regime: Regime<'_>, variant: Variant, seed: u64, epochs: usize) -> Result<RunResult> {
        self.run_arch(self.cfg.student()?, regime, variant, seed, epochs)
    }

    /// [`Lab::run`] with an explicit student architecture.
    pub fn run_arch(
        &self,
        arch: Arch,
        regime: Regime<'_>,
        variant: Variant,
        seed: u64,
        epochs: usize,
    ) -> Result<RunResult> {
        let tc = self.train_config(regime.objective(), seed, epochs);
        let mut model = Model::new(arch, self.train.dims(), self.train.num_classes(), seed)?;
        let hw = self.target_hw();
        let policy = self.policy(variant);
        let mut source: Box<dyn TrainSource + '_> = match regime {
            Regime::Erm => Box::new(AugmentedSource::new(
                &self.train,
                policy,
                TargetMode::HardLabels { smoothing: tc.effective_label_smoothing() as f32 },
                seed,
                hw,
            )?),
            Regime::Imitation => {
                Box::new(AugmentedSource::new(&self.train, policy, TargetMode::Imitation(&self.teacher), seed, hw)?)
            }
            Regime::Invariance => {
                Box::new(AugmentedSource::new(&self.train, policy, TargetMode::Invariance(&self.teacher), seed, hw)?)
            }
            Regime::Reinforced { store, schedule, library } => {
                let mut l = ReinforcedLoader::new(store, &self.train, seed, hw)?;
                if let Some(s) = schedule {
                    l = l.with_schedule(s.clone());
                }
                if let Some(lib) = library {
                    l = l.with_partners(lib);
                }
                Box::new(l)
            }
        };
        let calls_before = global_teacher_calls();
        let history = train(&mut model, source.as_mut(), Some(&self.val), &tc)?;
        let teacher_calls = global_teacher_calls() - calls_before;
        let result = RunResult {
            objective: regime.objective(),
            seed,
            val_acc: history.final_val_acc().unwrap_or(0.0),
            ece: history.final_ece().unwrap_or(0.0),
            iterations: history.total_steps,
            mean_iter_secs: history.mean_iteration_seconds(),
            teacher_calls,
            history,
        };
        log::info!(
            "{} seed {seed}: acc {:.4} ece {:.4} ({:.2} ms/iter)",
            result.objective,
            result.val_acc,
            result.ece,
            result.mean_iter_secs * 1e3
        );
        Ok(result)
    }

    /// Identity string of the teacher, as written into store headers.
    pub fn teacher_id(&self) -> String {
        self.teacher.identity()
    }
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}
