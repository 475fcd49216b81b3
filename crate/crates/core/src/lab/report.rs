//! Acceptance experiments and the report built from them.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use super::properties::{self, Check};
use super::{mean, Lab, LabConfig, Regime, RunResult};
use crate::augment::{Variant, VariantFlags};
use crate::loader::{CurriculumSchedule, MixLibrary, WindowPreset};
use crate::nn::{ece, Arch, Objective};
use crate::reinforcer::ReinforceStats;
use crate::rng::SeededRng;
use crate::store::{record_size, total_size, Store};
use crate::Result;

/// ImageNet training-set size used for the storage table.
pub const IMAGENET_TRAIN_IMAGES: u64 = 1_281_167;
pub const IMAGENET_SAMPLES: u64 = 400;
const GIB: f64 = (1u64 << 30) as f64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub title: String,
    pub passed: bool,
    /// Non-blocking criteria are reported but never fail the suite.
    pub blocking: bool,
    pub summary: String,
    /// First row is the header.
    pub table: Vec<Vec<String>>,
    pub secs: f64,
}

impl CriterionOutcome {
    fn new(id: u8, title: &str, blocking: bool) -> Self {
        Self {
            id,
            title: title.to_string(),
            passed: false,
            blocking,
            summary: String::new(),
            table: Vec::new(),
            secs: 0.0,
        }
    }

    fn row(&mut self, cells: impl IntoIterator<Item = impl ToString>) {
        self.table.push(cells.into_iter().map(|c| c.to_string()).collect());
    }

    pub fn status(&self) -> &'static str {
        match (self.passed, self.blocking) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "MISS (non-blocking)",
        }
    }
}

fn pts(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// Lazily computed artefacts shared between criteria.
pub struct Session {
    pub lab: Lab,
    store: Option<(Store, ReinforceStats)>,
    large: Option<(Store, ReinforceStats)>,
    accuracy: Option<Vec<RunResult>>,
}

impl Session {
    pub fn new(cfg: LabConfig) -> Result<Self> {
        Ok(Self { lab: Lab::prepare(cfg)?, store: None, large: None, accuracy: None })
    }

    fn variant(&self) -> Result<Variant> {
        self.lab.cfg.variant_parsed()
    }

    /// Store at the configured sample count, built on first use.
    pub fn store(&mut self) -> Result<&(Store, ReinforceStats)> {
        if self.store.is_none() {
            let r = self.lab.reinforce(self.variant()?, self.lab.cfg.samples_per_image)?;
            log::info!("store: {} bytes in {:.1}s", r.1.bytes, r.1.wall_secs);
            self.store = Some(r);
        }
        Ok(self.store.as_ref().unwrap())
    }

    fn large_store(&mut self) -> Result<&(Store, ReinforceStats)> {
        if self.large.is_none() {
            let r = self.lab.reinforce(self.variant()?, self.lab.cfg.large_samples_per_image)?;
            log::info!("large store: {} bytes in {:.1}s", r.1.bytes, r.1.wall_secs);
            self.large = Some(r);
        }
        Ok(self.large.as_ref().unwrap())
    }

    /// Every objective over every seed, at the configured epoch count.
    pub fn accuracy_runs(&mut self) -> Result<&[RunResult]> {
        if self.accuracy.is_none() {
            let variant = self.variant()?;
            self.store()?;
            let store = &self.store.as_ref().unwrap().0;
            let mut runs = Vec::new();
            for &seed in &self.lab.cfg.seeds {
                for regime in [
                    Regime::Erm,
                    Regime::Reinforced { store, schedule: None, library: None },
                    Regime::Imitation,
                    Regime::Invariance,
                ] {
                    runs.push(self.lab.run(regime, variant, seed, self.lab.cfg.epochs)?);
                }
            }
            self.accuracy = Some(runs);
        }
        Ok(self.accuracy.as_deref().unwrap())
    }

    pub fn storage(&mut self) -> Result<CriterionOutcome> {
        storage_table()
    }

    pub fn overhead(&mut self) -> Result<CriterionOutcome> {
        let mut out = CriterionOutcome::new(2, "Zero training overhead", true);
        let variant = self.variant()?;
        let epochs = self.lab.cfg.timing_epochs;
        self.store()?;
        let store = &self.store.as_ref().unwrap().0;
        let reinforced = Regime::Reinforced { store, schedule: None, library: None };
        // Alternate the two cheap runs and keep the fastest of each so a
        // noisy neighbour does not decide the ratio.
        let (mut erm, mut rei): (Option<RunResult>, Option<RunResult>) = (None, None);
        for _ in 0..2 {
            for (slot, regime) in [(&mut erm, Regime::Erm), (&mut rei, reinforced)] {
                let r = self.lab.run(regime, variant, 0, epochs)?;
                if slot.as_ref().is_none_or(|s| r.mean_iter_secs < s.mean_iter_secs) {
                    *slot = Some(r);
                }
            }
        }
        let (erm, rei) = (erm.unwrap(), rei.unwrap());
        let kd = self.lab.run(Regime::Imitation, variant, 0, epochs)?;
        let ratio = |r: &RunResult| r.mean_iter_secs / erm.mean_iter_secs;
        out.row(["run", "epochs", "iterations", "ms/iter", "× ERM", "teacher calls"]);
        for r in [&erm, &rei, &kd] {
            out.row([
                r.objective.to_string(),
                epochs.to_string(),
                r.iterations.to_string(),
                format!("{:.3}", r.mean_iter_secs * 1e3),
                format!("{:.3}", ratio(r)),
                r.teacher_calls.to_string(),
            ]);
        }
        out.passed = epochs >= 5
            && rei.teacher_calls == 0
            && rei.iterations == erm.iterations
            && ratio(&rei) <= 1.15
            && ratio(&kd) >= 1.3;
        out.summary = format!(
            "reinforced {:.3}× ERM with {} teacher calls; online KD {:.2}× ERM",
            ratio(&rei),
            rei.teacher_calls,
            ratio(&kd)
        );
        Ok(out)
    }

    pub fn accuracy(&mut self) -> Result<CriterionOutcome> {
        let mut out = CriterionOutcome::new(3, "Accuracy ordering", true);
        let teacher_acc = self.lab.teacher_acc;
        let runs = self.accuracy_runs()?.to_vec();
        let m = |o: Objective| mean(runs.iter().filter(|r| r.objective == o).map(|r| r.val_acc));
        out.row(["objective", "seeds", "mean val acc (%)", "per seed (%)"]);
        for o in [Objective::Erm, Objective::Reinforced, Objective::OnlineKdImitation, Objective::OnlineKdInvariance] {
            let per: Vec<String> = runs.iter().filter(|r| r.objective == o).map(|r| pts(r.val_acc)).collect();
            out.row([o.to_string(), per.len().to_string(), pts(m(o)), per.join(" ")]);
        }
        let (erm, rei) = (m(Objective::Erm), m(Objective::Reinforced));
        let (imi, inv) = (m(Objective::OnlineKdImitation), m(Objective::OnlineKdInvariance));
        let gain = (rei - erm) * 100.0;
        let gap = (rei - imi).abs() * 100.0;
        out.passed = gain >= 0.5 && gap <= 1.5 && imi >= inv;
        out.summary = format!(
            "teacher {}%; reinforced − ERM = {gain:+.2} pts; |reinforced − imitation| = {gap:.2} pts; \
             imitation − invariance = {:+.2} pts",
            pts(teacher_acc),
            (imi - inv) * 100.0
        );
        Ok(out)
    }

    pub fn sample_count(&mut self) -> Result<CriterionOutcome> {
        let mut out = CriterionOutcome::new(4, "Sample-count sufficiency", true);
        let variant = self.variant()?;
        let small =
            self.accuracy_runs()?.iter().filter(|r| r.objective == Objective::Reinforced).cloned().collect::<Vec<_>>();
        self.large_store()?;
        let large = &self.large.as_ref().unwrap().0;
        let mut big = Vec::new();
        for &seed in &self.lab.cfg.seeds {
            let regime = Regime::Reinforced { store: large, schedule: None, library: None };
            big.push(self.lab.run(regime, variant, seed, self.lab.cfg.epochs)?);
        }
        let (a, b) = (mean(small.iter().map(|r| r.val_acc)), mean(big.iter().map(|r| r.val_acc)));
        out.row(["samples per image", "store bytes", "mean val acc (%)", "per seed (%)"]);
        let (ns, nl) = (self.lab.cfg.samples_per_image, self.lab.cfg.large_samples_per_image);
        for (n, bytes, runs, acc) in
            [(ns, self.store.as_ref().unwrap().1.bytes, &small, a), (nl, self.large.as_ref().unwrap().1.bytes, &big, b)]
        {
            let per: Vec<String> = runs.iter().map(|r| pts(r.val_acc)).collect();
            out.row([n.to_string(), bytes.to_string(), pts(acc), per.join(" ")]);
        }
        let delta = (a - b) * 100.0;
        out.passed = delta.abs() <= 1.0;
        out.summary = format!("N={ns} − N={nl} = {delta:+.2} pts");
        Ok(out)
    }

    pub fn calibration(&mut self) -> Result<CriterionOutcome> {
        let mut out = CriterionOutcome::new(5, "Calibration", true);
        let runs = self.accuracy_runs()?.to_vec();
        let m = |o: Objective| mean(runs.iter().filter(|r| r.objective == o).map(|r| r.ece));
        out.row(["objective", "mean ECE", "per seed"]);
        for o in [Objective::Erm, Objective::Reinforced, Objective::OnlineKdImitation, Objective::OnlineKdInvariance] {
            let per: Vec<String> = runs.iter().filter(|r| r.objective == o).map(|r| format!("{:.4}", r.ece)).collect();
            out.row([o.to_string(), format!("{:.4}", m(o)), per.join(" ")]);
        }
        let oracle_err = ece_oracle_error(100_000, 15, 5)?;
        let (e, r) = (m(Objective::Erm), m(Objective::Reinforced));
        out.passed = r <= e && oracle_err <= 1e-12;
        out.summary = format!(
            "ECE reinforced {r:.4} vs ERM {e:.4}; ece() vs brute-force binning on 1e5 points: |Δ| = {oracle_err:.1e}"
        );
        Ok(out)
    }

    pub fn curriculum(&mut self) -> Result<CriterionOutcome> {
        let mut out = CriterionOutcome::new(6, "Curriculum tradeoff", false);
        let variant = self.variant()?;
        let epochs = self.lab.cfg.epochs;
        let seeds = self.lab.cfg.seeds.clone();
        self.store()?;
        let store = &self.store.as_ref().unwrap().0;
        // A deliberately small student for this comparison.
        let arch = Arch::ConvPool;
        out.row(["schedule", "student", "mean val acc (%)", "per seed (%)"]);
        let mut means = Vec::new();
        for from in [WindowPreset::Easy, WindowPreset::All, WindowPreset::Hard] {
            let sched = CurriculumSchedule::preset(from, WindowPreset::All, epochs);
            let mut accs = Vec::new();
            for &seed in &seeds {
                let regime = Regime::Reinforced { store, schedule: Some(&sched), library: None };
                accs.push(self.lab.run_arch(arch, regime, variant, seed, epochs)?.val_acc);
            }
            let m = mean(accs.iter().copied());
            let per: Vec<String> = accs.iter().map(|&a| pts(a)).collect();
            out.row([format!("{}->all", from.name()), arch.to_string(), pts(m), per.join(" ")]);
            means.push(m);
        }
        out.passed = means[0] >= means[2];
        out.summary =
            format!("easy->all − hard->all = {:+.2} pts (all->all {}%)", (means[0] - means[2]) * 100.0, pts(means[1]));
        Ok(out)
    }

    pub fn properties(&mut self) -> Result<CriterionOutcome> {
        let mut out = CriterionOutcome::new(7, "Property suites", true);
        let checks = properties::property_suite(0x5eed);
        checks_into(&mut out, &checks);
        Ok(out)
    }

    pub fn mixing(&mut self) -> Result<CriterionOutcome> {
        let mut out = CriterionOutcome::new(8, "Mixing mechanics", true);
        let checks = [properties::mixing_pixel_oracles(1000, 0x5eed), properties::double_mix_loads(200, 0x5eed)];
        checks_into(&mut out, &checks);
        let (delta, detail) = self.library_delta()?;
        let sign = if delta <= 0.0 { "≤ 0 (non-blocking)" } else { "> 0 (non-blocking)" };
        out.row(["mix library vs full mixing", sign, &detail]);
        out.summary = format!("{}; library − full = {delta:+.2} pts", out.summary);
        Ok(out)
    }

    /// Reinforced accuracy with a small partner library minus full mixing,
    /// in points, on a store built with the mixing variant.
    fn library_delta(&mut self) -> Result<(f64, String)> {
        let cfg = &self.lab.cfg;
        let (store, _) = self.lab.reinforce(Variant::RrcMixing, cfg.samples_per_image)?;
        let lib = MixLibrary::build(&store, &self.lab.train, cfg.library_size, 23, self.lab.target_hw())?;
        let (mut full, mut with_lib) = (Vec::new(), Vec::new());
        for &seed in &cfg.seeds {
            for (acc, library) in [(&mut full, None), (&mut with_lib, Some(&lib))] {
                let regime = Regime::Reinforced { store: &store, schedule: None, library };
                acc.push(self.lab.run(regime, Variant::RrcMixing, seed, cfg.epochs)?.val_acc);
            }
        }
        let (f, l) = (mean(full.iter().copied()), mean(with_lib.iter().copied()));
        Ok(((l - f) * 100.0, format!("full {}%, library of {} images {}%", pts(f), cfg.library_size, pts(l))))
    }

    /// Runs one criterion by number.
    pub fn criterion(&mut self, id: u8) -> Result<CriterionOutcome> {
        let start = Instant::now();
        let mut out = match id {
            1 => self.storage(),
            2 => self.overhead(),
            3 => self.accuracy(),
            4 => self.sample_count(),
            5 => self.calibration(),
            6 => self.curriculum(),
            7 => self.properties(),
            8 => self.mixing(),
            _ => Err(crate::Error::invalid(format!("no criterion {id}"))),
        }?;
        out.secs = start.elapsed().as_secs_f64();
        Ok(out)
    }
}

fn checks_into(out: &mut CriterionOutcome, checks: &[Check]) {
    out.row(["check", "result", "detail"]);
    for c in checks {
        out.row([c.name.as_str(), if c.passed { "pass" } else { "FAIL" }, c.detail.as_str()]);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    out.passed = failed.is_empty();
    out.summary = if failed.is_empty() {
        format!("{} checks passed", checks.len())
    } else {
        format!("failed: {}", failed.join(", "))
    };
}

/// Per-block bytes and totals for the ImageNet storage table.
pub fn storage_table() -> Result<CriterionOutcome> {
    let mut out = CriterionOutcome::new(1, "Storage table", true);
    let rrc = Variant::Rrc.flags();
    let blocks: [(&str, usize, f64); 4] = [
        ("teacher top-10", record_size(10, rrc) - record_size(0, rrc), 38.0),
        ("RRC", record_size(0, rrc), 8.0),
        ("RA/RE", record_size(0, Variant::RrcRaRe.flags()) - record_size(0, rrc), 15.0),
        ("MixUp/CutMix", record_size(0, Variant::RrcMixing.flags()) - record_size(0, rrc), 13.0),
    ];
    let expected_bytes = [80usize, 17, 32, 28];
    let gib = |bytes: u64| bytes as f64 / GIB;
    let records = IMAGENET_TRAIN_IMAGES * IMAGENET_SAMPLES;
    out.row(["block", "bytes", "expected bytes", "GiB at 1,281,167 × 400", "table GB"]);
    let mut ok = true;
    for ((name, bytes, table_gb), want) in blocks.into_iter().zip(expected_bytes) {
        let g = gib(bytes as u64 * records);
        ok &= bytes == want && (g - table_gb).abs() <= 1.0;
        out.row([name.to_string(), bytes.to_string(), want.to_string(), format!("{g:.2}"), format!("{table_gb:.0}")]);
    }
    let flags: VariantFlags = Variant::RrcRaRe.flags();
    let rec = record_size(10, flags);
    let total = total_size(IMAGENET_TRAIN_IMAGES, IMAGENET_SAMPLES, 10, flags, 0)?;
    let g = gib(total);
    ok &= rec == 129 && (g - 61.0).abs() <= 1.0;
    out.row([
        "RRC+RA/RE record (top-10)".to_string(),
        rec.to_string(),
        "129".to_string(),
        format!("{g:.2}"),
        "61".to_string(),
    ]);
    out.passed = ok;
    out.summary = format!("RRC+RA/RE store at ImageNet scale: {total} bytes = {g:.2} GiB");
    Ok(out)
}

/// Largest |ece() − brute force| over a few random bin counts, with points
/// that include exact bin edges.
pub fn ece_oracle_error(points: usize, bins: usize, seed: u64) -> Result<f64> {
    let mut rng = SeededRng::new(seed, 0);
    let mut worst = 0f64;
    for b in [bins, 1, 7, 10] {
        let conf: Vec<f64> = (0..points)
            .map(|i| if i % 97 == 0 { (1 + rng.below(b)) as f64 / b as f64 } else { 1.0 - rng.uniform() })
            .collect();
        let correct: Vec<bool> = conf.iter().map(|&c| rng.bernoulli(c * 0.9)).collect();
        let fast = ece(&conf, &correct, b)?;
        let mut brute = 0.0;
        for k in 0..b {
            let (lo, hi) = (k as f64, (k + 1) as f64);
            let members: Vec<usize> = (0..points)
                .filter(|&i| {
                    let s = conf[i] * b as f64;
                    s > lo && s <= hi
                })
                .collect();
            if members.is_empty() {
                continue;
            }
            let n = members.len() as f64;
            let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / n;
            let avg = members.iter().map(|&i| conf[i]).sum::<f64>() / n;
            brute += n / points as f64 * (acc - avg).abs();
        }
        worst = worst.max((fast - brute).abs());
    }
    Ok(worst)
}

/// Every criterion outcome plus the setup that produced them.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub config: LabConfig,
    pub teacher_acc: f64,
    pub teacher_secs: f64,
    pub outcomes: Vec<CriterionOutcome>,
    pub total_secs: f64,
}

impl Report {
    pub fn blocking_failures(&self) -> Vec<u8> {
        self.outcomes.iter().filter(|o| o.blocking && !o.passed).map(|o| o.id).collect()
    }

    pub fn to_markdown(&self) -> String {
        let c = &self.config;
        let mut s = String::from("# Acceptance report\n\n");
        let _ = writeln!(
            s,
            "Desk dataset: {} train / {} val, {} classes of {}. Teacher {} ({} epochs): {}% val accuracy. \
             Students: {}, {} epochs, seeds {:?}, variant {}.\n",
            c.train_size,
            c.val_size,
            c.desk.num_classes,
            c.desk.dims,
            c.teacher_arch,
            c.teacher_epochs,
            pts(self.teacher_acc),
            c.student_arch,
            c.epochs,
            c.seeds,
            c.variant
        );
        for o in &self.outcomes {
            let _ = writeln!(s, "## {}. {}: {}\n", o.id, o.title, o.status());
            let _ = writeln!(s, "{}\n", o.summary);
            if let Some((head, rows)) = o.table.split_first() {
                let cells = |r: &[String]| r.iter().map(|c| c.replace('|', "\\|")).collect::<Vec<_>>().join(" | ");
                let _ = writeln!(s, "| {} |", cells(head));
                let _ = writeln!(s, "|{}", "---|".repeat(head.len()));
                for r in rows {
                    let _ = writeln!(s, "| {} |", cells(r));
                }
                s.push('\n');
            }
            let _ = writeln!(s, "_{:.1}s_\n", o.secs);
        }
        let _ = writeln!(s, "Total wall time {:.1}s.", self.total_secs);
        s
    }

    /// One line per criterion.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,title,blocking,passed,secs,summary\n");
        for o in &self.outcomes {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.2},\"{}\"",
                o.id,
                o.title,
                o.blocking,
                o.passed,
                o.secs,
                o.summary.replace('"', "\"\"")
            );
        }
        s
    }
}

/// Runs the selected criteria (all when `only` is empty).
pub fn run_report(cfg: LabConfig, only: &[u8]) -> Result<Report> {
    let start = Instant::now();
    let ids: Vec<u8> = if only.is_empty() { (1..=8).collect() } else { only.to_vec() };
    let mut session = Session::new(cfg)?;
    let mut outcomes = Vec::new();
    for id in ids {
        outcomes.push(session.criterion(id)?);
    }
    Ok(Report {
        config: session.lab.cfg.clone(),
        teacher_acc: session.lab.teacher_acc,
        teacher_secs: session.lab.teacher_secs,
        outcomes,
        total_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn storage_criterion_passes() {
        let o = storage_table().unwrap();
        assert!(o.passed, "{o:?}");
        assert_eq!(o.table.len(), 6);
    }

    #[test]
    fn markdown_escapes_pipes() {
        let mut o = storage_table().unwrap();
        o.row(["a|b", "c", "d", "e", "f"]);
        let r = Report {
            config: LabConfig::quick(),
            teacher_acc: 0.5,
            teacher_secs: 1.0,
            outcomes: vec![o],
            total_secs: 1.0,
        };
        let md = r.to_markdown();
        assert!(md.contains("| a\\|b | c |"), "{md}");
        assert_eq!(r.to_csv().lines().count(), 2);
    }

    #[test]
    fn ece_matches_brute_force() {
        assert!(ece_oracle_error(5000, 15, 1).unwrap() <= 1e-12);
    }
}
