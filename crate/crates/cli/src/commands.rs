use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use dr_core::augment::{AugmentationPolicy, Variant};
use dr_core::config::RunConfig;
use dr_core::dataset::{load_packed, write_packed, Dims, LabeledDataset};
use dr_core::desk::{DeskConfig, DeskGenerator};
use dr_core::lab::{run_report, LabConfig};
use dr_core::loader::{MixLibrary, ReinforcedLoader};
use dr_core::nn::{
    load_checkpoint, save_checkpoint, train as fit, AugmentedSource, Model, Objective, TargetMode, TrainSource,
};
use dr_core::reinforcer::{reinforce_into, ReinforceStats};
use dr_core::store::{self, Store, MIXING_BLOCK_BYTES, PROB_ENTRY_BYTES, RA_RE_BLOCK_BYTES, RRC_BLOCK_BYTES};
use dr_core::teacher::{densify, entropy, global_teacher_calls, ModelTeacher};
use dr_core::Error;

use crate::ConfigArgs;

/// 2 for configuration and argument problems, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidArgument(_)) => 2,
        _ => 1,
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::new(),
    };
    cfg.apply_overrides(args.overrides.iter().map(String::as_str))?;
    Ok(cfg)
}

/// Creates `run.out_dir/run.name` and echoes the effective config into it.
fn run_dir(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let name = match cfg.get("run.name") {
        Some(n) => n.to_string(),
        None => format!("{command}-seed{}", cfg.int("run.seed")?),
    };
    let dir = cfg.path("run.out_dir")?.join(name);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.txt"), cfg.echo())?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn load_dataset(cfg: &RunConfig, key: &str) -> Result<LabeledDataset> {
    let path = cfg.path(key)?;
    load_packed(&path).with_context(|| format!("loading {key} from {}", path.display()))
}

fn load_teacher(cfg: &RunConfig) -> Result<ModelTeacher> {
    let path = cfg.path("teacher.checkpoint")?;
    let model = load_checkpoint(&path).with_context(|| format!("loading teacher {}", path.display()))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "teacher".into());
    Ok(ModelTeacher::new(model, name))
}

pub fn synth(out: &Path, train: usize, val: usize, seed: u64, size: usize, channels: usize) -> Result<()> {
    let desk = DeskConfig { dims: Dims::new(size, size, channels), seed, ..DeskConfig::default() };
    let gen = DeskGenerator::new(desk)?;
    fs::create_dir_all(out)?;
    for (name, offset, count) in [("train", 0, train), ("val", 1u64 << 40, val)] {
        let ds = gen.dataset(offset, count)?;
        let path = out.join(format!("{name}.dimg"));
        let bytes = write_packed(&ds, &path)?;
        println!("{}: {count} images, {bytes} bytes", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct ReinforceOutput<'a> {
    store: String,
    sha256: String,
    #[serde(flatten)]
    stats: &'a ReinforceStats,
}

pub fn reinforce(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    cfg.require(&["data.train", "teacher.checkpoint"])?;
    let job = cfg.reinforce_job()?;
    let dir = run_dir(&cfg, "reinforce")?;
    let ds = load_dataset(&cfg, "data.train")?;
    job.validate(ds.num_classes())?;
    let teacher = load_teacher(&cfg)?;
    let path = match cfg.get("store.path") {
        Some(p) => PathBuf::from(p),
        None => dir.join("store.drst"),
    };
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let (w, stats) = reinforce_into(&ds, &teacher, &job, BufWriter::new(file), None)?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    let sha256 = sha256_file(&path)?;
    write_json(
        &dir.join("stats.json"),
        &ReinforceOutput { store: path.display().to_string(), sha256: sha256.clone(), stats: &stats },
    )?;
    fs::write(dir.join("digest.txt"), format!("{sha256}  {}\n", path.display()))?;
    println!(
        "{}: {} records, {} bytes, {:.1}s ({:.1} images/s), sha256 {sha256}",
        path.display(),
        stats.records,
        stats.bytes,
        stats.wall_secs,
        stats.throughput
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainOutput {
    objective: Objective,
    epochs: usize,
    total_steps: u64,
    teacher_calls: u64,
    mean_iteration_seconds: f64,
    final_val_acc: Option<f64>,
    final_ece: Option<f64>,
    checkpoint_sha256: String,
}

pub fn train(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    cfg.require(&["data.train"])?;
    let tc = cfg.train_config()?;
    match tc.objective {
        Objective::Reinforced => cfg.require(&["store.path"])?,
        Objective::OnlineKdImitation | Objective::OnlineKdInvariance => cfg.require(&["teacher.checkpoint"])?,
        Objective::Erm => {}
    }
    let dir = run_dir(&cfg, "train")?;
    let ds = load_dataset(&cfg, "data.train")?;
    let val = match cfg.get("data.val") {
        Some(_) => Some(load_dataset(&cfg, "data.val")?),
        None => None,
    };
    let hw = (ds.dims().height, ds.dims().width);
    let mut model = Model::new(cfg.arch()?, ds.dims(), ds.num_classes(), tc.seed)?;
    let policy = AugmentationPolicy::new(cfg.train_variant()?);
    let teacher = match tc.objective {
        Objective::OnlineKdImitation | Objective::OnlineKdInvariance => Some(load_teacher(&cfg)?),
        _ => None,
    };
    let store = match tc.objective {
        Objective::Reinforced => Some(Store::open(cfg.path("store.path")?)?),
        _ => None,
    };
    let library = match (&store, cfg.usize("train.mix_library")?) {
        (Some(s), n) if n > 0 => Some(MixLibrary::build(s, &ds, n, tc.seed, hw)?),
        _ => None,
    };
    let mut source: Box<dyn TrainSource + '_> = match tc.objective {
        Objective::Erm => Box::new(AugmentedSource::new(
            &ds,
            policy,
            TargetMode::HardLabels { smoothing: tc.effective_label_smoothing() as f32 },
            tc.seed,
            hw,
        )?),
        Objective::OnlineKdImitation => {
            Box::new(AugmentedSource::new(&ds, policy, TargetMode::Imitation(teacher.as_ref().unwrap()), tc.seed, hw)?)
        }
        Objective::OnlineKdInvariance => {
            Box::new(AugmentedSource::new(&ds, policy, TargetMode::Invariance(teacher.as_ref().unwrap()), tc.seed, hw)?)
        }
        Objective::Reinforced => {
            let mut l = ReinforcedLoader::new(store.as_ref().unwrap(), &ds, tc.seed, hw)?
                .with_workers(cfg.usize("train.loader_workers")?);
            if let Some(s) = cfg.curriculum(tc.epochs)? {
                l = l.with_schedule(s);
            }
            if let Some(lib) = &library {
                l = l.with_partners(lib);
            }
            Box::new(l)
        }
    };
    let calls = global_teacher_calls();
    let history = fit(&mut model, source.as_mut(), val.as_ref(), &tc)?;
    let teacher_calls = global_teacher_calls() - calls;
    let ckpt = dir.join("model.ckpt");
    save_checkpoint(&model, &ckpt)?;
    fs::write(dir.join("history.csv"), history.to_csv())?;
    let sha = sha256_file(&ckpt)?;
    fs::write(dir.join("digest.txt"), format!("{sha}  {}\n", ckpt.display()))?;
    write_json(
        &dir.join("stats.json"),
        &TrainOutput {
            objective: tc.objective,
            epochs: tc.epochs,
            total_steps: history.total_steps,
            teacher_calls,
            mean_iteration_seconds: history.mean_iteration_seconds(),
            final_val_acc: history.final_val_acc(),
            final_ece: history.final_ece(),
            checkpoint_sha256: sha,
        },
    )?;
    match history.final_val_acc() {
        Some(acc) => println!("{}: {} steps, val acc {:.4}", tc.objective, history.total_steps, acc),
        None => println!("{}: {} steps", tc.objective, history.total_steps),
    }
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn inspect(path: &Path, image: Option<u64>, validate: bool) -> Result<()> {
    let s = Store::open(path).with_context(|| format!("opening {}", path.display()))?;
    let h = s.header();
    let variant = Variant::from_flags(h.flags);
    println!("file          {}", path.display());
    println!("variant       {variant} (flags {:#06x})", h.flags.bits());
    println!("classes       {}", h.num_classes);
    println!("top_k         {}", h.top_k);
    println!("samples/image {}", h.samples_per_image);
    println!("images        {}", h.num_images);
    println!("teacher       {}", h.teacher_id);
    println!("checksum      {:#018x}", s.checksum());
    let mut terms = vec![format!("{PROB_ENTRY_BYTES}×{}", h.top_k), RRC_BLOCK_BYTES.to_string()];
    if h.flags.has_ra_re() {
        terms.push(RA_RE_BLOCK_BYTES.to_string());
    }
    if h.flags.has_mixing() {
        terms.push(MIXING_BLOCK_BYTES.to_string());
    }
    println!("record        {} = {} B", terms.join(" + "), h.record_size());
    println!(
        "total         {} + {}×{}×{} = {} B",
        h.header_len(),
        h.num_images,
        h.samples_per_image,
        h.record_size(),
        h.total_size()?
    );
    if validate {
        let report = store::validate(&s);
        println!("validation    {} records checked, {} violations", report.records_checked, report.total);
        for v in &report.violations {
            match v.index {
                Some(j) => println!("  image {} record {j}: {}", v.image, v.message),
                None => println!("  image {}: {}", v.image, v.message),
            }
        }
    }
    if let Some(i) = image {
        if i >= s.num_images() {
            return Err(Error::InvalidArgument(format!("image {i} out of range (store has {})", s.num_images())).into());
        }
        let group = s.group(i)?;
        for (j, r) in group.iter().enumerate() {
            let probs: Vec<String> = r.probs.entries().iter().map(|(c, p)| format!("{c}:{p:.4}")).collect();
            println!("[{j}] conf {:.4}  {}", r.confidence(), probs.join(" "));
            println!("     {:?}", r.descriptor);
        }
        let sorted = group.windows(2).all(|w| w[0].confidence() >= w[1].confidence());
        println!("confidence order: {}", if sorted { "non-increasing" } else { "VIOLATED" });
    }
    Ok(())
}

#[derive(Serialize)]
struct StoreStats {
    variant: String,
    images: u64,
    samples_per_image: usize,
    records: u64,
    bytes: u64,
    record_size: usize,
    mean_confidence: f64,
    min_confidence: f64,
    max_confidence: f64,
    mean_entropy: f64,
    /// Ten equal-width bins over [0, 1].
    confidence_histogram: Vec<u64>,
    top1_class_counts: Vec<u64>,
    violations: u64,
}

pub fn stats(path: &Path) -> Result<()> {
    let s = Store::open(path).with_context(|| format!("opening {}", path.display()))?;
    let h = s.header();
    let k = h.num_classes as usize;
    let mut hist = vec![0u64; 10];
    let mut top1 = vec![0u64; k];
    let (mut sum_c, mut sum_h, mut min_c, mut max_c) = (0.0, 0.0, f64::INFINITY, 0f64);
    for r in s.records() {
        let r = r?;
        let c = r.confidence();
        sum_c += c;
        min_c = min_c.min(c);
        max_c = max_c.max(c);
        hist[((c * 10.0) as usize).min(9)] += 1;
        sum_h += entropy(&densify(&r.probs, k)?);
        if let Some(&(cls, _)) = r.probs.entries().first() {
            top1[cls as usize] += 1;
        }
    }
    let n = h.num_records().max(1) as f64;
    let out = StoreStats {
        variant: Variant::from_flags(h.flags).to_string(),
        images: h.num_images,
        samples_per_image: h.samples_per_image as usize,
        records: h.num_records(),
        bytes: s.as_bytes().len() as u64,
        record_size: h.record_size(),
        mean_confidence: sum_c / n,
        min_confidence: if h.num_records() == 0 { 0.0 } else { min_c },
        max_confidence: max_c,
        mean_entropy: sum_h / n,
        confidence_histogram: hist,
        top1_class_counts: top1,
        violations: store::validate(&s).total,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

pub fn report(quick: bool, out: &Path, only: &[u8], strict: bool) -> Result<()> {
    if let Some(bad) = only.iter().find(|&&id| !(1..=8).contains(&id)) {
        return Err(Error::InvalidArgument(format!("no criterion {bad}; ids are 1-8")).into());
    }
    let cfg = if quick { LabConfig::quick() } else { LabConfig::full() };
    let report = run_report(cfg, only)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("report.md"), report.to_markdown())?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    write_json(&out.join("report.json"), &report)?;
    for o in &report.outcomes {
        println!("criterion {} ({}): {}: {}", o.id, o.title, o.status(), o.summary);
    }
    println!("wrote {}", out.display());
    let failed = report.blocking_failures();
    if strict && !failed.is_empty() {
        anyhow::bail!("blocking criteria failed: {failed:?}");
    }
    Ok(())
}
