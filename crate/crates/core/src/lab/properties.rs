//! Randomised property checks with independent oracles. Each check returns
//! a [`Check`] instead of panicking so reports can list every outcome.

use std::collections::HashMap;

use serde::Serialize;

use crate::augment::{
    augment_online, cutmix_paste, mixup_blend, replay, sample_descriptor, AugmentationDescriptor, AugmentationPolicy,
    CountingPartners, CutMix, MixCoefficients, MixUp, RaSlot, Rect, Variant, VariantFlags, RA_OP_COUNT,
};
use crate::dataset::{Dims, Image, LabeledDataset};
use crate::desk::{DeskConfig, DeskGenerator};
use crate::loader::{double_mix_expand, CurriculumSchedule, ReinforcedLoader, WindowPreset};
use crate::nn::{
    images_to_input, kl_divergence, softmax_kl, Arch, AugmentedSource, LayerKind, Model, TargetMode, TrainSource,
};
use crate::reinforcer::{reinforce, ReinforceJob, Selection};
use crate::rng::SeededRng;
use crate::store::{ReinforcementRecord, Store, StoreHeader};
use crate::teacher::{ModelTeacher, SparseProbs};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), passed, detail: detail.into() }
    }

    fn from_result(name: &str, r: Result<String>) -> Self {
        match r {
            Ok(d) => Self::new(name, true, d),
            Err(e) => Self::new(name, false, e.to_string()),
        }
    }
}

fn fail(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn random_image(dims: Dims, rng: &mut SeededRng) -> Image {
    let data = (0..dims.len()).map(|_| rng.below(256) as u8).collect();
    Image::new(dims, data).expect("dims are valid")
}

fn random_rect(rng: &mut SeededRng) -> Rect {
    let w = rng.uniform() as f32;
    let h = rng.uniform() as f32;
    let x = rng.uniform() as f32 * (1.0 - w);
    let y = rng.uniform() as f32 * (1.0 - h);
    Rect::new(x, y, w, h)
}

fn random_record(flags: VariantFlags, k: usize, top_k: usize, n_img: u64, rng: &mut SeededRng) -> ReinforcementRecord {
    let mut w: Vec<f64> = (0..k).map(|_| rng.uniform() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    let mut idx: Vec<u32> = (0..k as u32).collect();
    idx.sort_by(|&a, &b| w[b as usize].total_cmp(&w[a as usize]).then(a.cmp(&b)));
    let entries = idx[..top_k].iter().map(|&i| (i, w[i as usize] as f32)).collect();
    let mut d = AugmentationDescriptor::identity(flags);
    d.crop = random_rect(rng);
    d.flip = rng.bernoulli(0.5);
    if flags.has_ra_re() {
        for slot in &mut d.ra {
            if rng.bernoulli(0.8) {
                *slot = RaSlot { op: rng.below(RA_OP_COUNT) as i32, magnitude: rng.uniform_range(0.0, 10.0) as f32 };
            }
        }
        if rng.bernoulli(0.5) {
            d.erase = random_rect(rng);
        }
    }
    if flags.has_mixing() && n_img > 0 && rng.bernoulli(0.5) {
        let partner = rng.below(n_img as usize) as i32;
        if rng.bernoulli(0.5) {
            d.mixup = MixUp { partner, lambda: rng.uniform() as f32 };
        } else {
            d.cutmix = CutMix { partner, rect: random_rect(rng) };
        }
    }
    ReinforcementRecord { probs: SparseProbs::from_entries(entries), descriptor: d }
}

/// Random stores survive encode → decode → encode bit-exactly.
pub fn codec_roundtrip(cases: usize, seed: u64) -> Check {
    let run = || -> Result<String> {
        let mut bytes_total = 0usize;
        for case in 0..cases {
            let mut rng = SeededRng::new(seed, case as u64);
            let variant = Variant::ALL[rng.below(4)];
            let k = 2 + rng.below(19);
            let top_k = 1 + rng.below(k.min(12));
            let n = 1 + rng.below(4);
            let n_img = rng.below(5) as u64;
            let id: String = (0..rng.below(9)).map(|_| (b'a' + rng.below(26) as u8) as char).collect();
            let header = StoreHeader::new(variant.flags(), k as u32, top_k as u8, n as u16, n_img, id)?;
            let groups: Vec<Vec<ReinforcementRecord>> = (0..n_img)
                .map(|_| {
                    let mut g: Vec<_> =
                        (0..n).map(|_| random_record(variant.flags(), k, top_k, n_img, &mut rng)).collect();
                    g.sort_by(|a, b| b.confidence().total_cmp(&a.confidence()));
                    g
                })
                .collect();
            let store = Store::build(header.clone(), &groups)?;
            let bytes = store.as_bytes().to_vec();
            if bytes.len() as u64 != header.total_size()? {
                return Err(fail(format!("case {case}: size {} != total_size", bytes.len())));
            }
            let back = Store::from_bytes(bytes.clone(), true)?;
            for (i, g) in groups.iter().enumerate() {
                if &back.group(i as u64)? != g {
                    return Err(fail(format!("case {case}: group {i} decoded differently")));
                }
            }
            let again = Store::build(back.header().clone(), (0..n_img).map(|i| back.group(i).unwrap()))?;
            if again.as_bytes() != bytes.as_slice() {
                return Err(fail(format!("case {case}: re-encoding changed bytes")));
            }
            bytes_total += bytes.len();
        }
        Ok(format!("{cases} stores, {bytes_total} bytes, bit-exact"))
    };
    Check::from_result("codec roundtrip fuzz", run())
}

fn small_dataset(dims: Dims, count: usize, seed: u64) -> Result<LabeledDataset> {
    let gen = DeskGenerator::new(DeskConfig { dims, seed, ..DeskConfig::default() })?;
    gen.dataset(0, count)
}

/// Replaying a descriptor twice, and augmenting online from the same
/// stream, give identical bytes.
pub fn replay_equivalence(cases: usize, seed: u64) -> Check {
    let run = || -> Result<String> {
        let sets = [small_dataset(Dims::new(16, 16, 1), 24, seed)?, small_dataset(Dims::new(12, 10, 3), 24, seed + 1)?];
        let targets = [(16, 16), (8, 8), (12, 20)];
        for case in 0..cases {
            let mut pick = SeededRng::new(seed, 1_000_000 + case as u64);
            let ds = &sets[pick.below(2)];
            let variant = Variant::ALL[pick.below(4)];
            let hw = targets[pick.below(3)];
            let id = pick.below(ds.len());
            let policy = AugmentationPolicy::new(variant);
            let mut r1 = SeededRng::new(seed, case as u64);
            let d = sample_descriptor(&policy, ds.dims(), id as u64, ds.len(), &mut r1)?;
            let a = replay(&d, ds.image(id), id as u64, ds, hw)?;
            let b = replay(&d, ds.image(id), id as u64, ds, hw)?;
            let mut r2 = SeededRng::new(seed, case as u64);
            let c = augment_online(&policy, ds, id, hw, &mut r2)?;
            if a != b {
                return Err(fail(format!("case {case}: replay is not deterministic")));
            }
            if a != c {
                return Err(fail(format!("case {case}: online augmentation differs from replay ({variant})")));
            }
        }
        Ok(format!("{cases} cases byte-identical"))
    };
    Check::from_result("replay determinism and online equivalence", run())
}

/// The reinforcement pass writes the same bytes with 1 and 8 workers.
pub fn worker_invariance(seed: u64) -> Check {
    let run = || -> Result<String> {
        let ds = small_dataset(Dims::new(16, 16, 1), 40, seed)?;
        let model = Model::new(Arch::TeacherL, ds.dims(), ds.num_classes(), seed)?;
        let teacher = ModelTeacher::new(model, "random-teacher-l");
        let mut job = ReinforceJob::new(AugmentationPolicy::new(Variant::RrcMixingRaRe), 3);
        job.candidate_multiplier = 2;
        job.selection = Selection::KMeansDiverse;
        job.seed = seed;
        job.top_k = 4;
        let mut digests = Vec::new();
        let mut first: Option<Vec<u8>> = None;
        for workers in [1, 2, 8] {
            job.workers = workers;
            let (store, _) = reinforce(&ds, &teacher, &job)?;
            digests.push(format!("{workers}w:{:016x}", store.checksum()));
            match &first {
                None => first = Some(store.into_bytes()),
                Some(f) if f.as_slice() != store.as_bytes() => {
                    return Err(fail(format!("{workers} workers wrote different bytes")));
                }
                Some(_) => {}
            }
        }
        Ok(format!("identical stores ({})", digests.join(", ")))
    };
    Check::from_result("worker-count invariance", run())
}

/// Layer output shapes recomputed from the architecture.
fn shapes(model: &Model) -> Vec<(usize, usize, usize)> {
    let d = model.input_dims();
    let mut s = vec![(d.channels, d.height, d.width)];
    for l in model.layers() {
        let (c, h, w) = *s.last().unwrap();
        s.push(match *l {
            LayerKind::Conv3x3 { out_c, stride } => (out_c, (h - 1) / stride + 1, (w - 1) / stride + 1),
            LayerKind::Dense { outputs } => (outputs, 1, 1),
            LayerKind::Relu => (c, h, w),
            LayerKind::GlobalAvgPool => (c, 1, 1),
        });
    }
    s
}

/// Straightforward f64 forward pass used as the finite-difference oracle.
fn reference_logits(model: &Model, params: &[Vec<f64>], input: &[f64], batch: usize) -> Vec<f64> {
    let sh = shapes(model);
    let mut x = input.to_vec();
    let mut p = 0;
    for (i, layer) in model.layers().iter().enumerate() {
        let (ci, hi, wi) = sh[i];
        let (co, ho, wo) = sh[i + 1];
        let (il, ol) = (ci * hi * wi, co * ho * wo);
        let mut y = vec![0f64; batch * ol];
        match *layer {
            LayerKind::Conv3x3 { stride, .. } => {
                let (w, b) = (&params[p], &params[p + 1]);
                p += 2;
                for n in 0..batch {
                    for oc in 0..co {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let mut acc = b[oc];
                                for ic in 0..ci {
                                    for ky in 0..3 {
                                        for kx in 0..3 {
                                            let iy = (oy * stride + ky) as isize - 1;
                                            let ix = (ox * stride + kx) as isize - 1;
                                            if iy < 0 || ix < 0 || iy >= hi as isize || ix >= wi as isize {
                                                continue;
                                            }
                                            let xv = x[n * il + ic * hi * wi + iy as usize * wi + ix as usize];
                                            acc += w[((oc * ci + ic) * 3 + ky) * 3 + kx] * xv;
                                        }
                                    }
                                }
                                y[n * ol + oc * ho * wo + oy * wo + ox] = acc;
                            }
                        }
                    }
                }
            }
            LayerKind::Dense { outputs } => {
                let (w, b) = (&params[p], &params[p + 1]);
                p += 2;
                for n in 0..batch {
                    for o in 0..outputs {
                        y[n * ol + o] = b[o] + (0..il).map(|j| w[o * il + j] * x[n * il + j]).sum::<f64>();
                    }
                }
            }
            LayerKind::Relu => y = x.iter().map(|&v| v.max(0.0)).collect(),
            LayerKind::GlobalAvgPool => {
                for n in 0..batch {
                    for c in 0..ci {
                        let plane = &x[n * il + c * hi * wi..][..hi * wi];
                        y[n * ol + c] = plane.iter().sum::<f64>() / (hi * wi) as f64;
                    }
                }
            }
        }
        x = y;
    }
    x
}

fn reference_loss(model: &Model, params: &[Vec<f64>], input: &[f64], targets: &[f64], batch: usize) -> f64 {
    let k = model.num_classes();
    let logits = reference_logits(model, params, input, batch);
    let mut total = 0.0;
    for (z, t) in logits.chunks(k).zip(targets.chunks(k)) {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (zi, &ti) in z.iter().zip(t) {
            if ti > 0.0 {
                total += ti * (ti.ln() - (zi - lse));
            }
        }
    }
    total / batch as f64
}

/// Largest per-tensor relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the
/// analytic gradient and central differences of the f64 reference.
pub fn gradient_error(arch: Arch, dims: Dims, classes: usize, batch: usize, seed: u64) -> Result<(f64, String)> {
    let mut model = Model::new(arch, dims, classes, seed)?;
    let mut rng = SeededRng::new(seed, 99);
    // Non-zero biases so relu kinks are not aligned with the init.
    for t in model.params_mut() {
        if t.name.ends_with("bias") {
            t.data.iter_mut().for_each(|v| *v = rng.uniform_range(-0.2, 0.2) as f32);
        }
    }
    let images: Vec<Image> = (0..batch).map(|_| random_image(dims, &mut rng)).collect();
    let input = images_to_input(&images);
    let mut targets = Vec::with_capacity(batch * classes);
    for _ in 0..batch {
        let w: Vec<f64> = (0..classes).map(|_| rng.uniform() + 0.05).collect();
        let s: f64 = w.iter().sum();
        targets.extend(w.iter().map(|v| v / s));
    }
    let t32: Vec<f32> = targets.iter().map(|&v| v as f32).collect();
    let fwd = model.forward(&input, batch)?;
    let (_, g) = softmax_kl(fwd.logits(), &t32, classes);
    let analytic = model.backward(&fwd, &g);
    let mut params: Vec<Vec<f64>> = model.params().iter().map(|t| t.data.iter().map(|&v| v as f64).collect()).collect();
    let x64: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let h = 1e-6;
    let mut worst = (0.0f64, String::new());
    for ti in 0..params.len() {
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for j in 0..params[ti].len() {
            let orig = params[ti][j];
            params[ti][j] = orig + h;
            let up = reference_loss(&model, &params, &x64, &targets, batch);
            params[ti][j] = orig - h;
            let down = reference_loss(&model, &params, &x64, &targets, batch);
            params[ti][j] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = analytic[ti][j] as f64;
            diff2 += (num - ana) * (num - ana);
            a2 += ana * ana;
            n2 += num * num;
        }
        let rel = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-12);
        if rel >= worst.0 {
            worst = (rel, format!("{arch} {}", model.params()[ti].name));
        }
    }
    Ok(worst)
}

/// Every layer kind, through every architecture preset.
pub fn gradient_checks(seed: u64) -> Check {
    let run = || -> Result<String> {
        let cases = [
            (Arch::Linear, Dims::new(5, 4, 3)),
            (Arch::Mlp { hidden: 7 }, Dims::new(6, 6, 1)),
            (Arch::StudentS, Dims::new(7, 5, 1)),
            (Arch::StudentS, Dims::new(6, 6, 3)),
            (Arch::TeacherL, Dims::new(7, 6, 1)),
            (Arch::ConvPool, Dims::new(5, 5, 3)),
        ];
        let mut worst = (0.0f64, String::new());
        for (i, (arch, dims)) in cases.into_iter().enumerate() {
            let (e, at) = gradient_error(arch, dims, 4, 3, seed + i as u64)?;
            if e > worst.0 {
                worst = (e, at);
            }
        }
        if worst.0 < 1e-4 {
            Ok(format!("max rel. error {:.2e} ({})", worst.0, worst.1))
        } else {
            Err(fail(format!("rel. error {:.2e} at {}", worst.0, worst.1)))
        }
    };
    Check::from_result("gradient checks", run())
}

/// KL(t‖s) ≥ 0 and KL(p‖p) = 0 on random distributions.
pub fn kl_properties(cases: usize, seed: u64) -> Check {
    let mut rng = SeededRng::new(seed, 7);
    let mut min_kl = f64::INFINITY;
    let mut max_self = 0f64;
    for _ in 0..cases {
        let k = 2 + rng.below(15);
        let dist = |rng: &mut SeededRng, zeros: bool| {
            let mut w: Vec<f64> =
                (0..k).map(|_| if zeros && rng.bernoulli(0.3) { 0.0 } else { rng.uniform() + 1e-6 }).collect();
            if w.iter().all(|&v| v == 0.0) {
                w[0] = 1.0;
            }
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let t = dist(&mut rng, true);
        let s = dist(&mut rng, false);
        let log_s: Vec<f64> = s.iter().map(|v| v.ln()).collect();
        min_kl = min_kl.min(kl_divergence(&log_s, &t, k).0);
        let log_t: Vec<f64> = t.iter().map(|&v| if v > 0.0 { v.ln() } else { -1e3 }).collect();
        max_self = max_self.max(kl_divergence(&log_t, &t, k).0.abs());
    }
    Check::new(
        "KL non-negativity and zero at equality",
        min_kl >= -1e-12 && max_self <= 1e-9,
        format!("{cases} pairs: min KL {min_kl:.3e}, max |KL(p‖p)| {max_self:.3e}"),
    )
}

/// Every image id exactly once per epoch for several windows and batch sizes.
pub fn epoch_coverage(seed: u64) -> Check {
    let run = || -> Result<String> {
        let ds = small_dataset(Dims::new(16, 16, 1), 37, seed)?;
        let model = Model::new(Arch::StudentS, ds.dims(), ds.num_classes(), seed)?;
        let teacher = ModelTeacher::new(model, "random-student-s");
        let mut job = ReinforceJob::new(AugmentationPolicy::new(Variant::RrcMixingRaRe), 8);
        job.top_k = 3;
        job.seed = seed;
        let (store, _) = reinforce(&ds, &teacher, &job)?;
        let schedules = [
            None,
            Some(CurriculumSchedule::preset(WindowPreset::Easy, WindowPreset::All, 4)),
            Some(CurriculumSchedule::preset(WindowPreset::Hard, WindowPreset::Easy, 4)),
            Some(CurriculumSchedule::new((40.0, 41.0), (99.0, 100.0), 4)?),
        ];
        let mut checked = 0;
        let check_epoch = |src: &mut dyn TrainSource, epoch: usize, batch: usize| -> Result<()> {
            src.reset(epoch)?;
            let mut seen = vec![0usize; ds.len()];
            while let Some(b) = src.next_batch(batch)? {
                for id in b.image_ids {
                    seen[id] += 1;
                }
            }
            match seen.iter().position(|&c| c != 1) {
                Some(i) => Err(fail(format!("epoch {epoch}: image {i} seen {} times", seen[i]))),
                None => Ok(()),
            }
        };
        for sched in &schedules {
            let mut loader = ReinforcedLoader::new(&store, &ds, seed, (16, 16))?;
            if let Some(s) = sched {
                loader = loader.with_schedule(s.clone());
            }
            for epoch in 0..5 {
                check_epoch(&mut loader, epoch, 1 + epoch * 4)?;
                checked += 1;
            }
        }
        let mut online = AugmentedSource::new(
            &ds,
            AugmentationPolicy::new(Variant::RrcRaRe),
            TargetMode::HardLabels { smoothing: 0.1 },
            seed,
            (16, 16),
        )?;
        for epoch in 0..3 {
            check_epoch(&mut online, epoch, 10)?;
            checked += 1;
        }
        Ok(format!("{checked} epochs, every image exactly once"))
    };
    Check::from_result("epoch coverage", run())
}

/// Observed apply frequencies within 3σ of the policy probabilities.
pub fn apply_frequencies(n: usize, seed: u64) -> Check {
    let policy = AugmentationPolicy::new(Variant::RrcMixingRaRe);
    let dims = Dims::new(16, 16, 1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut mixed = 0usize;
    for i in 0..n {
        let mut rng = SeededRng::new(seed, i as u64);
        let d = match sample_descriptor(&policy, dims, (i % 100) as u64, 100, &mut rng) {
            Ok(d) => d,
            Err(e) => return Check::new("apply-probability frequencies", false, e.to_string()),
        };
        *counts.entry("flip").or_default() += d.flip as usize;
        *counts.entry("erase").or_default() += d.erase_applied() as usize;
        *counts.entry("ra").or_default() += d.ra.iter().all(|s| !s.is_empty()) as usize;
        if d.mix_applied() {
            mixed += 1;
            *counts.entry("mixup|mix").or_default() += d.mixup.is_applied() as usize;
        }
    }
    *counts.entry("mix").or_default() = mixed;
    let expect = [
        ("flip", policy.flip_prob, n),
        ("erase", policy.erase_prob, n),
        ("mix", policy.mix_prob, n),
        ("mixup|mix", 0.5, mixed),
        ("ra", policy.ra_prob, n),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, p, trials) in expect {
        let obs = counts.get(name).copied().unwrap_or(0) as f64 / trials.max(1) as f64;
        let sigma = (p * (1.0 - p) / trials.max(1) as f64).sqrt();
        let within = (obs - p).abs() <= 3.0 * sigma + 1e-12;
        ok &= within;
        parts.push(format!("{name} {obs:.4} (p {p}, 3σ {:.4})", 3.0 * sigma));
    }
    Check::new("apply-probability frequencies", ok, parts.join("; "))
}

/// `window_at` hits both endpoints of every preset to 1e-9.
pub fn curriculum_endpoints() -> Check {
    let mut worst = 0f64;
    for from in WindowPreset::ALL {
        for to in WindowPreset::ALL {
            for total in [1usize, 7, 100] {
                let s = CurriculumSchedule::preset(from, to, total);
                let (a0, b0) = s.window_at(0);
                let (a1, b1) = s.window_at(total);
                for d in [a0 - s.start.0, b0 - s.start.1, a1 - s.end.0, b1 - s.end.1] {
                    worst = worst.max(d.abs());
                }
            }
        }
    }
    Check::new(
        "curriculum endpoint fidelity",
        worst <= 1e-9,
        format!("9 presets × 3 lengths, max deviation {worst:.1e}"),
    )
}

/// MixUp and CutMix against per-pixel oracles.
pub fn mixing_pixel_oracles(cases: usize, seed: u64) -> Check {
    let run = || -> Result<String> {
        for case in 0..cases {
            let mut rng = SeededRng::new(seed, case as u64);
            let dims = Dims::new(1 + rng.below(20), 1 + rng.below(20), if rng.bernoulli(0.5) { 1 } else { 3 });
            let a = random_image(dims, &mut rng);
            let b = random_image(dims, &mut rng);
            let lambda = rng.uniform() as f32;
            let m = mixup_blend(&a, &b, lambda)?;
            for (i, ((&pa, &pb), &pm)) in a.data().iter().zip(b.data()).zip(m.data()).enumerate() {
                let exact = lambda as f64 * pa as f64 + (1.0 - lambda as f64) * pb as f64;
                let near_tie = (exact.fract() - 0.5).abs() < 1e-3;
                let ok = pm as f64 == exact.round() || (near_tie && (pm as f64 - exact).abs() <= 0.5 + 1e-3);
                if !ok {
                    return Err(fail(format!("mixup case {case} pixel {i}: {pm} vs {exact}")));
                }
            }
            let rect = random_rect(&mut rng);
            let mut c = a.clone();
            cutmix_paste(&mut c, &b, rect)?;
            let (w, h) = (dims.width as f32, dims.height as f32);
            let x0 = (rect.x * w).round().clamp(0.0, w);
            let x1 = ((rect.x + rect.w) * w).round().clamp(x0, w);
            let y0 = (rect.y * h).round().clamp(0.0, h);
            let y1 = ((rect.y + rect.h) * h).round().clamp(y0, h);
            for y in 0..dims.height {
                for x in 0..dims.width {
                    let inside = (x as f32) >= x0 && (x as f32) < x1 && (y as f32) >= y0 && (y as f32) < y1;
                    for ch in 0..dims.channels {
                        let want = if inside { b.get(y, x, ch) } else { a.get(y, x, ch) };
                        if c.get(y, x, ch) != want {
                            return Err(fail(format!("cutmix case {case} pixel ({y}, {x}, {ch})")));
                        }
                    }
                }
            }
        }
        Ok(format!("{cases} mixup and {cases} cutmix cases"))
    };
    Check::from_result("mixup/cutmix pixel oracles", run())
}

/// Double-mix produces the same pixels as two separate replays with half
/// the partner loads.
pub fn double_mix_loads(pairs: usize, seed: u64) -> Check {
    let run = || -> Result<String> {
        let ds = small_dataset(Dims::new(16, 16, 1), 30, seed)?;
        let policy = AugmentationPolicy::new(Variant::RrcMixing);
        let mut descs = Vec::new();
        let mut ids = Vec::new();
        let mut c = 0u64;
        while descs.len() < pairs {
            let mut rng = SeededRng::new(seed, c);
            c += 1;
            let id = rng.below(ds.len());
            let d = sample_descriptor(&policy, ds.dims(), id as u64, ds.len(), &mut rng)?;
            if !d.mix_applied() {
                continue;
            }
            let second = if d.mixup.is_applied() {
                MixCoefficients::Lambda(rng.uniform() as f32)
            } else {
                MixCoefficients::Box(random_rect(&mut rng))
            };
            descs.push(d.make_double_mix(second)?);
            ids.push(id as u64);
        }
        let single = CountingPartners::new(&ds);
        let mut separate = Vec::new();
        for ((a, b), &id) in descs.iter().zip(&ids) {
            separate.push(replay(a, ds.image(id as usize), id, &single, (16, 16))?);
            separate.push(replay(b, ds.image(id as usize), id, &single, (16, 16))?);
        }
        let double = CountingPartners::new(&ds);
        let expanded = double_mix_expand(&descs, &ids, &ds, &double, (16, 16))?;
        if expanded != separate {
            return Err(fail("double-mix outputs differ from separate replays"));
        }
        let per_sample = |loads: u64| loads as f64 / (2 * pairs) as f64;
        let (s, d) = (per_sample(single.loads()), per_sample(double.loads()));
        if (d - s / 2.0).abs() > 1e-12 {
            return Err(fail(format!("partner loads per sample {d} vs {s}")));
        }
        Ok(format!("{} outputs; partner loads per sample {s:.2} → {d:.2}", expanded.len()))
    };
    Check::from_result("double-mix partner loads", run())
}

/// The blocking property suites.
pub fn property_suite(seed: u64) -> Vec<Check> {
    vec![
        codec_roundtrip(1000, seed),
        replay_equivalence(1000, seed),
        worker_invariance(seed),
        gradient_checks(seed),
        kl_properties(1000, seed),
        epoch_coverage(seed),
        apply_frequencies(10_000, seed),
        curriculum_endpoints(),
    ]
}
