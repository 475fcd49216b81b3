//! End-to-end: desk data → teacher → store on disk → reinforced student.

use dr_core::augment::{replay, AugmentationPolicy, Variant};
use dr_core::dataset::{load_packed, write_packed, Dims, LabeledDataset};
use dr_core::desk::{DeskConfig, DeskGenerator};
use dr_core::loader::{CurriculumSchedule, ReinforcedLoader};
use dr_core::nn::{evaluate, train, Arch, Model, Objective, TrainConfig, TrainSource};
use dr_core::reinforcer::{reinforce, ReinforceJob, Selection};
use dr_core::store::{self, read_store, Store};
use dr_core::teacher::{densify, sparsify, ModelTeacher, OracleTeacher, Teacher};
use dr_core::Error;
use tempfile::TempDir;

fn desk(count: usize) -> (DeskGenerator, LabeledDataset) {
    let gen = DeskGenerator::new(DeskConfig { dims: Dims::new(12, 12, 1), ..DeskConfig::default() }).unwrap();
    let ds = gen.dataset(0, count).unwrap();
    (gen, ds)
}

#[test]
fn packed_dataset_roundtrips_through_disk() {
    let (_, ds) = desk(25);
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("d.dimg");
    write_packed(&ds, &path).unwrap();
    let back = load_packed(&path).unwrap();
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(back.images(), ds.images());
}

#[test]
fn stored_targets_are_the_teachers_outputs_on_replayed_views() {
    let (gen, ds) = desk(20);
    let teacher = OracleTeacher::new(gen);
    let mut job = ReinforceJob::new(AugmentationPolicy::new(Variant::RrcMixingRaRe), 5);
    job.top_k = 4;
    let (store, stats) = reinforce(&ds, &teacher, &job).unwrap();
    assert_eq!(stats.records, 100);
    assert_eq!(stats.bytes, store.header().total_size().unwrap());
    let hw = (ds.dims().height, ds.dims().width);
    for i in [0u64, 7, 19] {
        for (j, rec) in store.group(i).unwrap().into_iter().enumerate() {
            let view = replay(&rec.descriptor, ds.image(i as usize), i, &ds, hw).unwrap();
            let row = teacher.predict(std::slice::from_ref(&view)).unwrap();
            let want = sparsify(&row, 4).unwrap();
            assert_eq!(rec.probs, want, "image {i} record {j}");
        }
    }
}

#[test]
fn store_file_roundtrip_and_corruption() {
    let (gen, ds) = desk(12);
    let teacher = OracleTeacher::new(gen);
    let mut job = ReinforceJob::new(AugmentationPolicy::new(Variant::RrcRaRe), 3);
    job.top_k = 3;
    let (store, _) = reinforce(&ds, &teacher, &job).unwrap();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("s.drst");
    store.save(&path).unwrap();
    let back = read_store(&path).unwrap();
    assert_eq!(back.as_bytes(), store.as_bytes());
    assert!(store::validate(&back).is_clean());

    // A flipped byte in the record area trips the checksum.
    let mut bytes = store.as_bytes().to_vec();
    let last = bytes.len() - 3;
    bytes[last] ^= 0x40;
    assert!(matches!(Store::from_bytes(bytes, true), Err(Error::Checksum { .. })));

    // Truncation names the record that is cut off.
    let mut short = store.as_bytes().to_vec();
    short.truncate(short.len() - 1);
    match Store::from_bytes(short, false) {
        Err(Error::Decode { record: Some(r), .. }) => assert_eq!(r, store.header().num_records() - 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn reinforced_student_learns_without_teacher_calls() {
    let (gen, ds) = desk(400);
    let val = gen.dataset(1 << 40, 200).unwrap();
    let mut tmodel = Model::new(Arch::Mlp { hidden: 32 }, ds.dims(), 10, 1).unwrap();
    let mut src = dr_core::nn::AugmentedSource::new(
        &ds,
        AugmentationPolicy::degenerate(Variant::Rrc),
        dr_core::nn::TargetMode::HardLabels { smoothing: 0.0 },
        1,
        (12, 12),
    )
    .unwrap();
    let mut tc = TrainConfig::new(Objective::Erm);
    tc.epochs = 8;
    tc.batch_size = 32;
    train(&mut tmodel, &mut src, None, &tc).unwrap();
    let teacher = ModelTeacher::new(tmodel, "mlp");
    let mut job = ReinforceJob::new(AugmentationPolicy::new(Variant::Rrc), 6);
    job.top_k = 3;
    job.selection = Selection::MaxEntropy;
    job.candidate_multiplier = 2;
    let (store, _) = reinforce(&ds, &teacher, &job).unwrap();

    let mut student = Model::new(Arch::Linear, ds.dims(), 10, 3).unwrap();
    let before = evaluate(&student, &val).unwrap();
    let mut loader = ReinforcedLoader::new(&store, &ds, 5, (12, 12))
        .unwrap()
        .with_schedule(CurriculumSchedule::parse_preset("easy->all", 6).unwrap());
    let mut sc = TrainConfig::new(Objective::Reinforced);
    sc.epochs = 6;
    sc.batch_size = 32;
    let history = train(&mut student, &mut loader, Some(&val), &sc).unwrap();
    assert_eq!(loader.teacher_calls(), 0);
    assert_eq!(history.total_steps, 6 * 400u64.div_ceil(32));
    let after = history.final_val_acc().unwrap();
    assert!(after > before + 0.2, "{before} -> {after}");
}

#[test]
fn densify_of_stored_probs_sums_to_one() {
    let (gen, ds) = desk(6);
    let teacher = OracleTeacher::new(gen);
    let mut job = ReinforceJob::new(AugmentationPolicy::new(Variant::Rrc), 4);
    job.top_k = 2;
    let (store, _) = reinforce(&ds, &teacher, &job).unwrap();
    for rec in store.records() {
        let row = densify(&rec.unwrap().probs, 10).unwrap();
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().filter(|&&p| p > 0.0).count() <= 2);
    }
}
