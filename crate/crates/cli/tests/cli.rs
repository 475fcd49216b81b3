use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dr")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dr(args);
    assert!(out.status.success(), "dr {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data");
        ok(&["synth", "--out", data.to_str().unwrap(), "--train", "60", "--val", "30", "--size", "8"]);
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn s(&self, rel: &str) -> String {
        self.path(rel).to_str().unwrap().to_string()
    }

    fn base(&self, name: &str) -> Vec<String> {
        [
            format!("run.out_dir={}", self.s("runs")),
            format!("run.name={name}"),
            format!("data.train={}", self.s("data/train.dimg")),
            format!("data.val={}", self.s("data/val.dimg")),
            "train.epochs=2".into(),
            "train.batch_size=16".into(),
        ]
        .into()
    }

    fn run(&self, cmd: &str, name: &str, extra: &[&str]) -> Output {
        let mut args = vec![cmd.to_string()];
        for kv in self.base(name).iter().map(String::as_str).chain(extra.iter().copied()) {
            args.push("--set".into());
            args.push(kv.into());
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        dr(&refs)
    }

    fn run_ok(&self, cmd: &str, name: &str, extra: &[&str]) {
        let out = self.run(cmd, name, extra);
        assert!(out.status.success(), "{cmd} {name}: {}", String::from_utf8_lossy(&out.stderr));
    }

    fn teacher(&self) -> String {
        self.run_ok("train", "teacher", &["train.arch=student-s"]);
        self.s("runs/teacher/model.ckpt")
    }
}

#[test]
fn reinforce_then_train_end_to_end() {
    let fx = Fixture::new();
    let teacher = fx.teacher();
    let t = format!("teacher.checkpoint={teacher}");
    let job = [t.as_str(), "reinforce.samples_per_image=4", "reinforce.top_k=3"];
    fx.run_ok("reinforce", "r1", &job);
    fx.run_ok("reinforce", "r2", &job);

    // Stats agree with the store accounting and reruns are bit-identical.
    let s1 = json(&fx.path("runs/r1/stats.json"));
    let s2 = json(&fx.path("runs/r2/stats.json"));
    assert_eq!(s1["sha256"], s2["sha256"]);
    assert!(fs::read_to_string(fx.path("runs/r1/config.txt")).unwrap().contains("reinforce.top_k = 3"));

    let store = fx.s("runs/r1/store.drst");
    let dump = ok(&["inspect", &store, "--image", "5", "--validate"]);
    let teacher_id = dump.lines().find_map(|l| l.strip_prefix("teacher")).unwrap().trim();
    let record_size = 8 * 3 + 17 + 32;
    let header = 33 + teacher_id.len() as u64;
    assert_eq!(s1["bytes"].as_u64().unwrap(), header + 60 * 4 * record_size);
    assert_eq!(fs::metadata(&store).unwrap().len(), s1["bytes"].as_u64().unwrap());
    assert!(dump.contains("samples/image 4"), "{dump}");
    assert!(dump.contains(&format!("8×3 + 17 + 32 = {record_size} B")), "{dump}");
    assert!(dump.contains("0 violations"), "{dump}");
    assert!(dump.contains("confidence order: non-increasing"), "{dump}");
    assert_eq!(dump.lines().filter(|l| l.starts_with('[')).count(), 4);

    let stats: serde_json::Value = serde_json::from_str(&ok(&["stats", &store])).unwrap();
    assert_eq!(stats["records"], 240);
    assert_eq!(stats["confidence_histogram"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum::<u64>(), 240);

    let sp = format!("store.path={store}");
    fx.run_ok("train", "student-r", &["train.objective=reinforced", &sp]);
    fx.run_ok("train", "student-e", &["train.objective=erm"]);
    let r = json(&fx.path("runs/student-r/stats.json"));
    let e = json(&fx.path("runs/student-e/stats.json"));
    assert_eq!(r["teacher_calls"], 0);
    assert_eq!(r["total_steps"], e["total_steps"]);
    let history = fs::read_to_string(fx.path("runs/student-r/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    // Online KD does call the teacher.
    fx.run_ok("train", "student-kd", &["train.objective=kd-imitation", &t]);
    assert!(json(&fx.path("runs/student-kd/stats.json"))["teacher_calls"].as_u64().unwrap() > 0);
}

#[test]
fn train_is_reproducible() {
    let fx = Fixture::new();
    fx.run_ok("train", "a", &[]);
    fx.run_ok("train", "b", &[]);
    let a = json(&fx.path("runs/a/stats.json"));
    let b = json(&fx.path("runs/b/stats.json"));
    assert_eq!(a["checkpoint_sha256"], b["checkpoint_sha256"]);
}

#[test]
fn missing_dataset_key_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let out_dir = format!("run.out_dir={}", dir.path().display());
    let out = dr(&["reinforce", "--set", &out_dir]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("data.train") && err.contains("teacher.checkpoint"), "{err}");
}

#[test]
fn unknown_keys_are_listed_together() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "train.epochz = 3\ntrain.lr = fast\n").unwrap();
    let out = dr(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.epochz") && err.contains("train.lr"), "{err}");
}

#[test]
fn objective_input_mismatch_is_rejected() {
    let fx = Fixture::new();
    let out = fx.run("train", "x", &["train.objective=reinforced"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("store.path"));
}

#[test]
fn corrupt_store_reports_offset() {
    let fx = Fixture::new();
    let teacher = fx.teacher();
    let t = format!("teacher.checkpoint={teacher}");
    fx.run_ok("reinforce", "r", &[&t, "reinforce.samples_per_image=2", "reinforce.top_k=2"]);
    let path = fx.path("runs/r/store.drst");
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 5);
    fs::write(&path, &bytes).unwrap();
    let out = dr(&["inspect", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("offset"), "{err}");
}

#[test]
fn report_rejects_unknown_criterion() {
    let out = dr(&["report", "--only", "9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quick_report_writes_tables() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("report");
    let stdout = ok(&["report", "--quick", "--only", "1,5", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("criterion 1 (Storage table): PASS"), "{stdout}");
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("| RRC+RA/RE record (top-10) | 129 |"), "{md}");
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("report.json").exists());
}
