//! Plain-text run configuration: one `section.key = value` per line, `#`
//! starts a comment. Unknown keys and malformed values are hard errors,
//! reported together.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::{AugmentationPolicy, Variant};
use crate::loader::CurriculumSchedule;
use crate::nn::{Arch, Objective, TrainConfig};
use crate::reinforcer::{ReinforceJob, Selection};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Text,
    Int,
    Float,
    Variant,
    Selection,
    Objective,
    Arch,
    Curriculum,
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: Option<&'static str>,
}

const fn key(name: &'static str, kind: Kind, default: Option<&'static str>) -> Key {
    Key { name, kind, default }
}

const SCHEMA: &[Key] = &[
    key("run.out_dir", Kind::Text, Some("runs")),
    key("run.name", Kind::Text, None),
    key("run.seed", Kind::Int, Some("0")),
    key("data.train", Kind::Text, None),
    key("data.val", Kind::Text, None),
    key("teacher.checkpoint", Kind::Text, None),
    key("store.path", Kind::Text, None),
    key("reinforce.variant", Kind::Variant, Some("rrc+ra/re")),
    key("reinforce.samples_per_image", Kind::Int, Some("50")),
    key("reinforce.candidate_multiplier", Kind::Int, Some("1")),
    key("reinforce.selection", Kind::Selection, Some("random")),
    key("reinforce.top_k", Kind::Int, Some("10")),
    key("reinforce.workers", Kind::Int, Some("1")),
    key("train.arch", Kind::Arch, Some("student-s")),
    key("train.objective", Kind::Objective, Some("erm")),
    key("train.variant", Kind::Variant, Some("rrc+ra/re")),
    key("train.epochs", Kind::Int, Some("100")),
    key("train.batch_size", Kind::Int, Some("64")),
    key("train.lr", Kind::Float, Some("0.1")),
    key("train.momentum", Kind::Float, Some("0.9")),
    key("train.weight_decay", Kind::Float, Some("0.0005")),
    key("train.label_smoothing", Kind::Float, Some("0.1")),
    key("train.curriculum", Kind::Curriculum, None),
    key("train.mix_library", Kind::Int, Some("0")),
    key("train.loader_workers", Kind::Int, Some("1")),
];

fn schema(name: &str) -> Option<&'static Key> {
    SCHEMA.iter().find(|k| k.name == name)
}

fn check_value(kind: Kind, v: &str) -> std::result::Result<(), String> {
    match kind {
        Kind::Text => Ok(()),
        Kind::Int => v.parse::<u64>().map(|_| ()).map_err(|e| e.to_string()),
        Kind::Float => match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(()),
            Ok(_) => Err("not finite".into()),
            Err(e) => Err(e.to_string()),
        },
        Kind::Variant => v.parse::<Variant>().map(|_| ()).map_err(|e| e.to_string()),
        Kind::Selection => v.parse::<Selection>().map(|_| ()).map_err(|e| e.to_string()),
        Kind::Objective => v.parse::<Objective>().map(|_| ()).map_err(|e| e.to_string()),
        Kind::Arch => v.parse::<Arch>().map(|_| ()).map_err(|e| e.to_string()),
        Kind::Curriculum => CurriculumSchedule::parse_preset(v, 1).map(|_| ()).map_err(|e| e.to_string()),
    }
}

/// Effective configuration: explicitly set values over schema defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every known key, in schema order.
    pub fn known_keys() -> impl Iterator<Item = &'static str> {
        SCHEMA.iter().map(|k| k.name)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        let mut errs = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = cfg.set(k.trim(), v.trim()) {
                        errs.push(format!("line {}: {e}", no + 1));
                    }
                }
                None => errs.push(format!("line {}: expected `section.key = value`", no + 1)),
            }
        }
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let k = schema(key).ok_or_else(|| format!("unknown key `{key}`"))?;
        check_value(k.kind, value).map_err(|e| format!("bad value for `{key}`: {value:?} ({e})"))?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` overrides, reporting every bad one.
    pub fn apply_overrides<'s>(&mut self, overrides: impl IntoIterator<Item = &'s str>) -> Result<()> {
        let mut errs = Vec::new();
        for o in overrides {
            match o.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k.trim(), v.trim()) {
                        errs.push(e);
                    }
                }
                None => errs.push(format!("override {o:?} is not key=value")),
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Sets one value, failing on unknown keys or malformed values.
    pub fn insert(&mut self, key: &str, value: &str) -> Result<()> {
        self.set(key, value).map_err(|e| Error::Config(vec![e]))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).or_else(|| schema(key).and_then(|k| k.default))
    }

    /// Fails naming every key in `keys` without a value.
    pub fn require(&self, keys: &[&str]) -> Result<()> {
        let missing: Vec<String> =
            keys.iter().filter(|k| self.get(k).is_none()).map(|k| format!("missing required key `{k}`")).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(missing))
        }
    }

    fn value(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(vec![format!("missing required key `{key}`")]))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.value(key)?;
        v.parse::<T>().map_err(|e| Error::Config(vec![format!("bad value for `{key}`: {v:?} ({e})")]))
    }

    pub fn text(&self, key: &str) -> Result<String> {
        self.value(key).map(str::to_string)
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.value(key).map(PathBuf::from)
    }

    pub fn int(&self, key: &str) -> Result<u64> {
        self.parsed(key)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key)
    }

    pub fn float(&self, key: &str) -> Result<f64> {
        self.parsed(key)
    }

    pub fn reinforce_job(&self) -> Result<ReinforceJob> {
        let variant: Variant = self.parsed("reinforce.variant")?;
        let mut job = ReinforceJob::new(AugmentationPolicy::new(variant), self.usize("reinforce.samples_per_image")?);
        job.candidate_multiplier = self.usize("reinforce.candidate_multiplier")?;
        job.selection = self.parsed("reinforce.selection")?;
        job.top_k = self.usize("reinforce.top_k")?;
        job.workers = self.usize("reinforce.workers")?;
        job.seed = self.int("run.seed")?;
        Ok(job)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(self.parsed("train.objective")?);
        cfg.epochs = self.usize("train.epochs")?;
        cfg.batch_size = self.usize("train.batch_size")?;
        cfg.base_lr = self.float("train.lr")?;
        cfg.momentum = self.float("train.momentum")?;
        cfg.weight_decay = self.float("train.weight_decay")?;
        cfg.label_smoothing = self.float("train.label_smoothing")?;
        cfg.seed = self.int("run.seed")?;
        cfg.validate().map_err(|e| Error::Config(vec![e.to_string()]))?;
        Ok(cfg)
    }

    pub fn arch(&self) -> Result<Arch> {
        self.parsed("train.arch")
    }

    pub fn train_variant(&self) -> Result<Variant> {
        self.parsed("train.variant")
    }

    pub fn curriculum(&self, total_epochs: usize) -> Result<Option<CurriculumSchedule>> {
        self.get("train.curriculum").map(|s| CurriculumSchedule::parse_preset(s, total_epochs)).transpose()
    }

    /// Every key with a value, one `key = value` line each, in schema order.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for k in SCHEMA {
            if let Some(v) = self.get(k.name) {
                let _ = writeln!(s, "{} = {v}", k.name);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_comments_and_defaults() {
        let cfg = RunConfig::parse("# job\nrun.seed = 7\n\ntrain.epochs=3 # short\n").unwrap();
        assert_eq!(cfg.int("run.seed").unwrap(), 7);
        assert_eq!(cfg.usize("train.epochs").unwrap(), 3);
        assert_eq!(cfg.get("train.batch_size"), Some("64"));
        assert_eq!(cfg.get("data.train"), None);
    }

    #[test]
    fn every_bad_key_is_listed() {
        let err = RunConfig::parse("foo.bar = 1\ntrain.epochs = many\nnonsense\ntrain.objective = sgd\n").unwrap_err();
        match err {
            Error::Config(errs) => {
                assert_eq!(errs.len(), 4, "{errs:?}");
                assert!(errs[0].contains("foo.bar"));
                assert!(errs[1].contains("train.epochs"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_win_and_echo_roundtrips() {
        let mut cfg = RunConfig::parse("train.epochs = 3").unwrap();
        cfg.apply_overrides(["train.epochs=5", "train.curriculum = easy->all"]).unwrap();
        assert_eq!(cfg.usize("train.epochs").unwrap(), 5);
        let again = RunConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(again.echo(), cfg.echo());
        assert!(cfg.apply_overrides(["nope=1"]).is_err());
    }

    #[test]
    fn require_names_missing_keys() {
        let cfg = RunConfig::new();
        let msg = cfg.require(&["data.train", "run.seed"]).unwrap_err().to_string();
        assert!(msg.contains("data.train") && !msg.contains("run.seed"), "{msg}");
    }

    #[test]
    fn builds_jobs() {
        let cfg =
            RunConfig::parse("reinforce.variant = rrc\nreinforce.top_k = 5\ntrain.objective = reinforced").unwrap();
        let job = cfg.reinforce_job().unwrap();
        assert_eq!(job.top_k, 5);
        assert_eq!(job.samples_per_image, 50);
        assert_eq!(cfg.train_config().unwrap().objective, Objective::Reinforced);
    }
}
