//! Run configuration: one TOML file with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ventri::classify::{FeatureMode, GridSpace, TrainConfig};
use ventri::evaluate::export::sha256_hex;
use ventri::ingest::{PhantomSpec, SplitSpec};
use ventri::mae::PretrainConfig;
use ventri::scrub::ScrubConfig;
use ventri::{Error, Result};

pub const RUN_ROOT_ENV: &str = "VENTRI_RUN_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_name: String,
    /// Parent of the run directory; `--run-root` or `VENTRI_RUN_ROOT` take precedence.
    pub output_root: Option<PathBuf>,
    /// Copied into every stage seed. Set with `--seed`.
    pub seed: Option<u64>,
    /// Model input side length.
    pub image_size: usize,
    pub synth: PhantomSpec,
    pub scrub: ScrubConfig,
    pub split: SplitSection,
    pub model: ModelSection,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub grid: GridSpace,
    pub explain: ExplainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_name: "default".into(),
            output_root: None,
            seed: None,
            image_size: 224,
            synth: PhantomSpec::default(),
            scrub: ScrubConfig::default(),
            split: SplitSection::default(),
            model: ModelSection::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            grid: GridSpace::default(),
            explain: ExplainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    /// Number of folds; derived from the fractions when absent.
    pub k: Option<usize>,
}

impl Default for SplitSection {
    fn default() -> Self {
        let r = SplitSpec::reference(0);
        Self { train_frac: r.train_frac, val_frac: r.val_frac, test_frac: r.test_frac, k: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneChoice {
    /// The pretrained encoder from the `pretrain` stage with a fresh head.
    UsfMae,
    /// Same transformer, random initialization (control).
    VitScratch,
    Vgg19,
    Resnet50,
    VitB16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: BackboneChoice,
    pub feature_mode: FeatureMode,
    /// Reduced-width baselines.
    pub toy: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { backbone: BackboneChoice::UsfMae, feature_mode: FeatureMode::ClassToken, toy: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub layer: Option<usize>,
    pub alpha: f64,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self { layer: None, alpha: 0.5 }
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults), applies `key.path=value` overrides and deserializes.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    /// Propagates the run seed into every stage.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.pretrain.seed = s;
            self.train.seed = s;
        }
        self
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        let s = SplitSpec {
            train_frac: self.split.train_frac,
            val_frac: self.split.val_frac,
            test_frac: self.split.test_frac,
            seed: self.seed.unwrap_or(0),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn folds(&self) -> Result<usize> {
        Ok(self.split.k.unwrap_or(self.split_spec()?.implied_folds()))
    }

    /// Field-level checks across sections.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut check = |section: &str, r: Result<()>| {
            match r {
                Ok(()) => {}
                Err(Error::Config(m)) => bad.push(format!("[{section}] {m}")),
                Err(e) => bad.push(format!("[{section}] {e}")),
            }
        };
        check("synth", self.synth.validate());
        check("scrub", self.scrub.validate());
        check("split", self.split_spec().map(|_| ()));
        check("pretrain", self.pretrain.validate());
        check("train", self.train.validate());
        if self.split.k.is_some_and(|k| k < 2) {
            bad.push("[split] k must be at least 2".into());
        }
        if self.image_size < 8 {
            bad.push(format!("image_size must be >= 8, got {}", self.image_size));
        }
        if self.pretrain.vit.image_size != self.image_size {
            bad.push(format!(
                "[pretrain.vit] image_size {} differs from the run image_size {}",
                self.pretrain.vit.image_size, self.image_size
            ));
        }
        if !(0.0..=1.0).contains(&self.explain.alpha) {
            bad.push(format!("[explain] alpha must be in [0, 1], got {}", self.explain.alpha));
        }
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            bad.push(format!("run_name must be a plain directory name, got {:?}", self.run_name));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("\n  ")))
        }
    }

    /// Canonical TOML of the resolved configuration without the (location-only) output root.
    pub fn canonical(&self) -> Result<String> {
        let c = RunConfig { output_root: None, ..self.clone() };
        toml::to_string(&c).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn sha256(&self) -> Result<String> {
        Ok(sha256_hex(self.canonical()?.as_bytes()))
    }

    /// `<root>/<run_name>`; `flag_root` already folds in the environment variable.
    pub fn run_dir(&self, flag_root: Option<&Path>) -> PathBuf {
        let root = flag_root
            .map(Path::to_path_buf)
            .or_else(|| self.output_root.clone())
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(&self.run_name)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` inside `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov.split_once('=').ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override {ov:?} has an empty key segment")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("override {ov:?}: {p} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_unknown_fields() {
        let cfg = RunConfig::load(None, &["train.epochs=3".into(), "run_name=abc".into(), "model.backbone=vgg19".into()]).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.run_name, "abc");
        assert_eq!(cfg.model.backbone, BackboneChoice::Vgg19);
        let err = RunConfig::load(None, &["train.epochz=3".into()]).unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
    }

    #[test]
    fn seed_propagates_and_hash_ignores_root() {
        let a = RunConfig::default().with_seed(Some(9));
        assert_eq!((a.synth.seed, a.train.seed, a.pretrain.seed), (9, 9, 9));
        let b = RunConfig { output_root: Some("/elsewhere".into()), ..a.clone() };
        assert_eq!(a.sha256().unwrap(), b.sha256().unwrap());
        let back: RunConfig = toml::from_str(&a.canonical().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn validation_names_sections() {
        let cfg = RunConfig::load(None, &["train.learning_rate=0".into(), "explain.alpha=2".into()]).unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("[train]") && msg.contains("[explain]"), "{msg}");
    }
}
