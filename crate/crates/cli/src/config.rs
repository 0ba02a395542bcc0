//! Experiment configuration: a versioned TOML document.
//!
//! Resolution order for every field is command-line flag, then config file,
//! then built-in default. The resolved document is written into each run
//! directory as `config.toml`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tta_seg::adaptation::{AdaptationConfig, PretrainConfig, Sweep};
use tta_seg::imaging::{load_dataset, synth_dataset, Dataset, DomainParams};
use tta_seg::network::ArchConfig;

use crate::Failure;

pub const CONFIG_VERSION: u32 = 1;
/// Default output root when neither flag, config nor environment sets one.
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const OUTPUT_ROOT_ENV: &str = "TTA_SEG_OUTPUT_ROOT";

/// Either a dataset directory or a synthetic preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub dir: Option<PathBuf>,
    pub preset: Option<String>,
    /// Generation seed for presets.
    pub seed: u64,
    /// Number of generated images for presets.
    pub count: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            dir: None,
            preset: None,
            seed: 0,
            count: 0,
        }
    }
}

impl DatasetSpec {
    fn preset(name: &str, seed: u64, count: usize) -> Self {
        Self {
            dir: None,
            preset: Some(name.to_string()),
            seed,
            count,
        }
    }

    /// `value` names a preset if it is one, otherwise a directory.
    pub fn set_from_flag(&mut self, value: &str) {
        if DomainParams::preset(value).is_some() {
            self.preset = Some(value.to_string());
            self.dir = None;
        } else {
            self.dir = Some(PathBuf::from(value));
            self.preset = None;
        }
    }

    fn validate(&self, field: &str) -> Result<(), String> {
        match (&self.dir, &self.preset) {
            (Some(_), Some(_)) | (None, None) => Err(format!("{field}: set exactly one of `dir` or `preset`")),
            (None, Some(p)) => {
                if DomainParams::preset(p).is_none() {
                    return Err(format!(
                        "{field}.preset: unknown preset {p:?} (known: {})",
                        DomainParams::PRESETS.join(", ")
                    ));
                }
                if self.count == 0 {
                    return Err(format!("{field}.count: must be at least 1"));
                }
                Ok(())
            }
            (Some(_), None) => Ok(()),
        }
    }

    /// Loads or generates the dataset.
    pub fn resolve(&self) -> Result<Dataset, Failure> {
        if let Some(dir) = &self.dir {
            if !dir.is_dir() {
                return Err(Failure::usage(format!("dataset directory {} does not exist", dir.display())));
            }
            return load_dataset(dir).map_err(Failure::from);
        }
        let name = self.preset.as_deref().expect("validated spec");
        let params = DomainParams::preset(name).expect("validated preset");
        let samples = synth_dataset(&params, self.count, self.seed)?;
        let names = (0..samples.len()).map(|i| format!("{name}-{i:04}")).collect();
        Ok(Dataset::from_samples(names, samples))
    }

    pub fn describe(&self) -> String {
        match (&self.dir, &self.preset) {
            (Some(d), _) => d.display().to_string(),
            (_, Some(p)) => format!("{p} (seed {}, {} images)", self.seed, self.count),
            _ => "<unset>".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Weight sweeps run by `ablate`.
    pub sweeps: Vec<Sweep>,
    /// Keep a pretraining checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            sweeps: vec![Sweep::Alpha, Sweep::Beta],
            checkpoint_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub output_root: Option<PathBuf>,
    pub source: DatasetSpec,
    pub target: DatasetSpec,
    pub arch: ArchConfig,
    pub pretrain: PretrainConfig,
    pub adaptation: AdaptationConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            output_root: None,
            source: DatasetSpec::preset("synthetic-source", 0, 200),
            target: DatasetSpec::preset("synthetic-target", 1, 32),
            arch: ArchConfig::default(),
            pretrain: PretrainConfig::default(),
            adaptation: AdaptationConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?;
        if config.version != CONFIG_VERSION {
            return Err(Failure::usage(format!(
                "version: unsupported config version {} (expected {CONFIG_VERSION})",
                config.version
            )));
        }
        Ok(config)
    }

    /// Field-level checks of the resolved configuration.
    pub fn validate(&self) -> Result<(), Failure> {
        let field = |name: &str, r: tta_seg::Result<()>| r.map_err(|e| Failure::usage(format!("{name}: {e}")));
        self.source.validate("source").map_err(Failure::usage)?;
        self.target.validate("target").map_err(Failure::usage)?;
        field("arch", self.arch.validate())?;
        field("pretrain", self.pretrain.validate())?;
        field("adaptation", self.adaptation.validate())?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Flag, then config file, then the environment, then the built-in default.
    pub fn output_root(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_root.clone())
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
    }
}
