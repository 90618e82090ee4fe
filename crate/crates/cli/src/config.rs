//! Run configuration: a TOML file merged with command-line flags.
//!
//! The merged form is written next to every run's outputs as
//! `config.toml`; passing that file back with `--config` repeats the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nlbp_core::dataset::{ColumnMap, DatasetConfig};
use nlbp_core::detector::{ReadConfig, ScanConfig};
use nlbp_core::evaluation::ExperimentGrid;
use nlbp_core::{Aperture, CascadeConfig, DetectorLabel, FeatureFamily};
use serde::{Deserialize, Serialize};

pub const SNAPSHOT: &str = "config.toml";

/// Input locations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    /// Directory that image ids are resolved against.
    pub images: Option<PathBuf>,
    /// A sidecar file or a directory of `*.txt` sidecars.
    pub annotations: Option<PathBuf>,
    /// A CSV annotation table, read with `columns`.
    pub csv: Option<PathBuf>,
    pub columns: ColumnMap,
    /// Directory written by `prepare` (manifest and patch store).
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; copied into every seeded stage.
    pub seed: u64,
    pub data: DataPaths,
    pub dataset: DatasetConfig,
    pub train: CascadeConfig,
    pub scan: ScanConfig,
    pub read: ReadConfig,
    pub grid: ExperimentGrid,
    /// Aperture per detector label.
    pub apertures: BTreeMap<DetectorLabel, Aperture>,
}

pub fn default_aperture(label: DetectorLabel) -> Aperture {
    match label {
        DetectorLabel::Number => Aperture::NUMBER,
        DetectorLabel::Digit(1) => Aperture::DIGIT_ONE,
        DetectorLabel::Digit(_) => Aperture::DIGIT,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut apertures = BTreeMap::new();
        apertures.insert(DetectorLabel::Number, default_aperture(DetectorLabel::Number));
        for d in 0..10 {
            apertures.insert(DetectorLabel::Digit(d), default_aperture(DetectorLabel::Digit(d)));
        }
        RunConfig {
            seed: 0,
            data: DataPaths::default(),
            dataset: DatasetConfig::default(),
            train: CascadeConfig::default(),
            scan: ScanConfig::default(),
            read: ReadConfig::default(),
            grid: ExperimentGrid::default(),
            apertures,
        }
    }
}

/// Flags shared by every command. Unset flags leave the file value alone.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML configuration file
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Feature family, or a comma-separated list for `grid`
    #[arg(long, value_delimiter = ',', value_name = "cs|lbp|haar")]
    pub features: Vec<FeatureFamily>,
    /// Overlap threshold, or a comma-separated list for `grid`
    #[arg(long, value_delimiter = ',')]
    pub overlap: Vec<f64>,
    /// Detector label (`number` or a digit), or a list for `grid`
    #[arg(long, value_delimiter = ',')]
    pub label: Vec<DetectorLabel>,
    /// Aperture of the selected label, e.g. 54x18
    #[arg(long, value_name = "WxH")]
    pub aperture: Option<Aperture>,
    /// Cumulative false-acceptance target of training
    #[arg(long)]
    pub far_target: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}: cannot read config", path.display()))?;
        toml::from_str(&text).with_context(|| format!("{}: bad config", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("config cannot be written as TOML")
    }

    /// Reads `--config` (if any), applies the flags and resolves derived
    /// fields. `lists` allows several features/overlaps/labels (grid runs).
    pub fn resolve(flags: &Overrides, lists: bool) -> anyhow::Result<RunConfig> {
        let mut cfg = match &flags.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if !lists {
            for (name, n) in [("features", flags.features.len()), ("overlap", flags.overlap.len()), ("label", flags.label.len())] {
                if n > 1 {
                    bail!("--{name} takes a single value for this command");
                }
            }
        }
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        if !flags.features.is_empty() {
            cfg.train.family = flags.features[0];
            cfg.grid.feature_kinds = flags.features.clone();
        }
        if !flags.overlap.is_empty() {
            cfg.dataset.overlap_threshold = flags.overlap[0];
            cfg.grid.overlap_thresholds = flags.overlap.clone();
        }
        if !flags.label.is_empty() {
            cfg.dataset.label = flags.label[0];
            cfg.grid.detector_targets = flags.label.clone();
        }
        if let Some(ap) = flags.aperture {
            cfg.apertures.insert(cfg.dataset.label, ap);
        }
        if let Some(f) = flags.far_target {
            cfg.train.far_target = f;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    fn finish(&mut self) -> anyhow::Result<()> {
        if self.seed > i64::MAX as u64 {
            bail!("seed must be below 2^63");
        }
        self.dataset.seed = self.seed;
        self.train.seed = self.seed;
        let label = self.dataset.label;
        self.dataset.aperture = *self.apertures.entry(label).or_insert_with(|| default_aperture(label));
        self.dataset.validate()?;
        self.train.validate()?;
        self.scan.validate()?;
        self.read.plate.validate()?;
        self.read.digit.validate()?;
        self.grid.validate()?;
        Ok(())
    }

    pub fn aperture_of(&self, label: DetectorLabel) -> Aperture {
        self.apertures.get(&label).copied().unwrap_or_else(|| default_aperture(label))
    }

    /// Writes `out/config.toml`.
    pub fn snapshot(&self, out: &Path) -> anyhow::Result<()> {
        let p = out.join(SNAPSHOT);
        std::fs::write(&p, self.to_toml()?).with_context(|| format!("{}: cannot write", p.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let flags = Overrides {
            seed: Some(9),
            features: vec![FeatureFamily::Lbp, FeatureFamily::Haar],
            overlap: vec![0.6, 0.8],
            label: vec![DetectorLabel::Digit(4)],
            aperture: Some(Aperture::new(10, 20)),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&flags, true).unwrap();
        assert_eq!(cfg.dataset.aperture, Aperture::new(10, 20));
        assert_eq!((cfg.dataset.seed, cfg.train.seed), (9, 9));
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn single_value_commands_reject_lists() {
        let flags = Overrides {
            overlap: vec![0.6, 0.8],
            ..Default::default()
        };
        assert!(RunConfig::resolve(&flags, false).is_err());
    }

    #[test]
    fn digit_label_gets_digit_aperture() {
        let flags = Overrides {
            label: vec![DetectorLabel::Digit(1)],
            ..Default::default()
        };
        assert_eq!(RunConfig::resolve(&flags, false).unwrap().dataset.aperture, Aperture::DIGIT_ONE);
    }
}
