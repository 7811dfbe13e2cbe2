//! Experiment configuration: built-in defaults, an optional TOML file, the
//! `WNN_DATA_ROOT` environment variable and command-line flags, in that
//! order of increasing precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use wnn_core::augment::{DatasetFamily, SetId};

pub const DATA_ROOT_ENV: &str = "WNN_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Standard MNIST, 60 000 training and 10 000 test images.
    Mnist,
    /// MNIST re-split to 6 000 training images per digit.
    MnistBalanced,
    /// EMNIST Digits, 24 000 training and 4 000 test images per digit.
    EmnistDigits,
}

impl DatasetKind {
    pub fn family(self) -> DatasetFamily {
        match self {
            DatasetKind::Mnist | DatasetKind::MnistBalanced => DatasetFamily::MnistBalanced,
            DatasetKind::EmnistDigits => DatasetFamily::Emnist,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::MnistBalanced => "mnist_balanced",
            DatasetKind::EmnistDigits => "emnist_digits",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Nearest neighbour (one full-screen window).
    Nn,
    /// Windowed nearest neighbour with window size S.
    Wnn,
    /// Extension-family distance on the base training set.
    Dwnn,
    /// WNN on Set 4 and DWNN on Set 0, NN over the two classes on disagreement.
    Hybrid,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Nn => "nn",
            ClassifierKind::Wnn => "wnn",
            ClassifierKind::Dwnn => "dwnn",
            ClassifierKind::Hybrid => "hybrid",
        }
    }
}

/// Everything that determines a run's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Directory holding the dataset files under their usual names.
    pub data_root: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub window_size: usize,
    pub set_id: u8,
    pub classifier: ClassifierKind,
    /// Window sizes evaluated by `sweep`; 55 is the NN column.
    pub sizes: Vec<usize>,
    /// Number of windows `prune` excludes.
    pub k_max: usize,
    /// Per-digit validation images for `prune`; unset means whole-test mode.
    pub validation_per_digit: Option<usize>,
    /// Evaluate a seeded stratified subsample of this many test images per digit.
    pub test_per_digit: Option<usize>,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Test images classified between checkpoint writes.
    pub batch_size: usize,
    /// Enforce the published per-digit counts of the dataset family.
    pub check_sizes: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetKind::MnistBalanced,
            data_root: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            window_size: 11,
            set_id: 0,
            classifier: ClassifierKind::Wnn,
            sizes: vec![55, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23],
            k_max: 734,
            validation_per_digit: None,
            test_per_digit: None,
            seed: 0,
            workers: 0,
            output_dir: PathBuf::from("results"),
            batch_size: 500,
            check_sizes: true,
        }
    }
}

/// Flags shared by every verb; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file supplying defaults for any of the options below.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    /// Dataset directory; also read from WNN_DATA_ROOT.
    #[arg(long, value_name = "DIR")]
    pub data_root: Option<PathBuf>,
    /// Training images (IDX, optionally gzipped); with the other three
    /// file flags, replaces --data-root.
    #[arg(long, value_name = "FILE")]
    pub train_images: Option<PathBuf>,
    /// Training labels (IDX).
    #[arg(long, value_name = "FILE")]
    pub train_labels: Option<PathBuf>,
    /// Test images (IDX).
    #[arg(long, value_name = "FILE")]
    pub test_images: Option<PathBuf>,
    /// Test labels (IDX).
    #[arg(long, value_name = "FILE")]
    pub test_labels: Option<PathBuf>,
    /// Odd window size S in [1, 55].
    #[arg(short = 's', long)]
    pub window_size: Option<usize>,
    /// Training-set extension, 0 to 4.
    #[arg(long)]
    pub set_id: Option<u8>,
    #[arg(long, value_enum)]
    pub classifier: Option<ClassifierKind>,
    /// Comma-separated window sizes for `sweep`.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Windows `prune` excludes before stopping.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// `prune` selects on this many test images per digit and replays the
    /// exclusions on the rest; omit to select on the whole test set.
    #[arg(long)]
    pub validation_per_digit: Option<usize>,
    /// Evaluate a seeded stratified subsample of this many test images per digit.
    #[arg(long)]
    pub test_per_digit: Option<usize>,
    /// Seed for the validation split and test subsample.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Directory for CSVs, manifests and checkpoints.
    #[arg(short = 'o', long, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Test images per checkpointed batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Accept datasets whose per-digit counts differ from the published ones.
    #[arg(long)]
    pub no_size_check: bool,
}

impl ConfigArgs {
    /// Merges defaults, the config file, the environment and these flags.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let env_root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
        self.resolve_with_env(env_root)
    }

    pub fn resolve_with_env(&self, env_root: Option<PathBuf>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config_file(path)?,
            None => ExperimentConfig::default(),
        };
        if env_root.is_some() {
            cfg.data_root = env_root;
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() {
                    cfg.$field = self.$field.clone();
                }
            )*};
        }
        set!(
            dataset,
            window_size,
            set_id,
            classifier,
            sizes,
            k_max,
            seed,
            workers,
            output_dir,
            batch_size
        );
        set_opt!(
            data_root,
            train_images,
            train_labels,
            test_images,
            test_labels,
            validation_per_digit,
            test_per_digit
        );
        if self.no_size_check {
            cfg.check_sizes = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
}

fn check_window_size(s: usize) -> Result<()> {
    if s.is_multiple_of(2) || !(1..=55).contains(&s) {
        bail!("window size {s} is invalid: S must be odd and between 1 and 55");
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check_window_size(self.window_size)?;
        for &s in &self.sizes {
            check_window_size(s).context("in --sizes")?;
        }
        if self.sizes.is_empty() {
            bail!("--sizes needs at least one window size");
        }
        SetId::new(self.set_id).map_err(|_| {
            anyhow::anyhow!("set id {} is invalid: use 0, 1, 2, 3 or 4", self.set_id)
        })?;
        match self.classifier {
            ClassifierKind::Dwnn | ClassifierKind::Hybrid
                if self.dataset != DatasetKind::EmnistDigits =>
            {
                bail!(
                    "classifier {} uses the EMNIST extension family: pass --dataset emnist_digits",
                    self.classifier.as_str()
                )
            }
            ClassifierKind::Dwnn if self.set_id != 0 => {
                bail!("dwnn compares against the base training set: use --set-id 0 (extensions are built per image)")
            }
            ClassifierKind::Hybrid if self.set_id != 4 => {
                bail!("hybrid falls back to Set 4 of EMNIST: use --set-id 4")
            }
            _ => {}
        }
        if self.validation_per_digit == Some(0) {
            bail!("--validation-per-digit must be positive (omit it for whole-test-set pruning)");
        }
        if self.batch_size == 0 {
            bail!("--batch-size must be positive");
        }
        let some = [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
        .iter()
        .filter(|p| p.is_some())
        .count();
        if some != 0 && some != 4 {
            bail!("give all four of --train-images, --train-labels, --test-images, --test-labels, or none");
        }
        Ok(())
    }

    /// The window size actually used by `eval`; NN ignores `window_size`.
    pub fn effective_window_size(&self) -> usize {
        match self.classifier {
            ClassifierKind::Nn => wnn_core::wnn::FULL_SCREEN_SIZE,
            _ => self.window_size,
        }
    }

    /// Output file stem, e.g. `mnist_balanced-wnn11-set0`.
    pub fn stem(&self) -> String {
        let classifier = match self.classifier {
            ClassifierKind::Nn => "nn".to_string(),
            c => format!("{}{}", c.as_str(), self.window_size),
        };
        let mut stem = format!("{}-{classifier}-set{}", self.dataset.as_str(), self.set_id);
        if let Some(n) = self.test_per_digit {
            stem.push_str(&format!("-sub{n}-seed{}", self.seed));
        }
        stem
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args() -> ConfigArgs {
        ConfigArgs {
            data_root: Some("/data".into()),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = args().resolve_with_env(None).unwrap();
        assert_eq!(cfg.window_size, 11);
        assert_eq!(cfg.stem(), "mnist_balanced-wnn11-set0");
    }

    #[test]
    fn even_or_oversized_windows_are_rejected() {
        for s in [0, 4, 57] {
            let a = ConfigArgs {
                window_size: Some(s),
                ..args()
            };
            let err = a.resolve_with_env(None).unwrap_err().to_string();
            assert!(err.contains("odd"), "{err}");
        }
    }

    #[test]
    fn dwnn_requires_emnist() {
        let a = ConfigArgs {
            classifier: Some(ClassifierKind::Dwnn),
            ..args()
        };
        assert!(a
            .resolve_with_env(None)
            .unwrap_err()
            .to_string()
            .contains("emnist_digits"));
    }

    #[test]
    fn env_root_overrides_file_but_not_flag() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "data_root = \"/from-file\"\nwindow_size = 7\n").unwrap();
        let a = ConfigArgs {
            config: Some(file),
            ..Default::default()
        };
        let cfg = a.resolve_with_env(Some("/from-env".into())).unwrap();
        assert_eq!(cfg.data_root.as_deref(), Some(Path::new("/from-env")));
        assert_eq!(cfg.window_size, 7);
        let b = ConfigArgs {
            data_root: Some("/from-flag".into()),
            ..a
        };
        let cfg = b.resolve_with_env(Some("/from-env".into())).unwrap();
        assert_eq!(cfg.data_root.as_deref(), Some(Path::new("/from-flag")));
    }

    #[test]
    fn unknown_config_keys_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "windw_size = 7\n").unwrap();
        assert!(load_config_file(&file).is_err());
    }

    #[test]
    fn partial_file_paths_are_rejected() {
        let a = ConfigArgs {
            train_images: Some("x".into()),
            ..args()
        };
        assert!(a.resolve_with_env(None).is_err());
    }
}
