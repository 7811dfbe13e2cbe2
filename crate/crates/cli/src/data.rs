//! Dataset loading for a resolved configuration.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use wnn_core::augment::{AugmentedSet, SetId};
use wnn_core::dataset::{self, EmnistDigitsPaths, LabeledDataset, MnistPaths, Role};
use wnn_core::prune::stratified_split;
use wnn_core::wnn::TrainingSource;

use crate::config::{DatasetKind, ExperimentConfig, DATA_ROOT_ENV};

const MNIST_TRAIN_SIZE: usize = 60_000;
const MNIST_TEST_SIZE: usize = 10_000;

/// Training and test sets of one run.
pub struct RunData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

struct Files {
    train_images: PathBuf,
    train_labels: PathBuf,
    test_images: PathBuf,
    test_labels: PathBuf,
}

fn files(cfg: &ExperimentConfig) -> Result<Files> {
    if let (Some(a), Some(b), Some(c), Some(d)) = (
        &cfg.train_images,
        &cfg.train_labels,
        &cfg.test_images,
        &cfg.test_labels,
    ) {
        return Ok(Files {
            train_images: a.clone(),
            train_labels: b.clone(),
            test_images: c.clone(),
            test_labels: d.clone(),
        });
    }
    let Some(root) = &cfg.data_root else {
        bail!("no dataset location: pass --data-root, set {DATA_ROOT_ENV}, or give the four file paths");
    };
    Ok(match cfg.dataset {
        DatasetKind::Mnist | DatasetKind::MnistBalanced => {
            let p = MnistPaths::in_dir(root)
                .with_context(|| format!("looking for MNIST files in {}", root.display()))?;
            Files {
                train_images: p.train_images,
                train_labels: p.train_labels,
                test_images: p.test_images,
                test_labels: p.test_labels,
            }
        }
        DatasetKind::EmnistDigits => {
            let p = EmnistDigitsPaths::in_dir(root).with_context(|| {
                format!("looking for EMNIST Digits files in {}", root.display())
            })?;
            Files {
                train_images: p.train_images,
                train_labels: p.train_labels,
                test_images: p.test_images,
                test_labels: p.test_labels,
            }
        }
    })
}

fn load_pair(images: &PathBuf, labels: &PathBuf, role: Role, name: &str) -> Result<LabeledDataset> {
    let mut ds = dataset::load_idx(images, labels)
        .with_context(|| format!("loading {} and {}", images.display(), labels.display()))?
        .with_role(role);
    ds.name = name.to_string();
    Ok(ds)
}

/// Loads, re-splits and subsamples the data a configuration asks for.
pub fn load(cfg: &ExperimentConfig) -> Result<RunData> {
    let f = files(cfg)?;
    let prefix = cfg.dataset.as_str();
    let train = load_pair(
        &f.train_images,
        &f.train_labels,
        Role::Train,
        &format!("{prefix}-train"),
    )?;
    let test = load_pair(
        &f.test_images,
        &f.test_labels,
        Role::Test,
        &format!("{prefix}-test"),
    )?;
    let (train, test) = match cfg.dataset {
        DatasetKind::Mnist => {
            if cfg.check_sizes && (train.len() != MNIST_TRAIN_SIZE || test.len() != MNIST_TEST_SIZE)
            {
                bail!(
                    "MNIST should have {MNIST_TRAIN_SIZE} training and {MNIST_TEST_SIZE} test images, found {} and {} (use --no-size-check for other files)",
                    train.len(),
                    test.len()
                );
            }
            (train, test)
        }
        DatasetKind::MnistBalanced => dataset::make_mnist_balanced(&train, &test)
            .context("building the balanced MNIST split")?,
        DatasetKind::EmnistDigits => {
            if cfg.check_sizes {
                dataset::check_emnist_digits(&train, &test)
                    .context("EMNIST Digits counts (use --no-size-check for other files)")?;
            }
            (train, test)
        }
    };
    let test = match cfg.test_per_digit {
        Some(n) => {
            let (mut sub, _) =
                stratified_split(&test, n, cfg.seed).context("subsampling the test set")?;
            sub.name = format!("{}-sub{n}-seed{}", test.name, cfg.seed);
            sub
        }
        None => test,
    };
    Ok(RunData { train, test })
}

/// The training source of `set_id`: the base set itself or its extension.
pub enum Source<'a> {
    Base(&'a LabeledDataset),
    Extended(AugmentedSet<'a>),
}

impl<'a> Source<'a> {
    pub fn new(cfg: &ExperimentConfig, base: &'a LabeledDataset) -> Result<Self> {
        let set = SetId::new(cfg.set_id)?;
        Ok(if set.get() == 0 {
            Source::Base(base)
        } else {
            Source::Extended(AugmentedSet::new(base, cfg.dataset.family(), set))
        })
    }

    pub fn as_dyn(&self) -> &(dyn TrainingSource + 'a) {
        match self {
            Source::Base(b) => *b,
            Source::Extended(a) => a,
        }
    }

    pub fn total(&self) -> usize {
        (0..wnn_core::NUM_CLASSES)
            .map(|d| self.as_dyn().class_len(d))
            .sum()
    }
}
