//! IDX ingestion and the per-digit train/test splits.
//!
//! IDX layout (all header integers big-endian):
//!
//! ```text
//! images: 0x00000803 | N | 28 | 28 | N*784 unsigned bytes, row-major
//! labels: 0x00000801 | N | N unsigned bytes in 0..=9
//! ```
//!
//! Files whose first two bytes are the gzip magic are inflated transparently,
//! so the `.gz` archives the datasets are distributed as can be read directly.
//! Pixels are kept exactly as stored; EMNIST's transposed orientation is not
//! corrected.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::image::{Image, NUM_CLASSES, PIXELS, SIDE};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Training images per digit in MNIST Balanced.
pub const MNIST_BALANCED_TRAIN_PER_DIGIT: usize = 6000;
pub const EMNIST_TRAIN_PER_DIGIT: usize = 24_000;
pub const EMNIST_TEST_PER_DIGIT: usize = 4000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{file}: bad magic 0x{found:08x} at byte 0, expected 0x{expected:08x}")]
    BadMagic {
        file: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("{file}: dimension {found} at byte {offset}, expected {expected}")]
    Dimension {
        file: &'static str,
        offset: usize,
        found: u32,
        expected: u32,
    },
    #[error(
        "label file holds {labels} labels (byte 4) but image file holds {images} images (byte 4)"
    )]
    CountMismatch { images: u32, labels: u32 },
    #[error("label {label} at byte {offset} is outside 0..=9")]
    LabelOutOfRange { offset: usize, label: u8 },
    #[error("{file}: truncated at byte {offset}, need {needed} bytes")]
    Truncated {
        file: &'static str,
        offset: usize,
        needed: usize,
    },
    #[error("digit {digit}: {found} images available, {needed} required")]
    InsufficientImages {
        digit: usize,
        found: usize,
        needed: usize,
    },
    #[error("{role} digit {digit}: expected {expected} images, found {found}")]
    UnexpectedClassSize {
        role: Role,
        digit: usize,
        expected: usize,
        found: usize,
    },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Test => "test",
        })
    }
}

/// Ten per-digit image collections; `classes[d]` holds digit `d` in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    pub name: String,
    pub role: Option<Role>,
    classes: Vec<Vec<Image>>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, role: Option<Role>) -> Self {
        LabeledDataset {
            name: name.into(),
            role,
            classes: vec![Vec::new(); NUM_CLASSES],
        }
    }

    /// Builds a dataset from exactly ten classes.
    ///
    /// # Panics
    /// If `classes.len() != 10`.
    pub fn from_classes(
        name: impl Into<String>,
        role: Option<Role>,
        classes: Vec<Vec<Image>>,
    ) -> Self {
        assert_eq!(
            classes.len(),
            NUM_CLASSES,
            "a dataset has exactly ten classes"
        );
        LabeledDataset {
            name: name.into(),
            role,
            classes,
        }
    }

    /// Groups `(label, image)` pairs by label, preserving their order.
    pub fn from_labeled(
        name: impl Into<String>,
        role: Option<Role>,
        items: impl IntoIterator<Item = (u8, Image)>,
    ) -> Self {
        let mut ds = LabeledDataset::new(name, role);
        for (label, img) in items {
            ds.push(label as usize, img);
        }
        ds
    }

    pub fn push(&mut self, digit: usize, img: Image) {
        self.classes[digit].push(img);
    }

    pub fn class(&self, digit: usize) -> &[Image] {
        &self.classes[digit]
    }

    pub fn classes(&self) -> &[Vec<Image>] {
        &self.classes
    }

    pub fn class_sizes(&self) -> [usize; NUM_CLASSES] {
        std::array::from_fn(|d| self.classes[d].len())
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(digit, image)` in class order, then file order within a class.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Image)> + '_ {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(d, c)| c.iter().map(move |img| (d, img)))
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = Some(role);
        self
    }

    /// The first `n` images of every class (fewer if a class is smaller).
    pub fn take_per_class(&self, n: usize) -> LabeledDataset {
        let classes = self
            .classes
            .iter()
            .map(|c| c[..n.min(c.len())].to_vec())
            .collect();
        LabeledDataset::from_classes(format!("{}[..{n}]", self.name), self.role, classes)
    }

    /// Everything after the first `n` images of every class.
    pub fn skip_per_class(&self, n: usize) -> LabeledDataset {
        let classes = self
            .classes
            .iter()
            .map(|c| c[n.min(c.len())..].to_vec())
            .collect();
        LabeledDataset::from_classes(format!("{}[{n}..]", self.name), self.role, classes)
    }

    /// SHA-256 over class sizes and pixels, in class order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.classes {
            h.update((c.len() as u64).to_be_bytes());
            for img in c {
                h.update(img.pixels());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn read_u32(bytes: &[u8], offset: usize, file: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DatasetError::Truncated {
            file,
            offset: bytes.len(),
            needed: offset + 4,
        })
}

/// Parses an in-memory IDX image/label pair.
pub fn parse_idx(name: &str, image_bytes: &[u8], label_bytes: &[u8]) -> Result<LabeledDataset> {
    const IMAGES: &str = "image file";
    const LABELS: &str = "label file";

    let magic = read_u32(image_bytes, 0, IMAGES)?;
    if magic != IMAGE_MAGIC {
        return Err(DatasetError::BadMagic {
            file: IMAGES,
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let n_images = read_u32(image_bytes, 4, IMAGES)?;
    for offset in [8, 12] {
        let dim = read_u32(image_bytes, offset, IMAGES)?;
        if dim != SIDE as u32 {
            return Err(DatasetError::Dimension {
                file: IMAGES,
                offset,
                found: dim,
                expected: SIDE as u32,
            });
        }
    }

    let magic = read_u32(label_bytes, 0, LABELS)?;
    if magic != LABEL_MAGIC {
        return Err(DatasetError::BadMagic {
            file: LABELS,
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let n_labels = read_u32(label_bytes, 4, LABELS)?;
    if n_labels != n_images {
        return Err(DatasetError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let n = n_images as usize;
    let image_end = 16 + n * PIXELS;
    if image_bytes.len() < image_end {
        return Err(DatasetError::Truncated {
            file: IMAGES,
            offset: image_bytes.len(),
            needed: image_end,
        });
    }
    let label_end = 8 + n;
    if label_bytes.len() < label_end {
        return Err(DatasetError::Truncated {
            file: LABELS,
            offset: label_bytes.len(),
            needed: label_end,
        });
    }

    let mut ds = LabeledDataset::new(name, None);
    for (i, (&label, px)) in label_bytes[8..label_end]
        .iter()
        .zip(image_bytes[16..image_end].chunks_exact(PIXELS))
        .enumerate()
    {
        if label as usize >= NUM_CLASSES {
            return Err(DatasetError::LabelOutOfRange {
                offset: 8 + i,
                label,
            });
        }
        ds.push(
            label as usize,
            Image::from_slice(px).expect("chunk is 784 bytes"),
        );
    }
    Ok(ds)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = std::fs::read(path).map_err(io_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Loads an IDX image/label file pair (plain or gzip-compressed).
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let images = read_maybe_gz(images_path)?;
    let labels = read_maybe_gz(labels_path.as_ref())?;
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_idx(&name, &images, &labels)
}

/// Serialises a dataset to IDX bytes in class order.
pub fn encode_idx(ds: &LabeledDataset) -> (Vec<u8>, Vec<u8>) {
    let n = ds.len() as u32;
    let mut images = Vec::with_capacity(16 + ds.len() * PIXELS);
    for v in [IMAGE_MAGIC, n, SIDE as u32, SIDE as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    for (d, img) in ds.iter() {
        images.extend_from_slice(img.pixels());
        labels.push(d as u8);
    }
    (images, labels)
}

/// Writes a dataset as an IDX pair; paths ending in `.gz` are compressed.
pub fn write_idx(
    ds: &LabeledDataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (images, labels) = encode_idx(ds);
    write_maybe_gz(images_path.as_ref(), &images)?;
    write_maybe_gz(labels_path.as_ref(), &labels)
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = BufWriter::new(File::create(path).map_err(io_err)?);
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).map_err(io_err)?;
        enc.finish().map_err(io_err)?.flush().map_err(io_err)
    } else {
        let mut file = file;
        file.write_all(bytes).map_err(io_err)?;
        file.flush().map_err(io_err)
    }
}

/// Re-splits two datasets per digit: train-file images followed by
/// test-file images, the first `train_per_digit` become training data and the
/// rest test data.
pub fn rebalance(
    train: &LabeledDataset,
    test: &LabeledDataset,
    train_per_digit: usize,
    name: &str,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut new_train = LabeledDataset::new(format!("{name}-train"), Some(Role::Train));
    let mut new_test = LabeledDataset::new(format!("{name}-test"), Some(Role::Test));
    for digit in 0..NUM_CLASSES {
        let combined: Vec<&Image> = train.class(digit).iter().chain(test.class(digit)).collect();
        if combined.len() < train_per_digit {
            return Err(DatasetError::InsufficientImages {
                digit,
                found: combined.len(),
                needed: train_per_digit,
            });
        }
        let (head, tail) = combined.split_at(train_per_digit);
        new_train.classes[digit] = head.iter().map(|&i| i.clone()).collect();
        new_test.classes[digit] = tail.iter().map(|&i| i.clone()).collect();
    }
    Ok((new_train, new_test))
}

/// MNIST Balanced: the first 6000 images of each digit (train file first)
/// train, everything else tests.
pub fn make_mnist_balanced(
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<(LabeledDataset, LabeledDataset)> {
    rebalance(
        train,
        test,
        MNIST_BALANCED_TRAIN_PER_DIGIT,
        "mnist-balanced",
    )
}

fn check_class_sizes(ds: &LabeledDataset, role: Role, expected: usize) -> Result<()> {
    for (digit, &found) in ds.class_sizes().iter().enumerate() {
        if found != expected {
            return Err(DatasetError::UnexpectedClassSize {
                role,
                digit,
                expected,
                found,
            });
        }
    }
    Ok(())
}

/// Finds `stem` or `stem.gz` inside `dir`.
pub fn find_idx_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(DatasetError::Io {
        path: dir.join(stem),
        source: std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "neither the file nor a .gz copy exists",
        ),
    })
}

/// File locations of the standard MNIST download.
#[derive(Debug, Clone)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    /// The usual `train-images-idx3-ubyte` etc. names, gzipped or not.
    pub fn in_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(MnistPaths {
            train_images: find_idx_file(dir, "train-images-idx3-ubyte")?,
            train_labels: find_idx_file(dir, "train-labels-idx1-ubyte")?,
            test_images: find_idx_file(dir, "t10k-images-idx3-ubyte")?,
            test_labels: find_idx_file(dir, "t10k-labels-idx1-ubyte")?,
        })
    }
}

/// Loads standard MNIST as `(train, test)`.
pub fn load_mnist(paths: &MnistPaths) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut train = load_idx(&paths.train_images, &paths.train_labels)?.with_role(Role::Train);
    let mut test = load_idx(&paths.test_images, &paths.test_labels)?.with_role(Role::Test);
    train.name = "mnist-train".into();
    test.name = "mnist-test".into();
    Ok((train, test))
}

/// File locations of an EMNIST Digits download.
#[derive(Debug, Clone)]
pub struct EmnistDigitsPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl EmnistDigitsPaths {
    /// The `emnist-digits-train-images-idx3-ubyte` etc. names, gzipped or not.
    pub fn in_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(EmnistDigitsPaths {
            train_images: find_idx_file(dir, "emnist-digits-train-images-idx3-ubyte")?,
            train_labels: find_idx_file(dir, "emnist-digits-train-labels-idx1-ubyte")?,
            test_images: find_idx_file(dir, "emnist-digits-test-images-idx3-ubyte")?,
            test_labels: find_idx_file(dir, "emnist-digits-test-labels-idx1-ubyte")?,
        })
    }
}

/// Loads EMNIST Digits and checks the 24000/4000 per-digit counts.
pub fn load_emnist_digits(paths: &EmnistDigitsPaths) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut train = load_idx(&paths.train_images, &paths.train_labels)?.with_role(Role::Train);
    let mut test = load_idx(&paths.test_images, &paths.test_labels)?.with_role(Role::Test);
    train.name = "emnist-digits-train".into();
    test.name = "emnist-digits-test".into();
    check_emnist_digits(&train, &test)?;
    Ok((train, test))
}

pub fn check_emnist_digits(train: &LabeledDataset, test: &LabeledDataset) -> Result<()> {
    check_class_sizes(train, Role::Train, EMNIST_TRAIN_PER_DIGIT)?;
    check_class_sizes(test, Role::Test, EMNIST_TEST_PER_DIGIT)
}
