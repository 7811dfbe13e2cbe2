//! Deterministic training-set extensions.
//!
//! Every augmented image is a *chain*: a shift followed by at most one
//! rotation or centre resize. A training set extension ("Set 0" … "Set 4") is
//! a fixed, ordered list of chains applied to every base image, so any
//! augmented image is addressed by `(digit, base index, chain index)` and
//! regenerated on demand instead of being stored.
//!
//! Enumeration order: digit, then base image in file order, then chain index.
//! Chains are ordered by shift `(dy, dx)` ascending, then by the
//! post-transform in the order `none, rotate −25, −5, +5, +25, width 18,
//! width 22, height 18, height 22` (only those present in the set).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::LabeledDataset;
use crate::image::{Image, NUM_CLASSES, PIXELS, SIDE};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("shift ({dx}, {dy}) exceeds the ±2 pixel limit")]
    ShiftOutOfRange { dx: i32, dy: i32 },
    #[error("rotation of {0}° is not one of 0, ±5, ±25")]
    UnsupportedAngle(i32),
    #[error("resize target {0} is not 18 or 22")]
    UnsupportedTarget(u32),
    #[error("set id {0} is not in 0..=4")]
    UnknownSet(u8),
    #[error("cache {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cache manifest: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, AugmentError>;

pub const MAX_SHIFT: i32 = 2;
pub const ROTATION_ANGLES: [i32; 4] = [-25, -5, 5, 25];
pub const RESIZE_TARGETS: [u32; 2] = [18, 22];
/// First row/column of the central 20×20 block.
pub const CENTER_START: usize = 4;
pub const CENTER_SIZE: usize = 20;
/// Size of the per-image extension family used by DWNN.
pub const EXTENSION_FAMILY_SIZE: usize = 125;
/// Position of the identity chain (shift (0, 0), no rotation) in the family.
pub const EXTENSION_IDENTITY_INDEX: usize = 60;

/// Geometric centre of the screen, in pixel coordinates.
const CENTER: f64 = (SIDE as f64 - 1.0) / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Width,
    Height,
}

/// A single image transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    Identity,
    Shift { dx: i32, dy: i32 },
    Rotate { degrees: i32 },
    ResizeCenter { axis: Axis, target: u32 },
}

impl Transform {
    pub fn apply(&self, img: &Image) -> Result<Image> {
        match *self {
            Transform::Identity => Ok(img.clone()),
            Transform::Shift { dx, dy } => apply_shift(img, dx, dy),
            Transform::Rotate { degrees } => apply_rotation(img, degrees),
            Transform::ResizeCenter { axis, target } => apply_resize_center(img, axis, target),
        }
    }
}

/// Moves every pixel by `(dx, dy)`; vacated pixels become 0.
///
/// Output pixel `(x, y)` is input pixel `(x − dx, y − dy)`.
pub fn apply_shift(img: &Image, dx: i32, dy: i32) -> Result<Image> {
    if dx.abs() > MAX_SHIFT || dy.abs() > MAX_SHIFT {
        return Err(AugmentError::ShiftOutOfRange { dx, dy });
    }
    Ok(shift_unchecked(img, dx, dy))
}

fn shift_unchecked(img: &Image, dx: i32, dy: i32) -> Image {
    if dx == 0 && dy == 0 {
        return img.clone();
    }
    Image::from_fn(|x, y| img.get_padded(x as isize - dx as isize, y as isize - dy as isize))
}

/// Rotates counter-clockwise (as displayed, rows growing downwards) by
/// `degrees` about the screen centre `(13.5, 13.5)`.
///
/// Each output pixel is inverse-mapped into the source and sampled
/// bilinearly; source samples off the screen are 0. Results are rounded half
/// up and clamped to `0..=255`.
pub fn apply_rotation(img: &Image, degrees: i32) -> Result<Image> {
    if degrees == 0 {
        return Ok(img.clone());
    }
    if !ROTATION_ANGLES.contains(&degrees) {
        return Err(AugmentError::UnsupportedAngle(degrees));
    }
    Ok(rotate_bilinear(img, (degrees as f64).to_radians()))
}

fn rotate_bilinear(img: &Image, radians: f64) -> Image {
    let (sin, cos) = radians.sin_cos();
    Image::from_fn(|x, y| {
        let u = x as f64 - CENTER;
        let v = y as f64 - CENTER;
        let sx = CENTER + cos * u - sin * v;
        let sy = CENTER + sin * u + cos * v;
        quantize(bilinear(img, sx, sy))
    })
}

#[inline]
fn bilinear(img: &Image, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let p = |dx: isize, dy: isize| img.get_padded(x0 + dx, y0 + dy) as f64;
    (1.0 - fy) * ((1.0 - fx) * p(0, 0) + fx * p(1, 0)) + fy * ((1.0 - fx) * p(0, 1) + fx * p(1, 1))
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Compresses or expands the central 20×20 block along one axis to `target`
/// pixels (18 or 22), re-centred in the frame.
///
/// Only the 20 rows (for `Width`) or columns (for `Height`) of the central
/// band change. Inside the band the 20 source pixels are linearly resampled
/// to `target` pixels placed at offset `(28 − target) / 2`; positions of the
/// central block the resampled run does not reach become 0. Pixels outside
/// the central block that the run does not cover are kept.
pub fn apply_resize_center(img: &Image, axis: Axis, target: u32) -> Result<Image> {
    if !RESIZE_TARGETS.contains(&target) {
        return Err(AugmentError::UnsupportedTarget(target));
    }
    let target = target as usize;
    let start = (SIDE - target) / 2;
    let weights = resample_weights(CENTER_SIZE, target);
    let mut out = img.clone();
    for band in CENTER_START..CENTER_START + CENTER_SIZE {
        let read = |k: usize| match axis {
            Axis::Width => img.get(CENTER_START + k, band),
            Axis::Height => img.get(band, CENTER_START + k),
        };
        let src: [f64; CENTER_SIZE] = std::array::from_fn(|k| read(k) as f64);
        let mut line: [Option<u8>; SIDE] = [None; SIDE];
        for (k, &(i0, w0, i1, w1)) in weights.iter().enumerate() {
            let sample = |i: Option<usize>, w: f64| i.map_or(0.0, |i| src[i] * w);
            line[start + k] = Some(quantize(sample(i0, w0) + sample(i1, w1)));
        }
        for (pos, value) in line.iter().enumerate() {
            let in_center = (CENTER_START..CENTER_START + CENTER_SIZE).contains(&pos);
            let v = match (value, in_center) {
                (Some(v), _) => *v,
                (None, true) => 0,
                (None, false) => continue,
            };
            match axis {
                Axis::Width => out.set(pos, band, v),
                Axis::Height => out.set(band, pos, v),
            }
        }
    }
    Ok(out)
}

/// Linear interpolation taps mapping `dst` pixel centres onto `src` pixel
/// centres; taps falling outside `0..src` are `None` (background).
fn resample_weights(src: usize, dst: usize) -> Vec<(Option<usize>, f64, Option<usize>, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|k| {
            let s = (k as f64 + 0.5) * scale - 0.5;
            let i0 = s.floor();
            let f = s - i0;
            let idx = |i: f64| (i >= 0.0 && i < src as f64).then_some(i as usize);
            (idx(i0), 1.0 - f, idx(i0 + 1.0), f)
        })
        .collect()
}

/// What follows the shift in a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PostTransform {
    None,
    Rotate(i32),
    Resize(Axis, u32),
}

/// A shift followed by an optional rotation or resize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Chain {
    pub dx: i32,
    pub dy: i32,
    pub post: PostTransform,
}

impl Chain {
    pub const IDENTITY: Chain = Chain {
        dx: 0,
        dy: 0,
        post: PostTransform::None,
    };

    pub fn is_identity(&self) -> bool {
        *self == Chain::IDENTITY
    }

    pub fn transforms(&self) -> Vec<Transform> {
        let mut t = vec![Transform::Shift {
            dx: self.dx,
            dy: self.dy,
        }];
        match self.post {
            PostTransform::None => {}
            PostTransform::Rotate(degrees) => t.push(Transform::Rotate { degrees }),
            PostTransform::Resize(axis, target) => t.push(Transform::ResizeCenter { axis, target }),
        }
        t
    }

    pub fn apply(&self, img: &Image) -> Image {
        let shifted = shift_unchecked(img, self.dx, self.dy);
        match self.post {
            PostTransform::None => shifted,
            PostTransform::Rotate(deg) => rotate_bilinear(&shifted, (deg as f64).to_radians()),
            PostTransform::Resize(axis, target) => {
                apply_resize_center(&shifted, axis, target).expect("chain targets are validated")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFamily {
    MnistBalanced,
    Emnist,
}

/// Training-set extension id, 0 through 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SetId(u8);

impl SetId {
    pub const ALL: [SetId; 5] = [SetId(0), SetId(1), SetId(2), SetId(3), SetId(4)];

    pub fn new(id: u8) -> Result<Self> {
        if id <= 4 {
            Ok(SetId(id))
        } else {
            Err(AugmentError::UnknownSet(id))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl std::fmt::Display for SetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Set {}", self.0)
    }
}

fn shifts(radius: i32) -> impl Iterator<Item = (i32, i32)> {
    (-radius..=radius).flat_map(move |dy| (-radius..=radius).map(move |dx| (dx, dy)))
}

fn rotations() -> impl Iterator<Item = PostTransform> {
    ROTATION_ANGLES.into_iter().map(PostTransform::Rotate)
}

fn resizes() -> impl Iterator<Item = PostTransform> {
    [Axis::Width, Axis::Height].into_iter().flat_map(|a| {
        RESIZE_TARGETS
            .into_iter()
            .map(move |t| PostTransform::Resize(a, t))
    })
}

fn build_chains(radius: i32, with_rotations: bool, with_resizes: bool) -> Vec<Chain> {
    let mut out = Vec::new();
    for (dx, dy) in shifts(radius) {
        let posts = std::iter::once(PostTransform::None)
            .chain(rotations().filter(|_| with_rotations))
            .chain(resizes().filter(|_| with_resizes));
        out.extend(posts.map(|post| Chain { dx, dy, post }));
    }
    out
}

/// The ordered chain list defining a training-set extension.
///
/// MNIST Balanced: Set 1 shifts by at most one pixel, Set 2 adds ±5/±25°
/// rotations of Set 1, Set 3 adds the four centre resizes of Set 1, Set 4 is
/// Set 2 ∪ Set 3. EMNIST: Sets 1/2 as for MNIST, Set 3 shifts by at most two
/// pixels and Set 4 adds rotations of Set 3.
pub fn chains(family: DatasetFamily, set: SetId) -> Vec<Chain> {
    match (family, set.0) {
        (_, 0) => vec![Chain::IDENTITY],
        (_, 1) => build_chains(1, false, false),
        (_, 2) => build_chains(1, true, false),
        (DatasetFamily::MnistBalanced, 3) => build_chains(1, false, true),
        (DatasetFamily::MnistBalanced, 4) => build_chains(1, true, true),
        (DatasetFamily::Emnist, 3) => build_chains(2, false, false),
        (DatasetFamily::Emnist, 4) => build_chains(2, true, false),
        _ => unreachable!("SetId is always in 0..=4"),
    }
}

/// The 125 chains of the per-image extension family: 25 shifts of at most
/// two pixels, each followed by a rotation of 0, −25, −5, +5 or +25 degrees.
pub fn extension_chains() -> Vec<Chain> {
    build_chains(2, true, false)
}

/// The 125-member extension family of one image; the unchanged image sits at
/// [`EXTENSION_IDENTITY_INDEX`].
pub fn extension_family(img: &Image) -> Vec<Image> {
    extension_chains().iter().map(|c| c.apply(img)).collect()
}

/// Index-level description of an extension: no pixels, only counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentationPlan {
    pub family: DatasetFamily,
    pub set: SetId,
    pub base_class_sizes: [usize; NUM_CLASSES],
    chains: Vec<Chain>,
}

impl AugmentationPlan {
    pub fn new(family: DatasetFamily, set: SetId, base_class_sizes: [usize; NUM_CLASSES]) -> Self {
        AugmentationPlan {
            family,
            set,
            base_class_sizes,
            chains: chains(family, set),
        }
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn chains_per_image(&self) -> usize {
        self.chains.len()
    }

    pub fn class_len(&self, digit: usize) -> usize {
        self.base_class_sizes[digit] * self.chains.len()
    }

    pub fn len(&self) -> usize {
        (0..NUM_CLASSES).map(|d| self.class_len(d)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Streams `(digit, base index, chain index)` in enumeration order.
    pub fn indices(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let n_chains = self.chains.len();
        (0..NUM_CLASSES).flat_map(move |d| {
            (0..self.base_class_sizes[d]).flat_map(move |b| (0..n_chains).map(move |c| (d, b, c)))
        })
    }
}

/// A plan bound to its base images; images are produced on demand.
#[derive(Debug, Clone)]
pub struct AugmentedSet<'a> {
    base: &'a LabeledDataset,
    plan: AugmentationPlan,
}

impl<'a> AugmentedSet<'a> {
    pub fn new(base: &'a LabeledDataset, family: DatasetFamily, set: SetId) -> Self {
        AugmentedSet {
            base,
            plan: AugmentationPlan::new(family, set, base.class_sizes()),
        }
    }

    pub fn plan(&self) -> &AugmentationPlan {
        &self.plan
    }

    pub fn base(&self) -> &'a LabeledDataset {
        self.base
    }

    pub fn len(&self) -> usize {
        self.plan.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plan.is_empty()
    }

    pub fn class_len(&self, digit: usize) -> usize {
        self.plan.class_len(digit)
    }

    /// Image `index` of class `digit` in enumeration order.
    pub fn get(&self, digit: usize, index: usize) -> Image {
        let n = self.plan.chains.len();
        self.plan.chains[index % n].apply(&self.base.class(digit)[index / n])
    }

    /// Generates images `range` of class `digit`, in parallel but in order.
    pub fn generate(&self, digit: usize, range: std::ops::Range<usize>) -> Vec<Image> {
        range.into_par_iter().map(|i| self.get(digit, i)).collect()
    }

    /// Streams `(digit, image)` in enumeration order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, Image)> + '_ {
        (0..NUM_CLASSES).flat_map(move |d| (0..self.class_len(d)).map(move |i| (d, self.get(d, i))))
    }

    /// Materialises the whole extension. Only sensible for small bases.
    pub fn materialize(&self) -> LabeledDataset {
        let classes = (0..NUM_CLASSES)
            .map(|d| self.generate(d, 0..self.class_len(d)))
            .collect();
        LabeledDataset::from_classes(
            format!(
                "{}+{:?}-set{}",
                self.base.name, self.plan.family, self.plan.set.0
            ),
            self.base.role,
            classes,
        )
    }
}

/// Manifest stored next to a cached extension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub dataset: String,
    pub family: DatasetFamily,
    pub set_id: u8,
    pub count: usize,
    pub class_counts: [usize; NUM_CLASSES],
    pub sha256: String,
}

pub const CACHE_IMAGES: &str = "images.bin";
pub const CACHE_MANIFEST: &str = "manifest.json";

fn cache_io(path: &Path) -> impl Fn(std::io::Error) -> AugmentError + '_ {
    move |source| AugmentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes an extension as a flat file of 784-byte images (enumeration
/// order) plus a JSON manifest.
pub fn write_cache(set: &AugmentedSet<'_>, dataset_id: &str, dir: &Path) -> Result<CacheManifest> {
    std::fs::create_dir_all(dir).map_err(cache_io(dir))?;
    let path = dir.join(CACHE_IMAGES);
    let mut out = BufWriter::new(File::create(&path).map_err(cache_io(&path))?);
    let mut hasher = Sha256::new();
    const CHUNK: usize = 4096;
    for d in 0..NUM_CLASSES {
        let n = set.class_len(d);
        for start in (0..n).step_by(CHUNK) {
            for img in set.generate(d, start..(start + CHUNK).min(n)) {
                hasher.update(img.pixels());
                out.write_all(img.pixels()).map_err(cache_io(&path))?;
            }
        }
    }
    out.flush().map_err(cache_io(&path))?;
    let manifest = CacheManifest {
        dataset: dataset_id.to_string(),
        family: set.plan.family,
        set_id: set.plan.set.0,
        count: set.len(),
        class_counts: std::array::from_fn(|d| set.class_len(d)),
        sha256: hex(&hasher.finalize()),
    };
    let mpath = dir.join(CACHE_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| AugmentError::Manifest(e.to_string()))?;
    std::fs::write(&mpath, json).map_err(cache_io(&mpath))?;
    Ok(manifest)
}

/// Reads a cached extension back, verifying count and content hash.
pub fn read_cache(dir: &Path) -> Result<(CacheManifest, LabeledDataset)> {
    let mpath = dir.join(CACHE_MANIFEST);
    let text = std::fs::read_to_string(&mpath).map_err(cache_io(&mpath))?;
    let manifest: CacheManifest =
        serde_json::from_str(&text).map_err(|e| AugmentError::Manifest(e.to_string()))?;
    if manifest.class_counts.iter().sum::<usize>() != manifest.count {
        return Err(AugmentError::Manifest(
            "class counts do not sum to count".into(),
        ));
    }
    let path = dir.join(CACHE_IMAGES);
    let mut reader = BufReader::new(File::open(&path).map_err(cache_io(&path))?);
    let mut hasher = Sha256::new();
    let mut ds = LabeledDataset::new(
        format!("{}-set{}", manifest.dataset, manifest.set_id),
        Some(crate::dataset::Role::Train),
    );
    let mut buf = [0u8; PIXELS];
    for (d, &n) in manifest.class_counts.iter().enumerate() {
        for _ in 0..n {
            reader.read_exact(&mut buf).map_err(cache_io(&path))?;
            hasher.update(buf);
            ds.push(d, Image::from_pixels(buf));
        }
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest).map_err(cache_io(&path))?;
    if !rest.is_empty() {
        return Err(AugmentError::Manifest(format!(
            "{} trailing bytes after {} images",
            rest.len(),
            manifest.count
        )));
    }
    if hex(&hasher.finalize()) != manifest.sha256 {
        return Err(AugmentError::Manifest("content hash mismatch".into()));
    }
    Ok((manifest, ds))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
