//! The extension-family distance (DWNN) and the WNN/DWNN/NN hybrid.
//!
//! DWNN compares a test image `B` with each training image `A` through the
//! 125-member extension family of `A`: on every window the closest family
//! member is used, so `d(B, A)² = Σ_W min_{X∈A_ext} ‖(B − X)|_W‖²`. The class
//! distance is the minimum of `d` over the class.
//!
//! The hybrid runs WNN (on the large extension) and DWNN (on the base set);
//! when they disagree, plain nearest neighbour over the two disputed classes
//! of the large extension decides.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::augment::{extension_chains, Chain};
use crate::dataset::LabeledDataset;
use crate::image::{Image, NUM_CLASSES};
use crate::wnn::{
    self, update_minima, Classification, EvaluationReport, Prediction, Result, TrainingSource,
    WindowGeometry, WindowSpec, WnnError,
};

/// Window size used by DWNN and the hybrid.
pub const DWNN_WINDOW_SIZE: usize = 11;

/// Training images whose extension families are generated together.
const FAMILY_BATCH: usize = 32;

fn family(a: &Image, chains: &[Chain]) -> Vec<Image> {
    chains.iter().map(|c| c.apply(a)).collect()
}

fn family_distance_sq(
    b: &Image,
    ext: &[Image],
    geom: &WindowGeometry,
    scratch: &mut Vec<u32>,
) -> u64 {
    scratch.clear();
    scratch.resize(geom.len(), u32::MAX);
    update_minima(b, ext, geom, scratch);
    scratch.iter().map(|&m| m as u64).sum()
}

/// `d(B, A)²` over the included windows of `spec`.
pub fn dwnn_image_distance_sq(b: &Image, a: &Image, spec: &WindowSpec) -> u64 {
    let ext = family(a, &extension_chains());
    family_distance_sq(b, &ext, &WindowGeometry::new(spec), &mut Vec::new())
}

/// `d(B, A)`.
pub fn dwnn_image_distance(b: &Image, a: &Image, spec: &WindowSpec) -> f64 {
    (dwnn_image_distance_sq(b, a, spec) as f64).sqrt()
}

/// `D(B, class_j)²` for every test image and class.
///
/// Each training image's family is generated once per call and compared
/// against the whole batch.
pub fn dwnn_distances(
    tests: &[&Image],
    train: &LabeledDataset,
    spec: &WindowSpec,
) -> Result<Vec<[u64; NUM_CLASSES]>> {
    train.check_nonempty()?;
    let geom = WindowGeometry::new(spec);
    if geom.is_empty() {
        return Err(WnnError::NoWindows);
    }
    let chains = extension_chains();
    let mut dist = vec![[u64::MAX; NUM_CLASSES]; tests.len()];
    for digit in 0..NUM_CLASSES {
        for batch in train.class(digit).chunks(FAMILY_BATCH) {
            let families: Vec<Vec<Image>> = batch.par_iter().map(|a| family(a, &chains)).collect();
            dist.par_iter_mut().zip(tests.par_iter()).for_each_init(
                Vec::new,
                |scratch, (row, b)| {
                    for ext in &families {
                        let d = family_distance_sq(b, ext, &geom, scratch);
                        row[digit] = row[digit].min(d);
                    }
                },
            );
        }
    }
    Ok(dist)
}

pub fn dwnn_classify(
    b: &Image,
    train: &LabeledDataset,
    spec: &WindowSpec,
) -> Result<Classification> {
    let d = dwnn_distances(&[b], train, spec)?;
    Ok(Classification::from_distances(d[0]))
}

/// DWNN predictions for a slice of labelled test images; `first_index`
/// numbers them.
pub fn dwnn_evaluate_images(
    tests: &[&Image],
    truths: &[u8],
    first_index: usize,
    train: &LabeledDataset,
    spec: &WindowSpec,
) -> Result<Vec<Prediction>> {
    let dist = dwnn_distances(tests, train, spec)?;
    Ok(dist
        .into_iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (d, &truth))| Prediction {
            index: first_index + i,
            truth,
            predicted: Classification::from_distances(d).digit as u8,
            dist_sq: d,
        })
        .collect())
}

pub fn dwnn_evaluate(
    test: &LabeledDataset,
    train: &LabeledDataset,
    spec: &WindowSpec,
) -> Result<EvaluationReport> {
    let (tests, truths) = wnn::labeled_tests(test);
    let preds = dwnn_evaluate_images(&tests, &truths, 0, train, spec)?;
    Ok(EvaluationReport::from_predictions(preds))
}

/// Smallest full-screen squared distance from `b` to class `digit`.
///
/// Each candidate's sum is abandoned once it exceeds the running minimum.
pub fn nearest_in_class<S: TrainingSource + ?Sized>(
    b: &Image,
    source: &S,
    digit: usize,
) -> Result<u64> {
    if source.class_len(digit) == 0 {
        return Err(WnnError::EmptyClass(digit));
    }
    let mut best = u64::MAX;
    source.for_each_chunk(digit, wnn::CHUNK, &mut |chunk| {
        let start = best;
        best = chunk
            .par_iter()
            .fold(
                || start,
                |bound, a| bound.min(bounded_distance_sq(b, a, bound)),
            )
            .reduce(|| start, u64::min);
    });
    Ok(best)
}

/// Squared distance, or any value `> bound` once the partial sum passes it.
fn bounded_distance_sq(b: &Image, a: &Image, bound: u64) -> u64 {
    let mut sum = 0u64;
    for (rb, ra) in b
        .pixels()
        .chunks_exact(112)
        .zip(a.pixels().chunks_exact(112))
    {
        sum += rb
            .iter()
            .zip(ra)
            .map(|(&x, &y)| {
                let d = x as i32 - y as i32;
                (d * d) as u64
            })
            .sum::<u64>();
        if sum > bound {
            return sum;
        }
    }
    sum
}

/// Nearest neighbour restricted to two classes; ties go to the smaller digit.
pub fn nn_between<S: TrainingSource + ?Sized>(
    b: &Image,
    source: &S,
    first: usize,
    second: usize,
) -> Result<usize> {
    let (lo, hi) = (first.min(second), first.max(second));
    let d_lo = nearest_in_class(b, source, lo)?;
    let d_hi = nearest_in_class(b, source, hi)?;
    Ok(if d_hi < d_lo { hi } else { lo })
}

/// Inputs of the hybrid classifier.
pub struct HybridConfig<'a> {
    /// Base training set (DWNN runs on it).
    pub base_train: &'a LabeledDataset,
    /// Large extension used by WNN and by the two-class fallback.
    pub fallback_train: &'a dyn TrainingSource,
    pub spec: WindowSpec,
}

impl<'a> HybridConfig<'a> {
    pub fn new(base_train: &'a LabeledDataset, fallback_train: &'a dyn TrainingSource) -> Self {
        HybridConfig {
            base_train,
            fallback_train,
            spec: WindowSpec::new(DWNN_WINDOW_SIZE).expect("odd"),
        }
    }

    /// Checks the fallback holds `per_class` images in every class.
    pub fn check_fallback_size(&self, per_class: usize) -> std::result::Result<(), String> {
        for d in 0..NUM_CLASSES {
            let n = self.fallback_train.class_len(d);
            if n != per_class {
                return Err(format!(
                    "fallback class {d} holds {n} images, expected {per_class}"
                ));
            }
        }
        Ok(())
    }
}

/// Per-image hybrid decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HybridOutcome {
    pub digit: usize,
    pub wnn: usize,
    pub dwnn: usize,
    /// Set only when WNN and DWNN disagree.
    pub fallback: Option<usize>,
}

/// The hybrid rule given both predictions and a two-class fallback.
pub fn combine(
    wnn: usize,
    dwnn: usize,
    fallback: impl FnOnce(usize, usize) -> Result<usize>,
) -> Result<HybridOutcome> {
    if wnn == dwnn {
        return Ok(HybridOutcome {
            digit: wnn,
            wnn,
            dwnn,
            fallback: None,
        });
    }
    let f = fallback(wnn, dwnn)?;
    Ok(HybridOutcome {
        digit: f,
        wnn,
        dwnn,
        fallback: Some(f),
    })
}

pub fn hybrid_classify(b: &Image, config: &HybridConfig<'_>) -> Result<HybridOutcome> {
    let wnn = wnn::classify(b, config.fallback_train, &config.spec)?.digit;
    let dwnn = dwnn_classify(b, config.base_train, &config.spec)?.digit;
    combine(wnn, dwnn, |x, y| nn_between(b, config.fallback_train, x, y))
}

/// Hybrid predictions for a slice of labelled test images, numbered from
/// `first_index`. Reported distances are the WNN class distances.
pub fn hybrid_evaluate_images(
    tests: &[&Image],
    truths: &[u8],
    first_index: usize,
    config: &HybridConfig<'_>,
) -> Result<Vec<(Prediction, HybridOutcome)>> {
    let wnn = wnn::classify_batch(tests, config.fallback_train, &config.spec)?;
    let dwnn = dwnn_distances(tests, config.base_train, &config.spec)?;
    let mut out = Vec::with_capacity(tests.len());
    for (i, b) in tests.iter().enumerate() {
        let dw = Classification::from_distances(dwnn[i]).digit;
        let o = combine(wnn[i].digit, dw, |x, y| {
            nn_between(b, config.fallback_train, x, y)
        })?;
        let p = Prediction {
            index: first_index + i,
            truth: truths[i],
            predicted: o.digit as u8,
            dist_sq: wnn[i].dist_sq,
        };
        out.push((p, o));
    }
    Ok(out)
}

/// Hybrid evaluation: the report plus one outcome per test image.
pub fn hybrid_evaluate(
    test: &LabeledDataset,
    config: &HybridConfig<'_>,
) -> Result<(EvaluationReport, Vec<HybridOutcome>)> {
    let (tests, truths) = wnn::labeled_tests(test);
    let (preds, outcomes) = hybrid_evaluate_images(&tests, &truths, 0, config)?
        .into_iter()
        .unzip();
    Ok((EvaluationReport::from_predictions(preds), outcomes))
}

/// `index,wnn,dwnn,fallback` for every disagreement.
pub fn disagreements_csv(outcomes: &[HybridOutcome]) -> String {
    let mut s = String::from("index,wnn,dwnn,fallback\n");
    for (i, o) in outcomes.iter().enumerate() {
        if let Some(f) = o.fallback {
            let _ = writeln!(s, "{i},{},{},{f}", o.wnn, o.dwnn);
        }
    }
    s
}
