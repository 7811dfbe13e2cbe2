//! The windowed distance engine.
//!
//! For a test image `B` and a class `A`, the window distance on window `W` is
//! `min_{A∈A} ‖(B − A)|_W‖` and the class distance is the root of the sum of
//! squared window distances over all included windows. Windows are `S×S`
//! squares centred on each of the 784 pixels; slots off the screen read 0.
//!
//! Squared window sums are exact `u32` (at most 784·255² < 2³²) and class
//! totals exact `u64`, so argmin decisions carry no floating-point ambiguity.
//! Per training image the engine builds the integral image of `(B − A)²`
//! once and reads every window sum from four table entries.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::augment::AugmentedSet;
use crate::dataset::LabeledDataset;
use crate::image::{Image, NUM_CLASSES, PIXELS, SIDE};

/// Window size covering the whole screen from any centre.
pub const FULL_SCREEN_SIZE: usize = 2 * SIDE - 1;
/// The window kept by [`WindowSpec::full_screen`]: the centre pixel (13, 13).
pub const FULL_SCREEN_WINDOW: usize = 13 * SIDE + 13;
/// Training images handed to the kernel per chunk.
pub const CHUNK: usize = 2048;

const TABLE: usize = SIDE + 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WnnError {
    #[error("window size {0} must be odd and positive")]
    BadWindowSize(usize),
    #[error("window index {0} is outside 0..784")]
    WindowOutOfRange(usize),
    #[error("window {0} is already excluded")]
    AlreadyExcluded(usize),
    #[error("training class {0} is empty")]
    EmptyClass(usize),
    #[error("every window is excluded")]
    NoWindows,
    #[error("the candidate class is empty")]
    EmptyCandidates,
}

pub type Result<T> = std::result::Result<T, WnnError>;

/// Square windows of odd side `size`, one per pixel, minus an exclusion set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WindowSpec {
    size: usize,
    excluded: Vec<bool>,
}

impl WindowSpec {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(WnnError::BadWindowSize(size));
        }
        Ok(WindowSpec {
            size,
            excluded: vec![false; PIXELS],
        })
    }

    /// A single window covering the whole screen: plain nearest neighbour.
    pub fn full_screen() -> Self {
        let mut spec = WindowSpec::new(FULL_SCREEN_SIZE).expect("odd");
        spec.excluded = vec![true; PIXELS];
        spec.excluded[FULL_SCREEN_WINDOW] = false;
        spec
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn half(&self) -> usize {
        self.size / 2
    }

    pub fn exclude(&mut self, window: usize) -> Result<()> {
        match self.excluded.get_mut(window) {
            None => Err(WnnError::WindowOutOfRange(window)),
            Some(true) => Err(WnnError::AlreadyExcluded(window)),
            Some(e) => {
                *e = true;
                Ok(())
            }
        }
    }

    pub fn with_excluded(mut self, windows: impl IntoIterator<Item = usize>) -> Result<Self> {
        for w in windows {
            self.exclude(w)?;
        }
        Ok(self)
    }

    pub fn is_excluded(&self, window: usize) -> bool {
        self.excluded[window]
    }

    pub fn excluded(&self) -> impl Iterator<Item = usize> + '_ {
        (0..PIXELS).filter(|&w| self.excluded[w])
    }

    /// Included window indices in ascending order.
    pub fn included(&self) -> impl Iterator<Item = usize> + '_ {
        (0..PIXELS).filter(|&w| !self.excluded[w])
    }

    pub fn window_count(&self) -> usize {
        self.excluded.iter().filter(|e| !**e).count()
    }

    /// On-screen extent `(x0, x1, y0, y1)` of window `w`, half-open.
    pub fn bounds(&self, window: usize) -> (usize, usize, usize, usize) {
        window_bounds(window, self.half())
    }
}

pub(crate) fn window_bounds(window: usize, half: usize) -> (usize, usize, usize, usize) {
    let (cx, cy) = (window % SIDE, window / SIDE);
    (
        cx.saturating_sub(half),
        (cx + half + 1).min(SIDE),
        cy.saturating_sub(half),
        (cy + half + 1).min(SIDE),
    )
}

/// Integral-table coordinates of every included window.
///
/// Consecutive windows sharing the same row span form a run; a run's window
/// sums are read off one row of column differences, two lookups each.
#[derive(Debug, Clone)]
pub struct WindowGeometry {
    windows: Vec<usize>,
    runs: Vec<RowRun>,
}

#[derive(Debug, Clone)]
struct RowRun {
    // integral-table rows bounding the windows
    y0: usize,
    y1: usize,
    // position of the run's first window in the minima slice
    start: usize,
    // integral-table columns bounding each window
    x0: Vec<u8>,
    x1: Vec<u8>,
}

impl WindowGeometry {
    pub fn new(spec: &WindowSpec) -> Self {
        Self::for_windows(spec.half(), spec.included().collect())
    }

    /// Geometry for every window, ignoring exclusions.
    pub fn all_windows(size: usize) -> Result<Self> {
        let spec = WindowSpec::new(size)?;
        Ok(Self::for_windows(spec.half(), (0..PIXELS).collect()))
    }

    fn for_windows(half: usize, windows: Vec<usize>) -> Self {
        let mut runs: Vec<RowRun> = Vec::new();
        for (k, &w) in windows.iter().enumerate() {
            let (x0, x1, y0, y1) = window_bounds(w, half);
            match runs.last_mut() {
                Some(r) if r.y0 == y0 && r.y1 == y1 => {
                    r.x0.push(x0 as u8);
                    r.x1.push(x1 as u8);
                }
                _ => runs.push(RowRun {
                    y0,
                    y1,
                    start: k,
                    x0: vec![x0 as u8],
                    x1: vec![x1 as u8],
                }),
            }
        }
        WindowGeometry { windows, runs }
    }

    pub fn windows(&self) -> &[usize] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// 29×29 integral image of `(b − a)²`; row and column 0 are zero.
#[inline]
pub fn squared_difference_integral(b: &Image, a: &Image, table: &mut [u32; TABLE * TABLE]) {
    let (b, a) = (b.pixels(), a.pixels());
    for y in 0..SIDE {
        let mut row = 0u32;
        let src = y * SIDE;
        let (prev, cur) = table.split_at_mut((y + 1) * TABLE);
        let prev = &prev[y * TABLE..];
        for x in 0..SIDE {
            let d = b[src + x] as i32 - a[src + x] as i32;
            row += (d * d) as u32;
            cur[x + 1] = prev[x + 1] + row;
        }
    }
}

/// Lowers `minima[k]` to the squared sum of `(b − a)²` on window `k` of
/// `geom`, for every training image `a`.
#[inline]
pub fn update_minima(b: &Image, train: &[Image], geom: &WindowGeometry, minima: &mut [u32]) {
    debug_assert_eq!(minima.len(), geom.len());
    let mut table = [0u32; TABLE * TABLE];
    // column differences of one row span, padded to 32 so that masked
    // indexing needs no bounds checks
    let mut diff = [0u32; 32];
    for a in train {
        squared_difference_integral(b, a, &mut table);
        for run in &geom.runs {
            let top = &table[run.y0 * TABLE..][..TABLE];
            let bottom = &table[run.y1 * TABLE..][..TABLE];
            for ((d, &lo), &hi) in diff.iter_mut().zip(top).zip(bottom) {
                *d = hi.wrapping_sub(lo);
            }
            let out = &mut minima[run.start..run.start + run.x0.len()];
            for ((m, &x0), &x1) in out.iter_mut().zip(&run.x0).zip(&run.x1) {
                let s = diff[x1 as usize & 31].wrapping_sub(diff[x0 as usize & 31]);
                *m = (*m).min(s);
            }
        }
    }
}

/// Element-wise minimum; merges minima computed over disjoint training shards.
pub fn merge_minima(into: &mut [u32], other: &[u32]) {
    for (a, b) in into.iter_mut().zip(other) {
        *a = (*a).min(*b);
    }
}

/// Anything that can stream the ten training classes in a fixed order.
pub trait TrainingSource: Sync {
    fn class_len(&self, digit: usize) -> usize;

    /// Calls `f` on consecutive chunks (at most `chunk` images) of class
    /// `digit`, in enumeration order.
    fn for_each_chunk(&self, digit: usize, chunk: usize, f: &mut dyn FnMut(&[Image]));

    fn check_nonempty(&self) -> Result<()> {
        match (0..NUM_CLASSES).find(|&d| self.class_len(d) == 0) {
            Some(d) => Err(WnnError::EmptyClass(d)),
            None => Ok(()),
        }
    }
}

impl TrainingSource for LabeledDataset {
    fn class_len(&self, digit: usize) -> usize {
        self.class(digit).len()
    }

    fn for_each_chunk(&self, digit: usize, chunk: usize, f: &mut dyn FnMut(&[Image])) {
        for c in self.class(digit).chunks(chunk) {
            f(c);
        }
    }
}

impl TrainingSource for AugmentedSet<'_> {
    fn class_len(&self, digit: usize) -> usize {
        AugmentedSet::class_len(self, digit)
    }

    fn for_each_chunk(&self, digit: usize, chunk: usize, f: &mut dyn FnMut(&[Image])) {
        let n = AugmentedSet::class_len(self, digit);
        for start in (0..n).step_by(chunk.max(1)) {
            f(&self.generate(digit, start..(start + chunk).min(n)));
        }
    }
}

/// Per-window minimal squared distances from each test image to class
/// `digit`: a `tests.len() × geom.len()` row-major matrix.
pub fn class_window_minima<S: TrainingSource + ?Sized>(
    tests: &[&Image],
    source: &S,
    digit: usize,
    geom: &WindowGeometry,
) -> Result<Vec<u32>> {
    if source.class_len(digit) == 0 {
        return Err(WnnError::EmptyClass(digit));
    }
    let nw = geom.len();
    let mut minima = vec![u32::MAX; tests.len() * nw];
    if nw == 0 {
        return Ok(minima);
    }
    source.for_each_chunk(digit, CHUNK, &mut |chunk| {
        minima
            .par_chunks_mut(nw)
            .zip(tests.par_iter())
            .for_each(|(row, b)| update_minima(b, chunk, geom, row));
    });
    Ok(minima)
}

/// Squared window distance `dist_W²` from `b` to `class` on window `w`.
pub fn window_distance_sq(
    b: &Image,
    class: &[Image],
    window: usize,
    spec: &WindowSpec,
) -> Result<u32> {
    if window >= PIXELS {
        return Err(WnnError::WindowOutOfRange(window));
    }
    if class.is_empty() {
        return Err(WnnError::EmptyCandidates);
    }
    let geom = WindowGeometry::for_windows(spec.half(), vec![window]);
    let mut m = [u32::MAX];
    update_minima(b, class, &geom, &mut m);
    Ok(m[0])
}

/// `dist_W(b, class)`.
pub fn window_distance(
    b: &Image,
    class: &[Image],
    window: usize,
    spec: &WindowSpec,
) -> Result<f64> {
    window_distance_sq(b, class, window, spec).map(|s| (s as f64).sqrt())
}

/// Squared class distance `Dist²`: the sum of `dist_W²` over included windows.
pub fn total_distance_sq(b: &Image, class: &[Image], spec: &WindowSpec) -> Result<u64> {
    if class.is_empty() {
        return Err(WnnError::EmptyCandidates);
    }
    let geom = WindowGeometry::new(spec);
    let minima = class
        .par_chunks(CHUNK)
        .fold(
            || vec![u32::MAX; geom.len()],
            |mut m, chunk| {
                update_minima(b, chunk, &geom, &mut m);
                m
            },
        )
        .reduce(
            || vec![u32::MAX; geom.len()],
            |mut a, b| {
                merge_minima(&mut a, &b);
                a
            },
        );
    Ok(minima.iter().map(|&m| m as u64).sum())
}

/// `Dist(b, class)`.
pub fn total_distance(b: &Image, class: &[Image], spec: &WindowSpec) -> Result<f64> {
    total_distance_sq(b, class, spec).map(|s| (s as f64).sqrt())
}

/// Index of the smallest value; ties go to the smallest index.
pub fn argmin(values: &[u64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classification {
    pub digit: usize,
    pub dist_sq: [u64; NUM_CLASSES],
}

impl Classification {
    pub fn from_distances(dist_sq: [u64; NUM_CLASSES]) -> Self {
        Classification {
            digit: argmin(&dist_sq),
            dist_sq,
        }
    }

    pub fn distance(&self, digit: usize) -> f64 {
        (self.dist_sq[digit] as f64).sqrt()
    }
}

/// Classifies one image against ten training classes.
pub fn classify<S: TrainingSource + ?Sized>(
    b: &Image,
    train: &S,
    spec: &WindowSpec,
) -> Result<Classification> {
    Ok(classify_batch(&[b], train, spec)?[0])
}

/// Class distances for a batch of test images.
pub fn classify_batch<S: TrainingSource + ?Sized>(
    tests: &[&Image],
    train: &S,
    spec: &WindowSpec,
) -> Result<Vec<Classification>> {
    train.check_nonempty()?;
    let geom = WindowGeometry::new(spec);
    if geom.is_empty() {
        return Err(WnnError::NoWindows);
    }
    let mut dist = vec![[0u64; NUM_CLASSES]; tests.len()];
    for digit in 0..NUM_CLASSES {
        let minima = class_window_minima(tests, train, digit, &geom)?;
        for (d, row) in dist.iter_mut().zip(minima.chunks(geom.len())) {
            d[digit] = row.iter().map(|&m| m as u64).sum();
        }
    }
    Ok(dist
        .into_iter()
        .map(Classification::from_distances)
        .collect())
}

/// One classified test image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    /// Position in the test set's enumeration (class order, then file order).
    pub index: usize,
    pub truth: u8,
    pub predicted: u8,
    pub dist_sq: [u64; NUM_CLASSES],
}

impl Prediction {
    pub fn is_error(&self) -> bool {
        self.truth != self.predicted
    }
}

/// Per-digit and total error counts plus every prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationReport {
    pub predictions: Vec<Prediction>,
    pub per_digit_errors: [usize; NUM_CLASSES],
    pub per_digit_tests: [usize; NUM_CLASSES],
    pub total_errors: usize,
}

impl EvaluationReport {
    pub fn from_predictions(predictions: Vec<Prediction>) -> Self {
        let mut per_digit_errors = [0; NUM_CLASSES];
        let mut per_digit_tests = [0; NUM_CLASSES];
        for p in &predictions {
            per_digit_tests[p.truth as usize] += 1;
            if p.is_error() {
                per_digit_errors[p.truth as usize] += 1;
            }
        }
        EvaluationReport {
            total_errors: per_digit_errors.iter().sum(),
            predictions,
            per_digit_errors,
            per_digit_tests,
        }
    }

    pub fn total_tests(&self) -> usize {
        self.predictions.len()
    }

    /// Error rate in percent.
    pub fn error_rate(&self) -> f64 {
        if self.predictions.is_empty() {
            0.0
        } else {
            100.0 * self.total_errors as f64 / self.predictions.len() as f64
        }
    }

    /// Error rate formatted to two decimals, e.g. `1.06%`.
    pub fn rate_string(&self) -> String {
        format!("{:.2}%", self.error_rate())
    }

    pub fn summary_line(&self) -> String {
        format!(
            "total errors {} of {} ({})",
            self.total_errors,
            self.total_tests(),
            self.rate_string()
        )
    }

    /// `digit,errors,tests` per digit, then a `total` row.
    pub fn to_table_csv(&self) -> String {
        let mut s = String::from("digit,errors,tests\n");
        for d in 0..NUM_CLASSES {
            let _ = writeln!(
                s,
                "{d},{},{}",
                self.per_digit_errors[d], self.per_digit_tests[d]
            );
        }
        let _ = writeln!(s, "total,{},{}", self.total_errors, self.total_tests());
        s
    }

    /// One row per test image: index, truth, prediction and the ten class
    /// distances (square-rooted, 6 decimals).
    pub fn to_predictions_csv(&self) -> String {
        let mut s = String::from("index,true,predicted");
        for d in 0..NUM_CLASSES {
            let _ = write!(s, ",dist{d}");
        }
        s.push('\n');
        for p in &self.predictions {
            let _ = write!(s, "{},{},{}", p.index, p.truth, p.predicted);
            for &d in &p.dist_sq {
                let _ = write!(s, ",{:.6}", (d as f64).sqrt());
            }
            s.push('\n');
        }
        s
    }
}

/// Digits × classifiers grid with a totals row, one column per report.
pub fn sweep_table_csv(columns: &[(String, &EvaluationReport)]) -> String {
    let mut s = String::from("digit");
    for (name, _) in columns {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    for d in 0..NUM_CLASSES {
        let _ = write!(s, "{d}");
        for (_, r) in columns {
            let _ = write!(s, ",{}", r.per_digit_errors[d]);
        }
        s.push('\n');
    }
    s.push_str("total");
    for (_, r) in columns {
        let _ = write!(s, ",{}", r.total_errors);
    }
    s.push('\n');
    s
}

/// Test images with their labels, in class order then file order.
pub fn labeled_tests(test: &LabeledDataset) -> (Vec<&Image>, Vec<u8>) {
    test.iter().map(|(d, img)| (img, d as u8)).unzip()
}

/// Classifies a slice of labelled test images; `first_index` numbers them.
pub fn evaluate_images<S: TrainingSource + ?Sized>(
    tests: &[&Image],
    truths: &[u8],
    first_index: usize,
    train: &S,
    spec: &WindowSpec,
) -> Result<Vec<Prediction>> {
    let cls = classify_batch(tests, train, spec)?;
    Ok(cls
        .into_iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (c, &truth))| Prediction {
            index: first_index + i,
            truth,
            predicted: c.digit as u8,
            dist_sq: c.dist_sq,
        })
        .collect())
}

/// Classifies every test image and counts errors per digit.
pub fn evaluate<S: TrainingSource + ?Sized>(
    test: &LabeledDataset,
    train: &S,
    spec: &WindowSpec,
) -> Result<EvaluationReport> {
    let (tests, truths) = labeled_tests(test);
    let preds = evaluate_images(&tests, &truths, 0, train, spec)?;
    Ok(EvaluationReport::from_predictions(preds))
}

/// Straightforward triple-loop implementation of the same quantities, with
/// no integral images and no shared code paths. Used as the equivalence
/// oracle by the `selfcheck` command and the test suites.
pub mod reference {
    use super::{argmin, Classification};
    use crate::image::{Image, NUM_CLASSES, PIXELS, SIDE};

    /// `Σ_{y∈W} (b(y) − a(y))²` with off-screen slots read as 0.
    pub fn window_sq(b: &Image, a: &Image, window: usize, size: usize) -> u64 {
        let half = (size / 2) as isize;
        let cx = (window % SIDE) as isize;
        let cy = (window / SIDE) as isize;
        let mut sum = 0u64;
        for y in cy - half..=cy + half {
            for x in cx - half..=cx + half {
                let d = b.get_padded(x, y) as i64 - a.get_padded(x, y) as i64;
                sum += (d * d) as u64;
            }
        }
        sum
    }

    pub fn window_distance_sq(b: &Image, class: &[Image], window: usize, size: usize) -> u64 {
        class
            .iter()
            .map(|a| window_sq(b, a, window, size))
            .min()
            .expect("nonempty class")
    }

    pub fn total_distance_sq(b: &Image, class: &[Image], size: usize, excluded: &[usize]) -> u64 {
        (0..PIXELS)
            .filter(|w| !excluded.contains(w))
            .map(|w| window_distance_sq(b, class, w, size))
            .sum()
    }

    pub fn classify(
        b: &Image,
        classes: &[Vec<Image>],
        size: usize,
        excluded: &[usize],
    ) -> Classification {
        let d: [u64; NUM_CLASSES] =
            std::array::from_fn(|j| total_distance_sq(b, &classes[j], size, excluded));
        Classification {
            digit: argmin(&d),
            dist_sq: d,
        }
    }

    /// Plain Euclidean nearest neighbour over raw pixels.
    pub fn nearest_neighbour(b: &Image, classes: &[Vec<Image>]) -> usize {
        let d: Vec<u64> = classes
            .iter()
            .map(|c| {
                c.iter()
                    .map(|a| b.squared_distance(a))
                    .min()
                    .expect("nonempty class")
            })
            .collect();
        argmin(&d)
    }
}
