//! Greedy window exclusion.
//!
//! At each step every remaining window `W` is scored by the error count
//! `NE_W` and the margin sum `GAP_W` that WNN would have with `W` excluded
//! as well. Among the windows with the fewest errors the one with the
//! largest `GAP_W` is excluded (ties: smallest window index).
//!
//! Scoring never touches training images: a [`WindowTable`] caches every
//! per-(window, test image, class) minimal squared distance once, and the
//! per-(test image, class) totals are maintained by exact integer
//! subtraction as windows are removed.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LabeledDataset, Role};
use crate::image::{NUM_CLASSES, PIXELS};
use crate::wnn::{
    self, argmin, class_window_minima, TrainingSource, WindowGeometry, WindowSpec, WnnError,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PruneError {
    #[error("window index {0} is outside 0..784")]
    WindowOutOfRange(usize),
    #[error("window {0} is already excluded")]
    AlreadyExcluded(usize),
    #[error("no windows remain")]
    NoWindowsLeft,
    #[error("cannot exclude {0} windows; at most 783")]
    TooManyExclusions(usize),
    #[error("digit {digit}: {found} test images, {needed} requested for validation")]
    InsufficientImages {
        digit: usize,
        found: usize,
        needed: usize,
    },
    #[error("trace and table disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Wnn(#[from] WnnError),
}

pub type Result<T> = std::result::Result<T, PruneError>;

/// Minimal squared window distances for every window, test image and class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowTable {
    size: usize,
    truths: Vec<u8>,
    // window-major: [window][test][class]
    minima: Vec<u32>,
}

impl WindowTable {
    /// Runs the distance engine once over all 784 windows.
    pub fn compute<S: TrainingSource + ?Sized>(
        test: &LabeledDataset,
        train: &S,
        size: usize,
    ) -> Result<Self> {
        train.check_nonempty()?;
        let geom = WindowGeometry::all_windows(size)?;
        let (tests, truths) = wnn::labeled_tests(test);
        let n = tests.len();
        let mut minima = vec![0u32; PIXELS * n * NUM_CLASSES];
        for digit in 0..NUM_CLASSES {
            let m = class_window_minima(&tests, train, digit, &geom)?;
            for (t, row) in m.chunks(PIXELS).enumerate() {
                for (w, &v) in row.iter().enumerate() {
                    minima[(w * n + t) * NUM_CLASSES + digit] = v;
                }
            }
        }
        Ok(WindowTable {
            size,
            truths,
            minima,
        })
    }

    /// Builds a table from `minima[test][class][window]`.
    pub fn from_minima(
        size: usize,
        truths: Vec<u8>,
        per_test: &[[[u32; PIXELS]; NUM_CLASSES]],
    ) -> Self {
        let n = truths.len();
        assert_eq!(per_test.len(), n);
        let mut minima = vec![0u32; PIXELS * n * NUM_CLASSES];
        for (t, classes) in per_test.iter().enumerate() {
            for (j, windows) in classes.iter().enumerate() {
                for (w, &v) in windows.iter().enumerate() {
                    minima[(w * n + t) * NUM_CLASSES + j] = v;
                }
            }
        }
        WindowTable {
            size,
            truths,
            minima,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_tests(&self) -> usize {
        self.truths.len()
    }

    pub fn truths(&self) -> &[u8] {
        &self.truths
    }

    #[inline]
    pub fn minimum(&self, window: usize, test: usize, class: usize) -> u32 {
        self.minima[(window * self.n_tests() + test) * NUM_CLASSES + class]
    }

    fn window_block(&self, window: usize) -> &[u32] {
        let n = self.n_tests() * NUM_CLASSES;
        &self.minima[window * n..(window + 1) * n]
    }
}

/// Running `Dist²` totals under a growing exclusion set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExclusionState {
    excluded: Vec<bool>,
    dist_sq: Vec<[u64; NUM_CLASSES]>,
}

impl ExclusionState {
    /// All windows included.
    pub fn new(table: &WindowTable) -> Self {
        Self::recompute(table, &[false; PIXELS])
    }

    /// Totals summed from scratch for the given exclusion mask.
    pub fn recompute(table: &WindowTable, excluded: &[bool]) -> Self {
        let mut dist_sq = vec![[0u64; NUM_CLASSES]; table.n_tests()];
        for w in (0..PIXELS).filter(|&w| !excluded[w]) {
            for (d, block) in dist_sq
                .iter_mut()
                .zip(table.window_block(w).chunks(NUM_CLASSES))
            {
                for j in 0..NUM_CLASSES {
                    d[j] += block[j] as u64;
                }
            }
        }
        ExclusionState {
            excluded: excluded.to_vec(),
            dist_sq,
        }
    }

    pub fn excluded(&self) -> &[bool] {
        &self.excluded
    }

    pub fn remaining(&self) -> impl Iterator<Item = usize> + '_ {
        (0..PIXELS).filter(|&w| !self.excluded[w])
    }

    pub fn dist_sq(&self) -> &[[u64; NUM_CLASSES]] {
        &self.dist_sq
    }

    fn check_candidate(&self, window: usize) -> Result<()> {
        match self.excluded.get(window) {
            None => Err(PruneError::WindowOutOfRange(window)),
            Some(true) => Err(PruneError::AlreadyExcluded(window)),
            Some(false) => Ok(()),
        }
    }

    /// Removes `window` by subtracting its minima from every total.
    pub fn exclude(&mut self, table: &WindowTable, window: usize) -> Result<()> {
        self.check_candidate(window)?;
        if self.remaining().count() == 1 {
            return Err(PruneError::NoWindowsLeft);
        }
        for (d, block) in self
            .dist_sq
            .iter_mut()
            .zip(table.window_block(window).chunks(NUM_CLASSES))
        {
            for j in 0..NUM_CLASSES {
                d[j] -= block[j] as u64;
            }
        }
        self.excluded[window] = true;
        Ok(())
    }

    /// Current error count.
    pub fn errors(&self, table: &WindowTable) -> usize {
        self.dist_sq
            .iter()
            .zip(table.truths())
            .filter(|(d, &t)| argmin(&d[..]) != t as usize)
            .count()
    }
}

/// `NE_W` and `GAP_W` of one candidate window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    pub window: usize,
    pub errors: usize,
    pub gap: f64,
}

/// Scores excluding `window` on top of the current state.
pub fn score_candidate(
    table: &WindowTable,
    state: &ExclusionState,
    window: usize,
) -> Result<CandidateScore> {
    state.check_candidate(window)?;
    let mut errors = 0;
    let mut gap = 0.0;
    let block = table.window_block(window);
    for ((d, m), &truth) in state
        .dist_sq
        .iter()
        .zip(block.chunks(NUM_CLASSES))
        .zip(table.truths())
    {
        let after: [u64; NUM_CLASSES] = std::array::from_fn(|j| d[j] - m[j] as u64);
        if argmin(&after) != truth as usize {
            errors += 1;
        }
        gap += gap_term(&after, truth as usize);
    }
    Ok(CandidateScore {
        window,
        errors,
        gap,
    })
}

/// `Dist(B, A^truth) − min_j Dist(B, A^j)` from squared totals.
#[inline]
pub fn gap_term(dist_sq: &[u64; NUM_CLASSES], truth: usize) -> f64 {
    let min = *dist_sq.iter().min().expect("ten classes");
    (dist_sq[truth] as f64).sqrt() - (min as f64).sqrt()
}

/// `NE_W`: errors with `window` excluded in addition to the current set.
pub fn errors_excluding(
    table: &WindowTable,
    state: &ExclusionState,
    window: usize,
) -> Result<usize> {
    Ok(score_candidate(table, state, window)?.errors)
}

/// `GAP_W`: summed true-class margins with `window` excluded as well.
pub fn gap_score(table: &WindowTable, state: &ExclusionState, window: usize) -> Result<f64> {
    Ok(score_candidate(table, state, window)?.gap)
}

/// Fewest errors, then largest gap, then smallest window index.
pub fn select(candidates: &[CandidateScore]) -> Option<CandidateScore> {
    let fewest = candidates.iter().map(|c| c.errors).min()?;
    candidates
        .iter()
        .filter(|c| c.errors == fewest)
        .fold(None::<CandidateScore>, |best, c| match best {
            Some(b) if b.gap > c.gap || (b.gap == c.gap && b.window < c.window) => Some(b),
            _ => Some(*c),
        })
}

/// Scores every remaining window (in parallel) and applies [`select`].
pub fn select_next_exclusion(
    table: &WindowTable,
    state: &ExclusionState,
) -> Result<CandidateScore> {
    let remaining: Vec<usize> = state.remaining().collect();
    if remaining.len() <= 1 {
        return Err(PruneError::NoWindowsLeft);
    }
    let scores = remaining
        .par_iter()
        .map(|&w| score_candidate(table, state, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(select(&scores).expect("nonempty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionStep {
    pub window: usize,
    pub ne: usize,
    pub gap: f64,
    /// Errors after this step's exclusion (equals `ne`).
    pub errors: usize,
}

/// How the evaluation data were chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub per_digit_validation: usize,
    pub seed: u64,
    pub validation_size: usize,
    pub holdout_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionTrace {
    pub window_size: usize,
    pub baseline_errors: usize,
    pub steps: Vec<ExclusionStep>,
    pub split: Option<SplitInfo>,
}

impl ExclusionTrace {
    pub fn excluded_windows(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.window).collect()
    }

    /// Errors after `k` exclusions, `k = 0..=steps.len()`.
    pub fn curve(&self) -> Vec<usize> {
        std::iter::once(self.baseline_errors)
            .chain(self.steps.iter().map(|s| s.errors))
            .collect()
    }

    /// The exclusion set after `k` steps as a window spec.
    pub fn spec_after(&self, k: usize) -> Result<WindowSpec> {
        Ok(WindowSpec::new(self.window_size)?
            .with_excluded(self.steps[..k].iter().map(|s| s.window))?)
    }

    /// `step,window,kept,ne,gap,errors[,holdout_errors]`; step 0 is the
    /// baseline with no window excluded.
    pub fn to_csv(&self, holdout: Option<&[usize]>) -> String {
        let mut s = String::from("step,window,kept,ne,gap,errors");
        if holdout.is_some() {
            s.push_str(",holdout_errors");
        }
        s.push('\n');
        let _ = write!(s, "0,,{PIXELS},,,{}", self.baseline_errors);
        if let Some(h) = holdout {
            let _ = write!(s, ",{}", h[0]);
        }
        s.push('\n');
        for (k, st) in self.steps.iter().enumerate() {
            let _ = write!(
                s,
                "{},{},{},{},{:.6},{}",
                k + 1,
                st.window,
                PIXELS - k - 1,
                st.ne,
                st.gap,
                st.errors
            );
            if let Some(h) = holdout {
                let _ = write!(s, ",{}", h[k + 1]);
            }
            s.push('\n');
        }
        s
    }
}

/// Excludes `k_max` windows greedily, recording the error curve.
pub fn run_exclusion(table: &WindowTable, k_max: usize) -> Result<ExclusionTrace> {
    run_exclusion_with(table, k_max, |_, _| {})
}

/// As [`run_exclusion`], calling `observe(step, state)` after each step.
pub fn run_exclusion_with(
    table: &WindowTable,
    k_max: usize,
    mut observe: impl FnMut(&ExclusionStep, &ExclusionState),
) -> Result<ExclusionTrace> {
    if k_max >= PIXELS {
        return Err(PruneError::TooManyExclusions(k_max));
    }
    let mut state = ExclusionState::new(table);
    let baseline_errors = state.errors(table);
    let mut steps = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        let best = select_next_exclusion(table, &state)?;
        state.exclude(table, best.window)?;
        let step = ExclusionStep {
            window: best.window,
            ne: best.errors,
            gap: best.gap,
            errors: state.errors(table),
        };
        observe(&step, &state);
        steps.push(step);
    }
    Ok(ExclusionTrace {
        window_size: table.size(),
        baseline_errors,
        steps,
        split: None,
    })
}

/// Error curve of a trace's exclusion order on another evaluation table.
pub fn replay(trace: &ExclusionTrace, table: &WindowTable) -> Result<Vec<usize>> {
    if trace.window_size != table.size() {
        return Err(PruneError::Mismatch(format!(
            "trace window size {} vs table {}",
            trace.window_size,
            table.size()
        )));
    }
    let mut state = ExclusionState::new(table);
    let mut curve = vec![state.errors(table)];
    for st in &trace.steps {
        state.exclude(table, st.window)?;
        curve.push(state.errors(table));
    }
    Ok(curve)
}

/// Seeded stratified split: `per_digit` images of every digit go to the
/// validation set, the rest to the holdout; both keep file order.
pub fn stratified_split(
    test: &LabeledDataset,
    per_digit: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut validation = LabeledDataset::new(format!("{}-validation", test.name), Some(Role::Test));
    let mut holdout = LabeledDataset::new(format!("{}-holdout", test.name), Some(Role::Test));
    for digit in 0..NUM_CLASSES {
        let class = test.class(digit);
        if class.len() < per_digit {
            return Err(PruneError::InsufficientImages {
                digit,
                found: class.len(),
                needed: per_digit,
            });
        }
        let mut order: Vec<usize> = (0..class.len()).collect();
        order.shuffle(&mut rng);
        let mut chosen = vec![false; class.len()];
        for &i in &order[..per_digit] {
            chosen[i] = true;
        }
        for (img, &c) in class.iter().zip(&chosen) {
            if c {
                validation.push(digit, img.clone());
            } else {
                holdout.push(digit, img.clone());
            }
        }
    }
    Ok((validation, holdout))
}
