//! Acceptance suite: one `PASS` / `FAIL` / `NOT RUN` line per criterion.
//!
//! Desk-scale criteria run in the default `acceptance_report` test. The
//! full-data reproductions need the real MNIST / EMNIST downloads and many
//! CPU hours; they are `#[ignore]`d and read their data directories from
//! `WNN_MNIST_DIR` and `WNN_EMNIST_DIR`.

#![allow(clippy::needless_range_loop)]

mod common;

use std::fmt::Write as _;
use std::io::Write as _;

use common::*;
use rand::seq::SliceRandom;
use rand::Rng;
use wnn_core::augment::{self, AugmentationPlan, AugmentedSet, DatasetFamily, SetId};
use wnn_core::dataset::{self, EmnistDigitsPaths, LabeledDataset, MnistPaths};
use wnn_core::image::{Image, NUM_CLASSES, PIXELS};
use wnn_core::prune::{self, ExclusionState, WindowTable};
use wnn_core::wnn::{self, EvaluationReport, WindowGeometry, WindowSpec};

/// Table 1 totals row: NN, then WNN3 … WNN23.
const TABLE1_TOTALS: [usize; 12] = [266, 407, 185, 126, 110, 106, 107, 114, 121, 130, 139, 148];
const TABLE1_WNN11_PER_DIGIT: [usize; 10] = [5, 5, 7, 14, 6, 2, 8, 18, 12, 29];
const MNIST_SET_SIZES: [usize; 5] = [60_000, 540_000, 2_700_000, 2_700_000, 4_860_000];
const EMNIST_SET_SIZES: [usize; 5] = [240_000, 2_160_000, 10_800_000, 6_000_000, 30_000_000];
const EMNIST_SET0_WNN11_ERRORS: usize = 303;
/// Published counts for full augmented runs and the relative tolerance allowed.
const AUGMENTED_TOLERANCE: f64 = 0.15;

enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
}

fn report_line(id: &str, title: &str, outcome: &Outcome) -> String {
    match outcome {
        Outcome::Pass(m) => format!("criterion {id:<3} PASS     {title}: {m}"),
        Outcome::Fail(m) => format!("criterion {id:<3} FAIL     {title}: {m}"),
        Outcome::NotRun(m) => format!("criterion {id:<3} NOT RUN  {title}: {m}"),
    }
}

/// Writes straight to the process stdout so the lines survive test capture.
fn emit(line: &str) {
    let out = std::io::stdout();
    let mut lock = out.lock();
    let _ = writeln!(lock, "{line}");
    let _ = lock.flush();
}

// ---------------------------------------------------------------- criterion 1

fn oracle_equivalence(csv: &mut String) -> Outcome {
    let sizes = [3, 5, 11];
    let mut mismatches = Vec::new();
    for instance in 0..50u64 {
        let mut r = rng(1000 + instance);
        let size = sizes[instance as usize % 3];
        let train = toy_dataset(&mut r, 5, "toy");
        let tests = toy_tests(&mut r, 20);
        let refs: Vec<&Image> = tests.iter().map(|(_, b)| b).collect();
        let truths: Vec<u8> = tests.iter().map(|(d, _)| *d).collect();
        let geom = WindowGeometry::all_windows(size).unwrap();

        let naive: Vec<Vec<Vec<u64>>> = refs
            .iter()
            .map(|b| naive_minima(b, train.classes(), size))
            .collect();
        for digit in 0..NUM_CLASSES {
            let got = wnn::class_window_minima(&refs, &train, digit, &geom).unwrap();
            for (t, row) in got.chunks(PIXELS).enumerate() {
                for (w, &v) in row.iter().enumerate() {
                    if v as u64 != naive[t][digit][w] {
                        mismatches.push(format!(
                            "instance {instance} test {t} class {digit} window {w}"
                        ));
                    }
                }
            }
        }

        let preds =
            wnn::evaluate_images(&refs, &truths, 0, &train, &WindowSpec::new(size).unwrap())
                .unwrap();
        for (t, p) in preds.iter().enumerate() {
            let (digit, totals) = naive_classify(&naive[t], &[]);
            if p.dist_sq.to_vec() != totals || p.predicted as usize != digit {
                mismatches.push(format!(
                    "instance {instance} test {t}: totals or prediction differ"
                ));
            }
        }
        let report = EvaluationReport::from_predictions(preds);
        let _ = writeln!(csv, "# criterion 1 instance {instance} S={size}");
        csv.push_str(&report.to_predictions_csv());
    }
    if mismatches.is_empty() {
        Outcome::Pass("50 instances x 20 tests, every window minimum, total and prediction equal the naive oracle".into())
    } else {
        Outcome::Fail(format!(
            "{} mismatches, first: {}",
            mismatches.len(),
            mismatches[0]
        ))
    }
}

// ---------------------------------------------------------------- criterion 2

/// 600 training images per digit and 1000 seeded random test images drawn
/// from the rest of the bundled MNIST sample.
fn nn_reduction_split() -> (LabeledDataset, Vec<(u8, Image)>) {
    let sample = mnist_sample();
    let train = sample.take_per_class(600);
    let pool: Vec<(u8, Image)> = sample
        .skip_per_class(600)
        .iter()
        .map(|(d, img)| (d as u8, img.clone()))
        .collect();
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut rng(2024));
    let mut chosen = idx[..1000].to_vec();
    chosen.sort_unstable();
    (train, chosen.into_iter().map(|i| pool[i].clone()).collect())
}

/// Plain nearest neighbour: minimal squared Euclidean distance per class.
fn direct_nn(b: &Image, train: &LabeledDataset) -> (usize, Vec<u64>) {
    let totals: Vec<u64> = train
        .classes()
        .iter()
        .map(|class| class.iter().map(|a| b.squared_distance(a)).min().unwrap())
        .collect();
    (first_argmin(&totals), totals)
}

fn nn_reduction(csv: &mut String) -> Outcome {
    let (train, tests) = nn_reduction_split();
    let refs: Vec<&Image> = tests.iter().map(|(_, b)| b).collect();
    let truths: Vec<u8> = tests.iter().map(|(d, _)| *d).collect();
    let preds =
        wnn::evaluate_images(&refs, &truths, 0, &train, &WindowSpec::full_screen()).unwrap();
    let mut mismatches = 0;
    let mut nn_rows = String::from("index,nn_predicted\n");
    for (i, (p, b)) in preds.iter().zip(&refs).enumerate() {
        let (digit, totals) = direct_nn(b, &train);
        if p.predicted as usize != digit || p.dist_sq.to_vec() != totals {
            mismatches += 1;
        }
        let _ = writeln!(nn_rows, "{i},{digit}");
    }
    let report = EvaluationReport::from_predictions(preds);
    csv.push_str("# criterion 2 full-screen window\n");
    csv.push_str(&report.to_predictions_csv());
    csv.push_str(&nn_rows);
    if mismatches == 0 {
        Outcome::Pass(format!(
            "1000 tests vs 6000 training images, 0 mismatches (NN errors {})",
            report.total_errors
        ))
    } else {
        Outcome::Fail(format!(
            "{mismatches} of 1000 predictions differ from direct NN"
        ))
    }
}

// ---------------------------------------------------------------- criterion 3

fn table1_status() -> Outcome {
    match std::env::var("WNN_MNIST_DIR") {
        Ok(dir) => Outcome::NotRun(format!(
            "WNN_MNIST_DIR={dir} is set; run `cargo test -p wnn-core --test acceptance -- --ignored table1` (hours of CPU)"
        )),
        Err(_) => Outcome::NotRun(
            "needs the MNIST download (WNN_MNIST_DIR) and ~4 CPU-hours; run the ignored `table1_reproduction` test".into(),
        ),
    }
}

// ---------------------------------------------------------------- criterion 4

fn cardinalities(csv: &mut String) -> Outcome {
    let mut problems = Vec::new();
    csv.push_str("# criterion 4\nfamily,set,count\n");
    for (family, base, expected) in [
        (DatasetFamily::MnistBalanced, 6000, MNIST_SET_SIZES),
        (DatasetFamily::Emnist, 24_000, EMNIST_SET_SIZES),
    ] {
        for set in SetId::ALL {
            let plan = AugmentationPlan::new(family, set, [base; NUM_CLASSES]);
            // stream every (digit, base image, chain) index, nothing materialised
            let count = plan.indices().count();
            let _ = writeln!(csv, "{family:?},{},{count}", set.get());
            if count != expected[set.get() as usize] || plan.len() != count {
                problems.push(format!(
                    "{family:?} {set}: {count} != {}",
                    expected[set.get() as usize]
                ));
            }
        }
    }
    let mut r = rng(404);
    for _ in 0..100 {
        let density = r.gen_range(0.05..0.6);
        let img = random_image(&mut r, density);
        let fam = augment::extension_family(&img);
        if fam.len() != augment::EXTENSION_FAMILY_SIZE || fam.len() != 125 {
            problems.push(format!("extension family of size {}", fam.len()));
        }
    }
    let _ = writeln!(csv, "extension,125,{}", augment::EXTENSION_FAMILY_SIZE);
    if problems.is_empty() {
        Outcome::Pass(format!(
            "MNIST Balanced {:?}, EMNIST {:?}, |A_ext| = 125 for 100 random images",
            MNIST_SET_SIZES, EMNIST_SET_SIZES
        ))
    } else {
        Outcome::Fail(problems.join("; "))
    }
}

// ---------------------------------------------------------------- criterion 5

fn augmented_status() -> Vec<(&'static str, Outcome)> {
    let emnist = std::env::var("WNN_EMNIST_DIR").ok();
    let hint = match &emnist {
        Some(dir) => format!("WNN_EMNIST_DIR={dir} is set; run the ignored test"),
        None => {
            "needs the EMNIST Digits download (WNN_EMNIST_DIR); run the ignored test".to_string()
        }
    };
    vec![
        (
            "5a",
            Outcome::NotRun(format!(
                "{hint} `emnist_subsample_sets_reduce_errors` (Sets 0/1/4 over 2000 tests: ~1.5 CPU-days at ~2 us per image pair)"
            )),
        ),
        ("5b", Outcome::NotRun(format!("{hint} `emnist_set0_wnn11_exact` (~6 CPU-hours)"))),
        (
            "5c",
            Outcome::NotRun(format!(
                "full augmented runs (days of CPU) are run via the CLI; the ignored `augmented_within_tolerance` checks their CSVs against +/-{:.0}%",
                AUGMENTED_TOLERANCE * 100.0
            )),
        ),
    ]
}

// ---------------------------------------------------------------- criterion 6

/// Exhaustive selection from scratch: every remaining window's totals are
/// re-summed from the brute-force minima, with no incremental state.
fn oracle_trace(naive: &[Vec<Vec<u64>>], truths: &[u8], k_max: usize) -> Vec<(usize, usize, f64)> {
    let mut excluded: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for _ in 0..k_max {
        let mut best: Option<(usize, usize, f64)> = None;
        for w in (0..PIXELS).filter(|w| !excluded.contains(w)) {
            let mut ex = excluded.clone();
            ex.push(w);
            let mut ne = 0;
            let mut gap = 0.0;
            for (m, &t) in naive.iter().zip(truths) {
                let (digit, totals) = naive_classify(m, &ex);
                if digit != t as usize {
                    ne += 1;
                }
                let min = *totals.iter().min().unwrap() as f64;
                gap += (totals[t as usize] as f64).sqrt() - min.sqrt();
            }
            let better = match best {
                None => true,
                Some((_, bne, bgap)) => ne < bne || (ne == bne && gap > bgap),
            };
            if better {
                best = Some((w, ne, gap));
            }
        }
        let b = best.unwrap();
        excluded.push(b.0);
        out.push(b);
    }
    out
}

fn pruning_invariants() -> Outcome {
    let mut r = rng(606);
    let train = toy_dataset(&mut r, 3, "toy-train");
    let mut test = LabeledDataset::new("toy-test", None);
    for (d, img) in toy_tests(&mut r, 40) {
        test.push(d as usize, img);
    }
    let size = 5;
    let k_max = 12;
    let table = WindowTable::compute(&test, &train, size).unwrap();
    let (refs, truths) = wnn::labeled_tests(&test);
    let naive: Vec<Vec<Vec<u64>>> = refs
        .iter()
        .map(|b| naive_minima(b, train.classes(), size))
        .collect();

    let mut problems = Vec::new();
    let mut zero_error_steps = 0;
    let trace = prune::run_exclusion_with(&table, k_max, |step, state| {
        if *state != ExclusionState::recompute(&table, state.excluded()) {
            problems.push(format!(
                "incremental totals drift at window {}",
                step.window
            ));
        }
        let untied_correct = state.dist_sq().iter().zip(table.truths()).all(|(d, &t)| {
            let min = *d.iter().min().unwrap();
            d[t as usize] == min && d.iter().filter(|&&x| x == min).count() == 1
        });
        if step.errors == 0 && untied_correct {
            zero_error_steps += 1;
            if step.gap != 0.0 {
                problems.push(format!("GAP {} != 0 on an error-free step", step.gap));
            }
        }
    })
    .unwrap();

    let oracle = oracle_trace(&naive, &truths, k_max);
    for (k, (step, &(w, ne, gap))) in trace.steps.iter().zip(&oracle).enumerate() {
        if step.window != w || step.ne != ne || (step.gap - gap).abs() > 1e-9 * gap.max(1.0) {
            problems.push(format!(
                "step {k}: engine ({}, {}, {:.6}) vs oracle ({w}, {ne}, {gap:.6})",
                step.window, step.ne, step.gap
            ));
        }
    }

    // Second instance: the test images are training images, so every step
    // classifies all of them correctly with a unique minimum.
    let mut easy = LabeledDataset::new("toy-easy", None);
    for (d, img) in train.iter().step_by(2) {
        easy.push(d, img.clone());
    }
    let easy_table = WindowTable::compute(&easy, &train, size).unwrap();
    let easy_trace = prune::run_exclusion_with(&easy_table, k_max, |step, state| {
        let untied = state.dist_sq().iter().all(|d| {
            let min = *d.iter().min().unwrap();
            d.iter().filter(|&&x| x == min).count() == 1
        });
        if step.errors == 0 && untied {
            zero_error_steps += 1;
        }
    })
    .unwrap();
    for step in &easy_trace.steps {
        if step.errors == 0 && step.gap != 0.0 {
            problems.push(format!("GAP {} != 0 on an error-free step", step.gap));
        }
    }
    if zero_error_steps == 0 {
        problems.push("no error-free step exercised the GAP = 0 rule".into());
    }

    if problems.is_empty() {
        Outcome::Pass(format!(
            "{k_max} steps on 40 tests: incremental == recompute, selection == exhaustive oracle; GAP = 0 on all {zero_error_steps} error-free untied steps"
        ))
    } else {
        Outcome::Fail(format!(
            "{} problems, first: {}",
            problems.len(),
            problems[0]
        ))
    }
}

// ---------------------------------------------------------------- criterion 7

struct DeskRun {
    outcomes: Vec<(&'static str, &'static str, Outcome)>,
    csv: String,
}

/// Criteria 1–4 inside a pool of `workers` threads, with all CSVs collected.
fn desk_run(workers: usize) -> DeskRun {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .unwrap();
    pool.install(|| {
        let mut csv = String::new();
        let outcomes = vec![
            ("1", "oracle equivalence", oracle_equivalence(&mut csv)),
            ("2", "full-screen window equals NN", nn_reduction(&mut csv)),
            ("3", "Table 1 reproduction", table1_status()),
            ("4", "augmentation cardinalities", cardinalities(&mut csv)),
        ];
        DeskRun { outcomes, csv }
    })
}

#[test]
fn acceptance_report() {
    let started = std::time::Instant::now();
    let runs: Vec<(usize, DeskRun)> = [1, 4, 16].into_iter().map(|n| (n, desk_run(n))).collect();
    let mut lines = Vec::new();
    let mut failed = false;
    let mut record = |id: &str, title: &str, o: &Outcome| {
        failed |= matches!(o, Outcome::Fail(_));
        lines.push(report_line(id, title, o));
    };

    for (id, title, o) in &runs[0].1.outcomes {
        record(id, title, o);
    }
    for (id, o) in augmented_status() {
        record(id, "augmented-set error counts", &o);
    }
    record("6", "pruning invariants", &pruning_invariants());

    let reference = &runs[0].1.csv;
    let differing: Vec<usize> = runs
        .iter()
        .filter(|(_, r)| &r.csv != reference)
        .map(|(n, _)| *n)
        .collect();
    let determinism = if differing.is_empty() {
        Outcome::Pass(format!(
            "criteria 1-4 CSVs ({} bytes) byte-identical with 1, 4 and 16 workers",
            reference.len()
        ))
    } else {
        Outcome::Fail(format!("CSV output differs with {differing:?} workers"))
    };
    record("7", "determinism across worker counts", &determinism);

    lines.sort_by_key(|l| l.split_whitespace().nth(1).map(str::to_string));
    for l in &lines {
        emit(l);
    }
    emit(&format!(
        "acceptance suite finished in {:.1}s",
        started.elapsed().as_secs_f64()
    ));
    assert!(!failed, "acceptance failures:\n{}", lines.join("\n"));
}

// ------------------------------------------------------- extended (ignored)

fn env_dir(var: &str) -> std::path::PathBuf {
    std::env::var_os(var)
        .unwrap_or_else(|| {
            panic!("{var} must point at the dataset directory for this extended test")
        })
        .into()
}

fn mnist_balanced() -> (LabeledDataset, LabeledDataset) {
    let paths = MnistPaths::in_dir(env_dir("WNN_MNIST_DIR")).expect("MNIST files");
    let (train, test) = dataset::load_mnist(&paths).expect("MNIST loads");
    dataset::make_mnist_balanced(&train, &test).expect("balanced split")
}

fn emnist() -> (LabeledDataset, LabeledDataset) {
    let paths = EmnistDigitsPaths::in_dir(env_dir("WNN_EMNIST_DIR")).expect("EMNIST files");
    dataset::load_emnist_digits(&paths).expect("EMNIST loads")
}

#[test]
#[ignore = "needs WNN_MNIST_DIR and hours of CPU"]
fn table1_reproduction() {
    let (train, test) = mnist_balanced();
    let mut specs = vec![WindowSpec::full_screen()];
    specs.extend((3..=23).step_by(2).map(|s| WindowSpec::new(s).unwrap()));
    let mut totals = Vec::new();
    for spec in &specs {
        let report = wnn::evaluate(&test, &train, spec).unwrap();
        emit(&format!("S={} {}", spec.size(), report.summary_line()));
        if spec.size() == 11 {
            assert_eq!(report.per_digit_errors, TABLE1_WNN11_PER_DIGIT);
        }
        totals.push(report.total_errors);
    }
    emit(&report_line(
        "3",
        "Table 1 reproduction",
        &if totals == TABLE1_TOTALS {
            Outcome::Pass(format!("{totals:?}"))
        } else {
            Outcome::Fail(format!("{totals:?} != {TABLE1_TOTALS:?}"))
        },
    ));
    assert_eq!(totals, TABLE1_TOTALS);
}

/// 2000 seeded test images, 200 per digit, in file order within each digit.
fn emnist_subsample(test: &LabeledDataset) -> LabeledDataset {
    prune::stratified_split(test, 200, 5).unwrap().0
}

#[test]
#[ignore = "needs WNN_EMNIST_DIR and ~1.5 CPU-days"]
fn emnist_subsample_sets_reduce_errors() {
    let (train, test) = emnist();
    let sub = emnist_subsample(&test);
    let spec = WindowSpec::new(11).unwrap();
    let errors: Vec<usize> = [0, 1, 4]
        .into_iter()
        .map(|s| {
            let set = AugmentedSet::new(&train, DatasetFamily::Emnist, SetId::new(s).unwrap());
            let r = wnn::evaluate(&sub, &set, &spec).unwrap();
            emit(&format!("EMNIST subsample Set {s}: {}", r.summary_line()));
            r.total_errors
        })
        .collect();
    assert!(errors[1] < errors[0], "Set 1 must beat Set 0: {errors:?}");
    assert!(errors[2] < errors[1], "Set 4 must beat Set 1: {errors:?}");
}

#[test]
#[ignore = "needs WNN_EMNIST_DIR and ~6 CPU-hours"]
fn emnist_set0_wnn11_exact() {
    let (train, test) = emnist();
    let r = wnn::evaluate(&test, &train, &WindowSpec::new(11).unwrap()).unwrap();
    emit(&format!("EMNIST Set 0 WNN11: {}", r.summary_line()));
    assert_eq!(r.total_errors, EMNIST_SET0_WNN11_ERRORS);
}

/// Published counts for the full augmented runs, keyed by the CLI output file
/// whose `total` row holds the corresponding count.
const AUGMENTED_TARGETS: [(&str, usize); 11] = [
    ("mnist_balanced-wnn11-set1.csv", 62),
    ("mnist_balanced-wnn11-set2.csv", 49),
    ("mnist_balanced-wnn11-set3.csv", 49),
    ("mnist_balanced-wnn11-set4.csv", 41),
    ("emnist_digits-wnn11-set1.csv", 195),
    ("emnist_digits-wnn11-set2.csv", 190),
    ("emnist_digits-wnn11-set3.csv", 177),
    ("emnist_digits-wnn11-set4.csv", 168),
    ("emnist_digits-dwnn11-set0.csv", 148),
    ("emnist_digits-hybrid11-set4.csv", 129),
    ("mnist-wnn11-set4.csv", 48),
];

/// Pruning counts: (file prefix, windows kept, CSV column, published count).
const PRUNING_TARGETS: [(&str, usize, &str, usize); 3] = [
    ("emnist_digits-wnn11-set4-prune-whole", 100, "errors", 156),
    ("emnist_digits-wnn11-set4-prune-whole", 60, "errors", 167),
    (
        "emnist_digits-wnn11-set4-prune-val",
        50,
        "holdout_errors",
        42,
    ),
];

fn within_tolerance(what: &str, got: usize, target: usize) -> bool {
    let rel = (got as f64 - target as f64).abs() / target as f64;
    emit(&format!(
        "{what}: {got} vs {target} ({:+.1}%)",
        100.0 * (got as f64 / target as f64 - 1.0)
    ));
    rel <= AUGMENTED_TOLERANCE
}

fn prune_curve_point(dir: &std::path::Path, prefix: &str, kept: usize, column: &str) -> usize {
    let file = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.starts_with(prefix) && n.ends_with(".csv"))
        .min()
        .unwrap_or_else(|| panic!("no {prefix}*.csv"));
    let text = std::fs::read_to_string(dir.join(&file)).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (kc, vc) = (
        header.iter().position(|h| *h == "kept").unwrap(),
        header
            .iter()
            .position(|h| *h == column)
            .unwrap_or_else(|| panic!("{file} has no {column}")),
    );
    lines
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[kc] == kept.to_string())
        .unwrap_or_else(|| panic!("{file} stops before {kept} windows kept"))[vc]
        .parse()
        .unwrap()
}

#[test]
#[ignore = "checks CSVs of full augmented CLI runs found in WNN_RESULTS_DIR"]
fn augmented_within_tolerance() {
    let dir = env_dir("WNN_RESULTS_DIR");
    let mut outside = Vec::new();
    for (file, target) in AUGMENTED_TARGETS {
        let text =
            std::fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"));
        let total: usize = text
            .lines()
            .find_map(|l| l.strip_prefix("total,"))
            .and_then(|rest| rest.split(',').next())
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| panic!("{file} has no total row"));
        if !within_tolerance(file, total, target) {
            outside.push(file.to_string());
        }
    }
    for (prefix, kept, column, target) in PRUNING_TARGETS {
        let got = prune_curve_point(&dir, prefix, kept, column);
        let what = format!("{prefix} {column} at {kept} windows");
        if !within_tolerance(&what, got, target) {
            outside.push(what);
        }
    }
    assert!(outside.is_empty(), "outside +/-15%: {outside:?}");
}
