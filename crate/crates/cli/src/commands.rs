//! The `eval`, `sweep`, `prune`, `augment-stats` and `selfcheck` verbs.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wnn_core::augment::{self, AugmentationPlan, SetId};
use wnn_core::dataset::{LabeledDataset, EMNIST_TRAIN_PER_DIGIT, MNIST_BALANCED_TRAIN_PER_DIGIT};
use wnn_core::dwnn::{self, HybridConfig};
use wnn_core::image::{Image, NUM_CLASSES, PIXELS};
use wnn_core::prune::{self, ExclusionState, SplitInfo, WindowTable};
use wnn_core::wnn::{self, reference, EvaluationReport, WindowGeometry, WindowSpec};

use crate::checkpoint::{run_batched, HybridRow, Progress, Row};
use crate::config::{ClassifierKind, DatasetKind, ExperimentConfig};
use crate::data::{self, RunData, Source};
use crate::manifest::{DatasetRecord, RunRecorder};

/// Published per-digit training counts of standard MNIST.
const MNIST_TRAIN_PER_DIGIT: [usize; NUM_CLASSES] =
    [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949];

fn spec_for(cfg: &ExperimentConfig) -> Result<WindowSpec> {
    Ok(match cfg.classifier {
        ClassifierKind::Nn => WindowSpec::full_screen(),
        _ => WindowSpec::new(cfg.window_size)?,
    })
}

/// Identifies a run for checkpoint reuse: every setting that changes the
/// results, plus the content hashes of the data.
fn run_key(cfg: &ExperimentConfig, recorder: &RunRecorder) -> serde_json::Value {
    json!({
        "dataset": cfg.dataset,
        "classifier": cfg.classifier,
        "window_size": cfg.effective_window_size(),
        "set_id": cfg.set_id,
        "test_per_digit": cfg.test_per_digit,
        "seed": cfg.seed,
        "data": recorder.datasets().iter().map(|d| &d.sha256).collect::<Vec<_>>(),
    })
}

/// Classifies the test set with the configured classifier, checkpointing
/// each batch. Returns `None` when `max_batches` stopped the run early.
fn classify_all(
    cfg: &ExperimentConfig,
    data: &RunData,
    recorder: &RunRecorder,
    stem: &str,
    max_batches: Option<usize>,
) -> Result<Option<Vec<Row>>> {
    let (tests, truths) = wnn::labeled_tests(&data.test);
    let spec = spec_for(cfg)?;
    let source = Source::new(cfg, &data.train)?;
    eprintln!(
        "{stem}: {} test images against {} training images",
        tests.len(),
        source.total()
    );
    let ckpt_path = recorder.path(&format!("{stem}.checkpoint.jsonl"));
    let key = run_key(cfg, recorder);
    let classify = |b: &[&Image], t: &[u8], first: usize| -> Result<Vec<Row>> {
        Ok(match cfg.classifier {
            ClassifierKind::Nn | ClassifierKind::Wnn => {
                wnn::evaluate_images(b, t, first, source.as_dyn(), &spec)?
                    .iter()
                    .map(Row::from_prediction)
                    .collect()
            }
            ClassifierKind::Dwnn => dwnn::dwnn_evaluate_images(b, t, first, &data.train, &spec)?
                .iter()
                .map(Row::from_prediction)
                .collect(),
            ClassifierKind::Hybrid => {
                let mut hc = HybridConfig::new(&data.train, source.as_dyn());
                hc.spec = spec.clone();
                dwnn::hybrid_evaluate_images(b, t, first, &hc)?
                    .iter()
                    .map(|(p, o)| Row {
                        hybrid: Some(HybridRow {
                            wnn: o.wnn,
                            dwnn: o.dwnn,
                            fallback: o.fallback,
                        }),
                        ..Row::from_prediction(p)
                    })
                    .collect()
            }
        })
    };
    if cfg.classifier == ClassifierKind::Hybrid && cfg.check_sizes {
        let hc = HybridConfig::new(&data.train, source.as_dyn());
        hc.check_fallback_size(
            EMNIST_TRAIN_PER_DIGIT * augment::chains(cfg.dataset.family(), SetId::new(4)?).len(),
        )
        .map_err(anyhow::Error::msg)?;
    }
    let (progress, ckpt) = run_batched(
        &tests,
        &truths,
        cfg.batch_size,
        &ckpt_path,
        &key,
        max_batches,
        classify,
    )?;
    match progress {
        Progress::Complete(rows) => {
            ckpt.finish()?;
            Ok(Some(rows))
        }
        Progress::Stopped { done, total } => {
            eprintln!(
                "stopped after {done} of {total} test images; rerun the same command to resume from {}",
                ckpt_path.display()
            );
            Ok(None)
        }
    }
}

fn load_recorded(cfg: &ExperimentConfig, command: &str) -> Result<(RunData, RunRecorder)> {
    let data = data::load(cfg)?;
    let mut recorder = RunRecorder::new(command, cfg)?;
    recorder.dataset(DatasetRecord::of(&data.train));
    recorder.dataset(DatasetRecord::of(&data.test));
    Ok((data, recorder))
}

fn report_json(report: &EvaluationReport) -> serde_json::Value {
    json!({
        "total_errors": report.total_errors,
        "tests": report.total_tests(),
        "error_rate": report.rate_string(),
        "per_digit_errors": report.per_digit_errors,
    })
}

/// `eval`: one classifier on one training set; writes the per-digit table,
/// per-image predictions, hybrid disagreements and a manifest.
pub fn eval(
    cfg: &ExperimentConfig,
    max_batches: Option<usize>,
) -> Result<Option<EvaluationReport>> {
    let (data, mut recorder) = load_recorded(cfg, "eval")?;
    let stem = cfg.stem();
    let Some(rows) = classify_all(cfg, &data, &recorder, &stem, max_batches)? else {
        return Ok(None);
    };
    let report = EvaluationReport::from_predictions(rows.iter().map(Row::prediction).collect());
    recorder.write(&format!("{stem}.csv"), &report.to_table_csv())?;
    recorder.write(
        &format!("{stem}-predictions.csv"),
        &report.to_predictions_csv(),
    )?;
    let mut results = report_json(&report);
    if cfg.classifier == ClassifierKind::Hybrid {
        let outcomes: Vec<_> = rows.iter().filter_map(Row::outcome).collect();
        let disagreements = outcomes.iter().filter(|o| o.fallback.is_some()).count();
        recorder.write(
            &format!("{stem}-disagreements.csv"),
            &dwnn::disagreements_csv(&outcomes),
        )?;
        results["disagreements"] = json!(disagreements);
    }
    println!("{stem}: {}", report.summary_line());
    recorder.finish(&format!("{stem}.manifest.json"), results)?;
    Ok(Some(report))
}

fn column_name(size: usize) -> String {
    if size == wnn::FULL_SCREEN_SIZE {
        "NN".to_string()
    } else {
        format!("WNN{size}")
    }
}

/// `sweep`: WNN for every window size (55 runs as NN) on one training set,
/// written as a digits × sizes error grid.
pub fn sweep(
    cfg: &ExperimentConfig,
    max_batches: Option<usize>,
) -> Result<Option<Vec<(String, EvaluationReport)>>> {
    let (data, mut recorder) = load_recorded(cfg, "sweep")?;
    let mut columns = Vec::new();
    for &size in &cfg.sizes {
        let mut c = cfg.clone();
        c.window_size = size;
        c.classifier = if size == wnn::FULL_SCREEN_SIZE {
            ClassifierKind::Nn
        } else {
            ClassifierKind::Wnn
        };
        let stem = c.stem();
        let Some(rows) = classify_all(&c, &data, &recorder, &stem, max_batches)? else {
            return Ok(None);
        };
        let report = EvaluationReport::from_predictions(rows.iter().map(Row::prediction).collect());
        println!("{}: {}", column_name(size), report.summary_line());
        recorder.write(&format!("{stem}.csv"), &report.to_table_csv())?;
        columns.push((column_name(size), report));
    }
    let refs: Vec<(String, &EvaluationReport)> =
        columns.iter().map(|(n, r)| (n.clone(), r)).collect();
    let mut name = format!("{}-sweep-set{}", cfg.dataset.as_str(), cfg.set_id);
    if let Some(n) = cfg.test_per_digit {
        name.push_str(&format!("-sub{n}-seed{}", cfg.seed));
    }
    recorder.write(&format!("{name}.csv"), &wnn::sweep_table_csv(&refs))?;
    let totals: Vec<u64> = columns.iter().map(|(_, r)| r.total_errors as u64).collect();
    let best = &columns[wnn::argmin(&totals)].0;
    println!("fewest errors: {best}");
    let results = json!({
        "columns": columns.iter().map(|(n, r)| json!({"name": n, "total_errors": r.total_errors, "error_rate": r.rate_string()})).collect::<Vec<_>>(),
        "best": best,
    });
    recorder.finish(&format!("{name}.manifest.json"), results)?;
    Ok(Some(columns))
}

/// Result of a `prune` run.
pub struct PruneOutcome {
    pub trace: prune::ExclusionTrace,
    pub holdout_curve: Option<Vec<usize>>,
}

/// `prune`: greedy window exclusion on the whole test set, or on a
/// stratified validation split with the order replayed on the holdout.
pub fn prune_cmd(cfg: &ExperimentConfig) -> Result<PruneOutcome> {
    if cfg.classifier != ClassifierKind::Wnn {
        bail!("prune selects windows of WNN: use --classifier wnn");
    }
    if cfg.k_max >= PIXELS {
        bail!(
            "--k-max {} must leave at least one of the {PIXELS} windows",
            cfg.k_max
        );
    }
    let (data, mut recorder) = load_recorded(cfg, "prune")?;
    let source = Source::new(cfg, &data.train)?;
    let size = cfg.window_size;
    let log_step = |step: &prune::ExclusionStep, state: &ExclusionState| {
        let excluded = PIXELS - state.remaining().count();
        if excluded.is_multiple_of(25) || excluded == cfg.k_max {
            eprintln!("  {excluded} windows excluded, {} errors", step.errors);
        }
    };
    let base = format!("{}-prune", cfg.stem());
    let (trace, holdout_curve, name) = match cfg.validation_per_digit {
        None => {
            eprintln!(
                "whole-test-set mode: windows are chosen on the same images they are scored on"
            );
            let table = WindowTable::compute(&data.test, source.as_dyn(), size)?;
            let trace = prune::run_exclusion_with(&table, cfg.k_max, log_step)?;
            (trace, None, format!("{base}-whole"))
        }
        Some(per_digit) => {
            let (validation, holdout) = prune::stratified_split(&data.test, per_digit, cfg.seed)?;
            eprintln!(
                "validation mode: {} validation and {} holdout images",
                validation.len(),
                holdout.len()
            );
            let table = WindowTable::compute(&validation, source.as_dyn(), size)?;
            let mut trace = prune::run_exclusion_with(&table, cfg.k_max, log_step)?;
            trace.split = Some(SplitInfo {
                per_digit_validation: per_digit,
                seed: cfg.seed,
                validation_size: validation.len(),
                holdout_size: holdout.len(),
            });
            let holdout_table = WindowTable::compute(&holdout, source.as_dyn(), size)?;
            let curve = prune::replay(&trace, &holdout_table)?;
            (
                trace,
                Some(curve),
                format!("{base}-val{per_digit}-seed{}", cfg.seed),
            )
        }
    };
    recorder.write(
        &format!("{name}.csv"),
        &trace.to_csv(holdout_curve.as_deref()),
    )?;
    let curve = trace.curve();
    let best_k = (0..curve.len()).min_by_key(|&k| (curve[k], k)).unwrap_or(0);
    println!(
        "baseline {} errors; fewest {} errors with {} windows kept",
        trace.baseline_errors,
        curve[best_k],
        PIXELS - best_k
    );
    if let Some(h) = &holdout_curve {
        println!(
            "holdout: baseline {} errors; {} errors with {} windows kept",
            h[0],
            h[h.len() - 1],
            PIXELS - (h.len() - 1)
        );
    }
    let results = json!({
        "mode": if cfg.validation_per_digit.is_some() { "validation" } else { "whole_test_set" },
        "baseline_errors": trace.baseline_errors,
        "final_errors": curve.last(),
        "excluded_windows": trace.excluded_windows(),
        "holdout_curve": holdout_curve,
    });
    recorder.finish(&format!("{name}.manifest.json"), results)?;
    Ok(PruneOutcome {
        trace,
        holdout_curve,
    })
}

/// `augment-stats`: training-set sizes of every extension, counted by
/// streaming over (digit, image, transform) indices.
pub fn augment_stats(cfg: &ExperimentConfig, nominal: bool) -> Result<String> {
    let mut recorder = RunRecorder::new("augment-stats", cfg)?;
    let class_sizes = if nominal {
        match cfg.dataset {
            DatasetKind::Mnist => MNIST_TRAIN_PER_DIGIT,
            DatasetKind::MnistBalanced => [MNIST_BALANCED_TRAIN_PER_DIGIT; NUM_CLASSES],
            DatasetKind::EmnistDigits => [EMNIST_TRAIN_PER_DIGIT; NUM_CLASSES],
        }
    } else {
        let data = data::load(cfg)?;
        recorder.dataset(DatasetRecord::of(&data.train));
        data.train.class_sizes()
    };
    let family = cfg.dataset.family();
    let mut csv = String::from("set,transforms_per_image,images");
    for d in 0..NUM_CLASSES {
        let _ = write!(csv, ",digit{d}");
    }
    csv.push('\n');
    let mut totals = Vec::new();
    for set in SetId::ALL {
        let plan = AugmentationPlan::new(family, set, class_sizes);
        let mut per_digit = [0usize; NUM_CLASSES];
        for (digit, _, _) in plan.indices() {
            per_digit[digit] += 1;
        }
        let total: usize = per_digit.iter().sum();
        let _ = write!(csv, "{},{},{total}", set.get(), plan.chains_per_image());
        for n in per_digit {
            let _ = write!(csv, ",{n}");
        }
        csv.push('\n');
        println!(
            "{set}: {} transforms per image, {total} images",
            plan.chains_per_image()
        );
        totals.push(total);
    }
    println!(
        "extension family: {} images per training image",
        augment::EXTENSION_FAMILY_SIZE
    );
    let name = format!("{}-augment-stats", cfg.dataset.as_str());
    recorder.write(&format!("{name}.csv"), &csv)?;
    recorder.finish(
        &format!("{name}.manifest.json"),
        json!({"totals": totals, "class_sizes": class_sizes, "nominal": nominal, "extension_family": augment::EXTENSION_FAMILY_SIZE}),
    )?;
    Ok(csv)
}

fn random_image(r: &mut ChaCha8Rng) -> Image {
    let density = r.gen_range(0.1..0.5);
    Image::from_fn(|_, _| if r.gen_bool(density) { r.gen() } else { 0 })
}

fn random_dataset(r: &mut ChaCha8Rng, per_class: usize) -> LabeledDataset {
    let mut ds = LabeledDataset::new("selfcheck", None);
    for d in 0..NUM_CLASSES {
        for _ in 0..per_class {
            ds.push(d, random_image(r));
        }
    }
    ds
}

/// One named equivalence check and the number of mismatches it found.
pub struct Check {
    pub name: &'static str,
    pub compared: usize,
    pub mismatches: usize,
}

/// `selfcheck`: the fast engine against the plain reference implementation
/// on random toy instances.
pub fn selfcheck(instances: usize, seed: u64) -> Result<Vec<Check>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut minima = Check {
        name: "window minima",
        compared: 0,
        mismatches: 0,
    };
    let mut totals = Check {
        name: "class distances and predictions",
        compared: 0,
        mismatches: 0,
    };
    let mut nn = Check {
        name: "full-screen window vs nearest neighbour",
        compared: 0,
        mismatches: 0,
    };
    let mut family = Check {
        name: "extension-family distance",
        compared: 0,
        mismatches: 0,
    };
    let mut pruning = Check {
        name: "incremental exclusion totals",
        compared: 0,
        mismatches: 0,
    };
    for i in 0..instances {
        let size = [3, 5, 11][i % 3];
        let train = random_dataset(&mut r, 5);
        let mut test = LabeledDataset::new("selfcheck-test", None);
        for _ in 0..20 {
            let d = r.gen_range(0..NUM_CLASSES);
            test.push(d, random_image(&mut r));
        }
        let (tests, truths) = wnn::labeled_tests(&test);
        let geom = WindowGeometry::all_windows(size)?;
        for digit in 0..NUM_CLASSES {
            let got = wnn::class_window_minima(&tests, &train, digit, &geom)?;
            for (t, row) in got.chunks(PIXELS).enumerate() {
                for (w, &v) in row.iter().enumerate() {
                    minima.compared += 1;
                    if v as u64
                        != reference::window_distance_sq(tests[t], train.class(digit), w, size)
                    {
                        minima.mismatches += 1;
                    }
                }
            }
        }
        let excluded: Vec<usize> = (0..r.gen_range(0..40))
            .map(|_| r.gen_range(0..PIXELS))
            .collect();
        let spec = WindowSpec::new(size)?.with_excluded(
            excluded
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>(),
        )?;
        let mut excluded: Vec<usize> = spec.excluded().collect();
        excluded.sort_unstable();
        let preds = wnn::evaluate_images(&tests, &truths, 0, &train, &spec)?;
        let full = wnn::evaluate_images(&tests, &truths, 0, &train, &WindowSpec::full_screen())?;
        for ((p, f), b) in preds.iter().zip(&full).zip(&tests) {
            let want = reference::classify(b, train.classes(), size, &excluded);
            totals.compared += 1;
            if want.digit != p.predicted as usize || want.dist_sq != p.dist_sq {
                totals.mismatches += 1;
            }
            nn.compared += 1;
            if reference::nearest_neighbour(b, train.classes()) != f.predicted as usize {
                nn.mismatches += 1;
            }
        }
        if i < 2 {
            let (a, b) = (train.class(0)[0].clone(), tests[0]);
            let ext = augment::extension_family(&a);
            let want: u64 = (0..PIXELS)
                .map(|w| reference::window_distance_sq(b, &ext, w, size))
                .sum();
            family.compared += 1;
            if dwnn::dwnn_image_distance_sq(b, &a, &WindowSpec::new(size)?) != want {
                family.mismatches += 1;
            }
        }
        let table = WindowTable::compute(&test, &train, size)?;
        prune::run_exclusion_with(&table, 5, |_, state| {
            pruning.compared += 1;
            if *state != ExclusionState::recompute(&table, state.excluded()) {
                pruning.mismatches += 1;
            }
        })?;
    }
    Ok(vec![minima, totals, nn, family, pruning])
}

/// Writes `selfcheck` results and fails if any check found a mismatch.
pub fn print_selfcheck(checks: &[Check]) -> Result<()> {
    let mut failed = false;
    for c in checks {
        let status = if c.mismatches == 0 { "PASS" } else { "FAIL" };
        failed |= c.mismatches > 0;
        println!(
            "{status}  {:<42} {} compared, {} mismatches",
            c.name, c.compared, c.mismatches
        );
    }
    if failed {
        bail!("selfcheck found mismatches between the engine and the reference implementation");
    }
    Ok(())
}

/// Builds the worker pool a run asks for (0 = one thread per core).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building the worker pool")?;
    Ok(pool.install(f))
}
