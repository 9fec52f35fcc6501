//! The experiment harness: every (source, target, annotation-share, seed)
//! combination of the grid, run through the same code path as the individual
//! commands. Source models are built once per (source, seed) and reused
//! across targets and annotation shares. Cells run in parallel; each owns
//! its data and RNG streams, so the grid is deterministic regardless of
//! scheduling.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use helioadapt::adapt::{adapt_target, AdaptConfig};
use helioadapt::data::{
    annotate_fraction, assign_splits, bundled_profile, synthetic_dataset, AnnotateStrategy,
    SplitFractions, SplitOrder,
};
use rayon::prelude::*;

use crate::errors::CliError;
use crate::pipeline::{build_source_model, prepare_target, SourceOptions};

/// One grid definition: which pairs, which annotation shares, which seeds.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub p_values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Half-hour rows generated per location (a full year by default).
    pub rows: usize,
    pub source_opts: SourceOptions,
    pub adapt: AdaptConfig,
}

/// One completed cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub source: String,
    pub target: String,
    pub p: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub acc_no_adapt: f64,
    pub delta: f64,
}

/// Source-side baselines behind the classifier-comparison report.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub profile: String,
    pub seed: u64,
    pub forest_accuracy: f64,
    pub network_accuracy: f64,
}

/// A cell that could not run, kept so the grid is always accounted for.
#[derive(Debug, Clone)]
pub struct CellFailure {
    pub source: String,
    pub target: String,
    pub p: f64,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct GridOutcome {
    pub cells: Vec<CellResult>,
    pub baselines: Vec<BaselineResult>,
    pub failures: Vec<CellFailure>,
}

fn validate_profiles(spec: &GridSpec) -> Result<()> {
    let mut names: Vec<&String> = spec.sources.iter().chain(&spec.targets).collect();
    names.sort();
    names.dedup();
    for name in names {
        if bundled_profile(name).is_err() {
            let known: Vec<String> = helioadapt::data::bundled_profiles()
                .into_iter()
                .map(|p| p.name)
                .collect();
            return Err(CliError::Usage(format!(
                "unknown profile '{name}' (bundled: {})",
                known.join(", ")
            ))
            .into());
        }
    }
    if spec.sources.is_empty() || spec.targets.is_empty() || spec.seeds.is_empty() {
        return Err(CliError::Usage(
            "experiment needs at least one source, one target, and one seed".into(),
        )
        .into());
    }
    if spec.p_values.is_empty() {
        return Err(CliError::Usage("experiment needs at least one p value".into()).into());
    }
    Ok(())
}

/// Work done once per (source, seed): data generation and source training.
struct SourceTask<'a> {
    spec: &'a GridSpec,
    source: &'a str,
    seed: u64,
}

/// Everything produced by one (source, seed) task.
struct SourceOutput {
    baseline: Option<BaselineResult>,
    cells: Vec<CellResult>,
    failures: Vec<CellFailure>,
}

fn run_source_task(task: SourceTask<'_>) -> SourceOutput {
    let SourceTask { spec, source, seed } = task;
    let fail_all = |reason: String| {
        let mut failures = Vec::new();
        for target in spec.targets.iter().filter(|t| t.as_str() != source) {
            for &p in &spec.p_values {
                failures.push(CellFailure {
                    source: source.to_string(),
                    target: target.clone(),
                    p,
                    seed,
                    reason: reason.clone(),
                });
            }
        }
        SourceOutput {
            baseline: None,
            cells: Vec::new(),
            failures,
        }
    };

    let bundle = (|| -> Result<_> {
        let profile = bundled_profile(source).expect("validated profile");
        let mut ds = synthetic_dataset(&profile, spec.rows, seed)?;
        assign_splits(
            &mut ds,
            SplitFractions::default(),
            SplitOrder::Shuffled,
            seed,
        )?;
        let mut opts = spec.source_opts.clone();
        opts.train.seed = seed;
        build_source_model(&mut ds, &opts)
    })();
    let bundle = match bundle {
        Ok(b) => b,
        Err(e) => return fail_all(format!("source model: {e:#}")),
    };

    let mut out = SourceOutput {
        baseline: Some(BaselineResult {
            profile: source.to_string(),
            seed,
            forest_accuracy: bundle.forest_test_accuracy,
            network_accuracy: bundle.network_test.accuracy,
        }),
        cells: Vec::new(),
        failures: Vec::new(),
    };

    for target in spec.targets.iter().filter(|t| t.as_str() != source) {
        let prepared = (|| -> Result<_> {
            let profile = bundled_profile(target).expect("validated profile");
            let mut ds = synthetic_dataset(&profile, spec.rows, seed)?;
            assign_splits(
                &mut ds,
                SplitFractions::default(),
                SplitOrder::Shuffled,
                seed,
            )?;
            prepare_target(&mut ds, &bundle.artifact)?;
            Ok(ds)
        })();
        let prepared = match prepared {
            Ok(ds) => ds,
            Err(e) => {
                for &p in &spec.p_values {
                    out.failures.push(CellFailure {
                        source: source.to_string(),
                        target: target.clone(),
                        p,
                        seed,
                        reason: format!("target data: {e:#}"),
                    });
                }
                continue;
            }
        };

        for &p in &spec.p_values {
            let cell = (|| -> Result<CellResult> {
                let mut ds = prepared.clone();
                annotate_fraction(&mut ds, p, AnnotateStrategy::Uniform, seed)?;
                let cfg = AdaptConfig {
                    p,
                    seed,
                    ..spec.adapt.clone()
                };
                let (_teacher, report) = adapt_target(&bundle.net, &ds, &cfg)?;
                Ok(CellResult {
                    source: source.to_string(),
                    target: target.clone(),
                    p,
                    seed,
                    accuracy: report.adapted.accuracy,
                    acc_no_adapt: report.baseline.accuracy,
                    delta: report.delta,
                })
            })();
            match cell {
                Ok(c) => out.cells.push(c),
                Err(e) => out.failures.push(CellFailure {
                    source: source.to_string(),
                    target: target.clone(),
                    p,
                    seed,
                    reason: format!("{e:#}"),
                }),
            }
        }
    }
    out
}

/// Runs the whole grid. Cell order in the result is canonical
/// (source, target, p, seed) regardless of worker scheduling.
pub fn run_grid(spec: &GridSpec) -> Result<GridOutcome> {
    validate_profiles(spec)?;
    let tasks: Vec<(String, u64)> = spec
        .sources
        .iter()
        .flat_map(|s| spec.seeds.iter().map(move |&seed| (s.clone(), seed)))
        .collect();

    let outputs: Vec<SourceOutput> = tasks
        .par_iter()
        .map(|(source, seed)| {
            run_source_task(SourceTask {
                spec,
                source,
                seed: *seed,
            })
        })
        .collect();

    let mut outcome = GridOutcome::default();
    for out in outputs {
        outcome.baselines.extend(out.baseline);
        outcome.cells.extend(out.cells);
        outcome.failures.extend(out.failures);
    }
    let key = |s: &str, t: &str, p: f64, seed: u64| {
        (s.to_string(), t.to_string(), (p * 1e6) as i64, seed)
    };
    outcome
        .cells
        .sort_by_key(|c| key(&c.source, &c.target, c.p, c.seed));
    outcome
        .failures
        .sort_by_key(|c| key(&c.source, &c.target, c.p, c.seed));
    outcome
        .baselines
        .sort_by_key(|b| (b.profile.clone(), b.seed));
    Ok(outcome)
}

/// Formats p so that whole percentages render without a decimal point
/// (matching how they are usually quoted).
pub fn format_p(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("{}", p as i64)
    } else {
        format!("{p}")
    }
}

/// Writes `results.csv`, `source_baselines.csv`, and (only when needed)
/// `failures.csv` into `dir`.
pub fn write_outcome(outcome: &GridOutcome, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();

    let results = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&results)?;
    w.write_record([
        "source",
        "target",
        "p",
        "seed",
        "accuracy",
        "acc_no_adapt",
        "delta",
    ])?;
    for c in &outcome.cells {
        w.write_record([
            c.source.as_str(),
            c.target.as_str(),
            &format_p(c.p),
            &c.seed.to_string(),
            &c.accuracy.to_string(),
            &c.acc_no_adapt.to_string(),
            &c.delta.to_string(),
        ])?;
    }
    w.flush()?;
    written.push(results);

    let baselines = dir.join("source_baselines.csv");
    let mut w = csv::Writer::from_path(&baselines)?;
    w.write_record(["profile", "seed", "forest_accuracy", "network_accuracy"])?;
    for b in &outcome.baselines {
        w.write_record([
            b.profile.as_str(),
            &b.seed.to_string(),
            &b.forest_accuracy.to_string(),
            &b.network_accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    written.push(baselines);

    if !outcome.failures.is_empty() {
        let failures = dir.join("failures.csv");
        let mut w = csv::Writer::from_path(&failures)?;
        w.write_record(["source", "target", "p", "seed", "reason"])?;
        for f in &outcome.failures {
            w.write_record([
                f.source.as_str(),
                f.target.as_str(),
                &format_p(f.p),
                &f.seed.to_string(),
                f.reason.as_str(),
            ])?;
        }
        w.flush()?;
        written.push(failures);
    }
    Ok(written)
}

/// Checks the invariant that every source≠target cell is accounted for,
/// either as a result or as an explicit failure.
pub fn assert_complete(spec: &GridSpec, outcome: &GridOutcome) -> Result<()> {
    let mut expected: BTreeMap<(String, String, i64, u64), usize> = BTreeMap::new();
    for s in &spec.sources {
        for t in &spec.targets {
            if s == t {
                continue;
            }
            for &p in &spec.p_values {
                for &seed in &spec.seeds {
                    *expected
                        .entry((s.clone(), t.clone(), (p * 1e6) as i64, seed))
                        .or_default() += 1;
                }
            }
        }
    }
    for c in &outcome.cells {
        let k = (
            c.source.clone(),
            c.target.clone(),
            (c.p * 1e6) as i64,
            c.seed,
        );
        match expected.get_mut(&k) {
            Some(n) if *n > 0 => *n -= 1,
            _ => {
                return Err(
                    CliError::Data(format!("unexpected grid cell {k:?} in the results")).into(),
                )
            }
        }
    }
    for f in &outcome.failures {
        let k = (
            f.source.clone(),
            f.target.clone(),
            (f.p * 1e6) as i64,
            f.seed,
        );
        if let Some(n) = expected.get_mut(&k) {
            if *n > 0 {
                *n -= 1;
            }
        }
    }
    let missing: Vec<_> = expected.iter().filter(|(_, &n)| n > 0).collect();
    if !missing.is_empty() {
        return Err(CliError::Data(format!(
            "grid is missing {} cell(s), first: {:?}",
            missing.len(),
            missing[0].0
        ))
        .into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use helioadapt::train::TrainConfig;

    fn tiny_spec() -> GridSpec {
        GridSpec {
            sources: vec!["sunny-dry".into()],
            targets: vec!["humid-cloudy".into()],
            p_values: vec![0.0, 20.0],
            seeds: vec![1, 2],
            rows: 600,
            source_opts: SourceOptions {
                trees: 15,
                train: TrainConfig {
                    max_epochs: 2,
                    ..TrainConfig::default()
                },
                ..SourceOptions::with_seed(0)
            },
            adapt: AdaptConfig {
                epochs: 2,
                ..AdaptConfig::default()
            },
        }
    }

    #[test]
    fn grid_runs_complete_and_deterministic() {
        let spec = tiny_spec();
        let a = run_grid(&spec).unwrap();
        let b = run_grid(&spec).unwrap();
        assert_eq!(a.cells.len(), 4, "failures: {:?}", a.failures);
        assert!(a.failures.is_empty());
        assert_complete(&spec, &a).unwrap();
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.accuracy.to_bits(), y.accuracy.to_bits());
            assert_eq!(x.acc_no_adapt.to_bits(), y.acc_no_adapt.to_bits());
        }
        assert_eq!(a.baselines.len(), 2);
        for cell in &a.cells {
            assert!((cell.delta - (cell.accuracy - cell.acc_no_adapt)).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_profiles_are_usage_errors() {
        let mut spec = tiny_spec();
        spec.sources = vec!["atlantis".into()];
        let err = run_grid(&spec).unwrap_err();
        assert_eq!(crate::errors::exit_code(&err), crate::errors::EXIT_USAGE);
        assert!(format!("{err}").contains("sunny-dry"), "{err}");
    }

    #[test]
    fn completeness_check_catches_holes() {
        let spec = tiny_spec();
        let mut outcome = run_grid(&spec).unwrap();
        outcome.cells.pop();
        assert!(assert_complete(&spec, &outcome).is_err());
    }

    #[test]
    fn p_formatting_drops_trailing_zeros() {
        assert_eq!(format_p(0.0), "0");
        assert_eq!(format_p(12.5), "12.5");
        assert_eq!(format_p(100.0), "100");
    }
}
