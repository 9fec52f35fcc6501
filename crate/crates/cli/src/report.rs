//! Report rendering: aggregates grid results over seeds and lays them out
//! as (a) an aligned-text and CSV accuracy grid (rows source→target, columns
//! no-adapt plus each annotation share), (b) accuracy-vs-p curve data for
//! plotting, and (c) a classifier comparison table from the source-side
//! baselines. Deltas are always recomputed from stored accuracies, never
//! copied from the input. Rendering is deterministic byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{Context, Result};

use crate::errors::CliError;
use crate::experiment::{format_p, BaselineResult, CellResult};

/// Integer key for grouping floating-point p values.
fn p_key(p: f64) -> i64 {
    (p * 1e6).round() as i64
}

pub fn read_results(path: &Path) -> Result<Vec<CellResult>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let expect = [
        "source",
        "target",
        "p",
        "seed",
        "accuracy",
        "acc_no_adapt",
        "delta",
    ];
    let header = reader.headers().context("results header")?.clone();
    if header.iter().ne(expect) {
        return Err(CliError::Data(format!(
            "{}: expected columns {}",
            path.display(),
            expect.join(",")
        ))
        .into());
    }
    let mut cells = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        let bad = |what: &str| CliError::Data(format!("{} row {}: {what}", path.display(), i + 2));
        let parse_f = |j: usize, name: &str| -> Result<f64> {
            record[j]
                .parse::<f64>()
                .map_err(|_| bad(&format!("unparseable {name}")).into())
        };
        let accuracy = parse_f(4, "accuracy")?;
        let acc_no_adapt = parse_f(5, "acc_no_adapt")?;
        cells.push(CellResult {
            source: record[0].to_string(),
            target: record[1].to_string(),
            p: parse_f(2, "p")?,
            seed: record[3].parse().map_err(|_| bad("unparseable seed"))?,
            accuracy,
            acc_no_adapt,
            // The invariant: reported deltas are derived, not trusted.
            delta: accuracy - acc_no_adapt,
        });
    }
    if cells.is_empty() {
        return Err(CliError::Data(format!("{}: no result rows", path.display())).into());
    }
    Ok(cells)
}

pub fn read_baselines(path: &Path) -> Result<Vec<BaselineResult>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        let bad = || CliError::Data(format!("{} row {}: bad field", path.display(), i + 2));
        rows.push(BaselineResult {
            profile: record[0].to_string(),
            seed: record[1].parse().map_err(|_| bad())?,
            forest_accuracy: record[2].parse().map_err(|_| bad())?,
            network_accuracy: record[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Per-(source, target) aggregation over seeds.
struct PairSummary {
    source: String,
    target: String,
    mean_no_adapt: f64,
    /// p key -> mean adapted accuracy.
    by_p: BTreeMap<i64, f64>,
}

struct Aggregated {
    pairs: Vec<PairSummary>,
    /// Sorted distinct p values across the whole grid.
    p_values: Vec<f64>,
    n_seeds: usize,
}

fn aggregate(cells: &[CellResult]) -> Aggregated {
    let mut p_set: BTreeMap<i64, f64> = BTreeMap::new();
    let mut seeds: BTreeSet<u64> = BTreeSet::new();
    let mut pair_keys: BTreeSet<(String, String)> = BTreeSet::new();
    for c in cells {
        p_set.insert(p_key(c.p), c.p);
        seeds.insert(c.seed);
        pair_keys.insert((c.source.clone(), c.target.clone()));
    }

    let mut pairs = Vec::new();
    for (source, target) in pair_keys {
        let mine: Vec<&CellResult> = cells
            .iter()
            .filter(|c| c.source == source && c.target == target)
            .collect();
        // One no-adapt accuracy per seed (repeated across p); average those.
        let mut no_adapt_by_seed: BTreeMap<u64, f64> = BTreeMap::new();
        let mut acc_by_p: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        for c in &mine {
            no_adapt_by_seed.insert(c.seed, c.acc_no_adapt);
            acc_by_p.entry(p_key(c.p)).or_default().push(c.accuracy);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let no_adapt: Vec<f64> = no_adapt_by_seed.values().copied().collect();
        pairs.push(PairSummary {
            source,
            target,
            mean_no_adapt: mean(&no_adapt),
            by_p: acc_by_p.into_iter().map(|(k, v)| (k, mean(&v))).collect(),
        });
    }
    Aggregated {
        pairs,
        p_values: p_set.into_values().collect(),
        n_seeds: seeds.len(),
    }
}

fn percent(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

/// Lays out rows under a header: first column left-aligned, the rest
/// right-aligned, columns joined with ` | ` over a dashed separator.
fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let columns = header.len();
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let line = |cells: &[String]| -> String {
        let mut out = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str(" | ");
            }
            if i == 0 {
                out.push_str(&format!("{cell:<width$}", width = widths[0]));
            } else {
                out.push_str(&format!("{cell:>width$}", width = widths[i]));
            }
        }
        // Left-aligned first column must not leave trailing spaces when a
        // row has only one column.
        out.trim_end().to_string()
    };
    let mut text = line(header);
    text.push('\n');
    let sep: Vec<String> = (0..columns).map(|i| "-".repeat(widths[i])).collect();
    text.push_str(&sep.join("-+-"));
    text.push('\n');
    for row in rows {
        text.push_str(&line(row));
        text.push('\n');
    }
    text
}

fn seeds_phrase(n: usize) -> String {
    if n == 1 {
        "1 seed".into()
    } else {
        format!("{n} seeds")
    }
}

/// The accuracy grid as aligned text, plus the per-target best improvement
/// at p=20% when that share is part of the grid.
pub fn grid_text(cells: &[CellResult]) -> String {
    let agg = aggregate(cells);
    let mut header: Vec<String> = vec!["source -> target".into(), "w/o adapt".into()];
    header.extend(agg.p_values.iter().map(|&p| format!("p={}%", format_p(p))));

    let mut rows = Vec::new();
    for pair in &agg.pairs {
        let mut row = vec![
            format!("{} -> {}", pair.source, pair.target),
            percent(pair.mean_no_adapt),
        ];
        for &p in &agg.p_values {
            row.push(match pair.by_p.get(&p_key(p)) {
                Some(&v) => percent(v),
                None => "-".into(),
            });
        }
        rows.push(row);
    }

    let mut text = format!(
        "Adaptation accuracy by annotation share (mean over {})\n\n",
        seeds_phrase(agg.n_seeds)
    );
    text.push_str(&render_table(&header, &rows));

    if agg.p_values.iter().any(|&p| p_key(p) == p_key(20.0)) {
        let mut best: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
        for pair in &agg.pairs {
            if let Some(&acc) = pair.by_p.get(&p_key(20.0)) {
                let gain = 100.0 * (acc - pair.mean_no_adapt);
                let entry = best
                    .entry(pair.target.as_str())
                    .or_insert((f64::NEG_INFINITY, ""));
                if gain > entry.0 {
                    *entry = (gain, pair.source.as_str());
                }
            }
        }
        text.push_str("\nLargest improvement at p=20% vs no adaptation, per target:\n");
        for (target, (gain, source)) in best {
            text.push_str(&format!(
                "  {target}: {gain:+.2} points (source {source})\n"
            ));
        }
    }
    text
}

/// The same grid as CSV, mean accuracies in full precision.
pub fn grid_csv(cells: &[CellResult]) -> String {
    let agg = aggregate(cells);
    let mut text = String::from("source,target,n_seeds,acc_no_adapt");
    for &p in &agg.p_values {
        text.push_str(&format!(",acc_p{}", format_p(p)));
    }
    text.push('\n');
    for pair in &agg.pairs {
        text.push_str(&format!(
            "{},{},{},{}",
            pair.source, pair.target, agg.n_seeds, pair.mean_no_adapt
        ));
        for &p in &agg.p_values {
            match pair.by_p.get(&p_key(p)) {
                Some(v) => text.push_str(&format!(",{v}")),
                None => text.push(','),
            }
        }
        text.push('\n');
    }
    text
}

/// Accuracy-vs-p rows for external plotting.
pub fn curve_csv(cells: &[CellResult]) -> String {
    let agg = aggregate(cells);
    let mut text = String::from("source,target,p,mean_accuracy,mean_acc_no_adapt\n");
    for pair in &agg.pairs {
        for &p in &agg.p_values {
            if let Some(&v) = pair.by_p.get(&p_key(p)) {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    pair.source,
                    pair.target,
                    format_p(p),
                    v,
                    pair.mean_no_adapt
                ));
            }
        }
    }
    text
}

/// Classifier comparison on the source test sets, classifiers as rows and
/// profiles as columns.
pub fn comparison_text(baselines: &[BaselineResult]) -> String {
    let mut profiles: Vec<String> = baselines.iter().map(|b| b.profile.clone()).collect();
    profiles.sort();
    profiles.dedup();
    let seeds: BTreeSet<u64> = baselines.iter().map(|b| b.seed).collect();

    let mean_for = |profile: &str, pick: fn(&BaselineResult) -> f64| -> f64 {
        let vals: Vec<f64> = baselines
            .iter()
            .filter(|b| b.profile == profile)
            .map(pick)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };

    let mut header: Vec<String> = vec!["classifier".into()];
    header.extend(profiles.iter().cloned());
    let mut rows = Vec::new();
    for (label, pick) in [
        (
            "random forest",
            (|b| b.forest_accuracy) as fn(&BaselineResult) -> f64,
        ),
        ("deep network", |b| b.network_accuracy),
    ] {
        let mut row = vec![label.to_string()];
        for profile in &profiles {
            row.push(percent(mean_for(profile, pick)));
        }
        rows.push(row);
    }
    let mut text = format!(
        "Source-side test accuracy by classifier (mean over {})\n\n",
        seeds_phrase(seeds.len())
    );
    text.push_str(&render_table(&header, &rows));
    text
}

/// The comparison in tidy CSV form.
pub fn comparison_csv(baselines: &[BaselineResult]) -> String {
    let mut profiles: Vec<String> = baselines.iter().map(|b| b.profile.clone()).collect();
    profiles.sort();
    profiles.dedup();
    let mut text = String::from("profile,classifier,mean_accuracy\n");
    for profile in &profiles {
        for (label, pick) in [
            (
                "deep network",
                (|b: &BaselineResult| b.network_accuracy) as fn(&BaselineResult) -> f64,
            ),
            ("random forest", |b| b.forest_accuracy),
        ] {
            let vals: Vec<f64> = baselines
                .iter()
                .filter(|b| &b.profile == profile)
                .map(pick)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            text.push_str(&format!("{profile},{label},{mean}\n"));
        }
    }
    text
}
