//! Shared plumbing between the pipeline commands and the experiment harness:
//! loading a location's CSV pair into a dataset, the prepared-dataset file
//! format, building a source model end to end, and readying a target dataset
//! from a model artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDateTime;
use helioadapt::data::{
    fit_bins_on_train, label_with_edges, BinScheme, Dataset, Normalizer, Sample, Split, TimeSeries,
    FEATURE_COLUMNS, POWER_COLUMN,
};
use helioadapt::forest::{fit_forest, select_features, ForestConfig};
use helioadapt::nn::{ArchConfig, Network};
use helioadapt::tensor::Tensor;
use helioadapt::train::{evaluate, train_source, EvalReport, TrainConfig, TrainHistory};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact::{BinEdgesDoc, ModelArtifact, ProvenanceDoc, SelectionDoc, FORMAT_VERSION};
use crate::errors::CliError;
use crate::manifest::Manifest;

pub const WEATHER_FILE: &str = "weather.csv";
pub const POWER_FILE: &str = "power.csv";
pub const META_FILE: &str = "meta.txt";
pub const PREPARED_FILE: &str = "prepared.csv";

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Location facts that travel next to the CSVs (plain `key = value`).
#[derive(Debug, Clone)]
pub struct Meta {
    pub profile: String,
    pub capacity_kw: f64,
}

impl Meta {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| {
            CliError::Data(format!(
                "{}: {e} (each data directory needs a meta file naming the \
                 profile and plant capacity)",
                path.display()
            ))
        })?;
        let mut fields = BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                fields.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let profile = fields
            .get("profile")
            .ok_or_else(|| CliError::Data(format!("{}: missing 'profile'", path.display())))?
            .clone();
        let capacity_kw = fields
            .get("capacity_kw")
            .ok_or_else(|| CliError::Data(format!("{}: missing 'capacity_kw'", path.display())))?
            .parse::<f64>()
            .map_err(|e| CliError::Data(format!("{}: capacity_kw: {e}", path.display())))?;
        Ok(Self {
            profile,
            capacity_kw,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(META_FILE);
        fs::write(
            &path,
            format!(
                "capacity_kw = {}\nprofile = {}\n",
                self.capacity_kw, self.profile
            ),
        )
        .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Loads `weather.csv` + `power.csv` from a location directory, resamples
/// power onto the half-hour grid, and merges them into one dataset with
/// per-unit power. Every file read is recorded in the manifest.
pub fn load_location(dir: &Path, manifest: &mut Manifest) -> Result<Dataset> {
    let meta = Meta::read(dir)?;
    let weather_path = dir.join(WEATHER_FILE);
    let power_path = dir.join(POWER_FILE);
    for (label, path) in [
        ("meta", dir.join(META_FILE)),
        ("weather", weather_path.clone()),
        ("power", power_path.clone()),
    ] {
        if !path.is_file() {
            return Err(CliError::Data(format!(
                "missing {} — generate it with `synth` or point --data at a \
                 location directory",
                path.display()
            ))
            .into());
        }
        manifest.input(label, &path)?;
    }
    let weather = TimeSeries::load_csv(&weather_path, &FEATURE_COLUMNS)?;
    let power = TimeSeries::load_csv(&power_path, &[POWER_COLUMN])?;
    let power30 = power.resample_mean(30)?;
    let ds = Dataset::from_series(&weather, &power30, meta.capacity_kw, &meta.profile)?;
    Ok(ds)
}

/// Writes the prepared (merged, split) dataset as one CSV: timestamp, the
/// feature columns, per-unit power, and the split tag.
pub fn write_prepared(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header: Vec<String> = vec!["timestamp".into()];
    header.extend(ds.feature_names.iter().cloned());
    header.push("power_pu".into());
    header.push("split".into());
    w.write_record(&header)?;
    for (sample, split) in ds.samples.iter().zip(&ds.splits) {
        let mut row: Vec<String> = vec![sample.timestamp.format(TIME_FORMAT).to_string()];
        row.extend(sample.features.iter().map(f64::to_string));
        row.push(sample.power.to_string());
        row.push(
            match split {
                Split::Train => "train",
                Split::Val => "val",
                Split::Test => "test",
            }
            .to_string(),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a prepared CSV back; the sibling meta file provides the origin.
pub fn read_prepared(dir: &Path, manifest: &mut Manifest) -> Result<Dataset> {
    let meta = Meta::read(dir)?;
    let path = dir.join(PREPARED_FILE);
    if !path.is_file() {
        return Err(
            CliError::Data(format!("missing {} — run `prep` first", path.display())).into(),
        );
    }
    manifest.input("meta", &dir.join(META_FILE))?;
    manifest.input("prepared", &path)?;
    let mut reader =
        csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = reader
        .headers()
        .context("prepared csv header")?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 4 || header[0] != "timestamp" || header[header.len() - 2] != "power_pu" {
        return Err(CliError::Data(format!(
            "{}: expected columns timestamp,<features...>,power_pu,split",
            path.display()
        ))
        .into());
    }
    let feature_names: Vec<String> = header[1..header.len() - 2].to_vec();
    let mut samples = Vec::new();
    let mut splits = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        let bad = |what: &str| CliError::Data(format!("{} row {}: {what}", path.display(), i + 2));
        let timestamp = NaiveDateTime::parse_from_str(&record[0], TIME_FORMAT)
            .map_err(|_| bad("unparseable timestamp"))?;
        let mut features = Vec::with_capacity(feature_names.len());
        for j in 0..feature_names.len() {
            features.push(
                record[1 + j]
                    .parse::<f64>()
                    .map_err(|_| bad("unparseable feature"))?,
            );
        }
        let power = record[header.len() - 2]
            .parse::<f64>()
            .map_err(|_| bad("unparseable power"))?;
        splits.push(match &record[header.len() - 1] {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => return Err(bad(&format!("unknown split '{other}'")).into()),
        });
        samples.push(Sample {
            timestamp,
            features,
            label: None,
            power,
        });
    }
    if samples.is_empty() {
        return Err(CliError::Data(format!("{}: no rows", path.display())).into());
    }
    let mut ds = Dataset::new(feature_names, samples, meta.profile);
    ds.splits = splits;
    Ok(ds)
}

/// Knobs for building a source model; a flat struct so the experiment
/// harness and `train-source` share exactly one code path.
#[derive(Debug, Clone)]
pub struct SourceOptions {
    pub classes: usize,
    pub k_features: usize,
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub train: TrainConfig,
}

impl SourceOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            classes: 5,
            k_features: 6,
            trees: 100,
            max_depth: 12,
            min_samples_split: 5,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
        }
    }

    /// Stable digest of every knob, stored in artifact provenance.
    pub fn config_hash(&self) -> String {
        let text = format!("{self:?}");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }
}

/// Everything `train-source` produces: the transferable artifact plus the
/// training record and the forest baseline used in reports.
pub struct SourceBundle {
    pub artifact: ModelArtifact,
    pub net: Network,
    pub history: TrainHistory,
    pub network_test: EvalReport,
    pub forest_test_accuracy: f64,
    pub importances: Vec<f64>,
}

/// The feature-selection stage's output, persisted as `selection.json`
/// between `select-features` and `train-source`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionBundle {
    pub format_version: u32,
    pub classes: usize,
    pub bins: BinEdgesDoc,
    pub indices: Vec<usize>,
    pub names: Vec<String>,
    pub importances: Vec<f64>,
    pub forest_test_accuracy: f64,
}

impl SelectionBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).context("encoding selection")?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Data(format!(
                "{}: {e} — run `select-features` to produce the selection file",
                path.display()
            ))
        })?;
        let bundle: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if bundle.format_version != FORMAT_VERSION {
            return Err(CliError::Data(format!(
                "{}: format version {} unsupported (expected {FORMAT_VERSION})",
                path.display(),
                bundle.format_version
            ))
            .into());
        }
        Ok(bundle)
    }
}

/// Fits bin edges on the training split (labeling `ds` as a side effect),
/// fits a random forest on all raw features, and ranks them by Gini
/// importance to pick the top-k. `ds` must already carry split assignments;
/// its feature set is left untouched.
pub fn select_source_features(ds: &mut Dataset, opts: &SourceOptions) -> Result<SelectionBundle> {
    let edges = fit_bins_on_train(ds, opts.classes, BinScheme::ZeroPlusQuantile)?;

    let train_idx = ds.indices_of(Split::Train);
    let test_idx = ds.indices_of(Split::Test);
    let x_train = ds.features_tensor(&train_idx);
    let y_train = ds.labels_of(&train_idx, "forest training")?;
    let forest_cfg = ForestConfig {
        n_trees: opts.trees,
        max_depth: opts.max_depth,
        min_samples_split: opts.min_samples_split,
        seed: opts.train.seed,
    };
    let forest = fit_forest(&x_train, &y_train, opts.classes, &forest_cfg)?;
    let x_test = ds.features_tensor(&test_idx);
    let y_test = ds.labels_of(&test_idx, "forest evaluation")?;
    let forest_test_accuracy = forest_accuracy(&forest, &x_test, &y_test)?;

    let indices = select_features(forest.importances(), opts.k_features)?;
    let names: Vec<String> = indices
        .iter()
        .map(|&i| ds.feature_names[i].clone())
        .collect();
    Ok(SelectionBundle {
        format_version: FORMAT_VERSION,
        classes: opts.classes,
        bins: BinEdgesDoc::from_edges(&edges),
        indices,
        names,
        importances: forest.importances().to_vec(),
        forest_test_accuracy,
    })
}

/// Labels `ds` from the selection's bin edges, restricts it to the selected
/// features, normalizes on the training split, trains the classifier, and
/// wraps everything into a transferable artifact.
pub fn train_source_model(
    ds: &mut Dataset,
    selection: &SelectionBundle,
    opts: &SourceOptions,
) -> Result<SourceBundle> {
    let edges = selection.bins.to_edges()?;
    label_with_edges(ds, &edges)?;
    check_feature_alignment(ds, &selection.indices, &selection.names)?;
    ds.select_features(&selection.indices)?;

    let normalizer = Normalizer::fit(ds, Split::Train)?;
    normalizer.apply(ds)?;

    let arch = ArchConfig {
        classes: selection.classes,
        ..ArchConfig::default()
    };
    let mut net = Network::classifier(&arch, selection.indices.len(), opts.train.seed)?;
    let history = train_source(&mut net, ds, &opts.train)?;
    let network_test = evaluate(&net, ds, Split::Test)?;

    let artifact = ModelArtifact::from_parts(
        &net,
        &normalizer,
        &edges,
        SelectionDoc {
            indices: selection.indices.clone(),
            names: selection.names.clone(),
        },
        ProvenanceDoc {
            seed: opts.train.seed,
            config_hash: opts.config_hash(),
            source_profile: ds.origin.clone(),
        },
    );
    Ok(SourceBundle {
        artifact,
        net,
        history,
        network_test,
        forest_test_accuracy: selection.forest_test_accuracy,
        importances: selection.importances.clone(),
    })
}

/// Both source-side stages in one call, for the experiment harness.
/// `ds` must already carry split assignments.
pub fn build_source_model(ds: &mut Dataset, opts: &SourceOptions) -> Result<SourceBundle> {
    let selection = select_source_features(ds, opts)?;
    train_source_model(ds, &selection, opts)
}

fn check_feature_alignment(ds: &Dataset, indices: &[usize], names: &[String]) -> Result<()> {
    for (&idx, name) in indices.iter().zip(names) {
        let found = ds.feature_names.get(idx).map(String::as_str);
        if found != Some(name.as_str()) {
            return Err(CliError::Data(format!(
                "dataset features do not match the model: expected '{name}' at \
                 column {idx}, found '{}'",
                found.unwrap_or("<missing>")
            ))
            .into());
        }
    }
    Ok(())
}

/// Applies an artifact's preprocessing to a merged target dataset: labels
/// from the artifact's bin edges, then the artifact's feature subset and
/// normalizer. Split assignment stays with the caller — the prepared file
/// already carries one, while fresh synthetic data still needs one.
pub fn prepare_target(ds: &mut Dataset, artifact: &ModelArtifact) -> Result<()> {
    label_with_edges(ds, &artifact.bin_edges()?)?;
    let wanted = &artifact.selected_features;
    check_feature_alignment(ds, &wanted.indices, &wanted.names)?;
    ds.select_features(&wanted.indices)?;
    artifact.normalizer().apply(ds)?;
    Ok(())
}

/// Accuracy of majority-vote forest predictions, reused by reports.
pub fn forest_accuracy(
    forest: &helioadapt::forest::Forest,
    x: &Tensor,
    y: &[usize],
) -> Result<f64> {
    let predictions = forest.predict(x)?;
    let hits = predictions.iter().zip(y).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use helioadapt::data::{
        assign_splits, bundled_profile, synthetic_dataset, SplitFractions, SplitOrder,
    };

    fn small_prepared(seed: u64) -> Dataset {
        let profile = bundled_profile("sunny-dry").unwrap();
        let mut ds = synthetic_dataset(&profile, 1000, seed).unwrap();
        assign_splits(
            &mut ds,
            SplitFractions::default(),
            SplitOrder::Shuffled,
            seed,
        )
        .unwrap();
        ds
    }

    #[test]
    fn prepared_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_prepared(1);
        Meta {
            profile: "sunny-dry".into(),
            capacity_kw: 1.0,
        }
        .write(dir.path())
        .unwrap();
        write_prepared(&ds, &dir.path().join(PREPARED_FILE)).unwrap();
        let mut manifest = Manifest::new("test");
        let back = read_prepared(dir.path(), &mut manifest).unwrap();
        assert_eq!(back.n(), ds.n());
        assert_eq!(back.feature_names, ds.feature_names);
        assert_eq!(back.splits, ds.splits);
        for (a, b) in back.samples.iter().zip(&ds.samples) {
            assert_eq!(a.timestamp, b.timestamp);
            assert_eq!(a.features, b.features, "feature bits must survive");
            assert_eq!(a.power, b.power);
        }
    }

    #[test]
    fn source_model_builds_and_prepares_a_target() {
        let mut ds = small_prepared(2);
        let mut opts = SourceOptions::with_seed(2);
        opts.trees = 20;
        opts.train.max_epochs = 3;
        let bundle = build_source_model(&mut ds, &opts).unwrap();
        assert_eq!(bundle.artifact.selected_features.indices.len(), 6);
        assert!(bundle.network_test.accuracy > 0.0);
        assert!(bundle.forest_test_accuracy > 0.0);
        assert!((bundle.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let profile = bundled_profile("humid-cloudy").unwrap();
        let mut target = synthetic_dataset(&profile, 1000, 9).unwrap();
        assign_splits(
            &mut target,
            SplitFractions::default(),
            SplitOrder::Shuffled,
            9,
        )
        .unwrap();
        prepare_target(&mut target, &bundle.artifact).unwrap();
        assert_eq!(target.feature_count(), 6);
        assert_eq!(target.classes, 5);
        let (tr, va, te) = target.split_counts();
        assert_eq!(tr + va + te, target.n());
    }

    #[test]
    fn selection_file_round_trips_and_feeds_training() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = small_prepared(3);
        let mut opts = SourceOptions::with_seed(3);
        opts.trees = 10;
        opts.train.max_epochs = 2;
        let selection = select_source_features(&mut ds, &opts).unwrap();
        let path = dir.path().join("selection.json");
        selection.save(&path).unwrap();
        let back = SelectionBundle::load(&path).unwrap();
        assert_eq!(back.indices, selection.indices);
        assert_eq!(back.names, selection.names);

        // Training from the reloaded selection works on a fresh copy of the
        // same (unlabeled, unselected) dataset.
        let mut ds2 = small_prepared(3);
        let bundle = train_source_model(&mut ds2, &back, &opts).unwrap();
        assert_eq!(bundle.artifact.selected_features.indices, selection.indices);

        let missing = SelectionBundle::load(&dir.path().join("absent.json")).unwrap_err();
        assert_eq!(crate::errors::exit_code(&missing), crate::errors::EXIT_DATA);
    }

    #[test]
    fn missing_meta_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = Manifest::new("test");
        let err = load_location(dir.path(), &mut manifest).unwrap_err();
        assert_eq!(crate::errors::exit_code(&err), crate::errors::EXIT_DATA);
    }
}
