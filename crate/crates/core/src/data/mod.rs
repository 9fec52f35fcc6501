//! Dataset assembly: merging, binning, normalization, splits, annotation.
//!
//! The pipeline shape is fixed: weather and power series are merged on their
//! shared timestamp grid into a [`Dataset`]; the continuous power becomes a
//! class label through [`BinEdges`] fitted on the source training split; a
//! [`Normalizer`] fitted on the same split standardizes the features; and
//! [`annotate_fraction`] keeps labels on only a small fraction of a target
//! training split, which is all the supervision adaptation is allowed to see.

pub mod synth;
pub mod timeseries;

pub use synth::{
    bundled_profile, bundled_profiles, gen_synthetic, synthetic_dataset, LocationProfile,
    SyntheticData,
};
pub use timeseries::TimeSeries;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;
use chrono::NaiveDateTime;
use rand::seq::SliceRandom;

/// Weather feature columns, in canonical order.
pub const FEATURE_COLUMNS: [&str; 10] = [
    "dni",
    "dhi",
    "ghi",
    "temperature",
    "relative_humidity",
    "dew_point",
    "pressure",
    "wind_speed",
    "wind_direction",
    "surface_albedo",
];

/// Column name of the generation signal.
pub const POWER_COLUMN: &str = "power_kw";

/// Powers at or below this many units count as "no generation" (class 0).
pub const ZERO_POWER_THRESHOLD: f64 = 1e-6;

/// One half-hour observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub timestamp: NaiveDateTime,
    pub features: Vec<f64>,
    /// Class label; `None` when the annotation step stripped it.
    pub label: Option<usize>,
    /// Power output normalized by plant capacity (dimensionless, in [0, 1]).
    pub power: f64,
}

/// Which partition a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Feature rows plus labels, split tags, and annotation state.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub samples: Vec<Sample>,
    /// Split tag per sample; defaults to all-train until assigned.
    pub splits: Vec<Split>,
    /// Number of classes once labels exist (0 before binning).
    pub classes: usize,
    /// Set by [`annotate_fraction`]; adaptation requires it.
    pub annotated: bool,
    /// Where the data came from, for reports and manifests.
    pub origin: String,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, samples: Vec<Sample>, origin: String) -> Self {
        let n = samples.len();
        Self {
            feature_names,
            samples,
            splits: vec![Split::Train; n],
            classes: 0,
            annotated: false,
            origin,
        }
    }

    /// Merges aligned weather and power series; `capacity` converts kW to
    /// per-unit power. The series must share start, interval, and length.
    pub fn from_series(
        weather: &TimeSeries,
        power: &TimeSeries,
        capacity_kw: f64,
        origin: &str,
    ) -> Result<Self> {
        if !(capacity_kw.is_finite() && capacity_kw > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "plant capacity must be positive, got {capacity_kw}"
            )));
        }
        if weather.start() != power.start()
            || weather.interval_minutes() != power.interval_minutes()
            || weather.len() != power.len()
        {
            return Err(Error::Misaligned(format!(
                "weather ({} rows at {} min from {}) vs power ({} rows at {} min from {})",
                weather.len(),
                weather.interval_minutes(),
                weather.start(),
                power.len(),
                power.interval_minutes(),
                power.start()
            )));
        }
        let power_col = power
            .column(POWER_COLUMN)
            .ok_or_else(|| Error::Misaligned(format!("power series lacks '{POWER_COLUMN}'")))?;
        let names: Vec<String> = weather
            .column_names()
            .iter()
            .map(|s| s.to_string())
            .collect();
        let cols: Vec<&[f64]> = names
            .iter()
            .map(|n| weather.column(n).expect("column exists"))
            .collect();
        let samples = (0..weather.len())
            .map(|i| Sample {
                timestamp: weather.timestamp(i),
                features: cols.iter().map(|c| c[i]).collect(),
                label: None,
                power: power_col[i] / capacity_kw,
            })
            .collect();
        Ok(Self::new(names, samples, origin.to_string()))
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    /// Indices of the samples tagged with `split`, in sample order.
    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// `(train, val, test)` sizes.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for s in &self.splits {
            match s {
                Split::Train => counts.0 += 1,
                Split::Val => counts.1 += 1,
                Split::Test => counts.2 += 1,
            }
        }
        counts
    }

    /// Gathers the given rows into a `[B, F]` tensor.
    pub fn features_tensor(&self, indices: &[usize]) -> Tensor {
        let f = self.feature_count();
        let mut data = Vec::with_capacity(indices.len() * f);
        for &i in indices {
            data.extend_from_slice(&self.samples[i].features);
        }
        Tensor::new(vec![indices.len(), f], data).expect("gathered feature shape")
    }

    /// Labels of the given rows; errors if any of them is unlabeled.
    pub fn labels_of(&self, indices: &[usize], context: &str) -> Result<Vec<usize>> {
        indices
            .iter()
            .map(|&i| {
                self.samples[i]
                    .label
                    .ok_or_else(|| Error::UnlabeledSamples {
                        context: context.to_string(),
                    })
            })
            .collect()
    }

    /// Keeps only the named feature columns (ascending index order).
    pub fn select_features(&mut self, keep: &[usize]) -> Result<()> {
        let f = self.feature_count();
        if keep.is_empty() || keep.iter().any(|&i| i >= f) {
            return Err(Error::InvalidConfig(format!(
                "feature selection {keep:?} is out of range for {f} features"
            )));
        }
        let mut sorted = keep.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        self.feature_names = sorted
            .iter()
            .map(|&i| self.feature_names[i].clone())
            .collect();
        for sample in &mut self.samples {
            sample.features = sorted.iter().map(|&i| sample.features[i]).collect();
        }
        Ok(())
    }
}

/// How continuous power is discretized into classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinScheme {
    /// Class 0 is "no generation" (power at or below the zero threshold);
    /// positive powers are split at quantiles into the remaining classes.
    ZeroPlusQuantile,
    /// Classes are equal-width slices of the observed power range.
    EqualWidth,
}

/// Fitted class boundaries: `class(x) = #{edges e : x > e}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    pub edges: Vec<f64>,
    pub scheme: BinScheme,
}

impl BinEdges {
    /// Fits `classes` bins to per-unit powers.
    ///
    /// With [`BinScheme::ZeroPlusQuantile`], the first edge is the zero
    /// threshold and the rest are quantiles `j/(classes-1)` of the strictly
    /// positive powers (linear interpolation between order statistics).
    /// Colliding quantile edges (too few distinct positive values) are an
    /// error. A series with no positive power at all is degenerate but legal:
    /// every sample is class 0, and the edges are synthetic ascending values
    /// above the threshold.
    pub fn fit(powers: &[f64], classes: usize, scheme: BinScheme) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "binning needs at least 2 classes, got {classes}"
            )));
        }
        if powers.is_empty() {
            return Err(Error::EmptySelection {
                context: "binning".into(),
            });
        }
        if powers.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::NonFinite {
                context: "power values for binning (must be finite and non-negative)".into(),
            });
        }
        let edges = match scheme {
            BinScheme::ZeroPlusQuantile => {
                let mut positives: Vec<f64> = powers
                    .iter()
                    .copied()
                    .filter(|&p| p > ZERO_POWER_THRESHOLD)
                    .collect();
                if positives.is_empty() {
                    // All-dark series: synthetic ascending edges keep the
                    // classifier total (everything lands in class 0).
                    (0..classes - 1)
                        .map(|j| ZERO_POWER_THRESHOLD + j as f64)
                        .collect()
                } else {
                    positives.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                    let mut edges = vec![ZERO_POWER_THRESHOLD];
                    for j in 1..classes - 1 {
                        edges.push(quantile(&positives, j as f64 / (classes - 1) as f64));
                    }
                    let distinct = count_distinct(&positives);
                    if edges.windows(2).any(|w| w[1] <= w[0]) {
                        return Err(Error::TooFewDistinct {
                            distinct,
                            bins: classes,
                        });
                    }
                    edges
                }
            }
            BinScheme::EqualWidth => {
                let lo = powers.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = powers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi - lo <= ZERO_POWER_THRESHOLD {
                    (0..classes - 1)
                        .map(|j| lo + ZERO_POWER_THRESHOLD + j as f64)
                        .collect()
                } else {
                    let width = (hi - lo) / classes as f64;
                    (1..classes).map(|j| lo + width * j as f64).collect()
                }
            }
        };
        Ok(Self { edges, scheme })
    }

    /// Class of a power value: the number of edges it exceeds.
    ///
    /// Total over all finite non-negative inputs, including values outside
    /// the fitted range (they land in the first or last class).
    pub fn assign(&self, power: f64) -> usize {
        self.edges.iter().filter(|&&e| power > e).count()
    }

    pub fn classes(&self) -> usize {
        self.edges.len() + 1
    }
}

/// Linear-interpolation quantile of sorted values, `q` in [0, 1].
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= m {
        sorted[m - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

fn count_distinct(sorted: &[f64]) -> usize {
    1 + sorted.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Fits bins on the training split and labels every sample.
pub fn fit_bins_on_train(ds: &mut Dataset, classes: usize, scheme: BinScheme) -> Result<BinEdges> {
    let train = ds.indices_of(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptySelection {
            context: "binning on the training split".into(),
        });
    }
    let powers: Vec<f64> = train.iter().map(|&i| ds.samples[i].power).collect();
    let edges = BinEdges::fit(&powers, classes, scheme)?;
    label_with_edges(ds, &edges)?;
    Ok(edges)
}

/// Labels every sample of `ds` using already-fitted edges (the path a target
/// dataset takes, so that source and target share one class geometry).
pub fn label_with_edges(ds: &mut Dataset, edges: &BinEdges) -> Result<()> {
    for sample in &mut ds.samples {
        if !(sample.power.is_finite() && sample.power >= 0.0) {
            return Err(Error::NonFinite {
                context: format!("power at {}", sample.timestamp),
            });
        }
        sample.label = Some(edges.assign(sample.power));
    }
    ds.classes = edges.classes();
    Ok(())
}

/// Per-feature standardization fitted on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// True where the column was constant and the divisor was clamped to 1.
    pub clamped: Vec<bool>,
}

impl Normalizer {
    /// Fits means and population standard deviations on the rows of `split`.
    pub fn fit(ds: &Dataset, split: Split) -> Result<Self> {
        let idx = ds.indices_of(split);
        if idx.is_empty() {
            return Err(Error::EmptySelection {
                context: "normalizer fit".into(),
            });
        }
        let f = ds.feature_count();
        let n = idx.len() as f64;
        let mut mean = vec![0.0; f];
        for &i in &idx {
            for (m, &v) in mean.iter_mut().zip(&ds.samples[i].features) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; f];
        for &i in &idx {
            for (j, &v) in ds.samples[i].features.iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        let mut std = Vec::with_capacity(f);
        let mut clamped = Vec::with_capacity(f);
        for v in var {
            let s = (v / n).sqrt();
            if s < 1e-12 {
                std.push(1.0);
                clamped.push(true);
            } else {
                std.push(s);
                clamped.push(false);
            }
        }
        Ok(Self { mean, std, clamped })
    }

    /// Standardizes one feature row in place.
    pub fn transform_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    /// Undoes [`Normalizer::transform_row`].
    pub fn invert_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }

    /// Standardizes every sample of the dataset (all splits).
    pub fn apply(&self, ds: &mut Dataset) -> Result<()> {
        if self.mean.len() != ds.feature_count() {
            return Err(Error::ShapeMismatch {
                op: "Normalizer::apply".into(),
                expected: format!("{} features", self.mean.len()),
                actual: format!("{}", ds.feature_count()),
            });
        }
        for sample in &mut ds.samples {
            self.transform_row(&mut sample.features);
        }
        Ok(())
    }
}

/// Train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

/// Whether splits are drawn from a shuffle or cut chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitOrder {
    Shuffled,
    Chronological,
}

/// Tags every sample with a split.
///
/// Validation and test get `floor(n * fraction)` samples each; training gets
/// the remainder, so a 10-row set at 70/15/15 lands at 8/1/1. A positive
/// fraction that floors to zero samples is an error rather than a silent
/// empty split.
pub fn assign_splits(
    ds: &mut Dataset,
    fractions: SplitFractions,
    order: SplitOrder,
    seed: u64,
) -> Result<()> {
    let sum = fractions.train + fractions.val + fractions.test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadSplitFractions { sum });
    }
    if fractions.train < 0.0 || fractions.val < 0.0 || fractions.test < 0.0 {
        return Err(Error::BadSplitFractions { sum: -1.0 });
    }
    let n = ds.n();
    if n < 3 {
        return Err(Error::TooSmallToSplit { n });
    }
    let n_val = (n as f64 * fractions.val).floor() as usize;
    let n_test = (n as f64 * fractions.test).floor() as usize;
    let n_train = n - n_val - n_test;
    for (name, count, fraction) in [
        ("train", n_train, fractions.train),
        ("val", n_val, fractions.val),
        ("test", n_test, fractions.test),
    ] {
        if fraction > 0.0 && count == 0 {
            return Err(Error::EmptySelection {
                context: format!("{name} split of {n} samples at fraction {fraction}"),
            });
        }
    }
    let mut order_idx: Vec<usize> = (0..n).collect();
    if order == SplitOrder::Shuffled {
        order_idx.shuffle(&mut stream_rng(seed, Stream::Split as u64));
    }
    for (pos, &i) in order_idx.iter().enumerate() {
        ds.splits[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(())
}

/// How annotated samples are chosen from the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotateStrategy {
    /// A seeded shuffle; the kept sets are nested across increasing `p`.
    Uniform,
    /// Per-class proportional counts (largest-remainder rounding).
    Stratified,
}

/// Keeps labels on `round(n_train * p/100)` training samples and strips the
/// rest, marking the dataset as annotation-complete.
///
/// Validation and test labels are left alone: they belong to the evaluation
/// harness, not to the adaptation loop.
pub fn annotate_fraction(
    ds: &mut Dataset,
    p_percent: f64,
    strategy: AnnotateStrategy,
    seed: u64,
) -> Result<usize> {
    if !(0.0..=100.0).contains(&p_percent) {
        return Err(Error::InvalidConfig(format!(
            "annotation percentage must lie in [0, 100], got {p_percent}"
        )));
    }
    let train = ds.indices_of(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptySelection {
            context: "annotation of the training split".into(),
        });
    }
    ds.labels_of(&train, "annotation requires a labeled training split")?;
    let k = (train.len() as f64 * p_percent / 100.0).round() as usize;
    let mut rng = stream_rng(seed, Stream::Annotate as u64);
    let keep: Vec<usize> = match strategy {
        AnnotateStrategy::Uniform => {
            let mut shuffled = train.clone();
            shuffled.shuffle(&mut rng);
            shuffled.into_iter().take(k).collect()
        }
        AnnotateStrategy::Stratified => {
            let classes = ds.classes.max(1);
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for &i in &train {
                by_class[ds.samples[i].label.expect("checked above")].push(i);
            }
            for group in &mut by_class {
                group.shuffle(&mut rng);
            }
            // Largest-remainder apportionment of k across classes.
            let n = train.len() as f64;
            let quotas: Vec<f64> = by_class
                .iter()
                .map(|g| k as f64 * g.len() as f64 / n)
                .collect();
            let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
            let mut remaining = k - counts.iter().sum::<usize>();
            let mut by_frac: Vec<usize> = (0..classes).collect();
            by_frac.sort_by(|&a, &b| {
                let fa = quotas[a] - quotas[a].floor();
                let fb = quotas[b] - quotas[b].floor();
                fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
            });
            for &c in by_frac.iter().cycle() {
                if remaining == 0 {
                    break;
                }
                if counts[c] < by_class[c].len() {
                    counts[c] += 1;
                    remaining -= 1;
                }
            }
            by_class
                .iter()
                .zip(&counts)
                .flat_map(|(g, &c)| g.iter().copied().take(c))
                .collect()
        }
    };
    let keep_set: std::collections::HashSet<usize> = keep.iter().copied().collect();
    for &i in &train {
        if !keep_set.contains(&i) {
            ds.samples[i].label = None;
        }
    }
    ds.annotated = true;
    Ok(keep_set.len())
}

/// Symmetrized KL divergence between per-feature Gaussians of two datasets,
/// summed over features. Zero for identical distributions; grows with both
/// mean shifts and scale changes.
pub fn feature_shift(a: &Dataset, b: &Dataset) -> Result<f64> {
    if a.feature_names != b.feature_names {
        return Err(Error::Misaligned(
            "feature shift requires identical feature columns".into(),
        ));
    }
    if a.n() == 0 || b.n() == 0 {
        return Err(Error::EmptySelection {
            context: "feature shift".into(),
        });
    }
    let stats = |ds: &Dataset| {
        let f = ds.feature_count();
        let n = ds.n() as f64;
        let mut mean = vec![0.0; f];
        for s in &ds.samples {
            for (m, &v) in mean.iter_mut().zip(&s.features) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; f];
        for s in &ds.samples {
            for (j, &v) in s.features.iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v = (*v / n).max(1e-12);
        }
        (mean, var)
    };
    let (ma, va) = stats(a);
    let (mb, vb) = stats(b);
    let mut total = 0.0;
    for j in 0..ma.len() {
        let d2 = (ma[j] - mb[j]) * (ma[j] - mb[j]);
        // KL(a||b) + KL(b||a) for univariate Gaussians.
        total += 0.5 * (va[j] / vb[j] + vb[j] / va[j] - 2.0 + d2 * (1.0 / va[j] + 1.0 / vb[j]));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize) -> Dataset {
        let start: NaiveDateTime = "2018-01-01T00:00:00".parse().unwrap();
        let samples = (0..n)
            .map(|i| Sample {
                timestamp: start + chrono::Duration::minutes(30 * i as i64),
                features: vec![i as f64, (i % 7) as f64, 5.0],
                label: None,
                power: (i % 10) as f64 / 10.0,
            })
            .collect();
        Dataset::new(
            vec!["a".into(), "b".into(), "c".into()],
            samples,
            "toy".into(),
        )
    }

    #[test]
    fn zero_plus_quantile_matches_the_worked_example() {
        // Powers [0, 0, 10, 20, 30, 40] with 5 classes: edges are the zero
        // threshold plus quantiles 0.25/0.5/0.75 of {10,20,30,40}, so labels
        // come out [0, 0, 1, 2, 3, 4].
        let powers = [0.0, 0.0, 10.0, 20.0, 30.0, 40.0];
        let edges = BinEdges::fit(&powers, 5, BinScheme::ZeroPlusQuantile).unwrap();
        assert_eq!(edges.edges.len(), 4);
        assert_eq!(edges.edges[0], ZERO_POWER_THRESHOLD);
        assert_eq!(&edges.edges[1..], &[17.5, 25.0, 32.5]);
        let labels: Vec<usize> = powers.iter().map(|&p| edges.assign(p)).collect();
        assert_eq!(labels, vec![0, 0, 1, 2, 3, 4]);
    }

    #[test]
    fn equal_width_splits_the_range_evenly() {
        let powers: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let edges = BinEdges::fit(&powers, 5, BinScheme::EqualWidth).unwrap();
        assert_eq!(edges.edges, vec![20.0, 40.0, 60.0, 80.0]);
        assert_eq!(edges.assign(0.0), 0);
        assert_eq!(edges.assign(20.0), 0);
        assert_eq!(edges.assign(20.0001), 1);
        assert_eq!(edges.assign(100.0), 4);
    }

    #[test]
    fn all_zero_power_is_degenerate_but_total() {
        let edges = BinEdges::fit(&[0.0; 20], 5, BinScheme::ZeroPlusQuantile).unwrap();
        assert_eq!(edges.classes(), 5);
        assert!((0..20).all(|_| edges.assign(0.0) == 0));
        assert!(edges.edges.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn too_few_distinct_positive_values_is_an_error() {
        let powers = [0.0, 5.0, 5.0, 5.0, 5.0];
        assert!(matches!(
            BinEdges::fit(&powers, 5, BinScheme::ZeroPlusQuantile),
            Err(Error::TooFewDistinct { .. })
        ));
    }

    #[test]
    fn binning_rejects_negative_and_non_finite_powers() {
        assert!(BinEdges::fit(&[1.0, -0.5], 3, BinScheme::ZeroPlusQuantile).is_err());
        assert!(BinEdges::fit(&[1.0, f64::NAN], 3, BinScheme::EqualWidth).is_err());
        assert!(BinEdges::fit(&[], 3, BinScheme::EqualWidth).is_err());
        assert!(BinEdges::fit(&[1.0, 2.0], 1, BinScheme::EqualWidth).is_err());
    }

    #[test]
    fn assignment_is_total_and_monotone() {
        let powers: Vec<f64> = (0..50).map(|i| i as f64 * 0.02).collect();
        let edges = BinEdges::fit(&powers, 5, BinScheme::ZeroPlusQuantile).unwrap();
        let mut last = 0;
        for i in 0..200 {
            let c = edges.assign(i as f64 * 0.005);
            assert!(c < 5);
            assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn normalizer_standardizes_and_roundtrips() {
        let mut ds = toy_dataset(100);
        let norm = Normalizer::fit(&ds, Split::Train).unwrap();
        // Column "c" is constant: clamped divisor, output exactly 0.
        assert_eq!(norm.clamped, vec![false, false, true]);
        let original = ds.samples[13].features.clone();
        norm.apply(&mut ds).unwrap();
        assert!(ds.samples.iter().all(|s| s.features[2] == 0.0));
        // Standardized column has zero mean, unit variance (population).
        let n = ds.n() as f64;
        let mean0: f64 = ds.samples.iter().map(|s| s.features[0]).sum::<f64>() / n;
        let var0: f64 = ds
            .samples
            .iter()
            .map(|s| s.features[0] * s.features[0])
            .sum::<f64>()
            / n
            - mean0 * mean0;
        assert!(mean0.abs() < 1e-12);
        assert!((var0 - 1.0).abs() < 1e-9);
        let mut row = ds.samples[13].features.clone();
        norm.invert_row(&mut row);
        for (a, b) in row.iter().zip(&original) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn two_point_feature_maps_to_plus_minus_one() {
        let mut ds = toy_dataset(2);
        ds.samples[0].features = vec![0.0, 0.0, 0.0];
        ds.samples[1].features = vec![2.0, 0.0, 0.0];
        let norm = Normalizer::fit(&ds, Split::Train).unwrap();
        assert_eq!(norm.mean[0], 1.0);
        assert_eq!(norm.std[0], 1.0); // population std of {0, 2}
        norm.apply(&mut ds).unwrap();
        assert_eq!(ds.samples[0].features[0], -1.0);
        assert_eq!(ds.samples[1].features[0], 1.0);
    }

    #[test]
    fn split_counts_match_the_floor_rule() {
        let mut ds = toy_dataset(17_520);
        assign_splits(&mut ds, SplitFractions::default(), SplitOrder::Shuffled, 0).unwrap();
        assert_eq!(ds.split_counts(), (12_264, 2_628, 2_628));

        let mut small = toy_dataset(10);
        assign_splits(
            &mut small,
            SplitFractions::default(),
            SplitOrder::Shuffled,
            0,
        )
        .unwrap();
        assert_eq!(small.split_counts(), (8, 1, 1));
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let mut a = toy_dataset(50);
        let mut b = toy_dataset(50);
        let mut c = toy_dataset(50);
        assign_splits(&mut a, SplitFractions::default(), SplitOrder::Shuffled, 7).unwrap();
        assign_splits(&mut b, SplitFractions::default(), SplitOrder::Shuffled, 7).unwrap();
        assign_splits(&mut c, SplitFractions::default(), SplitOrder::Shuffled, 8).unwrap();
        assert_eq!(a.splits, b.splits);
        assert_ne!(a.splits, c.splits);
    }

    #[test]
    fn chronological_split_cuts_in_time_order() {
        let mut ds = toy_dataset(10);
        assign_splits(
            &mut ds,
            SplitFractions::default(),
            SplitOrder::Chronological,
            0,
        )
        .unwrap();
        assert!(ds.splits[..8].iter().all(|&s| s == Split::Train));
        assert_eq!(ds.splits[8], Split::Val);
        assert_eq!(ds.splits[9], Split::Test);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let mut tiny = toy_dataset(2);
        assert!(matches!(
            assign_splits(
                &mut tiny,
                SplitFractions::default(),
                SplitOrder::Shuffled,
                0
            ),
            Err(Error::TooSmallToSplit { n: 2 })
        ));
        let mut ds = toy_dataset(10);
        let bad = SplitFractions {
            train: 0.5,
            val: 0.2,
            test: 0.2,
        };
        assert!(matches!(
            assign_splits(&mut ds, bad, SplitOrder::Shuffled, 0),
            Err(Error::BadSplitFractions { .. })
        ));
        // 4 samples at 15% val floors to zero: positive fraction, empty split.
        let mut four = toy_dataset(4);
        assert!(assign_splits(
            &mut four,
            SplitFractions::default(),
            SplitOrder::Shuffled,
            0
        )
        .is_err());
    }

    fn labeled_dataset(n: usize) -> Dataset {
        let mut ds = toy_dataset(n);
        for (i, s) in ds.samples.iter_mut().enumerate() {
            s.label = Some(i % 5);
        }
        ds.classes = 5;
        ds
    }

    #[test]
    fn annotation_keeps_the_rounded_count() {
        let mut ds = labeled_dataset(10);
        let kept = annotate_fraction(&mut ds, 20.0, AnnotateStrategy::Uniform, 3).unwrap();
        assert_eq!(kept, 2);
        assert_eq!(ds.samples.iter().filter(|s| s.label.is_some()).count(), 2);
        assert!(ds.annotated);
    }

    #[test]
    fn annotation_extremes_keep_none_or_all() {
        let mut none = labeled_dataset(40);
        assert_eq!(
            annotate_fraction(&mut none, 0.0, AnnotateStrategy::Uniform, 0).unwrap(),
            0
        );
        assert!(none.samples.iter().all(|s| s.label.is_none()));
        assert!(none.annotated);

        let mut all = labeled_dataset(40);
        assert_eq!(
            annotate_fraction(&mut all, 100.0, AnnotateStrategy::Uniform, 0).unwrap(),
            40
        );
        assert!(all.samples.iter().all(|s| s.label.is_some()));
    }

    #[test]
    fn annotation_sets_are_nested_across_increasing_p() {
        let kept_at = |p: f64| {
            let mut ds = labeled_dataset(60);
            annotate_fraction(&mut ds, p, AnnotateStrategy::Uniform, 9).unwrap();
            ds.samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.label.is_some())
                .map(|(i, _)| i)
                .collect::<std::collections::HashSet<_>>()
        };
        let p10 = kept_at(10.0);
        let p20 = kept_at(20.0);
        let p50 = kept_at(50.0);
        assert!(p10.is_subset(&p20));
        assert!(p20.is_subset(&p50));
    }

    #[test]
    fn stratified_annotation_is_proportional() {
        let mut ds = labeled_dataset(100); // 20 samples per class
        let kept = annotate_fraction(&mut ds, 25.0, AnnotateStrategy::Stratified, 1).unwrap();
        assert_eq!(kept, 25);
        for c in 0..5 {
            let labeled_c = ds.samples.iter().filter(|s| s.label == Some(c)).count();
            assert_eq!(labeled_c, 5, "class {c}");
        }
    }

    #[test]
    fn annotation_rejects_out_of_range_percentages() {
        let mut ds = labeled_dataset(10);
        assert!(annotate_fraction(&mut ds, -1.0, AnnotateStrategy::Uniform, 0).is_err());
        assert!(annotate_fraction(&mut ds, 101.0, AnnotateStrategy::Uniform, 0).is_err());
    }

    #[test]
    fn feature_shift_is_zero_for_identical_data_and_positive_under_shift() {
        let a = toy_dataset(200);
        let same = feature_shift(&a, &a.clone()).unwrap();
        assert!(same.abs() < 1e-12);
        let mut b = toy_dataset(200);
        for s in &mut b.samples {
            s.features[0] += 10.0;
            s.features[1] *= 3.0;
        }
        let shifted = feature_shift(&a, &b).unwrap();
        assert!(shifted > 1.0, "shift {shifted}");
    }

    #[test]
    fn select_features_keeps_named_columns() {
        let mut ds = toy_dataset(5);
        ds.select_features(&[2, 0]).unwrap();
        assert_eq!(ds.feature_names, vec!["a".to_string(), "c".to_string()]);
        assert_eq!(ds.samples[3].features, vec![3.0, 5.0]);
        assert!(ds.select_features(&[9]).is_err());
    }

    #[test]
    fn labels_of_reports_unlabeled_rows() {
        let ds = toy_dataset(5);
        assert!(matches!(
            ds.labels_of(&[0, 1], "test"),
            Err(Error::UnlabeledSamples { .. })
        ));
    }
}
