//! Uniformly spaced time series and CSV ingestion.
//!
//! A [`TimeSeries`] stores named numeric columns on a uniform timestamp grid
//! (start plus a fixed interval), which is the shape both the weather and the
//! power inputs must have before they can be merged. The loader is forgiving
//! about row content — unparseable rows are dropped and reported — but strict
//! about structure: missing required columns, duplicated timestamps, and
//! irregular spacing are hard errors because silently patching them would
//! corrupt the resampling arithmetic.

use crate::error::{Error, Result};
use chrono::{Duration, NaiveDateTime};
use std::path::Path;

/// Named columns on a uniform timestamp grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    start: NaiveDateTime,
    interval_minutes: u32,
    columns: Vec<(String, Vec<f64>)>,
    /// `(line, reason)` for every input row the loader discarded.
    dropped: Vec<(u64, String)>,
}

impl TimeSeries {
    /// Builds a series from columns of equal length.
    pub fn from_columns(
        start: NaiveDateTime,
        interval_minutes: u32,
        columns: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        if interval_minutes == 0 {
            return Err(Error::InvalidConfig(
                "time series interval must be positive".into(),
            ));
        }
        let len = columns.first().map_or(0, |(_, v)| v.len());
        if len == 0 {
            return Err(Error::InvalidConfig(
                "time series must have at least one column and one row".into(),
            ));
        }
        for (name, values) in &columns {
            if values.len() != len {
                return Err(Error::Misaligned(format!(
                    "column '{name}' has {} rows, expected {len}",
                    values.len()
                )));
            }
        }
        Ok(Self {
            start,
            interval_minutes,
            columns,
            dropped: Vec::new(),
        })
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, |(_, v)| v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Timestamp of row `i`.
    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + Duration::minutes(i as i64 * self.interval_minutes as i64)
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn columns(&self) -> &[(String, Vec<f64>)] {
        &self.columns
    }

    /// Rows the loader discarded, as `(line_number, reason)` pairs.
    pub fn dropped_rows(&self) -> &[(u64, String)] {
        &self.dropped
    }

    /// Loads a CSV with a `timestamp` column plus the `required` numeric
    /// columns (matched case-insensitively; extra columns are ignored).
    ///
    /// Rows are sorted by timestamp before the spacing check, so files
    /// written out of order load fine. Rows with unparseable timestamps or
    /// values are dropped and recorded in [`TimeSeries::dropped_rows`].
    pub fn load_csv(path: &Path, required: &[&str]) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_io_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_io_error(path, e))?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
        };
        let ts_col = find("timestamp").ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: "timestamp".into(),
        })?;
        let mut value_cols = Vec::with_capacity(required.len());
        for &name in required {
            value_cols.push(find(name).ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })?);
        }

        let mut rows: Vec<(NaiveDateTime, Vec<f64>)> = Vec::new();
        let mut dropped = Vec::new();
        let mut total = 0u64;
        for record in reader.records() {
            let record = record.map_err(|e| csv_io_error(path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            total += 1;
            let ts_text = record.get(ts_col).unwrap_or("").trim();
            let ts = match parse_timestamp(ts_text) {
                Some(ts) => ts,
                None => {
                    dropped.push((line, format!("bad timestamp '{ts_text}'")));
                    continue;
                }
            };
            let mut values = Vec::with_capacity(value_cols.len());
            let mut bad = None;
            for (&col, &name) in value_cols.iter().zip(required) {
                match record.get(col).unwrap_or("").trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => {
                        bad = Some(format!(
                            "bad value '{}' in column '{name}'",
                            record.get(col).unwrap_or("")
                        ));
                        break;
                    }
                }
            }
            match bad {
                Some(reason) => dropped.push((line, reason)),
                None => rows.push((ts, values)),
            }
        }

        if rows.is_empty() {
            return Err(Error::EmptyData {
                path: path.to_path_buf(),
                detail: if total == 0 {
                    "file has no data rows".into()
                } else {
                    format!("all {total} rows were dropped as unparseable")
                },
            });
        }
        if rows.len() < 2 {
            return Err(Error::EmptyData {
                path: path.to_path_buf(),
                detail: "need at least 2 rows to establish the timestamp spacing".into(),
            });
        }
        rows.sort_by_key(|(ts, _)| *ts);
        for pair in rows.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::DuplicateTimestamp {
                    path: path.to_path_buf(),
                    timestamp: pair[0].0.to_string(),
                });
            }
        }
        let step = (rows[1].0 - rows[0].0).num_seconds();
        for pair in rows.windows(2) {
            let d = (pair[1].0 - pair[0].0).num_seconds();
            if d != step {
                return Err(Error::NonUniformSpacing {
                    path: path.to_path_buf(),
                    expected: format!("{step}s"),
                    found: format!("{d}s"),
                    timestamp: pair[1].0.to_string(),
                });
            }
        }
        if step % 60 != 0 {
            return Err(Error::NonUniformSpacing {
                path: path.to_path_buf(),
                expected: "a whole number of minutes".into(),
                found: format!("{step}s"),
                timestamp: rows[1].0.to_string(),
            });
        }

        let mut columns: Vec<(String, Vec<f64>)> = required
            .iter()
            .map(|&n| (n.to_string(), Vec::with_capacity(rows.len())))
            .collect();
        for (_, values) in &rows {
            for (col, &v) in columns.iter_mut().zip(values) {
                col.1.push(v);
            }
        }
        let mut series = Self::from_columns(rows[0].0, (step / 60) as u32, columns)?;
        series.dropped = dropped;
        Ok(series)
    }

    /// Writes `timestamp,<columns...>` rows; floats use the shortest
    /// round-trip representation so a save/load cycle is lossless.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io_error(path, e))?;
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        writer
            .write_record(&header)
            .map_err(|e| csv_io_error(path, e))?;
        for i in 0..self.len() {
            let mut row = vec![self.timestamp(i).format("%Y-%m-%dT%H:%M:%S").to_string()];
            for (_, values) in &self.columns {
                row.push(values[i].to_string());
            }
            writer
                .write_record(&row)
                .map_err(|e| csv_io_error(path, e))?;
        }
        writer.flush().map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(())
    }

    /// Averages non-overlapping windows down to `target_minutes` spacing.
    ///
    /// The target must be a multiple of the current interval; a trailing
    /// partial window is discarded. Each output row keeps the timestamp of
    /// its window start, and the window mean conserves mass: the input sum
    /// equals the window count times the output sum.
    pub fn resample_mean(&self, target_minutes: u32) -> Result<Self> {
        if target_minutes == 0 || !target_minutes.is_multiple_of(self.interval_minutes) {
            return Err(Error::BadResampleInterval {
                from_minutes: self.interval_minutes,
                to_minutes: target_minutes,
            });
        }
        let k = (target_minutes / self.interval_minutes) as usize;
        let n_out = self.len() / k;
        if n_out == 0 {
            return Err(Error::EmptySelection {
                context: format!(
                    "resampling {} rows at {} min to {} min",
                    self.len(),
                    self.interval_minutes,
                    target_minutes
                ),
            });
        }
        let columns = self
            .columns
            .iter()
            .map(|(name, values)| {
                let means = (0..n_out)
                    .map(|w| values[w * k..(w + 1) * k].iter().sum::<f64>() / k as f64)
                    .collect();
                (name.clone(), means)
            })
            .collect();
        Self::from_columns(self.start, target_minutes, columns)
    }
}

fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

fn csv_io_error(path: &Path, err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io {
            path: path.to_path_buf(),
            source: io,
        },
        other => Error::EmptyData {
            path: path.to_path_buf(),
            detail: format!("csv error: {other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn start() -> NaiveDateTime {
        "2018-01-01T00:00:00".parse().unwrap()
    }

    fn write_temp(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn load_parses_well_formed_rows_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_temp(
            &dir,
            "ok.csv",
            "timestamp,ghi,power_kw\n\
             2018-01-01T00:00:00,0.0,0.0\n\
             2018-01-01T00:05:00,1.5,2.0\n\
             2018-01-01T00:10:00,3.0,4.0\n\
             2018-01-01T00:15:00,4.5,6.0\n",
        );
        let ts = TimeSeries::load_csv(&path, &["ghi", "power_kw"]).unwrap();
        assert_eq!(ts.len(), 4);
        assert_eq!(ts.interval_minutes(), 5);
        assert_eq!(ts.column("ghi").unwrap(), &[0.0, 1.5, 3.0, 4.5]);
        assert_eq!(ts.column("power_kw").unwrap(), &[0.0, 2.0, 4.0, 6.0]);
        assert!(ts.dropped_rows().is_empty());
    }

    #[test]
    fn load_sorts_shuffled_rows_by_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_temp(
            &dir,
            "shuffled.csv",
            "timestamp,x\n\
             2018-01-01T00:10:00,3\n\
             2018-01-01T00:00:00,1\n\
             2018-01-01T00:05:00,2\n",
        );
        let ts = TimeSeries::load_csv(&path, &["x"]).unwrap();
        assert_eq!(ts.column("x").unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(ts.start(), start());
    }

    #[test]
    fn load_drops_unparseable_rows_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_temp(
            &dir,
            "dropped.csv",
            "timestamp,x\n\
             2018-01-01T00:00:00,1\n\
             not-a-time,2\n\
             2018-01-01T00:05:00,oops\n\
             2018-01-01T00:05:00,2\n\
             2018-01-01T00:10:00,3\n",
        );
        let ts = TimeSeries::load_csv(&path, &["x"]).unwrap();
        assert_eq!(ts.len(), 3);
        let lines: Vec<u64> = ts.dropped_rows().iter().map(|(l, _)| *l).collect();
        assert_eq!(lines, vec![3, 4]);
        assert!(ts.dropped_rows()[0].1.contains("timestamp"));
        assert!(ts.dropped_rows()[1].1.contains("'oops'"));
    }

    #[test]
    fn load_rejects_missing_columns_duplicates_and_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let missing = write_temp(&dir, "missing.csv", "timestamp,y\n2018-01-01T00:00:00,1\n");
        assert!(matches!(
            TimeSeries::load_csv(&missing, &["x"]),
            Err(Error::MissingColumn { column, .. }) if column == "x"
        ));

        let dup = write_temp(
            &dir,
            "dup.csv",
            "timestamp,x\n\
             2018-01-01T00:00:00,1\n\
             2018-01-01T00:00:00,2\n",
        );
        assert!(matches!(
            TimeSeries::load_csv(&dup, &["x"]),
            Err(Error::DuplicateTimestamp { .. })
        ));

        let gap = write_temp(
            &dir,
            "gap.csv",
            "timestamp,x\n\
             2018-01-01T00:00:00,1\n\
             2018-01-01T00:05:00,2\n\
             2018-01-01T00:20:00,3\n",
        );
        assert!(matches!(
            TimeSeries::load_csv(&gap, &["x"]),
            Err(Error::NonUniformSpacing { .. })
        ));

        let empty = write_temp(&dir, "empty.csv", "timestamp,x\n");
        assert!(matches!(
            TimeSeries::load_csv(&empty, &["x"]),
            Err(Error::EmptyData { .. })
        ));
    }

    #[test]
    fn save_load_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let series = TimeSeries::from_columns(
            start(),
            30,
            vec![("a".into(), vec![0.1, 1.0 / 3.0, 2.5e-7])],
        )
        .unwrap();
        let path = dir.path().join("roundtrip.csv");
        series.save_csv(&path).unwrap();
        let loaded = TimeSeries::load_csv(&path, &["a"]).unwrap();
        assert_eq!(loaded.column("a").unwrap(), series.column("a").unwrap());
        assert_eq!(loaded.start(), series.start());
        assert_eq!(loaded.interval_minutes(), 30);
    }

    #[test]
    fn resample_averages_windows_and_keeps_window_starts() {
        let series = TimeSeries::from_columns(
            start(),
            5,
            vec![("x".into(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0])],
        )
        .unwrap();
        let out = series.resample_mean(30).unwrap();
        // One full window of six values (mean 2.5); the trailing 10 is dropped.
        assert_eq!(out.len(), 1);
        assert_eq!(out.column("x").unwrap(), &[2.5]);
        assert_eq!(out.timestamp(0), start());
        assert_eq!(out.interval_minutes(), 30);
    }

    #[test]
    fn resample_of_constant_series_is_constant() {
        let series =
            TimeSeries::from_columns(start(), 5, vec![("x".into(), vec![7.25; 12])]).unwrap();
        let out = series.resample_mean(30).unwrap();
        assert_eq!(out.column("x").unwrap(), &[7.25, 7.25]);
    }

    #[test]
    fn resample_conserves_mass_on_divisible_lengths() {
        let n = 105_120;
        let values: Vec<f64> = (0..n)
            .map(|i| ((i % 288) as f64 * 0.01).sin().abs())
            .collect();
        let sum_in: f64 = values.iter().sum();
        let series = TimeSeries::from_columns(start(), 5, vec![("p".into(), values)]).unwrap();
        let out = series.resample_mean(30).unwrap();
        assert_eq!(out.len(), 17_520);
        let sum_out: f64 = out.column("p").unwrap().iter().sum();
        assert!(
            (sum_in - 6.0 * sum_out).abs() / sum_in.abs() < 1e-9,
            "mass not conserved: {sum_in} vs {}",
            6.0 * sum_out
        );
    }

    #[test]
    fn resample_rejects_non_divisible_targets() {
        let series =
            TimeSeries::from_columns(start(), 5, vec![("x".into(), vec![1.0; 10])]).unwrap();
        assert!(matches!(
            series.resample_mean(12),
            Err(Error::BadResampleInterval {
                from_minutes: 5,
                to_minutes: 12
            })
        ));
        assert!(series.resample_mean(0).is_err());
    }

    #[test]
    fn year_of_five_minute_rows_resamples_to_the_expected_count() {
        let series =
            TimeSeries::from_columns(start(), 5, vec![("p".into(), vec![1.0; 105_120])]).unwrap();
        assert_eq!(series.resample_mean(30).unwrap().len(), 17_520);
    }
}
