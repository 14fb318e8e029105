//! Aligned weekly multivariate series.
//!
//! A [`TimeSeriesFrame`] is the single data substrate shared by every model:
//! one row per week, one column per named variable, and an explicit missing
//! marker (`None`) for gaps. Frames are immutable once built.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One observation; `None` marks a missing value.
pub type Cell = Option<f64>;

/// Number of trailing weeks shown in the near-term panel.
pub const NEAR_TERM_WEEKS: usize = 4;

pub const DEFAULT_BAND_WINDOW: usize = 20;
pub const DEFAULT_BAND_WIDTH: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("parse error at line {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("duplicate date {0}")]
    DuplicateIndex(NaiveDate),
    #[error("frame has no variables")]
    EmptyFrame,
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("invalid variable name `{0}`")]
    InvalidVariableName(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index is not strictly increasing at {0}")]
    NotIncreasing(NaiveDate),
    #[error("index is not weekly at {0}")]
    IrregularSpacing(NaiveDate),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("window must be at least 1")]
    InvalidWindow,
    #[error("window {window} exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("band width must be positive and finite")]
    InvalidBandWidth,
    #[error("series has no observed values")]
    EmptySeries,
    #[error("slice {start}..{end} out of bounds for length {len}")]
    SliceOutOfBounds { start: usize, end: usize, len: usize },
    #[error("csv: {0}")]
    Csv(String),
}

/// Whether a frame's index must advance in exact 7-day steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Spacing {
    #[default]
    Weekly,
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, JsonSchema)]
pub struct TimeSeriesFrame {
    index: Vec<NaiveDate>,
    variables: Vec<String>,
    values: Vec<Vec<Cell>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
struct RawFrame {
    index: Vec<NaiveDate>,
    variables: Vec<String>,
    values: Vec<Vec<Cell>>,
    #[serde(default)]
    metadata: BTreeMap<String, f64>,
}

impl<'de> Deserialize<'de> for TimeSeriesFrame {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawFrame::deserialize(deserializer)?;
        TimeSeriesFrame::with_spacing(raw.index, raw.variables, raw.values, Spacing::Any)
            .map(|f| f.with_metadata(raw.metadata))
            .map_err(serde::de::Error::custom)
    }
}

impl TimeSeriesFrame {
    /// Builds a frame with weekly spacing enforced.
    pub fn new(
        index: Vec<NaiveDate>,
        variables: Vec<String>,
        values: Vec<Vec<Cell>>,
    ) -> Result<Self, FrameError> {
        Self::with_spacing(index, variables, values, Spacing::Weekly)
    }

    pub fn with_spacing(
        index: Vec<NaiveDate>,
        variables: Vec<String>,
        values: Vec<Vec<Cell>>,
        spacing: Spacing,
    ) -> Result<Self, FrameError> {
        if variables.is_empty() {
            return Err(FrameError::EmptyFrame);
        }
        let mut seen = HashSet::new();
        for v in &variables {
            if v.trim().is_empty() || v.trim() != v {
                return Err(FrameError::InvalidVariableName(v.clone()));
            }
            if !seen.insert(v.as_str()) {
                return Err(FrameError::DuplicateVariable(v.clone()));
            }
        }
        if values.len() != index.len() {
            return Err(FrameError::Shape(format!(
                "{} rows for {} dates",
                values.len(),
                index.len()
            )));
        }
        for (row, date) in values.iter().zip(&index) {
            if row.len() != variables.len() {
                return Err(FrameError::Shape(format!(
                    "row {date} has {} cells, expected {}",
                    row.len(),
                    variables.len()
                )));
            }
            if row.iter().flatten().any(|v| !v.is_finite()) {
                return Err(FrameError::Shape(format!("row {date} has a non-finite value")));
            }
        }
        for pair in index.windows(2) {
            if pair[1] == pair[0] {
                return Err(FrameError::DuplicateIndex(pair[1]));
            }
            if pair[1] < pair[0] {
                return Err(FrameError::NotIncreasing(pair[1]));
            }
            if spacing == Spacing::Weekly && (pair[1] - pair[0]).num_days() != 7 {
                return Err(FrameError::IrregularSpacing(pair[1]));
            }
        }
        Ok(Self {
            index,
            variables,
            values,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, f64>) -> Self {
        self.metadata = metadata;
        self
    }

    /// Ground-truth parameters and other numeric annotations (synthetic data).
    pub fn metadata(&self) -> &BTreeMap<String, f64> {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index(&self) -> &[NaiveDate] {
        &self.index
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.values
    }

    pub fn has_variable(&self, name: &str) -> bool {
        self.variables.iter().any(|v| v == name)
    }

    pub fn column_index(&self, name: &str) -> Result<usize, FrameError> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| FrameError::UnknownVariable(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<Cell>, FrameError> {
        let c = self.column_index(name)?;
        Ok(self.values.iter().map(|row| row[c]).collect())
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.index.last().copied()
    }

    /// Most recent observed value of a variable.
    pub fn last_observed(&self, name: &str) -> Result<f64, FrameError> {
        let c = self.column_index(name)?;
        self.values
            .iter()
            .rev()
            .find_map(|row| row[c])
            .ok_or(FrameError::EmptySeries)
    }

    /// Rows `start..end` as a new frame (metadata is kept).
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self, FrameError> {
        if start > end || end > self.len() {
            return Err(FrameError::SliceOutOfBounds {
                start,
                end,
                len: self.len(),
            });
        }
        Ok(Self {
            index: self.index[start..end].to_vec(),
            variables: self.variables.clone(),
            values: self.values[start..end].to_vec(),
            metadata: self.metadata.clone(),
        })
    }

    /// The first `n` rows (all rows if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Self {
        self.slice_rows(0, n.min(self.len())).expect("in bounds")
    }

    /// The last `n` rows (all rows if `n` exceeds the length).
    pub fn tail(&self, n: usize) -> Self {
        let start = self.len().saturating_sub(n);
        self.slice_rows(start, self.len()).expect("in bounds")
    }

    /// Restricts the frame to the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self, FrameError> {
        let cols = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>, _>>()?;
        let values = self
            .values
            .iter()
            .map(|row| cols.iter().map(|&c| row[c]).collect())
            .collect();
        let mut out = Self::with_spacing(self.index.clone(), names.to_vec(), values, Spacing::Any)?;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    pub fn series_slice(&self, name: &str, start: usize, end: usize) -> Result<SeriesSlice, FrameError> {
        if start > end || end > self.len() {
            return Err(FrameError::SliceOutOfBounds {
                start,
                end,
                len: self.len(),
            });
        }
        let c = self.column_index(name)?;
        Ok(SeriesSlice {
            variable: name.to_string(),
            start,
            end,
            values: self.values[start..end].iter().map(|row| row[c]).collect(),
        })
    }

    /// The trailing [`NEAR_TERM_WEEKS`] of one variable.
    pub fn near_term(&self, name: &str) -> Result<SeriesSlice, FrameError> {
        let start = self.len().saturating_sub(NEAR_TERM_WEEKS);
        self.series_slice(name, start, self.len())
    }

    /// Dense matrix of the named columns over the longest trailing block of
    /// rows in which all of them are observed. Returns the block start row.
    pub fn complete_suffix(&self, names: &[String]) -> Result<(usize, Vec<Vec<f64>>), FrameError> {
        let cols = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>, _>>()?;
        let mut start = self.len();
        while start > 0 && cols.iter().all(|&c| self.values[start - 1][c].is_some()) {
            start -= 1;
        }
        let rows = self.values[start..]
            .iter()
            .map(|row| cols.iter().map(|&c| row[c].expect("complete")).collect())
            .collect();
        Ok((start, rows))
    }

    /// Every row in which all named columns are observed, with its row position.
    pub fn complete_rows(&self, names: &[String]) -> Result<Vec<(usize, Vec<f64>)>, FrameError> {
        let cols = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self
            .values
            .iter()
            .enumerate()
            .filter_map(|(i, row)| {
                cols.iter()
                    .map(|&c| row[c])
                    .collect::<Option<Vec<f64>>>()
                    .map(|r| (i, r))
            })
            .collect())
    }
}

/// A contiguous run of one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SeriesSlice {
    pub variable: String,
    pub start: usize,
    pub end: usize,
    pub values: Vec<Cell>,
}

/// Parses the `date,<var>,...` CSV layout, enforcing weekly spacing.
pub fn load_frame<R: Read>(source: R) -> Result<TimeSeriesFrame, FrameError> {
    load_frame_with(source, Spacing::Weekly)
}

pub fn load_frame_with<R: Read>(source: R, spacing: Spacing) -> Result<TimeSeriesFrame, FrameError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| FrameError::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    match headers.get(0) {
        Some("date") => {}
        other => {
            return Err(FrameError::Parse {
                row: 1,
                message: format!("first column must be `date`, found {other:?}"),
            })
        }
    }
    let variables: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if variables.is_empty() {
        return Err(FrameError::EmptyFrame);
    }

    let mut rows: Vec<(NaiveDate, Vec<Cell>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| FrameError::Parse {
            row: line,
            message: e.to_string(),
        })?;
        if record.len() != variables.len() + 1 {
            return Err(FrameError::Parse {
                row: line,
                message: format!("expected {} fields, found {}", variables.len() + 1, record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| FrameError::Parse {
            row: line,
            message: format!("bad date `{}`: {e}", &record[0]),
        })?;
        let cells = record
            .iter()
            .skip(1)
            .map(|field| parse_cell(field).ok_or_else(|| FrameError::Parse {
                row: line,
                message: format!("bad number `{field}`"),
            }))
            .collect::<Result<Vec<Cell>, _>>()?;
        rows.push((date, cells));
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(pair) = rows.windows(2).find(|p| p[0].0 == p[1].0) {
        return Err(FrameError::DuplicateIndex(pair[0].0));
    }
    let (index, values) = rows.into_iter().unzip();
    TimeSeriesFrame::with_spacing(index, variables, values, spacing)
}

fn parse_cell(field: &str) -> Option<Cell> {
    if field.is_empty() {
        return Some(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Some(Some(v)),
        _ => None,
    }
}

/// Writes the frame in the layout accepted by [`load_frame`]. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_frame<W: Write>(frame: &TimeSeriesFrame, sink: W) -> Result<(), FrameError> {
    let mut writer = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| FrameError::Csv(e.to_string());
    let mut header = vec!["date".to_string()];
    header.extend(frame.variables.iter().cloned());
    writer.write_record(&header).map_err(csv_err)?;
    for (date, row) in frame.index.iter().zip(&frame.values) {
        let mut record = vec![date.format("%Y-%m-%d").to_string()];
        record.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        writer.write_record(&record).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| FrameError::Csv(e.to_string()))
}

/// Fills each missing cell with the most recent observed value at most
/// `window` steps back.
pub fn forward_fill(series: &[Cell], window: usize) -> Result<Vec<Cell>, FrameError> {
    let observed: Vec<bool> = series.iter().map(Option::is_some).collect();
    forward_fill_observed(series, &observed, window)
}

/// Window-limited forward fill where `observed` marks which cells are genuine
/// observations. Cells not marked observed are recomputed from the nearest
/// observed predecessor, so refilling an already filled series with its
/// original mask is a no-op.
pub fn forward_fill_observed(
    series: &[Cell],
    observed: &[bool],
    window: usize,
) -> Result<Vec<Cell>, FrameError> {
    if window == 0 {
        return Err(FrameError::InvalidWindow);
    }
    if observed.len() != series.len() {
        return Err(FrameError::Shape("observation mask length differs from series".into()));
    }
    let mut last: Option<(usize, f64)> = None;
    let mut out = Vec::with_capacity(series.len());
    for (i, (&cell, &is_obs)) in series.iter().zip(observed).enumerate() {
        if is_obs {
            if let Some(v) = cell {
                last = Some((i, v));
                out.push(Some(v));
                continue;
            }
        }
        out.push(match last {
            Some((j, v)) if i - j <= window => Some(v),
            _ => None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BollingerBand {
    pub middle: Vec<Cell>,
    pub upper: Vec<Cell>,
    pub lower: Vec<Cell>,
    pub window: usize,
    pub k: f64,
}

/// Rolling mean ± `k` population standard deviations. Positions before
/// `window - 1`, and windows touching a missing value, are `None`.
pub fn bollinger(series: &[Cell], window: usize, k: f64) -> Result<BollingerBand, FrameError> {
    if window == 0 {
        return Err(FrameError::InvalidWindow);
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(FrameError::InvalidBandWidth);
    }
    if window > series.len() {
        return Err(FrameError::WindowTooLarge {
            window,
            len: series.len(),
        });
    }
    let n = series.len();
    let mut middle = vec![None; n];
    let mut upper = vec![None; n];
    let mut lower = vec![None; n];
    for t in (window - 1)..n {
        let Some(win) = series[t + 1 - window..=t].iter().copied().collect::<Option<Vec<f64>>>() else {
            continue;
        };
        let mean = win.iter().sum::<f64>() / window as f64;
        let var = win.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / window as f64;
        let half = k * var.sqrt();
        middle[t] = Some(mean);
        upper[t] = Some(mean + half);
        lower[t] = Some(mean - half);
    }
    Ok(BollingerBand {
        middle,
        upper,
        lower,
        window,
        k,
    })
}

/// Min and max over observed values; a flat series is padded to `(v-1, v+1)`
/// so the drag scale never collapses.
pub fn value_range(series: &[Cell]) -> Result<(f64, f64), FrameError> {
    let mut observed = series.iter().flatten().copied();
    let first = observed.next().ok_or(FrameError::EmptySeries)?;
    let (min, max) = observed.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if min == max {
        Ok((min - 1.0, max + 1.0))
    } else {
        Ok((min, max))
    }
}
