//! Helpers shared by unit tests.

use chrono::{Duration, NaiveDate};

use crate::models::{FitRange, FittedModel, ModelSpec, Parameters};
use crate::timeseries::TimeSeriesFrame;

pub fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 6).unwrap()
}

pub fn weekly_dates(n: usize) -> Vec<NaiveDate> {
    (0..n).map(|i| start_date() + Duration::weeks(i as i64)).collect()
}

/// Fully observed weekly frame from named columns of equal length.
pub fn frame_from_columns(columns: &[(&str, Vec<f64>)]) -> TimeSeriesFrame {
    let n = columns[0].1.len();
    let values = (0..n)
        .map(|i| columns.iter().map(|(_, c)| Some(c[i])).collect())
        .collect();
    TimeSeriesFrame::new(
        weekly_dates(n),
        columns.iter().map(|(name, _)| name.to_string()).collect(),
        values,
    )
    .unwrap()
}

pub fn hand_model(spec: ModelSpec, parameters: Parameters) -> FittedModel {
    FittedModel {
        spec,
        parameters,
        residual_sigma: 0.0,
        fit_range: FitRange {
            start: start_date(),
            end: start_date(),
            rows: 1,
        },
    }
}
