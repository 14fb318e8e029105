//! Multiple linear regression of the target on contemporaneous exogenous values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{fit_range, path_prefix, ExogPaths, FittedModel, ModelError, ModelSpec, Parameters};
use crate::linalg::ols;
use crate::timeseries::TimeSeriesFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrParams {
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
}

pub fn fit(frame: &TimeSeriesFrame, spec: &ModelSpec) -> Result<FittedModel, ModelError> {
    spec.validate(frame)?;
    if spec.exogenous.is_empty() {
        return Err(ModelError::InvalidSpec("MLR needs at least one exogenous variable".into()));
    }
    let rows = frame.complete_rows(&spec.variables())?;
    let needed = spec.exogenous.len() + 2;
    if rows.len() < needed {
        return Err(ModelError::InsufficientData {
            needed,
            available: rows.len(),
        });
    }
    let design: Vec<Vec<f64>> = rows
        .iter()
        .map(|(_, r)| std::iter::once(1.0).chain(r[1..].iter().copied()).collect())
        .collect();
    let response: Vec<f64> = rows.iter().map(|(_, r)| r[0]).collect();
    let fit = ols(&design, &response)?;

    let coefficients = spec
        .exogenous
        .iter()
        .cloned()
        .zip(fit.coefficients[1..].iter().copied())
        .collect();
    Ok(FittedModel {
        spec: spec.clone(),
        parameters: Parameters::Mlr(MlrParams {
            intercept: fit.coefficients[0],
            coefficients,
        }),
        residual_sigma: fit.residual_sigma(),
        fit_range: fit_range(frame, rows[0].0, rows[rows.len() - 1].0, rows.len()),
    })
}

pub fn forecast(
    params: &MlrParams,
    spec: &ModelSpec,
    paths: &ExogPaths,
    horizon: usize,
) -> Result<Vec<f64>, ModelError> {
    if horizon == 0 {
        return Err(ModelError::InvalidHorizon);
    }
    let mut values = vec![params.intercept; horizon];
    for var in &spec.exogenous {
        let coef = *params
            .coefficients
            .get(var)
            .ok_or_else(|| ModelError::InvalidDocument(format!("no coefficient for `{var}`")))?;
        let path = path_prefix(paths, var, horizon)?;
        for (v, x) in values.iter_mut().zip(path) {
            *v += coef * x;
        }
    }
    Ok(values)
}
