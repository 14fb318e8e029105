//! Per-variable impact distributions for the coefficient view.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{FittedModel, ModelError, ModelKind, Parameters};
use crate::timeseries::TimeSeriesFrame;

/// Mean and spread of `coefficient * value` over the fit range. Families
/// without one scalar coefficient per variable report `available = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ImpactSummary {
    pub model: ModelKind,
    pub variable: String,
    pub mean_impact: Option<f64>,
    pub std_impact: Option<f64>,
    pub available: bool,
}

pub fn coefficient_impacts(model: &FittedModel, frame: &TimeSeriesFrame) -> Result<Vec<ImpactSummary>, ModelError> {
    for var in model.exogenous() {
        if !frame.has_variable(var) {
            return Err(ModelError::MissingVariable(var.clone()));
        }
    }
    let coefficients = match &model.parameters {
        Parameters::Mlr(p) => &p.coefficients,
        Parameters::Arimax(p) => &p.exog_coefficients,
        Parameters::Vecm(_) | Parameters::Lstm(_) => {
            return Ok(model
                .exogenous()
                .iter()
                .map(|v| ImpactSummary {
                    model: model.kind(),
                    variable: v.clone(),
                    mean_impact: None,
                    std_impact: None,
                    available: false,
                })
                .collect())
        }
    };

    let range = &model.fit_range;
    let in_range: Vec<usize> = frame
        .index()
        .iter()
        .enumerate()
        .filter(|(_, d)| **d >= range.start && **d <= range.end)
        .map(|(i, _)| i)
        .collect();

    let mut out = Vec::with_capacity(model.exogenous().len());
    for var in model.exogenous() {
        let coef = coefficients
            .get(var)
            .copied()
            .ok_or_else(|| ModelError::InvalidDocument(format!("no coefficient for `{var}`")))?;
        let column = frame.column(var)?;
        let impacts: Vec<f64> = in_range.iter().filter_map(|&i| column[i]).map(|x| coef * x).collect();
        if impacts.is_empty() {
            return Err(ModelError::InsufficientData { needed: 1, available: 0 });
        }
        let n = impacts.len() as f64;
        let mean = impacts.iter().sum::<f64>() / n;
        let var_pop = impacts.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out.push(ImpactSummary {
            model: model.kind(),
            variable: var.clone(),
            mean_impact: Some(mean),
            std_impact: Some(var_pop.sqrt()),
            available: true,
        });
    }
    out.sort_by(|a, b| {
        let key = |s: &ImpactSummary| s.mean_impact.map_or(0.0, f64::abs);
        key(b).total_cmp(&key(a))
    });
    Ok(out)
}
