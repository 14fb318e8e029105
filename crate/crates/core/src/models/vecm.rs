//! Rank-one vector error correction model, estimated in two steps:
//! the cointegrating vector from a levels regression of the target on the
//! other system variables, then each equation's loading, short-run lags and
//! intercept by OLS on the lagged error-correction term.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{fit_range, ExogPaths, FittedModel, Hyperparams, ModelError, ModelSpec, Parameters};
use crate::linalg::ols;
use crate::timeseries::TimeSeriesFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct VecmOrder {
    /// Lag order of the levels VAR; the model keeps `lag_order - 1` lagged differences.
    pub lag_order: usize,
}

impl Default for VecmOrder {
    fn default() -> Self {
        Self { lag_order: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecmParams {
    /// System variables; the target comes first.
    pub variables: Vec<String>,
    pub alpha: Vec<f64>,
    /// Cointegrating vector with the target entry fixed at 1.
    pub beta: Vec<f64>,
    /// Long-run equilibrium level of `beta' y`.
    pub coint_const: f64,
    /// Short-run matrices, `gamma[j][i][l]`: lag `j + 1`, equation `i`, variable `l`.
    pub gamma: Vec<Vec<Vec<f64>>>,
    pub intercept: Vec<f64>,
    /// Last `lag_order` observed level vectors, oldest first.
    pub recent_levels: Vec<Vec<f64>>,
}

impl VecmParams {
    /// Deviation of `levels` from the cointegrating equilibrium.
    pub fn spread(&self, levels: &[f64]) -> f64 {
        self.beta.iter().zip(levels).map(|(b, y)| b * y).sum::<f64>() - self.coint_const
    }

    fn step(&self, history: &[Vec<f64>]) -> Vec<f64> {
        let m = self.variables.len();
        let last = &history[history.len() - 1];
        let ect = self.spread(last);
        let mut next = last.clone();
        for i in 0..m {
            let mut delta = self.intercept[i] + self.alpha[i] * ect;
            for (j, g) in self.gamma.iter().enumerate() {
                let hi = &history[history.len() - 1 - j];
                let lo = &history[history.len() - 2 - j];
                for l in 0..m {
                    delta += g[i][l] * (hi[l] - lo[l]);
                }
            }
            next[i] += delta;
        }
        next
    }
}

pub fn fit(frame: &TimeSeriesFrame, spec: &ModelSpec) -> Result<FittedModel, ModelError> {
    spec.validate(frame)?;
    let Hyperparams::Vecm(VecmOrder { lag_order: k }) = spec.hyperparams else {
        return Err(ModelError::InvalidSpec("expected VECM hyperparameters".into()));
    };
    if k == 0 {
        return Err(ModelError::InvalidSpec("lag_order must be at least 1".into()));
    }
    let variables = spec.variables();
    let m = variables.len();
    if m < 2 {
        return Err(ModelError::InvalidSystem);
    }
    let (start, levels) = frame.complete_suffix(&variables)?;
    let n = levels.len();
    let needed = (k + 2) * m + 6;
    if n < needed {
        return Err(ModelError::InsufficientData { needed, available: n });
    }

    // Step 1: levels regression of the target on the rest of the system.
    let design: Vec<Vec<f64>> = levels
        .iter()
        .map(|r| std::iter::once(1.0).chain(r[1..].iter().copied()).collect())
        .collect();
    let target: Vec<f64> = levels.iter().map(|r| r[0]).collect();
    let step1 = ols(&design, &target)?;
    let coint_const = step1.coefficients[0];
    let beta: Vec<f64> = std::iter::once(1.0)
        .chain(step1.coefficients[1..].iter().map(|g| -g))
        .collect();
    let ect: Vec<f64> = levels
        .iter()
        .map(|r| beta.iter().zip(r).map(|(b, y)| b * y).sum::<f64>() - coint_const)
        .collect();

    // Step 2: equation-by-equation OLS on differences.
    let diffs: Vec<Vec<f64>> = levels
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect())
        .collect();
    // diffs[t - 1] is the change from level t - 1 to level t.
    let first = k; // first level index whose change has k - 1 lagged changes
    let design: Vec<Vec<f64>> = (first..n)
        .map(|t| {
            let mut row = vec![1.0, ect[t - 1]];
            for j in 1..k {
                row.extend_from_slice(&diffs[t - 1 - j]);
            }
            row
        })
        .collect();

    let mut alpha = Vec::with_capacity(m);
    let mut intercept = Vec::with_capacity(m);
    let mut gamma = vec![vec![vec![0.0; m]; m]; k - 1];
    let mut residual_sigma = 0.0;
    for i in 0..m {
        let response: Vec<f64> = (first..n).map(|t| diffs[t - 1][i]).collect();
        let eq = ols(&design, &response)?;
        intercept.push(eq.coefficients[0]);
        alpha.push(eq.coefficients[1]);
        for (j, g) in gamma.iter_mut().enumerate() {
            g[i].copy_from_slice(&eq.coefficients[2 + j * m..2 + (j + 1) * m]);
        }
        if i == 0 {
            residual_sigma = eq.residual_sigma();
        }
    }

    Ok(FittedModel {
        spec: spec.clone(),
        parameters: Parameters::Vecm(VecmParams {
            variables,
            alpha,
            beta,
            coint_const,
            gamma,
            intercept,
            recent_levels: levels[n - k..].to_vec(),
        }),
        residual_sigma,
        fit_range: fit_range(frame, start, frame.len() - 1, n),
    })
}

/// Iterates the system one step at a time. After each step, every variable with
/// a fixed path is overwritten with its fixed value; the target path is returned.
pub fn forecast(params: &VecmParams, fixed: &ExogPaths, horizon: usize) -> Result<Vec<f64>, ModelError> {
    Ok(forecast_levels(params, fixed, horizon)?.into_iter().map(|row| row[0]).collect())
}

/// Forecast levels of every system variable, one row per step, with the
/// variables in `fixed` overwritten by their paths after each step.
pub fn forecast_levels(params: &VecmParams, fixed: &ExogPaths, horizon: usize) -> Result<Vec<Vec<f64>>, ModelError> {
    if horizon == 0 {
        return Err(ModelError::InvalidHorizon);
    }
    let m = params.variables.len();
    if params.alpha.len() != m
        || params.beta.len() != m
        || params.intercept.len() != m
        || params.recent_levels.len() != params.gamma.len() + 1
        || params.recent_levels.iter().any(|r| r.len() != m)
    {
        return Err(ModelError::InvalidDocument("VECM state is inconsistent".into()));
    }
    let mut overrides = Vec::new();
    for (name, path) in fixed {
        let Some(pos) = params.variables.iter().position(|v| v == name) else {
            return Err(ModelError::MissingVariable(name.clone()));
        };
        if pos == 0 {
            return Err(ModelError::CannotFixTarget(name.clone()));
        }
        if path.len() < horizon || path[..horizon].iter().any(|v| !v.is_finite()) {
            return Err(ModelError::MissingExogPath(name.clone()));
        }
        overrides.push((pos, path));
    }

    let mut history = params.recent_levels.clone();
    let mut out = Vec::with_capacity(horizon);
    for s in 0..horizon {
        let mut next = params.step(&history);
        for (pos, path) in &overrides {
            next[*pos] = path[s];
        }
        out.push(next.clone());
        history.remove(0);
        history.push(next);
    }
    Ok(out)
}
