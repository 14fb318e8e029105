//! ARIMA(p, d, q) with exogenous regressors.
//!
//! Estimation works in differenced space:
//!
//! 1. difference the target and every exogenous series `d` times;
//! 2. regress the differenced target on an intercept and the differenced
//!    exogenous series (OLS) to get the exogenous coefficients;
//! 3. fit an ARMA(p, q) with mean to the regression residuals by minimising
//!    the conditional sum of squares with a Nelder–Mead simplex, starting the
//!    innovation recursion from zeros and rejecting AR/MA polynomials with a
//!    root on or inside the unit circle.
//!
//! Forecasts run the ARMA recursion with future innovations set to zero and
//! integrate back to levels from the last observed values.

use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{fit_range, path_prefix, ExogPaths, FittedModel, Hyperparams, ModelError, ModelSpec, Parameters};
use crate::linalg::ols;
use crate::optim::{nelder_mead, SimplexOptions};
use crate::timeseries::TimeSeriesFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ArimaxOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl Default for ArimaxOrder {
    fn default() -> Self {
        Self { p: 1, d: 1, q: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaxParams {
    pub order: ArimaxOrder,
    /// Mean of the differenced target when all differenced regressors are zero.
    pub intercept: f64,
    pub exog_coefficients: BTreeMap<String, f64>,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    /// Last `p` ARMA deviations from the regression mean, oldest first.
    pub recent_deviations: Vec<f64>,
    /// Last `q` in-sample innovations, oldest first.
    pub recent_innovations: Vec<f64>,
    /// Last `d` target levels, oldest first.
    pub level_tail: Vec<f64>,
    /// Last `d` levels of each exogenous variable, oldest first.
    pub exog_tail: BTreeMap<String, Vec<f64>>,
}

/// `d`-fold first difference.
pub fn difference(series: &[f64], d: usize) -> Vec<f64> {
    let mut out = series.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    out
}

/// Undoes `d`-fold differencing of `diffs`, which continue a series ending in `tail`
/// (the last `d` levels).
pub fn integrate(diffs: &[f64], tail: &[f64]) -> Vec<f64> {
    let d = tail.len();
    // anchors[j] is the last value of the j-th difference of the tail.
    let anchors: Vec<f64> = (0..d)
        .map(|j| *difference(tail, j).last().expect("tail long enough"))
        .collect();
    let mut series = diffs.to_vec();
    for anchor in anchors.into_iter().rev() {
        let mut acc = anchor;
        for v in series.iter_mut() {
            acc += *v;
            *v = acc;
        }
    }
    series
}

/// Whether `1 - c_1 z - ... - c_k z^k` has all roots strictly outside the unit circle
/// (Schur–Cohn step-down recursion).
pub fn is_stationary(coeffs: &[f64]) -> bool {
    let mut a = coeffs.to_vec();
    while let Some(&r) = a.last() {
        if !r.is_finite() || r.abs() >= 1.0 {
            return false;
        }
        let k = a.len();
        let denom = 1.0 - r * r;
        let prev: Vec<f64> = (0..k - 1).map(|j| (a[j] + r * a[k - 2 - j]) / denom).collect();
        a = prev;
    }
    true
}

/// Conditional sum of squares of an ARMA with mean `mean` on `u`, returning
/// the innovations. The first `p` innovations are fixed at zero.
fn css_innovations(u: &[f64], ar: &[f64], ma: &[f64], mean: f64) -> (f64, Vec<f64>) {
    let p = ar.len();
    let mut e = vec![0.0; u.len()];
    let mut css = 0.0;
    for t in p..u.len() {
        let mut pred = 0.0;
        for (j, phi) in ar.iter().enumerate() {
            pred += phi * (u[t - j - 1] - mean);
        }
        for (j, theta) in ma.iter().enumerate() {
            if t > j {
                pred += theta * e[t - j - 1];
            }
        }
        e[t] = (u[t] - mean) - pred;
        css += e[t] * e[t];
    }
    (css, e)
}

fn order_of(spec: &ModelSpec) -> Result<ArimaxOrder, ModelError> {
    match spec.hyperparams {
        Hyperparams::Arimax(o) => Ok(o),
        _ => Err(ModelError::InvalidSpec("expected ARIMAX hyperparameters".into())),
    }
}

pub fn fit(frame: &TimeSeriesFrame, spec: &ModelSpec) -> Result<FittedModel, ModelError> {
    spec.validate(frame)?;
    let order = order_of(spec)?;
    let ArimaxOrder { p, d, q } = order;
    let k = spec.exogenous.len();

    let (start, rows) = frame.complete_suffix(&spec.variables())?;
    let n = rows.len();
    let needed = p + q + k + 6 + d;
    if n < needed {
        return Err(ModelError::InsufficientData { needed, available: n });
    }

    let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let target = column(0);
    let w = difference(&target, d);
    let z: Vec<Vec<f64>> = (1..=k).map(|c| difference(&column(c), d)).collect();

    let design: Vec<Vec<f64>> = (0..w.len())
        .map(|t| std::iter::once(1.0).chain(z.iter().map(|zi| zi[t])).collect())
        .collect();
    let reg = ols(&design, &w)?;
    let u = reg.residuals;

    let (ar, ma, mean) = if p + q == 0 {
        (Vec::new(), Vec::new(), u.iter().sum::<f64>() / u.len() as f64)
    } else {
        let objective = |theta: &[f64]| {
            let (ar, rest) = theta.split_at(p);
            let (ma, mean) = rest.split_at(q);
            let neg_ma: Vec<f64> = ma.iter().map(|t| -t).collect();
            if !is_stationary(ar) || !is_stationary(&neg_ma) {
                return f64::INFINITY;
            }
            css_innovations(&u, ar, ma, mean[0]).0
        };
        let opts = SimplexOptions::default();
        let mut result = nelder_mead(objective, &vec![0.0; p + q + 1], opts);
        // A restart from the best vertex recovers from a collapsed simplex.
        for _ in 0..2 {
            let again = nelder_mead(objective, &result.x, opts);
            let improved = again.value < result.value - 1e-12 * (1.0 + result.value.abs());
            result = again;
            if !improved && result.converged {
                break;
            }
        }
        if !result.converged || !result.value.is_finite() {
            return Err(ModelError::FitDidNotConverge {
                iterations: result.iterations,
            });
        }
        let (ar, rest) = result.x.split_at(p);
        (ar.to_vec(), rest[..q].to_vec(), rest[q])
    };

    let (css, innovations) = css_innovations(&u, &ar, &ma, mean);
    let scored = u.len() - p;
    let dof = scored.saturating_sub(p + q + 1 + k).max(1);
    let residual_sigma = (css / dof as f64).sqrt();

    let tail = |series: &[f64], len: usize| series[series.len() - len..].to_vec();
    let deviations: Vec<f64> = u.iter().map(|v| v - mean).collect();
    let params = ArimaxParams {
        order,
        intercept: reg.coefficients[0] + mean,
        exog_coefficients: spec
            .exogenous
            .iter()
            .cloned()
            .zip(reg.coefficients[1..].iter().copied())
            .collect(),
        recent_deviations: tail(&deviations, p),
        recent_innovations: tail(&innovations, q),
        level_tail: tail(&target, d),
        exog_tail: spec
            .exogenous
            .iter()
            .enumerate()
            .map(|(i, name)| (name.clone(), tail(&column(i + 1), d)))
            .collect(),
        ar,
        ma,
    };
    Ok(FittedModel {
        spec: spec.clone(),
        parameters: Parameters::Arimax(params),
        residual_sigma,
        fit_range: fit_range(frame, start, frame.len() - 1, n),
    })
}

pub fn forecast(
    params: &ArimaxParams,
    spec: &ModelSpec,
    paths: &ExogPaths,
    horizon: usize,
) -> Result<Vec<f64>, ModelError> {
    if horizon == 0 {
        return Err(ModelError::InvalidHorizon);
    }
    let ArimaxOrder { p, d, q } = params.order;
    if params.ar.len() != p
        || params.ma.len() != q
        || params.recent_deviations.len() != p
        || params.recent_innovations.len() != q
        || params.level_tail.len() != d
    {
        return Err(ModelError::InvalidDocument("ARIMAX state does not match its order".into()));
    }

    let mut mean_path = vec![params.intercept; horizon];
    for var in &spec.exogenous {
        let path = path_prefix(paths, var, horizon)?;
        let coef = params
            .exog_coefficients
            .get(var)
            .ok_or_else(|| ModelError::InvalidDocument(format!("no coefficient for `{var}`")))?;
        let hist = params
            .exog_tail
            .get(var)
            .filter(|t| t.len() == d)
            .ok_or_else(|| ModelError::InvalidDocument(format!("no history for `{var}`")))?;
        let full: Vec<f64> = hist.iter().chain(path).copied().collect();
        for (m, z) in mean_path.iter_mut().zip(difference(&full, d)) {
            *m += coef * z;
        }
    }

    let mut devs = params.recent_deviations.clone();
    let mut innov = params.recent_innovations.clone();
    let mut diffs = Vec::with_capacity(horizon);
    for mean in mean_path {
        let mut dev = 0.0;
        for (j, phi) in params.ar.iter().enumerate() {
            dev += phi * devs[devs.len() - 1 - j];
        }
        for (j, theta) in params.ma.iter().enumerate() {
            dev += theta * innov[innov.len() - 1 - j];
        }
        diffs.push(mean + dev);
        if p > 0 {
            devs.push(dev);
        }
        if q > 0 {
            innov.push(0.0);
        }
    }
    Ok(integrate(&diffs, &params.level_tail))
}
