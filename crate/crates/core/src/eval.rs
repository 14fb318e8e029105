//! Walk-forward backtesting, error metrics and model ranking.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{fit, ExogPaths, ModelError, ModelKind, ModelSpec};
use crate::timeseries::TimeSeriesFrame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {actual} actuals vs {predicted} predictions")]
    ShapeError { actual: usize, predicted: usize },
    #[error("nothing to rank")]
    EmptyInput,
    #[error("scorecards use different fold counts")]
    FoldMismatch,
    #[error("need at least 2 folds and a horizon of at least 1")]
    InvalidFolds,
    #[error("{needed} rows needed for {folds} folds, frame has {available}")]
    InsufficientData { needed: usize, folds: usize, available: usize },
    #[error("missing actual value for `{variable}` at row {row}")]
    MissingActual { variable: String, row: usize },
    #[error("fold {fold}: {source}")]
    Model {
        fold: usize,
        #[source]
        source: ModelError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Rmse,
    Mae,
    Mape,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rmse" => Ok(Metric::Rmse),
            "mae" => Ok(Metric::Mae),
            "mape" => Ok(Metric::Mape),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Rmse => "rmse",
            Metric::Mae => "mae",
            Metric::Mape => "mape",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// Percent; `None` when every actual value is zero.
    pub mape: Option<f64>,
    /// Points left out of MAPE because the actual value is zero.
    pub mape_skipped: usize,
}

pub fn metrics(actual: &[f64], predicted: &[f64]) -> Result<Metrics, EvalError> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(EvalError::ShapeError {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    let n = actual.len() as f64;
    let errors: Vec<f64> = predicted.iter().zip(actual).map(|(p, a)| p - a).collect();
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let ratios: Vec<f64> = errors
        .iter()
        .zip(actual)
        .filter(|(_, a)| **a != 0.0)
        .map(|(e, a)| (e / a).abs())
        .collect();
    let mape_skipped = actual.len() - ratios.len();
    let mape = (!ratios.is_empty()).then(|| 100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64);
    Ok(Metrics {
        rmse,
        mae,
        mape,
        mape_skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ModelScorecard {
    pub model_kind: ModelKind,
    pub rmse: f64,
    pub mae: f64,
    pub mape: Option<f64>,
    pub mape_skipped: usize,
    pub n_folds: usize,
    /// RMSE of each fold's forecast, in fold order.
    pub per_fold_errors: Vec<f64>,
}

impl ModelScorecard {
    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Rmse => Some(self.rmse),
            Metric::Mae => Some(self.mae),
            Metric::Mape => self.mape,
        }
    }
}

struct FoldResult {
    actual: Vec<f64>,
    predicted: Vec<f64>,
}

/// Expanding-window backtest: fold `j` trains on the first
/// `n - n_folds - horizon + 1 + j` rows and forecasts the next `horizon`
/// rows given their true exogenous values.
pub fn walk_forward_backtest(
    spec: &ModelSpec,
    frame: &TimeSeriesFrame,
    n_folds: usize,
    horizon: usize,
) -> Result<ModelScorecard, EvalError> {
    if n_folds < 2 || horizon == 0 {
        return Err(EvalError::InvalidFolds);
    }
    let n = frame.len();
    let needed = n_folds + horizon;
    if n < needed {
        return Err(EvalError::InsufficientData {
            needed,
            folds: n_folds,
            available: n,
        });
    }
    let first_train = n - n_folds - horizon + 1;
    let target = frame.column(&spec.target).map_err(|e| EvalError::Model {
        fold: 0,
        source: e.into(),
    })?;
    let exog_columns = spec
        .exogenous
        .iter()
        .map(|v| frame.column(v).map(|c| (v.clone(), c)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| EvalError::Model {
            fold: 0,
            source: e.into(),
        })?;

    let folds: Vec<FoldResult> = (0..n_folds)
        .into_par_iter()
        .map(|fold| {
            let train_len = first_train + fold;
            let rows = train_len..train_len + horizon;
            let observed = |variable: &str, column: &[Option<f64>]| {
                rows.clone()
                    .map(|r| {
                        column[r].ok_or_else(|| EvalError::MissingActual {
                            variable: variable.to_string(),
                            row: r,
                        })
                    })
                    .collect::<Result<Vec<f64>, _>>()
            };
            let actual = observed(&spec.target, &target)?;
            let paths = exog_columns
                .iter()
                .map(|(v, c)| observed(v, c).map(|p| (v.clone(), p)))
                .collect::<Result<ExogPaths, _>>()?;
            let model = fit(&frame.head(train_len), spec).map_err(|source| EvalError::Model { fold, source })?;
            let predicted = model
                .forecast(&paths, horizon)
                .map_err(|source| EvalError::Model { fold, source })?
                .values;
            Ok(FoldResult { actual, predicted })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let per_fold_errors = folds
        .iter()
        .map(|f| metrics(&f.actual, &f.predicted).map(|m| m.rmse))
        .collect::<Result<Vec<_>, _>>()?;
    let actual: Vec<f64> = folds.iter().flat_map(|f| f.actual.iter().copied()).collect();
    let predicted: Vec<f64> = folds.iter().flat_map(|f| f.predicted.iter().copied()).collect();
    let m = metrics(&actual, &predicted)?;
    Ok(ModelScorecard {
        model_kind: spec.kind(),
        rmse: m.rmse,
        mae: m.mae,
        mape: m.mape,
        mape_skipped: m.mape_skipped,
        n_folds,
        per_fold_errors,
    })
}

/// Ascending by `metric`; ties (and undefined MAPE, which sorts last) fall
/// back to the fixed family order MLR < ARIMAX < VECM < LSTM.
pub fn rank_models(cards: &[ModelScorecard], metric: Metric) -> Result<Vec<ModelScorecard>, EvalError> {
    let first = cards.first().ok_or(EvalError::EmptyInput)?;
    if cards.iter().any(|c| c.n_folds != first.n_folds) {
        return Err(EvalError::FoldMismatch);
    }
    let mut ranked = cards.to_vec();
    ranked.sort_by(|a, b| {
        let key = |c: &ModelScorecard| c.metric(metric).unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.model_kind.cmp(&b.model_kind))
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ArimaxOrder, Hyperparams};
    use crate::testutil::frame_from_columns;
    use proptest::prelude::*;

    fn card(kind: ModelKind, rmse: f64) -> ModelScorecard {
        ModelScorecard {
            model_kind: kind,
            rmse,
            mae: rmse,
            mape: Some(rmse),
            mape_skipped: 0,
            n_folds: 3,
            per_fold_errors: vec![rmse; 3],
        }
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m.rmse, m.mae, m.mape), (0.0, 0.0, Some(0.0)));

        let m = metrics(&[2.0, 4.0], &[1.0, 5.0]).unwrap();
        assert_eq!((m.rmse, m.mae), (1.0, 1.0));
        assert!((m.mape.unwrap() - 37.5).abs() < 1e-12);

        let m = metrics(&[0.0], &[1.0]).unwrap();
        assert_eq!(m.rmse, 1.0);
        assert_eq!(m.mape, None);
        assert_eq!(m.mape_skipped, 1);

        assert!(matches!(metrics(&[1.0], &[1.0, 2.0]), Err(EvalError::ShapeError { .. })));
    }

    #[test]
    fn ranking_examples() {
        let ranked = rank_models(
            &[card(ModelKind::Mlr, 3.0), card(ModelKind::Arimax, 1.0), card(ModelKind::Vecm, 2.0)],
            Metric::Rmse,
        )
        .unwrap();
        let rmses: Vec<f64> = ranked.iter().map(|c| c.rmse).collect();
        assert_eq!(rmses, [1.0, 2.0, 3.0]);

        let ranked = rank_models(&[card(ModelKind::Lstm, 1.0), card(ModelKind::Mlr, 1.0)], Metric::Rmse).unwrap();
        assert_eq!(ranked[0].model_kind, ModelKind::Mlr);

        assert_eq!(rank_models(&[], Metric::Rmse).unwrap_err(), EvalError::EmptyInput);

        let mut odd = card(ModelKind::Vecm, 1.0);
        odd.n_folds = 4;
        assert_eq!(
            rank_models(&[card(ModelKind::Mlr, 1.0), odd], Metric::Rmse).unwrap_err(),
            EvalError::FoldMismatch
        );
    }

    #[test]
    fn perfect_linear_model_scores_zero() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.9).sin() * 5.0).collect();
        let y: Vec<f64> = x.iter().map(|x| 1.0 + 2.0 * x).collect();
        let f = frame_from_columns(&[("y", y), ("x", x)]);
        let card = walk_forward_backtest(&ModelSpec::new("y", &["x"], Hyperparams::Mlr), &f, 5, 1).unwrap();
        assert!(card.rmse < 1e-9);
        assert_eq!(card.n_folds, 5);
        assert_eq!(card.per_fold_errors.len(), 5);
    }

    #[test]
    fn random_walk_on_constant_scores_zero() {
        let f = frame_from_columns(&[("y", vec![5.0; 30])]);
        let spec = ModelSpec::new("y", &[], Hyperparams::Arimax(ArimaxOrder { p: 0, d: 1, q: 0 }));
        let card = walk_forward_backtest(&spec, &f, 4, 1).unwrap();
        assert_eq!(card.rmse, 0.0);
    }

    #[test]
    fn multi_step_horizon() {
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 3.0 - x).collect();
        let f = frame_from_columns(&[("y", y), ("x", x)]);
        let card = walk_forward_backtest(&ModelSpec::new("y", &["x"], Hyperparams::Mlr), &f, 3, 4).unwrap();
        assert!(card.rmse < 1e-9);
    }

    #[test]
    fn too_few_rows() {
        let f = frame_from_columns(&[("y", vec![1.0; 3]), ("x", vec![1.0; 3])]);
        let err = walk_forward_backtest(&ModelSpec::new("y", &["x"], Hyperparams::Mlr), &f, 3, 1).unwrap_err();
        assert!(matches!(err, EvalError::InsufficientData { .. } | EvalError::Model { .. }));
        assert_eq!(
            walk_forward_backtest(&ModelSpec::new("y", &["x"], Hyperparams::Mlr), &f, 1, 1).unwrap_err(),
            EvalError::InvalidFolds
        );
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..30)) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = metrics(&a, &p).unwrap();
            prop_assert!(m.rmse >= m.mae - 1e-12 * (1.0 + m.mae));
        }

        #[test]
        fn ranking_is_a_sorted_permutation(rmses in prop::collection::vec(0.0..5.0f64, 1..4)) {
            let cards: Vec<ModelScorecard> = rmses
                .iter()
                .zip(ModelKind::ALL.iter().rev())
                .map(|(r, k)| card(*k, (r * 2.0).round() / 2.0))
                .collect();
            let ranked = rank_models(&cards, Metric::Rmse).unwrap();
            prop_assert_eq!(ranked.len(), cards.len());
            for c in &cards {
                prop_assert!(ranked.contains(c));
            }
            for w in ranked.windows(2) {
                prop_assert!(w[0].rmse < w[1].rmse || (w[0].rmse == w[1].rmse && w[0].model_kind < w[1].model_kind));
            }
        }
    }
}
