//! What-if scenarios: future exogenous paths, baseline vs. perturbed forecasts,
//! and the append-only history of runs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ExogPaths, FittedModel, Forecast, ModelError, ModelKind};
use crate::timeseries::{FrameError, TimeSeriesFrame};

pub const DEFAULT_FORWARD_WINDOW: usize = 1;
pub const HISTORY_FILE: &str = "history.ndjson";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("horizon must be at least 1")]
    InvalidHorizon,
    #[error("forward_window must be at least 1")]
    InvalidForwardWindow,
    #[error("model_selection is empty")]
    EmptySelection,
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("`{0}` is the target and cannot be perturbed")]
    PerturbsTarget(String),
    #[error("perturbation of `{variable}` at step {step} is outside the horizon")]
    StepOutOfRange { variable: String, step: usize },
    #[error("perturbation of `{variable}` repeats step {step}")]
    DuplicateStep { variable: String, step: usize },
    #[error("perturbation of `{variable}` at step {step} is not finite")]
    NonFiniteValue { variable: String, step: usize },
    #[error("`{0}` has no observed values")]
    EmptySeries(String),
    #[error("route mismatch: scenario is for `{scenario}`, requested `{requested}`")]
    RouteMismatch { scenario: String, requested: String },
    #[error("no fitted {0} model")]
    ModelNotFitted(ModelKind),
    #[error("{0} is not part of this run")]
    ModelNotInRun(ModelKind),
    #[error("{kind} forecast failed: {source}")]
    Model {
        kind: ModelKind,
        #[source]
        source: ModelError,
    },
    #[error("history log: {0}")]
    History(String),
}

impl ScenarioError {
    /// JSON path of the offending scenario field, for request validation errors.
    pub fn field(&self) -> Option<String> {
        Some(match self {
            ScenarioError::InvalidHorizon => "horizon".into(),
            ScenarioError::InvalidForwardWindow => "forward_window".into(),
            ScenarioError::EmptySelection => "model_selection".into(),
            ScenarioError::RouteMismatch { .. } => "route_id".into(),
            ScenarioError::UnknownVariable(v)
            | ScenarioError::PerturbsTarget(v)
            | ScenarioError::EmptySeries(v) => format!("perturbations.{v}"),
            ScenarioError::StepOutOfRange { variable, .. } | ScenarioError::DuplicateStep { variable, .. } => {
                format!("perturbations.{variable}.step")
            }
            ScenarioError::NonFiniteValue { variable, .. } => format!("perturbations.{variable}.value"),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    /// 0-based future step.
    pub step: usize,
    /// New value in the variable's own units.
    pub value: f64,
}

fn default_forward_window() -> usize {
    DEFAULT_FORWARD_WINDOW
}

fn all_models() -> BTreeSet<ModelKind> {
    ModelKind::ALL.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub route_id: String,
    pub horizon: usize,
    #[serde(default = "default_forward_window")]
    pub forward_window: usize,
    #[serde(default)]
    pub perturbations: BTreeMap<String, Vec<Perturbation>>,
    #[serde(default = "all_models")]
    pub model_selection: BTreeSet<ModelKind>,
}

impl Scenario {
    pub fn new(route_id: impl Into<String>, horizon: usize) -> Self {
        Self {
            route_id: route_id.into(),
            horizon,
            forward_window: DEFAULT_FORWARD_WINDOW,
            perturbations: BTreeMap::new(),
            model_selection: all_models(),
        }
    }

    pub fn with_models(mut self, kinds: &[ModelKind]) -> Self {
        self.model_selection = kinds.iter().copied().collect();
        self
    }

    pub fn perturb(mut self, variable: &str, step: usize, value: f64) -> Self {
        self.perturbations
            .entry(variable.to_string())
            .or_default()
            .push(Perturbation { step, value });
        self
    }

    /// Structural checks against the route's frame and target.
    pub fn validate(&self, frame: &TimeSeriesFrame, target: &str) -> Result<(), ScenarioError> {
        if self.horizon == 0 {
            return Err(ScenarioError::InvalidHorizon);
        }
        if self.forward_window == 0 {
            return Err(ScenarioError::InvalidForwardWindow);
        }
        if self.model_selection.is_empty() {
            return Err(ScenarioError::EmptySelection);
        }
        for (variable, list) in &self.perturbations {
            if variable == target {
                return Err(ScenarioError::PerturbsTarget(variable.clone()));
            }
            match frame.last_observed(variable) {
                Err(FrameError::UnknownVariable(_)) => {
                    return Err(ScenarioError::UnknownVariable(variable.clone()))
                }
                Err(_) => return Err(ScenarioError::EmptySeries(variable.clone())),
                Ok(_) => {}
            }
            let mut steps = HashSet::new();
            for p in list {
                if p.step >= self.horizon {
                    return Err(ScenarioError::StepOutOfRange {
                        variable: variable.clone(),
                        step: p.step,
                    });
                }
                if !steps.insert(p.step) {
                    return Err(ScenarioError::DuplicateStep {
                        variable: variable.clone(),
                        step: p.step,
                    });
                }
                if !p.value.is_finite() {
                    return Err(ScenarioError::NonFiniteValue {
                        variable: variable.clone(),
                        step: p.step,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Future paths for `exog_vars`: each variable's last observed value held
/// over the horizon, then every perturbation written at its step and held
/// until the next perturbation of the same variable.
pub fn build_exog_paths(
    frame: &TimeSeriesFrame,
    scenario: &Scenario,
    exog_vars: &[String],
) -> Result<ExogPaths, ScenarioError> {
    paths_with(frame, scenario, exog_vars, true)
}

/// The unperturbed paths a baseline forecast uses.
pub fn default_exog_paths(
    frame: &TimeSeriesFrame,
    scenario: &Scenario,
    exog_vars: &[String],
) -> Result<ExogPaths, ScenarioError> {
    paths_with(frame, scenario, exog_vars, false)
}

fn paths_with(
    frame: &TimeSeriesFrame,
    scenario: &Scenario,
    exog_vars: &[String],
    perturbed: bool,
) -> Result<ExogPaths, ScenarioError> {
    let mut out = ExogPaths::new();
    for var in exog_vars {
        let last = frame.last_observed(var).map_err(|e| match e {
            FrameError::UnknownVariable(v) => ScenarioError::UnknownVariable(v),
            _ => ScenarioError::EmptySeries(var.clone()),
        })?;
        let mut path = vec![last; scenario.horizon];
        if perturbed {
            if let Some(list) = scenario.perturbations.get(var) {
                let mut sorted = list.clone();
                sorted.sort_by_key(|p| p.step);
                for p in sorted.iter().filter(|p| p.step < scenario.horizon) {
                    path[p.step..].fill(p.value);
                }
            }
        }
        out.insert(var.clone(), path);
    }
    Ok(out)
}

/// Baseline and what-if forecasts of one scenario, before it is logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub baseline: BTreeMap<ModelKind, Forecast>,
    pub whatif: BTreeMap<ModelKind, Forecast>,
    pub diff: BTreeMap<ModelKind, Vec<f64>>,
    pub mean_diff_per_model: BTreeMap<ModelKind, f64>,
    pub overall_mean_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ScenarioRun {
    pub run_id: u64,
    pub created_at: DateTime<Utc>,
    pub scenario: Scenario,
    pub baseline: BTreeMap<ModelKind, Forecast>,
    pub whatif: BTreeMap<ModelKind, Forecast>,
    pub diff: BTreeMap<ModelKind, Vec<f64>>,
    pub mean_diff_per_model: BTreeMap<ModelKind, f64>,
    pub overall_mean_diff: f64,
}

impl ScenarioRun {
    fn from_outcome(run_id: u64, created_at: DateTime<Utc>, o: ScenarioOutcome) -> Self {
        Self {
            run_id,
            created_at,
            scenario: o.scenario,
            baseline: o.baseline,
            whatif: o.whatif,
            diff: o.diff,
            mean_diff_per_model: o.mean_diff_per_model,
            overall_mean_diff: o.overall_mean_diff,
        }
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            run_id: self.run_id,
            created_at: self.created_at,
            route_id: self.scenario.route_id.clone(),
            horizon: self.scenario.horizon,
            model_selection: self.scenario.model_selection.clone(),
            mean_diff_per_model: self.mean_diff_per_model.clone(),
            overall_mean_diff: self.overall_mean_diff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RunSummary {
    pub run_id: u64,
    pub created_at: DateTime<Utc>,
    pub route_id: String,
    pub horizon: usize,
    pub model_selection: BTreeSet<ModelKind>,
    pub mean_diff_per_model: BTreeMap<ModelKind, f64>,
    pub overall_mean_diff: f64,
}

/// Runs the baseline and the what-if forecast for every selected model.
/// Both go through the same code path; only the exogenous paths differ.
pub fn evaluate_scenario(
    models: &BTreeMap<ModelKind, FittedModel>,
    frame: &TimeSeriesFrame,
    scenario: &Scenario,
) -> Result<ScenarioOutcome, ScenarioError> {
    let selected = scenario
        .model_selection
        .iter()
        .map(|k| models.get(k).ok_or(ScenarioError::ModelNotFitted(*k)))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(first) = selected.first() {
        scenario.validate(frame, &first.spec.target)?;
    } else {
        return Err(ScenarioError::EmptySelection);
    }

    let mut outcome = ScenarioOutcome {
        scenario: scenario.clone(),
        baseline: BTreeMap::new(),
        whatif: BTreeMap::new(),
        diff: BTreeMap::new(),
        mean_diff_per_model: BTreeMap::new(),
        overall_mean_diff: 0.0,
    };
    for model in selected {
        let kind = model.kind();
        if scenario.perturbations.contains_key(&model.spec.target) {
            return Err(ScenarioError::PerturbsTarget(model.spec.target.clone()));
        }
        let forecast = |paths: &ExogPaths| {
            model
                .forecast(paths, scenario.horizon)
                .map_err(|source| ScenarioError::Model { kind, source })
        };
        let base = forecast(&default_exog_paths(frame, scenario, model.exogenous())?)?;
        let what = forecast(&build_exog_paths(frame, scenario, model.exogenous())?)?;
        let diff: Vec<f64> = what.values.iter().zip(&base.values).map(|(w, b)| w - b).collect();
        let mean = diff.iter().sum::<f64>() / diff.len() as f64;
        outcome.mean_diff_per_model.insert(kind, mean);
        outcome.diff.insert(kind, diff);
        outcome.baseline.insert(kind, base);
        outcome.whatif.insert(kind, what);
    }
    outcome.overall_mean_diff =
        outcome.mean_diff_per_model.values().sum::<f64>() / outcome.mean_diff_per_model.len() as f64;
    Ok(outcome)
}

/// Evaluates a scenario and appends the run to `store`.
pub fn run_whatif(
    store: &HistoryStore,
    models: &BTreeMap<ModelKind, FittedModel>,
    frame: &TimeSeriesFrame,
    scenario: &Scenario,
) -> Result<ScenarioRun, ScenarioError> {
    let outcome = evaluate_scenario(models, frame, scenario)?;
    store.append(outcome)
}

/// One model's what-if minus baseline curve.
pub fn diff_curve(run: &ScenarioRun, model: ModelKind) -> Result<&[f64], ScenarioError> {
    run.diff
        .get(&model)
        .map(Vec::as_slice)
        .ok_or(ScenarioError::ModelNotInRun(model))
}

struct HistoryInner {
    runs: Vec<ScenarioRun>,
    log: Option<File>,
}

/// Append-only run log. Appends are serialized by one lock, which makes
/// run ids dense and strictly increasing; an optional newline-delimited
/// JSON file receives every run before it becomes visible.
pub struct HistoryStore {
    inner: Mutex<HistoryInner>,
    path: Option<PathBuf>,
}

impl HistoryStore {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(HistoryInner {
                runs: Vec::new(),
                log: None,
            }),
            path: None,
        }
    }

    /// Opens (or creates) a log file, replaying any runs already in it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref().to_path_buf();
        let err = |e: std::io::Error| ScenarioError::History(format!("{}: {e}", path.display()));
        let mut runs: Vec<ScenarioRun> = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(err)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let run: ScenarioRun = serde_json::from_str(&line)
                    .map_err(|e| ScenarioError::History(format!("line {}: {e}", i + 1)))?;
                let expected = runs.last().map_or(1, |r| r.run_id + 1);
                if run.run_id != expected {
                    return Err(ScenarioError::History(format!(
                        "line {}: run_id {} where {expected} was expected",
                        i + 1,
                        run.run_id
                    )));
                }
                runs.push(run);
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&path).map_err(err)?;
        Ok(Self {
            inner: Mutex::new(HistoryInner { runs, log: Some(log) }),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, outcome: ScenarioOutcome) -> Result<ScenarioRun, ScenarioError> {
        let mut inner = self.inner.lock().expect("history lock poisoned");
        let run_id = inner.runs.last().map_or(1, |r| r.run_id + 1);
        let run = ScenarioRun::from_outcome(run_id, Utc::now(), outcome);
        if let Some(log) = inner.log.as_mut() {
            let mut line = serde_json::to_vec(&run).map_err(|e| ScenarioError::History(e.to_string()))?;
            line.push(b'\n');
            log.write_all(&line)
                .and_then(|_| log.flush())
                .map_err(|e| ScenarioError::History(e.to_string()))?;
        }
        inner.runs.push(run.clone());
        Ok(run)
    }

    /// Full runs in id order, optionally restricted to one route.
    pub fn runs(&self, route_id: Option<&str>) -> Vec<ScenarioRun> {
        let inner = self.inner.lock().expect("history lock poisoned");
        inner
            .runs
            .iter()
            .filter(|r| route_id.is_none_or(|id| r.scenario.route_id == id))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("history lock poisoned").runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Summaries of the logged runs in id order.
pub fn history_list(store: &HistoryStore, route_id: Option<&str>) -> Vec<RunSummary> {
    store.runs(route_id).iter().map(ScenarioRun::summary).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Hyperparams, MlrParams, ModelSpec, Parameters};
    use crate::testutil::{frame_from_columns, hand_model};
    use proptest::prelude::*;

    fn frame() -> TimeSeriesFrame {
        frame_from_columns(&[
            ("rate", vec![10.0, 11.0, 12.0, 13.0]),
            ("loading", vec![20000.0, 21000.0, 19000.0, 20500.0]),
            ("x", vec![7.0, 8.0, 9.0, 10.0]),
        ])
    }

    fn mlr_models(coef: f64) -> BTreeMap<ModelKind, FittedModel> {
        let m = hand_model(
            ModelSpec::new("rate", &["loading"], Hyperparams::Mlr),
            Parameters::Mlr(MlrParams {
                intercept: 5.0,
                coefficients: [("loading".to_string(), coef)].into(),
            }),
        );
        [(ModelKind::Mlr, m)].into()
    }

    #[test]
    fn default_path_holds_last_value() {
        let s = Scenario::new("C3", 3);
        let p = build_exog_paths(&frame(), &s, &["x".into()]).unwrap();
        assert_eq!(p["x"], vec![10.0, 10.0, 10.0]);
    }

    #[test]
    fn perturbation_holds_forward() {
        let s = Scenario::new("C3", 3).perturb("x", 0, 8.0);
        assert_eq!(build_exog_paths(&frame(), &s, &["x".into()]).unwrap()["x"], vec![8.0; 3]);
        let s = Scenario::new("C3", 3).perturb("x", 0, 8.0).perturb("x", 2, 12.0);
        assert_eq!(build_exog_paths(&frame(), &s, &["x".into()]).unwrap()["x"], vec![8.0, 8.0, 12.0]);
        let s = Scenario::new("C3", 3).perturb("x", 1, 3.0);
        assert_eq!(build_exog_paths(&frame(), &s, &["x".into()]).unwrap()["x"], vec![10.0, 3.0, 3.0]);
    }

    #[test]
    fn empty_history_variable() {
        let f = TimeSeriesFrame::new(
            crate::testutil::weekly_dates(2),
            vec!["rate".into(), "x".into()],
            vec![vec![Some(1.0), None], vec![Some(2.0), None]],
        )
        .unwrap();
        let s = Scenario::new("C3", 2);
        assert!(matches!(
            build_exog_paths(&f, &s, &["x".into()]),
            Err(ScenarioError::EmptySeries(_))
        ));
        let s = s.perturb("x", 0, 1.0);
        assert!(matches!(s.validate(&f, "rate"), Err(ScenarioError::EmptySeries(_))));
    }

    #[test]
    fn validation_errors_name_fields() {
        let f = frame();
        let bad = Scenario::new("C3", 2).perturb("rate", 0, 1.0);
        let err = bad.validate(&f, "rate").unwrap_err();
        assert!(matches!(err, ScenarioError::PerturbsTarget(_)));
        assert_eq!(err.field().unwrap(), "perturbations.rate");

        let bad = Scenario::new("C3", 2).perturb("x", 2, 1.0);
        assert!(matches!(bad.validate(&f, "rate"), Err(ScenarioError::StepOutOfRange { step: 2, .. })));
        let bad = Scenario::new("C3", 2).perturb("x", 1, 1.0).perturb("x", 1, 2.0);
        assert!(matches!(bad.validate(&f, "rate"), Err(ScenarioError::DuplicateStep { step: 1, .. })));
        let bad = Scenario::new("C3", 2).perturb("nope", 0, 1.0);
        assert!(matches!(bad.validate(&f, "rate"), Err(ScenarioError::UnknownVariable(_))));
        assert!(matches!(Scenario::new("C3", 0).validate(&f, "rate"), Err(ScenarioError::InvalidHorizon)));
    }

    #[test]
    fn scenario_json_defaults() {
        let s: Scenario = serde_json::from_str(r#"{"route_id":"C3","horizon":4}"#).unwrap();
        assert_eq!(s.forward_window, 1);
        assert_eq!(s.model_selection.len(), 4);
        assert!(s.perturbations.is_empty());
        let err = serde_json::from_str::<Scenario>(r#"{"horizon":4,"bogus":1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn empty_perturbations_give_zero_diff() {
        let store = HistoryStore::in_memory();
        let s = Scenario::new("C3", 4).with_models(&[ModelKind::Mlr]);
        let run = run_whatif(&store, &mlr_models(0.001), &frame(), &s).unwrap();
        assert_eq!(run.run_id, 1);
        assert_eq!(diff_curve(&run, ModelKind::Mlr).unwrap(), &[0.0; 4]);
        assert_eq!(run.overall_mean_diff, 0.0);
    }

    #[test]
    fn loading_drop_of_2000_moves_rate_by_minus_two() {
        let store = HistoryStore::in_memory();
        let last = frame().last_observed("loading").unwrap();
        let s = Scenario::new("C3", 4)
            .with_models(&[ModelKind::Mlr])
            .perturb("loading", 0, last - 2000.0);
        let run = run_whatif(&store, &mlr_models(0.001), &frame(), &s).unwrap();
        for d in diff_curve(&run, ModelKind::Mlr).unwrap() {
            assert!((d + 2.0).abs() < 1e-9, "{d}");
        }
        assert!((run.overall_mean_diff + 2.0).abs() < 1e-9);
        assert!(matches!(
            diff_curve(&run, ModelKind::Arimax),
            Err(ScenarioError::ModelNotInRun(ModelKind::Arimax))
        ));
    }

    #[test]
    fn unfitted_selection() {
        let s = Scenario::new("C3", 2).with_models(&[ModelKind::Vecm]);
        let err = evaluate_scenario(&mlr_models(1.0), &frame(), &s).unwrap_err();
        assert!(matches!(err, ScenarioError::ModelNotFitted(ModelKind::Vecm)));
    }

    #[test]
    fn history_list_order_and_filter() {
        let store = HistoryStore::in_memory();
        assert!(history_list(&store, None).is_empty());
        let models = mlr_models(1.0);
        let f = frame();
        run_whatif(&store, &models, &f, &Scenario::new("C3", 1).with_models(&[ModelKind::Mlr])).unwrap();
        run_whatif(&store, &models, &f, &Scenario::new("C5", 1).with_models(&[ModelKind::Mlr])).unwrap();
        let ids: Vec<u64> = history_list(&store, None).iter().map(|r| r.run_id).collect();
        assert_eq!(ids, [1, 2]);
        assert_eq!(history_list(&store, Some("C5"))[0].run_id, 2);
        assert!(history_list(&store, Some("nope")).is_empty());
    }

    #[test]
    fn history_log_replays() {
        let dir = std::env::temp_dir().join(format!("whatif-hist-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(HISTORY_FILE);
        let _ = std::fs::remove_file(&path);
        let models = mlr_models(0.5);
        let f = frame();
        let first = {
            let store = HistoryStore::open(&path).unwrap();
            let s = Scenario::new("C3", 3).with_models(&[ModelKind::Mlr]).perturb("loading", 1, 0.1);
            run_whatif(&store, &models, &f, &s).unwrap();
            run_whatif(&store, &models, &f, &s).unwrap();
            store.runs(None)
        };
        let reopened = HistoryStore::open(&path).unwrap();
        assert_eq!(reopened.runs(None), first);
        let next = run_whatif(&reopened, &models, &f, &Scenario::new("C3", 1).with_models(&[ModelKind::Mlr])).unwrap();
        assert_eq!(next.run_id, 3);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn perturbation_order_does_not_matter(
            steps in prop::collection::btree_map(0usize..8, -50.0..50.0f64, 0..6),
            seed in any::<u64>(),
        ) {
            let list: Vec<Perturbation> = steps.iter().map(|(&step, &value)| Perturbation { step, value }).collect();
            let mut shuffled = list.clone();
            // deterministic permutation
            let n = shuffled.len();
            for i in 0..n {
                let j = (seed as usize).wrapping_add(i * 7) % n.max(1);
                shuffled.swap(i, j);
            }
            let mut a = Scenario::new("C3", 8);
            a.perturbations.insert("x".into(), list);
            let mut b = Scenario::new("C3", 8);
            b.perturbations.insert("x".into(), shuffled);
            let f = frame();
            prop_assert_eq!(
                build_exog_paths(&f, &a, &["x".into()]).unwrap(),
                build_exog_paths(&f, &b, &["x".into()]).unwrap()
            );
        }
    }
}
