//! The four forecasting model families.
//!
//! Every family is fitted from a [`TimeSeriesFrame`] and forecasts the target
//! variable `h` weeks ahead given supplied future paths for its exogenous
//! variables. Fitted models are plain data: they serialize to a versioned
//! JSON document and can be shared across threads.

pub mod arimax;
pub mod impacts;
pub mod lstm;
pub mod mlr;
pub mod vecm;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::timeseries::{FrameError, TimeSeriesFrame};

pub use arimax::{ArimaxOrder, ArimaxParams};
pub use impacts::{coefficient_impacts, ImpactSummary};
pub use lstm::{LstmConfig, LstmParams};
pub use mlr::MlrParams;
pub use vecm::{VecmOrder, VecmParams};

/// Future values per exogenous variable, one entry per forecast step.
pub type ExogPaths = BTreeMap<String, Vec<f64>>;

/// Version tag written into serialized [`FittedModel`] documents.
pub const MODEL_DOC_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("design matrix is singular")]
    SingularDesign,
    #[error("insufficient data: need {needed} rows, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("missing or short exogenous path for `{0}`")]
    MissingExogPath(String),
    #[error("forecast horizon must be at least 1")]
    InvalidHorizon,
    #[error("optimiser did not converge after {iterations} iterations")]
    FitDidNotConverge { iterations: usize },
    #[error("a cointegrated system needs at least two variables")]
    InvalidSystem,
    #[error("cannot fix the path of target variable `{0}`")]
    CannotFixTarget(String),
    #[error("training diverged at epoch {epoch}")]
    DivergedTraining { epoch: usize },
    #[error("variable `{0}` is not in the frame")]
    MissingVariable(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("unsupported model document: {0}")]
    InvalidDocument(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

impl From<LinalgError> for ModelError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Singular(_) => ModelError::SingularDesign,
            LinalgError::TooFewRows { rows, cols } => ModelError::InsufficientData {
                needed: cols + 1,
                available: rows,
            },
            LinalgError::Ragged => ModelError::InvalidSpec("ragged design".into()),
        }
    }
}

/// Model families, in their fixed ranking tie-break order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
pub enum ModelKind {
    #[serde(rename = "MLR")]
    Mlr,
    #[serde(rename = "ARIMAX")]
    Arimax,
    #[serde(rename = "VECM")]
    Vecm,
    #[serde(rename = "LSTM")]
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Mlr, ModelKind::Arimax, ModelKind::Vecm, ModelKind::Lstm];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlr => "MLR",
            ModelKind::Arimax => "ARIMAX",
            ModelKind::Vecm => "VECM",
            ModelKind::Lstm => "LSTM",
        }
    }

    /// Whether the family has one scalar coefficient per exogenous variable.
    pub fn has_scalar_coefficients(self) -> bool {
        matches!(self, ModelKind::Mlr | ModelKind::Arimax)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MLR" => Ok(ModelKind::Mlr),
            "ARIMAX" => Ok(ModelKind::Arimax),
            "VECM" => Ok(ModelKind::Vecm),
            "LSTM" => Ok(ModelKind::Lstm),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

/// Family tag plus family-specific hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", content = "hyperparams")]
pub enum Hyperparams {
    #[serde(rename = "MLR")]
    Mlr,
    #[serde(rename = "ARIMAX")]
    Arimax(ArimaxOrder),
    #[serde(rename = "VECM")]
    Vecm(VecmOrder),
    #[serde(rename = "LSTM")]
    Lstm(LstmConfig),
}

impl Hyperparams {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparams::Mlr => ModelKind::Mlr,
            Hyperparams::Arimax(_) => ModelKind::Arimax,
            Hyperparams::Vecm(_) => ModelKind::Vecm,
            Hyperparams::Lstm(_) => ModelKind::Lstm,
        }
    }

    /// Default hyperparameters for a family.
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Mlr => Hyperparams::Mlr,
            ModelKind::Arimax => Hyperparams::Arimax(ArimaxOrder::default()),
            ModelKind::Vecm => Hyperparams::Vecm(VecmOrder::default()),
            ModelKind::Lstm => Hyperparams::Lstm(LstmConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ModelSpec {
    pub target: String,
    pub exogenous: Vec<String>,
    #[serde(flatten)]
    pub hyperparams: Hyperparams,
}

impl ModelSpec {
    pub fn new(target: impl Into<String>, exogenous: &[&str], hyperparams: Hyperparams) -> Self {
        Self {
            target: target.into(),
            exogenous: exogenous.iter().map(|s| s.to_string()).collect(),
            hyperparams,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.hyperparams.kind()
    }

    /// Target followed by the exogenous variables.
    pub fn variables(&self) -> Vec<String> {
        std::iter::once(self.target.clone())
            .chain(self.exogenous.iter().cloned())
            .collect()
    }

    /// Structural checks against a training frame.
    pub fn validate(&self, frame: &TimeSeriesFrame) -> Result<(), ModelError> {
        if self.exogenous.iter().any(|e| e == &self.target) {
            return Err(ModelError::InvalidSpec(format!(
                "target `{}` also listed as exogenous",
                self.target
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in self.variables() {
            if !seen.insert(name.clone()) {
                return Err(ModelError::InvalidSpec(format!("duplicate variable `{name}`")));
            }
            if !frame.has_variable(&name) {
                return Err(ModelError::MissingVariable(name));
            }
        }
        Ok(())
    }
}

/// Dates and row count of the sample a model was estimated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FitRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parameters {
    Mlr(MlrParams),
    Arimax(ArimaxParams),
    Vecm(VecmParams),
    Lstm(LstmParams),
}

impl Parameters {
    pub fn kind(&self) -> ModelKind {
        match self {
            Parameters::Mlr(_) => ModelKind::Mlr,
            Parameters::Arimax(_) => ModelKind::Arimax,
            Parameters::Vecm(_) => ModelKind::Vecm,
            Parameters::Lstm(_) => ModelKind::Lstm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub parameters: Parameters,
    pub residual_sigma: f64,
    pub fit_range: FitRange,
}

/// On-disk layout of a fitted model.
#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    kind: ModelKind,
    spec: ModelSpec,
    parameters: serde_json::Value,
    residual_sigma: f64,
    fit_range: FitRange,
}

impl From<FittedModel> for ModelDocument {
    fn from(m: FittedModel) -> Self {
        let parameters = match &m.parameters {
            Parameters::Mlr(p) => serde_json::to_value(p),
            Parameters::Arimax(p) => serde_json::to_value(p),
            Parameters::Vecm(p) => serde_json::to_value(p),
            Parameters::Lstm(p) => serde_json::to_value(p),
        }
        .expect("parameters serialize");
        ModelDocument {
            version: MODEL_DOC_VERSION,
            kind: m.kind(),
            spec: m.spec,
            parameters,
            residual_sigma: m.residual_sigma,
            fit_range: m.fit_range,
        }
    }
}

impl TryFrom<ModelDocument> for FittedModel {
    type Error = ModelError;

    fn try_from(doc: ModelDocument) -> Result<Self, Self::Error> {
        if doc.version != MODEL_DOC_VERSION {
            return Err(ModelError::InvalidDocument(format!("version {}", doc.version)));
        }
        if doc.kind != doc.spec.kind() {
            return Err(ModelError::InvalidDocument(format!(
                "kind {} does not match spec kind {}",
                doc.kind,
                doc.spec.kind()
            )));
        }
        let bad = |e: serde_json::Error| ModelError::InvalidDocument(e.to_string());
        let parameters = match doc.kind {
            ModelKind::Mlr => Parameters::Mlr(serde_json::from_value(doc.parameters).map_err(bad)?),
            ModelKind::Arimax => Parameters::Arimax(serde_json::from_value(doc.parameters).map_err(bad)?),
            ModelKind::Vecm => Parameters::Vecm(serde_json::from_value(doc.parameters).map_err(bad)?),
            ModelKind::Lstm => Parameters::Lstm(serde_json::from_value(doc.parameters).map_err(bad)?),
        };
        if !doc.residual_sigma.is_finite() || doc.residual_sigma < 0.0 {
            return Err(ModelError::InvalidDocument("residual_sigma must be finite and >= 0".into()));
        }
        Ok(FittedModel {
            spec: doc.spec,
            parameters,
            residual_sigma: doc.residual_sigma,
            fit_range: doc.fit_range,
        })
    }
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        self.parameters.kind()
    }

    pub fn exogenous(&self) -> &[String] {
        &self.spec.exogenous
    }

    /// Forecasts `horizon` steps after the end of the fit range.
    pub fn forecast(&self, paths: &ExogPaths, horizon: usize) -> Result<Forecast, ModelError> {
        let values = match &self.parameters {
            Parameters::Mlr(p) => mlr::forecast(p, &self.spec, paths, horizon)?,
            Parameters::Arimax(p) => arimax::forecast(p, &self.spec, paths, horizon)?,
            Parameters::Vecm(p) => vecm::forecast(p, paths, horizon)?,
            Parameters::Lstm(p) => lstm::forecast(p, &self.spec, paths, horizon)?,
        };
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::InvalidSpec(format!("non-finite forecast at step {bad}")));
        }
        Ok(Forecast {
            model_kind: self.kind(),
            horizon,
            values,
            origin: self.fit_range.end,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::InvalidDocument(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Forecast {
    pub model_kind: ModelKind,
    pub horizon: usize,
    pub values: Vec<f64>,
    /// Last in-sample date.
    pub origin: NaiveDate,
}

/// Fits whichever family `spec` names.
pub fn fit(frame: &TimeSeriesFrame, spec: &ModelSpec) -> Result<FittedModel, ModelError> {
    match spec.kind() {
        ModelKind::Mlr => mlr::fit(frame, spec),
        ModelKind::Arimax => arimax::fit(frame, spec),
        ModelKind::Vecm => vecm::fit(frame, spec),
        ModelKind::Lstm => lstm::fit(frame, spec),
    }
}

/// First `horizon` values of an exogenous path, or `MissingExogPath`.
pub(crate) fn path_prefix<'a>(
    paths: &'a ExogPaths,
    variable: &str,
    horizon: usize,
) -> Result<&'a [f64], ModelError> {
    match paths.get(variable) {
        Some(p) if p.len() >= horizon && p[..horizon].iter().all(|v| v.is_finite()) => Ok(&p[..horizon]),
        _ => Err(ModelError::MissingExogPath(variable.to_string())),
    }
}

pub(crate) fn fit_range(frame: &TimeSeriesFrame, first_row: usize, last_row: usize, rows: usize) -> FitRange {
    FitRange {
        start: frame.index()[first_row],
        end: frame.index()[last_row],
        rows,
    }
}
