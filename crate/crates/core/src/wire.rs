//! JSON bodies exchanged between the HTTP service and its clients.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use schemars::{schema_for, JsonSchema};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::eval::{Metric, ModelScorecard};
use crate::models::{FitRange, ImpactSummary, ModelKind};
use crate::scenario::{Scenario, ScenarioRun};
use crate::spatial::{BBox, PortRegion, StatusFilter, VesselRecord};
use crate::timeseries::{BollingerBand, TimeSeriesFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RouteSummary {
    pub route_id: String,
    pub target: String,
    pub exogenous: Vec<String>,
    pub variables: Vec<String>,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub rows: usize,
    pub models: Vec<FittedModelInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FittedModelInfo {
    pub kind: ModelKind,
    pub residual_sigma: f64,
    pub fit_range: FitRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum SeriesWindow {
    #[default]
    All,
    Near,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BandsResponse {
    pub variable: String,
    pub index: Vec<NaiveDate>,
    pub values: Vec<Option<f64>>,
    pub band: BollingerBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ModelsResponse {
    pub metric: Metric,
    /// Scorecards ordered best first under `metric`.
    pub scorecards: Vec<ModelScorecard>,
    pub ranking: Vec<ModelKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SupplyAggregate {
    pub port: PortRegion,
    pub tolerance_deg: f64,
    pub variable: String,
    pub frame: TimeSeriesFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct VesselsResponse {
    pub status: StatusFilter,
    pub bbox: BBox,
    pub at: Option<DateTime<Utc>>,
    pub vessels: Vec<VesselRecord>,
    /// Weekly approaching-ballast counts for the route's port, when the
    /// request names a route that has one.
    pub supply: Option<SupplyAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HealthResponse {
    pub status: String,
    pub routes: usize,
    pub history_runs: usize,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ErrorBody {
    /// Stable machine-readable code, e.g. `invalid_request`, `not_found`.
    pub error: String,
    pub message: String,
    /// JSON path of the offending request field, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

/// Named JSON schemas for request and response bodies, keyed by the name
/// the service publishes them under.
pub fn schemas() -> BTreeMap<&'static str, Value> {
    let mut out = BTreeMap::new();
    let mut put = |name, schema: schemars::Schema| {
        out.insert(name, schema.to_value());
    };
    put("routes", schema_for!(Vec<RouteSummary>));
    put("series", schema_for!(TimeSeriesFrame));
    put("bands", schema_for!(BandsResponse));
    put("models", schema_for!(ModelsResponse));
    put("coefficients", schema_for!(Vec<ImpactSummary>));
    put("scenario", schema_for!(Scenario));
    put("scenario_run", schema_for!(ScenarioRun));
    put("history", schema_for!(Vec<ScenarioRun>));
    put("vessels", schema_for!(VesselsResponse));
    put("health", schema_for!(HealthResponse));
    put("error", schema_for!(ErrorBody));
    out
}
