use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;
use tower_http::trace::TraceLayer;
use whatif_core::eval::{rank_models, Metric};
use whatif_core::models::{coefficient_impacts, ImpactSummary};
use whatif_core::scenario::{run_whatif, Scenario, ScenarioError, ScenarioRun};
use whatif_core::spatial::{aggregate_supply, parse_timestamp, supply_variable_name, vessels_in_view, BBox, StatusFilter};
use whatif_core::timeseries::{bollinger, FrameError, DEFAULT_BAND_WIDTH, DEFAULT_BAND_WINDOW, NEAR_TERM_WEEKS};
use whatif_core::wire::{
    schemas, BandsResponse, ErrorBody, HealthResponse, ModelsResponse, RouteSummary, SeriesWindow, SupplyAggregate,
    VesselsResponse,
};
use whatif_core::TimeSeriesFrame;

use crate::state::{AppState, Route};

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>, field: Option<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.to_string(),
                message: message.into(),
                field,
            },
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message, None)
    }

    fn bad_request(message: impl Into<String>, field: Option<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message, field)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, None)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<QueryRejection> for ApiError {
    fn from(rejection: QueryRejection) -> Self {
        ApiError::bad_request(rejection.body_text(), None)
    }
}

impl From<ScenarioError> for ApiError {
    fn from(err: ScenarioError) -> Self {
        match &err {
            ScenarioError::ModelNotFitted(_) => Self::new(StatusCode::CONFLICT, "model_not_fitted", err.to_string(), None),
            ScenarioError::Model { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "model_error", err.to_string(), None)
            }
            ScenarioError::History(_) => Self::internal(err.to_string()),
            _ => Self::bad_request(err.to_string(), err.field()),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn route<'a>(state: &'a AppState, id: &str) -> Result<&'a Route, ApiError> {
    state
        .routes
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("no route `{id}`")))
}

/// Deserializes a JSON body, reporting the path of the first bad field.
fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let path = err.path().to_string();
        let field = (path != ".").then_some(path);
        ApiError::bad_request(err.inner().to_string(), field)
    })?;
    de.end().map_err(|e| ApiError::bad_request(e.to_string(), None))?;
    Ok(value)
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schemas", get(all_schemas))
        .route("/schemas/{name}", get(one_schema))
        .route("/routes", get(list_routes))
        .route("/routes/{id}/series", get(series))
        .route("/routes/{id}/series/{variable}/bands", get(bands))
        .route("/routes/{id}/models", get(models))
        .route("/routes/{id}/coefficients", get(coefficients))
        .route("/routes/{id}/whatif", post(whatif))
        .route("/routes/{id}/history", get(history))
        .route("/vessels", get(vessels))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

async fn health(State(state): State<Shared>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        routes: state.routes.len(),
        history_runs: state.history.len(),
    })
}

async fn all_schemas() -> Json<Value> {
    Json(Value::Object(schemas().into_iter().map(|(k, v)| (k.to_string(), v)).collect()))
}

async fn one_schema(Path(name): Path<String>) -> ApiResult<Value> {
    schemas()
        .remove(name.as_str())
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no schema `{name}`")))
}

async fn list_routes(State(state): State<Shared>) -> Json<Vec<RouteSummary>> {
    Json(state.routes.values().map(Route::summary).collect())
}

#[derive(Deserialize)]
struct SeriesQuery {
    #[serde(default)]
    window: SeriesWindow,
}

async fn series(
    State(state): State<Shared>,
    Path(id): Path<String>,
    query: Result<Query<SeriesQuery>, QueryRejection>,
) -> ApiResult<TimeSeriesFrame> {
    let Query(query) = query?;
    let route = route(&state, &id)?;
    Ok(Json(match query.window {
        SeriesWindow::All => route.frame.clone(),
        SeriesWindow::Near => route.frame.tail(NEAR_TERM_WEEKS),
    }))
}

#[derive(Deserialize)]
struct BandsQuery {
    window: Option<usize>,
    k: Option<f64>,
}

async fn bands(
    State(state): State<Shared>,
    Path((id, variable)): Path<(String, String)>,
    query: Result<Query<BandsQuery>, QueryRejection>,
) -> ApiResult<BandsResponse> {
    let Query(query) = query?;
    let route = route(&state, &id)?;
    let values = route.frame.column(&variable).map_err(|e| match e {
        FrameError::UnknownVariable(v) => ApiError::not_found(format!("route `{id}` has no variable `{v}`")),
        other => ApiError::internal(other.to_string()),
    })?;
    // Short series get a band over their full length rather than an error.
    let window = query.window.unwrap_or(DEFAULT_BAND_WINDOW.min(values.len().max(1)));
    let band = bollinger(&values, window, query.k.unwrap_or(DEFAULT_BAND_WIDTH))
        .map_err(|e| ApiError::bad_request(e.to_string(), None))?;
    Ok(Json(BandsResponse {
        variable,
        index: route.frame.index().to_vec(),
        values,
        band,
    }))
}

#[derive(Deserialize)]
struct ModelsQuery {
    #[serde(default)]
    metric: Metric,
}

async fn models(
    State(state): State<Shared>,
    Path(id): Path<String>,
    query: Result<Query<ModelsQuery>, QueryRejection>,
) -> ApiResult<ModelsResponse> {
    let Query(query) = query?;
    let route = route(&state, &id)?;
    let scorecards = if route.scorecards.is_empty() {
        Vec::new()
    } else {
        rank_models(&route.scorecards, query.metric).map_err(|e| ApiError::internal(e.to_string()))?
    };
    Ok(Json(ModelsResponse {
        metric: query.metric,
        ranking: scorecards.iter().map(|c| c.model_kind).collect(),
        scorecards,
    }))
}

async fn coefficients(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Vec<ImpactSummary>> {
    let route = route(&state, &id)?;
    let mut out = Vec::new();
    for model in route.models.values() {
        out.extend(coefficient_impacts(model, &route.frame).map_err(|e| ApiError::internal(e.to_string()))?);
    }
    Ok(Json(out))
}

async fn whatif(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<ScenarioRun> {
    route(&state, &id)?;
    let mut scenario: Scenario = parse_body(&body)?;
    if scenario.route_id.is_empty() {
        scenario.route_id = id.clone();
    } else if scenario.route_id != id {
        return Err(ScenarioError::RouteMismatch {
            scenario: scenario.route_id,
            requested: id,
        }
        .into());
    }
    // Forecasting and the log append are synchronous; keep them off the
    // async workers.
    let run = tokio::task::spawn_blocking(move || {
        let route = &state.routes[&id];
        run_whatif(&state.history, &route.models, &route.frame, &scenario)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(run))
}

async fn history(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Vec<ScenarioRun>> {
    route(&state, &id)?;
    Ok(Json(state.history.runs(Some(&id))))
}

#[derive(Deserialize)]
struct VesselsQuery {
    route: Option<String>,
    bbox: Option<String>,
    #[serde(default)]
    status: StatusFilter,
    at: Option<String>,
}

async fn vessels(
    State(state): State<Shared>,
    query: Result<Query<VesselsQuery>, QueryRejection>,
) -> ApiResult<VesselsResponse> {
    let Query(query) = query?;
    let bbox = match &query.bbox {
        Some(text) => text
            .parse::<BBox>()
            .map_err(|e| ApiError::bad_request(e.to_string(), Some("bbox".into())))?,
        None => BBox::WORLD,
    };
    let at = query
        .at
        .as_deref()
        .map(parse_timestamp)
        .transpose()
        .map_err(|e| ApiError::bad_request(e, Some("at".into())))?;
    let routes: Vec<&Route> = match &query.route {
        Some(id) => vec![route(&state, id)?],
        None => state.routes.values().collect(),
    };
    let records: Vec<_> = routes
        .iter()
        .flat_map(|r| r.vessels.iter())
        .filter(|v| at.is_none_or(|t| v.timestamp <= t))
        .cloned()
        .collect();
    let vessels = vessels_in_view(&records, &bbox, at)
        .map_err(|e| ApiError::bad_request(e.to_string(), Some("bbox".into())))?
        .into_iter()
        .filter(|v| query.status.admits(v.cargo_status))
        .collect();

    let supply = match (&query.route, routes.first().and_then(|r| r.port.as_ref().map(|p| (r, p)))) {
        (Some(_), Some((route, port))) => {
            let tolerance_deg = route.config.approach_tolerance_deg;
            let frame = aggregate_supply(&records, port, tolerance_deg).map_err(|e| ApiError::internal(e.to_string()))?;
            Some(SupplyAggregate {
                port: port.clone(),
                tolerance_deg,
                variable: supply_variable_name(&port.name),
                frame,
            })
        }
        _ => None,
    };
    Ok(Json(VesselsResponse {
        status: query.status,
        bbox,
        at,
        vessels,
        supply,
    }))
}
