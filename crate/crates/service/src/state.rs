use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use thiserror::Error;
use whatif_core::eval::{walk_forward_backtest, ModelScorecard};
use whatif_core::scenario::{HistoryStore, HISTORY_FILE};
use whatif_core::spatial::{load_vessels, PortRegion, VesselRecord};
use whatif_core::timeseries::load_frame;
use whatif_core::wire::{FittedModelInfo, RouteSummary};
use whatif_core::{fit, FittedModel, ModelKind, TimeSeriesFrame};

use crate::config::{ConfigError, RouteConfig, ServiceConfig};

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("route `{route}`: {message}")]
    Route { route: String, message: String },
    #[error("cannot create data directory {path}: {source}")]
    DataDir {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    History(String),
}

/// A route with its data loaded and its models fitted. Immutable once built.
#[derive(Debug)]
pub struct Route {
    pub config: RouteConfig,
    pub frame: TimeSeriesFrame,
    pub models: BTreeMap<ModelKind, FittedModel>,
    pub scorecards: Vec<ModelScorecard>,
    pub vessels: Vec<VesselRecord>,
    pub port: Option<PortRegion>,
}

impl Route {
    pub fn build(config: RouteConfig) -> Result<Self, StartupError> {
        let fail = |message: String| StartupError::Route {
            route: config.route_id.clone(),
            message,
        };
        let open = |path: &Path| File::open(path).map_err(|e| fail(format!("{}: {e}", path.display())));

        let frame = load_frame(open(&config.data_file)?)
            .map_err(|e| fail(format!("{}: {e}", config.data_file.display())))?;
        for var in std::iter::once(&config.target).chain(&config.exogenous) {
            if !frame.has_variable(var) {
                return Err(fail(format!("`{var}` is not a column of {}", config.data_file.display())));
            }
        }
        let vessels = match &config.vessel_file {
            Some(path) => load_vessels(open(path)?).map_err(|e| fail(format!("{}: {e}", path.display())))?,
            None => Vec::new(),
        };
        let port = config.port.as_ref().map(|p| p.region()).transpose().map_err(fail)?;

        let mut models = BTreeMap::new();
        let mut scorecards = Vec::new();
        for spec in config.model_specs()? {
            let kind = spec.kind();
            let model = fit(&frame, &spec).map_err(|e| fail(format!("fitting {kind}: {e}")))?;
            let card = walk_forward_backtest(&spec, &frame, config.backtest_folds, config.backtest_horizon)
                .map_err(|e| fail(format!("backtesting {kind}: {e}")))?;
            tracing::info!(route = %config.route_id, model = %kind, rmse = card.rmse, "model ready");
            models.insert(kind, model);
            scorecards.push(card);
        }
        Ok(Self {
            config,
            frame,
            models,
            scorecards,
            vessels,
            port,
        })
    }

    pub fn summary(&self) -> RouteSummary {
        RouteSummary {
            route_id: self.config.route_id.clone(),
            target: self.config.target.clone(),
            exogenous: self.config.exogenous.clone(),
            variables: self.frame.variables().to_vec(),
            start: self.frame.index().first().copied(),
            end: self.frame.last_date(),
            rows: self.frame.len(),
            models: self
                .models
                .values()
                .map(|m| FittedModelInfo {
                    kind: m.kind(),
                    residual_sigma: m.residual_sigma,
                    fit_range: m.fit_range.clone(),
                })
                .collect(),
        }
    }
}

/// Everything the handlers share: immutable routes plus the history log,
/// whose internal lock is the only point where requests wait on each other.
pub struct AppState {
    pub routes: BTreeMap<String, Route>,
    pub history: HistoryStore,
}

impl AppState {
    pub fn new(routes: Vec<Route>, history: HistoryStore) -> Self {
        Self {
            routes: routes.into_iter().map(|r| (r.config.route_id.clone(), r)).collect(),
            history,
        }
    }

    /// Loads data, fits every configured model and replays the history log.
    /// Any failure aborts startup.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, StartupError> {
        config.check()?;
        std::fs::create_dir_all(&config.data_dir).map_err(|source| StartupError::DataDir {
            path: config.data_dir.display().to_string(),
            source,
        })?;
        let routes = config
            .routes
            .iter()
            .cloned()
            .map(Route::build)
            .collect::<Result<Vec<_>, _>>()?;
        let history =
            HistoryStore::open(config.data_dir.join(HISTORY_FILE)).map_err(|e| StartupError::History(e.to_string()))?;
        Ok(Self::new(routes, history))
    }
}
