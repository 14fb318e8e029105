//! Route configuration, read from a TOML file at startup.
//!
//! ```toml
//! data_dir = "state"
//!
//! [[routes]]
//! route_id = "C3"
//! target = "freight_index"
//! exogenous = ["brazil_loadings", "iron_ore_price"]
//! data_file = "c3.csv"
//! vessel_file = "vessels.csv"
//! port = { name = "Tubarao", lat = -20.29, lon = -40.24, radius_km = 40.0 }
//! models = [{ kind = "MLR" }, { kind = "ARIMAX", hyperparams = { p = 1, d = 0, q = 0 } }]
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use whatif_core::models::Hyperparams;
use whatif_core::spatial::{GeoPoint, PortRegion, DEFAULT_TOLERANCE_DEG};
use whatif_core::{ModelKind, ModelSpec};

pub const DEFAULT_BACKTEST_FOLDS: usize = 5;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("route `{route}`: {message}")]
    Route { route: String, message: String },
    #[error("duplicate route id `{0}`")]
    DuplicateRoute(String),
}

fn default_data_dir() -> PathBuf {
    PathBuf::from(".")
}

fn default_folds() -> usize {
    DEFAULT_BACKTEST_FOLDS
}

fn default_horizon() -> usize {
    1
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE_DEG
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Directory holding `history.ndjson`.
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default)]
    pub routes: Vec<RouteConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteConfig {
    pub route_id: String,
    pub target: String,
    #[serde(default)]
    pub exogenous: Vec<String>,
    pub data_file: PathBuf,
    #[serde(default)]
    pub vessel_file: Option<PathBuf>,
    #[serde(default)]
    pub port: Option<PortConfig>,
    #[serde(default = "default_tolerance")]
    pub approach_tolerance_deg: f64,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    #[serde(default = "default_folds")]
    pub backtest_folds: usize,
    #[serde(default = "default_horizon")]
    pub backtest_horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortConfig {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub radius_km: f64,
}

impl PortConfig {
    pub fn region(&self) -> Result<PortRegion, String> {
        PortRegion::new(&self.name, GeoPoint::new(self.lat, self.lon), self.radius_km).map_err(|e| e.to_string())
    }
}

/// One model family to fit; omitted hyperparameters take the family defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub kind: ModelKind,
    #[serde(default)]
    pub hyperparams: Option<serde_json::Value>,
}

impl ModelEntry {
    pub fn hyperparams(&self) -> Result<Hyperparams, String> {
        match &self.hyperparams {
            None => Ok(Hyperparams::default_for(self.kind)),
            Some(value) => {
                let tagged = serde_json::json!({ "kind": self.kind, "hyperparams": value });
                serde_json::from_value(tagged).map_err(|e| format!("{} hyperparams: {e}", self.kind))
            }
        }
    }
}

impl RouteConfig {
    pub fn model_specs(&self) -> Result<Vec<ModelSpec>, ConfigError> {
        let mut seen = BTreeSet::new();
        self.models
            .iter()
            .map(|entry| {
                if !seen.insert(entry.kind) {
                    return Err(self.error(format!("{} listed twice", entry.kind)));
                }
                let hyperparams = entry.hyperparams().map_err(|m| self.error(m))?;
                Ok(ModelSpec {
                    target: self.target.clone(),
                    exogenous: self.exogenous.clone(),
                    hyperparams,
                })
            })
            .collect()
    }

    pub fn error(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::Route {
            route: self.route_id.clone(),
            message: message.into(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut config: ServiceConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = origin.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.check()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.data_dir);
        for route in &mut self.routes {
            join(&mut route.data_file);
            if let Some(v) = route.vessel_file.as_mut() {
                join(v);
            }
        }
    }

    /// Checks that need no file access.
    pub fn check(&self) -> Result<(), ConfigError> {
        let mut ids = BTreeSet::new();
        for route in &self.routes {
            if route.route_id.trim().is_empty() || route.route_id.contains('/') {
                return Err(route.error("route_id must be non-empty and contain no `/`"));
            }
            if !ids.insert(route.route_id.as_str()) {
                return Err(ConfigError::DuplicateRoute(route.route_id.clone()));
            }
            if route.backtest_folds < 2 || route.backtest_horizon == 0 {
                return Err(route.error("backtest_folds must be at least 2 and backtest_horizon at least 1"));
            }
            if !(route.approach_tolerance_deg > 0.0 && route.approach_tolerance_deg <= 180.0) {
                return Err(route.error("approach_tolerance_deg must lie in (0, 180]"));
            }
            if let Some(port) = &route.port {
                port.region().map_err(|m| route.error(m))?;
            }
            route.model_specs()?;
        }
        Ok(())
    }
}
