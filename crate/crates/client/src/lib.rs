//! Async client for the what-if HTTP service.
//!
//! ```no_run
//! # async fn demo() -> Result<(), whatif_client::ClientError> {
//! use whatif_client::Client;
//! use whatif_core::scenario::Scenario;
//!
//! let client = Client::new("http://127.0.0.1:8080")?;
//! let run = client.whatif("C3", &Scenario::new("C3", 8).perturb("brazil_loadings", 0, 4000.0)).await?;
//! println!("overall mean diff {}", run.overall_mean_diff);
//! # Ok(()) }
//! ```

use reqwest::{StatusCode, Url};
use serde::de::DeserializeOwned;
use thiserror::Error;
use whatif_core::eval::Metric;
use whatif_core::models::ImpactSummary;
use whatif_core::scenario::{Scenario, ScenarioRun};
use whatif_core::spatial::{BBox, StatusFilter};
use whatif_core::wire::{BandsResponse, ErrorBody, HealthResponse, ModelsResponse, RouteSummary, SeriesWindow, VesselsResponse};
use whatif_core::TimeSeriesFrame;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid base URL `{url}`: {message}")]
    BaseUrl { url: String, message: String },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {}", body.message)]
    Api { status: StatusCode, body: ErrorBody },
}

impl ClientError {
    /// HTTP status of a server-side rejection.
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
            ClientError::BaseUrl { .. } => None,
        }
    }
}

/// Optional filters for [`Client::vessels`].
#[derive(Debug, Clone, Default)]
pub struct VesselQuery {
    pub route: Option<String>,
    pub bbox: Option<BBox>,
    pub status: StatusFilter,
    /// RFC 3339 cut-off time.
    pub at: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: Url,
}

impl Client {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let bad = |message: String| ClientError::BaseUrl {
            url: base_url.to_string(),
            message,
        };
        let mut base = Url::parse(base_url).map_err(|e| bad(e.to_string()))?;
        if base.cannot_be_a_base() {
            return Err(bad("not a hierarchical URL".into()));
        }
        if !base.path().ends_with('/') {
            let path = format!("{}/", base.path());
            base.set_path(&path);
        }
        Ok(Self {
            http: reqwest::Client::new(),
            base,
        })
    }

    fn url(&self, segments: &[&str]) -> Url {
        let mut url = self.base.clone();
        url.path_segments_mut()
            .expect("checked in new")
            .pop_if_empty()
            .extend(segments);
        url
    }

    async fn decode<T: DeserializeOwned>(response: reqwest::Response) -> Result<T, ClientError> {
        let status = response.status();
        if status.is_success() {
            return Ok(response.json().await?);
        }
        let text = response.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: "unknown".into(),
            message: text,
            field: None,
        });
        Err(ClientError::Api { status, body })
    }

    async fn get<T: DeserializeOwned>(&self, segments: &[&str], query: &[(&str, String)]) -> Result<T, ClientError> {
        let mut url = self.url(segments);
        if !query.is_empty() {
            url.query_pairs_mut().extend_pairs(query);
        }
        Self::decode(self.http.get(url).send().await?).await
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        self.get(&["health"], &[]).await
    }

    pub async fn routes(&self) -> Result<Vec<RouteSummary>, ClientError> {
        self.get(&["routes"], &[]).await
    }

    pub async fn series(&self, route: &str, window: SeriesWindow) -> Result<TimeSeriesFrame, ClientError> {
        let window = match window {
            SeriesWindow::All => "all",
            SeriesWindow::Near => "near",
        };
        self.get(&["routes", route, "series"], &[("window", window.to_string())]).await
    }

    pub async fn bands(&self, route: &str, variable: &str) -> Result<BandsResponse, ClientError> {
        self.get(&["routes", route, "series", variable, "bands"], &[]).await
    }

    pub async fn models(&self, route: &str, metric: Metric) -> Result<ModelsResponse, ClientError> {
        self.get(&["routes", route, "models"], &[("metric", metric.to_string())]).await
    }

    pub async fn coefficients(&self, route: &str) -> Result<Vec<ImpactSummary>, ClientError> {
        self.get(&["routes", route, "coefficients"], &[]).await
    }

    pub async fn history(&self, route: &str) -> Result<Vec<ScenarioRun>, ClientError> {
        self.get(&["routes", route, "history"], &[]).await
    }

    pub async fn whatif(&self, route: &str, scenario: &Scenario) -> Result<ScenarioRun, ClientError> {
        let response = self
            .http
            .post(self.url(&["routes", route, "whatif"]))
            .json(scenario)
            .send()
            .await?;
        Self::decode(response).await
    }

    pub async fn vessels(&self, query: &VesselQuery) -> Result<VesselsResponse, ClientError> {
        let mut pairs = vec![(
            "status",
            match query.status {
                StatusFilter::All => "all",
                StatusFilter::Ballast => "ballast",
                StatusFilter::Laden => "laden",
            }
            .to_string(),
        )];
        if let Some(route) = &query.route {
            pairs.push(("route", route.clone()));
        }
        if let Some(bbox) = &query.bbox {
            pairs.push(("bbox", bbox.to_string()));
        }
        if let Some(at) = &query.at {
            pairs.push(("at", at.clone()));
        }
        self.get(&["vessels"], &pairs).await
    }
}
