//! HTTP/JSON front end for the what-if engine.
//!
//! Models are fitted once at startup from a [`ServiceConfig`] and never
//! change afterwards. `POST /routes/{id}/whatif` is the only mutating
//! endpoint; every run it produces is appended to `<data_dir>/history.ndjson`
//! and replayed on the next start.

pub mod api;
pub mod config;
pub mod state;

use std::future::Future;
use std::sync::Arc;

use tokio::net::TcpListener;

pub use api::router;
pub use config::{ConfigError, RouteConfig, ServiceConfig};
pub use state::{AppState, Route, StartupError};

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
