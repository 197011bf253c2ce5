//! HTTP service for interactive labelling campaigns.
//!
//! A campaign wraps one [`alkgp::selectors::ActiveSession`]: the server
//! recommends a pool point, an operator submits its measured label, and the
//! model is refit before the next recommendation. State is persisted as an
//! append-only event log per campaign and restored by replay on startup.

pub mod api;
pub mod campaign;
pub mod config;
pub mod error;
pub mod store;

use std::sync::Arc;

pub use api::{router, AppState};
pub use config::ServiceConfig;

/// Binds the configured address and serves until `shutdown` resolves.
pub async fn serve(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
