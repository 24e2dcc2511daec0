//! HTTP/JSON service over the screening pipeline, with an append-only
//! case store.

pub mod error;
pub mod jobs;
pub mod routes;
pub mod state;
pub mod store;
pub mod upload;

use std::net::SocketAddr;
use std::sync::Arc;

use tokio::net::TcpListener;

pub use error::ApiError;
pub use routes::router;
pub use state::{AppState, ServerConfig, StartError, DEFAULT_PORT};
pub use store::{CaseStore, StoreError};

/// Binds `addr` and serves until the task is dropped. Returns the bound
/// address through `on_bound` before accepting connections.
pub async fn serve(config: ServerConfig, addr: SocketAddr, on_bound: impl FnOnce(SocketAddr)) -> Result<(), StartError> {
    let state = Arc::new(AppState::new(config)?);
    let listener = TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    tracing::info!(%bound, store = %state.store.path().display(), "listening");
    on_bound(bound);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

/// Starts the service on an ephemeral local port in a background task.
pub async fn spawn_local(config: ServerConfig) -> Result<SocketAddr, StartError> {
    let state = Arc::new(AppState::new(config)?);
    let listener = TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0))).await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router(state)).await {
            tracing::error!(error = %e, "embedded server stopped");
        }
    });
    Ok(addr)
}
