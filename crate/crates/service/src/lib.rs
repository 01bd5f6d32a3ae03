//! HTTP API and command-line front end for the `cvsa-core` annotation
//! platform.
//!
//! The API authenticates callers with static bearer tokens and maps every
//! platform error to a fixed HTTP status (see [`error::classify`]). The CLI
//! drives the same [`cvsa_core::Platform`] directly against a store file.

pub mod api;
pub mod auth;
pub mod cli;
pub mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use cvsa_core::Platform;
use tokio::net::TcpListener;

pub use api::{router, AppState};
pub use auth::TokenTable;

pub struct ServeConfig {
    pub addr: SocketAddr,
    pub tokens: TokenTable,
    pub export_root: PathBuf,
}

/// Binds, announces `listening on <addr>` on stdout and serves until
/// interrupted.
pub async fn serve(platform: Platform, config: ServeConfig) -> std::io::Result<()> {
    let listener = TcpListener::bind(config.addr).await?;
    let local = listener.local_addr()?;
    let state = AppState {
        platform,
        tokens: Arc::new(config.tokens),
        export_root: config.export_root,
    };
    println!("listening on {local}");
    use std::io::Write;
    std::io::stdout().flush()?;
    tracing::info!(%local, "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
