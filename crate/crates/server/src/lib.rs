//! HTTP service and operator tooling around a [`scenemem::space::Engine`].

pub mod api;
pub mod config;

use std::sync::Arc;

use scenemem::space::Engine;
use tokio::net::TcpListener;

pub use api::router;

/// Serves until `shutdown` resolves, then writes a snapshot of every space.
pub async fn serve(
    engine: Arc<Engine>,
    listener: TcpListener,
    token: Option<String>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let app = router(engine.clone(), token);
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    tracing::info!("shutting down; flushing memory spaces");
    let flush = engine.clone();
    tokio::task::spawn_blocking(move || flush.flush()).await??;
    Ok(())
}
