use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;

use crate::service::PoseService;

/// Path of the websocket endpoint.
pub const WS_PATH: &str = "/ws";

pub fn router(service: Arc<PoseService>) -> Router {
    Router::new()
        .route(WS_PATH, get(upgrade))
        .route("/health", get(|| async { "ok" }))
        .with_state(service)
}

async fn upgrade(
    ws: WebSocketUpgrade,
    State(service): State<Arc<PoseService>>,
) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, service))
}

async fn connection(mut socket: WebSocket, service: Arc<PoseService>) {
    while let Some(Ok(msg)) = socket.recv().await {
        let reply = match msg {
            Message::Text(text) => service.handle_text(text.as_str()),
            Message::Close(_) => break,
            // Pings are answered by the transport; binary frames are not part
            // of the protocol.
            _ => continue,
        };
        if socket.send(Message::Text(reply.into())).await.is_err() {
            break;
        }
    }
    tracing::debug!("connection closed");
}

/// Serves on an already bound listener until the task is dropped.
pub async fn serve(listener: TcpListener, service: Arc<PoseService>) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

/// Binds `addr` and returns the listener together with the bound address.
pub async fn bind(addr: SocketAddr) -> std::io::Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}
