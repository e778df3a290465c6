//! Live rollout server.
//!
//! One control loop owns the [`Session`]. WebSocket clients feed it commands
//! through a mailbox and receive every tick as a JSON text frame; rejected
//! commands get an error frame sent to that client only.
//!
//! Endpoints: `GET /ws` (WebSocket), `GET /model`, `GET /health` and
//! `GET /log` (recorded segments for offline replay).

pub mod protocol;
pub mod session;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use calm_core::trajectory::io::model_to_json;
use calm_core::{CalmError, ClusterModel};
use futures_util::{SinkExt, StreamExt};
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;

pub use protocol::{parse_command, ClientCommand, ErrorFrame, ServerMessage};
pub use session::{replay, Segment, Session, SessionConfig};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub tick_ms: u64,
    pub session: SessionConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            tick_ms: 50,
            session: SessionConfig::default(),
        }
    }
}

#[derive(Debug)]
pub enum ServiceError {
    Model(CalmError),
    Io(std::io::Error),
}

impl std::fmt::Display for ServiceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServiceError::Model(e) => write!(f, "{e}"),
            ServiceError::Io(e) => write!(f, "server i/o error: {e}"),
        }
    }
}

impl std::error::Error for ServiceError {}

type Frame = (u64, Arc<str>);

enum Inbound {
    Command(ClientCommand, mpsc::UnboundedSender<Arc<str>>),
    Log(oneshot::Sender<Vec<Segment>>),
}

struct Shared {
    dim: usize,
    model_json: String,
    mailbox: mpsc::UnboundedSender<Inbound>,
    frames: broadcast::Sender<Frame>,
    latest: watch::Receiver<Option<Frame>>,
}

pub struct RunningServer {
    pub addr: SocketAddr,
    handle: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    /// Waits for the HTTP server to exit.
    pub async fn wait(self) -> Result<(), ServiceError> {
        match self.handle.await {
            Ok(r) => r.map_err(ServiceError::Io),
            Err(e) => Err(ServiceError::Io(std::io::Error::other(e))),
        }
    }

    pub fn abort(&self) {
        self.handle.abort();
    }
}

/// Binds `addr` and starts the control loop and HTTP server in the
/// background.
pub async fn spawn(model: ClusterModel, cfg: ServiceConfig, addr: SocketAddr) -> Result<RunningServer, ServiceError> {
    if cfg.tick_ms == 0 {
        return Err(ServiceError::Model(CalmError::InvalidArgument {
            field: "tick_ms",
            reason: "must be > 0".into(),
        }));
    }
    let model_json = model_to_json(&model);
    let dim = model.dim();
    let session = Session::new(model, &cfg.session).map_err(ServiceError::Model)?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(ServiceError::Io)?;
    let addr = listener.local_addr().map_err(ServiceError::Io)?;

    let (mailbox, inbox) = mpsc::unbounded_channel();
    let (frames, _) = broadcast::channel(256);
    let (latest_tx, latest) = watch::channel(None);
    tokio::spawn(control_loop(session, cfg.tick_ms, inbox, frames.clone(), latest_tx));

    let shared = Arc::new(Shared {
        dim,
        model_json,
        mailbox,
        frames,
        latest,
    });
    let app = Router::new()
        .route("/ws", get(ws_handler))
        .route("/model", get(model_handler))
        .route("/health", get(|| async { "ok" }))
        .route("/log", get(log_handler))
        .with_state(shared);
    log::info!("listening on {addr}");
    let handle = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok(RunningServer { addr, handle })
}

/// Runs the server until it fails.
pub async fn serve(model: ClusterModel, cfg: ServiceConfig, addr: SocketAddr) -> Result<(), ServiceError> {
    spawn(model, cfg, addr).await?.wait().await
}

async fn control_loop(
    mut session: Session,
    tick_ms: u64,
    mut inbox: mpsc::UnboundedReceiver<Inbound>,
    frames: broadcast::Sender<Frame>,
    latest: watch::Sender<Option<Frame>>,
) {
    let mut interval = tokio::time::interval(Duration::from_millis(tick_ms));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let mut seq = 0u64;
    loop {
        tokio::select! {
            msg = inbox.recv() => match msg {
                Some(Inbound::Command(cmd, reply)) => {
                    if let Err(e) = session.handle(cmd) {
                        let field = match &e {
                            CalmError::InvalidArgument { field, .. } | CalmError::DimensionMismatch { field, .. } => field.to_string(),
                            _ => "payload".to_string(),
                        };
                        let _ = reply.send(ErrorFrame::new(field, e.to_string()).to_json().into());
                    }
                }
                Some(Inbound::Log(reply)) => {
                    let _ = reply.send(session.segments().to_vec());
                }
                None => break,
            },
            _ = interval.tick() => match session.tick() {
                Ok(Some(msg)) => {
                    seq += 1;
                    let text: Arc<str> = serde_json::to_string(&msg).expect("message serializes").into();
                    latest.send_replace(Some((seq, text.clone())));
                    let _ = frames.send((seq, text));
                }
                Ok(None) => {}
                Err(e) => {
                    log::error!("rollout step failed, pausing: {e}");
                    session.pause();
                }
            },
        }
    }
}

async fn model_handler(State(s): State<Arc<Shared>>) -> Response {
    (
        [
            (header::CONTENT_TYPE, "application/json"),
            (header::ACCESS_CONTROL_ALLOW_ORIGIN, "*"),
        ],
        s.model_json.clone(),
    )
        .into_response()
}

async fn log_handler(State(s): State<Arc<Shared>>) -> Response {
    let (tx, rx) = oneshot::channel();
    if s.mailbox.send(Inbound::Log(tx)).is_err() {
        return axum::http::StatusCode::SERVICE_UNAVAILABLE.into_response();
    }
    match rx.await {
        Ok(segments) => Json(segments).into_response(),
        Err(_) => axum::http::StatusCode::SERVICE_UNAVAILABLE.into_response(),
    }
}

async fn ws_handler(ws: WebSocketUpgrade, State(s): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| client(socket, s))
}

async fn client(socket: WebSocket, s: Arc<Shared>) {
    let (mut sink, mut stream) = socket.split();
    let mut frames = s.frames.subscribe();
    let (direct_tx, mut direct) = mpsc::unbounded_channel::<Arc<str>>();
    // Late joiners get the most recent snapshot first.
    let snapshot = s.latest.borrow().clone();
    let mut seen = 0u64;
    if let Some((seq, text)) = snapshot {
        seen = seq;
        if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            f = frames.recv() => match f {
                Ok((seq, text)) => {
                    if seq <= seen {
                        continue;
                    }
                    seen = seq;
                    if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("client lagged by {n} frames"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            Some(text) = direct.recv() => {
                if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                    break;
                }
            }
            m = stream.next() => match m {
                Some(Ok(Message::Text(text))) => match parse_command(text.as_str(), s.dim) {
                    Ok(cmd) => {
                        let _ = s.mailbox.send(Inbound::Command(cmd, direct_tx.clone()));
                    }
                    Err(e) => {
                        if sink.send(Message::Text(e.to_json().into())).await.is_err() {
                            break;
                        }
                    }
                },
                Some(Ok(Message::Binary(_))) => {
                    let e = ErrorFrame::new("json", "binary frames are not supported");
                    if sink.send(Message::Text(e.to_json().into())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
        }
    }
}
