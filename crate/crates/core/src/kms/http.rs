//! REST front end with the resource shapes of the ETSI GS QKD 014 key
//! delivery API.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::{KeyContainer, KmePair, KmeSide, KmsError, QkdKey, SaeId};

pub const DEFAULT_SAE_HEADER: &str = "X-SAE-ID";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct EncKeysRequest {
    #[serde(default = "one")]
    pub number: usize,
    #[serde(default)]
    pub size: Option<u32>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct KeyIdEntry {
    #[serde(rename = "key_ID")]
    pub key_id: Uuid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct DecKeysRequest {
    #[serde(rename = "key_IDs")]
    pub key_ids: Vec<KeyIdEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct KeyJson {
    #[serde(rename = "key_ID")]
    pub key_id: Uuid,
    pub key: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ContainerJson {
    pub keys: Vec<KeyJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ErrorBody {
    pub message: String,
}

impl From<&KeyContainer> for ContainerJson {
    fn from(container: &KeyContainer) -> Self {
        ContainerJson {
            keys: container
                .keys
                .iter()
                .map(|k| KeyJson {
                    key_id: k.key_id,
                    key: BASE64.encode(&k.material),
                })
                .collect(),
        }
    }
}

impl TryFrom<ContainerJson> for KeyContainer {
    type Error = KmsError;

    fn try_from(json: ContainerJson) -> Result<Self, Self::Error> {
        let keys = json
            .keys
            .into_iter()
            .map(|k| {
                let material = BASE64
                    .decode(k.key.as_bytes())
                    .map_err(|e| KmsError::Transport(format!("bad key encoding: {e}")))?;
                Ok(QkdKey {
                    key_id: k.key_id,
                    material,
                })
            })
            .collect::<Result<_, KmsError>>()?;
        Ok(KeyContainer { keys })
    }
}

/// Everything a single KME listener needs.
#[derive(Clone)]
pub struct KmsRouterState {
    pub pair: Arc<KmePair>,
    pub side: KmeSide,
    pub sae_header: String,
}

impl IntoResponse for KmsError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.status_code()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (
            status,
            Json(ErrorBody {
                message: self.to_string(),
            }),
        )
            .into_response()
    }
}

fn requester(state: &KmsRouterState, headers: &HeaderMap) -> Result<SaeId, KmsError> {
    let value = headers
        .get(state.sae_header.as_str())
        .ok_or_else(|| KmsError::Unauthorized(format!("missing {} header", state.sae_header)))?;
    let value = value
        .to_str()
        .map_err(|_| KmsError::Unauthorized("malformed SAE header".into()))?;
    SaeId::new(value).map_err(|_| KmsError::Unauthorized("empty SAE header".into()))
}

fn path_sae(raw: String) -> Result<SaeId, KmsError> {
    SaeId::new(raw)
}

/// Runs a blocking pool operation off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, KmsError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, KmsError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| KmsError::Transport(e.to_string()))?
}

async fn status(
    State(state): State<KmsRouterState>,
    Path(slave): Path<String>,
    headers: HeaderMap,
) -> Result<Json<super::KmeStatus>, KmsError> {
    let requester = requester(&state, &headers)?;
    let slave = path_sae(slave)?;
    let status = blocking(move || state.pair.get_status(state.side, &requester, &slave)).await?;
    Ok(Json(status))
}

async fn enc_keys(
    State(state): State<KmsRouterState>,
    Path(slave): Path<String>,
    headers: HeaderMap,
    body: Option<Json<EncKeysRequest>>,
) -> Result<Json<ContainerJson>, KmsError> {
    let requester = requester(&state, &headers)?;
    let slave = path_sae(slave)?;
    let req = body.map(|Json(b)| b).unwrap_or(EncKeysRequest {
        number: 1,
        size: None,
    });
    let size = req.size.unwrap_or(state.pair.config().key_size_bits);
    let container = blocking(move || {
        state
            .pair
            .get_keys(state.side, &requester, &slave, req.number, size)
    })
    .await?;
    Ok(Json(ContainerJson::from(&container)))
}

async fn dec_keys(
    State(state): State<KmsRouterState>,
    Path(master): Path<String>,
    headers: HeaderMap,
    Json(req): Json<DecKeysRequest>,
) -> Result<Json<ContainerJson>, KmsError> {
    let requester = requester(&state, &headers)?;
    let master = path_sae(master)?;
    let ids: Vec<Uuid> = req.key_ids.into_iter().map(|e| e.key_id).collect();
    let container = blocking(move || {
        state
            .pair
            .get_keys_by_id(state.side, &requester, &master, &ids)
    })
    .await?;
    Ok(Json(ContainerJson::from(&container)))
}

pub fn router(state: KmsRouterState) -> Router {
    Router::new()
        .route("/api/v1/keys/{sae}/status", get(status))
        .route("/api/v1/keys/{sae}/enc_keys", post(enc_keys))
        .route("/api/v1/keys/{sae}/dec_keys", post(dec_keys))
        .with_state(state)
}

/// Serves one KME on an already bound listener until the task is dropped.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: KmsRouterState,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Both KMEs of a pair served from a background runtime.
pub struct KmsServers {
    pub addrs: [SocketAddr; 2],
    runtime: Option<tokio::runtime::Runtime>,
}

impl KmsServers {
    /// Binds one listener per KME (port 0 picks a free port) and starts serving.
    pub fn start(
        pair: Arc<KmePair>,
        binds: [SocketAddr; 2],
        sae_header: &str,
    ) -> std::io::Result<KmsServers> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let mut addrs = binds;
        for (i, side) in [KmeSide::A, KmeSide::B].into_iter().enumerate() {
            let listener = runtime.block_on(tokio::net::TcpListener::bind(binds[i]))?;
            addrs[i] = listener.local_addr()?;
            let state = KmsRouterState {
                pair: Arc::clone(&pair),
                side,
                sae_header: sae_header.to_string(),
            };
            runtime.spawn(async move {
                if let Err(e) = serve(listener, state).await {
                    log::error!("kms listener stopped: {e}");
                }
            });
        }
        Ok(KmsServers {
            addrs,
            runtime: Some(runtime),
        })
    }

    pub fn base_url(&self, side: KmeSide) -> String {
        let addr = match side {
            KmeSide::A => self.addrs[0],
            KmeSide::B => self.addrs[1],
        };
        format!("http://{addr}")
    }
}

impl Drop for KmsServers {
    fn drop(&mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}
