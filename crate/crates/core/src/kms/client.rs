use std::sync::Arc;

use uuid::Uuid;

use super::http::{ContainerJson, DecKeysRequest, EncKeysRequest, ErrorBody, KeyIdEntry};
use super::{KeyContainer, KmePair, KmeSide, KmeStatus, KmsError, SaeId};

/// Key-delivery operations as seen by one SAE talking to its local KME.
pub trait KmsClient: Send + Sync {
    fn sae_id(&self) -> &SaeId;

    fn status(&self, slave: &SaeId) -> Result<KmeStatus, KmsError>;

    /// "Get key": reserve fresh keys shared with `slave`.
    fn get_keys(
        &self,
        slave: &SaeId,
        number: usize,
        size_bits: u32,
    ) -> Result<KeyContainer, KmsError>;

    /// "Get key with ID": collect keys reserved by `master`.
    fn get_keys_by_id(&self, master: &SaeId, key_ids: &[Uuid]) -> Result<KeyContainer, KmsError>;
}

/// Direct in-process access to one side of a [`KmePair`].
#[derive(Debug, Clone)]
pub struct LocalKmsClient {
    pair: Arc<KmePair>,
    side: KmeSide,
    sae: SaeId,
}

impl LocalKmsClient {
    pub fn new(pair: Arc<KmePair>, side: KmeSide, sae: SaeId) -> Self {
        LocalKmsClient { pair, side, sae }
    }
}

impl KmsClient for LocalKmsClient {
    fn sae_id(&self) -> &SaeId {
        &self.sae
    }

    fn status(&self, slave: &SaeId) -> Result<KmeStatus, KmsError> {
        self.pair.get_status(self.side, &self.sae, slave)
    }

    fn get_keys(
        &self,
        slave: &SaeId,
        number: usize,
        size_bits: u32,
    ) -> Result<KeyContainer, KmsError> {
        self.pair
            .get_keys(self.side, &self.sae, slave, number, size_bits)
    }

    fn get_keys_by_id(&self, master: &SaeId, key_ids: &[Uuid]) -> Result<KeyContainer, KmsError> {
        self.pair
            .get_keys_by_id(self.side, &self.sae, master, key_ids)
    }
}

/// Blocking REST client for a KME exposing the key-delivery API.
pub struct HttpKmsClient {
    agent: ureq::Agent,
    base_url: String,
    sae: SaeId,
    sae_header: String,
}

impl HttpKmsClient {
    pub fn new(base_url: impl Into<String>, sae: SaeId, sae_header: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        HttpKmsClient {
            agent,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            sae,
            sae_header: sae_header.into(),
        }
    }

    fn url(&self, sae: &SaeId, resource: &str) -> String {
        format!("{}/api/v1/keys/{}/{}", self.base_url, sae, resource)
    }

    fn finish<T: serde::de::DeserializeOwned>(
        mut resp: ureq::http::Response<ureq::Body>,
    ) -> Result<T, KmsError> {
        let status = resp.status().as_u16();
        if status == 200 {
            return resp
                .body_mut()
                .read_json::<T>()
                .map_err(|e| KmsError::Transport(e.to_string()));
        }
        let message = resp
            .body_mut()
            .read_json::<ErrorBody>()
            .map(|b| b.message)
            .unwrap_or_default();
        Err(match status {
            400 => KmsError::BadRequest(message),
            401 => KmsError::Unauthorized(message),
            404 => {
                // The REST body carries only a message; recover the id if present.
                let id = message
                    .split_whitespace()
                    .find_map(|w| Uuid::parse_str(w).ok())
                    .unwrap_or(Uuid::nil());
                KmsError::NotFound(id)
            }
            503 => KmsError::Unavailable {
                requested: 0,
                available: 0,
            },
            other => KmsError::Transport(format!("HTTP {other}: {message}")),
        })
    }
}

impl KmsClient for HttpKmsClient {
    fn sae_id(&self) -> &SaeId {
        &self.sae
    }

    fn status(&self, slave: &SaeId) -> Result<KmeStatus, KmsError> {
        let resp = self
            .agent
            .get(&self.url(slave, "status"))
            .header(self.sae_header.as_str(), self.sae.as_str())
            .call()
            .map_err(|e| KmsError::Transport(e.to_string()))?;
        Self::finish(resp)
    }

    fn get_keys(
        &self,
        slave: &SaeId,
        number: usize,
        size_bits: u32,
    ) -> Result<KeyContainer, KmsError> {
        let resp = self
            .agent
            .post(&self.url(slave, "enc_keys"))
            .header(self.sae_header.as_str(), self.sae.as_str())
            .send_json(&EncKeysRequest {
                number,
                size: Some(size_bits),
            })
            .map_err(|e| KmsError::Transport(e.to_string()))?;
        Self::finish::<ContainerJson>(resp)?.try_into()
    }

    fn get_keys_by_id(&self, master: &SaeId, key_ids: &[Uuid]) -> Result<KeyContainer, KmsError> {
        let body = DecKeysRequest {
            key_ids: key_ids
                .iter()
                .map(|&key_id| KeyIdEntry { key_id })
                .collect(),
        };
        let resp = self
            .agent
            .post(&self.url(master, "dec_keys"))
            .header(self.sae_header.as_str(), self.sae.as_str())
            .send_json(&body)
            .map_err(|e| KmsError::Transport(e.to_string()))?;
        Self::finish::<ContainerJson>(resp)?.try_into()
    }
}
