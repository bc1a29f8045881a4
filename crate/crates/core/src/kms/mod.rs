//! Simulated pair of Key Management Entities joined by a QKD link.
//!
//! Both KMEs of a pair share one key pool. A master SAE reserves keys at its
//! own KME with [`KmePair::get_keys`]; the slave SAE later collects the very
//! same material by ID at the peer KME with [`KmePair::get_keys_by_id`].
//! Every pool mutation happens under a single lock, so requests issued from
//! many sessions at once are linearizable.

mod client;
mod http;

pub use client::{HttpKmsClient, KmsClient, LocalKmsClient};
pub use http::{router, serve, KmsRouterState, KmsServers, DEFAULT_SAE_HEADER};

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

pub const DEFAULT_KEY_SIZE_BITS: u32 = 256;
pub const DEFAULT_MAX_KEY_PER_REQUEST: usize = 128;
pub const DEFAULT_POOL_CAPACITY: usize = 100_000;

/// Identifier of a Secure Application Entity (e.g. "UE-001").
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SaeId(String);

impl SaeId {
    pub fn new(value: impl Into<String>) -> Result<Self, KmsError> {
        let value = value.into();
        if value.is_empty() {
            return Err(KmsError::BadRequest("empty SAE identifier".into()));
        }
        Ok(SaeId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SaeId {
    type Error = KmsError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        SaeId::new(value)
    }
}

impl From<SaeId> for String {
    fn from(id: SaeId) -> String {
        id.0
    }
}

impl fmt::Display for SaeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One QKD key with its identifier.
#[derive(Clone, PartialEq, Eq)]
pub struct QkdKey {
    pub key_id: Uuid,
    pub material: Vec<u8>,
}

impl fmt::Debug for QkdKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QkdKey")
            .field("key_id", &self.key_id)
            .field("bytes", &self.material.len())
            .finish()
    }
}

/// Ordered key list as returned by the key-delivery API.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyContainer {
    pub keys: Vec<QkdKey>,
}

impl KeyContainer {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key_ids(&self) -> Vec<Uuid> {
        self.keys.iter().map(|k| k.key_id).collect()
    }
}

/// Status resource of one KME towards a given slave SAE.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KmeStatus {
    #[serde(rename = "source_KME_ID")]
    pub source_kme_id: String,
    #[serde(rename = "target_KME_ID")]
    pub target_kme_id: String,
    #[serde(rename = "master_SAE_ID")]
    pub master_sae_id: String,
    #[serde(rename = "slave_SAE_ID")]
    pub slave_sae_id: String,
    #[serde(rename = "key_size")]
    pub key_size_bits: u32,
    pub stored_key_count: usize,
    pub max_key_count: usize,
    pub max_key_per_request: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KmsError {
    #[error("request error: {0}")]
    BadRequest(String),
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("key {0} not found")]
    NotFound(Uuid),
    #[error("insufficient keys: requested {requested}, available {available}")]
    Unavailable { requested: usize, available: usize },
    #[error("pool capacity exceeded: {stored} stored + {requested} requested > {capacity}")]
    Capacity {
        stored: usize,
        requested: usize,
        capacity: usize,
    },
    #[error("kms transport: {0}")]
    Transport(String),
}

impl KmsError {
    /// HTTP status used on the REST interface.
    pub fn status_code(&self) -> u16 {
        match self {
            KmsError::BadRequest(_) | KmsError::Capacity { .. } => 400,
            KmsError::Unauthorized(_) => 401,
            KmsError::NotFound(_) => 404,
            KmsError::Unavailable { .. } => 503,
            KmsError::Transport(_) => 502,
        }
    }

    /// Exhaustion is the only condition a client should retry.
    pub fn is_retryable(&self) -> bool {
        matches!(self, KmsError::Unavailable { .. })
    }
}

/// Which of the two KMEs of a pair a request targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KmeSide {
    A,
    B,
}

impl KmeSide {
    pub fn peer(self) -> KmeSide {
        match self {
            KmeSide::A => KmeSide::B,
            KmeSide::B => KmeSide::A,
        }
    }

    fn index(self) -> usize {
        match self {
            KmeSide::A => 0,
            KmeSide::B => 1,
        }
    }
}

/// Source of key material for the simulated link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeySource {
    /// Seeded from the operating system.
    Entropy,
    /// Deterministic stream for tests and repeatable benchmarks.
    Seeded(u64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KmsConfig {
    pub kme_ids: [String; 2],
    /// SAEs attached to KME A and KME B respectively.
    pub saes: [Vec<SaeId>; 2],
    pub key_size_bits: u32,
    pub max_key_per_request: usize,
    pub capacity: usize,
    pub initial_keys: usize,
    pub key_source: KeySource,
    /// Artificial delay applied to every request.
    pub latency_ms: u64,
}

impl Default for KmsConfig {
    fn default() -> Self {
        KmsConfig {
            kme_ids: ["KME-N3IWF".into(), "KME-UE".into()],
            saes: [
                vec![SaeId("N3IWF-001".into())],
                vec![SaeId("UE-001".into())],
            ],
            key_size_bits: DEFAULT_KEY_SIZE_BITS,
            max_key_per_request: DEFAULT_MAX_KEY_PER_REQUEST,
            capacity: DEFAULT_POOL_CAPACITY,
            initial_keys: 1000,
            key_source: KeySource::Entropy,
            latency_ms: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Reservation {
    material: Vec<u8>,
    master: SaeId,
    slave: SaeId,
    issued_by: KmeSide,
}

struct KeyPool {
    pending: VecDeque<QkdKey>,
    reserved: HashMap<Uuid, Reservation>,
    consumed: HashSet<Uuid>,
    rng: ChaCha20Rng,
}

/// Per-KME request counters.
#[derive(Debug, Default)]
pub struct KmeCounters {
    pub status: AtomicU64,
    pub get_keys: AtomicU64,
    pub get_keys_by_id: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KmeCallCounts {
    pub status: u64,
    pub get_keys: u64,
    pub get_keys_by_id: u64,
}

impl KmeCallCounts {
    pub fn key_requests(&self) -> u64 {
        self.get_keys + self.get_keys_by_id
    }
}

impl KmeCounters {
    fn snapshot(&self) -> KmeCallCounts {
        KmeCallCounts {
            status: self.status.load(Ordering::Relaxed),
            get_keys: self.get_keys.load(Ordering::Relaxed),
            get_keys_by_id: self.get_keys_by_id.load(Ordering::Relaxed),
        }
    }
}

/// Two KMEs sharing the pool of a direct QKD link.
pub struct KmePair {
    config: KmsConfig,
    pool: Mutex<KeyPool>,
    counters: [KmeCounters; 2],
}

impl fmt::Debug for KmePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KmePair")
            .field("kme_ids", &self.config.kme_ids)
            .field("stored", &self.stored_key_count())
            .finish()
    }
}

impl KmePair {
    pub fn new(config: KmsConfig) -> Result<Arc<Self>, KmsError> {
        if config.key_size_bits == 0 || !config.key_size_bits.is_multiple_of(8) {
            return Err(KmsError::BadRequest(format!(
                "key size {} is not a positive multiple of 8",
                config.key_size_bits
            )));
        }
        if config.max_key_per_request == 0 {
            return Err(KmsError::BadRequest(
                "max_key_per_request must be positive".into(),
            ));
        }
        let mut seen = HashSet::new();
        for sae in config.saes.iter().flatten() {
            if !seen.insert(sae.clone()) {
                return Err(KmsError::BadRequest(format!("SAE {sae} registered twice")));
            }
        }
        let rng = match config.key_source {
            KeySource::Entropy => ChaCha20Rng::from_entropy(),
            KeySource::Seeded(seed) => ChaCha20Rng::seed_from_u64(seed),
        };
        let initial = config.initial_keys;
        let pair = KmePair {
            pool: Mutex::new(KeyPool {
                pending: VecDeque::new(),
                reserved: HashMap::new(),
                consumed: HashSet::new(),
                rng,
            }),
            counters: Default::default(),
            config,
        };
        if initial > 0 {
            pair.replenish(initial)?;
        }
        Ok(Arc::new(pair))
    }

    pub fn config(&self) -> &KmsConfig {
        &self.config
    }

    pub fn key_size_bytes(&self) -> usize {
        (self.config.key_size_bits / 8) as usize
    }

    fn side_of(&self, sae: &SaeId) -> Option<KmeSide> {
        if self.config.saes[0].contains(sae) {
            Some(KmeSide::A)
        } else if self.config.saes[1].contains(sae) {
            Some(KmeSide::B)
        } else {
            None
        }
    }

    fn authorize(&self, side: KmeSide, requester: &SaeId, peer: &SaeId) -> Result<(), KmsError> {
        if self.side_of(requester) != Some(side) {
            return Err(KmsError::Unauthorized(format!(
                "SAE {requester} is not registered at {}",
                self.config.kme_ids[side.index()]
            )));
        }
        if self.side_of(peer) != Some(side.peer()) {
            return Err(KmsError::Unauthorized(format!(
                "SAE {peer} is not reachable from {}",
                self.config.kme_ids[side.index()]
            )));
        }
        Ok(())
    }

    fn delay(&self) {
        if self.config.latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.config.latency_ms));
        }
    }

    pub fn stored_key_count(&self) -> usize {
        self.pool.lock().pending.len()
    }

    pub fn reserved_key_count(&self) -> usize {
        self.pool.lock().reserved.len()
    }

    pub fn consumed_key_count(&self) -> usize {
        self.pool.lock().consumed.len()
    }

    pub fn call_counts(&self, side: KmeSide) -> KmeCallCounts {
        self.counters[side.index()].snapshot()
    }

    /// Ordered copy of the pending keys as held by one KME.
    pub fn pending_snapshot(&self, _side: KmeSide) -> Vec<QkdKey> {
        // Both KMEs read the same shared store.
        self.pool.lock().pending.iter().cloned().collect()
    }

    pub fn get_status(
        &self,
        side: KmeSide,
        requester: &SaeId,
        slave: &SaeId,
    ) -> Result<KmeStatus, KmsError> {
        self.counters[side.index()]
            .status
            .fetch_add(1, Ordering::Relaxed);
        self.delay();
        self.authorize(side, requester, slave)?;
        Ok(KmeStatus {
            source_kme_id: self.config.kme_ids[side.index()].clone(),
            target_kme_id: self.config.kme_ids[side.peer().index()].clone(),
            master_sae_id: requester.to_string(),
            slave_sae_id: slave.to_string(),
            key_size_bits: self.config.key_size_bits,
            stored_key_count: self.stored_key_count(),
            max_key_count: self.config.capacity,
            max_key_per_request: self.config.max_key_per_request,
        })
    }

    /// Reserves `number` fresh keys for the (requester, slave) pair.
    pub fn get_keys(
        &self,
        side: KmeSide,
        requester: &SaeId,
        slave: &SaeId,
        number: usize,
        size_bits: u32,
    ) -> Result<KeyContainer, KmsError> {
        self.counters[side.index()]
            .get_keys
            .fetch_add(1, Ordering::Relaxed);
        self.delay();
        self.authorize(side, requester, slave)?;
        if number == 0 {
            return Err(KmsError::BadRequest("number must be positive".into()));
        }
        if number > self.config.max_key_per_request {
            return Err(KmsError::BadRequest(format!(
                "number {number} exceeds max_key_per_request {}",
                self.config.max_key_per_request
            )));
        }
        if size_bits != self.config.key_size_bits {
            return Err(KmsError::BadRequest(format!(
                "unsupported key size {size_bits}, pool holds {}-bit keys",
                self.config.key_size_bits
            )));
        }

        let mut pool = self.pool.lock();
        if pool.pending.len() < number {
            return Err(KmsError::Unavailable {
                requested: number,
                available: pool.pending.len(),
            });
        }
        let keys: Vec<QkdKey> = pool.pending.drain(..number).collect();
        for key in &keys {
            pool.reserved.insert(
                key.key_id,
                Reservation {
                    material: key.material.clone(),
                    master: requester.clone(),
                    slave: slave.clone(),
                    issued_by: side,
                },
            );
        }
        Ok(KeyContainer { keys })
    }

    /// Delivers previously reserved keys to the slave SAE, in request order.
    ///
    /// The call is all-or-nothing: if any ID is rejected no key is consumed.
    pub fn get_keys_by_id(
        &self,
        side: KmeSide,
        requester: &SaeId,
        master: &SaeId,
        key_ids: &[Uuid],
    ) -> Result<KeyContainer, KmsError> {
        self.counters[side.index()]
            .get_keys_by_id
            .fetch_add(1, Ordering::Relaxed);
        self.delay();
        self.authorize(side, requester, master)?;

        let mut pool = self.pool.lock();
        let mut unique = HashSet::with_capacity(key_ids.len());
        for id in key_ids {
            let reservation = pool.reserved.get(id).ok_or(KmsError::NotFound(*id))?;
            if reservation.issued_by == side
                || &reservation.master != master
                || &reservation.slave != requester
            {
                return Err(KmsError::Unauthorized(format!(
                    "key {id} is not reserved for {master} -> {requester}"
                )));
            }
            if !unique.insert(*id) {
                return Err(KmsError::BadRequest(format!("key {id} requested twice")));
            }
        }
        let keys = key_ids
            .iter()
            .map(|id| {
                let reservation = pool.reserved.remove(id).expect("checked above");
                pool.consumed.insert(*id);
                QkdKey {
                    key_id: *id,
                    material: reservation.material,
                }
            })
            .collect();
        Ok(KeyContainer { keys })
    }

    /// Appends `count` fresh keys to the shared pool, as produced by the link.
    pub fn replenish(&self, count: usize) -> Result<usize, KmsError> {
        if count == 0 {
            return Err(KmsError::BadRequest(
                "replenish count must be positive".into(),
            ));
        }
        let key_bytes = self.key_size_bytes();
        let mut pool = self.pool.lock();
        let stored = pool.pending.len();
        if stored + count > self.config.capacity {
            return Err(KmsError::Capacity {
                stored,
                requested: count,
                capacity: self.config.capacity,
            });
        }
        for _ in 0..count {
            let mut id_bytes = [0u8; 16];
            pool.rng.fill_bytes(&mut id_bytes);
            let key_id = uuid::Builder::from_random_bytes(id_bytes).into_uuid();
            let mut material = vec![0u8; key_bytes];
            pool.rng.fill_bytes(&mut material);
            pool.pending.push_back(QkdKey { key_id, material });
        }
        Ok(pool.pending.len())
    }

    /// Tops the pool up at a constant rate until `stop` is set.
    pub fn spawn_generator(
        self: &Arc<Self>,
        keys_per_second: u32,
        stop: Arc<std::sync::atomic::AtomicBool>,
    ) -> std::thread::JoinHandle<()> {
        let pair = Arc::clone(self);
        std::thread::spawn(move || {
            let period = Duration::from_secs(1) / keys_per_second.max(1);
            while !stop.load(Ordering::Relaxed) {
                std::thread::sleep(period);
                if pair.stored_key_count() < pair.config.capacity {
                    let _ = pair.replenish(1);
                }
            }
        })
    }
}
