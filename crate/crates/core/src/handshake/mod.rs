//! UE (initiator) and N3IWF (responder) state machines for NWu connection
//! establishment: IKE_SA_INIT, a multi-round IKE_AUTH carrying an EAP-5G
//! stub, and CREATE_CHILD_SA for every Child SA after the first.

mod driver;
pub mod eap;
mod initiator;
mod responder;
mod wire;

pub use driver::{
    probe_sas, run_full_handshake, run_with_transports, HandshakeSetup, KmsEndpoints, TransportSpec,
};
pub use eap::EapRoundPlan;
pub use initiator::{Initiator, InitiatorStep};
pub use responder::{Rejection, Responder, ResponderStep};
pub use wire::{message_label, Outgoing};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::codec::{CodecError, KeyIdEncoding};
use crate::keys::{ChildSaKeys, CryptoCounts, IkeSaKeys, KeyAssignmentPlan, KeyError};
use crate::kms::{KmsError, SaeId};
use crate::transport::{TransportError, WireRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "DH_PSK")]
    DhPsk,
    #[serde(rename = "DH_CERT")]
    DhCert,
    #[serde(rename = "QKD")]
    Qkd,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::DhPsk, Mode::DhCert, Mode::Qkd];

    pub fn label(self) -> &'static str {
        match self {
            Mode::DhPsk => "DH_PSK",
            Mode::DhCert => "DH_CERT",
            Mode::Qkd => "QKD",
        }
    }

    pub fn is_classical(self) -> bool {
        self != Mode::Qkd
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "DH_PSK" | "PSK" => Ok(Mode::DhPsk),
            "DH_CERT" | "CERT" => Ok(Mode::DhCert),
            "QKD" => Ok(Mode::Qkd),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Init,
    Auth,
    ChildSa,
    Established,
    Failed,
}

impl Phase {
    /// The three timed phases.
    pub const TIMED: [Phase; 3] = [Phase::Init, Phase::Auth, Phase::ChildSa];

    pub fn label(self) -> &'static str {
        match self {
            Phase::Init => "INIT",
            Phase::Auth => "AUTH",
            Phase::ChildSa => "CHILD_SA",
            Phase::Established => "ESTABLISHED",
            Phase::Failed => "FAILED",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaPlan {
    /// Control plane plus user plane by default.
    pub child_sa_count: usize,
}

impl Default for SaPlan {
    fn default() -> Self {
        SaPlan { child_sa_count: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetransmitPolicy {
    pub timeout_ms: u64,
    /// Total sends of one request, including the first.
    pub tries: u32,
}

impl Default for RetransmitPolicy {
    fn default() -> Self {
        RetransmitPolicy {
            timeout_ms: 500,
            tries: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMessage {
    Request,
    Response,
}

/// Deliberate faults for negative testing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultInjection {
    /// Initiator flips a bit of its AUTH data.
    pub tamper_auth: bool,
    /// Flip one byte of the stored copy of an INIT message after it was
    /// processed: the request at the responder, or the response at the
    /// initiator. The index wraps around the message length.
    pub tamper_init_transcript: Option<(InitMessage, usize)>,
    /// Responder answers this EAP round (1-based) with EAP-Failure.
    pub eap_failure_round: Option<usize>,
    /// Initiator offers a DH transform and KE payload even in QKD mode.
    pub offer_dh_in_qkd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandshakeConfig {
    pub mode: Mode,
    pub sa_plan: SaPlan,
    pub eap: EapRoundPlan,
    /// Extra keys requested beyond the plan (13 + 2 = 15 for the alternative count).
    pub spare_keys: usize,
    pub key_id_encoding: KeyIdEncoding,
    pub nonce_len: usize,
    pub dh_private_bits: u64,
    pub psk: String,
    pub ue_id: String,
    pub n3iwf_id: String,
    pub ue_sae: SaeId,
    pub n3iwf_sae: SaeId,
    pub retransmit: RetransmitPolicy,
    /// Fixed seed for SPIs, nonces, IVs and DH exponents; entropy when absent.
    pub seed: Option<u64>,
    pub faults: FaultInjection,
}

impl Default for HandshakeConfig {
    fn default() -> Self {
        HandshakeConfig {
            mode: Mode::Qkd,
            sa_plan: SaPlan::default(),
            eap: EapRoundPlan::default(),
            spare_keys: 0,
            key_id_encoding: KeyIdEncoding::default(),
            nonce_len: 32,
            dh_private_bits: 256,
            psk: "nwu-lab-preshared-key".into(),
            ue_id: "ue.nwu.lab".into(),
            n3iwf_id: "n3iwf.nwu.lab".into(),
            ue_sae: SaeId::new("UE-001").expect("non-empty"),
            n3iwf_sae: SaeId::new("N3IWF-001").expect("non-empty"),
            retransmit: RetransmitPolicy::default(),
            seed: None,
            faults: FaultInjection::default(),
        }
    }
}

impl HandshakeConfig {
    pub fn for_mode(mode: Mode) -> Self {
        HandshakeConfig {
            mode,
            ..Default::default()
        }
    }

    /// Slot layout of the QKD key container for this configuration.
    pub fn key_plan(&self) -> KeyAssignmentPlan {
        KeyAssignmentPlan {
            child_sa_count: self.sa_plan.child_sa_count,
            psk_auth: true,
            spare_keys: self.spare_keys,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.sa_plan.child_sa_count < 1 {
            return Err("child_sa_count must be at least 1".into());
        }
        if self.eap.round_count < 1 {
            return Err("EAP round_count must be at least 1".into());
        }
        if !(16..=256).contains(&self.nonce_len) {
            return Err("nonce_len must be within 16..=256".into());
        }
        if self.psk.is_empty() {
            return Err("psk must not be empty".into());
        }
        if self.retransmit.tries == 0 {
            return Err("retransmit tries must be at least 1".into());
        }
        Ok(())
    }

    /// Message ID of the final IKE_AUTH exchange.
    pub fn final_auth_mid(&self) -> u32 {
        1 + self.eap.round_count as u32
    }

    pub fn message_count(&self) -> usize {
        2 * (1 + self.eap.round_count + 1 + (self.sa_plan.child_sa_count - 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureKind {
    Protocol,
    NoProposalChosen,
    AuthenticationFailed,
    /// The KMS had too few keys; retryable.
    KmsUnavailable,
    Kms,
    KeyPlan,
    EapFailure,
    /// The peer answered with an error notify.
    PeerError(u16),
    Transport,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{phase} phase failed ({kind:?}): {detail}")]
pub struct HandshakeError {
    pub kind: FailureKind,
    pub phase: Phase,
    pub detail: String,
}

impl HandshakeError {
    pub fn new(kind: FailureKind, phase: Phase, detail: impl Into<String>) -> Self {
        HandshakeError {
            kind,
            phase,
            detail: detail.into(),
        }
    }

    pub(crate) fn codec(phase: Phase, e: CodecError) -> Self {
        Self::new(FailureKind::Protocol, phase, e.to_string())
    }

    pub(crate) fn kms(phase: Phase, e: KmsError) -> Self {
        let kind = if e.is_retryable() {
            FailureKind::KmsUnavailable
        } else {
            FailureKind::Kms
        };
        Self::new(kind, phase, e.to_string())
    }

    pub(crate) fn keys(phase: Phase, e: KeyError) -> Self {
        let kind = match e {
            KeyError::AuthenticationFailed(_) => FailureKind::AuthenticationFailed,
            KeyError::PlanMismatch { .. }
            | KeyError::PlanExhausted(_)
            | KeyError::KeyTooShort { .. } => FailureKind::KeyPlan,
            _ => FailureKind::Protocol,
        };
        Self::new(kind, phase, e.to_string())
    }

    pub(crate) fn transport(phase: Phase, e: TransportError) -> Self {
        let kind = match e {
            TransportError::Timeout => FailureKind::Timeout,
            _ => FailureKind::Transport,
        };
        Self::new(kind, phase, e.to_string())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct ChildSa {
    pub spi_i: [u8; 4],
    pub spi_r: [u8; 4],
    pub keys: ChildSaKeys,
}

impl fmt::Debug for ChildSa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChildSa")
            .field("spi_i", &self.spi_i)
            .field("spi_r", &self.spi_r)
            .field("keys", &self.keys)
            .finish()
    }
}

/// Everything one peer ends up holding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaKeySet {
    pub ike: IkeSaKeys,
    pub children: Vec<ChildSa>,
}

impl SaKeySet {
    pub fn fingerprints(&self) -> KeyFingerprints {
        KeyFingerprints {
            ike: self.ike.fingerprint(),
            children: self.children.iter().map(|c| c.keys.fingerprint()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFingerprints {
    pub ike: String,
    pub children: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: Phase,
    pub start_ns: u64,
    pub end_ns: u64,
}

impl PhaseTiming {
    pub fn duration_ms(&self) -> f64 {
        (self.end_ns - self.start_ns) as f64 / 1e6
    }
}

/// Crypto operations per timed phase for one peer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseCounts {
    pub init: CryptoCounts,
    pub auth: CryptoCounts,
    pub child_sa: CryptoCounts,
}

impl PhaseCounts {
    pub fn total(&self) -> CryptoCounts {
        self.init + self.auth + self.child_sa
    }

    pub(crate) fn add(&mut self, phase: Phase, c: CryptoCounts) {
        match phase {
            Phase::Init => self.init = self.init + c,
            Phase::Auth => self.auth = self.auth + c,
            _ => self.child_sa = self.child_sa + c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KmsCallKind {
    GetKeys,
    GetKeysById,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KmsCall {
    pub kind: KmsCallKind,
    /// Keys requested.
    pub count: usize,
    pub key_ids: Vec<Uuid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum HandshakeStatus {
    Success,
    Failed(HandshakeError),
}

impl HandshakeStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, HandshakeStatus::Success)
    }
}

#[derive(Debug, Clone)]
pub struct HandshakeResult {
    pub mode: Mode,
    pub status: HandshakeStatus,
    /// Contiguous INIT, AUTH, CHILD_SA intervals on the initiator clock;
    /// only the phases that were entered.
    pub phases: Vec<PhaseTiming>,
    pub trace: Vec<WireRecord>,
    /// Sum of the lengths of every encoded message handed to the transport.
    pub encoded_bytes: usize,
    pub initiator_keys: Option<SaKeySet>,
    pub responder_keys: Option<SaKeySet>,
    pub initiator_counts: PhaseCounts,
    pub responder_counts: PhaseCounts,
    pub kms_calls: Vec<KmsCall>,
    /// Key IDs carried in the INIT response, in order.
    pub key_ids: Vec<Uuid>,
    /// Cross-peer seal/open succeeded on every SA in both directions.
    pub probe_ok: bool,
    pub retransmissions: u32,
    pub responder_error: Option<HandshakeError>,
}

impl HandshakeResult {
    pub fn is_success(&self) -> bool {
        self.status.is_success()
    }

    pub fn phase_ms(&self, phase: Phase) -> Option<f64> {
        self.phases
            .iter()
            .find(|p| p.phase == phase)
            .map(PhaseTiming::duration_ms)
    }

    pub fn keys_agree(&self) -> bool {
        match (&self.initiator_keys, &self.responder_keys) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }

    pub fn total_counts(&self) -> CryptoCounts {
        self.initiator_counts.total() + self.responder_counts.total()
    }

    pub fn fingerprints(&self) -> Option<KeyFingerprints> {
        self.initiator_keys.as_ref().map(SaKeySet::fingerprints)
    }
}
