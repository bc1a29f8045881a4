use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use uuid::Uuid;

use super::eap::{self, CODE_FAILURE, CODE_REQUEST, CODE_RESPONSE, CODE_SUCCESS};
use super::wire::{self, find_payload, Outgoing};
use super::{
    ChildSa, FailureKind, HandshakeConfig, HandshakeError, InitMessage, KmsCall, KmsCallKind, Mode,
    Phase, PhaseCounts, SaKeySet,
};
use crate::codec::{
    self, id_type, notify_type, parse_key_ids, AuthPayload, CertPayload, EapPayload, ExchangeType,
    IdPayload, IkeHeader, KePayload, KeyIdEncoding, NoncePayload, Payload, CERT_X509_SIGNATURE,
};
use crate::keys::{
    self, assign_qkd_keys, compute_auth, derive_classical_child_keys, derive_classical_ike_keys,
    dh_keypair, dh_shared_secret, signed_octets, verify_auth, AuthSecret, DhGroup, DhKeyPair,
    IkeSaKeys, LocalCredential, PeerCredential, QkdKeyAssignment, SigningIdentity,
};
use crate::kms::KmsClient;
use crate::transport::Direction;

const DIR: Direction = Direction::InitiatorToResponder;

/// What the driver should do after feeding a message to the initiator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitiatorStep {
    Send(Outgoing),
    /// Not the awaited response (a stale duplicate); keep waiting.
    Ignore,
    Done,
}

enum Awaiting {
    InitResponse,
    Auth(u32),
    Child(u32),
    Nothing,
}

struct PendingChild {
    spi_i: [u8; 4],
    nonce_i: Option<Vec<u8>>,
}

/// The UE side.
pub struct Initiator {
    config: HandshakeConfig,
    kms: Option<Arc<dyn KmsClient>>,
    rng: ChaCha20Rng,
    group: DhGroup,
    phase: Phase,
    awaiting: Awaiting,
    spi_i: [u8; 8],
    spi_r: [u8; 8],
    nonce_i: Vec<u8>,
    nonce_r: Vec<u8>,
    dh: Option<DhKeyPair>,
    init_request: Vec<u8>,
    init_response: Vec<u8>,
    ike: Option<IkeSaKeys>,
    qkd: Option<QkdKeyAssignment>,
    key_ids: Vec<Uuid>,
    id_i: IdPayload,
    id_r: Option<IdPayload>,
    children: Vec<ChildSa>,
    pending: Option<PendingChild>,
    last_request: Option<Outgoing>,
    counts: PhaseCounts,
    kms_calls: Vec<KmsCall>,
}

impl Initiator {
    pub fn new(
        config: &HandshakeConfig,
        kms: Option<Arc<dyn KmsClient>>,
    ) -> Result<Self, HandshakeError> {
        config
            .validate()
            .map_err(|e| HandshakeError::new(FailureKind::Protocol, Phase::Init, e))?;
        if config.mode == Mode::Qkd && kms.is_none() {
            return Err(HandshakeError::new(
                FailureKind::Kms,
                Phase::Init,
                "QKD mode needs a KMS client",
            ));
        }
        let rng = match config.seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s.wrapping_mul(2)),
            None => ChaCha20Rng::from_entropy(),
        };
        Ok(Initiator {
            group: DhGroup::modp2048_with_exponent_bits(config.dh_private_bits),
            id_i: IdPayload {
                id_type: id_type::FQDN,
                value: config.ue_id.as_bytes().to_vec(),
            },
            config: config.clone(),
            kms,
            rng,
            phase: Phase::Init,
            awaiting: Awaiting::Nothing,
            spi_i: [0; 8],
            spi_r: [0; 8],
            nonce_i: Vec::new(),
            nonce_r: Vec::new(),
            dh: None,
            init_request: Vec::new(),
            init_response: Vec::new(),
            ike: None,
            qkd: None,
            key_ids: Vec::new(),
            id_r: None,
            children: Vec::new(),
            pending: None,
            last_request: None,
            counts: PhaseCounts::default(),
            kms_calls: Vec::new(),
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn spi(&self) -> [u8; 8] {
        self.spi_i
    }

    pub fn nonce(&self) -> &[u8] {
        &self.nonce_i
    }

    pub fn key_ids(&self) -> &[Uuid] {
        &self.key_ids
    }

    pub fn counts(&self) -> PhaseCounts {
        self.counts
    }

    pub fn kms_calls(&self) -> &[KmsCall] {
        &self.kms_calls
    }

    /// The request currently awaiting a response, for retransmission.
    pub fn last_request(&self) -> Option<&Outgoing> {
        self.last_request.as_ref()
    }

    pub fn ike_keys(&self) -> Option<&IkeSaKeys> {
        self.ike.as_ref()
    }

    pub fn keys(&self) -> Option<SaKeySet> {
        Some(SaKeySet {
            ike: self.ike.clone()?,
            children: self.children.clone(),
        })
    }

    fn fail(&mut self, e: HandshakeError) -> HandshakeError {
        self.phase = Phase::Failed;
        self.awaiting = Awaiting::Nothing;
        e
    }

    fn counted<T>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, HandshakeError>,
    ) -> Result<T, HandshakeError> {
        let phase = self.phase;
        let before = keys::metrics::snapshot();
        let out = f(self);
        self.counts.add(phase, keys::metrics::snapshot() - before);
        out.map_err(|e| self.fail(e))
    }

    /// Builds the IKE_SA_INIT request.
    pub fn start(&mut self) -> Result<Outgoing, HandshakeError> {
        if self.phase != Phase::Init || !matches!(self.awaiting, Awaiting::Nothing) {
            return Err(HandshakeError::new(
                FailureKind::Protocol,
                self.phase,
                "session already started",
            ));
        }
        self.counted(|s| s.build_init())
    }

    fn build_init(&mut self) -> Result<Outgoing, HandshakeError> {
        self.spi_i = wire::nonzero_spi(&mut self.rng);
        self.nonce_i = wire::random_bytes(&mut self.rng, self.config.nonce_len);
        let classical = self.config.mode.is_classical() || self.config.faults.offer_dh_in_qkd;
        let mut payloads = vec![Payload::Sa(wire::ike_proposal(classical))];
        if classical {
            let kp = dh_keypair(&self.group, &mut self.rng);
            payloads.push(Payload::Ke(KePayload {
                dh_group: self.group.id,
                public_value: self.group.encode(&kp.public),
            }));
            self.dh = Some(kp);
        }
        payloads.push(Payload::Nonce(NoncePayload {
            nonce: self.nonce_i.clone(),
        }));
        let header = wire::header(self.spi_i, [0; 8], ExchangeType::IkeSaInit, true, false, 0);
        let bytes = codec::encode(&codec::IkeMessage { header, payloads })
            .map_err(|e| HandshakeError::codec(Phase::Init, e))?;
        self.init_request = bytes.clone();
        self.awaiting = Awaiting::InitResponse;
        Ok(self.remember(ExchangeType::IkeSaInit, 0, bytes))
    }

    fn remember(&mut self, exchange: ExchangeType, mid: u32, bytes: Vec<u8>) -> Outgoing {
        let out = Outgoing {
            label: wire::message_label(exchange, mid, DIR),
            bytes,
            message_id: mid,
        };
        self.last_request = Some(out.clone());
        out
    }

    /// Feeds one received message.
    pub fn handle(&mut self, bytes: &[u8]) -> Result<InitiatorStep, HandshakeError> {
        match self.awaiting {
            Awaiting::InitResponse => self.counted(|s| s.on_init_response(bytes)),
            Awaiting::Auth(mid) => self.counted(|s| s.on_auth_response(mid, bytes)),
            Awaiting::Child(mid) => self.counted(|s| s.on_child_response(mid, bytes)),
            Awaiting::Nothing => Ok(InitiatorStep::Ignore),
        }
    }

    fn on_init_response(&mut self, bytes: &[u8]) -> Result<InitiatorStep, HandshakeError> {
        let phase = Phase::Init;
        let msg = match codec::decode(bytes) {
            Ok(m) => m,
            Err(e) => return Err(HandshakeError::codec(phase, e)),
        };
        let h = msg.header;
        if h.exchange != ExchangeType::IkeSaInit
            || !h.flags.response
            || h.flags.initiator
            || h.message_id != 0
            || h.initiator_spi != self.spi_i
        {
            return Ok(InitiatorStep::Ignore);
        }
        if let Some(code) = wire::error_in(&msg.payloads) {
            return Err(peer_error(phase, code));
        }
        let protocol =
            |what: &str| HandshakeError::new(FailureKind::Protocol, phase, what.to_owned());
        if h.responder_spi == [0; 8] {
            return Err(protocol("zero responder SPI"));
        }
        let sa = find_payload!(msg.payloads, Payload::Sa).ok_or_else(|| protocol("missing SA"))?;
        wire::select_ike_proposal(sa, self.config.mode.is_classical())
            .map_err(|_| protocol("responder chose an unoffered proposal"))?;
        let nonce =
            find_payload!(msg.payloads, Payload::Nonce).ok_or_else(|| protocol("missing Nonce"))?;
        self.spi_r = h.responder_spi;
        self.nonce_r = nonce.nonce.clone();

        if self.config.mode.is_classical() {
            let ke =
                find_payload!(msg.payloads, Payload::Ke).ok_or_else(|| protocol("missing KE"))?;
            if ke.dh_group != self.group.id || ke.public_value.len() != self.group.value_len() {
                return Err(protocol("KE group mismatch"));
            }
            let dh = self
                .dh
                .take()
                .ok_or_else(|| protocol("no local DH value"))?;
            let peer = num_bigint::BigUint::from_bytes_be(&ke.public_value);
            let secret = dh_shared_secret(&dh.private, &peer, &self.group)
                .map_err(|e| HandshakeError::keys(phase, e))?;
            let ike = derive_classical_ike_keys(
                &secret,
                &self.nonce_i,
                &self.nonce_r,
                &self.spi_i,
                &self.spi_r,
            )
            .map_err(|e| HandshakeError::keys(phase, e))?;
            self.ike = Some(ike);
        } else {
            let notify = msg
                .payloads
                .iter()
                .find_map(|p| match p {
                    Payload::Notify(n)
                        if KeyIdEncoding::from_notify_type(n.notify_type).is_some() =>
                    {
                        Some(n)
                    }
                    _ => None,
                })
                .ok_or_else(|| protocol("missing key-ID notify"))?;
            let ids = parse_key_ids(notify).map_err(|e| protocol(&e.to_string()))?;
            let plan = self.config.key_plan();
            if ids.len() != plan.slot_count() {
                // Local policy: never fetch a key count that does not match our plan.
                return Err(HandshakeError::new(
                    FailureKind::KeyPlan,
                    phase,
                    format!(
                        "responder announced {} key IDs, plan needs {}",
                        ids.len(),
                        plan.slot_count()
                    ),
                ));
            }
            let kms = self.kms.clone().expect("checked at construction");
            self.kms_calls.push(KmsCall {
                kind: KmsCallKind::GetKeysById,
                count: ids.len(),
                key_ids: ids.clone(),
            });
            let container = kms
                .get_keys_by_id(&self.config.n3iwf_sae, &ids)
                .map_err(|e| HandshakeError::kms(phase, e))?;
            if container.key_ids() != ids {
                return Err(protocol("KMS returned keys out of order"));
            }
            let assignment =
                assign_qkd_keys(&container, &plan).map_err(|e| HandshakeError::keys(phase, e))?;
            self.ike = Some(assignment.ike.clone());
            self.qkd = Some(assignment);
            self.key_ids = ids;
        }

        self.init_response = bytes.to_vec();
        if let Some((InitMessage::Response, index)) = self.config.faults.tamper_init_transcript {
            let i = index % self.init_response.len();
            self.init_response[i] ^= 0x01;
        }
        self.phase = Phase::Auth;
        self.auth_start().map(InitiatorStep::Send)
    }

    fn ike(&self) -> &IkeSaKeys {
        self.ike.as_ref().expect("IKE SA established")
    }

    fn protect(
        &mut self,
        exchange: ExchangeType,
        mid: u32,
        inner: &[Payload],
    ) -> Result<Outgoing, HandshakeError> {
        let header = wire::header(self.spi_i, self.spi_r, exchange, true, false, mid);
        let iv = wire::iv(&mut self.rng);
        let bytes =
            codec::encode_protected(&header, inner, &self.ike().initiator_to_responder(), iv)
                .map_err(|e| HandshakeError::codec(self.phase, e))?;
        Ok(self.remember(exchange, mid, bytes))
    }

    fn unprotect(
        &self,
        exchange: ExchangeType,
        mid: u32,
        bytes: &[u8],
    ) -> Result<Option<Vec<Payload>>, HandshakeError> {
        let (h, inner) = match codec::decode_protected(bytes, &self.ike().responder_to_initiator())
        {
            Ok(v) => v,
            Err(e) => return Err(HandshakeError::codec(self.phase, e)),
        };
        if !is_response_to(&h, self.spi_i, exchange, mid) {
            return Ok(None);
        }
        if let Some(code) = wire::error_in(&inner) {
            return Err(peer_error(self.phase, code));
        }
        Ok(Some(inner))
    }

    fn auth_start(&mut self) -> Result<Outgoing, HandshakeError> {
        let spi = wire::esp_spi(&mut self.rng);
        self.pending = Some(PendingChild {
            spi_i: spi,
            nonce_i: None,
        });
        let mut inner = vec![Payload::IdInitiator(self.id_i.clone())];
        if let LocalCredential::Signature(id) = self.local_credential() {
            inner.push(Payload::Cert(CertPayload {
                encoding: CERT_X509_SIGNATURE,
                data: id.certificate().to_vec(),
            }));
        }
        // No AUTH payload: the responder continues with EAP.
        inner.push(Payload::Sa(wire::esp_proposal(spi)));
        inner.extend(wire::traffic_selectors());
        self.awaiting = Awaiting::Auth(1);
        self.protect(ExchangeType::IkeAuth, 1, &inner)
    }

    fn local_credential(&self) -> LocalCredential {
        match self.config.mode {
            Mode::DhPsk => LocalCredential::SharedKey(psk(&self.config)),
            Mode::DhCert => LocalCredential::Signature(SigningIdentity::ue_fixture()),
            Mode::Qkd => LocalCredential::SharedKey(self.qkd_auth()),
        }
    }

    fn peer_credential(&self) -> PeerCredential {
        match self.config.mode {
            Mode::DhPsk => PeerCredential::SharedKey(psk(&self.config)),
            Mode::DhCert => SigningIdentity::n3iwf_fixture().pinned(),
            Mode::Qkd => PeerCredential::SharedKey(self.qkd_auth()),
        }
    }

    fn qkd_auth(&self) -> AuthSecret {
        self.qkd
            .as_ref()
            .and_then(|a| a.auth.clone())
            .expect("QKD plan carries an authentication key")
    }

    /// SK_pi / SK_pr classically; the QKD authentication key otherwise.
    fn prf_keys(&self) -> (Vec<u8>, Vec<u8>) {
        let ike = self.ike();
        match (&ike.sk_pi, &ike.sk_pr) {
            (Some(pi), Some(pr)) => (pi.clone(), pr.clone()),
            _ => {
                let k = self.qkd_auth().as_bytes().to_vec();
                (k.clone(), k)
            }
        }
    }

    fn on_auth_response(
        &mut self,
        mid: u32,
        bytes: &[u8],
    ) -> Result<InitiatorStep, HandshakeError> {
        let Some(inner) = self.unprotect(ExchangeType::IkeAuth, mid, bytes)? else {
            return Ok(InitiatorStep::Ignore);
        };
        let protocol =
            |what: &str| HandshakeError::new(FailureKind::Protocol, Phase::Auth, what.to_owned());
        let final_mid = self.config.final_auth_mid();
        if mid == 1 {
            let id_r = find_payload!(inner, Payload::IdResponder)
                .ok_or_else(|| protocol("missing IDr"))?;
            self.id_r = Some(id_r.clone());
        }
        if mid < final_mid {
            let packet =
                find_payload!(inner, Payload::Eap).ok_or_else(|| protocol("missing EAP"))?;
            let hdr = eap::parse(&packet.data).map_err(protocol)?;
            let round = mid as usize;
            return match hdr.code {
                CODE_FAILURE => Err(HandshakeError::new(
                    FailureKind::EapFailure,
                    Phase::Auth,
                    "EAP failure",
                )),
                CODE_REQUEST if round < self.config.eap.round_count => {
                    let size = self.config.eap.response_size(round);
                    let reply = Payload::Eap(EapPayload {
                        data: eap::eap_5g(CODE_RESPONSE, hdr.identifier, size),
                    });
                    self.awaiting = Awaiting::Auth(mid + 1);
                    self.protect(ExchangeType::IkeAuth, mid + 1, &[reply])
                        .map(InitiatorStep::Send)
                }
                CODE_SUCCESS if round == self.config.eap.round_count => {
                    self.final_auth().map(InitiatorStep::Send)
                }
                _ => Err(protocol("unexpected EAP message")),
            };
        }

        // Final exchange: verify the responder and install the first Child SA.
        let auth = find_payload!(inner, Payload::Auth).ok_or_else(|| protocol("missing AUTH"))?;
        let id_r = self
            .id_r
            .clone()
            .ok_or_else(|| protocol("IDr never received"))?;
        let (_, prf_r) = self.prf_keys();
        let octets = signed_octets(&self.init_response, &self.nonce_i, &prf_r, &id_r);
        let presented = find_payload!(inner, Payload::Cert).map(|c| c.data.as_slice());
        verify_auth(
            &self.peer_credential(),
            auth.method,
            &auth.data,
            &octets,
            presented,
        )
        .map_err(|e| HandshakeError::keys(Phase::Auth, e))?;
        let sa = find_payload!(inner, Payload::Sa).ok_or_else(|| protocol("missing SA"))?;
        let spi_r =
            wire::select_esp_proposal(sa).map_err(|_| protocol("unacceptable ESP proposal"))?;
        self.install_child(spi_r, None)
    }

    fn final_auth(&mut self) -> Result<Outgoing, HandshakeError> {
        let (prf_i, _) = self.prf_keys();
        let octets = signed_octets(&self.init_request, &self.nonce_r, &prf_i, &self.id_i);
        let credential = self.local_credential();
        let mut data =
            compute_auth(&credential, &octets).map_err(|e| HandshakeError::keys(Phase::Auth, e))?;
        if self.config.faults.tamper_auth {
            data[0] ^= 0x80;
        }
        let mid = self.config.final_auth_mid();
        self.awaiting = Awaiting::Auth(mid);
        self.protect(
            ExchangeType::IkeAuth,
            mid,
            &[Payload::Auth(AuthPayload {
                method: credential.method(),
                data,
            })],
        )
    }

    fn install_child(
        &mut self,
        spi_r: [u8; 4],
        nonce_r: Option<&[u8]>,
    ) -> Result<InitiatorStep, HandshakeError> {
        let phase = self.phase;
        let pending = self.pending.take().expect("child SA in progress");
        let index = self.children.len();
        let keys = match &self.qkd {
            Some(a) => a
                .child(index)
                .map_err(|e| HandshakeError::keys(phase, e))?
                .clone(),
            None => {
                let (ni, nr) = match (&pending.nonce_i, nonce_r) {
                    (Some(ni), Some(nr)) => (ni.as_slice(), nr),
                    _ => (self.nonce_i.as_slice(), self.nonce_r.as_slice()),
                };
                let sk_d = self.ike().sk_d.as_ref().expect("classical SK_d");
                derive_classical_child_keys(sk_d, ni, nr)
                    .map_err(|e| HandshakeError::keys(phase, e))?
            }
        };
        self.children.push(ChildSa {
            spi_i: pending.spi_i,
            spi_r,
            keys,
        });
        if self.children.len() == self.config.sa_plan.child_sa_count {
            self.phase = Phase::Established;
            self.awaiting = Awaiting::Nothing;
            self.last_request = None;
            return Ok(InitiatorStep::Done);
        }
        self.phase = Phase::ChildSa;
        self.create_child().map(InitiatorStep::Send)
    }

    fn create_child(&mut self) -> Result<Outgoing, HandshakeError> {
        let spi = wire::esp_spi(&mut self.rng);
        let nonce = self
            .config
            .mode
            .is_classical()
            .then(|| wire::random_bytes(&mut self.rng, self.config.nonce_len));
        let mut inner = vec![Payload::Sa(wire::esp_proposal(spi))];
        if let Some(n) = &nonce {
            inner.push(Payload::Nonce(NoncePayload { nonce: n.clone() }));
        }
        inner.extend(wire::traffic_selectors());
        self.pending = Some(PendingChild {
            spi_i: spi,
            nonce_i: nonce,
        });
        let mid = self.config.final_auth_mid() + self.children.len() as u32;
        self.awaiting = Awaiting::Child(mid);
        self.protect(ExchangeType::CreateChildSa, mid, &inner)
    }

    fn on_child_response(
        &mut self,
        mid: u32,
        bytes: &[u8],
    ) -> Result<InitiatorStep, HandshakeError> {
        let Some(inner) = self.unprotect(ExchangeType::CreateChildSa, mid, bytes)? else {
            return Ok(InitiatorStep::Ignore);
        };
        let protocol = |what: &str| {
            HandshakeError::new(FailureKind::Protocol, Phase::ChildSa, what.to_owned())
        };
        let sa = find_payload!(inner, Payload::Sa).ok_or_else(|| protocol("missing SA"))?;
        let spi_r =
            wire::select_esp_proposal(sa).map_err(|_| protocol("unacceptable ESP proposal"))?;
        let nonce_r = if self.config.mode.is_classical() {
            Some(
                find_payload!(inner, Payload::Nonce)
                    .ok_or_else(|| protocol("missing Nonce"))?
                    .nonce
                    .clone(),
            )
        } else {
            None
        };
        self.install_child(spi_r, nonce_r.as_deref())
    }
}

fn psk(config: &HandshakeConfig) -> AuthSecret {
    AuthSecret::new(config.psk.as_bytes().to_vec()).expect("validated non-empty")
}

fn is_response_to(h: &IkeHeader, spi_i: [u8; 8], exchange: ExchangeType, mid: u32) -> bool {
    h.exchange == exchange
        && h.flags.response
        && !h.flags.initiator
        && h.message_id == mid
        && h.initiator_spi == spi_i
}

fn peer_error(phase: Phase, code: u16) -> HandshakeError {
    let kind = match code {
        notify_type::NO_PROPOSAL_CHOSEN => FailureKind::NoProposalChosen,
        notify_type::AUTHENTICATION_FAILED => FailureKind::AuthenticationFailed,
        other => FailureKind::PeerError(other),
    };
    HandshakeError::new(kind, phase, format!("peer sent error notify {code}"))
}
