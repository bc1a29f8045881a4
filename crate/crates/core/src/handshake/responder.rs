use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::eap::{self, CODE_FAILURE, CODE_REQUEST, CODE_RESPONSE, CODE_SUCCESS};
use super::wire::{self, find_payload, Outgoing};
use super::{
    ChildSa, FailureKind, HandshakeConfig, HandshakeError, InitMessage, KmsCall, KmsCallKind, Mode,
    Phase, PhaseCounts, SaKeySet,
};
use crate::codec::{
    self, id_type, key_ids_notify, notify_type, AuthPayload, EapPayload, ExchangeType, IdPayload,
    IkeHeader, IkeMessage, KePayload, NoncePayload, NotifyPayload, Payload,
};
use crate::keys::{
    self, assign_qkd_keys, compute_auth, derive_classical_child_keys, derive_classical_ike_keys,
    dh_keypair, dh_shared_secret, signed_octets, verify_auth, AuthSecret, DhGroup, IkeSaKeys,
    LocalCredential, PeerCredential, QkdKeyAssignment, SigningIdentity,
};
use crate::kms::KmsClient;
use crate::transport::Direction;

const DIR: Direction = Direction::ResponderToInitiator;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponderStep {
    Reply(Outgoing),
    /// A retransmitted request; resend the cached response.
    Resend(Outgoing),
    Ignore,
}

/// A request the responder refused. `reply` carries the error notify, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub error: HandshakeError,
    pub reply: Option<Outgoing>,
}

/// The N3IWF side.
pub struct Responder {
    config: HandshakeConfig,
    kms: Option<Arc<dyn KmsClient>>,
    rng: ChaCha20Rng,
    group: DhGroup,
    phase: Phase,
    expected_mid: u32,
    spi_i: [u8; 8],
    spi_r: [u8; 8],
    nonce_i: Vec<u8>,
    nonce_r: Vec<u8>,
    init_request: Vec<u8>,
    init_response: Vec<u8>,
    ike: Option<IkeSaKeys>,
    qkd: Option<QkdKeyAssignment>,
    id_r: IdPayload,
    id_i: Option<IdPayload>,
    peer_cert: Option<Vec<u8>>,
    first_child_spi_i: Option<[u8; 4]>,
    eap_identifier: u8,
    children: Vec<ChildSa>,
    last: Option<(Vec<u8>, Outgoing)>,
    counts: PhaseCounts,
    kms_calls: Vec<KmsCall>,
    error: Option<HandshakeError>,
}

impl Responder {
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
            Some(s) => ChaCha20Rng::seed_from_u64(s.wrapping_mul(2).wrapping_add(1)),
            None => ChaCha20Rng::from_entropy(),
        };
        Ok(Responder {
            group: DhGroup::modp2048_with_exponent_bits(config.dh_private_bits),
            id_r: IdPayload {
                id_type: id_type::FQDN,
                value: config.n3iwf_id.as_bytes().to_vec(),
            },
            config: config.clone(),
            kms,
            rng,
            phase: Phase::Init,
            expected_mid: 0,
            spi_i: [0; 8],
            spi_r: [0; 8],
            nonce_i: Vec::new(),
            nonce_r: Vec::new(),
            init_request: Vec::new(),
            init_response: Vec::new(),
            ike: None,
            qkd: None,
            id_i: None,
            peer_cert: None,
            first_child_spi_i: None,
            eap_identifier: 0,
            children: Vec::new(),
            last: None,
            counts: PhaseCounts::default(),
            kms_calls: Vec::new(),
            error: None,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn counts(&self) -> PhaseCounts {
        self.counts
    }

    pub fn kms_calls(&self) -> &[KmsCall] {
        &self.kms_calls
    }

    pub fn error(&self) -> Option<&HandshakeError> {
        self.error.as_ref()
    }

    pub fn keys(&self) -> Option<SaKeySet> {
        Some(SaKeySet {
            ike: self.ike.clone()?,
            children: self.children.clone(),
        })
    }

    /// Processes one request.
    pub fn handle(&mut self, bytes: &[u8]) -> Result<ResponderStep, Rejection> {
        let header = match codec::decode(bytes) {
            Ok(m) => m.header,
            Err(e) if self.phase == Phase::Init => {
                return Err(self.reject(HandshakeError::codec(Phase::Init, e), None));
            }
            // Garbage on an established session is dropped.
            Err(_) => return Ok(ResponderStep::Ignore),
        };
        if header.flags.response || !header.flags.initiator {
            return Ok(ResponderStep::Ignore);
        }
        if let Some((request, reply)) = &self.last {
            if request.as_slice() == bytes {
                return Ok(ResponderStep::Resend(reply.clone()));
            }
        }
        if matches!(self.phase, Phase::Established | Phase::Failed)
            || header.message_id != self.expected_mid
            || (self.phase != Phase::Init && header.initiator_spi != self.spi_i)
        {
            return Ok(ResponderStep::Ignore);
        }
        let phase = match header.exchange {
            ExchangeType::IkeSaInit => Phase::Init,
            ExchangeType::IkeAuth => Phase::Auth,
            _ => Phase::ChildSa,
        };
        let before = keys::metrics::snapshot();
        let result = match (self.phase, header.exchange) {
            (Phase::Init, ExchangeType::IkeSaInit) => self.on_init(bytes),
            (Phase::Auth, ExchangeType::IkeAuth) => self.on_auth(&header, bytes),
            (Phase::ChildSa, ExchangeType::CreateChildSa) => self.on_child(&header, bytes),
            _ => Err(self.reject(
                HandshakeError::new(FailureKind::Protocol, self.phase, "unexpected exchange"),
                None,
            )),
        };
        self.counts.add(phase, keys::metrics::snapshot() - before);
        let reply = result?;
        self.expected_mid += 1;
        self.last = Some((bytes.to_vec(), reply.clone()));
        Ok(ResponderStep::Reply(reply))
    }

    fn reject(&mut self, error: HandshakeError, reply: Option<Outgoing>) -> Rejection {
        self.phase = Phase::Failed;
        self.error = Some(error.clone());
        Rejection { error, reply }
    }

    fn plain_reply(&self, payloads: Vec<Payload>) -> Outgoing {
        let header = wire::header(
            self.spi_i,
            self.spi_r,
            ExchangeType::IkeSaInit,
            false,
            true,
            0,
        );
        let bytes =
            codec::encode(&IkeMessage { header, payloads }).expect("small response encodes");
        Outgoing {
            bytes,
            label: wire::message_label(ExchangeType::IkeSaInit, 0, DIR),
            message_id: 0,
        }
    }

    fn reject_init(
        &mut self,
        kind: FailureKind,
        notify: NotifyPayload,
        detail: impl Into<String>,
    ) -> Rejection {
        // Error responses to IKE_SA_INIT carry a zero responder SPI.
        self.spi_r = [0; 8];
        let reply = self.plain_reply(vec![Payload::Notify(notify)]);
        self.reject(HandshakeError::new(kind, Phase::Init, detail), Some(reply))
    }

    fn on_init(&mut self, bytes: &[u8]) -> Result<Outgoing, Rejection> {
        let msg = codec::decode(bytes).expect("decoded by caller");
        self.spi_i = msg.header.initiator_spi;
        let classical = self.config.mode.is_classical();
        let Some(sa) = find_payload!(msg.payloads, Payload::Sa) else {
            return Err(self.reject_init(
                FailureKind::Protocol,
                NotifyPayload::new(notify_type::INVALID_SYNTAX, Vec::new()),
                "missing SA",
            ));
        };
        let chosen = match wire::select_ike_proposal(sa, classical) {
            Ok(p) => p,
            Err(code) => {
                return Err(self.reject_init(
                    FailureKind::NoProposalChosen,
                    NotifyPayload::new(code, Vec::new()),
                    "no acceptable IKE proposal",
                ))
            }
        };
        let nonce = match find_payload!(msg.payloads, Payload::Nonce) {
            Some(n) if (16..=256).contains(&n.nonce.len()) => n.nonce.clone(),
            _ => {
                return Err(self.reject_init(
                    FailureKind::Protocol,
                    NotifyPayload::new(notify_type::INVALID_SYNTAX, Vec::new()),
                    "missing or bad Nonce",
                ))
            }
        };
        self.nonce_i = nonce;
        self.spi_r = wire::nonzero_spi(&mut self.rng);
        self.nonce_r = wire::random_bytes(&mut self.rng, self.config.nonce_len);

        let mut payloads = vec![Payload::Sa(codec::SaPayload {
            proposals: vec![chosen],
        })];
        if classical {
            let ke = match find_payload!(msg.payloads, Payload::Ke) {
                Some(ke)
                    if ke.dh_group == self.group.id
                        && ke.public_value.len() == self.group.value_len() =>
                {
                    ke
                }
                _ => {
                    return Err(self.reject_init(
                        FailureKind::Protocol,
                        NotifyPayload::new(
                            notify_type::INVALID_KE_PAYLOAD,
                            self.group.id.to_be_bytes().to_vec(),
                        ),
                        "missing or mismatched KE",
                    ))
                }
            };
            let kp = dh_keypair(&self.group, &mut self.rng);
            let peer = num_bigint::BigUint::from_bytes_be(&ke.public_value);
            let secret = match dh_shared_secret(&kp.private, &peer, &self.group) {
                Ok(s) => s,
                Err(e) => {
                    return Err(self.reject_init(
                        FailureKind::Protocol,
                        NotifyPayload::new(notify_type::INVALID_SYNTAX, Vec::new()),
                        e.to_string(),
                    ))
                }
            };
            let ike = derive_classical_ike_keys(
                &secret,
                &self.nonce_i,
                &self.nonce_r,
                &self.spi_i,
                &self.spi_r,
            )
            .map_err(|e| self.reject(HandshakeError::keys(Phase::Init, e), None))?;
            self.ike = Some(ike);
            payloads.push(Payload::Ke(KePayload {
                dh_group: self.group.id,
                public_value: self.group.encode(&kp.public),
            }));
            payloads.push(Payload::Nonce(NoncePayload {
                nonce: self.nonce_r.clone(),
            }));
        } else {
            let plan = self.config.key_plan();
            let kms = self.kms.clone().expect("checked at construction");
            self.kms_calls.push(KmsCall {
                kind: KmsCallKind::GetKeys,
                count: plan.slot_count(),
                key_ids: Vec::new(),
            });
            let container = match kms.get_keys(&self.config.ue_sae, plan.slot_count(), 256) {
                Ok(c) => c,
                Err(e) => {
                    let err = HandshakeError::kms(Phase::Init, e);
                    return Err(self.reject_init(
                        err.kind,
                        NotifyPayload::new(notify_type::TEMPORARY_FAILURE, Vec::new()),
                        err.detail,
                    ));
                }
            };
            if let Some(call) = self.kms_calls.last_mut() {
                call.key_ids = container.key_ids();
            }
            let assignment = match assign_qkd_keys(&container, &plan) {
                Ok(a) => a,
                Err(e) => {
                    return Err(self.reject_init(
                        FailureKind::KeyPlan,
                        NotifyPayload::new(notify_type::TEMPORARY_FAILURE, Vec::new()),
                        e.to_string(),
                    ))
                }
            };
            self.ike = Some(assignment.ike.clone());
            self.qkd = Some(assignment);
            payloads.push(Payload::Nonce(NoncePayload {
                nonce: self.nonce_r.clone(),
            }));
            payloads.push(Payload::Notify(key_ids_notify(
                &container.key_ids(),
                self.config.key_id_encoding,
            )));
        }

        let reply = self.plain_reply(payloads);
        self.init_request = bytes.to_vec();
        if let Some((InitMessage::Request, index)) = self.config.faults.tamper_init_transcript {
            let i = index % self.init_request.len();
            self.init_request[i] ^= 0x01;
        }
        self.init_response = reply.bytes.clone();
        self.phase = Phase::Auth;
        Ok(reply)
    }

    fn ike(&self) -> &IkeSaKeys {
        self.ike.as_ref().expect("IKE SA established")
    }

    fn protect(&mut self, exchange: ExchangeType, mid: u32, inner: &[Payload]) -> Outgoing {
        let header = wire::header(self.spi_i, self.spi_r, exchange, false, true, mid);
        let iv = wire::iv(&mut self.rng);
        let bytes =
            codec::encode_protected(&header, inner, &self.ike().responder_to_initiator(), iv)
                .expect("responses stay within payload limits");
        Outgoing {
            bytes,
            label: wire::message_label(exchange, mid, DIR),
            message_id: mid,
        }
    }

    fn reject_protected(
        &mut self,
        header: &IkeHeader,
        kind: FailureKind,
        notify: u16,
        detail: impl Into<String>,
    ) -> Rejection {
        let reply = self.protect(
            header.exchange,
            header.message_id,
            &[wire::error_notify(notify)],
        );
        self.reject(HandshakeError::new(kind, self.phase, detail), Some(reply))
    }

    fn open(&mut self, bytes: &[u8]) -> Result<Vec<Payload>, Rejection> {
        match codec::decode_protected(bytes, &self.ike().initiator_to_responder()) {
            Ok((_, inner)) => Ok(inner),
            Err(e) => Err(self.reject(HandshakeError::codec(self.phase, e), None)),
        }
    }

    fn local_credential(&self) -> LocalCredential {
        match self.config.mode {
            Mode::DhPsk => LocalCredential::SharedKey(psk(&self.config)),
            Mode::DhCert => LocalCredential::Signature(SigningIdentity::n3iwf_fixture()),
            Mode::Qkd => LocalCredential::SharedKey(self.qkd_auth()),
        }
    }

    fn peer_credential(&self) -> PeerCredential {
        match self.config.mode {
            Mode::DhPsk => PeerCredential::SharedKey(psk(&self.config)),
            Mode::DhCert => SigningIdentity::ue_fixture().pinned(),
            Mode::Qkd => PeerCredential::SharedKey(self.qkd_auth()),
        }
    }

    fn qkd_auth(&self) -> AuthSecret {
        self.qkd
            .as_ref()
            .and_then(|a| a.auth.clone())
            .expect("QKD plan carries an authentication key")
    }

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

    fn eap_message(&mut self, round: usize) -> (Payload, bool) {
        self.eap_identifier = self.eap_identifier.wrapping_add(1);
        let id = self.eap_identifier;
        if self.config.faults.eap_failure_round == Some(round) {
            return (
                Payload::Eap(EapPayload {
                    data: eap::eap_status(CODE_FAILURE, id),
                }),
                true,
            );
        }
        let data = if round == self.config.eap.round_count {
            eap::eap_status(CODE_SUCCESS, id)
        } else {
            eap::eap_5g(CODE_REQUEST, id, self.config.eap.request_size(round))
        };
        (Payload::Eap(EapPayload { data }), false)
    }

    fn on_auth(&mut self, header: &IkeHeader, bytes: &[u8]) -> Result<Outgoing, Rejection> {
        let inner = self.open(bytes)?;
        let mid = header.message_id;
        let protocol = |s: &mut Self, what: &str| {
            s.reject_protected(
                header,
                FailureKind::Protocol,
                notify_type::INVALID_SYNTAX,
                what,
            )
        };
        if mid == 1 {
            let Some(id_i) = find_payload!(inner, Payload::IdInitiator) else {
                return Err(protocol(self, "missing IDi"));
            };
            self.id_i = Some(id_i.clone());
            self.peer_cert = find_payload!(inner, Payload::Cert).map(|c| c.data.clone());
            let Some(sa) = find_payload!(inner, Payload::Sa) else {
                return Err(protocol(self, "missing SA"));
            };
            match wire::select_esp_proposal(sa) {
                Ok(spi) => self.first_child_spi_i = Some(spi),
                Err(code) => {
                    return Err(self.reject_protected(
                        header,
                        FailureKind::NoProposalChosen,
                        code,
                        "no acceptable ESP proposal",
                    ))
                }
            }
            let (eap, failed) = self.eap_message(1);
            let reply = self.protect(
                ExchangeType::IkeAuth,
                mid,
                &[Payload::IdResponder(self.id_r.clone()), eap],
            );
            return self.after_eap(reply, failed);
        }

        let final_mid = self.config.final_auth_mid();
        if mid < final_mid {
            let ok = find_payload!(inner, Payload::Eap)
                .and_then(|p| eap::parse(&p.data).ok())
                .is_some_and(|h| h.code == CODE_RESPONSE && h.identifier == self.eap_identifier);
            if !ok {
                return Err(protocol(self, "expected EAP response"));
            }
            let (eap, failed) = self.eap_message(mid as usize);
            let reply = self.protect(ExchangeType::IkeAuth, mid, &[eap]);
            return self.after_eap(reply, failed);
        }

        let Some(auth) = find_payload!(inner, Payload::Auth) else {
            return Err(protocol(self, "missing AUTH"));
        };
        let id_i = self.id_i.clone().expect("set in the first exchange");
        let (prf_i, prf_r) = self.prf_keys();
        let octets = signed_octets(&self.init_request, &self.nonce_r, &prf_i, &id_i);
        if let Err(e) = verify_auth(
            &self.peer_credential(),
            auth.method,
            &auth.data,
            &octets,
            self.peer_cert.as_deref(),
        ) {
            return Err(self.reject_protected(
                header,
                FailureKind::AuthenticationFailed,
                notify_type::AUTHENTICATION_FAILED,
                e.to_string(),
            ));
        }
        let own = signed_octets(&self.init_response, &self.nonce_i, &prf_r, &self.id_r);
        let credential = self.local_credential();
        let data = compute_auth(&credential, &own)
            .map_err(|e| self.reject(HandshakeError::keys(Phase::Auth, e), None))?;
        let spi_i = self.first_child_spi_i.expect("set in the first exchange");
        let spi_r = self.install_child(spi_i, None)?;
        let mut payloads = vec![
            Payload::Auth(AuthPayload {
                method: credential.method(),
                data,
            }),
            Payload::Sa(wire::esp_proposal(spi_r)),
        ];
        payloads.extend(wire::traffic_selectors());
        Ok(self.protect(ExchangeType::IkeAuth, mid, &payloads))
    }

    fn after_eap(&mut self, reply: Outgoing, failed: bool) -> Result<Outgoing, Rejection> {
        if failed {
            return Err(self.reject(
                HandshakeError::new(
                    FailureKind::EapFailure,
                    Phase::Auth,
                    "EAP stub failure injected",
                ),
                Some(reply),
            ));
        }
        Ok(reply)
    }

    /// Derives or assigns keys for the next Child SA and returns our SPI.
    fn install_child(
        &mut self,
        spi_i: [u8; 4],
        nonces: Option<(&[u8], &[u8])>,
    ) -> Result<[u8; 4], Rejection> {
        let index = self.children.len();
        let keys = match &self.qkd {
            Some(a) => match a.child(index) {
                Ok(k) => k.clone(),
                Err(e) => return Err(self.reject(HandshakeError::keys(self.phase, e), None)),
            },
            None => {
                let (ni, nr) = nonces.unwrap_or((&self.nonce_i, &self.nonce_r));
                let sk_d = self.ike().sk_d.as_ref().expect("classical SK_d");
                derive_classical_child_keys(sk_d, ni, nr)
                    .map_err(|e| HandshakeError::keys(Phase::ChildSa, e))
                    .map_err(|e| self.reject(e, None))?
            }
        };
        let spi_r = wire::esp_spi(&mut self.rng);
        self.children.push(ChildSa { spi_i, spi_r, keys });
        self.phase = if self.children.len() == self.config.sa_plan.child_sa_count {
            Phase::Established
        } else {
            Phase::ChildSa
        };
        Ok(spi_r)
    }

    fn on_child(&mut self, header: &IkeHeader, bytes: &[u8]) -> Result<Outgoing, Rejection> {
        let inner = self.open(bytes)?;
        let mid = header.message_id;
        let spi_i = match find_payload!(inner, Payload::Sa).map(wire::select_esp_proposal) {
            Some(Ok(spi)) => spi,
            _ => {
                return Err(self.reject_protected(
                    header,
                    FailureKind::NoProposalChosen,
                    notify_type::NO_PROPOSAL_CHOSEN,
                    "no acceptable ESP proposal",
                ))
            }
        };
        if self
            .qkd
            .as_ref()
            .is_some_and(|a| a.children.len() <= self.children.len())
        {
            return Err(self.reject_protected(
                header,
                FailureKind::KeyPlan,
                notify_type::NO_ADDITIONAL_SAS,
                "QKD key container exhausted",
            ));
        }
        let classical = self.config.mode.is_classical();
        let nonce_i = if classical {
            match find_payload!(inner, Payload::Nonce) {
                Some(n) => Some(n.nonce.clone()),
                None => {
                    return Err(self.reject_protected(
                        header,
                        FailureKind::Protocol,
                        notify_type::INVALID_SYNTAX,
                        "missing Nonce",
                    ))
                }
            }
        } else {
            None
        };
        let nonce_r = classical.then(|| wire::random_bytes(&mut self.rng, self.config.nonce_len));
        let nonces = nonce_i.as_deref().zip(nonce_r.as_deref());
        let spi_r = self.install_child(spi_i, nonces)?;
        let mut payloads = vec![Payload::Sa(wire::esp_proposal(spi_r))];
        if let Some(n) = nonce_r {
            payloads.push(Payload::Nonce(NoncePayload { nonce: n }));
        }
        payloads.extend(wire::traffic_selectors());
        Ok(self.protect(ExchangeType::CreateChildSa, mid, &payloads))
    }
}

fn psk(config: &HandshakeConfig) -> AuthSecret {
    AuthSecret::new(config.psk.as_bytes().to_vec()).expect("validated non-empty")
}
