#![allow(dead_code)]

pub mod gen;
pub mod stress;

use std::sync::Arc;

use nwu_qkd::handshake::{HandshakeConfig, HandshakeSetup, KmsEndpoints, Mode, TransportSpec};
use nwu_qkd::kms::{KeySource, KmePair, KmeSide, KmsConfig, LocalKmsClient};

pub fn kme_pair(initial_keys: usize, seed: u64) -> Arc<KmePair> {
    KmePair::new(KmsConfig {
        initial_keys,
        key_source: KeySource::Seeded(seed),
        ..Default::default()
    })
    .expect("valid KMS config")
}

/// In-process clients: the N3IWF talks to KME A, the UE to KME B.
pub fn local_kms(pair: &Arc<KmePair>, config: &HandshakeConfig) -> KmsEndpoints {
    KmsEndpoints {
        n3iwf: Arc::new(LocalKmsClient::new(
            pair.clone(),
            KmeSide::A,
            config.n3iwf_sae.clone(),
        )),
        ue: Arc::new(LocalKmsClient::new(
            pair.clone(),
            KmeSide::B,
            config.ue_sae.clone(),
        )),
    }
}

pub fn setup(mode: Mode, seed: u64) -> HandshakeSetup {
    setup_with(HandshakeConfig {
        seed: Some(seed),
        ..HandshakeConfig::for_mode(mode)
    })
}

pub fn setup_with(config: HandshakeConfig) -> HandshakeSetup {
    let kms = (config.mode == Mode::Qkd).then(|| local_kms(&kme_pair(1000, 7), &config));
    HandshakeSetup {
        config,
        kms,
        transport: TransportSpec::default(),
    }
}

use nwu_qkd::codec::{decode, decode_protected, Payload};
use nwu_qkd::handshake::{HandshakeError, Initiator, InitiatorStep, Responder, ResponderStep};
use nwu_qkd::transport::Direction;

/// Both peers driven on one thread, with every message kept in order.
pub struct Lockstep {
    pub messages: Vec<(Direction, Vec<u8>)>,
    pub initiator: Initiator,
    pub responder: Responder,
    /// First error seen by the initiator, or the responder's refusal.
    pub outcome: Result<(), HandshakeError>,
}

impl Lockstep {
    /// Plaintext payloads of message `index`; SK contents are opened with the
    /// initiator's IKE keys.
    pub fn payloads(&self, index: usize) -> Vec<Payload> {
        let (dir, bytes) = &self.messages[index];
        let message = decode(bytes).expect("decodes");
        match message.payloads.last() {
            Some(Payload::Sk(_)) => {
                let ike = self.initiator.ike_keys().expect("IKE keys");
                let keys = match dir {
                    Direction::InitiatorToResponder => ike.initiator_to_responder(),
                    Direction::ResponderToInitiator => ike.responder_to_initiator(),
                };
                decode_protected(bytes, &keys).expect("opens").1
            }
            _ => message.payloads,
        }
    }
}

/// Runs a handshake without a transport. `tamper` sees each message (index,
/// direction, bytes) before delivery.
pub fn lockstep(
    config: &HandshakeConfig,
    kms: Option<&KmsEndpoints>,
    mut tamper: impl FnMut(usize, Direction, &mut Vec<u8>),
) -> Lockstep {
    let mut initiator = Initiator::new(config, kms.map(|k| k.ue.clone())).expect("initiator");
    let mut responder = Responder::new(config, kms.map(|k| k.n3iwf.clone())).expect("responder");
    let mut messages = Vec::new();
    let mut out = initiator.start().expect("start");
    let outcome = loop {
        let mut request = out.bytes.clone();
        tamper(
            messages.len(),
            Direction::InitiatorToResponder,
            &mut request,
        );
        messages.push((Direction::InitiatorToResponder, request.clone()));
        let (reply, refused) = match responder.handle(&request) {
            Ok(ResponderStep::Reply(o)) | Ok(ResponderStep::Resend(o)) => (o, None),
            Ok(ResponderStep::Ignore) => panic!("responder ignored a fresh request"),
            Err(r) => match r.reply {
                Some(o) => (o, Some(r.error)),
                None => break Err(r.error),
            },
        };
        let mut response = reply.bytes;
        tamper(
            messages.len(),
            Direction::ResponderToInitiator,
            &mut response,
        );
        messages.push((Direction::ResponderToInitiator, response.clone()));
        match initiator.handle(&response) {
            Ok(InitiatorStep::Send(o)) if refused.is_none() => out = o,
            Ok(InitiatorStep::Done) if refused.is_none() => break Ok(()),
            Ok(step) => panic!("initiator continued after refusal: {step:?}"),
            Err(e) => break Err(refused.unwrap_or(e)),
        }
    };
    Lockstep {
        messages,
        initiator,
        responder,
        outcome,
    }
}

/// KMS endpoints for `config` backed by a fresh seeded pair.
pub fn kms_for(config: &HandshakeConfig) -> Option<KmsEndpoints> {
    (config.mode == Mode::Qkd).then(|| local_kms(&kme_pair(1000, 7), config))
}
