use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::initiator::InitiatorStep;
use super::responder::ResponderStep;
use super::{
    FailureKind, HandshakeConfig, HandshakeError, HandshakeResult, HandshakeStatus, Initiator,
    Phase, PhaseCounts, PhaseTiming, Responder, SaKeySet,
};
use crate::codec::{open, seal, DirectionalKeys};
use crate::kms::KmsClient;
use crate::transport::{memory_pair, MemoryConfig, Trace, Transport, TransportError, UdpEndpoint};

/// Responder poll interval while waiting for the stop signal.
const POLL: Duration = Duration::from_millis(20);

#[derive(Clone)]
pub struct KmsEndpoints {
    pub ue: Arc<dyn KmsClient>,
    pub n3iwf: Arc<dyn KmsClient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportSpec {
    Memory(MemoryConfig),
    /// Two UDP sockets on 127.0.0.1 ephemeral ports.
    UdpLoopback,
}

impl Default for TransportSpec {
    fn default() -> Self {
        TransportSpec::Memory(MemoryConfig::default())
    }
}

#[derive(Clone, Default)]
pub struct HandshakeSetup {
    pub config: HandshakeConfig,
    pub kms: Option<KmsEndpoints>,
    pub transport: TransportSpec,
}

/// Runs one complete handshake over a fresh transport.
pub fn run_full_handshake(setup: &HandshakeSetup) -> HandshakeResult {
    let trace = Trace::new();
    match &setup.transport {
        TransportSpec::Memory(cfg) => {
            let (i, r) = memory_pair(cfg, &trace);
            run_with_transports(&setup.config, setup.kms.as_ref(), &trace, i, r)
        }
        TransportSpec::UdpLoopback => match UdpEndpoint::loopback_pair(&trace) {
            Ok((i, r)) => run_with_transports(&setup.config, setup.kms.as_ref(), &trace, i, r),
            Err(e) => failed_before_start(&setup.config, HandshakeError::transport(Phase::Init, e)),
        },
    }
}

fn failed_before_start(config: &HandshakeConfig, error: HandshakeError) -> HandshakeResult {
    HandshakeResult {
        mode: config.mode,
        status: HandshakeStatus::Failed(error),
        phases: Vec::new(),
        trace: Vec::new(),
        encoded_bytes: 0,
        initiator_keys: None,
        responder_keys: None,
        initiator_counts: PhaseCounts::default(),
        responder_counts: PhaseCounts::default(),
        kms_calls: Vec::new(),
        key_ids: Vec::new(),
        probe_ok: false,
        retransmissions: 0,
        responder_error: None,
    }
}

struct Clock<'a> {
    trace: &'a Trace,
    phases: Vec<PhaseTiming>,
    current: Phase,
    start_ns: u64,
}

impl Clock<'_> {
    /// Closes the running phase when the initiator has moved on.
    fn observe(&mut self, phase: Phase) {
        if phase != self.current {
            let now = self.trace.now_ns();
            self.phases.push(PhaseTiming {
                phase: self.current,
                start_ns: self.start_ns,
                end_ns: now,
            });
            self.current = phase;
            self.start_ns = now;
        }
    }
}

fn serve_responder<R: Transport>(
    mut responder: Responder,
    mut transport: R,
    stop: &AtomicBool,
) -> (Responder, usize) {
    let mut sent = 0;
    while !stop.load(Ordering::Acquire) {
        let bytes = match transport.recv(POLL) {
            Ok(b) => b,
            Err(TransportError::Timeout) => continue,
            Err(_) => break,
        };
        let reply = match responder.handle(&bytes) {
            Ok(ResponderStep::Reply(o)) | Ok(ResponderStep::Resend(o)) => Some(o),
            Ok(ResponderStep::Ignore) => None,
            Err(rejection) => rejection.reply,
        };
        if let Some(o) = reply {
            if transport.send(&o.bytes, &o.label).is_ok() {
                sent += o.bytes.len();
            }
        }
    }
    transport.close();
    (responder, sent)
}

/// Drives the initiator on this thread until done or failed.
fn drive_initiator<T: Transport>(
    initiator: &mut Initiator,
    transport: &mut T,
    config: &HandshakeConfig,
    clock: &mut Clock<'_>,
    sent: &mut usize,
    retransmissions: &mut u32,
) -> Result<(), HandshakeError> {
    let timeout = Duration::from_millis(config.retransmit.timeout_ms);
    let mut out = initiator.start()?;
    loop {
        let phase = initiator.phase();
        transport
            .send(&out.bytes, &out.label)
            .map_err(|e| HandshakeError::transport(phase, e))?;
        *sent += out.bytes.len();
        let mut tries = 1;
        let next = loop {
            match transport.recv(timeout) {
                Ok(bytes) => match initiator.handle(&bytes)? {
                    InitiatorStep::Send(o) => break Some(o),
                    InitiatorStep::Done => break None,
                    InitiatorStep::Ignore => continue,
                },
                Err(TransportError::Timeout) if tries < config.retransmit.tries => {
                    let again = initiator
                        .last_request()
                        .expect("request outstanding")
                        .clone();
                    transport
                        .send(&again.bytes, &again.label)
                        .map_err(|e| HandshakeError::transport(phase, e))?;
                    *sent += again.bytes.len();
                    *retransmissions += 1;
                    tries += 1;
                }
                Err(e) => return Err(HandshakeError::transport(phase, e)),
            }
        };
        clock.observe(initiator.phase());
        match next {
            Some(o) => out = o,
            None => return Ok(()),
        }
    }
}

/// Runs a handshake over caller-supplied endpoints sharing `trace`.
pub fn run_with_transports<I: Transport, R: Transport>(
    config: &HandshakeConfig,
    kms: Option<&KmsEndpoints>,
    trace: &Trace,
    mut initiator_transport: I,
    responder_transport: R,
) -> HandshakeResult {
    let built = Initiator::new(config, kms.map(|k| k.ue.clone()))
        .and_then(|i| Responder::new(config, kms.map(|k| k.n3iwf.clone())).map(|r| (i, r)));
    let (mut initiator, responder) = match built {
        Ok(v) => v,
        Err(e) => return failed_before_start(config, e),
    };
    let stop = AtomicBool::new(false);
    let mut clock = Clock {
        trace,
        phases: Vec::new(),
        current: Phase::Init,
        start_ns: 0,
    };
    let mut sent = 0;
    let mut retransmissions = 0;

    let (outcome, (responder, responder_sent)) = std::thread::scope(|scope| {
        let server = scope.spawn(|| serve_responder(responder, responder_transport, &stop));
        clock.start_ns = trace.now_ns();
        let outcome = drive_initiator(
            &mut initiator,
            &mut initiator_transport,
            config,
            &mut clock,
            &mut sent,
            &mut retransmissions,
        );
        stop.store(true, Ordering::Release);
        initiator_transport.close();
        (outcome, server.join().expect("responder thread"))
    });
    if outcome.is_err() {
        clock.observe(Phase::Failed);
    }

    let status = match outcome {
        Ok(()) => HandshakeStatus::Success,
        Err(e) => {
            // The responder knows why it refused; the initiator only saw a notify or silence.
            let opaque = matches!(e.kind, FailureKind::PeerError(_) | FailureKind::Timeout);
            match responder.error() {
                Some(r) if opaque => HandshakeStatus::Failed(r.clone()),
                _ => HandshakeStatus::Failed(e),
            }
        }
    };
    let initiator_keys = initiator.keys();
    let responder_keys = responder.keys();
    let probe_ok = status.is_success()
        && match (&initiator_keys, &responder_keys) {
            (Some(a), Some(b)) => probe_sas(a, b),
            _ => false,
        };
    let mut kms_calls = responder.kms_calls().to_vec();
    kms_calls.extend_from_slice(initiator.kms_calls());

    HandshakeResult {
        mode: config.mode,
        status,
        phases: clock.phases,
        trace: trace.records(),
        encoded_bytes: sent + responder_sent,
        initiator_keys,
        responder_keys,
        initiator_counts: initiator.counts(),
        responder_counts: responder.counts(),
        kms_calls,
        key_ids: initiator.key_ids().to_vec(),
        probe_ok,
        retransmissions,
        responder_error: responder.error().cloned(),
    }
}

fn probe(sender: &DirectionalKeys, receiver: &DirectionalKeys, tag: u8) -> bool {
    let sample = b"nwu probe payload";
    let aad = [tag; 8];
    seal(sample, sender, &aad, [tag; 16], 0)
        .and_then(|sk| open(&sk, receiver, &aad))
        .is_ok_and(|plain| plain == sample)
}

/// Seals a sample with one peer's keys and opens it with the other's, for
/// every SA and both directions.
pub fn probe_sas(initiator: &SaKeySet, responder: &SaKeySet) -> bool {
    if initiator.children.len() != responder.children.len() {
        return false;
    }
    let mut pairs = vec![(
        initiator.ike.initiator_to_responder(),
        responder.ike.initiator_to_responder(),
        initiator.ike.responder_to_initiator(),
        responder.ike.responder_to_initiator(),
    )];
    for (a, b) in initiator.children.iter().zip(&responder.children) {
        pairs.push((
            a.keys.initiator_to_responder(),
            b.keys.initiator_to_responder(),
            a.keys.responder_to_initiator(),
            b.keys.responder_to_initiator(),
        ));
    }
    pairs
        .iter()
        .enumerate()
        .all(|(i, (i_out, r_in, i_in, r_out))| {
            probe(i_out, r_in, i as u8) && probe(r_out, i_in, 0x80 | i as u8)
        })
}
