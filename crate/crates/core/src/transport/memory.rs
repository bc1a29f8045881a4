use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{check_size, Direction, Trace, Transport, TransportError, WireRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    /// One-way delay added to every message.
    pub latency_ms: f64,
    /// Probability that a sent message is silently dropped.
    pub loss: f64,
    pub seed: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            latency_ms: 0.0,
            loss: 0.0,
            seed: 0,
        }
    }
}

struct Frame {
    deliver_at: Instant,
    bytes: Vec<u8>,
}

pub struct MemoryEndpoint {
    direction: Direction,
    latency: Duration,
    loss: f64,
    rng: ChaCha20Rng,
    tx: Option<Sender<Frame>>,
    rx: Option<Receiver<Frame>>,
    held: Option<Frame>,
    trace: Trace,
}

/// Returns (initiator, responder) endpoints joined by two FIFO channels.
pub fn memory_pair(config: &MemoryConfig, trace: &Trace) -> (MemoryEndpoint, MemoryEndpoint) {
    let (to_r, from_i) = mpsc::channel();
    let (to_i, from_r) = mpsc::channel();
    let latency = Duration::from_secs_f64(config.latency_ms.max(0.0) / 1000.0);
    let make = |direction, tx, rx, salt: u64| MemoryEndpoint {
        direction,
        latency,
        loss: config.loss,
        rng: ChaCha20Rng::seed_from_u64(config.seed ^ salt),
        tx: Some(tx),
        rx: Some(rx),
        held: None,
        trace: trace.clone(),
    };
    (
        make(Direction::InitiatorToResponder, to_r, from_r, 0x49),
        make(Direction::ResponderToInitiator, to_i, from_i, 0x52),
    )
}

impl MemoryEndpoint {
    fn wait_for(frame: Frame, deadline: Instant) -> Result<Vec<u8>, Frame> {
        if frame.deliver_at > deadline {
            return Err(frame);
        }
        let now = Instant::now();
        if frame.deliver_at > now {
            std::thread::sleep(frame.deliver_at - now);
        }
        Ok(frame.bytes)
    }
}

impl Transport for MemoryEndpoint {
    fn direction(&self) -> Direction {
        self.direction
    }

    fn send(&mut self, bytes: &[u8], label: &str) -> Result<WireRecord, TransportError> {
        check_size(bytes.len())?;
        let tx = self.tx.as_ref().ok_or(TransportError::Closed)?;
        let record = self.trace.record(self.direction, label, bytes.len());
        if self.loss > 0.0 && self.rng.gen_bool(self.loss.min(1.0)) {
            return Ok(record);
        }
        tx.send(Frame {
            deliver_at: Instant::now() + self.latency,
            bytes: bytes.to_vec(),
        })
        .map_err(|_| TransportError::Closed)?;
        Ok(record)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let deadline = Instant::now() + timeout;
        if let Some(frame) = self.held.take() {
            return Self::wait_for(frame, deadline).map_err(|f| {
                self.held = Some(f);
                std::thread::sleep(deadline.saturating_duration_since(Instant::now()));
                TransportError::Timeout
            });
        }
        let rx = self.rx.as_ref().ok_or(TransportError::Closed)?;
        match rx.recv_timeout(timeout) {
            Ok(frame) => Self::wait_for(frame, deadline).map_err(|f| {
                self.held = Some(f);
                std::thread::sleep(deadline.saturating_duration_since(Instant::now()));
                TransportError::Timeout
            }),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }

    fn close(&mut self) {
        self.tx = None;
        self.rx = None;
        self.held = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_and_accounting() {
        let trace = Trace::new();
        let (mut i, mut r) = memory_pair(&MemoryConfig::default(), &trace);
        let msg = vec![7u8; 208];
        let rec = i.send(&msg, "IKE_SA_INIT MID=00 I").unwrap();
        assert_eq!(rec.bytes_on_wire, 208);
        assert_eq!(rec.direction, Direction::InitiatorToResponder);
        assert_eq!(r.recv(Duration::from_millis(50)).unwrap(), msg);
        r.send(b"back", "x").unwrap();
        assert_eq!(i.recv(Duration::from_millis(50)).unwrap(), b"back");
        assert_eq!(trace.total_bytes(), 212);
    }

    #[test]
    fn latency_delays_delivery() {
        let trace = Trace::new();
        let cfg = MemoryConfig {
            latency_ms: 5.0,
            ..Default::default()
        };
        let (mut i, mut r) = memory_pair(&cfg, &trace);
        let start = Instant::now();
        i.send(b"x", "x").unwrap();
        r.recv(Duration::from_secs(1)).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(5));
    }

    #[test]
    fn latency_longer_than_timeout_holds_frame() {
        let trace = Trace::new();
        let cfg = MemoryConfig {
            latency_ms: 30.0,
            ..Default::default()
        };
        let (mut i, mut r) = memory_pair(&cfg, &trace);
        i.send(b"late", "x").unwrap();
        assert_eq!(
            r.recv(Duration::from_millis(5)),
            Err(TransportError::Timeout)
        );
        assert_eq!(r.recv(Duration::from_secs(1)).unwrap(), b"late");
    }

    #[test]
    fn empty_channel_times_out() {
        let trace = Trace::new();
        let (_i, mut r) = memory_pair(&MemoryConfig::default(), &trace);
        let start = Instant::now();
        assert_eq!(
            r.recv(Duration::from_millis(10)),
            Err(TransportError::Timeout)
        );
        assert!(start.elapsed() >= Duration::from_millis(10));
    }

    #[test]
    fn closed_endpoint_errors() {
        let trace = Trace::new();
        let (mut i, mut r) = memory_pair(&MemoryConfig::default(), &trace);
        r.close();
        assert_eq!(r.send(b"x", "x").unwrap_err(), TransportError::Closed);
        assert_eq!(
            r.recv(Duration::from_millis(1)).unwrap_err(),
            TransportError::Closed
        );
        assert_eq!(i.send(b"x", "x").unwrap_err(), TransportError::Closed);
        assert_eq!(
            i.recv(Duration::from_millis(1)).unwrap_err(),
            TransportError::Closed
        );
    }

    #[test]
    fn oversize_rejected() {
        let trace = Trace::new();
        let (mut i, _r) = memory_pair(&MemoryConfig::default(), &trace);
        assert_eq!(
            i.send(&vec![0; 65508], "x").unwrap_err(),
            TransportError::Oversize(65508)
        );
        assert!(trace.is_empty());
    }

    #[test]
    fn total_loss_drops_everything_but_records() {
        let trace = Trace::new();
        let cfg = MemoryConfig {
            loss: 1.0,
            ..Default::default()
        };
        let (mut i, mut r) = memory_pair(&cfg, &trace);
        i.send(b"gone", "x").unwrap();
        assert_eq!(
            r.recv(Duration::from_millis(5)),
            Err(TransportError::Timeout)
        );
        assert_eq!(trace.len(), 1);
    }
}
