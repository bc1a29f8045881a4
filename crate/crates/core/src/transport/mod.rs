//! Message transport between the two handshake peers.
//!
//! Every send appends a [`WireRecord`] to a shared [`Trace`]. Records count
//! IKE bytes only; link framing is added at report time.

mod memory;
mod udp;

pub use memory::{memory_pair, MemoryConfig, MemoryEndpoint};
pub use udp::UdpEndpoint;

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest UDP payload over IPv4.
pub const MAX_DATAGRAM: usize = 65507;

/// Ethernet (14) + IPv4 (20) + UDP (8) per message.
pub const FRAMING_OVERHEAD: usize = 42;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("datagram of {0} bytes exceeds {MAX_DATAGRAM}")]
    Oversize(usize),
    #[error("endpoint closed")]
    Closed,
    #[error("receive timed out")]
    Timeout,
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// UE to N3IWF.
    InitiatorToResponder,
    ResponderToInitiator,
}

impl Direction {
    /// Suffix used in message labels.
    pub fn tag(self) -> &'static str {
        match self {
            Direction::InitiatorToResponder => "I",
            Direction::ResponderToInitiator => "R",
        }
    }

    pub fn reverse(self) -> Direction {
        match self {
            Direction::InitiatorToResponder => Direction::ResponderToInitiator,
            Direction::ResponderToInitiator => Direction::InitiatorToResponder,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRecord {
    pub direction: Direction,
    pub label: String,
    pub bytes_on_wire: usize,
    /// Nanoseconds since the trace epoch.
    pub timestamp_ns: u64,
}

/// Append-only, shared by both endpoints of a session.
#[derive(Clone)]
pub struct Trace {
    epoch: Instant,
    records: Arc<Mutex<Vec<WireRecord>>>,
}

impl Default for Trace {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Trace({} records)", self.records.lock().len())
    }
}

impl Trace {
    pub fn new() -> Self {
        Trace {
            epoch: Instant::now(),
            records: Arc::default(),
        }
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }

    pub fn now_ns(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }

    pub fn record(&self, direction: Direction, label: &str, len: usize) -> WireRecord {
        let mut records = self.records.lock();
        // Timestamp under the lock so record order and time order agree.
        let rec = WireRecord {
            direction,
            label: label.to_owned(),
            bytes_on_wire: len,
            timestamp_ns: self.now_ns(),
        };
        records.push(rec.clone());
        rec
    }

    pub fn records(&self) -> Vec<WireRecord> {
        self.records.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_bytes(&self) -> usize {
        self.records.lock().iter().map(|r| r.bytes_on_wire).sum()
    }
}

/// One peer's view of the link.
pub trait Transport: Send {
    fn direction(&self) -> Direction;

    fn send(&mut self, bytes: &[u8], label: &str) -> Result<WireRecord, TransportError>;

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError>;

    fn close(&mut self);
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn direction(&self) -> Direction {
        (**self).direction()
    }

    fn send(&mut self, bytes: &[u8], label: &str) -> Result<WireRecord, TransportError> {
        (**self).send(bytes, label)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        (**self).recv(timeout)
    }

    fn close(&mut self) {
        (**self).close()
    }
}

fn check_size(len: usize) -> Result<(), TransportError> {
    if len > MAX_DATAGRAM {
        Err(TransportError::Oversize(len))
    } else {
        Ok(())
    }
}
