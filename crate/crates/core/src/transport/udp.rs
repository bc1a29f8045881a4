use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use super::{check_size, Direction, Trace, Transport, TransportError, WireRecord, MAX_DATAGRAM};

/// One datagram per IKE message; datagrams from other sources are ignored.
pub struct UdpEndpoint {
    direction: Direction,
    socket: Option<UdpSocket>,
    peer: SocketAddr,
    trace: Trace,
}

fn io(e: std::io::Error) -> TransportError {
    TransportError::Io(e.to_string())
}

impl UdpEndpoint {
    pub fn bind(
        local: SocketAddr,
        peer: SocketAddr,
        direction: Direction,
        trace: &Trace,
    ) -> Result<Self, TransportError> {
        Ok(Self::from_socket(
            UdpSocket::bind(local).map_err(io)?,
            peer,
            direction,
            trace,
        ))
    }

    pub fn from_socket(
        socket: UdpSocket,
        peer: SocketAddr,
        direction: Direction,
        trace: &Trace,
    ) -> Self {
        UdpEndpoint {
            direction,
            socket: Some(socket),
            peer,
            trace: trace.clone(),
        }
    }

    /// Two endpoints on ephemeral loopback ports, (initiator, responder).
    pub fn loopback_pair(trace: &Trace) -> Result<(Self, Self), TransportError> {
        let a = UdpSocket::bind("127.0.0.1:0").map_err(io)?;
        let b = UdpSocket::bind("127.0.0.1:0").map_err(io)?;
        let (aa, ba) = (a.local_addr().map_err(io)?, b.local_addr().map_err(io)?);
        Ok((
            Self::from_socket(a, ba, Direction::InitiatorToResponder, trace),
            Self::from_socket(b, aa, Direction::ResponderToInitiator, trace),
        ))
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        self.socket
            .as_ref()
            .ok_or(TransportError::Closed)?
            .local_addr()
            .map_err(io)
    }
}

impl Transport for UdpEndpoint {
    fn direction(&self) -> Direction {
        self.direction
    }

    fn send(&mut self, bytes: &[u8], label: &str) -> Result<WireRecord, TransportError> {
        check_size(bytes.len())?;
        let socket = self.socket.as_ref().ok_or(TransportError::Closed)?;
        socket.send_to(bytes, self.peer).map_err(io)?;
        Ok(self.trace.record(self.direction, label, bytes.len()))
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let socket = self.socket.as_ref().ok_or(TransportError::Closed)?;
        let deadline = Instant::now() + timeout;
        let mut buf = vec![0u8; MAX_DATAGRAM];
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::Timeout);
            }
            socket.set_read_timeout(Some(left)).map_err(io)?;
            match socket.recv_from(&mut buf) {
                Ok((n, from)) if from == self.peer => return Ok(buf[..n].to_vec()),
                Ok(_) => continue,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(TransportError::Timeout)
                }
                // ICMP port unreachable from an earlier send; keep waiting.
                Err(e) if e.kind() == ErrorKind::ConnectionRefused => continue,
                Err(e) => return Err(io(e)),
            }
        }
    }

    fn close(&mut self) {
        self.socket = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_datagrams() {
        let trace = Trace::new();
        let (mut i, mut r) = UdpEndpoint::loopback_pair(&trace).unwrap();
        i.send(&[1, 2, 3], "a").unwrap();
        assert_eq!(r.recv(Duration::from_secs(1)).unwrap(), vec![1, 2, 3]);
        r.send(&[4; 208], "b").unwrap();
        assert_eq!(i.recv(Duration::from_secs(1)).unwrap().len(), 208);
        assert_eq!(trace.total_bytes(), 211);
    }

    #[test]
    fn limits_and_lifecycle() {
        let trace = Trace::new();
        let (mut i, mut r) = UdpEndpoint::loopback_pair(&trace).unwrap();
        assert_eq!(
            i.send(&vec![0; MAX_DATAGRAM + 1], "x").unwrap_err(),
            TransportError::Oversize(MAX_DATAGRAM + 1)
        );
        assert_eq!(
            r.recv(Duration::from_millis(10)).unwrap_err(),
            TransportError::Timeout
        );
        i.close();
        assert_eq!(i.send(b"x", "x").unwrap_err(), TransportError::Closed);
        assert_eq!(
            i.recv(Duration::from_millis(1)).unwrap_err(),
            TransportError::Closed
        );
    }
}
