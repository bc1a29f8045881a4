use std::net::IpAddr;

use super::*;

/// Serializes a message; the header length field always matches the output.
pub fn encode(message: &IkeMessage) -> Result<Vec<u8>, CodecError> {
    let chain = encode_chain(&message.payloads)?;
    let total = HEADER_LEN + chain.len();
    let total_u32 = u32::try_from(total).map_err(|_| CodecError::Oversize {
        payload_index: message.payloads.len(),
        size: total,
    })?;

    let h = &message.header;
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&h.initiator_spi);
    out.extend_from_slice(&h.responder_spi);
    out.push(
        message
            .payloads
            .first()
            .map_or(payload_type::NONE, Payload::type_code),
    );
    out.push(IKE_VERSION);
    out.push(h.exchange.to_u8());
    out.push(h.flags.to_u8());
    out.extend_from_slice(&h.message_id.to_be_bytes());
    out.extend_from_slice(&total_u32.to_be_bytes());
    out.extend_from_slice(&chain);
    Ok(out)
}

/// Serializes a bare payload chain, as carried inside an SK payload.
pub fn encode_payload_chain(payloads: &[Payload]) -> Result<Vec<u8>, CodecError> {
    encode_chain(payloads)
}

fn encode_chain(payloads: &[Payload]) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    for (index, payload) in payloads.iter().enumerate() {
        let next = match payload {
            Payload::Sk(sk) => {
                if index + 1 != payloads.len() {
                    return Err(CodecError::Malformed {
                        offset: HEADER_LEN + out.len(),
                        payload_index: Some(index),
                        what: "SK payload not last",
                    });
                }
                sk.first_inner
            }
            _ => payloads
                .get(index + 1)
                .map_or(payload_type::NONE, Payload::type_code),
        };
        let body = encode_body(payload).map_err(|e| e.at_payload(index))?;
        let size = GENERIC_HEADER_LEN + body.len();
        if size > MAX_PAYLOAD_LEN {
            return Err(CodecError::Oversize {
                payload_index: index,
                size,
            });
        }
        out.push(next);
        out.push(0);
        out.extend_from_slice(&(size as u16).to_be_bytes());
        out.extend_from_slice(&body);
    }
    Ok(out)
}

fn encode_body(payload: &Payload) -> Result<Vec<u8>, CodecError> {
    let mut b = Vec::new();
    match payload {
        Payload::Sa(sa) => encode_sa(sa, &mut b)?,
        Payload::Ke(ke) => {
            b.extend_from_slice(&ke.dh_group.to_be_bytes());
            b.extend_from_slice(&[0, 0]);
            b.extend_from_slice(&ke.public_value);
        }
        Payload::IdInitiator(id) | Payload::IdResponder(id) => {
            b.extend_from_slice(&id.rest_of_payload());
        }
        Payload::Cert(cert) => {
            b.push(cert.encoding);
            b.extend_from_slice(&cert.data);
        }
        Payload::Auth(auth) => {
            b.extend_from_slice(&[auth.method.to_u8(), 0, 0, 0]);
            b.extend_from_slice(&auth.data);
        }
        Payload::Nonce(n) => {
            if !(NoncePayload::MIN_LEN..=NoncePayload::MAX_LEN).contains(&n.nonce.len()) {
                return Err(CodecError::Malformed {
                    offset: 0,
                    payload_index: None,
                    what: "nonce length",
                });
            }
            b.extend_from_slice(&n.nonce);
        }
        Payload::Notify(n) => {
            let spi_len = u8::try_from(n.spi.len()).map_err(|_| CodecError::Malformed {
                offset: 0,
                payload_index: None,
                what: "notify SPI",
            })?;
            b.push(n.protocol_id);
            b.push(spi_len);
            b.extend_from_slice(&n.notify_type.to_be_bytes());
            b.extend_from_slice(&n.spi);
            b.extend_from_slice(&n.data);
        }
        Payload::TsInitiator(ts) | Payload::TsResponder(ts) => encode_ts(ts, &mut b)?,
        Payload::Eap(eap) => b.extend_from_slice(&eap.data),
        Payload::Sk(sk) => {
            b.extend_from_slice(&sk.iv);
            b.extend_from_slice(&sk.ciphertext);
            b.extend_from_slice(&sk.icv);
        }
    }
    Ok(b)
}

fn malformed(what: &'static str) -> CodecError {
    CodecError::Malformed {
        offset: 0,
        payload_index: None,
        what,
    }
}

fn encode_sa(sa: &SaPayload, b: &mut Vec<u8>) -> Result<(), CodecError> {
    for (pi, proposal) in sa.proposals.iter().enumerate() {
        let mut transforms = Vec::new();
        for (ti, t) in proposal.transforms.iter().enumerate() {
            let len: u16 = if t.key_length.is_some() { 12 } else { 8 };
            transforms.push(if ti + 1 == proposal.transforms.len() {
                0
            } else {
                3
            });
            transforms.push(0);
            transforms.extend_from_slice(&len.to_be_bytes());
            transforms.push(t.kind.to_u8());
            transforms.push(0);
            transforms.extend_from_slice(&t.id.to_be_bytes());
            if let Some(bits) = t.key_length {
                // TV attribute 14 (Key Length), AF bit set.
                transforms.extend_from_slice(&0x800eu16.to_be_bytes());
                transforms.extend_from_slice(&bits.to_be_bytes());
            }
        }
        let spi_len = u8::try_from(proposal.spi.len()).map_err(|_| malformed("proposal SPI"))?;
        let count =
            u8::try_from(proposal.transforms.len()).map_err(|_| malformed("transform count"))?;
        let len = 8 + proposal.spi.len() + transforms.len();
        let len = u16::try_from(len).map_err(|_| malformed("proposal length"))?;
        b.push(if pi + 1 == sa.proposals.len() { 0 } else { 2 });
        b.push(0);
        b.extend_from_slice(&len.to_be_bytes());
        b.push(proposal.number);
        b.push(proposal.protocol.to_u8());
        b.push(spi_len);
        b.push(count);
        b.extend_from_slice(&proposal.spi);
        b.extend_from_slice(&transforms);
    }
    Ok(())
}

fn encode_ts(ts: &TsPayload, b: &mut Vec<u8>) -> Result<(), CodecError> {
    let count = u8::try_from(ts.selectors.len()).map_err(|_| malformed("selector count"))?;
    b.extend_from_slice(&[count, 0, 0, 0]);
    for s in &ts.selectors {
        let (kind, len) = match (s.start_address, s.end_address) {
            (IpAddr::V4(_), IpAddr::V4(_)) => (TrafficSelector::TS_IPV4_ADDR_RANGE, 16u16),
            (IpAddr::V6(_), IpAddr::V6(_)) => (TrafficSelector::TS_IPV6_ADDR_RANGE, 40u16),
            _ => return Err(malformed("traffic selector address family")),
        };
        b.push(kind);
        b.push(s.ip_protocol);
        b.extend_from_slice(&len.to_be_bytes());
        b.extend_from_slice(&s.start_port.to_be_bytes());
        b.extend_from_slice(&s.end_port.to_be_bytes());
        for addr in [s.start_address, s.end_address] {
            match addr {
                IpAddr::V4(a) => b.extend_from_slice(&a.octets()),
                IpAddr::V6(a) => b.extend_from_slice(&a.octets()),
            }
        }
    }
    Ok(())
}
