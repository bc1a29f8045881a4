use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use super::*;

type Result<T> = std::result::Result<T, CodecError>;

/// Bounds-checked cursor; offsets in errors are absolute message offsets.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], base: usize) -> Self {
        Reader { buf, pos: 0, base }
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(CodecError::Truncated {
                offset: self.offset(),
                payload_index: None,
                needed: n,
                available: self.remaining(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn malformed(&self, what: &'static str) -> CodecError {
        CodecError::Malformed {
            offset: self.offset(),
            payload_index: None,
            what,
        }
    }

    fn expect_end(&self, what: &'static str) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.malformed(what));
        }
        Ok(())
    }
}

/// Parses a complete IKE message. Arbitrary input is accepted; anything that
/// is not a well-formed message yields a [`CodecError`].
pub fn decode(bytes: &[u8]) -> Result<IkeMessage> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Truncated {
            offset: 0,
            payload_index: None,
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let mut initiator_spi = [0u8; 8];
    let mut responder_spi = [0u8; 8];
    initiator_spi.copy_from_slice(&bytes[0..8]);
    responder_spi.copy_from_slice(&bytes[8..16]);
    let first = bytes[16];
    if bytes[17] != IKE_VERSION {
        return Err(CodecError::BadVersion(bytes[17]));
    }
    let exchange = ExchangeType::from_u8(bytes[18]).ok_or(CodecError::Malformed {
        offset: 18,
        payload_index: None,
        what: "exchange type",
    })?;
    let flags = Flags::from_u8(bytes[19]).ok_or(CodecError::Malformed {
        offset: 19,
        payload_index: None,
        what: "flags",
    })?;
    let message_id = u32::from_be_bytes([bytes[20], bytes[21], bytes[22], bytes[23]]);
    let declared = u32::from_be_bytes([bytes[24], bytes[25], bytes[26], bytes[27]]) as usize;
    if declared != bytes.len() {
        return Err(CodecError::Length {
            offset: 24,
            payload_index: None,
            declared,
            actual: bytes.len(),
        });
    }
    let payloads = parse_chain(first, &bytes[HEADER_LEN..], HEADER_LEN, true)?;
    Ok(IkeMessage {
        header: IkeHeader {
            initiator_spi,
            responder_spi,
            exchange,
            flags,
            message_id,
        },
        payloads,
    })
}

/// Parses a payload chain that starts with a payload of type `first`, as
/// found in decrypted SK contents. SK payloads are not allowed inside.
pub fn decode_payload_chain(first: u8, bytes: &[u8]) -> Result<Vec<Payload>> {
    parse_chain(first, bytes, 0, false)
}

fn parse_chain(first: u8, buf: &[u8], base: usize, allow_sk: bool) -> Result<Vec<Payload>> {
    let mut out = Vec::new();
    let mut next = first;
    let mut pos = 0usize;
    let mut index = 0usize;
    while next != payload_type::NONE {
        let available = buf.len() - pos;
        if available < GENERIC_HEADER_LEN {
            return Err(CodecError::Truncated {
                offset: base + pos,
                payload_index: Some(index),
                needed: GENERIC_HEADER_LEN,
                available,
            });
        }
        let this = next;
        next = buf[pos];
        let critical = buf[pos + 1] & 0x80 != 0;
        let len = u16::from_be_bytes([buf[pos + 2], buf[pos + 3]]) as usize;
        if len < GENERIC_HEADER_LEN || len > available {
            return Err(CodecError::Length {
                offset: base + pos,
                payload_index: Some(index),
                declared: len,
                actual: available,
            });
        }
        let body = &buf[pos + GENERIC_HEADER_LEN..pos + len];
        let body_offset = base + pos + GENERIC_HEADER_LEN;

        if this == payload_type::SK {
            if !allow_sk {
                return Err(CodecError::Malformed {
                    offset: base + pos,
                    payload_index: Some(index),
                    what: "nested SK payload",
                });
            }
            let sk = parse_sk(body, body_offset, next).map_err(|e| e.at_payload(index))?;
            out.push(Payload::Sk(sk));
            pos += len;
            if pos != buf.len() {
                return Err(CodecError::Length {
                    offset: base + pos,
                    payload_index: Some(index),
                    declared: pos,
                    actual: buf.len(),
                });
            }
            return Ok(out);
        }

        match parse_body(this, body, body_offset).map_err(|e| e.at_payload(index))? {
            Some(p) => out.push(p),
            None if critical => {
                return Err(CodecError::UnknownCriticalPayload {
                    offset: base + pos,
                    payload_index: index,
                    payload_type: this,
                })
            }
            // Unknown non-critical payloads are skipped.
            None => {}
        }
        pos += len;
        index += 1;
    }
    if pos != buf.len() {
        return Err(CodecError::Length {
            offset: base + pos,
            payload_index: None,
            declared: base + pos,
            actual: base + buf.len(),
        });
    }
    Ok(out)
}

fn parse_body(kind: u8, body: &[u8], base: usize) -> Result<Option<Payload>> {
    use payload_type::*;
    let mut r = Reader::new(body, base);
    let payload = match kind {
        SA => Payload::Sa(parse_sa(&mut r)?),
        KE => {
            let dh_group = r.u16()?;
            r.take(2)?;
            Payload::Ke(KePayload {
                dh_group,
                public_value: r.rest().to_vec(),
            })
        }
        IDI | IDR => {
            let id_type = r.u8()?;
            r.take(3)?;
            let id = IdPayload {
                id_type,
                value: r.rest().to_vec(),
            };
            if kind == IDI {
                Payload::IdInitiator(id)
            } else {
                Payload::IdResponder(id)
            }
        }
        CERT => {
            let encoding = r.u8()?;
            Payload::Cert(CertPayload {
                encoding,
                data: r.rest().to_vec(),
            })
        }
        AUTH => {
            let method = AuthMethod::from_u8(r.u8()?);
            r.take(3)?;
            Payload::Auth(AuthPayload {
                method,
                data: r.rest().to_vec(),
            })
        }
        NONCE => {
            if !(NoncePayload::MIN_LEN..=NoncePayload::MAX_LEN).contains(&body.len()) {
                return Err(r.malformed("nonce length"));
            }
            Payload::Nonce(NoncePayload {
                nonce: r.rest().to_vec(),
            })
        }
        NOTIFY => {
            let protocol_id = r.u8()?;
            let spi_len = r.u8()? as usize;
            let notify_type = r.u16()?;
            let spi = r.take(spi_len)?.to_vec();
            Payload::Notify(NotifyPayload {
                protocol_id,
                spi,
                notify_type,
                data: r.rest().to_vec(),
            })
        }
        TSI | TSR => {
            let ts = parse_ts(&mut r)?;
            if kind == TSI {
                Payload::TsInitiator(ts)
            } else {
                Payload::TsResponder(ts)
            }
        }
        EAP => Payload::Eap(EapPayload {
            data: r.rest().to_vec(),
        }),
        _ => return Ok(None),
    };
    Ok(Some(payload))
}

fn parse_sa(r: &mut Reader<'_>) -> Result<SaPayload> {
    let mut proposals = Vec::new();
    let mut more = r.remaining() > 0;
    while more {
        let start = r.offset();
        let last = r.u8()?;
        r.take(1)?;
        let len = r.u16()? as usize;
        if len < 8 || len - 4 > r.remaining() {
            return Err(CodecError::Length {
                offset: start,
                payload_index: None,
                declared: len,
                actual: r.remaining() + 4,
            });
        }
        let mut p = Reader::new(r.take(len - 4)?, start + 4);
        let number = p.u8()?;
        let protocol = ProtocolId::from_u8(p.u8()?).ok_or_else(|| p.malformed("protocol id"))?;
        let spi_len = p.u8()? as usize;
        let count = p.u8()? as usize;
        let spi = p.take(spi_len)?.to_vec();
        let mut transforms = Vec::with_capacity(count);
        for i in 0..count {
            let t_start = p.offset();
            let t_last = p.u8()?;
            p.take(1)?;
            let t_len = p.u16()? as usize;
            if t_len < 8 || t_len - 4 > p.remaining() {
                return Err(CodecError::Length {
                    offset: t_start,
                    payload_index: None,
                    declared: t_len,
                    actual: p.remaining() + 4,
                });
            }
            let expected_last = if i + 1 == count { 0 } else { 3 };
            if t_last != expected_last {
                return Err(p.malformed("transform substructure flag"));
            }
            let mut t = Reader::new(p.take(t_len - 4)?, t_start + 4);
            let kind =
                TransformType::from_u8(t.u8()?).ok_or_else(|| t.malformed("transform type"))?;
            t.take(1)?;
            let id = t.u16()?;
            let key_length = match t.remaining() {
                0 => None,
                4 => {
                    if t.u16()? != 0x800e {
                        return Err(t.malformed("transform attribute"));
                    }
                    Some(t.u16()?)
                }
                _ => return Err(t.malformed("transform attributes")),
            };
            transforms.push(Transform {
                kind,
                id,
                key_length,
            });
        }
        p.expect_end("proposal trailing bytes")?;
        more = match last {
            0 => false,
            2 => true,
            _ => {
                return Err(CodecError::Malformed {
                    offset: start,
                    payload_index: None,
                    what: "proposal substructure flag",
                })
            }
        };
        if more != (r.remaining() > 0) {
            return Err(r.malformed("proposal chain"));
        }
        proposals.push(Proposal {
            number,
            protocol,
            spi,
            transforms,
        });
    }
    Ok(SaPayload { proposals })
}

fn parse_ts(r: &mut Reader<'_>) -> Result<TsPayload> {
    let count = r.u8()? as usize;
    r.take(3)?;
    let mut selectors = Vec::with_capacity(count);
    for _ in 0..count {
        let ts_type = r.u8()?;
        let ip_protocol = r.u8()?;
        let len = r.u16()?;
        let start_port = r.u16()?;
        let end_port = r.u16()?;
        let (start_address, end_address): (IpAddr, IpAddr) = match (ts_type, len) {
            (TrafficSelector::TS_IPV4_ADDR_RANGE, 16) => {
                let a: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
                let b: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
                (Ipv4Addr::from(a).into(), Ipv4Addr::from(b).into())
            }
            (TrafficSelector::TS_IPV6_ADDR_RANGE, 40) => {
                let a: [u8; 16] = r.take(16)?.try_into().expect("16 bytes");
                let b: [u8; 16] = r.take(16)?.try_into().expect("16 bytes");
                (Ipv6Addr::from(a).into(), Ipv6Addr::from(b).into())
            }
            _ => return Err(r.malformed("traffic selector")),
        };
        selectors.push(TrafficSelector {
            ip_protocol,
            start_port,
            end_port,
            start_address,
            end_address,
        });
    }
    r.expect_end("traffic selector trailing bytes")?;
    Ok(TsPayload { selectors })
}

fn parse_sk(body: &[u8], base: usize, first_inner: u8) -> Result<SkPayload> {
    let mut r = Reader::new(body, base);
    let iv = r.take(BLOCK_LEN)?.to_vec();
    if r.remaining() < ICV_LEN + BLOCK_LEN || !(r.remaining() - ICV_LEN).is_multiple_of(BLOCK_LEN) {
        return Err(r.malformed("SK ciphertext length"));
    }
    let ciphertext = r.take(r.remaining() - ICV_LEN)?.to_vec();
    let icv = r.rest().to_vec();
    Ok(SkPayload {
        first_inner,
        iv,
        ciphertext,
        icv,
    })
}
