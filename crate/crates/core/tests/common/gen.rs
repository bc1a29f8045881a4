//! proptest strategies for valid IKEv2 messages.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use nwu_qkd::codec::*;
use proptest::collection::vec;
use proptest::prelude::*;

fn bytes(min: usize, max: usize) -> impl Strategy<Value = Vec<u8>> {
    vec(any::<u8>(), min..=max)
}

fn transform() -> impl Strategy<Value = Transform> {
    (
        prop_oneof![
            Just(TransformType::Encr),
            Just(TransformType::Prf),
            Just(TransformType::Integ),
            Just(TransformType::Dh),
            Just(TransformType::Esn),
        ],
        any::<u16>(),
        proptest::option::of(any::<u16>()),
    )
        .prop_map(|(kind, id, key_length)| Transform {
            kind,
            id,
            key_length,
        })
}

fn proposal() -> impl Strategy<Value = Proposal> {
    (
        prop_oneof![Just(ProtocolId::Ike), Just(ProtocolId::Esp)],
        prop_oneof![Just(0usize), Just(4), Just(8)],
        vec(transform(), 1..6),
        any::<[u8; 8]>(),
    )
        .prop_map(|(protocol, spi_len, transforms, spi)| Proposal {
            number: 0,
            protocol,
            spi: spi[..spi_len].to_vec(),
            transforms,
        })
}

fn sa() -> impl Strategy<Value = SaPayload> {
    vec(proposal(), 1..4).prop_map(|mut proposals| {
        for (i, p) in proposals.iter_mut().enumerate() {
            p.number = i as u8 + 1;
        }
        SaPayload { proposals }
    })
}

fn selector() -> impl Strategy<Value = TrafficSelector> {
    (
        any::<bool>(),
        any::<u8>(),
        any::<u16>(),
        any::<u16>(),
        any::<u128>(),
        any::<u128>(),
    )
        .prop_map(|(v6, ip_protocol, start_port, end_port, a, b)| {
            let (start_address, end_address): (IpAddr, IpAddr) = if v6 {
                (Ipv6Addr::from(a).into(), Ipv6Addr::from(b).into())
            } else {
                (
                    Ipv4Addr::from(a as u32).into(),
                    Ipv4Addr::from(b as u32).into(),
                )
            };
            TrafficSelector {
                ip_protocol,
                start_port,
                end_port,
                start_address,
                end_address,
            }
        })
}

fn ts() -> impl Strategy<Value = TsPayload> {
    vec(selector(), 1..4).prop_map(|selectors| TsPayload { selectors })
}

fn id() -> impl Strategy<Value = IdPayload> {
    (any::<u8>(), bytes(1, 64)).prop_map(|(id_type, value)| IdPayload { id_type, value })
}

/// Any payload that may appear in a plain chain (no SK).
pub fn plain_payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        sa().prop_map(Payload::Sa),
        (any::<u16>(), bytes(1, 300)).prop_map(|(dh_group, public_value)| Payload::Ke(KePayload {
            dh_group,
            public_value
        })),
        id().prop_map(Payload::IdInitiator),
        id().prop_map(Payload::IdResponder),
        (any::<u8>(), bytes(0, 200))
            .prop_map(|(encoding, data)| Payload::Cert(CertPayload { encoding, data })),
        (1u8..=14, bytes(0, 300)).prop_map(|(m, data)| Payload::Auth(AuthPayload {
            method: AuthMethod::from_u8(m),
            data
        })),
        bytes(NoncePayload::MIN_LEN, NoncePayload::MAX_LEN)
            .prop_map(|nonce| Payload::Nonce(NoncePayload { nonce })),
        (
            prop_oneof![Just(0u8), Just(1), Just(3)],
            any::<u16>(),
            bytes(0, 300),
            any::<[u8; 4]>()
        )
            .prop_map(|(protocol_id, notify_type, data, spi)| {
                let spi = if protocol_id == 3 {
                    spi.to_vec()
                } else {
                    Vec::new()
                };
                Payload::Notify(NotifyPayload {
                    protocol_id,
                    spi,
                    notify_type,
                    data,
                })
            }),
        ts().prop_map(Payload::TsInitiator),
        ts().prop_map(Payload::TsResponder),
        bytes(4, 200).prop_map(|data| Payload::Eap(EapPayload { data })),
    ]
}

fn exchange() -> impl Strategy<Value = ExchangeType> {
    prop_oneof![
        Just(ExchangeType::IkeSaInit),
        Just(ExchangeType::IkeAuth),
        Just(ExchangeType::CreateChildSa),
        Just(ExchangeType::Informational),
    ]
}

fn header() -> impl Strategy<Value = IkeHeader> {
    (
        any::<[u8; 8]>(),
        any::<[u8; 8]>(),
        exchange(),
        any::<bool>(),
        any::<bool>(),
        any::<u32>(),
    )
        .prop_map(
            |(initiator_spi, responder_spi, exchange, initiator, response, message_id)| IkeHeader {
                initiator_spi,
                responder_spi,
                exchange,
                flags: Flags {
                    initiator,
                    response,
                },
                message_id,
            },
        )
}

fn sk() -> impl Strategy<Value = SkPayload> {
    (any::<u8>(), any::<[u8; 16]>(), 1usize..8, any::<[u8; 16]>()).prop_flat_map(
        |(first_inner, iv, blocks, icv)| {
            vec(any::<u8>(), blocks * 16).prop_map(move |ciphertext| SkPayload {
                first_inner,
                iv: iv.to_vec(),
                ciphertext,
                icv: icv.to_vec(),
            })
        },
    )
}

/// Valid messages: a plain chain, optionally terminated by an SK payload.
pub fn message() -> impl Strategy<Value = IkeMessage> {
    (
        header(),
        vec(plain_payload(), 0..6),
        proptest::option::of(sk()),
    )
        .prop_map(|(header, mut payloads, sk)| {
            payloads.extend(sk.map(Payload::Sk));
            IkeMessage { header, payloads }
        })
}

#[derive(Debug, Clone)]
pub enum Mutation {
    Flip(usize, u8),
    Set(usize, u8),
    Truncate(usize),
    Insert(usize, Vec<u8>),
    Remove(usize, usize),
}

impl Mutation {
    pub fn apply(&self, bytes: &mut Vec<u8>) {
        let at = |i: usize, len: usize| if len == 0 { 0 } else { i % len };
        match self {
            Mutation::Flip(i, mask) => {
                if !bytes.is_empty() {
                    let i = at(*i, bytes.len());
                    bytes[i] ^= mask | 1;
                }
            }
            Mutation::Set(i, v) => {
                if !bytes.is_empty() {
                    let i = at(*i, bytes.len());
                    bytes[i] = *v;
                }
            }
            Mutation::Truncate(n) => {
                let n = at(*n, bytes.len() + 1);
                bytes.truncate(n);
            }
            Mutation::Insert(i, extra) => {
                let i = at(*i, bytes.len() + 1);
                bytes.splice(i..i, extra.iter().copied());
            }
            Mutation::Remove(i, n) => {
                if !bytes.is_empty() {
                    let i = at(*i, bytes.len());
                    let end = (i + n).min(bytes.len());
                    bytes.drain(i..end);
                }
            }
        }
    }
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        (any::<usize>(), any::<u8>()).prop_map(|(i, m)| Mutation::Flip(i, m)),
        (any::<usize>(), any::<u8>()).prop_map(|(i, v)| Mutation::Set(i, v)),
        any::<usize>().prop_map(Mutation::Truncate),
        (any::<usize>(), bytes(1, 16)).prop_map(|(i, b)| Mutation::Insert(i, b)),
        (any::<usize>(), 1usize..16).prop_map(|(i, n)| Mutation::Remove(i, n)),
    ]
}

/// A valid message with one to four byte-level mutations applied after encoding.
pub fn mutated_bytes() -> impl Strategy<Value = Vec<u8>> {
    (message(), vec(mutation(), 1..5)).prop_map(|(m, mutations)| {
        let mut bytes = encode(&m).expect("valid message encodes");
        for mu in &mutations {
            mu.apply(&mut bytes);
        }
        bytes
    })
}
