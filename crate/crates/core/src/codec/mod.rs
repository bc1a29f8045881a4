//! IKEv2 wire format (RFC 7296) for the messages used by the NWu handshake.
//!
//! ```text
//!  0                   1                   2                   3
//!  0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                       IKE SA Initiator's SPI                  |
//! |                                                               |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                       IKE SA Responder's SPI                  |
//! |                                                               |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |  Next Payload | MjVer | MnVer | Exchange Type |     Flags     |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                          Message ID                           |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                            Length                             |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! ```

mod decode;
mod encode;
mod sk;

pub use decode::{decode, decode_payload_chain};
pub use encode::{encode, encode_payload_chain};
pub use sk::{decode_protected, encode_protected, open, seal, DirectionalKeys, BLOCK_LEN, ICV_LEN};

use std::net::IpAddr;

use thiserror::Error;
use uuid::Uuid;

pub const HEADER_LEN: usize = 28;
pub const GENERIC_HEADER_LEN: usize = 4;
pub const IKE_VERSION: u8 = 0x20;
pub const MAX_PAYLOAD_LEN: usize = u16::MAX as usize;

/// Private-use status notify carrying QKD key IDs as raw 16-byte UUIDs.
pub const NOTIFY_QKD_KEY_IDS: u16 = 40960;
/// Same IDs as the JSON container returned by the key-delivery API.
pub const NOTIFY_QKD_KEY_IDS_JSON: u16 = 40961;

pub mod notify_type {
    pub const INVALID_SYNTAX: u16 = 7;
    pub const NO_PROPOSAL_CHOSEN: u16 = 14;
    pub const INVALID_KE_PAYLOAD: u16 = 17;
    pub const AUTHENTICATION_FAILED: u16 = 24;
    pub const NO_ADDITIONAL_SAS: u16 = 35;
    pub const TEMPORARY_FAILURE: u16 = 43;
}

pub mod transform_id {
    pub const ENCR_AES_CBC: u16 = 12;
    pub const PRF_HMAC_SHA2_256: u16 = 5;
    pub const AUTH_HMAC_SHA2_256_128: u16 = 12;
    pub const DH_MODP_2048: u16 = 14;
    pub const ESN_NONE: u16 = 0;
}

pub mod id_type {
    pub const FQDN: u8 = 2;
    pub const RFC822_ADDR: u8 = 3;
    pub const KEY_ID: u8 = 11;
}

pub const CERT_X509_SIGNATURE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExchangeType {
    IkeSaInit,
    IkeAuth,
    CreateChildSa,
    Informational,
}

impl ExchangeType {
    pub fn to_u8(self) -> u8 {
        match self {
            ExchangeType::IkeSaInit => 34,
            ExchangeType::IkeAuth => 35,
            ExchangeType::CreateChildSa => 36,
            ExchangeType::Informational => 37,
        }
    }

    pub fn from_u8(value: u8) -> Option<Self> {
        Some(match value {
            34 => ExchangeType::IkeSaInit,
            35 => ExchangeType::IkeAuth,
            36 => ExchangeType::CreateChildSa,
            37 => ExchangeType::Informational,
            _ => return None,
        })
    }

    /// Short name used in message trace labels.
    pub fn label(self) -> &'static str {
        match self {
            ExchangeType::IkeSaInit => "IKE_SA_INIT",
            ExchangeType::IkeAuth => "IKE_AUTH",
            ExchangeType::CreateChildSa => "CHILD_SA",
            ExchangeType::Informational => "INFORMATIONAL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Flags {
    pub initiator: bool,
    pub response: bool,
}

impl Flags {
    const INITIATOR: u8 = 0x08;
    const VERSION: u8 = 0x10;
    const RESPONSE: u8 = 0x20;

    pub fn to_u8(self) -> u8 {
        let mut v = 0;
        if self.initiator {
            v |= Self::INITIATOR;
        }
        if self.response {
            v |= Self::RESPONSE;
        }
        v
    }

    fn from_u8(v: u8) -> Option<Self> {
        if v & !(Self::INITIATOR | Self::VERSION | Self::RESPONSE) != 0 {
            return None;
        }
        Some(Flags {
            initiator: v & Self::INITIATOR != 0,
            response: v & Self::RESPONSE != 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IkeHeader {
    pub initiator_spi: [u8; 8],
    pub responder_spi: [u8; 8],
    pub exchange: ExchangeType,
    pub flags: Flags,
    pub message_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IkeMessage {
    pub header: IkeHeader,
    pub payloads: Vec<Payload>,
}

impl IkeMessage {
    pub fn find<'a, T>(&'a self, pick: impl Fn(&'a Payload) -> Option<&'a T>) -> Option<&'a T> {
        self.payloads.iter().find_map(pick)
    }
}

/// Payload type numbers from the IANA IKEv2 registry.
pub mod payload_type {
    pub const NONE: u8 = 0;
    pub const SA: u8 = 33;
    pub const KE: u8 = 34;
    pub const IDI: u8 = 35;
    pub const IDR: u8 = 36;
    pub const CERT: u8 = 37;
    pub const AUTH: u8 = 39;
    pub const NONCE: u8 = 40;
    pub const NOTIFY: u8 = 41;
    pub const TSI: u8 = 44;
    pub const TSR: u8 = 45;
    pub const SK: u8 = 46;
    pub const EAP: u8 = 48;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Sa(SaPayload),
    Ke(KePayload),
    IdInitiator(IdPayload),
    IdResponder(IdPayload),
    Cert(CertPayload),
    Auth(AuthPayload),
    Nonce(NoncePayload),
    Notify(NotifyPayload),
    TsInitiator(TsPayload),
    TsResponder(TsPayload),
    Eap(EapPayload),
    Sk(SkPayload),
}

impl Payload {
    pub fn type_code(&self) -> u8 {
        use payload_type::*;
        match self {
            Payload::Sa(_) => SA,
            Payload::Ke(_) => KE,
            Payload::IdInitiator(_) => IDI,
            Payload::IdResponder(_) => IDR,
            Payload::Cert(_) => CERT,
            Payload::Auth(_) => AUTH,
            Payload::Nonce(_) => NONCE,
            Payload::Notify(_) => NOTIFY,
            Payload::TsInitiator(_) => TSI,
            Payload::TsResponder(_) => TSR,
            Payload::Eap(_) => EAP,
            Payload::Sk(_) => SK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformType {
    Encr,
    Prf,
    Integ,
    Dh,
    Esn,
}

impl TransformType {
    pub fn to_u8(self) -> u8 {
        match self {
            TransformType::Encr => 1,
            TransformType::Prf => 2,
            TransformType::Integ => 3,
            TransformType::Dh => 4,
            TransformType::Esn => 5,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => TransformType::Encr,
            2 => TransformType::Prf,
            3 => TransformType::Integ,
            4 => TransformType::Dh,
            5 => TransformType::Esn,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transform {
    pub kind: TransformType,
    pub id: u16,
    /// Key Length attribute (bits), for variable-length ciphers.
    pub key_length: Option<u16>,
}

impl Transform {
    pub fn new(kind: TransformType, id: u16) -> Self {
        Transform {
            kind,
            id,
            key_length: None,
        }
    }

    pub fn with_key_length(kind: TransformType, id: u16, bits: u16) -> Self {
        Transform {
            kind,
            id,
            key_length: Some(bits),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolId {
    Ike,
    Esp,
}

impl ProtocolId {
    pub fn to_u8(self) -> u8 {
        match self {
            ProtocolId::Ike => 1,
            ProtocolId::Esp => 3,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(ProtocolId::Ike),
            3 => Some(ProtocolId::Esp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub number: u8,
    pub protocol: ProtocolId,
    pub spi: Vec<u8>,
    pub transforms: Vec<Transform>,
}

impl Proposal {
    pub fn transforms_of(&self, kind: TransformType) -> impl Iterator<Item = &Transform> {
        self.transforms.iter().filter(move |t| t.kind == kind)
    }

    pub fn dh_group(&self) -> Option<u16> {
        self.transforms_of(TransformType::Dh).next().map(|t| t.id)
    }

    pub fn has_dh(&self) -> bool {
        self.dh_group().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaPayload {
    pub proposals: Vec<Proposal>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KePayload {
    pub dh_group: u16,
    pub public_value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoncePayload {
    pub nonce: Vec<u8>,
}

impl NoncePayload {
    pub const MIN_LEN: usize = 16;
    pub const MAX_LEN: usize = 256;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotifyPayload {
    pub protocol_id: u8,
    pub spi: Vec<u8>,
    pub notify_type: u16,
    pub data: Vec<u8>,
}

impl NotifyPayload {
    pub fn new(notify_type: u16, data: Vec<u8>) -> Self {
        NotifyPayload {
            protocol_id: 0,
            spi: Vec::new(),
            notify_type,
            data,
        }
    }

    /// Types below 16384 report errors.
    pub fn is_error(&self) -> bool {
        self.notify_type < 16384
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdPayload {
    pub id_type: u8,
    pub value: Vec<u8>,
}

impl IdPayload {
    /// Bytes covered by the MACed identity in AUTH computation.
    pub fn rest_of_payload(&self) -> Vec<u8> {
        let mut out = vec![self.id_type, 0, 0, 0];
        out.extend_from_slice(&self.value);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthMethod {
    RsaSignature,
    SharedKeyMic,
    Other(u8),
}

impl AuthMethod {
    pub fn to_u8(self) -> u8 {
        match self {
            AuthMethod::RsaSignature => 1,
            AuthMethod::SharedKeyMic => 2,
            AuthMethod::Other(v) => v,
        }
    }

    pub fn from_u8(v: u8) -> Self {
        match v {
            1 => AuthMethod::RsaSignature,
            2 => AuthMethod::SharedKeyMic,
            v => AuthMethod::Other(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthPayload {
    pub method: AuthMethod,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertPayload {
    pub encoding: u8,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EapPayload {
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficSelector {
    pub ip_protocol: u8,
    pub start_port: u16,
    pub end_port: u16,
    pub start_address: IpAddr,
    pub end_address: IpAddr,
}

impl TrafficSelector {
    pub const TS_IPV4_ADDR_RANGE: u8 = 7;
    pub const TS_IPV6_ADDR_RANGE: u8 = 8;

    /// Selector covering every address and port of one family.
    pub fn any(v6: bool) -> Self {
        use std::net::{Ipv4Addr, Ipv6Addr};
        let (start, end): (IpAddr, IpAddr) = if v6 {
            (
                Ipv6Addr::UNSPECIFIED.into(),
                Ipv6Addr::from(u128::MAX).into(),
            )
        } else {
            (Ipv4Addr::UNSPECIFIED.into(), Ipv4Addr::BROADCAST.into())
        };
        TrafficSelector {
            ip_protocol: 0,
            start_port: 0,
            end_port: u16::MAX,
            start_address: start,
            end_address: end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsPayload {
    pub selectors: Vec<TrafficSelector>,
}

/// Encrypted and integrity-protected payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkPayload {
    /// Type of the first payload inside the ciphertext.
    pub first_inner: u8,
    pub iv: Vec<u8>,
    pub ciphertext: Vec<u8>,
    pub icv: Vec<u8>,
}

/// How QKD key IDs are laid out inside the key-ID notify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyIdEncoding {
    /// 16 raw bytes per ID, notify type 40960.
    #[default]
    Binary,
    /// The key-delivery API's `{"key_IDs":[{"key_ID":"..."}]}` container,
    /// forwarded verbatim, notify type 40961.
    Json,
}

impl KeyIdEncoding {
    pub fn notify_type(self) -> u16 {
        match self {
            KeyIdEncoding::Binary => NOTIFY_QKD_KEY_IDS,
            KeyIdEncoding::Json => NOTIFY_QKD_KEY_IDS_JSON,
        }
    }

    pub fn from_notify_type(t: u16) -> Option<Self> {
        match t {
            NOTIFY_QKD_KEY_IDS => Some(KeyIdEncoding::Binary),
            NOTIFY_QKD_KEY_IDS_JSON => Some(KeyIdEncoding::Json),
            _ => None,
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyIdsJson {
    #[serde(rename = "key_IDs")]
    key_ids: Vec<KeyIdJson>,
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyIdJson {
    #[serde(rename = "key_ID")]
    key_id: Uuid,
}

/// Builds the notify that carries the ordered QKD key IDs to the UE.
pub fn key_ids_notify(ids: &[Uuid], encoding: KeyIdEncoding) -> NotifyPayload {
    let data = match encoding {
        KeyIdEncoding::Binary => ids.iter().flat_map(|id| *id.as_bytes()).collect(),
        KeyIdEncoding::Json => serde_json::to_vec(&KeyIdsJson {
            key_ids: ids.iter().map(|&key_id| KeyIdJson { key_id }).collect(),
        })
        .expect("plain struct serializes"),
    };
    NotifyPayload::new(encoding.notify_type(), data)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyIdNotifyError {
    #[error("notify type {0} does not carry key IDs")]
    WrongType(u16),
    #[error("key-ID data length {0} is not a multiple of 16")]
    BadLength(usize),
    #[error("key-ID container: {0}")]
    BadJson(String),
}

/// Extracts the ordered key IDs from a key-ID notify.
pub fn parse_key_ids(notify: &NotifyPayload) -> Result<Vec<Uuid>, KeyIdNotifyError> {
    match KeyIdEncoding::from_notify_type(notify.notify_type) {
        Some(KeyIdEncoding::Binary) => {
            if !notify.data.len().is_multiple_of(16) {
                return Err(KeyIdNotifyError::BadLength(notify.data.len()));
            }
            Ok(notify
                .data
                .chunks_exact(16)
                .map(|c| Uuid::from_slice(c).expect("16-byte chunk"))
                .collect())
        }
        Some(KeyIdEncoding::Json) => serde_json::from_slice::<KeyIdsJson>(&notify.data)
            .map(|c| c.key_ids.into_iter().map(|k| k.key_id).collect())
            .map_err(|e| KeyIdNotifyError::BadJson(e.to_string())),
        None => Err(KeyIdNotifyError::WrongType(notify.notify_type)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("truncated at offset {offset} (payload {payload_index:?}): need {needed} bytes, {available} available")]
    Truncated {
        offset: usize,
        payload_index: Option<usize>,
        needed: usize,
        available: usize,
    },
    #[error("unsupported IKE version {0:#04x}")]
    BadVersion(u8),
    #[error("length mismatch at offset {offset} (payload {payload_index:?}): declared {declared}, actual {actual}")]
    Length {
        offset: usize,
        payload_index: Option<usize>,
        declared: usize,
        actual: usize,
    },
    #[error(
        "unknown critical payload type {payload_type} at offset {offset} (payload {payload_index})"
    )]
    UnknownCriticalPayload {
        offset: usize,
        payload_index: usize,
        payload_type: u8,
    },
    #[error("malformed {what} at offset {offset} (payload {payload_index:?})")]
    Malformed {
        offset: usize,
        payload_index: Option<usize>,
        what: &'static str,
    },
    #[error("payload {payload_index} encodes to {size} bytes, over the 65535 limit")]
    Oversize { payload_index: usize, size: usize },
    #[error("integrity check failed")]
    Integrity,
}

impl CodecError {
    fn at_payload(mut self, index: usize) -> Self {
        match &mut self {
            CodecError::Truncated { payload_index, .. }
            | CodecError::Length { payload_index, .. }
            | CodecError::Malformed { payload_index, .. } => {
                payload_index.get_or_insert(index);
            }
            _ => {}
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_ids_round_trip_in_both_encodings() {
        let ids: Vec<Uuid> = (1..=13u128).map(Uuid::from_u128).collect();
        for enc in [KeyIdEncoding::Binary, KeyIdEncoding::Json] {
            let n = key_ids_notify(&ids, enc);
            assert_eq!(n.notify_type, enc.notify_type());
            assert_eq!(parse_key_ids(&n).unwrap(), ids);
        }
        assert_eq!(key_ids_notify(&ids, KeyIdEncoding::Binary).data.len(), 208);
    }

    #[test]
    fn json_container_layout() {
        let id = Uuid::from_u128(0x0123_4567_89ab_cdef_0123_4567_89ab_cdef);
        let n = key_ids_notify(&[id, id], KeyIdEncoding::Json);
        let expected = format!(r#"{{"key_IDs":[{{"key_ID":"{id}"}},{{"key_ID":"{id}"}}]}}"#);
        assert_eq!(n.data, expected.as_bytes());
        // 12-byte prefix, 49 bytes per entry, separators, 2-byte suffix.
        let ids = vec![id; 13];
        assert_eq!(
            key_ids_notify(&ids, KeyIdEncoding::Json).data.len(),
            12 + 13 * 49 + 12 + 2
        );
    }

    #[test]
    fn key_ids_reject_malformed_data() {
        let mut n = key_ids_notify(&[Uuid::from_u128(7); 13], KeyIdEncoding::Binary);
        n.data.push(0);
        assert_eq!(parse_key_ids(&n), Err(KeyIdNotifyError::BadLength(209)));
        let other = NotifyPayload::new(notify_type::NO_PROPOSAL_CHOSEN, vec![]);
        assert!(matches!(
            parse_key_ids(&other),
            Err(KeyIdNotifyError::WrongType(14))
        ));
        let mut j = key_ids_notify(&[Uuid::from_u128(7)], KeyIdEncoding::Json);
        j.data.pop();
        assert!(matches!(
            parse_key_ids(&j),
            Err(KeyIdNotifyError::BadJson(_))
        ));
        let extra =
            NotifyPayload::new(NOTIFY_QKD_KEY_IDS_JSON, br#"{"key_IDs":[],"x":1}"#.to_vec());
        assert!(matches!(
            parse_key_ids(&extra),
            Err(KeyIdNotifyError::BadJson(_))
        ));
    }

    #[test]
    fn flags_reject_reserved_bits() {
        assert!(Flags::from_u8(0x01).is_none());
        assert_eq!(
            Flags::from_u8(0x28),
            Some(Flags {
                initiator: true,
                response: true
            })
        );
    }
}
