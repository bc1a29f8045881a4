//! Message construction shared by both peers.

use rand::RngCore;

use crate::codec::{
    notify_type, transform_id, ExchangeType, Flags, IkeHeader, NotifyPayload, Payload, Proposal,
    ProtocolId, SaPayload, TrafficSelector, Transform, TransformType, TsPayload, BLOCK_LEN,
};
use crate::transport::Direction;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub bytes: Vec<u8>,
    pub label: String,
    pub message_id: u32,
}

/// "IKE_SA_INIT MID=00 I", "IKE_AUTH MID=03 R", "CHILD_SA MID=06 I".
pub fn message_label(exchange: ExchangeType, message_id: u32, direction: Direction) -> String {
    format!(
        "{} MID={:02} {}",
        exchange.label(),
        message_id,
        direction.tag()
    )
}

pub(crate) fn header(
    spi_i: [u8; 8],
    spi_r: [u8; 8],
    exchange: ExchangeType,
    from_initiator: bool,
    response: bool,
    message_id: u32,
) -> IkeHeader {
    IkeHeader {
        initiator_spi: spi_i,
        responder_spi: spi_r,
        exchange,
        flags: Flags {
            initiator: from_initiator,
            response,
        },
        message_id,
    }
}

fn cipher_suite() -> Vec<Transform> {
    vec![
        Transform::with_key_length(TransformType::Encr, transform_id::ENCR_AES_CBC, 256),
        Transform::new(TransformType::Integ, transform_id::AUTH_HMAC_SHA2_256_128),
    ]
}

/// IKE SA proposal; QKD mode leaves out the DH transform.
pub(crate) fn ike_proposal(with_dh: bool) -> SaPayload {
    let mut transforms = cipher_suite();
    transforms.insert(
        1,
        Transform::new(TransformType::Prf, transform_id::PRF_HMAC_SHA2_256),
    );
    if with_dh {
        transforms.push(Transform::new(
            TransformType::Dh,
            transform_id::DH_MODP_2048,
        ));
    }
    SaPayload {
        proposals: vec![Proposal {
            number: 1,
            protocol: ProtocolId::Ike,
            spi: Vec::new(),
            transforms,
        }],
    }
}

pub(crate) fn esp_proposal(spi: [u8; 4]) -> SaPayload {
    let mut transforms = cipher_suite();
    transforms.push(Transform::new(TransformType::Esn, transform_id::ESN_NONE));
    SaPayload {
        proposals: vec![Proposal {
            number: 1,
            protocol: ProtocolId::Esp,
            spi: spi.to_vec(),
            transforms,
        }],
    }
}

fn has(p: &Proposal, kind: TransformType, id: u16, key_length: Option<u16>) -> bool {
    p.transforms_of(kind)
        .any(|t| t.id == id && t.key_length == key_length)
}

fn suite_ok(p: &Proposal) -> bool {
    has(
        p,
        TransformType::Encr,
        transform_id::ENCR_AES_CBC,
        Some(256),
    ) && has(
        p,
        TransformType::Integ,
        transform_id::AUTH_HMAC_SHA2_256_128,
        None,
    )
}

/// Picks the first acceptable IKE proposal, or the notify type to reject with.
pub(crate) fn select_ike_proposal(sa: &SaPayload, want_dh: bool) -> Result<Proposal, u16> {
    sa.proposals
        .iter()
        .find(|p| {
            p.protocol == ProtocolId::Ike
                && suite_ok(p)
                && has(p, TransformType::Prf, transform_id::PRF_HMAC_SHA2_256, None)
                && if want_dh {
                    p.dh_group() == Some(transform_id::DH_MODP_2048)
                } else {
                    !p.has_dh()
                }
        })
        .map(|p| {
            let mut chosen = p.clone();
            if want_dh {
                // Echo only the group we use.
                chosen
                    .transforms
                    .retain(|t| t.kind != TransformType::Dh || t.id == transform_id::DH_MODP_2048);
            }
            chosen
        })
        .ok_or(notify_type::NO_PROPOSAL_CHOSEN)
}

/// Returns the peer's ESP SPI from the first acceptable proposal.
pub(crate) fn select_esp_proposal(sa: &SaPayload) -> Result<[u8; 4], u16> {
    sa.proposals
        .iter()
        .find(|p| {
            p.protocol == ProtocolId::Esp
                && p.spi.len() == 4
                && suite_ok(p)
                && has(p, TransformType::Esn, transform_id::ESN_NONE, None)
                && !p.has_dh()
        })
        .map(|p| p.spi.as_slice().try_into().expect("checked length"))
        .ok_or(notify_type::NO_PROPOSAL_CHOSEN)
}

pub(crate) fn traffic_selectors() -> [Payload; 2] {
    [
        Payload::TsInitiator(TsPayload {
            selectors: vec![TrafficSelector::any(false)],
        }),
        Payload::TsResponder(TsPayload {
            selectors: vec![TrafficSelector::any(false)],
        }),
    ]
}

pub(crate) fn error_notify(notify: u16) -> Payload {
    Payload::Notify(NotifyPayload::new(notify, Vec::new()))
}

/// First error notify among `payloads`.
pub(crate) fn error_in(payloads: &[Payload]) -> Option<u16> {
    payloads.iter().find_map(|p| match p {
        Payload::Notify(n) if n.is_error() => Some(n.notify_type),
        _ => None,
    })
}

pub(crate) fn iv<R: RngCore>(rng: &mut R) -> [u8; BLOCK_LEN] {
    let mut iv = [0u8; BLOCK_LEN];
    rng.fill_bytes(&mut iv);
    iv
}

pub(crate) fn random_bytes<R: RngCore>(rng: &mut R, len: usize) -> Vec<u8> {
    let mut v = vec![0u8; len];
    rng.fill_bytes(&mut v);
    v
}

pub(crate) fn nonzero_spi<R: RngCore>(rng: &mut R) -> [u8; 8] {
    loop {
        let mut spi = [0u8; 8];
        rng.fill_bytes(&mut spi);
        if spi != [0; 8] {
            return spi;
        }
    }
}

pub(crate) fn esp_spi<R: RngCore>(rng: &mut R) -> [u8; 4] {
    loop {
        let mut spi = [0u8; 4];
        rng.fill_bytes(&mut spi);
        // SPIs 1-255 are reserved.
        if u32::from_be_bytes(spi) > 255 {
            return spi;
        }
    }
}

macro_rules! find_payload {
    ($payloads:expr, $variant:path) => {
        $payloads.iter().find_map(|p| match p {
            $variant(x) => Some(x),
            _ => None,
        })
    };
}
pub(crate) use find_payload;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_table_scheme() {
        assert_eq!(
            message_label(ExchangeType::IkeSaInit, 0, Direction::InitiatorToResponder),
            "IKE_SA_INIT MID=00 I"
        );
        assert_eq!(
            message_label(
                ExchangeType::CreateChildSa,
                6,
                Direction::ResponderToInitiator
            ),
            "CHILD_SA MID=06 R"
        );
    }

    #[test]
    fn proposal_selection_by_mode() {
        let classical = ike_proposal(true);
        let qkd = ike_proposal(false);
        assert!(select_ike_proposal(&classical, true).is_ok());
        assert!(select_ike_proposal(&qkd, false).is_ok());
        assert_eq!(
            select_ike_proposal(&classical, false),
            Err(notify_type::NO_PROPOSAL_CHOSEN)
        );
        assert_eq!(
            select_ike_proposal(&qkd, true),
            Err(notify_type::NO_PROPOSAL_CHOSEN)
        );
        assert_eq!(
            select_esp_proposal(&esp_proposal([0, 0, 1, 0])),
            Ok([0, 0, 1, 0])
        );
        assert!(select_esp_proposal(&qkd).is_err());
    }
}
