//! Opaque EAP-5G stand-in.
//!
//! Packets use the expanded EAP type with the 3GPP vendor ID so they look
//! like EAP-5G on the wire, but the body is filler. Only the message count
//! and the sizes matter.

use serde::{Deserialize, Serialize};

pub const CODE_REQUEST: u8 = 1;
pub const CODE_RESPONSE: u8 = 2;
pub const CODE_SUCCESS: u8 = 3;
pub const CODE_FAILURE: u8 = 4;

const TYPE_EXPANDED: u8 = 254;
const VENDOR_3GPP: u32 = 10415;
const VENDOR_TYPE_EAP_5G: u32 = 3;
const MSG_5G_NAS: u8 = 2;

/// Code, identifier, length, type, vendor ID, vendor type, message ID, spare.
pub const EAP_5G_HEADER_LEN: usize = 14;

/// EAP exchanges inside IKE_AUTH.
///
/// The responder sends `round_count` EAP messages (MID 1 to MID
/// `round_count`); the last is EAP-Success. The initiator answers each
/// request in the next exchange. Sizes are whole EAP packet lengths; a
/// missing entry reuses the last one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EapRoundPlan {
    pub round_count: usize,
    pub request_sizes: Vec<usize>,
    pub response_sizes: Vec<usize>,
}

impl Default for EapRoundPlan {
    fn default() -> Self {
        // Sized so the IKE_AUTH messages land near the reference capture.
        EapRoundPlan {
            round_count: 4,
            request_sizes: vec![1318, 56, 40],
            response_sizes: vec![72, 40, 72],
        }
    }
}

fn pick(sizes: &[usize], index: usize) -> usize {
    sizes
        .get(index)
        .or(sizes.last())
        .copied()
        .unwrap_or(EAP_5G_HEADER_LEN)
        .clamp(EAP_5G_HEADER_LEN, u16::MAX as usize - 64)
}

impl EapRoundPlan {
    /// Size of the EAP request sent in round `round` (1-based, not the last).
    pub fn request_size(&self, round: usize) -> usize {
        pick(&self.request_sizes, round - 1)
    }

    /// Size of the initiator's answer to the request of round `round`.
    pub fn response_size(&self, round: usize) -> usize {
        pick(&self.response_sizes, round - 1)
    }
}

pub fn eap_5g(code: u8, identifier: u8, len: usize) -> Vec<u8> {
    let len = len.max(EAP_5G_HEADER_LEN);
    let mut p = Vec::with_capacity(len);
    p.push(code);
    p.push(identifier);
    p.extend_from_slice(&(len as u16).to_be_bytes());
    p.push(TYPE_EXPANDED);
    p.extend_from_slice(&VENDOR_3GPP.to_be_bytes()[1..]);
    p.extend_from_slice(&VENDOR_TYPE_EAP_5G.to_be_bytes());
    p.push(MSG_5G_NAS);
    p.push(0);
    p.extend((0..len - EAP_5G_HEADER_LEN).map(|i| (i as u8) ^ identifier));
    p
}

pub fn eap_status(code: u8, identifier: u8) -> Vec<u8> {
    vec![code, identifier, 0, 4]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EapHeader {
    pub code: u8,
    pub identifier: u8,
}

pub fn parse(data: &[u8]) -> Result<EapHeader, &'static str> {
    if data.len() < 4 {
        return Err("EAP packet truncated");
    }
    let len = u16::from_be_bytes([data[2], data[3]]) as usize;
    if len != data.len() {
        return Err("EAP length mismatch");
    }
    let code = data[0];
    match code {
        CODE_REQUEST | CODE_RESPONSE if len < EAP_5G_HEADER_LEN => Err("EAP-5G header truncated"),
        CODE_REQUEST | CODE_RESPONSE if data[4] != TYPE_EXPANDED => Err("not an expanded EAP type"),
        CODE_REQUEST | CODE_RESPONSE | CODE_SUCCESS | CODE_FAILURE => Ok(EapHeader {
            code,
            identifier: data[1],
        }),
        _ => Err("unknown EAP code"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packets_have_requested_length() {
        let p = eap_5g(CODE_REQUEST, 7, 100);
        assert_eq!(p.len(), 100);
        assert_eq!(
            parse(&p).unwrap(),
            EapHeader {
                code: 1,
                identifier: 7
            }
        );
        assert_eq!(&p[5..8], &[0x00, 0x28, 0xaf]);
        assert_eq!(eap_5g(CODE_RESPONSE, 1, 3).len(), EAP_5G_HEADER_LEN);
        assert_eq!(
            parse(&eap_status(CODE_SUCCESS, 4)).unwrap().code,
            CODE_SUCCESS
        );
    }

    #[test]
    fn malformed_packets_rejected() {
        assert!(parse(&[1, 0, 0]).is_err());
        assert!(parse(&[1, 0, 0, 9, 254]).is_err());
        assert!(parse(&[9, 0, 0, 4]).is_err());
        let mut p = eap_5g(CODE_REQUEST, 1, 20);
        p[4] = 1;
        assert!(parse(&p).is_err());
    }

    #[test]
    fn sizes_fall_back_to_last_entry() {
        let plan = EapRoundPlan {
            round_count: 6,
            request_sizes: vec![200, 30],
            response_sizes: vec![],
        };
        assert_eq!(plan.request_size(1), 200);
        assert_eq!(plan.request_size(5), 30);
        assert_eq!(plan.response_size(2), EAP_5G_HEADER_LEN);
    }
}
