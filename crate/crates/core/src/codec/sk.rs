//! Encrypted payload: AES-256-CBC with HMAC-SHA-256-128 integrity.

use aes::cipher::{block_padding::NoPadding, BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::*;

type Aes256CbcEnc = cbc::Encryptor<aes::Aes256>;
type Aes256CbcDec = cbc::Decryptor<aes::Aes256>;
type HmacSha256 = Hmac<Sha256>;

pub const BLOCK_LEN: usize = 16;
pub const ICV_LEN: usize = 16;

/// Encryption and integrity key for one traffic direction.
#[derive(Clone, PartialEq, Eq)]
pub struct DirectionalKeys {
    pub encryption: Vec<u8>,
    pub integrity: Vec<u8>,
}

impl std::fmt::Debug for DirectionalKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("DirectionalKeys(..)")
    }
}

fn tag(keys: &DirectionalKeys, parts: &[&[u8]]) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(&keys.integrity).expect("HMAC accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac
}

fn cipher_key(keys: &DirectionalKeys) -> Result<&[u8; 32], CodecError> {
    keys.encryption
        .as_slice()
        .try_into()
        .map_err(|_| CodecError::Malformed {
            offset: 0,
            payload_index: None,
            what: "encryption key length",
        })
}

fn pad(plaintext: &[u8]) -> Vec<u8> {
    let pad_len = BLOCK_LEN - 1 - plaintext.len() % BLOCK_LEN;
    let mut buf = Vec::with_capacity(plaintext.len() + pad_len + 1);
    buf.extend_from_slice(plaintext);
    buf.resize(plaintext.len() + pad_len, 0);
    buf.push(pad_len as u8);
    buf
}

/// Encrypts `plaintext` and tags `aad | iv | ciphertext`.
///
/// `aad` is everything that precedes the IV on the wire (IKE header and the
/// SK generic header), so the tag covers the whole message as transmitted.
pub fn seal(
    plaintext: &[u8],
    keys: &DirectionalKeys,
    aad: &[u8],
    iv: [u8; BLOCK_LEN],
    first_inner: u8,
) -> Result<SkPayload, CodecError> {
    let key = cipher_key(keys)?;
    let buf = pad(plaintext);
    let ciphertext =
        Aes256CbcEnc::new(key.into(), &iv.into()).encrypt_padded_vec_mut::<NoPadding>(&buf);
    let icv = tag(keys, &[aad, &iv, &ciphertext]).finalize().into_bytes()[..ICV_LEN].to_vec();
    Ok(SkPayload {
        first_inner,
        iv: iv.to_vec(),
        ciphertext,
        icv,
    })
}

/// Verifies the tag and returns the decrypted, unpadded contents.
pub fn open(sk: &SkPayload, keys: &DirectionalKeys, aad: &[u8]) -> Result<Vec<u8>, CodecError> {
    tag(keys, &[aad, &sk.iv, &sk.ciphertext])
        .verify_truncated_left(&sk.icv)
        .map_err(|_| CodecError::Integrity)?;
    decrypt(sk, keys)
}

fn decrypt(sk: &SkPayload, keys: &DirectionalKeys) -> Result<Vec<u8>, CodecError> {
    let key = cipher_key(keys)?;
    let iv: [u8; BLOCK_LEN] = sk
        .iv
        .as_slice()
        .try_into()
        .map_err(|_| CodecError::Integrity)?;
    let mut plain = Aes256CbcDec::new(key.into(), &iv.into())
        .decrypt_padded_vec_mut::<NoPadding>(&sk.ciphertext)
        .map_err(|_| CodecError::Integrity)?;
    let pad_len = *plain.last().ok_or(CodecError::Integrity)? as usize;
    if pad_len + 1 > plain.len() {
        return Err(CodecError::Malformed {
            offset: 0,
            payload_index: None,
            what: "SK padding",
        });
    }
    plain.truncate(plain.len() - pad_len - 1);
    Ok(plain)
}

/// Builds a message whose only payload is an SK payload protecting `inner`.
pub fn encode_protected(
    header: &IkeHeader,
    inner: &[Payload],
    keys: &DirectionalKeys,
    iv: [u8; BLOCK_LEN],
) -> Result<Vec<u8>, CodecError> {
    let plaintext = encode_payload_chain(inner)?;
    let first_inner = inner.first().map_or(payload_type::NONE, Payload::type_code);
    let ct_len = pad(&plaintext).len();
    let total = HEADER_LEN + GENERIC_HEADER_LEN + BLOCK_LEN + ct_len + ICV_LEN;

    // The tagged prefix is known before encryption: header plus SK header.
    let mut aad = Vec::with_capacity(HEADER_LEN + GENERIC_HEADER_LEN);
    aad.extend_from_slice(&header.initiator_spi);
    aad.extend_from_slice(&header.responder_spi);
    aad.extend_from_slice(&[
        payload_type::SK,
        IKE_VERSION,
        header.exchange.to_u8(),
        header.flags.to_u8(),
    ]);
    aad.extend_from_slice(&header.message_id.to_be_bytes());
    aad.extend_from_slice(&(total as u32).to_be_bytes());
    aad.extend_from_slice(&[first_inner, 0]);
    aad.extend_from_slice(&((total - HEADER_LEN) as u16).to_be_bytes());

    let sk = seal(&plaintext, keys, &aad, iv, first_inner)?;
    let bytes = encode(&IkeMessage {
        header: *header,
        payloads: vec![Payload::Sk(sk)],
    })?;
    debug_assert_eq!(&bytes[..aad.len()], aad.as_slice());
    Ok(bytes)
}

/// Authenticates and decrypts a protected message.
pub fn decode_protected(
    bytes: &[u8],
    keys: &DirectionalKeys,
) -> Result<(IkeHeader, Vec<Payload>), CodecError> {
    let message = decode(bytes)?;
    let sk = match message.payloads.last() {
        Some(Payload::Sk(sk)) => sk,
        _ => {
            return Err(CodecError::Malformed {
                offset: HEADER_LEN,
                payload_index: None,
                what: "missing SK payload",
            })
        }
    };
    let covered = bytes.len() - ICV_LEN - sk.ciphertext.len() - sk.iv.len();
    let plaintext = open(sk, keys, &bytes[..covered])?;
    let inner = decode_payload_chain(sk.first_inner, &plaintext)?;
    Ok((message.header, inner))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(seed: u8) -> DirectionalKeys {
        DirectionalKeys {
            encryption: vec![seed; 32],
            integrity: vec![seed.wrapping_add(1); 32],
        }
    }

    fn header() -> IkeHeader {
        IkeHeader {
            initiator_spi: [1; 8],
            responder_spi: [2; 8],
            exchange: ExchangeType::IkeAuth,
            flags: Flags {
                initiator: true,
                response: false,
            },
            message_id: 1,
        }
    }

    #[test]
    fn seal_open_round_trip() {
        for len in [0usize, 1, 15, 16, 17, 100] {
            let p: Vec<u8> = (0..len as u8).collect();
            let sk = seal(&p, &keys(1), b"aad", [9; 16], 0).unwrap();
            assert_eq!(sk.ciphertext.len() % 16, 0);
            assert_eq!(open(&sk, &keys(1), b"aad").unwrap(), p);
        }
    }

    #[test]
    fn any_flipped_bit_fails_integrity() {
        let sk = seal(b"control plane", &keys(1), b"hdr", [3; 16], 0).unwrap();
        for i in 0..sk.ciphertext.len() {
            let mut t = sk.clone();
            t.ciphertext[i] ^= 0x01;
            assert_eq!(open(&t, &keys(1), b"hdr"), Err(CodecError::Integrity));
        }
        let mut t = sk.clone();
        t.iv[0] ^= 0x80;
        assert_eq!(open(&t, &keys(1), b"hdr"), Err(CodecError::Integrity));
        assert_eq!(open(&sk, &keys(1), b"hdR"), Err(CodecError::Integrity));
    }

    #[test]
    fn reverse_direction_key_is_rejected() {
        let (i_to_r, r_to_i) = (keys(10), keys(20));
        let sk = seal(b"x", &i_to_r, b"", [0; 16], 0).unwrap();
        assert_eq!(open(&sk, &r_to_i, b""), Err(CodecError::Integrity));
    }

    #[test]
    fn protected_message_round_trip_and_tamper() {
        let inner = vec![
            Payload::IdInitiator(IdPayload {
                id_type: id_type::FQDN,
                value: b"ue.nwu.lab".to_vec(),
            }),
            Payload::Eap(EapPayload {
                data: vec![2, 1, 0, 5, 254],
            }),
        ];
        let bytes = encode_protected(&header(), &inner, &keys(5), [7; 16]).unwrap();
        let (h, p) = decode_protected(&bytes, &keys(5)).unwrap();
        assert_eq!(h, header());
        assert_eq!(p, inner);
        for i in 0..bytes.len() {
            let mut t = bytes.clone();
            t[i] ^= 0x04;
            assert!(decode_protected(&t, &keys(5)).is_err(), "byte {i}");
        }
    }
}
