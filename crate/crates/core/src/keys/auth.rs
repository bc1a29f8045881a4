use std::fmt;
use std::sync::Arc;

use std::sync::OnceLock;

use hmac::{Hmac, Mac};
use ring::rand::SystemRandom;
use ring::signature::{self, KeyPair, RsaKeyPair, UnparsedPublicKey};
use sha2::Sha256;

use super::{prf, KeyError};
use crate::codec::{AuthMethod, IdPayload};

const KEY_PAD: &[u8] = b"Key Pad for IKEv2";

const UE_KEY: &[u8] = include_bytes!("../../fixtures/ue.key.der");
const UE_CERT: &[u8] = include_bytes!("../../fixtures/ue.cert.der");
const N3IWF_KEY: &[u8] = include_bytes!("../../fixtures/n3iwf.key.der");
const N3IWF_CERT: &[u8] = include_bytes!("../../fixtures/n3iwf.cert.der");

/// Shared secret for MIC authentication: a configured PSK or the
/// QKD-delivered authentication key.
#[derive(Clone, PartialEq, Eq)]
pub struct AuthSecret(Vec<u8>);

impl fmt::Debug for AuthSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AuthSecret({} bytes)", self.0.len())
    }
}

impl AuthSecret {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, KeyError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(KeyError::BadCredential("empty shared secret".into()));
        }
        Ok(AuthSecret(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// RSA key pair plus the self-signed certificate sent in CERT.
#[derive(Clone)]
pub struct SigningIdentity {
    key_pair: Arc<RsaKeyPair>,
    certificate: Vec<u8>,
}

impl fmt::Debug for SigningIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningIdentity(cert {} bytes)", self.certificate.len())
    }
}

impl SigningIdentity {
    pub fn from_pkcs8_der(key: &[u8], certificate: &[u8]) -> Result<Self, KeyError> {
        let key_pair =
            RsaKeyPair::from_pkcs8(key).map_err(|e| KeyError::BadCredential(e.to_string()))?;
        Ok(SigningIdentity {
            key_pair: Arc::new(key_pair),
            certificate: certificate.to_vec(),
        })
    }

    /// Bundled RSA-2048 identity for the UE (CN ue.nwu.lab).
    pub fn ue_fixture() -> Self {
        static ID: OnceLock<SigningIdentity> = OnceLock::new();
        ID.get_or_init(|| Self::from_pkcs8_der(UE_KEY, UE_CERT).expect("bundled fixture"))
            .clone()
    }

    /// Bundled RSA-2048 identity for the N3IWF (CN n3iwf.nwu.lab).
    pub fn n3iwf_fixture() -> Self {
        static ID: OnceLock<SigningIdentity> = OnceLock::new();
        ID.get_or_init(|| Self::from_pkcs8_der(N3IWF_KEY, N3IWF_CERT).expect("bundled fixture"))
            .clone()
    }

    pub fn certificate(&self) -> &[u8] {
        &self.certificate
    }

    /// DER RSAPublicKey.
    pub fn public_key(&self) -> &[u8] {
        self.key_pair.public_key().as_ref()
    }

    /// What a peer pins for this identity.
    pub fn pinned(&self) -> PeerCredential {
        PeerCredential::PinnedCertificate {
            certificate: self.certificate.clone(),
            public_key: self.public_key().to_vec(),
        }
    }

    pub fn sign(&self, message: &[u8]) -> Result<Vec<u8>, KeyError> {
        let mut sig = vec![0u8; self.key_pair.public().modulus_len()];
        self.key_pair
            .sign(
                &signature::RSA_PKCS1_SHA256,
                &SystemRandom::new(),
                message,
                &mut sig,
            )
            .map_err(|_| KeyError::BadCredential("signing failed".into()))?;
        Ok(sig)
    }
}

#[derive(Debug, Clone)]
pub enum LocalCredential {
    SharedKey(AuthSecret),
    Signature(SigningIdentity),
}

impl LocalCredential {
    pub fn method(&self) -> AuthMethod {
        match self {
            LocalCredential::SharedKey(_) => AuthMethod::SharedKeyMic,
            LocalCredential::Signature(_) => AuthMethod::RsaSignature,
        }
    }

    pub fn certificate(&self) -> Option<&[u8]> {
        match self {
            LocalCredential::Signature(id) => Some(id.certificate()),
            LocalCredential::SharedKey(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum PeerCredential {
    SharedKey(AuthSecret),
    /// Certificate compared byte-for-byte; no chain building. A peer that
    /// sends no CERT payload is checked against the pinned key alone.
    PinnedCertificate {
        certificate: Vec<u8>,
        public_key: Vec<u8>,
    },
}

/// RealMessage | peer nonce | prf(SK_p, IDx').
///
/// `prf_key` is SK_pi/SK_pr in classical modes and the QKD authentication key
/// otherwise.
pub fn signed_octets(
    real_message: &[u8],
    peer_nonce: &[u8],
    prf_key: &[u8],
    id: &IdPayload,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(real_message.len() + peer_nonce.len() + 32);
    out.extend_from_slice(real_message);
    out.extend_from_slice(peer_nonce);
    out.extend_from_slice(&prf(prf_key, &id.rest_of_payload()));
    out
}

fn shared_key_mic(secret: &AuthSecret, octets: &[u8]) -> [u8; 32] {
    prf(&prf(secret.as_bytes(), KEY_PAD), octets)
}

fn mic_verifier(secret: &AuthSecret, octets: &[u8]) -> Hmac<Sha256> {
    let mut mac = Hmac::<Sha256>::new_from_slice(&prf(secret.as_bytes(), KEY_PAD))
        .expect("HMAC accepts any key length");
    mac.update(octets);
    mac
}

pub fn compute_auth(credential: &LocalCredential, octets: &[u8]) -> Result<Vec<u8>, KeyError> {
    match credential {
        LocalCredential::SharedKey(secret) => Ok(shared_key_mic(secret, octets).to_vec()),
        LocalCredential::Signature(id) => id.sign(octets),
    }
}

/// `presented_certificate` is the CERT payload the peer sent, if any.
pub fn verify_auth(
    credential: &PeerCredential,
    method: AuthMethod,
    auth_data: &[u8],
    octets: &[u8],
    presented_certificate: Option<&[u8]>,
) -> Result<(), KeyError> {
    match credential {
        PeerCredential::SharedKey(secret) => {
            if method != AuthMethod::SharedKeyMic {
                return Err(KeyError::AuthenticationFailed("unexpected auth method"));
            }
            mic_verifier(secret, octets)
                .verify_slice(auth_data)
                .map_err(|_| KeyError::AuthenticationFailed("MIC mismatch"))
        }
        PeerCredential::PinnedCertificate {
            certificate,
            public_key,
        } => {
            if method != AuthMethod::RsaSignature {
                return Err(KeyError::AuthenticationFailed("unexpected auth method"));
            }
            match presented_certificate {
                Some(c) if c == certificate.as_slice() => {}
                Some(_) => return Err(KeyError::AuthenticationFailed("certificate not pinned")),
                None => {}
            }
            UnparsedPublicKey::new(&signature::RSA_PKCS1_2048_8192_SHA256, public_key)
                .verify(octets, auth_data)
                .map_err(|_| KeyError::AuthenticationFailed("bad signature"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::id_type;

    fn id() -> IdPayload {
        IdPayload {
            id_type: id_type::FQDN,
            value: b"ue.nwu.lab".to_vec(),
        }
    }

    #[test]
    fn hmac_known_answer() {
        // HMAC-SHA-256 test case 1: key 0x0b x 20, data "Hi There".
        let out = prf(&[0x0b; 20], b"Hi There");
        let hex: String = out.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(
            hex,
            "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"
        );
    }

    #[test]
    fn signed_octets_layout() {
        let o = signed_octets(b"MSG", b"NONCE", b"skp", &id());
        assert_eq!(&o[..3], b"MSG");
        assert_eq!(&o[3..8], b"NONCE");
        assert_eq!(&o[8..], &prf(b"skp", &id().rest_of_payload())[..]);
    }

    #[test]
    fn shared_key_round_trip_and_mismatch() {
        let s = AuthSecret::new(vec![9u8; 32]).unwrap();
        let octets = signed_octets(b"m", b"n", b"k", &id());
        let mic = compute_auth(&LocalCredential::SharedKey(s.clone()), &octets).unwrap();
        let peer = PeerCredential::SharedKey(s);
        verify_auth(&peer, AuthMethod::SharedKeyMic, &mic, &octets, None).unwrap();

        let other = PeerCredential::SharedKey(AuthSecret::new(vec![8u8; 32]).unwrap());
        assert!(verify_auth(&other, AuthMethod::SharedKeyMic, &mic, &octets, None).is_err());
        let mut bad = octets.clone();
        bad[0] ^= 1;
        assert!(verify_auth(&peer, AuthMethod::SharedKeyMic, &mic, &bad, None).is_err());
        assert!(verify_auth(&peer, AuthMethod::RsaSignature, &mic, &octets, None).is_err());
    }

    #[test]
    fn signature_round_trip_with_pinning() {
        let ue = SigningIdentity::ue_fixture();
        let n3iwf = SigningIdentity::n3iwf_fixture();
        let octets = b"transcript".to_vec();
        let sig = compute_auth(&LocalCredential::Signature(ue.clone()), &octets).unwrap();
        assert_eq!(sig.len(), 256);
        let pin = ue.pinned();
        verify_auth(
            &pin,
            AuthMethod::RsaSignature,
            &sig,
            &octets,
            Some(ue.certificate()),
        )
        .unwrap();
        assert!(verify_auth(
            &pin,
            AuthMethod::RsaSignature,
            &sig,
            b"other",
            Some(ue.certificate())
        )
        .is_err());
        assert!(verify_auth(
            &pin,
            AuthMethod::RsaSignature,
            &sig,
            &octets,
            Some(n3iwf.certificate())
        )
        .is_err());
        verify_auth(&pin, AuthMethod::RsaSignature, &sig, &octets, None).unwrap();
        assert!(verify_auth(
            &n3iwf.pinned(),
            AuthMethod::RsaSignature,
            &sig,
            &octets,
            Some(n3iwf.certificate())
        )
        .is_err());
    }

    #[test]
    fn empty_secret_rejected() {
        assert!(AuthSecret::new(Vec::new()).is_err());
    }
}
