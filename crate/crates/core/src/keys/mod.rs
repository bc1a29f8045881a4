//! SA key production for all three handshake modes.
//!
//! Classical modes run a MODP Diffie-Hellman exchange and expand the shared
//! secret with PRF+. QKD mode takes the delivered keys positionally, with no
//! exponentiation and no expansion.

mod auth;
mod dh;
pub mod metrics;
mod prf;
mod schedule;

pub use auth::{
    compute_auth, signed_octets, verify_auth, AuthSecret, LocalCredential, PeerCredential,
    SigningIdentity,
};
pub use dh::{dh_keypair, dh_shared_secret, DhGroup, DhKeyPair};
pub use metrics::CryptoCounts;
pub use prf::{prf, prf_plus, PRF_LEN, PRF_PLUS_MAX};
pub use schedule::{
    assign_qkd_keys, derive_classical_child_keys, derive_classical_ike_keys, ChildSaKeys,
    IkeSaKeys, KeyAssignmentPlan, KeySlot, QkdKeyAssignment, KEY_LEN,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("prf+ output of {requested} bytes exceeds the {max}-byte limit")]
    OutputTooLong { requested: usize, max: usize },
    #[error("weak Diffie-Hellman public value")]
    WeakPublicValue,
    #[error("key container holds {got} keys, plan needs {expected}")]
    PlanMismatch { expected: usize, got: usize },
    #[error("key {index} is {len} bytes, slot needs {needed}")]
    KeyTooShort {
        index: usize,
        len: usize,
        needed: usize,
    },
    #[error("plan has no keys for child SA #{0}")]
    PlanExhausted(usize),
    #[error("authentication failed: {0}")]
    AuthenticationFailed(&'static str),
    #[error("invalid credential: {0}")]
    BadCredential(String),
}
