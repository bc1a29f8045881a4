//! IKEv2 handshake lab for 5G untrusted non-3GPP access (UE <-> N3IWF over
//! NWu), comparing QKD-keyed SAs with classical Diffie-Hellman baselines.

pub mod bench;
pub mod codec;
pub mod handshake;
pub mod keys;
pub mod kms;
pub mod transport;
