use std::fmt;

use num_bigint::{BigUint, RandBigInt};
use num_traits::One;
use rand::RngCore;

use super::{metrics, KeyError};

/// RFC 3526 2048-bit MODP group (IKEv2 group 14).
const MODP_2048_PRIME: &str = "\
    FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74\
    020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437\
    4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
    EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05\
    98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB\
    9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
    E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718\
    3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF";

#[derive(Clone, PartialEq, Eq)]
pub struct DhGroup {
    pub id: u16,
    pub prime: BigUint,
    pub generator: BigUint,
    /// Length of sampled private exponents.
    pub private_bits: u64,
}

impl fmt::Debug for DhGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DhGroup({}, {} bits)", self.id, self.prime.bits())
    }
}

impl DhGroup {
    pub fn modp2048() -> Self {
        Self::modp2048_with_exponent_bits(256)
    }

    pub fn modp2048_with_exponent_bits(private_bits: u64) -> Self {
        let hex: String = MODP_2048_PRIME.split_whitespace().collect();
        DhGroup {
            id: 14,
            prime: BigUint::parse_bytes(hex.as_bytes(), 16).expect("valid constant"),
            generator: BigUint::from(2u32),
            private_bits,
        }
    }

    pub fn new(id: u16, prime: BigUint, generator: BigUint, private_bits: u64) -> Self {
        DhGroup {
            id,
            prime,
            generator,
            private_bits,
        }
    }

    /// Width of encoded public values and shared secrets.
    pub fn value_len(&self) -> usize {
        self.prime.bits().div_ceil(8) as usize
    }

    pub fn public_value(&self, private: &BigUint) -> BigUint {
        metrics::record_modexp();
        self.generator.modpow(private, &self.prime)
    }

    /// Left-pads to the prime width, as KE payloads and g^ir require.
    pub fn encode(&self, value: &BigUint) -> Vec<u8> {
        let raw = value.to_bytes_be();
        let mut out = vec![0u8; self.value_len().saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }

    fn is_weak(&self, value: &BigUint) -> bool {
        let one = BigUint::one();
        *value <= one || *value >= &self.prime - &one
    }
}

pub struct DhKeyPair {
    pub private: BigUint,
    pub public: BigUint,
}

impl fmt::Debug for DhKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DhKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

/// Samples a private exponent and computes `generator^private mod prime`.
pub fn dh_keypair<R: RngCore>(group: &DhGroup, rng: &mut R) -> DhKeyPair {
    let two = BigUint::from(2u32);
    let cap = &group.prime - 1u32;
    let limit = (BigUint::one() << group.private_bits).min(cap);
    loop {
        let private = rng.gen_biguint_range(&two, &limit);
        let public = group.public_value(&private);
        if !group.is_weak(&public) {
            return DhKeyPair { private, public };
        }
    }
}

/// `peer_public^private mod prime`, encoded at the prime width.
pub fn dh_shared_secret(
    private: &BigUint,
    peer_public: &BigUint,
    group: &DhGroup,
) -> Result<Vec<u8>, KeyError> {
    if group.is_weak(peer_public) {
        return Err(KeyError::WeakPublicValue);
    }
    metrics::record_modexp();
    Ok(group.encode(&peer_public.modpow(private, &group.prime)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn tiny() -> DhGroup {
        DhGroup::new(0, BigUint::from(23u32), BigUint::from(5u32), 8)
    }

    #[test]
    fn exponent_one_gives_generator() {
        let g = DhGroup::modp2048();
        assert_eq!(g.public_value(&BigUint::one()), g.generator);
        assert_eq!(g.value_len(), 256);
    }

    #[test]
    fn tiny_group_matches_hand_computation() {
        // 5^2 = 2 (mod 23), 5^3 = 10 (mod 23); 10^2 = 2^3 = 8 (mod 23).
        let g = tiny();
        let a = BigUint::from(2u32);
        let b = BigUint::from(3u32);
        let pa = g.public_value(&a);
        let pb = g.public_value(&b);
        assert_eq!(pa, BigUint::from(2u32));
        assert_eq!(pb, BigUint::from(10u32));
        assert_eq!(dh_shared_secret(&a, &pb, &g).unwrap(), vec![8]);
        assert_eq!(dh_shared_secret(&b, &pa, &g).unwrap(), vec![8]);
    }

    #[test]
    fn weak_peer_values_rejected() {
        let g = DhGroup::modp2048();
        let x = BigUint::from(12345u32);
        for weak in [
            BigUint::from(0u32),
            BigUint::one(),
            &g.prime - 1u32,
            g.prime.clone(),
        ] {
            assert_eq!(
                dh_shared_secret(&x, &weak, &g),
                Err(KeyError::WeakPublicValue)
            );
        }
    }

    #[test]
    fn keypair_public_in_range_and_counted() {
        let g = DhGroup::modp2048();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let before = metrics::snapshot();
        let kp = dh_keypair(&g, &mut rng);
        assert_eq!((metrics::snapshot() - before).modexp, 1);
        assert!(kp.public >= BigUint::from(2u32));
        assert!(kp.public <= &g.prime - 2u32);
        assert!(kp.private.bits() <= 256);
        assert_eq!(g.encode(&kp.public).len(), 256);
    }
}
