use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::keys::{dh_keypair, dh_shared_secret, DhGroup};

pub const MIN_DH_ITERATIONS: usize = 10;

/// Host cost of the modular exponentiations in one DH exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DhCost {
    pub group_id: u16,
    pub modulus_bits: u64,
    pub exponent_bits: u64,
    pub iterations: usize,
    /// Mean of one key-pair generation (g^x mod p).
    pub keypair_ms: f64,
    /// Mean of one shared-secret computation (y^x mod p).
    pub shared_ms: f64,
}

impl DhCost {
    /// Mean of one modular exponentiation of either kind.
    pub fn per_op_ms(&self) -> f64 {
        (self.keypair_ms + self.shared_ms) / 2.0
    }

    /// One side's cost: a key pair plus a shared secret.
    pub fn per_side_ms(&self) -> f64 {
        self.keypair_ms + self.shared_ms
    }

    /// Expected DH-over-QKD INIT gap: two exponentiations on each end, run
    /// back to back on the critical path.
    pub fn predicted_init_gap_ms(&self) -> f64 {
        2.0 * (self.per_op_ms() + self.per_op_ms())
    }
}

/// Times `iterations` key pairs and shared secrets in `group`.
pub fn bench_dh_cost(group: &DhGroup, iterations: usize, seed: u64) -> Result<DhCost, String> {
    if iterations < MIN_DH_ITERATIONS {
        return Err(format!("iterations must be at least {MIN_DH_ITERATIONS}"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Warm caches and the allocator before timing.
    let warm = dh_keypair(group, &mut rng);
    let peers: Vec<_> = (0..iterations)
        .map(|_| dh_keypair(group, &mut rng).public)
        .collect();

    let start = Instant::now();
    let mine: Vec<_> = (0..iterations)
        .map(|_| dh_keypair(group, &mut rng))
        .collect();
    let keypair = start.elapsed();

    let start = Instant::now();
    for (kp, peer) in mine.iter().zip(&peers) {
        std::hint::black_box(
            dh_shared_secret(&kp.private, peer, group).map_err(|e| e.to_string())?,
        );
    }
    let shared = start.elapsed();
    std::hint::black_box(warm);

    let per = |d: std::time::Duration| d.as_secs_f64() * 1e3 / iterations as f64;
    Ok(DhCost {
        group_id: group.id,
        modulus_bits: group.prime.bits(),
        exponent_bits: group.private_bits,
        iterations,
        keypair_ms: per(keypair),
        shared_ms: per(shared),
    })
}

#[cfg(test)]
mod tests {
    use num_bigint::BigUint;

    use super::*;

    #[test]
    fn group14_cost_is_positive_and_finite() {
        let c = bench_dh_cost(&DhGroup::modp2048(), 10, 1).unwrap();
        assert!(c.keypair_ms > 0.0 && c.keypair_ms.is_finite());
        assert!(c.shared_ms > 0.0 && c.shared_ms.is_finite());
        assert_eq!((c.group_id, c.modulus_bits), (14, 2048));
        assert_eq!(c.predicted_init_gap_ms(), 4.0 * c.per_op_ms());
    }

    #[test]
    fn too_few_iterations_are_rejected() {
        assert!(bench_dh_cost(&DhGroup::modp2048(), 9, 1).is_err());
    }

    #[test]
    fn small_group_is_cheaper() {
        // 2^61 - 1 is prime.
        let small = DhGroup::new(0, BigUint::from((1u64 << 61) - 1), BigUint::from(3u32), 60);
        let a = bench_dh_cost(&small, 50, 2).unwrap();
        let b = bench_dh_cost(&DhGroup::modp2048(), 10, 2).unwrap();
        assert!(a.per_op_ms() < b.per_op_ms());
    }
}
