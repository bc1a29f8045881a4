//! Randomized multi-session workload against one KME pair.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use nwu_qkd::kms::{KeySource, KmePair, KmeSide, KmsConfig, KmsError, SaeId};
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

#[derive(Debug, Default)]
pub struct StressOutcome {
    pub issued: usize,
    pub delivered: usize,
    pub exhaustion_errors: usize,
    pub violations: Vec<String>,
}

pub fn sae(prefix: &str, i: usize) -> SaeId {
    SaeId::new(format!("{prefix}-{i:03}")).unwrap()
}

/// `sessions` master/slave SAE pairs draw random batches from a pool of
/// `total_keys` until it is empty, collecting every reservation (sometimes in
/// permuted order) and probing the single-consumption and scoping rules.
pub fn kms_stress(total_keys: usize, sessions: usize, seed: u64) -> (Arc<KmePair>, StressOutcome) {
    let pair = KmePair::new(KmsConfig {
        saes: [
            (0..sessions).map(|i| sae("N3IWF", i)).collect(),
            (0..sessions).map(|i| sae("UE", i)).collect(),
        ],
        initial_keys: total_keys,
        capacity: total_keys,
        key_source: KeySource::Seeded(seed),
        ..Default::default()
    })
    .unwrap();
    // Material as issued by KME A, checked against what KME B delivers.
    let issued: Mutex<HashMap<Uuid, Vec<u8>>> = Mutex::new(HashMap::new());
    let outcome = Mutex::new(StressOutcome::default());

    std::thread::scope(|scope| {
        for s in 0..sessions {
            let (pair, issued, outcome) = (&pair, &issued, &outcome);
            scope.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((s as u64 + 1) * 0x9e37_79b9));
                let master = sae("N3IWF", s);
                let slave = sae("UE", s);
                let stranger = sae("UE", (s + 1) % sessions);
                let mut open: Vec<Vec<Uuid>> = Vec::new();
                let mut exhausted = false;
                let mut local = StressOutcome::default();
                let fail = |local: &mut StressOutcome, what: String| {
                    local.violations.push(format!("session {s}: {what}"))
                };

                while !exhausted || !open.is_empty() {
                    let collect = exhausted || (!open.is_empty() && rng.gen_bool(0.5));
                    if !collect {
                        let n = rng.gen_range(1..=20);
                        match pair.get_keys(KmeSide::A, &master, &slave, n, 256) {
                            Ok(c) => {
                                if c.len() != n {
                                    fail(&mut local, format!("asked {n}, got {}", c.len()));
                                }
                                let mut map = issued.lock();
                                for k in &c.keys {
                                    if map.insert(k.key_id, k.material.clone()).is_some() {
                                        fail(&mut local, format!("key {} issued twice", k.key_id));
                                    }
                                }
                                local.issued += c.len();
                                open.push(c.key_ids());
                            }
                            Err(e @ KmsError::Unavailable { .. }) => {
                                if !e.is_retryable() {
                                    fail(&mut local, "exhaustion not retryable".into());
                                }
                                local.exhaustion_errors += 1;
                                // Shrink the ask until the pool is truly empty.
                                if pair.stored_key_count() == 0 {
                                    exhausted = true;
                                }
                            }
                            Err(e) => fail(&mut local, format!("get_keys: {e}")),
                        }
                    } else {
                        let idx = rng.gen_range(0..open.len());
                        let mut ids = open.swap_remove(idx);
                        if rng.gen_bool(0.5) {
                            ids.shuffle(&mut rng);
                        }
                        if rng.gen_bool(0.2) {
                            match pair.get_keys_by_id(KmeSide::B, &stranger, &master, &ids) {
                                Err(KmsError::Unauthorized(_)) => {}
                                other => fail(&mut local, format!("stranger read keys: {other:?}")),
                            }
                        }
                        match pair.get_keys_by_id(KmeSide::B, &slave, &master, &ids) {
                            Ok(c) => {
                                if c.key_ids() != ids {
                                    fail(&mut local, "order not preserved".into());
                                }
                                let map = issued.lock();
                                for k in &c.keys {
                                    if map.get(&k.key_id) != Some(&k.material) {
                                        fail(
                                            &mut local,
                                            format!("material differs for {}", k.key_id),
                                        );
                                    }
                                }
                                local.delivered += c.len();
                            }
                            Err(e) => fail(&mut local, format!("get_keys_by_id: {e}")),
                        }
                        if rng.gen_bool(0.2) {
                            match pair.get_keys_by_id(KmeSide::B, &slave, &master, &ids[..1]) {
                                Err(KmsError::NotFound(_)) => {}
                                other => fail(&mut local, format!("second retrieval: {other:?}")),
                            }
                        }
                    }
                    if rng.gen_bool(0.1) {
                        std::thread::yield_now();
                    }
                }
                let mut out = outcome.lock();
                out.issued += local.issued;
                out.delivered += local.delivered;
                out.exhaustion_errors += local.exhaustion_errors;
                out.violations.extend(local.violations);
            });
        }
    });

    let mut outcome = outcome.into_inner();
    let unique: HashSet<Uuid> = issued.lock().keys().copied().collect();
    if unique.len() != total_keys {
        outcome.violations.push(format!(
            "{} distinct keys issued of {total_keys}",
            unique.len()
        ));
    }
    if pair.reserved_key_count() != 0 || pair.stored_key_count() != 0 {
        outcome.violations.push(format!(
            "pool not drained: {} reserved, {} stored",
            pair.reserved_key_count(),
            pair.stored_key_count()
        ));
    }
    if pair.consumed_key_count() != total_keys {
        outcome.violations.push(format!(
            "{} consumed of {total_keys}",
            pair.consumed_key_count()
        ));
    }
    (pair, outcome)
}
