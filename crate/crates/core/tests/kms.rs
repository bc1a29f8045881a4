mod common;

use std::net::SocketAddr;
use std::sync::Arc;

use common::stress::kms_stress;
use common::{kme_pair, setup_with};
use nwu_qkd::handshake::{run_full_handshake, HandshakeConfig, KmsEndpoints, Mode};
use nwu_qkd::kms::*;
use proptest::prelude::*;
use serde_json::{json, Value};
use uuid::Uuid;

fn sae(s: &str) -> SaeId {
    SaeId::new(s).unwrap()
}

fn servers(pair: &Arc<KmePair>) -> KmsServers {
    let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
    KmsServers::start(Arc::clone(pair), [any, any], DEFAULT_SAE_HEADER).unwrap()
}

fn http_clients(servers: &KmsServers) -> (HttpKmsClient, HttpKmsClient) {
    (
        HttpKmsClient::new(
            servers.base_url(KmeSide::A),
            sae("N3IWF-001"),
            DEFAULT_SAE_HEADER,
        ),
        HttpKmsClient::new(
            servers.base_url(KmeSide::B),
            sae("UE-001"),
            DEFAULT_SAE_HEADER,
        ),
    )
}

#[test]
fn concurrent_sessions_keep_pair_consistency() {
    let (_, outcome) = kms_stress(2000, 16, 3);
    assert!(outcome.violations.is_empty(), "{:#?}", outcome.violations);
    assert_eq!(outcome.issued, 2000);
    assert_eq!(outcome.delivered, 2000);
    assert!(outcome.exhaustion_errors > 0);
}

#[test]
fn http_round_trip_matches_local_pair() {
    let pair = kme_pair(50, 1);
    let servers = servers(&pair);
    let (n3iwf, ue) = http_clients(&servers);
    assert_eq!(n3iwf.status(&sae("UE-001")).unwrap().stored_key_count, 50);
    let issued = n3iwf.get_keys(&sae("UE-001"), 13, 256).unwrap();
    assert_eq!(issued.len(), 13);
    assert!(issued.keys.iter().all(|k| k.material.len() == 32));
    assert_eq!(n3iwf.status(&sae("UE-001")).unwrap().stored_key_count, 37);

    let mut ids = issued.key_ids();
    ids.reverse();
    let delivered = ue.get_keys_by_id(&sae("N3IWF-001"), &ids).unwrap();
    assert_eq!(delivered.key_ids(), ids);
    for k in &delivered.keys {
        let original = issued.keys.iter().find(|o| o.key_id == k.key_id).unwrap();
        assert_eq!(k.material, original.material);
    }
    assert_eq!(pair.call_counts(KmeSide::A).get_keys, 1);
    assert_eq!(pair.call_counts(KmeSide::B).get_keys_by_id, 1);
}

#[test]
fn http_errors_map_to_status_codes() {
    let pair = kme_pair(5, 1);
    let servers = servers(&pair);
    let (n3iwf, ue) = http_clients(&servers);
    let retryable = n3iwf.get_keys(&sae("UE-001"), 13, 256).unwrap_err();
    assert!(retryable.is_retryable(), "{retryable:?}");
    assert!(matches!(
        n3iwf.get_keys(&sae("UE-001"), 0, 256),
        Err(KmsError::BadRequest(_))
    ));
    let missing = Uuid::from_u128(42);
    assert_eq!(
        ue.get_keys_by_id(&sae("N3IWF-001"), &[missing]),
        Err(KmsError::NotFound(missing))
    );
    let intruder = HttpKmsClient::new(
        servers.base_url(KmeSide::A),
        sae("EVE-001"),
        DEFAULT_SAE_HEADER,
    );
    assert!(matches!(
        intruder.status(&sae("UE-001")),
        Err(KmsError::Unauthorized(_))
    ));
    assert_eq!(pair.stored_key_count(), 5);
}

#[test]
fn http_resources_use_the_key_delivery_shapes() {
    let pair = kme_pair(20, 2);
    let servers = servers(&pair);
    let agent = ureq::agent();
    let a = servers.base_url(KmeSide::A);
    let b = servers.base_url(KmeSide::B);

    let status: Value = agent
        .get(&format!("{a}/api/v1/keys/UE-001/status"))
        .header(DEFAULT_SAE_HEADER, "N3IWF-001")
        .call()
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    assert_eq!(status["stored_key_count"], 20);
    assert_eq!(status["key_size"], 256);

    let container: Value = agent
        .post(&format!("{a}/api/v1/keys/UE-001/enc_keys"))
        .header(DEFAULT_SAE_HEADER, "N3IWF-001")
        .send_json(json!({"number": 2, "size": 256}))
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    let keys = container["keys"].as_array().unwrap();
    assert_eq!(keys.len(), 2);
    let ids: Vec<Value> = keys
        .iter()
        .map(|k| json!({"key_ID": k["key_ID"]}))
        .collect();

    let delivered: Value = agent
        .post(&format!("{b}/api/v1/keys/N3IWF-001/dec_keys"))
        .header(DEFAULT_SAE_HEADER, "UE-001")
        .send_json(json!({ "key_IDs": ids }))
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    assert_eq!(&delivered["keys"], &container["keys"]);

    let no_header = agent
        .get(&format!("{a}/api/v1/keys/UE-001/status"))
        .config()
        .http_status_as_error(false)
        .build()
        .call()
        .unwrap();
    assert_eq!(no_header.status().as_u16(), 401);
}

#[test]
fn qkd_handshake_over_http_kms() {
    let pair = kme_pair(100, 4);
    let servers = servers(&pair);
    let (n3iwf, ue) = http_clients(&servers);
    let config = HandshakeConfig {
        seed: Some(1),
        ..HandshakeConfig::for_mode(Mode::Qkd)
    };
    let mut s = setup_with(config);
    s.kms = Some(KmsEndpoints {
        ue: Arc::new(ue),
        n3iwf: Arc::new(n3iwf),
    });
    let r = run_full_handshake(&s);
    assert!(r.is_success(), "{:?}", r.status);
    assert!(r.keys_agree() && r.probe_ok);
    assert_eq!(
        pair.call_counts(KmeSide::A).key_requests() + pair.call_counts(KmeSide::B).key_requests(),
        2
    );
    assert_eq!(pair.consumed_key_count(), 13);
}

#[test]
fn latency_is_applied_per_request() {
    let pair = KmePair::new(KmsConfig {
        latency_ms: 20,
        initial_keys: 20,
        key_source: KeySource::Seeded(1),
        ..Default::default()
    })
    .unwrap();
    let start = std::time::Instant::now();
    let c = pair
        .get_keys(KmeSide::A, &sae("N3IWF-001"), &sae("UE-001"), 13, 256)
        .unwrap();
    pair.get_keys_by_id(KmeSide::B, &sae("UE-001"), &sae("N3IWF-001"), &c.key_ids())
        .unwrap();
    assert!(start.elapsed().as_millis() >= 40);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permuting_ids_permutes_output(n in 1usize..30, seed in any::<u64>(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let pair = kme_pair(30, seed);
        let issued = pair.get_keys(KmeSide::A, &sae("N3IWF-001"), &sae("UE-001"), n, 256).unwrap();
        let mut ids = issued.key_ids();
        ids.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let delivered = pair.get_keys_by_id(KmeSide::B, &sae("UE-001"), &sae("N3IWF-001"), &ids).unwrap();
        prop_assert_eq!(delivered.key_ids(), ids.clone());
        for (d, id) in delivered.keys.iter().zip(&ids) {
            let original = issued.keys.iter().find(|k| k.key_id == *id).unwrap();
            prop_assert_eq!(&d.material, &original.material);
        }
    }

    #[test]
    fn rejected_batch_consumes_nothing(n in 2usize..20, bad in any::<u128>()) {
        let pair = kme_pair(20, 9);
        let issued = pair.get_keys(KmeSide::A, &sae("N3IWF-001"), &sae("UE-001"), n, 256).unwrap();
        let mut ids = issued.key_ids();
        ids[n / 2] = Uuid::from_u128(bad);
        let err = pair.get_keys_by_id(KmeSide::B, &sae("UE-001"), &sae("N3IWF-001"), &ids).unwrap_err();
        prop_assert_eq!(err, KmsError::NotFound(Uuid::from_u128(bad)));
        prop_assert_eq!(pair.reserved_key_count(), n);
        let all = pair.get_keys_by_id(KmeSide::B, &sae("UE-001"), &sae("N3IWF-001"), &issued.key_ids()).unwrap();
        prop_assert_eq!(all.len(), n);
    }
}
