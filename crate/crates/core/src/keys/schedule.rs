use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{prf, prf_plus, AuthSecret, KeyError};
use crate::codec::DirectionalKeys;
use crate::kms::KeyContainer;

/// Every SA key slot is 256 bits wide.
pub const KEY_LEN: usize = 32;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, PartialEq, Eq)]
pub struct IkeSaKeys {
    pub sk_d: Option<Vec<u8>>,
    pub sk_ai: Vec<u8>,
    pub sk_ar: Vec<u8>,
    pub sk_ei: Vec<u8>,
    pub sk_er: Vec<u8>,
    pub sk_pi: Option<Vec<u8>>,
    pub sk_pr: Option<Vec<u8>>,
}

impl fmt::Debug for IkeSaKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IkeSaKeys({})", &self.fingerprint()[..16])
    }
}

impl IkeSaKeys {
    pub fn initiator_to_responder(&self) -> DirectionalKeys {
        DirectionalKeys {
            encryption: self.sk_ei.clone(),
            integrity: self.sk_ai.clone(),
        }
    }

    pub fn responder_to_initiator(&self) -> DirectionalKeys {
        DirectionalKeys {
            encryption: self.sk_er.clone(),
            integrity: self.sk_ar.clone(),
        }
    }

    /// Present keys in RFC 7296 order.
    pub fn present_keys(&self) -> Vec<&[u8]> {
        let mut keys = Vec::with_capacity(7);
        keys.extend(self.sk_d.as_deref());
        keys.extend([self.sk_ai.as_slice(), &self.sk_ar, &self.sk_ei, &self.sk_er]);
        keys.extend(self.sk_pi.as_deref());
        keys.extend(self.sk_pr.as_deref());
        keys
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (tag, key) in [
            ("d", self.sk_d.as_deref()),
            ("ai", Some(self.sk_ai.as_slice())),
            ("ar", Some(&self.sk_ar)),
            ("ei", Some(&self.sk_ei)),
            ("er", Some(&self.sk_er)),
            ("pi", self.sk_pi.as_deref()),
            ("pr", self.sk_pr.as_deref()),
        ] {
            if let Some(k) = key {
                h.update(tag.as_bytes());
                h.update(k);
            }
        }
        hex(&h.finalize())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct ChildSaKeys {
    pub enc_i: Vec<u8>,
    pub enc_r: Vec<u8>,
    pub int_i: Vec<u8>,
    pub int_r: Vec<u8>,
}

impl fmt::Debug for ChildSaKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChildSaKeys({})", &self.fingerprint()[..16])
    }
}

impl ChildSaKeys {
    pub fn initiator_to_responder(&self) -> DirectionalKeys {
        DirectionalKeys {
            encryption: self.enc_i.clone(),
            integrity: self.int_i.clone(),
        }
    }

    pub fn responder_to_initiator(&self) -> DirectionalKeys {
        DirectionalKeys {
            encryption: self.enc_r.clone(),
            integrity: self.int_r.clone(),
        }
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for k in [&self.enc_i, &self.enc_r, &self.int_i, &self.int_r] {
            h.update(k);
        }
        hex(&h.finalize())
    }
}

/// SKEYSEED = prf(Ni | Nr, g^ir), then
/// {SK_d | SK_ai | SK_ar | SK_ei | SK_er | SK_pi | SK_pr} = prf+(SKEYSEED, Ni | Nr | SPIi | SPIr).
pub fn derive_classical_ike_keys(
    shared_secret: &[u8],
    nonce_i: &[u8],
    nonce_r: &[u8],
    spi_i: &[u8; 8],
    spi_r: &[u8; 8],
) -> Result<IkeSaKeys, KeyError> {
    let nonces = [nonce_i, nonce_r].concat();
    let skeyseed = prf(&nonces, shared_secret);
    let seed = [nonce_i, nonce_r, spi_i, spi_r].concat();
    let keymat = prf_plus(&skeyseed, &seed, 7 * KEY_LEN)?;
    let mut parts = keymat.chunks_exact(KEY_LEN).map(<[u8]>::to_vec);
    let mut next = || parts.next().expect("seven keys");
    Ok(IkeSaKeys {
        sk_d: Some(next()),
        sk_ai: next(),
        sk_ar: next(),
        sk_ei: next(),
        sk_er: next(),
        sk_pi: Some(next()),
        sk_pr: Some(next()),
    })
}

/// KEYMAT = prf+(SK_d, Ni | Nr), taken as initiator encryption, initiator
/// integrity, responder encryption, responder integrity.
pub fn derive_classical_child_keys(
    sk_d: &[u8],
    nonce_i: &[u8],
    nonce_r: &[u8],
) -> Result<ChildSaKeys, KeyError> {
    let keymat = prf_plus(sk_d, &[nonce_i, nonce_r].concat(), 4 * KEY_LEN)?;
    let k = |i: usize| keymat[i * KEY_LEN..(i + 1) * KEY_LEN].to_vec();
    Ok(ChildSaKeys {
        enc_i: k(0),
        int_i: k(1),
        enc_r: k(2),
        int_r: k(3),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeySlot {
    IkeEncI,
    IkeEncR,
    IkeIntI,
    IkeIntR,
    ChildEncI(usize),
    ChildEncR(usize),
    ChildIntI(usize),
    ChildIntR(usize),
    Auth,
    /// Requested but unassigned.
    Spare(usize),
}

/// Positional mapping from a delivered key list to SA key slots.
///
/// Slot order: IKE SA (SK_ei, SK_er, SK_ai, SK_ar), then each child SA in
/// creation order (enc_i, enc_r, int_i, int_r), then the authentication key,
/// then any spare keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyAssignmentPlan {
    pub child_sa_count: usize,
    pub psk_auth: bool,
    pub spare_keys: usize,
}

impl Default for KeyAssignmentPlan {
    fn default() -> Self {
        KeyAssignmentPlan {
            child_sa_count: 2,
            psk_auth: true,
            spare_keys: 0,
        }
    }
}

impl KeyAssignmentPlan {
    pub fn slots(&self) -> Vec<KeySlot> {
        let mut slots = vec![
            KeySlot::IkeEncI,
            KeySlot::IkeEncR,
            KeySlot::IkeIntI,
            KeySlot::IkeIntR,
        ];
        for c in 0..self.child_sa_count {
            slots.extend([
                KeySlot::ChildEncI(c),
                KeySlot::ChildEncR(c),
                KeySlot::ChildIntI(c),
                KeySlot::ChildIntR(c),
            ]);
        }
        if self.psk_auth {
            slots.push(KeySlot::Auth);
        }
        slots.extend((0..self.spare_keys).map(KeySlot::Spare));
        slots
    }

    pub fn slot_count(&self) -> usize {
        4 + 4 * self.child_sa_count + usize::from(self.psk_auth) + self.spare_keys
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QkdKeyAssignment {
    pub ike: IkeSaKeys,
    pub children: Vec<ChildSaKeys>,
    pub auth: Option<AuthSecret>,
}

impl QkdKeyAssignment {
    pub fn child(&self, index: usize) -> Result<&ChildSaKeys, KeyError> {
        self.children
            .get(index)
            .ok_or(KeyError::PlanExhausted(index))
    }
}

/// Fills slot `i` of the plan with key `i` of the container, unmodified.
pub fn assign_qkd_keys(
    container: &KeyContainer,
    plan: &KeyAssignmentPlan,
) -> Result<QkdKeyAssignment, KeyError> {
    let slots = plan.slots();
    if container.len() != slots.len() {
        return Err(KeyError::PlanMismatch {
            expected: slots.len(),
            got: container.len(),
        });
    }
    let empty = ChildSaKeys {
        enc_i: Vec::new(),
        enc_r: Vec::new(),
        int_i: Vec::new(),
        int_r: Vec::new(),
    };
    let mut ike = IkeSaKeys {
        sk_d: None,
        sk_ai: Vec::new(),
        sk_ar: Vec::new(),
        sk_ei: Vec::new(),
        sk_er: Vec::new(),
        sk_pi: None,
        sk_pr: None,
    };
    let mut children = vec![empty; plan.child_sa_count];
    let mut auth = None;
    for (index, (slot, key)) in slots.iter().zip(&container.keys).enumerate() {
        if key.material.len() < KEY_LEN {
            return Err(KeyError::KeyTooShort {
                index,
                len: key.material.len(),
                needed: KEY_LEN,
            });
        }
        let k = key.material[..KEY_LEN].to_vec();
        match *slot {
            KeySlot::IkeEncI => ike.sk_ei = k,
            KeySlot::IkeEncR => ike.sk_er = k,
            KeySlot::IkeIntI => ike.sk_ai = k,
            KeySlot::IkeIntR => ike.sk_ar = k,
            KeySlot::ChildEncI(c) => children[c].enc_i = k,
            KeySlot::ChildEncR(c) => children[c].enc_r = k,
            KeySlot::ChildIntI(c) => children[c].int_i = k,
            KeySlot::ChildIntR(c) => children[c].int_r = k,
            KeySlot::Auth => auth = Some(AuthSecret::new(k).expect("non-empty key")),
            KeySlot::Spare(_) => {}
        }
    }
    Ok(QkdKeyAssignment {
        ike,
        children,
        auth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kms::QkdKey;
    use uuid::Uuid;

    fn container(n: usize) -> KeyContainer {
        KeyContainer {
            keys: (0..n)
                .map(|i| QkdKey {
                    key_id: Uuid::from_u128(i as u128 + 1),
                    material: vec![i as u8; 32],
                })
                .collect(),
        }
    }

    #[test]
    fn default_plan_has_thirteen_slots() {
        let plan = KeyAssignmentPlan::default();
        assert_eq!(plan.slot_count(), 13);
        assert_eq!(plan.slots().len(), 13);
        assert_eq!(plan.slots()[12], KeySlot::Auth);
        let fifteen = KeyAssignmentPlan {
            spare_keys: 2,
            ..plan
        };
        assert_eq!(fifteen.slot_count(), 15);
    }

    #[test]
    fn thirteen_keys_fill_default_plan() {
        let a = assign_qkd_keys(&container(13), &KeyAssignmentPlan::default()).unwrap();
        assert_eq!(a.ike.sk_ei, vec![0; 32]);
        assert_eq!(a.ike.sk_er, vec![1; 32]);
        assert_eq!(a.ike.sk_ai, vec![2; 32]);
        assert_eq!(a.ike.sk_ar, vec![3; 32]);
        assert!(a.ike.sk_d.is_none() && a.ike.sk_pi.is_none() && a.ike.sk_pr.is_none());
        assert_eq!(a.children.len(), 2);
        assert_eq!(a.children[0].enc_i, vec![4; 32]);
        assert_eq!(a.children[1].int_r, vec![11; 32]);
        assert_eq!(a.auth.unwrap().as_bytes(), &[12u8; 32][..]);
        assert_eq!(a.ike.present_keys().len(), 4);
    }

    #[test]
    fn size_mismatch_is_plan_error() {
        let err = assign_qkd_keys(&container(12), &KeyAssignmentPlan::default()).unwrap_err();
        assert_eq!(
            err,
            KeyError::PlanMismatch {
                expected: 13,
                got: 12
            }
        );
    }

    #[test]
    fn short_key_rejected() {
        let mut c = container(13);
        c.keys[5].material.truncate(16);
        assert!(matches!(
            assign_qkd_keys(&c, &KeyAssignmentPlan::default()),
            Err(KeyError::KeyTooShort { index: 5, .. })
        ));
    }

    #[test]
    fn missing_child_is_exhaustion() {
        let plan = KeyAssignmentPlan {
            child_sa_count: 1,
            ..Default::default()
        };
        let a = assign_qkd_keys(&container(9), &plan).unwrap();
        assert!(a.child(0).is_ok());
        assert_eq!(a.child(1).unwrap_err(), KeyError::PlanExhausted(1));
    }

    #[test]
    fn classical_derivation_lengths_and_distinctness() {
        let ike =
            derive_classical_ike_keys(&[7; 256], &[1; 32], &[2; 32], &[3; 8], &[4; 8]).unwrap();
        let keys = ike.present_keys();
        assert_eq!(keys.len(), 7);
        assert_eq!(keys.iter().map(|k| k.len()).sum::<usize>(), 7 * 32);
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                assert_ne!(keys[i], keys[j]);
            }
        }
        let child =
            derive_classical_child_keys(ike.sk_d.as_ref().unwrap(), &[1; 32], &[2; 32]).unwrap();
        for k in [&child.enc_i, &child.enc_r, &child.int_i, &child.int_r] {
            assert!(!keys.contains(&k.as_slice()));
        }
    }
}
