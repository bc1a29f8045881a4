use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::{metrics, KeyError};

pub const PRF_LEN: usize = 32;
/// The PRF+ block counter is one octet.
pub const PRF_PLUS_MAX: usize = 255 * PRF_LEN;

/// PRF_HMAC_SHA2_256.
pub fn prf(key: &[u8], data: &[u8]) -> [u8; PRF_LEN] {
    metrics::record_prf();
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(data);
    mac.finalize().into_bytes().into()
}

/// prf+ (K,S) = T1 | T2 | T3 | ...
/// where T1 = prf (K, S | 0x01) and Tn = prf (K, Tn-1 | S | n).
pub fn prf_plus(key: &[u8], seed: &[u8], out_len: usize) -> Result<Vec<u8>, KeyError> {
    if out_len > PRF_PLUS_MAX {
        return Err(KeyError::OutputTooLong {
            requested: out_len,
            max: PRF_PLUS_MAX,
        });
    }
    metrics::record_prf_plus();
    let mut out = Vec::with_capacity(out_len + PRF_LEN);
    let mut block: Vec<u8> = Vec::new();
    let mut counter = 1u8;
    while out.len() < out_len {
        let mut input = Vec::with_capacity(block.len() + seed.len() + 1);
        input.extend_from_slice(&block);
        input.extend_from_slice(seed);
        input.push(counter);
        block = prf(key, &input).to_vec();
        out.extend_from_slice(&block);
        counter = counter.wrapping_add(1);
    }
    out.truncate(out_len);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block_is_t1() {
        let t1 = prf(b"key", b"seed\x01");
        assert_eq!(prf_plus(b"key", b"seed", 32).unwrap(), t1.to_vec());
    }

    #[test]
    fn longer_output_extends_shorter() {
        let long = prf_plus(b"k", b"s", 64).unwrap();
        let short = prf_plus(b"k", b"s", 32).unwrap();
        assert_eq!(&long[..32], short.as_slice());
        assert_eq!(prf_plus(b"k", b"s", 0).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn rejects_oversized_output() {
        assert!(prf_plus(b"k", b"s", PRF_PLUS_MAX).is_ok());
        assert_eq!(
            prf_plus(b"k", b"s", PRF_PLUS_MAX + 1),
            Err(KeyError::OutputTooLong {
                requested: PRF_PLUS_MAX + 1,
                max: PRF_PLUS_MAX
            })
        );
    }
}
