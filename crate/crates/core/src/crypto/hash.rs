use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use super::bytes::hex_bytes;

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// SHA-256 over the concatenation of `parts`.
pub fn sha256_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

hex_bytes!(
    /// HTLC secret. Revealing it proves receipt of a payment.
    Preimage,
    32
);
hex_bytes!(PaymentHash, 32);

impl Preimage {
    pub fn hash(&self) -> PaymentHash {
        PaymentHash(sha256(&self.0))
    }
}

pub fn new_preimage<R: RngCore + CryptoRng>(rng: &mut R) -> (Preimage, PaymentHash) {
    let mut bytes = [0u8; 32];
    rng.fill_bytes(&mut bytes);
    let preimage = Preimage(bytes);
    let hash = preimage.hash();
    (preimage, hash)
}

pub fn check_preimage(preimage: &Preimage, hash: &PaymentHash) -> bool {
    preimage.hash() == *hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn fresh_preimage_checks() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (p, h) = new_preimage(&mut rng);
        assert!(check_preimage(&p, &h));
        let (other, _) = new_preimage(&mut rng);
        assert!(!check_preimage(&other, &h));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(hex::encode(sha256(b"abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(sha256_parts(&[b"a", b"bc"]), sha256(b"abc"));
    }
}
