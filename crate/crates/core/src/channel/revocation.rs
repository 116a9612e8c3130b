use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::Side;
use crate::crypto::{sha256_parts, KeyPair, PublicKey, SecretKey};

/// Per-party source of one revocation keypair per state.
#[derive(Clone, PartialEq, Eq)]
pub struct RevocationSeed([u8; 32]);

impl std::fmt::Debug for RevocationSeed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("RevocationSeed(..)")
    }
}

impl RevocationSeed {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        RevocationSeed(bytes)
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        RevocationSeed(b)
    }

    pub fn secret(&self, state_index: u64) -> SecretKey {
        SecretKey(sha256_parts(&[b"iotgate/revocation/v1".as_slice(), &self.0, &state_index.to_be_bytes()]))
    }

    pub fn keypair(&self, state_index: u64) -> KeyPair {
        KeyPair::from_secret(self.secret(state_index))
    }

    pub fn point(&self, state_index: u64) -> PublicKey {
        self.keypair(state_index).public
    }
}

/// A revealed revocation secret for one party's commitment at one state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationReveal {
    pub side: Side,
    pub state_index: u64,
    pub secret: SecretKey,
}

impl RevocationReveal {
    pub fn keypair(&self) -> KeyPair {
        KeyPair::from_secret(self.secret)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_state_keys_differ_and_are_stable() {
        let seed = RevocationSeed::from_bytes([5; 32]);
        assert_ne!(seed.point(0), seed.point(1));
        assert_eq!(seed.point(3), RevocationSeed::from_bytes([5; 32]).point(3));
        assert_ne!(seed.point(0), RevocationSeed::from_bytes([6; 32]).point(0));
    }
}
