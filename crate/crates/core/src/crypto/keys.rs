//! Keys, signatures and the pluggable signature scheme.
//!
//! The default scheme is Ed25519, whose signatures are deterministic, so every
//! scenario replays byte-for-byte from a seed. The same secret doubles as the
//! X25519 decryption key used to unwrap envelope session keys.

use std::fmt;
use std::sync::Arc;

use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};
use rand::{CryptoRng, RngCore};

use super::bytes::hex_bytes;

hex_bytes!(
    /// Secret signing/decryption key material.
    SecretKey,
    32
);
hex_bytes!(
    /// Public verification key.
    PublicKey,
    32
);
hex_bytes!(Signature, 64);

impl SecretKey {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        SecretKey(bytes)
    }
}

/// Signing primitive behind every multisig, revocation and certificate check.
pub trait SignatureScheme: fmt::Debug + Send + Sync {
    fn public_key(&self, secret: &SecretKey) -> PublicKey;
    fn sign(&self, msg: &[u8], secret: &SecretKey) -> Signature;
    /// Never panics; malformed keys or signatures simply fail to verify.
    fn verify(&self, msg: &[u8], sig: &Signature, public: &PublicKey) -> bool;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Ed25519;

impl SignatureScheme for Ed25519 {
    fn public_key(&self, secret: &SecretKey) -> PublicKey {
        PublicKey(SigningKey::from_bytes(&secret.0).verifying_key().to_bytes())
    }

    fn sign(&self, msg: &[u8], secret: &SecretKey) -> Signature {
        Signature(SigningKey::from_bytes(&secret.0).sign(msg).to_bytes())
    }

    fn verify(&self, msg: &[u8], sig: &Signature, public: &PublicKey) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&public.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
        key.verify(msg, &sig).is_ok()
    }
}

pub type SchemeRef = Arc<dyn SignatureScheme>;

pub fn default_scheme() -> SchemeRef {
    Arc::new(Ed25519)
}

pub fn sign(msg: &[u8], secret: &SecretKey) -> Signature {
    Ed25519.sign(msg, secret)
}

pub fn verify(msg: &[u8], sig: &Signature, public: &PublicKey) -> bool {
    Ed25519.verify(msg, sig, public)
}

#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

impl KeyPair {
    pub fn from_secret(secret: SecretKey) -> Self {
        KeyPair { public: Ed25519.public_key(&secret), secret }
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self::from_secret(SecretKey::random(rng))
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        sign(msg, &self.secret)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

pub(crate) fn x25519_secret(secret: &SecretKey) -> x25519_dalek::StaticSecret {
    x25519_dalek::StaticSecret::from(SigningKey::from_bytes(&secret.0).to_scalar_bytes())
}

pub(crate) fn x25519_public(public: &PublicKey) -> Option<x25519_dalek::PublicKey> {
    let key = VerifyingKey::from_bytes(&public.0).ok()?;
    Some(x25519_dalek::PublicKey::from(key.to_montgomery().to_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sign_verify_contract() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = KeyPair::generate(&mut rng);
        let b = KeyPair::generate(&mut rng);
        let sig = a.sign(b"m");
        assert!(verify(b"m", &sig, &a.public));
        assert!(!verify(b"m", &sig, &b.public));
        assert!(!verify(b"n", &sig, &a.public));
    }

    #[test]
    fn signatures_are_deterministic() {
        let k = KeyPair::from_secret(SecretKey([9; 32]));
        assert_eq!(k.sign(b"txid"), k.sign(b"txid"));
    }

    #[test]
    fn garbage_public_key_does_not_panic() {
        let k = KeyPair::from_secret(SecretKey([3; 32]));
        let sig = k.sign(b"m");
        // not a valid curve point encoding
        let bogus = PublicKey([0xff; 32]);
        assert!(!verify(b"m", &sig, &bogus));
    }

    #[test]
    fn x25519_derivation_agrees() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let a = KeyPair::generate(&mut rng);
        let b = KeyPair::generate(&mut rng);
        let ab = x25519_secret(&a.secret).diffie_hellman(&x25519_public(&b.public).unwrap());
        let ba = x25519_secret(&b.secret).diffie_hellman(&x25519_public(&a.public).unwrap());
        assert_eq!(ab.as_bytes(), ba.as_bytes());
    }
}
