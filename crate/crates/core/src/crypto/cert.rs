use serde::{Deserialize, Serialize};

use super::keys::{sign, verify, KeyPair, PublicKey, Signature};
use crate::wire::{DecodeError, Reader, Writer};

const CERT_DOMAIN: &[u8] = b"iotgate/cert/v1";

/// A device public key vouched for by an issuer (the device manufacturer or
/// operator whose key the gateway is configured with).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub subject: PublicKey,
    pub issuer: PublicKey,
    pub signature: Signature,
}

impl Certificate {
    pub const ENCODED_LEN: usize = 32 + 32 + 64;

    pub fn issue(subject: PublicKey, issuer: &KeyPair) -> Self {
        let signature = sign(&Self::signed_bytes(&subject, &issuer.public), &issuer.secret);
        Certificate { subject, issuer: issuer.public, signature }
    }

    fn signed_bytes(subject: &PublicKey, issuer: &PublicKey) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(CERT_DOMAIN).raw(&subject.0).raw(&issuer.0);
        w.finish()
    }

    /// True iff issued by `trusted_issuer` and the signature checks.
    pub fn verify(&self, trusted_issuer: &PublicKey) -> bool {
        self.issuer == *trusted_issuer
            && verify(&Self::signed_bytes(&self.subject, &self.issuer), &self.signature, &self.issuer)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(&self.subject.0).raw(&self.issuer.0).raw(&self.signature.0);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let cert = Certificate {
            subject: PublicKey(r.array()?),
            issuer: PublicKey(r.array()?),
            signature: Signature(r.array()?),
        };
        r.finish()?;
        Ok(cert)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keys::SecretKey;

    #[test]
    fn issued_certificate_verifies_only_under_issuer() {
        let issuer = KeyPair::from_secret(SecretKey([1; 32]));
        let other = KeyPair::from_secret(SecretKey([2; 32]));
        let device = KeyPair::from_secret(SecretKey([3; 32]));
        let cert = Certificate::issue(device.public, &issuer);
        assert!(cert.verify(&issuer.public));
        assert!(!cert.verify(&other.public));

        let mut forged = cert.clone();
        forged.subject = other.public;
        assert!(!forged.verify(&issuer.public));

        assert_eq!(Certificate::from_bytes(&cert.to_bytes()).unwrap(), cert);
    }
}
