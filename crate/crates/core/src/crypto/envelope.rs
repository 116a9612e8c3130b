//! Authenticated encrypted container for device ↔ gateway messages.
//!
//! Construction (encrypt-then-MAC):
//!
//! * session keys `k_s` (AES-256) and `k_mac` (HMAC-SHA-256), fresh per session;
//! * payload encrypted with AES-256-CTR under `k_s` and a random 16-byte IV;
//! * `k_s ‖ k_mac` wrapped for the recipient with an ephemeral X25519 exchange
//!   against the recipient's key, AES-256-CTR, and a 16-byte HMAC tag;
//! * MAC = HMAC-SHA-256(`k_mac`, version ‖ ts ‖ wrapped ‖ iv ‖ ciphertext ‖ cert),
//!   so every byte on the wire except the MAC itself is authenticated.
//!
//! Wire layout, version 1 (all integers big-endian, `var` = `u16` length prefix):
//!
//! ```text
//! [version:1][ts_ms:8][wrapped_keys:var][iv:16][ciphertext:var][mac:32][cert:var]
//! ```
//!
//! An empty `cert` field means no certificate.

use aes::cipher::{KeyIvInit, StreamCipher};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::Sha256;
use thiserror::Error;

use super::cert::Certificate;
use super::hash::sha256_parts;
use super::keys::{x25519_public, x25519_secret, KeyPair, PublicKey, SecretKey};
use crate::wire::{Reader, Writer};

type Aes256Ctr = ctr::Ctr128BE<aes::Aes256>;
type HmacSha256 = Hmac<Sha256>;

pub const ENVELOPE_VERSION: u8 = 1;
pub const DEFAULT_FRESHNESS_WINDOW_MS: u64 = 30_000;
const WRAP_TAG_LEN: usize = 16;
const WRAPPED_LEN: usize = 32 + 64 + WRAP_TAG_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("payload must not be empty")]
    EmptyPayload,
    #[error("recipient key is not usable for key wrapping")]
    InvalidRecipient,
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("unsupported envelope version {0}")]
    UnsupportedVersion(u8),
    #[error("session keys could not be unwrapped")]
    DecryptFailure,
    #[error("MAC mismatch")]
    MacMismatch,
    #[error("timestamp {timestamp_ms} outside freshness window at {now_ms}")]
    StaleTimestamp { timestamp_ms: u64, now_ms: u64 },
    #[error("certificate missing or not issued by a trusted issuer")]
    BadCertificate,
    #[error("envelope already seen")]
    Replayed,
}

#[derive(Clone, PartialEq, Eq)]
pub struct SessionKeys {
    pub enc: [u8; 32],
    pub mac: [u8; 32],
}

impl SessionKeys {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let mut enc = [0u8; 32];
            let mut mac = [0u8; 32];
            rng.fill_bytes(&mut enc);
            rng.fill_bytes(&mut mac);
            if enc != mac {
                return SessionKeys { enc, mac };
            }
        }
    }
}

impl std::fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SessionKeys(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub version: u8,
    pub timestamp_ms: u64,
    pub wrapped_keys: Vec<u8>,
    pub iv: [u8; 16],
    pub ciphertext: Vec<u8>,
    pub mac: [u8; 32],
    pub cert: Option<Certificate>,
}

#[derive(Debug, Clone)]
pub struct OpenPolicy {
    pub freshness_window_ms: u64,
    /// When set, a certificate issued by this key is mandatory.
    pub trusted_issuer: Option<PublicKey>,
}

impl Default for OpenPolicy {
    fn default() -> Self {
        OpenPolicy { freshness_window_ms: DEFAULT_FRESHNESS_WINDOW_MS, trusted_issuer: None }
    }
}

#[derive(Debug, Clone)]
pub struct Opened {
    pub payload: Vec<u8>,
    pub session: SessionKeys,
    pub cert: Option<Certificate>,
    pub timestamp_ms: u64,
    pub mac: [u8; 32],
}

fn apply_ctr(key: &[u8; 32], iv: &[u8; 16], data: &mut [u8]) {
    let mut cipher = Aes256Ctr::new(key.into(), iv.into());
    cipher.apply_keystream(data);
}

fn wrap_kdf(label: &[u8], shared: &[u8], eph: &[u8], recipient: &[u8]) -> [u8; 32] {
    sha256_parts(&[b"iotgate/wrap/", label, shared, eph, recipient])
}

fn wrap_keys<R: RngCore + CryptoRng>(
    session: &SessionKeys,
    recipient: &PublicKey,
    rng: &mut R,
) -> Result<Vec<u8>, EnvelopeError> {
    let recipient_x = x25519_public(recipient).ok_or(EnvelopeError::InvalidRecipient)?;
    let mut eph_bytes = [0u8; 32];
    rng.fill_bytes(&mut eph_bytes);
    let eph = x25519_dalek::StaticSecret::from(eph_bytes);
    let eph_pub = x25519_dalek::PublicKey::from(&eph);
    let shared = eph.diffie_hellman(&recipient_x);
    if !shared.was_contributory() {
        return Err(EnvelopeError::InvalidRecipient);
    }
    let kek = wrap_kdf(b"enc", shared.as_bytes(), eph_pub.as_bytes(), &recipient.0);
    let kmac = wrap_kdf(b"mac", shared.as_bytes(), eph_pub.as_bytes(), &recipient.0);

    let mut keys = [0u8; 64];
    keys[..32].copy_from_slice(&session.enc);
    keys[32..].copy_from_slice(&session.mac);
    apply_ctr(&kek, &[0u8; 16], &mut keys);

    let mut tag = HmacSha256::new_from_slice(&kmac).expect("hmac accepts any key length");
    tag.update(eph_pub.as_bytes());
    tag.update(&keys);
    let tag = tag.finalize().into_bytes();

    let mut out = Vec::with_capacity(WRAPPED_LEN);
    out.extend_from_slice(eph_pub.as_bytes());
    out.extend_from_slice(&keys);
    out.extend_from_slice(&tag[..WRAP_TAG_LEN]);
    Ok(out)
}

fn unwrap_keys(wrapped: &[u8], own: &KeyPair) -> Result<SessionKeys, EnvelopeError> {
    if wrapped.len() != WRAPPED_LEN {
        return Err(EnvelopeError::DecryptFailure);
    }
    let eph_pub: [u8; 32] = wrapped[..32].try_into().expect("length checked");
    let shared = x25519_secret(&own.secret).diffie_hellman(&x25519_dalek::PublicKey::from(eph_pub));
    if !shared.was_contributory() {
        return Err(EnvelopeError::DecryptFailure);
    }
    let kek = wrap_kdf(b"enc", shared.as_bytes(), &eph_pub, &own.public.0);
    let kmac = wrap_kdf(b"mac", shared.as_bytes(), &eph_pub, &own.public.0);

    let mut tag = HmacSha256::new_from_slice(&kmac).expect("hmac accepts any key length");
    tag.update(&wrapped[..96]);
    tag.verify_truncated_left(&wrapped[96..]).map_err(|_| EnvelopeError::DecryptFailure)?;

    let mut keys: [u8; 64] = wrapped[32..96].try_into().expect("length checked");
    apply_ctr(&kek, &[0u8; 16], &mut keys);
    Ok(SessionKeys { enc: keys[..32].try_into().expect("32 bytes"), mac: keys[32..].try_into().expect("32 bytes") })
}

impl Envelope {
    fn mac_input(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.version)
            .u64(self.timestamp_ms)
            .var(&self.wrapped_keys)
            .raw(&self.iv)
            .var(&self.ciphertext)
            .var(&self.cert.as_ref().map(Certificate::to_bytes).unwrap_or_default());
        w.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.version)
            .u64(self.timestamp_ms)
            .var(&self.wrapped_keys)
            .raw(&self.iv)
            .var(&self.ciphertext)
            .raw(&self.mac)
            .var(&self.cert.as_ref().map(Certificate::to_bytes).unwrap_or_default());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let malformed = |e: crate::wire::DecodeError| EnvelopeError::Malformed(e.to_string());
        let mut r = Reader::new(bytes);
        let version = r.u8().map_err(malformed)?;
        if version != ENVELOPE_VERSION {
            return Err(EnvelopeError::UnsupportedVersion(version));
        }
        let timestamp_ms = r.u64().map_err(malformed)?;
        let wrapped_keys = r.var().map_err(malformed)?.to_vec();
        let iv = r.array().map_err(malformed)?;
        let ciphertext = r.var().map_err(malformed)?.to_vec();
        let mac = r.array().map_err(malformed)?;
        let cert = match r.var().map_err(malformed)? {
            [] => None,
            raw => Some(Certificate::from_bytes(raw).map_err(malformed)?),
        };
        r.finish().map_err(malformed)?;
        Ok(Envelope { version, timestamp_ms, wrapped_keys, iv, ciphertext, mac, cert })
    }
}

pub fn seal_envelope<R: RngCore + CryptoRng>(
    payload: &[u8],
    session: &SessionKeys,
    recipient: &PublicKey,
    now_ms: u64,
    cert: Option<&Certificate>,
    rng: &mut R,
) -> Result<Envelope, EnvelopeError> {
    if payload.is_empty() {
        return Err(EnvelopeError::EmptyPayload);
    }
    let wrapped_keys = wrap_keys(session, recipient, rng)?;
    let mut iv = [0u8; 16];
    rng.fill_bytes(&mut iv);
    let mut ciphertext = payload.to_vec();
    apply_ctr(&session.enc, &iv, &mut ciphertext);

    let mut env = Envelope {
        version: ENVELOPE_VERSION,
        timestamp_ms: now_ms,
        wrapped_keys,
        iv,
        ciphertext,
        mac: [0u8; 32],
        cert: cert.cloned(),
    };
    let mut mac = HmacSha256::new_from_slice(&session.mac).expect("hmac accepts any key length");
    mac.update(&env.mac_input());
    env.mac = mac.finalize().into_bytes().into();
    Ok(env)
}

pub fn open_envelope(
    env: &Envelope,
    own_secret: &SecretKey,
    now_ms: u64,
    policy: &OpenPolicy,
) -> Result<Opened, EnvelopeError> {
    if env.version != ENVELOPE_VERSION {
        return Err(EnvelopeError::UnsupportedVersion(env.version));
    }
    let own = KeyPair::from_secret(*own_secret);
    let session = unwrap_keys(&env.wrapped_keys, &own)?;

    let mut mac = HmacSha256::new_from_slice(&session.mac).expect("hmac accepts any key length");
    mac.update(&env.mac_input());
    mac.verify_slice(&env.mac).map_err(|_| EnvelopeError::MacMismatch)?;

    if now_ms.abs_diff(env.timestamp_ms) > policy.freshness_window_ms {
        return Err(EnvelopeError::StaleTimestamp { timestamp_ms: env.timestamp_ms, now_ms });
    }
    if let Some(issuer) = &policy.trusted_issuer {
        match &env.cert {
            Some(cert) if cert.verify(issuer) => {}
            _ => return Err(EnvelopeError::BadCertificate),
        }
    }

    let mut payload = env.ciphertext.clone();
    apply_ctr(&session.enc, &env.iv, &mut payload);
    Ok(Opened { payload, session, cert: env.cert.clone(), timestamp_ms: env.timestamp_ms, mac: env.mac })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        rng: ChaCha20Rng,
        gateway: KeyPair,
        device: KeyPair,
        issuer: KeyPair,
        session: SessionKeys,
    }

    fn fixture() -> Fixture {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let gateway = KeyPair::generate(&mut rng);
        let device = KeyPair::generate(&mut rng);
        let issuer = KeyPair::generate(&mut rng);
        let session = SessionKeys::generate(&mut rng);
        Fixture { rng, gateway, device, issuer, session }
    }

    #[test]
    fn seal_open_round_trip() {
        let mut f = fixture();
        let cert = Certificate::issue(f.device.public, &f.issuer);
        let env = seal_envelope(b"hello", &f.session, &f.gateway.public, 1_000, Some(&cert), &mut f.rng).unwrap();
        let policy = OpenPolicy { trusted_issuer: Some(f.issuer.public), ..Default::default() };
        let opened = open_envelope(&env, &f.gateway.secret, 1_500, &policy).unwrap();
        assert_eq!(opened.payload, b"hello");
        assert_eq!(opened.session, f.session);
        assert_eq!(opened.cert.unwrap().subject, f.device.public);

        let decoded = Envelope::from_bytes(&env.to_bytes()).unwrap();
        assert_eq!(decoded, env);
    }

    #[test]
    fn ciphertext_length_equals_payload_length() {
        let mut f = fixture();
        let env = seal_envelope(&[7u8; 24], &f.session, &f.gateway.public, 0, None, &mut f.rng).unwrap();
        assert_eq!(env.ciphertext.len(), 24);
        assert_ne!(env.ciphertext, vec![7u8; 24]);
    }

    #[test]
    fn empty_payload_rejected() {
        let mut f = fixture();
        assert_eq!(
            seal_envelope(b"", &f.session, &f.gateway.public, 0, None, &mut f.rng),
            Err(EnvelopeError::EmptyPayload)
        );
    }

    #[test]
    fn wrong_recipient_key_is_decrypt_failure() {
        let mut f = fixture();
        let env = seal_envelope(b"x", &f.session, &f.gateway.public, 0, None, &mut f.rng).unwrap();
        let err = open_envelope(&env, &f.device.secret, 0, &OpenPolicy::default()).unwrap_err();
        assert_eq!(err, EnvelopeError::DecryptFailure);
    }

    #[test]
    fn flipped_ciphertext_bit_is_mac_mismatch() {
        let mut f = fixture();
        let mut env = seal_envelope(b"pay 1 BTC", &f.session, &f.gateway.public, 0, None, &mut f.rng).unwrap();
        env.ciphertext[0] ^= 0x01;
        assert_eq!(
            open_envelope(&env, &f.gateway.secret, 0, &OpenPolicy::default()).unwrap_err(),
            EnvelopeError::MacMismatch
        );
    }

    #[test]
    fn freshness_window_boundary() {
        let mut f = fixture();
        let env = seal_envelope(b"x", &f.session, &f.gateway.public, 100_000, None, &mut f.rng).unwrap();
        let policy = OpenPolicy::default();
        let w = policy.freshness_window_ms;
        assert!(open_envelope(&env, &f.gateway.secret, 100_000 + w, &policy).is_ok());
        assert!(open_envelope(&env, &f.gateway.secret, 100_000 - w, &policy).is_ok());
        assert!(matches!(
            open_envelope(&env, &f.gateway.secret, 100_000 + w + 1, &policy),
            Err(EnvelopeError::StaleTimestamp { .. })
        ));
        assert!(matches!(
            open_envelope(&env, &f.gateway.secret, 100_000 - w - 1, &policy),
            Err(EnvelopeError::StaleTimestamp { .. })
        ));
    }

    #[test]
    fn certificate_policy() {
        let mut f = fixture();
        let policy = OpenPolicy { trusted_issuer: Some(f.issuer.public), ..Default::default() };
        let env = seal_envelope(b"x", &f.session, &f.gateway.public, 0, None, &mut f.rng).unwrap();
        assert_eq!(open_envelope(&env, &f.gateway.secret, 0, &policy).unwrap_err(), EnvelopeError::BadCertificate);

        let self_signed = Certificate::issue(f.device.public, &f.device);
        let env = seal_envelope(b"x", &f.session, &f.gateway.public, 0, Some(&self_signed), &mut f.rng).unwrap();
        assert_eq!(open_envelope(&env, &f.gateway.secret, 0, &policy).unwrap_err(), EnvelopeError::BadCertificate);
    }

    #[test]
    fn sealing_is_deterministic_for_a_seed() {
        let mut a = fixture();
        let mut b = fixture();
        let ea = seal_envelope(b"x", &a.session, &a.gateway.public, 5, None, &mut a.rng).unwrap();
        let eb = seal_envelope(b"x", &b.session, &b.gateway.public, 5, None, &mut b.rng).unwrap();
        assert_eq!(ea.to_bytes(), eb.to_bytes());
    }
}
