//! Keys, signatures, hash preimages and the device ↔ gateway envelope.

mod bytes;
pub mod cert;
pub mod envelope;
pub mod hash;
pub mod keys;
pub mod replay;

pub(crate) use bytes::hex_bytes;

pub use cert::Certificate;
pub use envelope::{
    open_envelope, seal_envelope, Envelope, EnvelopeError, OpenPolicy, Opened, SessionKeys, DEFAULT_FRESHNESS_WINDOW_MS,
};
pub use hash::{check_preimage, new_preimage, sha256, sha256_parts, PaymentHash, Preimage};
pub use keys::{
    default_scheme, sign, verify, Ed25519, KeyPair, PublicKey, SchemeRef, SecretKey, Signature, SignatureScheme,
};
pub use replay::{ReplayGuard, DEFAULT_REPLAY_CAPACITY};
