//! Ring verifiable random function contract and its reference model provider.
//!
//! The model provider holds a private key unknown to every node. A signature is
//! an authenticated encryption of the signer's VRF output under that key, bound
//! to `(seed, message, ring)`. Verification therefore recovers the output
//! without learning the signer, and no party outside the provider can mint a
//! verifying signature.

use crate::hash::{hash, hash_concat, Digest, Hasher};
use std::fmt;
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub Digest);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pk:{}", self.0.short_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SecretKey(Digest);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("sk:<redacted>")
    }
}

impl SecretKey {
    pub fn public_key(&self) -> PublicKey {
        PublicKey(hash_concat(&[b"pk", self.0.as_bytes()]))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

/// Deterministic key pair derived from `id_material`.
pub fn keygen(id_material: &[u8]) -> KeyPair {
    let secret = SecretKey(hash_concat(&[b"sk", id_material]));
    KeyPair {
        public: secret.public_key(),
        secret,
    }
}

/// VRF output, always in `[1, MAX]`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct VrfOutput(pub u64);

/// Ordered ring of public keys with its cached digest.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Ring {
    members: Vec<PublicKey>,
    digest: Digest,
}

impl Ring {
    pub fn new(members: Vec<PublicKey>) -> Self {
        let mut h = Hasher::new();
        for pk in &members {
            h.update(pk.0.as_bytes());
        }
        let digest = h.finish();
        Ring { members, digest }
    }

    pub fn members(&self) -> &[PublicKey] {
        &self.members
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn contains(&self, pk: &PublicKey) -> bool {
        self.members.contains(pk)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub const RING_SIGNATURE_LEN: usize = 40;

/// Opaque ring signature: 8 bytes of masked output followed by a 32-byte tag.
/// Carries no signer index or key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RingSignature([u8; RING_SIGNATURE_LEN]);

impl fmt::Debug for RingSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RingSignature({})", hash(&self.0).short_hex())
    }
}

impl RingSignature {
    pub fn from_bytes(bytes: [u8; RING_SIGNATURE_LEN]) -> Self {
        RingSignature(bytes)
    }

    pub fn to_bytes(&self) -> [u8; RING_SIGNATURE_LEN] {
        self.0
    }
}

pub const MESSAGE_SIGNATURE_LEN: usize = 32;

/// Ordinary (non-anonymous) signature used for buyer authorization.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct MessageSignature(pub Digest);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RvrfError {
    #[error("signer public key is not a member of the ring")]
    NotInRing,
}

/// Eval / Sign / Verify contract.
pub trait RingVrf: Send + Sync {
    fn max(&self) -> u64;

    fn eval(&self, sk: &SecretKey, seed: &[u8]) -> VrfOutput;

    fn sign(
        &self,
        seed: &[u8],
        message: &[u8],
        ring: &Ring,
        sk: &SecretKey,
    ) -> Result<RingSignature, RvrfError>;

    /// `Some(out)` iff `sig` was produced by `sign` for exactly this tuple by a
    /// ring member whose `eval(sk, seed) = out`.
    fn verify(
        &self,
        sig: &RingSignature,
        seed: &[u8],
        message: &[u8],
        ring: &Ring,
    ) -> Option<VrfOutput>;
}

/// Reference model provider.
pub struct ModelRvrf {
    key: [u8; 32],
    max: u64,
}

impl fmt::Debug for ModelRvrf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelRvrf").field("max", &self.max).finish_non_exhaustive()
    }
}

impl ModelRvrf {
    /// `max` must be ≥ 1.
    pub fn new(max: u64, provider_seed: &[u8]) -> Self {
        assert!(max >= 1, "VRF range must be non-empty");
        ModelRvrf {
            key: hash_concat(&[b"provider", provider_seed]).0,
            max,
        }
    }

    fn tag(&self, seed: &[u8], message: &[u8], ring: &Ring, out: u64) -> Digest {
        let msg_digest = hash(message);
        let seed_digest = hash(seed);
        hash_concat(&[
            &self.key,
            b"tag",
            seed_digest.as_bytes(),
            msg_digest.as_bytes(),
            ring.digest().as_bytes(),
            &out.to_be_bytes(),
        ])
    }

    fn mask(&self, tag: &Digest) -> u64 {
        hash_concat(&[&self.key, b"mask", tag.as_bytes()]).leading_u64()
    }

    pub fn sign_message(&self, sk: &SecretKey, message: &[u8]) -> MessageSignature {
        self.message_tag(&sk.public_key(), message)
    }

    pub fn verify_message(&self, pk: &PublicKey, message: &[u8], sig: &MessageSignature) -> bool {
        self.message_tag(pk, message) == *sig
    }

    fn message_tag(&self, pk: &PublicKey, message: &[u8]) -> MessageSignature {
        MessageSignature(hash_concat(&[&self.key, b"sig", pk.0.as_bytes(), message]))
    }
}

impl RingVrf for ModelRvrf {
    fn max(&self) -> u64 {
        self.max
    }

    fn eval(&self, sk: &SecretKey, seed: &[u8]) -> VrfOutput {
        let h = hash_concat(&[b"eval", sk.0.as_bytes(), seed]);
        VrfOutput(1 + h.leading_u64() % self.max)
    }

    fn sign(
        &self,
        seed: &[u8],
        message: &[u8],
        ring: &Ring,
        sk: &SecretKey,
    ) -> Result<RingSignature, RvrfError> {
        if !ring.contains(&sk.public_key()) {
            return Err(RvrfError::NotInRing);
        }
        let out = self.eval(sk, seed).0;
        let tag = self.tag(seed, message, ring, out);
        let masked = out ^ self.mask(&tag);
        let mut bytes = [0u8; RING_SIGNATURE_LEN];
        bytes[..8].copy_from_slice(&masked.to_be_bytes());
        bytes[8..].copy_from_slice(tag.as_bytes());
        Ok(RingSignature(bytes))
    }

    fn verify(
        &self,
        sig: &RingSignature,
        seed: &[u8],
        message: &[u8],
        ring: &Ring,
    ) -> Option<VrfOutput> {
        let mut masked = [0u8; 8];
        masked.copy_from_slice(&sig.0[..8]);
        let mut tag = [0u8; 32];
        tag.copy_from_slice(&sig.0[8..]);
        let tag = Digest(tag);
        let out = u64::from_be_bytes(masked) ^ self.mask(&tag);
        if out == 0 || out > self.max {
            return None;
        }
        (self.tag(seed, message, ring, out) == tag).then_some(VrfOutput(out))
    }
}
