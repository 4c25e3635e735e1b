//! Secret quorums: candidate selection, VRF self-selection, proof assembly and
//! proof verification.

use crate::hash::{hash, hash_concat, Digest};
use crate::params::{vrf_threshold, SystemConfig};
use crate::rvrf::{KeyPair, PublicKey, Ring, RingSignature, RingVrf, RvrfError, VrfOutput};
use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

pub const NONCE_LEN: usize = 32;
pub type Nonce = [u8; NONCE_LEN];

/// `{signatures, N}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationProof {
    pub signatures: Vec<RingSignature>,
    pub nonce: Nonce,
}

/// First `v` distinct validators hit by `Hash(Hash(d) ‖ j) mod n`, j = 1, 2, …,
/// in collection order.
pub fn select_candidates(d: &[u8], validators: &[PublicKey], v: usize) -> Vec<PublicKey> {
    assert!(v <= validators.len(), "candidate count exceeds validator count");
    let n = validators.len() as u64;
    let hd = hash(d);
    let mut taken = vec![false; validators.len()];
    let mut out = Vec::with_capacity(v);
    let mut j: u64 = 1;
    while out.len() < v {
        let idx = (hash_concat(&[hd.as_bytes(), &j.to_be_bytes()]).leading_u64() % n) as usize;
        if !taken[idx] {
            taken[idx] = true;
            out.push(validators[idx]);
        }
        j += 1;
    }
    out
}

/// `Hash(d ‖ N)`.
pub fn seed_for(d: &[u8], nonce: &Nonce) -> Digest {
    hash_concat(&[d, nonce])
}

/// Secret-quorum instance over a fixed validator ordering.
pub struct SecretQuorum<P: RingVrf> {
    cfg: SystemConfig,
    validators: Vec<PublicKey>,
    provider: P,
    threshold: u64,
    rings: RefCell<HashMap<Digest, Rc<Ring>>>,
}

impl<P: RingVrf> SecretQuorum<P> {
    /// `validators.len()` must equal `cfg.n` and the provider range must equal `cfg.max`.
    pub fn new(cfg: SystemConfig, validators: Vec<PublicKey>, provider: P) -> Self {
        assert_eq!(validators.len(), cfg.n, "validator list must have n entries");
        assert_eq!(provider.max(), cfg.max, "provider range must equal MAX");
        SecretQuorum {
            threshold: vrf_threshold(&cfg),
            cfg,
            validators,
            provider,
            rings: RefCell::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn validators(&self) -> &[PublicKey] {
        &self.validators
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    /// Candidate ring of `d`, memoized by `Hash(d)`.
    pub fn candidates(&self, d: &[u8]) -> Rc<Ring> {
        let key = hash(d);
        if let Some(r) = self.rings.borrow().get(&key) {
            return Rc::clone(r);
        }
        let ring = Rc::new(Ring::new(select_candidates(d, &self.validators, self.cfg.v)));
        self.rings.borrow_mut().insert(key, Rc::clone(&ring));
        ring
    }

    /// VRF output of `kp` for `(d, N)` if it is a candidate and selected.
    pub fn selection(&self, d: &[u8], nonce: &Nonce, kp: &KeyPair) -> Option<VrfOutput> {
        if !self.candidates(d).contains(&kp.public) {
            return None;
        }
        let out = self.provider.eval(&kp.secret, seed_for(d, nonce).as_bytes());
        (out.0 <= self.threshold).then_some(out)
    }

    pub fn selected_by_vrf(&self, d: &[u8], nonce: &Nonce, kp: &KeyPair) -> bool {
        self.selection(d, nonce, kp).is_some()
    }

    /// Requires ring membership only; selection is the caller's gate.
    pub fn make_ring_signature(
        &self,
        d: &[u8],
        nonce: &Nonce,
        kp: &KeyPair,
    ) -> Result<RingSignature, RvrfError> {
        let ring = self.candidates(d);
        self.provider
            .sign(seed_for(d, nonce).as_bytes(), d, &ring, &kp.secret)
    }

    /// Number of signatures that verify with a distinct output `≤ threshold`.
    pub fn count_valid(&self, proof: &ValidationProof, d: &[u8]) -> usize {
        let ring = self.candidates(d);
        let seed = seed_for(d, &proof.nonce);
        let mut outs = BTreeSet::new();
        for sig in &proof.signatures {
            if let Some(o) = self.provider.verify(sig, seed.as_bytes(), d, &ring) {
                if o.0 <= self.threshold {
                    outs.insert(o);
                }
            }
        }
        outs.len()
    }

    pub fn verify_proof(&self, proof: &ValidationProof, d: &[u8]) -> bool {
        self.count_valid(proof, d) >= self.cfg.q
    }

    /// Validator reaction to a contact `(d, N)`: if selected and `valid()`,
    /// sign, call `mutate`, and return the signature to gossip.
    pub fn respond(
        &self,
        d: &[u8],
        nonce: &Nonce,
        kp: &KeyPair,
        valid: impl FnOnce() -> bool,
        mutate: impl FnOnce(&RingSignature),
    ) -> Option<RingSignature> {
        if !self.selected_by_vrf(d, nonce, kp) || !valid() {
            return None;
        }
        let sig = self
            .make_ring_signature(d, nonce, kp)
            .expect("a selected validator is a ring member");
        mutate(&sig);
        Some(sig)
    }
}

/// Client side of a validation: collects signatures for one `(d, N)`.
#[derive(Clone, Debug)]
pub struct ValidateSession {
    d: Vec<u8>,
    nonce: Nonce,
    received: Vec<RingSignature>,
    proof: Option<ValidationProof>,
}

impl ValidateSession {
    pub fn new(d: Vec<u8>, nonce: Nonce) -> Self {
        ValidateSession {
            d,
            nonce,
            received: Vec::new(),
            proof: None,
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.d
    }

    pub fn nonce(&self) -> &Nonce {
        &self.nonce
    }

    pub fn received(&self) -> usize {
        self.received.len()
    }

    pub fn proof(&self) -> Option<&ValidationProof> {
        self.proof.as_ref()
    }

    /// Returns the proof the first time at least `w` signatures form one that verifies.
    pub fn on_signature<P: RingVrf>(
        &mut self,
        sig: RingSignature,
        sq: &SecretQuorum<P>,
    ) -> Option<&ValidationProof> {
        if self.proof.is_some() {
            return None;
        }
        self.received.push(sig);
        if self.received.len() < sq.config().w {
            return None;
        }
        let candidate = ValidationProof {
            signatures: self.received.clone(),
            nonce: self.nonce,
        };
        if sq.verify_proof(&candidate, &self.d) {
            self.proof = Some(candidate);
            self.proof.as_ref()
        } else {
            None
        }
    }
}
