use crate::hash::{hash, Digest, Hasher};
use crate::quorum::Nonce;
use crate::rvrf::{MessageSignature, ModelRvrf, PublicKey, RingSignature, SecretKey};
use crate::types::{Amount, FundId};
use std::collections::BTreeMap;
use std::fmt;

/// Node index: validators occupy `0..n`, clients follow.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(pub Digest);

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tx:{}", self.0.short_hex())
    }
}

pub const TX_LEN: usize = 32 * 3 + 8 + 32;

/// `⟨fund, seller⟩` signed by `buyer`. `serial` keeps repeated payments from
/// the same buyer to the same seller distinct.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Transaction {
    pub fund: FundId,
    pub buyer: PublicKey,
    pub seller: PublicKey,
    pub serial: u64,
    pub buyer_sig: MessageSignature,
}

impl Transaction {
    pub fn signing_bytes(fund: &FundId, buyer: &PublicKey, seller: &PublicKey, serial: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(TX_LEN - 32);
        out.extend_from_slice(fund.0.as_bytes());
        out.extend_from_slice(buyer.0.as_bytes());
        out.extend_from_slice(seller.0.as_bytes());
        out.extend_from_slice(&serial.to_be_bytes());
        out
    }

    pub fn new_signed(
        provider: &ModelRvrf,
        fund: FundId,
        buyer_sk: &SecretKey,
        seller: PublicKey,
        serial: u64,
    ) -> Transaction {
        let buyer = buyer_sk.public_key();
        let sig = provider.sign_message(buyer_sk, &Self::signing_bytes(&fund, &buyer, &seller, serial));
        Transaction {
            fund,
            buyer,
            seller,
            serial,
            buyer_sig: sig,
        }
    }

    pub fn signature_valid(&self, provider: &ModelRvrf) -> bool {
        provider.verify_message(
            &self.buyer,
            &Self::signing_bytes(&self.fund, &self.buyer, &self.seller, self.serial),
            &self.buyer_sig,
        )
    }

    /// Canonical encoding; this is the data `d` the secret quorum validates.
    pub fn encode(&self) -> [u8; TX_LEN] {
        let mut out = [0u8; TX_LEN];
        out[..32].copy_from_slice(self.fund.0.as_bytes());
        out[32..64].copy_from_slice(self.buyer.0.as_bytes());
        out[64..96].copy_from_slice(self.seller.0.as_bytes());
        out[96..104].copy_from_slice(&self.serial.to_be_bytes());
        out[104..].copy_from_slice(self.buyer_sig.0.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8; TX_LEN]) -> Transaction {
        let d = |r: std::ops::Range<usize>| {
            let mut a = [0u8; 32];
            a.copy_from_slice(&bytes[r]);
            Digest(a)
        };
        let mut serial = [0u8; 8];
        serial.copy_from_slice(&bytes[96..104]);
        Transaction {
            fund: FundId(d(0..32)),
            buyer: PublicKey(d(32..64)),
            seller: PublicKey(d(64..96)),
            serial: u64::from_be_bytes(serial),
            buyer_sig: MessageSignature(d(104..136)),
        }
    }

    pub fn id(&self) -> TxId {
        TxId(hash(&self.encode()))
    }
}

/// Validator memory of one signed transaction: `(tx, r, N)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Record {
    pub tx: Transaction,
    pub sig: RingSignature,
    pub nonce: Nonce,
}

/// Fund as carried in confirmations; one owner.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct FundSummary {
    pub id: FundId,
    pub owner: PublicKey,
    pub balance: Amount,
}

/// Identifier of the fund created by settling `funds` (sorted, deduplicated).
pub fn settle_fund_id(funds: &[FundId]) -> FundId {
    let mut h = Hasher::new();
    h.update(b"settle");
    for f in funds {
        h.update(f.0.as_bytes());
    }
    FundId(h.finish())
}

/// Identifier of the fund created by redeeming `txs` (sorted) for `seller`.
pub fn redeem_fund_id(seller: &PublicKey, txs: &[TxId]) -> FundId {
    let mut h = Hasher::new();
    h.update(b"redeem").update(seller.0.as_bytes());
    for t in txs {
        h.update(t.0.as_bytes());
    }
    FundId(h.finish())
}

/// Public-key directory shared by all nodes.
#[derive(Clone, Debug)]
pub struct Directory {
    validators: Vec<PublicKey>,
    clients: Vec<PublicKey>,
    by_key: BTreeMap<PublicKey, NodeId>,
}

impl Directory {
    pub fn new(validators: Vec<PublicKey>, clients: Vec<PublicKey>) -> Self {
        let mut by_key = BTreeMap::new();
        for (i, pk) in validators.iter().chain(clients.iter()).enumerate() {
            by_key.insert(*pk, NodeId(i as u32));
        }
        Directory {
            validators,
            clients,
            by_key,
        }
    }

    pub fn n(&self) -> usize {
        self.validators.len()
    }

    pub fn validator_keys(&self) -> &[PublicKey] {
        &self.validators
    }

    pub fn validator_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.validators.len() as u32).map(NodeId)
    }

    pub fn client_ids(&self) -> impl Iterator<Item = NodeId> {
        let n = self.validators.len() as u32;
        (n..n + self.clients.len() as u32).map(NodeId)
    }

    pub fn is_validator(&self, id: NodeId) -> bool {
        id.index() < self.validators.len()
    }

    pub fn node_count(&self) -> usize {
        self.validators.len() + self.clients.len()
    }

    pub fn node_of(&self, pk: &PublicKey) -> Option<NodeId> {
        self.by_key.get(pk).copied()
    }

    pub fn key_of(&self, id: NodeId) -> PublicKey {
        let i = id.index();
        if i < self.validators.len() {
            self.validators[i]
        } else {
            self.clients[i - self.validators.len()]
        }
    }
}
