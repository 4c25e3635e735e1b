//! Message set and its byte encoding. Integers are big-endian; lists carry a
//! `u32` length prefix.

use super::types::{FundSummary, Record, Transaction, TxId, TX_LEN};
use crate::hash::Digest;
use crate::quorum::{Nonce, ValidationProof, NONCE_LEN};
use crate::rvrf::{PublicKey, RingSignature, RING_SIGNATURE_LEN};
use crate::types::{Amount, FundId};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Pay { tx: Transaction },
    /// `(d, N)` sent by a seller to every candidate; `d` is the encoded tx.
    Contact { tx: Transaction, nonce: Nonce },
    SigResponse { txid: TxId, nonce: Nonce, sig: RingSignature },
    ConfirmPay { txid: TxId },
    Settle { funds: Vec<FundId> },
    SettleRecord { funds: Vec<FundId>, records: Vec<Record> },
    ConfirmSettle { funds: Vec<FundId>, fund: Option<FundSummary> },
    Redeem { items: Vec<(Transaction, ValidationProof)> },
    ConfirmRedeem { fund: FundSummary },
    InvalidRedeem,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum MessageKind {
    Pay,
    Contact,
    SigResponse,
    ConfirmPay,
    Settle,
    SettleRecord,
    ConfirmSettle,
    Redeem,
    ConfirmRedeem,
    InvalidRedeem,
}

impl MessageKind {
    pub const ALL: [MessageKind; 10] = [
        MessageKind::Pay,
        MessageKind::Contact,
        MessageKind::SigResponse,
        MessageKind::ConfirmPay,
        MessageKind::Settle,
        MessageKind::SettleRecord,
        MessageKind::ConfirmSettle,
        MessageKind::Redeem,
        MessageKind::ConfirmRedeem,
        MessageKind::InvalidRedeem,
    ];

    pub fn tag(self) -> u8 {
        self as u8 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Pay => "PAY",
            MessageKind::Contact => "CONTACT",
            MessageKind::SigResponse => "SIG_RESPONSE",
            MessageKind::ConfirmPay => "CONFIRMPAY",
            MessageKind::Settle => "SETTLE",
            MessageKind::SettleRecord => "SETTLERECORD",
            MessageKind::ConfirmSettle => "CONFIRMSETTLE",
            MessageKind::Redeem => "REDEEM",
            MessageKind::ConfirmRedeem => "CONFIRMREDEEM",
            MessageKind::InvalidRedeem => "INVALIDREDEEM",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("message truncated")]
    Truncated,
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("invalid option flag {0}")]
    BadFlag(u8),
}

pub const PAY_LEN: usize = 1 + TX_LEN;
pub const CONTACT_LEN: usize = 1 + TX_LEN + NONCE_LEN;
pub const SIG_RESPONSE_LEN: usize = 1 + 32 + NONCE_LEN + RING_SIGNATURE_LEN;
pub const CONFIRM_PAY_LEN: usize = 1 + 32;

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn tx(&mut self, tx: &Transaction) {
        self.bytes(&tx.encode());
    }
    fn funds(&mut self, funds: &[FundId]) {
        self.u32(funds.len());
        for f in funds {
            self.bytes(f.0.as_bytes());
        }
    }
    fn summary(&mut self, s: &FundSummary) {
        self.bytes(s.id.0.as_bytes());
        self.bytes(s.owner.0.as_bytes());
        self.u64(s.balance.0);
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.0.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, WireError> {
        Ok(u32::from_be_bytes(self.array()?) as usize)
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.array()?))
    }
    fn digest(&mut self) -> Result<Digest, WireError> {
        Ok(Digest(self.array()?))
    }
    fn tx(&mut self) -> Result<Transaction, WireError> {
        Ok(Transaction::decode(&self.array()?))
    }
    fn sig(&mut self) -> Result<RingSignature, WireError> {
        Ok(RingSignature::from_bytes(self.array()?))
    }
    /// Length prefix, rejected when it cannot fit in the remaining input.
    fn len(&mut self, min_item: usize) -> Result<usize, WireError> {
        let n = self.u32()?;
        if n.saturating_mul(min_item) > self.0.len() {
            return Err(WireError::Truncated);
        }
        Ok(n)
    }
    fn funds(&mut self) -> Result<Vec<FundId>, WireError> {
        let n = self.len(32)?;
        (0..n).map(|_| Ok(FundId(self.digest()?))).collect()
    }
    fn summary(&mut self) -> Result<FundSummary, WireError> {
        Ok(FundSummary {
            id: FundId(self.digest()?),
            owner: PublicKey(self.digest()?),
            balance: Amount(self.u64()?),
        })
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Pay { .. } => MessageKind::Pay,
            Message::Contact { .. } => MessageKind::Contact,
            Message::SigResponse { .. } => MessageKind::SigResponse,
            Message::ConfirmPay { .. } => MessageKind::ConfirmPay,
            Message::Settle { .. } => MessageKind::Settle,
            Message::SettleRecord { .. } => MessageKind::SettleRecord,
            Message::ConfirmSettle { .. } => MessageKind::ConfirmSettle,
            Message::Redeem { .. } => MessageKind::Redeem,
            Message::ConfirmRedeem { .. } => MessageKind::ConfirmRedeem,
            Message::InvalidRedeem => MessageKind::InvalidRedeem,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(64));
        w.u8(self.kind().tag());
        match self {
            Message::Pay { tx } => w.tx(tx),
            Message::Contact { tx, nonce } => {
                w.tx(tx);
                w.bytes(nonce);
            }
            Message::SigResponse { txid, nonce, sig } => {
                w.bytes(txid.0.as_bytes());
                w.bytes(nonce);
                w.bytes(&sig.to_bytes());
            }
            Message::ConfirmPay { txid } => w.bytes(txid.0.as_bytes()),
            Message::Settle { funds } => w.funds(funds),
            Message::SettleRecord { funds, records } => {
                w.funds(funds);
                w.u32(records.len());
                for r in records {
                    w.tx(&r.tx);
                    w.bytes(&r.sig.to_bytes());
                    w.bytes(&r.nonce);
                }
            }
            Message::ConfirmSettle { funds, fund } => {
                w.funds(funds);
                match fund {
                    Some(s) => {
                        w.u8(1);
                        w.summary(s);
                    }
                    None => w.u8(0),
                }
            }
            Message::Redeem { items } => {
                w.u32(items.len());
                for (tx, proof) in items {
                    w.tx(tx);
                    w.bytes(&proof.nonce);
                    w.u32(proof.signatures.len());
                    for s in &proof.signatures {
                        w.bytes(&s.to_bytes());
                    }
                }
            }
            Message::ConfirmRedeem { fund } => w.summary(fund),
            Message::InvalidRedeem => {}
        }
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
        let mut r = Reader(bytes);
        let tag = r.u8()?;
        let kind = MessageKind::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or(WireError::UnknownTag(tag))?;
        let msg = match kind {
            MessageKind::Pay => Message::Pay { tx: r.tx()? },
            MessageKind::Contact => Message::Contact {
                tx: r.tx()?,
                nonce: r.array()?,
            },
            MessageKind::SigResponse => Message::SigResponse {
                txid: TxId(r.digest()?),
                nonce: r.array()?,
                sig: r.sig()?,
            },
            MessageKind::ConfirmPay => Message::ConfirmPay {
                txid: TxId(r.digest()?),
            },
            MessageKind::Settle => Message::Settle { funds: r.funds()? },
            MessageKind::SettleRecord => {
                let funds = r.funds()?;
                let n = r.len(TX_LEN + RING_SIGNATURE_LEN + NONCE_LEN)?;
                let records = (0..n)
                    .map(|_| {
                        Ok(Record {
                            tx: r.tx()?,
                            sig: r.sig()?,
                            nonce: r.array()?,
                        })
                    })
                    .collect::<Result<_, WireError>>()?;
                Message::SettleRecord { funds, records }
            }
            MessageKind::ConfirmSettle => {
                let funds = r.funds()?;
                let fund = match r.u8()? {
                    0 => None,
                    1 => Some(r.summary()?),
                    other => return Err(WireError::BadFlag(other)),
                };
                Message::ConfirmSettle { funds, fund }
            }
            MessageKind::Redeem => {
                let n = r.len(TX_LEN + NONCE_LEN + 4)?;
                let mut items = Vec::with_capacity(n);
                for _ in 0..n {
                    let tx = r.tx()?;
                    let nonce = r.array()?;
                    let k = r.len(RING_SIGNATURE_LEN)?;
                    let signatures = (0..k).map(|_| r.sig()).collect::<Result<_, _>>()?;
                    items.push((tx, ValidationProof { signatures, nonce }));
                }
                Message::Redeem { items }
            }
            MessageKind::ConfirmRedeem => Message::ConfirmRedeem { fund: r.summary()? },
            MessageKind::InvalidRedeem => Message::InvalidRedeem,
        };
        if !r.0.is_empty() {
            return Err(WireError::Trailing(r.0.len()));
        }
        Ok(msg)
    }

    /// Encoded size in bytes, without allocating.
    pub fn size(&self) -> usize {
        let funds = |f: &[FundId]| 4 + 32 * f.len();
        1 + match self {
            Message::Pay { .. } => TX_LEN,
            Message::Contact { .. } => TX_LEN + NONCE_LEN,
            Message::SigResponse { .. } => 32 + NONCE_LEN + RING_SIGNATURE_LEN,
            Message::ConfirmPay { .. } => 32,
            Message::Settle { funds: f } => funds(f),
            Message::SettleRecord { funds: f, records } => {
                funds(f) + 4 + records.len() * (TX_LEN + RING_SIGNATURE_LEN + NONCE_LEN)
            }
            Message::ConfirmSettle { funds: f, fund } => funds(f) + 1 + if fund.is_some() { 72 } else { 0 },
            Message::Redeem { items } => {
                4 + items
                    .iter()
                    .map(|(_, p)| TX_LEN + NONCE_LEN + 4 + RING_SIGNATURE_LEN * p.signatures.len())
                    .sum::<usize>()
            }
            Message::ConfirmRedeem { .. } => 72,
            Message::InvalidRedeem => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rvrf::{keygen, MessageSignature, ModelRvrf};

    fn sample_tx() -> Transaction {
        let p = ModelRvrf::new(100, b"w");
        Transaction::new_signed(&p, FundId::genesis("F"), &keygen(b"b").secret, keygen(b"s").public, 7)
    }

    fn samples() -> Vec<Message> {
        let tx = sample_tx();
        let summary = FundSummary {
            id: FundId::genesis("G"),
            owner: keygen(b"b").public,
            balance: Amount(62_500_000),
        };
        let sig = RingSignature::from_bytes([9; 40]);
        vec![
            Message::Pay { tx },
            Message::Contact { tx, nonce: [1; 32] },
            Message::SigResponse { txid: tx.id(), nonce: [2; 32], sig },
            Message::ConfirmPay { txid: tx.id() },
            Message::Settle { funds: vec![FundId::genesis("F"), FundId::genesis("G")] },
            Message::SettleRecord {
                funds: vec![FundId::genesis("F")],
                records: vec![Record { tx, sig, nonce: [3; 32] }],
            },
            Message::ConfirmSettle { funds: vec![FundId::genesis("F")], fund: Some(summary) },
            Message::ConfirmSettle { funds: vec![FundId::genesis("F")], fund: None },
            Message::Redeem {
                items: vec![(tx, ValidationProof { signatures: vec![sig, sig], nonce: [4; 32] })],
            },
            Message::ConfirmRedeem { fund: summary },
            Message::InvalidRedeem,
        ]
    }

    #[test]
    fn round_trip_and_sizes() {
        for m in samples() {
            let bytes = m.encode();
            assert_eq!(bytes.len(), m.size(), "{:?}", m.kind());
            assert_eq!(bytes[0], m.kind().tag());
            assert_eq!(Message::decode(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn fixed_lengths() {
        let s = samples();
        assert_eq!(s[0].size(), 137);
        assert_eq!(s[1].size(), 169);
        assert_eq!(s[2].size(), 105);
        assert_eq!(s[3].size(), 33);
        assert_eq!((PAY_LEN, CONTACT_LEN, SIG_RESPONSE_LEN, CONFIRM_PAY_LEN), (137, 169, 105, 33));
        assert_eq!(Message::InvalidRedeem.encode(), vec![10]);
    }

    #[test]
    fn golden_confirm_redeem() {
        let fund = FundSummary {
            id: FundId(Digest([0xAA; 32])),
            owner: PublicKey(Digest([0xBB; 32])),
            balance: Amount(0x0102),
        };
        let mut expected = vec![9u8];
        expected.extend([0xAA; 32]);
        expected.extend([0xBB; 32]);
        expected.extend([0, 0, 0, 0, 0, 0, 1, 2]);
        assert_eq!(Message::ConfirmRedeem { fund }.encode(), expected);
    }

    #[test]
    fn golden_tx_layout() {
        let tx = Transaction {
            fund: FundId(Digest([1; 32])),
            buyer: PublicKey(Digest([2; 32])),
            seller: PublicKey(Digest([3; 32])),
            serial: 5,
            buyer_sig: MessageSignature(Digest([4; 32])),
        };
        let b = Message::Pay { tx }.encode();
        assert_eq!(b[0], 1);
        assert!(b[1..33].iter().all(|&x| x == 1));
        assert!(b[65..97].iter().all(|&x| x == 3));
        assert_eq!(&b[97..105], &[0, 0, 0, 0, 0, 0, 0, 5]);
        assert!(b[105..].iter().all(|&x| x == 4));
    }

    #[test]
    fn malformed_inputs() {
        assert_eq!(Message::decode(&[]), Err(WireError::Truncated));
        assert_eq!(Message::decode(&[42]), Err(WireError::UnknownTag(42)));
        assert_eq!(Message::decode(&[10, 0]), Err(WireError::Trailing(1)));
        assert_eq!(Message::decode(&[5, 0xFF, 0xFF, 0xFF, 0xFF]), Err(WireError::Truncated));
        let mut cs = samples()[6].encode();
        cs[1 + 4 + 32] = 7;
        assert_eq!(Message::decode(&cs), Err(WireError::BadFlag(7)));
    }

    #[test]
    fn signed_tx_verifies_and_tampering_breaks_it() {
        let p = ModelRvrf::new(100, b"w");
        let tx = sample_tx();
        assert!(tx.signature_valid(&p));
        let mut t2 = tx;
        t2.serial += 1;
        assert!(!t2.signature_valid(&p));
        assert_ne!(tx.id(), t2.id());
    }
}
