use super::types::{redeem_fund_id, settle_fund_id, FundSummary, NodeId, Record, Transaction, TxId};
use super::wire::Message;
use super::{canonical_funds, Ctx, NodeEvent, Outbox};
use crate::quorum::{Nonce, ValidationProof};
use crate::rvrf::{KeyPair, PublicKey};
use crate::types::{Amount, Fund, FundId};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug, Default)]
struct SettleSession {
    requester: Option<(NodeId, PublicKey)>,
    own: Vec<Record>,
    received: BTreeMap<NodeId, Vec<Record>>,
    done: bool,
}

/// Validator memory. `signatures` keys are a subset of `seen`.
#[derive(Clone, Debug)]
pub struct ValidatorState {
    pub id: NodeId,
    keypair: KeyPair,
    pub funds: BTreeMap<FundId, Fund>,
    pub seen: BTreeSet<FundId>,
    pub settled: BTreeSet<FundId>,
    pub redeemed: BTreeSet<TxId>,
    pub signatures: BTreeMap<FundId, Record>,
    settles: BTreeMap<Vec<FundId>, SettleSession>,
}

impl ValidatorState {
    pub fn new(id: NodeId, keypair: KeyPair, genesis: &[Fund]) -> Self {
        ValidatorState {
            id,
            keypair,
            funds: genesis.iter().map(|f| (f.id, f.clone())).collect(),
            seen: BTreeSet::new(),
            settled: BTreeSet::new(),
            redeemed: BTreeSet::new(),
            signatures: BTreeMap::new(),
            settles: BTreeMap::new(),
        }
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    /// `tx.fund ∉ seen ∪ settled ∧ buyer ∈ owners`, with a valid buyer signature.
    pub fn valid(&self, tx: &Transaction, ctx: &Ctx) -> bool {
        let Some(fund) = self.funds.get(&tx.fund) else {
            return false;
        };
        !self.seen.contains(&tx.fund)
            && !self.settled.contains(&tx.fund)
            && fund.owners.contains(&tx.buyer)
            && tx.signature_valid(ctx.sq.provider())
    }

    pub fn mutate(&mut self, record: Record) {
        self.seen.insert(record.tx.fund);
        self.signatures.insert(record.tx.fund, record);
    }

    pub fn handle(&mut self, from: NodeId, msg: &Message, ctx: &Ctx, out: &mut Outbox) {
        match msg {
            Message::Contact { tx, nonce } => self.on_contact(from, tx, nonce, ctx, out),
            Message::Settle { funds } => self.on_settle(from, funds, ctx, out),
            Message::SettleRecord { funds, records } => {
                if ctx.dir.is_validator(from) && from != self.id {
                    self.on_settle_record(from, funds, records, ctx, out);
                }
            }
            Message::Redeem { items } => self.on_redeem(from, items, ctx, out),
            _ => {}
        }
    }

    fn on_contact(&mut self, from: NodeId, tx: &Transaction, nonce: &Nonce, ctx: &Ctx, out: &mut Outbox) {
        let d = tx.encode();
        if !ctx.sq.selected_by_vrf(&d, nonce, &self.keypair) || !self.valid(tx, ctx) {
            return;
        }
        let sig = ctx
            .sq
            .make_ring_signature(&d, nonce, &self.keypair)
            .expect("selected validator is a candidate");
        self.mutate(Record {
            tx: *tx,
            sig,
            nonce: *nonce,
        });
        let txid = tx.id();
        out.emit(NodeEvent::Signed {
            validator: self.id,
            txid,
        });
        out.gossip(
            from,
            Message::SigResponse {
                txid,
                nonce: *nonce,
                sig,
            },
        );
    }

    fn on_settle(&mut self, from: NodeId, funds: &[FundId], ctx: &Ctx, out: &mut Outbox) {
        let key = canonical_funds(funds);
        let buyer = ctx.dir.key_of(from);
        let acceptable = !key.is_empty()
            && key.iter().all(|f| {
                !self.settled.contains(f) && self.funds.get(f).is_some_and(|fund| fund.owners.contains(&buyer))
            })
            && self.settles.get(&key).is_none_or(|s| s.requester.is_none());
        if !acceptable {
            return;
        }
        let own: Vec<Record> = key
            .iter()
            .filter(|f| self.seen.contains(f))
            .filter_map(|f| self.signatures.get(f).copied())
            .collect();
        // Marked before gossiping so no signature is produced after the snapshot.
        self.settled.extend(key.iter().copied());
        let session = self.settles.entry(key.clone()).or_default();
        session.requester = Some((from, buyer));
        session.own = own.clone();
        for v in ctx.dir.validator_ids().filter(|v| *v != self.id) {
            out.send(
                v,
                Message::SettleRecord {
                    funds: key.clone(),
                    records: own.clone(),
                },
            );
        }
        self.try_finalize(&key, ctx, out);
    }

    fn on_settle_record(&mut self, from: NodeId, funds: &[FundId], records: &[Record], ctx: &Ctx, out: &mut Outbox) {
        let key = canonical_funds(funds);
        if key.is_empty() {
            return;
        }
        let session = self.settles.entry(key.clone()).or_default();
        if session.done || session.received.contains_key(&from) {
            return;
        }
        let relevant = records
            .iter()
            .filter(|r| key.binary_search(&r.tx.fund).is_ok())
            .copied()
            .collect();
        session.received.insert(from, relevant);
        self.try_finalize(&key, ctx, out);
    }

    fn try_finalize(&mut self, key: &[FundId], ctx: &Ctx, out: &mut Outbox) {
        let quorum = ctx.sq.config().correct_quorum();
        let Some(session) = self.settles.get_mut(key) else {
            return;
        };
        let Some((requester, buyer)) = session.requester else {
            return;
        };
        if session.done || 1 + session.received.len() < quorum {
            return;
        }
        session.done = true;

        struct Group {
            tx: Transaction,
            sigs: Vec<crate::rvrf::RingSignature>,
            votes: BTreeMap<Nonce, usize>,
        }
        let mut groups: BTreeMap<TxId, Group> = BTreeMap::new();
        for r in session.own.iter().chain(session.received.values().flatten()) {
            let g = groups.entry(r.tx.id()).or_insert_with(|| Group {
                tx: r.tx,
                sigs: Vec::new(),
                votes: BTreeMap::new(),
            });
            g.sigs.push(r.sig);
            *g.votes.entry(r.nonce).or_insert(0) += 1;
        }

        let mut balance: Amount = key.iter().map(|f| self.funds[f].balance).sum();
        let mut counted = Vec::new();
        for (txid, g) in groups {
            // Majority nonce; ties resolved toward the smallest nonce.
            let (nonce, _) = g
                .votes
                .iter()
                .fold(None::<(Nonce, usize)>, |best, (n, c)| match best {
                    Some((_, bc)) if bc >= *c => best,
                    _ => Some((*n, *c)),
                })
                .expect("group has at least one record");
            let proof = ValidationProof {
                signatures: g.sigs,
                nonce,
            };
            if ctx.sq.verify_proof(&proof, &g.tx.encode()) {
                let fraction = self.funds[&g.tx.fund].balance.fraction(ctx.sq.config().s2);
                balance = balance.checked_sub(fraction).unwrap_or(Amount::ZERO);
                counted.push(txid);
            }
        }

        let result = (balance > Amount::ZERO).then(|| FundSummary {
            id: settle_fund_id(key),
            owner: buyer,
            balance,
        });
        if let Some(s) = result {
            self.funds.insert(
                s.id,
                Fund {
                    id: s.id,
                    owners: BTreeSet::from([buyer]),
                    balance,
                },
            );
        }
        out.emit(NodeEvent::SettleFinalized {
            validator: self.id,
            funds: key.to_vec(),
            result,
            counted,
        });
        out.send(
            requester,
            Message::ConfirmSettle {
                funds: key.to_vec(),
                fund: result,
            },
        );
    }

    fn on_redeem(&mut self, from: NodeId, items: &[(Transaction, ValidationProof)], ctx: &Ctx, out: &mut Outbox) {
        let seller = ctx.dir.key_of(from);
        let s2 = ctx.sq.config().s2;
        let mut balance = Amount::ZERO;
        let mut batch = BTreeSet::new();
        let mut ok = !items.is_empty();
        for (tx, proof) in items {
            let txid = tx.id();
            let fund = self.funds.get(&tx.fund);
            let good = tx.seller == seller
                && fund.is_some()
                && !self.redeemed.contains(&txid)
                && batch.insert(txid)
                && ctx.sq.verify_proof(proof, &tx.encode());
            if !good {
                ok = false;
                break;
            }
            balance = balance + fund.expect("checked").balance.fraction(s2);
        }
        if !ok {
            out.send(from, Message::InvalidRedeem);
            return;
        }
        let txids: Vec<TxId> = batch.into_iter().collect();
        self.redeemed.extend(txids.iter().copied());
        let summary = FundSummary {
            id: redeem_fund_id(&seller, &txids),
            owner: seller,
            balance,
        };
        self.funds.insert(
            summary.id,
            Fund {
                id: summary.id,
                owners: BTreeSet::from([seller]),
                balance,
            },
        );
        out.send(from, Message::ConfirmRedeem { fund: summary });
    }
}
