use super::types::{redeem_fund_id, FundSummary, NodeId, Transaction, TxId};
use super::wire::Message;
use super::{canonical_funds, Ctx, NodeEvent, Outbox};
use crate::quorum::{ValidateSession, ValidationProof};
use crate::rvrf::{KeyPair, PublicKey};
use crate::types::{Fund, FundId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PreconditionError {
    #[error("fund {0:?} is not among the caller's assets")]
    NotOwned(FundId),
    #[error("no transactions with proofs for the requested funds")]
    NothingToRedeem,
    #[error("an identical request is already pending")]
    Pending,
    #[error("empty fund set")]
    Empty,
    #[error("unknown seller key")]
    UnknownSeller,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BuyerOutcome {
    Success,
    /// No confirmation before quiescence; assumed successful.
    PresumedSuccess,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SellerOutcome {
    Accepted,
    /// Validation returned no proof.
    Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SettleOutcome {
    Completed(Option<FundSummary>),
    Stall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RedeemOutcome {
    Success(FundSummary),
    Error,
    Stall,
}

#[derive(Clone, Debug)]
struct BuyerPay {
    seller: NodeId,
    outcome: Option<BuyerOutcome>,
}

#[derive(Clone, Debug)]
struct SellerSession {
    tx: Transaction,
    buyer: NodeId,
    session: ValidateSession,
    outcome: Option<SellerOutcome>,
}

#[derive(Clone, Debug, Default)]
struct SettleWait {
    confirms: BTreeMap<NodeId, Option<FundSummary>>,
    outcome: Option<SettleOutcome>,
}

#[derive(Clone, Debug)]
struct RedeemWait {
    funds: Vec<FundId>,
    txids: Vec<TxId>,
    confirms: BTreeMap<NodeId, FundSummary>,
    invalid: BTreeSet<NodeId>,
    outcome: Option<RedeemOutcome>,
}

/// Client memory. Every key of `proofs` identifies an entry of `transactions`.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: NodeId,
    keypair: KeyPair,
    pub assets: BTreeMap<FundId, Fund>,
    pub transactions: Vec<Transaction>,
    pub proofs: BTreeMap<TxId, ValidationProof>,
    rng: ChaCha8Rng,
    serial: u64,
    pays: BTreeMap<TxId, BuyerPay>,
    sessions: BTreeMap<TxId, SellerSession>,
    settles: BTreeMap<Vec<FundId>, SettleWait>,
    redeems: Vec<RedeemWait>,
}

impl ClientState {
    pub fn new(id: NodeId, keypair: KeyPair, assets: Vec<Fund>, rng: ChaCha8Rng) -> Self {
        ClientState {
            id,
            keypair,
            assets: assets.into_iter().map(|f| (f.id, f)).collect(),
            transactions: Vec::new(),
            proofs: BTreeMap::new(),
            rng,
            serial: 0,
            pays: BTreeMap::new(),
            sessions: BTreeMap::new(),
            settles: BTreeMap::new(),
            redeems: Vec::new(),
        }
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public
    }

    fn owns(&self, fund: &FundId) -> bool {
        self.assets
            .get(fund)
            .is_some_and(|f| f.owners.contains(&self.keypair.public))
    }

    /// Sign a transaction without sending it.
    pub fn sign_tx(&mut self, fund: FundId, seller: PublicKey, ctx: &Ctx) -> Transaction {
        self.serial += 1;
        Transaction::new_signed(ctx.sq.provider(), fund, &self.keypair.secret, seller, self.serial)
    }

    pub fn start_pay(
        &mut self,
        fund: FundId,
        seller: PublicKey,
        ctx: &Ctx,
        out: &mut Outbox,
    ) -> Result<TxId, PreconditionError> {
        if !self.owns(&fund) {
            return Err(PreconditionError::NotOwned(fund));
        }
        let seller_node = ctx.dir.node_of(&seller).ok_or(PreconditionError::UnknownSeller)?;
        let tx = self.sign_tx(fund, seller, ctx);
        let txid = tx.id();
        self.pays.insert(
            txid,
            BuyerPay {
                seller: seller_node,
                outcome: None,
            },
        );
        out.send(seller_node, Message::Pay { tx });
        Ok(txid)
    }

    pub fn start_settle(
        &mut self,
        funds: &[FundId],
        ctx: &Ctx,
        out: &mut Outbox,
    ) -> Result<Vec<FundId>, PreconditionError> {
        let key = canonical_funds(funds);
        if key.is_empty() {
            return Err(PreconditionError::Empty);
        }
        if let Some(f) = key.iter().find(|f| !self.owns(f)) {
            return Err(PreconditionError::NotOwned(*f));
        }
        if self.settles.contains_key(&key) {
            return Err(PreconditionError::Pending);
        }
        self.settles.insert(key.clone(), SettleWait::default());
        for v in ctx.dir.validator_ids() {
            out.send(v, Message::Settle { funds: key.clone() });
        }
        Ok(key)
    }

    /// Returns the index of the redeem request.
    pub fn start_redeem(
        &mut self,
        funds: &[FundId],
        ctx: &Ctx,
        out: &mut Outbox,
    ) -> Result<usize, PreconditionError> {
        let key = canonical_funds(funds);
        if key.is_empty() {
            return Err(PreconditionError::Empty);
        }
        if self.redeems.iter().any(|r| r.outcome.is_none()) {
            return Err(PreconditionError::Pending);
        }
        let items: Vec<(Transaction, ValidationProof)> = self
            .transactions
            .iter()
            .filter(|tx| key.binary_search(&tx.fund).is_ok())
            .filter_map(|tx| self.proofs.get(&tx.id()).map(|p| (*tx, p.clone())))
            .collect();
        if items.is_empty() {
            return Err(PreconditionError::NothingToRedeem);
        }
        let mut txids: Vec<TxId> = items.iter().map(|(tx, _)| tx.id()).collect();
        txids.sort();
        self.redeems.push(RedeemWait {
            funds: key,
            txids,
            confirms: BTreeMap::new(),
            invalid: BTreeSet::new(),
            outcome: None,
        });
        for v in ctx.dir.validator_ids() {
            out.send(v, Message::Redeem { items: items.clone() });
        }
        Ok(self.redeems.len() - 1)
    }

    pub fn handle(&mut self, from: NodeId, msg: &Message, ctx: &Ctx, out: &mut Outbox) {
        match msg {
            Message::Pay { tx } => self.on_pay(from, tx, ctx, out),
            Message::SigResponse { txid, nonce, sig } => {
                let Some(s) = self.sessions.get_mut(txid) else {
                    return;
                };
                if s.outcome.is_some() || s.session.nonce() != nonce {
                    return;
                }
                if let Some(proof) = s.session.on_signature(*sig, ctx.sq).cloned() {
                    s.outcome = Some(SellerOutcome::Accepted);
                    let (tx, buyer) = (s.tx, s.buyer);
                    self.transactions.push(tx);
                    self.proofs.insert(*txid, proof.clone());
                    out.emit(NodeEvent::ProofComplete {
                        seller: self.id,
                        tx,
                        proof,
                    });
                    out.send(buyer, Message::ConfirmPay { txid: *txid });
                }
            }
            Message::ConfirmPay { txid } => {
                if let Some(p) = self.pays.get_mut(txid) {
                    if p.seller == from && p.outcome.is_none() {
                        p.outcome = Some(BuyerOutcome::Success);
                        out.emit(NodeEvent::PayConfirmed {
                            buyer: self.id,
                            txid: *txid,
                        });
                    }
                }
            }
            Message::ConfirmSettle { funds, fund } => {
                if ctx.dir.is_validator(from) {
                    self.on_confirm_settle(from, funds, fund, ctx, out);
                }
            }
            Message::ConfirmRedeem { fund } if ctx.dir.is_validator(from) => {
                self.on_redeem_reply(from, Some(fund), ctx, out);
            }
            Message::InvalidRedeem if ctx.dir.is_validator(from) => {
                self.on_redeem_reply(from, None, ctx, out);
            }
            _ => {}
        }
    }

    fn on_pay(&mut self, from: NodeId, tx: &Transaction, ctx: &Ctx, out: &mut Outbox) {
        if tx.seller != self.keypair.public || !tx.signature_valid(ctx.sq.provider()) {
            return;
        }
        let txid = tx.id();
        if self.sessions.contains_key(&txid) {
            return;
        }
        let nonce: [u8; 32] = self.rng.gen();
        let d = tx.encode();
        let ring = ctx.sq.candidates(&d);
        self.sessions.insert(
            txid,
            SellerSession {
                tx: *tx,
                buyer: from,
                session: ValidateSession::new(d.to_vec(), nonce),
                outcome: None,
            },
        );
        for pk in ring.members() {
            let v = ctx.dir.node_of(pk).expect("candidates are validators");
            out.send(v, Message::Contact { tx: *tx, nonce });
        }
    }

    fn on_confirm_settle(
        &mut self,
        from: NodeId,
        funds: &[FundId],
        fund: &Option<FundSummary>,
        ctx: &Ctx,
        out: &mut Outbox,
    ) {
        let key = canonical_funds(funds);
        let Some(wait) = self.settles.get_mut(&key) else {
            return;
        };
        if wait.outcome.is_some() || wait.confirms.contains_key(&from) {
            return;
        }
        wait.confirms.insert(from, *fund);
        let same = wait.confirms.values().filter(|v| *v == fund).count();
        if same < ctx.sq.config().correct_quorum() {
            return;
        }
        wait.outcome = Some(SettleOutcome::Completed(*fund));
        for f in &key {
            self.assets.remove(f);
        }
        if let Some(s) = fund {
            self.assets.insert(
                s.id,
                Fund {
                    id: s.id,
                    owners: BTreeSet::from([s.owner]),
                    balance: s.balance,
                },
            );
        }
        out.emit(NodeEvent::SettleCompleted {
            buyer: self.id,
            funds: key,
            result: *fund,
        });
    }

    fn on_redeem_reply(&mut self, from: NodeId, fund: Option<&FundSummary>, ctx: &Ctx, out: &mut Outbox) {
        let cfg = ctx.sq.config();
        let seller = self.keypair.public;
        let Some(wait) = self.redeems.iter_mut().find(|r| r.outcome.is_none()) else {
            return;
        };
        if wait.confirms.contains_key(&from) || wait.invalid.contains(&from) {
            return;
        }
        match fund {
            None => {
                wait.invalid.insert(from);
                if wait.invalid.len() > cfg.f {
                    wait.outcome = Some(RedeemOutcome::Error);
                }
            }
            Some(s) => {
                if s.id != redeem_fund_id(&seller, &wait.txids) {
                    return;
                }
                wait.confirms.insert(from, *s);
                let same = wait.confirms.values().filter(|v| *v == s).count();
                if same >= cfg.correct_quorum() {
                    wait.outcome = Some(RedeemOutcome::Success(*s));
                    let done: BTreeSet<TxId> = wait.txids.iter().copied().collect();
                    let funds = wait.funds.clone();
                    self.transactions.retain(|tx| !done.contains(&tx.id()));
                    self.proofs.retain(|id, _| !done.contains(id));
                    self.assets.insert(
                        s.id,
                        Fund {
                            id: s.id,
                            owners: BTreeSet::from([s.owner]),
                            balance: s.balance,
                        },
                    );
                    out.emit(NodeEvent::RedeemCompleted {
                        seller: self.id,
                        funds,
                        result: *s,
                    });
                }
            }
        }
    }

    /// Quiescence: unconfirmed pays are presumed successful, unfinished
    /// validations fail, and pending settles and redeems stall.
    pub fn on_quiescence(&mut self) {
        for p in self.pays.values_mut().filter(|p| p.outcome.is_none()) {
            p.outcome = Some(BuyerOutcome::PresumedSuccess);
        }
        for s in self.sessions.values_mut().filter(|s| s.outcome.is_none()) {
            s.outcome = Some(SellerOutcome::Error);
        }
        for w in self.settles.values_mut().filter(|w| w.outcome.is_none()) {
            w.outcome = Some(SettleOutcome::Stall);
        }
        for r in self.redeems.iter_mut().filter(|r| r.outcome.is_none()) {
            r.outcome = Some(RedeemOutcome::Stall);
        }
    }

    pub fn pay_outcome(&self, txid: &TxId) -> Option<BuyerOutcome> {
        self.pays.get(txid).and_then(|p| p.outcome)
    }

    /// `None` when no validation was started for `txid` (dropped PAY).
    pub fn seller_outcome(&self, txid: &TxId) -> Option<SellerOutcome> {
        self.sessions.get(txid).and_then(|s| s.outcome)
    }

    pub fn signatures_received(&self, txid: &TxId) -> usize {
        self.sessions.get(txid).map_or(0, |s| s.session.received())
    }

    pub fn settle_outcome(&self, funds: &[FundId]) -> Option<SettleOutcome> {
        self.settles.get(&canonical_funds(funds)).and_then(|w| w.outcome)
    }

    pub fn redeem_outcome(&self, index: usize) -> Option<RedeemOutcome> {
        self.redeems.get(index).and_then(|r| r.outcome)
    }
}
