//! Buyer, seller and validator state machines.
//!
//! Handlers are run-to-completion: each consumes one message and appends the
//! messages it emits to an [`Outbox`].

pub mod client;
pub mod types;
pub mod validator;
pub mod wire;

pub use client::{BuyerOutcome, ClientState, PreconditionError, RedeemOutcome, SellerOutcome, SettleOutcome};
pub use types::{redeem_fund_id, settle_fund_id, Directory, FundSummary, NodeId, Record, Transaction, TxId};
pub use validator::ValidatorState;
pub use wire::{Message, MessageKind};

use crate::quorum::{SecretQuorum, ValidationProof};
use crate::rvrf::ModelRvrf;
use crate::types::FundId;

/// Shared read-only context of a handler.
#[derive(Clone, Copy)]
pub struct Ctx<'a> {
    pub sq: &'a SecretQuorum<ModelRvrf>,
    pub dir: &'a Directory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Direct,
    /// Delivered through one relay that hides the origin.
    Gossip,
}

#[derive(Clone, Debug)]
pub struct Outgoing {
    pub dst: NodeId,
    pub msg: Message,
    pub route: Route,
}

/// Protocol milestones reported to the simulator.
#[derive(Clone, Debug)]
pub enum NodeEvent {
    Signed {
        validator: NodeId,
        txid: TxId,
    },
    ProofComplete {
        seller: NodeId,
        tx: Transaction,
        proof: ValidationProof,
    },
    PayConfirmed {
        buyer: NodeId,
        txid: TxId,
    },
    SettleFinalized {
        validator: NodeId,
        funds: Vec<FundId>,
        result: Option<FundSummary>,
        counted: Vec<TxId>,
    },
    SettleCompleted {
        buyer: NodeId,
        funds: Vec<FundId>,
        result: Option<FundSummary>,
    },
    RedeemCompleted {
        seller: NodeId,
        funds: Vec<FundId>,
        result: FundSummary,
    },
}

#[derive(Default, Debug)]
pub struct Outbox {
    pub sends: Vec<Outgoing>,
    pub events: Vec<NodeEvent>,
}

impl Outbox {
    pub fn send(&mut self, dst: NodeId, msg: Message) {
        self.sends.push(Outgoing {
            dst,
            msg,
            route: Route::Direct,
        });
    }

    pub fn gossip(&mut self, dst: NodeId, msg: Message) {
        self.sends.push(Outgoing {
            dst,
            msg,
            route: Route::Gossip,
        });
    }

    pub fn emit(&mut self, ev: NodeEvent) {
        self.events.push(ev);
    }
}

/// Sorted, deduplicated fund list.
pub fn canonical_funds(funds: &[FundId]) -> Vec<FundId> {
    let mut v = funds.to_vec();
    v.sort();
    v.dedup();
    v
}
