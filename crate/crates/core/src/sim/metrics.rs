use crate::protocol::{BuyerOutcome, NodeId, PreconditionError, RedeemOutcome, SellerOutcome, SettleOutcome, TxId};
use crate::types::FundId;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum OpKind {
    Pay,
    Settle,
    Redeem,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Pay => "pay",
            OpKind::Settle => "settle",
            OpKind::Redeem => "redeem",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpHandle {
    Pay { txid: TxId, seller: NodeId },
    Settle { funds: Vec<FundId> },
    Redeem { index: usize },
    Rejected(PreconditionError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpOutcome {
    Pending,
    Pay {
        buyer: BuyerOutcome,
        /// `None` when the seller dropped the PAY.
        seller: Option<SellerOutcome>,
    },
    Settle(SettleOutcome),
    Redeem(RedeemOutcome),
    Precondition(String),
}

impl OpOutcome {
    pub fn label(&self) -> String {
        match self {
            OpOutcome::Pending => "pending".into(),
            OpOutcome::Pay { buyer, seller } => {
                let b = match buyer {
                    BuyerOutcome::Success => "success",
                    BuyerOutcome::PresumedSuccess => "presumed-success",
                };
                let s = match seller {
                    Some(SellerOutcome::Accepted) => "accepted",
                    Some(SellerOutcome::Error) => "error",
                    None => "dropped",
                };
                format!("{b}/{s}")
            }
            OpOutcome::Settle(SettleOutcome::Completed(Some(_))) => "completed".into(),
            OpOutcome::Settle(SettleOutcome::Completed(None)) => "completed-empty".into(),
            OpOutcome::Settle(SettleOutcome::Stall) => "stall".into(),
            OpOutcome::Redeem(RedeemOutcome::Success(_)) => "success".into(),
            OpOutcome::Redeem(RedeemOutcome::Error) => "error".into(),
            OpOutcome::Redeem(RedeemOutcome::Stall) => "stall".into(),
            OpOutcome::Precondition(e) => format!("precondition-error: {e}"),
        }
    }

    /// Settle and redeem requests must terminate successfully for correct clients.
    pub fn is_liveness_failure(&self) -> bool {
        matches!(
            self,
            OpOutcome::Pending
                | OpOutcome::Settle(SettleOutcome::Stall)
                | OpOutcome::Redeem(RedeemOutcome::Stall | RedeemOutcome::Error)
        )
    }

    pub fn seller_accepted(&self) -> bool {
        matches!(
            self,
            OpOutcome::Pay {
                seller: Some(SellerOutcome::Accepted),
                ..
            }
        )
    }
}

/// One workload operation and the traffic it caused.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub phase: usize,
    pub kind: OpKind,
    pub actor: NodeId,
    pub handle: OpHandle,
    pub messages: u64,
    pub max_depth: u32,
    /// Depth of the envelope completing the seller's proof.
    pub seller_depth: Option<u32>,
    /// Depth of the CONFIRMPAY delivery at the buyer.
    pub buyer_depth: Option<u32>,
    pub outcome: OpOutcome,
}

impl OpRecord {
    pub(super) fn new(phase: usize, kind: OpKind, actor: NodeId, handle: OpHandle) -> Self {
        OpRecord {
            phase,
            kind,
            actor,
            handle,
            messages: 0,
            max_depth: 0,
            seller_depth: None,
            buyer_depth: None,
            outcome: OpOutcome::Pending,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunSummary {
    pub steps: u64,
    /// Envelopes per message kind; every envelope is counted exactly once.
    pub messages: BTreeMap<String, u64>,
    pub ops: Vec<OpRecord>,
    pub accepted_per_fund: BTreeMap<FundId, usize>,
    pub corrupted: Vec<NodeId>,
    pub policy: String,
    pub policy_report: BTreeMap<String, String>,
}

impl RunSummary {
    pub fn total_messages(&self) -> u64 {
        self.messages.values().sum()
    }

    pub fn ops_of(&self, kind: OpKind) -> impl Iterator<Item = &OpRecord> {
        self.ops.iter().filter(move |o| o.kind == kind)
    }
}
