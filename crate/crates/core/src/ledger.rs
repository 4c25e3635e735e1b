//! Sequential specification of fractional spending, used as the correctness
//! oracle for simulated traces.
//!
//! The pay guard is strict (`Σ payments < s2` before incrementing), so a fund
//! never records more than `s2` payments. Settled funds leave the live table
//! and move to an archive that only redeem may consult.

use crate::hash::hash_concat;
use crate::rvrf::PublicKey;
use crate::types::{Amount, FundId};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub type ClientId = PublicKey;
pub type Ownership = BTreeMap<FundId, BTreeSet<ClientId>>;

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct FundEntry {
    pub balance: Amount,
    pub payments: BTreeMap<ClientId, u64>,
    /// Payments per client already merged into a redeemed fund.
    pub redeemed: BTreeMap<ClientId, u64>,
}

impl FundEntry {
    pub fn new(balance: Amount) -> Self {
        FundEntry {
            balance,
            ..FundEntry::default()
        }
    }

    pub fn total_payments(&self) -> u64 {
        self.payments.values().sum()
    }

    fn unredeemed(&self, p: &ClientId) -> u64 {
        self.payments.get(p).copied().unwrap_or(0) - self.redeemed.get(p).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SpecOp {
    Pay { fund: FundId, seller: ClientId },
    Settle { funds: BTreeSet<FundId> },
    Redeem { funds: BTreeSet<FundId> },
    Read { fund: FundId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Response {
    Paid(bool),
    Created { id: FundId, balance: Amount },
    Read { balance: Amount, payments: BTreeMap<ClientId, u64> },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SpecViolation {
    #[error("not-owner: caller does not own {0:?}")]
    NotOwner(FundId),
    #[error("no-payment-to-redeem: caller has no unredeemed payment in {0:?}")]
    NoPaymentToRedeem(FundId),
    #[error("unknown fund {0:?}")]
    UnknownFund(FundId),
    #[error("fund {0:?} is already settled")]
    Settled(FundId),
    #[error("empty fund set")]
    EmptySet,
}

/// Result of one transition: the successor state, the response, and the
/// fresh fund with its owner when one was created.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub state: SpecState,
    pub response: Response,
    pub created: Option<(FundId, ClientId)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SpecState {
    pub table: BTreeMap<FundId, FundEntry>,
    pub archive: BTreeMap<FundId, FundEntry>,
    fresh_counter: u64,
}

fn owns(ownership: &Ownership, fund: &FundId, caller: &ClientId) -> bool {
    ownership.get(fund).is_some_and(|o| o.contains(caller))
}

impl SpecState {
    pub fn new(initial: impl IntoIterator<Item = (FundId, Amount)>) -> Self {
        SpecState {
            table: initial
                .into_iter()
                .map(|(id, b)| (id, FundEntry::new(b)))
                .collect(),
            ..SpecState::default()
        }
    }

    fn fresh_id(&mut self, creator: &ClientId) -> FundId {
        self.fresh_counter += 1;
        FundId(hash_concat(&[
            b"fresh",
            creator.0.as_bytes(),
            &self.fresh_counter.to_be_bytes(),
        ]))
    }

    fn live(&self, id: &FundId) -> Result<&FundEntry, SpecViolation> {
        match self.table.get(id) {
            Some(e) => Ok(e),
            None if self.archive.contains_key(id) => Err(SpecViolation::Settled(*id)),
            None => Err(SpecViolation::UnknownFund(*id)),
        }
    }

    /// Pure transition function.
    pub fn apply(
        &self,
        caller: &ClientId,
        op: &SpecOp,
        ownership: &Ownership,
        s2: usize,
    ) -> Result<Transition, SpecViolation> {
        let mut next = self.clone();
        match op {
            SpecOp::Pay { fund, seller } => {
                self.live(fund)?;
                if !owns(ownership, fund, caller) {
                    return Err(SpecViolation::NotOwner(*fund));
                }
                let entry = next.table.get_mut(fund).expect("checked live");
                if entry.total_payments() < s2 as u64 {
                    *entry.payments.entry(*seller).or_insert(0) += 1;
                    Ok(Transition {
                        state: next,
                        response: Response::Paid(true),
                        created: None,
                    })
                } else {
                    Ok(Transition {
                        state: self.clone(),
                        response: Response::Paid(false),
                        created: None,
                    })
                }
            }
            SpecOp::Settle { funds } => {
                if funds.is_empty() {
                    return Err(SpecViolation::EmptySet);
                }
                let mut balance = Amount::ZERO;
                for id in funds {
                    let e = self.live(id)?;
                    if !owns(ownership, id, caller) {
                        return Err(SpecViolation::NotOwner(*id));
                    }
                    balance = balance + (e.balance - e.balance.fraction(s2).times(e.total_payments()));
                }
                for id in funds {
                    let e = next.table.remove(id).expect("checked live");
                    next.archive.insert(*id, e);
                }
                let id = next.fresh_id(caller);
                next.table.insert(id, FundEntry::new(balance));
                Ok(Transition {
                    state: next,
                    response: Response::Created { id, balance },
                    created: Some((id, *caller)),
                })
            }
            SpecOp::Redeem { funds } => {
                if funds.is_empty() {
                    return Err(SpecViolation::EmptySet);
                }
                let mut balance = Amount::ZERO;
                for id in funds {
                    let e = self
                        .table
                        .get(id)
                        .or_else(|| self.archive.get(id))
                        .ok_or(SpecViolation::UnknownFund(*id))?;
                    let k = e.unredeemed(caller);
                    if k == 0 {
                        return Err(SpecViolation::NoPaymentToRedeem(*id));
                    }
                    balance = balance + e.balance.fraction(s2).times(k);
                }
                for id in funds {
                    let e = match next.table.get_mut(id) {
                        Some(e) => e,
                        None => next.archive.get_mut(id).expect("checked present"),
                    };
                    let paid = e.payments.get(caller).copied().unwrap_or(0);
                    e.redeemed.insert(*caller, paid);
                }
                let id = next.fresh_id(caller);
                next.table.insert(id, FundEntry::new(balance));
                Ok(Transition {
                    state: next,
                    response: Response::Created { id, balance },
                    created: Some((id, *caller)),
                })
            }
            SpecOp::Read { fund } => {
                let e = self
                    .table
                    .get(fund)
                    .or_else(|| self.archive.get(fund))
                    .ok_or(SpecViolation::UnknownFund(*fund))?;
                let payments = if owns(ownership, fund, caller) {
                    e.payments.clone()
                } else {
                    e.payments
                        .iter()
                        .filter(|(p, _)| *p == caller)
                        .map(|(p, c)| (*p, *c))
                        .collect()
                };
                Ok(Transition {
                    state: next,
                    response: Response::Read {
                        balance: e.balance,
                        payments,
                    },
                    created: None,
                })
            }
        }
    }
}

/// Oracle with ownership bookkeeping for created funds.
#[derive(Clone, Debug)]
pub struct Ledger {
    pub state: SpecState,
    pub ownership: Ownership,
    pub s2: usize,
}

impl Ledger {
    pub fn new(state: SpecState, ownership: Ownership, s2: usize) -> Self {
        Ledger {
            state,
            ownership,
            s2,
        }
    }

    pub fn apply(&mut self, caller: &ClientId, op: &SpecOp) -> Result<Response, SpecViolation> {
        let t = self.state.apply(caller, op, &self.ownership, self.s2)?;
        self.state = t.state;
        if let Some((id, owner)) = t.created {
            self.ownership.insert(id, BTreeSet::from([owner]));
        }
        Ok(t.response)
    }

    /// Register an externally identified fund.
    pub fn adopt(&mut self, id: FundId, owner: ClientId, balance: Amount) {
        self.state.table.insert(id, FundEntry::new(balance));
        self.ownership.insert(id, BTreeSet::from([owner]));
    }
}

/// One observed protocol outcome.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    /// A transaction for which some seller holds a verifying proof.
    AcceptedPay {
        fund: FundId,
        buyer: ClientId,
        seller: ClientId,
    },
    /// `None` result means the buyer received the empty confirmation.
    Settle {
        caller: ClientId,
        funds: BTreeSet<FundId>,
        result: Option<(FundId, Amount)>,
    },
    Redeem {
        caller: ClientId,
        funds: BTreeSet<FundId>,
        result: (FundId, Amount),
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Clause {
    NoDoubleSpending,
    PayAuthorization,
    SettleBound,
    RedeemBound,
    Conservation,
}

impl Clause {
    pub fn name(&self) -> &'static str {
        match self {
            Clause::NoDoubleSpending => "no-double-spending",
            Clause::PayAuthorization => "pay-authorization",
            Clause::SettleBound => "settle-bound",
            Clause::RedeemBound => "redeem-bound",
            Clause::Conservation => "conservation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail { clause: Clause, detail: String },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("malformed trace at event {index}: {reason}")]
pub struct MalformedTrace {
    pub index: usize,
    pub reason: String,
}

/// Replay `trace` in order against the oracle.
///
/// Observed created funds are adopted with their observed balance so later
/// events may spend them. Conservation is checked per source fund: settle
/// residuals plus redeemed fractions never exceed the source balance.
pub fn conformance_check(
    trace: &[TraceEvent],
    initial: &SpecState,
    ownership: &Ownership,
    s2: usize,
) -> Result<Verdict, MalformedTrace> {
    let mut ledger = Ledger::new(initial.clone(), ownership.clone(), s2);
    let mut drawn: BTreeMap<FundId, Amount> = BTreeMap::new();
    let fail = |clause, detail: String| Ok(Verdict::Fail { clause, detail });
    let malformed = |index, e: SpecViolation| MalformedTrace {
        index,
        reason: e.to_string(),
    };

    for (i, ev) in trace.iter().enumerate() {
        match ev {
            TraceEvent::AcceptedPay {
                fund,
                buyer,
                seller,
            } => {
                let op = SpecOp::Pay {
                    fund: *fund,
                    seller: *seller,
                };
                match ledger.apply(buyer, &op) {
                    Ok(Response::Paid(true)) => {}
                    Ok(_) => {
                        return fail(
                            Clause::NoDoubleSpending,
                            format!("event {i}: more than s2 = {s2} accepted payments on {fund:?}"),
                        )
                    }
                    Err(SpecViolation::NotOwner(f)) => {
                        return fail(
                            Clause::PayAuthorization,
                            format!("event {i}: accepted payment by a non-owner of {f:?}"),
                        )
                    }
                    Err(SpecViolation::Settled(f)) => {
                        return fail(
                            Clause::NoDoubleSpending,
                            format!("event {i}: accepted payment on settled fund {f:?}"),
                        )
                    }
                    Err(e) => return Err(malformed(i, e)),
                }
            }
            TraceEvent::Settle {
                caller,
                funds,
                result,
            } => {
                let sources: Vec<(FundId, FundEntry)> = funds
                    .iter()
                    .map(|id| ledger.state.live(id).map(|e| (*id, e.clone())))
                    .collect::<Result<_, _>>()
                    .map_err(|e| malformed(i, e))?;
                let oracle = match ledger.apply(caller, &SpecOp::Settle { funds: funds.clone() }) {
                    Ok(Response::Created { balance, .. }) => balance,
                    Ok(_) => unreachable!("settle creates a fund"),
                    Err(e) => return Err(malformed(i, e)),
                };
                let observed = result.map(|(_, b)| b).unwrap_or(Amount::ZERO);
                if observed > oracle {
                    return fail(
                        Clause::SettleBound,
                        format!("event {i}: settled balance {observed} exceeds unspent {oracle}"),
                    );
                }
                // Residual is attributed to sources in order of their own residual.
                let mut remaining = observed;
                for (id, e) in &sources {
                    let unspent = e.balance - e.balance.fraction(s2).times(e.total_payments());
                    let take = remaining.min(unspent);
                    *drawn.entry(*id).or_default() = drawn.get(id).copied().unwrap_or_default() + take;
                    remaining = remaining - take;
                }
                if let Some((id, b)) = result {
                    ledger.adopt(*id, *caller, *b);
                }
            }
            TraceEvent::Redeem {
                caller,
                funds,
                result,
            } => {
                let mut shares = Vec::new();
                for id in funds {
                    let e = ledger
                        .state
                        .table
                        .get(id)
                        .or_else(|| ledger.state.archive.get(id))
                        .ok_or_else(|| malformed(i, SpecViolation::UnknownFund(*id)))?;
                    shares.push((*id, e.balance.fraction(s2).times(e.unredeemed(caller))));
                }
                let oracle = match ledger.apply(caller, &SpecOp::Redeem { funds: funds.clone() }) {
                    Ok(Response::Created { balance, .. }) => balance,
                    Ok(_) => unreachable!("redeem creates a fund"),
                    Err(SpecViolation::NoPaymentToRedeem(f)) => {
                        return fail(
                            Clause::RedeemBound,
                            format!("event {i}: redeem credited {f:?} without a recorded payment"),
                        )
                    }
                    Err(e) => return Err(malformed(i, e)),
                };
                let observed = result.1;
                if observed > oracle {
                    return fail(
                        Clause::RedeemBound,
                        format!("event {i}: redeemed balance {observed} exceeds received {oracle}"),
                    );
                }
                for (id, share) in shares {
                    *drawn.entry(id).or_default() = drawn.get(&id).copied().unwrap_or_default() + share;
                }
                ledger.adopt(result.0, *caller, observed);
            }
        }
    }

    for (id, total) in &drawn {
        let source = ledger
            .state
            .table
            .get(id)
            .or_else(|| ledger.state.archive.get(id))
            .map(|e| e.balance)
            .unwrap_or_default();
        if *total > source {
            return fail(
                Clause::Conservation,
                format!("fund {id:?}: {total} drawn from a balance of {source}"),
            );
        }
    }
    Ok(Verdict::Pass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rvrf::keygen;

    fn client(name: &str) -> ClientId {
        keygen(name.as_bytes()).public
    }

    fn single_fund(balance: u64) -> (FundId, Ledger) {
        let f = FundId::genesis("F");
        let state = SpecState::new([(f, Amount::from_units(balance))]);
        let ownership = Ownership::from([(f, BTreeSet::from([client("buyer")]))]);
        (f, Ledger::new(state, ownership, 10))
    }

    fn pay(l: &mut Ledger, f: FundId, seller: &str) -> Response {
        l.apply(&client("buyer"), &SpecOp::Pay { fund: f, seller: client(seller) })
            .unwrap()
    }

    #[test]
    fn settle_subtracts_spent_fractions() {
        // 100 − (100 / 10) · 3 = 70
        let (f, mut l) = single_fund(100);
        for s in ["a", "b", "c"] {
            assert_eq!(pay(&mut l, f, s), Response::Paid(true));
        }
        let r = l
            .apply(&client("buyer"), &SpecOp::Settle { funds: BTreeSet::from([f]) })
            .unwrap();
        assert!(matches!(r, Response::Created { balance, .. } if balance == Amount::from_units(70)));
        assert_eq!(
            l.apply(&client("buyer"), &SpecOp::Pay { fund: f, seller: client("a") }),
            Err(SpecViolation::Settled(f))
        );
    }

    #[test]
    fn redeem_merges_received_fractions() {
        // 2 · (100 / 10) = 20
        let (f, mut l) = single_fund(100);
        pay(&mut l, f, "s");
        pay(&mut l, f, "s");
        let r = l
            .apply(&client("s"), &SpecOp::Redeem { funds: BTreeSet::from([f]) })
            .unwrap();
        assert!(matches!(r, Response::Created { balance, .. } if balance == Amount::from_units(20)));
        assert_eq!(
            l.apply(&client("s"), &SpecOp::Redeem { funds: BTreeSet::from([f]) }),
            Err(SpecViolation::NoPaymentToRedeem(f))
        );
    }

    #[test]
    fn redeem_does_not_refund_settle() {
        let (f, mut l) = single_fund(100);
        pay(&mut l, f, "s");
        l.apply(&client("s"), &SpecOp::Redeem { funds: BTreeSet::from([f]) })
            .unwrap();
        let r = l
            .apply(&client("buyer"), &SpecOp::Settle { funds: BTreeSet::from([f]) })
            .unwrap();
        assert!(matches!(r, Response::Created { balance, .. } if balance == Amount::from_units(90)));
    }

    #[test]
    fn pay_cap_is_strict() {
        let (f, mut l) = single_fund(100);
        for i in 0..10 {
            assert_eq!(pay(&mut l, f, &format!("s{i}")), Response::Paid(true));
        }
        let before = l.state.clone();
        assert_eq!(pay(&mut l, f, "extra"), Response::Paid(false));
        assert_eq!(l.state, before);
    }

    #[test]
    fn read_projects_payments() {
        let (f, mut l) = single_fund(100);
        pay(&mut l, f, "a");
        pay(&mut l, f, "b");
        let before = l.state.clone();
        let owner_view = l.apply(&client("buyer"), &SpecOp::Read { fund: f }).unwrap();
        let seller_view = l.apply(&client("a"), &SpecOp::Read { fund: f }).unwrap();
        assert_eq!(l.state, before);
        match (owner_view, seller_view) {
            (Response::Read { payments: o, .. }, Response::Read { payments: s, balance }) => {
                assert_eq!(o.len(), 2);
                assert_eq!(s, BTreeMap::from([(client("a"), 1)]));
                assert_eq!(balance, Amount::from_units(100));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn precondition_violations() {
        let (f, l) = single_fund(100);
        let g = FundId::genesis("G");
        let stranger = client("stranger");
        let cases = [
            (SpecOp::Pay { fund: f, seller: client("a") }, SpecViolation::NotOwner(f)),
            (SpecOp::Pay { fund: g, seller: client("a") }, SpecViolation::UnknownFund(g)),
            (SpecOp::Settle { funds: BTreeSet::new() }, SpecViolation::EmptySet),
            (SpecOp::Settle { funds: BTreeSet::from([f]) }, SpecViolation::NotOwner(f)),
            (SpecOp::Redeem { funds: BTreeSet::from([f]) }, SpecViolation::NoPaymentToRedeem(f)),
        ];
        for (op, err) in cases {
            assert_eq!(l.state.apply(&stranger, &op, &l.ownership, 10), Err(err));
        }
    }

    fn trace_pays(f: FundId, count: usize) -> Vec<TraceEvent> {
        (0..count)
            .map(|i| TraceEvent::AcceptedPay {
                fund: f,
                buyer: client("buyer"),
                seller: client(&format!("s{i}")),
            })
            .collect()
    }

    #[test]
    fn conformance_flags_extra_payment() {
        let (f, l) = single_fund(100);
        let ok = conformance_check(&trace_pays(f, 10), &l.state, &l.ownership, 10).unwrap();
        assert!(ok.passed());
        let bad = conformance_check(&trace_pays(f, 11), &l.state, &l.ownership, 10).unwrap();
        assert!(matches!(bad, Verdict::Fail { clause: Clause::NoDoubleSpending, .. }));
    }

    #[test]
    fn conformance_flags_inflated_settle_and_redeem() {
        let (f, l) = single_fund(100);
        let mut trace = trace_pays(f, 2);
        trace.push(TraceEvent::Settle {
            caller: client("buyer"),
            funds: BTreeSet::from([f]),
            result: Some((FundId::genesis("F2"), Amount::from_units(81))),
        });
        let v = conformance_check(&trace, &l.state, &l.ownership, 10).unwrap();
        assert!(matches!(v, Verdict::Fail { clause: Clause::SettleBound, .. }));

        let mut trace = trace_pays(f, 2);
        trace.push(TraceEvent::Redeem {
            caller: client("s0"),
            funds: BTreeSet::from([f]),
            result: (FundId::genesis("R"), Amount::from_units(11)),
        });
        let v = conformance_check(&trace, &l.state, &l.ownership, 10).unwrap();
        assert!(matches!(v, Verdict::Fail { clause: Clause::RedeemBound, .. }));
    }

    #[test]
    fn conformance_accepts_exact_run() {
        let (f, l) = single_fund(100);
        let mut trace = trace_pays(f, 3);
        let f2 = FundId::genesis("F2");
        trace.push(TraceEvent::Settle {
            caller: client("buyer"),
            funds: BTreeSet::from([f]),
            result: Some((f2, Amount::from_units(70))),
        });
        for i in 0..3 {
            trace.push(TraceEvent::Redeem {
                caller: client(&format!("s{i}")),
                funds: BTreeSet::from([f]),
                result: (FundId::genesis(&format!("R{i}")), Amount::from_units(10)),
            });
        }
        trace.push(TraceEvent::AcceptedPay {
            fund: f2,
            buyer: client("buyer"),
            seller: client("s9"),
        });
        assert_eq!(conformance_check(&trace, &l.state, &l.ownership, 10), Ok(Verdict::Pass));
    }

    #[test]
    fn unknown_fund_is_malformed() {
        let (_, l) = single_fund(100);
        let trace = trace_pays(FundId::genesis("nope"), 1);
        assert!(conformance_check(&trace, &l.state, &l.ownership, 10).is_err());
    }
}
