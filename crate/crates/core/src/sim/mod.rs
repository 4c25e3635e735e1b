//! Deterministic discrete-event network with a pluggable adversary.
//!
//! Every step the policy chooses which in-flight envelope is delivered next.
//! Policies observe only `(src, dst, size)` of envelopes between correct
//! nodes; payloads are visible when an endpoint is corrupted. A phase ends at
//! quiescence, when nothing is in flight and the policy injects nothing more.

mod control;
mod metrics;

pub use control::{Control, CorruptError, Delivery, InjectError};
pub use metrics::{OpHandle, OpKind, OpOutcome, OpRecord, RunSummary};

use crate::ledger::{conformance_check, MalformedTrace, Ownership, SpecState, TraceEvent, Verdict};
use crate::params::SystemConfig;
use crate::protocol::{ClientState, Ctx, Directory, Message, MessageKind, NodeEvent, NodeId, Outbox, Route, TxId, ValidatorState};
use crate::quorum::SecretQuorum;
use crate::rvrf::{keygen, KeyPair, ModelRvrf};
use crate::types::{Amount, Fund, FundId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

/// Decided residual fund and the transactions counted against it.
type SettleFinal = (Option<crate::protocol::FundSummary>, Vec<TxId>);

pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimOptions {
    /// Route signature responses through a random relay validator.
    pub gossip_relay: bool,
    pub step_budget: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            gossip_relay: true,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

/// Observable part of an envelope.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvelopeMeta {
    pub seq: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub size: usize,
}

#[derive(Clone, Debug)]
struct Envelope {
    seq: u64,
    src: NodeId,
    dst: NodeId,
    msg: Rc<Message>,
    size: usize,
    depth: u32,
    op: Option<usize>,
}

impl Envelope {
    fn meta(&self) -> EnvelopeMeta {
        EnvelopeMeta {
            seq: self.seq,
            src: self.src,
            dst: self.dst,
            size: self.size,
        }
    }
}

/// What a policy sees when an envelope is handed to the network.
#[derive(Clone, Debug)]
pub struct SendView {
    pub meta: EnvelopeMeta,
    /// Present iff the sender or the receiver is corrupted.
    pub payload: Option<Rc<Message>>,
}

/// Read-only view of in-flight envelopes for delivery scheduling.
pub struct InFlight<'a> {
    envs: &'a [Envelope],
    positions: &'a HashMap<u64, usize>,
    next_seq: u64,
    corrupted: &'a BTreeSet<NodeId>,
}

impl InFlight<'_> {
    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn meta(&self, i: usize) -> EnvelopeMeta {
        self.envs[i].meta()
    }

    pub fn to_corrupted(&self, i: usize) -> bool {
        self.corrupted.contains(&self.envs[i].dst)
    }

    pub fn iter(&self) -> impl Iterator<Item = EnvelopeMeta> + '_ {
        self.envs.iter().map(Envelope::meta)
    }

    /// Index of the in-flight envelope with sequence number `seq`.
    pub fn position(&self, seq: u64) -> Option<usize> {
        self.positions.get(&seq).copied()
    }

    /// Every envelope ever sent has a sequence number below this one.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }
}

/// Adversary strategy. Hooks receive a [`Control`] restricted to the powers of
/// a rushing-adaptive adversary.
pub trait Policy {
    fn name(&self) -> &'static str;

    fn on_start(&mut self, _ctl: &mut Control) {}

    fn on_send(&mut self, _view: &SendView, _ctl: &mut Control) {}

    /// Index in `0..in_flight.len()` of the envelope delivered next.
    fn pick(&mut self, in_flight: &InFlight) -> usize;

    /// Envelope delivered to a corrupted node. The default keeps the node silent.
    fn on_corrupted_receive(&mut self, _delivery: &Delivery, _ctl: &mut Control) {}

    fn on_quiescence(&mut self, _ctl: &mut Control) {}

    /// Policy-specific figures for the run report.
    fn report(&self) -> BTreeMap<String, String> {
        BTreeMap::new()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WorkOp {
    Pay { buyer: NodeId, fund: FundId, seller: NodeId },
    Settle { buyer: NodeId, funds: Vec<FundId> },
    Redeem { seller: NodeId, funds: Vec<FundId> },
}

/// Genesis fund: owners are client indices.
#[derive(Clone, Debug)]
pub struct GenesisFund {
    pub name: String,
    pub owners: Vec<usize>,
    pub balance: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Liveness {
    Ok,
    /// Step budget exhausted before quiescence.
    NonQuiescence,
    /// Settle or redeem requests left without a decision, or redeems rejected.
    Stalled(usize),
}

pub struct RunResult {
    pub summary: RunSummary,
    pub trace: Vec<TraceEvent>,
    pub verdict: Result<Verdict, MalformedTrace>,
    pub liveness: Liveness,
}

#[allow(clippy::large_enum_variant)]
enum Node {
    Validator(ValidatorState),
    Client(ClientState),
}

pub struct World {
    cfg: SystemConfig,
    sq: SecretQuorum<ModelRvrf>,
    dir: Directory,
    nodes: Vec<Node>,
    client_names: Vec<String>,
    genesis: Vec<Fund>,
    options: SimOptions,
    in_flight: Vec<Envelope>,
    positions: HashMap<u64, usize>,
    next_seq: u64,
    rng: ChaCha8Rng,
    corrupted: BTreeSet<NodeId>,
    steps: u64,
    current_depth: u32,
    current_op: Option<usize>,
    messages: BTreeMap<MessageKind, u64>,
    ops: Vec<OpRecord>,
    trace: Vec<TraceEvent>,
    signers: BTreeMap<TxId, BTreeSet<NodeId>>,
    accepted: BTreeMap<FundId, BTreeSet<TxId>>,
    settle_finals: BTreeMap<Vec<FundId>, BTreeMap<NodeId, SettleFinal>>,
}

impl World {
    pub fn new(
        cfg: SystemConfig,
        client_names: &[String],
        genesis: &[GenesisFund],
        seed: u64,
        options: SimOptions,
    ) -> World {
        let validator_keys: Vec<KeyPair> = (0..cfg.n)
            .map(|i| keygen(format!("validator/{i}").as_bytes()))
            .collect();
        let client_keys: Vec<KeyPair> = client_names
            .iter()
            .map(|c| keygen(format!("client/{c}").as_bytes()))
            .collect();
        let dir = Directory::new(
            validator_keys.iter().map(|k| k.public).collect(),
            client_keys.iter().map(|k| k.public).collect(),
        );
        let provider = ModelRvrf::new(cfg.max, &seed.to_be_bytes());
        let sq = SecretQuorum::new(cfg, dir.validator_keys().to_vec(), provider);
        let funds: Vec<Fund> = genesis
            .iter()
            .map(|g| Fund {
                id: FundId::genesis(&g.name),
                owners: g.owners.iter().map(|&o| client_keys[o].public).collect(),
                balance: g.balance,
            })
            .collect();

        let mut nodes = Vec::with_capacity(dir.node_count());
        for (i, kp) in validator_keys.into_iter().enumerate() {
            nodes.push(Node::Validator(ValidatorState::new(NodeId(i as u32), kp, &funds)));
        }
        for (j, kp) in client_keys.into_iter().enumerate() {
            let id = NodeId((cfg.n + j) as u32);
            let assets = funds.iter().filter(|f| f.owners.contains(&kp.public)).cloned().collect();
            let rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(id.0 as u64 + 1)));
            nodes.push(Node::Client(ClientState::new(id, kp, assets, rng)));
        }

        World {
            cfg,
            sq,
            dir,
            nodes,
            client_names: client_names.to_vec(),
            genesis: funds,
            options,
            in_flight: Vec::new(),
            positions: HashMap::new(),
            next_seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5EED)),
            corrupted: BTreeSet::new(),
            steps: 0,
            current_depth: 0,
            current_op: None,
            messages: BTreeMap::new(),
            ops: Vec::new(),
            trace: Vec::new(),
            signers: BTreeMap::new(),
            accepted: BTreeMap::new(),
            settle_finals: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn directory(&self) -> &Directory {
        &self.dir
    }

    pub fn quorum(&self) -> &SecretQuorum<ModelRvrf> {
        &self.sq
    }

    pub fn client_node(&self, index: usize) -> NodeId {
        NodeId((self.cfg.n + index) as u32)
    }

    pub fn client_index(&self, name: &str) -> Option<usize> {
        self.client_names.iter().position(|c| c == name)
    }

    pub fn validator(&self, id: NodeId) -> Option<&ValidatorState> {
        match self.nodes.get(id.index()) {
            Some(Node::Validator(v)) => Some(v),
            _ => None,
        }
    }

    pub fn client(&self, id: NodeId) -> Option<&ClientState> {
        match self.nodes.get(id.index()) {
            Some(Node::Client(c)) => Some(c),
            _ => None,
        }
    }

    pub fn corrupted(&self) -> &BTreeSet<NodeId> {
        &self.corrupted
    }

    /// Validators that signed `txid` while behaving honestly.
    pub fn signers(&self, txid: &TxId) -> BTreeSet<NodeId> {
        self.signers.get(txid).cloned().unwrap_or_default()
    }

    /// Transactions of `fund` for which a verifying proof was assembled.
    pub fn accepted(&self, fund: &FundId) -> usize {
        self.accepted.get(fund).map_or(0, |s| s.len())
    }

    pub fn ops(&self) -> &[OpRecord] {
        &self.ops
    }

    /// Settle decisions `(result, counted txs)` per honest validator.
    pub fn settle_decisions(
        &self,
        funds: &[FundId],
    ) -> BTreeMap<NodeId, SettleFinal> {
        self.settle_finals
            .get(&crate::protocol::canonical_funds(funds))
            .cloned()
            .unwrap_or_default()
    }

    pub fn initial_state(&self) -> (SpecState, Ownership) {
        let state = SpecState::new(self.genesis.iter().map(|f| (f.id, f.balance)));
        let ownership = self.genesis.iter().map(|f| (f.id, f.owners.clone())).collect();
        (state, ownership)
    }

    fn ctx(&self) -> Ctx<'_> {
        Ctx {
            sq: &self.sq,
            dir: &self.dir,
        }
    }

    /// Run the workload phase by phase against `policy`.
    pub fn run(&mut self, phases: &[Vec<WorkOp>], policy: &mut dyn Policy) -> RunResult {
        policy.on_start(&mut Control::new(self));
        let mut liveness = Liveness::Ok;
        'phases: for (phase, ops) in phases.iter().enumerate() {
            for op in ops {
                self.issue(phase, op, policy);
            }
            loop {
                while !self.in_flight.is_empty() {
                    if self.steps >= self.options.step_budget {
                        liveness = Liveness::NonQuiescence;
                        break 'phases;
                    }
                    let idx = policy.pick(&InFlight {
                        envs: &self.in_flight,
                        positions: &self.positions,
                        next_seq: self.next_seq,
                        corrupted: &self.corrupted,
                    });
                    assert!(idx < self.in_flight.len(), "policy picked an envelope out of range");
                    let env = self.take(idx);
                    self.deliver(env, policy);
                }
                policy.on_quiescence(&mut Control::new(self));
                if self.in_flight.is_empty() {
                    break;
                }
            }
            for node in &mut self.nodes {
                if let Node::Client(c) = node {
                    c.on_quiescence();
                }
            }
            self.resolve_outcomes(phase);
        }
        if liveness == Liveness::NonQuiescence {
            for node in &mut self.nodes {
                if let Node::Client(c) = node {
                    c.on_quiescence();
                }
            }
            let last = self.ops.iter().map(|o| o.phase).max().unwrap_or(0);
            for p in 0..=last {
                self.resolve_outcomes(p);
            }
        } else {
            let stalled = self.ops.iter().filter(|o| o.outcome.is_liveness_failure()).count();
            if stalled > 0 {
                liveness = Liveness::Stalled(stalled);
            }
        }

        let (state, ownership) = self.initial_state();
        let verdict = conformance_check(&self.trace, &state, &ownership, self.cfg.s2);
        RunResult {
            summary: self.summary(policy),
            trace: self.trace.clone(),
            verdict,
            liveness,
        }
    }

    fn issue(&mut self, phase: usize, op: &WorkOp, policy: &mut dyn Policy) {
        let index = self.ops.len();
        let mut out = Outbox::default();
        let ctx = Ctx {
            sq: &self.sq,
            dir: &self.dir,
        };
        let (kind, actor, handle) = match op {
            WorkOp::Pay { buyer, fund, seller } => {
                let seller_pk = self.dir.key_of(*seller);
                let Node::Client(c) = &mut self.nodes[buyer.index()] else {
                    panic!("pay issued by a validator");
                };
                let h = match c.start_pay(*fund, seller_pk, &ctx, &mut out) {
                    Ok(txid) => OpHandle::Pay { txid, seller: *seller },
                    Err(e) => OpHandle::Rejected(e),
                };
                (OpKind::Pay, *buyer, h)
            }
            WorkOp::Settle { buyer, funds } => {
                let Node::Client(c) = &mut self.nodes[buyer.index()] else {
                    panic!("settle issued by a validator");
                };
                let h = match c.start_settle(funds, &ctx, &mut out) {
                    Ok(key) => OpHandle::Settle { funds: key },
                    Err(e) => OpHandle::Rejected(e),
                };
                (OpKind::Settle, *buyer, h)
            }
            WorkOp::Redeem { seller, funds } => {
                let Node::Client(c) = &mut self.nodes[seller.index()] else {
                    panic!("redeem issued by a validator");
                };
                let h = match c.start_redeem(funds, &ctx, &mut out) {
                    Ok(i) => OpHandle::Redeem { index: i },
                    Err(e) => OpHandle::Rejected(e),
                };
                (OpKind::Redeem, *seller, h)
            }
        };
        self.ops.push(OpRecord::new(phase, kind, actor, handle));
        self.current_depth = 0;
        self.current_op = Some(index);
        self.dispatch(actor, out, Some(policy));
    }

    fn deliver(&mut self, env: Envelope, policy: &mut dyn Policy) {
        self.steps += 1;
        self.current_depth = env.depth;
        self.current_op = env.op;
        if self.corrupted.contains(&env.dst) {
            let delivery = Delivery::new(env.meta(), Rc::clone(&env.msg), env.depth, env.op);
            policy.on_corrupted_receive(&delivery, &mut Control::new(self));
        } else {
            self.run_handler(env.dst, env.src, &env.msg, Some(policy));
        }
    }

    /// Run the honest handler of `dst` and dispatch what it emits.
    fn run_handler(&mut self, dst: NodeId, src: NodeId, msg: &Message, policy: Option<&mut dyn Policy>) {
        let mut out = Outbox::default();
        let ctx = Ctx {
            sq: &self.sq,
            dir: &self.dir,
        };
        match &mut self.nodes[dst.index()] {
            Node::Validator(v) => v.handle(src, msg, &ctx, &mut out),
            Node::Client(c) => c.handle(src, msg, &ctx, &mut out),
        }
        self.dispatch(dst, out, policy);
    }

    fn dispatch(&mut self, origin: NodeId, out: Outbox, mut policy: Option<&mut dyn Policy>) {
        for ev in out.events {
            self.record_event(ev);
        }
        for o in out.sends {
            let src = if o.route == Route::Gossip && self.options.gossip_relay {
                NodeId(self.rng.gen_range(0..self.cfg.n as u32))
            } else {
                origin
            };
            let env = self.enqueue(src, o.dst, o.msg);
            if let Some(p) = policy.as_deref_mut() {
                let visible = self.corrupted.contains(&origin) || self.corrupted.contains(&env.dst);
                let view = SendView {
                    meta: env.meta(),
                    payload: visible.then(|| Rc::clone(&env.msg)),
                };
                p.on_send(&view, &mut Control::new(self));
            }
        }
    }

    fn enqueue(&mut self, src: NodeId, dst: NodeId, msg: Message) -> Envelope {
        let kind = msg.kind();
        *self.messages.entry(kind).or_insert(0) += 1;
        if let Some(op) = self.current_op {
            let rec = &mut self.ops[op];
            rec.messages += 1;
            rec.max_depth = rec.max_depth.max(self.current_depth + 1);
        }
        let env = Envelope {
            seq: self.next_seq,
            src,
            dst,
            size: msg.size(),
            msg: Rc::new(msg),
            depth: self.current_depth + 1,
            op: self.current_op,
        };
        self.next_seq += 1;
        self.positions.insert(env.seq, self.in_flight.len());
        self.in_flight.push(env.clone());
        env
    }

    fn take(&mut self, idx: usize) -> Envelope {
        let env = self.in_flight.swap_remove(idx);
        self.positions.remove(&env.seq);
        if let Some(moved) = self.in_flight.get(idx) {
            self.positions.insert(moved.seq, idx);
        }
        env
    }

    fn record_event(&mut self, ev: NodeEvent) {
        match ev {
            NodeEvent::Signed { validator, txid } => {
                self.signers.entry(txid).or_default().insert(validator);
            }
            NodeEvent::ProofComplete { tx, .. } => {
                self.accept(tx);
                if let Some(op) = self.current_op {
                    let rec = &mut self.ops[op];
                    if matches!(rec.handle, OpHandle::Pay { txid, .. } if txid == tx.id()) {
                        rec.seller_depth = Some(self.current_depth);
                    }
                }
            }
            NodeEvent::PayConfirmed { txid, .. } => {
                if let Some(op) = self.current_op {
                    let rec = &mut self.ops[op];
                    if matches!(rec.handle, OpHandle::Pay { txid: t, .. } if t == txid) {
                        rec.buyer_depth = Some(self.current_depth);
                    }
                }
            }
            NodeEvent::SettleFinalized {
                validator,
                funds,
                result,
                counted,
            } => {
                self.settle_finals
                    .entry(funds)
                    .or_default()
                    .insert(validator, (result, counted));
            }
            NodeEvent::SettleCompleted { buyer, funds, result } => {
                self.trace.push(TraceEvent::Settle {
                    caller: self.dir.key_of(buyer),
                    funds: funds.into_iter().collect(),
                    result: result.map(|s| (s.id, s.balance)),
                });
            }
            NodeEvent::RedeemCompleted { seller, funds, result } => {
                self.trace.push(TraceEvent::Redeem {
                    caller: self.dir.key_of(seller),
                    funds: funds.into_iter().collect(),
                    result: (result.id, result.balance),
                });
            }
        }
    }

    fn accept(&mut self, tx: crate::protocol::Transaction) {
        if self.accepted.entry(tx.fund).or_default().insert(tx.id()) {
            self.trace.push(TraceEvent::AcceptedPay {
                fund: tx.fund,
                buyer: tx.buyer,
                seller: tx.seller,
            });
        }
    }

    fn resolve_outcomes(&mut self, phase: usize) {
        for i in 0..self.ops.len() {
            if self.ops[i].phase != phase || self.ops[i].outcome != OpOutcome::Pending {
                continue;
            }
            let rec = &self.ops[i];
            let outcome = match &rec.handle {
                OpHandle::Rejected(e) => OpOutcome::Precondition(e.to_string()),
                OpHandle::Pay { txid, seller } => {
                    let buyer = self.client(rec.actor).and_then(|c| c.pay_outcome(txid));
                    let seller_out = self.client(*seller).and_then(|c| c.seller_outcome(txid));
                    match buyer {
                        Some(b) => OpOutcome::Pay { buyer: b, seller: seller_out },
                        None => OpOutcome::Pending,
                    }
                }
                OpHandle::Settle { funds } => self
                    .client(rec.actor)
                    .and_then(|c| c.settle_outcome(funds))
                    .map_or(OpOutcome::Pending, OpOutcome::Settle),
                OpHandle::Redeem { index } => self
                    .client(rec.actor)
                    .and_then(|c| c.redeem_outcome(*index))
                    .map_or(OpOutcome::Pending, OpOutcome::Redeem),
            };
            self.ops[i].outcome = outcome;
        }
    }

    fn summary(&self, policy: &dyn Policy) -> RunSummary {
        RunSummary {
            steps: self.steps,
            messages: MessageKind::ALL
                .iter()
                .map(|k| (k.name().to_string(), self.messages.get(k).copied().unwrap_or(0)))
                .collect(),
            ops: self.ops.clone(),
            accepted_per_fund: self
                .genesis
                .iter()
                .map(|f| (f.id, self.accepted(&f.id)))
                .collect(),
            corrupted: self.corrupted.iter().copied().collect(),
            policy: policy.name().to_string(),
            policy_report: policy.report(),
        }
    }
}
