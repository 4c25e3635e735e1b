//! Built-in adversary policies. They live outside the simulator module and
//! reach the world only through [`Control`].

use crate::protocol::wire::{CONTACT_LEN, SIG_RESPONSE_LEN};
use crate::protocol::{Message, NodeId, Transaction, TxId};
use crate::quorum::ValidateSession;
use crate::rvrf::KeyPair;
use crate::sim::{Control, Delivery, InFlight, Policy, SendView};
use crate::types::FundId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

fn policy_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0xAD5E_11A2_0000_0000)
}

/// Benign asynchronous network: every envelope draws an independent
/// exponential delay when first seen and envelopes arrive in delay order.
#[derive(Debug)]
pub struct LatencySchedule {
    rng: ChaCha8Rng,
    clock: u64,
    assigned: u64,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
}

impl LatencySchedule {
    /// Mean delay in clock ticks.
    const MEAN: f64 = 1_000_000.0;

    pub fn new(seed: u64) -> Self {
        LatencySchedule {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x1A7E_0C11_0000_0000),
            clock: 0,
            assigned: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn pick(&mut self, in_flight: &InFlight) -> usize {
        for seq in self.assigned..in_flight.next_seq() {
            if in_flight.position(seq).is_some() {
                let u: f64 = self.rng.gen();
                let delay = (-(1.0 - u).ln() * Self::MEAN) as u64 + 1;
                self.queue.push(Reverse((self.clock + delay, seq)));
            }
        }
        self.assigned = in_flight.next_seq();
        while let Some(Reverse((at, seq))) = self.queue.pop() {
            if let Some(i) = in_flight.position(seq) {
                self.clock = at;
                return i;
            }
        }
        unreachable!("every in-flight envelope has a scheduled arrival")
    }
}

/// Corrupt up to `count` distinct random validators.
fn corrupt_random_validators(ctl: &mut Control, rng: &mut ChaCha8Rng, count: usize) -> Vec<NodeId> {
    let mut ids: Vec<NodeId> = ctl.directory().validator_ids().collect();
    ids.shuffle(rng);
    let mut out = Vec::new();
    for v in ids {
        if out.len() == count {
            break;
        }
        if ctl.corrupt(v).is_ok() {
            out.push(v);
        }
    }
    out
}

/// Random-latency delivery. Optionally silences nodes before the run.
pub struct Passive {
    rng: ChaCha8Rng,
    schedule: LatencySchedule,
    silent: Vec<NodeId>,
    silent_random: usize,
    rejected: usize,
}

impl Passive {
    pub fn new(seed: u64) -> Self {
        Self::with_silent(seed, Vec::new(), 0)
    }

    /// Silence the listed nodes plus `random_validators` further validators.
    pub fn with_silent(seed: u64, silent: Vec<NodeId>, random_validators: usize) -> Self {
        Passive {
            rng: policy_rng(seed),
            schedule: LatencySchedule::new(seed),
            silent,
            silent_random: random_validators,
            rejected: 0,
        }
    }
}

impl Policy for Passive {
    fn name(&self) -> &'static str {
        "passive"
    }

    fn on_start(&mut self, ctl: &mut Control) {
        for n in self.silent.clone() {
            if ctl.corrupt(n).is_err() {
                self.rejected += 1;
            }
        }
        let extra = self.silent_random;
        corrupt_random_validators(ctl, &mut self.rng, extra);
    }

    fn pick(&mut self, in_flight: &InFlight) -> usize {
        self.schedule.pick(in_flight)
    }

    fn report(&self) -> BTreeMap<String, String> {
        BTreeMap::from([("rejected_corruptions".into(), self.rejected.to_string())])
    }
}

/// Delivers envelopes addressed to corrupted nodes first, otherwise the most
/// recent one. Corrupted nodes follow the protocol.
pub struct RushingReorder {
    rng: ChaCha8Rng,
    corrupt: usize,
    rushed: u64,
}

impl RushingReorder {
    pub fn new(seed: u64, corrupt_validators: usize) -> Self {
        RushingReorder {
            rng: policy_rng(seed),
            corrupt: corrupt_validators,
            rushed: 0,
        }
    }
}

impl Policy for RushingReorder {
    fn name(&self) -> &'static str {
        "rushing_reorder"
    }

    fn on_start(&mut self, ctl: &mut Control) {
        let c = self.corrupt;
        corrupt_random_validators(ctl, &mut self.rng, c);
    }

    fn pick(&mut self, in_flight: &InFlight) -> usize {
        if let Some(i) = (0..in_flight.len()).find(|&i| in_flight.to_corrupted(i)) {
            self.rushed += 1;
            return i;
        }
        (0..in_flight.len())
            .max_by_key(|&i| in_flight.meta(i).seq)
            .expect("pick is called with a non-empty queue")
    }

    fn on_corrupted_receive(&mut self, delivery: &Delivery, ctl: &mut Control) {
        ctl.deliver_honestly(delivery);
    }

    fn report(&self) -> BTreeMap<String, String> {
        BTreeMap::from([("rushed_deliveries".into(), self.rushed.to_string())])
    }
}

/// Waits for the first redeem broadcast, reads the proof it carries, then
/// spends its corruption budget on the validators it suspects of having
/// signed and erases their records of the paid fund. Corrupted validators
/// answer redeems with INVALIDREDEEM and stay silent otherwise.
pub struct QuorumEraser {
    rng: ChaCha8Rng,
    schedule: LatencySchedule,
    responses_to: BTreeMap<NodeId, Vec<NodeId>>,
    triggered: bool,
    target: Option<Transaction>,
    chosen: Vec<NodeId>,
    erased: usize,
}

impl QuorumEraser {
    pub fn new(seed: u64) -> Self {
        QuorumEraser {
            rng: policy_rng(seed),
            schedule: LatencySchedule::new(seed),
            responses_to: BTreeMap::new(),
            triggered: false,
            target: None,
            chosen: Vec::new(),
            erased: 0,
        }
    }

    /// Transaction whose signers were targeted.
    pub fn target(&self) -> Option<Transaction> {
        self.target
    }

    /// Validators picked after reading the proof, all of them candidates.
    pub fn chosen(&self) -> &[NodeId] {
        &self.chosen
    }

    fn attack(&mut self, tx: Transaction, seller: NodeId, ctl: &mut Control) {
        self.target = Some(tx);
        let ring = ctl.quorum().candidates(&tx.encode());
        let candidates: Vec<NodeId> = ring
            .members()
            .iter()
            .map(|pk| ctl.directory().node_of(pk).expect("candidate is a validator"))
            .collect();
        let candidate_set: BTreeSet<NodeId> = candidates.iter().copied().collect();
        let mut order: Vec<NodeId> = Vec::new();
        let mut seen = BTreeSet::new();
        for s in self.responses_to.get(&seller).into_iter().flatten() {
            if candidate_set.contains(s) && seen.insert(*s) {
                order.push(*s);
            }
        }
        let mut rest: Vec<NodeId> = candidates.into_iter().filter(|c| !seen.contains(c)).collect();
        rest.shuffle(&mut self.rng);
        order.extend(rest);
        for v in order {
            if ctl.corrupted_validators() >= ctl.config().f {
                break;
            }
            if !ctl.is_corrupted(v) && ctl.corrupt(v).is_ok() {
                self.chosen.push(v);
            }
        }
        let victims: Vec<NodeId> = ctl.corrupted().iter().copied().filter(|n| ctl.directory().is_validator(*n)).collect();
        for v in victims {
            let state = ctl.validator_mut(v).expect("corrupted validator");
            state.seen.remove(&tx.fund);
            if state.signatures.remove(&tx.fund).is_some() {
                self.erased += 1;
            }
        }
    }
}

impl Policy for QuorumEraser {
    fn name(&self) -> &'static str {
        "quorum_eraser"
    }

    fn on_send(&mut self, view: &SendView, ctl: &mut Control) {
        let m = view.meta;
        if m.size == SIG_RESPONSE_LEN {
            self.responses_to.entry(m.dst).or_default().push(m.src);
        }
        let dir = ctl.directory();
        if !self.triggered && !dir.is_validator(m.src) && dir.is_validator(m.dst) && m.size > CONTACT_LEN {
            self.triggered = true;
            let _ = ctl.corrupt(m.dst);
        }
    }

    fn pick(&mut self, in_flight: &InFlight) -> usize {
        self.schedule.pick(in_flight)
    }

    fn on_corrupted_receive(&mut self, delivery: &Delivery, ctl: &mut Control) {
        if let Message::Redeem { items } = &*delivery.msg {
            let seller = delivery.meta.src;
            if self.target.is_none() {
                if let Some((tx, _)) = items.first() {
                    self.attack(*tx, seller, ctl);
                }
            }
            let _ = ctl.inject(delivery.meta.dst, seller, Message::InvalidRedeem);
        }
    }

    fn report(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("chosen_validators".into(), self.chosen.len().to_string()),
            ("erased_records".into(), self.erased.to_string()),
        ])
    }
}

/// Corrupts a buyer and sends `pays` payments from one fund to distinct
/// sellers at once. Optional colluding validators sign every contact for the
/// fund whenever the VRF selects them.
pub struct Overspender {
    rng: ChaCha8Rng,
    schedule: LatencySchedule,
    buyer: NodeId,
    fund: FundId,
    sellers: Vec<NodeId>,
    pays: usize,
    colluders: usize,
    colluding: BTreeSet<NodeId>,
    injected: usize,
}

impl Overspender {
    pub fn new(seed: u64, buyer: NodeId, fund: FundId, sellers: Vec<NodeId>, pays: usize, colluders: usize) -> Self {
        assert!(!sellers.is_empty(), "overspender needs at least one seller");
        Overspender {
            rng: policy_rng(seed),
            schedule: LatencySchedule::new(seed),
            buyer,
            fund,
            sellers,
            pays,
            colluders,
            colluding: BTreeSet::new(),
            injected: 0,
        }
    }
}

impl Policy for Overspender {
    fn name(&self) -> &'static str {
        "overspender"
    }

    fn on_start(&mut self, ctl: &mut Control) {
        ctl.corrupt(self.buyer).expect("clients can always be corrupted");
        let c = self.colluders;
        self.colluding = corrupt_random_validators(ctl, &mut self.rng, c).into_iter().collect();
        for i in 0..self.pays {
            let seller = self.sellers[i % self.sellers.len()];
            let seller_pk = ctl.directory().key_of(seller);
            let tx = ctl.sign_tx(self.buyer, self.fund, seller_pk).expect("buyer is corrupted");
            ctl.inject(self.buyer, seller, Message::Pay { tx }).expect("buyer is corrupted");
            self.injected += 1;
        }
    }

    fn pick(&mut self, in_flight: &InFlight) -> usize {
        self.schedule.pick(in_flight)
    }

    fn on_corrupted_receive(&mut self, delivery: &Delivery, ctl: &mut Control) {
        let dst = delivery.meta.dst;
        if dst == self.buyer {
            return;
        }
        if let Message::Contact { tx, nonce } = &*delivery.msg {
            if self.colluding.contains(&dst) && tx.fund == self.fund {
                let kp = ctl.keypair(dst).expect("corrupted");
                let d = tx.encode();
                if ctl.quorum().selected_by_vrf(&d, nonce, &kp) {
                    let sig = ctl.quorum().make_ring_signature(&d, nonce, &kp).expect("candidate");
                    let msg = Message::SigResponse {
                        txid: tx.id(),
                        nonce: *nonce,
                        sig,
                    };
                    let _ = ctl.inject_gossip(dst, delivery.meta.src, msg);
                }
                return;
            }
        }
        ctl.deliver_honestly(delivery);
    }

    fn report(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("injected_pays".into(), self.injected.to_string()),
            ("colluding_validators".into(), self.colluding.len().to_string()),
        ])
    }
}

/// Grinding statistics of one transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GrindSample {
    /// Corrupted validators among the candidates.
    pub corrupted_candidates: usize,
    /// Corrupted validators selected under the first nonce tried.
    pub first: usize,
    /// Best count over the whole budget.
    pub best: usize,
}

struct GrindSession {
    tx: Transaction,
    buyer: NodeId,
    session: ValidateSession,
    done: bool,
}

/// Corrupted seller that retries the nonce `budget` times to maximise the
/// number of corrupted validators selected, then validates with the best one.
pub struct NonceGrinder {
    rng: ChaCha8Rng,
    schedule: LatencySchedule,
    seller: NodeId,
    budget: usize,
    corrupt: usize,
    samples: Vec<GrindSample>,
    sessions: BTreeMap<TxId, GrindSession>,
}

impl NonceGrinder {
    pub fn new(seed: u64, seller: NodeId, budget: usize, corrupt_validators: usize) -> Self {
        assert!(budget >= 1, "grinding budget must be ≥ 1");
        NonceGrinder {
            rng: policy_rng(seed),
            schedule: LatencySchedule::new(seed),
            seller,
            budget,
            corrupt: corrupt_validators,
            samples: Vec::new(),
            sessions: BTreeMap::new(),
        }
    }

    pub fn samples(&self) -> &[GrindSample] {
        &self.samples
    }

    fn grind(&mut self, tx: &Transaction, buyer: NodeId, ctl: &mut Control) {
        let d = tx.encode();
        let ring = ctl.quorum().candidates(&d);
        let mut candidates = Vec::new();
        let mut corrupted: Vec<KeyPair> = Vec::new();
        for pk in ring.members() {
            let v = ctl.directory().node_of(pk).expect("candidate is a validator");
            candidates.push(v);
            if let Some(kp) = ctl.keypair(v) {
                corrupted.push(kp);
            }
        }
        let mut best = (0usize, [0u8; 32]);
        let mut first = 0;
        for b in 0..self.budget {
            let nonce: [u8; 32] = self.rng.gen();
            let count = corrupted
                .iter()
                .filter(|kp| ctl.quorum().selected_by_vrf(&d, &nonce, kp))
                .count();
            if b == 0 {
                first = count;
                best = (count, nonce);
            } else if count > best.0 {
                best = (count, nonce);
            }
        }
        self.samples.push(GrindSample {
            corrupted_candidates: corrupted.len(),
            first,
            best: best.0,
        });
        self.sessions.insert(
            tx.id(),
            GrindSession {
                tx: *tx,
                buyer,
                session: ValidateSession::new(d.to_vec(), best.1),
                done: false,
            },
        );
        for v in candidates {
            let _ = ctl.inject(self.seller, v, Message::Contact { tx: *tx, nonce: best.1 });
        }
    }
}

impl Policy for NonceGrinder {
    fn name(&self) -> &'static str {
        "nonce_grinder"
    }

    fn on_start(&mut self, ctl: &mut Control) {
        ctl.corrupt(self.seller).expect("clients can always be corrupted");
        let c = self.corrupt;
        corrupt_random_validators(ctl, &mut self.rng, c);
    }

    fn pick(&mut self, in_flight: &InFlight) -> usize {
        self.schedule.pick(in_flight)
    }

    fn on_corrupted_receive(&mut self, delivery: &Delivery, ctl: &mut Control) {
        if delivery.meta.dst != self.seller {
            ctl.deliver_honestly(delivery);
            return;
        }
        match &*delivery.msg {
            Message::Pay { tx } if tx.seller == ctl.directory().key_of(self.seller) => {
                if !self.sessions.contains_key(&tx.id()) {
                    self.grind(tx, delivery.meta.src, ctl);
                }
            }
            Message::SigResponse { txid, nonce, sig } => {
                let Some(s) = self.sessions.get_mut(txid) else {
                    return;
                };
                if s.done || s.session.nonce() != nonce {
                    return;
                }
                if let Some(proof) = s.session.on_signature(*sig, ctl.quorum()).cloned() {
                    s.done = true;
                    let (tx, buyer) = (s.tx, s.buyer);
                    ctl.submit_proof(tx, &proof);
                    let _ = ctl.inject(self.seller, buyer, Message::ConfirmPay { txid: *txid });
                }
            }
            _ => {}
        }
    }

    fn report(&self) -> BTreeMap<String, String> {
        let best: Vec<String> = self.samples.iter().map(|s| s.best.to_string()).collect();
        let first: Vec<String> = self.samples.iter().map(|s| s.first.to_string()).collect();
        BTreeMap::from([
            ("grind_budget".into(), self.budget.to_string()),
            ("best_corrupted_selected".into(), best.join(",")),
            ("first_corrupted_selected".into(), first.join(",")),
        ])
    }
}
