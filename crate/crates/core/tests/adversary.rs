mod common;

use common::*;
use fracspend::adversary::{LatencySchedule, NonceGrinder, Overspender, QuorumEraser};
use fracspend::harness::{binomial_max_mean, trial_seed};
use fracspend::ledger::Verdict;
use fracspend::params::vrf_threshold;
use fracspend::protocol::{Message, NodeId};
use fracspend::sim::{Control, CorruptError, InFlight, InjectError, Liveness, OpKind, Policy, SendView, WorkOp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Corrupts the seller and checks every capability boundary it can reach.
struct Probe {
    schedule: LatencySchedule,
    seller: usize,
    sends: usize,
    hidden: usize,
    violations: Vec<String>,
}

impl Probe {
    fn new(seed: u64, seller: usize) -> Self {
        Probe {
            schedule: LatencySchedule::new(seed),
            seller,
            sends: 0,
            hidden: 0,
            violations: Vec::new(),
        }
    }
}

impl Policy for Probe {
    fn name(&self) -> &'static str {
        "probe"
    }

    fn on_start(&mut self, ctl: &mut Control) {
        let seller = ctl.client_node(self.seller);
        let honest_validator = NodeId(0);
        let honest_client = ctl.client_node(0);
        ctl.corrupt(seller).unwrap();
        if ctl.keypair(honest_validator).is_some() || ctl.keypair(honest_client).is_some() {
            self.violations.push("keypair of honest node".into());
        }
        if ctl.validator_mut(honest_validator).is_some() {
            self.violations.push("state of honest validator".into());
        }
        if ctl.client_mut(honest_client).is_some() {
            self.violations.push("state of honest client".into());
        }
        if ctl.inject(honest_client, seller, Message::InvalidRedeem) != Err(InjectError::NotCorrupted(honest_client)) {
            self.violations.push("inject from honest node".into());
        }
        if ctl.keypair(seller).is_none() || ctl.client_mut(seller).is_none() {
            self.violations.push("corrupted seller not accessible".into());
        }
    }

    fn on_send(&mut self, view: &SendView, ctl: &mut Control) {
        self.sends += 1;
        let exposed = ctl.is_corrupted(view.meta.src) || ctl.is_corrupted(view.meta.dst);
        if view.payload.is_some() != exposed {
            self.violations.push(format!("payload visibility {:?}", view.meta));
        }
        if view.payload.is_none() {
            self.hidden += 1;
        }
    }

    fn pick(&mut self, in_flight: &InFlight) -> usize {
        self.schedule.pick(in_flight)
    }
}

#[test]
fn policies_see_only_what_corruption_grants() {
    let mut world = single_fund_world(desk_config(), 3, 160, 21);
    let phases = vec![vec![
        WorkOp::Pay { buyer: client(&world, 0), fund: main_fund(), seller: client(&world, 1) },
        WorkOp::Pay { buyer: client(&world, 0), fund: main_fund(), seller: client(&world, 2) },
    ]];
    let mut probe = Probe::new(21, 1);
    let result = world.run(&phases, &mut probe);
    assert!(probe.violations.is_empty(), "{:?}", probe.violations);
    assert!(probe.hidden > 0 && probe.hidden < probe.sends);
    assert_eq!(result.verdict, Ok(Verdict::Pass));
}

struct Budget {
    schedule: LatencySchedule,
    outcome: Vec<Result<(), CorruptError>>,
}

impl Policy for Budget {
    fn name(&self) -> &'static str {
        "budget"
    }

    fn on_start(&mut self, ctl: &mut Control) {
        let f = ctl.config().f;
        for v in 0..=f {
            self.outcome.push(ctl.corrupt(NodeId(v as u32)));
        }
        for c in 0..5 {
            let node = ctl.client_node(c);
            self.outcome.push(ctl.corrupt(node));
        }
    }

    fn pick(&mut self, in_flight: &InFlight) -> usize {
        self.schedule.pick(in_flight)
    }
}

#[test]
fn corruption_budget_limits_validators_only() {
    let cfg = desk_config();
    let mut world = single_fund_world(cfg, 5, 160, 2);
    let mut policy = Budget { schedule: LatencySchedule::new(2), outcome: Vec::new() };
    world.run(&[], &mut policy);
    let (validators, clients) = policy.outcome.split_at(cfg.f + 1);
    assert!(validators[..cfg.f].iter().all(Result::is_ok));
    assert_eq!(validators[cfg.f], Err(CorruptError::BudgetExceeded(NodeId(cfg.f as u32))));
    assert!(clients.iter().all(Result::is_ok));
    assert_eq!(world.corrupted().len(), cfg.f + 5);
}

#[test]
fn overspender_never_exceeds_k2_accepted() {
    let cfg = overspend_config();
    for seed in 0..20 {
        let mut world = single_fund_world(cfg, 33, 160, seed);
        let buyer = client(&world, 0);
        let sellers: Vec<NodeId> = (1..33).map(|i| client(&world, i)).collect();
        let mut policy = Overspender::new(seed, buyer, main_fund(), sellers, 32, 0);
        let result = world.run(&[], &mut policy);
        let accepted = world.accepted(&main_fund());
        assert!(accepted <= cfg.k2, "seed {seed}: {accepted} accepted");
        assert_eq!(result.verdict, Ok(Verdict::Pass), "seed {seed}");
    }
}

#[test]
fn overspender_with_colluders_stays_within_k2() {
    let cfg = overspend_config();
    for seed in 0..10 {
        let mut world = single_fund_world(cfg, 33, 160, seed);
        let buyer = client(&world, 0);
        let sellers: Vec<NodeId> = (1..33).map(|i| client(&world, i)).collect();
        let mut policy = Overspender::new(seed, buyer, main_fund(), sellers, 32, cfg.f);
        let result = world.run(&[], &mut policy);
        assert!(world.accepted(&main_fund()) <= cfg.k2, "seed {seed}");
        assert_eq!(result.verdict, Ok(Verdict::Pass), "seed {seed}");
    }
}

#[test]
fn eraser_targets_candidates_and_redeem_survives() {
    let cfg = desk_config();
    let mut redeemed = 0;
    let runs = 30;
    for seed in 0..runs {
        let mut world = single_fund_world(cfg, 2, 160, seed);
        let (alice, bob) = (client(&world, 0), client(&world, 1));
        let phases = vec![
            vec![WorkOp::Pay { buyer: alice, fund: main_fund(), seller: bob }],
            vec![WorkOp::Redeem { seller: bob, funds: vec![main_fund()] }],
        ];
        let mut policy = QuorumEraser::new(seed);
        let result = world.run(&phases, &mut policy);
        let tx = policy.target().expect("redeem broadcast observed");
        let ring = world.quorum().candidates(&tx.encode());
        assert!(policy.chosen().iter().all(|v| ring.contains(&world.directory().key_of(*v))));
        assert!(world.corrupted().len() <= cfg.f);
        assert_eq!(result.verdict, Ok(Verdict::Pass));
        if result.liveness == Liveness::Ok && result.summary.ops_of(OpKind::Redeem).all(|o| o.outcome.label() == "success") {
            redeemed += 1;
        }
    }
    assert_eq!(redeemed, runs);
}

/// Maximum of `b` draws of `Bin(c, p)`, sampled directly.
fn sampled_binomial_max(rng: &mut ChaCha8Rng, c: usize, p: f64, b: usize) -> usize {
    (0..b).map(|_| (0..c).filter(|_| rng.gen_bool(p)).count()).max().unwrap_or(0)
}

#[test]
fn grinder_gain_matches_binomial_maximum() {
    let cfg = desk_config();
    let p = vrf_threshold(&cfg) as f64 / cfg.max as f64;
    let budget = 500;
    let mut samples = Vec::new();
    for seed in 0..40 {
        let mut world = single_fund_world(cfg, 2, 160, seed);
        let (alice, mallory) = (client(&world, 0), client(&world, 1));
        let phases = vec![vec![WorkOp::Pay { buyer: alice, fund: main_fund(), seller: mallory }]];
        let mut policy = NonceGrinder::new(seed, mallory, budget, cfg.f);
        let result = world.run(&phases, &mut policy);
        assert_eq!(result.verdict, Ok(Verdict::Pass));
        samples.extend_from_slice(policy.samples());
    }
    assert_eq!(samples.len(), 40);
    let t = samples.len() as f64;
    let observed = samples.iter().map(|s| s.best as f64).sum::<f64>() / t;
    let analytic = samples
        .iter()
        .map(|s| binomial_max_mean(s.corrupted_candidates as u64, p, budget as u64))
        .sum::<f64>()
        / t;
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(9, 0));
    let direct = samples
        .iter()
        .map(|s| sampled_binomial_max(&mut rng, s.corrupted_candidates, p, budget) as f64)
        .sum::<f64>()
        / t;
    let first = samples.iter().map(|s| s.first as f64).sum::<f64>() / t;
    assert!((observed - analytic).abs() <= 0.5, "observed {observed}, analytic {analytic}");
    assert!((direct - analytic).abs() <= 0.5, "direct {direct}, analytic {analytic}");
    assert!(observed > first);
    assert!(samples.iter().all(|s| s.best >= s.first && s.best <= s.corrupted_candidates));
}
