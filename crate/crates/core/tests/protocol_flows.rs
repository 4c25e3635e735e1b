mod common;

use common::*;
use fracspend::ledger::{ClientId, Verdict};
use fracspend::protocol::{settle_fund_id, MessageKind, RedeemOutcome, SettleOutcome};
use fracspend::sim::{GenesisFund, Liveness, OpKind, OpOutcome, SimOptions, WorkOp, World};
use fracspend::adversary::{Passive, RushingReorder};
use fracspend::types::{Amount, FundId};
use std::collections::BTreeSet;

fn pay(world: &World, buyer: usize, seller: usize) -> WorkOp {
    WorkOp::Pay {
        buyer: client(world, buyer),
        fund: main_fund(),
        seller: client(world, seller),
    }
}

#[test]
fn honest_pay_completes_with_three_hop_proof() {
    let mut world = single_fund_world(desk_config(), 2, 160, 7);
    let phases = vec![vec![pay(&world, 0, 1)]];
    let result = world.run(&phases, &mut Passive::new(7));
    assert_eq!(result.liveness, Liveness::Ok);
    assert_eq!(result.verdict, Ok(Verdict::Pass));
    let op = &result.summary.ops[0];
    assert_eq!(op.outcome.label(), "success/accepted");
    assert_eq!(op.seller_depth, Some(3));
    assert_eq!(op.buyer_depth, Some(4));
    let v = world.config().v as u64;
    assert!(op.messages <= 2 * v + 2, "pay used {} messages", op.messages);
    assert_eq!(world.accepted(&main_fund()), 1);
}

#[test]
fn pay_message_counts_per_kind() {
    let mut world = single_fund_world(desk_config(), 2, 160, 11);
    let phases = vec![vec![pay(&world, 0, 1)]];
    let result = world.run(&phases, &mut Passive::new(11));
    let m = &result.summary.messages;
    let count = |k: MessageKind| m.get(k.name()).copied().unwrap_or(0);
    assert_eq!(count(MessageKind::Pay), 1);
    assert_eq!(count(MessageKind::Contact), world.config().v as u64);
    assert_eq!(count(MessageKind::ConfirmPay), 1);
    let txid = match &result.summary.ops[0].handle {
        fracspend::sim::OpHandle::Pay { txid, .. } => *txid,
        other => panic!("unexpected handle {other:?}"),
    };
    assert_eq!(count(MessageKind::SigResponse), world.signers(&txid).len() as u64);
    assert_eq!(result.summary.total_messages(), result.summary.ops[0].messages);
}

#[test]
fn settle_after_pay_matches_oracle() {
    let mut world = single_fund_world(desk_config(), 2, 160, 3);
    let buyer = client(&world, 0);
    let phases = vec![
        vec![pay(&world, 0, 1)],
        vec![WorkOp::Settle {
            buyer,
            funds: vec![main_fund()],
        }],
    ];
    let result = world.run(&phases, &mut Passive::new(3));
    assert_eq!(result.liveness, Liveness::Ok);
    assert_eq!(result.verdict, Ok(Verdict::Pass));
    match &result.summary.ops[1].outcome {
        OpOutcome::Settle(SettleOutcome::Completed(Some(f))) => {
            assert_eq!(f.balance, Amount::from_units(150));
            assert_eq!(f.id, settle_fund_id(&[main_fund()]));
        }
        other => panic!("unexpected settle outcome {other:?}"),
    }
    let decisions = world.settle_decisions(&[main_fund()]);
    assert!(decisions.len() >= world.config().correct_quorum());
    let distinct: BTreeSet<_> = decisions.values().map(|(r, _)| *r).collect();
    assert_eq!(distinct.len(), 1, "correct validators disagree on F'");
}

#[test]
fn settle_without_pays_returns_full_balance() {
    let mut world = single_fund_world(desk_config(), 1, 160, 5);
    let buyer = client(&world, 0);
    let phases = vec![vec![WorkOp::Settle {
        buyer,
        funds: vec![main_fund()],
    }]];
    let result = world.run(&phases, &mut Passive::new(5));
    match &result.summary.ops[0].outcome {
        OpOutcome::Settle(SettleOutcome::Completed(Some(f))) => assert_eq!(f.balance, Amount::from_units(160)),
        other => panic!("unexpected settle outcome {other:?}"),
    }
    let settles = result.summary.ops[0].messages;
    let n = world.config().n as u64;
    assert_eq!(settles, n + n * (n - 1) + n);
}

#[test]
fn redeem_after_pays_merges_fractions() {
    let mut world = single_fund_world(desk_config(), 2, 160, 9);
    let seller = client(&world, 1);
    let phases = vec![
        vec![pay(&world, 0, 1)],
        vec![WorkOp::Redeem {
            seller,
            funds: vec![main_fund()],
        }],
    ];
    let result = world.run(&phases, &mut Passive::new(9));
    assert_eq!(result.liveness, Liveness::Ok);
    assert_eq!(result.verdict, Ok(Verdict::Pass));
    match &result.summary.ops[1].outcome {
        OpOutcome::Redeem(RedeemOutcome::Success(f)) => assert_eq!(f.balance, Amount::from_units(10)),
        other => panic!("unexpected redeem outcome {other:?}"),
    }
    let n = world.config().n as u64;
    assert_eq!(result.summary.ops[1].messages, 2 * n);
}

#[test]
fn redeem_batch_over_three_funds() {
    let genesis: Vec<GenesisFund> = (0..3)
        .map(|i| GenesisFund {
            name: format!("f{i}"),
            owners: vec![i],
            balance: Amount::from_units(32 * (i as u64 + 1)),
        })
        .collect();
    let mut world = World::new(desk_config(), &client_names(4), &genesis, 21, SimOptions::default());
    let seller = world.client_node(3);
    let funds: Vec<FundId> = (0..3).map(|i| FundId::genesis(&format!("f{i}"))).collect();
    let pays = (0..3)
        .map(|i| WorkOp::Pay {
            buyer: world.client_node(i),
            fund: funds[i],
            seller,
        })
        .collect();
    let phases = vec![pays, vec![WorkOp::Redeem { seller, funds: funds.clone() }]];
    let result = world.run(&phases, &mut Passive::new(21));
    assert_eq!(result.verdict, Ok(Verdict::Pass));
    match &result.summary.ops[3].outcome {
        OpOutcome::Redeem(RedeemOutcome::Success(f)) => assert_eq!(f.balance, Amount::from_units(2 + 4 + 6)),
        other => panic!("unexpected redeem outcome {other:?}"),
    }
}

#[test]
fn k1_concurrent_pays_to_distinct_sellers_mostly_succeed() {
    let cfg = sparse_config();
    let runs = 40;
    let mut full = 0;
    for seed in 0..runs {
        let mut world = single_fund_world(cfg, cfg.k1 + 1, 160, seed);
        let phases = vec![(1..=cfg.k1).map(|s| pay(&world, 0, s)).collect::<Vec<_>>()];
        let result = world.run(&phases, &mut Passive::new(seed));
        assert_eq!(result.verdict, Ok(Verdict::Pass));
        let accepted = result.summary.ops_of(OpKind::Pay).filter(|o| o.outcome.seller_accepted()).count();
        if accepted == cfg.k1 {
            full += 1;
        }
    }
    assert!(full >= runs - 4, "only {full}/{runs} runs accepted all k1 pays");
}

#[test]
fn exhausted_fund_settle_decisions_follow_their_counted_sets() {
    let cfg = desk_config();
    for seed in 0..6 {
        let mut world = single_fund_world(cfg, 2, 16, seed);
        let buyer = client(&world, 0);
        let mut phases: Vec<Vec<WorkOp>> = (0..cfg.s2).map(|_| vec![pay(&world, 0, 1)]).collect();
        phases.push(vec![WorkOp::Settle {
            buyer,
            funds: vec![main_fund()],
        }]);
        let result = world.run(&phases, &mut Passive::new(seed));
        assert_eq!(result.verdict, Ok(Verdict::Pass));
        let decisions = world.settle_decisions(&[main_fund()]);
        assert_eq!(decisions.len(), cfg.n);
        for (result, counted) in decisions.values() {
            let expected = 16 - counted.len() as u64;
            assert_eq!(result.map(|f| f.balance), (expected > 0).then(|| Amount::from_units(expected)));
        }
        let distinct: BTreeSet<_> = decisions.values().map(|(_, c)| c.clone()).collect();
        if distinct.len() > 1 {
            let all: BTreeSet<_> = distinct.iter().flatten().copied().collect();
            let common: BTreeSet<_> = all
                .iter()
                .copied()
                .filter(|t| distinct.iter().all(|c| c.contains(t)))
                .collect();
            for t in all.difference(&common) {
                let s = world.signers(t).len();
                assert!(s >= cfg.q && s < cfg.q + cfg.f, "tx with {s} signers split the decisions");
            }
        }
    }
}

#[test]
fn pay_from_settled_fund_is_not_validated() {
    let mut world = single_fund_world(desk_config(), 2, 160, 17);
    let buyer = client(&world, 0);
    let seller = client(&world, 1);
    let phases = vec![
        vec![WorkOp::Settle {
            buyer,
            funds: vec![main_fund()],
        }],
        vec![WorkOp::Pay {
            buyer,
            fund: settle_fund_id(&[main_fund()]),
            seller,
        }],
        vec![pay(&world, 0, 1)],
    ];
    let result = world.run(&phases, &mut Passive::new(17));
    assert_eq!(result.verdict, Ok(Verdict::Pass));
    assert_eq!(result.summary.ops[1].outcome.label(), "success/accepted");
    assert!(result.summary.ops[2].outcome.label().starts_with("precondition-error"));
}

#[test]
fn silent_validators_do_not_block_progress() {
    let cfg = desk_config();
    let mut world = single_fund_world(cfg, 2, 160, 23);
    let buyer = client(&world, 0);
    let seller = client(&world, 1);
    let phases = vec![
        vec![pay(&world, 0, 1)],
        vec![
            WorkOp::Settle {
                buyer,
                funds: vec![main_fund()],
            },
            WorkOp::Redeem {
                seller,
                funds: vec![main_fund()],
            },
        ],
    ];
    let result = world.run(&phases, &mut Passive::with_silent(23, Vec::new(), cfg.f));
    assert_eq!(world.corrupted().len(), cfg.f);
    assert_eq!(result.verdict, Ok(Verdict::Pass));
    assert_eq!(result.liveness, Liveness::Ok);
}

#[test]
fn rushing_reorder_preserves_safety_and_liveness() {
    let cfg = desk_config();
    for seed in 0..5 {
        let mut world = single_fund_world(cfg, 4, 160, seed);
        let buyer = client(&world, 0);
        let phases = vec![
            (1..4).map(|s| pay(&world, 0, s)).collect(),
            vec![WorkOp::Settle {
                buyer,
                funds: vec![main_fund()],
            }],
        ];
        let result = world.run(&phases, &mut RushingReorder::new(seed, cfg.f));
        assert_eq!(result.verdict, Ok(Verdict::Pass));
        assert_eq!(result.liveness, Liveness::Ok);
    }
}

#[test]
fn multi_owner_concurrent_pays_settle_to_a_consistent_subset() {
    let cfg = desk_config();
    for seed in 0..5 {
        let genesis = [GenesisFund {
            name: "shared".into(),
            owners: vec![0, 1, 2],
            balance: Amount::from_units(160),
        }];
        let mut world = World::new(cfg, &client_names(6), &genesis, seed, SimOptions::default());
        let fund = FundId::genesis("shared");
        let pays = (0..3)
            .map(|o| WorkOp::Pay {
                buyer: world.client_node(o),
                fund,
                seller: world.client_node(3 + o),
            })
            .collect();
        let phases = vec![
            pays,
            vec![WorkOp::Settle {
                buyer: world.client_node(0),
                funds: vec![fund],
            }],
        ];
        let result = world.run(&phases, &mut Passive::new(seed));
        assert_eq!(result.verdict, Ok(Verdict::Pass));
        let accepted = world.accepted(&fund) as u64;
        assert!(accepted <= 3);
        let decisions = world.settle_decisions(&[fund]);
        match &result.summary.ops[3].outcome {
            OpOutcome::Settle(SettleOutcome::Completed(Some(f))) => {
                let agreeing: Vec<_> = decisions.values().filter(|(r, _)| *r == Some(*f)).collect();
                assert!(agreeing.len() >= cfg.correct_quorum());
                let subset = agreeing[0].1.len() as u64;
                assert!(subset <= 3);
                assert_eq!(f.balance, Amount::from_units(160 - 10 * subset));
            }
            other => panic!("unexpected settle outcome {other:?}"),
        }
        let owners: BTreeSet<ClientId> = (0..3).map(|o| world.directory().key_of(world.client_node(o))).collect();
        assert_eq!(owners.len(), 3);
    }
}
