//! Scenario execution, aggregation and reporting.

mod experiments;
mod scenario;

pub use experiments::{
    binomial_max_cdf, binomial_max_mean, complexity_sweep, selection_stats, ComplexityReport, ComplexityRow,
    StatsReport,
};
pub use scenario::{load_scenario, parse_scenario, AdversarySpec, ComplexitySpec, Scenario, ScenarioError};

use crate::adversary::{NonceGrinder, Overspender, Passive, QuorumEraser, RushingReorder};
use crate::ledger::{conformance_check, TraceEvent, Verdict};
use crate::params::SystemConfig;
use crate::sim::{Liveness, Policy, RunResult, SimOptions, World, DEFAULT_STEP_BUDGET};
use crate::types::FundId;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

pub const TOOL: &str = concat!("fracspend ", env!("CARGO_PKG_VERSION"));

/// Environment variable replacing the default event budget.
pub const STEP_BUDGET_VAR: &str = "SIM_STEP_BUDGET";

/// Process exit status of a harness command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Safety = 1,
    Parse = 2,
    Liveness = 3,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Simulator options honouring [`STEP_BUDGET_VAR`].
pub fn sim_options_from_env() -> Result<SimOptions, String> {
    let mut opts = SimOptions::default();
    if let Ok(v) = std::env::var(STEP_BUDGET_VAR) {
        opts.step_budget = v
            .trim()
            .parse()
            .map_err(|_| format!("{STEP_BUDGET_VAR} must be a positive integer, got `{v}`"))?;
        if opts.step_budget == 0 {
            return Err(format!("{STEP_BUDGET_VAR} must be ≥ 1"));
        }
    } else {
        opts.step_budget = DEFAULT_STEP_BUDGET;
    }
    Ok(opts)
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index`: the `index+1`-th output of a SplitMix64 stream
/// started at `base`.
pub fn trial_seed(base: u64, index: usize) -> u64 {
    splitmix64(base.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Run `f` over `0..trials` in index order on `jobs` workers; `jobs == 1`
/// stays on the calling thread and `jobs == 0` uses every core.
pub fn run_indexed<T, F>(trials: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if jobs == 1 {
        return (0..trials).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("worker pool");
    pool.install(|| (0..trials).into_par_iter().map(f).collect())
}

pub fn build_policy(spec: &AdversarySpec, seed: u64) -> Box<dyn Policy> {
    match spec.clone() {
        AdversarySpec::Passive {
            silent,
            silent_validators,
        } => Box::new(Passive::with_silent(seed, silent, silent_validators)),
        AdversarySpec::RushingReorder { corrupt_validators } => Box::new(RushingReorder::new(seed, corrupt_validators)),
        AdversarySpec::QuorumEraser => Box::new(QuorumEraser::new(seed)),
        AdversarySpec::Overspender {
            buyer,
            fund,
            sellers,
            pays,
            colluders,
        } => Box::new(Overspender::new(seed, buyer, fund, sellers, pays, colluders)),
        AdversarySpec::NonceGrinder {
            seller,
            budget,
            corrupt_validators,
        } => Box::new(NonceGrinder::new(seed, seller, budget, corrupt_validators)),
    }
}

/// Seeds span all of `u64`, beyond the signed TOML integer range.
pub(crate) fn hex_seed<S: serde::Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{seed:#018x}"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpReport {
    pub phase: usize,
    pub kind: String,
    pub actor: u32,
    pub outcome: String,
    pub messages: u64,
    pub max_depth: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seller_depth: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub buyer_depth: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialReport {
    pub index: usize,
    #[serde(serialize_with = "hex_seed")]
    pub seed: u64,
    pub steps: u64,
    pub safety_pass: bool,
    pub safety: String,
    pub live: bool,
    pub liveness: String,
    pub total_messages: u64,
    pub messages: BTreeMap<String, u64>,
    /// Genesis fund name to number of accepted transactions.
    pub accepted_per_fund: BTreeMap<String, usize>,
    pub corrupted: Vec<u32>,
    pub policy: BTreeMap<String, String>,
    pub ops: Vec<OpReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub safety_pass_rate: f64,
    pub liveness_ok_rate: f64,
    pub messages_mean: BTreeMap<String, f64>,
    pub messages_std: BTreeMap<String, f64>,
    /// Mean messages per operation of each kind.
    pub op_messages_mean: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub scenario: String,
    #[serde(serialize_with = "hex_seed")]
    pub seed: u64,
    pub trials: usize,
    pub policy: String,
    pub config: SystemConfig,
    pub aggregate: Aggregate,
    pub trial: Vec<TrialReport>,
}

impl RunReport {
    pub fn exit(&self) -> Exit {
        if self.trial.iter().any(|t| !t.safety_pass) {
            Exit::Safety
        } else if self.trial.iter().any(|t| !t.live) {
            Exit::Liveness
        } else {
            Exit::Ok
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("reports serialize")
    }
}

/// Result of one trial with the raw simulator output.
pub struct Trial {
    pub report: TrialReport,
    pub result: RunResult,
}

/// Append `s2 + 1` accepted payments of `fund` to the trace, a double spend
/// for any owner.
pub fn inject_double_spend(trace: &mut Vec<TraceEvent>, world: &World, fund: FundId) {
    let (_, ownership) = world.initial_state();
    let buyer = *ownership
        .get(&fund)
        .and_then(|o| o.iter().next())
        .expect("injected fund is a genesis fund with owners");
    let seller = world.directory().client_ids().map(|c| world.directory().key_of(c)).find(|k| *k != buyer).unwrap_or(buyer);
    for _ in 0..=world.config().s2 {
        trace.push(TraceEvent::AcceptedPay { fund, buyer, seller });
    }
}

pub fn run_trial(scn: &Scenario, index: usize, options: SimOptions) -> Trial {
    let seed = trial_seed(scn.seed, index);
    let mut world = World::new(scn.config, &scn.clients, &scn.genesis, seed, options);
    let mut policy = build_policy(&scn.adversary, seed);
    let mut result = world.run(&scn.phases(), policy.as_mut());
    if let Some(fund) = scn.inject_double_spend {
        inject_double_spend(&mut result.trace, &world, fund);
        let (state, ownership) = world.initial_state();
        result.verdict = conformance_check(&result.trace, &state, &ownership, scn.config.s2);
    }
    let names: BTreeMap<FundId, &str> = scn.genesis.iter().map(|g| (FundId::genesis(&g.name), g.name.as_str())).collect();
    let s = &result.summary;
    let (safety_pass, safety) = match &result.verdict {
        Ok(Verdict::Pass) => (true, "pass".to_string()),
        Ok(Verdict::Fail { clause, detail }) => (false, format!("fail {}: {detail}", clause.name())),
        Err(e) => (false, format!("malformed: {e}")),
    };
    let (live, liveness) = match result.liveness {
        Liveness::Ok => (true, "ok".to_string()),
        Liveness::NonQuiescence => (false, "non-quiescence".to_string()),
        Liveness::Stalled(k) => (false, format!("stalled {k}")),
    };
    let report = TrialReport {
        index,
        seed,
        steps: s.steps,
        safety_pass,
        safety,
        live,
        liveness,
        total_messages: s.total_messages(),
        messages: s.messages.clone(),
        accepted_per_fund: s
            .accepted_per_fund
            .iter()
            .map(|(f, k)| (names.get(f).map_or_else(|| f.0.to_string(), |n| n.to_string()), *k))
            .collect(),
        corrupted: s.corrupted.iter().map(|n| n.0).collect(),
        policy: s.policy_report.clone(),
        ops: s
            .ops
            .iter()
            .map(|o| OpReport {
                phase: o.phase,
                kind: o.kind.name().to_string(),
                actor: o.actor.0,
                outcome: o.outcome.label(),
                messages: o.messages,
                max_depth: o.max_depth,
                seller_depth: o.seller_depth,
                buyer_depth: o.buyer_depth,
            })
            .collect(),
    };
    Trial { report, result }
}

fn mean_std(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn aggregate(trials: &[TrialReport]) -> Aggregate {
    let t = trials.len().max(1) as f64;
    let kinds: Vec<String> = trials.first().map(|r| r.messages.keys().cloned().collect()).unwrap_or_default();
    let mut messages_mean = BTreeMap::new();
    let mut messages_std = BTreeMap::new();
    for k in kinds {
        let (m, s) = mean_std(trials.iter().map(|r| r.messages.get(&k).copied().unwrap_or(0) as f64));
        messages_mean.insert(k.clone(), m);
        messages_std.insert(k, s);
    }
    let mut op_messages_mean = BTreeMap::new();
    for kind in ["pay", "settle", "redeem"] {
        let mut ops = trials.iter().flat_map(|r| r.ops.iter()).filter(|o| o.kind == kind).peekable();
        if ops.peek().is_some() {
            let (m, _) = mean_std(ops.map(|o| o.messages as f64));
            op_messages_mean.insert(kind.to_string(), m);
        }
    }
    Aggregate {
        safety_pass_rate: trials.iter().filter(|r| r.safety_pass).count() as f64 / t,
        liveness_ok_rate: trials.iter().filter(|r| r.live).count() as f64 / t,
        messages_mean,
        messages_std,
        op_messages_mean,
    }
}

/// Run every trial of `scn`; the report does not depend on `jobs`.
pub fn run_scenario(scn: &Scenario, jobs: usize, options: SimOptions) -> RunReport {
    let trials = run_indexed(scn.trials, jobs, |i| run_trial(scn, i, options).report);
    RunReport {
        tool: TOOL.to_string(),
        scenario: scn.name.clone(),
        seed: scn.seed,
        trials: scn.trials,
        policy: scn.adversary.name().to_string(),
        config: scn.config,
        aggregate: aggregate(&trials),
        trial: trials,
    }
}
