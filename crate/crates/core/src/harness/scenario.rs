//! Scenario files: TOML documents with `[params]`, `clients`, `[[fund]]`,
//! `[[phase]]`, `[adversary]`, `[inject]` and `[complexity]` sections.
//!
//! Workload operations are short strings:
//!
//! ```text
//! pay <buyer> <fund> <seller>
//! settle <buyer> <fund>...
//! redeem <seller> <fund>...
//! ```
//!
//! A fund is a genesis fund name or `settled:<name>[+<name>...]`, the fund
//! created by settling those genesis funds together.

use crate::params::{derive_params, ParamInputs, SystemConfig};
use crate::protocol::{settle_fund_id, NodeId};
use crate::sim::{GenesisFund, WorkOp};
use crate::types::{Amount, FundId, MICROS_PER_UNIT};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Diagnostic anchored to a line of the scenario source when one is known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioError {
    pub origin: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.origin, l, self.message),
            None => write!(f, "{}: {}", self.origin, self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "one")]
    trials: usize,
    params: ParamInputs,
    #[serde(default)]
    clients: Vec<String>,
    #[serde(default)]
    fund: Vec<RawFund>,
    #[serde(default)]
    phase: Vec<RawPhase>,
    #[serde(default)]
    adversary: Option<RawAdversary>,
    #[serde(default)]
    inject: Option<RawInject>,
    #[serde(default)]
    complexity: Option<RawComplexity>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFund {
    name: String,
    owners: Vec<String>,
    /// Whole currency units.
    balance: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase {
    ops: Vec<String>,
    #[serde(default = "one")]
    repeat: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
enum RawAdversary {
    Passive {
        #[serde(default)]
        silent_clients: Vec<String>,
        #[serde(default)]
        silent_validators: usize,
    },
    RushingReorder {
        #[serde(default)]
        corrupt_validators: usize,
    },
    QuorumEraser {},
    Overspender {
        buyer: String,
        fund: String,
        sellers: Vec<String>,
        pays: Option<usize>,
        #[serde(default)]
        colluders: usize,
    },
    NonceGrinder {
        seller: String,
        budget: usize,
        #[serde(default)]
        corrupt_validators: usize,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInject {
    double_spend: String,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComplexity {
    n_values: Vec<usize>,
    f_ratio: f64,
}

/// Adversary selection with references resolved to node ids.
#[derive(Clone, Debug, PartialEq)]
pub enum AdversarySpec {
    Passive { silent: Vec<NodeId>, silent_validators: usize },
    RushingReorder { corrupt_validators: usize },
    QuorumEraser,
    Overspender {
        buyer: NodeId,
        fund: FundId,
        sellers: Vec<NodeId>,
        pays: usize,
        colluders: usize,
    },
    NonceGrinder {
        seller: NodeId,
        budget: usize,
        corrupt_validators: usize,
    },
}

impl AdversarySpec {
    pub fn name(&self) -> &'static str {
        match self {
            AdversarySpec::Passive { .. } => "passive",
            AdversarySpec::RushingReorder { .. } => "rushing_reorder",
            AdversarySpec::QuorumEraser => "quorum_eraser",
            AdversarySpec::Overspender { .. } => "overspender",
            AdversarySpec::NonceGrinder { .. } => "nonce_grinder",
        }
    }
}

/// Sweep over `n` with `f = floor(n·f_ratio)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexitySpec {
    pub n_values: Vec<usize>,
    pub f_ratio: f64,
}

/// Validated scenario with every reference resolved.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub trials: usize,
    pub inputs: ParamInputs,
    pub config: SystemConfig,
    pub clients: Vec<String>,
    pub genesis: Vec<GenesisFund>,
    /// Operations by client index; see [`Scenario::phases_for`].
    workload: Vec<Vec<ClientOp>>,
    pub adversary: AdversarySpec,
    /// Genesis fund receiving a synthetic double spend after every trial.
    pub inject_double_spend: Option<FundId>,
    pub complexity: Option<ComplexitySpec>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum ClientOp {
    Pay { buyer: usize, fund: FundId, seller: usize },
    Settle { buyer: usize, funds: Vec<FundId> },
    Redeem { seller: usize, funds: Vec<FundId> },
}

impl Scenario {
    /// Workload phases for a configuration with `n` validators.
    pub fn phases_for(&self, n: usize) -> Vec<Vec<WorkOp>> {
        let node = |c: usize| NodeId((n + c) as u32);
        self.workload
            .iter()
            .map(|ops| {
                ops.iter()
                    .map(|op| match op {
                        ClientOp::Pay { buyer, fund, seller } => WorkOp::Pay {
                            buyer: node(*buyer),
                            fund: *fund,
                            seller: node(*seller),
                        },
                        ClientOp::Settle { buyer, funds } => WorkOp::Settle {
                            buyer: node(*buyer),
                            funds: funds.clone(),
                        },
                        ClientOp::Redeem { seller, funds } => WorkOp::Redeem {
                            seller: node(*seller),
                            funds: funds.clone(),
                        },
                    })
                    .collect()
            })
            .collect()
    }

    pub fn phases(&self) -> Vec<Vec<WorkOp>> {
        self.phases_for(self.config.n)
    }

    /// Same scenario with `n` and `f` replaced.
    pub fn with_size(&self, n: usize, f: usize) -> Result<Scenario, crate::params::ConfigError> {
        let inputs = ParamInputs { n, f, ..self.inputs };
        let config = derive_params(&inputs)?;
        let mut s = self.clone();
        s.inputs = inputs;
        s.config = config;
        s.adversary = rebase(&self.adversary, self.config.n, n);
        Ok(s)
    }
}

fn rebase(spec: &AdversarySpec, old: usize, new: usize) -> AdversarySpec {
    let shift = |id: NodeId| NodeId((id.index() - old + new) as u32);
    match spec.clone() {
        AdversarySpec::Passive {
            silent,
            silent_validators,
        } => AdversarySpec::Passive {
            silent: silent.into_iter().map(shift).collect(),
            silent_validators,
        },
        AdversarySpec::Overspender {
            buyer,
            fund,
            sellers,
            pays,
            colluders,
        } => AdversarySpec::Overspender {
            buyer: shift(buyer),
            fund,
            sellers: sellers.into_iter().map(shift).collect(),
            pays,
            colluders,
        },
        AdversarySpec::NonceGrinder {
            seller,
            budget,
            corrupt_validators,
        } => AdversarySpec::NonceGrinder {
            seller: shift(seller),
            budget,
            corrupt_validators,
        },
        other => other,
    }
}

pub fn load_scenario(path: &Path, overrides: &[String]) -> Result<Scenario, ScenarioError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
        origin: origin.clone(),
        line: None,
        message: format!("cannot read scenario: {e}"),
    })?;
    parse_scenario(&text, &origin, overrides)
}

/// Parse and validate a scenario. Each override is `dotted.key=value`, the
/// value being a TOML literal or a bare string.
pub fn parse_scenario(text: &str, origin: &str, overrides: &[String]) -> Result<Scenario, ScenarioError> {
    let err = |line: Option<usize>, message: String| ScenarioError {
        origin: origin.to_string(),
        line,
        message,
    };
    let line_of_offset = |offset: usize| text[..offset.min(text.len())].matches('\n').count() + 1;
    let mut raw: RawScenario = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(s.start));
        err(line, e.message().to_string())
    })?;
    if !overrides.is_empty() {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| err(None, e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o).map_err(|m| err(None, format!("override `{o}`: {m}")))?;
        }
        raw = RawScenario::deserialize(toml::Value::Table(table))
            .map_err(|e| err(None, format!("after overrides: {}", e.message())))?;
    }
    let find_line = |needle: &str| {
        text.lines()
            .position(|l| l.contains(needle))
            .map(|i| i + 1)
    };

    if raw.trials == 0 {
        return Err(err(find_line("trials"), "trials must be ≥ 1".into()));
    }
    let config = derive_params(&raw.params).map_err(|e| err(find_line("[params]"), format!("invalid parameters ({}): {e}", e.rule())))?;

    let mut client_index = BTreeMap::new();
    for (i, c) in raw.clients.iter().enumerate() {
        if client_index.insert(c.clone(), i).is_some() {
            return Err(err(find_line(&format!("\"{c}\"")), format!("duplicate client `{c}`")));
        }
    }
    let client = |name: &str| {
        client_index
            .get(name)
            .copied()
            .ok_or_else(|| err(find_line(name), format!("unknown client `{name}`")))
    };

    let mut genesis = Vec::new();
    let mut fund_names = BTreeMap::new();
    for f in &raw.fund {
        if fund_names.insert(f.name.clone(), FundId::genesis(&f.name)).is_some() {
            return Err(err(find_line(&format!("\"{}\"", f.name)), format!("duplicate fund `{}`", f.name)));
        }
        if f.owners.is_empty() {
            return Err(err(find_line(&format!("\"{}\"", f.name)), format!("fund `{}` has no owners", f.name)));
        }
        let owners = f.owners.iter().map(|o| client(o)).collect::<Result<Vec<_>, _>>()?;
        let micros = f
            .balance
            .checked_mul(MICROS_PER_UNIT)
            .ok_or_else(|| err(find_line(&format!("\"{}\"", f.name)), "balance overflows".into()))?;
        genesis.push(GenesisFund {
            name: f.name.clone(),
            owners,
            balance: Amount(micros),
        });
    }
    let fund = |token: &str| -> Result<FundId, ScenarioError> {
        if let Some(rest) = token.strip_prefix("settled:") {
            let ids = rest
                .split('+')
                .map(|n| {
                    fund_names
                        .get(n)
                        .copied()
                        .ok_or_else(|| err(find_line(token), format!("unknown fund `{n}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(settle_fund_id(&ids));
        }
        fund_names
            .get(token)
            .copied()
            .ok_or_else(|| err(find_line(token), format!("unknown fund `{token}`")))
    };

    let mut workload = Vec::new();
    for p in &raw.phase {
        if p.repeat == 0 {
            return Err(err(find_line("repeat"), "repeat must be ≥ 1".into()));
        }
        let mut ops = Vec::new();
        for op in &p.ops {
            let line = find_line(op);
            let words: Vec<&str> = op.split_whitespace().collect();
            let parsed = match words.as_slice() {
                ["pay", buyer, f, seller] => ClientOp::Pay {
                    buyer: client(buyer)?,
                    fund: fund(f)?,
                    seller: client(seller)?,
                },
                ["settle", buyer, funds @ ..] if !funds.is_empty() => ClientOp::Settle {
                    buyer: client(buyer)?,
                    funds: funds.iter().map(|f| fund(f)).collect::<Result<_, _>>()?,
                },
                ["redeem", seller, funds @ ..] if !funds.is_empty() => ClientOp::Redeem {
                    seller: client(seller)?,
                    funds: funds.iter().map(|f| fund(f)).collect::<Result<_, _>>()?,
                },
                _ => return Err(err(line, format!("malformed operation `{op}`"))),
            };
            ops.push(parsed);
        }
        for _ in 0..p.repeat {
            workload.push(ops.clone());
        }
    }

    let node = |c: usize| NodeId((config.n + c) as u32);
    let adversary = match raw.adversary.clone().unwrap_or(RawAdversary::Passive {
        silent_clients: Vec::new(),
        silent_validators: 0,
    }) {
        RawAdversary::Passive {
            silent_clients,
            silent_validators,
        } => AdversarySpec::Passive {
            silent: silent_clients
                .iter()
                .map(|c| client(c).map(node))
                .collect::<Result<_, _>>()?,
            silent_validators,
        },
        RawAdversary::RushingReorder { corrupt_validators } => AdversarySpec::RushingReorder { corrupt_validators },
        RawAdversary::QuorumEraser {} => AdversarySpec::QuorumEraser,
        RawAdversary::Overspender {
            buyer,
            fund: f,
            sellers,
            pays,
            colluders,
        } => {
            if sellers.is_empty() {
                return Err(err(find_line("sellers"), "overspender needs at least one seller".into()));
            }
            AdversarySpec::Overspender {
                buyer: node(client(&buyer)?),
                fund: fund(&f)?,
                sellers: sellers.iter().map(|s| client(s).map(node)).collect::<Result<_, _>>()?,
                pays: pays.unwrap_or(2 * config.k2),
                colluders,
            }
        }
        RawAdversary::NonceGrinder {
            seller,
            budget,
            corrupt_validators,
        } => {
            if budget == 0 {
                return Err(err(find_line("budget"), "budget must be ≥ 1".into()));
            }
            AdversarySpec::NonceGrinder {
                seller: node(client(&seller)?),
                budget,
                corrupt_validators,
            }
        }
    };
    let corrupt_request = match &adversary {
        AdversarySpec::Passive { silent_validators, .. } => *silent_validators,
        AdversarySpec::RushingReorder { corrupt_validators } => *corrupt_validators,
        AdversarySpec::Overspender { colluders, .. } => *colluders,
        AdversarySpec::NonceGrinder { corrupt_validators, .. } => *corrupt_validators,
        AdversarySpec::QuorumEraser => 0,
    };
    if corrupt_request > config.f {
        return Err(err(
            find_line("[adversary]"),
            format!("adversary requests {corrupt_request} corrupted validators but f = {}", config.f),
        ));
    }

    let inject_double_spend = match &raw.inject {
        Some(i) => Some(fund(&i.double_spend)?),
        None => None,
    };
    let complexity = match raw.complexity {
        Some(c) => {
            if c.n_values.len() < 2 {
                return Err(err(find_line("n_values"), "complexity sweep needs at least two sizes".into()));
            }
            if !(c.f_ratio > 0.0 && c.f_ratio < 0.125) {
                return Err(err(find_line("f_ratio"), format!("f_ratio must lie in (0, 1/8), got {}", c.f_ratio)));
            }
            Some(ComplexitySpec {
                n_values: c.n_values,
                f_ratio: c.f_ratio,
            })
        }
        None => None,
    };

    Ok(Scenario {
        name: raw.name.unwrap_or_else(|| origin.to_string()),
        seed: raw.seed,
        trials: raw.trials,
        inputs: raw.params,
        config,
        clients: raw.clients,
        genesis,
        workload,
        adversary,
        inject_double_spend,
        complexity,
    })
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| "expected key=value".to_string())?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err("empty key segment".into());
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("`{p}` is not a table"))?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}
