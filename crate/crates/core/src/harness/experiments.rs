use super::{run_indexed, run_trial, Scenario, TOOL};
use crate::params::{chernoff_lower_tail, SystemConfig};
use crate::quorum::SecretQuorum;
use crate::rvrf::{keygen, KeyPair, ModelRvrf};
use crate::sim::SimOptions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

/// Transaction bytes every selection trial is evaluated on.
const STATS_DATA: &[u8] = b"selection statistics";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatsReport {
    pub tool: String,
    pub scenario: String,
    #[serde(serialize_with = "super::hex_seed")]
    pub seed: u64,
    pub trials: usize,
    pub n: usize,
    pub v: usize,
    pub k: usize,
    pub eta: f64,
    pub k_prime: f64,
    pub threshold: u64,
    pub mean_selected: f64,
    pub shortfalls: usize,
    pub observed_shortfall: f64,
    pub chernoff_bound: f64,
    /// Binomial standard error at the bound.
    pub standard_error: f64,
    pub limit: f64,
    pub pass: bool,
}

impl StatsReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("reports serialize")
    }

    pub fn table(&self) -> String {
        format!(
            "k = {}  eta = {}  V = {}  trials = {}\nmean selected      {:.3}\nP(selected < k)    {:.5}  ({} / {})\nchernoff bound     {:.5}\nbound + 3 s.e.     {:.5}\nresult             {}\n",
            self.k,
            self.eta,
            self.v,
            self.trials,
            self.mean_selected,
            self.observed_shortfall,
            self.shortfalls,
            self.trials,
            self.chernoff_bound,
            self.limit,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

fn validator_keys(n: usize) -> Vec<KeyPair> {
    (0..n).map(|i| keygen(format!("validator/{i}").as_bytes())).collect()
}

/// Selected-candidate count under a fresh nonce for each trial, on fixed data.
pub fn selection_counts(cfg: &SystemConfig, seed: u64, trials: usize, jobs: usize) -> Vec<usize> {
    let keys = validator_keys(cfg.n);
    let publics: Vec<_> = keys.iter().map(|k| k.public).collect();
    let provider_seed = seed.to_be_bytes();
    let build = || SecretQuorum::new(*cfg, publics.clone(), ModelRvrf::new(cfg.max, &provider_seed));
    let count = |sq: &SecretQuorum<ModelRvrf>, i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(super::trial_seed(seed, i));
        let nonce: [u8; 32] = rng.gen();
        let ring = sq.candidates(STATS_DATA);
        keys.iter()
            .filter(|kp| ring.contains(&kp.public))
            .filter(|kp| sq.selection(STATS_DATA, &nonce, kp).is_some())
            .count()
    };
    if jobs == 1 {
        let sq = build();
        return (0..trials).map(|i| count(&sq, i)).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("worker pool");
    pool.install(|| (0..trials).into_par_iter().map_init(build, |sq, i| count(sq, i)).collect())
}

/// Observed selection shortfall against the Chernoff bound.
pub fn selection_stats(scn: &Scenario, jobs: usize) -> StatsReport {
    let cfg = &scn.config;
    let counts = selection_counts(cfg, scn.seed, scn.trials, jobs);
    let t = scn.trials as f64;
    let shortfalls = counts.iter().filter(|&&c| c < cfg.k).count();
    let bound = chernoff_lower_tail(cfg.k, cfg.eta).expect("validated parameters");
    let se = (bound * (1.0 - bound) / t).sqrt();
    let observed = shortfalls as f64 / t;
    let limit = bound + 3.0 * se;
    StatsReport {
        tool: TOOL.to_string(),
        scenario: scn.name.clone(),
        seed: scn.seed,
        trials: scn.trials,
        n: cfg.n,
        v: cfg.v,
        k: cfg.k,
        eta: cfg.eta,
        k_prime: cfg.k_prime,
        threshold: crate::params::vrf_threshold(cfg),
        mean_selected: counts.iter().sum::<usize>() as f64 / t,
        shortfalls,
        observed_shortfall: observed,
        chernoff_bound: bound,
        standard_error: se,
        limit,
        pass: observed <= limit,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub n: usize,
    pub f: usize,
    pub pay: f64,
    pub settle: f64,
    pub redeem: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pay_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settle_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub redeem_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub tool: String,
    pub scenario: String,
    #[serde(serialize_with = "super::hex_seed")]
    pub seed: u64,
    pub trials: usize,
    pub tolerance: f64,
    pub pass: bool,
    pub row: Vec<ComplexityRow>,
}

impl ComplexityReport {
    /// Relative tolerance on every doubling ratio.
    pub const TOLERANCE: f64 = 0.15;

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("reports serialize")
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:>6} {:>4} {:>10} {:>12} {:>10} {:>8} {:>8} {:>8}\n", "n", "f", "pay", "settle", "redeem", "x pay", "x settle", "x redeem");
        let r = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        for row in &self.row {
            s += &format!(
                "{:>6} {:>4} {:>10.2} {:>12.2} {:>10.2} {:>8} {:>8} {:>8}\n",
                row.n,
                row.f,
                row.pay,
                row.settle,
                row.redeem,
                r(row.pay_ratio),
                r(row.settle_ratio),
                r(row.redeem_ratio)
            );
        }
        s += if self.pass { "result PASS\n" } else { "result FAIL\n" };
        s
    }
}

fn within(ratio: f64, target: f64, tol: f64) -> bool {
    (ratio - target).abs() <= tol * target
}

/// Mean messages per pay, settle and redeem operation for each `n` of the
/// sweep; doubling `n` must scale them by 1, 4 and 2.
pub fn complexity_sweep(scn: &Scenario, jobs: usize, options: SimOptions) -> Result<ComplexityReport, String> {
    let spec = scn.complexity.as_ref().ok_or("scenario has no [complexity] section")?;
    let mut rows: Vec<ComplexityRow> = Vec::new();
    for &n in &spec.n_values {
        let f = (n as f64 * spec.f_ratio).floor() as usize;
        let sized = scn.with_size(n, f).map_err(|e| format!("n = {n}, f = {f}: {e}"))?;
        let reports = run_indexed(sized.trials, jobs, |i| run_trial(&sized, i, options).report);
        let mean = |kind: &str| {
            let v: Vec<f64> = reports
                .iter()
                .flat_map(|r| r.ops.iter())
                .filter(|o| o.kind == kind)
                .map(|o| o.messages as f64)
                .collect();
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let (pay, settle, redeem) = (mean("pay"), mean("settle"), mean("redeem"));
        let prev = rows.last();
        rows.push(ComplexityRow {
            n,
            f,
            pay,
            settle,
            redeem,
            pay_ratio: prev.map(|p| pay / p.pay),
            settle_ratio: prev.map(|p| settle / p.settle),
            redeem_ratio: prev.map(|p| redeem / p.redeem),
        });
    }
    let tol = ComplexityReport::TOLERANCE;
    let pass = rows.windows(2).all(|w| {
        let (a, b) = (&w[0], &w[1]);
        let scale = b.n as f64 / a.n as f64;
        within(b.pay / a.pay, 1.0, tol)
            && within(b.settle / a.settle, scale * scale, tol)
            && within(b.redeem / a.redeem, scale, tol)
    });
    Ok(ComplexityReport {
        tool: TOOL.to_string(),
        scenario: scn.name.clone(),
        seed: scn.seed,
        trials: scn.trials,
        tolerance: tol,
        pass,
        row: rows,
    })
}

/// `P(max of b draws of Bin(c, p) ≤ x)`.
pub fn binomial_max_cdf(c: u64, p: f64, b: u64, x: u64) -> f64 {
    let bin = Binomial::new(p, c).expect("valid binomial");
    bin.cdf(x).powf(b as f64)
}

/// `E[max of b draws of Bin(c, p)]`.
pub fn binomial_max_mean(c: u64, p: f64, b: u64) -> f64 {
    (0..c).map(|x| 1.0 - binomial_max_cdf(c, p, b, x)).sum()
}
