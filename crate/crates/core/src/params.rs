//! Numeric parameters of the (k1, k2)-quorum system and of VRF self-selection.
//!
//! Every derived quantity is computed once by [`derive_params`] and carried in an
//! immutable [`SystemConfig`]. Rounding is fixed here: the proof threshold `q`
//! rounds up, the response count `w` and the VRF threshold round down.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ratio between the VRF output range and the candidate count.
pub const MAX_PER_CANDIDATE: u64 = 1_000_000;

/// Violated configuration rule.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0} must be ≥ 1")]
    NotPositive(&'static str),
    #[error("{name} must lie in (0, 1), got {value}")]
    FractionOutOfRange { name: &'static str, value: f64 },
    #[error("gamma must be > 0, got {0}")]
    GammaNotPositive(f64),
    #[error("n > 8f violated (n = {n}, f = {f})")]
    Resilience { n: usize, f: usize },
    #[error("m < f violated (m = {m}, f = {f})")]
    QuorumNotBelowCorruption { m: usize, f: usize },
    #[error("s1 ≤ s2 violated (k1 = {k1}, k2 = {k2})")]
    ConcurrencyOrder { k1: usize, k2: usize },
    #[error("m ≤ V ≤ n violated (m = {m}, V = {v}, n = {n})")]
    CandidateCount { m: usize, v: usize, n: usize },
    #[error("k' ≤ V violated (k' = {k_prime}, V = {v})")]
    InflatedTarget { k_prime: f64, v: usize },
    #[error("q ≤ w violated (q = {q}, w = {w})")]
    ProofAboveWait { q: usize, w: usize },
    #[error("MAX ≥ 10^6·V violated (MAX = {max}, V = {v})")]
    OutputRange { max: u64, v: usize },
    #[error("threshold underflow (k'·MAX/V = {0})")]
    ThresholdUnderflow(f64),
}

impl ConfigError {
    /// Stable short name of the violated rule, used in reports.
    pub fn rule(&self) -> &'static str {
        match self {
            ConfigError::NotPositive(_) => "positive",
            ConfigError::FractionOutOfRange { .. } => "fraction-range",
            ConfigError::GammaNotPositive(_) => "gamma-positive",
            ConfigError::Resilience { .. } => "n>8f",
            ConfigError::QuorumNotBelowCorruption { .. } => "m<f",
            ConfigError::ConcurrencyOrder { .. } => "s1<=s2",
            ConfigError::CandidateCount { .. } => "m<=V<=n",
            ConfigError::InflatedTarget { .. } => "k'<=V",
            ConfigError::ProofAboveWait { .. } => "q<=w",
            ConfigError::OutputRange { .. } => "MAX>=1e6V",
            ConfigError::ThresholdUnderflow(_) => "threshold-underflow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("eta must lie in (0, 1) and k ≥ 1 (k = {k}, eta = {eta})")]
pub struct DomainError {
    pub k: usize,
    pub eta: f64,
}

/// Raw inputs of [`derive_params`], as written in a scenario `[params]` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamInputs {
    pub n: usize,
    pub f: usize,
    pub m: usize,
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub k1: usize,
    pub k2: usize,
    pub v: usize,
}

/// Validated protocol parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SystemConfig {
    pub n: usize,
    pub f: usize,
    pub m: usize,
    /// Target number of selected validators; always equal to `m`.
    pub k: usize,
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Upper-intersection fraction. Carried for reporting only.
    pub alpha: f64,
    pub k1: usize,
    pub k2: usize,
    pub v: usize,
    pub max: u64,
    pub k_prime: f64,
    pub q: usize,
    pub w: usize,
    pub s1: usize,
    pub s2: usize,
}

/// Snap values that are within floating-point noise of an integer onto it, so
/// that `(1 - 0.4) * 10` rounds as 6 in both directions.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x
    }
}

fn check_fraction(name: &'static str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(ConfigError::FractionOutOfRange { name, value })
    }
}

/// Derive and validate the full parameter set.
pub fn derive_params(inputs: &ParamInputs) -> Result<SystemConfig, ConfigError> {
    let ParamInputs {
        n,
        f,
        m,
        eta,
        gamma,
        beta,
        alpha,
        k1,
        k2,
        v,
    } = *inputs;

    for (name, value) in [("m", m), ("n", n), ("f", f), ("k1", k1), ("k2", k2), ("V", v)] {
        if value == 0 {
            return Err(ConfigError::NotPositive(name));
        }
    }
    check_fraction("eta", eta)?;
    check_fraction("beta", beta)?;
    check_fraction("alpha", alpha)?;
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(ConfigError::GammaNotPositive(gamma));
    }

    let k = m;
    let k_prime = k as f64 / (1.0 - eta);
    let q = snap((1.0 - beta) * m as f64).ceil() as usize;
    let w_real = m as f64 - (1.0 + gamma) * (f as f64 / n as f64) * m as f64;
    let w = snap(w_real).floor().max(0.0) as usize;
    let max = MAX_PER_CANDIDATE * v as u64;

    let cfg = SystemConfig {
        n,
        f,
        m,
        k,
        eta,
        gamma,
        beta,
        alpha,
        k1,
        k2,
        v,
        max,
        k_prime,
        q,
        w,
        s1: k1,
        s2: k2,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl SystemConfig {
    /// Check every structural invariant.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.m == 0 {
            return Err(ConfigError::NotPositive("m"));
        }
        if self.n <= 8 * self.f {
            return Err(ConfigError::Resilience {
                n: self.n,
                f: self.f,
            });
        }
        if self.m >= self.f {
            return Err(ConfigError::QuorumNotBelowCorruption {
                m: self.m,
                f: self.f,
            });
        }
        if self.s1 > self.s2 {
            return Err(ConfigError::ConcurrencyOrder {
                k1: self.k1,
                k2: self.k2,
            });
        }
        if self.v < self.m || self.v > self.n {
            return Err(ConfigError::CandidateCount {
                m: self.m,
                v: self.v,
                n: self.n,
            });
        }
        if snap(self.k_prime) > self.v as f64 {
            return Err(ConfigError::InflatedTarget {
                k_prime: self.k_prime,
                v: self.v,
            });
        }
        if self.max < MAX_PER_CANDIDATE * self.v as u64 {
            return Err(ConfigError::OutputRange {
                max: self.max,
                v: self.v,
            });
        }
        if self.q > self.w {
            return Err(ConfigError::ProofAboveWait {
                q: self.q,
                w: self.w,
            });
        }
        threshold_for(self.k_prime, self.max, self.v)?;
        Ok(())
    }

    /// Number of validators that must agree for settlement and redeem.
    pub fn correct_quorum(&self) -> usize {
        self.n - self.f
    }
}

/// `floor(k' · max / v)`, rejecting an empty or over-full selection range.
pub fn threshold_for(k_prime: f64, max: u64, v: usize) -> Result<u64, ConfigError> {
    let x = snap(k_prime * max as f64 / v as f64);
    if x < 1.0 {
        return Err(ConfigError::ThresholdUnderflow(x));
    }
    if x > max as f64 {
        return Err(ConfigError::InflatedTarget { k_prime, v });
    }
    Ok(x.floor() as u64)
}

/// VRF outputs at or below this value are selected.
pub fn vrf_threshold(cfg: &SystemConfig) -> u64 {
    threshold_for(cfg.k_prime, cfg.max, cfg.v).expect("validated config has a usable threshold")
}

/// Chernoff lower-tail bound on `P(X ≤ k)` for `X ~ Binomial(V, k'/V)`.
pub fn chernoff_lower_tail(k: usize, eta: f64) -> Result<f64, DomainError> {
    if k == 0 || !(eta > 0.0 && eta < 1.0) {
        return Err(DomainError { k, eta });
    }
    Ok((-(eta * eta) * k as f64 / (2.0 * (1.0 - eta))).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn example_inputs() -> ParamInputs {
        ParamInputs {
            n: 100,
            f: 12,
            m: 10,
            eta: 0.2,
            gamma: 0.5,
            beta: 0.4,
            alpha: 0.2,
            k1: 8,
            k2: 16,
            v: 100,
        }
    }

    #[test]
    fn derives_example_config() {
        // k' = 10 / 0.8; q = ceil(0.6 · 10); w = floor(10 − 1.5 · 0.12 · 10) = floor(8.2)
        let cfg = derive_params(&example_inputs()).unwrap();
        assert_eq!(cfg.k_prime, 12.5);
        assert_eq!(cfg.q, 6);
        assert_eq!(cfg.w, 8);
        assert_eq!(cfg.max, 100_000_000);
        assert_eq!(cfg.k, cfg.m);
        assert_eq!((cfg.s1, cfg.s2), (8, 16));
        assert_eq!(vrf_threshold(&cfg), 12_500_000);
    }

    #[test]
    fn zero_quorum_rejected() {
        let inputs = ParamInputs {
            n: 9,
            f: 1,
            m: 0,
            ..example_inputs()
        };
        let err = derive_params(&inputs).unwrap_err();
        assert_eq!(err.to_string(), "m must be ≥ 1");
    }

    #[test]
    fn resilience_boundary_is_strict() {
        let inputs = ParamInputs {
            n: 96,
            ..example_inputs()
        };
        let err = derive_params(&inputs).unwrap_err();
        assert!(err.to_string().starts_with("n > 8f violated"), "{err}");
        assert_eq!(err.rule(), "n>8f");
        let ok = ParamInputs {
            n: 97,
            v: 97,
            ..example_inputs()
        };
        assert!(derive_params(&ok).is_ok());
    }

    #[test]
    fn other_rules() {
        let base = example_inputs();
        let cases = [
            (ParamInputs { m: 12, ..base }, "m<f"),
            (ParamInputs { k1: 17, ..base }, "s1<=s2"),
            (ParamInputs { v: 9, ..base }, "m<=V<=n"),
            (ParamInputs { v: 101, ..base }, "m<=V<=n"),
            (ParamInputs { eta: 1.0, ..base }, "fraction-range"),
            (ParamInputs { beta: 0.0, ..base }, "fraction-range"),
            (ParamInputs { gamma: 0.0, ..base }, "gamma-positive"),
            // w = floor(10 − 4 · 1.2) = 5 < q = 6
            (ParamInputs { gamma: 3.0, ..base }, "q<=w"),
            // k' = 10 / 0.05 = 200 > V
            (ParamInputs { eta: 0.95, ..base }, "k'<=V"),
        ];
        for (inputs, rule) in cases {
            assert_eq!(derive_params(&inputs).unwrap_err().rule(), rule, "{inputs:?}");
        }
    }

    #[test]
    fn full_selection_threshold_equals_max() {
        // k' = 8 / 0.8 = 10 = V
        let inputs = ParamInputs {
            m: 8,
            v: 10,
            ..example_inputs()
        };
        let cfg = derive_params(&inputs).unwrap();
        assert_eq!(cfg.k_prime, 10.0);
        assert_eq!(vrf_threshold(&cfg), cfg.max);
    }

    #[test]
    fn threshold_underflow() {
        assert_eq!(
            threshold_for(0.5, 1, 1).unwrap_err().rule(),
            "threshold-underflow"
        );
        assert_eq!(threshold_for(12.5, 100_000_000, 100).unwrap(), 12_500_000);
    }

    #[test]
    fn chernoff_values() {
        // exp(−0.04 · 100 / 1.6) = exp(−2.5); exp(−0.04 · 10 / 1.6) = exp(−0.25)
        let b100 = chernoff_lower_tail(100, 0.2).unwrap();
        assert!((b100 - 0.082_085).abs() < 1e-5, "{b100}");
        let b10 = chernoff_lower_tail(10, 0.2).unwrap();
        assert!((b10 - 0.778_800_8).abs() < 1e-6, "{b10}");
        assert!(chernoff_lower_tail(10, 1.0).is_err());
        assert!(chernoff_lower_tail(10, 0.0).is_err());
        assert!(chernoff_lower_tail(0, 0.5).is_err());
    }

    #[test]
    fn chernoff_strictly_decreasing() {
        let mut prev = 1.0;
        for k in 1..500 {
            let b = chernoff_lower_tail(k, 0.2).unwrap();
            assert!(b < prev);
            prev = b;
        }
        let mut prev = 1.0;
        for i in 1..99 {
            let b = chernoff_lower_tail(20, i as f64 / 100.0).unwrap();
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn derivation_is_pure() {
        assert_eq!(
            derive_params(&example_inputs()),
            derive_params(&example_inputs())
        );
    }
}
