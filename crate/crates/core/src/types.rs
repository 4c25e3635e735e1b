//! Monetary primitives shared by the protocol and the ledger oracle.

use crate::hash::{hash_concat, Digest};
use crate::rvrf::PublicKey;
use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, Sub};

/// Smallest currency units per whole unit.
pub const MICROS_PER_UNIT: u64 = 1_000_000;

/// Currency amount in micro-units.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug)]
pub struct Amount(pub u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub fn from_units(units: u64) -> Amount {
        Amount(units * MICROS_PER_UNIT)
    }

    /// `self / s2`, rounded down.
    pub fn fraction(self, s2: usize) -> Amount {
        Amount(self.0 / s2 as u64)
    }

    pub fn times(self, k: u64) -> Amount {
        Amount(self.0 * k)
    }

    pub fn checked_sub(self, other: Amount) -> Option<Amount> {
        self.0.checked_sub(other.0).map(Amount)
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0 + rhs.0)
    }
}

impl Sub for Amount {
    type Output = Amount;
    fn sub(self, rhs: Amount) -> Amount {
        Amount(self.0 - rhs.0)
    }
}

impl std::iter::Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / MICROS_PER_UNIT;
        let frac = self.0 % MICROS_PER_UNIT;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let s = format!("{frac:06}");
            write!(f, "{whole}.{}", s.trim_end_matches('0'))
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FundId(pub Digest);

impl FundId {
    pub fn genesis(name: &str) -> FundId {
        FundId(hash_concat(&[b"genesis", name.as_bytes()]))
    }
}

impl fmt::Debug for FundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fund:{}", self.0.short_hex())
    }
}

impl fmt::Display for FundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.short_hex())
    }
}

/// `owners` is non-empty.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Fund {
    pub id: FundId,
    pub owners: BTreeSet<PublicKey>,
    pub balance: Amount,
}
