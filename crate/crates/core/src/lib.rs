pub mod adversary;
pub mod harness;
pub mod hash;
pub mod ledger;
pub mod params;
pub mod protocol;
pub mod quorum;
pub mod rvrf;
pub mod sim;
pub mod types;
