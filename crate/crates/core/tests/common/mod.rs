#![allow(dead_code)]

use fracspend::params::{derive_params, ParamInputs, SystemConfig};
use fracspend::protocol::NodeId;
use fracspend::sim::{GenesisFund, SimOptions, World};
use fracspend::types::{Amount, FundId};

/// n = 100, f = 12, m = 10, V = 100, k' = 20, q = 6, w = 8, s2 = 16.
pub fn desk_inputs() -> ParamInputs {
    ParamInputs {
        n: 100,
        f: 12,
        m: 10,
        eta: 0.5,
        gamma: 0.5,
        beta: 0.4,
        alpha: 0.1,
        k1: 8,
        k2: 16,
        v: 100,
    }
}

pub fn desk_config() -> SystemConfig {
    derive_params(&desk_inputs()).expect("desk parameters are valid")
}

pub fn client_names(count: usize) -> Vec<String> {
    (0..count).map(|i| format!("c{i}")).collect()
}

/// Client 0 owns one fund `"main"` of `units`; the other clients own nothing.
pub fn single_fund_world(cfg: SystemConfig, clients: usize, units: u64, seed: u64) -> World {
    let genesis = [GenesisFund {
        name: "main".into(),
        owners: vec![0],
        balance: Amount::from_units(units),
    }];
    World::new(cfg, &client_names(clients), &genesis, seed, SimOptions::default())
}

pub fn main_fund() -> FundId {
    FundId::genesis("main")
}

pub fn client(world: &World, i: usize) -> NodeId {
    world.client_node(i)
}

/// Overspender parameters: k' = 50, q = 5, w = 5, s1 = 8, s2 = 16.
pub fn overspend_inputs() -> ParamInputs {
    ParamInputs {
        eta: 0.8,
        gamma: 2.5,
        beta: 0.5,
        ..desk_inputs()
    }
}

pub fn overspend_config() -> SystemConfig {
    derive_params(&overspend_inputs()).expect("overspender parameters are valid")
}

/// Sparse quorums: n = 400, V = 400, k' = 20, q = 6, w = 8, s1 = 4, s2 = 8.
pub fn sparse_config() -> SystemConfig {
    derive_params(&ParamInputs {
        n: 400,
        f: 40,
        m: 10,
        k1: 4,
        k2: 8,
        v: 400,
        ..desk_inputs()
    })
    .expect("sparse parameters are valid")
}
