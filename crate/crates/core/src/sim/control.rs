use super::{EnvelopeMeta, Node, World};
use crate::params::SystemConfig;
use crate::protocol::{ClientState, Ctx, Directory, Message, NodeId, Outbox, Transaction, ValidatorState};
use crate::quorum::{SecretQuorum, ValidationProof};
use crate::rvrf::{KeyPair, ModelRvrf, PublicKey};
use crate::types::FundId;
use std::collections::BTreeSet;
use std::rc::Rc;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CorruptError {
    #[error("corrupting {0} would exceed the budget of f validators")]
    BudgetExceeded(NodeId),
    #[error("no such node {0}")]
    UnknownNode(NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum InjectError {
    #[error("node {0} is not corrupted")]
    NotCorrupted(NodeId),
    #[error("no such node {0}")]
    UnknownNode(NodeId),
}

/// An envelope delivered to a corrupted node; its payload is readable.
#[derive(Clone, Debug)]
pub struct Delivery {
    pub meta: EnvelopeMeta,
    pub msg: Rc<Message>,
    depth: u32,
    op: Option<usize>,
}

impl Delivery {
    pub(super) fn new(meta: EnvelopeMeta, msg: Rc<Message>, depth: u32, op: Option<usize>) -> Self {
        Delivery { meta, msg, depth, op }
    }
}

/// Adversary capabilities. Every accessor to node state or keys is restricted
/// to corrupted nodes.
pub struct Control<'a> {
    world: &'a mut World,
}

impl<'a> Control<'a> {
    pub(super) fn new(world: &'a mut World) -> Self {
        Control { world }
    }

    pub fn config(&self) -> &SystemConfig {
        &self.world.cfg
    }

    pub fn quorum(&self) -> &SecretQuorum<ModelRvrf> {
        &self.world.sq
    }

    pub fn directory(&self) -> &Directory {
        &self.world.dir
    }

    pub fn ctx(&self) -> Ctx<'_> {
        self.world.ctx()
    }

    pub fn client_node(&self, index: usize) -> NodeId {
        self.world.client_node(index)
    }

    pub fn is_corrupted(&self, node: NodeId) -> bool {
        self.world.corrupted.contains(&node)
    }

    pub fn corrupted(&self) -> &BTreeSet<NodeId> {
        &self.world.corrupted
    }

    pub fn corrupted_validators(&self) -> usize {
        self.world
            .corrupted
            .iter()
            .filter(|n| self.world.dir.is_validator(**n))
            .count()
    }

    /// Irreversible; validators are limited to `f`, clients are unlimited.
    pub fn corrupt(&mut self, node: NodeId) -> Result<(), CorruptError> {
        if node.index() >= self.world.nodes.len() {
            return Err(CorruptError::UnknownNode(node));
        }
        if self.world.corrupted.contains(&node) {
            return Ok(());
        }
        if self.world.dir.is_validator(node) && self.corrupted_validators() >= self.world.cfg.f {
            return Err(CorruptError::BudgetExceeded(node));
        }
        self.world.corrupted.insert(node);
        Ok(())
    }

    pub fn keypair(&self, node: NodeId) -> Option<KeyPair> {
        if !self.is_corrupted(node) {
            return None;
        }
        match &self.world.nodes[node.index()] {
            Node::Validator(v) => Some(*v.keypair()),
            Node::Client(c) => Some(*c.keypair()),
        }
    }

    pub fn validator_mut(&mut self, node: NodeId) -> Option<&mut ValidatorState> {
        if !self.is_corrupted(node) {
            return None;
        }
        match &mut self.world.nodes[node.index()] {
            Node::Validator(v) => Some(v),
            Node::Client(_) => None,
        }
    }

    pub fn client_mut(&mut self, node: NodeId) -> Option<&mut ClientState> {
        if !self.is_corrupted(node) {
            return None;
        }
        match &mut self.world.nodes[node.index()] {
            Node::Client(c) => Some(c),
            Node::Validator(_) => None,
        }
    }

    /// Buyer-signed transaction from a corrupted client.
    pub fn sign_tx(&mut self, buyer: NodeId, fund: FundId, seller: PublicKey) -> Option<Transaction> {
        if !self.is_corrupted(buyer) {
            return None;
        }
        let world = &mut *self.world;
        let ctx = Ctx {
            sq: &world.sq,
            dir: &world.dir,
        };
        match &mut world.nodes[buyer.index()] {
            Node::Client(c) => Some(c.sign_tx(fund, seller, &ctx)),
            Node::Validator(_) => None,
        }
    }

    /// Send `msg` from a corrupted node.
    pub fn inject(&mut self, src: NodeId, dst: NodeId, msg: Message) -> Result<(), InjectError> {
        self.check_inject(src, dst)?;
        self.world.enqueue(src, dst, msg);
        Ok(())
    }

    /// Send `msg` from a corrupted node through a random relay.
    pub fn inject_gossip(&mut self, src: NodeId, dst: NodeId, msg: Message) -> Result<(), InjectError> {
        self.check_inject(src, dst)?;
        let mut out = Outbox::default();
        out.gossip(dst, msg);
        self.world.dispatch(src, out, None);
        Ok(())
    }

    fn check_inject(&self, src: NodeId, dst: NodeId) -> Result<(), InjectError> {
        let count = self.world.nodes.len();
        if src.index() >= count {
            return Err(InjectError::UnknownNode(src));
        }
        if dst.index() >= count {
            return Err(InjectError::UnknownNode(dst));
        }
        if !self.is_corrupted(src) {
            return Err(InjectError::NotCorrupted(src));
        }
        Ok(())
    }

    /// Let the corrupted receiver process `delivery` with the honest handler.
    /// Its sends are not reported back through `on_send`.
    pub fn deliver_honestly(&mut self, delivery: &Delivery) {
        let world = &mut *self.world;
        let (depth, op) = (world.current_depth, world.current_op);
        world.current_depth = delivery.depth;
        world.current_op = delivery.op;
        world.run_handler(delivery.meta.dst, delivery.meta.src, &delivery.msg, None);
        world.current_depth = depth;
        world.current_op = op;
    }

    /// Register a proof held by the adversary; counted as an accepted payment
    /// iff it verifies.
    pub fn submit_proof(&mut self, tx: Transaction, proof: &ValidationProof) -> bool {
        if !self.world.sq.verify_proof(proof, &tx.encode()) {
            return false;
        }
        self.world.accept(tx);
        true
    }
}
