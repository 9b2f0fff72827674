//! Bus components and the half-bus models.
//!
//! Every component is a Moore machine: its outputs for cycle `c` depend only
//! on state registered at the edge that ended cycle `c - 1`. A cycle is
//! therefore evaluated in two steps, [`HalfBus::outputs`] followed by
//! [`HalfBus::commit`] with the complete snapshot, and no value ever has to
//! travel between verification domains inside a cycle.

mod arbiter;
mod bus;
mod decoder;
mod master;
mod protocol;
mod slave;
pub mod trace;

pub use arbiter::{arbitrate, ArbiterConfig, BurstProgress, BusPipelineState, DataPhase};
pub use bus::{lockstep, DriveMap, HalfBus, MasterPlacement, MonolithicBus, Scope, SidebandSignal, SlavePlacement, Topology};
pub use decoder::{decode, DecoderMap, Region, Target};
pub use master::{MasterDigest, MasterScript, Payload, ScriptedMaster, Transaction};
pub use protocol::ProtocolChecker;
pub use slave::{IrqConfig, MemorySlave, SlaveConfig, SlaveTiming};

use crate::ahb::FieldMask;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// One of the two verification domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Simulation domain (transaction-level models on the host).
    Sim,
    /// Acceleration domain (RTL blocks on the accelerator).
    Acc,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::Sim => Domain::Acc,
            Domain::Acc => Domain::Sim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Sim => "sim",
            Domain::Acc => "acc",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("decoder regions {0} and {1} overlap")]
    OverlappingRegions(usize, usize),
    #[error("decoder region {0} has size {1:#x}, not a power of two")]
    RegionSize(usize, u32),
    #[error("decoder region {0} base {1:#010x} is not aligned to its size")]
    RegionAlignment(usize, u32),
    #[error("decoder region {region} refers to slave {slave}, but only {count} slaves exist")]
    UnknownSlave { region: usize, slave: usize, count: usize },
    #[error("arbiter priority order is not a permutation of {0} masters")]
    BadPriority(usize),
    #[error("default master {0} out of range")]
    BadDefaultMaster(usize),
    #[error("too many masters ({0}); at most {max}", max = crate::ahb::MAX_MASTERS)]
    TooManyMasters(usize),
    #[error("too many sideband signals ({0})")]
    TooManySideband(usize),
    #[error("sideband signal `{0}` is driven by unknown slave {1}")]
    BadSidebandDriver(String, usize),
    #[error("master {master} transaction {txn}: {reason}")]
    BadTransaction { master: usize, txn: usize, reason: String },
    #[error("slave {0}: {1}")]
    BadSlave(usize, String),
    #[error("cycle {cycle}: missing proxy inputs {missing:?}")]
    MissingProxyInput { cycle: u64, missing: FieldMask },
    #[error("cycle {cycle}: protocol violation: {reason}")]
    ProtocolViolation { cycle: u64, reason: String },
}
