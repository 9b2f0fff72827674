//! Channel Wrappers: the optimistic synchronization protocol.
//!
//! One [`ChannelWrapper`] runs per verification domain. In conservative
//! mode the two wrappers exchange one packet each per cycle. When one
//! domain can predict the other's responses it becomes the leader: it runs
//! ahead, buffering its outputs and predictions in the LOB, then flushes
//! the buffer in one packet. The lagger replays the buffered cycles,
//! checks each prediction and reports back; on a misprediction the leader
//! restores its checkpoint and rolls forth to the failing cycle.

mod checkpoint;
mod lob;
mod predictor;
mod wrapper;

pub use checkpoint::{restore_checkpoint, store_checkpoint, Checkpoint, DomainState};
pub use lob::{Lob, LobEntry};
pub use predictor::{check_prediction, Noise, Predictor};
pub use wrapper::{
    hash_snapshot, queue_pair, thread_pair, ChannelWrapper, CwRecord, PathRecord, Poll, Port, QueuePort, SyncConfig, ThreadPort,
    TransitionRecord, FNV_OFFSET,
};

use crate::fabric::Domain;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatingMode {
    Conservative,
    /// Simulator leads.
    Sla,
    /// Accelerator leads.
    Als,
}

impl OperatingMode {
    pub fn leader(self) -> Option<Domain> {
        match self {
            OperatingMode::Conservative => None,
            OperatingMode::Sla => Some(Domain::Sim),
            OperatingMode::Als => Some(Domain::Acc),
        }
    }

    pub fn led_by(d: Domain) -> OperatingMode {
        match d {
            Domain::Sim => OperatingMode::Sla,
            Domain::Acc => OperatingMode::Als,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatingMode::Conservative => "conservative",
            OperatingMode::Sla => "SLA",
            OperatingMode::Als => "ALS",
        }
    }
}

impl fmt::Display for OperatingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Steps of one transition: run-ahead, follow-up, rollback, roll-forth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionPhase {
    Ra,
    Fu,
    Rb,
    Rf,
}

impl TransitionPhase {
    pub fn name(self) -> &'static str {
        match self {
            TransitionPhase::Ra => "RA",
            TransitionPhase::Fu => "FU",
            TransitionPhase::Rb => "RB",
            TransitionPhase::Rf => "RF",
        }
    }
}

/// Legal phase sequences are `RA FU` and `RA FU RB RF`.
pub fn phases_legal(seq: &[TransitionPhase]) -> bool {
    use TransitionPhase::*;
    matches!(seq, [Ra, Fu] | [Ra, Fu, Rb, Rf])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Path {
    C,
    P,
    S,
    L,
    R,
    F,
}

/// Named stations of the wrapper state machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Station {
    Start,
    End,
    /// P-5
    RbStore,
    /// P-6
    ConservativeHop,
    /// S-2
    Flush,
    /// S-3
    GetResponse,
    /// S-5
    StoreActual,
    /// S-6
    RequestRestore,
    /// L-1
    PredictionCheck,
    /// L-5
    ReportFail,
    /// L-6
    WaitLeader,
    /// R-2
    SendOutput,
    /// C-3 / R-3
    ReadInput,
}

impl Station {
    pub fn label(self) -> &'static str {
        match self {
            Station::Start => "START",
            Station::End => "END",
            Station::RbStore => "P-5",
            Station::ConservativeHop => "P-6",
            Station::Flush => "S-2",
            Station::GetResponse => "S-3",
            Station::StoreActual => "S-5",
            Station::RequestRestore => "S-6",
            Station::PredictionCheck => "L-1",
            Station::ReportFail => "L-5",
            Station::WaitLeader => "L-6",
            Station::SendOutput => "R-2",
            Station::ReadInput => "C-3",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Leader,
    Lagger,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CwState {
    pub path: Path,
    pub station: Station,
    pub role: Role,
    pub in_transition: bool,
    /// Leader has restored its checkpoint and is rolling forth.
    pub restored: bool,
}

impl Default for CwState {
    fn default() -> Self {
        CwState { path: Path::C, station: Station::Start, role: Role::None, in_transition: false, restored: false }
    }
}

/// What the wrapper knows at START of a unit cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathInputs {
    /// The lagger-driven fields of this cycle can be predicted.
    pub predictable: bool,
    pub lob_len: usize,
    pub depth: usize,
    /// This is the last cycle of the run.
    pub last_cycle: bool,
    /// Lagger: the next flushed entry to consume carries a prediction
    /// (`Some(true)`), is final (`Some(false)`), or no flush is pending.
    pub pending_entry: Option<bool>,
}

pub fn choose_path(cw: &CwState, inp: &PathInputs) -> Result<Path, SyncError> {
    let illegal = || SyncError::IllegalState(*cw);
    match cw.role {
        Role::None if cw.in_transition || cw.restored => Err(illegal()),
        Role::None => Ok(Path::C),
        Role::Leader if cw.restored && !cw.in_transition => Err(illegal()),
        Role::Leader if cw.restored => Ok(Path::F),
        Role::Leader if !cw.in_transition => Ok(if inp.predictable { Path::P } else { Path::C }),
        Role::Leader => {
            // a predicted entry must leave room for the final one
            let room = inp.lob_len + 1 < inp.depth;
            if !inp.predictable || !room || inp.last_cycle {
                Ok(Path::S)
            } else {
                Ok(Path::P)
            }
        }
        Role::Lagger if cw.restored => Err(illegal()),
        Role::Lagger => match inp.pending_entry {
            Some(true) => Ok(Path::L),
            Some(false) => Ok(Path::R),
            None if cw.in_transition => Err(illegal()),
            None => Ok(Path::C),
        },
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("illegal wrapper state {0:?}")]
    IllegalState(CwState),
    #[error("prediction requested for data-class field set {0:?}")]
    UnpredictableField(crate::ahb::FieldMask),
    #[error("no checkpoint to restore")]
    NoCheckpoint,
    #[error("LOB overflow at depth {0}")]
    LobOverflow(usize),
    #[error("{domain} wrapper desynchronized at cycle {cycle}: {reason}")]
    DesyncDetected { domain: Domain, cycle: u64, reason: String },
    #[error("peer wrapper disconnected")]
    PeerGone,
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error(transparent)]
    Ahb(#[from] crate::ahb::AhbError),
    #[error(transparent)]
    Fabric(#[from] crate::fabric::FabricError),
}
