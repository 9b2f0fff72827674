use super::Predictor;
use crate::ahb::MsabsSnapshot;
use crate::fabric::{Domain, FabricError, HalfBus, Scope, Topology};
use std::sync::Arc;

/// Everything a domain rolls back: its half bus and its predictor. The
/// wrapper's own state lives outside and is never restored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainState {
    pub bus: HalfBus,
    pub predictor: Predictor,
}

impl DomainState {
    pub fn new(topo: Arc<Topology>, domain: Domain) -> Result<Self, FabricError> {
        let predictor = Predictor::new(&topo);
        Ok(DomainState { bus: HalfBus::new(topo, Scope::Only(domain))?, predictor })
    }

    pub fn cycle(&self) -> u64 {
        self.bus.cycle()
    }

    /// Clock edge with the complete snapshot of the current cycle.
    pub fn commit(&mut self, full: &MsabsSnapshot) {
        self.predictor.observe(full, &self.bus);
        self.bus.commit(full);
    }
}

/// Full copy of a domain taken at the start of cycle `cycle`.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub cycle: u64,
    pub variable_count: u64,
    blob: DomainState,
}

pub fn store_checkpoint(d: &DomainState, variable_count: u64) -> Checkpoint {
    Checkpoint { cycle: d.cycle(), variable_count, blob: d.clone() }
}

pub fn restore_checkpoint(d: &mut DomainState, cp: &Checkpoint) {
    *d = cp.blob.clone();
}
