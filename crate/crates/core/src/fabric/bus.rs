use super::arbiter::{ArbiterConfig, BusPipelineState};
use super::decoder::{decode, DecoderMap, Target};
use super::master::{MasterDigest, MasterScript, ScriptedMaster};
use super::protocol::ProtocolChecker;
use super::slave::{MemorySlave, SlaveConfig};
use super::{Domain, FabricError};
use crate::ahb::{Field, FieldMask, Hresp, MsabsSnapshot, MAX_MASTERS, MAX_SIDEBAND};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidebandSignal {
    pub name: String,
    /// Index of the slave that drives the signal.
    pub slave: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MasterPlacement {
    pub domain: Domain,
    pub script: MasterScript,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlavePlacement {
    pub domain: Domain,
    pub config: SlaveConfig,
}

/// Static description of the bus shared by every half-bus replica.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    pub masters: Vec<MasterPlacement>,
    pub slaves: Vec<SlavePlacement>,
    pub decoder: DecoderMap,
    pub arbiter: ArbiterConfig,
    pub sideband: Vec<SidebandSignal>,
}

impl Topology {
    pub fn validate(&self) -> Result<(), FabricError> {
        if self.masters.is_empty() || self.masters.len() > MAX_MASTERS {
            return Err(FabricError::TooManyMasters(self.masters.len()));
        }
        if self.sideband.len() > MAX_SIDEBAND {
            return Err(FabricError::TooManySideband(self.sideband.len()));
        }
        self.arbiter.validate(self.masters.len())?;
        for (i, s) in self.slaves.iter().enumerate() {
            s.config.validate(i)?;
            if let Some(irq) = s.config.irq {
                if self.sideband.get(irq.signal).map(|sig| sig.slave) != Some(i) {
                    return Err(FabricError::BadSlave(i, format!("irq signal {} is not registered to it", irq.signal)));
                }
            }
        }
        for sig in &self.sideband {
            if sig.slave >= self.slaves.len() {
                return Err(FabricError::BadSidebandDriver(sig.name.clone(), sig.slave));
            }
        }
        Ok(())
    }

    pub fn full_mask(&self) -> FieldMask {
        FieldMask::full(self.masters.len(), self.sideband.len())
    }

    pub fn sideband_names(&self) -> Vec<String> {
        self.sideband.iter().map(|s| s.name.clone()).collect()
    }

    pub fn master_domain(&self, m: usize) -> Domain {
        self.masters[m].domain
    }

    pub fn slave_domain(&self, s: usize) -> Domain {
        self.slaves[s].domain
    }

    /// Domain that drives a data-phase target, `None` for the fabric.
    pub fn target_domain(&self, t: Target) -> Option<Domain> {
        match t {
            Target::Slave(s) => Some(self.slave_domain(s)),
            Target::Default => None,
        }
    }
}

/// Which domain drives each MSABS field in the current cycle. Fields in
/// `fabric` are driven by replicated bus logic (muxes, default slave) and
/// are computed identically by both halves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct DriveMap {
    pub sim: FieldMask,
    pub acc: FieldMask,
    pub fabric: FieldMask,
}

impl DriveMap {
    pub fn of(&self, d: Domain) -> FieldMask {
        match d {
            Domain::Sim => self.sim,
            Domain::Acc => self.acc,
        }
    }

    fn get_mut(&mut self, d: Option<Domain>) -> &mut FieldMask {
        match d {
            Some(Domain::Sim) => &mut self.sim,
            Some(Domain::Acc) => &mut self.acc,
            None => &mut self.fabric,
        }
    }

    pub fn compute(topo: &Topology, pipe: &BusPipelineState) -> DriveMap {
        let mut m = DriveMap::default();
        let addr_owner = Some(topo.master_domain(pipe.granted));
        for f in Field::ADDRESS_GROUP {
            m.get_mut(addr_owner).insert(f);
        }
        for (i, p) in topo.masters.iter().enumerate() {
            let d = m.get_mut(Some(p.domain));
            *d = d.with_master(i);
        }
        for (k, sig) in topo.sideband.iter().enumerate() {
            let d = m.get_mut(Some(topo.slave_domain(sig.slave)));
            *d = d.with_sideband(k);
        }
        match pipe.data_phase {
            Some(dp) => {
                let responder = topo.target_domain(dp.target);
                m.get_mut(responder).insert(Field::Hready);
                m.get_mut(responder).insert(Field::Hresp);
                if dp.write {
                    m.get_mut(Some(topo.master_domain(dp.owner))).insert(Field::Hwdata);
                    m.fabric.insert(Field::Hrdata);
                } else {
                    m.get_mut(responder).insert(Field::Hrdata);
                    m.fabric.insert(Field::Hwdata);
                }
            }
            None => {
                for f in [Field::Hready, Field::Hresp, Field::Hwdata, Field::Hrdata] {
                    m.fabric.insert(f);
                }
            }
        }
        m.fabric.insert(Field::Hsplit);
        m
    }
}

/// Which components a bus model evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scope {
    /// Every component: the monolithic reference bus.
    All,
    /// Components placed in one domain; the rest arrive as proxy inputs.
    Only(Domain),
}

/// A bus model evaluating the components of one scope, plus replicas of
/// arbiter, decoder and pipeline registers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HalfBus {
    topo: Arc<Topology>,
    scope: Scope,
    pipe: BusPipelineState,
    masters: Vec<Option<ScriptedMaster>>,
    slaves: Vec<Option<MemorySlave>>,
}

impl HalfBus {
    pub fn new(topo: Arc<Topology>, scope: Scope) -> Result<Self, FabricError> {
        topo.validate()?;
        let mine = |d: Domain| matches!(scope, Scope::All) || scope == Scope::Only(d);
        let masters = topo
            .masters
            .iter()
            .enumerate()
            .map(|(i, p)| mine(p.domain).then(|| ScriptedMaster::new(i, p.script.clone())))
            .collect();
        let slaves = topo
            .slaves
            .iter()
            .map(|p| mine(p.domain).then(|| MemorySlave::new(&p.config)))
            .collect();
        let pipe = BusPipelineState::new(&topo.arbiter);
        Ok(HalfBus { topo, scope, pipe, masters, slaves })
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topo
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn pipe(&self) -> &BusPipelineState {
        &self.pipe
    }

    pub fn cycle(&self) -> u64 {
        self.pipe.cycle
    }

    pub fn drive_map(&self) -> DriveMap {
        DriveMap::compute(&self.topo, &self.pipe)
    }

    /// Fields this model computes itself this cycle (local plus fabric).
    pub fn local_mask(&self) -> FieldMask {
        match self.scope {
            Scope::All => self.topo.full_mask(),
            Scope::Only(d) => {
                let dm = self.drive_map();
                dm.of(d).union(dm.fabric)
            }
        }
    }

    /// Fields that must be supplied as proxy inputs this cycle.
    pub fn remote_mask(&self) -> FieldMask {
        match self.scope {
            Scope::All => FieldMask::empty(),
            Scope::Only(d) => self.drive_map().of(d.other()),
        }
    }

    /// Outputs for the current cycle. Only the fields in
    /// [`HalfBus::local_mask`] are meaningful.
    pub fn outputs(&self) -> MsabsSnapshot {
        let cycle = self.pipe.cycle;
        let granted = self.pipe.granted;
        let mut s = MsabsSnapshot::idle();
        if let Some(m) = &self.masters[granted] {
            m.drive_address(cycle, &mut s);
        }
        for m in self.masters.iter().flatten() {
            if m.hbusreq(m.index() == granted, cycle) {
                s.hbusreq |= 1 << m.index();
            }
        }
        if let Some(dp) = self.pipe.data_phase {
            if dp.write {
                if let Some(m) = &self.masters[dp.owner] {
                    s.hwdata = m.hwdata().unwrap_or(0);
                }
            }
            match dp.target {
                Target::Slave(i) => {
                    if let Some(slave) = &self.slaves[i] {
                        s.hready = slave.timing.ready();
                        s.hresp = Hresp::Okay;
                        if !dp.write && s.hready {
                            s.hrdata = slave.read(dp.addr);
                        }
                    }
                }
                Target::Default => {
                    s.hready = true;
                    s.hresp = Hresp::Error;
                }
            }
        }
        for (k, sig) in self.topo.sideband.iter().enumerate() {
            if self.slaves[sig.slave].as_ref().is_some_and(|sl| sl.irq_level()) {
                s.sideband |= 1 << k;
            }
        }
        s
    }

    /// Clock edge with the complete snapshot of the ending cycle.
    pub fn commit(&mut self, full: &MsabsSnapshot) {
        let cycle = self.pipe.cycle;
        let granted = self.pipe.granted;
        let dp = self.pipe.data_phase;
        for m in self.masters.iter_mut().flatten() {
            let g = m.index() == granted;
            m.tick(full, g, cycle);
        }
        let next_target = (full.hready && full.htrans.is_active()).then(|| decode(&self.topo.decoder, full.haddr));
        for (i, slave) in self.slaves.iter_mut().enumerate() {
            let Some(slave) = slave else { continue };
            let in_dp = dp.is_some_and(|d| d.target == Target::Slave(i));
            if in_dp && full.hready {
                let d = dp.unwrap();
                if d.write {
                    slave.write(d.addr, d.size, full.hwdata);
                }
            }
            slave.timing.tick(in_dp, full.hready, next_target == Some(Target::Slave(i)));
        }
        self.pipe.tick(full, &self.topo.decoder, &self.topo.arbiter);
    }

    /// One cycle given proxy values for the remote fields. Returns the local
    /// outputs (masked) and the mask of fields they cover.
    pub fn step(
        &mut self,
        proxies: &MsabsSnapshot,
        proxy_mask: &FieldMask,
    ) -> Result<(MsabsSnapshot, FieldMask), FabricError> {
        let local = self.local_mask();
        let remote = self.remote_mask();
        if !remote.is_subset_of(proxy_mask) {
            return Err(FabricError::MissingProxyInput { cycle: self.pipe.cycle, missing: remote.minus(*proxy_mask) });
        }
        let out = self.outputs();
        let mut full = out;
        full.merge_from(proxies, &remote);
        self.commit(&full);
        Ok((out.masked(&local), local))
    }

    /// Master digests for the masters evaluated here.
    pub fn master_digests(&self) -> Vec<(usize, MasterDigest)> {
        self.masters.iter().flatten().map(|m| (m.index(), m.digest())).collect()
    }

    /// Memory images of the slaves evaluated here.
    pub fn memory_images(&self) -> Vec<(usize, Vec<u32>)> {
        self.slaves
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (i, s.memory().to_vec())))
            .collect()
    }

    /// True once every local master has finished its script.
    pub fn masters_done(&self) -> bool {
        self.masters.iter().flatten().all(|m| m.digest().finished)
    }
}

/// Evaluates one cycle of a Sim/Acc half-bus pair in lock step, returning
/// the full snapshot both halves committed.
pub fn lockstep(sim: &mut HalfBus, acc: &mut HalfBus) -> MsabsSnapshot {
    let mut full = sim.outputs();
    full.merge_from(&acc.outputs(), &acc.local_mask().minus(sim.local_mask()));
    sim.commit(&full);
    acc.commit(&full);
    full
}

/// The reference bus: every component on one timeline, protocol-checked.
#[derive(Clone, Debug)]
pub struct MonolithicBus {
    bus: HalfBus,
    checker: ProtocolChecker,
    trace: Vec<MsabsSnapshot>,
}

impl MonolithicBus {
    pub fn new(topo: Arc<Topology>) -> Result<Self, FabricError> {
        let checker = ProtocolChecker::new(topo.masters.len());
        Ok(MonolithicBus { bus: HalfBus::new(topo, Scope::All)?, checker, trace: Vec::new() })
    }

    pub fn step(&mut self) -> Result<MsabsSnapshot, FabricError> {
        let s = self.bus.outputs();
        self.checker.check(&s, self.bus.pipe())?;
        self.bus.commit(&s);
        self.trace.push(s);
        Ok(s)
    }

    pub fn run(&mut self, cycles: u64) -> Result<(), FabricError> {
        for _ in 0..cycles {
            self.step()?;
        }
        Ok(())
    }

    pub fn bus(&self) -> &HalfBus {
        &self.bus
    }

    pub fn trace(&self) -> &[MsabsSnapshot] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<MsabsSnapshot> {
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ahb::{Hburst, Hsize, Htrans};
    use crate::fabric::{Payload, Region, Transaction};

    /// Two masters and two slaves split across the domains, with an irq.
    pub(crate) fn mixed_topology() -> Arc<Topology> {
        let m0 = vec![
            Transaction::write(0x0000, Hburst::Incr4, Hsize::Word, Payload::Pattern(7)),
            Transaction::read(0x1000, Hburst::Wrap8, Hsize::Word).with_gap(3),
            Transaction::read(0x0000, Hburst::Incr, Hsize::Halfword).with_beats(5),
        ];
        let m1 = vec![
            Transaction::read(0x1010, Hburst::Incr4, Hsize::Word),
            Transaction::write(0x0042, Hburst::Single, Hsize::Byte, Payload::Words(vec![0x5A5A_5A5A])),
            Transaction::read(0x8000, Hburst::Single, Hsize::Word),
        ];
        let irq = crate::fabric::IrqConfig { signal: 0, threshold: 2 };
        Arc::new(Topology {
            masters: vec![
                MasterPlacement { domain: Domain::Sim, script: MasterScript::new(0, m0).unwrap() },
                MasterPlacement { domain: Domain::Acc, script: MasterScript::new(1, m1).unwrap() },
            ],
            slaves: vec![
                SlavePlacement { domain: Domain::Acc, config: SlaveConfig { wait_states: 1, ..Default::default() } },
                SlavePlacement {
                    domain: Domain::Sim,
                    config: SlaveConfig {
                        fifo_depth: 2,
                        service_period: 3,
                        irq: Some(irq),
                        ..Default::default()
                    },
                },
            ],
            decoder: DecoderMap::new(
                vec![Region { base: 0, size: 0x1000, slave: 0 }, Region { base: 0x1000, size: 0x1000, slave: 1 }],
                2,
            )
            .unwrap(),
            arbiter: ArbiterConfig::by_index(2),
            sideband: vec![SidebandSignal { name: "irq".into(), slave: 1 }],
        })
    }

    #[test]
    fn halves_merge_to_monolithic() {
        let topo = mixed_topology();
        let mut mono = MonolithicBus::new(topo.clone()).unwrap();
        let mut sim = HalfBus::new(topo.clone(), Scope::Only(Domain::Sim)).unwrap();
        let mut acc = HalfBus::new(topo, Scope::Only(Domain::Acc)).unwrap();
        for c in 0..80 {
            let m = mono.step().unwrap();
            let pair = lockstep(&mut sim, &mut acc);
            assert_eq!(pair, m, "cycle {c}");
            assert_eq!(sim.pipe(), acc.pipe());
        }
        assert!(mono.bus().masters_done());
        let errors: u64 = mono.bus().master_digests().iter().map(|(_, d)| d.errors).sum();
        assert_eq!(errors, 1, "one read goes to the default slave");
    }

    #[test]
    fn local_and_remote_masks_are_complementary() {
        let topo = mixed_topology();
        let mut sim = HalfBus::new(topo.clone(), Scope::Only(Domain::Sim)).unwrap();
        let mut acc = HalfBus::new(topo.clone(), Scope::Only(Domain::Acc)).unwrap();
        for _ in 0..60 {
            let full = topo.full_mask();
            assert_eq!(sim.local_mask().union(sim.remote_mask()), full);
            assert!(sim.local_mask().intersect(sim.remote_mask()).is_empty());
            assert_eq!(sim.remote_mask(), acc.local_mask().minus(sim.local_mask()));
            lockstep(&mut sim, &mut acc);
        }
    }

    #[test]
    fn step_rejects_missing_proxies() {
        let topo = mixed_topology();
        let mut sim = HalfBus::new(topo, Scope::Only(Domain::Sim)).unwrap();
        let err = sim.step(&MsabsSnapshot::idle(), &FieldMask::empty()).unwrap_err();
        assert!(matches!(err, FabricError::MissingProxyInput { cycle: 0, .. }));
    }

    #[test]
    fn write_then_read_back_through_the_bus() {
        let data = vec![1, 2, 3, 4];
        let script = vec![
            Transaction::write(0x40, Hburst::Incr4, Hsize::Word, Payload::Words(data.clone())),
            Transaction::read(0x40, Hburst::Incr4, Hsize::Word),
        ];
        let topo = Arc::new(Topology {
            masters: vec![MasterPlacement { domain: Domain::Sim, script: MasterScript::new(0, script).unwrap() }],
            slaves: vec![SlavePlacement { domain: Domain::Acc, config: SlaveConfig::default() }],
            decoder: DecoderMap::new(vec![Region { base: 0, size: 0x1000, slave: 0 }], 1).unwrap(),
            arbiter: ArbiterConfig::by_index(1),
            sideband: vec![],
        });
        let mut mono = MonolithicBus::new(topo).unwrap();
        mono.run(12).unwrap();
        let read: Vec<u32> = mono
            .trace()
            .windows(2)
            .filter(|w| w[0].htrans.is_active() && !w[0].hwrite && w[0].hready)
            .map(|w| w[1].hrdata)
            .collect();
        assert_eq!(read, data);
        assert_eq!(mono.trace()[0].htrans, Htrans::NonSeq);
    }
}
