//! Co-emulation drivers: the conventional lock-step engine, the optimistic
//! engine built on the channel wrappers, and the monolithic reference.

mod random;
mod scenario;

pub use random::{random_scenario, random_topology};
pub use scenario::{CheckpointCost, EngineMode, NoiseConfig, Scenario, ScenarioError, Speeds};

use crate::ahb::{pack_snapshot, unpack_snapshot, MsabsSnapshot};
use crate::channel::{ChannelLedger, ChannelPacket, Direction, PacketKind, PacketMeta};
use crate::fabric::{Domain, FabricError, HalfBus, MasterDigest, MonolithicBus, ProtocolChecker, Scope, Target};
use crate::perfmodel::{conventional_breakdown, ratio_estimate, PerfBreakdown, RatioEstimate};
use crate::sync::{
    hash_snapshot, queue_pair, thread_pair, ChannelWrapper, CwRecord, DomainState, OperatingMode, PathRecord, Poll,
    Port, SyncConfig, SyncError, TransitionRecord, FNV_OFFSET,
};
use std::io::{self, Write};
use thiserror::Error;

/// Leader choice from the registered bus state shared by both halves: the
/// source of the data in flight leads, its sink lags.
pub fn mode_select(bus: &HalfBus) -> OperatingMode {
    let topo = bus.topology();
    let Some(dp) = bus.pipe().data_phase else {
        return OperatingMode::Conservative;
    };
    let master = Some(topo.master_domain(dp.owner));
    let slave = match dp.target {
        Target::Slave(s) => Some(topo.slave_domain(s)),
        Target::Default => None,
    };
    let (src, sink) = if dp.write { (master, slave) } else { (slave, master) };
    match (src, sink) {
        (Some(s), Some(k)) if s != k => OperatingMode::led_by(s),
        _ => OperatingMode::Conservative,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Threading {
    /// Both wrappers polled in turn on the calling thread.
    #[default]
    Single,
    /// One thread per domain.
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub threading: Threading,
    pub record_trace: bool,
    pub record_paths: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { threading: Threading::Single, record_trace: true, record_paths: false }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error("both wrappers blocked at cycles {sim}/{acc}")]
    Deadlock { sim: u64, acc: u64 },
}

impl EngineError {
    pub fn is_protocol_violation(&self) -> bool {
        matches!(self, EngineError::Fabric(FabricError::ProtocolViolation { .. }))
    }
}

/// Seconds spent per component over the whole run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TimeTotals {
    pub sim: f64,
    pub acc: f64,
    pub store: f64,
    pub restore: f64,
    pub channel: f64,
}

impl TimeTotals {
    pub fn total(&self) -> f64 {
        self.sim + self.acc + self.store + self.restore + self.channel
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub engine: EngineMode,
    pub cycles: u64,
    /// Committed snapshots, empty unless recorded.
    pub trace: Vec<MsabsSnapshot>,
    pub trace_hash: u64,
    pub ledger: ChannelLedger,
    pub totals: TimeTotals,
    pub breakdown: PerfBreakdown,
    pub transitions: Vec<TransitionRecord>,
    pub memory_images: Vec<(usize, Vec<u32>)>,
    pub digests: Vec<(usize, MasterDigest)>,
    pub sim_cycles: u64,
    pub acc_cycles: u64,
    pub stores: [u64; 2],
    pub restores: [u64; 2],
    pub predictions: u64,
    pub sim_paths: Vec<PathRecord>,
    pub acc_paths: Vec<PathRecord>,
}

fn finish(scn: &Scenario, mut r: RunResult) -> RunResult {
    let n = scn.cycles as f64;
    let cp = &scn.checkpoint;
    r.totals = TimeTotals {
        sim: scn.speeds.t_sim_cycle * r.sim_cycles as f64,
        acc: scn.speeds.t_acc_cycle * r.acc_cycles as f64,
        store: r.stores[0] as f64 * cp.store_s(Domain::Sim) + r.stores[1] as f64 * cp.store_s(Domain::Acc),
        restore: r.restores[0] as f64 * cp.store_s(Domain::Sim) + r.restores[1] as f64 * cp.store_s(Domain::Acc),
        channel: r.ledger.time_s,
    };
    let t = &r.totals;
    let baseline = conventional_breakdown(&scn.perf_params()).performance;
    r.breakdown =
        PerfBreakdown::from_components(t.sim / n, t.acc / n, t.store / n, t.restore / n, t.channel / n, baseline);
    r
}

fn empty_result(engine: EngineMode, cycles: u64) -> RunResult {
    RunResult {
        engine,
        cycles,
        trace: Vec::new(),
        trace_hash: FNV_OFFSET,
        ledger: ChannelLedger::default(),
        totals: TimeTotals::default(),
        breakdown: PerfBreakdown::default(),
        transitions: Vec::new(),
        memory_images: Vec::new(),
        digests: Vec::new(),
        sim_cycles: 0,
        acc_cycles: 0,
        stores: [0; 2],
        restores: [0; 2],
        predictions: 0,
        sim_paths: Vec::new(),
        acc_paths: Vec::new(),
    }
}

type Images = (Vec<(usize, Vec<u32>)>, Vec<(usize, MasterDigest)>);

fn merged_images(a: &HalfBus, b: &HalfBus) -> Images {
    let mut images = a.memory_images();
    images.extend(b.memory_images());
    images.sort_by_key(|(i, _)| *i);
    let mut digests = a.master_digests();
    digests.extend(b.master_digests());
    digests.sort_by_key(|(i, _)| *i);
    (images, digests)
}

/// Lock-step co-emulation: every cycle the simulator sends its fields,
/// then the accelerator answers with its own.
pub fn run_conventional(scn: &Scenario, opts: &RunOptions) -> Result<RunResult, EngineError> {
    let topo = scn.topology.clone();
    let mut sim = HalfBus::new(topo.clone(), Scope::Only(Domain::Sim))?;
    let mut acc = HalfBus::new(topo.clone(), Scope::Only(Domain::Acc))?;
    let checker = ProtocolChecker::new(topo.masters.len());
    let mut r = empty_result(EngineMode::Conventional, scn.cycles);
    for _ in 0..scn.cycles {
        let dm = sim.drive_map();
        let s_out = sim.outputs();
        let to_acc = ChannelPacket::new(PacketKind::ConvOut, Direction::S2A, pack_snapshot(&s_out, &dm.sim));
        r.ledger.record(&scn.cost, &scn.charge, &to_acc);
        let a_remote = acc.remote_mask();
        let mut a_full = acc.outputs();
        let a_out = a_full;
        a_full.merge_from(&unpack_snapshot(&to_acc.payload, &a_remote).map_err(SyncError::from)?, &a_remote);
        let to_sim = ChannelPacket::new(PacketKind::ConvIn, Direction::A2S, pack_snapshot(&a_out, &dm.acc));
        r.ledger.record(&scn.cost, &scn.charge, &to_sim);
        let s_remote = sim.remote_mask();
        let mut s_full = s_out;
        s_full.merge_from(&unpack_snapshot(&to_sim.payload, &s_remote).map_err(SyncError::from)?, &s_remote);
        if s_full != a_full {
            return Err(SyncError::DesyncDetected {
                domain: Domain::Acc,
                cycle: sim.cycle(),
                reason: "halves assembled different snapshots".into(),
            }
            .into());
        }
        checker.check(&s_full, sim.pipe())?;
        sim.commit(&s_full);
        acc.commit(&s_full);
        r.trace_hash = hash_snapshot(r.trace_hash, &s_full);
        if opts.record_trace {
            r.trace.push(s_full);
        }
    }
    r.sim_cycles = scn.cycles;
    r.acc_cycles = scn.cycles;
    (r.memory_images, r.digests) = merged_images(&sim, &acc);
    Ok(finish(scn, r))
}

pub fn sync_config(scn: &Scenario, opts: &RunOptions) -> SyncConfig {
    SyncConfig {
        depth: scn.depth,
        cycles: scn.cycles,
        p_success: scn.noise.p_success,
        seed: scn.noise.seed,
        variable_count: scn.checkpoint.variable_count,
        cost: scn.cost,
        charge: scn.charge,
        record_trace: opts.record_trace,
        record_paths: opts.record_paths,
    }
}

fn run_single<P: Port>(sim: &mut ChannelWrapper<P>, acc: &mut ChannelWrapper<P>) -> Result<(), EngineError> {
    loop {
        let a = sim.poll()?;
        let b = acc.poll()?;
        match (a, b) {
            (Poll::Done, Poll::Done) => return Ok(()),
            (Poll::Blocked | Poll::Done, Poll::Blocked | Poll::Done) => {
                // one more round in case the last poll delivered a packet
                let a = sim.poll()?;
                let b = acc.poll()?;
                if matches!(a, Poll::Blocked | Poll::Done) && matches!(b, Poll::Blocked | Poll::Done) {
                    if a == Poll::Done && b == Poll::Done {
                        return Ok(());
                    }
                    return Err(EngineError::Deadlock { sim: sim.state().cycle(), acc: acc.state().cycle() });
                }
            }
            _ => {}
        }
    }
}

fn drive<P: Port>(w: &mut ChannelWrapper<P>) -> Result<(), SyncError> {
    loop {
        match w.poll()? {
            Poll::Progress => {}
            Poll::Done => return Ok(()),
            Poll::Blocked => {
                if !w.wait_peer() {
                    return Err(SyncError::PeerGone);
                }
            }
        }
    }
}

type Finished = ((DomainState, CwRecord), (DomainState, CwRecord));

fn run_wrappers(scn: &Scenario, opts: &RunOptions) -> Result<Finished, EngineError> {
    let cfg = sync_config(scn, opts);
    let sim_state = DomainState::new(scn.topology.clone(), Domain::Sim)?;
    let acc_state = DomainState::new(scn.topology.clone(), Domain::Acc)?;
    match opts.threading {
        Threading::Single => {
            let (ps, pa) = queue_pair();
            let mut sim = ChannelWrapper::new(Domain::Sim, sim_state, cfg.clone(), ps);
            let mut acc = ChannelWrapper::new(Domain::Acc, acc_state, cfg, pa);
            run_single(&mut sim, &mut acc)?;
            Ok((sim.into_parts(), acc.into_parts()))
        }
        Threading::Two => {
            let (ps, pa) = thread_pair();
            let sim = ChannelWrapper::new(Domain::Sim, sim_state, cfg.clone(), ps);
            let acc = ChannelWrapper::new(Domain::Acc, acc_state, cfg, pa);
            let run = |mut w: ChannelWrapper<_>| drive(&mut w).map(|_| w.into_parts());
            let (a, b) = std::thread::scope(|s| {
                let ha = s.spawn(move || run(sim));
                let hb = s.spawn(move || run(acc));
                (ha.join().expect("sim wrapper panicked"), hb.join().expect("acc wrapper panicked"))
            });
            match (a, b) {
                (Ok(a), Ok(b)) => Ok((a, b)),
                // report the root cause rather than the peer's disconnect
                (Err(SyncError::PeerGone), Err(e)) | (Err(e), _) | (_, Err(e)) => Err(e.into()),
            }
        }
    }
}

/// Optimistic co-emulation through the two channel wrappers.
pub fn run_optimistic(scn: &Scenario, opts: &RunOptions) -> Result<RunResult, EngineError> {
    let ((sim_state, sim_rec), (acc_state, acc_rec)) = run_wrappers(scn, opts)?;
    for (d, rec) in [(Domain::Sim, &sim_rec), (Domain::Acc, &acc_rec)] {
        if rec.committed != scn.cycles {
            return Err(SyncError::DesyncDetected {
                domain: d,
                cycle: rec.committed,
                reason: format!("committed {} of {} cycles", rec.committed, scn.cycles),
            }
            .into());
        }
    }
    if sim_rec.trace_hash != acc_rec.trace_hash || sim_rec.trace != acc_rec.trace {
        let cycle = sim_rec.trace.iter().zip(&acc_rec.trace).position(|(a, b)| a != b).unwrap_or(0) as u64;
        return Err(SyncError::DesyncDetected {
            domain: Domain::Acc,
            cycle,
            reason: "the two domains committed different traces".into(),
        }
        .into());
    }
    let mut r = empty_result(EngineMode::Optimistic, scn.cycles);
    let mut sent: Vec<PacketMeta> = sim_rec.sent.iter().chain(&acc_rec.sent).copied().collect();
    sent.sort_by_key(|m| (m.stamp, m.direction));
    r.ledger = ChannelLedger::from_meta(&scn.cost, &scn.charge, &sent);
    r.trace_hash = sim_rec.trace_hash;
    r.sim_cycles = sim_rec.cycles_executed;
    r.acc_cycles = acc_rec.cycles_executed;
    r.stores = [sim_rec.stores, acc_rec.stores];
    r.restores = [sim_rec.restores, acc_rec.restores];
    r.predictions = sim_rec.predictions + acc_rec.predictions;
    let mut transitions = sim_rec.transitions;
    transitions.extend(acc_rec.transitions);
    transitions.sort_by_key(|t| t.start_cycle);
    for (i, t) in transitions.iter_mut().enumerate() {
        t.id = i as u64;
    }
    r.transitions = transitions;
    (r.memory_images, r.digests) = merged_images(&sim_state.bus, &acc_state.bus);
    r.trace = sim_rec.trace;
    r.sim_paths = sim_rec.paths;
    r.acc_paths = acc_rec.paths;
    Ok(finish(scn, r))
}

pub fn run(scn: &Scenario, opts: &RunOptions) -> Result<RunResult, EngineError> {
    match scn.engine {
        EngineMode::Conventional => run_conventional(scn, opts),
        EngineMode::Optimistic => run_optimistic(scn, opts),
    }
}

/// Output of the monolithic reference bus.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub trace: Vec<MsabsSnapshot>,
    pub memory_images: Vec<(usize, Vec<u32>)>,
    pub digests: Vec<(usize, MasterDigest)>,
}

pub fn run_reference(scn: &Scenario) -> Result<Reference, FabricError> {
    let mut m = MonolithicBus::new(scn.topology.clone())?;
    m.run(scn.cycles)?;
    let memory_images = m.bus().memory_images();
    let digests = m.bus().master_digests();
    Ok(Reference { trace: m.into_trace(), memory_images, digests })
}

/// First cycle at which `r` differs from the reference, or a mismatch in
/// the final memory images (reported as cycle `N`).
pub fn first_mismatch(r: &RunResult, reference: &Reference) -> Option<u64> {
    if let Some(i) = r.trace.iter().zip(&reference.trace).position(|(a, b)| a != b) {
        return Some(i as u64);
    }
    if r.trace.len() != reference.trace.len() {
        return Some(r.trace.len().min(reference.trace.len()) as u64);
    }
    if r.memory_images != reference.memory_images || r.digests != reference.digests {
        return Some(r.cycles);
    }
    None
}

/// Per-component renewal-reward estimates over the run's transitions, in
/// the order of [`PerfBreakdown::components`].
pub fn transition_estimates(scn: &Scenario, transitions: &[TransitionRecord]) -> [RatioEstimate; 5] {
    let cp = &scn.checkpoint;
    let comp = |f: &dyn Fn(&TransitionRecord) -> f64| {
        ratio_estimate(transitions.iter().map(|t| (f(t), t.committed as f64)).collect::<Vec<_>>())
    };
    let lead = |t: &TransitionRecord| t.mode.leader().unwrap_or(Domain::Sim);
    let cycles = |t: &TransitionRecord, d: Domain| {
        let n = if lead(t) == d { t.leader_cycles } else { t.lagger_cycles };
        n as f64 * if d == Domain::Sim { scn.speeds.t_sim_cycle } else { scn.speeds.t_acc_cycle }
    };
    [
        comp(&|t| cycles(t, Domain::Sim)),
        comp(&|t| cycles(t, Domain::Acc)),
        comp(&|t| t.stores as f64 * cp.store_s(lead(t))),
        comp(&|t| t.restores as f64 * cp.store_s(lead(t))),
        comp(&|t| t.channel_s),
    ]
}

pub const TRANSITIONS_HEADER: &str =
    "id,mode,start_cycle,committed,predictions,failure_index,leader_cycles,lagger_cycles,stores,restores,packets,channel_s,phases";

pub fn write_transitions<W: Write>(w: &mut W, ts: &[TransitionRecord]) -> io::Result<()> {
    writeln!(w, "{TRANSITIONS_HEADER}")?;
    for t in ts {
        let phases: Vec<&str> = t.phases.iter().map(|p| p.name()).collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{:e},{}",
            t.id,
            t.mode,
            t.start_cycle,
            t.committed,
            t.predictions,
            t.failure_index.map(|i| i.to_string()).unwrap_or_default(),
            t.leader_cycles,
            t.lagger_cycles,
            t.stores,
            t.restores,
            t.packets,
            t.channel_s,
            phases.join(" ")
        )?;
    }
    Ok(())
}
