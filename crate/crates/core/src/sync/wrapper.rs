use super::{
    check_prediction, choose_path, restore_checkpoint, store_checkpoint, Checkpoint, CwState, DomainState, Lob, LobEntry,
    Noise, OperatingMode, Path, PathInputs, Role, Station, SyncError, TransitionPhase,
};
use crate::ahb::{pack_small, pack_snapshot, unpack_self_describing, unpack_snapshot, FieldMask, MsabsSnapshot};
use crate::channel::{
    decode_lob_flush, encode_lob_flush, transfer_time, ChannelPacket, CostModel, Direction, PacketKind, PacketMeta,
    WordCharge,
};
use crate::engine::mode_select;
use crate::fabric::Domain;
use std::cell::RefCell;
use std::collections::VecDeque;
use std::rc::Rc;
use std::sync::mpsc;

/// Packet transport between the two wrappers.
pub trait Port {
    fn send(&mut self, p: ChannelPacket);
    fn try_recv(&mut self) -> Option<ChannelPacket>;
    /// Blocks until a packet may be available. Returns false once the peer
    /// is gone. Cooperative transports return immediately.
    fn wait(&mut self) -> bool {
        true
    }
}

/// In-process FIFO pair for the single-threaded scheduler.
#[derive(Debug)]
pub struct QueuePort {
    tx: Rc<RefCell<VecDeque<ChannelPacket>>>,
    rx: Rc<RefCell<VecDeque<ChannelPacket>>>,
}

pub fn queue_pair() -> (QueuePort, QueuePort) {
    let a = Rc::new(RefCell::new(VecDeque::new()));
    let b = Rc::new(RefCell::new(VecDeque::new()));
    (QueuePort { tx: a.clone(), rx: b.clone() }, QueuePort { tx: b, rx: a })
}

impl Port for QueuePort {
    fn send(&mut self, p: ChannelPacket) {
        self.tx.borrow_mut().push_back(p);
    }

    fn try_recv(&mut self) -> Option<ChannelPacket> {
        self.rx.borrow_mut().pop_front()
    }
}

/// Channel pair for running each wrapper on its own thread.
#[derive(Debug)]
pub struct ThreadPort {
    tx: mpsc::Sender<ChannelPacket>,
    rx: mpsc::Receiver<ChannelPacket>,
    held: Option<ChannelPacket>,
}

pub fn thread_pair() -> (ThreadPort, ThreadPort) {
    let (ta, ra) = mpsc::channel();
    let (tb, rb) = mpsc::channel();
    (ThreadPort { tx: ta, rx: rb, held: None }, ThreadPort { tx: tb, rx: ra, held: None })
}

impl Port for ThreadPort {
    fn send(&mut self, p: ChannelPacket) {
        // a vanished peer surfaces as PeerGone on the next wait
        let _ = self.tx.send(p);
    }

    fn try_recv(&mut self) -> Option<ChannelPacket> {
        self.held.take().or_else(|| self.rx.try_recv().ok())
    }

    fn wait(&mut self) -> bool {
        if self.held.is_none() {
            match self.rx.recv() {
                Ok(p) => self.held = Some(p),
                Err(_) => return false,
            }
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyncConfig {
    pub depth: usize,
    pub cycles: u64,
    pub p_success: f64,
    pub seed: u64,
    pub variable_count: u64,
    pub cost: CostModel,
    pub charge: WordCharge,
    pub record_trace: bool,
    pub record_paths: bool,
}

/// Paths and stations visited in one unit cycle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathRecord {
    pub cycle: u64,
    pub path: Path,
    pub stations: Vec<Station>,
}

/// One transition as seen by its leader.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub id: u64,
    pub mode: OperatingMode,
    pub start_cycle: u64,
    pub committed: u64,
    pub predictions: u64,
    /// Index of the failed entry, if any.
    pub failure_index: Option<u64>,
    pub leader_cycles: u64,
    pub lagger_cycles: u64,
    pub stores: u64,
    pub restores: u64,
    pub packets: u64,
    pub channel_s: f64,
    pub phases: Vec<TransitionPhase>,
}

/// What a wrapper observed and did over a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CwRecord {
    pub trace: Vec<MsabsSnapshot>,
    pub trace_hash: u64,
    pub committed: u64,
    pub cycles_executed: u64,
    pub stores: u64,
    pub restores: u64,
    pub predictions: u64,
    pub sent: Vec<PacketMeta>,
    pub paths: Vec<PathRecord>,
    pub transitions: Vec<TransitionRecord>,
}

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

impl CwRecord {
    fn new() -> Self {
        CwRecord { trace_hash: FNV_OFFSET, ..Default::default() }
    }
}

pub fn hash_snapshot(h: u64, s: &MsabsSnapshot) -> u64 {
    let words = [
        s.haddr,
        s.htrans.code() | (s.hwrite as u32) << 2 | s.hsize.code() << 3 | s.hburst.code() << 6,
        s.hprot as u32 | s.hresp.code() << 4 | (s.hready as u32) << 6,
        s.hwdata,
        s.hrdata,
        s.hsplit as u32 | (s.hbusreq as u32) << 16,
        s.sideband,
    ];
    words.iter().fold(h, |h, w| (h ^ *w as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Result of one `poll`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Poll {
    /// Made progress; poll again.
    Progress,
    /// Waiting for a packet from the peer.
    Blocked,
    Done,
}

#[derive(Clone, Debug)]
enum Step {
    Start,
    /// Sent CONV_OUT, waiting for CONV_IN.
    AwaitConvIn { out: MsabsSnapshot, store_after: bool },
    /// Waiting for the leader's packet at the start of a cycle.
    AwaitLeader,
    RunAhead,
    /// LOB flushed, waiting for the lagger's report.
    AwaitReport { out: MsabsSnapshot },
    FollowUp { entries: Vec<LobEntry>, pos: usize },
    RollForth { fail: usize, actual: Vec<u32>, pos: usize },
    Done,
}

/// Channel Wrapper for one domain.
pub struct ChannelWrapper<P: Port> {
    domain: Domain,
    state: DomainState,
    cfg: SyncConfig,
    port: P,
    step: Step,
    cw: CwState,
    lob: Lob,
    checkpoint: Option<Checkpoint>,
    noise: Noise,
    lamport: u64,
    /// Leader's uncommitted run-ahead snapshots.
    speculative: Vec<MsabsSnapshot>,
    current: Option<TransitionRecord>,
    stations: Vec<Station>,
    rec: CwRecord,
}

impl<P: Port> ChannelWrapper<P> {
    /// Each wrapper draws noise from its own stream of `cfg.seed`.
    pub fn new(domain: Domain, state: DomainState, cfg: SyncConfig, port: P) -> Self {
        let stream = match domain {
            Domain::Sim => cfg.seed,
            Domain::Acc => cfg.seed ^ 0x5eed_0acc_0000_0000,
        };
        ChannelWrapper {
            domain,
            noise: Noise::new(cfg.p_success, stream),
            lob: Lob::new(cfg.depth),
            state,
            cfg,
            port,
            step: Step::Start,
            cw: CwState::default(),
            checkpoint: None,
            lamport: 0,
            speculative: Vec::new(),
            current: None,
            stations: Vec::new(),
            rec: CwRecord::new(),
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn state(&self) -> &DomainState {
        &self.state
    }

    pub fn record(&self) -> &CwRecord {
        &self.rec
    }

    pub fn into_parts(self) -> (DomainState, CwRecord) {
        (self.state, self.rec)
    }

    /// Blocks until the peer may have sent something; false once it is gone.
    pub fn wait_peer(&mut self) -> bool {
        self.port.wait()
    }

    pub fn is_done(&self) -> bool {
        matches!(self.step, Step::Done)
    }

    fn desync(&self, reason: impl Into<String>) -> SyncError {
        SyncError::DesyncDetected { domain: self.domain, cycle: self.state.cycle(), reason: reason.into() }
    }

    fn direction(&self) -> Direction {
        Direction::from_sender(self.domain)
    }

    fn own_fields(&self) -> FieldMask {
        self.state.bus.drive_map().of(self.domain)
    }

    fn transmit(&mut self, mut p: ChannelPacket) -> f64 {
        self.lamport += 1;
        p.stamp = self.lamport;
        let meta = PacketMeta::of(&p);
        let t = transfer_time(&self.cfg.cost, p.direction, self.cfg.charge.charged(&meta));
        self.rec.sent.push(meta);
        self.port.send(p);
        t
    }

    fn receive(&mut self) -> Option<ChannelPacket> {
        let p = self.port.try_recv()?;
        self.lamport = self.lamport.max(p.stamp) + 1;
        Some(p)
    }

    fn cost_of(&self, p: &ChannelPacket) -> f64 {
        transfer_time(&self.cfg.cost, p.direction, self.cfg.charge.charged(&PacketMeta::of(p)))
    }

    fn commit(&mut self, full: &MsabsSnapshot) {
        self.state.commit(full);
        self.rec.cycles_executed += 1;
    }

    fn push_committed(&mut self, s: MsabsSnapshot) {
        self.rec.trace_hash = hash_snapshot(self.rec.trace_hash, &s);
        self.rec.committed += 1;
        if self.cfg.record_trace {
            self.rec.trace.push(s);
        }
    }

    fn visit(&mut self, s: Station) {
        self.cw.station = s;
        if self.cfg.record_paths {
            self.stations.push(s);
        }
    }

    fn end_unit_cycle(&mut self, cycle: u64, path: Path) {
        self.cw.path = path;
        self.visit(Station::End);
        if self.cfg.record_paths {
            let stations = std::mem::take(&mut self.stations);
            self.rec.paths.push(PathRecord { cycle, path, stations });
        }
    }

    fn store(&mut self) {
        self.checkpoint = Some(store_checkpoint(&self.state, self.cfg.variable_count));
        self.rec.stores += 1;
    }

    fn role_now(&self) -> (OperatingMode, Role) {
        let mode = mode_select(&self.state.bus);
        let role = match mode.leader() {
            Some(d) if d == self.domain => Role::Leader,
            Some(_) => Role::Lagger,
            None => Role::None,
        };
        (mode, role)
    }

    fn inputs(&self, predictable: bool, pending_entry: Option<bool>) -> PathInputs {
        PathInputs {
            predictable,
            lob_len: self.lob.len(),
            depth: self.cfg.depth,
            last_cycle: self.state.cycle() + 1 >= self.cfg.cycles,
            pending_entry,
        }
    }

    /// After a transition ends, the closing exchange doubles as the store
    /// point of the next transition when the next cycle is predictable.
    fn store_if_next_predictable(&mut self) {
        let (_, role) = self.role_now();
        if self.state.cycle() < self.cfg.cycles && role == Role::Leader && self.state.predictor.predictable(&self.state.bus)
        {
            self.visit(Station::RbStore);
            self.store();
        }
    }

    fn send_conv(&mut self, kind: PacketKind) -> MsabsSnapshot {
        let out = self.state.bus.outputs();
        let words = pack_snapshot(&out, &self.own_fields());
        let dir = self.direction();
        self.transmit(ChannelPacket::new(kind, dir, words));
        out
    }

    /// Advances the state machine until it blocks, finishes a unit cycle or
    /// completes the run.
    pub fn poll(&mut self) -> Result<Poll, SyncError> {
        let step = std::mem::replace(&mut self.step, Step::Done);
        let (next, poll) = self.advance(step)?;
        self.step = next;
        Ok(poll)
    }

    fn advance(&mut self, step: Step) -> Result<(Step, Poll), SyncError> {
        let cycle = self.state.cycle();
        match step {
            Step::Done => Ok((Step::Done, Poll::Done)),
            Step::Start => {
                if cycle >= self.cfg.cycles {
                    return Ok((Step::Done, Poll::Done));
                }
                self.visit(Station::Start);
                let (mode, role) = self.role_now();
                self.cw = CwState { role, in_transition: false, restored: false, ..self.cw };
                if role != Role::Leader {
                    // unreachable by construction; a stale store is simply dropped
                    self.checkpoint = None;
                }
                match role {
                    Role::Leader => {
                        let predictable = self.state.predictor.predictable(&self.state.bus);
                        let path = choose_path(&self.cw, &self.inputs(predictable, None))?;
                        if path != Path::P || self.checkpoint.as_ref().is_some_and(|c| c.cycle != cycle) {
                            // the predictor changed its mind after the store
                            self.checkpoint = None;
                        }
                        match path {
                            Path::P if self.checkpoint.is_some() => {
                                self.cw.in_transition = true;
                                self.lob.clear();
                                self.current = Some(TransitionRecord {
                                    id: self.rec.transitions.len() as u64,
                                    mode,
                                    start_cycle: cycle,
                                    committed: 0,
                                    predictions: 0,
                                    failure_index: None,
                                    leader_cycles: 0,
                                    lagger_cycles: 0,
                                    stores: 1,
                                    restores: 0,
                                    packets: 0,
                                    channel_s: 0.0,
                                    phases: vec![TransitionPhase::Ra],
                                });
                                Ok((Step::RunAhead, Poll::Progress))
                            }
                            Path::P => {
                                self.visit(Station::RbStore);
                                self.visit(Station::ConservativeHop);
                                self.cw.path = Path::P;
                                let out = self.send_conv(PacketKind::ConvOut);
                                Ok((Step::AwaitConvIn { out, store_after: true }, Poll::Progress))
                            }
                            _ => {
                                self.cw.path = Path::C;
                                let out = self.send_conv(PacketKind::ConvOut);
                                Ok((Step::AwaitConvIn { out, store_after: false }, Poll::Progress))
                            }
                        }
                    }
                    Role::None if self.domain == Domain::Sim => {
                        self.cw.path = Path::C;
                        let out = self.send_conv(PacketKind::ConvOut);
                        Ok((Step::AwaitConvIn { out, store_after: false }, Poll::Progress))
                    }
                    Role::None | Role::Lagger => {
                        self.cw.path = Path::C;
                        self.visit(Station::ReadInput);
                        Ok((Step::AwaitLeader, Poll::Progress))
                    }
                }
            }
            Step::AwaitConvIn { out, store_after } => {
                let Some(p) = self.receive() else {
                    return Ok((Step::AwaitConvIn { out, store_after }, Poll::Blocked));
                };
                if p.kind != PacketKind::ConvIn {
                    return Err(self.desync(format!("expected CONV_IN, got {}", p.kind)));
                }
                let remote = self.state.bus.remote_mask();
                let vals = unpack_snapshot(&p.payload, &remote).map_err(|e| self.desync(e.to_string()))?;
                let mut full = out;
                full.merge_from(&vals, &remote);
                self.commit(&full);
                self.push_committed(full);
                if store_after {
                    self.store();
                }
                let path = self.cw.path;
                self.end_unit_cycle(cycle, path);
                Ok((Step::Start, Poll::Progress))
            }
            Step::AwaitLeader => {
                let Some(p) = self.receive() else {
                    return Ok((Step::AwaitLeader, Poll::Blocked));
                };
                match p.kind {
                    PacketKind::ConvOut => {
                        let remote = self.state.bus.remote_mask();
                        let vals = unpack_snapshot(&p.payload, &remote).map_err(|e| self.desync(e.to_string()))?;
                        let out = self.send_conv(PacketKind::ConvIn);
                        let mut full = out;
                        full.merge_from(&vals, &remote);
                        self.commit(&full);
                        self.push_committed(full);
                        self.end_unit_cycle(cycle, Path::C);
                        Ok((Step::Start, Poll::Progress))
                    }
                    PacketKind::LobFlush => {
                        let entries = decode_lob_flush(&p)?;
                        self.cw.in_transition = true;
                        Ok((Step::FollowUp { entries, pos: 0 }, Poll::Progress))
                    }
                    other => Err(self.desync(format!("unexpected {other} while waiting for the leader"))),
                }
            }
            Step::RunAhead => self.run_ahead(cycle),
            Step::AwaitReport { out } => {
                let Some(p) = self.receive() else {
                    return Ok((Step::AwaitReport { out }, Poll::Blocked));
                };
                let cost = self.cost_of(&p);
                let mut tr = self.current.take().ok_or_else(|| self.desync("report outside a transition"))?;
                tr.packets += 1;
                tr.channel_s += cost;
                tr.phases.push(TransitionPhase::Fu);
                match p.kind {
                    PacketKind::ReportAllOk => {
                        let remote = self.state.bus.remote_mask();
                        let vals = unpack_snapshot(&p.payload, &remote).map_err(|e| self.desync(e.to_string()))?;
                        let mut full = out;
                        full.merge_from(&vals, &remote);
                        // the S-cycle was already counted when it was evaluated
                        self.state.commit(&full);
                        let run = std::mem::take(&mut self.speculative);
                        for s in &run {
                            self.push_committed(*s);
                        }
                        self.speculative = run;
                        self.speculative.clear();
                        self.push_committed(full);
                        tr.committed = self.lob.len() as u64;
                        tr.lagger_cycles = tr.committed;
                        self.rec.transitions.push(tr);
                        self.finish_transition(cycle);
                        Ok((Step::Start, Poll::Progress))
                    }
                    PacketKind::ReportFail => {
                        let (&idx, actual) =
                            p.payload.split_first().ok_or_else(|| self.desync("empty failure report"))?;
                        self.visit(Station::StoreActual);
                        self.visit(Station::RequestRestore);
                        let cp = self.checkpoint.take().ok_or(SyncError::NoCheckpoint)?;
                        restore_checkpoint(&mut self.state, &cp);
                        self.rec.restores += 1;
                        self.speculative.clear();
                        tr.restores = 1;
                        tr.failure_index = Some(idx as u64);
                        tr.committed = idx as u64 + 1;
                        tr.lagger_cycles = tr.committed;
                        tr.phases.extend([TransitionPhase::Rb, TransitionPhase::Rf]);
                        self.current = Some(tr);
                        self.cw.restored = true;
                        self.end_unit_cycle(cycle, Path::S);
                        Ok((Step::RollForth { fail: idx as usize, actual: actual.to_vec(), pos: 0 }, Poll::Progress))
                    }
                    other => Err(self.desync(format!("unexpected {other} while waiting for the report"))),
                }
            }
            Step::FollowUp { entries, pos } => self.follow_up(entries, pos, cycle),
            Step::RollForth { fail, actual, pos } => self.roll_forth(fail, actual, pos, cycle),
        }
    }

    fn run_ahead(&mut self, cycle: u64) -> Result<(Step, Poll), SyncError> {
        self.visit(Station::Start);
        let predictable = self.lob.is_empty() || self.state.predictor.predictable(&self.state.bus);
        let path = choose_path(&self.cw, &self.inputs(predictable, None))?;
        let out = self.state.bus.outputs();
        let own = pack_small(&out, &self.own_fields());
        let tr = self.current.as_mut().expect("run-ahead inside a transition");
        if path == Path::P {
            let remote = self.state.bus.remote_mask();
            let mut pred = self.state.predictor.predict_response(&self.state.bus, &remote)?;
            self.noise.apply(&mut pred, &remote);
            tr.predictions += 1;
            tr.leader_cycles += 1;
            self.rec.predictions += 1;
            self.lob.push(LobEntry { cycle, leader_outputs: own, prediction: Some(pack_small(&pred, &remote)) })?;
            let mut full = out;
            full.merge_from(&pred, &remote);
            self.commit(&full);
            self.speculative.push(full);
            self.end_unit_cycle(cycle, Path::P);
            return Ok((Step::RunAhead, Poll::Progress));
        }
        tr.leader_cycles += 1;
        self.lob.push(LobEntry { cycle, leader_outputs: own, prediction: None })?;
        let packet = encode_lob_flush(self.lob.entries(), self.direction())?;
        self.visit(Station::Flush);
        let t = self.transmit(packet);
        let tr = self.current.as_mut().expect("run-ahead inside a transition");
        tr.packets += 1;
        tr.channel_s += t;
        self.rec.cycles_executed += 1;
        self.visit(Station::GetResponse);
        Ok((Step::AwaitReport { out }, Poll::Progress))
    }

    fn finish_transition(&mut self, cycle: u64) {
        self.lob.clear();
        self.checkpoint = None;
        self.cw.in_transition = false;
        self.cw.restored = false;
        self.store_if_next_predictable();
        let path = if self.cw.path == Path::F { Path::F } else { Path::S };
        self.end_unit_cycle(cycle, path);
    }

    fn follow_up(&mut self, entries: Vec<LobEntry>, pos: usize, cycle: u64) -> Result<(Step, Poll), SyncError> {
        let entry = &entries[pos];
        if entry.cycle != cycle {
            return Err(self.desync(format!("flushed entry for cycle {} arrived at cycle {cycle}", entry.cycle)));
        }
        self.visit(Station::Start);
        let has_pred = entry.prediction.is_some();
        let path = choose_path(&self.cw, &self.inputs(false, Some(has_pred)))?;
        let remote = self.state.bus.remote_mask();
        let (lead_mask, lead, _) = unpack_self_describing(&entry.leader_outputs)?;
        if lead_mask != remote {
            return Err(self.desync("leader drove a different field set"));
        }
        let out = self.state.bus.outputs();
        let mine = self.own_fields();
        let mut full = out;
        full.merge_from(&lead, &remote);
        if path == Path::L {
            self.visit(Station::PredictionCheck);
            let ok = check_prediction(entry, &out)?;
            self.commit(&full);
            self.push_committed(full);
            if ok {
                self.end_unit_cycle(cycle, Path::L);
                return Ok((Step::FollowUp { entries, pos: pos + 1 }, Poll::Progress));
            }
            self.visit(Station::ReportFail);
            let mut payload = vec![pos as u32];
            payload.extend(pack_snapshot(&out, &mine));
            let dir = self.direction();
            self.transmit(ChannelPacket::new(PacketKind::ReportFail, dir, payload));
            self.visit(Station::WaitLeader);
            self.cw.in_transition = false;
            self.end_unit_cycle(cycle, Path::L);
            return Ok((Step::Start, Poll::Progress));
        }
        self.commit(&full);
        self.push_committed(full);
        self.visit(Station::SendOutput);
        let dir = self.direction();
        self.transmit(ChannelPacket::new(PacketKind::ReportAllOk, dir, pack_snapshot(&out, &mine)));
        self.visit(Station::ReadInput);
        self.cw.in_transition = false;
        self.end_unit_cycle(cycle, Path::R);
        Ok((Step::Start, Poll::Progress))
    }

    fn roll_forth(&mut self, fail: usize, actual: Vec<u32>, pos: usize, cycle: u64) -> Result<(Step, Poll), SyncError> {
        self.visit(Station::Start);
        let path = choose_path(&self.cw, &self.inputs(false, None))?;
        debug_assert_eq!(path, Path::F);
        self.cw.path = Path::F;
        let entry = self.lob.get(pos).ok_or_else(|| self.desync("roll-forth past the LOB"))?.clone();
        if entry.cycle != cycle {
            return Err(self.desync("roll-forth cycle mismatch"));
        }
        let out = self.state.bus.outputs();
        if pack_small(&out, &self.own_fields()) != entry.leader_outputs {
            return Err(self.desync("replayed outputs differ from the buffered ones"));
        }
        let words: &[u32] =
            if pos < fail { entry.prediction.as_ref().ok_or_else(|| self.desync("missing prediction"))? } else { &actual };
        let (mask, vals, _) = unpack_self_describing(words)?;
        if mask != self.state.bus.remote_mask() {
            return Err(self.desync("response covers a different field set"));
        }
        let mut full = out;
        full.merge_from(&vals, &mask);
        self.commit(&full);
        self.push_committed(full);
        if let Some(tr) = self.current.as_mut() {
            tr.leader_cycles += 1;
        }
        if pos < fail {
            self.end_unit_cycle(cycle, Path::F);
            return Ok((Step::RollForth { fail, actual, pos: pos + 1 }, Poll::Progress));
        }
        let tr = self.current.take().ok_or_else(|| self.desync("roll-forth outside a transition"))?;
        self.rec.transitions.push(tr);
        self.finish_transition(cycle);
        Ok((Step::Start, Poll::Progress))
    }
}
