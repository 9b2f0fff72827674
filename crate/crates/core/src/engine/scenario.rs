use crate::ahb::{Hburst, Hsize};
use crate::channel::{CalibratedCharges, CostModel, WordCharge};
use crate::fabric::{
    ArbiterConfig, DecoderMap, Domain, FabricError, IrqConfig, MasterPlacement, MasterScript, Payload, Region, SidebandSignal,
    SlaveConfig, SlavePlacement, Topology, Transaction,
};
use crate::perfmodel::PerfParams;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;
use std::sync::Arc;
use thiserror::Error;
use toml::Spanned;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineMode {
    Conventional,
    Optimistic,
}

impl EngineMode {
    pub fn name(self) -> &'static str {
        match self {
            EngineMode::Conventional => "conventional",
            EngineMode::Optimistic => "optimistic",
        }
    }
}

impl fmt::Display for EngineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EngineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "conventional" => Ok(EngineMode::Conventional),
            "optimistic" => Ok(EngineMode::Optimistic),
            _ => Err(format!("unknown engine `{s}` (expected conventional or optimistic)")),
        }
    }
}

/// Seconds per target cycle in each domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Speeds {
    pub t_sim_cycle: f64,
    pub t_acc_cycle: f64,
}

impl Default for Speeds {
    fn default() -> Self {
        Speeds { t_sim_cycle: 1.0e-6, t_acc_cycle: 1.0e-7 }
    }
}

/// Rollback state size and per-variable store cost in each domain. A
/// restore costs the same as a store.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointCost {
    pub variable_count: u64,
    pub sim_var_s: f64,
    pub acc_var_s: f64,
}

impl Default for CheckpointCost {
    fn default() -> Self {
        CheckpointCost { variable_count: 1000, sim_var_s: 1.0e-9, acc_var_s: 30.0e-12 }
    }
}

impl CheckpointCost {
    pub fn var_s(&self, d: Domain) -> f64 {
        match d {
            Domain::Sim => self.sim_var_s,
            Domain::Acc => self.acc_var_s,
        }
    }

    /// Seconds for one store (or restore) in domain `d`.
    pub fn store_s(&self, d: Domain) -> f64 {
        self.variable_count as f64 * self.var_s(d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Probability that an individual prediction is left intact.
    pub p_success: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { p_success: 1.0, seed: 0 }
    }
}

/// A complete, validated co-emulation setup.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub engine: EngineMode,
    pub cycles: u64,
    pub depth: usize,
    pub speeds: Speeds,
    pub checkpoint: CheckpointCost,
    pub noise: NoiseConfig,
    pub cost: CostModel,
    pub charge: WordCharge,
    pub topology: Arc<Topology>,
    /// The file text this scenario was parsed from, if any.
    pub source: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{}{msg}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub msg: String,
}

impl ScenarioError {
    fn at(src: &str, span: Option<Range<usize>>, msg: impl Into<String>) -> Self {
        let line = span.map(|s| src[..s.start.min(src.len())].matches('\n').count() + 1);
        ScenarioError { line, msg: msg.into() }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default = "default_name")]
    name: String,
    #[serde(default = "default_engine")]
    engine: EngineMode,
    cycles: Spanned<u64>,
    #[serde(default = "default_depth")]
    depth: Spanned<usize>,
    speeds: Option<Spanned<Speeds>>,
    checkpoint: Option<Spanned<CheckpointCost>>,
    noise: Option<Spanned<NoiseConfig>>,
    channel: Option<Spanned<CostModel>>,
    #[serde(default)]
    charge: WordCharge,
    arbiter: Option<Spanned<ArbiterConfig>>,
    #[serde(default, rename = "sideband")]
    sidebands: Vec<Spanned<SidebandSignal>>,
    #[serde(default, rename = "region")]
    regions: Vec<Spanned<Region>>,
    #[serde(default, rename = "slave")]
    slaves: Vec<Spanned<RawSlave>>,
    #[serde(default, rename = "master")]
    masters: Vec<Spanned<RawMaster>>,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_engine() -> EngineMode {
    EngineMode::Optimistic
}

fn default_depth() -> Spanned<usize> {
    Spanned::new(0..0, 64)
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSlave {
    domain: Option<Domain>,
    mem_words: u32,
    fifo_depth: u32,
    service_words: u32,
    service_period: u32,
    wait_states: u32,
    irq: Option<IrqConfig>,
    init_seed: u32,
}

impl Default for RawSlave {
    fn default() -> Self {
        let d = SlaveConfig::default();
        RawSlave {
            domain: None,
            mem_words: d.mem_words,
            fifo_depth: d.fifo_depth,
            service_words: d.service_words,
            service_period: d.service_period,
            wait_states: d.wait_states,
            irq: d.irq,
            init_seed: d.init_seed,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMaster {
    domain: Domain,
    #[serde(default, rename = "txn")]
    txns: Vec<RawTxn>,
    #[serde(default, rename = "stream")]
    streams: Vec<RawStream>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTxn {
    #[serde(default)]
    write: bool,
    addr: u32,
    #[serde(default = "default_burst")]
    burst: Hburst,
    #[serde(default = "default_size")]
    size: Hsize,
    beats: Option<u32>,
    #[serde(default = "default_prot")]
    prot: u8,
    #[serde(default)]
    gap: u32,
    #[serde(default)]
    not_before: u64,
    /// Explicit write data; a pattern seeded by the address otherwise.
    data: Option<Vec<u32>>,
}

/// `count` back-to-back transactions at `base`, `base + stride`, ...,
/// wrapping back to `base` after `wrap` bytes when set.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStream {
    #[serde(default)]
    write: bool,
    base: u32,
    count: u64,
    #[serde(default = "default_burst")]
    burst: Hburst,
    #[serde(default = "default_size")]
    size: Hsize,
    beats: Option<u32>,
    stride: Option<u32>,
    wrap: Option<u32>,
    #[serde(default = "default_prot")]
    prot: u8,
    #[serde(default)]
    gap: u32,
    #[serde(default)]
    seed: u32,
}

fn default_burst() -> Hburst {
    Hburst::Single
}

fn default_size() -> Hsize {
    Hsize::Word
}

fn default_prot() -> u8 {
    0x3
}

fn build_txn(write: bool, addr: u32, burst: Hburst, size: Hsize, beats: Option<u32>, seed: u32) -> Transaction {
    let beats = beats.or(burst.beats()).unwrap_or(1);
    let t = if write {
        Transaction::write(addr, burst, size, Payload::Pattern(seed ^ addr))
    } else {
        Transaction::read(addr, burst, size)
    };
    t.with_beats(beats)
}

/// Upper bound on generated transactions per master.
const MAX_STREAM_TXNS: u64 = 1 << 24;

impl RawMaster {
    fn transactions(&self) -> Result<Vec<Transaction>, String> {
        let mut out = Vec::new();
        for t in &self.txns {
            let mut x = build_txn(t.write, t.addr, t.burst, t.size, t.beats, 0);
            if let Some(words) = &t.data {
                if !t.write {
                    return Err("read transaction with data".into());
                }
                x.data = Payload::Words(words.clone());
            }
            x.prot = t.prot;
            x.gap = t.gap;
            x.not_before = t.not_before;
            out.push(x);
        }
        for s in &self.streams {
            if out.len() as u64 + s.count > MAX_STREAM_TXNS {
                return Err(format!("more than {MAX_STREAM_TXNS} transactions"));
            }
            let beats = s.beats.or(s.burst.beats()).unwrap_or(1);
            let stride = s.stride.unwrap_or(beats * s.size.bytes());
            for i in 0..s.count {
                let mut off = (i * stride as u64) as u32;
                if let Some(w) = s.wrap {
                    if w == 0 {
                        return Err("stream wrap must be positive".into());
                    }
                    off = ((i * stride as u64) % w as u64) as u32;
                }
                let mut x = build_txn(s.write, s.base.wrapping_add(off), s.burst, s.size, Some(beats), s.seed);
                x.prot = s.prot;
                x.gap = s.gap;
                out.push(x);
            }
        }
        Ok(out)
    }
}

fn span_of<T>(t: &Option<Spanned<T>>) -> Option<Range<usize>> {
    t.as_ref().map(|t| t.span())
}

fn value_of<T: Clone + Default>(t: &Option<Spanned<T>>) -> T {
    t.as_ref().map(|t| t.get_ref().clone()).unwrap_or_default()
}

impl Scenario {
    pub fn from_toml(src: &str) -> Result<Scenario, ScenarioError> {
        let raw: RawScenario = toml::from_str(src).map_err(|e| ScenarioError::at(src, e.span(), e.message()))?;
        let err = |span: Range<usize>, msg: String| ScenarioError::at(src, Some(span), msg);
        if *raw.cycles.get_ref() == 0 {
            return Err(err(raw.cycles.span(), "cycles must be at least 1".into()));
        }
        if *raw.depth.get_ref() == 0 {
            return Err(err(raw.depth.span(), "depth must be at least 1".into()));
        }
        let speeds: Speeds = value_of(&raw.speeds);
        for (label, v) in [("t_sim_cycle", speeds.t_sim_cycle), ("t_acc_cycle", speeds.t_acc_cycle)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ScenarioError::at(src, span_of(&raw.speeds), format!("{label} must be finite and nonnegative")));
            }
        }
        let checkpoint: CheckpointCost = value_of(&raw.checkpoint);
        let cp = checkpoint;
        if !(cp.sim_var_s.is_finite() && cp.sim_var_s >= 0.0 && cp.acc_var_s.is_finite() && cp.acc_var_s >= 0.0) {
            return Err(ScenarioError::at(src, span_of(&raw.checkpoint), "checkpoint costs must be finite and nonnegative"));
        }
        let noise: NoiseConfig = value_of(&raw.noise);
        if !(0.0..=1.0).contains(&noise.p_success) {
            return Err(ScenarioError::at(src, span_of(&raw.noise), "noise.p_success must lie in [0, 1]"));
        }
        let cost: CostModel = value_of(&raw.channel);
        cost.validate().map_err(|m| ScenarioError::at(src, span_of(&raw.channel), m))?;

        if raw.masters.is_empty() {
            return Err(ScenarioError::at(src, None, "at least one [[master]] is required"));
        }
        let mut masters = Vec::new();
        for (i, m) in raw.masters.iter().enumerate() {
            let txns = m.get_ref().transactions().map_err(|e| err(m.span(), format!("master {i}: {e}")))?;
            let script = MasterScript::new(i, txns).map_err(|e| err(m.span(), e.to_string()))?;
            masters.push(MasterPlacement { domain: m.get_ref().domain, script });
        }
        let mut slaves = Vec::new();
        for (i, s) in raw.slaves.iter().enumerate() {
            let c = s.get_ref();
            let domain = c.domain.ok_or_else(|| err(s.span(), format!("slave {i}: missing domain")))?;
            let config = SlaveConfig {
                mem_words: c.mem_words,
                fifo_depth: c.fifo_depth,
                service_words: c.service_words,
                service_period: c.service_period,
                wait_states: c.wait_states,
                irq: c.irq,
                init_seed: c.init_seed,
            };
            config.validate(i).map_err(|e| err(s.span(), e.to_string()))?;
            slaves.push(SlavePlacement { domain, config });
        }
        let regions: Vec<Region> = raw.regions.iter().map(|r| *r.get_ref()).collect();
        let decoder = DecoderMap::new(regions, slaves.len()).map_err(|e| {
            let i = match e {
                FabricError::RegionSize(i, _)
                | FabricError::RegionAlignment(i, _)
                | FabricError::UnknownSlave { region: i, .. }
                | FabricError::OverlappingRegions(_, i) => i,
                _ => 0,
            };
            ScenarioError::at(src, raw.regions.get(i).map(|r| r.span()), e.to_string())
        })?;
        let (arbiter, arb_span) = match &raw.arbiter {
            Some(a) => (a.get_ref().clone(), Some(a.span())),
            None => (ArbiterConfig::by_index(masters.len()), None),
        };
        let topology = Topology {
            masters,
            slaves,
            decoder,
            arbiter,
            sideband: raw.sidebands.iter().map(|s| s.get_ref().clone()).collect(),
        };
        topology.validate().map_err(|e| {
            let span = match &e {
                FabricError::BadSlave(i, _) => raw.slaves.get(*i).map(|s| s.span()),
                FabricError::BadSidebandDriver(name, _) => {
                    raw.sidebands.iter().find(|s| &s.get_ref().name == name).map(|s| s.span())
                }
                FabricError::TooManyMasters(_) => raw.masters.get(crate::ahb::MAX_MASTERS).map(|m| m.span()),
                FabricError::TooManySideband(_) => raw.sidebands.get(crate::ahb::MAX_SIDEBAND).map(|s| s.span()),
                _ => arb_span.clone(),
            };
            ScenarioError::at(src, span, e.to_string())
        })?;
        Ok(Scenario {
            name: raw.name,
            engine: raw.engine,
            cycles: *raw.cycles.get_ref(),
            depth: *raw.depth.get_ref(),
            speeds,
            checkpoint,
            noise,
            cost,
            charge: raw.charge,
            topology: Arc::new(topology),
            source: Some(src.to_string()),
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError { line: None, msg: format!("{}: {e}", path.display()) })?;
        Scenario::from_toml(&src)
    }

    /// Wraps an already-built topology with default parameters.
    pub fn with_topology(topology: Arc<Topology>, cycles: u64) -> Scenario {
        Scenario {
            name: "scenario".into(),
            engine: EngineMode::Optimistic,
            cycles,
            depth: 64,
            speeds: Speeds::default(),
            checkpoint: CheckpointCost::default(),
            noise: NoiseConfig::default(),
            cost: CostModel::default(),
            charge: WordCharge::default(),
            topology,
            source: None,
        }
    }

    /// Calibrated word counts, the defaults when the scenario charges
    /// packed payload sizes.
    pub fn charges(&self) -> CalibratedCharges {
        match self.charge {
            WordCharge::Calibrated(c) => c,
            WordCharge::Packed => CalibratedCharges::default(),
        }
    }

    pub fn perf_params(&self) -> PerfParams {
        PerfParams {
            t_sim_cycle: self.speeds.t_sim_cycle,
            t_acc_cycle: self.speeds.t_acc_cycle,
            cost: self.cost,
            depth: self.depth,
            checkpoint: self.checkpoint,
            charges: self.charges(),
        }
    }

    /// Resolved configuration as `key = value` lines, defaults included.
    pub fn resolved(&self) -> Vec<String> {
        let t = &self.topology;
        let mut v = vec![
            format!("name = {}", self.name),
            format!("engine = {}", self.engine),
            format!("cycles = {}", self.cycles),
            format!("depth = {}", self.depth),
            format!("speeds.t_sim_cycle = {:e}", self.speeds.t_sim_cycle),
            format!("speeds.t_acc_cycle = {:e}", self.speeds.t_acc_cycle),
            format!("checkpoint.variable_count = {}", self.checkpoint.variable_count),
            format!("checkpoint.sim_var_s = {:e}", self.checkpoint.sim_var_s),
            format!("checkpoint.acc_var_s = {:e}", self.checkpoint.acc_var_s),
            format!("noise.p_success = {}", self.noise.p_success),
            format!("noise.seed = {}", self.noise.seed),
            format!("channel.startup_s = {:e}", self.cost.startup_s),
            format!("channel.s2a_word_s = {:e}", self.cost.s2a_word_s),
            format!("channel.a2s_word_s = {:e}", self.cost.a2s_word_s),
        ];
        match self.charge {
            WordCharge::Packed => v.push("charge.mode = packed".into()),
            WordCharge::Calibrated(c) => {
                v.push("charge.mode = calibrated".into());
                v.push(format!("charge.conv_s2a_words = {}", c.conv_s2a_words));
                v.push(format!("charge.conv_a2s_words = {}", c.conv_a2s_words));
                v.push(format!("charge.flush_entry_bits = {}", c.flush_entry_bits));
                v.push(format!("charge.report_words = {}", c.report_words));
                v.push(format!("charge.fail_words = {}", c.fail_words));
            }
        }
        v.push(format!("arbiter.priority = {:?}", t.arbiter.priority));
        v.push(format!("arbiter.default_master = {}", t.arbiter.default_master));
        for (i, m) in t.masters.iter().enumerate() {
            v.push(format!("master.{i}.domain = {}", m.domain));
            v.push(format!("master.{i}.transactions = {}", m.script.transactions().len()));
        }
        for (i, s) in t.slaves.iter().enumerate() {
            v.push(format!("slave.{i}.domain = {}", s.domain));
            v.push(format!("slave.{i}.config = {:?}", s.config));
        }
        for r in t.decoder.regions() {
            v.push(format!("region = {:#x}+{:#x} -> slave {}", r.base, r.size, r.slave));
        }
        for s in &t.sideband {
            v.push(format!("sideband.{} = slave {}", s.name, s.slave));
        }
        v
    }
}
