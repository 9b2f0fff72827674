//! Simulator/accelerator channel: packets, cost model and access ledger.
//!
//! Every access costs a fixed startup time plus a per-word time that
//! depends on the direction. Batching k packets into one therefore saves
//! exactly `(k - 1) * startup_s`.

use crate::ahb::PackedWords;
use crate::fabric::Domain;
use crate::sync::LobEntry;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub startup_s: f64,
    pub s2a_word_s: f64,
    pub a2s_word_s: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { startup_s: 12.2e-6, s2a_word_s: 49.95e-9, a2s_word_s: 75.73e-9 }
    }
}

impl CostModel {
    pub const FREE: CostModel = CostModel { startup_s: 0.0, s2a_word_s: 0.0, a2s_word_s: 0.0 };

    pub fn validate(&self) -> Result<(), String> {
        if [self.startup_s, self.s2a_word_s, self.a2s_word_s].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("channel costs must be finite and nonnegative".into());
        }
        Ok(())
    }

    pub fn word_s(&self, dir: Direction) -> f64 {
        match dir {
            Direction::S2A => self.s2a_word_s,
            Direction::A2S => self.a2s_word_s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    S2A,
    A2S,
}

impl Direction {
    pub fn from_sender(d: Domain) -> Direction {
        match d {
            Domain::Sim => Direction::S2A,
            Domain::Acc => Direction::A2S,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::S2A => "S2A",
            Direction::A2S => "A2S",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn transfer_time(cm: &CostModel, dir: Direction, words: u64) -> f64 {
    cm.startup_s + words as f64 * cm.word_s(dir)
}

/// Packet kinds. The lagger's last response travels inside `ReportAllOk`
/// and the failing actual inside `ReportFail`, so `LaggerResponse` and
/// `FailActual` are never sent on their own by the wrappers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PacketKind {
    ConvOut,
    ConvIn,
    LobFlush,
    LaggerResponse,
    ReportAllOk,
    ReportFail,
    FailActual,
}

impl PacketKind {
    pub fn name(self) -> &'static str {
        match self {
            PacketKind::ConvOut => "CONV_OUT",
            PacketKind::ConvIn => "CONV_IN",
            PacketKind::LobFlush => "LOB_FLUSH",
            PacketKind::LaggerResponse => "LAGGER_RESPONSE",
            PacketKind::ReportAllOk => "REPORT_ALL_OK",
            PacketKind::ReportFail => "REPORT_FAIL",
            PacketKind::FailActual => "FAIL_ACTUAL",
        }
    }
}

impl fmt::Display for PacketKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ChannelPacket {
    pub kind: PacketKind,
    pub direction: Direction,
    pub payload: Vec<u32>,
    /// LOB entries carried by a flush; zero otherwise.
    pub entries: u32,
    /// Lamport timestamp assigned by the sender.
    pub stamp: u64,
}

impl ChannelPacket {
    pub fn new(kind: PacketKind, direction: Direction, payload: Vec<u32>) -> Self {
        ChannelPacket { kind, direction, payload, entries: 0, stamp: 0 }
    }
}

/// What the ledger needs to know about a sent packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PacketMeta {
    pub stamp: u64,
    pub kind: PacketKind,
    pub direction: Direction,
    pub raw_words: u64,
    pub entries: u32,
}

impl PacketMeta {
    pub fn of(p: &ChannelPacket) -> Self {
        PacketMeta {
            stamp: p.stamp,
            kind: p.kind,
            direction: p.direction,
            raw_words: p.payload.len() as u64,
            entries: p.entries,
        }
    }
}

/// Fixed per-packet word counts used in place of the packed payload size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibratedCharges {
    /// Conventional-exchange words, simulator to accelerator.
    pub conv_s2a_words: u64,
    /// Conventional-exchange words, accelerator to simulator.
    pub conv_a2s_words: u64,
    /// Bits per LOB entry in a flush, rounded up to whole words per flush.
    pub flush_entry_bits: u64,
    pub report_words: u64,
    pub fail_words: u64,
}

impl Default for CalibratedCharges {
    fn default() -> Self {
        CalibratedCharges { conv_s2a_words: 1, conv_a2s_words: 2, flush_entry_bits: 20, report_words: 1, fail_words: 2 }
    }
}

impl CalibratedCharges {
    pub fn conv_words(&self, dir: Direction) -> u64 {
        match dir {
            Direction::S2A => self.conv_s2a_words,
            Direction::A2S => self.conv_a2s_words,
        }
    }

    pub fn flush_words(&self, entries: u64) -> u64 {
        (entries * self.flush_entry_bits).div_ceil(32)
    }
}

/// How many words a packet is charged for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum WordCharge {
    /// The packed payload length.
    Packed,
    /// Fixed counts per packet kind.
    Calibrated(CalibratedCharges),
}

impl Default for WordCharge {
    fn default() -> Self {
        WordCharge::Calibrated(CalibratedCharges::default())
    }
}

impl WordCharge {
    pub fn charged_words(&self, p: &ChannelPacket) -> u64 {
        self.charged(&PacketMeta::of(p))
    }

    pub fn charged(&self, p: &PacketMeta) -> u64 {
        match self {
            WordCharge::Packed => p.raw_words,
            WordCharge::Calibrated(c) => match p.kind {
                PacketKind::ConvOut | PacketKind::ConvIn => c.conv_words(p.direction),
                PacketKind::LobFlush => c.flush_words(p.entries as u64),
                PacketKind::ReportAllOk | PacketKind::LaggerResponse => c.report_words,
                PacketKind::ReportFail | PacketKind::FailActual => c.fail_words,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerEntry {
    pub kind: PacketKind,
    pub direction: Direction,
    pub raw_words: u64,
    pub charged_words: u64,
    pub time_s: f64,
    pub cumulative_s: f64,
}

/// Access log with per-direction totals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelLedger {
    pub entries: Vec<LedgerEntry>,
    pub access_count: [u64; 2],
    /// Charged words per direction.
    pub payload_words: [u64; 2],
    pub raw_words: [u64; 2],
    pub time_s: f64,
}

impl ChannelLedger {
    pub fn accesses(&self) -> u64 {
        self.access_count.iter().sum()
    }

    pub fn accesses_of(&self, kind: PacketKind) -> u64 {
        self.entries.iter().filter(|e| e.kind == kind).count() as u64
    }

    pub fn record(&mut self, cm: &CostModel, charge: &WordCharge, p: &ChannelPacket) {
        self.record_meta(cm, charge, &PacketMeta::of(p));
    }

    pub fn record_meta(&mut self, cm: &CostModel, charge: &WordCharge, p: &PacketMeta) {
        let charged = charge.charged(p);
        let t = transfer_time(cm, p.direction, charged);
        let d = p.direction.index();
        self.access_count[d] += 1;
        self.payload_words[d] += charged;
        self.raw_words[d] += p.raw_words;
        self.time_s += t;
        self.entries.push(LedgerEntry {
            kind: p.kind,
            direction: p.direction,
            raw_words: p.raw_words,
            charged_words: charged,
            time_s: t,
            cumulative_s: self.time_s,
        });
    }

    /// Builds a ledger from packets in send order.
    pub fn from_packets<'a>(
        cm: &CostModel,
        charge: &WordCharge,
        packets: impl IntoIterator<Item = &'a ChannelPacket>,
    ) -> Self {
        let mut l = ChannelLedger::default();
        for p in packets {
            l.record(cm, charge, p);
        }
        l
    }

    /// Builds a ledger from packet metadata in send order.
    pub fn from_meta<'a>(cm: &CostModel, charge: &WordCharge, packets: impl IntoIterator<Item = &'a PacketMeta>) -> Self {
        let mut l = ChannelLedger::default();
        for p in packets {
            l.record_meta(cm, charge, p);
        }
        l
    }

    /// Recomputes the accumulated time from the log.
    pub fn replay_time(&self, cm: &CostModel) -> f64 {
        self.entries.iter().fold(0.0, |acc, e| acc + transfer_time(cm, e.direction, e.charged_words))
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "kind,direction,words,raw_words,time_s,cumulative_time_s")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{:e},{:e}",
                e.kind, e.direction, e.charged_words, e.raw_words, e.time_s, e.cumulative_s
            )?;
        }
        Ok(())
    }
}

/// Records `packet` in `ledger` and returns it for delivery.
pub fn send(ledger: &mut ChannelLedger, cm: &CostModel, charge: &WordCharge, packet: ChannelPacket) -> ChannelPacket {
    ledger.record(cm, charge, &packet);
    packet
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("malformed LOB flush: {0}")]
    MalformedFlush(String),
}

const PRED_FLAG: u32 = 1 << 31;

/// Serializes LOB entries. Per entry: cycle (2 words), a length word
/// (`leader_len[15:0]`, `pred_len[30:16]`, `has_prediction[31]`), the
/// packed leader outputs, then the packed prediction.
pub fn encode_lob_flush(entries: &[LobEntry], direction: Direction) -> Result<ChannelPacket, ChannelError> {
    check_final_entry_rule(entries)?;
    let words: usize = entries.iter().map(|e| 3 + e.leader_outputs.len() + e.prediction.as_ref().map_or(0, |p| p.len())).sum();
    let mut payload = Vec::with_capacity(words);
    for e in entries {
        let pred_len = e.prediction.as_ref().map_or(0, |p| p.len());
        if e.leader_outputs.len() > 0xffff || pred_len > 0x7fff {
            return Err(ChannelError::MalformedFlush("entry too large".into()));
        }
        payload.push(e.cycle as u32);
        payload.push((e.cycle >> 32) as u32);
        let flag = if e.prediction.is_some() { PRED_FLAG } else { 0 };
        payload.push(e.leader_outputs.len() as u32 | (pred_len as u32) << 16 | flag);
        payload.extend_from_slice(&e.leader_outputs);
        if let Some(p) = &e.prediction {
            payload.extend_from_slice(p);
        }
    }
    Ok(ChannelPacket { entries: entries.len() as u32, ..ChannelPacket::new(PacketKind::LobFlush, direction, payload) })
}

pub fn decode_lob_flush(packet: &ChannelPacket) -> Result<Vec<LobEntry>, ChannelError> {
    let bad = |m: &str| ChannelError::MalformedFlush(m.to_string());
    if packet.kind != PacketKind::LobFlush {
        return Err(bad("not a flush packet"));
    }
    let w = &packet.payload;
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < w.len() {
        if pos + 3 > w.len() {
            return Err(bad("truncated entry header"));
        }
        let cycle = w[pos] as u64 | (w[pos + 1] as u64) << 32;
        let lens = w[pos + 2];
        let leader_len = (lens & 0xffff) as usize;
        let pred_len = ((lens >> 16) & 0x7fff) as usize;
        let has_pred = lens & PRED_FLAG != 0;
        pos += 3;
        if pos + leader_len + pred_len > w.len() {
            return Err(bad("truncated entry body"));
        }
        if !has_pred && pred_len != 0 {
            return Err(bad("prediction words without prediction flag"));
        }
        let leader_outputs = PackedWords::from_slice(&w[pos..pos + leader_len]);
        pos += leader_len;
        let prediction = has_pred.then(|| PackedWords::from_slice(&w[pos..pos + pred_len]));
        pos += pred_len;
        out.push(LobEntry { cycle, leader_outputs, prediction });
    }
    if out.len() != packet.entries as usize {
        return Err(bad("entry count does not match header"));
    }
    check_final_entry_rule(&out)?;
    Ok(out)
}

fn check_final_entry_rule(entries: &[LobEntry]) -> Result<(), ChannelError> {
    let Some((last, rest)) = entries.split_last() else {
        return Err(ChannelError::MalformedFlush("empty flush".into()));
    };
    if last.prediction.is_some() {
        return Err(ChannelError::MalformedFlush("final entry carries a prediction".into()));
    }
    if let Some(i) = rest.iter().position(|e| e.prediction.is_none()) {
        return Err(ChannelError::MalformedFlush(format!("entry {i} lacks a prediction")));
    }
    Ok(())
}
