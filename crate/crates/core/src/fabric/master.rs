use super::FabricError;
use crate::ahb::{next_burst_address, BurstCursor, Hburst, Hresp, Hsize, Htrans, MsabsSnapshot};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Write data source for a transaction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    /// Reads carry no data.
    None,
    /// One word per beat.
    Words(Vec<u32>),
    /// Deterministic per-beat word derived from a seed.
    Pattern(u32),
}

impl Payload {
    pub fn word(&self, beat: u32) -> u32 {
        match self {
            Payload::None => 0,
            Payload::Words(w) => w[beat as usize],
            Payload::Pattern(seed) => pattern_word(*seed, beat),
        }
    }
}

pub fn pattern_word(seed: u32, beat: u32) -> u32 {
    let x = seed ^ beat.wrapping_mul(0x9E37_79B9);
    x.rotate_left(beat % 32) ^ (x >> 15)
}

/// One scripted bus transaction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub write: bool,
    pub addr: u32,
    pub burst: Hburst,
    pub size: Hsize,
    /// Address beats; must match the burst length for fixed bursts.
    pub beats: u32,
    pub prot: u8,
    /// Cycles without a request after the previous transaction.
    pub gap: u32,
    /// Earliest cycle at which the request may be raised.
    pub not_before: u64,
    pub data: Payload,
}

impl Transaction {
    pub fn read(addr: u32, burst: Hburst, size: Hsize) -> Self {
        Transaction {
            write: false,
            addr,
            burst,
            size,
            beats: burst.beats().unwrap_or(1),
            prot: 0x3,
            gap: 0,
            not_before: 0,
            data: Payload::None,
        }
    }

    pub fn write(addr: u32, burst: Hburst, size: Hsize, data: Payload) -> Self {
        Transaction { write: true, data, ..Transaction::read(addr, burst, size) }
    }

    pub fn with_beats(self, beats: u32) -> Self {
        Transaction { beats, ..self }
    }

    pub fn with_gap(self, gap: u32) -> Self {
        Transaction { gap, ..self }
    }

    fn cursor(&self) -> BurstCursor {
        BurstCursor::new(self.addr, self.size, self.burst)
    }

    fn check(&self) -> Result<(), String> {
        if self.addr % self.size.bytes() != 0 {
            return Err(format!("address {:#x} not aligned to {}", self.addr, self.size));
        }
        if self.beats == 0 {
            return Err("zero beats".into());
        }
        match self.burst.beats() {
            Some(n) if n != self.beats => {
                return Err(format!("{} burst needs {n} beats, got {}", self.burst, self.beats))
            }
            None if self.beats > 1024 => return Err("INCR burst longer than 1024 beats".into()),
            _ => {}
        }
        if !self.burst.is_wrap() {
            let last = self.addr as u64 + (self.beats as u64 - 1) * self.size.bytes() as u64;
            if last >> 10 != (self.addr as u64) >> 10 {
                return Err("incrementing burst crosses a 1 KiB boundary".into());
            }
        }
        if self.prot > 0xf {
            return Err("hprot wider than 4 bits".into());
        }
        match (&self.data, self.write) {
            (Payload::Words(w), true) if w.len() != self.beats as usize => {
                Err(format!("{} data words for {} beats", w.len(), self.beats))
            }
            (Payload::None, true) => Err("write without data".into()),
            (Payload::Words(_) | Payload::Pattern(_), false) => Err("read with write data".into()),
            _ => Ok(()),
        }
    }
}

/// Validated, shareable transaction list.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MasterScript {
    txns: Arc<[Transaction]>,
}

impl MasterScript {
    pub fn new(master: usize, txns: Vec<Transaction>) -> Result<Self, FabricError> {
        for (i, t) in txns.iter().enumerate() {
            t.check().map_err(|reason| FabricError::BadTransaction { master, txn: i, reason })?;
        }
        Ok(MasterScript { txns: txns.into() })
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.txns
    }

    pub fn total_beats(&self) -> u64 {
        self.txns.iter().map(|t| t.beats as u64).sum()
    }
}

/// Observable result of a master's activity, compared across engines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MasterDigest {
    pub reads: u64,
    pub writes: u64,
    pub errors: u64,
    pub read_hash: u64,
    pub finished: bool,
}

/// Master that plays back a [`MasterScript`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ScriptedMaster {
    index: usize,
    script: MasterScript,
    next: usize,
    issued: u32,
    gap_left: u32,
    /// (transaction, beat) in the data phase.
    pending: Option<(usize, u32)>,
    digest: MasterDigest,
}

impl ScriptedMaster {
    pub fn new(index: usize, script: MasterScript) -> Self {
        let gap_left = script.txns.first().map_or(0, |t| t.gap);
        ScriptedMaster { index, script, next: 0, issued: 0, gap_left, pending: None, digest: MasterDigest::default() }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    fn wants(&self, cycle: u64) -> bool {
        self.gap_left == 0 && self.script.txns.get(self.next).is_some_and(|t| cycle >= t.not_before)
    }

    fn driving(&self, granted: bool, cycle: u64) -> bool {
        granted && self.wants(cycle)
    }

    /// Bus request for this cycle: a transfer is waiting, or the current
    /// burst continues, or the next transaction can follow without a gap.
    pub fn hbusreq(&self, granted: bool, cycle: u64) -> bool {
        if !self.driving(granted, cycle) {
            return self.wants(cycle);
        }
        let txn = &self.script.txns[self.next];
        if self.issued + 1 < txn.beats {
            return true;
        }
        self.script.txns.get(self.next + 1).is_some_and(|t| t.gap == 0 && cycle + 1 >= t.not_before)
    }

    /// Address-phase outputs, written into `out` when this master is granted.
    pub fn drive_address(&self, cycle: u64, out: &mut MsabsSnapshot) {
        if !self.wants(cycle) {
            out.htrans = Htrans::Idle;
            out.haddr = 0;
            out.hwrite = false;
            out.hsize = Hsize::Byte;
            out.hburst = Hburst::Single;
            out.hprot = 0;
            return;
        }
        let txn = &self.script.txns[self.next];
        let addr = next_burst_address(&txn.cursor().at(self.issued)).expect("validated transaction");
        out.htrans = if self.issued == 0 { Htrans::NonSeq } else { Htrans::Seq };
        out.haddr = addr;
        out.hwrite = txn.write;
        out.hsize = txn.size;
        out.hburst = txn.burst;
        out.hprot = txn.prot;
    }

    /// Write data for the transfer in the data phase, if it is ours.
    pub fn hwdata(&self) -> Option<u32> {
        let (t, beat) = self.pending?;
        let txn = &self.script.txns[t];
        txn.write.then(|| txn.data.word(beat))
    }

    pub fn owns_data_phase(&self) -> bool {
        self.pending.is_some()
    }

    pub fn tick(&mut self, full: &MsabsSnapshot, granted: bool, cycle: u64) {
        let drove = self.driving(granted, cycle);
        if self.gap_left > 0 {
            self.gap_left -= 1;
        }
        if !full.hready {
            return;
        }
        if let Some((t, _)) = self.pending.take() {
            if self.script.txns[t].write {
                self.digest.writes += 1;
            } else {
                self.digest.reads += 1;
                self.digest.read_hash = (self.digest.read_hash ^ full.hrdata as u64).wrapping_mul(0x0000_0100_0000_01b3);
            }
            if full.hresp == Hresp::Error {
                self.digest.errors += 1;
            }
        }
        if drove {
            self.pending = Some((self.next, self.issued));
            self.issued += 1;
            if self.issued == self.script.txns[self.next].beats {
                self.next += 1;
                self.issued = 0;
                self.gap_left = self.script.txns.get(self.next).map_or(0, |t| t.gap);
            }
        }
    }

    pub fn digest(&self) -> MasterDigest {
        MasterDigest { finished: self.next >= self.script.txns.len() && self.pending.is_none(), ..self.digest }
    }
}
