use super::FabricError;
use crate::ahb::Hsize;
use serde::{Deserialize, Serialize};

/// Sideband interrupt raised while the FIFO holds at least `threshold` words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IrqConfig {
    pub signal: usize,
    pub threshold: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlaveConfig {
    /// Backing memory in words. Addresses alias modulo this size.
    pub mem_words: u32,
    pub fifo_depth: u32,
    /// Words drained from the FIFO every `service_period` cycles.
    pub service_words: u32,
    pub service_period: u32,
    /// Wait states inserted at the start of every data phase.
    pub wait_states: u32,
    pub irq: Option<IrqConfig>,
    /// Seed for the initial memory image.
    pub init_seed: u32,
}

impl Default for SlaveConfig {
    fn default() -> Self {
        SlaveConfig {
            mem_words: 1024,
            fifo_depth: 4,
            service_words: 1,
            service_period: 1,
            wait_states: 0,
            irq: None,
            init_seed: 0,
        }
    }
}

impl SlaveConfig {
    pub fn validate(&self, index: usize) -> Result<(), FabricError> {
        let bad = |m: &str| Err(FabricError::BadSlave(index, m.to_string()));
        if self.mem_words == 0 {
            return bad("mem_words must be positive");
        }
        if self.fifo_depth == 0 {
            return bad("fifo_depth must be positive");
        }
        if self.service_period == 0 {
            return bad("service_period must be positive");
        }
        Ok(())
    }
}

/// Producer-consumer timing of a slave: a FIFO filled by completed data
/// phases and drained at a fixed rate. HREADY is low while wait states
/// remain or the FIFO is full.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SlaveTiming {
    pub depth: u32,
    pub service_words: u32,
    pub service_period: u32,
    pub wait_states: u32,
    pub occupancy: u32,
    pub wait_left: u32,
    pub phase: u32,
}

impl SlaveTiming {
    pub fn new(cfg: &SlaveConfig) -> Self {
        SlaveTiming {
            depth: cfg.fifo_depth,
            service_words: cfg.service_words,
            service_period: cfg.service_period,
            wait_states: cfg.wait_states,
            occupancy: 0,
            wait_left: 0,
            phase: 0,
        }
    }

    /// HREADY while this slave owns the data phase.
    pub fn ready(&self) -> bool {
        self.wait_left == 0 && self.occupancy < self.depth
    }

    /// Clock edge. `in_data_phase`: this slave owned the data phase of the
    /// ending cycle. `next_selected`: an address phase targeting this slave
    /// was accepted at this edge.
    pub fn tick(&mut self, in_data_phase: bool, hready: bool, next_selected: bool) {
        if in_data_phase {
            if hready {
                // saturates only for mirrors fed a mispredicted hready
                self.occupancy = (self.occupancy + 1).min(self.depth);
            } else if self.wait_left > 0 {
                self.wait_left -= 1;
            }
        }
        self.phase += 1;
        if self.phase >= self.service_period {
            self.phase = 0;
            self.occupancy -= self.occupancy.min(self.service_words);
        }
        if hready && next_selected {
            self.wait_left = self.wait_states;
        }
    }
}

/// Memory-backed slave with [`SlaveTiming`] and an optional interrupt line.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MemorySlave {
    pub timing: SlaveTiming,
    pub irq: Option<IrqConfig>,
    mem: Vec<u32>,
}

pub fn initial_word(seed: u32, index: u32) -> u32 {
    let mut x = (seed as u64) << 32 | index as u64;
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (x ^ (x >> 31)) as u32
}

impl MemorySlave {
    pub fn new(cfg: &SlaveConfig) -> Self {
        MemorySlave {
            timing: SlaveTiming::new(cfg),
            irq: cfg.irq,
            mem: (0..cfg.mem_words).map(|i| initial_word(cfg.init_seed, i)).collect(),
        }
    }

    fn index(&self, addr: u32) -> usize {
        ((addr >> 2) % self.mem.len() as u32) as usize
    }

    pub fn read(&self, addr: u32) -> u32 {
        self.mem[self.index(addr)]
    }

    /// Byte-lane write: only the lanes addressed by `addr`/`size` change.
    pub fn write(&mut self, addr: u32, size: Hsize, data: u32) {
        let lanes = match size {
            Hsize::Byte => 0xffu32 << ((addr & 3) * 8),
            Hsize::Halfword => 0xffffu32 << ((addr & 2) * 8),
            Hsize::Word => u32::MAX,
        };
        let i = self.index(addr);
        self.mem[i] = (self.mem[i] & !lanes) | (data & lanes);
    }

    pub fn irq_level(&self) -> bool {
        self.irq.is_some_and(|c| self.timing.occupancy >= c.threshold)
    }

    pub fn memory(&self) -> &[u32] {
        &self.mem
    }
}
