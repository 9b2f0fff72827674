use super::decoder::{decode, DecoderMap, Target};
use super::FabricError;
use crate::ahb::{BurstCursor, Hburst, Hsize, Htrans, MsabsSnapshot};
use serde::{Deserialize, Serialize};

/// Fixed-priority arbitration: the first requesting master in `priority`
/// wins, and `default_master` owns the bus when nobody requests.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArbiterConfig {
    pub priority: Vec<usize>,
    pub default_master: usize,
}

impl ArbiterConfig {
    /// Priority by master index, lowest index first.
    pub fn by_index(masters: usize) -> Self {
        ArbiterConfig { priority: (0..masters).collect(), default_master: 0 }
    }

    pub fn validate(&self, masters: usize) -> Result<(), FabricError> {
        let mut seen = vec![false; masters];
        for &m in &self.priority {
            if m >= masters || std::mem::replace(&mut seen[m], true) {
                return Err(FabricError::BadPriority(masters));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(FabricError::BadPriority(masters));
        }
        if self.default_master >= masters {
            return Err(FabricError::BadDefaultMaster(self.default_master));
        }
        Ok(())
    }
}

/// Transfer occupying the data phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DataPhase {
    pub owner: usize,
    pub target: Target,
    pub addr: u32,
    pub write: bool,
    pub size: Hsize,
    pub burst: Hburst,
}

/// Burst whose address beats are being issued. `cursor.beat_index` is the
/// index of the last accepted beat.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BurstProgress {
    pub owner: usize,
    pub cursor: BurstCursor,
}

/// Registered bus state: grant, data phase and burst tracking. Each half
/// bus keeps an identical replica, updated from the full snapshot.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BusPipelineState {
    pub cycle: u64,
    pub granted: usize,
    pub data_phase: Option<DataPhase>,
    pub burst: Option<BurstProgress>,
    pub last: Option<MsabsSnapshot>,
}

impl BusPipelineState {
    pub fn new(arbiter: &ArbiterConfig) -> Self {
        BusPipelineState { cycle: 0, granted: arbiter.default_master, data_phase: None, burst: None, last: None }
    }

    /// The current owner keeps the bus: fixed bursts until their final
    /// address beat is accepted, INCR bursts while the owner requests.
    pub fn burst_locked(&self, hbusreq: u16) -> bool {
        match &self.burst {
            Some(b) if b.cursor.hburst.beats().is_some() => !b.cursor.is_last_beat(),
            Some(b) => hbusreq & (1 << b.owner) != 0,
            None => false,
        }
    }

    /// Clock edge with complete snapshot `full`.
    pub fn tick(&mut self, full: &MsabsSnapshot, decoder: &DecoderMap, arbiter: &ArbiterConfig) {
        if full.hready {
            self.data_phase = full.htrans.is_active().then(|| DataPhase {
                owner: self.granted,
                target: decode(decoder, full.haddr),
                addr: full.haddr,
                write: full.hwrite,
                size: full.hsize,
                burst: full.hburst,
            });
            match full.htrans {
                Htrans::NonSeq => {
                    self.burst = Some(BurstProgress {
                        owner: self.granted,
                        cursor: BurstCursor::new(full.haddr, full.hsize, full.hburst),
                    })
                }
                Htrans::Seq => {
                    if let Some(b) = &mut self.burst {
                        b.cursor.beat_index += 1;
                    }
                }
                Htrans::Idle => self.burst = None,
                Htrans::Busy => {}
            }
            if self.burst.is_some_and(|b| b.cursor.is_last_beat()) && !self.burst_locked(full.hbusreq) {
                self.burst = None;
            }
            self.granted = arbitrate(arbiter, full.hbusreq, self);
        }
        self.last = Some(*full);
        self.cycle += 1;
    }
}

/// Grant for the next cycle, evaluated at an edge where HREADY is high.
pub fn arbitrate(cfg: &ArbiterConfig, hbusreq: u16, state: &BusPipelineState) -> usize {
    if state.burst_locked(hbusreq) {
        return state.granted;
    }
    cfg.priority
        .iter()
        .copied()
        .find(|&m| hbusreq & (1 << m) != 0)
        .unwrap_or(cfg.default_master)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::Region;

    fn setup() -> (DecoderMap, ArbiterConfig, BusPipelineState) {
        let dec = DecoderMap::new(vec![Region { base: 0, size: 0x1000, slave: 0 }], 1).unwrap();
        let arb = ArbiterConfig { priority: vec![1, 0], default_master: 0 };
        let st = BusPipelineState::new(&arb);
        (dec, arb, st)
    }

    #[test]
    fn priority_and_default() {
        let (_, arb, st) = setup();
        assert_eq!(arbitrate(&arb, 0b11, &st), 1);
        assert_eq!(arbitrate(&arb, 0b01, &st), 0);
        assert_eq!(arbitrate(&arb, 0, &st), 0);
    }

    #[test]
    fn validation() {
        assert!(ArbiterConfig { priority: vec![0, 0], default_master: 0 }.validate(2).is_err());
        assert!(ArbiterConfig { priority: vec![0], default_master: 0 }.validate(2).is_err());
        assert!(ArbiterConfig { priority: vec![1, 0], default_master: 2 }.validate(2).is_err());
        assert!(ArbiterConfig::by_index(3).validate(3).is_ok());
    }

    #[test]
    fn fixed_burst_holds_grant_until_last_address_beat() {
        let (dec, arb, mut st) = setup();
        // m0 owns the bus and starts INCR4; m1 requests throughout.
        let mut s = MsabsSnapshot {
            haddr: 0x10,
            htrans: Htrans::NonSeq,
            hsize: Hsize::Word,
            hburst: Hburst::Incr4,
            hready: true,
            hbusreq: 0b11,
            ..MsabsSnapshot::idle()
        };
        for beat in 0..4 {
            st.tick(&s, &dec, &arb);
            let expect = if beat < 3 { 0 } else { 1 };
            assert_eq!(st.granted, expect, "after beat {beat}");
            s.htrans = Htrans::Seq;
            s.haddr += 4;
        }
    }

    #[test]
    fn wait_state_freezes_pipeline() {
        let (dec, arb, mut st) = setup();
        let s = MsabsSnapshot {
            haddr: 0x10,
            htrans: Htrans::NonSeq,
            hready: true,
            hbusreq: 0b10,
            ..MsabsSnapshot::idle()
        };
        st.tick(&s, &dec, &arb);
        let before = st.clone();
        let stalled = MsabsSnapshot { hready: false, ..s };
        st.tick(&stalled, &dec, &arb);
        assert_eq!(st.granted, before.granted);
        assert_eq!(st.data_phase, before.data_phase);
        assert_eq!(st.cycle, before.cycle + 1);
    }
}
