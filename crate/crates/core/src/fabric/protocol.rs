use super::arbiter::BusPipelineState;
use super::FabricError;
use crate::ahb::{next_burst_address, Field, FieldMask, Hresp, Htrans, MsabsSnapshot};

/// Checks committed cycles against the AHB-lite rules this model relies on.
#[derive(Clone, Debug)]
pub struct ProtocolChecker {
    masters: usize,
}

impl ProtocolChecker {
    pub fn new(masters: usize) -> Self {
        ProtocolChecker { masters }
    }

    /// `pipe` is the registered state before `s` is committed.
    pub fn check(&self, s: &MsabsSnapshot, pipe: &BusPipelineState) -> Result<(), FabricError> {
        self.rule(s, pipe).map_err(|reason| FabricError::ProtocolViolation { cycle: pipe.cycle, reason })
    }

    fn rule(&self, s: &MsabsSnapshot, pipe: &BusPipelineState) -> Result<(), String> {
        if self.masters < 16 && s.hbusreq >> self.masters != 0 {
            return Err(format!("hbusreq {:#06x} names a nonexistent master", s.hbusreq));
        }
        if s.hsplit != 0 {
            return Err("split transfers are not supported".into());
        }
        if matches!(s.hresp, Hresp::Retry | Hresp::Split) {
            return Err(format!("unexpected {} response", s.hresp));
        }
        if s.hprot > 0xf {
            return Err("hprot wider than 4 bits".into());
        }
        if s.htrans.is_active() && s.haddr % s.hsize.bytes() != 0 {
            return Err(format!("address {:#x} not aligned to {}", s.haddr, s.hsize));
        }
        if pipe.data_phase.is_none() && !s.hready {
            return Err("hready low without a data phase".into());
        }
        let Some(prev) = pipe.last else {
            return if s.htrans == Htrans::Seq { Err("SEQ on the first cycle".into()) } else { Ok(()) };
        };
        let address = FieldMask::of(&Field::ADDRESS_GROUP);
        if !prev.hready && prev.htrans.is_active() && !s.eq_masked(&prev, &address) {
            return Err("address phase changed during a wait state".into());
        }
        if s.htrans == Htrans::Seq && prev.hready {
            let Some(b) = pipe.burst.filter(|b| b.owner == pipe.granted) else {
                return Err("SEQ outside a burst".into());
            };
            if s.hburst != b.cursor.hburst || s.hsize != b.cursor.hsize || s.hwrite != prev.hwrite {
                return Err("burst control changed mid-burst".into());
            }
            let cursor = b.cursor.at(b.cursor.beat_index + 1);
            match next_burst_address(&cursor) {
                Ok(a) if a == s.haddr => {}
                Ok(a) => return Err(format!("SEQ address {:#x}, expected {a:#x}", s.haddr)),
                Err(e) => return Err(e.to_string()),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ahb::{Hburst, Hsize};
    use crate::fabric::{ArbiterConfig, DecoderMap, Region};

    fn run(trace: &[MsabsSnapshot]) -> Result<(), FabricError> {
        let dec = DecoderMap::new(vec![Region { base: 0, size: 0x1000, slave: 0 }], 1).unwrap();
        let arb = ArbiterConfig::by_index(1);
        let mut pipe = BusPipelineState::new(&arb);
        let checker = ProtocolChecker::new(1);
        for s in trace {
            checker.check(s, &pipe)?;
            pipe.tick(s, &dec, &arb);
        }
        Ok(())
    }

    fn beat(htrans: Htrans, haddr: u32, hready: bool) -> MsabsSnapshot {
        MsabsSnapshot { htrans, haddr, hready, hsize: Hsize::Word, hburst: Hburst::Incr4, ..MsabsSnapshot::idle() }
    }

    #[test]
    fn accepts_well_formed_burst() {
        let t = [
            beat(Htrans::NonSeq, 0x10, true),
            beat(Htrans::Seq, 0x14, true),
            beat(Htrans::Seq, 0x18, false),
            beat(Htrans::Seq, 0x18, true),
            beat(Htrans::Seq, 0x1C, true),
        ];
        run(&t).unwrap();
    }

    #[test]
    fn rejects_wrong_seq_address() {
        let t = [beat(Htrans::NonSeq, 0x10, true), beat(Htrans::Seq, 0x18, true)];
        assert!(matches!(run(&t), Err(FabricError::ProtocolViolation { cycle: 1, .. })));
    }

    #[test]
    fn rejects_address_change_in_wait_state() {
        let t = [
            beat(Htrans::NonSeq, 0x10, true),
            beat(Htrans::Seq, 0x14, false),
            beat(Htrans::Seq, 0x18, true),
        ];
        assert!(run(&t).is_err());
    }

    #[test]
    fn rejects_misalignment_and_split() {
        assert!(run(&[beat(Htrans::NonSeq, 0x11, true)]).is_err());
        assert!(run(&[MsabsSnapshot { hsplit: 1, ..MsabsSnapshot::idle() }]).is_err());
        assert!(run(&[MsabsSnapshot { hready: false, ..MsabsSnapshot::idle() }]).is_err());
    }
}
