use super::{LobEntry, SyncError};
use crate::ahb::{
    next_burst_address, unpack_self_describing, BurstCursor, Field, FieldMask, Hburst, Hresp, Hsize, Htrans,
    MsabsSnapshot,
};
use crate::fabric::{decode, HalfBus, SlaveTiming, Target, Topology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Burst being issued by the granted master, as seen on the bus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct LinearCursor {
    burst: BurstCursor,
    write: bool,
    prot: u8,
}

/// Predicts the lagger-driven fields of the next cycle from bus history.
///
/// Address and control follow the burst arithmetic, slave responses follow
/// a mirror of each slave's FIFO timing, and requests and sideband lines
/// repeat their last value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Predictor {
    cursor: Option<LinearCursor>,
    mirrors: Vec<SlaveTiming>,
    prev_granted: Option<usize>,
}

impl Predictor {
    pub fn new(topo: &Topology) -> Self {
        Predictor {
            cursor: None,
            mirrors: topo.slaves.iter().map(|s| SlaveTiming::new(&s.config)).collect(),
            prev_granted: None,
        }
    }

    /// Mirror occupancy of slave `i`.
    pub fn mirror_occupancy(&self, i: usize) -> u32 {
        self.mirrors[i].occupancy
    }

    /// Called with the complete snapshot before `bus` commits it.
    pub fn observe(&mut self, full: &MsabsSnapshot, bus: &HalfBus) {
        let pipe = bus.pipe();
        let next_target = (full.hready && full.htrans.is_active()).then(|| decode(&bus.topology().decoder, full.haddr));
        for (i, m) in self.mirrors.iter_mut().enumerate() {
            let in_dp = pipe.data_phase.is_some_and(|d| d.target == Target::Slave(i));
            m.tick(in_dp, full.hready, next_target == Some(Target::Slave(i)));
        }
        if full.hready {
            match full.htrans {
                Htrans::NonSeq => {
                    self.cursor = Some(LinearCursor {
                        burst: BurstCursor::new(full.haddr, full.hsize, full.hburst),
                        write: full.hwrite,
                        prot: full.hprot,
                    })
                }
                Htrans::Seq => {
                    if let Some(c) = &mut self.cursor {
                        c.burst.beat_index += 1;
                    }
                }
                Htrans::Idle | Htrans::Busy => {}
            }
        }
        self.prev_granted = Some(pipe.granted);
    }

    /// True when every field the other domain drives this cycle can be
    /// predicted: no read or write data crosses over, the grant did not
    /// just move to a remote master, and there is history to go on.
    pub fn predictable(&self, bus: &HalfBus) -> bool {
        let pipe = bus.pipe();
        if pipe.last.is_none() {
            return false;
        }
        let remote = bus.remote_mask();
        if remote.contains(Field::Hwdata) || remote.contains(Field::Hrdata) {
            return false;
        }
        let grant_moved = self.prev_granted != Some(pipe.granted);
        !(remote.contains(Field::Haddr) && grant_moved)
    }

    /// Predicted values for the fields in `fields`.
    pub fn predict_response(&self, bus: &HalfBus, fields: &FieldMask) -> Result<MsabsSnapshot, SyncError> {
        if fields.contains(Field::Hwdata) || fields.contains(Field::Hrdata) {
            return Err(SyncError::UnpredictableField(*fields));
        }
        let pipe = bus.pipe();
        let last = pipe.last.unwrap_or_else(MsabsSnapshot::idle);
        let mut s = last;
        if fields.contains(Field::Haddr) {
            self.predict_address(&last, &mut s);
        }
        s.hsplit = 0;
        if let Some(dp) = pipe.data_phase {
            match dp.target {
                Target::Slave(i) => {
                    s.hready = self.mirrors[i].ready();
                    s.hresp = Hresp::Okay;
                }
                Target::Default => {
                    s.hready = true;
                    s.hresp = Hresp::Error;
                }
            }
        } else {
            s.hready = true;
            s.hresp = Hresp::Okay;
        }
        Ok(s.masked(fields))
    }

    fn predict_address(&self, last: &MsabsSnapshot, s: &mut MsabsSnapshot) {
        // held through wait states, repeated when idle
        if !last.hready || !last.htrans.is_active() {
            return;
        }
        let Some(c) = self.cursor else { return };
        let size = c.burst.hsize.bytes();
        let (htrans, haddr) = match c.burst.hburst.beats() {
            Some(_) if c.burst.is_last_beat() => (Htrans::NonSeq, c.burst.continuation_address()),
            Some(_) => match next_burst_address(&c.burst.at(c.burst.beat_index + 1)) {
                Ok(a) => (Htrans::Seq, a),
                Err(_) => return,
            },
            None => (Htrans::Seq, last.haddr.wrapping_add(size)),
        };
        s.htrans = htrans;
        s.haddr = haddr;
        s.hsize = c.burst.hsize;
        s.hburst = c.burst.hburst;
        s.hwrite = c.write;
        s.hprot = c.prot;
    }
}

/// True iff the entry's prediction equals `actual` on the predicted fields.
pub fn check_prediction(entry: &LobEntry, actual: &MsabsSnapshot) -> Result<bool, SyncError> {
    let Some(words) = &entry.prediction else {
        return Err(SyncError::Channel(crate::channel::ChannelError::MalformedFlush(
            "prediction check on the final entry".into(),
        )));
    };
    let (mask, pred, _) = unpack_self_describing(words)?;
    Ok(pred.eq_masked(actual, &mask))
}

/// Seeded misprediction source: each prediction fails with probability
/// `1 - p_success` by corrupting one predicted field. Address and response
/// values are corrupted in preference to control fields, so an injected
/// failure changes what the leader computes but not which fields it needs
/// from its peer.
#[derive(Clone, Debug)]
pub struct Noise {
    p_success: f64,
    rng: ChaCha8Rng,
    pub injected: u64,
    pub draws: u64,
}

#[derive(Clone, Copy, Debug)]
enum Target1 {
    Scalar(Field),
    Request(u32),
    Sideband(u32),
}

const PREFERRED: [Field; 3] = [Field::Haddr, Field::Hready, Field::Hresp];

impl Noise {
    pub fn new(p_success: f64, seed: u64) -> Self {
        Noise { p_success: p_success.clamp(0.0, 1.0), rng: ChaCha8Rng::seed_from_u64(seed), injected: 0, draws: 0 }
    }

    pub fn p_success(&self) -> f64 {
        self.p_success
    }

    /// Possibly perturbs `pred` on `mask`. Returns whether it did.
    pub fn apply(&mut self, pred: &mut MsabsSnapshot, mask: &FieldMask) -> bool {
        if self.p_success >= 1.0 {
            return false;
        }
        self.draws += 1;
        if self.rng.gen_bool(self.p_success) {
            return false;
        }
        let target = PREFERRED
            .into_iter()
            .find(|f| mask.contains(*f))
            .map(Target1::Scalar)
            .or_else(|| (0..32).find(|b| mask.sideband >> b & 1 == 1).map(Target1::Sideband))
            .or_else(|| (0..16).find(|b| mask.hbusreq >> b & 1 == 1).map(Target1::Request))
            .or_else(|| mask.scalar_fields().next().map(Target1::Scalar));
        let Some(t) = target else {
            return false;
        };
        perturb(pred, t);
        self.injected += 1;
        true
    }
}

fn perturb(s: &mut MsabsSnapshot, t: Target1) {
    match t {
        Target1::Scalar(f) => match f {
            Field::Haddr => s.haddr ^= s.hsize.bytes() << 2,
            Field::Htrans => {
                s.htrans = match s.htrans {
                    Htrans::Idle | Htrans::Seq => Htrans::NonSeq,
                    Htrans::NonSeq => Htrans::Seq,
                    Htrans::Busy => Htrans::Idle,
                }
            }
            Field::Hwrite => s.hwrite = !s.hwrite,
            Field::Hsize => s.hsize = if s.hsize == Hsize::Byte { Hsize::Word } else { Hsize::Byte },
            Field::Hburst => s.hburst = Hburst::from_code(s.hburst.code() ^ 1).unwrap_or(Hburst::Single),
            Field::Hprot => s.hprot ^= 1,
            Field::Hresp => s.hresp = if s.hresp == Hresp::Okay { Hresp::Error } else { Hresp::Okay },
            Field::Hready => s.hready = !s.hready,
            Field::Hsplit => s.hsplit ^= 1,
            Field::Hwdata => s.hwdata ^= 1,
            Field::Hrdata => s.hrdata ^= 1,
            Field::Hbusreq | Field::Sideband => {}
        },
        Target1::Request(b) => s.hbusreq ^= 1 << b,
        Target1::Sideband(b) => s.sideband ^= 1 << b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ahb::pack_small;

    #[test]
    fn prediction_check_uses_predicted_fields_only() {
        let mask = FieldMask::of(&[Field::Hready, Field::Hresp]);
        let pred = MsabsSnapshot { hready: true, ..MsabsSnapshot::idle() };
        let entry = LobEntry { cycle: 0, leader_outputs: Default::default(), prediction: Some(pack_small(&pred, &mask)) };
        let same = MsabsSnapshot { haddr: 0x1234, hwdata: 9, ..pred };
        assert!(check_prediction(&entry, &same).unwrap());
        let stalled = MsabsSnapshot { hready: false, ..pred };
        assert!(!check_prediction(&entry, &stalled).unwrap());
    }

    #[test]
    fn noise_rates() {
        let mask = FieldMask::of(&[Field::Hready]);
        let mut never = Noise::new(1.0, 3);
        let mut always = Noise::new(0.0, 3);
        for _ in 0..100 {
            let base = MsabsSnapshot::idle();
            let mut a = base;
            assert!(!never.apply(&mut a, &mask));
            assert_eq!(a, base);
            assert!(always.apply(&mut a, &mask));
            assert!(!a.eq_masked(&base, &mask));
        }
        let mut half = Noise::new(0.5, 11);
        let hits = (0..10_000).filter(|_| half.apply(&mut MsabsSnapshot::idle(), &mask)).count();
        assert!((4_700..5_300).contains(&hits), "{hits}");
    }

    #[test]
    fn every_perturbation_changes_the_field() {
        let base = MsabsSnapshot { htrans: Htrans::Seq, hsize: Hsize::Word, hburst: Hburst::Incr4, ..MsabsSnapshot::idle() };
        let mut masks: Vec<FieldMask> = Field::ALL
            .into_iter()
            .filter(|f| !matches!(f, Field::Hwdata | Field::Hrdata | Field::Hbusreq | Field::Sideband))
            .map(|f| FieldMask::of(&[f]))
            .collect();
        masks.push(FieldMask::empty().with_master(1));
        masks.push(FieldMask::empty().with_sideband(3));
        masks.push(FieldMask::full(2, 1).minus(FieldMask::of(&[Field::Hwdata, Field::Hrdata])));
        let mut n = Noise::new(0.0, 0);
        for m in masks {
            let mut s = base;
            assert!(n.apply(&mut s, &m));
            assert!(!s.eq_masked(&base, &m), "{m:?}");
        }
    }
}
