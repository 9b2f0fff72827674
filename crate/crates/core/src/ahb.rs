//! AHB signal vocabulary and the minimal set of active bus signals (MSABS).
//!
//! A [`MsabsSnapshot`] holds one cycle's worth of the signals that fully
//! determine the bus state. Everything else on the bus (grant, slave select)
//! is recomputed from these values by the arbiter and decoder replicas in
//! each verification domain, so the snapshot is the only thing that ever has
//! to cross the simulator/accelerator channel.
//!
//! Snapshot wire layout (all words 32-bit, little-endian bit numbering):
//!
//! | word | present when | contents |
//! |------|--------------|----------|
//! | header | mask non-empty | bits 0..13 scalar field flags, bits 16..32 hbusreq bit mask |
//! | sideband mask | sideband mask non-empty | one bit per registered sideband signal |
//! | control | any of htrans/hwrite/hsize/hburst/hprot/hresp/hready/hbusreq | see below |
//! | haddr | HADDR | address |
//! | hwdata | HWDATA | write data |
//! | hrdata | HRDATA | read data |
//! | hsplit | HSPLIT | bits 0..16 split mask |
//! | sideband | sideband mask non-empty | sideband values |
//!
//! Control word: `htrans[1:0]`, `hwrite[2]`, `hsize[4:3]`, `hburst[7:5]`,
//! `hprot[11:8]`, `hresp[13:12]`, `hready[14]`, `hbusreq[31:16]`.
//! Bits belonging to fields outside the mask are zero.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Upper bound on bus masters (hbusreq/hsplit are 16-bit masks).
pub const MAX_MASTERS: usize = 16;
/// Upper bound on registered sideband signals.
pub const MAX_SIDEBAND: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AhbError {
    #[error("beat {beat} out of range for {burst} burst of {len} beats")]
    BeatOutOfRange { beat: u32, burst: Hburst, len: u32 },
    #[error("address {addr:#010x} not aligned to {size} transfer")]
    MisalignedAddress { addr: u32, size: Hsize },
    #[error("unknown signal `{0}`")]
    UnknownSignal(String),
    #[error("snapshot payload too short: need {need} words, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("snapshot header does not match expected field mask")]
    MaskMismatch,
    #[error("invalid {field} encoding {value}")]
    BadEncoding { field: &'static str, value: u32 },
}

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident = $code:expr => $text:expr),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "SCREAMING_SNAKE_CASE")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn code(self) -> u32 {
                match self { $($name::$variant => $code),+ }
            }

            pub fn from_code(code: u32) -> Result<Self, AhbError> {
                match code {
                    $($code => Ok($name::$variant),)+
                    value => Err(AhbError::BadEncoding { field: stringify!($name), value }),
                }
            }

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = AhbError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.to_ascii_uppercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    _ => Err(AhbError::UnknownSignal(s.to_string())),
                }
            }
        }
    };
}

named_enum!(
    /// HTRANS transfer type.
    Htrans {
        Idle = 0 => "IDLE",
        Busy = 1 => "BUSY",
        NonSeq = 2 => "NONSEQ",
        Seq = 3 => "SEQ",
    }
);

named_enum!(
    /// HSIZE, limited to the 32-bit data bus.
    Hsize {
        Byte = 0 => "BYTE",
        Halfword = 1 => "HALFWORD",
        Word = 2 => "WORD",
    }
);

named_enum!(
    /// HBURST, in AHB encoding order.
    Hburst {
        Single = 0 => "SINGLE",
        Incr = 1 => "INCR",
        Wrap4 = 2 => "WRAP4",
        Incr4 = 3 => "INCR4",
        Wrap8 = 4 => "WRAP8",
        Incr8 = 5 => "INCR8",
        Wrap16 = 6 => "WRAP16",
        Incr16 = 7 => "INCR16",
    }
);

named_enum!(
    Hresp {
        Okay = 0 => "OKAY",
        Error = 1 => "ERROR",
        Retry = 2 => "RETRY",
        Split = 3 => "SPLIT",
    }
);

impl Htrans {
    /// NONSEQ or SEQ: the address phase carries a real transfer.
    pub fn is_active(self) -> bool {
        matches!(self, Htrans::NonSeq | Htrans::Seq)
    }
}

impl Hsize {
    pub fn bytes(self) -> u32 {
        1 << self.code()
    }
}

impl Hburst {
    /// Beat count for fixed-length bursts; `None` for INCR.
    pub fn beats(self) -> Option<u32> {
        match self {
            Hburst::Single => Some(1),
            Hburst::Incr => None,
            Hburst::Wrap4 | Hburst::Incr4 => Some(4),
            Hburst::Wrap8 | Hburst::Incr8 => Some(8),
            Hburst::Wrap16 | Hburst::Incr16 => Some(16),
        }
    }

    pub fn is_wrap(self) -> bool {
        matches!(self, Hburst::Wrap4 | Hburst::Wrap8 | Hburst::Wrap16)
    }
}

impl Default for Htrans {
    fn default() -> Self {
        Htrans::Idle
    }
}
impl Default for Hsize {
    fn default() -> Self {
        Hsize::Byte
    }
}
impl Default for Hburst {
    fn default() -> Self {
        Hburst::Single
    }
}
impl Default for Hresp {
    fn default() -> Self {
        Hresp::Okay
    }
}

/// One cycle of MSABS values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct MsabsSnapshot {
    pub haddr: u32,
    pub htrans: Htrans,
    pub hwrite: bool,
    pub hsize: Hsize,
    pub hburst: Hburst,
    /// 4-bit protection field.
    pub hprot: u8,
    pub hwdata: u32,
    pub hrdata: u32,
    pub hresp: Hresp,
    pub hready: bool,
    /// Bit per master index.
    pub hsplit: u16,
    /// Bit per master index.
    pub hbusreq: u16,
    /// Bit per registered sideband signal, in registration order.
    pub sideband: u32,
}

/// Scalar MSABS fields. `Hbusreq` and `Sideband` are per-bit in a [`FieldMask`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Haddr,
    Htrans,
    Hwrite,
    Hsize,
    Hburst,
    Hprot,
    Hwdata,
    Hrdata,
    Hresp,
    Hready,
    Hsplit,
    Hbusreq,
    Sideband,
}

impl Field {
    pub const ALL: [Field; 13] = [
        Field::Haddr,
        Field::Htrans,
        Field::Hwrite,
        Field::Hsize,
        Field::Hburst,
        Field::Hprot,
        Field::Hwdata,
        Field::Hrdata,
        Field::Hresp,
        Field::Hready,
        Field::Hsplit,
        Field::Hbusreq,
        Field::Sideband,
    ];

    /// Fields driven by the master that owns the address phase.
    pub const ADDRESS_GROUP: [Field; 6] = [
        Field::Haddr,
        Field::Htrans,
        Field::Hwrite,
        Field::Hsize,
        Field::Hburst,
        Field::Hprot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Haddr => "haddr",
            Field::Htrans => "htrans",
            Field::Hwrite => "hwrite",
            Field::Hsize => "hsize",
            Field::Hburst => "hburst",
            Field::Hprot => "hprot",
            Field::Hwdata => "hwdata",
            Field::Hrdata => "hrdata",
            Field::Hresp => "hresp",
            Field::Hready => "hready",
            Field::Hsplit => "hsplit",
            Field::Hbusreq => "hbusreq",
            Field::Sideband => "sideband",
        }
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }

    fn is_scalar(self) -> bool {
        !matches!(self, Field::Hbusreq | Field::Sideband)
    }
}

/// How a signal's next value can be anticipated by the leading domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SignalClass {
    /// Address and control: constant or linearly increasing within a burst.
    PredictableLinear,
    /// Slave responses: follow a producer-consumer model of the slave.
    PredictableProducerConsumer,
    /// Arbitration requests, grant and sideband: repeat the previous value.
    PredictableLastValue,
    /// Read and write data.
    NonPredictableData,
}

pub fn field_class(field: Field) -> SignalClass {
    match field {
        Field::Haddr
        | Field::Htrans
        | Field::Hwrite
        | Field::Hsize
        | Field::Hburst
        | Field::Hprot => SignalClass::PredictableLinear,
        Field::Hwdata | Field::Hrdata => SignalClass::NonPredictableData,
        Field::Hresp | Field::Hready | Field::Hsplit => SignalClass::PredictableProducerConsumer,
        Field::Hbusreq | Field::Sideband => SignalClass::PredictableLastValue,
    }
}

/// Classify a signal by name. Sideband signals are looked up in `sideband`.
pub fn classify(name: &str, sideband: &[String]) -> Result<SignalClass, AhbError> {
    let lower = name.to_ascii_lowercase();
    if let Some(field) = Field::ALL.iter().find(|f| f.name() == lower) {
        return Ok(field_class(*field));
    }
    // The grant is derived from hbusreq by every arbiter replica.
    if lower == "hgrant" || lower == "hmaster" {
        return Ok(SignalClass::PredictableLastValue);
    }
    if sideband.iter().any(|s| s == name) {
        return Ok(SignalClass::PredictableLastValue);
    }
    Err(AhbError::UnknownSignal(name.to_string()))
}

/// A subset of MSABS fields, with per-master and per-sideband granularity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct FieldMask {
    scalars: u16,
    pub hbusreq: u16,
    pub sideband: u32,
}

impl FieldMask {
    pub const fn empty() -> Self {
        FieldMask { scalars: 0, hbusreq: 0, sideband: 0 }
    }

    /// Every field for a bus with `masters` masters and `sideband` signals.
    pub fn full(masters: usize, sideband: usize) -> Self {
        let mut m = FieldMask::empty();
        for f in Field::ALL.iter().filter(|f| f.is_scalar()) {
            m.scalars |= f.bit();
        }
        m.hbusreq = low_bits16(masters);
        m.sideband = low_bits32(sideband);
        m
    }

    pub fn of(fields: &[Field]) -> Self {
        let mut m = FieldMask::empty();
        for f in fields {
            m.insert(*f);
        }
        m
    }

    /// Inserts a scalar field. `Hbusreq`/`Sideband` are ignored here; use
    /// [`FieldMask::with_master`] and [`FieldMask::with_sideband`].
    pub fn insert(&mut self, field: Field) {
        if field.is_scalar() {
            self.scalars |= field.bit();
        }
    }

    pub fn with(mut self, field: Field) -> Self {
        self.insert(field);
        self
    }

    pub fn with_master(mut self, master: usize) -> Self {
        self.hbusreq |= 1 << master;
        self
    }

    pub fn with_sideband(mut self, index: usize) -> Self {
        self.sideband |= 1 << index;
        self
    }

    pub fn contains(&self, field: Field) -> bool {
        match field {
            Field::Hbusreq => self.hbusreq != 0,
            Field::Sideband => self.sideband != 0,
            f => self.scalars & f.bit() != 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.scalars == 0 && self.hbusreq == 0 && self.sideband == 0
    }

    pub fn union(self, other: FieldMask) -> FieldMask {
        FieldMask {
            scalars: self.scalars | other.scalars,
            hbusreq: self.hbusreq | other.hbusreq,
            sideband: self.sideband | other.sideband,
        }
    }

    pub fn intersect(self, other: FieldMask) -> FieldMask {
        FieldMask {
            scalars: self.scalars & other.scalars,
            hbusreq: self.hbusreq & other.hbusreq,
            sideband: self.sideband & other.sideband,
        }
    }

    pub fn minus(self, other: FieldMask) -> FieldMask {
        FieldMask {
            scalars: self.scalars & !other.scalars,
            hbusreq: self.hbusreq & !other.hbusreq,
            sideband: self.sideband & !other.sideband,
        }
    }

    pub fn is_subset_of(&self, other: &FieldMask) -> bool {
        self.minus(*other).is_empty()
    }

    /// Scalar fields present, in declaration order.
    pub fn scalar_fields(&self) -> impl Iterator<Item = Field> + '_ {
        Field::ALL.into_iter().filter(move |f| f.is_scalar() && self.contains(*f))
    }

    /// True if any field in the mask belongs to `class`.
    pub fn has_class(&self, class: SignalClass) -> bool {
        Field::ALL.iter().any(|f| self.contains(*f) && field_class(*f) == class)
    }

    fn needs_control_word(&self) -> bool {
        const CONTROL: [Field; 7] = [
            Field::Htrans,
            Field::Hwrite,
            Field::Hsize,
            Field::Hburst,
            Field::Hprot,
            Field::Hresp,
            Field::Hready,
        ];
        self.hbusreq != 0 || CONTROL.iter().any(|f| self.contains(*f))
    }

    /// Packed length in words. Pure function of the mask.
    pub fn packed_len(&self) -> usize {
        if self.is_empty() {
            return 0;
        }
        let mut n = 1;
        if self.sideband != 0 {
            n += 2;
        }
        if self.needs_control_word() {
            n += 1;
        }
        for f in [Field::Haddr, Field::Hwdata, Field::Hrdata, Field::Hsplit] {
            if self.contains(f) {
                n += 1;
            }
        }
        n
    }
}

fn low_bits16(n: usize) -> u16 {
    if n >= 16 {
        u16::MAX
    } else {
        (1u16 << n) - 1
    }
}

fn low_bits32(n: usize) -> u32 {
    if n >= 32 {
        u32::MAX
    } else {
        (1u32 << n) - 1
    }
}

impl MsabsSnapshot {
    /// The idle bus: no transfer, ready, OKAY.
    pub fn idle() -> Self {
        MsabsSnapshot { hready: true, ..Default::default() }
    }

    /// Copies the fields selected by `mask` from `src` into `self`.
    pub fn merge_from(&mut self, src: &MsabsSnapshot, mask: &FieldMask) {
        if mask.contains(Field::Haddr) {
            self.haddr = src.haddr;
        }
        if mask.contains(Field::Htrans) {
            self.htrans = src.htrans;
        }
        if mask.contains(Field::Hwrite) {
            self.hwrite = src.hwrite;
        }
        if mask.contains(Field::Hsize) {
            self.hsize = src.hsize;
        }
        if mask.contains(Field::Hburst) {
            self.hburst = src.hburst;
        }
        if mask.contains(Field::Hprot) {
            self.hprot = src.hprot;
        }
        if mask.contains(Field::Hwdata) {
            self.hwdata = src.hwdata;
        }
        if mask.contains(Field::Hrdata) {
            self.hrdata = src.hrdata;
        }
        if mask.contains(Field::Hresp) {
            self.hresp = src.hresp;
        }
        if mask.contains(Field::Hready) {
            self.hready = src.hready;
        }
        if mask.contains(Field::Hsplit) {
            self.hsplit = src.hsplit;
        }
        self.hbusreq = (self.hbusreq & !mask.hbusreq) | (src.hbusreq & mask.hbusreq);
        self.sideband = (self.sideband & !mask.sideband) | (src.sideband & mask.sideband);
    }

    /// A snapshot holding only the masked fields of `self`, everything else default.
    pub fn masked(&self, mask: &FieldMask) -> MsabsSnapshot {
        let mut out = MsabsSnapshot::default();
        out.merge_from(self, mask);
        out
    }

    pub fn eq_masked(&self, other: &MsabsSnapshot, mask: &FieldMask) -> bool {
        self.masked(mask) == other.masked(mask)
    }

    fn control_word(&self, mask: &FieldMask) -> u32 {
        let m = self.masked(mask);
        m.htrans.code()
            | (m.hwrite as u32) << 2
            | m.hsize.code() << 3
            | m.hburst.code() << 5
            | ((m.hprot & 0xf) as u32) << 8
            | m.hresp.code() << 12
            | (m.hready as u32) << 14
            | (m.hbusreq as u32) << 16
    }
}

/// Serializes the masked fields of `s`; see the module docs for the layout.
pub fn pack_snapshot(s: &MsabsSnapshot, mask: &FieldMask) -> Vec<u32> {
    let mut out = Vec::with_capacity(mask.packed_len());
    pack_into(s, mask, &mut out);
    out
}

/// Longest possible packed snapshot.
pub const MAX_PACKED_WORDS: usize = 8;

/// A packed snapshot stored inline.
pub type PackedWords = SmallVec<[u32; MAX_PACKED_WORDS]>;

pub fn pack_small(s: &MsabsSnapshot, mask: &FieldMask) -> PackedWords {
    let mut out = PackedWords::new();
    pack_with(s, mask, |w| out.push(w));
    out
}

pub fn pack_into(s: &MsabsSnapshot, mask: &FieldMask, out: &mut Vec<u32>) {
    pack_with(s, mask, |w| out.push(w));
}

fn pack_with(s: &MsabsSnapshot, mask: &FieldMask, mut push: impl FnMut(u32)) {
    if mask.is_empty() {
        return;
    }
    push(mask.header_scalars() as u32 | (mask.hbusreq as u32) << 16);
    if mask.sideband != 0 {
        push(mask.sideband);
    }
    if mask.needs_control_word() {
        push(s.control_word(mask));
    }
    if mask.contains(Field::Haddr) {
        push(s.haddr);
    }
    if mask.contains(Field::Hwdata) {
        push(s.hwdata);
    }
    if mask.contains(Field::Hrdata) {
        push(s.hrdata);
    }
    if mask.contains(Field::Hsplit) {
        push(s.hsplit as u32);
    }
    if mask.sideband != 0 {
        push(s.sideband & mask.sideband);
    }
}

/// Inverse of [`pack_snapshot`] for a known mask.
pub fn unpack_snapshot(words: &[u32], mask: &FieldMask) -> Result<MsabsSnapshot, AhbError> {
    let (found, snap, used) = unpack_self_describing(words)?;
    if found != *mask {
        return Err(AhbError::MaskMismatch);
    }
    if used != words.len() {
        return Err(AhbError::MaskMismatch);
    }
    Ok(snap)
}

/// Decodes a packed snapshot whose mask is read from its own header.
/// Returns the mask, the snapshot and the number of words consumed.
pub fn unpack_self_describing(words: &[u32]) -> Result<(FieldMask, MsabsSnapshot, usize), AhbError> {
    let mut snap = MsabsSnapshot::default();
    if words.is_empty() {
        return Ok((FieldMask::empty(), snap, 0));
    }
    let header = words[0];
    let mut mask = FieldMask {
        scalars: (header & 0x1fff) as u16,
        hbusreq: (header >> 16) as u16,
        sideband: 0,
    };
    if header & 0xe000 != 0 {
        return Err(AhbError::BadEncoding { field: "header", value: header });
    }
    let mut pos = 1;
    let take = |pos: &mut usize| -> Result<u32, AhbError> {
        let w = *words.get(*pos).ok_or(AhbError::Truncated { need: *pos + 1, have: words.len() })?;
        *pos += 1;
        Ok(w)
    };
    // A header that claims the sideband flag carries its own mask word.
    let has_sideband = header & Field::Sideband.bit() as u32 != 0;
    mask.scalars &= !Field::Sideband.bit();
    mask.scalars &= !Field::Hbusreq.bit();
    if has_sideband {
        mask.sideband = take(&mut pos)?;
    }
    if mask.needs_control_word() {
        let c = take(&mut pos)?;
        if mask.contains(Field::Htrans) {
            snap.htrans = Htrans::from_code(c & 0x3)?;
        }
        if mask.contains(Field::Hwrite) {
            snap.hwrite = c & 0x4 != 0;
        }
        if mask.contains(Field::Hsize) {
            snap.hsize = Hsize::from_code((c >> 3) & 0x3)?;
        }
        if mask.contains(Field::Hburst) {
            snap.hburst = Hburst::from_code((c >> 5) & 0x7)?;
        }
        if mask.contains(Field::Hprot) {
            snap.hprot = ((c >> 8) & 0xf) as u8;
        }
        if mask.contains(Field::Hresp) {
            snap.hresp = Hresp::from_code((c >> 12) & 0x3)?;
        }
        if mask.contains(Field::Hready) {
            snap.hready = c & (1 << 14) != 0;
        }
        snap.hbusreq = ((c >> 16) as u16) & mask.hbusreq;
    }
    if mask.contains(Field::Haddr) {
        snap.haddr = take(&mut pos)?;
    }
    if mask.contains(Field::Hwdata) {
        snap.hwdata = take(&mut pos)?;
    }
    if mask.contains(Field::Hrdata) {
        snap.hrdata = take(&mut pos)?;
    }
    if mask.contains(Field::Hsplit) {
        snap.hsplit = take(&mut pos)? as u16;
    }
    if mask.sideband != 0 {
        snap.sideband = take(&mut pos)? & mask.sideband;
    }
    Ok((mask, snap, pos))
}

impl FieldMask {
    /// Header encoding with the sideband/hbusreq presence flags folded in.
    fn header_scalars(&self) -> u16 {
        let mut s = self.scalars;
        if self.sideband != 0 {
            s |= Field::Sideband.bit();
        }
        if self.hbusreq != 0 {
            s |= Field::Hbusreq.bit();
        }
        s
    }
}

/// Position of one beat inside a burst.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BurstCursor {
    pub start_addr: u32,
    pub hsize: Hsize,
    pub hburst: Hburst,
    pub beat_index: u32,
}

impl BurstCursor {
    pub fn new(start_addr: u32, hsize: Hsize, hburst: Hburst) -> Self {
        BurstCursor { start_addr, hsize, hburst, beat_index: 0 }
    }

    pub fn at(self, beat_index: u32) -> Self {
        BurstCursor { beat_index, ..self }
    }

    /// True once `beat_index` is the final beat of a fixed-length burst.
    pub fn is_last_beat(&self) -> bool {
        self.hburst.beats().is_some_and(|n| self.beat_index + 1 >= n)
    }

    /// Address the next burst would start at if the transfer stream kept
    /// increasing linearly past the end of this one.
    pub fn continuation_address(&self) -> u32 {
        let size = self.hsize.bytes();
        match self.hburst.beats() {
            Some(n) if self.hburst.is_wrap() => {
                let boundary = n * size;
                (self.start_addr & !(boundary - 1)).wrapping_add(boundary)
            }
            Some(n) => self.start_addr.wrapping_add(n * size),
            None => self.start_addr.wrapping_add((self.beat_index + 1) * size),
        }
    }
}

/// Address of beat `cursor.beat_index` of a burst.
pub fn next_burst_address(cursor: &BurstCursor) -> Result<u32, AhbError> {
    let size = cursor.hsize.bytes();
    if cursor.start_addr % size != 0 {
        return Err(AhbError::MisalignedAddress { addr: cursor.start_addr, size: cursor.hsize });
    }
    let beat = cursor.beat_index;
    match cursor.hburst.beats() {
        Some(n) if beat >= n => Err(AhbError::BeatOutOfRange { beat, burst: cursor.hburst, len: n }),
        Some(n) if cursor.hburst.is_wrap() => {
            let boundary = n * size;
            let base = cursor.start_addr & !(boundary - 1);
            let offset = (cursor.start_addr - base + beat * size) % boundary;
            Ok(base + offset)
        }
        _ => Ok(cursor.start_addr.wrapping_add(beat.wrapping_mul(size))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cur(addr: u32, size: Hsize, burst: Hburst, beat: u32) -> BurstCursor {
        BurstCursor::new(addr, size, burst).at(beat)
    }

    #[test]
    fn incr4_second_beat() {
        assert_eq!(next_burst_address(&cur(0x100, Hsize::Word, Hburst::Incr4, 1)), Ok(0x104));
    }

    #[test]
    fn wrap4_sequence_from_0x3c() {
        let seq: Vec<u32> = (0..4)
            .map(|b| next_burst_address(&cur(0x3C, Hsize::Word, Hburst::Wrap4, b)).unwrap())
            .collect();
        assert_eq!(seq, vec![0x3C, 0x30, 0x34, 0x38]);
    }

    #[test]
    fn single_beat_is_identity() {
        assert_eq!(next_burst_address(&cur(0x200, Hsize::Byte, Hburst::Single, 0)), Ok(0x200));
    }

    #[test]
    fn beat_out_of_range() {
        assert!(matches!(
            next_burst_address(&cur(0x200, Hsize::Word, Hburst::Wrap4, 4)),
            Err(AhbError::BeatOutOfRange { beat: 4, len: 4, .. })
        ));
    }

    #[test]
    fn misaligned_start() {
        assert!(matches!(
            next_burst_address(&cur(0x202, Hsize::Word, Hburst::Incr4, 0)),
            Err(AhbError::MisalignedAddress { .. })
        ));
    }

    #[test]
    fn incr_is_unbounded() {
        assert_eq!(next_burst_address(&cur(0x0, Hsize::Halfword, Hburst::Incr, 1000)), Ok(2000));
    }

    #[test]
    fn continuation_addresses() {
        assert_eq!(cur(0x100, Hsize::Word, Hburst::Incr4, 3).continuation_address(), 0x110);
        assert_eq!(cur(0x3C, Hsize::Word, Hburst::Wrap4, 3).continuation_address(), 0x40);
        assert_eq!(cur(0x10, Hsize::Byte, Hburst::Incr, 2).continuation_address(), 0x13);
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify("haddr", &[]), Ok(SignalClass::PredictableLinear));
        assert_eq!(classify("hrdata", &[]), Ok(SignalClass::NonPredictableData));
        assert_eq!(classify("hbusreq", &[]), Ok(SignalClass::PredictableLastValue));
        assert_eq!(classify("hready", &[]), Ok(SignalClass::PredictableProducerConsumer));
        assert_eq!(classify("irq0", &["irq0".to_string()]), Ok(SignalClass::PredictableLastValue));
        assert!(matches!(classify("hfoo", &[]), Err(AhbError::UnknownSignal(_))));
    }

    #[test]
    fn classification_is_total() {
        for f in Field::ALL {
            let c = classify(f.name(), &[]).unwrap();
            assert_eq!(c, field_class(f));
        }
    }

    #[test]
    fn empty_mask_packs_to_nothing() {
        let s = MsabsSnapshot::idle();
        assert!(pack_snapshot(&s, &FieldMask::empty()).is_empty());
        assert_eq!(unpack_snapshot(&[], &FieldMask::empty()), Ok(MsabsSnapshot::default()));
    }

    // Regression: full mask, two masters, no sideband.
    const FULL_TWO_MASTERS_LEN: usize = 6;

    #[test]
    fn full_mask_golden_vector() {
        let s = MsabsSnapshot {
            haddr: 0x1000_0040,
            htrans: Htrans::Seq,
            hwrite: true,
            hsize: Hsize::Word,
            hburst: Hburst::Incr16,
            hprot: 0b0011,
            hwdata: 0xdead_beef,
            hrdata: 0x0bad_f00d,
            hresp: Hresp::Okay,
            hready: true,
            hsplit: 0,
            hbusreq: 0b10,
            sideband: 0,
        };
        let mask = FieldMask::full(2, 0);
        let words = pack_snapshot(&s, &mask);
        assert_eq!(words.len(), FULL_TWO_MASTERS_LEN);
        assert_eq!(mask.packed_len(), FULL_TWO_MASTERS_LEN);
        // header: scalar flags 0x7ff (11 scalar fields) + hbusreq presence bit 11,
        // hbusreq mask 0b11 in the top half.
        assert_eq!(
            words,
            vec![0x0003_0fff, 0x0002_43f7, 0x1000_0040, 0xdead_beef, 0x0bad_f00d, 0x0000_0000]
        );
        assert_eq!(unpack_snapshot(&words, &mask), Ok(s));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mask = FieldMask::of(&[Field::Haddr, Field::Hrdata]);
        let words = pack_snapshot(&MsabsSnapshot::idle(), &mask);
        assert!(matches!(
            unpack_self_describing(&words[..words.len() - 1]),
            Err(AhbError::Truncated { .. })
        ));
    }

    fn any_snapshot() -> impl Strategy<Value = MsabsSnapshot> {
        (
            any::<u32>(),
            0u32..4,
            any::<bool>(),
            0u32..3,
            0u32..8,
            0u8..16,
            any::<u32>(),
            any::<u32>(),
            0u32..4,
            any::<bool>(),
            (any::<u16>(), any::<u16>(), any::<u32>()),
        )
            .prop_map(|(a, t, w, sz, b, p, wd, rd, r, rdy, (sp, br, sb))| MsabsSnapshot {
                haddr: a,
                htrans: Htrans::from_code(t).unwrap(),
                hwrite: w,
                hsize: Hsize::from_code(sz).unwrap(),
                hburst: Hburst::from_code(b).unwrap(),
                hprot: p,
                hwdata: wd,
                hrdata: rd,
                hresp: Hresp::from_code(r).unwrap(),
                hready: rdy,
                hsplit: sp,
                hbusreq: br,
                sideband: sb,
            })
    }

    fn any_mask() -> impl Strategy<Value = FieldMask> {
        (0u16..(1 << 11), any::<u16>(), any::<u32>())
            .prop_map(|(sc, br, sb)| FieldMask { scalars: sc, hbusreq: br, sideband: sb })
    }

    proptest! {
        #[test]
        fn pack_roundtrip_reproduces_masked_fields(s in any_snapshot(), m in any_mask()) {
            let words = pack_snapshot(&s, &m);
            prop_assert_eq!(words.len(), m.packed_len());
            let back = unpack_snapshot(&words, &m).unwrap();
            prop_assert_eq!(back, s.masked(&m));
        }

        #[test]
        fn pack_is_injective_on_masked_fields(a in any_snapshot(), b in any_snapshot(), m in any_mask()) {
            let same = a.eq_masked(&b, &m);
            prop_assert_eq!(pack_snapshot(&a, &m) == pack_snapshot(&b, &m), same);
        }

    }

    /// Oracle: step through the burst one beat at a time, wrapping back by
    /// the boundary whenever the running address lands on it.
    fn wrap_by_stepping(start: u32, size: u32, beats: u32) -> Vec<u32> {
        let boundary = beats * size;
        let mut addr = start;
        let mut out = Vec::new();
        for _ in 0..beats {
            out.push(addr);
            addr += size;
            if addr % boundary == 0 {
                addr -= boundary;
            }
        }
        out
    }

    #[test]
    fn wrap_closure_exhaustive_over_one_page() {
        let page = 0x4000u32;
        for hsize in Hsize::ALL.iter().copied() {
            let size = hsize.bytes();
            for burst in [Hburst::Wrap4, Hburst::Wrap8, Hburst::Wrap16] {
                let n = burst.beats().unwrap();
                let boundary = n * size;
                for start in (page..page + 64).step_by(size as usize) {
                    let got: Vec<u32> = (0..n)
                        .map(|b| next_burst_address(&cur(start, hsize, burst, b)).unwrap())
                        .collect();
                    assert_eq!(got, wrap_by_stepping(start, size, n), "{start:#x} {hsize} {burst}");
                    // Same address set as INCR arithmetic modulo the boundary.
                    let base = start - start % boundary;
                    let mut set = got.clone();
                    set.sort();
                    let expect: Vec<u32> = (0..n).map(|b| base + b * size).collect();
                    assert_eq!(set, expect);
                }
            }
        }
    }
}
