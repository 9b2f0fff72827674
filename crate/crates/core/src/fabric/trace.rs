//! Cycle trace CSV: one row per committed cycle.

use crate::ahb::{Hburst, Hresp, Hsize, Htrans, MsabsSnapshot};
use std::io::{self, BufRead, Write};

pub const HEADER: &str = "cycle,haddr,htrans,hwrite,hsize,hburst,hprot,hwdata,hrdata,hresp,hready,hsplit,hbusreq,sideband";

pub fn write_row<W: Write>(w: &mut W, cycle: u64, s: &MsabsSnapshot) -> io::Result<()> {
    writeln!(
        w,
        "{cycle},{:#010x},{},{},{},{},{:#x},{:#010x},{:#010x},{},{},{:#06x},{:#06x},{:#010x}",
        s.haddr,
        s.htrans,
        s.hwrite as u8,
        s.hsize,
        s.hburst,
        s.hprot,
        s.hwdata,
        s.hrdata,
        s.hresp,
        s.hready as u8,
        s.hsplit,
        s.hbusreq,
        s.sideband
    )
}

pub fn write_trace<W: Write>(w: &mut W, trace: &[MsabsSnapshot]) -> io::Result<()> {
    writeln!(w, "{HEADER}")?;
    for (c, s) in trace.iter().enumerate() {
        write_row(w, c as u64, s)?;
    }
    Ok(())
}

fn hex(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let digits = t.strip_prefix("0x").ok_or_else(|| format!("expected hex, got `{t}`"))?;
    u64::from_str_radix(digits, 16).map_err(|e| format!("`{t}`: {e}"))
}

fn bit(s: &str) -> Result<bool, String> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("expected 0/1, got `{other}`")),
    }
}

pub fn parse_row(line: &str) -> Result<(u64, MsabsSnapshot), String> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 14 {
        return Err(format!("expected 14 columns, got {}", f.len()));
    }
    let cycle = f[0].trim().parse::<u64>().map_err(|e| e.to_string())?;
    let e = |x: crate::ahb::AhbError| x.to_string();
    let s = MsabsSnapshot {
        haddr: hex(f[1])? as u32,
        htrans: f[2].trim().parse::<Htrans>().map_err(e)?,
        hwrite: bit(f[3])?,
        hsize: f[4].trim().parse::<Hsize>().map_err(e)?,
        hburst: f[5].trim().parse::<Hburst>().map_err(e)?,
        hprot: hex(f[6])? as u8,
        hwdata: hex(f[7])? as u32,
        hrdata: hex(f[8])? as u32,
        hresp: f[9].trim().parse::<Hresp>().map_err(e)?,
        hready: bit(f[10])?,
        hsplit: hex(f[11])? as u16,
        hbusreq: hex(f[12])? as u16,
        sideband: hex(f[13])? as u32,
    };
    Ok((cycle, s))
}

/// Reads a trace written by [`write_trace`]. Lines starting with `#` are
/// comments.
pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<MsabsSnapshot>, String> {
    let mut out = Vec::new();
    let mut header_seen = false;
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            if line.trim() != HEADER {
                return Err(format!("line {}: unexpected header", n + 1));
            }
            header_seen = true;
            continue;
        }
        let (cycle, s) = parse_row(&line).map_err(|e| format!("line {}: {e}", n + 1))?;
        if cycle != out.len() as u64 {
            return Err(format!("line {}: cycle {cycle} out of order", n + 1));
        }
        out.push(s);
    }
    Ok(out)
}

/// First cycle at which two traces differ, or where one ends early.
pub fn first_divergence(a: &[MsabsSnapshot], b: &[MsabsSnapshot]) -> Option<u64> {
    a.iter()
        .zip(b)
        .position(|(x, y)| x != y)
        .or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len())))
        .map(|c| c as u64)
}
