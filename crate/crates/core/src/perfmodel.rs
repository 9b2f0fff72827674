//! Closed-form expected cost per committed cycle for the conventional and
//! optimistic engines.
//!
//! A transition makes `n = D - 1` predictions, each correct with
//! probability `p`, followed by one unpredicted closing cycle. If every
//! prediction holds it commits `D` cycles; if the first failure is at
//! prediction `j` it commits `j` cycles (the failed cycle completes with the
//! actual response) and the leader replays those `j` cycles after a
//! restore. Each transition costs one store, one flush of `D` entries and
//! one report; a failed one adds a restore. Expected totals divided by the
//! expected committed cycles give the per-cycle components.

use crate::channel::{transfer_time, CalibratedCharges, CostModel, Direction};
use crate::engine::CheckpointCost;
use crate::fabric::Domain;
use crate::sync::OperatingMode;
use std::io::{self, Write};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerfParams {
    pub t_sim_cycle: f64,
    pub t_acc_cycle: f64,
    pub cost: CostModel,
    pub depth: usize,
    pub checkpoint: CheckpointCost,
    pub charges: CalibratedCharges,
}

impl Default for PerfParams {
    fn default() -> Self {
        PerfParams {
            t_sim_cycle: 1.0e-6,
            t_acc_cycle: 1.0e-7,
            cost: CostModel::default(),
            depth: 64,
            checkpoint: CheckpointCost::default(),
            charges: CalibratedCharges::default(),
        }
    }
}

impl PerfParams {
    pub fn validate(&self) -> Result<(), String> {
        self.cost.validate()?;
        let c = &self.checkpoint;
        let all = [self.t_sim_cycle, self.t_acc_cycle, c.sim_var_s, c.acc_var_s];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("times must be finite and nonnegative".into());
        }
        if self.depth == 0 {
            return Err("depth must be at least 1".into());
        }
        Ok(())
    }

    pub fn t_cycle(&self, d: Domain) -> f64 {
        match d {
            Domain::Sim => self.t_sim_cycle,
            Domain::Acc => self.t_acc_cycle,
        }
    }

    fn access(&self, dir: Direction, words: u64) -> f64 {
        transfer_time(&self.cost, dir, words)
    }
}

/// Expected seconds per committed cycle, by component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PerfBreakdown {
    pub t_sim: f64,
    pub t_acc: f64,
    pub t_store: f64,
    pub t_restore: f64,
    pub t_ch: f64,
    /// Committed cycles per second.
    pub performance: f64,
    /// Performance relative to the conventional baseline.
    pub ratio: f64,
}

impl PerfBreakdown {
    pub fn from_components(t_sim: f64, t_acc: f64, t_store: f64, t_restore: f64, t_ch: f64, baseline: f64) -> Self {
        let performance = 1.0 / (t_sim + t_acc + t_store + t_restore + t_ch);
        PerfBreakdown { t_sim, t_acc, t_store, t_restore, t_ch, performance, ratio: performance / baseline }
    }

    pub fn total(&self) -> f64 {
        self.t_sim + self.t_acc + self.t_store + self.t_restore + self.t_ch
    }

    pub fn components(&self) -> [f64; 5] {
        [self.t_sim, self.t_acc, self.t_store, self.t_restore, self.t_ch]
    }

    pub const COMPONENT_NAMES: [&'static str; 5] = ["T_sim", "T_acc", "T_store", "T_rest", "T_ch"];
}

/// Lock-step exchange: one packet each way per cycle.
pub fn conventional_breakdown(pp: &PerfParams) -> PerfBreakdown {
    let c = &pp.charges;
    let t_ch = pp.access(Direction::S2A, c.conv_s2a_words) + pp.access(Direction::A2S, c.conv_a2s_words);
    let t = pp.t_sim_cycle + pp.t_acc_cycle + t_ch;
    PerfBreakdown::from_components(pp.t_sim_cycle, pp.t_acc_cycle, 0.0, 0.0, t_ch, 1.0 / t)
}

/// Expected per-transition quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionMoments {
    pub committed: f64,
    pub leader_cycles: f64,
    pub p_fail: f64,
}

pub fn transition_moments(depth: usize, p: f64) -> TransitionMoments {
    let n = depth.saturating_sub(1);
    let q = 1.0 - p;
    // sum over the first failure position j of j * p^(j-1) * q
    let mut fail_commit = 0.0;
    let mut pj = 1.0;
    for j in 1..=n {
        fail_commit += j as f64 * pj * q;
        pj *= p;
    }
    let p_all = pj;
    let committed = fail_commit + depth as f64 * p_all;
    TransitionMoments { committed, leader_cycles: depth as f64 + fail_commit, p_fail: 1.0 - p_all }
}

/// Optimistic engine with `leader` running ahead and per-prediction
/// success probability `p`.
pub fn optimistic_breakdown(pp: &PerfParams, leader: Domain, p: f64) -> PerfBreakdown {
    let m = transition_moments(pp.depth, p.clamp(0.0, 1.0));
    let lagger = leader.other();
    let c = &pp.charges;
    let lead_dir = Direction::from_sender(leader);
    let lag_dir = Direction::from_sender(lagger);
    let channel = pp.access(lead_dir, c.flush_words(pp.depth as u64))
        + (1.0 - m.p_fail) * pp.access(lag_dir, c.report_words)
        + m.p_fail * pp.access(lag_dir, c.fail_words);
    let store = pp.checkpoint.store_s(leader);
    let t_lead = pp.t_cycle(leader) * m.leader_cycles / m.committed;
    let t_lag = pp.t_cycle(lagger);
    let (t_sim, t_acc) = match leader {
        Domain::Sim => (t_lead, t_lag),
        Domain::Acc => (t_lag, t_lead),
    };
    let baseline = conventional_breakdown(pp).performance;
    PerfBreakdown::from_components(
        t_sim,
        t_acc,
        store / m.committed,
        store * m.p_fail / m.committed,
        channel / m.committed,
        baseline,
    )
}

pub fn als_breakdown(pp: &PerfParams, p: f64) -> PerfBreakdown {
    optimistic_breakdown(pp, Domain::Acc, p)
}

pub fn sla_breakdown(pp: &PerfParams, p: f64) -> PerfBreakdown {
    optimistic_breakdown(pp, Domain::Sim, p)
}

pub fn breakdown(pp: &PerfParams, mode: OperatingMode, p: f64) -> PerfBreakdown {
    match mode.leader() {
        Some(d) => optimistic_breakdown(pp, d, p),
        None => conventional_breakdown(pp),
    }
}

/// Accuracy at which the optimistic engine breaks even with the
/// conventional one, by bisection. `None` if it never does on [0, 1].
pub fn break_even(pp: &PerfParams, leader: Domain) -> Option<f64> {
    let f = |p: f64| optimistic_breakdown(pp, leader, p).ratio - 1.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return None;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub mode: OperatingMode,
    pub t_sim_cycle: f64,
    pub depth: usize,
    pub p: f64,
    pub breakdown: PerfBreakdown,
}

/// Full grid over `ps` x `depths` for one mode.
pub fn sweep(pp: &PerfParams, mode: OperatingMode, ps: &[f64], depths: &[usize]) -> Vec<SweepRow> {
    let mut rows = Vec::with_capacity(ps.len() * depths.len());
    for &depth in depths {
        let q = PerfParams { depth, ..*pp };
        for &p in ps {
            rows.push(SweepRow { mode, t_sim_cycle: q.t_sim_cycle, depth, p, breakdown: breakdown(&q, mode, p) });
        }
    }
    rows
}

/// Accuracy columns of the ALS breakdown table.
pub const TABLE2_P: [f64; 8] = [1.0, 0.99, 0.96, 0.90, 0.80, 0.60, 0.30, 0.10];

pub const TABLE2_HEADER: &str = "prob,T_sim,T_acc,T_store,T_rest,T_ch,performance,ratio";

pub fn write_table2_row<W: Write>(w: &mut W, p: f64, b: &PerfBreakdown) -> io::Result<()> {
    writeln!(
        w,
        "{p:.3},{:.4e},{:.4e},{:.4e},{:.4e},{:.4e},{:.1},{:.4}",
        b.t_sim, b.t_acc, b.t_store, b.t_restore, b.t_ch, b.performance, b.ratio
    )
}

pub fn write_table2<W: Write>(w: &mut W, rows: &[(f64, PerfBreakdown)]) -> io::Result<()> {
    writeln!(w, "{TABLE2_HEADER}")?;
    for (p, b) in rows {
        write_table2_row(w, *p, b)?;
    }
    Ok(())
}

pub fn table2(pp: &PerfParams) -> Vec<(f64, PerfBreakdown)> {
    TABLE2_P.iter().map(|&p| (p, als_breakdown(pp, p))).collect()
}

/// Simulator speeds and LOB depths of the four-configuration comparison.
pub const FIG4_T_SIM: [f64; 2] = [1.0e-5, 1.0e-6];
pub const FIG4_DEPTHS: [usize; 2] = [16, 64];

/// Dense accuracy grid from 0 to 1 in steps of 0.01.
pub fn dense_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

pub fn fig4(pp: &PerfParams, modes: &[OperatingMode], ps: &[f64]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &mode in modes {
        for t_sim in FIG4_T_SIM {
            rows.extend(sweep(&PerfParams { t_sim_cycle: t_sim, ..*pp }, mode, ps, &FIG4_DEPTHS));
        }
    }
    rows
}

pub const SWEEP_HEADER: &str = "mode,t_sim_cycle,depth,prob,T_sim,T_acc,T_store,T_rest,T_ch,performance,ratio";

pub fn write_sweep<W: Write>(w: &mut W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        let b = &r.breakdown;
        writeln!(
            w,
            "{},{:e},{},{:.4},{:.4e},{:.4e},{:.4e},{:.4e},{:.4e},{:.1},{:.4}",
            r.mode, r.t_sim_cycle, r.depth, r.p, b.t_sim, b.t_acc, b.t_store, b.t_restore, b.t_ch, b.performance, b.ratio
        )?;
    }
    Ok(())
}

/// Ratio estimate `sum(x) / sum(c)` over i.i.d. renewal cycles with its
/// delta-method standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioEstimate {
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
}

pub fn ratio_estimate(samples: impl IntoIterator<Item = (f64, f64)> + Clone) -> RatioEstimate {
    let (mut sx, mut sc, mut n) = (0.0, 0.0, 0usize);
    for (x, c) in samples.clone() {
        sx += x;
        sc += c;
        n += 1;
    }
    if n == 0 || sc == 0.0 {
        return RatioEstimate { mean: 0.0, se: 0.0, samples: n };
    }
    let r = sx / sc;
    let cbar = sc / n as f64;
    let ss: f64 = samples.into_iter().map(|(x, c)| (x - r * c).powi(2)).sum();
    let var = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
    RatioEstimate { mean: r, se: (var / n as f64).sqrt() / cbar, samples: n }
}
