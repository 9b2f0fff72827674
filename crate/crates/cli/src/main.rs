//! `predpack`: run scenarios, sweep the performance model and diff traces.

use clap::{Parser, Subcommand, ValueEnum};
use predpack::engine::{
    first_mismatch, run_conventional, run_optimistic, run_reference, write_transitions, EngineError, EngineMode,
    RunOptions, RunResult, Scenario,
};
use predpack::fabric::trace;
use predpack::perfmodel::{
    dense_grid, fig4, sweep, table2, write_sweep, write_table2, PerfBreakdown, PerfParams, SweepRow,
};
use predpack::sync::OperatingMode;
use rayon::prelude::*;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_MISMATCH: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PROTOCOL: u8 = 3;

#[derive(Parser)]
#[command(name = "predpack", version, about = "Optimistic AHB co-emulation engines and performance model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Engine {
    Conventional,
    Optimistic,
    /// Monolithic single-domain bus.
    Reference,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Als,
    Sla,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<OperatingMode> {
        match self {
            ModeArg::Als => vec![OperatingMode::Als],
            ModeArg::Sla => vec![OperatingMode::Sla],
            ModeArg::Both => vec![OperatingMode::Als, OperatingMode::Sla],
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace, ledger, transitions and result CSVs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Defaults to the scenario's `engine`.
        #[arg(long, value_enum)]
        engine: Option<Engine>,
        /// Prediction success probability.
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        depth: Option<usize>,
        /// Noise seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        cycles: Option<u64>,
        /// Also run the monolithic reference and exit 1 on any difference.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Performance over a grid of accuracies and LOB depths.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        /// Comma-separated accuracies; defaults to 0, 0.01, ..., 1.
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        /// Comma-separated LOB depths; defaults to the scenario's.
        #[arg(long, value_delimiter = ',')]
        depth: Vec<usize>,
        /// Simulate every grid point instead of evaluating the closed form.
        /// The leader is then whichever side the scenario's topology makes it.
        #[arg(long)]
        monte_carlo: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        cycles: Option<u64>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Compare two trace CSVs; exit 1 and report the first divergent cycle.
    Diff { a: PathBuf, b: PathBuf },
    /// ALS breakdown at the pinned accuracy columns.
    Table2 {
        /// Take timing and costs from this scenario instead of the built-in calibration.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "table2.csv")]
        out: PathBuf,
    },
    /// ALS and SLA curves for both simulator speeds and LOB depths 16 and 64.
    Fig4 {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "fig4.csv")]
        out: PathBuf,
    },
}

/// Failure carrying its exit status.
struct Failure {
    code: u8,
    msg: String,
}

type Outcome = Result<(), Failure>;

fn config(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, msg: msg.into() }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| config(format!("{}: {e}", path.display()))
}

fn engine_err(e: EngineError) -> Failure {
    let kind = if e.is_protocol_violation() { "protocol violation" } else { "internal error" };
    Failure { code: EXIT_PROTOCOL, msg: format!("{kind}: {e}") }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    Scenario::from_file(path).map_err(|e| match e.line {
        Some(l) => config(format!("{}:{l}: {}", path.display(), e.msg)),
        None => config(format!("{}: {}", path.display(), e.msg)),
    })
}

fn apply_overrides(
    scn: &mut Scenario,
    p: Option<f64>,
    depth: Option<usize>,
    seed: Option<u64>,
    cycles: Option<u64>,
) -> Outcome {
    if let Some(p) = p {
        if !(0.0..=1.0).contains(&p) {
            return Err(config(format!("--p {p} is outside [0, 1]")));
        }
        scn.noise.p_success = p;
    }
    if let Some(d) = depth {
        if d == 0 {
            return Err(config("--depth must be at least 1"));
        }
        scn.depth = d;
    }
    if let Some(s) = seed {
        scn.noise.seed = s;
    }
    if let Some(c) = cycles {
        if c == 0 {
            return Err(config("--cycles must be at least 1"));
        }
        scn.cycles = c;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Outcome {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn result_rows(r: &RunResult) -> Vec<(&'static str, String)> {
    let b = &r.breakdown;
    vec![
        ("engine", r.engine.to_string()),
        ("cycles", r.cycles.to_string()),
        ("sim_cycles_executed", r.sim_cycles.to_string()),
        ("acc_cycles_executed", r.acc_cycles.to_string()),
        ("stores", (r.stores[0] + r.stores[1]).to_string()),
        ("restores", (r.restores[0] + r.restores[1]).to_string()),
        ("predictions", r.predictions.to_string()),
        ("transitions", r.transitions.len().to_string()),
        ("channel_accesses", r.ledger.accesses().to_string()),
        ("channel_s", format!("{:e}", r.ledger.time_s)),
        ("T_sim", format!("{:e}", b.t_sim)),
        ("T_acc", format!("{:e}", b.t_acc)),
        ("T_store", format!("{:e}", b.t_store)),
        ("T_rest", format!("{:e}", b.t_restore)),
        ("T_ch", format!("{:e}", b.t_ch)),
        ("performance", format!("{:.3}", b.performance)),
        ("ratio", format!("{:.6}", b.ratio)),
        ("trace_hash", format!("{:016x}", r.trace_hash)),
    ]
}

fn write_result(path: &Path, scn: &Scenario, rows: &[(&str, String)]) -> Outcome {
    write_file(path, |w| {
        for line in scn.resolved() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "metric,value")?;
        for (k, v) in rows {
            writeln!(w, "{k},{v}")?;
        }
        Ok(())
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    path: &Path,
    engine: Option<Engine>,
    p: Option<f64>,
    depth: Option<usize>,
    seed: Option<u64>,
    cycles: Option<u64>,
    verify: bool,
    out: &Path,
) -> Outcome {
    let mut scn = load(path)?;
    apply_overrides(&mut scn, p, depth, seed, cycles)?;
    let engine = engine.unwrap_or(match scn.engine {
        EngineMode::Conventional => Engine::Conventional,
        EngineMode::Optimistic => Engine::Optimistic,
    });
    fs::create_dir_all(out).map_err(io_err(out))?;
    let reference = || run_reference(&scn).map_err(|e| engine_err(e.into()));
    let opts = RunOptions::default();
    let r = match engine {
        Engine::Reference => {
            let reference = reference()?;
            write_file(&out.join("trace.csv"), |w| trace::write_trace(w, &reference.trace))?;
            write_file(&out.join("ledger.csv"), |w| predpack::channel::ChannelLedger::default().write_csv(w))?;
            write_file(&out.join("transitions.csv"), |w| write_transitions(w, &[]))?;
            let rows = vec![("engine", "reference".to_string()), ("cycles", scn.cycles.to_string())];
            return write_result(&out.join("result.csv"), &scn, &rows);
        }
        Engine::Conventional => run_conventional(&scn, &opts).map_err(engine_err)?,
        Engine::Optimistic => run_optimistic(&scn, &opts).map_err(engine_err)?,
    };
    write_file(&out.join("trace.csv"), |w| trace::write_trace(w, &r.trace))?;
    write_file(&out.join("ledger.csv"), |w| r.ledger.write_csv(w))?;
    write_file(&out.join("transitions.csv"), |w| write_transitions(w, &r.transitions))?;
    let mut rows = result_rows(&r);
    let mismatch = if verify { first_mismatch(&r, &reference()?) } else { None };
    if verify {
        rows.push(("reference_mismatch_cycle", mismatch.map(|c| c.to_string()).unwrap_or_else(|| "none".into())));
    }
    write_result(&out.join("result.csv"), &scn, &rows)?;
    let b = &r.breakdown;
    println!(
        "{}: {} cycles, {:.0} cycles/s, ratio {:.3}, {} channel accesses",
        r.engine,
        r.cycles,
        b.performance,
        b.ratio,
        r.ledger.accesses()
    );
    match mismatch {
        Some(c) => Err(Failure { code: EXIT_MISMATCH, msg: format!("differs from the reference at cycle {c}") }),
        None => Ok(()),
    }
}

/// Operating mode of most committed transition cycles.
fn dominant_mode(r: &RunResult) -> OperatingMode {
    let tally = |m| r.transitions.iter().filter(|t| t.mode == m).map(|t| t.committed).sum::<u64>();
    [OperatingMode::Als, OperatingMode::Sla]
        .into_iter()
        .map(|m| (tally(m), m))
        .filter(|(n, _)| *n > 0)
        .max_by_key(|(n, _)| *n)
        .map_or(OperatingMode::Conservative, |(_, m)| m)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    path: &Path,
    mode: ModeArg,
    ps: Vec<f64>,
    depths: Vec<usize>,
    monte_carlo: bool,
    seed: Option<u64>,
    cycles: Option<u64>,
    out: &Path,
) -> Outcome {
    let mut scn = load(path)?;
    apply_overrides(&mut scn, None, None, seed, cycles)?;
    let ps = if ps.is_empty() { dense_grid() } else { ps };
    let depths = if depths.is_empty() { vec![scn.depth] } else { depths };
    if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(config(format!("--p {p} is outside [0, 1]")));
    }
    if depths.contains(&0) {
        return Err(config("--depth must be at least 1"));
    }
    let rows: Vec<SweepRow> = if monte_carlo {
        let grid: Vec<(usize, f64)> = depths.iter().flat_map(|&d| ps.iter().map(move |&p| (d, p))).collect();
        let runs: Vec<Result<SweepRow, EngineError>> = grid
            .par_iter()
            .map(|&(depth, p)| {
                let mut s = scn.clone();
                s.depth = depth;
                s.noise.p_success = p;
                let r = run_optimistic(&s, &RunOptions { record_trace: false, ..Default::default() })?;
                Ok(SweepRow { mode: dominant_mode(&r), t_sim_cycle: s.speeds.t_sim_cycle, depth, p, breakdown: r.breakdown })
            })
            .collect();
        runs.into_iter().collect::<Result<_, _>>().map_err(engine_err)?
    } else {
        let pp = scn.perf_params();
        mode.modes().into_iter().flat_map(|m| sweep(&pp, m, &ps, &depths)).collect()
    };
    write_file(out, |w| write_sweep(w, &rows))?;
    println!("{} grid points written to {}", rows.len(), out.display());
    Ok(())
}

fn read_trace(path: &Path) -> Result<Vec<predpack::ahb::MsabsSnapshot>, Failure> {
    let f = File::open(path).map_err(io_err(path))?;
    trace::read_trace(BufReader::new(f)).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn cmd_diff(a: &Path, b: &Path) -> Outcome {
    let (ta, tb) = (read_trace(a)?, read_trace(b)?);
    match trace::first_divergence(&ta, &tb) {
        None => {
            println!("identical ({} cycles)", ta.len());
            Ok(())
        }
        Some(c) => Err(Failure { code: EXIT_MISMATCH, msg: format!("traces diverge at cycle {c}") }),
    }
}

fn params(scenario: Option<&Path>) -> Result<PerfParams, Failure> {
    let pp = match scenario {
        Some(p) => load(p)?.perf_params(),
        None => PerfParams::default(),
    };
    pp.validate().map_err(config)?;
    Ok(pp)
}

fn cmd_table2(scenario: Option<&Path>, out: &Path) -> Outcome {
    let rows: Vec<(f64, PerfBreakdown)> = table2(&params(scenario)?);
    write_file(out, |w| write_table2(w, &rows))?;
    for (p, b) in &rows {
        println!("p={p:.3} performance {:.0} ratio {:.2}", b.performance, b.ratio);
    }
    Ok(())
}

fn cmd_fig4(scenario: Option<&Path>, out: &Path) -> Outcome {
    let rows = fig4(&params(scenario)?, &[OperatingMode::Als, OperatingMode::Sla], &dense_grid());
    write_file(out, |w| write_sweep(w, &rows))?;
    println!("{} points written to {}", rows.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { scenario, engine, p, depth, seed, cycles, verify, out } => {
            cmd_run(&scenario, engine, p, depth, seed, cycles, verify, &out)
        }
        Command::Sweep { scenario, mode, p, depth, monte_carlo, seed, cycles, out } => {
            cmd_sweep(&scenario, mode, p, depth, monte_carlo, seed, cycles, &out)
        }
        Command::Diff { a, b } => cmd_diff(&a, &b),
        Command::Table2 { scenario, out } => cmd_table2(scenario.as_deref(), &out),
        Command::Fig4 { scenario, out } => cmd_fig4(scenario.as_deref(), &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("predpack: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
