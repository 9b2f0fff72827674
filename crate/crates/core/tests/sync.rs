use predpack::ahb::MsabsSnapshot;
use predpack::engine::{random_scenario, run_optimistic, RunOptions, Scenario};
use predpack::fabric::Domain;
use predpack::sync::*;
use std::path::PathBuf;

fn scenario(name: &str) -> Scenario {
    Scenario::from_file(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)).unwrap()
}

/// A four-beat write then a four-beat read, master on the simulator side.
const WRITE_THEN_READ: &str = r#"
cycles = 12
depth = 64
[[region]]
base = 0x0
size = 0x1000
slave = 0
[[slave]]
domain = "acc"
[[master]]
domain = "sim"
[[master.txn]]
write = true
addr = 0x0
burst = "INCR4"
data = [1, 2, 3, 4]
[[master.txn]]
addr = 0x40
burst = "INCR4"
"#;

#[test]
fn three_predictions_then_an_unpredictable_cycle() {
    let scn = Scenario::from_toml(WRITE_THEN_READ).unwrap();
    let r = run_optimistic(&scn, &RunOptions { record_paths: true, ..Default::default() }).unwrap();
    let paths = |log: &[PathRecord]| log[..6].iter().map(|p| p.path).collect::<Vec<_>>();
    use Path::*;
    // the leader stores at its first predictable cycle and hops conservatively
    assert_eq!(paths(&r.sim_paths), [C, P, P, P, P, S]);
    assert!(r.sim_paths[1].stations.starts_with(&[Station::Start, Station::RbStore, Station::ConservativeHop]));
    assert_eq!(paths(&r.acc_paths), [C, C, L, L, L, R]);
    assert!(r.acc_paths[2..5].iter().all(|p| p.stations.contains(&Station::PredictionCheck)));
    assert!(r.acc_paths[5].stations.contains(&Station::SendOutput));
    assert!(r.sim_paths[5].stations.ends_with(&[Station::Flush, Station::GetResponse, Station::End]));
    let t = &r.transitions[0];
    assert_eq!((t.mode, t.predictions, t.committed, t.failure_index), (OperatingMode::Sla, 3, 4, None));
}

#[test]
fn failed_transition_restores_and_rolls_forth() {
    let mut scn = Scenario::from_toml(WRITE_THEN_READ).unwrap();
    scn.noise.p_success = 0.0;
    let r = run_optimistic(&scn, &RunOptions { record_paths: true, ..Default::default() }).unwrap();
    let t = r.transitions.iter().find(|t| t.failure_index.is_some()).expect("a failed transition");
    assert_eq!(t.failure_index, Some(0));
    assert_eq!(t.committed, 1);
    assert_eq!(t.restores, 1);
    let leader = if t.mode.leader() == Some(Domain::Sim) { &r.sim_paths } else { &r.acc_paths };
    let stations: Vec<Station> = leader.iter().flat_map(|p| p.stations.clone()).collect();
    assert!(stations.windows(2).any(|w| w == [Station::StoreActual, Station::RequestRestore]));
    let lagger = if t.mode.leader() == Some(Domain::Sim) { &r.acc_paths } else { &r.sim_paths };
    assert!(lagger.iter().any(|p| p.stations.contains(&Station::ReportFail)));
}

#[test]
fn phases_are_legal_and_match_outcomes() {
    for seed in 0..20 {
        let mut scn = random_scenario(seed, 600);
        scn.noise.p_success = 0.5;
        let r = run_optimistic(&scn, &RunOptions::default()).unwrap();
        for t in &r.transitions {
            assert!(phases_legal(&t.phases), "seed {seed}: {:?}", t.phases);
            let rolled = t.phases.len() == 4;
            assert_eq!(rolled, t.failure_index.is_some());
            assert_eq!(t.restores, rolled as u64);
            assert_eq!(t.stores, 1);
            assert!(t.committed as usize <= scn.depth);
            if let Some(j) = t.failure_index {
                assert_eq!(t.committed, j + 1);
            }
        }
    }
}

#[test]
fn lob_never_exceeds_its_depth() {
    let mut lob = Lob::new(3);
    let e = LobEntry { cycle: 0, leader_outputs: Default::default(), prediction: None };
    for _ in 0..3 {
        lob.push(e.clone()).unwrap();
    }
    assert_eq!(lob.push(e), Err(SyncError::LobOverflow(3)));
    lob.clear();
    assert!(lob.is_empty());

    let mut scn = scenario("als_dma_read.toml");
    scn.cycles = 20_000;
    let r = run_optimistic(&scn, &RunOptions::default()).unwrap();
    let full = &r.transitions[1..r.transitions.len() - 1];
    assert!(!full.is_empty());
    // a full LOB holds D - 1 predicted entries and the final one
    assert!(full.iter().all(|t| t.committed == 64 && t.predictions == 63));
}

#[test]
fn perfect_prediction_never_restores() {
    let mut scn = scenario("als_dma_read.toml");
    scn.cycles = 20_000;
    let r = run_optimistic(&scn, &RunOptions::default()).unwrap();
    assert_eq!(r.restores, [0, 0]);
    assert_eq!(r.stores.iter().sum::<u64>(), r.transitions.len() as u64);
    assert!(r.transitions.iter().all(|t| t.phases == [TransitionPhase::Ra, TransitionPhase::Fu]));
}

fn lockstep_states(scn: &Scenario) -> (DomainState, DomainState) {
    (
        DomainState::new(scn.topology.clone(), Domain::Sim).unwrap(),
        DomainState::new(scn.topology.clone(), Domain::Acc).unwrap(),
    )
}

fn full_snapshot(sim: &DomainState, acc: &DomainState) -> MsabsSnapshot {
    let mut s = sim.bus.outputs();
    s.merge_from(&acc.bus.outputs(), &sim.bus.remote_mask());
    s
}

/// Runs `d` over the recorded other-domain inputs, returning its local
/// outputs per cycle.
fn replay(d: &mut DomainState, inputs: &[MsabsSnapshot]) -> Vec<MsabsSnapshot> {
    inputs
        .iter()
        .map(|inp| {
            let local = d.bus.local_mask();
            let out = d.bus.outputs().masked(&local);
            let mut full = out;
            full.merge_from(inp, &d.bus.remote_mask());
            d.commit(&full);
            out
        })
        .collect()
}

#[test]
fn checkpoint_restore_is_idempotent() {
    let scn = scenario("mixed.toml");
    let (mut sim, mut acc) = lockstep_states(&scn);
    for _ in 0..137 {
        let s = full_snapshot(&sim, &acc);
        sim.commit(&s);
        acc.commit(&s);
    }
    let cp = store_checkpoint(&sim, 1000);
    assert_eq!(cp.cycle, 137);
    let mut inputs = Vec::new();
    for _ in 0..40 {
        let s = full_snapshot(&sim, &acc);
        inputs.push(s);
        sim.commit(&s);
        acc.commit(&s);
    }
    let after = sim.clone();
    restore_checkpoint(&mut sim, &cp);
    assert_eq!(sim.cycle(), 137);
    let first = replay(&mut sim, &inputs);
    assert_eq!(sim, after);
    restore_checkpoint(&mut sim, &cp);
    assert_eq!(replay(&mut sim, &inputs), first);

    // one corrected input: identical before it, different from it onwards
    let k = 10;
    let mut changed = inputs.clone();
    changed[k].hready = !changed[k].hready;
    changed[k].hrdata ^= 0xffff;
    restore_checkpoint(&mut sim, &cp);
    let other = replay(&mut sim, &changed);
    assert_eq!(other[..=k], first[..=k]);
    assert_ne!(other[k + 1..], first[k + 1..]);
}
