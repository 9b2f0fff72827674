use predpack::ahb::{Field, Hburst, Hresp, Hsize, Htrans};
use predpack::engine::Scenario;
use predpack::fabric::*;
use std::path::PathBuf;
use std::sync::Arc;

fn topo(src: &str) -> Arc<Topology> {
    Scenario::from_toml(src).unwrap().topology
}

const ONE_SLAVE: &str = r#"
cycles = 1
[[region]]
base = 0x0
size = 0x1000
slave = 0
"#;

#[test]
fn single_write_matches_golden_trace() {
    let t = topo(&format!(
        "{ONE_SLAVE}
[[slave]]
domain = \"acc\"
mem_words = 64
[[master]]
domain = \"sim\"
[[master.txn]]
write = true
addr = 0x8
burst = \"SINGLE\"
data = [0xcafe]
"
    ));
    let mut bus = MonolithicBus::new(t).unwrap();
    bus.step().unwrap();
    let before = bus.bus().memory_images()[0].1[2];
    bus.step().unwrap();
    assert_ne!(before, 0xcafe);
    // written at the edge closing the data phase
    assert_eq!(bus.bus().memory_images()[0].1[2], 0xcafe);
    bus.run(2).unwrap();
    let mut out = Vec::new();
    trace::write_trace(&mut out, bus.trace()).unwrap();
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/single_write.csv");
    assert_eq!(String::from_utf8(out).unwrap(), std::fs::read_to_string(golden).unwrap());
}

#[test]
fn one_wait_state_alternates_hready() {
    let t = topo(&format!(
        "{ONE_SLAVE}
[[slave]]
domain = \"acc\"
wait_states = 1
fifo_depth = 64
[[master]]
domain = \"sim\"
[[master.stream]]
base = 0x0
count = 2
burst = \"INCR8\"
"
    ));
    let mut bus = MonolithicBus::new(t).unwrap();
    bus.run(33).unwrap();
    let ready: Vec<bool> = bus.trace().iter().map(|s| s.hready).collect();
    let want: Vec<bool> = (0..33).map(|i| i % 2 == 0).collect();
    assert_eq!(ready, want);
    // 16 address beats, each held through one wait state except the first
    assert!(bus.trace()[..31].iter().all(|s| s.htrans.is_active()));
    assert!(!bus.trace()[31].htrans.is_active());
}

#[test]
fn idle_bus_is_quiet() {
    let t = topo(&format!("{ONE_SLAVE}\n[[slave]]\ndomain = \"acc\"\n[[master]]\ndomain = \"sim\"\n"));
    let mut bus = MonolithicBus::new(t).unwrap();
    bus.run(50).unwrap();
    for s in bus.trace() {
        assert_eq!((s.htrans, s.hready, s.hresp, s.hbusreq), (Htrans::Idle, true, Hresp::Okay, 0));
    }
}

#[test]
fn arbiter_examples() {
    let cfg = ArbiterConfig::by_index(3);
    let idle = BusPipelineState::new(&cfg);
    assert_eq!(arbitrate(&cfg, 0b101, &idle), 0);
    assert_eq!(arbitrate(&cfg, 0, &idle), 0);
    let cursor = predpack::ahb::BurstCursor::new(0x100, Hsize::Word, Hburst::Incr4).at(1);
    let locked = BusPipelineState { granted: 2, burst: Some(BurstProgress { owner: 2, cursor }), ..idle };
    assert_eq!(arbitrate(&cfg, 0b001, &locked), 2);
}

#[test]
fn grant_holds_for_a_whole_fixed_burst() {
    // master 2 starts an INCR4 while master 0 asks for the bus on the way
    let t = topo(&format!(
        "{ONE_SLAVE}
[arbiter]
priority = [0, 1, 2]
default_master = 2
[[slave]]
domain = \"acc\"
fifo_depth = 64
[[master]]
domain = \"sim\"
[[master.txn]]
addr = 0x40
burst = \"INCR4\"
not_before = 1
[[master]]
domain = \"sim\"
[[master]]
domain = \"acc\"
[[master.txn]]
addr = 0x0
burst = \"INCR4\"
"
    ));
    let mut bus = MonolithicBus::new(t).unwrap();
    let mut owners = Vec::new();
    for _ in 0..12 {
        owners.push((bus.bus().pipe().granted, bus.step().unwrap()));
    }
    // replay: the owner of every address beat, counted per burst
    let mut beats_left = 0;
    let mut owner = None;
    for (g, s) in &owners {
        if !s.htrans.is_active() || !s.hready {
            continue;
        }
        if s.htrans == Htrans::NonSeq {
            assert_eq!(beats_left, 0, "burst interrupted");
            beats_left = 4;
            owner = Some(*g);
        }
        assert_eq!(Some(*g), owner);
        beats_left -= 1;
    }
    let issued: Vec<usize> = owners.iter().filter(|(_, s)| s.htrans == Htrans::NonSeq).map(|(g, _)| *g).collect();
    assert_eq!(issued, [2, 0]);
}

#[test]
fn decoder_boundaries_brute_force() {
    let regions = vec![Region { base: 0x100, size: 0x100, slave: 0 }, Region { base: 0x200, size: 0x80, slave: 1 }];
    let map = DecoderMap::new(regions.clone(), 2).unwrap();
    for addr in 0..0x400u32 {
        let naive = regions.iter().find(|r| r.base <= addr && addr - r.base < r.size).map(|r| r.slave);
        assert_eq!(decode(&map, addr), naive.map_or(Target::Default, Target::Slave), "{addr:#x}");
    }
    assert_eq!(decode(&map, 0x1FF), Target::Slave(0));
    assert_eq!(decode(&map, 0x200), Target::Slave(1));
    assert_eq!(decode(&map, 0x280), Target::Default);
    assert_eq!(decode(&map, 0xFFFF_0000), Target::Default);
}

#[test]
fn read_burst_needs_slave_responses_as_proxies() {
    let t = topo(&format!(
        "{ONE_SLAVE}
[[slave]]
domain = \"acc\"
[[master]]
domain = \"sim\"
[[master.txn]]
addr = 0x0
burst = \"INCR4\"
"
    ));
    let mut sim = HalfBus::new(t.clone(), Scope::Only(Domain::Sim)).unwrap();
    let mut acc = HalfBus::new(t, Scope::Only(Domain::Acc)).unwrap();
    lockstep(&mut sim, &mut acc);
    let local = sim.local_mask();
    for f in Field::ADDRESS_GROUP {
        assert!(local.contains(f), "{}", f.name());
    }
    assert!(local.contains(Field::Hbusreq));
    let remote = sim.remote_mask();
    for f in [Field::Hrdata, Field::Hready, Field::Hresp] {
        assert!(remote.contains(f), "{}", f.name());
    }
    assert!(!remote.contains(Field::Haddr));
}

#[test]
fn domain_without_components_drives_nothing() {
    let t = topo(&format!(
        "{ONE_SLAVE}\n[[slave]]\ndomain = \"sim\"\n[[master]]\ndomain = \"sim\"\n[[master.txn]]\naddr = 0x4\n"
    ));
    let mut sim = HalfBus::new(t.clone(), Scope::Only(Domain::Sim)).unwrap();
    let mut acc = HalfBus::new(t, Scope::Only(Domain::Acc)).unwrap();
    for _ in 0..4 {
        assert!(sim.drive_map().acc.is_empty());
        assert!(sim.remote_mask().is_empty());
        let before = acc.clone();
        let (out, _) = acc.step(&sim.outputs(), &sim.local_mask()).unwrap();
        assert!(out.eq_masked(&predpack::ahb::MsabsSnapshot::default(), &acc.drive_map().acc));
        assert_ne!(before.cycle(), acc.cycle());
        sim.step(&out, &predpack::ahb::FieldMask::empty()).unwrap();
    }
}

#[test]
fn split_halves_equal_monolithic() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/mixed.toml");
    let scn = Scenario::from_file(&path).unwrap();
    let mut mono = MonolithicBus::new(scn.topology.clone()).unwrap();
    let mut sim = HalfBus::new(scn.topology.clone(), Scope::Only(Domain::Sim)).unwrap();
    let mut acc = HalfBus::new(scn.topology.clone(), Scope::Only(Domain::Acc)).unwrap();
    for c in 0..scn.cycles {
        assert_eq!(lockstep(&mut sim, &mut acc), mono.step().unwrap(), "cycle {c}");
    }
    let mut images = sim.memory_images();
    images.extend(acc.memory_images());
    images.sort_by_key(|(i, _)| *i);
    assert_eq!(images, mono.bus().memory_images());
}
