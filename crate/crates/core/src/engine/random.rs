use super::Scenario;
use crate::ahb::{Hburst, Hsize};
use crate::fabric::{
    ArbiterConfig, DecoderMap, Domain, IrqConfig, MasterPlacement, MasterScript, Payload, Region, SidebandSignal,
    SlaveConfig, SlavePlacement, Topology, Transaction,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Size of each slave's decoder region; slave `i` sits at `i * REGION`.
const REGION: u32 = 0x1000;

fn domain(rng: &mut ChaCha8Rng) -> Domain {
    if rng.gen_bool(0.5) {
        Domain::Sim
    } else {
        Domain::Acc
    }
}

fn transaction(rng: &mut ChaCha8Rng, slaves: usize) -> Transaction {
    let burst = *Hburst::ALL.choose(rng).unwrap();
    let size = *Hsize::ALL.choose(rng).unwrap();
    let beats = burst.beats().unwrap_or_else(|| rng.gen_range(1..=8));
    let span = beats * size.bytes();
    // the region past the last slave decodes to the default slave
    let region = if rng.gen_bool(0.1) { slaves as u32 } else { rng.gen_range(0..slaves as u32) } * REGION;
    let offset = if burst.is_wrap() {
        rng.gen_range(0..REGION / size.bytes()) * size.bytes()
    } else {
        let block = rng.gen_range(0..REGION / 1024) * 1024;
        block + rng.gen_range(0..=(1024 - span) / size.bytes()) * size.bytes()
    };
    let mut t = if rng.gen_bool(0.5) {
        Transaction::write(region + offset, burst, size, Payload::Pattern(rng.gen()))
    } else {
        Transaction::read(region + offset, burst, size)
    };
    t.beats = beats;
    t.prot = rng.gen_range(0..16);
    t.gap = if rng.gen_bool(0.6) { 0 } else { rng.gen_range(1..4) };
    t
}

/// Random topology with 1-3 masters and 1-3 slaves placed at random in the
/// two domains, varied slave timing, an optional interrupt line and
/// scripts that touch every region, including unmapped addresses.
pub fn random_topology(seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_slaves = rng.gen_range(1..=3usize);
    let n_masters = rng.gen_range(1..=3usize);
    let irq = rng.gen_bool(0.5);
    let slaves = (0..n_slaves)
        .map(|i| SlavePlacement {
            domain: domain(&mut rng),
            config: SlaveConfig {
                mem_words: *[16, 64, 256].choose(&mut rng).unwrap(),
                fifo_depth: rng.gen_range(1..=4),
                service_words: rng.gen_range(1..=2),
                service_period: rng.gen_range(1..=3),
                wait_states: *[0, 0, 1, 2].choose(&mut rng).unwrap(),
                irq: (irq && i == 0).then(|| IrqConfig { signal: 0, threshold: rng.gen_range(1..=2) }),
                init_seed: rng.gen(),
            },
        })
        .collect();
    let masters = (0..n_masters)
        .map(|m| {
            let txns = (0..rng.gen_range(6..=20)).map(|_| transaction(&mut rng, n_slaves)).collect();
            MasterPlacement { domain: domain(&mut rng), script: MasterScript::new(m, txns).expect("generated script") }
        })
        .collect();
    let mut priority: Vec<usize> = (0..n_masters).collect();
    priority.shuffle(&mut rng);
    let regions = (0..n_slaves).map(|s| Region { base: s as u32 * REGION, size: REGION, slave: s }).collect();
    let topo = Topology {
        masters,
        slaves,
        decoder: DecoderMap::new(regions, n_slaves).expect("generated map"),
        arbiter: ArbiterConfig { priority, default_master: rng.gen_range(0..n_masters) },
        sideband: if irq { vec![SidebandSignal { name: "irq".into(), slave: 0 }] } else { Vec::new() },
    };
    topo.validate().expect("generated topology");
    topo
}

/// [`random_topology`] wrapped in a scenario with a random LOB depth.
pub fn random_scenario(seed: u64, cycles: u64) -> Scenario {
    let mut scn = Scenario::with_topology(Arc::new(random_topology(seed)), cycles);
    scn.name = format!("random-{seed}");
    scn.depth = *[1, 2, 5, 8, 16, 64].choose(&mut ChaCha8Rng::seed_from_u64(!seed)).unwrap();
    scn.noise.seed = seed;
    scn
}
