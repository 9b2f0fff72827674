use predpack::ahb::{pack_small, FieldMask, MsabsSnapshot};
use predpack::channel::*;
use predpack::engine::{run_conventional, run_optimistic, RunOptions, Scenario};
use predpack::sync::{queue_pair, LobEntry, Port};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

fn scenario(name: &str) -> Scenario {
    Scenario::from_file(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

#[test]
fn transfer_time_examples() {
    let cm = CostModel::default();
    assert!(close(transfer_time(&cm, Direction::S2A, 0), 12.2e-6));
    assert!(close(transfer_time(&cm, Direction::S2A, 100), 12.2e-6 + 100.0 * 49.95e-9));
    assert!(close(transfer_time(&cm, Direction::A2S, 1), 12.2e-6 + 75.73e-9));
}

#[test]
fn merging_k_packets_saves_k_minus_one_startups() {
    let cm = CostModel::default();
    for k in 1..6u64 {
        let parts: Vec<ChannelPacket> =
            (0..k).map(|i| ChannelPacket::new(PacketKind::ConvOut, Direction::S2A, vec![0; i as usize + 1])).collect();
        let merged = ChannelPacket::new(PacketKind::ConvOut, Direction::S2A, vec![0; (k * (k + 1) / 2) as usize]);
        let split = ChannelLedger::from_packets(&cm, &WordCharge::Packed, &parts);
        let one = ChannelLedger::from_packets(&cm, &WordCharge::Packed, [&merged]);
        assert!(close(split.time_s - one.time_s, (k - 1) as f64 * cm.startup_s), "k={k}");
        assert_eq!(split.raw_words, one.raw_words);
    }
}

#[test]
fn engine_ledgers_replay_exactly() {
    let mut scn = scenario("mixed.toml");
    for r in [
        run_conventional(&scn, &RunOptions::default()).unwrap(),
        run_optimistic(&scn, &RunOptions::default()).unwrap(),
        {
            scn.charge = WordCharge::Packed;
            run_optimistic(&scn, &RunOptions::default()).unwrap()
        },
    ] {
        let l = &r.ledger;
        assert_eq!(l.replay_time(&scn.cost), l.time_s);
        assert_eq!(l.accesses(), l.entries.len() as u64);
        let cum: Vec<f64> = l.entries.iter().map(|e| e.cumulative_s).collect();
        assert!(cum.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r.totals.channel, l.time_s);
    }
}

#[test]
fn queues_are_fifo_and_lossless() {
    let (mut a, mut b) = queue_pair();
    for i in 0..100u32 {
        a.send(ChannelPacket::new(PacketKind::ConvOut, Direction::S2A, vec![i]));
        if i % 3 == 0 {
            b.send(ChannelPacket::new(PacketKind::ConvIn, Direction::A2S, vec![i]));
        }
    }
    let got: Vec<u32> = std::iter::from_fn(|| b.try_recv()).map(|p| p.payload[0]).collect();
    assert_eq!(got, (0..100).collect::<Vec<_>>());
    let back: Vec<u32> = std::iter::from_fn(|| a.try_recv()).map(|p| p.payload[0]).collect();
    assert_eq!(back, (0..100).step_by(3).collect::<Vec<_>>());
}

fn random_entries(rng: &mut ChaCha8Rng, n: usize) -> Vec<LobEntry> {
    let mask = FieldMask::full(2, 1);
    (0..n)
        .map(|i| {
            let s = MsabsSnapshot { haddr: rng.gen(), hwdata: rng.gen(), hbusreq: rng.gen_range(0..4), ..Default::default() };
            LobEntry {
                cycle: rng.gen(),
                leader_outputs: pack_small(&s, &mask),
                prediction: (i + 1 < n).then(|| pack_small(&s, &FieldMask::empty().with_master(1))),
            }
        })
        .collect()
}

#[test]
fn flush_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in [1, 3, 64] {
        let entries = random_entries(&mut rng, n);
        let p = encode_lob_flush(&entries, Direction::A2S).unwrap();
        assert_eq!(p.entries as usize, n);
        let sizes: usize =
            entries.iter().map(|e| 3 + e.leader_outputs.len() + e.prediction.as_ref().map_or(0, |x| x.len())).sum();
        assert_eq!(p.payload.len(), sizes);
        assert_eq!(decode_lob_flush(&p).unwrap(), entries);
    }
}

#[test]
fn flushes_obey_the_final_entry_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mid = random_entries(&mut rng, 4);
    mid[1].prediction = None;
    assert!(matches!(encode_lob_flush(&mid, Direction::S2A), Err(ChannelError::MalformedFlush(_))));
    let mut last = random_entries(&mut rng, 4);
    last[3].prediction = last[0].prediction.clone();
    assert!(encode_lob_flush(&last, Direction::S2A).is_err());
    assert!(encode_lob_flush(&[], Direction::S2A).is_err());
}

#[test]
fn batching_cuts_accesses_on_640_cycles() {
    let scn = scenario("batching_640.toml");
    let conv = run_conventional(&scn, &RunOptions::default()).unwrap();
    let opt = run_optimistic(&scn, &RunOptions::default()).unwrap();
    assert_eq!(conv.ledger.accesses(), 1280);
    let bound = 2 * 640u64.div_ceil(64) + 4;
    assert!(opt.ledger.accesses() <= bound, "{} accesses", opt.ledger.accesses());
    assert!(conv.ledger.accesses() >= 40 * opt.ledger.accesses());
}
