use tbqkd::channel::ChannelParams;
use tbqkd::decoy::{ProtocolParams, DEFAULT_CUTOFF};
use tbqkd::sim::*;

fn model() -> RoundModel {
    RoundModel {
        channel: ChannelParams::ideal(10.0),
        protocol: ProtocolParams { mu: 0.924, nu1: 2.993e-2, nu2: 1e-4, tau: 2.457, max_m: 2, cutoff_nc: DEFAULT_CUTOFF },
        settings: SettingProbs::default(),
    }
}

fn run(n: u64, seed: u64) -> Vec<u8> {
    let mut buf = Vec::new();
    simulate_protocol_rounds(&model(), n, seed, &mut buf).unwrap();
    buf
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let n = 150_000;
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run(n, 5));
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| run(n, 5));
    assert_eq!(one, three);
}

#[test]
fn records_round_trip_through_csv() {
    let buf = run(2_000, 9);
    let recs = read_round_records(&buf[..]).unwrap();
    assert_eq!(recs.len(), 2_000);
    let mut again = Vec::new();
    let mut w = csv::Writer::from_writer(&mut again);
    w.write_record(ROUND_HEADER).unwrap();
    let mus = model().protocol.intensities();
    for r in &recs {
        w.write_record(round_row(r, &mus)).unwrap();
    }
    drop(w);
    assert_eq!(again, buf);
    assert!(recs.iter().enumerate().all(|(k, r)| r.round == k as u64));
}

#[test]
fn key_bits_follow_the_threshold() {
    let tau = model().protocol.tau;
    for r in read_round_records(&run(20_000, 1)[..]).unwrap() {
        if r.bob_key {
            assert_eq!(r.bob_bit, decode(r.q1, r.q2, tau));
        } else {
            assert_eq!(r.bob_bit, None);
        }
    }
}
