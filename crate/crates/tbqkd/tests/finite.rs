use proptest::prelude::*;
use tbqkd::channel::ChannelParams;
use tbqkd::decoy::ProtocolParams;
use tbqkd::finite::*;
use tbqkd::keyrate::{KeyRateInput, Tag, TagStats};
use tbqkd::sim::{RoundModel, SettingProbs};
use tbqkd::yields::{yield_curve, SourceConfig};

fn model(settings: SettingProbs) -> RoundModel {
    RoundModel {
        channel: ChannelParams::practical(10.0, 1e-3, 5f64.to_radians()),
        protocol: ProtocolParams { mu: 0.924, nu1: 2.993e-2, nu2: 1e-4, tau: 2.457, max_m: 2, cutoff_nc: 10 },
        settings,
    }
}

#[test]
fn q11_bounds_cover_truth_at_1e8() {
    // Sparse tomography keeps each trial near 1e6 sampled rounds.
    let m = model(SettingProbs { intensity: [0.25; 4], alice_z: 0.5, bob_key: 0.99 });
    let kernels = series_kernels(1.0).unwrap();
    let truth = true_tagged(&m).unwrap().q11.lower;
    let mut covered = 0;
    for seed in 0..100 {
        let (c, v) = simulate_counters(&m, 100_000_000, seed, &kernels).unwrap();
        let b = estimate_Q11_finite(&c, &m, &FiniteOptions::default()).unwrap();
        let nzz = c.key_rounds as f64;
        if b.contains(truth * nzz, 0.0) && b.contains(v.q11 as f64, 0.0) {
            covered += 1;
        }
    }
    assert!(covered >= 99, "{covered}/100");
}

#[test]
fn fewer_rounds_give_wider_bounds() {
    let m = model(SettingProbs::default());
    let kernels = series_kernels(1.0).unwrap();
    let width = |n| {
        let (c, _) = simulate_counters(&m, n, 3, &kernels).unwrap();
        finite_tagged_bounds(&c, &m, &FiniteOptions::default()).unwrap().per_key_round.q11.width()
    };
    let (small, large) = (width(10_000), width(100_000_000));
    assert!(small > large, "{small} vs {large}");
}

#[test]
fn counters_cover_conditional_sums_at_nominal_epsilon() {
    // One-sided level eps per bound; 100 trials x 170 one-sided bounds.
    let m = model(SettingProbs::default());
    let kernels = series_kernels(1.0).unwrap();
    let eps = 0.01;
    let n = 1_000_000u64;
    let t = true_tagged(&m).unwrap();
    let mut misses = 0u32;
    for seed in 100..200 {
        let (c, v) = simulate_counters(&m, n, seed, &kernels).unwrap();
        for &(config, obs) in &SERIES {
            let d = azuma_deviation(&AzumaQuery { n, c: 2.0 * counter_kernel_bound(obs, 1.0).unwrap(), epsilon: eps }).unwrap();
            for (a, &mu) in m.protocol.intensities().iter().enumerate() {
                let expect = m.settings.test_prob(a, config) * n as f64 * yield_curve(config, obs, &m.channel).unwrap().eval(mu);
                let s = c.sum(a, config, obs);
                misses += (s - d > expect) as u32 + (s + d < expect) as u32;
            }
        }
        let d1 = azuma_deviation(&AzumaQuery { n, c: 1.0, epsilon: eps }).unwrap();
        let k = m.settings.key_prob() * n as f64;
        for (count, q) in [
            (v.q_star_0, t.q_star_0.lower),
            (v.q11, t.q11.lower),
            (v.q11_e11, t.q11_e11.lower),
            (v.q22, t.q22.lower),
            (v.q22_e22, t.q22_e22.lower),
        ] {
            let (x, e) = (count as f64, k * q);
            misses += (x - d1 > e) as u32 + (x + d1 < e) as u32;
        }
    }
    // 99.9% quantile of Binomial(17000, 0.01) is below 220.
    assert!(misses < 220, "{misses}");
}

#[test]
fn record_fold_matches_round_counts() {
    let m = model(SettingProbs::default());
    let mut recs = Vec::new();
    m.for_each_round(200_000, 9, |r| {
        recs.push(*r);
        Ok(())
    })
    .unwrap();
    let c = Counters::fold(&recs, 1.0).unwrap();
    assert_eq!(c.rounds, 200_000);
    let keys = recs.iter().filter(|r| r.bob_key && r.intensity_index == 0 && r.config == SourceConfig::Z).count() as u64;
    assert_eq!(c.key_rounds, keys);
    let tests: u64 = c.tests.iter().flatten().sum();
    assert_eq!(tests, recs.iter().filter(|r| !r.bob_key).count() as u64);
    let e = finite_tagged_bounds(&c, &m, &FiniteOptions::default()).unwrap();
    assert!(e.per_key_round.q11.lower <= e.per_key_round.q11.upper);
    assert!((e.epsilon_total - 1e-10).abs() < 1e-22);
}

fn input(q0: f64, g1: f64, e1: f64, g2: f64, e2: f64, qz: f64, ez: f64) -> KeyRateInput {
    KeyRateInput {
        stats: TagStats {
            q_star_0: q0,
            tags: vec![Tag { m: 1, gain: g1, phase_error: e1 }, Tag { m: 2, gain: g2, phase_error: e2 }],
            q_z: qz,
            e_z: ez,
        },
        f: 1.16,
        max_m: 2,
    }
}

proptest! {
    #[test]
    fn azuma_width_scales_with_root_n_log(n in 1u64..1_000_000_000_000, eps in 1e-15f64..0.5, c in 0.1f64..50.0) {
        let d = azuma_deviation(&AzumaQuery { n, c, epsilon: eps }).unwrap();
        let ratio = d / (c * ((1.0 / eps).ln() * n as f64).sqrt());
        prop_assert!((ratio / std::f64::consts::FRAC_1_SQRT_2 - 1.0).abs() < 0.1);
    }

    #[test]
    fn key_length_is_monotone(
        q0 in 0.0f64..0.2, g1 in 0.0f64..0.2, e1 in 0.0f64..1.0, g2 in 0.0f64..0.2, e2 in 0.0f64..1.0,
        qz in 0.0f64..0.5, ez in 0.0f64..0.5, bump in 1e-6f64..0.1, nzz in 1u64..1_000_000_000_000,
    ) {
        let eps = [1e-10, 1e-10];
        let base = finite_key_length(nzz, &input(q0, g1, e1, g2, e2, qz, ez), &eps).unwrap();
        let up = |i: KeyRateInput| finite_key_length(nzz, &i, &eps).unwrap();
        let tol = 1e-9 * base.abs().max(1.0);
        prop_assert!(up(input(q0 + bump, g1, e1, g2, e2, qz, ez)) >= base - tol);
        prop_assert!(up(input(q0, g1 + bump, e1, g2, e2, qz, ez)) >= base - tol);
        prop_assert!(up(input(q0, g1, e1, g2 + bump, e2, qz, ez)) >= base - tol);
        prop_assert!(up(input(q0, g1, (e1 + bump).min(1.0), g2, e2, qz, ez)) <= base + tol);
        prop_assert!(up(input(q0, g1, e1, g2, (e2 + bump).min(1.0), qz, ez)) <= base + tol);
    }
}
