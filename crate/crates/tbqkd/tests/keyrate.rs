use proptest::prelude::*;
use tbqkd::channel::ChannelParams;
use tbqkd::keyrate::*;

fn stats() -> impl Strategy<Value = TagStats> {
    (0.0f64..0.3, proptest::collection::vec((0.0f64..0.3, 0.0f64..0.5), 1..=4), 0.0f64..1.0, 0.0f64..0.5).prop_map(
        |(q0, tags, q_z, e_z)| TagStats {
            q_star_0: q0,
            tags: tags.into_iter().enumerate().map(|(k, (gain, phase_error))| Tag { m: k + 1, gain, phase_error }).collect(),
            q_z,
            e_z,
        },
    )
}

proptest! {
    #[test]
    fn reverse_minus_forward_is_the_vacuum_gain(s in stats(), f in 1.0f64..1.5) {
        let input = KeyRateInput { max_m: s.tags.len(), stats: s, f };
        let gap = key_rate_reverse(&input).raw - key_rate_forward(&input).raw;
        prop_assert!((gap - input.stats.q_star_0).abs() < 1e-15);
        prop_assert!(key_rate_forward(&input).raw <= key_rate_reverse(&input).raw);
    }

    #[test]
    fn more_tags_never_lower_the_rate(mu in 0.05f64..4.0, tau in 0.2f64..5.0, d in 0.0f64..40.0) {
        let ch = ChannelParams::ideal(d);
        let mut last = f64::NEG_INFINITY;
        for i in 1..=6 {
            let r = i_photon_key_rate(i, mu, tau, &ch).unwrap().rate.raw;
            prop_assert!(r >= last - 1e-15, "i={i}: {r} < {last}");
            last = r;
        }
    }

    #[test]
    fn ideal_rates_respect_plob(mu in 0.05f64..4.0, tau in 0.2f64..5.0, d in 0.5f64..40.0, i in 1usize..=4) {
        let ch = ChannelParams::ideal(d);
        let r = i_photon_key_rate(i, mu, tau, &ch).unwrap().rate.raw;
        prop_assert!(r <= plob_bound(ch.eta()).unwrap());
    }

    #[test]
    fn plob_tends_to_eta_over_ln2(eta in 1e-9f64..1e-6) {
        let b = plob_bound(eta).unwrap();
        prop_assert!((b / (eta / std::f64::consts::LN_2) - 1.0).abs() < 1e-5);
    }
}

#[test]
fn plob_at_20_km() {
    let eta = ChannelParams::ideal(20.0).eta();
    // -log2(1 - 10^-0.4) evaluated independently in Python.
    assert!((plob_bound(eta).unwrap() - 0.732_421_465_361_265_7).abs() < 1e-12);
    assert!(plob_bound(1.0).unwrap_err().is_config());
}

#[test]
fn single_photon_zero_km_error_rate() {
    let r = i_photon_key_rate(1, 0.356, 1.437, &ChannelParams::ideal(0.0)).unwrap();
    assert!((100.0 * r.stats.e_z - 30.95).abs() < 0.1);
    assert!(r.truncation_bound > 0.0 && r.truncation_bound < 0.06);
}
