use proptest::prelude::*;
use tbqkd::channel::*;
use tbqkd::specfun::{poisson, region_coefficients, VacuumFactor};
use tbqkd::yields::{observed_yield, Observable, SourceConfig};

fn pair() -> impl Strategy<Value = (f64, f64)> {
    (0.01f64..1.0, 0.0f64..0.05)
}

proptest! {
    #[test]
    fn composition_is_associative((a, b, c) in (pair(), pair(), pair())) {
        let left = compose_channels(compose_channels(a, b), c);
        let right = compose_channels(a, compose_channels(b, c));
        prop_assert!((left.0 - right.0).abs() < 1e-15);
        prop_assert!((left.1 - right.1).abs() < 1e-15);
    }

    #[test]
    fn z_statistics_are_probabilities(mu in 0.0f64..5.0, d in 0.0f64..60.0, xi in 0.0f64..0.02, tau in 0.05f64..5.0) {
        let ch = ChannelParams::practical(d, xi, 0.0);
        prop_assume!(xi == 0.0 || ch.eta() < UNIT_ETA);
        let z = z_gain_and_error(mu, ch.eta(), xi, tau).unwrap();
        prop_assert!((0.0..=1.0).contains(&z.q_z));
        prop_assert!((0.0..=0.5 + 1e-12).contains(&z.e_z));
    }

    #[test]
    fn vacuum_source_errs_half_the_time(d in 0.0f64..60.0, tau in 0.05f64..5.0) {
        let z = z_gain_and_error(0.0, ChannelParams::ideal(d).eta(), 0.0, tau).unwrap();
        prop_assert!((z.e_z - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lossless_z_source_is_poissonian(mu in 0.0f64..4.0) {
        let ch = ChannelParams::ideal(0.0);
        let y = observed_yield(SourceConfig::Z, Observable::OnePhoton, mu, &ch).unwrap();
        prop_assert!((y - poisson(mu, 1).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn tagged_quantities_are_probabilities(mu in 0.05f64..4.0, d in 1.0f64..50.0, xi in 0.0f64..0.01, tau in 0.2f64..4.0) {
        let ch = ChannelParams::practical(d, xi, 5f64.to_radians());
        let c = region_coefficients(tau, VacuumFactor::Physical).unwrap();
        let t = thermal_tags(mu, &ch, &c).unwrap();
        for v in [t.q11, t.q22] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((0.0..=1.0).contains(&t.e11) && (0.0..=1.0).contains(&t.e22));
    }

    #[test]
    fn misalignment_leaves_z_basis_alone(mu in 0.05f64..4.0, d in 0.0f64..40.0, delta in 0.0f64..45.0) {
        let a = ChannelParams::practical(d, 0.0, 0.0);
        let b = ChannelParams::practical(d, 0.0, delta.to_radians());
        for o in [Observable::P00, Observable::OnePhoton, Observable::P11] {
            let ya = observed_yield(SourceConfig::Z, o, mu, &a).unwrap();
            let yb = observed_yield(SourceConfig::Z, o, mu, &b).unwrap();
            prop_assert!((ya - yb).abs() < 1e-12);
        }
    }
}

#[test]
fn unit_transmittance_with_noise_injects_no_photons() {
    let ch = ChannelParams::practical(0.0, 1e-3, 0.0);
    ch.validate().unwrap();
    assert_eq!(ch.thermal_weights()[0], 1.0);
    assert!(ChannelParams::practical(0.0, -1e-3, 0.0).validate().unwrap_err().is_config());
}
