use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tbqkd::channel::{coherent_output_fock_element, ChannelParams};
use tbqkd::specfun::poisson;
use tbqkd::tomo::*;
use tbqkd::yields::{Observable, SourceConfig};

fn within_3sigma(est: f64, se: f64, truth: f64) -> bool {
    (est - truth).abs() <= 3.0 * se
}

fn single_mode_mean(mode: GaussianMode, spec: KernelSpec, n: usize, seed: u64) -> (f64, f64) {
    let l = lattice(spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Moments::default();
    for _ in 0..n {
        let phi = rng.random::<f64>() * std::f64::consts::PI;
        let q = sample_quadrature(&mode, phi, &mut rng);
        m.push(l.value(q, phi).re);
    }
    (m.mean, m.std_error())
}

#[test]
fn vacuum_kernel_is_unbiased() {
    let (est, se) = single_mode_mean(GaussianMode::vacuum(), KernelSpec::new(0, 0, 1.0).unwrap(), 1_000_000, 11);
    assert!(within_3sigma(est, se, 1.0), "{est} +- {se}");
}

#[test]
fn coherent_one_photon_probability() {
    let alpha = Complex64::new(0.5f64.sqrt(), 0.0);
    let (est, se) = single_mode_mean(GaussianMode::coherent(alpha), KernelSpec::new(1, 0, 1.0).unwrap(), 1_000_000, 12);
    let truth = poisson(0.5, 1).unwrap();
    assert!((truth - 0.3033).abs() < 1e-4);
    assert!(within_3sigma(est, se, truth), "{est} +- {se} vs {truth}");
}

#[test]
fn lossy_detector_kernel_corrects_for_efficiency() {
    let alpha = Complex64::new(0.6, 0.3);
    let eta = 0.8;
    let mode = GaussianMode::coherent(alpha).detected(eta);
    let (est, se) = single_mode_mean(mode, KernelSpec::new(1, 0, eta).unwrap(), 400_000, 13);
    let truth = GaussianMode::coherent(alpha).element(1, 1).re;
    assert!(within_3sigma(est, se, truth), "{est} +- {se} vs {truth}");
}

#[test]
fn two_mode_vacuum_projector() {
    let s = TwoModeState::Product([GaussianMode::vacuum(), GaussianMode::vacuum()]);
    let recs = sample_records(&s, 200_000, 3);
    let spec = KernelSpec::new(0, 0, 1.0).unwrap();
    let (est, se) = estimate_two_mode(&recs, spec, spec).unwrap();
    assert!(within_3sigma(est.re, se.re, 1.0), "{est} +- {se}");
    assert_eq!(est.im, 0.0);
}

#[test]
fn two_mode_coherences_match_closed_forms() {
    let (a, b) = (Complex64::new(0.7, -0.2), Complex64::new(-0.3, 0.5));
    let s = TwoModeState::Product([GaussianMode::coherent(a), GaussianMode::coherent(b)]);
    let recs = sample_records(&s, 400_000, 4);
    let spec = KernelSpec::new(0, 1, 1.0).unwrap();
    // Estimates <1|rho_a|0> <1|rho_b|0>.
    let truth = coherent_output_fock_element(a, 0.0, 1, 0).unwrap() * coherent_output_fock_element(b, 0.0, 1, 0).unwrap();
    let (est, se) = estimate_two_mode(&recs, spec, spec).unwrap();
    assert!(within_3sigma(est.re, se.re, truth.re), "{est} +- {se} vs {truth}");
    assert!(within_3sigma(est.im, se.im, truth.im), "{est} +- {se} vs {truth}");
}

#[test]
fn cat_projector_recovers_single_photon_weight() {
    let mu = 0.6;
    let s = TwoModeState::source(SourceConfig::Phi0, mu, &ChannelParams::ideal(0.0));
    let recs = sample_records(&s, 400_000, 5);
    let est = estimate_observables(&recs, &[Observable::Psi1Plus, Observable::Psi1Minus], 1.0).unwrap();
    let truth = poisson(mu, 1).unwrap();
    assert!(within_3sigma(est[0].value, est[0].std_error, truth), "{:?} vs {truth}", est[0]);
    assert!(within_3sigma(est[1].value, est[1].std_error, 0.0), "{:?}", est[1]);
}

#[test]
fn kernel_bound_dominates_probes() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (n, d, eta) in [(0, 0, 1.0), (1, 0, 0.9), (0, 1, 0.9), (2, 0, 0.9), (0, 2, 0.9), (2, 2, 0.9)] {
        let spec = KernelSpec::new(n, d, eta).unwrap();
        let r = kernel_bound(&spec).unwrap();
        assert!(r.is_finite());
        let probes = if (n, d) == (0, 0) { 10_000 } else { 1_700 };
        for _ in 0..probes {
            let q = rng.random_range(-40.0..40.0);
            let phi = rng.random_range(0.0..std::f64::consts::PI);
            let v = kernel_value(&spec, q, phi).unwrap().norm();
            assert!(v <= r, "({n},{d},{eta}) q={q}: |R|={v} > {r}");
        }
    }
}

#[test]
fn kernel_bound_grows_toward_half_efficiency() {
    let r: Vec<f64> = [0.6, 0.55, 0.51].iter().map(|&e| kernel_bound(&KernelSpec::new(0, 0, e).unwrap()).unwrap()).collect();
    assert!(r[0] < r[1] && r[1] < r[2], "{r:?}");
    // Peak of the vacuum kernel is 1/gamma at q = 0.
    assert!((r[2] - 51.0).abs() < 1e-3 * 51.0);
}

#[test]
fn sampler_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 1_000_000;
    let vac = GaussianMode::vacuum();
    let mut m = Moments::default();
    for _ in 0..n {
        m.push(sample_quadrature(&vac, 0.3, &mut rng));
    }
    assert!(within_3sigma(m.mean, m.std_error(), 0.0));
    let var = m.m2 / (n - 1) as f64;
    // Sample variance of a normal has standard error sqrt(2/n).
    assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "{var}");
    let one = GaussianMode::coherent(Complex64::new(1.0, 0.0));
    let mut m = Moments::default();
    for _ in 0..n {
        m.push(sample_quadrature(&one, 0.0, &mut rng));
    }
    assert!(within_3sigma(m.mean, m.std_error(), 2.0));
    let a: Vec<f64> = (0..5).map(|_| sample_quadrature(&one, 0.0, &mut ChaCha8Rng::seed_from_u64(5))).collect();
    assert!(a.iter().all(|&x| x == a[0]));
}

#[test]
fn standard_error_scales_as_inverse_root_n() {
    let s = TwoModeState::Product([GaussianMode::coherent(Complex64::new(0.5, 0.1)), GaussianMode::vacuum()]);
    let k = ObservableKernels::new(&[Observable::P10], 1.0).unwrap();
    let se: Vec<f64> = [10_000, 100_000, 1_000_000].iter().map(|&n| simulate_moments(&s, &k, n, 21)[0].std_error()).collect();
    for w in se.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.2, "{se:?}");
    }
}

#[test]
fn streaming_and_batch_estimates_agree() {
    let s = TwoModeState::source(SourceConfig::Phi90, 0.4, &ChannelParams::practical(5.0, 1e-3, 0.05));
    let obs = Observable::PROJECTORS;
    let k = ObservableKernels::new(&obs, 1.0).unwrap();
    let n = 150_000;
    let streamed = simulate_moments(&s, &k, n, 8);
    let batch = estimate_observables(&sample_records(&s, n, 8), &obs, 1.0).unwrap();
    for (a, b) in streamed.iter().zip(&batch) {
        assert!((a.mean - b.value).abs() < 1e-12 && (a.std_error() / b.std_error - 1.0).abs() < 1e-9);
    }
}
