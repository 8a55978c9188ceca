use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sltvi::basedist::{BaseDist, BaseKind, GenGammaBase, GenGammaParams};
use sltvi::flow::{FlowParams, FlowSpec};
use sltvi::quadrature::{integrate, integrate_2d};
use sltvi::special::{b_normalizer, g_moment, reg_lower_gamma};
use sltvi::train_eval::{mvfe, train, Objective, TrainConfig};
use sltvi::triplets::{Triplet, TripletKind};

#[test]
fn incomplete_gamma_agrees_with_statrs() {
    for &a in &[0.2, 0.7, 1.0, 2.5, 9.0, 30.0] {
        for &x in &[0.05, 0.5, 1.0, 3.0, 10.0, 40.0] {
            let ours = reg_lower_gamma(a, x).unwrap();
            let theirs = statrs::function::gamma::gamma_lr(a, x);
            assert!((ours - theirs).abs() <= 1e-12 + 1e-10 * theirs, "a={a} x={x}");
        }
    }
}

#[test]
fn normalizer_and_moment_agree_with_direct_quadrature() {
    // exponents high enough that the integrand is smooth on [0, 1]
    for &(l, k, b) in &[(1.0, 1.0, 1.0), (2.0, 0.5, 3.0), (1.5, 2.0, 40.0), (3.0, 1.0, 0.2)] {
        let f = |x: f64| x.powf(2.0 * k * l - 1.0) * (-b * x.powf(2.0 * k)).exp();
        let z = integrate(f, 0.0, 1.0, 0.0, 1e-13, 4000).unwrap().value;
        let m = integrate(|x| x.powf(2.0 * k) * f(x), 0.0, 1.0, 0.0, 1e-13, 4000)
            .unwrap()
            .value
            / z;
        assert!((b_normalizer(l, k, b).unwrap() / z - 1.0).abs() < 1e-10);
        assert!((g_moment(l, b).unwrap() / m - 1.0).abs() < 1e-10);
    }
}

#[test]
fn flow_density_integrates_to_one() {
    let spec = FlowSpec::new(2, 2, 4).unwrap();
    let mut theta = FlowParams::init(spec, 11).theta;
    for (i, t) in theta.iter_mut().enumerate() {
        *t += 0.15 * ((i as f64) * 0.7).sin();
    }
    let flow = FlowParams::from_theta(spec, theta, 11).unwrap();
    let base = BaseKind::Gaussian.build(2, 1).unwrap();
    let density = |w0: f64, w1: f64| {
        let xi = flow.inverse(&[w0, w1]).unwrap();
        let (_, ld) = flow.forward(&xi).unwrap();
        (base.log_density(&xi).unwrap() - ld).exp()
    };
    let r = integrate_2d(density, (-10.0, 10.0), (-10.0, 10.0), 1e-7, 1e-6, 20_000).unwrap();
    assert!((r.value - 1.0).abs() < 1e-5, "{}", r.value);
}

#[test]
fn gengamma_density_pushes_forward_through_flow() {
    // E_q[w] by sampling against E_{q0}[T(ξ)] by quadrature over the base
    let spec = FlowSpec::new(2, 1, 3).unwrap();
    let mut theta = FlowParams::init(spec, 2).theta;
    for (i, t) in theta.iter_mut().enumerate() {
        *t += 0.2 * ((i as f64) * 1.3).cos();
    }
    let flow = FlowParams::from_theta(spec, theta, 2).unwrap();
    let base = GenGammaBase::new(GenGammaParams::new(vec![1.0, 1.5], vec![1.0, 1.0], vec![2.0, 1.0]).unwrap()).unwrap();
    let quad = integrate_2d(
        |a, b| {
            let ld = base.log_density(&[a, b]).unwrap();
            if ld.is_finite() {
                flow.forward(&[a, b]).unwrap().0[0] * ld.exp()
            } else {
                0.0
            }
        },
        (0.0, 1.0),
        (0.0, 1.0),
        1e-10,
        1e-8,
        4000,
    )
    .unwrap()
    .value;
    let dist = BaseDist::GenGamma(base);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vals: Vec<f64> = dist
        .sample(&mut rng, 40_000)
        .unwrap()
        .iter()
        .map(|s| flow.forward(&s.xi).unwrap().0[0])
        .collect();
    let (m, se) = sltvi::train_eval::mean_and_se(&vals);
    assert!((m - quad).abs() < 4.0 * se, "mc {m} ± {se} vs quad {quad}");
}

#[test]
fn mvfe_is_negative_elbo_minus_entropy_term() {
    assert_eq!(mvfe(-2500.0, 1000, 2.0), 2500.0 - 2000.0);
}

#[test]
fn training_improves_the_elbo() {
    let t = Triplet::new(TripletKind::TanhZeroMean, 2, 0).unwrap();
    let data = t.generate_data(200, 1).unwrap();
    let base = BaseKind::GenGamma.build(t.dim_w(), 200).unwrap();
    let spec = FlowSpec::new(t.dim_w(), 1, 4).unwrap();
    let obj = Objective::new(&t, &data, &base, spec).unwrap();
    let cfg = TrainConfig {
        epochs: 300,
        trace_every: 50,
        ..TrainConfig::default()
    };
    let out = train(&obj, &cfg, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (before, se0) = obj.elbo_mc(&FlowParams::init(spec, 9), 2000, &mut rng).unwrap();
    let (after, se1) = obj.elbo_mc(&out.params, 2000, &mut rng).unwrap();
    assert!(after > before + 3.0 * (se0 + se1), "before {before} after {after}");
    assert!(out.trace.len() >= 6);
}
