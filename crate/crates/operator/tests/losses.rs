use std::f64::consts::PI;

use mbdno_core::dataset::{
    compute_weight_factors, generate_dataset, perturbed_residual_max, Dataset, GenerationConfig, NormStats,
    ParamSampler,
};
use mbdno_core::integrate::IntegratorConfig;
use mbdno_core::system::vehicle_equations;
use mbdno_core::{ContactTerm, EquationSet, HertzContact, PsdModel, VtcdParams};
use mbdno_operator::encode::encode_target;
use mbdno_operator::losses::{
    data_loss, direct_derivative_loss, numerical_derivative, ode_residual_loss, ode_residual_terms, pair_loss,
    LossConfig, LossMode, PairTarget, TRIM,
};
use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_dataset() -> Dataset {
    let sampler = ParamSampler::new(VtcdParams::nominal(), 0.8, 1.2).unwrap();
    let gen = GenerationConfig {
        n_train: 2,
        n_val: 1,
        master_seed: 42,
        ..Default::default()
    };
    generate_dataset(&sampler, &PsdModel::placeholder(), &IntegratorConfig::default(), &gen).unwrap()
}

fn scales(s: &mbdno_core::dataset::ChannelStats) -> Vec<f64> {
    (0..s.len()).map(|c| s.scale(c)).collect()
}

#[test]
fn derivative_of_constant_and_linear_series_is_exact() {
    let dt = 0.01;
    let c = Array2::from_elem((2, 9), 3.5);
    assert!(numerical_derivative(c.view(), dt, 1).unwrap().iter().all(|v| *v == 0.0));
    assert!(numerical_derivative(c.view(), dt, 2).unwrap().iter().all(|v| *v == 0.0));
    let lin = Array2::from_shape_fn((1, 9), |(_, i)| -2.0 * i as f64 * dt);
    let d1 = numerical_derivative(lin.view(), dt, 1).unwrap();
    let d2 = numerical_derivative(lin.view(), dt, 2).unwrap();
    assert!(d1.iter().all(|v| (v + 2.0).abs() < 1e-12), "{d1:?}");
    assert!(d2.iter().all(|v| v.abs() < 1e-9), "{d2:?}");
    assert!(numerical_derivative(c.slice(s![.., ..4]), dt, 1).is_err());
}

#[test]
fn derivative_of_sinusoid_matches_analytic() {
    let dt = 1e-3;
    let n = 1000;
    let w = 2.0 * PI * 5.0;
    let x = Array2::from_shape_fn((1, n), |(_, i)| (w * i as f64 * dt).sin());
    let d1 = numerical_derivative(x.view(), dt, 1).unwrap();
    for i in 1..n - 1 {
        let exact = w * (w * i as f64 * dt).cos();
        assert!((d1[(0, i)] - exact).abs() <= 1e-3 * w, "{i}: {} vs {exact}", d1[(0, i)]);
    }
}

#[test]
fn data_loss_values() {
    let dt = 1e-3;
    let n = 501;
    let truth = Array2::from_shape_fn((1, n), |(_, i)| (i as f64 * 0.01).sin());
    assert_eq!(data_loss(truth.view(), truth.view(), dt).unwrap().value, 0.0);
    let c = 0.3;
    let shifted = &truth + c;
    let window = (n - 1) as f64 * dt;
    let l = data_loss(shifted.view(), truth.view(), dt).unwrap().value;
    assert!((l - c * c * window).abs() < 1e-14, "{l}");
    assert!(data_loss(truth.view(), truth.slice(s![.., ..10]), dt).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stencils_are_exact_on_quadratics(
        a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, n in 5usize..60, dt in 1e-3f64..0.1,
    ) {
        // Every stencil, one-sided ends included, is exact to degree two.
        let series = Array2::from_shape_fn((1, n), |(_, i)| {
            let t = i as f64 * dt;
            a + b * t + c * t * t
        });
        let peak = series.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let d1 = numerical_derivative(series.view(), dt, 1).unwrap();
        let d2 = numerical_derivative(series.view(), dt, 2).unwrap();
        for i in 0..n {
            let t = i as f64 * dt;
            prop_assert!((d1[[0, i]] - (b + 2.0 * c * t)).abs() <= 64.0 * f64::EPSILON * peak / dt);
            prop_assert!((d2[[0, i]] - 2.0 * c).abs() <= 64.0 * f64::EPSILON * peak / (dt * dt));
        }
    }

    #[test]
    fn data_loss_matches_naive_sum(seed in any::<u64>(), nch in 1usize..5, n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Array2::from_shape_fn((nch, n), |_| rng.random_range(-1.0_f64..1.0));
        let t = Array2::from_shape_fn((nch, n), |_| rng.random_range(-1.0_f64..1.0));
        let dt = 0.02;
        let mut naive = 0.0;
        for c in 0..nch {
            let mut integral = 0.0;
            for i in 0..n - 1 {
                let a = (p[(c, i)] - t[(c, i)]).powi(2);
                let b = (p[(c, i + 1)] - t[(c, i + 1)]).powi(2);
                integral += 0.5 * dt * (a + b);
            }
            naive += integral / nch as f64;
        }
        let l = data_loss(p.view(), t.view(), dt).unwrap().value;
        prop_assert!((l - naive).abs() < 1e-12);
    }

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((2, 20), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((2, 20), |_| rng.random_range(-1.0..1.0));
        prop_assert!(data_loss(x.view(), y.view(), 0.1).unwrap().value >= 0.0);
        let l = direct_derivative_loss(x.view(), y.view(), y.view(), 0.1, &[1.0, 2.0], &[3.0, 4.0]).unwrap();
        prop_assert!(l.value >= 0.0);
        let eqs = toy_equations(20, 0.1);
        let e = Array2::zeros((1, 20));
        prop_assert!(ode_residual_loss(x.view(), &eqs, e.view(), 0.1, None, 1.0).unwrap().value >= 0.0);
    }
}

/// Two coupled oscillators whose second equation is scaled by 10⁶, forced
/// so that `x1 = sin 2πt`, `x2 = 0.5 cos 3πt` solve them exactly.
fn toy_equations(n: usize, dt: f64) -> EquationSet {
    let scale = [1.0, 1e6];
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, scale[1]]);
    let c = DMatrix::from_row_slice(2, 2, &[0.4, -0.1, -0.1 * scale[1], 0.3 * scale[1]]);
    let k = DMatrix::from_row_slice(2, 2, &[50.0, -10.0, -10.0 * scale[1], 80.0 * scale[1]]);
    let (x, v, a) = toy_truth(n, dt);
    let ext = Array2::from_shape_fn((2, n), |(i, t)| {
        (0..2)
            .map(|j| m[(i, j)] * a[(j, t)] + c[(i, j)] * v[(j, t)] + k[(i, j)] * x[(j, t)])
            .sum::<f64>()
    });
    EquationSet {
        mass: m,
        damping: c,
        stiffness: k,
        load: DVector::zeros(2),
        external: Some(ext),
        contacts: vec![],
    }
}

fn toy_truth(n: usize, dt: f64) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (w1, w2) = (2.0 * PI, 3.0 * PI);
    let t = |i: usize| i as f64 * dt;
    let x = Array2::from_shape_fn((2, n), |(j, i)| if j == 0 { (w1 * t(i)).sin() } else { 0.5 * (w2 * t(i)).cos() });
    let v = Array2::from_shape_fn((2, n), |(j, i)| {
        if j == 0 { w1 * (w1 * t(i)).cos() } else { -0.5 * w2 * (w2 * t(i)).sin() }
    });
    let a = Array2::from_shape_fn((2, n), |(j, i)| {
        if j == 0 { -w1 * w1 * (w1 * t(i)).sin() } else { -0.5 * w2 * w2 * (w2 * t(i)).cos() }
    });
    (x, v, a)
}

fn grad_norm(g: &Array2<f64>) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn weight_factors_equalize_equation_gradients() {
    let (n, dt) = (400, 2.5e-3);
    let eqs = toy_equations(n, dt);
    let (x, v, a) = toy_truth(n, dt);
    let exc = Array2::zeros((0, n));
    // a smooth, imperfect prediction: 5% amplitude error plus a slow drift
    let pred = Array2::from_shape_fn((2, n), |(j, i)| 1.05 * x[(j, i)] + 0.02 * (1.0 + j as f64) * (i as f64 * dt));
    let phi = perturbed_residual_max(&eqs, &x, &v, &a, &exc, 0.02, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();

    let spread = |phi: Option<&[f64]>| {
        let terms = ode_residual_terms(pred.view(), &eqs, exc.view(), dt, phi, 1.0).unwrap();
        let norms: Vec<f64> = terms.iter().map(|t| grad_norm(&t.grad)).collect();
        norms.iter().cloned().fold(0.0, f64::max) / norms.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let plain = spread(None);
    let weighted = spread(Some(&phi));
    assert!(plain >= 1e5, "plain spread {plain}");
    assert!(weighted <= 10.0, "weighted spread {weighted}");
    assert!(plain / weighted >= 100.0);

    // the per-equation terms add up to the single-pass loss
    let total = ode_residual_loss(pred.view(), &eqs, exc.view(), dt, Some(&phi), 1.0).unwrap();
    let terms = ode_residual_terms(pred.view(), &eqs, exc.view(), dt, Some(&phi), 1.0).unwrap();
    let sum: f64 = terms.iter().map(|t| t.value).sum();
    assert!((sum - total.value).abs() < 1e-12 * total.value);
    let mut gsum = Array2::zeros((2, n));
    for t in &terms {
        gsum += &t.grad;
    }
    assert!(grad_norm(&(&gsum - &total.grad)) < 1e-12 * grad_norm(&total.grad));
}

#[test]
fn uniform_weights_scale_the_plain_loss() {
    let (n, dt) = (200, 5e-3);
    let eqs = toy_equations(n, dt);
    let (x, _, _) = toy_truth(n, dt);
    let pred = &x * 0.9;
    let exc = Array2::zeros((0, n));
    let plain = ode_residual_loss(pred.view(), &eqs, exc.view(), dt, None, 1.0).unwrap().value;
    let (phi, eta) = (7.0, 3.0);
    let w = ode_residual_loss(pred.view(), &eqs, exc.view(), dt, Some(&[phi, phi]), eta).unwrap().value;
    assert!((w - plain * eta / (phi * phi)).abs() < 1e-12 * w);
    assert!(ode_residual_loss(pred.view(), &eqs, exc.view(), dt, Some(&[1.0]), 1.0).is_err());
}

/// Central differences of a scalar loss over every element of `x`.
fn fd_gradient(x: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    let mut w = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let x0 = x[(r, c)];
        w[(r, c)] = x0 + h;
        let up = f(&w);
        w[(r, c)] = x0 - h;
        let down = f(&w);
        w[(r, c)] = x0;
        g[(r, c)] = (up - down) / (2.0 * h);
    }
    g
}

fn rel_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    (a - b).iter().fold(0.0_f64, |m, v| m.max(v.abs())) / scale
}

#[test]
fn analytic_loss_gradients_match_finite_differences() {
    let (n, dt) = (12, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = Array2::from_shape_fn((3, n), |_| rng.random_range(-1.0..1.0));
    let v = Array2::from_shape_fn((3, n), |_| rng.random_range(-1.0..1.0));
    let a = Array2::from_shape_fn((3, n), |_| rng.random_range(-1.0..1.0));

    let d = |p: &Array2<f64>| direct_derivative_loss(p.view(), v.view(), a.view(), dt, &[0.5, 1.0, 2.0], &[3.0, 1.0, 9.0]);
    let fd = fd_gradient(&x, 1e-6, |p| d(p).unwrap().value);
    assert!(rel_diff(&d(&x).unwrap().grad, &fd) < 1e-6);

    // equation set with a contact term so the nonlinear branch is exercised;
    // compressions stay clear of the δ = 0 kink
    let law = HertzContact { constant: 0.5, exponent: 1.5 };
    let eqs = EquationSet {
        mass: DMatrix::from_fn(2, 3, |i, j| if i == j { 2.0 + i as f64 } else { 0.0 }),
        damping: DMatrix::from_fn(2, 3, |i, j| 0.1 * (i + 2 * j) as f64),
        stiffness: DMatrix::from_fn(2, 3, |i, j| if i == j { 5.0 } else { -1.0 }),
        load: DVector::from_vec(vec![1.0, 2.0]),
        external: None,
        contacts: vec![ContactTerm { equation: 1, wheel_channel: 1, rail_channel: 2, excitation: 0, gain: 2.0, law }],
    };
    let xc = Array2::from_shape_fn((3, n), |(c, t)| match c {
        1 => 2.0 + 0.3 * (t as f64).sin(),
        2 => -0.2 * (t as f64 * 0.7).cos(),
        _ => x[(0, t)],
    });
    let exc = Array2::from_shape_fn((1, n), |(_, t)| 0.1 * (t as f64 * 1.3).sin());
    for phi in [None, Some(&[2.0, 0.5][..])] {
        let f = |p: &Array2<f64>| ode_residual_loss(p.view(), &eqs, exc.view(), dt, phi, 1.7);
        let fd = fd_gradient(&xc, 1e-6, |p| f(p).unwrap().value);
        assert!(rel_diff(&f(&xc).unwrap().grad, &fd) < 1e-6, "{phi:?}");
    }
    // trimmed samples carry no gradient from the derivative terms' stencils
    let g = d(&x).unwrap().grad;
    assert_eq!(g[(0, 0)], 0.0);
    assert_eq!(g[(0, n - 1)], 0.0);
    assert_eq!(g[(0, TRIM - 2)], 0.0);
}

#[test]
fn direct_derivative_loss_identities() {
    let (n, dt) = (300, 1e-3);
    let (x, v, a) = toy_truth(n, dt);
    let sv = [1.0, 2.0];
    let sa = [30.0, 40.0];
    let l = |p: &Array2<f64>| direct_derivative_loss(p.view(), v.view(), a.view(), dt, &sv, &sa).unwrap().value;
    let base = l(&x);
    assert!((l(&(&x + 4.2)) - base).abs() < 1e-9 * base.max(1e-12) + 1e-15);
    // with stencil-consistent truth derivatives, d(2X) − dX = dX: doubling
    // the prediction costs exactly what a zero predictor does
    let d1 = numerical_derivative(x.view(), dt, 1).unwrap();
    let d2 = numerical_derivative(x.view(), dt, 2).unwrap();
    let lt = |p: &Array2<f64>| direct_derivative_loss(p.view(), d1.view(), d2.view(), dt, &sv, &sa).unwrap().value;
    assert!(lt(&x) < 1e-20);
    let zero = lt(&Array2::zeros((2, n)));
    assert!((lt(&(&x * 2.0)) - zero).abs() < 1e-12 * zero);
}

#[test]
fn exact_records_nearly_satisfy_ode_loss() {
    let ds = small_dataset();
    let dt = ds.header.dt_out;
    for k in 0..ds.len() {
        let rec = &ds.pairs[k].record;
        let eqs = vehicle_equations(&ds.pair_params(k).unwrap()).unwrap();
        let zero = Array2::zeros(rec.x.dim());
        let ode = |p: &Array2<f64>| ode_residual_loss(p.view(), &eqs, rec.irregularity.view(), dt, None, 1.0).unwrap().value;
        let ratio = ode(&rec.x) / ode(&zero);
        assert!(ratio < 1e-6, "pair {k}: {ratio}");
    }
}

#[test]
fn direct_derivative_loss_of_exact_record_is_stencil_error() {
    // fastener passing puts rail-under-wheel content near ω·h ≈ 1 at a 1 ms
    // output step, so the stencil error there is O(10%); it falls as h²
    let ratio_at = |stride: usize| {
        let sampler = ParamSampler::new(VtcdParams::nominal(), 1.0, 1.0).unwrap();
        let gen = GenerationConfig { n_train: 1, n_val: 0, master_seed: 8, ..Default::default() };
        let cfg = IntegratorConfig { output_stride: stride, duration: 0.3, ..Default::default() };
        let ds = generate_dataset(&sampler, &PsdModel::placeholder(), &cfg, &gen).unwrap();
        let norm = NormStats::compute(ds.train()).unwrap();
        let rec = &ds.pairs[0].record;
        let dd = |x: &Array2<f64>| {
            direct_derivative_loss(x.view(), rec.v.view(), rec.a.view(), rec.dt_out, &scales(&norm.v), &scales(&norm.a))
                .unwrap()
                .value
        };
        dd(&rec.x) / dd(&Array2::zeros(rec.x.dim()))
    };
    let coarse = ratio_at(10);
    let fine = ratio_at(1);
    assert!(coarse < 1e-2, "{coarse}");
    assert!(fine < 1e-4, "{fine}");
    // squared O(h²) error: a tenfold finer grid gains close to 10⁴
    assert!(coarse / fine > 1e3, "{coarse} / {fine}");
}

#[test]
fn every_mode_is_finite_and_positive_on_real_pairs() {
    let ds = small_dataset();
    let norm = NormStats::compute(ds.train()).unwrap();
    let weights = compute_weight_factors(&ds, 0.02, 5, false).unwrap();
    let dt = ds.header.dt_out;
    let rec = &ds.pairs[0].record;
    let eqs = vehicle_equations(&ds.pair_params(0).unwrap()).unwrap();
    let x_norm = encode_target(rec, &norm);
    let target = PairTarget {
        x_norm: x_norm.view(),
        v: rec.v.view(),
        a: rec.a.view(),
        excitation: rec.irregularity.view(),
        equations: Some(&eqs),
        phi: Some(&weights.phi[0]),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pred = Array2::from_shape_fn(x_norm.dim(), |_| rng.random_range(-0.1..0.1));
    let data_only = pair_loss(&LossConfig::default(), pred.view(), &target, &norm, dt).unwrap();
    assert_eq!(data_only.total, data_loss(pred.view(), x_norm.view(), dt).unwrap().value);
    for mode in [LossMode::PlainOde, LossMode::WeightedOde, LossMode::DirectDerivative] {
        let cfg = LossConfig { mode, ..Default::default() };
        let l = pair_loss(&cfg, pred.view(), &target, &norm, dt).unwrap();
        assert!(l.total.is_finite() && l.total > data_only.total, "{mode:?}: {l:?}");
        assert!(l.grad.iter().all(|g| g.is_finite()));
        assert!(grad_norm(&l.grad) > 0.0);
    }
    let off = LossConfig { mode: LossMode::PlainOde, eta: 0.0, ..Default::default() };
    assert_eq!(pair_loss(&off, pred.view(), &target, &norm, dt).unwrap(), data_only);
    let missing = PairTarget { phi: None, ..target };
    let w = LossConfig { mode: LossMode::WeightedOde, ..Default::default() };
    assert!(pair_loss(&w, pred.view(), &missing, &norm, dt).is_err());
}
