use mbdno_tensor::{gradcheck, Activation, Archive, Tape, Tensor, TensorError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;
const EPS: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Contracts an output with a fixed random tensor so every element contributes.
fn project(tape: &mut Tape, y: mbdno_tensor::Var, seed: u64) -> mbdno_tensor::Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let c = tape.leaf(random(tape.value(y).shape(), &mut rng));
    let p = tape.mul(y, c).unwrap();
    tape.sum(p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn linear_gradients(seed in any::<u64>(), b in 1usize..3, cin in 1usize..4, cout in 1usize..4, t in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[b, cin, t], &mut rng), random(&[cout, cin], &mut rng), random(&[cout], &mut rng)];
        let rep = gradcheck(&inputs, EPS, |tape, v| {
            let y = tape.linear(v[0], v[1], Some(v[2]))?;
            Ok(project(tape, y, seed))
        }).unwrap();
        prop_assert!(rep.max_relative_error() < TOL, "{}", rep.max_relative_error());
    }

    #[test]
    fn activation_gradients(seed in any::<u64>(), idx in 0usize..3) {
        let kind = [Activation::Gelu, Activation::Tanh, Activation::Relu][idx];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep ReLU inputs away from the kink
        let x = random(&[2, 3, 5], &mut rng).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let rep = gradcheck(&[x], EPS, |tape, v| {
            let y = tape.act(v[0], kind);
            Ok(project(tape, y, seed))
        }).unwrap();
        prop_assert!(rep.max_relative_error() < TOL);
    }

    #[test]
    fn spectral_gradients(seed in any::<u64>(), n in 4usize..20, c in 1usize..3, cout in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = rng.random_range(1..=n / 2 + 1);
        let inputs = [random(&[2, c, n], &mut rng), random(&[modes, cout, c, 2], &mut rng)];
        let rep = gradcheck(&inputs, EPS, |tape, v| {
            let s = tape.rfft(v[0], modes)?;
            let s = tape.mode_mul(s, v[1])?;
            let y = tape.irfft(s, n)?;
            Ok(project(tape, y, seed))
        }).unwrap();
        prop_assert!(rep.max_relative_error() < TOL, "n {n} modes {modes}: {}", rep.max_relative_error());
    }

    #[test]
    fn spectrum_gradients_alone(seed in any::<u64>(), n in 2usize..17) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = n / 2 + 1;
        let rep = gradcheck(&[random(&[1, 2, n], &mut rng)], EPS, |tape, v| {
            let s = tape.rfft(v[0], modes)?;
            Ok(project(tape, s, seed))
        }).unwrap();
        prop_assert!(rep.max_relative_error() < TOL);
        // the inverse on its own, fed an arbitrary (non-Hermitian) spectrum
        let rep = gradcheck(&[random(&[1, 2, modes, 2], &mut rng)], EPS, |tape, v| {
            let y = tape.irfft(v[0], n)?;
            Ok(project(tape, y, seed))
        }).unwrap();
        prop_assert!(rep.max_relative_error() < TOL);
    }

    #[test]
    fn elementwise_gradients(seed in any::<u64>(), c in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[3, 4], &mut rng), random(&[3, 4], &mut rng)];
        let rep = gradcheck(&inputs, EPS, |tape, v| {
            let a = tape.add(v[0], v[1])?;
            let s = tape.sub(a, v[1])?;
            let m = tape.mul(s, v[1])?;
            let m = tape.mul(m, v[0])?;
            let k = tape.scale(m, c);
            Ok(tape.sum(k))
        }).unwrap();
        prop_assert!(rep.max_relative_error() < TOL);
    }

    #[test]
    fn transform_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (random(&[1, 2, 12], &mut rng), random(&[1, 2, 12], &mut rng));
        let spec = |t: &Tensor| {
            let mut tape = Tape::new();
            let v = tape.leaf(t.clone());
            let s = tape.rfft(v, 7).unwrap();
            tape.value(s).clone()
        };
        let mut comb = x.scaled(a);
        comb.add_assign(&y.scaled(b));
        let mut expect = spec(&x).scaled(a);
        expect.add_assign(&spec(&y).scaled(b));
        let got = spec(&comb);
        for (g, e) in got.data().iter().zip(expect.data()) {
            prop_assert!((g - e).abs() < 1e-12);
        }
    }
}

#[test]
fn external_node_chains_supplied_gradients() {
    let x0 = Tensor::from_fn(&[4], |i| i as f64 - 1.5);
    let rep = gradcheck(&[x0], EPS, |tape, v| {
        // f(x) = Σ x³ with analytic gradient 3x²
        let xv = tape.value(v[0]).clone();
        let val = xv.data().iter().map(|x| x.powi(3)).sum();
        let e = tape.external(val, vec![(v[0], xv.map(|x| 3.0 * x * x))])?;
        Ok(tape.scale(e, 2.0))
    })
    .unwrap();
    assert!(rep.max_relative_error() < TOL);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[3]));
    assert!(matches!(tape.external(1.0, vec![(x, Tensor::zeros(&[2]))]), Err(TensorError::Shape { .. })));
}

#[test]
fn archive_round_trip_is_bit_exact() {
    let mut ar = Archive::new(serde_json::json!({"width": 8, "note": "x"}));
    ar.push("a", Tensor::from_fn(&[2, 3], |i| (i as f64).exp() / 7.0));
    ar.push("scalar", Tensor::scalar(-0.1));
    ar.push("empty", Tensor::zeros(&[0, 4]));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.ntar");
    ar.save(&path).unwrap();
    let back = Archive::load(&path).unwrap();
    assert_eq!(back, ar);
    assert_eq!(back.get("a").unwrap().shape(), &[2, 3]);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.push(0);
    std::fs::write(&path, &bytes).unwrap();
    assert!(Archive::load(&path).is_err());
    std::fs::write(&path, b"NPY0").unwrap();
    assert!(Archive::load(&path).is_err());
}
