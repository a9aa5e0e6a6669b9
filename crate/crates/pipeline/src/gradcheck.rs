//! Finite-difference audit of every differentiable tape operation and of a
//! complete small network trained through the data loss.

use mbdno_operator::encode::{stack, unstack};
use mbdno_operator::fno::Bound;
use mbdno_operator::losses::data_loss;
use mbdno_operator::{FnoConfig, FnoModel, OperatorError, INPUT_CHANNELS};
use mbdno_tensor::{gradcheck, Activation, Tape, Tensor, TensorError, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const TOLERANCE: f64 = 1e-5;
const EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub name: String,
    pub relative_error: f64,
}

impl GradcheckRow {
    pub fn passed(&self) -> bool {
        self.relative_error < TOLERANCE
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    // magnitudes in [0.1, 1] keep ReLU away from its kink
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() { m } else { -m }
    })
}

/// `Σ y ⊙ c` for a fixed random `c`, so every output element matters.
fn project(tape: &mut Tape, y: Var, c: &Tensor) -> std::result::Result<Var, TensorError> {
    let c = tape.leaf(c.clone());
    let p = tape.mul(y, c)?;
    Ok(tape.sum(p))
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> std::result::Result<Var, TensorError>>;

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, OpFn)> {
    let (b, c, co, n, modes) = (2, 3, 2, 12, 5);
    let odd = 11;
    let x = random(&[b, c, n], rng);
    let y = random(&[b, c, n], rng);
    let spec = random(&[b, c, modes, 2], rng);
    let proj_n = random(&[b, c, n], rng);
    let proj_odd = random(&[b, c, odd], rng);
    let proj_co = random(&[b, co, n], rng);
    let proj_spec = random(&[b, c, modes, 2], rng);
    let proj_mix = random(&[b, co, modes, 2], rng);
    let mut cases: Vec<(&'static str, Vec<Tensor>, OpFn)> = Vec::new();
    {
        let p = proj_co.clone();
        cases.push((
            "linear",
            vec![x.clone(), random(&[co, c], rng), random(&[co], rng)],
            Box::new(move |t, v| {
                let out = t.linear(v[0], v[1], Some(v[2]))?;
                project(t, out, &p)
            }),
        ));
    }
    {
        let p = proj_co.clone();
        cases.push((
            "linear_no_bias",
            vec![x.clone(), random(&[co, c], rng)],
            Box::new(move |t, v| {
                let out = t.linear(v[0], v[1], None)?;
                project(t, out, &p)
            }),
        ));
    }
    for (name, kind) in [("gelu", Activation::Gelu), ("relu", Activation::Relu), ("tanh", Activation::Tanh)] {
        let p = proj_n.clone();
        cases.push((
            name,
            vec![x.clone()],
            Box::new(move |t, v| {
                let out = t.act(v[0], kind);
                project(t, out, &p)
            }),
        ));
    }
    {
        let p = proj_spec.clone();
        cases.push((
            "rfft",
            vec![x.clone()],
            Box::new(move |t, v| {
                let s = t.rfft(v[0], modes)?;
                project(t, s, &p)
            }),
        ));
    }
    for (name, len, proj) in [("irfft_even", n, proj_n.clone()), ("irfft_odd", odd, proj_odd.clone())] {
        cases.push((
            name,
            vec![spec.clone()],
            Box::new(move |t, v| {
                let out = t.irfft(v[0], len)?;
                project(t, out, &proj)
            }),
        ));
    }
    {
        let p = proj_mix.clone();
        cases.push((
            "mode_mul",
            vec![spec.clone(), random(&[modes, co, c, 2], rng)],
            Box::new(move |t, v| {
                let out = t.mode_mul(v[0], v[1])?;
                project(t, out, &p)
            }),
        ));
    }
    for name in ["add", "sub", "mul"] {
        let p = proj_n.clone();
        cases.push((
            name,
            vec![x.clone(), y.clone()],
            Box::new(move |t, v| {
                let out = match name {
                    "add" => t.add(v[0], v[1])?,
                    "sub" => t.sub(v[0], v[1])?,
                    _ => t.mul(v[0], v[1])?,
                };
                project(t, out, &p)
            }),
        ));
    }
    {
        let p = proj_n.clone();
        cases.push((
            "scale",
            vec![x.clone()],
            Box::new(move |t, v| {
                let out = t.scale(v[0], -1.7);
                project(t, out, &p)
            }),
        ));
    }
    cases.push(("sum", vec![x.clone()], Box::new(|t, v| Ok(t.sum(v[0])))));
    {
        // ½‖x‖² attached with its analytic gradient
        cases.push((
            "external",
            vec![x.clone()],
            Box::new(|t, v| {
                let xv = t.value(v[0]).clone();
                let value = 0.5 * xv.data().iter().map(|a| a * a).sum::<f64>();
                let e = t.external(value, vec![(v[0], xv)])?;
                Ok(t.scale(e, 3.0))
            }),
        ));
    }
    cases
}

/// One row per tape operation.
pub fn op_gradchecks(seed: u64) -> Result<Vec<GradcheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (name, inputs, f) in op_cases(&mut rng) {
        let rep = gradcheck(&inputs, EPS, |t: &mut Tape, v: &[Var]| f(t, v))?;
        rows.push(GradcheckRow {
            name: name.to_string(),
            relative_error: rep.max_relative_error(),
        });
    }
    Ok(rows)
}

/// Every parameter and the input of a small FNO of the given depth,
/// through the data loss attached as an external node.
pub fn fno_gradcheck(depth: usize, seed: u64) -> Result<GradcheckRow> {
    let cfg = FnoConfig {
        width: 4,
        depth,
        modes: 3,
        projection_width: 5,
        ..Default::default()
    };
    let model = FnoModel::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let (b, t, dt) = (2, 10, 0.1);
    let x = Tensor::from_fn(&[b, INPUT_CHANNELS, t], |_| rng.random_range(-1.0..1.0));
    let target: Vec<Array2<f64>> = (0..b)
        .map(|_| Array2::from_shape_fn((model.config.out_channels, t), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let mut inputs = vec![x];
    inputs.extend(model.params.iter().cloned());
    let as_tensor_err = |e: OperatorError| match e {
        OperatorError::Tensor(t) => t,
        other => TensorError::Format(other.to_string()),
    };
    let rep = gradcheck(&inputs, EPS, |tape: &mut Tape, v: &[Var]| {
        let bound = Bound { params: v[1..].to_vec() };
        let out = model.forward(tape, &bound, v[0]).map_err(as_tensor_err)?;
        let preds = unstack(tape.value(out)).map_err(as_tensor_err)?;
        let (mut value, mut grads) = (0.0, Vec::with_capacity(b));
        for (p, y) in preds.iter().zip(&target) {
            let l = data_loss(p.view(), y.view(), dt).map_err(as_tensor_err)?;
            value += l.value / b as f64;
            grads.push(l.grad / b as f64);
        }
        let g = stack(&grads).map_err(as_tensor_err)?;
        tape.external(value, vec![(out, g)])
    })?;
    Ok(GradcheckRow {
        name: format!("fno_depth{depth}"),
        relative_error: rep.max_relative_error(),
    })
}

/// The full audit: all operations, then the depth-3 network.
pub fn run_all(seed: u64) -> Result<Vec<GradcheckRow>> {
    let mut rows = op_gradchecks(seed)?;
    rows.push(fno_gradcheck(3, seed)?);
    Ok(rows)
}
