//! Central-difference verification of tape gradients.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome for one input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct InputCheck {
    pub analytic: Tensor,
    pub numeric: Tensor,
    /// `max|analytic − numeric| / max|numeric|`, or the absolute error when
    /// the numeric gradient vanishes.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub inputs: Vec<InputCheck>,
}

impl GradcheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.inputs.iter().map(|c| c.relative_error).fold(0.0, f64::max)
    }
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences with step `eps` at every input element.
pub fn gradcheck<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;

    let mut work = inputs.to_vec();
    let mut checks = Vec::with_capacity(inputs.len());
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.take(*v).unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut numeric = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + eps;
            let up = evaluate(&work, &f)?;
            work[i].data_mut()[j] = x0 - eps;
            let down = evaluate(&work, &f)?;
            work[i].data_mut()[j] = x0;
            numeric.data_mut()[j] = (up - down) / (2.0 * eps);
        }
        let diff = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        let scale = numeric.max_abs();
        let relative_error = if scale > 0.0 { diff / scale } else { diff };
        checks.push(InputCheck {
            analytic,
            numeric,
            relative_error,
        });
    }
    Ok(GradcheckReport { inputs: checks })
}
