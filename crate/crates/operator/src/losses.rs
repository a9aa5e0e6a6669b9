//! Training objectives and the finite-difference derivative they share.
//!
//! Every loss returns its value together with the gradient with respect to
//! its first argument, so the network tape only needs one external node per
//! batch. Derivative-consuming losses ignore [`TRIM`] samples at each end of
//! the window.

use mbdno_core::dataset::NormStats;
use mbdno_core::EquationSet;
use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Result};

/// Samples dropped at each end by losses built on numerical derivatives.
pub const TRIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    DataOnly,
    PlainOde,
    WeightedOde,
    #[serde(rename = "direct_deriv")]
    DirectDerivative,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::DataOnly => "data_only",
            LossMode::PlainOde => "plain_ode",
            LossMode::WeightedOde => "weighted_ode",
            LossMode::DirectDerivative => "direct_deriv",
        }
    }

    pub fn needs_equations(self) -> bool {
        matches!(self, LossMode::PlainOde | LossMode::WeightedOde)
    }
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "data_only" => Ok(Self::DataOnly),
            "plain_ode" => Ok(Self::PlainOde),
            "weighted_ode" => Ok(Self::WeightedOde),
            "direct_deriv" => Ok(Self::DirectDerivative),
            _ => Err(format!("unknown loss mode {s}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub mode: LossMode,
    /// Weight of the ODE term.
    pub eta: f64,
    /// Noise fraction used for the weight factors.
    pub r: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::DataOnly,
            eta: 1.0,
            r: 0.02,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(config(format!("eta = {} must be finite and nonnegative", self.eta)));
        }
        if self.mode == LossMode::WeightedOde && !(self.r > 0.0) {
            return Err(config(format!("weighted mode needs r > 0, got {}", self.r)));
        }
        Ok(())
    }
}

/// Scalar loss and its gradient with respect to the loss's first argument.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Second-order finite differences along time of a `[channels × T]` series.
/// Interior samples use central stencils, the two end samples second-order
/// one-sided ones.
pub fn numerical_derivative(series: ArrayView2<f64>, dt: f64, order: u8) -> Result<Array2<f64>> {
    let n = series.ncols();
    if n < 5 {
        return Err(shape(format!("derivative needs at least 5 samples, got {n}")));
    }
    if !(dt > 0.0) {
        return Err(config(format!("dt = {dt} must be positive")));
    }
    let mut out = Array2::zeros(series.dim());
    for (row, mut o) in series.rows().into_iter().zip(out.rows_mut()) {
        let f = |i: usize| row[i];
        match order {
            1 => {
                let h2 = 2.0 * dt;
                o[0] = (-3.0 * f(0) + 4.0 * f(1) - f(2)) / h2;
                o[n - 1] = (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / h2;
                for i in 1..n - 1 {
                    o[i] = (f(i + 1) - f(i - 1)) / h2;
                }
            }
            2 => {
                let hh = dt * dt;
                o[0] = (2.0 * f(0) - 5.0 * f(1) + 4.0 * f(2) - f(3)) / hh;
                o[n - 1] = (2.0 * f(n - 1) - 5.0 * f(n - 2) + 4.0 * f(n - 3) - f(n - 4)) / hh;
                for i in 1..n - 1 {
                    o[i] = (f(i + 1) - 2.0 * f(i) + f(i - 1)) / hh;
                }
            }
            _ => return Err(config(format!("derivative order {order} not supported"))),
        }
    }
    Ok(out)
}

/// Adds the adjoint of the interior central stencil, applied to `g` whose
/// columns outside `[TRIM, T − TRIM)` must be zero, into `out`.
fn stencil_adjoint(g: &Array2<f64>, dt: f64, order: u8, out: &mut Array2<f64>) {
    let n = g.ncols();
    for (gr, mut o) in g.rows().into_iter().zip(out.rows_mut()) {
        for t in TRIM..n - TRIM {
            let v = gr[t];
            if v == 0.0 {
                continue;
            }
            if order == 1 {
                let c = v / (2.0 * dt);
                o[t + 1] += c;
                o[t - 1] -= c;
            } else {
                let c = v / (dt * dt);
                o[t + 1] += c;
                o[t - 1] += c;
                o[t] -= 2.0 * c;
            }
        }
    }
}

/// Trapezoid weights for `n` samples spaced `dt`.
pub fn trapezoid_weights(n: usize, dt: f64) -> Vec<f64> {
    let mut w = vec![dt; n];
    if n > 0 {
        w[0] = 0.5 * dt;
        w[n - 1] = 0.5 * dt;
    }
    if n == 1 {
        w[0] = 0.0;
    }
    w
}

fn same_dims(a: &ArrayView2<f64>, b: &ArrayView2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Channel-averaged ∫(pred − truth)² dt with the trapezoid rule.
pub fn data_loss(pred: ArrayView2<f64>, truth: ArrayView2<f64>, dt: f64) -> Result<LossValue> {
    same_dims(&pred, &truth, "data loss")?;
    let (nch, n) = pred.dim();
    let w = trapezoid_weights(n, dt);
    let mut grad = Array2::zeros((nch, n));
    let mut value = 0.0;
    let inv = 1.0 / nch as f64;
    for c in 0..nch {
        for t in 0..n {
            let d = pred[(c, t)] - truth[(c, t)];
            value += w[t] * d * d * inv;
            grad[(c, t)] = 2.0 * w[t] * d * inv;
        }
    }
    Ok(LossValue { value, grad })
}

/// Data loss restricted to `[TRIM, T − TRIM)` with per-channel scaling of
/// the difference, gradient zero-padded back to full length.
fn trimmed_scaled_loss(pred: ArrayView2<f64>, truth: ArrayView2<f64>, scale: &[f64], dt: f64) -> Result<LossValue> {
    let (nch, n) = pred.dim();
    if n < 2 * TRIM + 1 {
        return Err(shape(format!("window of {n} samples is shorter than the trim")));
    }
    if scale.len() != nch {
        return Err(shape(format!("{} channel scales for {nch} channels", scale.len())));
    }
    let inner = s![.., TRIM..n - TRIM];
    let mut p_scaled = pred.slice(inner).to_owned();
    let mut t_scaled = truth.slice(inner).to_owned();
    for c in 0..nch {
        p_scaled.row_mut(c).mapv_inplace(|v| v / scale[c]);
        t_scaled.row_mut(c).mapv_inplace(|v| v / scale[c]);
    }
    let inner_loss = data_loss(p_scaled.view(), t_scaled.view(), dt)?;
    let mut grad = Array2::zeros((nch, n));
    for c in 0..nch {
        for t in 0..n - 2 * TRIM {
            grad[(c, t + TRIM)] = inner_loss.grad[(c, t)] / scale[c];
        }
    }
    Ok(LossValue {
        value: inner_loss.value,
        grad,
    })
}

/// Mismatch between the stencil derivatives of `pred_x` and the stored
/// derivatives `v`, `a`, each channel divided by its scale.
pub fn direct_derivative_loss(
    pred_x: ArrayView2<f64>,
    v: ArrayView2<f64>,
    a: ArrayView2<f64>,
    dt: f64,
    v_scale: &[f64],
    a_scale: &[f64],
) -> Result<LossValue> {
    same_dims(&pred_x, &v, "direct derivative loss (velocity)")?;
    same_dims(&pred_x, &a, "direct derivative loss (acceleration)")?;
    let d1 = numerical_derivative(pred_x, dt, 1)?;
    let d2 = numerical_derivative(pred_x, dt, 2)?;
    let l1 = trimmed_scaled_loss(d1.view(), v, v_scale, dt)?;
    let l2 = trimmed_scaled_loss(d2.view(), a, a_scale, dt)?;
    let mut grad = Array2::zeros(pred_x.dim());
    stencil_adjoint(&l1.grad, dt, 1, &mut grad);
    stencil_adjoint(&l2.grad, dt, 2, &mut grad);
    Ok(LossValue {
        value: l1.value + l2.value,
        grad,
    })
}

/// Residual of the equation set on `pred_x` with stencil derivatives,
/// `[n_eq × T]`; only the trimmed interior is meaningful.
pub fn predicted_residual(
    pred_x: ArrayView2<f64>,
    eqs: &EquationSet,
    excitation: ArrayView2<f64>,
    dt: f64,
) -> Result<Array2<f64>> {
    let d1 = numerical_derivative(pred_x, dt, 1)?;
    let d2 = numerical_derivative(pred_x, dt, 2)?;
    Ok(eqs.residual(pred_x, d1.view(), d2.view(), excitation)?)
}

/// Per-equation ODE residual losses `η·mean_t (r_i/φ_i)² / n_eq` over the
/// trimmed interior, with gradients with respect to `pred_x`. Without
/// weight factors every φ is 1.
pub fn ode_residual_terms(
    pred_x: ArrayView2<f64>,
    eqs: &EquationSet,
    excitation: ArrayView2<f64>,
    dt: f64,
    phi: Option<&[f64]>,
    eta: f64,
) -> Result<Vec<LossValue>> {
    let r = predicted_residual(pred_x, eqs, excitation, dt)?;
    let (neq, n) = r.dim();
    let scales = equation_scales(neq, phi)?;
    let mut out = Vec::with_capacity(neq);
    for i in 0..neq {
        let mut g = Array2::zeros((neq, n));
        let value = accumulate_equation(&r, i, scales[i], eta, neq, &mut g);
        out.push(LossValue {
            value,
            grad: residual_gradient(&g, pred_x, eqs, excitation, dt),
        });
    }
    Ok(out)
}

/// Sum of [`ode_residual_terms`], computed in a single adjoint pass.
pub fn ode_residual_loss(
    pred_x: ArrayView2<f64>,
    eqs: &EquationSet,
    excitation: ArrayView2<f64>,
    dt: f64,
    phi: Option<&[f64]>,
    eta: f64,
) -> Result<LossValue> {
    let r = predicted_residual(pred_x, eqs, excitation, dt)?;
    let (neq, n) = r.dim();
    let scales = equation_scales(neq, phi)?;
    let mut g = Array2::zeros((neq, n));
    let value = (0..neq)
        .map(|i| accumulate_equation(&r, i, scales[i], eta, neq, &mut g))
        .sum();
    Ok(LossValue {
        value,
        grad: residual_gradient(&g, pred_x, eqs, excitation, dt),
    })
}

fn equation_scales(neq: usize, phi: Option<&[f64]>) -> Result<Vec<f64>> {
    match phi {
        None => Ok(vec![1.0; neq]),
        Some(p) if p.len() != neq => Err(shape(format!("{} weight factors for {neq} equations", p.len()))),
        Some(p) => {
            if let Some(bad) = p.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(config(format!("weight factor {bad} must be positive")));
            }
            Ok(p.to_vec())
        }
    }
}

/// Adds equation `i`'s contribution to the residual cotangent `g` and
/// returns its loss value.
fn accumulate_equation(r: &Array2<f64>, i: usize, phi: f64, eta: f64, neq: usize, g: &mut Array2<f64>) -> f64 {
    let n = r.ncols();
    let count = (n - 2 * TRIM) as f64;
    let w = eta / (phi * phi * neq as f64 * count);
    let mut value = 0.0;
    for t in TRIM..n - TRIM {
        let v = r[(i, t)];
        value += w * v * v;
        g[(i, t)] = 2.0 * w * v;
    }
    value
}

fn residual_gradient(
    g: &Array2<f64>,
    pred_x: ArrayView2<f64>,
    eqs: &EquationSet,
    excitation: ArrayView2<f64>,
    dt: f64,
) -> Array2<f64> {
    let (mut gx, gv, ga) = residual_cotangents(g, pred_x, eqs, excitation);
    stencil_adjoint(&gv, dt, 1, &mut gx);
    stencil_adjoint(&ga, dt, 2, &mut gx);
    gx
}

/// Cotangents of the residual with respect to displacement, velocity and
/// acceleration channels.
fn residual_cotangents(
    g: &Array2<f64>,
    pred_x: ArrayView2<f64>,
    eqs: &EquationSet,
    excitation: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (neq, n) = g.dim();
    let nch = eqs.n_channels();
    let mut gx = Array2::zeros((nch, n));
    let mut gv = Array2::zeros((nch, n));
    let mut ga = Array2::zeros((nch, n));
    for i in 0..neq {
        let gi = g.row(i);
        for j in 0..nch {
            let (m, c, k) = (eqs.mass[(i, j)], eqs.damping[(i, j)], eqs.stiffness[(i, j)]);
            if m == 0.0 && c == 0.0 && k == 0.0 {
                continue;
            }
            gx.row_mut(j).scaled_add(k, &gi);
            gv.row_mut(j).scaled_add(c, &gi);
            ga.row_mut(j).scaled_add(m, &gi);
        }
    }
    for c in &eqs.contacts {
        for t in 0..n {
            let gt = g[(c.equation, t)];
            if gt == 0.0 {
                continue;
            }
            let delta = pred_x[(c.wheel_channel, t)] - pred_x[(c.rail_channel, t)] - excitation[(c.excitation, t)];
            let d = gt * c.gain * c.law.stiffness(delta);
            gx[(c.wheel_channel, t)] += d;
            gx[(c.rail_channel, t)] -= d;
        }
    }
    (gx, gv, ga)
}

/// Everything the objective needs about one training pair.
#[derive(Debug, Clone, Copy)]
pub struct PairTarget<'a> {
    /// Normalized target displacements.
    pub x_norm: ArrayView2<'a, f64>,
    /// Physical derivatives stored by the integrator.
    pub v: ArrayView2<'a, f64>,
    pub a: ArrayView2<'a, f64>,
    pub excitation: ArrayView2<'a, f64>,
    pub equations: Option<&'a EquationSet>,
    pub phi: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub data: f64,
    pub ode: f64,
    pub derivative: f64,
    /// Gradient of `total` with respect to the normalized prediction.
    pub grad: Array2<f64>,
}

/// Combined objective of one pair for the configured mode, evaluated on the
/// normalized network output.
pub fn pair_loss(cfg: &LossConfig, pred_norm: ArrayView2<f64>, target: &PairTarget, norm: &NormStats, dt: f64) -> Result<LossBreakdown> {
    let data = data_loss(pred_norm, target.x_norm, dt)?;
    let mut out = LossBreakdown {
        total: data.value,
        data: data.value,
        ode: 0.0,
        derivative: 0.0,
        grad: data.grad,
    };
    let needs_physical = cfg.mode != LossMode::DataOnly && !(cfg.mode == LossMode::PlainOde && cfg.eta == 0.0);
    if !needs_physical {
        return Ok(out);
    }
    let x_scale: Vec<f64> = (0..norm.x.len()).map(|c| norm.x.scale(c)).collect();
    let pred_x = norm.x.denormalize_matrix(&pred_norm.to_owned());
    let phys = match cfg.mode {
        LossMode::DataOnly => unreachable!("handled above"),
        LossMode::PlainOde | LossMode::WeightedOde => {
            let eqs = target
                .equations
                .ok_or_else(|| config("ODE modes need the pair's equation set"))?;
            let phi = match cfg.mode {
                LossMode::WeightedOde => Some(target.phi.ok_or_else(|| config("weighted mode needs weight factors"))?),
                _ => None,
            };
            let l = ode_residual_loss(pred_x.view(), eqs, target.excitation, dt, phi, cfg.eta)?;
            out.ode = l.value;
            l
        }
        LossMode::DirectDerivative => {
            let vs: Vec<f64> = (0..norm.v.len()).map(|c| norm.v.scale(c)).collect();
            let as_: Vec<f64> = (0..norm.a.len()).map(|c| norm.a.scale(c)).collect();
            let l = direct_derivative_loss(pred_x.view(), target.v, target.a, dt, &vs, &as_)?;
            out.derivative = l.value;
            l
        }
    };
    out.total += phys.value;
    // chain through x = σ·z + μ
    for (c, mut row) in out.grad.axis_iter_mut(Axis(0)).enumerate() {
        row.scaled_add(x_scale[c], &phys.grad.row(c));
    }
    Ok(out)
}
