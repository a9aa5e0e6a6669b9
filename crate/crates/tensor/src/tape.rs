//! Reverse-mode differentiation over a linear tape of recorded operations.
//!
//! Spectra are real tensors `[B, C, M, 2]` holding (re, im) pairs. The forward
//! transform is unnormalized and the inverse carries the 1/n factor.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use realfft::num_complex::Complex;
use realfft::RealFftPlanner;

use crate::error::{shape_err, Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// tanh approximation.
    #[default]
    Gelu,
    Relu,
    Tanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)

fn gelu_sigmoid(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    1.0 / (1.0 + exp_fast(-2.0 * u))
}

/// Branch-free exp that vectorizes, within a few ulp of `f64::exp` on
/// [-700, 700]; inputs outside are clamped, which is exact enough for a
/// sigmoid. NaN propagates.
#[inline(always)]
fn exp_fast(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5·2^52 rounds to an integer
    let x = x.clamp(-700.0, 700.0);
    let shifted = x * std::f64::consts::LOG2_E + SHIFT;
    let k = shifted - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor to degree 12; |r| ≤ ln2/2 puts the remainder below 2^-60
    let mut p = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    // the low mantissa bits of `shifted` hold k; integer ops avoid an f64→i64 convert
    let k_bits = shifted.to_bits().wrapping_sub(SHIFT.to_bits());
    p * f64::from_bits(k_bits.wrapping_add(1023) << 52)
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            // 0.5·(1 + tanh u) = σ(2u), one exp instead of a tanh
            Activation::Gelu => x * gelu_sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let s = gelu_sigmoid(x);
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                s + 2.0 * x * s * (1.0 - s) * du
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "gelu" => Some(Self::Gelu),
            "relu" => Some(Self::Relu),
            "tanh" => Some(Self::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Act { x: Var, kind: Activation },
    Rfft { x: Var, modes: usize },
    ModeMul { s: Var, r: Var },
    Irfft { s: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    External { inputs: Vec<(Var, Tensor)> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations; consumed by [`Tape::backward`].
pub struct Tape {
    nodes: Vec<Node>,
}

thread_local! {
    // planning is far costlier than a length-1000 transform; plans are reused
    static PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
    static BASES: RefCell<HashMap<(usize, usize), Rc<Vec<f64>>>> = RefCell::new(HashMap::new());
}

/// Largest truncated-DFT basis (in f64 entries) worth caching. Below it a
/// GEMM against the basis beats a full transform because only a few modes
/// are kept.
const MAX_BASIS_LEN: usize = 1 << 20;

fn use_basis(n: usize, modes: usize) -> bool {
    n * 2 * modes <= MAX_BASIS_LEN
}

/// `[n, 2m]` row-major: column 2k is cos(2πkt/n), column 2k+1 is −sin(2πkt/n).
fn dft_basis(n: usize, m: usize) -> Rc<Vec<f64>> {
    BASES.with(|b| {
        b.borrow_mut()
            .entry((n, m))
            .or_insert_with(|| {
                let mut basis = Vec::with_capacity(n * 2 * m);
                for t in 0..n {
                    for k in 0..m {
                        // reduce kt mod n first so the angle stays exact for long rows
                        let theta = std::f64::consts::TAU * ((k * t) % n) as f64 / n as f64;
                        basis.push(theta.cos());
                        basis.push(-theta.sin());
                    }
                }
                Rc::new(basis)
            })
            .clone()
    })
}

/// First `modes` DFT coefficients (interleaved re, im) of each length-`n` row.
fn forward_rows(x: &[f64], n: usize, modes: usize) -> Vec<f64> {
    if !use_basis(n, modes) {
        return fft_forward_rows(x, n, modes);
    }
    let rows = x.len() / n;
    let basis = dft_basis(n, modes);
    let mut out = vec![0.0; rows * 2 * modes];
    gemm(rows, n, 2 * modes, x, (n, 1), &basis, (2 * modes, 1), &mut out, 0.0);
    out
}

/// Real part of the unnormalized inverse DFT of each row of `m` interleaved
/// coefficients, zero-filled to length `n`, with mode k scaled by `weight(k)`.
fn inverse_rows(spec: &[f64], m: usize, n: usize, weight: impl Fn(usize) -> f64) -> Vec<f64> {
    if !use_basis(n, m) {
        return fft_inverse_rows(spec, m, n, weight);
    }
    let rows = spec.len() / (2 * m);
    let w: Vec<f64> = (0..m).map(&weight).collect();
    let scaled: Vec<f64> = spec.iter().enumerate().map(|(i, v)| v * w[(i / 2) % m]).collect();
    let basis = dft_basis(n, m);
    let mut out = vec![0.0; rows * n];
    // Re(Σ s_k e^{iθ}) = Σ re_k cos θ − im_k sin θ, i.e. a product with the basis transposed
    gemm(rows, 2 * m, n, &scaled, (2 * m, 1), &basis, (1, 2 * m), &mut out, 0.0);
    out
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

/// `c[m×n] = a[m×k]·b[k×n] + beta·c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64], beta: f64) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: slices cover the index ranges implied by the shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn dims3(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        ref s => Err(shape_err(op, format!("expected rank 3, got {s:?}"))),
    }
}

fn spectrum_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [b, c, m, 2] => Ok((b, c, m)),
        ref s => Err(shape_err(op, format!("expected [B, C, M, 2], got {s:?}"))),
    }
}

/// Weight of mode k in a real inverse transform of length n.
fn hermitian_weight(k: usize, n: usize) -> f64 {
    if k == 0 || (n % 2 == 0 && k == n / 2) {
        1.0
    } else {
        2.0
    }
}

fn fft_forward_rows(x: &[f64], n: usize, modes: usize) -> Vec<f64> {
    let r2c = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    let mut input = r2c.make_input_vec();
    let mut spectrum = r2c.make_output_vec();
    let mut scratch = r2c.make_scratch_vec();
    let mut out = Vec::with_capacity(x.len() / n * modes * 2);
    for row in x.chunks_exact(n) {
        input.copy_from_slice(row);
        r2c.process_with_scratch(&mut input, &mut spectrum, &mut scratch)
            .expect("buffer lengths come from the plan");
        for z in &spectrum[..modes] {
            out.push(z.re);
            out.push(z.im);
        }
    }
    out
}

fn fft_inverse_rows(spec: &[f64], m: usize, n: usize, weight: impl Fn(usize) -> f64) -> Vec<f64> {
    let c2r = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n));
    let mut spectrum = c2r.make_input_vec();
    let mut output = c2r.make_output_vec();
    let mut scratch = c2r.make_scratch_vec();
    // the half-spectrum transform doubles every bin that has a mirror image,
    // so those bins are pre-halved to recover Re(ifft)
    let w: Vec<f64> = (0..m).map(|k| weight(k) / hermitian_weight(k, n)).collect();
    let mut out = Vec::with_capacity(spec.len() / (2 * m) * n);
    for coeffs in spec.chunks_exact(2 * m) {
        spectrum.fill(Complex::new(0.0, 0.0));
        for k in 0..m {
            spectrum[k] = Complex::new(w[k] * coeffs[2 * k], w[k] * coeffs[2 * k + 1]);
        }
        // bins without a mirror are real in Re(ifft); their imaginary parts drop out
        spectrum[0].im = 0.0;
        if n % 2 == 0 {
            spectrum[n / 2].im = 0.0;
        }
        c2r.process_with_scratch(&mut spectrum, &mut output, &mut scratch)
            .expect("buffer lengths come from the plan");
        out.extend_from_slice(&output);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`, so a tape holding
    /// bound parameters can be reused across inputs. Handles to dropped nodes
    /// must not be used afterwards.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// `y[b, o, t] = Σ_i w[o, i]·x[b, i, t] + bias[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (bs, cin, t) = dims3(self.value(x), "linear")?;
        let (cout, wcin) = match *self.value(w).shape() {
            [o, i] => (o, i),
            ref s => return Err(shape_err("linear", format!("weight must be rank 2, got {s:?}"))),
        };
        if wcin != cin {
            return Err(shape_err("linear", format!("weight has {wcin} inputs, tensor has {cin} channels")));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(shape_err("linear", format!("bias must be [{cout}], got {:?}", self.value(b).shape())));
            }
        }
        let mut out = Tensor::zeros(&[bs, cout, t]);
        {
            let (xv, wv) = (self.value(x).data(), self.value(w).data());
            let od = out.data_mut();
            for bi in 0..bs {
                gemm(cout, cin, t, wv, (cin, 1), &xv[bi * cin * t..], (t, 1), &mut od[bi * cout * t..], 0.0);
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                for bi in 0..bs {
                    for o in 0..cout {
                        let row = &mut od[(bi * cout + o) * t..(bi * cout + o + 1) * t];
                        row.iter_mut().for_each(|v| *v += bv[o]);
                    }
                }
            }
        }
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn act(&mut self, x: Var, kind: Activation) -> Var {
        // one loop per kind so each body vectorizes
        let xv = self.value(x);
        let out = match kind {
            Activation::Gelu => xv.map(|v| Activation::Gelu.apply(v)),
            Activation::Relu => xv.map(|v| Activation::Relu.apply(v)),
            Activation::Tanh => xv.map(|v| Activation::Tanh.apply(v)),
        };
        self.push(out, Op::Act { x, kind })
    }

    /// First `modes` coefficients of the unnormalized DFT along the last axis.
    pub fn rfft(&mut self, x: Var, modes: usize) -> Result<Var> {
        let (bs, c, n) = dims3(self.value(x), "rfft")?;
        if n < 2 || modes == 0 || modes > n / 2 + 1 {
            return Err(shape_err("rfft", format!("{modes} modes from length {n}")));
        }
        let out = Tensor::new(vec![bs, c, modes, 2], forward_rows(self.value(x).data(), n, modes))?;
        Ok(self.push(out, Op::Rfft { x, modes }))
    }

    /// Per-mode complex channel mixing `out[b, o, k] = Σ_i r[k, o, i]·s[b, i, k]`
    /// with `r` of shape `[M, Cout, Cin, 2]`.
    pub fn mode_mul(&mut self, s: Var, r: Var) -> Result<Var> {
        let (bs, cin, m) = spectrum_dims(self.value(s), "mode_mul")?;
        let (rm, cout, rcin) = match *self.value(r).shape() {
            [rm, o, i, 2] => (rm, o, i),
            ref sh => return Err(shape_err("mode_mul", format!("weights must be [M, Cout, Cin, 2], got {sh:?}"))),
        };
        if rm != m || rcin != cin {
            return Err(shape_err("mode_mul", format!("weights [{rm}, {cout}, {rcin}] vs spectrum [{cin}, {m}]")));
        }
        let mut out = Tensor::zeros(&[bs, cout, m, 2]);
        let (sv, rv) = (self.value(s).data(), self.value(r).data());
        let od = out.data_mut();
        for b in 0..bs {
            for k in 0..m {
                for o in 0..cout {
                    let (mut re, mut im) = (0.0, 0.0);
                    for i in 0..cin {
                        let ri = ((k * cout + o) * cin + i) * 2;
                        let si = ((b * cin + i) * m + k) * 2;
                        let (p, q) = (rv[ri], rv[ri + 1]);
                        let (a, c) = (sv[si], sv[si + 1]);
                        re += p * a - q * c;
                        im += p * c + q * a;
                    }
                    let oi = ((b * cout + o) * m + k) * 2;
                    od[oi] = re;
                    od[oi + 1] = im;
                }
            }
        }
        Ok(self.push(out, Op::ModeMul { s, r }))
    }

    /// Real inverse transform to length `n`, treating missing modes as zero.
    pub fn irfft(&mut self, s: Var, n: usize) -> Result<Var> {
        let (bs, c, m) = spectrum_dims(self.value(s), "irfft")?;
        if n < 2 || m > n / 2 + 1 {
            return Err(shape_err("irfft", format!("{m} modes cannot invert to length {n}")));
        }
        let inv_n = 1.0 / n as f64;
        let data = inverse_rows(self.value(s).data(), m, n, |k| hermitian_weight(k, n) * inv_n);
        let out = Tensor::new(vec![bs, c, n], data)?;
        Ok(self.push(out, Op::Irfft { s }))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scaled(c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Scalar node whose local gradients are supplied by the caller, for
    /// objectives differentiated analytically outside the tape.
    pub fn external(&mut self, value: f64, inputs: Vec<(Var, Tensor)>) -> Result<Var> {
        for (v, g) in &inputs {
            if self.value(*v).shape() != g.shape() {
                return Err(shape_err(
                    "external",
                    format!("gradient {:?} for value {:?}", g.shape(), self.value(*v).shape()),
                ));
            }
        }
        Ok(self.push(Tensor::scalar(value), Op::External { inputs }))
    }

    /// Consumes the tape and returns d(loss)/d(leaf). Interior gradients are
    /// released as soon as they have been propagated.
    pub fn backward(mut self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n_nodes).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            match op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (bs, cin, t) = dims3(xv, "linear")?;
                    let cout = wv.shape()[0];
                    let gd = g.data();
                    let mut dx = Tensor::zeros(&[bs, cin, t]);
                    let mut dw = Tensor::zeros(&[cout, cin]);
                    for bi in 0..bs {
                        let gb = &gd[bi * cout * t..];
                        gemm(cin, cout, t, wv.data(), (1, cin), gb, (t, 1), &mut dx.data_mut()[bi * cin * t..], 0.0);
                        gemm(cout, t, cin, gb, (t, 1), &xv.data()[bi * cin * t..], (1, t), dw.data_mut(), 1.0);
                    }
                    if let Some(b) = b {
                        let mut db = Tensor::zeros(&[cout]);
                        for bi in 0..bs {
                            for o in 0..cout {
                                db.data_mut()[o] += gd[(bi * cout + o) * t..(bi * cout + o + 1) * t].iter().sum::<f64>();
                            }
                        }
                        accumulate(&mut grads, b, db);
                    }
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, w, dw);
                }
                Op::Act { x, kind } => {
                    let xv = &self.nodes[x.0].value;
                    let data = g.data().iter().zip(xv.data()).map(|(g, &x)| g * kind.derivative(x)).collect();
                    accumulate(&mut grads, x, Tensor::new(xv.shape().to_vec(), data)?);
                }
                Op::Rfft { x, modes } => {
                    let (bs, c, n) = dims3(&self.nodes[x.0].value, "rfft")?;
                    let dx = Tensor::new(vec![bs, c, n], inverse_rows(g.data(), modes, n, |_| 1.0))?;
                    accumulate(&mut grads, x, dx);
                }
                Op::ModeMul { s, r } => {
                    let sv = &self.nodes[s.0].value;
                    let rv = &self.nodes[r.0].value;
                    let (bs, cin, m) = spectrum_dims(sv, "mode_mul")?;
                    let cout = rv.shape()[1];
                    let mut ds = Tensor::zeros(sv.shape());
                    let mut dr = Tensor::zeros(rv.shape());
                    let (sd, rd, gd) = (sv.data(), rv.data(), g.data());
                    {
                        let (dsd, drd) = (ds.data_mut(), dr.data_mut());
                        for b in 0..bs {
                            for k in 0..m {
                                for o in 0..cout {
                                    let gi = ((b * cout + o) * m + k) * 2;
                                    let (gr, gim) = (gd[gi], gd[gi + 1]);
                                    for i in 0..cin {
                                        let ri = ((k * cout + o) * cin + i) * 2;
                                        let si = ((b * cin + i) * m + k) * 2;
                                        let (p, q) = (rd[ri], rd[ri + 1]);
                                        let (a, c) = (sd[si], sd[si + 1]);
                                        // ds += g·conj(r), dr += g·conj(s)
                                        dsd[si] += gr * p + gim * q;
                                        dsd[si + 1] += gim * p - gr * q;
                                        drd[ri] += gr * a + gim * c;
                                        drd[ri + 1] += gim * a - gr * c;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, s, ds);
                    accumulate(&mut grads, r, dr);
                }
                Op::Irfft { s } => {
                    let sv = &self.nodes[s.0].value;
                    let (bs, c, m) = spectrum_dims(sv, "irfft")?;
                    let n = self.nodes[idx].value.shape()[2];
                    let inv_n = 1.0 / n as f64;
                    let mut coeffs = forward_rows(g.data(), n, m);
                    for (i, v) in coeffs.iter_mut().enumerate() {
                        *v *= hermitian_weight((i / 2) % m, n) * inv_n;
                    }
                    let ds = Tensor::new(vec![bs, c, m, 2], coeffs)?;
                    accumulate(&mut grads, s, ds);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, b, g.scaled(-1.0));
                    accumulate(&mut grads, a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da = Tensor::new(av.shape().to_vec(), g.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect())?;
                    let db = Tensor::new(bv.shape().to_vec(), g.data().iter().zip(av.data()).map(|(g, x)| g * x).collect())?;
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::Scale(a, c) => accumulate(&mut grads, a, g.scaled(c)),
                Op::Sum(a) => {
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    accumulate(&mut grads, a, Tensor::full(&shape, g.item()));
                }
                Op::External { inputs } => {
                    let gs = g.item();
                    for (v, local) in inputs {
                        accumulate(&mut grads, v, local.scaled(gs));
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}
