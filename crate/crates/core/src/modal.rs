//! Closed-form modes of a simply supported Euler beam.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::BeamParams;

/// Mass-normalised sine modes `Z_k(x) = sqrt(2/(m_r l)) sin(kπx/l)`, k = 1..NM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamModal {
    pub mass_per_length: f64,
    pub length: f64,
    /// Natural angular frequencies ω_k, rad/s, index k-1.
    pub frequencies: Vec<f64>,
    /// `b = ∫ Z_k² dx`, identical for every mode.
    pub normalization: f64,
    amplitude: f64,
}

impl BeamModal {
    pub fn mode_count(&self) -> usize {
        self.frequencies.len()
    }

    fn wavenumber(&self, k: usize) -> f64 {
        k as f64 * PI / self.length
    }

    /// Mode shape `Z_k(x)`; `k` is 1-based.
    pub fn shape(&self, k: usize, x: f64) -> f64 {
        self.amplitude * (self.wavenumber(k) * x).sin()
    }

    pub fn slope(&self, k: usize, x: f64) -> f64 {
        let w = self.wavenumber(k);
        self.amplitude * w * (w * x).cos()
    }

    pub fn curvature(&self, k: usize, x: f64) -> f64 {
        let w = self.wavenumber(k);
        -self.amplitude * w * w * (w * x).sin()
    }

    /// All mode shapes at `x`, written into `out[k-1]`.
    pub fn shapes_at(&self, x: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.shape(i + 1, x);
        }
    }

    /// Shapes, slopes and curvatures at `x` in one pass.
    pub fn shape_derivatives_at(&self, x: f64, z: &mut [f64], dz: &mut [f64], ddz: &mut [f64]) {
        for i in 0..z.len() {
            let w = self.wavenumber(i + 1);
            let (s, c) = (w * x).sin_cos();
            z[i] = self.amplitude * s;
            dz[i] = self.amplitude * w * c;
            ddz[i] = -self.amplitude * w * w * s;
        }
    }

    /// Rail deflection `Σ Z_k(x) q_k`.
    pub fn deflection(&self, x: f64, q: &[f64]) -> f64 {
        q.iter()
            .enumerate()
            .map(|(i, qk)| self.shape(i + 1, x) * qk)
            .sum()
    }
}

pub fn beam_modal(params: &BeamParams) -> Result<BeamModal> {
    params.validate()?;
    let (l, m) = (params.length, params.mass_per_length);
    let c = (params.elastic_modulus * params.second_moment / m).sqrt();
    let frequencies = (1..=params.modes)
        .map(|k| {
            let w = k as f64 * PI / l;
            w * w * c
        })
        .collect();
    Ok(BeamModal {
        mass_per_length: m,
        length: l,
        frequencies,
        normalization: 1.0 / m,
        amplitude: (2.0 / (m * l)).sqrt(),
    })
}
