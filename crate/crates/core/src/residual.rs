//! Generic second-order equation sets evaluated on sampled trajectories.
//!
//! An [`EquationSet`] describes `r = M a + C v + K x − load − ext(t) + Σ gain·p(δ)`
//! row by row, with `δ = x[wheel] − x[rail] − e[excitation]`. The same type
//! closes the vehicle equations on the network outputs and describes small
//! toy systems used in tests.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::system::HertzContact;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactTerm {
    pub equation: usize,
    pub wheel_channel: usize,
    pub rail_channel: usize,
    pub excitation: usize,
    pub gain: f64,
    pub law: HertzContact,
}

#[derive(Debug, Clone)]
pub struct EquationSet {
    /// `n_eq × n_ch`.
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    /// Constant right-hand side, length `n_eq`.
    pub load: DVector<f64>,
    /// Optional time-varying right-hand side, `n_eq × T`.
    pub external: Option<Array2<f64>>,
    pub contacts: Vec<ContactTerm>,
}

impl EquationSet {
    pub fn n_equations(&self) -> usize {
        self.mass.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.mass.ncols()
    }

    fn check(&self, name: &'static str, a: &ArrayView2<f64>, rows: usize, cols: usize) -> Result<()> {
        if a.nrows() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                actual: a.nrows(),
                context: name,
            });
        }
        if a.ncols() != cols {
            return Err(Error::DimensionMismatch {
                expected: cols,
                actual: a.ncols(),
                context: name,
            });
        }
        Ok(())
    }

    /// Residual `[n_eq × T]` of channel-major trajectories `[n_ch × T]`.
    pub fn residual(
        &self,
        x: ArrayView2<f64>,
        v: ArrayView2<f64>,
        a: ArrayView2<f64>,
        excitation: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let (nch, nt) = (self.n_channels(), x.ncols());
        self.check("displacement channels", &x, nch, nt)?;
        self.check("velocity channels", &v, nch, nt)?;
        self.check("acceleration channels", &a, nch, nt)?;
        let nexc = self.contacts.iter().map(|c| c.excitation + 1).max().unwrap_or(0);
        if excitation.nrows() < nexc || (nexc > 0 && excitation.ncols() != nt) {
            return Err(Error::DimensionMismatch {
                expected: nexc,
                actual: excitation.nrows(),
                context: "excitation channels",
            });
        }
        let neq = self.n_equations();
        let mut r = Array2::zeros((neq, nt));
        for i in 0..neq {
            for j in 0..nch {
                let (m, c, k) = (self.mass[(i, j)], self.damping[(i, j)], self.stiffness[(i, j)]);
                if m == 0.0 && c == 0.0 && k == 0.0 {
                    continue;
                }
                for t in 0..nt {
                    r[(i, t)] += m * a[(j, t)] + c * v[(j, t)] + k * x[(j, t)];
                }
            }
            for t in 0..nt {
                r[(i, t)] -= self.load[i];
            }
        }
        if let Some(ext) = &self.external {
            self.check("external forcing", &ext.view(), neq, nt)?;
            r -= ext;
        }
        for c in &self.contacts {
            for t in 0..nt {
                let delta = x[(c.wheel_channel, t)] - x[(c.rail_channel, t)] - excitation[(c.excitation, t)];
                r[(c.equation, t)] += c.gain * c.law.force(delta);
            }
        }
        Ok(r)
    }

    /// Per-equation `max_t |r|`.
    pub fn max_abs(residual: &Array2<f64>) -> Vec<f64> {
        residual
            .rows()
            .into_iter()
            .map(|row| row.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            .collect()
    }
}
