//! Rail displacement under the wheelsets from modal coordinate series.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::modal::BeamModal;
use crate::system::WHEELSETS;

/// `Z_r(x_wj(t_i)) = Σ_k Z_k(x_wj(t_i)) q_k(t_i)` as a `[4 × n]` matrix.
///
/// `q` is `[NM × n]` and `positions[i]` holds the four wheel positions at
/// sample `i`; every position must lie on the rail.
pub fn reduce_rail_output(q: &Array2<f64>, modal: &BeamModal, positions: &[[f64; WHEELSETS]]) -> Result<Array2<f64>> {
    let (nm, n) = q.dim();
    if nm != modal.mode_count() {
        return Err(Error::DimensionMismatch {
            expected: modal.mode_count(),
            actual: nm,
            context: "modal coordinate rows",
        });
    }
    if positions.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: positions.len(),
            context: "wheel position samples",
        });
    }
    let mut out = Array2::zeros((WHEELSETS, n));
    let mut z = vec![0.0; nm];
    for (i, pos) in positions.iter().enumerate() {
        for (j, &x) in pos.iter().enumerate() {
            if !(0.0..=modal.length).contains(&x) {
                return Err(Error::WindowOutOfRange(format!(
                    "wheel {} at {x} m leaves the {} m rail",
                    j + 1,
                    modal.length
                )));
            }
            modal.shapes_at(x, &mut z);
            out[(j, i)] = z.iter().zip(q.column(i)).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modal::beam_modal;
    use crate::params::VtcdParams;

    fn modal() -> BeamModal {
        let mut p = VtcdParams::nominal();
        p.beam.modes = 6;
        beam_modal(&p.beam).unwrap()
    }

    #[test]
    fn zero_modes_give_zero_output() {
        let m = modal();
        let q = Array2::zeros((6, 5));
        let out = reduce_rail_output(&q, &m, &[[10.0, 20.0, 30.0, 40.0]; 5]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_mode_at_midspan() {
        let m = modal();
        let mut q = Array2::zeros((6, 3));
        q.row_mut(0).fill(1.0);
        let mid = 0.5 * m.length;
        let out = reduce_rail_output(&q, &m, &[[mid; 4]; 3]).unwrap();
        let expect = (2.0 / (m.mass_per_length * m.length)).sqrt();
        assert!(out.iter().all(|&v| (v - expect).abs() < 1e-15));
    }

    #[test]
    fn rejects_positions_off_the_rail() {
        let m = modal();
        let q = Array2::zeros((6, 1));
        assert!(matches!(
            reduce_rail_output(&q, &m, &[[1.0, 2.0, 3.0, m.length + 1.0]]),
            Err(Error::WindowOutOfRange(_))
        ));
        assert!(reduce_rail_output(&Array2::zeros((5, 1)), &m, &[[1.0; 4]]).is_err());
    }
}
