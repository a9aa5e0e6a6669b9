//! Assembly of the coupled vehicle-track equations `M ẍ + C ẋ + K x = F(t, x)`.
//!
//! Every linear force element contributes `k·b·bᵀ` to the stiffness matrix,
//! where `b` maps the system coordinates to the element elongation. The
//! wheel-rail contact is nonlinear and lives in the forcing evaluator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modal::BeamModal;
use crate::params::{BeamParams, RigidBodyParams, SuspensionParams, VtcdParams};
use crate::residual::{ContactTerm, EquationSet};

pub const VEHICLE_DOFS: usize = 10;
pub const WHEELSETS: usize = 4;
/// Vehicle DOFs plus the rail displacement under each wheelset.
pub const OUTPUT_CHANNELS: usize = VEHICLE_DOFS + WHEELSETS;
/// Each wheelset rides on two rails; the model carries one.
pub const WHEELS_PER_AXLE: f64 = 2.0;

pub const CARBODY_BOUNCE: usize = 0;
pub const CARBODY_PITCH: usize = 1;
pub const BOGIE_BOUNCE: [usize; 2] = [2, 4];
pub const BOGIE_PITCH: [usize; 2] = [3, 5];
pub const WHEELSET_BOUNCE: [usize; 4] = [6, 7, 8, 9];
pub const FIRST_RAIL_MODE: usize = VEHICLE_DOFS;

pub const OUTPUT_LABELS: [&str; OUTPUT_CHANNELS] = [
    "Zc", "beta_c", "Zt1", "beta_t1", "Zt2", "beta_t2", "Zw1", "Zw2", "Zw3", "Zw4", "Zr1", "Zr2",
    "Zr3", "Zr4",
];

/// DOF labels in system order: vehicle DOFs then `q1..qNM`.
pub fn dof_labels(modes: usize) -> Vec<String> {
    OUTPUT_LABELS[..VEHICLE_DOFS]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=modes).map(|k| format!("q{k}")))
        .collect()
}

/// Hertzian wheel-rail law `p = (δ/G)^e` for δ > 0, zero otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HertzContact {
    pub constant: f64,
    pub exponent: f64,
}

impl HertzContact {
    pub fn from_beam(beam: &BeamParams) -> Self {
        Self {
            constant: beam.hertz_constant,
            exponent: beam.hertz_exponent,
        }
    }

    pub fn force(&self, compression: f64) -> f64 {
        if compression > 0.0 {
            (compression / self.constant).powf(self.exponent)
        } else {
            0.0
        }
    }

    /// dp/dδ; zero on the disengaged branch.
    pub fn stiffness(&self, compression: f64) -> f64 {
        if compression > 0.0 {
            self.exponent / self.constant
                * (compression / self.constant).powf(self.exponent - 1.0)
        } else {
            0.0
        }
    }

    /// Compression that carries `load` in static contact.
    pub fn compression_for(&self, load: f64) -> f64 {
        if load > 0.0 {
            self.constant * load.powf(1.0 / self.exponent)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactState {
    /// δ_j = Z_wj − Z_r(x_wj) − Irre_j, m.
    pub compression: [f64; WHEELSETS],
    /// p_j, N.
    pub force: [f64; WHEELSETS],
}

/// Wheel-rail compression and force for each wheelset.
///
/// `state` holds the system displacements in DOF order (vehicle then modal).
pub fn contact_force(
    state: &[f64],
    irregularity: &[f64; WHEELSETS],
    wheel_positions: &[f64; WHEELSETS],
    modal: &BeamModal,
    law: HertzContact,
) -> ContactState {
    let q = &state[FIRST_RAIL_MODE..];
    let mut out = ContactState::default();
    for j in 0..WHEELSETS {
        let rail = modal.deflection(wheel_positions[j], q);
        let delta = state[WHEELSET_BOUNCE[j]] - rail - irregularity[j];
        out.compression[j] = delta;
        out.force[j] = law.force(delta);
    }
    out
}

/// Assembled CODES of one vehicle-track configuration.
#[derive(Debug, Clone)]
pub struct CodesSystem {
    /// Diagonal of M.
    pub mass: DVector<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    /// Constant part of F (gravity).
    pub gravity_load: DVector<f64>,
    pub modal: BeamModal,
    pub contact: HertzContact,
    /// Wheelset positions at t = 0, leading wheelset first.
    pub wheel_origin: [f64; WHEELSETS],
    pub speed: f64,
    pub initial_displacement: DVector<f64>,
    pub initial_velocity: DVector<f64>,
    pub labels: Vec<String>,
}

struct Assembler {
    k: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl Assembler {
    fn new(n: usize) -> Self {
        Self {
            k: DMatrix::zeros(n, n),
            c: DMatrix::zeros(n, n),
        }
    }

    /// Kelvin-Voigt element with elongation `Σ coef·x[idx]`.
    fn element(&mut self, stiffness: f64, damping: f64, b: &[(usize, f64)]) {
        for &(i, bi) in b {
            for &(j, bj) in b {
                self.k[(i, j)] += stiffness * bi * bj;
                self.c[(i, j)] += damping * bi * bj;
            }
        }
    }
}

fn vehicle_mass(rigid: &RigidBodyParams) -> [f64; VEHICLE_DOFS] {
    let r = rigid;
    [
        r.carbody_mass,
        r.carbody_pitch_inertia,
        r.bogie_mass,
        r.bogie_pitch_inertia,
        r.bogie_mass,
        r.bogie_pitch_inertia,
        r.wheelset_mass,
        r.wheelset_mass,
        r.wheelset_mass,
        r.wheelset_mass,
    ]
}

/// Secondary and primary suspension elements of the vehicle.
///
/// Pitch angles are positive when the leading end moves up: the car attaches
/// to bogie 1 at `Zc − l_c βc` and to bogie 2 at `Zc + l_c βc`, and each bogie
/// attaches to its leading wheelset at `Zt − l_t βt`.
fn add_suspension(asm: &mut Assembler, susp: &SuspensionParams) {
    let (lc, lt) = (susp.semi_bogie_spacing, susp.semi_wheelbase);
    for (j, side) in [-1.0, 1.0].into_iter().enumerate() {
        asm.element(
            susp.secondary_stiffness,
            susp.secondary_damping,
            &[
                (BOGIE_BOUNCE[j], 1.0),
                (CARBODY_BOUNCE, -1.0),
                (CARBODY_PITCH, -side * lc),
            ],
        );
    }
    for (i, &w) in WHEELSET_BOUNCE.iter().enumerate() {
        let bogie = i / 2;
        let side = if i % 2 == 0 { -1.0 } else { 1.0 };
        asm.element(
            susp.primary_stiffness,
            susp.primary_damping,
            &[
                (w, 1.0),
                (BOGIE_BOUNCE[bogie], -1.0),
                (BOGIE_PITCH[bogie], -side * lt),
            ],
        );
    }
}

pub fn assemble_codes(
    rigid: &RigidBodyParams,
    susp: &SuspensionParams,
    beam: &BeamParams,
    modal: &BeamModal,
) -> Result<CodesSystem> {
    rigid.validate()?;
    susp.validate()?;
    beam.validate()?;
    if modal.mode_count() != beam.modes {
        return Err(Error::DimensionMismatch {
            expected: beam.modes,
            actual: modal.mode_count(),
            context: "rail modes in modal data",
        });
    }
    let nm = beam.modes;
    let n = VEHICLE_DOFS + nm;
    let mut asm = Assembler::new(n);
    add_suspension(&mut asm, susp);

    let mut shapes = vec![0.0; nm];
    for &xf in &beam.fastener_positions {
        modal.shapes_at(xf, &mut shapes);
        let b: Vec<(usize, f64)> = shapes
            .iter()
            .enumerate()
            .map(|(k, &z)| (FIRST_RAIL_MODE + k, z))
            .collect();
        asm.element(susp.fastener_stiffness, susp.fastener_damping, &b);
    }
    for (k, w) in modal.frequencies.iter().enumerate() {
        asm.k[(FIRST_RAIL_MODE + k, FIRST_RAIL_MODE + k)] += w * w;
    }

    let mut mass = DVector::from_element(n, 1.0);
    for (i, m) in vehicle_mass(rigid).into_iter().enumerate() {
        mass[i] = m;
    }

    let offsets = susp.wheel_offsets();
    Ok(CodesSystem {
        mass,
        damping: asm.c,
        stiffness: asm.k,
        gravity_load: DVector::zeros(n),
        modal: modal.clone(),
        contact: HertzContact::from_beam(beam),
        wheel_origin: offsets.map(|o| beam.entry_position + o),
        speed: beam.speed,
        initial_displacement: DVector::zeros(n),
        initial_velocity: DVector::zeros(n),
        labels: dof_labels(nm),
    })
}

impl CodesSystem {
    /// Assembles the system for a full parameter set, with gravity applied.
    pub fn from_params(params: &VtcdParams) -> Result<Self> {
        let modal = crate::modal::beam_modal(&params.beam)?;
        let mut sys = assemble_codes(&params.rigid, &params.suspension, &params.beam, &modal)?;
        sys.set_gravity(params.gravity);
        Ok(sys)
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn mode_count(&self) -> usize {
        self.dim() - VEHICLE_DOFS
    }

    /// Gravity enters F through the vehicle masses; the rail is weightless.
    pub fn set_gravity(&mut self, g: f64) {
        self.gravity_load.fill(0.0);
        for i in [CARBODY_BOUNCE, BOGIE_BOUNCE[0], BOGIE_BOUNCE[1]]
            .into_iter()
            .chain(WHEELSET_BOUNCE)
        {
            self.gravity_load[i] = self.mass[i] * g;
        }
    }

    pub fn wheel_positions(&self, t: f64) -> [f64; WHEELSETS] {
        self.wheel_origin.map(|x0| x0 + self.speed * t)
    }

    /// Writes F(t, x) into `out` and returns the contact state it used.
    pub fn forcing(
        &self,
        t: f64,
        x: &[f64],
        irregularity: &[f64; WHEELSETS],
        out: &mut [f64],
    ) -> ContactState {
        out.copy_from_slice(self.gravity_load.as_slice());
        let nm = self.mode_count();
        let positions = self.wheel_positions(t);
        let q = &x[FIRST_RAIL_MODE..];
        let mut shapes = [0.0; 64];
        let mut heap;
        let shapes: &mut [f64] = if nm <= shapes.len() {
            &mut shapes[..nm]
        } else {
            heap = vec![0.0; nm];
            &mut heap
        };
        let mut state = ContactState::default();
        for j in 0..WHEELSETS {
            self.modal.shapes_at(positions[j], shapes);
            let rail: f64 = shapes.iter().zip(q).map(|(z, q)| z * q).sum();
            let delta = x[WHEELSET_BOUNCE[j]] - rail - irregularity[j];
            let p = self.contact.force(delta);
            state.compression[j] = delta;
            state.force[j] = p;
            if p != 0.0 {
                out[WHEELSET_BOUNCE[j]] -= WHEELS_PER_AXLE * p;
                for (o, z) in out[FIRST_RAIL_MODE..].iter_mut().zip(shapes.iter()) {
                    *o += p * z;
                }
            }
        }
        state
    }

    /// `M a + C v + K x − F(t, x)`.
    pub fn residual(
        &self,
        t: f64,
        x: &[f64],
        v: &[f64],
        a: &[f64],
        irregularity: &[f64; WHEELSETS],
        out: &mut [f64],
    ) {
        let n = self.dim();
        let mut f = vec![0.0; n];
        self.forcing(t, x, irregularity, &mut f);
        for i in 0..n {
            let mut r = self.mass[i] * a[i] - f[i];
            for j in 0..n {
                r += self.damping[(i, j)] * v[j] + self.stiffness[(i, j)] * x[j];
            }
            out[i] = r;
        }
    }

    /// Static equilibrium `K x = F(0, x)` for the given irregularity values.
    ///
    /// The vehicle is statically determinate, so every wheel carries the same
    /// share of the weight; that gives the starting point for a Newton polish
    /// of the full nonlinear system.
    pub fn static_equilibrium(&self, irregularity: &[f64; WHEELSETS]) -> Result<DVector<f64>> {
        let n = self.dim();
        let nm = self.mode_count();
        let axle_load = (self.gravity_load[CARBODY_BOUNCE] / 4.0
            + self.gravity_load[BOGIE_BOUNCE[0]] / 2.0
            + self.gravity_load[WHEELSET_BOUNCE[0]])
            / WHEELS_PER_AXLE;
        let positions = self.wheel_positions(0.0);

        let mut x = DVector::zeros(n);
        let mut shapes = vec![0.0; nm];
        let mut rail_load = DVector::zeros(nm);
        for &xw in &positions {
            self.modal.shapes_at(xw, &mut shapes);
            for k in 0..nm {
                rail_load[k] += axle_load * shapes[k];
            }
        }
        let k_rail = self
            .stiffness
            .view((FIRST_RAIL_MODE, FIRST_RAIL_MODE), (nm, nm))
            .into_owned();
        let q = k_rail
            .lu()
            .solve(&rail_load)
            .ok_or_else(|| Error::NonFinite("singular rail stiffness".into()))?;
        x.rows_mut(FIRST_RAIL_MODE, nm).copy_from(&q);
        let delta0 = self.contact.compression_for(axle_load);
        for j in 0..WHEELSETS {
            x[WHEELSET_BOUNCE[j]] =
                self.modal.deflection(positions[j], q.as_slice()) + irregularity[j] + delta0;
        }
        // carbody and bogies given the wheelsets
        let free = 6;
        let k_ff = self.stiffness.view((0, 0), (free, free)).into_owned();
        let mut rhs = DVector::zeros(free);
        for i in 0..free {
            rhs[i] = self.gravity_load[i];
            for &w in &WHEELSET_BOUNCE {
                rhs[i] -= self.stiffness[(i, w)] * x[w];
            }
        }
        if let Some(xf) = k_ff.lu().solve(&rhs) {
            x.rows_mut(0, free).copy_from(&xf);
        }

        let mut f = vec![0.0; n];
        for _ in 0..30 {
            let state = self.forcing(0.0, x.as_slice(), irregularity, &mut f);
            let r = &self.stiffness * &x - DVector::from_column_slice(&f);
            let scale = f.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            if r.amax() <= 1e-12 * scale {
                return Ok(x);
            }
            let mut jac = self.stiffness.clone();
            for j in 0..WHEELSETS {
                let kc = self.contact.stiffness(state.compression[j]);
                if kc == 0.0 {
                    continue;
                }
                self.modal.shapes_at(positions[j], &mut shapes);
                // dδ/dx: +1 on the wheelset, −Z_k on the rail modes
                let w = WHEELSET_BOUNCE[j];
                let mut grad: Vec<(usize, f64)> = vec![(w, 1.0)];
                grad.extend((0..nm).map(|k| (FIRST_RAIL_MODE + k, -shapes[k])));
                // F_w = −2p, F_qk = p·Z_k
                let mut rows: Vec<(usize, f64)> = vec![(w, -WHEELS_PER_AXLE)];
                rows.extend((0..nm).map(|k| (FIRST_RAIL_MODE + k, shapes[k])));
                for &(ri, rc) in &rows {
                    for &(ci, cc) in &grad {
                        jac[(ri, ci)] -= rc * kc * cc;
                    }
                }
            }
            let dx = jac
                .lu()
                .solve(&(-r))
                .ok_or_else(|| Error::NonFinite("singular static Jacobian".into()))?;
            x += dx;
        }
        Err(Error::NonConvergence { time: 0.0 })
    }

    /// Sets the initial state to static equilibrium at rest.
    pub fn set_static_initial(&mut self, irregularity: &[f64; WHEELSETS]) -> Result<()> {
        self.initial_displacement = self.static_equilibrium(irregularity)?;
        self.initial_velocity = DVector::zeros(self.dim());
        Ok(())
    }

    /// The ten vehicle equations expressed on the 14 output channels.
    pub fn vehicle_equations(&self) -> EquationSet {
        let mut mass = DMatrix::zeros(VEHICLE_DOFS, OUTPUT_CHANNELS);
        let mut damping = DMatrix::zeros(VEHICLE_DOFS, OUTPUT_CHANNELS);
        let mut stiffness = DMatrix::zeros(VEHICLE_DOFS, OUTPUT_CHANNELS);
        for i in 0..VEHICLE_DOFS {
            mass[(i, i)] = self.mass[i];
            for j in 0..VEHICLE_DOFS {
                damping[(i, j)] = self.damping[(i, j)];
                stiffness[(i, j)] = self.stiffness[(i, j)];
            }
        }
        let contacts = (0..WHEELSETS)
            .map(|j| ContactTerm {
                equation: WHEELSET_BOUNCE[j],
                wheel_channel: WHEELSET_BOUNCE[j],
                rail_channel: VEHICLE_DOFS + j,
                excitation: j,
                gain: WHEELS_PER_AXLE,
                law: self.contact,
            })
            .collect();
        EquationSet {
            mass,
            damping,
            stiffness,
            load: self.gravity_load.rows(0, VEHICLE_DOFS).into_owned(),
            external: None,
            contacts,
        }
    }
}

/// Vehicle equations for a parameter set without assembling the rail.
pub fn vehicle_equations(params: &VtcdParams) -> Result<EquationSet> {
    params.rigid.validate()?;
    params.suspension.validate()?;
    let mut asm = Assembler::new(VEHICLE_DOFS);
    add_suspension(&mut asm, &params.suspension);
    let masses = vehicle_mass(&params.rigid);
    let mut mass = DMatrix::zeros(VEHICLE_DOFS, OUTPUT_CHANNELS);
    let mut damping = DMatrix::zeros(VEHICLE_DOFS, OUTPUT_CHANNELS);
    let mut stiffness = DMatrix::zeros(VEHICLE_DOFS, OUTPUT_CHANNELS);
    let mut load = DVector::zeros(VEHICLE_DOFS);
    for i in 0..VEHICLE_DOFS {
        mass[(i, i)] = masses[i];
        for j in 0..VEHICLE_DOFS {
            damping[(i, j)] = asm.c[(i, j)];
            stiffness[(i, j)] = asm.k[(i, j)];
        }
    }
    for i in [CARBODY_BOUNCE, BOGIE_BOUNCE[0], BOGIE_BOUNCE[1]]
        .into_iter()
        .chain(WHEELSET_BOUNCE)
    {
        load[i] = masses[i] * params.gravity;
    }
    let law = HertzContact::from_beam(&params.beam);
    let contacts = (0..WHEELSETS)
        .map(|j| ContactTerm {
            equation: WHEELSET_BOUNCE[j],
            wheel_channel: WHEELSET_BOUNCE[j],
            rail_channel: VEHICLE_DOFS + j,
            excitation: j,
            gain: WHEELS_PER_AXLE,
            law,
        })
        .collect();
    Ok(EquationSet {
        mass,
        damping,
        stiffness,
        load,
        external: None,
        contacts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modal::beam_modal;

    fn system() -> CodesSystem {
        let mut p = VtcdParams::nominal();
        p.beam.modes = 8;
        CodesSystem::from_params(&p).unwrap()
    }

    #[test]
    fn dimension_and_labels() {
        let sys = system();
        assert_eq!(sys.dim(), 18);
        assert_eq!(sys.labels[0], "Zc");
        assert_eq!(sys.labels[10], "q1");
        assert_eq!(sys.labels.len(), 18);
    }

    #[test]
    fn matrices_symmetric_mass_positive() {
        let sys = system();
        assert!(sys.mass.iter().all(|&m| m > 0.0));
        let n = sys.dim();
        for i in 0..n {
            for j in 0..n {
                let (k, kt) = (sys.stiffness[(i, j)], sys.stiffness[(j, i)]);
                assert!((k - kt).abs() <= 1e-9 * k.abs().max(1.0));
                let (c, ct) = (sys.damping[(i, j)], sys.damping[(j, i)]);
                assert!((c - ct).abs() <= 1e-9 * c.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rows_follow_force_element_pattern() {
        let p = VtcdParams::nominal();
        let sys = CodesSystem::from_params(&p).unwrap();
        let s = &p.suspension;
        let k = &sys.stiffness;
        let (ks, kp, lc, lt) = (
            s.secondary_stiffness,
            s.primary_stiffness,
            s.semi_bogie_spacing,
            s.semi_wheelbase,
        );
        // carbody bounce
        assert_eq!(k[(0, 0)], 2.0 * ks);
        assert_eq!(k[(0, 2)], -ks);
        assert_eq!(k[(0, 4)], -ks);
        assert_eq!(k[(0, 1)], 0.0);
        // carbody pitch
        assert!((k[(1, 1)] - 2.0 * ks * lc * lc).abs() < 1e-6);
        assert_eq!(k[(1, 2)], ks * lc);
        assert_eq!(k[(1, 4)], -ks * lc);
        // bogie 1 bounce
        assert_eq!(k[(2, 2)], 2.0 * kp + ks);
        assert_eq!(k[(2, 6)], -kp);
        assert_eq!(k[(2, 7)], -kp);
        assert_eq!(k[(2, 1)], ks * lc);
        // bogie 1 pitch
        assert!((k[(3, 3)] - 2.0 * kp * lt * lt).abs() < 1e-6);
        assert_eq!(k[(3, 6)], kp * lt);
        assert_eq!(k[(3, 7)], -kp * lt);
        // wheelsets
        assert_eq!(k[(6, 6)], kp);
        assert_eq!(k[(6, 2)], -kp);
        assert_eq!(k[(9, 4)], -kp);
        assert_eq!(k[(9, 5)], -kp * lt);
        // no linear coupling between vehicle and rail
        for i in 0..VEHICLE_DOFS {
            for j in VEHICLE_DOFS..sys.dim() {
                assert_eq!(k[(i, j)], 0.0);
                assert_eq!(sys.damping[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn rail_rows_carry_fastener_sums() {
        let p = VtcdParams::nominal();
        let modal = beam_modal(&p.beam).unwrap();
        let sys = assemble_codes(&p.rigid, &p.suspension, &p.beam, &modal).unwrap();
        let kb = p.suspension.fastener_stiffness;
        let (k, h) = (3, 5);
        let sum: f64 = p
            .beam
            .fastener_positions
            .iter()
            .map(|&x| kb * modal.shape(k, x) * modal.shape(h, x))
            .sum();
        let got = sys.stiffness[(FIRST_RAIL_MODE + k - 1, FIRST_RAIL_MODE + h - 1)];
        assert!((got - sum).abs() <= 1e-9 * sum.abs().max(1.0));
        let diag: f64 = p
            .beam
            .fastener_positions
            .iter()
            .map(|&x| kb * modal.shape(k, x).powi(2))
            .sum::<f64>()
            + modal.frequencies[k - 1].powi(2);
        let got = sys.stiffness[(FIRST_RAIL_MODE + k - 1, FIRST_RAIL_MODE + k - 1)];
        assert!((got - diag).abs() <= 1e-9 * diag);
        let beam_term = p.beam.elastic_modulus * p.beam.second_moment / p.beam.mass_per_length
            * (k as f64 * std::f64::consts::PI / p.beam.length).powi(4);
        assert!((modal.frequencies[k - 1].powi(2) - beam_term).abs() < 1e-9 * beam_term);
    }

    #[test]
    fn null_suspension_decouples_vehicle() {
        let mut p = VtcdParams::nominal();
        p.beam.modes = 4;
        p.gravity = 0.0;
        let s = &mut p.suspension;
        s.primary_stiffness = 0.0;
        s.primary_damping = 0.0;
        s.secondary_stiffness = 0.0;
        s.secondary_damping = 0.0;
        let sys = CodesSystem::from_params(&p).unwrap();
        for i in 0..VEHICLE_DOFS {
            for j in 0..VEHICLE_DOFS {
                assert_eq!(sys.stiffness[(i, j)], 0.0);
                assert_eq!(sys.damping[(i, j)], 0.0);
            }
        }
        assert!(sys.gravity_load.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn mode_count_mismatch_rejected() {
        let p = VtcdParams::nominal();
        let mut beam = p.beam.clone();
        beam.modes = 5;
        let modal = beam_modal(&beam).unwrap();
        assert!(matches!(
            assemble_codes(&p.rigid, &p.suspension, &p.beam, &modal),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn contact_branches() {
        let law = HertzContact {
            constant: 4.0e-8,
            exponent: 1.5,
        };
        assert_eq!(law.force(0.0), 0.0);
        assert_eq!(law.force(-1e-4), 0.0);
        assert!((law.force(4.0e-8) - 1.0).abs() < 1e-12);
        assert!(law.force(1e-12) >= 0.0 && law.force(1e-12) < 1e-3);
        let lin = HertzContact {
            constant: 2.0,
            exponent: 1.0,
        };
        assert_eq!(lin.force(3.0), 1.5);
        let d = 7e-5;
        assert!((law.force(law.compression_for(7e4)) - 7e4).abs() < 1e-6);
        let h = 1e-10;
        let fd = (law.force(d + h) - law.force(d - h)) / (2.0 * h);
        assert!((fd - law.stiffness(d)).abs() < 1e-6 * fd);
    }

    #[test]
    fn contact_force_uses_rail_deflection() {
        let sys = system();
        let mut x = vec![0.0; sys.dim()];
        x[FIRST_RAIL_MODE] = 1e-3;
        x[WHEELSET_BOUNCE[2]] = 2e-3;
        let pos = sys.wheel_positions(0.0);
        let irre = [0.0, 0.0, 1e-4, 0.0];
        let st = contact_force(&x, &irre, &pos, &sys.modal, sys.contact);
        let rail = sys.modal.shape(1, pos[2]) * 1e-3;
        assert!((st.compression[2] - (2e-3 - rail - 1e-4)).abs() < 1e-15);
        assert!(st.force[2] > 0.0);
        assert_eq!(st.force[0], 0.0);
    }

    #[test]
    fn static_equilibrium_balances_forces() {
        let sys = system();
        let irre = [1e-4, -2e-4, 0.0, 5e-5];
        let x = sys.static_equilibrium(&irre).unwrap();
        let n = sys.dim();
        let mut r = vec![0.0; n];
        let zeros = vec![0.0; n];
        sys.residual(0.0, x.as_slice(), &zeros, &zeros, &irre, &mut r);
        let scale = sys.gravity_load.amax();
        assert!(r.iter().all(|v| v.abs() < 1e-9 * scale), "{r:?}");
        // every wheel carries the same load
        let mut f = vec![0.0; n];
        let st = sys.forcing(0.0, x.as_slice(), &irre, &mut f);
        for j in 1..4 {
            assert!((st.force[j] - st.force[0]).abs() < 1e-6 * st.force[0]);
        }
    }
}
