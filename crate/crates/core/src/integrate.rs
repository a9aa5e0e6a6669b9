//! Time integration of `M ẍ + C ẋ + K x = F(t, x)` with diagonal M.
//!
//! Three schemes share one driver: Zhai's explicit two-step method, the
//! Newmark average-acceleration method with fixed-point contact iteration,
//! and classical RK4. All of them report x, ẋ and ẍ at every step.

use nalgebra::{DMatrix, DVector, LU};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::excitation::WheelExcitation;
use crate::system::{CodesSystem, FIRST_RAIL_MODE, OUTPUT_CHANNELS, VEHICLE_DOFS, WHEELSETS};

/// A second-order system with diagonal mass and displacement-dependent forcing.
pub trait SecondOrderSystem {
    fn mass_diagonal(&self) -> &[f64];
    fn damping(&self) -> &DMatrix<f64>;
    fn stiffness(&self) -> &DMatrix<f64>;
    /// Writes F(t, x) into `out`.
    fn forcing(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn dim(&self) -> usize {
        self.mass_diagonal().len()
    }
}

/// Linear system with constant load, used for analytic checks.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub mass: Vec<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub load: Vec<f64>,
}

impl LinearSystem {
    pub fn oscillator(mass: f64, damping: f64, stiffness: f64) -> Self {
        Self {
            mass: vec![mass],
            damping: DMatrix::from_element(1, 1, damping),
            stiffness: DMatrix::from_element(1, 1, stiffness),
            load: vec![0.0],
        }
    }
}

impl SecondOrderSystem for LinearSystem {
    fn mass_diagonal(&self) -> &[f64] {
        &self.mass
    }
    fn damping(&self) -> &DMatrix<f64> {
        &self.damping
    }
    fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }
    fn forcing(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.load);
    }
}

/// A vehicle-track system driven by a wheel excitation.
pub struct Excited<'a> {
    pub system: &'a CodesSystem,
    pub excitation: &'a dyn WheelExcitation,
}

impl SecondOrderSystem for Excited<'_> {
    fn mass_diagonal(&self) -> &[f64] {
        self.system.mass.as_slice()
    }
    fn damping(&self) -> &DMatrix<f64> {
        &self.system.damping
    }
    fn stiffness(&self) -> &DMatrix<f64> {
        &self.system.stiffness
    }
    fn forcing(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let irre = self.excitation.irregularity(t);
        self.system.forcing(t, x, &irre, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Zhai,
    Newmark,
    Rk4,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zhai" => Ok(Self::Zhai),
            "newmark" => Ok(Self::Newmark),
            "rk4" => Ok(Self::Rk4),
            other => Err(invalid(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    /// Window length T, s.
    pub duration: f64,
    pub output_stride: usize,
    pub zhai_psi: f64,
    pub zhai_phi: f64,
    pub newmark_beta: f64,
    pub newmark_gamma: f64,
    pub fixed_point_tolerance: f64,
    pub fixed_point_iterations: usize,
    pub retain_modal: bool,
    /// Evaluate the equation residual at every fine step.
    pub check_residual: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Zhai,
            dt: 1e-4,
            duration: 1.0,
            output_stride: 10,
            zhai_psi: 0.5,
            zhai_phi: 0.5,
            newmark_beta: 0.25,
            newmark_gamma: 0.5,
            fixed_point_tolerance: 1e-10,
            fixed_point_iterations: 20,
            retain_modal: false,
            check_residual: true,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        if self.output_stride == 0 {
            return Err(invalid("output stride must be at least 1"));
        }
        if !(self.duration >= self.dt_out()) {
            return Err(invalid("duration must cover at least one output interval"));
        }
        if !(self.newmark_beta > 0.0 && self.newmark_gamma >= 0.0) {
            return Err(invalid("Newmark parameters need beta > 0, gamma >= 0"));
        }
        if !(self.fixed_point_tolerance > 0.0) || self.fixed_point_iterations == 0 {
            return Err(invalid("fixed-point tolerance and iteration cap must be positive"));
        }
        Ok(())
    }

    pub fn dt_out(&self) -> f64 {
        self.dt * self.output_stride as f64
    }

    /// Output samples at `t_i = i·dt_out`, `i < n_out`.
    pub fn n_out(&self) -> usize {
        (self.duration / self.dt_out()).round() as usize
    }

    pub fn fine_steps(&self) -> usize {
        (self.n_out().saturating_sub(1)) * self.output_stride
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub a: DVector<f64>,
}

/// ẍ from the equations of motion; `work` receives F(t, x).
fn acceleration<S: SecondOrderSystem + ?Sized>(
    sys: &S,
    t: f64,
    x: &DVector<f64>,
    v: &DVector<f64>,
    work: &mut DVector<f64>,
) -> DVector<f64> {
    sys.forcing(t, x.as_slice(), work.as_mut_slice());
    let mut rhs = work.clone();
    rhs.gemv(-1.0, sys.damping(), v, 1.0);
    rhs.gemv(-1.0, sys.stiffness(), x, 1.0);
    for (r, m) in rhs.iter_mut().zip(sys.mass_diagonal()) {
        *r /= m;
    }
    rhs
}

/// State at `t` with a consistent acceleration.
pub fn initial_state<S: SecondOrderSystem + ?Sized>(sys: &S, t: f64, x: DVector<f64>, v: DVector<f64>) -> State {
    let mut f = DVector::zeros(sys.dim());
    let a = acceleration(sys, t, &x, &v, &mut f);
    State { t, x, v, a }
}

/// `(‖M a + C v + K x − F‖∞, ‖F‖∞)`.
pub fn residual_norms<S: SecondOrderSystem + ?Sized>(sys: &S, s: &State) -> (f64, f64) {
    let n = sys.dim();
    let mut f = vec![0.0; n];
    sys.forcing(s.t, s.x.as_slice(), &mut f);
    let (c, k, m) = (sys.damping(), sys.stiffness(), sys.mass_diagonal());
    let mut r_max = 0.0_f64;
    for i in 0..n {
        let mut r = m[i] * s.a[i] - f[i];
        for j in 0..n {
            r += c[(i, j)] * s.v[j] + k[(i, j)] * s.x[j];
        }
        r_max = r_max.max(r.abs());
    }
    (r_max, f.iter().fold(0.0_f64, |a, v| a.max(v.abs())))
}

/// One explicit Zhai step; `prev_a` is the acceleration one step back.
pub fn step_zhai<S: SecondOrderSystem + ?Sized>(
    sys: &S,
    state: &State,
    prev_a: &DVector<f64>,
    dt: f64,
    psi: f64,
    phi: f64,
) -> State {
    let x = &state.x + &state.v * dt + &state.a * ((0.5 + psi) * dt * dt) - prev_a * (psi * dt * dt);
    let v = &state.v + &state.a * ((1.0 + phi) * dt) - prev_a * (phi * dt);
    let t = state.t + dt;
    let mut f = DVector::zeros(sys.dim());
    let a = acceleration(sys, t, &x, &v, &mut f);
    State { t, x, v, a }
}

/// Newmark stepper in acceleration form. `M + γ dt C + β dt² K` is
/// factorized once. Solving for the new acceleration directly avoids the
/// 1/dt² roundoff amplification of recovering it from displacements.
pub struct NewmarkSolver {
    pub dt: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl NewmarkSolver {
    pub fn new<S: SecondOrderSystem + ?Sized>(sys: &S, dt: f64, beta: f64, gamma: f64) -> Self {
        let mut m_eff = sys.stiffness() * (beta * dt * dt) + sys.damping() * (gamma * dt);
        for (i, m) in sys.mass_diagonal().iter().enumerate() {
            m_eff[(i, i)] += m;
        }
        Self {
            dt,
            beta,
            gamma,
            tolerance: 1e-10,
            max_iterations: 20,
            lu: m_eff.lu(),
        }
    }

    /// One step; `None` when the contact fixed point does not converge.
    pub fn step<S: SecondOrderSystem + ?Sized>(&self, sys: &S, state: &State) -> Option<State> {
        let (dt, b, g) = (self.dt, self.beta, self.gamma);
        let n = sys.dim();
        let x_pred = &state.x + &state.v * dt + &state.a * ((0.5 - b) * dt * dt);
        let v_pred = &state.v + &state.a * ((1.0 - g) * dt);
        let internal = sys.stiffness() * &x_pred + sys.damping() * &v_pred;

        let t = state.t + dt;
        let bdt2 = b * dt * dt;
        let mut x = &x_pred + &state.a * bdt2;
        let mut f = DVector::zeros(n);
        sys.forcing(t, x.as_slice(), f.as_mut_slice());
        let mut converged = false;
        let mut a = state.a.clone();
        for _ in 0..self.max_iterations {
            a = self.lu.solve(&(&f - &internal))?;
            x = &x_pred + &a * bdt2;
            let mut f_new = DVector::zeros(n);
            sys.forcing(t, x.as_slice(), f_new.as_mut_slice());
            let change = (&f_new - &f).amax();
            let scale = f_new.amax().max(f64::MIN_POSITIVE);
            f = f_new;
            if change <= self.tolerance * scale {
                converged = true;
                break;
            }
        }
        if !converged || x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let v = v_pred + &a * (g * dt);
        Some(State { t, x, v, a })
    }
}

/// One classical Runge-Kutta step on (x, ẋ).
pub fn step_rk4<S: SecondOrderSystem + ?Sized>(sys: &S, state: &State, dt: f64) -> State {
    let mut f = DVector::zeros(sys.dim());
    let (t, x, v) = (state.t, &state.x, &state.v);
    let k1x = v.clone();
    let k1v = state.a.clone();
    let x2 = x + &k1x * (0.5 * dt);
    let v2 = v + &k1v * (0.5 * dt);
    let k2v = acceleration(sys, t + 0.5 * dt, &x2, &v2, &mut f);
    let k2x = v2;
    let x3 = x + &k2x * (0.5 * dt);
    let v3 = v + &k2v * (0.5 * dt);
    let k3v = acceleration(sys, t + 0.5 * dt, &x3, &v3, &mut f);
    let k3x = v3;
    let x4 = x + &k3x * dt;
    let v4 = v + &k3v * dt;
    let k4v = acceleration(sys, t + dt, &x4, &v4, &mut f);
    let k4x = v4;
    let x = x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0);
    let v = v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
    let a = acceleration(sys, t + dt, &x, &v, &mut f);
    State { t: t + dt, x, v, a }
}

/// Summary of a fine-grid run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    /// `max‖r‖∞ / max‖F‖∞` over the fine grid, NaN when unchecked.
    pub residual_ratio: f64,
    pub halved_steps: usize,
}

/// Advances `fine_steps` steps from (x0, v0) at t = 0, calling `observe`
/// with the fine-step index on every state including the initial one.
pub fn run<S: SecondOrderSystem + ?Sized>(
    sys: &S,
    x0: DVector<f64>,
    v0: DVector<f64>,
    config: &IntegratorConfig,
    fine_steps: usize,
    mut observe: impl FnMut(usize, &State),
) -> Result<RunStats> {
    config.validate()?;
    let dt = config.dt;
    let scale = x0.amax().max(v0.amax()).max(1e-3);
    let limit = 1e6 * scale;
    let mut state = initial_state(sys, 0.0, x0, v0);
    let mut prev_a = state.a.clone();
    let newmark = |dt: f64| {
        let mut s = NewmarkSolver::new(sys, dt, config.newmark_beta, config.newmark_gamma);
        s.tolerance = config.fixed_point_tolerance;
        s.max_iterations = config.fixed_point_iterations;
        s
    };
    let needs_newmark = matches!(config.scheme, Scheme::Newmark | Scheme::Zhai);
    let solver = needs_newmark.then(|| newmark(dt));
    let mut half_solver: Option<NewmarkSolver> = None;
    let (mut r_max, mut f_max) = (0.0_f64, 0.0_f64);
    let mut halved = 0;

    let mut check = |s: &State| {
        if config.check_residual {
            let (r, f) = residual_norms(sys, s);
            r_max = r_max.max(r);
            f_max = f_max.max(f);
        }
    };
    check(&state);
    observe(0, &state);
    for step in 1..=fine_steps {
        let next = match config.scheme {
            Scheme::Rk4 => step_rk4(sys, &state, dt),
            Scheme::Zhai if step > 1 => step_zhai(sys, &state, &prev_a, dt, config.zhai_psi, config.zhai_phi),
            Scheme::Zhai | Scheme::Newmark => {
                let solver = solver.as_ref().expect("newmark solver");
                match solver.step(sys, &state) {
                    Some(s) => s,
                    None => {
                        halved += 1;
                        let hs = half_solver.get_or_insert_with(|| newmark(0.5 * dt));
                        let mid = hs.step(sys, &state).ok_or(Error::NonConvergence { time: state.t })?;
                        let mut end = hs.step(sys, &mid).ok_or(Error::NonConvergence { time: mid.t })?;
                        end.t = state.t + dt;
                        end
                    }
                }
            }
        };
        let norm = next.x.amax().max(next.v.amax());
        if !norm.is_finite() || next.a.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite(format!("state at t = {}", next.t)));
        }
        if norm > limit {
            return Err(Error::Divergence { time: next.t, norm });
        }
        // keep the time grid exact against accumulated rounding
        let mut next = next;
        next.t = step as f64 * dt;
        prev_a = std::mem::replace(&mut state, next).a;
        check(&state);
        observe(step, &state);
    }
    Ok(RunStats {
        steps: fine_steps,
        residual_ratio: if config.check_residual { r_max / f_max.max(f64::MIN_POSITIVE) } else { f64::NAN },
        halved_steps: halved,
    })
}

/// Modal coordinates and their derivatives, `[NM × n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalSeries {
    pub q: Array2<f64>,
    pub qd: Array2<f64>,
    pub qdd: Array2<f64>,
}

/// Output of one integration window.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub dt_out: f64,
    /// Varied parameter vector; empty when not produced by the dataset.
    pub params: Vec<f64>,
    /// `Irre_j(t_i)`, `[4 × n]`.
    pub irregularity: Array2<f64>,
    /// Channel-major outputs `[14 × n]`.
    pub x: Array2<f64>,
    pub v: Array2<f64>,
    pub a: Array2<f64>,
    pub modal: Option<ModalSeries>,
    pub residual_ratio: f64,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| i as f64 * self.dt_out).collect()
    }

    pub fn is_finite(&self) -> bool {
        [&self.x, &self.v, &self.a, &self.irregularity]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// Integrates the system from its stored initial state over the configured window.
///
/// Rail channels are the rail displacement under each moving wheel and its
/// total time derivatives, so `v` and `a` are the derivatives of `x` along
/// the output grid.
pub fn integrate(
    system: &CodesSystem,
    excitation: &dyn WheelExcitation,
    config: &IntegratorConfig,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    let n_out = config.n_out();
    let t_end = config.fine_steps() as f64 * config.dt;
    let len = system.modal.length;
    for (x0, x1) in system.wheel_positions(0.0).iter().zip(system.wheel_positions(t_end)) {
        if x0.min(x1) < 0.0 || x0.max(x1) > len {
            return Err(Error::WindowOutOfRange(format!(
                "wheel travels over [{}, {}] m on a {len} m rail",
                x0.min(x1),
                x0.max(x1)
            )));
        }
    }
    let nm = system.mode_count();
    let mut x = Array2::zeros((OUTPUT_CHANNELS, n_out));
    let mut v = Array2::zeros((OUTPUT_CHANNELS, n_out));
    let mut a = Array2::zeros((OUTPUT_CHANNELS, n_out));
    let mut irre = Array2::zeros((WHEELSETS, n_out));
    let mut modal = config.retain_modal.then(|| ModalSeries {
        q: Array2::zeros((nm, n_out)),
        qd: Array2::zeros((nm, n_out)),
        qdd: Array2::zeros((nm, n_out)),
    });
    let (mut z, mut dz, mut ddz) = (vec![0.0; nm], vec![0.0; nm], vec![0.0; nm]);
    let speed = system.speed;
    let sys = Excited { system, excitation };
    let stats = run(
        &sys,
        system.initial_displacement.clone(),
        system.initial_velocity.clone(),
        config,
        config.fine_steps(),
        |step, s| {
            if step % config.output_stride != 0 {
                return;
            }
            let i = step / config.output_stride;
            for c in 0..VEHICLE_DOFS {
                x[(c, i)] = s.x[c];
                v[(c, i)] = s.v[c];
                a[(c, i)] = s.a[c];
            }
            let q = s.x.rows(FIRST_RAIL_MODE, nm);
            let qd = s.v.rows(FIRST_RAIL_MODE, nm);
            let qdd = s.a.rows(FIRST_RAIL_MODE, nm);
            for (j, pos) in system.wheel_positions(s.t).into_iter().enumerate() {
                system.modal.shape_derivatives_at(pos, &mut z, &mut dz, &mut ddz);
                let (mut r, mut rd, mut rdd) = (0.0, 0.0, 0.0);
                for k in 0..nm {
                    r += z[k] * q[k];
                    rd += z[k] * qd[k] + speed * dz[k] * q[k];
                    rdd += z[k] * qdd[k] + 2.0 * speed * dz[k] * qd[k] + speed * speed * ddz[k] * q[k];
                }
                x[(VEHICLE_DOFS + j, i)] = r;
                v[(VEHICLE_DOFS + j, i)] = rd;
                a[(VEHICLE_DOFS + j, i)] = rdd;
            }
            for (j, r) in excitation.irregularity(s.t).into_iter().enumerate() {
                irre[(j, i)] = r;
            }
            if let Some(m) = modal.as_mut() {
                for k in 0..nm {
                    m.q[(k, i)] = q[k];
                    m.qd[(k, i)] = qd[k];
                    m.qdd[(k, i)] = qdd[k];
                }
            }
        },
    )?;
    if stats.halved_steps > 0 {
        log::debug!("{} Newmark steps needed a halved step", stats.halved_steps);
    }
    Ok(TrajectoryRecord {
        dt_out: config.dt_out(),
        params: Vec::new(),
        irregularity: irre,
        x,
        v,
        a,
        modal,
        residual_ratio: stats.residual_ratio,
    })
}
