use mbdno_core::excitation::{synthesize, NoIrregularity, ProfileExcitation, PsdModel, WheelExcitation};
use mbdno_core::integrate::{integrate, run, Excited, IntegratorConfig, Scheme, TrajectoryRecord};
use mbdno_core::system::{CARBODY_PITCH, FIRST_RAIL_MODE, WHEELSET_BOUNCE};
use mbdno_core::{beam_modal, reduce_rail_output, BeamParams, CodesSystem, VtcdParams};
use nalgebra::DVector;
use ndarray::{Array2, ArrayView1};

fn rel_l2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let n: f64 = b.iter().map(|y| y * y).sum();
    (d / n).sqrt()
}

fn nominal_case(p: &VtcdParams, seed: u64) -> (CodesSystem, ProfileExcitation) {
    let prof = synthesize(&PsdModel::placeholder(), p.beam.length, 0.25, seed).unwrap();
    let mut sys = CodesSystem::from_params(p).unwrap();
    let exc = ProfileExcitation::new(prof, sys.wheel_origin, sys.speed, 1.0).unwrap();
    sys.set_static_initial(&exc.irregularity(0.0)).unwrap();
    (sys, exc)
}

#[test]
fn shipped_rail_frequencies_match_high_precision_oracle() {
    // (kπ/l)²·√(EI/m_r) for the shipped rail, evaluated at 30 significant digits
    let oracle = [
        (1, 0.127418910562547683),
        (2, 0.50967564225019073199),
        (10, 12.7418910562547683),
        (40, 203.8702569000762928),
    ];
    let modal = beam_modal(&VtcdParams::nominal().beam).unwrap();
    for (k, w) in oracle {
        let got = modal.frequencies[k - 1];
        assert!((got - w).abs() <= 1e-13 * w, "mode {k}: {got} vs {w}");
    }
    let amp = modal.shape(1, 80.0);
    assert!((amp - 0.014357387110606145118).abs() < 1e-16, "{amp}");
}

#[test]
fn fine_step_solution_satisfies_equations() {
    let p = VtcdParams::nominal();
    let (sys, exc) = nominal_case(&p, 3);
    let cfg = IntegratorConfig {
        dt: 1e-5,
        duration: 0.2,
        output_stride: 100,
        ..Default::default()
    };
    let rec = integrate(&sys, &exc, &cfg).unwrap();
    assert!(rec.residual_ratio < 1e-6, "{}", rec.residual_ratio);
}

#[test]
fn three_schemes_agree_on_nominal_case() {
    let p = VtcdParams::nominal();
    let (sys, exc) = nominal_case(&p, 5);
    let recs: Vec<TrajectoryRecord> = [Scheme::Zhai, Scheme::Newmark, Scheme::Rk4]
        .into_iter()
        .map(|scheme| {
            integrate(&sys, &exc, &IntegratorConfig { scheme, ..Default::default() }).unwrap()
        })
        .collect();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        for c in 0..14 {
            let e = rel_l2(recs[i].x.row(c), recs[j].x.row(c));
            assert!(e < 5e-3, "schemes {i}/{j} channel {c}: {e}");
        }
    }
    for r in &recs {
        assert!(r.is_finite());
        assert!(r.residual_ratio <= 1e-4);
    }
    // suspension filtering: the carbody moves far less violently than a wheelset
    let peak = |m: &Array2<f64>, c: usize| m.row(c).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    assert!(peak(&recs[0].a, 0) < 0.05 * peak(&recs[0].a, WHEELSET_BOUNCE[0]));
}

#[test]
fn output_stride_is_plain_decimation() {
    let p = VtcdParams::nominal();
    let (sys, exc) = nominal_case(&p, 9);
    let fine = IntegratorConfig {
        duration: 0.05,
        output_stride: 1,
        dt: 1e-4,
        ..Default::default()
    };
    let coarse = IntegratorConfig { output_stride: 10, ..fine.clone() };
    let a = integrate(&sys, &exc, &fine).unwrap();
    let b = integrate(&sys, &exc, &coarse).unwrap();
    assert!((b.dt_out - 1e-3).abs() < 1e-18);
    for i in 0..b.len() {
        for c in 0..14 {
            assert_eq!(b.x[(c, i)], a.x[(c, 10 * i)]);
            assert_eq!(b.a[(c, i)], a.a[(c, 10 * i)]);
        }
    }
}

#[test]
fn reported_velocity_matches_differenced_displacement() {
    let p = VtcdParams::nominal();
    let (sys, exc) = nominal_case(&p, 4);
    // fine output grid so the O(h²) differencing error of kHz rail content stays small
    let cfg = IntegratorConfig {
        dt: 1e-5,
        output_stride: 1,
        duration: 0.05,
        ..Default::default()
    };
    let r = integrate(&sys, &exc, &cfg).unwrap();
    let h = r.dt_out;
    for (lo, hi, name) in [(&r.x, &r.v, "velocity"), (&r.v, &r.a, "acceleration")] {
        for c in 0..14 {
            let scale = hi.row(c).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for i in 1..r.len() - 1 {
                let fd = (lo[(c, i + 1)] - lo[(c, i - 1)]) / (2.0 * h);
                let d = (fd - hi[(c, i)]).abs();
                assert!(d < 2e-3 * scale, "{name} channel {c} sample {i}: {fd} vs {}", hi[(c, i)]);
            }
        }
    }
}

#[test]
fn gravity_only_settles_to_static_equilibrium() {
    let mut p = VtcdParams::nominal();
    p.beam.speed = 0.0;
    p.beam.modes = 20;
    let mut sys = CodesSystem::from_params(&p).unwrap();
    let target = sys.static_equilibrium(&[0.0; 4]).unwrap();
    // linearized oracle: K x = F_gravity + contact stiffness about the static load
    sys.initial_displacement = &target * 0.98;
    let cfg = IntegratorConfig {
        duration: 8.0,
        output_stride: 100,
        check_residual: false,
        ..Default::default()
    };
    let excited = Excited { system: &sys, excitation: &NoIrregularity };
    let mut last = None;
    run(&excited, sys.initial_displacement.clone(), DVector::zeros(sys.dim()), &cfg, 80_000, |_, s| {
        last = Some(s.clone())
    })
    .unwrap();
    let s = last.unwrap();
    let err = (&s.x - &target).amax() / target.amax();
    assert!(err < 1e-4, "{err}");
    assert!(s.v.amax() < 1e-4);
}

#[test]
fn symmetric_vehicle_does_not_pitch() {
    struct Mirror;
    impl WheelExcitation for Mirror {
        fn irregularity(&self, t: f64) -> [f64; 4] {
            let a = 2e-4 * (37.0 * t).sin();
            let b = 1e-4 * (91.0 * t).cos() - 1e-4;
            [a, b, b, a]
        }
    }
    let mut p = VtcdParams::nominal();
    p.beam.speed = 0.0;
    let span = p.suspension.semi_bogie_spacing + p.suspension.semi_wheelbase;
    p.beam.entry_position = 0.5 * p.beam.length - span;
    let mut sys = CodesSystem::from_params(&p).unwrap();
    sys.set_static_initial(&Mirror.irregularity(0.0)).unwrap();
    let rec = integrate(&sys, &Mirror, &IntegratorConfig { duration: 0.5, ..Default::default() }).unwrap();
    let bogie = rec.x.row(3).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let car = rec.x.row(CARBODY_PITCH).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(bogie > 1e-6);
    assert!(car < 1e-9 * bogie.max(1.0), "{car} vs {bogie}");
}

#[test]
fn rail_output_converges_with_mode_count_on_short_rail() {
    // 24 m rail with a soft fastener layer so that 40 modes resolve the
    // deflection basin; wheels creep forward at 1 m/s
    let run_nm = |nm: usize| {
        let mut p = VtcdParams::nominal();
        p.beam.modes = nm;
        p.beam.length = 24.0;
        p.beam.fastener_positions = BeamParams::uniform_fasteners(24.0, 0.625);
        p.beam.speed = 1.0;
        p.beam.entry_position = 12.0 - 10.0 - 0.5;
        p.suspension.fastener_stiffness *= 0.05;
        let prof = synthesize(&PsdModel::placeholder().with_band(1.0, 20.0).unwrap(), 200.0, 0.25, 7).unwrap();
        let mut sys = CodesSystem::from_params(&p).unwrap();
        let exc = ProfileExcitation::new(prof, sys.wheel_origin, sys.speed, 1.0).unwrap();
        sys.set_static_initial(&exc.irregularity(0.0)).unwrap();
        let cfg = IntegratorConfig {
            scheme: Scheme::Newmark,
            retain_modal: true,
            ..Default::default()
        };
        (sys.clone(), integrate(&sys, &exc, &cfg).unwrap())
    };
    let (sys40, a) = run_nm(40);
    let (_, b) = run_nm(80);
    for c in 10..14 {
        let e = rel_l2(a.x.row(c), b.x.row(c));
        assert!(e < 0.02, "rail channel {c}: {e}");
    }
    // the recorded rail channels are the modal reduction of the retained q
    let positions: Vec<[f64; 4]> = a.times().iter().map(|&t| sys40.wheel_positions(t)).collect();
    let reduced = reduce_rail_output(&a.modal.as_ref().unwrap().q, &sys40.modal, &positions).unwrap();
    for j in 0..4 {
        for i in 0..a.len() {
            assert!((reduced[(j, i)] - a.x[(10 + j, i)]).abs() < 1e-15);
        }
    }
}

#[test]
fn stiff_fasteners_newmark_stays_bounded_rk4_limit() {
    let build = |scale: f64| {
        let mut p = VtcdParams::nominal();
        p.suspension.fastener_stiffness *= scale;
        nominal_case(&p, 8)
    };
    let cfg = |scheme| IntegratorConfig { scheme, duration: 0.3, ..Default::default() };
    // ×100: highest rail frequency ≈ 1.26e4 rad/s, ω·dt ≈ 1.3, inside every scheme's limit
    let (sys, exc) = build(100.0);
    let nm = integrate(&sys, &exc, &cfg(Scheme::Newmark)).unwrap();
    let rk = integrate(&sys, &exc, &cfg(Scheme::Rk4)).unwrap();
    for c in 0..14 {
        // Newmark's period error at ω·dt ≈ 1.3 shows up in the rail channels
        let e = rel_l2(nm.x.row(c), rk.x.row(c));
        assert!(e < 2e-2, "channel {c}: {e}");
    }
    // ×1000: ω·dt ≈ 4 exceeds the RK4 limit of ≈2.83; Newmark remains bounded
    let (sys, exc) = build(1000.0);
    let nm = integrate(&sys, &exc, &cfg(Scheme::Newmark)).unwrap();
    assert!(nm.is_finite());
    let peak = nm.x.row(10).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(peak < 1e-4, "{peak}");
    let rk = integrate(&sys, &exc, &cfg(Scheme::Rk4));
    assert!(matches!(rk, Err(e) if e.is_numerical()));
}

#[test]
fn window_leaving_the_rail_is_rejected() {
    let mut p = VtcdParams::nominal();
    p.beam.entry_position = 100.0;
    let sys = CodesSystem::from_params(&p).unwrap();
    let r = integrate(&sys, &NoIrregularity, &IntegratorConfig::default());
    assert!(matches!(r, Err(mbdno_core::Error::WindowOutOfRange(_))));
    assert_eq!(FIRST_RAIL_MODE, 10);
}
