mod common;

use std::sync::Arc;

use common::{exo_signal, exo_system, rk4, sample_exo_states, seeded, WorstCase};
use lprev_cbf::baselines::prev_cbf;
use lprev_cbf::lprev::{extremal_inputs, LPrevEngine};
use lprev_cbf::matops::Vector;
use lprev_cbf::plant::{DisturbanceSignal, ZeroDisturbance};
use lprev_cbf::sim::{lane_keeping, LaneParams};
use rand::RngExt;

const STEP: f64 = 0.001;

fn engines(u_m: f64, t_p: f64) -> (LPrevEngine, Arc<dyn DisturbanceSignal>) {
    (LPrevEngine::new(exo_system(u_m, 0.43, t_p), STEP).unwrap(), exo_signal(0.43))
}

#[test]
fn stopping_time_matches_worst_case_simulation() {
    let mut rng = seeded(1);
    let mut worst = 0.0f64;
    for (i, (t, z)) in sample_exo_states(&mut rng, 100, 0.01).into_iter().enumerate() {
        let u_m = if i % 2 == 0 { 1.119 } else { 2.0 };
        let (engine, signal) = engines(u_m, 0.010);
        let prev = engine.preview_window(&signal, t).unwrap();
        let t_s = engine.stopping_time(&z, &prev).unwrap();
        let wc = WorstCase::new(engine.system(), signal.as_ref(), t, &z);
        let oracle = wc.stop_time(&z, 1e-5, 30.0).expect("oracle found no stop");
        worst = worst.max((t_s - oracle).abs());
        assert!((t_s - oracle).abs() <= 1e-4, "z {z:?} at t {t}: {t_s} vs {oracle}");
    }
    eprintln!("max |T_s - oracle| = {worst:.3e}");
}

#[test]
fn worst_case_state_and_barrier_match_simulation() {
    let mut rng = seeded(2);
    for (t, z) in sample_exo_states(&mut rng, 40, 0.01) {
        let (engine, signal) = engines(1.5, 0.010);
        let prev = engine.preview_window(&signal, t).unwrap();
        let eval = engine.barrier(&z, &prev).unwrap();
        let wc = WorstCase::new(engine.system(), signal.as_ref(), t, &z);
        let z_w = wc.state_at(&z, eval.t_s, 1e-5);
        assert!((&eval.z_w - &z_w).amax() <= 1e-5, "{} vs {}", eval.z_w, z_w);
        let h = 0.2 - wc.sigma * z_w[0];
        assert!((eval.h - h).abs() <= 1e-5);
    }
}

/// `z` propagated over `±δ` with the input held and the real disturbance.
fn shift(engine: &LPrevEngine, signal: &dyn DisturbanceSignal, z: &Vector, u: &Vector, t: f64, delta: f64) -> Vector {
    let sys = engine.system();
    let t_i = sys.input_delay();
    rk4(|s, x| sys.vector_field(x, u, &signal.value(s + t_i)), z, t, t + delta, 1e-6)
}

#[test]
fn barrier_derivative_matches_finite_differences() {
    let mut rng = seeded(3);
    let mut checked = 0;
    for t_p in [0.010, 0.05, f64::INFINITY] {
        let (engine, signal) = if t_p.is_finite() {
            engines(1.5, t_p)
        } else {
            (prev_cbf(&exo_system(1.5, 0.43, 0.010), STEP).unwrap(), exo_signal(0.43))
        };
        for (t, z) in sample_exo_states(&mut rng, 30, 0.05) {
            let u = Vector::from_element(1, rng.random_range(-1.5..1.5));
            let eval = engine.barrier(&z, &engine.preview_window(&signal, t).unwrap()).unwrap();
            let delta = 2e-5;
            let h_at = |d: f64| {
                let zs = shift(&engine, signal.as_ref(), &z, &u, t, d);
                engine.barrier(&zs, &engine.preview_window(&signal, t + d).unwrap()).unwrap().h
            };
            let fd = (h_at(delta) - h_at(-delta)) / (2.0 * delta);
            let analytic = eval.h_dot(&u, engine.alpha_gain() * eval.h);
            let scale = analytic.abs().max(fd.abs()).max(1e-2);
            assert!(
                (fd - analytic).abs() <= 1e-3 * scale,
                "t_p {t_p} t {t} z {z:?}: fd {fd} analytic {analytic}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 90);
}

#[test]
fn stopping_time_is_the_first_root() {
    let mut rng = seeded(4);
    let (engine, signal) = engines(1.119, 0.010);
    for (t, z) in sample_exo_states(&mut rng, 200, 0.01) {
        let prev = engine.preview_window(&signal, t).unwrap();
        let eval = engine.barrier(&z, &prev).unwrap();
        let g_end = engine.stop_residual(&z, &prev, eval.t_s).unwrap();
        assert!(g_end.abs() <= 1e-8, "g(T_s) = {g_end}");
        // The worst-case output keeps moving toward the boundary until T_s.
        let mut last = eval.sigma * z[0];
        for k in 1..20 {
            let s = eval.t_s * k as f64 / 20.0;
            let g = engine.stop_residual(&z, &prev, s).unwrap();
            assert!(eval.sigma * g > 0.0, "early root at {s} < {}", eval.t_s);
            let wc = WorstCase::new(engine.system(), signal.as_ref(), t, &z);
            let y = eval.sigma * wc.state_at(&z, s, 1e-4)[0];
            assert!(y >= last - 1e-12);
            last = y;
        }
        assert!(eval.sigma * eval.z_w[0] >= last - 1e-9);
    }
}

#[test]
fn unlimited_preview_coincides_when_the_stop_is_previewed() {
    let mut rng = seeded(5);
    let sys = exo_system(2.0, 0.43, 0.5);
    let lp = LPrevEngine::new(sys.clone(), STEP).unwrap();
    let pv = prev_cbf(&sys, STEP).unwrap();
    let signal = exo_signal(0.43);
    let mut compared = 0;
    for (t, z) in sample_exo_states(&mut rng, 200, 0.01) {
        let a = lp.barrier(&z, &lp.preview_window(&signal, t).unwrap()).unwrap();
        if a.t_s > sys.preview_margin() {
            continue;
        }
        let b = pv.barrier(&z, &pv.preview_window(&signal, t).unwrap()).unwrap();
        assert!((a.t_s - b.t_s).abs() <= 1e-12, "{} vs {}", a.t_s, b.t_s);
        assert!((a.h - b.h).abs() <= 1e-12);
        assert!((a.q - b.q).abs() <= 1e-12 && (&a.p - &b.p).amax() <= 1e-12);
        compared += 1;
    }
    assert!(compared > 150, "only {compared} states had T_s inside the preview");
}

#[test]
fn limited_preview_is_never_less_conservative() {
    let mut rng = seeded(6);
    for u_m in [1.119, 1.5, 2.0] {
        let (lp, signal) = engines(u_m, 0.010);
        let pv = prev_cbf(lp.system(), STEP).unwrap();
        for (t, z) in sample_exo_states(&mut rng, 100, 0.0) {
            let a = lp.barrier(&z, &lp.preview_window(&signal, t).unwrap()).unwrap();
            let b = pv.barrier(&z, &pv.preview_window(&signal, t).unwrap()).unwrap();
            assert!(a.h <= b.h + 1e-12, "u_m {u_m} t {t} z {z:?}: {} > {}", a.h, b.h);
        }
    }
}

#[test]
fn zero_disturbance_makes_preview_irrelevant() {
    let mut rng = seeded(7);
    let sys = exo_system(1.119, 0.0, 0.010);
    let lp = LPrevEngine::new(sys.clone(), STEP).unwrap();
    let pv = prev_cbf(&sys, STEP).unwrap();
    let zero: Arc<dyn DisturbanceSignal> = Arc::new(ZeroDisturbance(1));
    for (t, z) in sample_exo_states(&mut rng, 50, 0.0) {
        let a = lp.barrier(&z, &lp.preview_window(&zero, t).unwrap()).unwrap();
        let b = pv.barrier(&z, &pv.preview_window(&zero, t).unwrap()).unwrap();
        assert!((a.h - b.h).abs() <= 1e-12 && (a.t_s - b.t_s).abs() <= 1e-12);
    }
}

#[test]
fn lane_extremal_signs() {
    let scn = lane_keeping(&LaneParams::default()).unwrap();
    let (u, d) = extremal_inputs(&scn.system, 0.4);
    assert_eq!((u[0], d[0]), (-0.2, -0.3));
    let (u, d) = extremal_inputs(&scn.system, -0.4);
    assert_eq!((u[0], d[0]), (0.2, 0.3));
}
