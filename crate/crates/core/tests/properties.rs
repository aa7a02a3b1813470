use proptest::prelude::*;
use volterra_ltm::integrate::{angular_trace, flow, flow_switched, AngularFrame};
use volterra_ltm::model::{coefficients_at, energy, equilibrium, min_energy, vector_field};
use volterra_ltm::twist::period;
use volterra_ltm::{PhasePoint, Schedule, Tolerances, VolterraParams};

fn rates() -> impl Strategy<Value = VolterraParams> {
    (0.5f64..2.0, 0.5f64..2.0, 0.5f64..2.0, 0.5f64..2.0)
        .prop_map(|(a, b, c, d)| VolterraParams::new(a, b, c, d).unwrap())
}

fn point() -> impl Strategy<Value = PhasePoint> {
    (0.05f64..5.0, 0.05f64..5.0).prop_map(|(x, y)| PhasePoint::new(x, y).unwrap())
}

/// Rates with a start point whose coordinates are within a factor 2.5 of
/// the equilibrium, which keeps the orbit energy a few units above minimum.
fn orbit_start() -> impl Strategy<Value = (VolterraParams, PhasePoint)> {
    (rates(), 0.4f64..2.5, 0.4f64..2.5).prop_map(|(p, sx, sy)| {
        let e = equilibrium(&p);
        (p, PhasePoint::new(e.x * sx, e.y * sy).unwrap())
    })
}

proptest! {
    #[test]
    fn energy_is_a_first_integral(p in rates(), z in point()) {
        let grad = [p.d() - p.c() / z.x, p.b() - p.a() / z.y];
        let f = vector_field(&p, &z).unwrap();
        let dot = grad[0] * f[0] + grad[1] * f[1];
        let scale = grad[0].hypot(grad[1]) * f[0].hypot(f[1]);
        prop_assert!(dot.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn field_vanishes_only_at_equilibrium(p in rates(), z in point()) {
        let e = equilibrium(&p);
        prop_assume!(z.distance(&e) > 1e-6);
        let f = vector_field(&p, &z).unwrap();
        prop_assert!(f[0] != 0.0 || f[1] != 0.0);
        let g = vector_field(&p, &e).unwrap();
        prop_assert!(g[0].abs() <= 1e-15 && g[1].abs() <= 1e-15);
    }

    #[test]
    fn equilibrium_is_the_strict_minimum(p in rates(), z in point()) {
        prop_assume!(z.distance(&equilibrium(&p)) > 1e-4);
        prop_assert!(energy(&p, &z).unwrap() > min_energy(&p));
    }

    #[test]
    fn coefficients_repeat_each_period(mu in 0.01f64..0.4, r0 in 0.1f64..20.0, rmu in 0.1f64..20.0, t in 0.0f64..100.0) {
        let p = VolterraParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let s = Schedule::new(p, mu, r0, rmu).unwrap();
        let a = coefficients_at(&s, t);
        let b = coefficients_at(&s, t + s.period());
        // Points within rounding of a switch may land in different phases.
        let phase = (t % s.period()).min(s.period() - t % s.period()).min((t % s.period() - r0).abs());
        prop_assume!(phase > 1e-9 * s.period().max(t));
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn flow_conserves_energy((p, z) in orbit_start(), t in 0.0f64..50.0) {
        let out = flow(&p, &z, t, &Tolerances::default()).unwrap();
        prop_assert!(out.drift <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backward_flow_undoes_forward_flow((p, z) in orbit_start(), t in 0.1f64..20.0) {
        let tol = Tolerances::default();
        let fwd = flow(&p, &z, t, &tol).unwrap().end;
        let back = flow(&p, &fwd, -t, &tol).unwrap().end;
        prop_assert!(back.distance(&z) < 1e-7, "returned {:?}", back);
    }

    #[test]
    fn rotation_never_decreases((p, z) in orbit_start(), t in 0.1f64..30.0) {
        prop_assume!(z.distance(&equilibrium(&p)) > 1e-3);
        let trace = angular_trace(&p, &AngularFrame::for_params(&p), &z, t, &Tolerances::default()).unwrap();
        for w in trace.rot.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        for w in trace.theta.windows(2) {
            prop_assert!(w[1] - w[0] <= std::f64::consts::FRAC_PI_4 + 1e-12);
        }
    }

    #[test]
    fn unharvested_schedule_matches_plain_flow(z in (0.4f64..2.5, 0.4f64..2.5).prop_map(|(x, y)| PhasePoint::new(x, y).unwrap()), t in 0.0f64..30.0) {
        let p = VolterraParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        // Every switch restarts the stepper, so errors of both runs differ.
        let s = Schedule::unharvested(p, 3.0, 4.0).unwrap();
        let tol = Tolerances::default();
        let a = flow_switched(&s, &z, t, &tol).unwrap().end;
        let b = flow(&p, &z, t, &tol).unwrap().end;
        prop_assert!(a.distance(&b) < 1e-9, "{:e}", a.distance(&b));
    }
}

#[test]
fn tighter_tolerance_shrinks_closure_error() {
    let p = VolterraParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
    let z0 = PhasePoint::new(1.0, 1.2).unwrap();
    let oracle = Tolerances {
        rel_tol: 1e-13,
        abs_tol: 1e-15,
        energy_budget: 1.0,
        event_tol: 1e-13,
    };
    let tau = period(&p, energy(&p, &z0).unwrap(), &oracle).unwrap();
    let closure = |rel: f64| {
        let tol = Tolerances {
            rel_tol: rel,
            abs_tol: rel * 1e-2,
            energy_budget: 1.0,
            event_tol: 1e-12,
        };
        flow(&p, &z0, tau, &tol).unwrap().end.distance(&z0)
    };
    // Four halvings of the tolerance.
    for k in 0..8 {
        let rel = 1e-5 * 0.5f64.powi(k);
        let (coarse, fine) = (closure(rel), closure(rel / 16.0));
        assert!(coarse >= 4.0 * fine, "rel_tol {rel:e}: {coarse:e} -> {fine:e}");
    }
    assert!(closure(1e-10) < 1e-7);
}
