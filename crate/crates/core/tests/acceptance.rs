//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::{PI, TAU};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use volterra_ltm::geometry::{check_linked, level_abscissae, Levels, Rect};
use volterra_ltm::integrate::{flow, time_average, wind, AngularFrame};
use volterra_ltm::model::{harvested, min_energy};
use volterra_ltm::sap::{
    certify, pairwise_disjoint, push_path, test_paths, verify_inclusion, Certificate, CertifyOptions, PhaseMap,
    Sampling,
};
use volterra_ltm::symbolic::{realize_words, shift_distance, RealizationReport, SearchOptions, SwitchedMap};
use volterra_ltm::twist::{
    level_grid, monotonicity_scan, period, twist_bound, BandKind, BoundaryPeriods, TwistBounds,
};
use volterra_ltm::{PhasePoint, Schedule, Tolerances, VolterraParams};

type Outcome = Result<String, String>;

const MU: f64 = 0.2;
const LEVELS: Levels = Levels {
    ell1: 2.2,
    ell2: 2.5,
    h1: 2.22,
    h2: 2.34,
};

fn base() -> VolterraParams {
    VolterraParams::new(1.0, 1.0, 1.0, 1.0).unwrap()
}

fn q() -> VolterraParams {
    harvested(&base(), MU).unwrap()
}

fn tol() -> Tolerances {
    Tolerances::default()
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bounds() -> Result<(BoundaryPeriods, TwistBounds), String> {
    let t = tol();
    let periods = BoundaryPeriods {
        tau_ell1: period(&base(), LEVELS.ell1, &t).map_err(err)?,
        tau_ell2: period(&base(), LEVELS.ell2, &t).map_err(err)?,
        tau_h1: period(&q(), LEVELS.h1, &t).map_err(err)?,
        tau_h2: period(&q(), LEVELS.h2, &t).map_err(err)?,
    };
    let b = TwistBounds::new(&periods, 2, 1).map_err(err)?;
    Ok((periods, b))
}

fn reference() -> Result<Schedule, String> {
    let (_, b) = bounds()?;
    Schedule::new(base(), MU, b.alpha.ceil(), b.beta.ceil()).map_err(err)
}

fn point_on_r(p: &VolterraParams, level: f64) -> PhasePoint {
    let (_, x) = level_abscissae(p, level).unwrap();
    PhasePoint::new(x, (p.a() + p.c() - p.d() * x) / p.b()).unwrap()
}

fn center_period_limit() -> Outcome {
    let start = Instant::now();
    let t = tol();
    let tp = period(&base(), min_energy(&base()) + 1e-6, &t).map_err(err)?;
    let tq = period(&q(), min_energy(&q()) + 1e-6, &t).map_err(err)?;
    let elapsed = start.elapsed();
    let want_q = TAU / 0.96f64.sqrt();
    ensure(
        (tp - TAU).abs() <= 1e-3 && (tq - want_q).abs() <= 1e-3 && elapsed < Duration::from_secs(1),
        format!(
            "unharvested {tp:.9} vs {TAU:.9}, harvested {tq:.9} vs {want_q:.9}, {:.3} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn monotonicity() -> Outcome {
    let start = Instant::now();
    let t = tol();
    let chi = min_energy(&q());
    let mut worst_gap = f64::INFINITY;
    for (p, lo, hi) in [(base(), 2.0001, 3.5), (q(), chi + 1e-4, chi + 1.5)] {
        let table = monotonicity_scan(&p, &level_grid(lo, hi, 50), &t).map_err(err)?;
        if table.periods.len() != 50 {
            return Err(format!("{} periods instead of 50", table.periods.len()));
        }
        for w in table.periods.windows(2) {
            worst_gap = worst_gap.min(w[1] - w[0]);
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst_gap > 0.0 && elapsed < Duration::from_secs(30),
        format!("smallest increment {worst_gap:.3e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn average_principle() -> Outcome {
    let t = tol();
    let p = base();
    let tau = period(&p, 2.5, &t).map_err(err)?;
    let avg = time_average(&p, &point_on_r(&p, 2.5), tau, &t).map_err(err)?;
    let dev = (avg.x - 1.0).abs().max((avg.y - 1.0).abs());
    ensure(dev <= 1e-6, format!("averages ({:.10}, {:.10}), deviation {dev:.2e}", avg.x, avg.y))
}

fn energy_conservation() -> Outcome {
    let t = tol();
    let mut rng = StdRng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for p in [base(), q()] {
        let chi = min_energy(&p);
        for _ in 0..20 {
            let level = chi + rng.gen_range(1e-3..2.0);
            let tau = period(&p, level, &t).map_err(err)?;
            let out = flow(&p, &point_on_r(&p, level), tau, &t).map_err(|e| format!("level {level}: {e}"))?;
            worst = worst.max(out.drift);
        }
    }
    ensure(worst <= 1e-8, format!("largest drift over 40 orbits {worst:.2e}"))
}

/// Root of an increasing or decreasing `f` on `[lo, hi]` by plain bisection.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let s = f(lo).signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid).signum() == s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn linking() -> Outcome {
    let s = reference()?;
    let cfg = check_linked(&s, &LEVELS).map_err(err)?;
    // On r, y = 2 - x: the unharvested energy is 2 - ln(x (2 - x)) and the
    // harvested one 2 - 1.2 ln x - 0.8 ln(2 - x), minimal at x = 1.2.
    let p_roots = |l: f64| {
        let r = (1.0 - (2.0 - l).exp()).sqrt();
        (1.0 - r, 1.0 + r)
    };
    let eq = |x: f64| 2.0 - 1.2 * x.ln() - 0.8 * (2.0 - x).ln();
    let q_roots = |h: f64| {
        (
            bisect(|x| eq(x) - h, 1e-9, 1.2),
            bisect(|x| eq(x) - h, 1.2, 2.0 - 1e-9),
        )
    };
    let (p1m, p1p) = p_roots(LEVELS.ell1);
    let (p2m, p2p) = p_roots(LEVELS.ell2);
    let (q1m, q1p) = q_roots(LEVELS.h1);
    let (q2m, q2p) = q_roots(LEVELS.h2);
    let oracle = [p2m, p1m, q2m, q1m, p1p, p2p, q1p, q2p];
    let got = cfg.abscissae().ordered();
    let worst = oracle
        .iter()
        .zip(got)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 1e-6, format!("linked, largest abscissa error {worst:.2e}"))
}

fn twist_arithmetic() -> Outcome {
    let a2 = twist_bound(2, 6.5, 8.0).map_err(err)?;
    let a1 = twist_bound(1, 6.5, 8.0).map_err(err)?;
    let want = 572.0 / 3.0;
    ensure(
        (a2 - want).abs() <= 1e-12 && (a1 - 156.0).abs() <= 1e-12,
        format!("alpha(2) = {a2:.15}, alpha(1) = {a1:.15}"),
    )
}

fn twist_separation() -> Outcome {
    let (_, b) = bounds()?;
    let s = reference()?;
    let cfg = check_linked(&s, &LEVELS).map_err(err)?;
    let t = 1.01 * b.alpha;
    let path = &test_paths(&cfg, Rect::R1, 1)[0];
    let frame = AngularFrame::for_params(&base());
    let inner = wind(&base(), &frame, &path.at(0.0).map_err(err)?, t, &tol()).map_err(err)?;
    let outer = wind(&base(), &frame, &path.at(1.0).map_err(err)?, t, &tol()).map_err(err)?;
    let gap = inner.theta_end - outer.theta_end;
    ensure(
        gap > 6.0 * PI,
        format!("theta(inner) - theta(outer) = {gap:.6} at t = {t:.4}, needs > {:.6}", 6.0 * PI),
    )
}

fn interval_inclusion() -> Outcome {
    let (_, b) = bounds()?;
    let t = tol();
    let mut verdicts = Vec::new();
    for r0 in [b.alpha.ceil(), b.alpha / 100.0] {
        let s = Schedule::new(base(), MU, r0, b.beta.ceil()).map_err(err)?;
        let cfg = check_linked(&s, &LEVELS).map_err(err)?;
        let map = PhaseMap::unharvested(&cfg, &t).map_err(err)?;
        let path = &test_paths(&cfg, Rect::R1, 1)[0];
        let annotated = push_path(&cfg, &map, path, &Sampling::default(), &t).map_err(err)?;
        let n = map.floor().map_err(err)?;
        verdicts.push(verify_inclusion(&annotated, n, 2, BandKind::H));
    }
    ensure(
        verdicts == [true, false],
        format!(
            "r0 = ceil(alpha): {}, r0 = alpha/100: {}",
            verdicts[0], verdicts[1]
        ),
    )
}

fn reference_certificate() -> Result<Certificate, String> {
    certify(&reference()?, &LEVELS, &CertifyOptions::new(2, 1), false).map_err(err)
}

fn stretching_witnesses(cert: &Certificate) -> Outcome {
    let start = Instant::now();
    if !cert.certified() {
        return Err(format!("not certified: {:?}", cert.failure));
    }
    let s = reference()?;
    let opts = cert.config.options;
    let fine = CertifyOptions {
        sampling: opts.sampling.doubled(),
        ..opts
    };
    let cert2 = certify(&s, &LEVELS, &fine, false).map_err(err)?;
    let elapsed = start.elapsed();
    let mut counts_ok = true;
    let mut drift: f64 = 0.0;
    for (reports, reports2, want) in [
        (&cert.witnesses_phase0, &cert2.witnesses_phase0, 2),
        (&cert.witnesses_phase_mu, &cert2.witnesses_phase_mu, 1),
    ] {
        for (r, r2) in reports.iter().zip(reports2) {
            counts_ok &= r.witnesses.len() == want && r2.witnesses.len() == want;
            counts_ok &= pairwise_disjoint(&r.witnesses);
            for (w, w2) in r.witnesses.iter().zip(&r2.witnesses) {
                drift = drift
                    .max((w.interval[0] - w2.interval[0]).abs())
                    .max((w.interval[1] - w2.interval[1]).abs());
            }
        }
    }
    let detail = format!(
        "certified, {} + {} paths, interval shift under doubled sampling {drift:.2e}, {:.1} s",
        cert.witnesses_phase0.len(),
        cert.witnesses_phase_mu.len(),
        elapsed.as_secs_f64()
    );
    ensure(
        counts_ok && cert2.certified() && drift <= 1e-6 && elapsed < Duration::from_secs(300),
        detail,
    )
}

fn reference_map() -> Result<SwitchedMap, String> {
    let cfg = check_linked(&reference()?, &LEVELS).map_err(err)?;
    SwitchedMap::new(&cfg, 2, 1, &tol()).map_err(err)
}

/// Realizes every word of length 1, 2 and 3; also hands back the length-1
/// report for the crossing count check.
fn symbolic_realization() -> (Outcome, Option<RealizationReport>) {
    let mut first = None;
    let outcome = realize_all(&mut first);
    (outcome, first)
}

fn realize_all(first: &mut Option<RealizationReport>) -> Outcome {
    let start = Instant::now();
    let map = reference_map()?;
    let opts = SearchOptions::default();
    let mut worst_residual: f64 = 0.0;
    let mut closest = f64::INFINITY;
    let mut missing = Vec::new();
    for (len, want) in [(1, 2), (2, 4), (3, 8)] {
        let report = realize_words(&map, len, &opts).map_err(err)?;
        if report.total != want {
            return Err(format!("{} words of length {len}, expected {want}", report.total));
        }
        for (word, outcome) in &report.words {
            match outcome.residual {
                Some(r) => worst_residual = worst_residual.max(r),
                None => missing.push(format!("{word}: {}", outcome.error.clone().unwrap_or_default())),
            }
        }
        for sep in report.separations.iter().filter(|s| !s.cyclic_shift) {
            closest = closest.min(sep.distance);
        }
        if len == 1 {
            *first = Some(report);
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "14 words, largest residual {worst_residual:.2e}, closest distinct pair {closest:.3e}, {:.1} s",
        elapsed.as_secs_f64()
    );
    if missing.is_empty() && worst_residual <= 1e-8 && closest > 1e-4 && elapsed < Duration::from_secs(900) {
        Ok(detail)
    } else {
        Err(format!("{detail}; missing {missing:?}"))
    }
}

fn crossing_counts(period_one: Option<&RealizationReport>) -> Outcome {
    let report = period_one.ok_or("period-1 orbits unavailable")?;
    let count = |w: &str| {
        report.words[w]
            .crossings
            .map(|c| c[0])
            .ok_or_else(|| format!("{w} not realized"))
    };
    let (c0, c1) = (count("00")?, count("10")?);
    ensure(c1 == c0 + 1, format!("crossings of R2: word 00 {c0}, word 10 {c1}"))
}

fn entropy(cert: Option<&Certificate>) -> Outcome {
    let cert = cert.ok_or("no certificate")?;
    ensure(
        cert.entropy_floor == 2f64.ln(),
        format!("entropy floor {:.16}", cert.entropy_floor),
    )
}

fn shift_metric() -> Outcome {
    // Words over {1, 2}, indices -2..=2 stored as 0, 1, 2, -2, -1.
    let a = [1, 1, 1, 1, 1];
    let mut b = a;
    b[0] = 2;
    let mut c = a;
    c[1] = 2;
    c[4] = 2;
    let got = [
        shift_distance(&a, &a, 2, 2),
        shift_distance(&a, &b, 2, 2),
        shift_distance(&a, &c, 2, 2),
    ];
    ensure(got == [0.0, 0.5, 0.5], format!("distances {got:?}"))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail}");
            }
        }
    };
    report(1, "center-period limit", center_period_limit());
    report(2, "period monotonicity", monotonicity());
    report(3, "average principle", average_principle());
    report(4, "energy conservation", energy_conservation());
    report(5, "linking", linking());
    report(6, "twist bound arithmetic", twist_arithmetic());
    report(7, "twist separation", twist_separation());
    report(8, "interval inclusion", interval_inclusion());
    let cert = reference_certificate();
    report(
        9,
        "stretching witnesses",
        cert.as_ref().map_err(Clone::clone).and_then(stretching_witnesses),
    );
    let (outcome, words) = symbolic_realization();
    report(10, "symbolic realization", outcome);
    report(11, "crossing counts", crossing_counts(words.as_ref()));
    report(12, "entropy floor", entropy(cert.as_ref().ok()));
    report(13, "shift metric", shift_metric());
    println!("acceptance: {} of 13 criteria pass", 13 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
