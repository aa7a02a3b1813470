//! Stretching along paths: push test paths through each phase, check the
//! winding interval inclusion and extract one crossing sub-path per band.
//! [`certify`] assembles the whole verification into a [`Certificate`].

use std::f64::consts::{FRAC_PI_4, PI};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_linked, Levels, LinkedConfig, Rect, Side};
use crate::integrate::{wind, AngularFrame, Tolerances};
use crate::model::{energy_unchecked, PhasePoint, Schedule, VolterraParams};
use crate::twist::{period, BandKind, BoundaryPeriods, TwistBounds, winding_floor};

/// Bisection stops once the parameter interval is this short.
const PARAM_TOL: f64 = 1e-12;
/// Witness endpoints must sit this close to their side level.
pub const SIDE_TOL: f64 = 1e-9;

/// A continuous path `[0, 1] -> quadrant`, evaluated on demand.
#[derive(Clone)]
pub struct PlanePath {
    name: String,
    at: Arc<dyn Fn(f64) -> Result<PhasePoint> + Send + Sync>,
}

impl std::fmt::Debug for PlanePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlanePath").field("name", &self.name).finish()
    }
}

impl PlanePath {
    pub fn new(
        name: impl Into<String>,
        at: impl Fn(f64) -> Result<PhasePoint> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            at: Arc::new(at),
        }
    }

    pub fn constant(z: PhasePoint) -> Self {
        Self::new("constant", move |_| Ok(z))
    }

    pub fn segment(a: PhasePoint, b: PhasePoint) -> Self {
        Self::new("segment", move |s| {
            PhasePoint::new(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y))
        })
    }

    /// Straight segment in the scaled chart of a rectangle.
    pub fn in_rect(
        name: impl Into<String>,
        cfg: &LinkedConfig,
        rect: Rect,
        from: (f64, f64),
        to: (f64, f64),
    ) -> Self {
        let cfg = *cfg;
        Self::new(name, move |s| {
            cfg.rect_point(
                rect,
                from.0 + s * (to.0 - from.0),
                from.1 + s * (to.1 - from.1),
            )
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn at(&self, s: f64) -> Result<PhasePoint> {
        (self.at)(s)
    }

    /// `n + 1` equally spaced samples.
    pub fn sample(&self, n: usize) -> Result<Vec<(f64, PhasePoint)>> {
        (0..=n)
            .map(|i| {
                let s = i as f64 / n as f64;
                Ok((s, self.at(s)?))
            })
            .collect()
    }
}

/// The `k` test paths crossing `rect` from its left to its right side: the
/// chart diagonal, the two boundary arcs on the other annulus, then interior
/// arcs.
pub fn test_paths(cfg: &LinkedConfig, rect: Rect, k: usize) -> Vec<PlanePath> {
    let mut out = vec![
        PlanePath::in_rect("radial", cfg, rect, (0.0, 0.25), (1.0, 0.75)),
        PlanePath::in_rect("down", cfg, rect, (0.0, 0.0), (1.0, 0.0)),
        PlanePath::in_rect("up", cfg, rect, (0.0, 1.0), (1.0, 1.0)),
    ];
    let extra = k.saturating_sub(3);
    for j in 1..=extra {
        let v = j as f64 / (extra + 1) as f64;
        out.push(PlanePath::in_rect(
            format!("interior-{j}"),
            cfg,
            rect,
            (0.0, v),
            (1.0, v),
        ));
    }
    out.truncate(k.max(1));
    out
}

/// One phase of the switched system seen as a map between rectangles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMap {
    pub kind: BandKind,
    pub params: VolterraParams,
    pub duration: f64,
    pub frame: AngularFrame,
    pub source: Rect,
    pub target: Rect,
    /// Period on the outer boundary of the source annulus.
    pub tau_outer: f64,
}

impl PhaseMap {
    /// Unharvested phase, `R1 -> R2`.
    pub fn unharvested(cfg: &LinkedConfig, tol: &Tolerances) -> Result<Self> {
        let p = cfg.schedule().base();
        Ok(Self {
            kind: BandKind::H,
            params: p,
            duration: cfg.schedule().r0(),
            frame: AngularFrame::for_params(&p),
            source: Rect::R1,
            target: Rect::R2,
            tau_outer: period(&p, cfg.annulus_p().outer(), tol)?,
        })
    }

    /// Harvested phase, `R2 -> R1`.
    pub fn harvested(cfg: &LinkedConfig, tol: &Tolerances) -> Result<Self> {
        let p = cfg.schedule().harvested();
        Ok(Self {
            kind: BandKind::K,
            params: p,
            duration: cfg.schedule().rmu(),
            frame: AngularFrame::for_params(&p),
            source: Rect::R2,
            target: Rect::R1,
            tau_outer: period(&p, cfg.annulus_q().outer(), tol)?,
        })
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    /// Winding floor `ceil(duration / tau_outer)`.
    pub fn floor(&self) -> Result<u64> {
        winding_floor(self.duration, self.tau_outer)
    }

    pub fn phase_name(&self) -> &'static str {
        match self.kind {
            BandKind::H => "phase0",
            BandKind::K => "phase_mu",
        }
    }
}

/// A path sample with its image and final unwrapped angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub s: f64,
    pub point: PhasePoint,
    pub image: PhasePoint,
    pub theta: f64,
    /// Unharvested energy of the image.
    pub energy_p: f64,
    /// Harvested energy of the image.
    pub energy_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedPath {
    pub samples: Vec<PathSample>,
}

impl AnnotatedPath {
    pub fn theta_range(&self) -> (f64, f64) {
        let first = self.samples.first().map_or(0.0, |s| s.theta);
        let last = self.samples.last().map_or(0.0, |s| s.theta);
        (first, last)
    }
}

/// Sampling policy of [`push_path`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sampling {
    /// Uniform samples before refinement.
    pub initial: usize,
    /// Divides the refinement thresholds and multiplies `initial`.
    pub density: f64,
    /// Largest number of samples per path.
    pub budget: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            initial: 64,
            density: 1.0,
            budget: 200_000,
        }
    }
}

impl Sampling {
    pub fn doubled(&self) -> Self {
        Self {
            density: 2.0 * self.density,
            ..*self
        }
    }
}

struct Evaluator<'a> {
    cfg: &'a LinkedConfig,
    map: &'a PhaseMap,
    path: &'a PlanePath,
    tol: &'a Tolerances,
}

impl Evaluator<'_> {
    fn eval(&self, s: f64) -> Result<PathSample> {
        let z = self.path.at(s)?;
        let w = wind(&self.map.params, &self.map.frame, &z, self.map.duration, self.tol)?;
        let base = self.cfg.schedule().base();
        let harvested = self.cfg.schedule().harvested();
        Ok(PathSample {
            s,
            point: z,
            image: w.end,
            theta: w.theta_end,
            energy_p: energy_unchecked(&base, w.end.x, w.end.y),
            energy_q: energy_unchecked(&harvested, w.end.x, w.end.y),
        })
    }

    fn target_energy(&self, smp: &PathSample) -> f64 {
        match self.map.target {
            Rect::R1 => smp.energy_p,
            Rect::R2 => smp.energy_q,
        }
    }
}

/// Integrate every sample of `path` through `map`, inserting midpoints until
/// neighbouring final angles differ by at most pi/4 and neighbouring image
/// energies by at most one eighth of the band widths.
pub fn push_path(
    cfg: &LinkedConfig,
    map: &PhaseMap,
    path: &PlanePath,
    sampling: &Sampling,
    tol: &Tolerances,
) -> Result<AnnotatedPath> {
    let ev = Evaluator {
        cfg,
        map,
        path,
        tol,
    };
    push_with(&ev, sampling)
}

fn push_with(ev: &Evaluator<'_>, sampling: &Sampling) -> Result<AnnotatedPath> {
    let n0 = ((sampling.initial as f64 * sampling.density).ceil() as usize).max(2);
    let mut samples = (0..=n0)
        .into_par_iter()
        .map(|i| ev.eval(i as f64 / n0 as f64))
        .collect::<Result<Vec<_>>>()?;
    let dth = FRAC_PI_4 / sampling.density;
    let dp = ev.cfg.annulus_p().width() / 8.0 / sampling.density;
    let dq = ev.cfg.annulus_q().width() / 8.0 / sampling.density;
    loop {
        let mids: Vec<f64> = samples
            .windows(2)
            .filter(|w| {
                (w[1].theta - w[0].theta).abs() > dth
                    || (w[1].energy_p - w[0].energy_p).abs() > dp
                    || (w[1].energy_q - w[0].energy_q).abs() > dq
            })
            .map(|w| 0.5 * (w[0].s + w[1].s))
            .collect();
        if mids.is_empty() {
            break;
        }
        if samples.len() + mids.len() > sampling.budget
            || samples.windows(2).any(|w| w[1].s - w[0].s < 1e-13)
        {
            return Err(Error::RefinementBudgetExceeded {
                budget: sampling.budget,
            });
        }
        let fresh = mids
            .par_iter()
            .map(|&s| ev.eval(s))
            .collect::<Result<Vec<_>>>()?;
        samples.extend(fresh);
        samples.sort_by(|a, b| a.s.total_cmp(&b.s));
    }
    Ok(AnnotatedPath { samples })
}

/// Target interval covered by the `m` bands above floor `n`.
pub fn band_cover(kind: BandKind, n: u64, m: usize) -> (f64, f64) {
    let n = n as f64;
    let m = m as f64;
    match kind {
        BandKind::H => (2.0 * PI * n, 2.0 * PI * (n + m) - PI),
        BandKind::K => (PI * (2.0 * n + 1.0), 2.0 * PI * (n + m)),
    }
}

/// Whether the final angles `[theta(end), theta(start)]` of a path running
/// from the inner to the outer boundary contain the band cover.
pub fn verify_inclusion(path: &AnnotatedPath, n: u64, m: usize, kind: BandKind) -> bool {
    let (start, end) = path.theta_range();
    let (lo, hi) = band_cover(kind, n, m);
    end <= lo && start >= hi
}

/// Sub-path whose image crosses the target rectangle from one side to the
/// other while its final angle stays in one band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StretchWitness {
    pub band: usize,
    /// Maximal parameter interval `[t', t'']` with final angle in the band.
    pub band_interval: [f64; 2],
    /// `[t*, t**]`: image runs from one side of the target to the other.
    pub interval: [f64; 2],
    pub entry_side: Side,
    pub exit_side: Side,
    /// Side-defining energy of the image at `t*` and `t**`.
    pub endpoint_energies: [f64; 2],
    /// Image samples over `[t*, t**]`, endpoints included.
    pub image: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Left,
    Right,
    Between,
}

/// Locate `f = 0` between parameters `a` and `b` where `f` changes sign.
fn bisect_param(
    ev: &Evaluator<'_>,
    mut a: PathSample,
    mut b: PathSample,
    f: impl Fn(&PathSample) -> f64,
    value_tol: f64,
) -> Result<PathSample> {
    let fa = f(&a);
    if fa == 0.0 {
        return Ok(a);
    }
    if f(&b) == 0.0 {
        return Ok(b);
    }
    let sa = fa.signum();
    while (b.s - a.s).abs() > PARAM_TOL {
        let m = ev.eval(0.5 * (a.s + b.s))?;
        let fm = f(&m);
        if fm.abs() <= value_tol {
            return Ok(m);
        }
        if fm.signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(if f(&a).abs() <= f(&b).abs() { a } else { b })
}

/// One witness per band, searched on an already pushed path.
fn witnesses_on(
    ev: &Evaluator<'_>,
    annotated: &AnnotatedPath,
    n: u64,
    m: usize,
    containment_tol: f64,
) -> Result<Vec<StretchWitness>> {
    (0..m)
        .map(|i| witness_for_band(ev, annotated, n, i, containment_tol))
        .collect()
}

fn witness_for_band(
    ev: &Evaluator<'_>,
    annotated: &AnnotatedPath,
    n: u64,
    band: usize,
    containment_tol: f64,
) -> Result<StretchWitness> {
    let lo = ev.map.kind.band_start(n, band);
    let hi = lo + PI;
    let smp = &annotated.samples;
    let inside = |x: &PathSample| x.theta >= lo && x.theta <= hi;
    let target_sides = ev.cfg.sides_annulus(ev.map.target);
    let (left, right) = (target_sides.inner(), target_sides.outer());
    let class = |x: &PathSample| {
        let e = ev.target_energy(x);
        if e <= left {
            Class::Left
        } else if e >= right {
            Class::Right
        } else {
            Class::Between
        }
    };
    let mut i = 0;
    while i < smp.len() {
        if !inside(&smp[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < smp.len() && inside(&smp[i + 1]) {
            i += 1;
        }
        let end = i;
        i += 1;
        // Look for a side-to-side transition inside the run.
        let mut last: Option<usize> = None;
        let mut found = None;
        for k in start..=end {
            let c = class(&smp[k]);
            if c == Class::Between {
                continue;
            }
            if let Some(j) = last {
                if class(&smp[j]) != c {
                    found = Some((j, k));
                    break;
                }
            }
            last = Some(k);
        }
        let Some((j, k)) = found else { continue };
        let band_interval = band_edges(ev, smp, start, end, lo, hi, band)?;
        let level = |c: Class| if c == Class::Left { left } else { right };
        let (cj, ck) = (class(&smp[j]), class(&smp[k]));
        let lj = level(cj);
        let lk = level(ck);
        let te = |x: &PathSample| ev.target_energy(x);
        let t_star = bisect_param(ev, smp[j], smp[j + 1], |x| te(x) - lj, 1e-11)?;
        let t_star_star = bisect_param(ev, smp[k - 1], smp[k], |x| te(x) - lk, 1e-11)?;
        let mut image = vec![t_star];
        image.extend(smp[j + 1..k].iter().copied());
        image.push(t_star_star);
        let ok_ends = (te(&t_star) - lj).abs() <= SIDE_TOL && (te(&t_star_star) - lk).abs() <= SIDE_TOL;
        let contained = image
            .iter()
            .all(|x| ev.cfg.in_rect(ev.map.target, &x.image, containment_tol));
        let in_band = image.iter().all(inside);
        if !(ok_ends && contained && in_band) {
            continue;
        }
        let side = |c: Class| if c == Class::Left { Side::Left } else { Side::Right };
        return Ok(StretchWitness {
            band,
            band_interval,
            interval: [t_star.s, t_star_star.s],
            entry_side: side(cj),
            exit_side: side(ck),
            endpoint_energies: [te(&t_star), te(&t_star_star)],
            image: image.iter().map(|x| [x.image.x, x.image.y]).collect(),
        });
    }
    Err(Error::WitnessNotFound { band })
}

/// Refine the ends of a run of in-band samples to the band edges.
fn band_edges(
    ev: &Evaluator<'_>,
    smp: &[PathSample],
    start: usize,
    end: usize,
    lo: f64,
    hi: f64,
    band: usize,
) -> Result<[f64; 2]> {
    let edge = |outside: &PathSample| {
        if outside.theta < lo {
            Some(lo)
        } else if outside.theta > hi {
            Some(hi)
        } else {
            None
        }
    };
    let left = if start == 0 {
        smp[0].s
    } else {
        let e = edge(&smp[start - 1]).ok_or(Error::BandEdgeAmbiguous { band })?;
        bisect_param(ev, smp[start - 1], smp[start], |x| x.theta - e, 0.0)?.s
    };
    let right = if end + 1 == smp.len() {
        smp[end].s
    } else {
        let e = edge(&smp[end + 1]).ok_or(Error::BandEdgeAmbiguous { band })?;
        bisect_param(ev, smp[end], smp[end + 1], |x| x.theta - e, 0.0)?.s
    };
    Ok([left, right])
}

/// Push `path` through `map` and return one witness per band.
pub fn find_witnesses(
    cfg: &LinkedConfig,
    map: &PhaseMap,
    path: &PlanePath,
    m: usize,
    sampling: &Sampling,
    tol: &Tolerances,
) -> Result<Vec<StretchWitness>> {
    let ev = Evaluator {
        cfg,
        map,
        path,
        tol,
    };
    let annotated = push_with(&ev, sampling)?;
    witnesses_on(&ev, &annotated, map.floor()?, m, tol.energy_budget)
}

/// Whether the witness intervals `[t*, t**]` are pairwise disjoint.
pub fn pairwise_disjoint(witnesses: &[StretchWitness]) -> bool {
    let mut iv: Vec<[f64; 2]> = witnesses
        .iter()
        .map(|w| [w.interval[0].min(w.interval[1]), w.interval[0].max(w.interval[1])])
        .collect();
    iv.sort_by(|a, b| a[0].total_cmp(&b[0]));
    iv.windows(2).all(|w| w[0][1] < w[1][0])
}

/// `ln(m1 m2)`.
pub fn entropy_floor(m1: u32, m2: u32) -> f64 {
    (f64::from(m1) * f64::from(m2)).ln()
}

/// Inputs of [`certify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyOptions {
    pub m1: u32,
    pub m2: u32,
    pub paths: usize,
    pub sampling: Sampling,
    pub tolerances: Tolerances,
}

impl CertifyOptions {
    pub fn new(m1: u32, m2: u32) -> Self {
        Self {
            m1,
            m2,
            paths: 3,
            sampling: Sampling::default(),
            tolerances: Tolerances::default(),
        }
    }
}

/// Echo of the certified input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEcho {
    pub params: VolterraParams,
    pub mu: f64,
    pub levels: Levels,
    pub r0: f64,
    pub rmu: f64,
    pub options: CertifyOptions,
    pub swap_rectangles: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathReport {
    pub path: String,
    pub samples: usize,
    pub theta_start: Option<f64>,
    pub theta_end: Option<f64>,
    pub inclusion: bool,
    pub witnesses: Vec<StretchWitness>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Failure {
    pub stage: String,
    pub path: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    NotCertified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    pub config: ConfigEcho,
    pub linked: bool,
    pub abscissae: Option<[f64; 8]>,
    pub periods: Option<BoundaryPeriods>,
    pub bounds: Option<TwistBounds>,
    pub bounds_satisfied: bool,
    pub witnesses_phase0: Vec<PathReport>,
    pub witnesses_phase_mu: Vec<PathReport>,
    pub witnesses_ok: bool,
    pub verdict: Verdict,
    pub failure: Option<Failure>,
    pub entropy_floor: f64,
}

impl Certificate {
    pub fn certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

fn phase_reports(
    cfg: &LinkedConfig,
    map: &PhaseMap,
    m: usize,
    opts: &CertifyOptions,
) -> Result<Vec<PathReport>> {
    let n = map.floor()?;
    let paths = test_paths(cfg, map.source, opts.paths);
    Ok(paths
        .par_iter()
        .map(|path| {
            let ev = Evaluator {
                cfg,
                map,
                path,
                tol: &opts.tolerances,
            };
            let mut report = PathReport {
                path: path.name().to_string(),
                samples: 0,
                theta_start: None,
                theta_end: None,
                inclusion: false,
                witnesses: vec![],
                error: None,
            };
            match push_with(&ev, &opts.sampling) {
                Ok(annotated) => {
                    let (a, b) = annotated.theta_range();
                    report.samples = annotated.samples.len();
                    report.theta_start = Some(a);
                    report.theta_end = Some(b);
                    report.inclusion = verify_inclusion(&annotated, n, m, map.kind);
                    match witnesses_on(&ev, &annotated, n, m, opts.tolerances.energy_budget) {
                        Ok(w) => report.witnesses = w,
                        Err(e) => report.error = Some(e.to_string()),
                    }
                }
                Err(e) => report.error = Some(e.to_string()),
            }
            report
        })
        .collect())
}

/// Run the full verification: linking, boundary periods, twist bounds, and
/// witnesses on the test path family of each phase.
pub fn certify(
    schedule: &Schedule,
    levels: &Levels,
    opts: &CertifyOptions,
    swap_rectangles: bool,
) -> Result<Certificate> {
    opts.tolerances.validate()?;
    for (name, m) in [("m1", opts.m1), ("m2", opts.m2)] {
        if m == 0 {
            return Err(Error::InvalidParameter {
                name,
                value: 0.0,
                reason: "at least one symbol is needed",
            });
        }
    }
    let mut cert = Certificate {
        config: ConfigEcho {
            params: schedule.base(),
            mu: schedule.mu(),
            levels: *levels,
            r0: schedule.r0(),
            rmu: schedule.rmu(),
            options: *opts,
            swap_rectangles,
        },
        linked: false,
        abscissae: None,
        periods: None,
        bounds: None,
        bounds_satisfied: false,
        witnesses_phase0: vec![],
        witnesses_phase_mu: vec![],
        witnesses_ok: false,
        verdict: Verdict::NotCertified,
        failure: None,
        entropy_floor: entropy_floor(opts.m1, opts.m2),
    };
    let fail = |cert: &mut Certificate, stage: &str, path: Option<String>, e: String| {
        if cert.failure.is_none() {
            cert.failure = Some(Failure {
                stage: stage.to_string(),
                path,
                message: e,
            });
        }
    };
    let cfg = match check_linked(schedule, levels) {
        Ok(c) => c.with_swapped_labels(swap_rectangles),
        Err(e) => {
            fail(&mut cert, "linking", None, e.to_string());
            return Ok(cert);
        }
    };
    cert.linked = true;
    cert.abscissae = Some(cfg.abscissae().ordered());
    let tol = &opts.tolerances;
    let base = schedule.base();
    let harvested = schedule.harvested();
    let periods = (|| -> Result<BoundaryPeriods> {
        Ok(BoundaryPeriods {
            tau_ell1: period(&base, levels.ell1, tol)?,
            tau_ell2: period(&base, levels.ell2, tol)?,
            tau_h1: period(&harvested, levels.h1, tol)?,
            tau_h2: period(&harvested, levels.h2, tol)?,
        })
    })();
    let periods = match periods {
        Ok(p) => p,
        Err(e) => {
            fail(&mut cert, "periods", None, e.to_string());
            return Ok(cert);
        }
    };
    cert.periods = Some(periods);
    let bounds = match TwistBounds::new(&periods, opts.m1, opts.m2)
        .and_then(|b| b.with_durations(&periods, schedule.r0(), schedule.rmu()))
    {
        Ok(b) => b,
        Err(e) => {
            fail(&mut cert, "bounds", None, e.to_string());
            return Ok(cert);
        }
    };
    cert.bounds = Some(bounds);
    cert.bounds_satisfied = schedule.r0() >= bounds.alpha && schedule.rmu() >= bounds.beta;

    let map0 = PhaseMap {
        kind: BandKind::H,
        params: base,
        duration: schedule.r0(),
        frame: AngularFrame::for_params(&base),
        source: Rect::R1,
        target: Rect::R2,
        tau_outer: periods.tau_ell2,
    };
    let map_mu = PhaseMap {
        kind: BandKind::K,
        params: harvested,
        duration: schedule.rmu(),
        frame: AngularFrame::for_params(&harvested),
        source: Rect::R2,
        target: Rect::R1,
        tau_outer: periods.tau_h2,
    };
    let (r0, rmu) = rayon::join(
        || phase_reports(&cfg, &map0, opts.m1 as usize, opts),
        || phase_reports(&cfg, &map_mu, opts.m2 as usize, opts),
    );
    cert.witnesses_phase0 = r0?;
    cert.witnesses_phase_mu = rmu?;
    let mut ok = true;
    for (stage, reports, m) in [
        ("phase0", &cert.witnesses_phase0, opts.m1),
        ("phase_mu", &cert.witnesses_phase_mu, opts.m2),
    ] {
        for r in reports {
            let complete = r.witnesses.len() == m as usize;
            if !complete || !pairwise_disjoint(&r.witnesses) {
                ok = false;
                let msg = match &r.error {
                    Some(e) => e.clone(),
                    None if complete => "overlapping witness intervals".into(),
                    None => "missing witnesses".into(),
                };
                let path = Some(r.path.clone());
                if cert.failure.is_none() {
                    cert.failure = Some(Failure {
                        stage: stage.to_string(),
                        path,
                        message: msg,
                    });
                }
            }
        }
    }
    cert.witnesses_ok = ok;
    if !cert.bounds_satisfied {
        fail(
            &mut cert,
            "bounds",
            None,
            format!(
                "phase durations ({}, {}) below twist bounds ({}, {})",
                schedule.r0(),
                schedule.rmu(),
                bounds.alpha,
                bounds.beta
            ),
        );
    }
    if cert.linked && cert.bounds_satisfied && cert.witnesses_ok {
        cert.verdict = Verdict::Certified;
    }
    Ok(cert)
}
