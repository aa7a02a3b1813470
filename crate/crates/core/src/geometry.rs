//! The line through both centers, level-curve abscissae on it, the annuli and
//! the linking test, and the two rectangles where the annuli overlap.
//!
//! Rectangles are handled implicitly through energies. Because
//! `E0 - E_mu = mu ln(x/y)`, the pair `(E0, E_mu)` is a coordinate chart on
//! each half-plane cut out by the line `r`; [`LinkedConfig::chart_point`]
//! inverts it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::AngularFrame;
use crate::model::{energy_unchecked, equilibrium, min_energy, PhasePoint, Schedule, VolterraParams};

/// Strict comparisons in the linking chain need at least this margin.
pub const STRICT_MARGIN: f64 = 1e-9;
/// Non-strict comparisons may fail by at most this much.
pub const WEAK_SLACK: f64 = 1e-12;
/// Default tolerance for membership on rectangle boundaries.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// `b y + d x - a - c`: negative below the line through both centers.
pub fn line_r_signed(p: &VolterraParams, z: &PhasePoint) -> f64 {
    p.b() * z.y + p.d() * z.x - p.a() - p.c()
}

fn energy_on_r(p: &VolterraParams, x: f64) -> f64 {
    energy_unchecked(p, x, (p.a() + p.c() - p.d() * x) / p.b())
}

/// Root of `g` in `[lo, hi]` given `g(lo) <= 0 <= g(hi)` or the reverse.
fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let s_lo = g(lo).signum();
    for _ in 0..400 {
        if (hi - lo).abs() <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid).signum() == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_level(p: &VolterraParams, level: f64) -> Result<()> {
    let minimum = min_energy(p);
    if level.is_finite() && level > minimum {
        Ok(())
    } else {
        Err(Error::LevelBelowMinimum { level, minimum })
    }
}

/// The two crossings `x- < x_center < x+` of the level curve with `r`.
pub fn level_abscissae(p: &VolterraParams, level: f64) -> Result<(f64, f64)> {
    check_level(p, level)?;
    let xc = p.c() / p.d();
    let x_end = (p.a() + p.c()) / p.d();
    let g = |x: f64| energy_on_r(p, x) - level;
    let dg = |x: f64| {
        let y = (p.a() + p.c() - p.d() * x) / p.b();
        p.d() - p.c() / x - p.d() + p.a() * p.d() / (p.b() * y)
    };
    let mut lo = 0.5 * xc;
    while g(lo) <= 0.0 {
        lo *= 0.5;
    }
    let mut hi_gap = 0.5 * (x_end - xc);
    while g(x_end - hi_gap) <= 0.0 {
        hi_gap *= 0.5;
    }
    let polish = |mut x: f64| {
        for _ in 0..3 {
            let d = dg(x);
            if d == 0.0 {
                break;
            }
            let next = x - g(x) / d;
            if (g(next)).abs() < g(x).abs() {
                x = next;
            } else {
                break;
            }
        }
        x
    };
    let minus = polish(bisect(g, lo, xc, 1e-12));
    let plus = polish(bisect(g, xc, x_end - hi_gap, 1e-12));
    Ok((minus, plus))
}

/// Energy levels bounding the two annuli.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Levels {
    pub ell1: f64,
    pub ell2: f64,
    pub h1: f64,
    pub h2: f64,
}

/// Region between two level curves of one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    params: VolterraParams,
    inner: f64,
    outer: f64,
}

impl Annulus {
    pub fn new(params: VolterraParams, inner: f64, outer: f64) -> Result<Self> {
        check_level(&params, inner)?;
        if !(outer > inner && outer.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "outer",
                value: outer,
                reason: "outer level must exceed inner level",
            });
        }
        Ok(Self {
            params,
            inner,
            outer,
        })
    }

    pub fn params(&self) -> &VolterraParams {
        &self.params
    }
    pub fn inner(&self) -> f64 {
        self.inner
    }
    pub fn outer(&self) -> f64 {
        self.outer
    }
    pub fn width(&self) -> f64 {
        self.outer - self.inner
    }

    pub fn contains(&self, z: &PhasePoint, tol: f64) -> bool {
        let e = energy_unchecked(&self.params, z.x, z.y);
        e >= self.inner - tol && e <= self.outer + tol
    }

    pub fn energy(&self, z: &PhasePoint) -> f64 {
        energy_unchecked(&self.params, z.x, z.y)
    }

    /// Position across the annulus: 0 on the inner curve, 1 on the outer one.
    pub fn scaled(&self, z: &PhasePoint) -> f64 {
        (self.energy(z) - self.inner) / self.width()
    }
}

/// The eight crossings of the annulus boundaries with `r`, in chain order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Abscissae {
    pub p2_minus: f64,
    pub p1_minus: f64,
    pub q2_minus: f64,
    pub q1_minus: f64,
    pub p1_plus: f64,
    pub p2_plus: f64,
    pub q1_plus: f64,
    pub q2_plus: f64,
}

impl Abscissae {
    pub fn ordered(&self) -> [f64; 8] {
        [
            self.p2_minus,
            self.p1_minus,
            self.q2_minus,
            self.q1_minus,
            self.p1_plus,
            self.p2_plus,
            self.q1_plus,
            self.q2_plus,
        ]
    }
}

const CHAIN: [(&str, bool); 7] = [
    ("P2- < P1-", true),
    ("P1- <= Q2-", false),
    ("Q2- < Q1-", true),
    ("Q1- <= P1+", false),
    ("P1+ < P2+", true),
    ("P2+ <= Q1+", false),
    ("Q1+ < Q2+", true),
];

/// Half-plane on one side of `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Half {
    Lower,
    Upper,
}

/// The two overlap rectangles. `R1` is the source of the unharvested phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rect {
    R1,
    R2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Membership {
    R1,
    R2,
    AnnulusPOnly,
    AnnulusQOnly,
    Outside,
}

/// A pair of annuli whose boundaries satisfy the linking chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkedConfig {
    schedule: Schedule,
    annulus_p: Annulus,
    annulus_q: Annulus,
    abscissae: Abscissae,
    swap: bool,
}

/// Compute the eight abscissae and check the linking chain.
pub fn check_linked(schedule: &Schedule, levels: &Levels) -> Result<LinkedConfig> {
    let base = schedule.base();
    let harvested = schedule.harvested();
    let annulus_p = Annulus::new(base, levels.ell1, levels.ell2)?;
    let annulus_q = Annulus::new(harvested, levels.h1, levels.h2)?;
    let (p1_minus, p1_plus) = level_abscissae(&base, levels.ell1)?;
    let (p2_minus, p2_plus) = level_abscissae(&base, levels.ell2)?;
    let (q1_minus, q1_plus) = level_abscissae(&harvested, levels.h1)?;
    let (q2_minus, q2_plus) = level_abscissae(&harvested, levels.h2)?;
    let abscissae = Abscissae {
        p2_minus,
        p1_minus,
        q2_minus,
        q1_minus,
        p1_plus,
        p2_plus,
        q1_plus,
        q2_plus,
    };
    let v = abscissae.ordered();
    for (i, (name, strict)) in CHAIN.iter().enumerate() {
        let (lhs, rhs) = (v[i], v[i + 1]);
        let ok = if *strict {
            rhs - lhs >= STRICT_MARGIN
        } else {
            lhs <= rhs + WEAK_SLACK
        };
        if !ok {
            return Err(Error::NotLinked {
                comparison: (*name).to_string(),
                lhs,
                rhs,
            });
        }
    }
    Ok(LinkedConfig {
        schedule: *schedule,
        annulus_p,
        annulus_q,
        abscissae,
        swap: false,
    })
}

impl LinkedConfig {
    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }
    pub fn annulus_p(&self) -> &Annulus {
        &self.annulus_p
    }
    pub fn annulus_q(&self) -> &Annulus {
        &self.annulus_q
    }
    pub fn abscissae(&self) -> &Abscissae {
        &self.abscissae
    }
    pub fn levels(&self) -> Levels {
        Levels {
            ell1: self.annulus_p.inner,
            ell2: self.annulus_p.outer,
            h1: self.annulus_q.inner,
            h2: self.annulus_q.outer,
        }
    }
    pub fn swapped(&self) -> bool {
        self.swap
    }

    /// Same annuli under new phase durations.
    pub fn with_durations(mut self, r0: f64, rmu: f64) -> Result<Self> {
        self.schedule = self.schedule.with_durations(r0, rmu)?;
        Ok(self)
    }

    /// Exchange the labels `R1` and `R2` reported by [`membership`](Self::membership).
    pub fn with_swapped_labels(mut self, swap: bool) -> Self {
        self.swap = swap;
        self
    }

    /// Half-plane occupied by a rectangle in the construction.
    pub fn half(&self, rect: Rect) -> Half {
        match rect {
            Rect::R1 => Half::Lower,
            Rect::R2 => Half::Upper,
        }
    }

    /// Annulus whose boundary curves carry the left/right sides of `rect`.
    pub fn sides_annulus(&self, rect: Rect) -> &Annulus {
        match rect {
            Rect::R1 => &self.annulus_p,
            Rect::R2 => &self.annulus_q,
        }
    }

    /// The other annulus, whose boundaries carry the up/down sides.
    pub fn cross_annulus(&self, rect: Rect) -> &Annulus {
        match rect {
            Rect::R1 => &self.annulus_q,
            Rect::R2 => &self.annulus_p,
        }
    }

    pub fn in_half(&self, half: Half, z: &PhasePoint, tol: f64) -> bool {
        let s = line_r_signed(&self.schedule.base(), z);
        match half {
            Half::Lower => s <= tol,
            Half::Upper => s >= -tol,
        }
    }

    /// Whether `z` lies in the rectangle (with boundary tolerance in energy).
    pub fn in_rect(&self, rect: Rect, z: &PhasePoint, tol: f64) -> bool {
        z.x > 0.0
            && z.y > 0.0
            && self.annulus_p.contains(z, tol)
            && self.annulus_q.contains(z, tol)
            && self.in_half(self.half(rect), z, tol)
    }

    pub fn membership(&self, z: &PhasePoint) -> Membership {
        self.membership_with_tol(z, BOUNDARY_TOL)
    }

    pub fn membership_with_tol(&self, z: &PhasePoint, tol: f64) -> Membership {
        if !(z.x > 0.0 && z.y > 0.0) {
            return Membership::Outside;
        }
        let in_p = self.annulus_p.contains(z, tol);
        let in_q = self.annulus_q.contains(z, tol);
        match (in_p, in_q) {
            (true, true) => {
                let below = self.in_half(Half::Lower, z, tol);
                match (below, self.swap) {
                    (true, false) | (false, true) => Membership::R1,
                    _ => Membership::R2,
                }
            }
            (true, false) => Membership::AnnulusPOnly,
            (false, true) => Membership::AnnulusQOnly,
            (false, false) => Membership::Outside,
        }
    }

    /// Side of `rect` on which `z` lies, if any.
    pub fn side_of(&self, rect: Rect, z: &PhasePoint, tol: f64) -> Option<Side> {
        if !self.in_rect(rect, z, tol) {
            return None;
        }
        let a = self.sides_annulus(rect);
        let e = a.energy(z);
        if (e - a.inner).abs() <= tol {
            Some(Side::Left)
        } else if (e - a.outer).abs() <= tol {
            Some(Side::Right)
        } else {
            None
        }
    }

    /// Point of the half-plane with energies `ell` (unharvested) and `h`
    /// (harvested).
    pub fn chart_point(&self, half: Half, ell: f64, h: f64) -> Result<PhasePoint> {
        chart_point(&self.schedule, half, ell, h)
    }

    /// Point of `rect` at scaled coordinates: `u` runs across the sides
    /// annulus (left to right) and `v` across the other one.
    pub fn rect_point(&self, rect: Rect, u: f64, v: f64) -> Result<PhasePoint> {
        let (ell, h) = self.rect_energies(rect, u, v);
        self.chart_point(self.half(rect), ell, h)
    }

    fn rect_energies(&self, rect: Rect, u: f64, v: f64) -> (f64, f64) {
        let p = &self.annulus_p;
        let q = &self.annulus_q;
        match rect {
            Rect::R1 => (p.inner + u * p.width(), q.inner + v * q.width()),
            Rect::R2 => (p.inner + v * p.width(), q.inner + u * q.width()),
        }
    }

    /// Inverse of [`rect_point`](Self::rect_point) (valid on either half).
    pub fn rect_coords(&self, rect: Rect, z: &PhasePoint) -> (f64, f64) {
        let sp = self.annulus_p.scaled(z);
        let sq = self.annulus_q.scaled(z);
        match rect {
            Rect::R1 => (sp, sq),
            Rect::R2 => (sq, sp),
        }
    }

    /// Closed boundary polyline of `rect` with `n` points per side.
    pub fn rect_boundary(&self, rect: Rect, n: usize) -> Result<Vec<PhasePoint>> {
        let n = n.max(2);
        let mut out = Vec::with_capacity(4 * n);
        let s = |j: usize| j as f64 / n as f64;
        for j in 0..n {
            out.push(self.rect_point(rect, s(j), 0.0)?);
        }
        for j in 0..n {
            out.push(self.rect_point(rect, 1.0, s(j))?);
        }
        for j in 0..n {
            out.push(self.rect_point(rect, 1.0 - s(j), 1.0)?);
        }
        for j in 0..n {
            out.push(self.rect_point(rect, 0.0, 1.0 - s(j))?);
        }
        out.push(out[0]);
        Ok(out)
    }
}

/// Invert `z -> (E0(z), E_mu(z))` on one half-plane. With `k = x/y =
/// exp((ell - h)/mu)` the unharvested energy restricted to the ray
/// `x = k y` is convex in `y` with its minimum on `r`; the lower root lies
/// below `r` and the upper one above.
pub fn chart_point(s: &Schedule, half: Half, ell: f64, h: f64) -> Result<PhasePoint> {
    let p = s.base();
    let mu = s.mu();
    if mu <= 0.0 {
        return Err(Error::ChartOutOfRange { ell, h });
    }
    let k = ((ell - h) / mu).exp();
    let slope = p.d() * k + p.b();
    let ac = p.a() + p.c();
    let shift = p.c() * k.ln() + ell;
    let f = |y: f64| slope * y - ac * y.ln() - shift;
    let df = |y: f64| slope - ac / y;
    let y_star = ac / slope;
    if !(k.is_finite() && f(y_star) < 0.0) {
        return Err(Error::ChartOutOfRange { ell, h });
    }
    let (lo, hi) = match half {
        Half::Lower => {
            let mut lo = 0.5 * y_star;
            while f(lo) <= 0.0 {
                lo *= 0.5;
            }
            (lo, y_star)
        }
        Half::Upper => {
            let mut hi = 2.0 * y_star;
            while f(hi) <= 0.0 {
                hi *= 2.0;
            }
            (y_star, hi)
        }
    };
    let mut y = bisect(f, lo, hi, 1e-14 * y_star);
    for _ in 0..2 {
        let d = df(y);
        if d != 0.0 {
            let next = y - f(y) / d;
            if f(next).abs() < f(y).abs() {
                y = next;
            }
        }
    }
    Ok(PhasePoint { x: k * y, y })
}

/// `n` points of the level curve at equal angles about the center, each
/// refined along its ray to `|E - level| <= 1e-10`.
pub fn sample_level_curve(p: &VolterraParams, level: f64, n: usize) -> Result<Vec<PhasePoint>> {
    check_level(p, level)?;
    if n < 16 {
        return Err(Error::InvalidParameter {
            name: "n",
            value: n as f64,
            reason: "at least 16 samples are needed",
        });
    }
    let frame = AngularFrame::for_params(p);
    let c = equilibrium(p);
    (0..n)
        .map(|j| {
            let theta = 2.0 * PI * j as f64 / n as f64;
            let (ux, uy) = {
                let (x, y) = frame.point_at(theta, 1.0);
                (x - c.x, y - c.y)
            };
            // Largest radius before the ray leaves the quadrant.
            let mut rho_max = f64::INFINITY;
            if ux < 0.0 {
                rho_max = rho_max.min(-c.x / ux);
            }
            if uy < 0.0 {
                rho_max = rho_max.min(-c.y / uy);
            }
            let g = |rho: f64| energy_unchecked(p, c.x + rho * ux, c.y + rho * uy) - level;
            let mut hi = if rho_max.is_finite() { 0.5 * rho_max } else { 1.0 };
            while g(hi) <= 0.0 {
                hi = if rho_max.is_finite() {
                    0.5 * (hi + rho_max)
                } else {
                    2.0 * hi
                };
            }
            let rho = bisect(g, 0.0, hi, 0.0);
            Ok(PhasePoint {
                x: c.x + rho * ux,
                y: c.y + rho * uy,
            })
        })
        .collect()
}

/// Polyline length including the closing segment.
pub fn perimeter(points: &[PhasePoint]) -> f64 {
    let n = points.len();
    (0..n).map(|i| points[i].distance(&points[(i + 1) % n])).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnulusCurves {
    pub inner: Vec<[f64; 2]>,
    pub outer: Vec<[f64; 2]>,
}

/// Geometry for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotData {
    #[serde(rename = "annulusP")]
    pub annulus_p: AnnulusCurves,
    #[serde(rename = "annulusQ")]
    pub annulus_q: AnnulusCurves,
    pub rect1: Vec<[f64; 2]>,
    pub rect2: Vec<[f64; 2]>,
    pub line_r: [[f64; 2]; 2],
    pub linked: bool,
}

/// Level curves, rectangle boundaries and the segment of `r` in the quadrant.
/// Rectangles are left empty when the annuli are not linked.
pub fn plot_data(s: &Schedule, levels: &Levels, n: usize) -> Result<PlotData> {
    let base = s.base();
    let harvested = s.harvested();
    let pts = |v: Vec<PhasePoint>| v.into_iter().map(|z| [z.x, z.y]).collect::<Vec<_>>();
    let curve = |p: &VolterraParams, l: f64| sample_level_curve(p, l, n).map(pts);
    let linked = check_linked(s, levels);
    let (rect1, rect2) = match &linked {
        Ok(cfg) => {
            let side = (n / 4).max(4);
            (
                pts(cfg.rect_boundary(Rect::R1, side)?),
                pts(cfg.rect_boundary(Rect::R2, side)?),
            )
        }
        Err(_) => (vec![], vec![]),
    };
    let ac = base.a() + base.c();
    Ok(PlotData {
        annulus_p: AnnulusCurves {
            inner: curve(&base, levels.ell1)?,
            outer: curve(&base, levels.ell2)?,
        },
        annulus_q: AnnulusCurves {
            inner: curve(&harvested, levels.h1)?,
            outer: curve(&harvested, levels.h2)?,
        },
        rect1,
        rect2,
        line_r: [[0.0, ac / base.b()], [ac / base.d(), 0.0]],
        linked: linked.is_ok(),
    })
}
