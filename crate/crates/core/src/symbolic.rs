//! Symbol itineraries of the switched Poincare map and realization of
//! periodic words as periodic orbits.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::ops::ControlFlow;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LinkedConfig, Rect, Side};
use crate::integrate::{drive, wind, Tolerances, Winding};
use crate::model::{energy_unchecked, PhasePoint, Schedule, VolterraParams};
use crate::report::csv_row;
use crate::sap::PhaseMap;
use crate::twist::{classify_symbol, BandKind, SymbolClass, CLASS_MARGIN};

pub use crate::sap::entropy_floor;

/// Largest accepted closing defect of a periodic orbit, in scaled coordinates.
pub const ORBIT_TOL: f64 = 1e-8;

/// One symbol pair `(p, q)`: band of the unharvested and of the harvested phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Letter {
    pub p: usize,
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolWord {
    letters: Vec<Letter>,
    periodic: bool,
}

impl SymbolWord {
    pub fn new(letters: Vec<Letter>, periodic: bool) -> Result<Self> {
        if letters.is_empty() {
            return Err(Error::BadWord {
                input: String::new(),
                reason: "empty word".into(),
            });
        }
        Ok(Self { letters, periodic })
    }

    pub fn periodic(letters: Vec<Letter>) -> Result<Self> {
        Self::new(letters, true)
    }

    /// Parse `p0q0|p1q1|...` with one decimal digit per symbol.
    pub fn parse(input: &str) -> Result<Self> {
        let bad = |reason: &str| Error::BadWord {
            input: input.to_string(),
            reason: reason.to_string(),
        };
        let letters = input
            .split('|')
            .map(|tok| {
                let digits: Vec<u32> = tok.chars().map(|c| c.to_digit(10)).collect::<Option<_>>()
                    .ok_or_else(|| bad("letters are pairs of decimal digits"))?;
                match digits[..] {
                    [p, q] => Ok(Letter {
                        p: p as usize,
                        q: q as usize,
                    }),
                    _ => Err(bad("each letter must have exactly two digits")),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::periodic(letters).map_err(|_| bad("empty word"))
    }

    /// Reject letters outside `{0..m1-1} x {0..m2-1}`.
    pub fn check(&self, m1: u32, m2: u32) -> Result<()> {
        for l in &self.letters {
            if l.p >= m1 as usize || l.q >= m2 as usize {
                return Err(Error::BadWord {
                    input: self.to_string(),
                    reason: format!("letter {}{} outside alphabet {m1}x{m2}", l.p, l.q),
                });
            }
        }
        Ok(())
    }

    pub fn letters(&self) -> &[Letter] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// Cyclic left shift by `k`.
    pub fn rotated(&self, k: usize) -> Self {
        let mut letters = self.letters.clone();
        let n = letters.len();
        letters.rotate_left(k % n);
        Self {
            letters,
            periodic: self.periodic,
        }
    }

    pub fn is_rotation_of(&self, other: &SymbolWord) -> bool {
        self.len() == other.len() && (0..self.len()).any(|k| &self.rotated(k) == other)
    }

    /// Letters flattened to `p * m2 + q`.
    pub fn codes(&self, m2: u32) -> Vec<u32> {
        self.letters
            .iter()
            .map(|l| (l.p * m2 as usize + l.q) as u32)
            .collect()
    }

    /// All words of length `len` in lexicographic order.
    pub fn all(m1: u32, m2: u32, len: usize) -> Vec<SymbolWord> {
        let alphabet: Vec<Letter> = (0..m1 as usize)
            .flat_map(|p| (0..m2 as usize).map(move |q| Letter { p, q }))
            .collect();
        let mut words = vec![Vec::new()];
        for _ in 0..len {
            words = words
                .into_iter()
                .flat_map(|w: Vec<Letter>| {
                    alphabet.iter().map(move |l| {
                        let mut w = w.clone();
                        w.push(*l);
                        w
                    })
                })
                .collect();
        }
        words
            .into_iter()
            .filter(|w| !w.is_empty())
            .map(|letters| SymbolWord {
                letters,
                periodic: true,
            })
            .collect()
    }
}

impl fmt::Display for SymbolWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.letters.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{}{}", l.p, l.q)?;
        }
        Ok(())
    }
}

impl FromStr for SymbolWord {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Truncated shift metric `sum_{|i| <= window} |a_i - b_i| / m^(|i|+1)` on
/// the periodic extensions of `a` and `b`.
pub fn shift_distance(a: &[u32], b: &[u32], m: u32, window: usize) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let at = |w: &[u32], i: i64| w[i.rem_euclid(w.len() as i64) as usize];
    let m = f64::from(m);
    let w = window as i64;
    (-w..=w)
        .map(|i| {
            let diff = (f64::from(at(a, i)) - f64::from(at(b, i))).abs();
            diff / m.powi(i.unsigned_abs() as i32 + 1)
        })
        .sum()
}

/// Symbols read off along `k` cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct Itinerary {
    pub classes: Vec<(SymbolClass, SymbolClass)>,
    /// Cycles in which a sampled point was outside its rectangle.
    pub departures: Vec<usize>,
}

impl Itinerary {
    pub fn is_clean(&self) -> bool {
        self.departures.is_empty()
            && self
                .classes
                .iter()
                .all(|(p, q)| matches!((p, q), (SymbolClass::Index(_), SymbolClass::Index(_))))
    }

    /// Letters of the itinerary; `None` unless every symbol is resolved.
    pub fn letters(&self) -> Option<Vec<Letter>> {
        self.classes
            .iter()
            .map(|c| match c {
                (SymbolClass::Index(p), SymbolClass::Index(q)) => Some(Letter { p: *p, q: *q }),
                _ => None,
            })
            .collect()
    }

    fn describe(&self) -> String {
        let part = |c: &SymbolClass| match c {
            SymbolClass::Index(i) => i.to_string(),
            SymbolClass::Ambiguous => "?".into(),
            SymbolClass::None => "-".into(),
        };
        self.classes
            .iter()
            .map(|(p, q)| format!("{}{}", part(p), part(q)))
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// The switched system on a linked configuration with its symbol bands.
#[derive(Debug, Clone, Copy)]
pub struct SwitchedMap {
    cfg: LinkedConfig,
    phase0: PhaseMap,
    phase_mu: PhaseMap,
    n_star: u64,
    n_star_star: u64,
    m1: u32,
    m2: u32,
    tol: Tolerances,
    margin: f64,
}

impl SwitchedMap {
    pub fn new(cfg: &LinkedConfig, m1: u32, m2: u32, tol: &Tolerances) -> Result<Self> {
        let phase0 = PhaseMap::unharvested(cfg, tol)?;
        let phase_mu = PhaseMap::harvested(cfg, tol)?;
        Ok(Self {
            cfg: *cfg,
            n_star: phase0.floor()?,
            n_star_star: phase_mu.floor()?,
            phase0,
            phase_mu,
            m1,
            m2,
            tol: *tol,
            margin: CLASS_MARGIN,
        })
    }

    pub fn with_tolerances(mut self, tol: &Tolerances) -> Self {
        self.tol = *tol;
        self
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn config(&self) -> &LinkedConfig {
        &self.cfg
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    pub fn floors(&self) -> (u64, u64) {
        (self.n_star, self.n_star_star)
    }

    pub fn alphabet(&self) -> (u32, u32) {
        (self.m1, self.m2)
    }

    /// Unharvested phase with the unwrapped angle about its center.
    pub fn phase0(&self, z: &PhasePoint) -> Result<Winding> {
        let m = &self.phase0;
        wind(&m.params, &m.frame, z, m.duration, &self.tol)
    }

    /// Harvested phase with the unwrapped angle about its center.
    pub fn phase_mu(&self, z: &PhasePoint) -> Result<Winding> {
        let m = &self.phase_mu;
        wind(&m.params, &m.frame, z, m.duration, &self.tol)
    }

    /// One full period of the switched system.
    pub fn poincare(&self, z: &PhasePoint) -> Result<PhasePoint> {
        let w = self.phase0(z)?;
        Ok(self.phase_mu(&w.end)?.end)
    }

    pub fn iterate(&self, z: &PhasePoint, k: usize) -> Result<PhasePoint> {
        (0..k).try_fold(*z, |w, _| self.poincare(&w))
    }

    fn check_domain(&self, z: &PhasePoint, iterate: usize) -> Result<()> {
        let tol = self.tol.energy_budget;
        if self.cfg.annulus_p().contains(z, tol) || self.cfg.annulus_q().contains(z, tol) {
            Ok(())
        } else {
            Err(Error::LeftDomain { iterate })
        }
    }

    /// Symbols of `k` cycles from `z`.
    pub fn itinerary(&self, z: &PhasePoint, k: usize) -> Result<Itinerary> {
        let tol = self.tol.energy_budget;
        let mut out = Itinerary {
            classes: Vec::with_capacity(k),
            departures: vec![],
        };
        let mut w = *z;
        for i in 0..k {
            self.check_domain(&w, i)?;
            let mid = self.phase0(&w)?;
            self.check_domain(&mid.end, i)?;
            let end = self.phase_mu(&mid.end)?;
            let p = classify_symbol(mid.theta_end, self.n_star, self.m1 as usize, BandKind::H, self.margin);
            let q = classify_symbol(
                end.theta_end,
                self.n_star_star,
                self.m2 as usize,
                BandKind::K,
                self.margin,
            );
            if !self.cfg.in_rect(Rect::R1, &w, tol) || !self.cfg.in_rect(Rect::R2, &mid.end, tol) {
                out.departures.push(i);
            }
            out.classes.push((p, q));
            w = end.end;
        }
        self.check_domain(&w, k)?;
        Ok(out)
    }
}

/// Newton search settings for [`find_periodic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchOptions {
    /// Fallback seeds: a `grid x grid` lattice over R1 in scaled coordinates.
    pub grid: usize,
    pub max_iterations: usize,
    /// Finite-difference step in scaled coordinates.
    pub fd_step: f64,
    pub residual_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid: 4,
            max_iterations: 30,
            fd_step: 1e-7,
            residual_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicOrbit {
    pub word: String,
    pub anchor: PhasePoint,
    /// `w_0 .. w_{k-1}` in R1.
    pub points: Vec<PhasePoint>,
    /// Images of the points after the unharvested phase, in R2.
    pub midpoints: Vec<PhasePoint>,
    /// `max_i |phi(w_i) - w_{i+1}|` in scaled coordinates.
    pub residual: f64,
    pub iterations: usize,
}

impl PeriodicOrbit {
    pub fn period(&self) -> usize {
        self.points.len()
    }

    /// Largest pointwise distance after the best cyclic alignment.
    pub fn separation(&self, other: &PeriodicOrbit) -> f64 {
        let k = self.points.len();
        if k != other.points.len() || k == 0 {
            return f64::INFINITY;
        }
        (0..k)
            .map(|s| {
                (0..k)
                    .map(|i| self.points[i].distance(&other.points[(i + s) % k]))
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Multiple shooting on R1 points `w_i = (u_i, v_i)` in scaled chart
/// coordinates. The unharvested phase keeps `E0`, the harvested one keeps
/// `E_mu`, so the point after phase 0 is pinned to `(u_i, v_{i+1})` in the
/// chart of R2 and only the lifted angles remain to be matched.
struct Shooting<'a> {
    map: &'a SwitchedMap,
    word: &'a SymbolWord,
}

struct ShotPoints {
    a: Vec<PhasePoint>,
    b: Vec<PhasePoint>,
}

impl Shooting<'_> {
    fn k(&self) -> usize {
        self.word.len()
    }

    fn points(&self, x: &[f64]) -> Result<ShotPoints> {
        let k = self.k();
        let cfg = &self.map.cfg;
        let mut a = Vec::with_capacity(k);
        let mut b = Vec::with_capacity(k);
        for i in 0..k {
            let j = (i + 1) % k;
            a.push(cfg.rect_point(Rect::R1, x[2 * i], x[2 * i + 1])?);
            b.push(cfg.rect_point(Rect::R2, x[2 * j + 1], x[2 * i])?);
        }
        Ok(ShotPoints { a, b })
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.k();
        let m = self.map;
        let ShotPoints { a, b } = self.points(x)?;
        let rows: Vec<[f64; 2]> = (0..k)
            .into_par_iter()
            .map(|i| {
                let l = self.word.letters()[i];
                let j = (i + 1) % k;
                let w0 = m.phase0(&a[i])?;
                let f0 = m.phase0.frame.angle_of(b[i].x, b[i].y);
                let r0 = w0.theta_end - (f0 + m.phase0.kind.band_start(m.n_star, l.p));
                let w1 = m.phase_mu(&b[i])?;
                let fq = m.phase_mu.frame.angle_of(a[j].x, a[j].y);
                let rq = w1.theta_end
                    - (fq + 2.0 * PI + m.phase_mu.kind.band_start(m.n_star_star, l.q) - PI);
                Ok([r0, rq])
            })
            .collect::<Result<_>>()?;
        Ok(rows.into_iter().flatten().collect())
    }

    fn jacobian(&self, x: &[f64], f: &[f64], h: f64) -> Result<DMatrix<f64>> {
        let n = x.len();
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut xp = x.to_vec();
                xp[j] += h;
                let fp = self.residual(&xp)?;
                Ok(fp.iter().zip(f).map(|(a, b)| (a - b) / h).collect())
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(n, n, |i, j| cols[j][i]))
    }

    /// Seed from one-dimensional solves: each angle equation is dominated
    /// by the twist in one coordinate.
    fn sweep_seed(&self) -> Option<Vec<f64>> {
        let k = self.k();
        let mut x = vec![0.5; 2 * k];
        for pass in 0..2 {
            for eq in 0..2 * k {
                // Row 2i is driven by u_i, row 2i+1 by v_{i+1}.
                let i = eq / 2;
                let var = if eq % 2 == 0 { 2 * i } else { 2 * ((i + 1) % k) + 1 };
                let g = |t: f64| -> Option<f64> {
                    let mut y = x.clone();
                    y[var] = t;
                    self.residual(&y).ok().map(|r| r[eq])
                };
                let (mut lo, mut hi) = (0.0, 1.0);
                let (glo, ghi) = (g(lo)?, g(hi)?);
                if glo.signum() == ghi.signum() {
                    if pass == 1 {
                        return None;
                    }
                    continue;
                }
                for _ in 0..30 {
                    let mid = 0.5 * (lo + hi);
                    let gm = g(mid)?;
                    if gm.signum() == glo.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                x[var] = 0.5 * (lo + hi);
            }
        }
        Some(x)
    }

    /// Damped Newton on the lifted angle equations.
    fn newton(&self, mut x: Vec<f64>, opts: &SearchOptions) -> Result<(Vec<f64>, usize)> {
        let mut f = self.residual(&x)?;
        for it in 0..opts.max_iterations {
            if max_abs(&f) <= ANGLE_TOL {
                return Ok((x, it));
            }
            let jac = self.jacobian(&x, &f, opts.fd_step)?;
            let Some(dx) = jac.lu().solve(&DVector::from_column_slice(&f)) else {
                break;
            };
            let Some((xt, ft)) = damped(&x, dx.as_slice(), max_abs(&f), |t| self.residual(t)) else {
                break;
            };
            x = xt;
            f = ft;
        }
        if max_abs(&f) <= 1e3 * ANGLE_TOL {
            Ok((x, opts.max_iterations))
        } else {
            Err(Error::NotFound {
                word: self.word.to_string(),
            })
        }
    }
}

/// Largest absolute entry.
fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Backtracking along `-dx` until the residual norm drops below `f_norm`.
fn damped(
    x: &[f64],
    dx: &[f64],
    f_norm: f64,
    residual: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut lambda = 1.0;
    while lambda > 1e-4 {
        let trial: Vec<f64> = x.iter().zip(dx).map(|(a, d)| a - lambda * d).collect();
        if let Ok(ft) = residual(&trial) {
            if max_abs(&ft) < f_norm {
                return Some((trial, ft));
            }
        }
        lambda *= 0.5;
    }
    None
}

/// Lifted angle residual below which the shooting stage stops.
const ANGLE_TOL: f64 = 1e-10;

/// Newton on the actual phase maps. Unknowns are the R1 points `a_i` and
/// the R2 points `b_i` in scaled chart coordinates; equations are
/// `phi_0(a_i) = b_i` and `phi_mu(b_i) = a_{i+1}`. This drops the energy
/// pinning of the shooting stage, which the integrator only honours up to
/// its drift.
struct Polish<'a> {
    map: &'a SwitchedMap,
    k: usize,
}

impl Polish<'_> {
    fn point(&self, rect: Rect, c: &[f64]) -> Result<PhasePoint> {
        self.map.cfg.rect_point(rect, c[0], c[1])
    }

    fn coords(&self, rect: Rect, z: &PhasePoint) -> [f64; 2] {
        let (u, v) = self.map.cfg.rect_coords(rect, z);
        [u, v]
    }

    /// Image of leg `l` (even: unharvested from `a_i`, odd: harvested from
    /// `b_i`) in the chart of its target rectangle.
    fn leg(&self, l: usize, c: &[f64]) -> Result<[f64; 2]> {
        if l.is_multiple_of(2) {
            let z = self.point(Rect::R1, c)?;
            Ok(self.coords(Rect::R2, &self.map.phase0(&z)?.end))
        } else {
            let z = self.point(Rect::R2, c)?;
            Ok(self.coords(Rect::R1, &self.map.phase_mu(&z)?.end))
        }
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = 2 * self.k;
        let legs: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|l| self.leg(l, &x[2 * l..2 * l + 2]))
            .collect::<Result<_>>()?;
        let mut f = Vec::with_capacity(2 * n);
        for (l, img) in legs.iter().enumerate() {
            let next = (l + 1) % n;
            f.push(img[0] - x[2 * next]);
            f.push(img[1] - x[2 * next + 1]);
        }
        Ok(f)
    }

    fn jacobian(&self, x: &[f64], f: &[f64], h: f64) -> Result<DMatrix<f64>> {
        let n = 2 * self.k;
        let blocks: Vec<[[f64; 2]; 2]> = (0..n)
            .into_par_iter()
            .map(|l| {
                let next = (l + 1) % n;
                let base = [f[2 * l] + x[2 * next], f[2 * l + 1] + x[2 * next + 1]];
                let mut block = [[0.0; 2]; 2];
                for j in 0..2 {
                    let mut c = [x[2 * l], x[2 * l + 1]];
                    c[j] += h;
                    let img = self.leg(l, &c)?;
                    block[0][j] = (img[0] - base[0]) / h;
                    block[1][j] = (img[1] - base[1]) / h;
                }
                Ok(block)
            })
            .collect::<Result<_>>()?;
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        for (l, block) in blocks.iter().enumerate() {
            let next = (l + 1) % n;
            for r in 0..2 {
                for c in 0..2 {
                    jac[(2 * l + r, 2 * l + c)] += block[r][c];
                }
                jac[(2 * l + r, 2 * next + r)] -= 1.0;
            }
        }
        Ok(jac)
    }

    /// `max_i |phi(a_i) - a_{i+1}|` by direct composition.
    fn defect(&self, x: &[f64]) -> Result<f64> {
        let n = 2 * self.k;
        let mut worst: f64 = 0.0;
        for i in 0..self.k {
            let a = self.point(Rect::R1, &x[4 * i..4 * i + 2])?;
            let img = self.coords(Rect::R1, &self.map.poincare(&a)?);
            let next = (2 * i + 2) % n;
            worst = worst
                .max((img[0] - x[2 * next]).abs())
                .max((img[1] - x[2 * next + 1]).abs());
        }
        Ok(worst)
    }

    fn run(&self, mut x: Vec<f64>, opts: &SearchOptions) -> Result<(Vec<f64>, f64, usize)> {
        let mut f = self.residual(&x)?;
        let mut defect = self.defect(&x)?;
        let mut best = (x.clone(), defect);
        let mut stalled = 0;
        for it in 0..opts.max_iterations {
            if defect <= opts.residual_tol || stalled >= 2 {
                return Ok((best.0, best.1, it));
            }
            let jac = self.jacobian(&x, &f, opts.fd_step)?;
            let Some(dx) = jac.lu().solve(&DVector::from_column_slice(&f)) else {
                break;
            };
            let Some((xt, ft)) = damped(&x, dx.as_slice(), max_abs(&f), |t| self.residual(t)) else {
                break;
            };
            x = xt;
            f = ft;
            defect = self.defect(&x)?;
            if defect < best.1 {
                best = (x.clone(), defect);
                stalled = 0;
            } else {
                stalled += 1;
            }
        }
        Ok((best.0, best.1, opts.max_iterations))
    }
}

/// Periodic orbit of the switched map whose itinerary is `word`.
///
/// Seeds come from one-dimensional angle solves, then from a uniform grid
/// over R1. Each seed goes through shooting on the lifted angles and a
/// polishing Newton on the phase maps; the result is re-verified by its
/// itinerary.
pub fn find_periodic(map: &SwitchedMap, word: &SymbolWord, opts: &SearchOptions) -> Result<PeriodicOrbit> {
    word.check(map.m1, map.m2)?;
    let shooting = Shooting { map, word };
    let k = word.len();
    let polish = Polish { map, k };
    let mut seeds: Vec<Vec<f64>> = shooting.sweep_seed().into_iter().collect();
    let g = opts.grid;
    for i in 0..g {
        for j in 0..g {
            let u = (i as f64 + 0.5) / g as f64;
            let v = (j as f64 + 0.5) / g as f64;
            seeds.push([u, v].repeat(k));
        }
    }
    let mut drift = None;
    for seed in seeds {
        let Ok((x, it_shoot)) = shooting.newton(seed, opts) else {
            continue;
        };
        // Interleave (a_0, b_0, a_1, b_1, ...) for the polishing stage.
        let mut y = Vec::with_capacity(4 * k);
        for i in 0..k {
            let j = (i + 1) % k;
            y.extend([x[2 * i], x[2 * i + 1], x[2 * j + 1], x[2 * i]]);
        }
        let Ok((y, defect, it_polish)) = polish.run(y, opts) else {
            continue;
        };
        if defect > ORBIT_TOL {
            continue;
        }
        let a: Vec<PhasePoint> = (0..k)
            .map(|i| polish.point(Rect::R1, &y[4 * i..4 * i + 2]))
            .collect::<Result<_>>()?;
        match verify_word(map, &a, word) {
            Ok(()) => {
                let midpoints = a
                    .iter()
                    .map(|z| map.phase0(z).map(|w| w.end))
                    .collect::<Result<_>>()?;
                return Ok(PeriodicOrbit {
                    word: word.to_string(),
                    anchor: a[0],
                    points: a,
                    midpoints,
                    residual: defect,
                    iterations: it_shoot + it_polish,
                });
            }
            Err(e @ Error::ItineraryDrift { .. }) => drift = Some(e),
            Err(_) => {}
        }
    }
    Err(drift.unwrap_or(Error::NotFound {
        word: word.to_string(),
    }))
}

/// The anchor's itinerary must reproduce `word` at the working tolerance,
/// and every orbit point must carry its own letter at the working tolerance
/// and at a tenth of it. Errors grow by about three orders of magnitude per
/// cycle, so the anchor alone is not followed at a different tolerance.
fn verify_word(map: &SwitchedMap, points: &[PhasePoint], word: &SymbolWord) -> Result<()> {
    let drift = |it: &Itinerary| Error::ItineraryDrift {
        word: word.to_string(),
        found: it.describe(),
    };
    let it = map.itinerary(&points[0], word.len())?;
    if !it.is_clean() || it.letters().as_deref() != Some(word.letters()) {
        return Err(drift(&it));
    }
    for factor in [1.0, 0.1] {
        let m = map.with_tolerances(&map.tol.tightened(factor));
        let mut classes = Vec::with_capacity(points.len());
        let mut departures = Vec::new();
        for (i, z) in points.iter().enumerate() {
            let one = m.itinerary(z, 1)?;
            classes.extend(one.classes);
            if !one.departures.is_empty() {
                departures.push(i);
            }
        }
        let it = Itinerary { classes, departures };
        if !it.is_clean() || it.letters().as_deref() != Some(word.letters()) {
            return Err(drift(&it));
        }
    }
    Ok(())
}

/// Complete side-to-side passages through `rect` along the orbit of `z`
/// under `p` over `[0, t]`.
pub fn count_crossings(
    cfg: &LinkedConfig,
    p: &VolterraParams,
    rect: Rect,
    z: &PhasePoint,
    t: f64,
    tol: &Tolerances,
) -> Result<usize> {
    const SUB: usize = 16;
    let sides = *cfg.sides_annulus(rect);
    let sides_params = *sides.params();
    // Outside samples are tagged with the side level they lie beyond.
    let tag = |w: [f64; 2]| -> Option<Option<Side>> {
        let z = PhasePoint::from_array(w);
        if cfg.in_rect(rect, &z, 0.0) {
            return None;
        }
        let e = energy_unchecked(&sides_params, w[0], w[1]);
        Some(if e < sides.inner() {
            Some(Side::Left)
        } else if e > sides.outer() {
            Some(Side::Right)
        } else {
            None
        })
    };
    let mut count = 0;
    let mut state = tag(z.to_array());
    let mut entry: Option<Option<Side>> = None;
    drive(p, z.to_array(), t, tol, None, |v| {
        let (t0, h) = (v.step.t0, v.step.h);
        for j in 1..=SUB {
            let now = tag(v.at(t0 + h * j as f64 / SUB as f64));
            match (state, now) {
                (Some(outside), None) => entry = Some(outside),
                (None, Some(exit)) => {
                    if let Some(Some(inn)) = entry {
                        if exit.is_some_and(|e| e != inn) {
                            count += 1;
                        }
                    }
                    entry = None;
                }
                _ => {}
            }
            state = now;
        }
        Ok(ControlFlow::Continue(()))
    })?;
    Ok(count)
}

/// Crossings of R2 during the unharvested phase and of R1 during the
/// harvested phase, in cycle `i` of the orbit of `z`.
pub fn crossing_count(map: &SwitchedMap, z: &PhasePoint, i: usize) -> Result<(usize, usize)> {
    let start = map.iterate(z, i)?;
    let cfg = &map.cfg;
    let s = cfg.schedule();
    let tol = &map.tol;
    let c2 = count_crossings(cfg, &s.base(), Rect::R2, &start, s.r0(), tol)?;
    let mid = map.phase0(&start)?.end;
    let c1 = count_crossings(cfg, &s.harvested(), Rect::R1, &mid, s.rmu(), tol)?;
    Ok((c2, c1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordOutcome {
    pub realized: bool,
    pub residual: Option<f64>,
    pub anchor: Option<PhasePoint>,
    pub crossings: Option<[usize; 2]>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Separation {
    pub a: String,
    pub b: String,
    pub distance: f64,
    pub cyclic_shift: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealizationReport {
    pub length: usize,
    pub total: usize,
    pub realized: usize,
    pub success_rate: f64,
    pub words: BTreeMap<String, WordOutcome>,
    pub separations: Vec<Separation>,
    /// Minimum of `count2 - p_0` over realized orbits.
    pub kappa1: Option<i64>,
    /// Minimum of `count1 - q_0` over realized orbits.
    pub kappa2: Option<i64>,
    pub entropy_floor: f64,
}

/// Try every periodic word of length `len`.
pub fn realize_words(map: &SwitchedMap, len: usize, opts: &SearchOptions) -> Result<RealizationReport> {
    let words = SymbolWord::all(map.m1, map.m2, len);
    let found: Vec<(SymbolWord, Result<(PeriodicOrbit, (usize, usize))>)> = words
        .par_iter()
        .map(|w| {
            let r = find_periodic(map, w, opts)
                .and_then(|o| crossing_count(map, &o.anchor, 0).map(|c| (o, c)));
            (w.clone(), r)
        })
        .collect();
    let mut out = BTreeMap::new();
    let mut orbits = Vec::new();
    let (mut kappa1, mut kappa2) = (None::<i64>, None::<i64>);
    for (w, r) in found {
        let outcome = match r {
            Ok((o, (c2, c1))) => {
                let l = w.letters()[0];
                let k1 = c2 as i64 - l.p as i64;
                let k2 = c1 as i64 - l.q as i64;
                kappa1 = Some(kappa1.map_or(k1, |v| v.min(k1)));
                kappa2 = Some(kappa2.map_or(k2, |v| v.min(k2)));
                let outcome = WordOutcome {
                    realized: true,
                    residual: Some(o.residual),
                    anchor: Some(o.anchor),
                    crossings: Some([c2, c1]),
                    error: None,
                };
                orbits.push((w.clone(), o));
                outcome
            }
            Err(e) => WordOutcome {
                realized: false,
                residual: None,
                anchor: None,
                crossings: None,
                error: Some(e.to_string()),
            },
        };
        out.insert(w.to_string(), outcome);
    }
    let mut separations = Vec::new();
    for (i, (wa, oa)) in orbits.iter().enumerate() {
        for (wb, ob) in &orbits[i + 1..] {
            separations.push(Separation {
                a: wa.to_string(),
                b: wb.to_string(),
                distance: oa.separation(ob),
                cyclic_shift: wa.is_rotation_of(wb),
            });
        }
    }
    let total = words.len();
    let realized = orbits.len();
    Ok(RealizationReport {
        length: len,
        total,
        realized,
        success_rate: if total == 0 { 0.0 } else { realized as f64 / total as f64 },
        words: out,
        separations,
        kappa1,
        kappa2,
        entropy_floor: entropy_floor(map.m1, map.m2),
    })
}

/// Write `cycle,phase,t,x,y` rows along `cycles` periods of the switched
/// system from `z`, one row per accepted step.
pub fn write_orbit_csv<W: Write>(
    out: &mut W,
    schedule: &Schedule,
    z: &PhasePoint,
    cycles: usize,
    tol: &Tolerances,
) -> Result<()> {
    let period = schedule.period();
    let mut rows = vec![(0, "0", csv_row(&[0.0, z.x, z.y]))];
    let mut w = *z;
    for cycle in 0..cycles {
        let t_cycle = cycle as f64 * period;
        for (label, params, offset, duration) in [
            ("0", schedule.base(), 0.0, schedule.r0()),
            ("mu", schedule.harvested(), schedule.r0(), schedule.rmu()),
        ] {
            let t0 = t_cycle + offset;
            let end = drive(&params, w.to_array(), duration, tol, None, |v| {
                let y = v.step.y1;
                rows.push((cycle, label, csv_row(&[v.step.t1() + t0, y[0], y[1]])));
                Ok(ControlFlow::Continue(()))
            })?;
            w = PhasePoint::from_array(end.end);
        }
    }
    let io = |e: std::io::Error| Error::Io(e.to_string());
    writeln!(out, "cycle,phase,t,x,y").map_err(io)?;
    for (cycle, label, row) in &rows {
        writeln!(out, "{cycle},{label},{row}").map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{check_linked, Levels};
    use crate::integrate::time_average;
    use crate::model::{energy, equilibrium};
    use proptest::prelude::*;

    fn letter(p: usize, q: usize) -> Letter {
        Letter { p, q }
    }

    #[test]
    fn word_round_trip() {
        let w = SymbolWord::parse("00|10").unwrap();
        assert_eq!(w.letters(), &[letter(0, 0), letter(1, 0)]);
        assert_eq!(w.to_string(), "00|10");
        assert!(w.is_periodic());
        assert_eq!("31".parse::<SymbolWord>().unwrap().letters(), &[letter(3, 1)]);
    }

    #[test]
    fn malformed_words() {
        for bad in ["", "0", "000", "0a", "00||10", "00|"] {
            assert!(matches!(SymbolWord::parse(bad), Err(Error::BadWord { .. })), "{bad:?}");
        }
        let w = SymbolWord::parse("30").unwrap();
        assert!(matches!(w.check(2, 1), Err(Error::BadWord { .. })));
        assert!(SymbolWord::parse("10|01").unwrap().check(2, 2).is_ok());
        assert!(SymbolWord::parse("01").unwrap().check(2, 1).is_err());
    }

    #[test]
    fn enumerate_words() {
        let all = SymbolWord::all(2, 1, 3);
        assert_eq!(all.len(), 8);
        assert_eq!(all[0].to_string(), "00|00|00");
        assert_eq!(all[7].to_string(), "10|10|10");
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(SymbolWord::all(3, 2, 2).len(), 36);
    }

    #[test]
    fn rotations() {
        let a = SymbolWord::parse("00|00|10").unwrap();
        let b = SymbolWord::parse("10|00|00").unwrap();
        assert_eq!(a.rotated(2), b);
        assert!(a.is_rotation_of(&b));
        assert!(!a.is_rotation_of(&SymbolWord::parse("10|10|00").unwrap()));
    }

    #[test]
    fn shift_metric_examples() {
        // Words over {1, 2} written as codes; only index 0 differs.
        let a = [1, 1, 1, 1, 1];
        let mut b = a;
        b[0] = 2;
        assert_eq!(shift_distance(&a, &a, 2, 2), 0.0);
        assert_eq!(shift_distance(&a, &b, 2, 2), 0.5);
        let mut c = a;
        c[1] = 2;
        c[4] = 2;
        assert_eq!(shift_distance(&a, &c, 2, 2), 0.5);
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy_floor(2, 1), 2f64.ln());
        assert_eq!(entropy_floor(1, 1), 0.0);
        assert_eq!(entropy_floor(3, 2), 6f64.ln());
    }

    fn reference() -> LinkedConfig {
        let p = VolterraParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let s = Schedule::new(p, 0.2, 755.0, 1507.0).unwrap();
        check_linked(
            &s,
            &Levels {
                ell1: 2.2,
                ell2: 2.5,
                h1: 2.22,
                h2: 2.34,
            },
        )
        .unwrap()
    }

    #[test]
    fn orbit_csv_layout() {
        let cfg = reference();
        let z = cfg.rect_point(Rect::R1, 0.5, 0.5).unwrap();
        let s = cfg.schedule().with_durations(3.0, 2.0).unwrap();
        let mut buf = Vec::new();
        write_orbit_csv(&mut buf, &s, &z, 2, &Tolerances::default()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("cycle,phase,t,x,y"));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert!(rows.iter().all(|r| r.len() == 5));
        let last = rows.last().unwrap();
        assert_eq!((last[0], last[1]), ("1", "mu"));
        assert!((last[2].parse::<f64>().unwrap() - 10.0).abs() < 1e-12);
        assert!(rows.iter().any(|r| r[1] == "0") && rows.iter().any(|r| r[1] == "mu"));
    }

    #[test]
    fn empty_itinerary() {
        let cfg = reference();
        let map = SwitchedMap::new(&cfg, 2, 1, &Tolerances::default()).unwrap();
        let z = cfg.rect_point(Rect::R1, 0.5, 0.5).unwrap();
        let it = map.itinerary(&z, 0).unwrap();
        assert!(it.classes.is_empty());
        assert_eq!(it.letters(), Some(vec![]));
    }

    #[test]
    fn poincare_is_composition() {
        let cfg = reference();
        let map = SwitchedMap::new(&cfg, 2, 1, &Tolerances::default()).unwrap();
        let z = cfg.rect_point(Rect::R1, 0.3, 0.6).unwrap();
        let mid = map.phase0(&z).unwrap().end;
        let direct = map.phase_mu(&mid).unwrap().end;
        assert!(map.poincare(&z).unwrap().distance(&direct) <= 1e-12);
    }

    #[test]
    fn unharvested_schedule_keeps_energy() {
        let p = VolterraParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let s = Schedule::unharvested(p, 7.0, 5.0).unwrap();
        let z = PhasePoint::new(1.4, 0.8).unwrap();
        let tol = Tolerances::default();
        let out = crate::integrate::flow_switched(&s, &z, s.period(), &tol).unwrap();
        let e0 = energy(&p, &z).unwrap();
        assert!((energy(&p, &out.end).unwrap() - e0).abs() <= tol.energy_budget);
    }

    #[test]
    fn average_principle() {
        // One closed orbit at level 2.5 started on the line r.
        let p = VolterraParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let tol = Tolerances::default();
        let (_, x_plus) = crate::geometry::level_abscissae(&p, 2.5).unwrap();
        let z = PhasePoint::new(x_plus, 2.0 - x_plus).unwrap();
        let tau = crate::twist::period(&p, 2.5, &tol).unwrap();
        let avg = time_average(&p, &z, tau, &tol).unwrap();
        let eq = equilibrium(&p);
        assert!((avg.x - eq.x).abs() < 1e-6 && (avg.y - eq.y).abs() < 1e-6, "{avg:?}");
    }

    proptest! {
        #[test]
        fn shift_metric_symmetric_and_bounded(
            a in proptest::collection::vec(0u32..3, 1..6),
            b in proptest::collection::vec(0u32..3, 1..6),
            window in 0usize..6,
        ) {
            let d = shift_distance(&a, &b, 3, window);
            prop_assert_eq!(d, shift_distance(&b, &a, 3, window));
            prop_assert!(d >= 0.0);
            // sum over i of (m-1)/m^(|i|+1) stays below 2
            prop_assert!(d < 2.0);
        }

        #[test]
        fn parse_display_round_trip(letters in proptest::collection::vec((0usize..10, 0usize..10), 1..8)) {
            let w = SymbolWord::periodic(letters.iter().map(|&(p, q)| Letter { p, q }).collect()).unwrap();
            prop_assert_eq!(SymbolWord::parse(&w.to_string()).unwrap(), w);
        }
    }
}
