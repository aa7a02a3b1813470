//! Period map by time of flight, twist bounds, winding floors and the
//! angular bands that define the symbols.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::level_abscissae;
use crate::integrate::{drive, AngularFrame, Tolerances};
use crate::model::VolterraParams;
use crate::report::fmt_f64;

/// Periods beyond this many center periods are outside the certified range.
pub const PERIOD_LIMIT_FACTOR: f64 = 50.0;
/// Default half-width of the no-decision zone around band edges (radians).
pub const CLASS_MARGIN: f64 = 1e-6;

/// Small-oscillation period `2 pi / sqrt(a c)`.
pub fn center_period(p: &VolterraParams) -> f64 {
    2.0 * PI / (p.a() * p.c()).sqrt()
}

/// Minimal period of the orbit at energy `level`: time for the unwrapped angle
/// about the center to grow by `2 pi`, starting on the positive first axis.
pub fn period(p: &VolterraParams, level: f64, tol: &Tolerances) -> Result<f64> {
    period_within(p, level, tol, PERIOD_LIMIT_FACTOR * center_period(p))
}

pub(crate) fn period_within(p: &VolterraParams, level: f64, tol: &Tolerances, limit: f64) -> Result<f64> {
    let (_, x_plus) = level_abscissae(p, level)?;
    let z0 = [x_plus, (p.a() + p.c() - p.d() * x_plus) / p.b()];
    let frame = AngularFrame::for_params(p);
    let theta0 = frame.angle_of(z0[0], z0[1]);
    let target = theta0 + 2.0 * PI;
    let mut hit = None;
    drive(p, z0, limit, tol, Some(&frame), |v| {
        match v.angle_hit(&frame, target, tol.event_tol) {
            Some(t) => {
                hit = Some(t);
                Ok(ControlFlow::Break(()))
            }
            None => Ok(ControlFlow::Continue(())),
        }
    })?;
    hit.ok_or(Error::PeriodOutOfRange { level, limit })
}

/// Periods on an increasing grid of levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodTable {
    pub levels: Vec<f64>,
    pub periods: Vec<f64>,
    pub tol: f64,
}

/// `n` equally spaced levels from `lo` to `hi` (just `lo` when `n == 1`).
pub fn level_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Periods at every level, checked to increase strictly.
pub fn monotonicity_scan(p: &VolterraParams, levels: &[f64], tol: &Tolerances) -> Result<PeriodTable> {
    if let Some(w) = levels.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter {
            name: "levels",
            value: w[1],
            reason: "level grid must be strictly increasing",
        });
    }
    let periods = levels
        .par_iter()
        .map(|&l| period(p, l, tol))
        .collect::<Result<Vec<_>>>()?;
    for (i, w) in periods.windows(2).enumerate() {
        if w[1] - w[0] <= 0.0 {
            return Err(Error::MonotonicityViolated {
                lower: levels[i],
                upper: levels[i + 1],
            });
        }
    }
    Ok(PeriodTable {
        levels: levels.to_vec(),
        periods,
        tol: tol.rel_tol,
    })
}

/// `level,period` rows in level order.
pub fn write_period_csv<W: Write>(out: &mut W, table: &PeriodTable) -> std::io::Result<()> {
    writeln!(out, "level,period")?;
    for (l, t) in table.levels.iter().zip(&table.periods) {
        writeln!(out, "{},{}", fmt_f64(*l), fmt_f64(*t))?;
    }
    Ok(())
}

/// Minimal phase duration `(m + 3.5) tau_i tau_o / (tau_o - tau_i)` that
/// forces `m` full bands of differential winding across an annulus.
pub fn twist_bound(m: u32, tau_inner: f64, tau_outer: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidParameter {
            name: "m",
            value: 0.0,
            reason: "at least one symbol is needed",
        });
    }
    if !(tau_inner > 0.0 && tau_outer > tau_inner) {
        return Err(Error::NonTwist {
            tau_inner,
            tau_outer,
        });
    }
    Ok((f64::from(m) + 3.5) * tau_inner * tau_outer / (tau_outer - tau_inner))
}

/// `ceil(r / tau_outer)`.
pub fn winding_floor(r: f64, tau_outer: f64) -> Result<u64> {
    if !(r > 0.0 && tau_outer > 0.0) {
        return Err(Error::InvalidParameter {
            name: "r",
            value: r,
            reason: "duration and period must be positive",
        });
    }
    Ok((r / tau_outer).ceil() as u64)
}

/// Periods at the four boundary levels of a linked configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPeriods {
    pub tau_ell1: f64,
    pub tau_ell2: f64,
    pub tau_h1: f64,
    pub tau_h2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistBounds {
    pub m1: u32,
    pub m2: u32,
    pub alpha: f64,
    pub beta: f64,
    pub n_star: Option<u64>,
    pub n_star_star: Option<u64>,
}

impl TwistBounds {
    pub fn new(periods: &BoundaryPeriods, m1: u32, m2: u32) -> Result<Self> {
        Ok(Self {
            m1,
            m2,
            alpha: twist_bound(m1, periods.tau_ell1, periods.tau_ell2)?,
            beta: twist_bound(m2, periods.tau_h1, periods.tau_h2)?,
            n_star: None,
            n_star_star: None,
        })
    }

    /// Fill in the winding floors for the chosen phase durations.
    pub fn with_durations(mut self, periods: &BoundaryPeriods, r0: f64, rmu: f64) -> Result<Self> {
        self.n_star = Some(winding_floor(r0, periods.tau_ell2)?);
        self.n_star_star = Some(winding_floor(rmu, periods.tau_h2)?);
        Ok(self)
    }
}

/// Which phase a band refers to: `H` bands end in the upper half-plane after
/// the unharvested phase, `K` bands in the lower one after the harvested phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BandKind {
    H,
    K,
}

impl BandKind {
    /// Lower edge of band `i` for winding floor `n`; bands have width `pi`.
    pub fn band_start(self, n: u64, i: usize) -> f64 {
        let base = 2.0 * PI * (n as f64 + i as f64);
        match self {
            BandKind::H => base,
            BandKind::K => base + PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymbolClass {
    Index(usize),
    Ambiguous,
    None,
}

/// Band index of a final unwrapped angle among `m` bands above the floor `n`.
pub fn classify_symbol(theta: f64, n: u64, m: usize, kind: BandKind, margin: f64) -> SymbolClass {
    let mut near_edge = false;
    for i in 0..m {
        let lo = kind.band_start(n, i);
        let hi = lo + PI;
        if theta > lo + margin && theta < hi - margin {
            return SymbolClass::Index(i);
        }
        if (theta - lo).abs() <= margin || (theta - hi).abs() <= margin {
            near_edge = true;
        }
    }
    if near_edge {
        SymbolClass::Ambiguous
    } else {
        SymbolClass::None
    }
}
