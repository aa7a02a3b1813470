//! Volterra vector fields, equilibria, first integrals and the seasonal
//! harvesting schedule.
//!
//! The unharvested field is `x' = x(a - b y)`, `y' = y(-c + d x)`. Harvesting at
//! rate `mu` lowers the prey growth to `a - mu` and raises the predator death
//! rate to `c + mu`. The switched system runs the unharvested field on
//! `[0, r0)` and the harvested one on `[r0, r0 + rmu)`, repeated periodically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four positive rates of a Volterra field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolterraParams {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl VolterraParams {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        for (name, value) in [("a", a), ("b", b), ("c", c), ("d", d)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "rates must be finite and positive",
                });
            }
        }
        Ok(Self { a, b, c, d })
    }

    /// Prey growth rate.
    pub fn a(&self) -> f64 {
        self.a
    }
    /// Predation rate.
    pub fn b(&self) -> f64 {
        self.b
    }
    /// Predator death rate.
    pub fn c(&self) -> f64 {
        self.c
    }
    /// Conversion rate.
    pub fn d(&self) -> f64 {
        self.d
    }
}

/// A point of the open first quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: f64,
    pub y: f64,
}

impl PhasePoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        let p = Self { x, y };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if self.x > 0.0 && self.y > 0.0 && self.x.is_finite() && self.y.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain {
                x: self.x,
                y: self.y,
            })
        }
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub(crate) fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub(crate) fn from_array(v: [f64; 2]) -> Self {
        Self { x: v[0], y: v[1] }
    }
}

/// Harvesting strength and the lengths of the two seasonal phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    base: VolterraParams,
    mu: f64,
    r0: f64,
    rmu: f64,
}

impl Schedule {
    pub fn new(base: VolterraParams, mu: f64, r0: f64, rmu: f64) -> Result<Self> {
        check_rate_range(&base, mu)?;
        Self::build(base, mu, r0, rmu)
    }

    /// A schedule whose second phase does not harvest (`mu = 0`). Both phases
    /// then run the base field; useful as a regression reference.
    pub fn unharvested(base: VolterraParams, r0: f64, rmu: f64) -> Result<Self> {
        Self::build(base, 0.0, r0, rmu)
    }

    fn build(base: VolterraParams, mu: f64, r0: f64, rmu: f64) -> Result<Self> {
        for (name, value) in [("r0", r0), ("rmu", rmu)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "phase durations must be positive",
                });
            }
        }
        Ok(Self { base, mu, r0, rmu })
    }

    pub fn base(&self) -> VolterraParams {
        self.base
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn r0(&self) -> f64 {
        self.r0
    }
    pub fn rmu(&self) -> f64 {
        self.rmu
    }

    /// Season length `r0 + rmu`.
    pub fn period(&self) -> f64 {
        self.r0 + self.rmu
    }

    /// Parameters active during the second phase.
    pub fn harvested(&self) -> VolterraParams {
        if self.mu == 0.0 {
            self.base
        } else {
            VolterraParams {
                a: self.base.a - self.mu,
                c: self.base.c + self.mu,
                ..self.base
            }
        }
    }

    /// Same schedule with new phase durations.
    pub fn with_durations(&self, r0: f64, rmu: f64) -> Result<Self> {
        Self::build(self.base, self.mu, r0, rmu)
    }
}

fn check_rate_range(p: &VolterraParams, mu: f64) -> Result<()> {
    if mu > 0.0 && mu < p.a {
        Ok(())
    } else {
        Err(Error::MuOutOfRange { mu, a: p.a })
    }
}

/// Center `(c/d, a/b)` of the field.
pub fn equilibrium(p: &VolterraParams) -> PhasePoint {
    PhasePoint {
        x: p.c / p.d,
        y: p.a / p.b,
    }
}

/// Parameters `(a - mu, b, c + mu, d)` of the harvested field.
pub fn harvested(p: &VolterraParams, mu: f64) -> Result<VolterraParams> {
    check_rate_range(p, mu)?;
    Ok(VolterraParams {
        a: p.a - mu,
        c: p.c + mu,
        ..*p
    })
}

/// First integral `d x - c ln x + b y - a ln y`.
pub fn energy(p: &VolterraParams, z: &PhasePoint) -> Result<f64> {
    z.check()?;
    Ok(energy_unchecked(p, z.x, z.y))
}

#[inline]
pub(crate) fn energy_unchecked(p: &VolterraParams, x: f64, y: f64) -> f64 {
    p.d * x - p.c * x.ln() + p.b * y - p.a * y.ln()
}

/// Energy at the center; the strict global minimum over the quadrant.
pub fn min_energy(p: &VolterraParams) -> f64 {
    let e = equilibrium(p);
    energy_unchecked(p, e.x, e.y)
}

pub fn vector_field(p: &VolterraParams, z: &PhasePoint) -> Result<[f64; 2]> {
    z.check()?;
    Ok(field(p, &z.to_array()))
}

#[inline]
pub(crate) fn field(p: &VolterraParams, z: &[f64; 2]) -> [f64; 2] {
    [z[0] * (p.a - p.b * z[1]), z[1] * (-p.c + p.d * z[0])]
}

/// Parameters in force at time `t`. Switch instants belong to the phase that
/// starts there.
pub fn coefficients_at(s: &Schedule, t: f64) -> VolterraParams {
    let phase = t.rem_euclid(s.period());
    if phase < s.r0 {
        s.base
    } else {
        s.harvested()
    }
}
