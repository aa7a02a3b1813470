#![allow(dead_code)]

use volterra_ltm::geometry::{check_linked, Levels, LinkedConfig};
use volterra_ltm::model::harvested;
use volterra_ltm::twist::{period, BoundaryPeriods, TwistBounds};
use volterra_ltm::{Schedule, Tolerances, VolterraParams};

pub const MU: f64 = 0.2;
pub const LEVELS: Levels = Levels {
    ell1: 2.2,
    ell2: 2.5,
    h1: 2.22,
    h2: 2.34,
};

pub fn base() -> VolterraParams {
    VolterraParams::new(1.0, 1.0, 1.0, 1.0).unwrap()
}

pub fn bounds() -> TwistBounds {
    let t = Tolerances::default();
    let q = harvested(&base(), MU).unwrap();
    let periods = BoundaryPeriods {
        tau_ell1: period(&base(), LEVELS.ell1, &t).unwrap(),
        tau_ell2: period(&base(), LEVELS.ell2, &t).unwrap(),
        tau_h1: period(&q, LEVELS.h1, &t).unwrap(),
        tau_h2: period(&q, LEVELS.h2, &t).unwrap(),
    };
    TwistBounds::new(&periods, 2, 1).unwrap()
}

/// The reference schedule with both durations rounded up from the bounds.
pub fn schedule() -> Schedule {
    let b = bounds();
    Schedule::new(base(), MU, b.alpha.ceil(), b.beta.ceil()).unwrap()
}

pub fn linked() -> LinkedConfig {
    check_linked(&schedule(), &LEVELS).unwrap()
}
