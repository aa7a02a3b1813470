//! Numerical certification of horseshoe-type chaos for the seasonally
//! harvested Volterra predator-prey system, via linked twist maps.
//!
//! The crate is organised bottom-up: [`model`] holds the fields and energies,
//! [`integrate`] the adaptive flows and angle tracking, [`geometry`] the
//! linked annuli and their rectangles, [`twist`] the period map and the
//! twist bounds, [`sap`] stretching-along-paths verification and the
//! certificate, and [`symbolic`] the Poincaré map, itineraries and periodic
//! orbit realization.

pub mod error;
pub mod geometry;
pub mod integrate;
pub mod model;
pub mod report;
pub mod sap;
pub mod symbolic;
pub mod twist;

pub use error::{Error, Result};
pub use integrate::Tolerances;
pub use model::{PhasePoint, Schedule, VolterraParams};
