use std::path::Path;

use serde::Deserialize;
use volterra_ltm::geometry::{Annulus, Levels};
use volterra_ltm::model::harvested;
use volterra_ltm::sap::{CertifyOptions, Sampling};
use volterra_ltm::symbolic::SearchOptions;
use volterra_ltm::twist::{period, BoundaryPeriods, TwistBounds};
use volterra_ltm::{Error, Schedule, Tolerances, VolterraParams};

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

fn default_paths() -> usize {
    3
}

fn default_plot_points() -> usize {
    256
}

/// One JSON document describing a run.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: Rates,
    pub mu: f64,
    pub levels: Levels,
    pub m1: u32,
    pub m2: u32,
    /// Phase durations; the rounded-up twist bounds when absent.
    #[serde(default)]
    pub r0: Option<f64>,
    #[serde(default)]
    pub rmu: Option<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_plot_points")]
    pub plot_points: usize,
    #[serde(default)]
    pub swap_rectangles: bool,
}

/// A validated configuration with its schedule resolved.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub raw: RunConfig,
    pub schedule: Schedule,
}

impl Loaded {
    pub fn certify_options(&self) -> CertifyOptions {
        CertifyOptions {
            m1: self.raw.m1,
            m2: self.raw.m2,
            paths: self.raw.paths,
            sampling: self.raw.sampling,
            tolerances: self.raw.tolerances,
        }
    }
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> Error {
    Error::InvalidParameter {
        name,
        value,
        reason,
    }
}

pub fn read(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

impl RunConfig {
    /// Revalidate every model and geometry invariant and fill in missing
    /// durations from the twist bounds.
    pub fn load(self, rel_tol: Option<f64>) -> volterra_ltm::Result<Loaded> {
        let mut raw = self;
        if let Some(t) = rel_tol {
            raw.tolerances.rel_tol = t;
            raw.tolerances.abs_tol = t * 1e-2;
        }
        raw.tolerances.validate()?;
        let Rates { a, b, c, d } = raw.params;
        let base = VolterraParams::new(a, b, c, d)?;
        let q = harvested(&base, raw.mu)?;
        let lv = raw.levels;
        Annulus::new(base, lv.ell1, lv.ell2)?;
        Annulus::new(q, lv.h1, lv.h2)?;
        if raw.m1 == 0 {
            return Err(invalid("m1", 0.0, "at least one symbol is needed"));
        }
        if raw.m2 == 0 {
            return Err(invalid("m2", 0.0, "at least one symbol is needed"));
        }
        if raw.paths == 0 {
            return Err(invalid("paths", 0.0, "at least one test path is needed"));
        }
        if raw.plot_points < 16 {
            return Err(invalid("plot_points", raw.plot_points as f64, "needs at least 16 points"));
        }
        let (r0, rmu) = match (raw.r0, raw.rmu) {
            (Some(r0), Some(rmu)) => (r0, rmu),
            (r0, rmu) => {
                let tol = &raw.tolerances;
                let periods = BoundaryPeriods {
                    tau_ell1: period(&base, lv.ell1, tol)?,
                    tau_ell2: period(&base, lv.ell2, tol)?,
                    tau_h1: period(&q, lv.h1, tol)?,
                    tau_h2: period(&q, lv.h2, tol)?,
                };
                let bounds = TwistBounds::new(&periods, raw.m1, raw.m2)?;
                (
                    r0.unwrap_or(bounds.alpha.ceil()),
                    rmu.unwrap_or(bounds.beta.ceil()),
                )
            }
        };
        let schedule = Schedule::new(base, raw.mu, r0, rmu)?;
        raw.r0 = Some(r0);
        raw.rmu = Some(rmu);
        Ok(Loaded { raw, schedule })
    }
}
