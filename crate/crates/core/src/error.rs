use thiserror::Error;

/// Everything that can go wrong while building, integrating or certifying a configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("harvesting rate mu = {mu} must satisfy 0 < mu < a = {a}")]
    MuOutOfRange { mu: f64, a: f64 },
    #[error("point ({x}, {y}) is outside the open first quadrant")]
    Domain { x: f64, y: f64 },
    #[error("energy drift {drift:e} exceeds budget {budget:e}")]
    EnergyBudgetExceeded { drift: f64, budget: f64 },
    #[error("step size underflow at t = {t}")]
    StepFailure { t: f64 },
    #[error("trajectory came within {distance:e} of the frame center")]
    CenterHit { distance: f64 },
    #[error("predicate does not change sign on [{from}, {to}]")]
    NoSignChange { from: f64, to: f64 },
    #[error("level {level} is not above the minimum energy {minimum}")]
    LevelBelowMinimum { level: f64, minimum: f64 },
    #[error("annuli are not linked: {comparison} fails ({lhs} vs {rhs})")]
    NotLinked {
        comparison: String,
        lhs: f64,
        rhs: f64,
    },
    #[error("no twist: outer period {tau_outer} does not exceed inner period {tau_inner}")]
    NonTwist { tau_inner: f64, tau_outer: f64 },
    #[error("period map not increasing between levels {lower} and {upper}")]
    MonotonicityViolated { lower: f64, upper: f64 },
    #[error("period at level {level} exceeds the certified range ({limit} time units)")]
    PeriodOutOfRange { level: f64, limit: f64 },
    #[error("no point of the rectangle has energies ({ell}, {h})")]
    ChartOutOfRange { ell: f64, h: f64 },
    #[error("path refinement needs more than {budget} samples")]
    RefinementBudgetExceeded { budget: usize },
    #[error("no stretching witness for band {band}")]
    WitnessNotFound { band: usize },
    #[error("band edge of band {band} cannot be resolved")]
    BandEdgeAmbiguous { band: usize },
    #[error("iterate {iterate} left both annuli")]
    LeftDomain { iterate: usize },
    #[error("no periodic orbit found for word {word}")]
    NotFound { word: String },
    #[error("converged point realizes {found} instead of {word}")]
    ItineraryDrift { word: String, found: String },
    #[error("invalid symbol word {input:?}: {reason}")]
    BadWord { input: String, reason: String },
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
