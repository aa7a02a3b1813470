//! Adaptive integration of the Volterra fields with energy-drift monitoring,
//! dense output, event location and unwrapped angles about a center.

mod dop853;

use std::f64::consts::{FRAC_PI_4, PI};
use std::io::Write;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{energy_unchecked, equilibrium, field, PhasePoint, Schedule, VolterraParams};
pub(crate) use dop853::{Dop853, Step, System};

/// Radius below which a trajectory is considered to have hit the frame center.
pub const CENTER_RADIUS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest admissible `|E(z(t)) - E(z(0))|` along one integration.
    pub energy_budget: f64,
    pub event_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            energy_budget: 1e-8,
            event_tol: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("energy_budget", self.energy_budget),
            ("event_tol", self.event_tol),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "tolerances must be positive",
                });
            }
        }
        Ok(())
    }

    /// Step tolerances multiplied by `factor`; the energy budget is kept.
    pub fn tightened(&self, factor: f64) -> Self {
        Self {
            rel_tol: self.rel_tol * factor,
            abs_tol: self.abs_tol * factor,
            event_tol: self.event_tol * factor,
            ..*self
        }
    }
}

/// Volterra field, optionally run backwards.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Rhs {
    p: VolterraParams,
    sign: f64,
}

impl System<2> for Rhs {
    #[inline]
    fn rhs(&self, z: &[f64; 2]) -> [f64; 2] {
        let v = field(&self.p, z);
        [self.sign * v[0], self.sign * v[1]]
    }
}

/// Rotated polar frame about a center: the first axis points along the line
/// `b y + d x = const` towards increasing `x`, so the second coordinate is
/// negative exactly below that line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularFrame {
    pub center: PhasePoint,
    pub omega: f64,
}

impl AngularFrame {
    pub fn new(center: PhasePoint, omega: f64) -> Self {
        Self { center, omega }
    }

    /// Frame at the equilibrium of `p`, with `omega = atan(d/b)`.
    pub fn for_params(p: &VolterraParams) -> Self {
        Self::new(equilibrium(p), (p.d() / p.b()).atan())
    }

    #[inline]
    pub fn rotated(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.omega.sin_cos();
        let dx = x - self.center.x;
        let dy = y - self.center.y;
        (c * dx - s * dy, s * dx + c * dy)
    }

    /// Angle in `(-pi, pi]`.
    #[inline]
    pub fn angle_of(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.rotated(x, y);
        let th = v.atan2(u);
        if th <= -PI {
            PI
        } else {
            th
        }
    }

    #[inline]
    pub fn radius(&self, x: f64, y: f64) -> f64 {
        (x - self.center.x).hypot(y - self.center.y)
    }

    /// Point at rotated-frame angle `theta` and distance `rho` from the center.
    pub fn point_at(&self, theta: f64, rho: f64) -> (f64, f64) {
        let dir = theta - self.omega;
        (
            self.center.x + rho * dir.cos(),
            self.center.y + rho * dir.sin(),
        )
    }
}

#[inline]
fn wrap(d: f64) -> f64 {
    let mut d = d % (2.0 * PI);
    if d > PI {
        d -= 2.0 * PI;
    } else if d <= -PI {
        d += 2.0 * PI;
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOutcome {
    pub end: PhasePoint,
    /// Largest energy deviation seen at accepted steps.
    pub drift: f64,
}

/// Samples of an unwrapped angle along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationTrace {
    pub times: Vec<f64>,
    pub theta: Vec<f64>,
    pub rot: Vec<f64>,
    pub points: Vec<PhasePoint>,
    pub drift: f64,
}

impl RotationTrace {
    pub fn final_theta(&self) -> f64 {
        *self.theta.last().expect("trace has at least one sample")
    }
    pub fn final_rot(&self) -> f64 {
        *self.rot.last().expect("trace has at least one sample")
    }
}

/// End state of a flow together with its unwrapped angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Winding {
    pub end: PhasePoint,
    pub theta_start: f64,
    pub theta_end: f64,
    pub drift: f64,
}

impl Winding {
    pub fn rot(&self) -> f64 {
        (self.theta_end - self.theta_start) / (2.0 * PI)
    }
}

/// An accepted step with its unwrapped angle at the start.
pub(crate) struct StepView<'a> {
    pub step: &'a mut Step<2>,
    pub rhs: &'a Rhs,
    pub theta0: f64,
    pub theta1: f64,
}

impl StepView<'_> {
    pub fn at(&mut self, t: f64) -> [f64; 2] {
        self.step.eval(self.rhs, t)
    }

    /// Unwrapped angle at time `t` inside the step.
    pub fn theta_at(&mut self, frame: &AngularFrame, t: f64) -> f64 {
        let z = self.at(t);
        let y0 = self.step.y0;
        self.theta0 + wrap(frame.angle_of(z[0], z[1]) - frame.angle_of(y0[0], y0[1]))
    }

    /// First time in the step where the unwrapped angle reaches `target`,
    /// if it does, located by bisection to `tol`.
    pub fn angle_hit(&mut self, frame: &AngularFrame, target: f64, tol: f64) -> Option<f64> {
        if self.theta1 < target {
            return None;
        }
        let (mut lo, mut hi) = (self.step.t0, self.step.t1());
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.theta_at(frame, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

pub(crate) struct RunEnd {
    pub end: [f64; 2],
    pub drift: f64,
    pub theta_start: f64,
    pub theta_end: f64,
}

/// Shared driver: integrate `p` from `z0` for `|t|` (backwards if `t < 0`),
/// monitoring energy drift; when a frame is given, steps are capped so the
/// angle moves at most pi/4 and the unwrapped angle is tracked. `visit` sees
/// every accepted step and may stop the run early.
pub(crate) fn drive(
    p: &VolterraParams,
    z0: [f64; 2],
    t: f64,
    tol: &Tolerances,
    frame: Option<&AngularFrame>,
    mut visit: impl FnMut(&mut StepView<'_>) -> Result<ControlFlow<()>>,
) -> Result<RunEnd> {
    tol.validate()?;
    PhasePoint::from_array(z0).check()?;
    let rhs = Rhs {
        p: *p,
        sign: if t < 0.0 { -1.0 } else { 1.0 },
    };
    let duration = t.abs();
    let e0 = energy_unchecked(p, z0[0], z0[1]);
    let theta_start = match frame {
        Some(f) => {
            let r = f.radius(z0[0], z0[1]);
            if r < CENTER_RADIUS {
                return Err(Error::CenterHit { distance: r });
            }
            f.angle_of(z0[0], z0[1])
        }
        None => 0.0,
    };
    let mut theta = theta_start;
    let mut drift: f64 = 0.0;
    if duration == 0.0 {
        return Ok(RunEnd {
            end: z0,
            drift,
            theta_start,
            theta_end: theta,
        });
    }
    let mut stepper = Dop853::new(rhs, 0.0, z0, tol.rel_tol, tol.abs_tol);
    let accept = |a: &[f64; 2], b: &[f64; 2]| -> bool {
        if !(b[0] > 0.0 && b[1] > 0.0) {
            return false;
        }
        match frame {
            Some(f) => {
                let d = wrap(f.angle_of(b[0], b[1]) - f.angle_of(a[0], a[1]));
                d.abs() <= FRAC_PI_4
            }
            None => true,
        }
    };
    while stepper.t() < duration {
        let y_prev = *stepper.y();
        stepper.step_checked(duration, accept)?;
        let y = *stepper.y();
        if !(y[0] > 0.0 && y[1] > 0.0 && y[0].is_finite() && y[1].is_finite()) {
            return Err(Error::Domain { x: y[0], y: y[1] });
        }
        drift = drift.max((energy_unchecked(p, y[0], y[1]) - e0).abs());
        if drift > tol.energy_budget {
            return Err(Error::EnergyBudgetExceeded {
                drift,
                budget: tol.energy_budget,
            });
        }
        let theta0 = theta;
        if let Some(f) = frame {
            let r = f.radius(y[0], y[1]);
            if r < CENTER_RADIUS {
                return Err(Error::CenterHit { distance: r });
            }
            theta += wrap(f.angle_of(y[0], y[1]) - f.angle_of(y_prev[0], y_prev[1]));
        }
        let mut step = stepper.take_last().expect("step was accepted");
        let flow = visit(&mut StepView {
            step: &mut step,
            rhs: &rhs,
            theta0,
            theta1: theta,
        })?;
        if flow.is_break() {
            break;
        }
    }
    Ok(RunEnd {
        end: *stepper.y(),
        drift,
        theta_start,
        theta_end: theta,
    })
}

/// Solution of `p` at time `t` from `z0`. Negative `t` integrates the negated field.
pub fn flow(p: &VolterraParams, z0: &PhasePoint, t: f64, tol: &Tolerances) -> Result<FlowOutcome> {
    let r = drive(p, z0.to_array(), t, tol, None, |_| Ok(ControlFlow::Continue(())))?;
    Ok(FlowOutcome {
        end: PhasePoint::from_array(r.end),
        drift: r.drift,
    })
}

/// Solution of the switched system at time `t` from `z0` given at time 0.
/// Each phase is integrated separately; drift is measured against the energy
/// of the phase in force and the largest value is reported.
pub fn flow_switched(
    s: &Schedule,
    z0: &PhasePoint,
    t: f64,
    tol: &Tolerances,
) -> Result<FlowOutcome> {
    if t < 0.0 {
        return Err(Error::InvalidParameter {
            name: "t",
            value: t,
            reason: "switched flow runs forward only",
        });
    }
    let base = s.base();
    let harvested = s.harvested();
    let mut z = *z0;
    let mut now = 0.0;
    let mut drift: f64 = 0.0;
    while now < t {
        let phase = now.rem_euclid(s.period());
        let (p, left) = if phase < s.r0() {
            (&base, s.r0() - phase)
        } else {
            (&harvested, s.period() - phase)
        };
        let dt = left.min(t - now);
        let out = flow(p, &z, dt, tol)?;
        z = out.end;
        drift = drift.max(out.drift);
        // Land exactly on switch instants so the next phase is chosen by index.
        now = if dt == left {
            let cycle = (now / s.period()).floor();
            if phase < s.r0() {
                cycle * s.period() + s.r0()
            } else {
                (cycle + 1.0) * s.period()
            }
        } else {
            t
        };
    }
    Ok(FlowOutcome { end: z, drift })
}

/// Flow with the unwrapped angle about `frame` at the end.
pub fn wind(
    p: &VolterraParams,
    frame: &AngularFrame,
    z0: &PhasePoint,
    t: f64,
    tol: &Tolerances,
) -> Result<Winding> {
    let r = drive(p, z0.to_array(), t, tol, Some(frame), |_| Ok(ControlFlow::Continue(())))?;
    Ok(Winding {
        end: PhasePoint::from_array(r.end),
        theta_start: r.theta_start,
        theta_end: r.theta_end,
        drift: r.drift,
    })
}

/// Unwrapped angle about `frame` at every accepted step.
pub fn angular_trace(
    p: &VolterraParams,
    frame: &AngularFrame,
    z0: &PhasePoint,
    t: f64,
    tol: &Tolerances,
) -> Result<RotationTrace> {
    let mut times = vec![0.0];
    let mut points = vec![*z0];
    let mut th = vec![frame.angle_of(z0.x, z0.y)];
    let r = drive(p, z0.to_array(), t, tol, Some(frame), |v| {
        times.push(v.step.t1());
        points.push(PhasePoint::from_array(v.step.y1));
        th.push(v.theta1);
        Ok(ControlFlow::Continue(()))
    })?;
    let rot = th
        .iter()
        .map(|v| (v - r.theta_start) / (2.0 * PI))
        .collect();
    Ok(RotationTrace {
        times,
        theta: th,
        rot,
        points,
        drift: r.drift,
    })
}

/// First time in `(0, window]` at which `predicate` changes sign along the
/// orbit of `z0`, refined by bisection on the dense output.
pub fn locate_event(
    p: &VolterraParams,
    z0: &PhasePoint,
    predicate: impl Fn(&PhasePoint) -> f64,
    window: f64,
    tol: &Tolerances,
) -> Result<f64> {
    let g = |z: [f64; 2]| predicate(&PhasePoint::from_array(z));
    let mut found = None;
    let mut prev_t = 0.0;
    let mut prev_g = g(z0.to_array());
    const SUB: usize = 8;
    let scan = drive(p, z0.to_array(), window, tol, None, |v| {
        let (t0, h) = (v.step.t0, v.step.h);
        for j in 1..=SUB {
            let t = t0 + h * j as f64 / SUB as f64;
            let gv = g(v.at(t));
            if prev_g != 0.0 && (gv == 0.0 || gv.signum() != prev_g.signum()) {
                let (mut lo, mut hi) = (prev_t, t);
                let s_lo = prev_g.signum();
                while hi - lo > tol.event_tol {
                    let mid = 0.5 * (lo + hi);
                    let gm = g(v.at(mid));
                    if gm != 0.0 && gm.signum() == s_lo {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                found = Some(0.5 * (lo + hi));
                return Ok(ControlFlow::Break(()));
            }
            prev_t = t;
            prev_g = gv;
        }
        Ok(ControlFlow::Continue(()))
    });
    match (found, scan) {
        (Some(t), _) => Ok(t),
        (None, Err(e)) => Err(e),
        (None, Ok(_)) => Err(Error::NoSignChange {
            from: 0.0,
            to: window,
        }),
    }
}

/// Time averages of `x` and `y` along the orbit of `z0` over `[0, t]`.
pub fn time_average(
    p: &VolterraParams,
    z0: &PhasePoint,
    t: f64,
    tol: &Tolerances,
) -> Result<PhasePoint> {
    z0.check()?;
    if !(t > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t",
            value: t,
            reason: "averaging window must be positive",
        });
    }
    let params = *p;
    let rhs = move |s: &[f64; 4]| {
        let v = field(&params, &[s[0], s[1]]);
        [v[0], v[1], s[0], s[1]]
    };
    let mut stepper = Dop853::new(rhs, 0.0, [z0.x, z0.y, 0.0, 0.0], tol.rel_tol, tol.abs_tol);
    while stepper.t() < t {
        stepper.step(t)?;
    }
    let s = stepper.y();
    Ok(PhasePoint { x: s[2] / t, y: s[3] / t })
}

/// Write `t,x,y,energy,theta` rows, one per accepted step.
pub fn write_trajectory_csv<W: Write>(
    out: &mut W,
    p: &VolterraParams,
    z0: &PhasePoint,
    t: f64,
    tol: &Tolerances,
) -> std::io::Result<()> {
    let frame = AngularFrame::for_params(p);
    let trace = angular_trace(p, &frame, z0, t, tol)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    writeln!(out, "t,x,y,energy,theta")?;
    for ((t, z), th) in trace.times.iter().zip(&trace.points).zip(&trace.theta) {
        writeln!(
            out,
            "{},{},{},{},{}",
            crate::report::fmt_f64(*t),
            crate::report::fmt_f64(z.x),
            crate::report::fmt_f64(z.y),
            crate::report::fmt_f64(energy_unchecked(p, z.x, z.y)),
            crate::report::fmt_f64(*th)
        )?;
    }
    Ok(())
}
