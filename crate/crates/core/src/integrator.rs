//! Symplectic integration of Hamilton's equations.
//!
//! `H` is not separable (the kinetic term couples positions and momenta
//! through `P_X`, `P_Y`), so both schemes here are implicit Gauss-Legendre
//! collocation methods solved by fixed-point iteration: the one-stage
//! implicit midpoint rule (order 2) and the two-stage Gauss method (order 4).
//! Both are symplectic, symmetric, and conserve quadratic invariants such as
//! `p_theta` exactly.

use serde::{Deserialize, Serialize};

use crate::dynamics::{conserved, vector_field, PhaseState};
use crate::error::{KhepError, Result};

const SQRT3_6: f64 = 0.288_675_134_594_812_9; // sqrt(3) / 6

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ImplicitMidpoint,
    Gauss2,
}

impl Method {
    pub fn order(self) -> u32 {
        match self {
            Method::ImplicitMidpoint => 2,
            Method::Gauss2 => 4,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = KhepError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" | "implicit-midpoint" => Ok(Method::ImplicitMidpoint),
            "gauss2" | "gauss" => Ok(Method::Gauss2),
            other => Err(KhepError::InvalidArgument(format!(
                "unknown method {other:?}"
            ))),
        }
    }
}

/// Step-size policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepControl {
    Fixed,
    /// `h_eff = h * min(1, rho^2)`: steps shrink with the dilation time scale near collision.
    Dilational,
    /// `h_eff = h * rho^2` without the cap, so steps also grow on expanding orbits.
    Homogeneous,
}

impl std::str::FromStr for StepControl {
    type Err = KhepError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(StepControl::Fixed),
            "dilational" => Ok(StepControl::Dilational),
            "homogeneous" => Ok(StepControl::Homogeneous),
            other => Err(KhepError::InvalidArgument(format!(
                "unknown step control {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub step_size: f64,
    pub method: Method,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub collision_rho: f64,
    pub max_time: f64,
    pub step_control: StepControl,
    /// Time tolerance for locating z-crossings.
    pub crossing_tolerance: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            method: Method::ImplicitMidpoint,
            tolerance: 1e-13,
            max_iterations: 50,
            collision_rho: 1e-6,
            max_time: 10.0,
            step_control: StepControl::Fixed,
            crossing_tolerance: 1e-10,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(KhepError::InvalidArgument(what.to_string()));
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return bad("step_size must be positive");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.collision_rho > 0.0) {
            return bad("collision_rho must be positive");
        }
        if !(self.max_time >= 0.0) || !self.max_time.is_finite() {
            return bad("max_time must be finite and non-negative");
        }
        if !(self.crossing_tolerance > 0.0) {
            return bad("crossing_tolerance must be positive");
        }
        Ok(())
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.step_size = h;
        self
    }

    pub fn with_max_time(mut self, t: f64) -> Self {
        self.max_time = t;
        self
    }
}

/// One step of size `config.step_size`.
pub fn step(state: &PhaseState, config: &IntegratorConfig) -> Result<PhaseState> {
    step_with(state, config.step_size, config)
}

/// One step of signed size `h` with the configured scheme.
pub fn step_with(state: &PhaseState, h: f64, config: &IntegratorConfig) -> Result<PhaseState> {
    let y0 = *state;
    let scale = config.tolerance * y0.norm_inf().max(1.0);
    let out = match config.method {
        Method::ImplicitMidpoint => {
            let mut k = vector_field(&y0)?;
            let mut converged = false;
            let mut residual = f64::INFINITY;
            for _ in 0..config.max_iterations {
                let next = vector_field(&(y0 + k * (0.5 * h)))?;
                residual = (next - k).norm_inf() * h.abs();
                k = next;
                if residual <= scale {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(KhepError::StepFailure {
                    iterations: config.max_iterations,
                    residual,
                });
            }
            y0 + k * h
        }
        Method::Gauss2 => {
            let (a11, a12, a21, a22) = (0.25, 0.25 - SQRT3_6, 0.25 + SQRT3_6, 0.25);
            let f0 = vector_field(&y0)?;
            let (mut k1, mut k2) = (f0, f0);
            let mut converged = false;
            let mut residual = f64::INFINITY;
            for _ in 0..config.max_iterations {
                let n1 = vector_field(&(y0 + (k1 * a11 + k2 * a12) * h))?;
                let n2 = vector_field(&(y0 + (k1 * a21 + k2 * a22) * h))?;
                residual = (n1 - k1).norm_inf().max((n2 - k2).norm_inf()) * h.abs();
                k1 = n1;
                k2 = n2;
                if residual <= scale {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(KhepError::StepFailure {
                    iterations: config.max_iterations,
                    residual,
                });
            }
            y0 + (k1 + k2) * (0.5 * h)
        }
    };
    if out.is_finite() {
        Ok(out)
    } else {
        Err(KhepError::NonFinite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossingDirection {
    Upward,
    Downward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Event {
    ZCrossing {
        t: f64,
        direction: CrossingDirection,
    },
    Collision {
        t: f64,
        rho: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    MaxTime,
    Collision,
    StepFailure,
}

/// Conservation diagnostics accumulated along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriftStats {
    pub max_energy_drift: f64,
    pub max_ptheta_drift: f64,
    /// max |J(t) - J(0) - 2 H(0) t|
    pub max_dilational_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub events: Vec<Event>,
    pub termination: Termination,
    pub drift: DriftStats,
    pub config: IntegratorConfig,
}

/// Integration error together with everything computed before it.
#[derive(Debug, Clone)]
pub struct IntegrationFailure {
    pub error: KhepError,
    pub partial: Trajectory,
}

impl std::fmt::Display for IntegrationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} steps, t = {})",
            self.error,
            self.partial.len().saturating_sub(1),
            self.partial.end_time()
        )
    }
}

impl std::error::Error for IntegrationFailure {}

impl From<IntegrationFailure> for KhepError {
    fn from(f: IntegrationFailure) -> Self {
        f.error
    }
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn initial(&self) -> &PhaseState {
        &self.states[0]
    }

    pub fn last(&self) -> &PhaseState {
        self.states
            .last()
            .expect("trajectory holds at least the initial state")
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn collided(&self) -> bool {
        self.termination == Termination::Collision
    }

    pub fn collision_time(&self) -> Option<f64> {
        self.events.iter().find_map(|e| match e {
            Event::Collision { t, .. } => Some(*t),
            _ => None,
        })
    }

    pub fn z_crossings(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::ZCrossing { t, .. } => Some(*t),
                _ => None,
            })
            .collect()
    }

    /// Index `i` with `times[i] <= t <= times[i + 1]`, clamped to the ends.
    pub fn segment_index(&self, t: f64) -> usize {
        let n = self.times.len();
        if n < 2 {
            return 0;
        }
        match self.times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Dense output by cubic Hermite interpolation between nodes.
    pub fn state_at(&self, t: f64) -> Result<PhaseState> {
        if self.states.len() == 1 {
            return Ok(self.states[0]);
        }
        let i = self.segment_index(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (y0, y1) = (self.states[i], self.states[i + 1]);
        let (f0, f1) = (vector_field(&y0)?, vector_field(&y1)?);
        Ok(hermite(t0, t1, &y0, &y1, &f0, &f1, t))
    }
}

fn hermite(
    t0: f64,
    t1: f64,
    y0: &PhaseState,
    y1: &PhaseState,
    f0: &PhaseState,
    f1: &PhaseState,
    t: f64,
) -> PhaseState {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    *y0 * h00 + *f0 * (h10 * h) + *y1 * h01 + *f1 * (h11 * h)
}

/// Root of the cubic Hermite interpolant of z on `[t0, t1]`.
fn locate_z_zero(t0: f64, t1: f64, y0: &PhaseState, y1: &PhaseState, tol: f64) -> Result<f64> {
    let f0 = vector_field(y0)?;
    let f1 = vector_field(y1)?;
    let h = t1 - t0;
    let z_at = |s: f64| {
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0.z
            + (s3 - 2.0 * s2 + s) * h * f0.z
            + (-2.0 * s3 + 3.0 * s2) * y1.z
            + (s3 - s2) * h * f1.z
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let z_lo = z_at(lo);
    while (hi - lo) * h.abs() > tol {
        let mid = 0.5 * (lo + hi);
        let zm = z_at(mid);
        if zm == 0.0 {
            return Ok(t0 + mid * h);
        }
        if (zm > 0.0) == (z_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(t0 + 0.5 * (lo + hi) * h)
}

struct DriftTracker {
    h0: f64,
    ptheta0: f64,
    j0: f64,
    stats: DriftStats,
}

impl DriftTracker {
    fn new(s: &PhaseState) -> Self {
        let c = conserved(s);
        Self {
            h0: c.h,
            ptheta0: c.ptheta,
            j0: c.j,
            stats: DriftStats::default(),
        }
    }

    fn observe(&mut self, t: f64, s: &PhaseState) {
        let c = conserved(s);
        let st = &mut self.stats;
        st.max_energy_drift = st.max_energy_drift.max((c.h - self.h0).abs());
        st.max_ptheta_drift = st.max_ptheta_drift.max((c.ptheta - self.ptheta0).abs());
        st.max_dilational_drift = st
            .max_dilational_drift
            .max((c.j - self.j0 - 2.0 * self.h0 * t).abs());
    }
}

/// Integrates from `t = 0` until `config.max_time` or collision.
#[allow(clippy::result_large_err)] // the failure carries the partial trajectory by design
pub fn integrate(
    state: &PhaseState,
    config: &IntegratorConfig,
) -> std::result::Result<Trajectory, IntegrationFailure> {
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![*state],
        events: Vec::new(),
        termination: Termination::MaxTime,
        drift: DriftStats::default(),
        config: *config,
    };
    let fail = |error: KhepError, mut partial: Trajectory| {
        partial.termination = Termination::StepFailure;
        IntegrationFailure { error, partial }
    };
    if let Err(e) = config.validate() {
        return Err(fail(e, traj));
    }
    if !state.is_finite() {
        return Err(fail(KhepError::NonFinite, traj));
    }
    let rho0 = state.rho();
    if rho0 <= config.collision_rho {
        traj.events.push(Event::Collision { t: 0.0, rho: rho0 });
        traj.termination = Termination::Collision;
        return Ok(traj);
    }
    if state.z == 0.0 {
        let direction = match vector_field(state) {
            Ok(f) if f.z < 0.0 => CrossingDirection::Downward,
            _ => CrossingDirection::Upward,
        };
        traj.events.push(Event::ZCrossing { t: 0.0, direction });
    }

    let mut tracker = DriftTracker::new(state);
    let h = config.step_size;
    let mut t = 0.0_f64;
    // fixed steps land on grid_origin + k h to avoid accumulating rounding in t
    let mut grid_origin = 0.0_f64;
    let mut grid_steps: u64 = 0;
    let mut current = *state;

    while t < config.max_time {
        let nominal = match config.step_control {
            StepControl::Fixed => h,
            StepControl::Dilational => h * current.rho().powi(2).min(1.0),
            StepControl::Homogeneous => h * current.rho().powi(2),
        };
        let remaining = config.max_time - t;
        let (dt, last) = if remaining <= nominal * (1.0 + 1e-9) {
            (remaining, true)
        } else {
            (nominal, false)
        };

        // retry with halved steps before giving up
        let mut attempt = dt;
        let mut halvings = 0;
        let next = loop {
            match step_with(&current, attempt, config) {
                Ok(s) => break Ok(s),
                Err(KhepError::StepFailure { .. } | KhepError::NonFinite) if halvings < 4 => {
                    attempt *= 0.5;
                    halvings += 1;
                }
                Err(e) => break Err(e),
            }
        };
        let next = match next {
            Ok(s) => s,
            Err(KhepError::Collision { .. }) => {
                traj.events.push(Event::Collision {
                    t,
                    rho: current.rho(),
                });
                traj.termination = Termination::Collision;
                traj.drift = tracker.stats;
                return Ok(traj);
            }
            Err(e) => {
                traj.drift = tracker.stats;
                return Err(fail(e, traj));
            }
        };

        let t_next = if last && halvings == 0 {
            config.max_time
        } else if config.step_control == StepControl::Fixed && halvings == 0 {
            grid_steps += 1;
            grid_origin + grid_steps as f64 * h
        } else {
            grid_origin = t + attempt;
            grid_steps = 0;
            grid_origin
        };

        if current.z != 0.0 && (next.z == 0.0 || (current.z > 0.0) != (next.z > 0.0)) {
            let tc = if next.z == 0.0 {
                t_next
            } else {
                match locate_z_zero(t, t_next, &current, &next, config.crossing_tolerance) {
                    Ok(tc) => tc,
                    Err(_) => 0.5 * (t + t_next),
                }
            };
            let direction = if current.z < 0.0 {
                CrossingDirection::Upward
            } else {
                CrossingDirection::Downward
            };
            traj.events.push(Event::ZCrossing { t: tc, direction });
        }

        tracker.observe(t_next, &next);
        traj.times.push(t_next);
        traj.states.push(next);
        t = t_next;
        current = next;

        let rho = current.rho();
        if rho <= config.collision_rho {
            traj.events.push(Event::Collision { t, rho });
            traj.termination = Termination::Collision;
            break;
        }
    }
    traj.drift = tracker.stats;
    Ok(traj)
}

/// A local minimum of phase-space distance to a reference state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Approach {
    pub time: f64,
    pub distance: f64,
    /// Node index nearest to the minimum.
    pub index: usize,
}

/// Local minima of `|X(t) - reference|` after `exclusion`, each refined by a
/// parabola through the squared distances at the three bracketing nodes.
pub fn closest_approaches(
    traj: &Trajectory,
    reference: &PhaseState,
    exclusion: f64,
) -> Vec<Approach> {
    let n = traj.len();
    if n < 3 {
        return Vec::new();
    }
    let start_time = traj.times[0] + exclusion;
    let d2: Vec<f64> = traj
        .states
        .iter()
        .map(|s| {
            let d = s.distance(reference);
            d * d
        })
        .collect();
    let mut out = Vec::new();
    for i in 1..n - 1 {
        if traj.times[i] <= start_time {
            continue;
        }
        if !(d2[i - 1] > d2[i] && d2[i] <= d2[i + 1]) {
            continue;
        }
        let (t0, t1, t2) = (traj.times[i - 1], traj.times[i], traj.times[i + 1]);
        let (v0, v1, v2) = (d2[i - 1], d2[i], d2[i + 1]);
        // parabola through three points, in time relative to the middle node
        let (u0, u2) = (t0 - t1, t2 - t1);
        let (w0, w2) = (v0 - v1, v2 - v1);
        let a = (w0 * u2 - w2 * u0) / (u0 * u2 * (u0 - u2));
        let b = (w0 - a * u0 * u0) / u0;
        let (time, value) = if a > 0.0 {
            let um = (-b / (2.0 * a)).clamp(u0, u2);
            let value = v1 + a * um * um + b * um;
            if value > 0.0 {
                (t1 + um, value)
            } else {
                (t1, v1)
            }
        } else {
            (t1, v1)
        };
        out.push(Approach {
            time,
            distance: value.sqrt(),
            index: i,
        });
    }
    out
}

/// Sharpens an approach by solving `(X(t) - ref) . f(X(t)) = 0`, evaluating
/// `X(t)` with a partial integrator step from the nearest node.
pub fn polish_approach(
    traj: &Trajectory,
    approach: &Approach,
    reference: &PhaseState,
    config: &IntegratorConfig,
) -> Approach {
    let base_index = traj.segment_index(approach.time);
    let nearest = if base_index + 1 < traj.len()
        && (traj.times[base_index + 1] - approach.time).abs()
            < (approach.time - traj.times[base_index]).abs()
    {
        base_index + 1
    } else {
        base_index
    };
    let node = traj.states[nearest];
    let t_node = traj.times[nearest];
    let eval = |s: f64| -> Result<(PhaseState, PhaseState)> {
        let y = if s == 0.0 {
            node
        } else {
            step_with(&node, s, config)?
        };
        Ok((y, vector_field(&y)?))
    };

    // the interpolated distance can undershoot, so only evaluated distances count
    let mut s = approach.time - t_node;
    let mut best: Option<Approach> = None;
    for _ in 0..8 {
        let Ok((y, f)) = eval(s) else { break };
        let diff = y - *reference;
        let dist = diff.norm();
        if best.is_none_or(|b| dist <= b.distance) {
            best = Some(Approach {
                time: t_node + s,
                distance: dist,
                index: nearest,
            });
        }
        let speed2 = f.dot(&f);
        if speed2 == 0.0 {
            break;
        }
        let ds = -diff.dot(&f) / speed2;
        if !ds.is_finite() || ds.abs() < 1e-15 * (1.0 + t_node.abs()) {
            break;
        }
        s += ds;
        if s.abs() > 2.0 * config.step_size {
            break;
        }
    }
    best.unwrap_or(Approach {
        time: t_node,
        distance: traj.states[nearest].distance(reference),
        index: nearest,
    })
}
