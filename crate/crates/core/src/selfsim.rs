//! Self-similarity of zero-energy orbits.
//!
//! A zero-energy orbit whose z-coordinate vanishes at consecutive times
//! `t0 < t1 < t2` is fixed by its restriction to `[t0, t2]`: the next
//! segment is the same one rotated by `phi`, dilated by `lambda`, and run
//! `lambda^2` times as fast. The boundaries of the copies are
//!
//! ```text
//! t_n = t0 + (t2 - t0) (1 - lambda^(2n)) / (1 - lambda^2)
//! ```
//!
//! which accumulate at the collision time when `lambda < 1`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{conserved, heis_norm, vector_field, GroupElement, PhaseState};
use crate::error::{KhepError, Result};
use crate::integrator::{integrate, step_with, IntegratorConfig, Trajectory};
use crate::rotation::angle_increment;

/// `lambda` within this distance of one is treated as exactly one.
pub const UNIT_LAMBDA_TOLERANCE: f64 = 1e-9;

/// Logarithmic polar coordinates adapted to the dilation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogCoords {
    /// `log rho`
    pub s: f64,
    /// `arg(x, y)`; `None` on the z-axis.
    pub theta: Option<f64>,
    /// `arg(x^2 + y^2, 4 z)`
    pub u: f64,
}

pub fn log_coords(state: &PhaseState) -> Result<LogCoords> {
    let r2 = state.x * state.x + state.y * state.y;
    let d = r2 * r2 + 16.0 * state.z * state.z;
    if d == 0.0 {
        return Err(KhepError::Collision { rho: 0.0 });
    }
    let theta = if r2 == 0.0 {
        None
    } else {
        Some(state.y.atan2(state.x))
    };
    Ok(LogCoords {
        s: 0.25 * d.ln(),
        theta,
        u: (4.0 * state.z).atan2(r2),
    })
}

/// Reparametrisation counter: `floor(xi(t))` copies of the domain lie between `t0` and `t`.
pub fn xi(t: f64, t0: f64, t2: f64, lambda: f64) -> Result<f64> {
    if lambda == 1.0 {
        return Err(KhepError::Degenerate(
            "lambda = 1 needs no reparametrisation".into(),
        ));
    }
    if !(lambda > 0.0) || !(t2 > t0) {
        return Err(KhepError::InvalidArgument(format!(
            "need lambda > 0 and t2 > t0 (lambda = {lambda}, t0 = {t0}, t2 = {t2})"
        )));
    }
    let l2 = lambda * lambda;
    let arg = 1.0 - (t - t0) * (1.0 - l2) / (t2 - t0);
    if !(arg > 0.0) {
        return Err(KhepError::PastCollision {
            t,
            t_col: t0 + (t2 - t0) / (1.0 - l2),
        });
    }
    let v = 0.5 * arg.ln() / lambda.ln();
    // snap values within rounding of an integer so domain boundaries map to t0
    let r = v.round();
    Ok(if (v - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r
    } else {
        v
    })
}

/// Time inside the fundamental domain corresponding to `t`.
///
/// Uses twice the fractional part of `xi` in the exponent; this is the form
/// that sends every boundary `t_n` to `t0`.
pub fn tau(t: f64, t0: f64, t2: f64, lambda: f64) -> Result<f64> {
    let x = xi(t, t0, t2, lambda)?;
    let frac = x - x.floor();
    let l2 = lambda * lambda;
    Ok(t0 + (t2 - t0) * (1.0 - lambda.powf(2.0 * frac)) / (1.0 - l2))
}

/// Boundary `t_n` of the `n`-th copy of the domain (`n` may be negative).
pub fn domain_boundary(n: i64, t0: f64, t2: f64, lambda: f64) -> f64 {
    if (lambda - 1.0).abs() <= UNIT_LAMBDA_TOLERANCE {
        return t0 + n as f64 * (t2 - t0);
    }
    let l2 = lambda * lambda;
    t0 + (t2 - t0) * (1.0 - l2.powi(n as i32)) / (1.0 - l2)
}

/// Classification of a zero-energy orbit by the sign of `J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StratumLabel {
    /// `J < 0`: collision in finite future time, unbounded past.
    FutureCollision,
    /// `J > 0`: collision in finite past time, unbounded future.
    PastCollision,
    /// `J = 0`: periodic or quasi-periodic.
    Recurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub label: StratumLabel,
    pub predicted_collision: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumTolerances {
    pub zero_energy: f64,
    pub zero_j: f64,
}

impl Default for StratumTolerances {
    fn default() -> Self {
        Self {
            zero_energy: 1e-8,
            zero_j: 1e-8,
        }
    }
}

pub fn classify_stratum(h: f64, j: f64, tol: &StratumTolerances) -> Result<Stratum> {
    if h.abs() > tol.zero_energy {
        return Err(KhepError::Precondition(format!(
            "stratification covers zero energy only (|H| = {:.3e})",
            h.abs()
        )));
    }
    let label = if j.abs() <= tol.zero_j {
        StratumLabel::Recurrent
    } else if j < 0.0 {
        StratumLabel::FutureCollision
    } else {
        StratumLabel::PastCollision
    };
    Ok(Stratum {
        label,
        predicted_collision: None,
    })
}

/// An orbit segment between the first and third of three consecutive z-zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundamentalDomain {
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    /// Dense samples; the first is at `t0`, the last at `t2`.
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub lambda: f64,
    pub phi: f64,
    pub h: f64,
    pub j: f64,
}

/// Compact JSON form of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    pub lambda: f64,
    pub phi: f64,
    pub h: f64,
    pub j: f64,
    pub collision_time: Option<f64>,
    pub samples: usize,
}

/// Unwrapped polar angle along a sequence of states.
///
/// Increments are resolved with [`angle_increment`], which handles fast
/// sweeps past the z-axis; hitting the axis exactly is an error.
pub fn unwrapped_theta(states: &[PhaseState]) -> Result<Vec<f64>> {
    let Some(first) = states.first() else {
        return Ok(Vec::new());
    };
    if first.x == 0.0 && first.y == 0.0 {
        return Err(KhepError::Degenerate("segment starts on the z-axis".into()));
    }
    let mut out = Vec::with_capacity(states.len());
    let mut acc = first.y.atan2(first.x);
    out.push(acc);
    for w in states.windows(2) {
        acc += angle_increment(&w[0], &w[1]).map_err(|_| {
            KhepError::Degenerate("segment touches the z-axis; theta cannot be unwrapped".into())
        })?;
        out.push(acc);
    }
    Ok(out)
}

fn state_at_exact(traj: &Trajectory, t: f64, config: &IntegratorConfig) -> Result<PhaseState> {
    let i = traj.segment_index(t);
    let nearest = if i + 1 < traj.len() && (traj.times[i + 1] - t).abs() < (t - traj.times[i]).abs()
    {
        i + 1
    } else {
        i
    };
    let dt = t - traj.times[nearest];
    if dt == 0.0 {
        return Ok(traj.states[nearest]);
    }
    step_with(&traj.states[nearest], dt, config)
}

impl FundamentalDomain {
    /// Builds the domain from the first three z-zeros of an integrated trajectory.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        Self::from_trajectory_at(traj, 0)
    }

    /// Domain starting at the `first`-th z-zero of `traj`.
    pub fn from_trajectory_at(traj: &Trajectory, first: usize) -> Result<Self> {
        let zeros = traj.z_crossings();
        if zeros.len() < first + 3 {
            return Err(KhepError::InsufficientData(format!(
                "need three consecutive z-zeros, found {}",
                zeros.len().saturating_sub(first)
            )));
        }
        let (t0, t1, t2) = (zeros[first], zeros[first + 1], zeros[first + 2]);
        let cfg = &traj.config;
        let s0 = state_at_exact(traj, t0, cfg)?;
        let s2 = state_at_exact(traj, t2, cfg)?;
        let mut times = vec![t0];
        let mut states = vec![s0];
        for (t, s) in traj.times.iter().zip(&traj.states) {
            if *t > t0 && *t < t2 {
                times.push(*t);
                states.push(*s);
            }
        }
        times.push(t2);
        states.push(s2);
        let c = conserved(&s0);
        let mut domain = Self {
            t0,
            t1,
            t2,
            times,
            states,
            lambda: 1.0,
            phi: 0.0,
            h: c.h,
            j: c.j,
        };
        let (lambda, phi) = domain.similarity_factors()?;
        domain.lambda = lambda;
        domain.phi = phi;
        Ok(domain)
    }

    /// Integrates from `state` until three z-zeros are found (within `config.max_time`).
    pub fn from_state(state: &PhaseState, config: &IntegratorConfig) -> Result<Self> {
        let traj = integrate_until_zeros(state, config, 3)?;
        Self::from_trajectory(&traj)
    }

    /// `(lambda, phi)` from the stored segment.
    pub fn similarity_factors(&self) -> Result<(f64, f64)> {
        similarity_factors(&self.states)
    }

    pub fn duration(&self) -> f64 {
        self.t2 - self.t0
    }

    pub fn group_element(&self) -> GroupElement {
        GroupElement {
            lambda: self.lambda,
            phi: self.phi,
        }
    }

    fn is_unit(&self) -> bool {
        (self.lambda - 1.0).abs() <= UNIT_LAMBDA_TOLERANCE
    }

    /// Segment state at `t` in `[t0, t2]` by cubic Hermite interpolation.
    pub fn interpolate(&self, t: f64) -> Result<PhaseState> {
        if t < self.t0 - 1e-12 || t > self.t2 + 1e-12 {
            return Err(KhepError::InvalidArgument(format!(
                "{t} outside the fundamental domain [{}, {}]",
                self.t0, self.t2
            )));
        }
        let n = self.times.len();
        let i = match self.times.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => return Ok(self.states[i]),
            Err(i) => i.clamp(1, n - 1) - 1,
        };
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        let (ya, yb) = (self.states[i], self.states[i + 1]);
        let (fa, fb) = (vector_field(&ya)?, vector_field(&yb)?);
        let h = tb - ta;
        let s = (t - ta) / h;
        let (s2, s3) = (s * s, s * s * s);
        Ok(ya * (2.0 * s3 - 3.0 * s2 + 1.0)
            + fa * ((s3 - 2.0 * s2 + s) * h)
            + yb * (-2.0 * s3 + 3.0 * s2)
            + fb * ((s3 - s2) * h))
    }

    /// Predicted collision time, finite only for `lambda < 1`.
    pub fn collision_time(&self) -> Option<f64> {
        collision_time(self.t0, self.t2, self.lambda)
    }

    pub fn stratum(&self, tol: &StratumTolerances) -> Result<Stratum> {
        let mut s = classify_stratum(self.h, self.j, tol)?;
        s.predicted_collision = self.collision_time();
        Ok(s)
    }

    /// Index `n` of the copy of the domain containing `t`, and the matching base time.
    pub fn reduce_time(&self, t: f64) -> Result<(i64, f64)> {
        if self.is_unit() {
            let d = self.duration();
            let n = ((t - self.t0) / d).floor();
            return Ok((n as i64, t - n * d));
        }
        let x = xi(t, self.t0, self.t2, self.lambda)?;
        let n = x.floor();
        Ok((n as i64, tau(t, self.t0, self.t2, self.lambda)?))
    }

    /// Reconstructs the orbit at any time before collision from the stored segment.
    pub fn extend(&self, t: f64) -> Result<PhaseState> {
        if let Some(t_col) = self.collision_time() {
            if t >= t_col {
                return Err(KhepError::PastCollision { t, t_col });
            }
        }
        if !self.is_unit() && self.lambda > 1.0 {
            let t_col = self.t0 + self.duration() / (1.0 - self.lambda * self.lambda);
            if t <= t_col {
                return Err(KhepError::PastCollision { t, t_col });
            }
        }
        let (n, base) = self.reduce_time(t)?;
        let base = base.clamp(self.t0, self.t2);
        let seg = self.interpolate(base)?;
        Ok(self.group_element().pow(n).apply(&seg))
    }

    /// The same segment traversed backwards in time.
    pub fn reversed(&self) -> Result<Self> {
        let times: Vec<f64> = self.times.iter().rev().map(|t| -t).collect();
        let states: Vec<PhaseState> = self
            .states
            .iter()
            .rev()
            .map(|s| s.time_reversed())
            .collect();
        let c = conserved(&states[0]);
        let (lambda, phi) = similarity_factors(&states)?;
        Ok(Self {
            t0: -self.t2,
            t1: -self.t1,
            t2: -self.t0,
            times,
            states,
            lambda,
            phi,
            h: c.h,
            j: c.j,
        })
    }

    pub fn summary(&self) -> DomainSummary {
        DomainSummary {
            t0: self.t0,
            t1: self.t1,
            t2: self.t2,
            lambda: self.lambda,
            phi: self.phi,
            h: self.h,
            j: self.j,
            collision_time: self.collision_time(),
            samples: self.states.len(),
        }
    }
}

/// `lambda = rho(end) / rho(start)` and the unwrapped rotation angle across a segment.
pub fn similarity_factors(states: &[PhaseState]) -> Result<(f64, f64)> {
    let (first, last) = match (states.first(), states.last()) {
        (Some(a), Some(b)) if states.len() >= 2 => (a, b),
        _ => {
            return Err(KhepError::InsufficientData(
                "segment needs two states".into(),
            ))
        }
    };
    let s0 = log_coords(first)?.s;
    let s2 = log_coords(last)?.s;
    let theta = unwrapped_theta(states)?;
    Ok(((s2 - s0).exp(), theta[theta.len() - 1] - theta[0]))
}

/// `t0 + (t2 - t0) / (1 - lambda^2)` when `lambda < 1`.
pub fn collision_time(t0: f64, t2: f64, lambda: f64) -> Option<f64> {
    if lambda < 1.0 - UNIT_LAMBDA_TOLERANCE {
        Some(t0 + (t2 - t0) / (1.0 - lambda * lambda))
    } else {
        None
    }
}

/// Integrates until `count` z-zeros have been seen, collision, or `config.max_time`.
pub fn integrate_until_zeros(
    state: &PhaseState,
    config: &IntegratorConfig,
    count: usize,
) -> Result<Trajectory> {
    // grow the horizon geometrically so short orbits stay cheap
    let mut horizon = (config.step_size * 2000.0).min(config.max_time);
    loop {
        let cfg = config.with_max_time(horizon);
        let traj = integrate(state, &cfg)?;
        let have = traj.z_crossings().len();
        if have >= count || traj.collided() || horizon >= config.max_time {
            if have < count {
                return Err(KhepError::InsufficientData(format!(
                    "found {have} of {count} z-zeros before {}",
                    if traj.collided() {
                        "collision"
                    } else {
                        "max_time"
                    }
                )));
            }
            return Ok(traj);
        }
        horizon = (horizon * 4.0).min(config.max_time);
    }
}

/// Ratio `rho(t2) / rho(t0)` without going through logarithms.
pub fn norm_ratio(a: &PhaseState, b: &PhaseState) -> f64 {
    heis_norm(b.x, b.y, b.z) / heis_norm(a.x, a.y, a.z)
}
