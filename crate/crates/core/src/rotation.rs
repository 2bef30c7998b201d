//! Rotation-number detection for closed orbits.
//!
//! The total winding of the planar projection over one period gives `j`;
//! the symmetry order `k` is the largest `k` for which shifting time by
//! `T/k` and rotating by `2 pi j / k` maps the orbit to itself. A discrete
//! Fourier transform of `x + i y` cross-checks the pair: the symmetry forces
//! every non-zero coefficient onto modes `m = j (mod k)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{angular_momentum, rotate, PhaseState};
use crate::error::{KhepError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationConfig {
    pub k_max: u32,
    /// Relative residual below which a k-fold symmetry is accepted.
    pub symmetry_tolerance: f64,
    /// Allowed distance of the total winding from an integer.
    pub winding_tolerance: f64,
    /// Samples per period; 2520 makes every shift `T/k` with `k <= 10` land on a sample.
    pub samples: usize,
    /// Fourier modes weaker than this fraction of the peak are ignored by the spectral check.
    pub spectral_floor: f64,
}

impl Default for RotationConfig {
    fn default() -> Self {
        Self {
            k_max: 64,
            symmetry_tolerance: 1e-3,
            winding_tolerance: 0.05,
            samples: 2520,
            spectral_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationNumber {
    pub j: u32,
    pub k: u32,
    pub confidence: f64,
    pub spectral_consistent: bool,
    /// Greater than one when the samples covered that many copies of the
    /// minimal period; `j/k` is already reduced.
    pub reduced_from: u32,
}

impl RotationNumber {
    pub fn value(&self) -> f64 {
        self.j as f64 / self.k as f64
    }
}

impl std::fmt::Display for RotationNumber {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.j, self.k)
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `|p_theta|` at or below this counts as zero when resolving axis passages.
pub const AXIS_PTHETA_EPS: f64 = 1e-8;

/// Change of `arg(x, y)` from `a` to `b`.
///
/// Increments above a quarter turn mean the projection swept past the
/// z-axis between the samples. Close to the axis the projected angular
/// velocity is `(p_theta + r^2 pz / 2) / r^2`, so the sweep has the sign of
/// `p_theta`; orbits through the axis itself (`p_theta = 0`) are taken to
/// sweep counterclockwise.
pub fn angle_increment(a: &PhaseState, b: &PhaseState) -> Result<f64> {
    if (a.x == 0.0 && a.y == 0.0) || (b.x == 0.0 && b.y == 0.0) {
        return Err(KhepError::Classification("orbit meets the z-axis".into()));
    }
    let mut d = b.y.atan2(b.x) - a.y.atan2(a.x);
    if d > PI {
        d -= 2.0 * PI;
    } else if d < -PI {
        d += 2.0 * PI;
    }
    if d.abs() > 0.5 * PI {
        // only a chord passing close to the axis is a fast sweep; anything
        // else is undersampling
        let cross = a.x * b.y - a.y * b.x;
        let chord = (b.x - a.x).hypot(b.y - a.y);
        let ra = a.x.hypot(a.y);
        let rb = b.x.hypot(b.y);
        if cross.abs() > 0.5 * ra.max(rb) * chord {
            return Err(KhepError::Classification(
                "angular step too large for unwrapping; sample more densely".into(),
            ));
        }
        let ptheta = 0.5 * (angular_momentum(a) + angular_momentum(b));
        let w = d.rem_euclid(2.0 * PI);
        d = if ptheta >= -AXIS_PTHETA_EPS {
            w
        } else {
            w - 2.0 * PI
        };
    }
    Ok(d)
}

/// Net number of counterclockwise turns of `(x, y)` around the z-axis,
/// closing the loop from the last sample back to the first.
pub fn winding(samples: &[PhaseState]) -> Result<f64> {
    let n = samples.len();
    let mut total = 0.0;
    for i in 0..n {
        total += angle_increment(&samples[i], &samples[(i + 1) % n])?;
    }
    Ok(total / (2.0 * PI))
}

/// Periodic cubic Lagrange interpolation at fractional sample position `pos`.
fn sample_at(samples: &[PhaseState], pos: f64) -> PhaseState {
    let n = samples.len() as i64;
    let base = pos.floor();
    let u = pos - base;
    let i = base as i64;
    let at = |k: i64| samples[k.rem_euclid(n) as usize];
    if u == 0.0 {
        return at(i);
    }
    let (pm, p0, p1, p2) = (at(i - 1), at(i), at(i + 1), at(i + 2));
    let wm = -u * (u - 1.0) * (u - 2.0) / 6.0;
    let w0 = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0;
    let w1 = -(u + 1.0) * u * (u - 2.0) / 2.0;
    let w2 = (u + 1.0) * u * (u - 1.0) / 6.0;
    pm * wm + p0 * w0 + p1 * w1 + p2 * w2
}

/// Max relative deviation between the orbit shifted by `T/k` and the orbit
/// rotated by `2 pi j / k`. With `projection_only` only `(x, y)` is compared.
pub fn symmetry_residual(samples: &[PhaseState], j: u32, k: u32, projection_only: bool) -> f64 {
    let n = samples.len();
    if n == 0 || k == 0 {
        return f64::INFINITY;
    }
    let angle = 2.0 * PI * j as f64 / k as f64;
    let shift = n as f64 / k as f64;
    let scale = samples
        .iter()
        .map(|s| {
            if projection_only {
                s.x.hypot(s.y)
            } else {
                s.norm()
            }
        })
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut worst = 0.0_f64;
    for (i, s) in samples.iter().enumerate() {
        let shifted = sample_at(samples, i as f64 + shift);
        let rotated = rotate(s, angle);
        let d = if projection_only {
            (shifted.x - rotated.x).hypot(shifted.y - rotated.y)
        } else {
            shifted.distance(&rotated)
        };
        worst = worst.max(d);
    }
    worst / scale
}

/// Magnitudes of the DFT coefficients of `x + i y`, indexed by mode `m` in `[-n/2, n/2)`.
fn planar_spectrum(samples: &[PhaseState]) -> Vec<(i64, f64)> {
    let n = samples.len();
    let half = (n / 2) as i64;
    (-half..(n as i64 - half))
        .map(|m| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, s) in samples.iter().enumerate() {
                let a = -2.0 * PI * (m * i as i64).rem_euclid(n as i64) as f64 / n as f64;
                let (sn, cs) = a.sin_cos();
                re += s.x * cs - s.y * sn;
                im += s.x * sn + s.y * cs;
            }
            (m, re.hypot(im) / n as f64)
        })
        .collect()
}

/// Whether every significant Fourier mode of the projection satisfies `m = j (mod k)`.
pub fn spectrum_consistent(samples: &[PhaseState], j: u32, k: u32, floor: f64) -> bool {
    // the check only needs the low modes; subsample long inputs
    let stride = (samples.len() / 512).max(1);
    let sub: Vec<PhaseState> = samples.iter().step_by(stride).copied().collect();
    let spec = planar_spectrum(&sub);
    let peak = spec.iter().map(|(_, a)| *a).fold(0.0, f64::max);
    spec.iter()
        .filter(|(_, a)| *a > floor * peak)
        .all(|(m, _)| (m - j as i64).rem_euclid(k as i64) == 0)
}

/// Classifies the rotation number of a closed orbit.
///
/// `samples` must cover exactly one period uniformly: sample `i` at `i T / n`.
pub fn rotation_number(samples: &[PhaseState], cfg: &RotationConfig) -> Result<RotationNumber> {
    if samples.len() < 8 {
        return Err(KhepError::InsufficientData(
            "need at least 8 samples per period".into(),
        ));
    }
    let w = winding(samples)?;
    let turns = w.round();
    if (w - turns).abs() > cfg.winding_tolerance {
        return Err(KhepError::Classification(format!(
            "winding {w:.4} is not close to an integer"
        )));
    }
    if turns < 1.0 {
        return Err(KhepError::Classification(format!(
            "orbit does not wind counterclockwise (winding {w:.4})"
        )));
    }
    let turns = turns as u32;

    let mut found = None;
    for k in (1..=cfg.k_max).rev() {
        let r = symmetry_residual(samples, turns, k, false);
        if r <= cfg.symmetry_tolerance {
            found = Some((k, r));
            break;
        }
    }
    let (mut k_total, residual) = found.ok_or_else(|| {
        KhepError::Classification("orbit does not close under its own rotation".into())
    })?;
    // symmetric under two coprime orders means a continuous symmetry (pure rotation)
    if k_total == cfg.k_max
        && cfg.k_max > 1
        && symmetry_residual(samples, turns, cfg.k_max - 1, false) <= cfg.symmetry_tolerance
    {
        k_total = turns;
    }
    let spectral_consistent = spectrum_consistent(samples, turns, k_total, cfg.spectral_floor);
    let g = gcd(turns, k_total);
    let (j, k) = (turns / g, k_total / g);
    if j > k {
        return Err(KhepError::Classification(format!(
            "rotation number {j}/{k} exceeds one"
        )));
    }
    Ok(RotationNumber {
        j,
        k,
        confidence: (1.0 - residual / cfg.symmetry_tolerance).clamp(0.0, 1.0),
        spectral_consistent,
        reduced_from: g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(n: usize, f: impl Fn(f64) -> (f64, f64)) -> Vec<PhaseState> {
        (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                let (x, y) = f(t);
                PhaseState::new(x, y, 0.0, 0.0, 0.0, 0.0)
            })
            .collect()
    }

    #[test]
    fn circle_is_one_over_one() {
        let s = curve(720, |t| (t.cos(), t.sin()));
        let r = rotation_number(&s, &RotationConfig::default()).unwrap();
        // a circle is symmetric under every rotation; k is capped at k_max and then reduced
        assert_eq!((r.j, r.k), (1, 1));
        assert!(r.spectral_consistent);
    }

    #[test]
    fn fourfold_curve() {
        let s = curve(720, |t| {
            let r = 2.0 + (4.0 * t).cos();
            (t.cos() * r, t.sin() * r)
        });
        let r = rotation_number(&s, &RotationConfig::default()).unwrap();
        assert_eq!((r.j, r.k), (1, 4));
        assert!(r.spectral_consistent);
        assert!(r.confidence > 0.99);
    }

    #[test]
    fn two_over_three_curve() {
        // winds twice with threefold symmetry: rotation 4pi/3 per third of the period
        let s = curve(900, |t| {
            let r = 2.0 + 0.5 * (3.0 * t).cos();
            ((2.0 * t).cos() * r, (2.0 * t).sin() * r)
        });
        let r = rotation_number(&s, &RotationConfig::default()).unwrap();
        assert_eq!((r.j, r.k), (2, 3));
        assert!(r.spectral_consistent);
    }

    #[test]
    fn doubled_period_is_reduced() {
        // fourfold curve traversed twice
        let s = curve(1440, |t| {
            let r = 2.0 + (8.0 * t).cos();
            ((2.0 * t).cos() * r, (2.0 * t).sin() * r)
        });
        let r = rotation_number(&s, &RotationConfig::default()).unwrap();
        assert_eq!((r.j, r.k), (1, 4));
        assert_eq!(r.reduced_from, 2);
    }

    #[test]
    fn non_closing_winding_is_an_error() {
        let n = 400;
        let s: Vec<_> = (0..n)
            .map(|i| {
                let t = 1.5 * PI * i as f64 / n as f64;
                PhaseState::new(t.cos(), t.sin(), 0.0, 0.0, 0.0, 0.0)
            })
            .collect();
        assert!(matches!(
            rotation_number(&s, &RotationConfig::default()),
            Err(KhepError::Classification(_))
        ));
    }

    #[test]
    fn clockwise_is_rejected() {
        let s = curve(360, |t| (t.cos(), -t.sin()));
        assert!(rotation_number(&s, &RotationConfig::default()).is_err());
    }

    #[test]
    fn spectral_check_flags_wrong_pair() {
        let s = curve(720, |t| {
            let r = 2.0 + (4.0 * t).cos();
            (t.cos() * r, t.sin() * r)
        });
        assert!(spectrum_consistent(&s, 1, 4, 1e-6));
        assert!(!spectrum_consistent(&s, 1, 8, 1e-6));
    }
}
