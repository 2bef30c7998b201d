//! Phase space, Hamiltonian and symmetry actions of the Kepler-Heisenberg system.
//!
//! Configuration space is the Heisenberg group realised as R^3 with the
//! horizontal frame
//!
//! ```text
//! X = d/dx - (y/2) d/dz,    Y = d/dy + (x/2) d/dz
//! ```
//!
//! and phase space is its cotangent bundle with canonical coordinates
//! `(x, y, z, px, py, pz)`. The kinetic energy is the sub-Riemannian one,
//! `K = (P_X^2 + P_Y^2) / 2`, and the potential is the fundamental solution
//! of the sub-Laplacian `X^2 + Y^2`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{KhepError, Result};

/// Coupling constant of the potential, `1 / (8 pi)`.
pub const POTENTIAL_SCALE: f64 = 1.0 / (8.0 * PI);

/// `1 / (2 sqrt(pi))`: the horizontal speed of a zero-energy state at unit norm,
/// and the conjectured z-axis bifurcation value of `|J|`.
pub const UNIT_ZERO_ENERGY_SPEED: f64 = 0.282_094_791_773_878_14;

/// A point `(x, y, z, px, py, pz)` of phase space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
}

impl PhaseState {
    pub const fn new(x: f64, y: f64, z: f64, px: f64, py: f64, pz: f64) -> Self {
        Self {
            x,
            y,
            z,
            px,
            py,
            pz,
        }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.z, self.px, self.py, self.pz]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Homogeneous norm of the position.
    pub fn rho(&self) -> f64 {
        heis_norm(self.x, self.y, self.z)
    }

    pub fn is_singular(&self) -> bool {
        self.rho() == 0.0
    }

    /// Euclidean norm in R^6.
    pub fn norm(&self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn distance(&self, other: &PhaseState) -> f64 {
        (*self - *other).norm()
    }

    pub fn dot(&self, other: &PhaseState) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Dual momenta `(P_X, P_Y)` of the horizontal frame.
    pub fn horizontal_momenta(&self) -> (f64, f64) {
        (
            self.px - 0.5 * self.y * self.pz,
            self.py + 0.5 * self.x * self.pz,
        )
    }

    /// Momentum reversal `(q, p) -> (q, -p)`. Conjugates the flow with its time reversal.
    pub fn time_reversed(&self) -> Self {
        Self::new(self.x, self.y, self.z, -self.px, -self.py, -self.pz)
    }
}

impl Add for PhaseState {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.x + o.x,
            self.y + o.y,
            self.z + o.z,
            self.px + o.px,
            self.py + o.py,
            self.pz + o.pz,
        )
    }
}

impl Sub for PhaseState {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(
            self.x - o.x,
            self.y - o.y,
            self.z - o.z,
            self.px - o.px,
            self.py - o.py,
            self.pz - o.pz,
        )
    }
}

impl Mul<f64> for PhaseState {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(
            self.x * s,
            self.y * s,
            self.z * s,
            self.px * s,
            self.py * s,
            self.pz * s,
        )
    }
}

impl Neg for PhaseState {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

/// Time derivative of a [`PhaseState`]; same layout.
pub type PhaseStateDerivative = PhaseState;

/// Energy split and the two momenta of the symmetry group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservedSet {
    pub h: f64,
    pub k: f64,
    pub u: f64,
    pub ptheta: f64,
    pub j: f64,
}

/// Element of the symmetry group generated by dilations and rotations about the z-axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub lambda: f64,
    pub phi: f64,
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement {
        lambda: 1.0,
        phi: 0.0,
    };

    pub fn new(lambda: f64, phi: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() || !phi.is_finite() {
            return Err(KhepError::InvalidArgument(format!(
                "group element needs lambda > 0 and finite phi, got ({lambda}, {phi})"
            )));
        }
        Ok(Self { lambda, phi })
    }

    pub fn compose(self, other: GroupElement) -> GroupElement {
        GroupElement {
            lambda: self.lambda * other.lambda,
            phi: self.phi + other.phi,
        }
    }

    pub fn inverse(self) -> GroupElement {
        GroupElement {
            lambda: 1.0 / self.lambda,
            phi: -self.phi,
        }
    }

    /// `n`-fold power; negative `n` gives powers of the inverse.
    pub fn pow(self, n: i64) -> GroupElement {
        GroupElement {
            lambda: self.lambda.powi(n as i32),
            phi: self.phi * n as f64,
        }
    }

    /// Phase-space action. Dilation and rotation commute, so order is immaterial.
    pub fn apply(self, state: &PhaseState) -> PhaseState {
        dilate_unchecked(&rotate(state, self.phi), self.lambda)
    }
}

/// Homogeneous norm `((x^2 + y^2)^2 + 16 z^2)^(1/4)`.
pub fn heis_norm(x: f64, y: f64, z: f64) -> f64 {
    let r2 = x * x + y * y;
    (r2 * r2 + 16.0 * z * z).sqrt().sqrt()
}

fn potential_denominator(x: f64, y: f64, z: f64) -> f64 {
    let r2 = x * x + y * y;
    r2 * r2 + 16.0 * z * z
}

/// Potential energy `U = -1/(8 pi) ((x^2+y^2)^2 + 16 z^2)^(-1/2)`.
pub fn potential(x: f64, y: f64, z: f64) -> Result<f64> {
    let d = potential_denominator(x, y, z);
    if d == 0.0 {
        return Err(KhepError::Collision { rho: 0.0 });
    }
    let u = -POTENTIAL_SCALE / d.sqrt();
    if u.is_finite() {
        Ok(u)
    } else {
        Err(KhepError::NonFinite)
    }
}

/// Evaluates `H = K + U` together with `p_theta` and `J`.
pub fn hamiltonian(state: &PhaseState) -> Result<ConservedSet> {
    if !state.is_finite() {
        return Err(KhepError::NonFinite);
    }
    let (big_px, big_py) = state.horizontal_momenta();
    let k = 0.5 * (big_px * big_px + big_py * big_py);
    let u = potential(state.x, state.y, state.z)?;
    Ok(ConservedSet {
        h: k + u,
        k,
        u,
        ptheta: angular_momentum(state),
        j: dilational_momentum(state),
    })
}

/// Shorthand for `hamiltonian(state)?.h`.
pub fn energy(state: &PhaseState) -> Result<f64> {
    hamiltonian(state).map(|c| c.h)
}

pub fn angular_momentum(s: &PhaseState) -> f64 {
    s.x * s.py - s.y * s.px
}

pub fn dilational_momentum(s: &PhaseState) -> f64 {
    s.x * s.px + s.y * s.py + 2.0 * s.z * s.pz
}

/// Conserved quantities of a state.
///
/// `p_theta` and `J` are defined everywhere. On the singular point the
/// energy entries are `-inf` instead of an error so this stays total.
pub fn conserved(state: &PhaseState) -> ConservedSet {
    match hamiltonian(state) {
        Ok(c) => c,
        Err(_) => {
            let (big_px, big_py) = state.horizontal_momenta();
            let k = 0.5 * (big_px * big_px + big_py * big_py);
            ConservedSet {
                h: f64::NEG_INFINITY,
                k,
                u: f64::NEG_INFINITY,
                ptheta: angular_momentum(state),
                j: dilational_momentum(state),
            }
        }
    }
}

/// Hamilton's equations, with hand-coded partial derivatives of `H`.
pub fn vector_field(state: &PhaseState) -> Result<PhaseStateDerivative> {
    let PhaseState {
        x,
        y,
        z,
        px: _,
        py: _,
        pz,
    } = *state;
    let d = potential_denominator(x, y, z);
    if d == 0.0 {
        return Err(KhepError::Collision { rho: 0.0 });
    }
    let (big_px, big_py) = state.horizontal_momenta();
    let r2 = x * x + y * y;
    // D^(-3/2) scaled by the potential constant
    let inv = 1.0 / (d * d.sqrt());
    let du_dx = x * r2 * inv / (4.0 * PI);
    let du_dy = y * r2 * inv / (4.0 * PI);
    let du_dz = 2.0 * z * inv / PI;

    let out = PhaseState::new(
        big_px,
        big_py,
        0.5 * (x * big_py - y * big_px),
        -0.5 * pz * big_py - du_dx,
        0.5 * pz * big_px - du_dy,
        -du_dz,
    );
    if out.is_finite() {
        Ok(out)
    } else {
        Err(KhepError::NonFinite)
    }
}

fn dilate_unchecked(s: &PhaseState, lambda: f64) -> PhaseState {
    let l2 = lambda * lambda;
    PhaseState::new(
        lambda * s.x,
        lambda * s.y,
        l2 * s.z,
        s.px / lambda,
        s.py / lambda,
        s.pz / l2,
    )
}

/// Heisenberg dilation lifted to the cotangent bundle.
///
/// Positions scale as `(l x, l y, l^2 z)`, momenta as `(px/l, py/l, pz/l^2)`,
/// which keeps `p_theta` and `J` fixed and scales `H` by `l^-2`.
pub fn dilate(state: &PhaseState, lambda: f64) -> Result<PhaseState> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(KhepError::InvalidArgument(format!(
            "dilation factor must be positive and finite, got {lambda}"
        )));
    }
    Ok(dilate_unchecked(state, lambda))
}

/// Rotation by `phi` about the z-axis, acting on `(x, y)` and `(px, py)`.
pub fn rotate(state: &PhaseState, phi: f64) -> PhaseState {
    let (s, c) = phi.sin_cos();
    PhaseState::new(
        c * state.x - s * state.y,
        s * state.x + c * state.y,
        state.z,
        c * state.px - s * state.py,
        s * state.px + c * state.py,
        state.pz,
    )
}

/// `(X^2 + Y^2) U` by nested central differences along the horizontal frame.
///
/// `step` is the finite-difference step in the frame parameter. Away from
/// the origin the result should vanish up to discretisation error.
pub fn sublaplacian_of_potential(x: f64, y: f64, z: f64, step: f64) -> Result<f64> {
    if potential_denominator(x, y, z) == 0.0 {
        return Err(KhepError::Collision { rho: 0.0 });
    }
    if !(step > 0.0) {
        return Err(KhepError::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    type Frame = fn([f64; 3]) -> [f64; 3];
    let frame_x: Frame = |p| [1.0, 0.0, -0.5 * p[1]];
    let frame_y: Frame = |p| [0.0, 1.0, 0.5 * p[0]];

    let shift =
        |p: [f64; 3], v: [f64; 3], t: f64| [p[0] + t * v[0], p[1] + t * v[1], p[2] + t * v[2]];
    let u = |p: [f64; 3]| potential(p[0], p[1], p[2]);
    let first = |field: Frame, p: [f64; 3]| -> Result<f64> {
        let v = field(p);
        Ok((u(shift(p, v, step))? - u(shift(p, v, -step))?) / (2.0 * step))
    };
    let second = |field: Frame, p: [f64; 3]| -> Result<f64> {
        let v = field(p);
        Ok((first(field, shift(p, v, step))? - first(field, shift(p, v, -step))?) / (2.0 * step))
    };

    let p = [x, y, z];
    Ok(second(frame_x, p)? + second(frame_y, p)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hamiltonian_at_rest_on_x_axis() {
        let c = hamiltonian(&PhaseState::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(c.k, 0.0);
        assert_relative_eq!(c.u, -1.0 / (8.0 * PI), max_relative = 1e-15);
        assert_relative_eq!(c.u, -0.039789, epsilon = 1e-6);
        assert_eq!(c.h, c.k + c.u);
    }

    #[test]
    fn hamiltonian_on_z_axis() {
        let c = hamiltonian(&PhaseState::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(c.u, -1.0 / (32.0 * PI), max_relative = 1e-15);
        assert_relative_eq!(c.u, -0.0099472, epsilon = 1e-7);
    }

    #[test]
    fn zero_energy_seed_has_zero_energy() {
        let s = PhaseState::new(1.0, 0.0, 0.0, 0.0, 1.0 / (2.0 * PI.sqrt()), 0.0);
        let c = hamiltonian(&s).unwrap();
        assert_relative_eq!(c.k, 1.0 / (8.0 * PI), max_relative = 1e-15);
        assert!(c.h.abs() < 1e-17);
        assert_relative_eq!(
            UNIT_ZERO_ENERGY_SPEED,
            1.0 / (2.0 * PI.sqrt()),
            max_relative = 1e-15
        );
    }

    #[test]
    fn singular_state_is_a_collision() {
        let s = PhaseState::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        assert!(s.is_singular());
        assert!(matches!(hamiltonian(&s), Err(KhepError::Collision { .. })));
        assert!(matches!(vector_field(&s), Err(KhepError::Collision { .. })));
        assert!(sublaplacian_of_potential(0.0, 0.0, 0.0, 1e-4).is_err());
        // conserved() stays total
        let c = conserved(&s);
        assert_eq!(c.j, 0.0);
        assert!(c.h.is_infinite());
    }

    #[test]
    fn momenta_examples() {
        let c = conserved(&PhaseState::new(1.0, 0.0, 0.0, 0.0, 0.2, 0.1));
        assert_relative_eq!(c.ptheta, 0.2);
        assert_eq!(c.j, 0.0);
        let c = conserved(&PhaseState::new(0.0, 0.0, 1.0, 0.0, 0.0, 3.0));
        assert_eq!(c.ptheta, 0.0);
        assert_eq!(c.j, 6.0);
    }

    #[test]
    fn vector_field_on_z_axis_is_pure_momentum_drift() {
        for p in [-2.0, 0.0, 0.7] {
            let f = vector_field(&PhaseState::new(0.0, 0.0, 1.0, 0.0, 0.0, p)).unwrap();
            assert_eq!([f.x, f.y, f.z, f.px, f.py], [0.0; 5]);
            assert_relative_eq!(f.pz, -1.0 / (32.0 * PI), max_relative = 1e-15);
        }
        let f = vector_field(&PhaseState::new(0.0, 0.0, -2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(f.pz, 1.0 / (32.0 * PI * 4.0), max_relative = 1e-15);
    }

    #[test]
    fn vector_field_velocity_at_seed() {
        let f = vector_field(&PhaseState::new(
            1.0,
            0.0,
            0.0,
            0.0,
            UNIT_ZERO_ENERGY_SPEED,
            0.0,
        ))
        .unwrap();
        assert_eq!(f.x, 0.0);
        assert_relative_eq!(f.y, UNIT_ZERO_ENERGY_SPEED, max_relative = 1e-15);
    }

    #[test]
    fn dilation_examples() {
        let s = PhaseState::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let d = dilate(&s, 2.0).unwrap();
        assert_eq!(d, PhaseState::new(2.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert_relative_eq!(
            energy(&d).unwrap(),
            -1.0 / (32.0 * PI),
            max_relative = 1e-15
        );
        let t = PhaseState::new(0.3, -0.2, 0.5, 0.1, 0.7, -0.4);
        assert_eq!(dilate(&t, 1.0).unwrap(), t);
        assert!(dilate(&t, 0.0).is_err());
        assert!(dilate(&t, -1.0).is_err());
    }

    #[test]
    fn rotation_examples() {
        let r = rotate(&PhaseState::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0), PI / 2.0);
        let expected = PhaseState::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
        assert!(r.distance(&expected) < 1e-15);
        let t = PhaseState::new(0.3, -0.2, 0.5, 0.1, 0.7, -0.4);
        assert_eq!(rotate(&t, 0.0), t);
    }

    #[test]
    fn norm_examples() {
        assert_eq!(heis_norm(1.0, 0.0, 0.0), 1.0);
        assert_eq!(heis_norm(0.0, 0.0, 1.0), 2.0);
        assert_eq!(heis_norm(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn sublaplacian_vanishes_at_named_points() {
        for (x, y, z) in [(1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (3.0, -2.0, 0.5)] {
            let v = sublaplacian_of_potential(x, y, z, 1e-4).unwrap();
            assert!(v.abs() <= 1e-5, "({x},{y},{z}) -> {v}");
        }
    }

    #[test]
    fn group_composition() {
        let a = GroupElement::new(2.0, 0.3).unwrap();
        let b = GroupElement::new(0.25, -1.1).unwrap();
        let s = PhaseState::new(0.3, -0.2, 0.5, 0.1, 0.7, -0.4);
        let lhs = a.compose(b).apply(&s);
        let rhs = a.apply(&b.apply(&s));
        assert!(lhs.distance(&rhs) < 1e-14);
        assert!(a.compose(a.inverse()).apply(&s).distance(&s) < 1e-15);
        assert!(GroupElement::new(0.0, 1.0).is_err());
        assert_eq!(a.pow(2), a.compose(a));
    }
}
