//! Report-generating probes of the laws and conjectures of the problem.
//!
//! Laws (Kepler's third law, planar conics, the z-axis family) produce a
//! verdict backed by quantified residuals. Conjecture probes sample orbits,
//! classify each one and report; they never fail on an unexpected outcome.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dynamics::{conserved, dilate, potential, rotate, PhaseState, UNIT_ZERO_ENERGY_SPEED};
use crate::error::{KhepError, Result};
use crate::integrator::{integrate, IntegratorConfig, Method, StepControl, Trajectory};
use crate::par::{self, Execution};
use crate::search::{
    derive_seed, objective, seed_from_ptheta, zero_energy_seed, OrbitRecord, SearchConfig,
};
use crate::selfsim::{
    classify_stratum, integrate_until_zeros, FundamentalDomain, StratumLabel, StratumTolerances,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Consistent,
    Inconsistent,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Consistent => "consistent",
            Verdict::Inconsistent => "inconsistent",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// One classified sample of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub index: usize,
    pub classification: String,
    pub values: BTreeMap<String, f64>,
}

impl Sample {
    pub fn new(index: usize, classification: impl Into<String>) -> Self {
        Self {
            index,
            classification: classification.into(),
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub id: String,
    pub parameters: serde_json::Value,
    pub samples: Vec<Sample>,
    pub residuals: BTreeMap<String, f64>,
    pub verdict: Verdict,
    /// Quantified violations; non-empty whenever the verdict is inconsistent.
    pub violations: Vec<String>,
    pub notes: Vec<String>,
    /// Content hashes or paths of raw data written alongside the report.
    pub raw_data: Vec<String>,
}

impl ExperimentReport {
    pub fn new(id: &str, parameters: serde_json::Value) -> Self {
        Self {
            id: id.to_string(),
            parameters,
            samples: Vec::new(),
            residuals: BTreeMap::new(),
            verdict: Verdict::Inconclusive,
            violations: Vec::new(),
            notes: Vec::new(),
            raw_data: Vec::new(),
        }
    }

    pub fn residual(&mut self, key: &str, value: f64) {
        self.residuals.insert(key.to_string(), value);
    }

    /// Settles the verdict: any violation makes it inconsistent, otherwise
    /// `pass` decides between consistent and inconclusive.
    fn conclude(mut self, pass: bool) -> Self {
        self.verdict = if !self.violations.is_empty() {
            Verdict::Inconsistent
        } else if pass {
            Verdict::Consistent
        } else {
            Verdict::Inconclusive
        };
        self
    }

    pub fn count(&self, classification: &str) -> usize {
        self.samples
            .iter()
            .filter(|s| s.classification == classification)
            .count()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("experiment {}\nverdict    {}\n", self.id, self.verdict);
        out.push_str(&format!("parameters {}\n", self.parameters));
        for (k, v) in &self.residuals {
            out.push_str(&format!("{k:<28} {v:.6e}\n"));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(&s.classification).or_default() += 1;
        }
        for (k, n) in counts {
            out.push_str(&format!("samples {k:<20} {n}\n"));
        }
        for v in &self.violations {
            out.push_str(&format!("violation: {v}\n"));
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Kepler's third law

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kepler3Sample {
    pub lambda: f64,
    pub period: f64,
    /// Largest `rho` over one period.
    pub size: f64,
    /// `T^2 / a^4`
    pub ratio: f64,
    /// Closing distance after one period.
    pub closure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kepler3Fit {
    pub samples: Vec<Kepler3Sample>,
    /// Mean of `T^2 / a^4` over the retained samples.
    pub k: f64,
    pub max_relative_deviation: f64,
    /// Dilations whose orbit failed the periodicity re-check.
    pub excluded: Vec<(f64, String)>,
}

/// Largest `rho` over the stored nodes, refined by a parabola through the
/// neighbouring nodes.
fn max_rho(traj: &Trajectory, until: f64) -> f64 {
    let rho: Vec<f64> = traj.states.iter().map(|s| s.rho()).collect();
    let last = traj.times.iter().rposition(|t| *t <= until).unwrap_or(0);
    let (i, &best) = rho[..=last]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty trajectory");
    if i == 0 || i + 1 >= rho.len() {
        return best;
    }
    let (u0, u2) = (
        traj.times[i - 1] - traj.times[i],
        traj.times[i + 1] - traj.times[i],
    );
    let (w0, w2) = (rho[i - 1] - best, rho[i + 1] - best);
    let a = (w0 * u2 - w2 * u0) / (u0 * u2 * (u0 - u2));
    let b = (w0 - a * u0 * u0) / u0;
    if a >= 0.0 {
        return best;
    }
    let um = (-b / (2.0 * a)).clamp(u0, u2);
    best + a * um * um + b * um
}

/// Measures period and size of dilates of a periodic orbit and fits `T^2 = k a^4`.
///
/// Each dilate is integrated from scratch at the configured step size; its
/// period is the time of the polished closest return.
pub fn kepler3_check(
    orbit: &OrbitRecord,
    lambdas: &[f64],
    config: &SearchConfig,
    closure_tolerance: f64,
) -> Result<Kepler3Fit> {
    if !(orbit.period > 0.0) || !orbit.objective.is_finite() {
        return Err(KhepError::Precondition(
            "orbit is not a converged periodic orbit".into(),
        ));
    }
    let mut samples = Vec::new();
    let mut excluded = Vec::new();
    for &lambda in lambdas {
        let x = dilate(&orbit.initial, lambda)?;
        let expected = orbit.period * lambda * lambda;
        let mut cfg = *config;
        cfg.exclusion = 0.5 * expected;
        cfg.integrator.max_time = 1.25 * expected;
        let obj = objective(&x, &cfg)?;
        let closure = obj.value;
        if !obj.is_finite() || closure > closure_tolerance {
            excluded.push((lambda, format!("closing distance {:.3e}", obj.value)));
            continue;
        }
        let mut icfg = cfg.integrator;
        icfg.max_time = obj.time;
        let traj = integrate(&x, &icfg).map_err(KhepError::from)?;
        let size = max_rho(&traj, obj.time);
        samples.push(Kepler3Sample {
            lambda,
            period: obj.time,
            size,
            ratio: obj.time * obj.time / size.powi(4),
            closure,
        });
    }
    if samples.is_empty() {
        return Err(KhepError::InsufficientData(
            "no dilate passed the periodicity re-check".into(),
        ));
    }
    let k = samples.iter().map(|s| s.ratio).sum::<f64>() / samples.len() as f64;
    let max_relative_deviation = samples
        .iter()
        .map(|s| (s.ratio / k - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(Kepler3Fit {
        samples,
        k,
        max_relative_deviation,
        excluded,
    })
}

pub fn kepler3_report(fit: &Kepler3Fit, tolerance: f64) -> ExperimentReport {
    let lambdas: Vec<f64> = fit.samples.iter().map(|s| s.lambda).collect();
    let mut report = ExperimentReport::new(
        "kepler3",
        json!({ "lambdas": lambdas, "tolerance": tolerance }),
    );
    for (i, s) in fit.samples.iter().enumerate() {
        let class = if (s.ratio / fit.k - 1.0).abs() <= tolerance {
            "law-holds"
        } else {
            "deviates"
        };
        report.samples.push(
            Sample::new(i, class)
                .with("lambda", s.lambda)
                .with("period", s.period)
                .with("size", s.size)
                .with("ratio", s.ratio),
        );
    }
    for (lambda, why) in &fit.excluded {
        report
            .notes
            .push(format!("lambda {lambda} excluded: {why}"));
    }
    report.residual("k", fit.k);
    report.residual("max_relative_deviation", fit.max_relative_deviation);
    if fit.max_relative_deviation > tolerance {
        report.violations.push(format!(
            "T^2/a^4 varies by {:.3e} (tolerance {tolerance:.1e})",
            fit.max_relative_deviation
        ));
    }
    let pass = fit.samples.len() >= 2;
    report.conclude(pass)
}

// ---------------------------------------------------------------------------
// Planar conics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConicType {
    Ellipse,
    Parabola,
    Hyperbola,
    /// Quadratic part vanishes: the samples lie on a line.
    Line,
}

impl std::fmt::Display for ConicType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConicType::Ellipse => "ellipse",
            ConicType::Parabola => "parabola",
            ConicType::Hyperbola => "hyperbola",
            ConicType::Line => "line",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConicFit {
    /// Coefficients of `A t^2 + B t r + C r^2 + D t + E r + F = 0` in scaled
    /// coordinates `t / t_scale`, `r / r_scale`; unit norm.
    pub coefficients: [f64; 6],
    pub t_scale: f64,
    pub r_scale: f64,
    /// RMS algebraic residual of the unit-norm coefficients.
    pub residual: f64,
    /// `(B^2 - 4 A C) / (A^2 + B^2 + C^2)`
    pub discriminant: f64,
    pub kind: ConicType,
}

/// Total-least-squares conic through `(t, r)` points, classified by the sign
/// of its discriminant; `|discriminant| <= parabola_tolerance` is a parabola.
pub fn fit_conic(points: &[(f64, f64)], parabola_tolerance: f64) -> Result<ConicFit> {
    if points.len() < 6 {
        return Err(KhepError::InsufficientData(format!(
            "a conic needs 6 points, got {}",
            points.len()
        )));
    }
    let t_scale = points
        .iter()
        .map(|p| p.0.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let r_scale = points
        .iter()
        .map(|p| p.1.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let n = points.len();
    let m = DMatrix::from_fn(n, 6, |i, j| {
        let (t, r) = (points[i].0 / t_scale, points[i].1 / r_scale);
        [t * t, t * r, r * r, t, r, 1.0][j]
    });
    // the normal matrix keeps the decomposition 6x6 regardless of the sample count
    let gram = m.transpose() * &m;
    let eig = gram.symmetric_eigen();
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("six eigenvalues");
    let v = eig.eigenvectors.column(imin);
    let c: [f64; 6] = std::array::from_fn(|i| v[i]);
    let residual = ((&m * v).norm_squared() / n as f64).sqrt();
    let quad = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
    let (discriminant, kind) = if quad.sqrt() <= parabola_tolerance {
        (0.0, ConicType::Line)
    } else {
        let d = (c[1] * c[1] - 4.0 * c[0] * c[2]) / quad;
        let kind = if d.abs() <= parabola_tolerance {
            ConicType::Parabola
        } else if d < 0.0 {
            ConicType::Ellipse
        } else {
            ConicType::Hyperbola
        };
        (d, kind)
    };
    Ok(ConicFit {
        coefficients: c,
        t_scale,
        r_scale,
        residual,
        discriminant,
        kind,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergySign {
    Negative,
    Zero,
    Positive,
}

impl EnergySign {
    pub fn expected_conic(self) -> ConicType {
        match self {
            EnergySign::Negative => ConicType::Ellipse,
            EnergySign::Zero => ConicType::Parabola,
            EnergySign::Positive => ConicType::Hyperbola,
        }
    }
}

/// Radial state on `{z = pz = p_theta = 0}` at `r = 1` with the requested energy sign.
pub fn planar_seed(sign: EnergySign) -> PhaseState {
    let pr = match sign {
        EnergySign::Negative => 0.1,
        EnergySign::Zero => UNIT_ZERO_ENERGY_SPEED,
        EnergySign::Positive => 0.5,
    };
    PhaseState::new(1.0, 0.0, 0.0, pr, 0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConicCheckConfig {
    pub integrator: IntegratorConfig,
    pub samples: usize,
    /// Points closer than this to the origin are not used in the fit.
    pub min_radius: f64,
    pub parabola_tolerance: f64,
    pub residual_tolerance: f64,
}

impl Default for ConicCheckConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig {
                method: Method::Gauss2,
                step_size: 1e-3,
                max_time: 10.0,
                step_control: StepControl::Dilational,
                ..IntegratorConfig::default()
            },
            samples: 400,
            min_radius: 0.05,
            parabola_tolerance: 1e-6,
            residual_tolerance: 1e-6,
        }
    }
}

/// Integrates a planar seed and checks that `(t, r(t))` lies on a conic of
/// the type set by the sign of the energy.
pub fn planar_conic_check(
    sign: EnergySign,
    seed: &PhaseState,
    config: &ConicCheckConfig,
) -> Result<ExperimentReport> {
    let c = conserved(seed);
    if seed.z != 0.0 || seed.pz != 0.0 || c.ptheta != 0.0 {
        return Err(KhepError::Precondition(
            "seed must satisfy z = pz = p_theta = 0".into(),
        ));
    }
    let mut report = ExperimentReport::new(
        "planar-conic",
        json!({ "sign": sign, "seed": seed, "h": c.h, "samples": config.samples }),
    );
    let traj = match integrate(seed, &config.integrator) {
        Ok(t) => t,
        Err(f) => f.partial,
    };
    let planar = traj.states.iter().all(|s| s.z == 0.0 && s.pz == 0.0);
    let usable: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, s)| (*t, s.x.hypot(s.y)))
        .filter(|p| p.1 >= config.min_radius)
        .collect();
    if usable.len() < 6 {
        report.notes.push("collision before enough samples".into());
        return Ok(report.conclude(false));
    }
    let stride = (usable.len() / config.samples.max(6)).max(1);
    let points: Vec<(f64, f64)> = usable.iter().step_by(stride).copied().collect();
    let fit = fit_conic(&points, config.parabola_tolerance)?;
    report.samples.push(
        Sample::new(0, fit.kind.to_string())
            .with("energy", c.h)
            .with("discriminant", fit.discriminant)
            .with("points", points.len() as f64),
    );
    report.residual("fit_residual", fit.residual);
    report.residual("discriminant", fit.discriminant);
    let expected = sign.expected_conic();
    let observed_sign = if c.h.abs() <= 1e-14 {
        EnergySign::Zero
    } else if c.h < 0.0 {
        EnergySign::Negative
    } else {
        EnergySign::Positive
    };
    if observed_sign != sign {
        return Err(KhepError::Precondition(format!(
            "seed energy {:.3e} does not have the requested sign",
            c.h
        )));
    }
    if !planar {
        report
            .violations
            .push("orbit left the plane z = pz = 0".into());
    }
    if fit.kind != expected {
        report.violations.push(format!(
            "fitted {} (discriminant {:.3e}) for {:?} energy",
            fit.kind, fit.discriminant, sign
        ));
    }
    if fit.residual > config.residual_tolerance {
        report.violations.push(format!(
            "fit residual {:.3e} above {:.1e}",
            fit.residual, config.residual_tolerance
        ));
    }
    Ok(report.conclude(true))
}

// ---------------------------------------------------------------------------
// z-axis stationary family

/// Expected `dpz/dt` for a particle at rest on the z-axis.
pub fn z_axis_slope(z0: f64) -> f64 {
    -z0.signum() / (32.0 * PI * z0 * z0)
}

pub fn z_axis_family_check(
    z0: f64,
    duration: f64,
    integrator: &IntegratorConfig,
) -> Result<ExperimentReport> {
    if z0 == 0.0 {
        return Err(KhepError::InvalidArgument("z0 must be non-zero".into()));
    }
    let seed = PhaseState::new(0.0, 0.0, z0, 0.0, 0.0, 0.0);
    let cfg = integrator.with_max_time(duration);
    let traj = integrate(&seed, &cfg).map_err(KhepError::from)?;
    let drift = traj
        .states
        .iter()
        .map(|s| s.x.abs().max(s.y.abs()).max((s.z - z0).abs()))
        .fold(0.0, f64::max);
    // least-squares slope of pz(t)
    let n = traj.len() as f64;
    let (mt, mp) = (
        traj.times.iter().sum::<f64>() / n,
        traj.states.iter().map(|s| s.pz).sum::<f64>() / n,
    );
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, s) in traj.times.iter().zip(&traj.states) {
        sxy += (t - mt) * (s.pz - mp);
        sxx += (t - mt) * (t - mt);
    }
    let slope = sxy / sxx;
    let expected = z_axis_slope(z0);
    let mut report = ExperimentReport::new(
        "z-axis-family",
        json!({ "z0": z0, "duration": duration, "method": cfg.method, "h": cfg.step_size }),
    );
    report.samples.push(
        Sample::new(0, "stationary")
            .with("slope", slope)
            .with("expected_slope", expected),
    );
    report.residual("position_drift", drift);
    report.residual("slope_error", (slope - expected).abs());
    if drift > 1e-10 {
        report
            .violations
            .push(format!("position drifted by {drift:.3e}"));
    }
    if (slope - expected).abs() > 1e-8 {
        report.violations.push(format!(
            "pz slope {slope:.12e} differs from {expected:.12e}"
        ));
    }
    Ok(report.conclude(true))
}

// ---------------------------------------------------------------------------
// Random zero-energy samples

/// Zero-energy state off the z-axis: random position with `r` in
/// `[0.3, 1.5]` and `|z| <= 0.5`, random `pz`, and horizontal momentum of
/// random direction with `|P| = sqrt(2 |U|)`.
pub fn random_zero_energy_state(rng: &mut ChaCha8Rng) -> Result<PhaseState> {
    random_state_with_energy_fraction(rng, 1.0)
}

/// As [`random_zero_energy_state`] but with `|P|^2 = 2 f |U|`, so `H = (f - 1) |U|`.
pub fn random_state_with_energy_fraction(rng: &mut ChaCha8Rng, f: f64) -> Result<PhaseState> {
    let r = rng.random_range(0.3..1.5);
    let angle = rng.random_range(0.0..2.0 * PI);
    let (x, y) = (r * angle.cos(), r * angle.sin());
    let z = rng.random_range(-0.5..0.5);
    let pz = rng.random_range(-0.5..0.5);
    let speed = (2.0 * f * potential(x, y, z)?.abs()).sqrt();
    let dir = rng.random_range(0.0..2.0 * PI);
    let (big_px, big_py) = (speed * dir.cos(), speed * dir.sin());
    Ok(PhaseState::new(
        x,
        y,
        z,
        big_px + 0.5 * y * pz,
        big_py - 0.5 * x * pz,
        pz,
    ))
}

/// Runs `f` over `n` samples, each with its own generator derived from `rng_seed`.
fn per_sample<F>(n: usize, rng_seed: u64, exec: Execution, f: F) -> Vec<Sample>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Sample + Sync + Send,
{
    par::map_range(exec, n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, i as u64));
        f(i, &mut rng)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub integrator: IntegratorConfig,
    /// Zeros of `z` needed to call an orbit oscillatory.
    pub min_zeros: usize,
    /// Relative reconstruction error accepted as self-similar.
    pub similarity_tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig {
                method: Method::Gauss2,
                step_size: 1e-3,
                max_time: 400.0,
                step_control: StepControl::Dilational,
                ..IntegratorConfig::default()
            },
            min_zeros: 3,
            similarity_tolerance: 1e-4,
        }
    }
}

/// Orientation of time in which a zero-energy orbit runs into its collision:
/// orbits with `J > 0` are reversed, which flips the sign of `J`.
fn toward_collision(state: &PhaseState) -> PhaseState {
    if conserved(state).j > 0.0 {
        state.time_reversed()
    } else {
        *state
    }
}

fn is_monotone(values: impl Iterator<Item = f64>) -> bool {
    let (mut up, mut down) = (true, true);
    let mut prev: Option<f64> = None;
    for v in values {
        if let Some(p) = prev {
            up &= v >= p;
            down &= v <= p;
        }
        prev = Some(v);
    }
    up || down
}

/// Counts zeros of `z` on random zero-energy orbits off the z-axis.
///
/// Each orbit is run in the time direction of its collision, where the
/// oscillations accumulate; `J = 0` orbits run forward.
///
/// At `z = 0` one has `J = (x, y) . (P_X, P_Y)` and `|P| = 1 / (2 sqrt(pi) r)`,
/// so `|J| <= 1 / (2 sqrt(pi))` there: orbits above that bound never reach
/// `z = 0`. Such orbits without zeros count as counterexample candidates.
pub fn oscillation_probe(
    samples: usize,
    rng_seed: u64,
    config: &ProbeConfig,
    exec: Execution,
) -> ExperimentReport {
    let results = per_sample(samples, rng_seed, exec, |i, rng| {
        let Ok(state) = random_zero_energy_state(rng) else {
            return Sample::new(i, "undecided");
        };
        let start = toward_collision(&state);
        let traj = match integrate(&start, &config.integrator) {
            Ok(t) => t,
            Err(f) => f.partial,
        };
        let zeros = traj.z_crossings().len();
        let c = conserved(&state);
        let class = if zeros >= config.min_zeros {
            "oscillatory"
        } else if zeros == 0
            && (c.j.abs() > UNIT_ZERO_ENERGY_SPEED || is_monotone(traj.states.iter().map(|s| s.z)))
        {
            "counterexample-candidate"
        } else {
            "undecided"
        };
        Sample::new(i, class)
            .with("zeros", zeros as f64)
            .with("j", c.j)
            .with("ptheta", c.ptheta)
            .with("end_time", traj.end_time())
            .with("collided", if traj.collided() { 1.0 } else { 0.0 })
    });
    let mut report = ExperimentReport::new(
        "oscillation",
        json!({ "samples": samples, "rng_seed": rng_seed, "min_zeros": config.min_zeros,
                "horizon": config.integrator.max_time }),
    );
    report.samples = results;
    let candidates = report.count("counterexample-candidate");
    report.residual(
        "oscillatory_fraction",
        report.count("oscillatory") as f64 / samples.max(1) as f64,
    );
    if candidates > 0 {
        report.violations.push(format!(
            "{candidates} orbit(s) without a zero of z over the horizon"
        ));
    }
    report
        .notes
        .push("orbits with J > 0 are integrated backward in time".into());
    let above = report
        .samples
        .iter()
        .filter(|s| {
            s.values
                .get("j")
                .is_some_and(|j| j.abs() > UNIT_ZERO_ENERGY_SPEED)
        })
        .count();
    report.residual("samples_above_j_bound", above as f64);
    report.conclude(true)
}

/// Compares the reconstruction from the first fundamental domain with direct
/// integration over the next two domains, for random zero-energy orbits.
pub fn self_similarity_probe(
    samples: usize,
    rng_seed: u64,
    config: &ProbeConfig,
    exec: Execution,
) -> ExperimentReport {
    let results = per_sample(samples, rng_seed, exec, |i, rng| {
        let measured = (|| -> Result<(f64, f64, f64)> {
            let state = toward_collision(&random_zero_energy_state(rng)?);
            let traj = integrate_until_zeros(&state, &config.integrator, 7)?;
            let domain = FundamentalDomain::from_trajectory(&traj)?;
            let zeros = traj.z_crossings();
            let (a, b) = (zeros[2], zeros[6]);
            let mut worst: f64 = 0.0;
            for k in 0..=400 {
                let t = a + (b - a) * k as f64 / 400.0;
                let direct = traj.state_at(t)?;
                let rebuilt = domain.extend(t)?;
                worst = worst.max(direct.distance(&rebuilt) / direct.norm());
            }
            Ok((worst, domain.lambda, conserved(&state).j))
        })();
        match measured {
            Ok((err, lambda, j)) => {
                let class = if err <= config.similarity_tolerance {
                    "self-similar"
                } else if err > 1e-2 {
                    "not-self-similar"
                } else {
                    "undecided"
                };
                Sample::new(i, class)
                    .with("relative_error", err)
                    .with("lambda", lambda)
                    .with("j", j)
            }
            Err(_) => Sample::new(i, "undecided"),
        }
    });
    let mut report = ExperimentReport::new(
        "self-similarity",
        json!({ "samples": samples, "rng_seed": rng_seed, "tolerance": config.similarity_tolerance }),
    );
    report.samples = results;
    let worst = report
        .samples
        .iter()
        .filter_map(|s| s.values.get("relative_error"))
        .fold(0.0, |a: f64, b| a.max(*b));
    report.residual("max_relative_error", worst);
    let bad = report.count("not-self-similar");
    if bad > 0 {
        report.violations.push(format!(
            "{bad} orbit(s) not reproduced by their fundamental domain"
        ));
    }
    report.conclude(true)
}

// ---------------------------------------------------------------------------
// z-axis bifurcation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisBehaviour {
    /// `z` changes sign: the dilating figure-eight family.
    Oscillatory,
    /// `z` monotone over the horizon: the dilating helix family.
    Monotone,
    Undecided,
}

impl AxisBehaviour {
    fn as_str(self) -> &'static str {
        match self {
            AxisBehaviour::Oscillatory => "oscillatory",
            AxisBehaviour::Monotone => "monotone",
            AxisBehaviour::Undecided => "undecided",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationConfig {
    /// Starting height on the z-axis.
    pub z0: f64,
    pub integrator: IntegratorConfig,
    pub bisection_steps: usize,
    /// Relative distance to the expected threshold reported as agreement.
    pub agreement: f64,
}

impl Default for BifurcationConfig {
    fn default() -> Self {
        Self {
            z0: 1.0,
            integrator: IntegratorConfig {
                method: Method::Gauss2,
                step_size: 1e-3,
                max_time: 1e7,
                step_control: StepControl::Homogeneous,
                ..IntegratorConfig::default()
            },
            bisection_steps: 30,
            agreement: 0.05,
        }
    }
}

/// Zero-energy state at `(0, 0, z0)` with dilational momentum `j`:
/// `J = 2 z0 pz` there, and `H = 0` fixes `|P|`.
pub fn z_axis_seed(z0: f64, j: f64, direction: f64) -> Result<PhaseState> {
    if z0 == 0.0 {
        return Err(KhepError::InvalidArgument("z0 must be non-zero".into()));
    }
    let speed = (2.0 * potential(0.0, 0.0, z0)?.abs()).sqrt();
    Ok(PhaseState::new(
        0.0,
        0.0,
        z0,
        speed * direction.cos(),
        speed * direction.sin(),
        j / (2.0 * z0),
    ))
}

/// Classifies the orbit leaving the z-axis with `|J| = j`, run toward its
/// unbounded end (forward for `J > 0`).
pub fn classify_axis_orbit(
    j: f64,
    direction: f64,
    config: &BifurcationConfig,
) -> Result<AxisBehaviour> {
    let seed = z_axis_seed(config.z0, j.abs(), direction)?;
    let traj = match integrate(&seed, &config.integrator) {
        Ok(t) => t,
        Err(f) => f.partial,
    };
    let zeros = traj.z_crossings().len();
    Ok(if zeros >= 1 {
        AxisBehaviour::Oscillatory
    } else if traj.termination == crate::integrator::Termination::MaxTime
        && is_monotone(traj.states.iter().map(|s| s.z))
    {
        AxisBehaviour::Monotone
    } else {
        AxisBehaviour::Undecided
    })
}

/// Classifies z-axis orbits at the given `|J|` values, then bisects between
/// the largest oscillatory and smallest monotone value.
pub fn z_axis_bifurcation_probe(
    j_values: &[f64],
    rng_seed: u64,
    config: &BifurcationConfig,
    exec: Execution,
) -> ExperimentReport {
    let expected = UNIT_ZERO_ENERGY_SPEED;
    let mut sorted: Vec<f64> = j_values.iter().map(|j| j.abs()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let direction = rng.random_range(0.0..2.0 * PI);
    let classes = par::map_indexed(exec, &sorted, |_, &j| {
        classify_axis_orbit(j, direction, config)
    });

    let mut report = ExperimentReport::new(
        "z-axis-bifurcation",
        json!({ "j_values": sorted, "rng_seed": rng_seed, "z0": config.z0,
                "horizon": config.integrator.max_time, "direction": direction }),
    );
    for (i, (j, c)) in sorted.iter().zip(&classes).enumerate() {
        let class = c.as_ref().map(|c| c.as_str()).unwrap_or("undecided");
        report.samples.push(Sample::new(i, class).with("j", *j));
    }
    let lo = sorted
        .iter()
        .zip(&classes)
        .filter(|(_, c)| matches!(c, Ok(AxisBehaviour::Oscillatory)))
        .map(|(j, _)| *j)
        .fold(f64::NAN, f64::max);
    let hi = sorted
        .iter()
        .zip(&classes)
        .filter(|(_, c)| matches!(c, Ok(AxisBehaviour::Monotone)))
        .map(|(j, _)| *j)
        .fold(f64::NAN, f64::min);
    if !(lo < hi) {
        report
            .notes
            .push("samples do not bracket a single transition".into());
        return report.conclude(false);
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut undecided_band: Option<(f64, f64)> = None;
    for _ in 0..config.bisection_steps {
        let mid = 0.5 * (lo + hi);
        match classify_axis_orbit(mid, direction, config) {
            Ok(AxisBehaviour::Oscillatory) => lo = mid,
            Ok(AxisBehaviour::Monotone) => hi = mid,
            _ => {
                undecided_band = Some((lo, hi));
                break;
            }
        }
    }
    let threshold = 0.5 * (lo + hi);
    let rel = (threshold - expected).abs() / expected;
    report.residual("threshold", threshold);
    report.residual("band_low", lo);
    report.residual("band_high", hi);
    report.residual("expected", expected);
    report.residual("relative_difference", rel);
    if let Some((a, b)) = undecided_band {
        report
            .notes
            .push(format!("undecided band [{a:.8}, {b:.8}]"));
    }
    if rel > config.agreement {
        report.violations.push(format!(
            "transition at |J| = {threshold:.6} is {rel:.3e} away from {expected:.6}"
        ));
    }
    report.conclude(true)
}

// ---------------------------------------------------------------------------
// Stratification by J

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratificationConfig {
    pub per_row: usize,
    pub integrator: IntegratorConfig,
    /// Recurrent orbits must keep `max rho / min rho` below this.
    pub recurrence_bound: f64,
}

impl Default for StratificationConfig {
    fn default() -> Self {
        Self {
            per_row: 5,
            integrator: IntegratorConfig {
                method: Method::Gauss2,
                step_size: 1e-3,
                max_time: 400.0,
                step_control: StepControl::Dilational,
                ..IntegratorConfig::default()
            },
            recurrence_bound: 10.0,
        }
    }
}

/// Observed behaviour of a zero-energy orbit: collision ahead, collision
/// behind, or bounded both ways.
pub fn observe_stratum(state: &PhaseState, config: &StratificationConfig) -> Option<StratumLabel> {
    let run = |s: &PhaseState| match integrate(s, &config.integrator) {
        Ok(t) => t,
        Err(f) => f.partial,
    };
    let forward = run(state);
    if forward.collided() {
        return Some(StratumLabel::FutureCollision);
    }
    let backward = run(&state.time_reversed());
    let grew = forward.last().rho() > state.rho();
    if backward.collided() {
        return grew.then_some(StratumLabel::PastCollision);
    }
    let (lo, hi) = forward
        .states
        .iter()
        .chain(&backward.states)
        .map(|s| s.rho())
        .fold((f64::INFINITY, 0.0_f64), |(a, b), r| (a.min(r), b.max(r)));
    (hi / lo < config.recurrence_bound).then_some(StratumLabel::Recurrent)
}

/// Samples `per_row` orbits with `J < 0`, `J > 0` and `J = 0`, randomly
/// rotated and dilated, and compares observed behaviour with the sign of `J`.
pub fn stratification_probe(
    rng_seed: u64,
    config: &StratificationConfig,
    exec: Execution,
) -> ExperimentReport {
    let rows = [-1.0, 1.0, 0.0];
    let n = config.per_row * rows.len();
    let results = per_sample(n, rng_seed, exec, |i, rng| {
        let sign = rows[i / config.per_row];
        let p = rng.random_range(0.05..0.25);
        let j = sign * rng.random_range(0.03..0.15);
        let phi = rng.random_range(0.0..2.0 * PI);
        let lambda = rng.random_range(0.5..2.0);
        let seed = if sign == 0.0 {
            Ok(seed_from_ptheta(p))
        } else {
            zero_energy_seed(p, j)
        };
        let Ok(state) = seed.and_then(|s| dilate(&rotate(&s, phi), lambda)) else {
            return Sample::new(i, "unclassified");
        };
        let c = conserved(&state);
        let predicted = classify_stratum(c.h, c.j, &StratumTolerances::default()).map(|s| s.label);
        let observed = observe_stratum(&state, config);
        let class = match observed {
            Some(l) => label_name(l),
            None => "unclassified",
        };
        let correct = matches!((predicted, observed), (Ok(a), Some(b)) if a == b);
        Sample::new(i, class)
            .with("j", c.j)
            .with("h", c.h)
            .with("correct", if correct { 1.0 } else { 0.0 })
    });
    let mut report = ExperimentReport::new(
        "stratification",
        json!({ "per_row": config.per_row, "rng_seed": rng_seed, "horizon": config.integrator.max_time }),
    );
    report.samples = results;
    let wrong: Vec<usize> = report
        .samples
        .iter()
        .filter(|s| s.values.get("correct") != Some(&1.0))
        .map(|s| s.index)
        .collect();
    report.residual(
        "correct_fraction",
        1.0 - wrong.len() as f64 / n.max(1) as f64,
    );
    if !wrong.is_empty() {
        report
            .violations
            .push(format!("samples {wrong:?} disagree with the sign of J"));
    }
    report.conclude(true)
}

pub fn label_name(label: StratumLabel) -> &'static str {
    match label {
        StratumLabel::FutureCollision => "future-collision",
        StratumLabel::PastCollision => "past-collision",
        StratumLabel::Recurrent => "recurrent",
    }
}

// ---------------------------------------------------------------------------
// Bounded negative energy

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundednessConfig {
    pub integrator: IntegratorConfig,
    /// Relative growth of `max rho` between `T` and `2T` still counted as stable.
    pub stability: f64,
}

impl Default for BoundednessConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig {
                method: Method::Gauss2,
                step_size: 1e-3,
                max_time: 100.0,
                step_control: StepControl::Dilational,
                ..IntegratorConfig::default()
            },
            stability: 0.05,
        }
    }
}

/// For random `H < 0` states, compares `max rho` over `[0, T]` and `[0, 2T]`.
pub fn bounded_energy_probe(
    samples: usize,
    rng_seed: u64,
    config: &BoundednessConfig,
    exec: Execution,
) -> ExperimentReport {
    let horizon = config.integrator.max_time;
    let results = per_sample(samples, rng_seed, exec, |i, rng| {
        let f = rng.random_range(0.1..0.9);
        let Ok(state) = random_state_with_energy_fraction(rng, f) else {
            return Sample::new(i, "undecided");
        };
        let cfg = config.integrator.with_max_time(2.0 * horizon);
        let traj = match integrate(&state, &cfg) {
            Ok(t) => t,
            Err(f) => f.partial,
        };
        let max_until = |end: f64| {
            traj.times
                .iter()
                .zip(&traj.states)
                .filter(|(t, _)| **t <= end)
                .map(|(_, s)| s.rho())
                .fold(0.0, f64::max)
        };
        let (first, full) = (max_until(horizon), max_until(2.0 * horizon));
        let class = if traj.collided() {
            "collision"
        } else if full <= first * (1.0 + config.stability) {
            "bounded"
        } else {
            "growing"
        };
        Sample::new(i, class)
            .with("h", conserved(&state).h)
            .with("max_rho_t", first)
            .with("max_rho_2t", full)
    });
    let mut report = ExperimentReport::new(
        "bounded-negative-energy",
        json!({ "samples": samples, "rng_seed": rng_seed, "horizon": horizon }),
    );
    report.samples = results;
    let growing = report.count("growing");
    report.residual(
        "bounded_fraction",
        report.count("bounded") as f64 / samples.max(1) as f64,
    );
    if growing > 0 {
        report
            .notes
            .push(format!("{growing} orbit(s) still growing at 2T"));
    }
    report.conclude(growing == 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn conic_fit_classifies_exact_curves() {
        let ellipse: Vec<(f64, f64)> = (0..50)
            .map(|i| {
                let a = i as f64 * 0.1;
                (2.0 * a.cos(), 1.0 + a.sin())
            })
            .collect();
        assert_eq!(fit_conic(&ellipse, 1e-6).unwrap().kind, ConicType::Ellipse);
        let parabola: Vec<(f64, f64)> = (0..50)
            .map(|i| (i as f64 * 0.1, (1.0 + 0.3 * i as f64 * 0.1).sqrt()))
            .collect();
        let fit = fit_conic(&parabola, 1e-6).unwrap();
        assert_eq!(fit.kind, ConicType::Parabola);
        assert!(fit.residual < 1e-12);
        let hyperbola: Vec<(f64, f64)> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, (1.0 + t * t).sqrt())
            })
            .collect();
        assert_eq!(
            fit_conic(&hyperbola, 1e-6).unwrap().kind,
            ConicType::Hyperbola
        );
        assert!(fit_conic(&parabola[..5], 1e-6).is_err());
    }

    #[test]
    fn z_axis_slopes() {
        assert_relative_eq!(
            z_axis_slope(1.0),
            -0.009947183943243459,
            max_relative = 1e-12
        );
        assert_relative_eq!(z_axis_slope(-1.0), 1.0 / (32.0 * PI));
        assert_relative_eq!(z_axis_slope(2.0), -1.0 / (128.0 * PI));
    }

    #[test]
    fn random_states_have_zero_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = random_zero_energy_state(&mut rng).unwrap();
            assert!(conserved(&s).h.abs() < 1e-15);
            assert!(s.x.hypot(s.y) >= 0.3);
        }
    }

    #[test]
    fn axis_seed_values() {
        let s = z_axis_seed(1.0, 0.1, 0.0).unwrap();
        assert_relative_eq!(s.pz, 0.05);
        assert_relative_eq!(s.px, (1.0 / (16.0 * PI)).sqrt(), max_relative = 1e-14);
        let c = conserved(&s);
        assert!(c.h.abs() < 1e-16);
        assert_relative_eq!(c.j, 0.1, max_relative = 1e-14);
    }

    #[test]
    fn inconsistent_needs_a_violation() {
        let mut r = ExperimentReport::new("x", json!({}));
        r = r.conclude(true);
        assert_eq!(r.verdict, Verdict::Consistent);
        let mut r2 = ExperimentReport::new("x", json!({}));
        r2.violations.push("bad".into());
        assert_eq!(r2.conclude(true).verdict, Verdict::Inconsistent);
        assert_eq!(
            ExperimentReport::new("x", json!({}))
                .conclude(false)
                .verdict,
            Verdict::Inconclusive
        );
    }

    #[test]
    fn monotone_detection() {
        assert!(is_monotone([1.0, 2.0, 2.0, 3.0].into_iter()));
        assert!(is_monotone([3.0, 1.0].into_iter()));
        assert!(!is_monotone([1.0, 2.0, 1.0].into_iter()));
    }
}
