//! Periodic-orbit search: seed family, shooting objective, annular Monte
//! Carlo refinement, rotation-number detection and the `p_theta` scan.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{conserved, vector_field, PhaseState, UNIT_ZERO_ENERGY_SPEED};
use crate::error::{KhepError, Result};
use crate::integrator::{
    closest_approaches, integrate, polish_approach, IntegratorConfig, Method, Trajectory,
};
use crate::par::{self, Execution};
use crate::rotation::{rotation_number, symmetry_residual, RotationConfig, RotationNumber};
use crate::selfsim::FundamentalDomain;

/// Zero-energy, zero-`J` state at `(1, 0, 0)` with angular momentum `ptheta`.
///
/// At a z-crossing on the positive x-axis `J = px`, so `J = 0` forces
/// `px = 0`; then `p_theta = py` and `H = 0` fixes `P_Y = 1/(2 sqrt(pi))`.
pub fn seed_from_ptheta(ptheta: f64) -> PhaseState {
    PhaseState::new(
        1.0,
        0.0,
        0.0,
        0.0,
        ptheta,
        2.0 * (UNIT_ZERO_ENERGY_SPEED - ptheta),
    )
}

/// Zero-energy state at `(1, 0, 0)` with prescribed `p_theta` and `J`.
///
/// Requires `|J| < 1/(2 sqrt(pi))` so the remaining horizontal speed is real.
pub fn zero_energy_seed(ptheta: f64, j: f64) -> Result<PhaseState> {
    let speed2 = UNIT_ZERO_ENERGY_SPEED * UNIT_ZERO_ENERGY_SPEED - j * j;
    if !(speed2 > 0.0) {
        return Err(KhepError::InvalidArgument(format!(
            "|J| = {} leaves no horizontal speed at unit norm",
            j.abs()
        )));
    }
    let big_py = speed2.sqrt();
    Ok(PhaseState::new(
        1.0,
        0.0,
        0.0,
        j,
        ptheta,
        2.0 * (big_py - ptheta),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Inner annulus radius as a fraction of the current objective value.
    pub inner_radius: f64,
    /// Outer annulus radius as a fraction of the current objective value.
    pub outer_radius: f64,
    pub shrink_factor: f64,
    /// Consecutive rejections that trigger a shrink.
    pub shrink_after: usize,
    pub update_steps: usize,
    pub acceptance_threshold: f64,
    /// Initial objective must not exceed this for refinement to start.
    pub precheck_threshold: f64,
    /// Refinement returns as soon as the objective is at or below this.
    pub early_stop: f64,
    /// Closest approaches before this time are ignored.
    pub exclusion: f64,
    /// Minima farther than this multiple of `|X0|` are not returns.
    pub return_radius: f64,
    /// After the pre-check, the horizon is cut to `(1 + margin) * T0`.
    pub horizon_margin: f64,
    pub rng_seed: u64,
    pub integrator: IntegratorConfig,
    pub rotation: RotationConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            inner_radius: 0.05,
            outer_radius: 1.0,
            shrink_factor: 0.9,
            shrink_after: 50,
            update_steps: 1000,
            acceptance_threshold: 1e-8,
            precheck_threshold: 1e-2,
            early_stop: 1e-10,
            exclusion: 2.0,
            return_radius: 0.5,
            horizon_margin: 0.5,
            rng_seed: 0,
            integrator: IntegratorConfig {
                method: Method::Gauss2,
                step_size: 2e-3,
                max_time: 400.0,
                ..IntegratorConfig::default()
            },
            rotation: RotationConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.inner_radius && self.inner_radius < self.outer_radius) {
            return Err(KhepError::InvalidArgument(
                "annulus radii must satisfy 0 < inner < outer".into(),
            ));
        }
        if self.update_steps == 0 {
            return Err(KhepError::InvalidArgument(
                "update_steps must be at least 1".into(),
            ));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) || self.shrink_after == 0 {
            return Err(KhepError::InvalidArgument("bad shrink schedule".into()));
        }
        self.integrator.validate()
    }

    /// Stable digest of the configuration, recorded in orbit provenance.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(bytes))[..16].to_string()
    }
}

/// Value of the shooting objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    /// Smallest local-minimum distance, `+inf` when there is none.
    pub value: f64,
    /// Time of that minimum (candidate period); `NaN` when `value` is infinite.
    pub time: f64,
    pub collided: bool,
}

impl Objective {
    fn none(collided: bool) -> Self {
        Self {
            value: f64::INFINITY,
            time: f64::NAN,
            collided,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Smallest local minimum of phase-space distance from `x0` along its orbit.
pub fn objective(x0: &PhaseState, config: &SearchConfig) -> Result<Objective> {
    objective_with(x0, &config.integrator, config)
}

fn objective_with(
    x0: &PhaseState,
    icfg: &IntegratorConfig,
    config: &SearchConfig,
) -> Result<Objective> {
    if x0.is_singular() {
        return Err(KhepError::Collision { rho: 0.0 });
    }
    let traj = match integrate(x0, icfg) {
        Ok(t) => t,
        Err(f) => f.partial,
    };
    Ok(objective_on(&traj, x0, icfg, config))
}

fn objective_on(
    traj: &Trajectory,
    x0: &PhaseState,
    icfg: &IntegratorConfig,
    config: &SearchConfig,
) -> Objective {
    let reach = config.return_radius * x0.norm();
    let mins: Vec<_> = closest_approaches(traj, x0, config.exclusion)
        .into_iter()
        .filter(|a| a.distance <= reach)
        .collect();
    if mins.is_empty() {
        return Objective::none(traj.collided());
    }
    // polish the few best candidates; interpolation alone cannot resolve tiny distances
    let mut ranked = mins;
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    let best = ranked
        .iter()
        .take(3)
        .map(|a| polish_approach(traj, a, x0, icfg))
        .min_by(|a, b| a.distance.total_cmp(&b.distance))
        .expect("non-empty");
    Objective {
        value: best.distance,
        time: best.time,
        collided: traj.collided(),
    }
}

/// Provenance of a refined orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed_state: PhaseState,
    pub rng_seed: u64,
    pub config_hash: String,
}

/// A numerically closed periodic orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub initial: PhaseState,
    pub period: f64,
    pub rotation: RotationNumber,
    pub ptheta: f64,
    pub h: f64,
    pub j: f64,
    pub objective: f64,
    /// Relative residual of the k-fold symmetry of the xy-projection.
    pub symmetry_residual: f64,
    pub accepted_updates: usize,
    pub provenance: Provenance,
}

impl OrbitRecord {
    /// Multi-line human-readable description.
    pub fn summary(&self) -> String {
        let s = &self.initial;
        format!(
            "periodic orbit\n\
             initial state      x={:.17e} y={:.17e} z={:.17e}\n\
             \x20                  px={:.17e} py={:.17e} pz={:.17e}\n\
             period             {:.12}\n\
             rotation number    {}/{} (confidence {:.3}, spectral check {})\n\
             angular momentum   {:.12}\n\
             energy H           {:.3e}\n\
             dilational J       {:.3e}\n\
             objective          {:.3e}\n\
             symmetry residual  {:.3e}\n\
             accepted updates   {}\n\
             rng seed           {}\n\
             config hash        {}\n",
            s.x,
            s.y,
            s.z,
            s.px,
            s.py,
            s.pz,
            self.period,
            self.rotation.j,
            self.rotation.k,
            self.rotation.confidence,
            if self.rotation.spectral_consistent {
                "ok"
            } else {
                "MISMATCH"
            },
            self.ptheta,
            self.h,
            self.j,
            self.objective,
            self.symmetry_residual,
            self.accepted_updates,
            self.provenance.rng_seed,
            self.provenance.config_hash,
        )
    }
}

/// Outcome of a refinement that did not reach the acceptance threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineFailure {
    pub best_state: PhaseState,
    pub best_objective: f64,
    pub accepted_updates: usize,
    pub reason: String,
}

/// Full result of a refinement run, including the accepted objective chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub outcome: std::result::Result<OrbitRecord, RefineFailure>,
    /// Objective after each accepted update, starting with the initial value.
    pub chain: Vec<f64>,
}

fn random_direction(rng: &mut ChaCha8Rng) -> PhaseState {
    loop {
        let v: [f64; 6] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let p = PhaseState::from_array(v);
        let n = p.norm();
        if n > 1e-12 {
            return p * (1.0 / n);
        }
    }
}

/// Moves `state` onto `H = J = 0` by minimum-norm Newton steps.
///
/// Periodic orbits lie on this set; proposals off it drift away from closure
/// at a rate set by `H` and `J`, which swamps the shooting objective.
pub fn project_to_zero_set(state: &PhaseState) -> Result<PhaseState> {
    let mut x = *state;
    for _ in 0..8 {
        let c = conserved(&x);
        if !(c.h.is_finite() && c.j.is_finite()) {
            return Err(KhepError::Collision { rho: x.rho() });
        }
        if c.h.abs() <= 1e-15 && c.j.abs() <= 1e-15 {
            return Ok(x);
        }
        let f = vector_field(&x)?;
        let gh = PhaseState::new(-f.px, -f.py, -f.pz, f.x, f.y, f.z);
        let gj = PhaseState::new(x.px, x.py, 2.0 * x.pz, x.x, x.y, 2.0 * x.z);
        let (a, b, d) = (gh.dot(&gh), gh.dot(&gj), gj.dot(&gj));
        let det = a * d - b * b;
        if !(det.abs() > 1e-300) {
            return Err(KhepError::Degenerate(
                "H and J gradients are parallel".into(),
            ));
        }
        let mu = (d * c.h - b * c.j) / det;
        let nu = (a * c.j - b * c.h) / det;
        x = x - gh * mu - gj * nu;
    }
    Ok(x)
}

/// Accept-if-improved Monte Carlo on an annulus around the current state.
///
/// Proposals are `X + r u` with `u` uniform on the unit sphere of R^6 and `r`
/// uniform on `[inner, outer]` (both scaled by the current objective and by
/// the shrink multiplier), then projected onto `H = J = 0`.
pub fn monte_carlo_refine(x0: &PhaseState, config: &SearchConfig) -> Result<Refinement> {
    config.validate()?;
    let initial = objective(x0, config)?;
    if !initial.is_finite() {
        return Err(KhepError::Precondition(format!(
            "initial objective is infinite (collided: {})",
            initial.collided
        )));
    }
    if initial.value > config.precheck_threshold {
        return Err(KhepError::Precondition(format!(
            "initial state is not close to a closed orbit (objective {:.3e} > {:.1e})",
            initial.value, config.precheck_threshold
        )));
    }

    let mut icfg = config.integrator;
    icfg.max_time = icfg
        .max_time
        .min(initial.time * (1.0 + config.horizon_margin));

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut current = *x0;
    let mut best = initial;
    let mut chain = vec![initial.value];
    let mut accepted = 0;
    let mut rejections = 0;
    let mut multiplier = 1.0;

    for _ in 0..config.update_steps {
        if best.value <= config.early_stop {
            break;
        }
        let radius_scale = best.value * multiplier;
        let r = rng.random_range(config.inner_radius..config.outer_radius) * radius_scale;
        let obj = project_to_zero_set(&(current + random_direction(&mut rng) * r))
            .and_then(|p| Ok((p, objective_with(&p, &icfg, config)?)));
        let (proposal, obj) = match obj {
            Ok(v) => v,
            Err(_) => continue,
        };
        if obj.value < best.value {
            current = proposal;
            best = obj;
            chain.push(obj.value);
            accepted += 1;
            rejections = 0;
        } else {
            rejections += 1;
            if rejections % config.shrink_after == 0 {
                multiplier *= config.shrink_factor;
            }
        }
    }

    if best.value > config.acceptance_threshold {
        return Ok(Refinement {
            outcome: Err(RefineFailure {
                best_state: current,
                best_objective: best.value,
                accepted_updates: accepted,
                reason: format!(
                    "objective {:.3e} above acceptance threshold {:.1e}",
                    best.value, config.acceptance_threshold
                ),
            }),
            chain,
        });
    }

    let record = certify(&current, best, accepted, x0, config);
    Ok(Refinement {
        outcome: record.map_err(|e| RefineFailure {
            best_state: current,
            best_objective: best.value,
            accepted_updates: accepted,
            reason: e.to_string(),
        }),
        chain,
    })
}

/// Samples one period uniformly: `n` states at `t = i T / n`, `i = 0..n`.
pub fn sample_period(
    state: &PhaseState,
    period: f64,
    n: usize,
    icfg: &IntegratorConfig,
) -> Result<Vec<PhaseState>> {
    let mut cfg = *icfg;
    cfg.max_time = period;
    let traj = integrate(state, &cfg)?;
    if traj.end_time() < period {
        return Err(KhepError::Collision {
            rho: traj.last().rho(),
        });
    }
    (0..n)
        .map(|i| traj.state_at(period * i as f64 / n as f64))
        .collect()
}

fn certify(
    state: &PhaseState,
    obj: Objective,
    accepted: usize,
    seed: &PhaseState,
    config: &SearchConfig,
) -> Result<OrbitRecord> {
    let samples = sample_period(state, obj.time, config.rotation.samples, &config.integrator)?;
    let mut rotation = rotation_number(&samples, &config.rotation)?;
    let mut period = obj.time;
    if rotation.reduced_from > 1 {
        // the minimum sat at a multiple of the true period
        period /= rotation.reduced_from as f64;
        rotation.reduced_from = 1;
    }
    let samples = sample_period(state, period, config.rotation.samples, &config.integrator)?;
    let symmetry = symmetry_residual(&samples, rotation.j, rotation.k, true);
    let c = conserved(state);
    Ok(OrbitRecord {
        initial: *state,
        period,
        rotation,
        ptheta: c.ptheta,
        h: c.h,
        j: c.j,
        objective: obj.value,
        symmetry_residual: symmetry,
        accepted_updates: accepted,
        provenance: Provenance {
            seed_state: *seed,
            rng_seed: config.rng_seed,
            config_hash: config.hash(),
        },
    })
}

/// Rotation of the seed `seed_from_ptheta(ptheta)` over one z-oscillation,
/// as a fraction of a full turn, together with the oscillation period.
pub fn seed_rotation(ptheta: f64, icfg: &IntegratorConfig) -> Result<(f64, f64)> {
    let domain = FundamentalDomain::from_state(&seed_from_ptheta(ptheta), icfg)?;
    Ok((domain.phi / (2.0 * PI), domain.t2 - domain.t0))
}

/// Finds `p_theta` with `seed_rotation == j / k` by bisection within the seed family.
///
/// The rotation decreases with `p_theta`; `bracket` must straddle the target.
pub fn locate_ptheta(
    j: u32,
    k: u32,
    bracket: (f64, f64),
    tolerance: f64,
    icfg: &IntegratorConfig,
) -> Result<f64> {
    let target = j as f64 / k as f64;
    let (mut lo, mut hi) = bracket;
    let f = |p: f64| seed_rotation(p, icfg).map(|(nu, _)| nu - target);
    let (mut f_lo, f_hi) = (f(lo)?, f(hi)?);
    if f_lo.signum() == f_hi.signum() {
        return Err(KhepError::InvalidArgument(format!(
            "bracket ({lo}, {hi}) does not straddle rotation {j}/{k}"
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        if f_mid.abs() <= tolerance {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The `1/1` orbit sits at `p_theta = 0`, the edge of the seed family, so
/// there is nothing to bracket: halve `p_theta` until the seed rotation is
/// within `tolerance` of a full turn.
pub fn locate_unit_rotation(ptheta: f64, tolerance: f64, icfg: &IntegratorConfig) -> Result<f64> {
    let mut p = ptheta;
    for _ in 0..64 {
        let (nu, _) = seed_rotation(p, icfg)?;
        if (1.0 - nu).abs() <= tolerance {
            return Ok(p);
        }
        p *= 0.5;
    }
    Err(KhepError::Classification(format!(
        "seed rotation did not approach 1 below p_theta = {ptheta}"
    )))
}

/// Nearest fraction `j/k` with `k <= order` (a Farey neighbour), `0 < j/k <= 1`.
pub fn nearest_farey(value: f64, order: u32) -> (u32, u32) {
    let mut best = (1, 1);
    let mut best_err = f64::INFINITY;
    for k in 1..=order {
        for j in 1..=k {
            if gcd(j, k) != 1 {
                continue;
            }
            let err = (value - j as f64 / k as f64).abs();
            if err < best_err {
                best_err = err;
                best = (j, k);
            }
        }
    }
    best
}

pub fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Scan settings layered on top of a [`SearchConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Largest denominator considered when matching a grid point to an orbit.
    pub farey_order: u32,
    /// Shooting tolerance on the seed rotation before Monte Carlo refinement.
    pub locate_tolerance: f64,
    pub master_seed: u64,
    pub search: SearchConfig,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            farey_order: 6,
            locate_tolerance: 1e-6,
            master_seed: 42,
            search: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub index: usize,
    /// Grid value of `p_theta`.
    pub ptheta: f64,
    /// Rotation of the grid seed over one z-oscillation.
    pub seed_rotation: Option<f64>,
    /// `p_theta` of the refined orbit.
    pub orbit_ptheta: Option<f64>,
    pub rotation: Option<(u32, u32)>,
    pub record: Option<OrbitRecord>,
    pub error: Option<String>,
}

/// Per-task seed derived from a master seed and a task index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn scan_point(index: usize, ptheta: f64, grid_span: f64, cfg: &ScanConfig) -> ScanRow {
    let mut row = ScanRow {
        index,
        ptheta,
        seed_rotation: None,
        orbit_ptheta: None,
        rotation: None,
        record: None,
        error: None,
    };
    let icfg = cfg.search.integrator;
    let result = (|| -> Result<OrbitRecord> {
        let (nu, _) = seed_rotation(ptheta, &icfg)?;
        row.seed_rotation = Some(nu);
        let (j, k) = nearest_farey(nu, cfg.farey_order);
        // the target lies on the side of the grid point indicated by the rotation error
        let width = grid_span.max(0.02);
        let bracket = if nu > j as f64 / k as f64 {
            (ptheta, ptheta + width)
        } else {
            ((ptheta - width).max(1e-9), ptheta)
        };
        let located = if (nu - j as f64 / k as f64).abs() <= cfg.locate_tolerance {
            ptheta
        } else if (j, k) == (1, 1) {
            locate_unit_rotation(ptheta, cfg.locate_tolerance, &icfg)?
        } else {
            locate_ptheta(j, k, bracket, cfg.locate_tolerance, &icfg)?
        };
        let mut search = cfg.search;
        search.rng_seed = derive_seed(cfg.master_seed, index as u64);
        let refinement = monte_carlo_refine(&seed_from_ptheta(located), &search)?;
        refinement
            .outcome
            .map_err(|f| KhepError::Classification(f.reason))
    })();
    match result {
        Ok(rec) => {
            row.orbit_ptheta = Some(rec.ptheta);
            row.rotation = Some((rec.rotation.j, rec.rotation.k));
            row.record = Some(rec);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Attempts refinement and classification at every grid point; failures are
/// recorded per row and the scan continues. Rows are sorted by `p_theta`.
pub fn farey_scan(grid: &[f64], cfg: &ScanConfig, exec: Execution) -> Vec<ScanRow> {
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let span = if sorted.len() > 1 {
        (sorted[sorted.len() - 1] - sorted[0]) / (sorted.len() - 1) as f64
    } else {
        0.02
    };
    par::map_indexed(exec, &sorted, |i, &p| scan_point(i, p, span, cfg))
}

/// Evenly spaced grid over `[lo, hi]`, avoiding `p_theta = 0` exactly.
pub fn ptheta_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![lo.max(1e-6)];
    }
    (0..steps)
        .map(|i| {
            let p = lo + (hi - lo) * i as f64 / (steps - 1) as f64;
            if p == 0.0 {
                1e-6
            } else {
                p
            }
        })
        .collect()
}
