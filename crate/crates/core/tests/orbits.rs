use std::sync::OnceLock;

use khep::dynamics::conserved;
use khep::integrator::{
    closest_approaches, integrate, polish_approach, IntegratorConfig, Method, StepControl,
};
use khep::search::{self, OrbitRecord, SearchConfig};
use khep::selfsim::{integrate_until_zeros, FundamentalDomain};
use khep::PhaseState;

fn half_orbit() -> &'static OrbitRecord {
    static ORBIT: OnceLock<OrbitRecord> = OnceLock::new();
    ORBIT.get_or_init(|| {
        let refinement =
            search::monte_carlo_refine(&search::seed_from_ptheta(0.164), &SearchConfig::default())
                .unwrap();
        refinement
            .outcome
            .expect("1/2 orbit converges from its reference seed")
    })
}

#[test]
fn reference_seed_refines_to_one_half() {
    let r = half_orbit();
    assert_eq!((r.rotation.j, r.rotation.k), (1, 2));
    assert!(r.objective <= 1e-8);
    assert!(r.h.abs() <= 1e-9 && r.j.abs() <= 1e-6);
    assert!((r.ptheta - 0.164).abs() < 5e-3, "ptheta {}", r.ptheta);
}

#[test]
fn refinement_is_deterministic() {
    let seed = search::seed_from_ptheta(0.1643);
    let cfg = SearchConfig {
        update_steps: 60,
        rng_seed: 11,
        ..SearchConfig::default()
    };
    let a = search::monte_carlo_refine(&seed, &cfg).unwrap();
    let b = search::monte_carlo_refine(&seed, &cfg).unwrap();
    assert_eq!(a.chain, b.chain);
    let best = |r: &search::Refinement| match &r.outcome {
        Ok(o) => o.initial,
        Err(f) => f.best_state,
    };
    assert_eq!(
        best(&a).to_array().map(f64::to_bits),
        best(&b).to_array().map(f64::to_bits)
    );
}

#[test]
fn converged_orbit_is_a_fixed_point() {
    let orbit = half_orbit();
    let cfg = SearchConfig::default();
    let o = search::objective(&orbit.initial, &cfg).unwrap();
    assert!(o.value <= cfg.acceptance_threshold);
    assert!((o.time - orbit.period).abs() < 1e-6 * orbit.period);
    let again = search::monte_carlo_refine(&orbit.initial, &cfg).unwrap();
    let rec = again.outcome.expect("still converged");
    assert_eq!(rec.initial, orbit.initial);
    assert_eq!(rec.accepted_updates, 0);
}

#[test]
fn periodic_orbit_returns_near_each_period() {
    let orbit = half_orbit();
    let cfg = IntegratorConfig {
        max_time: 3.2 * orbit.period,
        ..SearchConfig::default().integrator
    };
    let traj = integrate(&orbit.initial, &cfg).unwrap();
    let near: Vec<f64> = closest_approaches(&traj, &orbit.initial, 0.5 * orbit.period)
        .iter()
        .map(|a| polish_approach(&traj, a, &orbit.initial, &cfg))
        .filter(|a| a.distance < 1e-6)
        .map(|a| a.time / orbit.period)
        .collect();
    assert_eq!(near.len(), 3, "{near:?}");
    for (n, t) in near.iter().enumerate() {
        assert!((t - (n + 1) as f64).abs() < 1e-6);
    }
}

#[test]
fn first_return_grows_with_perturbation() {
    let orbit = half_orbit();
    let cfg = SearchConfig::default();
    let values: Vec<f64> = [1e-6, 1e-5, 1e-4]
        .iter()
        .map(|eps| {
            let mut s = orbit.initial;
            s.z += eps;
            search::objective(&s, &cfg).unwrap().value
        })
        .collect();
    assert!(values[0] < values[1] && values[1] < values[2], "{values:?}");
}

#[test]
fn objective_examples() {
    let cfg = SearchConfig::default();
    let negative = PhaseState::new(1.0, 0.0, 0.0, 0.05, 0.2, 0.0);
    assert!(conserved(&negative).h < 0.0);
    // J drifts linearly when H < 0, so returns stay far from X0 and only an
    // unfiltered objective sees them
    let unfiltered = SearchConfig {
        return_radius: f64::INFINITY,
        ..cfg
    };
    let o = search::objective(&negative, &unfiltered).unwrap();
    assert!(o.value.is_finite() && o.value > 0.0);
    assert!(search::objective(&negative, &cfg)
        .unwrap()
        .value
        .is_infinite());
    let escaping = search::zero_energy_seed(0.1, 0.1).unwrap();
    assert!(search::objective(&escaping, &cfg)
        .unwrap()
        .value
        .is_infinite());
}

#[test]
fn three_fifths_sits_between_two_thirds_and_one_half() {
    let icfg = SearchConfig::default().integrator;
    let p = |j, k| search::locate_ptheta(j, k, (0.05, 0.3), 1e-6, &icfg).unwrap();
    let (a, b, c) = (p(2, 3), p(3, 5), p(1, 2));
    assert!(a < b && b < c, "{a} {b} {c}");
}

fn zero_energy_domain(ptheta: f64, j: f64) -> (FundamentalDomain, khep::integrator::Trajectory) {
    let cfg = IntegratorConfig {
        method: Method::Gauss2,
        step_size: 1e-3,
        max_time: 400.0,
        step_control: StepControl::Dilational,
        ..IntegratorConfig::default()
    };
    let traj =
        integrate_until_zeros(&search::zero_energy_seed(ptheta, j).unwrap(), &cfg, 5).unwrap();
    (FundamentalDomain::from_trajectory(&traj).unwrap(), traj)
}

#[test]
fn similarity_factor_follows_the_sign_of_j() {
    let (flat, _) = zero_energy_domain(0.12, 0.0);
    assert!((flat.lambda - 1.0).abs() < 1e-6, "lambda {}", flat.lambda);
    assert!(flat.collision_time().is_none());
    let (shrinking, _) = zero_energy_domain(0.12, -0.04);
    assert!(shrinking.lambda < 1.0);
    assert!(shrinking.collision_time().unwrap() > shrinking.t2);
    let (growing, _) = zero_energy_domain(0.12, 0.04);
    assert!(growing.lambda > 1.0);
}

#[test]
fn reversal_inverts_the_similarity() {
    let (d, _) = zero_energy_domain(0.12, -0.04);
    let r = d.reversed().unwrap();
    assert!((r.lambda * d.lambda - 1.0).abs() < 1e-9);
    assert!((r.phi + d.phi).abs() < 1e-9);
}

#[test]
fn extension_is_identity_on_the_domain_and_tracks_the_orbit() {
    let (d, traj) = zero_energy_domain(0.12, -0.04);
    for i in (0..d.times.len()).step_by(97) {
        assert!(d.extend(d.times[i]).unwrap().distance(&d.states[i]) < 1e-12);
    }
    let z = traj.z_crossings();
    let next = d.t2 + d.lambda * d.lambda * (d.t2 - d.t0);
    assert!((z[4] - next).abs() / (next - d.t2) < 1e-3);
    for k in 1..50 {
        let t = d.t2 + (z[4] - d.t2) * k as f64 / 50.0;
        let direct = traj.state_at(t).unwrap();
        assert!(direct.distance(&d.extend(t).unwrap()) / direct.norm() < 1e-4);
    }
}

#[test]
fn negative_energy_orbit_stays_bounded() {
    let seed = PhaseState::new(1.0, 0.0, 0.0, 0.0, 0.15, 0.1);
    let cfg = IntegratorConfig {
        method: Method::Gauss2,
        max_time: 100.0,
        step_control: StepControl::Dilational,
        ..IntegratorConfig::default()
    };
    let traj = integrate(&seed, &cfg).unwrap();
    let top = traj.states.iter().map(|s| s.rho()).fold(0.0, f64::max);
    assert!(top < 3.0, "rho reached {top}");
}

#[test]
fn zero_energy_seed_keeps_j() {
    let seed = search::seed_from_ptheta(0.2);
    let traj = integrate(&seed, &IntegratorConfig::default()).unwrap();
    assert!(traj.drift.max_dilational_drift < 1e-6);
}
