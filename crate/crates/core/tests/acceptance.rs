//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line with
//! the measured quantities and elapsed time, then asserts. Lines go straight
//! to stderr so they show up without `--nocapture`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use khep::dynamics::{conserved, dilate, sublaplacian_of_potential};
use khep::experiments as exp;
use khep::integrator::{integrate, IntegratorConfig, Method, StepControl, Trajectory};
use khep::par::Execution;
use khep::search::{self, ScanConfig, SearchConfig};
use khep::selfsim::{integrate_until_zeros, FundamentalDomain};
use khep::PhaseState;

// criteria run one at a time so each runtime is measured on an idle core
static SERIAL: Mutex<()> = Mutex::new(());

fn verdict(n: u32, pass: bool, started: Instant, budget: Duration, detail: &str) {
    let elapsed = started.elapsed();
    let in_time = elapsed <= budget;
    let ok = pass && in_time;
    report(format!(
        "criterion {n}: {} ({:.1} s of {} s) {detail}",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    ));
    assert!(pass, "criterion {n} failed: {detail}");
    assert!(in_time, "criterion {n} exceeded its {budget:?} budget");
}

fn report(line: String) {
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

fn run(seed: &PhaseState, cfg: &IntegratorConfig) -> Trajectory {
    integrate(seed, cfg).unwrap_or_else(|f| panic!("integration failed: {}", f.error))
}

/// Seeds with `r` in [0.7, 1.3], `|z| <= 0.3` and momenta of size <= 0.25,
/// kept only if they stay clear of the collision set up to `t = 10`.
fn conservation_seeds(count: usize) -> Vec<PhaseState> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let probe = IntegratorConfig {
        method: Method::Gauss2,
        step_size: 1e-2,
        ..IntegratorConfig::default()
    };
    let mut out = Vec::new();
    while out.len() < count {
        let r = rng.random_range(0.7..1.3);
        let a = rng.random_range(0.0..2.0 * PI);
        let s = PhaseState::new(
            r * a.cos(),
            r * a.sin(),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.25..0.25),
            rng.random_range(-0.25..0.25),
            rng.random_range(-0.25..0.25),
        );
        if let Ok(t) = integrate(&s, &probe) {
            let closest = t
                .states
                .iter()
                .map(|s| s.rho())
                .fold(f64::INFINITY, f64::min);
            if t.end_time() >= 10.0 && closest > 0.3 {
                out.push(s);
            }
        }
    }
    out
}

#[test]
fn criterion_01_conservation() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let cfg = IntegratorConfig::default();
    assert_eq!(cfg.method, Method::ImplicitMidpoint);
    // p_theta is a quadratic invariant, conserved exactly by the midpoint rule;
    // drifts at this level are rounding and cannot shrink with h
    let rounding_floor = 1e-12;
    let mut worst = [0.0_f64; 3];
    let mut worst_gain = f64::INFINITY;
    let mut failures = Vec::new();
    for (i, seed) in conservation_seeds(20).iter().enumerate() {
        let coarse = run(seed, &cfg).drift;
        let fine = run(seed, &cfg.with_step(5e-4)).drift;
        let pairs = [
            (coarse.max_energy_drift, fine.max_energy_drift, 1e-6),
            (coarse.max_ptheta_drift, fine.max_ptheta_drift, 1e-6),
            (coarse.max_dilational_drift, fine.max_dilational_drift, 1e-5),
        ];
        for (q, (c, f, tol)) in pairs.into_iter().enumerate() {
            worst[q] = worst[q].max(c);
            if c > tol {
                failures.push(format!("seed {i} quantity {q}: drift {c:.2e}"));
            }
            if c > rounding_floor {
                let gain = c / f;
                worst_gain = worst_gain.min(gain);
                if gain < 3.0 {
                    failures.push(format!("seed {i} quantity {q}: halving gain {gain:.2}"));
                }
            }
        }
    }
    verdict(
        1,
        failures.is_empty(),
        started,
        Duration::from_secs(60),
        &format!(
            "max |dH| {:.2e}, |dptheta| {:.2e}, |dJ - 2Ht| {:.2e}, min halving gain {worst_gain:.2} {failures:?}",
            worst[0], worst[1], worst[2]
        ),
    );
}

/// Observed order from three step sizes `h, h/2, h/4`.
fn observed_order(seed: &PhaseState, method: Method, h: f64, t: f64) -> f64 {
    let at = |h: f64| {
        let cfg = IntegratorConfig {
            method,
            step_size: h,
            max_time: t,
            ..IntegratorConfig::default()
        };
        *run(seed, &cfg).last()
    };
    let (a, b, c) = (at(h), at(h / 2.0), at(h / 4.0));
    (a.distance(&b) / b.distance(&c)).log2()
}

#[test]
fn criterion_02_integrator_order() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let seed = search::seed_from_ptheta(0.164);
    let midpoint = observed_order(&seed, Method::ImplicitMidpoint, 1e-2, 5.0);
    let gauss2 = observed_order(&seed, Method::Gauss2, 4e-2, 5.0);
    let pass = (1.8..=2.2).contains(&midpoint) && (3.7..=4.3).contains(&gauss2);
    verdict(
        2,
        pass,
        started,
        Duration::from_secs(60),
        &format!("midpoint order {midpoint:.3}, gauss2 order {gauss2:.3}"),
    );
}

#[test]
fn criterion_03_dilation_equivariance() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let seed = PhaseState::new(1.0, 0.2, 0.1, 0.05, 0.2, 0.3);
    let h = 1e-3;
    let cfg = IntegratorConfig {
        method: Method::Gauss2,
        step_size: h,
        max_time: 5.0,
        ..IntegratorConfig::default()
    };
    let base = run(&seed, &cfg);
    let mut worst = Vec::new();
    for lambda in [0.5_f64, 2.0] {
        let l2 = lambda * lambda;
        let scaled = run(
            &dilate(&seed, lambda).unwrap(),
            &cfg.with_max_time(5.0 * l2),
        );
        // both runs use step h; compare where their grids meet
        let (stride_base, stride_scaled) = if l2 < 1.0 {
            ((1.0 / l2).round() as usize, 1)
        } else {
            (1, l2.round() as usize)
        };
        let mut dev: f64 = 0.0;
        let mut compared = 0;
        for (i, s) in base.states.iter().enumerate().step_by(stride_base) {
            let k = i / stride_base * stride_scaled;
            let Some(other) = scaled.states.get(k) else {
                break;
            };
            assert!((scaled.times[k] - l2 * base.times[i]).abs() < 1e-9);
            dev = dev.max(dilate(s, lambda).unwrap().distance(other));
            compared += 1;
        }
        assert!(compared > 1000);
        worst.push((lambda, dev));
    }
    let pass = worst.iter().all(|(_, d)| *d <= 1e-6);
    verdict(
        3,
        pass,
        started,
        Duration::from_secs(60),
        &format!("max deviation per lambda {worst:?}"),
    );
}

#[test]
fn criterion_04_sublaplacian() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let axis = [-1.0, -0.55, 0.15, 0.6, 1.05];
    let mut worst: f64 = 0.0;
    for &x in &axis {
        for &y in &axis {
            for &z in &axis {
                worst = worst.max(sublaplacian_of_potential(x, y, z, 1e-3).unwrap().abs());
            }
        }
    }
    verdict(
        4,
        worst <= 1e-5,
        started,
        Duration::from_secs(10),
        &format!("max |(X^2+Y^2)U| {worst:.2e} over 125 points"),
    );
}

#[test]
fn criterion_05_periodic_orbits() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let cfg = SearchConfig::default();
    let mut lines = Vec::new();
    let mut pass = true;
    for (j, k) in [(1u32, 1u32), (1, 2), (2, 3), (1, 3)] {
        let p = if (j, k) == (1, 1) {
            search::locate_unit_rotation(0.01, 1e-4, &cfg.integrator).unwrap()
        } else {
            search::locate_ptheta(j, k, (0.01, 0.4), 1e-4, &cfg.integrator).unwrap()
        };
        let refinement = search::monte_carlo_refine(&search::seed_from_ptheta(p), &cfg).unwrap();
        match refinement.outcome {
            Ok(r) => {
                let ok = (r.rotation.j, r.rotation.k) == (j, k)
                    && r.h.abs() <= 1e-9
                    && r.j.abs() <= 1e-6
                    && r.objective <= 1e-8
                    && r.symmetry_residual <= 1e-4;
                pass &= ok;
                lines.push(format!(
                    "{j}/{k}: found {} ptheta {:.6} |H| {:.1e} |J| {:.1e} objective {:.1e} symmetry {:.1e}",
                    r.rotation, r.ptheta, r.h.abs(), r.j.abs(), r.objective, r.symmetry_residual
                ));
            }
            Err(f) => {
                pass = false;
                lines.push(format!("{j}/{k}: refinement failed, {}", f.reason));
            }
        }
    }
    verdict(
        5,
        pass,
        started,
        Duration::from_secs(600),
        &lines.join("; "),
    );
}

const REFERENCE_ROTATIONS: [(f64, u32, u32); 12] = [
    (3.04e-6, 1, 1),
    (0.060, 5, 6),
    (0.071, 4, 5),
    (0.087, 3, 4),
    (0.113, 2, 3),
    (0.133, 3, 5),
    (0.164, 1, 2),
    (0.199, 2, 5),
    (0.226, 1, 3),
    (0.271, 1, 4),
    (0.307, 1, 5),
    (0.339, 1, 6),
];

#[test]
fn criterion_06_farey_structure() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let grid = search::ptheta_grid(0.0, 0.35, 24);
    let rows = search::farey_scan(&grid, &ScanConfig::default(), Execution::Parallel);
    let found: Vec<(f64, u32, u32)> = rows
        .iter()
        .filter_map(|r| Some((r.orbit_ptheta?, r.rotation?.0, r.rotation?.1)))
        .collect();
    let value = |j: u32, k: u32| j as f64 / k as f64;
    let monotone = found
        .windows(2)
        .all(|w| value(w[1].1, w[1].2) <= value(w[0].1, w[0].2));
    let mut distinct: Vec<(u32, u32)> = found.iter().map(|f| (f.1, f.2)).collect();
    distinct.dedup();
    // every detected value must appear among the references, in their order
    let positions: Vec<Option<usize>> = distinct
        .iter()
        .map(|d| REFERENCE_ROTATIONS.iter().position(|t| (t.1, t.2) == *d))
        .collect();
    let ordered =
        positions.iter().all(Option::is_some) && positions.windows(2).all(|w| w[0] < w[1]);
    let pass = monotone && ordered && distinct.len() >= 5;
    for (p, j, k) in &REFERENCE_ROTATIONS {
        let measured = found.iter().find(|f| (f.1, f.2) == (*j, *k)).map(|f| f.0);
        match measured {
            Some(m) => report(format!(
                "  {j}/{k}: reference p_theta {p:.3}, measured {m:.4}"
            )),
            None => report(format!(
                "  {j}/{k}: reference p_theta {p:.3}, not hit by this grid"
            )),
        }
    }
    verdict(
        6,
        pass,
        started,
        Duration::from_secs(1800),
        &format!(
            "{} grid points, {} classified, {} distinct rotations {:?}, non-increasing {monotone}",
            rows.len(),
            found.len(),
            distinct.len(),
            distinct
                .iter()
                .map(|(j, k)| format!("{j}/{k}"))
                .collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_07_kepler_third_law() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let cfg = SearchConfig::default();
    let p = search::locate_ptheta(1, 2, (0.01, 0.4), 1e-4, &cfg.integrator).unwrap();
    let orbit = search::monte_carlo_refine(&search::seed_from_ptheta(p), &cfg)
        .unwrap()
        .outcome
        .expect("1/2 orbit");
    let fit = exp::kepler3_check(&orbit, &[0.5, 1.0, 2.0, 4.0], &cfg, 1e-6).unwrap();
    let pass = fit.samples.len() == 4 && fit.max_relative_deviation <= 1e-6;
    verdict(
        7,
        pass,
        started,
        Duration::from_secs(120),
        &format!(
            "k {:.6}, max relative deviation {:.2e}, dilates used {}",
            fit.k,
            fit.max_relative_deviation,
            fit.samples.len()
        ),
    );
}

#[test]
fn criterion_08_self_similarity() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let seed = search::zero_energy_seed(0.1, -0.05).unwrap();
    let cfg = IntegratorConfig {
        method: Method::Gauss2,
        step_size: 1e-3,
        max_time: 400.0,
        step_control: StepControl::Dilational,
        ..IntegratorConfig::default()
    };
    let traj = integrate_until_zeros(&seed, &cfg, 7).unwrap();
    let domain = FundamentalDomain::from_trajectory(&traj).unwrap();
    let z = traj.z_crossings();

    let (a, b) = (z[2], z[6]);
    let mut extension: f64 = 0.0;
    for i in 0..=2000 {
        let t = a + (b - a) * i as f64 / 2000.0;
        let direct = traj.state_at(t).unwrap();
        let rebuilt = domain.extend(t).unwrap();
        extension = extension.max(direct.distance(&rebuilt) / direct.norm());
    }
    let l2 = domain.lambda * domain.lambda;
    let scaling = (0..2)
        .map(|n| {
            let ratio = (z[2 * n + 4] - z[2 * n + 2]) / (z[2 * n + 2] - z[2 * n]);
            (ratio / l2 - 1.0).abs()
        })
        .fold(0.0, f64::max);

    let predicted = domain
        .collision_time()
        .expect("J < 0 orbit has a collision time");
    let to_collision = run(
        &seed,
        &IntegratorConfig {
            max_time: 1e4,
            ..cfg
        },
    );
    let observed = to_collision.collision_time().expect("rho collapses");
    let t_col = (observed - predicted).abs() / predicted;

    let pass = extension <= 1e-4 && scaling <= 1e-3 && t_col <= 1e-2;
    verdict(
        8,
        pass,
        started,
        Duration::from_secs(120),
        &format!(
            "J {:.3}, extension error {extension:.2e}, duration ratio error {scaling:.2e}, t_col predicted {predicted:.6} observed {observed:.6} (relative {t_col:.2e})",
            conserved(&seed).j
        ),
    );
}

#[test]
fn criterion_09_stratification() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let cfg = exp::StratificationConfig::default();
    assert_eq!(cfg.per_row, 5);
    let report = exp::stratification_probe(9, &cfg, Execution::Parallel);
    let correct = report
        .samples
        .iter()
        .filter(|s| s.values.get("correct") == Some(&1.0))
        .count();
    let pass = report.samples.len() == 15 && correct == 15;
    verdict(
        9,
        pass,
        started,
        Duration::from_secs(300),
        &format!(
            "{correct}/15 correct (future-collision {}, past-collision {}, recurrent {})",
            report.count("future-collision"),
            report.count("past-collision"),
            report.count("recurrent")
        ),
    );
}

#[test]
fn criterion_10_planar_conics() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let cfg = exp::ConicCheckConfig::default();
    let mut pass = true;
    let mut lines = Vec::new();
    for sign in [
        exp::EnergySign::Negative,
        exp::EnergySign::Zero,
        exp::EnergySign::Positive,
    ] {
        let report = exp::planar_conic_check(sign, &exp::planar_seed(sign), &cfg).unwrap();
        let residual = report.residuals["fit_residual"];
        let ok = report.verdict == exp::Verdict::Consistent && residual <= 1e-6;
        pass &= ok;
        lines.push(format!(
            "{sign:?}: {} residual {residual:.1e}",
            report.samples[0].classification
        ));
    }
    verdict(
        10,
        pass,
        started,
        Duration::from_secs(60),
        &lines.join("; "),
    );
}

#[test]
fn criterion_11_z_axis_family() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let mut pass = true;
    let mut lines = Vec::new();
    for z0 in [1.0, 2.0] {
        let report = exp::z_axis_family_check(z0, 10.0, &IntegratorConfig::default()).unwrap();
        let drift = report.residuals["position_drift"];
        let slope = report.residuals["slope_error"];
        pass &= drift <= 1e-10 && slope <= 1e-8;
        lines.push(format!(
            "z0 {z0}: drift {drift:.1e}, slope error {slope:.1e}"
        ));
    }
    verdict(
        11,
        pass,
        started,
        Duration::from_secs(10),
        &lines.join("; "),
    );
}

#[test]
fn criterion_12_conjecture_probes() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let started = Instant::now();
    let probe = exp::ProbeConfig::default();
    let js = [0.1, 0.2, 0.25, 0.3, 0.35, 0.5];
    let make = |exec: Execution| {
        vec![
            exp::oscillation_probe(12, 12, &probe, exec),
            exp::self_similarity_probe(6, 12, &probe, exec),
            exp::z_axis_bifurcation_probe(&js, 12, &exp::BifurcationConfig::default(), exec),
            exp::bounded_energy_probe(6, 12, &exp::BoundednessConfig::default(), exec),
        ]
    };
    let first = make(Execution::Parallel);
    let second = make(Execution::Sequential);
    let deterministic = first
        .iter()
        .zip(&second)
        .all(|(a, b)| serde_json::to_string(a).unwrap() == serde_json::to_string(b).unwrap());
    let bifurcation = &first[2];
    let threshold = bifurcation.residuals["threshold"];
    let expected = 1.0 / (2.0 * PI.sqrt());
    let reported = bifurcation.residuals.contains_key("band_low")
        && bifurcation.residuals.contains_key("band_high")
        && (bifurcation.residuals["expected"] - expected).abs() < 1e-12;
    let complete = first
        .iter()
        .all(|r| !r.samples.is_empty() && !r.to_text().is_empty());
    let verdicts: Vec<String> = first
        .iter()
        .map(|r| format!("{} {}", r.id, r.verdict))
        .collect();
    verdict(
        12,
        deterministic && reported && complete,
        started,
        Duration::from_secs(600),
        &format!(
            "reports identical across runs {deterministic}; threshold {threshold:.8} vs {expected:.8} band [{:.8}, {:.8}]; {}",
            bifurcation.residuals["band_low"],
            bifurcation.residuals["band_high"],
            verdicts.join(", ")
        ),
    );
}
