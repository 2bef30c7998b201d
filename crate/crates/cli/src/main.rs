//! `khep`: command-line front end for the Kepler-Heisenberg laboratory.
//!
//! Every command stores its output as a catalog entry and prints the entry
//! path. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, Context};
use clap::{ArgGroup, Args, Parser, Subcommand};
use serde_json::json;

use khep::catalog::{Catalog, CatalogEntry, EntryKind};
use khep::dynamics::{conserved, PhaseState};
use khep::experiments::{self as exp, EnergySign, ExperimentReport};
use khep::integrator::{integrate, IntegratorConfig, Method, StepControl};
use khep::io::{self, OverlayRow, Record};
use khep::par::Execution;
use khep::search::{self, OrbitRecord, ScanConfig, SearchConfig};
use khep::selfsim::{integrate_until_zeros, FundamentalDomain};

#[derive(Parser)]
#[command(
    name = "khep",
    version,
    about = "Kepler-Heisenberg numerical laboratory"
)]
struct Cli {
    /// Catalog root; overrides KHEP_CATALOG (default ./catalog).
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    /// Plain-text `key = value` file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run sample-parallel work on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one initial condition and store the trajectory.
    Integrate(IntegrateArgs),
    /// Refine a seed into a periodic orbit.
    Search(SearchArgs),
    /// Scan p_theta and tabulate rotation numbers.
    Scan(ScanArgs),
    /// Build a fundamental domain and compare its extension with integration.
    Selfsim(SelfsimArgs),
    /// Run a law check or conjecture probe.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Inspect stored entries.
    #[command(subcommand)]
    Catalog(CatalogCmd),
}

#[derive(Args, Clone, Default)]
struct IntegratorArgs {
    /// Step size.
    #[arg(long)]
    h: Option<f64>,
    /// midpoint or gauss2.
    #[arg(long)]
    method: Option<String>,
    /// Final time.
    #[arg(long)]
    tmax: Option<f64>,
    /// fixed, dilational or homogeneous.
    #[arg(long)]
    step_control: Option<String>,
    /// Terminate when rho falls below this.
    #[arg(long)]
    collision_rho: Option<f64>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["state", "ptheta", "named"])))]
struct IntegrateArgs {
    /// Explicit state `x,y,z,px,py,pz`.
    #[arg(long, allow_hyphen_values = true)]
    state: Option<String>,
    /// Zero-energy seed at (1,0,0) with this angular momentum.
    #[arg(long, allow_hyphen_values = true)]
    ptheta: Option<f64>,
    /// Dilational momentum for the p_theta seed.
    #[arg(long, allow_hyphen_values = true, requires = "ptheta")]
    j: Option<f64>,
    /// planar-negative, planar-zero, planar-positive or z-axis.
    #[arg(long)]
    named: Option<String>,
    #[command(flatten)]
    integrator: IntegratorArgs,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["state", "ptheta", "target"])))]
struct SearchArgs {
    #[arg(long, allow_hyphen_values = true)]
    state: Option<String>,
    #[arg(long)]
    ptheta: Option<f64>,
    /// Rotation number `j/k`: shoot in p_theta for it, then refine.
    #[arg(long)]
    target: Option<String>,
    /// Shooting tolerance on the seed rotation for --target.
    #[arg(long)]
    locate_tolerance: Option<f64>,
    /// Monte Carlo seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo update steps.
    #[arg(long)]
    steps: Option<usize>,
    #[command(flatten)]
    integrator: IntegratorArgs,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    ptheta_min: Option<f64>,
    #[arg(long)]
    ptheta_max: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Master seed; each grid point derives its own stream.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    farey_order: Option<u32>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["from_orbit", "state", "ptheta"])))]
struct SelfsimArgs {
    /// Catalog hash (or prefix) of an orbit entry.
    #[arg(long)]
    from_orbit: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    state: Option<String>,
    #[arg(long)]
    ptheta: Option<f64>,
    #[arg(long, allow_hyphen_values = true, requires = "ptheta")]
    j: Option<f64>,
    /// Number of domains after the first to reconstruct and compare.
    #[arg(long)]
    extend_domains: Option<usize>,
    #[command(flatten)]
    integrator: IntegratorArgs,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// T^2 / a^4 across dilates of a periodic orbit.
    Kepler3 {
        /// Orbit entry; without it the 1/2 orbit is searched first.
        #[arg(long)]
        orbit: Option<String>,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Conic fit of r(t) on the planar radial submanifold.
    Conic {
        /// negative, zero, positive or all.
        #[arg(long, default_value = "all")]
        sign: String,
    },
    /// Stationary points on the z-axis.
    ZAxis {
        #[arg(long, allow_hyphen_values = true)]
        z0: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Zeros of z on random zero-energy orbits.
    Oscillation {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reconstruction from one fundamental domain on random orbits.
    SelfSimilarity {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Transition between oscillating and monotone z for orbits leaving the z-axis.
    Bifurcation {
        #[arg(long, value_delimiter = ',')]
        j_values: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Observed behaviour against the sign of J.
    Stratification {
        #[arg(long)]
        per_row: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Boundedness of negative-energy orbits.
    Bounded {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum CatalogCmd {
    List {
        #[arg(long)]
        kind: Option<String>,
    },
    Show {
        hash: String,
    },
    Verify {
        hash: String,
    },
}

/// A failure with its exit code.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<khep::KhepError> for Failure {
    fn from(e: khep::KhepError) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Flag, then config file, then default.
struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    fn get<T: FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> std::result::Result<T, Failure> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(text) => text
                .parse()
                .map_err(|_| Failure::Usage(format!("config key {key}: cannot parse {text:?}"))),
            None => Ok(default),
        }
    }

    fn integrator(
        &self,
        args: &IntegratorArgs,
        base: IntegratorConfig,
    ) -> std::result::Result<IntegratorConfig, Failure> {
        let method: String = self.get(
            args.method.clone(),
            "method",
            method_name(base.method).to_string(),
        )?;
        let control: String = self.get(
            args.step_control.clone(),
            "step_control",
            control_name(base.step_control).to_string(),
        )?;
        let cfg = IntegratorConfig {
            step_size: self.get(args.h, "h", base.step_size)?,
            method: Method::from_str(&method).map_err(|e| Failure::Usage(e.to_string()))?,
            tolerance: self.get(None, "tolerance", base.tolerance)?,
            max_iterations: self.get(None, "max_iterations", base.max_iterations)?,
            collision_rho: self.get(args.collision_rho, "collision_rho", base.collision_rho)?,
            max_time: self.get(args.tmax, "tmax", base.max_time)?,
            step_control: StepControl::from_str(&control)
                .map_err(|e| Failure::Usage(e.to_string()))?,
            crossing_tolerance: base.crossing_tolerance,
        };
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::ImplicitMidpoint => "midpoint",
        Method::Gauss2 => "gauss2",
    }
}

fn control_name(c: StepControl) -> &'static str {
    match c {
        StepControl::Fixed => "fixed",
        StepControl::Dilational => "dilational",
        StepControl::Homogeneous => "homogeneous",
    }
}

struct Context_ {
    catalog: Catalog,
    settings: Settings,
    exec: Execution,
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn parse_state(text: &str) -> std::result::Result<PhaseState, Failure> {
    io::parse_state(text).map_err(usage)
}

fn trajectory_files(rows: &[Record]) -> anyhow::Result<Vec<(String, Vec<u8>)>> {
    let mut csv = Vec::new();
    io::write_trajectory_csv(&mut csv, rows)?;
    let mut bin = Vec::new();
    io::write_trajectory_bin(&mut bin, rows)?;
    Ok(vec![
        ("trajectory.csv".into(), csv),
        ("trajectory.khep".into(), bin),
    ])
}

fn announce(entry: &CatalogEntry) {
    println!(
        "stored {} {} at {}",
        entry.kind.as_str(),
        entry.hash,
        entry.path.display()
    );
}

fn cmd_integrate(ctx: &Context_, args: &IntegrateArgs) -> Outcome {
    let seed = if let Some(s) = &args.state {
        parse_state(s)?
    } else if let Some(p) = args.ptheta {
        match args.j {
            Some(j) => search::zero_energy_seed(p, j).map_err(usage)?,
            None => search::seed_from_ptheta(p),
        }
    } else {
        match args.named.as_deref() {
            Some("planar-negative") => exp::planar_seed(EnergySign::Negative),
            Some("planar-zero") => exp::planar_seed(EnergySign::Zero),
            Some("planar-positive") => exp::planar_seed(EnergySign::Positive),
            Some("z-axis") => PhaseState::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
            other => return Err(usage(format!("unknown named seed {other:?}"))),
        }
    };
    if seed.is_singular() {
        return Err(usage("initial state is at the collision singularity"));
    }
    let cfg = ctx
        .settings
        .integrator(&args.integrator, IntegratorConfig::default())?;
    let (traj, failure) = match integrate(&seed, &cfg) {
        Ok(t) => (t, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    let rows = io::records(&traj);
    let c0 = conserved(&seed);
    let summary = format!(
        "trajectory\ninitial   {seed:?}\nH0        {:.6e}\nptheta0   {:.6e}\nJ0        {:.6e}\nsteps     {}\nend time  {}\ntermination {:?}\nmax |dH|      {:.3e}\nmax |dptheta| {:.3e}\nmax |J - J0 - 2 H0 t| {:.3e}\n{}",
        c0.h,
        c0.ptheta,
        c0.j,
        traj.len(),
        traj.end_time(),
        traj.termination,
        traj.drift.max_energy_drift,
        traj.drift.max_ptheta_drift,
        traj.drift.max_dilational_drift,
        failure.as_ref().map(|e| format!("failure   {e}\n")).unwrap_or_default(),
    );
    let params = json!({ "seed": seed, "integrator": cfg, "events": traj.events });
    let entry = ctx.catalog.write(
        EntryKind::Trajectory,
        &params,
        trajectory_files(&rows)?,
        &summary,
    )?;
    print!("{summary}");
    announce(&entry);
    match failure {
        Some(e) => Err(Failure::Runtime(anyhow!(
            "integration failed: {e} (partial data saved)"
        ))),
        None => Ok(()),
    }
}

fn parse_fraction(text: &str) -> std::result::Result<(u32, u32), Failure> {
    let (a, b) = text
        .split_once('/')
        .ok_or_else(|| usage(format!("expected j/k, got {text:?}")))?;
    let j: u32 = a.trim().parse().map_err(usage)?;
    let k: u32 = b.trim().parse().map_err(usage)?;
    if j == 0 || k == 0 || j > k {
        return Err(usage("rotation number must satisfy 0 < j/k <= 1"));
    }
    Ok((j, k))
}

fn search_config(
    ctx: &Context_,
    args: &IntegratorArgs,
) -> std::result::Result<SearchConfig, Failure> {
    let mut cfg = SearchConfig::default();
    cfg.integrator = ctx.settings.integrator(args, cfg.integrator)?;
    cfg.update_steps = ctx.settings.get(None, "update_steps", cfg.update_steps)?;
    cfg.acceptance_threshold =
        ctx.settings
            .get(None, "acceptance_threshold", cfg.acceptance_threshold)?;
    cfg.rng_seed = ctx.settings.get(None, "seed", cfg.rng_seed)?;
    Ok(cfg)
}

fn store_orbit(
    ctx: &Context_,
    record: &OrbitRecord,
    cfg: &SearchConfig,
) -> anyhow::Result<CatalogEntry> {
    let mut icfg = cfg.integrator;
    icfg.max_time = record.period;
    let traj = integrate(&record.initial, &icfg).map_err(khep::KhepError::from)?;
    let mut files = trajectory_files(&io::records(&traj))?;
    files.push(("orbit.json".into(), serde_json::to_vec_pretty(record)?));
    let params = json!({ "search": cfg, "seed_state": record.provenance.seed_state });
    Ok(ctx
        .catalog
        .write(EntryKind::Orbit, &params, files, &record.summary())?)
}

fn cmd_search(ctx: &Context_, args: &SearchArgs) -> Outcome {
    let mut cfg = search_config(ctx, &args.integrator)?;
    cfg.rng_seed = ctx.settings.get(args.seed, "seed", cfg.rng_seed)?;
    cfg.update_steps = ctx
        .settings
        .get(args.steps, "update_steps", cfg.update_steps)?;
    cfg.validate().map_err(usage)?;
    let seed = if let Some(s) = &args.state {
        parse_state(s)?
    } else if let Some(p) = args.ptheta {
        search::seed_from_ptheta(p)
    } else {
        let (j, k) = parse_fraction(args.target.as_deref().unwrap_or_default())?;
        let tol = ctx
            .settings
            .get(args.locate_tolerance, "locate_tolerance", 1e-4)?;
        let p = if (j, k) == (1, 1) {
            search::locate_unit_rotation(0.01, tol, &cfg.integrator)?
        } else {
            search::locate_ptheta(j, k, (0.005, 0.45), tol, &cfg.integrator)?
        };
        println!("located p_theta = {p:.9} for rotation {j}/{k}");
        search::seed_from_ptheta(p)
    };
    let refinement = search::monte_carlo_refine(&seed, &cfg)?;
    match refinement.outcome {
        Ok(record) => {
            let entry = store_orbit(ctx, &record, &cfg)?;
            print!("{}", record.summary());
            announce(&entry);
            Ok(())
        }
        Err(f) => Err(Failure::Runtime(anyhow!(
            "refinement failed after {} accepted updates: {} (best objective {:.3e}, best state {:?})",
            f.accepted_updates,
            f.reason,
            f.best_objective,
            f.best_state
        ))),
    }
}

fn cmd_scan(ctx: &Context_, args: &ScanArgs) -> Outcome {
    let s = &ctx.settings;
    let lo = s.get(args.ptheta_min, "ptheta_min", 0.0)?;
    let hi = s.get(args.ptheta_max, "ptheta_max", 0.35)?;
    let steps = s.get(args.steps, "steps", 24)?;
    if lo.is_nan() || hi.is_nan() || lo >= hi || steps == 0 {
        return Err(usage("need ptheta-min < ptheta-max and steps >= 1"));
    }
    let mut cfg = ScanConfig::default();
    cfg.search = search_config(ctx, &IntegratorArgs::default())?;
    cfg.master_seed = s.get(args.seed, "seed", cfg.master_seed)?;
    cfg.farey_order = s.get(args.farey_order, "farey_order", cfg.farey_order)?;
    let grid = search::ptheta_grid(lo, hi, steps);
    let rows = search::farey_scan(&grid, &cfg, ctx.exec);
    let mut csv = Vec::new();
    io::write_scan_csv(&mut csv, &rows).map_err(anyhow::Error::from)?;
    let mut text = String::from("p_theta   orbit p_theta   j/k\n");
    for r in &rows {
        let rot = r
            .rotation
            .map(|(j, k)| format!("{j}/{k}"))
            .unwrap_or_else(|| "-".into());
        let op = r
            .orbit_ptheta
            .map(|p| format!("{p:.6}"))
            .unwrap_or_else(|| "-".into());
        text.push_str(&format!("{:.5}   {op:>13}   {rot}\n", r.ptheta));
    }
    let params = json!({ "ptheta_min": lo, "ptheta_max": hi, "steps": steps, "scan": cfg });
    let files = vec![
        ("scan.csv".into(), csv),
        (
            "scan.json".into(),
            serde_json::to_vec_pretty(&rows).map_err(anyhow::Error::from)?,
        ),
    ];
    let entry = ctx
        .catalog
        .write(EntryKind::Report, &params, files, &text)?;
    print!("{text}");
    announce(&entry);
    Ok(())
}

fn load_orbit(ctx: &Context_, hash: &str) -> anyhow::Result<OrbitRecord> {
    let entry = ctx.catalog.get(hash)?;
    if entry.kind != EntryKind::Orbit {
        return Err(anyhow!(
            "entry {hash} is a {}, not an orbit",
            entry.kind.as_str()
        ));
    }
    let bytes = ctx.catalog.read(&entry, "orbit.json")?;
    serde_json::from_slice(&bytes).context("reading orbit.json")
}

fn cmd_selfsim(ctx: &Context_, args: &SelfsimArgs) -> Outcome {
    let seed = if let Some(h) = &args.from_orbit {
        load_orbit(ctx, h)?.initial
    } else if let Some(s) = &args.state {
        parse_state(s)?
    } else {
        let p = args.ptheta.expect("source group");
        search::zero_energy_seed(p, args.j.unwrap_or(0.0)).map_err(usage)?
    };
    let extra = ctx.settings.get(args.extend_domains, "extend_domains", 2)?;
    let base = IntegratorConfig {
        method: Method::Gauss2,
        step_control: StepControl::Dilational,
        max_time: 2000.0,
        ..IntegratorConfig::default()
    };
    let cfg = ctx.settings.integrator(&args.integrator, base)?;
    let zeros_needed = 3 + 2 * extra;
    let traj = integrate_until_zeros(&seed, &cfg, zeros_needed)?;
    let domain = FundamentalDomain::from_trajectory(&traj)?;
    let zeros = traj.z_crossings();
    let (a, b) = (zeros[0], zeros[zeros_needed - 1]);
    let mut overlay = Vec::new();
    let n = 200 * (extra + 1);
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        let t = a + (b - a) * i as f64 / n as f64;
        let direct = traj.state_at(t)?;
        let rebuilt = domain.extend(t)?;
        let (k, _) = domain.reduce_time(t)?;
        if t >= domain.t2 {
            worst = worst.max(direct.distance(&rebuilt) / direct.norm());
        }
        overlay.push(OverlayRow {
            t,
            domain: k,
            direct,
            rebuilt,
        });
    }
    let mut domain_csv = Vec::new();
    io::write_domain_csv(&mut domain_csv, &domain).map_err(anyhow::Error::from)?;
    let mut overlay_csv = Vec::new();
    io::write_overlay_csv(&mut overlay_csv, &overlay).map_err(anyhow::Error::from)?;
    let sum = domain.summary();
    let text = format!(
        "fundamental domain\nt0 t1 t2   {:.12} {:.12} {:.12}\nlambda     {:.12}\nphi        {:.12}\nH          {:.3e}\nJ          {:.6e}\ncollision  {}\nextension error over {extra} domain(s): {worst:.3e}\n",
        sum.t0,
        sum.t1,
        sum.t2,
        sum.lambda,
        sum.phi,
        sum.h,
        sum.j,
        sum.collision_time.map(|t| format!("{t:.12}")).unwrap_or_else(|| "none".into()),
    );
    let params = json!({ "seed": seed, "integrator": cfg, "extend_domains": extra });
    let files = vec![
        (
            "domain.json".into(),
            serde_json::to_vec_pretty(&sum).map_err(anyhow::Error::from)?,
        ),
        ("domain.csv".into(), domain_csv),
        ("overlay.csv".into(), overlay_csv),
    ];
    let entry = ctx
        .catalog
        .write(EntryKind::Domain, &params, files, &text)?;
    print!("{text}");
    announce(&entry);
    Ok(())
}

fn store_report(
    ctx: &Context_,
    report: &ExperimentReport,
    extra: Vec<(String, Vec<u8>)>,
) -> Outcome {
    let mut files = extra;
    files.push((
        "report.json".into(),
        serde_json::to_vec_pretty(report).map_err(anyhow::Error::from)?,
    ));
    let text = report.to_text();
    let entry = ctx
        .catalog
        .write(EntryKind::Report, &report.parameters, files, &text)?;
    print!("{text}");
    announce(&entry);
    Ok(())
}

fn cmd_experiment(ctx: &Context_, cmd: &ExperimentCmd) -> Outcome {
    let s = &ctx.settings;
    match cmd {
        ExperimentCmd::Kepler3 { orbit, lambdas } => {
            let cfg = search_config(ctx, &IntegratorArgs::default())?;
            let record = match orbit {
                Some(h) => load_orbit(ctx, h)?,
                None => {
                    let p = search::locate_ptheta(1, 2, (0.05, 0.3), 1e-4, &cfg.integrator)?;
                    search::monte_carlo_refine(&search::seed_from_ptheta(p), &cfg)?
                        .outcome
                        .map_err(|f| anyhow!("could not refine the 1/2 orbit: {}", f.reason))?
                }
            };
            let lambdas = lambdas.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0, 4.0]);
            let fit = exp::kepler3_check(&record, &lambdas, &cfg, 1e-6)?;
            let mut report = exp::kepler3_report(&fit, 1e-6);
            report.parameters["orbit_initial"] = json!(record.initial);
            let files = vec![(
                "kepler3.json".into(),
                serde_json::to_vec_pretty(&fit).map_err(anyhow::Error::from)?,
            )];
            store_report(ctx, &report, files)
        }
        ExperimentCmd::Conic { sign } => {
            let signs = match sign.as_str() {
                "negative" => vec![EnergySign::Negative],
                "zero" => vec![EnergySign::Zero],
                "positive" => vec![EnergySign::Positive],
                "all" => vec![EnergySign::Negative, EnergySign::Zero, EnergySign::Positive],
                other => return Err(usage(format!("unknown energy sign {other:?}"))),
            };
            for sg in signs {
                let report = exp::planar_conic_check(
                    sg,
                    &exp::planar_seed(sg),
                    &exp::ConicCheckConfig::default(),
                )?;
                store_report(ctx, &report, Vec::new())?;
            }
            Ok(())
        }
        ExperimentCmd::ZAxis { z0, duration } => {
            let z0 = s.get(*z0, "z0", 1.0)?;
            if z0 == 0.0 {
                return Err(usage("z0 must be non-zero"));
            }
            let duration = s.get(*duration, "duration", 10.0)?;
            let report = exp::z_axis_family_check(z0, duration, &IntegratorConfig::default())?;
            store_report(ctx, &report, Vec::new())
        }
        ExperimentCmd::Oscillation { samples, seed } => {
            let report = exp::oscillation_probe(
                s.get(*samples, "samples", 40)?,
                s.get(*seed, "seed", 42)?,
                &exp::ProbeConfig::default(),
                ctx.exec,
            );
            store_report(ctx, &report, Vec::new())
        }
        ExperimentCmd::SelfSimilarity { samples, seed } => {
            let report = exp::self_similarity_probe(
                s.get(*samples, "samples", 20)?,
                s.get(*seed, "seed", 42)?,
                &exp::ProbeConfig::default(),
                ctx.exec,
            );
            store_report(ctx, &report, Vec::new())
        }
        ExperimentCmd::Bifurcation { j_values, seed } => {
            let js = j_values
                .clone()
                .unwrap_or_else(|| vec![0.05, 0.1, 0.2, 0.25, 0.3, 0.35, 0.5]);
            let report = exp::z_axis_bifurcation_probe(
                &js,
                s.get(*seed, "seed", 42)?,
                &exp::BifurcationConfig::default(),
                ctx.exec,
            );
            store_report(ctx, &report, Vec::new())
        }
        ExperimentCmd::Stratification { per_row, seed } => {
            let cfg = exp::StratificationConfig {
                per_row: s.get(*per_row, "per_row", 5)?,
                ..Default::default()
            };
            let report = exp::stratification_probe(s.get(*seed, "seed", 42)?, &cfg, ctx.exec);
            store_report(ctx, &report, Vec::new())
        }
        ExperimentCmd::Bounded { samples, seed } => {
            let report = exp::bounded_energy_probe(
                s.get(*samples, "samples", 20)?,
                s.get(*seed, "seed", 42)?,
                &exp::BoundednessConfig::default(),
                ctx.exec,
            );
            store_report(ctx, &report, Vec::new())
        }
    }
}

fn cmd_catalog(ctx: &Context_, cmd: &CatalogCmd) -> Outcome {
    match cmd {
        CatalogCmd::List { kind } => {
            let kind = kind
                .as_deref()
                .map(EntryKind::from_str)
                .transpose()
                .map_err(usage)?;
            for e in ctx.catalog.list(kind)? {
                println!("{:<10} {}  {}", e.kind.as_str(), e.hash, e.files.join(" "));
            }
            Ok(())
        }
        CatalogCmd::Show { hash } => {
            let e = ctx.catalog.get(hash)?;
            println!(
                "{} {}\npath   {}\nfiles  {}",
                e.kind.as_str(),
                e.hash,
                e.path.display(),
                e.files.join(" ")
            );
            println!(
                "params {}",
                serde_json::to_string_pretty(&e.params).map_err(anyhow::Error::from)?
            );
            let summary = ctx.catalog.read(&e, khep::catalog::SUMMARY_FILE)?;
            print!("{}", String::from_utf8_lossy(&summary));
            Ok(())
        }
        CatalogCmd::Verify { hash } => {
            let e = ctx.catalog.get(hash)?;
            if ctx.catalog.verify(&e)? {
                println!("{} ok", e.hash);
                Ok(())
            } else {
                Err(Failure::Runtime(anyhow!(
                    "{}: contents do not match the hash",
                    e.hash
                )))
            }
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            io::parse_config(&text).map_err(usage)?
        }
        None => BTreeMap::new(),
    };
    let catalog = match &cli.catalog {
        Some(p) => Catalog::new(p),
        None => Catalog::from_env("catalog"),
    };
    let ctx = Context_ {
        catalog,
        settings: Settings { file },
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    match &cli.command {
        Command::Integrate(a) => cmd_integrate(&ctx, a),
        Command::Search(a) => cmd_search(&ctx, a),
        Command::Scan(a) => cmd_scan(&ctx, a),
        Command::Selfsim(a) => cmd_selfsim(&ctx, a),
        Command::Experiment(c) => cmd_experiment(&ctx, c),
        Command::Catalog(c) => cmd_catalog(&ctx, c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
