//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::analytics::{count_violations, summarize, violations_vs_fleet, ViolationBand};
use crate::config::{ScenarioConfig, SweepFile};
use crate::io::{self, export_geojson, network_coords, write_step_records, write_sweep_samples};
use crate::pf::{export_voltages, solve_fbs, solve_nr, ExtraLoads, PfOptions, StationPlacement, DEFAULT_VEHICLE_KW};
use crate::sim::{format_timestamp, run_distribution_sweep, run_transmission_scenario};

pub const THREADS_ENV: &str = "GRIDHAUL_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "gridhaul",
    version,
    about = "Heavy-duty EV fleet and grid voltage co-simulation",
    after_help = "Environment:\n  GRIDHAUL_THREADS   worker threads for parallel stages (0 or unset = all cores)\n  RUST_LOG           log filter, e.g. info or gridhaul=debug"
)]
pub struct Cli {
    /// RNG seed; overrides the seed in --config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for files written by the command.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// JSON config for the subcommand; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a data file and print "valid" or the list of problems.
    Validate(ValidateArgs),
    /// Solve one transmission power flow and print bus voltages.
    SolvePf(SolvePfArgs),
    /// Solve one radial feeder with the forward-backward sweep.
    SolveFeeder(SolveFeederArgs),
    /// Run a fleet/grid co-simulation; writes steps.csv and GeoJSON snapshots.
    SimulateTransmission(SimulateArgs),
    /// Monte Carlo station-siting sweep over feeders; writes sweep.csv.
    SweepDistribution(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileKind {
    Network,
    Feeder,
    Road,
    Stations,
    Series,
    Scenario,
    Sweep,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// File to check. A scenario or sweep config may be given with --config instead.
    pub file: Option<PathBuf>,
    /// File type; guessed from the extension and top-level keys when omitted.
    #[arg(long, value_enum)]
    pub kind: Option<FileKind>,
}

#[derive(Debug, Args)]
pub struct SolvePfArgs {
    /// Case file (JSON).
    pub case: PathBuf,
    /// Extra load as BUS:MW[:MVAR]; repeatable.
    #[arg(long = "load", value_name = "BUS:MW[:MVAR]")]
    pub loads: Vec<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Switch PV buses to PQ when reactive limits are hit.
    #[arg(long)]
    pub q_limits: bool,
    /// Value exported for every bus when the solve collapses.
    #[arg(long, default_value_t = crate::pf::DEFAULT_COLLAPSE_SENTINEL)]
    pub sentinel: f64,
}

#[derive(Debug, Args)]
pub struct SolveFeederArgs {
    /// Feeder file (JSON).
    pub feeder: PathBuf,
    /// Station as NODE:VEHICLES; repeatable.
    #[arg(long = "station", value_name = "NODE:VEHICLES")]
    pub stations: Vec<String>,
    /// Charging power per vehicle, kW.
    #[arg(long, default_value_t = DEFAULT_VEHICLE_KW)]
    pub kw: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub arrival_rate: Option<f64>,
    #[arg(long)]
    pub initial_hdevs: Option<u64>,
    #[arg(long)]
    pub duration_hours: Option<f64>,
    #[arg(long)]
    pub dt_hours: Option<f64>,
    /// Skip the per-step GeoJSON snapshots.
    #[arg(long)]
    pub no_geojson: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Feeder files; replace the config's list when given.
    pub feeders: Vec<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Station counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub stations: Option<Vec<usize>>,
    /// Vehicle counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub vehicles: Option<Vec<u32>>,
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(code) => code,
        // a closed pipe on stdout (`| head`) is not worth a complaint
        Err(e)
            if e.chain()
                .filter_map(|c| c.downcast_ref::<std::io::Error>())
                .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            0
        }
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Sizes the global worker pool from the environment. Only the first call
/// in a process takes effect.
fn configure_threads() -> Result<()> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(s) if !s.trim().is_empty() => s
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_ENV} must be a non-negative integer, got {s:?}"))?,
        _ => 0,
    };
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("worker pool already initialised");
    }
    Ok(())
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    configure_threads()?;
    match &cli.command {
        Command::Validate(a) => validate(&cli, a, out),
        Command::SolvePf(a) => solve_pf(&cli, a, out),
        Command::SolveFeeder(a) => solve_feeder(&cli, a, out),
        Command::SimulateTransmission(a) => simulate(&cli, a, out),
        Command::SweepDistribution(a) => sweep(&cli, a, out),
    }
}

fn guess_kind(path: &Path) -> Result<FileKind> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return Ok(FileKind::Series);
    }
    let value: serde_json::Value = io::load_json(path)?;
    let has = |k: &str| value.get(k).is_some();
    Ok(if has("buses") {
        FileKind::Network
    } else if has("lines") {
        FileKind::Feeder
    } else if has("edges") {
        FileKind::Road
    } else if has("road") {
        FileKind::Scenario
    } else if has("feeders") {
        FileKind::Sweep
    } else if has("stations") {
        FileKind::Stations
    } else {
        bail!("{}: cannot tell the file type; pass --kind", path.display())
    })
}

fn validate(cli: &Cli, a: &ValidateArgs, out: &mut dyn Write) -> Result<i32> {
    let path = a
        .file
        .as_ref()
        .or(cli.config.as_ref())
        .context("validate needs a file argument or --config")?;
    let kind = match a.kind {
        Some(k) => k,
        None => guess_kind(path)?,
    };
    let problems: Vec<String> = match kind {
        FileKind::Network => {
            let report = io::load_network(path)?.validate();
            report.iter().map(|v| v.to_string()).collect()
        }
        FileKind::Feeder => {
            let f = io::load_feeder(path)?;
            match crate::pf::order_radial(&f).and_then(|_| f.candidates()) {
                Ok(_) => Vec::new(),
                Err(e) => vec![e.to_string()],
            }
        }
        FileKind::Road => {
            io::load_road(path)?;
            Vec::new()
        }
        FileKind::Stations => {
            let specs = io::load_stations(path)?;
            match crate::stations::StationRegistry::new(&specs) {
                Ok(_) => Vec::new(),
                Err(e) => vec![e.to_string()],
            }
        }
        FileKind::Series => {
            io::load_series(path)?;
            Vec::new()
        }
        FileKind::Scenario => {
            let (cfg, base) = ScenarioConfig::load(path)?;
            match cfg
                .build(&base)
                .map_err(anyhow::Error::from)
                .and_then(|s| Ok(s.validate()?))
            {
                Ok(warnings) => {
                    for w in warnings {
                        writeln!(out, "warning: {w}")?;
                    }
                    Vec::new()
                }
                Err(e) => vec![format!("{e:#}")],
            }
        }
        FileKind::Sweep => {
            let (cfg, base) = SweepFile::load(path)?;
            match cfg.load_feeders(&base).map_err(anyhow::Error::from).and_then(|f| {
                cfg.sweep.validate()?;
                for feeder in &f {
                    crate::pf::order_radial(feeder)?;
                }
                Ok(())
            }) {
                Ok(()) => Vec::new(),
                Err(e) => vec![format!("{e:#}")],
            }
        }
    };
    if problems.is_empty() {
        writeln!(out, "valid")?;
        Ok(0)
    } else {
        for p in &problems {
            writeln!(out, "{p}")?;
        }
        Ok(1)
    }
}

fn parse_fields<const N: usize>(s: &str, what: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() < N - 1 || parts.len() > N {
        bail!("{what}: expected {} colon-separated fields, got {s:?}", N);
    }
    parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("{what}: bad number in {s:?}"))
        })
        .collect()
}

/// Options read from `--config` for the single-solve commands.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SolveConfig {
    pf: Option<PfOptions>,
    band: Option<ViolationBand>,
}

fn load_solve_config(cli: &Cli) -> Result<SolveConfig> {
    Ok(match &cli.config {
        Some(p) => io::load_json(p)?,
        None => SolveConfig::default(),
    })
}

fn solve_pf(cli: &Cli, a: &SolvePfArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_solve_config(cli)?;
    let net = io::load_network(&a.case)?;
    let mut extra = ExtraLoads::new();
    for l in &a.loads {
        let f = parse_fields::<3>(l, "--load")?;
        extra.add(f[0] as u32, f[1], f.get(2).copied().unwrap_or(0.0));
    }
    let mut opts = cfg.pf.unwrap_or_default();
    if let Some(t) = a.tol {
        opts.tol = t;
    }
    if let Some(m) = a.max_iter {
        opts.max_iter = m;
    }
    opts.enforce_q_limits |= a.q_limits;
    let band = cfg.band.unwrap_or_default();
    let sol = solve_nr(&net, &extra, &opts)?;
    let v = export_voltages(&sol, a.sentinel);
    writeln!(out, "converged: {}", sol.converged)?;
    writeln!(out, "collapsed: {}", sol.collapsed)?;
    writeln!(out, "iterations: {}", sol.iterations)?;
    writeln!(out, "mismatch: {:.3e}", sol.mismatch_norm)?;
    writeln!(out, "violations: {}", count_violations(&v, &band).count)?;
    writeln!(out, "bus,v_pu,angle_deg")?;
    for ((bus, vm), va) in net.buses.iter().zip(&v).zip(&sol.v_ang) {
        let ang = if sol.converged { va.to_degrees() } else { 0.0 };
        writeln!(out, "{},{:.12},{:.9}", bus.id, vm, ang)?;
    }
    Ok(0)
}

fn solve_feeder(cli: &Cli, a: &SolveFeederArgs, out: &mut dyn Write) -> Result<i32> {
    let band = load_solve_config(cli)?.band.unwrap_or_default();
    let feeder = io::load_feeder(&a.feeder)?;
    let mut placement = StationPlacement::empty();
    placement.per_vehicle_kw = a.kw;
    for s in &a.stations {
        let f = parse_fields::<2>(s, "--station")?;
        if f.len() != 2 {
            bail!("--station: expected NODE:VEHICLES, got {s:?}");
        }
        placement.station_nodes.push(f[0] as u32);
        placement.vehicles_per_station.push(f[1] as u32);
    }
    let sol = solve_fbs(&feeder, &placement, a.tol, a.max_iter)?;
    writeln!(out, "converged: {}", sol.converged)?;
    writeln!(out, "iterations: {}", sol.iterations)?;
    writeln!(out, "violations: {}", count_violations(&sol.v_mag, &band).count)?;
    writeln!(out, "node,v_pu")?;
    for (n, v) in feeder.nodes.iter().zip(&sol.v_mag) {
        writeln!(out, "{},{:.12}", n.id, v)?;
    }
    Ok(0)
}

fn simulate(cli: &Cli, a: &SimulateArgs, out: &mut dyn Write) -> Result<i32> {
    let path = cli
        .config
        .as_ref()
        .context("simulate-transmission needs --config <scenario.json>")?;
    let (mut cfg, base) = ScenarioConfig::load(path)?;
    if let Some(r) = a.arrival_rate {
        cfg.arrival_rate_per_hour = r;
    }
    if let Some(n) = a.initial_hdevs {
        cfg.initial_hdevs = n;
    }
    if let Some(d) = a.duration_hours {
        cfg.duration_hours = d;
    }
    if let Some(d) = a.dt_hours {
        cfg.dt_hours = d;
    }
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    let scenario = cfg.build(&base)?;
    let records = run_transmission_scenario(&scenario)?;

    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let csv_path = cli.out.join("steps.csv");
    let file = fs::File::create(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    write_step_records(&records, std::io::BufWriter::new(file))?;

    if !a.no_geojson {
        let dir = cli.out.join("geojson");
        fs::create_dir_all(&dir)?;
        let coords = network_coords(&scenario.network);
        let ids = scenario.network.bus_ids();
        for (k, r) in records.iter().enumerate() {
            let mut g = export_geojson(&ids, &r.v_mag, &coords, &scenario.band);
            g["metadata"]["timestamp"] = format_timestamp(&r.timestamp).into();
            g["metadata"]["collapsed"] = r.collapsed.into();
            g["metadata"]["n_charging"] = r.n_charging.into();
            g["metadata"]["n_stranded"] = r.n_stranded.into();
            let p = dir.join(format!("step_{k:05}.geojson"));
            fs::write(&p, serde_json::to_string(&g)?).with_context(|| format!("writing {}", p.display()))?;
        }
    }

    let charging: Vec<f64> = records.iter().map(|r| r.n_charging as f64).collect();
    let violations: Vec<f64> = records.iter().map(|r| r.n_violations as f64).collect();
    writeln!(out, "steps: {}", records.len())?;
    writeln!(
        out,
        "collapsed steps: {}",
        records.iter().filter(|r| r.collapsed).count()
    )?;
    if let (Ok(c), Ok(v)) = (summarize(&charging), summarize(&violations)) {
        writeln!(
            out,
            "charging: min {} median {} max {} mean {:.2} std {:.2}",
            c.minimum, c.median, c.maximum, c.mean, c.std_dev
        )?;
        writeln!(
            out,
            "violations: min {} median {} max {} mean {:.2} std {:.2}",
            v.minimum, v.median, v.maximum, v.mean, v.std_dev
        )?;
    }
    if let Ok(bins) = violations_vs_fleet(&records, 10) {
        writeln!(out, "n_charging_bin,median_violations,max_violations")?;
        for b in bins {
            writeln!(
                out,
                "{}-{},{},{}",
                b.lower,
                b.upper - 1,
                b.median_violations,
                b.max_violations
            )?;
        }
    }
    writeln!(out, "wrote {}", csv_path.display())?;
    Ok(0)
}

fn sweep(cli: &Cli, a: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let (mut file, base) = match &cli.config {
        Some(p) => SweepFile::load(p)?,
        None => (
            SweepFile {
                feeders: Vec::new(),
                sweep: Default::default(),
            },
            PathBuf::from("."),
        ),
    };
    let feeders = if a.feeders.is_empty() {
        file.load_feeders(&base)?
    } else {
        a.feeders
            .iter()
            .map(|p| io::load_feeder(p))
            .collect::<Result<Vec<_>, _>>()?
    };
    if let Some(s) = a.samples {
        file.sweep.samples_per_cell = s;
    }
    if let Some(s) = &a.stations {
        file.sweep.station_counts = s.clone();
    }
    if let Some(v) = &a.vehicles {
        file.sweep.vehicle_grid = v.clone();
    }
    if let Some(s) = cli.seed {
        file.sweep.master_seed = s;
    }
    let result = run_distribution_sweep(&feeders, &file.sweep)?;
    fs::create_dir_all(&cli.out)?;
    let csv_path = cli.out.join("sweep.csv");
    let f = fs::File::create(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    write_sweep_samples(&result.samples, std::io::BufWriter::new(f))?;
    for s in &result.skipped {
        writeln!(
            out,
            "skipped {} stations={} vehicles={}: {}",
            s.feeder, s.n_stations, s.n_vehicles, s.reason
        )?;
    }
    writeln!(out, "feeder,n_stations,n_vehicles,median_violations,max_violations")?;
    for feeder in &feeders {
        for &ns in &file.sweep.station_counts {
            for &nv in &file.sweep.vehicle_grid {
                let v: Vec<f64> = result
                    .cell(&feeder.name, ns, nv)
                    .map(|s| s.n_violations as f64)
                    .collect();
                if let Ok(st) = summarize(&v) {
                    writeln!(out, "{},{},{},{},{}", feeder.name, ns, nv, st.median, st.maximum)?;
                }
            }
        }
    }
    writeln!(out, "wrote {}", csv_path.display())?;
    Ok(0)
}
