//! Command-line front end: certification, period tables, periodic orbits,
//! plot geometry and raw trajectories.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use volterra_ltm::geometry::{check_linked, plot_data};
use volterra_ltm::report::to_json;
use volterra_ltm::sap::certify;
use volterra_ltm::symbolic::{crossing_count, find_periodic, write_orbit_csv, SwitchedMap, SymbolWord};
use volterra_ltm::twist::{level_grid, monotonicity_scan, write_period_csv};
use volterra_ltm::{Error, PhasePoint, Tolerances, VolterraParams};

use config::Loaded;

#[derive(Parser)]
#[command(name = "volterra-ltm", version, about = "Chaos certificates for the seasonally harvested Volterra system")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Relative integration tolerance (absolute tolerance is a hundredth of it).
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Verify linking, twist bounds and stretching witnesses.
    Certify,
    /// Tabulate the period map as `level,period`.
    PeriodMap {
        /// Rates `a,b,c,d`; taken from the config when omitted.
        #[arg(long, value_delimiter = ',')]
        params: Option<Vec<f64>>,
        /// Scan the harvested field with this rate instead.
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 50)]
        n: usize,
    },
    /// Periodic orbit realizing a word such as `00|10`.
    FindPeriodic {
        #[arg(long)]
        word: String,
        /// Also write the orbit as `cycle,phase,t,x,y`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Level curves, rectangles and the line r.
    PlotData {
        /// Points per level curve.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Raw trajectory of the switched system as `cycle,phase,t,x,y`.
    Orbit {
        #[arg(long)]
        x: f64,
        #[arg(long)]
        y: f64,
        #[arg(long, default_value_t = 1)]
        cycles: usize,
    },
}

/// How a run ends: exit 1 for a negative outcome, 2 for bad input.
enum Failure {
    Outcome(String),
    Input(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Run = Result<(), Failure>;

fn emit(out: &Option<PathBuf>, text: &str) -> Run {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())
                .and_then(|_| so.flush())
                .map_err(|e| Failure::Input(e.to_string()))
        }
    }
}

fn json<T: Serialize>(v: &T) -> Result<String, Failure> {
    to_json(v).map_err(|e| Failure::Input(e.to_string()))
}

fn load(global: &Global) -> Result<Loaded, Failure> {
    let path = global
        .config
        .as_deref()
        .ok_or_else(|| Failure::Input("--config is required".into()))?;
    let raw = config::read(path).map_err(Failure::Input)?;
    Ok(raw.load(global.tol)?)
}

fn cmd_certify(global: &Global) -> Run {
    let cfg = load(global)?;
    let cert = certify(
        &cfg.schedule,
        &cfg.raw.levels,
        &cfg.certify_options(),
        cfg.raw.swap_rectangles,
    )?;
    emit(&global.out, &json(&cert)?)?;
    if cert.certified() {
        Ok(())
    } else {
        let why = cert
            .failure
            .map(|f| format!("not certified at stage {}: {}", f.stage, f.message))
            .unwrap_or_else(|| "not certified".into());
        Err(Failure::Outcome(why))
    }
}

fn cmd_period_map(global: &Global, params: Option<Vec<f64>>, mu: Option<f64>, from: f64, to: f64, n: usize) -> Run {
    let (p, tol) = match params {
        Some(v) => {
            let [a, b, c, d] = v[..] else {
                return Err(Failure::Input(format!("--params needs four rates, got {}", v.len())));
            };
            let tol = Tolerances {
                rel_tol: global.tol.unwrap_or(Tolerances::default().rel_tol),
                abs_tol: global.tol.map_or(Tolerances::default().abs_tol, |t| t * 1e-2),
                ..Tolerances::default()
            };
            (VolterraParams::new(a, b, c, d)?, tol)
        }
        None => {
            let cfg = load(global)?;
            (cfg.schedule.base(), cfg.raw.tolerances)
        }
    };
    tol.validate()?;
    let p = match mu {
        Some(mu) => volterra_ltm::model::harvested(&p, mu)?,
        None => p,
    };
    if n == 0 || !(from.is_finite() && to.is_finite()) || (n > 1 && !(from < to)) {
        return Err(Failure::Input(format!("bad level range [{from}, {to}] with n = {n}")));
    }
    let levels = level_grid(from, to, n);
    let table = monotonicity_scan(&p, &levels, &tol).map_err(|e| match e {
        Error::MonotonicityViolated { .. } => Failure::Outcome(e.to_string()),
        e => Failure::Input(e.to_string()),
    })?;
    let mut buf = Vec::new();
    write_period_csv(&mut buf, &table).map_err(|e| Failure::Input(e.to_string()))?;
    emit(&global.out, &String::from_utf8_lossy(&buf))
}

#[derive(Serialize)]
struct OrbitSummary<'a> {
    word: &'a str,
    period: usize,
    residual: f64,
    iterations: usize,
    anchor: PhasePoint,
    points: &'a [PhasePoint],
    midpoints: &'a [PhasePoint],
    /// Crossings of R2 and R1 in the first cycle.
    crossings: [usize; 2],
}

fn cmd_find_periodic(global: &Global, word: &str, csv: Option<&Path>) -> Run {
    let cfg = load(global)?;
    let word = SymbolWord::parse(word)?;
    word.check(cfg.raw.m1, cfg.raw.m2)?;
    let linked = check_linked(&cfg.schedule, &cfg.raw.levels)?;
    let tol = cfg.raw.tolerances;
    let map = SwitchedMap::new(&linked, cfg.raw.m1, cfg.raw.m2, &tol)?;
    let orbit = find_periodic(&map, &word, &cfg.raw.search).map_err(|e| match e {
        Error::NotFound { .. } | Error::ItineraryDrift { .. } => Failure::Outcome(e.to_string()),
        e => Failure::Input(e.to_string()),
    })?;
    let (c2, c1) = crossing_count(&map, &orbit.anchor, 0)?;
    if let Some(path) = csv {
        let mut buf = Vec::new();
        write_orbit_csv(&mut buf, &cfg.schedule, &orbit.anchor, orbit.period(), &tol)?;
        std::fs::write(path, buf).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    let summary = OrbitSummary {
        word: &orbit.word,
        period: orbit.period(),
        residual: orbit.residual,
        iterations: orbit.iterations,
        anchor: orbit.anchor,
        points: &orbit.points,
        midpoints: &orbit.midpoints,
        crossings: [c2, c1],
    };
    emit(&global.out, &json(&summary)?)
}

fn cmd_plot_data(global: &Global, n: Option<usize>) -> Run {
    let cfg = load(global)?;
    let n = n.unwrap_or(cfg.raw.plot_points);
    let data = plot_data(&cfg.schedule, &cfg.raw.levels, n)?;
    emit(&global.out, &json(&data)?)
}

fn cmd_orbit(global: &Global, x: f64, y: f64, cycles: usize) -> Run {
    let cfg = load(global)?;
    let z = PhasePoint::new(x, y)?;
    let mut buf = Vec::new();
    write_orbit_csv(&mut buf, &cfg.schedule, &z, cycles, &cfg.raw.tolerances)?;
    emit(&global.out, &String::from_utf8_lossy(&buf))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let g = &cli.global;
    let run = match cli.command {
        Command::Certify => cmd_certify(g),
        Command::PeriodMap {
            params,
            mu,
            from,
            to,
            n,
        } => cmd_period_map(g, params, mu, from, to, n),
        Command::FindPeriodic { word, csv } => cmd_find_periodic(g, &word, csv.as_deref()),
        Command::PlotData { n } => cmd_plot_data(g, n),
        Command::Orbit { x, y, cycles } => cmd_orbit(g, x, y, cycles),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Outcome(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(2)
        }
    }
}
