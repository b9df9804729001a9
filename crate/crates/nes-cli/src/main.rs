//! `nes`: calibrate, price and inspect the NES model from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid input, 4 numerical
//! non-convergence, 1 output failure. Errors go to stderr as one JSON object.

use clap::{Args, Parser, Subcommand, ValueEnum};
use nes_cli::io::{self, parse_grid, parse_list, read_market, read_params, read_quotes, Sink, Table};
use nes_cli::CliError;
use nes_core::dynsim::{mean_var, simulate_paths, SimConfig};
use nes_core::nesdist::{real_density, risk_neutral_density, RateSpec};
use nes_core::pricing::{implied_vol, NesPricer};
use nes_core::{
    calibrate, escape_rate, first_excited_state, implied_potential_report, CalibConfig, OptionKind, Potential,
};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "nes", version, about = "Non-equilibrium skew model toolkit")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for output files and manifest.json; without it the main
    /// table is printed to stdout.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibrate to a quote file.
    Calibrate(CalibrateArgs),
    /// Price European options.
    Price(PriceArgs),
    /// Real-measure or risk-neutral density of y_T.
    Density(DensityArgs),
    /// Ground state, stationary density and potential on a grid.
    Potential(PotentialArgs),
    /// Escape rate lambda / h^2 as a function of y0.
    Kramers(KramersArgs),
    /// Partner ground state, first excited state and G1 on a grid.
    Susy(SusyArgs),
    /// Euler-Maruyama terminal samples.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// CSV with header expiry_T,strike,kind,mid[,implied_vol].
    #[arg(long)]
    quotes: PathBuf,
    /// Market JSON {spot, r_f, q_div, y0} (file or inline).
    #[arg(long)]
    market: String,
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Calibration config JSON (file or inline).
    #[arg(long)]
    config: Option<String>,
}

#[derive(Args, Debug)]
struct PriceArgs {
    #[arg(long)]
    params: String,
    #[arg(long)]
    market: String,
    /// Comma-separated strikes.
    #[arg(long)]
    strikes: String,
    /// Expiry in years; overrides the params horizon.
    #[arg(long = "T")]
    t: f64,
    #[arg(long, value_enum)]
    kind: KindArg,
}

#[derive(Args, Debug)]
struct DensityArgs {
    #[arg(long)]
    params: String,
    #[arg(long, value_enum)]
    measure: MeasureArg,
    /// Current log-return (real measure).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    y0: f64,
    /// Grid lo:hi:n.
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    /// Market JSON, required for the risk-neutral measure.
    #[arg(long)]
    market: Option<String>,
    /// Absorbing level for the relaxation rate (required for single wells).
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    /// Fixed relaxation rate instead of the passage-time rate.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct PotentialArgs {
    #[arg(long)]
    params: String,
    /// Grid lo:hi:n.
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
}

#[derive(Args, Debug)]
struct KramersArgs {
    #[arg(long)]
    params: String,
    /// Grid of starting points lo:hi:n.
    #[arg(long = "y0-grid", allow_hyphen_values = true)]
    y0_grid: String,
    /// Absorbing level; defaults to the global minimum of a double well.
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct SusyArgs {
    #[arg(long)]
    params: String,
    /// Grid lo:hi:n (default: 401 points over the partner window).
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    params: String,
    /// Simulation JSON {dt, n_paths, horizon, seed, y0} (file or inline).
    #[arg(long)]
    sim: String,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum KindArg {
    Call,
    Put,
}

impl From<KindArg> for OptionKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Call => OptionKind::Call,
            KindArg::Put => OptionKind::Put,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MeasureArg {
    Real,
    Rn,
}

/// `NES_SEED` overrides any configured seed.
fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("NES_SEED") {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::Validation(format!("NES_SEED must be a nonnegative integer, got {s}"))),
        Err(_) => Ok(None),
    }
}

fn run_calibrate(a: &CalibrateArgs, sink: &mut Sink) -> Result<(serde_json::Value, Option<u64>), CliError> {
    let (market, y0, market_raw) = read_market(&a.market)?;
    let kind: OptionKind = a.kind.into();
    let quotes: Vec<_> = read_quotes(&a.quotes)?.into_iter().filter(|q| q.kind == kind).collect();
    if quotes.is_empty() {
        return Err(CliError::Validation(format!("no {kind} quotes in {}", a.quotes.display())));
    }
    let (mut cfg, cfg_raw) = match &a.config {
        Some(c) => {
            let (cfg, raw): (CalibConfig, _) = io::read_json_arg(c, "config")?;
            (cfg, raw)
        }
        None => (CalibConfig::default(), serde_json::Value::Null),
    };
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    let r = calibrate(&quotes, &market, &cfg)?;
    let report = implied_potential_report(&r.params, y0, 401)?;
    let mut t = Table::new(&["y", "V"]);
    for (y, v) in report.y.iter().zip(&report.v) {
        t.push(vec![*y, *v]);
    }
    sink.emit_json("calibration.json", &json!({ "result": r, "implied_potential": {
        "critical_points": report.critical_points,
        "double_well": report.double_well,
        "global_min": report.global_min,
        "y0": report.y0,
        "regime": report.regime,
    }}), true)?;
    sink.emit("implied_potential.csv", &t.to_csv(), false)?;
    let inputs = json!({
        "quotes": a.quotes.display().to_string(),
        "market": market_raw,
        "kind": kind,
        "config": cfg_raw,
        "resolved_config": cfg,
    });
    Ok((inputs, Some(cfg.seed)))
}

fn run_price(a: &PriceArgs, sink: &mut Sink) -> Result<serde_json::Value, CliError> {
    let (params, raw) = read_params(&a.params)?;
    let (market, _, market_raw) = read_market(&a.market)?;
    if !(a.t > 0.0 && a.t.is_finite()) {
        return Err(CliError::Validation(format!("T must be positive, got {}", a.t)));
    }
    let strikes = parse_list(&a.strikes)?;
    let kind: OptionKind = a.kind.into();
    let pr = NesPricer::new(&params.with_t(a.t), &market)?;
    let mut t = Table::new(&["K", "price", "implied_vol"]);
    for &k in &strikes {
        if !(k > 0.0 && k.is_finite()) {
            return Err(CliError::Validation(format!("strike must be positive, got {k}")));
        }
        let p = pr.price(k, kind);
        // prices outside the no-arbitrage band have no implied volatility
        let iv = implied_vol(p, market.spot, k, a.t, market.r_f, market.q_div, kind).unwrap_or(f64::NAN);
        t.push(vec![k, p, iv]);
    }
    sink.emit("prices.csv", &t.to_csv(), true)?;
    sink.emit_json("xi.json", &json!({ "xi_prime": pr.xi_prime, "dividends": pr.dividends.q }), false)?;
    Ok(json!({ "params": raw, "market": market_raw, "strikes": strikes, "T": a.t, "kind": kind }))
}

fn run_density(a: &DensityArgs, sink: &mut Sink) -> Result<serde_json::Value, CliError> {
    let (params, raw) = read_params(&a.params)?;
    let grid = parse_grid(&a.grid)?;
    let (density, market_raw) = match a.measure {
        MeasureArg::Real => {
            let rate = match a.lambda {
                Some(l) => RateSpec::Fixed(l),
                None => RateSpec::Passage { threshold: a.threshold },
            };
            (real_density(&params, a.y0, rate)?, serde_json::Value::Null)
        }
        MeasureArg::Rn => {
            let m = a.market.as_deref().ok_or_else(|| CliError::Validation("--market is required for --measure rn".into()))?;
            let (market, _, mraw) = read_market(m)?;
            (risk_neutral_density(&params, &market)?, mraw)
        }
    };
    let mut t = Table::new(&["y", "pdf"]);
    for &y in &grid {
        t.push(vec![y, density.pdf(y)]);
    }
    sink.emit("density.csv", &t.to_csv(), true)?;
    sink.emit_json("density.json", &density, false)?;
    Ok(json!({
        "params": raw,
        "measure": format!("{:?}", a.measure).to_lowercase(),
        "y0": a.y0,
        "grid": a.grid,
        "market": market_raw,
        "threshold": a.threshold,
        "lambda": a.lambda,
    }))
}

fn run_potential(a: &PotentialArgs, sink: &mut Sink) -> Result<serde_json::Value, CliError> {
    let (params, raw) = read_params(&a.params)?;
    let grid = parse_grid(&a.grid)?;
    let pot = Potential::new(&params)?;
    let g = pot.ground();
    let mut t = Table::new(&["y", "psi0", "psi0_sq", "V"]);
    for &y in &grid {
        let psi = g.psi(y);
        t.push(vec![y, psi, psi * psi, pot.value(y)]);
    }
    sink.emit("potential.csv", &t.to_csv(), true)?;
    sink.emit_json(
        "shape.json",
        &json!({ "shape": pot.shape(), "critical_points": pot.critical_points(), "global_min": pot.global_min() }),
        false,
    )?;
    Ok(json!({ "params": raw, "grid": a.grid }))
}

fn run_kramers(a: &KramersArgs, sink: &mut Sink) -> Result<serde_json::Value, CliError> {
    let (params, raw) = read_params(&a.params)?;
    let grid = parse_grid(&a.y0_grid)?;
    let h2 = params.h * params.h;
    let mut t = Table::new(&["y0", "lambda_over_h2", "mean_passage_time"]);
    for &y0 in &grid {
        let r = escape_rate(&params, y0, a.threshold)?;
        t.push(vec![y0, r.lambda / h2, r.mean_passage_time]);
    }
    sink.emit("kramers.csv", &t.to_csv(), true)?;
    Ok(json!({ "params": raw, "y0_grid": a.y0_grid, "threshold": a.threshold }))
}

fn run_susy(a: &SusyArgs, sink: &mut Sink) -> Result<serde_json::Value, CliError> {
    let (params, raw) = read_params(&a.params)?;
    let psi1 = first_excited_state(&params)?;
    let lpt = psi1.lpt();
    let pg = lpt.partner();
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => {
            let (lo, hi) = pg.window();
            parse_grid(&format!("{lo}:{hi}:401"))?
        }
    };
    let g = pg.potential().ground();
    let mut t = Table::new(&["y", "psi0", "psi_plus", "psi1", "G1"]);
    for &y in &grid {
        t.push(vec![y, g.psi(y), pg.psi_plus(y), psi1.value(y), lpt.g1(y).1]);
    }
    sink.emit("susy.csv", &t.to_csv(), true)?;
    sink.emit_json(
        "susy.json",
        &json!({
            "i_plus": pg.i_plus,
            "i_minus": pg.i_minus,
            "alpha": pg.alpha,
            "e1_bar": lpt.e1_bar,
            "e1_bar_gaussian": lpt.e1_bar_gaussian,
            "e1": lpt.e1,
            "lambda": lpt.lambda(),
            "warning": psi1.warning,
        }),
        false,
    )?;
    Ok(json!({ "params": raw, "grid": a.grid }))
}

fn run_simulate(a: &SimulateArgs, sink: &mut Sink) -> Result<(serde_json::Value, Option<u64>), CliError> {
    let (params, raw) = read_params(&a.params)?;
    let (mut cfg, sim_raw): (SimConfig, _) = io::read_json_arg(&a.sim, "sim")?;
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    let ys = simulate_paths(&params, &cfg)?;
    let mut t = Table::new(&["path", "y_T"]);
    for (i, y) in ys.iter().enumerate() {
        t.push(vec![i as f64, *y]);
    }
    let (mean, var) = mean_var(&ys);
    let pot = Potential::new(&params)?;
    let (smean, svar, _, _) = pot.stationary().mixture.central_moments();
    sink.emit("terminal.csv", &t.to_csv(), true)?;
    sink.emit_json(
        "summary.json",
        &json!({
            "n_paths": cfg.n_paths,
            "steps": cfg.steps().0,
            "mean": mean,
            "variance": var,
            "stationary_mean": smean,
            "stationary_variance": svar,
        }),
        false,
    )?;
    Ok((json!({ "params": raw, "sim": sim_raw, "resolved_sim": cfg }), Some(cfg.seed)))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    }
    let mut sink = Sink::new(cli.out_dir.clone())?;
    let (name, inputs, seed) = match &cli.command {
        Command::Calibrate(a) => {
            let (i, s) = run_calibrate(a, &mut sink)?;
            ("calibrate", i, s)
        }
        Command::Price(a) => ("price", run_price(a, &mut sink)?, None),
        Command::Density(a) => ("density", run_density(a, &mut sink)?, None),
        Command::Potential(a) => ("potential", run_potential(a, &mut sink)?, None),
        Command::Kramers(a) => ("kramers", run_kramers(a, &mut sink)?, None),
        Command::Susy(a) => ("susy", run_susy(a, &mut sink)?, None),
        Command::Simulate(a) => {
            let (i, s) = run_simulate(a, &mut sink)?;
            ("simulate", i, s)
        }
    };
    sink.finish(name, inputs, seed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return report(CliError::Usage(e.to_string().trim().to_string()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    eprintln!("{}", json!({ "error": e.kind(), "message": e.message(), "exit_code": e.code() }));
    ExitCode::from(e.code())
}
