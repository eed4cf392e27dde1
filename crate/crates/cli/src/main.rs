//! `ofdm-alloc`: generate channel instances and run the allocation solvers.
//!
//! Exit codes: 0 success or feasible, 1 usage or I/O error, 2 infeasible,
//! 3 solver did not converge.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use ofdm_alloc::capacity::{
    bc_to_mac_powers, mac_rates, mac_to_bc_powers, rates_to_powers, AllocationFile, RateAllocation,
};
use ofdm_alloc::channel::{
    gains_from_taps, generate_random_channel, instance_to_string, load_instance, taps_instance_to_string,
};
use ofdm_alloc::minpower::{carrier_orders, extract_decoding_orders, solve_minpower, DEFAULT_MAX_SWEEPS, DEFAULT_TOL};
use ofdm_alloc::minrates::{
    check_feasibility, recompute_kkt, solve_minrates_waterfill, solve_minrates_weights, MinRatesProblem,
    ProblemFile, DEFAULT_POWER_TOL, DEFAULT_RATE_TOL,
};
use ofdm_alloc::oracle::{grid_minpower, grid_wsr, GridSpec};
use ofdm_alloc::report::bps_hz_to_nats;
use ofdm_alloc::wsr::{solve_wsr, DEFAULT_PRICE_TOL};
use ofdm_alloc::{ChannelGains, Error, PowerAllocation, Side, SolverReport};

const EXIT_USAGE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

/// Stationarity and slackness bounds used by `certify`.
const CERTIFY_STATIONARITY: f64 = 1e-6;
const CERTIFY_SLACKNESS: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "ofdm-alloc", version, about = "Multiuser OFDM power and rate allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random frequency-selective channel instance.
    Gen(GenArgs),
    /// Maximize the weighted sum rate under a sum-power budget.
    SolveWsr(WsrArgs),
    /// Minimize the sum power subject to per-user rates.
    SolveMinpower(MinPowerArgs),
    /// Maximize the weighted sum rate subject to minimum rates.
    SolveMinrates(MinRatesArgs),
    /// Decide whether rate requirements fit a power budget.
    Check(CheckArgs),
    /// Solve the minimum-rates problem over a grid of SNR values.
    SweepSnr(SweepArgs),
    /// Convert an allocation between uplink and downlink powers.
    Transform(TransformArgs),
    /// Recompute the optimality residuals and orders of a saved report.
    Certify(CertifyArgs),
    /// Brute-force grid reference for tiny instances.
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    users: usize,
    #[arg(long)]
    carriers: usize,
    #[arg(long, default_value_t = 1)]
    taps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise power per carrier.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Store the time-domain taps instead of the carrier gains.
    #[arg(long)]
    keep_taps: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct BudgetArgs {
    /// Total power budget.
    #[arg(long)]
    power: Option<f64>,
    /// Budget as SNR in dB: power = K·σ²·10^(dB/10).
    #[arg(long, allow_negative_numbers = true)]
    snr_db: Option<f64>,
}

impl BudgetArgs {
    fn resolve(&self, gains: &ChannelGains) -> f64 {
        match (self.power, self.snr_db) {
            (Some(p), _) => p,
            (None, Some(db)) => gains.budget_for_snr_db(db),
            (None, None) => unreachable!("clap enforces one budget flag"),
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Report file; the report goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-iteration trace as CSV.
    #[arg(long)]
    trace_csv: Option<PathBuf>,
    /// Keep the wall-clock time in the report (makes output nondeterministic).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct WsrArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    weights: Vec<f64>,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Relative tolerance of the power-price search.
    #[arg(long, default_value_t = DEFAULT_PRICE_TOL)]
    tol: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct MinPowerArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Required rates in bits/s/Hz.
    #[arg(long, value_delimiter = ',', required = true)]
    rates: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_SWEEPS)]
    max_sweeps: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algorithm {
    Weights,
    Waterfill,
    Both,
}

#[derive(Args)]
struct MinRatesArgs {
    /// Problem file bundling instance, weights, rates and budget.
    #[arg(long, conflicts_with_all = ["instance", "weights", "rates", "power", "snr_db", "constrained"])]
    problem: Option<PathBuf>,
    #[arg(long, required_unless_present = "problem")]
    instance: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required_unless_present = "problem")]
    weights: Vec<f64>,
    /// Minimum rates in bits/s/Hz.
    #[arg(long, value_delimiter = ',', required_unless_present = "problem")]
    rates: Vec<f64>,
    #[arg(long, conflicts_with = "snr_db")]
    power: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    snr_db: Option<f64>,
    /// One-based users whose rate constraint is enforced (default: all).
    #[arg(long, value_delimiter = ',')]
    constrained: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "both")]
    algorithm: Algorithm,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    rates: Vec<f64>,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    weights: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    rates: Vec<f64>,
    #[arg(long, allow_negative_numbers = true)]
    from: f64,
    #[arg(long, allow_negative_numbers = true)]
    to: f64,
    #[arg(long)]
    steps: usize,
    #[arg(long, value_enum, default_value = "waterfill")]
    algorithm: SweepAlgorithm,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepAlgorithm {
    Weights,
    Waterfill,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Direction {
    Mac,
    Bc,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Allocation file with `side`, `powers` or `rates`, and optional `order`.
    #[arg(long)]
    allocation: PathBuf,
    #[arg(long, value_enum)]
    to: Direction,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Minimum-power reference for these rates (bits/s/Hz).
    #[arg(long, value_delimiter = ',', conflicts_with = "weights")]
    rates: Option<Vec<f64>>,
    /// Weighted-sum-rate reference for these weights.
    #[arg(long, value_delimiter = ',', requires = "power")]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    power: Option<f64>,
    #[arg(long, default_value_t = 201)]
    resolution: usize,
    #[arg(long, default_value_t = 6)]
    zoom: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let infeasible = err.chain().any(|cause| {
                matches!(
                    cause.downcast_ref::<Error>(),
                    Some(Error::Infeasible { .. } | Error::UnreachableUser { .. } | Error::Bracket { .. })
                )
            });
            ExitCode::from(if infeasible { EXIT_INFEASIBLE } else { EXIT_USAGE })
        }
    }
}

fn run(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Gen(args) => generate(args),
        Command::SolveWsr(args) => wsr(args),
        Command::SolveMinpower(args) => minpower(args),
        Command::SolveMinrates(args) => minrates(args),
        Command::Check(args) => check(args),
        Command::SweepSnr(args) => sweep(args),
        Command::Transform(args) => transform(args),
        Command::Certify(args) => certify(args),
        Command::Oracle(args) => oracle(args),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn instance(path: &Path) -> anyhow::Result<ChannelGains> {
    load_instance(path).with_context(|| format!("loading instance {}", path.display()))
}

fn to_nats(bits: &[f64], carriers: usize) -> Vec<f64> {
    bits.iter().map(|&b| bps_hz_to_nats(b, carriers)).collect()
}

fn emit(mut report: SolverReport, output: &OutputArgs) -> anyhow::Result<u8> {
    if !output.timing {
        report.wall_time_s = None;
    }
    write_output(output.out.as_deref(), &report.to_json())?;
    if let Some(path) = &output.trace_csv {
        fs::write(path, report.trace_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if output.out.is_some() {
        println!("{}", summary(&report));
    }
    Ok(exit_code(&report))
}

fn exit_code(report: &SolverReport) -> u8 {
    if report.converged {
        0
    } else {
        eprintln!("warning: solver did not converge after {} iterations", report.iterations);
        EXIT_NOT_CONVERGED
    }
}

fn summary(report: &SolverReport) -> String {
    let rates: Vec<String> = report.user_rates_bps_hz.iter().map(|r| format!("{r:.6}")).collect();
    format!(
        "converged={} iterations={} sum_power={} objective={} rates_bps_hz=[{}] priority={}",
        report.converged,
        report.iterations,
        report.sum_power,
        report.objective,
        rates.join(", "),
        report.orders.priority_label()
    )
}

fn generate(args: GenArgs) -> anyhow::Result<u8> {
    let taps = generate_random_channel(args.users, args.carriers, args.taps, args.seed, args.noise)?;
    let text = if args.keep_taps {
        taps_instance_to_string(&taps)
    } else {
        instance_to_string(&gains_from_taps(&taps))
    };
    write_output(args.out.as_deref(), &text)?;
    Ok(0)
}

fn wsr(args: WsrArgs) -> anyhow::Result<u8> {
    let gains = instance(&args.instance)?;
    let budget = args.budget.resolve(&gains);
    emit(solve_wsr(&gains, &args.weights, budget, args.tol)?, &args.output)
}

fn minpower(args: MinPowerArgs) -> anyhow::Result<u8> {
    let gains = instance(&args.instance)?;
    let requirements = to_nats(&args.rates, gains.carriers());
    emit(solve_minpower(&gains, &requirements, args.tol, args.max_sweeps)?, &args.output)
}

fn minrates_problem(args: &MinRatesArgs) -> anyhow::Result<MinRatesProblem> {
    if let Some(path) = &args.problem {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        return Ok(ProblemFile::parse(&text)?.into_problem(base)?);
    }
    let gains = instance(args.instance.as_deref().expect("clap requires --instance"))?;
    let budget = match (args.power, args.snr_db) {
        (Some(p), _) => p,
        (None, Some(db)) => gains.budget_for_snr_db(db),
        (None, None) => bail!("one of --power or --snr-db is required"),
    };
    let requirements = to_nats(&args.rates, gains.carriers());
    let problem = MinRatesProblem::new(gains, args.weights.clone(), requirements, budget)?;
    Ok(match &args.constrained {
        None => problem,
        Some(users) => {
            let zero_based = users
                .iter()
                .map(|&u| u.checked_sub(1).context("--constrained takes one-based user indices"))
                .collect::<anyhow::Result<Vec<_>>>()?;
            problem.restrict_to(&zero_based)?
        }
    })
}

fn minrates(args: MinRatesArgs) -> anyhow::Result<u8> {
    let problem = minrates_problem(&args)?;
    match args.algorithm {
        Algorithm::Weights => emit(solve_minrates_weights(&problem, DEFAULT_RATE_TOL)?, &args.output),
        Algorithm::Waterfill => emit(solve_minrates_waterfill(&problem, DEFAULT_POWER_TOL)?, &args.output),
        Algorithm::Both => {
            let (weights, waterfill) = rayon::join(
                || solve_minrates_weights(&problem, DEFAULT_RATE_TOL),
                || solve_minrates_waterfill(&problem, DEFAULT_POWER_TOL),
            );
            let (mut weights, mut waterfill) = (weights?, waterfill?);
            if !args.output.timing {
                weights.wall_time_s = None;
                waterfill.wall_time_s = None;
            }
            let difference = weights
                .user_rates_bps_hz
                .iter()
                .zip(&waterfill.user_rates_bps_hz)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let doc = json!({
                "schema": "ofdm-alloc.comparison/1",
                "max_rate_difference_bps_hz": difference,
                "weights": weights,
                "waterfill": waterfill,
            });
            let text = serde_json::to_string_pretty(&doc)? + "\n";
            write_output(args.output.out.as_deref(), &text)?;
            if let Some(path) = &args.output.trace_csv {
                fs::write(path, weights.trace_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            if args.output.out.is_some() {
                println!("weights:   {}", summary(&weights));
                println!("waterfill: {}", summary(&waterfill));
                println!("max rate difference (bits/s/Hz): {difference:e}");
            }
            Ok(exit_code(&weights).max(exit_code(&waterfill)))
        }
    }
}

fn check(args: CheckArgs) -> anyhow::Result<u8> {
    let gains = instance(&args.instance)?;
    let budget = args.budget.resolve(&gains);
    let requirements = to_nats(&args.rates, gains.carriers());
    let report = check_feasibility(&gains, &requirements, budget)?;
    println!("{}", report.status);
    println!("p_min={}", report.p_min);
    println!("budget={}", report.budget);
    Ok(if report.feasible() { 0 } else { EXIT_INFEASIBLE })
}

/// SNR grid from `from` to `to` inclusive.
fn snr_grid(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![from],
        n => (0..n).map(|i| from + (to - from) * i as f64 / (n - 1) as f64).collect(),
    }
}

enum SweepRow {
    Solved(Box<SolverReport>),
    Infeasible,
}

fn sweep(args: SweepArgs) -> anyhow::Result<u8> {
    if args.steps == 0 {
        bail!("--steps must be at least 1");
    }
    let gains = instance(&args.instance)?;
    let users = gains.users();
    let requirements = to_nats(&args.rates, gains.carriers());
    // Validate dimensions once so that per-step errors mean infeasibility.
    MinRatesProblem::new(gains.clone(), args.weights.clone(), requirements.clone(), 1.0)?;
    let grid = snr_grid(args.from, args.to, args.steps);
    let rows: Vec<anyhow::Result<SweepRow>> = grid
        .par_iter()
        .map(|&db| {
            let budget = gains.budget_for_snr_db(db);
            let problem = MinRatesProblem::new(gains.clone(), args.weights.clone(), requirements.clone(), budget)?;
            let solved = match args.algorithm {
                SweepAlgorithm::Weights => solve_minrates_weights(&problem, DEFAULT_RATE_TOL),
                SweepAlgorithm::Waterfill => solve_minrates_waterfill(&problem, DEFAULT_POWER_TOL),
            };
            match solved {
                Ok(report) => Ok(SweepRow::Solved(Box::new(report))),
                Err(Error::Infeasible { .. } | Error::UnreachableUser { .. } | Error::Bracket { .. }) => {
                    Ok(SweepRow::Infeasible)
                }
                Err(err) => Err(err.into()),
            }
        })
        .collect();

    let mut csv = String::from("snr_db");
    for m in 1..=users {
        csv.push_str(&format!(",R_{m}"));
    }
    for m in 1..=users {
        csv.push_str(&format!(",mustar_{m}"));
    }
    csv.push_str(",lambda,order,status\n");
    let mut all_converged = true;
    for (db, row) in grid.iter().zip(rows) {
        csv.push_str(&db.to_string());
        match row? {
            SweepRow::Solved(report) => {
                for r in &report.user_rates_bps_hz {
                    csv.push_str(&format!(",{r}"));
                }
                let composite = report.duals.composite_weights.clone().unwrap_or_default();
                for w in &composite {
                    csv.push_str(&format!(",{w}"));
                }
                let price = report.duals.power_price.unwrap_or(f64::NAN);
                let status = if report.converged { "ok" } else { "not-converged" };
                all_converged &= report.converged;
                csv.push_str(&format!(",{price},{},{status}\n", report.orders.priority_label()));
            }
            SweepRow::Infeasible => {
                csv.push_str(&",".repeat(2 * users + 2));
                csv.push_str(",infeasible\n");
            }
        }
    }
    write_output(args.out.as_deref(), &csv)?;
    Ok(if all_converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn transform(args: TransformArgs) -> anyhow::Result<u8> {
    let gains = instance(&args.instance)?;
    let file = AllocationFile::load(&args.allocation)
        .with_context(|| format!("loading allocation {}", args.allocation.display()))?;
    let order = file.order.clone().unwrap_or_else(|| carrier_orders(&gains));
    let powers = match (&file.powers, &file.rates) {
        (Some(p), _) => PowerAllocation::new(file.side, p.clone())?,
        (None, Some(r)) => {
            let mac = rates_to_powers(&gains, &RateAllocation::new(r.clone())?, &order)?;
            match file.side {
                Side::Mac => mac,
                Side::Bc => mac_to_bc_powers(&gains, &mac, &order)?,
            }
        }
        (None, None) => unreachable!("allocation files carry powers or rates"),
    };
    let mac = match powers.side() {
        Side::Mac => powers.clone(),
        Side::Bc => bc_to_mac_powers(&gains, &powers, &order)?,
    };
    let target = match args.to {
        Direction::Mac => mac.clone(),
        Direction::Bc => match powers.side() {
            Side::Bc => powers,
            Side::Mac => mac_to_bc_powers(&gains, &mac, &order)?,
        },
    };
    let rates = mac_rates(&gains, &mac, &order)?;
    let out = AllocationFile {
        side: target.side(),
        powers: Some(target.into_matrix()),
        rates: Some(rates.into_matrix()),
        order: Some(order),
    };
    write_output(args.out.as_deref(), &out.to_json())?;
    Ok(0)
}

fn certify(args: CertifyArgs) -> anyhow::Result<u8> {
    let gains = instance(&args.instance)?;
    let text = fs::read_to_string(&args.report).with_context(|| format!("reading {}", args.report.display()))?;
    let report = SolverReport::from_json(&text).context("parsing report")?;
    let kkt = recompute_kkt(&gains, &report)?;
    let orders = extract_decoding_orders(&gains, &report);
    let certified = kkt.stationarity <= CERTIFY_STATIONARITY
        && kkt.dual_sign <= CERTIFY_STATIONARITY
        && kkt.complementary_slackness <= CERTIFY_SLACKNESS
        && orders.is_consistent();
    let doc = json!({
        "certified": certified,
        "kkt": kkt,
        "priority": orders.priority.iter().map(|u| u + 1).collect::<Vec<_>>(),
        "order_violation": orders.max_violation(),
        "fdma_certificate": report.fdma_certificate,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(if certified { 0 } else { EXIT_NOT_CONVERGED })
}

fn oracle(args: OracleArgs) -> anyhow::Result<u8> {
    let gains = instance(&args.instance)?;
    let grid = GridSpec::new(args.resolution, args.zoom)?;
    let doc = match (&args.rates, &args.weights, args.power) {
        (Some(rates), _, _) => {
            let found = grid_minpower(&gains, &to_nats(rates, gains.carriers()), grid)?;
            json!({ "problem": "min-power", "power": found.power, "gap": found.gap })
        }
        (None, Some(weights), Some(budget)) => {
            let found = grid_wsr(&gains, weights, budget, grid)?;
            json!({ "problem": "weighted-sum-rate", "objective": found.objective, "gap": found.gap })
        }
        _ => bail!("pass --rates, or --weights with --power"),
    };
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ofdm_alloc::report::nats_to_bps_hz;

    #[test]
    fn snr_grid_includes_both_ends() {
        assert_eq!(snr_grid(0.0, 10.0, 3), vec![0.0, 5.0, 10.0]);
        assert_eq!(snr_grid(4.0, 10.0, 1), vec![4.0]);
        assert!(snr_grid(0.0, 1.0, 0).is_empty());
    }

    #[test]
    fn bits_convert_per_carrier() {
        let nats = to_nats(&[1.0], 4);
        assert!((nats[0] - 4.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((nats_to_bps_hz(nats[0], 4) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn command_line_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
