//! `bactipot` command-line front end.

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use bactipot::branching::{simulate, simulate_final, GrowthParams, OffspringDistribution};
use bactipot::harness::{
    emit_curve, evaluate_designs, fit_dataset, log_spaced, run_mc_study, sig3, write_curve_csv,
    McStudyConfig, PipelineConfig, DEFAULT_CURVE_POINTS,
};
use bactipot::measurement::{read_dataset, simulate_experiment, write_dataset};
use bactipot::rng::stream;
use bactipot::{Error, MeasurementConfig, RegressionFilter};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "bactipot", version, about = "Branching-process MIC estimation from qPCR data")]
struct Cli {
    /// Seed for every stochastic subcommand.
    #[arg(long, global = true, env = "BACTIPOT_SEED", default_value_t = 0)]
    seed: u64,
    /// Leave the timestamp out of the output metadata.
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Human-readable output, numbers at three significant figures.
    #[arg(long, global = true)]
    pretty: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate population trajectories.
    Simulate(SimulateArgs),
    /// Synthesize a Ct dataset.
    Synth(SynthArgs),
    /// Fit (alpha, beta, MIC) to a Ct dataset.
    Fit(FitArgs),
    /// Monte Carlo study of the estimators.
    McStudy(McStudyArgs),
    /// Asymptotic covariance of candidate designs.
    DesignEval(DesignEvalArgs),
    /// Tabulate the dose-response curve m(c).
    Curve(CurveArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, requires_all = ["p1", "p2"], conflicts_with = "m")]
    p0: Option<f64>,
    #[arg(long, requires_all = ["p0", "p2"])]
    p1: Option<f64>,
    #[arg(long, requires_all = ["p0", "p1"])]
    p2: Option<f64>,
    /// Mean offspring number; uses the death-or-divide law.
    #[arg(long, required_unless_present = "p0")]
    m: Option<f64>,
    #[arg(long, default_value_t = 1)]
    x0: u64,
    #[arg(long, default_value_t = 10)]
    gens: u32,
    #[arg(long, default_value_t = 1)]
    reps: u64,
    /// Final generation only.
    #[arg(long)]
    summary: bool,
}

#[derive(Args, Debug)]
struct Model {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
}

#[derive(Args, Debug)]
struct Assay {
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    a: f64,
    #[arg(long, default_value_t = 0.2)]
    sigma_eps: f64,
    #[arg(long, default_value_t = 10_000)]
    x0: u64,
    #[arg(long, default_value_t = 10)]
    gens: u32,
    /// Replicates per concentration.
    #[arg(long, default_value_t = 3)]
    reps: u32,
}

impl Assay {
    fn config(&self) -> MeasurementConfig {
        MeasurementConfig {
            a: self.a,
            sigma_eps: self.sigma_eps,
            x0: self.x0,
            n_generations: self.gens,
            replicates: self.reps,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    model: Model,
    /// Concentrations, e.g. "2^-9..2^2" or "0.01,0.1,1".
    #[arg(long)]
    grid: String,
    #[command(flatten)]
    assay: Assay,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Ct CSV file, or "-" for stdin.
    #[arg(long, default_value = "-")]
    input: PathBuf,
    /// Lanes at or above this concentration calibrate a and sigma_eps.
    #[arg(long)]
    high_c: String,
    /// Freely growing lane that calibrates n.
    #[arg(long)]
    low_c: String,
    /// "auto" or the concentrations to regress on.
    #[arg(long, default_value = "auto")]
    fit_c: String,
    #[arg(long, default_value_t = 10_000)]
    x0: u64,
}

#[derive(Args, Debug)]
struct McStudyArgs {
    #[command(flatten)]
    model: Model,
    #[arg(long)]
    grid: String,
    #[command(flatten)]
    assay: Assay,
    /// Simulated experiments.
    #[arg(long, default_value_t = 1000)]
    measurements: usize,
}

#[derive(Args, Debug)]
struct DesignEvalArgs {
    #[command(flatten)]
    model: Model,
    /// Designs, repeatable or separated by ';'.
    #[arg(long, required = true)]
    designs: Vec<String>,
    #[arg(long, default_value_t = 10)]
    gens: u32,
    #[arg(long, default_value_t = 0.2)]
    sigma_eps: f64,
}

#[derive(Args, Debug)]
struct CurveArgs {
    #[command(flatten)]
    model: Model,
    /// "lo,hi"; defaults to two decades either side of the MIC.
    #[arg(long)]
    range: Option<String>,
    #[arg(long, default_value_t = DEFAULT_CURVE_POINTS)]
    points: usize,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(Failure::Usage(e.to_string())),
        },
        None => run(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let mut buf = Vec::new();
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(cli, args, &mut buf)?,
        Command::Synth(args) => cmd_synth(cli, args, &mut buf)?,
        Command::Fit(args) => cmd_fit(cli, args, &mut buf)?,
        Command::McStudy(args) => cmd_mc_study(cli, args, &mut buf)?,
        Command::DesignEval(args) => cmd_design_eval(args, &mut buf)?,
        Command::Curve(args) => cmd_curve(args, &mut buf)?,
    }
    let out = if cli.pretty && !matches!(cli.command, Command::Fit(_) | Command::McStudy(_)) {
        pretty_table(&buf)?
    } else {
        buf
    };
    let mut stdout = io::stdout().lock();
    stdout.write_all(&out)?;
    stdout.flush()?;
    Ok(())
}

/// One concentration: a decimal number or `2^k`.
fn parse_concentration(s: &str) -> CliResult<f64> {
    let s = s.trim();
    let value = match s.strip_prefix("2^") {
        Some(k) => k.trim().parse::<i32>().ok().map(|k| 2f64.powi(k)),
        None => s.parse::<f64>().ok(),
    };
    value
        .filter(|c| c.is_finite() && *c >= 0.0)
        .ok_or_else(|| Failure::Usage(format!("bad concentration {s:?}")))
}

/// Comma-separated concentrations; `2^a..2^b` expands to every power of two
/// in between.
fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let mut grid = Vec::new();
    for item in s.split(',').filter(|t| !t.trim().is_empty()) {
        match item.split_once("..") {
            Some((lo, hi)) => {
                let exp = |t: &str| {
                    t.trim()
                        .strip_prefix("2^")
                        .and_then(|k| k.trim().parse::<i32>().ok())
                        .ok_or_else(|| Failure::Usage(format!("ranges take 2^k endpoints, got {item:?}")))
                };
                let (lo, hi) = (exp(lo)?, exp(hi)?);
                if lo > hi {
                    return Err(Failure::Usage(format!("empty range {item:?}")));
                }
                grid.extend((lo..=hi).map(|k| 2f64.powi(k)));
            }
            None => grid.push(parse_concentration(item)?),
        }
    }
    if grid.is_empty() {
        return Err(Failure::Usage("empty concentration grid".into()));
    }
    Ok(grid)
}

fn params(model: &Model) -> CliResult<GrowthParams> {
    Ok(GrowthParams::new(model.alpha, model.beta)?)
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn meta(cli: &Cli, seeded: bool) -> Value {
    let mut m = serde_json::Map::new();
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    if seeded {
        m.insert("seed".into(), json!(cli.seed));
    }
    if !cli.no_timestamp {
        m.insert("timestamp".into(), json!(timestamp()));
    }
    Value::Object(m)
}

fn comment_line(cli: &Cli, out: &mut Vec<u8>) {
    let mut line = format!("# bactipot {} seed={}", env!("CARGO_PKG_VERSION"), cli.seed);
    if !cli.no_timestamp {
        line.push_str(&format!(" timestamp={}", timestamp()));
    }
    out.extend_from_slice(line.as_bytes());
    out.push(b'\n');
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let dist = match (args.p0, args.p1, args.p2, args.m) {
        (Some(p0), Some(p1), Some(p2), None) => OffspringDistribution::new(p0, p1, p2)?,
        (None, None, None, Some(m)) => OffspringDistribution::from_mean(m)?,
        _ => return Err(Failure::Usage("give either --m or all of --p0 --p1 --p2".into())),
    };
    comment_line(cli, out);
    writeln!(out, "replicate,generation,alive,dead,total")?;
    for r in 0..args.reps {
        let mut rng = stream(cli.seed, r);
        let path = if args.summary {
            vec![simulate_final(args.x0, &dist, args.gens, &mut rng)?]
        } else {
            simulate(args.x0, &dist, args.gens, &mut rng)?
        };
        for s in path {
            writeln!(out, "{},{},{},{},{}", r + 1, s.generation, s.alive, s.dead, s.total())?;
        }
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, args: &SynthArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let params = params(&args.model)?;
    let grid = parse_grid(&args.grid)?;
    let mut rng = stream(cli.seed, 0);
    let data = simulate_experiment(&params, &grid, &args.assay.config(), &mut rng)?;
    comment_line(cli, out);
    let c = &args.assay;
    writeln!(
        out,
        "# alpha={} beta={} a={} sigma_eps={} x0={} gens={} reps={}",
        args.model.alpha, args.model.beta, c.a, c.sigma_eps, c.x0, c.gens, c.reps
    )?;
    write_dataset(&data, &mut *out)?;
    Ok(())
}

fn cmd_fit(cli: &Cli, args: &FitArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let fit = match args.fit_c.trim() {
        "auto" => RegressionFilter::default(),
        "all" => RegressionFilter::All,
        list => RegressionFilter::Subset(parse_grid(list)?),
    };
    let pipeline = PipelineConfig {
        high_c_threshold: parse_concentration(&args.high_c)?,
        low_c: parse_concentration(&args.low_c)?,
        fit,
        x0: args.x0,
    };
    let source: Box<dyn Read> = if args.input.as_os_str() == "-" {
        Box::new(io::stdin().lock())
    } else {
        let file = File::open(&args.input)
            .map_err(|e| Failure::Usage(format!("cannot open {}: {e}", args.input.display())))?;
        Box::new(BufReader::new(file))
    };
    let data = read_dataset(source)?;
    let result = fit_dataset(&data, &pipeline)?;
    let mut m = meta(cli, false);
    m["input"] = json!(args.input.display().to_string());
    write_json(cli, json!({ "meta": m, "result": to_value(&result)? }), out)
}

fn cmd_mc_study(cli: &Cli, args: &McStudyArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let config = McStudyConfig {
        params: params(&args.model)?,
        grid: parse_grid(&args.grid)?,
        measurement: args.assay.config(),
        n_measurements: args.measurements,
        seed: cli.seed,
    };
    let report = run_mc_study(&config)?;
    write_json(
        cli,
        json!({ "meta": meta(cli, true), "config": to_value(&config)?, "report": to_value(&report)? }),
        out,
    )
}

fn cmd_design_eval(args: &DesignEvalArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let params = params(&args.model)?;
    let designs = args
        .designs
        .iter()
        .flat_map(|d| d.split(';'))
        .filter(|d| !d.trim().is_empty())
        .map(parse_grid)
        .collect::<CliResult<Vec<_>>>()?;
    let table = evaluate_designs(&designs, &params, args.gens, args.sigma_eps);
    table.write_csv(&mut *out, false)?;
    Ok(())
}

fn cmd_curve(args: &CurveArgs, out: &mut Vec<u8>) -> CliResult<()> {
    let params = params(&args.model)?;
    let (lo, hi) = match &args.range {
        Some(r) => {
            let (lo, hi) = r
                .split_once(',')
                .ok_or_else(|| Failure::Usage(format!("--range wants lo,hi, got {r:?}")))?;
            (parse_concentration(lo)?, parse_concentration(hi)?)
        }
        None => (params.mic() / 100.0, params.mic() * 100.0),
    };
    let grid = log_spaced(lo, hi, args.points)?;
    write_curve_csv(&emit_curve(&params, &grid)?, &mut *out)?;
    Ok(())
}

fn to_value<T: Serialize>(x: &T) -> CliResult<Value> {
    serde_json::to_value(x).map_err(|e| Failure::Data(e.to_string()))
}

fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().and_then(|x| sig3(x).parse::<f64>().ok()) {
                *v = json!(r);
            }
        }
        Value::Array(xs) => xs.iter_mut().for_each(round_json),
        Value::Object(m) => m.values_mut().for_each(round_json),
        _ => {}
    }
}

fn write_json(cli: &Cli, mut value: Value, out: &mut Vec<u8>) -> CliResult<()> {
    let text = if cli.pretty {
        round_json(&mut value);
        serde_json::to_string_pretty(&value)
    } else {
        serde_json::to_string(&value)
    }
    .map_err(|e| Failure::Data(e.to_string()))?;
    out.extend_from_slice(text.as_bytes());
    out.push(b'\n');
    Ok(())
}

/// Re-renders CSV as aligned columns, numbers at three significant figures.
/// Comment lines pass through.
fn pretty_table(csv_text: &[u8]) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    let mut body = Vec::new();
    for line in csv_text.split_inclusive(|&b| b == b'\n') {
        if line.starts_with(b"#") {
            out.extend_from_slice(line);
        } else {
            body.extend_from_slice(line);
        }
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(body.as_slice());
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Failure::Data(e.to_string()))?;
        rows.push(
            rec.iter()
                .map(|f| match f.parse::<f64>() {
                    Ok(x) if f.contains('.') || f.contains('e') => sig3(x),
                    _ => f.to_string(),
                })
                .collect(),
        );
    }
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(String::len).max().unwrap_or(0))
        .collect();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, c)| format!("{c:>w$}", w = widths[j]))
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(s: &str) -> Vec<f64> {
        parse_grid(s).ok().unwrap()
    }

    #[test]
    fn grid_sugar() {
        assert_eq!(grid("2^-6,2^-4,2^-2"), vec![0.015625, 0.0625, 0.25]);
        assert_eq!(grid("2^-2..2^1"), vec![0.25, 0.5, 1.0, 2.0]);
        assert_eq!(grid("0, 0.5 ,2^3"), vec![0.0, 0.5, 8.0]);
        for bad in ["", "x", "2^a", "-1", "2^3..2^1", "1..4"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn pretty_aligns_and_rounds() {
        let t = pretty_table(b"# c\nx,value\n1,0.123456\n10,2\n").ok().unwrap();
        assert_eq!(String::from_utf8(t).unwrap(), "# c\n x  value\n 1  0.123\n10      2\n");
    }
}
