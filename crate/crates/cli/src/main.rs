//! `fixtrunc` command-line driver.
//!
//! Exit status: 0 on success, 2 for configuration or analysis errors, 3 when
//! `--strict` is set and the fixed-point run overflowed. Diagnostics go to
//! stderr as one JSON object per line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fixtrunc::commands::{cmd_analyze, cmd_cost, cmd_run, cmd_sweep, RunConfig, SweepAxis};
use fixtrunc::costmodel::CostTable;
use fixtrunc::evaluator::Inputs;
use fixtrunc::kernels::{preset, preset_names, ModelConfig};
use fixtrunc::{Error, FixedConfig, Strategy};

const EXIT_CONFIG: u8 = 2;
const EXIT_OVERFLOW: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "fixtrunc",
    version,
    about = "Static truncation placement and fixed-point emulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Place truncations and report counts per category. Reads no input data.
    Analyze(Common),
    /// Run the fixed-point and reference tracks and report errors and overflow.
    Run {
        #[command(flatten)]
        common: Common,
        /// Exit with status 3 if any overflow event is recorded.
        #[arg(long)]
        strict: bool,
        /// JSON object mapping input names to flat value arrays; inputs not
        /// listed are drawn at random from their declared ranges.
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Estimate online latency from the cost table.
    Cost(Common),
    /// Run the pipeline over a grid and write CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `axis=a..b` or `axis=v1,v2`; axes are rsqrt_iters, recip_iters,
        /// exp_squarings, frac_bits, and `seq_len=..;gen_len=..`.
        #[arg(long)]
        sweep: String,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Model config file, or a shipped preset name.
    #[arg(long, default_value = "toy")]
    model: String,
    /// Field size in bits. `cost` accepts a comma-separated list.
    #[arg(long, default_value = "64")]
    field_bits: String,
    #[arg(long, default_value_t = 13)]
    frac_bits: u32,
    #[arg(long, default_value_t = 20)]
    base_width: u32,
    /// `static` or `naive`.
    #[arg(long, default_value = "static")]
    strategy: String,
    /// Cost table JSON; the shipped table is used when omitted.
    #[arg(long)]
    cost_table: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for output files; created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also lower with the truncate-after-every-product baseline.
    #[arg(long)]
    compare_naive: bool,
}

struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: EXIT_CONFIG,
            kind: e.tag().to_string(),
            message: e.to_string(),
        }
    }
}

fn config_error(message: String) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        kind: "ConfigError".into(),
        message,
    }
}

fn diag(level: &str, kind: &str, code: u8, message: &str) {
    eprintln!(
        "{}",
        json!({ "level": level, "kind": kind, "exit": code, "message": message })
    );
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_CONFIG,
        kind: "IoError".into(),
        message: format!("{}: {e}", path.display()),
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure {
        code: EXIT_CONFIG,
        kind: "IoError".into(),
        message: format!("{}: {e}", dir.display()),
    };
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join(name), contents).map_err(io)
}

fn load_model(spec: &str) -> Result<ModelConfig, Failure> {
    let path = Path::new(spec);
    if path.exists() {
        return Ok(ModelConfig::from_json(&read(path)?)?);
    }
    preset(spec).ok_or_else(|| {
        let names: Vec<&str> = preset_names().collect();
        config_error(format!(
            "model {spec:?} is neither a file nor a preset ({})",
            names.join(", ")
        ))
    })
}

fn field_list(s: &str) -> Result<Vec<u32>, Failure> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| config_error(format!("bad --field-bits value {t:?}")))
        })
        .collect()
}

/// The run config plus every field size given on the command line.
fn run_config(c: &Common) -> Result<(RunConfig, Vec<u32>), Failure> {
    let fields = field_list(&c.field_bits)?;
    let mut rc = RunConfig::new(load_model(&c.model)?);
    rc.fixed = FixedConfig::new(c.frac_bits, c.base_width, fields[0])?;
    for &f in &fields[1..] {
        rc.fixed.with_field_bits(f).validate()?;
    }
    rc.strategy = Strategy::parse(&c.strategy)
        .ok_or_else(|| config_error(format!("unknown strategy {:?}", c.strategy)))?;
    if let Some(p) = &c.cost_table {
        rc.cost_table = CostTable::from_json(&read(p)?)?;
    }
    rc.seed = c.seed;
    rc.compare_naive = c.compare_naive;
    Ok((rc, fields))
}

fn single_field(c: &Common) -> Result<RunConfig, Failure> {
    let (rc, fields) = run_config(c)?;
    if fields.len() != 1 {
        return Err(config_error(
            "only `cost` accepts several field sizes".into(),
        ));
    }
    Ok(rc)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Analyze(c) => {
            let rc = single_field(&c)?;
            let a = cmd_analyze(&rc)?;
            if let Some(dir) = &c.out {
                write(dir, "plan.json", &a.plan.to_json()?)?;
                write(dir, "summary.json", &a.summary.to_json()?)?;
            }
            print!("{}", a.summary.to_table());
        }
        Command::Run {
            common,
            strict,
            inputs,
        } => {
            let rc = single_field(&common)?;
            let given: Option<Inputs> = match &inputs {
                Some(p) => Some(serde_json::from_str(&read(p)?).map_err(Error::from)?),
                None => None,
            };
            let report = cmd_run(&rc, given.as_ref())?;
            if let Some(dir) = &common.out {
                write(dir, "report.json", &report.to_json()?)?;
            }
            println!(
                "max_abs_error {:e}  mean_abs_error {:e}  overflow_events {}  range_violations {}",
                report.max_abs_error,
                report.mean_abs_error,
                report.overflow_count,
                report.range_violations.len()
            );
            if report.overflow_count > 0 {
                let msg = format!("{} overflow events", report.overflow_count);
                if strict {
                    return Err(Failure {
                        code: EXIT_OVERFLOW,
                        kind: "Overflow".into(),
                        message: msg,
                    });
                }
                diag("warning", "Overflow", 0, &msg);
            }
        }
        Command::Cost(c) => {
            let (rc, fields) = run_config(&c)?;
            let out = cmd_cost(&rc, &fields)?;
            if let Some(dir) = &c.out {
                write(dir, "cost.json", &out.to_json()?)?;
                write(dir, "cost.txt", &out.to_table())?;
            }
            print!("{}", out.to_table());
        }
        Command::Sweep { common, sweep } => {
            let rc = single_field(&common)?;
            let axis = SweepAxis::parse(&sweep)?;
            let csv = cmd_sweep(&rc, &axis)?;
            match &common.out {
                Some(dir) => write(dir, "sweep.csv", &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            diag("error", "UsageError", EXIT_CONFIG, first);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            diag("error", &f.kind, f.code, &f.message);
            ExitCode::from(f.code)
        }
    }
}
