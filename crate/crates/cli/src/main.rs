use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use laa_cli::output::{self, write_csv, write_run};
use laa_cli::pipeline::{self, PipelineError, RunStatus};
use laa_cli::scenario::{ConfigError, Scenario};
use laa_cli::sweep::{self, Axis};
use laa_cli::validate::validate_mac;
use laa_core::learn::{load_model, model_param_count};
use laa_core::traffic::save_trace;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NON_CONVERGENCE: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

#[derive(Parser)]
#[command(name = "laa", version, about = "LTE-LAA / WiFi coexistence lab")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print progress details.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one scenario.
    Run {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep one axis listed in the scenario's [sweep] table.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        /// Repetitions per point (default: the scenario's `runs`).
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Compare the analytic MAC model with the slot simulator.
    ValidateMac {
        scenario: PathBuf,
        /// Scale analytic attempt probabilities before comparing.
        #[arg(long, default_value_t = 1.0)]
        perturb: f64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write the scenario's synthetic trace as CSV.
    GenTrace {
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Print the shape and blocks of a saved model.
    InspectModel { model: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, format!("config error: {e}"))
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            other => Failure::new(EXIT_FAILURE, other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_FAILURE, format!("i/o error: {e}"))
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let scn = Scenario::load(path)?;
    scn.validate()?;
    Ok(scn)
}

fn cmd_run(path: &Path, out: &Path, verbose: bool) -> Result<(), Failure> {
    let scn = load(path)?;
    let result = pipeline::run(&scn)?;
    write_run(out, &scn, &result)?;
    for r in &result.results {
        let gain = r.gain_vs_reactive.map_or("-".into(), |g| format!("{:+.2}%", 100.0 * g));
        println!(
            "{:<10} lte {:.4}  wifi {:.4}  jain {:.4}  airtime ratio {:.3}  gain {gain}",
            r.scheme, r.lte_proportion, r.wifi_proportion, r.jain_technology, r.airtime_ratio
        );
    }
    if verbose {
        if let Some(log) = &result.training {
            println!("training: {} rounds, {} epochs, converged {}", log.rounds, log.epochs.len(), log.converged);
        }
    }
    println!("wrote {}", out.display());
    if result.status == RunStatus::NonConverged {
        return Err(Failure::new(
            EXIT_NON_CONVERGENCE,
            "training did not satisfy the coupled constraints; partial results written",
        ));
    }
    Ok(())
}

fn cmd_sweep(path: &Path, axis: Axis, out: &Path, runs: Option<usize>) -> Result<(), Failure> {
    let scn = load(path)?;
    let rows = sweep::sweep(&scn, axis, runs)?;
    std::fs::create_dir_all(out)?;
    let file = format!("sweep_{}.csv", axis.name());
    write_csv(&out.join(&file), &rows)?;
    output::write_manifest(out, &scn, vec![file.clone(), output::MANIFEST_FILE.into()])?;
    for r in &rows {
        println!(
            "{} = {:<8} total served {:.1} ± {:.1}  gain {:+.4}  airtime ratio {:.3}  jain {:.4}",
            r.axis, r.value, r.total_served, r.total_served_ci95, r.gain_vs_reactive, r.airtime_ratio, r.jain_technology
        );
    }
    println!("wrote {}", out.join(file).display());
    if rows.iter().any(|r| r.converged_runs < r.runs) {
        return Err(Failure::new(EXIT_NON_CONVERGENCE, "some runs did not converge"));
    }
    Ok(())
}

fn cmd_validate(path: &Path, perturb: f64, out: Option<&Path>) -> Result<(), Failure> {
    let scn = load(path)?;
    if !(perturb > 0.0) {
        return Err(Failure::new(EXIT_CONFIG, "--perturb must be positive"));
    }
    let cells = validate_mac(&scn.validate, &scn.mac, perturb).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    for c in &cells {
        let cw = c.sbs_cw.map_or("-".into(), |w| w.to_string());
        let verdict = if c.pass() { "PASS" } else { "FAIL" };
        println!("{verdict} W={} J={} CW={cw} max rel err {:.4}", c.waps, c.sbss, c.report.max_rel_error());
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(&cells).expect("report serialize");
        std::fs::write(dir.join("validate_mac.json"), text + "\n")?;
    }
    let failed = cells.iter().filter(|c| !c.pass()).count();
    println!("{} cells, {failed} failed", cells.len());
    if failed > 0 {
        return Err(Failure::new(EXIT_VALIDATION, format!("{failed} cells outside tolerance")));
    }
    Ok(())
}

fn cmd_gen_trace(path: &Path, out: &Path) -> Result<(), Failure> {
    let scn = load(path)?;
    let trace = scn.trace()?;
    save_trace(&trace, out).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    println!("wrote {} epochs to {}", trace.epochs(), out.display());
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<(), Failure> {
    let model = load_model(path).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    let s = model.shape;
    println!(
        "sbs {}  channels {}  max channels {}  hidden {}  vocabulary {}",
        s.sbs,
        s.channels,
        s.max_channels,
        s.hidden,
        s.vocab_len()
    );
    for (name, data) in model.params() {
        let norm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("{name:<16} {:>8}  norm {norm:.4}", data.len());
    }
    println!("parameters {}", model_param_count(s));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot set thread count: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    let result = match &cli.command {
        Command::Run { scenario, out } => cmd_run(scenario, out, cli.verbose),
        Command::Sweep { scenario, axis, out, runs } => cmd_sweep(scenario, *axis, out, *runs),
        Command::ValidateMac { scenario, perturb, out } => cmd_validate(scenario, *perturb, out.as_deref()),
        Command::GenTrace { scenario, out } => cmd_gen_trace(scenario, out),
        Command::InspectModel { model } => cmd_inspect(model),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
