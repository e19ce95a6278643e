use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vlc_precoding::channel::build_channel;
use vlc_precoding::olp::OlpSettings;
use vlc_precoding::scenario::parse_scenario;
use vlc_precoding::sweep::{
    random_receivers, run_sweep, PrecoderKind, SweepMetadata, SweepSpec, DEFAULT_P_MAX_OFFSET_DB,
};
use vlc_precoding::Scenario;

/// Environment variable holding the log filter (e.g. `debug` for the probe trace).
const LOG_ENV: &str = "VLC_PRECODE_LOG";

#[derive(Parser)]
#[command(
    name = "vlc-precode",
    version,
    about = "Linear precoder design for multi-LED VLC downlinks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecoderChoice {
    Zf,
    Olp,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the LED power level and tabulate both precoders.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        precoder: PrecoderChoice,
        #[arg(long, allow_hyphen_values = true)]
        p_start: f64,
        #[arg(long, allow_hyphen_values = true)]
        p_end: f64,
        #[arg(long)]
        p_step: f64,
        /// Bisection tolerance relative to the bracket's lower end.
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        /// Bracket growth factor.
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        /// Bracket blindly from a tiny target instead of the zero-forcing design.
        #[arg(long)]
        fidelity_algorithms: bool,
        /// Write the per-probe bisection trace (tab separated) here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Replace the scenario's receivers by this many random ones.
        #[arg(long, requires = "seed")]
        random_ues: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// p_max - p in dB at every sweep point.
        #[arg(long, default_value_t = DEFAULT_P_MAX_OFFSET_DB)]
        p_max_offset_db: f64,
        /// Fill the wall_ms column (makes the output run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Validate a scenario and print its channel matrix and noise budget.
    Check {
        #[arg(long)]
        scenario: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn exit(self) -> ExitCode {
        match self {
            Failure::Usage(m) => {
                eprintln!("error: {m}");
                ExitCode::from(2)
            }
            Failure::Runtime(m) => {
                eprintln!("error: {m}");
                ExitCode::from(1)
            }
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn check(path: &Path) -> Result<(), Failure> {
    let scenario = load(path)?;
    let ch = build_channel(&scenario).map_err(|e| Failure::Runtime(e.to_string()))?;
    print!("{}", ch.to_csv());
    Ok(())
}

fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Check { scenario } => check(&scenario),
        Command::Sweep {
            scenario,
            precoder,
            p_start,
            p_end,
            p_step,
            epsilon,
            alpha,
            fidelity_algorithms,
            trace,
            out,
            random_ues,
            seed,
            p_max_offset_db,
            timing,
        } => {
            let mut sc = load(&scenario)?;
            if let (Some(k), Some(s)) = (random_ues, seed) {
                let rxs = random_receivers(&sc, k, s).map_err(|e| Failure::Usage(e.to_string()))?;
                sc = sc
                    .with_receivers(rxs)
                    .map_err(|e| Failure::Usage(e.to_string()))?;
                eprintln!("random receivers drawn with seed {s}");
            }
            let precoders = match precoder {
                PrecoderChoice::Zf => vec![PrecoderKind::Zf],
                PrecoderChoice::Olp => vec![PrecoderKind::Olp],
                PrecoderChoice::Both => vec![PrecoderKind::Zf, PrecoderKind::Olp],
            };
            let spec = SweepSpec {
                olp: OlpSettings {
                    alpha,
                    relative_epsilon: epsilon,
                    fidelity: fidelity_algorithms,
                    ..OlpSettings::default()
                },
                p_max_offset_db,
                timing,
                ..SweepSpec::new(p_start, p_end, p_step, precoders)
            };
            let outcome = run_sweep(&sc, &spec).map_err(|e| {
                if e.exit_code() == 2 {
                    Failure::Usage(e.to_string())
                } else {
                    Failure::Runtime(e.to_string())
                }
            })?;
            let table = outcome
                .to_csv(timing)
                .map_err(|e| Failure::Runtime(format!("cannot format results: {e}")))?;
            write(&out, &table)?;
            let meta = SweepMetadata::new(&sc, &spec, random_ues.and(seed), &outcome);
            let meta = serde_json::to_string_pretty(&meta).expect("metadata serializes");
            write(&meta_path(&out), &(meta + "\n"))?;
            if let Some(path) = trace {
                let mut text =
                    String::from("p_dbm\tphase\tt\tmargin\tsolver_iterations\tverdict\n");
                for line in &outcome.trace {
                    text.push_str(line);
                    text.push('\n');
                }
                write(&path, &text)?;
            }
            match outcome.failed_rows() {
                0 => Ok(()),
                n => Err(Failure::Runtime(format!(
                    "{n} row(s) failed; see blank entries in {}",
                    out.display()
                ))),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.exit(),
    }
}
