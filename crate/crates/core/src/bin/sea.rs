use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sea_thermo::cli::{self, BasisChoice, CliError, Format, OutputOptions, ScenarioConfig, Status};

// ignores write errors so that piping into `head` does not panic
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "sea", version, about = "Steepest-entropy-ascent quantum dynamics")]
struct Args {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bundled scenario; see `sea presets list`.
    #[arg(long, global = true, conflicts_with = "config")]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, global = true, env = "SEA_OUT_DIR")]
    out: Option<PathBuf>,
    /// Seed for random states; overrides the scenario's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the scenario and write the trajectory and a summary.
    Run,
    /// Run the conformance criteria on the scenario's system.
    Check,
    /// Report affinities and conductivities at the initial state.
    Onsager {
        #[arg(long, value_enum)]
        basis: Option<BasisArg>,
    },
    /// Run the scenario's [sweep] block in parallel.
    Sweep,
    /// Bundled scenarios.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    GellMann,
    OrthogonalExtension,
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset's scenario file.
    Show {
        name: String,
    },
}

fn scenario(args: &Args) -> Result<ScenarioConfig, CliError> {
    match (&args.config, &args.preset) {
        (Some(path), _) => cli::load_config(path),
        (None, Some(name)) => cli::preset(name),
        (None, None) => Err(CliError::Config { field: "--config".into(), message: "give --config or --preset".into() }),
    }
}

fn write_report(
    opts: &OutputOptions,
    cfg: &ScenarioConfig,
    suffix: &str,
    value: &impl serde::Serialize,
) -> Result<PathBuf, CliError> {
    let dir = opts.out_dir.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("sea-out"));
    let path = dir.join(format!("{}.{suffix}.json", cfg.name));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Io { path: dir.display().to_string(), message: e.to_string() })?;
    let body = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(&path, body)
        .map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(path)
}

fn execute(args: &Args) -> Result<i32, CliError> {
    let opts = OutputOptions {
        out_dir: args.out.clone(),
        format: args.format.map(|f| match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }),
    };
    match &args.command {
        Command::Presets { action: PresetAction::List } => {
            for p in cli::PRESETS {
                let cfg = cli::preset(p.name)?;
                say!("{:<26} {}", p.name, cfg.description);
            }
            Ok(0)
        }
        Command::Presets { action: PresetAction::Show { name } } => {
            let p = cli::PRESETS.iter().find(|p| p.name == name).ok_or_else(|| CliError::Config {
                field: "preset".into(),
                message: format!("unknown preset {name:?}"),
            })?;
            let _ = write!(std::io::stdout(), "{}", p.source);
            Ok(0)
        }
        Command::Run => {
            let cfg = scenario(args)?;
            let out = cli::cmd_run(&cfg, args.seed, &opts)?;
            let s = &out.summary;
            say!(
                "{}: {} steps to t = {:.6}, entropy {:.12}, energy {:.12}{}",
                s.name,
                s.steps,
                s.t_final,
                s.terminal_entropy,
                s.terminal_energy,
                if s.halted_at_equilibrium { " (equilibrium reached)" } else { "" }
            );
            for f in &s.files {
                say!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::Check => {
            let cfg = scenario(args)?;
            let report = cli::cmd_check(&cfg, args.seed)?;
            for c in &report.criteria {
                let tag = match c.status {
                    Status::Pass => "PASS",
                    Status::Fail => "FAIL",
                    Status::ProbeOnly => "PROBE",
                    Status::NotApplicable => "N/A",
                };
                say!("[{tag:>5}] {} {}: {}", c.id, c.title, c.detail);
            }
            let path = write_report(&opts, &cfg, "check", &report)?;
            say!("wrote {}", path.display());
            Ok(if report.failed().is_empty() { 0 } else { 1 })
        }
        Command::Onsager { basis } => {
            let mut cfg = scenario(args)?;
            if let Some(b) = basis {
                cfg.onsager.basis = match b {
                    BasisArg::GellMann => BasisChoice::GellMann,
                    BasisArg::OrthogonalExtension => BasisChoice::OrthogonalExtension,
                };
            }
            let report = cli::cmd_onsager(&cfg, args.seed)?;
            say!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            write_report(&opts, &cfg, "onsager", &report)?;
            Ok(0)
        }
        Command::Sweep => {
            let cfg = scenario(args)?;
            let report = cli::cmd_sweep(&cfg, &opts)?;
            let failed = report.rows.iter().filter(|r| !r.ok).count();
            say!("{} runs, {} failed", report.rows.len(), failed);
            for f in &report.files {
                say!("wrote {}", f.display());
            }
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
