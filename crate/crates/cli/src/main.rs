//! Batch front end: `mfglab <command> --config run.toml [--threads N]
//! [--section.key=value ...]`.
//!
//! Exit codes: 0 success, 2 configuration/schema violation, 3 numerical
//! failure. Machine-readable error JSON goes to stderr.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::RunContext;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "mfglab",
    version,
    about = "Mean field games of moderate interaction: solver, simulator and studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (TOML). Required by every command except selftest.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (falls back to MFG_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the coupled system, cross-check it, write dumps and a summary.
    Solve,
    /// Solve the forward density equation under a configured feedback.
    Forward,
    /// Simulate the N-player system and deposit empirical densities.
    Simulate,
    /// Particle-limit convergence study over the N ladder.
    Converge,
    /// Empirical Nash-gap study with the deviation battery.
    Nashgap,
    /// Run the built-in oracle battery.
    Selftest,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Solve => "solve",
        Command::Forward => "forward",
        Command::Simulate => "simulate",
        Command::Converge => "converge",
        Command::Nashgap => "nashgap",
        Command::Selftest => "selftest",
    }
}

fn emit_error(kind: &str, message: &str) {
    eprintln!(
        "{}",
        serde_json::json!({ "error": { "kind": kind, "message": message } })
    );
}

fn main() -> ExitCode {
    // dotted-path overrides (--solver.tol=1e-9) are stripped before clap
    let mut overrides: Vec<(String, String)> = Vec::new();
    let args: Vec<String> = std::env::args()
        .filter(|a| {
            if let Some(rest) = a.strip_prefix("--") {
                if let Some((key, value)) = rest.split_once('=') {
                    if key.contains('.') {
                        overrides.push((key.to_string(), value.to_string()));
                        return false;
                    }
                }
            }
            true
        })
        .collect();
    let cli = Cli::parse_from(args);

    let threads = cli.threads.or_else(|| {
        std::env::var("MFG_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .is_err()
        {
            emit_error("config", "could not size the worker pool");
            return ExitCode::from(2);
        }
    }
    let effective_threads = rayon::current_num_threads();

    if let Command::Selftest = cli.command {
        return match commands::cmd_selftest() {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                emit_error("numerical", &format!("{e:#}"));
                ExitCode::from(3)
            }
        };
    }

    let Some(config_path) = cli.config else {
        emit_error("config", "missing --config");
        return ExitCode::from(2);
    };
    let cfg = match RunConfig::load(&config_path, &overrides) {
        Ok(c) => c,
        Err(e) => {
            emit_error("config", &format!("{e:#}"));
            return ExitCode::from(2);
        }
    };
    // model/grid construction counts as configuration: hypothesis violations
    // like beta outside (0, 1/2) exit 2 with the violated condition named.
    if let Err(e) = cfg.build_model().and_then(|_| cfg.build_grid()) {
        emit_error("config", &format!("{e:#}"));
        return ExitCode::from(2);
    }

    let name = command_name(&cli.command);
    let dir = match output::run_dir(&cfg.output.dir, name) {
        Ok(d) => d,
        Err(e) => {
            emit_error("io", &format!("{e:#}"));
            return ExitCode::from(3);
        }
    };
    let manifest = output::Manifest {
        command: name,
        config_sha256: output::content_hash(&config_path).unwrap_or_default(),
        config_path: config_path.display().to_string(),
        overrides: overrides.clone(),
        root_seed: cfg.output.seed,
        threads: effective_threads,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        version: env!("CARGO_PKG_VERSION"),
    };
    if let Err(e) = output::write_manifest(&dir, &manifest) {
        emit_error("io", &format!("{e:#}"));
        return ExitCode::from(3);
    }

    let ctx = RunContext {
        cfg,
        dir: dir.clone(),
    };
    let result = match cli.command {
        Command::Solve => commands::cmd_solve(&ctx),
        Command::Forward => commands::cmd_forward(&ctx),
        Command::Simulate => commands::cmd_simulate(&ctx),
        Command::Converge => commands::cmd_converge(&ctx),
        Command::Nashgap => commands::cmd_nashgap(&ctx),
        Command::Selftest => unreachable!(),
    };
    match result {
        Ok(()) => {
            println!("outputs in {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = format!("{e:#}");
            // schema guards inside commands (study.run membership etc.)
            let kind = if msg.contains("study.run") {
                "config"
            } else {
                "numerical"
            };
            emit_error(kind, &msg);
            ExitCode::from(if kind == "config" { 2 } else { 3 })
        }
    }
}
