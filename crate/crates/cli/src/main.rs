//! `dec-ader`: reproducible jobs over the integrators and stability tools.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure (a
//! diagnostic `error.json` is written to the output directory), 1 for I/O.

mod config;
mod jobs;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde::Serialize;
use serde_json::{json, Value};

use config::{Cli, Command, FileConfig, Global};
use jobs::Files;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical { message: String, diagnostic: Value, files: Files },
    Io(String),
}

impl From<dec_ader::Error> for CliError {
    fn from(e: dec_ader::Error) -> Self {
        use dec_ader::Error as E;
        match e {
            E::SingularMassMatrix { .. } | E::SingularStage { .. } | E::SingularIteration { .. } => {
                CliError::Numerical {
                    message: e.to_string(),
                    diagnostic: Value::Null,
                    files: Vec::new(),
                }
            }
            E::Io(_) | E::Json(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn write_files(dir: &Path, files: &Files) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn execute<J: Serialize>(
    command: &str,
    global: &Global,
    job: &J,
    run: impl FnOnce(&J) -> Result<(Files, Value), CliError>,
) -> Result<(), CliError> {
    let config = json!({ "seed": global.seed, "threads": global.threads, "job": job });
    let start = Instant::now();
    match run(job) {
        Ok((mut files, results)) => {
            let metadata = json!({
                "command": command,
                "version": dec_ader::VERSION,
                "config": config,
                "results": results,
            });
            files.push(("metadata.json", jobs::pretty(&metadata)?));
            files.push(("timing.json", jobs::pretty(&json!({ "wallSeconds": start.elapsed().as_secs_f64() }))?));
            write_files(&global.out, &files)?;
            for (name, _) in &files {
                println!("{}", global.out.join(name).display());
            }
            Ok(())
        }
        Err(CliError::Numerical { message, diagnostic, mut files }) => {
            let report = json!({
                "command": command,
                "version": dec_ader::VERSION,
                "error": "numerical",
                "message": message,
                "config": config,
                "diagnostic": diagnostic,
            });
            files.push(("error.json", jobs::pretty(&report)?));
            write_files(&global.out, &files)?;
            Err(CliError::Numerical { message, diagnostic, files })
        }
        Err(e) => Err(e),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = cli.global.config.as_deref().map(FileConfig::load).transpose()?;
    let global = config::overlay(&cli.global, file.as_ref().map(FileConfig::global), "top level")?.resolve();
    if let Some(n) = global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set up {n} threads: {e}")))?;
    }
    let name = cli.command.name();
    let section = file.as_ref().map(|f| f.section(name));
    match &cli.command {
        Command::Tableau(a) => execute(name, &global, &config::overlay(a, section, name)?.resolve()?, jobs::tableau),
        Command::Stability(a) => execute(name, &global, &config::overlay(a, section, name)?.resolve()?, jobs::stability),
        Command::Vonneumann(a) => execute(name, &global, &config::overlay(a, section, name)?.resolve()?, jobs::vonneumann),
        Command::Convergence(a) => execute(name, &global, &config::overlay(a, section, name)?.resolve()?, jobs::convergence),
        Command::Solve(a) => {
            let seed = global.seed;
            execute(name, &global, &config::overlay(a, section, name)?.resolve()?, |j| jobs::solve(j, seed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical { message, .. }) => {
            eprintln!("numerical failure: {message}");
            ExitCode::from(3)
        }
        Err(CliError::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
