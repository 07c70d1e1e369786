//! Command-line front end: argument parsing, config files, run manifests and
//! the subcommands.

mod args;
mod commands;
mod data;
mod error;
mod manifest;

use std::path::Path;

use clap::{CommandFactory, FromArgMatches};

pub use args::Cli;
pub use error::{CliError, CliResult, EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE};
pub use manifest::Manifest;

use args::Command;

/// Runs the tool on `args` (program name first) and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    match run_inner(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_inner(mut args: Vec<String>) -> CliResult<()> {
    if let Some(path) = manifest::config_path(&args) {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let pairs = manifest::parse_pairs(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        args = manifest::inject_config(args, &pairs)?;
    }
    let mut cmd = Cli::command();
    let matches = match cmd.try_get_matches_from_mut(&args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 { Ok(()) } else { Err(CliError::Usage("invalid arguments".into())) };
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::usage(e.to_string()))?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let sub_cmd = cmd.find_subcommand(name).expect("known subcommand");
    let mut m = Manifest::from_matches(name, sub_cmd, sub);

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::usage("--jobs must be >= 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, &mut m, cli.jobs))
}

fn dispatch(command: Command, m: &mut Manifest, jobs: Option<usize>) -> CliResult<()> {
    match command {
        Command::Synth(a) => commands::synth(&a, m),
        Command::Preprocess(a) => commands::preprocess(&a, m),
        Command::Train(a) => commands::train(&a, m),
        Command::Eval(a) => commands::eval(&a, m),
        Command::Transfer(a) => commands::transfer(&a, m),
        Command::Ensemble(a) => commands::ensemble(&a, m),
        Command::Replay(a) => replay(&a.manifest, a.out.as_deref(), a.check, jobs),
    }
}

fn replay(path: &Path, out: Option<&Path>, check: bool, jobs: Option<usize>) -> CliResult<()> {
    let original = Manifest::load(path)?;
    if original.command == "replay" {
        return Err(CliError::usage("cannot replay a replay manifest"));
    }
    let original_dir = commands::manifest_out(&original, path);
    if check && out.is_none() {
        return Err(CliError::usage("--check needs --out so the original outputs are kept"));
    }
    let mut args = original.to_args(out);
    if let Some(n) = jobs {
        args.push(format!("--jobs={n}"));
    }
    run_inner(args)?;
    if check {
        let dir = out.expect("checked above");
        let fresh = Manifest::load(&dir.join("manifest.txt"))?;
        if fresh.config_hash() != original.config_hash() {
            return Err(CliError::Numeric("replayed configuration hash differs".into()));
        }
        commands::compare_outputs(&original, &original_dir, dir)?;
    }
    Ok(())
}
