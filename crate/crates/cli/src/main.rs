mod args;
mod commands;
mod config;
mod failure;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};
use failure::Failure;

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn run() -> Result<(), Failure> {
    let mut cmd = Cli::command();
    let argv = config::merge_config_file(&mut cmd, std::env::args_os().collect())?;
    let matches = match cmd.clone().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Failure::Usage(e.to_string()))?;
    init_logging(cli.global.verbose);

    let (name, sub_matches) = matches.subcommand().expect("subcommand is required");
    cmd.build();
    let sub = cmd.find_subcommand(name).expect("parsed subcommand exists");
    let echo = config::resolved_echo(sub, sub_matches);

    let g = &cli.global;
    match &cli.command {
        Command::Prepare(a) => commands::prepare(g, a, &echo),
        Command::Train(a) => commands::train_cmd(g, a, &echo),
        Command::Evaluate(a) => commands::evaluate_cmd(g, a, &echo),
        Command::Predict(a) => commands::predict_cmd(g, a, &echo),
        Command::Synth(a) => commands::synth(g, a, &echo),
        Command::Report(a) => commands::report(g, a, &echo),
    }
}

fn main() {
    if let Err(f) = run() {
        eprintln!("error: {f}");
        std::process::exit(f.exit_code());
    }
}
