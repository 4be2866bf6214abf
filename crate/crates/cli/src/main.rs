mod args;
mod commands;
mod config;
mod exit;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::RunConfig;

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.common)?;
    if cfg.verbose {
        eprintln!("# effective configuration");
        eprint!("{}", toml::to_string(&cfg).unwrap_or_default());
    }
    match &cli.command {
        Command::Calibrate { manifest, out } => commands::calibrate(&cfg, manifest, out),
        Command::Enroll {
            name,
            views,
            dump_selection,
        } => commands::enroll_cmd(&cfg, name, views, dump_selection.as_deref()),
        Command::Run {
            task,
            media,
            question,
            no_concepts,
        } => commands::run_cmd(&cfg, *task, media, question.as_deref(), *no_concepts),
        Command::Eval {
            manifest,
            tasks,
            out,
            views,
            use_library,
        } => commands::eval_cmd(&cfg, manifest, tasks, out, *views, *use_library),
        Command::Inspect { json } => commands::inspect(&cfg, *json),
        Command::Synth { dir, concepts } => commands::synth(&cfg, dir, *concepts),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::USAGE as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e) as u8)
        }
    }
}
