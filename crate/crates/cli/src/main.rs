mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_USAGE: u8 = 4;

/// Bad input detected outside the core library (exit code 2).
#[derive(Debug)]
pub struct InputError(String);

impl InputError {
    pub fn new(msg: impl Into<String>) -> Self {
        InputError(msg.into())
    }
}

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<emg_core::Error>() {
            return if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT };
        }
    }
    EXIT_INPUT
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global()?;
    }
    let config = cli.config.as_deref();
    match &cli.command {
        Command::SgKernel { half_window, order } => commands::sg_kernel(*half_window, *order),
        Command::GenSynth(a) => commands::gen_synth(a, config),
        Command::TrainToy(a) => commands::train_toy(a, config),
        Command::Smooth(a) => commands::smooth(a, config),
        Command::Extract(a) => commands::extract(a, config),
        Command::Eval(a) => commands::eval(a, config),
        Command::Analyze(a) => commands::analyze(a, config),
        Command::Sweep(a) => commands::run_sweep(a, config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
