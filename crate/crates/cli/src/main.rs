use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use adct_core::audit::FileLogger;
use adct_core::run::{build_engine, execute, load_config, Console, Error};
use adct_core::runconfig::RunMode;
use clap::{ArgGroup, Parser};

/// Batch metadata curation.
#[derive(Parser, Debug)]
#[command(name = "adct", version, disable_help_flag = true)]
#[command(group(ArgGroup::new("mode").required(true).args(["collection", "handle"])))]
struct Cli {
    /// Collection-level curation with a JSON logic file.
    #[arg(short = 'c', value_name = "RUN_PROPERTIES")]
    collection: Option<PathBuf>,
    /// Handle_ID-level curation with a CSV logic file.
    #[arg(short = 'h', value_name = "RUN_PROPERTIES")]
    handle: Option<PathBuf>,
    /// Answer Yes to every prompt.
    #[arg(long)]
    yes: bool,
    /// Suppress progress lines.
    #[arg(long)]
    quiet: bool,
    /// Print help.
    #[arg(long, action = clap::ArgAction::Help)]
    help: Option<bool>,
}

struct Terminal {
    yes: bool,
    quiet: bool,
}

impl Console for Terminal {
    fn confirm(&mut self, prompt: &str) -> bool {
        let mut err = io::stderr().lock();
        let _ = writeln!(err, "{prompt}");
        if self.yes {
            let _ = writeln!(err, "yes");
            return true;
        }
        let _ = err.flush();
        drop(err);
        let mut line = String::new();
        match io::stdin().lock().read_line(&mut line) {
            Ok(0) | Err(_) => false,
            Ok(_) => matches!(line.trim().to_ascii_lowercase().as_str(), "yes" | "y"),
        }
    }

    fn say(&mut self, line: &str) {
        if !self.quiet {
            eprintln!("{line}");
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let started = Instant::now();
    let (mode, runfile) = match (cli.collection, cli.handle) {
        (Some(f), None) => (RunMode::Collection, f),
        (None, Some(f)) => (RunMode::HandleId, f),
        _ => unreachable!("clap enforces exactly one mode"),
    };
    let cfg = load_config(&runfile, mode)?;
    if let Err(e) = FileLogger::install(&cfg.log_dir.join("adct.log")) {
        eprintln!("warning: system log unavailable: {e}");
    }
    let mut console = Terminal { yes: cli.yes, quiet: cli.quiet };
    let engine = build_engine(&cfg, &mut console)?;
    execute(cfg, &engine, &mut console, started)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
