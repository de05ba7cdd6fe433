use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use trafficlab::cli::execute;
use trafficlab::config::{parse_config, Mode, RunConfig};
use trafficlab::{Error, Result};

/// Continuum traffic stability lab.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// JSON configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-point E(t) traces for sweeps.
    #[arg(long)]
    traces: bool,
    /// Worker threads for sweeps and scans (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn load(args: &Args) -> Result<RunConfig> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text)?;
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(dir) = &args.out {
        cfg.output.dir = dir.clone();
    }
    cfg.output.traces |= args.traces;
    if let Some(j) = args.jobs {
        cfg.sweep.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match load(&args).and_then(|cfg| execute(&cfg)) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
