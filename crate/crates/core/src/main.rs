use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use monolab::expcli::{batch_exit_code, load_config, run_batch, Kind, DEFAULT_OUT, OUT_ENV};

#[derive(Parser)]
#[command(name = "monolab", version, about = "Monotonicity experiments on geodesic balls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace phi and phi_F over a range of radii.
    Scan(Common),
    /// Fit the almost-monotonicity constant of a pair family.
    Bound(Common),
    /// Dyadic energy decay and the product inequality.
    Dyadic(Common),
    /// Cap exponents and the alpha+ + alpha- >= 2 check.
    Fh(Common),
    /// Solve a two-phase free boundary problem.
    Solve(Common),
    /// Check the metric bounds on a ball.
    Hebey(Common),
    /// Smallest c0 making phi monotone over a family.
    Calibrate(Common),
}

#[derive(Args)]
struct Common {
    /// Config file, or a directory of config files.
    #[arg(long)]
    config: PathBuf,
    /// Output directory. Defaults to the config's `dir`, then $MONOLAB_OUT, then ./monolab-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Configs run concurrently when --config is a directory.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Multiply the grid counts by k.
    #[arg(long, default_value_t = 1)]
    resolution_scale: usize,
}

fn out_dir(common: &Common, kind: Kind) -> PathBuf {
    if let Some(o) = &common.out {
        return o.clone();
    }
    if common.config.is_file() {
        if let Ok(cfg) = load_config(&common.config, kind, 1) {
            if let Some(d) = cfg.output.dir {
                return PathBuf::from(d);
            }
        }
    }
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| Path::new(DEFAULT_OUT).to_path_buf())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::Scan(c) => (Kind::Scan, c),
        Command::Bound(c) => (Kind::Bound, c),
        Command::Dyadic(c) => (Kind::Dyadic, c),
        Command::Fh(c) => (Kind::Fh, c),
        Command::Solve(c) => (Kind::Solve, c),
        Command::Hebey(c) => (Kind::Hebey, c),
        Command::Calibrate(c) => (Kind::Calibrate, c),
    };
    let out = out_dir(common, kind);
    let items = match run_batch(&common.config, kind, &out, common.jobs, common.resolution_scale) {
        Ok(items) => items,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    for it in &items {
        match &it.result {
            Ok(r) => {
                for v in &r.verdicts {
                    println!("{} {} {}: {}", it.path.display(), if v.pass { "PASS" } else { "FAIL" }, v.name, v.tolerance);
                }
                for (k, v) in &r.fitted {
                    println!("{} fitted {k} = {v}", it.path.display());
                }
            }
            Err(e) => eprintln!("{}: error: {e}", it.path.display()),
        }
    }
    ExitCode::from(batch_exit_code(&items) as u8)
}
