//! `prfem`: run the numerical studies and write csv/markdown/dat reports.

mod commands;
mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use prfem::report::{all_passed, checks_table, Format, Table};

use config::{Command, ConfigFile, Overrides, Reconstruct, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "prfem", version, about = "Pressure-robust mixed finite element experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Error and eoc tables over a sequence of structured meshes.
    Convergence(Common),
    /// Errors of both methods across viscosities on fixed meshes.
    NuSweep(Common),
    /// Gradient forcing with homogeneous data: the exact velocity vanishes.
    GradientForcing(Common),
    /// Potential flow with the standard and the modified convection term.
    NavierStokes(Common),
    /// Randomized invariant suite for the reconstruction operator.
    Verify(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration document.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; reports go to <out>/<command>/.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Element, e.g. TH2, mini, or TH together with --order.
    #[arg(long)]
    element: Option<String>,
    #[arg(long)]
    order: Option<usize>,
    /// Comma-separated cells per side, e.g. 4,8,16.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    reconstruct: Option<Reconstruct>,
    #[arg(long)]
    seed: Option<u64>,
}

fn header(cfg: &RunConfig, hash: &str, comment: &str) -> String {
    let tol = serde_json::to_string(&cfg.tolerances).expect("plain data serializes");
    format!("{comment} config-sha256: {hash}\n{comment} tolerances: {tol}\n")
}

fn write_table(dir: &Path, stem: &str, table: &Table, cfg: &RunConfig, hash: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for f in cfg.formats() {
        let body = table.emit(f)?;
        let text = match f {
            Format::Markdown => {
                let mut s = String::new();
                let _ = writeln!(s, "<!--\n{}-->\n", header(cfg, hash, ""));
                s + &body
            }
            Format::Csv | Format::Dat => header(cfg, hash, "#") + &body,
        };
        let path = dir.join(format!("{stem}.{}", f.extension()));
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

fn run(command: Command, args: Common) -> Result<bool> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let overrides = Overrides {
        element: args.element,
        order: args.order,
        levels: args.levels,
        reconstruct: args.reconstruct,
        seed: args.seed,
    };
    let cfg = RunConfig::resolve(command, file, overrides)?;
    if let Some(e) = cfg.elements().into_iter().find(|&e| !commands::supports(cfg.command, e)) {
        bail!("{} does not support element {e}", cfg.command);
    }
    let hash = cfg.hash();
    log::info!("{} config {}", cfg.command, cfg.json());

    let outcome = match command {
        Command::Convergence => commands::convergence(&cfg)?,
        Command::NuSweep => commands::nu_sweep(&cfg)?,
        Command::GradientForcing => commands::gradient_forcing(&cfg)?,
        Command::NavierStokes => commands::navier_stokes(&cfg)?,
        Command::Verify => commands::verify(&cfg)?,
    };

    let dir = args.out.join(cfg.command);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = serde_json::json!({ "config": cfg, "config_sha256": hash });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    for (stem, table) in &outcome.tables {
        write_table(&dir, stem, table, &cfg, &hash)?;
    }
    write_table(&dir, "checks", &checks_table(cfg.command, &outcome.checks), &cfg, &hash)?;

    for c in &outcome.checks {
        println!(
            "{} {} = {:.4e} ({})",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.value,
            c.criterion
        );
    }
    let ok = all_passed(&outcome.checks);
    println!(
        "{}: {}/{} checks passed, reports in {}",
        cfg.command,
        outcome.checks.iter().filter(|c| c.passed).count(),
        outcome.checks.len(),
        dir.display()
    );
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Convergence(a) => (Command::Convergence, a),
        Cmd::NuSweep(a) => (Command::NuSweep, a),
        Cmd::GradientForcing(a) => (Command::GradientForcing, a),
        Cmd::NavierStokes(a) => (Command::NavierStokes, a),
        Cmd::Verify(a) => (Command::Verify, a),
    };
    match run(command, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
