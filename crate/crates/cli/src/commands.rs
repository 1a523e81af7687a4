use anyhow::Result;
use prfem::analysis::preset;
use prfem::experiments::{self, ConvergenceStudy};
use prfem::report::{Cell, Check, Table};
use prfem::solver::PicardOptions;
use prfem::verify::{run_verify, VerifyOptions};
use prfem::MixedElement;

use crate::config::RunConfig;

/// Named tables and the checks of one command.
#[derive(Debug, Default)]
pub struct Outcome {
    pub tables: Vec<(String, Table)>,
    pub checks: Vec<Check>,
}

fn method(reconstruct: bool) -> &'static str {
    if reconstruct {
        "modified"
    } else {
        "classical"
    }
}

pub fn convergence(cfg: &RunConfig) -> Result<Outcome> {
    let ex = preset(&cfg.preset)?;
    let t = cfg.tolerances;
    let mut out = Outcome::default();
    for e in cfg.elements() {
        for &nu in &cfg.nu {
            for r in cfg.reconstruct.flags() {
                let s: ConvergenceStudy = experiments::convergence(&ex, e, r, &cfg.levels, nu)?;
                if r && cfg.levels.len() >= 2 {
                    let (tv, tp) = if e.is_mini() {
                        (t.mini_velocity_eoc, t.mini_pressure_eoc)
                    } else {
                        (t.velocity_eoc, t.pressure_eoc)
                    };
                    out.checks.extend(s.checks(tv, tp));
                }
                out.tables.push((format!("{e}_{}_nu{nu:e}", method(r)), s.table()));
            }
        }
    }
    Ok(out)
}

pub fn nu_sweep(cfg: &RunConfig) -> Result<Outcome> {
    let ex = preset(&cfg.preset)?;
    let mut out = Outcome::default();
    let mut summary = Table::new("viscosity sweep summary", &["element", "n", "transition_nu", "agreement_floor_nu"]);
    for e in cfg.elements() {
        for &n in &cfg.levels {
            let s = experiments::nu_sweep(&ex, e, n, &cfg.nu)?;
            out.checks.extend(s.checks(cfg.tolerances.coefficient));
            summary.rows.push(vec![
                Cell::text(e.to_string()),
                n.into(),
                s.transition().map_or(Cell::Rate(None), Cell::Error),
                s.agreement_floor(cfg.tolerances.coefficient).map_or(Cell::Rate(None), Cell::Error),
            ]);
            out.tables.push((format!("{e}_n{n}"), s.table()));
        }
    }
    out.tables.push(("summary".into(), summary));
    Ok(out)
}

pub fn gradient_forcing(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    for e in cfg.elements() {
        for &nu in &cfg.nu {
            let s = experiments::gradient_forcing_study(e, &cfg.levels, nu)?;
            out.checks.extend(s.checks());
            out.tables.push((format!("{e}_nu{nu:e}"), s.table()));
        }
    }
    Ok(out)
}

pub fn navier_stokes(cfg: &RunConfig) -> Result<Outcome> {
    let opts = PicardOptions {
        tol: cfg.tolerances.picard,
        max_iter: cfg.tolerances.max_iter,
        ..PicardOptions::default()
    };
    let elements = cfg.elements();
    let mut out = Outcome::default();
    for &nu in &cfg.nu {
        let rows = experiments::navier_stokes_study(&elements, &cfg.levels, nu, opts)?;
        out.checks.extend(experiments::navier_stokes_checks(&rows, opts.max_iter));
        out.tables.push((format!("potential_flow_nu{nu:e}"), experiments::navier_stokes_table(&rows, nu)));
    }
    Ok(out)
}

pub fn verify(cfg: &RunConfig) -> Result<Outcome> {
    let opts = VerifyOptions {
        n: cfg.levels[0],
        elements: cfg.elements(),
        samples: cfg.samples,
        seed: cfg.seed,
        ..VerifyOptions::default()
    };
    let r = run_verify(&opts)?;
    log::info!("verify suite finished in {:.1} s", r.seconds);
    Ok(Outcome {
        tables: Vec::new(),
        checks: r.checks,
    })
}

/// Elements that a command can run; mini is not part of the potential-flow benchmark.
pub fn supports(command: &str, e: MixedElement) -> bool {
    !(command == "navier-stokes" && e.is_mini())
}
