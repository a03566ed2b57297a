//! Argument parsing and subcommand dispatch.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kinlab_core::ursell::penrose_sweep;

use crate::config::{parse_list, ExperimentConfig};
use crate::ensemble::run_ensemble;
use crate::error::{CliError, CliResult};
use crate::stages;
use crate::sweep::convergence_study;

/// Largest vertex count the exhaustive Penrose check accepts.
pub const PENROSE_MAX_N: usize = 6;

#[derive(Parser, Debug)]
#[command(name = "kinlab", version, about = "Hard-sphere gases against the Boltzmann equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated sample times in mean free times.
    #[arg(long = "time-samples")]
    time_samples: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct OutOnly {
    /// Directory holding the persisted ensemble.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample and evolve the ensemble, persisting one event log per member.
    Simulate(Common),
    /// Cluster statistics of the persisted ensemble.
    Graphs(OutOnly),
    /// Histograms and cumulants of the persisted ensemble.
    Estimate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "time-samples")]
        time_samples: Option<String>,
    },
    /// Solve the Boltzmann equation from the config's initial data.
    Boltzmann(Common),
    /// L1 distance between the persisted estimate and solver outputs.
    Compare(OutOnly),
    /// Full pipeline over a decreasing list of diameters.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long = "eps-list")]
        eps_list: String,
    },
    /// Exhaustive check of the tree bound on Ursell functions.
    Penrose {
        #[arg(long = "max-n", default_value_t = 5)]
        max_n: usize,
    },
}

fn load_config(c: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::from_text("")?,
    };
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed)?;
    }
    if let Some(out) = &c.out {
        cfg = cfg.with_out(out)?;
    }
    if let Some(ts) = &c.time_samples {
        cfg = cfg.with_time_samples(&parse_list("time-samples", ts)?)?;
    }
    Ok(cfg)
}

fn check_writable(dir: &Path) -> CliResult<()> {
    crate::io::create_dir(dir)?;
    let probe = dir.join(".kinlab-write-probe");
    std::fs::write(&probe, b"")
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| CliError::config("unwritable_output", format!("{}: {e}", dir.display())))
}

fn dispatch(command: Command, out: &mut dyn Write) -> CliResult<()> {
    let say = |out: &mut dyn Write, line: String| {
        let _ = writeln!(out, "{line}");
    };
    match command {
        Command::Simulate(c) => {
            let cfg = load_config(&c)?;
            check_writable(&cfg.out)?;
            let m = run_ensemble(&cfg, &cfg.out).map_err(|e| e.at("simulate"))?;
            let events: usize = m
                .members
                .iter()
                .map(|r| match r.status {
                    crate::manifest::MemberStatus::Ok { events, .. } => events,
                    _ => 0,
                })
                .sum();
            say(out, format!("simulated {} members, {events} collisions, into {}", m.members.len(), cfg.out.display()));
            if m.failures() > 0 {
                return Err(CliError::runtime(
                    "member_failure",
                    format!("{} of {} members failed; see {}", m.failures(), m.members.len(), cfg.out.join("manifest.txt").display()),
                )
                .at("simulate"));
            }
        }
        Command::Graphs(o) => {
            stages::graphs(&o.out).map_err(|e| e.at("graphs"))?;
            say(out, format!("cluster statistics written to {}", o.out.join(stages::GRAPHS_DIR).display()));
        }
        Command::Estimate { out: dir, time_samples } => {
            let ts = time_samples.map(|s| parse_list("time-samples", &s)).transpose()?;
            stages::estimate(&dir, ts.as_deref()).map_err(|e| e.at("estimate"))?;
            say(out, format!("estimates written to {}", dir.join(stages::ESTIMATE_DIR).display()));
        }
        Command::Boltzmann(c) => {
            let cfg = load_config(&c)?;
            check_writable(&cfg.out)?;
            stages::boltzmann(&cfg, &cfg.out, None).map_err(|e| e.at("boltzmann"))?;
            say(out, format!("solver fields written to {}", cfg.out.join(stages::BOLTZMANN_DIR).display()));
        }
        Command::Compare(o) => {
            let (est, sol, cmp) = stages::stage_dirs(&o.out);
            let rows = stages::compare(&est, &sol, &cmp).map_err(|e| e.at("compare"))?;
            for r in rows {
                say(out, format!("t = {} mft: L1 distance {:.4e} (bootstrap std {:.2e})", r.time_mft, r.distance, r.noise));
            }
        }
        Command::Sweep { common, eps_list } => {
            let cfg = load_config(&common)?;
            let eps = parse_list("eps-list", &eps_list)?;
            crate::sweep::validate_eps_list(&eps)?;
            check_writable(&cfg.out)?;
            let report = convergence_study(&cfg, &eps, &cfg.out)?;
            for f in &report.fits {
                say(out, format!("{} at t = {} mft: slope {:.3}", f.quantity, f.time_mft, f.slope));
            }
            if report.failures() > 0 {
                return Err(CliError::runtime("member_failure", format!("{} ensemble members failed", report.failures())).at("sweep"));
            }
        }
        Command::Penrose { max_n } => {
            if max_n == 0 || max_n > PENROSE_MAX_N {
                return Err(CliError::config(
                    "invalid_parameter",
                    format!("--max-n must lie in 1..={PENROSE_MAX_N}, got {max_n}"),
                ));
            }
            for n in 1..=max_n {
                let s = penrose_sweep(n)?;
                if s.violations > 0 {
                    return Err(CliError::runtime(
                        "bound_violated",
                        format!("{} of {} overlap matrices (n={n}) violate |phi| <= tree count", s.violations, s.matrices),
                    )
                    .at("penrose"));
                }
                let m = n * (n - 1) / 2;
                say(out, format!("all 2^{m} overlap matrices (n={n}) satisfy |phi| <= tree count"));
            }
        }
    }
    Ok(())
}

/// Runs the command line `args` (program name first) and returns the exit
/// status. Normal output goes to `out`; usage text and the one-line
/// diagnostic go to `err`.
pub fn run(args: impl IntoIterator<Item = String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            let _ = write!(err, "{}", e.render());
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            let _ = writeln!(err, "{}", CliError::config("usage", first).diagnostic());
            return 1;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.diagnostic());
            e.exit_code()
        }
    }
}
