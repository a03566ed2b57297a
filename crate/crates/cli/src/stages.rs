//! Pipeline stages: estimate, graphs, boltzmann and compare.
//!
//! Each stage reads only persisted artifacts, writes into its own
//! directory and finishes by writing a manifest of what it emitted.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kinlab_core::boltzmann::{step_inhomogeneous, CoMovingState, CollisionOperator, STABILITY_BUDGET};
use kinlab_core::dense::{self, Axis, DenseArray};
use kinlab_core::estimators::{bootstrap, bootstrap_weights, cumulants, mean_std, EnsembleCounts};
use kinlab_core::graphs::{cluster_stats, ClusterRecord};
use kinlab_core::{Configuration, Error, RngStream};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::ensemble::{load_ensemble, with_pool, MANIFEST};
use crate::error::{CliError, CliResult};
use crate::io;
use crate::manifest::RunManifest;
use crate::plot::Chart;

/// Bootstrap resamples draw from this stream of the base seed, which no
/// ensemble member uses.
pub const BOOTSTRAP_STREAM: u64 = u64::MAX;

pub const ESTIMATE_DIR: &str = "estimate";
pub const GRAPHS_DIR: &str = "graphs";
pub const BOLTZMANN_DIR: &str = "boltzmann";
pub const COMPARE_DIR: &str = "compare";
pub const SUMMARY: &str = "summary.csv";

/// File-name tag of a sample time given in mean free times.
pub fn time_tag(t_mft: f64) -> String {
    format!("t{t_mft:.4}")
}

fn finish(manifest: &mut RunManifest, dir: &Path, start: Instant) -> CliResult<()> {
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    io::write_atomic(&dir.join(MANIFEST), manifest.to_text().as_bytes())
}

/// Parses a CSV written by this crate into its header and numeric rows.
/// Non-numeric cells read as NaN.
pub fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("missing_artifact", format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::config("invalid_artifact", format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|c| c.trim().parse().unwrap_or(f64::NAN)).collect())
        .collect();
    Ok((header, rows))
}

pub fn column(header: &[String], name: &str, path: &Path) -> CliResult<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::config("invalid_artifact", format!("{} has no `{name}` column", path.display())))
}

fn check_times(cfg: &ExperimentConfig, times: &[f64], available: f64) -> CliResult<()> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
        return Err(CliError::config("invalid_parameter", "time samples must be nonnegative and strictly increasing"));
    }
    let last = times[times.len() - 1];
    if last > available * (1.0 + 1e-12) {
        return Err(CliError::config(
            "invalid_parameter",
            format!("time sample {last} mft lies beyond the ensemble end {} mft", cfg.t_end),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------- estimate

/// Writes, per time sample, the one-particle histogram `f1-<t>.klda` (and
/// CSV), its bootstrap replicates `f1-boot-<t>.klda` with a leading
/// `replicate` axis, and the two-particle cumulant `e2-<t>.klda` when it
/// fits in memory. `summary.csv` holds masses and cumulant norms with
/// their bootstrap spread.
pub fn estimate(root: &Path, times: Option<&[f64]>) -> CliResult<RunManifest> {
    let start = Instant::now();
    let ens = load_ensemble(root)?;
    let cfg = &ens.config;
    let mft = ens.mean_free_time();
    let times = times.unwrap_or(&cfg.time_samples).to_vec();
    check_times(cfg, &times, cfg.t_end)?;
    let dir = root.join(ESTIMATE_DIR);
    io::create_dir(&dir)?;
    let phys: Vec<f64> = times.iter().map(|t| t * mft).collect();
    let snapshots: Vec<Vec<Configuration>> = with_pool(|| {
        ens.logs
            .par_iter()
            .map(|log| log.evolve_to_many(&phys))
            .collect::<kinlab_core::Result<Vec<_>>>()
    })??;
    let weights = bootstrap_weights(ens.logs.len(), cfg.bootstrap, RngStream::new(cfg.seed, BOOTSTRAP_STREAM));
    let mut manifest = RunManifest::new("estimate", cfg.to_text(), mft);
    let mut rows = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let configs: Vec<Configuration> = snapshots.iter().map(|s| s[k].clone()).collect();
        let counts = EnsembleCounts::collect(&configs, &cfg.binning, &cfg.params)?;
        let f1 = counts.f1(None)?;
        let f2 = counts.f2(None)?;
        let (e2, _) = cumulants(&f1, &f2, None)?;
        let tag = time_tag(t);
        let dense_f1 = f1.to_dense();
        manifest.emit(&dir, &format!("f1-{tag}.klda"), &dense_f1.to_bytes())?;
        manifest.emit(&dir, &format!("f1-{tag}.csv"), dense_f1.to_csv().as_bytes())?;
        if e2.values.len() <= 1 << 21 {
            manifest.emit(&dir, &format!("e2-{tag}.klda"), &e2.to_dense().to_bytes())?;
        }
        let e2_norm = e2.l1_norm();
        let (boot_f1, e2_norms) = with_pool(|| -> kinlab_core::Result<_> {
            let boot: Vec<Vec<f64>> = weights
                .par_iter()
                .map(|w| counts.f1(Some(w)).map(|h| h.values))
                .collect::<kinlab_core::Result<_>>()?;
            let norms = bootstrap(&weights, |w| {
                let f1 = counts.f1(Some(w))?;
                let f2 = counts.f2(Some(w))?;
                Ok(cumulants(&f1, &f2, None)?.0.l1_norm())
            })?;
            Ok((boot, norms))
        })??;
        if !boot_f1.is_empty() {
            let mut axes = vec![Axis::new("replicate", boot_f1.len(), 0.0, boot_f1.len() as f64)?];
            axes.extend(dense_f1.axes.iter().cloned());
            let boot = DenseArray::new(axes, boot_f1.concat())?;
            manifest.emit(&dir, &format!("f1-boot-{tag}.klda"), &boot.to_bytes())?;
        }
        let (_, e2_noise) = mean_std(&e2_norms);
        let overflow = f1.overflow / (f1.members * cfg.params.mu());
        rows.push(format!(
            "{t},{},{},{overflow},{e2_norm},{e2_noise},{}",
            t * mft,
            f1.mass(),
            counts.len()
        ));
    }
    let summary = io::csv(
        "time_mft,time_model,f1_mass,overflow_mass,e2_l1,e2_l1_bootstrap_std,members",
        &rows,
    );
    manifest.emit(&dir, SUMMARY, summary.as_bytes())?;
    finish(&mut manifest, &dir, start)?;
    Ok(manifest)
}

// ------------------------------------------------------------------ graphs

fn weighted_cluster_stats(members: &[ClusterRecord], w: Option<&[u32]>) -> (f64, f64) {
    let (mut cyc, mut n, mut largest, mut total) = (0.0, 0.0, 0.0, 0.0);
    for (k, r) in members.iter().enumerate() {
        let wk = w.map_or(1.0, |w| w[k] as f64);
        cyc += wk * r.cycle_fraction * r.n_particles as f64;
        n += wk * r.n_particles as f64;
        largest += wk * r.largest_fraction;
        total += wk;
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    (ratio(cyc, n), ratio(largest, total))
}

/// Cluster statistics over the windows `[0, w]`. Writes per-member and
/// pooled tables `clusters-<w>.csv`, size histograms `sizes-<w>.csv` and a
/// `summary.csv` with bootstrap spreads of the cycle and giant-component
/// fractions.
pub fn graphs(root: &Path) -> CliResult<RunManifest> {
    let start = Instant::now();
    let ens = load_ensemble(root)?;
    let cfg = &ens.config;
    let mft = ens.mean_free_time();
    let dir = root.join(GRAPHS_DIR);
    io::create_dir(&dir)?;
    let weights = bootstrap_weights(ens.logs.len(), cfg.bootstrap, RngStream::new(cfg.seed, BOOTSTRAP_STREAM));
    let mut manifest = RunManifest::new("graphs", cfg.to_text(), mft);
    let mut rows = Vec::new();
    for &w in &cfg.graph_windows {
        if w > cfg.t_end * (1.0 + 1e-12) {
            return Err(CliError::config("invalid_parameter", format!("graph window {w} mft exceeds t_end {} mft", cfg.t_end)));
        }
        let stats = with_pool(|| cluster_stats(&ens.logs, 0.0, w * mft))??;
        let tag = time_tag(w);
        manifest.emit(&dir, &format!("clusters-{tag}.csv"), stats.to_csv().as_bytes())?;
        manifest.emit(&dir, &format!("sizes-{tag}.csv"), stats.histogram_csv().as_bytes())?;
        let (cycle, largest) = weighted_cluster_stats(&stats.members, None);
        let boot: Vec<(f64, f64)> = weights.iter().map(|b| weighted_cluster_stats(&stats.members, Some(b))).collect();
        let (_, cycle_noise) = mean_std(&boot.iter().map(|b| b.0).collect::<Vec<_>>());
        let (_, largest_noise) = mean_std(&boot.iter().map(|b| b.1).collect::<Vec<_>>());
        let a = &stats.aggregate;
        rows.push(format!(
            "{w},{},{cycle},{cycle_noise},{largest},{largest_noise},{},{},{}",
            w * mft,
            a.mean_size,
            a.max_size,
            stats.members.len()
        ));
    }
    let summary = io::csv(
        "window_mft,window_model,cycle_fraction,cycle_fraction_bootstrap_std,largest_fraction,largest_fraction_bootstrap_std,mean_size,max_size,members",
        &rows,
    );
    manifest.emit(&dir, SUMMARY, summary.as_bytes())?;
    finish(&mut manifest, &dir, start)?;
    Ok(manifest)
}

// --------------------------------------------------------------- boltzmann

/// Solves the inhomogeneous equation from the config's initial data with
/// the co-moving Strang scheme and persists, per time sample, the field
/// projected on the estimator binning (`field-<t>.klda`) and on the solver
/// grid (`raw-<t>.klda`). A step refused for stability is retried at half
/// the step size.
pub fn boltzmann(cfg: &ExperimentConfig, out: &Path, times: Option<&[f64]>) -> CliResult<RunManifest> {
    let start = Instant::now();
    let times = times.unwrap_or(&cfg.time_samples).to_vec();
    check_times(cfg, &times, f64::INFINITY)?;
    let f0 = cfg.initial_field()?;
    // Fail early, before any solving, if the binning cannot be matched.
    f0.project(&cfg.binning)?;
    let mft = kinlab_core::boltzmann::mean_free_time(&f0)
        .ok_or_else(|| CliError::config("invalid_parameter", "initial data has no collisions on the solver grid"))?;
    let op = CollisionOperator::new(cfg.velocity_grid()?, cfg.quadrature()?)?;
    let nv = op.grid().len();
    let mut max_rate = 0.0f64;
    for cell in f0.values.chunks(nv) {
        max_rate = max_rate.max(op.max_loss_rate(cell)?);
    }
    let mut dt = if max_rate > 0.0 {
        cfg.solver.dt_fraction * STABILITY_BUDGET / max_rate
    } else {
        f64::INFINITY
    };
    let dir = out.join(BOLTZMANN_DIR);
    io::create_dir(&dir)?;
    let mut manifest = RunManifest::new("boltzmann", cfg.to_text(), mft);
    let mut state = CoMovingState::new(f0)?;
    let (mut clipped, mut steps) = (0.0, 0usize);
    let mut rows = Vec::new();
    for &t in &times {
        let target = t * mft;
        while state.t < target * (1.0 - 1e-12) {
            let remaining = target - state.t;
            let n = (remaining / dt).ceil().max(1.0);
            let h = remaining / n;
            match with_pool(|| step_inhomogeneous(&mut state, h, &op))? {
                Ok(report) => {
                    clipped += report.clipped_mass;
                    steps += 1;
                }
                Err(Error::Stability { .. }) if h > 1e-12 * mft => dt = 0.5 * h,
                Err(e) => return Err(e.into()),
            }
        }
        let field = state.field();
        let tag = time_tag(t);
        manifest.emit(&dir, &format!("field-{tag}.klda"), &field.project(&cfg.binning)?.to_bytes())?;
        manifest.emit(&dir, &format!("raw-{tag}.klda"), &field.to_dense().to_bytes())?;
        rows.push(format!("{t},{target},{},{clipped},{steps},{dt}", field.total_mass()));
    }
    let summary = io::csv("time_mft,time_model,mass,clipped_mass,steps,max_step", &rows);
    manifest.emit(&dir, SUMMARY, summary.as_bytes())?;
    finish(&mut manifest, &dir, start)?;
    Ok(manifest)
}

// ----------------------------------------------------------------- compare

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceRow {
    pub time_mft: f64,
    pub distance: f64,
    /// Bootstrap standard deviation of the distance.
    pub noise: f64,
    pub estimate_mass: f64,
    pub boltzmann_mass: f64,
}

fn sample_times(dir: &Path) -> CliResult<Vec<f64>> {
    let path = dir.join(SUMMARY);
    let (header, rows) = read_table(&path)?;
    let c = column(&header, "time_mft", &path)?;
    Ok(rows.iter().map(|r| r[c]).collect())
}

/// Reads one bootstrap array and splits it into replicates on the grid of
/// `like`.
fn replicates(path: &Path, like: &DenseArray) -> CliResult<Vec<DenseArray>> {
    let boot = io::read_dense(path)?;
    let n = boot.axes.first().map_or(0, |a| a.cells);
    if boot.axes.len() != like.axes.len() + 1 || boot.axes[1..] != like.axes[..] {
        return Err(CliError::config("shape_mismatch", format!("{} does not match its histogram grid", path.display())));
    }
    let size = like.data.len();
    (0..n)
        .map(|r| DenseArray::new(like.axes.clone(), boot.data[r * size..(r + 1) * size].to_vec()).map_err(CliError::from))
        .collect()
}

/// L1 distance between the persisted estimate and solver fields at every
/// time sample the two share. Mismatched grids are an input error.
pub fn compare(estimate_dir: &Path, boltzmann_dir: &Path, out: &Path) -> CliResult<Vec<DistanceRow>> {
    let start = Instant::now();
    let est_times = sample_times(estimate_dir)?;
    let sol_times = sample_times(boltzmann_dir)?;
    let shared: Vec<f64> = est_times
        .iter()
        .copied()
        .filter(|t| sol_times.iter().any(|s| (s - t).abs() <= 1e-9 * t.abs().max(1.0)))
        .collect();
    if shared.is_empty() {
        return Err(CliError::config("no_shared_times", "estimate and solver outputs share no time sample"));
    }
    let mut rows = Vec::new();
    for &t in &shared {
        let tag = time_tag(t);
        let f1 = io::read_dense(&estimate_dir.join(format!("f1-{tag}.klda")))?;
        let sol = io::read_dense(&boltzmann_dir.join(format!("field-{tag}.klda")))?;
        let distance = dense::l1_distance(&f1, &sol).map_err(|e| CliError::from(e).at("compare"))?;
        let boot_path = estimate_dir.join(format!("f1-boot-{tag}.klda"));
        let noise = if boot_path.exists() {
            let reps = replicates(&boot_path, &f1)?;
            let ds = reps
                .iter()
                .map(|r| dense::l1_distance(r, &sol))
                .collect::<kinlab_core::Result<Vec<_>>>()?;
            mean_std(&ds).1
        } else {
            f64::NAN
        };
        rows.push(DistanceRow {
            time_mft: t,
            distance,
            noise,
            estimate_mass: f1.total(),
            boltzmann_mass: sol.total(),
        });
    }
    let mut csv = String::from("time_mft,l1_distance,l1_distance_bootstrap_std,estimate_mass,boltzmann_mass\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{},{}", r.time_mft, r.distance, r.noise, r.estimate_mass, r.boltzmann_mass).unwrap();
    }
    let mut manifest = RunManifest::new("compare", String::new(), f64::NAN);
    manifest.emit(out, "distance.csv", csv.as_bytes())?;
    let svg = Chart::new("particle estimate vs Boltzmann solution", "time [mean free times]", "L1 distance")
        .with_series("L1 distance", rows.iter().map(|r| (r.time_mft, r.distance)).collect())
        .with_series("bootstrap std", rows.iter().map(|r| (r.time_mft, r.noise)).collect())
        .to_svg();
    manifest.emit(out, "distance.svg", svg.as_bytes())?;
    finish(&mut manifest, out, start)?;
    Ok(rows)
}

/// Standard layout under one output directory.
pub fn stage_dirs(root: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (root.join(ESTIMATE_DIR), root.join(BOLTZMANN_DIR), root.join(COMPARE_DIR))
}
