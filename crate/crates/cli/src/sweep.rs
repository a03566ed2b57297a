//! Convergence studies over a decreasing list of diameters.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kinlab_core::estimators::fit_power_law;

use crate::config::ExperimentConfig;
use crate::ensemble::run_ensemble;
use crate::error::{CliError, CliResult};
use crate::io;
use crate::plot::Chart;
use crate::stages::{self, column, read_table, DistanceRow, GRAPHS_DIR, SUMMARY};

#[derive(Clone, Debug, PartialEq)]
pub struct ChaosRow {
    pub time_mft: f64,
    pub e2_l1: f64,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterRow {
    pub window_mft: f64,
    pub cycle_fraction: f64,
    pub cycle_noise: f64,
    pub largest_fraction: f64,
    pub largest_noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpsPoint {
    pub eps: f64,
    pub mu: f64,
    pub dir: PathBuf,
    pub failures: usize,
    pub distances: Vec<DistanceRow>,
    pub chaos: Vec<ChaosRow>,
    pub clusters: Vec<ClusterRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fit {
    pub quantity: String,
    pub time_mft: f64,
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyReport {
    pub points: Vec<EpsPoint>,
    pub fits: Vec<Fit>,
}

impl StudyReport {
    pub fn fit(&self, quantity: &str, time_mft: f64) -> Option<&Fit> {
        self.fits
            .iter()
            .find(|f| f.quantity == quantity && (f.time_mft - time_mft).abs() < 1e-9)
    }

    pub fn failures(&self) -> usize {
        self.points.iter().map(|p| p.failures).sum()
    }
}

/// A usable diameter list is strictly decreasing with at least three
/// positive entries.
pub fn validate_eps_list(eps: &[f64]) -> CliResult<()> {
    if eps.len() < 3 {
        return Err(CliError::config("invalid_parameter", format!("eps list needs at least 3 values, got {}", eps.len())));
    }
    if eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(CliError::config("invalid_parameter", "eps values must be positive"));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::config("invalid_parameter", "eps list must be strictly decreasing"));
    }
    Ok(())
}

fn read_chaos(dir: &Path) -> CliResult<Vec<ChaosRow>> {
    let path = dir.join(SUMMARY);
    let (h, rows) = read_table(&path)?;
    let (t, e, n) = (column(&h, "time_mft", &path)?, column(&h, "e2_l1", &path)?, column(&h, "e2_l1_bootstrap_std", &path)?);
    Ok(rows
        .iter()
        .map(|r| ChaosRow {
            time_mft: r[t],
            e2_l1: r[e],
            noise: r[n],
        })
        .collect())
}

fn read_clusters(dir: &Path) -> CliResult<Vec<ClusterRow>> {
    let path = dir.join(SUMMARY);
    let (h, rows) = read_table(&path)?;
    let w = column(&h, "window_mft", &path)?;
    let c = column(&h, "cycle_fraction", &path)?;
    let cn = column(&h, "cycle_fraction_bootstrap_std", &path)?;
    let l = column(&h, "largest_fraction", &path)?;
    let ln = column(&h, "largest_fraction_bootstrap_std", &path)?;
    Ok(rows
        .iter()
        .map(|r| ClusterRow {
            window_mft: r[w],
            cycle_fraction: r[c],
            cycle_noise: r[cn],
            largest_fraction: r[l],
            largest_noise: r[ln],
        })
        .collect())
}

/// Runs the full pipeline for each diameter against one shared solver run
/// (the initial data and hence the limit equation do not depend on the
/// diameter). Layout: `boltzmann/`, `eps-<k>/` per diameter, and the
/// study tables `distance.csv`, `chaos.csv`, `clusters.csv`, `fits.csv`
/// with their plots.
pub fn convergence_study(cfg: &ExperimentConfig, eps_list: &[f64], out: &Path) -> CliResult<StudyReport> {
    validate_eps_list(eps_list)?;
    io::create_dir(out)?;
    stages::boltzmann(cfg, out, None).map_err(|e| e.at("boltzmann"))?;
    let mut points = Vec::new();
    for (k, &eps) in eps_list.iter().enumerate() {
        let dir = out.join(format!("eps-{k}"));
        let stage = |name: &str| format!("{name} eps={eps:e}");
        let cfg_k = cfg.with_eps(eps)?.with_out(&dir)?;
        let manifest = run_ensemble(&cfg_k, &dir).map_err(|e| e.at(&stage("simulate")))?;
        stages::estimate(&dir, None).map_err(|e| e.at(&stage("estimate")))?;
        stages::graphs(&dir).map_err(|e| e.at(&stage("graphs")))?;
        let (est, sol, cmp) = (dir.join(stages::ESTIMATE_DIR), out.join(stages::BOLTZMANN_DIR), dir.join(stages::COMPARE_DIR));
        let distances = stages::compare(&est, &sol, &cmp).map_err(|e| e.at(&stage("compare")))?;
        points.push(EpsPoint {
            eps,
            mu: cfg_k.params.mu(),
            failures: manifest.failures(),
            distances,
            chaos: read_chaos(&est)?,
            clusters: read_clusters(&dir.join(GRAPHS_DIR))?,
            dir,
        });
    }
    let report = StudyReport {
        fits: fits(&points),
        points,
    };
    write_tables(&report, out)?;
    Ok(report)
}

fn fits(points: &[EpsPoint]) -> Vec<Fit> {
    let mut out = Vec::new();
    let times: Vec<f64> = points[0].chaos.iter().map(|c| c.time_mft).collect();
    for (k, &t) in times.iter().enumerate() {
        let mus: Vec<f64> = points.iter().map(|p| p.mu).collect();
        let mut push = |quantity: &str, ys: Vec<f64>| {
            if let Ok(f) = fit_power_law(&mus, &ys) {
                out.push(Fit {
                    quantity: quantity.into(),
                    time_mft: t,
                    slope: f.slope,
                    intercept: f.intercept,
                    residual: f.residual,
                });
            }
        };
        push("e2_l1_vs_mu", points.iter().map(|p| p.chaos.get(k).map_or(f64::NAN, |c| c.e2_l1)).collect());
        let ds: Vec<f64> = points
            .iter()
            .map(|p| p.distances.iter().find(|d| (d.time_mft - t).abs() < 1e-9).map_or(f64::NAN, |d| d.distance))
            .collect();
        push("l1_distance_vs_mu", ds);
    }
    out
}

fn write_tables(report: &StudyReport, out: &Path) -> CliResult<()> {
    let mut distance = String::from("eps,mu,time_mft,l1_distance,l1_distance_bootstrap_std,estimate_mass,boltzmann_mass\n");
    let mut chaos = String::from("eps,mu,time_mft,e2_l1,e2_l1_bootstrap_std\n");
    let mut clusters = String::from(
        "eps,mu,window_mft,cycle_fraction,cycle_fraction_bootstrap_std,largest_fraction,largest_fraction_bootstrap_std\n",
    );
    for p in &report.points {
        for d in &p.distances {
            writeln!(distance, "{},{},{},{},{},{},{}", p.eps, p.mu, d.time_mft, d.distance, d.noise, d.estimate_mass, d.boltzmann_mass).unwrap();
        }
        for c in &p.chaos {
            writeln!(chaos, "{},{},{},{},{}", p.eps, p.mu, c.time_mft, c.e2_l1, c.noise).unwrap();
        }
        for c in &p.clusters {
            writeln!(
                clusters,
                "{},{},{},{},{},{},{}",
                p.eps, p.mu, c.window_mft, c.cycle_fraction, c.cycle_noise, c.largest_fraction, c.largest_noise
            )
            .unwrap();
        }
    }
    let mut fits = String::from("quantity,time_mft,slope,intercept,max_log_residual\n");
    for f in &report.fits {
        writeln!(fits, "{},{},{},{},{}", f.quantity, f.time_mft, f.slope, f.intercept, f.residual).unwrap();
    }
    io::write_atomic(&out.join("distance.csv"), distance.as_bytes())?;
    io::write_atomic(&out.join("chaos.csv"), chaos.as_bytes())?;
    io::write_atomic(&out.join("clusters.csv"), clusters.as_bytes())?;
    io::write_atomic(&out.join("fits.csv"), fits.as_bytes())?;

    let times: Vec<f64> = report.points[0].distances.iter().map(|d| d.time_mft).collect();
    let mut chart = Chart::new("L1 distance to the Boltzmann solution", "mu = eps^-(d-1)", "L1 distance").log_log();
    let mut chaos_chart = Chart::new("two-particle cumulant", "mu = eps^-(d-1)", "||E2||_L1").log_log();
    for &t in &times {
        let pick = |p: &EpsPoint| p.distances.iter().find(|d| (d.time_mft - t).abs() < 1e-9).map_or(f64::NAN, |d| d.distance);
        chart = chart.with_series(&format!("t = {t} mft"), report.points.iter().map(|p| (p.mu, pick(p))).collect());
    }
    for (k, c) in report.points[0].chaos.iter().enumerate() {
        let t = c.time_mft;
        chaos_chart = chaos_chart.with_series(
            &format!("t = {t} mft"),
            report.points.iter().map(|p| (p.mu, p.chaos.get(k).map_or(f64::NAN, |c| c.e2_l1))).collect(),
        );
    }
    let mut cluster_chart = Chart::new("cluster statistics", "mu = eps^-(d-1)", "fraction of particles");
    cluster_chart.log_x = true;
    for (k, c) in report.points[0].clusters.iter().enumerate() {
        let w = c.window_mft;
        let get = |p: &EpsPoint| p.clusters.get(k).cloned();
        cluster_chart = cluster_chart
            .with_series(
                &format!("cycles, [0, {w}]"),
                report.points.iter().map(|p| (p.mu, get(p).map_or(f64::NAN, |c| c.cycle_fraction))).collect(),
            )
            .with_series(
                &format!("largest, [0, {w}]"),
                report.points.iter().map(|p| (p.mu, get(p).map_or(f64::NAN, |c| c.largest_fraction))).collect(),
            );
    }
    io::write_atomic(&out.join("distance.svg"), chart.to_svg().as_bytes())?;
    io::write_atomic(&out.join("chaos.svg"), chaos_chart.to_svg().as_bytes())?;
    io::write_atomic(&out.join("clusters.svg"), cluster_chart.to_svg().as_bytes())?;
    Ok(())
}
