//! Flat `key = value` experiment configuration.
//!
//! One key per line, `#` starts a comment, no nesting. Vectors are comma
//! separated. Text with a `[config]` section is read from that section
//! only, so a run manifest doubles as a config. Times are in units of the mean free time of the
//! initial data unless a key says otherwise.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `d` | dimension, 2 or 3 | 2 |
//! | `eps` | particle diameter | 1e-3 |
//! | `beta` | inverse temperature of the reference Maxwellian | 1 |
//! | `initial` | `gaussian-x-maxwellian-v`, `uniform-box-x-maxwellian-v` or `two-bump-v` | `gaussian-x-maxwellian-v` |
//! | `center` | Gaussian center | origin |
//! | `sigma` | Gaussian width | 0.14 |
//! | `half_width` | Gaussian truncation half-width | `3 sigma` |
//! | `box_lo`, `box_hi` | spatial box of the uniform profiles | `-0.5`, `0.5` per axis |
//! | `bump1_center`, `bump2_center` | two-bump velocity centers | `+-0.75 e1` |
//! | `bump1_beta`, `bump2_beta` | two-bump inverse temperatures | 2 |
//! | `bump1_weight`, `bump2_weight` | two-bump weights | 0.5 |
//! | `members` | ensemble size | 200 |
//! | `seed` | base seed | 1 |
//! | `shared_stream` | every member uses stream 0 | false |
//! | `force_n` | exact particle number instead of Poisson | unset |
//! | `max_retries` | rejection sampling attempts per member | 1000000 |
//! | `t_end` | run length | largest time sample |
//! | `time_samples` | observation times | `0.5,1,2` |
//! | `graph_windows` | right ends of the windows `[0, w]` for cluster statistics | `0.2,2` |
//! | `bin_x_half`, `bin_nx` | histogram position box half-width and cells per axis | 0.75, 6 |
//! | `bin_v_half`, `bin_nv` | histogram velocity box half-width and cells per axis | 4, 4 |
//! | `bootstrap` | bootstrap resamples | 100 |
//! | `solver_x_half`, `solver_nx` | solver spatial box and cells per axis | 0.75, 24 |
//! | `solver_v_max`, `solver_nv` | solver velocity box and nodes per axis | 4, 16 |
//! | `solver_n_omega` | impact directions in two dimensions | 16 |
//! | `solver_dt_fraction` | step size as a fraction of the stability limit | 0.8 |
//! | `out` | output directory | `kinlab-out` |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kinlab_core::boltzmann::{AngularQuadrature, DistributionField, SpatialGrid, VelocityGrid};
use kinlab_core::estimators::BinningSpec;
use kinlab_core::sampler::VelocityBump;
use kinlab_core::{InitialDataSpec, InitialKind, ModelParams, Vector};

use crate::error::{CliError, CliResult};

/// Every accepted key, in the order used when writing a config back out.
pub const KEYS: &[&str] = &[
    "d",
    "eps",
    "beta",
    "initial",
    "center",
    "sigma",
    "half_width",
    "box_lo",
    "box_hi",
    "bump1_center",
    "bump1_beta",
    "bump1_weight",
    "bump2_center",
    "bump2_beta",
    "bump2_weight",
    "members",
    "seed",
    "shared_stream",
    "force_n",
    "max_retries",
    "t_end",
    "time_samples",
    "graph_windows",
    "bin_x_half",
    "bin_nx",
    "bin_v_half",
    "bin_nv",
    "bootstrap",
    "solver_x_half",
    "solver_nx",
    "solver_v_max",
    "solver_nv",
    "solver_n_omega",
    "solver_dt_fraction",
    "out",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    pub x_half: f64,
    pub nx: usize,
    pub v_max: f64,
    pub nv: usize,
    pub n_omega: usize,
    pub dt_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub initial: InitialDataSpec,
    pub members: usize,
    pub seed: u64,
    pub shared_stream: bool,
    pub force_n: Option<usize>,
    pub max_retries: usize,
    /// In mean free times.
    pub t_end: f64,
    /// In mean free times, increasing.
    pub time_samples: Vec<f64>,
    /// In mean free times.
    pub graph_windows: Vec<f64>,
    pub binning: BinningSpec,
    pub bootstrap: usize,
    pub solver: SolverSettings,
    pub out: PathBuf,
    raw: BTreeMap<String, String>,
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::config("invalid_config", msg)
}

fn parse_f64(key: &str, s: &str) -> CliResult<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| cfg_err(format!("{key}: `{s}` is not a finite number")))
}

fn parse_usize(key: &str, s: &str) -> CliResult<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| cfg_err(format!("{key}: `{s}` is not a nonnegative integer")))
}

pub fn parse_list(key: &str, s: &str) -> CliResult<Vec<f64>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| parse_f64(key, t)).collect()
}

fn parse_bool(key: &str, s: &str) -> CliResult<bool> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(cfg_err(format!("{key}: `{other}` is not a boolean"))),
    }
}

fn vector(key: &str, s: &str, d: usize) -> CliResult<Vector> {
    let xs = parse_list(key, s)?;
    if xs.len() != d {
        return Err(cfg_err(format!("{key}: expected {d} components, got {}", xs.len())));
    }
    Vector::from_slice(&xs).map_err(|e| cfg_err(format!("{key}: {e}")))
}

fn format_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

/// Reads `key = value` lines. A `[config]` section, as found in run
/// manifests, is honored: only its lines are read.
pub fn parse_pairs(text: &str) -> CliResult<BTreeMap<String, String>> {
    let has_section = text.lines().any(|l| l.trim() == "[config]");
    let mut inside = !has_section;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            inside = line == "[config]";
            continue;
        }
        if !inside {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("line {}: expected `key = value`", lineno + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(cfg_err(format!("line {}: unknown key `{k}`", lineno + 1)));
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(cfg_err(format!("line {}: duplicate key `{k}`", lineno + 1)));
        }
    }
    Ok(map)
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> CliResult<Self> {
        Self::from_pairs(parse_pairs(text)?)
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("unreadable_config", format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn from_pairs(raw: BTreeMap<String, String>) -> CliResult<Self> {
        let get = |k: &str| raw.get(k).map(String::as_str);
        let f = |k: &str, default: f64| get(k).map_or(Ok(default), |s| parse_f64(k, s));
        let u = |k: &str, default: usize| get(k).map_or(Ok(default), |s| parse_usize(k, s));

        let d = u("d", 2)?;
        let params = ModelParams::new(d, f("eps", 1e-3)?, f("beta", 1.0)?).map_err(|e| cfg_err(e.to_string()))?;
        let kind = InitialKind::parse(get("initial").unwrap_or("gaussian-x-maxwellian-v")).map_err(|e| cfg_err(e.to_string()))?;
        let beta = params.beta();
        let box_lo = get("box_lo").map_or(Ok(Vector::splat(d, -0.5)), |s| vector("box_lo", s, d))?;
        let box_hi = get("box_hi").map_or(Ok(Vector::splat(d, 0.5)), |s| vector("box_hi", s, d))?;
        let initial = match kind {
            InitialKind::GaussianXMaxwellianV => {
                let center = get("center").map_or(Ok(Vector::zeros(d)), |s| vector("center", s, d))?;
                let sigma = f("sigma", 0.14)?;
                let half_width = f("half_width", 3.0 * sigma)?;
                InitialDataSpec::gaussian_x_maxwellian_v(center, sigma, half_width, beta)
            }
            InitialKind::UniformBoxXMaxwellianV => InitialDataSpec::uniform_box_x_maxwellian_v(box_lo, box_hi, beta),
            InitialKind::TwoBumpV => {
                let mut e1 = Vector::zeros(d);
                e1.set(0, 0.75);
                let bump = |k: usize, default: Vector| -> CliResult<VelocityBump> {
                    let ck = format!("bump{k}_center");
                    Ok(VelocityBump {
                        center: get(&ck).map_or(Ok(default), |s| vector(&ck, s, d))?,
                        beta: f(&format!("bump{k}_beta"), 2.0)?,
                        weight: f(&format!("bump{k}_weight"), 0.5)?,
                    })
                };
                InitialDataSpec::two_bump_v(box_lo, box_hi, [bump(1, e1)?, bump(2, -e1)?])
            }
        }
        .map_err(|e| cfg_err(e.to_string()))?;

        let members = u("members", 200)?;
        if members == 0 {
            return Err(cfg_err("members must be at least 1"));
        }
        let time_samples = get("time_samples").map_or(Ok(vec![0.5, 1.0, 2.0]), |s| parse_list("time_samples", s))?;
        if time_samples.is_empty() || time_samples.iter().any(|&t| t < 0.0) || time_samples.windows(2).any(|w| w[1] <= w[0]) {
            return Err(cfg_err("time_samples must be nonnegative and strictly increasing"));
        }
        let graph_windows = get("graph_windows").map_or(Ok(vec![0.2, 2.0]), |s| parse_list("graph_windows", s))?;
        if graph_windows.iter().any(|&w| !(w > 0.0)) {
            return Err(cfg_err("graph_windows must be positive"));
        }
        let latest = time_samples
            .iter()
            .chain(&graph_windows)
            .fold(0.0f64, |a, &b| a.max(b));
        let t_end = f("t_end", latest)?;
        if !(t_end > 0.0) || t_end < latest {
            return Err(cfg_err(format!("t_end = {t_end} must be positive and cover every sample and window ({latest})")));
        }
        let binning = BinningSpec::centered(d, f("bin_x_half", 0.75)?, u("bin_nx", 6)?, f("bin_v_half", 4.0)?, u("bin_nv", 4)?)
            .map_err(|e| cfg_err(format!("binning: {e}")))?;
        let solver = SolverSettings {
            x_half: f("solver_x_half", 0.75)?,
            nx: u("solver_nx", 24)?,
            v_max: f("solver_v_max", 4.0)?,
            nv: u("solver_nv", 16)?,
            n_omega: u("solver_n_omega", 16)?,
            dt_fraction: f("solver_dt_fraction", 0.8)?,
        };
        if !(solver.dt_fraction > 0.0 && solver.dt_fraction <= 1.0) {
            return Err(cfg_err("solver_dt_fraction must lie in (0, 1]"));
        }
        let cfg = Self {
            params,
            initial,
            members,
            seed: get("seed").map_or(Ok(1), |s| s.trim().parse::<u64>().map_err(|_| cfg_err(format!("seed: `{s}` is not a u64"))))?,
            shared_stream: get("shared_stream").map_or(Ok(false), |s| parse_bool("shared_stream", s))?,
            force_n: get("force_n").map(|s| parse_usize("force_n", s)).transpose()?,
            max_retries: u("max_retries", 1_000_000)?,
            t_end,
            time_samples,
            graph_windows,
            binning,
            bootstrap: u("bootstrap", 100)?,
            solver,
            out: PathBuf::from(get("out").unwrap_or("kinlab-out")),
            raw,
        };
        // Validate the solver grids up front.
        cfg.velocity_grid()?;
        cfg.spatial_grid()?;
        cfg.quadrature()?;
        Ok(cfg)
    }

    /// Overrides one key and revalidates.
    pub fn with(&self, key: &str, value: &str) -> CliResult<Self> {
        if !KEYS.contains(&key) {
            return Err(cfg_err(format!("unknown key `{key}`")));
        }
        let mut raw = self.raw.clone();
        raw.insert(key.to_string(), value.to_string());
        Self::from_pairs(raw)
    }

    pub fn with_eps(&self, eps: f64) -> CliResult<Self> {
        self.with("eps", &format!("{eps:e}"))
    }

    pub fn with_seed(&self, seed: u64) -> CliResult<Self> {
        self.with("seed", &seed.to_string())
    }

    pub fn with_time_samples(&self, ts: &[f64]) -> CliResult<Self> {
        let mut out = self.with("time_samples", &format_list(ts))?;
        if out.t_end < ts.iter().fold(0.0f64, |a, &b| a.max(b)) {
            out = out.with("t_end", &format!("{}", ts[ts.len() - 1]))?;
        }
        Ok(out)
    }

    pub fn with_out(&self, out: &Path) -> CliResult<Self> {
        self.with("out", &out.display().to_string())
    }

    /// Canonical text: explicitly set keys in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            if let Some(v) = self.raw.get(*k) {
                writeln!(s, "{k} = {v}").expect("write to string");
            }
        }
        s
    }

    pub fn velocity_grid(&self) -> CliResult<VelocityGrid> {
        VelocityGrid::new(self.params.d(), self.solver.v_max, self.solver.nv).map_err(|e| cfg_err(format!("solver velocity grid: {e}")))
    }

    pub fn spatial_grid(&self) -> CliResult<SpatialGrid> {
        SpatialGrid::centered(self.params.d(), self.solver.x_half, self.solver.nx).map_err(|e| cfg_err(format!("solver spatial grid: {e}")))
    }

    pub fn quadrature(&self) -> CliResult<AngularQuadrature> {
        AngularQuadrature::default_for(self.params.d(), self.solver.n_omega).map_err(|e| cfg_err(format!("quadrature: {e}")))
    }

    /// `f0` sampled at the solver cell centers and velocity nodes.
    pub fn initial_field(&self) -> CliResult<DistributionField> {
        let spec = &self.initial;
        DistributionField::inhomogeneous(self.velocity_grid()?, self.spatial_grid()?, |x, v| spec.density(x, v))
            .map_err(|e| cfg_err(e.to_string()))
    }

    /// Mean free time of `f0`, the time unit of every experiment.
    pub fn mean_free_time(&self) -> CliResult<f64> {
        kinlab_core::boltzmann::mean_free_time(&self.initial_field()?)
            .ok_or_else(|| cfg_err("initial data has no collisions on the solver grid"))
    }
}
