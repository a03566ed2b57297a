//! Binned correlation functions of particle ensembles, their cumulants,
//! and the fits and bootstrap noise floors used to read them.
//!
//! Every estimator is built from per-member cell occupancies, so resampling
//! members for the bootstrap never needs the particles again.

use rand::Rng;
use rayon::prelude::*;

use crate::dense::{Axis, DenseArray};
use crate::error::{Error, Result};
use crate::phase::{Configuration, ModelParams, PhasePoint, Vector};
use crate::rng::RngStream;

/// Default bound on the number of phase-space cells.
pub const DEFAULT_CELL_BUDGET: usize = 1 << 22;
/// Bound on the cell-tuple array of a higher order histogram.
pub const TUPLE_BUDGET: usize = 1 << 24;

/// Uniform cells on `[x_lo, x_hi]^d x [v_lo, v_hi]^d`, `nx` and `nv` per
/// axis. Cells are ordered row-major over `(x_1, .., x_d, v_1, .., v_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinningSpec {
    d: usize,
    x_lo: Vector,
    x_hi: Vector,
    nx: usize,
    v_lo: Vector,
    v_hi: Vector,
    nv: usize,
}

impl BinningSpec {
    pub fn new(x_lo: Vector, x_hi: Vector, nx: usize, v_lo: Vector, v_hi: Vector, nv: usize) -> Result<Self> {
        Self::with_budget(x_lo, x_hi, nx, v_lo, v_hi, nv, DEFAULT_CELL_BUDGET)
    }

    pub fn with_budget(
        x_lo: Vector,
        x_hi: Vector,
        nx: usize,
        v_lo: Vector,
        v_hi: Vector,
        nv: usize,
        budget: usize,
    ) -> Result<Self> {
        let d = x_lo.dim();
        if !(2..=3).contains(&d) {
            return Err(Error::InvalidParameter(format!("dimension must be 2 or 3, got {d}")));
        }
        for v in [&x_hi, &v_lo, &v_hi] {
            if v.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: v.dim() });
            }
        }
        for k in 0..d {
            if !(x_hi.get(k) > x_lo.get(k)) || !(v_hi.get(k) > v_lo.get(k)) {
                return Err(Error::InvalidParameter(format!("empty binning extent along axis {k}")));
            }
        }
        if !(x_lo.is_finite() && x_hi.is_finite() && v_lo.is_finite() && v_hi.is_finite()) {
            return Err(Error::InvalidParameter("non-finite binning extents".into()));
        }
        if nx == 0 || nv == 0 {
            return Err(Error::InvalidParameter("cell counts must be positive".into()));
        }
        let cells = (nx as f64).powi(d as i32) * (nv as f64).powi(d as i32);
        if cells > budget as f64 {
            return Err(Error::Budget(format!("{cells} cells exceed the budget of {budget}")));
        }
        Ok(Self {
            d,
            x_lo,
            x_hi,
            nx,
            v_lo,
            v_hi,
            nv,
        })
    }

    /// Symmetric boxes `[-x_half, x_half]^d x [-v_half, v_half]^d`.
    pub fn centered(d: usize, x_half: f64, nx: usize, v_half: f64, nv: usize) -> Result<Self> {
        Self::new(
            Vector::splat(d, -x_half),
            Vector::splat(d, x_half),
            nx,
            Vector::splat(d, -v_half),
            Vector::splat(d, v_half),
            nv,
        )
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    pub fn x_box(&self) -> (Vector, Vector) {
        (self.x_lo, self.x_hi)
    }

    pub fn v_box(&self) -> (Vector, Vector) {
        (self.v_lo, self.v_hi)
    }

    pub fn n_cells(&self) -> usize {
        self.nx.pow(self.d as u32) * self.nv.pow(self.d as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        let mut vol = 1.0;
        for k in 0..self.d {
            vol *= (self.x_hi.get(k) - self.x_lo.get(k)) / self.nx as f64;
            vol *= (self.v_hi.get(k) - self.v_lo.get(k)) / self.nv as f64;
        }
        vol
    }

    /// Axes in storage order, usable as a dense-array header.
    pub fn axes(&self) -> Vec<Axis> {
        let names = ["x1", "x2", "x3"];
        let vnames = ["v1", "v2", "v3"];
        let mut axes = Vec::with_capacity(2 * self.d);
        for k in 0..self.d {
            axes.push(Axis::new(names[k], self.nx, self.x_lo.get(k), self.x_hi.get(k)).expect("validated"));
        }
        for k in 0..self.d {
            axes.push(Axis::new(vnames[k], self.nv, self.v_lo.get(k), self.v_hi.get(k)).expect("validated"));
        }
        axes
    }

    /// Flat cell index, `None` outside the box. Upper faces belong to the
    /// last cell.
    pub fn cell_of(&self, p: &PhasePoint) -> Option<usize> {
        let mut flat = 0usize;
        for k in 0..self.d {
            flat = flat * self.nx + bin(p.x.get(k), self.x_lo.get(k), self.x_hi.get(k), self.nx)?;
        }
        for k in 0..self.d {
            flat = flat * self.nv + bin(p.v.get(k), self.v_lo.get(k), self.v_hi.get(k), self.nv)?;
        }
        Some(flat)
    }

    /// Cell center as a phase point.
    pub fn center(&self, mut flat: usize) -> PhasePoint {
        let mut x = Vector::zeros(self.d);
        let mut v = Vector::zeros(self.d);
        for k in (0..self.d).rev() {
            let i = flat % self.nv;
            flat /= self.nv;
            let w = (self.v_hi.get(k) - self.v_lo.get(k)) / self.nv as f64;
            v.set(k, self.v_lo.get(k) + (i as f64 + 0.5) * w);
        }
        for k in (0..self.d).rev() {
            let i = flat % self.nx;
            flat /= self.nx;
            let w = (self.x_hi.get(k) - self.x_lo.get(k)) / self.nx as f64;
            x.set(k, self.x_lo.get(k) + (i as f64 + 0.5) * w);
        }
        PhasePoint { x, v }
    }
}

#[inline]
fn bin(value: f64, lo: f64, hi: f64, n: usize) -> Option<usize> {
    if !(value >= lo && value <= hi) {
        return None;
    }
    let k = ((value - lo) / (hi - lo) * n as f64) as usize;
    Some(k.min(n - 1))
}

/// Cell occupancy of one configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Occupancy {
    /// `(cell, count)` for occupied cells, sorted by cell.
    pub cells: Vec<(u32, u32)>,
    pub n_particles: usize,
    pub overflow: usize,
}

impl Occupancy {
    pub fn count(config: &Configuration, spec: &BinningSpec) -> Self {
        let mut ids: Vec<u32> = Vec::with_capacity(config.len());
        let mut overflow = 0;
        for p in config.particles() {
            match spec.cell_of(p) {
                Some(c) => ids.push(c as u32),
                None => overflow += 1,
            }
        }
        ids.sort_unstable();
        let mut cells: Vec<(u32, u32)> = Vec::new();
        for c in ids {
            match cells.last_mut() {
                Some((last, n)) if *last == c => *n += 1,
                _ => cells.push((c, 1)),
            }
        }
        Self {
            cells,
            n_particles: config.len(),
            overflow,
        }
    }
}

/// Occupancies of every ensemble member at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleCounts {
    pub spec: BinningSpec,
    pub mu: f64,
    pub members: Vec<Occupancy>,
}

impl EnsembleCounts {
    pub fn collect(configs: &[Configuration], spec: &BinningSpec, params: &ModelParams) -> Result<Self> {
        if let Some(c) = configs.iter().find(|c| c.d() != spec.d() || c.d() != params.d()) {
            return Err(Error::DimensionMismatch {
                expected: params.d(),
                found: c.d(),
            });
        }
        let members = configs.par_iter().map(|c| Occupancy::count(c, spec)).collect();
        Ok(Self {
            spec: spec.clone(),
            mu: params.mu(),
            members,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn weight_sum(&self, weights: Option<&[u32]>) -> Result<f64> {
        match weights {
            None => Ok(self.members.len() as f64),
            Some(w) if w.len() == self.members.len() => Ok(w.iter().map(|&x| x as f64).sum()),
            Some(w) => Err(Error::ShapeMismatch(format!(
                "{} weights for {} members",
                w.len(),
                self.members.len()
            ))),
        }
    }

    fn weighted<'a>(&'a self, weights: Option<&'a [u32]>) -> impl Iterator<Item = (f64, &'a Occupancy)> + 'a {
        self.members
            .iter()
            .enumerate()
            .map(move |(m, occ)| (weights.map_or(1.0, |w| w[m] as f64), occ))
            .filter(|(w, _)| *w != 0.0)
    }

    /// One-particle histogram; `weights` gives member multiplicities.
    pub fn f1(&self, weights: Option<&[u32]>) -> Result<PhaseHistogram> {
        let m = self.weight_sum(weights)?;
        let mut sums = vec![0.0; self.spec.n_cells()];
        let mut overflow = 0.0;
        for (w, occ) in self.weighted(weights) {
            for &(c, n) in &occ.cells {
                sums[c as usize] += w * n as f64;
            }
            overflow += w * occ.overflow as f64;
        }
        Ok(PhaseHistogram::from_sums(&self.spec, 1, sums, self.mu, m, overflow))
    }

    /// Ordered distinct pairs: `n_a n_b - [a = b] n_a` per member.
    pub fn f2(&self, weights: Option<&[u32]>) -> Result<PhaseHistogram> {
        let m = self.weight_sum(weights)?;
        let nc = self.spec.n_cells();
        tuple_guard(nc, 2)?;
        let mut sums = vec![0.0; nc * nc];
        let mut overflow = 0.0;
        for (w, occ) in self.weighted(weights) {
            for &(a, na) in &occ.cells {
                let row = a as usize * nc;
                for &(b, nb) in &occ.cells {
                    let pairs = na as f64 * nb as f64 - if a == b { na as f64 } else { 0.0 };
                    sums[row + b as usize] += w * pairs;
                }
            }
            let n = occ.n_particles as f64;
            let inside = n - occ.overflow as f64;
            overflow += w * (n * (n - 1.0) - inside * (inside - 1.0));
        }
        Ok(PhaseHistogram::from_sums(&self.spec, 2, sums, self.mu, m, overflow))
    }

    /// Ordered distinct triples, by inclusion-exclusion on coincident cells.
    pub fn f3(&self, weights: Option<&[u32]>) -> Result<PhaseHistogram> {
        let m = self.weight_sum(weights)?;
        let nc = self.spec.n_cells();
        tuple_guard(nc, 3)?;
        let mut sums = vec![0.0; nc * nc * nc];
        let mut overflow = 0.0;
        for (w, occ) in self.weighted(weights) {
            for &(a, na) in &occ.cells {
                for &(b, nb) in &occ.cells {
                    for &(c, nc_) in &occ.cells {
                        let (na, nb, nc_) = (na as f64, nb as f64, nc_ as f64);
                        let mut t = na * nb * nc_;
                        if a == b {
                            t -= na * nc_;
                        }
                        if a == c {
                            t -= na * nb;
                        }
                        if b == c {
                            t -= na * nb;
                        }
                        if a == b && b == c {
                            t += 2.0 * na;
                        }
                        sums[(a as usize * nc + b as usize) * nc + c as usize] += w * t;
                    }
                }
            }
            let n = occ.n_particles as f64;
            let inside = n - occ.overflow as f64;
            let falling = |k: f64| k * (k - 1.0) * (k - 2.0);
            overflow += w * (falling(n) - falling(inside));
        }
        Ok(PhaseHistogram::from_sums(&self.spec, 3, sums, self.mu, m, overflow))
    }
}

fn tuple_guard(n_cells: usize, order: u32) -> Result<()> {
    let size = (n_cells as f64).powi(order as i32);
    if size > TUPLE_BUDGET as f64 {
        return Err(Error::Budget(format!(
            "order-{order} histogram needs {size} cells, above the budget of {TUPLE_BUDGET}; use a coarser binning"
        )));
    }
    Ok(())
}

/// Cell-averaged correlation function of order `k` on `spec^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseHistogram {
    pub spec: BinningSpec,
    pub order: usize,
    pub values: Vec<f64>,
    /// `mu^k * members * cell_volume^k`; 1 for derived quantities.
    pub normalizer: f64,
    /// Weighted number of tuples with a particle outside the box.
    pub overflow: f64,
    pub members: f64,
}

impl PhaseHistogram {
    fn from_sums(spec: &BinningSpec, order: usize, sums: Vec<f64>, mu: f64, members: f64, overflow: f64) -> Self {
        let normalizer = (mu * spec.cell_volume()).powi(order as i32) * members;
        let values = if members > 0.0 {
            sums.iter().map(|s| s / normalizer).collect()
        } else {
            sums
        };
        Self {
            spec: spec.clone(),
            order,
            values,
            normalizer,
            overflow,
            members,
        }
    }

    /// Histogram of a known density, by midpoint evaluation at cell centers.
    pub fn from_density(spec: &BinningSpec, density: impl Fn(&PhasePoint) -> f64) -> Self {
        let values = (0..spec.n_cells()).map(|c| density(&spec.center(c))).collect();
        Self {
            spec: spec.clone(),
            order: 1,
            values,
            normalizer: 1.0,
            overflow: 0.0,
            members: 0.0,
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.spec.cell_volume().powi(self.order as i32)
    }

    /// `sum values * cell volume`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.cell_volume()
    }

    pub fn to_dense(&self) -> DenseArray {
        let mut axes = Vec::new();
        let base = self.spec.axes();
        for slot in 0..self.order {
            for a in &base {
                let mut a = a.clone();
                if self.order > 1 {
                    a.name = format!("{}_{}", a.name, slot + 1);
                }
                axes.push(a);
            }
        }
        DenseArray::new(axes, self.values.clone()).expect("histogram shape matches its spec")
    }

    fn check_compatible(&self, other: &PhaseHistogram) -> Result<()> {
        if self.spec != other.spec || self.order != other.order {
            return Err(Error::ShapeMismatch(format!(
                "histograms differ in binning or order ({} vs {})",
                self.order, other.order
            )));
        }
        Ok(())
    }

    pub fn l1_distance(&self, other: &PhaseHistogram) -> Result<f64> {
        self.check_compatible(other)?;
        let sum: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum();
        Ok(sum * self.cell_volume())
    }

    fn derived(spec: &BinningSpec, order: usize, values: Vec<f64>) -> Self {
        Self {
            spec: spec.clone(),
            order,
            values,
            normalizer: 1.0,
            overflow: 0.0,
            members: 0.0,
        }
    }

    /// Sums the last slot out: `sum_b h(.., b) * cell volume`.
    pub fn marginal(&self) -> Result<PhaseHistogram> {
        if self.order < 2 {
            return Err(Error::InvalidParameter("marginal needs order >= 2".into()));
        }
        let nc = self.spec.n_cells();
        let vol = self.spec.cell_volume();
        let values = self.values.chunks(nc).map(|row| row.iter().sum::<f64>() * vol).collect();
        Ok(Self::derived(&self.spec, self.order - 1, values))
    }
}

/// `mu^{-1} sum_i h(z_i)`.
pub fn empirical_field(config: &Configuration, h: impl Fn(&PhasePoint) -> f64, params: &ModelParams) -> f64 {
    config.particles().iter().map(h).sum::<f64>() / params.mu()
}

/// Test function tabulated on the cells of a binning, zero outside.
pub fn tabulated<'a>(spec: &'a BinningSpec, table: &'a [f64]) -> Result<impl Fn(&PhasePoint) -> f64 + 'a> {
    if table.len() != spec.n_cells() {
        return Err(Error::ShapeMismatch(format!(
            "table has {} entries for {} cells",
            table.len(),
            spec.n_cells()
        )));
    }
    Ok(move |p: &PhasePoint| spec.cell_of(p).map_or(0.0, |c| table[c]))
}

pub fn bin_f1(configs: &[Configuration], spec: &BinningSpec, params: &ModelParams) -> Result<PhaseHistogram> {
    EnsembleCounts::collect(configs, spec, params)?.f1(None)
}

pub fn bin_f2(configs: &[Configuration], spec: &BinningSpec, params: &ModelParams) -> Result<PhaseHistogram> {
    EnsembleCounts::collect(configs, spec, params)?.f2(None)
}

pub fn bin_f3(configs: &[Configuration], spec: &BinningSpec, params: &ModelParams) -> Result<PhaseHistogram> {
    EnsembleCounts::collect(configs, spec, params)?.f3(None)
}

/// `E2 = f2 - f1 (x) f1` and, given `f3`,
/// `E3 = f3 - (f2 (x) f1 over the three splittings) + 2 f1 (x) f1 (x) f1`.
pub fn cumulants(
    f1: &PhaseHistogram,
    f2: &PhaseHistogram,
    f3: Option<&PhaseHistogram>,
) -> Result<(PhaseHistogram, Option<PhaseHistogram>)> {
    if f1.order != 1 || f2.order != 2 || f3.is_some_and(|h| h.order != 3) {
        return Err(Error::ShapeMismatch("cumulants need histograms of order 1, 2 and 3".into()));
    }
    if f1.spec != f2.spec || f3.is_some_and(|h| h.spec != f1.spec) {
        return Err(Error::ShapeMismatch("cumulant inputs use different binnings".into()));
    }
    let nc = f1.spec.n_cells();
    let g = &f1.values;
    let e2: Vec<f64> = f2
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| v - g[k / nc] * g[k % nc])
        .collect();
    let e3 = f3.map(|f3| {
        let p = &f2.values;
        let values = f3
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let (a, b, c) = (k / (nc * nc), (k / nc) % nc, k % nc);
                let pairs = p[a * nc + b] * g[c] + p[a * nc + c] * g[b] + p[b * nc + c] * g[a];
                v - pairs + 2.0 * g[a] * g[b] * g[c]
            })
            .collect();
        PhaseHistogram::derived(&f1.spec, 3, values)
    });
    Ok((PhaseHistogram::derived(&f1.spec, 2, e2), e3))
}

/// Total variation style distance between two histograms of equal shape.
pub fn l1_distance(a: &PhaseHistogram, b: &PhaseHistogram) -> Result<f64> {
    a.l1_distance(b)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual in log space.
    pub residual: f64,
}

/// Least squares line through `(ln x, ln y)`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch(format!("{} abscissae, {} ordinates", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::InvalidParameter("a power-law fit needs at least 3 points".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("power-law fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("abscissae are all equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    Ok(PowerLawFit {
        slope,
        intercept,
        residual,
    })
}

/// Member multiplicities for `n_resamples` bootstrap resamples, drawn
/// sequentially from one stream so the set is reproducible.
pub fn bootstrap_weights(n_members: usize, n_resamples: usize, stream: RngStream) -> Vec<Vec<u32>> {
    let mut rng = stream.rng();
    (0..n_resamples)
        .map(|_| {
            let mut w = vec![0u32; n_members];
            for _ in 0..n_members {
                w[rng.random_range(0..n_members)] += 1;
            }
            w
        })
        .collect()
}

/// Evaluates `stat` on every resample in parallel; results keep resample
/// order.
pub fn bootstrap<F>(weights: &[Vec<u32>], stat: F) -> Result<Vec<f64>>
where
    F: Fn(&[u32]) -> Result<f64> + Sync,
{
    weights.par_iter().map(|w| stat(w)).collect()
}

/// Mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Bootstrap noise floor of a histogram estimator: mean L1 distance
/// between resampled and full-ensemble estimates.
pub fn noise_floor<F>(weights: &[Vec<u32>], full: &PhaseHistogram, estimate: F) -> Result<f64>
where
    F: Fn(Option<&[u32]>) -> Result<PhaseHistogram> + Sync,
{
    let d = bootstrap(weights, |w| estimate(Some(w))?.l1_distance(full))?;
    Ok(mean_std(&d).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec2() -> BinningSpec {
        BinningSpec::centered(2, 1.0, 2, 2.0, 2).unwrap()
    }

    fn config(points: &[((f64, f64), (f64, f64))]) -> Configuration {
        let ps = points
            .iter()
            .map(|&(x, v)| PhasePoint::new(Vector::new2(x.0, x.1), Vector::new2(v.0, v.1)).unwrap())
            .collect();
        Configuration::new(0.0, 2, ps).unwrap()
    }

    #[test]
    fn binning_geometry() {
        let s = spec2();
        assert_eq!(s.n_cells(), 16);
        assert_eq!(s.cell_volume(), 4.0);
        let p = PhasePoint::new(Vector::new2(0.5, -0.5), Vector::new2(1.0, 1.0)).unwrap();
        let c = s.cell_of(&p).unwrap();
        assert_eq!(c, 0b1011);
        assert_eq!(s.center(c), PhasePoint::new(Vector::new2(0.5, -0.5), Vector::new2(1.0, 1.0)).unwrap());
        let edge = PhasePoint::new(Vector::new2(1.0, 1.0), Vector::new2(2.0, 2.0)).unwrap();
        assert_eq!(s.cell_of(&edge), Some(15));
        let out = PhasePoint::new(Vector::new2(1.5, 0.0), Vector::new2(0.0, 0.0)).unwrap();
        assert_eq!(s.cell_of(&out), None);
        assert!(BinningSpec::centered(2, 1.0, 1000, 1.0, 1000).is_err());
        assert!(BinningSpec::centered(2, 1.0, 0, 1.0, 4).is_err());
    }

    #[test]
    fn empty_members_give_zero_histograms() {
        let params = ModelParams::new(2, 0.1, 1.0).unwrap();
        let cs = vec![Configuration::empty(0.0, 2); 3];
        let h = bin_f1(&cs, &spec2(), &params).unwrap();
        assert!(h.values.iter().all(|&v| v == 0.0));
        assert_eq!(h.overflow, 0.0);
    }

    #[test]
    fn single_particles_have_no_pairs() {
        let params = ModelParams::new(2, 0.1, 1.0).unwrap();
        let cs = vec![config(&[((0.1, 0.1), (0.0, 0.0))]); 4];
        let f2 = bin_f2(&cs, &spec2(), &params).unwrap();
        assert!(f2.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pair_and_triple_counts() {
        let params = ModelParams::new(2, 1.0, 1.0).unwrap();
        let s = spec2();
        // Three particles in one cell, one in another.
        let c = config(&[
            ((0.1, 0.1), (0.5, 0.5)),
            ((0.2, 0.2), (0.5, 0.5)),
            ((0.3, 0.3), (0.5, 0.5)),
            ((-0.5, 0.5), (0.5, 0.5)),
        ]);
        let counts = EnsembleCounts::collect(&[c], &s, &params).unwrap();
        let a = s.cell_of(&config(&[((0.1, 0.1), (0.5, 0.5))]).particles()[0]).unwrap();
        let b = s.cell_of(&config(&[((-0.5, 0.5), (0.5, 0.5))]).particles()[0]).unwrap();
        let nc = s.n_cells();
        let vol = s.cell_volume();
        let f2 = counts.f2(None).unwrap();
        assert_eq!(f2.values[a * nc + a] * vol * vol, 6.0);
        assert_eq!(f2.values[a * nc + b] * vol * vol, 3.0);
        assert_eq!(f2.values[b * nc + b], 0.0);
        assert_eq!(f2.mass(), 12.0);
        let f3 = counts.f3(None).unwrap();
        let v3 = vol.powi(3);
        assert_eq!(f3.values[(a * nc + a) * nc + a] * v3, 6.0);
        assert_eq!(f3.values[(a * nc + a) * nc + b] * v3, 6.0);
        assert_eq!(f3.values[(a * nc + b) * nc + b] * v3, 0.0);
        assert_eq!(f3.mass(), 24.0);
    }

    #[test]
    fn overflow_is_reported() {
        let params = ModelParams::new(2, 1.0, 1.0).unwrap();
        let c = config(&[((0.1, 0.1), (0.5, 0.5)), ((5.0, 0.0), (0.0, 0.0))]);
        let counts = EnsembleCounts::collect(&[c], &spec2(), &params).unwrap();
        assert_eq!(counts.f1(None).unwrap().overflow, 1.0);
        assert_eq!(counts.f2(None).unwrap().overflow, 2.0);
    }

    #[test]
    fn cumulants_vanish_on_products() {
        let s = spec2();
        let nc = s.n_cells();
        let g: Vec<f64> = (0..nc).map(|k| 0.01 * (k as f64 + 1.0)).collect();
        let f1 = PhaseHistogram::derived(&s, 1, g.clone());
        let f2 = PhaseHistogram::derived(&s, 2, (0..nc * nc).map(|k| g[k / nc] * g[k % nc]).collect());
        let f3 = PhaseHistogram::derived(
            &s,
            3,
            (0..nc * nc * nc)
                .map(|k| g[k / (nc * nc)] * g[(k / nc) % nc] * g[k % nc])
                .collect(),
        );
        let (e2, e3) = cumulants(&f1, &f2, Some(&f3)).unwrap();
        // Largest products are about 4e-3; allow a few ulps of that.
        assert!(e2.values.iter().all(|v| v.abs() < 1e-17));
        assert!(e3.unwrap().values.iter().all(|v| v.abs() < 1e-17));
        assert!(cumulants(&f2, &f1, None).is_err());
    }

    #[test]
    fn l1_examples() {
        let s = spec2();
        let a = PhaseHistogram::from_density(&s, |_| 1.0 / 64.0);
        let zero = PhaseHistogram::from_density(&s, |_| 0.0);
        assert_eq!(a.l1_distance(&a).unwrap(), 0.0);
        assert!((l1_distance(&a, &zero).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn power_law_examples() {
        let xs = [1.0, 10.0, 100.0, 1000.0];
        let fit = fit_power_law(&xs, &xs.map(|x| 3.0 / x)).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        let flat = fit_power_law(&xs, &[2.0; 4]).unwrap();
        assert!(flat.slope.abs() < 1e-12);
        assert!(fit_power_law(&xs[..2], &[1.0, 1.0]).is_err());
        assert!(fit_power_law(&xs, &[1.0, -1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn bootstrap_weights_are_reproducible_multisets() {
        let a = bootstrap_weights(10, 5, RngStream::new(1, 2));
        let b = bootstrap_weights(10, 5, RngStream::new(1, 2));
        assert_eq!(a, b);
        assert!(a.iter().all(|w| w.iter().sum::<u32>() == 10));
    }

    #[test]
    fn empirical_field_examples() {
        let params = ModelParams::new(2, 0.5, 1.0).unwrap();
        let c = config(&[((0.1, 0.1), (0.5, 0.5)), ((5.0, 0.0), (0.0, 0.0))]);
        assert_eq!(empirical_field(&c, |_| 1.0, &params), 2.0 / params.mu());
        assert_eq!(empirical_field(&c, |_| 0.0, &params), 0.0);
    }
}
