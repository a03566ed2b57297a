//! Grand-canonical initial data: a Poisson number of particles with mean
//! `mu_eps`, i.i.d. phase points drawn from `f0`, conditioned on hard-sphere
//! exclusion by rejecting whole configurations.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::cells::CellHash;
use crate::error::{Error, Result};
use crate::phase::{maxwellian_unchecked, Configuration, ModelParams, PhasePoint, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialKind {
    GaussianXMaxwellianV,
    UniformBoxXMaxwellianV,
    TwoBumpV,
}

impl InitialKind {
    pub fn name(&self) -> &'static str {
        match self {
            InitialKind::GaussianXMaxwellianV => "gaussian-x-maxwellian-v",
            InitialKind::UniformBoxXMaxwellianV => "uniform-box-x-maxwellian-v",
            InitialKind::TwoBumpV => "two-bump-v",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian-x-maxwellian-v" => Ok(InitialKind::GaussianXMaxwellianV),
            "uniform-box-x-maxwellian-v" => Ok(InitialKind::UniformBoxXMaxwellianV),
            "two-bump-v" => Ok(InitialKind::TwoBumpV),
            other => Err(Error::InvalidParameter(format!("unknown initial data kind `{other}`"))),
        }
    }
}

/// Spatial factor of `f0`. Both profiles have compact support.
#[derive(Clone, Debug, PartialEq)]
pub enum SpatialProfile {
    /// Isotropic Gaussian truncated to the cube `center +/- half_width`.
    Gaussian {
        center: Vector,
        sigma: f64,
        half_width: f64,
    },
    UniformBox { lo: Vector, hi: Vector },
}

/// One Maxwellian component `weight * M_beta(v - center)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityBump {
    pub center: Vector,
    pub weight: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialDataSpec {
    kind: InitialKind,
    spatial: SpatialProfile,
    bumps: Vec<VelocityBump>,
}

impl InitialDataSpec {
    pub fn gaussian_x_maxwellian_v(center: Vector, sigma: f64, half_width: f64, beta: f64) -> Result<Self> {
        let d = center.dim();
        Self::build(
            InitialKind::GaussianXMaxwellianV,
            SpatialProfile::Gaussian {
                center,
                sigma,
                half_width,
            },
            vec![VelocityBump {
                center: Vector::zeros(d),
                weight: 1.0,
                beta,
            }],
        )
    }

    pub fn uniform_box_x_maxwellian_v(lo: Vector, hi: Vector, beta: f64) -> Result<Self> {
        let d = lo.dim();
        Self::build(
            InitialKind::UniformBoxXMaxwellianV,
            SpatialProfile::UniformBox { lo, hi },
            vec![VelocityBump {
                center: Vector::zeros(d),
                weight: 1.0,
                beta,
            }],
        )
    }

    /// Spatially uniform on `[lo, hi]`, velocity a two-component Maxwellian
    /// mixture.
    pub fn two_bump_v(lo: Vector, hi: Vector, bumps: [VelocityBump; 2]) -> Result<Self> {
        Self::build(
            InitialKind::TwoBumpV,
            SpatialProfile::UniformBox { lo, hi },
            bumps.to_vec(),
        )
    }

    fn build(kind: InitialKind, spatial: SpatialProfile, bumps: Vec<VelocityBump>) -> Result<Self> {
        let spec = Self { kind, spatial, bumps };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let d = self.d();
        if d != 2 && d != 3 {
            return Err(Error::InvalidParameter(format!("d must be 2 or 3, got {d}")));
        }
        match &self.spatial {
            SpatialProfile::Gaussian {
                center,
                sigma,
                half_width,
            } => {
                if !center.is_finite() || !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidParameter("gaussian profile needs finite center and sigma > 0".into()));
                }
                if !(*half_width > 0.0 && half_width.is_finite()) {
                    return Err(Error::InvalidParameter("gaussian truncation half width must be > 0".into()));
                }
            }
            SpatialProfile::UniformBox { lo, hi } => {
                if lo.dim() != hi.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: lo.dim(),
                        found: hi.dim(),
                    });
                }
                if (0..d).any(|k| !(hi.get(k) > lo.get(k)) || !lo.is_finite() || !hi.is_finite()) {
                    return Err(Error::InvalidParameter("uniform box must have hi > lo on every axis".into()));
                }
            }
        }
        let mut total = 0.0;
        for b in &self.bumps {
            if b.center.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: b.center.dim(),
                });
            }
            if !(b.beta > 0.0 && b.beta.is_finite()) || !(b.weight >= 0.0) || !b.center.is_finite() {
                return Err(Error::InvalidParameter("velocity bumps need beta > 0 and weight >= 0".into()));
            }
            total += b.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("bump weights must sum to 1, got {total}")));
        }
        Ok(())
    }

    pub fn kind(&self) -> InitialKind {
        self.kind
    }

    pub fn spatial(&self) -> &SpatialProfile {
        &self.spatial
    }

    pub fn bumps(&self) -> &[VelocityBump] {
        &self.bumps
    }

    pub fn d(&self) -> usize {
        match &self.spatial {
            SpatialProfile::Gaussian { center, .. } => center.dim(),
            SpatialProfile::UniformBox { lo, .. } => lo.dim(),
        }
    }

    /// Axis-aligned box containing the spatial support.
    pub fn support_box(&self) -> (Vector, Vector) {
        match &self.spatial {
            SpatialProfile::Gaussian {
                center, half_width, ..
            } => {
                let h = Vector::splat(center.dim(), *half_width);
                (*center - h, *center + h)
            }
            SpatialProfile::UniformBox { lo, hi } => (*lo, *hi),
        }
    }

    pub fn spatial_density(&self, x: &Vector) -> f64 {
        let d = self.d();
        match &self.spatial {
            SpatialProfile::Gaussian {
                center,
                sigma,
                half_width,
            } => {
                let z = libm::erf(half_width / (sigma * std::f64::consts::SQRT_2));
                let mut p = 1.0;
                for k in 0..d {
                    let u = x.get(k) - center.get(k);
                    if u.abs() > *half_width {
                        return 0.0;
                    }
                    p *= (-0.5 * (u / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt() * z);
                }
                p
            }
            SpatialProfile::UniformBox { lo, hi } => {
                let mut vol = 1.0;
                for k in 0..d {
                    if x.get(k) < lo.get(k) || x.get(k) > hi.get(k) {
                        return 0.0;
                    }
                    vol *= hi.get(k) - lo.get(k);
                }
                1.0 / vol
            }
        }
    }

    pub fn velocity_density(&self, v: &Vector) -> f64 {
        let d = self.d();
        self.bumps
            .iter()
            .map(|b| b.weight * maxwellian_unchecked(b.beta, d, (*v - b.center).norm_sq()))
            .sum()
    }

    pub fn density(&self, x: &Vector, v: &Vector) -> f64 {
        self.spatial_density(x) * self.velocity_density(v)
    }

    fn spatial_sup(&self) -> f64 {
        let d = self.d() as i32;
        match &self.spatial {
            SpatialProfile::Gaussian {
                sigma, half_width, ..
            } => {
                let z = libm::erf(half_width / (sigma * std::f64::consts::SQRT_2));
                (1.0 / (sigma * (2.0 * PI).sqrt() * z)).powi(d)
            }
            SpatialProfile::UniformBox { lo, hi } => {
                let vol: f64 = (0..self.d()).map(|k| hi.get(k) - lo.get(k)).product();
                1.0 / vol
            }
        }
    }

    /// Upper bound on `C0 = sup f0 exp(beta |v|^2 / 2)`, or `None` when the
    /// weighted norm is infinite for this `beta`.
    pub fn c0(&self, beta: f64) -> Option<f64> {
        let d = self.d();
        let mut sup_v = 0.0;
        for b in &self.bumps {
            if b.weight == 0.0 {
                continue;
            }
            let norm = (b.beta / (2.0 * PI)).powf(d as f64 / 2.0);
            let u_sq = b.center.norm_sq();
            let value = if beta < b.beta {
                norm * (beta * b.beta * u_sq / (2.0 * (b.beta - beta))).exp()
            } else if beta == b.beta && u_sq == 0.0 {
                norm
            } else {
                return None;
            };
            sup_v += b.weight * value;
        }
        Some(self.spatial_sup() * sup_v)
    }

    pub fn sample_phase_point<R: Rng + ?Sized>(&self, rng: &mut R) -> PhasePoint {
        let d = self.d();
        let mut x = Vector::zeros(d);
        match &self.spatial {
            SpatialProfile::Gaussian {
                center,
                sigma,
                half_width,
            } => {
                for k in 0..d {
                    let u = loop {
                        let z: f64 = StandardNormal.sample(rng);
                        let u = sigma * z;
                        if u.abs() <= *half_width {
                            break u;
                        }
                    };
                    x.set(k, center.get(k) + u);
                }
            }
            SpatialProfile::UniformBox { lo, hi } => {
                for k in 0..d {
                    let u: f64 = rng.random();
                    x.set(k, lo.get(k) + u * (hi.get(k) - lo.get(k)));
                }
            }
        }
        let bump = self.pick_bump(rng);
        let mut v = bump.center;
        let scale = 1.0 / bump.beta.sqrt();
        for k in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            v.set(k, bump.center.get(k) + scale * z);
        }
        PhasePoint { x, v }
    }

    fn pick_bump<R: Rng + ?Sized>(&self, rng: &mut R) -> &VelocityBump {
        if self.bumps.len() == 1 {
            return &self.bumps[0];
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for b in &self.bumps {
            acc += b.weight;
            if u < acc {
                return b;
            }
        }
        self.bumps.iter().rev().find(|b| b.weight > 0.0).unwrap_or(&self.bumps[0])
    }
}

fn check_dims(params: &ModelParams, spec: &InitialDataSpec) -> Result<()> {
    if params.d() != spec.d() {
        return Err(Error::DimensionMismatch {
            expected: params.d(),
            found: spec.d(),
        });
    }
    Ok(())
}

fn draw_count<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> usize {
    if mu <= 0.0 {
        return 0;
    }
    let poisson = Poisson::new(mu).expect("finite positive Poisson mean");
    poisson.sample(rng) as usize
}

/// One unconditioned draw; `None` as soon as two spheres overlap.
fn try_draw<R: Rng + ?Sized>(
    params: &ModelParams,
    spec: &InitialDataSpec,
    grid: &mut CellHash,
    rng: &mut R,
    fixed_n: Option<usize>,
) -> Option<Vec<PhasePoint>> {
    let n = fixed_n.unwrap_or_else(|| draw_count(params.mu(), rng));
    let eps = params.eps();
    grid.reset(eps);
    let mut particles: Vec<PhasePoint> = Vec::with_capacity(n);
    for id in 0..n {
        let p = spec.sample_phase_point(rng);
        let mut overlap = false;
        grid.for_each_neighbor(&p.x, |j| {
            if !overlap && (particles[j as usize].x - p.x).norm_sq() < eps * eps {
                overlap = true;
            }
        });
        if overlap {
            return None;
        }
        grid.insert(id as u32, &p.x);
        particles.push(p);
    }
    Some(particles)
}

/// Samples the grand-canonical hard-sphere configuration at `t = 0`.
///
/// Each attempt redraws the particle number together with all phase
/// points, so acceptance tilts the law of `N` exactly as the conditioned
/// Poisson measure requires.
pub fn sample_configuration<R: Rng + ?Sized>(
    params: &ModelParams,
    spec: &InitialDataSpec,
    rng: &mut R,
    max_retries: usize,
) -> Result<Configuration> {
    check_dims(params, spec)?;
    let attempts = max_retries.max(1);
    let mut grid = CellHash::new(params.eps());
    for _ in 0..attempts {
        if let Some(particles) = try_draw(params, spec, &mut grid, rng, None) {
            return Configuration::new(0.0, params.d(), particles);
        }
    }
    Err(Error::RetriesExhausted {
        attempts,
        rejection_rate: 1.0,
    })
}

/// Canonical variant: exactly `n` particles, i.i.d. from `f0` conditioned
/// on exclusion.
pub fn sample_configuration_n<R: Rng + ?Sized>(
    params: &ModelParams,
    spec: &InitialDataSpec,
    n: usize,
    rng: &mut R,
    max_retries: usize,
) -> Result<Configuration> {
    check_dims(params, spec)?;
    let attempts = max_retries.max(1);
    let mut grid = CellHash::new(params.eps());
    for _ in 0..attempts {
        if let Some(particles) = try_draw(params, spec, &mut grid, rng, Some(n)) {
            return Configuration::new(0.0, params.d(), particles);
        }
    }
    Err(Error::RetriesExhausted {
        attempts,
        rejection_rate: 1.0,
    })
}

/// Fraction of unconditioned draws that satisfy the exclusion condition.
pub fn acceptance_rate_probe<R: Rng + ?Sized>(
    params: &ModelParams,
    spec: &InitialDataSpec,
    n_trials: usize,
    rng: &mut R,
) -> Result<f64> {
    check_dims(params, spec)?;
    if n_trials == 0 {
        return Err(Error::InvalidParameter("n_trials must be >= 1".into()));
    }
    let mut grid = CellHash::new(params.eps());
    let accepted = (0..n_trials)
        .filter(|_| try_draw(params, spec, &mut grid, rng, None).is_some())
        .count();
    Ok(accepted as f64 / n_trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn unit_box(d: usize) -> (Vector, Vector) {
        (Vector::zeros(d), Vector::splat(d, 1.0))
    }

    #[test]
    fn degenerate_mixture_uses_first_bump() {
        let (lo, hi) = unit_box(2);
        let spec = InitialDataSpec::two_bump_v(
            lo,
            hi,
            [
                VelocityBump {
                    center: Vector::new2(-10.0, 0.0),
                    weight: 1.0,
                    beta: 4.0,
                },
                VelocityBump {
                    center: Vector::new2(10.0, 0.0),
                    weight: 0.0,
                    beta: 4.0,
                },
            ],
        )
        .unwrap();
        let mut rng = RngStream::new(1, 0).rng();
        for _ in 0..2000 {
            let p = spec.sample_phase_point(&mut rng);
            assert!(p.v.get(0) < 0.0);
        }
    }

    #[test]
    fn maxwellian_second_moment() {
        let spec = InitialDataSpec::gaussian_x_maxwellian_v(Vector::zeros(2), 0.5, 2.0, 1.0).unwrap();
        let mut rng = RngStream::new(2, 0).rng();
        let n = 100_000;
        let samples: Vec<f64> = (0..n).map(|_| spec.sample_phase_point(&mut rng).v.norm_sq()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn uniform_marginal_passes_ks() {
        let spec = InitialDataSpec::uniform_box_x_maxwellian_v(Vector::new2(-1.0, 0.0), Vector::new2(3.0, 1.0), 1.0).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n).map(|_| spec.sample_phase_point(&mut rng).x.get(0)).collect();
        xs.sort_by(f64::total_cmp);
        let mut ks = 0.0f64;
        for (i, x) in xs.iter().enumerate() {
            let cdf = (x + 1.0) / 4.0;
            ks = ks.max((cdf - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - cdf).abs());
        }
        // Asymptotic 1% critical value of the one-sample KS statistic.
        assert!(ks < 1.628 / (n as f64).sqrt(), "KS = {ks}");
    }

    #[test]
    fn truncated_gaussian_density_is_normalized() {
        let spec = InitialDataSpec::gaussian_x_maxwellian_v(Vector::new2(0.3, -0.2), 0.4, 0.9, 1.0).unwrap();
        let h = 0.01;
        let mut mass = 0.0;
        for i in 0..200 {
            for j in 0..200 {
                let x = Vector::new2(-0.6 + (i as f64 + 0.5) * h, -1.1 + (j as f64 + 0.5) * h);
                mass += spec.spatial_density(&x) * h * h;
            }
        }
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    }

    #[test]
    fn c0_bounds() {
        let g = InitialDataSpec::gaussian_x_maxwellian_v(Vector::zeros(2), 0.5, 2.0, 1.0).unwrap();
        assert!(g.c0(1.0).is_some());
        assert!(g.c0(1.5).is_none());
        let (lo, hi) = unit_box(2);
        let b = InitialDataSpec::two_bump_v(
            lo,
            hi,
            [
                VelocityBump { center: Vector::new2(1.0, 0.0), weight: 0.5, beta: 2.0 },
                VelocityBump { center: Vector::new2(-1.0, 0.0), weight: 0.5, beta: 2.0 },
            ],
        )
        .unwrap();
        assert!(b.c0(2.0).is_none());
        let c = b.c0(1.0).unwrap();
        // Scan of the weighted velocity density on a fine grid stays below the bound.
        let mut scan = 0.0f64;
        for i in 0..161 {
            for j in 0..161 {
                let v = Vector::new2(-8.0 + 0.1 * i as f64, -8.0 + 0.1 * j as f64);
                scan = scan.max(b.velocity_density(&v) * (0.5 * v.norm_sq()).exp());
            }
        }
        assert!(scan <= c * (1.0 + 1e-12));
    }

    #[test]
    fn bad_weights_rejected() {
        let (lo, hi) = unit_box(2);
        let bump = VelocityBump { center: Vector::zeros(2), weight: 0.7, beta: 1.0 };
        assert!(InitialDataSpec::two_bump_v(lo, hi, [bump, bump]).is_err());
        assert!(InitialDataSpec::uniform_box_x_maxwellian_v(hi, lo, 1.0).is_err());
    }

    #[test]
    fn empty_draws_occur_at_rate_exp_minus_mu() {
        // d = 3 with eps = 1/sqrt(0.7) gives mu = 0.7.
        let eps = (1.0f64 / 0.7).sqrt();
        let params = ModelParams::new(3, eps, 1.0).unwrap();
        let spec = InitialDataSpec::uniform_box_x_maxwellian_v(Vector::splat(3, 0.0), Vector::splat(3, 50.0), 1.0).unwrap();
        let mut rng = RngStream::new(4, 0).rng();
        let n = 20_000;
        let empty = (0..n)
            .filter(|_| sample_configuration(&params, &spec, &mut rng, 100).unwrap().is_empty())
            .count();
        let p = (-0.7f64).exp();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((empty as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn poisson_mean_and_exclusion() {
        let params = ModelParams::new(2, 1e-3, 1.0).unwrap();
        let (lo, hi) = unit_box(2);
        let spec = InitialDataSpec::uniform_box_x_maxwellian_v(lo, hi, 1.0).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        let draws = 200;
        let mut total = 0usize;
        for _ in 0..draws {
            let c = sample_configuration(&params, &spec, &mut rng, 10_000).unwrap();
            c.check_exclusion(params.eps()).unwrap();
            total += c.len();
        }
        let mean = total as f64 / draws as f64;
        assert!((978.0..=1022.0).contains(&mean), "mean N = {mean}");
        let sigma = (1000.0f64 / draws as f64).sqrt() / 1000.0;
        assert!((mean / params.mu() - 1.0).abs() < 4.0 * sigma);
    }

    #[test]
    fn sampling_is_deterministic() {
        let params = ModelParams::new(2, 1e-2, 1.0).unwrap();
        let spec = InitialDataSpec::gaussian_x_maxwellian_v(Vector::zeros(2), 0.3, 1.0, 1.0).unwrap();
        let a = sample_configuration(&params, &spec, &mut RngStream::new(9, 4).rng(), 1000).unwrap();
        let b = sample_configuration(&params, &spec, &mut RngStream::new(9, 4).rng(), 1000).unwrap();
        assert_eq!(a, b);
        let c = sample_configuration(&params, &spec, &mut RngStream::new(9, 5).rng(), 1000).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn retries_exhausted_reports_rate() {
        // 1000 spheres of diameter 0.1 in a 0.05 box cannot avoid overlap.
        let params = ModelParams::new(2, 0.1, 1.0).unwrap();
        let spec = InitialDataSpec::uniform_box_x_maxwellian_v(Vector::zeros(2), Vector::splat(2, 0.05), 1.0).unwrap();
        let err = sample_configuration(&params, &spec, &mut RngStream::new(6, 0).rng(), 5).unwrap_err();
        match err {
            Error::RetriesExhausted { attempts, rejection_rate } => {
                assert_eq!(attempts, 5);
                assert_eq!(rejection_rate, 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn probe_rates() {
        let mut rng = RngStream::new(8, 0).rng();
        // Dilute: mu = 100, pair overlap volume ~ pi eps^2 / area = 3e-4 per pair.
        let params = ModelParams::new(2, 1e-2, 1.0).unwrap();
        let wide = InitialDataSpec::uniform_box_x_maxwellian_v(Vector::zeros(2), Vector::splat(2, 5.0), 1.0).unwrap();
        // Expected overlapping pairs: mu^2/2 * pi eps^2 / 25 = 0.063.
        let rate = acceptance_rate_probe(&params, &wide, 500, &mut rng).unwrap();
        assert!(rate >= 0.9, "{rate}");
        // Support narrower than eps with mu = 100 particles: always overlapping.
        let tiny = InitialDataSpec::uniform_box_x_maxwellian_v(Vector::zeros(2), Vector::splat(2, 0.005), 1.0).unwrap();
        assert_eq!(acceptance_rate_probe(&params, &tiny, 50, &mut rng).unwrap(), 0.0);
        let one = acceptance_rate_probe(&params, &wide, 1, &mut rng).unwrap();
        assert!(one == 0.0 || one == 1.0);
        assert!(acceptance_rate_probe(&params, &wide, 0, &mut rng).is_err());
    }
}
