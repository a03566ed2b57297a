//! Phase-space kinematics: vectors, model parameters, configurations, the
//! hard-sphere scattering law, Maxwellians and the weighted norms used as
//! convergence metrics.
//!
//! Vectors carry their dimension at run time (`d` is 2 or 3). In two
//! dimensions the third storage slot is kept at zero, so all arithmetic can
//! run on three components without branching.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::cells::CellHash;
use crate::error::{Error, Result};

/// Tolerance on `|omega| = 1` accepted by [`scatter`].
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// Relative slack on the exclusion condition `|x_i - x_j| >= eps`.
pub const EXCLUSION_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vector {
    dim: u8,
    c: [f64; 3],
}

impl Vector {
    pub fn zeros(d: usize) -> Self {
        debug_assert!(d == 2 || d == 3);
        Self {
            dim: d as u8,
            c: [0.0; 3],
        }
    }

    pub fn new2(x: f64, y: f64) -> Self {
        Self {
            dim: 2,
            c: [x, y, 0.0],
        }
    }

    pub fn new3(x: f64, y: f64, z: f64) -> Self {
        Self {
            dim: 3,
            c: [x, y, z],
        }
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        match *s {
            [x, y] => Ok(Self::new2(x, y)),
            [x, y, z] => Ok(Self::new3(x, y, z)),
            _ => Err(Error::InvalidParameter(format!(
                "vectors have 2 or 3 components, got {}",
                s.len()
            ))),
        }
    }

    /// Vector with every component equal to `value`.
    pub fn splat(d: usize, value: f64) -> Self {
        let mut v = Self::zeros(d);
        for k in 0..d {
            v.c[k] = value;
        }
        v
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.c[..self.dim as usize]
    }

    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        self.c[k]
    }

    #[inline]
    pub fn set(&mut self, k: usize, value: f64) {
        debug_assert!(k < self.dim as usize);
        self.c[k] = value;
    }

    #[inline]
    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.c[0] * other.c[0] + self.c[1] * other.c[1] + self.c[2] * other.c[2]
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|x| x.is_finite())
    }

    fn check_dim(&self, other: &Vector) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

impl Add for Vector {
    type Output = Vector;
    #[inline]
    fn add(self, rhs: Vector) -> Vector {
        debug_assert_eq!(self.dim, rhs.dim);
        Vector {
            dim: self.dim,
            c: [
                self.c[0] + rhs.c[0],
                self.c[1] + rhs.c[1],
                self.c[2] + rhs.c[2],
            ],
        }
    }
}

impl Sub for Vector {
    type Output = Vector;
    #[inline]
    fn sub(self, rhs: Vector) -> Vector {
        debug_assert_eq!(self.dim, rhs.dim);
        Vector {
            dim: self.dim,
            c: [
                self.c[0] - rhs.c[0],
                self.c[1] - rhs.c[1],
                self.c[2] - rhs.c[2],
            ],
        }
    }
}

impl Mul<f64> for Vector {
    type Output = Vector;
    #[inline]
    fn mul(self, s: f64) -> Vector {
        Vector {
            dim: self.dim,
            c: [self.c[0] * s, self.c[1] * s, self.c[2] * s],
        }
    }
}

impl Neg for Vector {
    type Output = Vector;
    #[inline]
    fn neg(self) -> Vector {
        Vector {
            dim: self.dim,
            c: [-self.c[0], -self.c[1], -self.c[2]],
        }
    }
}

impl AddAssign for Vector {
    #[inline]
    fn add_assign(&mut self, rhs: Vector) {
        *self = *self + rhs;
    }
}

impl SubAssign for Vector {
    #[inline]
    fn sub_assign(&mut self, rhs: Vector) {
        *self = *self - rhs;
    }
}

/// Dimension, sphere diameter, Boltzmann–Grad intensity and inverse
/// temperature of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    d: usize,
    eps: f64,
    mu: f64,
    beta: f64,
}

impl ModelParams {
    /// Builds parameters in the Boltzmann–Grad scaling `mu = eps^-(d-1)`.
    pub fn new(d: usize, eps: f64, beta: f64) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::InvalidParameter(format!("d must be 2 or 3, got {d}")));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
        }
        let mu = eps.powi(-(d as i32 - 1));
        Ok(Self { d, eps, mu, beta })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint {
    pub x: Vector,
    pub v: Vector,
}

impl PhasePoint {
    pub fn new(x: Vector, v: Vector) -> Result<Self> {
        x.check_dim(&v)?;
        if !(x.is_finite() && v.is_finite()) {
            return Err(Error::InvalidParameter("phase point has non-finite components".into()));
        }
        Ok(Self { x, v })
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }
}

/// Particle phase points at one time. Particle ids are the indices `0..len`.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    pub t: f64,
    d: usize,
    particles: Vec<PhasePoint>,
}

impl Configuration {
    pub fn new(t: f64, d: usize, particles: Vec<PhasePoint>) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::InvalidParameter(format!("d must be 2 or 3, got {d}")));
        }
        for (id, p) in particles.iter().enumerate() {
            if p.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: p.dim(),
                });
            }
            if !(p.x.is_finite() && p.v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "particle {id} has non-finite components"
                )));
            }
        }
        if !t.is_finite() {
            return Err(Error::InvalidParameter("configuration time must be finite".into()));
        }
        Ok(Self { t, d, particles })
    }

    pub fn empty(t: f64, d: usize) -> Self {
        Self {
            t,
            d,
            particles: Vec::new(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[PhasePoint] {
        &self.particles
    }

    pub fn into_particles(self) -> Vec<PhasePoint> {
        self.particles
    }

    /// Closest pair among those closer than `radius`, as `(distance, i, j)`.
    pub fn closest_pair_within(&self, radius: f64) -> Option<(f64, u32, u32)> {
        let positions: Vec<Vector> = self.particles.iter().map(|p| p.x).collect();
        closest_pair_within(&positions, radius)
    }

    /// Checks the hard-sphere exclusion `|x_i - x_j| >= eps` up to
    /// `EXCLUSION_TOLERANCE * eps`.
    pub fn check_exclusion(&self, eps: f64) -> Result<()> {
        self.check_exclusion_with(eps, EXCLUSION_TOLERANCE)
    }

    pub fn check_exclusion_with(&self, eps: f64, rel_tol: f64) -> Result<()> {
        if let Some((dist, i, j)) = self.closest_pair_within(eps) {
            if dist < eps * (1.0 - rel_tol) {
                return Err(Error::Contract(format!(
                    "particles {i} and {j} overlap: distance {dist:e} < eps {eps:e}"
                )));
            }
        }
        Ok(())
    }

    pub fn total_momentum(&self) -> Vector {
        self.particles
            .iter()
            .fold(Vector::zeros(self.d), |acc, p| acc + p.v)
    }

    /// Sum of `|v|^2 / 2` over particles.
    pub fn total_energy(&self) -> f64 {
        self.particles.iter().map(|p| 0.5 * p.v.norm_sq()).sum()
    }
}

pub(crate) fn closest_pair_within(positions: &[Vector], radius: f64) -> Option<(f64, u32, u32)> {
    if positions.len() < 2 || !(radius > 0.0) {
        return None;
    }
    let mut grid = CellHash::new(radius);
    for (i, x) in positions.iter().enumerate() {
        grid.insert(i as u32, x);
    }
    let mut best: Option<(f64, u32, u32)> = None;
    for (i, xi) in positions.iter().enumerate() {
        grid.for_each_neighbor(xi, |j| {
            let j = j as usize;
            if j <= i {
                return;
            }
            let dist = (*xi - positions[j]).norm();
            if dist < radius && best.map_or(true, |(b, _, _)| dist < b) {
                best = Some((dist, i as u32, j as u32));
            }
        });
    }
    best
}

/// Elastic hard-sphere scattering: the normal components of the two
/// velocities along `omega` are exchanged.
pub fn scatter(v: Vector, v_star: Vector, omega: Vector) -> Result<(Vector, Vector)> {
    v.check_dim(&v_star)?;
    v.check_dim(&omega)?;
    let n = omega.norm();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::Contract(format!(
            "scattering direction must be a unit vector, |omega| = {n}"
        )));
    }
    Ok(scatter_unchecked(v, v_star, omega))
}

#[inline]
pub(crate) fn scatter_unchecked(v: Vector, v_star: Vector, omega: Vector) -> (Vector, Vector) {
    let c = (v - v_star).dot(&omega);
    let dv = omega * c;
    (v - dv, v_star + dv)
}

/// Difference of summed momentum and summed `|v|^2` between a post- and a
/// pre-collision velocity pair.
pub fn collision_invariant_defect(
    pre: (Vector, Vector),
    post: (Vector, Vector),
) -> Result<(Vector, f64)> {
    let d = pre.0.dim();
    for w in [&pre.1, &post.0, &post.1] {
        if w.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: w.dim(),
            });
        }
    }
    let momentum = (post.0 + post.1) - (pre.0 + pre.1);
    let energy = (post.0.norm_sq() + post.1.norm_sq()) - (pre.0.norm_sq() + pre.1.norm_sq());
    Ok((momentum, energy))
}

/// `M_beta(v) = (beta / 2 pi)^(d/2) exp(-beta |v|^2 / 2)`.
pub fn maxwellian(beta: f64, v: &Vector) -> Result<f64> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    Ok(maxwellian_unchecked(beta, v.dim(), v.norm_sq()))
}

#[inline]
pub(crate) fn maxwellian_unchecked(beta: f64, d: usize, v_sq: f64) -> f64 {
    (beta / (2.0 * PI)).powf(d as f64 / 2.0) * (-0.5 * beta * v_sq).exp()
}

/// Discrete `L^inf_beta` norm: max over nodes of `|f| exp(beta |v|^2 / 2)`.
pub fn weighted_sup_norm<I>(samples: I, beta: f64) -> Result<f64>
where
    I: IntoIterator<Item = (Vector, f64)>,
{
    let mut best = 0.0f64;
    for (v, value) in samples {
        if !(value.is_finite() && v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite grid value".into()));
        }
        best = best.max(value.abs() * (0.5 * beta * v.norm_sq()).exp());
    }
    Ok(best)
}

/// Discrete `L^{inf,1}_beta` norm: sum over lattice points `k` of the
/// weighted sup of `f` over grid nodes with `|x - k| <= 1`.
///
/// The unit balls around neighbouring lattice points overlap, so a node can
/// contribute to several terms.
pub fn l_inf1_norm<I>(samples: I, beta: f64) -> Result<f64>
where
    I: IntoIterator<Item = (Vector, Vector, f64)>,
{
    let mut local: BTreeMap<[i64; 3], f64> = BTreeMap::new();
    for (x, v, value) in samples {
        if !(x.is_finite() && v.is_finite() && value.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite grid node: support must be a bounded box".into(),
            ));
        }
        let w = value.abs() * (0.5 * beta * v.norm_sq()).exp();
        if w == 0.0 {
            continue;
        }
        let d = x.dim();
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for k in 0..d {
            lo[k] = (x.get(k) - 1.0).ceil() as i64;
            hi[k] = (x.get(k) + 1.0).floor() as i64;
        }
        let z_range = if d == 3 { lo[2]..=hi[2] } else { 0..=0 };
        for kx in lo[0]..=hi[0] {
            for ky in lo[1]..=hi[1] {
                for kz in z_range.clone() {
                    let mut dist_sq = (x.get(0) - kx as f64).powi(2) + (x.get(1) - ky as f64).powi(2);
                    if d == 3 {
                        dist_sq += (x.get(2) - kz as f64).powi(2);
                    }
                    if dist_sq <= 1.0 {
                        let entry = local.entry([kx, ky, kz]).or_insert(0.0);
                        *entry = entry.max(w);
                    }
                }
            }
        }
    }
    Ok(local.values().sum())
}
