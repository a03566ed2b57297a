use std::f64::consts::PI;

use crate::dense::{Axis, DenseArray};
use crate::error::{Error, Result};
use crate::estimators::BinningSpec;
use crate::phase::Vector;

/// Cell-centered velocity nodes on `[-v_max, v_max]^d`, `n` per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityGrid {
    d: usize,
    v_max: f64,
    n: usize,
}

impl VelocityGrid {
    pub fn new(d: usize, v_max: f64, n: usize) -> Result<Self> {
        if !(2..=3).contains(&d) {
            return Err(Error::InvalidParameter(format!("dimension must be 2 or 3, got {d}")));
        }
        if !(v_max > 0.0 && v_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("v_max must be positive, got {v_max}")));
        }
        if n < 8 {
            return Err(Error::InvalidParameter(format!("need at least 8 velocity nodes per axis, got {n}")));
        }
        Ok(Self { d, v_max, n })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.v_max / self.n as f64
    }

    /// `dv^d`.
    pub fn cell_measure(&self) -> f64 {
        self.dv().powi(self.d as i32)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, k: usize) -> f64 {
        -self.v_max + (k as f64 + 0.5) * self.dv()
    }

    /// Node velocity for a row-major flat index.
    pub fn node(&self, mut flat: usize) -> Vector {
        let mut v = Vector::zeros(self.d);
        for axis in (0..self.d).rev() {
            v.set(axis, self.coord(flat % self.n));
            flat /= self.n;
        }
        v
    }

    pub fn nodes(&self) -> Vec<Vector> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    /// Index of the node mirrored through the origin.
    pub fn mirror(&self, mut flat: usize) -> usize {
        let mut out = 0;
        let mut scale = 1;
        for _ in 0..self.d {
            let k = flat % self.n;
            flat /= self.n;
            out += (self.n - 1 - k) * scale;
            scale *= self.n;
        }
        out
    }

    pub fn axes(&self) -> Vec<Axis> {
        let names = ["v1", "v2", "v3"];
        (0..self.d)
            .map(|k| Axis::new(names[k], self.n, -self.v_max, self.v_max).expect("validated grid"))
            .collect()
    }
}

/// Uniform cells on the box `[lo, hi]`, `n` per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialGrid {
    lo: Vector,
    hi: Vector,
    n: usize,
}

impl SpatialGrid {
    pub fn new(lo: Vector, hi: Vector, n: usize) -> Result<Self> {
        if lo.dim() != hi.dim() {
            return Err(Error::DimensionMismatch {
                expected: lo.dim(),
                found: hi.dim(),
            });
        }
        if !(lo.is_finite() && hi.is_finite()) || (0..lo.dim()).any(|k| !(hi.get(k) > lo.get(k))) {
            return Err(Error::InvalidParameter("spatial box must be finite and nonempty".into()));
        }
        if n < 2 {
            return Err(Error::InvalidParameter("need at least 2 spatial cells per axis".into()));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn centered(d: usize, half: f64, n: usize) -> Result<Self> {
        Self::new(Vector::splat(d, -half), Vector::splat(d, half), n)
    }

    pub fn d(&self) -> usize {
        self.lo.dim()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lo(&self) -> Vector {
        self.lo
    }

    pub fn hi(&self) -> Vector {
        self.hi
    }

    pub fn dx(&self, axis: usize) -> f64 {
        (self.hi.get(axis) - self.lo.get(axis)) / self.n as f64
    }

    pub fn cell_measure(&self) -> f64 {
        (0..self.d()).map(|k| self.dx(k)).product()
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn center(&self, mut flat: usize) -> Vector {
        let d = self.d();
        let mut x = Vector::zeros(d);
        for axis in (0..d).rev() {
            let k = flat % self.n;
            flat /= self.n;
            x.set(axis, self.lo.get(axis) + (k as f64 + 0.5) * self.dx(axis));
        }
        x
    }

    pub fn axes(&self) -> Vec<Axis> {
        let names = ["x1", "x2", "x3"];
        (0..self.d())
            .map(|k| Axis::new(names[k], self.n, self.lo.get(k), self.hi.get(k)).expect("validated grid"))
            .collect()
    }
}

/// Nodes and weights on the unit sphere, closed under `omega -> -omega`.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularQuadrature {
    d: usize,
    nodes: Vec<Vector>,
    weights: Vec<f64>,
}

impl AngularQuadrature {
    /// `n` equally spaced angles on the circle; `n` must be even.
    pub fn uniform_circle(n: usize) -> Result<Self> {
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidParameter(format!("need an even number of angles, got {n}")));
        }
        let nodes = (0..n)
            .map(|l| {
                let th = 2.0 * PI * l as f64 / n as f64;
                Vector::new2(th.cos(), th.sin())
            })
            .collect();
        Ok(Self {
            d: 2,
            nodes,
            weights: vec![2.0 * PI / n as f64; n],
        })
    }

    /// The 12 vertices of a regular icosahedron with equal weights, a
    /// spherical 5-design.
    pub fn icosahedral() -> Self {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let s = 1.0 / (1.0 + phi * phi).sqrt();
        let mut nodes = Vec::with_capacity(12);
        for a in [-1.0, 1.0] {
            for b in [-phi, phi] {
                nodes.push(Vector::new3(0.0, a * s, b * s));
                nodes.push(Vector::new3(a * s, b * s, 0.0));
                nodes.push(Vector::new3(b * s, 0.0, a * s));
            }
        }
        Self {
            d: 3,
            nodes,
            weights: vec![4.0 * PI / 12.0; 12],
        }
    }

    pub fn default_for(d: usize, n_omega: usize) -> Result<Self> {
        match d {
            2 => Self::uniform_circle(n_omega),
            3 => Ok(Self::icosahedral()),
            _ => Err(Error::InvalidParameter(format!("dimension must be 2 or 3, got {d}"))),
        }
    }

    /// Same nodes with every weight multiplied by `factor`; zero switches
    /// collisions off.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            d: self.d,
            nodes: self.nodes.clone(),
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn nodes(&self) -> &[Vector] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// One node of each antipodal pair, with its weight.
    pub(crate) fn half(&self) -> Vec<(Vector, f64)> {
        let mut out: Vec<(Vector, f64)> = Vec::with_capacity(self.nodes.len() / 2);
        for (k, (&w, om)) in self.weights.iter().zip(&self.nodes).enumerate() {
            let has_partner_before = self.nodes[..k].iter().any(|o| (*o + *om).max_abs() < 1e-12);
            if !has_partner_before {
                out.push((*om, w));
            }
        }
        out
    }
}

/// `f(v)` on a velocity grid, or `f(x, v)` with an added spatial grid.
/// Values are stored spatial-cell-major with velocity contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionField {
    pub vgrid: VelocityGrid,
    pub sgrid: Option<SpatialGrid>,
    pub values: Vec<f64>,
}

impl DistributionField {
    pub fn zeros(vgrid: VelocityGrid, sgrid: Option<SpatialGrid>) -> Result<Self> {
        if let Some(s) = &sgrid {
            if s.d() != vgrid.d() {
                return Err(Error::DimensionMismatch {
                    expected: vgrid.d(),
                    found: s.d(),
                });
            }
        }
        let cells = sgrid.map_or(1, |s| s.len());
        Ok(Self {
            vgrid,
            sgrid,
            values: vec![0.0; cells * vgrid.len()],
        })
    }

    pub fn homogeneous(vgrid: VelocityGrid, f: impl Fn(&Vector) -> f64) -> Self {
        let values = vgrid.nodes().iter().map(f).collect();
        Self {
            vgrid,
            sgrid: None,
            values,
        }
    }

    pub fn inhomogeneous(vgrid: VelocityGrid, sgrid: SpatialGrid, f: impl Fn(&Vector, &Vector) -> f64) -> Result<Self> {
        let mut out = Self::zeros(vgrid, Some(sgrid))?;
        let nodes = vgrid.nodes();
        let nv = nodes.len();
        for c in 0..sgrid.len() {
            let x = sgrid.center(c);
            for (k, v) in nodes.iter().enumerate() {
                out.values[c * nv + k] = f(&x, v);
            }
        }
        Ok(out)
    }

    /// The Maxwellian `M_beta` at the nodes.
    pub fn maxwellian(vgrid: VelocityGrid, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        let d = vgrid.d();
        Ok(Self::homogeneous(vgrid, |v| {
            crate::phase::maxwellian_unchecked(beta, d, v.norm_sq())
        }))
    }

    pub fn is_homogeneous(&self) -> bool {
        self.sgrid.is_none()
    }

    pub fn n_cells(&self) -> usize {
        self.sgrid.map_or(1, |s| s.len())
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let nv = self.vgrid.len();
        &self.values[c * nv..(c + 1) * nv]
    }

    pub fn cell_mut(&mut self, c: usize) -> &mut [f64] {
        let nv = self.vgrid.len();
        &mut self.values[c * nv..(c + 1) * nv]
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.vgrid != other.vgrid || self.sgrid != other.sgrid {
            return Err(Error::ShapeMismatch("fields live on different grids".into()));
        }
        Ok(())
    }

    /// Phase-space measure of one node: `dv^d`, times `dx^d` if spatial.
    pub fn node_measure(&self) -> f64 {
        self.vgrid.cell_measure() * self.sgrid.map_or(1.0, |s| s.cell_measure())
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.node_measure()
    }

    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum();
        Ok(s * self.node_measure())
    }

    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn to_dense(&self) -> DenseArray {
        let mut axes = self.sgrid.map_or_else(Vec::new, |s| s.axes());
        axes.extend(self.vgrid.axes());
        DenseArray::new(axes, self.values.clone()).expect("field shape matches its grids")
    }

    pub fn from_dense(a: &DenseArray) -> Result<Self> {
        let rank = a.axes.len();
        let d = match rank {
            2 | 3 => rank,
            4 | 6 => rank / 2,
            _ => return Err(Error::ShapeMismatch(format!("rank {rank} is not a distribution field"))),
        };
        let vaxes = &a.axes[rank - d..];
        let n = vaxes[0].cells;
        let v_max = vaxes[0].hi;
        let symmetric = vaxes
            .iter()
            .all(|ax| ax.cells == n && (ax.hi - v_max).abs() <= 1e-12 * v_max && (ax.lo + v_max).abs() <= 1e-12 * v_max);
        if !symmetric {
            return Err(Error::ShapeMismatch("velocity axes are not a symmetric cube".into()));
        }
        let vgrid = VelocityGrid::new(d, v_max, n)?;
        let sgrid = if rank > d {
            let sax = &a.axes[..d];
            let ns = sax[0].cells;
            if sax.iter().any(|ax| ax.cells != ns) {
                return Err(Error::ShapeMismatch("spatial axes must share a cell count".into()));
            }
            let lo: Vec<f64> = sax.iter().map(|ax| ax.lo).collect();
            let hi: Vec<f64> = sax.iter().map(|ax| ax.hi).collect();
            Some(SpatialGrid::new(Vector::from_slice(&lo)?, Vector::from_slice(&hi)?, ns)?)
        } else {
            None
        };
        Ok(Self {
            vgrid,
            sgrid,
            values: a.data.clone(),
        })
    }

    /// Cell averages on a coarser binning whose cells are unions of grid
    /// cells, as a dense array with the binning's axes.
    pub fn project(&self, spec: &BinningSpec) -> Result<DenseArray> {
        let sgrid = self
            .sgrid
            .ok_or_else(|| Error::ShapeMismatch("projection needs a spatial grid".into()))?;
        let d = self.vgrid.d();
        if spec.d() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: spec.d(),
            });
        }
        let (xlo, xhi) = spec.x_box();
        let (vlo, vhi) = spec.v_box();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        let mut aligned = sgrid.n() % spec.nx() == 0 && self.vgrid.n() % spec.nv() == 0;
        for k in 0..d {
            aligned &= close(xlo.get(k), sgrid.lo().get(k)) && close(xhi.get(k), sgrid.hi().get(k));
            aligned &= close(vlo.get(k), -self.vgrid.v_max()) && close(vhi.get(k), self.vgrid.v_max());
        }
        if !aligned {
            return Err(Error::ShapeMismatch(format!(
                "binning ({}^{d} x {}^{d} cells) does not coarsen the solver grid ({}^{d} x {}^{d})",
                spec.nx(),
                spec.nv(),
                sgrid.n(),
                self.vgrid.n()
            )));
        }
        let rx = sgrid.n() / spec.nx();
        let rv = self.vgrid.n() / spec.nv();
        let mut sums = vec![0.0; spec.n_cells()];
        let nv = self.vgrid.len();
        for c in 0..sgrid.len() {
            let mut xi = c;
            let mut bx = 0;
            let mut scale = 1;
            for _ in 0..d {
                bx += (xi % sgrid.n()) / rx * scale;
                xi /= sgrid.n();
                scale *= spec.nx();
            }
            for k in 0..nv {
                let mut vi = k;
                let mut bv = 0;
                let mut scale = 1;
                for _ in 0..d {
                    bv += (vi % self.vgrid.n()) / rv * scale;
                    vi /= self.vgrid.n();
                    scale *= spec.nv();
                }
                sums[bx * spec.nv().pow(d as u32) + bv] += self.values[c * nv + k];
            }
        }
        let per_bin = (rx * rv).pow(d as u32) as f64;
        DenseArray::new(spec.axes(), sums.into_iter().map(|s| s / per_bin).collect())
    }
}
