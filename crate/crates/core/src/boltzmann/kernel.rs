use std::f64::consts::PI;

use rayon::prelude::*;

use super::grid::{AngularQuadrature, DistributionField, VelocityGrid};
use crate::error::{Error, Result};
use crate::phase::Vector;

/// Largest velocity node count accepted by [`CollisionOperator::new`].
pub const DEFAULT_NODE_BUDGET: usize = 1 << 14;

/// Values below this are ignored by the dissipation functional.
pub const LOG_FLOOR: f64 = 1e-30;

/// Fixed block count for the parallel pair sum, so results do not depend on
/// the worker count.
const PAIR_BLOCKS: usize = 64;

/// Discrete moments: mass, momentum and kinetic energy `|v|^2 / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub momentum: Vector,
    pub energy: f64,
}

impl Moments {
    /// Largest componentwise gap, relative to the size of `self`.
    pub fn relative_gap(&self, other: &Moments) -> f64 {
        let scale = self.mass.abs().max(self.energy.abs()).max(self.momentum.max_abs()).max(f64::MIN_POSITIVE);
        let gap = (self.mass - other.mass)
            .abs()
            .max((self.energy - other.energy).abs())
            .max((self.momentum - other.momentum).max_abs());
        gap / scale
    }
}

/// Discrete moments of one velocity slice.
pub fn slice_moments(grid: &VelocityGrid, f: &[f64]) -> Moments {
    let d = grid.d();
    let mut mass = 0.0;
    let mut p = [0.0; 3];
    let mut e = 0.0;
    for (k, &fk) in f.iter().enumerate() {
        let v = grid.node(k);
        mass += fk;
        for (a, pa) in p.iter_mut().enumerate().take(d) {
            *pa += fk * v.get(a);
        }
        e += 0.5 * fk * v.norm_sq();
    }
    let w = grid.cell_measure();
    let mut momentum = Vector::zeros(d);
    for (a, pa) in p.iter().enumerate().take(d) {
        momentum.set(a, pa * w);
    }
    Moments {
        mass: mass * w,
        momentum,
        energy: e * w,
    }
}

/// Moments per spatial cell (one entry for a homogeneous field).
pub fn moments(f: &DistributionField) -> Vec<Moments> {
    (0..f.n_cells()).map(|c| slice_moments(&f.vgrid, f.cell(c))).collect()
}

/// Moments summed over space, weighted by the spatial cell measure.
pub fn total_moments(f: &DistributionField) -> Moments {
    let dx = f.sgrid.map_or(1.0, |s| s.cell_measure());
    let d = f.vgrid.d();
    let mut acc = Moments {
        mass: 0.0,
        momentum: Vector::zeros(d),
        energy: 0.0,
    };
    for m in moments(f) {
        acc.mass += m.mass * dx;
        acc.momentum = acc.momentum + m.momentum * dx;
        acc.energy += m.energy * dx;
    }
    acc
}

/// The hard-sphere collision operator on a fixed velocity grid and angular
/// quadrature, with the invariant projection precomputed.
#[derive(Clone, Debug)]
pub struct CollisionOperator {
    grid: VelocityGrid,
    quad: AngularQuadrature,
    half: Vec<(Vector, f64)>,
    lattice: Option<Lattice2>,
    loss_table: Vec<f64>,
    basis: Vec<Vec<f64>>,
    gram: Vec<Vec<f64>>,
}

impl CollisionOperator {
    pub fn new(grid: VelocityGrid, quad: AngularQuadrature) -> Result<Self> {
        Self::with_budget(grid, quad, DEFAULT_NODE_BUDGET)
    }

    pub fn with_budget(grid: VelocityGrid, quad: AngularQuadrature, node_budget: usize) -> Result<Self> {
        if quad.d() != grid.d() {
            return Err(Error::DimensionMismatch {
                expected: grid.d(),
                found: quad.d(),
            });
        }
        if grid.len() > node_budget {
            return Err(Error::Budget(format!(
                "{} velocity nodes exceed the budget of {node_budget}; pair cost grows as n^(2d)",
                grid.len()
            )));
        }
        let basis = invariant_basis(&grid);
        let k = basis.len();
        let mut gram = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                gram[i][j] = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
            }
        }
        // Fail early on a degenerate grid.
        solve(&gram, &vec![0.0; k])?;
        let half = quad.half();
        let lattice = (grid.d() == 2).then(|| Lattice2::new(grid.n(), &half));
        let loss_table = loss_table(&grid, &half);
        Ok(Self {
            grid,
            quad,
            half,
            lattice,
            loss_table,
            basis,
            gram,
        })
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn quadrature(&self) -> &AngularQuadrature {
        &self.quad
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "slice has {} values, velocity grid has {}",
                f.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }

    /// Raw quadrature of the collision integral, using all cores.
    pub fn q(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        let n = f.len();
        let padded = self.lattice.as_ref().map(|l| l.pad(f));
        let units = self.work_units();
        let block = units.div_ceil(PAIR_BLOCKS).max(1);
        let partials: Vec<Vec<f64>> = (0..units.div_ceil(block))
            .into_par_iter()
            .map(|b| {
                let mut out = vec![0.0; n];
                self.partial_sum(f, padded.as_deref(), b * block..((b + 1) * block).min(units), &mut out);
                out
            })
            .collect();
        let mut out = vec![0.0; n];
        for p in partials {
            for (o, x) in out.iter_mut().zip(p) {
                *o += x;
            }
        }
        Ok(out)
    }

    /// Same as [`q`](Self::q) on the calling thread only.
    pub fn q_serial(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        let mut out = vec![0.0; f.len()];
        let padded = self.lattice.as_ref().map(|l| l.pad(f));
        self.partial_sum(f, padded.as_deref(), 0..self.work_units(), &mut out);
        Ok(out)
    }

    /// The quadrature summed pair by pair with interpolation weights computed
    /// from velocities; slower, kept as a reference for the lattice path.
    pub fn q_direct(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        let mut out = vec![0.0; f.len()];
        match self.grid.d() {
            2 => pair_sum_d::<2>(&self.grid, &self.half, f, 0..f.len(), &mut out),
            _ => pair_sum_d::<3>(&self.grid, &self.half, f, 0..f.len(), &mut out),
        }
        Ok(out)
    }

    fn work_units(&self) -> usize {
        self.lattice.as_ref().map_or(self.grid.len(), |l| l.shifts.len())
    }

    fn partial_sum(&self, f: &[f64], padded: Option<&[f64]>, units: std::ops::Range<usize>, out: &mut [f64]) {
        match (&self.lattice, padded) {
            (Some(l), Some(p)) => l.sum(f, p, units, self.grid.cell_measure(), out),
            _ => pair_sum_d::<3>(&self.grid, &self.half, f, units, out),
        }
    }

    /// Removes the component of `q` in the span of `{1, v, |v|^2}`.
    pub fn fix(&self, q: &mut [f64]) -> Result<()> {
        self.check_len(q)?;
        for _ in 0..2 {
            let rhs: Vec<f64> = self.basis.iter().map(|b| b.iter().zip(q.iter()).map(|(x, y)| x * y).sum()).collect();
            let lambda = solve(&self.gram, &rhs)?;
            for (k, qk) in q.iter_mut().enumerate() {
                let corr: f64 = lambda.iter().zip(&self.basis).map(|(l, b)| l * b[k]).sum();
                *qk -= corr;
            }
        }
        Ok(())
    }

    /// Removes a correction of the form `w * (a + b.v + c|v|^2)` so that the
    /// moments of `q` vanish. With `w` a nonnegative density the correction
    /// lives where `w` does, which keeps stepping positive in the tails.
    /// Falls back to [`fix`](Self::fix) when the weighted Gram matrix is
    /// singular.
    pub fn fix_weighted(&self, q: &mut [f64], w: &[f64]) -> Result<()> {
        self.check_len(q)?;
        self.check_len(w)?;
        let k = self.basis.len();
        let mut gram = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i..k {
                let g: f64 = w
                    .iter()
                    .enumerate()
                    .map(|(node, wk)| wk * self.basis[i][node] * self.basis[j][node])
                    .sum();
                gram[i][j] = g;
                gram[j][i] = g;
            }
        }
        if w.iter().any(|&x| x < 0.0) || solve(&gram, &vec![0.0; k]).is_err() {
            return self.fix(q);
        }
        for _ in 0..2 {
            let rhs: Vec<f64> = self.basis.iter().map(|b| b.iter().zip(q.iter()).map(|(x, y)| x * y).sum()).collect();
            let lambda = solve(&gram, &rhs)?;
            for (node, qk) in q.iter_mut().enumerate() {
                let corr: f64 = lambda.iter().zip(&self.basis).map(|(l, b)| l * b[node]).sum();
                *qk -= w[node] * corr;
            }
        }
        Ok(())
    }

    /// The Maxwellian `exp(a + b.v + c|v|^2)` whose discrete moments on the
    /// grid equal those of `f`, found by Newton's method on the convex dual.
    /// `None` if `f` carries no mass or the iteration does not converge.
    pub fn matched_maxwellian(&self, f: &[f64]) -> Option<Vec<f64>> {
        let d = self.grid.d();
        let k = self.basis.len();
        let target: Vec<f64> = self.basis.iter().map(|b| b.iter().zip(f).map(|(x, y)| x * y).sum()).collect();
        if !(target[0] > 0.0) || !target.iter().all(|t| t.is_finite()) {
            return None;
        }
        let w = self.grid.cell_measure();
        let rho = target[0] * w;
        let mut u = [0.0; 3];
        for (a, ua) in u.iter_mut().enumerate().take(d) {
            *ua = target[1 + a] / target[0];
        }
        let u_sq: f64 = u.iter().map(|x| x * x).sum();
        let temp = (target[k - 1] / target[0] - u_sq) / d as f64;
        if !(temp > 0.0) {
            return None;
        }
        let mut lambda = vec![0.0; k];
        lambda[0] = (rho / (2.0 * PI * temp).powf(d as f64 / 2.0)).ln() - u_sq / (2.0 * temp);
        for a in 0..d {
            lambda[1 + a] = u[a] / temp;
        }
        lambda[k - 1] = -0.5 / temp;

        let scale: Vec<f64> = (0..k).map(|j| target[j].abs().max(target[0] * (1.0 + temp))).collect();
        let eval = |lambda: &[f64]| -> Vec<f64> {
            (0..self.grid.len())
                .map(|node| {
                    let e: f64 = lambda.iter().zip(&self.basis).map(|(l, b)| l * b[node]).sum();
                    e.exp()
                })
                .collect()
        };
        let resid = |m: &[f64]| -> (Vec<f64>, f64) {
            let r: Vec<f64> = (0..k)
                .map(|j| self.basis[j].iter().zip(m).map(|(x, y)| x * y).sum::<f64>() - target[j])
                .collect();
            let norm = r.iter().zip(&scale).map(|(x, s)| (x / s).abs()).fold(0.0, f64::max);
            (r, norm)
        };
        let mut m = eval(&lambda);
        let (mut r, mut norm) = resid(&m);
        for _ in 0..60 {
            if norm <= 1e-15 {
                break;
            }
            let mut hess = vec![vec![0.0; k]; k];
            for i in 0..k {
                for j in i..k {
                    let h: f64 = m
                        .iter()
                        .enumerate()
                        .map(|(node, mv)| mv * self.basis[i][node] * self.basis[j][node])
                        .sum();
                    hess[i][j] = h;
                    hess[j][i] = h;
                }
            }
            let step = solve(&hess, &r).ok()?;
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = lambda.iter().zip(&step).map(|(l, s)| l - t * s).collect();
                let m_trial = eval(&trial);
                let (r_trial, n_trial) = resid(&m_trial);
                if n_trial < norm || t < 1e-6 {
                    if n_trial >= norm {
                        // Stalled at rounding level.
                        return (norm <= 1e-12).then_some(m);
                    }
                    lambda = trial;
                    m = m_trial;
                    r = r_trial;
                    norm = n_trial;
                    break;
                }
                t *= 0.5;
            }
        }
        (norm <= 1e-12 && lambda[k - 1] < 0.0).then_some(m)
    }

    /// The stepping right-hand side `P[Q(f) - (f / M[f]) Q(M[f])]`, with
    /// `M[f]` the moment-matched discrete Maxwellian and `P` the projection of
    /// [`fix_weighted`](Self::fix_weighted) with weight `f`. The subtracted
    /// term is the discretization residual at equilibrium, scaled node by node
    /// to `f` and capped by the loss term `nu f`, so it never outweighs `f`
    /// in the tails. The result conserves the
    /// discrete invariants and vanishes exactly on discrete Maxwellians.
    pub fn rate(&self, f: &[f64], parallel: bool) -> Result<Vec<f64>> {
        self.check_len(f)?;
        if f.iter().all(|&x| x == 0.0) {
            return Ok(vec![0.0; f.len()]);
        }
        let weight: Vec<f64> = f.iter().map(|&x| x.max(0.0)).collect();
        let apply = |g: &[f64]| if parallel { self.q(g) } else { self.q_serial(g) };
        let mut q = apply(f)?;
        if let Some(m) = self.matched_maxwellian(f) {
            let qm = apply(&m)?;
            let nu = self.loss_rates(&weight)?;
            for (k, qk) in q.iter_mut().enumerate() {
                if m[k] > 0.0 {
                    // Where M[f] is unresolved its relative residual is
                    // meaningless; cap the correction by the local loss.
                    let cap = nu[k] * weight[k];
                    *qk -= (weight[k] / m[k] * qm[k]).clamp(-cap, cap);
                }
            }
        }
        self.fix_weighted(&mut q, &weight)?;
        Ok(q)
    }

    /// Loss rate `nu(v) = sum_* f_* dv^d sum_l w_l ((v - v_*) . omega_l)_+`
    /// at every node, so that the loss term of `Q` is `nu f`.
    pub fn loss_rates(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        let d = self.grid.d();
        let n = self.grid.n();
        let span = 2 * n - 1;
        let digits = |mut k: usize| {
            let mut out = [0usize; 3];
            for a in (0..d).rev() {
                out[a] = k % n;
                k /= n;
            }
            out
        };
        let support: Vec<([usize; 3], f64)> = f.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(k, &x)| (digits(k), x)).collect();
        let meas = self.grid.cell_measure();
        Ok((0..f.len())
            .map(|k| {
                let ka = digits(k);
                let mut nu = 0.0;
                for (kb, fb) in &support {
                    let mut t = 0;
                    for a in 0..d {
                        t = t * span + (ka[a] + n - 1 - kb[a]);
                    }
                    nu += fb * self.loss_table[t];
                }
                nu * meas
            })
            .collect())
    }

    /// Largest entry of [`loss_rates`](Self::loss_rates).
    pub fn max_loss_rate(&self, f: &[f64]) -> Result<f64> {
        Ok(self.loss_rates(f)?.into_iter().fold(0.0, f64::max))
    }
}

/// Bilinear read at a fixed offset from a lattice point of the padded array.
#[derive(Clone, Copy, Debug)]
struct Stencil {
    kern: f64,
    offset_a: isize,
    weights_a: [f64; 4],
    offset_b: isize,
    weights_b: [f64; 4],
}

/// All node pairs that differ by the lattice vector `(gx, gy)` share the
/// post-collisional displacement `-(g . omega) omega` for every direction,
/// hence the same interpolation weights. The gain term is then a fixed
/// stencil swept over the grid.
#[derive(Clone, Debug)]
struct Shift2 {
    gx: isize,
    gy: isize,
    kin: f64,
    stencils: Vec<Stencil>,
}

#[derive(Clone, Debug)]
struct Lattice2 {
    n: usize,
    pad: usize,
    width: usize,
    shifts: Vec<Shift2>,
}

impl Lattice2 {
    fn new(n: usize, half: &[(Vector, f64)]) -> Self {
        let pad = ((2f64.sqrt() * n as f64).ceil() as usize) + 2;
        let width = n + 2 * pad;
        let w = width as isize;
        let split = |x: f64| {
            let i = x.floor();
            (i as isize, x - i)
        };
        let weights = |fx: f64, fy: f64| [(1.0 - fx) * (1.0 - fy), (1.0 - fx) * fy, fx * (1.0 - fy), fx * fy];
        let m = n as isize;
        let mut shifts = Vec::new();
        for gx in 0..m {
            for gy in (1 - m)..m {
                if gx == 0 && gy <= 0 {
                    continue;
                }
                let mut kin = 0.0;
                let mut stencils = Vec::with_capacity(half.len());
                for (om, wl) in half {
                    let (ox, oy) = (om.get(0), om.get(1));
                    let gw = gx as f64 * ox + gy as f64 * oy;
                    let kern = wl * gw.abs();
                    if kern == 0.0 {
                        continue;
                    }
                    kin += kern;
                    let (ia, fxa) = split(-gw * ox);
                    let (ja, fya) = split(-gw * oy);
                    let (ib, fxb) = split(gw * ox);
                    let (jb, fyb) = split(gw * oy);
                    stencils.push(Stencil {
                        kern,
                        offset_a: ia * w + ja,
                        weights_a: weights(fxa, fya),
                        offset_b: ib * w + jb,
                        weights_b: weights(fxb, fyb),
                    });
                }
                shifts.push(Shift2 { gx, gy, kin, stencils });
            }
        }
        Self { n, pad, width, shifts }
    }

    fn pad(&self, f: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.width * self.width];
        for x in 0..self.n {
            let row = (x + self.pad) * self.width + self.pad;
            p[row..row + self.n].copy_from_slice(&f[x * self.n..(x + 1) * self.n]);
        }
        p
    }

    /// `kern` scales by `dv` relative to lattice units; `meas = dv^2`.
    fn sum(&self, f: &[f64], p: &[f64], units: std::ops::Range<usize>, meas: f64, out: &mut [f64]) {
        let n = self.n as isize;
        let w = self.width as isize;
        let dv = meas.sqrt();
        let mut gain = vec![0.0; f.len()];
        let read = |base: isize, wt: &[f64; 4]| -> f64 {
            let b = base as usize;
            wt[0] * p[b] + wt[1] * p[b + 1] + wt[2] * p[b + self.width] + wt[3] * p[b + self.width + 1]
        };
        for sh in &self.shifts[units] {
            let (x0, x1) = (sh.gx.max(0), n + sh.gx.min(0));
            let (y0, y1) = (sh.gy.max(0), n + sh.gy.min(0));
            for st in &sh.stencils {
                for ax in x0..x1 {
                    let bx = ax - sh.gx;
                    let row_a = (ax + self.pad as isize) * w + self.pad as isize + st.offset_a;
                    let row_b = (bx + self.pad as isize) * w + self.pad as isize + st.offset_b;
                    let g_row = &mut gain[(ax * n) as usize..((ax + 1) * n) as usize];
                    for ay in y0..y1 {
                        let by = ay - sh.gy;
                        let va = read(row_a + ay, &st.weights_a);
                        if va == 0.0 {
                            continue;
                        }
                        g_row[ay as usize] += st.kern * va * read(row_b + by, &st.weights_b);
                    }
                }
            }
            for ax in x0..x1 {
                let bx = ax - sh.gx;
                for ay in y0..y1 {
                    let by = ay - sh.gy;
                    let a = (ax * n + ay) as usize;
                    let b = (bx * n + by) as usize;
                    let delta = (gain[a] - sh.kin * f[a] * f[b]) * meas * dv;
                    gain[a] = 0.0;
                    out[a] += delta;
                    out[b] += delta;
                }
            }
        }
    }
}

/// `sum_l w_l |g . omega_l|` over half the directions for every lattice
/// difference `g`, row-major over offsets `-(n-1)..=(n-1)` per axis.
fn loss_table(grid: &VelocityGrid, half: &[(Vector, f64)]) -> Vec<f64> {
    let d = grid.d();
    let n = grid.n();
    let span = 2 * n - 1;
    let dv = grid.dv();
    (0..span.pow(d as u32))
        .map(|mut t| {
            let mut g = Vector::zeros(d);
            for a in (0..d).rev() {
                g.set(a, ((t % span) as f64 - (n - 1) as f64) * dv);
                t /= span;
            }
            half.iter().map(|(om, wl)| wl * g.dot(om).abs()).sum()
        })
        .collect()
}

/// `{1, v_1, .., v_d, |v|^2}` evaluated at the nodes.
fn invariant_basis(grid: &VelocityGrid) -> Vec<Vec<f64>> {
    let d = grid.d();
    let nodes = grid.nodes();
    let mut basis = vec![vec![1.0; nodes.len()]];
    for a in 0..d {
        basis.push(nodes.iter().map(|v| v.get(a)).collect());
    }
    basis.push(nodes.iter().map(|v| v.norm_sq()).collect());
    basis
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let k = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &r)| {
        let mut row = row.clone();
        row.push(r);
        row
    }).collect();
    let scale = a.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs()));
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .expect("nonempty range");
        if !(m[pivot][col].abs() > 1e-13 * scale) {
            return Err(Error::SingularGram);
        }
        m.swap(col, pivot);
        for row in col + 1..k {
            let factor = m[row][col] / m[col][col];
            if factor != 0.0 {
                for c in col..=k {
                    m[row][c] -= factor * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let s: f64 = (row + 1..k).map(|c| m[row][c] * x[c]).sum();
        x[row] = (m[row][k] - s) / m[row][row];
    }
    Ok(x)
}

/// Multilinear interpolation of node values at `v`, zero outside the box.
#[inline]
fn interp<const D: usize>(f: &[f64], n: usize, inv_dv: f64, v_max: f64, v: [f64; D]) -> f64 {
    let mut base = [0isize; D];
    let mut frac = [0.0; D];
    for k in 0..D {
        let s = (v[k] + v_max) * inv_dv - 0.5;
        if !(s > -1.0 && s < n as f64) {
            return 0.0;
        }
        // s > -1, so truncation after a shift is a floor.
        let i = (s + 1.0) as isize - 1;
        base[k] = i;
        frac[k] = s - i as f64;
    }
    if base.iter().all(|&i| i >= 0 && i + 1 < n as isize) {
        // Whole stencil inside the box.
        let mut origin = 0usize;
        for &i in &base {
            origin = origin * n + i as usize;
        }
        return match D {
            2 => {
                let (fx, fy) = (frac[0], frac[1]);
                let r0 = f[origin] * (1.0 - fy) + f[origin + 1] * fy;
                let r1 = f[origin + n] * (1.0 - fy) + f[origin + n + 1] * fy;
                r0 * (1.0 - fx) + r1 * fx
            }
            _ => {
                let mut acc = 0.0;
                for corner in 0..(1usize << D) {
                    let mut idx = origin;
                    let mut wt = 1.0;
                    let mut stride = 1;
                    for k in (0..D).rev() {
                        let bit = (corner >> k) & 1;
                        idx += bit * stride;
                        stride *= n;
                        wt *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                    }
                    acc += wt * f[idx];
                }
                acc
            }
        };
    }
    let mut acc = 0.0;
    'corner: for corner in 0..(1usize << D) {
        let mut idx = 0usize;
        let mut wt = 1.0;
        for k in 0..D {
            let bit = (corner >> k) & 1;
            let i = base[k] + bit as isize;
            if i < 0 || i >= n as isize {
                continue 'corner;
            }
            idx = idx * n + i as usize;
            wt *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
        }
        acc += wt * f[idx];
    }
    acc
}

/// Adds, for every unordered node pair `(a, b)` with `a` in `rows`, the
/// common increment to `Q[a]` and `Q[b]`. The two ordered pairs share
/// `|(v_a - v_b) . omega|` and the post-collisional pair, and an antipodal
/// node pair contributes `|g . omega|` once.
fn pair_sum_d<const D: usize>(
    grid: &VelocityGrid,
    half: &[(Vector, f64)],
    f: &[f64],
    rows: std::ops::Range<usize>,
    out: &mut [f64],
) {
    let n = grid.n();
    let inv_dv = 1.0 / grid.dv();
    let v_max = grid.v_max();
    let meas = grid.cell_measure();
    let nodes: Vec<[f64; D]> = (0..f.len())
        .map(|k| {
            let v = grid.node(k);
            std::array::from_fn(|a| v.get(a))
        })
        .collect();
    let dirs: Vec<([f64; D], f64)> = half.iter().map(|(om, w)| (std::array::from_fn(|a| om.get(a)), *w)).collect();
    for a in rows {
        let va = nodes[a];
        for b in a + 1..f.len() {
            let vb = nodes[b];
            let g: [f64; D] = std::array::from_fn(|k| va[k] - vb[k]);
            let mut gain = 0.0;
            let mut kin = 0.0;
            for (om, w) in &dirs {
                let gw: f64 = (0..D).map(|k| g[k] * om[k]).sum();
                let kern = w * gw.abs();
                if kern == 0.0 {
                    continue;
                }
                kin += kern;
                let pa: [f64; D] = std::array::from_fn(|k| va[k] - gw * om[k]);
                let fa = interp::<D>(f, n, inv_dv, v_max, pa);
                if fa == 0.0 {
                    continue;
                }
                let pb: [f64; D] = std::array::from_fn(|k| vb[k] + gw * om[k]);
                gain += kern * fa * interp::<D>(f, n, inv_dv, v_max, pb);
            }
            let delta = (gain - kin * f[a] * f[b]) * meas;
            out[a] += delta;
            out[b] += delta;
        }
    }
}

/// Raw collision quadrature of a homogeneous field.
pub fn q_collision(f: &DistributionField, quad: &AngularQuadrature) -> Result<DistributionField> {
    if !f.is_homogeneous() {
        return Err(Error::Contract("q_collision needs a homogeneous field".into()));
    }
    let op = CollisionOperator::new(f.vgrid, quad.clone())?;
    Ok(DistributionField {
        vgrid: f.vgrid,
        sgrid: None,
        values: op.q(&f.values)?,
    })
}

/// Projects `q` off the discrete collision invariants of `grid`.
pub fn conservative_fix(q: &DistributionField, grid: &VelocityGrid) -> Result<DistributionField> {
    if !q.is_homogeneous() || q.vgrid != *grid {
        return Err(Error::Contract("conservative_fix needs a homogeneous field on the given grid".into()));
    }
    let d = grid.d();
    let quad = AngularQuadrature::default_for(d, 2)?;
    let op = CollisionOperator::with_budget(*grid, quad, usize::MAX)?;
    let mut out = q.clone();
    op.fix(&mut out.values)?;
    Ok(out)
}

/// `H = sum f ln f dv^d` and `D = -sum Q ln f dv^d` over nodes above
/// [`LOG_FLOOR`], with `Q` projected onto the conservative subspace.
pub fn entropy_and_dissipation(f: &DistributionField, quad: &AngularQuadrature) -> Result<(f64, f64)> {
    if !f.is_homogeneous() {
        return Err(Error::Contract("entropy_and_dissipation needs a homogeneous field".into()));
    }
    let op = CollisionOperator::new(f.vgrid, quad.clone())?;
    let mut q = op.q(&f.values)?;
    op.fix(&mut q)?;
    let w = f.vgrid.cell_measure();
    let h: f64 = f.values.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>() * w;
    let dis: f64 = -f
        .values
        .iter()
        .zip(&q)
        .filter(|(&x, _)| x > LOG_FLOOR)
        .map(|(x, qk)| qk * x.ln())
        .sum::<f64>()
        * w;
    Ok((h, dis))
}

/// `mass / sum f f_* C_d |v - v_*|`, the inverse mean collision rate per
/// particle, with `C_2 = 2` and `C_3 = pi` the angular integral of
/// `(e . omega)_+`. Spatial fields sum over cells.
pub fn mean_free_time(f: &DistributionField) -> Option<f64> {
    let d = f.vgrid.d();
    let c_d = if d == 2 { 2.0 } else { PI };
    let nodes = f.vgrid.nodes();
    let dv = f.vgrid.cell_measure();
    let dx = f.sgrid.map_or(1.0, |s| s.cell_measure());
    let rate: f64 = (0..f.n_cells())
        .into_par_iter()
        .map(|c| {
            let cell = f.cell(c);
            let live: Vec<(Vector, f64)> = nodes.iter().zip(cell).filter(|(_, &x)| x != 0.0).map(|(v, &x)| (*v, x)).collect();
            let mut s = 0.0;
            for (i, (va, fa)) in live.iter().enumerate() {
                for (vb, fb) in &live[i + 1..] {
                    s += 2.0 * fa * fb * (*va - *vb).norm();
                }
            }
            s
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        * c_d
        * dv
        * dv
        * dx;
    let mass = f.total_mass();
    (rate > 0.0 && mass > 0.0).then(|| mass / rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bump(grid: VelocityGrid) -> DistributionField {
        let d = grid.d();
        DistributionField::homogeneous(grid, |v| {
            let mut a = *v;
            a.set(0, v.get(0) - 1.0);
            let mut b = *v;
            b.set(0, v.get(0) + 1.0);
            0.5 * crate::phase::maxwellian_unchecked(2.0, d, a.norm_sq())
                + 0.5 * crate::phase::maxwellian_unchecked(2.0, d, b.norm_sq())
        })
    }

    #[test]
    fn maxwellian_moments() {
        let g = VelocityGrid::new(2, 8.0, 32).unwrap();
        let m = DistributionField::maxwellian(g, 2.0).unwrap();
        let mo = &moments(&m)[0];
        assert!((mo.mass - 1.0).abs() < 1e-10);
        assert!(mo.momentum.max_abs() < 1e-14);
        assert!((mo.energy - 0.5).abs() < 1e-10);
        let z = DistributionField::zeros(g, None).unwrap();
        assert_eq!(moments(&z)[0].mass, 0.0);
    }

    #[test]
    fn zero_field_has_zero_collisions() {
        let g = VelocityGrid::new(2, 4.0, 8).unwrap();
        let quad = AngularQuadrature::uniform_circle(8).unwrap();
        let q = q_collision(&DistributionField::zeros(g, None).unwrap(), &quad).unwrap();
        assert!(q.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn maxwellian_residual_shrinks_with_refinement() {
        let quad = AngularQuadrature::uniform_circle(16).unwrap();
        let mut prev = f64::INFINITY;
        for n in [16, 32] {
            let g = VelocityGrid::new(2, 6.0, n).unwrap();
            let m = DistributionField::maxwellian(g, 1.0).unwrap();
            let q = q_collision(&m, &quad).unwrap();
            let sup = q.values.iter().fold(0.0f64, |s, x| s.max(x.abs()));
            assert!(sup <= prev / 2.0, "n = {n}: {sup} vs {prev}");
            prev = sup;
        }
    }

    #[test]
    fn two_bump_conservation_before_and_after_fix() {
        let quad = AngularQuadrature::uniform_circle(16).unwrap();
        let mut defects = Vec::new();
        for n in [16, 32] {
            let g = VelocityGrid::new(2, 5.0, n).unwrap();
            let q = q_collision(&two_bump(g), &quad).unwrap();
            let scale: f64 = q.values.iter().map(|x| x.abs()).sum::<f64>() * g.cell_measure();
            let raw = slice_moments(&g, &q.values);
            defects.push(raw.mass.abs().max(raw.energy.abs()).max(raw.momentum.max_abs()) / scale);
            let fixed = conservative_fix(&q, &g).unwrap();
            let m = slice_moments(&g, &fixed.values);
            assert!(m.mass.abs() < 1e-13 * scale);
            assert!(m.momentum.max_abs() < 1e-13 * scale);
            assert!(m.energy.abs() < 1e-13 * scale);
        }
        // The raw defect is interpolation error and shrinks with the grid.
        assert!(defects[0] < 0.3 && defects[1] < defects[0] / 2.0, "{defects:?}");
    }

    #[test]
    fn fix_examples() {
        let g = VelocityGrid::new(2, 4.0, 8).unwrap();
        let m = DistributionField::maxwellian(g, 1.0).unwrap();
        let fixed = conservative_fix(&m, &g).unwrap();
        assert!(slice_moments(&g, &fixed.values).mass.abs() < 1e-13);
        let again = conservative_fix(&fixed, &g).unwrap();
        assert!(again.sup_distance(&fixed).unwrap() < 1e-13 * 0.2);
    }

    #[test]
    fn lattice_sum_matches_direct_pairs() {
        let g = VelocityGrid::new(2, 4.0, 12).unwrap();
        let op = CollisionOperator::new(g, AngularQuadrature::uniform_circle(12).unwrap()).unwrap();
        let f = DistributionField::homogeneous(g, |v| (-(v.get(0) - 0.7).powi(2) - 0.5 * v.get(1).powi(2) + 0.2 * v.get(0) * v.get(1)).exp());
        let fast = op.q(&f.values).unwrap();
        let slow = op.q_direct(&f.values).unwrap();
        let scale = slow.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-13 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn serial_and_parallel_agree_and_preserve_parity() {
        let g = VelocityGrid::new(2, 4.0, 12).unwrap();
        let op = CollisionOperator::new(g, AngularQuadrature::uniform_circle(8).unwrap()).unwrap();
        let f = two_bump(g);
        let a = op.q(&f.values).unwrap();
        let b = op.q_serial(&f.values).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-15 * (1.0 + x.abs()));
        }
        let scale = a.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        for k in 0..g.len() {
            assert!((a[k] - a[g.mirror(k)]).abs() < 1e-14 * scale);
        }
    }

    #[test]
    fn matched_maxwellian_recovers_a_discrete_maxwellian() {
        let g = VelocityGrid::new(2, 4.0, 16).unwrap();
        let op = CollisionOperator::new(g, AngularQuadrature::uniform_circle(8).unwrap()).unwrap();
        let f = DistributionField::homogeneous(g, |v| (0.3 + 0.4 * v.get(0) - 0.2 * v.get(1) - 0.6 * v.norm_sq()).exp());
        let m = op.matched_maxwellian(&f.values).unwrap();
        for (a, b) in m.iter().zip(&f.values) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a));
        }
        let r = op.rate(&f.values, true).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-14));
        let bumps = two_bump(g);
        let mb = op.matched_maxwellian(&bumps.values).unwrap();
        assert!(slice_moments(&g, &mb).relative_gap(&slice_moments(&g, &bumps.values)) < 1e-12);
    }

    #[test]
    fn dissipation_signs() {
        let g = VelocityGrid::new(2, 5.0, 16).unwrap();
        let quad = AngularQuadrature::uniform_circle(16).unwrap();
        let (_, d_eq) = entropy_and_dissipation(&DistributionField::maxwellian(g, 1.0).unwrap(), &quad).unwrap();
        assert!(d_eq.abs() < 1e-3, "{d_eq}");
        let (_, d_bump) = entropy_and_dissipation(&two_bump(g), &quad).unwrap();
        assert!(d_bump > 0.0);
    }

    #[test]
    fn mean_free_time_of_a_maxwellian() {
        // C_2 * E|v - v_*| = 2 sqrt(pi) for beta = 1 in two dimensions.
        let g = VelocityGrid::new(2, 7.0, 48).unwrap();
        let m = DistributionField::maxwellian(g, 1.0).unwrap();
        let t = mean_free_time(&m).unwrap();
        assert!((t - 1.0 / (2.0 * PI.sqrt())).abs() < 1e-3, "{t}");
    }

    #[test]
    fn cost_guard() {
        let g = VelocityGrid::new(3, 4.0, 32).unwrap();
        assert!(matches!(
            CollisionOperator::new(g, AngularQuadrature::icosahedral()),
            Err(Error::Budget(_))
        ));
    }
}
