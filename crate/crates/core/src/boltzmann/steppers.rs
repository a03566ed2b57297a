use rayon::prelude::*;

use super::grid::{AngularQuadrature, DistributionField, SpatialGrid, VelocityGrid};
use super::kernel::CollisionOperator;
use crate::error::{Error, Result};

/// Largest admitted `dt * max loss rate`.
pub const STABILITY_BUDGET: f64 = 0.5;

/// What a step had to repair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    /// Mass of the negative values set to zero, before restitution.
    pub clipped_mass: f64,
    /// Mass that left the spatial box during the step.
    pub outflow_mass: f64,
}

impl StepReport {
    fn absorb(&mut self, other: StepReport) {
        self.clipped_mass += other.clipped_mass;
        self.outflow_mass += other.outflow_mass;
    }
}

fn check_stability(op: &CollisionOperator, cells: &[&[f64]], dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let rates = cells
        .par_iter()
        .map(|c| op.max_loss_rate(c))
        .collect::<Result<Vec<f64>>>()?;
    let max_rate = rates.into_iter().fold(0.0, f64::max);
    if dt * max_rate > STABILITY_BUDGET {
        return Err(Error::Stability {
            dt,
            max_rate,
            max_dt: STABILITY_BUDGET / max_rate,
        });
    }
    Ok(())
}

/// Sets negative values to zero and rescales the positive ones so the
/// total is unchanged. Returns the clipped mass in node units.
fn clip(f: &mut [f64]) -> f64 {
    let neg: f64 = f.iter().filter(|&&x| x < 0.0).map(|x| -x).sum();
    if neg == 0.0 {
        return 0.0;
    }
    let pos: f64 = f.iter().filter(|&&x| x > 0.0).sum();
    let scale = if pos > neg { (pos - neg) / pos } else { 0.0 };
    for x in f.iter_mut() {
        *x = if *x > 0.0 { *x * scale } else { 0.0 };
    }
    neg
}

/// One midpoint step of `df/dt = rate(f)` on a velocity slice, in place.
/// The stability check is the caller's job.
fn midpoint(op: &CollisionOperator, f: &mut [f64], dt: f64, parallel: bool) -> Result<f64> {
    let k1 = op.rate(f, parallel)?;
    let mid: Vec<f64> = f.iter().zip(&k1).map(|(x, k)| x + 0.5 * dt * k).collect();
    let k2 = op.rate(&mid, parallel)?;
    for (x, k) in f.iter_mut().zip(&k2) {
        *x += dt * k;
    }
    Ok(clip(f) * op.grid().cell_measure())
}

/// One explicit midpoint step of the space-homogeneous equation.
pub fn step_homogeneous(f: &DistributionField, dt: f64, quad: &AngularQuadrature) -> Result<(DistributionField, StepReport)> {
    let op = CollisionOperator::new(f.vgrid, quad.clone())?;
    let mut out = f.clone();
    let report = step_homogeneous_with(&op, &mut out, dt)?;
    Ok((out, report))
}

/// [`step_homogeneous`] in place with a prebuilt operator.
pub fn step_homogeneous_with(op: &CollisionOperator, f: &mut DistributionField, dt: f64) -> Result<StepReport> {
    if !f.is_homogeneous() {
        return Err(Error::Contract("step_homogeneous needs a homogeneous field".into()));
    }
    if f.vgrid != *op.grid() {
        return Err(Error::ShapeMismatch("operator and field use different velocity grids".into()));
    }
    check_stability(op, &[&f.values], dt)?;
    let clipped_mass = midpoint(op, &mut f.values, dt, true)?;
    Ok(StepReport {
        clipped_mass,
        outflow_mass: 0.0,
    })
}

/// Values of `S_t f (x, v) = f(x - v t, v)` at the cell centers, by
/// multilinear interpolation between centers, zero outside the box.
fn shift(sgrid: &SpatialGrid, vgrid: &VelocityGrid, values: &[f64], t: f64) -> Vec<f64> {
    if t == 0.0 {
        return values.to_vec();
    }
    let d = sgrid.d();
    let n = sgrid.n();
    let nv = vgrid.len();
    let vnodes = vgrid.nodes();
    let lo = sgrid.lo();
    let inv: Vec<f64> = (0..d).map(|a| 1.0 / sgrid.dx(a)).collect();
    let mut out = vec![0.0; values.len()];
    out.par_chunks_mut(nv).enumerate().for_each(|(c, row)| {
        let x = sgrid.center(c);
        for (k, slot) in row.iter_mut().enumerate() {
            let mut base = [0isize; 3];
            let mut frac = [0.0; 3];
            let mut inside = true;
            for a in 0..d {
                let s = (x.get(a) - vnodes[k].get(a) * t - lo.get(a)) * inv[a] - 0.5;
                if !(s > -1.0 && s < n as f64) {
                    inside = false;
                    break;
                }
                let i = (s + 1.0) as isize - 1;
                base[a] = i;
                frac[a] = s - i as f64;
            }
            if !inside {
                continue;
            }
            let mut acc = 0.0;
            'corner: for corner in 0..(1usize << d) {
                let mut idx = 0usize;
                let mut wt = 1.0;
                for a in 0..d {
                    let bit = (corner >> a) & 1;
                    let i = base[a] + bit as isize;
                    if i < 0 || i >= n as isize {
                        continue 'corner;
                    }
                    idx = idx * n + i as usize;
                    wt *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                if wt != 0.0 {
                    acc += wt * values[idx * nv + k];
                }
            }
            *slot = acc;
        }
    });
    out
}

fn require_spatial(f: &DistributionField) -> Result<SpatialGrid> {
    f.sgrid
        .ok_or_else(|| Error::Contract("operation needs a spatial grid".into()))
}

/// Semi-Lagrangian free flight over time `t` (either sign). Returns the
/// transported field and the mass that left the box.
pub fn free_transport(f: &DistributionField, t: f64) -> Result<(DistributionField, f64)> {
    let sgrid = require_spatial(f)?;
    if !t.is_finite() {
        return Err(Error::InvalidParameter(format!("transport time must be finite, got {t}")));
    }
    let values = shift(&sgrid, &f.vgrid, &f.values, t);
    let out = DistributionField {
        vgrid: f.vgrid,
        sgrid: f.sgrid,
        values,
    };
    let loss = f.total_mass() - out.total_mass();
    Ok((out, loss))
}

/// Space-inhomogeneous state in the co-moving frame: the field at time `t`
/// is `S_t g`. Free flight is then exact, and only collision increments are
/// interpolated.
#[derive(Clone, Debug)]
pub struct CoMovingState {
    pub g: DistributionField,
    pub t: f64,
}

impl CoMovingState {
    pub fn new(f0: DistributionField) -> Result<Self> {
        require_spatial(&f0)?;
        Ok(Self { g: f0, t: 0.0 })
    }

    /// The physical field `S_t g`.
    pub fn field(&self) -> DistributionField {
        let sgrid = self.g.sgrid.expect("checked at construction");
        DistributionField {
            vgrid: self.g.vgrid,
            sgrid: self.g.sgrid,
            values: shift(&sgrid, &self.g.vgrid, &self.g.values, self.t),
        }
    }
}

/// One Strang step: free flight for `dt/2`, a homogeneous midpoint step in
/// every spatial cell, free flight for `dt/2`.
pub fn step_inhomogeneous(state: &mut CoMovingState, dt: f64, op: &CollisionOperator) -> Result<StepReport> {
    let sgrid = require_spatial(&state.g)?;
    if state.g.vgrid != *op.grid() {
        return Err(Error::ShapeMismatch("operator and field use different velocity grids".into()));
    }
    let tau = state.t + 0.5 * dt;
    let nv = op.grid().len();
    let before = state.field().total_mass();
    let mid = shift(&sgrid, &state.g.vgrid, &state.g.values, tau);
    let cells: Vec<&[f64]> = mid.chunks(nv).collect();
    check_stability(op, &cells, dt)?;
    let mut report = StepReport::default();
    let results: Vec<(Vec<f64>, f64)> = cells
        .par_iter()
        .map(|cell| {
            if cell.iter().all(|&x| x == 0.0) {
                return Ok((vec![0.0; nv], 0.0));
            }
            let mut after = cell.to_vec();
            let clipped = midpoint(op, &mut after, dt, false)?;
            for (a, b) in after.iter_mut().zip(cell.iter()) {
                *a -= b;
            }
            Ok((after, clipped))
        })
        .collect::<Result<_>>()?;
    let mut increment = Vec::with_capacity(mid.len());
    for (inc, clipped) in results {
        increment.extend_from_slice(&inc);
        report.clipped_mass += clipped * sgrid.cell_measure();
    }
    let back = shift(&sgrid, &state.g.vgrid, &increment, -tau);
    for (g, b) in state.g.values.iter_mut().zip(back) {
        *g += b;
    }
    let clipped = clip_cells(&mut state.g, nv);
    report.absorb(StepReport {
        clipped_mass: clipped,
        outflow_mass: 0.0,
    });
    state.t += dt;
    report.outflow_mass = before - state.field().total_mass();
    Ok(report)
}

fn clip_cells(f: &mut DistributionField, nv: usize) -> f64 {
    let meas = f.node_measure();
    f.values.chunks_mut(nv).map(clip).sum::<f64>() * meas
}

/// Result of [`picard_duhamel`].
#[derive(Clone, Debug)]
pub struct PicardOutcome {
    pub field: DistributionField,
    /// Sup distance between the last two iterates at the final time.
    pub last_distance: f64,
    /// Sup distance between successive iterates over the whole sub-grid.
    pub iterate_distances: Vec<f64>,
}

/// Picard iteration of the mild form on `substeps` equal time intervals
/// with the trapezoid rule, in the co-moving frame:
/// `g_{k+1}(s) = f0 + int_0^s S_{-r} Q(S_r g_k(r)) dr`, returning `S_t g_K(t)`.
pub fn picard_duhamel(
    f0: &DistributionField,
    t: f64,
    iterations: usize,
    op: &CollisionOperator,
    substeps: usize,
) -> Result<PicardOutcome> {
    let sgrid = require_spatial(f0)?;
    if f0.vgrid != *op.grid() {
        return Err(Error::ShapeMismatch("operator and field use different velocity grids".into()));
    }
    if !(t >= 0.0 && t.is_finite()) || substeps == 0 {
        return Err(Error::InvalidParameter("need t >= 0 and at least one substep".into()));
    }
    let nv = op.grid().len();
    let vgrid = f0.vgrid;
    let ds = t / substeps as f64;
    let times: Vec<f64> = (0..=substeps).map(|j| j as f64 * ds).collect();
    let mut g: Vec<Vec<f64>> = vec![f0.values.clone(); substeps + 1];
    let mut distances = Vec::with_capacity(iterations);
    let mut previous_final: Option<Vec<f64>> = None;
    for k in 0..iterations {
        let mut rates = Vec::with_capacity(times.len());
        for (s, gs) in times.iter().zip(&g) {
            let f = shift(&sgrid, &vgrid, gs, *s);
            let q: Vec<Vec<f64>> = f
                .par_chunks(nv)
                .map(|cell| op.rate(cell, false))
                .collect::<Result<_>>()?;
            rates.push(shift(&sgrid, &vgrid, &q.concat(), -*s));
        }
        let mut next = Vec::with_capacity(times.len());
        let mut acc = f0.values.clone();
        next.push(acc.clone());
        for j in 1..times.len() {
            for ((a, r0), r1) in acc.iter_mut().zip(&rates[j - 1]).zip(&rates[j]) {
                *a += 0.5 * ds * (r0 + r1);
            }
            next.push(acc.clone());
        }
        let dist = g
            .iter()
            .zip(&next)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        if !dist.is_finite() {
            return Err(Error::Divergence {
                distance: dist,
                horizon: 0.0,
            });
        }
        if k >= 1 {
            let prev = distances[k - 1];
            if dist > prev && dist > 0.0 {
                return Err(Error::Divergence {
                    distance: dist,
                    horizon: t * prev / dist,
                });
            }
        }
        distances.push(dist);
        previous_final = Some(std::mem::replace(&mut g, next)[substeps].clone());
    }
    let final_g = &g[substeps];
    let values = shift(&sgrid, &vgrid, final_g, t);
    let last_distance = match previous_final {
        Some(prev) => {
            let prev_f = shift(&sgrid, &vgrid, &prev, t);
            values.iter().zip(&prev_f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        }
        None => 0.0,
    };
    Ok(PicardOutcome {
        field: DistributionField {
            vgrid,
            sgrid: Some(sgrid),
            values,
        },
        last_distance,
        iterate_distances: distances,
    })
}
