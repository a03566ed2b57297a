//! Event-driven hard-sphere dynamics on the open domain.
//!
//! Particles fly freely and reflect specularly at distance `eps`. Pair
//! events live in a binary heap and are invalidated lazily through
//! per-particle collision counters. Candidate pairs come from a uniform cell
//! list rebuilt on a time horizon `H`: with every speed bounded by `v_max`
//! until the next rebuild, a pair that meets before `t_r + H` was closer
//! than `eps + 2 v_max H` at `t_r`, which is the cell size. A collision that
//! produces a speed above `v_max` forces an immediate rebuild.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::cells::{CellHash, CellKey};
use crate::dense::{read_f64, read_u32, read_u64};
use crate::error::{Error, Result};
use crate::phase::{scatter_unchecked, Configuration, ModelParams, PhasePoint, Vector, EXCLUSION_TOLERANCE};
use crate::rng::RngStream;

/// Repeated events of one pair closer together than this fraction of the
/// run length count toward the Zeno guard.
const ZENO_WINDOW_REL: f64 = 1e-12;
const ZENO_MAX_EVENTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionEvent {
    pub t: f64,
    pub i: u32,
    pub j: u32,
    /// `(x_i - x_j) / |x_i - x_j|` at contact.
    pub omega: Vector,
    pub v_pre: [Vector; 2],
    pub v_post: [Vector; 2],
}

/// Complete record of one run: initial state plus every collision.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    pub params: ModelParams,
    pub initial: Configuration,
    pub events: Vec<CollisionEvent>,
    pub t_end: f64,
    pub provenance: Option<RngStream>,
}

impl EventLog {
    pub fn t_start(&self) -> f64 {
        self.initial.t
    }

    pub fn n_particles(&self) -> usize {
        self.initial.len()
    }

    pub fn with_provenance(mut self, stream: RngStream) -> Self {
        self.provenance = Some(stream);
        self
    }

    /// Configuration at time `t`, reconstructed by replaying the log.
    pub fn evolve_to(&self, t: f64) -> Result<Configuration> {
        Ok(self.evolve_to_many(&[t])?.pop().expect("one time requested"))
    }

    /// Configurations at several nondecreasing times in one replay pass.
    pub fn evolve_to_many(&self, times: &[f64]) -> Result<Vec<Configuration>> {
        let (start, end) = (self.t_start(), self.t_end);
        for w in times.windows(2) {
            if w[1] < w[0] {
                return Err(Error::InvalidParameter("replay times must be nondecreasing".into()));
            }
        }
        if let Some(&t) = times.iter().find(|&&t| !(t >= start && t <= end)) {
            return Err(Error::OutOfRange { t, start, end });
        }
        let mut state = FlightState::from_configuration(&self.initial);
        let mut next = 0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            while next < self.events.len() && self.events[next].t <= t {
                let e = &self.events[next];
                state.apply(e.i as usize, e.j as usize, e.t, e.v_post);
                next += 1;
            }
            out.push(state.snapshot(t, self.initial.d()));
        }
        Ok(out)
    }

    pub fn final_configuration(&self) -> Configuration {
        self.evolve_to(self.t_end).expect("t_end is inside the log range")
    }

    /// Replays the log, recomputing contact normals and post-collision
    /// velocities from the replayed state, and returns the largest
    /// componentwise deviation from the recorded values.
    pub fn replay_defect(&self) -> f64 {
        let mut state = FlightState::from_configuration(&self.initial);
        let mut worst = 0.0f64;
        for e in &self.events {
            let (i, j) = (e.i as usize, e.j as usize);
            let xi = state.position(i, e.t);
            let xj = state.position(j, e.t);
            let omega = contact_normal(xi, xj);
            let pre = [state.v[i], state.v[j]];
            let (a, b) = scatter_unchecked(pre[0], pre[1], omega);
            worst = worst
                .max((omega - e.omega).max_abs())
                .max((pre[0] - e.v_pre[0]).max_abs())
                .max((pre[1] - e.v_pre[1]).max_abs())
                .max((a - e.v_post[0]).max_abs())
                .max((b - e.v_post[1]).max_abs());
            state.apply(i, j, e.t, [a, b]);
        }
        worst
    }
}

const LOG_MAGIC: &[u8; 4] = b"KLEV";
const LOG_VERSION: u32 = 1;

impl EventLog {
    /// Little-endian binary form. The header holds the model parameters,
    /// time range, particle count and seed provenance, followed by the
    /// initial phase points and one fixed-width record per event:
    /// `t`, `i`, `j`, `omega`, `v_pre` and `v_post`.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        let d = self.params.d();
        w.write_all(LOG_MAGIC)?;
        w.write_all(&LOG_VERSION.to_le_bytes())?;
        w.write_all(&(d as u32).to_le_bytes())?;
        for x in [self.params.eps(), self.params.beta(), self.t_start(), self.t_end] {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&(self.n_particles() as u64).to_le_bytes())?;
        let (flag, seed, stream) = match self.provenance {
            Some(p) => (1u8, p.seed, p.stream_id),
            None => (0u8, 0, 0),
        };
        w.write_all(&[flag])?;
        w.write_all(&seed.to_le_bytes())?;
        w.write_all(&stream.to_le_bytes())?;
        w.write_all(&(self.events.len() as u64).to_le_bytes())?;
        let put = |w: &mut W, v: &Vector| -> Result<()> {
            for c in v.as_slice() {
                w.write_all(&c.to_le_bytes())?;
            }
            Ok(())
        };
        for p in self.initial.particles() {
            put(w, &p.x)?;
            put(w, &p.v)?;
        }
        for e in &self.events {
            w.write_all(&e.t.to_le_bytes())?;
            w.write_all(&e.i.to_le_bytes())?;
            w.write_all(&e.j.to_le_bytes())?;
            for v in [&e.omega, &e.v_pre[0], &e.v_pre[1], &e.v_post[0], &e.v_post[1]] {
                put(w, v)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_binary(&mut out).expect("writing to memory");
        out
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != LOG_MAGIC {
            return Err(Error::Format("not an event log".into()));
        }
        let version = read_u32(r)?;
        if version != LOG_VERSION {
            return Err(Error::Format(format!("unsupported event log version {version}")));
        }
        let d = read_u32(r)? as usize;
        let eps = read_f64(r)?;
        let beta = read_f64(r)?;
        let t_start = read_f64(r)?;
        let t_end = read_f64(r)?;
        let params = ModelParams::new(d, eps, beta).map_err(|e| Error::Format(e.to_string()))?;
        let n = read_u64(r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let seed = read_u64(r)?;
        let stream = read_u64(r)?;
        let provenance = match flag[0] {
            0 => None,
            1 => Some(RngStream::new(seed, stream)),
            other => return Err(Error::Format(format!("bad provenance flag {other}"))),
        };
        let n_events = read_u64(r)? as usize;
        let get = |r: &mut R| -> Result<Vector> {
            let mut c = [0.0; 3];
            for slot in c.iter_mut().take(d) {
                *slot = read_f64(r)?;
            }
            Vector::from_slice(&c[..d])
        };
        let mut particles = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let x = get(r)?;
            let v = get(r)?;
            particles.push(PhasePoint::new(x, v).map_err(|e| Error::Format(e.to_string()))?);
        }
        let initial = Configuration::new(t_start, d, particles).map_err(|e| Error::Format(e.to_string()))?;
        let mut events = Vec::with_capacity(n_events.min(1 << 24));
        for _ in 0..n_events {
            let t = read_f64(r)?;
            let i = read_u32(r)?;
            let j = read_u32(r)?;
            if i >= j || j as usize >= n {
                return Err(Error::Format(format!("bad event pair ({i}, {j})")));
            }
            let omega = get(r)?;
            let v_pre = [get(r)?, get(r)?];
            let v_post = [get(r)?, get(r)?];
            events.push(CollisionEvent {
                t,
                i,
                j,
                omega,
                v_pre,
                v_post,
            });
        }
        Ok(Self {
            params,
            initial,
            events,
            t_end,
            provenance,
        })
    }

    /// One headered row per event.
    pub fn to_csv(&self) -> String {
        let d = self.params.d();
        let axes = ["x", "y", "z"];
        let mut s = String::from("t,i,j");
        for name in ["omega", "vi_pre", "vj_pre", "vi_post", "vj_post"] {
            for a in axes.iter().take(d) {
                write!(s, ",{name}_{a}").expect("write to string");
            }
        }
        s.push('\n');
        for e in &self.events {
            write!(s, "{},{},{}", e.t, e.i, e.j).expect("write to string");
            for v in [&e.omega, &e.v_pre[0], &e.v_pre[1], &e.v_post[0], &e.v_post[1]] {
                for c in v.as_slice() {
                    write!(s, ",{c}").expect("write to string");
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Free-flight state: each particle stores its position at its last
/// collision time. Positions at other times are always computed as
/// `x_ref + v (t - t_ref)` so that replay reproduces the run bit for bit.
#[derive(Clone, Debug)]
struct FlightState {
    x: Vec<Vector>,
    v: Vec<Vector>,
    t_ref: Vec<f64>,
}

impl FlightState {
    fn from_configuration(c: &Configuration) -> Self {
        Self {
            x: c.particles().iter().map(|p| p.x).collect(),
            v: c.particles().iter().map(|p| p.v).collect(),
            t_ref: vec![c.t; c.len()],
        }
    }

    #[inline]
    fn position(&self, i: usize, t: f64) -> Vector {
        self.x[i] + self.v[i] * (t - self.t_ref[i])
    }

    fn apply(&mut self, i: usize, j: usize, t: f64, v_post: [Vector; 2]) {
        let xi = self.position(i, t);
        let xj = self.position(j, t);
        self.x[i] = xi;
        self.x[j] = xj;
        self.t_ref[i] = t;
        self.t_ref[j] = t;
        self.v[i] = v_post[0];
        self.v[j] = v_post[1];
    }

    fn snapshot(&self, t: f64, d: usize) -> Configuration {
        let particles = (0..self.x.len())
            .map(|i| PhasePoint {
                x: self.position(i, t),
                v: self.v[i],
            })
            .collect();
        Configuration::new(t, d, particles).expect("replayed state stays finite")
    }
}

#[inline]
fn contact_normal(xi: Vector, xj: Vector) -> Vector {
    let dx = xi - xj;
    dx * (1.0 / dx.norm())
}

/// Time until two spheres at distance `eps` meet, with the approach
/// condition `(dx + dv t) . dv < 0` at contact.
pub fn predict_collision(p_i: &PhasePoint, p_j: &PhasePoint, eps: f64) -> Result<Option<f64>> {
    let dx = p_i.x - p_j.x;
    if dx.norm() < eps * (1.0 - EXCLUSION_TOLERANCE) {
        return Err(Error::Contract(format!(
            "overlapping spheres: distance {:e} < eps {eps:e}",
            dx.norm()
        )));
    }
    Ok(time_to_contact(dx, p_i.v - p_j.v, eps))
}

#[inline]
fn time_to_contact(dx: Vector, dv: Vector, eps: f64) -> Option<f64> {
    let b = dx.dot(&dv);
    if b >= 0.0 {
        return None;
    }
    let dv_sq = dv.norm_sq();
    let gap = dx.norm_sq() - eps * eps;
    let disc = b * b - dv_sq * gap;
    if disc <= 0.0 {
        return None;
    }
    // Smaller root of dv^2 t^2 + 2 b t + gap = 0 in cancellation-free form.
    let t = gap / (-b + disc.sqrt());
    Some(t.max(0.0))
}

#[derive(Clone, Copy, Debug)]
struct QueueEntry {
    t: f64,
    i: u32,
    j: u32,
    count_i: u64,
    count_j: u64,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueEntry {
    // Time first, then the lexicographic pair: simultaneous events resolve
    // in a fixed order.
    fn cmp(&self, other: &Self) -> Ordering {
        self.t
            .total_cmp(&other.t)
            .then(self.i.cmp(&other.i))
            .then(self.j.cmp(&other.j))
            .then(self.count_i.cmp(&other.count_i))
            .then(self.count_j.cmp(&other.count_j))
    }
}

struct Engine<'a> {
    params: &'a ModelParams,
    state: FlightState,
    counts: Vec<u64>,
    heap: BinaryHeap<Reverse<QueueEntry>>,
    grid: CellHash,
    cell_of: Vec<CellKey>,
    horizon_end: f64,
    v_bound: f64,
    t_end: f64,
    zeno_window: f64,
    recent: HashMap<(u32, u32), (f64, usize)>,
    events: Vec<CollisionEvent>,
}

impl<'a> Engine<'a> {
    fn rebuild(&mut self, t_now: f64) {
        let n = self.state.x.len();
        let d = self.params.d();
        let eps = self.params.eps();
        self.heap.clear();
        self.v_bound = self.state.v.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let positions: Vec<Vector> = (0..n).map(|i| self.state.position(i, t_now)).collect();

        // Cell size from the typical spacing of the cloud, using per-axis
        // spreads so a few far-away particles do not inflate it. A few
        // particles per cell keeps rebuilds rare without crowding the
        // neighbour scans.
        let mut volume = 1.0;
        for k in 0..d {
            let mean = positions.iter().map(|x| x.get(k)).sum::<f64>() / n as f64;
            let var = positions.iter().map(|x| (x.get(k) - mean).powi(2)).sum::<f64>() / n as f64;
            volume *= (4.0 * var.sqrt()).max(eps);
        }
        let spacing = (volume / n as f64).powf(1.0 / d as f64);
        let size = (3.0 * spacing).max(2.0 * eps);
        let horizon = if self.v_bound > 0.0 {
            (size - eps) / (2.0 * self.v_bound)
        } else {
            f64::INFINITY
        };
        self.horizon_end = (t_now + horizon).min(self.t_end);

        self.grid.reset(size);
        for (i, x) in positions.iter().enumerate() {
            self.cell_of[i] = self.grid.insert(i as u32, x);
        }
        for i in 0..n {
            self.predict_for(i, t_now, true);
        }
    }

    /// Schedules events of particle `i` with its cell neighbours. With
    /// `forward_only`, only partners `j > i` are considered.
    fn predict_for(&mut self, i: usize, t_now: f64, forward_only: bool) {
        let eps = self.params.eps();
        let key = self.cell_of[i];
        let d = self.params.d();
        let mut found: Vec<QueueEntry> = Vec::new();
        let xi = self.state.position(i, t_now);
        let vi = self.state.v[i];
        let state = &self.state;
        let counts = &self.counts;
        let horizon_end = self.horizon_end;
        self.grid.for_each_near_key(key, d, |j| {
            let j = j as usize;
            if j == i || (forward_only && j < i) {
                return;
            }
            let xj = state.position(j, t_now);
            if let Some(dt) = time_to_contact(xi - xj, vi - state.v[j], eps) {
                let t = t_now + dt;
                if t <= horizon_end {
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    found.push(QueueEntry {
                        t,
                        i: a as u32,
                        j: b as u32,
                        count_i: counts[a],
                        count_j: counts[b],
                    });
                }
            }
        });
        for e in found {
            self.heap.push(Reverse(e));
        }
    }

    fn collide(&mut self, e: QueueEntry) -> Result<bool> {
        let (i, j) = (e.i as usize, e.j as usize);
        let xi = self.state.position(i, e.t);
        let xj = self.state.position(j, e.t);
        let omega = contact_normal(xi, xj);
        let pre = [self.state.v[i], self.state.v[j]];
        if (pre[0] - pre[1]).dot(&omega) >= 0.0 {
            // Grazing or already separating after rounding: no impulse.
            return Ok(false);
        }
        let (a, b) = scatter_unchecked(pre[0], pre[1], omega);
        self.state.apply(i, j, e.t, [a, b]);
        self.counts[i] += 1;
        self.counts[j] += 1;
        self.events.push(CollisionEvent {
            t: e.t,
            i: e.i,
            j: e.j,
            omega,
            v_pre: pre,
            v_post: [a, b],
        });

        let slot = self.recent.entry((e.i, e.j)).or_insert((f64::NEG_INFINITY, 0));
        if e.t - slot.0 <= self.zeno_window {
            slot.1 += 1;
            if slot.1 > ZENO_MAX_EVENTS {
                return Err(Error::Zeno {
                    i: e.i,
                    j: e.j,
                    count: slot.1,
                    window: self.zeno_window,
                });
            }
        } else {
            slot.1 = 1;
        }
        slot.0 = e.t;

        Ok(a.norm() > self.v_bound || b.norm() > self.v_bound)
    }
}

/// Runs the hard-sphere flow from `config` until `t_end`.
pub fn run(config: &Configuration, t_end: f64, params: &ModelParams) -> Result<EventLog> {
    if config.d() != params.d() {
        return Err(Error::DimensionMismatch {
            expected: params.d(),
            found: config.d(),
        });
    }
    if !(t_end >= config.t) || !t_end.is_finite() {
        return Err(Error::OutOfRange {
            t: t_end,
            start: config.t,
            end: f64::INFINITY,
        });
    }
    config.check_exclusion(params.eps())?;

    let n = config.len();
    let mut engine = Engine {
        params,
        state: FlightState::from_configuration(config),
        counts: vec![0; n],
        heap: BinaryHeap::new(),
        grid: CellHash::new(1.0),
        cell_of: vec![[0; 3]; n],
        horizon_end: t_end,
        v_bound: 0.0,
        t_end,
        zeno_window: ZENO_WINDOW_REL * (t_end - config.t).max(f64::MIN_POSITIVE),
        recent: HashMap::new(),
        events: Vec::new(),
    };

    if n >= 2 {
        let mut t_now = config.t;
        engine.rebuild(t_now);
        loop {
            let next = engine.heap.peek().map(|Reverse(e)| *e);
            match next {
                Some(e) if e.t <= engine.horizon_end => {
                    engine.heap.pop();
                    let (i, j) = (e.i as usize, e.j as usize);
                    if engine.counts[i] != e.count_i || engine.counts[j] != e.count_j {
                        continue;
                    }
                    t_now = e.t;
                    let faster = engine.collide(e)?;
                    if faster {
                        engine.rebuild(t_now);
                    } else {
                        engine.predict_for(i, t_now, false);
                        engine.predict_for(j, t_now, false);
                    }
                }
                _ => {
                    if engine.horizon_end >= t_end {
                        break;
                    }
                    t_now = engine.horizon_end;
                    engine.rebuild(t_now);
                }
            }
        }
    }

    Ok(EventLog {
        params: *params,
        initial: config.clone(),
        events: engine.events,
        t_end,
        provenance: None,
    })
}

/// Same positions, all velocities negated.
pub fn reverse_velocities(config: &Configuration) -> Configuration {
    let particles = config
        .particles()
        .iter()
        .map(|p| PhasePoint { x: p.x, v: -p.v })
        .collect();
    Configuration::new(config.t, config.d(), particles).expect("negation keeps a valid configuration")
}

/// Average time between collisions per particle:
/// `N * elapsed / (2 * collisions)`. `None` without collisions.
pub fn mean_free_time_estimate(log: &EventLog) -> Option<f64> {
    if log.events.is_empty() {
        return None;
    }
    let elapsed = log.t_end - log.t_start();
    Some(log.n_particles() as f64 * elapsed / (2.0 * log.events.len() as f64))
}
