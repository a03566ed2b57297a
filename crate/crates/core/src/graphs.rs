//! Collision graphs: particles as vertices, collisions in a time window as
//! edges. Connected components are the collision graphs of a run, and an
//! edge joining two already connected particles is a recollision.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dynamics::EventLog;
use crate::error::{Error, Result};
use crate::phase::{PhasePoint, Vector, EXCLUSION_TOLERANCE};
use crate::union_find::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphEdge {
    /// Index of the event in the log.
    pub event: usize,
    pub i: u32,
    pub j: u32,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    window: (f64, f64),
    n_vertices: usize,
    edges: Vec<GraphEdge>,
}

impl InteractionGraph {
    /// Edges must lie in the window, join distinct vertices and be sorted
    /// by time.
    pub fn from_edges(n_vertices: usize, window: (f64, f64), edges: Vec<GraphEdge>) -> Result<Self> {
        if !(window.0 <= window.1) {
            return Err(Error::InvalidParameter(format!("empty window [{}, {}]", window.0, window.1)));
        }
        for e in &edges {
            if e.i == e.j || e.i as usize >= n_vertices || e.j as usize >= n_vertices {
                return Err(Error::Contract(format!("edge ({}, {}) invalid for {n_vertices} vertices", e.i, e.j)));
            }
            if !(e.t >= window.0 && e.t <= window.1) {
                return Err(Error::Contract(format!("edge time {} outside the window", e.t)));
            }
        }
        if edges.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::Contract("edges must be sorted by time".into()));
        }
        Ok(Self {
            window,
            n_vertices,
            edges,
        })
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    /// Streaming union-find pass: an edge is a recollision iff its
    /// endpoints are already connected when it occurs.
    pub fn recollision_labels(&self) -> Vec<bool> {
        let mut uf = UnionFind::new(self.n_vertices);
        self.edges.iter().map(|e| !uf.union(e.i, e.j)).collect()
    }
}

fn check_window(log: &EventLog, t0: f64, t1: f64) -> Result<()> {
    let (start, end) = (log.t_start(), log.t_end);
    for t in [t0, t1] {
        if !(t >= start && t <= end) {
            return Err(Error::OutOfRange { t, start, end });
        }
    }
    if t1 < t0 {
        return Err(Error::InvalidParameter(format!("window [{t0}, {t1}] is reversed")));
    }
    Ok(())
}

/// All particles as vertices, one edge per collision with `t` in `[t0, t1]`.
pub fn build_graph(log: &EventLog, t0: f64, t1: f64) -> Result<InteractionGraph> {
    check_window(log, t0, t1)?;
    let edges = log
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.t >= t0 && e.t <= t1)
        .map(|(k, e)| GraphEdge {
            event: k,
            i: e.i,
            j: e.j,
            t: e.t,
        })
        .collect();
    InteractionGraph::from_edges(log.n_particles(), (t0, t1), edges)
}

/// Recollision labels for the events of `log` inside `[t0, t1]`, in order.
pub fn label_recollisions(log: &EventLog, t0: f64, t1: f64) -> Result<Vec<bool>> {
    Ok(build_graph(log, t0, t1)?.recollision_labels())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterSummary {
    /// Sorted particle ids.
    pub members: Vec<u32>,
    pub n_collisions: usize,
    pub cycle_rank: usize,
    pub n_recollisions: usize,
}

impl ClusterSummary {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Connected components, ordered by smallest member id.
pub fn components(graph: &InteractionGraph) -> Vec<ClusterSummary> {
    let n = graph.n_vertices;
    let labels = graph.recollision_labels();
    let mut uf = UnionFind::new(n);
    for e in &graph.edges {
        uf.union(e.i, e.j);
    }
    let mut slot_of_root: Vec<Option<usize>> = vec![None; n];
    let mut out: Vec<ClusterSummary> = Vec::new();
    for v in 0..n as u32 {
        let r = uf.find(v) as usize;
        let slot = *slot_of_root[r].get_or_insert_with(|| {
            out.push(ClusterSummary {
                members: Vec::new(),
                n_collisions: 0,
                cycle_rank: 0,
                n_recollisions: 0,
            });
            out.len() - 1
        });
        out[slot].members.push(v);
    }
    for (e, &recollision) in graph.edges.iter().zip(&labels) {
        let slot = slot_of_root[uf.find(e.i) as usize].expect("endpoint has a component");
        out[slot].n_collisions += 1;
        out[slot].n_recollisions += recollision as usize;
    }
    for c in &mut out {
        c.cycle_rank = c.n_collisions + 1 - c.size();
    }
    out
}

/// Free flight between knots: segment `k` starts at `starts[k]` and runs
/// until the next start or the end of the window.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    segments: Vec<(f64, PhasePoint)>,
    t_end: f64,
}

impl Trajectory {
    pub fn free(t0: f64, t1: f64, p: PhasePoint) -> Result<Self> {
        if !(t0 <= t1) {
            return Err(Error::InvalidParameter("reversed trajectory window".into()));
        }
        Ok(Self {
            segments: vec![(t0, p)],
            t_end: t1,
        })
    }

    /// Appends a velocity change at time `t`.
    pub fn kink(&mut self, t: f64, v: Vector) -> Result<()> {
        let &(ts, last) = self.segments.last().expect("nonempty");
        if !(t >= ts && t <= self.t_end) {
            return Err(Error::Contract(format!("kink at {t} outside [{ts}, {}]", self.t_end)));
        }
        let x = last.x + last.v * (t - ts);
        self.segments.push((t, PhasePoint { x, v }));
        Ok(())
    }

    pub fn window(&self) -> (f64, f64) {
        (self.segments[0].0, self.t_end)
    }

    pub fn position(&self, t: f64) -> Vector {
        let k = self.segments.partition_point(|s| s.0 <= t).saturating_sub(1);
        let (ts, p) = self.segments[k];
        p.x + p.v * (t - ts)
    }

    fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().map(|s| s.0).skip(1)
    }

    fn segment_at(&self, t: f64) -> (f64, PhasePoint) {
        let k = self.segments.partition_point(|s| s.0 <= t).saturating_sub(1);
        self.segments[k]
    }
}

/// Trajectories of all particles of `log` over `[t0, t1]`.
pub fn trajectories(log: &EventLog, t0: f64, t1: f64) -> Result<Vec<Trajectory>> {
    check_window(log, t0, t1)?;
    let start = log.evolve_to(t0)?;
    let mut out: Vec<Trajectory> = start
        .particles()
        .iter()
        .map(|&p| Trajectory::free(t0, t1, p))
        .collect::<Result<_>>()?;
    for e in log.events.iter().filter(|e| e.t > t0 && e.t <= t1) {
        out[e.i as usize].kink(e.t, e.v_post[0])?;
        out[e.j as usize].kink(e.t, e.v_post[1])?;
    }
    Ok(out)
}

/// Minimum distance between two trajectories over their common window,
/// exact per linear piece.
pub fn min_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.window() != b.window() {
        return Err(Error::InvalidParameter(format!(
            "mismatched windows {:?} and {:?}",
            a.window(),
            b.window()
        )));
    }
    let (t0, t1) = a.window();
    let mut cuts: Vec<f64> = a.breakpoints().chain(b.breakpoints()).collect();
    cuts.push(t0);
    cuts.push(t1);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut best = f64::INFINITY;
    for w in cuts.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let (sa, pa) = a.segment_at(ta);
        let (sb, pb) = b.segment_at(ta);
        let dx = (pa.x + pa.v * (ta - sa)) - (pb.x + pb.v * (ta - sb));
        let dv = pa.v - pb.v;
        let dv_sq = dv.norm_sq();
        let s = if dv_sq > 0.0 {
            (-dx.dot(&dv) / dv_sq).clamp(0.0, tb - ta)
        } else {
            0.0
        };
        best = best.min((dx + dv * s).norm());
    }
    if cuts.len() == 1 {
        best = (a.position(t0) - b.position(t0)).norm();
    }
    Ok(best)
}

/// Whether any particle of bundle `a` comes closer than `eps` to any
/// particle of bundle `b` during the common window.
pub fn overlap_check(a: &[Trajectory], b: &[Trajectory], eps: f64) -> Result<bool> {
    let threshold = eps * (1.0 - EXCLUSION_TOLERANCE);
    for ta in a {
        for tb in b {
            if min_distance(ta, tb)? < threshold {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Cluster statistics of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterRecord {
    pub n_particles: usize,
    pub n_components: usize,
    pub mean_size: f64,
    pub max_size: usize,
    /// Fraction of particles in components with a cycle.
    pub cycle_fraction: f64,
    /// Largest component size over particle count.
    pub largest_fraction: f64,
    pub size_histogram: BTreeMap<usize, usize>,
}

impl ClusterRecord {
    pub fn from_components(comps: &[ClusterSummary]) -> Self {
        let n_particles: usize = comps.iter().map(|c| c.size()).sum();
        let mut size_histogram = BTreeMap::new();
        for c in comps {
            *size_histogram.entry(c.size()).or_insert(0) += 1;
        }
        let max_size = comps.iter().map(|c| c.size()).max().unwrap_or(0);
        let cyc: usize = comps.iter().filter(|c| c.cycle_rank > 0).map(|c| c.size()).sum();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            n_particles,
            n_components: comps.len(),
            mean_size: ratio(n_particles, comps.len()),
            max_size,
            cycle_fraction: ratio(cyc, n_particles),
            largest_fraction: ratio(max_size, n_particles),
            size_histogram,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterStats {
    pub window: (f64, f64),
    pub members: Vec<ClusterRecord>,
    /// Pooled over members, except `largest_fraction`, which is the mean of
    /// the per-member values.
    pub aggregate: ClusterRecord,
}

impl ClusterStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "member,n_particles,n_components,mean_size,max_size,cycle_fraction,largest_fraction\n",
        );
        let row = |s: &mut String, name: &str, r: &ClusterRecord| {
            writeln!(
                s,
                "{name},{},{},{},{},{},{}",
                r.n_particles, r.n_components, r.mean_size, r.max_size, r.cycle_fraction, r.largest_fraction
            )
            .expect("write to string");
        };
        for (k, r) in self.members.iter().enumerate() {
            row(&mut s, &k.to_string(), r);
        }
        row(&mut s, "aggregate", &self.aggregate);
        s
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("size,count\n");
        for (size, count) in &self.aggregate.size_histogram {
            writeln!(s, "{size},{count}").expect("write to string");
        }
        s
    }
}

/// Per-member and pooled cluster statistics over the window `[t0, t1]`.
pub fn cluster_stats(logs: &[EventLog], t0: f64, t1: f64) -> Result<ClusterStats> {
    if logs.is_empty() {
        return Err(Error::InvalidParameter("empty ensemble".into()));
    }
    let mut members = Vec::with_capacity(logs.len());
    let mut pooled: Vec<ClusterSummary> = Vec::new();
    for log in logs {
        let comps = components(&build_graph(log, t0, t1)?);
        members.push(ClusterRecord::from_components(&comps));
        pooled.extend(comps);
    }
    let mut aggregate = ClusterRecord::from_components(&pooled);
    aggregate.largest_fraction = members.iter().map(|r| r.largest_fraction).sum::<f64>() / members.len() as f64;
    Ok(ClusterStats {
        window: (t0, t1),
        members,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::run;
    use crate::phase::{Configuration, ModelParams};

    fn edge(i: u32, j: u32, t: f64) -> GraphEdge {
        GraphEdge { event: 0, i, j, t }
    }

    fn pp(x: (f64, f64), v: (f64, f64)) -> PhasePoint {
        PhasePoint::new(Vector::new2(x.0, x.1), Vector::new2(v.0, v.1)).unwrap()
    }

    fn head_on_log() -> EventLog {
        let c = Configuration::new(
            0.0,
            2,
            vec![
                pp((0.0, 0.0), (1.0, 0.0)),
                pp((3.0, 0.0), (-1.0, 0.0)),
                pp((0.0, 10.0), (0.0, 1.0)),
            ],
        )
        .unwrap();
        run(&c, 2.0, &ModelParams::new(2, 1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn empty_window_gives_singletons() {
        let log = head_on_log();
        let g = build_graph(&log, 0.5, 0.5).unwrap();
        assert!(g.edges().is_empty());
        let comps = components(&g);
        assert_eq!(comps.len(), 3);
        assert!(comps.iter().all(|c| c.size() == 1 && c.cycle_rank == 0));
    }

    #[test]
    fn head_on_full_window() {
        let log = head_on_log();
        let g = build_graph(&log, 0.0, 2.0).unwrap();
        assert_eq!(g.edges().len(), 1);
        let comps = components(&g);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].members, vec![0, 1]);
        assert_eq!(comps[1].members, vec![2]);
        assert!(build_graph(&log, 0.0, 3.0).is_err());
        assert!(build_graph(&log, 1.5, 1.0).is_err());
    }

    #[test]
    fn path_and_triangle_cycle_ranks() {
        let path = InteractionGraph::from_edges(3, (0.0, 1.0), vec![edge(0, 1, 0.1), edge(1, 2, 0.2)]).unwrap();
        let c = components(&path);
        assert_eq!((c.len(), c[0].cycle_rank), (1, 0));
        let tri = InteractionGraph::from_edges(3, (0.0, 1.0), vec![edge(0, 1, 0.1), edge(1, 2, 0.2), edge(0, 2, 0.3)])
            .unwrap();
        let c = components(&tri);
        assert_eq!((c[0].cycle_rank, c[0].n_recollisions), (1, 1));
        assert_eq!(tri.recollision_labels(), vec![false, false, true]);
    }

    #[test]
    fn repeated_pair_is_a_recollision() {
        let g = InteractionGraph::from_edges(2, (0.0, 1.0), vec![edge(0, 1, 0.1), edge(0, 1, 0.5)]).unwrap();
        assert_eq!(g.recollision_labels(), vec![false, true]);
    }

    #[test]
    fn from_edges_validates() {
        assert!(InteractionGraph::from_edges(2, (0.0, 1.0), vec![edge(0, 2, 0.1)]).is_err());
        assert!(InteractionGraph::from_edges(2, (0.0, 1.0), vec![edge(0, 1, 1.5)]).is_err());
        assert!(InteractionGraph::from_edges(3, (0.0, 1.0), vec![edge(0, 1, 0.5), edge(1, 2, 0.1)]).is_err());
    }

    #[test]
    fn crossing_free_flights_overlap() {
        let eps = 0.1;
        let a = Trajectory::free(0.0, 2.0, pp((0.0, 0.0), (1.0, 0.0))).unwrap();
        let b = Trajectory::free(0.0, 2.0, pp((1.0, 0.5 * eps), (-1.0, 0.0))).unwrap();
        assert!((min_distance(&a, &b).unwrap() - 0.5 * eps).abs() < 1e-15);
        assert!(overlap_check(&[a.clone()], &[b], eps).unwrap());
        let far = Trajectory::free(0.0, 2.0, pp((0.0, 1.0), (1.0, 0.0))).unwrap();
        assert!(!overlap_check(&[a.clone()], &[far], eps).unwrap());
        let other = Trajectory::free(0.0, 1.0, pp((0.0, 1.0), (1.0, 0.0))).unwrap();
        assert!(overlap_check(&[a], &[other], eps).is_err());
    }

    #[test]
    fn kinked_trajectory_distance() {
        // a turns around at t = 1; b sits at (1.5, 0). Closest approach is at
        // the kink, distance 0.5.
        let mut a = Trajectory::free(0.0, 3.0, pp((0.0, 0.0), (1.0, 0.0))).unwrap();
        a.kink(1.0, Vector::new2(-1.0, 0.0)).unwrap();
        let b = Trajectory::free(0.0, 3.0, pp((1.5, 0.0), (0.0, 0.0))).unwrap();
        assert!((min_distance(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(a.position(2.5), Vector::new2(-0.5, 0.0));
    }

    #[test]
    fn collisionless_ensemble_stats() {
        let c = Configuration::new(0.0, 2, vec![pp((0.0, 0.0), (1.0, 0.0)), pp((0.0, 5.0), (1.0, 0.0))]).unwrap();
        let log = run(&c, 1.0, &ModelParams::new(2, 0.1, 1.0).unwrap()).unwrap();
        let stats = cluster_stats(&[log.clone(), log], 0.0, 1.0).unwrap();
        assert_eq!(stats.aggregate.max_size, 1);
        assert_eq!(stats.aggregate.cycle_fraction, 0.0);
        assert_eq!(stats.aggregate.size_histogram.get(&1), Some(&4));
        assert_eq!(stats.to_csv().lines().count(), 4);
        assert!(cluster_stats(&[], 0.0, 1.0).is_err());
    }
}
