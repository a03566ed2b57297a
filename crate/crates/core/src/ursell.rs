//! Ursell coefficients of overlap graphs and the Penrose tree bound.

use crate::error::{Error, Result};

pub const MAX_PHI_VERTICES: usize = 10;
pub const MAX_TREE_ENUMERATION: usize = 8;

/// Symmetric overlap relation between `n` clusters, zero diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverlapMatrix {
    n: usize,
    /// Row `i` as a bit set of neighbours.
    rows: Vec<u32>,
}

impl OverlapMatrix {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > 32 {
            return Err(Error::InvalidParameter(format!("overlap matrix size {n} outside 1..=32")));
        }
        Ok(Self { n, rows: vec![0; n] })
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut m = Self::new(n)?;
        for (i, j) in all_pairs(n) {
            m.set(i, j, true);
        }
        Ok(m)
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::new(n)?;
        for &(i, j) in edges {
            if i == j || i >= n || j >= n {
                return Err(Error::InvalidParameter(format!("invalid overlap edge ({i}, {j})")));
            }
            m.set(i, j, true);
        }
        Ok(m)
    }

    /// Bit `k` of `mask` switches on the `k`-th pair in lexicographic order.
    pub fn from_mask(n: usize, mask: u64) -> Result<Self> {
        let mut m = Self::new(n)?;
        for (k, (i, j)) in all_pairs(n).enumerate() {
            if mask >> k & 1 == 1 {
                m.set(i, j, true);
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        assert!(i != j && i < self.n && j < self.n, "invalid pair ({i}, {j})");
        if on {
            self.rows[i] |= 1 << j;
            self.rows[j] |= 1 << i;
        } else {
            self.rows[i] &= !(1 << j);
            self.rows[j] &= !(1 << i);
        }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.rows[i] >> j & 1 == 1
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        all_pairs(self.n).filter(|&(i, j)| self.get(i, j)).collect()
    }
}

fn all_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

fn guard(m: &OverlapMatrix, limit: usize) -> Result<()> {
    if m.n > limit {
        return Err(Error::Budget(format!("{} vertices exceed the enumeration limit {limit}", m.n)));
    }
    Ok(())
}

/// Signed count of connected spanning subgraphs, each weighted by
/// `(-1)^edges`.
///
/// Summing `(-1)^|E|` over all subgraphs of the vertex set `S` gives 1 when
/// `S` has no internal edge and 0 otherwise. Splitting off the component of
/// the smallest vertex turns that identity into a recursion for the
/// connected sum over subsets, at cost `3^n`.
pub fn ursell_phi(m: &OverlapMatrix) -> Result<i64> {
    guard(m, MAX_PHI_VERTICES)?;
    let n = m.n;
    let full = (1usize << n) - 1;
    let independent: Vec<bool> = (0..=full)
        .map(|s| (0..n).all(|i| s >> i & 1 == 0 || (m.rows[i] as usize & s) == 0))
        .collect();
    let mut connected = vec![0i64; full + 1];
    for s in 1..=full {
        let low = s & s.wrapping_neg();
        let rest = s ^ low;
        let mut acc = independent[s] as i64;
        // Proper subsets T of S containing the lowest vertex.
        let mut sub = rest;
        loop {
            let t = sub | low;
            if t != s && independent[s ^ t] {
                acc -= connected[t];
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
        connected[s] = acc;
    }
    Ok(connected[full])
}

/// Spanning trees made of overlap edges, counted one by one.
pub fn spanning_trees_by_enumeration(m: &OverlapMatrix) -> Result<u64> {
    guard(m, MAX_TREE_ENUMERATION)?;
    let edges = m.edges();
    if m.n == 1 {
        return Ok(1);
    }
    fn find(label: &[u8; 32], mut a: usize) -> usize {
        while label[a] as usize != a {
            a = label[a] as usize;
        }
        a
    }
    fn rec(edges: &[(usize, usize)], start: usize, need: usize, label: [u8; 32]) -> u64 {
        if need == 0 {
            return 1;
        }
        let mut total = 0;
        for k in start..edges.len() {
            if edges.len() - k < need {
                break;
            }
            let (i, j) = edges[k];
            let (ri, rj) = (find(&label, i), find(&label, j));
            if ri != rj {
                let mut next = label;
                next[ri] = rj as u8;
                total += rec(edges, k + 1, need - 1, next);
            }
        }
        total
    }
    let mut label = [0u8; 32];
    for (k, slot) in label.iter_mut().enumerate() {
        *slot = k as u8;
    }
    Ok(rec(&edges, 0, m.n - 1, label))
}

/// Matrix-tree theorem: any cofactor of the graph Laplacian, evaluated with
/// fraction-free elimination in exact integers.
pub fn spanning_trees_by_determinant(m: &OverlapMatrix) -> u64 {
    let n = m.n;
    if n == 1 {
        return 1;
    }
    let k = n - 1;
    let mut a: Vec<Vec<i128>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if i == j {
                        m.rows[i].count_ones() as i128
                    } else if m.get(i, j) {
                        -1
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for p in 0..k {
        if a[p][p] == 0 {
            match (p + 1..k).find(|&r| a[r][p] != 0) {
                Some(r) => {
                    a.swap(p, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in p + 1..k {
            for j in p + 1..k {
                a[i][j] = (a[i][j] * a[p][p] - a[i][p] * a[p][j]) / prev;
            }
        }
        prev = a[p][p];
    }
    let det = sign * a[k - 1][k - 1];
    u64::try_from(det).expect("Laplacian cofactor is a nonnegative tree count")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PenroseReport {
    pub phi: i64,
    pub tree_count: u64,
    pub bound_holds: bool,
}

/// `|phi| <= number of spanning trees of the overlap graph`.
pub fn penrose_bound_check(m: &OverlapMatrix) -> Result<PenroseReport> {
    let phi = ursell_phi(m)?;
    let det = spanning_trees_by_determinant(m);
    let tree_count = if m.n <= MAX_TREE_ENUMERATION {
        let counted = spanning_trees_by_enumeration(m)?;
        if counted != det {
            return Err(Error::Inconsistent(format!(
                "tree enumeration gives {counted}, matrix-tree determinant gives {det}"
            )));
        }
        counted
    } else {
        det
    };
    Ok(PenroseReport {
        phi,
        tree_count,
        bound_holds: phi.unsigned_abs() <= tree_count,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenroseSweep {
    pub n: usize,
    pub matrices: u64,
    pub violations: u64,
    /// Largest `|phi| / trees` over connected overlap graphs.
    pub max_ratio: f64,
}

/// Checks the bound on every overlap matrix with `n` vertices.
pub fn penrose_sweep(n: usize) -> Result<PenroseSweep> {
    if n == 0 || n > 6 {
        return Err(Error::Budget(format!("exhaustive sweep supports 1..=6 vertices, got {n}")));
    }
    let n_pairs = n * (n - 1) / 2;
    let matrices = 1u64 << n_pairs;
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    for mask in 0..matrices {
        let r = penrose_bound_check(&OverlapMatrix::from_mask(n, mask)?)?;
        if !r.bound_holds {
            violations += 1;
        }
        if r.tree_count > 0 {
            max_ratio = max_ratio.max(r.phi.unsigned_abs() as f64 / r.tree_count as f64);
        }
    }
    Ok(PenroseSweep {
        n,
        matrices,
        violations,
        max_ratio,
    })
}
