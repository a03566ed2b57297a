//! Uniform cell hashing over an unbounded domain.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use crate::phase::Vector;

/// Multiplicative hash for small integer keys. Cell keys are not
/// adversarial, so a keyed hash would only cost time.
#[derive(Default)]
pub(crate) struct KeyHasher(u64);

impl Hasher for KeyHasher {
    fn finish(&self) -> u64 {
        self.0 ^ (self.0 >> 29)
    }

    fn write(&mut self, bytes: &[u8]) {
        let mut chunks = bytes.chunks_exact(8);
        for c in &mut chunks {
            self.write_u64(u64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        }
        for &b in chunks.remainder() {
            self.write_u64(b as u64);
        }
    }

    #[inline]
    fn write_u64(&mut self, n: u64) {
        self.0 = (self.0.rotate_left(5) ^ n).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
    }

    #[inline]
    fn write_i64(&mut self, n: i64) {
        self.write_u64(n as u64);
    }

    #[inline]
    fn write_usize(&mut self, n: usize) {
        self.write_u64(n as u64);
    }
}

type FixedState = BuildHasherDefault<KeyHasher>;

pub(crate) type CellKey = [i64; 3];

const NIL: u32 = u32::MAX;

/// Cell table storing, per occupied cell, the head of an intrusive list
/// threaded through `next`. Avoids one allocation per occupied cell, which
/// matters when cells are about one sphere wide.
#[derive(Debug, Clone)]
pub(crate) struct CellHash {
    size: f64,
    head: HashMap<CellKey, u32, FixedState>,
    next: Vec<u32>,
}

impl CellHash {
    pub(crate) fn new(size: f64) -> Self {
        assert!(size > 0.0 && size.is_finite(), "cell size must be positive");
        Self {
            size,
            head: HashMap::default(),
            next: Vec::new(),
        }
    }

    #[inline]
    pub(crate) fn key(&self, x: &Vector) -> CellKey {
        let mut k = [0i64; 3];
        for (axis, slot) in k.iter_mut().enumerate().take(x.dim()) {
            *slot = (x.get(axis) / self.size).floor() as i64;
        }
        k
    }

    /// Ids must be distinct; each may be inserted once between resets.
    pub(crate) fn insert(&mut self, id: u32, x: &Vector) -> CellKey {
        let key = self.key(x);
        if self.next.len() <= id as usize {
            self.next.resize(id as usize + 1, NIL);
        }
        let slot = self.head.entry(key).or_insert(NIL);
        self.next[id as usize] = *slot;
        *slot = id;
        key
    }

    /// Empties the table and switches to a new cell size, keeping the
    /// allocations.
    pub(crate) fn reset(&mut self, size: f64) {
        assert!(size > 0.0 && size.is_finite(), "cell size must be positive");
        self.size = size;
        self.head.clear();
        self.next.clear();
    }

    /// Calls `f` for every id stored in the 3^d cells around `x`.
    pub(crate) fn for_each_neighbor(&self, x: &Vector, f: impl FnMut(u32)) {
        let key = self.key(x);
        self.for_each_near_key(key, x.dim(), f);
    }

    pub(crate) fn for_each_near_key(&self, key: CellKey, d: usize, mut f: impl FnMut(u32)) {
        let z_span: &[i64] = if d == 3 { &[-1, 0, 1] } else { &[0] };
        for dx in -1..=1 {
            for dy in -1..=1 {
                for &dz in z_span {
                    let k = [key[0] + dx, key[1] + dy, key[2] + dz];
                    if let Some(&first) = self.head.get(&k) {
                        let mut id = first;
                        while id != NIL {
                            f(id);
                            id = self.next[id as usize];
                        }
                    }
                }
            }
        }
    }
}
