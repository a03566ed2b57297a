//! Dense arrays over uniform cell grids with a self-describing header.
//!
//! Histograms and solver fields share this layout so that they can be
//! compared cell by cell after a round trip through disk.
//!
//! Binary layout, little-endian:
//! `b"KLDA"`, `u32` version, `u32` rank, then per axis `u64` cells,
//! `f64` lo, `f64` hi, `u32` name length and UTF-8 name bytes, then `u64`
//! value count and the values as `f64` in row-major order.

use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"KLDA";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub name: String,
    pub cells: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Axis {
    pub fn new(name: impl Into<String>, cells: usize, lo: f64, hi: f64) -> Result<Self> {
        if cells == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("bad axis: {cells} cells on [{lo}, {hi}]")));
        }
        Ok(Self {
            name: name.into(),
            cells,
            lo,
            hi,
        })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width()
    }

    fn matches(&self, other: &Axis) -> bool {
        let tol = 1e-12 * (self.hi - self.lo).abs().max(1.0);
        self.cells == other.cells && (self.lo - other.lo).abs() <= tol && (self.hi - other.hi).abs() <= tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseArray {
    pub axes: Vec<Axis>,
    pub data: Vec<f64>,
}

impl DenseArray {
    pub fn new(axes: Vec<Axis>, data: Vec<f64>) -> Result<Self> {
        let len: usize = axes.iter().map(|a| a.cells).product();
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "axes describe {len} cells but {} values were given",
                data.len()
            )));
        }
        Ok(Self { axes, data })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.cells).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::width).product()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            idx[k] = flat % a.cells;
            flat /= a.cells;
        }
        idx
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn check_same_grid(&self, other: &DenseArray) -> Result<()> {
        let same = self.axes.len() == other.axes.len() && self.axes.iter().zip(&other.axes).all(|(a, b)| a.matches(b));
        if same {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "grids differ: {} vs {}",
                describe(&self.axes),
                describe(&other.axes)
            )))
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.axes.len() as u32).to_le_bytes())?;
        for a in &self.axes {
            w.write_all(&(a.cells as u64).to_le_bytes())?;
            w.write_all(&a.lo.to_le_bytes())?;
            w.write_all(&a.hi.to_le_bytes())?;
            w.write_all(&(a.name.len() as u32).to_le_bytes())?;
            w.write_all(a.name.as_bytes())?;
        }
        w.write_all(&(self.data.len() as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.data.len());
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a dense array file".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dense array version {version}")));
        }
        let rank = read_u32(r)? as usize;
        if rank > 64 {
            return Err(Error::Format(format!("implausible rank {rank}")));
        }
        let mut axes = Vec::with_capacity(rank);
        for _ in 0..rank {
            let cells = read_u64(r)? as usize;
            let lo = read_f64(r)?;
            let hi = read_f64(r)?;
            let len = read_u32(r)? as usize;
            if len > 4096 {
                return Err(Error::Format("axis name too long".into()));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("axis name is not UTF-8".into()))?;
            axes.push(Axis::new(name, cells, lo, hi).map_err(|e| Error::Format(e.to_string()))?);
        }
        let count = read_u64(r)? as usize;
        let expected: usize = axes.iter().map(|a| a.cells).product();
        if count != expected {
            return Err(Error::Format(format!("header announces {count} values, axes need {expected}")));
        }
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(read_f64(r)?);
        }
        Self::new(axes, data)
    }

    /// One row per cell: indices, cell centers, value.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let names: Vec<&str> = self.axes.iter().map(|a| a.name.as_str()).collect();
        for n in &names {
            write!(s, "{n}_index,").expect("write to string");
        }
        for n in &names {
            write!(s, "{n}_center,").expect("write to string");
        }
        s.push_str("value\n");
        for (flat, v) in self.data.iter().enumerate() {
            let idx = self.multi_index(flat);
            for k in &idx {
                write!(s, "{k},").expect("write to string");
            }
            for (a, &k) in self.axes.iter().zip(&idx) {
                write!(s, "{},", a.center(k)).expect("write to string");
            }
            writeln!(s, "{v}").expect("write to string");
        }
        s
    }
}

fn describe(axes: &[Axis]) -> String {
    let parts: Vec<String> = axes
        .iter()
        .map(|a| format!("{}:{}@[{},{}]", a.name, a.cells, a.lo, a.hi))
        .collect();
    format!("[{}]", parts.join(" "))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// `sum |a - b| * cell volume` on identical grids.
pub fn l1_distance(a: &DenseArray, b: &DenseArray) -> Result<f64> {
    a.check_same_grid(b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum * a.cell_volume())
}
