//! Uniform Cartesian scalar grids over the chart bounding box, with an
//! in-domain mask, multilinear interpolation and the `GXR1` on-disk format.
//!
//! File layout: 16-byte header — magic `GXR1`, a little-endian `u32` packing
//! the spatial dimension in the low byte and the per-axis node count in the
//! upper 24 bits, and the `f64` node spacing — followed by `N^d` little-endian
//! `f32` node values (x fastest) and `N^d` mask bytes. Grids are centered on
//! the chart origin, so the header determines the geometry.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::linalg::{Vector, ZERO_VEC};
use crate::manifold::{DomainModel, Point};

pub const GRID_MAGIC: &[u8; 4] = b"GXR1";

/// Geometry of a square/cubic node grid centered on the chart origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeom {
    pub dim: usize,
    /// Nodes per axis.
    pub nodes: usize,
    pub spacing: f64,
}

impl GridGeom {
    /// Grid covering `[-half_width, half_width]^dim` with `nodes` per axis.
    pub fn centered(dim: usize, nodes: usize, half_width: f64) -> Self {
        assert!(nodes >= 2);
        GridGeom {
            dim,
            nodes,
            spacing: 2.0 * half_width / (nodes - 1) as f64,
        }
    }

    pub fn origin(&self) -> f64 {
        -0.5 * self.spacing * (self.nodes - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn half_width(&self) -> f64 {
        -self.origin()
    }

    #[inline]
    pub fn flat_index(&self, ijk: [usize; 3]) -> usize {
        let n = self.nodes;
        match self.dim {
            2 => ijk[0] + n * ijk[1],
            _ => ijk[0] + n * (ijk[1] + n * ijk[2]),
        }
    }

    #[inline]
    pub fn unflatten(&self, idx: usize) -> [usize; 3] {
        let n = self.nodes;
        match self.dim {
            2 => [idx % n, idx / n, 0],
            _ => [idx % n, (idx / n) % n, idx / (n * n)],
        }
    }

    pub fn node_point(&self, idx: usize) -> Point {
        let ijk = self.unflatten(idx);
        let o = self.origin();
        let mut c = ZERO_VEC;
        for a in 0..self.dim {
            c[a] = o + self.spacing * ijk[a] as f64;
        }
        Point { coords: c }
    }

    /// Cell volume `spacing^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }
}

/// Scalar field samples on a [`GridGeom`] with an in-domain mask.
#[derive(Debug)]
pub struct ScalarGrid {
    pub geom: GridGeom,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    /// Interpolation queries that touched off-mask or out-of-box nodes.
    pub off_mask_hits: AtomicU64,
}

impl Clone for ScalarGrid {
    fn clone(&self) -> Self {
        ScalarGrid {
            geom: self.geom,
            values: self.values.clone(),
            mask: self.mask.clone(),
            off_mask_hits: AtomicU64::new(self.off_mask_hits.load(Ordering::Relaxed)),
        }
    }
}

impl ScalarGrid {
    pub fn zeros(geom: GridGeom, domain: &DomainModel) -> Self {
        let mask: Vec<bool> = (0..geom.len())
            .map(|i| domain.contains(&geom.node_point(i)))
            .collect();
        ScalarGrid {
            geom,
            values: vec![0.0; geom.len()],
            mask,
            off_mask_hits: AtomicU64::new(0),
        }
    }

    /// Sample a function at masked nodes; other nodes stay zero.
    pub fn from_fn(geom: GridGeom, domain: &DomainModel, mut f: impl FnMut(&Point) -> f64) -> Self {
        let mut grid = Self::zeros(geom, domain);
        for i in 0..geom.len() {
            if grid.mask[i] {
                grid.values[i] = f(&geom.node_point(i));
            }
        }
        grid
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.geom.len()).filter(|&i| self.mask[i]).collect()
    }

    /// Multilinear interpolation. Off-mask and out-of-box corners contribute
    /// zero and bump the diagnostics counter.
    pub fn interp(&self, x: &Point) -> f64 {
        let g = &self.geom;
        let n = g.nodes;
        let o = g.origin();
        let inv_h = 1.0 / g.spacing;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut clipped = false;
        for a in 0..g.dim {
            let u = (x.coords[a] - o) * inv_h;
            if !(0.0..=(n - 1) as f64).contains(&u) {
                self.off_mask_hits.fetch_add(1, Ordering::Relaxed);
                return 0.0;
            }
            let c = (u.floor() as usize).min(n - 2);
            base[a] = c;
            frac[a] = u - c as f64;
        }
        let mut acc = 0.0;
        let corners = 1usize << g.dim;
        for corner in 0..corners {
            let mut w = 1.0;
            let mut ijk = [0usize; 3];
            for a in 0..g.dim {
                let hi = (corner >> a) & 1;
                ijk[a] = base[a] + hi;
                w *= if hi == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            let idx = g.flat_index(ijk);
            if self.mask[idx] {
                acc += w * self.values[idx];
            } else if w > 0.0 {
                clipped = true;
            }
        }
        if clipped {
            self.off_mask_hits.fetch_add(1, Ordering::Relaxed);
        }
        acc
    }

    /// Plain L² norm `sqrt(h^d Σ v²)` over masked nodes.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self
            .values
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, &m)| m)
            .map(|(v, _)| v * v)
            .sum();
        (s * self.geom.cell_volume()).sqrt()
    }

    pub fn inner(&self, other: &ScalarGrid) -> f64 {
        assert_eq!(self.geom, other.geom);
        let s: f64 = self
            .values
            .iter()
            .zip(other.values.iter())
            .zip(self.mask.iter())
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| a * b)
            .sum();
        s * self.geom.cell_volume()
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn write_gxr1(&self, path: impl AsRef<Path>) -> Result<()> {
        let g = &self.geom;
        assert!(g.nodes < (1 << 24), "node count exceeds header packing");
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(GRID_MAGIC)?;
        let dims = (g.dim as u32) | ((g.nodes as u32) << 8);
        file.write_all(&dims.to_le_bytes())?;
        file.write_all(&g.spacing.to_le_bytes())?;
        for v in &self.values {
            file.write_all(&(*v as f32).to_le_bytes())?;
        }
        for m in &self.mask {
            file.write_all(&[u8::from(*m)])?;
        }
        Ok(())
    }

    pub fn read_gxr1(path: impl AsRef<Path>) -> Result<ScalarGrid> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(Error::Format("bad magic in grid file".into()));
        }
        let mut buf4 = [0u8; 4];
        file.read_exact(&mut buf4)?;
        let dims = u32::from_le_bytes(buf4);
        let dim = (dims & 0xff) as usize;
        let nodes = (dims >> 8) as usize;
        if !(dim == 2 || dim == 3) || nodes < 2 {
            return Err(Error::Format(format!(
                "bad dims field: dim={dim}, nodes={nodes}"
            )));
        }
        let mut buf8 = [0u8; 8];
        file.read_exact(&mut buf8)?;
        let spacing = f64::from_le_bytes(buf8);
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Format("bad spacing".into()));
        }
        let geom = GridGeom {
            dim,
            nodes,
            spacing,
        };
        let len = geom.len();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            file.read_exact(&mut buf4)?;
            values.push(f32::from_le_bytes(buf4) as f64);
        }
        let mut mask_bytes = vec![0u8; len];
        file.read_exact(&mut mask_bytes)?;
        Ok(ScalarGrid {
            geom,
            values,
            mask: mask_bytes.into_iter().map(|b| b != 0).collect(),
            off_mask_hits: AtomicU64::new(0),
        })
    }
}

/// An isotropic Gaussian phantom, handy across experiments and tests.
pub fn gaussian_phantom(center: Vector, sigma: f64, amplitude: f64) -> impl Fn(&Point) -> f64 {
    move |x: &Point| {
        let mut r2 = 0.0;
        for a in 0..3 {
            let d = x.coords[a] - center[a];
            r2 += d * d;
        }
        amplitude * (-0.5 * r2 / (sigma * sigma)).exp()
    }
}
