//! Axis-aligned domains, derived regions, and flat jump facets.
//!
//! All geometry lives in at most three dimensions; points are stored as
//! `[f64; 3]` with only the first `dim` coordinates meaningful. The body is
//! always an axis-aligned box, so the shrunk set `Omega_r` is again a box and
//! the dilation `A + B_r` is a box with rounded corners, both representable
//! exactly.

use crate::error::{Result, SdError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub type Point = [f64; 3];

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(a: Point, dim: usize) -> f64 {
    a[..dim].iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A gridded axis-aligned box, the reference body `Omega`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Domain {
    pub dim: usize,
    pub lo: Point,
    pub hi: Point,
    /// Cell count per axis (1 on unused axes).
    pub res: [usize; 3],
}

impl Domain {
    pub fn new(dim: usize, lo: Point, hi: Point, res: [usize; 3]) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(SdError::InvalidDomain(format!("dimension {dim} not in 1..=3")));
        }
        for a in 0..dim {
            if !(hi[a] > lo[a]) {
                return Err(SdError::InvalidDomain(format!(
                    "upper corner must exceed lower corner on axis {a}"
                )));
            }
            if res[a] == 0 {
                return Err(SdError::InvalidDomain(format!("resolution must be >= 1 on axis {a}")));
            }
        }
        let mut lo = lo;
        let mut hi = hi;
        let mut res = res;
        for a in dim..3 {
            lo[a] = 0.0;
            hi[a] = 0.0;
            res[a] = 1;
        }
        Ok(Self { dim, lo, hi, res })
    }

    /// The unit box (0,1)^dim with `cells` cells per axis.
    pub fn unit(dim: usize, cells: usize) -> Self {
        Self::new(dim, [0.0; 3], [1.0, 1.0, 1.0], [cells, cells, cells]).expect("unit box is valid")
    }

    pub fn with_res(&self, res: [usize; 3]) -> Self {
        Self::new(self.dim, self.lo, self.hi, res).expect("same box")
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn cell_size(&self) -> Point {
        let mut h = [0.0; 3];
        for a in 0..self.dim {
            h[a] = self.side(a) / self.res[a] as f64;
        }
        h
    }

    pub fn cell_count(&self) -> usize {
        self.res[..self.dim].iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        let h = self.cell_size();
        h[..self.dim].iter().product()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.side(a)).product()
    }

    /// Multi-index of a flat cell index (row-major, axis 0 slowest).
    pub fn cell_multi(&self, idx: usize) -> [usize; 3] {
        let mut m = [0usize; 3];
        let mut rest = idx;
        for a in (0..self.dim).rev() {
            m[a] = rest % self.res[a];
            rest /= self.res[a];
        }
        m
    }

    pub fn cell_flat(&self, multi: [usize; 3]) -> usize {
        let mut idx = 0;
        for a in 0..self.dim {
            idx = idx * self.res[a] + multi[a];
        }
        idx
    }

    pub fn cell_center(&self, idx: usize) -> Point {
        let m = self.cell_multi(idx);
        let h = self.cell_size();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.lo[a] + (m[a] as f64 + 0.5) * h[a];
        }
        x
    }

    pub fn cell_lo(&self, idx: usize) -> Point {
        let m = self.cell_multi(idx);
        let h = self.cell_size();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.lo[a] + m[a] as f64 * h[a];
        }
        x
    }

    pub fn contains(&self, x: Point) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lo[a] && x[a] <= self.hi[a])
    }

    /// Euclidean distance from `x` to the box (0 inside).
    pub fn dist(&self, x: Point) -> f64 {
        let mut s = 0.0;
        for a in 0..self.dim {
            let d = (self.lo[a] - x[a]).max(x[a] - self.hi[a]).max(0.0);
            s += d * d;
        }
        s.sqrt()
    }

    /// Distance from an interior point to the boundary (negative outside).
    pub fn dist_to_boundary(&self, x: Point) -> f64 {
        let mut d = f64::INFINITY;
        for a in 0..self.dim {
            d = d.min(x[a] - self.lo[a]).min(self.hi[a] - x[a]);
        }
        d
    }

    /// The shrunk body `Omega_r = { x : dist(x, boundary) > r }`, exact for boxes.
    pub fn shrunk(&self, r: f64) -> Result<BoxRegion> {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for a in 0..self.dim {
            lo[a] += r;
            hi[a] -= r;
            if !(hi[a] > lo[a]) {
                return Err(SdError::InvalidDomain(format!(
                    "shrinking by r = {r} empties the domain on axis {a}"
                )));
            }
        }
        Ok(BoxRegion { dim: self.dim, lo, hi })
    }

    pub fn as_box(&self) -> BoxRegion {
        BoxRegion { dim: self.dim, lo: self.lo, hi: self.hi }
    }

    /// Grow the box by `pad` on every side (used by the extension machinery).
    pub fn padded(&self, pad: f64, res: [usize; 3]) -> Result<Domain> {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for a in 0..self.dim {
            lo[a] -= pad;
            hi[a] += pad;
        }
        Domain::new(self.dim, lo, hi, res)
    }
}

/// Plain axis-aligned box region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxRegion {
    pub dim: usize,
    pub lo: Point,
    pub hi: Point,
}

impl BoxRegion {
    pub fn new(dim: usize, lo: Point, hi: Point) -> Self {
        Self { dim, lo, hi }
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| (self.hi[a] - self.lo[a]).max(0.0)).product()
    }

    pub fn contains(&self, x: Point) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lo[a] && x[a] <= self.hi[a])
    }

    pub fn dist(&self, x: Point) -> f64 {
        let mut s = 0.0;
        for a in 0..self.dim {
            let d = (self.lo[a] - x[a]).max(x[a] - self.hi[a]).max(0.0);
            s += d * d;
        }
        s.sqrt()
    }

    pub fn surface_area(&self) -> f64 {
        match self.dim {
            1 => 2.0,
            2 => 2.0 * ((self.hi[0] - self.lo[0]) + (self.hi[1] - self.lo[1])),
            _ => {
                let s = [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]];
                2.0 * (s[0] * s[1] + s[1] * s[2] + s[0] * s[2])
            }
        }
    }

    fn edge_length_sum(&self) -> f64 {
        // Total length of edges (3d Steiner coefficient).
        let s = [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]];
        4.0 * (s[0] + s[1] + s[2])
    }
}

/// A region argument for set functions: a box, or the Minkowski dilation
/// `A^r = A + B_r` of a box by a Euclidean ball.
#[derive(Debug, Clone)]
pub enum Region {
    Box(BoxRegion),
    Dilated { core: BoxRegion, r: f64 },
}

impl Region {
    pub fn bbox(&self) -> BoxRegion {
        match self {
            Region::Box(b) => b.clone(),
            Region::Dilated { core, r } => {
                let mut lo = core.lo;
                let mut hi = core.hi;
                for a in 0..core.dim {
                    lo[a] -= r;
                    hi[a] += r;
                }
                BoxRegion { dim: core.dim, lo, hi }
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Box(b) => b.dim,
            Region::Dilated { core, .. } => core.dim,
        }
    }

    pub fn contains(&self, x: Point) -> bool {
        match self {
            Region::Box(b) => b.contains(x),
            Region::Dilated { core, r } => core.dist(x) <= *r,
        }
    }

    /// `A^r` of this region; dilation composes exactly for boxes.
    pub fn grown(&self, r: f64) -> Region {
        match self {
            Region::Box(b) => Region::Dilated { core: b.clone(), r },
            Region::Dilated { core, r: r0 } => Region::Dilated { core: core.clone(), r: r0 + r },
        }
    }

    /// Exact Lebesgue measure; the dilated volume uses the Steiner formula.
    pub fn volume(&self) -> f64 {
        match self {
            Region::Box(b) => b.volume(),
            Region::Dilated { core, r } => {
                let v = core.volume();
                match core.dim {
                    1 => v + 2.0 * r,
                    2 => v + core.surface_area() * r + std::f64::consts::PI * r * r,
                    _ => {
                        v + core.surface_area() * r
                            + std::f64::consts::PI * r * r * core.edge_length_sum() / 4.0
                            + 4.0 / 3.0 * std::f64::consts::PI * r * r * r
                    }
                }
            }
        }
    }
}

/// Oriented flat jump facet carrying a constant matrix amplitude.
///
/// In one dimension the facet degenerates to an atom and its `H^0` measure is
/// one. A facet flagged `clipped` may extend past the domain box; quadratures
/// then restrict it by the box indicator adaptively.
#[derive(Debug, Clone)]
pub struct Facet {
    pub center: Point,
    pub normal: Point,
    /// Orthonormal tangent frame spanning the facet plane (dim-1 vectors used).
    pub tangents: [Point; 2],
    /// Side lengths along the tangents (dim-1 entries used).
    pub extent: [f64; 2],
    /// Constant amplitude, a d x N matrix (`lambda (x) nu` for jump facets).
    pub amplitude: DMatrix<f64>,
    pub clipped: bool,
}

impl Facet {
    pub fn new(dim: usize, center: Point, normal: Point, extent: [f64; 2], amplitude: DMatrix<f64>) -> Result<Self> {
        let n = norm(normal, dim);
        if (n - 1.0).abs() > 1e-12 {
            return Err(SdError::InvalidFacet(format!("normal has length {n}, expected 1")));
        }
        if amplitude.ncols() != dim {
            return Err(SdError::DimensionMismatch(format!(
                "facet amplitude has {} columns, domain dimension is {dim}",
                amplitude.ncols()
            )));
        }
        for e in extent.iter().take(dim.saturating_sub(1)) {
            if !(*e > 0.0) {
                return Err(SdError::InvalidFacet("extent must be positive".into()));
            }
        }
        let tangents = tangent_frame(normal, dim);
        Ok(Self { center, normal, tangents, extent, amplitude, clipped: false })
    }

    /// Facet from a jump vector: amplitude `lambda (x) nu`.
    pub fn from_jump(dim: usize, center: Point, normal: Point, extent: [f64; 2], lambda: &DVector<f64>) -> Result<Self> {
        let d = lambda.len();
        let mut amp = DMatrix::zeros(d, dim);
        for i in 0..d {
            for j in 0..dim {
                amp[(i, j)] = lambda[i] * normal[j];
            }
        }
        Self::new(dim, center, normal, extent, amp)
    }

    /// 1d atom at `z` with jump vector `lambda`.
    pub fn atom(z: f64, lambda: &DVector<f64>) -> Self {
        let d = lambda.len();
        let mut amp = DMatrix::zeros(d, 1);
        for i in 0..d {
            amp[(i, 0)] = lambda[i];
        }
        Self {
            center: [z, 0.0, 0.0],
            normal: [1.0, 0.0, 0.0],
            tangents: [[0.0; 3], [0.0; 3]],
            extent: [1.0, 1.0],
            amplitude: amp,
            clipped: false,
        }
    }

    pub fn clipped(mut self) -> Self {
        self.clipped = true;
        self
    }

    /// `H^{N-1}` measure of the (unclipped) facet.
    pub fn area(&self, dim: usize) -> f64 {
        match dim {
            1 => 1.0,
            2 => self.extent[0],
            _ => self.extent[0] * self.extent[1],
        }
    }

    /// Point at facet parameters (u, v) in [-1/2, 1/2]^2 (scaled by extent).
    pub fn point_at(&self, dim: usize, u: f64, v: f64) -> Point {
        let mut x = self.center;
        if dim >= 2 {
            for a in 0..3 {
                x[a] += u * self.extent[0] * self.tangents[0][a];
            }
        }
        if dim >= 3 {
            for a in 0..3 {
                x[a] += v * self.extent[1] * self.tangents[1][a];
            }
        }
        x
    }

    /// Frobenius norm of the amplitude.
    pub fn amplitude_norm(&self) -> f64 {
        self.amplitude.norm()
    }

    /// Conservative radius of the circumscribed ball around the facet.
    pub fn radius(&self, dim: usize) -> f64 {
        match dim {
            1 => 0.0,
            2 => 0.5 * self.extent[0],
            _ => 0.5 * (self.extent[0] * self.extent[0] + self.extent[1] * self.extent[1]).sqrt(),
        }
    }
}

/// Deterministic orthonormal tangent frame for a unit normal.
pub fn tangent_frame(normal: Point, dim: usize) -> [Point; 2] {
    if dim == 1 {
        return [[0.0; 3], [0.0; 3]];
    }
    if dim == 2 {
        return [[-normal[1], normal[0], 0.0], [0.0; 3]];
    }
    // Pick the axis least aligned with the normal, project, normalize.
    let mut axis = 0;
    for a in 1..3 {
        if normal[a].abs() < normal[axis].abs() {
            axis = a;
        }
    }
    let mut t0 = [0.0; 3];
    t0[axis] = 1.0;
    let dot = t0[0] * normal[0] + t0[1] * normal[1] + t0[2] * normal[2];
    for a in 0..3 {
        t0[a] -= dot * normal[a];
    }
    let n0 = norm(t0, 3);
    for a in 0..3 {
        t0[a] /= n0;
    }
    let t1 = [
        normal[1] * t0[2] - normal[2] * t0[1],
        normal[2] * t0[0] - normal[0] * t0[2],
        normal[0] * t0[1] - normal[1] * t0[0],
    ];
    [t0, t1]
}
