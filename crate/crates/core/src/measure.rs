//! Matrix-valued Radon measures, mollifier kernels, convolution, and the
//! set functions built on them (total variation, area-type bracket norm,
//! the measure functional with recession-weighted singular part).
//!
//! A measure is stored as an absolutely continuous density sampled on the
//! domain grid (constant per cell) plus a finite list of flat facets carrying
//! constant matrix amplitudes. This covers every construction used by the
//! theory at desk scale: staircases, slip planes, and plane jumps.

use crate::density::EnergyDensity;
use crate::error::{Result, SdError};
use crate::geom::{BoxRegion, Domain, Facet, Point, Region};
use crate::quad::{self, GL4_NODES, GL4_WEIGHTS, GL8_NODES, GL8_WEIGHTS};
use nalgebra::DMatrix;

/// Smooth convolution kernel `alpha_r(x) = r^-N alpha(x/r)` supported in the
/// ball of radius `r`, with unit mass.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub r: f64,
    pub dim: usize,
    pub profile: Profile,
    /// Normalization of the unit-radius profile (numeric; no closed form).
    pub c_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// The standard bump `exp(1/(|x|^2 - 1))` on `|x| < 1`.
    Bump,
    /// Sharper variant `exp(2/(|x|^2 - 1))`; registered alternative.
    BumpSharp,
}

impl Profile {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "bump" => Ok(Profile::Bump),
            "bump_sharp" => Ok(Profile::BumpSharp),
            other => Err(SdError::InvalidKernel(format!("unknown profile '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Bump => "bump",
            Profile::BumpSharp => "bump_sharp",
        }
    }

    /// Unnormalized radial profile at `rho = |x|` (vanishes for rho >= 1).
    pub fn raw(&self, rho: f64) -> f64 {
        if rho >= 1.0 {
            return 0.0;
        }
        let s = rho * rho - 1.0;
        match self {
            Profile::Bump => (1.0 / s).exp(),
            Profile::BumpSharp => (2.0 / s).exp(),
        }
    }
}

/// Surface measure of the unit sphere S^{N-1}.
fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    }
}

impl Kernel {
    pub fn new(r: f64, dim: usize, profile: Profile) -> Result<Self> {
        if !(r > 0.0) {
            return Err(SdError::InvalidKernel(format!("radius {r} must be positive")));
        }
        if !(1..=3).contains(&dim) {
            return Err(SdError::InvalidKernel(format!("dimension {dim} not in 1..=3")));
        }
        // Radial normalization: integral over B_1 of the raw profile.
        let raw = |rho: f64| profile.raw(rho) * rho.powi(dim as i32 - 1);
        let mass = sphere_area(dim) * quad::adaptive(0.0, 1.0, 1e-14, raw);
        if !(mass.is_finite() && mass > 0.0) {
            return Err(SdError::InvalidKernel("profile is not integrable".into()));
        }
        let k = Self { r, dim, profile, c_n: 1.0 / mass };
        // Unit mass is re-verified with an independent doubling rule.
        let check = k.mass_numeric(1e-12);
        if (check - 1.0).abs() > 1e-10 {
            return Err(SdError::InvalidKernel(format!(
                "normalization failed the unit-mass check: {check}"
            )));
        }
        Ok(k)
    }

    /// `alpha_r` at offset `z` (vector from the evaluation point).
    pub fn eval(&self, z: Point) -> f64 {
        let rho = crate::geom::norm(z, self.dim) / self.r;
        self.c_n * self.profile.raw(rho) / self.r.powi(self.dim as i32)
    }

    /// Value at the origin, `alpha_r(0) = r^-N alpha(0)`.
    pub fn at_origin(&self) -> f64 {
        self.c_n * self.profile.raw(0.0) / self.r.powi(self.dim as i32)
    }

    /// Numeric mass by refinement doubling of the radial midpoint rule
    /// (independent of the adaptive rule used for normalization).
    pub fn mass_numeric(&self, tol: f64) -> f64 {
        let raw = |rho: f64| self.c_n * self.profile.raw(rho) * rho.powi(self.dim as i32 - 1);
        let run = quad::refine_doubling(64, tol, 20, |n| {
            sphere_area(self.dim) * quad::midpoint(0.0, 1.0, n, raw)
        });
        run.value
    }
}

/// A matrix-valued Radon measure `mu = m^a L^N + mu^s` with the singular part
/// supported on finitely many flat facets.
#[derive(Debug, Clone)]
pub struct VectorMeasure {
    pub domain: Domain,
    /// Value rows d (columns equal the domain dimension).
    pub d: usize,
    /// Cell-major, then row-major d x N entries per cell.
    ac: Vec<f64>,
    pub facets: Vec<Facet>,
}

impl VectorMeasure {
    pub fn zero(domain: Domain, d: usize) -> Self {
        let len = domain.cell_count() * d * domain.dim;
        Self { domain, d, ac: vec![0.0; len], facets: Vec::new() }
    }

    /// Sample a closed-form density at cell centers.
    pub fn from_density(domain: Domain, d: usize, f: impl Fn(Point) -> DMatrix<f64>) -> Self {
        let mut m = Self::zero(domain, d);
        for c in 0..m.domain.cell_count() {
            let x = m.domain.cell_center(c);
            let v = f(x);
            m.set_ac(c, &v);
        }
        m
    }

    pub fn constant(domain: Domain, value: &DMatrix<f64>) -> Self {
        let d = value.nrows();
        let mut m = Self::zero(domain, d);
        for c in 0..m.domain.cell_count() {
            m.set_ac(c, value);
        }
        m
    }

    pub fn with_facets(mut self, facets: Vec<Facet>) -> Result<Self> {
        for f in &facets {
            self.validate_facet(f)?;
        }
        self.facets = facets;
        Ok(self)
    }

    pub fn push_facet(&mut self, f: Facet) -> Result<()> {
        self.validate_facet(&f)?;
        self.facets.push(f);
        Ok(())
    }

    fn validate_facet(&self, f: &Facet) -> Result<()> {
        if f.amplitude.nrows() != self.d || f.amplitude.ncols() != self.domain.dim {
            return Err(SdError::DimensionMismatch(format!(
                "facet amplitude is {}x{}, measure is {}x{}",
                f.amplitude.nrows(),
                f.amplitude.ncols(),
                self.d,
                self.domain.dim
            )));
        }
        if !f.clipped {
            // The facet must lie in the closed domain box.
            let dim = self.domain.dim;
            let tol = 1e-9;
            let corners: &[(f64, f64)] = &[(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)];
            for &(u, v) in corners {
                let p = f.point_at(dim, u, v);
                if self.domain.dist(p) > tol {
                    return Err(SdError::InvalidFacet("facet exits the domain closure".into()));
                }
            }
        }
        Ok(())
    }

    pub fn ac_slice(&self, cell: usize) -> &[f64] {
        let stride = self.d * self.domain.dim;
        &self.ac[cell * stride..(cell + 1) * stride]
    }

    pub fn ac_matrix(&self, cell: usize) -> DMatrix<f64> {
        let n = self.domain.dim;
        let s = self.ac_slice(cell);
        DMatrix::from_fn(self.d, n, |i, j| s[i * n + j])
    }

    pub fn set_ac(&mut self, cell: usize, value: &DMatrix<f64>) {
        let n = self.domain.dim;
        let stride = self.d * n;
        for i in 0..self.d {
            for j in 0..n {
                self.ac[cell * stride + i * n + j] = value[(i, j)];
            }
        }
    }

    fn ac_norm(&self, cell: usize) -> f64 {
        self.ac_slice(cell).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Pointwise sum of two measures on the same grid.
    pub fn add(&self, other: &VectorMeasure) -> Result<VectorMeasure> {
        if self.d != other.d
            || self.domain.dim != other.domain.dim
            || self.domain.res != other.domain.res
        {
            return Err(SdError::DimensionMismatch("measure addition requires matching grids".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.ac.iter_mut().zip(other.ac.iter()) {
            *a += b;
        }
        out.facets.extend(other.facets.iter().cloned());
        Ok(out)
    }

    /// Total mass `mu(domain)` as a d x N matrix.
    pub fn mass(&self) -> DMatrix<f64> {
        let n = self.domain.dim;
        let vol = self.domain.cell_volume();
        let mut acc = DMatrix::zeros(self.d, n);
        for c in 0..self.domain.cell_count() {
            let s = self.ac_slice(c);
            for i in 0..self.d {
                for j in 0..n {
                    acc[(i, j)] += vol * s[i * n + j];
                }
            }
        }
        for f in &self.facets {
            let area = facet_area_in_region(f, self.domain.dim, None);
            for i in 0..self.d {
                for j in 0..n {
                    acc[(i, j)] += area * f.amplitude[(i, j)];
                }
            }
        }
        acc
    }

    /// Convolution `(mu * alpha_r)(x)`; requires the kernel ball around `x`
    /// to stay inside the measure's domain box (use an extended measure or
    /// [`VectorMeasure::convolve_truncated`] otherwise).
    pub fn convolve(&self, k: &Kernel, x: Point) -> Result<DMatrix<f64>> {
        if self.domain.dist_to_boundary(x) < k.r {
            return Err(SdError::OutsideSupportedRegion);
        }
        Ok(self.convolve_truncated(k, x))
    }

    /// Convolution with the window truncated at the domain boundary, which is
    /// the meaning of `mu * alpha_r` for a measure living on the open body.
    pub fn convolve_truncated(&self, k: &Kernel, x: Point) -> DMatrix<f64> {
        let n = self.domain.dim;
        let mut acc = DMatrix::zeros(self.d, n);
        self.convolve_into(k, x, &mut acc);
        acc
    }

    pub(crate) fn convolve_into(&self, k: &Kernel, x: Point, acc: &mut DMatrix<f64>) {
        acc.fill(0.0);
        let n = self.domain.dim;
        let h = self.domain.cell_size();
        let cell_radius = 0.5 * crate::geom::norm(h, n);

        // Index window of cells whose box can intersect the kernel ball.
        let mut lo_idx = [0usize; 3];
        let mut hi_idx = [0usize; 3];
        for a in 0..n {
            let lo = ((x[a] - k.r - self.domain.lo[a]) / h[a]).floor().max(0.0) as usize;
            let hi = (((x[a] + k.r - self.domain.lo[a]) / h[a]).ceil().max(0.0) as usize)
                .min(self.domain.res[a]);
            lo_idx[a] = lo.min(self.domain.res[a]);
            hi_idx[a] = hi;
        }
        let mut multi = lo_idx;
        loop {
            if multi[0] >= hi_idx[0] {
                break;
            }
            let cell = self.domain.cell_flat(multi);
            let center = self.domain.cell_center(cell);
            let dist = crate::geom::norm(crate::geom::sub(x, center), n);
            if dist <= k.r + cell_radius && self.ac_norm(cell) > 0.0 {
                let w = cell_kernel_integral(&self.domain, cell, k, x);
                if w != 0.0 {
                    let s = self.ac_slice(cell);
                    for i in 0..self.d {
                        for j in 0..n {
                            acc[(i, j)] += w * s[i * n + j];
                        }
                    }
                }
            }
            // Advance the multi-index within the window.
            let mut a = n;
            loop {
                if a == 0 {
                    multi[0] = hi_idx[0];
                    break;
                }
                a -= 1;
                multi[a] += 1;
                if multi[a] < hi_idx[a] || a == 0 {
                    break;
                }
                multi[a] = lo_idx[a];
            }
        }

        for f in &self.facets {
            let gap = crate::geom::norm(crate::geom::sub(x, f.center), n) - f.radius(n);
            if gap > k.r {
                continue;
            }
            let w = facet_kernel_integral(f, n, k, x);
            if w != 0.0 {
                for i in 0..self.d {
                    for j in 0..n {
                        acc[(i, j)] += w * f.amplitude[(i, j)];
                    }
                }
            }
        }
    }

    /// Pair the mollified measure `(mu * alpha_r) L^N` against a scalar test
    /// field on a grid of the body (window truncated at the boundary).
    pub fn pair_scalar_mollified(&self, k: &Kernel, phi: &dyn Fn(Point) -> f64, res: [usize; 3]) -> DMatrix<f64> {
        let grid = self.domain.with_res(res);
        let n = self.domain.dim;
        let mut acc = DMatrix::zeros(self.d, n);
        let mut buf = DMatrix::zeros(self.d, n);
        let vol = grid.cell_volume();
        for c in 0..grid.cell_count() {
            let x = grid.cell_center(c);
            let w = phi(x) * vol;
            if w == 0.0 {
                continue;
            }
            self.convolve_into(k, x, &mut buf);
            acc += &buf * w;
        }
        acc
    }

    /// Pair the measure against a scalar test field: `int phi dmu`.
    pub fn pair_scalar(&self, phi: &dyn Fn(Point) -> f64) -> DMatrix<f64> {
        let n = self.domain.dim;
        let mut acc = DMatrix::zeros(self.d, n);
        for c in 0..self.domain.cell_count() {
            let w = cell_scalar_integral(&self.domain, c, phi);
            let s = self.ac_slice(c);
            for i in 0..self.d {
                for j in 0..n {
                    acc[(i, j)] += w * s[i * n + j];
                }
            }
        }
        for f in &self.facets {
            let w = facet_scalar_integral(f, n, Some(&self.domain.as_box()), phi);
            for i in 0..self.d {
                for j in 0..n {
                    acc[(i, j)] += w * f.amplitude[(i, j)];
                }
            }
        }
        acc
    }

    /// Total variation `|mu|(A)` with the Frobenius norm on amplitudes.
    pub fn total_variation(&self, region: &Region) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.domain.cell_count() {
            let nrm = self.ac_norm(c);
            if nrm > 0.0 {
                acc += nrm * cell_region_volume(&self.domain, c, region);
            }
        }
        for f in &self.facets {
            acc += f.amplitude_norm() * facet_area_in_region(f, self.domain.dim, Some(region));
        }
        acc
    }

    /// Area-type bracket norm `<mu>(A) = int_A sqrt(1 + |m^a|^2) dx + |mu^s|(A)`.
    pub fn bracket_norm(&self, region: &Region) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.domain.cell_count() {
            let nrm = self.ac_norm(c);
            acc += (1.0 + nrm * nrm).sqrt() * cell_region_volume(&self.domain, c, region);
        }
        for f in &self.facets {
            acc += f.amplitude_norm() * facet_area_in_region(f, self.domain.dim, Some(region));
        }
        acc
    }

    /// Bracket norm of the mollification `(mu * alpha_r) L^N` over the whole
    /// body, with the convolution window truncated at the boundary.
    pub fn bracket_norm_mollified(&self, k: &Kernel, res: [usize; 3]) -> f64 {
        let grid = self.domain.with_res(res);
        let vol = grid.cell_volume();
        let mut acc = 0.0;
        let mut buf = DMatrix::zeros(self.d, self.domain.dim);
        for c in 0..grid.cell_count() {
            let x = grid.cell_center(c);
            self.convolve_into(k, x, &mut buf);
            acc += (1.0 + buf.norm_squared()).sqrt() * vol;
        }
        acc
    }
}

/// Result of the Young-type mass bound comparison.
#[derive(Debug, Clone, Copy)]
pub struct MassBound {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// Check `int_A |mu * alpha_r| dx <= |mu|(A^r)` for a box `A` inside the
/// shrunk body. The left side is integrated by refinement doubling.
pub fn mass_bound_check(mu: &VectorMeasure, k: &Kernel, a: &BoxRegion, tol: f64) -> Result<MassBound> {
    let shrunk = mu.domain.shrunk(k.r)?;
    let dim = mu.domain.dim;
    for corner in box_corners(a, dim) {
        if !shrunk.contains(corner) {
            return Err(SdError::RegionOutsideShrunkDomain);
        }
    }
    let mut buf = DMatrix::zeros(mu.d, dim);
    let mut lhs_at = |cells: usize| -> f64 {
        let grid = Domain::new(dim, a.lo, a.hi, [cells.max(1); 3]).expect("box grid");
        let vol = grid.cell_volume();
        let mut acc = 0.0;
        for c in 0..grid.cell_count() {
            let x = grid.cell_center(c);
            mu.convolve_into(k, x, &mut buf);
            acc += buf.norm() * vol;
        }
        acc
    };
    let start = ((a.hi[0] - a.lo[0]) / (k.r / 4.0)).ceil().max(4.0) as usize;
    let run = quad::refine_doubling(start, 1e-8, if dim == 1 { 6 } else { 3 }, &mut lhs_at);
    let rhs = mu.total_variation(&Region::Box(a.clone()).grown(k.r));
    let lhs = run.value;
    Ok(MassBound { lhs, rhs, ok: lhs <= rhs + tol })
}

/// The functional on measures `I(mu) = int Phi(x, m^a) dx
/// + int Phi^inf(x, d mu^s / d|mu^s|) d|mu^s|`.
pub fn measure_functional(mu: &VectorMeasure, phi: &EnergyDensity) -> Result<f64> {
    let n = mu.domain.dim;
    let mut acc = 0.0;
    for c in 0..mu.domain.cell_count() {
        let m = mu.ac_matrix(c);
        acc += cell_scalar_integral(&mu.domain, c, &|x| phi.eval(x, &m));
    }
    for f in &mu.facets {
        // 1-homogeneity: Phi^inf(x, amp/|amp|) |amp| = Phi^inf(x, amp).
        let amp = &f.amplitude;
        let val = facet_scalar_integral(f, n, Some(&mu.domain.as_box()), &|x| {
            phi.recession_at(x, amp).unwrap_or(f64::NAN)
        });
        if !val.is_finite() {
            return Err(SdError::RecessionUnavailable);
        }
        acc += val;
    }
    Ok(acc)
}

pub(crate) fn box_corners(b: &BoxRegion, dim: usize) -> Vec<Point> {
    let mut out = Vec::new();
    let count = 1usize << dim;
    for mask in 0..count {
        let mut p = [0.0; 3];
        for a in 0..dim {
            p[a] = if mask >> a & 1 == 1 { b.hi[a] } else { b.lo[a] };
        }
        out.push(p);
    }
    out
}

/// Integral of the kernel over one grid cell: GL8 subpanels no wider than
/// `r / 4` in 1d, tensor GL4 subpanels no wider than `r / 6` in 2d/3d (the
/// bump is globally smooth, so no clipping at the support sphere).
pub(crate) fn cell_kernel_integral(domain: &Domain, cell: usize, k: &Kernel, x: Point) -> f64 {
    let n = domain.dim;
    let h = domain.cell_size();
    let lo = domain.cell_lo(cell);
    let target = if n == 1 { k.r / 8.0 } else { k.r / 6.0 };
    let mut sub = [1usize; 3];
    for a in 0..n {
        sub[a] = ((h[a] / target).ceil() as usize).clamp(1, 32);
    }
    let gl = |a: usize, panel: usize, node: usize| -> f64 {
        let ph = h[a] / sub[a] as f64;
        lo[a] + panel as f64 * ph + (0.5 + 0.5 * GL4_NODES[node]) * ph
    };
    let mut acc = 0.0;
    match n {
        1 => {
            let ph = h[0] / sub[0] as f64;
            for p0 in 0..sub[0] {
                for (i, wi) in GL8_WEIGHTS.iter().enumerate() {
                    let y = lo[0] + p0 as f64 * ph + (0.5 + 0.5 * GL8_NODES[i]) * ph;
                    acc += wi * k.eval(crate::geom::sub(x, [y, 0.0, 0.0]));
                }
            }
            acc * 0.5 * ph
        }
        2 => {
            for p0 in 0..sub[0] {
                for p1 in 0..sub[1] {
                    for (i, wi) in GL4_WEIGHTS.iter().enumerate() {
                        for (j, wj) in GL4_WEIGHTS.iter().enumerate() {
                            let y = [gl(0, p0, i), gl(1, p1, j), 0.0];
                            acc += wi * wj * k.eval(crate::geom::sub(x, y));
                        }
                    }
                }
            }
            acc * 0.25 * h[0] * h[1] / (sub[0] * sub[1]) as f64
        }
        _ => {
            for p0 in 0..sub[0] {
                for p1 in 0..sub[1] {
                    for p2 in 0..sub[2] {
                        for (i, wi) in GL4_WEIGHTS.iter().enumerate() {
                            for (j, wj) in GL4_WEIGHTS.iter().enumerate() {
                                for (l, wl) in GL4_WEIGHTS.iter().enumerate() {
                                    let y = [gl(0, p0, i), gl(1, p1, j), gl(2, p2, l)];
                                    acc += wi * wj * wl * k.eval(crate::geom::sub(x, y));
                                }
                            }
                        }
                    }
                }
            }
            acc * 0.125 * h[0] * h[1] * h[2] / (sub[0] * sub[1] * sub[2]) as f64
        }
    }
}

/// Integral of a scalar field over one grid cell (GL8 in 1d, tensor GL4 in
/// 2d/3d).
pub(crate) fn cell_scalar_integral(domain: &Domain, cell: usize, f: &dyn Fn(Point) -> f64) -> f64 {
    let n = domain.dim;
    let h = domain.cell_size();
    let lo = domain.cell_lo(cell);
    let mut acc = 0.0;
    match n {
        1 => {
            for (ni, wi) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
                acc += wi * f([lo[0] + (0.5 + 0.5 * ni) * h[0], 0.0, 0.0]);
            }
            acc * 0.5 * h[0]
        }
        2 => {
            for (ni, wi) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                for (nj, wj) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                    acc += wi * wj * f([lo[0] + (0.5 + 0.5 * ni) * h[0], lo[1] + (0.5 + 0.5 * nj) * h[1], 0.0]);
                }
            }
            acc * 0.25 * h[0] * h[1]
        }
        _ => {
            for (ni, wi) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                for (nj, wj) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                    for (nk, wk) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                        acc += wi
                            * wj
                            * wk
                            * f([
                                lo[0] + (0.5 + 0.5 * ni) * h[0],
                                lo[1] + (0.5 + 0.5 * nj) * h[1],
                                lo[2] + (0.5 + 0.5 * nk) * h[2],
                            ]);
                    }
                }
            }
            acc * 0.125 * h[0] * h[1] * h[2]
        }
    }
}

/// Integral of the kernel over a facet, `int_F alpha_r(x - y) dH^{N-1}(y)`,
/// by composite GL4 panels sized to the kernel radius.
pub(crate) fn facet_kernel_integral(f: &Facet, dim: usize, k: &Kernel, x: Point) -> f64 {
    match dim {
        1 => k.eval(crate::geom::sub(x, f.center)),
        2 => {
            let len = f.extent[0];
            let panels = ((len / (k.r / 8.0)).ceil() as usize).clamp(1, 16384);
            let ph = 1.0 / panels as f64;
            let mut acc = 0.0;
            for p in 0..panels {
                let u0 = -0.5 + p as f64 * ph;
                let uc = u0 + 0.5 * ph;
                let pc = f.point_at(dim, uc, 0.0);
                if crate::geom::norm(crate::geom::sub(x, pc), dim) - 0.5 * ph * len > k.r {
                    continue;
                }
                for (nu, wu) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
                    let y = f.point_at(dim, u0 + (0.5 + 0.5 * nu) * ph, 0.0);
                    acc += wu * k.eval(crate::geom::sub(x, y));
                }
            }
            acc * 0.5 * ph * len
        }
        _ => {
            let (l0, l1) = (f.extent[0], f.extent[1]);
            let p0 = ((l0 / (k.r / 4.0)).ceil() as usize).clamp(1, 2048);
            let p1 = ((l1 / (k.r / 4.0)).ceil() as usize).clamp(1, 2048);
            let (h0, h1) = (1.0 / p0 as f64, 1.0 / p1 as f64);
            let panel_radius = 0.5 * ((h0 * l0).powi(2) + (h1 * l1).powi(2)).sqrt();
            let mut acc = 0.0;
            for i in 0..p0 {
                for j in 0..p1 {
                    let u0 = -0.5 + i as f64 * h0;
                    let v0 = -0.5 + j as f64 * h1;
                    let pc = f.point_at(dim, u0 + 0.5 * h0, v0 + 0.5 * h1);
                    if crate::geom::norm(crate::geom::sub(x, pc), dim) - panel_radius > k.r {
                        continue;
                    }
                    for (nu, wu) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                        for (nv, wv) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                            let y = f.point_at(dim, u0 + (0.5 + 0.5 * nu) * h0, v0 + (0.5 + 0.5 * nv) * h1);
                            acc += wu * wv * k.eval(crate::geom::sub(x, y));
                        }
                    }
                }
            }
            acc * 0.25 * h0 * h1 * l0 * l1
        }
    }
}

/// Integral of a smooth scalar over a facet, clipped to a box when the facet
/// is flagged `clipped`.
pub(crate) fn facet_scalar_integral(
    f: &Facet,
    dim: usize,
    clip: Option<&BoxRegion>,
    g: &dyn Fn(Point) -> f64,
) -> f64 {
    let clip = if f.clipped { clip } else { None };
    match dim {
        1 => {
            if clip.map(|b| b.contains(f.center)).unwrap_or(true) {
                g(f.center)
            } else {
                0.0
            }
        }
        2 => {
            let len = f.extent[0];
            match clip {
                None => len * quad::gl4_composite(-0.5, 0.5, 4, |u| g(f.point_at(dim, u, 0.0))),
                Some(b) => {
                    len * adaptive_param_1d(-0.5, 0.5, 0, &|u| {
                        let p = f.point_at(dim, u, 0.0);
                        if b.contains(p) {
                            g(p)
                        } else {
                            0.0
                        }
                    }, &|u| b.contains(f.point_at(dim, u, 0.0)))
                }
            }
        }
        _ => {
            let area = f.extent[0] * f.extent[1];
            match clip {
                None => {
                    let mut acc = 0.0;
                    let panels = 4usize;
                    let h = 1.0 / panels as f64;
                    for i in 0..panels {
                        for j in 0..panels {
                            let (u0, v0) = (-0.5 + i as f64 * h, -0.5 + j as f64 * h);
                            for (nu, wu) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                                for (nv, wv) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                                    acc += wu
                                        * wv
                                        * g(f.point_at(dim, u0 + (0.5 + 0.5 * nu) * h, v0 + (0.5 + 0.5 * nv) * h));
                                }
                            }
                        }
                    }
                    acc * 0.25 * h * h * area
                }
                Some(b) => area * adaptive_param_2d([-0.5, -0.5], [0.5, 0.5], 0, f, dim, b, g),
            }
        }
    }
}

fn adaptive_param_1d(
    a: f64,
    b: f64,
    depth: u32,
    g: &dyn Fn(f64) -> f64,
    inside: &dyn Fn(f64) -> bool,
) -> f64 {
    let probes = 5;
    let mut any_in = false;
    let mut all_in = true;
    for i in 0..probes {
        let u = a + (b - a) * (i as f64 + 0.5) / probes as f64;
        if inside(u) {
            any_in = true;
        } else {
            all_in = false;
        }
    }
    if !any_in && depth >= 2 {
        return 0.0;
    }
    if all_in || depth >= 14 {
        return quad::gl4(a, b, g);
    }
    let m = 0.5 * (a + b);
    adaptive_param_1d(a, m, depth + 1, g, inside) + adaptive_param_1d(m, b, depth + 1, g, inside)
}

fn adaptive_param_2d(
    lo: [f64; 2],
    hi: [f64; 2],
    depth: u32,
    f: &Facet,
    dim: usize,
    b: &BoxRegion,
    g: &dyn Fn(Point) -> f64,
) -> f64 {
    let mut any_in = false;
    let mut all_in = true;
    for i in 0..3 {
        for j in 0..3 {
            let u = lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / 3.0;
            let v = lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / 3.0;
            if b.contains(f.point_at(dim, u, v)) {
                any_in = true;
            } else {
                all_in = false;
            }
        }
    }
    if !any_in && depth >= 2 {
        return 0.0;
    }
    if all_in || depth >= 9 {
        let mut acc = 0.0;
        for (nu, wu) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
            for (nv, wv) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                let u = 0.5 * (lo[0] + hi[0]) + 0.5 * (hi[0] - lo[0]) * 0.5 * nu;
                let v = 0.5 * (lo[1] + hi[1]) + 0.5 * (hi[1] - lo[1]) * 0.5 * nv;
                let p = f.point_at(dim, u, v);
                let val = if all_in || b.contains(p) { g(p) } else { 0.0 };
                acc += wu * wv * val;
            }
        }
        return acc * 0.25 * (hi[0] - lo[0]) * (hi[1] - lo[1]);
    }
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    adaptive_param_2d(lo, [mid[0], mid[1]], depth + 1, f, dim, b, g)
        + adaptive_param_2d([mid[0], lo[1]], [hi[0], mid[1]], depth + 1, f, dim, b, g)
        + adaptive_param_2d([lo[0], mid[1]], [mid[0], hi[1]], depth + 1, f, dim, b, g)
        + adaptive_param_2d(mid, [hi[0], hi[1]], depth + 1, f, dim, b, g)
}

/// `H^{N-1}` measure of the part of a facet inside a region (all of it when
/// `region` is `None`).
pub(crate) fn facet_area_in_region(f: &Facet, dim: usize, region: Option<&Region>) -> f64 {
    match region {
        None => match dim {
            1 => 1.0,
            2 => f.extent[0],
            _ => f.extent[0] * f.extent[1],
        },
        Some(reg) => match dim {
            1 => {
                if reg.contains(f.center) {
                    1.0
                } else {
                    0.0
                }
            }
            2 => f.extent[0] * area_fraction_1d(f, dim, reg, -0.5, 0.5, 0),
            _ => f.extent[0] * f.extent[1] * area_fraction_2d(f, dim, reg, [-0.5, -0.5], [0.5, 0.5], 0),
        },
    }
}

fn area_fraction_1d(f: &Facet, dim: usize, reg: &Region, a: f64, b: f64, depth: u32) -> f64 {
    let samples = 4;
    let mut inside = 0;
    for i in 0..samples {
        let u = a + (b - a) * (i as f64 + 0.5) / samples as f64;
        if reg.contains(f.point_at(dim, u, 0.0)) {
            inside += 1;
        }
    }
    if inside == samples && depth >= 1 {
        return b - a;
    }
    if inside == 0 && depth >= 1 {
        return 0.0;
    }
    if depth >= 24 {
        return (b - a) * inside as f64 / samples as f64;
    }
    let m = 0.5 * (a + b);
    area_fraction_1d(f, dim, reg, a, m, depth + 1) + area_fraction_1d(f, dim, reg, m, b, depth + 1)
}

fn area_fraction_2d(f: &Facet, dim: usize, reg: &Region, lo: [f64; 2], hi: [f64; 2], depth: u32) -> f64 {
    let mut inside = 0;
    let mut total = 0;
    for i in 0..3 {
        for j in 0..3 {
            let u = lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / 3.0;
            let v = lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / 3.0;
            total += 1;
            if reg.contains(f.point_at(dim, u, v)) {
                inside += 1;
            }
        }
    }
    let cell = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    if inside == total && depth >= 1 {
        return cell;
    }
    if inside == 0 && depth >= 1 {
        return 0.0;
    }
    if depth >= 13 {
        return cell * inside as f64 / total as f64;
    }
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    area_fraction_2d(f, dim, reg, lo, [mid[0], mid[1]], depth + 1)
        + area_fraction_2d(f, dim, reg, [mid[0], lo[1]], [hi[0], mid[1]], depth + 1)
        + area_fraction_2d(f, dim, reg, [lo[0], mid[1]], [mid[0], hi[1]], depth + 1)
        + area_fraction_2d(f, dim, reg, mid, [hi[0], hi[1]], depth + 1)
}

/// Lebesgue measure of `cell ∩ region`; exact for boxes, adaptive for
/// dilated regions (which are convex, so inclusion tests are corner tests).
pub(crate) fn cell_region_volume(domain: &Domain, cell: usize, region: &Region) -> f64 {
    let n = domain.dim;
    let lo = domain.cell_lo(cell);
    let h = domain.cell_size();
    let mut hi = lo;
    for a in 0..n {
        hi[a] += h[a];
    }
    match region {
        Region::Box(b) => {
            let mut vol = 1.0;
            for a in 0..n {
                let overlap = (hi[a].min(b.hi[a]) - lo[a].max(b.lo[a])).max(0.0);
                vol *= overlap;
            }
            vol
        }
        Region::Dilated { core, r } => dilated_box_volume(core, *r, lo, hi, n, 0),
    }
}

fn dilated_box_volume(core: &BoxRegion, r: f64, lo: Point, hi: Point, n: usize, depth: u32) -> f64 {
    // Exact emptiness: distance between boxes exceeding r.
    let mut gap2 = 0.0;
    for a in 0..n {
        let g = (core.lo[a] - hi[a]).max(lo[a] - core.hi[a]).max(0.0);
        gap2 += g * g;
    }
    if gap2 > r * r {
        return 0.0;
    }
    // Exact inclusion: all corners of the cell inside the convex dilation.
    let b = BoxRegion { dim: n, lo, hi };
    let corners = box_corners(&b, n);
    if corners.iter().all(|&c| core.dist(c) <= r) {
        return (0..n).map(|a| hi[a] - lo[a]).product();
    }
    let vol: f64 = (0..n).map(|a| hi[a] - lo[a]).product();
    let max_depth = match n {
        1 => 44,
        2 => 30,
        _ => 21,
    };
    if depth >= max_depth || vol < 1e-24 {
        let mut c = [0.0; 3];
        for a in 0..n {
            c[a] = 0.5 * (lo[a] + hi[a]);
        }
        return if core.dist(c) <= r { vol } else { 0.0 };
    }
    // Split along the widest axis.
    let mut axis = 0;
    for a in 1..n {
        if hi[a] - lo[a] > hi[axis] - lo[axis] {
            axis = a;
        }
    }
    let mut mid_hi = hi;
    let mut mid_lo = lo;
    mid_hi[axis] = 0.5 * (lo[axis] + hi[axis]);
    mid_lo[axis] = mid_hi[axis];
    dilated_box_volume(core, r, lo, mid_hi, n, depth + 1)
        + dilated_box_volume(core, r, mid_lo, hi, n, depth + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn kernel_rejects_bad_radius() {
        assert!(Kernel::new(0.0, 1, Profile::Bump).is_err());
        assert!(Kernel::new(-1.0, 2, Profile::Bump).is_err());
    }

    #[test]
    fn kernel_normalization_matches_oracle_1d() {
        // Independent oracle for the raw bump integral on (-1, 1).
        let raw = quad::refine_doubling(64, 1e-13, 22, |n| {
            quad::midpoint(-1.0, 1.0, n, |x| Profile::Bump.raw(x.abs()))
        });
        assert!(raw.converged);
        assert!((raw.value - 0.443_993_816_168_079_4).abs() < 1e-10);
        let k = Kernel::new(1.0, 1, Profile::Bump).unwrap();
        assert!((k.c_n - 1.0 / raw.value).abs() < 1e-9);
    }

    #[test]
    fn kernel_vanishes_on_support_boundary() {
        for &r in &[1.0, 0.35] {
            let k = Kernel::new(r, 2, Profile::Bump).unwrap();
            assert_eq!(k.eval([r, 0.0, 0.0]), 0.0);
            assert_eq!(k.eval([r * 2.0, 0.0, 0.0]), 0.0);
            assert!(k.eval([0.5 * r, 0.0, 0.0]) > 0.0);
        }
    }

    #[test]
    fn kernel_scaling_law_at_origin() {
        for dim in 1..=3 {
            let k1 = Kernel::new(1.0, dim, Profile::Bump).unwrap();
            let k_half = Kernel::new(0.5, dim, Profile::Bump).unwrap();
            let expect = 2f64.powi(dim as i32) * k1.at_origin();
            assert!((k_half.at_origin() - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn atomic_convolution_is_kernel_evaluation() {
        let domain = Domain::unit(1, 16);
        let k = Kernel::new(0.2, 1, Profile::Bump).unwrap();
        let z0 = 0.5;
        let mu = VectorMeasure::zero(domain, 1)
            .with_facets(vec![Facet::atom(z0, &dvector![2.0])])
            .unwrap();
        for &x in &[0.4, 0.5, 0.62] {
            let v = mu.convolve(&k, [x, 0.0, 0.0]).unwrap();
            let expect = 2.0 * k.eval([x - z0, 0.0, 0.0]);
            assert!((v[(0, 0)] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_density_convolves_to_itself() {
        for dim in 1..=2usize {
            let domain = Domain::unit(dim, 32);
            let k = Kernel::new(0.15, dim, Profile::Bump).unwrap();
            let m = DMatrix::from_element(1, dim, 0.7);
            let mu = VectorMeasure::constant(domain, &m);
            let x = [0.5, 0.5, 0.0];
            let v = mu.convolve(&k, x).unwrap();
            let tol = if dim == 1 { 1e-8 } else { 1e-6 };
            for j in 0..dim {
                assert!((v[(0, j)] - 0.7).abs() < tol, "dim {dim}: {}", v[(0, j)]);
            }
        }
    }

    #[test]
    fn convolve_outside_shrunk_domain_errors() {
        let domain = Domain::unit(1, 8);
        let k = Kernel::new(0.2, 1, Profile::Bump).unwrap();
        let mu = VectorMeasure::zero(domain, 1);
        assert!(matches!(mu.convolve(&k, [0.1, 0.0, 0.0]), Err(SdError::OutsideSupportedRegion)));
        assert!(mu.convolve(&k, [0.5, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn total_variation_of_linear_density() {
        // m(x) = x on (0,1): total variation 1/2.
        let domain = Domain::unit(1, 512);
        let mu = VectorMeasure::from_density(domain.clone(), 1, |x| DMatrix::from_element(1, 1, x[0]));
        let tv = mu.total_variation(&Region::Box(domain.as_box()));
        assert!((tv - 0.5).abs() < 1e-8);
    }

    #[test]
    fn atom_total_variation_and_bracket() {
        let domain = Domain::unit(1, 64);
        let mu = VectorMeasure::zero(domain.clone(), 1)
            .with_facets(vec![Facet::atom(0.3, &dvector![-2.5])])
            .unwrap();
        let all = Region::Box(domain.as_box());
        assert!((mu.total_variation(&all) - 2.5).abs() < 1e-12);
        // <mu>(A) = |A| + |lambda| for a pure atom.
        assert!((mu.bracket_norm(&all) - (1.0 + 2.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_measure_bracket_is_lebesgue_volume() {
        let domain = Domain::unit(2, 16);
        let mu = VectorMeasure::zero(domain.clone(), 2);
        let all = Region::Box(domain.as_box());
        assert!((mu.bracket_norm(&all) - 1.0).abs() < 1e-12);
        assert_eq!(mu.total_variation(&all), 0.0);
    }

    #[test]
    fn facet_outside_domain_rejected() {
        let domain = Domain::unit(2, 8);
        let f = Facet::from_jump(2, [0.99, 0.5, 0.0], [1.0, 0.0, 0.0], [0.5, 1.0], &dvector![1.0, 0.0]).unwrap();
        // Vertical segment at x ~ 1 of half-length 0.25 stays inside; shift it out.
        let mut g = f.clone();
        g.center = [1.2, 0.5, 0.0];
        assert!(VectorMeasure::zero(domain.clone(), 2).with_facets(vec![f]).is_ok());
        assert!(VectorMeasure::zero(domain, 2).with_facets(vec![g]).is_err());
    }

    #[test]
    fn mass_bound_for_atom_and_constant() {
        let domain = Domain::unit(1, 64);
        let k = Kernel::new(0.1, 1, Profile::Bump).unwrap();
        let a = BoxRegion::new(1, [0.45, 0.0, 0.0], [0.55, 0.0, 0.0]);
        let atom = VectorMeasure::zero(domain.clone(), 1)
            .with_facets(vec![Facet::atom(0.5, &dvector![3.0])])
            .unwrap();
        let mb = mass_bound_check(&atom, &k, &a, 1e-6).unwrap();
        assert!(mb.ok);
        assert!(mb.lhs <= 3.0 + 1e-9);

        let constant = VectorMeasure::constant(domain, &DMatrix::from_element(1, 1, 2.0));
        let mb2 = mass_bound_check(&constant, &k, &a, 1e-6).unwrap();
        assert!(mb2.ok);
        // lhs = |m| |A|, rhs = |m| |A^r|.
        assert!((mb2.lhs - 0.2).abs() < 1e-6);
        assert!((mb2.rhs - 2.0 * 0.3).abs() < 1e-9);
    }

    #[test]
    fn mass_bound_region_must_sit_inside_shrunk_domain() {
        let domain = Domain::unit(1, 32);
        let k = Kernel::new(0.2, 1, Profile::Bump).unwrap();
        let mu = VectorMeasure::zero(domain, 1);
        let a = BoxRegion::new(1, [0.05, 0.0, 0.0], [0.5, 0.0, 0.0]);
        assert!(matches!(mass_bound_check(&mu, &k, &a, 1e-6), Err(SdError::RegionOutsideShrunkDomain)));
    }

    #[test]
    fn convolution_is_linear() {
        let domain = Domain::unit(1, 48);
        let k = Kernel::new(0.15, 1, Profile::Bump).unwrap();
        let mu1 = VectorMeasure::from_density(domain.clone(), 1, |x| DMatrix::from_element(1, 1, x[0] * x[0]))
            .with_facets(vec![Facet::atom(0.4, &dvector![1.5])])
            .unwrap();
        let mu2 = VectorMeasure::from_density(domain.clone(), 1, |x| DMatrix::from_element(1, 1, (3.0 * x[0]).sin()))
            .with_facets(vec![Facet::atom(0.7, &dvector![-0.5])])
            .unwrap();
        let sum = mu1.add(&mu2).unwrap();
        for &x in &[0.3, 0.5, 0.8] {
            let p = [x, 0.0, 0.0];
            let lhs = sum.convolve(&k, p).unwrap();
            let rhs = mu1.convolve(&k, p).unwrap() + mu2.convolve(&k, p).unwrap();
            assert!((lhs - &rhs).norm() < 1e-12);
        }
    }
}
