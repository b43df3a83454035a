//! Structured deformations `(g, G)`, their approximating SBV staircases, and
//! the extraction of jump measures.
//!
//! The smooth part of `g` is affine (which covers two-level shears and plane
//! jumps); `G` is constant, a laminate varying along one axis, or a closed
//! form. The approximation theorem is realized constructively: the staircase
//! `u_n(x) = g(x) - M (x - snap_n(x))` has gradient `G`, converges to `g` in
//! `L^1`, and its jumps sit on the `n`-grid planes plus the jumps of `g`.

use crate::error::{Result, SdError};
use crate::geom::{Domain, Facet, Point};
use crate::measure::VectorMeasure;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Closed-form smooth part of `g` with a closed-form Jacobian.
#[derive(Clone)]
pub enum SmoothMap {
    Affine { a: DMatrix<f64>, b: DVector<f64> },
}

impl std::fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SmoothMap::Affine { a, .. } => f.debug_struct("Affine").field("rows", &a.nrows()).finish(),
        }
    }
}

impl SmoothMap {
    pub fn affine(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        SmoothMap::Affine { a, b }
    }

    pub fn identity(dim: usize) -> Self {
        SmoothMap::Affine { a: DMatrix::identity(dim, dim), b: DVector::zeros(dim) }
    }

    pub fn eval(&self, x: Point, dim: usize) -> DVector<f64> {
        match self {
            SmoothMap::Affine { a, b } => {
                let xv = DVector::from_fn(dim, |i, _| x[i]);
                a * xv + b
            }
        }
    }

    pub fn grad(&self, _x: Point) -> DMatrix<f64> {
        match self {
            SmoothMap::Affine { a, .. } => a.clone(),
        }
    }

    pub fn d(&self) -> usize {
        match self {
            SmoothMap::Affine { a, .. } => a.nrows(),
        }
    }
}

/// The field `G`: the part of `nabla g` attained without disarrangements.
#[derive(Clone)]
pub enum GField {
    Constant(DMatrix<f64>),
    /// Piecewise constant along one axis; `values.len() == breaks.len() + 1`.
    Laminate { axis: usize, breaks: Vec<f64>, values: Vec<DMatrix<f64>> },
    Analytic(Arc<dyn Fn(Point) -> DMatrix<f64> + Send + Sync>),
}

impl std::fmt::Debug for GField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GField::Constant(_) => write!(f, "GField::Constant"),
            GField::Laminate { axis, breaks, .. } => {
                write!(f, "GField::Laminate(axis {axis}, {} breaks)", breaks.len())
            }
            GField::Analytic(_) => write!(f, "GField::Analytic"),
        }
    }
}

impl GField {
    pub fn eval(&self, x: Point) -> DMatrix<f64> {
        match self {
            GField::Constant(m) => m.clone(),
            GField::Laminate { axis, breaks, values } => {
                let mut idx = 0;
                for b in breaks {
                    if x[*axis] >= *b {
                        idx += 1;
                    } else {
                        break;
                    }
                }
                values[idx].clone()
            }
            GField::Analytic(f) => f(x),
        }
    }
}

/// A structured deformation `(g, G)` on a box domain.
#[derive(Debug, Clone)]
pub struct StructuredDeformation {
    pub domain: Domain,
    pub d: usize,
    pub g: SmoothMap,
    /// Planar jumps of `g` (amplitude `[g] (x) nu`).
    pub g_jumps: Vec<Facet>,
    pub g_field: GField,
    /// Marked invertible (ISD); checked on a sample grid at construction.
    pub isd: bool,
}

impl StructuredDeformation {
    pub fn new(domain: Domain, g: SmoothMap, g_jumps: Vec<Facet>, g_field: GField) -> Result<Self> {
        let d = g.d();
        for f in &g_jumps {
            if f.amplitude.nrows() != d || f.amplitude.ncols() != domain.dim {
                return Err(SdError::DimensionMismatch("g jump amplitude shape".into()));
            }
        }
        Ok(Self { domain, d, g, g_jumps, g_field, isd: false })
    }

    /// Mark as invertible and verify (I1)-(I3) on a sample grid:
    /// `det nabla g = det G` pointwise within 1e-10.
    pub fn into_isd(mut self) -> Result<Self> {
        if self.d != self.domain.dim {
            return Err(SdError::IsdViolation("ISD requires d = N".into()));
        }
        if !self.g_jumps.is_empty() {
            return Err(SdError::IsdViolation("ISD macroscopic deformation must be smooth".into()));
        }
        let probe = self.domain.with_res([4, 4, 4]);
        for c in 0..probe.cell_count() {
            let x = probe.cell_center(c);
            let dg = self.grad_g(x);
            let g = self.big_g(x);
            let det_dg = dg.determinant();
            let det_g = g.determinant();
            if det_dg.abs() < 1e-12 || det_g.abs() < 1e-12 {
                return Err(SdError::IsdViolation("singular gradients".into()));
            }
            if (det_dg - det_g).abs() > 1e-10 * det_dg.abs().max(1.0) {
                return Err(SdError::IsdViolation(format!(
                    "det nabla g = {det_dg} differs from det G = {det_g}"
                )));
            }
        }
        self.isd = true;
        Ok(self)
    }

    /// Affine deformation `g(x) = A x + b` with a given `G`.
    pub fn affine(domain: Domain, a: DMatrix<f64>, b: DVector<f64>, g_field: GField) -> Result<Self> {
        Self::new(domain, SmoothMap::affine(a, b), Vec::new(), g_field)
    }

    /// Two-level shear: `g(x) = x0 + (I + mu s (x) m)(x - x0)`, `G = I + gamma s (x) m`.
    /// In one dimension `s` and `m` degenerate to the scalar 1.
    pub fn two_level_shear(domain: Domain, s: Point, m: Point, mu: f64, gamma: f64, x0: Point) -> Result<Self> {
        let dim = domain.dim;
        let sv = DVector::from_fn(dim, |i, _| s[i]);
        let mv = DVector::from_fn(dim, |i, _| m[i]);
        if (sv.norm() - 1.0).abs() > 1e-12 || (mv.norm() - 1.0).abs() > 1e-12 {
            return Err(SdError::DimensionMismatch("slip direction and normal must be unit".into()));
        }
        if dim >= 2 && sv.dot(&mv).abs() > 1e-12 {
            return Err(SdError::DimensionMismatch("slip direction must lie in the slip plane".into()));
        }
        let dyad = &sv * mv.transpose();
        let a = DMatrix::identity(dim, dim) + &dyad * mu;
        let x0v = DVector::from_fn(dim, |i, _| x0[i]);
        let b = &x0v - &a * &x0v;
        let g_field = GField::Constant(DMatrix::identity(dim, dim) + &dyad * gamma);
        let sd = Self::new(domain, SmoothMap::affine(a, b), Vec::new(), g_field)?;
        // With s . m = 0 the rank-one determinant identity gives
        // det(I + c s (x) m) = 1 on both levels, so the shear is invertible.
        // The 1d degenerate case (s = m = 1) is a plain structured deformation.
        if dim >= 2 {
            sd.into_isd()
        } else {
            Ok(sd)
        }
    }

    /// 1d deformation `g(x) = slope x` with a single jump of size `lambda` at `z0`,
    /// and `G = nabla g` (no diffuse disarrangements).
    pub fn step_jump_1d(domain: Domain, slope: f64, lambda: f64, z0: f64) -> Result<Self> {
        if domain.dim != 1 {
            return Err(SdError::DimensionMismatch("step_jump_1d needs a 1d domain".into()));
        }
        let facet = Facet::atom(z0, &nalgebra::dvector![lambda]);
        Self::new(
            domain,
            SmoothMap::affine(DMatrix::from_element(1, 1, slope), DVector::zeros(1)),
            vec![facet],
            GField::Constant(DMatrix::from_element(1, 1, slope)),
        )
    }

    pub fn g_at(&self, x: Point) -> DVector<f64> {
        self.g.eval(x, self.domain.dim)
    }

    pub fn grad_g(&self, x: Point) -> DMatrix<f64> {
        self.g.grad(x)
    }

    pub fn big_g(&self, x: Point) -> DMatrix<f64> {
        self.g_field.eval(x)
    }

    /// Disarrangement tensor `M(x) = nabla g(x) - G(x)`.
    pub fn m_at(&self, x: Point) -> DMatrix<f64> {
        self.grad_g(x) - self.big_g(x)
    }

    /// `K(x) = (nabla g(x))^-1 G(x)`.
    pub fn k_at(&self, x: Point) -> Result<DMatrix<f64>> {
        let dg = self.grad_g(x);
        let inv = dg.clone().try_inverse().ok_or(SdError::SingularGradient(x))?;
        Ok(inv * self.big_g(x))
    }

    /// The limit measure `mu = (nabla g - G) L^N + D^s g` on a grid of the
    /// given resolution.
    pub fn limit_measure(&self, res: [usize; 3]) -> VectorMeasure {
        let grid = self.domain.with_res(res);
        let mut mu = VectorMeasure::from_density(grid, self.d, |x| self.m_at(x));
        for f in &self.g_jumps {
            mu.push_facet(f.clone()).expect("g jump facets are valid measure facets");
        }
        mu
    }

    /// `||(g,G)||_SD = ||g||_L1 + |Dg|(Omega) + ||G||_L1` by quadrature.
    pub fn sd_norm(&self) -> f64 {
        let grid = self.domain.with_res([64, 64, 16]);
        let mut l1_g = 0.0;
        let mut tv_g = 0.0;
        let mut l1_big_g = 0.0;
        let vol = grid.cell_volume();
        for c in 0..grid.cell_count() {
            let x = grid.cell_center(c);
            l1_g += self.g_at(x).norm() * vol;
            tv_g += self.grad_g(x).norm() * vol;
            l1_big_g += self.big_g(x).norm() * vol;
        }
        for f in &self.g_jumps {
            tv_g += f.amplitude_norm() * f.area(self.domain.dim);
        }
        l1_g + tv_g + l1_big_g
    }

    /// Extend to a padded box: the affine smooth part continues by its own
    /// formula, `G` by its nearest interior value, and no singular mass is
    /// created on the old boundary. Jump facets lying inside a boundary face
    /// are rejected.
    pub fn extend(&self, pad: f64) -> Result<StructuredDeformation> {
        if !(pad > 0.0) {
            return Err(SdError::InvalidDomain("padding must be positive".into()));
        }
        let dim = self.domain.dim;
        for f in &self.g_jumps {
            for a in 0..dim {
                let aligned = f.normal[a].abs() > 1.0 - 1e-12;
                if aligned
                    && ((f.center[a] - self.domain.lo[a]).abs() < 1e-12
                        || (f.center[a] - self.domain.hi[a]).abs() < 1e-12)
                {
                    return Err(SdError::JumpOnBoundary);
                }
            }
        }
        let h = self.domain.cell_size();
        let mut res = self.domain.res;
        for a in 0..dim {
            res[a] += 2 * (pad / h[a]).ceil() as usize;
        }
        let padded = self.domain.padded(pad, res)?;
        let core_lo = self.domain.lo;
        let core_hi = self.domain.hi;
        let g_field = match &self.g_field {
            GField::Constant(m) => GField::Constant(m.clone()),
            GField::Laminate { axis, breaks, values } => {
                GField::Laminate { axis: *axis, breaks: breaks.clone(), values: values.clone() }
            }
            GField::Analytic(f) => {
                let f = f.clone();
                GField::Analytic(Arc::new(move |x: Point| {
                    let mut y = x;
                    for a in 0..3 {
                        y[a] = y[a].clamp(core_lo[a], core_hi[a]);
                    }
                    f(y)
                }))
            }
        };
        Ok(StructuredDeformation {
            domain: padded,
            d: self.d,
            g: self.g.clone(),
            g_jumps: self.g_jumps.clone(),
            g_field,
            isd: self.isd,
        })
    }
}

/// Affine map attached to one piece of an SBV function.
#[derive(Debug, Clone)]
pub struct AffinePiece {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffinePiece {
    pub fn eval(&self, x: Point, dim: usize) -> DVector<f64> {
        let xv = DVector::from_fn(dim, |i, _| x[i]);
        &self.a * xv + &self.b
    }
}

/// Piecewise-affine SBV deformation with axis-aligned cells or parallel slabs.
#[derive(Debug, Clone)]
pub enum Pieces {
    /// Tensor grid partition of the domain; one affine map per cell.
    TensorGrid { grid: Domain, maps: Vec<AffinePiece> },
    /// Parallel slabs `t_k < (x - x0) . normal < t_{k+1}`.
    Slabs { normal: Point, x0: Point, breaks: Vec<f64>, maps: Vec<AffinePiece> },
}

#[derive(Debug, Clone)]
pub struct SbvFunction {
    pub domain: Domain,
    pub d: usize,
    pub pieces: Pieces,
    /// Jumps inherited from `S_g`.
    pub extra_facets: Vec<Facet>,
}

impl SbvFunction {
    fn piece_index(&self, x: Point) -> usize {
        match &self.pieces {
            Pieces::TensorGrid { grid, .. } => {
                let h = grid.cell_size();
                let mut multi = [0usize; 3];
                for a in 0..grid.dim {
                    let idx = ((x[a] - grid.lo[a]) / h[a]).floor();
                    multi[a] = (idx.max(0.0) as usize).min(grid.res[a] - 1);
                }
                grid.cell_flat(multi)
            }
            Pieces::Slabs { normal, x0, breaks, .. } => {
                let t: f64 = (0..self.domain.dim).map(|a| normal[a] * (x[a] - x0[a])).sum();
                let mut idx = 0;
                for b in breaks {
                    if t >= *b {
                        idx += 1;
                    } else {
                        break;
                    }
                }
                idx
            }
        }
    }

    fn piece_map(&self, idx: usize) -> &AffinePiece {
        match &self.pieces {
            Pieces::TensorGrid { maps, .. } => &maps[idx],
            Pieces::Slabs { maps, .. } => &maps[idx],
        }
    }

    pub fn eval(&self, x: Point) -> DVector<f64> {
        self.piece_map(self.piece_index(x)).eval(x, self.domain.dim)
    }

    pub fn grad(&self, x: Point) -> DMatrix<f64> {
        self.piece_map(self.piece_index(x)).a.clone()
    }

    /// Interior jump facets derived from the piece data (plus inherited
    /// `S_g` facets). Adjacent coplanar facets with equal amplitude merge.
    pub fn jump_facets(&self) -> Result<Vec<Facet>> {
        let dim = self.domain.dim;
        let mut facets: Vec<Facet> = Vec::new();
        match &self.pieces {
            Pieces::TensorGrid { grid, maps } => {
                let h = grid.cell_size();
                for axis in 0..dim {
                    for plane in 1..grid.res[axis] {
                        // Walk the (N-1)-dimensional face grid on this plane.
                        let mut lower = [0usize; 3];
                        lower[axis] = plane - 1;
                        loop {
                            let mut upper = lower;
                            upper[axis] = plane;
                            let lo_cell = grid.cell_flat(lower);
                            let hi_cell = grid.cell_flat(upper);
                            let face_center = {
                                let mut c = grid.cell_center(lo_cell);
                                c[axis] = grid.lo[axis] + plane as f64 * h[axis];
                                c
                            };
                            let amp = face_jump(&maps[hi_cell], &maps[lo_cell], face_center, dim, h, axis)?;
                            if amp.norm() > 1e-14 {
                                let mut normal = [0.0; 3];
                                normal[axis] = 1.0;
                                let mut extent = [1.0, 1.0];
                                let t_axes: Vec<usize> = (0..dim).filter(|a| *a != axis).collect();
                                for (i, ta) in t_axes.iter().enumerate() {
                                    extent[i] = h[*ta];
                                }
                                let mut f = Facet::new(dim, face_center, normal, extent, amp)?;
                                // Axis-aligned tangents for exact clipping.
                                let mut tangents = [[0.0; 3]; 2];
                                for (i, ta) in t_axes.iter().enumerate() {
                                    tangents[i][*ta] = 1.0;
                                }
                                f.tangents = tangents;
                                facets.push(f);
                            }
                            // Advance over the transversal indices.
                            let mut done = true;
                            for a in (0..dim).rev() {
                                if a == axis {
                                    continue;
                                }
                                lower[a] += 1;
                                if lower[a] < grid.res[a] {
                                    done = false;
                                    break;
                                }
                                lower[a] = 0;
                            }
                            if done {
                                break;
                            }
                        }
                    }
                }
            }
            Pieces::Slabs { normal, x0, breaks, maps } => {
                for (k, t) in breaks.iter().enumerate() {
                    let hi = &maps[k + 1];
                    let lo = &maps[k];
                    let da = &hi.a - &lo.a;
                    if da.norm() > 1e-12 {
                        return Err(SdError::UnsupportedDisarrangement(
                            "slab pieces must share their gradient".into(),
                        ));
                    }
                    let amp_vec = &hi.b - &lo.b;
                    if amp_vec.norm() < 1e-14 {
                        continue;
                    }
                    facets.push(slab_facet(&self.domain, *normal, *x0, *t, &amp_vec)?);
                }
            }
        }
        facets = merge_coplanar(facets, dim);
        facets.extend(self.extra_facets.iter().cloned());
        Ok(facets)
    }

    /// The singular measure `D^s u = [u] (x) nu_u H^{N-1} |_ S_u`.
    pub fn singular_part(&self) -> Result<VectorMeasure> {
        let facets = self.jump_facets()?;
        let mut mu = VectorMeasure::zero(self.domain.clone(), self.d);
        for f in facets {
            mu.push_facet(f)?;
        }
        Ok(mu)
    }

    /// `|Du|(Omega)`: L1 norm of the gradient plus total jump mass.
    pub fn total_variation(&self) -> Result<f64> {
        let grid = self.domain.with_res([32, 32, 8]);
        let vol = grid.cell_volume();
        let mut acc = 0.0;
        for c in 0..grid.cell_count() {
            acc += self.grad(grid.cell_center(c)).norm() * vol;
        }
        for f in self.jump_facets()? {
            acc += f.amplitude_norm()
                * crate::measure::facet_area_in_region(
                    &f,
                    self.domain.dim,
                    Some(&crate::geom::Region::Box(self.domain.as_box())),
                );
        }
        Ok(acc)
    }

    /// `L^1` distance to the macroscopic deformation of `sd`.
    pub fn l1_distance_to_g(&self, sd: &StructuredDeformation, res: [usize; 3]) -> f64 {
        let grid = self.domain.with_res(res);
        let vol = grid.cell_volume();
        let mut acc = 0.0;
        for c in 0..grid.cell_count() {
            let x = grid.cell_center(c);
            acc += (self.eval(x) - sd.g_at(x)).norm() * vol;
        }
        acc
    }
}

fn face_jump(
    hi: &AffinePiece,
    lo: &AffinePiece,
    face_center: Point,
    dim: usize,
    h: Point,
    axis: usize,
) -> Result<DMatrix<f64>> {
    let jump_at = |p: Point| -> DVector<f64> { hi.eval(p, dim) - lo.eval(p, dim) };
    let center_jump = jump_at(face_center);
    // The amplitude must be constant over the face: probe its corners.
    for corner in 0..(1 << (dim - 1)) {
        let mut p = face_center;
        let mut bit = 0;
        for a in 0..dim {
            if a == axis {
                continue;
            }
            let sign = if corner >> bit & 1 == 1 { 0.5 } else { -0.5 };
            p[a] += sign * h[a] * 0.999;
            bit += 1;
        }
        if (jump_at(p) - &center_jump).norm() > 1e-10 * (1.0 + center_jump.norm()) {
            return Err(SdError::UnsupportedDisarrangement(
                "jump amplitude varies across a face; the disarrangement field is not laminate-compatible".into(),
            ));
        }
    }
    let d = center_jump.len();
    let mut amp = DMatrix::zeros(d, dim);
    for i in 0..d {
        amp[(i, axis)] = center_jump[i];
    }
    Ok(amp)
}

/// Facet on a slab interface: exact for axis-aligned normals, otherwise a
/// circumscribed clipped patch.
fn slab_facet(domain: &Domain, normal: Point, x0: Point, t: f64, amp_vec: &DVector<f64>) -> Result<Facet> {
    let dim = domain.dim;
    let axis = (0..dim).find(|a| normal[*a].abs() > 1.0 - 1e-12);
    let d = amp_vec.len();
    let mut amp = DMatrix::zeros(d, dim);
    for i in 0..d {
        for j in 0..dim {
            amp[(i, j)] = amp_vec[i] * normal[j];
        }
    }
    match axis {
        Some(a) => {
            let mut center = [0.0; 3];
            for ax in 0..dim {
                center[ax] = 0.5 * (domain.lo[ax] + domain.hi[ax]);
            }
            center[a] = x0[a] + t * normal[a].signum();
            let mut extent = [1.0, 1.0];
            let others: Vec<usize> = (0..dim).filter(|ax| *ax != a).collect();
            for (i, oa) in others.iter().enumerate() {
                extent[i] = domain.side(*oa);
            }
            let mut f = Facet::new(dim, center, [normal[0].signum() * normal[0].abs().round(), normal[1].signum() * normal[1].abs().round(), normal[2].signum() * normal[2].abs().round()], extent, amp)?;
            let mut tangents = [[0.0; 3]; 2];
            for (i, oa) in others.iter().enumerate() {
                tangents[i][*oa] = 1.0;
            }
            f.tangents = tangents;
            Ok(f)
        }
        None => {
            // Tilted plane: patch big enough to cover the box section.
            let mut box_center = [0.0; 3];
            for ax in 0..dim {
                box_center[ax] = 0.5 * (domain.lo[ax] + domain.hi[ax]);
            }
            let tc: f64 = (0..dim).map(|a| normal[a] * (box_center[a] - x0[a])).sum();
            let mut center = box_center;
            for a in 0..dim {
                center[a] += (t - tc) * normal[a];
            }
            let diam = (0..dim).map(|a| domain.side(a).powi(2)).sum::<f64>().sqrt();
            Ok(Facet::new(dim, center, normal, [diam, diam], amp)?.clipped())
        }
    }
}

/// Merge contiguous coplanar facets with identical amplitude (keeps the facet
/// count of regular staircases linear in `n`).
fn merge_coplanar(mut facets: Vec<Facet>, dim: usize) -> Vec<Facet> {
    if dim == 1 || facets.is_empty() {
        return facets;
    }
    facets.sort_by(|a, b| {
        let ka = plane_key(a);
        let kb = plane_key(b);
        ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out: Vec<Facet> = Vec::new();
    for f in facets {
        if let Some(last) = out.last_mut() {
            if mergeable(last, &f, dim) {
                // Extend `last` along its first tangent.
                let t = last.tangents[0];
                let half = 0.5 * (last.extent[0] + f.extent[0]);
                let gap: f64 = (0..3).map(|a| (f.center[a] - last.center[a]) * t[a]).sum();
                if (gap.abs() - half).abs() < 1e-9 {
                    for a in 0..3 {
                        last.center[a] += 0.5 * f.extent[0] * gap.signum() * t[a];
                    }
                    last.extent[0] += f.extent[0];
                    continue;
                }
            }
        }
        out.push(f);
    }
    out
}

fn plane_key(f: &Facet) -> (i64, i64, i64, i64, i64) {
    let q = |v: f64| (v * 1e9).round() as i64;
    let t: f64 = (0..3).map(|a| f.normal[a] * f.center[a]).sum();
    // Group by normal direction, plane offset, and second-tangent coordinate.
    let s2: f64 = (0..3).map(|a| f.tangents[1][a] * f.center[a]).sum();
    let s1: f64 = (0..3).map(|a| f.tangents[0][a] * f.center[a]).sum();
    (q(f.normal[0]), q(f.normal[2]), q(t), q(s2), q(s1))
}

fn mergeable(a: &Facet, b: &Facet, dim: usize) -> bool {
    if a.clipped || b.clipped {
        return false;
    }
    let same_normal = (0..3).all(|i| (a.normal[i] - b.normal[i]).abs() < 1e-12);
    let same_plane = {
        let ta: f64 = (0..3).map(|i| a.normal[i] * a.center[i]).sum();
        let tb: f64 = (0..3).map(|i| b.normal[i] * b.center[i]).sum();
        (ta - tb).abs() < 1e-12
    };
    let same_amp = (&a.amplitude - &b.amplitude).norm() < 1e-13 * (1.0 + a.amplitude.norm());
    let same_second = if dim == 3 {
        let sa: f64 = (0..3).map(|i| a.tangents[1][i] * a.center[i]).sum();
        let sb: f64 = (0..3).map(|i| b.tangents[1][i] * b.center[i]).sum();
        (sa - sb).abs() < 1e-12 && (a.extent[1] - b.extent[1]).abs() < 1e-12
    } else {
        true
    };
    same_normal && same_plane && same_amp && same_second
}

/// The grid-snap staircase approximation `u_n = g - M (x - snap_n(x))`.
///
/// Requires `M = nabla g - G` constant, or laminate with interface jumps of
/// rank-one type aligned with the partition normal (so jump amplitudes are
/// constant per facet); laminate breaks must sit on the `n`-grid.
pub fn staircase_approximation(sd: &StructuredDeformation, n: usize) -> Result<SbvFunction> {
    if n == 0 {
        return Err(SdError::UnsupportedDisarrangement("n must be >= 1".into()));
    }
    let dim = sd.domain.dim;
    let grid = sd.domain.with_res([n, n, n]);
    let h = grid.cell_size();
    match &sd.g_field {
        GField::Constant(_) => {}
        GField::Laminate { axis, breaks, values } => {
            for b in breaks {
                let pos = (b - sd.domain.lo[*axis]) / h[*axis];
                if (pos - pos.round()).abs() > 1e-9 {
                    return Err(SdError::UnsupportedDisarrangement(format!(
                        "laminate break {b} does not sit on the {n}-grid"
                    )));
                }
            }
            // Interface jumps of M must be rank-one along the laminate axis.
            let dg = sd.grad_g([0.0; 3]);
            for w in values.windows(2) {
                let m0 = &dg - &w[0];
                let m1 = &dg - &w[1];
                let dm = &m1 - &m0;
                for j in 0..dim {
                    if j != *axis && dm.column(j).norm() > 1e-12 {
                        return Err(SdError::UnsupportedDisarrangement(
                            "laminate interface jump is not aligned with its normal".into(),
                        ));
                    }
                }
            }
        }
        GField::Analytic(_) => {
            return Err(SdError::UnsupportedDisarrangement(
                "staircase construction needs constant or laminate G".into(),
            ));
        }
    }
    let mut maps = Vec::with_capacity(grid.cell_count());
    for c in 0..grid.cell_count() {
        let center = grid.cell_center(c);
        let z = grid.cell_lo(c);
        let m = sd.m_at(center);
        // u_n(x) = g(x) - M (x - z) on this cell.
        let a = sd.grad_g(center) - &m;
        let zv = DVector::from_fn(dim, |i, _| z[i]);
        let gb = {
            let g0 = sd.g_at([0.0; 3]);
            g0
        };
        // g(x) = A_g x + b_g with b_g = g(0).
        let b = gb + &m * zv;
        maps.push(AffinePiece { a, b });
    }
    Ok(SbvFunction {
        domain: sd.domain.clone(),
        d: sd.d,
        pieces: Pieces::TensorGrid { grid, maps },
        extra_facets: sd.g_jumps.clone(),
    })
}

/// Deck-of-cards approximation of the two-level shear `(g_mu, G_gamma)`:
/// smooth shears of amount `gamma` between `n - 1` slip planes normal to `m`,
/// with per-plane slips `(mu - gamma)/n` times the extent in the `m`
/// direction.
pub fn deck_of_cards(
    domain: &Domain,
    s: Point,
    m: Point,
    mu: f64,
    gamma: f64,
    x0: Point,
    n: usize,
) -> Result<SbvFunction> {
    let dim = domain.dim;
    let sd = StructuredDeformation::two_level_shear(domain.clone(), s, m, mu, gamma, x0)?;
    // Range of t = m . (x - x0) over the box.
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for corner in crate::measure::box_corners(&domain.as_box(), dim) {
        let t: f64 = (0..dim).map(|a| m[a] * (corner[a] - x0[a])).sum();
        t_min = t_min.min(t);
        t_max = t_max.max(t);
    }
    let tau = (t_max - t_min) / n as f64;
    let breaks: Vec<f64> = (1..n).map(|k| t_min + k as f64 * tau).collect();
    let sv = DVector::from_fn(dim, |i, _| s[i]);
    let base_a = sd.big_g([0.0; 3]);
    let x0v = DVector::from_fn(dim, |i, _| x0[i]);
    let mut maps = Vec::with_capacity(n);
    for k in 0..n {
        // u(x) = x0 + G (x - x0) + (mu - gamma)(t_min + k tau) s.
        let b = &x0v - &base_a * &x0v + &sv * ((mu - gamma) * (t_min + k as f64 * tau));
        maps.push(AffinePiece { a: base_a.clone(), b });
    }
    Ok(SbvFunction {
        domain: domain.clone(),
        d: dim,
        pieces: Pieces::Slabs { normal: m, x0, breaks, maps },
        extra_facets: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Region;
    use nalgebra::{dmatrix, dvector};

    fn shear_1d(mu: f64, gamma: f64) -> StructuredDeformation {
        StructuredDeformation::two_level_shear(
            Domain::unit(1, 64),
            [1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            mu,
            gamma,
            [0.0; 3],
        )
        .unwrap()
    }

    #[test]
    fn two_level_shear_fields() {
        let sd = shear_1d(0.7, 0.3);
        let x = [0.5, 0.0, 0.0];
        assert!((sd.grad_g(x)[(0, 0)] - 1.7).abs() < 1e-15);
        assert!((sd.m_at(x)[(0, 0)] - 0.4).abs() < 1e-15);
        assert!((sd.k_at(x).unwrap()[(0, 0)] - 1.3 / 1.7).abs() < 1e-15);
        // No volume-preservation in the degenerate 1d case.
        assert!(!sd.isd);
    }

    #[test]
    fn two_level_shear_2d_is_isd() {
        let sd = StructuredDeformation::two_level_shear(
            Domain::unit(2, 8),
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            0.7,
            0.3,
            [0.5, 0.5, 0.0],
        )
        .unwrap();
        assert!(sd.isd);
        let m = sd.m_at([0.1, 0.9, 0.0]);
        assert!((m[(0, 1)] - 0.4).abs() < 1e-14 && m[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn m_equals_zero_gives_identity_k() {
        let dm = Domain::unit(2, 8);
        let a = dmatrix![1.2, 0.1; 0.0, 0.9];
        let sd = StructuredDeformation::affine(dm, a.clone(), dvector![0.0, 0.0], GField::Constant(a.clone())).unwrap();
        let x = [0.3, 0.6, 0.0];
        assert!(sd.m_at(x).norm() < 1e-15);
        let k = sd.k_at(x).unwrap();
        assert!((k - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn disarrangement_identity_holds() {
        // I - K = (nabla g)^-1 M for random affine data.
        let dm = Domain::unit(3, 4);
        let a = dmatrix![1.3, 0.2, -0.1; 0.05, 0.9, 0.3; -0.2, 0.1, 1.1];
        let g_val = dmatrix![1.0, 0.1, 0.0; 0.0, 1.05, 0.2; 0.1, 0.0, 0.95];
        let sd = StructuredDeformation::affine(dm, a.clone(), dvector![0.0, 0.0, 0.0], GField::Constant(g_val)).unwrap();
        let x = [0.4, 0.2, 0.7];
        let k = sd.k_at(x).unwrap();
        let lhs = DMatrix::identity(3, 3) - &k;
        let rhs = a.try_inverse().unwrap() * sd.m_at(x);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn staircase_of_classical_deformation_has_no_jumps() {
        let dm = Domain::unit(2, 8);
        let a = dmatrix![1.1, 0.0; 0.2, 0.8];
        let sd = StructuredDeformation::affine(dm, a.clone(), dvector![0.1, 0.0], GField::Constant(a)).unwrap();
        let u = staircase_approximation(&sd, 8).unwrap();
        assert!(u.jump_facets().unwrap().is_empty());
        // u_n = g exactly when M = 0.
        let x = [0.37, 0.61, 0.0];
        assert!((u.eval(x) - sd.g_at(x)).norm() < 1e-13);
    }

    #[test]
    fn staircase_1d_jump_sizes() {
        let sd = shear_1d(0.7, 0.3);
        let n = 8;
        let u = staircase_approximation(&sd, n).unwrap();
        let facets = u.jump_facets().unwrap();
        assert_eq!(facets.len(), n - 1);
        for f in &facets {
            assert!((f.amplitude[(0, 0)] - 0.4 / n as f64).abs() < 1e-14);
        }
        // Gradient equals G everywhere.
        for c in 0..40 {
            let x = [0.012 + 0.024 * c as f64, 0.0, 0.0];
            assert!((u.grad(x)[(0, 0)] - 1.3).abs() < 1e-13);
        }
        // u_n converges to g in L1 at rate ~ |M|/n.
        let d8 = u.l1_distance_to_g(&sd, [512, 1, 1]);
        let u64 = staircase_approximation(&sd, 64).unwrap();
        let d64 = u64.l1_distance_to_g(&sd, [512, 1, 1]);
        assert!(d64 < d8 / 4.0);
    }

    #[test]
    fn staircase_2d_horizontal_facets() {
        // M = e1 (x) e2: jumps only across horizontal planes with [u] = e1/n.
        let dm = Domain::unit(2, 8);
        let a = dmatrix![1.0, 1.0; 0.0, 1.0];
        let g_val = dmatrix![1.0, 0.0; 0.0, 1.0];
        let sd = StructuredDeformation::affine(dm, a, dvector![0.0, 0.0], GField::Constant(g_val)).unwrap();
        let n = 8;
        let u = staircase_approximation(&sd, n).unwrap();
        let facets = u.jump_facets().unwrap();
        // Merged rows: n - 1 horizontal lines.
        assert_eq!(facets.len(), n - 1);
        for f in &facets {
            assert!((f.normal[1].abs() - 1.0).abs() < 1e-12);
            assert!((f.extent[0] - 1.0).abs() < 1e-12);
            let expect = 1.0 / n as f64;
            assert!((f.amplitude[(0, 1)].abs() - expect).abs() < 1e-13);
        }
        // Total singular mass: (n-1)/n.
        let mu = u.singular_part().unwrap();
        let tv = mu.total_variation(&Region::Box(dm_box(&u.domain)));
        assert!((tv - (n as f64 - 1.0) / n as f64).abs() < 1e-10);
    }

    fn dm_box(d: &Domain) -> crate::geom::BoxRegion {
        d.as_box()
    }

    #[test]
    fn deck_of_cards_jump_mass() {
        let dm = Domain::unit(1, 32);
        for n in [1usize, 4, 16] {
            let u = deck_of_cards(&dm, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.7, 0.3, [0.0; 3], n).unwrap();
            let facets = u.jump_facets().unwrap();
            assert_eq!(facets.len(), n - 1);
            let total: f64 = facets.iter().map(|f| f.amplitude_norm()).sum();
            let expect = 0.4 * (n as f64 - 1.0) / n as f64;
            assert!((total - expect).abs() < 1e-12, "n = {n}: {total} vs {expect}");
        }
    }

    #[test]
    fn deck_equal_shears_is_classical() {
        let dm = Domain::unit(2, 8);
        let u = deck_of_cards(&dm, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.5, 0.5, [0.5, 0.5, 0.0], 6).unwrap();
        assert!(u.jump_facets().unwrap().is_empty());
    }

    #[test]
    fn staircase_needs_supported_field() {
        let dm = Domain::unit(1, 8);
        let sd = StructuredDeformation::affine(
            dm,
            dmatrix![1.0],
            dvector![0.0],
            GField::Analytic(Arc::new(|x: Point| DMatrix::from_element(1, 1, x[0]))),
        )
        .unwrap();
        assert!(staircase_approximation(&sd, 4).is_err());
    }

    #[test]
    fn laminate_staircase_1d() {
        // Piecewise M in 1d: G jumps at 0.5.
        let dm = Domain::unit(1, 8);
        let sd = StructuredDeformation::affine(
            dm,
            dmatrix![1.5],
            dvector![0.0],
            GField::Laminate {
                axis: 0,
                breaks: vec![0.5],
                values: vec![dmatrix![1.0], dmatrix![1.25]],
            },
        )
        .unwrap();
        let u = staircase_approximation(&sd, 8).unwrap();
        assert!((u.grad([0.2, 0.0, 0.0])[(0, 0)] - 1.0).abs() < 1e-13);
        assert!((u.grad([0.8, 0.0, 0.0])[(0, 0)] - 1.25).abs() < 1e-13);
        // Misaligned break is rejected.
        let sd_bad = StructuredDeformation::affine(
            Domain::unit(1, 8),
            dmatrix![1.5],
            dvector![0.0],
            GField::Laminate { axis: 0, breaks: vec![0.3], values: vec![dmatrix![1.0], dmatrix![1.25]] },
        )
        .unwrap();
        assert!(staircase_approximation(&sd_bad, 8).is_err());
    }

    #[test]
    fn extension_preserves_affine_and_jumps() {
        let sd = StructuredDeformation::step_jump_1d(Domain::unit(1, 32), 1.0, 0.5, 0.5).unwrap();
        let ext = sd.extend(0.2).unwrap();
        assert!((ext.domain.lo[0] + 0.2).abs() < 1e-12);
        assert!((ext.domain.hi[0] - 1.2).abs() < 1e-12);
        // Smooth part continues by the same formula.
        assert!((ext.g_at([1.1, 0.0, 0.0])[0] - 1.1).abs() < 1e-13);
        assert_eq!(ext.g_jumps.len(), 1);
        // A jump lying in the boundary is rejected.
        let bad = StructuredDeformation::step_jump_1d(Domain::unit(1, 32), 1.0, 0.5, 1.0).unwrap();
        assert!(matches!(bad.extend(0.2), Err(SdError::JumpOnBoundary)));
    }

    #[test]
    fn isd_det_mismatch_rejected() {
        let dm = Domain::unit(2, 4);
        let sd = StructuredDeformation::affine(
            dm,
            dmatrix![1.0, 0.0; 0.0, 1.0],
            dvector![0.0, 0.0],
            GField::Constant(dmatrix![2.0, 0.0; 0.0, 1.0]),
        )
        .unwrap();
        assert!(sd.into_isd().is_err());
    }
}
