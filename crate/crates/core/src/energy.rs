//! The three energy levels and their limits: the averaged non-local energy
//! of an SBV deformation, the upscaled energy of a structured deformation at
//! fixed horizon `r`, and the localized energy at `r -> 0`, together with the
//! local energy, the coupled total energy, and the reversed-order limit.

use crate::cell;
use crate::density::{BulkDensity, EnergyDensity, SurfaceDensity};
use crate::error::{Result, SdError};
use crate::geom::{Domain, Region};
use crate::kinematics::{SbvFunction, StructuredDeformation};
use crate::measure::{self, Kernel, VectorMeasure};
use nalgebra::DMatrix;

/// Grid plan coupling the outer quadrature to the kernel radius.
#[derive(Debug, Clone)]
pub struct QuadPlan {
    /// Minimum grid cells per kernel radius (>= 4 for quadrature validity).
    pub cells_per_radius: usize,
    /// Lower bound on cells per axis.
    pub min_cells: usize,
    /// Upper bound on cells per axis (guards higher dimensions).
    pub max_cells: usize,
    /// When set, energies are recomputed at doubled resolution and must agree
    /// within this relative tolerance.
    pub check_tol: Option<f64>,
}

impl Default for QuadPlan {
    fn default() -> Self {
        Self { cells_per_radius: 8, min_cells: 32, max_cells: 1 << 14, check_tol: None }
    }
}

impl QuadPlan {
    pub fn with_check(mut self, tol: f64) -> Self {
        self.check_tol = Some(tol);
        self
    }

    /// Per-axis resolution for a given domain and kernel radius.
    pub fn resolution(&self, domain: &Domain, r: f64) -> Result<[usize; 3]> {
        if self.cells_per_radius < 4 {
            return Err(SdError::InvalidDomain("plan needs >= 4 cells per kernel radius".into()));
        }
        let mut res = [1usize; 3];
        for a in 0..domain.dim {
            let need = (domain.side(a) * self.cells_per_radius as f64 / r).ceil() as usize;
            res[a] = need.max(self.min_cells).min(self.max_cells);
        }
        Ok(res)
    }
}

fn scaled_res(res: [usize; 3], factor: usize) -> [usize; 3] {
    [res[0].saturating_mul(factor).max(1), res[1].saturating_mul(factor).max(1), res[2].saturating_mul(factor).max(1)]
}

/// Outer quadrature of `Psi(x, (mu * alpha_r)(x))` over `Omega_r` by
/// per-cell GL4 on a grid of the shrunk box.
fn nonlocal_integral(
    mu: &VectorMeasure,
    psi: &EnergyDensity,
    k: &Kernel,
    body: &Domain,
    res: [usize; 3],
) -> Result<f64> {
    let shrunk = body.shrunk(k.r)?;
    let grid = Domain::new(body.dim, shrunk.lo, shrunk.hi, res)?;
    let mut acc = 0.0;
    for c in 0..grid.cell_count() {
        acc += measure::cell_scalar_integral(&grid, c, &|x| {
            psi.eval(x, &mu.convolve_truncated(k, x))
        });
    }
    Ok(acc)
}

fn with_refinement_check(
    plan: &QuadPlan,
    base: f64,
    refine: impl FnOnce() -> Result<f64>,
) -> Result<f64> {
    if let Some(tol) = plan.check_tol {
        let fine = refine()?;
        let delta = (fine - base).abs() / base.abs().max(1e-12);
        if delta > tol {
            return Err(SdError::QuadratureNotConverged(delta));
        }
        return Ok(fine);
    }
    Ok(base)
}

/// Averaged interfacial energy `E^{alpha_r}(u) = int_{Omega_r} Psi(x, (D^s u * alpha_r)(x)) dx`.
pub fn averaged_energy(u: &SbvFunction, psi: &EnergyDensity, k: &Kernel, plan: &QuadPlan) -> Result<f64> {
    let mu = u.singular_part()?;
    let res = plan.resolution(&u.domain, k.r)?;
    let base = nonlocal_integral(&mu, psi, k, &u.domain, res)?;
    with_refinement_check(plan, base, || nonlocal_integral(&mu, psi, k, &u.domain, scaled_res(res, 2)))
}

/// Upscaled energy `I^{alpha_r}(g, G; Omega_r)`, evaluated directly on the
/// limit measure `mu = (nabla g - G) L^N + D^s g`.
///
/// The measure lives on the deformation's own grid (exact for the supported
/// piecewise-constant disarrangement fields); the plan controls the outer
/// quadrature and the kernel subpanel logic keeps the inner integrals
/// resolved independently of that grid.
pub fn upscaled_energy(sd: &StructuredDeformation, psi: &EnergyDensity, k: &Kernel, plan: &QuadPlan) -> Result<f64> {
    let res = plan.resolution(&sd.domain, k.r)?;
    let mu = sd.limit_measure(sd.domain.res);
    let base = nonlocal_integral(&mu, psi, k, &sd.domain, res)?;
    with_refinement_check(plan, base, || nonlocal_integral(&mu, psi, k, &sd.domain, scaled_res(res, 2)))
}

/// Localized energy
/// `I(g,G) = int_Omega Psi(x, nabla g - G) dx + int_{S_g} Psi^inf(x, [g] (x) nu_g) dH^{N-1}`.
/// For sublinear densities the surface term vanishes identically.
pub fn localized_energy(sd: &StructuredDeformation, psi: &EnergyDensity) -> Result<f64> {
    let grid = &sd.domain;
    let mut acc = 0.0;
    for c in 0..grid.cell_count() {
        acc += measure::cell_scalar_integral(grid, c, &|x| psi.eval(x, &sd.m_at(x)));
    }
    if sd.g_jumps.is_empty() || psi.sublinear {
        return Ok(acc);
    }
    for f in &sd.g_jumps {
        let amp = &f.amplitude;
        let val = measure::facet_scalar_integral(f, grid.dim, Some(&grid.as_box()), &|x| {
            psi.recession_at(x, amp).unwrap_or(f64::NAN)
        });
        if !val.is_finite() {
            return Err(SdError::RecessionUnavailable);
        }
        acc += val;
    }
    Ok(acc)
}

/// Local (Choksi-Fonseca initial) energy
/// `E_L(u) = int_Omega W(x, nabla u) dx + int_{S_u} psi(x, [u], nu_u) dH^{N-1}`.
pub fn local_energy(u: &SbvFunction, w: &BulkDensity, psi_s: &SurfaceDensity) -> Result<f64> {
    // Bulk part: the gradient is piecewise constant; sample on a grid fine
    // enough to resolve the pieces.
    let res = match &u.pieces {
        crate::kinematics::Pieces::TensorGrid { grid, .. } => grid.res,
        crate::kinematics::Pieces::Slabs { breaks, .. } => {
            let n = ((breaks.len() + 1) * 4).clamp(32, 4096);
            [n, n.min(256), n.min(64)]
        }
    };
    let grid = u.domain.with_res(res);
    let vol = grid.cell_volume();
    let mut acc = 0.0;
    for c in 0..grid.cell_count() {
        let x = grid.cell_center(c);
        acc += w.eval(x, &u.grad(x)) * vol;
    }
    for f in u.jump_facets()? {
        let dim = u.domain.dim;
        let lambda = jump_vector(&f.amplitude, f.normal, dim);
        let nu = f.normal;
        acc += measure::facet_scalar_integral(&f, dim, Some(&u.domain.as_box()), &|x| {
            psi_s.eval(x, &lambda, nu)
        });
    }
    Ok(acc)
}

/// Recover the jump vector `lambda` from a rank-one amplitude `lambda (x) nu`.
pub fn jump_vector(amplitude: &DMatrix<f64>, normal: crate::geom::Point, dim: usize) -> nalgebra::DVector<f64> {
    let nv = nalgebra::DVector::from_fn(dim, |i, _| normal[i]);
    amplitude * nv
}

/// Breakdown of the total energy `J(g, G)` (the four integrals of the
/// coupled representation).
#[derive(Debug, Clone)]
pub struct EnergyBreakdown {
    pub bulk_hp: f64,
    pub surface_hp: f64,
    pub bulk_psi: f64,
    pub surface_psi_inf: f64,
    /// Set when the relaxed densities were only bounded from above.
    pub upper_bound_only: bool,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.bulk_hp + self.surface_hp + self.bulk_psi + self.surface_psi_inf
    }
}

#[derive(Debug, Clone)]
pub enum RelaxMode {
    /// Convex `W` with `psi = c |lambda|`: `H_1 = W(x, G) + c ||M||_*`,
    /// `h_1 = psi`.
    ClosedForm,
    /// Laminate competitor search; the result is an upper bound for `J`.
    UpperBound { budget: cell::LaminateBudget },
}

/// Total energy `J(g,G) = int H_p + int_{S_g} h_p + I(g,G)`.
pub fn total_energy(
    sd: &StructuredDeformation,
    w: &BulkDensity,
    psi_s: &SurfaceDensity,
    psi: &EnergyDensity,
    mode: &RelaxMode,
) -> Result<EnergyBreakdown> {
    let grid = &sd.domain;
    let dim = grid.dim;
    let mut bulk_hp = 0.0;
    match mode {
        RelaxMode::ClosedForm => {
            if !w.convex {
                return Err(SdError::NonConvexBulk);
            }
            if !psi_s.bv_elliptic || (psi_s.c_upper - psi_s.c_lower).abs() > 1e-14 {
                return Err(SdError::UnsupportedClosedForm);
            }
            let c = psi_s.c_lower;
            for cidx in 0..grid.cell_count() {
                bulk_hp += measure::cell_scalar_integral(grid, cidx, &|x| {
                    let b = sd.big_g(x);
                    let m = sd.m_at(x);
                    w.eval(x, &b) + c * cell::nuclear_norm(&m)
                });
            }
        }
        RelaxMode::UpperBound { budget } => {
            // Sample H_p by laminate search on a coarse grid.
            let coarse = grid.with_res([4, 4, 4]);
            let vol = coarse.cell_volume();
            for cidx in 0..coarse.cell_count() {
                let x = coarse.cell_center(cidx);
                let problem = cell::CellProblem::bulk(x, sd.grad_g(x), sd.big_g(x), w.clone(), psi_s.clone());
                bulk_hp += cell::laminate_upper_bound(&problem, budget)?.value * vol;
            }
        }
    }
    let mut surface_hp = 0.0;
    for f in &sd.g_jumps {
        let lambda = jump_vector(&f.amplitude, f.normal, dim);
        let nu = f.normal;
        let p = w.p;
        let wc = w.clone();
        let pc = psi_s.clone();
        surface_hp += measure::facet_scalar_integral(f, dim, Some(&grid.as_box()), &|x| {
            cell::surface_density_hp(x, &lambda, nu, p, &wc, &pc)
                .map(|(v, _)| v)
                .unwrap_or(f64::NAN)
        });
        if !surface_hp.is_finite() {
            return Err(SdError::UnsupportedClosedForm);
        }
    }
    let bulk_psi = {
        let mut acc = 0.0;
        for cidx in 0..grid.cell_count() {
            acc += measure::cell_scalar_integral(grid, cidx, &|x| psi.eval(x, &sd.m_at(x)));
        }
        acc
    };
    let mut surface_psi_inf = 0.0;
    if !psi.sublinear {
        for f in &sd.g_jumps {
            let amp = &f.amplitude;
            let val = measure::facet_scalar_integral(f, dim, Some(&grid.as_box()), &|x| {
                psi.recession_at(x, amp).unwrap_or(f64::NAN)
            });
            if !val.is_finite() {
                return Err(SdError::RecessionUnavailable);
            }
            surface_psi_inf += val;
        }
    }
    Ok(EnergyBreakdown {
        bulk_hp,
        surface_hp,
        bulk_psi,
        surface_psi_inf,
        upper_bound_only: matches!(mode, RelaxMode::UpperBound { .. }),
    })
}

/// The total energy at fixed horizon: `J^{alpha_r} = I_L + I^{alpha_r}`,
/// reported with its two parts (the sum rule holds by construction and is
/// asserted by the callers).
#[derive(Debug, Clone)]
pub struct FixedHorizonBreakdown {
    pub bulk_hp: f64,
    pub surface_hp: f64,
    pub nonlocal_r: f64,
}

impl FixedHorizonBreakdown {
    pub fn total(&self) -> f64 {
        self.bulk_hp + self.surface_hp + self.nonlocal_r
    }
}

pub fn total_energy_at_r(
    sd: &StructuredDeformation,
    w: &BulkDensity,
    psi_s: &SurfaceDensity,
    psi: &EnergyDensity,
    k: &Kernel,
    plan: &QuadPlan,
    mode: &RelaxMode,
) -> Result<FixedHorizonBreakdown> {
    let local = total_energy(sd, w, psi_s, psi, mode)?;
    let nonlocal_r = upscaled_energy(sd, psi, k, plan)?;
    Ok(FixedHorizonBreakdown { bulk_hp: local.bulk_hp, surface_hp: local.surface_hp, nonlocal_r })
}

/// Reversed-order limit (`r -> 0` first): the non-local term collapses to
/// `int Psi(x, 0) dx + int_{S_u} Psi^inf(x, [u] (x) nu) dH^{N-1}` on top of
/// the local energy of `u` itself.
#[derive(Debug, Clone)]
pub struct ReversedBreakdown {
    pub local: f64,
    pub psi_zero_bulk: f64,
    pub psi_inf_surface: f64,
}

impl ReversedBreakdown {
    pub fn total(&self) -> f64 {
        self.local + self.psi_zero_bulk + self.psi_inf_surface
    }

    pub fn nonlocal_term(&self) -> f64 {
        self.psi_zero_bulk + self.psi_inf_surface
    }
}

pub fn reversed_limit(
    u: &SbvFunction,
    w: &BulkDensity,
    psi_s: &SurfaceDensity,
    psi: &EnergyDensity,
) -> Result<ReversedBreakdown> {
    let local = local_energy(u, w, psi_s)?;
    let grid = &u.domain;
    let mut psi_zero_bulk = 0.0;
    let zero = DMatrix::zeros(u.d, grid.dim);
    for c in 0..grid.cell_count() {
        psi_zero_bulk += measure::cell_scalar_integral(grid, c, &|x| psi.eval(x, &zero));
    }
    let mut psi_inf_surface = 0.0;
    if !psi.sublinear {
        for f in u.jump_facets()? {
            let amp = f.amplitude.clone();
            let val = measure::facet_scalar_integral(&f, grid.dim, Some(&grid.as_box()), &|x| {
                psi.recession_at(x, &amp).unwrap_or(f64::NAN)
            });
            if !val.is_finite() {
                return Err(SdError::RecessionUnavailable);
            }
            psi_inf_surface += val;
        }
    }
    Ok(ReversedBreakdown { local, psi_zero_bulk, psi_inf_surface })
}

/// 1d analytic reference `int_0^1 Psi(M(x)) dx` (constant-sign jump theory).
pub fn one_d_reference(sd: &StructuredDeformation, psi: &EnergyDensity) -> Result<f64> {
    if sd.domain.dim != 1 {
        return Err(SdError::DimensionMismatch("reference formula is one-dimensional".into()));
    }
    let mut acc = 0.0;
    for c in 0..sd.domain.cell_count() {
        acc += measure::cell_scalar_integral(&sd.domain, c, &|x| psi.eval(x, &sd.m_at(x)));
    }
    Ok(acc)
}

/// Boundary-layer correction `int_{Omega \ Omega_r} Psi(x, (mu_bar * alpha_r)(x)) dx`
/// computed with an extension, together with the chain bound
/// `C_Psi (|Omega \ Omega_r| + |mu_bar|((Omega \ Omega_r)^r))`.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryLayer {
    pub term: f64,
    pub bound: f64,
}

pub fn boundary_layer_term(
    sd: &StructuredDeformation,
    psi: &EnergyDensity,
    k: &Kernel,
    pad: f64,
    plan: &QuadPlan,
) -> Result<BoundaryLayer> {
    if pad < k.r {
        return Err(SdError::InvalidDomain("padding must cover the kernel radius".into()));
    }
    let ext = sd.extend(pad)?;
    let mu_bar = ext.limit_measure(ext.domain.res);
    // Integrate over the shell Omega \ Omega_r with a grid on Omega.
    let inner = sd.domain.shrunk(k.r)?;
    let res_body = plan.resolution(&sd.domain, k.r)?;
    let grid = sd.domain.with_res(res_body);
    let vol = grid.cell_volume();
    let mut buf = DMatrix::zeros(mu_bar.d, sd.domain.dim);
    let mut term = 0.0;
    for c in 0..grid.cell_count() {
        let x = grid.cell_center(c);
        if inner.contains(x) {
            continue;
        }
        mu_bar.convolve_into(k, x, &mut buf);
        term += psi.eval(x, &buf) * vol;
    }
    // (Omega \ Omega_r)^r = Omega^r \ Omega_{2r} for the convex box body.
    let shell_vol = sd.domain.volume() - Region::Box(inner.clone()).volume();
    let outer_tv = mu_bar.total_variation(&Region::Box(sd.domain.as_box()).grown(k.r));
    let inner_tv = match sd.domain.shrunk(2.0 * k.r) {
        Ok(b) => mu_bar.total_variation(&Region::Box(b)),
        Err(_) => 0.0,
    };
    let bound = psi.growth * (shell_vol + (outer_tv - inner_tv));
    Ok(BoundaryLayer { term, bound })
}

/// Non-local energy over the whole body computed with an extension:
/// `int_Omega Psi(x, (mu_bar * alpha_r)(x)) dx`. By construction this equals
/// `I^{alpha_r}(g, G; Omega_r)` plus the boundary-layer correction, and its
/// value is independent of the particular padding (>= r).
pub fn extended_nonlocal_energy(
    sd: &StructuredDeformation,
    psi: &EnergyDensity,
    k: &Kernel,
    pad: f64,
    plan: &QuadPlan,
) -> Result<f64> {
    if pad < k.r {
        return Err(SdError::InvalidDomain("padding must cover the kernel radius".into()));
    }
    let ext = sd.extend(pad)?;
    let mu_bar = ext.limit_measure(ext.domain.res);
    let res = plan.resolution(&sd.domain, k.r)?;
    let grid = sd.domain.with_res(res);
    let mut acc = 0.0;
    for c in 0..grid.cell_count() {
        acc += measure::cell_scalar_integral(&grid, c, &|x| {
            psi.eval(x, &mu_bar.convolve_truncated(k, x))
        });
    }
    Ok(acc)
}

/// One row of an upscaling sweep.
#[derive(Debug, Clone, Copy)]
pub struct UpscalePoint {
    pub n: usize,
    pub averaged: f64,
    pub upscaled: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

/// Sweep `E^{alpha_r}(u_n)` against `I^{alpha_r}(g, G)` over a grid of `n`.
pub fn upscale_sweep(
    sd: &StructuredDeformation,
    build: impl Fn(usize) -> Result<SbvFunction>,
    psi: &EnergyDensity,
    k: &Kernel,
    plan: &QuadPlan,
    ns: &[usize],
) -> Result<Vec<UpscalePoint>> {
    let reference = upscaled_energy(sd, psi, k, plan)?;
    let mut out = Vec::with_capacity(ns.len());
    for &n in ns {
        let u = build(n)?;
        let averaged = averaged_energy(&u, psi, k, plan)?;
        let abs_err = (averaged - reference).abs();
        let rel_err = abs_err / reference.abs().max(1e-300);
        out.push(UpscalePoint { n, averaged, upscaled: reference, abs_err, rel_err });
    }
    Ok(out)
}

/// One row of a localization sweep.
#[derive(Debug, Clone, Copy)]
pub struct LocalizePoint {
    pub r: f64,
    pub cells: usize,
    pub upscaled: f64,
    pub localized: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

/// Sweep `I^{alpha_r}` over decreasing radii with joint grid refinement, against
/// the localized energy restricted to `Omega_r` (per-unit-volume normalized).
pub fn localize_sweep(
    sd: &StructuredDeformation,
    psi: &EnergyDensity,
    profile: crate::measure::Profile,
    radii: &[f64],
    plan: &QuadPlan,
) -> Result<Vec<LocalizePoint>> {
    let localized = localized_energy(sd, psi)?;
    let body_vol = sd.domain.volume();
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let k = Kernel::new(r, sd.domain.dim, profile)?;
        let res = plan.resolution(&sd.domain, r)?;
        let upscaled = upscaled_energy(sd, psi, &k, plan)?;
        let shrunk_vol = Region::Box(sd.domain.shrunk(r)?).volume();
        // Compare per unit volume: Omega_r exhausts Omega as r -> 0.
        let normalized = upscaled / shrunk_vol * body_vol;
        let abs_err = (normalized - localized).abs();
        let rel_err = abs_err / localized.abs().max(1e-300);
        out.push(LocalizePoint { r, cells: res[0], upscaled, localized, abs_err, rel_err });
    }
    Ok(out)
}
