//! Energy density registry: non-local densities with class (E)/(L) metadata
//! and recession functions, surface densities for interfacial energy, and
//! bulk densities for the local energy.
//!
//! Class (E): the ratio `Psi(x', t xi')/t` converges as `t -> inf` uniformly
//! over the closed body and the unit sphere of matrices. Class (L): Lipschitz
//! in the matrix argument with a spatial modulus of continuity. The two
//! classes overlap but neither contains the other; the registry carries both
//! counterexamples.

use crate::error::{Result, SdError};
use crate::geom::Point;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub type MatrixFn = Arc<dyn Fn(Point, &DMatrix<f64>) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassTag {
    E,
    L,
    Both,
    Neither,
}

impl ClassTag {
    pub fn is_e(&self) -> bool {
        matches!(self, ClassTag::E | ClassTag::Both)
    }
    pub fn is_l(&self) -> bool {
        matches!(self, ClassTag::L | ClassTag::Both)
    }
}

/// Non-local energy density `Psi(x, xi)` with declared metadata.
#[derive(Clone)]
pub struct EnergyDensity {
    pub name: String,
    pub class: ClassTag,
    /// Linear-growth constant: `Psi(x, xi) <= growth (1 + |xi|)`.
    pub growth: f64,
    /// Declared Lipschitz constant in the matrix argument (class L).
    pub lipschitz: Option<f64>,
    /// `true` when the recession function vanishes identically.
    pub sublinear: bool,
    eval: MatrixFn,
    /// Analytic recession function, positively 1-homogeneous in `xi`.
    recession: Option<MatrixFn>,
}

impl std::fmt::Debug for EnergyDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnergyDensity")
            .field("name", &self.name)
            .field("class", &self.class)
            .field("growth", &self.growth)
            .finish()
    }
}

impl EnergyDensity {
    pub fn new(name: impl Into<String>, class: ClassTag, growth: f64, eval: MatrixFn) -> Self {
        Self { name: name.into(), class, growth, lipschitz: None, sublinear: false, eval, recession: None }
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn with_recession(mut self, rec: MatrixFn) -> Self {
        self.recession = Some(rec);
        self
    }

    pub fn with_zero_recession(mut self) -> Self {
        self.sublinear = true;
        self.recession = Some(Arc::new(|_, _| 0.0));
        self
    }

    pub fn eval(&self, x: Point, xi: &DMatrix<f64>) -> f64 {
        (self.eval)(x, xi)
    }

    pub fn has_analytic_recession(&self) -> bool {
        self.recession.is_some()
    }

    /// Recession value `Psi^inf(x, xi)`: analytic when registered, otherwise
    /// a numeric tail estimate (documented as an estimate).
    pub fn recession_at(&self, x: Point, xi: &DMatrix<f64>) -> Result<f64> {
        if let Some(rec) = &self.recession {
            return Ok(rec(x, xi));
        }
        self.numeric_recession(x, xi, 10)
    }

    /// Tail estimate of the recession function: maximum of `Psi(x, t xi)/t`
    /// over the last eight points of the geometric grid `t = 2^k`,
    /// `k = k0..=40`, applied on the unit sphere and extended 1-homogeneously.
    pub fn numeric_recession(&self, x: Point, xi: &DMatrix<f64>, k0: u32) -> Result<f64> {
        let norm = xi.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let unit = xi / norm;
        let mut ratios = Vec::with_capacity(31);
        for k in k0..=40 {
            let t = 2f64.powi(k as i32);
            let scaled = &unit * t;
            ratios.push(self.eval(x, &scaled) / t);
        }
        // Linear growth bound: reject clearly divergent ratios.
        let last = ratios[ratios.len() - 1];
        if !last.is_finite() || last > 4.0 * self.growth + 1.0 {
            return Err(SdError::RecessionDiverges);
        }
        let tail = &ratios[ratios.len() - 8..];
        Ok(norm * tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Interfacial energy density `psi(x, lambda, nu)` with `(psi1)` constants.
#[derive(Clone)]
pub struct SurfaceDensity {
    pub name: String,
    /// Lower and upper `(psi1)` constants: `c|lambda| <= psi <= C|lambda|`.
    pub c_lower: f64,
    pub c_upper: f64,
    /// Declared subadditive + positively 1-homogeneous (BV-elliptic candidates).
    pub bv_elliptic: bool,
    eval: Arc<dyn Fn(Point, &DVector<f64>, Point) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for SurfaceDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SurfaceDensity").field("name", &self.name).finish()
    }
}

impl SurfaceDensity {
    pub fn eval(&self, x: Point, lambda: &DVector<f64>, nu: Point) -> f64 {
        (self.eval)(x, lambda, nu)
    }
}

/// Bulk energy density `W(x, A)` for the local energy.
#[derive(Clone)]
pub struct BulkDensity {
    pub name: String,
    pub p: f64,
    pub convex: bool,
    /// `(W1)_p` constant.
    pub growth: f64,
    eval: MatrixFn,
    recession: Option<MatrixFn>,
}

impl std::fmt::Debug for BulkDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BulkDensity").field("name", &self.name).field("p", &self.p).finish()
    }
}

impl BulkDensity {
    pub fn eval(&self, x: Point, a: &DMatrix<f64>) -> f64 {
        (self.eval)(x, a)
    }

    /// Recession `W^inf(x, A)`; needed by the `p = 1` surface cell formula.
    pub fn recession_at(&self, x: Point, a: &DMatrix<f64>) -> Result<f64> {
        if let Some(rec) = &self.recession {
            return Ok(rec(x, a));
        }
        let norm = a.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let unit = a / norm;
        let mut best = f64::NEG_INFINITY;
        for k in 33..=40 {
            let t = 2f64.powi(k);
            best = best.max(self.eval(x, &(&unit * t)) / t);
        }
        if !best.is_finite() {
            return Err(SdError::RecessionDiverges);
        }
        Ok(norm * best)
    }
}

/// Sample plan for the hypothesis validators: seeded, finite nets.
#[derive(Debug, Clone)]
pub struct SamplePlan {
    pub seed: u64,
    pub dim: usize,
    pub d: usize,
    pub matrix_samples: usize,
    pub point_samples: usize,
    pub scale: f64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        Self { seed: 17, dim: 1, d: 1, matrix_samples: 64, point_samples: 8, scale: 4.0 }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize, n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(d, n, |_, _| rng.random_range(-scale..scale))
}

#[derive(Debug, Clone)]
pub struct ClassLReport {
    pub lipschitz_estimate: f64,
    pub spatial_modulus_estimate: f64,
    pub pass: bool,
}

/// Estimate the Lipschitz constant (matrix argument) and spatial modulus by
/// sampled difference quotients; pass when within the declared constant x1.05.
/// A sampler, not a prover.
pub fn validate_class_l(phi: &EnergyDensity, plan: &SamplePlan) -> ClassLReport {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut lip: f64 = 0.0;
    for _ in 0..plan.matrix_samples {
        let a = random_matrix(&mut rng, plan.d, plan.dim, plan.scale);
        let mut b = a.clone();
        let i = rng.random_range(0..plan.d);
        let j = rng.random_range(0..plan.dim);
        let step = 10f64.powi(rng.random_range(-6..0));
        b[(i, j)] += step;
        let x = [rng.random_range(0.0..1.0), 0.0, 0.0];
        let q = (phi.eval(x, &b) - phi.eval(x, &a)).abs() / step;
        lip = lip.max(q);
        // Also probe the large-argument regime where Lipschitz bounds fail
        // for super-linear densities.
        let big = &a * 1e4;
        let mut big2 = big.clone();
        big2[(i, j)] += step;
        let qb = (phi.eval(x, &big2) - phi.eval(x, &big)).abs() / step;
        lip = lip.max(qb);
    }
    let mut modulus: f64 = 0.0;
    for _ in 0..plan.point_samples {
        let a = random_matrix(&mut rng, plan.d, plan.dim, plan.scale);
        let x = [rng.random_range(0.0..0.5), 0.0, 0.0];
        let x2 = [x[0] + 1e-3, 0.0, 0.0];
        let dv = (phi.eval(x, &a) - phi.eval(x2, &a)).abs() / (1.0 + a.norm());
        modulus = modulus.max(dv);
    }
    let pass = match phi.lipschitz {
        Some(l) => lip <= l * 1.05,
        None => false,
    };
    ClassLReport { lipschitz_estimate: lip, spatial_modulus_estimate: modulus, pass }
}

#[derive(Debug, Clone)]
pub struct ClassEReport {
    pub tail_oscillation: f64,
    pub pass: bool,
}

/// Probe uniform convergence of `Psi(x', t xi')/t` over a finite net of
/// directions and a geometric tail of `t`; pass when the tail oscillation of
/// the ratio stays below `tol`. Sampled evidence only: the class requires
/// uniformity on the full compact, which a finite net cannot certify.
pub fn validate_class_e(phi: &EnergyDensity, plan: &SamplePlan, tol: f64) -> ClassEReport {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x9e37_79b9);
    let mut directions = Vec::new();
    for _ in 0..plan.matrix_samples.min(32) {
        let a = random_matrix(&mut rng, plan.d, plan.dim, 1.0);
        let nrm = a.norm();
        if nrm > 1e-9 {
            directions.push(a / nrm);
        }
    }
    let x = [0.3, 0.0, 0.0];
    let mut osc: f64 = 0.0;
    for dir in &directions {
        let mut prev: Option<f64> = None;
        for k in 16..=34 {
            let t = 2f64.powi(k);
            // Probe a small neighborhood in t to catch densities whose ratio
            // oscillates between scales (the sawtooth counterexample).
            for mult in [1.0, 1.31, 1.77] {
                let tt = t * mult;
                let ratio = phi.eval(x, &(dir * tt)) / tt;
                if let Some(p) = prev {
                    osc = osc.max((ratio - p).abs());
                }
                prev = Some(ratio);
            }
        }
    }
    ClassEReport { tail_oscillation: osc, pass: osc < tol }
}

/// The recursive breakpoints of the sawtooth counterexample:
/// `xi_1 = 1`, `xi_{n+1} = 2 n xi_n` (1, 2, 8, 48, 384, ...).
pub fn sawtooth_breakpoints(upto: f64) -> Vec<f64> {
    let mut xs = vec![1.0f64];
    let mut n = 1u32;
    while *xs.last().unwrap() < upto && xs.len() < 256 {
        let next = 2.0 * n as f64 * xs.last().unwrap();
        if !next.is_finite() {
            break;
        }
        xs.push(next);
        n += 1;
    }
    xs
}

pub fn sawtooth_eval(xi: f64) -> f64 {
    let x = xi.abs();
    if x <= 1.0 {
        return 0.0;
    }
    let bps = sawtooth_breakpoints(x * 2.0 + 4.0);
    for w in bps.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if x >= lo && x <= hi {
            let mid = 0.5 * (lo + hi);
            return if x <= mid { x - lo } else { hi - x };
        }
    }
    // Beyond representable breakpoints the profile keeps oscillating; the
    // closest lower breakpoint dominates.
    x - bps.last().unwrap()
}

fn sqrt_periodic_eval(xi: f64) -> f64 {
    // sqrt(1 - u^2) on [-1, 1], extended with period 2.
    let u = xi - 2.0 * (xi / 2.0).round();
    (1.0 - u * u).max(0.0).sqrt()
}

/// Parameters for builtin densities taken from a CLI config.
#[derive(Debug, Clone, Default)]
pub struct DensityParams {
    pub period: Option<f64>,
    pub c: Option<f64>,
}

pub enum Builtin {
    Energy(EnergyDensity),
    Surface(SurfaceDensity),
    Bulk(BulkDensity),
}

/// Builtin registry. Names: `abs`, `frobenius`, `sin2_periodic`,
/// `sawtooth_remark`, `sqrt_periodic_remark`, `quadratic_W`, `area_W`,
/// `c_abs_psi`.
pub fn builtin(name: &str, params: &DensityParams) -> Result<Builtin> {
    match name {
        "abs" | "frobenius" => Ok(Builtin::Energy(frobenius_density())),
        "sin2_periodic" => {
            let p = params.period.unwrap_or(1.0);
            if !(p > 0.0) {
                return Err(SdError::UnknownDensity("sin2_periodic needs period > 0".into()));
            }
            Ok(Builtin::Energy(sin2_periodic(p)))
        }
        "sawtooth_remark" => Ok(Builtin::Energy(sawtooth_density())),
        "sqrt_periodic_remark" => Ok(Builtin::Energy(sqrt_periodic_density())),
        "quadratic_W" => Ok(Builtin::Bulk(quadratic_bulk())),
        "area_W" => Ok(Builtin::Bulk(area_bulk())),
        "c_abs_psi" => Ok(Builtin::Surface(c_abs_surface(params.c.unwrap_or(1.0)))),
        other => Err(SdError::UnknownDensity(other.into())),
    }
}

/// `Psi(xi) = |xi|_F`: 1-homogeneous, in both classes, its own recession.
pub fn frobenius_density() -> EnergyDensity {
    EnergyDensity::new("frobenius", ClassTag::Both, 1.0, Arc::new(|_, xi| xi.norm()))
        .with_lipschitz(1.0)
        .with_recession(Arc::new(|_, xi| xi.norm()))
}

/// Bounded oscillatory density `sin^2(pi |xi| / p)`; sublinear, both classes.
pub fn sin2_periodic(period: f64) -> EnergyDensity {
    let p = period;
    EnergyDensity::new(
        format!("sin2_periodic({p})"),
        ClassTag::Both,
        1.0,
        Arc::new(move |_, xi| {
            let s = (std::f64::consts::PI * xi.norm() / p).sin();
            s * s
        }),
    )
    .with_lipschitz(std::f64::consts::PI / period)
    .with_zero_recession()
}

/// The (L) \ (E) sawtooth: slope +-1 teeth between recursively spaced
/// breakpoints, so the ratio `Psi(t)/t` oscillates forever.
pub fn sawtooth_density() -> EnergyDensity {
    EnergyDensity::new("sawtooth_remark", ClassTag::L, 1.0, Arc::new(|_, xi| sawtooth_eval(xi.norm())))
        .with_lipschitz(1.0)
        // limsup of the ratio along midpoints is 1, so the recession is the norm.
        .with_recession(Arc::new(|_, xi| xi.norm()))
}

/// The (E) \ (L) density: `sqrt(1 - xi^2)` on [-1, 1] extended 2-periodically.
/// Bounded (recession 0) but with unbounded slope at the gluing points.
pub fn sqrt_periodic_density() -> EnergyDensity {
    EnergyDensity::new("sqrt_periodic_remark", ClassTag::E, 1.0, Arc::new(|_, xi| sqrt_periodic_eval(xi.norm())))
        .with_zero_recession()
}

/// `W(A) = |A|_F^2`, convex, p = 2.
pub fn quadratic_bulk() -> BulkDensity {
    BulkDensity {
        name: "quadratic_W".into(),
        p: 2.0,
        convex: true,
        growth: 1.0,
        eval: Arc::new(|_, a| a.norm_squared()),
        recession: None,
    }
}

/// `W(A) = sqrt(1 + |A|_F^2)`, convex with linear growth; the p = 1 workhorse.
pub fn area_bulk() -> BulkDensity {
    BulkDensity {
        name: "area_W".into(),
        p: 1.0,
        convex: true,
        growth: 1.0,
        eval: Arc::new(|_, a| (1.0 + a.norm_squared()).sqrt()),
        recession: Some(Arc::new(|_, a| a.norm())),
    }
}

/// `psi(lambda) = c |lambda|`: satisfies (psi1)-(psi4) with both constants c.
pub fn c_abs_surface(c: f64) -> SurfaceDensity {
    SurfaceDensity {
        name: format!("c_abs_psi({c})"),
        c_lower: c,
        c_upper: c,
        bv_elliptic: true,
        eval: Arc::new(move |_, lambda, _| c * lambda.norm()),
    }
}
