//! Crystallographic kinematics and constitutive constraints: slip systems,
//! composition and factorization of invertible structured deformations,
//! slip-neutrality, additivity of disarrangements, frame indifference, and
//! lattice-periodic energy densities.

use crate::density::{ClassTag, EnergyDensity};
use crate::error::{Result, SdError};
use crate::geom::{Domain, Point};
use crate::kinematics::{GField, SmoothMap, StructuredDeformation};
use nalgebra::{DMatrix, Matrix3, Vector3};
use std::sync::Arc;

/// Orthonormal slip pair `(s, m)` with slip period `p` (order 1e-4: one
/// atomic shift over the active slip-band separation).
#[derive(Debug, Clone)]
pub struct SlipSystem {
    pub s: Vector3<f64>,
    pub m: Vector3<f64>,
    pub period: f64,
}

impl SlipSystem {
    pub fn new(s: Vector3<f64>, m: Vector3<f64>, period: f64) -> Result<Self> {
        if (s.norm() - 1.0).abs() > 1e-12 || (m.norm() - 1.0).abs() > 1e-12 {
            return Err(SdError::DimensionMismatch("slip vectors must be unit".into()));
        }
        if s.dot(&m).abs() > 1e-12 {
            return Err(SdError::DimensionMismatch("slip direction must lie in the slip plane".into()));
        }
        if !(period > 0.0) {
            return Err(SdError::DimensionMismatch("slip period must be positive".into()));
        }
        Ok(Self { s, m, period })
    }

    /// The slip dyad `s (x) m` (traceless by orthogonality).
    pub fn dyad(&self) -> Matrix3<f64> {
        self.s * self.m.transpose()
    }

    /// Lattice generator `p s (x) m`.
    pub fn generator(&self) -> Matrix3<f64> {
        self.dyad() * self.period
    }
}

/// The default slip period (dimensionless, one atomic unit per ~1e4
/// atomic units of slip-band separation).
pub const DEFAULT_PERIOD: f64 = 1e-4;

/// The twelve FCC slip systems: plane normals along the octahedron face
/// normals `(+-1, +-1, +-1)/sqrt(3)` (up to sign), slip directions along the
/// face edges `<110>`.
pub fn fcc_slip_systems() -> Vec<SlipSystem> {
    let s3 = 3f64.sqrt();
    let s2 = 2f64.sqrt();
    let normals = [[1.0, 1.0, 1.0], [-1.0, 1.0, 1.0], [1.0, -1.0, 1.0], [1.0, 1.0, -1.0]];
    let slips = [
        [[1.0, -1.0, 0.0], [0.0, 1.0, -1.0], [-1.0, 0.0, 1.0]],
        [[1.0, 1.0, 0.0], [0.0, 1.0, -1.0], [1.0, 0.0, 1.0]],
        [[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [-1.0, 0.0, 1.0]],
        [[1.0, -1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 1.0]],
    ];
    let mut out = Vec::with_capacity(12);
    for (ni, n) in normals.iter().enumerate() {
        let m = Vector3::new(n[0], n[1], n[2]) / s3;
        for s in &slips[ni] {
            let sv = Vector3::new(s[0], s[1], s[2]) / s2;
            out.push(SlipSystem::new(sv, m, DEFAULT_PERIOD).expect("FCC pairs are orthonormal"));
        }
    }
    out
}

/// Crystallographic state: per-system slip activities (constant fields).
#[derive(Debug, Clone)]
pub struct CrystallographicState {
    pub systems: Vec<SlipSystem>,
    pub gammas: Vec<f64>,
}

impl CrystallographicState {
    pub fn new(systems: Vec<SlipSystem>, gammas: Vec<f64>) -> Result<Self> {
        if systems.len() != gammas.len() {
            return Err(SdError::DimensionMismatch("one activity per slip system".into()));
        }
        Ok(Self { systems, gammas })
    }

    /// Submacroscopic disarrangement `M = sum_a gamma^a s^a (x) m^a`.
    pub fn m_submacro(&self) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for (sys, g) in self.systems.iter().zip(&self.gammas) {
            m += sys.dyad() * *g;
        }
        m
    }

    /// `K = I - sum_a gamma^a s^a (x) m^a`.
    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::identity() - self.m_submacro()
    }
}

#[derive(Debug, Clone)]
pub struct CrystalReport {
    /// `|tr K - 3|` (zero algebraically since every dyad is traceless).
    pub trace_deviation: f64,
    pub det_k: f64,
    /// `det K - 1`.
    pub det_deviation: f64,
    /// For exactly two active systems: the predicted determinant defect
    /// `det K = 1 - gamma_1 gamma_2 (s1 . m2)(s2 . m1)` and the mismatch
    /// between prediction and measurement.
    pub double_slip: Option<DoubleSlipDefect>,
    pub volume_preserving: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct DoubleSlipDefect {
    pub predicted_det: f64,
    pub mismatch: f64,
}

/// Check the crystallographic restrictions on `K`: trace 3 exactly, unit
/// determinant where claimed, with the double-slip defect reported.
pub fn validate_crystallographic(state: &CrystallographicState) -> CrystalReport {
    let k = state.k();
    let trace_deviation = (k.trace() - 3.0).abs();
    let det_k = k.determinant();
    let det_deviation = det_k - 1.0;
    let double_slip = if state.systems.len() == 2 {
        let s1 = &state.systems[0];
        let s2 = &state.systems[1];
        let predicted = 1.0
            - state.gammas[0] * state.gammas[1] * s1.s.dot(&s2.m) * s2.s.dot(&s1.m);
        Some(DoubleSlipDefect { predicted_det: predicted, mismatch: (det_k - predicted).abs() })
    } else {
        None
    };
    CrystalReport {
        trace_deviation,
        det_k,
        det_deviation,
        double_slip,
        volume_preserving: det_deviation.abs() <= 1e-10,
    }
}

/// Two-level shear on a 3d box as an invertible structured deformation.
pub fn two_level_shear(domain: Domain, sys: &SlipSystem, mu: f64, gamma: f64, x0: Point) -> Result<StructuredDeformation> {
    StructuredDeformation::two_level_shear(
        domain,
        [sys.s[0], sys.s[1], sys.s[2]],
        [sys.m[0], sys.m[1], sys.m[2]],
        mu,
        gamma,
        x0,
    )
}

fn to_matrix3(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[(i, j)])
}

fn image_box(sd: &StructuredDeformation) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for corner in crate::measure::box_corners(&sd.domain.as_box(), sd.domain.dim) {
        let y = sd.g_at(corner);
        for a in 0..sd.domain.dim {
            lo[a] = lo[a].min(y[a]);
            hi[a] = hi[a].max(y[a]);
        }
    }
    (lo, hi)
}

/// Composition `(h, H) <> (g, G) = (h o g, (H o g) G)` of invertible
/// structured deformations; the result is verified to be invertible.
pub fn compose(outer: &StructuredDeformation, inner: &StructuredDeformation) -> Result<StructuredDeformation> {
    if !outer.isd || !inner.isd {
        return Err(SdError::IsdViolation("composition requires invertible factors".into()));
    }
    let (lo, hi) = image_box(inner);
    for a in 0..inner.domain.dim {
        if lo[a] < outer.domain.lo[a] - 1e-9 || hi[a] > outer.domain.hi[a] + 1e-9 {
            return Err(SdError::RangeMismatch(format!(
                "image extent [{:.4}, {:.4}] exits the outer domain on axis {a}",
                lo[a], hi[a]
            )));
        }
    }
    let (SmoothMap::Affine { a: ah, b: bh }, SmoothMap::Affine { a: ag, b: bg }) = (&outer.g, &inner.g);
    let a = ah * ag;
    let b = ah * bg + bh;
    let g_field = match (&outer.g_field, &inner.g_field) {
        (GField::Constant(h), GField::Constant(g)) => GField::Constant(h * g),
        _ => {
            let outer_field = outer.g_field.clone();
            let inner_field = inner.g_field.clone();
            let inner_map = inner.g.clone();
            let dim = inner.domain.dim;
            GField::Analytic(Arc::new(move |x: Point| {
                let y = inner_map.eval(x, dim);
                let mut yp = [0.0; 3];
                for i in 0..dim {
                    yp[i] = y[i];
                }
                outer_field.eval(yp) * inner_field.eval(x)
            }))
        }
    };
    StructuredDeformation::new(inner.domain.clone(), SmoothMap::affine(a, b), Vec::new(), g_field)?.into_isd()
}

/// Residual of the factorization `(g, G) = (g, nabla g) <> (i, K)`:
/// the sampled maximum of `|nabla g(x) K(x) - G(x)|`.
pub fn factorization_residual(sd: &StructuredDeformation) -> Result<f64> {
    let probe = sd.domain.with_res([5, 5, 5]);
    let mut worst: f64 = 0.0;
    for c in 0..probe.cell_count() {
        let x = probe.cell_center(c);
        let k = sd.k_at(x)?;
        let recon = sd.grad_g(x) * k;
        worst = worst.max((recon - sd.big_g(x)).norm());
    }
    Ok(worst)
}

/// Is the shear amount an integral multiple of the slip period?
pub fn slip_neutral(mu: f64, sys: &SlipSystem) -> (bool, Option<i64>) {
    let ratio = mu / sys.period;
    let n = ratio.round();
    if (ratio - n).abs() <= 1e-9 {
        (true, Some(n as i64))
    } else {
        (false, None)
    }
}

/// Additivity defect of the disarrangement tensor under composition with a
/// completely neutral two-level shear of amount `mu = n p^a`:
/// `residual = mu s^a (x) (M^T m^a)`. Additivity holds iff `M^T m^a = 0`.
pub fn additivity_residual(m: &Matrix3<f64>, sys: &SlipSystem, mu: f64) -> Result<Matrix3<f64>> {
    let (neutral, _) = slip_neutral(mu, sys);
    if !neutral {
        return Err(SdError::NonNeutralSlip(mu));
    }
    let w = m.transpose() * sys.m;
    Ok((sys.s * w.transpose()) * mu)
}

/// Bounded, Lipschitz, lattice-periodic energy of disarrangements:
/// `Psi_i(M) = rho(dist_F(M, Lambda))` with `Lambda` the integer lattice
/// spanned by the generators `p^a s^a (x) m^a` and `rho(t) = min(t, cap)`.
#[derive(Clone)]
pub struct LatticePsi {
    generators: Vec<Matrix3<f64>>,
    gram_inv: nalgebra::DMatrix<f64>,
    pub cap: f64,
    /// Enumeration window around the least-squares lattice coordinates.
    pub window: i64,
}

impl std::fmt::Debug for LatticePsi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatticePsi")
            .field("generators", &self.generators.len())
            .field("cap", &self.cap)
            .finish()
    }
}

impl LatticePsi {
    pub fn new(systems: &[SlipSystem], cap: f64) -> Result<Self> {
        if systems.is_empty() {
            return Err(SdError::DependentGenerators);
        }
        let gens: Vec<Matrix3<f64>> = systems.iter().map(|s| s.generator()).collect();
        let k = gens.len();
        let mut gram = nalgebra::DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                gram[(i, j)] = gens[i].dot(&gens[j]);
            }
        }
        // Linear independence of the generators (discrete lattice).
        let svd = gram.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin < 1e-10 * smax {
            return Err(SdError::DependentGenerators);
        }
        let gram_inv = gram.try_inverse().ok_or(SdError::DependentGenerators)?;
        Ok(Self { generators: gens, gram_inv, cap, window: 1 })
    }

    /// Distance (Frobenius) from `m` to the generator lattice, enumerated in
    /// a window around the rounded least-squares coordinates.
    pub fn lattice_distance(&self, m: &Matrix3<f64>) -> f64 {
        let k = self.generators.len();
        let proj = nalgebra::DVector::from_fn(k, |i, _| self.generators[i].dot(m));
        let coords = &self.gram_inv * &proj;
        let base: Vec<i64> = (0..k).map(|i| coords[i].round() as i64).collect();
        let w = self.window;
        let mut best = f64::INFINITY;
        let mut offsets = vec![-w; k];
        loop {
            let mut diff = *m;
            for i in 0..k {
                let n = (base[i] + offsets[i]) as f64;
                diff -= self.generators[i] * n;
            }
            best = best.min(diff.norm());
            // Advance the offset multi-index.
            let mut carry = true;
            for slot in offsets.iter_mut() {
                *slot += 1;
                if *slot <= w {
                    carry = false;
                    break;
                }
                *slot = -w;
            }
            if carry {
                break;
            }
        }
        best
    }

    pub fn eval(&self, m: &Matrix3<f64>) -> f64 {
        self.lattice_distance(m).min(self.cap)
    }

    /// Wrap as a registered energy density on 3x3 matrices (class L,
    /// Lipschitz 1, bounded by `cap`, recession zero).
    pub fn into_energy_density(self) -> EnergyDensity {
        let cap = self.cap;
        let me = Arc::new(self);
        EnergyDensity::new(
            "lattice_crystal",
            ClassTag::Both,
            cap.max(1.0),
            Arc::new(move |_, xi: &DMatrix<f64>| me.eval(&to_matrix3(xi))),
        )
        .with_lipschitz(1.0)
        .with_zero_recession()
    }
}

/// Build the canonical lattice-periodic density from a subset of systems.
pub fn lattice_energy(systems: &[SlipSystem], cap: f64) -> Result<LatticePsi> {
    LatticePsi::new(systems, cap)
}

/// Frame-indifference deviation of the disarrangement response: the sampled
/// maximum of `|Psi_i((Q nabla g)^-1 Q M) - Psi_i((nabla g)^-1 M)|` (zero to
/// rounding by the inverse-rotation identity).
pub fn frame_indifference_check(
    psi: &dyn Fn(&Matrix3<f64>) -> f64,
    sd: &StructuredDeformation,
    q: &Matrix3<f64>,
) -> Result<f64> {
    if (q * q.transpose() - Matrix3::identity()).norm() > 1e-10 || (q.determinant() - 1.0).abs() > 1e-10 {
        return Err(SdError::DimensionMismatch("observer change must be a rotation".into()));
    }
    let probe = sd.domain.with_res([4, 4, 4]);
    let mut worst: f64 = 0.0;
    for c in 0..probe.cell_count() {
        let x = probe.cell_center(c);
        let dg = to_matrix3(&sd.grad_g(x));
        let m = to_matrix3(&sd.m_at(x));
        let rotated = (q * dg).try_inverse().ok_or(SdError::SingularGradient(x))? * (q * m);
        let reference = dg.try_inverse().ok_or(SdError::SingularGradient(x))? * m;
        worst = worst.max((psi(&rotated) - psi(&reference)).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct SubspaceMembership {
    pub in_subspace: bool,
    pub s: Vector3<f64>,
    pub xi: f64,
    pub residual: f64,
    pub det_i_minus_m: f64,
}

/// Test membership in the affine family
/// `M = s (x) m^a + xi (m^a x m^b) (x) m^b` with `s` in the slip plane of
/// system `a`; members satisfy `M^T m^a = 0` and `det(I - M) = 1`.
pub fn subspace_membership(m: &Matrix3<f64>, a: &SlipSystem, b: &SlipSystem) -> SubspaceMembership {
    let ma = a.m;
    let mb = b.m;
    let w = ma.cross(&mb);
    let tol = 1e-9 * (1.0 + m.norm());
    let (s, xi) = if w.norm() < 1e-9 {
        // m^b parallel to m^a: the family degenerates to s (x) m^a.
        (m * ma, 0.0)
    } else {
        let cosab = ma.dot(&mb);
        let denom = 1.0 - cosab * cosab;
        let va = (ma - mb * cosab) / denom;
        let vb = (mb - ma * cosab) / denom;
        let s = m * va;
        let xi = (m * vb).dot(&w) / w.norm_squared();
        (s, xi)
    };
    let recon = s * ma.transpose() + (w * mb.transpose()) * xi;
    let residual = (m - recon).norm();
    let det = (Matrix3::identity() - m).determinant();
    let in_subspace = residual <= tol && s.dot(&ma).abs() <= tol && (det - 1.0).abs() <= 1e-9;
    SubspaceMembership { in_subspace, s, xi, residual, det_i_minus_m: det }
}

/// Maximum deviation of `Psi_i` under the slip-periodicity shifts
/// `s -> s + n p^a s^a` on the subspace of system `a` (with the cross-slip
/// offset `xi (m^a x m^b) (x) m^b`), over a grid of in-plane `s` and
/// `n in {-2..2}`.
pub fn periodicity_check(
    psi: &dyn Fn(&Matrix3<f64>) -> f64,
    a: &SlipSystem,
    b: &SlipSystem,
    xi: f64,
    s_samples: usize,
) -> f64 {
    let w = a.m.cross(&b.m);
    let offset = (w * b.m.transpose()) * xi;
    // Orthonormal basis of the slip plane of system a.
    let t0 = a.s;
    let t1 = a.m.cross(&a.s);
    let mut worst: f64 = 0.0;
    for i in 0..s_samples {
        for j in 0..s_samples {
            let c0 = (i as f64 / (s_samples.max(2) - 1) as f64 - 0.5) * 4.0 * a.period;
            let c1 = (j as f64 / (s_samples.max(2) - 1) as f64 - 0.5) * 4.0 * a.period;
            let s = t0 * c0 + t1 * c1;
            let base = s * a.m.transpose() + offset;
            let reference = psi(&base);
            for n in [-2i32, -1, 0, 1, 2] {
                let shifted = (s + a.s * (n as f64 * a.period)) * a.m.transpose() + offset;
                worst = worst.max((psi(&shifted) - reference).abs());
            }
        }
    }
    worst
}

/// Naive per-system resolved-slip density (periodic in each resolved
/// component separately, but not under the lattice shifts): the documented
/// negative control for the periodicity battery.
pub fn naive_sine_psi(systems: Vec<SlipSystem>) -> impl Fn(&Matrix3<f64>) -> f64 {
    move |m: &Matrix3<f64>| {
        systems
            .iter()
            .map(|sys| {
                let resolved = sys.s.dot(&(m * sys.m));
                let v = (std::f64::consts::PI * resolved / sys.period).sin();
                v * v
            })
            .sum()
    }
}

/// Deterministic pseudo-random rotation from a seed (for battery tests).
pub fn random_rotation(seed: u64) -> Matrix3<f64> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0f64));
    let qr = g.qr();
    let mut q = qr.q();
    if q.determinant() < 0.0 {
        let col = -q.column(0);
        q.set_column(0, &col);
    }
    q
}
