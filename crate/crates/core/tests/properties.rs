//! Property and oracle suites: kernel mass, convolution against brute-force
//! quadrature, set-function oracles, weak-* and bracket-norm convergence of
//! mollified measures, staircase admissibility, and the fixed-horizon sum
//! rule.

use nalgebra::{dmatrix, dvector, DMatrix};
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdlab_core::density::{frobenius_density, sin2_periodic};
use sdlab_core::energy::{self, QuadPlan};
use sdlab_core::kinematics::{deck_of_cards, staircase_approximation, GField, StructuredDeformation};
use sdlab_core::measure::{mass_bound_check, Profile};
use sdlab_core::quad;
use sdlab_core::{BoxRegion, Domain, Facet, Kernel, Region, VectorMeasure};

fn random_measure_1d(seed: u64, cells: usize, n_facets: usize) -> VectorMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = Domain::unit(1, cells);
    let amp = rng.random_range(0.5..2.0);
    let freq = rng.random_range(1.0..7.0);
    let phase = rng.random_range(0.0..6.28);
    let mut mu = VectorMeasure::from_density(domain, 1, |x| {
        DMatrix::from_element(1, 1, amp * (freq * x[0] + phase).sin() + 0.3)
    });
    for _ in 0..n_facets {
        let z = rng.random_range(0.15..0.85);
        let lam = rng.random_range(-1.5..1.5f64);
        mu.push_facet(Facet::atom(z, &dvector![lam])).unwrap();
    }
    mu
}

fn random_measure_2d(seed: u64, cells: usize, n_facets: usize) -> VectorMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = Domain::unit(2, cells);
    let a = rng.random_range(0.3..1.5);
    let b = rng.random_range(0.3..1.5);
    let mut mu = VectorMeasure::from_density(domain, 2, |x| {
        DMatrix::from_fn(2, 2, |i, j| {
            a * ((i + 1) as f64 * x[0] + (j + 1) as f64 * x[1]).sin() + b * 0.2
        })
    });
    for _ in 0..n_facets {
        let axis = rng.random_range(0..2usize);
        let mut normal = [0.0; 3];
        normal[axis] = 1.0;
        let mut center = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), 0.0];
        center[1 - axis] = 0.5;
        let extent = rng.random_range(0.2..0.5);
        let lam = dvector![rng.random_range(-1.0..1.0f64), rng.random_range(-1.0..1.0f64)];
        mu.push_facet(Facet::from_jump(2, center, normal, [extent, 1.0], &lam).unwrap()).unwrap();
    }
    mu
}

#[test]
fn kernel_mass_across_radii_and_dims() {
    for dim in 1..=3usize {
        for &r in &[1.0, 0.1, 0.01] {
            for profile in [Profile::Bump, Profile::BumpSharp] {
                let k = Kernel::new(r, dim, profile).unwrap();
                let mass = k.mass_numeric(1e-12);
                assert!(
                    (mass - 1.0).abs() <= 1e-10,
                    "dim {dim}, r {r}, {:?}: mass error {:e}",
                    profile,
                    (mass - 1.0).abs()
                );
            }
        }
    }
}

#[test]
fn convolution_matches_brute_force_quadrature() {
    // Production convolution against a refinement-doubling Riemann oracle.
    let mu = random_measure_1d(42, 64, 3);
    let k = Kernel::new(0.12, 1, Profile::Bump).unwrap();
    let h = 1.0 / 64.0;
    for &x in &[0.3, 0.5, 0.71] {
        let v = mu.convolve(&k, [x, 0.0, 0.0]).unwrap()[(0, 0)];
        // Oracle: midpoint over the ac grid cells (piecewise-constant density
        // integrated by dense sampling), plus exact atom evaluations.
        let run = quad::refine_doubling(4, 1e-11, 22, |sub| {
            let mut acc = 0.0;
            for c in 0..64 {
                let m = mu.ac_matrix(c)[(0, 0)];
                let lo = c as f64 * h;
                for s in 0..sub {
                    let y = lo + (s as f64 + 0.5) * h / sub as f64;
                    acc += m * k.eval([x - y, 0.0, 0.0]) * h / sub as f64;
                }
            }
            acc
        });
        assert!(run.converged);
        let mut oracle = run.value;
        for f in &mu.facets {
            oracle += f.amplitude[(0, 0)] * k.eval([x - f.center[0], 0.0, 0.0]);
        }
        assert!((v - oracle).abs() < 1e-8, "x = {x}: {:e}", (v - oracle).abs());
    }
}

#[test]
fn convolution_matches_brute_force_quadrature_2d_facets() {
    let domain = Domain::unit(2, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mu = VectorMeasure::zero(domain, 2);
    for axis in 0..2usize {
        let mut normal = [0.0; 3];
        normal[axis] = 1.0;
        let lam = dvector![rng.random_range(-1.0..1.0f64), rng.random_range(-1.0..1.0f64)];
        let mut center = [0.45, 0.55, 0.0];
        center[axis] += 0.02;
        mu.push_facet(Facet::from_jump(2, center, normal, [0.4, 1.0], &lam).unwrap()).unwrap();
    }
    let k = Kernel::new(0.15, 2, Profile::Bump).unwrap();
    let x = [0.5, 0.5, 0.0];
    let v = mu.convolve(&k, x).unwrap();
    // Dense brute-force over each segment facet.
    let mut oracle = DMatrix::zeros(2, 2);
    for f in &mu.facets {
        let run = quad::refine_doubling(64, 1e-12, 18, |m| {
            let mut acc = 0.0;
            for s in 0..m {
                let u = -0.5 + (s as f64 + 0.5) / m as f64;
                let y = f.point_at(2, u, 0.0);
                acc += k.eval([x[0] - y[0], x[1] - y[1], 0.0]) * f.extent[0] / m as f64;
            }
            acc
        });
        assert!(run.converged);
        oracle += &f.amplitude * run.value;
    }
    let gap = (v - oracle).norm();
    assert!(gap < 1e-8, "{gap:e}");
}

#[test]
fn set_functions_match_doubling_oracles() {
    let mu = random_measure_1d(11, 128, 2);
    let a = BoxRegion::new(1, [0.2, 0.0, 0.0], [0.9, 0.0, 0.0]);
    let region = Region::Box(a.clone());
    let tv = mu.total_variation(&region);
    let bn = mu.bracket_norm(&region);
    // Oracles: dense midpoint over the piecewise-constant density.
    let h = 1.0 / 128.0;
    let dense = |f: &dyn Fn(f64) -> f64, sub: usize| -> f64 {
        let mut acc = 0.0;
        for c in 0..128 {
            let lo = c as f64 * h;
            for s in 0..sub {
                let y = lo + (s as f64 + 0.5) * h / sub as f64;
                if y > 0.2 && y < 0.9 {
                    acc += f(y) * h / sub as f64;
                }
            }
        }
        acc
    };
    let mval = |y: f64| {
        let c = ((y * 128.0) as usize).min(127);
        mu.ac_matrix(c)[(0, 0)]
    };
    let tv_run = quad::refine_doubling(8, 1e-10, 18, |s| dense(&|y| mval(y).abs(), s));
    let bn_run = quad::refine_doubling(8, 1e-10, 18, |s| dense(&|y| (1.0 + mval(y) * mval(y)).sqrt(), s));
    let mut tv_oracle = tv_run.value;
    let mut bn_oracle = bn_run.value;
    for f in &mu.facets {
        if f.center[0] > 0.2 && f.center[0] < 0.9 {
            tv_oracle += f.amplitude_norm();
            bn_oracle += f.amplitude_norm();
        }
    }
    assert!((tv - tv_oracle).abs() < 1e-8, "tv {:e}", (tv - tv_oracle).abs());
    assert!((bn - bn_oracle).abs() < 1e-8, "bn {:e}", (bn - bn_oracle).abs());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prop_mass_bound_1d(seed in 0u64..5000, r in 0.05f64..0.2, lo in 0.25f64..0.45, width in 0.1f64..0.3) {
        let mu = random_measure_1d(seed, 64, 2);
        let k = Kernel::new(r, 1, Profile::Bump).unwrap();
        let a = BoxRegion::new(1, [lo, 0.0, 0.0], [lo + width, 0.0, 0.0]);
        let mb = mass_bound_check(&mu, &k, &a, 1e-6).unwrap();
        prop_assert!(mb.ok, "lhs = {}, rhs = {}", mb.lhs, mb.rhs);
    }

    #[test]
    fn prop_convolution_linearity(seed in 0u64..5000, x in 0.25f64..0.75) {
        let mu1 = random_measure_1d(seed, 32, 1);
        let mu2 = random_measure_1d(seed.wrapping_add(77), 32, 2);
        let k = Kernel::new(0.2, 1, Profile::Bump).unwrap();
        let p = [x, 0.0, 0.0];
        let sum = mu1.add(&mu2).unwrap();
        let lhs = sum.convolve(&k, p).unwrap();
        let rhs = mu1.convolve(&k, p).unwrap() + mu2.convolve(&k, p).unwrap();
        prop_assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn prop_bracket_norm_bounds(seed in 0u64..5000) {
        // |A| <= <mu>(A) <= |A| + |mu|(A).
        let mu = random_measure_1d(seed, 32, 2);
        let a = Region::Box(BoxRegion::new(1, [0.1, 0.0, 0.0], [0.8, 0.0, 0.0]));
        let bn = mu.bracket_norm(&a);
        let tv = mu.total_variation(&a);
        prop_assert!(bn >= 0.7 - 1e-12);
        prop_assert!(bn <= 0.7 + tv + 1e-12);
    }

    #[test]
    fn prop_nuclear_norm_triangle(a00 in -2.0f64..2.0, a01 in -2.0f64..2.0, a10 in -2.0f64..2.0, a11 in -2.0f64..2.0) {
        use sdlab_core::cell::nuclear_norm;
        let m1 = dmatrix![a00, a01; a10, a11];
        let m2 = dmatrix![a11, a10; a01, a00];
        let sum = &m1 + &m2;
        prop_assert!(nuclear_norm(&sum) <= nuclear_norm(&m1) + nuclear_norm(&m2) + 1e-10);
        // Frobenius lower bound.
        prop_assert!(nuclear_norm(&m1) >= m1.norm() - 1e-12);
    }
}

#[test]
fn weak_star_consistency_under_mollification() {
    // Thm-style check: int phi d((mu * alpha_r) L) -> int phi d mu as r -> 0,
    // for a battery of compactly supported smooth fields.
    let mu = random_measure_1d(3, 256, 3);
    let hat = |x: f64, c: f64, w: f64| -> f64 {
        let u = (x - c) / w;
        if u.abs() >= 1.0 {
            0.0
        } else {
            (1.0 / (u * u - 1.0)).exp() * (1.0 / (1.0f64).exp().recip())
        }
    };
    let battery: Vec<Box<dyn Fn([f64; 3]) -> f64>> = vec![
        Box::new(move |x| hat(x[0], 0.5, 0.45)),
        Box::new(move |x| hat(x[0], 0.45, 0.4) * (3.0 * x[0]).cos()),
        Box::new(move |x| hat(x[0], 0.55, 0.35) * x[0]),
    ];
    let tv_all = mu.total_variation(&Region::Box(mu.domain.as_box()));
    for phi in &battery {
        let exact = mu.pair_scalar(&|x| phi(x))[(0, 0)];
        let scale: f64 = {
            // int |phi| d|mu| >= |int phi dmu|; a safe normalization.
            tv_all.max(1e-6)
        };
        let mut prev = f64::INFINITY;
        let mut last = f64::INFINITY;
        for &r in &[0.2, 0.1, 0.05, 0.025] {
            let k = Kernel::new(r, 1, Profile::Bump).unwrap();
            let cells = ((8.0 / r) as usize).max(256);
            let approx = mu.pair_scalar_mollified(&k, &|x| phi(x), [cells, 1, 1])[(0, 0)];
            let err = (approx - exact).abs();
            assert!(err <= prev * 1.5 + 1e-12, "error not decreasing: {err} after {prev}");
            prev = err;
            last = err;
        }
        assert!(last < 0.01 * scale, "final error {last} vs scale {scale}");
    }
}

#[test]
fn bracket_norm_strict_convergence_1d() {
    for seed in [1u64, 2, 3] {
        let mu = random_measure_1d(seed, 256, 2);
        let target = mu.bracket_norm(&Region::Box(mu.domain.as_box()));
        let mut errors = Vec::new();
        for &r in &[0.1, 0.05, 0.025, 0.0125] {
            let k = Kernel::new(r, 1, Profile::Bump).unwrap();
            let cells = ((12.0 / r) as usize).max(512);
            let val = mu.bracket_norm_mollified(&k, [cells, 1, 1]);
            errors.push((val - target).abs() / target);
        }
        assert!(errors.last().unwrap() < &0.05, "relative errors {errors:?}");
    }
}

#[test]
fn staircase_admissibility_weak_star_residual() {
    // |int phi d(D^s u_n) - int phi d((grad g - G) L + D^s g)| shrinks below
    // 1% of the measure scale for n >= 64.
    let dm = Domain::unit(1, 64);
    let sd = StructuredDeformation::two_level_shear(dm, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.7, 0.3, [0.0; 3]).unwrap();
    let mu = sd.limit_measure([64, 1, 1]);
    let scale = mu.total_variation(&Region::Box(mu.domain.as_box()));
    // Compactly supported fields (the weak-* test class).
    let hat = |x: f64| -> f64 {
        let u = (x - 0.5) / 0.48;
        if u.abs() >= 1.0 {
            0.0
        } else {
            (1.0 / (u * u - 1.0)).exp() * std::f64::consts::E
        }
    };
    let battery: Vec<Box<dyn Fn([f64; 3]) -> f64>> = vec![
        Box::new(move |x| hat(x[0])),
        Box::new(move |x| hat(x[0]) * (2.0 * x[0]).sin()),
        Box::new(move |x| hat(x[0]) / (1.0 + x[0])),
    ];
    let residual_at = |n: usize| -> f64 {
        let u = staircase_approximation(&sd, n).unwrap();
        let ds = u.singular_part().unwrap();
        battery
            .iter()
            .map(|phi| (ds.pair_scalar(&|x| phi(x)) - mu.pair_scalar(&|x| phi(x))).norm())
            .fold(0.0f64, f64::max)
    };
    let r16 = residual_at(16);
    let r64 = residual_at(64);
    let r256 = residual_at(256);
    assert!(r64 < r16 && r256 < r64, "residuals {r16} {r64} {r256}");
    assert!(r64 < 0.01 * scale, "residual at n = 64: {r64} vs scale {scale}");
}

#[test]
fn staircase_2d_weak_star_residual() {
    let dm = Domain::unit(2, 64);
    let a = dmatrix![1.0, 0.8; 0.0, 1.0];
    let g_val = dmatrix![1.0, 0.3; 0.0, 1.0];
    let sd = StructuredDeformation::affine(dm, a, dvector![0.0, 0.0], GField::Constant(g_val)).unwrap();
    let mu = sd.limit_measure([32, 32, 1]);
    let scale = mu.total_variation(&Region::Box(mu.domain.as_box()));
    let phi = |x: [f64; 3]| (x[0] + 2.0 * x[1]).sin();
    let exact = mu.pair_scalar(&phi);
    let mut prev = f64::INFINITY;
    for n in [8usize, 16, 32, 64] {
        let u = staircase_approximation(&sd, n).unwrap();
        let ds = u.singular_part().unwrap();
        let res = (ds.pair_scalar(&phi) - &exact).norm();
        assert!(res < prev, "2d residual not decreasing at n = {n}");
        prev = res;
        if n == 64 {
            assert!(res < 0.01 * scale, "residual {res} vs scale {scale}");
        }
    }
}

#[test]
fn staircase_tv_bound_with_dimension_constant() {
    // |Du_n|(Omega) <= 3 (1 + sqrt(N)) ||(g, G)||_SD for every generated pair.
    let cases: Vec<StructuredDeformation> = vec![
        StructuredDeformation::two_level_shear(Domain::unit(1, 32), [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.7, 0.3, [0.0; 3]).unwrap(),
        StructuredDeformation::two_level_shear(Domain::unit(2, 16), [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 1.2, -0.3, [0.5, 0.5, 0.0]).unwrap(),
        StructuredDeformation::affine(
            Domain::unit(2, 16),
            dmatrix![1.0, 0.5; -0.2, 0.9],
            dvector![0.1, 0.0],
            GField::Constant(dmatrix![0.8, 0.0; 0.1, 1.1]),
        )
        .unwrap(),
    ];
    for sd in &cases {
        let bound = 3.0 * (1.0 + (sd.domain.dim as f64).sqrt()) * sd.sd_norm();
        for n in [4usize, 16, 64] {
            let u = staircase_approximation(sd, n).unwrap();
            let tv = u.total_variation().unwrap();
            assert!(tv <= bound, "dim {}: |Du_n| = {tv} > bound {bound}", sd.domain.dim);
        }
    }
}

#[test]
fn gradient_equals_g_at_quadrature_points() {
    let sd = StructuredDeformation::two_level_shear(
        Domain::unit(2, 8),
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        0.9,
        0.4,
        [0.5, 0.5, 0.0],
    )
    .unwrap();
    let u = staircase_approximation(&sd, 16).unwrap();
    let probe = Domain::unit(2, 13);
    for c in 0..probe.cell_count() {
        let x = probe.cell_center(c);
        assert!((u.grad(x) - sd.big_g(x)).norm() < 1e-13);
    }
}

#[test]
fn upscaling_invariant_2d() {
    // |E^{alpha_r}(u_n) - I^{alpha_r}| decreasing on the dyadic grid and
    // below 0.5% at n = 2^6 in two dimensions.
    let dm = Domain::unit(2, 64);
    let sd = StructuredDeformation::two_level_shear(dm.clone(), [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.7, 0.3, [0.5, 0.5, 0.0]).unwrap();
    let psi = sin2_periodic(0.8);
    let k = Kernel::new(0.1, 2, Profile::Bump).unwrap();
    let plan = QuadPlan { cells_per_radius: 8, min_cells: 96, max_cells: 256, check_tol: None };
    let ns = [4usize, 8, 16, 32, 64];
    let points = energy::upscale_sweep(
        &sd,
        |n| deck_of_cards(&dm, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.7, 0.3, [0.5, 0.5, 0.0], n),
        &psi,
        &k,
        &plan,
        &ns,
    )
    .unwrap();
    let mut prev = f64::INFINITY;
    for p in &points {
        let clamped = p.rel_err.max(1e-12);
        assert!(clamped <= prev * (1.0 + 1e-9), "n = {}: {} after {}", p.n, p.rel_err, prev);
        prev = clamped;
    }
    assert!(points.last().unwrap().rel_err < 5e-3, "final rel err {}", points.last().unwrap().rel_err);
}

#[test]
fn boundary_layer_correction_vanishes() {
    let dm = Domain::unit(1, 64);
    let sd = StructuredDeformation::two_level_shear(dm, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.7, 0.3, [0.0; 3]).unwrap();
    let psi = frobenius_density();
    let plan = QuadPlan::default();
    let mut prev = f64::INFINITY;
    for &r in &[0.2, 0.1, 0.05, 0.025] {
        let k = Kernel::new(r, 1, Profile::Bump).unwrap();
        let bl = energy::boundary_layer_term(&sd, &psi, &k, 0.25, &plan).unwrap();
        assert!(bl.term <= bl.bound + 1e-9, "r = {r}: term {} bound {}", bl.term, bl.bound);
        assert!(bl.term < prev, "r = {r}: boundary term not decreasing");
        prev = bl.term;
    }
    assert!(prev < 0.05, "boundary term should be small at r = 0.025: {prev}");
}

#[test]
fn fixed_horizon_sum_rule_is_exact() {
    let dm = Domain::unit(1, 64);
    let sd = StructuredDeformation::step_jump_1d(dm, 1.3, 0.4, 0.5).unwrap();
    let w = sdlab_core::density::area_bulk();
    let psi_s = sdlab_core::density::c_abs_surface(1.0);
    let psi = sin2_periodic(0.8);
    let k = Kernel::new(0.1, 1, Profile::Bump).unwrap();
    let plan = QuadPlan::default();
    let parts =
        energy::total_energy_at_r(&sd, &w, &psi_s, &psi, &k, &plan, &energy::RelaxMode::ClosedForm).unwrap();
    let i_l = energy::total_energy(&sd, &w, &psi_s, &psi, &energy::RelaxMode::ClosedForm).unwrap();
    let nonlocal = energy::upscaled_energy(&sd, &psi, &k, &plan).unwrap();
    let lhs = parts.total();
    let rhs = (i_l.bulk_hp + i_l.surface_hp) + nonlocal;
    assert!((lhs - rhs).abs() < 1e-12, "sum rule violated: {lhs} vs {rhs}");
}

#[test]
fn extension_pad_independence_of_energy() {
    let dm = Domain::unit(1, 64);
    let sd = StructuredDeformation::step_jump_1d(dm, 1.0, 0.5, 0.5).unwrap();
    let psi = frobenius_density();
    let k = Kernel::new(0.05, 1, Profile::Bump).unwrap();
    let plan = QuadPlan::default();
    let v1 = energy::extended_nonlocal_energy(&sd, &psi, &k, 0.1, &plan).unwrap();
    let v2 = energy::extended_nonlocal_energy(&sd, &psi, &k, 0.3, &plan).unwrap();
    assert!((v1 - v2).abs() < 1e-6, "pads disagree: {v1} vs {v2}");
}
