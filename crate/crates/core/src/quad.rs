//! Quadrature building blocks: fixed Gauss-Legendre panels, adaptive
//! subdivision for 1d profiles, and a refinement-doubling driver used as the
//! independent oracle by the test suites.

/// 4-point Gauss-Legendre nodes and weights on [-1, 1].
pub const GL4_NODES: [f64; 4] = [
    -0.861136311594052575,
    -0.339981043584856265,
    0.339981043584856265,
    0.861136311594052575,
];
pub const GL4_WEIGHTS: [f64; 4] = [
    0.347854845137453857,
    0.652145154862546143,
    0.652145154862546143,
    0.347854845137453857,
];

/// 8-point Gauss-Legendre nodes and weights on [-1, 1].
pub const GL8_NODES: [f64; 8] = [
    -0.960289856497536232,
    -0.796666477413626740,
    -0.525532409916328986,
    -0.183434642495649805,
    0.183434642495649805,
    0.525532409916328986,
    0.796666477413626740,
    0.960289856497536232,
];
pub const GL8_WEIGHTS: [f64; 8] = [
    0.101228536290376259,
    0.222381034453374471,
    0.313706645877887287,
    0.362683783378361983,
    0.362683783378361983,
    0.313706645877887287,
    0.222381034453374471,
    0.101228536290376259,
];

/// Integrate `f` over [a, b] with a single 4-point Gauss-Legendre panel.
pub fn gl4<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    let mut acc = 0.0;
    for i in 0..4 {
        acc += GL4_WEIGHTS[i] * f(c + h * GL4_NODES[i]);
    }
    acc * h
}

/// Composite 4-point Gauss-Legendre rule with `panels` equal panels.
pub fn gl4_composite<F: Fn(f64) -> f64>(a: f64, b: f64, panels: usize, f: F) -> f64 {
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        acc += gl4(a + p as f64 * h, a + (p + 1) as f64 * h, &f);
    }
    acc
}

/// Adaptive 1d quadrature by panel bisection with a GL4-vs-GL4x2 error
/// estimate. Robust for the smooth compactly supported profiles used here.
pub fn adaptive<F: Fn(f64) -> f64>(a: f64, b: f64, tol: f64, f: F) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(a: f64, b: f64, whole: f64, tol: f64, depth: u32, f: &F) -> f64 {
        let m = 0.5 * (a + b);
        let left = gl4(a, m, f);
        let right = gl4(m, b, f);
        let refined = left + right;
        if depth >= 48 || (refined - whole).abs() <= tol {
            return refined;
        }
        recurse(a, m, left, 0.5 * tol, depth + 1, f) + recurse(m, b, right, 0.5 * tol, depth + 1, f)
    }
    let whole = gl4(a, b, &f);
    recurse(a, b, whole, tol, 0, &f)
}

/// Outcome of a refinement-doubling run.
#[derive(Debug, Clone, Copy)]
pub struct Doubling {
    pub value: f64,
    pub last_delta: f64,
    pub converged: bool,
    pub levels: u32,
}

/// Evaluate `f(n)` on a doubling sequence of resolutions starting at
/// `n0` until two consecutive values agree within `tol` (absolute).
///
/// This is the oracle mode: it is deliberately independent of any fixed
/// production quadrature plan.
pub fn refine_doubling<F: FnMut(usize) -> f64>(n0: usize, tol: f64, max_levels: u32, mut f: F) -> Doubling {
    let mut n = n0;
    let mut prev = f(n);
    let mut last_delta = f64::INFINITY;
    for level in 1..=max_levels {
        n *= 2;
        let next = f(n);
        last_delta = (next - prev).abs();
        if last_delta <= tol {
            return Doubling { value: next, last_delta, converged: true, levels: level };
        }
        prev = next;
    }
    Doubling { value: prev, last_delta, converged: false, levels: max_levels }
}

/// Midpoint rule with `n` cells on [a, b]; the base rule of the doubling oracle.
pub fn midpoint<F: Fn(f64) -> f64>(a: f64, b: f64, n: usize, f: F) -> f64 {
    let h = (b - a) / n as f64;
    (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl4_exact_for_cubics() {
        let v = gl4(0.0, 2.0, |x| 3.0 * x * x * x - x + 1.0);
        assert!((v - (12.0 - 2.0 + 2.0)).abs() < 1e-13);
    }

    #[test]
    fn adaptive_matches_closed_form() {
        let v = adaptive(0.0, std::f64::consts::PI, 1e-12, f64::sin);
        assert!((v - 2.0).abs() < 1e-11);
    }

    #[test]
    fn doubling_converges_on_smooth_integrand() {
        let run = refine_doubling(8, 1e-10, 24, |n| midpoint(0.0, 1.0, n, |x| x * x));
        assert!(run.converged);
        assert!((run.value - 1.0 / 3.0).abs() < 1e-9);
    }
}
