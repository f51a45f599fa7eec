//! Per-point optimality condition of the regularized discriminator:
//! `f(z, c) = 2λz³ − 2λ(c+1)z² + (2λc − 1 − r)z + 1 = 0` on `(0, 1)`.

/// Target residual for the inner root.
pub const INNER_TOL: f64 = 1e-12;

#[inline]
pub fn cubic(z: f64, c: f64, r: f64, lambda: f64) -> f64 {
    let a = 2.0 * lambda;
    ((a * z - a * (c + 1.0)) * z + (a * c - 1.0 - r)) * z + 1.0
}

/// Unique root of `f(·, c)` in `(0, 1)` by bisection.
///
/// `f(0, c) = 1 > 0` and `f(1, c) = −r < 0`, so the bracket always holds for
/// `r > 0`. Bisection runs until the midpoint stops moving, then returns the
/// bracket end with the smaller residual.
pub fn solve_inner_root(r: f64, c: f64, lambda: f64) -> f64 {
    debug_assert!(r > 0.0 && lambda >= 0.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (mut f_lo, mut f_hi) = (1.0, -r);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = cubic(mid, c, r, lambda);
        if v == 0.0 {
            return mid;
        }
        if v > 0.0 {
            lo = mid;
            f_lo = v;
        } else {
            hi = mid;
            f_hi = v;
        }
    }
    if f_lo.abs() <= f_hi.abs() {
        lo
    } else {
        hi
    }
}

/// Number of strict sign changes of `f(·, c)` over `points` equispaced
/// samples of `[0, 1]` (endpoints included; exact zeros are skipped).
pub fn count_sign_changes(r: f64, c: f64, lambda: f64, points: usize) -> usize {
    let mut changes = 0;
    let mut prev = 1.0f64; // f(0, c)
    for k in 1..=points {
        let z = k as f64 / points as f64;
        let v = cubic(z, c, r, lambda);
        if v == 0.0 {
            continue;
        }
        if (v > 0.0) != (prev > 0.0) {
            changes += 1;
        }
        prev = v;
    }
    changes
}
