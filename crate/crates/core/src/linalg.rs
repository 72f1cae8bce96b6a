//! Fixed-size 2-D vector and matrix helpers.

use std::f64::consts::PI;

pub type Vec2 = [f64; 2];
/// Row-major 2×2 matrix.
pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

pub fn norm(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn scale(v: Vec2, s: f64) -> Vec2 {
    [v[0] * s, v[1] * s]
}

pub fn rotation(angle: f64) -> Mat2 {
    let (s, c) = angle.sin_cos();
    [[c, -s], [s, c]]
}

pub fn mat_vec(a: &Mat2, v: Vec2) -> Vec2 {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

pub fn det(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

pub fn trace(a: &Mat2) -> f64 {
    a[0][0] + a[1][1]
}

/// Lower-triangular `L` with `L Lᵀ = g` for symmetric positive semi-definite
/// `g`. Negative pivots (rounding, or an indefinite input) are clamped to
/// zero.
pub fn cholesky(g: &Mat2) -> Mat2 {
    let l11 = g[0][0].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { g[1][0] / l11 } else { 0.0 };
    let l22 = (g[1][1] - l21 * l21).max(0.0).sqrt();
    [[l11, 0.0], [l21, l22]]
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if a >= PI {
        a -= 2.0 * PI;
    }
    if a < -PI {
        a = -PI;
    }
    a
}

/// Eigen-decomposition of a symmetric 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Unit eigenvector of `lambda1`.
    pub e1: Vec2,
    /// Unit eigenvector of `lambda2`, orthogonal to `e1`.
    pub e2: Vec2,
}

/// Closed-form eigenpairs of a symmetric 2×2 matrix, `lambda1 >= lambda2`.
///
/// Eigenvector signs are canonical: non-negative x component, and
/// non-negative y when x is zero. Isotropic matrices get the coordinate axes.
pub fn sym_eigen(g: &Mat2) -> SymEigen {
    let (a, b, c) = (g[0][0], 0.5 * (g[0][1] + g[1][0]), g[1][1]);
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let radius = half_diff.hypot(b);
    let lambda1 = mean + radius;
    let lambda2 = mean - radius;
    let e1 = if radius <= f64::EPSILON * mean.abs().max(f64::MIN_POSITIVE) {
        [1.0, 0.0]
    } else if a >= c {
        // lambda1 - c = radius + half_diff >= radius > 0
        normalize([lambda1 - c, b])
    } else {
        normalize([b, lambda1 - a])
    };
    let e1 = canonical_sign(e1);
    let e2 = canonical_sign([-e1[1], e1[0]]);
    SymEigen {
        lambda1,
        lambda2,
        e1,
        e2,
    }
}

fn normalize(v: Vec2) -> Vec2 {
    let n = norm(v);
    [v[0] / n, v[1] / n]
}

fn canonical_sign(v: Vec2) -> Vec2 {
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        [-v[0], -v[1]]
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn eigen_of_worked_example() {
        let e = sym_eigen(&[[2.0, 1.0], [1.0, 2.0]]);
        assert_abs_diff_eq!(e.lambda1, 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.lambda2, 1.0, epsilon = 1e-15);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(e.e1[0], s, epsilon = 1e-15);
        assert_abs_diff_eq!(e.e1[1], s, epsilon = 1e-15);
        assert_abs_diff_eq!(e.e2[0], s, epsilon = 1e-15);
        assert_abs_diff_eq!(e.e2[1], -s, epsilon = 1e-15);
    }

    #[test]
    fn isotropic_gets_axes() {
        let e = sym_eigen(&[[0.3, 0.0], [0.0, 0.3]]);
        assert_eq!(e.e1, [1.0, 0.0]);
        assert_eq!(e.e2, [0.0, 1.0]);
        assert_eq!(e.lambda1, e.lambda2);
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert!(wrap_angle(-1e-300) < PI);
    }

    proptest! {
        #[test]
        fn eigenpairs_satisfy_definition(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64) {
            let g = [[a, b], [b, c]];
            let e = sym_eigen(&g);
            prop_assert!(e.lambda1 >= e.lambda2);
            prop_assert!(dot(e.e1, e.e2).abs() < 1e-9);
            for (l, v) in [(e.lambda1, e.e1), (e.lambda2, e.e2)] {
                let gv = mat_vec(&g, v);
                prop_assert!((gv[0] - l * v[0]).abs() < 1e-9);
                prop_assert!((gv[1] - l * v[1]).abs() < 1e-9);
                prop_assert!((norm(v) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn cholesky_reconstructs(l11 in 0.01..3.0f64, l21 in -3.0..3.0f64, l22 in 0.01..3.0f64) {
            let l = [[l11, 0.0], [l21, l22]];
            let g = mat_mul(&l, &transpose(&l));
            let back = cholesky(&g);
            for i in 0..2 { for j in 0..2 {
                prop_assert!((back[i][j] - l[i][j]).abs() < 1e-9);
            }}
        }

        #[test]
        fn wrap_range(theta in -100.0..100.0f64) {
            let w = wrap_angle(theta);
            prop_assert!((-PI..PI).contains(&w));
            let turns = (theta - w) / (2.0 * PI);
            prop_assert!((turns - turns.round()).abs() < 1e-9);
        }
    }
}
