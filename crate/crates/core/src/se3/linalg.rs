//! Small fixed-size decompositions used by the Procrustes solver and the
//! covariance descriptors. Only 3x3 matrices are ever needed, so both
//! routines are plain Jacobi iterations.

use nalgebra::{Matrix3, Vector3};

const MAX_SWEEPS: usize = 64;

/// Singular value decomposition `a = u * diag(s) * v^T`.
///
/// Singular values are sorted in descending order. `u` and `v` are orthogonal
/// (their determinants may be -1); when `a` is rank deficient the missing
/// left singular vectors are completed to an orthonormal basis.
#[derive(Debug, Clone, Copy)]
pub struct Svd3 {
    pub u: Matrix3<f64>,
    pub singular_values: Vector3<f64>,
    pub v: Matrix3<f64>,
}

/// One-sided (Hestenes) Jacobi SVD of a 3x3 matrix.
pub fn svd3(a: &Matrix3<f64>) -> Svd3 {
    let mut work = *a;
    let mut v = Matrix3::identity();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let cp = work.column(p).into_owned();
            let cq = work.column(q).into_owned();
            let alpha = cp.norm_squared();
            let beta = cq.norm_squared();
            let gamma = cp.dot(&cq);
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            rotate_columns(&mut work, p, q, c, s);
            rotate_columns(&mut v, p, q, c, s);
        }
        if !rotated {
            break;
        }
    }

    let mut order = [0usize, 1, 2];
    let norms = Vector3::new(
        work.column(0).norm(),
        work.column(1).norm(),
        work.column(2).norm(),
    );
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut u = Matrix3::zeros();
    let mut v_sorted = Matrix3::zeros();
    let mut singular_values = Vector3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        singular_values[dst] = norms[src];
        v_sorted.set_column(dst, &v.column(src));
        u.set_column(dst, &work.column(src));
    }

    let scale = singular_values[0].max(f64::MIN_POSITIVE);
    let tiny = scale * 1e-13;
    let mut filled = 0;
    for i in 0..3 {
        if singular_values[i] > tiny {
            let col = u.column(i) / singular_values[i];
            u.set_column(i, &col);
            filled += 1;
        } else {
            break;
        }
    }
    complete_basis(&mut u, filled);

    Svd3 {
        u,
        singular_values,
        v: v_sorted,
    }
}

fn rotate_columns(m: &mut Matrix3<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..3 {
        let mp = m[(r, p)];
        let mq = m[(r, q)];
        m[(r, p)] = c * mp - s * mq;
        m[(r, q)] = s * mp + c * mq;
    }
}

/// Fills columns `filled..3` of `u` so that all columns form an orthonormal basis.
fn complete_basis(u: &mut Matrix3<f64>, filled: usize) {
    if filled >= 3 {
        return;
    }
    if filled == 0 {
        *u = Matrix3::identity();
        return;
    }
    if filled == 1 {
        let a = u.column(0).into_owned();
        let b = any_orthogonal(&a);
        u.set_column(1, &b);
    }
    let c = u.column(0).cross(&u.column(1)).normalize();
    u.set_column(2, &c);
}

/// Unit vector orthogonal to `a` (assumed nonzero).
pub fn any_orthogonal(a: &Vector3<f64>) -> Vector3<f64> {
    let axis = if a.x.abs() <= a.y.abs() && a.x.abs() <= a.z.abs() {
        Vector3::x()
    } else if a.y.abs() <= a.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    a.cross(&axis).normalize()
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit eigenvectors
/// as the columns of the second element.
pub fn symmetric_eigen3(m: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let mut a = (m + m.transpose()) * 0.5;
    let mut vecs = Matrix3::identity();

    for _ in 0..MAX_SWEEPS {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        let diag = a[(0, 0)].powi(2) + a[(1, 1)].powi(2) + a[(2, 2)].powi(2);
        if off <= f64::EPSILON * f64::EPSILON * diag || off == 0.0 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // a <- J^T a J with J the Givens rotation in the (p, q) plane
            rotate_columns(&mut a, p, q, c, s);
            a.transpose_mut();
            rotate_columns(&mut a, p, q, c, s);
            rotate_columns(&mut vecs, p, q, c, s);
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let mut values = Vector3::zeros();
    let mut sorted = Matrix3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = a[(src, src)];
        sorted.set_column(dst, &vecs.column(src));
    }
    (values, sorted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(svd: &Svd3) -> Matrix3<f64> {
        svd.u * Matrix3::from_diagonal(&svd.singular_values) * svd.v.transpose()
    }

    #[test]
    fn svd_reconstructs_general_matrix() {
        let a = Matrix3::new(2.0, -1.0, 0.5, 0.3, 4.0, 1.0, -2.0, 0.7, 3.0);
        let svd = svd3(&a);
        assert!((reconstruct(&svd) - a).norm() < 1e-12);
        assert!((svd.u.transpose() * svd.u - Matrix3::identity()).norm() < 1e-12);
        assert!((svd.v.transpose() * svd.v - Matrix3::identity()).norm() < 1e-12);
        let s = svd.singular_values;
        assert!(s[0] >= s[1] && s[1] >= s[2] && s[2] >= 0.0);
    }

    #[test]
    fn svd_handles_rank_deficiency() {
        // rank 2: third row is a combination of the first two
        let a = Matrix3::new(1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 1.0, 3.0, 1.0);
        let svd = svd3(&a);
        assert!(svd.singular_values[2] < 1e-12);
        assert!((reconstruct(&svd) - a).norm() < 1e-12);
        assert!((svd.u.transpose() * svd.u - Matrix3::identity()).norm() < 1e-12);

        let svd = svd3(&Matrix3::zeros());
        assert_eq!(svd.singular_values, Vector3::zeros());
        assert!((svd.u.transpose() * svd.u - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn symmetric_eigen_matches_definition() {
        let m = Matrix3::new(4.0, 1.0, -0.5, 1.0, 3.0, 0.25, -0.5, 0.25, 1.0);
        let (vals, vecs) = symmetric_eigen3(&m);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for i in 0..3 {
            let v = vecs.column(i);
            assert!((m * v - v * vals[i]).norm() < 1e-12);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
        let (vals, _) = symmetric_eigen3(&Matrix3::from_diagonal(&Vector3::new(1.0, 5.0, 2.0)));
        assert_eq!(vals, Vector3::new(5.0, 2.0, 1.0));
    }
}
