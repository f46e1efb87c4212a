//! Small dense linear algebra: a one-sided Jacobi SVD for 3x3 matrices and
//! the projection onto SO(3) built from it.

use nalgebra::{Matrix3, Vector3};

/// `H = U * diag(singular_values) * V^T` with singular values sorted in
/// descending order. `U` and `V` are orthogonal but not necessarily proper
/// rotations.
#[derive(Clone, Copy, Debug)]
pub struct Svd3 {
    pub u: Matrix3<f64>,
    pub singular_values: Vector3<f64>,
    pub v: Matrix3<f64>,
}

impl Svd3 {
    pub fn reconstruct(&self) -> Matrix3<f64> {
        self.u * Matrix3::from_diagonal(&self.singular_values) * self.v.transpose()
    }
}

const MAX_SWEEPS: usize = 60;

/// Singular value decomposition of a 3x3 matrix by one-sided (Hestenes)
/// Jacobi rotations applied to the columns of `h`.
pub fn svd3(h: &Matrix3<f64>) -> Svd3 {
    let mut a = *h;
    let mut v = Matrix3::identity();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let ap = a.column(p).into_owned();
            let aq = a.column(q).into_owned();
            let alpha = ap.norm_squared();
            let beta = aq.norm_squared();
            let gamma = ap.dot(&aq);
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            a.set_column(p, &(ap * c - aq * s));
            a.set_column(q, &(ap * s + aq * c));
            let vp = v.column(p).into_owned();
            let vq = v.column(q).into_owned();
            v.set_column(p, &(vp * c - vq * s));
            v.set_column(q, &(vp * s + vq * c));
        }
        if !rotated {
            break;
        }
    }

    let mut order = [0usize, 1, 2];
    let norms = Vector3::new(a.column(0).norm(), a.column(1).norm(), a.column(2).norm());
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let mut u = Matrix3::zeros();
    let mut v_sorted = Matrix3::zeros();
    let mut sv = Vector3::zeros();
    for (k, &src) in order.iter().enumerate() {
        sv[k] = norms[src];
        v_sorted.set_column(k, &v.column(src));
        u.set_column(k, &a.column(src));
    }

    // Columns of U for (numerically) zero singular values are completed to
    // an orthonormal basis.
    let scale = sv[0].max(f64::MIN_POSITIVE);
    let tiny = 1e-14 * scale;
    if sv[0] <= f64::MIN_POSITIVE {
        u = Matrix3::identity();
    } else {
        let u0 = u.column(0) / sv[0];
        u.set_column(0, &u0);
        if sv[1] > tiny {
            let u1 = u.column(1) / sv[1];
            u.set_column(1, &u1);
        } else {
            u.set_column(1, &any_orthogonal(&u0));
        }
        let u0 = u.column(0).into_owned();
        let u1 = u.column(1).into_owned();
        if sv[2] > tiny {
            let u2 = u.column(2) / sv[2];
            u.set_column(2, &u2);
        } else {
            u.set_column(2, &u0.cross(&u1).normalize());
        }
    }

    Svd3 {
        u,
        singular_values: sv,
        v: v_sorted,
    }
}

fn any_orthogonal(v: &Vector3<f64>) -> Vector3<f64> {
    let axis = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
        Vector3::x()
    } else if v.y.abs() <= v.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    v.cross(&axis).normalize()
}

/// Nearest proper rotation to `m` in the Frobenius sense. `None` when `m`
/// is not finite or is rank deficient beyond recovery (rank < 2).
pub fn project_to_so3(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    let svd = svd3(m);
    if svd.singular_values[1] <= 1e-12 * svd.singular_values[0].max(f64::MIN_POSITIVE) {
        return None;
    }
    Some(proper_rotation(&svd))
}

/// `U E V^T` with `E = diag(1, 1, det(U) det(V))`.
pub fn proper_rotation(svd: &Svd3) -> Matrix3<f64> {
    let d = svd.u.determinant() * svd.v.determinant();
    let e = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    svd.u * e * svd.v.transpose()
}
