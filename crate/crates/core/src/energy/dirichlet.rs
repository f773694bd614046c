use nalgebra::{Matrix3, Matrix4x3};

use crate::mesh::{edge_matrix, Vec3};

/// The constant map from stacked tet vertices to edge vectors.
pub fn basis_matrix() -> Matrix4x3<f64> {
    Matrix4x3::new(-1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)
}

/// Transposed cofactor matrix, `adj(M) M = det(M) I`.
#[inline]
pub fn adjugate(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = m.column(0).into_owned();
    let c1 = m.column(1).into_owned();
    let c2 = m.column(2).into_owned();
    Matrix3::from_rows(&[
        c1.cross(&c2).transpose(),
        c2.cross(&c0).transpose(),
        c0.cross(&c1).transpose(),
    ])
}

/// `J = (X_k B)(Z_k B)^{-1}`.
#[inline]
pub fn jacobian(xk: &[Vec3; 4], inv_basis: &Matrix3<f64>) -> Matrix3<f64> {
    edge_matrix(xk) * inv_basis
}

/// `|J|_F^2 + |J^{-1}|_F^2`; `None` when `det J <= 0`.
#[inline]
pub fn dirichlet_density(j: &Matrix3<f64>) -> Option<f64> {
    let det = j.determinant();
    if !(det > 0.0) {
        return None;
    }
    Some(j.norm_squared() + adjugate(j).norm_squared() / (det * det))
}

/// Same quantity from singular values; slower, for diagnostics.
pub fn dirichlet_density_svd(j: &Matrix3<f64>) -> f64 {
    j.singular_values().iter().map(|s| s * s + 1.0 / (s * s)).sum()
}

pub fn singular_values(j: &Matrix3<f64>) -> [f64; 3] {
    let mut s: [f64; 3] = j.singular_values().into();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Density and its gradient with respect to the four tet vertices.
#[inline]
pub fn dirichlet_with_gradient(xk: &[Vec3; 4], inv_basis: &Matrix3<f64>) -> Option<(f64, [Vec3; 4])> {
    let j = jacobian(xk, inv_basis);
    let det = j.determinant();
    if !(det > 0.0) {
        return None;
    }
    let jinv = adjugate(&j) / det;
    let d = j.norm_squared() + jinv.norm_squared();
    let jinv_t = jinv.transpose();
    let dj = (j - jinv_t * jinv * jinv_t) * 2.0;
    let dp = dj * inv_basis.transpose();
    let g1 = dp.column(0).into_owned();
    let g2 = dp.column(1).into_owned();
    let g3 = dp.column(2).into_owned();
    Some((d, [-(g1 + g2 + g3), g1, g2, g3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        loop {
            let m = Matrix3::from_fn(|_, _| rng.gen_range(-2.0..2.0));
            if m.determinant() > 0.1 {
                return m;
            }
        }
    }

    #[test]
    fn basis_extracts_edges() {
        let b = basis_matrix();
        let unit = [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let stack = |p: &[Vec3; 4]| nalgebra::Matrix3x4::from_columns(p);
        assert_eq!(stack(&unit) * b, Matrix3::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: [Vec3; 4] = std::array::from_fn(|_| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
        let shifted = p.map(|v| v + Vec3::new(3.0, -2.0, 7.5));
        let e = stack(&p) * b;
        for c in 0..3 {
            assert_eq!(e.column(c).into_owned(), p[c + 1] - p[0]);
        }
        assert!((stack(&shifted) * b - e).abs().max() < 1e-14);
        assert_eq!(edge_matrix(&p), e);
    }

    #[test]
    fn jacobian_of_simple_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z: [Vec3; 4] = std::array::from_fn(|_| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
        let inv = edge_matrix(&z).try_inverse().unwrap();
        assert!((jacobian(&z, &inv) - Matrix3::identity()).abs().max() < 1e-12);
        assert!((jacobian(&z.map(|p| p * 2.0), &inv) - Matrix3::identity() * 2.0).abs().max() < 1e-12);
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let j = jacobian(&z.map(|p| r * p), &inv);
        assert!((j - r.matrix()).abs().max() < 1e-12);
        for s in singular_values(&j) {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn density_closed_forms() {
        assert_eq!(dirichlet_density(&Matrix3::identity()), Some(6.0));
        assert_eq!(dirichlet_density(&(Matrix3::identity() * 2.0)), Some(12.75));
        assert_eq!(dirichlet_density(&Matrix3::from_diagonal(&Vec3::new(2.0, 1.0, 0.5))), Some(10.5));
        assert_eq!(dirichlet_density(&Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0))), None);
        assert_eq!(dirichlet_density(&Matrix3::zeros()), None);
    }

    #[test]
    fn density_properties_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let j = random_matrix(&mut rng);
            let d = dirichlet_density(&j).unwrap();
            assert!(d >= 6.0);
            assert!((d - dirichlet_density_svd(&j)).abs() < 1e-9 * d);
            let di = dirichlet_density(&j.try_inverse().unwrap()).unwrap();
            assert!((d - di).abs() < 1e-9 * d);
            let r = Rotation3::from_scaled_axis(Vec3::from_fn(|_, _| rng.gen_range(-3.0..3.0)));
            assert!((dirichlet_density(r.matrix()).unwrap() - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adjugate_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_matrix(&mut rng);
        let p = adjugate(&m) * m;
        assert!((p - Matrix3::identity() * m.determinant()).abs().max() < 1e-12);
    }

    #[test]
    fn per_tet_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let inv = edge_matrix(&z).try_inverse().unwrap();
        let x: [Vec3; 4] = std::array::from_fn(|i| z[i] + Vec3::from_fn(|_, _| rng.gen_range(-0.15..0.15)));
        let (_, g) = dirichlet_with_gradient(&x, &inv).unwrap();
        let h = 1e-6;
        for v in 0..4 {
            for c in 0..3 {
                let mut p = x;
                let mut m = x;
                p[v][c] += h;
                m[v][c] -= h;
                let fd = (dirichlet_density(&jacobian(&p, &inv)).unwrap()
                    - dirichlet_density(&jacobian(&m, &inv)).unwrap())
                    / (2.0 * h);
                assert!((fd - g[v][c]).abs() < 1e-7 * (1.0 + fd.abs()), "{v},{c}: {fd} vs {}", g[v][c]);
            }
        }
    }
}
