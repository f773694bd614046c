use rayon::prelude::*;

use super::roots::smallest_positive_root;
use crate::energy::adjugate;
use crate::mesh::{bbox_of, edge_matrix, Vec3};

/// Coefficients `[c0, c1, c2, c3]` of `det((X_k - eta G_k) B)` in `eta`.
pub fn volume_cubic(x: &[Vec3; 4], g: &[Vec3; 4]) -> [f64; 4] {
    let p = edge_matrix(x);
    let d = edge_matrix(g);
    [
        p.determinant(),
        -(adjugate(&p) * d).trace(),
        (p * adjugate(&d)).trace(),
        -d.determinant(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBound {
    pub eta_max: f64,
    /// True when no tet can flip along the direction and the cap was used.
    pub capped: bool,
}

/// Largest step along `-direction` before the first tet flips, minimized
/// over tets. Without any positive root the step is capped at
/// `10 * bbox diagonal / |direction|_F` (infinite for a zero direction).
pub fn max_step_flip_free(tets: &[[usize; 4]], x: &[Vec3], direction: &[Vec3]) -> StepBound {
    let roots: Vec<Option<f64>> = tets
        .par_iter()
        .with_min_len(256)
        .map(|t| {
            let c = volume_cubic(&t.map(|v| x[v]), &t.map(|v| direction[v]));
            smallest_positive_root(c[3], c[2], c[1], c[0])
        })
        .collect();
    match roots.iter().flatten().copied().min_by(f64::total_cmp) {
        Some(eta_max) => StepBound { eta_max, capped: false },
        None => {
            let (lo, hi) = bbox_of(x);
            let g = direction.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
            StepBound {
                eta_max: 10.0 * (hi - lo).norm() / g,
                capped: true,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::det6;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cubic_matches_direct_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x: [Vec3; 4] = std::array::from_fn(|_| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
            let g: [Vec3; 4] = std::array::from_fn(|_| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
            let c = volume_cubic(&x, &g);
            for eta in [0.0, 0.3, -1.2, 2.5] {
                let direct = det6(&std::array::from_fn(|i| x[i] - g[i] * eta));
                let poly = c[0] + eta * (c[1] + eta * (c[2] + eta * c[3]));
                assert!((direct - poly).abs() < 1e-12 * (1.0 + direct.abs()));
            }
        }
    }

    #[test]
    fn apex_moving_down() {
        let x = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let dir = vec![Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), Vec3::z()];
        let b = max_step_flip_free(&[[0, 1, 2, 3]], &x, &dir);
        assert!(!b.capped);
        assert!((b.eta_max - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_direction_is_capped() {
        let x = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let b = max_step_flip_free(&[[0, 1, 2, 3]], &x, &[Vec3::zeros(); 4]);
        assert!(b.capped && b.eta_max.is_infinite());
        // Pure translation never flips anything.
        let b = max_step_flip_free(&[[0, 1, 2, 3]], &x, &[Vec3::x(); 4]);
        assert!(b.capped);
        assert!((b.eta_max - 10.0 * 3f64.sqrt() / 2.0).abs() < 1e-12);
    }
}
