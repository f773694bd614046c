use nalgebra::Rotation3;
use proptest::prelude::*;

use tetflat::energy::dirichlet_density;
use tetflat::mesh::{boundary_topology, det6, Frame};
use tetflat::metrics::{dirichlet_excess, report, volumetric_distortion, ReportOptions};
use tetflat::optimizer::{flatten, max_step_flip_free, FlattenParams, TemplateKind};
use tetflat::resample::barycentric;
use tetflat::synth::{bent_slab, BentSlabSpec};
use tetflat::{TetMesh, Vec3};

fn vec3() -> impl Strategy<Value = Vec3> {
    (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn small_slab(angle: f64) -> TetMesh {
    bent_slab(&BentSlabSpec {
        length: 40.0,
        width: 24.0,
        thickness: 8.0,
        bend_angle: angle,
        resolution: [5, 3, 2],
    })
    .unwrap()
    .mesh
}

fn rigid(points: &[Vec3], axis: Vec3, shift: Vec3) -> Vec<Vec3> {
    let r = Rotation3::from_scaled_axis(axis);
    points.iter().map(|p| r * p + shift).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn barycentric_weights_reproduce_the_point(
        p in [vec3(), vec3(), vec3(), vec3()],
        w in [0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64],
    ) {
        let vol = det6(&p).abs();
        let scale = p.iter().map(|v| v.norm()).fold(1.0, f64::max);
        prop_assume!(vol > 1e-3 * scale.powi(3));
        let s: f64 = w.iter().sum();
        prop_assume!(s > 1e-6);
        let q: Vec3 = (0..4).map(|i| p[i] * (w[i] / s)).sum();
        let a = barycentric(&q, &p);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for i in 0..4 {
            prop_assert!((a[i] - w[i] / s).abs() < 1e-6, "{a:?} vs {w:?}");
        }
    }

    #[test]
    fn density_is_at_least_six_and_rotation_invariant(
        d in [0.2..5.0f64, 0.2..5.0f64, 0.2..5.0f64],
        axis in vec3(),
    ) {
        let j = nalgebra::Matrix3::from_diagonal(&Vec3::new(d[0], d[1], d[2]));
        let r = *Rotation3::from_scaled_axis(axis * 0.3).matrix();
        let a = dirichlet_density(&j).unwrap();
        let b = dirichlet_density(&(r * j)).unwrap();
        prop_assert!(a >= 6.0 - 1e-12);
        prop_assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn rigid_motion_has_no_distortion(axis in vec3(), shift in vec3()) {
        let z = small_slab(1.0);
        let x = rigid(z.vertices(), axis * 0.3, shift);
        prop_assert!(dirichlet_excess(&x, &z).unwrap() < 1e-9);
        let v = volumetric_distortion(&x, &z).unwrap();
        prop_assert!(v.iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn flip_bound_is_safe_below_and_tight_above(seed in 0u64..1000, scale in 0.5..20.0f64) {
        use rand::{Rng, SeedableRng};
        let z = small_slab(0.7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<Vec3> = z.vertices().iter().map(|_| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0)) * scale).collect();
        let b = max_step_flip_free(z.tets(), z.vertices(), &d);
        let min_at = |eta: f64| {
            let y: Vec<Vec3> = z.vertices().iter().zip(&d).map(|(p, g)| p - g * eta).collect();
            z.tets().iter().map(|t| det6(&t.map(|i| y[i]))).fold(f64::INFINITY, f64::min)
        };
        prop_assert!(min_at(0.999 * b.eta_max) > 0.0);
        if !b.capped {
            prop_assert!(min_at(1.001 * b.eta_max) < 0.0);
        }
    }
}

#[test]
fn flattening_is_invariant_to_rigid_motion_of_the_input() {
    let z = small_slab(1.2);
    let moved = z.with_vertices(
        rigid(z.vertices(), Vec3::new(0.4, -1.1, 0.7), Vec3::new(30.0, -12.0, 5.0)),
        Frame::Original,
    );
    let mut params = FlattenParams::default();
    params.parcellation.margin_mm = 5.0;
    let opts = ReportOptions::default();
    let mut results = Vec::new();
    for mesh in [&z, &moved] {
        let f = flatten(mesh, TemplateKind::Planes, &params, None).unwrap();
        assert!(f.result.converged);
        let topo = boundary_topology(mesh).unwrap();
        let labels = f.parcellation.as_ref().map(|p| p.labels.as_slice());
        let r = report(mesh, &f.result.x, &topo, Some((&f.result.template, labels)), &opts).unwrap();
        let h = f.result.template.theta()[0];
        results.push((h, r.dirichlet_excess_percent, r.template_fit.unwrap().rms));
    }
    let (a, b) = (results[0], results[1]);
    // Converged to the gradient tolerance, not bit-identical iterates.
    assert!((a.0 - b.0).abs() < 1e-3 * a.0, "{a:?} vs {b:?}");
    assert!((a.1 - b.1).abs() < 1e-2 * a.1.max(1e-3), "{a:?} vs {b:?}");
    assert!((a.2 - b.2).abs() < 0.05 * a.2.max(1e-3), "{a:?} vs {b:?}");
}
