use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Objective, TemplateSpec};
use crate::error::Result;
use crate::mesh::{bbox_of, boundary_topology, det6, TetMesh, Vec3};
use crate::parcellation::Side;
use crate::synth::{bent_slab, BentSlabSpec, SurfaceLabel};

/// Worst component error of each analytic gradient against central
/// differences, relative to the larger of the two gradients' max-norms (or
/// to `|term| / bbox diagonal` when both gradients vanish).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub distortion: f64,
    pub template: f64,
    pub theta: f64,
}

impl FdReport {
    pub fn max(&self) -> f64 {
        self.distortion.max(self.template).max(self.theta)
    }
}

/// Analytic gradients under test: `(lambda * distortion grad, template grad, theta grad)`.
pub type Gradients = (Vec<Vec3>, Vec<Vec3>, Vec<f64>);

fn relative_error(analytic: &[f64], fd: &[f64], term: f64, scale: f64) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let denom = inf(analytic).max(inf(fd)).max(term.abs() / scale).max(f64::MIN_POSITIVE);
    analytic.iter().zip(fd).map(|(a, f)| (a - f).abs()).fold(0.0, f64::max) / denom
}

pub fn fd_check(obj: &Objective, x: &[Vec3], spec: &TemplateSpec, step: f64) -> Result<FdReport> {
    fd_check_with(obj, x, spec, step, |x, spec| {
        let (_, gd) = obj.distortion_gradient(x)?;
        let (_, gt, gth) = obj.template_gradient(x, spec)?;
        Ok((gd.iter().map(|g| g * obj.lambda).collect(), gt, gth))
    })
}

/// Like [`fd_check`] with a caller-supplied gradient.
pub fn fd_check_with(
    obj: &Objective,
    x: &[Vec3],
    spec: &TemplateSpec,
    step: f64,
    gradients: impl Fn(&[Vec3], &TemplateSpec) -> Result<Gradients>,
) -> Result<FdReport> {
    let (gd, gt, gth) = gradients(x, spec)?;
    let (lo, hi) = bbox_of(x);
    let scale = (hi - lo).norm();
    let lambda = obj.lambda;

    let mut fd_d = Vec::with_capacity(3 * x.len());
    let mut fd_t = Vec::with_capacity(3 * x.len());
    let mut xp = x.to_vec();
    for v in 0..x.len() {
        for c in 0..3 {
            let orig = xp[v][c];
            xp[v][c] = orig + step;
            let dp = obj.distortion_value(&xp)?;
            let tp = obj.template_value(&xp, spec)?;
            xp[v][c] = orig - step;
            let dm = obj.distortion_value(&xp)?;
            let tm = obj.template_value(&xp, spec)?;
            xp[v][c] = orig;
            fd_d.push(lambda * (dp - dm) / (2.0 * step));
            fd_t.push((tp - tm) / (2.0 * step));
        }
    }
    let theta = spec.theta();
    let mut fd_th = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + step;
        let p = obj.value(x, &spec.with_theta(&t))?;
        t[i] = theta[i] - step;
        let m = obj.value(x, &spec.with_theta(&t))?;
        fd_th.push((p - m) / (2.0 * step));
    }

    let flat = |g: &[Vec3]| g.iter().flat_map(|v| [v.x, v.y, v.z]).collect::<Vec<f64>>();
    let terms = obj.terms(x, spec)?;
    Ok(FdReport {
        distortion: relative_error(&flat(&gd), &fd_d, lambda * terms.distortion, scale),
        template: relative_error(&flat(&gt), &fd_t, terms.template, scale),
        theta: relative_error(&gth, &fd_th, terms.template, scale),
    })
}

/// One mesh and template of a randomized gradient check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub case: usize,
    pub tets: usize,
    pub template: TemplateSpec,
    pub report: FdReport,
}

fn jitter(rng: &mut ChaCha8Rng, mesh: &TetMesh, base: &[Vec3], sigma: f64) -> Vec<Vec3> {
    let mut s = sigma;
    loop {
        let x: Vec<Vec3> = base
            .iter()
            .map(|p| p + Vec3::from_fn(|_, _| rng.gen_range(-s..s)))
            .collect();
        if mesh.tets().iter().all(|t| det6(&t.map(|v| x[v])) > 0.0) {
            return x;
        }
        s *= 0.5;
    }
}

/// Small randomly bent and jittered slabs (at most 360 tets), each checked
/// at a jittered configuration against all three templates. The mesh itself
/// is jittered too so that no tet starts as a scaled copy of a grid cell.
pub fn random_cases(count: usize, seed: u64, rel_step: f64) -> Result<Vec<GradCheckCase>> {
    let mut out = Vec::with_capacity(3 * count);
    for case in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(case as u64));
        let res = [rng.gen_range(3..=5), rng.gen_range(2..=4), rng.gen_range(1..=3)];
        let spec = BentSlabSpec {
            length: rng.gen_range(20.0..40.0),
            width: rng.gen_range(10.0..30.0),
            thickness: rng.gen_range(4.0..10.0),
            bend_angle: rng.gen_range(0.0..2.0),
            resolution: res,
        };
        let slab = bent_slab(&spec)?;
        let cell = (spec.thickness / res[2] as f64).min(spec.width / res[1] as f64);
        let z_pts = jitter(&mut rng, &slab.mesh, slab.mesh.vertices(), 0.1 * cell);
        let (z, _) = TetMesh::new(z_pts, slab.mesh.tets().to_vec(), slab.mesh.frame())?;
        let x = jitter(&mut rng, &z, z.vertices(), 0.15 * cell);
        let topo = boundary_topology(&z)?;
        let labels: Vec<Side> = topo
            .vertices
            .iter()
            .map(|&v| match slab.labels[v] {
                SurfaceLabel::Outer => Side::Maternal,
                SurfaceLabel::Inner => Side::Fetal,
                _ => Side::Margin,
            })
            .collect();
        let lambda = rng.gen_range(0.5..2.0);
        let obj = Objective::new(&z, &topo, Some(&labels), lambda)?;
        let (lo, hi) = bbox_of(&x);
        let half = (hi - lo) / 2.0;
        let h = spec.thickness / 2.0 * rng.gen_range(0.8..1.2);
        let templates = [
            TemplateSpec::ParallelPlanes { h },
            TemplateSpec::SinglePlane { h },
            TemplateSpec::Ellipsoid {
                rx: half.x * rng.gen_range(0.8..1.2),
                ry: half.y * rng.gen_range(0.8..1.2),
                rz: half.z * rng.gen_range(0.8..1.2),
            },
        ];
        let step = rel_step * z.bbox_diagonal();
        for template in templates {
            // Center the configuration so the ellipsoid term is not trivial.
            let c = (lo + hi) / 2.0;
            let xc: Vec<Vec3> = x.iter().map(|p| p - c).collect();
            out.push(GradCheckCase {
                case,
                tets: z.num_tets(),
                template,
                report: fd_check(&obj, &xc, &template, step)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::tests::box_labels;
    use crate::mesh::boundary_topology;
    use crate::synth::axis_box;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (crate::synth::SynthMesh, Objective, Vec<Vec3>) {
        let b = axis_box(6.0, 4.0, 2.0, [3, 2, 2]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        let labels = box_labels(&b.mesh, &topo, 1.0);
        let obj = Objective::new(&b.mesh, &topo, Some(&labels), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = b
            .mesh
            .vertices()
            .iter()
            .map(|p| p + Vec3::from_fn(|_, _| rng.gen_range(-0.1..0.1)))
            .collect();
        (b, obj, x)
    }

    #[test]
    fn identity_configuration_passes() {
        let (b, obj, _) = setup();
        let step = 1e-5 * b.mesh.bbox_diagonal();
        for spec in [
            TemplateSpec::ParallelPlanes { h: 1.3 },
            TemplateSpec::SinglePlane { h: 0.8 },
            TemplateSpec::Ellipsoid {
                rx: 3.5,
                ry: 2.5,
                rz: 1.5,
            },
        ] {
            let r = fd_check(&obj, b.mesh.vertices(), &spec, step).unwrap();
            assert!(r.max() < 1e-6, "{spec:?}: {r:?}");
        }
    }

    #[test]
    fn ellipsoid_radius_gradient() {
        let (b, obj, x) = setup();
        let spec = TemplateSpec::Ellipsoid {
            rx: 2.9,
            ry: 2.1,
            rz: 1.1,
        };
        let r = fd_check(&obj, &x, &spec, 1e-5 * b.mesh.bbox_diagonal()).unwrap();
        assert!(r.max() < 1e-6, "{r:?}");
    }

    #[test]
    fn random_suite_is_small_and_accurate() {
        let cases = random_cases(3, 99, 1e-5).unwrap();
        assert_eq!(cases.len(), 9);
        for c in &cases {
            assert!(c.tets <= 500);
            assert!(c.report.max() < 1e-6, "{c:?}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (b, obj, x) = setup();
        let spec = TemplateSpec::ParallelPlanes { h: 1.1 };
        let step = 1e-5 * b.mesh.bbox_diagonal();
        let r = fd_check_with(&obj, &x, &spec, step, |x, spec| {
            let (_, mut gd) = obj.distortion_gradient(x)?;
            gd[3] *= 1.1;
            let (_, gt, mut gth) = obj.template_gradient(x, spec)?;
            gth[0] *= 0.5;
            Ok((gd, gt, gth))
        })
        .unwrap();
        assert!(r.distortion > 1e-3 && r.theta > 1e-3, "{r:?}");
        assert!(r.template < 1e-6);
    }
}
