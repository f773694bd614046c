//! C interface to `tetflat`.
//!
//! Objects are opaque handles created by `tetflat_*_new`/`_load`/`_create`
//! style functions and released with the matching `_free`. Every fallible
//! function returns a [`TetflatStatus`]; on failure a message is available
//! from [`tetflat_last_error_message`] on the same thread. Panics never cross
//! the boundary: they are reported as `TETFLAT_STATUS_PANIC`.
//!
//! Handles are not synchronized. A handle may move between threads but must
//! not be used from two threads at once.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tetflat::energy::TemplateSpec;
use tetflat::mesh::{boundary_topology, load_mesh, write_tetgen, Frame};
use tetflat::metrics::{report, ReportOptions, DEFAULT_VOXEL_MM};
use tetflat::optimizer::{flatten, FlattenParams, Flattening, TemplateKind};
use tetflat::resample::{pull_back, GridSpec};
use tetflat::synth::{bent_slab, BentSlabSpec};
use tetflat::volume::{load_volume, write_volume, ScalarVolume};
use tetflat::{Error, TetMesh, Vec3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TetflatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    InvalidData = 4,
    /// The optimizer stopped before convergence; the result is still valid.
    NotConverged = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TetflatTemplateKind {
    Planes = 0,
    SinglePlane = 1,
    Ellipsoid = 2,
}

/// Fitted template. `params` is `{h, 0, 0}` for the plane templates and
/// `{rx, ry, rz}` for the ellipsoid.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TetflatTemplate {
    pub kind: TetflatTemplateKind,
    pub params: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TetflatParams {
    pub template_kind: TetflatTemplateKind,
    pub lambda: f64,
    pub beta: f64,
    pub rho: f64,
    pub eps: f64,
    pub max_iters: u64,
    pub gamma: f64,
    pub margin_mm: f64,
    pub seed: u64,
}

/// Scalar summary of a distortion report.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TetflatSummary {
    pub dirichlet_excess_percent: f64,
    /// NaN when no template was given.
    pub template_rms: f64,
    pub mean_abs_log2_det_j: f64,
    pub mean_abs_log2_areal: f64,
    pub mean_abs_log2_metric: f64,
}

pub struct TetflatMesh {
    mesh: TetMesh,
}

pub struct TetflatFlattening {
    source: TetMesh,
    inner: Flattening,
}

pub struct TetflatVolume {
    volume: ScalarVolume,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TetflatStatus {
    match e {
        Error::InvalidParameter(_) => TetflatStatus::InvalidArgument,
        Error::Io { .. } => TetflatStatus::Io,
        Error::EigenNoConvergence { .. } | Error::LinearSolve(_) | Error::FlippedTet { .. } => TetflatStatus::Numerical,
        _ => TetflatStatus::InvalidData,
    }
}

struct Fail(TetflatStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TetflatStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(TetflatStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<TetflatStatus, Fail>) -> TetflatStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TetflatStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut *mut T) -> Result<&'a mut *mut T, Fail> {
    let out = p.as_mut().ok_or_else(|| null("output pointer"))?;
    *out = ptr::null_mut();
    Ok(out)
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<TetflatStatus, Fail> {
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if len < src.len() {
        return Err(Fail(
            TetflatStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(TetflatStatus::Ok)
}

fn flatten_points(points: &[Vec3]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next `tetflat_*` call on the same thread.
#[no_mangle]
pub extern "C" fn tetflat_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tetflat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn tetflat_params_default() -> TetflatParams {
    let p = FlattenParams::default();
    TetflatParams {
        template_kind: TetflatTemplateKind::Planes,
        lambda: p.optimizer.lambda,
        beta: p.optimizer.beta,
        rho: p.optimizer.rho,
        eps: p.optimizer.eps,
        max_iters: p.optimizer.max_iters as u64,
        gamma: p.parcellation.gamma,
        margin_mm: p.parcellation.margin_mm,
        seed: p.parcellation.seed,
    }
}

/// Builds a mesh from `num_vertices` xyz triples and `num_tets` groups of
/// four zero-based vertex indices. Negatively oriented tets are reoriented.
#[no_mangle]
pub unsafe extern "C" fn tetflat_mesh_new(
    vertices: *const f64,
    num_vertices: usize,
    tets: *const u64,
    num_tets: usize,
    out: *mut *mut TetflatMesh,
) -> TetflatStatus {
    guard(|| {
        let out = out_ptr(out)?;
        if vertices.is_null() || tets.is_null() {
            return Err(null("vertex or tet array"));
        }
        let v = std::slice::from_raw_parts(vertices, num_vertices * 3);
        let t = std::slice::from_raw_parts(tets, num_tets * 4);
        let verts = v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        let mut ts = Vec::with_capacity(num_tets);
        for c in t.chunks_exact(4) {
            let mut tet = [0usize; 4];
            for (a, &i) in c.iter().enumerate() {
                tet[a] = usize::try_from(i).map_err(|_| invalid(format!("vertex index {i} out of range")))?;
            }
            ts.push(tet);
        }
        let (mesh, _) = TetMesh::new(verts, ts, Frame::Original)?;
        *out = Box::into_raw(Box::new(TetflatMesh { mesh }));
        Ok(TetflatStatus::Ok)
    })
}

/// Loads `.node`/`.ele` (either file or the stem) or legacy `.vtk`.
#[no_mangle]
pub unsafe extern "C" fn tetflat_mesh_load(path: *const c_char, out: *mut *mut TetflatMesh) -> TetflatStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let path = path_arg(path, "path")?;
        let mesh = load_mesh(&path, None)?.mesh;
        *out = Box::into_raw(Box::new(TetflatMesh { mesh }));
        Ok(TetflatStatus::Ok)
    })
}

/// Synthetic bent slab; `resolution` holds cell counts along length, width
/// and thickness.
#[no_mangle]
pub unsafe extern "C" fn tetflat_mesh_bent_slab(
    length: f64,
    width: f64,
    thickness: f64,
    bend_angle: f64,
    resolution: *const u32,
    out: *mut *mut TetflatMesh,
) -> TetflatStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let r = std::slice::from_raw_parts(resolution.as_ref().ok_or_else(|| null("resolution"))?, 3);
        let spec = BentSlabSpec {
            length,
            width,
            thickness,
            bend_angle,
            resolution: [r[0] as usize, r[1] as usize, r[2] as usize],
        };
        let mesh = bent_slab(&spec)?.mesh;
        *out = Box::into_raw(Box::new(TetflatMesh { mesh }));
        Ok(TetflatStatus::Ok)
    })
}

#[no_mangle]
pub unsafe extern "C" fn tetflat_mesh_write_tetgen(mesh: *const TetflatMesh, stem: *const c_char) -> TetflatStatus {
    guard(|| {
        let m = handle(mesh, "mesh")?;
        write_tetgen(&m.mesh, &path_arg(stem, "stem")?)?;
        Ok(TetflatStatus::Ok)
    })
}

/// Vertex count, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn tetflat_mesh_num_vertices(mesh: *const TetflatMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.num_vertices())
}

/// Tet count, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn tetflat_mesh_num_tets(mesh: *const TetflatMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.num_tets())
}

/// Copies vertex coordinates (xyz interleaved) into `out`, which must hold
/// at least `3 * num_vertices` values.
#[no_mangle]
pub unsafe extern "C" fn tetflat_mesh_vertices(mesh: *const TetflatMesh, out: *mut f64, len: usize) -> TetflatStatus {
    guard(|| copy_out(&flatten_points(handle(mesh, "mesh")?.mesh.vertices()), out, len))
}

#[no_mangle]
pub unsafe extern "C" fn tetflat_mesh_free(mesh: *mut TetflatMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

fn kind_of(k: TetflatTemplateKind) -> TemplateKind {
    match k {
        TetflatTemplateKind::Planes => TemplateKind::Planes,
        TetflatTemplateKind::SinglePlane => TemplateKind::SinglePlane,
        TetflatTemplateKind::Ellipsoid => TemplateKind::Ellipsoid,
    }
}

/// Flattens `mesh`. `params` may be null for defaults. When the iteration
/// budget runs out `*out` is still set and `TETFLAT_STATUS_NOT_CONVERGED` is
/// returned.
#[no_mangle]
pub unsafe extern "C" fn tetflat_flatten(
    mesh: *const TetflatMesh,
    params: *const TetflatParams,
    out: *mut *mut TetflatFlattening,
) -> TetflatStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let m = handle(mesh, "mesh")?;
        let p = params.as_ref().copied().unwrap_or_else(|| tetflat_params_default());
        let mut fp = FlattenParams::default();
        fp.optimizer.lambda = p.lambda;
        fp.optimizer.beta = p.beta;
        fp.optimizer.rho = p.rho;
        fp.optimizer.eps = p.eps;
        fp.optimizer.max_iters = usize::try_from(p.max_iters).map_err(|_| invalid("max_iters too large"))?;
        fp.parcellation.gamma = p.gamma;
        fp.parcellation.margin_mm = p.margin_mm;
        fp.parcellation.seed = p.seed;
        let inner = flatten(&m.mesh, kind_of(p.template_kind), &fp, None)?;
        let converged = inner.result.converged;
        *out = Box::into_raw(Box::new(TetflatFlattening {
            source: m.mesh.clone(),
            inner,
        }));
        Ok(if converged { TetflatStatus::Ok } else { TetflatStatus::NotConverged })
    })
}

#[no_mangle]
pub unsafe extern "C" fn tetflat_flattening_template(
    f: *const TetflatFlattening,
    out: *mut TetflatTemplate,
) -> TetflatStatus {
    guard(|| {
        let f = handle(f, "flattening")?;
        let out = out.as_mut().ok_or_else(|| null("output"))?;
        *out = match f.inner.result.template {
            TemplateSpec::ParallelPlanes { h } => TetflatTemplate {
                kind: TetflatTemplateKind::Planes,
                params: [h, 0.0, 0.0],
            },
            TemplateSpec::SinglePlane { h } => TetflatTemplate {
                kind: TetflatTemplateKind::SinglePlane,
                params: [h, 0.0, 0.0],
            },
            TemplateSpec::Ellipsoid { rx, ry, rz } => TetflatTemplate {
                kind: TetflatTemplateKind::Ellipsoid,
                params: [rx, ry, rz],
            },
        };
        Ok(TetflatStatus::Ok)
    })
}

/// Iterations taken, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn tetflat_flattening_iterations(f: *const TetflatFlattening) -> u64 {
    f.as_ref().map_or(0, |f| f.inner.result.iterations as u64)
}

#[no_mangle]
pub unsafe extern "C" fn tetflat_flattening_converged(f: *const TetflatFlattening) -> bool {
    f.as_ref().is_some_and(|f| f.inner.result.converged)
}

/// Copies mapped vertex positions (xyz interleaved, template frame).
#[no_mangle]
pub unsafe extern "C" fn tetflat_flattening_positions(
    f: *const TetflatFlattening,
    out: *mut f64,
    len: usize,
) -> TetflatStatus {
    guard(|| copy_out(&flatten_points(&handle(f, "flattening")?.inner.result.x), out, len))
}

/// New mesh handle with the source connectivity and mapped positions.
#[no_mangle]
pub unsafe extern "C" fn tetflat_flattening_mapped_mesh(
    f: *const TetflatFlattening,
    out: *mut *mut TetflatMesh,
) -> TetflatStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let f = handle(f, "flattening")?;
        *out = Box::into_raw(Box::new(TetflatMesh {
            mesh: f.inner.mapped_mesh(&f.source),
        }));
        Ok(TetflatStatus::Ok)
    })
}

#[no_mangle]
pub unsafe extern "C" fn tetflat_flattening_free(f: *mut TetflatFlattening) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Distortion summary of the flattening, with template RMS in voxels of
/// `voxel_mm` (pass 0 for the default 3 mm).
#[no_mangle]
pub unsafe extern "C" fn tetflat_flattening_summary(
    f: *const TetflatFlattening,
    voxel_mm: f64,
    out: *mut TetflatSummary,
) -> TetflatStatus {
    guard(|| {
        let f = handle(f, "flattening")?;
        let out = out.as_mut().ok_or_else(|| null("output"))?;
        let opts = ReportOptions {
            voxel_mm: if voxel_mm == 0.0 { DEFAULT_VOXEL_MM } else { voxel_mm },
            ..Default::default()
        };
        let labels = f.inner.parcellation.as_ref().map(|p| p.labels.as_slice());
        let rep = report(
            &f.source,
            &f.inner.result.x,
            &f.inner.topology,
            Some((&f.inner.result.template, labels)),
            &opts,
        )?;
        *out = TetflatSummary {
            dirichlet_excess_percent: rep.dirichlet_excess_percent,
            template_rms: rep.template_fit.map_or(f64::NAN, |t| t.rms),
            mean_abs_log2_det_j: rep.volumetric.abs_mean,
            mean_abs_log2_areal: rep.areal.abs_mean,
            mean_abs_log2_metric: rep.metric.abs_mean,
        };
        Ok(TetflatStatus::Ok)
    })
}

/// Full distortion report of `x` against `z` as a JSON string, to be
/// released with [`tetflat_string_free`].
#[no_mangle]
pub unsafe extern "C" fn tetflat_report_json(
    z: *const TetflatMesh,
    x: *const TetflatMesh,
    out: *mut *mut c_char,
) -> TetflatStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let z = &handle(z, "z")?.mesh;
        let x = &handle(x, "x")?.mesh;
        if z.tets() != x.tets() {
            return Err(Fail(TetflatStatus::InvalidData, "meshes have different tets".into()));
        }
        let topo = boundary_topology(z)?;
        let rep = report(z, x.vertices(), &topo, None, &ReportOptions::default())?;
        let text = CString::new(rep.to_json()?).map_err(|e| Fail(TetflatStatus::InvalidData, e.to_string()))?;
        *out = text.into_raw();
        Ok(TetflatStatus::Ok)
    })
}

#[no_mangle]
pub unsafe extern "C" fn tetflat_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn tetflat_volume_load(path: *const c_char, out: *mut *mut TetflatVolume) -> TetflatStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let volume = load_volume(&path_arg(path, "path")?, None)?;
        *out = Box::into_raw(Box::new(TetflatVolume { volume }));
        Ok(TetflatStatus::Ok)
    })
}

/// Volume from x-fastest samples.
#[no_mangle]
pub unsafe extern "C" fn tetflat_volume_new(
    dims: *const usize,
    spacing: *const f64,
    origin: *const f64,
    data: *const f64,
    out: *mut *mut TetflatVolume,
) -> TetflatStatus {
    guard(|| {
        let out = out_ptr(out)?;
        if dims.is_null() || spacing.is_null() || origin.is_null() || data.is_null() {
            return Err(null("volume argument"));
        }
        let d = *dims.cast::<[usize; 3]>();
        let n = d.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).ok_or_else(|| invalid("dims overflow"))?;
        let volume = ScalarVolume::new(
            d,
            *spacing.cast::<[f64; 3]>(),
            *origin.cast::<[f64; 3]>(),
            std::slice::from_raw_parts(data, n).to_vec(),
        )?;
        *out = Box::into_raw(Box::new(TetflatVolume { volume }));
        Ok(TetflatStatus::Ok)
    })
}

#[no_mangle]
pub unsafe extern "C" fn tetflat_volume_write(v: *const TetflatVolume, path: *const c_char) -> TetflatStatus {
    guard(|| {
        write_volume(&handle(v, "volume")?.volume, &path_arg(path, "path")?, None)?;
        Ok(TetflatStatus::Ok)
    })
}

/// Writes the three grid dimensions into `out`.
#[no_mangle]
pub unsafe extern "C" fn tetflat_volume_dims(v: *const TetflatVolume, out: *mut usize) -> TetflatStatus {
    guard(|| {
        let v = handle(v, "volume")?;
        if out.is_null() {
            return Err(null("output"));
        }
        ptr::copy_nonoverlapping(v.volume.dims.as_ptr(), out, 3);
        Ok(TetflatStatus::Ok)
    })
}

/// Copies samples (x fastest; NaN outside the mesh after resampling).
#[no_mangle]
pub unsafe extern "C" fn tetflat_volume_data(v: *const TetflatVolume, out: *mut f64, len: usize) -> TetflatStatus {
    guard(|| copy_out(&handle(v, "volume")?.volume.data, out, len))
}

#[no_mangle]
pub unsafe extern "C" fn tetflat_volume_free(v: *mut TetflatVolume) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Pulls `volume` (original frame of `z`) back onto a grid covering `x`
/// with the given spacing (null for the input spacing).
#[no_mangle]
pub unsafe extern "C" fn tetflat_resample(
    volume: *const TetflatVolume,
    z: *const TetflatMesh,
    x: *const TetflatMesh,
    spacing: *const f64,
    out: *mut *mut TetflatVolume,
) -> TetflatStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let vol = &handle(volume, "volume")?.volume;
        let x = &handle(x, "x")?.mesh;
        let sp = if spacing.is_null() { vol.spacing } else { *spacing.cast::<[f64; 3]>() };
        let grid = GridSpec::covering(x, sp)?;
        let volume = pull_back(vol, &handle(z, "z")?.mesh, x, &grid)?;
        *out = Box::into_raw(Box::new(TetflatVolume { volume }));
        Ok(TetflatStatus::Ok)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn message() -> String {
        let p = tetflat_last_error_message();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn null_arguments_are_reported() {
        unsafe {
            let mut m: *mut TetflatMesh = ptr::null_mut();
            assert_eq!(tetflat_mesh_load(ptr::null(), &mut m), TetflatStatus::NullPointer);
            assert!(m.is_null());
            assert!(message().contains("path"));
            assert_eq!(tetflat_mesh_num_tets(ptr::null()), 0);
            tetflat_mesh_free(ptr::null_mut());
        }
    }

    #[test]
    fn success_clears_last_error() {
        unsafe {
            let mut m: *mut TetflatMesh = ptr::null_mut();
            let bad = CString::new("/nonexistent/x.node").unwrap();
            assert_eq!(tetflat_mesh_load(bad.as_ptr(), &mut m), TetflatStatus::Io);
            assert!(!message().is_empty());
            let v = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
            let t = [0u64, 1, 2, 3];
            assert_eq!(tetflat_mesh_new(v.as_ptr(), 4, t.as_ptr(), 1, &mut m), TetflatStatus::Ok);
            assert!(tetflat_last_error_message().is_null());
            let mut buf = [0.0; 11];
            assert_eq!(tetflat_mesh_vertices(m, buf.as_mut_ptr(), 11), TetflatStatus::BufferTooSmall);
            let mut buf = [0.0; 12];
            assert_eq!(tetflat_mesh_vertices(m, buf.as_mut_ptr(), 12), TetflatStatus::Ok);
            assert_eq!(buf, v);
            tetflat_mesh_free(m);
        }
    }

    #[test]
    fn bad_index_is_invalid_data() {
        unsafe {
            let mut m: *mut TetflatMesh = ptr::null_mut();
            let v = [0.0; 12];
            let t = [0u64, 1, 2, 9];
            let s = tetflat_mesh_new(v.as_ptr(), 4, t.as_ptr(), 1, &mut m);
            assert_eq!(s, TetflatStatus::InvalidData);
            assert!(m.is_null());
        }
    }
}
