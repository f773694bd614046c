//! The `tetflat` command-line tool.
//!
//! Every subcommand writes a `manifest.json` (or `<out>.manifest.json`)
//! next to its outputs recording configuration, input hashes, outputs, wall
//! time and exit status. Exit codes: 0 success, 2 usage error, 3 data error,
//! 4 no convergence (artifacts are still written).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::baseline2d::{run_baseline, DEFAULT_SLICE_MM};
use crate::energy::{random_cases, DeformationCache, TemplateSpec};
use crate::error::{Error, Result};
use crate::mesh::{
    boundary_topology, load_mesh, tetgen_paths, write_tetgen, write_vtk, write_vtk_polydata, TetMesh, VtkField,
};
use crate::metrics::{report, ReportOptions, DEFAULT_PROFILE_BINS, DEFAULT_VOXEL_MM};
use crate::optimizer::{flatten, FlattenParams, OptimizerParams, TemplateKind, ThetaStep};
use crate::parcellation::{parcellate, BoundaryParcellation, ParcellationParams, Side};
use crate::resample::{pull_back, GridSpec};
use crate::synth::{bent_slab, hemispherical_shell, BentSlabSpec, ShellSpec};
use crate::volume::{load_volume, write_volume};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

/// Lambda values used by `--lambda-sweep` without explicit values.
pub const DEFAULT_SWEEP: [f64; 7] = [1e-3, 1e-2, 0.1, 1.0, 5.0, 10.0, 1e2];

#[derive(Debug, Parser)]
#[command(name = "tetflat", version, about = "Locally injective volumetric flattening of tetrahedral meshes")]
pub struct Cli {
    /// Worker threads for data-parallel sections (default: all cores).
    #[arg(long, global = true, env = "TETFLAT_THREADS")]
    pub threads: Option<usize>,
    /// Log verbosity: -v info, -vv debug. TETFLAT_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic test solid.
    Synth(SynthArgs),
    /// Split the boundary into fetal side, maternal side and margin.
    Parcellate(ParcellateArgs),
    /// Map a mesh onto a flat template.
    Flatten(FlattenArgs),
    /// Pull a scalar volume back into the flattened frame.
    Resample(ResampleArgs),
    /// Fit and distortion report for a flattened mesh.
    Metrics(MetricsArgs),
    /// Slice-and-disk baseline and its comparison with the volumetric map.
    Baseline2d(BaselineArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    BentSlab,
    Box,
    Shell,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "bent-slab", env = "TETFLAT_SHAPE")]
    pub shape: Shape,
    #[arg(long, default_value_t = 120.0)]
    pub length: f64,
    #[arg(long, default_value_t = 80.0)]
    pub width: f64,
    /// Slab or shell thickness in mm.
    #[arg(long, default_value_t = 20.0)]
    pub thickness: f64,
    /// Total bend angle in radians (ignored for box and shell).
    #[arg(long, default_value_t = 2.0 * std::f64::consts::PI / 3.0)]
    pub bend_angle: f64,
    /// Hexahedral cells along length, width and thickness.
    #[arg(long, value_delimiter = ',', default_values_t = [20, 12, 4])]
    pub resolution: Vec<usize>,
    #[arg(long, default_value_t = 60.0)]
    pub outer_radius: f64,
    #[arg(long, default_value_t = 10)]
    pub rings: usize,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    /// File stem inside the output directory.
    #[arg(long, default_value = "mesh")]
    pub name: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct ParcellateArgs {
    /// Mesh as `.node`/`.ele` (either file or the stem) or `.vtk`.
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long, default_value_t = 20.0, env = "TETFLAT_GAMMA")]
    pub gamma: f64,
    #[arg(long, default_value_t = 15.0, env = "TETFLAT_MARGIN_MM")]
    pub margin_mm: f64,
    #[arg(long, default_value_t = 0, env = "TETFLAT_SEED")]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct FlattenArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long, value_enum, default_value = "planes", env = "TETFLAT_TEMPLATE")]
    pub template: TemplateKind,
    #[arg(long, default_value_t = 1.0, env = "TETFLAT_LAMBDA")]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.9, env = "TETFLAT_BETA")]
    pub beta: f64,
    #[arg(long, default_value_t = 0.5, env = "TETFLAT_RHO")]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-4, env = "TETFLAT_EPS")]
    pub eps: f64,
    #[arg(long, default_value_t = 20_000, env = "TETFLAT_MAX_ITERS")]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value = "separate", env = "TETFLAT_THETA_STEP")]
    pub theta_step: ThetaStep,
    #[arg(long, default_value_t = 15.0, env = "TETFLAT_MARGIN_MM")]
    pub margin_mm: f64,
    #[arg(long, default_value_t = 20.0, env = "TETFLAT_GAMMA")]
    pub gamma: f64,
    #[arg(long, default_value_t = 0, env = "TETFLAT_SEED")]
    pub seed: u64,
    /// Labelmap (nonzero inside) used to initialize the half-thickness.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_VOXEL_MM, env = "TETFLAT_VOXEL_MM")]
    pub voxel_mm: f64,
    /// Run once per lambda and write `sweep.json` instead of a single map.
    /// Without values, sweeps 1e-3, 1e-2, 0.1, 1, 5, 10, 100.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub lambda_sweep: Option<Vec<f64>>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct ResampleArgs {
    /// Input volume in the original frame (`.nrrd`, or `.json` + `.raw`).
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub mesh_z: PathBuf,
    #[arg(long)]
    pub mesh_x: PathBuf,
    /// Output spacing: one value or three comma-separated (default: input spacing).
    #[arg(long, value_delimiter = ',')]
    pub spacing: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct MetricsArgs {
    #[arg(long)]
    pub mesh_z: PathBuf,
    #[arg(long)]
    pub mesh_x: PathBuf,
    /// `parcellation.json` from `parcellate` or `flatten`.
    #[arg(long)]
    pub parcellation: Option<PathBuf>,
    /// `result.json` from `flatten`, supplying the fitted template.
    #[arg(long)]
    pub result: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_VOXEL_MM, env = "TETFLAT_VOXEL_MM")]
    pub voxel_mm: f64,
    #[arg(long, default_value_t = DEFAULT_PROFILE_BINS)]
    pub bins: usize,
    /// Report path; per-element CSVs are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct BaselineArgs {
    #[arg(long)]
    pub mesh_z: PathBuf,
    #[arg(long)]
    pub mesh_x: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SLICE_MM)]
    pub spacing_mm: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct GradcheckArgs {
    /// Number of random meshes; each is checked against all three templates.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 0, env = "TETFLAT_SEED")]
    pub seed: u64,
    /// Central-difference step relative to the bbox diagonal.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Status {
    Ok,
    NotConverged,
    Error,
}

#[derive(Debug, Serialize)]
struct InputRecord {
    path: PathBuf,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    argv: Vec<String>,
    config: Value,
    threads: usize,
    inputs: Vec<InputRecord>,
    outputs: Vec<PathBuf>,
    summary: Value,
    status: Status,
    exit_code: i32,
    message: Option<String>,
    wall_time_s: f64,
}

/// Collects what a subcommand read and wrote.
struct Session {
    inputs: Vec<InputRecord>,
    outputs: Vec<PathBuf>,
    summary: Value,
}

impl Session {
    fn hash_file(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(InputRecord {
            path: path.to_path_buf(),
            bytes: bytes.len() as u64,
            sha256: format!("{:x}", Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn load_mesh(&mut self, path: &Path) -> Result<TetMesh> {
        let loaded = load_mesh(path, None)?;
        if path.extension().is_some_and(|e| e == "vtk") {
            self.hash_file(path)?;
        } else {
            let (node, ele) = tetgen_paths(path);
            self.hash_file(&node)?;
            self.hash_file(&ele)?;
        }
        if loaded.reoriented > 0 {
            log::warn!("{}: reoriented {} tets", path.display(), loaded.reoriented);
        }
        Ok(loaded.mesh)
    }

    fn read_json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> Result<T> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.hash_file(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn wrote(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    fn write_json(&mut self, path: PathBuf, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.wrote(path);
        Ok(())
    }

    fn write_tetgen(&mut self, mesh: &TetMesh, stem: &Path) -> Result<()> {
        write_tetgen(mesh, stem)?;
        let (node, ele) = tetgen_paths(stem);
        self.wrote(node);
        self.wrote(ele);
        Ok(())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    init_logging(cli.verbose);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    let threads = pool.current_num_threads();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    pool.install(|| execute(&cli.command, argv, threads))
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let env = env_logger::Env::new().filter_or("TETFLAT_LOG", level);
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn manifest_path(command: &Command) -> (&'static str, PathBuf, Value) {
    let cfg = |v: &dyn erased::Config| v.to_value();
    match command {
        Command::Synth(a) => ("synth", a.out_dir.join("manifest.json"), cfg(a)),
        Command::Parcellate(a) => ("parcellate", a.out_dir.join("manifest.json"), cfg(a)),
        Command::Flatten(a) => ("flatten", a.out_dir.join("manifest.json"), cfg(a)),
        Command::Resample(a) => ("resample", sibling(&a.out, "manifest.json"), cfg(a)),
        Command::Metrics(a) => ("metrics", sibling(&a.out, "manifest.json"), cfg(a)),
        Command::Baseline2d(a) => ("baseline2d", a.out_dir.join("manifest.json"), cfg(a)),
        Command::Gradcheck(a) => ("gradcheck", a.out_dir.join("manifest.json"), cfg(a)),
    }
}

mod erased {
    use serde::Serialize;
    use serde_json::Value;

    pub trait Config {
        fn to_value(&self) -> Value;
    }

    impl<T: Serialize> Config for T {
        fn to_value(&self) -> Value {
            serde_json::to_value(self).unwrap_or(Value::Null)
        }
    }
}

/// `<out>.<suffix>` next to a file output.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn execute(command: &Command, argv: Vec<String>, threads: usize) -> i32 {
    let start = Instant::now();
    let (name, manifest_at, config) = manifest_path(command);
    let mut session = Session {
        inputs: Vec::new(),
        outputs: Vec::new(),
        summary: Value::Null,
    };
    let outcome = match command {
        Command::Synth(a) => cmd_synth(a, &mut session),
        Command::Parcellate(a) => cmd_parcellate(a, &mut session),
        Command::Flatten(a) => cmd_flatten(a, &mut session),
        Command::Resample(a) => cmd_resample(a, &mut session),
        Command::Metrics(a) => cmd_metrics(a, &mut session),
        Command::Baseline2d(a) => cmd_baseline(a, &mut session),
        Command::Gradcheck(a) => cmd_gradcheck(a, &mut session),
    };
    let (status, code, message) = match &outcome {
        Ok(Status::Ok) => (Status::Ok, 0, None),
        Ok(s) => (*s, EXIT_NOT_CONVERGED, None),
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_usage() { EXIT_USAGE } else { EXIT_DATA };
            (Status::Error, code, Some(e.to_string()))
        }
    };
    let manifest = Manifest {
        tool: "tetflat",
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        argv,
        config,
        threads,
        inputs: session.inputs,
        outputs: session.outputs,
        summary: session.summary,
        status,
        exit_code: code,
        message,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let dir_ok = match manifest_at.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(p) => fs::create_dir_all(p).is_ok(),
        None => true,
    };
    if dir_ok {
        match serde_json::to_string_pretty(&manifest) {
            Ok(text) => {
                if let Err(e) = fs::write(&manifest_at, text + "\n") {
                    eprintln!("warning: cannot write {}: {e}", manifest_at.display());
                }
            }
            Err(e) => eprintln!("warning: cannot serialize manifest: {e}"),
        }
    }
    code
}

fn cmd_synth(a: &SynthArgs, s: &mut Session) -> Result<Status> {
    let resolution: [usize; 3] = a
        .resolution
        .as_slice()
        .try_into()
        .map_err(|_| usage("--resolution takes three values"))?;
    let synth = match a.shape {
        Shape::BentSlab | Shape::Box => bent_slab(&BentSlabSpec {
            length: a.length,
            width: a.width,
            thickness: a.thickness,
            bend_angle: if a.shape == Shape::Box { 0.0 } else { a.bend_angle },
            resolution,
        })?,
        Shape::Shell => hemispherical_shell(&ShellSpec {
            outer_radius: a.outer_radius,
            thickness: a.thickness,
            rings: a.rings,
            layers: a.layers,
        })?,
    };
    create_dir(&a.out_dir)?;
    let stem = a.out_dir.join(&a.name);
    s.write_tetgen(&synth.mesh, &stem)?;
    s.write_json(a.out_dir.join(format!("{}.json", a.name)), &synth.sidecar())?;
    s.summary = json!({ "vertices": synth.mesh.num_vertices(), "tets": synth.mesh.num_tets() });
    Ok(Status::Ok)
}

fn label_code(topo: &crate::mesh::BoundaryTopology, labels: &[Side], n: usize) -> Vec<f64> {
    let mut out = vec![-1.0; n];
    for (m, &v) in topo.vertices.iter().enumerate() {
        out[v] = match labels[m] {
            Side::Fetal => 0.0,
            Side::Maternal => 1.0,
            Side::Margin => 2.0,
        };
    }
    out
}

fn cmd_parcellate(a: &ParcellateArgs, s: &mut Session) -> Result<Status> {
    let mesh = s.load_mesh(&a.mesh)?;
    let topo = boundary_topology(&mesh)?;
    let params = ParcellationParams {
        gamma: a.gamma,
        margin_mm: a.margin_mm,
        seed: a.seed,
    };
    let parc = parcellate(&mesh, &topo, &params)?;
    create_dir(&a.out_dir)?;
    s.write_json(a.out_dir.join("parcellation.json"), &parc)?;
    let path = a.out_dir.join("boundary.vtk");
    let codes = label_code(&topo, &parc.labels, mesh.num_vertices());
    let local: Vec<f64> = topo.vertices.iter().map(|&v| codes[v]).collect();
    write_vtk_polydata(
        &topo.positions(mesh.vertices()),
        &topo.local_triangles(),
        &[VtkField::point("side", local), VtkField::point("fiedler", parc.fiedler.clone())],
        &path,
    )?;
    s.wrote(path);
    s.summary = serde_json::to_value(parc.counts())?;
    Ok(Status::Ok)
}

fn flatten_params(a: &FlattenArgs, lambda: f64) -> FlattenParams {
    FlattenParams {
        optimizer: OptimizerParams {
            lambda,
            beta: a.beta,
            rho: a.rho,
            eps: a.eps,
            max_iters: a.max_iters,
            theta_step: a.theta_step,
        },
        parcellation: ParcellationParams {
            gamma: a.gamma,
            margin_mm: a.margin_mm,
            seed: a.seed,
        },
    }
}

#[derive(Debug, Serialize)]
struct SweepPoint {
    lambda: f64,
    template: TemplateSpec,
    template_rms: f64,
    dirichlet_excess_percent: f64,
    converged: bool,
    iterations: usize,
}

fn cmd_flatten(a: &FlattenArgs, s: &mut Session) -> Result<Status> {
    if !(a.voxel_mm > 0.0) {
        return Err(usage(format!("--voxel-mm must be positive, got {}", a.voxel_mm)));
    }
    flatten_params(a, a.lambda).optimizer.validate()?;
    for &l in a.lambda_sweep.iter().flatten() {
        flatten_params(a, l).optimizer.validate()?;
    }
    let z = s.load_mesh(&a.mesh)?;
    let volume = match &a.volume {
        Some(p) => {
            let v = load_volume(p, None)?;
            s.hash_file(p)?;
            Some(v)
        }
        None => None,
    };
    create_dir(&a.out_dir)?;
    let opts = ReportOptions {
        voxel_mm: a.voxel_mm,
        profile_bins: DEFAULT_PROFILE_BINS,
    };

    if let Some(list) = &a.lambda_sweep {
        let lambdas: Vec<f64> = if list.is_empty() { DEFAULT_SWEEP.to_vec() } else { list.clone() };
        let mut points = Vec::new();
        for &lambda in &lambdas {
            let f = flatten(&z, a.template, &flatten_params(a, lambda), volume.as_ref())?;
            let labels = f.parcellation.as_ref().map(|p| p.labels.as_slice());
            let rep = report(&z, &f.result.x, &f.topology, Some((&f.result.template, labels)), &opts)?;
            points.push(SweepPoint {
                lambda,
                template: f.result.template,
                template_rms: rep.template_fit.map_or(f64::NAN, |t| t.rms),
                dirichlet_excess_percent: rep.dirichlet_excess_percent,
                converged: f.result.converged,
                iterations: f.result.iterations,
            });
        }
        let all = points.iter().all(|p| p.converged);
        s.write_json(a.out_dir.join("sweep.json"), &points)?;
        s.summary = json!({ "lambdas": lambdas, "converged": all });
        return Ok(if all { Status::Ok } else { Status::NotConverged });
    }

    let f = flatten(&z, a.template, &flatten_params(a, a.lambda), volume.as_ref())?;
    let r = &f.result;
    let mapped = f.mapped_mesh(&z);
    s.write_tetgen(&mapped, &a.out_dir.join("flattened"))?;

    let labels = f.parcellation.as_ref().map(|p| p.labels.as_slice());
    let rep = report(&z, &r.x, &f.topology, Some((&r.template, labels)), &opts)?;
    let cache = DeformationCache::new(&z)?;
    let density: Vec<f64> = cache
        .jacobians(&r.x)
        .iter()
        .map(|j| crate::energy::dirichlet_density(j).unwrap_or(f64::INFINITY))
        .collect();
    let mut fields = vec![
        VtkField::cell("log2_det_j", rep.log2_det_j.clone()),
        VtkField::cell("dirichlet", density),
    ];
    if let Some(p) = &f.parcellation {
        fields.push(VtkField::point("side", label_code(&f.topology, &p.labels, z.num_vertices())));
        s.write_json(a.out_dir.join("parcellation.json"), p)?;
    }
    let vtk = a.out_dir.join("flattened.vtk");
    write_vtk(&mapped, &fields, &vtk)?;
    s.wrote(vtk);

    s.write_json(
        a.out_dir.join("result.json"),
        &json!({
            "template_kind": a.template,
            "initial": f.initial,
            "template": r.template,
            "alignment": f.alignment,
            "termination": r.termination,
            "converged": r.converged,
            "iterations": r.iterations,
            "trace": r.trace,
            "preliminary": f.preliminary,
        }),
    )?;
    let report_path = a.out_dir.join("report.json");
    rep.write_json(&report_path)?;
    s.wrote(report_path);

    s.summary = json!({
        "lambda": a.lambda,
        "converged": r.converged,
        "termination": r.termination,
        "iterations": r.iterations,
        "template": r.template,
        "template_rms_voxels": rep.template_fit.map(|t| t.rms),
        "dirichlet_excess_percent": rep.dirichlet_excess_percent,
    });
    Ok(if r.converged { Status::Ok } else { Status::NotConverged })
}

fn cmd_resample(a: &ResampleArgs, s: &mut Session) -> Result<Status> {
    let vol = load_volume(&a.volume, None)?;
    s.hash_file(&a.volume)?;
    let z = s.load_mesh(&a.mesh_z)?;
    let x = s.load_mesh(&a.mesh_x)?;
    let spacing = match a.spacing.as_deref() {
        None => vol.spacing,
        Some([v]) => [*v; 3],
        Some([a, b, c]) => [*a, *b, *c],
        Some(other) => return Err(usage(format!("--spacing takes 1 or 3 values, got {}", other.len()))),
    };
    let grid = GridSpec::covering(&x, spacing)?;
    let out = pull_back(&vol, &z, &x, &grid)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_volume(&out, &a.out, None)?;
    s.wrote(a.out.clone());
    let inside = out.data.iter().filter(|v| !v.is_nan()).count();
    s.summary = json!({ "dims": grid.dims, "inside_voxels": inside });
    Ok(Status::Ok)
}

fn cmd_metrics(a: &MetricsArgs, s: &mut Session) -> Result<Status> {
    let z = s.load_mesh(&a.mesh_z)?;
    let x = s.load_mesh(&a.mesh_x)?;
    if x.tets() != z.tets() {
        return Err(Error::ConnectivityMismatch(format!(
            "{} and {} have different tets",
            a.mesh_z.display(),
            a.mesh_x.display()
        )));
    }
    let topo = boundary_topology(&z)?;
    let parc: Option<BoundaryParcellation> = a.parcellation.as_deref().map(|p| s.read_json(p)).transpose()?;
    let template: Option<TemplateSpec> = match a.result.as_deref() {
        Some(p) => {
            let v: Value = s.read_json(p)?;
            Some(serde_json::from_value(v.get("template").cloned().unwrap_or(Value::Null))?)
        }
        None => None,
    };
    if let (Some(t), None) = (&template, &parc) {
        if t.uses_labels() {
            return Err(usage(format!("the {} template needs --parcellation", t.name())));
        }
    }
    let fit = template.as_ref().map(|t| (t, parc.as_ref().map(|p| p.labels.as_slice())));
    let opts = ReportOptions {
        voxel_mm: a.voxel_mm,
        profile_bins: a.bins,
    };
    let rep = report(&z, x.vertices(), &topo, fit, &opts)?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(dir)?;
    rep.write_json(&a.out)?;
    s.wrote(a.out.clone());
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    for p in rep.write_csvs(dir, stem, &z, &topo)? {
        s.wrote(p);
    }
    s.summary = json!({
        "dirichlet_excess_percent": rep.dirichlet_excess_percent,
        "template_rms": rep.template_fit.map(|t| t.rms),
    });
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct SliceRow {
    slice: usize,
    triangle: usize,
    boundary_adjacent: bool,
    volumetric_log2_areal: f64,
    baseline_log2_areal: f64,
}

fn cmd_baseline(a: &BaselineArgs, s: &mut Session) -> Result<Status> {
    let z = s.load_mesh(&a.mesh_z)?;
    let x = s.load_mesh(&a.mesh_x)?;
    if x.tets() != z.tets() {
        return Err(Error::ConnectivityMismatch("meshes have different tets".into()));
    }
    let run = run_baseline(x.vertices(), &z, a.spacing_mm)?;
    create_dir(&a.out_dir)?;
    let csv_path = a.out_dir.join("distortion.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| usage(format!("{}: {e}", csv_path.display())))?;
    for (i, (surf, emb)) in run.surfaces.iter().zip(&run.embeddings).enumerate() {
        let uv = emb.as_points();
        let base = crate::metrics::areal_distortion(&uv, &surf.original, &surf.triangles);
        let vol = crate::metrics::areal_distortion(&surf.template, &surf.original, &surf.triangles);
        let mut on_b = vec![false; uv.len()];
        for &b in &surf.boundary {
            on_b[b] = true;
        }
        for (t, tri) in surf.triangles.iter().enumerate() {
            w.serialize(SliceRow {
                slice: i,
                triangle: t,
                boundary_adjacent: tri.iter().any(|&v| on_b[v]),
                volumetric_log2_areal: vol[t],
                baseline_log2_areal: base[t],
            })
            .map_err(|e| usage(format!("{}: {e}", csv_path.display())))?;
        }
        let path = a.out_dir.join(format!("slice_{i:03}.vtk"));
        write_vtk_polydata(&uv, &surf.triangles, &[VtkField::cell("log2_areal", base)], &path)?;
        s.wrote(path);
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    s.wrote(csv_path);
    s.write_json(a.out_dir.join("comparison.json"), &run.comparison)?;
    s.summary = json!({ "slices": run.comparison.slices, "skipped": run.comparison.skipped });
    Ok(Status::Ok)
}

fn cmd_gradcheck(a: &GradcheckArgs, s: &mut Session) -> Result<Status> {
    if !(a.step > 0.0) {
        return Err(usage("--step must be positive"));
    }
    let cases = random_cases(a.count, a.seed, a.step)?;
    let worst = cases.iter().map(|c| c.report.max()).fold(0.0, f64::max);
    create_dir(&a.out_dir)?;
    s.write_json(a.out_dir.join("gradcheck.json"), &cases)?;
    s.summary = json!({ "cases": cases.len(), "worst_relative_error": worst, "tolerance": a.tolerance });
    println!("{} checks, worst relative error {worst:e}", cases.len());
    Ok(if worst < a.tolerance { Status::Ok } else { Status::NotConverged })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let cli = Cli::try_parse_from(["tetflat", "flatten", "--mesh", "m.node", "--out-dir", "o"]).unwrap();
        let Command::Flatten(f) = cli.command else { panic!() };
        assert_eq!((f.lambda, f.beta, f.rho, f.eps, f.gamma, f.margin_mm), (1.0, 0.9, 0.5, 1e-4, 20.0, 15.0));
        assert_eq!(f.voxel_mm, 3.0);
        assert_eq!(f.max_iters, 20_000);
        assert!(f.lambda_sweep.is_none());
    }

    #[test]
    fn sweep_flag_without_values() {
        let cli =
            Cli::try_parse_from(["tetflat", "flatten", "--mesh", "m", "--out-dir", "o", "--lambda-sweep"]).unwrap();
        let Command::Flatten(f) = cli.command else { panic!() };
        assert_eq!(f.lambda_sweep, Some(vec![]));
        let cli = Cli::try_parse_from(["tetflat", "flatten", "--mesh", "m", "--out-dir", "o", "--lambda-sweep", "0.1,1,5"])
            .unwrap();
        let Command::Flatten(f) = cli.command else { panic!() };
        assert_eq!(f.lambda_sweep, Some(vec![0.1, 1.0, 5.0]));
    }

    #[test]
    fn bad_flag_is_a_usage_error() {
        assert_eq!(run(["tetflat", "flatten", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["tetflat"]), EXIT_USAGE);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let args = ["tetflat", "flatten", "--mesh", "missing.node", "--lambda", "-1", "--out-dir"];
        let mut argv: Vec<OsString> = args.iter().map(OsString::from).collect();
        argv.push(out.clone().into());
        assert_eq!(run(argv), EXIT_USAGE);
        let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["status"], "error");
        assert_eq!(m["exit_code"], EXIT_USAGE);
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("a/out.nrrd"), "manifest.json"), PathBuf::from("a/out.nrrd.manifest.json"));
    }
}
