//! `raycal`: simulate lens aberrations, fit pinhole cameras to ray bundles,
//! undistort image sequences, run the DDPM demo, evaluate predictions and
//! run the acceptance self-test.
//!
//! Exit codes: 0 success, 1 check failure, 2 invalid or degenerate input,
//! 3 non-convergence, 64 usage error.

mod meta;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use raycal::attention::{edge_map, CannyParams};
use raycal::diffusion::{
    directions_of, loss_angular, loss_denoise, make_schedule, normalize_directions, reverse_sample_with,
    NoiseInjection, OracleDenoiser,
};
use raycal::distortion::{flow_from_rays, remap_image, DistortionField};
use raycal::fit::fit_pinhole;
use raycal::image::Image;
use raycal::lens_db::{augment_sequence, load_database, sample_profile, LensCategory, LensDatabase, BUNDLED_FIXTURE};
use raycal::metrics::evaluate;
use raycal::ray_camera::{Intrinsics, RayBundle};
use raycal::rng::seeded;
use raycal::scene::Scene;
use raycal::selftest::{run_all, SelftestOptions};
use raycal::synth::orbit_poses;

use meta::{write_file, write_json_with_meta, write_manifest, RunMeta};

/// `println!` that tolerates a closed stdout (e.g. output piped into `head`).
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

const EXIT_CHECK: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_CONVERGENCE: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Check(String),
    Lib(raycal::Error),
    Io(String),
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Check(_) | CliError::Internal(_) => EXIT_CHECK,
            CliError::Io(_) => EXIT_INPUT,
            CliError::Lib(e) => match e {
                raycal::Error::Convergence { .. } => EXIT_CONVERGENCE,
                raycal::Error::Contract(_) => EXIT_CHECK,
                _ => EXIT_INPUT,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<raycal::Error> for CliError {
    fn from(e: raycal::Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "raycal", version, about = "Ray-bundle camera calibration toolkit")]
struct Cli {
    /// Seed for every random draw; echoed into all outputs.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Distort an image sequence with one lens record and write ground truth.
    Simulate(SimulateArgs),
    /// Undistort an image sequence from a ray bundle or a distortion field.
    Undistort(UndistortArgs),
    /// Fit a pinhole camera and pose to a ray bundle.
    Fit(FitArgs),
    /// Lens database tools.
    #[command(subcommand)]
    Lens(LensCommand),
    /// Reverse-diffuse toward a target bundle and log per-step residuals as CSV.
    #[command(name = "ddpm-demo")]
    DdpmDemo(DdpmArgs),
    /// Score predicted cameras against ground truth.
    Eval(EvalArgs),
    /// Canny edge map of a grayscale image.
    Edges(EdgesArgs),
    /// Run the acceptance checks; exits 0 iff all pass.
    #[command(name = "selftest", visible_alias = "pipeline-selftest")]
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Directory of PGM/PPM frames (all the same size).
    #[arg(long)]
    images: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Lens database (JSON lines); defaults to the bundled synthetic fixture.
    #[arg(long)]
    db: Option<PathBuf>,
    /// Use this record instead of sampling one.
    #[arg(long, conflicts_with = "category")]
    record: Option<String>,
    /// Restrict sampling to one category.
    #[arg(long)]
    category: Option<LensCategory>,
    /// Ray grid rows per camera.
    #[arg(long, default_value_t = 8)]
    rows: usize,
    /// Ray grid columns per camera.
    #[arg(long, default_value_t = 8)]
    cols: usize,
    /// Focal length in pixels; defaults to 0.9 x image width.
    #[arg(long)]
    focal: Option<f64>,
}

#[derive(Args, Debug)]
struct UndistortArgs {
    /// Directory of PGM/PPM frames.
    #[arg(long)]
    images: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Ray bundle JSON (or a scene file; see --camera).
    #[arg(long, required_unless_present = "field", conflicts_with = "field")]
    bundle: Option<PathBuf>,
    /// Distortion field JSON.
    #[arg(long)]
    field: Option<PathBuf>,
    /// Camera index when --bundle names a scene file.
    #[arg(long, default_value_t = 0)]
    camera: usize,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Ray bundle JSON (or a scene file; see --camera).
    #[arg(long)]
    bundle: PathBuf,
    /// Output FitResult JSON.
    #[arg(long)]
    out: PathBuf,
    /// Camera index when --bundle names a scene file.
    #[arg(long, default_value_t = 0)]
    camera: usize,
}

#[derive(Subcommand, Debug)]
enum LensCommand {
    /// Validate a database file and summarize it.
    Validate {
        /// Database file (JSON lines).
        #[arg(long)]
        db: PathBuf,
    },
    /// Draw one record.
    Sample {
        /// Database file; defaults to the bundled synthetic fixture.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Restrict to one category.
        #[arg(long)]
        category: Option<LensCategory>,
        /// Write the record here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct DdpmArgs {
    /// Number of diffusion steps.
    #[arg(long = "T", visible_alias = "steps", default_value_t = 100)]
    steps: usize,
    /// Target bundle (or scene file; see --camera) predicted by the oracle denoiser.
    #[arg(long)]
    target: PathBuf,
    /// Camera index when --target names a scene file.
    #[arg(long, default_value_t = 0)]
    camera: usize,
    /// First β of the linear schedule.
    #[arg(long, default_value_t = raycal::diffusion::DEFAULT_BETA_START)]
    beta_start: f64,
    /// Last β of the linear schedule.
    #[arg(long, default_value_t = raycal::diffusion::DEFAULT_BETA_END)]
    beta_end: f64,
    /// Disable the stochastic term of each reverse step.
    #[arg(long)]
    zero_noise: bool,
    /// CSV output; defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted scene JSON.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth scene JSON.
    #[arg(long)]
    gt: PathBuf,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EdgesArgs {
    /// Input PGM/PPM image.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output PGM edge map (0/255); metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
    /// Hysteresis low threshold on Sobel magnitude.
    #[arg(long, default_value_t = 50.0)]
    low: f64,
    /// Hysteresis high threshold on Sobel magnitude.
    #[arg(long, default_value_t = 150.0)]
    high: f64,
    /// Gaussian blur sigma.
    #[arg(long, default_value_t = 1.4)]
    sigma: f64,
    /// Gaussian kernel width (odd).
    #[arg(long, default_value_t = 5)]
    kernel: usize,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Print a JSON report instead of a table.
    #[arg(long)]
    json: bool,
    /// Perturb the ᾱ table so the forward-marginal check fails.
    #[arg(long)]
    inject_fault: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("raycal: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a, seed),
        Command::Undistort(a) => cmd_undistort(a, seed),
        Command::Fit(a) => cmd_fit(a, seed),
        Command::Lens(LensCommand::Validate { db }) => cmd_lens_validate(&db),
        Command::Lens(LensCommand::Sample { db, category, out }) => {
            cmd_lens_sample(db.as_deref(), category, out.as_deref(), seed)
        }
        Command::DdpmDemo(a) => cmd_ddpm_demo(a, seed),
        Command::Eval(a) => cmd_eval(a, seed),
        Command::Edges(a) => cmd_edges(a, seed),
        Command::Selftest(a) => cmd_selftest(a),
    }
}

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "input directory {} does not exist",
            path.display()
        )))
    }
}

/// PGM/PPM files of `dir` in name order.
fn list_frames(dir: &Path) -> CliResult<Vec<PathBuf>> {
    require_dir(dir)?;
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
        })
        .collect();
    frames.sort();
    if frames.is_empty() {
        return Err(CliError::Usage(format!("no .pgm/.ppm frames in {}", dir.display())));
    }
    Ok(frames)
}

fn read_frames(paths: &[PathBuf], meta: &mut RunMeta) -> CliResult<Vec<Image>> {
    paths
        .iter()
        .map(|p| {
            meta.add_file(p)?;
            Ok(Image::read_pnm(p)?)
        })
        .collect()
}

/// Writes frames under `out` with the input file names.
fn write_frames(out: &Path, names: &[PathBuf], frames: &[Image]) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut written = Vec::new();
    for (src, img) in names.iter().zip(frames) {
        let dst = out.join(src.file_name().expect("frame paths name files"));
        img.write_pnm(&dst)?;
        written.push(dst);
    }
    Ok(written)
}

fn load_db(path: Option<&Path>, meta: &mut RunMeta) -> CliResult<LensDatabase> {
    match path {
        Some(p) => {
            require_file(p)?;
            meta.add_file(p)?;
            Ok(load_database(p)?)
        }
        None => {
            meta.add_bytes("<bundled lens fixture>", BUNDLED_FIXTURE.as_bytes());
            Ok(LensDatabase::bundled())
        }
    }
}

/// Reads a bare ray bundle, or camera `camera` of a scene file.
fn load_bundle(path: &Path, camera: usize, meta: &mut RunMeta) -> CliResult<RayBundle> {
    require_file(path)?;
    meta.add_file(path)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| raycal::Error::Format(format!("{}: {e}", path.display())))?;
    if value.get("bundles").is_some() {
        let scene: Scene =
            serde_json::from_value(value).map_err(|e| raycal::Error::Format(format!("{}: {e}", path.display())))?;
        scene.validate()?;
        let n = scene.bundles.len();
        return scene
            .bundles
            .into_iter()
            .nth(camera)
            .ok_or_else(|| CliError::Usage(format!("scene has {n} cameras; --camera {camera} is out of range")));
    }
    Ok(serde_json::from_value(value).map_err(|e| raycal::Error::Format(format!("{}: {e}", path.display())))?)
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    record: &'a str,
    category: LensCategory,
    frames: usize,
    image_width: u32,
    image_height: u32,
}

fn cmd_simulate(a: SimulateArgs, seed: u64) -> CliResult {
    let mut meta = RunMeta::new(seed);
    let names = list_frames(&a.images)?;
    let db = load_db(a.db.as_deref(), &mut meta)?;
    let frames = read_frames(&names, &mut meta)?;
    let record = match &a.record {
        Some(name) => db
            .get(name)
            .ok_or_else(|| CliError::Usage(format!("no record named {name:?} in the database")))?,
        None => sample_profile(&db, seed, a.category)?,
    };
    let (distorted, field) = augment_sequence(&frames, record)?;
    let (w, h) = (frames[0].width(), frames[0].height());

    let mut written = write_frames(&a.out, &names, &distorted)?;
    let field_path = a.out.join("field.json");
    write_json_with_meta(&field_path, &field, &meta)?;
    written.push(field_path);

    let focal = a.focal.unwrap_or(0.9 * w as f64);
    let k = Intrinsics::centered(focal, w, h)?;
    let poses = orbit_poses(&mut seeded(seed), frames.len(), 4.0)?;
    let scene = Scene::from_camera(&k, poses, Some(&field), a.rows, a.cols, w, h)?;
    let scene_path = a.out.join("gt_scene.json");
    write_json_with_meta(&scene_path, &scene, &meta)?;
    written.push(scene_path);

    write_manifest(
        &a.out,
        &meta,
        &written,
        SimulateSummary {
            record: &record.name,
            category: record.category,
            frames: frames.len(),
            image_width: w,
            image_height: h,
        },
    )?;
    say!(
        "simulated {} frames with {} ({}) into {}",
        frames.len(),
        record.name,
        record.category,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct UndistortSummary {
    source: &'static str,
    frames: usize,
    max_flow_px: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit_rms_angular_deg: Option<f64>,
}

/// Tolerance and iteration cap for inverting dense flows and fields.
const INVERT_TOL: f64 = 1e-3;
const INVERT_ITER: usize = 500;

fn cmd_undistort(a: UndistortArgs, seed: u64) -> CliResult {
    let mut meta = RunMeta::new(seed);
    let names = list_frames(&a.images)?;
    let (flow, source, fit) = match (&a.bundle, &a.field) {
        (Some(b), _) => {
            let frames_probe = Image::read_pnm(&names[0])?;
            let (w, h) = (frames_probe.width(), frames_probe.height());
            let bundle = load_bundle(b, a.camera, &mut meta)?;
            let bundle = match bundle.image_size() {
                Some(size) if size != (w, h) => {
                    return Err(CliError::Lib(raycal::Error::Parameter(format!(
                        "bundle was built for {}x{} images but frames are {w}x{h}",
                        size.0, size.1
                    ))))
                }
                Some(_) => bundle,
                None => bundle.with_image_size(w, h),
            };
            let fit = fit_pinhole(&bundle, None)?;
            if !fit.converged {
                fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
                write_json_with_meta(&a.out.join("fit.json"), &fit, &meta)?;
                return Err(CliError::Lib(raycal::Error::Convergence {
                    iterations: fit.iterations,
                    worst_residual: fit.residuals_deg.iter().copied().fold(0.0, f64::max),
                }));
            }
            let forward = flow_from_rays(&bundle, &fit.intrinsics, &fit.pose, w, h)?;
            (forward.inverted(INVERT_TOL, INVERT_ITER)?, "bundle", Some(fit))
        }
        (None, Some(f)) => {
            require_file(f)?;
            meta.add_file(f)?;
            let text = fs::read_to_string(f).map_err(|e| CliError::io(f, e))?;
            let field: DistortionField =
                serde_json::from_str(&text).map_err(|e| raycal::Error::Format(format!("{}: {e}", f.display())))?;
            let probe = Image::read_pnm(&names[0])?;
            let field = field.rescaled(probe.width(), probe.height())?;
            // Grid-level inverse doubles as the convergence check; the dense
            // per-pixel inverse is used for resampling.
            raycal::distortion::invert_field(&field, INVERT_TOL, INVERT_ITER)?;
            (field.inverse_flow(INVERT_TOL, INVERT_ITER)?, "field", None)
        }
        (None, None) => return Err(CliError::Usage("one of --bundle or --field is required".into())),
    };
    let frames = read_frames(&names, &mut meta)?;
    let out: Vec<Image> = frames
        .iter()
        .map(|f| remap_image(f, &flow))
        .collect::<raycal::Result<_>>()?;
    let mut written = write_frames(&a.out, &names, &out)?;
    let flow_path = a.out.join("flow.rcfl");
    flow.write(&flow_path)?;
    written.push(flow_path);
    if let Some(fit) = &fit {
        let fit_path = a.out.join("fit.json");
        write_json_with_meta(&fit_path, fit, &meta)?;
        written.push(fit_path);
    }
    write_manifest(
        &a.out,
        &meta,
        &written,
        UndistortSummary {
            source,
            frames: out.len(),
            max_flow_px: flow.max_magnitude(),
            fit_rms_angular_deg: fit.as_ref().map(|f| f.rms_angular_residual),
        },
    )?;
    say!("undistorted {} frames into {}", out.len(), a.out.display());
    Ok(())
}

fn cmd_fit(a: FitArgs, seed: u64) -> CliResult {
    let mut meta = RunMeta::new(seed);
    let bundle = load_bundle(&a.bundle, a.camera, &mut meta)?;
    let fit = fit_pinhole(&bundle, None)?;
    write_json_with_meta(&a.out, &fit, &meta)?;
    if !fit.converged {
        eprintln!(
            "fit did not converge after {} iterations; rms angular residual {:.6} deg",
            fit.iterations, fit.rms_angular_residual
        );
        return Err(CliError::Lib(raycal::Error::Convergence {
            iterations: fit.iterations,
            worst_residual: fit.residuals_deg.iter().copied().fold(0.0, f64::max),
        }));
    }
    say!(
        "f = {:.6} px, principal point ({:.4}, {:.4}), rms angular residual {:.3e} deg, {} iterations",
        fit.intrinsics.fx,
        fit.intrinsics.cx,
        fit.intrinsics.cy,
        fit.rms_angular_residual,
        fit.iterations
    );
    Ok(())
}

fn cmd_lens_validate(db: &Path) -> CliResult {
    require_file(db)?;
    let db = load_database(db)?;
    say!("{} records OK", db.len());
    for c in LensCategory::ALL {
        let n = db.records().iter().filter(|r| r.category == c).count();
        if n > 0 {
            say!("  {c}: {n}");
        }
    }
    Ok(())
}

fn cmd_lens_sample(db: Option<&Path>, category: Option<LensCategory>, out: Option<&Path>, seed: u64) -> CliResult {
    let mut meta = RunMeta::new(seed);
    let db = load_db(db, &mut meta)?;
    let record = sample_profile(&db, seed, category)?;
    match out {
        Some(p) => write_json_with_meta(p, record, &meta),
        None => {
            let mut v = serde_json::to_value(record).map_err(|e| CliError::Internal(e.to_string()))?;
            v["meta"] = serde_json::to_value(&meta).map_err(|e| CliError::Internal(e.to_string()))?;
            say!("{v}");
            Ok(())
        }
    }
}

fn cmd_ddpm_demo(a: DdpmArgs, seed: u64) -> CliResult {
    let mut meta = RunMeta::new(seed);
    let target = load_bundle(&a.target, a.camera, &mut meta)?.to_flat();
    let schedule = make_schedule(a.steps, a.beta_start, a.beta_end)?;
    let oracle = OracleDenoiser::new(target.clone());
    let target_dirs = directions_of(&target);
    let injection = if a.zero_noise {
        NoiseInjection::Zero
    } else {
        NoiseInjection::Gaussian
    };
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    let mut failure = None;
    let out = reverse_sample_with(&oracle, &schedule, target.len() / 6, seed, injection, None, |view| {
        let mut normalized = view.sample.to_vec();
        normalize_directions(&mut normalized);
        let mse = loss_denoise(view.sample, &target);
        let ang = loss_angular(&directions_of(&normalized), &target_dirs);
        match (mse, ang) {
            (Ok(m), Ok(g)) => rows.push((view.step - 1, m, g)),
            (Err(e), _) | (_, Err(e)) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    // The last row reports the returned sample, whose directions are renormalized.
    if let Some(last) = rows.last_mut() {
        last.1 = loss_denoise(&out, &target)?;
        last.2 = loss_angular(&directions_of(&out), &target_dirs)?;
    }
    let mut csv = String::new();
    csv.push_str(&format!(
        "# {}\n",
        serde_json::to_string(&meta).map_err(|e| CliError::Internal(e.to_string()))?
    ));
    csv.push_str("step,mse,angular_deg\n");
    for (step, mse, ang) in &rows {
        csv.push_str(&format!("{step},{mse:e},{ang:e}\n"));
    }
    match &a.out {
        Some(p) => write_file(p, csv.as_bytes()),
        None => std::io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

fn cmd_eval(a: EvalArgs, seed: u64) -> CliResult {
    let mut meta = RunMeta::new(seed);
    for p in [&a.pred, &a.gt] {
        require_file(p)?;
        meta.add_file(p)?;
    }
    let pred = Scene::load(&a.pred)?;
    let gt = Scene::load(&a.gt)?;
    let report = evaluate(&pred.poses, &pred.bundles, &gt.poses, &gt.bundles)?;
    write_json_with_meta(&a.out, &report, &meta)?;
    say!(
        "mean angular error {:.4} deg, rotation@15 {:.4}, center@0.1 {:.4}",
        report.mean_angular_deg,
        report.rotation_acc_at_15,
        report.center_acc_at_0_1
    );
    Ok(())
}

#[derive(Serialize)]
struct EdgesSidecar<'a> {
    meta: &'a RunMeta,
    output_sha256: String,
    params: EdgesParams,
    edge_pixels: usize,
}

#[derive(Serialize)]
struct EdgesParams {
    low: f64,
    high: f64,
    sigma: f64,
    kernel: usize,
}

fn cmd_edges(a: EdgesArgs, seed: u64) -> CliResult {
    require_file(&a.input)?;
    let mut meta = RunMeta::new(seed);
    meta.add_file(&a.input)?;
    let img = Image::read_pnm(&a.input)?;
    let params = CannyParams {
        sigma: a.sigma,
        kernel: a.kernel,
        low: a.low,
        high: a.high,
    };
    let edges = edge_map(&img, params)?;
    let mut bytes = Vec::new();
    edges.to_image().encode_pnm(&mut bytes)?;
    write_file(&a.out, &bytes)?;
    let sidecar = EdgesSidecar {
        meta: &meta,
        output_sha256: meta::sha256_hex(&bytes),
        params: EdgesParams {
            low: a.low,
            high: a.high,
            sigma: a.sigma,
            kernel: a.kernel,
        },
        edge_pixels: edges.count(),
    };
    let mut side_path = a.out.clone().into_os_string();
    side_path.push(".meta.json");
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(Path::new(&side_path), format!("{text}\n").as_bytes())?;
    say!("{} edge pixels", edges.count());
    Ok(())
}

#[derive(Serialize)]
struct SelftestReport {
    tool_version: &'static str,
    passed: bool,
    fault_injected: bool,
    criteria: Vec<raycal::selftest::CriterionReport>,
}

fn cmd_selftest(a: SelftestArgs) -> CliResult {
    let criteria = run_all(SelftestOptions {
        inject_fault: a.inject_fault,
    });
    let passed = criteria.iter().all(|c| c.passed);
    if a.json {
        let report = SelftestReport {
            tool_version: env!("CARGO_PKG_VERSION"),
            passed,
            fault_injected: a.inject_fault,
            criteria,
        };
        say!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?
        );
    } else {
        for c in &criteria {
            say!(
                "[{}] {:>2}. {:<28} {:>7.3}s  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.id,
                c.name,
                c.seconds,
                c.detail
            );
        }
        say!(
            "{} of {} criteria passed",
            criteria.iter().filter(|c| c.passed).count(),
            criteria.len()
        );
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::Check("one or more self-test criteria failed".into()))
    }
}
