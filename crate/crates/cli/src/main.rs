//! `roadhazard`: scene synthesis, disparity, detection, clustering and evaluation.
//!
//! Every subcommand writes into an output directory together with a
//! `manifest.json` that records the resolved configuration, seeds and input
//! hashes. Exit codes: 0 success, 1 usage error, 2 data error.

mod manifest;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use roadhazard::cstix::{
    midlevel_rep, points_from_decisions, points_from_pc, read_points_csv, read_stixels_csv, upscale_points,
    write_points_csv, write_stixels_csv,
};
use roadhazard::disparity::{block_match, disparity_to_cloud};
use roadhazard::eval::{emit_report, instance_stats, pixel_counts, read_report_csv, run_sweep, EvalFrame, SweepResult};
use roadhazard::hypothesis::{detect_frame, prepare_inputs, read_decisions_csv, write_decisions_csv};
use roadhazard::imaging::{load_label_pgm, load_pfm, load_pgm, save_pfm};
use roadhazard::pc::{pc_detect, write_pc_csv};
use roadhazard::synth::{read_bundle, render, scene_suite, write_bundle};
use roadhazard::{
    BlockMatchConfig, CameraRig, ClusterParams, DetectorConfig, DisparityMap, Error, IntensityImage, LabelMap, Method,
    ParamGrid, PcParams, PointSource, SceneSpec, Verdict,
};
use serde_json::json;

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "roadhazard", version, about = "Stereo road-hazard detection pipeline")]
struct Cli {
    /// Worker threads; never changes output bytes.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic stereo scenes with ground truth.
    Synth(SynthArgs),
    /// Block-matching disparity for a stereo pair.
    Disparity(DisparityArgs),
    /// Obstacle detection with a plane hypothesis test or point compatibility.
    Detect(DetectArgs),
    /// Cluster obstacle points into stixels.
    Cstix(CstixArgs),
    /// Pixel- or instance-level metrics of one frame.
    Eval(EvalArgs),
    /// Parameter sweep over a scene suite or bundle directories.
    Sweep(SweepArgs),
    /// Re-plot a sweep report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Built-in suite name.
    #[arg(long, conflicts_with = "scene")]
    suite: Option<String>,
    /// Scene description JSON.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Offsets all texture and noise seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DisparityArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// Block-matching settings JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Match on 2x downsampled images, as the detectors do by default.
    #[arg(long, default_value_t = 2)]
    downsample: usize,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    d_max: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Pht,
    Fpht,
    Pc,
}

impl From<MethodArg> for PointSource {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pht => PointSource::Pht,
            MethodArg::Fpht => PointSource::Fpht,
            MethodArg::Pc => PointSource::Pc,
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// Disparity PFM at full or detector resolution.
    #[arg(long)]
    disp: PathBuf,
    /// Full-resolution camera rig JSON.
    #[arg(long)]
    calib: PathBuf,
    /// Detector settings JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Patch size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_patch)]
    patch: Option<(usize, usize)>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    downsample: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    phi_f: Option<f64>,
    #[arg(long)]
    phi_o: Option<f64>,
    #[arg(long)]
    lambda_min: Option<f64>,
    /// Point-compatibility cone angle, degrees.
    #[arg(long)]
    pc_phi: Option<f64>,
    #[arg(long)]
    h_min: Option<f64>,
    #[arg(long)]
    h_max: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CstixArgs {
    /// Obstacle points CSV written by `detect`.
    #[arg(long)]
    points: PathBuf,
    /// Disparity PFM at full or detector resolution.
    #[arg(long)]
    disp: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Cluster settings JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Level {
    Pixel,
    Instance,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    level: Level,
    /// Bundle directory holding `labels.pgm`.
    #[arg(long, conflicts_with = "labels")]
    bundle: Option<PathBuf>,
    /// Label map PGM.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Decisions CSV (pixel level).
    #[arg(long, conflicts_with = "points")]
    decisions: Option<PathBuf>,
    /// Obstacle points CSV (pixel level).
    #[arg(long)]
    points: Option<PathBuf>,
    /// Stixels CSV (instance level).
    #[arg(long)]
    stixels: Option<PathBuf>,
    /// Prediction lattice stride at detector resolution.
    #[arg(long, default_value_t = 2)]
    stride: usize,
    /// Detector downsampling; read from the decisions CSV when given.
    #[arg(long, default_value_t = 2)]
    downsample: usize,
    /// Free-space fraction above which a stixel is a false positive.
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, conflicts_with = "bundles")]
    suite: Option<String>,
    /// Bundle directories written by `synth`.
    #[arg(long, num_args = 1..)]
    bundles: Vec<PathBuf>,
    /// Offsets all texture and noise seeds of a suite.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Report CSV written by `sweep`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_patch(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((num(w)?, num(h)?))
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Disparity(a) => disparity(a),
        Command::Detect(a) => detect(a),
        Command::Cstix(a) => cstix(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path)?))
}

fn suite_specs(suite: &str, seed: u64) -> Result<Vec<SceneSpec>, Failure> {
    let mut specs = scene_suite(suite).map_err(|e| Failure::Usage(e.to_string()))?;
    for s in &mut specs {
        s.texture_seed += 1000 * seed;
        s.noise_seed += 1000 * seed;
    }
    Ok(specs)
}

fn synth(a: SynthArgs) -> Outcome {
    let specs = match (&a.suite, &a.scene) {
        (Some(suite), None) => suite_specs(suite, a.seed)?,
        (None, Some(path)) => {
            let mut spec = SceneSpec::load(path)?;
            spec.texture_seed += 1000 * a.seed;
            spec.noise_seed += 1000 * a.seed;
            vec![spec]
        }
        _ => return Err(Failure::Usage("synth needs --suite or --scene".into())),
    };
    std::fs::create_dir_all(&a.out)?;
    let mut manifest = Manifest::new("synth", json!({ "suite": a.suite, "seed_offset": a.seed, "scenes": specs }));
    if let Some(path) = &a.scene {
        manifest.input(path)?;
    }
    for spec in &specs {
        let bundle = render(spec)?;
        write_bundle(a.out.join(&spec.name), spec, &bundle)?;
        manifest.seeds.insert(format!("{}.texture", spec.name), spec.texture_seed);
        manifest.seeds.insert(format!("{}.noise", spec.name), spec.noise_seed);
    }
    manifest.write(&a.out)?;
    Ok(())
}

fn load_pair(left: &Path, right: &Path) -> Result<(IntensityImage, IntensityImage), Failure> {
    let (l, r) = (load_pgm(left)?, load_pgm(right)?);
    if !l.same_size(&r) {
        return Err(Error::DimensionMismatch(format!(
            "left {}x{} vs right {}x{}",
            l.width, l.height, r.width, r.height
        ))
        .into());
    }
    Ok((l, r))
}

fn check_downsample(d: usize) -> Outcome {
    if d == 1 || d == 2 {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--downsample must be 1 or 2, got {d}")))
    }
}

fn disparity(a: DisparityArgs) -> Outcome {
    check_downsample(a.downsample)?;
    let mut bm: BlockMatchConfig = match &a.config {
        Some(p) => load_json(p)?,
        None => BlockMatchConfig::default(),
    };
    if let Some(w) = a.window {
        bm.window = w;
    }
    if let Some(d) = a.d_max {
        bm.d_max = d;
    }
    let (mut left, mut right) = load_pair(&a.left, &a.right)?;
    if a.downsample == 2 {
        left = left.downsample2()?;
        right = right.downsample2()?;
    }
    let dmap = block_match(&left, &right, &bm)?;
    std::fs::create_dir_all(&a.out)?;
    save_pfm(a.out.join("disparity.pfm"), &dmap)?;
    let mut manifest = Manifest::new("disparity", json!({ "block_match": bm, "downsample": a.downsample }));
    manifest.input(&a.left)?;
    manifest.input(&a.right)?;
    if let Some(p) = &a.config {
        manifest.input(p)?;
    }
    manifest.write(&a.out)?;
    Ok(())
}

/// Brings a disparity map to `width x height`, given either at that size or
/// at an integer fraction of it.
fn disparity_at(dmap: DisparityMap, width: usize, height: usize) -> Result<DisparityMap, Failure> {
    if dmap.width == width && dmap.height == height {
        return Ok(dmap);
    }
    if dmap.width < width && width.is_multiple_of(dmap.width) && dmap.height * (width / dmap.width) == height {
        return Ok(dmap.upsample(width / dmap.width));
    }
    if dmap.width == width * 2 && dmap.height == height * 2 {
        return Ok(dmap.downsample2()?);
    }
    Err(Error::DimensionMismatch(format!("disparity {}x{} does not match {width}x{height}", dmap.width, dmap.height))
        .into())
}

fn detect(a: DetectArgs) -> Outcome {
    let mut cfg: DetectorConfig = match &a.config {
        Some(p) => load_json(p)?,
        None => DetectorConfig::default(),
    };
    if let Some((w, h)) = a.patch {
        cfg.patch_w = w;
        cfg.patch_h = h;
    }
    macro_rules! override_field {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    override_field!(stride, downsample, tau, phi_f, phi_o, lambda_min);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut pc = PcParams::default();
    if let Some(v) = a.pc_phi {
        pc.phi = v;
    }
    if let Some(v) = a.h_min {
        pc.h_min = v;
    }
    if let Some(v) = a.h_max {
        pc.h_max = v;
    }
    let rig = CameraRig::load(&a.calib)?;
    let (left, right) = load_pair(&a.left, &a.right)?;
    if (left.width, left.height) != (rig.width, rig.height) {
        return Err(Error::DimensionMismatch(format!(
            "images {}x{} vs calibration {}x{}",
            left.width, left.height, rig.width, rig.height
        ))
        .into());
    }
    let raw = load_pfm(&a.disp)?;
    // a detector-resolution map is used as is rather than up- and downsampled
    let at_detector =
        cfg.downsample > 1 && (raw.width, raw.height) == (rig.width / cfg.downsample, rig.height / cfg.downsample);
    let full = if at_detector {
        DisparityMap::invalid(rig.width, rig.height)
    } else {
        disparity_at(raw.clone(), rig.width, rig.height)?
    };
    let mut inp = prepare_inputs(&left, &right, &full, &rig, &cfg)?;
    if at_detector {
        inp.dmap = raw;
    }
    let dmap = &inp.dmap;
    std::fs::create_dir_all(&a.out)?;
    let source: PointSource = a.method.into();
    let config = match source {
        PointSource::Pc => {
            pc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let cloud = disparity_to_cloud(dmap, &inp.rig, cfg.stride);
            let result = pc_detect(&cloud, &inp.rig, &pc);
            write_pc_csv(create(&a.out.join("pc.csv"))?, &cloud, &result)?;
            let points = upscale_points(&points_from_pc(&cloud, &result), cfg.downsample);
            write_points_csv(create(&a.out.join("points.csv"))?, &points)?;
            json!({ "method": source, "stride": cfg.stride, "downsample": cfg.downsample, "pc": pc })
        }
        _ => {
            let method = if source == PointSource::Pht { Method::Pht } else { Method::Fpht };
            let decisions = detect_frame(&inp.left, &inp.right, dmap, &inp.grid, &inp.rig, &cfg, method)?;
            write_decisions_csv(create(&a.out.join("decisions.csv"))?, &decisions, &inp.rig, cfg.downsample)?;
            let points = points_from_decisions(&decisions, &rig, cfg.downsample, source);
            write_points_csv(create(&a.out.join("points.csv"))?, &points)?;
            json!({ "method": source, "detector": cfg })
        }
    };
    let mut manifest = Manifest::new("detect", config);
    for p in [&a.left, &a.right, &a.disp, &a.calib] {
        manifest.input(p)?;
    }
    if let Some(p) = &a.config {
        manifest.input(p)?;
    }
    manifest.write(&a.out)?;
    Ok(())
}

fn cstix(a: CstixArgs) -> Outcome {
    let params: ClusterParams = match &a.config {
        Some(p) => load_json(p)?,
        None => ClusterParams::default(),
    };
    params.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let rig = CameraRig::load(&a.calib)?;
    let points = read_points_csv(File::open(&a.points)?)?;
    let dmap = disparity_at(load_pfm(&a.disp)?, rig.width, rig.height)?;
    let stixels = midlevel_rep(&points, &dmap, &params, &rig);
    std::fs::create_dir_all(&a.out)?;
    write_stixels_csv(create(&a.out.join("stixels.csv"))?, &stixels)?;
    let mut manifest = Manifest::new("cstix", json!({ "cluster": params }));
    for p in [&a.points, &a.disp, &a.calib] {
        manifest.input(p)?;
    }
    manifest.write(&a.out)?;
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let labels_path = match (&a.bundle, &a.labels) {
        (Some(dir), None) => dir.join("labels.pgm"),
        (None, Some(p)) => p.clone(),
        _ => return Err(Failure::Usage("eval needs --bundle or --labels".into())),
    };
    let labels: LabelMap = load_label_pgm(&labels_path)?;
    let mut manifest;
    let result = match a.level {
        Level::Pixel => {
            let (centers, dwn, input) = match (&a.decisions, &a.points) {
                (Some(p), None) => {
                    let recs = read_decisions_csv(File::open(p)?)?;
                    let dwn = recs.first().map_or(a.downsample, |r| r.downsample);
                    let centers: Vec<_> =
                        recs.iter().filter(|r| r.verdict == Verdict::Obstacle).map(|r| (r.xc, r.yc)).collect();
                    (centers, dwn, p)
                }
                (None, Some(p)) => {
                    let pts = read_points_csv(File::open(p)?)?;
                    let d = a.downsample;
                    (pts.iter().map(|q| (q.x / d, q.y / d)).collect(), d, p)
                }
                _ => return Err(Failure::Usage("pixel evaluation needs --decisions or --points".into())),
            };
            let counts = pixel_counts(centers, &labels, a.stride, dwn)?;
            let (tpr, fpr) = counts.rates()?;
            manifest = Manifest::new("eval", json!({ "level": "pixel", "stride": a.stride, "downsample": dwn }));
            manifest.input(input)?;
            json!({ "counts": counts, "tpr": tpr, "fpr": fpr })
        }
        Level::Instance => {
            let Some(p) = &a.stixels else {
                return Err(Failure::Usage("instance evaluation needs --stixels".into()));
            };
            if !(0.0..=1.0).contains(&a.overlap) {
                return Err(Failure::Usage("--overlap must lie in [0, 1]".into()));
            }
            let stixels = read_stixels_csv(File::open(p)?)?;
            let stats = instance_stats(&stixels, &labels, &labels.free_space_mask(), a.overlap)?;
            manifest = Manifest::new("eval", json!({ "level": "instance", "overlap": a.overlap }));
            manifest.input(p)?;
            json!({
                "instances": stats.instances,
                "fp_stixels": stats.fp_stixels,
                "iint": stats.mean_iint(),
                "fp_per_frame": stats.fp_per_frame(),
            })
        }
    };
    manifest.input(&labels_path)?;
    std::fs::create_dir_all(&a.out)?;
    let mut text = serde_json::to_string_pretty(&result)?;
    text.push('\n');
    std::fs::write(a.out.join("eval.json"), text)?;
    manifest.write(&a.out)?;
    Ok(())
}

fn sweep(a: SweepArgs) -> Outcome {
    let grid = ParamGrid::load(&a.grid).map_err(|e| match e {
        Error::InvalidConfig(_) | Error::Json(_) => Failure::Usage(e.to_string()),
        e => Failure::Data(e),
    })?;
    let mut manifest = Manifest::new("sweep", json!({ "grid": grid, "suite": a.suite, "seed_offset": a.seed }));
    manifest.input(&a.grid)?;
    let frames: Vec<EvalFrame> = match (&a.suite, a.bundles.is_empty()) {
        (Some(suite), true) => {
            let mut frames = Vec::new();
            for spec in suite_specs(suite, a.seed)? {
                manifest.seeds.insert(format!("{}.texture", spec.name), spec.texture_seed);
                manifest.seeds.insert(format!("{}.noise", spec.name), spec.noise_seed);
                frames.push(EvalFrame { bundle: render(&spec)?, rig: spec.rig });
            }
            frames
        }
        (None, false) => {
            let mut frames = Vec::new();
            for dir in &a.bundles {
                for f in ["left.pgm", "right.pgm", "labels.pgm", "calib.json"] {
                    manifest.input(&dir.join(f))?;
                }
                frames.push(EvalFrame { bundle: read_bundle(dir)?, rig: CameraRig::load(dir.join("calib.json"))? });
            }
            frames
        }
        _ => return Err(Failure::Usage("sweep needs --suite or --bundles".into())),
    };
    let result = run_sweep(&frames, &grid)?;
    emit_report(&result, &a.out)?;
    manifest.write(&a.out)?;
    Ok(())
}

fn report(a: ReportArgs) -> Outcome {
    let points = read_report_csv(File::open(&a.input)?)?;
    let result = SweepResult::from_points(points);
    emit_report(&result, &a.out)?;
    let mut manifest = Manifest::new("report", json!({}));
    manifest.input(&a.input)?;
    manifest.write(&a.out)?;
    Ok(())
}
