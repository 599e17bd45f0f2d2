//! The `action-images` command line.

use crate::decoder::{decode_video, DecoderParams, ErrorPolicy, DEFAULT_FAR, DEFAULT_K, DEFAULT_NEAR};
use crate::encoder::{encode_video, EncoderParams, DEFAULT_ELL, DEFAULT_SIGMA_REL, DEFAULT_THRESHOLD};
use crate::geometry::Aabb;
use crate::harness::{
    default_rig, default_workspace, discretization_sweep, gen_trajectory, roundtrip_eval_with_noise,
    write_steps_csv, write_sweep_csv, NoiseSpec, Occlusion, TrajectoryStyle,
};
use crate::io::{
    load_frames, load_trajectory, read_json, save_frames, save_trajectory, write_atomic, write_json,
    ConfidenceRecord, FrameFormat, OrientationFormat,
};
use crate::packing::{draw_strategy, sample_mask, write_shard, StrategyMix, TokenLayout};
use crate::plot;
use crate::rig::Rig;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ACTION_IMAGES_OUT";

#[derive(Debug, Parser)]
#[command(name = "action-images", version, about = "Encode robot actions as multi-view action images and decode them back")]
pub struct Cli {
    /// Seed for every stochastic step (noise, sampling, strategy draws).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print failures as a JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a trajectory into per-view action videos.
    Encode(EncodeArgs),
    /// Recover a trajectory from action videos.
    Decode(DecodeArgs),
    /// Encode, optionally perturb, decode and report errors.
    Eval(EvalArgs),
    /// Resolution × ray-sample grid of roundtrip reports.
    Sweep(SweepArgs),
    /// Draw training masks and write a token shard.
    Pack(PackArgs),
    /// Write a synthetic trajectory and the default two-view rig.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct EncoderArgs {
    /// Gaussian σ relative to min(width, height).
    #[arg(long = "sigma", default_value_t = DEFAULT_SIGMA_REL)]
    pub sigma_rel: f64,
    /// Distance from the position point to the normal and up points, meters.
    #[arg(long, default_value_t = DEFAULT_ELL)]
    pub ell: f64,
    /// Up-channel background cutoff and gripper scale.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

impl EncoderArgs {
    fn params(&self) -> EncoderParams {
        EncoderParams { ell: self.ell, sigma_rel: self.sigma_rel, threshold: self.threshold }
    }
}

#[derive(Debug, Args)]
pub struct DecoderArgs {
    /// Near plane along each ray, meters.
    #[arg(long, default_value_t = DEFAULT_NEAR)]
    pub near: f64,
    /// Far plane along each ray, meters.
    #[arg(long, default_value_t = DEFAULT_FAR)]
    pub far: f64,
    /// Depth candidates per ray.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Workspace box `xmin,ymin,zmin,xmax,ymax,zmax`; when given, near/far
    /// come from the box per ray.
    #[arg(long, value_parser = parse_box)]
    pub workspace: Option<Aabb>,
}

impl DecoderArgs {
    fn params(&self, enc: &EncoderParams) -> DecoderParams {
        DecoderParams {
            near: self.near,
            far: self.far,
            k: self.k,
            threshold: enc.threshold,
            ell: enc.ell,
            workspace: self.workspace,
            ..Default::default()
        }
    }
}

fn parse_box(s: &str) -> Result<Aabb, String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    let [a, b, c, d, e, f] = v.as_slice() else {
        return Err(format!("expected 6 comma-separated numbers, got {}", v.len()));
    };
    Aabb::new([*a, *b, *c], [*d, *e, *f]).map_err(|e| e.to_string())
}

fn parse_rect(s: &str) -> Result<Occlusion, String> {
    let (view, rect) = s.split_once(':').ok_or("expected VIEW:x0,y0,x1,y1")?;
    let view = view.parse().map_err(|e| format!("view: {e}"))?;
    let v: Vec<usize> = rect.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    let [x0, y0, x1, y1] = v.as_slice() else {
        return Err("expected 4 rectangle coordinates".into());
    };
    Ok(Occlusion::Rect { view, x0: *x0, y0: *y0, x1: *x1, y1: *y1 })
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long)]
    pub rig: PathBuf,
    /// Output frames directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// png16 or raw_f32.
    #[arg(long, default_value = "png16")]
    pub format: String,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// Also write per-channel strips of every frame for inspection.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Frames directory written by `encode`.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub rig: PathBuf,
    /// Output trajectory JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-step residual/depth-index sidecar.
    #[arg(long)]
    pub confidence: Option<PathBuf>,
    /// euler_xyz, matrix or axis_angle.
    #[arg(long, default_value = "euler_xyz")]
    pub orientation_format: String,
    /// Keep going past failed steps (they are left out of the trajectory
    /// and reported in the sidecar).
    #[arg(long)]
    pub collect_errors: bool,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub decoder: DecoderArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long)]
    pub rig: PathBuf,
    /// Output directory for report.json and steps.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub decoder: DecoderArgs,
    /// Additive value noise σ.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    /// Storage bit depth to simulate (e.g. 8 or 16).
    #[arg(long)]
    pub quantize_bits: Option<u32>,
    /// Probability that a view is missing at a step.
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Zero the blob region of this view in every frame (repeatable).
    #[arg(long)]
    pub occlude_blob: Vec<usize>,
    /// Zero a fixed rectangle, `VIEW:x0,y0,x1,y1` (repeatable).
    #[arg(long, value_parser = parse_rect)]
    pub occlude: Vec<Occlusion>,
    /// Also write heatmap strips of the first step.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for sweep.json and sweep.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write an error-vs-resolution chart.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    /// Pack manifest JSON.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Output directory for trajectory.json and rig.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 41)]
    pub steps: usize,
    /// Image size of the rig.
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    /// smooth or random.
    #[arg(long, default_value = "smooth")]
    pub style: String,
}

fn out_dir(explicit: &Option<PathBuf>, fallback: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| match std::env::var_os(OUT_DIR_ENV) {
        Some(base) => PathBuf::from(base).join(fallback),
        None => PathBuf::from(fallback),
    })
}

fn load_rig(path: &Path) -> Result<Rig> {
    let rig: Rig = read_json(path)?;
    rig.validate().with_context(|| format!("{}: invalid rig", path.display()))?;
    Ok(rig)
}

fn parse_orientation_format(s: &str) -> Result<OrientationFormat> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .with_context(|| format!("unknown orientation format {s:?} (expected euler_xyz, matrix or axis_angle)"))
}

fn cmd_encode(args: &EncodeArgs) -> Result<()> {
    let format: FrameFormat = args.format.parse()?;
    let traj = load_trajectory(&args.traj)?;
    let rig = load_rig(&args.rig)?;
    let params = args.encoder.params();
    let videos = encode_video(&traj, &rig, &params)?;
    let ids: Vec<String> = rig.views.iter().map(|v| v.view_id.clone()).collect();
    let dir = out_dir(&args.out, "frames");
    let manifest = save_frames(&videos, &ids, &dir, format)?;
    if args.plots {
        for (vid, id) in videos.iter().zip(&ids) {
            for (t, f) in vid.iter().enumerate() {
                plot::channel_strip(f, &dir.join("strips").join(format!("{id}_{t:05}.png")))?;
            }
        }
    }
    println!(
        "encoded {} steps × {} views ({}×{}, {}) into {}",
        manifest.frames,
        manifest.views.len(),
        manifest.width,
        manifest.height,
        manifest.format,
        dir.display()
    );
    Ok(())
}

fn cmd_decode(args: &DecodeArgs) -> Result<()> {
    let rig = load_rig(&args.rig)?;
    let orientation_format = parse_orientation_format(&args.orientation_format)?;
    let (manifest, videos) = load_frames(&args.frames)?;
    let enc = args.encoder.params();
    let mut params = args.decoder.params(&enc);
    params.background_tolerance = manifest.format.roundtrip_bound();
    // match manifest views to rig views by id
    let mut ordered = Vec::with_capacity(rig.num_views());
    let mut videos: Vec<Option<_>> = videos.into_iter().map(Some).collect();
    for track in &rig.views {
        let idx = manifest
            .views
            .iter()
            .position(|v| v.view_id == track.view_id)
            .with_context(|| format!("frames have no view {:?}", track.view_id))?;
        ordered.push(videos[idx].take().with_context(|| format!("view {:?} listed twice", track.view_id))?);
    }
    let policy = if args.collect_errors { ErrorPolicy::Collect } else { ErrorPolicy::FailFast };
    let results = decode_video(&ordered, &rig, &params, policy)?;
    let mut actions = Vec::new();
    let mut records = Vec::new();
    for (t, r) in results.iter().enumerate() {
        match r {
            Ok(d) => {
                actions.push(d.action);
                records.push(ConfidenceRecord::from_decoded(t, d));
            }
            Err(e) => records.push(ConfidenceRecord {
                t,
                error: Some(e.to_string()),
                residual: None,
                depth_index: None,
                main_view: None,
            }),
        }
    }
    save_trajectory(&args.out, &actions, orientation_format)?;
    if let Some(path) = &args.confidence {
        write_json(path, &records)?;
    }
    let failed = results.iter().filter(|r| r.is_err()).count();
    println!("decoded {} of {} steps into {}", actions.len(), results.len(), args.out.display());
    if failed > 0 {
        eprintln!("warning: {failed} steps failed to decode");
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs, seed: u64) -> Result<()> {
    let traj = load_trajectory(&args.traj)?;
    let rig = load_rig(&args.rig)?;
    let enc = args.encoder.params();
    let dec = args.decoder.params(&enc);
    let mut occlusion = args.occlude.clone();
    occlusion.extend(args.occlude_blob.iter().map(|&view| Occlusion::Blob { view, level: 1e-3 }));
    let noise = NoiseSpec {
        gaussian_sigma: args.noise_sigma,
        quantize_bits: args.quantize_bits,
        occlusion,
        dropout: args.dropout,
    };
    let report = roundtrip_eval_with_noise(&traj, &rig, &enc, &dec, &noise, seed)?;
    let dir = out_dir(&args.out, "eval");
    write_json(&dir.join("report.json"), &report)?;
    write_atomic(&dir.join("steps.csv"), |w| write_steps_csv(&report, w).map_err(std::io::Error::other))?;
    if args.plots {
        if let Some(a) = traj.first() {
            for v in 0..rig.num_views() {
                let cam = rig.camera(v, 0)?;
                let frame = crate::encoder::encode_frame(a, &cam, &enc)?;
                plot::channel_strip(&frame, &dir.join(format!("strip_{}.png", cam.view_id)))?;
            }
        }
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3e}"));
    println!(
        "steps {}  failures {}  median 3D {} m  median angle {} deg  2DErr {} px  → {}",
        report.steps.len(),
        report.failures,
        fmt(report.position_m.map(|s| s.median)),
        fmt(report.angle_deg.map(|s| s.median)),
        fmt(report.err2d_px),
        dir.display()
    );
    Ok(())
}

fn default_resolutions() -> Vec<usize> {
    vec![128, 256, 512]
}

fn default_ks() -> Vec<usize> {
    vec![64, 256, 1024]
}

fn default_actions() -> usize {
    200
}

/// `sweep --config` file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Trajectory file; when absent, `actions` random actions are generated.
    pub trajectory: Option<PathBuf>,
    #[serde(default = "default_actions")]
    pub actions: usize,
    #[serde(default)]
    pub style: Option<TrajectoryStyle>,
    /// Rig file; when absent the default two-view rig is used.
    pub rig: Option<PathBuf>,
    #[serde(default = "default_resolutions")]
    pub resolutions: Vec<usize>,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default)]
    pub encoder: Option<EncoderParams>,
    #[serde(default)]
    pub near: Option<f64>,
    #[serde(default)]
    pub far: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn cmd_sweep(args: &SweepArgs, seed: Option<u64>) -> Result<()> {
    let cfg: SweepConfig = read_json(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let traj = match &cfg.trajectory {
        Some(p) => load_trajectory(&resolve(base, p))?,
        None => gen_trajectory(seed, cfg.actions, &default_workspace(), cfg.style.unwrap_or(TrajectoryStyle::Random))?,
    };
    let rig = match &cfg.rig {
        Some(p) => load_rig(&resolve(base, p))?,
        None => default_rig(512)?,
    };
    let enc = cfg.encoder.unwrap_or_default();
    let dec = DecoderParams {
        near: cfg.near.unwrap_or(DEFAULT_NEAR),
        far: cfg.far.unwrap_or(DEFAULT_FAR),
        threshold: enc.threshold,
        ell: enc.ell,
        ..Default::default()
    };
    let sweep = discretization_sweep(&traj, &rig, &cfg.resolutions, &cfg.ks, &enc, &dec)?;
    let dir = out_dir(&args.out, "sweep");
    write_json(&dir.join("sweep.json"), &sweep)?;
    write_atomic(&dir.join("sweep.csv"), |w| write_sweep_csv(&sweep, w).map_err(std::io::Error::other))?;
    if args.plots {
        plot::error_vs_resolution(&sweep, &dir.join("error_vs_resolution.png"))?;
    }
    for c in &sweep.cells {
        let m = c.report.median_position();
        println!("res {:>5}  k {:>6}  median 3D {:>12}", c.resolution, c.k, m.map_or("n/a".into(), |v| format!("{v:.4e}")));
    }
    println!(
        "monotone pairs {}/{} ({:.0}%) → {}",
        sweep.monotonicity.non_increasing,
        sweep.monotonicity.pairs,
        100.0 * sweep.monotonicity.fraction,
        dir.display()
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentGrid {
    /// Latent steps per stream; defaults to the trajectory length.
    pub time: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// `pack --manifest` file. Relative paths resolve against the manifest's directory.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackManifest {
    pub trajectory: PathBuf,
    pub rig: PathBuf,
    pub output: PathBuf,
    pub latent: LatentGrid,
    #[serde(default)]
    pub mix: StrategyMix,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Number of mask records to draw.
    #[serde(default = "one")]
    pub samples: usize,
}

fn one() -> usize {
    1
}

fn cmd_pack(args: &PackArgs, seed: Option<u64>) -> Result<()> {
    let m: PackManifest = read_json(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let traj_path = resolve(base, &m.trajectory);
    let rig_path = resolve(base, &m.rig);
    for p in [&traj_path, &rig_path] {
        if !p.exists() {
            bail!("{}: referenced file does not exist", p.display());
        }
    }
    let traj = load_trajectory(&traj_path)?;
    let rig = load_rig(&rig_path)?;
    m.mix.validate()?;
    let layout = TokenLayout::new(
        rig.num_views(),
        m.latent.time.unwrap_or(traj.len()),
        m.latent.height,
        m.latent.width,
        m.latent.channels,
    )?;
    let seed = seed.or(m.seed).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks: Vec<_> = (0..m.samples).map(|_| sample_mask(draw_strategy(&m.mix, &mut rng), &layout)).collect();
    let out = resolve(base, &m.output);
    let mut buf = Vec::new();
    write_shard(&mut buf, seed, &layout, &masks)?;
    write_atomic(&out, |w| w.write_all(&buf))?;
    println!(
        "packed {} records over {} tokens ({} views × 2 streams × {} steps × {}×{}) into {}",
        masks.len(),
        layout.total_tokens(),
        layout.views,
        layout.time,
        layout.height,
        layout.width,
        out.display()
    );
    Ok(())
}

fn cmd_sample(args: &SampleArgs, seed: u64) -> Result<()> {
    let style: TrajectoryStyle = serde_json::from_value(serde_json::Value::String(args.style.clone()))
        .with_context(|| format!("unknown style {:?} (expected smooth or random)", args.style))?;
    let traj = gen_trajectory(seed, args.steps, &default_workspace(), style)?;
    let rig = default_rig(args.size)?;
    let dir = out_dir(&args.out, "sample");
    save_trajectory(&dir.join("trajectory.json"), &traj, OrientationFormat::EulerXyz)?;
    write_json(&dir.join("rig.json"), &rig)?;
    println!("wrote {} steps and a {}-view rig to {}", traj.len(), rig.num_views(), dir.display());
    Ok(())
}


pub fn execute(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a, seed),
        Command::Sweep(a) => cmd_sweep(a, cli.seed),
        Command::Pack(a) => cmd_pack(a, cli.seed),
        Command::Sample(a) => cmd_sample(a, seed),
    }
}

fn report_error(err: &anyhow::Error, json: bool) {
    if json {
        let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
        let obj = serde_json::json!({ "error": err.to_string(), "causes": &chain[1..] });
        eprintln!("{obj}");
    } else {
        eprintln!("error: {err:#}");
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 1 on failure, 2 on usage errors.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let json_errors = args.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if json_errors && code != 0 {
                eprintln!("{}", serde_json::json!({ "error": e.to_string(), "kind": "usage" }));
            } else {
                let _ = e.print();
            }
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e, cli.json_errors);
            1
        }
    }
}
