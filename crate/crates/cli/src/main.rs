use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use chromaflow::config::{FeatureChoice, PipelineConfig, DEFAULT_RESIZE};
use chromaflow::correspondence::{NormalizedGrid, DEFAULT_TEMPERATURE};
use chromaflow::dense_tracking::{dump_masks, DenseParams, DenseTracker, DEFAULT_BINARIZE_THRESHOLD, DEFAULT_RADIUS};
use chromaflow::evalkit::{
    evaluate_psnr, load_mask_dir, load_rgb_dir, outlier_sweep, reports_markdown, reports_to_csv, MetricReport,
    VideoPair, DEFAULT_OUTLIER_THRESHOLD,
};
use chromaflow::features::{
    grid_dims, load_external, parse_stcf_header, write_stcf, FeatureGrid, DEFAULT_STRIDE,
};
use chromaflow::imaging::{load_frame, load_sequence_resized, save_sequence, FramePattern, VideoSequence};
use chromaflow::instance_tracking::{load_label_maps, DEFAULT_IOU_THRESHOLD, DEFAULT_OCCUPANCY_THRESHOLD};
use chromaflow::pipeline::{colorize, generate_fixture, sequence_features, ColorReference, FixtureSpec};
use chromaflow::refine::DEFAULT_BLEND_FLOOR;
use chromaflow::warp::DEFAULT_FALLBACK_CONFIDENCE;
use chromaflow::Error;

const DEFAULT_PATTERN: &str = "frame_%05d.png";

#[derive(Parser, Debug)]
#[command(name = "chromaflow", version, about = "Reference-based video colorization")]
struct Cli {
    /// Worker threads (default: all available cores)
    #[arg(long, global = true, env = "CHROMAFLOW_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Colorize a grayscale frame directory from one or more color references
    Colorize(ColorizeArgs),
    /// PSNR of predicted frames against ground truth
    EvalPsnr(EvalPsnrArgs),
    /// Percentage of pixels whose RGB error exceeds a threshold
    EvalOutlier(EvalOutlierArgs),
    /// Dump dense tracking masks of selected cells as PNGs
    DenseTrack(DenseTrackArgs),
    /// Write a synthetic fixture sequence with ground truth
    Synth(SynthArgs),
    /// Summarize feature grids or validate an STCF file
    InspectFeatures(InspectArgs),
}

#[derive(Args, Debug)]
struct FeatureOpts {
    /// Feature source: builtin or stcf:PATH
    #[arg(long, default_value = "builtin")]
    features: String,
    /// Feature grid stride in pixels
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: usize,
    /// Comma-separated patch sizes of the built-in features
    #[arg(long, default_value = "2,4,8")]
    scales: String,
    /// Working resolution WIDTHxHEIGHT, or none to keep the input size
    #[arg(long, default_value_t = format!("{}x{}", DEFAULT_RESIZE.0, DEFAULT_RESIZE.1))]
    resize: String,
}

#[derive(Args, Debug)]
struct ColorizeArgs {
    /// Directory of grayscale input frames
    #[arg(long)]
    input: PathBuf,
    /// Output directory for colorized frames
    #[arg(long)]
    out: PathBuf,
    /// Reference frame as INDEX=PATH; repeat for several references
    #[arg(long = "ref", value_name = "INDEX=PATH")]
    refs: Vec<String>,
    /// Mask mode: none, inst, dense or inst+dense
    #[arg(long, default_value = "none")]
    mode: String,
    /// Directory of 16-bit instance label PNGs (inst modes)
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Settings file with key = value lines; flags given here override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// File name pattern of input, label and output frames
    #[arg(long, default_value = DEFAULT_PATTERN)]
    pattern: String,
    #[command(flatten)]
    feat: FeatureOpts,
    /// Softmax temperature of the affinity
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    /// Dense tracking window radius in grid cells
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: usize,
    /// Dense tracking binarize threshold
    #[arg(long, default_value_t = DEFAULT_BINARIZE_THRESHOLD)]
    threshold: f64,
    /// IoU threshold of the instance tracker
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    iou_threshold: f64,
    /// Minimum object occupancy of a reference cell in instance masks
    #[arg(long, default_value_t = DEFAULT_OCCUPANCY_THRESHOLD)]
    occupancy_threshold: f64,
    /// Refiner: identity or temporal-blend
    #[arg(long, default_value = "temporal-blend")]
    refiner: String,
    /// Lower bound of the warp weight in temporal blending
    #[arg(long, default_value_t = DEFAULT_BLEND_FLOOR)]
    blend_floor: f64,
    /// Confidence multiplier for cells whose mask row was empty
    #[arg(long, default_value_t = DEFAULT_FALLBACK_CONFIDENCE)]
    fallback_confidence: f64,
}

/// Flags that mirror a `PipelineConfig` key of the same name.
const CONFIG_KEYS: [&str; 13] = [
    "features",
    "stride",
    "scales",
    "resize",
    "mode",
    "temperature",
    "radius",
    "threshold",
    "iou-threshold",
    "occupancy-threshold",
    "refiner",
    "blend-floor",
    "fallback-confidence",
];

#[derive(Args, Debug)]
struct EvalInputs {
    /// Directory of predicted frames
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth frames
    #[arg(long)]
    gt: PathBuf,
    /// Video name used in the report
    #[arg(long, default_value = "video")]
    video: String,
    /// File name pattern of the frames
    #[arg(long, default_value = DEFAULT_PATTERN)]
    pattern: String,
    /// CSV report path (default: standard output)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a Markdown summary table here
    #[arg(long)]
    markdown: Option<PathBuf>,
    /// Method name in the Markdown table
    #[arg(long, default_value = "method")]
    method: String,
}

#[derive(Args, Debug)]
struct EvalPsnrArgs {
    #[command(flatten)]
    io: EvalInputs,
    /// Directory of binary ground-truth instance masks for inner/outer PSNR
    #[arg(long)]
    masks: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalOutlierArgs {
    #[command(flatten)]
    io: EvalInputs,
    /// RGB distance threshold; repeat for a sweep
    #[arg(long = "threshold", default_values_t = [DEFAULT_OUTLIER_THRESHOLD])]
    thresholds: Vec<f64>,
}

#[derive(Args, Debug)]
struct DenseTrackArgs {
    /// Directory of input frames
    #[arg(long)]
    input: PathBuf,
    /// Target frame index (1-based)
    #[arg(long)]
    target: usize,
    /// Reference frame index (1-based)
    #[arg(long = "ref")]
    reference: usize,
    /// Origin cells to dump, comma-separated (default: all cells)
    #[arg(long)]
    cells: Option<String>,
    /// Output directory for mask PNGs
    #[arg(long)]
    out: PathBuf,
    /// File name pattern of the frames
    #[arg(long, default_value = DEFAULT_PATTERN)]
    pattern: String,
    #[command(flatten)]
    feat: FeatureOpts,
    /// Softmax temperature of the affinity
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    /// Window radius in grid cells
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: usize,
    /// Binarize threshold
    #[arg(long, default_value_t = DEFAULT_BINARIZE_THRESHOLD)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Fixture name: two-objects, translating-squares or static
    #[arg(long)]
    fixture: String,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Width in pixels (default: fixture size)
    #[arg(long)]
    width: Option<usize>,
    /// Height in pixels (default: fixture size)
    #[arg(long)]
    height: Option<usize>,
    /// Number of frames
    #[arg(long, default_value_t = 30)]
    frames: usize,
    /// Random seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// File name pattern of the written frames
    #[arg(long, default_value = DEFAULT_PATTERN)]
    pattern: String,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Directory of input frames
    #[arg(long)]
    input: Option<PathBuf>,
    /// Validate an STCF file and print its header
    #[arg(long)]
    stcf: Option<PathBuf>,
    /// Write the built-in features of --input to this STCF file
    #[arg(long)]
    export: Option<PathBuf>,
    /// File name pattern of the frames
    #[arg(long, default_value = DEFAULT_PATTERN)]
    pattern: String,
    #[command(flatten)]
    feat: FeatureOpts,
}

/// Failure of a subcommand: usage problems exit 1, data problems exit 2.
enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn stage(name: &str, done: usize, total: usize) {
    eprintln!("STAGE {name} {done}/{total}");
}

fn parse_pattern(s: &str) -> Result<FramePattern, Failure> {
    FramePattern::parse(s).map_err(|e| Failure::Usage(e.to_string()))
}

fn feature_config(feat: &FeatureOpts) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::default();
    cfg.set("features", &feat.features)?;
    cfg.set("stride", &feat.stride.to_string())?;
    cfg.set("scales", &feat.scales)?;
    cfg.set("resize", &feat.resize)?;
    Ok(cfg)
}

fn load_grids(seq: &VideoSequence, cfg: &PipelineConfig) -> Result<Vec<FeatureGrid>, Failure> {
    Ok(match &cfg.features {
        FeatureChoice::Builtin => sequence_features(seq, cfg.stride, &cfg.scales, Some(&stage))?,
        FeatureChoice::Stcf(path) => {
            let (w, h) = seq.dims();
            let (gh, gw) = grid_dims(w, h, cfg.stride);
            load_external(path, (seq.len(), gh, gw), cfg.stride)?
        }
    })
}

fn run_colorize(args: &ColorizeArgs, matches: &ArgMatches) -> Outcome {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    for key in CONFIG_KEYS {
        let id = key.replace('-', "_");
        if matches.value_source(&id) == Some(ValueSource::CommandLine) {
            if let Some(raw) = matches.get_raw(&id).and_then(|mut v| v.next()) {
                cfg.set(key, &raw.to_string_lossy())?;
            }
        }
    }
    for r in &args.refs {
        cfg.set("ref", r)?;
    }
    cfg.validate()?;
    if cfg.references.is_empty() {
        return Err(Failure::Usage("at least one --ref INDEX=PATH is required".into()));
    }
    let pattern = parse_pattern(&args.pattern)?;
    let seq = load_sequence_resized(&args.input, &pattern, cfg.resize)?;
    let gray = VideoSequence::new(seq.frames().iter().map(|f| f.to_gray()).collect())?;
    let (w, h) = gray.dims();
    let refs = cfg
        .references
        .iter()
        .map(|r| {
            Ok(ColorReference {
                index: r.index,
                frame: load_frame(&r.path, r.index, Some((w as u32, h as u32)))?,
            })
        })
        .collect::<chromaflow::Result<Vec<_>>>()?;
    let labels = match &args.labels {
        Some(dir) if cfg.mode.uses_instances() => {
            Some(load_label_maps(dir, &pattern, cfg.stride, Some((w as u32, h as u32)))?)
        }
        _ => None,
    };
    let out = colorize(&gray, &refs, labels.as_deref(), &cfg, Some(&stage))?;
    save_sequence(&out.sequence, &args.out, &pattern)?;
    let fallback: usize = out.warps.iter().map(|w| w.fallback_cells().count()).sum();
    println!("colorized {} frames into {} ({fallback} fallback cells)", out.sequence.len(), args.out.display());
    Ok(())
}

fn load_pair(io: &EvalInputs, masks: Option<&Path>) -> Result<VideoPair, Failure> {
    let pattern = parse_pattern(&io.pattern)?;
    Ok(VideoPair {
        name: io.video.clone(),
        pred: load_rgb_dir(&io.pred, &pattern)?,
        gt: load_rgb_dir(&io.gt, &pattern)?,
        instances: masks.map(|d| load_mask_dir(d, &pattern)).transpose()?,
    })
}

fn emit_reports(io: &EvalInputs, reports: &[MetricReport]) -> Outcome {
    let csv = reports_to_csv(reports)?;
    match &io.out {
        Some(p) => std::fs::write(p, csv).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        None => print!("{csv}"),
    }
    if let Some(p) = &io.markdown {
        std::fs::write(p, reports_markdown(&io.method, reports))
            .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn run_eval_psnr(args: &EvalPsnrArgs) -> Outcome {
    let pair = load_pair(&args.io, args.masks.as_deref())?;
    emit_reports(&args.io, &evaluate_psnr(&[pair])?)
}

fn run_eval_outlier(args: &EvalOutlierArgs) -> Outcome {
    let pair = load_pair(&args.io, None)?;
    emit_reports(&args.io, &outlier_sweep(&[pair], &args.thresholds)?)
}

fn parse_cells(s: &str) -> Result<Vec<usize>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Failure::Usage(format!("bad cell index `{t}`"))))
        .collect()
}

fn run_dense_track(args: &DenseTrackArgs) -> Outcome {
    let cfg = feature_config(&args.feat)?;
    let pattern = parse_pattern(&args.pattern)?;
    let seq = load_sequence_resized(&args.input, &pattern, cfg.resize)?;
    let grids = load_grids(&seq, &cfg)?;
    let (gh, gw) = (grids[0].grid_h(), grids[0].grid_w());
    let normalized = std::sync::Arc::new(grids.iter().map(NormalizedGrid::new).collect::<Vec<_>>());
    let params = DenseParams {
        radius: args.radius,
        threshold: args.threshold,
        temperature: args.temperature,
    };
    let tracker = DenseTracker::new(normalized, params)?;
    let mask = tracker.mask(args.target, args.reference)?;
    let cells = match &args.cells {
        Some(s) => parse_cells(s)?,
        None => (0..gh * gw).collect(),
    };
    let written = dump_masks(&mask, gh, gw, &cells, cfg.stride as u32, &args.out)?;
    println!("wrote {} masks to {}", written.len(), args.out.display());
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Outcome {
    let mut spec = FixtureSpec::named(&args.fixture)?;
    spec.width = args.width.unwrap_or(spec.width);
    spec.height = args.height.unwrap_or(spec.height);
    spec.frames = args.frames;
    spec.seed = args.seed;
    let fixture = generate_fixture(&spec)?;
    fixture.write(&args.out, &parse_pattern(&args.pattern)?)?;
    println!(
        "wrote {} {}x{} frames of {} to {}",
        spec.frames,
        spec.width,
        spec.height,
        spec.name,
        args.out.display()
    );
    Ok(())
}

fn run_inspect(args: &InspectArgs) -> Outcome {
    if let Some(p) = &args.stcf {
        let bytes = std::fs::read(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
        let h = parse_stcf_header(&bytes)?;
        chromaflow::features::decode_stcf(&bytes, None, args.feat.stride)?;
        println!(
            "{}: frames={} grid={}x{} channels={}",
            p.display(),
            h.frames,
            h.grid_w,
            h.grid_h,
            h.channels
        );
    }
    if let Some(dir) = &args.input {
        let cfg = feature_config(&args.feat)?;
        let seq = load_sequence_resized(dir, &parse_pattern(&args.pattern)?, cfg.resize)?;
        let grids = load_grids(&seq, &cfg)?;
        for (k, g) in grids.iter().enumerate() {
            let d = g.data();
            let mean = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
            let (lo, hi) = d.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            println!(
                "frame {}: grid={}x{} channels={} mean={mean:.4} min={lo:.4} max={hi:.4}",
                k + 1,
                g.grid_w(),
                g.grid_h(),
                g.channels()
            );
        }
        if let Some(out) = &args.export {
            write_stcf(out, &grids)?;
            println!("wrote {}", out.display());
        }
    } else if args.export.is_some() {
        return Err(Failure::Usage("--export needs --input".into()));
    }
    if args.stcf.is_none() && args.input.is_none() {
        return Err(Failure::Usage("give --input and/or --stcf".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    let outcome = match &cli.command {
        Command::Colorize(a) => run_colorize(a, sub),
        Command::EvalPsnr(a) => run_eval_psnr(a),
        Command::EvalOutlier(a) => run_eval_outlier(a),
        Command::DenseTrack(a) => run_dense_track(a),
        Command::Synth(a) => run_synth(a),
        Command::InspectFeatures(a) => run_inspect(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
