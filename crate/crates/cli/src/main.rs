//! Command-line front end: `fuse`, `eval`, `toy-train`, `convert`.
//!
//! Every run echoes its fully-resolved configuration as JSON on stdout
//! before doing any work, so a run is reproducible from its own log.
//! Parameters come from flags, optionally backed by a JSON config file
//! (`--config`); flags always win. Exit codes: 0 success, 1 I/O failure,
//! 2 validation failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dispfuse::duonet::{make_stereogram, save_net, train_toy, DualNet, StereogramSample};
use dispfuse::io;
use dispfuse::metrics::depth_from_disparity;
use dispfuse::{
    evaluate, fuse_naive, fuse_with_details, CameraCalib, DisparityMap, Error, ImageF, LogBase,
    Pyramid, QualityConfig, Raster,
};

#[derive(Parser)]
#[command(name = "dispfuse", version, about = "Multi-exposure disparity fusion toolbox")]
struct Cli {
    /// JSON config file holding default parameter values; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse disparity maps from a multi-exposure stereo stack.
    Fuse(FuseArgs),
    /// Compare a predicted map against ground truth and write a metric report.
    Eval(EvalArgs),
    /// Train the toy dual-encoder net on random-dot stereograms.
    ToyTrain(TrainArgs),
    /// Convert a disparity map to metric depth.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct FuseArgs {
    /// Left-view images, one per exposure (PNG/PGM/PPM/PFM).
    #[arg(long, num_args = 1.., value_name = "IMG")]
    left: Vec<PathBuf>,
    /// Disparity maps, one per exposure, same order as --left (PFM).
    #[arg(long, num_args = 1.., value_name = "PFM")]
    disp: Vec<PathBuf>,
    /// Output PFM path; previews are written next to it.
    #[arg(long, value_name = "PFM")]
    out: Option<PathBuf>,
    /// Contrast exponent.
    #[arg(long)]
    wc: Option<f64>,
    /// Well-exposedness exponent.
    #[arg(long)]
    we: Option<f64>,
    /// Width of the well-exposedness bump around 0.5.
    #[arg(long)]
    sigma: Option<f64>,
    /// Median filter window (odd).
    #[arg(long)]
    median: Option<usize>,
    /// Pyramid levels; defaults to two short of the deepest possible.
    #[arg(long)]
    levels: Option<usize>,
    /// Single-scale weighted average instead of pyramid blending.
    #[arg(long)]
    naive: bool,
    /// Directory to dump every pyramid level into, as PFM files.
    #[arg(long, value_name = "DIR")]
    dump_pyramids: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted disparity map (PFM).
    #[arg(long, value_name = "PFM")]
    pred: Option<PathBuf>,
    /// Ground-truth disparity map (PFM).
    #[arg(long, value_name = "PFM")]
    gt: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
    /// Stereo baseline in meters; with --focal, evaluates in depth space.
    #[arg(long)]
    baseline: Option<f64>,
    /// Focal length in pixels; with --baseline, evaluates in depth space.
    #[arg(long)]
    focal: Option<f64>,
    /// Use the natural logarithm for the log error instead of base 10.
    #[arg(long)]
    natural_log: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Seed for both the net init and the generated dataset.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Number of random-dot stereograms to generate.
    #[arg(long)]
    samples: Option<usize>,
    /// Stereogram side length in pixels (must be divisible by 8).
    #[arg(long)]
    size: Option<usize>,
    /// Disparity shift of the floating region.
    #[arg(long)]
    shift: Option<usize>,
    /// Channel width of the narrowest encoder stage (even).
    #[arg(long)]
    width: Option<usize>,
    /// Output path for the trained net.
    #[arg(long, value_name = "BIN")]
    out: Option<PathBuf>,
    /// Output path for the per-epoch loss curve.
    #[arg(long, value_name = "CSV")]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Disparity map to convert (PFM).
    #[arg(long, value_name = "PFM")]
    disp: Option<PathBuf>,
    /// Stereo baseline in meters.
    #[arg(long)]
    baseline: Option<f64>,
    /// Focal length in pixels.
    #[arg(long)]
    focal: Option<f64>,
    /// Output depth map path (PFM).
    #[arg(long, value_name = "PFM")]
    out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Config file: one optional section per command, every field optional.

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    fuse: FuseFile,
    #[serde(default)]
    eval: EvalFile,
    #[serde(default)]
    toy_train: TrainFile,
    #[serde(default)]
    convert: ConvertFile,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FuseFile {
    left: Option<Vec<PathBuf>>,
    disp: Option<Vec<PathBuf>>,
    out: Option<PathBuf>,
    wc: Option<f64>,
    we: Option<f64>,
    sigma: Option<f64>,
    median: Option<usize>,
    levels: Option<usize>,
    naive: Option<bool>,
    dump_pyramids: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFile {
    pred: Option<PathBuf>,
    gt: Option<PathBuf>,
    out: Option<PathBuf>,
    baseline: Option<f64>,
    focal: Option<f64>,
    natural_log: Option<bool>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    seed: Option<u64>,
    epochs: Option<usize>,
    lr: Option<f64>,
    samples: Option<usize>,
    size: Option<usize>,
    shift: Option<usize>,
    width: Option<usize>,
    out: Option<PathBuf>,
    curve: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvertFile {
    disp: Option<PathBuf>,
    baseline: Option<f64>,
    focal: Option<f64>,
    out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Failure plumbing. Library errors map onto the documented exit codes:
// anything that touched the filesystem is 1, everything else is 2.

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Format { .. } => 1,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

/// `flag.or(file)`, with a named error when neither side provided the value.
fn need<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, Failure> {
    flag.or(file).ok_or_else(|| invalid(format!("missing required parameter --{name}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure { code: 1, message: format!("{}: {e}", path.display()) })?;
            serde_json::from_str::<FileConfig>(&text)
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Fuse(a) => cmd_fuse(a, file.fuse),
        Command::Eval(a) => cmd_eval(a, file.eval),
        Command::ToyTrain(a) => cmd_toy_train(a, file.toy_train),
        Command::Convert(a) => cmd_convert(a, file.convert),
    }
}

fn echo(resolved: &impl Serialize) {
    // Resolved-config echo: the one line that makes a run reproducible.
    println!("{}", serde_json::to_string(resolved).expect("config serializes"));
}

// ---------------------------------------------------------------------------
// fuse

#[derive(Serialize)]
struct FuseResolved {
    command: &'static str,
    left: Vec<PathBuf>,
    disp: Vec<PathBuf>,
    out: PathBuf,
    wc: f64,
    we: f64,
    sigma: f64,
    median: usize,
    levels: Option<usize>,
    naive: bool,
    dump_pyramids: Option<PathBuf>,
}

fn cmd_fuse(a: FuseArgs, f: FuseFile) -> Result<(), Failure> {
    let left = if a.left.is_empty() { f.left.unwrap_or_default() } else { a.left };
    let disp = if a.disp.is_empty() { f.disp.unwrap_or_default() } else { a.disp };
    let defaults = QualityConfig::default();
    let r = FuseResolved {
        command: "fuse",
        left,
        disp,
        out: need(a.out, f.out, "out")?,
        wc: a.wc.or(f.wc).unwrap_or(defaults.w_c),
        we: a.we.or(f.we).unwrap_or(defaults.w_e),
        sigma: a.sigma.or(f.sigma).unwrap_or(defaults.sigma),
        median: a.median.or(f.median).unwrap_or(defaults.median_window),
        levels: a.levels.or(f.levels),
        naive: a.naive || f.naive.unwrap_or(false),
        dump_pyramids: a.dump_pyramids.or(f.dump_pyramids),
    };
    echo(&r);

    if r.left.is_empty() || r.left.len() != r.disp.len() {
        return Err(invalid(format!(
            "expected equal counts, got {} images, {} disparities",
            r.left.len(),
            r.disp.len()
        )));
    }

    let images: Vec<ImageF> =
        r.left.iter().map(io::read_image).collect::<Result<_, _>>()?;
    let maps: Vec<DisparityMap> =
        r.disp.iter().map(io::read_pfm).collect::<Result<_, _>>()?;
    let labels: Vec<String> = r.disp.iter().map(|p| stem(p)).collect();

    let stack = dispfuse::ExposureStack::new(images, maps, labels)?;
    let cfg = QualityConfig { w_c: r.wc, w_e: r.we, sigma: r.sigma, median_window: r.median };
    let details = fuse_with_details(&stack, &cfg, r.levels)?;
    let fused = if r.naive { fuse_naive(&stack, &cfg)? } else { details.fused.clone() };

    io::write_pfm(&r.out, &fused)?;
    io::write_image(r.out.with_extension("png"), &preview(&fused))?;
    for (label, weight) in stack.labels().iter().zip(&details.weights.normalized) {
        let path = sibling(&r.out, &format!("weight_{label}.png"));
        io::write_image(path, &stretch(weight))?;
    }

    if let Some(dir) = &r.dump_pyramids {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure { code: 1, message: format!("{}: {e}", dir.display()) })?;
        for (label, pyr) in stack.labels().iter().zip(&details.disparity_pyramids) {
            if let Pyramid::Laplacian { bands, base } = pyr {
                for (l, band) in bands.iter().enumerate() {
                    io::write_pfm_raster(dir.join(format!("{label}_lap{l}.pfm")), band)?;
                }
                io::write_pfm_raster(dir.join(format!("{label}_base.pfm")), &base)?;
            }
        }
        for (label, pyr) in stack.labels().iter().zip(&details.weight_pyramids) {
            if let Pyramid::Gaussian { levels } = pyr {
                for (l, level) in levels.iter().enumerate() {
                    io::write_pfm_raster(dir.join(format!("{label}_gw{l}.pfm")), level)?;
                }
            }
        }
    }
    println!(
        "fused {} exposures at {} levels -> {}",
        stack.len(),
        details.levels,
        r.out.display()
    );
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "map".into())
}

fn sibling(out: &Path, name: &str) -> PathBuf {
    let stem = stem(out);
    out.with_file_name(format!("{stem}_{name}"))
}

/// Min-max stretched 8-bit view of a map; invalid pixels render black.
fn preview(map: &DisparityMap) -> ImageF {
    let (h, w) = map.extent();
    let (lo, hi) = map.min_max_valid().unwrap_or((0.0, 1.0));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data: Vec<f64> = map
        .data()
        .iter()
        .zip(map.mask())
        .map(|(&v, &ok)| if ok { (v - lo) / span } else { 0.0 })
        .collect();
    ImageF::new(h, w, 1, data).expect("preview extent matches map")
}

fn stretch(r: &Raster) -> ImageF {
    let (h, w) = r.extent();
    let (lo, hi) = r.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data: Vec<f64> = r.data().iter().map(|&v| (v - lo) / span).collect();
    ImageF::new(h, w, 1, data).expect("stretch extent matches raster")
}

// ---------------------------------------------------------------------------
// eval

#[derive(Serialize)]
struct EvalResolved {
    command: &'static str,
    pred: PathBuf,
    gt: PathBuf,
    out: PathBuf,
    baseline: Option<f64>,
    focal: Option<f64>,
    natural_log: bool,
}

fn cmd_eval(a: EvalArgs, f: EvalFile) -> Result<(), Failure> {
    let r = EvalResolved {
        command: "eval",
        pred: need(a.pred, f.pred, "pred")?,
        gt: need(a.gt, f.gt, "gt")?,
        out: need(a.out, f.out, "out")?,
        baseline: a.baseline.or(f.baseline),
        focal: a.focal.or(f.focal),
        natural_log: a.natural_log || f.natural_log.unwrap_or(false),
    };
    echo(&r);

    let calib = match (r.baseline, r.focal) {
        (Some(b), Some(fl)) => Some(CameraCalib::new(b, fl)?),
        (None, None) => None,
        _ => return Err(invalid("--baseline and --focal must be given together")),
    };
    let base = if r.natural_log { LogBase::Natural } else { LogBase::Ten };

    let pred = io::read_pfm(&r.pred)?;
    let gt = io::read_pfm(&r.gt)?;
    let report = evaluate(&pred, &gt, calib.as_ref(), base)?;

    let csv = format!("{}\n{}\n", dispfuse::MetricReport::csv_header(), report.to_csv_row());
    std::fs::write(&r.out, csv)
        .map_err(|e| Failure { code: 1, message: format!("{}: {e}", r.out.display()) })?;

    println!("evaluated in {} space over {} valid pixels", report.space, report.valid_count);
    for (name, value) in [
        ("abs_rel", report.abs_rel),
        ("sq_rel", report.sq_rel),
        ("log_err", report.log_err),
        ("rmse", report.rmse),
        ("sigma1", report.sigma1),
        ("sigma2", report.sigma2),
        ("sigma3", report.sigma3),
        ("ssim", report.ssim),
    ] {
        println!("  {name:<8} {value:.6}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// toy-train

#[derive(Serialize)]
struct TrainResolved {
    command: &'static str,
    seed: u64,
    epochs: usize,
    lr: f64,
    samples: usize,
    size: usize,
    shift: usize,
    width: usize,
    out: PathBuf,
    curve: Option<PathBuf>,
}

fn cmd_toy_train(a: TrainArgs, f: TrainFile) -> Result<(), Failure> {
    let r = TrainResolved {
        command: "toy-train",
        seed: a.seed.or(f.seed).unwrap_or(7),
        epochs: a.epochs.or(f.epochs).unwrap_or(30),
        lr: a.lr.or(f.lr).unwrap_or(1e-2),
        samples: a.samples.or(f.samples).unwrap_or(200),
        size: a.size.or(f.size).unwrap_or(32),
        shift: a.shift.or(f.shift).unwrap_or(4),
        width: a.width.or(f.width).unwrap_or(8),
        out: need(a.out, f.out, "out")?,
        curve: a.curve.or(f.curve),
    };
    echo(&r);

    if r.samples == 0 {
        return Err(invalid("--samples must be at least 1"));
    }
    let data: Vec<StereogramSample> = (0..r.samples)
        .map(|i| make_stereogram(r.seed * 10_000 + i as u64, r.size, r.size, r.shift))
        .collect::<Result<_, _>>()?;
    let mut net = DualNet::new(r.width, r.seed)?;
    let curve = train_toy(&mut net, &data, r.epochs, r.lr)?;

    save_net(&r.out, &net, Some(r.seed))?;
    if let Some(path) = &r.curve {
        let mut csv = String::from("epoch,mean_loss\n");
        for (epoch, loss) in curve.iter().enumerate() {
            csv.push_str(&format!("{epoch},{loss}\n"));
        }
        std::fs::write(path, csv)
            .map_err(|e| Failure { code: 1, message: format!("{}: {e}", path.display()) })?;
    }
    match (curve.first(), curve.last()) {
        (Some(first), Some(last)) => {
            println!("trained {} epochs: mean loss {first:.4} -> {last:.4}", curve.len())
        }
        _ => println!("trained 0 epochs"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// convert

#[derive(Serialize)]
struct ConvertResolved {
    command: &'static str,
    disp: PathBuf,
    baseline: f64,
    focal: f64,
    out: PathBuf,
}

fn cmd_convert(a: ConvertArgs, f: ConvertFile) -> Result<(), Failure> {
    let r = ConvertResolved {
        command: "convert",
        disp: need(a.disp, f.disp, "disp")?,
        baseline: need(a.baseline, f.baseline, "baseline")?,
        focal: need(a.focal, f.focal, "focal")?,
        out: need(a.out, f.out, "out")?,
    };
    echo(&r);

    let calib = CameraCalib::new(r.baseline, r.focal)?;
    let disp = io::read_pfm(&r.disp)?;
    let depth = depth_from_disparity(&disp, &calib);
    io::write_pfm(&r.out, &depth)?;
    println!("wrote depth map {}", r.out.display());
    Ok(())
}
