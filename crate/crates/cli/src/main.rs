//! `kpcalc`: command-line frontend for the kpcalc library.

mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use kpcalc::biaslab::{ablation_rows, monte_carlo, AblationPreset, ErrorStats, OracleMode, Sampler, TOPDOWN_ROI};
use kpcalc::codec::{default_radius, CcrfMaps, Codec, Heatmap, DEFAULT_SIGMA};
use kpcalc::geometry::{t_flip, t_rotate};
use kpcalc::io::{self, ReportFormat, DEFAULT_PADDING};
use kpcalc::pipeline::{
    input_to_output, output_to_source, parse_size, test_transform, train_transform, Combine, Compensation,
    Convention, PipelineConfig,
};
use kpcalc::raster::{self, PgmEncoding};
use kpcalc::{BorderPolicy, ImageGrid, Point, Roi, Transform2D};

#[derive(Parser)]
#[command(name = "kpcalc", version, about = "Keypoint transform, codec and bias calculator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the train/test transform matrices for an ROI and map a point.
    Transform(TransformArgs),
    /// Warp a grid file by an affine transform.
    Warp(WarpArgs),
    /// Encode a keypoint into a heatmap grid.
    Encode(EncodeArgs),
    /// Decode a heatmap grid into a keypoint.
    Decode(DecodeArgs),
    /// Run a Monte Carlo bias simulation for one configuration.
    Simulate(SimulateArgs),
    /// Check the transform identities and closed-form error values.
    Verify(VerifyArgs),
    /// Run a preset ablation grid.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CodecArg {
    Ccrf,
    Cf,
    CfBiased,
    Argmax,
}

impl From<CodecArg> for Codec {
    fn from(c: CodecArg) -> Codec {
        match c {
            CodecArg::Ccrf => Codec::Ccrf,
            CodecArg::Cf => Codec::Cf,
            CodecArg::CfBiased => Codec::CfBiasedDecode,
            CodecArg::Argmax => Codec::ArgmaxOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CombineArg {
    Coords,
    Heatmaps,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Analytic,
    Full,
}

impl From<ModeArg> for OracleMode {
    fn from(m: ModeArg) -> OracleMode {
        match m {
            ModeArg::Analytic => OracleMode::AnalyticShift,
            ModeArg::Full => OracleMode::FullHeatmap,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> ReportFormat {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BorderArg {
    Zero,
    Clamp,
}

/// Pipeline knobs shared by the commands that build a configuration.
#[derive(Args)]
struct PipelineArgs {
    /// Unit-length resize convention (default: pixel-count).
    #[arg(long)]
    ucst: bool,
    /// Flip testing.
    #[arg(long)]
    ft: bool,
    /// Shift the flipped result by one output pixel before averaging.
    #[arg(long, requires = "ft")]
    snoop: bool,
    /// Subtract the residual 1/(2s) after SNOOP.
    #[arg(long, requires = "snoop")]
    ec: bool,
    /// Resize the network output to input resolution before decoding.
    #[arg(long)]
    rno: bool,
    /// Keypoint codec.
    #[arg(long, value_enum)]
    codec: Option<CodecArg>,
    /// Flip combination (default: heatmaps for Gaussian codecs, coords for CCRF).
    #[arg(long, value_enum)]
    combine: Option<CombineArg>,
    /// Network input size, WIDTHxHEIGHT pixels.
    #[arg(long, value_name = "WxH")]
    input: Option<String>,
    /// Network output size, WIDTHxHEIGHT pixels.
    #[arg(long, value_name = "WxH")]
    output: Option<String>,
    /// Gaussian sigma in output units.
    #[arg(long)]
    sigma: Option<f64>,
    /// CCRF disc radius in output units (default 0.0625 * output width).
    #[arg(long)]
    radius: Option<f64>,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let conv = if self.ucst {
            Convention::UnitLength
        } else {
            Convention::PixelCount
        };
        let input = parse_size(self.input.as_deref().unwrap_or("192x256")).map_err(usage)?;
        let output = parse_size(self.output.as_deref().unwrap_or("48x64")).map_err(usage)?;
        let comp = match (self.snoop, self.ec) {
            (false, _) => Compensation::None,
            (true, false) => Compensation::Snoop,
            (true, true) => Compensation::SnoopPlusEc,
        };
        let mut cfg = PipelineConfig::new(conv, input, output)
            .with_flip_test(self.ft)
            .with_compensation(comp)
            .with_codec(self.codec.map_or(Codec::Cf, Codec::from))
            .with_rno(self.rno);
        if let Some(c) = self.combine {
            cfg.combine = match c {
                CombineArg::Coords => Combine::AverageCoords,
                CombineArg::Heatmaps => Combine::AverageHeatmaps,
            };
        }
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
        cfg.radius = self.radius.unwrap_or_else(|| default_radius(output));
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TransformArgs {
    /// ROI as cx,cy,w,h in source units.
    #[arg(long, value_parser = parse_roi, allow_hyphen_values = true)]
    roi: Roi,
    /// Training-time rotation in degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta_deg: f64,
    /// Include the training-time horizontal flip.
    #[arg(long)]
    flip: bool,
    /// Source point to push through the chains, as x,y.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    point: Option<Point>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct WarpArgs {
    /// Input grid: `.pgm` or text grid.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output grid: `.pgm` or text grid.
    #[arg(long)]
    out: PathBuf,
    /// Destination size WIDTHxHEIGHT (default: same as the input).
    #[arg(long, value_name = "WxH")]
    size: Option<String>,
    /// Affine matrix rows a,b,c,d,e,f mapping source to destination.
    #[arg(long, value_parser = parse_matrix, allow_hyphen_values = true)]
    matrix: Option<Transform2D>,
    /// Horizontal flip about the image center.
    #[arg(long, conflicts_with = "matrix")]
    flip: bool,
    /// Rotation about the image center in degrees.
    #[arg(long, conflicts_with_all = ["matrix", "flip"], allow_hyphen_values = true)]
    rotate_deg: Option<f64>,
    #[arg(long, value_enum, default_value = "zero")]
    border: BorderArg,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long, value_enum)]
    codec: CodecArg,
    /// Keypoint x,y in output units.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    point: Point,
    /// Heatmap size WIDTHxHEIGHT.
    #[arg(long, value_name = "WxH")]
    size: String,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    /// CCRF disc radius (default 0.0625 * width).
    #[arg(long)]
    radius: Option<f64>,
    /// Output text grid path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, value_enum)]
    codec: CodecArg,
    /// Heatmap grid: `.pgm` or text grid (3 channels for CCRF).
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Oracle mode.
    #[arg(long, value_enum, default_value = "analytic")]
    mode: ModeArg,
    /// Number of trials per configuration.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// PRNG seed.
    #[arg(long)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write the stats to this file.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// key = value configuration file, instead of the pipeline flags.
    #[arg(long, conflicts_with = "PipelineArgs")]
    config: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// ROI as cx,cy,w,h in source units.
    #[arg(long, value_parser = parse_roi, allow_hyphen_values = true, conflicts_with = "coco")]
    roi: Option<Roi>,
    /// Sample ground truth from COCO keypoint annotations.
    #[arg(long)]
    coco: Option<PathBuf>,
    /// Uniform sampler margin in output units (default 3 sigma, or the CCRF radius).
    #[arg(long)]
    margin: Option<f64>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// PRNG seed for the random identity draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    preset: PresetArg,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Topdown,
    Bottomup,
}

/// Marks an error as a usage error (exit code 2).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn parse_reals<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad number {v:?}")))
        .collect::<Result<_, _>>()?;
    vals.try_into().map_err(|_| format!("expected {N} comma-separated numbers"))
}

fn parse_roi(s: &str) -> Result<Roi, String> {
    let [cx, cy, w, h] = parse_reals::<4>(s)?;
    Roi::new(cx, cy, w, h).map_err(|e| e.to_string())
}

fn parse_point(s: &str) -> Result<Point, String> {
    let [x, y] = parse_reals::<2>(s)?;
    Ok(Point::new(x, y))
}

fn parse_matrix(s: &str) -> Result<Transform2D, String> {
    let [a, b, c, d, e, f] = parse_reals::<6>(s)?;
    Transform2D::from_rows([[a, b, c], [d, e, f]]).map_err(|e| e.to_string())
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn read_any_grid(path: &Path) -> Result<ImageGrid> {
    let g = if is_pgm(path) {
        raster::read_pgm(path)
    } else {
        raster::read_grid(path)
    };
    g.with_context(|| format!("reading {}", path.display()))
}

fn write_any_grid(grid: &ImageGrid, path: &Path) -> Result<()> {
    let r = if is_pgm(path) {
        raster::write_pgm(grid, path, PgmEncoding::Binary, 255)
    } else {
        raster::write_grid(grid, path)
    };
    r.with_context(|| format!("writing {}", path.display()))
}

fn matrix_json(t: &Transform2D) -> serde_json::Value {
    json!(t.matrix())
}

fn cmd_transform(a: &TransformArgs) -> Result<()> {
    let cfg = a.pipeline.config()?;
    let theta = a.theta_deg.to_radians();
    let train = train_transform(&a.roi, theta, a.flip, &cfg)?;
    let test = test_transform(&a.roi, &cfg)?;
    let i2o = input_to_output(&cfg);
    let o2s = output_to_source(&a.roi, &cfg)?;
    let mut out = json!({
        "config": cfg.label(),
        "stride": cfg.stride(),
        "train": matrix_json(&train),
        "test": matrix_json(&test),
        "input_to_output": matrix_json(&i2o),
        "output_to_source": matrix_json(&o2s),
        "flip_input": matrix_json(&t_flip(cfg.input.width_units())),
    });
    if let Some(p) = a.point {
        let k_i = test.apply(p);
        let k_o = i2o.apply(k_i);
        out["point"] = json!({
            "source": [p.x, p.y],
            "train_input": [train.apply(p).x, train.apply(p).y],
            "input": [k_i.x, k_i.y],
            "output": [k_o.x, k_o.y],
            "back_to_source": [o2s.apply(k_o).x, o2s.apply(k_o).y],
        });
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_warp(a: &WarpArgs) -> Result<()> {
    let src = read_any_grid(&a.input)?;
    let dst_size = match &a.size {
        Some(s) => parse_size(s).map_err(usage)?,
        None => src.size(),
    };
    let center = Point::new(0.5 * src.size().width_units(), 0.5 * src.size().height_units());
    let t = if let Some(m) = a.matrix {
        m
    } else if a.flip {
        t_flip(src.size().width_units())
    } else if let Some(deg) = a.rotate_deg {
        t_rotate(deg.to_radians(), center)
    } else {
        Transform2D::IDENTITY
    };
    let policy = match a.border {
        BorderArg::Zero => BorderPolicy::ZeroFill,
        BorderArg::Clamp => BorderPolicy::ClampToEdge,
    };
    let out = raster::warp(&src, &t, dst_size, policy)?;
    write_any_grid(&out, &a.out)?;
    println!("{}", json!({ "matrix": matrix_json(&t), "size": dst_size.to_string() }));
    Ok(())
}

fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    let size = parse_size(&a.size).map_err(usage)?;
    let codec = Codec::from(a.codec);
    let h = codec.encode(a.point, size, a.sigma, a.radius.unwrap_or_else(|| default_radius(size)))?;
    write_any_grid(&h.to_grid(), &a.out)?;
    println!("{}", json!({ "codec": codec.name(), "point": [a.point.x, a.point.y], "size": size.to_string() }));
    Ok(())
}

fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    let codec = Codec::from(a.codec);
    let grid = read_any_grid(&a.input)?;
    let h = match codec {
        Codec::Ccrf => Heatmap::Ccrf(CcrfMaps::from_grid(&grid)?),
        _ => Heatmap::Classification(grid.channel(0)),
    };
    let d = codec.decode(&h)?;
    println!("{}", serde_json::to_string(&d)?);
    Ok(())
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(0) => Err(usage("--jobs must be at least 1")),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
        None => Ok(f()),
    }
}

fn emit(stats: &[ErrorStats], run: &RunArgs) -> Result<()> {
    print!("{}", io::format_report(stats, ReportFormat::Csv)?);
    if let Some(path) = &run.report {
        io::write_report(stats, run.format.into(), path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            PipelineConfig::from_kv(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => a.pipeline.config()?,
    };
    let sampler = match &a.coco {
        Some(path) => {
            let data = io::load_coco_keypoints(path).with_context(|| format!("loading {}", path.display()))?;
            eprintln!(
                "loaded {} instances ({} unlabelled and {} empty boxes skipped)",
                data.instances.len(),
                data.skipped_unlabelled,
                data.skipped_empty_bbox
            );
            let aspect = f64::from(cfg.input.width_px()) / f64::from(cfg.input.height_px());
            io::keypoint_sampler(&data.instances, aspect, DEFAULT_PADDING)?
        }
        None => Sampler::Uniform {
            roi: a.roi.unwrap_or(TOPDOWN_ROI),
            margin: a.margin,
        },
    };
    let mode = OracleMode::from(a.run.mode);
    let stats = with_jobs(a.run.jobs, || monte_carlo(&cfg, mode, a.run.n, a.run.seed, &sampler))??;
    emit(&[stats], &a.run)
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let preset = match a.preset {
        PresetArg::Topdown => AblationPreset::TopDown,
        PresetArg::Bottomup => AblationPreset::BottomUp,
    };
    let mode = OracleMode::from(a.run.mode);
    let stats = with_jobs(a.run.jobs, || {
        ablation_rows(preset)
            .into_iter()
            .map(|row| {
                let mut s = monte_carlo(&row.cfg, mode, a.run.n, a.run.seed, &Sampler::uniform(row.roi))?;
                s.label = format!("{}: {}", row.id, s.label);
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    emit(&stats, &a.run)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Transform(a) => cmd_transform(a)?,
        Command::Warp(a) => cmd_warp(a)?,
        Command::Encode(a) => cmd_encode(a)?,
        Command::Decode(a) => cmd_decode(a)?,
        Command::Simulate(a) => cmd_simulate(a)?,
        Command::Ablate(a) => cmd_ablate(a)?,
        Command::Verify(a) => return Ok(verify::run(a.seed)),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
