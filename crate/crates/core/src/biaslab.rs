//! Ideal-network oracle, Monte Carlo error engine and closed-form error table.
//!
//! The oracle stands in for a network that reached zero training loss: given
//! a keypoint in the input plane it returns exactly the training target for
//! that keypoint. Any residual error measured downstream therefore comes from
//! the data-processing pipeline alone.
//!
//! Two oracle modes are available:
//!
//! - [`OracleMode::AnalyticShift`] works on points. The network output is the
//!   output-plane keypoint itself, and decoding is modelled as exact for every
//!   codec except [`Codec::CfBiasedDecode`], whose quarter-offset rule is
//!   applied to the point that a heatmap peak would sit at.
//! - [`OracleMode::FullHeatmap`] renders real heatmaps, averages or flips them
//!   on the grid and runs the real decoders.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Codec, Heatmap};
use crate::error::{Error, Result};
use crate::geometry::{t_flip, PlaneSize, Point, Roi, Transform2D};
use crate::pipeline::{
    apply_ec, combine_heatmaps, combine_points, input_to_output, output_to_source, rno_upsample_heatmap,
    test_transform, Combine, Compensation, Convention, PipelineConfig, COCO_FLIP_PAIRS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OracleMode {
    AnalyticShift,
    FullHeatmap,
}

impl OracleMode {
    pub fn name(&self) -> &'static str {
        match self {
            OracleMode::AnalyticShift => "analytic",
            OracleMode::FullHeatmap => "full",
        }
    }
}

impl FromStr for OracleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(OracleMode::AnalyticShift),
            "full" => Ok(OracleMode::FullHeatmap),
            _ => Err(Error::invalid(format!("unknown oracle mode {s:?}"))),
        }
    }
}

/// What the oracle network emits for one input.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkOutput {
    Point(Point),
    Heatmap(Heatmap),
}

/// Aggregated absolute errors of a Monte Carlo run.
///
/// `n_trials` counts the trials that contributed to the statistics. Trials
/// whose keypoint left a plane are counted in `n_skipped`, trials whose
/// decode failed in `n_failed`. Output-plane errors are in output units;
/// the `_source` fields are in source units. Variances are population
/// variances of the absolute errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub label: String,
    pub n_trials: usize,
    pub n_failed: usize,
    pub n_skipped: usize,
    pub mean_abs_x: f64,
    pub mean_abs_y: f64,
    pub var_abs_x: f64,
    pub var_abs_y: f64,
    pub mean_abs_x_source: f64,
    pub mean_abs_y_source: f64,
}

/// One simulated prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub gt_source: Point,
    pub pred_source: Point,
    pub gt_output: Point,
    pub pred_output: Point,
    pub config: String,
}

impl TrialRecord {
    pub fn output_error(&self) -> (f64, f64) {
        (
            (self.pred_output.x - self.gt_output.x).abs(),
            (self.pred_output.y - self.gt_output.y).abs(),
        )
    }

    pub fn source_error(&self) -> (f64, f64) {
        (
            (self.pred_source.x - self.gt_source.x).abs(),
            (self.pred_source.y - self.gt_source.y).abs(),
        )
    }
}

/// Keypoint distribution for [`monte_carlo`].
#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    /// Uniform over the output plane shrunk by `margin` output units on every
    /// side, mapped back into the source through `roi`. `None` picks the
    /// default margin of [`Sampler::default_margin`].
    Uniform { roi: Roi, margin: Option<f64> },
    /// Uniform choice among dataset keypoints, each with its own ROI.
    Instances(Vec<(Point, Roi)>),
}

impl Sampler {
    pub fn uniform(roi: Roi) -> Self {
        Sampler::Uniform { roi, margin: None }
    }

    /// `3 sigma` for the Gaussian codecs, the disc radius for CCRF.
    pub fn default_margin(cfg: &PipelineConfig) -> f64 {
        match cfg.codec {
            Codec::Ccrf => cfg.radius,
            _ => 3.0 * cfg.sigma,
        }
    }

    fn check(&self, cfg: &PipelineConfig) -> Result<()> {
        match self {
            Sampler::Uniform { roi, margin } => {
                roi.validate()?;
                let m = margin.unwrap_or_else(|| Sampler::default_margin(cfg));
                let (w, h) = (cfg.output.width_units(), cfg.output.height_units());
                if !(m >= 0.0 && 2.0 * m < w && 2.0 * m < h) {
                    return Err(Error::invalid(format!(
                        "sampling margin {m} leaves no room in a {} output plane",
                        cfg.output
                    )));
                }
                Ok(())
            }
            Sampler::Instances(points) if points.is_empty() => Err(Error::invalid("instance sampler is empty")),
            Sampler::Instances(points) => points.iter().try_for_each(|(_, roi)| roi.validate()),
        }
    }

    fn draw(&self, cfg: &PipelineConfig, rng: &mut impl Rng) -> Result<(Point, Roi)> {
        match self {
            Sampler::Uniform { roi, margin } => {
                let m = margin.unwrap_or_else(|| Sampler::default_margin(cfg));
                let x = rng.random_range(m..cfg.output.width_units() - m);
                let y = rng.random_range(m..cfg.output.height_units() - m);
                Ok((output_to_source(roi, cfg)?.apply(Point::new(x, y)), *roi))
            }
            Sampler::Instances(points) => Ok(points[rng.random_range(0..points.len())]),
        }
    }
}

fn out_of_plane(k: Point, size: PlaneSize) -> Error {
    Error::OutOfBounds {
        x: k.x,
        y: k.y,
        width: size.width_units(),
        height: size.height_units(),
    }
}

fn oracle_point(k_i: Point, cfg: &PipelineConfig) -> Result<Point> {
    if !k_i.is_finite() || !cfg.input.contains(k_i) {
        return Err(out_of_plane(k_i, cfg.input));
    }
    Ok(input_to_output(cfg).apply(k_i))
}

fn oracle_heatmap(k_i: Point, cfg: &PipelineConfig) -> Result<Heatmap> {
    cfg.codec.encode(oracle_point(k_i, cfg)?, cfg.output, cfg.sigma, cfg.radius)
}

/// The zero-loss network: `k_o = input_to_output * k_i`, returned as a point
/// or rendered through the configured codec's encoder.
pub fn ideal_network(k_i: Point, cfg: &PipelineConfig, mode: OracleMode) -> Result<NetworkOutput> {
    match mode {
        OracleMode::AnalyticShift => oracle_point(k_i, cfg).map(NetworkOutput::Point),
        OracleMode::FullHeatmap => oracle_heatmap(k_i, cfg).map(NetworkOutput::Heatmap),
    }
}

/// Quarter-offset rule of the biased decode applied to a peak location:
/// `floor + 0.25` when the fractional part is below one half, else `ceil - 0.25`.
fn quarter_rule(v: f64) -> f64 {
    let f = v.floor();
    if v - f < 0.5 {
        f + 0.25
    } else {
        f + 0.75
    }
}

fn analytic_decode(codec: Codec, p: Point) -> Point {
    match codec {
        Codec::CfBiasedDecode => Point::new(quarter_rule(p.x), quarter_rule(p.y)),
        _ => p,
    }
}

/// Plane in which decoding and flip combination happen: the output plane, or
/// the input plane when the output is resized up first.
struct DecodePlane {
    width_units: f64,
    from_output: Transform2D,
    to_output: Transform2D,
}

impl DecodePlane {
    fn new(cfg: &PipelineConfig) -> Result<Self> {
        if cfg.rno {
            let i2o = input_to_output(cfg);
            Ok(Self {
                width_units: cfg.input.width_units(),
                from_output: i2o.invert()?,
                to_output: i2o,
            })
        } else {
            Ok(Self {
                width_units: cfg.output.width_units(),
                from_output: Transform2D::IDENTITY,
                to_output: Transform2D::IDENTITY,
            })
        }
    }
}

fn analytic_prediction(k_i: Point, cfg: &PipelineConfig, plane: &DecodePlane) -> Result<Point> {
    let k = plane.from_output.apply(oracle_point(k_i, cfg)?);
    let p = if cfg.flip_test {
        let k_flip = t_flip(cfg.input.width_units()).apply(k_i);
        let kf = plane.from_output.apply(oracle_point(k_flip, cfg)?);
        match cfg.combine {
            Combine::AverageHeatmaps => analytic_decode(
                cfg.codec,
                combine_points(k, kf, plane.width_units, cfg.compensation),
            ),
            Combine::AverageCoords => combine_points(
                analytic_decode(cfg.codec, k),
                analytic_decode(cfg.codec, kf),
                plane.width_units,
                cfg.compensation,
            ),
        }
    } else {
        analytic_decode(cfg.codec, k)
    };
    Ok(plane.to_output.apply(p))
}

fn heatmap_prediction(k_i: Point, cfg: &PipelineConfig, plane: &DecodePlane) -> Result<Point> {
    let render = |k: Point| -> Result<Heatmap> {
        let h = oracle_heatmap(k, cfg)?;
        if cfg.rno {
            rno_upsample_heatmap(&h, cfg)
        } else {
            Ok(h)
        }
    };
    let h = render(k_i)?;
    let p = if cfg.flip_test {
        let hf = render(t_flip(cfg.input.width_units()).apply(k_i))?;
        match cfg.combine {
            Combine::AverageHeatmaps => cfg.codec.decode(&combine_heatmaps(&h, &hf, cfg.compensation)?)?.k,
            Combine::AverageCoords => combine_points(
                cfg.codec.decode(&h)?.k,
                cfg.codec.decode(&hf)?.k,
                plane.width_units,
                cfg.compensation,
            ),
        }
    } else {
        cfg.codec.decode(&h)?.k
    };
    Ok(plane.to_output.apply(p))
}

struct Prediction {
    gt_output: Point,
    pred_output: Point,
    pred_source: Point,
}

fn predict(gt_source: Point, roi: &Roi, cfg: &PipelineConfig, mode: OracleMode) -> Result<Prediction> {
    if !roi.contains(gt_source) {
        return Err(Error::OutOfBounds {
            x: gt_source.x,
            y: gt_source.y,
            width: roi.w,
            height: roi.h,
        });
    }
    let k_i = test_transform(roi, cfg)?.apply(gt_source);
    let plane = DecodePlane::new(cfg)?;
    let pred = match mode {
        OracleMode::AnalyticShift => analytic_prediction(k_i, cfg, &plane)?,
        OracleMode::FullHeatmap => heatmap_prediction(k_i, cfg, &plane)?,
    };
    let pred_output = apply_ec(pred, cfg);
    Ok(Prediction {
        gt_output: input_to_output(cfg).apply(k_i),
        pred_output,
        pred_source: output_to_source(roi, cfg)?.apply(pred_output),
    })
}

/// Runs the full test-time chain for one ground-truth keypoint.
pub fn run_trial(gt_source: Point, roi: &Roi, cfg: &PipelineConfig, mode: OracleMode) -> Result<TrialRecord> {
    cfg.validate()?;
    let p = predict(gt_source, roi, cfg, mode)?;
    Ok(TrialRecord {
        gt_source,
        pred_source: p.pred_source,
        gt_output: p.gt_output,
        pred_output: p.pred_output,
        config: cfg.label(),
    })
}

/// Pseudo-random stream for one trial: ChaCha8 keyed by `seed`, with the
/// trial index selecting the stream.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

enum Outcome {
    Used([f64; 4]),
    Skipped,
    Failed,
}

#[derive(Default)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

fn mean_and_var(values: &[[f64; 4]], axis: usize) -> (f64, f64) {
    let n = values.len() as f64;
    let mut s = KahanSum::default();
    values.iter().for_each(|v| s.add(v[axis]));
    let mean = s.sum / n;
    let mut d = KahanSum::default();
    values.iter().for_each(|v| d.add((v[axis] - mean).powi(2)));
    (mean, d.sum / n)
}

/// Aggregates `n` trials drawn from `sampler`. Trials run in parallel on the
/// current rayon pool; results do not depend on the number of workers.
pub fn monte_carlo(
    cfg: &PipelineConfig,
    mode: OracleMode,
    n: usize,
    seed: u64,
    sampler: &Sampler,
) -> Result<ErrorStats> {
    if n == 0 {
        return Err(Error::invalid("monte_carlo needs at least one trial"));
    }
    cfg.validate()?;
    sampler.check(cfg)?;

    let outcomes: Vec<Outcome> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            let trial = sampler
                .draw(cfg, &mut rng)
                .and_then(|(gt, roi)| Ok((gt, predict(gt, &roi, cfg, mode)?)));
            match trial {
                Ok((gt, p)) => Outcome::Used([
                    (p.pred_output.x - p.gt_output.x).abs(),
                    (p.pred_output.y - p.gt_output.y).abs(),
                    (p.pred_source.x - gt.x).abs(),
                    (p.pred_source.y - gt.y).abs(),
                ]),
                Err(Error::OutOfBounds { .. }) => Outcome::Skipped,
                Err(_) => Outcome::Failed,
            }
        })
        .collect();

    let mut used = Vec::with_capacity(n);
    let (mut skipped, mut failed) = (0, 0);
    for o in outcomes {
        match o {
            Outcome::Used(v) => used.push(v),
            Outcome::Skipped => skipped += 1,
            Outcome::Failed => failed += 1,
        }
    }
    if used.is_empty() {
        return Err(Error::invalid(format!(
            "no usable trials ({skipped} skipped, {failed} failed)"
        )));
    }
    let (mean_abs_x, var_abs_x) = mean_and_var(&used, 0);
    let (mean_abs_y, var_abs_y) = mean_and_var(&used, 1);
    Ok(ErrorStats {
        label: cfg.label(),
        n_trials: used.len(),
        n_failed: failed,
        n_skipped: skipped,
        mean_abs_x,
        mean_abs_y,
        var_abs_x,
        var_abs_y,
        mean_abs_x_source: mean_and_var(&used, 2).0,
        mean_abs_y_source: mean_and_var(&used, 3).0,
    })
}

/// Closed-form expectations for a configuration. `None` marks quantities the
/// analysis does not cover for that configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticErrors {
    /// x-translation between the flipped-back and the original prediction.
    pub flip_offset_x: Option<f64>,
    /// Absolute x error of the combined coordinate before decoding, output units.
    pub coord_error_x: Option<f64>,
    /// The same error in source units for an ROI of width `bw`.
    pub coord_error_x_source: Option<f64>,
    pub decode_mean_x: Option<f64>,
    pub decode_var_x: Option<f64>,
    pub decode_mean_y: Option<f64>,
    pub decode_var_y: Option<f64>,
}

/// Moments of `|d + U|` with `U` uniform on `[-1/4, 1/4)`, the error of the
/// quarter-offset decode of a peak displaced by `d`.
pub fn quarter_decode_moments(d: f64) -> (f64, f64) {
    let mean = if d.abs() <= 0.25 { 2.0 * d * d + 0.125 } else { d.abs() };
    let second = d * d + 1.0 / 48.0;
    (mean, (second - mean * mean).max(0.0))
}

pub fn analytic_errors(cfg: &PipelineConfig, bw: f64) -> AnalyticErrors {
    let none = AnalyticErrors {
        flip_offset_x: None,
        coord_error_x: None,
        coord_error_x_source: None,
        decode_mean_x: None,
        decode_var_x: None,
        decode_mean_y: None,
        decode_var_y: None,
    };
    if cfg.rno || cfg.validate().is_err() {
        return none;
    }
    let i2o = input_to_output(cfg);
    let offset = {
        let flipped = t_flip(cfg.output.width_units()) * i2o * t_flip(cfg.input.width_units());
        flipped.translation_part().0 - i2o.translation_part().0
    };
    let shift = if cfg.flip_test {
        let snoop = if cfg.compensation.shifts() { 1.0 } else { 0.0 };
        let ec = if cfg.compensation == Compensation::SnoopPlusEc {
            0.5 / cfg.stride()
        } else {
            0.0
        };
        0.5 * (offset + snoop) - ec
    } else {
        0.0
    };
    let (out_w, _) = cfg.convention.extent(cfg.output);
    let per_axis = |d: f64| match cfg.codec {
        Codec::CfBiasedDecode => Some(quarter_decode_moments(d)),
        Codec::Ccrf | Codec::Cf => Some((d.abs(), 0.0)),
        Codec::ArgmaxOnly => None,
    };
    // AverageCoords decodes each branch before combining; only the
    // heatmap-average path reduces to a single displaced peak.
    let decodable = !(cfg.flip_test && cfg.combine == Combine::AverageCoords && cfg.codec == Codec::CfBiasedDecode);
    let x = per_axis(shift).filter(|_| decodable);
    let y = per_axis(0.0).filter(|_| decodable);
    AnalyticErrors {
        flip_offset_x: cfg.flip_test.then_some(offset),
        coord_error_x: Some(shift.abs()),
        coord_error_x_source: (bw > 0.0).then(|| shift.abs() * bw / out_w),
        decode_mean_x: x.map(|m| m.0),
        decode_var_x: x.map(|m| m.1),
        decode_mean_y: y.map(|m| m.0),
        decode_var_y: y.map(|m| m.1),
    }
}

/// Ablation grids mirroring the simulable axes of the top-down and
/// bottom-up experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationPreset {
    TopDown,
    BottomUp,
}

impl FromStr for AblationPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topdown" => Ok(AblationPreset::TopDown),
            "bottomup" => Ok(AblationPreset::BottomUp),
            _ => Err(Error::invalid(format!("unknown ablation preset {s:?}"))),
        }
    }
}

impl fmt::Display for AblationPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationPreset::TopDown => "topdown",
            AblationPreset::BottomUp => "bottomup",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub id: char,
    pub cfg: PipelineConfig,
    pub roi: Roi,
}

/// Person box used by the top-down preset; its 3:4 aspect matches the input.
pub const TOPDOWN_ROI: Roi = Roi {
    cx: 320.0,
    cy: 240.0,
    w: 150.0,
    h: 200.0,
};

pub fn ablation_rows(preset: AblationPreset) -> Vec<AblationRow> {
    use Compensation as C;
    use Convention::{PixelCount as P, UnitLength as U};
    let size = |w, h| PlaneSize::new(w, h).expect("preset sizes are valid");
    let build = |id, conv, input, output, ft: bool, comp, codec, rno: bool, roi| {
        let mut cfg = PipelineConfig::new(conv, input, output)
            .with_flip_test(ft)
            .with_compensation(comp)
            .with_codec(codec)
            .with_rno(rno);
        cfg.flip_pairs = COCO_FLIP_PAIRS.to_vec();
        AblationRow { id, cfg, roi }
    };
    match preset {
        AblationPreset::TopDown => {
            let (i, o) = (size(192, 256), size(48, 64));
            let cfb = Codec::CfBiasedDecode;
            let r = TOPDOWN_ROI;
            vec![
                build('A', P, i, o, false, C::None, cfb, false, r),
                build('B', U, i, o, false, C::None, cfb, false, r),
                build('C', P, i, o, true, C::None, cfb, false, r),
                build('D', U, i, o, true, C::None, cfb, false, r),
                build('E', P, i, o, true, C::Snoop, cfb, false, r),
                build('F', P, i, o, true, C::SnoopPlusEc, cfb, false, r),
                build('G', P, i, o, true, C::None, Codec::Ccrf, false, r),
                build('H', U, i, o, true, C::None, Codec::Ccrf, false, r),
                build('I', U, i, o, true, C::None, Codec::Cf, false, r),
            ]
        }
        AblationPreset::BottomUp => {
            let i = size(512, 512);
            let (lo, hi) = (size(128, 128), size(256, 256));
            let r = Roi::full(i);
            let (cfb, cf) = (Codec::CfBiasedDecode, Codec::Cf);
            vec![
                build('A', P, i, lo, true, C::None, cfb, true, r),
                build('B', U, i, lo, true, C::None, cfb, false, r),
                build('C', U, i, lo, true, C::None, cf, false, r),
                build('D', U, i, lo, true, C::None, cf, true, r),
                build('E', P, i, hi, true, C::None, cfb, false, r),
                build('F', P, i, hi, true, C::None, cfb, true, r),
                build('G', P, i, hi, true, C::None, cf, true, r),
                build('H', U, i, hi, true, C::None, cfb, false, r),
                build('I', U, i, hi, true, C::None, cf, false, r),
                build('J', U, i, hi, true, C::None, cf, true, r),
            ]
        }
    }
}
