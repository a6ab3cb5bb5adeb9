//! Train/test/flip pipelines built from the elementary transforms.
//!
//! Three planes are involved: the source image (`s`), the network input (`i`)
//! and the network output (`o`). A [`Convention`] decides which extents the
//! resize steps use: unit lengths (`w_px - 1`) or raw pixel counts. Flips
//! always act on unit-length extents, because reversing the columns of a
//! `w_px`-wide array mirrors about `x = (w_px - 1) / 2`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{default_radius, Codec, Heatmap, DEFAULT_SIGMA};
use crate::error::{Error, Result};
use crate::geometry::{compose, t_crop, t_flip, t_resize, t_rotate, PlaneSize, Point, Roi, Transform2D};
use crate::raster::{warp, BorderPolicy, ImageGrid};

/// Left/right joint pairs of the 17-keypoint COCO layout.
pub const COCO_FLIP_PAIRS: [(usize, usize); 8] = [
    (1, 2),
    (3, 4),
    (5, 6),
    (7, 8),
    (9, 10),
    (11, 12),
    (13, 14),
    (15, 16),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Convention {
    /// Resize by unit-length extents `w = w_px - 1`.
    UnitLength,
    /// Resize by pixel counts `w_px`.
    PixelCount,
}

impl Convention {
    /// Extents used by resize steps for a plane of this size.
    pub fn extent(&self, size: PlaneSize) -> (f64, f64) {
        match self {
            Convention::UnitLength => (size.width_units(), size.height_units()),
            Convention::PixelCount => (f64::from(size.width_px()), f64::from(size.height_px())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Convention::UnitLength => "unit-length",
            Convention::PixelCount => "pixel-count",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Compensation {
    #[default]
    None,
    /// Shift the flipped-back result by one output unit in +x before averaging.
    Snoop,
    /// Snoop, then subtract the residual `1 / (2s)` from the averaged x.
    SnoopPlusEc,
}

impl Compensation {
    pub fn name(&self) -> &'static str {
        match self {
            Compensation::None => "none",
            Compensation::Snoop => "snoop",
            Compensation::SnoopPlusEc => "snoop-ec",
        }
    }

    pub fn shifts(&self) -> bool {
        !matches!(self, Compensation::None)
    }
}

/// How the original and flipped predictions are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Combine {
    /// Decode each heatmap, then average the points.
    AverageCoords,
    /// Average the heatmaps element-wise, then decode once.
    AverageHeatmaps,
}

impl Combine {
    pub fn default_for(codec: Codec) -> Combine {
        match codec {
            Codec::Ccrf => Combine::AverageCoords,
            _ => Combine::AverageHeatmaps,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Combine::AverageCoords => "coords",
            Combine::AverageHeatmaps => "heatmaps",
        }
    }
}

/// Every knob of the simulated inference system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub convention: Convention,
    pub input: PlaneSize,
    pub output: PlaneSize,
    pub flip_test: bool,
    pub compensation: Compensation,
    pub codec: Codec,
    pub combine: Combine,
    /// Resize the network output to input resolution before decoding.
    pub rno: bool,
    pub flip_pairs: Vec<(usize, usize)>,
    /// Gaussian width for the classification codecs, output units.
    pub sigma: f64,
    /// CCRF disc radius, output units.
    pub radius: f64,
}

impl PipelineConfig {
    /// Defaults: no flip test, no compensation, CF codec, sigma 2 and a CCRF
    /// radius of `0.0625 * w_o^p`.
    pub fn new(convention: Convention, input: PlaneSize, output: PlaneSize) -> Self {
        Self {
            convention,
            input,
            output,
            flip_test: false,
            compensation: Compensation::None,
            codec: Codec::Cf,
            combine: Combine::default_for(Codec::Cf),
            rno: false,
            flip_pairs: Vec::new(),
            sigma: DEFAULT_SIGMA,
            radius: default_radius(output),
        }
    }

    pub fn with_flip_test(mut self, on: bool) -> Self {
        self.flip_test = on;
        self
    }

    pub fn with_compensation(mut self, c: Compensation) -> Self {
        self.compensation = c;
        self
    }

    /// Also resets `combine` to the codec's default.
    pub fn with_codec(mut self, codec: Codec) -> Self {
        self.codec = codec;
        self.combine = Combine::default_for(codec);
        self
    }

    pub fn with_combine(mut self, combine: Combine) -> Self {
        self.combine = combine;
        self
    }

    pub fn with_rno(mut self, on: bool) -> Self {
        self.rno = on;
        self
    }

    /// Stride factor `s = w_i^p / w_o^p`.
    pub fn stride(&self) -> f64 {
        f64::from(self.input.width_px()) / f64::from(self.output.width_px())
    }

    pub fn validate(&self) -> Result<()> {
        if self.compensation.shifts() && !self.flip_test {
            return Err(Error::invalid("compensation requires flip testing"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::invalid("radius must be positive"));
        }
        if self.flip_pairs.iter().any(|(a, b)| a == b) {
            return Err(Error::invalid("flip pair joins a joint with itself"));
        }
        Ok(())
    }

    /// Short human-readable description used as a report label.
    pub fn label(&self) -> String {
        let mut s = format!(
            "{}/{}/{}->{}",
            self.convention.name(),
            self.codec.name(),
            self.input,
            self.output
        );
        if self.flip_test {
            s.push_str("/ft");
            if self.compensation.shifts() {
                s.push('+');
                s.push_str(self.compensation.name());
            }
            s.push('/');
            s.push_str(self.combine.name());
        }
        if self.rno {
            s.push_str("/rno");
        }
        s
    }

    /// Serialises to the flat `key = value` config format.
    pub fn to_kv(&self) -> String {
        let pairs: Vec<String> = self.flip_pairs.iter().map(|(a, b)| format!("{a}:{b}")).collect();
        format!(
            "convention = {}\ninput = {}\noutput = {}\nflip_test = {}\ncompensation = {}\n\
             codec = {}\ncombine = {}\nrno = {}\nsigma = {}\nradius = {}\nflip_pairs = {}\n",
            self.convention.name(),
            self.input,
            self.output,
            self.flip_test,
            self.compensation.name(),
            self.codec.name(),
            self.combine.name(),
            self.rno,
            self.sigma,
            self.radius,
            pairs.join(","),
        )
    }

    /// Parses the flat `key = value` format. `convention`, `input` and
    /// `output` are required; `#` starts a comment; unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.split('#').next().unwrap_or("").trim();
            if !body.is_empty() {
                let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
                    offset,
                    message: format!("expected key = value, got {body:?}"),
                })?;
                entries.push((offset, k.trim().to_string(), v.trim().to_string()));
            }
            offset += line.len();
        }
        let find = |key: &str| entries.iter().find(|(_, k, _)| k == key).map(|(o, _, v)| (*o, v.as_str()));
        let required = |key: &str| {
            find(key).ok_or_else(|| Error::Parse {
                offset: text.len(),
                message: format!("missing required key {key:?}"),
            })
        };
        let at = |o: usize| move |e: Error| Error::Parse {
            offset: o,
            message: e.to_string(),
        };

        let (o, v) = required("convention")?;
        let convention = v.parse().map_err(at(o))?;
        let (o, v) = required("input")?;
        let input = parse_size(v).map_err(at(o))?;
        let (o, v) = required("output")?;
        let output = parse_size(v).map_err(at(o))?;
        let mut cfg = PipelineConfig::new(convention, input, output);

        for (o, key, v) in &entries {
            let o = *o;
            match key.as_str() {
                "convention" | "input" | "output" => {}
                "flip_test" => cfg.flip_test = parse_bool(v).map_err(at(o))?,
                "compensation" => cfg.compensation = v.parse().map_err(at(o))?,
                "codec" => {
                    cfg.codec = Codec::parse(v).map_err(at(o))?;
                    if find("combine").is_none() {
                        cfg.combine = Combine::default_for(cfg.codec);
                    }
                }
                "combine" => cfg.combine = v.parse().map_err(at(o))?,
                "rno" => cfg.rno = parse_bool(v).map_err(at(o))?,
                "sigma" => cfg.sigma = parse_f64(v).map_err(at(o))?,
                "radius" => cfg.radius = parse_f64(v).map_err(at(o))?,
                "flip_pairs" => cfg.flip_pairs = parse_pairs(v).map_err(at(o))?,
                other => {
                    return Err(Error::Parse {
                        offset: o,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit-length" => Ok(Convention::UnitLength),
            "pixel-count" => Ok(Convention::PixelCount),
            _ => Err(Error::invalid(format!("unknown convention {s:?}"))),
        }
    }
}

impl FromStr for Compensation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Compensation::None),
            "snoop" => Ok(Compensation::Snoop),
            "snoop-ec" => Ok(Compensation::SnoopPlusEc),
            _ => Err(Error::invalid(format!("unknown compensation {s:?}"))),
        }
    }
}

impl FromStr for Combine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coords" => Ok(Combine::AverageCoords),
            "heatmaps" => Ok(Combine::AverageHeatmaps),
            _ => Err(Error::invalid(format!("unknown combine strategy {s:?}"))),
        }
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parses `WIDTHxHEIGHT` in pixels.
pub fn parse_size(s: &str) -> Result<PlaneSize> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::invalid(format!("expected WIDTHxHEIGHT, got {s:?}")))?;
    let w = w.trim().parse().map_err(|_| Error::invalid(format!("bad width in {s:?}")))?;
    let h = h.trim().parse().map_err(|_| Error::invalid(format!("bad height in {s:?}")))?;
    PlaneSize::new(w, h)
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::invalid(format!("expected a boolean, got {s:?}"))),
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .ok()
        .filter(|v: &f64| v.is_finite())
        .ok_or_else(|| Error::invalid(format!("expected a number, got {s:?}")))
}

fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("expected A:B, got {p:?}")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad joint index {v:?}")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

/// Source -> input transform used in training:
/// `T_flip(w_i) * T_rot(theta, c_i) * T_resize(bw, bh -> input) * T_crop(roi)`.
///
/// The rotation center `c_i` is the image of the ROI center, half the input
/// extent under the configured convention.
pub fn train_transform(roi: &Roi, theta: f64, flipped: bool, cfg: &PipelineConfig) -> Result<Transform2D> {
    if !theta.is_finite() {
        return Err(Error::invalid("rotation angle must be finite"));
    }
    let base = test_transform(roi, cfg)?;
    let (ew, eh) = cfg.convention.extent(cfg.input);
    let mut t = base;
    if theta != 0.0 {
        t = compose(&t_rotate(theta, Point::new(0.5 * ew, 0.5 * eh)), &t);
    }
    if flipped {
        t = compose(&t_flip(cfg.input.width_units()), &t);
    }
    Ok(t)
}

/// Source -> input transform at test time: `T_resize * T_crop`.
pub fn test_transform(roi: &Roi, cfg: &PipelineConfig) -> Result<Transform2D> {
    roi.validate()?;
    let (ew, eh) = cfg.convention.extent(cfg.input);
    Ok(compose(&t_resize(roi.w, roi.h, ew, eh)?, &t_crop(roi)))
}

/// Input -> output resize under the configured convention.
pub fn input_to_output(cfg: &PipelineConfig) -> Transform2D {
    let (iw, ih) = cfg.convention.extent(cfg.input);
    let (ow, oh) = cfg.convention.extent(cfg.output);
    t_resize(iw, ih, ow, oh).expect("plane extents are positive")
}

/// Output -> source: resize back to the ROI extent, then undo the crop.
pub fn output_to_source(roi: &Roi, cfg: &PipelineConfig) -> Result<Transform2D> {
    roi.validate()?;
    let (ow, oh) = cfg.convention.extent(cfg.output);
    let tl = roi.top_left();
    Ok(compose(
        &Transform2D::translation(tl.x, tl.y),
        &t_resize(ow, oh, roi.w, roi.h)?,
    ))
}

/// Merges a prediction with the prediction on the flipped input, both in a
/// plane `width_units` wide. The compensation shift is one unit of that plane.
pub(crate) fn combine_points(k: Point, k_flip: Point, width_units: f64, compensation: Compensation) -> Point {
    let mut back = t_flip(width_units).apply(k_flip);
    if compensation.shifts() {
        back.x += 1.0;
    }
    k.midpoint(back)
}

/// Subtracts the post-SNOOP residual `1 / (2s)` when extra compensation is on.
pub fn apply_ec(k: Point, cfg: &PipelineConfig) -> Point {
    match cfg.compensation {
        Compensation::SnoopPlusEc => Point::new(k.x - 0.5 / cfg.stride(), k.y),
        _ => k,
    }
}

/// Flips `k_o_flip` back into the output plane, applies the configured
/// compensation and averages with `k_o`.
pub fn flip_combine(k_o: Point, k_o_flip: Point, cfg: &PipelineConfig) -> Point {
    let avg = combine_points(k_o, k_o_flip, cfg.output.width_units(), cfg.compensation);
    apply_ec(avg, cfg)
}

/// Flips the heatmap predicted on the flipped input back, applies the SNOOP
/// one-node shift if configured, and averages with the original heatmap.
/// Extra compensation, being a coordinate correction, is left to the caller
/// via [`apply_ec`].
pub fn combine_heatmaps(original: &Heatmap, flipped: &Heatmap, compensation: Compensation) -> Result<Heatmap> {
    let mut back = flipped.flip();
    if compensation.shifts() {
        back = back.warp(&Transform2D::translation(1.0, 0.0), back.size(), BorderPolicy::ZeroFill)?;
    }
    original.average(&back)
}

/// Resizes an output-plane heatmap to input resolution with the inverse of
/// [`input_to_output`].
pub fn rno_upsample(h: &ImageGrid, cfg: &PipelineConfig) -> Result<ImageGrid> {
    warp(h, &input_to_output(cfg).invert()?, cfg.input, BorderPolicy::ZeroFill)
}

/// [`rno_upsample`] for either heatmap format; CCRF offsets are rescaled to
/// input units.
pub fn rno_upsample_heatmap(h: &Heatmap, cfg: &PipelineConfig) -> Result<Heatmap> {
    h.warp(&input_to_output(cfg).invert()?, cfg.input, BorderPolicy::ZeroFill)
}

/// Exchanges the listed left/right joints. Pairs referencing missing joints
/// are ignored.
pub fn swap_flip_pairs(points: &[Point], pairs: &[(usize, usize)]) -> Vec<Point> {
    let mut out = points.to_vec();
    for &(a, b) in pairs {
        if a < out.len() && b < out.len() {
            out.swap(a, b);
        }
    }
    out
}
