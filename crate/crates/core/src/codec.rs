//! Keypoint <-> heatmap codecs.
//!
//! Two unbiased formats are provided:
//!
//! - CCRF (combined classification and regression): a binary disc map `C`
//!   plus per-node offset maps `X = m - x`, `Y = n - y`. Decoding reads the
//!   offsets at the argmax of `C` and recovers the keypoint exactly.
//! - CF (classification): a full-map Gaussian, decoded with one Newton step
//!   on the log-heatmap around its argmax (DARK).
//!
//! The biased quarter-offset decode (argmax plus `0.25 * sign(C')` per axis)
//! and a plain argmax decode are kept for studying their error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PlaneSize, Point, Transform2D};
use crate::raster::{flip_heatmap, warp, BorderPolicy, ImageGrid};

pub const DEFAULT_SIGMA: f64 = 2.0;

/// CCRF positive-disc radius as a fraction of the output width in pixels.
pub const DEFAULT_RADIUS_FACTOR: f64 = 0.0625;

/// Hessians with `|det|` below this fall back to the argmax.
const DARK_DET_EPS: f64 = 1e-12;

pub fn default_radius(output: PlaneSize) -> f64 {
    DEFAULT_RADIUS_FACTOR * f64::from(output.width_px())
}

/// Classification, x-offset and y-offset maps of the CCRF format.
#[derive(Debug, Clone, PartialEq)]
pub struct CcrfMaps {
    pub c: ImageGrid,
    pub x_off: ImageGrid,
    pub y_off: ImageGrid,
}

impl CcrfMaps {
    pub fn new(c: ImageGrid, x_off: ImageGrid, y_off: ImageGrid) -> Result<Self> {
        if c.channels() != 1 {
            return Err(Error::DimensionMismatch("CCRF maps are single-channel".into()));
        }
        c.check_same_shape(&x_off)?;
        c.check_same_shape(&y_off)?;
        Ok(Self { c, x_off, y_off })
    }

    pub fn size(&self) -> PlaneSize {
        self.c.size()
    }

    /// Packs the maps as a three-channel grid `(c, x_off, y_off)`.
    pub fn to_grid(&self) -> ImageGrid {
        ImageGrid::stack(&[&self.c, &self.x_off, &self.y_off]).expect("maps share a shape")
    }

    pub fn from_grid(grid: &ImageGrid) -> Result<Self> {
        if grid.channels() != 3 {
            return Err(Error::DimensionMismatch(format!(
                "CCRF grid needs 3 channels, got {}",
                grid.channels()
            )));
        }
        Ok(Self {
            c: grid.channel(0),
            x_off: grid.channel(1),
            y_off: grid.channel(2),
        })
    }

    /// Mirrors the maps about the vertical center line. Offsets point the
    /// other way afterwards, so `x_off` changes sign.
    pub fn flip(&self) -> Self {
        Self {
            c: flip_heatmap(&self.c),
            x_off: flip_heatmap(&self.x_off).map(|v| -v),
            y_off: flip_heatmap(&self.y_off),
        }
    }

    /// Resamples the maps through an axis-aligned `t`; offsets are rescaled by
    /// the diagonal of `t` so they stay in destination units.
    pub fn warp(&self, t: &Transform2D, dst: PlaneSize, policy: BorderPolicy) -> Result<Self> {
        let [[sx, b, _], [d, sy, _]] = t.rows();
        if b != 0.0 || d != 0.0 {
            return Err(Error::invalid("CCRF maps only support axis-aligned warps"));
        }
        Ok(Self {
            c: warp(&self.c, t, dst, policy)?,
            x_off: warp(&self.x_off, t, dst, policy)?.map(|v| v * sx),
            y_off: warp(&self.y_off, t, dst, policy)?.map(|v| v * sy),
        })
    }

    pub fn average(&self, other: &CcrfMaps) -> Result<Self> {
        Ok(Self {
            c: self.c.average(&other.c)?,
            x_off: self.x_off.average(&other.x_off)?,
            y_off: self.y_off.average(&other.y_off)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcrfTarget {
    pub maps: CcrfMaps,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    pub c: ImageGrid,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Sub-pixel keypoint in map units.
    pub k: Point,
    /// Integer argmax node `(x, y)`.
    pub argmax: (usize, usize),
    /// Set when the DARK refinement fell back to the argmax.
    pub degenerate: bool,
}

/// A network-output heatmap in one of the two formats.
#[derive(Debug, Clone, PartialEq)]
pub enum Heatmap {
    Classification(ImageGrid),
    Ccrf(CcrfMaps),
}

impl Heatmap {
    pub fn size(&self) -> PlaneSize {
        match self {
            Heatmap::Classification(c) => c.size(),
            Heatmap::Ccrf(m) => m.size(),
        }
    }

    pub fn flip(&self) -> Heatmap {
        match self {
            Heatmap::Classification(c) => Heatmap::Classification(flip_heatmap(c)),
            Heatmap::Ccrf(m) => Heatmap::Ccrf(m.flip()),
        }
    }

    pub fn warp(&self, t: &Transform2D, dst: PlaneSize, policy: BorderPolicy) -> Result<Heatmap> {
        Ok(match self {
            Heatmap::Classification(c) => Heatmap::Classification(warp(c, t, dst, policy)?),
            Heatmap::Ccrf(m) => Heatmap::Ccrf(m.warp(t, dst, policy)?),
        })
    }

    pub fn average(&self, other: &Heatmap) -> Result<Heatmap> {
        match (self, other) {
            (Heatmap::Classification(a), Heatmap::Classification(b)) => {
                Ok(Heatmap::Classification(a.average(b)?))
            }
            (Heatmap::Ccrf(a), Heatmap::Ccrf(b)) => Ok(Heatmap::Ccrf(a.average(b)?)),
            _ => Err(Error::invalid("cannot average heatmaps of different formats")),
        }
    }

    /// Multi-channel grid view: one channel for CF, three for CCRF.
    pub fn to_grid(&self) -> ImageGrid {
        match self {
            Heatmap::Classification(c) => c.clone(),
            Heatmap::Ccrf(m) => m.to_grid(),
        }
    }
}

/// Keypoint format: how targets are encoded and predictions decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Codec {
    /// Disc + offset maps, offset decode.
    Ccrf,
    /// Gaussian map, DARK decode.
    Cf,
    /// Gaussian map, quarter-offset decode.
    CfBiasedDecode,
    /// Gaussian map, integer argmax.
    ArgmaxOnly,
}

impl Codec {
    pub const ALL: [Codec; 4] = [
        Codec::Ccrf,
        Codec::Cf,
        Codec::CfBiasedDecode,
        Codec::ArgmaxOnly,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Codec::Ccrf => "ccrf",
            Codec::Cf => "cf",
            Codec::CfBiasedDecode => "cf-biased",
            Codec::ArgmaxOnly => "argmax",
        }
    }

    pub fn parse(s: &str) -> Result<Codec> {
        Codec::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown codec {s:?}")))
    }

    pub fn encode(&self, k: Point, dims: PlaneSize, sigma: f64, radius: f64) -> Result<Heatmap> {
        Ok(match self {
            Codec::Ccrf => Heatmap::Ccrf(encode_ccrf(k, dims, radius)?.maps),
            _ => Heatmap::Classification(encode_gaussian(k, dims, sigma)?.c),
        })
    }

    pub fn decode(&self, h: &Heatmap) -> Result<DecodeResult> {
        match (self, h) {
            (Codec::Ccrf, Heatmap::Ccrf(m)) => decode_ccrf(m),
            (Codec::Cf, Heatmap::Classification(c)) => Ok(decode_dark(c)),
            (Codec::CfBiasedDecode, Heatmap::Classification(c)) => Ok(decode_biased_quarter(c)),
            (Codec::ArgmaxOnly, Heatmap::Classification(c)) => Ok(decode_argmax(c)),
            _ => Err(Error::invalid(format!(
                "codec {} cannot decode this heatmap format",
                self.name()
            ))),
        }
    }
}

fn check_inside(k: Point, dims: PlaneSize) -> Result<()> {
    if !k.is_finite() || !dims.contains(k) {
        return Err(Error::OutOfBounds {
            x: k.x,
            y: k.y,
            width: dims.width_units(),
            height: dims.height_units(),
        });
    }
    Ok(())
}

pub fn encode_ccrf(k: Point, dims: PlaneSize, radius: f64) -> Result<CcrfTarget> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("radius must be positive, got {radius}")));
    }
    check_inside(k, dims)?;
    let r2 = radius * radius;
    let inside = |x: usize, y: usize| {
        let (dx, dy) = (x as f64 - k.x, y as f64 - k.y);
        dx * dx + dy * dy < r2
    };
    let c = ImageGrid::from_fn(dims, 1, |x, y, _| if inside(x, y) { 1.0 } else { 0.0 });
    let x_off = ImageGrid::from_fn(dims, 1, |x, y, _| if inside(x, y) { k.x - x as f64 } else { 0.0 });
    let y_off = ImageGrid::from_fn(dims, 1, |x, y, _| if inside(x, y) { k.y - y as f64 } else { 0.0 });
    Ok(CcrfTarget {
        maps: CcrfMaps { c, x_off, y_off },
        radius,
    })
}

pub fn decode_ccrf(maps: &CcrfMaps) -> Result<DecodeResult> {
    let (x, y, peak) = argmax(&maps.c);
    if peak <= 0.0 {
        return Err(Error::NoDetection);
    }
    Ok(DecodeResult {
        k: Point::new(
            x as f64 + maps.x_off.get(x, y, 0),
            y as f64 + maps.y_off.get(x, y, 0),
        ),
        argmax: (x, y),
        degenerate: false,
    })
}

/// Full-map Gaussian `exp(-((x-m)^2 + (y-n)^2) / (2 sigma^2))`, evaluated as
/// the product of its two separable factors.
pub fn encode_gaussian(k: Point, dims: PlaneSize, sigma: f64) -> Result<GaussianTarget> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    check_inside(k, dims)?;
    let denom = 2.0 * sigma * sigma;
    let axis = |n: u32, center: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let d = f64::from(i) - center;
                (-d * d / denom).exp()
            })
            .collect()
    };
    let gx = axis(dims.width_px(), k.x);
    let gy = axis(dims.height_px(), k.y);
    let mut data = Vec::with_capacity(dims.len());
    for vy in &gy {
        data.extend(gx.iter().map(|vx| vx * vy));
    }
    Ok(GaussianTarget {
        c: ImageGrid::new(dims, 1, data)?,
        sigma,
    })
}

/// First maximum of channel 0 in row-major order, as `(x, y, value)`.
pub fn argmax(c: &ImageGrid) -> (usize, usize, f64) {
    let stride = c.channels();
    let (mut best, mut best_i) = (f64::NEG_INFINITY, 0);
    for (i, &v) in c.data().iter().step_by(stride).enumerate() {
        if v > best {
            best = v;
            best_i = i;
        }
    }
    (best_i % c.width(), best_i / c.width(), best)
}

pub fn decode_argmax(c: &ImageGrid) -> DecodeResult {
    let (x, y, _) = argmax(c);
    DecodeResult {
        k: Point::new(x as f64, y as f64),
        argmax: (x, y),
        degenerate: false,
    }
}

/// Newton step on `ln C` at the argmax: `k = k_h - H^-1 g`, with `g` and `H`
/// from 3-point central differences. Border maxima, non-positive
/// neighbourhoods and Hessians that are near-singular or not negative
/// definite return the argmax with `degenerate` set.
pub fn decode_dark(c: &ImageGrid) -> DecodeResult {
    let base = decode_argmax(c);
    let fallback = DecodeResult {
        degenerate: true,
        ..base
    };
    let (x, y) = base.argmax;
    if x == 0 || y == 0 || x + 1 >= c.width() || y + 1 >= c.height() {
        return fallback;
    }
    let mut l = [[0.0; 3]; 3];
    for (j, row) in l.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let s = c.get(x + i - 1, y + j - 1, 0);
            if s <= 0.0 {
                return fallback;
            }
            *v = s.ln();
        }
    }
    let Some(step) = newton_step(&l) else {
        return fallback;
    };
    DecodeResult {
        k: Point::new(x as f64 + step.0, y as f64 + step.1),
        ..base
    }
}

/// Offset `-H^-1 g` of the stationary point of the quadratic fitted to a 3x3
/// log-neighbourhood `l[row][col]` centered on the maximum.
pub(crate) fn newton_step(l: &[[f64; 3]; 3]) -> Option<(f64, f64)> {
    let gx = 0.5 * (l[1][2] - l[1][0]);
    let gy = 0.5 * (l[2][1] - l[0][1]);
    let hxx = l[1][2] - 2.0 * l[1][1] + l[1][0];
    let hyy = l[2][1] - 2.0 * l[1][1] + l[0][1];
    let hxy = 0.25 * (l[2][2] - l[2][0] - l[0][2] + l[0][0]);
    let det = hxx * hyy - hxy * hxy;
    if det.abs() < DARK_DET_EPS || !(hxx < 0.0 && det > 0.0) {
        return None;
    }
    let dx = -(hyy * gx - hxy * gy) / det;
    let dy = -(hxx * gy - hxy * gx) / det;
    Some((dx, dy))
}

/// `k_h + 0.25 * sign(dC)` per axis. The derivative is the central difference
/// `C(k+1) - C(k-1)` (one-sided on borders) and `sign(0) = +1`.
pub fn decode_biased_quarter(c: &ImageGrid) -> DecodeResult {
    let base = decode_argmax(c);
    let (x, y) = base.argmax;
    let diff = |lo: (usize, usize), hi: (usize, usize)| c.get(hi.0, hi.1, 0) - c.get(lo.0, lo.1, 0);
    let (w, h) = (c.width(), c.height());
    let dx = diff((x.saturating_sub(1), y), ((x + 1).min(w - 1), y));
    let dy = diff((x, y.saturating_sub(1)), (x, (y + 1).min(h - 1)));
    let sign = |d: f64| if d >= 0.0 { 1.0 } else { -1.0 };
    DecodeResult {
        k: Point::new(x as f64 + 0.25 * sign(dx), y as f64 + 0.25 * sign(dy)),
        ..base
    }
}

fn l2_diff(a: &ImageGrid, b: &ImageGrid, mask: Option<&ImageGrid>) -> f64 {
    let sum: f64 = match mask {
        None => a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum(),
        Some(m) => a
            .data()
            .iter()
            .zip(b.data())
            .zip(m.data())
            .map(|((p, q), w)| (w * (p - q)).powi(2))
            .sum(),
    };
    sum.sqrt()
}

/// `||C - C^|| + ||C . (X - X^)|| + ||C . (Y - Y^)||` with the target's `C`
/// masking the regression terms.
pub fn loss_ccrf(pred: &CcrfMaps, target: &CcrfMaps) -> Result<f64> {
    pred.c.check_same_shape(&target.c)?;
    pred.x_off.check_same_shape(&target.x_off)?;
    pred.y_off.check_same_shape(&target.y_off)?;
    Ok(l2_diff(&target.c, &pred.c, None)
        + l2_diff(&target.x_off, &pred.x_off, Some(&target.c))
        + l2_diff(&target.y_off, &pred.y_off, Some(&target.c)))
}

/// L2 norm of the difference.
pub fn loss_mse(pred: &ImageGrid, target: &ImageGrid) -> Result<f64> {
    pred.check_same_shape(target)?;
    Ok(l2_diff(target, pred, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims(w: u32, h: u32) -> PlaneSize {
        PlaneSize::new(w, h).unwrap()
    }

    #[test]
    fn ccrf_encode_at_node() {
        let t = encode_ccrf(Point::new(5.0, 5.0), dims(12, 12), 3.0).unwrap();
        assert_eq!(t.maps.c.get(5, 5, 0), 1.0);
        assert_eq!(t.maps.x_off.get(5, 5, 0), 0.0);
        // Exactly on the circle is outside (strict inequality).
        assert_eq!(t.maps.c.get(8, 5, 0), 0.0);
        assert_eq!(t.maps.c.get(7, 5, 0), 1.0);
    }

    #[test]
    fn ccrf_encode_sub_pixel() {
        let k = Point::new(5.3, 7.8);
        let t = encode_ccrf(k, dims(12, 12), 3.0).unwrap();
        assert_eq!(t.maps.c.get(5, 8, 0), 1.0);
        assert_eq!(t.maps.x_off.get(5, 8, 0), 5.3 - 5.0);
        assert_eq!(t.maps.y_off.get(5, 8, 0), 7.8 - 8.0);
        assert!((t.maps.x_off.get(5, 8, 0) - 0.3).abs() < 1e-12);
        assert!((t.maps.y_off.get(5, 8, 0) + 0.2).abs() < 1e-12);
        // Offsets outside the disc are zero.
        assert_eq!(t.maps.x_off.get(0, 0, 0), 0.0);
        assert_eq!(t.maps.c.get(0, 0, 0), 0.0);
    }

    #[test]
    fn ccrf_default_radius() {
        assert_eq!(default_radius(dims(48, 64)), 3.0);
    }

    #[test]
    fn ccrf_encode_errors() {
        assert!(matches!(
            encode_ccrf(Point::new(12.0, 1.0), dims(12, 12), 3.0),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(encode_ccrf(Point::new(1.0, 1.0), dims(12, 12), 0.0).is_err());
        assert!(encode_gaussian(Point::new(-0.1, 1.0), dims(12, 12), 2.0).is_err());
        assert!(encode_gaussian(Point::new(1.0, 1.0), dims(12, 12), -2.0).is_err());
    }

    #[test]
    fn ccrf_decode_direct_formula() {
        let size = dims(8, 8);
        let mut c = ImageGrid::zeros(size, 1);
        let mut x = ImageGrid::zeros(size, 1);
        let mut y = ImageGrid::zeros(size, 1);
        c.set(3, 4, 0, 1.0);
        x.set(3, 4, 0, 0.25);
        y.set(3, 4, 0, -0.5);
        let d = decode_ccrf(&CcrfMaps::new(c, x, y).unwrap()).unwrap();
        assert_eq!(d.k, Point::new(3.25, 3.5));
        assert_eq!(d.argmax, (3, 4));
    }

    #[test]
    fn ccrf_decode_all_zero_is_no_detection() {
        let z = ImageGrid::zeros(dims(4, 4), 1);
        let maps = CcrfMaps::new(z.clone(), z.clone(), z).unwrap();
        assert!(matches!(decode_ccrf(&maps), Err(Error::NoDetection)));
    }

    #[test]
    fn ccrf_round_trip_random() {
        let size = dims(48, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let k = Point::new(rng.random_range(0.0..47.0), rng.random_range(0.0..63.0));
            let t = encode_ccrf(k, size, 3.0).unwrap();
            let d = decode_ccrf(&t.maps).unwrap();
            assert!(d.k.max_abs_diff(k) < 1e-12, "{k:?} -> {:?}", d.k);
        }
    }

    #[test]
    fn ccrf_flip_decodes_mirrored_point() {
        let size = dims(20, 10);
        let k = Point::new(6.3, 4.6);
        let t = encode_ccrf(k, size, 2.5).unwrap();
        let d = decode_ccrf(&t.maps.flip()).unwrap();
        assert!(d.k.max_abs_diff(Point::new(19.0 - 6.3, 4.6)) < 1e-12);
    }

    #[test]
    fn gaussian_matches_closed_form() {
        let k = Point::new(5.37, 8.21);
        let g = encode_gaussian(k, dims(16, 20), 2.0).unwrap();
        for y in 0..20 {
            for x in 0..16 {
                let d2 = (x as f64 - k.x).powi(2) + (y as f64 - k.y).powi(2);
                let expected = (-d2 / 8.0).exp();
                let got = g.c.get(x, y, 0);
                // exp of the summed exponent carries a relative error of about |d2/8| ulps.
                let tol = (d2 / 8.0 + 4.0) * f64::EPSILON * expected;
                assert!((got - expected).abs() <= tol);
            }
        }
        let (.., peak) = argmax(&g.c);
        assert!(peak < 1.0);
        let at_node = encode_gaussian(Point::new(5.0, 8.0), dims(16, 20), 2.0).unwrap();
        assert_eq!(argmax(&at_node.c), (5, 8, 1.0));
    }

    #[test]
    fn dark_recovers_sub_pixel_center() {
        let k = Point::new(5.37, 8.21);
        let g = encode_gaussian(k, dims(16, 20), 2.0).unwrap();
        let d = decode_dark(&g.c);
        assert!(!d.degenerate);
        assert!(d.k.max_abs_diff(k) < 1e-3);
        // The log of an exact Gaussian is quadratic, so the step is exact.
        assert!(d.k.max_abs_diff(k) < 1e-9);
    }

    #[test]
    fn dark_at_node_is_exact() {
        let k = Point::new(7.0, 9.0);
        let g = encode_gaussian(k, dims(16, 20), 2.0).unwrap();
        assert_eq!(decode_dark(&g.c).k, k);
    }

    #[test]
    fn dark_flat_map_falls_back() {
        let g = ImageGrid::from_fn(dims(8, 8), 1, |_, _, _| 0.5);
        let d = decode_dark(&g);
        assert!(d.degenerate);
        assert_eq!(d.k, Point::new(0.0, 0.0));
        let zero = ImageGrid::zeros(dims(8, 8), 1);
        assert!(decode_dark(&zero).degenerate);
    }

    #[test]
    fn dark_border_peak_falls_back() {
        let g = encode_gaussian(Point::new(0.2, 4.0), dims(8, 8), 2.0).unwrap();
        let d = decode_dark(&g.c);
        assert!(d.degenerate);
        assert_eq!(d.k, Point::new(0.0, 4.0));
    }

    /// Brute-force maximiser of the quadratic fitted from the 3x3 stencil,
    /// found by nested bisection on secant slopes of the fitted polynomial.
    fn quadratic_argmax(l: &[[f64; 3]; 3]) -> (f64, f64) {
        let gx = 0.5 * (l[1][2] - l[1][0]);
        let gy = 0.5 * (l[2][1] - l[0][1]);
        let hxx = l[1][2] - 2.0 * l[1][1] + l[1][0];
        let hyy = l[2][1] - 2.0 * l[1][1] + l[0][1];
        let hxy = 0.25 * (l[2][2] - l[2][0] - l[0][2] + l[0][0]);
        let q = |x: f64, y: f64| gx * x + gy * y + 0.5 * (hxx * x * x + 2.0 * hxy * x * y + hyy * y * y);
        let bisect = |f: &dyn Fn(f64) -> f64| {
            let (mut lo, mut hi) = (-4.0f64, 4.0f64);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if f(mid + 0.5) > f(mid - 0.5) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let best_y = |x: f64| bisect(&|y| q(x, y));
        let x = bisect(&|x| q(x, best_y(x)));
        (x, best_y(x))
    }

    proptest! {
        #[test]
        fn dark_step_matches_brute_force_quadratic(
            mx in 4.0..11.0f64, my in 4.0..15.0f64, sigma in 1.2..3.0f64,
            other in 0.0..0.6f64,
        ) {
            // A blend of two Gaussians is not exactly log-quadratic, which
            // exercises the general stencil rather than the exact case.
            let size = dims(16, 20);
            let a = encode_gaussian(Point::new(mx, my), size, sigma).unwrap().c;
            let b = encode_gaussian(Point::new(mx + other, my - 0.5 * other), size, sigma).unwrap().c;
            let c = a.average(&b).unwrap();
            let (x, y, _) = argmax(&c);
            let mut l = [[0.0; 3]; 3];
            for (j, row) in l.iter_mut().enumerate() {
                for (i, v) in row.iter_mut().enumerate() {
                    *v = c.get(x + i - 1, y + j - 1, 0).ln();
                }
            }
            let step = newton_step(&l).unwrap();
            let brute = quadratic_argmax(&l);
            prop_assert!((step.0 - brute.0).abs() < 1e-9 && (step.1 - brute.1).abs() < 1e-9,
                "{step:?} vs {brute:?}");
            let d = decode_dark(&c);
            prop_assert_eq!(d.k, Point::new(x as f64 + step.0, y as f64 + step.1));
        }

        #[test]
        fn dark_near_identity(mx in 6.0..41.0f64, my in 6.0..57.0f64) {
            let k = Point::new(mx, my);
            let g = encode_gaussian(k, dims(48, 64), 2.0).unwrap();
            let d = decode_dark(&g.c);
            prop_assert!(!d.degenerate);
            prop_assert!(d.k.max_abs_diff(k) < 1e-3);
        }

        #[test]
        fn argmax_is_nearest_node(mx in 1.0..14.0f64, my in 1.0..18.0f64) {
            let g = encode_gaussian(Point::new(mx, my), dims(16, 20), 2.0).unwrap();
            let d = decode_argmax(&g.c);
            // Ties at exact .5 resolve to the first node in scan order.
            let nearest = |v: f64| if v - v.floor() <= 0.5 { v.floor() } else { v.ceil() };
            prop_assert_eq!(d.k, Point::new(nearest(mx), nearest(my)));
        }

        #[test]
        fn biased_decode_quarter_rule(mx in 2.0..13.0f64, my in 2.0..17.0f64) {
            let g = encode_gaussian(Point::new(mx, my), dims(16, 20), 2.0).unwrap();
            let d = decode_biased_quarter(&g.c);
            let rule = |m: f64| if m - m.floor() < 0.5 { m.floor() + 0.25 } else { m.ceil() - 0.25 };
            prop_assert_eq!(d.k, Point::new(rule(mx), rule(my)));
        }

        #[test]
        fn losses_vanish_on_identical_targets(mx in 0.0..15.0f64, my in 0.0..19.0f64) {
            let k = Point::new(mx, my);
            let t = encode_ccrf(k, dims(16, 20), 3.0).unwrap();
            prop_assert_eq!(loss_ccrf(&t.maps, &t.maps).unwrap(), 0.0);
            let g = encode_gaussian(k, dims(16, 20), 2.0).unwrap();
            prop_assert_eq!(loss_mse(&g.c, &g.c).unwrap(), 0.0);
        }
    }

    #[test]
    fn biased_decode_examples() {
        let g = encode_gaussian(Point::new(5.3, 7.0), dims(16, 20), 2.0).unwrap();
        assert_eq!(decode_biased_quarter(&g.c).k, Point::new(5.25, 7.25));
        let g = encode_gaussian(Point::new(5.6, 7.9), dims(16, 20), 2.0).unwrap();
        assert_eq!(decode_biased_quarter(&g.c).k, Point::new(5.75, 7.75));
        // Flat map: argmax (0, 0), zero derivative, sign +1.
        let flat = ImageGrid::from_fn(dims(4, 4), 1, |_, _, _| 1.0);
        assert_eq!(decode_biased_quarter(&flat).k, Point::new(0.25, 0.25));
    }

    #[test]
    fn biased_decode_statistics() {
        let size = dims(24, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut errs = Vec::with_capacity(n);
        for _ in 0..n {
            let m = 8.0 + rng.random::<f64>() + f64::from(rng.random_range(0..8u32));
            let g = encode_gaussian(Point::new(m, 12.0), size, 2.0).unwrap();
            errs.push((decode_biased_quarter(&g.c).k.x - m).abs());
        }
        let mean = errs.iter().sum::<f64>() / n as f64;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64;
        let se = (1.0f64 / 192.0).sqrt() / (n as f64).sqrt();
        assert!((mean - 0.125).abs() < 3.0 * se, "mean {mean}");
        assert!((var - 1.0 / 192.0).abs() < 0.1 / 192.0, "var {var}");
    }

    #[test]
    fn loss_values() {
        let size = dims(10, 10);
        let t = encode_ccrf(Point::new(4.0, 4.0), size, 2.0).unwrap();
        let mut pred = t.maps.clone();
        // Offset errors outside the disc are masked.
        pred.x_off.set(0, 0, 0, 5.0);
        assert_eq!(loss_ccrf(&pred, &t.maps).unwrap(), 0.0);
        pred.x_off.set(4, 4, 0, 3.0);
        pred.y_off.set(4, 5, 0, t.maps.y_off.get(4, 5, 0) - 4.0);
        assert_eq!(loss_ccrf(&pred, &t.maps).unwrap(), 7.0);
        pred.c.set(9, 9, 0, 1.0);
        assert_eq!(loss_ccrf(&pred, &t.maps).unwrap(), 8.0);

        let a = ImageGrid::zeros(size, 1);
        let mut b = a.clone();
        b.set(1, 1, 0, 3.0);
        b.set(2, 1, 0, 4.0);
        assert_eq!(loss_mse(&b, &a).unwrap(), 5.0);
        let other = ImageGrid::zeros(dims(9, 10), 1);
        assert!(matches!(loss_mse(&a, &other), Err(Error::DimensionMismatch(_))));
    }
}
