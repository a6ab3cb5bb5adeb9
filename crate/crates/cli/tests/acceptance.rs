//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::f64::consts::FRAC_PI_2;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;

use kpcalc::biaslab::{monte_carlo, trial_rng, ErrorStats, OracleMode, Sampler, TOPDOWN_ROI};
use kpcalc::codec::{decode_ccrf, decode_dark, encode_ccrf, encode_gaussian, Codec};
use kpcalc::geometry::{compose, t_flip, t_rotate};
use kpcalc::pipeline::{input_to_output, output_to_source, test_transform, Compensation, Convention, PipelineConfig};
use kpcalc::raster::warp;
use kpcalc::{BorderPolicy, ImageGrid, PlaneSize, Point, Roi, Transform2D};

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn size(w: u32, h: u32) -> PlaneSize {
    PlaneSize::new(w, h).unwrap()
}

fn topdown(conv: Convention, codec: Codec) -> PipelineConfig {
    PipelineConfig::new(conv, size(192, 256), size(48, 64)).with_codec(codec)
}

fn random_sizes(rng: &mut impl Rng) -> (PlaneSize, PlaneSize) {
    let s = rng.random_range(1..=8u32);
    let (w, h) = (rng.random_range(2..=256u32), rng.random_range(2..=256u32));
    (size(w * s, h * s), size(w, h))
}

fn mc(cfg: &PipelineConfig, mode: OracleMode, n: usize) -> ErrorStats {
    monte_carlo(cfg, mode, n, SEED, &Sampler::uniform(TOPDOWN_ROI)).unwrap()
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail.push_str(&format!("; {:.2} s", took.as_secs_f64()));
    if let Some(limit) = limit {
        if took >= limit {
            o.passed = false;
            o.detail.push_str(&format!(" exceeds {} s", limit.as_secs()));
        }
    }
    o
}

fn c1_unbiased_closure() -> Outcome {
    let mut rng = trial_rng(SEED, 1);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let conv = if i % 2 == 0 {
            Convention::UnitLength
        } else {
            Convention::PixelCount
        };
        let (input, output) = random_sizes(&mut rng);
        let cfg = PipelineConfig::new(conv, input, output);
        let roi = Roi::new(
            rng.random_range(-500.0..500.0),
            rng.random_range(-500.0..500.0),
            rng.random_range(1.0..800.0),
            rng.random_range(1.0..800.0),
        )
        .unwrap();
        let chain = compose(
            &output_to_source(&roi, &cfg).unwrap(),
            &compose(&input_to_output(&cfg), &test_transform(&roi, &cfg).unwrap()),
        );
        let tl = roi.top_left();
        let p = Point::new(
            tl.x + rng.random_range(0.0..1.0) * roi.w,
            tl.y + rng.random_range(0.0..1.0) * roi.h,
        );
        worst = worst.max(chain.apply(p).max_abs_diff(p));
    }
    outcome(worst < 1e-9, format!("max point error {worst:.3e} over 1000 draws"))
}

fn c2_flip_alignment() -> Outcome {
    let mut rng = trial_rng(SEED, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (input, output) = random_sizes(&mut rng);
        let cfg = PipelineConfig::new(Convention::UnitLength, input, output);
        let i2o = input_to_output(&cfg);
        let k_i = Point::new(
            rng.random_range(0.0..=input.width_units()),
            rng.random_range(0.0..=input.height_units()),
        );
        let k_o = i2o.apply(k_i);
        let k_o_flip = t_flip(output.width_units()).apply(i2o.apply(t_flip(input.width_units()).apply(k_i)));
        worst = worst.max(k_o_flip.max_abs_diff(k_o));
    }
    outcome(worst < 1e-9, format!("max |k'_o - k_o| {worst:.3e} over 1000 configs"))
}

fn c3_biased_flip_offset() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in 1..=8u32 {
        let cfg = PipelineConfig::new(Convention::PixelCount, size(48 * s, 64 * s), size(48, 64));
        let i2o = input_to_output(&cfg);
        let chain = compose(&t_flip(47.0), &compose(&i2o, &t_flip(f64::from(48 * s - 1))));
        let s = f64::from(s);
        worst = worst.max((chain.translation_part().0 - i2o.translation_part().0 - (1.0 - s) / s).abs());
    }
    let cfg = topdown(Convention::PixelCount, Codec::ArgmaxOnly).with_flip_test(true);
    let st = mc(&cfg, OracleMode::AnalyticShift, 100_000);
    outcome(
        worst < 1e-12 && within(st.mean_abs_x, 0.375, 1e-3),
        format!(
            "offset deviation from (1-s)/s {worst:.1e} for s=1..8; mean_abs_x {:.6} (expected 0.375)",
            st.mean_abs_x
        ),
    )
}

fn c4_snoop_residual() -> Outcome {
    let base = topdown(Convention::PixelCount, Codec::ArgmaxOnly).with_flip_test(true);
    let snoop = mc(&base.clone().with_compensation(Compensation::Snoop), OracleMode::AnalyticShift, 100_000);
    let ec = mc(&base.with_compensation(Compensation::SnoopPlusEc), OracleMode::AnalyticShift, 100_000);
    outcome(
        within(snoop.mean_abs_x, 0.125, 1e-3) && ec.mean_abs_x < 1e-3,
        format!(
            "snoop mean_abs_x {:.6} (expected 0.125); snoop+ec {:.3e}",
            snoop.mean_abs_x, ec.mean_abs_x
        ),
    )
}

fn c5_biased_decode_statistics() -> Outcome {
    let cfg = topdown(Convention::UnitLength, Codec::CfBiasedDecode);
    let st = mc(&cfg, OracleMode::FullHeatmap, 100_000);
    let ok = within(st.mean_abs_x, 0.125, 0.005)
        && within(st.mean_abs_y, 0.125, 0.005)
        && within(st.var_abs_x, 0.0052, 0.001)
        && within(st.var_abs_y, 0.0052, 0.001)
        && st.n_failed == 0;
    outcome(
        ok,
        format!(
            "mean x/y {:.5}/{:.5} (expected 0.125), var x/y {:.5}/{:.5} (expected 0.0052), {} failed",
            st.mean_abs_x, st.mean_abs_y, st.var_abs_x, st.var_abs_y, st.n_failed
        ),
    )
}

fn c6_joint_with_snoop() -> Outcome {
    let cfg = topdown(Convention::PixelCount, Codec::CfBiasedDecode)
        .with_flip_test(true)
        .with_compensation(Compensation::Snoop);
    let a = mc(&cfg, OracleMode::AnalyticShift, 1_000_000);
    let f = mc(&cfg, OracleMode::FullHeatmap, 20_000);
    let ok = within(a.mean_abs_x, 5.0 / 32.0, 1e-3)
        && within(a.var_abs_x, 37.0 / 3072.0, 1e-3)
        && within(f.mean_abs_x, a.mean_abs_x, 0.02);
    outcome(
        ok,
        format!(
            "analytic mean {:.6} (expected 5/32 = {:.6}), var {:.6} (expected 37/3072 = {:.6}); full-heatmap mean {:.6}",
            a.mean_abs_x,
            5.0 / 32.0,
            a.var_abs_x,
            37.0 / 3072.0,
            f.mean_abs_x
        ),
    )
}

fn c7_joint_without_snoop() -> Outcome {
    let cfg = topdown(Convention::PixelCount, Codec::CfBiasedDecode).with_flip_test(true);
    let a = mc(&cfg, OracleMode::AnalyticShift, 1_000_000);
    outcome(
        within(a.mean_abs_x, 3.0 / 8.0, 1e-3) && within(a.var_abs_x, 1.0 / 48.0, 1e-3),
        format!(
            "analytic mean {:.6} (expected 3/8), var {:.6} (expected 1/48 = {:.6})",
            a.mean_abs_x,
            a.var_abs_x,
            1.0 / 48.0
        ),
    )
}

fn c8_codec_identities() -> Outcome {
    let mut rng = trial_rng(SEED, 8);
    let dims = size(48, 64);
    let (mut ccrf, mut dark): (f64, f64) = (0.0, 0.0);
    for _ in 0..10_000 {
        let k = Point::new(rng.random_range(0.0..=47.0), rng.random_range(0.0..=63.0));
        let t = encode_ccrf(k, dims, 3.0).unwrap();
        ccrf = ccrf.max(decode_ccrf(&t.maps).unwrap().k.max_abs_diff(k));
        let k = Point::new(rng.random_range(6.0..=41.0), rng.random_range(6.0..=57.0));
        dark = dark.max(decode_dark(&encode_gaussian(k, dims, 2.0).unwrap().c).k.max_abs_diff(k));
    }
    outcome(
        ccrf < 1e-12 && dark < 1e-3,
        format!("ccrf max error {ccrf:.3e}; dark max error {dark:.3e} over 10^4 keypoints"),
    )
}

fn c9_resolution_scaling() -> Outcome {
    let roi = Roi::new(320.0, 240.0, 200.0, 200.0).unwrap();
    let run = |w: u32| {
        let cfg = PipelineConfig::new(Convention::PixelCount, size(w, w), size(w / 4, w / 4))
            .with_codec(Codec::CfBiasedDecode)
            .with_flip_test(true)
            .with_compensation(Compensation::Snoop);
        monte_carlo(&cfg, OracleMode::AnalyticShift, 100_000, SEED, &Sampler::uniform(roi)).unwrap()
    };
    let (lo, hi) = (run(192), run(384));
    let ratio = lo.mean_abs_x_source / hi.mean_abs_x_source;
    outcome(
        within(ratio, 2.0, 0.05),
        format!(
            "source error {:.6} at 192 px, {:.6} at 384 px, ratio {ratio:.4}",
            lo.mean_abs_x_source, hi.mean_abs_x_source
        ),
    )
}

fn c10_raster_exactness() -> Outcome {
    let mut rng = trial_rng(SEED, 10);
    let sq = size(33, 33);
    let src = ImageGrid::from_fn(sq, 2, |_, _, _| rng.random_range(-1.0..1.0));
    let n = 32.0;
    let center = Point::new(16.0, 16.0);
    type NodeMap = Box<dyn Fn(usize, usize) -> Option<(usize, usize)>>;
    let node_maps: Vec<(Transform2D, NodeMap)> = vec![
        (t_flip(n), Box::new(|x, y| Some((32 - x, y)))),
        (t_rotate(FRAC_PI_2, center), Box::new(|x, y| Some((y, 32 - x)))),
        (t_rotate(2.0 * FRAC_PI_2, center), Box::new(|x, y| Some((32 - x, 32 - y)))),
        (t_rotate(3.0 * FRAC_PI_2, center), Box::new(|x, y| Some((32 - y, x)))),
        (
            Transform2D::translation(3.0, -5.0),
            Box::new(|x, y| (x >= 3 && y + 5 <= 32).then(|| (x - 3, y + 5))),
        ),
    ];
    let mut permutation_ok = true;
    for (t, inverse) in &node_maps {
        let dst = warp(&src, t, sq, BorderPolicy::ZeroFill).unwrap();
        for y in 0..33 {
            for x in 0..33 {
                for c in 0..2 {
                    let expected = inverse(x, y).map_or(0.0, |(sx, sy)| src.get(sx, sy, c));
                    permutation_ok &= dst.get(x, y, c).to_bits() == expected.to_bits();
                }
            }
        }
    }

    let mut worst: f64 = 0.0;
    let plane = size(40, 30);
    for _ in 0..50 {
        let (a, b, c) = (
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-5.0..5.0),
        );
        let field = ImageGrid::from_fn(plane, 1, |x, y, _| a * x as f64 + b * y as f64 + c);
        let t = compose(
            &Transform2D::translation(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            &compose(
                &t_rotate(rng.random_range(-3.0..3.0), Point::new(19.5, 14.5)),
                &kpcalc::geometry::t_resize(39.0, 29.0, rng.random_range(20.0..60.0), rng.random_range(20.0..60.0))
                    .unwrap(),
            ),
        );
        let dst = warp(&field, &t, plane, BorderPolicy::ZeroFill).unwrap();
        let inv = t.invert().unwrap();
        for y in 0..30 {
            for x in 0..40 {
                let p = inv.apply(Point::new(x as f64, y as f64));
                if p.x >= 0.0 && p.y >= 0.0 && p.x <= 39.0 && p.y <= 29.0 {
                    worst = worst.max((dst.get(x, y, 0) - (a * p.x + b * p.y + c)).abs());
                }
            }
        }
    }
    outcome(
        permutation_ok && worst < 1e-9,
        format!(
            "node-preserving warps bit-exact: {permutation_ok}; linear-field max error {worst:.3e}"
        ),
    )
}

fn c11_end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_kpcalc"))
            .args([
                "simulate", "--ft", "--snoop", "--codec", "cf-biased", "--mode", "full", "--n", "2000", "--seed",
                "17", "--report",
            ])
            .arg(&path)
            .args(["--format", "csv"])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(path).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    outcome(
        a == b && !a.is_empty(),
        format!("two runs produced {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
    )
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, Option<u64>, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        (1, "unbiased closure", Some(1), c1_unbiased_closure),
        (2, "flip alignment", Some(1), c2_flip_alignment),
        (3, "biased flip offset", Some(5), c3_biased_flip_offset),
        (4, "snoop residual", None, c4_snoop_residual),
        (5, "biased decode statistics", Some(60), c5_biased_decode_statistics),
        (6, "joint analysis with snoop", None, c6_joint_with_snoop),
        (7, "joint analysis without snoop", None, c7_joint_without_snoop),
        (8, "codec identities", None, c8_codec_identities),
        (9, "resolution scaling", None, c9_resolution_scaling),
        (10, "raster exactness", None, c10_raster_exactness),
        (11, "end-to-end determinism", None, c11_end_to_end_determinism),
    ];
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        let o = timed(limit.map(Duration::from_secs), f);
        println!("{} criterion {id:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("all 11 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failed} of 11 criteria failed");
        ExitCode::FAILURE
    }
}
