//! Identity suite behind `kpcalc verify`.

use rand::Rng;

use kpcalc::biaslab::{analytic_errors, monte_carlo, trial_rng, OracleMode, Sampler, TOPDOWN_ROI};
use kpcalc::codec::{decode_ccrf, decode_dark, encode_ccrf, encode_gaussian, Codec};
use kpcalc::geometry::{compose, t_flip};
use kpcalc::pipeline::{input_to_output, output_to_source, test_transform, Compensation, Convention, PipelineConfig};
use kpcalc::{PlaneSize, Point, Roi, Transform2D};

const DRAWS: u64 = 1000;

struct Report {
    all_passed: bool,
}

impl Report {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        self.all_passed &= passed;
    }
}

fn random_config(rng: &mut impl Rng, convention: Convention) -> PipelineConfig {
    let s = rng.random_range(1..=8u32);
    let (wo, ho) = (rng.random_range(2..=256u32), rng.random_range(2..=256u32));
    let input = PlaneSize::new(wo * s, ho * s).expect("sizes are at least 2");
    let output = PlaneSize::new(wo, ho).expect("sizes are at least 2");
    PipelineConfig::new(convention, input, output)
}

fn random_roi(rng: &mut impl Rng) -> Roi {
    Roi::new(
        rng.random_range(-500.0..500.0),
        rng.random_range(-500.0..500.0),
        rng.random_range(1.0..800.0),
        rng.random_range(1.0..800.0),
    )
    .expect("extents are positive")
}

fn flip_chain(cfg: &PipelineConfig) -> Transform2D {
    compose(
        &t_flip(cfg.output.width_units()),
        &compose(&input_to_output(cfg), &t_flip(cfg.input.width_units())),
    )
}

fn identities(seed: u64, r: &mut Report) {
    let mut rng = trial_rng(seed, 0);
    let mut closure: f64 = 0.0;
    let mut aligned: f64 = 0.0;
    let mut defect: f64 = 0.0;
    for i in 0..DRAWS {
        let conv = if i % 2 == 0 {
            Convention::UnitLength
        } else {
            Convention::PixelCount
        };
        let cfg = random_config(&mut rng, conv);
        let roi = random_roi(&mut rng);
        let chain = compose(
            &output_to_source(&roi, &cfg).expect("valid roi"),
            &compose(&input_to_output(&cfg), &test_transform(&roi, &cfg).expect("valid roi")),
        );
        let p = Point::new(roi.cx + rng.random_range(-0.5..0.5) * roi.w, roi.cy);
        closure = closure.max(chain.apply(p).max_abs_diff(p));

        let unit = PipelineConfig::new(Convention::UnitLength, cfg.input, cfg.output);
        aligned = aligned.max(flip_chain(&unit).max_abs_diff(&input_to_output(&unit)));

        let px = PipelineConfig::new(Convention::PixelCount, cfg.input, cfg.output);
        let s = px.stride();
        let (tx, _) = flip_chain(&px).translation_part();
        defect = defect.max((tx - (1.0 - s) / s).abs());
    }
    r.check("unbiased closure", closure < 1e-9, format!("max point error {closure:.3e} over {DRAWS} draws"));
    r.check("unit-length flip alignment", aligned < 1e-9, format!("max deviation {aligned:.3e}"));
    r.check("pixel-count flip offset (1-s)/s", defect < 1e-9, format!("max deviation {defect:.3e}"));
}

fn codecs(seed: u64, r: &mut Report) {
    let mut rng = trial_rng(seed, 1);
    let size = PlaneSize::new(48, 64).expect("valid size");
    let (mut ccrf, mut dark): (f64, f64) = (0.0, 0.0);
    for _ in 0..10_000 {
        let k = Point::new(rng.random_range(0.0..47.0), rng.random_range(0.0..63.0));
        let t = encode_ccrf(k, size, 3.0).expect("keypoint inside");
        ccrf = ccrf.max(decode_ccrf(&t.maps).expect("disc is non-empty").k.max_abs_diff(k));
        let k = Point::new(rng.random_range(6.0..41.0), rng.random_range(6.0..57.0));
        let g = encode_gaussian(k, size, 2.0).expect("keypoint inside");
        dark = dark.max(decode_dark(&g.c).k.max_abs_diff(k));
    }
    r.check("ccrf round trip", ccrf < 1e-12, format!("max error {ccrf:.3e}"));
    r.check("dark decode", dark < 1e-3, format!("max error {dark:.3e}"));
}

fn closed_forms(seed: u64, r: &mut Report) {
    let base = PipelineConfig::new(
        Convention::PixelCount,
        PlaneSize::new(192, 256).expect("valid size"),
        PlaneSize::new(48, 64).expect("valid size"),
    );
    let sampler = Sampler::uniform(TOPDOWN_ROI);
    let cases = [
        ("argmax flip offset", Codec::ArgmaxOnly, Compensation::None, true),
        ("snoop residual", Codec::ArgmaxOnly, Compensation::Snoop, true),
        ("snoop + ec residual", Codec::ArgmaxOnly, Compensation::SnoopPlusEc, true),
        ("biased decode alone", Codec::CfBiasedDecode, Compensation::None, false),
        ("biased decode with snoop", Codec::CfBiasedDecode, Compensation::Snoop, true),
        ("biased decode without snoop", Codec::CfBiasedDecode, Compensation::None, true),
    ];
    for (name, codec, comp, ft) in cases {
        let cfg = base.clone().with_codec(codec).with_flip_test(ft).with_compensation(comp);
        let a = analytic_errors(&cfg, TOPDOWN_ROI.w);
        let (mean, var) = match codec {
            Codec::CfBiasedDecode => (a.decode_mean_x, a.decode_var_x),
            _ => (a.coord_error_x, Some(0.0)),
        };
        let (Some(mean), Some(var)) = (mean, var) else {
            r.check(name, false, "no closed form".into());
            continue;
        };
        match monte_carlo(&cfg, OracleMode::AnalyticShift, 1_000_000, seed, &sampler) {
            Ok(s) => r.check(
                name,
                (s.mean_abs_x - mean).abs() < 1e-3 && (s.var_abs_x - var).abs() < 1e-3,
                format!(
                    "mean {:.6} (closed form {mean:.6}), var {:.6} (closed form {var:.6})",
                    s.mean_abs_x, s.var_abs_x
                ),
            ),
            Err(e) => r.check(name, false, e.to_string()),
        }
    }
}

/// Prints one line per check and returns whether all passed.
pub fn run(seed: u64) -> bool {
    let mut r = Report { all_passed: true };
    identities(seed, &mut r);
    codecs(seed, &mut r);
    closed_forms(seed, &mut r);
    r.all_passed
}
