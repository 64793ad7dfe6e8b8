//! Shared fixtures and oracles for the integration tests.
#![allow(dead_code)]

use intrinsic::annotations::{
    dilate_points, sample_cgi_ordinals, slic_superpixels, OrdinalJudgment, Point, Relation, SawAnnotationSet,
    SlicParams, DEFAULT_EQUAL_DELTA, POINT_DILATION_RADIUS,
};
use intrinsic::bilateral::{build_operator, BilateralOperator};
use intrinsic::image::{intensity, Decomposition, LinearImage, LogImage, Mask};
use intrinsic::eval::{whdr, DEFAULT_WHDR_DELTA};
use intrinsic::losses::{si_mse, FeatureSigmas, LossWeights, ReflectanceFeatures};
use intrinsic::solver::{decompose, initial_decomposition, minimize, Annotations, GroundTruth, Objective, SolveConfig};
use intrinsic::synth::mondrian;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_linear(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, lo: f64, hi: f64) -> LinearImage {
    let data = (0..w * h * c).map(|_| rng.gen_range(lo..hi)).collect();
    LinearImage::new(w, h, c, data, Mask::filled(w, h, true)).unwrap()
}

pub fn random_log(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, lo: f64, hi: f64) -> LogImage {
    let data = (0..w * h * c).map(|_| rng.gen_range(lo..hi)).collect();
    LogImage::new(w, h, c, data, Mask::filled(w, h, true)).unwrap()
}

pub fn random_point(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Point {
    Point::new(rng.gen_range(0..w), rng.gen_range(0..h))
}

pub fn random_judgments(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> Vec<OrdinalJudgment> {
    (0..n)
        .map(|_| {
            let i = random_point(rng, w, h);
            let mut j = random_point(rng, w, h);
            while j == i {
                j = random_point(rng, w, h);
            }
            let rel = match rng.gen_range(0..3) {
                0 => Relation::IDarker,
                1 => Relation::Equal,
                _ => Relation::JDarker,
            };
            OrdinalJudgment::new(i, j, rel, rng.gen_range(0.2..2.0))
        })
        .collect()
}

/// Axis-aligned rectangle of pixel indices.
pub fn rect(w: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            out.push(y * w + x);
        }
    }
    out
}

/// Everything the composites need on one random grid.
pub struct Instance {
    pub w: usize,
    pub h: usize,
    pub image: LinearImage,
    pub log_intensity: LogImage,
    pub pred: Decomposition,
    pub gt_r: LinearImage,
    pub gt_s: LinearImage,
    pub judgments: Vec<OrdinalJudgment>,
    pub smooth_regions: Vec<Vec<usize>>,
    pub shadow_regions: Vec<Vec<usize>>,
    pub features: ReflectanceFeatures,
    pub op: BilateralOperator,
    pub masked_op: BilateralOperator,
    pub weights: LossWeights,
}

impl Instance {
    pub fn random(seed: u64, w: usize, h: usize) -> Self {
        let mut r = rng(seed);
        let image = random_linear(&mut r, w, h, 3, 0.05, 1.0);
        let log_intensity = intensity(&image).to_log();
        let pred = Decomposition::new(
            random_log(&mut r, w, h, 3, -1.5, 0.0),
            random_log(&mut r, w, h, 1, -1.0, 0.5),
        )
        .unwrap();
        let gt_r = random_linear(&mut r, w, h, 3, 0.05, 1.0);
        let gt_s = random_linear(&mut r, w, h, 1, 0.1, 2.0);
        let judgments = random_judgments(&mut r, w, h, 40);
        let smooth_regions = vec![rect(w, 0, 0, w / 3, h / 3), rect(w, w / 2, h / 2, w - 1, h - 1)];
        let shadow = dilate_points(&[random_point(&mut r, w, h)], 2.0, w, h);
        let shadow_regions = vec![shadow.indices()];
        let weights = LossWeights {
            levels: 3,
            ..Default::default()
        };
        let features = ReflectanceFeatures::new(&image, weights.levels, &FeatureSigmas::default()).unwrap();
        let full = Mask::filled(w, h, true);
        let op = build_operator(w, h, &full, 4.0, 20).unwrap();
        let disc = dilate_points(&[random_point(&mut r, w, h)], POINT_DILATION_RADIUS / 2.0, w, h);
        let masked_op = build_operator(w, h, &full.and_not(&disc).unwrap(), 4.0, 20).unwrap();
        Self {
            w,
            h,
            image,
            log_intensity,
            pred,
            gt_r,
            gt_s,
            judgments,
            smooth_regions,
            shadow_regions,
            features,
            op,
            masked_op,
            weights,
        }
    }
}

fn perturbed(pred: &Decomposition, field: usize, k: usize, delta: f64) -> Decomposition {
    let img = if field == 0 { &pred.log_r } else { &pred.log_s };
    let mut data = img.data().to_vec();
    data[k] += delta;
    let moved = LogImage::new(img.width(), img.height(), img.channels(), data, img.mask().clone()).unwrap();
    if field == 0 {
        Decomposition::new(moved, pred.log_s.clone()).unwrap()
    } else {
        Decomposition::new(pred.log_r.clone(), moved).unwrap()
    }
}

/// Central-difference gradient of `f` with respect to both log fields.
pub fn numeric_gradient(pred: &Decomposition, h: f64, f: &dyn Fn(&Decomposition) -> f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = (Vec::new(), Vec::new());
    for field in 0..2 {
        let n = if field == 0 { pred.log_r.data().len() } else { pred.log_s.data().len() };
        let g: Vec<f64> = (0..n)
            .map(|k| (f(&perturbed(pred, field, k, h)) - f(&perturbed(pred, field, k, -h))) / (2.0 * h))
            .collect();
        if field == 0 {
            out.0 = g;
        } else {
            out.1 = g;
        }
    }
    out
}

/// `max |a - n| / max |n|` over both fields, or the absolute error when the
/// numeric gradient vanishes.
pub fn relative_error(analytic: (&[f64], &[f64]), numeric: (&[f64], &[f64])) -> f64 {
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (a, n) in [(analytic.0, numeric.0), (analytic.1, numeric.1)] {
        assert_eq!(a.len(), n.len());
        for (x, y) in a.iter().zip(n) {
            err = err.max((x - y).abs());
            scale = scale.max(y.abs());
        }
    }
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

pub type TermFn<'a> = Box<dyn Fn(&Decomposition) -> intrinsic::losses::LossResult + 'a>;

/// The eight individual terms and three composites evaluated on `inst`.
pub fn all_terms(inst: &Instance) -> Vec<(&'static str, TermFn<'_>)> {
    use intrinsic::losses::*;
    let cgi = move |p: &Decomposition| {
        let inputs = CgiInputs {
            image: &inst.image,
            gt_reflectance: &inst.gt_r,
            gt_shading: &inst.gt_s,
            judgments: &inst.judgments,
        };
        composite_cgi(p, &inputs, &inst.weights).unwrap().result
    };
    let iiw = move |p: &Decomposition| {
        let inputs = IiwInputs {
            image: &inst.image,
            judgments: &inst.judgments,
            features: &inst.features,
            smoothness: &inst.op,
        };
        composite_iiw(p, &inputs, &inst.weights).unwrap().result
    };
    let saw = move |p: &Decomposition| {
        let inputs = SawInputs {
            image: &inst.image,
            log_intensity: &inst.log_intensity,
            smooth_regions: &inst.smooth_regions,
            shadow_regions: &inst.shadow_regions,
            features: &inst.features,
            smoothness: &inst.masked_op,
        };
        composite_saw(p, &inputs, &inst.weights).unwrap().result
    };
    vec![
        ("si_mse", Box::new(move |p: &Decomposition| si_mse(p, &inst.gt_r, &inst.gt_s).unwrap())),
        (
            "grad_match",
            Box::new(move |p: &Decomposition| {
                // scales held fixed at the values fitted to the unperturbed prediction
                let sc = si_mse(&inst.pred, &inst.gt_r, &inst.gt_s).unwrap().scales.unwrap();
                grad_match(p, &inst.gt_r, &inst.gt_s, sc, inst.weights.levels).unwrap()
            }),
        ),
        (
            "ordinal",
            Box::new(move |p: &Decomposition| ordinal_loss(p, &inst.judgments, inst.weights.margin)),
        ),
        (
            "constant_shading",
            Box::new(move |p: &Decomposition| constant_shading_loss(p, &inst.smooth_regions[1])),
        ),
        (
            "shadow_boundary",
            Box::new(move |p: &Decomposition| {
                shadow_boundary_loss(p, &inst.log_intensity, &inst.shadow_regions[0]).unwrap()
            }),
        ),
        (
            "reflectance_smoothness",
            Box::new(move |p: &Decomposition| reflectance_smoothness(p, &inst.features).unwrap()),
        ),
        (
            "shading_smoothness",
            Box::new(move |p: &Decomposition| shading_smoothness(p, &inst.op).unwrap()),
        ),
        (
            "reconstruction",
            Box::new(move |p: &Decomposition| reconstruction_loss(p, &inst.image).unwrap()),
        ),
        ("composite_cgi", Box::new(cgi)),
        ("composite_iiw", Box::new(iiw)),
        ("composite_saw", Box::new(saw)),
    ]
}

/// Worst relative finite-difference error of `term` at `inst.pred`.
pub fn gradient_error(inst: &Instance, term: &TermFn<'_>) -> f64 {
    let analytic = term(&inst.pred);
    let numeric = numeric_gradient(&inst.pred, 1e-4, &|p| term(p).value);
    relative_error(
        (&analytic.grad_log_r, &analytic.grad_log_s),
        (&numeric.0, &numeric.1),
    )
}

/// Outcome of solving the frozen Mondrian recovery fixture.
pub struct Recovery {
    pub baseline_si_mse: f64,
    pub solved_si_mse: f64,
    pub whdr: f64,
    pub pairs: usize,
    pub iterations: usize,
    pub monotone: bool,
}

pub const RECOVERY_SIZE: usize = 64;
pub const RECOVERY_PATCHES: usize = 10;
pub const RECOVERY_FLOOR: f64 = 0.4;
pub const RECOVERY_SEED: u64 = 2;

pub fn recovery_config() -> SolveConfig {
    SolveConfig {
        weights: LossWeights {
            lambda_ss: 5.0,
            ..Default::default()
        },
        sigma_p: 4.0,
        max_iters: 2000,
        tolerance: 1e-7,
        ..Default::default()
    }
}

/// si_mse of the reflectance alone, with shading pinned to ground truth.
pub fn reflectance_si_mse(log_r: &LogImage, gt_r: &LinearImage, gt_s: &LinearImage) -> f64 {
    let pred = Decomposition::new(log_r.clone(), gt_s.to_log()).unwrap();
    si_mse(&pred, gt_r, gt_s).unwrap().value
}

pub fn is_monotone(trajectory: &[f64]) -> bool {
    trajectory.windows(2).all(|p| p[1] <= p[0])
}

/// Solves a Mondrian scene without annotations and scores the reflectance
/// against the generating one: si_mse, and WHDR on pairs sampled from it.
pub fn mondrian_recovery(size: usize, patches: usize, floor: f64, seed: u64, cfg: &SolveConfig) -> Recovery {
    let scene = mondrian(size, size, patches, floor, seed).unwrap();
    let (pred, report) = decompose(&scene.image, cfg, &Annotations::default()).unwrap();
    let labels = slic_superpixels(&scene.image, &SlicParams::default()).unwrap();
    let pairs = sample_cgi_ordinals(&scene.reflectance, &labels, 11, DEFAULT_EQUAL_DELTA).unwrap();
    Recovery {
        baseline_si_mse: reflectance_si_mse(&scene.image.to_log(), &scene.reflectance, &scene.shading),
        solved_si_mse: reflectance_si_mse(&pred.log_r, &scene.reflectance, &scene.shading),
        whdr: whdr(&pred.log_r, &pairs, DEFAULT_WHDR_DELTA).unwrap(),
        pairs: pairs.len(),
        iterations: report.iterations,
        monotone: is_monotone(&report.trajectory),
    }
}

/// Ten small solves covering every branch of the objective. Returns the
/// fixture name and its trajectory.
pub fn monotone_suite() -> Vec<(String, Vec<f64>)> {
    let (w, h) = (20, 16);
    let cfg = SolveConfig {
        max_iters: 120,
        ..Default::default()
    };
    let mut out = Vec::new();
    for k in 0..10u64 {
        let mut r = rng(100 + k);
        let image = if k % 2 == 0 {
            mondrian(w, h, 4, 0.3, k).unwrap().image
        } else {
            random_linear(&mut r, w, h, 3, 0.05, 1.0)
        };
        let mut ann = Annotations::default();
        let mut gt = None;
        let name = match k % 5 {
            0 => "plain",
            1 => {
                ann.judgments = Some(random_judgments(&mut r, w, h, 30));
                "ordinal"
            }
            2 => {
                ann.saw = Some(SawAnnotationSet {
                    smooth_regions: vec![rect(w, 0, 0, 6, 5), rect(w, 10, 8, 18, 15)],
                    shadow_points: vec![random_point(&mut r, w, h)],
                    discontinuity_points: vec![random_point(&mut r, w, h)],
                });
                "saw"
            }
            3 => {
                ann.judgments = Some(random_judgments(&mut r, w, h, 30));
                ann.saw = Some(SawAnnotationSet {
                    smooth_regions: vec![rect(w, 2, 2, 8, 8)],
                    shadow_points: vec![],
                    discontinuity_points: vec![random_point(&mut r, w, h)],
                });
                "ordinal+saw"
            }
            _ => {
                gt = Some(GroundTruth {
                    reflectance: random_linear(&mut r, w, h, 3, 0.1, 1.0),
                    shading: random_linear(&mut r, w, h, 1, 0.2, 1.5),
                });
                "ground-truth"
            }
        };
        let start = initial_decomposition(&image).unwrap();
        let objective = Objective::new(&image, &cfg, &ann, gt.as_ref(), false).unwrap();
        let (_, report) = minimize(&objective, start, &cfg).unwrap();
        out.push((format!("{name}-{k}"), report.trajectory));
    }
    out
}

/// True when some L1 or hinge kink lies within `h` of the instance for any
/// term: the `h` and `h / 100` central differences then disagree with each
/// other, independently of any analytic gradient.
pub fn straddles_kink(inst: &Instance, h: f64) -> bool {
    all_terms(inst).iter().any(|(_, term)| {
        let coarse = numeric_gradient(&inst.pred, h, &|p| term(p).value);
        let fine = numeric_gradient(&inst.pred, h / 100.0, &|p| term(p).value);
        relative_error((&coarse.0, &coarse.1), (&fine.0, &fine.1)) > 1e-5
    })
}
