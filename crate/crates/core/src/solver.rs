//! Per-image decomposition by gradient descent on the composite losses.
//!
//! The objective is `L_CGI + lambda_IIW L_IIW + lambda_SAW L_SAW`, keeping
//! only the parts whose inputs are available: the CGI part needs ground
//! truth, the SAW part needs shading annotations, and the IIW part is used
//! whenever judgments are given or no SAW annotations are (with an empty
//! judgment list its ordinal term is zero).

use serde::{Deserialize, Serialize};

use crate::annotations::{
    sample_cgi_ordinals, slic_superpixels, OrdinalJudgment, SawAnnotationSet, SlicParams,
    DEFAULT_EQUAL_DELTA,
};
use crate::bilateral::{build_operator, DenseOperator, DEFAULT_SINKHORN_ITERS};
use crate::error::{invalid, Error, Result};
use crate::image::{intensity, Decomposition, LinearImage, LogImage, Mask};
use crate::losses::{
    composite_cgi, composite_iiw, composite_saw, CgiInputs, Composite, FeatureSigmas, IiwInputs,
    LossResult, LossWeights, ReflectanceFeatures, SawInputs, Scales, SmoothnessOperator, TermValue,
};

/// Iterations spanned by the relative-decrease stopping test.
pub const STOP_WINDOW: usize = 5;
const MAX_BACKTRACKS: usize = 60;
/// Smoothing levels below this jump straight to the exact objective.
const MIN_SMOOTHING: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub weights: LossWeights,
    pub features: FeatureSigmas,
    pub max_iters: usize,
    pub initial_step: f64,
    /// Step shrink factor per rejected trial.
    pub backtrack: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Stop when the objective falls by less than this fraction over
    /// `STOP_WINDOW` iterations.
    pub tolerance: f64,
    /// Spatial bandwidth of the shading smoothness operator, in pixels.
    pub sigma_p: f64,
    pub sinkhorn_iters: usize,
    /// Initial smoothing of the reflectance L1 used to choose search
    /// directions, in log units; 0 uses plain subgradients throughout.
    pub l1_smoothing: f64,
    /// Only move shading and set `log R = log I - log S`, so the product
    /// stays at the initialization's reconstruction; otherwise both fields
    /// move freely and reconstruction is a soft term.
    pub exact_reconstruction: bool,
    /// Superpixels used to sample supervised ordinal pairs when ground
    /// truth is supplied.
    pub slic: SlicParams,
    /// Ratio threshold for "equal" when sampling supervised ordinal pairs.
    pub equal_delta: f64,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            features: FeatureSigmas::default(),
            max_iters: 500,
            initial_step: 1.0,
            backtrack: 0.5,
            armijo: 1e-4,
            tolerance: 1e-5,
            sigma_p: 4.0,
            sinkhorn_iters: DEFAULT_SINKHORN_ITERS,
            l1_smoothing: 0.01,
            exact_reconstruction: true,
            slic: SlicParams::default(),
            equal_delta: DEFAULT_EQUAL_DELTA,
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.features.validate()?;
        self.slic.validate()?;
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(invalid("initial_step", "must be positive"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(invalid("backtrack", "must lie in (0, 1)"));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(invalid("armijo", "must lie in (0, 1)"));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance", "must be positive"));
        }
        if !(self.sigma_p > 0.0 && self.sigma_p.is_finite()) {
            return Err(invalid("sigma_p", "must be positive"));
        }
        if !(self.l1_smoothing >= 0.0 && self.l1_smoothing.is_finite()) {
            return Err(invalid("l1_smoothing", "must be finite and non-negative"));
        }
        if !(self.equal_delta >= 0.0) {
            return Err(invalid("equal_delta", "must be non-negative"));
        }
        Ok(())
    }
}

/// Optional sparse supervision for one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Annotations {
    pub judgments: Option<Vec<OrdinalJudgment>>,
    pub saw: Option<SawAnnotationSet>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub reflectance: LinearImage,
    pub shading: LinearImage,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Objective before the first step and after every accepted step.
    pub trajectory: Vec<f64>,
    pub terms: Vec<TermValue>,
    pub objective: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scales: Option<ScalesReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalesReport {
    pub c_r: f64,
    pub c_s: f64,
}

impl From<Scales> for ScalesReport {
    fn from(s: Scales) -> Self {
        Self { c_r: s.c_r, c_s: s.c_s }
    }
}

/// Everything the objective needs that does not depend on the prediction.
pub struct Objective<'a> {
    image: &'a LinearImage,
    weights: LossWeights,
    log_intensity: LogImage,
    features: ReflectanceFeatures,
    smoothness: Box<dyn SmoothnessOperator>,
    judgments: Option<Vec<OrdinalJudgment>>,
    saw: Option<SawParts>,
    cgi: Option<(&'a GroundTruth, Vec<OrdinalJudgment>)>,
}

struct SawParts {
    smooth_regions: Vec<Vec<usize>>,
    shadow_regions: Vec<Vec<usize>>,
    smoothness: Box<dyn SmoothnessOperator>,
}

impl<'a> Objective<'a> {
    /// `dense` swaps the factored smoothness operator for the dense one.
    pub fn new(
        image: &'a LinearImage,
        cfg: &SolveConfig,
        annotations: &Annotations,
        ground_truth: Option<&'a GroundTruth>,
        dense: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        let (w, h) = (image.width(), image.height());
        if image.is_empty() {
            return Err(Error::EmptyInput);
        }
        let operator = |mask: &Mask| -> Result<Box<dyn SmoothnessOperator>> {
            Ok(if dense {
                Box::new(DenseOperator::new(w, mask, cfg.sigma_p, cfg.sinkhorn_iters)?)
            } else {
                Box::new(build_operator(w, h, mask, cfg.sigma_p, cfg.sinkhorn_iters)?)
            })
        };
        let saw = match &annotations.saw {
            Some(set) => {
                set.validate(w, h)?;
                let open = image.mask().and_not(&set.discontinuity_mask(w, h))?;
                Some(SawParts {
                    smooth_regions: set.smooth_regions.clone(),
                    shadow_regions: set.shadow_regions(w, h),
                    smoothness: operator(&open)?,
                })
            }
            None => None,
        };
        if let Some(js) = &annotations.judgments {
            for j in js {
                if !j.i.in_bounds(w, h) || !j.j.in_bounds(w, h) {
                    return Err(Error::Annotation("judgment point out of bounds".into()));
                }
            }
        }
        let cgi = match ground_truth {
            Some(gt) => {
                let labels = slic_superpixels(image, &cfg.slic)?;
                let js = sample_cgi_ordinals(&gt.reflectance, &labels, cfg.seed, cfg.equal_delta)?;
                Some((gt, js))
            }
            None => None,
        };
        Ok(Self {
            image,
            weights: cfg.weights,
            log_intensity: intensity(image).to_log(),
            features: ReflectanceFeatures::new(image, cfg.weights.levels, &cfg.features)?,
            smoothness: operator(image.mask())?,
            judgments: annotations.judgments.clone(),
            saw,
            cgi,
        })
    }

    /// Judgments sampled from ground truth for the supervised part.
    pub fn supervised_judgments(&self) -> Option<&[OrdinalJudgment]> {
        self.cgi.as_ref().map(|(_, js)| js.as_slice())
    }

    pub fn evaluate(&self, pred: &Decomposition) -> Result<Composite> {
        self.evaluate_with(pred, &self.features)
    }

    fn evaluate_with(&self, pred: &Decomposition, features: &ReflectanceFeatures) -> Result<Composite> {
        let mut total = Composite {
            result: LossResult::zero(pred),
            terms: Vec::new(),
        };
        if let Some((gt, js)) = &self.cgi {
            let inputs = CgiInputs {
                image: self.image,
                gt_reflectance: &gt.reflectance,
                gt_shading: &gt.shading,
                judgments: js,
            };
            total.merge("cgi", 1.0, &composite_cgi(pred, &inputs, &self.weights)?);
        }
        if self.judgments.is_some() || self.saw.is_none() {
            let inputs = IiwInputs {
                image: self.image,
                judgments: self.judgments.as_deref().unwrap_or(&[]),
                features,
                smoothness: self.smoothness.as_ref(),
            };
            let part = composite_iiw(pred, &inputs, &self.weights)?;
            total.merge("iiw", self.weights.lambda_iiw, &part);
        }
        if let Some(saw) = &self.saw {
            let inputs = SawInputs {
                image: self.image,
                log_intensity: &self.log_intensity,
                smooth_regions: &saw.smooth_regions,
                shadow_regions: &saw.shadow_regions,
                features,
                smoothness: saw.smoothness.as_ref(),
            };
            let part = composite_saw(pred, &inputs, &self.weights)?;
            total.merge("saw", self.weights.lambda_saw, &part);
        }
        Ok(total)
    }
}

/// `log S = log(intensity) / 2`, `log R = log I - log S` per channel.
pub fn initial_decomposition(image: &LinearImage) -> Result<Decomposition> {
    let log_i = image.to_log();
    let log_s = intensity(image).to_log();
    let half: Vec<f64> = log_s.data().iter().map(|v| 0.5 * v).collect();
    let log_s = LogImage::new(image.width(), image.height(), 1, half, image.mask().clone())?;
    let ch = image.channels();
    let log_r: Vec<f64> = log_i
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| if image.mask().at(k / ch) { v - log_s.data()[k / ch] } else { 0.0 })
        .collect();
    let log_r = LogImage::new(image.width(), image.height(), ch, log_r, image.mask().clone())?;
    Decomposition::new(log_r, log_s)
}

fn step(pred: &Decomposition, dir: (&[f64], &[f64]), t: f64) -> Option<Decomposition> {
    let shift = |img: &LogImage, g: &[f64]| -> Option<LogImage> {
        let data = img.data().iter().zip(g).map(|(v, d)| v - t * d).collect();
        LogImage::new(img.width(), img.height(), img.channels(), data, img.mask().clone()).ok()
    };
    Decomposition::new(shift(&pred.log_r, dir.0)?, shift(&pred.log_s, dir.1)?).ok()
}

/// Descent direction in the coordinates `(u, s)` with
/// `log R = log I - B s + u`, where `B` broadcasts shading over reflectance
/// channels. Returns the direction in `(log R, log S)` and `|grad_(u,s)|^2`.
/// Moving `s` alone keeps `R S` fixed, which decouples the reconstruction
/// term from the smoothness terms.
/// With `hold_product` the `u` block is frozen, so every step keeps the
/// product `R S` of the starting point.
fn descent_direction(g: &LossResult, cr: usize, cs: usize, hold_product: bool) -> (Vec<f64>, Vec<f64>, f64) {
    let n = g.grad_log_s.len() / cs;
    let mut gs = g.grad_log_s.clone();
    for i in 0..n {
        for c in 0..cr {
            gs[i * cs + if cs == 1 { 0 } else { c }] -= g.grad_log_r[i * cr + c];
        }
    }
    let mut dr = if hold_product {
        vec![0.0; g.grad_log_r.len()]
    } else {
        g.grad_log_r.clone()
    };
    for i in 0..n {
        for c in 0..cr {
            dr[i * cr + c] -= gs[i * cs + if cs == 1 { 0 } else { c }];
        }
    }
    let free: &[f64] = if hold_product { &[] } else { &g.grad_log_r };
    let norm2 = free.iter().chain(&gs).map(|v| v * v).sum();
    (dr, gs, norm2)
}

fn report(composite: &Composite, iterations: usize, trajectory: Vec<f64>, converged: bool) -> SolveReport {
    SolveReport {
        iterations,
        objective: composite.result.value,
        trajectory,
        terms: composite.terms.clone(),
        converged,
        scales: composite.result.scales.map(Into::into),
    }
}

/// Minimizes the objective from the equal-split initialization.
pub fn decompose(
    image: &LinearImage,
    cfg: &SolveConfig,
    annotations: &Annotations,
) -> Result<(Decomposition, SolveReport)> {
    let valid = image.mask().indices();
    if !valid.iter().any(|&i| image.pixel(i).iter().any(|&v| v > 0.0)) {
        return Err(Error::DegenerateInput("image has no positive valid sample".into()));
    }
    let objective = Objective::new(image, cfg, annotations, None, false)?;
    minimize(&objective, initial_decomposition(image)?, cfg)
}

/// Gradient descent with Armijo backtracking from `start`. Every accepted
/// step strictly lowers the objective.
pub fn minimize(
    objective: &Objective,
    start: Decomposition,
    cfg: &SolveConfig,
) -> Result<(Decomposition, SolveReport)> {
    let mut pred = start;
    let mut current = objective.evaluate(&pred)?;
    if !current.result.value.is_finite() {
        return Err(Error::DegenerateInput("objective is not finite at initialization".into()));
    }
    let mut trajectory = vec![current.result.value];
    let (cr, cs) = (pred.log_r.channels(), pred.log_s.channels());
    if cs != 1 && cs != cr {
        return Err(Error::DimensionMismatch("shading channels".into()));
    }
    // Directions come from a surrogate whose reflectance L1 is smoothed by
    // `eps`; a step is kept only if the exact objective does not rise.
    // `eps` shrinks tenfold whenever progress stalls, ending at 0.
    let mut eps = cfg.l1_smoothing;
    let mut features = objective.features.smoothed(eps);
    let mut surrogate = objective.evaluate_with(&pred, &features)?;
    let mut stage_start = 0;
    let mut t = cfg.initial_step;
    let mut converged = false;
    let mut iterations = 0;
    // previous step and direction, for the Barzilai-Borwein step guess
    let mut last: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    while iterations < cfg.max_iters {
        let (dr, ds, norm2) = descent_direction(&surrogate.result, cr, cs, cfg.exact_reconstruction);
        if let Some((t_prev, pr, ps)) = &last {
            // s_k = -t_prev d_prev, y_k = d - d_prev in the descent coordinates
            let free = !cfg.exact_reconstruction;
            let mut ss = 0.0;
            let mut sy = 0.0;
            let blocks: [(&[f64], &[f64]); 2] = [(ps, &ds), (if free { pr } else { &[] }, if free { &dr } else { &[] })];
            for (prev, now) in blocks {
                for (a, b) in prev.iter().zip(now) {
                    ss += t_prev * t_prev * a * a;
                    sy += -t_prev * a * (b - a);
                }
            }
            if sy > 0.0 && ss > 0.0 {
                t = ss / sy;
            }
        }
        let mut accepted = None;
        if norm2 > 0.0 {
            for _ in 0..MAX_BACKTRACKS {
                if let Some(trial) = step(&pred, (&dr, &ds), t) {
                    if let Ok(next_s) = objective.evaluate_with(&trial, &features) {
                        let v = next_s.result.value;
                        if v.is_finite() && v <= surrogate.result.value - cfg.armijo * t * norm2 {
                            let next = if eps > 0.0 { objective.evaluate(&trial)? } else { next_s.clone() };
                            if next.result.value <= current.result.value {
                                accepted = Some((trial, next, next_s));
                                break;
                            }
                        }
                    }
                }
                t *= cfg.backtrack;
            }
        }
        let stalled = match accepted {
            Some((trial, next, next_s)) => {
                last = Some((t, dr, ds));
                pred = trial;
                current = next;
                surrogate = next_s;
                iterations += 1;
                trajectory.push(current.result.value);
                t /= cfg.backtrack;
                let n = trajectory.len();
                n > stage_start + STOP_WINDOW && {
                    let old = trajectory[n - 1 - STOP_WINDOW];
                    (old - current.result.value) / old.abs().max(f64::MIN_POSITIVE) < cfg.tolerance
                }
            }
            None => true,
        };
        if stalled {
            if eps == 0.0 {
                converged = true;
                break;
            }
            eps = if eps * 0.1 < MIN_SMOOTHING { 0.0 } else { eps * 0.1 };
            features = objective.features.smoothed(eps);
            surrogate = objective.evaluate_with(&pred, &features)?;
            stage_start = trajectory.len() - 1;
            t = t.max(cfg.initial_step);
            last = None;
        }
    }
    let rep = report(&current, iterations, trajectory, converged);
    Ok((pred, rep))
}

/// Evaluates the objective for a supplied decomposition without
/// optimizing; with ground truth the supervised part is included.
pub fn score(
    image: &LinearImage,
    pred: &Decomposition,
    annotations: &Annotations,
    ground_truth: Option<&GroundTruth>,
    cfg: &SolveConfig,
    dense: bool,
) -> Result<Composite> {
    Objective::new(image, cfg, annotations, ground_truth, dense)?.evaluate(pred)
}
