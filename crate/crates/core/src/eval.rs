//! Benchmark metrics: WHDR over ordinal judgments, SAW precision/recall,
//! and MIT-style MSE / LMSE / DSSIM.

use serde::Serialize;

use crate::annotations::{OrdinalJudgment, Relation, SawAnnotationSet, POINT_DILATION_RADIUS};
use crate::annotations::dilate_points;
use crate::error::{invalid, Error, Result};
use crate::image::{gradients, intensity, Decomposition, Image, LinearImage, LogImage, Mask};

pub const DEFAULT_WHDR_DELTA: f64 = 0.10;
pub const LMSE_WINDOW: usize = 20;
pub const LMSE_STRIDE: usize = 10;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

// ---------------------------------------------------------------------------
// WHDR

/// Channel-mean reflectance in the linear domain.
fn point_reflectance(log_r: &LogImage, i: usize) -> f64 {
    let px = log_r.pixel(i);
    px.iter().map(|v| v.exp()).sum::<f64>() / px.len() as f64
}

/// Relation implied by `rho = r_i / r_j`: above `1 + delta` the second
/// point is darker, below `1 / (1 + delta)` the first one is.
pub fn predicted_relation(ri: f64, rj: f64, delta: f64) -> Relation {
    let rho = ri / rj;
    if rho > 1.0 + delta {
        Relation::JDarker
    } else if rho < 1.0 / (1.0 + delta) {
        Relation::IDarker
    } else {
        Relation::Equal
    }
}

/// Weighted fraction of judgments the prediction disagrees with.
pub fn whdr(log_r: &LogImage, judgments: &[OrdinalJudgment], delta: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(invalid("delta", "must be non-negative"));
    }
    let (w, h) = (log_r.width(), log_r.height());
    let mut wrong = 0.0;
    let mut total = 0.0;
    for j in judgments {
        if !j.i.in_bounds(w, h) || !j.j.in_bounds(w, h) {
            return Err(Error::Annotation("judgment point out of bounds".into()));
        }
        let (a, b) = (j.i.index(w), j.j.index(w));
        if !log_r.mask().at(a) || !log_r.mask().at(b) {
            continue;
        }
        let pred = predicted_relation(point_reflectance(log_r, a), point_reflectance(log_r, b), delta);
        total += j.w;
        if pred != j.rel {
            wrong += j.w;
        }
    }
    if !(total > 0.0) {
        return Err(Error::ZeroWeight);
    }
    Ok(wrong / total)
}

// ---------------------------------------------------------------------------
// SAW precision / recall

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Operating points in descending threshold order, plus average precision.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

/// Per-pixel `|grad log S|_2` over all shading channels; a pixel is scored
/// when both of its forward differences are valid.
pub fn shading_edge_scores(log_s: &LogImage) -> (Vec<f64>, Mask) {
    gradient_magnitude(log_s)
}

fn gradient_magnitude<D>(img: &Image<D>) -> (Vec<f64>, Mask) {
    let g = gradients(img);
    let (n, ch) = (g.width * g.height, g.channels);
    let mut scores = vec![0.0; n];
    let mut valid = Mask::filled(g.width, g.height, false);
    for i in 0..n {
        if g.dx_valid[i] && g.dy_valid[i] {
            let sq: f64 = (0..ch)
                .map(|c| g.dx[i * ch + c].powi(2) + g.dy[i * ch + c].powi(2))
                .sum();
            scores[i] = sq.sqrt();
            valid.set_index(i, true);
        }
    }
    (scores, valid)
}

/// A scored pixel with its class and confusion-matrix weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledScore {
    pub score: f64,
    pub positive: bool,
    pub weight: f64,
}

/// Positives are dilated shadow and discontinuity points (a pixel that is
/// also in a smooth region stays positive); negatives are smooth-region
/// pixels, weighted 1 or, in challenge mode, by their region's mean
/// intensity-gradient magnitude. A pixel listed in several smooth regions
/// takes the first region's weight.
pub fn saw_labeled_scores(
    log_s: &LogImage,
    image: &LinearImage,
    saw: &SawAnnotationSet,
    challenge: bool,
) -> Result<Vec<LabeledScore>> {
    let (w, h) = (log_s.width(), log_s.height());
    log_s.check_grid(image, "shading vs image")?;
    saw.validate(w, h)?;
    let (scores, scored) = shading_edge_scores(log_s);
    let positive = dilate_points(&saw.shadow_points, POINT_DILATION_RADIUS, w, h)
        .or(&saw.discontinuity_mask(w, h))?;
    let (img_grad, img_valid) = gradient_magnitude(&intensity(image));

    let mut negative_weight: Vec<Option<f64>> = vec![None; w * h];
    for region in &saw.smooth_regions {
        let weight = if challenge {
            let vals: Vec<f64> = region
                .iter()
                .filter(|&&i| img_valid.at(i))
                .map(|&i| img_grad[i])
                .collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        } else {
            1.0
        };
        for &i in region {
            negative_weight[i].get_or_insert(weight);
        }
    }

    let mut out = Vec::new();
    for i in 0..w * h {
        if !scored.at(i) {
            continue;
        }
        if positive.at(i) {
            out.push(LabeledScore {
                score: scores[i],
                positive: true,
                weight: 1.0,
            });
        } else if let Some(weight) = negative_weight[i] {
            out.push(LabeledScore {
                score: scores[i],
                positive: false,
                weight,
            });
        }
    }
    if !out.iter().any(|s| s.positive) {
        return Err(Error::DegenerateAnnotation("no positive pixels"));
    }
    if !out.iter().any(|s| !s.positive) {
        return Err(Error::DegenerateAnnotation("no smooth-region pixels"));
    }
    Ok(out)
}

/// Sweeps every distinct score as a threshold (score >= t is non-smooth)
/// in descending order; AP is the rectangular sum of recall steps times
/// precision.
pub fn pr_curve(samples: &[LabeledScore]) -> Result<PrCurve> {
    let total_pos: f64 = samples.iter().filter(|s| s.positive).map(|s| s.weight).sum();
    if !(total_pos > 0.0) {
        return Err(Error::DegenerateAnnotation("no positive pixels"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut k = 0;
    while k < sorted.len() {
        let t = sorted[k].score;
        while k < sorted.len() && sorted[k].score == t {
            if sorted[k].positive {
                tp += sorted[k].weight;
            } else {
                fp += sorted[k].weight;
            }
            k += 1;
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold: t,
            precision,
            recall,
        });
    }
    Ok(PrCurve { points, ap })
}

pub fn saw_pr(
    log_s: &LogImage,
    image: &LinearImage,
    saw: &SawAnnotationSet,
    challenge: bool,
) -> Result<PrCurve> {
    pr_curve(&saw_labeled_scores(log_s, image, saw, challenge)?)
}

/// Recomputes every operating point by direct counting over all samples.
pub fn pr_curve_brute_force(samples: &[LabeledScore]) -> Result<PrCurve> {
    let total_pos: f64 = samples.iter().filter(|s| s.positive).map(|s| s.weight).sum();
    if !(total_pos > 0.0) {
        return Err(Error::DegenerateAnnotation("no positive pixels"));
    }
    let mut thresholds: Vec<f64> = samples.iter().map(|s| s.score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for s in samples.iter().filter(|s| s.score >= t) {
            if s.positive {
                tp += s.weight;
            } else {
                fp += s.weight;
            }
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold: t,
            precision,
            recall,
        });
    }
    Ok(PrCurve { points, ap })
}

pub fn saw_pr_brute_force(
    log_s: &LogImage,
    image: &LinearImage,
    saw: &SawAnnotationSet,
    challenge: bool,
) -> Result<PrCurve> {
    pr_curve_brute_force(&saw_labeled_scores(log_s, image, saw, challenge)?)
}

// ---------------------------------------------------------------------------
// MIT metrics

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MitMetrics {
    pub mse_r: f64,
    pub mse_s: f64,
    pub lmse_r: f64,
    pub lmse_s: f64,
    pub dssim_r: f64,
    pub dssim_s: f64,
}

/// `(1/|pixels|) sum (gt - c pred)^2` with the least-squares `c`, summed
/// over channels. `None` when no pixel is given.
fn scale_invariant_mse(gt: &[f64], pred: &[f64], ch: usize, pixels: &[usize]) -> Option<f64> {
    if pixels.is_empty() {
        return None;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &i in pixels {
        for k in i * ch..(i + 1) * ch {
            num += gt[k] * pred[k];
            den += pred[k] * pred[k];
        }
    }
    let c = if den > 0.0 { num / den } else { 0.0 };
    let mut sse = 0.0;
    for &i in pixels {
        for k in i * ch..(i + 1) * ch {
            let r = gt[k] - c * pred[k];
            sse += r * r;
        }
    }
    Some(sse / pixels.len() as f64)
}

/// Window origins along one axis; a side shorter than the window gets a
/// single clipped window.
fn window_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if len <= window {
        vec![0]
    } else {
        (0..=len - window).step_by(stride).collect()
    }
}

/// Mean of per-window scale-invariant MSE over `window` squares at
/// `stride`; windows without valid pixels are skipped.
pub fn lmse(gt: &LinearImage, pred: &LinearImage, mask: &Mask, window: usize, stride: usize) -> Result<f64> {
    pred.check_grid(gt, "prediction vs ground truth")?;
    if window == 0 || stride == 0 {
        return Err(invalid("window", "window and stride must be positive"));
    }
    let (w, h, ch) = (gt.width(), gt.height(), gt.channels());
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in window_starts(h, window, stride) {
        for x0 in window_starts(w, window, stride) {
            let mut pixels = Vec::new();
            for y in y0..(y0 + window).min(h) {
                for x in x0..(x0 + window).min(w) {
                    if mask.get(x, y) {
                        pixels.push(y * w + x);
                    }
                }
            }
            if let Some(v) = scale_invariant_mse(gt.data(), pred.data(), ch, &pixels) {
                total += v;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(total / count as f64)
}

/// `(1 - SSIM) / 2` of the grayscale images after scaling `pred` by its
/// least-squares factor onto `gt`. Local statistics use a Gaussian window
/// renormalized over the valid in-bounds pixels.
pub fn dssim(gt: &LinearImage, pred: &LinearImage, mask: &Mask) -> Result<f64> {
    pred.check_grid(gt, "prediction vs ground truth")?;
    let (w, h) = (gt.width(), gt.height());
    let g = intensity(gt);
    let p = intensity(pred);
    let pixels = mask.indices();
    if pixels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &i in &pixels {
        num += g.data()[i] * p.data()[i];
        den += p.data()[i] * p.data()[i];
    }
    let c = if den > 0.0 { num / den } else { 0.0 };
    let a: Vec<f64> = g.data().to_vec();
    let b: Vec<f64> = p.data().iter().map(|v| c * v).collect();

    let radius = (3.0 * SSIM_SIGMA).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d * d) as f64 / (SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for &i in &pixels {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        let mut s = [0.0f64; 6];
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !mask.at(j) {
                    continue;
                }
                let wt = taps[(dx + radius) as usize] * taps[(dy + radius) as usize];
                s[0] += wt;
                s[1] += wt * a[j];
                s[2] += wt * b[j];
                s[3] += wt * a[j] * a[j];
                s[4] += wt * b[j] * b[j];
                s[5] += wt * a[j] * b[j];
            }
        }
        let (ma, mb) = (s[1] / s[0], s[2] / s[0]);
        let va = (s[3] / s[0] - ma * ma).max(0.0);
        let vb = (s[4] / s[0] - mb * mb).max(0.0);
        let cov = s[5] / s[0] - ma * mb;
        let ssim = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        total += ssim;
    }
    let ssim = total / pixels.len() as f64;
    Ok(((1.0 - ssim) / 2.0).max(0.0))
}

pub fn mit_metrics(pred: &Decomposition, gt_r: &LinearImage, gt_s: &LinearImage) -> Result<MitMetrics> {
    let r = pred.log_r.exp();
    let s = pred.log_s.exp();
    if r.channels() != gt_r.channels() || s.channels() != gt_s.channels() {
        return Err(Error::DimensionMismatch("prediction vs ground-truth channels".into()));
    }
    r.check_grid(gt_r, "reflectance")?;
    s.check_grid(gt_s, "shading")?;
    let mask = pred.mask().and(gt_r.mask())?.and(gt_s.mask())?;
    let pixels = mask.indices();
    let mse = |gt: &LinearImage, p: &LinearImage| {
        scale_invariant_mse(gt.data(), p.data(), gt.channels(), &pixels).ok_or(Error::EmptyInput)
    };
    Ok(MitMetrics {
        mse_r: mse(gt_r, &r)?,
        mse_s: mse(gt_s, &s)?,
        lmse_r: lmse(gt_r, &r, &mask, LMSE_WINDOW, LMSE_STRIDE)?,
        lmse_s: lmse(gt_s, &s, &mask, LMSE_WINDOW, LMSE_STRIDE)?,
        dssim_r: dssim(gt_r, &r, &mask)?,
        dssim_s: dssim(gt_s, &s, &mask)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::Point;

    fn judgment(rel: Relation, w: f64) -> OrdinalJudgment {
        OrdinalJudgment::new(Point::new(0, 0), Point::new(1, 0), rel, w)
    }

    fn two_pixel(ri: f64, rj: f64) -> LogImage {
        LogImage::from_fn(2, 1, 1, |x, _, _| if x == 0 { ri.ln() } else { rj.ln() })
    }

    #[test]
    fn whdr_threshold_arithmetic() {
        let r = two_pixel(1.05, 1.0);
        assert_eq!(whdr(&r, &[judgment(Relation::JDarker, 2.0)], 0.1).unwrap(), 1.0);
        assert_eq!(whdr(&r, &[judgment(Relation::Equal, 2.0)], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn whdr_flipped_predictions() {
        let r = two_pixel(2.0, 1.0);
        let js = [judgment(Relation::IDarker, 1.0), judgment(Relation::JDarker, 1.0)];
        assert_eq!(whdr(&r, &js, 0.1).unwrap(), 0.5);
        assert!(matches!(whdr(&r, &[], 0.1), Err(Error::ZeroWeight)));
    }

    fn saw_fixture() -> (LinearImage, SawAnnotationSet) {
        let img = LinearImage::from_fn(8, 8, 3, |x, y, _| 0.2 + 0.05 * ((x * y) % 5) as f64);
        let saw = SawAnnotationSet {
            smooth_regions: vec![(0..16).collect()],
            shadow_points: vec![Point::new(6, 6)],
            discontinuity_points: vec![],
        };
        (img, saw)
    }

    #[test]
    fn perfect_separation_has_unit_ap() {
        let img = LinearImage::from_fn(16, 16, 3, |x, y, _| 0.2 + 0.05 * ((x * y) % 5) as f64);
        let saw = SawAnnotationSet {
            smooth_regions: vec![(0..32).collect()],
            shadow_points: vec![Point::new(8, 13)],
            discontinuity_points: vec![],
        };
        // flat on the smooth rows and the row their differences reach
        let log_s = LogImage::from_fn(16, 16, 1, |x, y, _| {
            if y <= 2 {
                0.0
            } else {
                ((x + y) % 2) as f64 * 3.0
            }
        });
        for challenge in [false, true] {
            let curve = saw_pr(&log_s, &img, &saw, challenge).unwrap();
            assert!((curve.ap - 1.0).abs() < 1e-12, "ap {}", curve.ap);
        }
    }

    #[test]
    fn flat_scores_give_positive_fraction() {
        let (img, saw) = saw_fixture();
        let log_s = LogImage::filled(8, 8, 1, 0.0);
        let samples = saw_labeled_scores(&log_s, &img, &saw, false).unwrap();
        let pos = samples.iter().filter(|s| s.positive).count() as f64;
        let curve = pr_curve(&samples).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert!((curve.points[0].precision - pos / samples.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn missing_positives_is_degenerate() {
        let (img, mut saw) = saw_fixture();
        saw.shadow_points.clear();
        let err = saw_pr(&LogImage::filled(8, 8, 1, 0.0), &img, &saw, false).unwrap_err();
        assert!(matches!(err, Error::DegenerateAnnotation(_)));
    }

    #[test]
    fn mit_identity_and_scale() {
        let gt_r = LinearImage::from_fn(24, 24, 3, |x, y, c| 0.1 + 0.03 * ((x + 2 * y + c) % 7) as f64);
        let gt_s = LinearImage::from_fn(24, 24, 1, |x, y, _| 0.5 + 0.01 * (x + y) as f64);
        let same = Decomposition::new(gt_r.to_log(), gt_s.to_log()).unwrap();
        let m = mit_metrics(&same, &gt_r, &gt_s).unwrap();
        for v in [m.mse_r, m.mse_s, m.lmse_r, m.lmse_s, m.dssim_r, m.dssim_s] {
            assert!(v.abs() < 1e-12, "{m:?}");
        }
        let doubled = Decomposition::new(gt_r.scaled(2.0).to_log(), gt_s.scaled(2.0).to_log()).unwrap();
        let m = mit_metrics(&doubled, &gt_r, &gt_s).unwrap();
        for v in [m.mse_r, m.mse_s, m.lmse_r, m.lmse_s, m.dssim_r, m.dssim_s] {
            assert!(v.abs() < 1e-12, "{m:?}");
        }
    }

    #[test]
    fn window_layout() {
        assert_eq!(window_starts(24, 20, 10), vec![0]);
        assert_eq!(window_starts(40, 20, 10), vec![0, 10, 20]);
        assert_eq!(window_starts(12, 20, 10), vec![0]);
    }
}
