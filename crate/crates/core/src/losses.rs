//! Decomposition losses with hand-derived gradients with respect to the
//! log-reflectance and log-shading fields.
//!
//! Reflectance is usually 3-channel and shading 1-channel; a 1-channel
//! shading field broadcasts across image channels. Every term only reads
//! pixels that are valid in both prediction fields (and in any reference
//! data it uses), and its gradient is zero elsewhere.

use serde::{Deserialize, Serialize};

use crate::annotations::{OrdinalJudgment, Relation};
use crate::bilateral::{BilateralOperator, DenseOperator};
use crate::error::{invalid, Error, Result};
use crate::image::{
    build_pyramid, chromaticity, gradients, gradients_adjoint, intensity, pyramid_adjoint,
    Decomposition, LinearImage, LogImage, Mask, Pyramid,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_iiw: f64,
    pub lambda_saw: f64,
    pub lambda_ord: f64,
    pub lambda_rec: f64,
    pub lambda_rs: f64,
    pub lambda_ss: f64,
    pub lambda_sns: f64,
    /// Ordinal hinge margin.
    pub margin: f64,
    /// Pyramid depth for the multi-scale terms.
    pub levels: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_iiw: 1.0,
            lambda_saw: 1.0,
            lambda_ord: 0.1,
            lambda_rec: 1.0,
            lambda_rs: 1.0,
            lambda_ss: 0.5,
            lambda_sns: 1.0,
            margin: 0.12,
            levels: 4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("lambda_iiw", self.lambda_iiw),
            ("lambda_saw", self.lambda_saw),
            ("lambda_ord", self.lambda_ord),
            ("lambda_rec", self.lambda_rec),
            ("lambda_rs", self.lambda_rs),
            ("lambda_ss", self.lambda_ss),
            ("lambda_sns", self.lambda_sns),
            ("margin", self.margin),
        ];
        for (name, v) in named {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be finite and non-negative"));
            }
        }
        if self.levels == 0 {
            return Err(invalid("levels", "must be at least 1"));
        }
        Ok(())
    }
}

/// Diagonal feature covariance for the reflectance smoothness weights,
/// given as standard deviations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSigmas {
    /// Pixels at the level's own resolution.
    pub sigma_xy: f64,
    pub sigma_intensity: f64,
    pub sigma_chroma: f64,
}

impl Default for FeatureSigmas {
    fn default() -> Self {
        Self {
            sigma_xy: 10.0,
            sigma_intensity: 0.1,
            sigma_chroma: 0.025,
        }
    }
}

impl FeatureSigmas {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_xy", self.sigma_xy),
            ("sigma_intensity", self.sigma_intensity),
            ("sigma_chroma", self.sigma_chroma),
        ] {
            if !(v > 0.0) {
                return Err(invalid(name, "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scales {
    pub c_r: f64,
    pub c_s: f64,
}

/// Loss value plus gradients with respect to `log R` and `log S`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_log_r: Vec<f64>,
    pub grad_log_s: Vec<f64>,
    pub scales: Option<Scales>,
}

impl LossResult {
    pub fn zero(pred: &Decomposition) -> Self {
        Self {
            value: 0.0,
            grad_log_r: vec![0.0; pred.log_r.data().len()],
            grad_log_s: vec![0.0; pred.log_s.data().len()],
            scales: None,
        }
    }

    /// `self += weight * other`.
    pub fn accumulate(&mut self, other: &LossResult, weight: f64) {
        self.value += weight * other.value;
        for (a, b) in self.grad_log_r.iter_mut().zip(&other.grad_log_r) {
            *a += weight * b;
        }
        for (a, b) in self.grad_log_s.iter_mut().zip(&other.grad_log_s) {
            *a += weight * b;
        }
        if self.scales.is_none() {
            self.scales = other.scales;
        }
    }
}

fn shading_channel(s: &[f64], c: usize) -> f64 {
    if s.len() == 1 {
        s[0]
    } else {
        s[c]
    }
}

fn check_pair(a: &LinearImage, b: &LogImage, what: &str) -> Result<()> {
    b.check_grid(a, what)?;
    if a.channels() != b.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {} vs {} channels",
            a.channels(),
            b.channels()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Scale-invariant MSE

struct SiParts {
    result: LossResult,
    /// Sum of squared predicted reflectance / shading samples.
    denoms: [f64; 2],
    mask: Mask,
}

/// Least-squares scale `c = sum(gt * pred) / sum(pred^2)` and the summed
/// squared residual.
fn fit_scale(gt: &[f64], pred: &[f64], ch: usize, mask: &Mask) -> (f64, f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for i in mask.indices() {
        for c in 0..ch {
            let (g, p) = (gt[i * ch + c], pred[i * ch + c]);
            num += g * p;
            den += p * p;
        }
    }
    let scale = if den > 0.0 { num / den } else { 0.0 };
    let mut sse = 0.0;
    for i in mask.indices() {
        for c in 0..ch {
            let r = gt[i * ch + c] - scale * pred[i * ch + c];
            sse += r * r;
        }
    }
    (scale, sse, den)
}

fn si_mse_parts(pred: &Decomposition, gt_r: &LinearImage, gt_s: &LinearImage) -> Result<SiParts> {
    check_pair(gt_r, &pred.log_r, "reflectance")?;
    check_pair(gt_s, &pred.log_s, "shading")?;
    let mask = pred.mask().and(gt_r.mask())?.and(gt_s.mask())?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::DegeneratePrediction("no valid pixels"));
    }
    let r = pred.log_r.exp();
    let s = pred.log_s.exp();
    let (cr, cs) = (gt_r.channels(), gt_s.channels());
    let (c_r, sse_r, den_r) = fit_scale(gt_r.data(), r.data(), cr, &mask);
    let (c_s, sse_s, den_s) = fit_scale(gt_s.data(), s.data(), cs, &mask);
    if den_r == 0.0 || den_s == 0.0 {
        return Err(Error::DegeneratePrediction("sum of squared predictions is zero"));
    }
    let nf = n as f64;
    let mut out = LossResult::zero(pred);
    out.value = (sse_r + sse_s) / nf;
    // c is the exact minimiser, so its own derivative drops out of the total
    for i in mask.indices() {
        for c in 0..cr {
            let k = i * cr + c;
            let p = r.data()[k];
            out.grad_log_r[k] = -2.0 * c_r * (gt_r.data()[k] - c_r * p) * p / nf;
        }
        for c in 0..cs {
            let k = i * cs + c;
            let p = s.data()[k];
            out.grad_log_s[k] = -2.0 * c_s * (gt_s.data()[k] - c_s * p) * p / nf;
        }
    }
    out.scales = Some(Scales { c_r, c_s });
    Ok(SiParts {
        result: out,
        denoms: [den_r, den_s],
        mask,
    })
}

/// Scale-invariant MSE in the linear domain; predictions are given in log
/// space and exponentiated. `scales` holds the fitted `c_r`, `c_s`.
pub fn si_mse(pred: &Decomposition, gt_r: &LinearImage, gt_s: &LinearImage) -> Result<LossResult> {
    Ok(si_mse_parts(pred, gt_r, gt_s)?.result)
}

// ---------------------------------------------------------------------------
// Multi-scale gradient matching

/// Value, gradient, and derivatives with respect to `c_r` and `c_s`.
fn grad_match_full(
    pred: &Decomposition,
    gt_r: &LinearImage,
    gt_s: &LinearImage,
    scales: Scales,
    levels: usize,
) -> Result<(LossResult, [f64; 2])> {
    check_pair(gt_r, &pred.log_r, "reflectance")?;
    check_pair(gt_s, &pred.log_s, "shading")?;
    let mask = pred.mask().and(gt_r.mask())?.and(gt_s.mask())?;
    let mut out = LossResult::zero(pred);
    let mut dscale = [0.0; 2];
    let fields = [
        (pred.log_r.exp(), gt_r, scales.c_r),
        (pred.log_s.exp(), gt_s, scales.c_s),
    ];
    for (which, (lin, gt, c)) in fields.iter().enumerate() {
        let lin = lin.clone().with_mask(mask.clone())?;
        let gt = (*gt).clone().with_mask(mask.clone())?;
        let pp = build_pyramid(&lin, levels)?;
        let gp = build_pyramid(&gt, levels)?;
        let mut level_grads = Vec::with_capacity(pp.len());
        for (lp, lg) in pp.levels.iter().zip(&gp.levels) {
            let nl = lp.valid_count();
            let fp = gradients(lp);
            let fg = gradients(lg);
            let mut gx = vec![0.0; fp.dx.len()];
            let mut gy = vec![0.0; fp.dy.len()];
            if nl > 0 {
                let inv = 1.0 / nl as f64;
                let ch = fp.channels;
                for k in 0..fp.dx.len() {
                    if fp.dx_valid[k / ch] {
                        let d = fg.dx[k] - c * fp.dx[k];
                        out.value += d.abs() * inv;
                        let sg = sign(d);
                        gx[k] = -c * sg * inv;
                        dscale[which] -= fp.dx[k] * sg * inv;
                    }
                    if fp.dy_valid[k / ch] {
                        let d = fg.dy[k] - c * fp.dy[k];
                        out.value += d.abs() * inv;
                        let sg = sign(d);
                        gy[k] = -c * sg * inv;
                        dscale[which] -= fp.dy[k] * sg * inv;
                    }
                }
            }
            level_grads.push(gradients_adjoint(&fp, &gx, &gy));
        }
        let grad_lin = pyramid_adjoint(&pp, level_grads);
        let target = if which == 0 {
            &mut out.grad_log_r
        } else {
            &mut out.grad_log_s
        };
        for ((t, g), v) in target.iter_mut().zip(grad_lin).zip(lin.data()) {
            *t = g * v;
        }
    }
    out.scales = Some(scales);
    Ok((out, dscale))
}

/// Sign with a zero subgradient at exact ties.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Multi-scale L1 gradient matching with fixed scale factors.
pub fn grad_match(
    pred: &Decomposition,
    gt_r: &LinearImage,
    gt_s: &LinearImage,
    scales: Scales,
    levels: usize,
) -> Result<LossResult> {
    Ok(grad_match_full(pred, gt_r, gt_s, scales, levels)?.0)
}

// ---------------------------------------------------------------------------
// Ordinal reflectance

/// `log(mean_c exp(log_r_c))` at pixel `i` and its derivative per channel.
fn point_log_intensity(log_r: &LogImage, i: usize) -> (f64, Vec<f64>) {
    let px = log_r.pixel(i);
    let m = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = px.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    let value = m + (sum / px.len() as f64).ln();
    (value, e.into_iter().map(|v| v / sum).collect())
}

/// Squared-hinge ordinal loss summed over judgments; pairs touching an
/// invalid pixel are skipped.
pub fn ordinal_loss(pred: &Decomposition, judgments: &[OrdinalJudgment], margin: f64) -> LossResult {
    let mut out = LossResult::zero(pred);
    let log_r = &pred.log_r;
    let (w, ch) = (log_r.width(), log_r.channels());
    let mask = pred.mask();
    for j in judgments {
        if !j.i.in_bounds(w, log_r.height()) || !j.j.in_bounds(w, log_r.height()) {
            continue;
        }
        let (a, b) = (j.i.index(w), j.j.index(w));
        if !mask.at(a) || !mask.at(b) {
            continue;
        }
        let (la, da) = point_log_intensity(log_r, a);
        let (lb, db) = point_log_intensity(log_r, b);
        // residual r with loss w * r^2 and dr/dla = sa, dr/dlb = -sa
        let (r, sa) = match j.rel {
            Relation::Equal => (la - lb, 1.0),
            Relation::JDarker => ((margin - la + lb).max(0.0), -1.0),
            Relation::IDarker => ((margin - lb + la).max(0.0), 1.0),
        };
        if r == 0.0 {
            continue;
        }
        out.value += j.w * r * r;
        let g = 2.0 * j.w * r * sa;
        for c in 0..ch {
            out.grad_log_r[a * ch + c] += g * da[c];
            out.grad_log_r[b * ch + c] -= g * db[c];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Shading variance terms

/// Population variance of `log S - offset` over the valid pixels of a
/// region, averaged over shading channels.
fn region_variance(pred: &Decomposition, region: &[usize], offset: Option<&LogImage>) -> LossResult {
    let mut out = LossResult::zero(pred);
    let mask = pred.mask();
    let ch = pred.log_s.channels();
    let pixels: Vec<usize> = region
        .iter()
        .copied()
        .filter(|&i| mask.at(i) && offset.map_or(true, |o| o.mask().at(i)))
        .collect();
    let n = pixels.len();
    if n == 0 {
        return out;
    }
    let nf = n as f64;
    for c in 0..ch {
        let vals: Vec<f64> = pixels
            .iter()
            .map(|&i| pred.log_s.pixel(i)[c] - offset.map_or(0.0, |o| o.pixel(i)[0]))
            .collect();
        // shifting by the first sample keeps identical samples exactly zero
        let base = vals[0];
        let mean = vals.iter().map(|v| v - base).sum::<f64>() / nf;
        let var = vals.iter().map(|v| (v - base - mean).powi(2)).sum::<f64>() / nf;
        out.value += var / ch as f64;
        for (&i, v) in pixels.iter().zip(&vals) {
            out.grad_log_s[i * ch + c] += 2.0 * (v - base - mean) / nf / ch as f64;
        }
    }
    out
}

/// Variance of `log S` inside a constant-shading region.
pub fn constant_shading_loss(pred: &Decomposition, region: &[usize]) -> LossResult {
    region_variance(pred, region, None)
}

/// Variance of `log S - log I` inside a shadow-boundary region;
/// `log_intensity` is the single-channel log image intensity.
pub fn shadow_boundary_loss(
    pred: &Decomposition,
    log_intensity: &LogImage,
    region: &[usize],
) -> Result<LossResult> {
    pred.log_s.check_grid(log_intensity, "shading vs image")?;
    if log_intensity.channels() != 1 {
        return Err(invalid("log_intensity", "must have one channel"));
    }
    Ok(region_variance(pred, region, Some(log_intensity)))
}

// ---------------------------------------------------------------------------
// Reflectance smoothness

/// Neighbour offsets visited forward; each unordered 8-neighbour pair once.
const FORWARD: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (-1, 1)];

/// Per-level affinities `v` between each pixel and its forward neighbours,
/// computed from `[x, y, intensity, chroma_1, chroma_2]` image features.
#[derive(Clone, Debug)]
pub struct ReflectanceFeatures {
    masks: Vec<Mask>,
    dims: Vec<(usize, usize)>,
    weights: Vec<Vec<[f64; 4]>>,
    smoothing: f64,
}

impl ReflectanceFeatures {
    pub fn new(image: &LinearImage, levels: usize, sigmas: &FeatureSigmas) -> Result<Self> {
        sigmas.validate()?;
        let pyr = build_pyramid(image, levels)?;
        let mut masks = Vec::new();
        let mut dims = Vec::new();
        let mut weights = Vec::new();
        let inv_xy = 1.0 / (sigmas.sigma_xy * sigmas.sigma_xy);
        let inv_int = 1.0 / (sigmas.sigma_intensity * sigmas.sigma_intensity);
        let inv_ch = 1.0 / (sigmas.sigma_chroma * sigmas.sigma_chroma);
        for level in &pyr.levels {
            let (w, h) = (level.width(), level.height());
            let gray = intensity(level);
            let chroma = if level.channels() == 3 {
                Some(chromaticity(level)?)
            } else {
                None
            };
            let feat = |i: usize| -> [f64; 3] {
                let (c1, c2) = match &chroma {
                    Some(c) if c.mask().at(i) => (c.pixel(i)[0], c.pixel(i)[1]),
                    _ => (0.0, 0.0),
                };
                [gray.data()[i], c1, c2]
            };
            let mut lw = vec![[0.0; 4]; w * h];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let fi = feat(i);
                    for (d, &(ox, oy)) in FORWARD.iter().enumerate() {
                        let Some(j) = neighbour(w, h, x, y, ox, oy) else {
                            continue;
                        };
                        let fj = feat(j);
                        let dxy = (ox * ox + oy * oy) as f64;
                        let di = fi[0] - fj[0];
                        let dc = (fi[1] - fj[1]).powi(2) + (fi[2] - fj[2]).powi(2);
                        let m = dxy * inv_xy + di * di * inv_int + dc * inv_ch;
                        lw[i][d] = (-0.5 * m).exp();
                    }
                }
            }
            masks.push(level.mask().clone());
            dims.push((w, h));
            weights.push(lw);
        }
        Ok(Self {
            masks,
            dims,
            weights,
            smoothing: 0.0,
        })
    }

    pub fn levels(&self) -> usize {
        self.weights.len()
    }

    /// Copy whose loss replaces `|d|` by `sqrt(d^2 + eps^2) - eps`. Only
    /// the solver uses this, to pick search directions; `eps = 0` is the
    /// exact loss.
    pub fn smoothed(&self, eps: f64) -> Self {
        Self {
            smoothing: eps.max(0.0),
            ..self.clone()
        }
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Affinity between pixel `i` and its forward neighbour `d` at `level`.
    pub fn weight(&self, level: usize, i: usize, d: usize) -> f64 {
        self.weights[level][i][d]
    }
}

fn neighbour(w: usize, h: usize, x: usize, y: usize, ox: isize, oy: isize) -> Option<usize> {
    let nx = x as isize + ox;
    let ny = y as isize + oy;
    (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then(|| ny as usize * w + nx as usize)
}

/// `sum_l 1/(N_l l) sum_i sum_{j in N8(i)} v_lij |log R_li - log R_lj|_1`
/// over a box pyramid of `log R`.
pub fn reflectance_smoothness(pred: &Decomposition, features: &ReflectanceFeatures) -> Result<LossResult> {
    let mut out = LossResult::zero(pred);
    let (w0, h0) = features.dims[0];
    if pred.log_r.width() != w0 || pred.log_r.height() != h0 {
        return Err(Error::DimensionMismatch("features vs reflectance".into()));
    }
    let mask = pred.mask().and(&features.masks[0])?;
    let log_r = pred.log_r.clone().with_mask(mask)?;
    let pyr: Pyramid<_> = build_pyramid(&log_r, features.levels())?;
    let ch = log_r.channels();
    let eps = features.smoothing;
    let mut level_grads = Vec::with_capacity(pyr.len());
    for (l, level) in pyr.levels.iter().enumerate() {
        let (w, h) = (level.width(), level.height());
        let fmask = &features.masks[l];
        let valid = |i: usize| level.mask().at(i) && fmask.at(i);
        let nl = (0..w * h).filter(|&i| valid(i)).count();
        let mut g = vec![0.0; w * h * ch];
        if nl > 0 {
            // both ordered visits of every pair are counted
            let scale = 2.0 / (nl as f64 * (l + 1) as f64);
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if !valid(i) {
                        continue;
                    }
                    for (d, &(ox, oy)) in FORWARD.iter().enumerate() {
                        let Some(j) = neighbour(w, h, x, y, ox, oy) else {
                            continue;
                        };
                        if !valid(j) {
                            continue;
                        }
                        let v = features.weights[l][i][d] * scale;
                        for c in 0..ch {
                            let diff = level.data()[i * ch + c] - level.data()[j * ch + c];
                            let (abs, slope) = if eps > 0.0 {
                                let r = (diff * diff + eps * eps).sqrt();
                                (r - eps, diff / r)
                            } else {
                                (diff.abs(), sign(diff))
                            };
                            out.value += v * abs;
                            let sg = slope * v;
                            g[i * ch + c] += sg;
                            g[j * ch + c] -= sg;
                        }
                    }
                }
            }
        }
        level_grads.push(g);
    }
    out.grad_log_r = pyramid_adjoint(&pyr, level_grads);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Shading smoothness

/// Anything that applies a symmetric, row-stochastic `W_hat` to a vector
/// indexed by its participating pixels.
pub trait SmoothnessOperator {
    fn pixels(&self) -> &[usize];
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

impl SmoothnessOperator for BilateralOperator {
    fn pixels(&self) -> &[usize] {
        BilateralOperator::pixels(self)
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        BilateralOperator::apply(self, v)
    }
}

impl SmoothnessOperator for DenseOperator {
    fn pixels(&self) -> &[usize] {
        DenseOperator::pixels(self)
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        DenseOperator::apply(self, v)
    }
}

/// `(1/N) s^T (I - W_hat) s` per shading channel, summed; gradient
/// `(2/N) (I - W_hat) s`. Pixels outside the operator or invalid in the
/// prediction do not participate.
pub fn shading_smoothness(pred: &Decomposition, op: &dyn SmoothnessOperator) -> Result<LossResult> {
    let mut out = LossResult::zero(pred);
    let ch = pred.log_s.channels();
    let mask = pred.mask();
    let pixels = op.pixels();
    if let Some(&last) = pixels.last() {
        if last >= pred.log_s.pixel_count() {
            return Err(Error::DimensionMismatch("operator vs shading grid".into()));
        }
    }
    if pixels.iter().any(|&i| !mask.at(i)) {
        return Err(Error::DimensionMismatch(
            "operator covers pixels that are invalid in the prediction".into(),
        ));
    }
    let n = pixels.len();
    if n == 0 {
        return Ok(out);
    }
    for c in 0..ch {
        let s: Vec<f64> = pixels.iter().map(|&i| pred.log_s.data()[i * ch + c]).collect();
        let ws = op.apply(&s);
        for (k, &i) in pixels.iter().enumerate() {
            let r = s[k] - ws[k];
            out.value += s[k] * r / n as f64;
            out.grad_log_s[i * ch + c] = 2.0 * r / n as f64;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reconstruction

/// Mean over valid samples of `(I - R S)^2` in the linear domain.
pub fn reconstruction_loss(pred: &Decomposition, image: &LinearImage) -> Result<LossResult> {
    check_pair(image, &pred.log_r, "image vs reflectance")?;
    let cs = pred.log_s.channels();
    if cs != 1 && cs != image.channels() {
        return Err(Error::DimensionMismatch("shading channels".into()));
    }
    let mask = pred.mask().and(image.mask())?;
    let ch = image.channels();
    let n = mask.count() * ch;
    let mut out = LossResult::zero(pred);
    if n == 0 {
        return Ok(out);
    }
    let nf = n as f64;
    for i in mask.indices() {
        let lr = pred.log_r.pixel(i);
        let ls = pred.log_s.pixel(i);
        for c in 0..ch {
            let rs = (lr[c] + shading_channel(ls, c)).exp();
            let res = image.pixel(i)[c] - rs;
            out.value += res * res / nf;
            let g = -2.0 * res * rs / nf;
            out.grad_log_r[i * ch + c] += g;
            let sc = if cs == 1 { 0 } else { c };
            out.grad_log_s[i * cs + sc] += g;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Composites

/// One weighted term of a composite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermValue {
    pub name: String,
    pub weight: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub result: LossResult,
    pub terms: Vec<TermValue>,
}

impl Composite {
    fn new(pred: &Decomposition) -> Self {
        Self {
            result: LossResult::zero(pred),
            terms: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, weight: f64, part: &LossResult) {
        self.result.accumulate(part, weight);
        self.terms.push(TermValue {
            name: name.to_string(),
            weight,
            value: part.value,
        });
    }

    /// Folds `other` in with an outer weight; term names get `prefix.`.
    pub fn merge(&mut self, prefix: &str, weight: f64, other: &Composite) {
        self.result.accumulate(&other.result, weight);
        for t in &other.terms {
            self.terms.push(TermValue {
                name: format!("{prefix}.{}", t.name),
                weight: weight * t.weight,
                value: t.value,
            });
        }
    }

    /// `sum weight * value` over the breakdown.
    pub fn weighted_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.weight * t.value).sum()
    }
}

pub struct CgiInputs<'a> {
    pub image: &'a LinearImage,
    pub gt_reflectance: &'a LinearImage,
    pub gt_shading: &'a LinearImage,
    /// Judgments sampled from ground-truth reflectance.
    pub judgments: &'a [OrdinalJudgment],
}

/// `L_sup + lambda_ord L_ord + lambda_rec L_rec` with
/// `L_sup = L_siMSE + L_grad`. The gradient accounts for `c_r`, `c_s`
/// being fitted to the current prediction.
pub fn composite_cgi(pred: &Decomposition, inputs: &CgiInputs, weights: &LossWeights) -> Result<Composite> {
    let mut out = Composite::new(pred);
    let si = si_mse_parts(pred, inputs.gt_reflectance, inputs.gt_shading)?;
    let scales = si.result.scales.expect("si_mse sets scales");
    let (mut gm, dscale) = grad_match_full(
        pred,
        inputs.gt_reflectance,
        inputs.gt_shading,
        scales,
        weights.levels,
    )?;
    // chain rule through c = sum(gt * p) / sum(p^2):
    // dc/dlog p_k = (gt_k - 2 c p_k) p_k / sum(p^2)
    let fields = [
        (&pred.log_r, inputs.gt_reflectance, scales.c_r, si.denoms[0], dscale[0]),
        (&pred.log_s, inputs.gt_shading, scales.c_s, si.denoms[1], dscale[1]),
    ];
    for (which, (log_p, gt, c, den, dl_dc)) in fields.into_iter().enumerate() {
        let ch = gt.channels();
        let target = if which == 0 {
            &mut gm.grad_log_r
        } else {
            &mut gm.grad_log_s
        };
        for i in si.mask.indices() {
            for k in i * ch..(i + 1) * ch {
                let p = log_p.data()[k].exp();
                target[k] += dl_dc * (gt.data()[k] - 2.0 * c * p) * p / den;
            }
        }
    }
    out.add("si_mse", 1.0, &si.result);
    out.add("grad", 1.0, &gm);
    out.add("ord", weights.lambda_ord, &ordinal_loss(pred, inputs.judgments, weights.margin));
    out.add("rec", weights.lambda_rec, &reconstruction_loss(pred, inputs.image)?);
    out.result.scales = Some(scales);
    Ok(out)
}

pub struct IiwInputs<'a> {
    pub image: &'a LinearImage,
    pub judgments: &'a [OrdinalJudgment],
    pub features: &'a ReflectanceFeatures,
    pub smoothness: &'a dyn SmoothnessOperator,
}

/// `lambda_ord L_ord + lambda_rs L_rsmooth + lambda_ss L_ssmooth + L_rec`.
pub fn composite_iiw(pred: &Decomposition, inputs: &IiwInputs, weights: &LossWeights) -> Result<Composite> {
    let mut out = Composite::new(pred);
    out.add("ord", weights.lambda_ord, &ordinal_loss(pred, inputs.judgments, weights.margin));
    out.add("rsmooth", weights.lambda_rs, &reflectance_smoothness(pred, inputs.features)?);
    out.add("ssmooth", weights.lambda_ss, &shading_smoothness(pred, inputs.smoothness)?);
    out.add("rec", 1.0, &reconstruction_loss(pred, inputs.image)?);
    Ok(out)
}

pub struct SawInputs<'a> {
    pub image: &'a LinearImage,
    /// Single-channel `log(intensity(I))`.
    pub log_intensity: &'a LogImage,
    pub smooth_regions: &'a [Vec<usize>],
    /// Dilated shadow-boundary regions.
    pub shadow_regions: &'a [Vec<usize>],
    pub features: &'a ReflectanceFeatures,
    /// Operator built with dilated depth/normal discontinuities masked out.
    pub smoothness: &'a dyn SmoothnessOperator,
}

/// `lambda_sns L_S/NS + lambda_rs L_rsmooth + lambda_ss L_ssmooth + L_rec`,
/// where `L_S/NS` sums the constant-shading and shadow-boundary variances
/// of every region with equal weight.
pub fn composite_saw(pred: &Decomposition, inputs: &SawInputs, weights: &LossWeights) -> Result<Composite> {
    let mut out = Composite::new(pred);
    let mut sns = LossResult::zero(pred);
    for region in inputs.smooth_regions {
        sns.accumulate(&constant_shading_loss(pred, region), 1.0);
    }
    for region in inputs.shadow_regions {
        sns.accumulate(&shadow_boundary_loss(pred, inputs.log_intensity, region)?, 1.0);
    }
    out.add("sns", weights.lambda_sns, &sns);
    out.add("rsmooth", weights.lambda_rs, &reflectance_smoothness(pred, inputs.features)?);
    out.add("ssmooth", weights.lambda_ss, &shading_smoothness(pred, inputs.smoothness)?);
    out.add("rec", 1.0, &reconstruction_loss(pred, inputs.image)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::Point;

    fn decomp(log_r: LogImage, log_s: LogImage) -> Decomposition {
        Decomposition::new(log_r, log_s).unwrap()
    }

    fn gt_pair(w: usize, h: usize) -> (LinearImage, LinearImage) {
        let r = LinearImage::from_fn(w, h, 3, |x, y, c| 0.2 + 0.1 * ((x * 3 + y * 5 + c * 7) % 6) as f64);
        let s = LinearImage::from_fn(w, h, 1, |x, y, _| 0.5 + 0.05 * (x + y) as f64);
        (r, s)
    }

    #[test]
    fn si_mse_zero_at_truth() {
        let (r, s) = gt_pair(5, 4);
        let pred = decomp(r.to_log(), s.to_log());
        let res = si_mse(&pred, &r, &s).unwrap();
        let sc = res.scales.unwrap();
        assert!((sc.c_r - 1.0).abs() < 1e-12 && (sc.c_s - 1.0).abs() < 1e-12);
        assert!(res.value < 1e-24);
        assert!(res.grad_log_r.iter().chain(&res.grad_log_s).all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn si_mse_absorbs_scale() {
        let (r, s) = gt_pair(5, 4);
        let pred = decomp(r.scaled(2.0).to_log(), s.to_log());
        let res = si_mse(&pred, &r, &s).unwrap();
        assert!((res.scales.unwrap().c_r - 0.5).abs() < 1e-12);
        assert!(res.value < 1e-24);
    }

    #[test]
    fn grad_match_zero_at_truth_and_single_level() {
        let (r, s) = gt_pair(8, 8);
        let pred = decomp(r.to_log(), s.to_log());
        let one = Scales { c_r: 1.0, c_s: 1.0 };
        assert!(grad_match(&pred, &r, &s, one, 4).unwrap().value < 1e-12);

        let shifted = decomp(r.scaled(1.3).to_log(), s.to_log());
        let got = grad_match(&shifted, &r, &s, one, 1).unwrap().value;
        let (gr, pr) = (gradients(&r), gradients(&shifted.log_r.exp()));
        let mut want = 0.0;
        for k in 0..gr.dx.len() {
            want += (gr.dx[k] - pr.dx[k]).abs() + (gr.dy[k] - pr.dy[k]).abs();
        }
        assert!((got - want / 64.0).abs() < 1e-12);
    }

    #[test]
    fn ordinal_cases() {
        let log_r = LogImage::from_fn(2, 1, 1, |x, _, _| if x == 0 { 0.22 } else { 0.0 });
        let log_s = LogImage::filled(2, 1, 1, 0.0);
        let pred = decomp(log_r, log_s);
        let (a, b) = (Point::new(0, 0), Point::new(1, 0));
        let sat = OrdinalJudgment::new(a, b, Relation::JDarker, 1.0);
        assert_eq!(ordinal_loss(&pred, &[sat], 0.12).value, 0.0);

        let flat = decomp(LogImage::filled(2, 1, 1, 0.3), LogImage::filled(2, 1, 1, 0.0));
        let eq = OrdinalJudgment::new(a, b, Relation::Equal, 1.0);
        assert_eq!(ordinal_loss(&flat, &[eq], 0.12).value, 0.0);
        let hinge = OrdinalJudgment::new(a, b, Relation::JDarker, 2.0);
        assert!((ordinal_loss(&flat, &[hinge], 0.12).value - 0.0288).abs() < 1e-15);
    }

    #[test]
    fn variance_cases() {
        let log_s = LogImage::from_fn(2, 1, 1, |x, _, _| 2.0 * x as f64);
        let pred = decomp(LogImage::filled(2, 1, 3, 0.0), log_s);
        assert!((constant_shading_loss(&pred, &[0, 1]).value - 1.0).abs() < 1e-15);
        assert_eq!(constant_shading_loss(&pred, &[1]).value, 0.0);

        let log_i = LogImage::from_fn(2, 1, 1, |x, _, _| 2.0 * x as f64 - 0.25);
        assert_eq!(shadow_boundary_loss(&pred, &log_i, &[0, 1]).unwrap().value, 0.0);
        let log_i = LogImage::from_fn(2, 1, 1, |x, _, _| x as f64);
        assert!((shadow_boundary_loss(&pred, &log_i, &[0, 1]).unwrap().value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn two_pixel_reflectance_smoothness() {
        let image = LinearImage::filled(2, 1, 3, 0.5);
        let loose = FeatureSigmas {
            sigma_xy: f64::INFINITY,
            ..Default::default()
        };
        let feats = ReflectanceFeatures::new(&image, 1, &loose).unwrap();
        let log_r = LogImage::from_fn(2, 1, 1, |x, _, _| x as f64);
        let pred = decomp(log_r, LogImage::filled(2, 1, 1, 0.0));
        assert!((reflectance_smoothness(&pred, &feats).unwrap().value - 1.0).abs() < 1e-15);

        let feats = ReflectanceFeatures::new(&image, 1, &FeatureSigmas::default()).unwrap();
        let v = reflectance_smoothness(&pred, &feats).unwrap().value;
        assert!((v - (-0.5f64 / 100.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn dissimilar_chroma_decouples() {
        let image = LinearImage::from_fn(2, 1, 3, |x, _, c| if (x == 0) == (c == 0) { 0.9 } else { 0.05 });
        let feats = ReflectanceFeatures::new(&image, 1, &FeatureSigmas::default()).unwrap();
        let pred = decomp(
            LogImage::from_fn(2, 1, 3, |x, _, _| x as f64),
            LogImage::filled(2, 1, 1, 0.0),
        );
        assert!(reflectance_smoothness(&pred, &feats).unwrap().value < 1e-100);
    }

    #[test]
    fn reconstruction_cases() {
        let image = LinearImage::from_fn(3, 2, 1, |x, y, _| 0.2 + 0.1 * (x + y) as f64);
        let exact = decomp(image.to_log(), LogImage::filled(3, 2, 1, 0.0));
        assert!(reconstruction_loss(&exact, &image).unwrap().value < 1e-30);
        let shifted = LinearImage::from_fn(3, 2, 1, |x, y, _| 0.3 + 0.1 * (x + y) as f64);
        let off = decomp(shifted.to_log(), LogImage::filled(3, 2, 1, 0.0));
        assert!((reconstruction_loss(&off, &image).unwrap().value - 0.01).abs() < 1e-12);
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { lambda_rs: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { levels: 0, ..Default::default() }.validate().is_err());
    }
}
