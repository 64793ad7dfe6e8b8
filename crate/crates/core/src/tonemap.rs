//! Percentile-anchored gamma tone mapping of linear HDR radiance.
//!
//! The reference intensity `r_p` is the nearest-rank-low percentile of the
//! per-pixel channel mean over valid pixels, and every sample maps to
//! `clip(anchor * (x / r_p)^gamma, 0, 1)`, i.e. `alpha * x^gamma` with
//! `alpha = anchor / r_p^gamma`.
//!
//! Ratios `x / r_p` are evaluated exactly and rounded once, so the output is
//! a function of sample ratios alone: scaling the input by any constant
//! leaves it bit-identical.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exact::Dyadic;
use crate::image::LinearImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToneMapParams {
    pub gamma: f64,
    pub percentile: f64,
    pub anchor: f64,
}

impl Default for ToneMapParams {
    fn default() -> Self {
        Self {
            gamma: 1.0 / 2.2,
            percentile: 0.90,
            anchor: 0.8,
        }
    }
}

impl ToneMapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", "must be positive"));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(invalid("percentile", "must lie in (0, 1)"));
        }
        if !(self.anchor > 0.0 && self.anchor <= 1.0) {
            return Err(invalid("anchor", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToneMapped {
    pub image: LinearImage,
    /// Percentile intensity `r_p`.
    pub reference: f64,
    /// `anchor / r_p^gamma`.
    pub alpha: f64,
    /// Fraction of valid pixels whose intensity maps to >= 1 before clipping.
    pub saturated_fraction: f64,
}

pub fn tonemap(hdr: &LinearImage, params: &ToneMapParams) -> Result<ToneMapped> {
    params.validate()?;
    let ch = hdr.channels();
    let valid: Vec<usize> = hdr.mask().indices();
    let approx: Vec<f64> = valid.iter().map(|&i| hdr.pixel(i).iter().sum()).collect();
    if !approx.iter().any(|&s| s > 0.0) {
        return Err(Error::DegenerateRadiance);
    }

    let rank = (params.percentile * (valid.len() - 1) as f64).floor() as usize;
    let ref_sum = percentile_sum(hdr, &valid, &approx, rank);
    if ref_sum.is_zero() {
        // the percentile pixel is black; no finite alpha exists
        return Err(Error::DegenerateRadiance);
    }

    let reference = ref_sum.ratio_f64(&Dyadic::from_f64(ch as f64));
    let alpha = params.anchor / reference.powf(params.gamma);
    let ch_factor = ch as u32;

    let mut data = vec![0.0; hdr.data().len()];
    let mut saturated = 0usize;
    for &i in &valid {
        let px = hdr.pixel(i);
        let ratio = Dyadic::sum(px).ratio_f64(&ref_sum);
        if params.anchor * ratio.powf(params.gamma) >= 1.0 {
            saturated += 1;
        }
        for (c, &x) in px.iter().enumerate() {
            let r = Dyadic::from_f64(x).mul_small(ch_factor).ratio_f64(&ref_sum);
            data[i * ch + c] = (params.anchor * r.powf(params.gamma)).clamp(0.0, 1.0);
        }
    }
    let image = LinearImage::new(hdr.width(), hdr.height(), ch, data, hdr.mask().clone())?;
    Ok(ToneMapped {
        image,
        reference,
        alpha,
        saturated_fraction: saturated as f64 / valid.len() as f64,
    })
}

/// Exact channel sum of the pixel at sorted position `rank`.
///
/// Pixels are ordered by their floating-point sums first; only the pixels
/// whose rounded sums are indistinguishable from the pivot are re-ranked
/// with exact arithmetic.
fn percentile_sum(hdr: &LinearImage, valid: &[usize], approx: &[f64], rank: usize) -> Dyadic {
    let mut sorted: Vec<f64> = approx.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pivot = sorted[rank];
    let tol = pivot.abs() * 1e-12;
    let below = approx.iter().filter(|&&a| a < pivot - tol).count();
    let mut candidates: Vec<Dyadic> = valid
        .iter()
        .zip(approx)
        .filter(|(_, &a)| (a - pivot).abs() <= tol)
        .map(|(&i, _)| Dyadic::sum(hdr.pixel(i)))
        .collect();
    candidates.sort_by(|a, b| a.exact_cmp(b));
    let pick = rank - below;
    debug_assert!(pick < candidates.len());
    candidates.swap_remove(pick.min(candidates.len() - 1))
}

/// Sorted-rank comparison helper exposed for tests of the percentile rule.
pub fn nearest_rank_low(values: &[f64], percentile: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Some(v[(percentile * (v.len() - 1) as f64).floor() as usize])
}
