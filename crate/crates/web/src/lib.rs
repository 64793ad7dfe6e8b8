//! Browser demo: tone mapping, decomposition and superpixels on generated
//! Mondrian scenes. Every export returns RGBA bytes for an `ImageData`.

use intrinsic::annotations::{slic_superpixels, SlicParams};
use intrinsic::image::LinearImage;
use intrinsic::solver::{decompose, Annotations, SolveConfig};
use intrinsic::synth::{mondrian, SyntheticScene};
use intrinsic::tonemap::{tonemap, ToneMapParams};
use wasm_bindgen::prelude::*;

fn scene(size: usize, seed: u64) -> Result<SyntheticScene, JsError> {
    Ok(mondrian(size, size, 10, 0.4, seed)?)
}

/// Display bytes with a plain gamma; single-channel images become gray.
fn rgba(img: &LinearImage, gain: f64) -> Vec<u8> {
    let ch = img.channels();
    let mut out = Vec::with_capacity(img.pixel_count() * 4);
    for i in 0..img.pixel_count() {
        let px = img.pixel(i);
        for c in 0..3 {
            let v = (gain * px[c.min(ch - 1)]).clamp(0.0, 1.0).powf(1.0 / 2.2);
            out.push((v * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

/// Tone-maps an HDR version of the scene: shading is raised to `contrast`
/// so the dynamic range spans several stops.
#[wasm_bindgen]
pub fn tonemap_scene(size: usize, seed: u64, contrast: f64, gamma: f64, percentile: f64) -> Result<Vec<u8>, JsError> {
    let s = scene(size, seed)?;
    let hdr = LinearImage::from_fn(size, size, 3, |x, y, c| {
        s.reflectance.get(x, y, c) * s.shading.get(x, y, 0).powf(contrast) * 100.0
    });
    let params = ToneMapParams {
        gamma,
        percentile,
        ..Default::default()
    };
    let out = tonemap(&hdr, &params)?;
    // tone mapping already applied the display gamma
    Ok(out
        .image
        .data()
        .chunks_exact(3)
        .flat_map(|px| [px[0], px[1], px[2], 1.0].map(|v| (v * 255.0).round() as u8))
        .collect())
}

/// Input, reflectance and shading side by side (`3 * size` wide).
#[wasm_bindgen]
pub fn decompose_scene(size: usize, seed: u64, iterations: usize, lambda_ss: f64) -> Result<Vec<u8>, JsError> {
    let s = scene(size, seed)?;
    let mut cfg = SolveConfig {
        max_iters: iterations,
        sigma_p: 4.0,
        ..Default::default()
    };
    cfg.weights.lambda_ss = lambda_ss;
    let (pred, _) = decompose(&s.image, &cfg, &Annotations::default())?;
    let r = pred.log_r.exp();
    let sh = pred.log_s.exp();
    // normalise each layer so its brightest sample is white
    let peak = |img: &LinearImage| img.data().iter().fold(1e-12f64, |m, &v| m.max(v));
    let panels = [rgba(&s.image, 1.0), rgba(&r, 1.0 / peak(&r)), rgba(&sh, 1.0 / peak(&sh))];
    let mut out = Vec::with_capacity(size * size * 12);
    for y in 0..size {
        for p in &panels {
            out.extend_from_slice(&p[y * size * 4..(y + 1) * size * 4]);
        }
    }
    Ok(out)
}

/// The scene with superpixel boundaries drawn in white.
#[wasm_bindgen]
pub fn superpixel_overlay(size: usize, seed: u64, k: usize, compactness: f64) -> Result<Vec<u8>, JsError> {
    let s = scene(size, seed)?;
    let params = SlicParams {
        k,
        compactness,
        ..Default::default()
    };
    let labels = slic_superpixels(&s.image, &params)?;
    let mut out = rgba(&s.image, 1.0);
    let l = |x: usize, y: usize| labels.labels[y * size + x];
    for y in 0..size {
        for x in 0..size {
            let edge = (x + 1 < size && l(x, y) != l(x + 1, y)) || (y + 1 < size && l(x, y) != l(x, y + 1));
            if edge {
                out[(y * size + x) * 4..][..3].fill(255);
            }
        }
    }
    Ok(out)
}
