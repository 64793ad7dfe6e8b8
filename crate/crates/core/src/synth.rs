//! Synthetic scenes with known decompositions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::image::LinearImage;

/// Generated image with the reflectance and shading it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub image: LinearImage,
    pub reflectance: LinearImage,
    pub shading: LinearImage,
}

/// Piecewise-constant colored rectangles lit by a smooth diagonal ramp.
///
/// Reflectance channels lie in `[0.15, 0.9]`; shading rises linearly from
/// `shading_floor` at the top-left corner to 1 at the bottom-right.
pub fn mondrian(
    width: usize,
    height: usize,
    patches: usize,
    shading_floor: f64,
    seed: u64,
) -> Result<SyntheticScene> {
    if width < 2 || height < 2 {
        return Err(invalid("size", "need at least 2x2 pixels"));
    }
    if !(shading_floor > 0.0 && shading_floor <= 1.0) {
        return Err(invalid("shading_floor", "must lie in (0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background: [f64; 3] = [0; 3].map(|_| rng.gen_range(0.15..0.9));
    let mut patches_drawn = Vec::with_capacity(patches);
    for _ in 0..patches {
        let w = rng.gen_range(width / 6..=width / 2).max(1);
        let h = rng.gen_range(height / 6..=height / 2).max(1);
        let x0 = rng.gen_range(0..=width - w);
        let y0 = rng.gen_range(0..=height - h);
        let color: [f64; 3] = [0; 3].map(|_| rng.gen_range(0.15..0.9));
        patches_drawn.push(((x0, y0, x0 + w, y0 + h), color));
    }
    let reflectance = LinearImage::from_fn(width, height, 3, |x, y, c| {
        // later patches paint over earlier ones
        patches_drawn
            .iter()
            .rev()
            .find(|((x0, y0, x1, y1), _)| x >= *x0 && x < *x1 && y >= *y0 && y < *y1)
            .map_or(background[c], |(_, col)| col[c])
    });
    let shading = LinearImage::from_fn(width, height, 1, |x, y, _| {
        let u = x as f64 / (width - 1) as f64;
        let v = y as f64 / (height - 1) as f64;
        shading_floor + (1.0 - shading_floor) * (0.6 * u + 0.4 * v)
    });
    let image = LinearImage::from_fn(width, height, 3, |x, y, c| {
        reflectance.get(x, y, c) * shading.get(x, y, 0)
    });
    Ok(SyntheticScene {
        image,
        reflectance,
        shading,
    })
}
