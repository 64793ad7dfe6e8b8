//! Image containers, validity masks, box pyramids and finite differences.
//!
//! Samples are stored as `f64`, interleaved per pixel, rows top to bottom.
//! Every image carries a per-pixel validity mask; invalid pixels hold `0.0`
//! by convention and are ignored by every loss and metric.

use std::marker::PhantomData;

use crate::error::{invalid, Error, Result};

/// Floor applied before taking logarithms of linear samples.
pub const LOG_EPS: f64 = 1e-6;

/// Smallest side length that may still be halved by [`build_pyramid`].
pub const PYRAMID_MIN_SIDE: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Linear;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Log;

/// Per-pixel boolean mask on a `width x height` grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} entries for a {width}x{height} grid",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn at(&self, index: usize) -> bool {
        self.bits[index]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn set_index(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.check_same_grid(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        Ok(Mask { width: self.width, height: self.height, bits })
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.check_same_grid(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Ok(Mask { width: self.width, height: self.height, bits })
    }

    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        self.check_same_grid(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && !*b).collect();
        Ok(Mask { width: self.width, height: self.height, bits })
    }

    /// Row-major indices of set pixels.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    fn check_same_grid(&self, other: &Mask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Multi-channel image in domain `D` ([`Linear`] or [`Log`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Image<D> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    mask: Mask,
    _domain: PhantomData<D>,
}

pub type LinearImage = Image<Linear>;
pub type LogImage = Image<Log>;

impl<D> Image<D> {
    /// Builds an image without domain validation; sample counts are still checked.
    fn from_parts(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
        mask: Mask,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(invalid("channels", "must be at least 1"));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        if mask.width != width || mask.height != height {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} for image {width}x{height}",
                mask.width, mask.height
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            mask,
            _domain: PhantomData,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
            mask: Mask::filled(width, height, true),
            _domain: PhantomData,
        }
    }

    /// Fully valid image with samples `f(x, y, channel)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
            mask: Mask::filled(width, height, true),
            _domain: PhantomData,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn valid_count(&self) -> usize {
        self.mask.count()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask.get(x, y)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Samples of pixel `index` (row-major).
    #[inline]
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn same_grid<E>(&self, other: &Image<E>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_grid<E>(&self, other: &Image<E>, what: &str) -> Result<()> {
        if !self.same_grid(other) {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Replaces the mask; samples of newly invalid pixels are zeroed.
    pub fn with_mask(mut self, mask: Mask) -> Result<Self> {
        if mask.width != self.width || mask.height != self.height {
            return Err(Error::DimensionMismatch("mask grid".into()));
        }
        for (i, valid) in mask.bits.iter().enumerate() {
            if !valid {
                for c in 0..self.channels {
                    self.data[i * self.channels + c] = 0.0;
                }
            }
        }
        self.mask = mask;
        Ok(self)
    }

    fn map_samples<E>(&self, f: impl Fn(f64) -> f64) -> Image<E> {
        let mut data = Vec::with_capacity(self.data.len());
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            let valid = self.mask.at(i);
            data.extend(px.iter().map(|&v| if valid { f(v) } else { 0.0 }));
        }
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
            mask: self.mask.clone(),
            _domain: PhantomData,
        }
    }
}

impl LinearImage {
    /// Validated constructor: valid samples must be finite and non-negative.
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
        mask: Mask,
    ) -> Result<Self> {
        let img = Self::from_parts(width, height, channels, data, mask)?;
        for (i, px) in img.data.chunks_exact(channels).enumerate() {
            if img.mask.at(i) && px.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(invalid(
                    "data",
                    format!("pixel {i} has a negative or non-finite sample"),
                ));
            }
        }
        Ok(img.with_mask_zeroing())
    }

    /// Natural log with the `LOG_EPS` floor.
    pub fn to_log(&self) -> LogImage {
        self.map_samples(|v| v.max(LOG_EPS).ln())
    }

    /// Multiplies valid samples by `factor`.
    pub fn scaled(&self, factor: f64) -> LinearImage {
        self.map_samples(|v| v * factor)
    }

    fn with_mask_zeroing(self) -> Self {
        let mask = self.mask.clone();
        self.with_mask(mask).expect("mask shares the grid")
    }
}

impl LogImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
        mask: Mask,
    ) -> Result<Self> {
        let img = Self::from_parts(width, height, channels, data, mask)?;
        for (i, px) in img.data.chunks_exact(channels).enumerate() {
            if img.mask.at(i) && px.iter().any(|v| !v.is_finite()) {
                return Err(invalid("data", format!("pixel {i} is not finite")));
            }
        }
        let mask = img.mask.clone();
        img.with_mask(mask)
    }

    pub fn exp(&self) -> LinearImage {
        self.map_samples(f64::exp)
    }
}

/// Reflectance and shading in the log domain on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub log_r: LogImage,
    pub log_s: LogImage,
}

impl Decomposition {
    pub fn new(log_r: LogImage, log_s: LogImage) -> Result<Self> {
        log_r.check_grid(&log_s, "reflectance vs shading")?;
        Ok(Self { log_r, log_s })
    }

    /// Pixels valid in both fields.
    pub fn mask(&self) -> Mask {
        self.log_r
            .mask()
            .and(self.log_s.mask())
            .expect("fields share a grid")
    }
}

/// Levels of a 2x2 box pyramid; `levels[0]` is the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid<D> {
    pub levels: Vec<Image<D>>,
}

impl<D> Pyramid<D> {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Valid pixel count per level.
    pub fn valid_counts(&self) -> Vec<usize> {
        self.levels.iter().map(Image::valid_count).collect()
    }
}

/// Builds up to `max_levels` levels. A level is halved only while both of
/// its sides are at least [`PYRAMID_MIN_SIDE`].
pub fn build_pyramid<D: Clone>(img: &Image<D>, max_levels: usize) -> Result<Pyramid<D>> {
    if img.is_empty() {
        return Err(Error::EmptyInput);
    }
    if max_levels == 0 {
        return Err(invalid("max_levels", "must be at least 1"));
    }
    let mut levels = vec![img.clone()];
    while levels.len() < max_levels {
        let last = levels.last().expect("non-empty");
        if last.width < PYRAMID_MIN_SIDE || last.height < PYRAMID_MIN_SIDE {
            break;
        }
        levels.push(downsample(last));
    }
    Ok(Pyramid { levels })
}

/// 2x2 average over valid source pixels; output valid iff any source is.
pub fn downsample<D>(img: &Image<D>) -> Image<D> {
    let (w, h, ch) = (img.width / 2, img.height / 2, img.channels);
    let mut data = vec![0.0; w * h * ch];
    let mut mask = Mask::filled(w, h, false);
    let mut acc = vec![0.0; ch];
    for y in 0..h {
        for x in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut n = 0usize;
            for (sx, sy) in [(2 * x, 2 * y), (2 * x + 1, 2 * y), (2 * x, 2 * y + 1), (2 * x + 1, 2 * y + 1)] {
                if img.is_valid(sx, sy) {
                    n += 1;
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += img.get(sx, sy, c);
                    }
                }
            }
            if n > 0 {
                mask.set(x, y, true);
                let o = (y * w + x) * ch;
                for c in 0..ch {
                    data[o + c] = acc[c] / n as f64;
                }
            }
        }
    }
    Image {
        width: w,
        height: h,
        channels: ch,
        data,
        mask,
        _domain: PhantomData,
    }
}

/// Transpose of [`downsample`]: spreads coarse gradients over the valid
/// source pixels of `fine_mask`.
pub(crate) fn downsample_adjoint(coarse: &[f64], fine_mask: &Mask, channels: usize) -> Vec<f64> {
    let (fw, fh) = (fine_mask.width, fine_mask.height);
    let (w, h) = (fw / 2, fh / 2);
    let mut fine = vec![0.0; fw * fh * channels];
    for y in 0..h {
        for x in 0..w {
            let srcs = [(2 * x, 2 * y), (2 * x + 1, 2 * y), (2 * x, 2 * y + 1), (2 * x + 1, 2 * y + 1)];
            let n = srcs.iter().filter(|&&(sx, sy)| fine_mask.get(sx, sy)).count();
            if n == 0 {
                continue;
            }
            let o = (y * w + x) * channels;
            for (sx, sy) in srcs {
                if fine_mask.get(sx, sy) {
                    let f = (sy * fw + sx) * channels;
                    for c in 0..channels {
                        fine[f + c] += coarse[o + c] / n as f64;
                    }
                }
            }
        }
    }
    fine
}

/// Pulls a gradient defined on every pyramid level back to level 0.
pub(crate) fn pyramid_adjoint<D>(pyr: &Pyramid<D>, mut level_grads: Vec<Vec<f64>>) -> Vec<f64> {
    let ch = pyr.levels[0].channels;
    for l in (1..level_grads.len()).rev() {
        let pulled = downsample_adjoint(&level_grads[l], &pyr.levels[l - 1].mask, ch);
        for (g, p) in level_grads[l - 1].iter_mut().zip(pulled) {
            *g += p;
        }
    }
    level_grads.swap_remove(0)
}

/// Forward differences. `dx` is zero on the last column and `dy` on the last
/// row; a sample is valid iff every pixel it touches is valid.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub dx_valid: Vec<bool>,
    pub dy_valid: Vec<bool>,
}

pub fn gradients<D>(img: &Image<D>) -> GradientField {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut dx = vec![0.0; w * h * ch];
    let mut dy = vec![0.0; w * h * ch];
    let mut dx_valid = vec![false; w * h];
    let mut dy_valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let here = img.is_valid(x, y);
            dx_valid[i] = here && (x + 1 == w || img.is_valid(x + 1, y));
            dy_valid[i] = here && (y + 1 == h || img.is_valid(x, y + 1));
            for c in 0..ch {
                if dx_valid[i] && x + 1 < w {
                    dx[i * ch + c] = img.get(x + 1, y, c) - img.get(x, y, c);
                }
                if dy_valid[i] && y + 1 < h {
                    dy[i * ch + c] = img.get(x, y + 1, c) - img.get(x, y, c);
                }
            }
        }
    }
    GradientField {
        width: w,
        height: h,
        channels: ch,
        dx,
        dy,
        dx_valid,
        dy_valid,
    }
}

/// Transpose of [`gradients`] applied to upstream derivatives `gx`, `gy`.
pub(crate) fn gradients_adjoint(field: &GradientField, gx: &[f64], gy: &[f64]) -> Vec<f64> {
    let (w, h, ch) = (field.width, field.height, field.channels);
    let mut out = vec![0.0; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for c in 0..ch {
                let k = i * ch + c;
                if field.dx_valid[i] && x + 1 < w {
                    out[k] -= gx[k];
                    out[k + ch] += gx[k];
                }
                if field.dy_valid[i] && y + 1 < h {
                    out[k] -= gy[k];
                    out[(i + w) * ch + c] += gy[k];
                }
            }
        }
    }
    out
}

/// Channel mean per pixel.
pub fn intensity(img: &LinearImage) -> LinearImage {
    let ch = img.channels as f64;
    let data = img
        .data
        .chunks_exact(img.channels)
        .map(|px| px.iter().sum::<f64>() / ch)
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
        mask: img.mask.clone(),
        _domain: PhantomData,
    }
}

/// Channel sums below this are treated as black by [`chromaticity`].
pub const CHROMA_MIN_SUM: f64 = 1e-6;

/// `(R, G) / (R + G + B)` as a two-channel image.
pub fn chromaticity(img: &LinearImage) -> Result<LinearImage> {
    if img.channels != 3 {
        return Err(invalid("channels", "chromaticity needs an RGB image"));
    }
    let mut data = Vec::with_capacity(img.pixel_count() * 2);
    let mut mask = img.mask.clone();
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        let sum = px[0] + px[1] + px[2];
        if mask.at(i) && sum >= CHROMA_MIN_SUM {
            data.push(px[0] / sum);
            data.push(px[1] / sum);
        } else {
            mask.set_index(i, false);
            data.push(0.0);
            data.push(0.0);
        }
    }
    Ok(Image {
        width: img.width,
        height: img.height,
        channels: 2,
        data,
        mask,
        _domain: PhantomData,
    })
}
