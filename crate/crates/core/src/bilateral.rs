//! Bistochastic Gaussian smoothness operator on a spatial bilateral grid.
//!
//! The dense affinity `W_ij = exp(-|p_i - p_j|^2 / (2 sigma^2))` over valid
//! pixels is approximated by `S^T B S`: bilinear splatting onto a coarse 2-D
//! grid, three passes of a separable `[1, 2, 1] / 4` blur per axis, and
//! bilinear slicing back. A per-pixel normaliser `n` obtained by symmetric
//! Sinkhorn iterations makes `W_hat = diag(n) S^T B S diag(n)` symmetric and
//! row-stochastic to within a small residual, so
//! `(1/N) s^T (I - W_hat) s` matches `(1/2N) sum_ij W_hat_ij (s_i - s_j)^2`.

use crate::error::{invalid, Result};
use crate::image::Mask;

/// Number of `[1, 2, 1] / 4` passes per grid axis.
pub const BLUR_PASSES: usize = 3;

pub const DEFAULT_SINKHORN_ITERS: usize = 20;

/// Grid cell edge in units of `sigma`. Bilinear splat and slice contribute
/// a variance of 1/6 cell^2 each and every blur pass 1/2 cell^2; the cell is
/// sized so the total equals `sigma^2`.
pub fn cell_size(sigma: f64) -> f64 {
    sigma / (2.0 / 6.0 + BLUR_PASSES as f64 * 0.5).sqrt()
}

const GRID_PAD: usize = BLUR_PASSES + 1;

#[derive(Clone, Debug)]
pub struct BilateralOperator {
    width: usize,
    height: usize,
    sigma: f64,
    /// Valid pixel indices; position in this list is the vector index.
    pixels: Vec<usize>,
    grid_w: usize,
    grid_h: usize,
    /// Four (vertex, weight) taps per pixel.
    taps: Vec<[(usize, f64); 4]>,
    normalizer: Vec<f64>,
}

pub fn build_operator(
    width: usize,
    height: usize,
    mask: &Mask,
    sigma: f64,
    sinkhorn_iters: usize,
) -> Result<BilateralOperator> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma_p", "must be positive"));
    }
    if mask.width() != width || mask.height() != height {
        return Err(crate::error::Error::DimensionMismatch("operator mask".into()));
    }
    let cell = cell_size(sigma);
    let grid_w = ((width.max(1) - 1) as f64 / cell).ceil() as usize + 1 + 2 * GRID_PAD;
    let grid_h = ((height.max(1) - 1) as f64 / cell).ceil() as usize + 1 + 2 * GRID_PAD;
    let pixels = mask.indices();
    let taps = pixels
        .iter()
        .map(|&i| {
            let gx = (i % width) as f64 / cell + GRID_PAD as f64;
            let gy = (i / width) as f64 / cell + GRID_PAD as f64;
            let (x0, y0) = (gx.floor(), gy.floor());
            let (fx, fy) = (gx - x0, gy - y0);
            let (x0, y0) = (x0 as usize, y0 as usize);
            let v = |x: usize, y: usize| y * grid_w + x;
            [
                (v(x0, y0), (1.0 - fx) * (1.0 - fy)),
                (v(x0 + 1, y0), fx * (1.0 - fy)),
                (v(x0, y0 + 1), (1.0 - fx) * fy),
                (v(x0 + 1, y0 + 1), fx * fy),
            ]
        })
        .collect();
    let mut op = BilateralOperator {
        width,
        height,
        sigma,
        normalizer: vec![1.0; pixels.len()],
        pixels,
        grid_w,
        grid_h,
        taps,
    };
    op.normalizer = sinkhorn(|v| op.kernel(v), op.len(), sinkhorn_iters);
    Ok(op)
}

/// Symmetric Sinkhorn scaling `n <- sqrt(n / (K n))` starting from ones.
fn sinkhorn(kernel: impl Fn(&[f64]) -> Vec<f64>, n: usize, iters: usize) -> Vec<f64> {
    let mut scale = vec![1.0; n];
    for _ in 0..iters {
        let k = kernel(&scale);
        for (s, kv) in scale.iter_mut().zip(k) {
            *s = (*s / kv).sqrt();
        }
    }
    scale
}

impl BilateralOperator {
    /// Number of participating pixels.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn normalizer(&self) -> &[f64] {
        &self.normalizer
    }

    /// `S^T B S v` without normalisation.
    fn kernel(&self, v: &[f64]) -> Vec<f64> {
        let mut grid = vec![0.0; self.grid_w * self.grid_h];
        for (taps, &x) in self.taps.iter().zip(v) {
            for &(k, w) in taps {
                grid[k] += w * x;
            }
        }
        self.blur(&mut grid);
        self.taps
            .iter()
            .map(|taps| taps.iter().map(|&(k, w)| w * grid[k]).sum())
            .collect()
    }

    fn blur(&self, grid: &mut [f64]) {
        let (gw, gh) = (self.grid_w, self.grid_h);
        let mut tmp = vec![0.0; grid.len()];
        for _ in 0..BLUR_PASSES {
            for y in 0..gh {
                for x in 0..gw {
                    let c = grid[y * gw + x];
                    let l = if x > 0 { grid[y * gw + x - 1] } else { 0.0 };
                    let r = if x + 1 < gw { grid[y * gw + x + 1] } else { 0.0 };
                    tmp[y * gw + x] = 0.25 * l + 0.5 * c + 0.25 * r;
                }
            }
            for y in 0..gh {
                for x in 0..gw {
                    let c = tmp[y * gw + x];
                    let u = if y > 0 { tmp[(y - 1) * gw + x] } else { 0.0 };
                    let d = if y + 1 < gh { tmp[(y + 1) * gw + x] } else { 0.0 };
                    grid[y * gw + x] = 0.25 * u + 0.5 * c + 0.25 * d;
                }
            }
        }
    }

    /// `W_hat v` for a vector over participating pixels.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.len(), "vector length must match the operator");
        let scaled: Vec<f64> = v.iter().zip(&self.normalizer).map(|(a, n)| a * n).collect();
        self.kernel(&scaled)
            .into_iter()
            .zip(&self.normalizer)
            .map(|(a, n)| a * n)
            .collect()
    }

    /// `(1/N) s^T (I - W_hat) s`.
    pub fn quadratic(&self, s: &[f64]) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let ws = self.apply(s);
        s.iter().zip(&ws).map(|(a, b)| a * (a - b)).sum::<f64>() / self.len() as f64
    }

    /// `max_i |(W_hat 1)_i - 1|`.
    pub fn row_sum_residual(&self) -> f64 {
        self.apply(&vec![1.0; self.len()])
            .into_iter()
            .map(|v| (v - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Samples of one channel at participating pixels.
    pub fn gather(&self, data: &[f64], channels: usize, channel: usize) -> Vec<f64> {
        self.pixels.iter().map(|&i| data[i * channels + channel]).collect()
    }
}

/// Dense `W` over valid pixels, bistochastised by the same Sinkhorn
/// iteration. Row-major `N x N`, rows in valid-pixel order.
pub fn dense_bistochastic(
    width: usize,
    mask: &Mask,
    sigma: f64,
    sinkhorn_iters: usize,
) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma_p", "must be positive"));
    }
    let pixels = mask.indices();
    let n = pixels.len();
    let mut w = vec![0.0; n * n];
    for (a, &i) in pixels.iter().enumerate() {
        for (b, &j) in pixels.iter().enumerate() {
            let dx = (i % width) as f64 - (j % width) as f64;
            let dy = (i / width) as f64 - (j / width) as f64;
            w[a * n + b] = (-0.5 * (dx * dx + dy * dy) / (sigma * sigma)).exp();
        }
    }
    let dense = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|a| w[a * n..(a + 1) * n].iter().zip(v).map(|(x, y)| x * y).sum())
            .collect()
    };
    let scale = sinkhorn(dense, n, sinkhorn_iters);
    for a in 0..n {
        for b in 0..n {
            w[a * n + b] *= scale[a] * scale[b];
        }
    }
    Ok(w)
}

/// Dense counterpart of [`BilateralOperator`] for small grids.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    pixels: Vec<usize>,
    matrix: Vec<f64>,
}

impl DenseOperator {
    pub fn new(width: usize, mask: &Mask, sigma: f64, sinkhorn_iters: usize) -> Result<Self> {
        Ok(Self {
            pixels: mask.indices(),
            matrix: dense_bistochastic(width, mask, sigma, sinkhorn_iters)?,
        })
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.pixels.len();
        (0..n)
            .map(|a| self.matrix[a * n..(a + 1) * n].iter().zip(v).map(|(x, y)| x * y).sum())
            .collect()
    }
}

/// `(1/2N) sum_ij W_hat_ij (s_i - s_j)^2` with the dense bistochastic
/// `W_hat`; `s` is indexed by valid pixels. Meant for grids up to ~32x32.
pub fn brute_force_quadratic(
    width: usize,
    mask: &Mask,
    sigma: f64,
    sinkhorn_iters: usize,
    s: &[f64],
) -> Result<f64> {
    let n = s.len();
    if n != mask.count() {
        return Err(crate::error::Error::DimensionMismatch(
            "field length vs valid pixels".into(),
        ));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let w = dense_bistochastic(width, mask, sigma, sinkhorn_iters)?;
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            let d = s[a] - s[b];
            total += w[a * n + b] * d * d;
        }
    }
    Ok(total / (2.0 * n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect()
    }

    #[test]
    fn single_pixel_is_identity() {
        let op = build_operator(1, 1, &Mask::filled(1, 1, true), 4.0, 20).unwrap();
        assert!((op.apply(&[3.0])[0] - 3.0).abs() < 1e-12);
        assert!(op.quadratic(&[3.0]).abs() < 1e-12);
    }

    #[test]
    fn distant_pixels_do_not_couple() {
        let mut mask = Mask::filled(60, 1, false);
        mask.set(0, 0, true);
        mask.set(59, 0, true);
        let op = build_operator(60, 1, &mask, 2.0, 20).unwrap();
        let out = op.apply(&[1.0, 0.0]);
        assert!((out[0] - 1.0).abs() < 1e-9 && out[1].abs() < 1e-9);
    }

    #[test]
    fn rows_sum_to_one() {
        let op = build_operator(16, 16, &Mask::filled(16, 16, true), 4.0, 20).unwrap();
        assert!(op.row_sum_residual() <= 0.01);
    }

    #[test]
    fn apply_is_linear() {
        let op = build_operator(9, 7, &Mask::filled(9, 7, true), 2.0, 20).unwrap();
        let (u, v) = (field(63, 1), field(63, 2));
        let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 2.5 * a - 0.75 * b).collect();
        let (au, av, ac) = (op.apply(&u), op.apply(&v), op.apply(&combo));
        for k in 0..63 {
            assert!((ac[k] - (2.5 * au[k] - 0.75 * av[k])).abs() < 1e-10);
        }
    }

    #[test]
    fn masked_pixels_are_excluded() {
        let mut mask = Mask::filled(6, 6, true);
        mask.set(3, 3, false);
        let op = build_operator(6, 6, &mask, 2.0, 20).unwrap();
        assert_eq!(op.len(), 35);
        assert!(!op.pixels().contains(&(3 * 6 + 3)));
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(build_operator(4, 4, &Mask::filled(4, 4, true), 0.0, 20).is_err());
    }

    #[test]
    fn dense_constant_and_outlier() {
        let mask = Mask::filled(8, 8, true);
        assert_eq!(brute_force_quadratic(8, &mask, 2.0, 20, &[0.7; 64]).unwrap(), 0.0);
        let mut s = vec![0.0; 64];
        s[27] = 1.0;
        // only pairs involving the outlier contribute: (1/2N) * 2 * sum_{j != 27} W_hat[27][j]
        let w = dense_bistochastic(8, &mask, 2.0, 20).unwrap();
        let hand: f64 = (0..64).filter(|&j| j != 27).map(|j| w[27 * 64 + j]).sum::<f64>() / 64.0;
        let got = brute_force_quadratic(8, &mask, 2.0, 20, &s).unwrap();
        assert!((got - hand).abs() < 1e-15 && got > 0.0);
    }
}
