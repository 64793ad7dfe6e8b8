mod common;

use intrinsic::bilateral::{brute_force_quadratic, build_operator};
use intrinsic::image::Mask;
use rand::Rng;

#[test]
fn factored_quadratic_tracks_dense_oracle() {
    let mut rng = common::rng(5);
    for &n in &[16usize, 32] {
        for &sigma in &[2.0, 4.0, 8.0] {
            let mask = Mask::filled(n, n, true);
            let op = build_operator(n, n, &mask, sigma, 20).unwrap();
            let mut worst: f64 = 0.0;
            for _ in 0..3 {
                let s: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let fast = op.quadratic(&s);
                let dense = brute_force_quadratic(n, &mask, sigma, 20, &s).unwrap();
                worst = worst.max((fast - dense).abs() / dense);
            }
            println!("n={n} sigma={sigma} worst={worst:.5} residual={:.5}", op.row_sum_residual());
            assert!(worst <= 0.02, "n={n} sigma={sigma}: {worst}");
        }
    }
}
