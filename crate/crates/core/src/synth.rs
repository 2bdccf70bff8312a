//! Synthetic test images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Image, Shape, Tensor};

/// Uniform image of intensity `v` (clamped to `[0, 1]`).
pub fn constant(h: usize, w: usize, v: f64) -> Image {
    Image::new(Tensor::filled(Shape::new(1, h, w), v.clamp(0.0, 1.0))).expect("value in range")
}

/// Random axis-aligned rectangles painted over a random background.
pub fn piecewise_constant(h: usize, w: usize, rects: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::filled(Shape::new(1, h, w), rng.random_range(0.1..0.9));
    for _ in 0..rects {
        let (rh, rw) = (rng.random_range(h / 8 + 1..=h / 2 + 1), rng.random_range(w / 8 + 1..=w / 2 + 1));
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let v = rng.random_range(0.0..1.0);
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                t[(0, y, x)] = v;
            }
        }
    }
    Image::new(t).expect("values in range")
}

/// Piecewise-constant shapes over a smooth ramp, with discs as well as
/// rectangles; a little richer than [`piecewise_constant`] for training.
pub fn scene(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, c) = (
        rng.random_range(0.2..0.8),
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
    );
    let mut t = Tensor::from_fn(Shape::new(1, h, w), |_, y, x| {
        a + b * (y as f64 / h as f64 - 0.5) + c * (x as f64 / w as f64 - 0.5)
    });
    for _ in 0..rng.random_range(3..8) {
        let v = rng.random_range(0.0..1.0);
        let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let r = rng.random_range(2.0..(h.min(w) as f64 / 3.0).max(3.0));
        let disc = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let inside = if disc { dy * dy + dx * dx <= r * r } else { dy.abs() <= r && dx.abs() <= r * 0.7 };
                if inside {
                    t[(0, y, x)] = v;
                }
            }
        }
    }
    Image::from_clamped(&t).expect("clamped")
}
