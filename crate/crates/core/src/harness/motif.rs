use std::f64::consts::PI;

use crate::numerics::{Rng, Tensor};

/// Knobs of the procedural motif renderer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotifStyle {
    /// Amplitude of the class sprite texture.
    pub signal: f64,
    /// Contrast range of the drifting background grating.
    pub distractor: (f64, f64),
    /// Per-pixel Gaussian noise.
    pub noise: f64,
    /// Side of the sprite cell in pixels.
    pub cell: usize,
    /// Seeds the per-class sprite textures.
    pub sprite_seed: u64,
}

impl Default for MotifStyle {
    fn default() -> Self {
        Self {
            signal: 0.2,
            distractor: (0.1, 0.3),
            noise: 0.3,
            cell: 16,
            sprite_seed: 0x5eed_5b71,
        }
    }
}

/// The class sprite: a fixed ±1 texture of `3 × cell × cell` values.
fn sprite(seed: u64, class: usize, cell: usize) -> Vec<f64> {
    let mut rng = Rng::new(seed).fork(class as u64);
    (0..3 * cell * cell)
        .map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
        .collect()
}

/// Renders one `[T, 3, H, W]` segment for `class` out of `classes`.
///
/// The class motif is a fixed texture sprite, one cell in size, that hops
/// between grid cells along a class-specific trajectory (start cell and
/// stride). Behind it run a drifting grating of random orientation, a
/// random colour cast and brightness, and pixel noise; a faint
/// class-dependent brightness tilt rides on top. Values lie in `[-1, 1]`
/// like mean/std 0.5 normalized frames.
pub fn render_motif(
    class: usize,
    classes: usize,
    frames: usize,
    height: usize,
    width: usize,
    style: &MotifStyle,
    rng: &mut Rng,
) -> Tensor {
    let cell = style.cell.min(height).min(width).max(1);
    let (rows, cols) = (height / cell, width / cell);
    let cells = rows * cols;
    let texture = sprite(style.sprite_seed, class, cell);
    let start = class % cells;
    let stride = 1 + (class / cells) % cells.max(2).saturating_sub(1).max(1);
    let tilt = 0.05 * (class as f64 / (classes - 1).max(1) as f64 - 0.5);

    let k = 2.0 * PI / 8.0;
    let d_theta = rng.uniform_range(0.0, PI);
    let d_phase = rng.uniform_range(0.0, 2.0 * PI);
    let d_speed = rng.uniform_range(-PI / 2.0, PI / 2.0);
    let d_contrast = rng.uniform_range(style.distractor.0, style.distractor.1);
    let color: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(0.7, 1.0));
    let offset = 0.1 * rng.normal() + tilt;

    let mut data = Vec::with_capacity(frames * 3 * height * width);
    for t in 0..frames {
        let at = (start + stride * t) % cells;
        let (cy, cx) = ((at / cols) * cell, (at % cols) * cell);
        for (c, gain) in color.iter().enumerate() {
            for y in 0..height {
                for x in 0..width {
                    let (xf, yf) = (x as f64, y as f64);
                    let d = (k * (xf * d_theta.cos() + yf * d_theta.sin()) + d_phase + d_speed * t as f64).sin();
                    let mut v = offset + gain * d_contrast * d + style.noise * rng.normal();
                    if (cy..cy + cell).contains(&y) && (cx..cx + cell).contains(&x) {
                        v += gain * style.signal * texture[(c * cell + (y - cy)) * cell + (x - cx)];
                    }
                    data.push(v.clamp(-1.0, 1.0));
                }
            }
        }
    }
    Tensor::new(vec![frames, 3, height, width], data).expect("shape matches data")
}
