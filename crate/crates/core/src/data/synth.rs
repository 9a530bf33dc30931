//! Synthetic stand-in for colonoscopy frames: a smooth, slightly textured
//! reddish background with one to three low-contrast ovoid blobs whose
//! boundaries are perturbed by a few angular harmonics.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImageSample;
use crate::error::{Error, Result};
use crate::postprocess::{label_components, BinaryMask, REFERENCE_SIDE};
use crate::tensor::{Shape, Tensor};

/// Smallest blob area at 384x384; scaled with image area like the
/// post-processing threshold.
const MIN_BLOB_AREA: f64 = 150.0;

/// One blob. Its interior is the set of points `p` with
/// `rho(p) <= 1 + sum_k amp_k * cos(k * phi(p) + phase_k)`, where `rho` and
/// `phi` are polar coordinates of `p` in the frame of the ellipse.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axis along the rotated x direction.
    pub a: f64,
    pub b: f64,
    /// Ellipse orientation in radians.
    pub angle: f64,
    /// `(k, amp, phase)`.
    pub harmonics: Vec<(u32, f64, f64)>,
}

impl Blob {
    /// Tests the point `(x, y)` in continuous pixel coordinates.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.a;
        let v = (-s * dx + c * dy) / self.b;
        let rho = u.hypot(v);
        let phi = v.atan2(u);
        let bound: f64 = 1.0
            + self
                .harmonics
                .iter()
                .map(|&(k, amp, ph)| amp * (k as f64 * phi + ph).cos())
                .sum::<f64>();
        rho <= bound
    }

    /// Pixel `(y, x)` is inside when its centre is.
    pub fn rasterize(&self, h: usize, w: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| self.contains(x as f64 + 0.5, y as f64 + 0.5))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub sample: ImageSample,
    pub blobs: Vec<Blob>,
}

fn union_mask(blobs: &[Blob], h: usize, w: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, |y, x| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        blobs.iter().any(|b| b.contains(px, py))
    })
}

fn random_blob(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Blob {
    let side = h.min(w) as f64;
    let a = side * rng.random_range(0.12..0.24);
    let b = a * rng.random_range(0.6..1.0);
    let margin = 0.5 * b;
    let harmonics = (0..2)
        .map(|_| {
            (
                rng.random_range(2..=5u32),
                rng.random_range(0.0..0.1),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    Blob {
        cx: rng.random_range(margin..w as f64 - margin),
        cy: rng.random_range(margin..h as f64 - margin),
        a,
        b,
        angle: rng.random_range(0.0..PI),
        harmonics,
    }
}

fn render(rng: &mut ChaCha8Rng, mask: &BinaryMask, blobs: &[Blob]) -> Tensor {
    let (h, w) = mask.dims();
    let base = [0.70, 0.42, 0.36].map(|c: f64| c + rng.random_range(-0.05..0.05));
    let tint = [0.10, 0.04, 0.02].map(|c: f64| c * rng.random_range(0.8..1.2));
    // three low-frequency waves for the mucosa texture
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let th = rng.random_range(0.0..PI);
            let f = rng.random_range(1.0..4.0) * 2.0 * PI / h.max(w) as f64;
            (f * th.cos(), f * th.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(0.02..0.05))
        })
        .collect();
    let mut img = Tensor::zeros(Shape::new(1, 3, h, w));
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let tex: f64 = waves.iter().map(|&(fx, fy, ph, amp)| amp * (fx * px + fy * py + ph).sin()).sum();
            // brighter towards the blob centre, like a lit dome
            let dome = blobs
                .iter()
                .filter(|b| b.contains(px, py))
                .map(|b| {
                    let r = ((px - b.cx) / b.a).hypot((py - b.cy) / b.b).min(1.0);
                    0.06 * (1.0 - r * r)
                })
                .fold(0.0, f64::max);
            let inside = mask.get(y, x);
            for c in 0..3 {
                let noise = rng.random_range(-0.02..0.02);
                let mut v = base[c] + tex + noise;
                if inside {
                    v += tint[c] + dome;
                }
                let i = img.index(0, c, y, x);
                img.data_mut()[i] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    img
}

/// `n` scenes of size `h x w`. Scene `i` draws from its own random stream,
/// so a scene does not depend on how many others are generated.
pub fn gen_synthetic_scenes(n: usize, (h, w): (usize, usize), seed: u64) -> Result<Vec<SyntheticScene>> {
    if n == 0 {
        return Err(Error::InvalidArgument("synthetic dataset needs at least one image".into()));
    }
    if h < 16 || w < 16 {
        return Err(Error::InvalidArgument(format!("synthetic images must be at least 16x16, got {h}x{w}")));
    }
    let min_area = (MIN_BLOB_AREA * (h * w) as f64 / (REFERENCE_SIDE * REFERENCE_SIDE) as f64).ceil() as usize;
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (blobs, mask) = loop {
                let count = rng.random_range(1..=3);
                let blobs: Vec<Blob> = (0..count).map(|_| random_blob(&mut rng, h, w)).collect();
                let mask = union_mask(&blobs, h, w);
                let ok = blobs.iter().all(|b| b.rasterize(h, w).count() >= min_area)
                    && label_components(&mask).iter().all(|c| c.area >= min_area);
                if ok {
                    break (blobs, mask);
                }
            };
            let image = render(&mut rng, &mask, &blobs);
            Ok(SyntheticScene {
                sample: ImageSample::new(format!("synth_{i:04}"), image, mask)?,
                blobs,
            })
        })
        .collect()
}

pub fn gen_synthetic(n: usize, size: (usize, usize), seed: u64) -> Result<Vec<ImageSample>> {
    Ok(gen_synthetic_scenes(n, size, seed)?.into_iter().map(|s| s.sample).collect())
}
