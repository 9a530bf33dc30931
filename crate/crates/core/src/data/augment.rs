use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImageSample;
use crate::error::{Error, Result};
use crate::postprocess::BinaryMask;
use crate::tensor::Tensor;

/// Random augmentation ranges. A zero range (or probability) disables the
/// corresponding transform.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    pub hflip_p: f64,
    pub vflip_p: f64,
    /// Scale range; values above 1 zoom in.
    pub zoom: (f64, f64),
    /// Maximum horizontal shear angle in degrees.
    pub shear_deg: f64,
    /// Maximum vertical shear (tilt) angle in degrees.
    pub skew_deg: f64,
    /// Maximum relative brightness change.
    pub brightness: f64,
    pub contrast: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            rotation_deg: 25.0,
            hflip_p: 0.5,
            vflip_p: 0.5,
            zoom: (0.8, 1.2),
            shear_deg: 10.0,
            skew_deg: 10.0,
            brightness: 0.2,
            contrast: (0.8, 1.2),
        }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        AugmentPolicy {
            rotation_deg: 0.0,
            hflip_p: 0.0,
            vflip_p: 0.0,
            zoom: (1.0, 1.0),
            shear_deg: 0.0,
            skew_deg: 0.0,
            brightness: 0.0,
            contrast: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("augment policy: bad {what}")));
        if !(0.0..=180.0).contains(&self.rotation_deg) {
            return bad("rotation");
        }
        for (name, p) in [("hflip", self.hflip_p), ("vflip", self.vflip_p)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(name);
            }
        }
        for (name, (lo, hi)) in [("zoom", self.zoom), ("contrast", self.contrast)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(name);
            }
        }
        for (name, a) in [("shear", self.shear_deg), ("skew", self.skew_deg)] {
            if !(0.0..80.0).contains(&a) {
                return bad(name);
            }
        }
        if !(0.0..1.0).contains(&self.brightness) {
            return bad("brightness");
        }
        Ok(())
    }
}

/// Linear map acting on coordinates measured from the image centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    /// Row-major 2x2 matrix acting on `(x, y)`.
    pub m: [[f64; 2]; 2],
}

/// Snaps values within 1e-12 of 0 or ±1 so quarter turns are exact.
fn snap(v: f64) -> f64 {
    for t in [-1.0, 0.0, 1.0] {
        if (v - t).abs() < 1e-12 {
            return t;
        }
    }
    v
}

impl Affine {
    pub fn identity() -> Self {
        Affine {
            m: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    pub fn rotation(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        let (s, c) = (snap(s), snap(c));
        Affine {
            m: [[c, s], [-s, c]],
        }
    }

    pub fn shear(deg: f64) -> Self {
        Affine {
            m: [[1.0, deg.to_radians().tan()], [0.0, 1.0]],
        }
    }

    pub fn skew(deg: f64) -> Self {
        Affine {
            m: [[1.0, 0.0], [deg.to_radians().tan(), 1.0]],
        }
    }

    pub fn zoom(s: f64) -> Self {
        Affine {
            m: [[s, 0.0], [0.0, s]],
        }
    }

    pub fn flip(h: bool, v: bool) -> Self {
        Affine {
            m: [[if h { -1.0 } else { 1.0 }, 0.0], [0.0, if v { -1.0 } else { 1.0 }]],
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Affine) -> Affine {
        let (a, b) = (self.m, other.m);
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Affine { m }
    }

    pub fn inverse(&self) -> Affine {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        Affine {
            m: [[d / det, -b / det], [-c / det, a / det]],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.m[0][0] * x + self.m[0][1] * y, self.m[1][0] * x + self.m[1][1] * y)
    }

    pub fn is_identity(&self) -> bool {
        *self == Affine::identity()
    }

    /// For each output pixel, the source position in pixel units (pixel
    /// centres sit at `i + 0.5`).
    fn source_positions(&self, h: usize, w: usize) -> Vec<(f64, f64)> {
        let inv = self.inverse();
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = inv.apply(x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                out.push((sx + cx, sy + cy));
            }
        }
        out
    }

    /// Bilinear resampling with border replication.
    pub fn warp_image(&self, image: &Tensor) -> Tensor {
        let s = image.shape();
        let pos = self.source_positions(s.h, s.w);
        let axis = |p: f64, n: usize| {
            let u = p - 0.5;
            let i = u.floor();
            let t = (u - i) as f32;
            let clamp = |k: f64| k.clamp(0.0, (n - 1) as f64) as usize;
            (clamp(i), clamp(i + 1.0), t)
        };
        let mut out = image.clone();
        for n in 0..s.n {
            for c in 0..s.c {
                let src = image.plane(n, c);
                let dst = out.plane_mut(n, c);
                for (o, &(sx, sy)) in dst.iter_mut().zip(&pos) {
                    let (x0, x1, tx) = axis(sx, s.w);
                    let (y0, y1, ty) = axis(sy, s.h);
                    let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
                    let top = lerp(src[y0 * s.w + x0], src[y0 * s.w + x1], tx);
                    let bot = lerp(src[y1 * s.w + x0], src[y1 * s.w + x1], tx);
                    *o = lerp(top, bot, ty);
                }
            }
        }
        out
    }

    /// Nearest-neighbour resampling with border replication.
    pub fn warp_mask(&self, mask: &BinaryMask) -> BinaryMask {
        let (h, w) = mask.dims();
        let pos = self.source_positions(h, w);
        let idx = |p: f64, n: usize| p.floor().clamp(0.0, (n - 1) as f64) as usize;
        let bits = pos.iter().map(|&(sx, sy)| mask.get(idx(sy, h), idx(sx, w))).collect();
        BinaryMask::from_bits(h, w, bits).expect("same dims")
    }
}

fn symmetric(rng: &mut ChaCha8Rng, r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        rng.random_range(-r..=r)
    }
}

fn range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Samples one geometric transform (`rotation ∘ shear ∘ skew ∘ zoom ∘ flips`)
/// and one photometric change, and applies them. The mask follows the
/// geometric transform only.
pub fn augment(sample: &ImageSample, policy: &AugmentPolicy, seed: u64) -> Result<ImageSample> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hflip = policy.hflip_p > 0.0 && rng.random_bool(policy.hflip_p);
    let vflip = policy.vflip_p > 0.0 && rng.random_bool(policy.vflip_p);
    let zoom = range(&mut rng, policy.zoom);
    let skew = symmetric(&mut rng, policy.skew_deg);
    let shear = symmetric(&mut rng, policy.shear_deg);
    let rot = symmetric(&mut rng, policy.rotation_deg);
    let brightness = 1.0 + symmetric(&mut rng, policy.brightness);
    let contrast = range(&mut rng, policy.contrast);

    let t = Affine::rotation(rot)
        .compose(&Affine::shear(shear))
        .compose(&Affine::skew(skew))
        .compose(&Affine::zoom(zoom))
        .compose(&Affine::flip(hflip, vflip));
    let (mut image, mask) = if t.is_identity() {
        (sample.image.clone(), sample.mask.clone())
    } else {
        (t.warp_image(&sample.image), t.warp_mask(&sample.mask))
    };
    if brightness != 1.0 || contrast != 1.0 {
        let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / image.numel() as f64;
        for v in image.data_mut() {
            let b = *v as f64 * brightness;
            *v = ((b - mean * brightness) * contrast + mean * brightness).clamp(0.0, 1.0) as f32;
        }
    }
    ImageSample::new(sample.id.clone(), image, mask)
}
