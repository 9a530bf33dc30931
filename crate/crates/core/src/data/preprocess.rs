use std::fmt;
use std::path::Path;

use super::ImageSample;
use crate::error::{Error, Result};
use crate::postprocess::BinaryMask;
use crate::tensor::{resize_bilinear, Shape, Tensor};

/// Pixels whose brightest channel is below this level count as black border.
pub const BLACK_LEVEL: f32 = 16.0 / 255.0;

/// Rectangle kept by [`remove_black_border`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

fn check_rgb(op: &'static str, image: &Tensor) -> Result<Shape> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape(op, format!("expected 1x3xHxW, got {s}")));
    }
    Ok(s)
}

/// Strips the outermost rows and columns in which every pixel is black.
pub fn remove_black_border(image: &Tensor) -> Result<(Tensor, CropRect)> {
    let s = check_rgb("remove_black_border", image)?;
    let bright = |y: usize, x: usize| (0..3).any(|c| image.at(0, c, y, x) >= BLACK_LEVEL);
    let row_has = |y: usize| (0..s.w).any(|x| bright(y, x));
    let col_has = |x: usize, y0: usize, y1: usize| (y0..y1).any(|y| bright(y, x));

    let Some(y0) = (0..s.h).find(|&y| row_has(y)) else {
        return Err(Error::Data("image is entirely black".into()));
    };
    let y1 = (0..s.h).rev().find(|&y| row_has(y)).unwrap() + 1;
    let x0 = (0..s.w).find(|&x| col_has(x, y0, y1)).unwrap();
    let x1 = (0..s.w).rev().find(|&x| col_has(x, y0, y1)).unwrap() + 1;
    let rect = CropRect {
        y0,
        x0,
        h: y1 - y0,
        w: x1 - x0,
    };
    Ok((crop_image(image, rect)?, rect))
}

fn check_rect(rect: CropRect, h: usize, w: usize) -> Result<()> {
    if rect.h == 0 || rect.w == 0 || rect.y0 + rect.h > h || rect.x0 + rect.w > w {
        return Err(Error::InvalidArgument(format!("crop {rect:?} outside {h}x{w}")));
    }
    Ok(())
}

pub fn crop_image(image: &Tensor, rect: CropRect) -> Result<Tensor> {
    let s = image.shape();
    check_rect(rect, s.h, s.w)?;
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, rect.h, rect.w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = image.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..rect.h {
                let from = (rect.y0 + y) * s.w + rect.x0;
                dst[y * rect.w..(y + 1) * rect.w].copy_from_slice(&src[from..from + rect.w]);
            }
        }
    }
    Ok(out)
}

pub fn crop_mask(mask: &BinaryMask, rect: CropRect) -> Result<BinaryMask> {
    check_rect(rect, mask.height(), mask.width())?;
    Ok(BinaryMask::from_fn(rect.h, rect.w, |y, x| mask.get(rect.y0 + y, rect.x0 + x)))
}

/// Half-pixel bilinear resize of an image (same kernel as the decoder).
pub fn resize_image(image: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    resize_bilinear(image, h, w)
}

/// Nearest-neighbour resize: output pixel `d` reads `floor((d + 0.5) * in / out)`.
pub fn resize_nearest(mask: &BinaryMask, h: usize, w: usize) -> Result<BinaryMask> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("cannot resize mask to {h}x{w}")));
    }
    let (ih, iw) = mask.dims();
    let src = |d: usize, inn: usize, out: usize| ((2 * d + 1) * inn) / (2 * out);
    Ok(BinaryMask::from_fn(h, w, |y, x| mask.get(src(y, ih, h), src(x, iw, w))))
}

/// Border removal followed by resizing image and mask to `size`.
pub fn preprocess(sample: &ImageSample, size: (usize, usize)) -> Result<ImageSample> {
    let (cropped, rect) = remove_black_border(&sample.image)
        .map_err(|e| Error::Data(format!("{}: {e}", sample.id)))?;
    let mask = crop_mask(&sample.mask, rect)?;
    ImageSample::new(
        sample.id.clone(),
        resize_image(&cropped, size.0, size.1)?,
        resize_nearest(&mask, size.0, size.1)?,
    )
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl DatasetStats {
    pub fn identity() -> Self {
        DatasetStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in 0..3 {
            if !self.mean[c].is_finite() || !(self.std[c].is_finite() && self.std[c] > 0.0) {
                return Err(Error::Data(format!(
                    "channel {c}: mean {} std {} cannot normalize",
                    self.mean[c], self.std[c]
                )));
            }
        }
        Ok(())
    }

    /// Two lines, `mean r g b` and `std r g b`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut mean = None;
        let mut std = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap();
            let vals: Vec<f64> = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("stats: {line:?}: {e}")))?;
            let arr: [f64; 3] = vals
                .try_into()
                .map_err(|_| Error::Data(format!("stats: {line:?}: expected 3 values")))?;
            match key {
                "mean" => mean = Some(arr),
                "std" => std = Some(arr),
                _ => return Err(Error::Data(format!("stats: unknown key {key:?}"))),
            }
        }
        match (mean, std) {
            (Some(mean), Some(std)) => Ok(DatasetStats { mean, std }),
            _ => Err(Error::Data("stats: need both mean and std lines".into())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

impl fmt::Display for DatasetStats {
    // `{}` on f64 prints the shortest string that parses back to the same value.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mean {} {} {}", self.mean[0], self.mean[1], self.mean[2])?;
        writeln!(f, "std {} {} {}", self.std[0], self.std[1], self.std[2])
    }
}

/// Exact statistics over every pixel of every image, accumulated in f64
/// with Welford's update.
pub fn compute_dataset_stats<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Result<DatasetStats> {
    let mut count = 0u64;
    let mut mean = [0.0f64; 3];
    let mut m2 = [0.0f64; 3];
    for img in images {
        check_rgb("dataset_stats", img)?;
        let start = count;
        for c in 0..3 {
            let mut k = start;
            for &v in img.plane(0, c) {
                k += 1;
                let v = v as f64;
                let d = v - mean[c];
                mean[c] += d / k as f64;
                m2[c] += d * (v - mean[c]);
            }
        }
        count += img.shape().plane() as u64;
    }
    if count == 0 {
        return Err(Error::Data("cannot compute statistics of an empty dataset".into()));
    }
    Ok(DatasetStats {
        mean,
        std: m2.map(|s| (s / count as f64).sqrt()),
    })
}

/// `(pixel - mean_c) / std_c`.
pub fn normalize(image: &Tensor, stats: &DatasetStats) -> Result<Tensor> {
    stats.validate()?;
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::shape("normalize", format!("expected 3 channels, got {s}")));
    }
    let mut out = image.clone();
    for n in 0..s.n {
        for c in 0..3 {
            let (m, sd) = (stats.mean[c], stats.std[c]);
            for v in out.plane_mut(n, c) {
                *v = ((*v as f64 - m) / sd) as f32;
            }
        }
    }
    Ok(out)
}
