//! PNG datasets laid out as `images/<stem>.png` and `masks/<stem>.png`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use super::ImageSample;
use crate::error::{Error, Result};
use crate::postprocess::BinaryMask;
use crate::tensor::{Shape, Tensor};

/// Mask pixels at or above this 8-bit level are foreground.
const MASK_LEVEL: u8 = 128;

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

/// Decodes any 8/16-bit PNG to `(h, w, rgb8)`.
fn read_rgb8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let per = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(png_err(path, "unexpanded palette")),
    };
    let mut rgb = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * per];
        for px in row.chunks_exact(per) {
            if per < 3 {
                rgb.extend([px[0]; 3]);
            } else {
                rgb.extend(&px[..3]);
            }
        }
    }
    Ok((h, w, rgb))
}

fn write_png(path: &Path, h: usize, w: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(data).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// Writes interleaved 8-bit RGB.
pub fn write_rgb8(path: &Path, h: usize, w: usize, rgb: &[u8]) -> Result<()> {
    assert_eq!(rgb.len(), h * w * 3);
    write_png(path, h, w, png::ColorType::Rgb, rgb)
}

/// Loads a PNG as a `1x3xhxw` tensor with values in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let (h, w, rgb) = read_rgb8(path)?;
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for c in 0..3 {
        for (i, v) in t.plane_mut(0, c).iter_mut().enumerate() {
            *v = rgb[i * 3 + c] as f32 / 255.0;
        }
    }
    Ok(t)
}

/// `[0, 1]` values rounded to the nearest 8-bit level.
pub fn image_to_rgb8(image: &Tensor) -> Vec<u8> {
    let s = image.shape();
    let mut out = vec![0u8; s.h * s.w * 3];
    for c in 0..3.min(s.c) {
        for (i, &v) in image.plane(0, c).iter().enumerate() {
            out[i * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out
}

pub fn save_image(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("save_image", format!("expected 1x3xHxW, got {s}")));
    }
    write_rgb8(path, s.h, s.w, &image_to_rgb8(image))
}

/// Loads a mask; a pixel is foreground when any channel is at least 128.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let (h, w, rgb) = read_rgb8(path)?;
    let bits = rgb.chunks_exact(3).map(|p| p.iter().any(|&v| v >= MASK_LEVEL)).collect();
    BinaryMask::from_bits(h, w, bits).map_err(|e| png_err(path, e))
}

/// Single-channel PNG with values 0 and 255.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let data: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_png(path, mask.height(), mask.width(), png::ColorType::Grayscale, &data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub samples: Vec<ImageSample>,
    /// Samples skipped because their mask was empty.
    pub dropped_empty: usize,
}

fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                stems.push(s.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// Loads every `images/<stem>.png` with its `masks/<stem>.png`, in
/// lexicographic stem order. With `drop_empty`, frames without any
/// foreground are skipped and counted.
pub fn load_dataset(dir: &Path, drop_empty: bool) -> Result<LoadedDataset> {
    let (img_dir, mask_dir) = (dir.join("images"), dir.join("masks"));
    let stems = png_stems(&img_dir)?;
    if stems.is_empty() {
        return Err(Error::Data(format!("{}: no images found", img_dir.display())));
    }
    let mut samples = Vec::new();
    let mut dropped_empty = 0;
    for stem in stems {
        let mask_path: PathBuf = mask_dir.join(format!("{stem}.png"));
        if !mask_path.exists() {
            return Err(Error::Data(format!("{stem}: missing mask {}", mask_path.display())));
        }
        let img_path = img_dir.join(format!("{stem}.png"));
        let image = load_image(&img_path)?;
        let mask = load_mask(&mask_path)?;
        let s = image.shape();
        if (s.h, s.w) != mask.dims() {
            return Err(Error::Data(format!(
                "{stem}: image {}x{} but mask {}x{}",
                s.h,
                s.w,
                mask.height(),
                mask.width()
            )));
        }
        if drop_empty && mask.is_empty() {
            dropped_empty += 1;
            continue;
        }
        samples.push(ImageSample::new(stem, image, mask)?);
    }
    Ok(LoadedDataset { samples, dropped_empty })
}

pub fn save_dataset(dir: &Path, samples: &[ImageSample]) -> Result<()> {
    let (img_dir, mask_dir) = (dir.join("images"), dir.join("masks"));
    for d in [&img_dir, &mask_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for s in samples {
        save_image(&img_dir.join(format!("{}.png", s.id)), &s.image)?;
        save_mask(&mask_dir.join(format!("{}.png", s.id)), &s.mask)?;
    }
    Ok(())
}
