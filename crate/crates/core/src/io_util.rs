//! File helpers: atomic writes, JSON / JSON-lines, grayscale and RGB images.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = temp_sibling(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::json(path.display().to_string(), e))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(item);
    }
    Ok(out)
}

pub fn save_gray(path: &Path, data: &Array2<u8>) -> Result<()> {
    let (h, w) = data.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([data[[y as usize, x as usize]]]));
    save_image(path, |p| img.save(p))
}

pub fn load_gray(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)
        .map_err(|e| Error::Image { path: path.into(), source: e })?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| img.get_pixel(x as u32, y as u32)[0]))
}

/// Saves an `H × W × 3` array with values in `[0, 255]`.
pub fn save_rgb(path: &Path, data: &Array3<u8>) -> Result<()> {
    let (h, w, _) = data.dim();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([data[[y, x, 0]], data[[y, x, 1]], data[[y, x, 2]]])
    });
    save_image(path, |p| img.save(p))
}

/// Loads an image as `H × W × 3` floats in `[0, 255]`, resized when `size` is given.
pub fn load_rgb(path: &Path, size: Option<(usize, usize)>) -> Result<Array3<f64>> {
    let mut img = image::open(path)
        .map_err(|e| Error::Image { path: path.into(), source: e })?
        .into_rgb8();
    if let Some((h, w)) = size {
        if img.dimensions() != (w as u32, h as u32) {
            img = image::imageops::resize(&img, w as u32, h as u32, image::imageops::FilterType::Triangle);
        }
    }
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        img.get_pixel(x as u32, y as u32)[c] as f64
    }))
}

/// Grayscale luminance `H × W` in `[0, 255]`.
pub fn load_luma(path: &Path, size: Option<(usize, usize)>) -> Result<Array2<f64>> {
    let rgb = load_rgb(path, size)?;
    Ok(rgb_to_luma(&rgb))
}

pub fn rgb_to_luma(rgb: &Array3<f64>) -> Array2<f64> {
    let (h, w, _) = rgb.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        0.299 * rgb[[y, x, 0]] + 0.587 * rgb[[y, x, 1]] + 0.114 * rgb[[y, x, 2]]
    })
}

fn save_image(path: &Path, save: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    // keep the extension so the encoder is chosen correctly
    let tmp = path.with_file_name(format!(
        ".tmp{}-{}",
        std::process::id(),
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    save(&tmp).map_err(|e| Error::Image { path: path.into(), source: e })?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
