//! Reading and writing the map and image files the commands exchange.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use uvface::geometry::{UVPositionMap, UVTextureMap};
use uvface::image::RgbImage;
use uvface::tensor::io;
use uvface::Tensor;

pub fn read_uvt(path: &Path) -> Result<Tensor> {
    io::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_uvt(path: &Path, t: &Tensor) -> Result<()> {
    io::write(path, t).with_context(|| format!("writing {}", path.display()))
}

pub fn read_position(path: &Path) -> Result<UVPositionMap> {
    UVPositionMap::from_tensor(&read_uvt(path)?).with_context(|| format!("position map {}", path.display()))
}

/// A `1×3×R×R` texture tensor from UVT.
pub fn read_texture(path: &Path) -> Result<Tensor> {
    let t = read_uvt(path)?;
    UVTextureMap::from_tensor(&t).with_context(|| format!("texture {}", path.display()))?;
    Ok(t)
}

/// A `1×3×H×W` image from PNG or UVT.
pub fn read_image(path: &Path) -> Result<Tensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => Ok(RgbImage::load_png(path)
            .with_context(|| format!("reading {}", path.display()))?
            .to_tensor()),
        _ => {
            let t = read_uvt(path)?;
            RgbImage::from_tensor(&t).with_context(|| format!("image {}", path.display()))?;
            Ok(t)
        }
    }
}

/// PNG and UVT files of a directory in name order.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("uvt"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no PNG or UVT files in {}", dir.display());
    }
    Ok(files)
}

pub fn save_preview(path: &Path, t: &Tensor) -> Result<()> {
    RgbImage::from_tensor(t)?
        .save_png(path)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// `yaw+030` style tag for file names.
pub fn yaw_tag(yaw: f64) -> String {
    let sign = if yaw < 0.0 { '-' } else { '+' };
    format!("yaw{sign}{:03}", yaw.abs().round() as i64)
}
