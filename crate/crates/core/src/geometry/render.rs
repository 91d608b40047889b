//! Image ↔ UV-texture transfer under a weak-perspective pose.

use crate::error::{Error, Result};
use crate::image::RgbImage;

use super::cloud::{PointCloud, Vec3};
use super::pose::Pose;
use super::uv::{build_position_map, Resolution, UVPositionMap, UVTextureMap};
use super::zbuffer::{zbuffer_points, VisibilityMask};

/// Outcome flag of [`render_uv_texture`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderStatus {
    Ok,
    /// No texel survived visibility; the returned map is all-invisible.
    EmptyVisibleSet,
}

/// Valid texels that face the camera: their normal, rotated into camera
/// space, has positive depth component. Texels without a normal count as
/// facing.
fn front_facing(position: &UVPositionMap, pose: &Pose) -> Vec<bool> {
    position
        .normals()
        .into_iter()
        .zip(position.valid())
        .map(|(n, &ok)| ok && n.is_none_or(|n| pose.rotate(n)[2] > 0.0))
        .collect()
}

/// Texel-level z-buffer: among front-facing valid texels, the one with the
/// largest depth at each pixel is visible. Returns per-texel flags.
pub fn texel_visibility(position: &UVPositionMap, pose: &Pose, width: usize, height: usize) -> Vec<bool> {
    let facing = front_facing(position, pose);
    let mut pts: Vec<Vec3> = Vec::new();
    let mut idx = Vec::new();
    for (i, (&p, &f)) in position.grid().iter().zip(&facing).enumerate() {
        if f {
            pts.push(p);
            idx.push(i);
        }
    }
    let mask: VisibilityMask = zbuffer_points(&pts, pose, width, height);
    let mut out = vec![false; facing.len()];
    for (k, &i) in idx.iter().enumerate() {
        out[i] = mask.is_visible(k);
    }
    out
}

/// Samples `image` into UV space: each visible texel takes the color of the
/// pixel its surface point projects to; every other texel is black.
pub fn render_uv_texture_from_map(
    image: &RgbImage,
    position: &UVPositionMap,
    pose: &Pose,
) -> Result<(UVTextureMap, RenderStatus)> {
    let (w, h) = (image.width(), image.height());
    let visible = texel_visibility(position, pose, w, h);
    let mut grid = vec![[0.0; 3]; visible.len()];
    for (i, &vis) in visible.iter().enumerate() {
        if vis {
            let (col, row, _) = pose
                .pixel(position.grid()[i], w, h)
                .expect("visible texels project inside the image");
            grid[i] = image.get(col, row);
        }
    }
    let status = if visible.iter().any(|&v| v) {
        RenderStatus::Ok
    } else {
        log::warn!("render_uv_texture: no texel is visible under the given pose");
        RenderStatus::EmptyVisibleSet
    };
    Ok((UVTextureMap::new(position.resolution(), grid, visible)?, status))
}

/// [`render_uv_texture_from_map`] with the position map built from `cloud`.
pub fn render_uv_texture(
    image: &RgbImage,
    cloud: &PointCloud,
    pose: &Pose,
    resolution: Resolution,
) -> Result<(UVTextureMap, RenderStatus)> {
    render_uv_texture_from_map(image, &build_position_map(cloud, resolution), pose)
}

/// A back-rendered image and which pixels received a texel.
#[derive(Clone, Debug)]
pub struct Rendering {
    pub image: RgbImage,
    pub coverage: Vec<bool>,
}

impl Rendering {
    pub fn covered(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }
}

/// Splats every valid, camera-facing texel to its pixel; the nearest texel
/// at each pixel sets the color. Uncovered pixels are black.
pub fn render_to_image(
    texture: &UVTextureMap,
    position: &UVPositionMap,
    pose: &Pose,
    width: usize,
    height: usize,
) -> Result<Rendering> {
    if texture.resolution() != position.resolution() {
        let (a, b) = (texture.resolution().get(), position.resolution().get());
        return Err(Error::InvalidInput(format!("texture is {a}x{a} but position map is {b}x{b}")));
    }
    let facing = front_facing(position, pose);
    let mut depth = vec![f64::NEG_INFINITY; width * height];
    let mut image = RgbImage::new(width, height);
    let mut coverage = vec![false; width * height];
    for (i, (&p, &f)) in position.grid().iter().zip(&facing).enumerate() {
        if !f {
            continue;
        }
        let Some((col, row, z)) = pose.pixel(p, width, height) else { continue };
        let k = row * width + col;
        if z > depth[k] {
            depth[k] = z;
            coverage[k] = true;
            image.set(col, row, texture.grid()[i]);
        }
    }
    Ok(Rendering { image, coverage })
}
