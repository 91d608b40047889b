//! 3D ↔ UV geometry: UV mapping, visibility, rendering, masks and alignment.

pub mod align;
pub mod cloud;
pub mod masks;
pub mod pose;
pub mod render;
pub mod uv;
pub mod zbuffer;

pub use align::{align_shape, fit_similarity, Alignment, Similarity};
pub use cloud::{PointCloud, Vec3};
pub use masks::{Attribute, AttributeMaskSet, MaskId};
pub use pose::{Pose, Projected};
pub use render::{render_to_image, render_uv_texture, render_uv_texture_from_map, RenderStatus, Rendering};
pub use uv::{
    build_position_map, cloud_uvs, flip_uv, interpolate_uv, sphere_uv, Resolution, UVPositionMap, UVTextureMap,
};
pub use zbuffer::{zbuffer_points, zbuffer_visibility, VisibilityMask};
