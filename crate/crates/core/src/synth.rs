//! Procedural heads with toggleable attribute decals, used as a stand-in
//! for photographed faces.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adagan::AttributeCode;
use crate::error::Result;
use crate::geometry::{build_position_map, render_to_image, Attribute, PointCloud, Pose, Resolution, UVPositionMap, UVTextureMap, Vec3};
use crate::image::RgbImage;

/// UV extent covered by the face surface along both axes.
pub const FACE_UV: (f64, f64) = (0.12, 0.88);

/// Mesh cells per side of the face grid.
pub const MESH_CELLS: usize = 64;

/// Resolution of the texture used to render synthetic photographs.
pub const PHOTO_RESOLUTION: usize = 256;

/// Shape and appearance of one synthetic identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthHead {
    pub id: usize,
    /// Ellipsoid semi-axes along x, y, z.
    pub radii: Vec3,
    /// Height of the nose protrusion along +z.
    pub nose: f64,
    pub skin: Vec3,
    pub iris: Vec3,
    pub hair: Vec3,
    pub code: AttributeCode,
}

fn lerp3(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn in_ellipse([u, v]: [f64; 2], center: [f64; 2], radii: [f64; 2]) -> bool {
    let du = (u - center[0]) / radii[0];
    let dv = (v - center[1]) / radii[1];
    du * du + dv * dv <= 1.0
}

impl SynthHead {
    pub fn random<R: Rng + ?Sized>(id: usize, code: AttributeCode, rng: &mut R) -> Self {
        let tone = rng.random::<f64>();
        SynthHead {
            id,
            radii: [rng.random_range(0.74..0.84), 1.0, rng.random_range(0.72..0.84)],
            nose: rng.random_range(0.08..0.15),
            skin: lerp3([0.96, 0.82, 0.72], [0.48, 0.32, 0.24], tone),
            iris: lerp3([0.25, 0.45, 0.65], [0.30, 0.20, 0.10], rng.random::<f64>()),
            hair: lerp3([0.55, 0.40, 0.20], [0.10, 0.07, 0.05], rng.random::<f64>()),
            code,
        }
    }

    /// Surface point at UV `(u, v)` before normalization.
    fn surface(&self, [u, v]: [f64; 2]) -> Vec3 {
        let az = PI * u;
        let polar = PI * (1.0 - v);
        let dir = [az.cos() * polar.sin(), polar.cos(), az.sin() * polar.sin()];
        let bump = self.nose * (-((u - 0.5).powi(2) + (v - 0.45).powi(2)) / (2.0 * 0.045f64.powi(2))).exp();
        [
            self.radii[0] * dir[0],
            self.radii[1] * dir[1],
            self.radii[2] * dir[2] + bump,
        ]
    }

    /// Triangulated face surface with reference UVs, normalized into the
    /// unit ball around its centroid.
    pub fn mesh(&self) -> PointCloud {
        let n = MESH_CELLS;
        let (lo, hi) = FACE_UV;
        let mut verts = Vec::with_capacity((n + 1) * (n + 1));
        let mut uvs = Vec::with_capacity(verts.capacity());
        for j in 0..=n {
            for i in 0..=n {
                let uv = [lo + (hi - lo) * i as f64 / n as f64, lo + (hi - lo) * j as f64 / n as f64];
                verts.push(self.surface(uv));
                uvs.push(uv);
            }
        }
        let mut tris = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let a = j * (n + 1) + i;
                let (b, c, d) = (a + 1, a + n + 1, a + n + 2);
                tris.push([a, b, d]);
                tris.push([a, d, c]);
            }
        }
        let raw = PointCloud::new(verts)
            .and_then(|c| c.with_uvs(uvs))
            .and_then(|c| c.with_triangles(tris))
            .expect("grid mesh is well formed");
        raw.normalized().0
    }

    /// Procedural albedo at a UV point.
    pub fn color(&self, uv: [f64; 2]) -> Vec3 {
        let [u, v] = uv;
        // soft shading toward the face border and a little cheek color
        let edge = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
        let mut c = self.skin.map(|x| x * (1.0 - 0.35 * edge));
        for cheek in [[0.36, 0.42], [0.64, 0.42]] {
            if in_ellipse(uv, cheek, [0.06, 0.05]) {
                c = lerp3(c, [0.85, 0.45, 0.45], 0.15);
            }
        }
        for eye in [[0.40, 0.61], [0.60, 0.61]] {
            if in_ellipse(uv, eye, [0.05, 0.022]) {
                c = [0.92, 0.92, 0.90];
                if in_ellipse(uv, eye, [0.018, 0.018]) {
                    c = self.iris;
                }
            }
        }
        for brow in [0.40, 0.60] {
            if (u - brow).abs() < 0.055 && (v - 0.685).abs() < 0.008 {
                c = lerp3(c, self.hair, 0.8);
            }
        }
        if in_ellipse(uv, [0.5, 0.30], [0.07, 0.018]) {
            c = lerp3(c, [0.60, 0.25, 0.25], 0.5);
        }

        let code = &self.code;
        let inside = |a: Attribute| a.region_contains(uv);
        if code.get(Attribute::Shadow) && inside(Attribute::Shadow) {
            c = lerp3(c.map(|x| x * 0.6), [0.20, 0.22, 0.25], 0.25);
        }
        if code.get(Attribute::Lipstick) && in_ellipse(uv, [0.5, 0.30], [0.085, 0.03]) {
            c = [0.80, 0.08, 0.18];
        }
        if code.get(Attribute::Smiling) && inside(Attribute::Smiling) {
            let curve = 0.275 + 4.0 * (u - 0.5).powi(2);
            if (u - 0.5).abs() < 0.11 && (v - curve).abs() < 0.01 {
                c = [0.25, 0.08, 0.08];
            } else if (u - 0.5).abs() < 0.06 && v > curve + 0.01 && v < curve + 0.03 {
                c = [0.97, 0.97, 0.95];
            }
        }
        if code.get(Attribute::Sunglasses) && inside(Attribute::Sunglasses) {
            let glare = if in_ellipse(uv, [0.36, 0.63], [0.03, 0.012]) { 0.12 } else { 0.0 };
            c = [0.04 + glare, 0.04 + glare, 0.06 + glare];
        }
        if code.get(Attribute::Bangs) && inside(Attribute::Bangs) {
            let strand = 0.08 * (u * 90.0).sin();
            c = self.hair.map(|x| (x + strand).clamp(0.0, 1.0));
        }
        c.map(|x| x.clamp(0.0, 1.0))
    }

    /// Ground-truth texture: every texel covered by the face is visible.
    pub fn texture(&self, resolution: Resolution) -> Result<UVTextureMap> {
        self.texture_on(&build_position_map(&self.mesh(), resolution))
    }

    fn texture_on(&self, pos: &UVPositionMap) -> Result<UVTextureMap> {
        let resolution = pos.resolution();
        let r = resolution.get();
        let grid = (0..r * r)
            .map(|i| {
                if pos.valid()[i] {
                    self.color(resolution.uv_of(i / r, i % r))
                } else {
                    [0.0; 3]
                }
            })
            .collect();
        UVTextureMap::new(resolution, grid, pos.valid().to_vec())
    }
}

/// High-resolution maps of one head, for rendering photographs of it.
#[derive(Clone, Debug)]
pub struct Studio {
    position: UVPositionMap,
    texture: UVTextureMap,
}

impl Studio {
    pub fn new(head: &SynthHead) -> Result<Self> {
        let position = build_position_map(&head.mesh(), Resolution::new(PHOTO_RESOLUTION)?);
        let texture = head.texture_on(&position)?;
        Ok(Studio { position, texture })
    }

    /// The head under `pose`, splatted into a `size×size` image on a black
    /// background.
    pub fn photo(&self, pose: &Pose, size: usize) -> Result<RgbImage> {
        Ok(render_to_image(&self.texture, &self.position, pose, size, size)?.image)
    }
}

/// `n` heads whose attribute labels are balanced: for every attribute,
/// exactly `⌊n/2⌋` or `⌈n/2⌉` heads carry it.
pub fn synth_heads(n: usize, seed: u64) -> Vec<SynthHead> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codes = vec![AttributeCode::default(); n];
    for a in Attribute::ALL {
        let count = n / 2 + (n % 2) * rng.random_range(0..2);
        let mut on: Vec<bool> = (0..n).map(|i| i < count).collect();
        on.shuffle(&mut rng);
        for (c, o) in codes.iter_mut().zip(on) {
            *c = c.with(a, o);
        }
    }
    codes
        .into_iter()
        .enumerate()
        .map(|(id, code)| SynthHead::random(id, code, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decals_stay_in_their_regions() {
        let heads = synth_heads(4, 11);
        let base = SynthHead {
            code: AttributeCode::default(),
            ..heads[0].clone()
        };
        let r = Resolution::new(128).unwrap();
        for a in Attribute::ALL {
            let with = SynthHead {
                code: AttributeCode::default().with(a, true),
                ..base.clone()
            };
            let mut changed = 0;
            for row in 0..128 {
                for col in 0..128 {
                    let uv = r.uv_of(row, col);
                    if with.color(uv) != base.color(uv) {
                        assert!(a.region_contains(uv), "{a} decal leaks at {uv:?}");
                        changed += 1;
                    }
                }
            }
            assert!(changed > 20, "{a} decal too small: {changed}");
        }
    }

    #[test]
    fn labels_are_balanced() {
        for n in [10, 11, 200] {
            let heads = synth_heads(n, 3);
            for a in Attribute::ALL {
                let on = heads.iter().filter(|h| h.code.get(a)).count();
                assert!(on == n / 2 || on == n.div_ceil(2), "{a}: {on}/{n}");
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(synth_heads(5, 9), synth_heads(5, 9));
        assert_ne!(synth_heads(5, 9), synth_heads(5, 10));
    }

    #[test]
    fn mesh_is_normalized() {
        let m = synth_heads(1, 1)[0].mesh();
        let max = m.vertices().iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        assert!(m.uvs().is_some() && !m.triangles().is_empty());
    }
}
