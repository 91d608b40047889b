//! Sphere UV parameterization and the UV position / texture maps.
//!
//! Texel `(row, col)` of an `R×R` map sits at UV point
//! `(u, v) = (col/(R−1), 1 − row/(R−1))`, so row 0 is the top of the face
//! (`v = 1`). Continuous coordinates snap to texels by
//! `round(coord·(R−1))`, rounding half away from zero.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::cloud::{PointCloud, Vec3};

/// Squared horizontal radius below which a vertex is on the sphere's pole.
pub const POLE_EPS: f64 = 1e-12;

/// Maps a vertex of a unit-normalized shape onto `[0, 1]²`:
/// `u = arccos(x/√(x²+z²))/π`, `v = 1 − arccos(y)/π`. On the pole
/// (`x² + z² < 1e-12`) `u` is fixed at 0.5.
pub fn sphere_uv(p: Vec3) -> [f64; 2] {
    let [x, y, z] = p;
    let r2 = x * x + z * z;
    let u = if r2 < POLE_EPS {
        0.5
    } else {
        (x / r2.sqrt()).clamp(-1.0, 1.0).acos() / PI
    };
    let v = 1.0 - y.clamp(-1.0, 1.0).acos() / PI;
    [u, v]
}

/// Working UV resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Resolution(usize);

impl Resolution {
    pub const ALLOWED: [usize; 4] = [32, 64, 128, 256];

    pub fn new(r: usize) -> Result<Self> {
        if Self::ALLOWED.contains(&r) {
            Ok(Resolution(r))
        } else {
            Err(Error::InvalidInput(format!(
                "UV resolution must be one of {:?}, got {r}",
                Self::ALLOWED
            )))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// Number of texels, `R²`.
    pub fn area(self) -> usize {
        self.0 * self.0
    }

    /// Texel index of a continuous coordinate in `[0, 1]`.
    pub fn snap(self, coord: f64) -> usize {
        let max = (self.0 - 1) as f64;
        (coord * max).round().clamp(0.0, max) as usize
    }

    /// `(row, col)` of the texel nearest to `(u, v)`.
    pub fn texel_of(self, [u, v]: [f64; 2]) -> (usize, usize) {
        (self.snap(1.0 - v), self.snap(u))
    }

    /// UV point at the center of texel `(row, col)`.
    pub fn uv_of(self, row: usize, col: usize) -> [f64; 2] {
        let max = (self.0 - 1) as f64;
        [col as f64 / max, 1.0 - row as f64 / max]
    }
}

impl TryFrom<usize> for Resolution {
    type Error = Error;
    fn try_from(r: usize) -> Result<Self> {
        Resolution::new(r)
    }
}

impl From<Resolution> for usize {
    fn from(r: Resolution) -> usize {
        r.0
    }
}

/// `R×R×3` xyz grid over UV space plus coverage flags.
#[derive(Clone, Debug, PartialEq)]
pub struct UVPositionMap {
    resolution: Resolution,
    grid: Vec<Vec3>,
    valid: Vec<bool>,
}

impl UVPositionMap {
    pub fn empty(resolution: Resolution) -> Self {
        UVPositionMap {
            resolution,
            grid: vec![[0.0; 3]; resolution.area()],
            valid: vec![false; resolution.area()],
        }
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn grid(&self) -> &[Vec3] {
        &self.grid
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, row: usize, col: usize) -> Option<Vec3> {
        let i = row * self.resolution.get() + col;
        self.valid[i].then_some(self.grid[i])
    }

    pub fn set(&mut self, row: usize, col: usize, xyz: Vec3) {
        let i = row * self.resolution.get() + col;
        self.grid[i] = xyz;
        self.valid[i] = true;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// `1×3×R×R` tensor; invalid texels are zero.
    pub fn to_tensor(&self) -> Tensor {
        grid_to_tensor(self.resolution, &self.grid)
    }

    /// Inverse of [`to_tensor`](Self::to_tensor). A texel is valid when any
    /// coordinate is nonzero.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (resolution, grid) = tensor_to_grid(t)?;
        let valid = grid.iter().map(|p| p.iter().any(|&c| c != 0.0)).collect();
        Ok(UVPositionMap { resolution, grid, valid })
    }

    /// Valid texels as a point cloud (texel order), with their `(row, col)`.
    pub fn texel_points(&self) -> (Vec<Vec3>, Vec<(usize, usize)>) {
        let r = self.resolution.get();
        let mut pts = Vec::new();
        let mut idx = Vec::new();
        for (i, (&p, &ok)) in self.grid.iter().zip(&self.valid).enumerate() {
            if ok {
                pts.push(p);
                idx.push((i / r, i % r));
            }
        }
        (pts, idx)
    }

    /// Per-texel surface normals from central differences of the grid,
    /// oriented to point away from the centroid of the valid texels on
    /// balance. Texels without a valid neighbor along both axes get `None`.
    pub fn normals(&self) -> Vec<Option<Vec3>> {
        let r = self.resolution.get();
        let mut out = vec![None; r * r];
        let at = |row: isize, col: isize| -> Option<Vec3> {
            if row < 0 || col < 0 || row >= r as isize || col >= r as isize {
                return None;
            }
            self.get(row as usize, col as usize)
        };
        let diff = |a: Option<Vec3>, b: Option<Vec3>| -> Option<Vec3> {
            Some(sub(a?, b?))
        };
        for row in 0..r as isize {
            for col in 0..r as isize {
                let Some(p) = at(row, col) else { continue };
                let du = diff(at(row, col + 1), at(row, col - 1))
                    .or_else(|| diff(at(row, col + 1), Some(p)))
                    .or_else(|| diff(Some(p), at(row, col - 1)));
                // v grows upward, i.e. toward smaller rows
                let dv = diff(at(row - 1, col), at(row + 1, col))
                    .or_else(|| diff(at(row - 1, col), Some(p)))
                    .or_else(|| diff(Some(p), at(row + 1, col)));
                if let (Some(du), Some(dv)) = (du, dv) {
                    let n = cross(du, dv);
                    let len = dot(n, n).sqrt();
                    if len > 0.0 {
                        out[row as usize * r + col as usize] = Some(n.map(|c| c / len));
                    }
                }
            }
        }
        let (pts, _) = self.texel_points();
        if pts.is_empty() {
            return out;
        }
        let n = pts.len() as f64;
        let c = pts.iter().fold([0.0; 3], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n, a[2] + p[2] / n]);
        let balance: f64 = out
            .iter()
            .zip(&self.grid)
            .filter_map(|(nrm, &p)| nrm.map(|nrm| dot(nrm, sub(p, c))))
            .sum();
        if balance < 0.0 {
            for nrm in out.iter_mut().flatten() {
                *nrm = nrm.map(|x| -x);
            }
        }
        out
    }
}

/// `R×R` RGB texture over UV space with a visibility flag per texel.
#[derive(Clone, Debug, PartialEq)]
pub struct UVTextureMap {
    resolution: Resolution,
    grid: Vec<Vec3>,
    visibility: Vec<bool>,
}

impl UVTextureMap {
    pub fn empty(resolution: Resolution) -> Self {
        UVTextureMap {
            resolution,
            grid: vec![[0.0; 3]; resolution.area()],
            visibility: vec![false; resolution.area()],
        }
    }

    /// Builds a map, clamping colors to `[0, 1]` and zeroing invisible texels.
    pub fn new(resolution: Resolution, grid: Vec<Vec3>, visibility: Vec<bool>) -> Result<Self> {
        if grid.len() != resolution.area() || visibility.len() != resolution.area() {
            return Err(Error::dim(
                "uv_texture",
                format!("{} texels and {} flags for R={}", grid.len(), visibility.len(), resolution.get()),
            ));
        }
        let grid = grid
            .into_iter()
            .zip(&visibility)
            .map(|(p, &vis)| if vis { p.map(|c| c.clamp(0.0, 1.0)) } else { [0.0; 3] })
            .collect();
        Ok(UVTextureMap { resolution, grid, visibility })
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn grid(&self) -> &[Vec3] {
        &self.grid
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visibility
    }

    pub fn get(&self, row: usize, col: usize) -> Vec3 {
        self.grid[row * self.resolution.get() + col]
    }

    pub fn visible_count(&self) -> usize {
        self.visibility.iter().filter(|&&v| v).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        grid_to_tensor(self.resolution, &self.grid)
    }

    /// Wraps a dense `1×3×R×R` tensor; every texel counts as visible.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (resolution, grid) = tensor_to_grid(t)?;
        UVTextureMap::new(resolution, grid, vec![true; resolution.area()])
    }

    /// Wraps a tensor, deriving visibility from nonzero texels.
    pub fn from_tensor_sparse(t: &Tensor) -> Result<Self> {
        let (resolution, grid) = tensor_to_grid(t)?;
        let vis = grid.iter().map(|p| p.iter().any(|&c| c != 0.0)).collect();
        UVTextureMap::new(resolution, grid, vis)
    }

    /// `1×1×R×R` visibility tensor of 0/1 values.
    pub fn visibility_tensor(&self) -> Tensor {
        let r = self.resolution.get();
        let data = self.visibility.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        Tensor::new(vec![1, 1, r, r], data).expect("consistent dims")
    }
}

/// Horizontal mirror (`u → 1 − u`) of a texture and its visibility.
pub fn flip_uv(map: &UVTextureMap) -> UVTextureMap {
    let r = map.resolution.get();
    let mut grid = map.grid.clone();
    let mut vis = map.visibility.clone();
    for row in 0..r {
        grid[row * r..(row + 1) * r].reverse();
        vis[row * r..(row + 1) * r].reverse();
    }
    UVTextureMap {
        resolution: map.resolution,
        grid,
        visibility: vis,
    }
}

fn grid_to_tensor(resolution: Resolution, grid: &[Vec3]) -> Tensor {
    let r = resolution.get();
    let rr = r * r;
    let mut data = vec![0.0; 3 * rr];
    for (i, p) in grid.iter().enumerate() {
        for c in 0..3 {
            data[c * rr + i] = p[c];
        }
    }
    Tensor::new(vec![1, 3, r, r], data).expect("consistent dims")
}

fn tensor_to_grid(t: &Tensor) -> Result<(Resolution, Vec<Vec3>)> {
    let (n, c, h, w) = t.nchw()?;
    if n != 1 || c != 3 || h != w {
        return Err(Error::dim("uv_map", format!("expected 1x3xRxR, got {:?}", t.dims())));
    }
    let resolution = Resolution::new(h)?;
    let rr = h * w;
    let grid = (0..rr)
        .map(|i| [t.data()[i], t.data()[rr + i], t.data()[2 * rr + i]])
        .collect();
    Ok((resolution, grid))
}

/// UV coordinates used for a cloud: its reference UVs when present, else
/// [`sphere_uv`] of the normalized shape.
pub fn cloud_uvs(cloud: &PointCloud) -> Vec<[f64; 2]> {
    match cloud.uvs() {
        Some(uv) => uv.to_vec(),
        None => {
            let (norm, _, _) = cloud.normalized();
            norm.vertices().iter().map(|&p| sphere_uv(p)).collect()
        }
    }
}

const BARY_EPS: f64 = 1e-9;

/// Barycentric weights of `p` in the UV triangle `(a, b, c)`, or `None`
/// when outside or degenerate.
fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<[f64; 3]> {
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if det.abs() < 1e-15 {
        return None;
    }
    let l0 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l1 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    let l2 = 1.0 - l0 - l1;
    (l0 >= -BARY_EPS && l1 >= -BARY_EPS && l2 >= -BARY_EPS).then_some([l0, l1, l2])
}

/// xyz of the first triangle covering UV point `uv`, interpolated
/// barycentrically.
pub fn interpolate_uv(cloud: &PointCloud, uv: [f64; 2]) -> Option<Vec3> {
    let uvs = cloud_uvs(cloud);
    cloud.triangles().iter().find_map(|&[i, j, k]| {
        let w = barycentric(uv, uvs[i], uvs[j], uvs[k])?;
        Some(blend(cloud.vertices(), [i, j, k], w))
    })
}

fn blend(v: &[Vec3], idx: [usize; 3], w: [f64; 3]) -> Vec3 {
    let mut out = [0.0; 3];
    for (k, &i) in idx.iter().enumerate() {
        for c in 0..3 {
            out[c] += w[k] * v[i][c];
        }
    }
    out
}

/// Rasterizes a cloud into UV space.
///
/// With triangles, each texel center covered by a UV triangle receives the
/// barycentric blend of the corner coordinates (first covering triangle
/// wins; zero-area triangles are skipped). Without triangles, each vertex
/// is scattered to its nearest texel, and the vertex closest to the texel
/// center wins.
pub fn build_position_map(cloud: &PointCloud, resolution: Resolution) -> UVPositionMap {
    let uvs = cloud_uvs(cloud);
    let mut map = UVPositionMap::empty(resolution);
    let r = resolution.get();
    let max = (r - 1) as f64;
    if cloud.triangles().is_empty() {
        let mut best = vec![f64::INFINITY; r * r];
        for (p, &uv) in cloud.vertices().iter().zip(&uvs) {
            let (row, col) = resolution.texel_of(uv);
            let c = resolution.uv_of(row, col);
            let d = (c[0] - uv[0]).powi(2) + (c[1] - uv[1]).powi(2);
            let i = row * r + col;
            if d < best[i] {
                best[i] = d;
                map.set(row, col, *p);
            }
        }
        return map;
    }
    for &[i, j, k] in cloud.triangles() {
        let (a, b, c) = (uvs[i], uvs[j], uvs[k]);
        let col_lo = (a[0].min(b[0]).min(c[0]) * max).floor().max(0.0) as usize;
        let col_hi = (a[0].max(b[0]).max(c[0]) * max).ceil().min(max) as usize;
        let row_lo = ((1.0 - a[1].max(b[1]).max(c[1])) * max).floor().max(0.0) as usize;
        let row_hi = ((1.0 - a[1].min(b[1]).min(c[1])) * max).ceil().min(max) as usize;
        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                if map.valid[row * r + col] {
                    continue;
                }
                if let Some(w) = barycentric(resolution.uv_of(row, col), a, b, c) {
                    map.set(row, col, blend(cloud.vertices(), [i, j, k], w));
                }
            }
        }
    }
    map
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: [f64; 2], b: [f64; 2]) -> bool {
        (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12
    }

    #[test]
    fn sphere_uv_unit_cases() {
        assert!(close(sphere_uv([1.0, 0.0, 0.0]), [0.0, 0.5]));
        assert!(close(sphere_uv([0.0, 0.0, 1.0]), [0.5, 0.5]));
        assert!(close(sphere_uv([-1.0, 0.0, 0.0]), [1.0, 0.5]));
        assert!(close(sphere_uv([0.0, 1.0, 0.0]), [0.5, 1.0]));
        assert!(close(sphere_uv([0.0, -1.0, 0.0]), [0.5, 0.0]));
    }

    #[test]
    fn resolution_rules() {
        assert!(Resolution::new(48).is_err());
        let r = Resolution::new(256).unwrap();
        assert_eq!(r.texel_of([0.5, 0.5]), (128, 128));
        assert_eq!(r.snap(0.0), 0);
        assert_eq!(r.snap(1.0), 255);
        let (row, col) = r.texel_of(r.uv_of(17, 201));
        assert_eq!((row, col), (17, 201));
    }

    #[test]
    fn full_square_triangle_interpolates_linearly() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
            .unwrap()
            .with_uvs(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
            .unwrap()
            .with_triangles(vec![[0, 1, 2]])
            .unwrap();
        let p = interpolate_uv(&cloud, [0.5, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && p[1].abs() < 1e-12 && p[2] == 0.0);

        let res = Resolution::new(32).unwrap();
        let map = build_position_map(&cloud, res);
        for row in 0..32 {
            for col in 0..32 {
                let [u, v] = res.uv_of(row, col);
                match map.get(row, col) {
                    Some(p) => {
                        assert!(u + v <= 1.0 + 1e-9);
                        assert!((p[0] - u).abs() < 1e-12 && (p[1] - v).abs() < 1e-12);
                    }
                    None => assert!(u + v > 1.0),
                }
            }
        }
    }

    #[test]
    fn degenerate_triangles_are_skipped() {
        let cloud = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
            .unwrap()
            .with_uvs(vec![[0.1, 0.1], [0.5, 0.5], [0.9, 0.9]])
            .unwrap()
            .with_triangles(vec![[0, 1, 2]])
            .unwrap();
        assert_eq!(build_position_map(&cloud, Resolution::new(32).unwrap()).valid_count(), 0);
    }

    #[test]
    fn scatter_single_vertex() {
        let cloud = PointCloud::new(vec![[0.3, 0.2, 0.1], [0.3, 0.2, 0.1], [0.3, 0.2, 0.1]])
            .unwrap()
            .with_uvs(vec![[0.5, 0.5]; 3])
            .unwrap();
        let map = build_position_map(&cloud, Resolution::new(256).unwrap());
        assert_eq!(map.valid_count(), 1);
        assert_eq!(map.get(128, 128), Some([0.3, 0.2, 0.1]));
    }

    fn half_visible(res: Resolution) -> UVTextureMap {
        let r = res.get();
        let mut grid = vec![[0.0; 3]; r * r];
        let mut vis = vec![false; r * r];
        for row in 0..r {
            for col in 0..r / 2 {
                grid[row * r + col] = [0.2, 0.4, (row as f64) / r as f64];
                vis[row * r + col] = true;
            }
        }
        UVTextureMap::new(res, grid, vis).unwrap()
    }

    #[test]
    fn flip_moves_visibility_across() {
        let res = Resolution::new(32).unwrap();
        let m = half_visible(res);
        let f = flip_uv(&m);
        for row in 0..32 {
            for col in 0..32 {
                assert_eq!(f.visibility()[row * 32 + col], col >= 16);
            }
        }
        assert_eq!(flip_uv(&f), m);
    }

    #[test]
    fn symmetric_map_is_flip_fixed_point() {
        let res = Resolution::new(32).unwrap();
        let grid = (0..32 * 32)
            .map(|i| {
                let (row, col) = (i / 32, i % 32);
                let d = (col as f64 - 15.5).abs();
                [d / 16.0, row as f64 / 32.0, 0.5]
            })
            .collect();
        let m = UVTextureMap::new(res, grid, vec![true; 1024]).unwrap();
        assert_eq!(flip_uv(&m), m);
    }

    #[test]
    fn texture_clamps_and_zeroes_invisible() {
        let res = Resolution::new(32).unwrap();
        let mut grid = vec![[2.0, -1.0, 0.5]; 1024];
        grid[1] = [0.7; 3];
        let mut vis = vec![true; 1024];
        vis[1] = false;
        let m = UVTextureMap::new(res, grid, vis).unwrap();
        assert_eq!(m.grid()[0], [1.0, 0.0, 0.5]);
        assert_eq!(m.grid()[1], [0.0; 3]);
    }

    #[test]
    fn normals_of_a_dome_point_outward() {
        let res = Resolution::new(32).unwrap();
        let mut map = UVPositionMap::empty(res);
        for row in 4..28 {
            for col in 4..28 {
                let [u, v] = res.uv_of(row, col);
                let (az, pol) = (PI * u, PI * (1.0 - v));
                map.set(row, col, [az.cos() * pol.sin(), pol.cos(), az.sin() * pol.sin()]);
            }
        }
        let normals = map.normals();
        for row in 5..27 {
            for col in 5..27 {
                let n = normals[row * 32 + col].unwrap();
                let p = map.get(row, col).unwrap();
                assert!(dot(n, p) > 0.95, "({row},{col}) {n:?} {p:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn sphere_uv_stays_in_unit_square(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            let n = (x * x + y * y + z * z).sqrt().max(1.0);
            let [u, v] = sphere_uv([x / n, y / n, z / n]);
            prop_assert!((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v));
        }

        #[test]
        fn tensor_round_trip(seed in 0u64..1000) {
            let res = Resolution::new(32).unwrap();
            let grid: Vec<Vec3> = (0..1024).map(|i| {
                let k = ((i as u64 * 2654435761 + seed) % 997) as f64 / 997.0;
                [k, 1.0 - k, 0.5 * k]
            }).collect();
            let m = UVTextureMap::new(res, grid, vec![true; 1024]).unwrap();
            prop_assert_eq!(UVTextureMap::from_tensor(&m.to_tensor()).unwrap(), m);
        }
    }
}
