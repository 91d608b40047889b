//! Point clouds and the OBJ / XYZ formats they are read from.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// `N×3` vertex coordinates with optional per-vertex colors, reference UV
/// coordinates and triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    vertices: Vec<Vec3>,
    colors: Option<Vec<Vec3>>,
    uvs: Option<Vec<[f64; 2]>>,
    triangles: Vec<[usize; 3]>,
}

impl PointCloud {
    pub fn new(vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "point cloud needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some(i) = vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidInput(format!("vertex {i} has a non-finite coordinate")));
        }
        Ok(PointCloud {
            vertices,
            colors: None,
            uvs: None,
            triangles: Vec::new(),
        })
    }

    pub fn with_triangles(mut self, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = self.vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidInput(format!("triangle {t:?} indexes past {n} vertices")));
        }
        self.triangles = triangles;
        Ok(self)
    }

    pub fn with_uvs(mut self, uvs: Vec<[f64; 2]>) -> Result<Self> {
        if uvs.len() != self.vertices.len() {
            return Err(Error::InvalidInput(format!(
                "{} UV coordinates for {} vertices",
                uvs.len(),
                self.vertices.len()
            )));
        }
        self.uvs = Some(uvs);
        Ok(self)
    }

    pub fn with_colors(mut self, colors: Vec<Vec3>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::InvalidInput(format!(
                "{} colors for {} vertices",
                colors.len(),
                self.vertices.len()
            )));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn colors(&self) -> Option<&[Vec3]> {
        self.colors.as_deref()
    }

    pub fn uvs(&self) -> Option<&[[f64; 2]]> {
        self.uvs.as_deref()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.vertices.len() as f64;
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for k in 0..3 {
                c[k] += v[k];
            }
        }
        c.map(|x| x / n)
    }

    /// Same topology and attributes with vertices mapped through `f`.
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        PointCloud {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Translates to the centroid and scales by the largest vertex norm so
    /// every vertex lies in the unit ball. Returns the centroid and scale.
    pub fn normalized(&self) -> (Self, Vec3, f64) {
        let c = self.centroid();
        let centered: Vec<Vec3> = self
            .vertices
            .iter()
            .map(|v| [v[0] - c[0], v[1] - c[1], v[2] - c[2]])
            .collect();
        let r = centered
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max);
        let s = if r > 0.0 { 1.0 / r } else { 1.0 };
        let cloud = PointCloud {
            vertices: centered.iter().map(|v| v.map(|x| x * s)).collect(),
            ..self.clone()
        };
        (cloud, c, s)
    }

    /// Parses `v x y z [r g b]`, `vt u v` and `f a[/t[/n]] b c ...` lines.
    /// Polygons are fanned into triangles; negative indices count from the
    /// end. A vertex takes the UV of the first face corner referencing it.
    pub fn parse_obj(text: &str, origin: &Path) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::format(origin, format!("line {}: {msg}", line + 1));
        let mut verts = Vec::new();
        let mut colors = Vec::new();
        let mut tex = Vec::new();
        let mut faces: Vec<Vec<(usize, Option<usize>)>> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let nums: Vec<f64> = parts
                        .map(str::parse)
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad(ln, "malformed vertex"))?;
                    if nums.len() != 3 && nums.len() != 6 {
                        return Err(bad(ln, "vertex needs 3 coordinates (plus optional rgb)"));
                    }
                    verts.push([nums[0], nums[1], nums[2]]);
                    if nums.len() == 6 {
                        colors.push([nums[3], nums[4], nums[5]]);
                    }
                }
                Some("vt") => {
                    let nums: Vec<f64> = parts
                        .map(str::parse)
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad(ln, "malformed texture coordinate"))?;
                    if nums.len() < 2 {
                        return Err(bad(ln, "texture coordinate needs u and v"));
                    }
                    tex.push([nums[0], nums[1]]);
                }
                Some("f") => {
                    let mut corners = Vec::new();
                    for c in parts {
                        let mut fields = c.split('/');
                        let vi = resolve(fields.next(), verts.len()).ok_or_else(|| bad(ln, "bad face vertex index"))?;
                        let ti = match fields.next() {
                            Some("") | None => None,
                            Some(s) => Some(resolve(Some(s), tex.len()).ok_or_else(|| bad(ln, "bad face uv index"))?),
                        };
                        corners.push((vi, ti));
                    }
                    if corners.len() < 3 {
                        return Err(bad(ln, "face needs at least 3 corners"));
                    }
                    faces.push(corners);
                }
                _ => {}
            }
        }
        let mut cloud = PointCloud::new(verts).map_err(|e| Error::format(origin, e.to_string()))?;
        if !colors.is_empty() {
            if colors.len() != cloud.len() {
                return Err(Error::format(origin, "either all or no vertices carry colors"));
            }
            cloud.colors = Some(colors);
        }
        let mut uv: Vec<Option<[f64; 2]>> = vec![None; cloud.len()];
        let mut tris = Vec::new();
        for f in &faces {
            for &(vi, ti) in f {
                if let (Some(t), None) = (ti, uv[vi]) {
                    uv[vi] = Some(tex[t]);
                }
            }
            for k in 1..f.len() - 1 {
                tris.push([f[0].0, f[k].0, f[k + 1].0]);
            }
        }
        if uv.iter().all(Option::is_some) {
            cloud.uvs = Some(uv.into_iter().flatten().collect());
        } else if faces.is_empty() && tex.len() == cloud.len() {
            cloud.uvs = Some(tex);
        }
        cloud.triangles = tris;
        Ok(cloud)
    }

    /// Whitespace-separated `x y z [r g b]` rows; `#` starts a comment.
    pub fn parse_xyz(text: &str, origin: &Path) -> Result<Self> {
        let mut verts = Vec::new();
        let mut colors = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| Error::format(origin, format!("line {}: malformed number", ln + 1)))?;
            match nums.len() {
                3 => verts.push([nums[0], nums[1], nums[2]]),
                6 => {
                    verts.push([nums[0], nums[1], nums[2]]);
                    colors.push([nums[3], nums[4], nums[5]]);
                }
                k => return Err(Error::format(origin, format!("line {}: expected 3 or 6 columns, got {k}", ln + 1))),
            }
        }
        let mut cloud = PointCloud::new(verts).map_err(|e| Error::format(origin, e.to_string()))?;
        if !colors.is_empty() {
            if colors.len() != cloud.len() {
                return Err(Error::format(origin, "either all or no rows carry colors"));
            }
            cloud.colors = Some(colors);
        }
        Ok(cloud)
    }

    /// Reads `.obj` or `.xyz` (by extension; anything else is parsed as XYZ).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("obj") => Self::parse_obj(&text, path),
            _ => Self::parse_xyz(&text, path),
        }
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.vertices.iter().enumerate() {
            match &self.colors {
                Some(c) => {
                    let c = c[i];
                    let _ = writeln!(s, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2]);
                }
                None => {
                    let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
                }
            }
        }
        if let Some(uvs) = &self.uvs {
            for t in uvs {
                let _ = writeln!(s, "vt {} {}", t[0], t[1]);
            }
        }
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| i + 1);
            if self.uvs.is_some() {
                let _ = writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}");
            } else {
                let _ = writeln!(s, "f {a} {b} {c}");
            }
        }
        s
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_obj())?;
        Ok(())
    }
}

fn resolve(field: Option<&str>, count: usize) -> Option<usize> {
    let i: i64 = field?.parse().ok()?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return None;
    };
    (0..count as i64).contains(&idx).then_some(idx as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_clouds() {
        assert!(PointCloud::new(vec![[0.0; 3]; 2]).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0], [0.0; 3], [1.0; 3]]).is_err());
        let c = PointCloud::new(vec![[0.0; 3]; 3]).unwrap();
        assert!(c.with_triangles(vec![[0, 1, 3]]).is_err());
    }

    #[test]
    fn obj_with_uvs_and_quads() {
        let text = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1/1 2/2 3/3 4/4\n";
        let c = PointCloud::parse_obj(text, Path::new("q.obj")).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.triangles(), &[[0, 1, 2], [0, 2, 3]]);
        assert_eq!(c.uvs().unwrap()[2], [1.0, 1.0]);
        let back = PointCloud::parse_obj(&c.to_obj(), Path::new("q.obj")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn obj_negative_indices_and_errors() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n";
        let c = PointCloud::parse_obj(text, Path::new("n.obj")).unwrap();
        assert_eq!(c.triangles(), &[[0, 1, 2]]);
        assert!(c.uvs().is_none());
        assert!(PointCloud::parse_obj("v 0 0\n", Path::new("x.obj")).is_err());
        assert!(PointCloud::parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", Path::new("x.obj")).is_err());
    }

    #[test]
    fn xyz_parsing() {
        let c = PointCloud::parse_xyz("0 0 0 1 0 0\n1 0 0 0 1 0\n# c\n0 1 0 0 0 1\n", Path::new("a.xyz")).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.colors().unwrap()[1], [0.0, 1.0, 0.0]);
        assert!(PointCloud::parse_xyz("0 0\n", Path::new("a.xyz")).is_err());
    }

    #[test]
    fn normalization_fits_unit_ball() {
        let c = PointCloud::new(vec![[2.0, 0.0, 0.0], [4.0, 0.0, 0.0], [3.0, 3.0, 0.0]]).unwrap();
        let (n, centroid, _) = c.normalized();
        assert_eq!(centroid, [3.0, 1.0, 0.0]);
        let max = n.vertices().iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
    }
}
