use crate::error::{Error, Result};

use super::cloud::Vec3;

/// Weak-perspective camera: image point = `scale · (R·p)_xy + t`, with the
/// image row axis pointing down. Camera-space `z` of `R·p` is the depth;
/// larger values are nearer the camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    scale: f64,
    rotation: [[f64; 3]; 3],
    translation: [f64; 2],
}

/// Where a point lands in the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl Pose {
    pub fn new(scale: f64, rotation: [[f64; 3]; 3], translation: [f64; 2]) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!("pose scale must be positive, got {scale}")));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| rotation[i][k] * rotation[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-9 {
                    return Err(Error::InvalidInput("pose rotation is not orthonormal".into()));
                }
            }
        }
        if det3(&rotation) < 0.0 {
            return Err(Error::InvalidInput("pose rotation has determinant -1".into()));
        }
        Ok(Pose { scale, rotation, translation })
    }

    /// Rotation about the vertical axis by `yaw_deg` degrees, scaled so the
    /// unit ball spans 90% of the shorter image side and centered on the image.
    pub fn from_yaw(yaw_deg: f64, width: usize, height: usize) -> Self {
        Self::from_yaw_pitch(yaw_deg, 0.0, width, height)
    }

    /// Yaw about `y` followed by pitch about `x`, framed as [`from_yaw`](Self::from_yaw).
    pub fn from_yaw_pitch(yaw_deg: f64, pitch_deg: f64, width: usize, height: usize) -> Self {
        let (sy, cy) = yaw_deg.to_radians().sin_cos();
        let (sp, cp) = pitch_deg.to_radians().sin_cos();
        let yaw = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let pitch = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
        let rotation = matmul3(&pitch, &yaw);
        Pose {
            scale: 0.45 * width.min(height) as f64,
            rotation,
            translation: [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0],
        }
    }

    pub fn identity() -> Self {
        Pose {
            scale: 1.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0],
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> [f64; 2] {
        self.translation
    }

    pub fn rotate(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
        ]
    }

    pub fn project(&self, p: Vec3) -> Projected {
        let q = self.rotate(p);
        Projected {
            x: self.scale * q[0] + self.translation[0],
            y: self.translation[1] - self.scale * q[1],
            depth: q[2],
        }
    }

    /// Integer pixel `(col, row)` of a point, or `None` outside the image.
    pub fn pixel(&self, p: Vec3, width: usize, height: usize) -> Option<(usize, usize, f64)> {
        let pr = self.project(p);
        let (col, row) = (pr.x.round(), pr.y.round());
        (col >= 0.0 && row >= 0.0 && col < width as f64 && row < height as f64)
            .then_some((col as usize, row as usize, pr.depth))
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_rotation() {
        assert!(Pose::new(1.0, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]], [0.0; 2]).is_err());
        assert!(Pose::new(1.0, [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 2]).is_err());
        assert!(Pose::new(0.0, Pose::identity().rotation, [0.0; 2]).is_err());
        let p = Pose::from_yaw_pitch(33.0, -12.0, 64, 64);
        assert!(Pose::new(p.scale, p.rotation, p.translation).is_ok());
    }

    #[test]
    fn yaw_turns_the_face_sideways() {
        let p = Pose::from_yaw(90.0, 100, 100);
        let q = p.rotate([0.0, 0.0, 1.0]);
        assert!((q[0] - 1.0).abs() < 1e-12 && q[2].abs() < 1e-12);
        let f = Pose::from_yaw(0.0, 101, 101);
        let pr = f.project([0.0, 1.0, 0.0]);
        assert!((pr.x - 50.0).abs() < 1e-12 && (pr.y - (50.0 - 45.45)).abs() < 1e-9);
    }
}
