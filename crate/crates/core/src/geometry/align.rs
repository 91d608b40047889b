//! Landmark similarity fit followed by rigid ICP refinement.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

use super::cloud::{PointCloud, Vec3};

pub const ICP_MAX_ITERS: usize = 50;
pub const ICP_MIN_IMPROVEMENT: f64 = 1e-6;

/// `p ↦ scale · R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Scale, yaw about `y` in degrees, then translation.
    pub fn from_scale_yaw_translation(scale: f64, yaw_deg: f64, t: Vec3) -> Self {
        let (s, c) = yaw_deg.to_radians().sin_cos();
        Similarity {
            scale,
            rotation: Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            translation: Vector3::from(t),
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        (self.scale * self.rotation * Vector3::from(p) + self.translation).into()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &Similarity) -> Similarity {
        Similarity {
            scale: self.scale * inner.scale,
            rotation: self.rotation * inner.rotation,
            translation: self.scale * self.rotation * inner.translation + self.translation,
        }
    }

    /// Yaw angle in degrees, assuming a rotation about `y`.
    pub fn yaw_deg(&self) -> f64 {
        self.rotation[(0, 2)].atan2(self.rotation[(0, 0)]).to_degrees()
    }
}

/// Closed-form least-squares similarity mapping `src` onto `dst`
/// (Umeyama). With `with_scale = false` the scale is fixed at 1 (Kabsch).
pub fn fit_similarity(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<Similarity> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 paired points, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let mu = |pts: &[Vec3]| pts.iter().map(|&p| Vector3::from(p)).sum::<Vector3<f64>>() / n;
    let (ms, md) = (mu(src), mu(dst));
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    let mut scatter = Matrix3::zeros();
    for (&a, &b) in src.iter().zip(dst) {
        let a = Vector3::from(a) - ms;
        let b = Vector3::from(b) - md;
        cov += b * a.transpose();
        scatter += a * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    let spread = scatter.symmetric_eigenvalues();
    let mut ev: Vec<f64> = spread.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate("landmarks are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let scale = if with_scale {
        let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
        trace / var_s
    } else {
        1.0
    };
    let translation = md - scale * rotation * ms;
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

/// Outcome of [`align_shape`].
#[derive(Clone, Debug)]
pub struct Alignment {
    pub transform: Similarity,
    pub aligned: PointCloud,
    pub rmse: f64,
    /// RMSE after the landmark fit and after each accepted ICP step.
    pub history: Vec<f64>,
}

fn nearest(p: Vec3, pts: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, q) in pts.iter().enumerate() {
        let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn correspond(moved: &[Vec3], reference: &[Vec3]) -> (Vec<Vec3>, f64) {
    let mut matched = Vec::with_capacity(moved.len());
    let mut sq = 0.0;
    for &p in moved {
        let (i, d) = nearest(p, reference);
        matched.push(reference[i]);
        sq += d;
    }
    (matched, (sq / moved.len() as f64).sqrt())
}

/// Aligns `source` to `reference`: a similarity fit on the landmark pairs
/// `(source index, reference index)`, then rigid ICP with nearest-neighbor
/// correspondences. ICP stops after [`ICP_MAX_ITERS`] steps, when a step
/// improves RMSE by less than [`ICP_MIN_IMPROVEMENT`], or before a step
/// that would increase it.
pub fn align_shape(source: &PointCloud, reference: &PointCloud, landmarks: &[(usize, usize)]) -> Result<Alignment> {
    let (sv, rv) = (source.vertices(), reference.vertices());
    for &(i, j) in landmarks {
        if i >= sv.len() || j >= rv.len() {
            return Err(Error::InvalidInput(format!("landmark pair ({i}, {j}) out of range")));
        }
    }
    let src: Vec<Vec3> = landmarks.iter().map(|&(i, _)| sv[i]).collect();
    let dst: Vec<Vec3> = landmarks.iter().map(|&(_, j)| rv[j]).collect();
    let mut transform = fit_similarity(&src, &dst, true)?;

    let mut moved: Vec<Vec3> = sv.iter().map(|&p| transform.apply(p)).collect();
    let (mut matched, mut rmse) = correspond(&moved, rv);
    let mut history = vec![rmse];
    for _ in 0..ICP_MAX_ITERS {
        if rmse == 0.0 {
            break;
        }
        let step = match fit_similarity(&moved, &matched, false) {
            Ok(s) => s,
            Err(_) => break,
        };
        let next: Vec<Vec3> = moved.iter().map(|&p| step.apply(p)).collect();
        let (next_matched, next_rmse) = correspond(&next, rv);
        if next_rmse > rmse {
            break;
        }
        let improvement = rmse - next_rmse;
        transform = step.compose(&transform);
        moved = next;
        matched = next_matched;
        rmse = next_rmse;
        history.push(rmse);
        if improvement < ICP_MIN_IMPROVEMENT {
            break;
        }
    }
    let aligned = source.map_vertices(|p| transform.apply(p));
    Ok(Alignment {
        transform,
        aligned,
        rmse,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> Vec<Vec3> {
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.3, 0.7, 0.2]]
    }

    #[test]
    fn identity_alignment() {
        let c = PointCloud::new(tetra()).unwrap();
        let lm: Vec<_> = (0..5).map(|i| (i, i)).collect();
        let a = align_shape(&c, &c, &lm).unwrap();
        assert!(a.rmse < 1e-12);
        assert!((a.transform.scale - 1.0).abs() < 1e-12);
        assert!((a.transform.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(a.transform.translation.norm() < 1e-12);
    }

    #[test]
    fn collinear_landmarks_rejected() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0], [3.0, 3.0, 3.0]];
        let c = PointCloud::new(pts).unwrap();
        let err = align_shape(&c, &c, &[(0, 0), (1, 1), (2, 2)]).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn compose_matches_sequential_application() {
        let a = Similarity::from_scale_yaw_translation(1.5, 30.0, [1.0, 0.0, -2.0]);
        let b = Similarity::from_scale_yaw_translation(0.7, -10.0, [0.5, 3.0, 0.0]);
        let p = [0.2, -0.4, 0.9];
        let x = a.apply(b.apply(p));
        let y = a.compose(&b).apply(p);
        for k in 0..3 {
            assert!((x[k] - y[k]).abs() < 1e-12);
        }
        assert!((a.yaw_deg() - 30.0).abs() < 1e-12);
    }

    #[test]
    fn reflection_is_not_returned() {
        let src = tetra();
        let dst: Vec<Vec3> = src.iter().map(|p| [-p[0], p[1], p[2]]).collect();
        let s = fit_similarity(&src, &dst, true).unwrap();
        assert!((s.rotation.determinant() - 1.0).abs() < 1e-9);
    }
}
