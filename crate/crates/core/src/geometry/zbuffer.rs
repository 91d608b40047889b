use super::cloud::Vec3;
use super::pose::Pose;

/// Per-vertex visibility flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibilityMask {
    visible: Vec<bool>,
}

impl VisibilityMask {
    pub fn from_flags(visible: Vec<bool>) -> Self {
        VisibilityMask { visible }
    }

    pub fn flags(&self) -> &[bool] {
        &self.visible
    }

    pub fn is_visible(&self, i: usize) -> bool {
        self.visible[i]
    }

    pub fn count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    /// Elementwise AND with another flag set of equal length.
    pub fn and(&self, other: &[bool]) -> Self {
        VisibilityMask {
            visible: self.visible.iter().zip(other).map(|(&a, &b)| a && b).collect(),
        }
    }
}

/// Projects every point and keeps, per occupied pixel, the one with the
/// largest camera-space depth. Equal depths resolve to the lowest index.
pub fn zbuffer_points(points: &[Vec3], pose: &Pose, width: usize, height: usize) -> VisibilityMask {
    let mut best: Vec<Option<(usize, f64)>> = vec![None; width * height];
    for (i, &p) in points.iter().enumerate() {
        if let Some((col, row, depth)) = pose.pixel(p, width, height) {
            let slot = &mut best[row * width + col];
            match slot {
                Some((_, d)) if *d >= depth => {}
                _ => *slot = Some((i, depth)),
            }
        }
    }
    let mut visible = vec![false; points.len()];
    for (i, _) in best.into_iter().flatten() {
        visible[i] = true;
    }
    VisibilityMask { visible }
}

/// Z-buffer visibility of a point cloud's vertices under `pose`.
pub fn zbuffer_visibility(cloud: &super::PointCloud, pose: &Pose, width: usize, height: usize) -> VisibilityMask {
    zbuffer_points(cloud.vertices(), pose, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointCloud;

    #[test]
    fn nearer_point_wins() {
        let c = PointCloud::new(vec![[0.0, 0.0, 0.5], [0.0, 0.0, 0.9], [5.0, -5.0, 0.0]]).unwrap();
        let m = zbuffer_visibility(&c, &Pose::identity(), 8, 8);
        assert_eq!(m.flags(), &[false, true, true]);
    }

    #[test]
    fn distinct_pixels_all_visible() {
        let pts: Vec<Vec3> = (0..10).map(|i| [i as f64, -2.0, -(i as f64)]).collect();
        let m = zbuffer_points(&pts, &Pose::identity(), 16, 16);
        assert_eq!(m.count(), 10);
    }

    #[test]
    fn outside_image_is_invisible() {
        let m = zbuffer_points(&[[-3.0, 0.0, 1.0], [0.0, 0.0, 0.0]], &Pose::identity(), 4, 4);
        assert_eq!(m.flags(), &[false, true]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = zbuffer_points(&[[1.0, -1.0, 0.3], [1.0, -1.0, 0.3]], &Pose::identity(), 4, 4);
        assert_eq!(m.flags(), &[true, false]);
    }
}
