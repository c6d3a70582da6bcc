//! RANSAC extraction of static structure (floor, ceiling, walls).

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cloud::{PointCloud, Vec3};
use super::normals::plane_normal;

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneModel {
    /// Unit normal, pointing toward the side holding most of the scene.
    pub normal: Vec3,
    /// Plane is `normal . x + offset = 0`.
    pub offset: f64,
    pub inliers: Vec<usize>,
}

impl PlaneModel {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    /// True when the normal is within `gate` radians of +z or -z.
    pub fn is_horizontal(&self, gate: f64) -> bool {
        self.normal.z.abs() >= gate.cos()
    }

    /// Height of the plane above `(x, y)`; `None` for vertical planes.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        if self.normal.z.abs() < 1e-6 {
            return None;
        }
        Some(-(self.normal.x * x + self.normal.y * y + self.offset) / self.normal.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaticDetectionConfig {
    /// Maximum point-to-plane distance of an inlier (m).
    pub inlier_thresh: f64,
    /// A plane must hold at least this fraction of the remaining points.
    pub min_inlier_frac: f64,
    pub iterations: usize,
    pub max_planes: usize,
    /// Orientation tolerance for floor/ceiling and wall planes (degrees).
    pub angle_gate_deg: f64,
    /// Largest fraction of scene points allowed behind an accepted plane.
    pub bounding_tolerance: f64,
    /// Minimum inlier extent relative to the scene extent along the plane.
    pub min_extent_frac: f64,
    /// Points used to score RANSAC hypotheses.
    pub sample_size: usize,
    /// When the cloud has normals, an inlier is only marked static if its
    /// normal is within this angle (degrees) of the plane normal.
    pub normal_gate_deg: f64,
    pub seed: u64,
}

impl Default for StaticDetectionConfig {
    fn default() -> Self {
        Self {
            inlier_thresh: 0.015,
            min_inlier_frac: 0.05,
            iterations: 300,
            max_planes: 12,
            angle_gate_deg: 10.0,
            bounding_tolerance: 0.02,
            min_extent_frac: 0.4,
            sample_size: 4000,
            normal_gate_deg: 45.0,
            seed: 0x57a7_1c,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StaticDetection {
    pub mask: Vec<bool>,
    pub planes: Vec<PlaneModel>,
}

impl StaticDetection {
    /// Lowest upward-facing horizontal plane.
    pub fn floor(&self, gate_deg: f64) -> Option<&PlaneModel> {
        let gate = gate_deg.to_radians();
        self.planes
            .iter()
            .filter(|p| p.is_horizontal(gate) && p.normal.z > 0.0)
            .min_by(|a, b| {
                let ha = a.height_at(0.0, 0.0).unwrap_or(f64::INFINITY);
                let hb = b.height_at(0.0, 0.0).unwrap_or(f64::INFINITY);
                ha.total_cmp(&hb)
            })
    }

    pub fn static_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn fit_plane(points: &[Vec3], ids: &[usize]) -> Option<(Vec3, f64)> {
    if ids.len() < 3 {
        return None;
    }
    let mean: Vec3 = ids.iter().map(|&i| points[i]).sum::<Vec3>() / ids.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in ids {
        let d = points[i] - mean;
        cov += d * d.transpose();
    }
    let n = plane_normal(&cov)?;
    Some((n, -n.dot(&mean)))
}

fn plane_from_three(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(Vec3, f64)> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len < 1e-12 {
        return None;
    }
    let n = n / len;
    Some((n, -n.dot(a)))
}

/// Extracts large planes largest-first and keeps the ones that look like
/// floor, ceiling or walls.
///
/// A plane is accepted as static when its normal is within the angle gate
/// of gravity (floor/ceiling) or of horizontal (walls), it bounds the scene
/// (almost no points behind it), and its inliers span a large part of the
/// scene along the plane. Zero planes is a valid result.
pub fn detect_static(cloud: &PointCloud, cfg: &StaticDetectionConfig) -> StaticDetection {
    let points = cloud.points();
    let mut result = StaticDetection {
        mask: vec![false; points.len()],
        planes: Vec::new(),
    };
    let Some((lo, hi)) = cloud.bounds() else {
        return result;
    };
    let gate = cfg.angle_gate_deg.to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut remaining: Vec<usize> = (0..points.len()).collect();

    for _ in 0..cfg.max_planes {
        if remaining.len() < 3 {
            break;
        }
        let stride = remaining.len().div_ceil(cfg.sample_size.max(3));
        let sample: Vec<usize> = remaining.iter().copied().step_by(stride).collect();
        if sample.len() < 3 {
            break;
        }

        let mut best: Option<((Vec3, f64), usize)> = None;
        for _ in 0..cfg.iterations {
            let a = sample[rng.gen_range(0..sample.len())];
            let b = sample[rng.gen_range(0..sample.len())];
            let c = sample[rng.gen_range(0..sample.len())];
            let Some((n, d)) = plane_from_three(&points[a], &points[b], &points[c]) else {
                continue;
            };
            let count = sample
                .iter()
                .filter(|&&i| (n.dot(&points[i]) + d).abs() <= cfg.inlier_thresh)
                .count();
            if best.is_none_or(|(_, c)| count > c) {
                best = Some(((n, d), count));
            }
        }
        let Some(((mut n, mut d), count)) = best else {
            break;
        };
        if (count as f64) < cfg.min_inlier_frac * sample.len() as f64 {
            break;
        }

        let select = |n: &Vec3, d: f64| -> Vec<usize> {
            remaining
                .iter()
                .copied()
                .filter(|&i| (n.dot(&points[i]) + d).abs() <= cfg.inlier_thresh)
                .collect()
        };
        for _ in 0..3 {
            match fit_plane(points, &select(&n, d)) {
                Some((rn, rd)) => {
                    n = rn;
                    d = rd;
                }
                None => break,
            }
        }
        let inliers = select(&n, d);
        if inliers.is_empty()
            || (inliers.len() as f64) < cfg.min_inlier_frac * remaining.len() as f64
        {
            break;
        }

        // orient toward the bulk of the scene
        let (mut front, mut back) = (0usize, 0usize);
        for p in points {
            let s = n.dot(p) + d;
            if s > 2.0 * cfg.inlier_thresh {
                front += 1;
            } else if s < -2.0 * cfg.inlier_thresh {
                back += 1;
            }
        }
        if back > front {
            n = -n;
            d = -d;
            std::mem::swap(&mut front, &mut back);
        }

        let horizontal = n.z.abs() >= gate.cos();
        let vertical = n.z.abs() <= gate.sin();
        let bounding = (back as f64) <= cfg.bounding_tolerance * points.len() as f64;
        let wide = if horizontal {
            let (ilo, ihi) = extent(points, &inliers);
            let span = (ihi - ilo).xy();
            let scene = (hi - lo).xy();
            span.x >= cfg.min_extent_frac * scene.x || span.y >= cfg.min_extent_frac * scene.y
        } else if vertical {
            let along = Vec3::z().cross(&n).normalize();
            let project = |ids: &mut dyn Iterator<Item = Vec3>| {
                ids.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                    let t = along.dot(&p);
                    (a.min(t), b.max(t))
                })
            };
            let (a0, a1) = project(&mut inliers.iter().map(|&i| points[i]));
            let (s0, s1) = project(&mut points.iter().copied());
            a1 - a0 >= cfg.min_extent_frac * (s1 - s0)
        } else {
            false
        };

        let mut taken = inliers.clone();
        if (horizontal || vertical) && bounding && wide {
            let cos_gate = cfg.normal_gate_deg.to_radians().cos();
            // off-orientation inliers stay available to other planes
            if let Some(ns) = cloud.normals() {
                taken.retain(|&i| ns[i].dot(&n).abs() >= cos_gate);
            }
            if taken.is_empty() {
                taken = inliers;
                drop_from_pool(&mut remaining, &taken, points.len());
                continue;
            }
            for &i in &taken {
                result.mask[i] = true;
            }
            result.planes.push(PlaneModel {
                normal: n,
                offset: d,
                inliers: taken.clone(),
            });
        }

        drop_from_pool(&mut remaining, &taken, points.len());
    }
    result
}

fn drop_from_pool(remaining: &mut Vec<usize>, taken: &[usize], n: usize) {
    let mut is_taken = vec![false; n];
    for &i in taken {
        is_taken[i] = true;
    }
    remaining.retain(|&i| !is_taken[i]);
}

fn extent(points: &[Vec3], ids: &[usize]) -> (Vec3, Vec3) {
    ids.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), &i| (lo.inf(&points[i]), hi.sup(&points[i])),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn floor_and_box() -> (PointCloud, Vec<bool>) {
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        let s = 0.02;
        for i in 0..150 {
            for j in 0..150 {
                pts.push(Vec3::new(i as f64 * s, j as f64 * s, 0.0));
                truth.push(true);
            }
        }
        // box 0.4 x 0.4 x 0.5 centred at (1.5, 1.5), sides and top
        let (x0, y0, h, w) = (1.3, 1.3, 0.5, 0.4);
        let n = (w / s) as usize;
        let m = (h / s) as usize;
        for a in 0..=n {
            for b in 1..=m {
                let u = a as f64 * s;
                let z = b as f64 * s;
                pts.push(Vec3::new(x0 + u, y0, z));
                pts.push(Vec3::new(x0 + u, y0 + w, z));
                pts.push(Vec3::new(x0, y0 + u, z));
                pts.push(Vec3::new(x0 + w, y0 + u, z));
                truth.extend([false; 4]);
            }
            for b in 0..=n {
                pts.push(Vec3::new(x0 + a as f64 * s, y0 + b as f64 * s, h));
                truth.push(false);
            }
        }
        (PointCloud::new(pts).unwrap(), truth)
    }

    #[test]
    fn floor_is_static_box_is_not() {
        let (cloud, truth) = floor_and_box();
        let det = detect_static(&cloud, &StaticDetectionConfig::default());
        assert_eq!(det.planes.len(), 1);
        assert!(det.planes[0].normal.z > 0.99);
        for (i, (&m, &t)) in det.mask.iter().zip(&truth).enumerate() {
            if t {
                assert!(m, "floor point {i} not static");
            } else {
                // box points within the inlier threshold of the floor may be taken
                let z = cloud.points()[i].z;
                assert!(!m || z <= 0.015, "box point {i} masked static");
            }
        }
        let floor = det.floor(10.0).unwrap();
        assert!(floor.height_at(1.0, 1.0).unwrap().abs() < 1e-9);
    }

    #[test]
    fn normals_keep_object_feet_dynamic() {
        let (cloud, truth) = floor_and_box();
        let cloud = crate::geometry::estimate_normals(&cloud, 8).unwrap().cloud;
        let det = detect_static(&cloud, &StaticDetectionConfig::default());
        let wrong = det
            .mask
            .iter()
            .zip(&truth)
            .filter(|(&m, &t)| m && !t)
            .count();
        assert_eq!(wrong, 0);
    }

    #[test]
    fn inliers_respect_threshold() {
        let (cloud, _) = floor_and_box();
        let cfg = StaticDetectionConfig::default();
        let det = detect_static(&cloud, &cfg);
        for plane in &det.planes {
            assert!((plane.normal.norm() - 1.0).abs() < 1e-6);
            for &i in &plane.inliers {
                assert!(plane.signed_distance(&cloud.points()[i]).abs() <= cfg.inlier_thresh);
            }
        }
    }

    #[test]
    fn unstructured_cloud_has_no_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec3> = (0..3000)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let det = detect_static(&PointCloud::new(pts).unwrap(), &StaticDetectionConfig::default());
        assert!(det.planes.is_empty());
        assert!(det.mask.iter().all(|m| !m));
    }

    #[test]
    fn tilted_plane_rejected() {
        let pts: Vec<Vec3> = (0..100)
            .flat_map(|i| {
                (0..100).map(move |j| {
                    let u = i as f64 * 0.02;
                    Vec3::new(u, j as f64 * 0.02, u) // 45 degrees
                })
            })
            .collect();
        let det = detect_static(&PointCloud::new(pts).unwrap(), &StaticDetectionConfig::default());
        assert!(det.planes.is_empty());
        assert_eq!(det.static_count(), 0);
    }
}
