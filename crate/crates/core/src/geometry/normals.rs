use nalgebra::Matrix3;

use super::cloud::{PointCloud, Vec3};
use super::index::SpatialIndex;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    /// Points whose neighbourhood was fully coincident; their normal is +z.
    pub degenerate: Vec<usize>,
}

/// Flips `n` into the canonical hemisphere: `n.z >= 0`, ties broken by
/// `n.x >= 0`, then `n.y >= 0`.
pub fn orient_canonical(n: Vec3) -> Vec3 {
    const EPS: f64 = 1e-12;
    let flip = if n.z.abs() > EPS {
        n.z < 0.0
    } else if n.x.abs() > EPS {
        n.x < 0.0
    } else {
        n.y < 0.0
    };
    if flip {
        -n
    } else {
        n
    }
}

/// Smallest-eigenvalue direction of a covariance, or `None` when the
/// covariance vanishes.
pub(crate) fn plane_normal(cov: &Matrix3<f64>) -> Option<Vec3> {
    let eig = cov.symmetric_eigen();
    if eig.eigenvalues.max() <= 1e-18 {
        return None;
    }
    let i = eig.eigenvalues.imin();
    Some(eig.eigenvectors.column(i).into_owned().normalize())
}

/// PCA normals over each point's `k` nearest neighbours (plus itself).
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::InvalidParameter(format!("k must be >= 3, got {k}")));
    }
    if cloud.len() < k + 1 {
        return Err(Error::InsufficientPoints {
            needed: k + 1,
            got: cloud.len(),
        });
    }
    let points = cloud.points();
    let index = SpatialIndex::new(points);
    let mut normals = Vec::with_capacity(points.len());
    let mut degenerate = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let nbrs = index.k_nearest(p, k + 1);
        let mean: Vec3 = nbrs.iter().map(|n| points[n.index]).sum::<Vec3>() / nbrs.len() as f64;
        let mut cov = Matrix3::zeros();
        for n in &nbrs {
            let d = points[n.index] - mean;
            cov += d * d.transpose();
        }
        match plane_normal(&cov) {
            Some(n) => normals.push(orient_canonical(n)),
            None => {
                normals.push(Vec3::z());
                degenerate.push(i);
            }
        }
    }
    let mut out = cloud.clone();
    out.set_normals(normals)?;
    Ok(NormalEstimate {
        cloud: out,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn planar_points_get_plane_normal() {
        let pts: Vec<Vec3> = (0..20)
            .flat_map(|i| (0..20).map(move |j| Vec3::new(i as f64 * 0.01, j as f64 * 0.013, 0.0)))
            .collect();
        let est = estimate_normals(&PointCloud::new(pts).unwrap(), 8).unwrap();
        assert!(est.degenerate.is_empty());
        for n in est.cloud.normals().unwrap() {
            assert!((n - Vec3::z()).norm() < 1e-9, "{n:?}");
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..3000)
            .map(|_| {
                let v = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if v.norm() < 1e-3 {
                    Vec3::x()
                } else {
                    v.normalize()
                }
            })
            .collect();
        let est = estimate_normals(&PointCloud::new(pts.clone()).unwrap(), 12).unwrap();
        let max_angle = 5f64.to_radians();
        for (p, n) in pts.iter().zip(est.cloud.normals().unwrap()) {
            let angle = n.dot(p).abs().min(1.0).acos();
            assert!(angle < max_angle, "angle {} at {p:?}", angle.to_degrees());
        }
    }

    #[test]
    fn too_few_points() {
        let cloud = PointCloud::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()]).unwrap();
        let err = estimate_normals(&cloud, 8).unwrap_err();
        assert!(err.to_string().contains("insufficient points"));
    }

    #[test]
    fn coincident_points_are_flagged() {
        let cloud = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0); 10]).unwrap();
        let est = estimate_normals(&cloud, 4).unwrap();
        assert_eq!(est.degenerate.len(), 10);
        assert!(est.cloud.normals().unwrap().iter().all(|n| *n == Vec3::z()));
    }

    #[test]
    fn orientation_rule() {
        assert_eq!(orient_canonical(Vec3::new(0.0, 0.0, -1.0)), Vec3::z());
        assert_eq!(orient_canonical(Vec3::new(-1.0, 0.0, 0.0)), Vec3::x());
        assert_eq!(orient_canonical(Vec3::new(0.0, -1.0, 0.0)), Vec3::y());
    }
}
