//! Merges an object's new scan segment into its model geometry.
//!
//! The segment is brought into the object frame and concatenated with the
//! stored geometry. Points sharing a cubic bin are averaged into one mean
//! surface sample, and the result is resampled to blue noise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use nalgebra::Matrix3;

use crate::geometry::{poisson_disk_subsample, GroundPose, PointCloud, SpatialIndex, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Edge of the averaging bins (m).
    pub bin: f64,
    /// Minimum spacing of the resampled geometry (m).
    pub spacing: f64,
    /// Radius of the local plane fit each bin sample is projected onto (m);
    /// zero disables the projection.
    pub surface_radius: f64,
    /// Neighbours whose normals differ by more than this are left out of
    /// the plane fit (degrees).
    pub normal_gate_deg: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            bin: 0.01,
            spacing: 0.01,
            surface_radius: 0.03,
            normal_gate_deg: 45.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub cloud: PointCloud,
    /// False when the segment was empty and the geometry is unchanged.
    pub observed: bool,
}

/// Mean position and sign-aligned mean normal of every occupied bin, in bin
/// order.
pub fn bin_average(cloud: &PointCloud, bin: f64) -> Result<PointCloud> {
    let normals = cloud.normals().ok_or(Error::NormalsRequired)?;
    if bin <= 0.0 {
        return Err(Error::InvalidParameter("bin size must be positive".into()));
    }
    let mut bins: BTreeMap<[i64; 3], (Vec3, Vec3, usize)> = BTreeMap::new();
    for (p, n) in cloud.points().iter().zip(normals) {
        let key = [0, 1, 2].map(|a| (p[a] / bin).floor() as i64);
        let entry = bins.entry(key).or_insert((Vec3::zeros(), Vec3::zeros(), 0));
        // flip onto the bin's first normal
        let n = if entry.2 > 0 && entry.1.dot(n) < 0.0 { -n } else { *n };
        entry.0 += p;
        entry.1 += n;
        entry.2 += 1;
    }
    let mut pts = Vec::with_capacity(bins.len());
    let mut nrm = Vec::with_capacity(bins.len());
    for (sum, nsum, count) in bins.into_values() {
        pts.push(sum / count as f64);
        let len = nsum.norm();
        nrm.push(if len > 1e-12 { nsum / len } else { Vec3::z() });
    }
    PointCloud::with_normals(pts, nrm)
}

/// Moves every point onto the Gaussian-weighted plane fit of its
/// like-oriented neighbours within `radius`, and takes that plane's normal.
pub fn project_to_surface(cloud: &PointCloud, radius: f64, gate: f64) -> PointCloud {
    let Some(normals) = cloud.normals() else {
        return cloud.clone();
    };
    let pts = cloud.points();
    let index = SpatialIndex::new(pts);
    let cos_gate = gate.cos();
    let sigma2 = (radius / 2.0).powi(2);
    let (out_p, out_n): (Vec<Vec3>, Vec<Vec3>) = pts
        .iter()
        .zip(normals)
        .map(|(p, n)| {
            let near: Vec<(Vec3, f64)> = index
                .within_radius(p, radius)
                .into_iter()
                .filter(|nb| normals[nb.index].dot(n).abs() >= cos_gate)
                .map(|nb| (pts[nb.index], (-nb.dist2 / (2.0 * sigma2)).exp()))
                .collect();
            if near.len() < 3 {
                return (*p, *n);
            }
            let wsum: f64 = near.iter().map(|(_, w)| w).sum();
            let c = near.iter().fold(Vec3::zeros(), |acc, (q, w)| acc + q * *w) / wsum;
            let mut cov = Matrix3::zeros();
            for (q, w) in &near {
                let d = q - c;
                cov += d * d.transpose() * *w;
            }
            let eig = cov.symmetric_eigen();
            let k = eig.eigenvalues.imin();
            let mut m: Vec3 = eig.eigenvectors.column(k).into_owned();
            if m.dot(n) < 0.0 {
                m = -m;
            }
            (p - m * (p - c).dot(&m), m)
        })
        .unzip();
    PointCloud::with_normals(out_p, out_n).expect("unit normals")
}

/// Bin averages, projected onto local plane fits unless disabled.
pub fn mean_surface(cloud: &PointCloud, cfg: &FusionConfig) -> Result<PointCloud> {
    let merged = bin_average(cloud, cfg.bin)?;
    Ok(if cfg.surface_radius > 0.0 {
        project_to_surface(&merged, cfg.surface_radius, cfg.normal_gate_deg.to_radians())
    } else {
        merged
    })
}

/// Fuses `segment` (scan frame) into `geometry` (object frame) for an object
/// placed at `pose`.
pub fn fuse_object(geometry: &PointCloud, segment: &PointCloud, pose: &GroundPose, cfg: &FusionConfig) -> Result<Fused> {
    if segment.is_empty() {
        return Ok(Fused {
            cloud: geometry.clone(),
            observed: false,
        });
    }
    if !segment.has_normals() || !geometry.has_normals() {
        return Err(Error::NormalsRequired);
    }
    let mut local = segment.transformed(&pose.inverse());
    local.clear_labels();
    let mut base = geometry.clone();
    base.clear_labels();
    let surface = mean_surface(&base.concat(&local), cfg)?;
    Ok(Fused {
        cloud: poisson_disk_subsample(&surface, cfg.spacing),
        observed: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use crate::synth::{sample_shape, Shape};

    /// Faces of an axis-aligned box with half extents `h`, sampled on a
    /// regular grid; `faces` selects (axis, sign) pairs.
    fn box_faces(h: Vec3, step: f64, faces: &[(usize, f64)]) -> PointCloud {
        let mut pts = Vec::new();
        let mut nrm = Vec::new();
        for &(axis, sign) in faces {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let nu = (2.0 * h[u] / step).round() as usize;
            let nv = (2.0 * h[v] / step).round() as usize;
            for i in 0..=nu {
                for j in 0..=nv {
                    let mut p = Vec3::zeros();
                    p[axis] = sign * h[axis];
                    p[u] = -h[u] + i as f64 * step;
                    p[v] = -h[v] + j as f64 * step;
                    let mut n = Vec3::zeros();
                    n[axis] = sign;
                    pts.push(p);
                    nrm.push(n);
                }
            }
        }
        PointCloud::with_normals(pts, nrm).unwrap()
    }

    fn all_faces() -> Vec<(usize, f64)> {
        (0..3).flat_map(|a| [(a, 1.0), (a, -1.0)]).collect()
    }

    fn hausdorff(a: &PointCloud, b: &PointCloud) -> f64 {
        let one_way = |x: &PointCloud, y: &PointCloud| {
            let idx = SpatialIndex::new(y.points());
            x.points()
                .iter()
                .map(|p| idx.nearest(p).unwrap().dist2.sqrt())
                .fold(0.0, f64::max)
        };
        one_way(a, b).max(one_way(b, a))
    }

    /// Distance from `p` to the surface of the box with half extents `h`.
    fn box_distance(p: &Vec3, h: &Vec3) -> f64 {
        let q = p.abs() - h;
        let outside = q.map(|v| v.max(0.0)).norm();
        outside + q.max().min(0.0).abs() * if q.max() < 0.0 { 1.0 } else { 0.0 }
    }

    fn rms_to_box(c: &PointCloud, h: &Vec3) -> f64 {
        let s: f64 = c.points().iter().map(|p| box_distance(p, h).powi(2)).sum();
        (s / c.len() as f64).sqrt()
    }

    fn noisy(c: &PointCloud, sigma: f64, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sigma).unwrap();
        let pts = c
            .points()
            .iter()
            .map(|p| p + Vec3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng)))
            .collect();
        PointCloud::with_normals(pts, c.normals().unwrap().to_vec()).unwrap()
    }

    fn jittered_box(size: [f64; 3], spacing: f64, seed: u64) -> Vec<(Vec3, Vec3)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_shape(&Shape::Box { size }, &mut rng, spacing)
    }

    fn cloud_of(samples: &[(Vec3, Vec3)]) -> PointCloud {
        let (p, n): (Vec<Vec3>, Vec<Vec3>) = samples.iter().copied().unzip();
        PointCloud::with_normals(p, n).unwrap()
    }

    #[test]
    fn reobservation_matches_binned_geometry() {
        let g = cloud_of(&jittered_box([0.4, 0.2, 0.3], 0.01, 1));
        let cfg = FusionConfig::default();
        let fused = fuse_object(&g, &g, &GroundPose::identity(), &cfg).unwrap();
        assert!(fused.observed);
        let expected = poisson_disk_subsample(&mean_surface(&g, &cfg).unwrap(), 0.01);
        assert!(hausdorff(&fused.cloud, &expected) < 1e-6);
    }

    #[test]
    fn empty_segment_is_no_observation() {
        let g = box_faces(Vec3::new(0.2, 0.1, 0.15), 0.02, &all_faces());
        let fused = fuse_object(&g, &PointCloud::default(), &GroundPose::identity(), &FusionConfig::default()).unwrap();
        assert!(!fused.observed);
        assert_eq!(fused.cloud, g);
    }

    #[test]
    fn halves_complete_the_box() {
        let shape = Shape::Box { size: [0.4, 0.3, 0.2] };
        let samples = jittered_box([0.4, 0.3, 0.2], 0.005, 3);
        let view = Vec3::new(1.0, 0.7, 0.4);
        let half = |front: bool| {
            let part: Vec<(Vec3, Vec3)> = samples.iter().filter(|(_, n)| (n.dot(&view) > 0.0) == front).copied().collect();
            cloud_of(&part)
        };
        let pose = GroundPose::new(1.5, -0.3, 0.1, 0.8);
        let fused = fuse_object(&half(true), &half(false).transformed(&pose), &pose, &FusionConfig::default()).unwrap();
        // fraction of a dense surface sampling within 1 cm of the result
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dense: Vec<Vec3> = sample_shape(&shape, &mut rng, 0.0025).into_iter().map(|s| s.0).collect();
        let idx = SpatialIndex::new(fused.cloud.points());
        let covered = dense.iter().filter(|p| idx.nearest_within(p, 0.01).is_some()).count();
        assert!(covered as f64 / dense.len() as f64 >= 0.95);
    }

    #[test]
    fn noise_is_reduced() {
        let h = Vec3::new(0.2, 0.15, 0.1);
        let clean = box_faces(h, 0.01, &all_faces());
        let g = noisy(&clean, 0.01, 1);
        let seg = noisy(&clean, 0.01, 2);
        let fused = fuse_object(&g, &seg, &GroundPose::identity(), &FusionConfig::default()).unwrap();
        assert!(rms_to_box(&fused.cloud, &h) < rms_to_box(&seg, &h));
    }

    #[test]
    fn respects_spacing_and_frame() {
        let h = Vec3::new(0.2, 0.15, 0.1);
        let g = box_faces(h, 0.01, &[(0, 1.0), (2, 1.0)]);
        let seg_local = box_faces(h, 0.01, &[(1, -1.0)]);
        let pose = GroundPose::new(-0.7, 2.0, 0.0, -2.1);
        let cfg = FusionConfig::default();
        let a = fuse_object(&g, &seg_local.transformed(&pose), &pose, &cfg).unwrap().cloud;
        let b = fuse_object(&g, &seg_local, &GroundPose::identity(), &cfg).unwrap().cloud;
        assert!(hausdorff(&a, &b) < 0.02);
        let idx = SpatialIndex::new(a.points());
        for p in a.points() {
            let nb = idx.k_nearest(p, 2);
            assert!(nb[1].dist2.sqrt() >= 0.01 - 1e-12);
        }
    }

    #[test]
    fn bins_align_normals() {
        let pts = vec![Vec3::new(0.001, 0.0, 0.0), Vec3::new(0.002, 0.0, 0.0)];
        let nrm = vec![Vec3::z(), -Vec3::z()];
        let c = PointCloud::with_normals(pts, nrm).unwrap();
        let b = bin_average(&c, 0.01).unwrap();
        assert_eq!(b.len(), 1);
        assert!((b.normals().unwrap()[0] - Vec3::z()).norm() < 1e-12);
        assert!((b.points()[0].x - 0.0015).abs() < 1e-15);
    }
}
