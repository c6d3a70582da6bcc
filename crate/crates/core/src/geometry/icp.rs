//! Point-to-plane ICP restricted to ground-plane motion.
//!
//! Free parameters are `tx`, `ty` and `yaw`; `tz` stays at its initial
//! value. The solver minimises a truncated point-to-plane cost: every source
//! point with a target neighbour within `corr_dist` contributes its squared
//! plane residual, the others contribute `corr_dist^2`. Steps are
//! backtracked so that this cost never increases between iterations.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::cloud::{PointCloud, Vec3};
use super::index::SpatialIndex;
use super::pose::GroundPose;
use crate::error::{Error, Result};

/// A cloud with normals plus its nearest-neighbour index.
#[derive(Debug, Clone)]
pub struct IndexedCloud {
    cloud: PointCloud,
    index: SpatialIndex,
}

impl IndexedCloud {
    pub fn new(cloud: PointCloud) -> Result<Self> {
        if !cloud.has_normals() {
            return Err(Error::NormalsRequired);
        }
        let index = SpatialIndex::new(cloud.points());
        Ok(Self { cloud, index })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    pub fn points(&self) -> &[Vec3] {
        self.cloud.points()
    }

    pub fn normals(&self) -> &[Vec3] {
        self.cloud.normals().expect("checked at construction")
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// Correspondence gate (m).
    pub corr_dist: f64,
    /// Stop once the parameter update falls below this.
    pub tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            corr_dist: 0.05,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub pose: GroundPose,
    /// RMS plane residual over the final correspondences.
    pub rmse: f64,
    pub correspondences: usize,
    pub iterations: usize,
    /// The normal system was rank deficient at some iteration and was
    /// solved in the least-norm sense.
    pub underconstrained: bool,
    /// Truncated cost after each accepted step, starting with the initial pose.
    pub cost_trace: Vec<f64>,
}

struct Pairing {
    cost: f64,
    /// (transformed source point, target point, target normal)
    pairs: Vec<(Vec3, Vec3, Vec3)>,
}

fn pair_up(source: &[Vec3], target: &IndexedCloud, pose: &GroundPose, gate: f64) -> Pairing {
    let gate2 = gate * gate;
    let normals = target.normals();
    let tpts = target.points();
    let mut cost = 0.0;
    let mut pairs = Vec::with_capacity(source.len());
    for p in source {
        let tp = pose.apply(p);
        match target.index().nearest_within(&tp, gate) {
            Some(nb) => {
                let q = tpts[nb.index];
                let n = normals[nb.index];
                let r = (tp - q).dot(&n);
                cost += r * r;
                pairs.push((tp, q, n));
            }
            None => cost += gate2,
        }
    }
    Pairing {
        cost: cost / source.len().max(1) as f64,
        pairs,
    }
}

/// Least-norm solution of a symmetric 3x3 system. Returns the solution and
/// whether the system was rank deficient.
fn solve_least_norm(a: &Matrix3<f64>, b: &Vector3<f64>) -> (Vector3<f64>, bool) {
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return (Vector3::zeros(), true);
    }
    let eps = smax * 1e-9;
    let deficient = svd.singular_values.iter().any(|&s| s <= eps);
    let x = svd
        .solve(b, eps)
        .unwrap_or_else(|_| Vector3::zeros());
    (x, deficient)
}

pub fn icp_point_to_plane(
    source: &[Vec3],
    target: &IndexedCloud,
    init: GroundPose,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InsufficientPoints { needed: 1, got: 0 });
    }
    if cfg.corr_dist <= 0.0 {
        return Err(Error::InvalidParameter("corr_dist must be positive".into()));
    }
    let mut pose = init;
    let mut current = pair_up(source, target, &pose, cfg.corr_dist);
    if current.pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    let mut trace = vec![current.cost];
    let mut underconstrained = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let n_pairs = current.pairs.len() as f64;
        let pivot: Vec3 = current.pairs.iter().map(|(p, _, _)| *p).sum::<Vec3>() / n_pairs;
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (p, q, n) in &current.pairs {
            let l = p - pivot;
            let j = Vector3::new(n.x, n.y, -l.y * n.x + l.x * n.y);
            let r = (p - q).dot(n);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let (delta, deficient) = solve_least_norm(&jtj, &(-jtr));
        underconstrained |= deficient;

        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..6 {
            let d = delta * step;
            let rot = GroundPose::new(0.0, 0.0, 0.0, d.z);
            let shift = pivot - rot.apply(&pivot);
            let update = GroundPose::new(shift.x + d.x, shift.y + d.y, 0.0, d.z);
            let candidate = update.compose(&pose);
            let pairing = pair_up(source, target, &candidate, cfg.corr_dist);
            if pairing.cost <= current.cost && !pairing.pairs.is_empty() {
                accepted = Some((candidate, pairing, d));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, pairing, d)) = accepted else {
            break;
        };
        pose = candidate;
        current = pairing;
        trace.push(current.cost);
        if d.amax() < cfg.tolerance {
            break;
        }
    }

    let sq: f64 = current
        .pairs
        .iter()
        .map(|(p, q, n)| (p - q).dot(n).powi(2))
        .sum();
    Ok(IcpResult {
        pose,
        rmse: (sq / current.pairs.len() as f64).sqrt(),
        correspondences: current.pairs.len(),
        iterations,
        underconstrained,
        cost_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normals::estimate_normals;

    /// Asymmetric test object: an L-shaped chair outline sampled on a grid.
    pub(crate) fn chair_cloud(step: f64) -> PointCloud {
        let mut pts = Vec::new();
        let mut nrm = Vec::new();
        let mut face = |origin: Vec3, u: Vec3, v: Vec3, n: Vec3| {
            let nu = (u.norm() / step).round() as usize;
            let nv = (v.norm() / step).round() as usize;
            for a in 0..=nu {
                for b in 0..=nv {
                    pts.push(origin + u * (a as f64 / nu as f64) + v * (b as f64 / nv as f64));
                    nrm.push(n);
                }
            }
        };
        // seat block 0.5 x 0.4 x 0.45, backrest 0.5 x 0.08 x 0.45 on top at +y
        face(Vec3::new(0.0, 0.0, 0.45), Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.0, 0.32, 0.0), Vec3::z());
        face(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.45), -Vec3::y());
        face(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.4, 0.0), Vec3::new(0.0, 0.0, 0.45), -Vec3::x());
        face(Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.0, 0.4, 0.0), Vec3::new(0.0, 0.0, 0.9), Vec3::x());
        face(Vec3::new(0.0, 0.4, 0.0), Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.9), Vec3::y());
        face(Vec3::new(0.0, 0.32, 0.45), Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.45), -Vec3::y());
        face(Vec3::new(0.0, 0.32, 0.9), Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.0, 0.08, 0.0), Vec3::z());
        PointCloud::with_normals(pts, nrm).unwrap()
    }

    #[test]
    fn identity_alignment() {
        let cloud = chair_cloud(0.02);
        let target = IndexedCloud::new(cloud.clone()).unwrap();
        let cfg = IcpConfig {
            corr_dist: 0.1,
            ..Default::default()
        };
        let r = icp_point_to_plane(cloud.points(), &target, GroundPose::identity(), &cfg).unwrap();
        assert!(r.rmse < 1e-9);
        assert!(r.pose.planar_distance(&GroundPose::identity()) < 1e-9);
        assert!(r.pose.yaw.abs() < 1e-9);
    }

    #[test]
    fn recovers_small_motion() {
        let cloud = chair_cloud(0.02);
        let truth = GroundPose::new(0.05, 0.0, 0.0, 5f64.to_radians());
        let target = IndexedCloud::new(cloud.transformed(&truth)).unwrap();
        let cfg = IcpConfig {
            corr_dist: 0.2,
            ..Default::default()
        };
        let r = icp_point_to_plane(cloud.points(), &target, GroundPose::identity(), &cfg).unwrap();
        assert!(r.pose.planar_distance(&truth) < 0.005, "{:?}", r.pose);
        assert!(r.pose.yaw_distance(&truth) < 0.5f64.to_radians());
        assert!(r.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn far_source_has_no_overlap() {
        let cloud = chair_cloud(0.04);
        let target = IndexedCloud::new(cloud.clone()).unwrap();
        let cfg = IcpConfig {
            corr_dist: 0.1,
            ..Default::default()
        };
        let err = icp_point_to_plane(
            cloud.points(),
            &target,
            GroundPose::new(10.0, 0.0, 0.0, 0.0),
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoOverlap));
    }

    #[test]
    fn single_plane_is_underconstrained() {
        let pts: Vec<Vec3> = (0..30)
            .flat_map(|i| (0..30).map(move |j| Vec3::new(i as f64 * 0.02, j as f64 * 0.02, 0.0)))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let cloud = estimate_normals(&cloud, 6).unwrap().cloud;
        let target = IndexedCloud::new(cloud.clone()).unwrap();
        let cfg = IcpConfig {
            corr_dist: 0.1,
            ..Default::default()
        };
        let init = GroundPose::new(0.03, -0.02, 0.0, 0.0);
        let r = icp_point_to_plane(cloud.points(), &target, init, &cfg).unwrap();
        assert!(r.underconstrained);
        // nothing to pull the pose sideways: least-norm keeps it put
        assert!(r.pose.planar_distance(&init) < 1e-9);
    }

    #[test]
    fn target_needs_normals() {
        let cloud = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        assert!(matches!(IndexedCloud::new(cloud), Err(Error::NormalsRequired)));
    }
}
