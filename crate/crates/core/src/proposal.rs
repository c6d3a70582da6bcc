//! Candidate poses of a known object inside a new scan.
//!
//! The object is slid over a ground-plane grid at the coarsest hierarchy
//! level, each grid pose is refined by ICP and scored, and the promising
//! poses are carried down the finer levels before non-maximum suppression.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    icp_point_to_plane, GroundPose, IcpConfig, IndexedCloud, SpatialIndex, Vec3, LEVEL_SPACINGS,
};
use crate::model::ObjectInstance;
use crate::scan::PreparedScan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPose {
    pub pose: GroundPose,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalConfig {
    /// Grid step in the ground plane (m).
    pub translation_step: f64,
    pub yaw_count: usize,
    /// Poses scoring at least this fraction of the level's best move on.
    pub promote_fraction: f64,
    pub max_poses_per_level: usize,
    pub nms_dist: f64,
    pub nms_yaw_deg: f64,
    /// Score tolerance; the level spacing when unset.
    pub score_tau: Option<f64>,
    /// ICP gate as a multiple of the level spacing.
    pub corr_factor: f64,
    pub icp_iters: usize,
    /// ICP iterations for the grid starts at the coarsest level.
    pub coarse_icp_iters: usize,
    /// Starts with fewer object points than this fraction inside the ICP
    /// gate are not refined.
    pub min_overlap: f64,
    /// Poses closer than this (m, and `merge_yaw_deg`) after refinement are
    /// treated as one.
    pub merge_dist: f64,
    pub merge_yaw_deg: f64,
    /// Poses related by a yaw under which the object agrees with itself at
    /// least this well count as the same pose.
    pub symmetry_score: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            translation_step: 0.10,
            yaw_count: 16,
            promote_fraction: 0.5,
            max_poses_per_level: 50,
            nms_dist: 0.2,
            nms_yaw_deg: 15.0,
            score_tau: None,
            corr_factor: 2.0,
            icp_iters: 10,
            coarse_icp_iters: 5,
            min_overlap: 0.25,
            merge_dist: 0.02,
            merge_yaw_deg: 2.0,
            symmetry_score: 0.8,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.translation_step > 0.0
            && self.yaw_count > 0
            && self.max_poses_per_level > 0
            && self.nms_dist > 0.0
            && self.nms_yaw_deg > 0.0
            && self.corr_factor > 0.0
            && self.score_tau.is_none_or(|t| t > 0.0)
            && self.symmetry_score > 0.0
            && (0.0..=1.0).contains(&self.min_overlap);
        if !positive || !(self.promote_fraction > 0.0 && self.promote_fraction <= 1.0) {
            return Err(Error::InvalidParameter("proposal config out of range".into()));
        }
        Ok(())
    }
}

/// Score and number of points with a target neighbour within `2 tau`.
fn score_points(points: &[Vec3], target: &IndexedCloud, pose: &GroundPose, tau: f64) -> (f64, usize) {
    let normals = target.normals();
    let tpts = target.points();
    let mut sum = 0.0;
    let mut matched = 0;
    for p in points {
        let q = pose.apply(p);
        if let Some(nb) = target.index().nearest_within(&q, 2.0 * tau) {
            matched += 1;
            let r = (q - tpts[nb.index]).dot(&normals[nb.index]).abs();
            sum += (1.0 - r / tau).max(0.0);
        }
    }
    (sum / points.len() as f64, matched)
}

/// Mean clamped point-to-plane agreement of one hierarchy level of
/// `object`, placed at `pose`, with `scene`.
pub fn score_pose(
    object: &ObjectInstance,
    level: usize,
    scene: &IndexedCloud,
    pose: &GroundPose,
    tau: f64,
) -> Result<f64> {
    let pts = object.hierarchy().level(level).points();
    if pts.is_empty() {
        return Err(Error::EmptyLevel);
    }
    if tau <= 0.0 {
        return Err(Error::InvalidParameter("tau must be positive".into()));
    }
    Ok(score_points(pts, scene, pose, tau).0)
}

fn pose_order(a: &ScoredPose, b: &ScoredPose) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.pose.tx.total_cmp(&b.pose.tx))
        .then(a.pose.ty.total_cmp(&b.pose.ty))
        .then(a.pose.yaw.total_cmp(&b.pose.yaw))
}

/// Sorts by descending score and drops every pose within `dist` and `yaw`
/// of a better one.
pub fn suppress(poses: Vec<ScoredPose>, dist: f64, yaw: f64) -> Vec<ScoredPose> {
    suppress_with(poses, dist, yaw, |_, _| false)
}

fn suppress_with(
    mut poses: Vec<ScoredPose>,
    dist: f64,
    yaw: f64,
    same: impl Fn(&GroundPose, &GroundPose) -> bool,
) -> Vec<ScoredPose> {
    poses.sort_by(pose_order);
    let mut kept: Vec<ScoredPose> = Vec::new();
    for p in poses {
        let clash = kept.iter().any(|k| {
            k.pose.planar_distance(&p.pose) < dist
                && (k.pose.yaw_distance(&p.pose) < yaw || same(&k.pose, &p.pose))
        });
        if !clash {
            kept.push(p);
        }
    }
    kept
}

const SELF_MATCH_POINTS: usize = 40;

/// Detects poses that differ only by a symmetry of the object.
struct SelfMatch {
    points: Vec<Vec3>,
    cloud: IndexedCloud,
    tau: f64,
    threshold: f64,
}

impl SelfMatch {
    fn new(object: &ObjectInstance, threshold: f64) -> Option<Self> {
        let level = LEVEL_SPACINGS.len() - 1;
        let coarse = object.hierarchy().level(level);
        let stride = coarse.len().div_ceil(SELF_MATCH_POINTS).max(1);
        Some(Self {
            points: coarse.points().iter().step_by(stride).copied().collect(),
            cloud: IndexedCloud::new(coarse.clone()).ok()?,
            tau: LEVEL_SPACINGS[level],
            threshold,
        })
    }

    fn same(&self, a: &GroundPose, b: &GroundPose) -> bool {
        let rel = b.inverse().compose(a);
        score_points(&self.points, &self.cloud, &rel, self.tau).0 >= self.threshold
    }
}

fn promote(poses: Vec<ScoredPose>, cfg: &ProposalConfig, sym: Option<&SelfMatch>) -> Vec<ScoredPose> {
    let mut poses = suppress_with(poses, cfg.merge_dist, cfg.merge_yaw_deg.to_radians(), |a, b| {
        sym.is_some_and(|s| s.same(a, b))
    });
    let Some(best) = poses.first().map(|p| p.score) else {
        return poses;
    };
    poses.retain(|p| p.score > 0.0 && p.score >= cfg.promote_fraction * best);
    poses.truncate(cfg.max_poses_per_level);
    poses
}

fn refine(
    object: &ObjectInstance,
    scan: &PreparedScan,
    level: usize,
    starts: &[GroundPose],
    max_iters: usize,
    min_overlap: f64,
    cfg: &ProposalConfig,
) -> Vec<ScoredPose> {
    let spacing = LEVEL_SPACINGS[level];
    let tau = cfg.score_tau.unwrap_or(spacing);
    let icp = IcpConfig {
        max_iters,
        corr_dist: cfg.corr_factor * spacing,
        ..Default::default()
    };
    let source = object.hierarchy().level(level).points();
    let target = scan.level(level);
    if source.is_empty() || target.is_empty() {
        return Vec::new();
    }
    starts
        .par_iter()
        .map(|start| {
            let (_, matched) = score_points(source, target, start, icp.corr_dist / 2.0);
            if matched == 0 || (matched as f64) < min_overlap * source.len() as f64 {
                return None;
            }
            let pose = icp_point_to_plane(source, target, *start, &icp).ok()?.pose;
            let (score, _) = score_points(source, target, &pose, tau);
            Some(ScoredPose { pose, score })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Ground-plane grid positions that have dynamic scene content within one
/// grid step.
fn grid_positions(scan: &PreparedScan, step: f64) -> Vec<(f64, f64)> {
    let Some((lo, hi)) = scan.cloud().bounds() else {
        return Vec::new();
    };
    let flat: Vec<Vec3> = scan
        .level(LEVEL_SPACINGS.len() - 1)
        .points()
        .iter()
        .map(|p| Vec3::new(p.x, p.y, 0.0))
        .collect();
    if flat.is_empty() {
        return Vec::new();
    }
    let index = SpatialIndex::new(&flat);
    let nx = ((hi.x - lo.x) / step).floor() as usize;
    let ny = ((hi.y - lo.y) / step).floor() as usize;
    let mut out = Vec::new();
    for i in 0..=nx {
        for j in 0..=ny {
            let (x, y) = (lo.x + i as f64 * step, lo.y + j as f64 * step);
            if index.nearest_within(&Vec3::new(x, y, 0.0), step).is_some() {
                out.push((x, y));
            }
        }
    }
    out
}

/// Scored candidate poses of `object` in `scan`, best first. The object
/// rests on the detected floor.
pub fn propose_poses(
    object: &ObjectInstance,
    scan: &PreparedScan,
    cfg: &ProposalConfig,
) -> Result<Vec<ScoredPose>> {
    let floor = scan.floor_z().ok_or(Error::NoGroundPlane)?;
    propose_poses_at(object, scan, floor + object.rest_height(), cfg)
}

/// As [`propose_poses`], with the object-frame origin held at height `tz`.
pub fn propose_poses_at(
    object: &ObjectInstance,
    scan: &PreparedScan,
    tz: f64,
    cfg: &ProposalConfig,
) -> Result<Vec<ScoredPose>> {
    cfg.validate()?;
    if scan.floor_z().is_none() {
        return Err(Error::NoGroundPlane);
    }
    let (lo, hi) = scan.cloud().bounds().ok_or(Error::NoGroundPlane)?;
    let reach = object
        .geometry()
        .points()
        .iter()
        .map(|p| p.xy().norm())
        .fold(0.0, f64::max);
    if 2.0 * reach > (hi - lo).xy().norm() {
        log::warn!("object {} is larger than the scan", object.id());
        return Ok(Vec::new());
    }

    let mut starts = Vec::new();
    for (x, y) in grid_positions(scan, cfg.translation_step) {
        for k in 0..cfg.yaw_count {
            let yaw = k as f64 * std::f64::consts::TAU / cfg.yaw_count as f64;
            starts.push(GroundPose::new(x, y, tz, yaw));
        }
    }

    let coarsest = LEVEL_SPACINGS.len() - 1;
    let coarse = refine(object, scan, coarsest, &starts, cfg.coarse_icp_iters, cfg.min_overlap, cfg);
    let sym = SelfMatch::new(object, cfg.symmetry_score);
    let mut poses = promote(coarse, cfg, sym.as_ref());
    for level in (0..coarsest).rev() {
        let starts: Vec<GroundPose> = poses.iter().map(|p| p.pose).collect();
        poses = promote(refine(object, scan, level, &starts, cfg.icp_iters, 0.0, cfg), cfg, sym.as_ref());
    }
    Ok(suppress_with(poses, cfg.nms_dist, cfg.nms_yaw_deg.to_radians(), |a, b| {
        sym.as_ref().is_some_and(|s| s.same(a, b))
    }))
}
