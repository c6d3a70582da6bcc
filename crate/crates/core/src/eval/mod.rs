//! Segmentation and instance-transfer metrics, pose precision/recall and
//! optimal assignment.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::geometry::{GroundPose, PointCloud, Vec3, STATIC_CLASS, UNASSIGNED};

mod hungarian;

pub use hungarian::{assignment_cost, hungarian_assign};

/// Maps ground-truth instance ids onto equivalent ids; ids not listed map
/// to themselves.
pub type Permutation = BTreeMap<u32, u32>;

#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    /// Labeled scan per timestep.
    pub scans: Vec<PointCloud>,
    /// Allowed instance relabelings for the scene.
    pub permutations: Vec<Permutation>,
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::MismatchedCounts(a, b));
    }
    Ok(())
}

/// Mean per-class IoU over the classes present in `gt`. An empty class set
/// scores 1.
pub fn semantic_label_miou(pred: &[u32], gt: &[u32], exclude_static: bool) -> Result<f64> {
    check_len(pred.len(), gt.len())?;
    let classes: BTreeSet<u32> = gt
        .iter()
        .copied()
        .filter(|&c| !(exclude_static && c == STATIC_CLASS))
        .collect();
    if classes.is_empty() {
        return Ok(1.0);
    }
    let mut inter: BTreeMap<u32, usize> = BTreeMap::new();
    let mut union: BTreeMap<u32, usize> = BTreeMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        if p == g {
            *inter.entry(g).or_default() += 1;
            *union.entry(g).or_default() += 1;
        } else {
            *union.entry(g).or_default() += 1;
            *union.entry(p).or_default() += 1;
        }
    }
    let sum: f64 = classes
        .iter()
        .map(|c| inter.get(c).copied().unwrap_or(0) as f64 / union[c] as f64)
        .sum();
    Ok(sum / classes.len() as f64)
}

struct Segment {
    class: u32,
    points: Vec<usize>,
    confidence: f64,
}

/// Instances of a labeling: id -> (majority class, point ids, mean confidence).
fn segments(sem: &[u32], inst: &[u32], conf: Option<&[f64]>) -> BTreeMap<u32, Segment> {
    let mut out: BTreeMap<u32, Segment> = BTreeMap::new();
    let mut votes: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    for (i, (&s, &u)) in sem.iter().zip(inst).enumerate() {
        if u == UNASSIGNED || s == STATIC_CLASS {
            continue;
        }
        out.entry(u)
            .or_insert(Segment {
                class: s,
                points: Vec::new(),
                confidence: 0.0,
            })
            .points
            .push(i);
        *votes.entry(u).or_default().entry(s).or_default() += 1;
    }
    for (u, seg) in out.iter_mut() {
        seg.class = votes[u]
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(c, _)| *c)
            .expect("non-empty");
        seg.confidence = match conf {
            Some(c) => seg.points.iter().map(|&i| c[i]).sum::<f64>() / seg.points.len() as f64,
            None => 1.0,
        };
    }
    out
}

fn iou_sorted(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Area under the precision envelope of a ranked TP/FP sequence.
fn average_precision(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(hits.len());
    for (k, &h) in hits.iter().enumerate() {
        if h {
            tp += 1;
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..curve.len() {
        let envelope = curve[i..].iter().map(|c| c.1).fold(0.0, f64::max);
        ap += (curve[i].0 - prev_recall) * envelope;
        prev_recall = curve[i].0;
    }
    ap
}

/// Average precision at IoU 0.5, averaged over the (non-static) classes of
/// the ground truth. Predictions are ranked by their mean per-point
/// confidence; all-ones when `confidence` is absent.
pub fn instance_map50(
    pred_sem: &[u32],
    pred_inst: &[u32],
    confidence: Option<&[f64]>,
    gt_sem: &[u32],
    gt_inst: &[u32],
) -> Result<f64> {
    check_len(pred_sem.len(), gt_sem.len())?;
    check_len(pred_inst.len(), gt_inst.len())?;
    check_len(pred_sem.len(), pred_inst.len())?;
    if let Some(c) = confidence {
        check_len(c.len(), pred_sem.len())?;
    }
    let preds = segments(pred_sem, pred_inst, confidence);
    let gts = segments(gt_sem, gt_inst, None);
    let classes: BTreeSet<u32> = gts.values().map(|g| g.class).collect();
    if classes.is_empty() {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for &c in &classes {
        let mut ranked: Vec<(&u32, &Segment)> = preds.iter().filter(|(_, p)| p.class == c).collect();
        ranked.sort_by(|a, b| b.1.confidence.total_cmp(&a.1.confidence).then(a.0.cmp(b.0)));
        let class_gt: Vec<&Segment> = gts.values().filter(|g| g.class == c).collect();
        let mut matched = vec![false; class_gt.len()];
        let mut hits = Vec::with_capacity(ranked.len());
        for (_, p) in ranked {
            let best = class_gt
                .iter()
                .enumerate()
                .filter(|(k, _)| !matched[*k])
                .map(|(k, g)| (k, iou_sorted(&p.points, &g.points)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            match best {
                Some((k, iou)) if iou >= 0.5 => {
                    matched[k] = true;
                    hits.push(true);
                }
                _ => hits.push(false),
            }
        }
        total += average_precision(&hits, class_gt.len());
    }
    Ok(total / classes.len() as f64)
}

/// Instance-id agreement between prediction and ground truth, maximised
/// over the allowed permutations of ground-truth ids. Per-instance IoUs are
/// averaged over ground-truth instances, or pooled over all points when
/// `pooled` is set.
pub fn instance_transfer_miou(
    pred_inst: &[u32],
    gt_inst: &[u32],
    permutations: &[Permutation],
    pooled: bool,
) -> Result<f64> {
    check_len(pred_inst.len(), gt_inst.len())?;
    let ids: BTreeSet<u32> = gt_inst.iter().copied().filter(|&u| u != UNASSIGNED).collect();
    if ids.is_empty() {
        return Ok(1.0);
    }
    let identity = [Permutation::new()];
    let perms: &[Permutation] = if permutations.is_empty() {
        &identity
    } else {
        permutations
    };
    let mut best = 0.0f64;
    for perm in perms {
        let map = |u: u32| perm.get(&u).copied().unwrap_or(u);
        let mut inter: BTreeMap<u32, usize> = BTreeMap::new();
        let mut union: BTreeMap<u32, usize> = BTreeMap::new();
        for (&p, &g) in pred_inst.iter().zip(gt_inst) {
            let g = if g == UNASSIGNED { UNASSIGNED } else { map(g) };
            if g != UNASSIGNED && p == g {
                *inter.entry(g).or_default() += 1;
                *union.entry(g).or_default() += 1;
            } else {
                if g != UNASSIGNED {
                    *union.entry(g).or_default() += 1;
                }
                if p != UNASSIGNED {
                    *union.entry(p).or_default() += 1;
                }
            }
        }
        let targets: Vec<u32> = ids.iter().map(|&u| map(u)).collect();
        let value = if pooled {
            let i: usize = targets.iter().map(|u| inter.get(u).copied().unwrap_or(0)).sum();
            let un: usize = targets.iter().map(|u| union.get(u).copied().unwrap_or(0)).sum();
            i as f64 / un as f64
        } else {
            targets
                .iter()
                .map(|u| inter.get(u).copied().unwrap_or(0) as f64 / union[u] as f64)
                .sum::<f64>()
                / targets.len() as f64
        };
        best = best.max(value);
    }
    Ok(best)
}

/// A proposed object placement reduced to what the TP rule needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseCandidate {
    pub class: u32,
    pub center: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub rank: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Largest centre distance (m) for a proposal to count as a true positive.
pub const POSE_TP_DISTANCE: f64 = 0.2;

/// Precision and recall when every object contributes its top `rank`
/// proposals. A proposal is a true positive when its centre lies within
/// `POSE_TP_DISTANCE` of a ground-truth object of the same class; each
/// ground-truth object absorbs at most one proposal (maximum matching).
pub fn pose_pr(
    proposals: &[Vec<PoseCandidate>],
    gt: &[PoseCandidate],
    ranks: &[usize],
) -> Vec<PrPoint> {
    ranks
        .iter()
        .map(|&rank| {
            let pool: Vec<&PoseCandidate> = proposals.iter().flat_map(|l| l.iter().take(rank)).collect();
            if pool.is_empty() || gt.is_empty() {
                return PrPoint {
                    rank,
                    precision: if pool.is_empty() { 1.0 } else { 0.0 },
                    recall: if gt.is_empty() { 1.0 } else { 0.0 },
                };
            }
            let cost: Vec<Vec<f64>> = pool
                .iter()
                .map(|p| {
                    gt.iter()
                        .map(|g| {
                            let ok = p.class == g.class
                                && (p.center - g.center).norm() < POSE_TP_DISTANCE;
                            if ok {
                                0.0
                            } else {
                                1.0
                            }
                        })
                        .collect()
                })
                .collect();
            let assignment = hungarian_assign(&cost);
            let tp = assignment
                .iter()
                .enumerate()
                .filter(|(i, a)| a.is_some_and(|j| cost[*i][j] == 0.0))
                .count();
            PrPoint {
                rank,
                precision: tp as f64 / pool.len() as f64,
                recall: tp as f64 / gt.len() as f64,
            }
        })
        .collect()
}

/// Translation and yaw error of `pose` against `truth` for an object whose
/// shape repeats every `2 pi / symmetry` of yaw (`symmetry == 0`: any yaw).
pub fn pose_error(pose: &GroundPose, truth: &GroundPose, symmetry: u32) -> (f64, f64) {
    let dist = pose.planar_distance(truth);
    let raw = pose.yaw_distance(truth);
    let yaw = match symmetry {
        0 => 0.0,
        1 => raw,
        k => {
            let period = std::f64::consts::TAU / k as f64;
            let r = raw.rem_euclid(period);
            r.min(period - r)
        }
    };
    (dist, yaw)
}
