//! Copies semantic and instance labels from placed model objects onto scan
//! points, then smooths them over a k-nearest-neighbour graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, SpatialIndex, STATIC_CLASS, UNASSIGNED};
use crate::model::{Arrangement, TemporalModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    /// Largest scan-to-object distance that carries a label (m).
    pub max_distance: f64,
    pub neighbors: usize,
    pub pairwise_weight: f64,
    pub sweeps: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            max_distance: 0.05,
            neighbors: 12,
            pairwise_weight: 1.0,
            sweeps: 5,
        }
    }
}

/// A `(semantic, instance)` pair; labels always move together.
pub type Label = (u32, u32);

pub const BACKGROUND: Label = (STATIC_CLASS, UNASSIGNED);

/// Scan labels after the nearest-neighbour lookup. `None` marks points no
/// object explains.
#[derive(Debug, Clone, PartialEq)]
pub struct Transferred {
    pub labels: Vec<Option<Label>>,
}

impl Transferred {
    pub fn unassigned_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// The labels with unassigned points as background.
    pub fn resolved(&self) -> Vec<Label> {
        self.labels.iter().map(|l| l.unwrap_or(BACKGROUND)).collect()
    }
}

/// Labels each scan point with the class and id of the nearest posed object
/// point within `max_distance`; ties go to the lower id. Static points take
/// the background label.
pub fn transfer_labels(
    scene: &PointCloud,
    static_mask: &[bool],
    arrangement: &Arrangement,
    model: &TemporalModel,
    max_distance: f64,
) -> Result<Transferred> {
    if static_mask.len() != scene.len() {
        return Err(Error::MismatchedCounts(scene.len(), static_mask.len()));
    }
    let mut placed = Vec::new();
    for p in arrangement.placements() {
        let object = model.resolve(p.id)?;
        let pts: Vec<_> = object.geometry().points().iter().map(|q| p.pose.apply(q)).collect();
        placed.push(((object.class(), object.id()), SpatialIndex::new(&pts)));
    }
    let labels = scene
        .points()
        .iter()
        .zip(static_mask)
        .map(|(q, &is_static)| {
            if is_static {
                return Some(BACKGROUND);
            }
            let mut best: Option<(f64, Label)> = None;
            for (label, index) in &placed {
                let Some(nb) = index.nearest_within(q, max_distance) else { continue };
                let d = nb.dist2.sqrt();
                // placements are in id order, so a tie keeps the earlier one
                if best.is_none_or(|(bd, _)| d < bd - 1e-9) {
                    best = Some((d, *label));
                }
            }
            best.map(|(_, l)| l)
        })
        .collect();
    Ok(Transferred { labels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub labels: Vec<Label>,
    /// Energy before the first sweep and after each sweep.
    pub energies: Vec<f64>,
    /// Points left without any label and resolved to background.
    pub background_count: usize,
}

struct Graph {
    /// Symmetric adjacency with edge weights.
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    fn knn(cloud: &PointCloud, k: usize, sigma: f64) -> Self {
        let pts = cloud.points();
        let index = SpatialIndex::new(pts);
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); pts.len()];
        let denom = 2.0 * sigma * sigma;
        for (i, p) in pts.iter().enumerate() {
            for nb in index.k_nearest(p, k + 1) {
                if nb.index == i {
                    continue;
                }
                let w = (-nb.dist2 / denom).exp();
                adjacency[i].push((nb.index, w));
                adjacency[nb.index].push((i, w));
            }
        }
        for list in &mut adjacency {
            list.sort_by_key(|e| e.0);
            list.dedup_by_key(|e| e.0);
        }
        Self { adjacency }
    }
}

/// Unary cost of `label` at a point whose transferred label is `given`.
fn unary(given: Option<Label>, label: Option<Label>) -> f64 {
    match given {
        None => 0.5,
        Some(g) if Some(g) == label => 0.0,
        Some(_) => 1.0,
    }
}

fn local_energy(
    graph: &Graph,
    given: &[Option<Label>],
    current: &[Option<Label>],
    i: usize,
    label: Option<Label>,
    lambda: f64,
) -> f64 {
    let pairwise: f64 = graph.adjacency[i]
        .iter()
        .filter(|(j, _)| current[*j] != label)
        .map(|(_, w)| w)
        .sum();
    unary(given[i], label) + lambda * pairwise
}

fn total_energy(graph: &Graph, given: &[Option<Label>], current: &[Option<Label>], lambda: f64) -> f64 {
    let mut e = 0.0;
    for i in 0..current.len() {
        e += unary(given[i], current[i]);
        for &(j, w) in &graph.adjacency[i] {
            if j > i && current[j] != current[i] {
                e += lambda * w;
            }
        }
    }
    e
}

/// Iterated conditional modes on the k-NN graph of `scene`. Each point
/// considers its current label and those of its neighbours.
pub fn smooth_labels(scene: &PointCloud, transferred: &Transferred, cfg: &TransferConfig) -> Result<Smoothed> {
    let given = &transferred.labels;
    if given.len() != scene.len() {
        return Err(Error::MismatchedCounts(scene.len(), given.len()));
    }
    if cfg.max_distance <= 0.0 || cfg.pairwise_weight < 0.0 {
        return Err(Error::InvalidParameter("transfer config out of range".into()));
    }
    let graph = Graph::knn(scene, cfg.neighbors, cfg.max_distance / 2.0);
    let lambda = cfg.pairwise_weight;
    let mut current = given.clone();
    let mut energies = vec![total_energy(&graph, given, &current, lambda)];
    for _ in 0..cfg.sweeps {
        let mut changed = false;
        for i in 0..current.len() {
            let mut best = (local_energy(&graph, given, &current, i, current[i], lambda), current[i]);
            for &(j, _) in &graph.adjacency[i] {
                let cand = current[j];
                if cand == best.1 || cand.is_none() {
                    continue;
                }
                let e = local_energy(&graph, given, &current, i, cand, lambda);
                if e < best.0 - 1e-12 || (e <= best.0 + 1e-12 && best.1.is_none()) {
                    best = (e, cand);
                }
            }
            if best.1 != current[i] {
                current[i] = best.1;
                changed = true;
            }
        }
        let e = total_energy(&graph, given, &current, lambda);
        debug_assert!(e <= energies.last().copied().unwrap_or(f64::INFINITY) + 1e-9);
        energies.push(e);
        if !changed {
            break;
        }
    }
    let background_count = current.iter().filter(|l| l.is_none()).count();
    Ok(Smoothed {
        labels: current.into_iter().map(|l| l.unwrap_or(BACKGROUND)).collect(),
        energies,
        background_count,
    })
}

/// Splits labels into the semantic and instance arrays of a labeled cloud.
pub fn split_labels(labels: &[Label]) -> (Vec<u32>, Vec<u32>) {
    labels.iter().copied().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::model::tests::cube_scene;
    use crate::model::PosedObject;
    use proptest::prelude::*;

    fn line(n: usize, step: f64) -> PointCloud {
        PointCloud::new((0..n).map(|i| Vec3::new(i as f64 * step, 0.0, 0.0)).collect()).unwrap()
    }

    fn scene_and_model() -> (PointCloud, Vec<bool>, TemporalModel) {
        let scan = cube_scene(&[(1, 3, Vec3::new(0.5, 0.5, 0.15)), (2, 4, Vec3::new(1.4, 1.2, 0.15))]);
        let mask = scan.semantic().unwrap().iter().map(|&s| s == 0).collect();
        let model = TemporalModel::bootstrap(&scan).unwrap();
        (scan, mask, model)
    }

    #[test]
    fn recovers_bootstrap_labels() {
        let (scan, mask, model) = scene_and_model();
        let a = model.history()[0].clone();
        let t = transfer_labels(&scan, &mask, &a, &model, 0.05).unwrap();
        let (sem, inst) = split_labels(&t.resolved());
        assert_eq!(sem, scan.semantic().unwrap());
        assert_eq!(inst, scan.instance().unwrap());
        assert_eq!(t.unassigned_count(), 0);
    }

    #[test]
    fn far_points_stay_unassigned() {
        let (_, _, model) = scene_and_model();
        let a = model.history()[0].clone();
        let centre = a.get(1).unwrap().pose.translation();
        // 6 cm outside the +x face
        let p = centre + Vec3::new(0.15 + 0.06, 0.0, 0.0);
        let q = centre + Vec3::new(0.15 + 0.04, 0.0, 0.0);
        let cloud = PointCloud::new(vec![p, q]).unwrap();
        let t = transfer_labels(&cloud, &[false, false], &a, &model, 0.05).unwrap();
        assert_eq!(t.labels, vec![None, Some((3, 1))]);
    }

    #[test]
    fn ties_go_to_lower_id() {
        let (_, _, model) = scene_and_model();
        let p1 = model.history()[0].get(1).unwrap().pose;
        // both objects placed at the same pose: every point is a tie
        let a = Arrangement::new(
            1,
            vec![
                PosedObject { id: 2, pose: p1, score: 1.0 },
                PosedObject { id: 1, pose: p1, score: 1.0 },
            ],
        )
        .unwrap();
        // both cubes share their object-frame samples up to rounding
        let cloud = model.resolve(2).unwrap().geometry().transformed(&p1);
        let t = transfer_labels(&cloud, &vec![false; cloud.len()], &a, &model, 0.05).unwrap();
        assert!(t.labels.iter().all(|l| *l == Some((3, 1))));
    }

    #[test]
    fn static_points_are_background() {
        let (scan, mask, model) = scene_and_model();
        let empty = Arrangement::new(1, vec![]).unwrap();
        let t = transfer_labels(&scan, &mask, &empty, &model, 0.05).unwrap();
        for (l, &m) in t.labels.iter().zip(&mask) {
            assert_eq!(l.is_some(), m);
        }
    }

    #[test]
    fn consistent_labels_are_a_fixed_point() {
        let cloud = line(30, 0.01);
        let labels: Vec<Option<Label>> = (0..30).map(|i| Some(if i < 15 { (1, 1) } else { (2, 5) })).collect();
        let t = Transferred { labels: labels.clone() };
        let s = smooth_labels(&cloud, &t, &TransferConfig::default()).unwrap();
        let expected: Vec<Label> = labels.into_iter().flatten().collect();
        assert_eq!(s.labels, expected);
    }

    #[test]
    fn surrounded_point_joins_neighbours() {
        let mut pts = vec![Vec3::zeros()];
        for k in 0..12 {
            let a = k as f64 * std::f64::consts::TAU / 12.0;
            pts.push(Vec3::new(0.01 * a.cos(), 0.01 * a.sin(), 0.0));
        }
        let cloud = PointCloud::new(pts).unwrap();
        let mut labels = vec![Some((2, 7)); 13];
        labels[0] = None;
        let s = smooth_labels(&cloud, &Transferred { labels }, &TransferConfig::default()).unwrap();
        assert_eq!(s.labels[0], (2, 7));
        assert_eq!(s.background_count, 0);
    }

    #[test]
    fn isolated_cluster_becomes_background() {
        let mut pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        pts.extend((0..20).map(|i| Vec3::new(5.0 + i as f64 * 0.01, 0.0, 0.0)));
        let cloud = PointCloud::new(pts).unwrap();
        let mut labels = vec![Some((1, 3)); 20];
        labels.extend(vec![None; 20]);
        let cfg = TransferConfig {
            neighbors: 5,
            ..Default::default()
        };
        let s = smooth_labels(&cloud, &Transferred { labels }, &cfg).unwrap();
        assert!(s.labels[20..].iter().all(|l| *l == BACKGROUND));
        assert_eq!(s.background_count, 20);
        assert!(s.labels[..20].iter().all(|l| *l == (1, 3)));
    }

    #[test]
    fn transfer_is_idempotent() {
        let (scan, mask, model) = scene_and_model();
        let mut a_pl = model.history()[0].placements().to_vec();
        a_pl[0].pose.tx += 0.03;
        let a = Arrangement::new(1, a_pl).unwrap();
        let first = transfer_labels(&scan, &mask, &a, &model, 0.05).unwrap();
        let (sem, inst) = split_labels(&first.resolved());
        let mut labeled = scan.clone();
        labeled.set_labels(sem, inst).unwrap();
        let second = transfer_labels(&labeled, &mask, &a, &model, 0.05).unwrap();
        assert_eq!(first, second);
    }

    proptest! {
        #[test]
        fn icm_energy_never_rises(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..150)
                .map(|_| Vec3::new(rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.05)))
                .collect();
            let cloud = PointCloud::new(pts).unwrap();
            let labels: Vec<Option<Label>> = (0..150)
                .map(|_| match rng.gen_range(0..4) {
                    0 => None,
                    k => Some((k, k + 10)),
                })
                .collect();
            let s = smooth_labels(&cloud, &Transferred { labels }, &TransferConfig::default()).unwrap();
            for w in s.energies.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            // pairs move together
            for l in &s.labels {
                prop_assert!(*l == BACKGROUND || l.1 == l.0 + 10);
            }
        }
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let (scan, _, model) = scene_and_model();
        let a = Arrangement::new(1, vec![]).unwrap();
        assert!(transfer_labels(&scan, &[true], &a, &model, 0.05).is_err());
    }
}
