//! The persistent temporal scene model: known objects plus one arrangement
//! per processed timestep.
//!
//! Object geometry lives in an object-local frame whose origin is the
//! object's centroid at the time it entered the model. Poses map that frame
//! into the scene.

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::cloud::{centroid, covariance};
use crate::geometry::{
    build_hierarchy, estimate_normals, GroundPose, PointCloud, SamplingHierarchy, Vec3,
    STATIC_CLASS, UNASSIGNED,
};

pub mod store;

/// Neighbourhood size used when an input cloud arrives without normals.
pub const NORMAL_NEIGHBORS: usize = 12;

/// Fraction of lowest geometry points ignored when measuring how far an
/// object extends below its origin.
const REST_QUANTILE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    id: u32,
    class: u32,
    geometry: PointCloud,
    centroid: Vec3,
    covariance: Matrix3<f64>,
    rest_height: f64,
    hierarchy: SamplingHierarchy,
}

impl ObjectInstance {
    /// `geometry` must be non-empty and carry normals.
    pub fn new(id: u32, class: u32, geometry: PointCloud) -> Result<Self> {
        let hierarchy = build_hierarchy(&geometry)?;
        let pts = geometry.points();
        let c = centroid(pts).expect("non-empty");
        let cov = covariance(pts, &c);
        let mut zs: Vec<f64> = pts.iter().map(|p| p.z).collect();
        zs.sort_by(f64::total_cmp);
        let low = zs[((zs.len() - 1) as f64 * REST_QUANTILE).round() as usize];
        Ok(Self {
            id,
            class,
            geometry: PointCloud::from_parts(pts.to_vec(), geometry.normals().map(<[_]>::to_vec), None, None),
            centroid: c,
            covariance: cov,
            rest_height: -low,
            hierarchy,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn class(&self) -> u32 {
        self.class
    }

    pub fn geometry(&self) -> &PointCloud {
        &self.geometry
    }

    /// Centroid of the geometry in the object frame.
    pub fn centroid(&self) -> Vec3 {
        self.centroid
    }

    pub fn covariance(&self) -> &Matrix3<f64> {
        &self.covariance
    }

    /// Height of the object-frame origin above the object's lowest surface.
    pub fn rest_height(&self) -> f64 {
        self.rest_height
    }

    pub fn hierarchy(&self) -> &SamplingHierarchy {
        &self.hierarchy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosedObject {
    pub id: u32,
    pub pose: GroundPose,
    /// Geometric match score in [0, 1].
    pub score: f64,
}

/// The posed objects explaining one timestep, kept sorted by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Arrangement {
    timestep: usize,
    placements: Vec<PosedObject>,
}

impl Arrangement {
    pub fn new(timestep: usize, mut placements: Vec<PosedObject>) -> Result<Self> {
        placements.sort_by_key(|p| p.id);
        if let Some(w) = placements.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateInstance(w[0].id));
        }
        if let Some(p) = placements.iter().find(|p| !(0.0..=1.0).contains(&p.score)) {
            return Err(Error::InvalidParameter(format!(
                "score {} of instance {} outside [0, 1]",
                p.score, p.id
            )));
        }
        Ok(Self {
            timestep,
            placements,
        })
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn placements(&self) -> &[PosedObject] {
        &self.placements
    }

    pub fn get(&self, id: u32) -> Option<&PosedObject> {
        self.placements
            .binary_search_by_key(&id, |p| p.id)
            .ok()
            .map(|i| &self.placements[i])
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemporalModel {
    objects: BTreeMap<u32, ObjectInstance>,
    history: Vec<Arrangement>,
    next_id: u32,
}

impl TemporalModel {
    /// Builds the model from a labeled first scan: one object per non-static
    /// instance label, recentred on its centroid and placed there at t0.
    pub fn bootstrap(scan: &PointCloud) -> Result<Self> {
        let (Some(sem), Some(inst)) = (scan.semantic(), scan.instance()) else {
            return Err(Error::LabelsRequired);
        };
        let scan = if scan.has_normals() {
            scan.clone()
        } else {
            estimate_normals(scan, NORMAL_NEIGHBORS)?.cloud
        };
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, (&s, &u)) in sem.iter().zip(inst).enumerate() {
            if s != STATIC_CLASS && u != UNASSIGNED {
                groups.entry(u).or_default().push(i);
            }
        }
        let mut model = TemporalModel {
            next_id: 1,
            ..Default::default()
        };
        let mut placements = Vec::new();
        for (&u, idx) in &groups {
            let class = majority(idx.iter().map(|&i| sem[i]));
            let seg = scan.select(idx);
            let c = seg.centroid().expect("non-empty group");
            let local = seg.transformed(&GroundPose::new(-c.x, -c.y, -c.z, 0.0));
            model.insert(ObjectInstance::new(u, class, local)?);
            placements.push(PosedObject {
                id: u,
                pose: GroundPose::new(c.x, c.y, c.z, 0.0),
                score: 1.0,
            });
        }
        model.history.push(Arrangement::new(0, placements)?);
        Ok(model)
    }

    /// Assembles a model from parts, checking referential integrity.
    pub fn from_parts(
        objects: Vec<ObjectInstance>,
        history: Vec<Arrangement>,
        next_id: u32,
    ) -> Result<Self> {
        let mut model = TemporalModel::default();
        for o in objects {
            if model.objects.contains_key(&o.id) {
                return Err(Error::DuplicateInstance(o.id));
            }
            model.insert(o);
        }
        model.next_id = model.next_id.max(next_id);
        for (i, a) in history.into_iter().enumerate() {
            if a.timestep != i {
                return Err(Error::TimestepMismatch {
                    expected: i,
                    got: a.timestep,
                });
            }
            model.check_refs(&a)?;
            model.history.push(a);
        }
        Ok(model)
    }

    fn insert(&mut self, o: ObjectInstance) {
        self.next_id = self.next_id.max(o.id + 1);
        self.objects.insert(o.id, o);
    }

    fn check_refs(&self, a: &Arrangement) -> Result<()> {
        match a.placements.iter().find(|p| !self.objects.contains_key(&p.id)) {
            Some(p) => Err(Error::UnknownInstance(p.id)),
            None => Ok(()),
        }
    }

    pub fn resolve(&self, u: u32) -> Result<&ObjectInstance> {
        self.objects.get(&u).ok_or(Error::UnknownInstance(u))
    }

    /// Objects in ascending id order.
    pub fn objects(&self) -> impl ExactSizeIterator<Item = &ObjectInstance> {
        self.objects.values()
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn history(&self) -> &[Arrangement] {
        &self.history
    }

    pub fn next_id(&self) -> u32 {
        self.next_id
    }

    /// Adds a new object with a freshly allocated id.
    pub fn add_object(&mut self, class: u32, geometry: PointCloud) -> Result<u32> {
        let id = self.next_id;
        self.insert(ObjectInstance::new(id, class, geometry)?);
        Ok(id)
    }

    /// Most recent placement of `u` in the history.
    pub fn last_placement(&self, u: u32) -> Option<&PosedObject> {
        self.history.iter().rev().find_map(|a| a.get(u))
    }

    /// Returns the model with `arrangement` appended and the listed objects'
    /// geometry replaced.
    pub fn updated(&self, arrangement: Arrangement, fused: Vec<(u32, PointCloud)>) -> Result<Self> {
        if arrangement.timestep != self.history.len() {
            return Err(Error::TimestepMismatch {
                expected: self.history.len(),
                got: arrangement.timestep,
            });
        }
        self.check_refs(&arrangement)?;
        let mut next = self.clone();
        for (u, g) in fused {
            let class = self.resolve(u)?.class;
            next.objects.insert(u, ObjectInstance::new(u, class, g)?);
        }
        next.history.push(arrangement);
        Ok(next)
    }
}

fn majority(labels: impl Iterator<Item = u32>) -> u32 {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // highest count, lowest label on ties
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
        .unwrap_or(STATIC_CLASS)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Labeled scan: a floor patch (static) and cubes of 0.3 m for each
    /// (instance, class, centre) triple.
    pub(crate) fn cube_scene(objects: &[(u32, u32, Vec3)]) -> PointCloud {
        let mut pts = Vec::new();
        let mut nrm = Vec::new();
        let mut sem = Vec::new();
        let mut inst = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
                nrm.push(Vec3::z());
                sem.push(STATIC_CLASS);
                inst.push(UNASSIGNED);
            }
        }
        for &(u, c, centre) in objects {
            for axis in 0..3 {
                for sign in [-1.0, 1.0] {
                    let mut n = Vec3::zeros();
                    n[axis] = sign;
                    for a in 0..7 {
                        for b in 0..7 {
                            let (s, t) = (a as f64 * 0.05 - 0.15, b as f64 * 0.05 - 0.15);
                            let mut p = Vec3::zeros();
                            p[axis] = 0.15 * sign;
                            p[(axis + 1) % 3] = s;
                            p[(axis + 2) % 3] = t;
                            pts.push(centre + p);
                            nrm.push(n);
                            sem.push(c);
                            inst.push(u);
                        }
                    }
                }
            }
        }
        let mut cloud = PointCloud::with_normals(pts, nrm).unwrap();
        cloud.set_labels(sem, inst).unwrap();
        cloud
    }

    fn three() -> TemporalModel {
        TemporalModel::bootstrap(&cube_scene(&[
            (1, 5, Vec3::new(0.5, 0.5, 0.15)),
            (2, 5, Vec3::new(1.2, 0.5, 0.15)),
            (3, 6, Vec3::new(0.5, 1.5, 0.15)),
        ]))
        .unwrap()
    }

    #[test]
    fn resolve_known_and_unknown() {
        let m = three();
        assert_eq!(m.resolve(2).unwrap().id(), 2);
        assert!(matches!(m.resolve(99), Err(Error::UnknownInstance(99))));
    }

    #[test]
    fn bootstrap_one_object_per_label() {
        let m = TemporalModel::bootstrap(&cube_scene(&[
            (10, 1, Vec3::new(0.5, 0.5, 0.15)),
            (11, 1, Vec3::new(1.0, 0.5, 0.15)),
            (12, 2, Vec3::new(1.5, 0.5, 0.15)),
        ]))
        .unwrap();
        assert_eq!(m.object_count(), 3);
        assert_eq!(m.history().len(), 1);
        let a = &m.history()[0];
        assert!(a.placements().iter().all(|p| p.score == 1.0));
        let p = a.get(11).unwrap();
        assert!((p.pose.translation() - Vec3::new(1.0, 0.5, 0.15)).norm() < 1e-12);
        let o = m.resolve(11).unwrap();
        assert!(o.centroid().norm() < 1e-12);
        assert!((o.rest_height() - 0.15).abs() < 1e-12);
        assert_eq!(m.next_id(), 13);
    }

    #[test]
    fn bootstrap_static_only_and_unlabeled() {
        let m = TemporalModel::bootstrap(&cube_scene(&[])).unwrap();
        assert_eq!(m.object_count(), 0);
        assert!(m.history()[0].is_empty());
        let bare = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        assert!(matches!(TemporalModel::bootstrap(&bare), Err(Error::LabelsRequired)));
    }

    #[test]
    fn add_object_allocates_fresh_id() {
        let mut m = three();
        let g = m.resolve(1).unwrap().geometry().clone();
        let k = m.add_object(7, g).unwrap();
        assert_eq!(k, 4);
        assert_eq!(m.resolve(k).unwrap().class(), 7);
    }

    #[test]
    fn update_appends_and_refits_stats() {
        let m = three();
        let a = Arrangement::new(1, vec![]).unwrap();
        let shifted = m
            .resolve(1)
            .unwrap()
            .geometry()
            .transformed(&GroundPose::new(0.2, 0.0, 0.0, 0.0));
        let m1 = m.updated(a, vec![(1, shifted)]).unwrap();
        assert_eq!(m1.history().len(), 2);
        assert!((m1.resolve(1).unwrap().centroid() - Vec3::new(0.2, 0.0, 0.0)).norm() < 1e-12);

        let late = Arrangement::new(3, vec![]).unwrap();
        assert!(matches!(
            m.updated(late, vec![]),
            Err(Error::TimestepMismatch { expected: 1, got: 3 })
        ));
        let a = Arrangement::new(1, vec![]).unwrap();
        let g = m.resolve(1).unwrap().geometry().clone();
        assert!(matches!(m.updated(a, vec![(42, g)]), Err(Error::UnknownInstance(42))));
    }

    #[test]
    fn arrangement_rejects_duplicates() {
        let p = PosedObject {
            id: 1,
            pose: GroundPose::identity(),
            score: 0.5,
        };
        assert!(matches!(Arrangement::new(0, vec![p, p]), Err(Error::DuplicateInstance(1))));
    }

    #[test]
    fn last_placement_uses_most_recent() {
        let m = three();
        let moved = PosedObject {
            id: 1,
            pose: GroundPose::new(3.0, 0.0, 0.15, 0.0),
            score: 0.9,
        };
        let m1 = m.updated(Arrangement::new(1, vec![moved]).unwrap(), vec![]).unwrap();
        let m2 = m1.updated(Arrangement::new(2, vec![]).unwrap(), vec![]).unwrap();
        assert_eq!(m2.last_placement(1).unwrap().pose.tx, 3.0);
        assert!((m2.last_placement(2).unwrap().pose.tx - 1.2).abs() < 1e-12);
    }
}
