//! Procedural rooms with parametric furniture, scanned over several
//! timesteps while objects are moved, removed and brought back.
//!
//! A [`SceneScript`] is a TOML document:
//!
//! ```toml
//! seed = 7
//! noise = 0.002            # Gaussian position noise (m), per axis
//! sample_spacing = 0.02    # surface sampling step (m)
//!
//! [room]
//! width = 4.0              # x extent (m)
//! depth = 3.5              # y extent (m)
//! wall_height = 1.0
//! viewpoints = [[0.2, 0.2, 1.6], [3.8, 3.3, 1.6]]
//!
//! [[prototypes]]
//! name = "chair"
//! class = 1
//! shape = { kind = "chair", width = 0.46, depth = 0.46, seat_height = 0.45, back_height = 0.85 }
//!
//! [[objects]]
//! id = 1
//! prototype = "chair"
//! pose = { x = 1.0, y = 1.2, yaw_deg = 30.0 }
//!
//! [[steps]]                # one per timestep after the first
//! events = [
//!   { kind = "move", object = 1, pose = { x = 2.0, y = 1.5, yaw_deg = 90.0 } },
//!   { kind = "remove", object = 2 },
//!   { kind = "add", object = 2 },   # pose optional: last known pose
//! ]
//! viewpoints = [[0.2, 3.3, 1.6]]   # optional override for this timestep
//! ```
//!
//! Shapes: `box` (`size = [w, d, h]`), `cylinder` (`radius`, `height`),
//! `chair` (`width`, `depth`, `seat_height`, `back_height`) and `table`
//! (`width`, `depth`, `height`). Prototype frames sit on the floor at the
//! footprint centre; the chair back is on the +y side.
//!
//! Points whose normal faces away from every viewpoint are dropped (no
//! viewpoints: nothing is dropped). Static structure carries semantic class
//! 0 and instance 0; objects carry their prototype's class and their id.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{GroundTruth, Permutation};
use crate::geometry::{GroundPose, PointCloud, Vec3, STATIC_CLASS, UNASSIGNED};
use crate::ply::{write_ply, Encoding, PlyExtras};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub seed: u64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_spacing")]
    pub sample_spacing: f64,
    pub room: Room,
    #[serde(default)]
    pub prototypes: Vec<Prototype>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub steps: Vec<Step>,
}

fn default_spacing() -> f64 {
    0.02
}

fn default_wall_height() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub width: f64,
    pub depth: f64,
    #[serde(default = "default_wall_height")]
    pub wall_height: f64,
    #[serde(default)]
    pub viewpoints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub name: String,
    pub class: u32,
    pub shape: Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box {
        size: [f64; 3],
    },
    Cylinder {
        radius: f64,
        height: f64,
    },
    Chair {
        width: f64,
        depth: f64,
        seat_height: f64,
        back_height: f64,
    },
    Table {
        width: f64,
        depth: f64,
        height: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub yaw_deg: f64,
}

impl PlanarPose {
    pub fn to_pose(self) -> GroundPose {
        GroundPose::new(self.x, self.y, 0.0, self.yaw_deg.to_radians())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    pub prototype: String,
    pub pose: PlanarPose,
    /// Present at the first timestep.
    #[serde(default = "yes")]
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Step {
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewpoints: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Move {
        object: u32,
        pose: PlanarPose,
    },
    Remove {
        object: u32,
    },
    Add {
        object: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pose: Option<PlanarPose>,
    },
}

impl SceneScript {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("script serializes")
    }

    pub fn timesteps(&self) -> usize {
        1 + self.steps.len()
    }
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Cuboid { min: Vec3, max: Vec3 },
    Cylinder { radius: f64, height: f64 },
}

const CONTACT_EPS: f64 = 1e-9;

impl Primitive {
    fn contains(&self, p: &Vec3) -> bool {
        match *self {
            Primitive::Cuboid { min, max } => (0..3)
                .all(|k| p[k] >= min[k] - CONTACT_EPS && p[k] <= max[k] + CONTACT_EPS),
            Primitive::Cylinder { radius, height } => {
                p.xy().norm() <= radius + CONTACT_EPS
                    && p.z >= -CONTACT_EPS
                    && p.z <= height + CONTACT_EPS
            }
        }
    }
}

impl Shape {
    fn primitives(&self) -> Vec<Primitive> {
        const LEG: f64 = 0.04;
        const SLAB: f64 = 0.04;
        let cuboid = |a: [f64; 3], b: [f64; 3]| Primitive::Cuboid {
            min: Vec3::from(a),
            max: Vec3::from(b),
        };
        let legs = |w: f64, d: f64, h: f64| {
            let (x, y) = (w / 2.0, d / 2.0);
            [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)].map(|(sx, sy): (f64, f64)| {
                let cx = sx * (x - LEG / 2.0);
                let cy = sy * (y - LEG / 2.0);
                cuboid(
                    [cx - LEG / 2.0, cy - LEG / 2.0, 0.0],
                    [cx + LEG / 2.0, cy + LEG / 2.0, h],
                )
            })
        };
        match *self {
            Shape::Box { size: [w, d, h] } => {
                vec![cuboid([-w / 2.0, -d / 2.0, 0.0], [w / 2.0, d / 2.0, h])]
            }
            Shape::Cylinder { radius, height } => vec![Primitive::Cylinder { radius, height }],
            Shape::Chair {
                width: w,
                depth: d,
                seat_height: s,
                back_height: b,
            } => {
                let mut v = legs(w, d, s - SLAB).to_vec();
                v.push(cuboid([-w / 2.0, -d / 2.0, s - SLAB], [w / 2.0, d / 2.0, s]));
                v.push(cuboid([-w / 2.0, d / 2.0 - SLAB, s], [w / 2.0, d / 2.0, b]));
                v
            }
            Shape::Table {
                width: w,
                depth: d,
                height: h,
            } => {
                let mut v = legs(w, d, h - SLAB).to_vec();
                v.push(cuboid([-w / 2.0, -d / 2.0, h - SLAB], [w / 2.0, d / 2.0, h]));
                v
            }
        }
    }

    /// Half extents of the footprint rectangle, centred on the origin.
    pub fn half_footprint(&self) -> (f64, f64) {
        match *self {
            Shape::Box { size } => (size[0] / 2.0, size[1] / 2.0),
            Shape::Cylinder { radius, .. } => (radius, radius),
            Shape::Chair { width, depth, .. } | Shape::Table { width, depth, .. } => {
                (width / 2.0, depth / 2.0)
            }
        }
    }

    /// Order of the yaw symmetry; 0 for rotationally symmetric shapes.
    pub fn symmetry(&self) -> u32 {
        let square = |a: f64, b: f64| (a - b).abs() < 1e-9;
        match *self {
            Shape::Box { size } => {
                if square(size[0], size[1]) {
                    4
                } else {
                    2
                }
            }
            Shape::Cylinder { .. } => 0,
            Shape::Chair { .. } => 1,
            Shape::Table { width, depth, .. } => {
                if square(width, depth) {
                    4
                } else {
                    2
                }
            }
        }
    }

    fn validate(&self) -> bool {
        match *self {
            Shape::Box { size } => size.iter().all(|&s| s > 0.0),
            Shape::Cylinder { radius, height } => radius > 0.0 && height > 0.0,
            Shape::Chair {
                width,
                depth,
                seat_height,
                back_height,
            } => width > 0.1 && depth > 0.1 && seat_height > 0.1 && back_height > seat_height,
            Shape::Table {
                width,
                depth,
                height,
            } => width > 0.1 && depth > 0.1 && height > 0.1,
        }
    }
}

/// Samples one axis-aligned rectangle `origin + s u + t v` (s, t in [0, 1])
/// on a jittered grid.
fn sample_rect(
    rng: &mut ChaCha8Rng,
    spacing: f64,
    origin: Vec3,
    u: Vec3,
    v: Vec3,
    normal: Vec3,
    out: &mut Vec<(Vec3, Vec3)>,
) {
    let nu = (u.norm() / spacing).ceil().max(1.0) as usize;
    let nv = (v.norm() / spacing).ceil().max(1.0) as usize;
    for a in 0..nu {
        for b in 0..nv {
            let s = (a as f64 + rng.gen::<f64>()) / nu as f64;
            let t = (b as f64 + rng.gen::<f64>()) / nv as f64;
            out.push((origin + u * s + v * t, normal));
        }
    }
}

fn sample_primitive(prim: &Primitive, rng: &mut ChaCha8Rng, spacing: f64) -> Vec<(Vec3, Vec3)> {
    let mut out = Vec::new();
    match *prim {
        Primitive::Cuboid { min, max } => {
            let e = max - min;
            for axis in 0..3 {
                let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut u = Vec3::zeros();
                u[ua] = e[ua];
                let mut v = Vec3::zeros();
                v[va] = e[va];
                for side in [0, 1] {
                    let mut origin = min;
                    let mut n = Vec3::zeros();
                    if side == 1 {
                        origin[axis] = max[axis];
                        n[axis] = 1.0;
                    } else {
                        n[axis] = -1.0;
                    }
                    // faces resting on the floor are never seen
                    if axis == 2 && side == 0 && min.z <= CONTACT_EPS {
                        continue;
                    }
                    sample_rect(rng, spacing, origin, u, v, n, &mut out);
                }
            }
        }
        Primitive::Cylinder { radius, height } => {
            let nt = (TAU * radius / spacing).ceil().max(3.0) as usize;
            let nz = (height / spacing).ceil().max(1.0) as usize;
            for a in 0..nt {
                for b in 0..nz {
                    let th = (a as f64 + rng.gen::<f64>()) / nt as f64 * TAU;
                    let z = (b as f64 + rng.gen::<f64>()) / nz as f64 * height;
                    let n = Vec3::new(th.cos(), th.sin(), 0.0);
                    out.push((Vec3::new(radius * n.x, radius * n.y, z), n));
                }
            }
            let mut disk = Vec::new();
            sample_rect(
                rng,
                spacing,
                Vec3::new(-radius, -radius, height),
                Vec3::new(2.0 * radius, 0.0, 0.0),
                Vec3::new(0.0, 2.0 * radius, 0.0),
                Vec3::z(),
                &mut disk,
            );
            out.extend(disk.into_iter().filter(|(p, _)| p.xy().norm() <= radius));
        }
    }
    out
}

/// Noise-free surface samples of a shape in its own frame.
pub fn sample_shape(shape: &Shape, rng: &mut ChaCha8Rng, spacing: f64) -> Vec<(Vec3, Vec3)> {
    let prims = shape.primitives();
    let mut out = Vec::new();
    for (k, prim) in prims.iter().enumerate() {
        for (p, n) in sample_primitive(prim, rng, spacing) {
            let hidden = prims
                .iter()
                .enumerate()
                .any(|(j, other)| j != k && other.contains(&p));
            if !hidden {
                out.push((p, n));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInfo {
    pub prototype: String,
    pub class: u32,
    /// Yaw symmetry order of the shape (0: continuous).
    pub symmetry: u32,
}

/// A generated sequence and everything known about it.
#[derive(Debug, Clone)]
pub struct Sequence {
    /// Labeled scans and permutation set.
    pub truth: GroundTruth,
    /// Prototype-frame pose of every present object, per timestep.
    pub poses: Vec<BTreeMap<u32, GroundPose>>,
    pub objects: BTreeMap<u32, ObjectInfo>,
}

impl Sequence {
    /// Scan `t` as the pipeline sees it: labels kept only at t0.
    pub fn input_scan(&self, t: usize) -> PointCloud {
        let mut scan = self.truth.scans[t].clone();
        if t > 0 {
            scan.clear_labels();
        }
        scan
    }

    /// True pose at `t` of a model object whose frame was placed at
    /// `bootstrap` in the first scan; `None` if the object is absent.
    pub fn model_pose(&self, id: u32, t: usize, bootstrap: &GroundPose) -> Option<GroundPose> {
        let first = self.poses.first()?.get(&id)?;
        let now = self.poses.get(t)?.get(&id)?;
        Some(now.compose(&first.inverse()).compose(bootstrap))
    }
}

struct Placed {
    id: u32,
    shape: Shape,
    pose: GroundPose,
}

fn footprint_corners(shape: &Shape, pose: &GroundPose) -> [Vec3; 4] {
    let (hx, hy) = shape.half_footprint();
    [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)].map(|(x, y)| pose.apply(&Vec3::new(x, y, 0.0)))
}

/// Separating-axis test on two oriented footprint rectangles.
fn footprints_overlap(a: &Placed, b: &Placed) -> bool {
    let ca = footprint_corners(&a.shape, &a.pose);
    let cb = footprint_corners(&b.shape, &b.pose);
    let axes = [ca[1] - ca[0], ca[3] - ca[0], cb[1] - cb[0], cb[3] - cb[0]];
    for axis in axes {
        let axis = axis.normalize();
        let span = |c: &[Vec3; 4]| {
            c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let t = p.dot(&axis);
                (lo.min(t), hi.max(t))
            })
        };
        let (a0, a1) = span(&ca);
        let (b0, b1) = span(&cb);
        if a1 <= b0 || b1 <= a0 {
            return false;
        }
    }
    true
}

/// All products of permutations within groups of objects sharing a
/// prototype, identity first.
fn permutation_set(objects: &BTreeMap<u32, ObjectInfo>) -> Vec<Permutation> {
    let mut groups: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for (&id, info) in objects {
        groups.entry(info.prototype.as_str()).or_default().push(id);
    }
    let mut set = vec![Permutation::new()];
    for ids in groups.values().filter(|g| g.len() > 1) {
        let mut orders = Vec::new();
        permute(ids.clone(), 0, &mut orders);
        let mut next = Vec::with_capacity(set.len() * orders.len());
        for base in &set {
            for order in &orders {
                let mut p = base.clone();
                for (&from, &to) in ids.iter().zip(order) {
                    if from != to {
                        p.insert(from, to);
                    }
                }
                next.push(p);
            }
        }
        set = next;
    }
    set
}

fn permute(mut v: Vec<u32>, k: usize, out: &mut Vec<Vec<u32>>) {
    if k == v.len() {
        out.push(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v.clone(), k + 1, out);
        v.swap(k, i);
    }
}

fn culled(p: &Vec3, n: &Vec3, viewpoints: &[[f64; 3]]) -> bool {
    !viewpoints.is_empty() && viewpoints.iter().all(|v| (Vec3::from(*v) - p).dot(n) <= 0.0)
}

pub fn generate_sequence(script: &SceneScript) -> Result<Sequence> {
    let bad = |timestep: usize, message: String| Error::InvalidScript { timestep, message };
    let room = &script.room;
    if !(room.width > 0.0 && room.depth > 0.0 && room.wall_height > 0.0) {
        return Err(bad(0, "room dimensions must be positive".into()));
    }
    if !(script.sample_spacing > 0.0) || !(script.noise >= 0.0) {
        return Err(bad(0, "sample_spacing must be positive and noise non-negative".into()));
    }
    let mut prototypes: BTreeMap<&str, &Prototype> = BTreeMap::new();
    for p in &script.prototypes {
        if p.class == STATIC_CLASS || !p.shape.validate() {
            return Err(bad(0, format!("invalid prototype '{}'", p.name)));
        }
        if prototypes.insert(&p.name, p).is_some() {
            return Err(bad(0, format!("duplicate prototype '{}'", p.name)));
        }
    }
    let mut objects = BTreeMap::new();
    for o in &script.objects {
        let proto = prototypes
            .get(o.prototype.as_str())
            .ok_or_else(|| bad(0, format!("object {} uses unknown prototype '{}'", o.id, o.prototype)))?;
        if o.id == UNASSIGNED {
            return Err(bad(0, "object id 0 is reserved".into()));
        }
        let info = ObjectInfo {
            prototype: o.prototype.clone(),
            class: proto.class,
            symmetry: proto.shape.symmetry(),
        };
        if objects.insert(o.id, info).is_some() {
            return Err(bad(0, format!("duplicate object id {}", o.id)));
        }
    }
    let shape_of = |id: u32| prototypes[objects[&id].prototype.as_str()].shape;

    // replay events
    let mut state: BTreeMap<u32, GroundPose> = BTreeMap::new();
    let mut last: BTreeMap<u32, GroundPose> = BTreeMap::new();
    for o in &script.objects {
        last.insert(o.id, o.pose.to_pose());
        if o.present {
            state.insert(o.id, o.pose.to_pose());
        }
    }
    let mut poses = vec![state.clone()];
    for (k, step) in script.steps.iter().enumerate() {
        let t = k + 1;
        for ev in &step.events {
            match *ev {
                Event::Move { object, pose } => {
                    let slot = state
                        .get_mut(&object)
                        .ok_or_else(|| bad(t, format!("move of absent object {object}")))?;
                    *slot = pose.to_pose();
                }
                Event::Remove { object } => {
                    state
                        .remove(&object)
                        .ok_or_else(|| bad(t, format!("remove of absent object {object}")))?;
                }
                Event::Add { object, pose } => {
                    if !objects.contains_key(&object) {
                        return Err(bad(t, format!("add of unknown object {object}")));
                    }
                    if state.contains_key(&object) {
                        return Err(bad(t, format!("add of present object {object}")));
                    }
                    state.insert(object, pose.map(PlanarPose::to_pose).unwrap_or(last[&object]));
                }
            }
        }
        for (&id, &p) in &state {
            last.insert(id, p);
        }
        poses.push(state.clone());
    }

    // layout checks
    for (t, placed) in poses.iter().enumerate() {
        let items: Vec<Placed> = placed
            .iter()
            .map(|(&id, &pose)| Placed {
                id,
                shape: shape_of(id),
                pose,
            })
            .collect();
        for it in &items {
            let inside = footprint_corners(&it.shape, &it.pose).iter().all(|c| {
                c.x >= 0.0 && c.x <= room.width && c.y >= 0.0 && c.y <= room.depth
            });
            if !inside {
                return Err(bad(t, format!("object {} leaves the room", it.id)));
            }
        }
        for (i, a) in items.iter().enumerate() {
            for b in &items[i + 1..] {
                if footprints_overlap(a, b) {
                    return Err(bad(t, format!("objects {} and {} overlap", a.id, b.id)));
                }
            }
        }
    }

    let mut scans = Vec::with_capacity(poses.len());
    for (t, placed) in poses.iter().enumerate() {
        let viewpoints = match t {
            0 => &room.viewpoints,
            _ => script.steps[t - 1].viewpoints.as_ref().unwrap_or(&room.viewpoints),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(script.seed ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let solids: Vec<(GroundPose, Vec<Primitive>)> = placed
            .iter()
            .map(|(&id, &pose)| (pose.inverse(), shape_of(id).primitives()))
            .collect();
        let occupied = |p: &Vec3| {
            solids
                .iter()
                .any(|(inv, prims)| {
                    let q = inv.apply(p);
                    prims.iter().any(|pr| pr.contains(&q))
                })
        };

        let mut pts = Vec::new();
        let mut nrm = Vec::new();
        let mut sem = Vec::new();
        let mut inst = Vec::new();
        let (w, d, h) = (room.width, room.depth, room.wall_height);
        let mut shell = Vec::new();
        let s = script.sample_spacing;
        let x = Vec3::x();
        let y = Vec3::y();
        let z = Vec3::z();
        sample_rect(&mut rng, s, Vec3::zeros(), x * w, y * d, z, &mut shell);
        sample_rect(&mut rng, s, Vec3::zeros(), y * d, z * h, x, &mut shell);
        sample_rect(&mut rng, s, Vec3::new(w, 0.0, 0.0), y * d, z * h, -x, &mut shell);
        sample_rect(&mut rng, s, Vec3::zeros(), x * w, z * h, y, &mut shell);
        sample_rect(&mut rng, s, Vec3::new(0.0, d, 0.0), x * w, z * h, -y, &mut shell);
        for (p, n) in shell {
            if !occupied(&p) && !culled(&p, &n, viewpoints) {
                pts.push(p);
                nrm.push(n);
                sem.push(STATIC_CLASS);
                inst.push(UNASSIGNED);
            }
        }
        for (&id, pose) in placed {
            let class = objects[&id].class;
            for (p, n) in sample_shape(&shape_of(id), &mut rng, s) {
                let (p, n) = (pose.apply(&p), pose.rotate(&n));
                if !culled(&p, &n, viewpoints) {
                    pts.push(p);
                    nrm.push(n);
                    sem.push(class);
                    inst.push(id);
                }
            }
        }
        if script.noise > 0.0 {
            let normal = Normal::new(0.0, script.noise).expect("finite sigma");
            for p in pts.iter_mut() {
                *p += Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
        let mut cloud = PointCloud::with_normals(pts, nrm)?;
        cloud.set_labels(sem, inst)?;
        scans.push(cloud);
    }

    let permutations = permutation_set(&objects);
    Ok(Sequence {
        truth: GroundTruth {
            scans,
            permutations,
        },
        poses,
        objects,
    })
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    id: u32,
    prototype: String,
    class: u32,
    symmetry: u32,
    tx: f64,
    ty: f64,
    yaw: f64,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    timestep: usize,
    objects: Vec<PoseRecord>,
}

pub const SCRIPT_FILE: &str = "scene.toml";

pub fn scan_name(t: usize) -> String {
    format!("scan_{t:03}.ply")
}

/// Writes a scene directory: `scene.toml`, `scan_000.ply` (labeled),
/// `scan_NNN.ply` (unlabeled) and `gt/` with labeled scans,
/// `permutations.json` and `poses.json`.
pub fn write_scene(script: &SceneScript, seq: &Sequence, dir: &Path) -> Result<()> {
    let gt_dir = dir.join("gt");
    fs::create_dir_all(&gt_dir).map_err(|e| Error::io(&gt_dir, e))?;
    let path = dir.join(SCRIPT_FILE);
    fs::write(&path, script.to_toml()).map_err(|e| Error::io(&path, e))?;
    for t in 0..seq.truth.scans.len() {
        let name = scan_name(t);
        write_ply(&dir.join(&name), &seq.input_scan(t), PlyExtras::default(), Encoding::BinaryLittleEndian)?;
        write_ply(&gt_dir.join(&name), &seq.truth.scans[t], PlyExtras::default(), Encoding::BinaryLittleEndian)?;
    }
    let path = gt_dir.join("permutations.json");
    let text = serde_json::to_string_pretty(&seq.truth.permutations).expect("serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    let records: Vec<StepRecord> = seq
        .poses
        .iter()
        .enumerate()
        .map(|(t, placed)| StepRecord {
            timestep: t,
            objects: placed
                .iter()
                .map(|(&id, p)| {
                    let info = &seq.objects[&id];
                    PoseRecord {
                        id,
                        prototype: info.prototype.clone(),
                        class: info.class,
                        symmetry: info.symmetry,
                        tx: p.tx,
                        ty: p.ty,
                        yaw: p.yaw,
                    }
                })
                .collect(),
        })
        .collect();
    let path = gt_dir.join("poses.json");
    let text = serde_json::to_string_pretty(&records).expect("serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Reads `gt/permutations.json` of a scene directory.
pub fn read_permutations(dir: &Path) -> Result<Vec<Permutation>> {
    let path = dir.join("permutations.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))
}

// ---------------------------------------------------------------------------
// default benchmark suite

struct Kind {
    name: &'static str,
    class: u32,
    shape: Shape,
}

const KINDS: [Kind; 5] = [
    Kind {
        name: "chair",
        class: 1,
        shape: Shape::Chair {
            width: 0.46,
            depth: 0.46,
            seat_height: 0.45,
            back_height: 0.85,
        },
    },
    Kind {
        name: "table",
        class: 2,
        shape: Shape::Table {
            width: 0.9,
            depth: 0.6,
            height: 0.72,
        },
    },
    Kind {
        name: "cabinet",
        class: 3,
        shape: Shape::Box {
            size: [0.5, 0.4, 0.8],
        },
    },
    Kind {
        name: "bin",
        class: 4,
        shape: Shape::Cylinder {
            radius: 0.17,
            height: 0.45,
        },
    },
    Kind {
        name: "crate",
        class: 5,
        shape: Shape::Box {
            size: [0.42, 0.32, 0.3],
        },
    },
];

/// Object counts of the default suite's scenes.
pub const SUITE_OBJECT_COUNTS: [usize; 10] = [3, 5, 6, 7, 8, 5, 6, 7, 8, 6];

const SUITE_ROOM: (f64, f64) = (4.0, 3.5);
const SUITE_MARGIN: f64 = 0.15;
const SUITE_GAP: f64 = 0.2;

fn suite_viewpoints(t: usize) -> Vec<[f64; 3]> {
    let (w, d) = SUITE_ROOM;
    let corners = [[0.2, 0.2, 1.6], [w - 0.2, 0.2, 1.6], [w - 0.2, d - 0.2, 1.6], [0.2, d - 0.2, 1.6]];
    // three of the four corners, rotating per timestep
    (0..3).map(|k| corners[(t + k) % 4]).collect()
}

fn random_pose(rng: &mut ChaCha8Rng, shape: &Shape) -> PlanarPose {
    let (w, d) = SUITE_ROOM;
    let (hx, hy) = shape.half_footprint();
    let r = (hx * hx + hy * hy).sqrt() + SUITE_MARGIN;
    PlanarPose {
        x: rng.gen_range(r..w - r),
        y: rng.gen_range(r..d - r),
        yaw_deg: rng.gen_range(0.0..360.0),
    }
}

fn fits(shape: &Shape, pose: &PlanarPose, others: &[(Shape, PlanarPose)]) -> bool {
    let grow = |s: &Shape| {
        let (hx, hy) = s.half_footprint();
        Shape::Box {
            size: [2.0 * hx + SUITE_GAP, 2.0 * hy + SUITE_GAP, 1.0],
        }
    };
    let me = Placed {
        id: 0,
        shape: grow(shape),
        pose: pose.to_pose(),
    };
    others.iter().all(|(s, p)| {
        !footprints_overlap(
            &me,
            &Placed {
                id: 0,
                shape: grow(s),
                pose: p.to_pose(),
            },
        )
    })
}

/// Scene `index` of the default suite: a 4 m x 3.5 m room, four timesteps,
/// one or two moves per step, occasional removals and re-entries. Scenes
/// mix identical duplicates (listed as permutations) with look-alike
/// objects of distinct identity.
pub fn suite_scene(index: usize, noise: f64) -> SceneScript {
    let count = SUITE_OBJECT_COUNTS[index % SUITE_OBJECT_COUNTS.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5u64 << 32 | index as u64);

    // pick kinds in pairs: the second of a pair shares the first's shape
    let mut picks: Vec<(usize, String)> = Vec::new();
    let mut twin_counter: BTreeMap<usize, usize> = BTreeMap::new();
    while picks.len() < count {
        let k = rng.gen_range(0..KINDS.len());
        // tables are large; at most one per scene
        if k == 1 && picks.iter().any(|(p, _)| *p == 1) {
            continue;
        }
        let n = twin_counter.entry(k).or_default();
        *n += 1;
        picks.push((k, format!("{}_{}", KINDS[k].name, (b'a' + (*n as u8 - 1)) as char)));
        if picks.len() < count && k != 1 {
            let look_alike = rng.gen_bool(0.6);
            let name = if look_alike {
                let n = twin_counter.entry(k).or_default();
                *n += 1;
                format!("{}_{}", KINDS[k].name, (b'a' + (*n as u8 - 1)) as char)
            } else {
                picks.last().unwrap().1.clone()
            };
            picks.push((k, name));
        }
    }

    let mut prototypes: Vec<Prototype> = Vec::new();
    for (k, name) in &picks {
        if !prototypes.iter().any(|p| &p.name == name) {
            prototypes.push(Prototype {
                name: name.clone(),
                class: KINDS[*k].class,
                shape: KINDS[*k].shape,
            });
        }
    }

    let mut layout: Vec<(Shape, PlanarPose)> = Vec::new();
    let mut objects = Vec::new();
    for (i, (k, name)) in picks.iter().enumerate() {
        let shape = KINDS[*k].shape;
        let pose = loop {
            let p = random_pose(&mut rng, &shape);
            if fits(&shape, &p, &layout) {
                break p;
            }
        };
        layout.push((shape, pose));
        objects.push(ObjectSpec {
            id: i as u32 + 1,
            prototype: name.clone(),
            pose,
            present: true,
        });
    }

    let mut present: Vec<bool> = vec![true; count];
    let mut removed: Vec<usize> = Vec::new();
    let mut steps = Vec::new();
    for t in 1..4 {
        let mut events = Vec::new();
        // re-enter a previously removed object at its old place
        if let Some(i) = removed.pop() {
            let others: Vec<(Shape, PlanarPose)> = (0..count)
                .filter(|&j| present[j])
                .map(|j| layout[j])
                .collect();
            if fits(&layout[i].0, &layout[i].1, &others) {
                present[i] = true;
                events.push(Event::Add {
                    object: i as u32 + 1,
                    pose: None,
                });
            } else {
                removed.push(i);
            }
        }
        let moves = rng.gen_range(1..=2);
        let mut moved = Vec::new();
        for _ in 0..moves {
            let candidates: Vec<usize> = (0..count)
                .filter(|&j| present[j] && !moved.contains(&j))
                .collect();
            if candidates.is_empty() {
                break;
            }
            let i = candidates[rng.gen_range(0..candidates.len())];
            let shape = layout[i].0;
            for _ in 0..200 {
                let p = random_pose(&mut rng, &shape);
                let dist = ((p.x - layout[i].1.x).powi(2) + (p.y - layout[i].1.y).powi(2)).sqrt();
                if !(0.3..=2.0).contains(&dist) {
                    continue;
                }
                let others: Vec<(Shape, PlanarPose)> = (0..count)
                    .filter(|&j| j != i && present[j])
                    .map(|j| layout[j])
                    .collect();
                // a look-alike must stay closer to its own old spot than to
                // any same-shaped object's
                let confusable = (0..count).any(|j| {
                    j != i
                        && present[j]
                        && picks[j].0 == picks[i].0
                        && ((p.x - layout[j].1.x).powi(2) + (p.y - layout[j].1.y).powi(2)).sqrt()
                            < dist + 0.3
                });
                if fits(&shape, &p, &others) && !confusable {
                    layout[i].1 = p;
                    events.push(Event::Move {
                        object: i as u32 + 1,
                        pose: p,
                    });
                    moved.push(i);
                    break;
                }
            }
        }
        if count > 4 && t < 3 && rng.gen_bool(0.5) {
            let candidates: Vec<usize> = (0..count)
                .filter(|&j| present[j] && !moved.contains(&j))
                .collect();
            if !candidates.is_empty() {
                let i = candidates[rng.gen_range(0..candidates.len())];
                present[i] = false;
                removed.push(i);
                events.push(Event::Remove {
                    object: i as u32 + 1,
                });
            }
        }
        steps.push(Step {
            events,
            viewpoints: Some(suite_viewpoints(t)),
        });
    }

    SceneScript {
        seed: 1000 + index as u64,
        noise,
        sample_spacing: 0.02,
        room: Room {
            width: SUITE_ROOM.0,
            depth: SUITE_ROOM.1,
            wall_height: 1.0,
            viewpoints: suite_viewpoints(0),
        },
        prototypes,
        objects,
        steps,
    }
}

/// The ten-scene, four-timestep default benchmark.
pub fn default_suite(noise: f64) -> Vec<SceneScript> {
    (0..SUITE_OBJECT_COUNTS.len()).map(|i| suite_scene(i, noise)).collect()
}

/// Default suite noise level (m).
pub const SUITE_NOISE: f64 = 0.002;
