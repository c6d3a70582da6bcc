//! On-disk model format.
//!
//! A model directory holds `model.json` and one binary PLY per object under
//! `objects/obj_<id>.ply` (object frame, with normals). The manifest:
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "next_id": 13,
//!   "timesteps": 2,
//!   "objects": [
//!     { "id": 10, "class": 1, "point_count": 812,
//!       "centroid": [x, y, z], "covariance": [[..], [..], [..]],
//!       "geometry": "objects/obj_10.ply",
//!       "poses": [ { "timestep": 0, "tx": .., "ty": .., "tz": .., "yaw": .., "score": 1.0 } ] }
//!   ]
//! }
//! ```
//!
//! An object missing from a timestep's arrangement simply has no pose entry
//! for it. Floats are written in shortest round-trip form. `centroid` and
//! `covariance` are informational; they are recomputed from the geometry on
//! load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arrangement, ObjectInstance, PosedObject, TemporalModel};
use crate::error::{Error, Result};
use crate::geometry::GroundPose;
use crate::ply::{read_ply, write_ply, Encoding, PlyExtras};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "model.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    next_id: u32,
    timesteps: usize,
    objects: Vec<ObjectEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectEntry {
    id: u32,
    class: u32,
    point_count: usize,
    centroid: [f64; 3],
    covariance: [[f64; 3]; 3],
    geometry: String,
    poses: Vec<PoseEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseEntry {
    timestep: usize,
    tx: f64,
    ty: f64,
    tz: f64,
    yaw: f64,
    score: f64,
}

pub fn manifest_json(model: &TemporalModel) -> String {
    let objects = model
        .objects()
        .map(|o| {
            let c = o.centroid();
            let s = o.covariance();
            ObjectEntry {
                id: o.id(),
                class: o.class(),
                point_count: o.geometry().len(),
                centroid: [c.x, c.y, c.z],
                covariance: [0, 1, 2].map(|r| [0, 1, 2].map(|k| s[(r, k)])),
                geometry: format!("objects/obj_{}.ply", o.id()),
                poses: model
                    .history()
                    .iter()
                    .filter_map(|a| {
                        a.get(o.id()).map(|p| PoseEntry {
                            timestep: a.timestep(),
                            tx: p.pose.tx,
                            ty: p.pose.ty,
                            tz: p.pose.tz,
                            yaw: p.pose.yaw,
                            score: p.score,
                        })
                    })
                    .collect(),
            }
        })
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        next_id: model.next_id(),
        timesteps: model.history().len(),
        objects,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    text
}

pub fn save_model(model: &TemporalModel, dir: &Path) -> Result<()> {
    let obj_dir = dir.join("objects");
    fs::create_dir_all(&obj_dir).map_err(|e| Error::io(&obj_dir, e))?;
    for o in model.objects() {
        let path = obj_dir.join(format!("obj_{}.ply", o.id()));
        write_ply(&path, o.geometry(), PlyExtras::default(), Encoding::BinaryLittleEndian)?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest_json(model)).map_err(|e| Error::io(&path, e))
}

pub fn load_model(dir: &Path) -> Result<TemporalModel> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::parse(
            &path,
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    let mut objects = Vec::with_capacity(manifest.objects.len());
    let mut per_step: Vec<Vec<PosedObject>> = vec![Vec::new(); manifest.timesteps];
    for entry in &manifest.objects {
        let gpath = dir.join(&entry.geometry);
        let geometry = read_ply(&gpath)?.cloud;
        if geometry.len() != entry.point_count {
            return Err(Error::parse(
                &gpath,
                format!("expected {} points, found {}", entry.point_count, geometry.len()),
            ));
        }
        if !geometry.has_normals() {
            return Err(Error::parse(&gpath, "object geometry lacks normals"));
        }
        objects.push(ObjectInstance::new(entry.id, entry.class, geometry)?);
        for p in &entry.poses {
            let slot = per_step.get_mut(p.timestep).ok_or_else(|| {
                Error::parse(&path, format!("pose timestep {} out of range", p.timestep))
            })?;
            slot.push(PosedObject {
                id: entry.id,
                pose: GroundPose::new(p.tx, p.ty, p.tz, p.yaw),
                score: p.score,
            });
        }
    }
    let history = per_step
        .into_iter()
        .enumerate()
        .map(|(t, ps)| Arrangement::new(t, ps))
        .collect::<Result<Vec<_>>>()?;
    TemporalModel::from_parts(objects, history, manifest.next_id)
}
