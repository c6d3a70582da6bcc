//! Colored PLY exports of labeled scans and composed models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, UNASSIGNED};
use crate::model::TemporalModel;
use crate::ply::{write_ply, Encoding, PlyExtras};

pub const STATIC_GRAY: [u8; 3] = [160, 160, 160];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VizMode {
    #[default]
    Instance,
    Semantic,
}

impl std::str::FromStr for VizMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "instance" => Ok(Self::Instance),
            "semantic" => Ok(Self::Semantic),
            other => Err(format!("unknown viz mode '{other}'")),
        }
    }
}

/// Stable color for a label id: a hash of the id picks a hue, and the
/// saturation/value are fixed so colors stay readable and never gray.
/// Mode selects a different hash stream so class 3 and instance 3 differ.
pub fn palette(id: u32, mode: VizMode) -> [u8; 3] {
    if id == UNASSIGNED {
        return STATIC_GRAY;
    }
    let salt: u64 = match mode {
        VizMode::Instance => 0x9e37_79b9_7f4a_7c15,
        VizMode::Semantic => 0xc2b2_ae3d_27d4_eb4f,
    };
    // splitmix64 finalizer
    let mut z = (id as u64).wrapping_add(salt);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    let hue = (z % 3600) as f64 / 10.0;
    let sat = 0.65 + ((z >> 16) % 30) as f64 / 100.0;
    let val = 0.75 + ((z >> 32) % 25) as f64 / 100.0;
    hsv(hue, sat, val)
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let q = |t: f64| ((t + m) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// Per-point colors of a labeled cloud.
pub fn colorize(cloud: &PointCloud, mode: VizMode) -> Result<Vec<[u8; 3]>> {
    let labels = match mode {
        VizMode::Instance => cloud.instance(),
        VizMode::Semantic => cloud.semantic(),
    }
    .ok_or(Error::LabelsRequired)?;
    Ok(labels.iter().map(|&l| palette(l, mode)).collect())
}

/// Every object of the model posed by its placement at `timestep`, with the
/// object's labels attached. Objects absent at that step are left out.
pub fn compose_model(model: &TemporalModel, timestep: usize) -> Result<PointCloud> {
    let arrangement = model.history().get(timestep).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "timestep {timestep} outside model history of {}",
            model.history().len()
        ))
    })?;
    let mut out = PointCloud::default();
    for p in arrangement.placements() {
        let object = model.resolve(p.id)?;
        let mut posed = object.geometry().transformed(&p.pose);
        let n = posed.len();
        posed.set_labels(vec![object.class(); n], vec![p.id; n])?;
        out = if out.is_empty() { posed } else { out.concat(&posed) };
    }
    Ok(out)
}

pub fn export_labeled(cloud: &PointCloud, mode: VizMode, path: &Path) -> Result<usize> {
    let colors = colorize(cloud, mode)?;
    write_ply(
        path,
        cloud,
        PlyExtras {
            confidence: None,
            colors: Some(&colors),
        },
        Encoding::Ascii,
    )?;
    Ok(cloud.len())
}

/// Model-completion view: fused objects composed at `timestep`.
pub fn export_model(model: &TemporalModel, timestep: usize, mode: VizMode, path: &Path) -> Result<usize> {
    export_labeled(&compose_model(model, timestep)?, mode, path)
}
