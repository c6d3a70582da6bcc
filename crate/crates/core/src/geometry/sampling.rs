//! Blue-noise subsampling and the multi-resolution hierarchy built on it.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};

/// Minimum point spacings of the hierarchy levels, finest first.
pub const LEVEL_SPACINGS: [f64; 4] = [0.01, 0.02, 0.04, 0.08];

const DART_SEED: u64 = 0x5eed_d15c;

pub(crate) type CellKey = (i64, i64, i64);

pub(crate) fn cell_of(p: &Vec3, size: f64) -> CellKey {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

/// Indices (ascending) of a maximal Poisson-disk subset with minimum spacing
/// `radius`.
///
/// Candidates are visited in a fixed pseudo-random order and accepted when
/// no previously accepted point lies closer than `radius`.
pub fn poisson_disk_indices(points: &[Vec3], radius: f64) -> Vec<usize> {
    assert!(radius > 0.0, "radius must be positive");
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(DART_SEED));

    let r2 = radius * radius;
    let mut grid: HashMap<CellKey, Vec<usize>> = HashMap::new();
    let mut accepted = Vec::new();
    for i in order {
        let p = &points[i];
        let (cx, cy, cz) = cell_of(p, radius);
        let mut blocked = false;
        'scan: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cell) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        if cell.iter().any(|&j| (points[j] - p).norm_squared() < r2) {
                            blocked = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if !blocked {
            grid.entry((cx, cy, cz)).or_default().push(i);
            accepted.push(i);
        }
    }
    accepted.sort_unstable();
    accepted
}

/// Subset of `cloud` whose points are pairwise at least `radius` apart and
/// which covers every input point within `radius`.
pub fn poisson_disk_subsample(cloud: &PointCloud, radius: f64) -> PointCloud {
    cloud.select(&poisson_disk_indices(cloud.points(), radius))
}

/// Four blue-noise levels of one cloud, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingHierarchy {
    levels: Vec<PointCloud>,
}

impl SamplingHierarchy {
    pub fn levels(&self) -> &[PointCloud] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &PointCloud {
        &self.levels[i]
    }

    pub fn finest(&self) -> &PointCloud {
        &self.levels[0]
    }

    pub fn coarsest(&self) -> &PointCloud {
        &self.levels[LEVEL_SPACINGS.len() - 1]
    }
}

pub fn build_hierarchy(cloud: &PointCloud) -> Result<SamplingHierarchy> {
    if cloud.is_empty() {
        return Err(Error::InsufficientPoints { needed: 1, got: 0 });
    }
    if !cloud.has_normals() {
        return Err(Error::NormalsRequired);
    }
    Ok(SamplingHierarchy {
        levels: LEVEL_SPACINGS
            .iter()
            .map(|&r| poisson_disk_subsample(cloud, r))
            .collect(),
    })
}
