//! Arrangement objective: coverage, geometry, intersection and hysteresis
//! terms and their weighted sum.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GroundPose, PointCloud, Vec3};
use crate::model::{Arrangement, ObjectInstance, PosedObject, TemporalModel};

/// Added to every covariance before inversion (m²).
pub const COVARIANCE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveWeights {
    pub coverage: f64,
    pub geometry: f64,
    pub intersection: f64,
    pub hysteresis: f64,
    /// Hysteresis score of an object never placed before.
    pub novel_score: f64,
    pub sigma_r: f64,
    pub sigma_h: f64,
    pub voxel_size: f64,
    /// Squares the displacement in the hysteresis exponent.
    pub squared_hysteresis: bool,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            coverage: 2.0,
            geometry: 0.3,
            intersection: 1.0,
            hysteresis: 1.8,
            novel_score: 0.4,
            sigma_r: 0.25,
            sigma_h: 0.5,
            voxel_size: 0.05,
            squared_hysteresis: false,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.coverage, self.geometry, self.intersection, self.hysteresis];
        let ok = weights.iter().all(|w| *w >= 0.0)
            && self.novel_score > 0.0
            && self.novel_score < 1.0
            && self.sigma_r > 0.0
            && self.sigma_h > 0.0
            && self.voxel_size > 0.0;
        if !ok {
            return Err(Error::InvalidParameter("objective weights out of range".into()));
        }
        Ok(())
    }
}

/// Occupancy of a scan's dynamic points on a regular lattice anchored at the
/// scan's bounding-box minimum.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    origin: Vec3,
    voxel_size: f64,
    dims: [usize; 3],
    occupied: Vec<bool>,
    active: Vec<bool>,
    occupied_count: usize,
}

impl VoxelGrid {
    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn cell_count(&self) -> usize {
        self.occupied.len()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied_count
    }

    /// False when no dynamic point was voxelized; coverage is then 0.
    pub fn has_dynamic_content(&self) -> bool {
        self.occupied_count > 0
    }

    pub fn is_occupied(&self, cell: usize) -> bool {
        self.occupied[cell]
    }

    /// Cells holding only static points are inactive.
    pub fn is_active(&self, cell: usize) -> bool {
        self.active[cell]
    }

    /// Linear index of the cell containing `p`, if inside the extent.
    pub fn cell_of(&self, p: &Vec3) -> Option<usize> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            idx[a] = f as usize;
        }
        Some((idx[2] * self.dims[1] + idx[1]) * self.dims[0] + idx[0])
    }

    /// Sorted, distinct cells hit by `points` placed at `pose`.
    pub fn rasterize(&self, points: &[Vec3], pose: &GroundPose) -> Vec<usize> {
        let mut cells: Vec<usize> = points.iter().filter_map(|p| self.cell_of(&pose.apply(p))).collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }

    /// Rasterized cells that are also occupied by the scan.
    pub fn covered_cells(&self, points: &[Vec3], pose: &GroundPose) -> Vec<usize> {
        let mut cells = self.rasterize(points, pose);
        cells.retain(|&c| self.occupied[c]);
        cells
    }
}

pub fn voxelize_scene(scene: &PointCloud, static_mask: &[bool], voxel_size: f64) -> Result<VoxelGrid> {
    if scene.len() != static_mask.len() {
        return Err(Error::MismatchedCounts(scene.len(), static_mask.len()));
    }
    if voxel_size <= 0.0 {
        return Err(Error::InvalidParameter("voxel size must be positive".into()));
    }
    let Some((lo, hi)) = scene.bounds() else {
        return Ok(VoxelGrid {
            origin: Vec3::zeros(),
            voxel_size,
            dims: [0; 3],
            occupied: Vec::new(),
            active: Vec::new(),
            occupied_count: 0,
        });
    };
    let mut dims = [0usize; 3];
    for a in 0..3 {
        dims[a] = ((hi[a] - lo[a]) / voxel_size).floor() as usize + 1;
    }
    let n = dims[0] * dims[1] * dims[2];
    let mut grid = VoxelGrid {
        origin: lo,
        voxel_size,
        dims,
        occupied: vec![false; n],
        active: vec![true; n],
        occupied_count: 0,
    };
    let mut has_static = vec![false; n];
    for (p, &is_static) in scene.points().iter().zip(static_mask) {
        let Some(c) = grid.cell_of(p) else { continue };
        if is_static {
            has_static[c] = true;
        } else {
            grid.occupied[c] = true;
        }
    }
    for c in 0..n {
        if has_static[c] && !grid.occupied[c] {
            grid.active[c] = false;
        }
    }
    grid.occupied_count = grid.occupied.iter().filter(|&&o| o).count();
    Ok(grid)
}

fn resolve_all<'m>(arrangement: &Arrangement, model: &'m TemporalModel) -> Result<Vec<&'m ObjectInstance>> {
    arrangement.placements().iter().map(|p| model.resolve(p.id)).collect()
}

/// Fraction of occupied scan cells that the arrangement's objects also
/// occupy.
pub fn coverage_term(grid: &VoxelGrid, arrangement: &Arrangement, model: &TemporalModel) -> Result<f64> {
    let objects = resolve_all(arrangement, model)?;
    if !grid.has_dynamic_content() {
        return Ok(0.0);
    }
    let mut hit = vec![false; grid.cell_count()];
    for (p, o) in arrangement.placements().iter().zip(objects) {
        for c in grid.covered_cells(o.geometry().points(), &p.pose) {
            hit[c] = true;
        }
    }
    let covered = hit.iter().filter(|&&h| h).count();
    Ok(covered as f64 / grid.occupied_count() as f64)
}

/// Mean placement score.
pub fn geometry_term(arrangement: &Arrangement) -> f64 {
    mean(arrangement.placements().iter().map(|p| p.score))
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    values.sum::<f64>() / n as f64
}

/// Centroid and covariance of a posed object, with the inverse of the
/// regularized covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosedStats {
    pub centroid: Vec3,
    pub covariance: Matrix3<f64>,
    inverse: Matrix3<f64>,
}

impl PosedStats {
    pub fn new(id: u32, centroid: Vec3, covariance: Matrix3<f64>) -> Result<Self> {
        let inverse = (covariance + Matrix3::identity() * COVARIANCE_EPSILON)
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or(Error::DegenerateObject(id))?;
        Ok(Self {
            centroid,
            covariance,
            inverse,
        })
    }

    pub fn of(object: &ObjectInstance, pose: &GroundPose) -> Result<Self> {
        let r = pose.rotation();
        Self::new(
            object.id(),
            pose.apply(&object.centroid()),
            r * object.covariance() * r.transpose(),
        )
    }

    fn mahalanobis(&self, x: &Vec3) -> f64 {
        let d = x - self.centroid;
        d.dot(&(self.inverse * d)).max(0.0).sqrt()
    }
}

/// Mean of both objects' Mahalanobis distances to the midpoint of their
/// centroids.
pub fn symmetric_mahalanobis(a: &PosedStats, b: &PosedStats) -> f64 {
    let m = (a.centroid + b.centroid) * 0.5;
    0.5 * (a.mahalanobis(&m) + b.mahalanobis(&m))
}

fn proximity(a: &PosedStats, b: &PosedStats, sigma_r: f64) -> f64 {
    let d = symmetric_mahalanobis(a, b);
    (-d * d / (2.0 * sigma_r * sigma_r)).exp()
}

/// One minus the worst pairwise proximity.
pub fn intersection_term(arrangement: &Arrangement, model: &TemporalModel, sigma_r: f64) -> Result<f64> {
    let objects = resolve_all(arrangement, model)?;
    let stats = arrangement
        .placements()
        .iter()
        .zip(objects)
        .map(|(p, o)| PosedStats::of(o, &p.pose))
        .collect::<Result<Vec<_>>>()?;
    Ok(1.0 - max_proximity(&stats, sigma_r))
}

fn max_proximity(stats: &[PosedStats], sigma_r: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..stats.len() {
        for j in i + 1..stats.len() {
            worst = worst.max(proximity(&stats[i], &stats[j], sigma_r));
        }
    }
    worst
}

/// `h` for an object never placed before, otherwise a decaying function of
/// its centroid displacement since its most recent placement.
pub fn hysteresis_score(placement: &PosedObject, model: &TemporalModel, weights: &ObjectiveWeights) -> Result<f64> {
    let object = model.resolve(placement.id)?;
    let Some(prev) = model.last_placement(placement.id) else {
        return Ok(weights.novel_score);
    };
    let c = object.centroid();
    let dist = (placement.pose.apply(&c) - prev.pose.apply(&c)).norm();
    let num = if weights.squared_hysteresis { dist * dist } else { dist };
    let decay = (-num / (2.0 * weights.sigma_h * weights.sigma_h)).exp();
    let h = weights.novel_score;
    Ok(1.0 - (1.0 - h) * (1.0 - decay))
}

pub fn hysteresis_term(arrangement: &Arrangement, model: &TemporalModel, weights: &ObjectiveWeights) -> Result<f64> {
    let scores = arrangement
        .placements()
        .iter()
        .map(|p| hysteresis_score(p, model, weights))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(scores.into_iter()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    pub coverage: f64,
    pub geometry: f64,
    pub intersection: f64,
    pub hysteresis: f64,
}

impl Terms {
    pub fn combine(&self, w: &ObjectiveWeights) -> f64 {
        w.coverage * self.coverage
            + w.geometry * self.geometry
            + w.intersection * self.intersection
            + w.hysteresis * self.hysteresis
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value: f64,
    pub terms: Terms,
}

pub fn objective(
    grid: &VoxelGrid,
    arrangement: &Arrangement,
    model: &TemporalModel,
    weights: &ObjectiveWeights,
) -> Result<Evaluation> {
    let terms = Terms {
        coverage: coverage_term(grid, arrangement, model)?,
        geometry: geometry_term(arrangement),
        intersection: intersection_term(arrangement, model, weights.sigma_r)?,
        hysteresis: hysteresis_term(arrangement, model, weights)?,
    };
    Ok(Evaluation {
        value: terms.combine(weights),
        terms,
    })
}

/// Per-placement quantities the optimizer reuses across evaluations.
#[derive(Debug, Clone)]
pub(crate) struct PlacementCache {
    pub stats: PosedStats,
    pub cells: Vec<usize>,
    pub hysteresis: f64,
}

impl PlacementCache {
    pub fn new(
        grid: &VoxelGrid,
        object: &ObjectInstance,
        placement: &PosedObject,
        model: &TemporalModel,
        weights: &ObjectiveWeights,
    ) -> Result<Self> {
        Ok(Self {
            stats: PosedStats::of(object, &placement.pose)?,
            cells: grid.covered_cells(object.geometry().points(), &placement.pose),
            hysteresis: hysteresis_score(placement, model, weights)?,
        })
    }
}

/// Combines cached per-placement values into an evaluation that agrees with
/// [`objective`].
pub(crate) fn evaluate_cached(
    placed: &[(&PlacementCache, f64)],
    covered: usize,
    grid: &VoxelGrid,
    weights: &ObjectiveWeights,
) -> Evaluation {
    let stats: Vec<PosedStats> = placed.iter().map(|(c, _)| c.stats).collect();
    let coverage = if grid.has_dynamic_content() {
        covered as f64 / grid.occupied_count() as f64
    } else {
        0.0
    };
    let terms = Terms {
        coverage,
        geometry: mean(placed.iter().map(|(_, s)| *s)),
        intersection: 1.0 - max_proximity(&stats, weights.sigma_r),
        hysteresis: mean(placed.iter().map(|(c, _)| c.hysteresis)),
    };
    Evaluation {
        value: terms.combine(weights),
        terms,
    }
}
