use nalgebra::{Matrix3, Vector3};

use super::pose::GroundPose;
use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on normal length accepted when constructing clouds.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Semantic class id reserved for static structure (walls, floor).
pub const STATIC_CLASS: u32 = 0;
/// Instance id reserved for "unassigned" / static points.
pub const UNASSIGNED: u32 = 0;

/// Positions with optional per-point normals and labels.
///
/// All attribute arrays, when present, have exactly one entry per point.
/// Positions are finite and normals are unit length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    semantic: Option<Vec<u32>>,
    instance: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidCloud(format!("non-finite position at {i}")));
        }
        Ok(Self {
            points,
            ..Default::default()
        })
    }

    /// Builds a cloud with normals; normals are renormalized if within
    /// tolerance, otherwise rejected.
    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        cloud.set_normals(normals)?;
        Ok(cloud)
    }

    /// Crate-internal constructor for data already known to be valid.
    pub(crate) fn from_parts(
        points: Vec<Vec3>,
        normals: Option<Vec<Vec3>>,
        semantic: Option<Vec<u32>>,
        instance: Option<Vec<u32>>,
    ) -> Self {
        debug_assert!(normals.as_ref().is_none_or(|n| n.len() == points.len()));
        debug_assert!(semantic.as_ref().is_none_or(|n| n.len() == points.len()));
        debug_assert!(instance.as_ref().is_none_or(|n| n.len() == points.len()));
        Self {
            points,
            normals,
            semantic,
            instance,
        }
    }

    pub fn set_normals(&mut self, normals: Vec<Vec3>) -> Result<()> {
        if normals.len() != self.points.len() {
            return Err(Error::InvalidCloud(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        if let Some(i) = normals
            .iter()
            .position(|n| !n.iter().all(|c| c.is_finite()) || (n.norm() - 1.0).abs() > 1e-3)
        {
            return Err(Error::InvalidCloud(format!("normal {i} is not unit length")));
        }
        self.normals = Some(normals.into_iter().map(|n| n.normalize()).collect());
        Ok(())
    }

    pub fn set_labels(&mut self, semantic: Vec<u32>, instance: Vec<u32>) -> Result<()> {
        if semantic.len() != self.points.len() || instance.len() != self.points.len() {
            return Err(Error::InvalidCloud(format!(
                "label arrays of length {}/{} for {} points",
                semantic.len(),
                instance.len(),
                self.points.len()
            )));
        }
        self.semantic = Some(semantic);
        self.instance = Some(instance);
        Ok(())
    }

    pub fn clear_labels(&mut self) {
        self.semantic = None;
        self.instance = None;
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn semantic(&self) -> Option<&[u32]> {
        self.semantic.as_deref()
    }

    pub fn instance(&self) -> Option<&[u32]> {
        self.instance.as_deref()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn has_labels(&self) -> bool {
        self.semantic.is_some() && self.instance.is_some()
    }

    /// Subset of the cloud at the given indices, carrying all attributes.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let pick = |v: &Vec<Vec3>| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pick_u = |v: &Vec<u32>| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        PointCloud {
            points: pick(&self.points),
            normals: self.normals.as_ref().map(pick),
            semantic: self.semantic.as_ref().map(pick_u),
            instance: self.instance.as_ref().map(pick_u),
        }
    }

    /// Rigidly moves the cloud; normals rotate with it.
    pub fn transformed(&self, pose: &GroundPose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.apply(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| pose.rotate(n)).collect()),
            semantic: self.semantic.clone(),
            instance: self.instance.clone(),
        }
    }

    /// Appends another cloud. Attributes survive only if both sides carry them.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        fn join<T: Clone>(a: &Option<Vec<T>>, b: &Option<Vec<T>>) -> Option<Vec<T>> {
            match (a, b) {
                (Some(a), Some(b)) => Some(a.iter().chain(b.iter()).cloned().collect()),
                _ => None,
            }
        }
        let normals = if self.is_empty() {
            other.normals.clone()
        } else if other.is_empty() {
            self.normals.clone()
        } else {
            join(&self.normals, &other.normals)
        };
        PointCloud {
            points: self.points.iter().chain(other.points.iter()).cloned().collect(),
            normals,
            semantic: join(&self.semantic, &other.semantic),
            instance: join(&self.instance, &other.instance),
        }
    }

    /// Axis-aligned bounds `(min, max)`; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    pub fn centroid(&self) -> Option<Vec3> {
        centroid(&self.points)
    }
}

pub fn centroid(points: &[Vec3]) -> Option<Vec3> {
    if points.is_empty() {
        return None;
    }
    let sum: Vec3 = points.iter().sum();
    Some(sum / points.len() as f64)
}

/// Population covariance of `points` about `mean`.
pub fn covariance(points: &[Vec3], mean: &Vec3) -> Matrix3<f64> {
    if points.is_empty() {
        return Matrix3::zeros();
    }
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    // exact symmetry
    (cov + cov.transpose()) * 0.5
}
