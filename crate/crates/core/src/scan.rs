//! A scan prepared for one induction step: normals, static mask, floor
//! height and blue-noise levels of its dynamic (non-static) points.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{
    detect_static, estimate_normals, poisson_disk_indices, IndexedCloud, PlaneModel, PointCloud,
    StaticDetectionConfig, Vec3, LEVEL_SPACINGS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    /// Neighbourhood size for normal estimation when the scan has none.
    pub normal_neighbors: usize,
    #[serde(rename = "static")]
    pub static_detection: StaticDetectionConfig,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            normal_neighbors: 12,
            static_detection: StaticDetectionConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedScan {
    cloud: PointCloud,
    static_mask: Vec<bool>,
    planes: Vec<PlaneModel>,
    floor_z: Option<f64>,
    levels: Vec<IndexedCloud>,
}

impl PreparedScan {
    pub fn new(cloud: PointCloud, cfg: &ScanConfig) -> Result<Self> {
        let cloud = if cloud.has_normals() {
            cloud
        } else {
            estimate_normals(&cloud, cfg.normal_neighbors)?.cloud
        };
        let detection = detect_static(&cloud, &cfg.static_detection);
        Ok(Self::with_mask(cloud, detection.mask.clone(), detection.planes, cfg))
    }

    /// Uses a caller-supplied static mask; `planes` only feed the floor
    /// height.
    pub fn with_mask(
        cloud: PointCloud,
        static_mask: Vec<bool>,
        planes: Vec<PlaneModel>,
        cfg: &ScanConfig,
    ) -> Self {
        assert!(cloud.has_normals(), "prepared scans carry normals");
        assert_eq!(static_mask.len(), cloud.len());
        let gate = cfg.static_detection.angle_gate_deg.to_radians();
        let centre = cloud
            .bounds()
            .map(|(lo, hi)| (lo + hi) * 0.5)
            .unwrap_or_else(Vec3::zeros);
        let floor_z = planes
            .iter()
            .filter(|p| p.is_horizontal(gate) && p.normal.z > 0.0)
            .filter_map(|p| p.height_at(centre.x, centre.y))
            .min_by(f64::total_cmp);
        let dynamic: Vec<usize> = (0..cloud.len()).filter(|&i| !static_mask[i]).collect();
        let dyn_cloud = cloud.select(&dynamic);
        let levels = LEVEL_SPACINGS
            .iter()
            .map(|&r| {
                let sub = dyn_cloud.select(&poisson_disk_indices(dyn_cloud.points(), r));
                IndexedCloud::new(sub).expect("normals present")
            })
            .collect();
        Self {
            cloud,
            static_mask,
            planes,
            floor_z,
            levels,
        }
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn static_mask(&self) -> &[bool] {
        &self.static_mask
    }

    pub fn planes(&self) -> &[PlaneModel] {
        &self.planes
    }

    /// Height of the detected floor at the scan centre.
    pub fn floor_z(&self) -> Option<f64> {
        self.floor_z
    }

    /// Dynamic points subsampled at `LEVEL_SPACINGS[i]`, indexed.
    pub fn level(&self, i: usize) -> &IndexedCloud {
        &self.levels[i]
    }

    pub fn dynamic_count(&self) -> usize {
        self.static_mask.iter().filter(|&&s| !s).count()
    }
}
