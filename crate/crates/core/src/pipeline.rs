//! The induction loop: one step per new scan, plus directory-level `run`
//! and `evaluate` drivers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{instance_map50, instance_transfer_miou, semantic_label_miou, Permutation};
use crate::fusion::fuse_object;
use crate::geometry::{GroundPose, PointCloud, UNASSIGNED};
use crate::model::store::save_model;
use crate::model::TemporalModel;
use crate::objective::{hysteresis_score, voxelize_scene, Evaluation};
use crate::optimizer::{anneal_traced, greedy_init, trace_csv, PoseSets, SearchProblem, TraceRow};
use crate::ply::{read_ply, write_ply, Encoding, PlyExtras};
use crate::proposal::{propose_poses, propose_poses_at};
use crate::scan::PreparedScan;
use crate::synth::{read_permutations, scan_name};
use crate::transfer::{smooth_labels, split_labels, transfer_labels};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub id: u32,
    pub class: u32,
    pub proposals: usize,
    pub best_proposal: Option<f64>,
    pub placed: bool,
    pub pose: Option<GroundPose>,
    pub score: Option<f64>,
    pub hysteresis: Option<f64>,
    pub labeled_points: usize,
    pub fused: bool,
    pub geometry_points: usize,
}

/// Deterministic summary of one induction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub timestep: usize,
    pub points: usize,
    pub static_points: usize,
    pub floor_z: Option<f64>,
    pub occupied_cells: usize,
    pub greedy_objective: f64,
    pub objective: Evaluation,
    pub objects: Vec<ObjectReport>,
    /// Model objects left out of the arrangement.
    pub absent: Vec<u32>,
    pub unassigned_before_smoothing: usize,
    /// Dynamic points that ended with the background label.
    pub background_fraction: f64,
    pub smoothing_energy: Vec<f64>,
}

/// Wall-clock seconds per stage; kept apart from the report so reports are
/// reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stages: Vec<(String, f64)>,
}

impl Timing {
    fn lap(&mut self, stage: &str, since: &mut Instant) {
        self.stages.push((stage.to_string(), since.elapsed().as_secs_f64()));
        *since = Instant::now();
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub model: TemporalModel,
    /// The scan with normals and transferred labels.
    pub labeled: PointCloud,
    /// Per-point score of the placement that labeled it; 0 for background.
    pub confidence: Vec<f64>,
    pub report: StepReport,
    pub trace: Vec<TraceRow>,
    pub timing: Timing,
}

/// Pose candidates for every model object in a prepared scan. Objects seen
/// before keep the height of their last placement; scans share one frame
/// and motion stays on the floor.
pub fn propose_all(model: &TemporalModel, scan: &PreparedScan, cfg: &PipelineConfig) -> Result<PoseSets> {
    model
        .objects()
        .map(|o| {
            let poses = match model.last_placement(o.id()) {
                Some(p) => propose_poses_at(o, scan, p.pose.tz, &cfg.proposal)?,
                None => propose_poses(o, scan, &cfg.proposal)?,
            };
            Ok((o.id(), poses))
        })
        .collect()
}

/// One induction step: the model of the previous scans and a new scan give
/// the next model and a labeled scan.
pub fn induct(model: &TemporalModel, scan: &PointCloud, cfg: &PipelineConfig, trace: bool) -> Result<StepOutput> {
    cfg.validate()?;
    let mut timing = Timing::default();
    let mut clock = Instant::now();
    let timestep = model.history().len();

    let mut bare = scan.clone();
    bare.clear_labels();
    let prepared = PreparedScan::new(bare, &cfg.scan).map_err(Error::in_stage("scan preparation"))?;
    timing.lap("prepare", &mut clock);

    let pose_sets = propose_all(model, &prepared, cfg).map_err(Error::in_stage("pose proposal"))?;
    timing.lap("propose", &mut clock);

    let cloud = prepared.cloud();
    let mask = prepared.static_mask();
    let grid = voxelize_scene(cloud, mask, cfg.objective.voxel_size).map_err(Error::in_stage("voxelization"))?;
    let (greedy, state, rows) = (|| {
        let problem = SearchProblem::new(&pose_sets, &grid, model, &cfg.objective)?;
        let greedy = greedy_init(&problem)?;
        let mut anneal = cfg.anneal;
        anneal.seed = cfg.anneal.seed.wrapping_add(timestep as u64);
        let mut rows = Vec::new();
        let state = anneal_traced(&greedy, &problem, &anneal, &mut rows)?;
        Ok((greedy, state, rows))
    })()
    .map_err(Error::in_stage("arrangement optimization"))?;
    timing.lap("optimize", &mut clock);
    let arrangement = state.arrangement.clone();

    let transferred = transfer_labels(cloud, mask, &arrangement, model, cfg.transfer.max_distance)
        .map_err(Error::in_stage("label transfer"))?;
    let smoothed = smooth_labels(cloud, &transferred, &cfg.transfer).map_err(Error::in_stage("label transfer"))?;
    let (semantic, instance) = split_labels(&smoothed.labels);
    timing.lap("transfer", &mut clock);

    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &u) in instance.iter().enumerate() {
        if u != UNASSIGNED && !mask[i] {
            members.entry(u).or_default().push(i);
        }
    }
    let fused: Vec<(u32, PointCloud)> = arrangement
        .placements()
        .par_iter()
        .map(|p| {
            let object = model.resolve(p.id)?;
            let segment = cloud.select(members.get(&p.id).map_or(&[][..], |v| v));
            let f = fuse_object(object.geometry(), &segment, &p.pose, &cfg.fusion)?;
            Ok(f.observed.then_some((p.id, f.cloud)))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(Error::in_stage("fusion"))?
        .into_iter()
        .flatten()
        .collect();
    let fused_ids: Vec<u32> = fused.iter().map(|f| f.0).collect();
    let next = model
        .updated(arrangement.clone(), fused)
        .map_err(Error::in_stage("model update"))?;
    timing.lap("fuse", &mut clock);

    let mut objects = Vec::new();
    let mut absent = Vec::new();
    for o in model.objects() {
        let placement = arrangement.get(o.id());
        if placement.is_none() {
            absent.push(o.id());
        }
        let poses = &pose_sets[&o.id()];
        objects.push(ObjectReport {
            id: o.id(),
            class: o.class(),
            proposals: poses.len(),
            best_proposal: poses.first().map(|p| p.score),
            placed: placement.is_some(),
            pose: placement.map(|p| p.pose),
            score: placement.map(|p| p.score),
            hysteresis: placement.map(|p| hysteresis_score(p, model, &cfg.objective)).transpose()?,
            labeled_points: members.get(&o.id()).map_or(0, Vec::len),
            fused: fused_ids.contains(&o.id()),
            geometry_points: next.resolve(o.id())?.geometry().len(),
        });
    }
    let dynamic = mask.iter().filter(|&&m| !m).count();
    let background = instance
        .iter()
        .zip(mask)
        .filter(|(&u, &m)| !m && u == UNASSIGNED)
        .count();
    let report = StepReport {
        timestep,
        points: cloud.len(),
        static_points: cloud.len() - dynamic,
        floor_z: prepared.floor_z(),
        occupied_cells: grid.occupied_count(),
        greedy_objective: greedy.evaluation.value,
        objective: state.evaluation,
        objects,
        absent,
        unassigned_before_smoothing: transferred.unassigned_count(),
        background_fraction: if dynamic == 0 { 0.0 } else { background as f64 / dynamic as f64 },
        smoothing_energy: smoothed.energies.clone(),
    };

    let confidence = instance
        .iter()
        .map(|&u| arrangement.get(u).map_or(0.0, |p| p.score))
        .collect();
    let mut labeled = cloud.clone();
    labeled.set_labels(semantic, instance)?;
    Ok(StepOutput {
        model: next,
        labeled,
        confidence,
        report,
        trace: if trace { rows } else { Vec::new() },
        timing,
    })
}

/// Layout of a `run` output directory.
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn labels(&self, t: usize) -> PathBuf {
        self.root.join("labels").join(scan_name(t))
    }

    pub fn model(&self, t: usize) -> PathBuf {
        self.root.join("models").join(format!("t{t:03}"))
    }

    pub fn report(&self, t: usize) -> PathBuf {
        self.root.join("reports").join(format!("step_{t:03}.json"))
    }

    pub fn timing(&self, t: usize) -> PathBuf {
        self.root.join("timing").join(format!("step_{t:03}.json"))
    }

    pub fn trace(&self, t: usize) -> PathBuf {
        self.root.join("traces").join(format!("step_{t:03}.csv"))
    }
}

/// Scan files `scan_NNN.ply` of a directory in timestep order. Timesteps
/// must be contiguous from 0.
pub fn list_scans(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(t) = name
            .strip_prefix("scan_")
            .and_then(|r| r.strip_suffix(".ply"))
            .and_then(|n| n.parse::<usize>().ok())
        {
            found.insert(t, entry.path());
        }
    }
    for (i, t) in found.keys().enumerate() {
        if *t != i {
            return Err(Error::parse(dir, format!("missing {}", scan_name(i))));
        }
    }
    Ok(found.into_values().collect())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializes") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Bootstraps from the labeled first scan of `scene_dir` and inducts every
/// later scan in order, writing models, labeled scans and reports under
/// `out_dir`. Outputs of completed steps are kept when a later step fails.
pub fn run(scene_dir: &Path, out_dir: &Path, cfg: &PipelineConfig, trace: bool) -> Result<Vec<StepReport>> {
    cfg.validate()?;
    let scans = list_scans(scene_dir)?;
    if scans.is_empty() {
        return Err(Error::parse(scene_dir, "no scans"));
    }
    let layout = RunLayout {
        root: out_dir.to_path_buf(),
    };
    let first = read_ply(&scans[0])?.cloud;
    let mut model = TemporalModel::bootstrap(&first).map_err(Error::in_stage("bootstrap"))?;
    save_model(&model, &layout.model(0))?;
    let ones = vec![1.0; first.len()];
    write_ply(
        &layout.labels(0),
        &first,
        PlyExtras {
            confidence: Some(&ones),
            colors: None,
        },
        Encoding::BinaryLittleEndian,
    )?;
    let mut reports = Vec::new();
    for (t, path) in scans.iter().enumerate().skip(1) {
        let scan = read_ply(path)?.cloud;
        let out = induct(&model, &scan, cfg, trace)?;
        write_ply(
            &layout.labels(t),
            &out.labeled,
            PlyExtras {
                confidence: Some(&out.confidence),
                colors: None,
            },
            Encoding::BinaryLittleEndian,
        )?;
        save_model(&out.model, &layout.model(t))?;
        write_json(&layout.report(t), &out.report)?;
        write_json(&layout.timing(t), &out.timing)?;
        if trace {
            write_text(&layout.trace(t), &trace_csv(&out.trace))?;
        }
        log::info!(
            "step {t}: objective {:.4}, {} placed, {} absent",
            out.report.objective.value,
            out.report.objects.iter().filter(|o| o.placed).count(),
            out.report.absent.len()
        );
        model = out.model;
        reports.push(out.report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub timestep: usize,
    pub semantic_miou: f64,
    pub instance_map50: f64,
    pub transfer_miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn mean(&self) -> MetricsRow {
        let n = self.rows.len().max(1) as f64;
        let sum = |f: fn(&MetricsRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        MetricsRow {
            timestep: self.rows.len(),
            semantic_miou: sum(|r| r.semantic_miou),
            instance_map50: sum(|r| r.instance_map50),
            transfer_miou: sum(|r| r.transfer_miou),
        }
    }

    /// `timestep,semantic_miou,instance_map50,transfer_miou` rows and a
    /// final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestep,semantic_miou,instance_map50,transfer_miou\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                r.timestep, r.semantic_miou, r.instance_map50, r.transfer_miou
            ));
        }
        let m = self.mean();
        out.push_str(&format!(
            "mean,{:.6},{:.6},{:.6}\n",
            m.semantic_miou, m.instance_map50, m.transfer_miou
        ));
        out
    }

    pub fn summary(&self) -> String {
        let m = self.mean();
        format!(
            "{} scans: semantic mIoU {:.3}, instance mAP@0.5 {:.3}, transfer mIoU {:.3}",
            self.rows.len(),
            m.semantic_miou,
            m.instance_map50,
            m.transfer_miou
        )
    }
}

/// Ground truth may sit in `dir/gt` (as written by the generator) or in
/// `dir` itself.
fn gt_root(dir: &Path) -> PathBuf {
    let nested = dir.join("gt");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn pred_root(dir: &Path) -> PathBuf {
    let nested = dir.join("labels");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Scores labeled predictions against ground truth for every timestep after
/// the first present in both directories.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path) -> Result<MetricsTable> {
    let pred_dir = pred_root(pred_dir);
    let gt_dir = gt_root(gt_dir);
    let perm_path = gt_dir.join("permutations.json");
    let perms: Vec<Permutation> = if perm_path.exists() {
        read_permutations(&gt_dir)?
    } else {
        Vec::new()
    };
    let gt_scans = list_scans(&gt_dir)?;
    let mut rows = Vec::new();
    for (t, gt_path) in gt_scans.iter().enumerate().skip(1) {
        let pred_path = pred_dir.join(scan_name(t));
        if !pred_path.exists() {
            continue;
        }
        let gt = read_ply(gt_path)?.cloud;
        let pred = read_ply(&pred_path)?;
        let labels = |c: &PointCloud, p: &Path| -> Result<(Vec<u32>, Vec<u32>)> {
            match (c.semantic(), c.instance()) {
                (Some(s), Some(i)) => Ok((s.to_vec(), i.to_vec())),
                _ => Err(Error::parse(p, "missing semantic/instance labels")),
            }
        };
        let (gs, gi) = labels(&gt, gt_path)?;
        let (ps, pi) = labels(&pred.cloud, &pred_path)?;
        rows.push(MetricsRow {
            timestep: t,
            semantic_miou: semantic_label_miou(&ps, &gs, true)?,
            instance_map50: instance_map50(&ps, &pi, pred.confidence.as_deref(), &gs, &gi)?,
            transfer_miou: instance_transfer_miou(&pi, &gi, &perms, false)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::parse(&pred_dir, "no predicted scans to evaluate"));
    }
    Ok(MetricsTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_csv_layout() {
        let t = MetricsTable {
            rows: vec![
                MetricsRow {
                    timestep: 1,
                    semantic_miou: 1.0,
                    instance_map50: 0.5,
                    transfer_miou: 0.25,
                },
                MetricsRow {
                    timestep: 2,
                    semantic_miou: 0.0,
                    instance_map50: 0.5,
                    transfer_miou: 0.75,
                },
            ],
        };
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "timestep,semantic_miou,instance_map50,transfer_miou");
        assert_eq!(lines[1], "1,1.000000,0.500000,0.250000");
        assert_eq!(lines[3], "mean,0.500000,0.500000,0.500000");
    }

    #[test]
    fn scan_listing_requires_contiguous_steps() {
        let dir = tempfile::tempdir().unwrap();
        for t in [0, 1, 3] {
            fs::write(dir.path().join(scan_name(t)), b"").unwrap();
        }
        assert!(list_scans(dir.path()).is_err());
        fs::write(dir.path().join(scan_name(2)), b"").unwrap();
        fs::write(dir.path().join("notes.txt"), b"").unwrap();
        assert_eq!(list_scans(dir.path()).unwrap().len(), 4);
    }
}
