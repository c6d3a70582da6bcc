//! Arrangement search: greedy construction followed by simulated annealing
//! over add, remove, move and swap moves.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Arrangement, ObjectInstance, PosedObject, TemporalModel};
use crate::objective::{evaluate_cached, Evaluation, ObjectiveWeights, PlacementCache, VoxelGrid};
use crate::proposal::ScoredPose;

/// Candidate poses per object id.
pub type PoseSets = BTreeMap<u32, Vec<ScoredPose>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealConfig {
    pub iterations: usize,
    /// Chance per iteration of jumping back to the best state so far.
    pub restart_prob: f64,
    /// Temperature at the first iteration; it falls linearly to zero.
    pub t_start: f64,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            iterations: 25_000,
            restart_prob: 0.005,
            t_start: 0.05,
            seed: 7,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(0.0..1.0).contains(&self.restart_prob) || self.t_start < 0.0 {
            return Err(Error::InvalidParameter("anneal config out of range".into()));
        }
        Ok(())
    }

    fn temperature(&self, iter: usize) -> f64 {
        self.t_start * (1.0 - iter as f64 / self.iterations as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Add,
    Remove,
    Move,
    Swap,
    Restart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub temperature: f64,
    pub value: f64,
    pub accepted: bool,
    pub kind: MoveKind,
}

/// Writes a trace as comma-separated text with a header line.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("iter,temperature,objective,accepted,move\n");
    for r in rows {
        let kind = match r.kind {
            MoveKind::Add => "add",
            MoveKind::Remove => "remove",
            MoveKind::Move => "move",
            MoveKind::Swap => "swap",
            MoveKind::Restart => "restart",
        };
        out.push_str(&format!("{},{},{},{},{}\n", r.iter, r.temperature, r.value, r.accepted, kind));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub arrangement: Arrangement,
    pub evaluation: Evaluation,
    /// Chosen index into each placed object's pose list.
    pub choice: BTreeMap<u32, usize>,
}

struct Candidate<'a> {
    id: u32,
    class: u32,
    poses: &'a [ScoredPose],
    caches: Vec<PlacementCache>,
}

/// Pose sets bound to one scene, model and weighting, with every candidate
/// placement's objective inputs precomputed.
pub struct SearchProblem<'a> {
    grid: &'a VoxelGrid,
    weights: ObjectiveWeights,
    timestep: usize,
    candidates: Vec<Candidate<'a>>,
    /// Occupied scene cell -> dense counter slot.
    slot: Vec<u32>,
    occupied: usize,
}

impl<'a> SearchProblem<'a> {
    pub fn new(
        pose_sets: &'a PoseSets,
        grid: &'a VoxelGrid,
        model: &TemporalModel,
        weights: &ObjectiveWeights,
    ) -> Result<Self> {
        weights.validate()?;
        let mut candidates = Vec::new();
        for (&id, poses) in pose_sets {
            let object: &ObjectInstance = model.resolve(id)?;
            let caches = poses
                .iter()
                .map(|p| {
                    let placement = PosedObject {
                        id,
                        pose: p.pose,
                        score: p.score,
                    };
                    PlacementCache::new(grid, object, &placement, model, weights)
                })
                .collect::<Result<Vec<_>>>()?;
            candidates.push(Candidate {
                id,
                class: object.class(),
                poses,
                caches,
            });
        }
        let mut slot = vec![u32::MAX; grid.cell_count()];
        let mut occupied = 0usize;
        for (c, s) in slot.iter_mut().enumerate() {
            if grid.is_occupied(c) {
                *s = occupied as u32;
                occupied += 1;
            }
        }
        Ok(Self {
            grid,
            weights: *weights,
            timestep: model.history().len(),
            candidates,
            slot,
            occupied,
        })
    }

    fn walker(&self) -> Walker<'_, 'a> {
        Walker {
            problem: self,
            chosen: vec![None; self.candidates.len()],
            counts: vec![0; self.occupied],
            covered: 0,
        }
    }

    fn walker_at(&self, state: &SearchState) -> Result<Walker<'_, 'a>> {
        let mut w = self.walker();
        for (&id, &l) in &state.choice {
            let k = self
                .candidates
                .iter()
                .position(|c| c.id == id)
                .ok_or(Error::UnknownInstance(id))?;
            if l >= self.candidates[k].poses.len() {
                return Err(Error::InvalidParameter(format!("pose index {l} out of range for {id}")));
            }
            w.set(k, Some(l));
        }
        Ok(w)
    }
}

/// Mutable search position with incremental coverage counts.
#[derive(Clone)]
struct Walker<'p, 'a> {
    problem: &'p SearchProblem<'a>,
    chosen: Vec<Option<usize>>,
    counts: Vec<u32>,
    covered: usize,
}

impl Walker<'_, '_> {
    fn set(&mut self, k: usize, pose: Option<usize>) {
        let cand = &self.problem.candidates[k];
        if let Some(old) = self.chosen[k] {
            for &c in &cand.caches[old].cells {
                let s = self.problem.slot[c] as usize;
                self.counts[s] -= 1;
                if self.counts[s] == 0 {
                    self.covered -= 1;
                }
            }
        }
        if let Some(new) = pose {
            for &c in &cand.caches[new].cells {
                let s = self.problem.slot[c] as usize;
                if self.counts[s] == 0 {
                    self.covered += 1;
                }
                self.counts[s] += 1;
            }
        }
        self.chosen[k] = pose;
    }

    fn evaluate(&self) -> Evaluation {
        let placed: Vec<(&PlacementCache, f64)> = self
            .chosen
            .iter()
            .enumerate()
            .filter_map(|(k, l)| {
                let cand = &self.problem.candidates[k];
                l.map(|l| (&cand.caches[l], cand.poses[l].score))
            })
            .collect();
        evaluate_cached(&placed, self.covered, self.problem.grid, &self.problem.weights)
    }

    fn state(&self) -> Result<SearchState> {
        let mut placements = Vec::new();
        let mut choice = BTreeMap::new();
        for (k, l) in self.chosen.iter().enumerate() {
            if let Some(l) = *l {
                let cand = &self.problem.candidates[k];
                let p = cand.poses[l];
                placements.push(PosedObject {
                    id: cand.id,
                    pose: p.pose,
                    score: p.score.clamp(0.0, 1.0),
                });
                choice.insert(cand.id, l);
            }
        }
        Ok(SearchState {
            arrangement: Arrangement::new(self.problem.timestep, placements)?,
            evaluation: self.evaluate(),
            choice,
        })
    }
}

/// Adds the single best (object, pose) until no addition raises the
/// objective.
pub fn greedy_init(problem: &SearchProblem) -> Result<SearchState> {
    let mut w = problem.walker();
    let mut value = w.evaluate().value;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for k in 0..problem.candidates.len() {
            if w.chosen[k].is_some() {
                continue;
            }
            for l in 0..problem.candidates[k].poses.len() {
                w.set(k, Some(l));
                let v = w.evaluate().value;
                w.set(k, None);
                if best.is_none_or(|b| v > b.0) {
                    best = Some((v, k, l));
                }
            }
        }
        match best {
            Some((v, k, l)) if v > value => {
                w.set(k, Some(l));
                value = v;
            }
            _ => break,
        }
    }
    w.state()
}

/// Index in `poses` whose posed centroid lies closest to `target`.
fn nearest_pose(cand: &Candidate, target: &crate::geometry::Vec3) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (l, c) in cand.caches.iter().enumerate() {
        let d = (c.stats.centroid - target).norm_squared();
        if d < best.0 {
            best = (d, l);
        }
    }
    best.1
}

fn propose(w: &Walker, kind: MoveKind, rng: &mut ChaCha8Rng) -> Vec<(usize, Option<usize>)> {
    let cands = &w.problem.candidates;
    let placed: Vec<usize> = (0..cands.len()).filter(|&k| w.chosen[k].is_some()).collect();
    match kind {
        MoveKind::Add => {
            let free: Vec<usize> = (0..cands.len())
                .filter(|&k| w.chosen[k].is_none() && !cands[k].poses.is_empty())
                .collect();
            let k = free[rng.gen_range(0..free.len())];
            vec![(k, Some(rng.gen_range(0..cands[k].poses.len())))]
        }
        MoveKind::Remove => vec![(placed[rng.gen_range(0..placed.len())], None)],
        MoveKind::Move => {
            let movable: Vec<usize> = placed.iter().copied().filter(|&k| cands[k].poses.len() > 1).collect();
            let k = movable[rng.gen_range(0..movable.len())];
            let cur = w.chosen[k].expect("placed");
            let mut l = rng.gen_range(0..cands[k].poses.len() - 1);
            if l >= cur {
                l += 1;
            }
            vec![(k, Some(l))]
        }
        MoveKind::Swap => {
            let pairs = swap_pairs(w, &placed);
            let (a, b) = pairs[rng.gen_range(0..pairs.len())];
            let ca = cands[a].caches[w.chosen[a].expect("placed")].stats.centroid;
            match w.chosen[b] {
                Some(j) => {
                    let cb = cands[b].caches[j].stats.centroid;
                    vec![(a, Some(nearest_pose(&cands[a], &cb))), (b, Some(nearest_pose(&cands[b], &ca)))]
                }
                // an absent object takes over the placed one's spot
                None => vec![(a, None), (b, Some(nearest_pose(&cands[b], &ca)))],
            }
        }
        MoveKind::Restart => unreachable!("restart is not a local move"),
    }
}

fn swap_pairs(w: &Walker, placed: &[usize]) -> Vec<(usize, usize)> {
    let cands = &w.problem.candidates;
    let mut pairs = Vec::new();
    for (i, &a) in placed.iter().enumerate() {
        for &b in &placed[i + 1..] {
            if cands[a].class == cands[b].class {
                pairs.push((a, b));
            }
        }
        for b in 0..cands.len() {
            if w.chosen[b].is_none() && !cands[b].poses.is_empty() && cands[a].class == cands[b].class {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

fn applicable(w: &Walker) -> Vec<MoveKind> {
    let cands = &w.problem.candidates;
    let placed: Vec<usize> = (0..cands.len()).filter(|&k| w.chosen[k].is_some()).collect();
    let mut kinds = Vec::with_capacity(4);
    if (0..cands.len()).any(|k| w.chosen[k].is_none() && !cands[k].poses.is_empty()) {
        kinds.push(MoveKind::Add);
    }
    if !placed.is_empty() {
        kinds.push(MoveKind::Remove);
    }
    if placed.iter().any(|&k| cands[k].poses.len() > 1) {
        kinds.push(MoveKind::Move);
    }
    if !swap_pairs(w, &placed).is_empty() {
        kinds.push(MoveKind::Swap);
    }
    kinds
}

pub fn anneal(init: &SearchState, problem: &SearchProblem, cfg: &AnnealConfig) -> Result<SearchState> {
    anneal_impl(init, problem, cfg, None)
}

/// [`anneal`], appending one row per iteration to `trace`.
pub fn anneal_traced(
    init: &SearchState,
    problem: &SearchProblem,
    cfg: &AnnealConfig,
    trace: &mut Vec<TraceRow>,
) -> Result<SearchState> {
    anneal_impl(init, problem, cfg, Some(trace))
}

fn anneal_impl(
    init: &SearchState,
    problem: &SearchProblem,
    cfg: &AnnealConfig,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<SearchState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = problem.walker_at(init)?;
    let mut value = w.evaluate().value;
    let mut best = (value, w.chosen.clone());
    for iter in 0..cfg.iterations {
        let t = cfg.temperature(iter);
        if rng.gen::<f64>() < cfg.restart_prob {
            for k in 0..best.1.len() {
                if w.chosen[k] != best.1[k] {
                    w.set(k, best.1[k]);
                }
            }
            value = best.0;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TraceRow {
                    iter,
                    temperature: t,
                    value,
                    accepted: true,
                    kind: MoveKind::Restart,
                });
            }
            continue;
        }
        let kinds = applicable(&w);
        if kinds.is_empty() {
            break;
        }
        let kind = kinds[rng.gen_range(0..kinds.len())];
        let changes = propose(&w, kind, &mut rng);
        let undo: Vec<(usize, Option<usize>)> = changes.iter().map(|&(k, _)| (k, w.chosen[k])).collect();
        for &(k, l) in &changes {
            w.set(k, l);
        }
        let candidate = w.evaluate().value;
        let delta = candidate - value;
        let accepted = delta >= 0.0 || (t > 0.0 && rng.gen::<f64>() < (delta / t).exp());
        if accepted {
            value = candidate;
            if value > best.0 {
                best = (value, w.chosen.clone());
            }
        } else {
            for &(k, l) in undo.iter().rev() {
                w.set(k, l);
            }
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(TraceRow {
                iter,
                temperature: t,
                value,
                accepted,
                kind,
            });
        }
    }
    for k in 0..best.1.len() {
        if w.chosen[k] != best.1[k] {
            w.set(k, best.1[k]);
        }
    }
    w.state()
}

/// Greedy initialization followed by annealing.
pub fn optimize_arrangement(problem: &SearchProblem, cfg: &AnnealConfig) -> Result<SearchState> {
    let init = greedy_init(problem)?;
    anneal(&init, problem, cfg)
}
