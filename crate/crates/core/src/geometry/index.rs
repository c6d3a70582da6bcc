//! Exact nearest-neighbour queries over a static point set.
//!
//! A bucketed kd-tree. All queries order candidates by `(squared distance,
//! point index)`, so results are identical to a brute-force scan including
//! tie-breaking.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::cloud::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Neighbor) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let mut index = SpatialIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
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

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] - lo[axis] <= 0.0 {
            // all coincident
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Closest point, ties broken by lower index.
    pub fn nearest(&self, q: &Vec3) -> Option<Neighbor> {
        self.nearest_within_dist2(q, f64::INFINITY)
    }

    /// Closest point with distance `<= radius`.
    pub fn nearest_within(&self, q: &Vec3, radius: f64) -> Option<Neighbor> {
        self.nearest_within_dist2(q, radius * radius)
    }

    fn nearest_within_dist2(&self, q: &Vec3, max_d2: f64) -> Option<Neighbor> {
        if self.points.is_empty() {
            return None;
        }
        let mut best: Option<Neighbor> = None;
        self.nearest_rec(0, q, max_d2, &mut best);
        best
    }

    fn nearest_rec(&self, node: usize, q: &Vec3, max_d2: f64, best: &mut Option<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 > max_d2 {
                        continue;
                    }
                    let cand = Neighbor { index: i, dist2: d2 };
                    if best.is_none_or(|b| cand < b) {
                        *best = Some(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let d = q[axis] - value;
                let (near, far) = if d <= 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, max_d2, best);
                let bound = best.map_or(max_d2, |b| b.dist2);
                if d * d <= bound {
                    self.nearest_rec(far, q, max_d2, best);
                }
            }
        }
    }

    /// The `k` closest points sorted by `(distance, index)`.
    pub fn k_nearest(&self, q: &Vec3, k: usize) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, q, k, &mut heap);
        let mut out = heap.into_vec();
        out.sort();
        out
    }

    fn knn_rec(&self, node: usize, q: &Vec3, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist2: (self.points[i] - q).norm_squared(),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let d = q[axis] - value;
                let (near, far) = if d <= 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, heap);
                if heap.len() < k || d * d <= heap.peek().unwrap().dist2 {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// All points with distance `<= radius`, sorted by `(distance, index)`.
    pub fn within_radius(&self, q: &Vec3, radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.radius_rec(0, q, radius * radius, &mut out);
        }
        out.sort();
        out
    }

    fn radius_rec(&self, node: usize, q: &Vec3, r2: f64, out: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 <= r2 {
                        out.push(Neighbor { index: i, dist2: d2 });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let d = q[axis] - value;
                let (near, far) = if d <= 0.0 { (left, right) } else { (right, left) };
                self.radius_rec(near, q, r2, out);
                if d * d <= r2 {
                    self.radius_rec(far, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_sorted(points: &[Vec3], q: &Vec3) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .map(|(i, p)| Neighbor {
                index: i,
                dist2: (p - q).norm_squared(),
            })
            .collect();
        all.sort();
        all
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        // quantized coordinates force plenty of exact ties
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(0..20) as f64 * 0.05,
                    rng.gen_range(0..20) as f64 * 0.05,
                    rng.gen_range(0..5) as f64 * 0.05,
                )
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..1000 {
            let n = rng.gen_range(1..=500);
            let pts = if trial % 2 == 0 {
                random_cloud(&mut rng, n)
            } else {
                (0..n)
                    .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
                    .collect()
            };
            let index = SpatialIndex::new(&pts);
            for _ in 0..5 {
                let q = Vec3::new(rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..0.4));
                let brute = brute_sorted(&pts, &q);
                assert_eq!(index.nearest(&q), Some(brute[0]));
                let k = rng.gen_range(1..=16);
                assert_eq!(index.k_nearest(&q, k), brute[..k.min(n)].to_vec());
                let r = rng.gen_range(0.0..0.3);
                let within: Vec<_> = brute.iter().copied().filter(|b| b.dist2 <= r * r).collect();
                assert_eq!(index.within_radius(&q, r), within);
                assert_eq!(index.nearest_within(&q, r), within.first().copied());
            }
        }
    }

    #[test]
    fn empty_index() {
        let index = SpatialIndex::new(&[]);
        assert!(index.nearest(&Vec3::zeros()).is_none());
        assert!(index.k_nearest(&Vec3::zeros(), 3).is_empty());
    }

    #[test]
    fn coincident_points_prefer_lowest_index() {
        let pts = vec![Vec3::new(1.0, 1.0, 1.0); 40];
        let index = SpatialIndex::new(&pts);
        assert_eq!(index.nearest(&Vec3::zeros()).unwrap().index, 0);
        let k: Vec<usize> = index.k_nearest(&Vec3::zeros(), 3).iter().map(|n| n.index).collect();
        assert_eq!(k, vec![0, 1, 2]);
    }
}
