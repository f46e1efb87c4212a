//! Exact nearest-neighbor queries over a static k-d tree.
//!
//! Results are defined by the exhaustive scan: neighbors are ordered by
//! Euclidean distance with ties broken by the lower reference index. The
//! tree only prunes subtrees that cannot contain a better candidate.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::par::Execution;

const LEAF_SIZE: usize = 8;

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Static k-d tree over the points of a reference cloud.
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    order: Vec<usize>,
    root: Node,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(cloud: &'a PointCloud) -> Self {
        Self::from_points(cloud.points())
    }

    pub fn from_points(points: &'a [Vector3<f64>]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let n = order.len();
        let root = build(points, &mut order, 0, n);
        Self {
            points,
            order,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` closest reference points as `(index, distance)`, ascending by
    /// distance then index. With `exclude_self`, reference points at
    /// distance exactly 0 from `query` are skipped.
    pub fn knn(&self, query: &Vector3<f64>, k: usize, exclude_self: bool) -> Result<Vec<(usize, f64)>> {
        if self.points.is_empty() {
            return Err(Error::EmptyReference);
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(&self.root, query, k, exclude_self, &mut heap);
        if heap.len() < k {
            return Err(Error::NotEnoughNeighbors {
                requested: k,
                available: heap.len(),
            });
        }
        let mut found = heap.into_sorted_vec();
        found.truncate(k);
        Ok(found.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect())
    }

    pub fn nearest(&self, query: &Vector3<f64>) -> Result<(usize, f64)> {
        Ok(self.knn(query, 1, false)?[0])
    }

    /// All reference indices within `radius` (inclusive), sorted by index.
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_radius(&self.root, query, radius * radius, &mut out);
        out.sort_unstable();
        out
    }

    fn search(
        &self,
        node: &Node,
        query: &Vector3<f64>,
        k: usize,
        exclude_self: bool,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match node {
            Node::Leaf { start, end } => {
                for &idx in &self.order[*start..*end] {
                    let dist2 = (self.points[idx] - query).norm_squared();
                    if exclude_self && dist2 == 0.0 {
                        continue;
                    }
                    let cand = Candidate { dist2, index: idx };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap holds k items") {
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
                let diff = query[*axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, exclude_self, heap);
                let plane2 = diff * diff;
                // `<=` keeps equidistant candidates reachable for index tie-breaks.
                if heap.len() < k || plane2 <= heap.peek().expect("non-empty").dist2 {
                    self.search(far, query, k, exclude_self, heap);
                }
            }
        }
    }

    fn collect_radius(&self, node: &Node, query: &Vector3<f64>, r2: f64, out: &mut Vec<usize>) {
        match node {
            Node::Leaf { start, end } => {
                for &idx in &self.order[*start..*end] {
                    if (self.points[idx] - query).norm_squared() <= r2 {
                        out.push(idx);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[*axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.collect_radius(left, query, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.collect_radius(right, query, r2, out);
                }
            }
        }
    }
}

fn build(points: &[Vector3<f64>], order: &mut [usize], start: usize, end: usize) -> Node {
    if end - start <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    let slice = &mut order[start..end];
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in slice.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let spread = hi - lo;
    let axis = spread.imax();
    if spread[axis] == 0.0 {
        return Node::Leaf { start, end };
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[slice[mid]][axis];
    // Left holds coordinates <= value, right holds >= value.
    let left = build(points, order, start, start + mid);
    let right = build(points, order, start + mid, end);
    Node::Split {
        axis,
        value,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// For every query point, the index of and distance to the closest
/// reference point.
pub fn nearest_neighbor(query: &PointCloud, reference: &PointCloud) -> Result<(Vec<usize>, Vec<f64>)> {
    nearest_neighbor_with(query, reference, Execution::default())
}

pub fn nearest_neighbor_with(
    query: &PointCloud,
    reference: &PointCloud,
    exec: Execution,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let tree = KdTree::new(reference);
    let hits = exec.map_slice(query.points(), |q| tree.nearest(q));
    let mut indices = Vec::with_capacity(hits.len());
    let mut dists = Vec::with_capacity(hits.len());
    for hit in hits {
        let (i, d) = hit?;
        indices.push(i);
        dists.push(d);
    }
    Ok((indices, dists))
}

/// The `k` nearest reference indices to a single query point.
pub fn knn(query: &Vector3<f64>, reference: &PointCloud, k: usize, exclude_self: bool) -> Result<Vec<usize>> {
    Ok(KdTree::new(reference)
        .knn(query, k, exclude_self)?
        .into_iter()
        .map(|(i, _)| i)
        .collect())
}
