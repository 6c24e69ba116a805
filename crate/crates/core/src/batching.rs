//! Exact k-nearest-neighbor search and mini-batch samplers.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::index;
use rand::Rng;

use crate::error::{invalid, Result};

const LEAF_SIZE: usize = 16;

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

/// k-d tree over a fixed point set. Queries are exact under the Euclidean
/// metric, optionally after per-axis scaling.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    dim: usize,
    /// Coordinates after scaling, row-major by original index.
    coords: Vec<f64>,
    scale: Option<Vec<f64>>,
    /// Point indices permuted so that every leaf owns a contiguous range.
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

/// Candidate ordered by (distance, index); the heap keeps the worst on top.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

impl SpatialIndex {
    pub fn build(points: &[Vec<f64>]) -> Result<Self> {
        Self::build_scaled(points, None)
    }

    /// Builds the index on `x_a * scale[a]`.
    pub fn build_scaled(points: &[Vec<f64>], scale: Option<&[f64]>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(invalid("cannot index an empty point set"));
        };
        let dim = first.len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(invalid("points must share a positive dimension"));
        }
        if let Some(s) = scale {
            if s.len() != dim || s.iter().any(|&v| !(v > 0.0)) {
                return Err(invalid("metric scaling must be positive, one entry per axis"));
            }
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            for (a, &v) in p.iter().enumerate() {
                coords.push(scale.map_or(v, |s| v * s[a]));
            }
        }
        let mut index = SpatialIndex {
            dim,
            coords,
            scale: scale.map(|s| s.to_vec()),
            perm: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        index.split(0, points.len());
        Ok(index)
    }

    fn coord(&self, i: usize, a: usize) -> f64 {
        self.coords[i * self.dim + a]
    }

    fn split(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // Split along the axis of largest spread at the median.
        let mut axis = 0;
        let mut best = -1.0;
        for a in 0..self.dim {
            let (lo, hi) = self.perm[start..end]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = self.coord(i, a);
                    (lo.min(v), hi.max(v))
                });
            if hi - lo > best {
                best = hi - lo;
                axis = a;
            }
        }
        let mid = start + (end - start) / 2;
        let mut slice = core::mem::take(&mut self.perm);
        slice[start..end].select_nth_unstable_by(mid - start, |&i, &j| {
            self.coord(i, axis).total_cmp(&self.coord(j, axis)).then(i.cmp(&j))
        });
        let value = self.coord(slice[mid], axis);
        self.perm = slice;
        self.nodes.push(Node::Leaf { start, end });
        let left = self.split(start, mid);
        let right = self.split(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn dist2_to(&self, q: &[f64], i: usize) -> f64 {
        let row = &self.coords[i * self.dim..(i + 1) * self.dim];
        row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// Point `i` followed by its `k - 1` nearest other points, nearest first,
    /// ties by ascending index.
    pub fn knn_of(&self, i: usize, k: usize) -> Vec<usize> {
        let q: Vec<f64> = self.coords[i * self.dim..(i + 1) * self.dim].to_vec();
        let mut out = self.knn_scaled(&q, k);
        if out.is_empty() {
            return out;
        }
        match out.iter().position(|&j| j == i) {
            Some(p) => {
                out.remove(p);
            }
            None => {
                out.pop();
            }
        }
        out.insert(0, i);
        out
    }

    /// The `k` nearest indexed points to `q`, nearest first, ties by ascending index.
    /// `q` is given in original coordinates.
    pub fn knn(&self, q: &[f64], k: usize) -> Vec<usize> {
        assert_eq!(q.len(), self.dim, "query dimension mismatch");
        match &self.scale {
            Some(s) => {
                let qs: Vec<f64> = q.iter().zip(s).map(|(v, f)| v * f).collect();
                self.knn_scaled(&qs, k)
            }
            None => self.knn_scaled(q, k),
        }
    }

    fn knn_scaled(&self, q: &[f64], k: usize) -> Vec<usize> {
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &mut heap);
        let mut out = heap.into_sorted_vec();
        out.truncate(k);
        out.into_iter().map(|c| c.index).collect()
    }

    fn search(&self, node: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let c = Candidate {
                        dist2: self.dist2_to(q, i),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // Equal distances can still win on index, hence `<=`.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

/// Point indices of one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub seed_index: usize,
}

/// A uniformly drawn anchor and its `m - 1` nearest neighbors.
pub fn sample_batch<R: Rng + ?Sized>(index: &SpatialIndex, rng: &mut R, m: usize) -> Result<Batch> {
    if m == 0 || m > index.len() {
        return Err(invalid(alloc::format!("batch size {m} outside 1..={}", index.len())));
    }
    let seed_index = rng.random_range(0..index.len());
    Ok(Batch {
        indices: index.knn_of(seed_index, m),
        seed_index,
    })
}

/// `m` distinct indices drawn uniformly without replacement from `0..n`.
pub fn uniform_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Result<Batch> {
    if m == 0 || m > n {
        return Err(invalid(alloc::format!("batch size {m} outside 1..={n}")));
    }
    let indices = index::sample(rng, n, m).into_vec();
    Ok(Batch {
        seed_index: indices[0],
        indices,
    })
}
