//! Exact k-nearest-neighbour search with a bucketed KD-tree.
//!
//! Splits are on the dimension of largest spread at the median, so the tree
//! is balanced and its construction depends only on the input. Search uses
//! incremental squared-distance bounds and full backtracking; results are
//! ordered by `(squared distance, index)`, which makes ties deterministic and
//! identical to a linear scan.

use std::cmp::Ordering;

use crate::error::{Error, Result};

const BUCKET_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub sq_dist: f64,
}

impl Neighbor {
    #[inline]
    fn key_lt(&self, other: &Neighbor) -> bool {
        self.sq_dist < other.sq_dist || (self.sq_dist == other.sq_dist && self.index < other.index)
    }

    pub fn dist(&self) -> f64 {
        self.sq_dist.sqrt()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    /// Point indices, grouped contiguously by leaf.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Squared Euclidean distance, summed in dimension order.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

impl KdTree {
    /// `points` holds `n × dim` coordinates, point-major.
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(Error::shape(format!(
                "{} coordinates do not form points of dimension {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        let mut tree = Self {
            dim,
            points,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.points[index * self.dim..(index + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= BUCKET_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut best_dim = 0;
        let mut best_spread = -1.0;
        for d in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.points[i * self.dim + d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if best_spread <= 0.0 {
            // all points identical
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let dim = self.dim;
        let points = &self.points;
        let key = |i: &usize| (points[i * dim + best_dim], *i);
        self.order[start..end].select_nth_unstable_by(mid - start, |a, b| {
            key(a).partial_cmp(&key(b)).unwrap_or(Ordering::Equal)
        });
        let value = self.points[self.order[mid] * dim + best_dim];
        self.nodes.push(Node::Split {
            dim: best_dim,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[id] {
            *l = left;
            *r = right;
        }
        id
    }

    /// The `k` nearest points ordered by ascending distance.
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<Neighbor> {
        self.search(query, k, f64::INFINITY).0
    }

    /// The `k` nearest points with squared distance at most `max_sq_dist`.
    pub fn knn_within(&self, query: &[f64], k: usize, max_sq_dist: f64) -> Vec<Neighbor> {
        self.search(query, k, max_sq_dist).0
    }

    /// Like [`KdTree::knn`], also returning the number of points whose
    /// distance was evaluated.
    pub fn knn_with_stats(&self, query: &[f64], k: usize) -> (Vec<Neighbor>, usize) {
        self.search(query, k, f64::INFINITY)
    }

    fn search(&self, query: &[f64], k: usize, max_sq_dist: f64) -> (Vec<Neighbor>, usize) {
        assert_eq!(query.len(), self.dim, "query dimension");
        let mut state = Search {
            tree: self,
            query,
            k,
            max_sq_dist,
            best: Vec::with_capacity(k + 1),
            offsets: vec![0.0; self.dim],
            visited: 0,
        };
        if k > 0 && !self.is_empty() {
            state.descend(0, 0.0);
        }
        (state.best, state.visited)
    }
}

struct Search<'a> {
    tree: &'a KdTree,
    query: &'a [f64],
    k: usize,
    max_sq_dist: f64,
    best: Vec<Neighbor>,
    offsets: Vec<f64>,
    visited: usize,
}

impl Search<'_> {
    #[inline]
    fn bound(&self) -> f64 {
        if self.best.len() == self.k {
            self.best[self.k - 1].sq_dist.min(self.max_sq_dist)
        } else {
            self.max_sq_dist
        }
    }

    fn offer(&mut self, cand: Neighbor) {
        if cand.sq_dist > self.max_sq_dist {
            return;
        }
        if self.best.len() == self.k && !cand.key_lt(&self.best[self.k - 1]) {
            return;
        }
        let pos = self.best.partition_point(|n| n.key_lt(&cand));
        self.best.insert(pos, cand);
        self.best.truncate(self.k);
    }

    fn descend(&mut self, node: usize, rd: f64) {
        match self.tree.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.tree.order[start..end] {
                    self.visited += 1;
                    let d = sq_dist(self.query, self.tree.point(i));
                    self.offer(Neighbor { index: i, sq_dist: d });
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = self.query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.descend(near, rd);
                let old = self.offsets[dim];
                let far_rd = rd - old * old + diff * diff;
                // Inclusive and slightly loose so rounding in the incremental
                // bound never hides an exact tie with a lower index.
                if far_rd <= self.bound() * (1.0 + 1e-12) {
                    self.offsets[dim] = diff;
                    self.descend(far, far_rd);
                    self.offsets[dim] = old;
                }
            }
        }
    }
}
