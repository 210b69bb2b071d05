//! Nearest-neighbour queries over static point sets.
//!
//! A median-split k-d tree over an index permutation. Splits use the axis of
//! largest spread, so degenerate inputs (coplanar grids, duplicates) build
//! fine.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;
use ordered_float::OrderedFloat;

const LEAF_SIZE: usize = 12;

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

/// k-d tree over a fixed set of points in `K` dimensions.
///
/// Query results are `(distance, index)` sorted by distance, then index.
pub struct KdIndex<const K: usize> {
    points: Vec<[f64; K]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<const K: usize> KdIndex<K> {
    pub fn from_arrays(points: &[[f64; K]]) -> Self {
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; K];
        let mut hi = [f64::NEG_INFINITY; K];
        for &i in &self.order[start..end] {
            for k in 0..K {
                lo[k] = lo[k].min(self.points[i][k]);
                hi[k] = hi[k].max(self.points[i][k]);
            }
        }
        let axis = (0..K)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
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

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64; K] {
        &self.points[i]
    }

    fn dist2(&self, i: usize, q: &[f64; K]) -> f64 {
        let p = &self.points[i];
        (0..K).map(|k| (p[k] - q[k]).powi(2)).sum()
    }

    /// Collects the `k` closest points within squared radius `r2` into `heap`.
    fn search(
        &self,
        node: usize,
        q: &[f64; K],
        k: usize,
        r2: f64,
        heap: &mut BinaryHeap<(OrderedFloat<f64>, usize)>,
    ) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d2 = self.dist2(i, q);
                    if d2 > r2 {
                        continue;
                    }
                    let cand = (OrderedFloat(d2), i);
                    if heap.len() < k {
                        heap.push(cand);
                    } else if heap
                        .peek()
                        .is_some_and(|top| cand.cmp(top) == Ordering::Less)
                    {
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
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(near, q, k, r2, heap);
                let bound = if heap.len() < k {
                    r2
                } else {
                    heap.peek().map_or(r2, |t| t.0 .0.min(r2))
                };
                if diff * diff <= bound {
                    self.search(far, q, k, r2, heap);
                }
            }
        }
    }

    fn query(&self, q: &[f64; K], k: usize, r2: f64) -> Vec<(f64, usize)> {
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        let k = k.min(self.points.len());
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, r2, &mut heap);
        let mut out: Vec<(f64, usize)> = heap.into_iter().map(|(d, i)| (d.0.sqrt(), i)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    pub fn nearest_array(&self, q: &[f64; K]) -> Option<(f64, usize)> {
        self.query(q, 1, f64::INFINITY).into_iter().next()
    }

    pub fn knn_array(&self, q: &[f64; K], k: usize) -> Vec<(f64, usize)> {
        self.query(q, k, f64::INFINITY)
    }

    /// Up to `k` nearest points no farther than `radius`.
    pub fn nearest_within_array(&self, q: &[f64; K], radius: f64, k: usize) -> Vec<(f64, usize)> {
        self.query(q, k, radius * radius)
    }
}

pub type PointIndex2 = KdIndex<2>;

/// 3D index over nalgebra points.
pub struct PointIndex(KdIndex<3>);

impl PointIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let arr: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self(KdIndex::from_arrays(&arr))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn nearest(&self, p: &Vector3<f64>) -> Option<(f64, usize)> {
        self.0.nearest_array(&[p.x, p.y, p.z])
    }

    pub fn knn(&self, p: &Vector3<f64>, k: usize) -> Vec<(f64, usize)> {
        self.0.knn_array(&[p.x, p.y, p.z], k)
    }

    pub fn nearest_within(&self, p: &Vector3<f64>, radius: f64, k: usize) -> Vec<(f64, usize)> {
        self.0.nearest_within_array(&[p.x, p.y, p.z], radius, k)
    }
}
