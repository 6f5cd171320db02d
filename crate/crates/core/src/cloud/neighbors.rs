use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

const LEAF_SIZE: usize = 16;

/// A neighbor returned by a query: point index and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact kd-tree over point positions.
///
/// Results are sorted by ascending distance with ties broken by point index, so the
/// output is fully determined by the input positions.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(PartialEq)]
struct HeapEntry {
    dist2: f64,
    index: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NeighborIndex {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        let mut index = Self {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !index.points.is_empty() {
            index.build(0, index.points.len());
        }
        index
    }

    pub fn from_cloud(cloud: &super::PointCloud) -> Self {
        Self::new(cloud.positions())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        self.points[i]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (self.points[self.order[start]], self.points[self.order[start]]);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let extent = hi - lo;
        let axis = extent.imax();
        if extent[axis] == 0.0 {
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
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// All points with distance `<= radius` from `query`, sorted ascending.
    pub fn radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<Neighbor> {
        let mut out: Vec<HeapEntry> = Vec::new();
        if self.points.is_empty() || radius < 0.0 {
            return Vec::new();
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let d2 = (self.points[i] - query).norm_squared();
                        if d2 <= r2 {
                            out.push(HeapEntry { dist2: d2, index: i });
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let diff = query[axis] - value;
                    // points equal to the split value can land on either side
                    if diff <= 0.0 || diff * diff <= r2 {
                        stack.push(left);
                    }
                    if diff >= 0.0 || diff * diff <= r2 {
                        stack.push(right);
                    }
                }
            }
        }
        out.sort_unstable();
        out.into_iter()
            .map(|e| Neighbor { index: e.index, distance: e.dist2.sqrt() })
            .collect()
    }

    /// The `k` nearest points to `query` (the query itself included when it is a member).
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        self.knn_filtered(query, k, usize::MAX)
    }

    /// The `k` nearest neighbors of member point `i`, optionally skipping `i` itself.
    pub fn knn_of(&self, i: usize, k: usize, include_self: bool) -> Vec<Neighbor> {
        let skip = if include_self { usize::MAX } else { i };
        self.knn_filtered(&self.points[i], k, skip)
    }

    fn knn_filtered(&self, query: &Vector3<f64>, k: usize, skip: usize) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(k + 1);
        let mut stack = vec![(0usize, 0.0f64)];
        while let Some((node, bound)) = stack.pop() {
            if heap.len() == k && bound > heap.peek().unwrap().dist2 {
                continue;
            }
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        if i == skip {
                            continue;
                        }
                        let entry = HeapEntry {
                            dist2: (self.points[i] - query).norm_squared(),
                            index: i,
                        };
                        if heap.len() < k {
                            heap.push(entry);
                        } else if entry < *heap.peek().unwrap() {
                            heap.pop();
                            heap.push(entry);
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let diff = query[axis] - value;
                    let plane = diff * diff;
                    let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                    stack.push((far, bound.max(plane)));
                    stack.push((near, bound));
                }
            }
        }
        heap.into_sorted_vec()
            .into_iter()
            .map(|e| Neighbor { index: e.index, distance: e.dist2.sqrt() })
            .collect()
    }
}
