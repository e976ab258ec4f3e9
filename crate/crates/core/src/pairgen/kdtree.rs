use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Static 2-D KD-tree over labelled points.
///
/// Nodes are stored in a flat arena; leaves hold up to `leaf_size` points.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<([f64; 2], u32)>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

#[derive(Clone, Debug)]
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

/// Candidate ordered by squared distance, then id.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    dist_sq: f64,
    id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq.total_cmp(&other.dist_sq).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn build(points: Vec<([f64; 2], u32)>, leaf_size: usize) -> Self {
        let leaf_size = leaf_size.max(1);
        let mut tree = Self {
            points,
            nodes: Vec::new(),
            leaf_size,
        };
        let n = tree.points.len();
        if n > 0 {
            tree.build_rec(0, n, 0);
        }
        tree
    }

    fn build_rec(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let idx = self.nodes.len();
        if end - start <= self.leaf_size {
            self.nodes.push(Node::Leaf { start, end });
            return idx;
        }
        let axis = depth % 2;
        let mid = start + (end - start) / 2;
        self.points[start..end]
            .select_nth_unstable_by(mid - start, |a, b| a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1)));
        let value = self.points[mid].0[axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_rec(start, mid, depth + 1);
        let right = self.build_rec(mid, end, depth + 1);
        self.nodes[idx] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        idx
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point_of(&self, id: u32) -> Option<[f64; 2]> {
        self.points.iter().find(|p| p.1 == id).map(|p| p.0)
    }

    /// The `k` points nearest `query`, skipping `exclude`, sorted by
    /// distance and then id.
    pub fn nearest(&self, query: [f64; 2], k: usize, exclude: Option<u32>) -> Vec<(u32, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, exclude, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| (c.id, c.dist_sq.sqrt()))
            .collect()
    }

    fn search(&self, node: usize, q: [f64; 2], k: usize, exclude: Option<u32>, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &(p, id) in &self.points[start..end] {
                    if Some(id) == exclude {
                        continue;
                    }
                    let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
                    let cand = Candidate {
                        dist_sq: dx * dx + dy * dy,
                        id,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
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
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, heap);
                // Points equal to the split value may sit on either side, so an
                // equal bound must still be explored for id tie-breaks.
                let bound = diff * diff;
                if heap.len() < k || bound <= heap.peek().expect("heap is full").dist_sq {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }
}
