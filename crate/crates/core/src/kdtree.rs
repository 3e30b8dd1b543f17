//! Exact k-nearest-neighbour search over fixed-dimension points.
//!
//! Results are ordered by `(squared distance, tie key)`; the tie key defaults
//! to the point index. The tree and [`KdTree::knn_brute`] share the distance
//! routine, so both return identical lists.

use std::cmp::Ordering;

const LEAF_SIZE: usize = 16;
const BOUND_TOL: f64 = 1e-9;

/// Squared Euclidean distance, summed in coordinate order.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub index: usize,
    pub dist2: f64,
}

#[derive(Debug, Clone, Copy)]
struct Ranked {
    dist2: f64,
    key: u64,
    index: u32,
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.key.cmp(&other.key))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { dim: u16, value: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    keys: Vec<u64>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    /// Points and keys laid out in `order`, so leaves scan contiguous memory.
    packed: Vec<f64>,
    packed_keys: Vec<u64>,
}

impl KdTree {
    /// `points` is row-major with `dim` values per point.
    pub fn new(dim: usize, points: Vec<f64>) -> Self {
        let n = if dim == 0 { 0 } else { points.len() / dim };
        let keys = (0..n as u64).collect();
        Self::with_keys(dim, points, keys)
    }

    /// Like [`KdTree::new`] with an explicit tie-breaking key per point.
    pub fn with_keys(dim: usize, points: Vec<f64>, keys: Vec<u64>) -> Self {
        assert!(dim > 0, "dimension must be positive");
        assert_eq!(points.len() % dim, 0, "ragged point buffer");
        let n = points.len() / dim;
        assert_eq!(keys.len(), n, "one key per point");
        let mut tree = Self {
            dim,
            points,
            keys,
            order: (0..n as u32).collect(),
            nodes: Vec::new(),
            packed: Vec::new(),
            packed_keys: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree.packed = tree.order.iter().flat_map(|&i| tree.point(i as usize).to_vec()).collect();
        tree.packed_keys = tree.order.iter().map(|&i| tree.keys[i as usize]).collect();
        tree
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

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return id;
        }
        // split on the widest dimension at the median
        let mut best_dim = 0;
        let mut best_spread = f64::NEG_INFINITY;
        for d in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.points[i as usize * self.dim + d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        let mid = start + (end - start) / 2;
        let (dim, pts) = (self.dim, &self.points);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a as usize * dim + best_dim]
                .total_cmp(&pts[b as usize * dim + best_dim])
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] as usize * self.dim + best_dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id as usize] = Node::Split {
            dim: best_dim as u16,
            value,
            left,
            right,
        };
        id
    }

    fn rank(&self, query: &[f64], i: u32) -> Ranked {
        Ranked {
            dist2: sq_dist(query, self.point(i as usize)),
            key: self.keys[i as usize],
            index: i,
        }
    }

    /// The `k` closest points, ascending.
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<Hit> {
        assert_eq!(query.len(), self.dim, "query dimension");
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut best = Vec::with_capacity(k + 1);
        let mut offsets = vec![0.0; self.dim];
        self.knn_node(0, query, k, &mut best, &mut offsets, 0.0);
        best.into_iter()
            .map(|r: Ranked| Hit {
                index: r.index as usize,
                dist2: r.dist2,
            })
            .collect()
    }

    /// `best` is kept sorted ascending and at most `k` long.
    fn knn_node(&self, node: u32, query: &[f64], k: usize, best: &mut Vec<Ranked>, offsets: &mut [f64], rd: f64) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for pos in start as usize..end as usize {
                    let full = best.len() == k;
                    let worst = if full { best[k - 1].dist2 } else { f64::INFINITY };
                    // same summation order as `sq_dist`, abandoned once it
                    // exceeds the current worst
                    let p = &self.packed[pos * self.dim..(pos + 1) * self.dim];
                    let mut acc = 0.0;
                    let mut beaten = false;
                    for (x, y) in query.iter().zip(p) {
                        let d = x - y;
                        acc += d * d;
                        if acc > worst {
                            beaten = true;
                            break;
                        }
                    }
                    if beaten {
                        continue;
                    }
                    let r = Ranked {
                        dist2: acc,
                        key: self.packed_keys[pos],
                        index: self.order[pos],
                    };
                    if full && r >= best[k - 1] {
                        continue;
                    }
                    let at = best.partition_point(|b| *b < r);
                    best.insert(at, r);
                    best.truncate(k);
                }
            }
            Node::Split { dim, value, left, right } => {
                let d = dim as usize;
                let diff = query[d] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, query, k, best, offsets, rd);
                let old = offsets[d];
                let far_rd = rd - old * old + diff * diff;
                // ties may still win on key, and the incremental bound can
                // overshoot the summed distance by rounding; stay conservative
                if best.len() < k || far_rd * (1.0 - BOUND_TOL) <= best[k - 1].dist2 {
                    offsets[d] = diff;
                    self.knn_node(far, query, k, best, offsets, far_rd);
                    offsets[d] = old;
                }
            }
        }
    }

    /// Linear-scan reference for [`KdTree::knn`].
    pub fn knn_brute(&self, query: &[f64], k: usize) -> Vec<Hit> {
        let mut all: Vec<Ranked> = (0..self.len() as u32).map(|i| self.rank(query, i)).collect();
        all.sort_unstable();
        all.truncate(k);
        all.into_iter()
            .map(|r| Hit {
                index: r.index as usize,
                dist2: r.dist2,
            })
            .collect()
    }

    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        self.knn(query, 1).first().map(|h| (h.index, h.dist2))
    }

    /// Indices of points with squared distance `<= r2`, ascending.
    pub fn within(&self, query: &[f64], r2: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.is_empty() {
            let mut offsets = vec![0.0; self.dim];
            self.within_node(0, query, r2, &mut out, &mut offsets, 0.0);
        }
        out.sort_unstable();
        out
    }

    fn within_node(
        &self,
        node: u32,
        query: &[f64],
        r2: f64,
        out: &mut Vec<usize>,
        offsets: &mut [f64],
        rd: f64,
    ) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    if sq_dist(query, self.point(i as usize)) <= r2 {
                        out.push(i as usize);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let d = dim as usize;
                let diff = query[d] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.within_node(near, query, r2, out, offsets, rd);
                let old = offsets[d];
                let far_rd = rd - old * old + diff * diff;
                if far_rd * (1.0 - BOUND_TOL) <= r2 {
                    offsets[d] = diff;
                    self.within_node(far, query, r2, out, offsets, far_rd);
                    offsets[d] = old;
                }
            }
        }
    }
}
