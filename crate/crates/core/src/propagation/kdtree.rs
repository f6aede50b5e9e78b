//! Exact nearest-neighbor search: a brute-force reference scan and a k-d tree
//! that returns the same index on every query, ties included.

/// Squared Euclidean distance, summed in dimension order. Both search paths
/// use this function so their results compare bit for bit.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Index of the row nearest to `q`; ties go to the lowest index.
///
/// # Panics
/// If `rows` is empty.
pub fn brute_force_nearest<R: AsRef<[f64]>>(q: &[f64], rows: &[R]) -> usize {
    assert!(!rows.is_empty(), "nearest neighbor of an empty set");
    let mut best = (f64::INFINITY, 0);
    for (i, r) in rows.iter().enumerate() {
        let d = sq_dist(q, r.as_ref());
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree over row-major points.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    /// Original row index of each stored point.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// # Panics
    /// If `rows` is empty or rows differ in length.
    pub fn build<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        assert!(!rows.is_empty(), "k-d tree over an empty set");
        let dim = rows[0].as_ref().len();
        assert!(rows.iter().all(|r| r.as_ref().len() == dim), "rows differ in length");
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut nodes = Vec::new();
        build_node(rows, &mut order, 0, rows.len(), dim, &mut nodes);
        let mut points = Vec::with_capacity(rows.len() * dim);
        for &i in &order {
            points.extend_from_slice(rows[i].as_ref());
        }
        KdTree { dim, points, order, nodes }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Same answer as [`brute_force_nearest`] over the original rows.
    pub fn nearest(&self, q: &[f64]) -> usize {
        assert_eq!(q.len(), self.dim, "query dimension");
        let mut best = (f64::INFINITY, usize::MAX);
        let mut offsets = vec![0.0; self.dim];
        self.search(0, q, &mut offsets, &mut best);
        best.1
    }

    fn search(&self, node: usize, q: &[f64], offsets: &mut [f64], best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for k in start..end {
                    let p = &self.points[k * self.dim..(k + 1) * self.dim];
                    let d = sq_dist(q, p);
                    let idx = self.order[k];
                    if d < best.0 || (d == best.0 && idx < best.1) {
                        *best = (d, idx);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, offsets, best);
                let saved = offsets[dim];
                offsets[dim] = diff.abs();
                // Every offset is at most the matching coordinate gap of any
                // point in `far`, so this rounded sum never exceeds that
                // point's rounded distance. Equal bounds are still visited so
                // a lower-index tie is not missed.
                let bound = offsets.iter().fold(0.0, |s, o| s + o * o);
                if bound <= best.0 {
                    self.search(far, q, offsets, best);
                }
                offsets[dim] = saved;
            }
        }
    }
}

fn build_node<R: AsRef<[f64]>>(
    rows: &[R],
    order: &mut [usize],
    start: usize,
    end: usize,
    dim: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    nodes.push(Node::Leaf { start, end });
    if end - start <= LEAF_SIZE {
        return id;
    }
    let slice = &mut order[start..end];
    let mut split_dim = 0;
    let mut widest = -1.0;
    for d in 0..dim {
        let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            let v = rows[i].as_ref()[d];
            (lo.min(v), hi.max(v))
        });
        if hi - lo > widest {
            widest = hi - lo;
            split_dim = d;
        }
    }
    if widest <= 0.0 {
        return id;
    }
    let mid = slice.len() / 2;
    let key = |i: &usize| rows[*i].as_ref()[split_dim];
    slice.select_nth_unstable_by(mid, |a, b| key(a).total_cmp(&key(b)));
    let value = key(&slice[mid]);
    // Points equal to the split value may sit on either side; the search
    // bound only needs left <= value <= right, which selection guarantees.
    let left = build_node(rows, order, start, start + mid, dim, nodes);
    let right = build_node(rows, order, start + mid, end, dim, nodes);
    nodes[id] = Node::Split { dim: split_dim, value, left, right };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_cases() {
        let rows = vec![vec![0.0, 0.0], vec![10.0, 10.0]];
        assert_eq!(brute_force_nearest(&[1.0, 1.0], &rows), 0);
        assert_eq!(KdTree::build(&rows).nearest(&[1.0, 1.0]), 0);
        assert_eq!(KdTree::build(&rows).nearest(&[10.0, 10.0]), 1);
    }

    #[test]
    fn duplicates_resolve_to_lowest_index() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 5) as f64, 0.0]).collect();
        let tree = KdTree::build(&rows);
        for q in 0..5 {
            assert_eq!(tree.nearest(&[q as f64, 0.0]), q);
            assert_eq!(brute_force_nearest(&[q as f64, 0.0], &rows), q);
        }
        // Equidistant between 1 and 2: lowest index among x=1 and x=2 rows.
        assert_eq!(tree.nearest(&[1.5, 0.0]), 1);
    }

    #[test]
    fn random_dim42_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..500).map(|_| (0..42).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let tree = KdTree::build(&rows);
        for i in 0..500 {
            assert_eq!(tree.nearest(&rows[i]), i);
        }
        for _ in 0..500 {
            let q: Vec<f64> = (0..42).map(|_| rng.gen_range(-1.2..1.2)).collect();
            assert_eq!(tree.nearest(&q), brute_force_nearest(&q, &rows));
        }
    }

    proptest! {
        #[test]
        fn grid_points_with_ties(pts in prop::collection::vec((0i32..6, 0i32..6, 0i32..3), 1..80),
                                 q in (0i32..12, 0i32..12, 0i32..6)) {
            let rows: Vec<Vec<f64>> = pts.iter().map(|&(a, b, c)| vec![a as f64, b as f64, c as f64]).collect();
            let q = [q.0 as f64 / 2.0, q.1 as f64 / 2.0, q.2 as f64 / 2.0];
            prop_assert_eq!(KdTree::build(&rows).nearest(&q), brute_force_nearest(&q, &rows));
        }
    }
}
