//! Balanced 2-D kd-tree over (easting, northing).
//!
//! Results are ordered by (squared distance, index), so ties resolve exactly as
//! a brute-force scan with the same ordering would.

use std::cmp::Ordering;

#[derive(Debug, Clone)]
pub struct KdTree2 {
    points: Vec<[f64; 2]>,
    /// Permutation of point indices laid out as an implicit tree: the median
    /// of every sub-range is that sub-tree's root.
    order: Vec<usize>,
}

/// A query hit: index into the original point list and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

fn d2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn key_cmp(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Bounded best-k list sorted by (d2, index).
struct Best {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl Best {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn bound(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    fn offer(&mut self, item: (f64, usize)) {
        if self.items.len() == self.k && key_cmp(item, self.items[self.k - 1]) != Ordering::Less {
            return;
        }
        let pos = self
            .items
            .partition_point(|x| key_cmp(*x, item) == Ordering::Less);
        self.items.insert(pos, item);
        self.items.truncate(self.k);
    }
}

impl KdTree2 {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        Self { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> [f64; 2] {
        self.points[index]
    }

    pub fn nearest(&self, q: [f64; 2]) -> Option<Neighbor> {
        self.knn(q, 1).into_iter().next()
    }

    /// Nearest point whose index differs from `exclude`.
    pub fn nearest_excluding(&self, q: [f64; 2], exclude: usize) -> Option<Neighbor> {
        let mut best = Best::new(1);
        self.search(&q, 0, self.order.len(), 0, f64::INFINITY, &mut best, Some(exclude));
        best.items.first().map(|&(d, i)| Neighbor {
            index: i,
            distance: d.sqrt(),
        })
    }

    /// Up to `k` nearest points, closest first.
    pub fn knn(&self, q: [f64; 2], k: usize) -> Vec<Neighbor> {
        self.knn_within(q, k, f64::INFINITY)
    }

    /// Up to `k` nearest points within `radius` (inclusive), closest first.
    pub fn knn_within(&self, q: [f64; 2], k: usize, radius: f64) -> Vec<Neighbor> {
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut best = Best::new(k);
        let r2 = if radius.is_finite() { radius * radius } else { f64::INFINITY };
        self.search(&q, 0, self.order.len(), 0, r2, &mut best, None);
        best.items
            .into_iter()
            .map(|(d, i)| Neighbor {
                index: i,
                distance: d.sqrt(),
            })
            .collect()
    }

    /// Every point within `radius` (inclusive), closest first.
    pub fn radius(&self, q: [f64; 2], radius: f64) -> Vec<Neighbor> {
        let mut hits = Vec::new();
        self.collect_radius(&q, 0, self.order.len(), 0, radius * radius, &mut hits);
        hits.sort_by(|a, b| key_cmp(*a, *b));
        hits.into_iter()
            .map(|(d, i)| Neighbor {
                index: i,
                distance: d.sqrt(),
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        q: &[f64; 2],
        lo: usize,
        hi: usize,
        depth: usize,
        r2: f64,
        best: &mut Best,
        exclude: Option<usize>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d = d2(q, p);
        if d <= r2 && exclude != Some(idx) {
            best.offer((d, idx));
        }
        let axis = depth % 2;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, r2, best, exclude);
        let plane = diff * diff;
        if plane <= best.bound() && plane <= r2 {
            self.search(q, far.0, far.1, depth + 1, r2, best, exclude);
        }
    }

    fn collect_radius(&self, q: &[f64; 2], lo: usize, hi: usize, depth: usize, r2: f64, out: &mut Vec<(f64, usize)>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d = d2(q, p);
        if d <= r2 {
            out.push((d, idx));
        }
        let axis = depth % 2;
        let diff = q[axis] - p[axis];
        if diff <= 0.0 || diff * diff <= r2 {
            self.collect_radius(q, lo, mid, depth + 1, r2, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.collect_radius(q, mid + 1, hi, depth + 1, r2, out);
        }
    }
}

fn build(points: &[[f64; 2]], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 2;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}
