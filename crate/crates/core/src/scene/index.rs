use std::collections::HashMap;

use crate::motion::Vec3;

/// Default voxel edge in metres.
pub const CELL: f64 = 0.25;

/// Rings beyond this radius fall back to a linear scan.
const MAX_RINGS: i64 = 64;

/// Uniform voxel hash grid over a fixed point set.
///
/// Queries walk Chebyshev shells of cells outward from the query's cell and
/// stop once the current best distance is provably smaller than anything in
/// an unvisited shell, so results match an exhaustive scan, including ties
/// (broken toward the lower point index).
#[derive(Clone, Debug)]
pub struct VoxelIndex {
    cell: f64,
    points: Vec<Vec3>,
    cells: HashMap<[i64; 3], Vec<u32>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

#[inline]
pub(crate) fn dist2(a: Vec3, b: Vec3) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// Sorted `(d², index)` list of at most `k` entries.
struct Best {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl Best {
    fn offer(&mut self, d2: f64, i: usize) {
        let key = (d2, i);
        if self.items.len() == self.k {
            let last = self.items[self.k - 1];
            if !(key.0 < last.0 || (key.0 == last.0 && key.1 < last.1)) {
                return;
            }
            self.items.pop();
        }
        let pos = self
            .items
            .partition_point(|&(d, j)| d < key.0 || (d == key.0 && j < key.1));
        self.items.insert(pos, key);
    }

    fn bound(&self) -> Option<f64> {
        (self.items.len() == self.k).then(|| self.items[self.k - 1].0)
    }
}

impl VoxelIndex {
    pub fn new(points: &[Vec3]) -> Self {
        Self::with_cell(points, CELL)
    }

    pub fn with_cell(points: &[Vec3], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let c = Self::key(cell, *p);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            cells.entry(c).or_default().push(i as u32);
        }
        Self {
            cell,
            points: points.to_vec(),
            cells,
            lo,
            hi,
        }
    }

    fn key(cell: f64, p: Vec3) -> [i64; 3] {
        p.map(|v| (v / cell).floor().clamp(-1e15, 1e15) as i64)
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

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, q: Vec3) -> Option<(usize, f64)> {
        self.knn(q, 1).first().copied().map(|(d2, i)| (i, d2))
    }

    /// The `k` nearest points as `(d², index)`, ascending.
    pub fn knn(&self, q: Vec3, k: usize) -> Vec<(f64, usize)> {
        if self.points.is_empty() || k == 0 || !q.iter().all(|v| v.is_finite()) {
            return Vec::new();
        }
        let k = k.min(self.points.len());
        let mut best = Best {
            k,
            items: Vec::with_capacity(k + 1),
        };
        let c = Self::key(self.cell, q);
        let rmax = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((c[a] - self.hi[a]).abs()))
            .max()
            .unwrap_or(0);
        if rmax > MAX_RINGS {
            for (i, p) in self.points.iter().enumerate() {
                best.offer(dist2(q, *p), i);
            }
            return best.items;
        }
        for r in 0..=rmax {
            self.visit_shell(c, r, |i| best.offer(dist2(q, self.points[i]), i));
            if let Some(b) = best.bound() {
                // Everything in shells beyond r is at least r cells away.
                let reach = r as f64 * self.cell;
                if b < reach * reach * (1.0 - 1e-12) {
                    break;
                }
            }
        }
        best.items
    }

    fn visit_shell(&self, c: [i64; 3], r: i64, mut f: impl FnMut(usize)) {
        let range = |a: usize| (c[a] - r).max(self.lo[a])..=(c[a] + r).min(self.hi[a]);
        for x in range(0) {
            for y in range(1) {
                let edge = (x - c[0]).abs() == r || (y - c[1]).abs() == r;
                let mut visit_z = |z: i64| {
                    if let Some(ids) = self.cells.get(&[x, y, z]) {
                        ids.iter().for_each(|&i| f(i as usize));
                    }
                };
                // r == 0 always lands in the edge branch.
                if edge {
                    range(2).for_each(&mut visit_z);
                } else {
                    for z in [c[2] - r, c[2] + r] {
                        if z >= self.lo[2] && z <= self.hi[2] {
                            visit_z(z);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_lower_index() {
        let idx = VoxelIndex::new(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert_eq!(idx.nearest([0.0; 3]), Some((0, 1.0)));
        let k = idx.knn([0.0; 3], 3);
        assert_eq!(k.iter().map(|x| x.1).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn far_queries_use_the_fallback() {
        let idx = VoxelIndex::new(&[[0.0; 3], [0.3, 0.0, 0.0]]);
        assert_eq!(idx.nearest([1e6, 0.0, 0.0]).unwrap().0, 1);
        assert_eq!(idx.nearest([-40.0, 0.0, 0.0]).unwrap().0, 0);
    }

    #[test]
    fn empty_and_non_finite() {
        let idx = VoxelIndex::new(&[]);
        assert!(idx.nearest([0.0; 3]).is_none());
        let idx = VoxelIndex::new(&[[0.0; 3]]);
        assert!(idx.nearest([f64::NAN, 0.0, 0.0]).is_none());
    }
}
