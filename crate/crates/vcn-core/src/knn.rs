//! Exact nearest-neighbour search: brute force and a uniform grid.
//!
//! Both paths return identical results (exactness is load-bearing: loss
//! oracles and the post-processing contract are defined against brute
//! force). Ties are always broken toward the lowest point index. The grid
//! is worth using above a couple thousand points; callers choose.

use crate::geometry::Vec3;

/// Brute-force nearest neighbour; ties resolve to the lowest index.
pub fn brute_nearest(points: &[Vec3], q: Vec3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in points.iter().enumerate() {
        let d2 = (p - q).norm_sq();
        if best.map_or(true, |(_, b)| d2 < b) {
            best = Some((i, d2));
        }
    }
    best.map(|(i, d2)| (i, d2.sqrt()))
}

/// Brute-force radius query (inclusive), ascending index order.
pub fn brute_within(points: &[Vec3], q: Vec3, radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    points
        .iter()
        .enumerate()
        .filter(|(_, &p)| (p - q).norm_sq() <= r2)
        .map(|(i, _)| i)
        .collect()
}

/// Brute-force k nearest neighbours ordered by (distance, index).
pub fn brute_k_nearest(points: &[Vec3], q: Vec3, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, &p)| ((p - q).norm_sq(), i))
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    order.truncate(k);
    order.into_iter().map(|(_, i)| i).collect()
}

/// Uniform grid over the point set's bounding box for exact NN queries.
pub struct GridIndex {
    points: Vec<Vec3>,
    origin: Vec3,
    cell: f64,
    dims: [i64; 3],
    cells: Vec<Vec<u32>>,
}

impl GridIndex {
    /// Builds an index targeting roughly one point per occupied cell.
    pub fn build(points: &[Vec3]) -> GridIndex {
        assert!(!points.is_empty(), "grid index needs at least one point");
        let mut lo = points[0];
        let mut hi = points[0];
        for &p in &points[1..] {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        let ext = hi - lo;
        let n = points.len() as f64;
        // Cell edge from the average per-point volume; degenerate axes fall
        // back to the largest extent so planar clouds still index well.
        let max_ext = ext.x.max(ext.y).max(ext.z);
        let mut cell = if max_ext <= 0.0 {
            1.0
        } else {
            let vx = ext.x.max(max_ext * 1e-3);
            let vy = ext.y.max(max_ext * 1e-3);
            let vz = ext.z.max(max_ext * 1e-3);
            ((vx * vy * vz) / n).cbrt().max(max_ext * 1e-6)
        };
        // Cap the raw cell count; sparse clouds would otherwise explode.
        let mut dims = Self::dims_for(ext, cell);
        while (dims[0] * dims[1] * dims[2]) as f64 > (8.0 * n).max(1024.0) {
            cell *= 1.3;
            dims = Self::dims_for(ext, cell);
        }
        let mut cells = vec![Vec::new(); (dims[0] * dims[1] * dims[2]) as usize];
        let idx = |c: [i64; 3]| (c[0] + dims[0] * (c[1] + dims[1] * c[2])) as usize;
        for (i, &p) in points.iter().enumerate() {
            let c = Self::cell_of(p, lo, cell, dims);
            cells[idx(c)].push(i as u32);
        }
        GridIndex { points: points.to_vec(), origin: lo, cell, dims, cells }
    }

    fn dims_for(ext: Vec3, cell: f64) -> [i64; 3] {
        [
            ((ext.x / cell).floor() as i64 + 1).max(1),
            ((ext.y / cell).floor() as i64 + 1).max(1),
            ((ext.z / cell).floor() as i64 + 1).max(1),
        ]
    }

    fn cell_of(p: Vec3, origin: Vec3, cell: f64, dims: [i64; 3]) -> [i64; 3] {
        let c = [
            ((p.x - origin.x) / cell).floor() as i64,
            ((p.y - origin.y) / cell).floor() as i64,
            ((p.z - origin.z) / cell).floor() as i64,
        ];
        // Clamp stored points only: float roundoff can push the max corner out.
        [
            c[0].clamp(0, dims[0] - 1),
            c[1].clamp(0, dims[1] - 1),
            c[2].clamp(0, dims[2] - 1),
        ]
    }

    fn cell_index(&self, c: [i64; 3]) -> usize {
        (c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])) as usize
    }

    /// Cell coordinates of a query, unclamped so out-of-box queries keep a
    /// valid ring lower bound.
    fn query_cell(&self, q: Vec3) -> [i64; 3] {
        [
            ((q.x - self.origin.x) / self.cell).floor() as i64,
            ((q.y - self.origin.y) / self.cell).floor() as i64,
            ((q.z - self.origin.z) / self.cell).floor() as i64,
        ]
    }

    /// Exact nearest neighbour: (index, distance). Ties → lowest index.
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        let home = self.query_cell(q);
        let mut best_d2 = f64::INFINITY;
        let mut best_i = usize::MAX;
        // Largest ring that can still contain grid cells from `home`.
        let max_ring = (0..3)
            .map(|a| home[a].max(self.dims[a] - 1 - home[a]).max(0))
            .max()
            .unwrap();
        for ring in 0..=max_ring {
            // Any cell in ring r is at least (r−1) whole cells away.
            let bound = (ring - 1).max(0) as f64 * self.cell;
            if best_i != usize::MAX && bound * bound > best_d2 {
                break;
            }
            self.for_ring(home, ring, |cell_idx| {
                for &pi in &self.cells[cell_idx] {
                    let pi = pi as usize;
                    let d2 = (self.points[pi] - q).norm_sq();
                    if d2 < best_d2 || (d2 == best_d2 && pi < best_i) {
                        best_d2 = d2;
                        best_i = pi;
                    }
                }
            });
        }
        debug_assert!(best_i != usize::MAX);
        (best_i, best_d2.sqrt())
    }

    /// Exact k nearest neighbours ordered by (distance, index).
    pub fn k_nearest(&self, q: Vec3, k: usize) -> Vec<usize> {
        if k == 0 {
            return Vec::new();
        }
        let home = self.query_cell(q);
        let mut found: Vec<(f64, usize)> = Vec::new();
        let max_ring = (0..3)
            .map(|a| home[a].max(self.dims[a] - 1 - home[a]).max(0))
            .max()
            .unwrap();
        for ring in 0..=max_ring {
            let bound = (ring - 1).max(0) as f64 * self.cell;
            if found.len() >= k {
                let kth = found[k - 1].0;
                if bound * bound > kth {
                    break;
                }
            }
            let mut added = false;
            self.for_ring(home, ring, |cell_idx| {
                for &pi in &self.cells[cell_idx] {
                    let pi = pi as usize;
                    let d2 = (self.points[pi] - q).norm_sq();
                    found.push((d2, pi));
                    added = true;
                }
            });
            if added {
                found.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
                found.truncate(k);
            }
        }
        found.truncate(k);
        found.into_iter().map(|(_, i)| i).collect()
    }

    /// All point indices within `radius` of `q` (inclusive), ascending.
    pub fn within(&self, q: Vec3, radius: f64) -> Vec<usize> {
        let lo = self.query_cell(q - Vec3::new(radius, radius, radius));
        let hi = self.query_cell(q + Vec3::new(radius, radius, radius));
        let r2 = radius * radius;
        let mut out = Vec::new();
        for cz in lo[2].max(0)..=hi[2].min(self.dims[2] - 1) {
            for cy in lo[1].max(0)..=hi[1].min(self.dims[1] - 1) {
                for cx in lo[0].max(0)..=hi[0].min(self.dims[0] - 1) {
                    for &pi in &self.cells[self.cell_index([cx, cy, cz])] {
                        let pi = pi as usize;
                        if (self.points[pi] - q).norm_sq() <= r2 {
                            out.push(pi);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Visits every existing cell at Chebyshev ring `r` around `home`.
    fn for_ring(&self, home: [i64; 3], r: i64, mut f: impl FnMut(usize)) {
        let in_grid = |c: [i64; 3]| {
            (0..3).all(|a| c[a] >= 0 && c[a] < self.dims[a])
        };
        if r == 0 {
            if in_grid(home) {
                f(self.cell_index(home));
            }
            return;
        }
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                        continue;
                    }
                    let c = [home[0] + dx, home[1] + dy, home[2] + dz];
                    if in_grid(c) {
                        f(self.cell_index(c));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_points(rng: &mut StdRng, n: usize, scale: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect()
    }

    #[test]
    fn grid_nearest_matches_brute_force() {
        let mut rng = StdRng::seed_from_u64(42);
        for trial in 0..40 {
            let n = rng.random_range(1..800);
            let pts = random_points(&mut rng, n, 10.0);
            let grid = GridIndex::build(&pts);
            for _ in 0..50 {
                let q = Vec3::new(
                    rng.random_range(-15.0..15.0),
                    rng.random_range(-15.0..15.0),
                    rng.random_range(-15.0..15.0),
                );
                let (bi, bd) = brute_nearest(&pts, q).unwrap();
                let (gi, gd) = grid.nearest(q);
                assert_eq!(bi, gi, "trial {trial}");
                assert!((bd - gd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_k_nearest_matches_brute_force() {
        let mut rng = StdRng::seed_from_u64(43);
        for _ in 0..25 {
            let n = rng.random_range(5..500);
            let pts = random_points(&mut rng, n, 5.0);
            let grid = GridIndex::build(&pts);
            for _ in 0..20 {
                let q = Vec3::new(
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-6.0..6.0),
                );
                let k = rng.random_range(1..=n.min(12));
                assert_eq!(brute_k_nearest(&pts, q, k), grid.k_nearest(q, k));
            }
        }
    }

    #[test]
    fn grid_within_matches_brute_force() {
        let mut rng = StdRng::seed_from_u64(44);
        for _ in 0..25 {
            let n = rng.random_range(2..400);
            let pts = random_points(&mut rng, n, 4.0);
            let grid = GridIndex::build(&pts);
            for _ in 0..20 {
                let q = pts[rng.random_range(0..n)];
                let r = rng.random_range(0.1..3.0);
                let brute: Vec<usize> = pts
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| (**p - q).norm_sq() <= r * r)
                    .map(|(i, _)| i)
                    .collect();
                assert_eq!(brute, grid.within(q, r));
            }
        }
    }

    #[test]
    fn planar_cloud_indexes_correctly() {
        let mut rng = StdRng::seed_from_u64(45);
        let pts: Vec<Vec3> = (0..300)
            .map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 1.0))
            .collect();
        let grid = GridIndex::build(&pts);
        for _ in 0..50 {
            let q = Vec3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), 0.0);
            let (bi, _) = brute_nearest(&pts, q).unwrap();
            assert_eq!(grid.nearest(q).0, bi);
        }
    }

    #[test]
    fn identical_points_tie_break_to_lowest_index() {
        let pts = vec![Vec3::new(1.0, 1.0, 1.0); 5];
        let grid = GridIndex::build(&pts);
        assert_eq!(grid.nearest(Vec3::ZERO).0, 0);
        assert_eq!(brute_nearest(&pts, Vec3::ZERO).unwrap().0, 0);
        assert_eq!(grid.k_nearest(Vec3::ZERO, 3), vec![0, 1, 2]);
    }

    #[test]
    fn single_point_cloud_works() {
        let pts = vec![Vec3::new(2.0, 0.0, -1.0)];
        let grid = GridIndex::build(&pts);
        let (i, d) = grid.nearest(Vec3::ZERO);
        assert_eq!(i, 0);
        assert!((d - pts[0].norm()).abs() < 1e-12);
    }
}
