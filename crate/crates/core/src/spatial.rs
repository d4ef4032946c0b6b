//! Uniform bucket grid over a point cloud for radius and nearest-neighbour queries.

use std::collections::HashMap;

pub(crate) struct PointGrid<'a> {
    points: &'a [f64],
    d: usize,
    cell: f64,
    origin: Vec<f64>,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

impl<'a> PointGrid<'a> {
    /// Buckets the row-major `points` (dimension `d`) into cubes of side `cell`.
    pub(crate) fn new(points: &'a [f64], d: usize, cell: f64) -> Self {
        let n = points.len() / d;
        let mut origin = vec![f64::INFINITY; d];
        for i in 0..n {
            for k in 0..d {
                origin[k] = origin[k].min(points[i * d + k]);
            }
        }
        if n == 0 {
            origin = vec![0.0; d];
        }
        let cell = if cell.is_finite() && cell > 0.0 { cell } else { 1.0 };
        let mut grid = Self {
            points,
            d,
            cell,
            origin,
            buckets: HashMap::new(),
        };
        for i in 0..n {
            let key = grid.key(&points[i * d..(i + 1) * d]);
            grid.buckets.entry(key).or_default().push(i);
        }
        grid
    }

    fn key(&self, x: &[f64]) -> Vec<i64> {
        x.iter()
            .zip(&self.origin)
            .map(|(v, o)| ((v - o) / self.cell).floor() as i64)
            .collect()
    }

    /// Visits every point index whose bucket lies within `reach` cells of `x`'s bucket.
    fn visit_ring(&self, x: &[f64], reach: i64, mut f: impl FnMut(usize)) {
        let center = self.key(x);
        let mut offset = vec![-reach; self.d];
        let mut key = center.clone();
        loop {
            for k in 0..self.d {
                key[k] = center[k] + offset[k];
            }
            if let Some(ids) = self.buckets.get(&key) {
                ids.iter().for_each(|&i| f(i));
            }
            let mut k = 0;
            loop {
                if k == self.d {
                    return;
                }
                offset[k] += 1;
                if offset[k] <= reach {
                    break;
                }
                offset[k] = -reach;
                k += 1;
            }
        }
    }

    /// Indices of candidate points within Euclidean distance `radius` of `x`
    /// (superset; callers filter by their own metric).
    pub(crate) fn candidates(&self, x: &[f64], radius: f64, mut f: impl FnMut(usize)) {
        let reach = (radius / self.cell).ceil().max(1.0) as i64;
        self.visit_ring(x, reach, &mut f);
    }

    /// Euclidean distance from `x` to the nearest point, optionally skipping one index.
    pub(crate) fn nearest_distance(&self, x: &[f64], skip: Option<usize>) -> f64 {
        let n = self.points.len() / self.d;
        if n == 0 || (n == 1 && skip.is_some()) {
            return f64::INFINITY;
        }
        let mut reach = 1_i64;
        loop {
            let mut best = f64::INFINITY;
            self.visit_ring(x, reach, |i| {
                if Some(i) == skip {
                    return;
                }
                let p = &self.points[i * self.d..(i + 1) * self.d];
                let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                best = best.min(d2);
            });
            let best = best.sqrt();
            // Every point within (reach) cells of distance is covered by the ring.
            if best <= (reach as f64) * self.cell {
                return best;
            }
            reach *= 2;
            // Once the ring has more cells than there are points, scanning wins.
            let ring = (2 * reach + 1) as f64;
            if ring.powi(self.d as i32) > 4.0 * n as f64 {
                return self.brute_nearest(x, skip);
            }
        }
    }

    fn brute_nearest(&self, x: &[f64], skip: Option<usize>) -> f64 {
        let n = self.points.len() / self.d;
        (0..n)
            .filter(|&i| Some(i) != skip)
            .map(|i| {
                let p = &self.points[i * self.d..(i + 1) * self.d];
                p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }
}

/// A cell side giving on the order of one point per bucket for `n` points in `[0,1]^d`.
pub(crate) fn default_cell(n: usize, d: usize) -> f64 {
    (1.0 / n.max(1) as f64).powf(1.0 / d as f64)
}
