//! Uniform grid bucketing of sites for box and neighbourhood queries.

use std::collections::BTreeMap;

use crate::dataset::PointSet;

/// Buckets point indices by `floor(x_j / cell_j)`.
///
/// Queries visit buckets in lexicographic cell order and indices in
/// ascending order within a bucket, so iteration order is reproducible.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell: Vec<f64>,
    buckets: BTreeMap<Vec<i64>, Vec<usize>>,
}

impl GridIndex {
    pub fn new(points: &PointSet, cell: Vec<f64>) -> Self {
        assert_eq!(points.d(), cell.len(), "cell sizes must match dimension");
        assert!(
            cell.iter().all(|&c| c > 0.0 && c.is_finite()),
            "cell sizes must be positive"
        );
        let mut buckets: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
        for (i, x) in points.iter().enumerate() {
            buckets.entry(cell_of(x, &cell)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    pub fn cell(&self) -> &[f64] {
        &self.cell
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&Vec<i64>, &Vec<usize>)> {
        self.buckets.iter()
    }

    pub fn bucket(&self, key: &[i64]) -> Option<&Vec<usize>> {
        self.buckets.get(key)
    }

    /// Indices of points that may lie in `prod_j [c_j - r_j, c_j + r_j]`
    /// (a superset; callers apply the exact test).
    pub fn candidates(&self, center: &[f64], radius: &[f64]) -> Vec<usize> {
        let lo: Vec<i64> = center
            .iter()
            .zip(radius)
            .zip(&self.cell)
            .map(|((c, r), s)| ((c - r) / s).floor() as i64)
            .collect();
        let hi: Vec<i64> = center
            .iter()
            .zip(radius)
            .zip(&self.cell)
            .map(|((c, r), s)| ((c + r) / s).floor() as i64)
            .collect();
        let span: f64 = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (b - a + 1) as f64)
            .product();
        let mut out = Vec::new();
        if span > self.buckets.len() as f64 {
            for (key, idx) in &self.buckets {
                if key
                    .iter()
                    .zip(&lo)
                    .zip(&hi)
                    .all(|((k, a), b)| k >= a && k <= b)
                {
                    out.extend_from_slice(idx);
                }
            }
        } else {
            let mut key = lo.clone();
            loop {
                if let Some(idx) = self.buckets.get(&key) {
                    out.extend_from_slice(idx);
                }
                // odometer increment over the cell range
                let mut j = key.len();
                loop {
                    if j == 0 {
                        return finish(out);
                    }
                    j -= 1;
                    if key[j] < hi[j] {
                        key[j] += 1;
                        break;
                    }
                    key[j] = lo[j];
                }
            }
        }
        finish(out)
    }
}

fn finish(mut out: Vec<usize>) -> Vec<usize> {
    out.sort_unstable();
    out
}

pub fn cell_of(x: &[f64], cell: &[f64]) -> Vec<i64> {
    x.iter()
        .zip(cell)
        .map(|(v, s)| (v / s).floor() as i64)
        .collect()
}
