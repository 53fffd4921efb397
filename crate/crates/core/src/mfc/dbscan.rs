//! Density-based clustering on 3D Euclidean distance.

use std::collections::VecDeque;

use crate::geometry::Point;
use crate::spatial::VoxelGrid;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    /// Cluster id per input point; `None` is noise.
    pub labels: Vec<Option<usize>>,
    /// Whether each point is a core point.
    pub core: Vec<bool>,
    pub num_clusters: usize,
}

impl Clustering {
    /// Point indices grouped by cluster id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                out[*c].push(i);
            }
        }
        out
    }
}

/// Classic DBSCAN. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Cluster ids follow the index of each
/// cluster's first core point; border points join the first cluster that
/// reaches them.
pub fn cluster_dbscan(points: &[Point], eps: f64, min_pts: usize) -> Clustering {
    assert!(eps > 0.0 && min_pts >= 1, "eps must be positive and min_pts >= 1");
    let n = points.len();
    let grid = VoxelGrid::new(points, eps);
    let core: Vec<bool> = points.iter().map(|p| grid.count_within(p, eps) >= min_pts).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut num_clusters = 0;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        let id = num_clusters;
        num_clusters += 1;
        labels[seed] = Some(id);
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            grid.for_each_within(&points[i], eps, |j| {
                if labels[j].is_none() {
                    labels[j] = Some(id);
                    if core[j] {
                        queue.push_back(j);
                    }
                }
            });
        }
    }
    Clustering {
        labels,
        core,
        num_clusters,
    }
}
