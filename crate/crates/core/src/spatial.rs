//! Uniform voxel hash for fixed-radius neighbor queries.

use std::collections::HashMap;

use crate::geometry::Point;

type Key = (i64, i64, i64);

pub struct VoxelGrid<'a> {
    points: &'a [Point],
    cell: f64,
    cells: HashMap<Key, Vec<u32>>,
}

impl<'a> VoxelGrid<'a> {
    /// `cell` should be at least the query radius so that a query only
    /// touches the 27 surrounding cells.
    pub fn new(points: &'a [Point], cell: f64) -> Self {
        assert!(cell > 0.0, "voxel size must be positive");
        let mut cells: HashMap<Key, Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(key(p, cell)).or_default().push(i as u32);
        }
        Self { points, cell, cells }
    }

    pub fn points(&self) -> &'a [Point] {
        self.points
    }

    /// Calls `f` with the index of every point within `radius` of `q`
    /// (inclusive). `radius` must not exceed the cell size.
    pub fn for_each_within(&self, q: &Point, radius: f64, mut f: impl FnMut(usize)) {
        debug_assert!(radius <= self.cell * (1.0 + 1e-12));
        let r2 = radius * radius;
        let (cx, cy, cz) = key(q, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in bucket {
                            if self.points[i as usize].distance_sq(q) <= r2 {
                                f(i as usize);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn any_within(&self, q: &Point, radius: f64) -> bool {
        let r2 = radius * radius;
        let (cx, cy, cz) = key(q, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        if bucket.iter().any(|&i| self.points[i as usize].distance_sq(q) <= r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    pub fn count_within(&self, q: &Point, radius: f64) -> usize {
        let mut n = 0;
        self.for_each_within(q, radius, |_| n += 1);
        n
    }
}

fn key(p: &Point, cell: f64) -> Key {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}
