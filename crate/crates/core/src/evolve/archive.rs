use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::FitnessReport;

/// Share of occupied cells forming the elite pool in parent selection.
pub const ELITE_POOL_FRACTION: f64 = 0.2;

/// `(hl_mean, cov_mean)` clamped to the unit square.
pub fn behavior_coords(report: &FitnessReport) -> (f64, f64) {
    clamp_coords((report.hl_mean, report.cov_mean))
}

pub fn clamp_coords((x, y): (f64, f64)) -> (f64, f64) {
    let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (c(x), c(y))
}

/// `floor(coord * resolution)`, capped at `resolution - 1`.
pub fn bin_index(coord: f64, resolution: usize) -> usize {
    let c = if coord.is_nan() { 0.0 } else { coord.clamp(0.0, 1.0) };
    ((c * resolution as f64).floor() as usize).min(resolution - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveCell<T> {
    pub bin: (usize, usize),
    pub coords: (f64, f64),
    pub fitness: f64,
    pub payload: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InsertOutcome {
    Inserted {
        bin: (usize, usize),
        /// Fitness of the incumbent that was replaced.
        replaced: Option<f64>,
        /// Bin emptied to respect the capacity cap.
        evicted: Option<(usize, usize)>,
    },
    Rejected { incumbent: f64 },
}

impl InsertOutcome {
    pub fn inserted(&self) -> bool {
        matches!(self, InsertOutcome::Inserted { .. })
    }
}

/// MAP-Elites grid over `[0, 1]^2` keeping the fittest payload per bin.
/// With a capacity, the lowest-fitness cell is evicted when an insert
/// into an empty bin would exceed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapElitesArchive<T> {
    resolution: usize,
    capacity: Option<usize>,
    cells: Vec<Option<ArchiveCell<T>>>,
}

impl<T: Clone> MapElitesArchive<T> {
    pub fn new(resolution: usize, capacity: Option<usize>) -> Self {
        assert!(resolution >= 1, "grid resolution must be >= 1");
        assert!(capacity != Some(0), "capacity must be >= 1");
        MapElitesArchive {
            resolution,
            capacity,
            cells: vec![None; resolution * resolution],
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn bin_of(&self, coords: (f64, f64)) -> (usize, usize) {
        (bin_index(coords.0, self.resolution), bin_index(coords.1, self.resolution))
    }

    pub fn get(&self, bin: (usize, usize)) -> Option<&ArchiveCell<T>> {
        self.cells.get(bin.0 * self.resolution + bin.1).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.cells.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Occupied cells in bin order.
    pub fn cells(&self) -> impl Iterator<Item = &ArchiveCell<T>> {
        self.cells.iter().flatten()
    }

    /// Occupied cells by decreasing fitness; ties in bin order.
    pub fn ranked(&self) -> Vec<&ArchiveCell<T>> {
        let mut v: Vec<&ArchiveCell<T>> = self.cells().collect();
        v.sort_by(|a, b| b.fitness.total_cmp(&a.fitness).then(a.bin.cmp(&b.bin)));
        v
    }

    pub fn best(&self) -> Option<&ArchiveCell<T>> {
        self.ranked().into_iter().next()
    }

    /// Empty bins accept anything; occupied bins only a strictly greater
    /// fitness. Non-finite fitness is always rejected.
    pub fn insert(&mut self, payload: T, coords: (f64, f64), fitness: f64) -> InsertOutcome {
        let coords = clamp_coords(coords);
        let bin = self.bin_of(coords);
        let slot = bin.0 * self.resolution + bin.1;
        if !fitness.is_finite() {
            return InsertOutcome::Rejected {
                incumbent: self.cells[slot].as_ref().map(|c| c.fitness).unwrap_or(f64::NAN),
            };
        }
        if let Some(inc) = &self.cells[slot] {
            if fitness > inc.fitness {
                let replaced = inc.fitness;
                self.cells[slot] = Some(ArchiveCell { bin, coords, fitness, payload });
                return InsertOutcome::Inserted { bin, replaced: Some(replaced), evicted: None };
            }
            return InsertOutcome::Rejected { incumbent: inc.fitness };
        }
        let mut evicted = None;
        if let Some(cap) = self.capacity {
            if self.len() >= cap {
                let worst = self
                    .cells()
                    .min_by(|a, b| a.fitness.total_cmp(&b.fitness).then(a.bin.cmp(&b.bin)))
                    .map(|c| (c.bin, c.fitness))
                    .expect("full archive has cells");
                if fitness <= worst.1 {
                    return InsertOutcome::Rejected { incumbent: worst.1 };
                }
                self.cells[worst.0 .0 * self.resolution + worst.0 .1] = None;
                evicted = Some(worst.0);
            }
        }
        self.cells[slot] = Some(ArchiveCell { bin, coords, fitness, payload });
        InsertOutcome::Inserted { bin, replaced: None, evicted }
    }
}

/// With probability `elite_ratio` draws uniformly from the top
/// `ceil(pool_fraction * occupied)` cells, otherwise from all cells.
pub fn select_parent_with<'a, T: Clone, R: Rng>(
    archive: &'a MapElitesArchive<T>,
    elite_ratio: f64,
    pool_fraction: f64,
    rng: &mut R,
) -> Option<&'a ArchiveCell<T>> {
    let ranked = archive.ranked();
    if ranked.is_empty() {
        return None;
    }
    let pool = ((pool_fraction * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len());
    let elite = rng.random::<f64>() < elite_ratio;
    let span = if elite { pool } else { ranked.len() };
    Some(ranked[rng.random_range(0..span)])
}

pub fn select_parent<'a, T: Clone, R: Rng>(
    archive: &'a MapElitesArchive<T>,
    elite_ratio: f64,
    rng: &mut R,
) -> Option<&'a ArchiveCell<T>> {
    select_parent_with(archive, elite_ratio, ELITE_POOL_FRACTION, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Island<T> {
    pub id: usize,
    pub seed: u64,
    pub archive: MapElitesArchive<T>,
}

/// Ring migration: island `k` offers its best `ceil(rate * occupied)`
/// cells to island `k + 1`. Offers are taken from a snapshot before any
/// insert and pass through the destination's normal insert rule.
/// Returns the number of accepted offers.
pub fn migrate<T: Clone>(islands: &mut [Island<T>], rate: f64) -> usize {
    let n = islands.len();
    if n < 2 || rate <= 0.0 {
        return 0;
    }
    let offers: Vec<Vec<ArchiveCell<T>>> = islands
        .iter()
        .map(|isl| {
            let ranked = isl.archive.ranked();
            let k = ((rate * ranked.len() as f64).ceil() as usize).min(ranked.len());
            ranked.into_iter().take(k).cloned().collect()
        })
        .collect();
    let mut accepted = 0;
    for (k, cells) in offers.into_iter().enumerate() {
        let dest = &mut islands[(k + 1) % n].archive;
        for c in cells {
            if dest.insert(c.payload, c.coords, c.fitness).inserted() {
                accepted += 1;
            }
        }
    }
    accepted
}
