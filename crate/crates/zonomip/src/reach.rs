//! Region reachability tables for pruning the mixed-integer search.
//!
//! A region is considered reachable from another region (or from the current
//! position) in `k_n` time steps when the Euclidean minimum distance between
//! them is at most `d_max * k_n`, where `d_max` bounds the distance traveled
//! in one step. Pairwise region distances are computed once offline with the
//! interior-point solver and thresholded per `k_n`; the point table is
//! rebuilt each control step, restricted to regions that were recently
//! reachable plus their one-step neighbors.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::map_ingest::Map;
use crate::set_core::{self, ConstrainedZonotope, FactorDomain};

#[derive(Debug, Error)]
pub enum ReachError {
    #[error("d_max must be positive")]
    BadDmax,
    #[error("distance solve failed for pair ({0}, {1}): {2}")]
    PairSolve(usize, usize, String),
    #[error("point distance solve failed for region {0}: {1}")]
    PointSolve(usize, String),
    #[error("point table has not been built")]
    NoPointTable,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache format error: {0}")]
    Cache(#[from] serde_json::Error),
    #[error("cache mismatch: {0}")]
    CacheMismatch(String),
}

/// Slack added to distance thresholds to absorb interior-point solve error;
/// regions closer than this are treated as touching. Distances are square
/// roots of QP objectives, so touching sets resolve to ~sqrt(qp tol) = 1e-6
/// rather than zero; the slack sits well above that. Over-inclusion is safe:
/// it can only add candidate regions, never prune reachable ones.
pub const DIST_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct ReachConfig {
    /// Maximum distance traveled in a single time step.
    pub d_max: f64,
    pub horizon: usize,
}

/// Precomputed reachability data: symmetric pairwise region distances and,
/// once built for a query point, per-region point distances.
#[derive(Debug, Clone)]
pub struct ReachTables {
    pub d_max: f64,
    pub horizon: usize,
    pub map_hash: String,
    /// n_F x n_F minimum distances between regions.
    pub region_dist: DMatrix<f64>,
    /// Minimum distance from the current point to each region; infinity for
    /// regions skipped by the restricted refresh.
    pub point_dist: Option<DVector<f64>>,
}

/// Stable identifier of a map's content, used to key the table cache.
pub fn map_hash(map: &Map) -> String {
    let mut h = Sha256::new();
    h.update(map.to_json_string().as_bytes());
    format!("{:x}", h.finalize())
}

/// The region as a constrained zonotope over its own factors, for distance
/// programs.
fn region_conzono(map: &Map, r: usize) -> ConstrainedZonotope {
    match map {
        Map::Vrep(m) => {
            let idx = m.region_vertices(r);
            let nv = idx.len();
            let g = DMatrix::from_fn(m.dim(), nv, |i, jj| m.vertices[(i, idx[jj])]);
            ConstrainedZonotope::new(
                g,
                DVector::zeros(m.dim()),
                DMatrix::from_element(1, nv, 1.0),
                DVector::from_element(1, 1.0),
                FactorDomain::Unit,
            )
            .expect("region dimensions")
        }
        Map::Ogm(m) => {
            let n = m.dim();
            let c = m.region_center(r);
            let g = DMatrix::from_fn(n, n, |i, j| if i == j { m.cell_size[i] } else { 0.0 });
            let center = DVector::from_fn(n, |i, _| c[i] - 0.5 * m.cell_size[i]);
            ConstrainedZonotope::new(g, center, DMatrix::zeros(0, n), DVector::zeros(0), FactorDomain::Unit)
                .expect("region dimensions")
        }
    }
}

/// A point as a zero-generator constrained zonotope.
fn point_conzono(p: &DVector<f64>) -> ConstrainedZonotope {
    ConstrainedZonotope::new(
        DMatrix::zeros(p.len(), 0),
        p.clone(),
        DMatrix::zeros(0, 0),
        DVector::zeros(0),
        FactorDomain::Unit,
    )
    .expect("point dimensions")
}

/// Minimum Euclidean distance between two regions of the map.
pub fn region_distance(map: &Map, i: usize, j: usize) -> Result<f64, ReachError> {
    if i == j {
        return Ok(0.0);
    }
    let a = region_conzono(map, i);
    let b = region_conzono(map, j);
    set_core::min_distance(&a, &b)
        .map(|(d, _, _)| d)
        .map_err(|e| ReachError::PairSolve(i, j, e.to_string()))
}

/// Minimum Euclidean distance from a point to a region.
pub fn point_distance(map: &Map, p: &DVector<f64>, r: usize) -> Result<f64, ReachError> {
    let a = point_conzono(p);
    let b = region_conzono(map, r);
    set_core::min_distance(&a, &b)
        .map(|(d, _, _)| d)
        .map_err(|e| ReachError::PointSolve(r, e.to_string()))
}

/// Regions within `k_n` steps of a point, by direct distance solves.
pub fn reachable_from_point(
    map: &Map,
    p: &DVector<f64>,
    k_n: usize,
    d_max: f64,
) -> Result<Vec<usize>, ReachError> {
    if d_max <= 0.0 {
        return Err(ReachError::BadDmax);
    }
    let mut out = Vec::new();
    for r in 0..map.n_regions() {
        if point_distance(map, p, r)? <= d_max * k_n as f64 + DIST_TOL {
            out.push(r);
        }
    }
    Ok(out)
}

/// Regions within `k_n` steps of region `r`, by direct distance solves.
pub fn reachable_from_region(
    map: &Map,
    r: usize,
    k_n: usize,
    d_max: f64,
) -> Result<Vec<usize>, ReachError> {
    if d_max <= 0.0 {
        return Err(ReachError::BadDmax);
    }
    let mut out = Vec::new();
    for i in 0..map.n_regions() {
        if region_distance(map, r, i)? <= d_max * k_n as f64 + DIST_TOL {
            out.push(i);
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    map_hash: String,
    d_max: f64,
    horizon: usize,
    region_dist: Vec<Vec<f64>>,
}

impl ReachTables {
    /// Solve all pairwise region distance programs (in parallel) and store
    /// the distance matrix; thresholding per `k_n` happens at query time.
    pub fn build(map: &Map, cfg: &ReachConfig) -> Result<ReachTables, ReachError> {
        if cfg.d_max <= 0.0 {
            return Err(ReachError::BadDmax);
        }
        let nf = map.n_regions();
        let pairs: Vec<(usize, usize)> =
            (0..nf).flat_map(|i| ((i + 1)..nf).map(move |j| (i, j))).collect();
        let dists: Vec<Result<f64, ReachError>> =
            pairs.par_iter().map(|&(i, j)| region_distance(map, i, j)).collect();
        let mut m = DMatrix::zeros(nf, nf);
        for (&(i, j), d) in pairs.iter().zip(dists) {
            let d = d?;
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
        Ok(ReachTables {
            d_max: cfg.d_max,
            horizon: cfg.horizon,
            map_hash: map_hash(map),
            region_dist: m,
            point_dist: None,
        })
    }

    pub fn n_regions(&self) -> usize {
        self.region_dist.nrows()
    }

    /// R_r(k_n, r): sorted regions reachable from region r in k_n steps.
    pub fn region_reachable(&self, k_n: usize, r: usize) -> Vec<usize> {
        let limit = self.d_max * k_n as f64 + DIST_TOL;
        (0..self.n_regions()).filter(|&i| self.region_dist[(r, i)] <= limit).collect()
    }

    /// Membership mask form of [`ReachTables::region_reachable`].
    pub fn region_reachable_mask(&self, k_n: usize, r: usize) -> Vec<bool> {
        let limit = self.d_max * k_n as f64 + DIST_TOL;
        (0..self.n_regions()).map(|i| self.region_dist[(r, i)] <= limit).collect()
    }

    /// R_p(k_n): sorted regions reachable from the current point.
    pub fn point_reachable(&self, k_n: usize) -> Result<Vec<usize>, ReachError> {
        let pd = self.point_dist.as_ref().ok_or(ReachError::NoPointTable)?;
        let limit = self.d_max * k_n as f64 + DIST_TOL;
        Ok((0..self.n_regions()).filter(|&i| pd[i] <= limit).collect())
    }

    /// Build the point table for a new query point, solving a distance
    /// program for every region.
    pub fn build_point_table(&mut self, map: &Map, p: &DVector<f64>) -> Result<(), ReachError> {
        let nf = self.n_regions();
        let dists: Vec<Result<f64, ReachError>> =
            (0..nf).into_par_iter().map(|r| point_distance(map, p, r)).collect();
        let mut pd = DVector::zeros(nf);
        for (r, d) in dists.into_iter().enumerate() {
            pd[r] = d?;
        }
        self.point_dist = Some(pd);
        Ok(())
    }

    /// Refresh the point table after the point moved. Distance programs are
    /// re-solved only for regions that were horizon-reachable at the previous
    /// step and regions one step reachable from those; everything else is
    /// marked unreachable. With no previous information this is a full build.
    pub fn refresh_point_table(
        &mut self,
        map: &Map,
        p: &DVector<f64>,
        previous_horizon_regions: Option<&[usize]>,
    ) -> Result<(), ReachError> {
        let prev = match previous_horizon_regions {
            None => return self.build_point_table(map, p),
            Some(prev) => prev,
        };
        let nf = self.n_regions();
        let mut candidate = vec![false; nf];
        for &r in prev {
            candidate[r] = true;
            for i in self.region_reachable(1, r) {
                candidate[i] = true;
            }
        }
        let dists: Vec<Result<f64, ReachError>> = (0..nf)
            .into_par_iter()
            .map(|r| {
                if candidate[r] {
                    point_distance(map, p, r)
                } else {
                    Ok(f64::INFINITY)
                }
            })
            .collect();
        let mut pd = DVector::zeros(nf);
        for (r, d) in dists.into_iter().enumerate() {
            pd[r] = d?;
        }
        self.point_dist = Some(pd);
        Ok(())
    }

    /// Write the region table to a cache file (point tables are transient).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ReachError> {
        let file = CacheFile {
            map_hash: self.map_hash.clone(),
            d_max: self.d_max,
            horizon: self.horizon,
            region_dist: (0..self.n_regions())
                .map(|i| self.region_dist.row(i).iter().copied().collect())
                .collect(),
        };
        let json = serde_json::to_string(&file)?;
        let dir = path.as_ref().parent().unwrap_or_else(|| Path::new("."));
        let tmp = tempfile::NamedTempFile::new_in(dir)?;
        std::fs::write(tmp.path(), json)?;
        tmp.persist(path).map_err(|e| ReachError::Io(e.error))?;
        Ok(())
    }

    /// Load a cached table, verifying that it was produced for this map and
    /// step distance.
    pub fn load(path: impl AsRef<Path>, map: &Map, cfg: &ReachConfig) -> Result<ReachTables, ReachError> {
        let file: CacheFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let hash = map_hash(map);
        if file.map_hash != hash {
            return Err(ReachError::CacheMismatch("map hash differs".into()));
        }
        if file.d_max != cfg.d_max {
            return Err(ReachError::CacheMismatch(format!(
                "d_max differs: cache {} vs requested {}",
                file.d_max, cfg.d_max
            )));
        }
        let nf = file.region_dist.len();
        let m = DMatrix::from_fn(nf, nf, |i, j| file.region_dist[i][j]);
        Ok(ReachTables {
            d_max: cfg.d_max,
            horizon: cfg.horizon,
            map_hash: hash,
            region_dist: m,
            point_dist: None,
        })
    }
}
