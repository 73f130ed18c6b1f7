//! Loading obstacle-free-space maps and converting them to solver encodings.
//!
//! Two map formats are supported, both JSON:
//!
//! * Polytopic (`"type": "vrep"`): a shared vertex list plus an incidence
//!   matrix assigning vertices to convex regions, with optional per-region
//!   costs. Regions must be convex; decomposition of non-convex free space
//!   into convex pieces is a preprocessing concern outside this crate.
//! * Occupancy grid (`"type": "ogm"`): a regular lattice of congruent
//!   axis-aligned cells. Each entry of `occupancy` is either `null` (obstacle,
//!   excluded from the free space) or an occupancy probability in [0,1] for a
//!   free cell. Cells are stored x-fastest: index `ix + nx*(iy + ny*iz)`.
//!
//! A loaded map can be converted to a hybrid zonotope of the free space, to
//! per-region half-space representations, and to a Big-M disjunctive
//! encoding over the same binary choice variables.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::set_core::{FactorDomain, HybridZonotope};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("region {0} is empty (no vertices assigned)")]
    EmptyRegion(usize),
    #[error("vertex {0} belongs to no region")]
    OrphanVertex(usize),
    #[error("map has no free cells")]
    NoFreeCells,
    #[error("region {0} vertex set is degenerate (collinear/coplanar)")]
    HullDegeneracy(usize),
    #[error("support identity violated in direction {0:?}: relaxation {1} vs vertex max {2}")]
    SupportIdentity(Vec<f64>, f64, f64),
    #[error("set operation failed: {0}")]
    Set(#[from] crate::set_core::SetError),
}

/// A union of convex regions given by a shared vertex matrix and an
/// incidence matrix.
#[derive(Debug, Clone)]
pub struct PolytopicMap {
    /// n x n_v vertex positions.
    pub vertices: DMatrix<f64>,
    /// n_v x n_F, entry (j, i) = 1 when vertex j belongs to region i.
    pub incidence: DMatrix<f64>,
    /// Per-region cost weights, length n_F.
    pub region_costs: DVector<f64>,
}

impl PolytopicMap {
    pub fn dim(&self) -> usize {
        self.vertices.nrows()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.ncols()
    }

    pub fn n_regions(&self) -> usize {
        self.incidence.ncols()
    }

    /// Vertex indices assigned to region `r`.
    pub fn region_vertices(&self, r: usize) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&j| self.incidence[(j, r)] != 0.0).collect()
    }

    fn validate(&self) -> Result<(), MapError> {
        if self.incidence.nrows() != self.n_vertices() {
            return Err(MapError::Schema("incidence rows != vertex count".into()));
        }
        if self.region_costs.len() != self.n_regions() {
            return Err(MapError::Schema("region_costs length != region count".into()));
        }
        for r in 0..self.n_regions() {
            if self.region_vertices(r).is_empty() {
                return Err(MapError::EmptyRegion(r));
            }
        }
        for j in 0..self.n_vertices() {
            if (0..self.n_regions()).all(|r| self.incidence[(j, r)] == 0.0) {
                return Err(MapError::OrphanVertex(j));
            }
        }
        Ok(())
    }
}

/// An occupancy-grid map over a regular axis-aligned lattice.
#[derive(Debug, Clone)]
pub struct OgmMap {
    /// Cell edge lengths per axis (length = dim, 2 or 3).
    pub cell_size: Vec<f64>,
    /// Position of the lattice corner: cell (0,..,0) spans
    /// `[origin, origin + cell_size]`.
    pub origin: Vec<f64>,
    /// Cells per axis.
    pub grid: Vec<usize>,
    /// Per-cell occupancy in x-fastest order; `None` marks an obstacle cell.
    pub occupancy: Vec<Option<f64>>,
    /// Linear scaling from occupancy probability to region cost.
    pub cost_scale: f64,
    /// Linear cell indices of the free cells, in occupancy order.
    free_cells: Vec<usize>,
}

impl OgmMap {
    pub fn new(
        cell_size: Vec<f64>,
        origin: Vec<f64>,
        grid: Vec<usize>,
        occupancy: Vec<Option<f64>>,
        cost_scale: f64,
    ) -> Result<Self, MapError> {
        let dim = cell_size.len();
        if !(dim == 2 || dim == 3) {
            return Err(MapError::Schema("cell_size must have 2 or 3 entries".into()));
        }
        if origin.len() != dim || grid.len() != dim {
            return Err(MapError::Schema("origin/grid length != dimension".into()));
        }
        if cell_size.iter().any(|&d| d <= 0.0) {
            return Err(MapError::Schema("cell sizes must be positive".into()));
        }
        let n_cells: usize = grid.iter().product();
        if occupancy.len() != n_cells {
            return Err(MapError::Schema(format!(
                "occupancy length {} != grid cell count {}",
                occupancy.len(),
                n_cells
            )));
        }
        if occupancy.iter().flatten().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(MapError::Schema("occupancy probabilities must lie in [0,1]".into()));
        }
        if cost_scale < 0.0 {
            return Err(MapError::Schema("cost_scale must be nonnegative".into()));
        }
        let free_cells: Vec<usize> =
            occupancy.iter().enumerate().filter(|(_, p)| p.is_some()).map(|(i, _)| i).collect();
        if free_cells.is_empty() {
            return Err(MapError::NoFreeCells);
        }
        Ok(OgmMap { cell_size, origin, grid, occupancy, cost_scale, free_cells })
    }

    pub fn dim(&self) -> usize {
        self.cell_size.len()
    }

    pub fn n_regions(&self) -> usize {
        self.free_cells.len()
    }

    /// Multi-index (ix, iy[, iz]) of linear cell index `lin`.
    pub fn cell_index(&self, lin: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        let mut rem = lin;
        for &n in &self.grid {
            idx.push(rem % n);
            rem /= n;
        }
        idx
    }

    /// Center of the free cell with region index `r` (0..n_regions).
    pub fn region_center(&self, r: usize) -> DVector<f64> {
        let idx = self.cell_index(self.free_cells[r]);
        DVector::from_fn(self.dim(), |a, _| {
            self.origin[a] + (idx[a] as f64 + 0.5) * self.cell_size[a]
        })
    }

    /// Occupancy probability of free cell `r`.
    pub fn region_occupancy(&self, r: usize) -> f64 {
        self.occupancy[self.free_cells[r]].unwrap()
    }
}

/// A polytope {y : H y <= h}, one per convex region.
#[derive(Debug, Clone)]
pub struct RegionHrep {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl RegionHrep {
    pub fn contains(&self, y: &DVector<f64>, tol: f64) -> bool {
        self.violation(y) <= tol
    }

    /// Largest constraint violation max_i (H_i y - h_i), negative inside.
    pub fn violation(&self, y: &DVector<f64>) -> f64 {
        let hy = &self.h * y;
        (0..self.b.len()).map(|i| hy[i] - self.b[i]).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Disjunctive Big-M encoding of a region union: the point y lies in region i
/// when `H_i y <= h_i + m_i (1 - xi_b_i)` holds with `xi_b = e_i`, together
/// with the choice constraint `sum xi_b = 1`.
#[derive(Debug, Clone)]
pub struct BigMEncoding {
    pub regions: Vec<BigMBlock>,
}

#[derive(Debug, Clone)]
pub struct BigMBlock {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Per-row activation bound m_i.
    pub m: DVector<f64>,
}

/// A loaded map of either format.
#[derive(Debug, Clone)]
pub enum Map {
    Vrep(PolytopicMap),
    Ogm(OgmMap),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum MapJson {
    Vrep {
        dim: usize,
        vertices: Vec<Vec<f64>>,
        incidence: Vec<Vec<u8>>,
        #[serde(default)]
        region_costs: Option<Vec<f64>>,
    },
    Ogm {
        dim: usize,
        cell_size: Vec<f64>,
        origin: Vec<f64>,
        grid: Vec<usize>,
        occupancy: Vec<Option<f64>>,
        #[serde(default)]
        cost_scale: Option<f64>,
    },
}

impl Map {
    pub fn load(path: impl AsRef<Path>) -> Result<Map, MapError> {
        Map::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_json_str(s: &str) -> Result<Map, MapError> {
        let raw: MapJson = serde_json::from_str(s)?;
        match raw {
            MapJson::Vrep { dim, vertices, incidence, region_costs } => {
                let nv = vertices.len();
                if nv == 0 {
                    return Err(MapError::Schema("vertex list is empty".into()));
                }
                if vertices.iter().any(|v| v.len() != dim) {
                    return Err(MapError::Schema("vertex length != dim".into()));
                }
                let nf = incidence.first().map_or(0, |r| r.len());
                if nf == 0 || incidence.len() != nv || incidence.iter().any(|r| r.len() != nf) {
                    return Err(MapError::Schema("incidence must be n_v rows of n_F entries".into()));
                }
                let v = DMatrix::from_fn(dim, nv, |i, j| vertices[j][i]);
                let m = DMatrix::from_fn(nv, nf, |j, i| incidence[j][i] as f64);
                let costs = match region_costs {
                    Some(c) if c.len() == nf => DVector::from_vec(c),
                    Some(_) => {
                        return Err(MapError::Schema("region_costs length != region count".into()))
                    }
                    None => DVector::zeros(nf),
                };
                let map = PolytopicMap { vertices: v, incidence: m, region_costs: costs };
                map.validate()?;
                Ok(Map::Vrep(map))
            }
            MapJson::Ogm { dim, cell_size, origin, grid, occupancy, cost_scale } => {
                if cell_size.len() != dim {
                    return Err(MapError::Schema("cell_size length != dim".into()));
                }
                Ok(Map::Ogm(OgmMap::new(
                    cell_size,
                    origin,
                    grid,
                    occupancy,
                    cost_scale.unwrap_or(0.0),
                )?))
            }
        }
    }

    pub fn to_json_string(&self) -> String {
        let raw = match self {
            Map::Vrep(m) => MapJson::Vrep {
                dim: m.dim(),
                vertices: (0..m.n_vertices())
                    .map(|j| m.vertices.column(j).iter().copied().collect())
                    .collect(),
                incidence: (0..m.n_vertices())
                    .map(|j| (0..m.n_regions()).map(|r| m.incidence[(j, r)] as u8).collect())
                    .collect(),
                region_costs: Some(m.region_costs.iter().copied().collect()),
            },
            Map::Ogm(m) => MapJson::Ogm {
                dim: m.dim(),
                cell_size: m.cell_size.clone(),
                origin: m.origin.clone(),
                grid: m.grid.clone(),
                occupancy: m.occupancy.clone(),
                cost_scale: Some(m.cost_scale),
            },
        };
        serde_json::to_string_pretty(&raw).expect("map serialization")
    }

    pub fn dim(&self) -> usize {
        match self {
            Map::Vrep(m) => m.dim(),
            Map::Ogm(m) => m.dim(),
        }
    }

    pub fn n_regions(&self) -> usize {
        match self {
            Map::Vrep(m) => m.n_regions(),
            Map::Ogm(m) => m.n_regions(),
        }
    }

    /// Hybrid zonotope of the free space, in unit factor form.
    pub fn to_hybrid_zonotope(&self) -> Result<HybridZonotope, MapError> {
        match self {
            Map::Vrep(m) => from_vrep_union(m),
            Map::Ogm(m) => from_ogm(m),
        }
    }

    /// Half-space representation of every region.
    pub fn region_hreps(&self) -> Result<Vec<RegionHrep>, MapError> {
        match self {
            Map::Vrep(m) => (0..m.n_regions())
                .map(|r| {
                    let idx = m.region_vertices(r);
                    let pts: Vec<DVector<f64>> =
                        idx.iter().map(|&j| m.vertices.column(j).clone_owned()).collect();
                    hull_hrep(&pts, m.dim()).map_err(|_| MapError::HullDegeneracy(r))
                })
                .collect(),
            Map::Ogm(m) => Ok((0..m.n_regions())
                .map(|r| {
                    let c = m.region_center(r);
                    let n = m.dim();
                    let mut h = DMatrix::zeros(2 * n, n);
                    let mut b = DVector::zeros(2 * n);
                    for a in 0..n {
                        h[(a, a)] = 1.0;
                        b[a] = c[a] + 0.5 * m.cell_size[a];
                        h[(n + a, a)] = -1.0;
                        b[n + a] = -(c[a] - 0.5 * m.cell_size[a]);
                    }
                    RegionHrep { h, b }
                })
                .collect()),
        }
    }

    /// Axis-aligned bounding box [lo, hi] of the free space.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        match self {
            Map::Vrep(m) => {
                let n = m.dim();
                let mut lo = DVector::from_element(n, f64::INFINITY);
                let mut hi = DVector::from_element(n, f64::NEG_INFINITY);
                for j in 0..m.n_vertices() {
                    for a in 0..n {
                        lo[a] = lo[a].min(m.vertices[(a, j)]);
                        hi[a] = hi[a].max(m.vertices[(a, j)]);
                    }
                }
                (lo, hi)
            }
            Map::Ogm(m) => {
                let n = m.dim();
                let mut lo = DVector::from_element(n, f64::INFINITY);
                let mut hi = DVector::from_element(n, f64::NEG_INFINITY);
                for r in 0..m.n_regions() {
                    let c = m.region_center(r);
                    for a in 0..n {
                        lo[a] = lo[a].min(c[a] - 0.5 * m.cell_size[a]);
                        hi[a] = hi[a].max(c[a] + 0.5 * m.cell_size[a]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Per-region Big-M inequality blocks with activation bounds computed
    /// row-wise from the map bounding box.
    pub fn bigm_encoding(&self) -> Result<BigMEncoding, MapError> {
        let hreps = self.region_hreps()?;
        let (lo, hi) = self.bounding_box();
        let regions = hreps
            .into_iter()
            .map(|hr| {
                let m = DVector::from_fn(hr.b.len(), |i, _| {
                    let mut worst = 0.0;
                    for a in 0..lo.len() {
                        let c = hr.h[(i, a)];
                        worst += if c > 0.0 { c * hi[a] } else { c * lo[a] };
                    }
                    worst - hr.b[i]
                });
                BigMBlock { h: hr.h, b: hr.b, m }
            })
            .collect();
        Ok(BigMEncoding { regions })
    }

    /// Region cost vector q^r: stored costs for polytopic maps, scaled
    /// occupancy probabilities for grid maps.
    pub fn region_costs_vector(&self) -> DVector<f64> {
        match self {
            Map::Vrep(m) => m.region_costs.clone(),
            Map::Ogm(m) => {
                DVector::from_fn(m.n_regions(), |r, _| m.cost_scale * m.region_occupancy(r))
            }
        }
    }

    /// Check that the support function of the convex relaxation equals the
    /// vertex maximum of the union over a set of probe directions. This is the
    /// relaxation-tightness property the solver relies on; run at load time
    /// under `--verify`.
    pub fn verify_support_identity(&self, n_directions: usize) -> Result<(), MapError> {
        let hz = self.to_hybrid_zonotope()?;
        let cr = hz.convex_relaxation();
        let verts = self.all_union_vertices();
        let n = self.dim();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..n_directions {
            let mut dir = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
            if dir.norm() < 1e-6 {
                dir[0] = 1.0;
            }
            dir /= dir.norm();
            let s = crate::set_core::support(&cr, &dir)?;
            let vmax =
                verts.iter().map(|v| dir.dot(v)).fold(f64::NEG_INFINITY, f64::max);
            if (s - vmax).abs() > 1e-6 * (1.0 + vmax.abs()) {
                return Err(MapError::SupportIdentity(dir.iter().copied().collect(), s, vmax));
            }
        }
        Ok(())
    }

    /// All vertices of the union: the shared vertex list for polytopic maps,
    /// cell corners for grid maps.
    fn all_union_vertices(&self) -> Vec<DVector<f64>> {
        match self {
            Map::Vrep(m) => {
                (0..m.n_vertices()).map(|j| m.vertices.column(j).clone_owned()).collect()
            }
            Map::Ogm(m) => {
                let n = m.dim();
                let mut out = Vec::new();
                for r in 0..m.n_regions() {
                    let c = m.region_center(r);
                    for mask in 0..(1usize << n) {
                        out.push(DVector::from_fn(n, |a, _| {
                            let s = if mask >> a & 1 == 1 { 0.5 } else { -0.5 };
                            c[a] + s * m.cell_size[a]
                        }));
                    }
                }
                out
            }
        }
    }
}

/// Hybrid zonotope of a V-rep region union.
///
/// Continuous factors are the vertex weights followed by one slack per
/// vertex; binary factors select the region. The equality rows are, in
/// order: the unit-sum constraint on the vertex weights, the region choice
/// constraint, and one row per vertex tying its weight, slack, and region
/// memberships together so that weights of vertices outside the chosen
/// region are forced to zero.
pub fn from_vrep_union(map: &PolytopicMap) -> Result<HybridZonotope, MapError> {
    map.validate()?;
    let n = map.dim();
    let nv = map.n_vertices();
    let nf = map.n_regions();
    let ng = 2 * nv;
    let nc = nv + 2;

    let mut gc = DMatrix::zeros(n, ng);
    gc.view_mut((0, 0), (n, nv)).copy_from(&map.vertices);
    let gb = DMatrix::zeros(n, nf);
    let c = DVector::zeros(n);

    let mut ac = DMatrix::zeros(nc, ng);
    let mut ab = DMatrix::zeros(nc, nf);
    let mut b = DVector::zeros(nc);
    for j in 0..nv {
        ac[(0, j)] = 1.0;
    }
    b[0] = 1.0;
    for i in 0..nf {
        ab[(1, i)] = 1.0;
    }
    b[1] = 1.0;
    for j in 0..nv {
        let row_sum: f64 = (0..nf).map(|i| map.incidence[(j, i)]).sum();
        ac[(2 + j, j)] = 1.0;
        ac[(2 + j, nv + j)] = row_sum;
        for i in 0..nf {
            ab[(2 + j, i)] = -map.incidence[(j, i)];
        }
    }
    HybridZonotope::new(gc, gb, c, ac, ab, b, FactorDomain::Unit).map_err(MapError::from)
}

/// Hybrid zonotope of an occupancy-grid free space: a single cell-sized box
/// generator translated by the selected cell center.
pub fn from_ogm(map: &OgmMap) -> Result<HybridZonotope, MapError> {
    let n = map.dim();
    let nf = map.n_regions();
    let gc = DMatrix::from_fn(n, n, |i, j| if i == j { map.cell_size[i] } else { 0.0 });
    let gb = DMatrix::from_fn(n, nf, |i, r| map.region_center(r)[i]);
    let c = DVector::from_fn(n, |i, _| -0.5 * map.cell_size[i]);
    let ac = DMatrix::zeros(1, n);
    let ab = DMatrix::from_element(1, nf, 1.0);
    let b = DVector::from_element(1, 1.0);
    HybridZonotope::new(gc, gb, c, ac, ab, b, FactorDomain::Unit).map_err(MapError::from)
}

/// Facet H-rep of the convex hull of a small point set, by enumerating
/// supporting hyperplanes through point subsets. Quadratic-to-quartic in the
/// number of points, which is fine for per-region vertex counts.
fn hull_hrep(pts: &[DVector<f64>], dim: usize) -> Result<RegionHrep, ()> {
    const TOL: f64 = 1e-9;
    // Degeneracy check up front: the points must affinely span R^dim, else
    // the "hull" is lower-dimensional and has no bounded facet H-rep.
    {
        if pts.len() < dim + 1 {
            return Err(());
        }
        let span = DMatrix::from_fn(dim, pts.len() - 1, |i, j| pts[j + 1][i] - pts[0][i]);
        let scale = span.amax().max(1.0);
        if span.rank(1e-9 * scale) < dim {
            return Err(());
        }
    }
    let mut facets: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut push_facet = |normal: DVector<f64>, offset: f64| {
        let dup = facets.iter().any(|(n0, o0)| {
            (n0 - &normal).amax() < 1e-7 && (o0 - offset).abs() < 1e-7
        });
        if !dup {
            facets.push((normal, offset));
        }
    };
    let scale = pts
        .iter()
        .map(|p| p.amax())
        .fold(1.0f64, f64::max);
    match dim {
        2 => {
            for i in 0..pts.len() {
                for j in (i + 1)..pts.len() {
                    let e = &pts[j] - &pts[i];
                    if e.norm() < TOL * scale {
                        continue;
                    }
                    let mut nrm = DVector::from_row_slice(&[e[1], -e[0]]);
                    nrm /= nrm.norm();
                    classify_side(pts, &nrm, nrm.dot(&pts[i]), scale, &mut push_facet);
                }
            }
        }
        3 => {
            for i in 0..pts.len() {
                for j in (i + 1)..pts.len() {
                    for k in (j + 1)..pts.len() {
                        let e1 = &pts[j] - &pts[i];
                        let e2 = &pts[k] - &pts[i];
                        let mut nrm = DVector::from_row_slice(&[
                            e1[1] * e2[2] - e1[2] * e2[1],
                            e1[2] * e2[0] - e1[0] * e2[2],
                            e1[0] * e2[1] - e1[1] * e2[0],
                        ]);
                        let nn = nrm.norm();
                        if nn < TOL * scale * scale {
                            continue;
                        }
                        nrm /= nn;
                        classify_side(pts, &nrm, nrm.dot(&pts[i]), scale, &mut push_facet);
                    }
                }
            }
        }
        _ => return Err(()),
    }
    if facets.is_empty() {
        return Err(());
    }
    let m = facets.len();
    let mut h = DMatrix::zeros(m, dim);
    let mut b = DVector::zeros(m);
    for (r, (n0, o0)) in facets.into_iter().enumerate() {
        h.row_mut(r).copy_from(&n0.transpose());
        b[r] = o0;
    }
    Ok(RegionHrep { h, b })
}

/// If all points lie on one side of the hyperplane {y : n.y = o}, record the
/// outward-oriented facet.
fn classify_side(
    pts: &[DVector<f64>],
    nrm: &DVector<f64>,
    offset: f64,
    scale: f64,
    push: &mut impl FnMut(DVector<f64>, f64),
) {
    let tol = 1e-9 * (1.0 + scale);
    let mut all_below = true;
    let mut all_above = true;
    for p in pts {
        let d = nrm.dot(p) - offset;
        if d > tol {
            all_below = false;
        }
        if d < -tol {
            all_above = false;
        }
    }
    if all_below {
        push(nrm.clone(), offset);
    }
    if all_above {
        push(-nrm, -offset);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vrep_map(vertices: &[[f64; 2]], incidence: &[&[u8]], costs: Option<Vec<f64>>) -> PolytopicMap {
        let nv = vertices.len();
        let nf = incidence[0].len();
        PolytopicMap {
            vertices: DMatrix::from_fn(2, nv, |i, j| vertices[j][i]),
            incidence: DMatrix::from_fn(nv, nf, |j, i| incidence[j][i] as f64),
            region_costs: costs.map_or_else(|| DVector::zeros(nf), DVector::from_vec),
        }
    }

    #[test]
    fn vrep_union_dimensions() {
        // 9 vertices in 3 triangles
        let verts: Vec<[f64; 2]> = (0..9)
            .map(|i| {
                let t = i as f64;
                [t.cos() + 3.0 * (i / 3) as f64, t.sin()]
            })
            .collect();
        let rows: Vec<&[u8]> = vec![
            &[1, 0, 0], &[1, 0, 0], &[1, 0, 0],
            &[0, 1, 0], &[0, 1, 0], &[0, 1, 0],
            &[0, 0, 1], &[0, 0, 1], &[0, 0, 1],
        ];
        let hz = from_vrep_union(&vrep_map(&verts, &rows, None)).unwrap();
        assert_eq!(hz.n_gen(), 18);
        assert_eq!(hz.n_bin(), 3);
        assert_eq!(hz.n_cons(), 11);
    }

    #[test]
    fn vrep_union_two_segments_exact_matrices() {
        let v1 = [0.0, 0.0];
        let v2 = [1.0, 0.0];
        let v3 = [1.0, 1.0];
        let map = vrep_map(&[v1, v2, v3], &[&[1, 0], &[1, 1], &[0, 1]], None);
        let hz = from_vrep_union(&map).unwrap();
        let gc_expect = DMatrix::from_row_slice(
            2,
            6,
            &[
                v1[0], v2[0], v3[0], 0.0, 0.0, 0.0,
                v1[1], v2[1], v3[1], 0.0, 0.0, 0.0,
            ],
        );
        let ac_expect = DMatrix::from_row_slice(
            5,
            6,
            &[
                1.0, 1.0, 1.0, 0.0, 0.0, 0.0,
                0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                1.0, 0.0, 0.0, 1.0, 0.0, 0.0,
                0.0, 1.0, 0.0, 0.0, 2.0, 0.0,
                0.0, 0.0, 1.0, 0.0, 0.0, 1.0,
            ],
        );
        let ab_expect = DMatrix::from_row_slice(
            5,
            2,
            &[
                0.0, 0.0,
                1.0, 1.0,
                -1.0, 0.0,
                -1.0, -1.0,
                0.0, -1.0,
            ],
        );
        let b_expect = DVector::from_row_slice(&[1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(hz.gc, gc_expect);
        assert_eq!(hz.gb, DMatrix::zeros(2, 2));
        assert_eq!(hz.c, DVector::zeros(2));
        assert_eq!(hz.ac, ac_expect);
        assert_eq!(hz.ab, ab_expect);
        assert_eq!(hz.b, b_expect);
    }

    #[test]
    fn single_triangle_support_matches_vertex_max() {
        let map = vrep_map(&[[0.0, 0.0], [2.0, 0.0], [0.5, 1.5]], &[&[1], &[1], &[1]], None);
        let hz = from_vrep_union(&map).unwrap();
        let cr = hz.convex_relaxation();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..64 {
            let mut d = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0f64));
            if d.norm() < 1e-6 {
                d[0] = 1.0;
            }
            d /= d.norm();
            let s = crate::set_core::support(&cr, &d).unwrap();
            let vmax = (0..3)
                .map(|j| d.dot(&map.vertices.column(j).clone_owned()))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_relative_eq!(s, vmax, epsilon = 1e-8, max_relative = 1e-7);
        }
    }

    /// Sample a feasible factor assignment of the V-rep union with the binary
    /// factors fixed to region r.
    fn sample_region_assignment(
        map: &PolytopicMap,
        r: usize,
        rng: &mut ChaCha8Rng,
    ) -> crate::set_core::FactorAssignment {
        let nv = map.n_vertices();
        let nf = map.n_regions();
        let members = map.region_vertices(r);
        let mut lambda = DVector::zeros(nv);
        let mut total = 0.0;
        for &j in &members {
            let w: f64 = rng.gen_range(0.0..1.0);
            lambda[j] = w;
            total += w;
        }
        lambda /= total;
        let mut xi_c = DVector::zeros(2 * nv);
        for j in 0..nv {
            xi_c[j] = lambda[j];
            let row_sum: f64 = (0..nf).map(|i| map.incidence[(j, i)]).sum();
            xi_c[nv + j] = (map.incidence[(j, r)] - lambda[j]) / row_sum;
        }
        let xi_b = DVector::from_fn(nf, |i, _| if i == r { 1.0 } else { 0.0 });
        crate::set_core::FactorAssignment { xi_c, xi_b }
    }

    #[test]
    fn fixed_region_samples_satisfy_hrep() {
        let map = vrep_map(
            &[[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0], [4.0, 0.0], [4.0, 2.0]],
            &[&[1, 0], &[1, 1], &[1, 1], &[1, 0], &[0, 1], &[0, 1]],
            None,
        );
        let hz = from_vrep_union(&map).unwrap();
        let hreps = Map::Vrep(map.clone()).region_hreps().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for r in 0..map.n_regions() {
            for _ in 0..200 {
                let f = sample_region_assignment(&map, r, &mut rng);
                let e = hz.evaluate(&f).unwrap();
                assert!(e.is_feasible(1e-10));
                assert!(hreps[r].contains(&e.point, 1e-8));
            }
        }
    }

    fn two_cell_ogm() -> OgmMap {
        OgmMap::new(
            vec![1.0, 1.0],
            vec![-0.5, -0.5],
            vec![2, 1],
            vec![Some(0.0), Some(0.0)],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn ogm_dimensions_and_choice_row() {
        let hz = from_ogm(&two_cell_ogm()).unwrap();
        assert_eq!(hz.n_gen(), 2);
        assert_eq!(hz.n_bin(), 2);
        assert_eq!(hz.n_cons(), 1);
        assert_eq!(hz.ab, DMatrix::from_element(1, 2, 1.0));
        assert_eq!(hz.b, DVector::from_element(1, 1.0));
    }

    #[test]
    fn single_cell_membership() {
        let ogm = OgmMap::new(
            vec![1.0, 1.0],
            vec![-0.5, -0.5],
            vec![1, 1],
            vec![Some(0.0)],
            0.0,
        )
        .unwrap();
        let hz = from_ogm(&ogm).unwrap();
        let cr = hz.convex_relaxation();
        let inside = DVector::from_row_slice(&[0.49, -0.49]);
        let outside = DVector::from_row_slice(&[0.51, 0.0]);
        assert!(crate::set_core::contains(&cr, &inside, 1e-6).unwrap());
        assert!(!crate::set_core::contains(&cr, &outside, 1e-6).unwrap());
    }

    /// Membership in the i-th region of a hybrid zonotope: fix the binary
    /// factors to e_i and test the resulting constrained zonotope.
    fn in_region(hz: &HybridZonotope, r: usize, p: &DVector<f64>) -> bool {
        let nf = hz.n_bin();
        let e_r = DVector::from_fn(nf, |i, _| if i == r { 1.0 } else { 0.0 });
        let cz = crate::set_core::ConstrainedZonotope::new(
            hz.gc.clone(),
            &hz.gb * &e_r + &hz.c,
            hz.ac.clone(),
            &hz.b - &hz.ab * &e_r,
            FactorDomain::Unit,
        )
        .unwrap();
        crate::set_core::contains(&cz, p, 1e-6).unwrap()
    }

    #[test]
    fn two_cell_union_matches_box_oracle() {
        let ogm = two_cell_ogm();
        let hz = from_ogm(&ogm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..60 {
            let p = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..2.0f64));
            let oracle = (p[0] >= -0.49 && p[0] <= 1.49 && p[1] >= -0.49 && p[1] <= 0.49)
                || !(p[0] >= -0.51 && p[0] <= 1.51 && p[1] >= -0.51 && p[1] <= 0.51);
            // skip points within 0.01 of the boundary, where tolerances bite
            if !oracle {
                continue;
            }
            let inside_oracle =
                p[0] >= -0.5 && p[0] <= 1.5 && p[1] >= -0.5 && p[1] <= 0.5;
            let member = (0..2).any(|r| in_region(&hz, r, &p));
            assert_eq!(member, inside_oracle, "point {:?}", p);
        }
    }

    #[test]
    fn region_hrep_unit_cell() {
        let ogm = OgmMap::new(
            vec![1.0, 1.0],
            vec![-0.5, -0.5],
            vec![1, 1],
            vec![Some(0.3)],
            0.0,
        )
        .unwrap();
        let hreps = Map::Ogm(ogm).region_hreps().unwrap();
        assert_eq!(hreps.len(), 1);
        let hr = &hreps[0];
        assert!(hr.contains(&DVector::from_row_slice(&[0.5, 0.5]), 1e-12));
        assert!(!hr.contains(&DVector::from_row_slice(&[0.5001, 0.0]), 1e-6));
        assert_eq!(hr.b.len(), 4);
    }

    #[test]
    fn region_hrep_triangle() {
        let map = vrep_map(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[&[1], &[1], &[1]], None);
        let hreps = Map::Vrep(map.clone()).region_hreps().unwrap();
        let hr = &hreps[0];
        assert_eq!(hr.b.len(), 3);
        for j in 0..3 {
            let v = map.vertices.column(j).clone_owned();
            let viol = hr.violation(&v);
            assert!(viol.abs() <= 1e-9, "vertex {j} violation {viol}");
        }
    }

    #[test]
    fn region_hrep_matches_barycentric_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        // convex polygon: points on a noisy circle, ordered by angle
        let n_poly = 7;
        let verts: Vec<[f64; 2]> = (0..n_poly)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / n_poly as f64;
                let r = 1.0 + 0.3 * ((i * 7 % 5) as f64 / 5.0);
                [r * th.cos(), r * th.sin()]
            })
            .collect();
        let rows: Vec<&[u8]> = verts.iter().map(|_| [1u8].as_slice()).collect();
        let map = vrep_map(&verts, &rows, None);
        let hr = &Map::Vrep(map.clone()).region_hreps().unwrap()[0];
        // oracle: fan triangulation barycentric membership
        let in_triangle = |a: &[f64; 2], b: &[f64; 2], c: &[f64; 2], p: &[f64; 2]| {
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            if det.abs() < 1e-12 {
                return false;
            }
            let l1 = ((b[0] - p[0]) * (c[1] - p[1]) - (c[0] - p[0]) * (b[1] - p[1])) / det;
            let l2 = ((c[0] - p[0]) * (a[1] - p[1]) - (a[0] - p[0]) * (c[1] - p[1])) / det;
            let l3 = 1.0 - l1 - l2;
            l1 >= -1e-9 && l2 >= -1e-9 && l3 >= -1e-9
        };
        let mut checked = 0;
        for _ in 0..500 {
            let p = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
            let oracle = (1..n_poly - 1)
                .any(|i| in_triangle(&verts[0], &verts[i], &verts[i + 1], &p));
            let hrep_says = hr.contains(&DVector::from_row_slice(&p), 0.0);
            // skip points within tolerance of the boundary
            if hr.violation(&DVector::from_row_slice(&p)).abs() < 1e-6 {
                continue;
            }
            assert_eq!(hrep_says, oracle, "point {:?}", p);
            checked += 1;
        }
        assert!(checked > 400);
    }

    #[test]
    fn collinear_region_rejected_by_hrep() {
        let map = vrep_map(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], &[&[1], &[1], &[1]], None);
        assert!(matches!(
            Map::Vrep(map).region_hreps(),
            Err(MapError::HullDegeneracy(0))
        ));
    }

    #[test]
    fn region_hrep_3d_box() {
        // unit cube as a V-rep region
        let verts: Vec<DVector<f64>> = (0..8)
            .map(|m| {
                DVector::from_fn(3, |a, _| if m >> a & 1 == 1 { 1.0 } else { 0.0 })
            })
            .collect();
        let hr = hull_hrep(&verts, 3).unwrap();
        assert_eq!(hr.b.len(), 6);
        assert!(hr.contains(&DVector::from_row_slice(&[0.5, 0.5, 0.5]), 1e-12));
        assert!(!hr.contains(&DVector::from_row_slice(&[1.1, 0.5, 0.5]), 1e-6));
    }

    #[test]
    fn bigm_single_region_reduces_to_hrep() {
        let map = vrep_map(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[&[1], &[1], &[1]], None);
        let enc = Map::Vrep(map.clone()).bigm_encoding().unwrap();
        assert_eq!(enc.regions.len(), 1);
        let hr = &Map::Vrep(map).region_hreps().unwrap()[0];
        // with xi_b = 1 forced by the choice constraint, the M terms vanish
        let blk = &enc.regions[0];
        assert_eq!(blk.h, hr.h);
        assert_eq!(blk.b, hr.b);
    }

    #[test]
    fn bigm_two_cells_activation() {
        let enc = Map::Ogm(two_cell_ogm()).bigm_encoding().unwrap();
        let p = DVector::from_row_slice(&[1.0, 0.0]);
        // feasible with cell 1 active: H_1 p <= h_1, other rows relaxed by M
        let feasible_with = |active: usize| {
            enc.regions.iter().enumerate().all(|(i, blk)| {
                let hy = &blk.h * &p;
                (0..blk.b.len()).all(|r| {
                    let slack = if i == active { 0.0 } else { blk.m[r] };
                    hy[r] <= blk.b[r] + slack + 1e-12
                })
            })
        };
        assert!(feasible_with(1));
        assert!(!feasible_with(0));
    }

    #[test]
    fn bigm_bound_finite_and_large_enough() {
        // free cells at x=0 and x=10 inside a 20-wide map
        let ogm = OgmMap::new(
            vec![1.0, 1.0],
            vec![-10.0, -0.5],
            vec![21, 1],
            (0..21)
                .map(|i| if i == 10 || i == 20 { Some(0.0) } else { None })
                .collect(),
            0.0,
        )
        .unwrap();
        let enc = Map::Ogm(ogm).bigm_encoding().unwrap();
        for blk in &enc.regions {
            for r in 0..blk.m.len() {
                assert!(blk.m[r].is_finite());
            }
        }
        // +x row of the cell at x=0.5 must be relaxable out to x=10.5
        assert!(enc.regions[0].m.amax() >= 10.0);
    }

    #[test]
    fn region_costs_scaling() {
        let ogm = OgmMap::new(
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![2, 1],
            vec![Some(0.2), Some(0.8)],
            10.0,
        )
        .unwrap();
        let q = Map::Ogm(ogm.clone()).region_costs_vector();
        assert_eq!(q, DVector::from_row_slice(&[2.0, 8.0]));
        let zero_scale = OgmMap { cost_scale: 0.0, ..ogm };
        assert_eq!(Map::Ogm(zero_scale).region_costs_vector(), DVector::zeros(2));
        let binary = OgmMap::new(
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![2, 1],
            vec![Some(0.0), Some(0.0)],
            10.0,
        )
        .unwrap();
        assert_eq!(Map::Ogm(binary).region_costs_vector(), DVector::zeros(2));
    }

    #[test]
    fn bigm_and_hybzono_membership_agree() {
        let ogm = OgmMap::new(
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![3, 2],
            vec![Some(0.0), None, Some(0.0), Some(0.0), Some(0.0), None],
            0.0,
        )
        .unwrap();
        let map = Map::Ogm(ogm);
        let hz = map.to_hybrid_zonotope().unwrap();
        let enc = map.bigm_encoding().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        for _ in 0..500 {
            let p = DVector::from_fn(2, |a, _| rng.gen_range(if a == 0 { -0.2..3.2 } else { -0.2..2.2 }));
            let hreps = map.region_hreps().unwrap();
            // skip near-boundary points
            if hreps.iter().any(|hr| hr.violation(&p).abs() < 1e-3) {
                continue;
            }
            let hz_member = (0..hz.n_bin()).any(|r| in_region(&hz, r, &p));
            let bigm_member = (0..enc.regions.len()).any(|active| {
                enc.regions.iter().enumerate().all(|(i, blk)| {
                    let hy = &blk.h * &p;
                    (0..blk.b.len()).all(|r| {
                        let slack = if i == active { 0.0 } else { blk.m[r] };
                        hy[r] <= blk.b[r] + slack
                    })
                })
            });
            assert_eq!(hz_member, bigm_member, "point {:?}", p);
            checked += 1;
        }
        assert!(checked > 300);
    }

    #[test]
    fn json_round_trip_vrep() {
        let json = r#"{
            "type": "vrep",
            "dim": 2,
            "vertices": [[0,0],[1,0],[0,1]],
            "incidence": [[1],[1],[1]],
            "region_costs": [0.5]
        }"#;
        let map = Map::from_json_str(json).unwrap();
        assert_eq!(map.dim(), 2);
        assert_eq!(map.n_regions(), 1);
        assert_eq!(map.region_costs_vector()[0], 0.5);
        let re = Map::from_json_str(&map.to_json_string()).unwrap();
        assert_eq!(re.n_regions(), 1);
    }

    #[test]
    fn json_round_trip_ogm_with_obstacles() {
        let json = r#"{
            "type": "ogm",
            "dim": 2,
            "cell_size": [1.0, 1.0],
            "origin": [0.0, 0.0],
            "grid": [2, 2],
            "occupancy": [0.1, null, null, 0.4],
            "cost_scale": 2.0
        }"#;
        let map = Map::from_json_str(json).unwrap();
        assert_eq!(map.n_regions(), 2);
        let q = map.region_costs_vector();
        assert_relative_eq!(q[0], 0.2);
        assert_relative_eq!(q[1], 0.8);
        let re = Map::from_json_str(&map.to_json_string()).unwrap();
        assert_eq!(re.n_regions(), 2);
    }

    #[test]
    fn schema_errors_reported() {
        assert!(matches!(
            Map::from_json_str(
                r#"{"type":"ogm","dim":2,"cell_size":[1,1],"origin":[0,0],"grid":[2,1],"occupancy":[null,null]}"#
            ),
            Err(MapError::NoFreeCells)
        ));
        assert!(matches!(
            Map::from_json_str(
                r#"{"type":"vrep","dim":2,"vertices":[[0,0],[1,0]],"incidence":[[1],[0]]}"#
            ),
            Err(MapError::OrphanVertex(1))
        ));
    }

    #[test]
    fn support_identity_holds_for_loaded_maps() {
        let ogm = OgmMap::new(
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![3, 2],
            vec![Some(0.0), None, Some(0.0), Some(0.0), Some(0.0), None],
            0.0,
        )
        .unwrap();
        Map::Ogm(ogm).verify_support_identity(32).unwrap();
        let map = vrep_map(
            &[[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0], [4.0, 0.0], [4.0, 2.0]],
            &[&[1, 0], &[1, 1], &[1, 1], &[1, 0], &[0, 1], &[0, 1]],
            None,
        );
        Map::Vrep(map).verify_support_identity(32).unwrap();
    }
}
