//! Zonotope, constrained-zonotope, and hybrid-zonotope set representations.
//!
//! Sets are stored in [0,1]-factor form throughout the solver stack: a hybrid
//! zonotope is the set of points `Gc ξc + Gb ξb + c` with `ξc ∈ [0,1]^{n_g}`,
//! `ξb ∈ {0,1}^{n_b}`, subject to `Ac ξc + Ab ξb = b`. The symmetric
//! `[-1,1]`-factor form exists only at construction boundaries and is
//! converted with [`HybridZonotope::to_unit_form`].
//!
//! Support and membership queries on constrained zonotopes are linear
//! programs over the factors, solved with the same interior-point engine
//! used for the MPC QP relaxations.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::qp::{self, QpOptions, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorDomain {
    /// Continuous factors in [-1,1], binary factors in {-1,1}.
    Symmetric,
    /// Continuous factors in [0,1], binary factors in {0,1}.
    Unit,
}

#[derive(Debug, Error)]
pub enum SetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("set already in unit form")]
    AlreadyUnit,
    #[error("zero direction vector")]
    ZeroDirection,
    #[error("set is empty (factor constraints infeasible)")]
    Infeasible,
    #[error("solver failure: {0}")]
    Solver(#[from] qp::QpError),
}

/// A zonotope { G ξ + c | ξ ∈ B_inf }.
#[derive(Debug, Clone)]
pub struct Zonotope {
    pub generators: DMatrix<f64>,
    pub center: DVector<f64>,
}

impl Zonotope {
    pub fn new(generators: DMatrix<f64>, center: DVector<f64>) -> Result<Self, SetError> {
        if generators.nrows() != center.len() {
            return Err(SetError::Dimension(format!(
                "generator rows {} != center length {}",
                generators.nrows(),
                center.len()
            )));
        }
        Ok(Zonotope { generators, center })
    }
}

/// A constrained zonotope; represents any polytope.
#[derive(Debug, Clone)]
pub struct ConstrainedZonotope {
    pub generators: DMatrix<f64>,
    pub center: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub domain: FactorDomain,
}

impl ConstrainedZonotope {
    pub fn new(
        generators: DMatrix<f64>,
        center: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        domain: FactorDomain,
    ) -> Result<Self, SetError> {
        if generators.nrows() != center.len() {
            return Err(SetError::Dimension("generator rows != center length".into()));
        }
        if a.ncols() != generators.ncols() && a.nrows() > 0 {
            return Err(SetError::Dimension("constraint columns != generator columns".into()));
        }
        if a.nrows() != b.len() {
            return Err(SetError::Dimension("constraint rows != offset length".into()));
        }
        Ok(ConstrainedZonotope { generators, center, a, b, domain })
    }

    /// Unconstrained constrained zonotope (a plain zonotope) in unit form.
    pub fn from_zonotope_unit(z: &Zonotope) -> Self {
        let ng = z.generators.ncols();
        ConstrainedZonotope {
            generators: &z.generators * 2.0,
            center: &z.center - z.generators.column_sum(),
            a: DMatrix::zeros(0, ng),
            b: DVector::zeros(0),
            domain: FactorDomain::Unit,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.ncols()
    }

    /// Componentwise interval enclosure `[lo, hi]` of the set, ignoring the
    /// equality constraints (valid outer bound).
    pub fn interval_hull(&self) -> (DVector<f64>, DVector<f64>) {
        assert_eq!(self.domain, FactorDomain::Unit);
        let n = self.dim();
        let mut lo = self.center.clone();
        let mut hi = self.center.clone();
        for i in 0..n {
            for j in 0..self.n_gen() {
                let g = self.generators[(i, j)];
                if g > 0.0 {
                    hi[i] += g;
                } else {
                    lo[i] += g;
                }
            }
        }
        (lo, hi)
    }
}

/// A hybrid zonotope; represents any finite union of polytopes.
#[derive(Debug, Clone)]
pub struct HybridZonotope {
    pub gc: DMatrix<f64>,
    pub gb: DMatrix<f64>,
    pub c: DVector<f64>,
    pub ac: DMatrix<f64>,
    pub ab: DMatrix<f64>,
    pub b: DVector<f64>,
    pub domain: FactorDomain,
}

/// An assignment of continuous and binary factors.
#[derive(Debug, Clone)]
pub struct FactorAssignment {
    pub xi_c: DVector<f64>,
    pub xi_b: DVector<f64>,
}

/// Result of evaluating the generator and constraint equations at a factor
/// assignment.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub point: DVector<f64>,
    pub residual: DVector<f64>,
}

impl Evaluation {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.residual.iter().all(|r| r.abs() <= tol)
    }
}

impl HybridZonotope {
    pub fn new(
        gc: DMatrix<f64>,
        gb: DMatrix<f64>,
        c: DVector<f64>,
        ac: DMatrix<f64>,
        ab: DMatrix<f64>,
        b: DVector<f64>,
        domain: FactorDomain,
    ) -> Result<Self, SetError> {
        let n = c.len();
        if gc.nrows() != n || gb.nrows() != n {
            return Err(SetError::Dimension("generator rows != ambient dimension".into()));
        }
        let nc = b.len();
        if ac.nrows() != nc || ab.nrows() != nc {
            return Err(SetError::Dimension("constraint rows != offset length".into()));
        }
        if nc > 0 && (ac.ncols() != gc.ncols() || ab.ncols() != gb.ncols()) {
            return Err(SetError::Dimension("constraint columns inconsistent with generators".into()));
        }
        Ok(HybridZonotope { gc, gb, c, ac, ab, b, domain })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn n_gen(&self) -> usize {
        self.gc.ncols()
    }

    pub fn n_bin(&self) -> usize {
        self.gb.ncols()
    }

    pub fn n_cons(&self) -> usize {
        self.b.len()
    }

    /// Convert a symmetric-form hybrid zonotope to the equivalent unit
    /// [0,1]-factor form via `ξ = 2ξ̄ - 1`.
    pub fn to_unit_form(&self) -> Result<HybridZonotope, SetError> {
        if self.domain == FactorDomain::Unit {
            return Err(SetError::AlreadyUnit);
        }
        let gen_sum = self.gc.column_sum() + self.gb.column_sum();
        let cons_sum = self.ac.column_sum() + self.ab.column_sum();
        Ok(HybridZonotope {
            gc: &self.gc * 2.0,
            gb: &self.gb * 2.0,
            c: &self.c - gen_sum,
            ac: &self.ac * 2.0,
            ab: &self.ab * 2.0,
            b: &self.b + cons_sum,
            domain: FactorDomain::Unit,
        })
    }

    /// Evaluate the generator and constraint equations at a factor assignment.
    pub fn evaluate(&self, f: &FactorAssignment) -> Result<Evaluation, SetError> {
        if f.xi_c.len() != self.n_gen() || f.xi_b.len() != self.n_bin() {
            return Err(SetError::Dimension(format!(
                "factor dims ({}, {}) do not match set ({}, {})",
                f.xi_c.len(),
                f.xi_b.len(),
                self.n_gen(),
                self.n_bin()
            )));
        }
        let point = &self.gc * &f.xi_c + &self.gb * &f.xi_b + &self.c;
        let residual = &self.ac * &f.xi_c + &self.ab * &f.xi_b - &self.b;
        Ok(Evaluation { point, residual })
    }

    /// Minkowski sum: block-concatenated generators, block-diagonal
    /// constraints, summed centers.
    pub fn minkowski_sum(&self, other: &HybridZonotope) -> Result<HybridZonotope, SetError> {
        if self.dim() != other.dim() {
            return Err(SetError::Dimension("ambient dimensions differ".into()));
        }
        if self.domain != other.domain {
            return Err(SetError::Dimension("factor domains differ".into()));
        }
        let n = self.dim();
        let hcat = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> DMatrix<f64> {
            let mut m = DMatrix::zeros(n, a.ncols() + b.ncols());
            m.view_mut((0, 0), (n, a.ncols())).copy_from(a);
            m.view_mut((0, a.ncols()), (n, b.ncols())).copy_from(b);
            m
        };
        let blkdiag = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> DMatrix<f64> {
            let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
            m.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
            m.view_mut((a.nrows(), a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
            m
        };
        let mut b = DVector::zeros(self.b.len() + other.b.len());
        b.rows_mut(0, self.b.len()).copy_from(&self.b);
        b.rows_mut(self.b.len(), other.b.len()).copy_from(&other.b);
        Ok(HybridZonotope {
            gc: hcat(&self.gc, &other.gc),
            gb: hcat(&self.gb, &other.gb),
            c: &self.c + &other.c,
            ac: blkdiag(&self.ac, &other.ac),
            ab: blkdiag(&self.ab, &other.ab),
            b,
            domain: self.domain,
        })
    }

    /// Convex relaxation: binary factors become continuous in [0,1].
    pub fn convex_relaxation(&self) -> ConstrainedZonotope {
        assert_eq!(self.domain, FactorDomain::Unit, "relaxation requires unit form");
        let n = self.dim();
        let ng = self.n_gen() + self.n_bin();
        let mut g = DMatrix::zeros(n, ng);
        g.view_mut((0, 0), (n, self.n_gen())).copy_from(&self.gc);
        g.view_mut((0, self.n_gen()), (n, self.n_bin())).copy_from(&self.gb);
        let nc = self.n_cons();
        let mut a = DMatrix::zeros(nc, ng);
        if nc > 0 {
            a.view_mut((0, 0), (nc, self.n_gen())).copy_from(&self.ac);
            a.view_mut((0, self.n_gen()), (nc, self.n_bin())).copy_from(&self.ab);
        }
        ConstrainedZonotope {
            generators: g,
            center: self.c.clone(),
            a,
            b: self.b.clone(),
            domain: FactorDomain::Unit,
        }
    }

    /// Restrict to a subset of the binary regions: binary columns outside
    /// `regions` are fixed to zero and removed, then continuous factors
    /// forced to zero by rows of the form Σ γ_i ξ_i = 0 (γ_i > 0, ξ_i >= 0)
    /// are eliminated along with any rows left empty.
    pub fn restrict_to_regions(&self, regions: &[usize]) -> HybridZonotope {
        assert_eq!(self.domain, FactorDomain::Unit);
        let keep_b: Vec<bool> = (0..self.n_bin()).map(|i| regions.contains(&i)).collect();
        let mut keep_c = vec![true; self.n_gen()];
        let mut keep_row = vec![true; self.n_cons()];
        loop {
            let mut changed = false;
            for r in 0..self.n_cons() {
                if !keep_row[r] {
                    continue;
                }
                let mut all_pos = true;
                let mut all_neg = true;
                let mut any = false;
                for j in 0..self.n_gen() {
                    if keep_c[j] && self.ac[(r, j)] != 0.0 {
                        any = true;
                        all_pos &= self.ac[(r, j)] > 0.0;
                        all_neg &= self.ac[(r, j)] < 0.0;
                    }
                }
                let mut bin_involved = false;
                for j in 0..self.n_bin() {
                    if keep_b[j] && self.ab[(r, j)] != 0.0 {
                        bin_involved = true;
                    }
                }
                if !any && !bin_involved {
                    if self.b[r] == 0.0 {
                        keep_row[r] = false;
                        changed = true;
                    }
                    continue;
                }
                // Σ γ_i ξ_i = 0 with uniform sign and ξ_i >= 0 forces all to zero.
                if any && !bin_involved && self.b[r] == 0.0 && (all_pos || all_neg) {
                    for j in 0..self.n_gen() {
                        if keep_c[j] && self.ac[(r, j)] != 0.0 {
                            keep_c[j] = false;
                        }
                    }
                    keep_row[r] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let ci: Vec<usize> = (0..self.n_gen()).filter(|&j| keep_c[j]).collect();
        let bi: Vec<usize> = (0..self.n_bin()).filter(|&j| keep_b[j]).collect();
        let ri: Vec<usize> = (0..self.n_cons()).filter(|&r| keep_row[r]).collect();
        let n = self.dim();
        let gc = DMatrix::from_fn(n, ci.len(), |i, j| self.gc[(i, ci[j])]);
        let gb = DMatrix::from_fn(n, bi.len(), |i, j| self.gb[(i, bi[j])]);
        let ac = DMatrix::from_fn(ri.len(), ci.len(), |i, j| self.ac[(ri[i], ci[j])]);
        let ab = DMatrix::from_fn(ri.len(), bi.len(), |i, j| self.ab[(ri[i], bi[j])]);
        let b = DVector::from_fn(ri.len(), |i, _| self.b[ri[i]]);
        HybridZonotope { gc, gb, c: self.c.clone(), ac, ab, b, domain: FactorDomain::Unit }
    }
}

fn lp_options() -> QpOptions {
    QpOptions { tol_feas: 1e-10, tol_gap: 1e-13, max_iter: 200, ..QpOptions::default() }
}

/// Support function max <direction, x> over a constrained zonotope, via an LP
/// over the factors (with a tiny quadratic regularization keeping the
/// interior-point Newton system positive definite).
pub fn support(s: &ConstrainedZonotope, direction: &DVector<f64>) -> Result<f64, SetError> {
    if direction.len() != s.dim() {
        return Err(SetError::Dimension("direction length != set dimension".into()));
    }
    if direction.amax() == 0.0 {
        return Err(SetError::ZeroDirection);
    }
    assert_eq!(s.domain, FactorDomain::Unit);
    let ng = s.n_gen();
    let q = -(s.generators.transpose() * direction);
    let res = qp::solve_single_stage(
        DVector::from_element(ng, 1e-9),
        q,
        DVector::zeros(ng),
        DVector::from_element(ng, 1.0),
        s.a.clone(),
        s.b.clone(),
        &lp_options(),
    )?;
    match res.status {
        QpStatus::Optimal => {
            let xi = &res.iterate.z[0];
            Ok(direction.dot(&(&s.generators * xi + &s.center)))
        }
        QpStatus::Infeasible | QpStatus::Numerical => Err(SetError::Infeasible),
        QpStatus::MaxIter => Err(SetError::Infeasible),
    }
}

/// Membership test: is `point` in the constrained zonotope within `tol`?
///
/// Solved as a least-deviation QP: minimize ½‖σ‖² over ξ ∈ [0,1]^{n_g} and
/// deviation σ with A ξ = b and G ξ + c + σ = point; membership holds when
/// the optimal deviation is below `tol` in the max norm.
pub fn contains(s: &ConstrainedZonotope, point: &DVector<f64>, tol: f64) -> Result<bool, SetError> {
    if point.len() != s.dim() {
        return Err(SetError::Dimension("point length != set dimension".into()));
    }
    assert_eq!(s.domain, FactorDomain::Unit);
    let ng = s.n_gen();
    let n = s.dim();
    let nc = s.a.nrows();
    let (lo_h, hi_h) = s.interval_hull();
    let mut radius = 1.0f64;
    for i in 0..n {
        radius = radius.max((hi_h[i] - lo_h[i]).abs());
        radius = radius.max((point[i] - s.center[i]).abs());
    }
    // variables [ξ; σ]
    let nv = ng + n;
    let mut p = DVector::from_element(nv, 1e-9);
    for i in 0..n {
        p[ng + i] = 1.0;
    }
    let mut lo = DVector::zeros(nv);
    let mut hi = DVector::from_element(nv, 1.0);
    for i in 0..n {
        lo[ng + i] = -2.0 * radius;
        hi[ng + i] = 2.0 * radius;
    }
    let mut a = DMatrix::zeros(nc + n, nv);
    let mut b = DVector::zeros(nc + n);
    if nc > 0 {
        a.view_mut((0, 0), (nc, ng)).copy_from(&s.a);
        b.rows_mut(0, nc).copy_from(&s.b);
    }
    a.view_mut((nc, 0), (n, ng)).copy_from(&s.generators);
    for i in 0..n {
        a[(nc + i, ng + i)] = 1.0;
    }
    b.rows_mut(nc, n).copy_from(&(point - &s.center));
    let res = qp::solve_single_stage(p, DVector::zeros(nv), lo, hi, a, b, &lp_options())?;
    match res.status {
        QpStatus::Optimal | QpStatus::MaxIter => {
            // A primal-feasible iterate with small deviation witnesses
            // containment even if the duals have not fully converged.
            let z = &res.iterate.z[0];
            let max_dev = (0..n).map(|i| z[ng + i].abs()).fold(0.0f64, f64::max);
            Ok(max_dev <= tol)
        }
        _ => Ok(false),
    }
}

/// Squared-distance minimizing pair between two constrained zonotopes.
///
/// Returns the distance (not squared) and the closest points. Solved as a QP
/// over the factors of both sets with explicit point and difference
/// variables, keeping the cost diagonal.
pub fn min_distance(
    a: &ConstrainedZonotope,
    b: &ConstrainedZonotope,
) -> Result<(f64, DVector<f64>, DVector<f64>), SetError> {
    if a.dim() != b.dim() {
        return Err(SetError::Dimension("ambient dimensions differ".into()));
    }
    assert_eq!(a.domain, FactorDomain::Unit);
    assert_eq!(b.domain, FactorDomain::Unit);
    let n = a.dim();
    let (nga, ngb) = (a.n_gen(), b.n_gen());
    // variables [ya; yb; d; ξa; ξb]
    let nv = 3 * n + nga + ngb;
    let (lo_a, hi_a) = a.interval_hull();
    let (lo_b, hi_b) = b.interval_hull();
    let mut lo = DVector::zeros(nv);
    let mut hi = DVector::from_element(nv, 1.0);
    let margin = 1.0;
    for i in 0..n {
        lo[i] = lo_a[i] - margin;
        hi[i] = hi_a[i] + margin;
        lo[n + i] = lo_b[i] - margin;
        hi[n + i] = hi_b[i] + margin;
        lo[2 * n + i] = lo_a[i] - hi_b[i] - margin;
        hi[2 * n + i] = hi_a[i] - lo_b[i] + margin;
    }
    let mut p = DVector::from_element(nv, 1e-9);
    for i in 0..n {
        p[2 * n + i] = 1.0;
    }
    let (nca, ncb) = (a.a.nrows(), b.a.nrows());
    let m = 3 * n + nca + ncb;
    let mut eq = DMatrix::zeros(m, nv);
    let mut rhs = DVector::zeros(m);
    // ya - Ga ξa = ca
    for i in 0..n {
        eq[(i, i)] = 1.0;
    }
    eq.view_mut((0, 3 * n), (n, nga)).copy_from(&(-&a.generators));
    rhs.rows_mut(0, n).copy_from(&a.center);
    // yb - Gb ξb = cb
    for i in 0..n {
        eq[(n + i, n + i)] = 1.0;
    }
    eq.view_mut((n, 3 * n + nga), (n, ngb)).copy_from(&(-&b.generators));
    rhs.rows_mut(n, n).copy_from(&b.center);
    // ya - yb - d = 0
    for i in 0..n {
        eq[(2 * n + i, i)] = 1.0;
        eq[(2 * n + i, n + i)] = -1.0;
        eq[(2 * n + i, 2 * n + i)] = -1.0;
    }
    if nca > 0 {
        eq.view_mut((3 * n, 3 * n), (nca, nga)).copy_from(&a.a);
        rhs.rows_mut(3 * n, nca).copy_from(&a.b);
    }
    if ncb > 0 {
        eq.view_mut((3 * n + nca, 3 * n + nga), (ncb, ngb)).copy_from(&b.a);
        rhs.rows_mut(3 * n + nca, ncb).copy_from(&b.b);
    }
    let res = qp::solve_single_stage(p, DVector::zeros(nv), lo, hi, eq, rhs, &lp_options())?;
    if res.status != QpStatus::Optimal {
        return Err(SetError::Infeasible);
    }
    let z = &res.iterate.z[0];
    let ya = z.rows(0, n).clone_owned();
    let yb = z.rows(n, n).clone_owned();
    Ok(((&ya - &yb).norm(), ya, yb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_cell_conzono() -> ConstrainedZonotope {
        // unit square centered at the origin, unit form
        ConstrainedZonotope::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DVector::from_row_slice(&[-0.5, -0.5]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            FactorDomain::Unit,
        )
        .unwrap()
    }

    fn one_cell_ogm_hz() -> HybridZonotope {
        // single OGM cell, d_x = d_y = 1, center (0,0)
        HybridZonotope::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.0]),
            DVector::from_row_slice(&[-0.5, -0.5]),
            DMatrix::zeros(1, 2),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[1.0]),
            FactorDomain::Unit,
        )
        .unwrap()
    }

    #[test]
    fn unit_form_transforms_scalar_example() {
        let hz = HybridZonotope::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::zeros(1, 0),
            DVector::from_row_slice(&[0.0]),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(0, 0),
            DVector::zeros(0),
            FactorDomain::Symmetric,
        )
        .unwrap();
        let u = hz.to_unit_form().unwrap();
        assert_eq!(u.gc[(0, 0)], 2.0);
        assert_eq!(u.c[0], -1.0);
        assert!(u.to_unit_form().is_err());
    }

    #[test]
    fn unit_form_point_set_unchanged() {
        let hz = HybridZonotope::new(
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 0),
            DVector::from_row_slice(&[3.0]),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 0),
            DVector::zeros(0),
            FactorDomain::Symmetric,
        )
        .unwrap();
        let u = hz.to_unit_form().unwrap();
        assert_eq!(u.c[0], 3.0);
    }

    #[test]
    fn unit_form_bijection_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gc = DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-1.0..1.0));
        let gb = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let ac = DMatrix::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0));
        let ab = DMatrix::from_fn(1, 2, |_, _| rng.gen_range(-1.0..1.0));
        let c = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(1, |_, _| rng.gen_range(-1.0..1.0));
        let sym = HybridZonotope::new(gc, gb, c, ac, ab, b, FactorDomain::Symmetric).unwrap();
        let unit = sym.to_unit_form().unwrap();
        for _ in 0..1000 {
            let xb_unit = DVector::from_fn(2, |_, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
            let xc_unit = DVector::from_fn(3, |_, _| rng.gen_range(0.0..1.0));
            let f_unit = FactorAssignment { xi_c: xc_unit.clone(), xi_b: xb_unit.clone() };
            let f_sym = FactorAssignment {
                xi_c: xc_unit.map(|v| 2.0 * v - 1.0),
                xi_b: xb_unit.map(|v| 2.0 * v - 1.0),
            };
            let eu = unit.evaluate(&f_unit).unwrap();
            let es = sym.evaluate(&f_sym).unwrap();
            assert_relative_eq!(eu.point, es.point, epsilon = 1e-12);
            assert_relative_eq!(eu.residual, es.residual, epsilon = 1e-12);
        }
    }

    #[test]
    fn evaluate_one_cell_ogm() {
        let hz = one_cell_ogm_hz();
        let e = hz
            .evaluate(&FactorAssignment {
                xi_c: DVector::from_row_slice(&[0.5, 0.5]),
                xi_b: DVector::from_row_slice(&[1.0]),
            })
            .unwrap();
        assert_relative_eq!(e.point, DVector::from_row_slice(&[0.0, 0.0]), epsilon = 1e-14);
        assert!(e.is_feasible(1e-14));

        let e = hz
            .evaluate(&FactorAssignment {
                xi_c: DVector::zeros(2),
                xi_b: DVector::from_row_slice(&[1.0]),
            })
            .unwrap();
        assert_relative_eq!(e.point, DVector::from_row_slice(&[-0.5, -0.5]), epsilon = 1e-14);

        let e = hz
            .evaluate(&FactorAssignment {
                xi_c: DVector::zeros(2),
                xi_b: DVector::from_row_slice(&[0.0]),
            })
            .unwrap();
        assert_relative_eq!(e.residual[0], -1.0);
        assert!(!e.is_feasible(1e-8));
    }

    #[test]
    fn evaluate_dimension_mismatch() {
        let hz = one_cell_ogm_hz();
        let bad = FactorAssignment { xi_c: DVector::zeros(3), xi_b: DVector::zeros(1) };
        assert!(hz.evaluate(&bad).is_err());
    }

    fn point_hz(p: &[f64]) -> HybridZonotope {
        let n = p.len();
        HybridZonotope::new(
            DMatrix::zeros(n, 0),
            DMatrix::zeros(n, 0),
            DVector::from_row_slice(p),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 0),
            DVector::zeros(0),
            FactorDomain::Unit,
        )
        .unwrap()
    }

    #[test]
    fn minkowski_sum_of_points() {
        let s = point_hz(&[1.0, 2.0]).minkowski_sum(&point_hz(&[3.0, -1.0])).unwrap();
        assert_relative_eq!(s.c, DVector::from_row_slice(&[4.0, 1.0]));
        assert_eq!(s.n_gen(), 0);
    }

    #[test]
    fn minkowski_sum_dimensions() {
        let a = one_cell_ogm_hz();
        let b = one_cell_ogm_hz();
        let s = a.minkowski_sum(&b).unwrap();
        assert_eq!(s.n_gen(), 4);
        assert_eq!(s.n_bin(), 2);
        assert_eq!(s.n_cons(), 2);
    }

    #[test]
    fn minkowski_sum_square_and_two_points() {
        // unit square ⊕ {(0,0),(5,0)}: membership checked against geometry
        let square = HybridZonotope::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DMatrix::zeros(2, 0),
            DVector::from_row_slice(&[0.0, 0.0]),
            DMatrix::zeros(0, 2),
            DMatrix::zeros(0, 0),
            DVector::zeros(0),
            FactorDomain::Unit,
        )
        .unwrap();
        let two_points = HybridZonotope::new(
            DMatrix::zeros(2, 0),
            DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 0.0, 0.0]),
            DVector::zeros(2),
            DMatrix::zeros(1, 0),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_row_slice(&[1.0]),
            FactorDomain::Unit,
        )
        .unwrap();
        let sum = square.minkowski_sum(&two_points).unwrap();
        // enumerate binary assignments, check membership of the relaxed region pieces
        let member = |p: &DVector<f64>| -> bool {
            for bits in 0..2u32 {
                let xi_b = DVector::from_fn(2, |i, _| if i as u32 == bits { 1.0 } else { 0.0 });
                let fixed = ConstrainedZonotope::new(
                    sum.gc.clone(),
                    &sum.gb * &xi_b + &sum.c,
                    sum.ac.clone(),
                    &sum.b - &sum.ab * &xi_b,
                    FactorDomain::Unit,
                )
                .unwrap();
                if contains(&fixed, p, 1e-7).unwrap() {
                    return true;
                }
            }
            false
        };
        assert!(member(&DVector::from_row_slice(&[5.5, 0.5])));
        assert!(!member(&DVector::from_row_slice(&[2.5, 0.5])));
    }

    #[test]
    fn relaxation_of_convex_set_is_identity() {
        let cz = unit_cell_conzono();
        let hz = HybridZonotope::new(
            cz.generators.clone(),
            DMatrix::zeros(2, 0),
            cz.center.clone(),
            DMatrix::zeros(0, 2),
            DMatrix::zeros(0, 0),
            DVector::zeros(0),
            FactorDomain::Unit,
        )
        .unwrap();
        let cr = hz.convex_relaxation();
        assert_eq!(cr.generators, cz.generators);
        assert_eq!(cr.center, cz.center);
    }

    #[test]
    fn support_of_unit_cell() {
        let cz = unit_cell_conzono();
        let v = support(&cz, &DVector::from_row_slice(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(v, 0.5, epsilon = 1e-6);
        assert!(matches!(
            support(&cz, &DVector::from_row_slice(&[0.0, 0.0])),
            Err(SetError::ZeroDirection)
        ));
    }

    #[test]
    fn contains_unit_cell() {
        let cz = unit_cell_conzono();
        assert!(contains(&cz, &DVector::from_row_slice(&[0.0, 0.0]), 1e-8).unwrap());
        assert!(!contains(&cz, &DVector::from_row_slice(&[1.5, 0.0]), 1e-8).unwrap());
    }

    #[test]
    fn min_distance_between_cells() {
        let a = unit_cell_conzono();
        let mut b = unit_cell_conzono();
        b.center = DVector::from_row_slice(&[2.5, -0.5]);
        let (d, _, _) = min_distance(&a, &b).unwrap();
        assert_relative_eq!(d, 2.0, epsilon = 1e-5);
        let (d0, _, _) = min_distance(&a, &a).unwrap();
        assert!(d0 <= 1e-5);
    }

    #[test]
    fn evaluate_feasible_point_is_contained() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hz = one_cell_ogm_hz();
        for _ in 0..50 {
            let f = FactorAssignment {
                xi_c: DVector::from_fn(2, |_, _| rng.gen_range(0.0..1.0)),
                xi_b: DVector::from_row_slice(&[1.0]),
            };
            let e = hz.evaluate(&f).unwrap();
            assert!(e.is_feasible(1e-12));
            let cr = hz.convex_relaxation();
            assert!(contains(&cr, &e.point, 1e-8).unwrap());
        }
    }
}


