//! Assembly of the multi-stage MIQP from dynamics, constraint sets, free-space
//! encodings, and cost configuration.
//!
//! Stage variables are laid out in a fixed order
//! `[x, u, ξ_cx, ξ_cu, σ_cx, σ_cu, ξ_c, ξ_b, σ]` (the input-related blocks
//! are dropped at the terminal stage). The first six blocks form the convex
//! problem: states, inputs, constrained-zonotope factors for the state and
//! input sets, and their slack variables. Free-space encodings append the
//! remaining blocks: hybrid-zonotope factors plus slacks, or (for the Big-M
//! encoding) just the binary selectors with general inequality rows.
//!
//! All equality constraints live in the stage couplings
//! `0 = C_k z_k + D_{k+1} z_{k+1} + c_k`; all inequality constraints are
//! per-variable boxes except for Big-M rows, which are carried as general
//! rows and disable the diagonal fast path in the QP solver.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::map_ingest::BigMEncoding;
use crate::qp::{MultiStageQp, QpCoupling, QpStage};
use crate::set_core::{ConstrainedZonotope, FactorDomain, HybridZonotope};

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initial input supplied but fix_first_input is false")]
    UnexpectedInitialInput,
}

/// A soft constrained-zonotope constraint `H_map signal ∈ set`, with slack
/// bound `sigma_max` (zero for a hard constraint) and diagonal quadratic
/// slack weight `weight`.
#[derive(Debug, Clone)]
pub struct SoftSetConstraint {
    pub h_map: DMatrix<f64>,
    pub set: ConstrainedZonotope,
    /// Diagonal of the slack penalty, length = set ambient dimension.
    pub weight: DVector<f64>,
    /// Symmetric slack bound, length = set ambient dimension.
    pub sigma_max: DVector<f64>,
}

impl SoftSetConstraint {
    fn validate(&self, signal_dim: usize, name: &str) -> Result<(), MpcError> {
        let n = self.set.dim();
        if self.h_map.nrows() != n {
            return Err(MpcError::Dimension(format!("{name}: map rows != set dimension")));
        }
        if self.h_map.ncols() != signal_dim {
            return Err(MpcError::Dimension(format!("{name}: map cols != signal dimension")));
        }
        if self.weight.len() != n || self.sigma_max.len() != n {
            return Err(MpcError::Dimension(format!("{name}: weight/sigma_max length != set dimension")));
        }
        if self.set.domain != FactorDomain::Unit {
            return Err(MpcError::Config(format!("{name}: set must be in unit factor form")));
        }
        if self.weight.iter().any(|w| *w < 0.0) || self.sigma_max.iter().any(|s| *s < 0.0) {
            return Err(MpcError::Config(format!("{name}: weights and slack bounds must be nonnegative")));
        }
        Ok(())
    }

    fn n_gen(&self) -> usize {
        self.set.n_gen()
    }

    fn n_dim(&self) -> usize {
        self.set.dim()
    }

    fn n_cons(&self) -> usize {
        self.set.a.nrows()
    }
}

/// Configuration of the receding-horizon problem.
#[derive(Debug, Clone)]
pub struct MpcConfig {
    /// Discrete-time dynamics x_{k+1} = A x_k + B u_k.
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Output map y = H x used by the free-space constraint.
    pub h: DMatrix<f64>,
    pub horizon: usize,
    pub dt: f64,
    /// Diagonals of the stage/terminal cost matrices.
    pub q_diag: DVector<f64>,
    pub r_diag: DVector<f64>,
    pub qn_diag: DVector<f64>,
    pub x_ref: DVector<f64>,
    /// Optional constrained-zonotope constraints on states, inputs, and the
    /// terminal state.
    pub zcx: Option<SoftSetConstraint>,
    pub zcu: Option<SoftSetConstraint>,
    pub zcxn: Option<SoftSetConstraint>,
    pub x_lo: DVector<f64>,
    pub x_hi: DVector<f64>,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
    pub xn_lo: DVector<f64>,
    pub xn_hi: DVector<f64>,
    /// Diagonal weight on the free-space slack variables.
    pub hz_slack_weight: DVector<f64>,
    /// Symmetric bound on the free-space slack variables.
    pub hz_sigma_max: DVector<f64>,
    pub fix_first_input: bool,
}

impl MpcConfig {
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension of the free-space constraint.
    pub fn n_y(&self) -> usize {
        self.h.nrows()
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let nx = self.n_x();
        let nu = self.n_u();
        if self.a.ncols() != nx || self.b.nrows() != nx {
            return Err(MpcError::Dimension("dynamics matrices inconsistent".into()));
        }
        if self.h.ncols() != nx {
            return Err(MpcError::Dimension("output map cols != state dimension".into()));
        }
        if self.horizon == 0 {
            return Err(MpcError::Config("horizon must be >= 1".into()));
        }
        if self.q_diag.len() != nx || self.qn_diag.len() != nx || self.r_diag.len() != nu {
            return Err(MpcError::Dimension("cost diagonal lengths inconsistent".into()));
        }
        if self.x_ref.len() != nx {
            return Err(MpcError::Dimension("reference length != state dimension".into()));
        }
        for (d, name) in [(&self.q_diag, "Q"), (&self.r_diag, "R"), (&self.qn_diag, "QN")] {
            if d.iter().any(|v| *v < 0.0) {
                return Err(MpcError::Config(format!("{name} diagonal must be nonnegative")));
            }
        }
        let bound_pairs = [
            (&self.x_lo, &self.x_hi, nx, "x"),
            (&self.u_lo, &self.u_hi, nu, "u"),
            (&self.xn_lo, &self.xn_hi, nx, "xN"),
        ];
        for (lo, hi, len, name) in bound_pairs {
            if lo.len() != len || hi.len() != len {
                return Err(MpcError::Dimension(format!("{name} bound length mismatch")));
            }
            for i in 0..len {
                if !lo[i].is_finite() || !hi[i].is_finite() {
                    return Err(MpcError::Config(format!("{name} bounds must be finite")));
                }
                if lo[i] > hi[i] {
                    return Err(MpcError::Config(format!("{name} lower bound exceeds upper")));
                }
            }
        }
        if let Some(z) = &self.zcx {
            z.validate(nx, "Zcx")?;
        }
        if let Some(z) = &self.zcu {
            z.validate(nu, "Zcu")?;
        }
        if let Some(z) = &self.zcxn {
            z.validate(nx, "ZcxN")?;
        }
        if self.hz_slack_weight.len() != self.n_y() || self.hz_sigma_max.len() != self.n_y() {
            return Err(MpcError::Dimension("free-space slack vector length != output dimension".into()));
        }
        Ok(())
    }
}

/// Named index ranges of the blocks inside one stage variable vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageLayout {
    pub x: Range<usize>,
    pub u: Range<usize>,
    pub xi_cx: Range<usize>,
    pub xi_cu: Range<usize>,
    pub sigma_cx: Range<usize>,
    pub sigma_cu: Range<usize>,
    pub xi_c: Range<usize>,
    pub xi_b: Range<usize>,
    pub sigma: Range<usize>,
}

impl StageLayout {
    pub fn n_vars(&self) -> usize {
        self.sigma.end
    }
}

/// Which free-space encoding a problem carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    ConvexOnly,
    HybZono,
    BigM,
}

/// The assembled multi-stage problem plus the metadata needed to edit it
/// per branch-and-bound node and to rewrite the initial condition.
#[derive(Debug, Clone)]
pub struct MultiStageMiqp {
    pub qp: MultiStageQp,
    pub layouts: Vec<StageLayout>,
    pub n_regions: usize,
    pub encoding: Encoding,
    /// Row range of the initial-state constraint within coupling 0.
    pub init_x_rows: Range<usize>,
    /// Row range of the initial-input constraint within coupling 0 (empty
    /// unless `fix_first_input`).
    pub init_u_rows: Range<usize>,
}

impl MultiStageMiqp {
    pub fn horizon(&self) -> usize {
        self.qp.horizon()
    }

    /// Rewrite the initial-condition offsets: `-I x_0 + x0 = 0` rows and,
    /// when the first input is fixed, the matching `-I u_0 + u0 = 0` rows.
    pub fn update_initial_state(
        &mut self,
        x0: &DVector<f64>,
        u0: Option<&DVector<f64>>,
    ) -> Result<(), MpcError> {
        if x0.len() != self.init_x_rows.len() {
            return Err(MpcError::Dimension("initial state length mismatch".into()));
        }
        let cpl = &mut self.qp.couplings[0];
        for (i, row) in self.init_x_rows.clone().enumerate() {
            cpl.offset[row] = x0[i];
        }
        match (u0, self.init_u_rows.len()) {
            (Some(u), n) if n > 0 => {
                if u.len() != n {
                    return Err(MpcError::Dimension("initial input length mismatch".into()));
                }
                for (i, row) in self.init_u_rows.clone().enumerate() {
                    cpl.offset[row] = u[i];
                }
                Ok(())
            }
            (Some(_), _) => Err(MpcError::UnexpectedInitialInput),
            (None, _) => Ok(()),
        }
    }

    /// Structural audit: diagonal costs nonnegative, bounds ordered and
    /// finite, and (unless the Big-M encoding is in use) no general
    /// inequality rows so the solver's diagonal fast path applies.
    pub fn audit(&self) -> Result<(), MpcError> {
        for (k, s) in self.qp.stages.iter().enumerate() {
            if s.p_diag.iter().any(|p| *p < 0.0) {
                return Err(MpcError::Config(format!("stage {k}: negative cost diagonal")));
            }
            for j in 0..s.nz() {
                if !s.lo[j].is_finite() || !s.hi[j].is_finite() || s.lo[j] > s.hi[j] {
                    return Err(MpcError::Config(format!("stage {k}: bad box bounds on var {j}")));
                }
            }
            if self.encoding != Encoding::BigM && s.has_general_rows() {
                return Err(MpcError::Config(format!("stage {k}: unexpected general inequality rows")));
            }
            if self.layouts[k].n_vars() != s.nz() {
                return Err(MpcError::Dimension(format!("stage {k}: layout/variable count mismatch")));
            }
        }
        Ok(())
    }

    /// Evaluate the assembled quadratic objective at a stage-wise point.
    pub fn objective(&self, z: &[DVector<f64>]) -> f64 {
        self.qp.objective(z)
    }
}

struct LayoutBuilder {
    next: usize,
}

impl LayoutBuilder {
    fn new() -> Self {
        LayoutBuilder { next: 0 }
    }

    fn block(&mut self, len: usize) -> Range<usize> {
        let r = self.next..self.next + len;
        self.next += len;
        r
    }
}

fn convex_stage_layout(cfg: &MpcConfig, terminal: bool) -> StageLayout {
    let mut b = LayoutBuilder::new();
    let x = b.block(cfg.n_x());
    let u = b.block(if terminal { 0 } else { cfg.n_u() });
    let zx = if terminal { &cfg.zcxn } else { &cfg.zcx };
    let xi_cx = b.block(zx.as_ref().map_or(0, |z| z.n_gen()));
    let xi_cu = b.block(if terminal { 0 } else { cfg.zcu.as_ref().map_or(0, |z| z.n_gen()) });
    let sigma_cx = b.block(zx.as_ref().map_or(0, |z| z.n_dim()));
    let sigma_cu = b.block(if terminal { 0 } else { cfg.zcu.as_ref().map_or(0, |z| z.n_dim()) });
    let xi_c = b.block(0);
    let xi_b = b.block(0);
    let sigma = b.block(0);
    StageLayout { x, u, xi_cx, xi_cu, sigma_cx, sigma_cu, xi_c, xi_b, sigma }
}

fn convex_stage(cfg: &MpcConfig, layout: &StageLayout, terminal: bool) -> QpStage {
    let nz = layout.n_vars();
    let mut p = DVector::zeros(nz);
    let mut q = DVector::zeros(nz);
    let mut lo = DVector::zeros(nz);
    let mut hi = DVector::zeros(nz);
    let q_d = if terminal { &cfg.qn_diag } else { &cfg.q_diag };
    for (i, j) in layout.x.clone().enumerate() {
        p[j] = q_d[i];
        q[j] = -q_d[i] * cfg.x_ref[i];
        lo[j] = if terminal { cfg.xn_lo[i] } else { cfg.x_lo[i] };
        hi[j] = if terminal { cfg.xn_hi[i] } else { cfg.x_hi[i] };
    }
    for (i, j) in layout.u.clone().enumerate() {
        p[j] = cfg.r_diag[i];
        lo[j] = cfg.u_lo[i];
        hi[j] = cfg.u_hi[i];
    }
    let zx = if terminal { &cfg.zcxn } else { &cfg.zcx };
    if let Some(z) = zx {
        for j in layout.xi_cx.clone() {
            hi[j] = 1.0;
        }
        for (i, j) in layout.sigma_cx.clone().enumerate() {
            p[j] = z.weight[i];
            lo[j] = -z.sigma_max[i];
            hi[j] = z.sigma_max[i];
        }
    }
    if !terminal {
        if let Some(z) = &cfg.zcu {
            for j in layout.xi_cu.clone() {
                hi[j] = 1.0;
            }
            for (i, j) in layout.sigma_cu.clone().enumerate() {
                p[j] = z.weight[i];
                lo[j] = -z.sigma_max[i];
                hi[j] = z.sigma_max[i];
            }
        }
    }
    QpStage::boxed(p, q, lo, hi)
}

/// Copy `m` into `dst` at (row, col_range.start), for each listed column block.
fn place(dst: &mut DMatrix<f64>, row: usize, cols: &Range<usize>, m: &DMatrix<f64>) {
    dst.view_mut((row, cols.start), (m.nrows(), m.ncols())).copy_from(m);
}

fn place_neg_identity(dst: &mut DMatrix<f64>, row: usize, cols: &Range<usize>) {
    for (i, j) in cols.clone().enumerate() {
        dst[(row + i, j)] = -1.0;
    }
}

fn place_identity(dst: &mut DMatrix<f64>, row: usize, cols: &Range<usize>) {
    for (i, j) in cols.clone().enumerate() {
        dst[(row + i, j)] = 1.0;
    }
}

/// Rows of the convex-problem coupling between stages k and k+1.
fn convex_coupling_rows(cfg: &MpcConfig, k: usize) -> usize {
    let nx = cfg.n_x();
    let mut rows = nx; // dynamics
    if k == 0 {
        rows += nx;
        if cfg.fix_first_input {
            rows += cfg.n_u();
        }
    }
    if let Some(z) = &cfg.zcx {
        rows += z.n_dim() + z.n_cons();
    }
    if let Some(z) = &cfg.zcu {
        rows += z.n_dim() + z.n_cons();
    }
    if k + 1 == cfg.horizon {
        if let Some(z) = &cfg.zcxn {
            rows += z.n_dim() + z.n_cons();
        }
    }
    rows
}

/// Assemble the convex problem: dynamics, initial condition, state/input
/// constrained-zonotope couplings, and box bounds. No free-space constraint.
pub fn build_convex_problem(cfg: &MpcConfig) -> Result<MultiStageMiqp, MpcError> {
    cfg.validate()?;
    let n = cfg.horizon;
    let nx = cfg.n_x();
    let nu = cfg.n_u();

    let mut layouts = Vec::with_capacity(n + 1);
    for k in 0..=n {
        layouts.push(convex_stage_layout(cfg, k == n));
    }
    let stages: Vec<QpStage> =
        (0..=n).map(|k| convex_stage(cfg, &layouts[k], k == n)).collect();

    let mut couplings = Vec::with_capacity(n);
    let mut init_x_rows = 0..0;
    let mut init_u_rows = 0..0;
    for k in 0..n {
        let rows = convex_coupling_rows(cfg, k);
        let lay_k = &layouts[k];
        let lay_n = &layouts[k + 1];
        let mut c = DMatrix::zeros(rows, lay_k.n_vars());
        let mut d = DMatrix::zeros(rows, lay_n.n_vars());
        let mut off = DVector::zeros(rows);
        let mut r = 0;

        // dynamics: A x_k + B u_k - x_{k+1} = 0
        place(&mut c, r, &lay_k.x, &cfg.a);
        place(&mut c, r, &lay_k.u, &cfg.b);
        place_neg_identity(&mut d, r, &lay_n.x);
        r += nx;

        if k == 0 {
            // -I x_0 + x0 = 0 (offset rewritten by update_initial_state)
            init_x_rows = r..r + nx;
            place_neg_identity(&mut c, r, &lay_k.x);
            r += nx;
            if cfg.fix_first_input {
                init_u_rows = r..r + nu;
                place_neg_identity(&mut c, r, &lay_k.u);
                r += nu;
            }
        }

        if let Some(z) = &cfg.zcx {
            // H_x x - G_cx xi_cx + I sigma_cx - c_cx = 0
            place(&mut c, r, &lay_k.x, &z.h_map);
            place(&mut c, r, &lay_k.xi_cx, &(-&z.set.generators));
            place_identity(&mut c, r, &lay_k.sigma_cx);
            off.rows_mut(r, z.n_dim()).copy_from(&(-&z.set.center));
            r += z.n_dim();
            // A_cx xi_cx - b_cx = 0
            place(&mut c, r, &lay_k.xi_cx, &z.set.a);
            off.rows_mut(r, z.n_cons()).copy_from(&(-&z.set.b));
            r += z.n_cons();
        }
        if let Some(z) = &cfg.zcu {
            place(&mut c, r, &lay_k.u, &z.h_map);
            place(&mut c, r, &lay_k.xi_cu, &(-&z.set.generators));
            place_identity(&mut c, r, &lay_k.sigma_cu);
            off.rows_mut(r, z.n_dim()).copy_from(&(-&z.set.center));
            r += z.n_dim();
            place(&mut c, r, &lay_k.xi_cu, &z.set.a);
            off.rows_mut(r, z.n_cons()).copy_from(&(-&z.set.b));
            r += z.n_cons();
        }
        if k + 1 == n {
            if let Some(z) = &cfg.zcxn {
                // terminal rows carried through D_N
                place(&mut d, r, &lay_n.x, &z.h_map);
                place(&mut d, r, &lay_n.xi_cx, &(-&z.set.generators));
                place_identity(&mut d, r, &lay_n.sigma_cx);
                off.rows_mut(r, z.n_dim()).copy_from(&(-&z.set.center));
                r += z.n_dim();
                place(&mut d, r, &lay_n.xi_cx, &z.set.a);
                off.rows_mut(r, z.n_cons()).copy_from(&(-&z.set.b));
                r += z.n_cons();
            }
        }
        debug_assert_eq!(r, rows);
        couplings.push(QpCoupling { c, d, offset: off });
    }

    Ok(MultiStageMiqp {
        qp: MultiStageQp { stages, couplings },
        layouts,
        n_regions: 0,
        encoding: Encoding::ConvexOnly,
        init_x_rows,
        init_u_rows,
    })
}

/// Extend a stage with extra trailing variables, returning the new stage.
fn extend_stage(
    s: &QpStage,
    extra_p: &DVector<f64>,
    extra_q: &DVector<f64>,
    extra_lo: &DVector<f64>,
    extra_hi: &DVector<f64>,
) -> QpStage {
    let nz = s.nz();
    let ne = extra_p.len();
    let mut p = DVector::zeros(nz + ne);
    let mut q = DVector::zeros(nz + ne);
    let mut lo = DVector::zeros(nz + ne);
    let mut hi = DVector::zeros(nz + ne);
    p.rows_mut(0, nz).copy_from(&s.p_diag);
    q.rows_mut(0, nz).copy_from(&s.q);
    lo.rows_mut(0, nz).copy_from(&s.lo);
    hi.rows_mut(0, nz).copy_from(&s.hi);
    p.rows_mut(nz, ne).copy_from(extra_p);
    q.rows_mut(nz, ne).copy_from(extra_q);
    lo.rows_mut(nz, ne).copy_from(extra_lo);
    hi.rows_mut(nz, ne).copy_from(extra_hi);
    QpStage::boxed(p, q, lo, hi)
}

/// Widen a coupling block to new stage widths, keeping existing entries in
/// the leading columns, and append `extra_rows` zero rows.
fn widen_coupling(
    cpl: &QpCoupling,
    new_c_cols: usize,
    new_d_cols: usize,
    extra_rows: usize,
) -> QpCoupling {
    let rows = cpl.nrows() + extra_rows;
    let mut c = DMatrix::zeros(rows, new_c_cols);
    let mut d = DMatrix::zeros(rows, new_d_cols);
    let mut off = DVector::zeros(rows);
    c.view_mut((0, 0), (cpl.nrows(), cpl.c.ncols())).copy_from(&cpl.c);
    d.view_mut((0, 0), (cpl.nrows(), cpl.d.ncols())).copy_from(&cpl.d);
    off.rows_mut(0, cpl.nrows()).copy_from(&cpl.offset);
    QpCoupling { c, d, offset: off }
}

/// Attach the hybrid-zonotope free-space constraint `H x_k ∈ hz` at every
/// stage, with per-region linear costs `q_r` on the binary selectors and the
/// configured quadratic slack penalty.
pub fn attach_hybzono(
    cfg: &MpcConfig,
    base: &MultiStageMiqp,
    hz: &HybridZonotope,
    q_r: &DVector<f64>,
) -> Result<MultiStageMiqp, MpcError> {
    if base.encoding != Encoding::ConvexOnly {
        return Err(MpcError::Config("free-space constraint already attached".into()));
    }
    if hz.domain != FactorDomain::Unit {
        return Err(MpcError::Config("hybrid zonotope must be in unit factor form".into()));
    }
    if hz.dim() != cfg.n_y() {
        return Err(MpcError::Dimension("hybrid zonotope dimension != output dimension".into()));
    }
    if q_r.len() != hz.n_bin() {
        return Err(MpcError::Dimension("region cost length != binary count".into()));
    }
    let n = base.horizon();
    let ng = hz.n_gen();
    let nb = hz.n_bin();
    let ny = hz.dim();
    let nc = hz.n_cons();
    let extra = ng + nb + ny;

    let mut layouts = Vec::with_capacity(n + 1);
    let mut stages = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mut lay = base.layouts[k].clone();
        let base_nz = lay.n_vars();
        lay.xi_c = base_nz..base_nz + ng;
        lay.xi_b = lay.xi_c.end..lay.xi_c.end + nb;
        lay.sigma = lay.xi_b.end..lay.xi_b.end + ny;
        layouts.push(lay);

        let mut p = DVector::zeros(extra);
        let mut q = DVector::zeros(extra);
        let mut lo = DVector::zeros(extra);
        let mut hi = DVector::from_element(extra, 1.0);
        for i in 0..ny {
            p[ng + nb + i] = cfg.hz_slack_weight[i];
            lo[ng + nb + i] = -cfg.hz_sigma_max[i];
            hi[ng + nb + i] = cfg.hz_sigma_max[i];
        }
        for i in 0..nb {
            q[ng + i] = q_r[i];
        }
        stages.push(extend_stage(&base.qp.stages[k], &p, &q, &lo, &hi));
    }

    let mut couplings = Vec::with_capacity(n);
    for k in 0..n {
        let lay_k = &layouts[k];
        let lay_n = &layouts[k + 1];
        // stage-k rows plus, at the last coupling, the stage-N copy
        let extra_rows = (ny + nc) * if k + 1 == n { 2 } else { 1 };
        let mut cpl = widen_coupling(&base.qp.couplings[k], lay_k.n_vars(), lay_n.n_vars(), extra_rows);
        let mut r = base.qp.couplings[k].nrows();
        // [H 0] x_k - G_c xi_c - G_b xi_b + I sigma = c^hz
        place(&mut cpl.c, r, &lay_k.x, &cfg.h);
        place(&mut cpl.c, r, &lay_k.xi_c, &(-&hz.gc));
        place(&mut cpl.c, r, &lay_k.xi_b, &(-&hz.gb));
        place_identity(&mut cpl.c, r, &lay_k.sigma);
        cpl.offset.rows_mut(r, ny).copy_from(&(-&hz.c));
        r += ny;
        // A_c xi_c + A_b xi_b = b^hz
        place(&mut cpl.c, r, &lay_k.xi_c, &hz.ac);
        place(&mut cpl.c, r, &lay_k.xi_b, &hz.ab);
        cpl.offset.rows_mut(r, nc).copy_from(&(-&hz.b));
        r += nc;
        if k + 1 == n {
            place(&mut cpl.d, r, &lay_n.x, &cfg.h);
            place(&mut cpl.d, r, &lay_n.xi_c, &(-&hz.gc));
            place(&mut cpl.d, r, &lay_n.xi_b, &(-&hz.gb));
            place_identity(&mut cpl.d, r, &lay_n.sigma);
            cpl.offset.rows_mut(r, ny).copy_from(&(-&hz.c));
            r += ny;
            place(&mut cpl.d, r, &lay_n.xi_c, &hz.ac);
            place(&mut cpl.d, r, &lay_n.xi_b, &hz.ab);
            cpl.offset.rows_mut(r, nc).copy_from(&(-&hz.b));
            r += nc;
        }
        debug_assert_eq!(r, cpl.nrows());
        couplings.push(cpl);
    }

    Ok(MultiStageMiqp {
        qp: MultiStageQp { stages, couplings },
        layouts,
        n_regions: nb,
        encoding: Encoding::HybZono,
        init_x_rows: base.init_x_rows.clone(),
        init_u_rows: base.init_u_rows.clone(),
    })
}

/// Attach the Big-M free-space encoding: binary selectors with a choice
/// equality row per stage, and the per-region half-space rows
/// `H_i H x + m_i ξ_b,i ≤ h_i + m_i` as general (non-box) inequality rows.
pub fn attach_bigm(
    cfg: &MpcConfig,
    base: &MultiStageMiqp,
    enc: &BigMEncoding,
    q_r: &DVector<f64>,
) -> Result<MultiStageMiqp, MpcError> {
    if base.encoding != Encoding::ConvexOnly {
        return Err(MpcError::Config("free-space constraint already attached".into()));
    }
    let nb = enc.regions.len();
    if q_r.len() != nb {
        return Err(MpcError::Dimension("region cost length != region count".into()));
    }
    for blk in &enc.regions {
        if blk.h.ncols() != cfg.n_y() {
            return Err(MpcError::Dimension("region H-rep dimension != output dimension".into()));
        }
    }
    let n = base.horizon();

    let mut layouts = Vec::with_capacity(n + 1);
    let mut stages = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mut lay = base.layouts[k].clone();
        let base_nz = lay.n_vars();
        lay.xi_c = base_nz..base_nz;
        lay.xi_b = base_nz..base_nz + nb;
        lay.sigma = lay.xi_b.end..lay.xi_b.end;
        layouts.push(lay.clone());

        let p = DVector::zeros(nb);
        let q = q_r.clone();
        let lo = DVector::zeros(nb);
        let hi = DVector::from_element(nb, 1.0);
        let mut s = extend_stage(&base.qp.stages[k], &p, &q, &lo, &hi);

        // general rows: H_i H x + m_i xi_b,i <= h_i + m_i
        let total_rows: usize = enc.regions.iter().map(|b| b.b.len()).sum();
        let mut g = DMatrix::zeros(total_rows, lay.n_vars());
        let mut w = DVector::zeros(total_rows);
        let mut r = 0;
        for (i, blk) in enc.regions.iter().enumerate() {
            let hh = &blk.h * &cfg.h;
            g.view_mut((r, lay.x.start), (hh.nrows(), hh.ncols())).copy_from(&hh);
            for row in 0..blk.b.len() {
                g[(r + row, lay.xi_b.start + i)] = blk.m[row];
                w[r + row] = blk.b[row] + blk.m[row];
            }
            r += blk.b.len();
        }
        s.gen_g = g;
        s.gen_w = w;
        stages.push(s);
    }

    let mut couplings = Vec::with_capacity(n);
    for k in 0..n {
        let lay_k = &layouts[k];
        let lay_n = &layouts[k + 1];
        let extra_rows = if k + 1 == n { 2 } else { 1 };
        let mut cpl = widen_coupling(&base.qp.couplings[k], lay_k.n_vars(), lay_n.n_vars(), extra_rows);
        let mut r = base.qp.couplings[k].nrows();
        // choice constraint: sum xi_b = 1
        for j in lay_k.xi_b.clone() {
            cpl.c[(r, j)] = 1.0;
        }
        cpl.offset[r] = -1.0;
        r += 1;
        if k + 1 == n {
            for j in lay_n.xi_b.clone() {
                cpl.d[(r, j)] = 1.0;
            }
            cpl.offset[r] = -1.0;
        }
        couplings.push(cpl);
    }

    Ok(MultiStageMiqp {
        qp: MultiStageQp { stages, couplings },
        layouts,
        n_regions: nb,
        encoding: Encoding::BigM,
        init_x_rows: base.init_x_rows.clone(),
        init_u_rows: base.init_u_rows.clone(),
    })
}
