//! Branch-and-bound solver for the multi-stage MIQP.
//!
//! Nodes are characterized by per-stage candidate region sets. Popping a node
//! solves its QP relaxation (which, after variable elimination, is the convex
//! hull of the selected regions at each stage), then either updates the
//! incumbent, prunes, or branches. Node generation keeps the region sets
//! consistent with the reachability tables, and a variable elimination pass
//! removes binaries and continuous factors that are forced to zero, so node
//! QPs shrink as the search deepens. A modified best-bound store with a
//! priority lane supports warm-start and rounded nodes.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map_ingest::RegionHrep;
use crate::mpc::{Encoding, MultiStageMiqp, StageLayout};
use crate::qp::{self, MultiStageQp, QpCoupling, QpOptions, QpStage, QpStatus};
use crate::reach::{ReachError, ReachTables};

/// Tolerance for the point-in-region membership scan.
pub const REGION_TOL: f64 = 1e-6;
/// Coefficients and offsets below this magnitude are treated as zero during
/// variable elimination.
const ELIM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BnbError {
    #[error("problem has no binary region selection (convex-only encoding)")]
    NoBinaries,
    #[error("reachability tables cover {tables} regions but the problem has {problem}")]
    TableMismatch { tables: usize, problem: usize },
    #[error("no region is reachable from the initial position within {0} steps")]
    NoReachableRegions(usize),
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error(transparent)]
    Reach(#[from] ReachError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Absolute convergence tolerance on the bound gap.
    pub eps_a: f64,
    /// Relative convergence tolerance on the bound gap.
    pub eps_r: f64,
    /// Maximum branch-and-bound iterations (QP relaxations solved).
    pub max_iter: usize,
    pub max_time_s: f64,
    pub threads: usize,
    pub warm_start: bool,
    /// Disable the diagonal condensed-Hessian fast path in node QPs
    /// (benchmark ablation).
    #[serde(default)]
    pub force_phi_cholesky: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            eps_a: 0.1,
            eps_r: 0.01,
            max_iter: 10_000,
            max_time_s: 60.0,
            threads: 1,
            warm_start: true,
            force_phi_cholesky: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiqpStatus {
    /// Node store exhausted: incumbent is the exact optimum (up to QP tol).
    Optimal,
    /// Bound gap closed below the absolute or relative tolerance.
    TolReached,
    TimeLimit,
    IterLimit,
    Infeasible,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct BnbCounters {
    pub nodes_created: usize,
    pub nodes_pruned: usize,
    pub qp_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct MiqpResult {
    pub status: MiqpStatus,
    /// Incumbent objective j_+ (infinite when infeasible).
    pub objective: f64,
    /// Best lower bound j_- at termination.
    pub lower_bound: f64,
    /// Relative optimality gap |j_+ - j_-| / |j_+|.
    pub gap: f64,
    /// Branch-and-bound iterations (relaxations solved).
    pub iterations: usize,
    pub counters: BnbCounters,
    /// Incumbent solution in full stage layout, when one exists.
    pub z: Option<Vec<DVector<f64>>>,
    /// Optimal region per stage, for warm starting the next solve.
    pub regions: Option<Vec<usize>>,
}

/// The MIQP plus the output-space data the branching heuristics need: the
/// output map y = H x and one H-rep polytope per region.
pub struct BnbProblem {
    pub miqp: MultiStageMiqp,
    pub h: nalgebra::DMatrix<f64>,
    pub region_hreps: Vec<RegionHrep>,
}

// ---------------------------------------------------------------------------
// Variable elimination (ApplyBinvars)
// ---------------------------------------------------------------------------

/// A node QP produced by variable elimination, with the retained full-layout
/// variable indices per stage so solutions can be expanded back.
#[derive(Debug, Clone)]
pub struct NodeQp {
    pub qp: MultiStageQp,
    pub keep: Vec<Vec<usize>>,
}

impl NodeQp {
    /// Expand a reduced solution to full stage layout, zero-filling
    /// eliminated variables.
    pub fn expand(&self, layouts: &[StageLayout], z: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.keep
            .iter()
            .zip(layouts)
            .zip(z)
            .map(|((keep, layout), zk)| {
                let mut full = DVector::zeros(layout.n_vars());
                for (red, &fullidx) in keep.iter().enumerate() {
                    full[fullidx] = zk[red];
                }
                full
            })
            .collect()
    }
}

/// Mark variables forced to zero by the region selection: binaries outside
/// r_k, then (to a fixpoint) variables appearing in zero-offset equality rows
/// whose remaining coefficients all share one sign and whose variables have
/// zero lower bounds. Returns None when a constraint becomes unsatisfiable
/// (e.g. every binary of a choice row is removed).
fn eliminated_vars(miqp: &MultiStageMiqp, regions: &[Vec<usize>]) -> Option<Vec<Vec<bool>>> {
    let qp = &miqp.qp;
    let mut removed: Vec<Vec<bool>> =
        qp.stages.iter().map(|s| vec![false; s.nz()]).collect();
    for (k, r_k) in regions.iter().enumerate() {
        let xi_b = &miqp.layouts[k].xi_b;
        for r in 0..miqp.n_regions {
            if !r_k.contains(&r) {
                removed[k][xi_b.start + r] = true;
            }
        }
    }

    let mut changed = true;
    while changed {
        changed = false;
        for (i, cpl) in qp.couplings.iter().enumerate() {
            for row in 0..cpl.nrows() {
                if cpl.offset[row].abs() > ELIM_TOL {
                    continue;
                }
                let mut active: Vec<(usize, usize, f64)> = Vec::new();
                for col in 0..cpl.c.ncols() {
                    let v = cpl.c[(row, col)];
                    if v.abs() > ELIM_TOL && !removed[i][col] {
                        active.push((i, col, v));
                    }
                }
                for col in 0..cpl.d.ncols() {
                    let v = cpl.d[(row, col)];
                    if v.abs() > ELIM_TOL && !removed[i + 1][col] {
                        active.push((i + 1, col, v));
                    }
                }
                if active.is_empty() {
                    continue;
                }
                let sign = active[0].2.signum();
                let uniform = active.iter().all(|&(_, _, v)| v.signum() == sign);
                let nonneg = active
                    .iter()
                    .all(|&(k, col, _)| qp.stages[k].lo[col] >= -ELIM_TOL);
                if uniform && nonneg {
                    for (k, col, _) in active {
                        removed[k][col] = true;
                        changed = true;
                    }
                }
            }
        }
    }

    // A row whose variables are all eliminated must have zero offset.
    for (i, cpl) in qp.couplings.iter().enumerate() {
        for row in 0..cpl.nrows() {
            let any_active = (0..cpl.c.ncols())
                .any(|col| cpl.c[(row, col)].abs() > ELIM_TOL && !removed[i][col])
                || (0..cpl.d.ncols())
                    .any(|col| cpl.d[(row, col)].abs() > ELIM_TOL && !removed[i + 1][col]);
            if !any_active && cpl.offset[row].abs() > ELIM_TOL {
                return None;
            }
        }
    }
    Some(removed)
}

/// Build the QP relaxation for a region selection: binaries outside the
/// selection and continuous factors forced to zero are removed, empty rows
/// are dropped, and remaining binaries keep their [0,1] boxes. Returns None
/// when the selection is infeasible by construction.
pub fn apply_binvars(miqp: &MultiStageMiqp, regions: &[Vec<usize>]) -> Option<NodeQp> {
    let removed = eliminated_vars(miqp, regions)?;
    let qp = &miqp.qp;
    let keep: Vec<Vec<usize>> = removed
        .iter()
        .map(|r| (0..r.len()).filter(|&j| !r[j]).collect())
        .collect();

    let mut stages = Vec::with_capacity(qp.stages.len());
    for (k, s) in qp.stages.iter().enumerate() {
        let idx = &keep[k];
        let nz = idx.len();
        let sub = |v: &DVector<f64>| DVector::from_fn(nz, |j, _| v[idx[j]]);
        let mut gen_rows: Vec<usize> = Vec::new();
        for row in 0..s.gen_g.nrows() {
            let any = idx.iter().any(|&c| s.gen_g[(row, c)].abs() > ELIM_TOL);
            if any {
                gen_rows.push(row);
            } else if s.gen_w[row] < -ELIM_TOL {
                return None;
            }
        }
        let gen_g = nalgebra::DMatrix::from_fn(gen_rows.len(), nz, |r, c| {
            s.gen_g[(gen_rows[r], idx[c])]
        });
        let gen_w = DVector::from_fn(gen_rows.len(), |r, _| s.gen_w[gen_rows[r]]);
        stages.push(QpStage {
            p_diag: sub(&s.p_diag),
            q: sub(&s.q),
            lo: sub(&s.lo),
            hi: sub(&s.hi),
            gen_g,
            gen_w,
        });
    }

    let mut couplings = Vec::with_capacity(qp.couplings.len());
    for (i, cpl) in qp.couplings.iter().enumerate() {
        let (ki, kj) = (&keep[i], &keep[i + 1]);
        let rows: Vec<usize> = (0..cpl.nrows())
            .filter(|&row| {
                ki.iter().any(|&c| cpl.c[(row, c)].abs() > ELIM_TOL)
                    || kj.iter().any(|&c| cpl.d[(row, c)].abs() > ELIM_TOL)
            })
            .collect();
        let c = nalgebra::DMatrix::from_fn(rows.len(), ki.len(), |r, cc| cpl.c[(rows[r], ki[cc])]);
        let d = nalgebra::DMatrix::from_fn(rows.len(), kj.len(), |r, cc| cpl.d[(rows[r], kj[cc])]);
        let offset = DVector::from_fn(rows.len(), |r, _| cpl.offset[rows[r]]);
        couplings.push(QpCoupling { c, d, offset });
    }

    Some(NodeQp { qp: MultiStageQp { stages, couplings }, keep })
}

// ---------------------------------------------------------------------------
// Reachability consistency (MakeConsistent)
// ---------------------------------------------------------------------------

/// Intersect each stage's candidate set with the regions reachable from
/// every other stage's candidates, using boolean masks. The sweep repeats
/// until a fixpoint, since shrinking a later stage can invalidate earlier
/// survivors. Empty resulting sets are a valid outcome and mean the node can
/// be pruned.
pub fn make_consistent(regions: &mut [Vec<usize>], tables: &ReachTables) {
    loop {
        let before = regions.to_vec();
        consistency_sweep(regions, tables);
        if *regions == before {
            return;
        }
    }
}

fn consistency_sweep(regions: &mut [Vec<usize>], tables: &ReachTables) {
    let n_stage = regions.len();
    let nb = tables.n_regions();
    for k in 0..n_stage {
        let mut a_k = vec![false; nb];
        for &r in &regions[k] {
            a_k[r] = true;
        }
        for k_o in 0..n_stage {
            let mut a_r = vec![false; nb];
            let dk = k.abs_diff(k_o);
            for &r in &regions[k_o] {
                for m in tables.region_reachable(dk, r) {
                    a_r[m] = true;
                }
            }
            for i in 0..nb {
                a_k[i] &= a_r[i];
            }
        }
        regions[k] = (0..nb).filter(|&i| a_k[i]).collect();
    }
}

// ---------------------------------------------------------------------------
// Branching heuristics
// ---------------------------------------------------------------------------

/// Scan the position trajectory for the first stage whose output lies in no
/// candidate region. Returns (violated, region choices for the scanned
/// prefix, first violating stage). Stages with a single candidate are
/// integer feasible by construction and are assigned directly; containment
/// ties go to the lowest region index.
pub fn get_first_cons_violation(
    problem: &BnbProblem,
    regions: &[Vec<usize>],
    z_full: &[DVector<f64>],
) -> (bool, Vec<usize>, usize) {
    let mut chosen = Vec::with_capacity(regions.len());
    for (k, r_k) in regions.iter().enumerate() {
        if r_k.len() == 1 {
            chosen.push(r_k[0]);
            continue;
        }
        let x = z_full[k].rows(problem.miqp.layouts[k].x.start, problem.h.ncols()).clone_owned();
        let y = &problem.h * x;
        match r_k.iter().find(|&&r| problem.region_hreps[r].contains(&y, REGION_TOL)) {
            Some(&r) => chosen.push(r),
            None => return (true, chosen, k),
        }
    }
    (false, chosen, regions.len())
}

/// Estimate the cost of enforcing a singleton region sequence: binaries are
/// set to the sequence indicator, factors eliminated under the sequence are
/// zeroed, and the MIQP objective is evaluated. Heuristic only; gates the
/// push-top of a rounded node.
pub fn approx_cost(miqp: &MultiStageMiqp, z_full: &[DVector<f64>], sequence: &[usize]) -> f64 {
    let singleton: Vec<Vec<usize>> = sequence.iter().map(|&r| vec![r]).collect();
    let removed = match eliminated_vars(miqp, &singleton) {
        Some(r) => r,
        None => return f64::INFINITY,
    };
    let mut z = z_full.to_vec();
    for (k, zk) in z.iter_mut().enumerate() {
        for (j, &gone) in removed[k].iter().enumerate() {
            if gone {
                zk[j] = 0.0;
            }
        }
        let xi_b = &miqp.layouts[k].xi_b;
        for r in 0..miqp.n_regions {
            zk[xi_b.start + r] = if r == sequence[k] { 1.0 } else { 0.0 };
        }
    }
    miqp.objective(&z)
}

/// Warm-start region sequence from the previous optimal sequence: the tail
/// r_1..r_N extended by one more step. The extension stays in r_N when
/// reachable (the receding-horizon guess, exact near steady state),
/// otherwise takes the first region reachable from it. A single seed keeps
/// the incumbent heuristic at one node solve, so warm starting never costs
/// more than one extra iteration over a cold run.
pub fn make_warm_start_nodes(previous: &[usize], tables: &ReachTables) -> Vec<Vec<Vec<usize>>> {
    let r_n = *previous.last().expect("nonempty previous sequence");
    let reach = tables.region_reachable(1, r_n);
    let ext = if reach.contains(&r_n) {
        r_n
    } else {
        match reach.first() {
            Some(&r) => r,
            None => return Vec::new(),
        }
    };
    let mut seq: Vec<Vec<usize>> = previous[1..].iter().map(|&r| vec![r]).collect();
    seq.push(vec![ext]);
    vec![seq]
}

// ---------------------------------------------------------------------------
// Node store
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct StoredNode {
    seq: u64,
    bound: f64,
    regions: Vec<Vec<usize>>,
    qp: NodeQp,
}

#[derive(PartialEq)]
struct StoreKey(f64, u64);

impl Eq for StoreKey {}
impl PartialOrd for StoreKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for StoreKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Best-bound ordered store with a priority lane: pop serves the lane first,
/// else the minimum-bound node.
#[derive(Default)]
struct NodeStore {
    lane: VecDeque<StoredNode>,
    tree: BTreeMap<StoreKey, StoredNode>,
}

impl NodeStore {
    fn push(&mut self, node: StoredNode) {
        self.tree.insert(StoreKey(node.bound, node.seq), node);
    }

    fn push_top(&mut self, node: StoredNode) {
        self.lane.push_back(node);
    }

    fn pop(&mut self) -> Option<StoredNode> {
        if let Some(n) = self.lane.pop_front() {
            return Some(n);
        }
        let key = self.tree.keys().next().map(|k| StoreKey(k.0, k.1))?;
        self.tree.remove(&key)
    }

    fn prune_above(&mut self, limit: f64) -> usize {
        let before = self.len();
        self.lane.retain(|n| n.bound <= limit);
        self.tree.retain(|k, _| k.0 <= limit);
        before - self.len()
    }

    fn min_bound(&self) -> Option<f64> {
        let lane = self.lane.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
        let tree = self.tree.keys().next().map(|k| k.0).unwrap_or(f64::INFINITY);
        let m = lane.min(tree);
        if self.len() == 0 { None } else { Some(m) }
    }

    fn len(&self) -> usize {
        self.lane.len() + self.tree.len()
    }
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

struct Shared {
    store: NodeStore,
    next_seq: u64,
    j_plus: f64,
    incumbent_z: Option<Vec<DVector<f64>>>,
    incumbent_regions: Option<Vec<usize>>,
    iterations: usize,
    counters: BnbCounters,
    in_flight: HashMap<u64, f64>,
    stop: Option<MiqpStatus>,
}

impl Shared {
    fn j_minus(&self) -> f64 {
        let store = self.store.min_bound().unwrap_or(f64::INFINITY);
        let flight = self.in_flight.values().copied().fold(f64::INFINITY, f64::min);
        let m = store.min(flight);
        if m.is_finite() || m == f64::NEG_INFINITY {
            m.min(self.j_plus)
        } else {
            self.j_plus
        }
    }

    fn push_node(&mut self, regions: Vec<Vec<usize>>, bound: f64, qp: NodeQp, top: bool) {
        let node = StoredNode { seq: self.next_seq, bound, regions, qp };
        self.next_seq += 1;
        self.counters.nodes_created += 1;
        if top {
            self.store.push_top(node);
        } else {
            self.store.push(node);
        }
    }
}

fn converged(j_plus: f64, j_minus: f64, settings: &SolverSettings) -> bool {
    if !j_plus.is_finite() {
        return false;
    }
    let gap = (j_plus - j_minus).abs();
    gap / j_plus.abs() < settings.eps_r || gap < settings.eps_a
}

fn depth(regions: &[Vec<usize>]) -> usize {
    regions.iter().filter(|r| r.len() == 1).count()
}

/// Create consistent, reduced children fixing/excluding the region with the
/// largest relaxed binary value at stage k (ties to the lowest index).
fn branch_at_k(
    s: &mut Shared,
    problem: &BnbProblem,
    tables: &ReachTables,
    node: &StoredNode,
    z_full: &[DVector<f64>],
    k: usize,
    bound: f64,
) {
    let xi_b = &problem.miqp.layouts[k].xi_b;
    let r_max = node.regions[k]
        .iter()
        .copied()
        .max_by(|&a, &b| {
            z_full[k][xi_b.start + a]
                .partial_cmp(&z_full[k][xi_b.start + b])
                .unwrap_or(std::cmp::Ordering::Equal)
                // keep the lowest index on ties
                .then(b.cmp(&a))
        })
        .expect("branching on nonempty region set");

    let mut child_b = node.regions.clone();
    child_b[k] = vec![r_max];
    let mut child_r = node.regions.clone();
    child_r[k].retain(|&r| r != r_max);

    for mut regions in [child_b, child_r] {
        make_consistent(&mut regions, tables);
        if regions.iter().any(|r| r.is_empty()) {
            continue;
        }
        if let Some(qp) = apply_binvars(&problem.miqp, &regions) {
            s.push_node(regions, bound, qp, false);
        }
    }
}

/// Branch at the stage whose binaries are furthest from integer values,
/// restricted to stages still holding more than one candidate.
fn branch_most_fractional(
    s: &mut Shared,
    problem: &BnbProblem,
    tables: &ReachTables,
    node: &StoredNode,
    z_full: &[DVector<f64>],
    bound: f64,
) {
    let mut k_best = None;
    let mut frac_best = -1.0;
    for (k, r_k) in node.regions.iter().enumerate() {
        if r_k.len() <= 1 {
            continue;
        }
        let xi_b = &problem.miqp.layouts[k].xi_b;
        let frac = r_k
            .iter()
            .map(|&r| {
                let v = z_full[k][xi_b.start + r];
                (v - v.round()).abs()
            })
            .fold(0.0, f64::max);
        if frac > frac_best {
            frac_best = frac;
            k_best = Some(k);
        }
    }
    if let Some(k) = k_best {
        branch_at_k(s, problem, tables, node, z_full, k, bound);
    }
}

/// Core branch-and-bound step for a solved node: prune, update the incumbent
/// at full depth, or push a rounded candidate and branch.
fn process_solved(
    s: &mut Shared,
    problem: &BnbProblem,
    tables: &ReachTables,
    node: StoredNode,
    result: Result<qp::QpResult, qp::QpError>,
) {
    let res = match result {
        Ok(r) => r,
        Err(_) => {
            s.counters.nodes_pruned += 1;
            return;
        }
    };
    s.counters.qp_iterations += res.iterations;
    if matches!(res.status, QpStatus::Infeasible | QpStatus::Numerical) {
        s.counters.nodes_pruned += 1;
        return;
    }
    let j = res.objective;
    if j > s.j_plus {
        s.counters.nodes_pruned += 1;
        return;
    }
    let n_stage = node.regions.len();
    let z_full = node.qp.expand(&problem.miqp.layouts, &res.iterate.z);

    if depth(&node.regions) == n_stage {
        if j < s.j_plus {
            s.j_plus = j;
            s.incumbent_z = Some(z_full);
            s.incumbent_regions = Some(node.regions.iter().map(|r| r[0]).collect());
            s.counters.nodes_pruned += s.store.prune_above(j);
        }
        return;
    }

    let (violated, prefix, k_v) = get_first_cons_violation(problem, &node.regions, &z_full);
    if violated {
        branch_at_k(s, problem, tables, &node, &z_full, k_v, j);
    } else {
        let j_a = approx_cost(&problem.miqp, &z_full, &prefix);
        if j_a < s.j_plus {
            let rounded: Vec<Vec<usize>> = prefix.iter().map(|&r| vec![r]).collect();
            if let Some(qp) = apply_binvars(&problem.miqp, &rounded) {
                s.push_node(rounded, j, qp, true);
            }
        }
        branch_most_fractional(s, problem, tables, &node, &z_full, j);
    }
}

fn worker(
    problem: &BnbProblem,
    tables: &ReachTables,
    settings: &SolverSettings,
    qp_opts: &QpOptions,
    shared: &Mutex<Shared>,
    deadline: Instant,
) {
    loop {
        let node = {
            let mut s = shared.lock().unwrap();
            if s.stop.is_some() {
                return;
            }
            if s.iterations >= settings.max_iter {
                s.stop = Some(MiqpStatus::IterLimit);
                return;
            }
            if Instant::now() >= deadline {
                s.stop = Some(MiqpStatus::TimeLimit);
                return;
            }
            match s.store.pop() {
                Some(n) => {
                    s.in_flight.insert(n.seq, n.bound);
                    n
                }
                None => {
                    if s.in_flight.is_empty() {
                        return;
                    }
                    drop(s);
                    std::thread::sleep(Duration::from_micros(200));
                    continue;
                }
            }
        };
        let result = qp::solve(&node.qp.qp, qp_opts, None);
        let mut s = shared.lock().unwrap();
        s.in_flight.remove(&node.seq);
        s.iterations += 1;
        process_solved(&mut s, problem, tables, node, result);
        if converged(s.j_plus, s.j_minus(), settings) {
            let exhausted = s.store.len() == 0 && s.in_flight.is_empty();
            s.stop = Some(if exhausted { MiqpStatus::Optimal } else { MiqpStatus::TolReached });
        }
    }
}

fn infeasible_result() -> MiqpResult {
    MiqpResult {
        status: MiqpStatus::Infeasible,
        objective: f64::INFINITY,
        lower_bound: f64::INFINITY,
        gap: f64::INFINITY,
        iterations: 0,
        counters: BnbCounters::default(),
        z: None,
        regions: None,
    }
}

/// Solve the MIQP by branch and bound. The root node covers the regions
/// reachable from the current position at each step; `warm` optionally gives
/// the optimal region sequence of the previous receding-horizon solve.
pub fn solve_miqp(
    problem: &BnbProblem,
    tables: &ReachTables,
    settings: &SolverSettings,
    warm: Option<&[usize]>,
) -> Result<MiqpResult, BnbError> {
    if problem.miqp.encoding == Encoding::ConvexOnly || problem.miqp.n_regions == 0 {
        return Err(BnbError::NoBinaries);
    }
    if tables.n_regions() != problem.miqp.n_regions {
        return Err(BnbError::TableMismatch {
            tables: tables.n_regions(),
            problem: problem.miqp.n_regions,
        });
    }
    if settings.eps_a <= 0.0 || settings.eps_r <= 0.0 {
        return Err(BnbError::Settings("tolerances must be positive".into()));
    }
    let n_stage = problem.miqp.horizon() + 1;

    let mut root: Vec<Vec<usize>> = Vec::with_capacity(n_stage);
    for k in 0..n_stage {
        let r = tables.point_reachable(k)?;
        if r.is_empty() {
            return Err(BnbError::NoReachableRegions(k));
        }
        root.push(r);
    }
    make_consistent(&mut root, tables);
    if root.iter().any(|r| r.is_empty()) {
        return Ok(infeasible_result());
    }
    let root_qp = match apply_binvars(&problem.miqp, &root) {
        Some(qp) => qp,
        None => return Ok(infeasible_result()),
    };

    let mut shared = Shared {
        store: NodeStore::default(),
        next_seq: 0,
        j_plus: f64::INFINITY,
        incumbent_z: None,
        incumbent_regions: None,
        iterations: 0,
        counters: BnbCounters::default(),
        in_flight: HashMap::new(),
        stop: None,
    };
    shared.push_node(root, f64::NEG_INFINITY, root_qp, false);

    if settings.warm_start {
        if let Some(prev) = warm {
            if prev.len() == n_stage {
                // Warm nodes carry bound -inf and go through the priority
                // lane so an incumbent is established early.
                for seq in make_warm_start_nodes(prev, tables) {
                    if let Some(qp) = apply_binvars(&problem.miqp, &seq) {
                        shared.push_node(seq, f64::NEG_INFINITY, qp, true);
                    }
                }
            }
        }
    }

    let deadline = Instant::now() + Duration::from_secs_f64(settings.max_time_s);
    let qp_opts = QpOptions {
        force_phi_cholesky: settings.force_phi_cholesky,
        ..QpOptions::default()
    };
    let shared = Mutex::new(shared);
    let threads = settings.threads.max(1);
    if threads == 1 {
        worker(problem, tables, settings, &qp_opts, &shared, deadline);
    } else {
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| worker(problem, tables, settings, &qp_opts, &shared, deadline));
            }
        });
    }

    let s = shared.into_inner().unwrap();
    let exhausted = s.store.len() == 0 && s.in_flight.is_empty() && s.stop.is_none();
    let status = match s.stop {
        Some(st) => st,
        None if s.incumbent_z.is_some() => MiqpStatus::Optimal,
        None => MiqpStatus::Infeasible,
    };
    let lower_bound = if exhausted { s.j_plus } else { s.j_minus() };
    let gap = if s.j_plus.is_finite() {
        (s.j_plus - lower_bound).abs() / s.j_plus.abs()
    } else {
        f64::INFINITY
    };
    Ok(MiqpResult {
        status,
        objective: s.j_plus,
        lower_bound,
        gap,
        iterations: s.iterations,
        counters: s.counters,
        z: s.incumbent_z,
        regions: s.incumbent_regions,
    })
}
