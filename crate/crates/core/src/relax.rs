//! Assembly of the convex relaxation tiers as cone programs.
//!
//! All tiers share the same skeleton over an instance: variables `x >= 0`
//! and `z in [0,1]`, big-M rows `x_i <= bigM * z_i`, the linear data term
//! `-2 y'x`, linear prior costs, and the structural prior rows. They differ
//! in how the quadratic `x'Qx` is represented:
//!
//! - `l1`: raw squares, no coupling to `z` beyond big-M (the plain
//!   box relaxation of the integer model).
//! - `persp`: node squares become perspective terms `x_i^2 / z_i`.
//! - `pairwise`: perspective nodes plus the exact two-variable hull of each
//!   edge difference term.
//! - `decomp`: a lifted master over `Gamma ~ x x'` with per-edge cut
//!   families indexed by a weight `d`; see [`MasterModel::register_cut`].
//!   With every cut set at `{1}` it coincides with `pairwise`; the
//!   cutting-surface loop then tightens it.
//!
//! Reported objectives include the `||y||^2` constant, so they are directly
//! comparable with [`ProblemInstance::objective_value`].

use serde::{Deserialize, Serialize};

use crate::cone::{
    solve_cone_program, ConeBlock, ConeBlockKind, ConeProgram, ConeStatus, LinExpr, LinRow,
    ProgramBuilder,
};
use crate::hull::PairWeights;
use crate::model::{PriorKind, ProblemInstance, SolveStatus, SparsityPriors};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxationKind {
    L1,
    Persp,
    Pairwise,
    Decomp,
}

impl RelaxationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelaxationKind::L1 => "l1",
            RelaxationKind::Persp => "persp",
            RelaxationKind::Pairwise => "pairwise",
            RelaxationKind::Decomp => "decomp",
        }
    }
}

impl std::fmt::Display for RelaxationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RelaxationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "l1" => Ok(RelaxationKind::L1),
            "persp" => Ok(RelaxationKind::Persp),
            "pairwise" => Ok(RelaxationKind::Pairwise),
            "decomp" => Ok(RelaxationKind::Decomp),
            other => Err(Error::InvalidInput(format!(
                "unknown relaxation kind {other:?} (expected l1|persp|pairwise|decomp)"
            ))),
        }
    }
}

/// Optimal point of one relaxation solve, in instance coordinates.
#[derive(Debug, Clone)]
pub struct RelaxSolution {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// `Gamma_ii` values; empty except for the decomp master.
    pub gamma_diag: Vec<f64>,
    /// `Gamma_ij` per graph edge, in edge order; empty except for decomp.
    pub gamma_edge: Vec<f64>,
    /// Relaxation value including the `||y||^2` constant.
    pub objective: f64,
    pub status: SolveStatus,
    pub cone_iterations: usize,
    pub solve_time: f64,
}

#[derive(Debug, Clone, Copy)]
struct VarIds {
    x0: usize,
    z0: usize,
    /// First per-node quadratic head; heads are spaced 3 apart.
    node0: usize,
    /// First lifted edge variable (decomp only).
    gamma_e0: usize,
}

/// A relaxation instance held as a mutable cone program. For the decomp
/// kind the model additionally tracks the per-edge cut sets, and
/// [`register_cut`](MasterModel::register_cut) appends cut blocks in place.
#[derive(Debug, Clone)]
pub struct MasterModel {
    program: ConeProgram,
    inst: ProblemInstance,
    kind: RelaxationKind,
    ids: VarIds,
    delta: Vec<Vec<f64>>,
    feas_tol: f64,
    gap_tol: f64,
}

pub fn build_relaxation(inst: &ProblemInstance, kind: RelaxationKind) -> MasterModel {
    build_relaxation_adjusted(inst, kind, &vec![0.0; inst.n()])
}

/// Like [`build_relaxation`] with an extra linear objective term
/// `sum_i x_linear[i] * x_i`, used by the dual decomposition to price
/// boundary variables.
pub fn build_relaxation_adjusted(
    inst: &ProblemInstance,
    kind: RelaxationKind,
    x_linear: &[f64],
) -> MasterModel {
    assert_eq!(x_linear.len(), inst.n(), "x_linear length mismatch");
    let n = inst.n();
    let lambda = inst.lambda;
    let edges = inst.graph.edges().to_vec();
    let mut b = ProgramBuilder::new();

    let x0 = b.nonneg_run(n, "x");
    let z0 = b.nonneg_run(n, "z");
    let zub0 = b.nonneg_run(n, "zub");
    let bm0 = b.nonneg_run(n, "bm");
    for i in 0..n {
        b.eq(
            LinExpr::var(z0 + i).plus(zub0 + i, 1.0),
            LinExpr::constant(1.0),
        );
        b.eq_zero(
            LinExpr::scaled(z0 + i, inst.big_m)
                .plus(x0 + i, -1.0)
                .plus(bm0 + i, -1.0),
        );
    }
    let z_cost = inst.priors.z_cost();
    for i in 0..n {
        b.add_cost(x0 + i, -2.0 * inst.y[i] + inst.priors.mu1 + x_linear[i]);
        b.add_cost(z0 + i, z_cost);
    }

    let node0 = b.num_vars();
    match kind {
        RelaxationKind::L1 => {
            for i in 0..n {
                let t = b.rotated_epigraph(LinExpr::constant(1.0), LinExpr::var(x0 + i), "fit");
                b.add_cost(t, 1.0);
            }
        }
        RelaxationKind::Persp | RelaxationKind::Pairwise => {
            for i in 0..n {
                let t = b.rotated_epigraph(LinExpr::var(z0 + i), LinExpr::var(x0 + i), "fit");
                b.add_cost(t, 1.0);
            }
        }
        RelaxationKind::Decomp => {
            let diag = inst.mmatrix().diag;
            for i in 0..n {
                let t = b.rotated_epigraph(LinExpr::var(z0 + i), LinExpr::var(x0 + i), "gam");
                b.add_cost(t, diag[i]);
            }
        }
    }

    let mut gamma_e0 = 0;
    match kind {
        RelaxationKind::L1 | RelaxationKind::Persp => {
            for &(i, j) in &edges {
                let t = b.rotated_epigraph(
                    LinExpr::constant(1.0),
                    LinExpr::var(x0 + i).plus(x0 + j, -1.0),
                    "smooth",
                );
                b.add_cost(t, lambda);
            }
        }
        RelaxationKind::Pairwise => {
            for &(i, j) in &edges {
                let s = x2_hull_block(
                    &mut b,
                    LinExpr::var(z0 + i),
                    LinExpr::var(z0 + j),
                    LinExpr::var(x0 + i),
                    LinExpr::var(x0 + j),
                );
                b.add_cost(s, lambda);
            }
        }
        RelaxationKind::Decomp => {
            // Lifted products per edge; maximized implicitly against the cut
            // rows through their negative objective coefficient.
            gamma_e0 = b.nonneg_run(edges.len(), "gamE");
            for e in 0..edges.len() {
                b.add_cost(gamma_e0 + e, -2.0 * lambda);
            }
        }
    }

    add_prior_rows(&mut b, n, z0, &inst.priors);

    let mut model = MasterModel {
        program: b.finalize(),
        inst: inst.clone(),
        kind,
        ids: VarIds {
            x0,
            z0,
            node0,
            gamma_e0,
        },
        delta: vec![Vec::new(); edges.len()],
        feas_tol: 1e-8,
        gap_tol: 1e-8,
    };
    if kind == RelaxationKind::Decomp {
        for (i, j) in edges {
            model.register_cut(i, j, 1.0);
        }
    }
    model
}

/// Structural rows for the combinatorial priors; the linear weights
/// (`kappa`, `mu0`, `mu1`) are objective terms added by the tier builder.
fn add_prior_rows(b: &mut ProgramBuilder, n: usize, z0: usize, priors: &SparsityPriors) {
    let card_row = |b: &mut ProgramBuilder, k: usize| {
        let mut expr = LinExpr::constant(0.0);
        for i in 0..n {
            expr = expr.plus(z0 + i, 1.0);
        }
        b.le(expr, LinExpr::constant(k as f64), "card");
    };
    match priors.kind {
        PriorKind::None | PriorKind::Regularized { .. } => {}
        PriorKind::Cardinality { k } => card_row(b, k),
        PriorKind::Spikes { k, s, h } => {
            card_row(b, k);
            // |z_{i+1} - z_i| = p_i + q_i at any optimum of the budget row.
            let p0 = b.nonneg_run(n.saturating_sub(1), "tvp");
            let q0 = b.nonneg_run(n.saturating_sub(1), "tvq");
            let mut budget = LinExpr::constant(0.0);
            for i in 0..n.saturating_sub(1) {
                b.eq_zero(
                    LinExpr::var(p0 + i)
                        .plus(q0 + i, -1.0)
                        .plus(z0 + i + 1, -1.0)
                        .plus(z0 + i, 1.0),
                );
                budget = budget.plus(p0 + i, 1.0).plus(q0 + i, 1.0);
            }
            b.le(budget, LinExpr::constant(2.0 * s as f64), "tv");
            // Active indices sit inside runs of at least h active neighbors.
            for l in 0..n {
                let lo = l.saturating_sub(h);
                let hi = (l + h).min(n - 1);
                let mut window = LinExpr::scaled(z0 + l, -(h as f64));
                for i in lo..=hi {
                    window = window.plus(z0 + i, 1.0);
                }
                b.ge(window, LinExpr::constant(0.0), "patch");
            }
        }
    }
}

/// Appends the structural prior rows to an already-built model. The tier
/// builders call this with the instance priors; calling it again stacks
/// additional (possibly redundant) constraint rows.
pub fn add_prior_constraints(m: &mut MasterModel, priors: &SparsityPriors) {
    let n = m.inst.n();
    let mut b = ProgramBuilder::new();
    // Build rows against a builder with matching variable ids, then graft
    // the fresh variables and rows onto the existing program.
    let offset = m.program.num_vars;
    add_prior_rows(&mut b, n, m.ids.z0, priors);
    let fragment = b.finalize();
    let remap = |j: usize| {
        if j < m.ids.z0 + n {
            j
        } else {
            j - (m.ids.z0 + n) + offset
        }
    };
    // Fresh variables in the fragment start right after the z run.
    m.program.num_vars += fragment.num_vars.saturating_sub(m.ids.z0 + n);
    for blk in fragment.cones {
        m.program.cones.push(blk);
    }
    for row in fragment.rows {
        m.program.rows.push(LinRow {
            coeffs: row.coeffs.iter().map(|&(j, v)| (remap(j), v)).collect(),
            rhs: row.rhs,
        });
    }
}

/// Epigraph of the edge hull function `f`: emits two rotated cones sharing
/// a head `s` with `s z_1 >= v^2` for `v >= x_1 - x_2` and `s z_2 >= w^2`
/// for `w >= x_2 - x_1`; minimizing `s` over the block yields `f(z, x)`.
/// Returns the shared head variable.
pub fn x2_hull_block(
    b: &mut ProgramBuilder,
    z1: LinExpr,
    z2: LinExpr,
    x1: LinExpr,
    x2: LinExpr,
) -> usize {
    let (a1, b1, c1) = b.rotated("fpos");
    let (a2, b2, c2) = b.rotated("fneg");
    let p1 = b.nonneg("fs1");
    let p2 = b.nonneg("fs2");
    b.eq_zero(LinExpr::var(a2).plus(a1, -1.0));
    b.eq(LinExpr::var(b1), z1);
    b.eq(LinExpr::var(b2), z2);
    let mut neg_x1 = x1.clone();
    for t in neg_x1.terms.iter_mut() {
        t.1 = -t.1;
    }
    neg_x1.constant = -neg_x1.constant;
    let mut neg_x2 = x2.clone();
    for t in neg_x2.terms.iter_mut() {
        t.1 = -t.1;
    }
    neg_x2.constant = -neg_x2.constant;
    // c1 = x1 - x2 + p1, c2 = x2 - x1 + p2.
    let mut row1 = LinExpr::var(c1).plus(p1, -1.0);
    row1.terms.extend(neg_x1.terms.clone());
    row1.terms.extend(x2.terms.clone());
    row1.constant += neg_x1.constant + x2.constant;
    b.eq_zero(row1);
    let mut row2 = LinExpr::var(c2).plus(p2, -1.0);
    row2.terms.extend(neg_x2.terms);
    row2.terms.extend(x1.terms);
    row2.constant += neg_x2.constant + x1.constant;
    b.eq_zero(row2);
    a1
}

/// Epigraph of the weighted pair hull function `g(.; d)`: the perspective
/// pair plus two scaled `f` blocks combined by the decomposition budgets.
/// Returns the variable `s` with `min s = g(z, x; d)` over the block.
pub fn z2_hull_block(
    b: &mut ProgramBuilder,
    z1: LinExpr,
    z2: LinExpr,
    x1: LinExpr,
    x2: LinExpr,
    d: PairWeights,
) -> usize {
    let (d1, d2) = (d.d1(), d.d2());
    let s = b.nonneg("hull_s");
    let s1 = b.rotated_epigraph(z1.clone(), x1.clone(), "hp1");
    let s2 = b.rotated_epigraph(z2.clone(), x2.clone(), "hp2");
    // q1 >= f(z1, z2, x1, x2/d1), via d1*v >= d1*x1 - x2 in each sign.
    let q1 = {
        let (qa, qb, qc) = b.rotated("hq1a");
        let (qa2, qb2, qc2) = b.rotated("hq1b");
        let p1 = b.nonneg("hq1s1");
        let p2 = b.nonneg("hq1s2");
        b.eq_zero(LinExpr::var(qa2).plus(qa, -1.0));
        b.eq(LinExpr::var(qb), z1.clone());
        b.eq(LinExpr::var(qb2), z2.clone());
        let mut r1 = LinExpr::scaled(qc, d1).plus(p1, -1.0);
        for &(j, v) in &x1.terms {
            r1 = r1.plus(j, -d1 * v);
        }
        for &(j, v) in &x2.terms {
            r1 = r1.plus(j, v);
        }
        r1.constant += -d1 * x1.constant + x2.constant;
        b.eq_zero(r1);
        let mut r2 = LinExpr::scaled(qc2, d1).plus(p2, -1.0);
        for &(j, v) in &x1.terms {
            r2 = r2.plus(j, d1 * v);
        }
        for &(j, v) in &x2.terms {
            r2 = r2.plus(j, -v);
        }
        r2.constant += d1 * x1.constant - x2.constant;
        b.eq_zero(r2);
        qa
    };
    b.ge(
        LinExpr::var(s)
            .plus(q1, -d1)
            .plus(s2, -(d2 - 1.0 / d1)),
        LinExpr::constant(0.0),
        "hb1",
    );
    // q2 >= f(z1, z2, x1/d2, x2), via d2*w >= x1 - d2*x2 in each sign.
    let q2 = {
        let (qa, qb, qc) = b.rotated("hq2a");
        let (qa2, qb2, qc2) = b.rotated("hq2b");
        let p1 = b.nonneg("hq2s1");
        let p2 = b.nonneg("hq2s2");
        b.eq_zero(LinExpr::var(qa2).plus(qa, -1.0));
        b.eq(LinExpr::var(qb), z1);
        b.eq(LinExpr::var(qb2), z2);
        let mut r1 = LinExpr::scaled(qc, d2).plus(p1, -1.0);
        for &(j, v) in &x1.terms {
            r1 = r1.plus(j, -v);
        }
        for &(j, v) in &x2.terms {
            r1 = r1.plus(j, d2 * v);
        }
        r1.constant += -x1.constant + d2 * x2.constant;
        b.eq_zero(r1);
        let mut r2 = LinExpr::scaled(qc2, d2).plus(p2, -1.0);
        for &(j, v) in &x1.terms {
            r2 = r2.plus(j, v);
        }
        for &(j, v) in &x2.terms {
            r2 = r2.plus(j, -d2 * v);
        }
        r2.constant += x1.constant - d2 * x2.constant;
        b.eq_zero(r2);
        qa
    };
    b.ge(
        LinExpr::var(s)
            .plus(q2, -d2)
            .plus(s1, -(d1 - 1.0 / d2)),
        LinExpr::constant(0.0),
        "hb2",
    );
    s
}

impl MasterModel {
    pub fn kind(&self) -> RelaxationKind {
        self.kind
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.inst
    }

    pub fn program(&self) -> &ConeProgram {
        &self.program
    }

    /// Registered cut weights per edge, in graph edge order.
    pub fn delta_sets(&self) -> &[Vec<f64>] {
        &self.delta
    }

    pub fn num_cuts(&self) -> usize {
        self.delta.iter().map(Vec::len).sum()
    }

    pub fn set_tolerances(&mut self, feas_tol: f64, gap_tol: f64) {
        self.feas_tol = feas_tol;
        self.gap_tol = gap_tol;
    }

    fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.inst.graph.edges().binary_search(&(i, j)).ok()
    }

    /// Adds the cut family member `d` for edge `{i, j}` to the master:
    /// two rotated cones representing `s >= f(z_i, z_j, x_i, x_j / d)` and
    /// the linear row `d*s <= d*G_ii - 2*G_ij + G_jj/d`. Duplicate weights
    /// (within 1e-9 relative) are ignored; returns whether the program grew.
    pub fn register_cut(&mut self, i: usize, j: usize, d: f64) -> bool {
        assert!(
            self.kind == RelaxationKind::Decomp,
            "cuts only apply to the decomp master"
        );
        assert!(d > 0.0 && d.is_finite(), "cut weight must be positive");
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let e = self
            .edge_index(lo, hi)
            .unwrap_or_else(|| panic!("no edge {{{lo}, {hi}}} in the instance graph"));
        if self.delta[e]
            .iter()
            .any(|&d0| (d - d0).abs() <= 1e-9 * d0.max(d))
        {
            return false;
        }
        let ids = self.ids;
        let p = &mut self.program;
        let base = p.num_vars;
        p.cones.push(ConeBlock {
            kind: ConeBlockKind::RotatedSecondOrder,
            len: 3,
        });
        p.cones.push(ConeBlock {
            kind: ConeBlockKind::RotatedSecondOrder,
            len: 3,
        });
        p.cones.push(ConeBlock {
            kind: ConeBlockKind::NonNeg,
            len: 3,
        });
        p.num_vars += 9;
        let (a1, b1, c1) = (base, base + 1, base + 2);
        let (a2, b2, c2) = (base + 3, base + 4, base + 5);
        let (p1, p2, q) = (base + 6, base + 7, base + 8);
        let (xi, xj) = (ids.x0 + lo, ids.x0 + hi);
        let (zi, zj) = (ids.z0 + lo, ids.z0 + hi);
        let (gi, gj) = (ids.node0 + 3 * lo, ids.node0 + 3 * hi);
        let ge = ids.gamma_e0 + e;
        let inv = 1.0 / d;
        p.rows.push(LinRow {
            coeffs: vec![(a1, -1.0), (a2, 1.0)],
            rhs: 0.0,
        });
        p.rows.push(LinRow {
            coeffs: vec![(b1, 1.0), (zi, -1.0)],
            rhs: 0.0,
        });
        p.rows.push(LinRow {
            coeffs: vec![(b2, 1.0), (zj, -1.0)],
            rhs: 0.0,
        });
        p.rows.push(LinRow {
            coeffs: vec![(c1, 1.0), (xi, -1.0), (xj, inv), (p1, -1.0)],
            rhs: 0.0,
        });
        p.rows.push(LinRow {
            coeffs: vec![(c2, 1.0), (xi, 1.0), (xj, -inv), (p2, -1.0)],
            rhs: 0.0,
        });
        p.rows.push(LinRow {
            coeffs: vec![(a1, d), (q, 1.0), (gi, -d), (ge, 2.0), (gj, -inv)],
            rhs: 0.0,
        });
        self.delta[e].push(d);
        true
    }

    pub fn solve(&self) -> RelaxSolution {
        let sol = solve_cone_program(&self.program, self.feas_tol, self.gap_tol);
        let n = self.inst.n();
        let num_edges = self.inst.graph.num_edges();
        let status = match sol.status {
            ConeStatus::Optimal => SolveStatus::Optimal,
            ConeStatus::MaxIter => SolveStatus::IterationLimit,
            ConeStatus::Infeasible => SolveStatus::Infeasible,
            ConeStatus::Unbounded | ConeStatus::NumericalFailure => SolveStatus::NumericalFailure,
        };
        let ids = self.ids;
        let take = |base: usize, len: usize, stride: usize| -> Vec<f64> {
            (0..len).map(|i| sol.primal[base + stride * i]).collect()
        };
        let (gamma_diag, gamma_edge) = if self.kind == RelaxationKind::Decomp {
            (
                take(ids.node0, n, 3),
                take(ids.gamma_e0, num_edges, 1),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        RelaxSolution {
            x: take(ids.x0, n, 1),
            z: take(ids.z0, n, 1),
            gamma_diag,
            gamma_edge,
            objective: self.inst.constant() + sol.objective,
            status,
            cone_iterations: sol.iterations,
            solve_time: sol.solve_time,
        }
    }
}

/// One-shot build and solve of a tier.
pub fn solve_relaxation(inst: &ProblemInstance, kind: RelaxationKind) -> RelaxSolution {
    build_relaxation(inst, kind).solve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AdjacencyGraph;
    use rand::{Rng, SeedableRng};

    fn example1() -> ProblemInstance {
        ProblemInstance::chain(
            vec![0.4, 1.0],
            0.5,
            SparsityPriors::regularized(0.5),
        )
        .unwrap()
        .with_big_m(1.0)
        .unwrap()
    }

    fn example2() -> ProblemInstance {
        ProblemInstance::chain(
            vec![0.3, 0.7, 1.0],
            1.0,
            SparsityPriors::regularized(0.5),
        )
        .unwrap()
        .with_big_m(1.0)
        .unwrap()
    }

    #[test]
    fn l1_tier_solves_two_point_instance() {
        // Box relaxation optimum solves 3x1 - x2 = 0.3, 3x2 - x1 = 1.5 with
        // z = x (the support cost pushes z down onto the big-M bound).
        let sol = solve_relaxation(&example1(), RelaxationKind::L1);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 0.3).abs() < 2e-4, "x = {:?}", sol.x);
        assert!((sol.x[1] - 0.6).abs() < 2e-4);
        assert!((sol.z[0] - 0.3).abs() < 2e-4, "z = {:?}", sol.z);
        assert!((sol.z[1] - 0.6).abs() < 2e-4);
        assert!((sol.objective - 0.665).abs() < 1e-5, "obj = {}", sol.objective);
    }

    #[test]
    fn persp_tier_solves_two_point_instance() {
        // Stationarity of -2x + x^2/z + x^2/2 + z/2 gives x2 = 2 - sqrt(2),
        // z2 = sqrt(2) x2, first coordinate zero.
        let sol = solve_relaxation(&example1(), RelaxationKind::Persp);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let x2 = 2.0 - std::f64::consts::SQRT_2;
        assert!(sol.x[0].abs() < 1e-4, "x = {:?}", sol.x);
        assert!((sol.x[1] - x2).abs() < 1e-4);
        assert!((sol.z[1] - std::f64::consts::SQRT_2 * x2).abs() < 1e-4);
        assert!((sol.objective - 0.988_43).abs() < 1e-4, "obj = {}", sol.objective);
    }

    #[test]
    fn pairwise_tier_solves_two_point_instance() {
        let sol = solve_relaxation(&example1(), RelaxationKind::Pairwise);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.z[0] - 0.11).abs() < 1e-2, "z = {:?}", sol.z);
        assert!((sol.z[1] - 1.0).abs() < 1e-2);
        assert!((sol.x[0] - 0.08).abs() < 1e-2, "x = {:?}", sol.x);
        assert!((sol.x[1] - 0.69).abs() < 1e-2);
        assert!((sol.objective - 0.991).abs() < 1e-2, "obj = {}", sol.objective);
    }

    #[test]
    fn persp_tier_solves_three_point_instance() {
        let sol = solve_relaxation(&example2(), RelaxationKind::Persp);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 1.413).abs() < 1e-2, "obj = {}", sol.objective);
        assert!(sol.z[0].abs() < 1e-2, "z = {:?}", sol.z);
        assert!((sol.z[1] - 0.40).abs() < 2e-2);
        assert!((sol.z[2] - 0.82).abs() < 2e-2);
    }

    #[test]
    fn master_at_unit_weights_matches_pairwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let n = 5;
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let inst = ProblemInstance::chain(
                y,
                0.7,
                SparsityPriors::cardinality(3).with_kappa(0.05),
            )
            .unwrap();
            let pw = solve_relaxation(&inst, RelaxationKind::Pairwise);
            let master = solve_relaxation(&inst, RelaxationKind::Decomp);
            assert_eq!(pw.status, SolveStatus::Optimal);
            assert_eq!(master.status, SolveStatus::Optimal);
            assert!(
                (pw.objective - master.objective).abs() < 1e-6,
                "pairwise {} vs master {}",
                pw.objective,
                master.objective
            );
        }
    }

    #[test]
    fn register_cut_is_idempotent_and_grows_program() {
        let inst = example2();
        let mut m = build_relaxation(&inst, RelaxationKind::Decomp);
        let vars = m.program().num_vars;
        let rows = m.program().num_rows();
        assert!(!m.register_cut(0, 1, 1.0));
        assert!(!m.register_cut(0, 1, 1.0 + 1e-12));
        assert_eq!(m.program().num_vars, vars);
        assert_eq!(m.program().num_rows(), rows);
        assert!(m.register_cut(0, 1, 2.0));
        assert_eq!(m.program().num_vars, vars + 9);
        assert_eq!(m.program().num_rows(), rows + 6);
        assert_eq!(m.num_cuts(), inst.graph.num_edges() + 1);
        m.program().validate().unwrap();
    }

    #[test]
    fn cuts_never_decrease_the_master_value() {
        let inst = example2();
        let mut m = build_relaxation(&inst, RelaxationKind::Decomp);
        let before = m.solve();
        m.register_cut(0, 1, 2.0);
        m.register_cut(1, 2, 0.5);
        let after = m.solve();
        assert!(after.objective >= before.objective - 1e-7);
    }

    #[test]
    fn vacuous_cardinality_matches_unconstrained() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let free = ProblemInstance::chain(
            y.clone(),
            0.4,
            SparsityPriors::default().with_kappa(0.1),
        )
        .unwrap();
        let capped = ProblemInstance::chain(
            y,
            0.4,
            SparsityPriors::cardinality(n).with_kappa(0.1),
        )
        .unwrap();
        let a = solve_relaxation(&free, RelaxationKind::Persp);
        let b = solve_relaxation(&capped, RelaxationKind::Persp);
        assert!((a.objective - b.objective).abs() < 1e-7);
    }

    #[test]
    fn persp_without_support_cost_matches_smooth_qp() {
        // With no z cost the indicators float to 1 wherever x > 0, so the
        // persp value collapses to the plain smooth fit.
        let y = vec![0.8, 0.3, 0.9, 0.5];
        let inst = ProblemInstance::chain(y.clone(), 0.6, SparsityPriors::default()).unwrap();
        let sol = solve_relaxation(&inst, RelaxationKind::Persp);
        assert_eq!(sol.status, SolveStatus::Optimal);

        let n = y.len();
        let mm = inst.mmatrix();
        let mut q = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            q[(i, i)] = mm.diag[i];
        }
        for &(i, j, v) in &mm.off {
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
        let rhs = nalgebra::DVector::from_vec(y.clone());
        let xs = q.lu().solve(&rhs).unwrap();
        assert!(xs.iter().all(|&v| v >= 0.0));
        let qp_value = inst.fit_value(xs.as_slice());
        assert!(
            (sol.objective - qp_value).abs() < 1e-6,
            "persp {} vs qp {}",
            sol.objective,
            qp_value
        );
    }

    #[test]
    fn spike_prior_rows_solve_and_cap_support() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        let n = 10;
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let inst =
            ProblemInstance::chain(y, 0.5, SparsityPriors::spikes(4, 2, 2)).unwrap();
        let sol = solve_relaxation(&inst, RelaxationKind::Persp);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let zsum: f64 = sol.z.iter().sum();
        assert!(zsum <= 4.0 + 1e-6, "support mass {zsum}");
    }

    #[test]
    fn adjusted_linear_term_shifts_the_optimum() {
        let inst = example1();
        let base = solve_relaxation(&inst, RelaxationKind::Persp);
        let bonus = build_relaxation_adjusted(&inst, RelaxationKind::Persp, &[0.0, -0.5]).solve();
        // Paying the second coordinate to grow can only lower the value.
        assert!(bonus.objective < base.objective - 1e-6);
        assert!(bonus.x[1] > base.x[1]);
    }

    #[test]
    fn x2_block_minimum_matches_f_at_pinned_points() {
        // Pinned (z, x) = (0.5, 1, 1, 0.5): v = 0.5, s = v^2 / z1 = 0.5.
        let mut b = ProgramBuilder::new();
        let z = b.nonneg_run(2, "z");
        let x = b.nonneg_run(2, "x");
        b.eq(LinExpr::var(z), LinExpr::constant(0.5));
        b.eq(LinExpr::var(z + 1), LinExpr::constant(1.0));
        b.eq(LinExpr::var(x), LinExpr::constant(1.0));
        b.eq(LinExpr::var(x + 1), LinExpr::constant(0.5));
        let s = x2_hull_block(
            &mut b,
            LinExpr::var(z),
            LinExpr::var(z + 1),
            LinExpr::var(x),
            LinExpr::var(x + 1),
        );
        b.add_cost(s, 1.0);
        let sol = solve_cone_program(&b.finalize(), 1e-8, 1e-8);
        assert_eq!(sol.status, ConeStatus::Optimal);
        assert!((sol.objective - 0.5).abs() < 1e-6, "s = {}", sol.objective);
    }

    #[test]
    fn z2_block_minimum_matches_eval_g() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..30 {
            let d1: f64 = rng.gen_range(0.4..3.0);
            let d2: f64 = rng.gen_range((1.0 / d1).max(0.2)..3.5);
            let w = PairWeights::new(d1, d2).unwrap();
            let z1: f64 = rng.gen_range(0.05..1.0);
            let z2: f64 = rng.gen_range(0.05..1.0);
            let x1: f64 = rng.gen_range(0.0..1.0);
            let x2: f64 = rng.gen_range(0.0..1.0);
            let expect = crate::hull::eval_g(z1, z2, x1, x2, w);

            let mut b = ProgramBuilder::new();
            let zv = b.nonneg_run(2, "z");
            let xv = b.nonneg_run(2, "x");
            b.eq(LinExpr::var(zv), LinExpr::constant(z1));
            b.eq(LinExpr::var(zv + 1), LinExpr::constant(z2));
            b.eq(LinExpr::var(xv), LinExpr::constant(x1));
            b.eq(LinExpr::var(xv + 1), LinExpr::constant(x2));
            let s = z2_hull_block(
                &mut b,
                LinExpr::var(zv),
                LinExpr::var(zv + 1),
                LinExpr::var(xv),
                LinExpr::var(xv + 1),
                w,
            );
            b.add_cost(s, 1.0);
            let sol = solve_cone_program(&b.finalize(), 1e-8, 1e-8);
            assert_eq!(sol.status, ConeStatus::Optimal);
            assert!(
                (sol.objective - expect).abs() < 1e-6 * (1.0 + expect),
                "block {} vs g {} at z=({z1},{z2}) x=({x1},{x2}) d=({d1},{d2})",
                sol.objective,
                expect
            );
        }
    }

    #[test]
    fn non_chain_graph_builds_and_orders() {
        let graph = AdjacencyGraph::new(4, vec![(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let inst = ProblemInstance::new(
            vec![0.9, 0.2, 0.7, 0.4],
            graph,
            0.3,
            SparsityPriors::regularized(0.2),
        )
        .unwrap();
        let l1 = solve_relaxation(&inst, RelaxationKind::L1);
        let persp = solve_relaxation(&inst, RelaxationKind::Persp);
        let pw = solve_relaxation(&inst, RelaxationKind::Pairwise);
        assert!(l1.objective <= persp.objective + 1e-6);
        assert!(persp.objective <= pw.objective + 1e-6);
    }
}
