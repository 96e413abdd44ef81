//! Homogeneous self-dual interior point method for programs over nonneg
//! and (rotated) second-order cones.
//!
//! The embedding solves
//!
//! ```text
//!     A x            - b tau = 0
//!     -A' y + c tau  - s     = 0
//!     c' x  - b' y   + kappa = 0
//! ```
//!
//! with `x, s` in the cone, driving `x's + tau kappa` to zero with a
//! Mehrotra predictor-corrector under Nesterov-Todd scaling. Optimal
//! solutions come out of `tau > 0`; infeasibility and unboundedness come
//! out as Farkas certificates of the homogeneous iterates. Rotated cones
//! are turned into plain second-order cones during assembly, so the core
//! only ever sees two block types.
//!
//! Search directions reduce to the normal equations `A W^2 A' dy = r`,
//! refactored once per iteration through [`NormalSystem`] with a static
//! symbolic analysis done once per program.

use std::time::Instant;

use super::program::{ConeBlockKind, ConeProgram};
use super::sparse::{AugmentedSystem, Csr, HBlock, HBlockKind};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Interior point knobs. The defaults match the tolerances assumed by the
/// relaxation layers above.
#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    /// Relative primal/dual feasibility target.
    pub feas_tol: f64,
    /// Relative complementarity gap target.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Per-iteration diagnostics on stderr.
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200,
            verbose: std::env::var("L0DENOISE_IPM_VERBOSE").is_ok(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalFailure,
}

/// Primal-dual solution (or certificate) of a cone program.
#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub primal: Vec<f64>,
    pub dual_eq: Vec<f64>,
    pub objective: f64,
    pub status: ConeStatus,
    /// Wall-clock seconds.
    pub solve_time: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
enum CBlk {
    NonNeg { start: usize, len: usize },
    Soc { start: usize, len: usize },
}

struct Internal {
    a: Csr,
    b: Vec<f64>,
    c: Vec<f64>,
    blocks: Vec<CBlk>,
    /// Rotated-cone spans, in original variable coordinates.
    rsoc_spans: Vec<(usize, usize)>,
    /// Equilibration factors: scaled data is `diag(r) A diag(e)`.
    rscale: Vec<f64>,
    cscale: Vec<f64>,
    norm_b_un: f64,
    norm_c_un: f64,
    /// Barrier degree: nonneg count plus second-order block count.
    nu: f64,
}

fn assemble(p: &ConeProgram) -> Internal {
    let n = p.num_vars;
    #[derive(Clone, Copy)]
    enum ColMap {
        Id,
        Head { u1: usize, u2: usize, sign2: f64 },
        Tail,
    }
    let mut blocks = Vec::with_capacity(p.cones.len());
    let mut rsoc_spans = Vec::new();
    let mut colmap = vec![ColMap::Id; n];
    let mut nu = 0.0f64;
    let mut start = 0usize;
    for blk in &p.cones {
        match blk.kind {
            ConeBlockKind::NonNeg => {
                blocks.push(CBlk::NonNeg { start, len: blk.len });
                nu += blk.len as f64;
            }
            ConeBlockKind::SecondOrder => {
                blocks.push(CBlk::Soc { start, len: blk.len });
                nu += 1.0;
            }
            ConeBlockKind::RotatedSecondOrder => {
                blocks.push(CBlk::Soc { start, len: blk.len });
                nu += 1.0;
                rsoc_spans.push((start, blk.len));
                colmap[start] = ColMap::Head { u1: start, u2: start + 1, sign2: 1.0 };
                colmap[start + 1] = ColMap::Head { u1: start, u2: start + 1, sign2: -1.0 };
                for j in start + 2..start + blk.len {
                    colmap[j] = ColMap::Tail;
                }
            }
        }
        start += blk.len;
    }

    // Rotate rsoc coordinates: with u1 = (x1+x2)/sqrt2, u2 = (x1-x2)/sqrt2,
    // uk = sqrt2 xk, the constraint x1 x2 >= sum xk^2 becomes
    // u1 >= ||(u2, u3, ...)||. Columns transform through the inverse map.
    let transform = |terms: &[(usize, f64)]| -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len() + 4);
        for &(j, v) in terms {
            match colmap[j] {
                ColMap::Id => out.push((j, v)),
                ColMap::Head { u1, u2, sign2 } => {
                    out.push((u1, v / SQRT2));
                    out.push((u2, sign2 * v / SQRT2));
                }
                ColMap::Tail => out.push((j, v / SQRT2)),
            }
        }
        out.sort_unstable_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(out.len());
        for (j, v) in out {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += v,
                _ => merged.push((j, v)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        merged
    };

    let mut c = vec![0.0; n];
    for (j, v) in transform(&p.objective) {
        c[j] = v;
    }
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(p.rows.len());
    let mut b = Vec::with_capacity(p.rows.len());
    for row in &p.rows {
        rows.push(transform(&row.coeffs));
        b.push(row.rhs);
    }

    // Equilibration: rounds of row/column max scaling, columns scaled
    // uniformly within each cone block so membership is preserved.
    let m = rows.len();
    let mut rscale = vec![1.0f64; m];
    let mut cscale = vec![1.0f64; n];
    for _ in 0..3 {
        for (i, row) in rows.iter().enumerate() {
            let mx = row
                .iter()
                .map(|&(j, v)| (v * rscale[i] * cscale[j]).abs())
                .fold(0.0f64, f64::max);
            if mx > 0.0 {
                rscale[i] /= mx.sqrt();
            }
        }
        let mut colmax = vec![0.0f64; n];
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                colmax[j] = colmax[j].max((v * rscale[i] * cscale[j]).abs());
            }
        }
        for blk in &blocks {
            match *blk {
                CBlk::NonNeg { start, len } => {
                    for j in start..start + len {
                        if colmax[j] > 0.0 {
                            cscale[j] /= colmax[j].sqrt();
                        }
                    }
                }
                CBlk::Soc { start, len } => {
                    let mx = colmax[start..start + len]
                        .iter()
                        .fold(0.0f64, |a, &b| a.max(b));
                    if mx > 0.0 {
                        let sc = 1.0 / mx.sqrt();
                        for j in start..start + len {
                            cscale[j] *= sc;
                        }
                    }
                }
            }
        }
    }
    let norm_b_un = b.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let norm_c_un = c.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    for (i, row) in rows.iter_mut().enumerate() {
        for t in row.iter_mut() {
            t.1 *= rscale[i] * cscale[t.0];
        }
        b[i] *= rscale[i];
    }
    for (j, v) in c.iter_mut().enumerate() {
        *v *= cscale[j];
    }

    Internal {
        a: Csr::from_row_lists(&rows, n),
        b,
        c,
        blocks,
        rsoc_spans,
        rscale,
        cscale,
        norm_b_un,
        norm_c_un,
        nu,
    }
}

/// Per-iteration Nesterov-Todd scaling state.
struct Scaling {
    /// For nonneg j: `H_jj = x_j / s_j`; unused inside soc blocks.
    hdiag: Vec<f64>,
    /// For nonneg j: `s_j / x_j`.
    hinv_diag: Vec<f64>,
    /// Dense `W^{-2}` per soc block, aligned with the block list.
    hinv_dense: Vec<Vec<f64>>,
    /// Scaled point `lambda = W^{-1} x = W s`.
    lambda: Vec<f64>,
    /// Per soc block: `(eta, wbar)`.
    soc: Vec<Option<(f64, Vec<f64>)>>,
}

impl Scaling {
    fn new(n: usize, blocks: &[CBlk]) -> Scaling {
        let hinv_dense = blocks
            .iter()
            .map(|b| match *b {
                CBlk::NonNeg { .. } => Vec::new(),
                CBlk::Soc { len, .. } => vec![0.0; len * len],
            })
            .collect();
        Scaling {
            hdiag: vec![0.0; n],
            hinv_diag: vec![0.0; n],
            hinv_dense,
            lambda: vec![0.0; n],
            soc: blocks.iter().map(|_| None).collect(),
        }
    }

    /// Returns false when the point is not strictly interior.
    fn update(&mut self, blocks: &[CBlk], x: &[f64], s: &[f64]) -> bool {
        for (bi, blk) in blocks.iter().enumerate() {
            match *blk {
                CBlk::NonNeg { start, len } => {
                    for j in start..start + len {
                        if x[j] <= 0.0 || s[j] <= 0.0 {
                            return false;
                        }
                        self.hdiag[j] = x[j] / s[j];
                        self.hinv_diag[j] = s[j] / x[j];
                        self.lambda[j] = (x[j] * s[j]).sqrt();
                    }
                }
                CBlk::Soc { start, len } => {
                    let xb = &x[start..start + len];
                    let sb = &s[start..start + len];
                    let jx = jdot(xb, xb);
                    let js = jdot(sb, sb);
                    if jx <= 0.0 || js <= 0.0 || xb[0] <= 0.0 || sb[0] <= 0.0 {
                        return false;
                    }
                    let (rx, rs) = (jx.sqrt(), js.sqrt());
                    let mut dot_hat = 0.0;
                    for k in 0..len {
                        dot_hat += (xb[k] / rx) * (sb[k] / rs);
                    }
                    let gamma = ((1.0 + dot_hat) / 2.0).sqrt();
                    let mut wbar = vec![0.0; len];
                    wbar[0] = (xb[0] / rx + sb[0] / rs) / (2.0 * gamma);
                    for k in 1..len {
                        wbar[k] = (xb[k] / rx - sb[k] / rs) / (2.0 * gamma);
                    }
                    let eta2 = rx / rs;
                    let eta = eta2.sqrt();
                    let lam = &mut self.lambda[start..start + len];
                    wbar_apply(&wbar, sb, lam);
                    for v in lam.iter_mut() {
                        *v *= eta;
                    }
                    // H = eta^2 (2 wbar wbar' - J), so H^{-1} swaps eta^2
                    // for eta^{-2} and wbar for J wbar.
                    let hi = &mut self.hinv_dense[bi];
                    for p in 0..len {
                        let vp = if p == 0 { wbar[0] } else { -wbar[p] };
                        for q in 0..len {
                            let vq = if q == 0 { wbar[0] } else { -wbar[q] };
                            let mut v = 2.0 * vp * vq;
                            if p == q {
                                v -= if p == 0 { 1.0 } else { -1.0 };
                            }
                            hi[p * len + q] = v / eta2;
                        }
                    }
                    self.soc[bi] = Some((eta, wbar));
                }
            }
        }
        true
    }

    /// `out = W^{-2} v`.
    fn apply_hinv(&self, blocks: &[CBlk], v: &[f64], out: &mut [f64]) {
        for (bi, blk) in blocks.iter().enumerate() {
            match *blk {
                CBlk::NonNeg { start, len } => {
                    for j in start..start + len {
                        out[j] = self.hinv_diag[j] * v[j];
                    }
                }
                CBlk::Soc { start, len } => {
                    let h = &self.hinv_dense[bi];
                    for p in 0..len {
                        let mut acc = 0.0;
                        for q in 0..len {
                            acc += h[p * len + q] * v[start + q];
                        }
                        out[start + p] = acc;
                    }
                }
            }
        }
    }

    /// `out = W v`.
    fn apply_w(&self, blocks: &[CBlk], v: &[f64], out: &mut [f64]) {
        for (bi, blk) in blocks.iter().enumerate() {
            match *blk {
                CBlk::NonNeg { start, len } => {
                    for j in start..start + len {
                        out[j] = self.hdiag[j].sqrt() * v[j];
                    }
                }
                CBlk::Soc { start, len } => {
                    let (eta, wbar) = self.soc[bi].as_ref().unwrap();
                    wbar_apply(wbar, &v[start..start + len], &mut out[start..start + len]);
                    for o in out[start..start + len].iter_mut() {
                        *o *= *eta;
                    }
                }
            }
        }
    }

    /// `out = W^{-1} v`, using `Wbar^{-1} = J Wbar J`.
    fn apply_w_inv(&self, blocks: &[CBlk], v: &[f64], out: &mut [f64]) {
        let mut jv: Vec<f64> = Vec::new();
        for (bi, blk) in blocks.iter().enumerate() {
            match *blk {
                CBlk::NonNeg { start, len } => {
                    for j in start..start + len {
                        out[j] = v[j] / self.hdiag[j].sqrt();
                    }
                }
                CBlk::Soc { start, len } => {
                    let (eta, wbar) = self.soc[bi].as_ref().unwrap();
                    jv.clear();
                    jv.extend_from_slice(&v[start..start + len]);
                    for t in jv.iter_mut().skip(1) {
                        *t = -*t;
                    }
                    let ob = &mut out[start..start + len];
                    wbar_apply(wbar, &jv, ob);
                    ob[0] /= *eta;
                    for t in ob.iter_mut().skip(1) {
                        *t = -*t / *eta;
                    }
                }
            }
        }
    }
}

fn jdot(a: &[f64], b: &[f64]) -> f64 {
    let mut v = a[0] * b[0];
    for k in 1..a.len() {
        v -= a[k] * b[k];
    }
    v
}

/// `out = Wbar v` for `Wbar = [[w0, w1'], [w1, I + w1 w1'/(1+w0)]]`.
fn wbar_apply(wbar: &[f64], v: &[f64], out: &mut [f64]) {
    let len = wbar.len();
    let w0 = wbar[0];
    let mut dot = 0.0;
    for k in 1..len {
        dot += wbar[k] * v[k];
    }
    out[0] = w0 * v[0] + dot;
    let coef = v[0] + dot / (1.0 + w0);
    for k in 1..len {
        out[k] = v[k] + coef * wbar[k];
    }
}

fn jordan_mul(blocks: &[CBlk], a: &[f64], b: &[f64], out: &mut [f64]) {
    for blk in blocks {
        match *blk {
            CBlk::NonNeg { start, len } => {
                for j in start..start + len {
                    out[j] = a[j] * b[j];
                }
            }
            CBlk::Soc { start, len } => {
                let (ab, bb) = (&a[start..start + len], &b[start..start + len]);
                let mut dot = 0.0;
                for k in 0..len {
                    dot += ab[k] * bb[k];
                }
                out[start] = dot;
                for k in 1..len {
                    out[start + k] = ab[0] * bb[k] + bb[0] * ab[k];
                }
            }
        }
    }
}

/// Solve `lam o w = v` blockwise (inverse of the Jordan product).
fn jordan_div(blocks: &[CBlk], lam: &[f64], v: &[f64], out: &mut [f64]) {
    for blk in blocks {
        match *blk {
            CBlk::NonNeg { start, len } => {
                for j in start..start + len {
                    out[j] = v[j] / lam[j];
                }
            }
            CBlk::Soc { start, len } => {
                let (lb, vb) = (&lam[start..start + len], &v[start..start + len]);
                let det = jdot(lb, lb);
                let mut ldv = 0.0;
                for k in 1..len {
                    ldv += lb[k] * vb[k];
                }
                let w0 = (lb[0] * vb[0] - ldv) / det;
                out[start] = w0;
                for k in 1..len {
                    out[start + k] = (vb[k] - w0 * lb[k]) / lb[0];
                }
            }
        }
    }
}

/// Centrality of the trial point `(x, s, tau, kappa) + alpha d`: the
/// smallest per-block eigenvalue of the Jordan product `x o s` (including
/// the `tau kappa` pair) together with the trial barrier mean `mu`.
#[allow(clippy::too_many_arguments)]
fn trial_centrality(
    blocks: &[CBlk],
    x: &[f64],
    s: &[f64],
    dx: &[f64],
    ds: &[f64],
    tk: (f64, f64, f64, f64),
    alpha: f64,
    nu: f64,
) -> (f64, f64) {
    let (tau, dtau, kappa, dkappa) = tk;
    let tt = tau + alpha * dtau;
    let tk_prod = tt * (kappa + alpha * dkappa);
    let mut pmin = tk_prod;
    let mut total = tk_prod;
    for blk in blocks {
        match *blk {
            CBlk::NonNeg { start, len } => {
                for j in start..start + len {
                    let p = (x[j] + alpha * dx[j]) * (s[j] + alpha * ds[j]);
                    pmin = pmin.min(p);
                    total += p;
                }
            }
            CBlk::Soc { start, len } => {
                let mut dot = 0.0f64;
                let mut det_x = 0.0f64;
                let mut det_s = 0.0f64;
                for k in start..start + len {
                    let xv = x[k] + alpha * dx[k];
                    let sv = s[k] + alpha * ds[k];
                    dot += xv * sv;
                    let sq = if k == start { 1.0 } else { -1.0 };
                    det_x += sq * xv * xv;
                    det_s += sq * sv * sv;
                }
                // sqrt(det x * det s) equals mu for a centered block and
                // vanishes on the boundary, matching the x_j s_j scale of
                // the nonnegative coordinates.
                pmin = pmin.min((det_x.max(0.0) * det_s.max(0.0)).sqrt());
                total += dot;
            }
        }
    }
    (pmin, total / (nu + 1.0))
}

/// Largest alpha keeping `p + alpha d` in the cone (`inf` if never exits).
#[allow(dead_code)]
fn step_argmin(blocks: &[CBlk], p: &[f64], d: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, usize::MAX);
    for (bi, blk) in blocks.iter().enumerate() {
        let single = std::slice::from_ref(blk);
        let a = step_max(single, p, d);
        if a < best.0 {
            best = (a, bi);
        }
    }
    best
}

fn step_max(blocks: &[CBlk], p: &[f64], d: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for blk in blocks {
        match *blk {
            CBlk::NonNeg { start, len } => {
                for j in start..start + len {
                    if d[j] < 0.0 {
                        alpha = alpha.min(-p[j] / d[j]);
                    }
                }
            }
            CBlk::Soc { start, len } => {
                let (pb, db) = (&p[start..start + len], &d[start..start + len]);
                let c0 = jdot(pb, pb).max(0.0);
                let mut bq = pb[0] * db[0];
                for k in 1..len {
                    bq -= pb[k] * db[k];
                }
                let aq = jdot(db, db);
                let root = if aq.abs() < 1e-300 {
                    if bq >= 0.0 {
                        f64::INFINITY
                    } else {
                        -c0 / (2.0 * bq)
                    }
                } else {
                    let disc = bq * bq - aq * c0;
                    if aq > 0.0 {
                        if disc <= 0.0 {
                            f64::INFINITY
                        } else {
                            let r = (-bq - disc.sqrt()) / aq;
                            if r > 0.0 {
                                r
                            } else {
                                f64::INFINITY
                            }
                        }
                    } else {
                        (-bq - disc.sqrt()) / aq
                    }
                };
                alpha = alpha.min(root.max(0.0));
            }
        }
    }
    alpha
}

struct Work {
    rx: Vec<f64>,
    ry: Vec<f64>,
    xi: Vec<f64>,
    tn: Vec<f64>,
    tm: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    dxu: Vec<f64>,
    dxb: Vec<f64>,
    ddy: Vec<f64>,
    rhs_c: Vec<f64>,
    g: Vec<f64>,
    dx: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<f64>,
    dxa: Vec<f64>,
    dsa: Vec<f64>,
    corr_a: Vec<f64>,
    corr_b: Vec<f64>,
    corr: Vec<f64>,
    dtau_aff: f64,
    dkappa_aff: f64,
}

impl Work {
    fn new(n: usize, m: usize) -> Work {
        Work {
            rx: vec![0.0; n],
            ry: vec![0.0; m],
            xi: vec![0.0; n],
            tn: vec![0.0; n],
            tm: vec![0.0; m],
            u1: vec![0.0; m],
            u2: vec![0.0; m],
            dxu: vec![0.0; n],
            dxb: vec![0.0; n],
            ddy: vec![0.0; m],
            rhs_c: vec![0.0; n],
            g: vec![0.0; n],
            dx: vec![0.0; n],
            dy: vec![0.0; m],
            ds: vec![0.0; n],
            dxa: vec![0.0; n],
            dsa: vec![0.0; n],
            corr_a: vec![0.0; n],
            corr_b: vec![0.0; n],
            corr: vec![0.0; n],
            dtau_aff: 0.0,
            dkappa_aff: 0.0,
        }
    }
}

/// Solve a validated cone program. Panics on a structurally invalid program
/// (wrong cone coverage, out-of-range indices); numerical trouble is
/// reported through the returned status instead.
pub fn solve_with_settings(p: &ConeProgram, settings: &SolverSettings) -> ConeSolution {
    let t0 = Instant::now();
    if let Err(e) = p.validate() {
        panic!("invalid cone program: {e}");
    }
    let internal = assemble(p);
    let n = internal.a.n;
    let m = internal.a.m;
    assert!(m > 0, "programs must have at least one equality row");

    // A structurally empty row with nonzero rhs is an immediate Farkas
    // certificate.
    for i in 0..m {
        let (cols, _) = internal.a.row(i);
        if cols.is_empty() && internal.b[i] != 0.0 {
            let mut dual = vec![0.0; m];
            dual[i] = internal.rscale[i] * internal.b[i].signum();
            return ConeSolution {
                primal: vec![0.0; p.num_vars],
                dual_eq: dual,
                objective: f64::INFINITY,
                status: ConeStatus::Infeasible,
                solve_time: t0.elapsed().as_secs_f64(),
                iterations: 0,
            };
        }
    }

    let hblocks: Vec<HBlock> = internal
        .blocks
        .iter()
        .map(|b| match *b {
            CBlk::NonNeg { start, len } => HBlock {
                kind: HBlockKind::Scalar,
                start,
                len,
            },
            CBlk::Soc { start, len } => HBlock {
                kind: HBlockKind::Dense,
                start,
                len,
            },
        })
        .collect();
    let mut aug = AugmentedSystem::build(&internal.a, &hblocks);
    let mut scaling = Scaling::new(n, &internal.blocks);
    let mut w = Work::new(n, m);

    let mut x = vec![0.0; n];
    let mut s = vec![0.0; n];
    for blk in &internal.blocks {
        match *blk {
            CBlk::NonNeg { start, len } => {
                for j in start..start + len {
                    x[j] = 1.0;
                    s[j] = 1.0;
                }
            }
            CBlk::Soc { start, .. } => {
                x[start] = 1.0;
                s[start] = 1.0;
            }
        }
    }
    let mut y = vec![0.0; m];
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let mut status = ConeStatus::MaxIter;
    let mut iters = 0usize;
    // Best iterate seen so far, by worst-case residual. Degenerate problems
    // can stall just above the target tolerance and then drift; in that case
    // the best point is returned as optimal under a relaxed acceptance.
    let mut best_x = x.clone();
    let mut best_y = y.clone();
    let mut best_tau = tau;
    let mut best_merit = f64::INFINITY;
    let mut stall = 0usize;
    let relaxed_tol = 100.0 * settings.feas_tol.max(settings.gap_tol);
    loop {
        if iters >= settings.max_iter {
            break;
        }
        // Residuals.
        internal.a.matvec(&x, &mut w.tm);
        for i in 0..m {
            w.ry[i] = w.tm[i] - internal.b[i] * tau;
        }
        internal.a.matvec_t(&y, &mut w.tn);
        for j in 0..n {
            w.rx[j] = internal.c[j] * tau - w.tn[j] - s[j];
        }
        let ctx: f64 = internal.c.iter().zip(&x).map(|(a, b)| a * b).sum();
        let bty: f64 = internal.b.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rg = ctx - bty + kappa;
        let xs: f64 = x.iter().zip(&s).map(|(a, b)| a * b).sum();
        let mu = (xs + tau * kappa) / (internal.nu + 1.0);

        // Termination, measured on the unscaled problem.
        let pcost = ctx / tau;
        let dcost = bty / tau;
        let mut pres = 0.0f64;
        for i in 0..m {
            pres = pres.max((w.ry[i] / internal.rscale[i]).abs());
        }
        pres /= (1.0 + internal.norm_b_un) * tau;
        let mut dres = 0.0f64;
        for j in 0..n {
            dres = dres.max((w.rx[j] / internal.cscale[j]).abs());
        }
        dres /= (1.0 + internal.norm_c_un) * tau;
        let gap = xs / (tau * tau);
        let relgap = gap / pcost.abs().min(dcost.abs()).max(1.0);
        if settings.verbose {
            eprintln!(
                "iter {iters:3}  pcost {pcost:+.6e}  pres {pres:.2e}  dres {dres:.2e}  \
                 relgap {relgap:.2e}  tau {tau:.2e}  kappa {kappa:.2e}"
            );
        }
        if pres <= settings.feas_tol && dres <= settings.feas_tol && relgap <= settings.gap_tol {
            status = ConeStatus::Optimal;
            break;
        }
        // Farkas certificates, tested in the equilibrated space.
        if bty > 0.0 {
            let mut hres = 0.0f64;
            for j in 0..n {
                hres = hres.max((w.tn[j] + s[j]).abs());
            }
            if hres <= settings.feas_tol * bty {
                status = ConeStatus::Infeasible;
                break;
            }
        }
        if ctx < 0.0 {
            let mut hres = 0.0f64;
            for i in 0..m {
                hres = hres.max(w.tm[i].abs());
            }
            if hres <= settings.feas_tol * (-ctx) {
                status = ConeStatus::Unbounded;
                break;
            }
        }

        let merit = pres.max(dres).max(relgap);
        if merit.is_finite() && merit < best_merit {
            best_merit = merit;
            best_x.copy_from_slice(&x);
            best_y.copy_from_slice(&y);
            best_tau = tau;
            stall = 0;
        } else {
            stall += 1;
            if stall >= 20 {
                status = ConeStatus::NumericalFailure;
                break;
            }
        }

        if !scaling.update(&internal.blocks, &x, &s) {
            status = ConeStatus::NumericalFailure;
            break;
        }
        aug.refill(&scaling.hinv_diag, &scaling.hinv_dense);
        if !aug.factorize(1e-8) && settings.verbose {
            eprintln!("      pivot clamp engaged");
        }

        // (dxb, u2) solves the KKT system against (c, b); both passes reuse
        // it to fold the dtau column into the elimination.
        aug.solve(&internal.c, &internal.b, &mut w.dxb, &mut w.u2);
        let cdxb: f64 = internal.c.iter().zip(&w.dxb).map(|(a, b)| a * b).sum();
        let bu2: f64 = internal.b.iter().zip(&w.u2).map(|(a, b)| a * b).sum();

        let mut numerical_trouble = false;
        let mut took_step = false;
        for pass in 0..2 {
            let (gamma, sigma, rhs_tk) = if pass == 0 {
                (1.0, 0.0, -tau * kappa)
            } else {
                let mut alpha = step_max(&internal.blocks, &x, &w.dxa)
                    .min(step_max(&internal.blocks, &s, &w.dsa));
                if w.dtau_aff < 0.0 {
                    alpha = alpha.min(-tau / w.dtau_aff);
                }
                if w.dkappa_aff < 0.0 {
                    alpha = alpha.min(-kappa / w.dkappa_aff);
                }
                let alpha = alpha.min(1.0);
                let sig = (1.0 - alpha).powi(3).clamp(0.0, 1.0);
                (
                    1.0 - sig,
                    sig,
                    -tau * kappa + sig * mu - w.dtau_aff * w.dkappa_aff,
                )
            };

            // rhs_c = -lambda o lambda [+ sigma mu e - corr], in Jordan form.
            jordan_mul(&internal.blocks, &scaling.lambda, &scaling.lambda, &mut w.rhs_c);
            for v in w.rhs_c.iter_mut() {
                *v = -*v;
            }
            if pass == 1 {
                scaling.apply_w_inv(&internal.blocks, &w.dxa, &mut w.corr_a);
                scaling.apply_w(&internal.blocks, &w.dsa, &mut w.corr_b);
                jordan_mul(&internal.blocks, &w.corr_a, &w.corr_b, &mut w.corr);
                for (j, v) in w.rhs_c.iter_mut().enumerate() {
                    *v -= w.corr[j];
                }
                for blk in &internal.blocks {
                    match *blk {
                        CBlk::NonNeg { start, len } => {
                            for j in start..start + len {
                                w.rhs_c[j] += sigma * mu;
                            }
                        }
                        CBlk::Soc { start, .. } => {
                            w.rhs_c[start] += sigma * mu;
                        }
                    }
                }
            }

            jordan_div(&internal.blocks, &scaling.lambda, &w.rhs_c, &mut w.g);
            // xi = W^{-1} g - gamma rx.
            scaling.apply_w_inv(&internal.blocks, &w.g, &mut w.xi);
            for j in 0..n {
                w.xi[j] -= gamma * w.rx[j];
            }
            // (dxu, u1) solves the KKT system against (-xi, -gamma ry).
            for j in 0..n {
                w.tn[j] = -w.xi[j];
            }
            for i in 0..m {
                w.tm[i] = -gamma * w.ry[i];
            }
            aug.solve(&w.tn, &w.tm, &mut w.dxu, &mut w.u1);
            let cdxu: f64 = internal.c.iter().zip(&w.dxu).map(|(a, b)| a * b).sum();
            let bu1: f64 = internal.b.iter().zip(&w.u1).map(|(a, b)| a * b).sum();

            // dtau from the gap row; denominator is strictly negative.
            let denom = cdxb - bu2 - kappa / tau;
            let num = -gamma * rg - cdxu + bu1 - rhs_tk / tau;
            let mut dtau = num / denom;
            let mut dkappa = (rhs_tk - kappa * dtau) / tau;

            for i in 0..m {
                w.dy[i] = w.u1[i] + dtau * w.u2[i];
            }
            for j in 0..n {
                w.dx[j] = w.dxu[j] + dtau * w.dxb[j];
            }
            internal.a.matvec_t(&w.dy, &mut w.tn);
            for j in 0..n {
                w.ds[j] = -w.tn[j] + internal.c[j] * dtau + gamma * w.rx[j];
            }

            // The dual row holds by construction, but the eliminated rows
            // (primal `A dx - b dtau = -gamma r_y`, the scaled x row, and
            // the gap row `c'dx - b'dy + dkappa = -gamma r_g`) accumulate
            // solve error; the dtau formula in particular cancels badly
            // near convergence. Re-running the elimination with the actual
            // residuals as right-hand side corrects all components at the
            // cost of one back-solve. w.tn holds A'dy throughout.
            let mut prev_err = f64::INFINITY;
            for _ in 0..3 {
                internal.a.matvec(&w.dx, &mut w.tm);
                let mut worst = 0.0f64;
                let mut base = 0.0f64;
                for i in 0..m {
                    let target = -gamma * w.ry[i];
                    base = base.max(target.abs());
                    w.tm[i] = target - (w.tm[i] - internal.b[i] * dtau);
                    worst = worst.max(w.tm[i].abs());
                }
                let cdx: f64 = internal.c.iter().zip(&w.dx).map(|(a, b)| a * b).sum();
                let bdy: f64 = internal.b.iter().zip(&w.dy).map(|(a, b)| a * b).sum();
                let e3 = -gamma * rg - (cdx - bdy + dkappa);
                let err = worst.max(e3.abs());
                if err <= 1e-10 * (1.0 + base.max(rg.abs())) || err >= prev_err {
                    break;
                }
                prev_err = err;
                scaling.apply_hinv(&internal.blocks, &w.dx, &mut w.corr_a);
                for j in 0..n {
                    w.corr[j] = internal.c[j] * dtau - w.xi[j] + w.corr_a[j] - w.tn[j];
                }
                aug.solve(&w.corr, &w.tm, &mut w.g, &mut w.ddy);
                let cdxc: f64 = internal.c.iter().zip(&w.g).map(|(a, b)| a * b).sum();
                let buc: f64 = internal.b.iter().zip(&w.ddy).map(|(a, b)| a * b).sum();
                let dtau_c = (e3 - cdxc + buc) / denom;
                dtau += dtau_c;
                dkappa -= kappa * dtau_c / tau;
                for i in 0..m {
                    w.dy[i] += w.ddy[i] + dtau_c * w.u2[i];
                }
                for j in 0..n {
                    w.dx[j] += w.g[j] + dtau_c * w.dxb[j];
                }
                internal.a.matvec_t(&w.dy, &mut w.tn);
                for j in 0..n {
                    w.ds[j] = -w.tn[j] + internal.c[j] * dtau + gamma * w.rx[j];
                }
            }

            if settings.verbose {
                eprintln!(
                    "      pass {pass}: refine_err {prev_err:.2e}  denom {denom:.3e}  dtau {dtau:.3e}"
                );
            }
            if !(dtau.is_finite() && dkappa.is_finite())
                || w.dx.iter().any(|v| !v.is_finite())
                || w.ds.iter().any(|v| !v.is_finite())
            {
                numerical_trouble = true;
                break;
            }

            if pass == 0 {
                w.dxa.copy_from_slice(&w.dx);
                w.dsa.copy_from_slice(&w.ds);
                w.dtau_aff = dtau;
                w.dkappa_aff = dkappa;
            } else {
                let mut alpha = step_max(&internal.blocks, &x, &w.dx)
                    .min(step_max(&internal.blocks, &s, &w.ds));
                if dtau < 0.0 {
                    alpha = alpha.min(-tau / dtau);
                }
                if dkappa < 0.0 {
                    alpha = alpha.min(-kappa / dkappa);
                }
                let mut alpha = (0.99 * alpha).min(1.0);
                // Neighborhood safeguard: never step to a point meaningfully
                // less centered than the current one, so later iterations
                // keep room to move. Without it, aggressive corrector steps
                // jam against a cone boundary on degenerate problems.
                let tk = (tau, dtau, kappa, dkappa);
                let (p0, mu0) =
                    trial_centrality(&internal.blocks, &x, &s, &w.dx, &w.ds, tk, 0.0, internal.nu);
                let floor = (0.5 * p0 / mu0).min(1e-3);
                for _ in 0..40 {
                    let (pmin, mu_t) = trial_centrality(
                        &internal.blocks,
                        &x,
                        &s,
                        &w.dx,
                        &w.ds,
                        tk,
                        alpha,
                        internal.nu,
                    );
                    if pmin >= floor * mu_t {
                        break;
                    }
                    alpha *= 0.8;
                }
                if settings.verbose {
                    let dn = w.dx.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                    let (rx, bx) = step_argmin(&internal.blocks, &x, &w.dx);
                    let (rs, bs) = step_argmin(&internal.blocks, &s, &w.ds);
                    eprintln!(
                        "      sigma {sigma:.3e}  alpha {alpha:.3e}  raw_x {rx:.3e}@blk{bx}  \
                         raw_s {rs:.3e}@blk{bs}  |dx| {dn:.3e}"
                    );
                }
                if !(alpha > 1e-11) {
                    numerical_trouble = true;
                    break;
                }
                for j in 0..n {
                    x[j] += alpha * w.dx[j];
                    s[j] += alpha * w.ds[j];
                }
                for i in 0..m {
                    y[i] += alpha * w.dy[i];
                }
                tau += alpha * dtau;
                kappa += alpha * dkappa;
                took_step = true;
            }
        }
        if numerical_trouble || !took_step || !(tau.is_finite() && tau > 0.0) {
            status = ConeStatus::NumericalFailure;
            break;
        }
        iters += 1;
    }

    if matches!(
        status,
        ConeStatus::MaxIter | ConeStatus::NumericalFailure
    ) && best_merit <= relaxed_tol
    {
        status = ConeStatus::Optimal;
        x.copy_from_slice(&best_x);
        y.copy_from_slice(&best_y);
        tau = best_tau;
    }
    let mut sol = build_solution(p, &internal, status, &x, &y, tau, iters, &t0);
    if sol.status == ConeStatus::Infeasible {
        let bty: f64 = internal.b.iter().zip(&y).map(|(a, b)| a * b).sum();
        sol.dual_eq = (0..m).map(|i| internal.rscale[i] * y[i] / bty).collect();
        sol.primal = vec![0.0; p.num_vars];
        sol.objective = f64::INFINITY;
    } else if sol.status == ConeStatus::Unbounded {
        let ctx: f64 = internal.c.iter().zip(&x).map(|(a, b)| a * b).sum();
        let mut ray: Vec<f64> = (0..n).map(|j| internal.cscale[j] * x[j] / -ctx).collect();
        unrotate(&internal, &mut ray);
        sol.primal = ray;
        sol.dual_eq = vec![0.0; m];
        sol.objective = f64::NEG_INFINITY;
    }
    sol
}

fn unrotate(internal: &Internal, v: &mut [f64]) {
    for &(start, len) in &internal.rsoc_spans {
        let u1 = v[start];
        let u2 = v[start + 1];
        v[start] = (u1 + u2) / SQRT2;
        v[start + 1] = (u1 - u2) / SQRT2;
        for t in v[start + 2..start + len].iter_mut() {
            *t /= SQRT2;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn build_solution(
    p: &ConeProgram,
    internal: &Internal,
    status: ConeStatus,
    x: &[f64],
    y: &[f64],
    tau: f64,
    iters: usize,
    t0: &Instant,
) -> ConeSolution {
    let n = p.num_vars;
    let m = internal.a.m;
    let mut primal: Vec<f64> = (0..n).map(|j| internal.cscale[j] * x[j] / tau).collect();
    unrotate(internal, &mut primal);
    let dual_eq: Vec<f64> = (0..m).map(|i| internal.rscale[i] * y[i] / tau).collect();
    let objective: f64 = p.objective.iter().map(|&(j, v)| v * primal[j]).sum();
    ConeSolution {
        primal,
        dual_eq,
        objective,
        status,
        solve_time: t0.elapsed().as_secs_f64(),
        iterations: iters,
    }
}
