//! Cutting-surface loop on the lifted master relaxation.
//!
//! [`solve_decomp`] drives the decomp tier of [`crate::relax`]: solve the
//! master, find edges whose lifted values can be separated, pick the best
//! cut weight for each in closed form, register the cuts, repeat. The loop
//! stops when no edge is violated, when the bound stalls, or at a round cap.
//!
//! [`separation_oracle_small`] solves the underlying separation problem
//! exactly on tiny chains by searching the weight space directly. It exists
//! so tests can check the master against an independent computation; it is
//! not part of the solve path.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::hull::{cut_violation, eval_g, optimal_cut_weight, LiftedPair, PairWeights};
use crate::model::{MMatrixQuadratic, ProblemInstance, SolveReport, SolveStatus};
use crate::relax::{build_relaxation_adjusted, RelaxationKind};
use crate::Result;

/// Points violating their own perspective rows by more than this are left
/// alone for a round; the closed-form weight assumes those rows hold.
const PERSP_GUARD: f64 = 1e-6;

/// Smallest cut weight ever registered.
const D_MIN: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CuttingSurfaceConfig {
    /// Stop once `(obj_new - obj_old) / |obj_new|` falls below this.
    pub rel_improvement_stop: f64,
    /// Minimum lifted-value violation before an edge gets a cut.
    pub violation_tol: f64,
    pub max_rounds: usize,
    /// Cut weights are clamped to `[1e-6, d_max]`.
    pub d_max: f64,
    /// When set, a per-round CSV `(round, objective, cuts_added)` is written.
    pub trace_path: Option<PathBuf>,
}

impl Default for CuttingSurfaceConfig {
    fn default() -> Self {
        CuttingSurfaceConfig {
            rel_improvement_stop: 5e-5,
            violation_tol: 1e-6,
            max_rounds: 200,
            d_max: 1e6,
            trace_path: None,
        }
    }
}

/// Runs the cutting-surface loop and returns the final master solution.
///
/// The first round solves the master with every cut set at `{1}`; the stall
/// test compares consecutive rounds, so it only kicks in from round two.
/// Reaching `max_rounds` reports `IterationLimit`; a master solve that does
/// not come back clean ends the loop with that solve's status.
pub fn solve_decomp(inst: &ProblemInstance, cfg: &CuttingSurfaceConfig) -> Result<SolveReport> {
    solve_decomp_adjusted(inst, cfg, &vec![0.0; inst.n()])
}

/// [`solve_decomp`] with extra linear costs on the `x` variables, used to
/// price block boundaries in the Lagrangian decomposition. The reported
/// objective includes the extra costs.
pub fn solve_decomp_adjusted(
    inst: &ProblemInstance,
    cfg: &CuttingSurfaceConfig,
    extra_x_cost: &[f64],
) -> Result<SolveReport> {
    let start = Instant::now();
    let mut master = build_relaxation_adjusted(inst, RelaxationKind::Decomp, extra_x_cost);
    let mut trace = match &cfg.trace_path {
        Some(p) => {
            let mut w = csv::Writer::from_path(p)?;
            w.write_record(["round", "objective", "cuts_added"])?;
            Some(w)
        }
        None => None,
    };
    let off = inst.mmatrix().off;
    let mut prev_obj = f64::NEG_INFINITY;
    let mut total_cuts = 0usize;
    let mut rounds = 0usize;
    let status;
    let sol = loop {
        let sol = master.solve();
        rounds += 1;
        if sol.status != SolveStatus::Optimal {
            status = sol.status;
            break sol;
        }
        let obj = sol.objective;
        if rounds > 1 && (obj - prev_obj) / obj.abs().max(1.0) <= cfg.rel_improvement_stop {
            if let Some(w) = trace.as_mut() {
                w.write_record(&[rounds.to_string(), format!("{obj:.12e}"), "0".into()])?;
            }
            status = SolveStatus::Optimal;
            break sol;
        }
        prev_obj = obj;
        let picked: Vec<(usize, usize, f64)> = off
            .par_iter()
            .enumerate()
            .filter_map(|(e, &(i, j, q))| {
                if q == 0.0 {
                    return None;
                }
                let p = LiftedPair {
                    z1: sol.z[i],
                    z2: sol.z[j],
                    x1: sol.x[i],
                    x2: sol.x[j],
                    g11: sol.gamma_diag[i],
                    g12: sol.gamma_edge[e],
                    g22: sol.gamma_diag[j],
                };
                if p.persp_slack() < -PERSP_GUARD || cut_violation(&p) <= cfg.violation_tol {
                    return None;
                }
                let d = optimal_cut_weight(&p);
                if !(d > 0.0) {
                    return None;
                }
                Some((i, j, d.clamp(D_MIN, cfg.d_max)))
            })
            .collect();
        let mut added = 0usize;
        for (i, j, d) in picked {
            if master.register_cut(i, j, d) {
                added += 1;
            }
        }
        total_cuts += added;
        if let Some(w) = trace.as_mut() {
            w.write_record(&[rounds.to_string(), format!("{obj:.12e}"), added.to_string()])?;
        }
        if added == 0 {
            status = SolveStatus::Optimal;
            break sol;
        }
        if rounds >= cfg.max_rounds {
            status = SolveStatus::IterationLimit;
            break sol;
        }
    };
    if let Some(w) = trace.as_mut() {
        w.flush()?;
    }
    Ok(SolveReport {
        x_star: sol.x,
        z_star: sol.z,
        objective: sol.objective,
        rounded_objective: None,
        gap_percent: None,
        iterations: rounds,
        cuts_added: total_cuts,
        wall_time: start.elapsed().as_secs_f64(),
        status,
    })
}

/// Exact separation value and weights for a chain quadratic with `n <= 4`.
///
/// Every edge carries a weight pair `(d at left node, d at right node)`
/// tied by the per-node budget `sum_e |Q_ie| d_e^i = Q_ii`. On a chain the
/// two boundary nodes are pinned by their budgets outright, leaving one free
/// coordinate per interior node, so the search space is at most 2-d: a log
/// grid over each free coordinate followed by a few shrinking line scans.
/// Returns the separation value and the weights per edge, in edge order.
pub fn separation_oracle_small(
    q: &MMatrixQuadratic,
    z: &[f64],
    x: &[f64],
) -> (f64, Vec<PairWeights>) {
    let n = q.n();
    assert!((2..=4).contains(&n), "oracle is sized for n <= 4");
    assert_eq!(z.len(), n);
    assert_eq!(x.len(), n);
    for (t, &(i, j, v)) in q.off.iter().enumerate() {
        assert!(
            i == t && j == t + 1 && v != 0.0,
            "oracle needs a chain with nonzero couplings"
        );
    }
    let w: Vec<f64> = q.off.iter().map(|&(_, _, v)| v.abs()).collect();
    let pin_first = q.diag[0] / w[0];
    let pin_last = q.diag[n - 1] / w[n - 2];

    // Free coordinate t is the weight edge t puts on interior node t + 1;
    // the node budget then fixes what edge t + 1 puts on that node.
    let assemble = |free: &[f64]| -> Option<(f64, Vec<PairWeights>)> {
        let mut pairs = Vec::with_capacity(n - 1);
        for t in 0..n - 1 {
            let left = if t == 0 {
                pin_first
            } else {
                (q.diag[t] - w[t - 1] * free[t - 1]) / w[t]
            };
            let right = if t == n - 2 { pin_last } else { free[t] };
            pairs.push(PairWeights::new(left, right).ok()?);
        }
        let theta = pairs
            .iter()
            .enumerate()
            .map(|(t, pw)| w[t] * eval_g(z[t], z[t + 1], x[t], x[t + 1], *pw))
            .sum();
        Some((theta, pairs))
    };

    let dim = n - 2;
    if dim == 0 {
        return assemble(&[]).expect("boundary budgets give a feasible pair");
    }

    let mut best_val = f64::NEG_INFINITY;
    let mut best_free = vec![f64::NAN; dim];
    // The optimal face can be flat (a dead node contributes equal slopes to
    // both its edges), so ties within noise go to the smallest coordinates
    // to keep the answer deterministic.
    let consider = |free: &[f64], best_val: &mut f64, best_free: &mut Vec<f64>| {
        let Some((v, _)) = assemble(free) else {
            return;
        };
        let take = if best_val.is_finite() {
            let tie = 1e-11 * (1.0 + best_val.abs());
            v > *best_val + tie
                || (v >= *best_val - tie
                    && free
                        .iter()
                        .zip(best_free.iter())
                        .find(|(c, b)| c != b)
                        .is_some_and(|(c, b)| c < b))
        } else {
            v > *best_val
        };
        if take {
            *best_val = v;
            best_free.copy_from_slice(free);
        }
    };

    // Halving each interior budget is always feasible for an M-matrix; it
    // seeds the search in case the grid misses a narrow window.
    let seed: Vec<f64> = (1..n - 1).map(|i| q.diag[i] / (2.0 * w[i - 1])).collect();
    consider(&seed, &mut best_val, &mut best_free);
    let grid: Vec<f64> = (-200..=200).map(|k| 10f64.powf(k as f64 / 50.0)).collect();
    if dim == 1 {
        for &a in &grid {
            consider(&[a], &mut best_val, &mut best_free);
        }
    } else {
        for &a in &grid {
            for &b in &grid {
                consider(&[a, b], &mut best_val, &mut best_free);
            }
        }
    }
    assert!(best_val > f64::NEG_INFINITY, "no feasible weights found");

    // Shrinking line scans around the incumbent; the objective is concave
    // along each coordinate so this closes in quickly.
    let step = 10f64.powf(1.0 / 50.0);
    let mut width: Vec<f64> = best_free.iter().map(|a| a * (step - 1.0 / step)).collect();
    for _ in 0..4 {
        for c in 0..dim {
            let lo = (best_free[c] - width[c]).max(1e-12);
            let hi = best_free[c] + width[c];
            for k in 0..=200 {
                let mut cand = best_free.clone();
                cand[c] = lo + (hi - lo) * k as f64 / 200.0;
                consider(&cand, &mut best_val, &mut best_free);
            }
            width[c] *= 0.05;
        }
    }

    let (theta, pairs) = assemble(&best_free).expect("incumbent stays feasible");
    (theta, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{solve_cone_program, LinExpr, ProgramBuilder};
    use crate::model::SparsityPriors;
    use crate::relax::{solve_relaxation, z2_hull_block};
    use rand::{Rng, SeedableRng};

    fn example1() -> ProblemInstance {
        ProblemInstance::chain(vec![0.4, 1.0], 0.5, SparsityPriors::regularized(0.5))
            .unwrap()
            .with_big_m(1.0)
            .unwrap()
    }

    fn example2() -> ProblemInstance {
        ProblemInstance::chain(vec![0.3, 0.7, 1.0], 1.0, SparsityPriors::regularized(0.5))
            .unwrap()
            .with_big_m(1.0)
            .unwrap()
    }

    #[test]
    fn loop_reaches_integer_optimum_on_three_points() {
        let rep = solve_decomp(&example2(), &CuttingSurfaceConfig::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert!((rep.objective - 1.504).abs() <= 1e-2, "got {}", rep.objective);
        let want_z = [0.0, 1.0, 1.0];
        for (zi, wi) in rep.z_star.iter().zip(want_z) {
            assert!((zi - wi).abs() <= 1e-3, "z = {:?}", rep.z_star);
        }
        assert!(rep.cuts_added > 0);
    }

    #[test]
    fn loop_reaches_integer_optimum_on_two_points() {
        let rep = solve_decomp(&example1(), &CuttingSurfaceConfig::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert!((rep.objective - 0.993).abs() <= 1e-2, "got {}", rep.objective);
        assert!(rep.z_star[0].abs() <= 1e-3 && (rep.z_star[1] - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn zero_coupling_needs_no_cuts() {
        let inst = ProblemInstance::chain(
            vec![0.2, 0.9, 0.5, 0.4],
            0.0,
            SparsityPriors::regularized(0.3),
        )
        .unwrap();
        let rep = solve_decomp(&inst, &CuttingSurfaceConfig::default()).unwrap();
        let persp = solve_relaxation(&inst, RelaxationKind::Persp);
        assert_eq!(rep.cuts_added, 0);
        assert!((rep.objective - persp.objective).abs() <= 1e-6);
    }

    #[test]
    fn trace_records_each_round() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let cfg = CuttingSurfaceConfig {
            trace_path: Some(path.clone()),
            ..CuttingSurfaceConfig::default()
        };
        let rep = solve_decomp(&example2(), &cfg).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let mut objs = Vec::new();
        for rec in rdr.records() {
            let rec = rec.unwrap();
            assert_eq!(rec.len(), 3);
            objs.push(rec[1].parse::<f64>().unwrap());
            rec[2].parse::<usize>().unwrap();
        }
        assert_eq!(objs.len(), rep.iterations);
        for pair in objs.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-7, "objectives fell: {objs:?}");
        }
    }

    #[test]
    fn oracle_two_point_weights_are_pinned() {
        let q = example1().mmatrix();
        let (z, x) = (vec![0.3, 0.6], vec![0.3, 0.6]);
        let (theta, pairs) = separation_oracle_small(&q, &z, &x);
        assert_eq!(pairs.len(), 1);
        assert!((pairs[0].d1() - 3.0).abs() <= 1e-12);
        assert!((pairs[0].d2() - 3.0).abs() <= 1e-12);
        let direct = 0.5 * eval_g(z[0], z[1], x[0], x[1], pairs[0]);
        assert!((theta - direct).abs() <= 1e-12);
    }

    #[test]
    fn oracle_recovers_reported_weights() {
        let q = example2().mmatrix();
        // First-round point (the perspective optimum) and the third-round
        // point of the scheme, with the weights each is known to produce.
        let cases = [
            ([0.0, 0.40, 0.82], [0.0, 0.29, 0.58], [2.00, 0.51, 2.49, 2.00]),
            ([0.14, 1.0, 1.0], [0.10, 0.52, 0.75], [2.0, 2.5, 0.5, 2.0]),
        ];
        for (z, x, want) in cases {
            let (_, pairs) = separation_oracle_small(&q, &z, &x);
            let flat = [pairs[0].d1(), pairs[0].d2(), pairs[1].d1(), pairs[1].d2()];
            for (got, wv) in flat.iter().zip(want) {
                assert!((got - wv).abs() <= 2e-2, "weights {flat:?}, want {want:?}");
            }
            // Boundary budgets are met exactly, the interior one by balance.
            assert!((pairs[0].d1() - 2.0).abs() <= 1e-12);
            assert!((pairs[1].d2() - 2.0).abs() <= 1e-12);
            assert!((pairs[0].d2() + pairs[1].d1() - 3.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn oracle_matches_quadratic_at_integer_points() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eeded);
        for trial in 0..40 {
            let n = rng.gen_range(2..=4usize);
            let lambda = rng.gen_range(0.1..2.0);
            let y = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let inst =
                ProblemInstance::chain(y, lambda, SparsityPriors::regularized(0.2)).unwrap();
            let q = inst.mmatrix();
            let z: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..2u32))).collect();
            let x: Vec<f64> = z.iter().map(|&zi| zi * rng.gen_range(0.0..1.0)).collect();
            let (theta, pairs) = separation_oracle_small(&q, &z, &x);
            for (t, pw) in pairs.iter().enumerate() {
                assert!(pw.d1() * pw.d2() >= 1.0 - 1e-9);
                // Per-node budgets.
                let w = |t: usize| q.off[t].2.abs();
                if t > 0 {
                    let sum = w(t - 1) * pairs[t - 1].d2() + w(t) * pw.d1();
                    assert!((sum - q.diag[t]).abs() <= 1e-9, "trial {trial}");
                }
            }
            assert!((pairs[0].d1() - q.diag[0] / q.off[0].2.abs()).abs() <= 1e-12);
            let mut quad = 0.0;
            for i in 0..n {
                quad += q.diag[i] * x[i] * x[i];
            }
            for &(i, j, v) in &q.off {
                quad += 2.0 * v * x[i] * x[j];
            }
            // With z binary and x dead where z is, every hull term is tight
            // and the budgets resum the weights into the quadratic exactly.
            assert!((theta - quad).abs() <= 1e-6, "trial {trial}: {theta} vs {quad}");
        }
    }

    /// Drives the textbook version of the loop, a single epigraph variable
    /// cut by whole oracle assignments, and checks it lands where the lifted
    /// master does. The two formulations share nothing but the hull blocks,
    /// so agreement here exercises both sides.
    #[test]
    fn master_tracks_oracle_bound_on_three_points() {
        let inst = example2();
        let q = inst.mmatrix();
        let n = inst.n();
        let u = inst.big_m;
        let mu0 = 0.5;
        let mut cut_sets: Vec<Vec<PairWeights>> = Vec::new();
        let mut values = Vec::new();
        for _round in 0..25 {
            let mut b = ProgramBuilder::new();
            let x0 = b.nonneg_run(n, "x");
            let z0 = b.nonneg_run(n, "z");
            let t = b.nonneg("t");
            b.add_cost(t, 1.0);
            for i in 0..n {
                b.add_cost(x0 + i, -2.0 * inst.y[i]);
                b.add_cost(z0 + i, mu0);
                b.le(LinExpr::var(z0 + i), LinExpr::constant(1.0), "zub");
                b.le(
                    LinExpr::var(x0 + i),
                    LinExpr::scaled(z0 + i, u),
                    "bigm",
                );
            }
            // Round zero bound: perspective nodes plus raw edge squares.
            let mut base = LinExpr::var(t);
            for i in 0..n {
                let h = b.rotated_epigraph(
                    LinExpr::var(z0 + i),
                    LinExpr::var(x0 + i),
                    "persp",
                );
                base = base.plus(h, -1.0);
            }
            for &(i, j, v) in &q.off {
                let sq = b.nonneg("edge_sq");
                b.rotated_tie(
                    LinExpr::var(sq),
                    LinExpr::constant(1.0),
                    LinExpr::var(x0 + i).plus(x0 + j, -1.0),
                    "edge_sq",
                );
                base = base.plus(sq, -v.abs());
            }
            b.ge(base, LinExpr::constant(0.0), "t_base");
            for assignment in &cut_sets {
                let mut row = LinExpr::var(t);
                for (e, pw) in assignment.iter().enumerate() {
                    let (i, j, v) = q.off[e];
                    let head = z2_hull_block(
                        &mut b,
                        LinExpr::var(z0 + i),
                        LinExpr::var(z0 + j),
                        LinExpr::var(x0 + i),
                        LinExpr::var(x0 + j),
                        *pw,
                    );
                    row = row.plus(head, -v.abs());
                }
                b.ge(row, LinExpr::constant(0.0), "t_cut");
            }
            let prog = b.finalize();
            let sol = solve_cone_program(&prog, 1e-8, 1e-8);
            let x: Vec<f64> = (0..n).map(|i| sol.primal[x0 + i]).collect();
            let z: Vec<f64> = (0..n).map(|i| sol.primal[z0 + i]).collect();
            values.push(inst.constant() + sol.objective);
            let (theta, pairs) = separation_oracle_small(&q, &z, &x);
            if theta - sol.primal[t] <= 1e-5 * (1.0 + theta.abs()) {
                break;
            }
            cut_sets.push(pairs);
        }
        for pair in values.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-7, "bound fell: {values:?}");
        }
        // The first value is the perspective bound. Later rounds depend on
        // which optimal face point the separation picks (the face is flat
        // when a node is dead), so only the endpoint is pinned down.
        assert!((values[0] - 1.413).abs() <= 1e-2, "start {values:?}");
        let lifted = solve_decomp(&inst, &CuttingSurfaceConfig::default()).unwrap();
        let last = values.last().unwrap();
        assert!(
            (last - lifted.objective).abs() <= 5e-3,
            "oracle loop {last} vs lifted master {}",
            lifted.objective
        );
    }
}
