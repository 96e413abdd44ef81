//! Exact enumeration for tiny instances, thresholding, and gap reporting.
//!
//! The enumeration replaces a branch-and-bound at desk scale: it walks every
//! support allowed by the priors and solves the restricted box QP exactly,
//! which is what certifies relaxation values elsewhere in the test suite.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::model::ProblemInstance;
use crate::{Error, Result};

/// Entries at or below this magnitude count as zero, both when forming a
/// rounded support and in sparsity metrics.
pub const NONZERO_TOL: f64 = 1e-3;

/// Keeps the `k` largest entries of `x_hat` (ties broken toward the lowest
/// index), zeroes the rest, and evaluates the full objective at the rounded
/// point with `z` set to its support. Kept entries within [`NONZERO_TOL`] of
/// zero are dropped so the support matches the sparsity convention.
pub fn threshold_round(x_hat: &[f64], k: usize, inst: &ProblemInstance) -> (Vec<f64>, f64) {
    let n = inst.n();
    assert_eq!(x_hat.len(), n, "point length mismatch");
    assert!(k <= n, "cannot keep more entries than the signal has");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x_hat[b]
            .abs()
            .partial_cmp(&x_hat[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut x_bar = vec![0.0; n];
    for &i in order.iter().take(k) {
        if x_hat[i].abs() > NONZERO_TOL {
            x_bar[i] = x_hat[i];
        }
    }
    let z_bar: Vec<f64> = x_bar.iter().map(|&v| f64::from(v != 0.0)).collect();
    let zeta = inst.objective_value(&x_bar, &z_bar);
    (x_bar, zeta)
}

/// `100 * (upper - lower) / upper`.
pub fn optimality_gap(zeta_ub: f64, zeta_lb: f64) -> Result<f64> {
    if !(zeta_ub.is_finite() && zeta_lb.is_finite() && zeta_ub > 0.0) {
        return Err(Error::Solver(format!(
            "optimality gap undefined for bounds ({zeta_lb}, {zeta_ub})"
        )));
    }
    Ok(100.0 * (zeta_ub - zeta_lb) / zeta_ub)
}

/// Exact optimum by support enumeration; usable up to `n = 16`.
///
/// Every `z` feasible for the priors is tried; the continuous part reduces
/// to a box QP on the support, solved by an active-set loop on the bounds.
/// Returns `(objective, z, x)` with ties between supports broken toward the
/// lexicographically smallest one.
pub fn enumerate_miqo(inst: &ProblemInstance) -> (f64, Vec<f64>, Vec<f64>) {
    let n = inst.n();
    assert!(n <= 16, "enumeration is sized for n <= 16");
    let best = (0u32..1 << n)
        .into_par_iter()
        .filter_map(|mask| {
            let zb: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            if !inst.priors.feasible_support(&zb) {
                return None;
            }
            let support: Vec<usize> = (0..n).filter(|&i| zb[i]).collect();
            let x = support_qp(inst, &support);
            let z: Vec<f64> = zb.iter().map(|&b| f64::from(b)).collect();
            Some((inst.objective_value(&x, &z), mask, z, x))
        })
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
        .expect("the empty support is always feasible");
    (best.0, best.2, best.3)
}

/// Minimizer of `||y - x||^2 + lambda * sum_edges (x_i - x_j)^2` over
/// `0 <= x_i <= bigM` on the given support, zero elsewhere. Stationarity is
/// `Q_SS x_S = y_S` on the free part; bounds are handled by fixing violated
/// coordinates and releasing them when their gradient sign flips.
fn support_qp(inst: &ProblemInstance, support: &[usize]) -> Vec<f64> {
    let n = inst.n();
    let m = support.len();
    let mut x = vec![0.0; n];
    if m == 0 {
        return x;
    }
    let q = inst.mmatrix();
    let mut qs = DMatrix::zeros(m, m);
    let pos = {
        let mut p = vec![usize::MAX; n];
        for (r, &i) in support.iter().enumerate() {
            p[i] = r;
        }
        p
    };
    for (r, &i) in support.iter().enumerate() {
        qs[(r, r)] = q.diag[i];
    }
    for &(i, j, v) in &q.off {
        if pos[i] != usize::MAX && pos[j] != usize::MAX {
            qs[(pos[i], pos[j])] = v;
            qs[(pos[j], pos[i])] = v;
        }
    }
    let ys = DVector::from_fn(m, |r, _| inst.y[support[r]]);
    let up = inst.big_m;
    let tol = 1e-12 * (1.0 + up);

    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Free,
        Lo,
        Up,
    }
    let mut state = vec![State::Free; m];
    let mut xs = DVector::zeros(m);
    for _ in 0..4 * m + 8 {
        let free: Vec<usize> = (0..m).filter(|&r| state[r] == State::Free).collect();
        if !free.is_empty() {
            let qf = DMatrix::from_fn(free.len(), free.len(), |a, b| qs[(free[a], free[b])]);
            let rhs = DVector::from_fn(free.len(), |a, _| {
                let mut v = ys[free[a]];
                for r in 0..m {
                    if state[r] == State::Up {
                        v -= qs[(free[a], r)] * up;
                    }
                }
                v
            });
            let sol = qf.lu().solve(&rhs).expect("support quadratic is positive definite");
            for (a, &r) in free.iter().enumerate() {
                xs[r] = sol[a];
            }
        }
        let mut clamped = false;
        for r in 0..m {
            if state[r] != State::Free {
                continue;
            }
            if xs[r] < -tol {
                state[r] = State::Lo;
                xs[r] = 0.0;
                clamped = true;
            } else if xs[r] > up + tol {
                state[r] = State::Up;
                xs[r] = up;
                clamped = true;
            }
        }
        if clamped {
            continue;
        }
        // Bounds all hold; release the fixed coordinate whose gradient
        // points hardest back into the box, if any.
        let grad = &qs * &xs - &ys;
        let mut worst = (tol, usize::MAX);
        for r in 0..m {
            let push = match state[r] {
                State::Lo => -grad[r],
                State::Up => grad[r],
                State::Free => continue,
            };
            if push > worst.0 {
                worst = (push, r);
            }
        }
        if worst.1 == usize::MAX {
            break;
        }
        state[worst.1] = State::Free;
    }
    for (r, &i) in support.iter().enumerate() {
        x[i] = xs[r].clamp(0.0, up);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutting::{solve_decomp, CuttingSurfaceConfig};
    use crate::model::SparsityPriors;
    use crate::relax::{solve_relaxation, RelaxationKind};
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
    fn threshold_orders_and_breaks_ties_low() {
        let inst = ProblemInstance::chain(
            vec![1.0, 1.0, 1.0],
            0.0,
            SparsityPriors::regularized(0.1),
        )
        .unwrap();
        let (xb, _) = threshold_round(&[3.0, 1.0, 2.0], 2, &inst);
        assert_eq!(xb, vec![3.0, 0.0, 2.0]);
        let (xb, _) = threshold_round(&[2.0, 2.0, 1.0], 1, &inst);
        assert_eq!(xb, vec![2.0, 0.0, 0.0]);
        let (xb, _) = threshold_round(&[3.0, 1.0, 2.0], 0, &inst);
        assert_eq!(xb, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn threshold_keeps_sparse_points_unchanged() {
        let inst = ProblemInstance::chain(
            vec![1.0, 1.0, 1.0, 1.0],
            0.2,
            SparsityPriors::regularized(0.1),
        )
        .unwrap();
        let x = vec![0.0, 0.5, 0.0, 0.2];
        let (xb, zeta) = threshold_round(&x, 3, &inst);
        assert_eq!(xb, x);
        let z = vec![0.0, 1.0, 0.0, 1.0];
        assert!((zeta - inst.objective_value(&x, &z)).abs() <= 1e-12);
    }

    #[test]
    fn threshold_of_integral_decomp_solution_is_exact() {
        let inst = example2();
        let rep = solve_decomp(&inst, &CuttingSurfaceConfig::default()).unwrap();
        let (_, ub) = threshold_round(&rep.x_star, 2, &inst);
        assert!((ub - 1.504).abs() <= 1e-2, "ub = {ub}");
        assert!(ub >= rep.objective - 1e-6);
    }

    #[test]
    fn gap_formula_and_domain() {
        assert_eq!(optimality_gap(2.0, 2.0).unwrap(), 0.0);
        assert_eq!(optimality_gap(2.0, 1.0).unwrap(), 50.0);
        assert!(optimality_gap(0.0, -1.0).is_err());
        assert!(optimality_gap(-2.0, -3.0).is_err());
        assert!(optimality_gap(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn enumeration_solves_two_point_instance() {
        let (zeta, z, x) = enumerate_miqo(&example1());
        let exact = 0.16 + 1.0 / 9.0 + 2.0 / 9.0 + 0.5;
        assert!((zeta - exact).abs() <= 1e-9, "zeta = {zeta}");
        assert_eq!(z, vec![0.0, 1.0]);
        assert!(x[0] == 0.0 && (x[1] - 2.0 / 3.0).abs() <= 1e-9);
    }

    #[test]
    fn enumeration_solves_three_point_instance() {
        let (zeta, z, x) = enumerate_miqo(&example2());
        assert!((zeta - 1.504).abs() <= 1e-9, "zeta = {zeta}");
        assert_eq!(z, vec![0.0, 1.0, 1.0]);
        assert!((x[1] - 0.48).abs() <= 1e-9 && (x[2] - 0.74).abs() <= 1e-9);
    }

    #[test]
    fn enumeration_of_zero_signal_is_empty() {
        let inst = ProblemInstance::chain(
            vec![0.0; 4],
            0.7,
            SparsityPriors::regularized(0.3),
        )
        .unwrap()
        .with_big_m(1.0)
        .unwrap();
        let (zeta, z, x) = enumerate_miqo(&inst);
        assert_eq!(zeta, 0.0);
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relaxations_and_rounding_sandwich_the_optimum() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(0xacce55);
        for _ in 0..10 {
            let n = rng.gen_range(2..=6usize);
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let lambda = rng.gen_range(0.0..1.5);
            let mu0 = rng.gen_range(0.1..0.6);
            let inst =
                ProblemInstance::chain(y, lambda, SparsityPriors::regularized(mu0)).unwrap();
            let (zeta_star, _, x_star) = enumerate_miqo(&inst);
            for kind in [
                RelaxationKind::L1,
                RelaxationKind::Persp,
                RelaxationKind::Pairwise,
                RelaxationKind::Decomp,
            ] {
                let sol = solve_relaxation(&inst, kind);
                assert!(
                    sol.objective <= zeta_star + 1e-6,
                    "{kind} bound {} above optimum {zeta_star}",
                    sol.objective
                );
            }
            let k = x_star.iter().filter(|v| v.abs() > NONZERO_TOL).count();
            let rep = solve_decomp(&inst, &CuttingSurfaceConfig::default()).unwrap();
            let (_, ub) = threshold_round(&rep.x_star, k, &inst);
            assert!(ub >= zeta_star - 1e-9, "rounded {ub} below optimum {zeta_star}");
        }
    }

    #[test]
    fn support_qp_respects_the_box() {
        // A negative reading with weak coupling lands on the lower bound.
        let inst = ProblemInstance::chain(
            vec![-0.5, 1.2, 2.0],
            0.1,
            SparsityPriors::regularized(0.1),
        )
        .unwrap();
        let x = support_qp(&inst, &[0, 1, 2]);
        assert_eq!(x[0], 0.0);
        let q = inst.mmatrix();
        // Stationarity on the coordinates strictly inside the box.
        for i in 1..3 {
            let mut g = q.diag[i] * x[i] - inst.y[i];
            for &(a, b, v) in &q.off {
                if a == i {
                    g += v * x[b];
                } else if b == i {
                    g += v * x[a];
                }
            }
            assert!(x[i] > 0.0 && x[i] < inst.big_m);
            assert!(g.abs() <= 1e-10, "gradient {g} at {i}");
        }

        // A spike far above the cap lands exactly on it.
        let inst = ProblemInstance::chain(vec![5.0, 5.0], 0.5, SparsityPriors::default())
            .unwrap()
            .with_big_m(1.0)
            .unwrap();
        let x = support_qp(&inst, &[0, 1]);
        assert_eq!(x, vec![1.0, 1.0]);
    }
}
