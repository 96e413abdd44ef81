//! Conic optimization layer: program container, builder, and the solver
//! backend interface.
//!
//! Everything above this module talks to [`ConeProgram`] and
//! [`solve_cone_program`]; the actual engine is chosen at runtime through
//! the `L0DENOISE_CONE_BACKEND` environment variable (default `hsd`, the
//! built-in homogeneous self-dual interior point method). Alternative
//! engines register through [`register_backend`].

pub mod ipm;
pub mod program;
pub mod sparse;

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

pub use ipm::{solve_with_settings, ConeSolution, ConeStatus, SolverSettings};
pub use program::{ConeBlock, ConeBlockKind, ConeProgram, LinExpr, LinRow, ProgramBuilder};

/// A pluggable engine for cone programs over nonneg and (rotated)
/// second-order cones. Implementations must honor the sign convention of
/// [`ConeProgram`]: minimize `c'x` subject to `A x = b`, `x` in cone.
pub trait ConeSolver: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, program: &ConeProgram, feas_tol: f64, gap_tol: f64) -> ConeSolution;
}

struct HsdBackend;

impl ConeSolver for HsdBackend {
    fn name(&self) -> &str {
        "hsd"
    }

    fn solve(&self, program: &ConeProgram, feas_tol: f64, gap_tol: f64) -> ConeSolution {
        let settings = SolverSettings {
            feas_tol,
            gap_tol,
            ..SolverSettings::default()
        };
        solve_with_settings(program, &settings)
    }
}

type Registry = Mutex<HashMap<String, Box<dyn ConeSolver>>>;

fn registry() -> &'static Registry {
    static REGISTRY: OnceLock<Registry> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut map: HashMap<String, Box<dyn ConeSolver>> = HashMap::new();
        map.insert("hsd".to_string(), Box::new(HsdBackend));
        Mutex::new(map)
    })
}

/// Make `solver` selectable through `L0DENOISE_CONE_BACKEND`. Replaces any
/// backend previously registered under the same name.
pub fn register_backend(solver: Box<dyn ConeSolver>) {
    let name = solver.name().to_string();
    registry().lock().unwrap().insert(name, solver);
}

/// Solve `program` with a named registered backend.
pub fn solve_with_backend(
    name: &str,
    program: &ConeProgram,
    feas_tol: f64,
    gap_tol: f64,
) -> ConeSolution {
    let reg = registry().lock().unwrap();
    let solver = reg
        .get(name)
        .unwrap_or_else(|| panic!("unknown cone backend {name:?}"));
    solver.solve(program, feas_tol, gap_tol)
}

/// Solve `program` with the backend named by `L0DENOISE_CONE_BACKEND`
/// (default `hsd`).
pub fn solve_cone_program(program: &ConeProgram, feas_tol: f64, gap_tol: f64) -> ConeSolution {
    let name = std::env::var("L0DENOISE_CONE_BACKEND").unwrap_or_else(|_| "hsd".to_string());
    solve_with_backend(&name, program, feas_tol, gap_tol)
}

#[cfg(test)]
mod tests {
    use super::program::ProgramBuilder;
    use super::*;

    fn solve_default(p: &ConeProgram) -> ConeSolution {
        solve_with_settings(p, &SolverSettings::default())
    }

    #[test]
    fn tiny_lp() {
        // min x1 + 2 x2  s.t. x1 + x2 = 1, x >= 0  ->  x = (1, 0), value 1.
        let mut b = ProgramBuilder::new();
        let x1 = b.nonneg("x1");
        let x2 = b.nonneg("x2");
        b.add_cost(x1, 1.0);
        b.add_cost(x2, 2.0);
        b.eq(LinExpr::var(x1).plus(x2, 1.0), LinExpr::constant(1.0));
        let p = b.finalize();
        let sol = solve_default(&p);
        assert_eq!(sol.status, ConeStatus::Optimal);
        assert!((sol.primal[x1] - 1.0).abs() < 1e-7, "x1 = {}", sol.primal[x1]);
        assert!(sol.primal[x2].abs() < 1e-7);
        assert!((sol.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn rotated_cone_epigraph() {
        // min s  s.t.  s z >= v^2, z = 0.5, v = 1  ->  s = 2.
        let mut b = ProgramBuilder::new();
        let (s, z, v) = b.rotated("q");
        b.add_cost(s, 1.0);
        b.eq(LinExpr::var(z), LinExpr::constant(0.5));
        b.eq(LinExpr::var(v), LinExpr::constant(1.0));
        let p = b.finalize();
        let sol = solve_default(&p);
        assert_eq!(sol.status, ConeStatus::Optimal);
        assert!((sol.primal[s] - 2.0).abs() < 1e-6, "s = {}", sol.primal[s]);
        assert!((sol.objective - 2.0).abs() < 1e-6);
    }

    #[test]
    fn second_order_norm_bound() {
        // min t  s.t.  t >= ||(3, 4)||  ->  t = 5.
        let mut b = ProgramBuilder::new();
        let t = b.soc(3, "t");
        b.add_cost(t, 1.0);
        b.eq(LinExpr::var(t + 1), LinExpr::constant(3.0));
        b.eq(LinExpr::var(t + 2), LinExpr::constant(4.0));
        let p = b.finalize();
        let sol = solve_default(&p);
        assert_eq!(sol.status, ConeStatus::Optimal);
        assert!((sol.primal[t] - 5.0).abs() < 1e-6, "t = {}", sol.primal[t]);
    }

    #[test]
    fn detects_infeasible() {
        let mut b = ProgramBuilder::new();
        let x = b.nonneg("x");
        b.add_cost(x, 1.0);
        b.eq(LinExpr::var(x), LinExpr::constant(1.0));
        b.eq(LinExpr::var(x), LinExpr::constant(2.0));
        let p = b.finalize();
        let sol = solve_default(&p);
        assert_eq!(sol.status, ConeStatus::Infeasible);
        assert!(sol.objective.is_infinite());
    }

    #[test]
    fn detects_unbounded() {
        // min -x  s.t.  x - y = 0, x, y >= 0.
        let mut b = ProgramBuilder::new();
        let x = b.nonneg("x");
        let y = b.nonneg("y");
        b.add_cost(x, -1.0);
        b.eq_zero(LinExpr::var(x).plus(y, -1.0));
        let p = b.finalize();
        let sol = solve_default(&p);
        assert_eq!(sol.status, ConeStatus::Unbounded);
        assert!(sol.objective == f64::NEG_INFINITY);
    }

    #[test]
    fn deterministic_across_runs() {
        let build = || {
            let mut b = ProgramBuilder::new();
            let (s, z, v) = b.rotated("q");
            let x = b.nonneg("x");
            b.add_cost(s, 1.0);
            b.add_cost(x, 0.25);
            b.eq(LinExpr::var(z).plus(x, 1.0), LinExpr::constant(1.0));
            b.eq(LinExpr::var(v), LinExpr::constant(1.0));
            b.finalize()
        };
        let a = solve_default(&build());
        let bsol = solve_default(&build());
        assert_eq!(a.iterations, bsol.iterations);
        assert_eq!(a.primal, bsol.primal);
        assert_eq!(a.dual_eq, bsol.dual_eq);
    }

    #[test]
    fn registry_lookup_reaches_registered_backend() {
        struct Fake;
        impl ConeSolver for Fake {
            fn name(&self) -> &str {
                "fake-test-backend"
            }
            fn solve(&self, program: &ConeProgram, _f: f64, _g: f64) -> ConeSolution {
                ConeSolution {
                    primal: vec![0.0; program.num_vars],
                    dual_eq: vec![],
                    objective: 42.0,
                    status: ConeStatus::Optimal,
                    solve_time: 0.0,
                    iterations: 0,
                }
            }
        }
        register_backend(Box::new(Fake));
        let mut b = ProgramBuilder::new();
        let x = b.nonneg("x");
        b.eq(LinExpr::var(x), LinExpr::constant(1.0));
        let p = b.finalize();
        let sol = solve_with_backend("fake-test-backend", &p, 1e-8, 1e-8);
        assert_eq!(sol.objective, 42.0);
        let sol2 = solve_cone_program(&p, 1e-8, 1e-8);
        assert_eq!(sol2.status, ConeStatus::Optimal);
        assert!((sol2.primal[x] - 1.0).abs() < 1e-7);
    }
}
