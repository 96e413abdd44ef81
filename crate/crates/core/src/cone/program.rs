//! Cone program container and an incremental builder.
//!
//! Programs are in equality standard form:
//!
//! ```text
//!     min  c' x    s.t.  A x = b,   x in K,
//! ```
//!
//! where `K` is a product of nonnegative orthants, second-order cones
//! `{ u : u_1 >= ||u_2..|| }`, and rotated second-order cones
//! `{ (s, z, v..) : s z >= ||v||^2, s >= 0, z >= 0 }`. Cone blocks are laid
//! out back to back and must partition the variable range exactly.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeBlockKind {
    NonNeg,
    SecondOrder,
    RotatedSecondOrder,
}

/// One cone block over `len` consecutive variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConeBlock {
    pub kind: ConeBlockKind,
    pub len: usize,
}

/// A sparse equality row `sum coeffs = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Conic program in equality standard form; see the module docs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram {
    pub num_vars: usize,
    /// Sparse cost row of the minimization objective.
    pub objective: Vec<(usize, f64)>,
    pub rows: Vec<LinRow>,
    /// Ordered blocks; lengths must sum to `num_vars`.
    pub cones: Vec<ConeBlock>,
    pub var_names: Option<Vec<String>>,
}

impl ConeProgram {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut covered = 0usize;
        for blk in &self.cones {
            let min_len = match blk.kind {
                ConeBlockKind::NonNeg => 1,
                ConeBlockKind::SecondOrder => 2,
                ConeBlockKind::RotatedSecondOrder => 3,
            };
            if blk.len < min_len {
                return Err(Error::InvalidInput(format!(
                    "cone block {:?} shorter than {min_len}",
                    blk.kind
                )));
            }
            covered += blk.len;
        }
        if covered != self.num_vars {
            return Err(Error::InvalidInput(format!(
                "cone blocks cover {covered} of {} variables",
                self.num_vars
            )));
        }
        for (j, v) in &self.objective {
            if *j >= self.num_vars || !v.is_finite() {
                return Err(Error::InvalidInput(format!("bad cost term ({j}, {v})")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::InvalidInput(format!("row {i} has non-finite rhs")));
            }
            for (j, v) in &row.coeffs {
                if *j >= self.num_vars || !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "row {i} has bad term ({j}, {v})"
                    )));
                }
            }
        }
        if let Some(names) = &self.var_names {
            if names.len() != self.num_vars {
                return Err(Error::InvalidInput("name table length mismatch".into()));
            }
        }
        Ok(())
    }

    /// Plain-text dump of the whole program, one directive per line:
    ///
    /// ```text
    ///     conic-program
    ///     vars <n>
    ///     cone (nonneg|soc|rsoc) <len>        one per block, in order
    ///     cost <var> <coef>                   one per objective nonzero
    ///     row <rhs> <var>:<coef> ...          one per equality row
    ///     name <var> <label>                  only when names are recorded
    ///     end
    /// ```
    pub fn dump_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "conic-program");
        let _ = writeln!(out, "vars {}", self.num_vars);
        for blk in &self.cones {
            let kind = match blk.kind {
                ConeBlockKind::NonNeg => "nonneg",
                ConeBlockKind::SecondOrder => "soc",
                ConeBlockKind::RotatedSecondOrder => "rsoc",
            };
            let _ = writeln!(out, "cone {kind} {}", blk.len);
        }
        for (j, v) in &self.objective {
            let _ = writeln!(out, "cost {j} {v}");
        }
        for row in &self.rows {
            let _ = write!(out, "row {}", row.rhs);
            for (j, v) in &row.coeffs {
                let _ = write!(out, " {j}:{v}");
            }
            let _ = writeln!(out);
        }
        if let Some(names) = &self.var_names {
            for (j, name) in names.iter().enumerate() {
                let _ = writeln!(out, "name {j} {name}");
            }
        }
        out.push_str("end\n");
        out
    }
}

/// Linear expression `sum coef * var + constant` over already-allocated
/// variables, used to state rows against the builder.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn var(v: usize) -> Self {
        LinExpr {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn scaled(v: usize, coef: f64) -> Self {
        LinExpr {
            terms: vec![(v, coef)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        LinExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn plus(mut self, v: usize, coef: f64) -> Self {
        self.terms.push((v, coef));
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }
}

/// Incremental construction of a [`ConeProgram`]. Variables are allocated
/// into cone blocks in call order; adjacent nonnegative singletons are
/// merged into one block at the end.
#[derive(Debug)]
pub struct ProgramBuilder {
    blocks: Vec<ConeBlock>,
    num_vars: usize,
    costs: Vec<(usize, f64)>,
    rows: Vec<LinRow>,
    names: Option<Vec<String>>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        ProgramBuilder {
            blocks: Vec::new(),
            num_vars: 0,
            costs: Vec::new(),
            rows: Vec::new(),
            names: None,
        }
    }

    /// Record variable names for debugging dumps.
    pub fn with_names(mut self) -> Self {
        self.names = Some(Vec::new());
        self
    }

    fn push_names(&mut self, base: &str, count: usize) {
        if let Some(names) = &mut self.names {
            if count == 1 {
                names.push(base.to_string());
            } else {
                for k in 0..count {
                    names.push(format!("{base}[{k}]"));
                }
            }
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// One nonnegative variable.
    pub fn nonneg(&mut self, name: &str) -> usize {
        let id = self.num_vars;
        self.blocks.push(ConeBlock {
            kind: ConeBlockKind::NonNeg,
            len: 1,
        });
        self.num_vars += 1;
        self.push_names(name, 1);
        id
    }

    /// A run of `count` nonnegative variables; returns the first id.
    pub fn nonneg_run(&mut self, count: usize, name: &str) -> usize {
        let id = self.num_vars;
        if count > 0 {
            self.blocks.push(ConeBlock {
                kind: ConeBlockKind::NonNeg,
                len: count,
            });
            self.num_vars += count;
            self.push_names(name, count);
        }
        id
    }

    /// A fresh rotated cone triple `(s, z, v)` with `s z >= v^2`.
    pub fn rotated(&mut self, name: &str) -> (usize, usize, usize) {
        let id = self.num_vars;
        self.blocks.push(ConeBlock {
            kind: ConeBlockKind::RotatedSecondOrder,
            len: 3,
        });
        self.num_vars += 3;
        self.push_names(name, 3);
        (id, id + 1, id + 2)
    }

    /// A second-order cone block of `len >= 2` variables; returns the first
    /// (head) variable id.
    pub fn soc(&mut self, len: usize, name: &str) -> usize {
        assert!(len >= 2, "second-order blocks need len >= 2");
        let id = self.num_vars;
        self.blocks.push(ConeBlock {
            kind: ConeBlockKind::SecondOrder,
            len,
        });
        self.num_vars += len;
        self.push_names(name, len);
        id
    }

    pub fn add_cost(&mut self, var: usize, coef: f64) {
        if coef != 0.0 {
            self.costs.push((var, coef));
        }
    }

    /// `expr = 0` as an equality row.
    pub fn eq_zero(&mut self, expr: LinExpr) {
        self.rows.push(LinRow {
            coeffs: expr.terms,
            rhs: -expr.constant,
        });
    }

    /// `lhs = rhs`.
    pub fn eq(&mut self, lhs: LinExpr, mut rhs: LinExpr) {
        for t in &mut rhs.terms {
            t.1 = -t.1;
        }
        let mut expr = lhs;
        expr.terms.extend(rhs.terms);
        expr.constant -= rhs.constant;
        self.eq_zero(expr);
    }

    /// `lhs <= rhs`, materialized with a fresh slack: `lhs + slack = rhs`.
    pub fn le(&mut self, lhs: LinExpr, rhs: LinExpr, slack_name: &str) -> usize {
        let slack = self.nonneg(slack_name);
        self.eq(lhs.plus(slack, 1.0), rhs);
        slack
    }

    /// `lhs >= rhs`, materialized with a fresh surplus variable.
    pub fn ge(&mut self, lhs: LinExpr, rhs: LinExpr, slack_name: &str) -> usize {
        let slack = self.nonneg(slack_name);
        self.eq(lhs.plus(slack, -1.0), rhs);
        slack
    }

    /// Constrain `s_expr * z_expr >= v_expr^2` through a fresh rotated
    /// triple tied to the three expressions.
    pub fn rotated_tie(&mut self, s: LinExpr, z: LinExpr, v: LinExpr, name: &str) {
        let (a, b, c) = self.rotated(name);
        self.eq(LinExpr::var(a), s);
        self.eq(LinExpr::var(b), z);
        self.eq(LinExpr::var(c), v);
    }

    /// Epigraph form `t * z_expr >= v_expr^2` where `t` is the returned
    /// head variable of a fresh rotated triple (usable in costs and rows).
    pub fn rotated_epigraph(&mut self, z: LinExpr, v: LinExpr, name: &str) -> usize {
        let (a, b, c) = self.rotated(name);
        self.eq(LinExpr::var(b), z);
        self.eq(LinExpr::var(c), v);
        a
    }

    pub fn finalize(self) -> ConeProgram {
        // Merge adjacent nonneg blocks (separable, so purely cosmetic) and
        // combine duplicate terms in costs and rows.
        let mut cones: Vec<ConeBlock> = Vec::with_capacity(self.blocks.len());
        for blk in self.blocks {
            match (cones.last_mut(), blk.kind) {
                (Some(last), ConeBlockKind::NonNeg) if last.kind == ConeBlockKind::NonNeg => {
                    last.len += blk.len;
                }
                _ => cones.push(blk),
            }
        }
        let objective = combine_terms(self.costs);
        let rows = self
            .rows
            .into_iter()
            .map(|r| LinRow {
                coeffs: combine_terms(r.coeffs),
                rhs: r.rhs,
            })
            .collect();
        ConeProgram {
            num_vars: self.num_vars,
            objective,
            rows,
            cones,
            var_names: self.names,
        }
    }
}

impl Default for ProgramBuilder {
    fn default() -> Self {
        ProgramBuilder::new()
    }
}

fn combine_terms(mut terms: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    terms.sort_unstable_by_key(|t| t.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
    for (j, v) in terms {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += v,
            _ => out.push((j, v)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_allocates_and_merges_blocks() {
        let mut b = ProgramBuilder::new();
        let x = b.nonneg("x");
        let y = b.nonneg("y");
        let (s, z, v) = b.rotated("r");
        let w = b.nonneg_run(2, "w");
        b.add_cost(x, 1.0);
        b.add_cost(x, 2.0);
        b.eq(
            LinExpr::var(y).plus(s, 1.0),
            LinExpr::constant(2.0).plus(w, -1.0),
        );
        b.eq_zero(LinExpr::var(z).plus(v, -1.0));
        let p = b.finalize();
        p.validate().unwrap();
        assert_eq!(p.num_vars, 7);
        // nonneg(x), nonneg(y) merged; rotated; nonneg run separate block.
        assert_eq!(
            p.cones,
            vec![
                ConeBlock { kind: ConeBlockKind::NonNeg, len: 2 },
                ConeBlock { kind: ConeBlockKind::RotatedSecondOrder, len: 3 },
                ConeBlock { kind: ConeBlockKind::NonNeg, len: 2 },
            ]
        );
        assert_eq!(p.objective, vec![(x, 3.0)]);
        assert_eq!(p.rows.len(), 2);
        assert_eq!(p.rows[0].rhs, 2.0);
        assert_eq!(p.rows[0].coeffs, vec![(y, 1.0), (s, 1.0), (w, 1.0)]);
    }

    #[test]
    fn validate_rejects_uncovered_vars() {
        let p = ConeProgram {
            num_vars: 4,
            objective: vec![],
            rows: vec![],
            cones: vec![ConeBlock {
                kind: ConeBlockKind::RotatedSecondOrder,
                len: 3,
            }],
            var_names: None,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn dump_round_trips_key_lines() {
        let mut b = ProgramBuilder::new().with_names();
        let x = b.nonneg("amp");
        b.add_cost(x, 1.5);
        b.eq(LinExpr::var(x), LinExpr::constant(3.0));
        let p = b.finalize();
        let text = p.dump_text();
        assert!(text.starts_with("conic-program\nvars 1\n"));
        assert!(text.contains("cone nonneg 1"));
        assert!(text.contains("cost 0 1.5"));
        assert!(text.contains("row 3 0:1"));
        assert!(text.contains("name 0 amp"));
        assert!(text.ends_with("end\n"));
    }
}
