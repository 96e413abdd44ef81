//! Problem data: signals, graphs, sparsity priors, and solve reports.
//!
//! An instance couples a nonnegative noisy signal `y` with a graph over its
//! indices (the chain in all experiments), a smoothness weight `lambda`, and
//! a sparsity prior. The quadratic part of the objective is the M-matrix
//! `Q = I + lambda * L` where `L` is the graph Laplacian; it is kept in a
//! sparse edge-list form because every algorithm here works edge by edge.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::{Error, Result};

/// Undirected graph over signal indices. Edges are stored as `(i, j)` with
/// `i < j`, sorted, without duplicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl AdjacencyGraph {
    /// Path graph `0 - 1 - ... - n-1`.
    pub fn chain(n: usize) -> Self {
        AdjacencyGraph {
            n,
            edges: (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        }
    }

    pub fn new(n: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        for e in edges.iter_mut() {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.0 == e.1 || e.1 >= n {
                return Err(Error::InvalidInput(format!(
                    "bad edge ({}, {}) for n = {}",
                    e.0, e.1, n
                )));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(AdjacencyGraph { n, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Vertex degrees, in index order.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// True when the edge set is exactly the path `0-1-...-(n-1)`.
    pub fn is_chain(&self) -> bool {
        self.edges.len() == self.n.saturating_sub(1)
            && self.edges.iter().enumerate().all(|(i, &e)| e == (i, i + 1))
    }
}

/// Combinatorial part of the prior on the indicator vector `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    /// No hard constraint on `z`.
    None,
    /// At most `k` nonzero entries: `sum z_i <= k`.
    Cardinality { k: usize },
    /// No hard constraint; a cost `mu0 * sum z_i` is added to the objective.
    Regularized { mu0: f64 },
    /// Spike prior: at most `k` nonzeros total, at most `s` spikes counted
    /// by the total variation `sum |z_{i+1} - z_i| <= 2s`, and each active
    /// index must sit inside a run of at least `h` active neighbors
    /// (`sum_{|i - l| <= h} z_i >= h * z_l` for every `l`).
    Spikes { k: usize, s: usize, h: usize },
}

/// Full prior: the combinatorial kind plus always-on linear weights.
///
/// `kappa` is an extra per-index support cost (used by the dual decomposition
/// experiments), `mu1` an L1 shrinkage weight on `x`. Both default to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityPriors {
    #[serde(flatten)]
    pub kind: PriorKind,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub mu1: f64,
}

impl Default for SparsityPriors {
    fn default() -> Self {
        SparsityPriors {
            kind: PriorKind::None,
            kappa: 0.0,
            mu1: 0.0,
        }
    }
}

impl SparsityPriors {
    pub fn cardinality(k: usize) -> Self {
        SparsityPriors {
            kind: PriorKind::Cardinality { k },
            ..Default::default()
        }
    }

    pub fn regularized(mu0: f64) -> Self {
        SparsityPriors {
            kind: PriorKind::Regularized { mu0 },
            ..Default::default()
        }
    }

    pub fn spikes(k: usize, s: usize, h: usize) -> Self {
        SparsityPriors {
            kind: PriorKind::Spikes { k, s, h },
            ..Default::default()
        }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_mu1(mut self, mu1: f64) -> Self {
        self.mu1 = mu1;
        self
    }

    /// Total linear objective weight on each `z_i`.
    pub fn z_cost(&self) -> f64 {
        self.kappa
            + match self.kind {
                PriorKind::Regularized { mu0 } => mu0,
                _ => 0.0,
            }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::InvalidInput("kappa must be finite and >= 0".into()));
        }
        if !(self.mu1.is_finite() && self.mu1 >= 0.0) {
            return Err(Error::InvalidInput("mu1 must be finite and >= 0".into()));
        }
        match self.kind {
            PriorKind::None => Ok(()),
            PriorKind::Cardinality { k } => {
                if k > n {
                    Err(Error::InvalidInput(format!("cardinality k = {k} > n = {n}")))
                } else {
                    Ok(())
                }
            }
            PriorKind::Regularized { mu0 } => {
                if mu0.is_finite() && mu0 >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput("mu0 must be finite and >= 0".into()))
                }
            }
            PriorKind::Spikes { k, s: _, h } => {
                if k > n {
                    Err(Error::InvalidInput(format!("spike prior k = {k} > n = {n}")))
                } else if h == 0 {
                    Err(Error::InvalidInput("spike prior needs h >= 1".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Whether a binary support vector satisfies the hard prior constraints.
    pub fn feasible_support(&self, z: &[bool]) -> bool {
        match self.kind {
            PriorKind::None | PriorKind::Regularized { .. } => true,
            PriorKind::Cardinality { k } => z.iter().filter(|&&b| b).count() <= k,
            PriorKind::Spikes { k, s, h } => {
                let n = z.len();
                if z.iter().filter(|&&b| b).count() > k {
                    return false;
                }
                let tv: usize = (0..n.saturating_sub(1))
                    .filter(|&i| z[i] != z[i + 1])
                    .count();
                if tv > 2 * s {
                    return false;
                }
                for l in 0..n {
                    if z[l] {
                        let lo = l.saturating_sub(h);
                        let hi = (l + h).min(n - 1);
                        let window = (lo..=hi).filter(|&i| z[i]).count();
                        if window < h {
                            return false;
                        }
                    }
                }
                true
            }
        }
    }
}

/// Sparse symmetric M-matrix `Q = I + lambda * L`: positive diagonal, one
/// negative entry `-lambda` per graph edge.
#[derive(Debug, Clone)]
pub struct MMatrixQuadratic {
    pub diag: Vec<f64>,
    /// `(i, j, q_ij)` with `i < j`; `q_ij = -lambda` for every edge.
    pub off: Vec<(usize, usize, f64)>,
}

impl MMatrixQuadratic {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// `x' Q x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..self.diag.len() {
            v += self.diag[i] * x[i] * x[i];
        }
        for &(i, j, q) in &self.off {
            v += 2.0 * q * x[i] * x[j];
        }
        v
    }
}

/// One denoising problem: observations, graph, weights, priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub y: Vec<f64>,
    pub graph: AdjacencyGraph,
    pub lambda: f64,
    pub priors: SparsityPriors,
    /// Upper bound used in the indicator linking rows `x_i <= big_m * z_i`.
    /// Defaults to `||y||_inf`.
    pub big_m: f64,
}

impl ProblemInstance {
    /// Chain instance with the default bound `big_m = ||y||_inf`.
    pub fn chain(y: Vec<f64>, lambda: f64, priors: SparsityPriors) -> Result<Self> {
        let graph = AdjacencyGraph::chain(y.len());
        ProblemInstance::new(y, graph, lambda, priors)
    }

    pub fn new(
        y: Vec<f64>,
        graph: AdjacencyGraph,
        lambda: f64,
        priors: SparsityPriors,
    ) -> Result<Self> {
        let big_m = inf_norm(&y).max(1e-12);
        let inst = ProblemInstance {
            y,
            graph,
            lambda,
            priors,
            big_m,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_big_m(mut self, big_m: f64) -> Result<Self> {
        if !(big_m.is_finite() && big_m > 0.0) {
            return Err(Error::InvalidInput("big_m must be finite and > 0".into()));
        }
        self.big_m = big_m;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.is_empty() {
            return Err(Error::InvalidInput("empty signal".into()));
        }
        if self.y.len() != self.graph.n() {
            return Err(Error::InvalidInput(format!(
                "signal length {} != graph size {}",
                self.y.len(),
                self.graph.n()
            )));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("signal contains non-finite values".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidInput("lambda must be finite and >= 0".into()));
        }
        self.priors.validate(self.y.len())?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `||y||^2`, the constant term of the objective.
    pub fn constant(&self) -> f64 {
        self.y.iter().map(|v| v * v).sum()
    }

    pub fn mmatrix(&self) -> MMatrixQuadratic {
        let deg = self.graph.degrees();
        MMatrixQuadratic {
            diag: deg.iter().map(|&d| 1.0 + self.lambda * d as f64).collect(),
            off: self
                .graph
                .edges()
                .iter()
                .map(|&(i, j)| (i, j, -self.lambda))
                .collect(),
        }
    }

    /// Fit plus smoothness: `||y - x||^2 + lambda * sum_E (x_i - x_j)^2`.
    pub fn fit_value(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..self.n() {
            let d = self.y[i] - x[i];
            v += d * d;
        }
        for &(i, j) in self.graph.edges() {
            let d = x[i] - x[j];
            v += self.lambda * d * d;
        }
        v
    }

    /// Full objective at a (possibly fractional) point, including the linear
    /// prior costs on `z` and `x`. Hard prior constraints are not checked.
    pub fn objective_value(&self, x: &[f64], z: &[f64]) -> f64 {
        let zc = self.priors.z_cost();
        let zsum: f64 = z.iter().sum();
        let xsum: f64 = x.iter().sum();
        self.fit_value(x) + zc * zsum + self.priors.mu1 * xsum
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

/// Terminal state of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    IterationLimit,
    Infeasible,
    NumericalFailure,
}

/// What a solver hands back: the relaxation point, bound values, and counters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub x_star: Vec<f64>,
    pub z_star: Vec<f64>,
    /// Relaxation objective (lower bound), including the constant `||y||^2`.
    pub objective: f64,
    /// Objective of a rounded feasible point, when one was produced.
    pub rounded_objective: Option<f64>,
    /// `100 * (upper - lower) / upper`, when both bounds exist and the upper
    /// bound is positive.
    pub gap_percent: Option<f64>,
    pub iterations: usize,
    pub cuts_added: usize,
    /// Wall-clock seconds.
    pub wall_time: f64,
    pub status: SolveStatus,
}

/// Everything needed to reproduce an instance, as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    pub lambda: f64,
    pub priors: SparsityPriors,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_true: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl InstanceSpec {
    pub fn to_instance(&self) -> Result<ProblemInstance> {
        if self.n != self.y.len() {
            return Err(Error::InvalidInput(format!(
                "instance says n = {} but y has {} entries",
                self.n,
                self.y.len()
            )));
        }
        ProblemInstance::chain(self.y.clone(), self.lambda, self.priors)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        Ok(std::fs::write(path, text)?)
    }
}

/// Read a CSV of signal values, one per line. Accepts either a bare value
/// per row or `(index, value)` rows as written by [`write_signal_csv`]; the
/// last field of each record is taken as the value.
pub fn read_signal_csv(path: &Path, has_header: bool) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = rec
            .iter()
            .last()
            .ok_or_else(|| Error::Parse("empty CSV record".into()))?;
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad signal value {field:?}")))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Parse("signal CSV has no rows".into()));
    }
    Ok(out)
}

/// Write `(index, value)` rows with a header.
pub fn write_signal_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "value"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_graph_shape() {
        let g = AdjacencyGraph::chain(4);
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(g.degrees(), vec![1, 2, 2, 1]);
        assert!(g.is_chain());
        assert!(AdjacencyGraph::chain(1).edges().is_empty());
    }

    #[test]
    fn graph_rejects_bad_edges() {
        assert!(AdjacencyGraph::new(3, vec![(0, 3)]).is_err());
        assert!(AdjacencyGraph::new(3, vec![(1, 1)]).is_err());
        let g = AdjacencyGraph::new(3, vec![(2, 0), (0, 1), (0, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2)]);
    }

    #[test]
    fn mmatrix_row_sums_have_unit_surplus() {
        // Q = I + lambda L is diagonally dominant with surplus exactly 1 in
        // every row, for any lambda and any graph.
        let inst = ProblemInstance::chain(vec![0.5, 1.0, 0.25, 0.75], 0.7, Default::default())
            .unwrap();
        let q = inst.mmatrix();
        let mut off_row_sums = vec![0.0; 4];
        for &(i, j, v) in &q.off {
            off_row_sums[i] += v.abs();
            off_row_sums[j] += v.abs();
        }
        for i in 0..4 {
            assert!((q.diag[i] - off_row_sums[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quad_form_matches_fit_identity() {
        // ||y - x||^2 + lambda sum (x_i - x_j)^2 = ||y||^2 - 2 y'x + x'Qx.
        let inst =
            ProblemInstance::chain(vec![0.4, 1.0, 0.1], 0.5, SparsityPriors::default()).unwrap();
        let q = inst.mmatrix();
        let x = [0.3, 0.9, 0.2];
        let lhs = inst.fit_value(&x);
        let ydotx: f64 = inst.y.iter().zip(&x).map(|(a, b)| a * b).sum();
        let rhs = inst.constant() - 2.0 * ydotx + q.quad_form(&x);
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn default_big_m_is_signal_peak() {
        let inst = ProblemInstance::chain(vec![0.4, 1.0], 0.5, SparsityPriors::default()).unwrap();
        assert_eq!(inst.big_m, 1.0);
    }

    #[test]
    fn spike_support_feasibility() {
        let p = SparsityPriors::spikes(6, 2, 3);
        // Two spikes of length 3.
        let z: Vec<bool> = [0, 1, 1, 1, 0, 0, 1, 1, 1, 0]
            .iter()
            .map(|&v| v == 1)
            .collect();
        assert!(p.feasible_support(&z));
        // An isolated active index violates the run-length requirement.
        let z2: Vec<bool> = [0, 0, 1, 0, 0, 0, 0, 0, 0, 0]
            .iter()
            .map(|&v| v == 1)
            .collect();
        assert!(!p.feasible_support(&z2));
        // Three runs violate the total-variation budget.
        let z3: Vec<bool> = [1, 1, 1, 0, 1, 1, 1, 0, 1, 1]
            .iter()
            .map(|&v| v == 1)
            .collect();
        assert!(!p.feasible_support(&z3));
    }

    #[test]
    fn priors_json_round_trip() {
        let p = SparsityPriors::spikes(10, 2, 5).with_kappa(0.01);
        let s = serde_json::to_string(&p).unwrap();
        let back: SparsityPriors = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        let none: SparsityPriors = serde_json::from_str(r#"{"kind":"none"}"#).unwrap();
        assert_eq!(none, SparsityPriors::default());
    }

    #[test]
    fn signal_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sig.csv");
        let vals = vec![0.0, 0.5, 1.25];
        write_signal_csv(&path, &vals).unwrap();
        let back = read_signal_csv(&path, true).unwrap();
        assert_eq!(back, vals);
        let plain = dir.path().join("plain.csv");
        std::fs::write(&plain, "0.0\n0.5\n1.25\n").unwrap();
        assert_eq!(read_signal_csv(&plain, false).unwrap(), vals);
    }
}
