//! Sparse kernels behind the interior point solver: CSR storage, a
//! bandwidth-reducing ordering, and a sparse `L D L'` factorization with a
//! reusable symbolic phase.
//!
//! The solver refactors its KKT matrix once per iteration with a fixed
//! sparsity pattern, so everything expensive (ordering, elimination tree,
//! fill pattern, value slots) is computed once up front and only the numeric
//! refill and factorization repeat. The system is kept in the quasidefinite
//! augmented form `[[-H^-1, A'], [A, 0]]` rather than as normal equations
//! `A H A'`: the scaling enters unsquared, so the factorization stays
//! usable deep into the endgame where the normal equations lose all
//! accuracy.

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub m: usize,
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    pub fn from_row_lists(rows: &[Vec<(usize, f64)>], n: usize) -> Csr {
        let m = rows.len();
        let mut indptr = Vec::with_capacity(m + 1);
        indptr.push(0);
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut data = Vec::with_capacity(nnz);
        for row in rows {
            for &(j, v) in row {
                debug_assert!(j < n);
                indices.push(j);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        Csr {
            m,
            n,
            indptr,
            indices,
            data,
        }
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[lo..hi], &self.data[lo..hi])
    }

    /// `out = A x`.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.m {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (j, v) in cols.iter().zip(vals) {
                acc += v * x[*j];
            }
            out[i] = acc;
        }
    }

    /// `out = A' y`.
    pub fn matvec_t(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.m {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (j, v) in cols.iter().zip(vals) {
                out[*j] += v * yi;
            }
        }
    }
}

/// Reverse Cuthill-McKee ordering with high-degree vertices pinned to the
/// end. Returns `perm` with `perm[new] = old`. The graphs here come from
/// near-banded constraint matrices plus a handful of global coupling rows
/// (budget-style prior constraints); letting a coupling vertex into the
/// band ruins it, so anything with degree far above average is pinned.
pub fn rcm_dense_last(adj: &[Vec<usize>]) -> Vec<usize> {
    let m = adj.len();
    let deg: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let avg = deg.iter().sum::<usize>() as f64 / m.max(1) as f64;
    let cutoff = (4.0 * avg).max(32.0) as usize;
    let dense: Vec<bool> = deg.iter().map(|&d| d > cutoff).collect();

    let mut visited = vec![false; m];
    let mut order: Vec<usize> = Vec::with_capacity(m);
    let mut queue: std::collections::VecDeque<usize> = Default::default();
    let mut nbrs: Vec<usize> = Vec::new();

    loop {
        // Seed the next component at an unvisited sparse vertex of minimum
        // degree.
        let mut seed = None;
        for v in 0..m {
            if !visited[v] && !dense[v] {
                seed = match seed {
                    Some(s) if deg[s] <= deg[v] => Some(s),
                    _ => Some(v),
                };
            }
        }
        let Some(seed) = seed else { break };
        visited[seed] = true;
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(adj[v].iter().copied().filter(|&u| !visited[u] && !dense[u]));
            nbrs.sort_unstable_by_key(|&u| deg[u]);
            for &u in &nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    for v in 0..m {
        if dense[v] {
            order.push(v);
        }
    }
    debug_assert_eq!(order.len(), m);
    order
}

/// Symbolic Cholesky data for a fixed pattern: elimination tree, per-row
/// reach sets, and the static structure of `L`.
#[derive(Debug)]
pub struct SymbolicChol {
    m: usize,
    /// Column pointers of strictly-lower `L` (diagonal kept separately).
    lp: Vec<usize>,
    /// Row indices of `L`, per column, ascending.
    li: Vec<usize>,
    /// Flat reach sets: for row `k`, `si[sp[k]..sp[k+1]]` lists the columns
    /// of row `k` of `L` in ascending (topological) order.
    sp: Vec<usize>,
    si: Vec<usize>,
}

impl SymbolicChol {
    /// `kp, ki`: pattern of `K` in upper-triangular CSC form (per column
    /// `c`, rows `<= c`, sorted, diagonal present).
    pub fn new(m: usize, kp: &[usize], ki: &[usize]) -> SymbolicChol {
        // Elimination tree.
        let none = usize::MAX;
        let mut parent = vec![none; m];
        let mut ancestor = vec![none; m];
        for k in 0..m {
            for t in kp[k]..kp[k + 1] {
                let mut i = ki[t];
                while i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == none {
                        parent[i] = k;
                        break;
                    }
                    i = next;
                }
            }
        }

        // Reach sets per row via elimination-tree walks; ascending index
        // order is a valid topological order because parents have larger
        // indices.
        let mut stamp = vec![usize::MAX; m];
        let mut sp = Vec::with_capacity(m + 1);
        let mut si = Vec::new();
        let mut colcount = vec![0usize; m];
        let mut scratch: Vec<usize> = Vec::new();
        sp.push(0);
        for k in 0..m {
            stamp[k] = k;
            scratch.clear();
            for t in kp[k]..kp[k + 1] {
                let mut i = ki[t];
                while i != none && i < k && stamp[i] != k {
                    stamp[i] = k;
                    scratch.push(i);
                    i = parent[i];
                }
            }
            scratch.sort_unstable();
            for &i in &scratch {
                colcount[i] += 1;
            }
            si.extend_from_slice(&scratch);
            sp.push(si.len());
        }

        // Static structure of L: column c holds every k with c in reach(k),
        // ascending in k by construction of the sweep below.
        let mut lp = Vec::with_capacity(m + 1);
        lp.push(0);
        for c in 0..m {
            lp.push(lp[c] + colcount[c]);
        }
        let mut li = vec![0usize; lp[m]];
        let mut fill = vec![0usize; m];
        for k in 0..m {
            for t in sp[k]..sp[k + 1] {
                let c = si[t];
                li[lp[c] + fill[c]] = k;
                fill[c] += 1;
            }
        }

        SymbolicChol { m, lp, li, sp, si }
    }

    pub fn nnz_l(&self) -> usize {
        self.li.len() + self.m
    }
}

/// Numeric `L D L'` factor for a symmetric quasidefinite matrix, reused
/// across factorizations of the same pattern. `L` has unit diagonal,
/// `D` is diagonal with signs fixed a priori (negative on the scaling block,
/// positive on the constraint block), which makes the factorization valid
/// under any symmetric permutation.
#[derive(Debug)]
pub struct LdlFactor {
    lvals: Vec<f64>,
    diag: Vec<f64>,
    fill: Vec<usize>,
    work: Vec<f64>,
}

impl LdlFactor {
    pub fn new(sym: &SymbolicChol) -> LdlFactor {
        LdlFactor {
            lvals: vec![0.0; sym.li.len()],
            diag: vec![0.0; sym.m],
            fill: vec![0usize; sym.m],
            work: vec![0.0; sym.m],
        }
    }

    /// Up-looking factorization with static regularization `signs[k] *
    /// delta` added to each pivot and a dynamic clamp keeping every pivot
    /// on its expected side. Returns false when any pivot needed clamping.
    pub fn factor(
        &mut self,
        sym: &SymbolicChol,
        kp: &[usize],
        ki: &[usize],
        kv: &[f64],
        signs: &[f64],
        delta: f64,
    ) -> bool {
        let m = sym.m;
        self.fill.fill(0);
        let w = &mut self.work;
        let mut clean = true;
        for k in 0..m {
            for t in sym.sp[k]..sym.sp[k + 1] {
                w[sym.si[t]] = 0.0;
            }
            w[k] = signs[k] * delta;
            for t in kp[k]..kp[k + 1] {
                w[ki[t]] += kv[t];
            }
            let mut d = w[k];
            for t in sym.sp[k]..sym.sp[k + 1] {
                let i = sym.si[t];
                let yi = w[i];
                let lki = yi / self.diag[i];
                let (lo, hi) = (sym.lp[i], sym.lp[i] + self.fill[i]);
                for u in lo..hi {
                    w[sym.li[u]] -= self.lvals[u] * yi;
                }
                debug_assert_eq!(sym.li[hi], k);
                self.lvals[hi] = lki;
                self.fill[i] += 1;
                d -= lki * yi;
            }
            if signs[k] * d < 1e-13 {
                d = signs[k] * 1e-13;
                clean = false;
            }
            self.diag[k] = d;
        }
        clean
    }

    /// Solve `L D L' x = b` in place.
    pub fn solve_in_place(&self, sym: &SymbolicChol, x: &mut [f64]) {
        let m = sym.m;
        for j in 0..m {
            let xj = x[j];
            if xj != 0.0 {
                for t in sym.lp[j]..sym.lp[j + 1] {
                    x[sym.li[t]] -= self.lvals[t] * xj;
                }
            }
        }
        for j in 0..m {
            x[j] /= self.diag[j];
        }
        for j in (0..m).rev() {
            let mut v = x[j];
            for t in sym.lp[j]..sym.lp[j + 1] {
                v -= self.lvals[t] * x[sym.li[t]];
            }
            x[j] = v;
        }
    }
}

/// Which scaling block a group of variables belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HBlockKind {
    /// Diagonal scaling, one value per variable.
    Scalar,
    /// Dense symmetric block over `len` consecutive variables.
    Dense,
}

#[derive(Debug, Clone, Copy)]
pub struct HBlock {
    pub kind: HBlockKind,
    pub start: usize,
    pub len: usize,
}

/// `out = K x` for a symmetric matrix stored as its upper triangle in CSC.
fn matvec_sym_upper(kp: &[usize], ki: &[usize], kv: &[f64], x: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for c in 0..kp.len() - 1 {
        let xc = x[c];
        for t in kp[c]..kp[c + 1] {
            let r = ki[t];
            let v = kv[t];
            out[r] += v * xc;
            if r != c {
                out[c] += v * x[r];
            }
        }
    }
}

/// The quasidefinite KKT system
///
/// ```text
///     [ -H^{-1}  A' ] [u]   [ rx ]
///     [  A       0  ] [v] = [ ry ]
/// ```
///
/// over `n` variables and `m` rows, jointly permuted and factored as
/// `L D L'`. Only the scaling block changes between iterations; the `A`
/// values and the whole symbolic phase are fixed at build time.
#[derive(Debug)]
pub struct AugmentedSystem {
    n: usize,
    m: usize,
    /// `perm[new] = old`, old indices `0..n` variables then `n..n+m` rows.
    perm: Vec<usize>,
    kp: Vec<usize>,
    ki: Vec<usize>,
    kv: Vec<f64>,
    signs: Vec<f64>,
    /// `(variable, value slot)` for each scalar-scaled variable.
    scalar_slots: Vec<(usize, usize)>,
    /// `(block, start, len, slots)` per dense block; slots cover local
    /// pairs `p <= q` in row-major upper order.
    dense_slots: Vec<(usize, usize, usize, Vec<usize>)>,
    sym: SymbolicChol,
    factor: LdlFactor,
    tmp: Vec<f64>,
    rhs: Vec<f64>,
    resid: Vec<f64>,
}

impl AugmentedSystem {
    pub fn build(a: &Csr, blocks: &[HBlock]) -> AugmentedSystem {
        let (n, m) = (a.n, a.m);
        let nn = n + m;
        let mut var_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..m {
            let (cols, _) = a.row(i);
            for &j in cols {
                var_rows[j].push(i);
            }
        }

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nn];
        for j in 0..n {
            for &i in &var_rows[j] {
                adj[j].push(n + i);
                adj[n + i].push(j);
            }
        }
        for blk in blocks {
            if blk.kind == HBlockKind::Dense {
                for p in blk.start..blk.start + blk.len {
                    for q in p + 1..blk.start + blk.len {
                        adj[p].push(q);
                        adj[q].push(p);
                    }
                }
            }
        }
        for l in adj.iter_mut() {
            l.sort_unstable();
            l.dedup();
        }
        let perm = rcm_dense_last(&adj);
        let mut iperm = vec![0usize; nn];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        drop(adj);

        let pack = |a: usize, b: usize| -> u64 {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            ((hi as u64) << 32) | lo as u64
        };
        let mut entries: Vec<u64> = Vec::new();
        for t in 0..nn {
            entries.push(pack(t, t));
        }
        for i in 0..m {
            let (cols, _) = a.row(i);
            for &j in cols {
                entries.push(pack(iperm[j], iperm[n + i]));
            }
        }
        for blk in blocks {
            if blk.kind == HBlockKind::Dense {
                for p in blk.start..blk.start + blk.len {
                    for q in p + 1..blk.start + blk.len {
                        entries.push(pack(iperm[p], iperm[q]));
                    }
                }
            }
        }
        entries.sort_unstable();
        entries.dedup();

        let mut kp = vec![0usize; nn + 1];
        let mut ki = vec![0usize; entries.len()];
        for (t, &e) in entries.iter().enumerate() {
            let col = (e >> 32) as usize;
            kp[col + 1] += 1;
            ki[t] = (e & 0xffff_ffff) as usize;
        }
        for c in 0..nn {
            kp[c + 1] += kp[c];
        }

        let lookup = |oa: usize, ob: usize| -> usize {
            let (pa, pb) = (iperm[oa], iperm[ob]);
            let (lo, hi) = if pa <= pb { (pa, pb) } else { (pb, pa) };
            let seg = &ki[kp[hi]..kp[hi + 1]];
            let off = seg.binary_search(&lo).expect("pattern entry missing");
            kp[hi] + off
        };

        let mut kv = vec![0.0; ki.len()];
        for i in 0..m {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                kv[lookup(j, n + i)] = v;
            }
        }

        let mut scalar_slots = Vec::new();
        let mut dense_slots = Vec::new();
        for (bi, blk) in blocks.iter().enumerate() {
            match blk.kind {
                HBlockKind::Scalar => {
                    for j in blk.start..blk.start + blk.len {
                        scalar_slots.push((j, lookup(j, j)));
                    }
                }
                HBlockKind::Dense => {
                    let mut slots = Vec::with_capacity(blk.len * (blk.len + 1) / 2);
                    for p in 0..blk.len {
                        for q in p..blk.len {
                            slots.push(lookup(blk.start + p, blk.start + q));
                        }
                    }
                    dense_slots.push((bi, blk.start, blk.len, slots));
                }
            }
        }

        let signs: Vec<f64> = (0..nn)
            .map(|new| if perm[new] < n { -1.0 } else { 1.0 })
            .collect();

        let sym = SymbolicChol::new(nn, &kp, &ki);
        let factor = LdlFactor::new(&sym);
        AugmentedSystem {
            n,
            m,
            perm,
            kp,
            ki,
            kv,
            signs,
            scalar_slots,
            dense_slots,
            sym,
            factor,
            tmp: vec![0.0; nn],
            rhs: vec![0.0; nn],
            resid: vec![0.0; nn],
        }
    }

    pub fn nnz_factor(&self) -> usize {
        self.sym.nnz_l()
    }

    /// Refill the scaling block with `-H^{-1}`: `inv_scalars[j]` per
    /// scalar-scaled variable, `inv_dense[bi]` (row-major `len x len`)
    /// per dense block, indexed by original block position.
    pub fn refill(&mut self, inv_scalars: &[f64], inv_dense: &[Vec<f64>]) {
        for &(j, slot) in &self.scalar_slots {
            self.kv[slot] = -inv_scalars[j];
        }
        for (bi, _, len, slots) in &self.dense_slots {
            let hb = &inv_dense[*bi];
            let mut t = 0;
            for p in 0..*len {
                for q in p..*len {
                    self.kv[slots[t]] = -hb[p * len + q];
                    t += 1;
                }
            }
        }
    }

    pub fn factorize(&mut self, delta: f64) -> bool {
        self.factor
            .factor(&self.sym, &self.kp, &self.ki, &self.kv, &self.signs, delta)
    }

    /// Solve for `(u, v)` given the two right-hand-side parts, with
    /// iterative refinement against the unregularized matrix (which also
    /// removes the static regularization bias).
    pub fn solve(&mut self, rx: &[f64], ry: &[f64], u: &mut [f64], v: &mut [f64]) {
        let nn = self.n + self.m;
        for new in 0..nn {
            let old = self.perm[new];
            self.rhs[new] = if old < self.n {
                rx[old]
            } else {
                ry[old - self.n]
            };
        }
        self.tmp.copy_from_slice(&self.rhs);
        self.factor.solve_in_place(&self.sym, &mut self.tmp);
        let mut prev = f64::INFINITY;
        for _ in 0..2 {
            matvec_sym_upper(&self.kp, &self.ki, &self.kv, &self.tmp, &mut self.resid);
            let mut worst = 0.0f64;
            let mut scale = 1.0f64;
            for t in 0..nn {
                self.resid[t] = self.rhs[t] - self.resid[t];
                worst = worst.max(self.resid[t].abs());
                scale = scale.max(self.rhs[t].abs());
            }
            if worst <= 1e-13 * scale || worst >= prev {
                break;
            }
            prev = worst;
            self.factor.solve_in_place(&self.sym, &mut self.resid);
            for t in 0..nn {
                self.tmp[t] += self.resid[t];
            }
        }
        for new in 0..nn {
            let old = self.perm[new];
            if old < self.n {
                u[old] = self.tmp[new];
            } else {
                v[old - self.n] = self.tmp[new];
            }
        }
    }
}
