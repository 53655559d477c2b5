//! Exact optimal transport between two uniformly weighted point clouds.
//!
//! The balanced transportation problem is solved by the primal network
//! simplex method on the bipartite graph `sources -> sinks`, with integer
//! supplies `m` per source and demands `n` per sink so that the optimal
//! coupling is `flow / (n m)`. The tree data structures (thread, reverse
//! thread, successor counts, last successors) and the leaving-arc rule that
//! keeps the spanning tree strongly feasible follow the LEMON implementation
//! of Kovacs (2015); entering arcs are chosen by block search pricing.

use super::MetricError;

const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;
const NONE: usize = usize::MAX;

/// Optimal coupling, stored sparsely (a basic solution has at most `n + m - 1` nonzeros).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub n: usize,
    pub m: usize,
    /// `(i, j, mass)` with mass in `(0, 1]`.
    pub entries: Vec<(usize, usize, f64)>,
    /// `sum T_ij c_ij`.
    pub cost: f64,
    /// Dual objective of the final potentials; equals `cost` at optimality.
    pub dual_bound: f64,
    /// Most negative reduced cost over all arcs (should be ~0 or positive).
    pub min_reduced_cost: f64,
    pub pivots: usize,
}

impl TransportPlan {
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut t = vec![vec![0.0; self.m]; self.n];
        for &(i, j, v) in &self.entries {
            t[i][j] += v;
        }
        t
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        for &(i, _, v) in &self.entries {
            r[i] += v;
        }
        r
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.m];
        for &(_, j, v) in &self.entries {
            c[j] += v;
        }
        c
    }
}

struct Simplex<'a> {
    n: usize,
    m: usize,
    arc_num: usize,
    root: usize,
    cost: &'a [f64],
    art_cost: f64,
    supply: Vec<i64>,
    flow: Vec<i64>,
    state: Vec<i8>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pred_dir: Vec<i8>,
    dirty_revs: Vec<usize>,
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: i64,
    next_arc: usize,
    block_size: usize,
    eps: f64,
}

impl<'a> Simplex<'a> {
    fn new(n: usize, m: usize, cost: &'a [f64]) -> Self {
        let node_num = n + m;
        let arc_num = n * m;
        let root = node_num;
        let max_cost = cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
        let art_cost = (max_cost + 1.0) * node_num as f64;
        let mut s = Simplex {
            n,
            m,
            arc_num,
            root,
            cost,
            art_cost,
            supply: vec![0; node_num + 1],
            flow: vec![0; arc_num + node_num],
            state: vec![STATE_LOWER; arc_num + node_num],
            pi: vec![0.0; node_num + 1],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![0; node_num + 1],
            last_succ: vec![0; node_num + 1],
            pred_dir: vec![DIR_UP; node_num + 1],
            dirty_revs: Vec::new(),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0,
            next_arc: 0,
            block_size: ((arc_num as f64).sqrt().ceil() as usize).max(10),
            eps: 64.0 * f64::EPSILON * art_cost,
        };
        for i in 0..n {
            s.supply[i] = m as i64;
        }
        for j in 0..m {
            s.supply[n + j] = -(n as i64);
        }
        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = node_num + 1;
        s.last_succ[root] = root - 1;
        for u in 0..node_num {
            let e = arc_num + u;
            s.parent[u] = root;
            s.pred[u] = e;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.succ_num[u] = 1;
            s.last_succ[u] = u;
            s.state[e] = STATE_TREE;
            if s.supply[u] >= 0 {
                s.pred_dir[u] = DIR_UP;
                s.pi[u] = 0.0;
                s.flow[e] = s.supply[u];
            } else {
                s.pred_dir[u] = DIR_DOWN;
                s.pi[u] = art_cost;
                s.flow[e] = -s.supply[u];
            }
        }
        s
    }

    #[inline]
    fn source(&self, e: usize) -> usize {
        if e < self.arc_num {
            e / self.m
        } else {
            let u = e - self.arc_num;
            if self.supply[u] >= 0 {
                u
            } else {
                self.root
            }
        }
    }

    #[inline]
    fn target(&self, e: usize) -> usize {
        if e < self.arc_num {
            self.n + e % self.m
        } else {
            let u = e - self.arc_num;
            if self.supply[u] >= 0 {
                self.root
            } else {
                u
            }
        }
    }

    #[inline]
    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.arc_num {
            self.cost[e]
        } else if self.supply[e - self.arc_num] >= 0 {
            0.0
        } else {
            self.art_cost
        }
    }

    #[inline]
    fn reduced(&self, e: usize) -> f64 {
        // Real arcs only: source i, target n + j.
        let (i, j) = (e / self.m, e % self.m);
        self.cost[e] + self.pi[i] - self.pi[self.n + j]
    }

    fn find_entering_arc(&mut self) -> bool {
        let mut min = -self.eps;
        let mut found = false;
        let mut cnt = self.block_size;
        let scan = (self.next_arc..self.arc_num).chain(0..self.next_arc);
        for e in scan {
            let c = f64::from(self.state[e]) * self.reduced(e);
            if c < min {
                min = c;
                self.in_arc = e;
                found = true;
            }
            cnt -= 1;
            if cnt == 0 {
                if found {
                    break;
                }
                cnt = self.block_size;
            }
        }
        if found {
            self.next_arc = self.in_arc;
        }
        found
    }

    fn find_join_node(&mut self) {
        let mut u = self.source(self.in_arc);
        let mut v = self.target(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) -> bool {
        let (first, second) = if self.state[self.in_arc] == STATE_LOWER {
            (self.source(self.in_arc), self.target(self.in_arc))
        } else {
            (self.target(self.in_arc), self.source(self.in_arc))
        };
        self.delta = i64::MAX;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        u = second;
        while u != self.join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self) {
        if self.delta > 0 {
            let val = i64::from(self.state[self.in_arc]) * self.delta;
            self.flow[self.in_arc] += val;
            let mut u = self.source(self.in_arc);
            while u != self.join {
                self.flow[self.pred[u]] -= i64::from(self.pred_dir[u]) * val;
                u = self.parent[u];
            }
            u = self.target(self.in_arc);
            while u != self.join {
                self.flow[self.pred[u]] += i64::from(self.pred_dir[u]) * val;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out = self.pred[self.u_out];
        debug_assert_eq!(self.flow[out], 0);
        self.state[out] = STATE_LOWER;
    }

    fn update_tree_structure(&mut self) {
        let (u_in, v_in, u_out, join) = (self.u_in, self.v_in, self.u_out, self.join);
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source(self.in_arc) { DIR_UP } else { DIR_DOWN };
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in { self.thread[old_last_succ] } else { self.thread[v_in] };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);
                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;
                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;
                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;
            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }
            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }
            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source(self.in_arc) { DIR_UP } else { DIR_DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }
        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }
        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let sigma = self.pi[self.v_in] - self.pi[self.u_in] - f64::from(self.pred_dir[self.u_in]) * self.arc_cost(self.in_arc);
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(&mut self) -> Result<usize, MetricError> {
        let mut pivots = 0;
        while self.find_entering_arc() {
            self.find_join_node();
            if !self.find_leaving_arc() || self.delta == i64::MAX {
                return Err(MetricError::Solver("unbounded transport problem".into()));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            pivots += 1;
        }
        if (self.arc_num..self.arc_num + self.n + self.m).any(|e| self.flow[e] != 0) {
            return Err(MetricError::Solver("artificial arcs carry flow at termination".into()));
        }
        Ok(pivots)
    }
}

/// Solve the balanced problem with uniform marginals `1/n`, `1/m` and the
/// given `n x m` row-major cost matrix.
pub fn solve_transport(n: usize, m: usize, cost: &[f64]) -> Result<TransportPlan, MetricError> {
    if n == 0 || m == 0 {
        return Err(MetricError::Empty);
    }
    assert_eq!(cost.len(), n * m, "cost matrix size");
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(MetricError::Solver("non-finite cost".into()));
    }
    let mut s = Simplex::new(n, m, cost);
    let pivots = s.run()?;
    let total = (n * m) as f64;
    let mut entries = Vec::new();
    let mut primal = 0.0;
    for e in 0..s.arc_num {
        if s.flow[e] > 0 {
            let (i, j) = (e / m, e % m);
            let mass = s.flow[e] as f64 / total;
            primal += mass * cost[e];
            entries.push((i, j, mass));
        }
    }
    // Dual of: min sum c f  s.t. out(i) = 1/n, in(j) = 1/m, f >= 0,
    // with reduced costs c_ij + pi_i - pi_j >= 0.
    let dual = (0..m).map(|j| s.pi[n + j]).sum::<f64>() / m as f64 - (0..n).map(|i| s.pi[i]).sum::<f64>() / n as f64;
    let min_reduced = (0..s.arc_num).map(|e| s.reduced(e)).fold(f64::INFINITY, f64::min);
    Ok(TransportPlan { n, m, entries, cost: primal, dual_bound: dual, min_reduced_cost: min_reduced, pivots })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_dims(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty);
    }
    let d = a[0].len();
    if let Some(bad) = a.iter().chain(b).find(|p| p.len() != d) {
        return Err(MetricError::Shape { expected: d, found: bad.len() });
    }
    Ok(d)
}

/// `W = sqrt(min_T sum T_ij ||a_i - b_j||)` with uniform marginals, and the optimal plan.
pub fn wasserstein2(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(f64, TransportPlan), MetricError> {
    check_dims(a, b)?;
    let (n, m) = (a.len(), b.len());
    let mut cost = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            cost[i * m + j] = euclidean(&a[i], &b[j]);
        }
    }
    let plan = solve_transport(n, m, &cost)?;
    Ok((plan.cost.max(0.0).sqrt(), plan))
}

/// Label-conditional distance: `sum_l freq_B(l) * W(A_l, B_l)`.
pub fn conditional_wasserstein2(
    a: &[Vec<f64>],
    a_labels: &[usize],
    b: &[Vec<f64>],
    b_labels: &[usize],
    num_classes: usize,
) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let group = |pts: &[Vec<f64>], labels: &[usize]| {
        let mut g: Vec<Vec<Vec<f64>>> = vec![Vec::new(); num_classes];
        for (p, &l) in pts.iter().zip(labels) {
            g[l].push(p.clone());
        }
        g
    };
    let ga = group(a, a_labels);
    let gb = group(b, b_labels);
    let classes: Vec<usize> = (0..num_classes).filter(|&l| !gb[l].is_empty()).collect();
    if let Some(&l) = classes.iter().find(|&&l| ga[l].is_empty()) {
        return Err(MetricError::MissingClass(l));
    }
    let per: Result<Vec<f64>, MetricError> = {
        use rayon::prelude::*;
        classes.par_iter().map(|&l| wasserstein2(&ga[l], &gb[l]).map(|(w, _)| w)).collect()
    };
    let per = per?;
    let nb = b.len() as f64;
    Ok(classes.iter().zip(per).map(|(&l, w)| gb[l].len() as f64 / nb * w).sum())
}
