//! Per-step communication graphs: the AUV anchored to the surface vehicle
//! and the longest Hamiltonian path linking the AUVs.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Vector2, Vector3};
use thiserror::Error;

/// Largest AUV count solved exactly by the subset dynamic program.
pub const DEFAULT_EXACT_THRESHOLD: usize = 15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("graph line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// AUV anchored to the surface vehicle at one step (0-based index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct A2uChoice {
    pub selected: usize,
    pub n: usize,
}

impl A2uChoice {
    /// One-hot indicator over the AUVs.
    pub fn sigma(&self) -> Vec<u8> {
        (0..self.n).map(|i| u8::from(i == self.selected)).collect()
    }
}

/// AUV-to-AUV edges at one step, each `(i, j)` with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct A2aTree {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl A2aTree {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        let e = (i.min(j), i.max(j));
        self.edges.binary_search(&e).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    /// Exactly `n - 1` edges, degrees in `{1, 2}` and one component.
    pub fn is_hamiltonian_path(&self) -> bool {
        if self.n == 1 {
            return self.edges.is_empty();
        }
        self.edges.len() == self.n - 1
            && self.degrees().iter().all(|&d| d == 1 || d == 2)
            && !detect_clustering(&self.edges, self.n).clustered
    }
}

/// Graphs for steps `k = 1..=K`; entry `k - 1` holds step `k`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GraphPlan {
    pub a2u: Vec<A2uChoice>,
    pub a2a: Vec<A2aTree>,
}

impl GraphPlan {
    pub fn steps(&self) -> usize {
        self.a2u.len()
    }

    /// One line per step: `k; a2u=n; a2a=(i,j),(i,j)` with 1-based AUV ids.
    pub fn export_lines(&self) -> Vec<String> {
        self.a2u
            .iter()
            .zip(&self.a2a)
            .enumerate()
            .map(|(k, (u, t))| {
                let mut s = format!("{}; a2u={}; a2a=", k + 1, u.selected + 1);
                let edges: Vec<String> = t.edges.iter().map(|(i, j)| format!("({},{})", i + 1, j + 1)).collect();
                write!(s, "{}", edges.join(",")).unwrap();
                s
            })
            .collect()
    }

    /// Parses lines written by [`GraphPlan::export_lines`]; other lines are skipped.
    pub fn parse_lines(text: &str, n: usize) -> Result<Self, GraphError> {
        let mut plan = GraphPlan::default();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |reason: String| GraphError::Parse { line: line_no, reason };
            let parts: Vec<&str> = line.split(';').map(str::trim).collect();
            if parts.len() != 3 || !parts[1].starts_with("a2u=") || !parts[2].starts_with("a2a=") {
                continue;
            }
            let k: usize = parts[0].parse().map_err(|e| err(format!("bad step: {e}")))?;
            if k != plan.steps() + 1 {
                return Err(err(format!("expected step {}, found {k}", plan.steps() + 1)));
            }
            let sel: usize = parts[1][4..].parse().map_err(|e| err(format!("bad a2u id: {e}")))?;
            if sel == 0 || sel > n {
                return Err(err(format!("a2u id {sel} outside 1..={n}")));
            }
            let mut edges = Vec::new();
            let body = &parts[2][4..];
            for chunk in body.split("),").filter(|c| !c.trim().is_empty()) {
                let c = chunk.trim().trim_start_matches('(').trim_end_matches(')');
                let (a, b) = c.split_once(',').ok_or_else(|| err(format!("bad edge `{chunk}`")))?;
                let a: usize = a.trim().parse().map_err(|e| err(format!("bad edge id: {e}")))?;
                let b: usize = b.trim().parse().map_err(|e| err(format!("bad edge id: {e}")))?;
                if a == 0 || b == 0 || a > n || b > n || a == b {
                    return Err(err(format!("edge ({a},{b}) invalid for {n} AUVs")));
                }
                edges.push(((a - 1).min(b - 1), (a - 1).max(b - 1)));
            }
            edges.sort_unstable();
            plan.a2u.push(A2uChoice { selected: sel - 1, n });
            plan.a2a.push(A2aTree { n, edges });
        }
        Ok(plan)
    }
}

/// Picks the AUV nearest the surface vehicle (at `z = 0`); ties go to the lowest index.
pub fn solve_a2u(auvs: &[Vector3<f64>], usv: &Vector2<f64>) -> A2uChoice {
    let surface = Vector3::new(usv.x, usv.y, 0.0);
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in auvs.iter().enumerate() {
        let d = (p - surface).norm();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    A2uChoice {
        selected: best,
        n: auvs.len(),
    }
}

pub fn distance_matrix(points: &[Vector3<f64>]) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| (points[i] - points[j]).norm())
}

fn edge_index(i: usize, j: usize, n: usize) -> usize {
    let (i, j) = (i.min(j), i.max(j));
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Tie-break bonus: lexicographically smaller edges carry higher bits, so the
/// larger bonus belongs to the lexicographically smaller edge set.
fn edge_bit(i: usize, j: usize, n: usize) -> u128 {
    let m = n * (n - 1) / 2;
    1u128 << (m - 1 - edge_index(i, j, n))
}

fn path_edges(order: &[usize]) -> Vec<(usize, usize)> {
    let mut e: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1]))).collect();
    e.sort_unstable();
    e
}

/// Longest Hamiltonian path under squared edge lengths.
///
/// Exact for `n <= exact_threshold`; otherwise a greedy chain improved by 2-opt.
pub fn solve_a2a(dist: &DMatrix<f64>, exact_threshold: usize) -> A2aTree {
    let n = dist.nrows();
    if n <= 1 {
        return A2aTree { n, edges: Vec::new() };
    }
    let w = dist.map(|d| d * d);
    let edges = if n <= exact_threshold.min(15) {
        path_edges(&held_karp_longest(&w))
    } else {
        path_edges(&two_opt_longest(&w))
    };
    A2aTree { n, edges }
}

fn better(a: (f64, u128), b: (f64, u128)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)
}

fn held_karp_longest(w: &DMatrix<f64>) -> Vec<usize> {
    let n = w.nrows();
    let full = 1usize << n;
    let none = (f64::NEG_INFINITY, 0u128);
    let mut best = vec![none; full * n];
    let mut parent = vec![usize::MAX; full * n];
    for v in 0..n {
        best[(1 << v) * n + v] = (0.0, 0);
    }
    for mask in 1..full {
        for end in 0..n {
            let cur = best[mask * n + end];
            if mask & (1 << end) == 0 || cur.0 == f64::NEG_INFINITY {
                continue;
            }
            for next in 0..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let m2 = mask | (1 << next);
                let cand = (cur.0 + w[(end, next)], cur.1 | edge_bit(end, next, n));
                if better(cand, best[m2 * n + next]) {
                    best[m2 * n + next] = cand;
                    parent[m2 * n + next] = end;
                }
            }
        }
    }
    let last = full - 1;
    let mut end = 0;
    for v in 1..n {
        if better(best[last * n + v], best[last * n + end]) {
            end = v;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut mask = last;
    let mut v = end;
    loop {
        order.push(v);
        let p = parent[mask * n + v];
        if p == usize::MAX {
            break;
        }
        mask &= !(1 << v);
        v = p;
    }
    order
}

fn path_value(w: &DMatrix<f64>, order: &[usize]) -> f64 {
    order.windows(2).map(|p| w[(p[0], p[1])]).sum()
}

fn two_opt_longest(w: &DMatrix<f64>) -> Vec<usize> {
    let n = w.nrows();
    // Greedy chain from the endpoints of the longest edge.
    let (mut a, mut b) = (0, 1);
    for i in 0..n {
        for j in i + 1..n {
            if w[(i, j)] > w[(a, b)] {
                (a, b) = (i, j);
            }
        }
    }
    let mut used = vec![false; n];
    used[a] = true;
    used[b] = true;
    let mut order = vec![a, b];
    while order.len() < n {
        let tail = *order.last().unwrap();
        let next = (0..n)
            .filter(|&v| !used[v])
            .fold(None, |acc: Option<usize>, v| match acc {
                Some(u) if w[(tail, u)] >= w[(tail, v)] => Some(u),
                _ => Some(v),
            })
            .unwrap();
        used[next] = true;
        order.push(next);
    }
    let mut value = path_value(w, &order);
    loop {
        let mut improved = false;
        for i in 0..n - 1 {
            for j in i + 1..n {
                let mut cand = order.clone();
                cand[i..=j].reverse();
                let v = path_value(w, &cand);
                if v > value * (1.0 + 1e-12) {
                    order = cand;
                    value = v;
                    improved = true;
                }
            }
        }
        if !improved {
            return order;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterReport {
    /// Connected components, each sorted, ordered by smallest member.
    pub components: Vec<Vec<usize>>,
    pub clustered: bool,
}

pub fn detect_clustering(edges: &[(usize, usize)], n: usize) -> ClusterReport {
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut x = x;
        while p[x] != r {
            let nx = p[x];
            p[x] = r;
            x = nx;
        }
        r
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for &(i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for v in 0..n {
        let r = find(&mut parent, v);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(v);
    }
    ClusterReport {
        clustered: groups.len() > 1,
        components: groups,
    }
}

/// `Σ (d_s - d_ij)` over the given edges.
pub fn p6_objective(dist: &DMatrix<f64>, edges: &[(usize, usize)], d_s: f64) -> f64 {
    edges.iter().map(|&(i, j)| d_s - dist[(i, j)]).sum()
}

/// Solves both graphs at every step from AUV positions `auvs[k][n]` and
/// surface positions `usv[k]`.
pub fn solve_steps(auvs: &[Vec<Vector3<f64>>], usv: &[Vector2<f64>], exact_threshold: usize) -> GraphPlan {
    let mut plan = GraphPlan::default();
    for (p, u) in auvs.iter().zip(usv) {
        plan.a2u.push(solve_a2u(p, u));
        plan.a2a.push(solve_a2a(&distance_matrix(p), exact_threshold));
    }
    plan
}
