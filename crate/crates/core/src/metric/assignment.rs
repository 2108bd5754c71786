//! Exact linear sum assignment for W₁ between equal-size empirical measures.
//!
//! The solver runs successive shortest augmenting paths (Dijkstra with dual
//! potentials) on a sparse candidate graph of k-nearest neighbours in both
//! directions, then certifies the result against the full cost matrix by
//! checking dual feasibility of every pair. Violating pairs are added to
//! the graph and the sparse problem is re-solved; when no pair violates,
//! the matching is optimal for the dense problem by LP duality.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{invalid, Result};
use crate::parallel;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct Assignment {
    /// `col_for_row[i]` is the column matched to row `i`.
    pub col_for_row: Vec<usize>,
    pub total_cost: f64,
    /// Dual potentials certifying optimality: `c_ij >= u_i + v_j`.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of sparse re-solves needed.
    pub rounds: usize,
}

#[derive(Copy, Clone)]
struct Item(f64, usize);

impl PartialEq for Item {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Item {
    // min-heap on distance, ties by column index
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

type Edges = Vec<Vec<(usize, f64)>>;

/// Duals and partial matching carried between sparse solves.
struct State {
    u: Vec<f64>,
    v: Vec<f64>,
    col4row: Vec<usize>,
    row4col: Vec<usize>,
}

impl State {
    fn new(n: usize) -> Self {
        State { u: vec![0.0; n], v: vec![0.0; n], col4row: vec![NONE; n], row4col: vec![NONE; n] }
    }

    fn unmatch(&mut self, i: usize) {
        let j = self.col4row[i];
        if j != NONE {
            self.row4col[j] = NONE;
            self.col4row[i] = NONE;
        }
    }
}

/// Augment every free row along shortest paths in reduced costs. Invariant
/// on entry and exit: reduced costs of edges out of matched rows are
/// nonnegative and matched edges are tight. Returns the first row with no
/// augmenting path, leaving the state consistent.
fn augment_free_rows(n: usize, edges: &Edges, st: &mut State) -> std::result::Result<(), usize> {
    let mut dist = vec![f64::INFINITY; n];
    let mut path = vec![NONE; n];
    let mut scanned = vec![false; n];
    let mut touched = Vec::new();
    let mut sr = Vec::new();
    let mut sc = Vec::new();
    let mut heap = BinaryHeap::new();

    for cur in 0..n {
        if st.col4row[cur] != NONE {
            continue;
        }
        for &j in &touched {
            dist[j] = f64::INFINITY;
            scanned[j] = false;
            path[j] = NONE;
        }
        touched.clear();
        sr.clear();
        sc.clear();
        heap.clear();

        let mut i = cur;
        let mut min_val = 0.0;
        let sink = loop {
            sr.push(i);
            for &(j, c) in &edges[i] {
                if scanned[j] {
                    continue;
                }
                let r = min_val + c - st.u[i] - st.v[j];
                if r < dist[j] {
                    if dist[j] == f64::INFINITY {
                        touched.push(j);
                    }
                    dist[j] = r;
                    path[j] = i;
                    heap.push(Item(r, j));
                }
            }
            let j = loop {
                match heap.pop() {
                    None => return Err(cur),
                    Some(Item(d, j)) if !scanned[j] && d == dist[j] => break j,
                    Some(_) => {}
                }
            };
            scanned[j] = true;
            sc.push(j);
            min_val = dist[j];
            if st.row4col[j] == NONE {
                break j;
            }
            i = st.row4col[j];
        };

        st.u[cur] += min_val;
        for &r in &sr[1..] {
            st.u[r] += min_val - dist[st.col4row[r]];
        }
        for &j in &sc {
            st.v[j] -= min_val - dist[j];
        }
        let mut j = sink;
        loop {
            let i = path[j];
            st.row4col[j] = i;
            let prev = st.col4row[i];
            st.col4row[i] = j;
            if i == cur {
                break;
            }
            j = prev;
        }
    }
    Ok(())
}

/// Keep the `k` cheapest entries; ties go to indices cyclically closest
/// after `origin`, so equal costs spread over distinct columns.
fn k_smallest(row: &mut Vec<(usize, f64)>, k: usize, origin: usize) {
    let n = row.len();
    if n > k {
        let key = |j: usize| (j + n - origin % n) % n;
        row.select_nth_unstable_by(k - 1, |a, b| a.1.total_cmp(&b.1).then(key(a.0).cmp(&key(b.0))));
        row.truncate(k);
    }
}

fn merge(row: &mut Vec<(usize, f64)>, extra: impl IntoIterator<Item = (usize, f64)>) {
    row.extend(extra);
    row.sort_by_key(|e| e.0);
    row.dedup_by_key(|e| e.0);
}

/// Indices of the `k` smallest `score(i, j)` over `j` for each `i`, and over
/// `i` for each `j`, as `(row, col)` pairs.
fn nearest_pairs<S>(n: usize, k: usize, score: &S, threads: Option<usize>) -> Result<Vec<(usize, usize)>>
where
    S: Fn(usize, usize) -> f64 + Sync + Send,
{
    let chunk = 64;
    let by_row: Vec<Vec<(usize, f64)>> = parallel::map_chunks(threads, n, chunk, |lo, hi| {
        Ok::<_, crate::Error>(
            (lo..hi)
                .map(|i| {
                    let mut row: Vec<(usize, f64)> = (0..n).map(|j| (j, score(i, j))).collect();
                    k_smallest(&mut row, k, i);
                    row
                })
                .collect::<Vec<_>>(),
        )
    })?
    .into_iter()
    .flatten()
    .collect();
    let by_col: Vec<Vec<(usize, f64)>> = parallel::map_chunks(threads, n, chunk, |lo, hi| {
        Ok::<_, crate::Error>(
            (lo..hi)
                .map(|j| {
                    let mut col: Vec<(usize, f64)> = (0..n).map(|i| (i, score(i, j))).collect();
                    k_smallest(&mut col, k, j);
                    col
                })
                .collect::<Vec<_>>(),
        )
    })?
    .into_iter()
    .flatten()
    .collect();
    let mut out = Vec::with_capacity(4 * n * k);
    for (i, row) in by_row.into_iter().enumerate() {
        out.extend(row.into_iter().map(|(j, _)| (i, j)));
    }
    for (j, col) in by_col.into_iter().enumerate() {
        out.extend(col.into_iter().map(|(i, _)| (i, j)));
    }
    Ok(out)
}

/// Exact assignment with costs evaluated on demand by `cost(i, j)`.
///
/// `k` is the number of nearest candidates kept per row and per column
/// (values around 8–32 are typical; correctness does not depend on it).
pub fn solve_lazy<F>(n: usize, cost: F, k: usize, threads: Option<usize>) -> Result<Assignment>
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    solve_lazy_with_hint(n, &cost, None::<&fn(usize, usize) -> f64>, k, threads)
}

/// As [`solve_lazy`], with an optional cheap `hint(i, j)` whose nearest
/// neighbours replace those of `cost` in the initial candidate graph. A hint that anticipates the
/// optimal plan (for instance distances after aligning the two clouds'
/// means) cuts the number of repair rounds; it never affects the result.
pub fn solve_lazy_with_hint<F, H>(
    n: usize,
    cost: &F,
    hint: Option<&H>,
    k: usize,
    threads: Option<usize>,
) -> Result<Assignment>
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
    H: Fn(usize, usize) -> f64 + Sync + Send,
{
    if n == 0 {
        return Err(invalid("assignment needs at least one row"));
    }
    let k = k.clamp(1, n);
    let chunk = 64;

    let pairs = match hint {
        Some(h) => nearest_pairs(n, k, h, threads)?,
        None => nearest_pairs(n, k, cost, threads)?,
    };
    let mut edges: Edges = vec![Vec::new(); n];
    for (i, j) in pairs {
        edges[i].push((j, cost(i, j)));
    }
    for row in edges.iter_mut() {
        merge(row, []);
    }

    let mut st = State::new(n);
    let mut extra = vec![k; n];
    let mut rounds = 0;
    loop {
        rounds += 1;
        if let Err(row) = augment_free_rows(n, &edges, &mut st) {
            // no augmenting path from `row`: widen its candidate list
            extra[row] = (2 * extra[row]).min(n);
            let mut full: Vec<(usize, f64)> = (0..n).map(|j| (j, cost(row, j))).collect();
            k_smallest(&mut full, extra[row], row);
            merge(&mut edges[row], full);
            continue;
        }

        // dual feasibility over all pairs
        let (u, v) = (&st.u, &st.v);
        let violations: Vec<Vec<(usize, f64)>> = parallel::map_chunks(threads, n, chunk, |lo, hi| {
            Ok::<_, crate::Error>(
                (lo..hi)
                    .map(|i| {
                        let mut viol: Vec<(usize, f64, f64)> = (0..n)
                            .filter_map(|j| {
                                let c = cost(i, j);
                                let tol = 1e-12 * (1.0 + c.abs() + u[i].abs() + v[j].abs());
                                let red = c - u[i] - v[j];
                                (red < -tol).then_some((j, c, red))
                            })
                            .collect();
                        // most violated first; the rest are caught in later rounds
                        if viol.len() > k {
                            viol.select_nth_unstable_by(k - 1, |a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
                            viol.truncate(k);
                        }
                        viol.into_iter().map(|(j, c, _)| (j, c)).collect::<Vec<_>>()
                    })
                    .collect::<Vec<_>>(),
            )
        })?
        .into_iter()
        .flatten()
        .collect();

        let mut grew = false;
        for (i, viol) in violations.into_iter().enumerate() {
            if viol.is_empty() {
                continue;
            }
            let before = edges[i].len();
            merge(&mut edges[i], viol);
            if edges[i].len() > before {
                grew = true;
                // a free row's dual is recomputed when it is augmented
                st.unmatch(i);
            }
        }
        if !grew {
            // optimal; any remaining violations are round-off on existing edges
            let total_cost = st.col4row.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
            return Ok(Assignment { col_for_row: st.col4row, total_cost, u: st.u, v: st.v, rounds });
        }
    }
}

/// Exact assignment on a dense row-major `n x n` cost matrix.
pub fn solve_dense(cost: &[f64], n: usize) -> Result<Assignment> {
    if cost.len() != n * n {
        return Err(invalid("cost matrix must be n x n"));
    }
    solve_lazy(n, |i, j| cost[i * n + j], n, Some(1))
}

/// Minimum over all `n!` permutations; a test oracle for small `n`.
pub fn brute_force(cost: &[f64], n: usize) -> (f64, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>();
    let mut best = (eval(&perm), perm.clone());
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let v = eval(&perm);
            if v < best.0 {
                best = (v, perm.clone());
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}
