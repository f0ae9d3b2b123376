//! Graph route to the stationary regime: the first-order-in-p transition
//! digraph over occupation tuples, arborescence counting via matrix-tree
//! determinants, the closed-form bipartite arborescence weights, and
//! stationary distributions via the Markov chain tree theorem.
//!
//! All of it runs in exact arithmetic: big integers for counts (they outgrow
//! u64 within a handful of memories) and big rationals for weights, with
//! determinants computed by Bareiss fraction-free elimination.

use crate::error::{Error, Result};
use crate::model::{NetworkParams, Occupation};
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::{BTreeMap, HashMap};
use std::io;
use std::io::Write;

/// Directed graph over occupation states with positive exact-rational edge
/// weights (the coefficient of p of each first-order transition).
/// Self-loops are never stored; they play no role in arborescences.
#[derive(Debug, Clone)]
pub struct WeightedDigraph {
    vertices: Vec<Occupation>,
    index: HashMap<Occupation, usize>,
    edges: BTreeMap<(usize, usize), BigRational>,
}

impl WeightedDigraph {
    pub fn new(vertices: Vec<Occupation>) -> Self {
        let index = vertices
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, k)| (k, i))
            .collect();
        WeightedDigraph {
            vertices,
            index,
            edges: BTreeMap::new(),
        }
    }

    pub fn vertices(&self) -> &[Occupation] {
        &self.vertices
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_index(&self, k: &Occupation) -> Option<usize> {
        self.index.get(k).copied()
    }

    /// Edges as `(from, to, weight)` in deterministic `(from, to)` order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &BigRational)> {
        self.edges.iter().map(|(&(u, v), w)| (u, v, w))
    }

    pub fn weight(&self, from: usize, to: usize) -> Option<&BigRational> {
        self.edges.get(&(from, to))
    }

    /// Accumulates `weight` onto the edge `from -> to`. Self-loops are
    /// dropped, non-positive weights rejected.
    pub fn add_edge(&mut self, from: usize, to: usize, weight: BigRational) -> Result<()> {
        if !weight.is_positive() {
            return Err(Error::InvalidParameter(format!(
                "edge weight must be positive, got {weight}"
            )));
        }
        if from >= self.vertices.len() || to >= self.vertices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.vertices.len(),
                got: from.max(to),
            });
        }
        if from == to {
            return Ok(());
        }
        *self
            .edges
            .entry((from, to))
            .or_insert_with(BigRational::zero) += weight;
        Ok(())
    }

    /// Same graph with every edge weight multiplied by `factor`.
    pub fn scaled(&self, factor: &BigRational) -> WeightedDigraph {
        let mut g = WeightedDigraph::new(self.vertices.clone());
        g.edges = self
            .edges
            .iter()
            .map(|(&e, w)| (e, w * factor))
            .collect();
        g
    }

    fn out_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (&(u, v), _) in &self.edges {
            adj[u].push(v);
        }
        adj
    }

    fn in_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (&(u, v), _) in &self.edges {
            adj[v].push(u);
        }
        adj
    }

    pub fn is_strongly_connected(&self) -> bool {
        let v = self.vertices.len();
        if v <= 1 {
            return true;
        }
        let reaches_all = |adj: &[Vec<usize>]| {
            let mut seen = vec![false; v];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            while let Some(u) = stack.pop() {
                for &w in &adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        count += 1;
                        stack.push(w);
                    }
                }
            }
            count == v
        };
        reaches_all(&self.out_adjacency()) && reaches_all(&self.in_adjacency())
    }

    /// Plain-text edge list, one edge per line:
    /// `from-index to-index weight-numerator weight-denominator`.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (u, v, w) in self.edges() {
            writeln!(out, "{} {} {} {}", u, v, w.numer(), w.denom())?;
        }
        Ok(())
    }
}

/// First-order-in-p round transition graph.
///
/// Vertices are the post-measurement-reachable occupation tuples
/// (`min k = 0`). At first order exactly one memory is filled per round, so
/// from state `k` each party `i` with `k_i < m` contributes a transition to
/// the measured image of `k + e_i` with a weight of `m - k_i` (the number of
/// its empty cells, i.e. the coefficient of p). Transitions landing back on
/// `k` are self-loops and dropped.
pub fn build_small_p_graph(n: usize, m: usize) -> Result<WeightedDigraph> {
    let params = NetworkParams::new(n, m, 0.5)?; // p is irrelevant here
    let states = params
        .reduced_state_count()
        .filter(|&s| s <= crate::chain::DEFAULT_STATE_CAP as u128)
        .ok_or(Error::StateCapExceeded {
            states: params.reduced_state_count().unwrap_or(u128::MAX),
            cap: crate::chain::DEFAULT_STATE_CAP,
        })? as usize;

    let mut vertices = Vec::new();
    let mut current = vec![0u32; n];
    for _ in 0..states {
        if current.iter().any(|&k| k == 0) {
            vertices.push(Occupation(current.clone()));
        }
        // odometer with party 1 as the most significant digit
        for d in (0..n).rev() {
            if current[d] as usize == m {
                current[d] = 0;
            } else {
                current[d] += 1;
                break;
            }
        }
    }

    let mut g = WeightedDigraph::new(vertices);
    for u in 0..g.vertex_count() {
        let k = g.vertices[u].clone();
        for i in 0..n {
            if k.0[i] as usize >= m {
                continue;
            }
            let mut filled = k.clone();
            filled.0[i] += 1;
            let target = filled.measured();
            if target == k {
                continue;
            }
            let to = g.vertex_index(&target).expect("measured state has min 0");
            let weight = BigRational::from_integer(BigInt::from(m as u32 - k.0[i]));
            g.add_edge(u, to, weight)?;
        }
    }
    Ok(g)
}

/// Quotient of a party-permutation-closed graph by the permutation action.
///
/// Vertices become the sorted-descending orbit representatives; the weight
/// of `orbit -> orbit'` sums the representative's edges into all members of
/// `orbit'`. This recovers the ordered-tuple presentation (for n = 2, the
/// bipartite chain whose first hop carries weight 2m).
pub fn merge_permutations(g: &WeightedDigraph) -> Result<WeightedDigraph> {
    let mut reps: Vec<Occupation> = g
        .vertices
        .iter()
        .map(|k| k.sorted_desc())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    reps.sort();
    let merged = WeightedDigraph::new(reps);
    let mut out = merged;
    for rep_id in 0..out.vertex_count() {
        let rep = out.vertices[rep_id].clone();
        let u = g.vertex_index(&rep).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "graph is not closed under party permutations: missing {rep}"
            ))
        })?;
        let targets: Vec<(usize, BigRational)> = g
            .edges()
            .filter(|&(from, _, _)| from == u)
            .map(|(_, v, w)| (v, w.clone()))
            .collect();
        for (v, w) in targets {
            let orbit = g.vertices[v].sorted_desc();
            let to = out.vertex_index(&orbit).expect("orbit representative exists");
            if to != rep_id {
                out.add_edge(rep_id, to, w)?;
            }
        }
    }
    Ok(out)
}

/// Arborescence data for one root: the number of arborescences and the total
/// arborescence weight (with the common power of p factored out).
#[derive(Debug, Clone, PartialEq)]
pub struct ArborescenceResult {
    pub root: Occupation,
    pub count: BigUint,
    pub weight_sum: BigRational,
}

/// Laplacian of the graph with row `u` carrying the out-weights of `u`:
/// `L[u][u] = sum_v w(u->v)`, `L[u][v] = -w(u->v)`. Deleting the root's row
/// and column and taking the determinant yields the total weight of the
/// arborescences converging to the root (every non-root vertex keeps exactly
/// one outgoing edge and reaches the root).
fn laplacian_minor(g: &WeightedDigraph, root: usize, unit_weights: bool) -> Vec<Vec<BigRational>> {
    let v = g.vertex_count();
    let pos: Vec<Option<usize>> = {
        let mut pos = vec![None; v];
        let mut next = 0;
        for u in 0..v {
            if u != root {
                pos[u] = Some(next);
                next += 1;
            }
        }
        pos
    };
    let mut minor = vec![vec![BigRational::zero(); v - 1]; v - 1];
    for (u, t, w) in g.edges() {
        let w = if unit_weights {
            BigRational::one()
        } else {
            w.clone()
        };
        if let Some(i) = pos[u] {
            minor[i][i] += &w;
            if let Some(j) = pos[t] {
                minor[i][j] -= &w;
            }
        }
    }
    minor
}

/// Exact determinant of a rational matrix: rows are scaled to integers and
/// the integer determinant is computed by Bareiss fraction-free elimination.
fn rational_det(matrix: Vec<Vec<BigRational>>) -> BigRational {
    let n = matrix.len();
    if n == 0 {
        return BigRational::one();
    }
    let mut scale = BigInt::one();
    let mut rows: Vec<Vec<BigInt>> = Vec::with_capacity(n);
    for row in matrix {
        let lcm = row
            .iter()
            .fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
        rows.push(
            row.iter()
                .map(|x| x.numer() * (&lcm / x.denom()))
                .collect(),
        );
        scale *= &lcm;
    }
    BigRational::new(bareiss_det(rows), scale)
}

/// Bareiss fraction-free determinant over big integers.
fn bareiss_det(mut a: Vec<Vec<BigInt>>) -> BigInt {
    let n = a.len();
    if n == 0 {
        return BigInt::one();
    }
    let mut sign = false;
    let mut prev = BigInt::one();
    for k in 0..n - 1 {
        if a[k][k].is_zero() {
            let Some(pivot) = (k + 1..n).find(|&r| !a[r][k].is_zero()) else {
                return BigInt::zero();
            };
            a.swap(k, pivot);
            sign = !sign;
        }
        let (head, tail) = a.split_at_mut(k + 1);
        let pivot_row = &head[k];
        for row in tail.iter_mut() {
            let lead = std::mem::replace(&mut row[k], BigInt::zero());
            for j in k + 1..n {
                let num = &row[j] * &pivot_row[k] - &lead * &pivot_row[j];
                row[j] = num / &prev;
            }
        }
        prev = a[k][k].clone();
    }
    let det = std::mem::take(&mut a[n - 1][n - 1]);
    if sign {
        -det
    } else {
        det
    }
}

/// Number of arborescences rooted at `root` (unit edge multiplicities) plus
/// their total weight. The root must be a vertex of `g`.
pub fn count_arborescences(g: &WeightedDigraph, root: &Occupation) -> Result<ArborescenceResult> {
    let r = g
        .vertex_index(root)
        .ok_or_else(|| Error::RootNotFound(root.to_string()))?;
    let count = rational_det(laplacian_minor(g, r, true));
    let weight_sum = rational_det(laplacian_minor(g, r, false));
    debug_assert!(count.is_integer());
    debug_assert!(!count.is_negative() && !weight_sum.is_negative());
    Ok(ArborescenceResult {
        root: root.clone(),
        count: count.to_integer().to_biguint().unwrap_or_default(),
        weight_sum,
    })
}

/// Total arborescence weight per root, in vertex order.
pub fn arborescence_weight_sums(g: &WeightedDigraph) -> Vec<BigRational> {
    (0..g.vertex_count())
        .map(|r| rational_det(laplacian_minor(g, r, false)))
        .collect()
}

/// Stationary distribution by the Markov chain tree theorem:
/// `pi_k = ||A_k|| / ||A||`, exactly. Any uniform weight rescaling (in
/// particular the factored-out power of p) cancels in the ratio.
pub fn stationary_via_mctt(g: &WeightedDigraph) -> Result<Vec<BigRational>> {
    if !g.is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    let sums = arborescence_weight_sums(g);
    let total: BigRational = sums.iter().sum();
    if total.is_zero() {
        return Err(Error::NotStronglyConnected);
    }
    Ok(sums.into_iter().map(|w| w / &total).collect())
}

/// Closed-form arborescence weights of the bipartite ordered chain with the
/// common factor p^m removed: `m^m` for root `(0,0)` and
/// `2 m^(m-k+1) (m-1)!/(m-k)!` for roots `(k,0)`, `k = 1..m`.
pub fn arborescence_weights_bipartite(m: usize) -> Result<Vec<ArborescenceResult>> {
    if m < 1 {
        return Err(Error::InvalidParameter(format!("m<1 (m={m})")));
    }
    let m_big = BigInt::from(m);
    let mut out = Vec::with_capacity(m + 1);
    out.push(ArborescenceResult {
        root: Occupation(vec![0, 0]),
        count: BigUint::one(),
        weight_sum: BigRational::from_integer(m_big.pow(m as u32)),
    });
    // (m-1)!/(m-k)! built up as a falling product
    let mut falling = BigInt::one();
    for k in 1..=m {
        if k >= 2 {
            falling *= BigInt::from(m - k + 1);
        }
        let weight = BigInt::from(2) * m_big.pow((m - k + 1) as u32) * &falling;
        out.push(ArborescenceResult {
            root: Occupation(vec![k as u32, 0]),
            count: BigUint::one(),
            weight_sum: BigRational::from_integer(weight),
        });
    }
    Ok(out)
}

/// First-order coefficient of the expected GHZ measurements per round:
/// `<L> ~ c p` with `c = m * Pr[exactly one party is empty]` under the
/// stationary distribution of the small-p graph. A GHZ measurement happens
/// at first order exactly when the single empty party fills a cell.
pub fn smallp_expected_l(n: usize, m: usize) -> Result<f64> {
    let g = build_small_p_graph(n, m)?;
    let pi = stationary_via_mctt(&g)?;
    let one_zero: BigRational = g
        .vertices()
        .iter()
        .zip(&pi)
        .filter(|(k, _)| k.0.iter().filter(|&&x| x == 0).count() == 1)
        .map(|(_, w)| w.clone())
        .sum();
    let coeff = one_zero * BigRational::from_integer(BigInt::from(m));
    Ok(coeff.to_f64().expect("coefficient fits in f64"))
}
