//! Exact reduced Markov chain of the repeater: storage map, measurement map,
//! round transition `T = measurement * storage`, stationary solvers and the
//! extraction of the expected GHZ measurements per round.
//!
//! States are occupation tuples `k` in `{0,...,m}^n` indexed by the
//! mixed-radix codec of [`crate::model`]. The storage map is the n-fold
//! Kronecker power of the single-party `(m+1) x (m+1)` binomial refill
//! matrix, so it is assembled by a Kronecker recursion over sparse columns
//! instead of ever materializing dense factors.

use crate::error::{Error, Result};
use crate::model::{
    decode, encode, ErrorBound, NetworkParams, Occupation, RateEstimate, RateMethod, StateIndex,
};

/// Default cap on `(m+1)^n` for matrix construction and power iteration.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;
/// Default cap on the dimension handed to the sparse direct solver.
pub const DEFAULT_DIRECT_SOLVE_CAP: usize = 20_000;
/// Cap on stored matrix entries (roughly a 1 GB working-set guard).
pub const DEFAULT_NNZ_CAP: usize = 60_000_000;
/// Default `l1` tolerance of the power iteration.
pub const DEFAULT_POWER_TOL: f64 = 1e-12;
/// Default iteration budget of the power iteration.
pub const DEFAULT_MAX_ITER: u64 = 1_000_000;
/// The full binary configuration space is only built for `n*m` up to this.
pub const BINARY_CELL_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Storage,
    Measurement,
    Round,
}

impl MatrixKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatrixKind::Storage => "storage",
            MatrixKind::Measurement => "measurement",
            MatrixKind::Round => "round",
        }
    }
}

/// Sparse column-stochastic matrix in compressed-column form. Entry
/// `(row, col)` is the probability of moving from state `col` to state
/// `row` in the sub-step the matrix describes.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    dim: usize,
    kind: MatrixKind,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl TransitionMatrix {
    fn from_columns<I>(dim: usize, kind: MatrixKind, columns: I) -> Self
    where
        I: IntoIterator<Item = Vec<(usize, f64)>>,
    {
        let mut col_ptr = Vec::with_capacity(dim + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for col in columns {
            for (r, v) in col {
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        debug_assert_eq!(col_ptr.len(), dim + 1);
        TransitionMatrix {
            dim,
            kind,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of one column as `(row, value)` pairs, sorted by row.
    pub fn column(&self, col: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.column(col)
            .find(|&(r, _)| r == row)
            .map_or(0.0, |(_, v)| v)
    }

    /// `y = M x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        y.fill(0.0);
        for c in 0..self.dim {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for i in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[i]] += self.values[i] * xc;
            }
        }
    }

    /// Largest deviation of any column sum from 1.
    pub fn max_column_sum_deviation(&self) -> f64 {
        (0..self.dim)
            .map(|c| (self.column(c).map(|(_, v)| v).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn checked_dim(params: &NetworkParams, cap: usize) -> Result<usize> {
    let states = params.reduced_state_count().ok_or(Error::StateCapExceeded {
        states: u128::MAX,
        cap,
    })?;
    if states > cap as u128 {
        return Err(Error::StateCapExceeded { states, cap });
    }
    Ok(states as usize)
}

/// Single-party storage map: column `k` is the binomial distribution of the
/// occupation after refilling each of the `m - k` empty memories with
/// probability `p`.
fn storage_single_party(m: usize, p: f64) -> TransitionMatrix {
    let q = 1.0 - p;
    let columns = (0..=m).map(move |k| {
        let trials = m - k;
        if p == 0.0 {
            return vec![(k, 1.0)];
        }
        if q == 0.0 {
            return vec![(m, 1.0)];
        }
        // pmf of Binomial(trials, p), shifted to start at k. The running
        // ratio keeps the evaluation stable for large m; log space is used
        // when q^trials underflows.
        let mut col = Vec::with_capacity(trials + 1);
        let log_start = trials as f64 * q.ln();
        if log_start > -700.0 {
            let mut t = q.powi(trials as i32);
            for y in 0..=trials {
                if t > 0.0 {
                    col.push((k + y, t));
                }
                if y < trials {
                    t *= (trials - y) as f64 / (y + 1) as f64 * (p / q);
                }
            }
        } else {
            let mut log_t = log_start;
            for y in 0..=trials {
                let t = log_t.exp();
                if t > 0.0 {
                    col.push((k + y, t));
                }
                if y < trials {
                    log_t += (((trials - y) as f64) / ((y + 1) as f64)).ln() + p.ln() - q.ln();
                }
            }
        }
        col
    });
    TransitionMatrix::from_columns(m + 1, MatrixKind::Storage, columns)
}

/// Kronecker product with `a` providing the most significant digit.
fn kronecker(a: &TransitionMatrix, b: &TransitionMatrix, kind: MatrixKind) -> Result<TransitionMatrix> {
    let nnz = (a.nnz() as u128) * (b.nnz() as u128);
    if nnz > DEFAULT_NNZ_CAP as u128 {
        return Err(Error::MatrixTooDense {
            nnz,
            cap: DEFAULT_NNZ_CAP,
        });
    }
    let dim = a.dim() * b.dim();
    let mut result = TransitionMatrix {
        dim,
        kind,
        col_ptr: Vec::with_capacity(dim + 1),
        row_idx: Vec::with_capacity(nnz as usize),
        values: Vec::with_capacity(nnz as usize),
    };
    result.col_ptr.push(0);
    for ca in 0..a.dim() {
        for cb in 0..b.dim() {
            for (ra, va) in a.column(ca) {
                for (rb, vb) in b.column(cb) {
                    result.row_idx.push(ra * b.dim() + rb);
                    result.values.push(va * vb);
                }
            }
            result.col_ptr.push(result.row_idx.len());
        }
    }
    Ok(result)
}

/// Reduced storage map: n-fold Kronecker power of the single-party map.
pub fn build_storage_reduced(params: &NetworkParams) -> Result<TransitionMatrix> {
    build_storage_reduced_capped(params, DEFAULT_STATE_CAP)
}

pub fn build_storage_reduced_capped(params: &NetworkParams, cap: usize) -> Result<TransitionMatrix> {
    checked_dim(params, cap)?;
    let single = storage_single_party(params.m(), params.p());
    let mut acc = single.clone();
    for _ in 1..params.n() {
        acc = kronecker(&acc, &single, MatrixKind::Storage)?;
    }
    Ok(acc)
}

/// Post-measurement image of every state: `k - min(k) * (1,...,1)`.
fn measurement_map(params: &NetworkParams, dim: usize) -> Vec<usize> {
    (0..dim)
        .map(|i| {
            let k = decode(StateIndex(i), params).expect("index within dim");
            encode(&k.measured(), params).expect("measured tuple is valid").0
        })
        .collect()
}

/// Reduced measurement map: a 0/1 matrix with exactly one entry per column,
/// sending `k` to `k - min(k) * (1,...,1)`.
pub fn build_measurement_reduced(params: &NetworkParams) -> Result<TransitionMatrix> {
    build_measurement_reduced_capped(params, DEFAULT_STATE_CAP)
}

pub fn build_measurement_reduced_capped(params: &NetworkParams, cap: usize) -> Result<TransitionMatrix> {
    let dim = checked_dim(params, cap)?;
    let map = measurement_map(params, dim);
    Ok(TransitionMatrix::from_columns(
        dim,
        MatrixKind::Measurement,
        map.into_iter().map(|target| vec![(target, 1.0)]),
    ))
}

/// Round transition `T = measurement * storage`.
///
/// The measurement map is deterministic, so the product just relabels the
/// storage rows and merges collisions; the explicit matrix product is never
/// formed.
pub fn build_transition(params: &NetworkParams) -> Result<TransitionMatrix> {
    build_transition_capped(params, DEFAULT_STATE_CAP)
}

pub fn build_transition_capped(params: &NetworkParams, cap: usize) -> Result<TransitionMatrix> {
    let storage = build_storage_reduced_capped(params, cap)?;
    let map = measurement_map(params, storage.dim());
    let dim = storage.dim();
    let columns = (0..dim).map(|c| {
        let mut col: Vec<(usize, f64)> = storage.column(c).map(|(r, v)| (map[r], v)).collect();
        col.sort_unstable_by_key(|&(r, _)| r);
        col.dedup_by(|next, prev| {
            if next.0 == prev.0 {
                prev.1 += next.1;
                true
            } else {
                false
            }
        });
        col
    });
    Ok(TransitionMatrix::from_columns(dim, MatrixKind::Round, columns))
}

/// Occupation tuple of a binary memory configuration (per-party popcounts).
pub fn binary_to_occupation(config: usize, n: usize, m: usize) -> Occupation {
    let mask = (1usize << m) - 1;
    Occupation(
        (0..n)
            .map(|i| ((config >> ((n - 1 - i) * m)) & mask).count_ones())
            .collect(),
    )
}

/// Round transition over the full binary configuration space `{0,1}^(n*m)`.
///
/// Validation oracle only: per-cell storage, then measurement emptying the
/// memories with higher indices first within each party. Aggregating by
/// occupation tuple must reproduce [`build_transition`].
pub fn build_transition_full_binary(params: &NetworkParams) -> Result<TransitionMatrix> {
    let cells = params.n() * params.m();
    if cells > BINARY_CELL_LIMIT {
        return Err(Error::BinarySpaceTooLarge {
            got: cells,
            max: BINARY_CELL_LIMIT,
        });
    }
    let (n, m, p) = (params.n(), params.m(), params.p());
    let q = 1.0 - p;
    let dim = 1usize << cells;
    let full = dim - 1;
    let party_mask = (1usize << m) - 1;

    // measurement: empty min-weight many cells per party, lowest bit first
    // (cell j sits at bit offset m - j inside its party block, so higher
    // memory indices occupy lower bits).
    let measure = |config: usize| -> usize {
        let l = (0..n)
            .map(|i| ((config >> ((n - 1 - i) * m)) & party_mask).count_ones())
            .min()
            .unwrap();
        let mut out = config;
        for i in 0..n {
            let shift = (n - 1 - i) * m;
            let mut block = (out >> shift) & party_mask;
            for _ in 0..l {
                block &= block - 1; // clear lowest set bit
            }
            out = (out & !(party_mask << shift)) | (block << shift);
        }
        out
    };

    let columns = (0..dim).map(|a| {
        let empty = full & !a;
        let zeros = empty.count_ones();
        let mut col: Vec<(usize, f64)> = Vec::with_capacity(1 << zeros);
        // walk all subsets of the empty cells
        let mut filled = empty;
        loop {
            let stored = filled.count_ones();
            let prob = p.powi(stored as i32) * q.powi((zeros - stored) as i32);
            if prob > 0.0 {
                col.push((measure(a | filled), prob));
            }
            if filled == 0 {
                break;
            }
            filled = (filled - 1) & empty;
        }
        col.sort_unstable_by_key(|&(r, _)| r);
        col.dedup_by(|next, prev| {
            if next.0 == prev.0 {
                prev.1 += next.1;
                true
            } else {
                false
            }
        });
        col
    });
    Ok(TransitionMatrix::from_columns(dim, MatrixKind::Round, columns))
}

/// Sums a distribution over binary configurations by occupation tuple.
pub fn aggregate_binary_distribution(params: &NetworkParams, probs: &[f64]) -> Result<Vec<f64>> {
    let cells = params.n() * params.m();
    let dim = 1usize << cells;
    if probs.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: probs.len(),
        });
    }
    let reduced_dim = params.reduced_state_count().unwrap() as usize;
    let mut out = vec![0.0; reduced_dim];
    for (a, &pr) in probs.iter().enumerate() {
        let k = binary_to_occupation(a, params.n(), params.m());
        out[encode(&k, params)?.0] += pr;
    }
    Ok(out)
}

/// How a stationary distribution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveIterations {
    Power(u64),
    Direct,
}

/// Probability vector over the reduced state space together with the
/// achieved `l1` residual `||T pi - pi||_1`.
#[derive(Debug, Clone)]
pub struct Distribution {
    pub probs: Vec<f64>,
    pub residual: f64,
    pub iterations: SolveIterations,
}

/// Starting point for the power iteration.
#[derive(Debug, Clone)]
pub enum InitialDistribution {
    /// Unit mass on the all-empty configuration.
    AllEmpty,
    /// Uniform over all states.
    Uniform,
    Custom(Vec<f64>),
}

impl InitialDistribution {
    fn materialize(&self, dim: usize) -> Result<Vec<f64>> {
        match self {
            InitialDistribution::AllEmpty => {
                let mut v = vec![0.0; dim];
                v[0] = 1.0;
                Ok(v)
            }
            InitialDistribution::Uniform => Ok(vec![1.0 / dim as f64; dim]),
            InitialDistribution::Custom(v) => {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: v.len(),
                    });
                }
                if v.iter().any(|&x| !(x >= 0.0)) {
                    return Err(Error::InvalidParameter(
                        "initial distribution has negative or NaN entries".into(),
                    ));
                }
                let sum: f64 = v.iter().sum();
                if sum <= 0.0 {
                    return Err(Error::InvalidParameter("initial distribution sums to zero".into()));
                }
                Ok(v.iter().map(|x| x / sum).collect())
            }
        }
    }
}

/// Stationary distribution by repeated application of the round transition.
///
/// Returns once `||T pi - pi||_1 <= tol`; the reported residual is evaluated
/// on the returned vector. The chain's stationary distribution is unique, so
/// the result does not depend on `init`.
pub fn stationary_power(
    t: &TransitionMatrix,
    init: &InitialDistribution,
    tol: f64,
    max_iter: u64,
) -> Result<Distribution> {
    if t.kind() != MatrixKind::Round {
        return Err(Error::WrongMatrixKind {
            expected: MatrixKind::Round.as_str(),
            got: t.kind().as_str(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol<=0 (tol={tol})")));
    }
    let dim = t.dim();
    let mut x = init.materialize(dim)?;
    let mut y = vec![0.0; dim];
    let mut diff = f64::INFINITY;
    for iter in 1..=max_iter {
        t.apply(&x, &mut y);
        diff = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        let sum: f64 = y.iter().sum();
        for v in y.iter_mut() {
            *v /= sum;
        }
        std::mem::swap(&mut x, &mut y);
        if diff <= tol {
            // report the residual of the vector actually returned
            t.apply(&x, &mut y);
            let residual = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
            return Ok(Distribution {
                probs: x,
                residual,
                iterations: SolveIterations::Power(iter),
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: diff,
    })
}

/// Number of closed communicating classes of the chain (strongly connected
/// components without outgoing edges). A unique stationary distribution
/// requires exactly one.
fn closed_class_count(t: &TransitionMatrix) -> usize {
    let n = t.dim();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in 0..n {
        for (r, v) in t.column(c) {
            if v > 0.0 && r != c {
                adjacency[c].push(r);
            }
        }
    }
    // iterative Tarjan
    const UNSEEN: usize = usize::MAX;
    let mut order = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut component = vec![UNSEEN; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_order = 0usize;
    let mut component_count = 0usize;
    for start in 0..n {
        if order[start] != UNSEEN {
            continue;
        }
        let mut frames: Vec<(usize, usize)> = vec![(start, 0)];
        while let Some(&(v, edge)) = frames.last() {
            if edge == 0 {
                order[v] = next_order;
                low[v] = next_order;
                next_order += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if edge < adjacency[v].len() {
                frames.last_mut().unwrap().1 += 1;
                let w = adjacency[v][edge];
                if order[w] == UNSEEN {
                    frames.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(order[w]);
                }
            } else {
                if low[v] == order[v] {
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        component[w] = component_count;
                        if w == v {
                            break;
                        }
                    }
                    component_count += 1;
                }
                frames.pop();
                if let Some(&(parent, _)) = frames.last() {
                    low[parent] = low[parent].min(low[v]);
                }
            }
        }
    }
    let mut open = vec![false; component_count];
    for (c, targets) in adjacency.iter().enumerate() {
        for &r in targets {
            if component[c] != component[r] {
                open[component[c]] = true;
            }
        }
    }
    open.iter().filter(|&&o| !o).count()
}

/// Stationary distribution by a sparse direct solve of `(T - I) pi = 0`
/// with one row replaced by the normalization `sum pi = 1`.
///
/// Rejects chains with more than one closed communicating class (e.g.
/// p = 0), whose stationary system is singular.
pub fn stationary_linear(t: &TransitionMatrix) -> Result<Distribution> {
    stationary_linear_capped(t, DEFAULT_DIRECT_SOLVE_CAP)
}

pub fn stationary_linear_capped(t: &TransitionMatrix, cap: usize) -> Result<Distribution> {
    use faer::prelude::Solve;
    use faer::sparse::{SparseColMat, Triplet};

    if t.kind() != MatrixKind::Round {
        return Err(Error::WrongMatrixKind {
            expected: MatrixKind::Round.as_str(),
            got: t.kind().as_str(),
        });
    }
    let dim = t.dim();
    if dim > cap {
        return Err(Error::StateCapExceeded {
            states: dim as u128,
            cap,
        });
    }
    if closed_class_count(t) != 1 {
        return Err(Error::SingularSystem { residual: None });
    }
    let mut triplets: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(t.nnz() + dim);
    for c in 0..dim {
        triplets.push(Triplet::new(0, c, 1.0));
        let mut diag_seen = false;
        for (r, v) in t.column(c) {
            if r == 0 {
                continue;
            }
            let adjusted = if r == c {
                diag_seen = true;
                v - 1.0
            } else {
                v
            };
            triplets.push(Triplet::new(r, c, adjusted));
        }
        if !diag_seen && c != 0 {
            triplets.push(Triplet::new(c, c, -1.0));
        }
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, &triplets)
        .map_err(|_| Error::SingularSystem { residual: None })?;
    let lu = mat.sp_lu().map_err(|_| Error::SingularSystem { residual: None })?;
    let mut rhs = faer::Mat::<f64>::zeros(dim, 1);
    rhs[(0, 0)] = 1.0;
    let sol = lu.solve(&rhs);

    let mut probs: Vec<f64> = (0..dim).map(|i| sol[(i, 0)]).collect();
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem { residual: None });
    }
    // roundoff may leave tiny negative entries; anything sizable means the
    // system was numerically reducible
    const NEGATIVITY_TOL: f64 = 1e-8;
    if probs.iter().any(|&v| v < -NEGATIVITY_TOL) {
        return Err(Error::SingularSystem { residual: None });
    }
    for v in probs.iter_mut() {
        *v = v.max(0.0);
    }
    let sum: f64 = probs.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::SingularSystem { residual: None });
    }
    for v in probs.iter_mut() {
        *v /= sum;
    }
    let mut image = vec![0.0; dim];
    t.apply(&probs, &mut image);
    let residual: f64 = probs.iter().zip(&image).map(|(a, b)| (a - b).abs()).sum();
    const RESIDUAL_SANITY: f64 = 1e-6;
    if residual > RESIDUAL_SANITY {
        return Err(Error::SingularSystem {
            residual: Some(residual),
        });
    }
    Ok(Distribution {
        probs,
        residual,
        iterations: SolveIterations::Direct,
    })
}

/// Expected GHZ measurements per round in the stationary regime:
/// `<L> = sum_k (storage pi)_k min(k)`, and the rate `<L>/m`.
///
/// `stationary` must be the post-measurement stationary distribution of the
/// round transition for `params`; the storage map is applied here because
/// the measurement count of a round is read off before its measurement step.
pub fn expected_measurements(params: &NetworkParams, stationary: &Distribution) -> Result<RateEstimate> {
    expected_measurements_capped(params, stationary, DEFAULT_STATE_CAP)
}

pub fn expected_measurements_capped(
    params: &NetworkParams,
    stationary: &Distribution,
    cap: usize,
) -> Result<RateEstimate> {
    let dim = checked_dim(params, cap)?;
    if stationary.probs.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: stationary.probs.len(),
        });
    }
    let storage = build_storage_reduced_capped(params, cap)?;
    let mut pre_measurement = vec![0.0; dim];
    storage.apply(&stationary.probs, &mut pre_measurement);
    let mut l_mean = 0.0;
    for (i, &pr) in pre_measurement.iter().enumerate() {
        if pr > 0.0 {
            let k = decode(StateIndex(i), params)?;
            l_mean += pr * k.min_filled() as f64;
        }
    }
    Ok(RateEstimate::from_l_mean(
        l_mean,
        params.m(),
        RateMethod::Exact,
        ErrorBound::Residual(stationary.residual),
    ))
}

/// Convenience: build the round transition, solve by power iteration from
/// the all-empty state, and extract the rate.
pub fn exact_rate(params: &NetworkParams) -> Result<RateEstimate> {
    exact_rate_capped(params, DEFAULT_STATE_CAP, DEFAULT_POWER_TOL, DEFAULT_MAX_ITER)
}

pub fn exact_rate_capped(
    params: &NetworkParams,
    cap: usize,
    tol: f64,
    max_iter: u64,
) -> Result<RateEstimate> {
    let t = build_transition_capped(params, cap)?;
    let pi = stationary_power(&t, &InitialDistribution::AllEmpty, tol, max_iter)?;
    expected_measurements_capped(params, &pi, cap)
}
