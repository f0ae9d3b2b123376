//! Domain types: network parameters, occupation tuples and the mixed-radix
//! codec between occupation tuples and flat state indices.

use crate::error::{Error, Result};
use std::fmt;

/// Parameters of the star network: `n` parties, `m` memories per party and
/// per-link storage success probability `p` per round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkParams {
    n: usize,
    m: usize,
    p: f64,
}

impl NetworkParams {
    /// Validates `n >= 1`, `m >= 1` and `p` in `[0, 1]`.
    pub fn new(n: usize, m: usize, p: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidParameter(format!("n<1 (n={n})")));
        }
        if m < 1 {
            return Err(Error::InvalidParameter(format!("m<1 (m={m})")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("p outside [0,1] (p={p})")));
        }
        Ok(Self { n, m, p })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Size of the reduced state space `(m+1)^n`, or `None` on overflow.
    pub fn reduced_state_count(&self) -> Option<u128> {
        let base = self.m as u128 + 1;
        let mut acc: u128 = 1;
        for _ in 0..self.n {
            acc = acc.checked_mul(base)?;
        }
        Some(acc)
    }
}

impl fmt::Display for NetworkParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={}, m={}, p={}", self.n, self.m, self.p)
    }
}

/// Number of filled memories per party; the reduced Markov state.
///
/// Each component lies in `{0, ..., m}`. [`Occupation::min_filled`] is the
/// number of GHZ measurements that the configuration supports.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Occupation(pub Vec<u32>);

impl Occupation {
    pub fn zeros(n: usize) -> Self {
        Occupation(vec![0; n])
    }

    pub fn min_filled(&self) -> u32 {
        self.0.iter().copied().min().expect("occupation is non-empty")
    }

    /// Subtracts `min()` from every component (the measurement step).
    pub fn measured(&self) -> Self {
        let l = self.min_filled();
        Occupation(self.0.iter().map(|&k| k - l).collect())
    }

    /// Components sorted in decreasing order; canonical representative of
    /// the party-permutation orbit.
    pub fn sorted_desc(&self) -> Self {
        let mut v = self.0.clone();
        v.sort_unstable_by(|a, b| b.cmp(a));
        Occupation(v)
    }
}

impl fmt::Display for Occupation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, ")")
    }
}

/// Flat index into the reduced state space `[0, (m+1)^n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateIndex(pub usize);

/// Mixed-radix (base `m+1`) encoding with party 1 as the most significant
/// digit, so Kronecker factors line up with parties in order.
pub fn encode(k: &Occupation, params: &NetworkParams) -> Result<StateIndex> {
    if k.0.len() != params.n() {
        return Err(Error::DimensionMismatch {
            expected: params.n(),
            got: k.0.len(),
        });
    }
    let base = params.m() + 1;
    let mut idx: usize = 0;
    for &ki in &k.0 {
        if ki as usize > params.m() {
            return Err(Error::OccupationOutOfRange {
                value: ki,
                max: params.m() as u32,
            });
        }
        idx = idx
            .checked_mul(base)
            .and_then(|v| v.checked_add(ki as usize))
            .ok_or(Error::StateCapExceeded {
                states: params.reduced_state_count().unwrap_or(u128::MAX),
                cap: usize::MAX,
            })?;
    }
    Ok(StateIndex(idx))
}

/// Inverse of [`encode`].
pub fn decode(idx: StateIndex, params: &NetworkParams) -> Result<Occupation> {
    let dim = params
        .reduced_state_count()
        .filter(|&d| d <= usize::MAX as u128)
        .ok_or(Error::StateCapExceeded {
            states: u128::MAX,
            cap: usize::MAX,
        })? as usize;
    if idx.0 >= dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: idx.0,
        });
    }
    let base = params.m() + 1;
    let mut rem = idx.0;
    let mut k = vec![0u32; params.n()];
    for slot in k.iter_mut().rev() {
        *slot = (rem % base) as u32;
        rem /= base;
    }
    Ok(Occupation(k))
}

/// How a rate estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMethod {
    /// Stationary solve of the exact reduced chain.
    Exact,
    /// Closed form for m = 1, truncated same-sign series.
    NoMultiplexing,
    /// Closed form for m = 1, finite alternating sum.
    NoMultiplexingAlt,
    /// Partial sums of the prefactor series for m = 1.
    NoMultiplexingSeries,
    /// First-order-in-p bipartite closed form.
    SmallPBipartite,
    /// Large-m asymptotic of the bipartite closed form.
    LargeMBipartite,
    /// Extreme-value approximation for general n, m.
    GeneralApprox,
    /// Large-n asymptotic of the general approximation.
    GeneralLargeN,
    /// Large-m saturation form of the general approximation.
    Saturation,
    /// Monte Carlo simulation of the full model.
    MonteCarlo,
}

impl RateMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RateMethod::Exact => "exact",
            RateMethod::NoMultiplexing => "analytic-m1",
            RateMethod::NoMultiplexingAlt => "analytic-m1-alt",
            RateMethod::NoMultiplexingSeries => "analytic-m1-series",
            RateMethod::SmallPBipartite => "smallp-bipartite",
            RateMethod::LargeMBipartite => "large-m",
            RateMethod::GeneralApprox => "approx",
            RateMethod::GeneralLargeN => "large-n",
            RateMethod::Saturation => "saturation",
            RateMethod::MonteCarlo => "simulate",
        }
    }
}

impl fmt::Display for RateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Error descriptor attached to a rate estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorBound {
    /// `l1` residual of the stationary solve behind the estimate.
    Residual(f64),
    /// Certified truncation bound of an infinite series.
    Truncation(f64),
    /// Monte Carlo confidence-interval half width (1.96 standard errors).
    CiHalfWidth(f64),
    /// Approximation without a quantitative error bound.
    Unbounded,
    /// Exact closed form (up to floating-point rounding).
    Exact,
    /// The quantity is exactly zero but the defining series diverges.
    DivergentSeries,
}

impl fmt::Display for ErrorBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorBound::Residual(r) => write!(f, "residual={r:.3e}"),
            ErrorBound::Truncation(t) => write!(f, "truncation<{t:.3e}"),
            ErrorBound::CiHalfWidth(w) => write!(f, "ci95=±{w:.3e}"),
            ErrorBound::Unbounded => write!(f, "approximation"),
            ErrorBound::Exact => write!(f, "exact"),
            ErrorBound::DivergentSeries => write!(f, "divergent-series"),
        }
    }
}

/// Expected GHZ measurements per round and the rate per memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    /// Expected number of GHZ measurements per round, `0 <= l_mean <= m`.
    pub l_mean: f64,
    /// Rate per memory, always `l_mean / m`.
    pub rate: f64,
    pub method: RateMethod,
    pub error: ErrorBound,
}

impl RateEstimate {
    /// Builds an estimate from the expected measurements per round, deriving
    /// `rate = l_mean / m`.
    pub fn from_l_mean(l_mean: f64, m: usize, method: RateMethod, error: ErrorBound) -> Self {
        RateEstimate {
            l_mean,
            rate: l_mean / m as f64,
            method,
            error,
        }
    }
}
