//! Closed-form and approximate rate formulas, waiting-time and multiplexing
//! bounds, and the stationary moment recurrences of the decoupled model.

use crate::error::{Error, Result};
use crate::model::{ErrorBound, RateEstimate, RateMethod};

/// Euler-Mascheroni constant.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Default certified truncation error for the infinite waiting-time series.
pub const DEFAULT_SERIES_EPS: f64 = 1e-14;

/// Expected GHZ measurements per round for m = 1 via the same-sign series
///
/// `<L1> = [1 + sum_{j>=1} (1 - (1 - (1-p)^j)^n)]^(-1)`,
///
/// truncated once the geometric tail bound `n (1-p)^(J+1) / p` drops below
/// `eps`. With m = 1 the returned `l_mean` and `rate` coincide.
pub fn rate_no_multiplexing(n: usize, p: f64, eps: f64) -> Result<RateEstimate> {
    check_n(n)?;
    check_p_closed(p)?;
    if eps <= 0.0 {
        return Err(Error::InvalidParameter(format!("eps<=0 (eps={eps})")));
    }
    if p == 0.0 {
        // The waiting time diverges; the rate is zero.
        return Ok(RateEstimate::from_l_mean(
            0.0,
            1,
            RateMethod::NoMultiplexing,
            ErrorBound::DivergentSeries,
        ));
    }
    let q = 1.0 - p;
    let mut sum = 0.0;
    let mut qj = 1.0; // (1-p)^j, starting at j = 0
    let mut tail = n as f64 * q / p;
    while tail >= eps && qj > 0.0 {
        qj *= q;
        tail *= q;
        sum += 1.0 - (1.0 - qj).powi(n as i32);
    }
    let l1 = 1.0 / (1.0 + sum);
    Ok(RateEstimate::from_l_mean(
        l1,
        1,
        RateMethod::NoMultiplexing,
        // |d(1/x)| <= |dx| / x^2 and x >= 1.
        ErrorBound::Truncation(tail.max(f64::MIN_POSITIVE)),
    ))
}

/// Expected GHZ measurements per round for m = 1 via the finite alternating
/// sum
///
/// `<L1> = [sum_{k=1}^{n} (-1)^(k+1) C(n,k) / (1 - (1-p)^k)]^(-1)`.
///
/// The bracket is the expected maximum of n independent geometric waiting
/// times with success probability p.
pub fn rate_no_multiplexing_alt(n: usize, p: f64) -> Result<RateEstimate> {
    check_n(n)?;
    check_p_closed(p)?;
    if p == 0.0 {
        return Ok(RateEstimate::from_l_mean(
            0.0,
            1,
            RateMethod::NoMultiplexingAlt,
            ErrorBound::DivergentSeries,
        ));
    }
    let l1 = 1.0 / expected_max_geometric(n, p);
    Ok(RateEstimate::from_l_mean(
        l1,
        1,
        RateMethod::NoMultiplexingAlt,
        ErrorBound::Exact,
    ))
}

/// Expected maximum of n independent geometric(p) waiting times.
fn expected_max_geometric(n: usize, p: f64) -> f64 {
    let q = 1.0 - p;
    let mut sum = 0.0;
    let mut binom = 1.0; // C(n, k), updated multiplicatively
    let mut qk = 1.0; // (1-p)^k
    for k in 1..=n {
        binom *= (n - k + 1) as f64 / k as f64;
        qk *= q;
        let term = binom / (1.0 - qk);
        sum += if k % 2 == 1 { term } else { -term };
    }
    sum
}

/// A two-sided bound, either on the rate (`waiting_time`) or on the expected
/// measurements per round (`multiplexing`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsPair {
    pub lower: f64,
    pub upper: f64,
    pub kind: BoundsKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundsKind {
    /// Rate bounds from the harmonic-sum estimates of the maximal geometric
    /// waiting time.
    WaitingTime,
    /// `<L>`-level bounds `m <L1> <= <L> <= p m`.
    Multiplexing,
}

/// Rate bounds for m = 1 from the known estimates
///
/// `H_n / ln(1/(1-p)) <= <L1>^(-1) <= 1 + H_n / ln(1/(1-p))`,
///
/// where `H_n` is the n-th harmonic number.
pub fn waiting_time_bounds(n: usize, p: f64) -> Result<BoundsPair> {
    check_n(n)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "p outside (0,1) (p={p}); the waiting-time bounds degenerate at the endpoints"
        )));
    }
    let lambda = -(1.0 - p).ln(); // ln(1/(1-p))
    let h_n: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
    Ok(BoundsPair {
        lower: 1.0 / (1.0 + h_n / lambda),
        upper: lambda / h_n,
        kind: BoundsKind::WaitingTime,
    })
}

/// Expected GHZ measurements per round for n = 2 with multiplexing, first
/// order in p:
///
/// `<L> = p m (1 - 1 / (1 + 2 sum_{k=1}^{m} m^(-k+1) (m-1)!/(m-k)!))`.
///
/// The factorial ratio is accumulated multiplicatively so large m does not
/// overflow. A lower approximation of the exact rate for small p.
pub fn bipartite_l_small_p(m: usize, p: f64) -> Result<RateEstimate> {
    check_m(m)?;
    check_p_closed(p)?;
    let l = p * m as f64 * (1.0 - 1.0 / (1.0 + 2.0 * bipartite_weight_sum(m)));
    Ok(RateEstimate::from_l_mean(
        l,
        m,
        RateMethod::SmallPBipartite,
        ErrorBound::Unbounded,
    ))
}

/// Rate form of [`bipartite_l_small_p`].
pub fn bipartite_rate_small_p(m: usize, p: f64) -> Result<RateEstimate> {
    bipartite_l_small_p(m, p)
}

/// `sum_{k=1}^{m} m^(-k+1) (m-1)!/(m-k)!` as a running product.
fn bipartite_weight_sum(m: usize) -> f64 {
    let mut term = 1.0; // k = 1
    let mut sum = 1.0;
    for k in 2..=m {
        term *= (m - k + 1) as f64 / m as f64;
        sum += term;
    }
    sum
}

/// Large-m asymptotic of the bipartite rate: `p (1 - 1/(1 + sqrt(2 pi m)))`.
pub fn bipartite_rate_large_m(m: usize, p: f64) -> Result<RateEstimate> {
    check_m(m)?;
    check_p_closed(p)?;
    let rate = p * (1.0 - 1.0 / (1.0 + (2.0 * std::f64::consts::PI * m as f64).sqrt()));
    Ok(RateEstimate::from_l_mean(
        rate * m as f64,
        m,
        RateMethod::LargeMBipartite,
        ErrorBound::Unbounded,
    ))
}

/// `<L>`-level sandwich `m <L1> <= <L> <= p m`.
///
/// The lower bound treats the m memories as independent single-memory
/// systems; the upper bound is the mean refill of a drained party.
pub fn multiplexing_bounds(n: usize, m: usize, p: f64) -> Result<BoundsPair> {
    check_m(m)?;
    let l1 = rate_no_multiplexing_alt(n, p)?.l_mean;
    Ok(BoundsPair {
        lower: m as f64 * l1,
        upper: p * m as f64,
        kind: BoundsKind::Multiplexing,
    })
}

/// Which extreme-value correction factor the general approximation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaMode {
    /// `alpha(n) = sqrt(2) (1 - (ln(4 pi ln n) - 2 gamma) / (4 ln n))`.
    #[default]
    Asymptotic,
    /// `alpha = 1`, which also works well over a broad parameter range.
    One,
}

/// Extreme-value correction factor for the expected minimum of n
/// identically distributed normal variables. Requires `n >= 2`.
pub fn alpha(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "n<2 (n={n}); alpha is defined for at least two variables"
        )));
    }
    let ln_n = (n as f64).ln();
    Ok(2f64.sqrt() * (1.0 - ((4.0 * std::f64::consts::PI * ln_n).ln() - 2.0 * EULER_GAMMA) / (4.0 * ln_n)))
}

fn alpha_sq_beta_ln_n(n: usize, p: f64, mode: AlphaMode) -> Result<f64> {
    let a = match mode {
        AlphaMode::Asymptotic => alpha(n)?,
        AlphaMode::One => 1.0,
    };
    let beta = (1.0 - p) / (2.0 - p);
    Ok(a * a * beta * (n as f64).ln())
}

/// General approximation of the expected GHZ measurements per round:
///
/// `<L> = p m (sqrt(A + 1) - sqrt(A))^2` with `A = alpha^2 beta ln(n) / (4m)`
/// and `beta = (1-p)/(2-p)`.
///
/// n = 1 short-circuits to the exact value `p m` before alpha is evaluated.
pub fn general_l_approx(n: usize, m: usize, p: f64, mode: AlphaMode) -> Result<RateEstimate> {
    check_n(n)?;
    check_m(m)?;
    check_p_closed(p)?;
    if n == 1 {
        return Ok(RateEstimate::from_l_mean(
            p * m as f64,
            m,
            RateMethod::GeneralApprox,
            ErrorBound::Exact,
        ));
    }
    let a = alpha_sq_beta_ln_n(n, p, mode)? / (4.0 * m as f64);
    let l = p * m as f64 * ((a + 1.0).sqrt() - a.sqrt()).powi(2);
    Ok(RateEstimate::from_l_mean(
        l,
        m,
        RateMethod::GeneralApprox,
        ErrorBound::Unbounded,
    ))
}

/// Large-n limit of the general approximation: `<L> = p m^2 / (alpha^2 beta ln n)`.
pub fn general_l_large_n(n: usize, m: usize, p: f64) -> Result<RateEstimate> {
    check_m(m)?;
    check_p_closed(p)?;
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "n<2 (n={n}); the large-n form divides by ln(n)"
        )));
    }
    let l = p * (m * m) as f64 / alpha_sq_beta_ln_n(n, p, AlphaMode::Asymptotic)?;
    Ok(RateEstimate::from_l_mean(
        l,
        m,
        RateMethod::GeneralLargeN,
        ErrorBound::Unbounded,
    ))
}

/// Large-m saturation of the rate: `p (1 - sqrt(alpha^2 beta ln(n) / (4m)))`.
pub fn saturation_rate(n: usize, m: usize, p: f64) -> Result<RateEstimate> {
    check_m(m)?;
    check_p_closed(p)?;
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "n<2 (n={n}); the saturation form requires ln(n) > 0"
        )));
    }
    let rate = p * (1.0 - (alpha_sq_beta_ln_n(n, p, AlphaMode::Asymptotic)? / (4.0 * m as f64)).sqrt());
    Ok(RateEstimate::from_l_mean(
        rate * m as f64,
        m,
        RateMethod::Saturation,
        ErrorBound::Unbounded,
    ))
}

/// Smallest m at which the per-memory rate gain of the general approximation
/// from m to m+1 drops below `threshold`.
pub fn find_saturation_m(n: usize, p: f64, threshold: f64, mode: AlphaMode) -> Result<usize> {
    check_n(n)?;
    check_p_closed(p)?;
    if threshold <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "threshold<=0 (threshold={threshold})"
        )));
    }
    const M_SCAN_LIMIT: usize = 1_000_000;
    let mut rate = general_l_approx(n, 1, p, mode)?.rate;
    for m in 1..=M_SCAN_LIMIT {
        let next = general_l_approx(n, m + 1, p, mode)?.rate;
        if next - rate < threshold {
            return Ok(m);
        }
        rate = next;
    }
    Err(Error::InvalidParameter(format!(
        "no saturation below m={M_SCAN_LIMIT} for threshold={threshold}"
    )))
}

/// Mean and variance of the per-party occupation in the decoupled model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    /// Expected occupation (memories).
    pub mu: f64,
    /// Occupation variance (memories squared).
    pub sigma2: f64,
}

/// One round of the moment recurrences:
///
/// `mu'      = p m + (1-p) mu - l`
/// `sigma2'  = (1-p)^2 sigma2 + p (1-p) (m - mu)`.
pub fn moments_step(mom: Moments, m: usize, p: f64, l: f64) -> Moments {
    Moments {
        mu: p * m as f64 + (1.0 - p) * mom.mu - l,
        sigma2: (1.0 - p).powi(2) * mom.sigma2 + p * (1.0 - p) * (m as f64 - mom.mu),
    }
}

/// Fixed point of [`moments_step`]:
///
/// `mu = m - l/p`, `sigma2 = beta l / p` with `beta = (1-p)/(2-p)`.
pub fn simplified_stationary_moments(m: usize, p: f64, l: f64) -> Result<Moments> {
    check_m(m)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "p outside (0,1] (p={p}); the stationary moments divide by p"
        )));
    }
    if l < 0.0 {
        return Err(Error::InvalidParameter(format!("l<0 (l={l})")));
    }
    let beta = (1.0 - p) / (2.0 - p);
    Ok(Moments {
        mu: m as f64 - l / p,
        sigma2: beta * l / p,
    })
}

/// Expected minimum of n identically distributed normal variables,
/// `mu - alpha(n) sigma sqrt(ln n)`. Returns `mu` for n = 1.
pub fn expected_min_normals(mu: f64, sigma: f64, n: usize) -> Result<f64> {
    check_n(n)?;
    if sigma < 0.0 {
        return Err(Error::InvalidParameter(format!("sigma<0 (sigma={sigma})")));
    }
    if n == 1 {
        return Ok(mu);
    }
    Ok(mu - alpha(n)? * sigma * (n as f64).ln().sqrt())
}

/// Partial sums of the prefactor series that converges to `<L1>`.
///
/// The leading prefactors obey `c(1) = 1` and
/// `c(i) = sum_{l<i} c(l) (w(i-l) - 1)` with `w(s) = (1 - (1-p)^s)^n`;
/// the returned value is `sum_{j<=terms} c(j)`.
pub fn no_multiplexing_series(n: usize, p: f64, terms: usize) -> Result<f64> {
    check_n(n)?;
    check_p_closed(p)?;
    if terms < 1 {
        return Err(Error::InvalidParameter(format!("terms<1 (terms={terms})")));
    }
    let q = 1.0 - p;
    // w(s) - 1 for s = 1..terms
    let mut w_minus_one = Vec::with_capacity(terms);
    let mut qs = 1.0;
    for _ in 1..=terms {
        qs *= q;
        w_minus_one.push((1.0 - qs).powi(n as i32) - 1.0);
    }
    let mut coeff = Vec::with_capacity(terms + 1);
    coeff.push(1.0f64); // c(1)
    let mut sum = 1.0;
    for i in 2..=terms {
        let ci: f64 = (1..i).map(|l| coeff[l - 1] * w_minus_one[i - l - 1]).sum();
        coeff.push(ci);
        sum += ci;
    }
    Ok(sum)
}

fn check_n(n: usize) -> Result<()> {
    if n < 1 {
        return Err(Error::InvalidParameter(format!("n<1 (n={n})")));
    }
    Ok(())
}

fn check_m(m: usize) -> Result<()> {
    if m < 1 {
        return Err(Error::InvalidParameter(format!("m<1 (m={m})")));
    }
    Ok(())
}

fn check_p_closed(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("p outside [0,1] (p={p})")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn no_multiplexing_single_party_is_p() {
        for &p in &[0.05, 0.3, 0.9] {
            let r = rate_no_multiplexing(1, p, 1e-14).unwrap();
            assert_relative_eq!(r.l_mean, p, max_relative = 1e-12);
            let r = rate_no_multiplexing_alt(1, p).unwrap();
            assert_relative_eq!(r.l_mean, p, max_relative = 1e-14);
        }
    }

    #[test]
    fn no_multiplexing_known_values() {
        // n=2, p=0.1: 1/(20 - 1/0.19) = 19/280
        let r = rate_no_multiplexing_alt(2, 0.1).unwrap();
        assert_relative_eq!(r.l_mean, 19.0 / 280.0, max_relative = 1e-13);
        // n=3, p=0.5: 1/(6 - 4 + 8/7) = 7/22
        let r = rate_no_multiplexing_alt(3, 0.5).unwrap();
        assert_relative_eq!(r.l_mean, 7.0 / 22.0, max_relative = 1e-13);
        // n=2, p=0.5: 1/(4 - 4/3) = 3/8
        let r = rate_no_multiplexing_alt(2, 0.5).unwrap();
        assert_relative_eq!(r.l_mean, 0.375, max_relative = 1e-13);
    }

    #[test]
    fn series_and_alt_forms_agree() {
        for n in 1..=10 {
            for &p in &[0.01, 0.05, 0.1, 0.3, 0.5, 0.7, 0.9] {
                let a = rate_no_multiplexing(n, p, 1e-15).unwrap().l_mean;
                let b = rate_no_multiplexing_alt(n, p).unwrap().l_mean;
                assert!((a - b).abs() <= 1e-12, "n={n} p={p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn truncation_bound_is_certified() {
        let eps = 1e-6;
        let loose = rate_no_multiplexing(4, 0.2, eps).unwrap();
        let tight = rate_no_multiplexing(4, 0.2, 1e-15).unwrap();
        let ErrorBound::Truncation(bound) = loose.error else {
            panic!("expected truncation bound")
        };
        assert!(bound < eps);
        // the bracket sum is underestimated by at most `bound`
        assert!((loose.l_mean - tight.l_mean).abs() <= bound);
    }

    #[test]
    fn p_zero_rate_is_flagged_zero() {
        let r = rate_no_multiplexing(3, 0.0, 1e-14).unwrap();
        assert_eq!(r.l_mean, 0.0);
        assert_eq!(r.error, ErrorBound::DivergentSeries);
    }

    #[test]
    fn monotone_in_p_and_n() {
        for n in 1..=8usize {
            let mut prev = 0.0;
            for &p in &[0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.95] {
                let r = rate_no_multiplexing_alt(n, p).unwrap().l_mean;
                assert!(r > prev, "rate must increase in p (n={n}, p={p})");
                prev = r;
            }
        }
        for &p in &[0.05, 0.1, 0.5, 0.9] {
            let mut prev = f64::INFINITY;
            for n in 1..=12usize {
                let r = rate_no_multiplexing_alt(n, p).unwrap().l_mean;
                assert!(r < prev, "rate must decrease in n (n={n}, p={p})");
                prev = r;
            }
        }
    }

    #[test]
    fn waiting_time_bounds_bracket_the_rate() {
        for n in 1..=12 {
            for &p in &[0.05, 0.1, 0.3, 0.5, 0.9] {
                let b = waiting_time_bounds(n, p).unwrap();
                let r = rate_no_multiplexing_alt(n, p).unwrap().l_mean;
                assert!(b.lower <= b.upper);
                assert!(b.lower <= r && r <= b.upper, "n={n} p={p}: [{}, {}] vs {r}", b.lower, b.upper);
            }
        }
    }

    #[test]
    fn waiting_time_bounds_n1_contains_p() {
        let b = waiting_time_bounds(1, 0.5).unwrap();
        assert_relative_eq!(b.lower, 1.0 / (1.0 + 1.0 / 2f64.ln()), max_relative = 1e-14);
        assert_relative_eq!(b.upper, 2f64.ln(), max_relative = 1e-14);
        assert!(b.lower <= 0.5 && 0.5 <= b.upper);
    }

    #[test]
    fn waiting_time_bounds_tighten_as_p_shrinks() {
        // The bounds differ by one additive round of waiting time, which is
        // relatively negligible when waiting times diverge (p -> 0).
        let ratio = |p: f64| {
            let b = waiting_time_bounds(4, p).unwrap();
            b.upper / b.lower
        };
        assert!(ratio(1e-6) < 1.0 + 1e-3);
        assert!(ratio(1e-6) < ratio(0.1));
        assert!(ratio(0.1) < ratio(0.5));
        assert!(ratio(0.5) < ratio(0.9));
    }

    #[test]
    fn bipartite_small_p_closed_forms() {
        // m=1: <L> = 2p/3
        let r = bipartite_l_small_p(1, 0.3).unwrap();
        assert_relative_eq!(r.l_mean, 0.2, max_relative = 1e-14);
        // m=2: weight sum 1.5, <L> = 1.5 p
        let r = bipartite_l_small_p(2, 0.4).unwrap();
        assert_relative_eq!(r.l_mean, 0.6, max_relative = 1e-14);
    }

    #[test]
    fn bipartite_weight_sum_survives_large_m() {
        // would overflow with naive factorials; stays near sqrt(2 pi m)/2
        let s = bipartite_weight_sum(400);
        let expect = (2.0 * std::f64::consts::PI * 400.0).sqrt() / 2.0;
        assert!((s / expect - 1.0).abs() < 0.05, "{s} vs {expect}");
    }

    #[test]
    fn bipartite_large_m_values() {
        let r = bipartite_rate_large_m(50, 0.1).unwrap();
        assert_relative_eq!(
            r.rate,
            0.1 * (1.0 - 1.0 / (1.0 + (100.0 * std::f64::consts::PI).sqrt())),
            max_relative = 1e-14
        );
        // approaches p from below
        let r = bipartite_rate_large_m(100_000, 0.1).unwrap();
        assert!(r.rate < 0.1 && r.rate > 0.0995);
        // close to the exact small-p form already at m=5
        let a = bipartite_rate_large_m(5, 0.1).unwrap().rate;
        let b = bipartite_rate_small_p(5, 0.1).unwrap().rate;
        assert!((a - b).abs() / b < 0.03, "{a} vs {b}");
    }

    #[test]
    fn multiplexing_bounds_shape() {
        let b = multiplexing_bounds(2, 3, 0.1).unwrap();
        assert!(b.lower <= b.upper);
        assert_relative_eq!(b.upper, 0.3, max_relative = 1e-14);
        // n=1: both collapse onto p m
        let b = multiplexing_bounds(1, 4, 0.25).unwrap();
        assert_relative_eq!(b.lower, 1.0, max_relative = 1e-12);
        assert_relative_eq!(b.upper, 1.0, max_relative = 1e-12);
        // p=0: both zero
        let b = multiplexing_bounds(3, 2, 0.0).unwrap();
        assert_eq!((b.lower, b.upper), (0.0, 0.0));
    }

    #[test]
    fn alpha_reference_values() {
        assert_relative_eq!(alpha(10).unwrap(), 1.074_780_246_926_437_9, max_relative = 1e-12);
        assert_relative_eq!(alpha(2).unwrap(), 0.899_002_338_005_964_6, max_relative = 1e-12);
        assert!(alpha(1).is_err());
    }

    #[test]
    fn general_approx_examples() {
        // n=1 is exact: p m
        let r = general_l_approx(1, 7, 0.3, AlphaMode::Asymptotic).unwrap();
        assert_relative_eq!(r.l_mean, 2.1, max_relative = 1e-14);
        // n=10, m=5, p=0.1
        let r = general_l_approx(10, 5, 0.1, AlphaMode::Asymptotic).unwrap();
        assert_relative_eq!(r.l_mean, 0.304, max_relative = 2e-3);
        // never exceeds p m
        for n in 1..=40usize {
            for m in [1usize, 3, 10, 50] {
                let r = general_l_approx(n, m, 0.1, AlphaMode::Asymptotic).unwrap();
                assert!(r.l_mean <= 0.1 * m as f64 + 1e-15);
            }
        }
    }

    #[test]
    fn large_n_and_saturation_limits() {
        assert!(general_l_large_n(1, 3, 0.1).is_err());
        // saturation approaches p as m grows
        let r = saturation_rate(2, 10_000_000, 0.1).unwrap();
        assert!((r.rate - 0.1).abs() < 1e-3);
        // large-n form stays below p m deep in the large-n regime
        let r = general_l_large_n(1000, 2, 0.1).unwrap();
        assert!(r.l_mean < 0.2);
    }

    #[test]
    fn stationary_moments_examples() {
        let m = simplified_stationary_moments(5, 0.1, 0.3).unwrap();
        assert_relative_eq!(m.mu, 2.0, max_relative = 1e-14);
        assert_relative_eq!(m.sigma2, 0.9 / 1.9 * 3.0, max_relative = 1e-14);
        // l = p m drains the mean to zero
        let m = simplified_stationary_moments(6, 0.2, 1.2).unwrap();
        assert_relative_eq!(m.mu, 0.0, epsilon = 1e-12);
        assert_relative_eq!(m.sigma2, (0.8 / 1.8) * 6.0, max_relative = 1e-14);
    }

    #[test]
    fn moments_step_converges_to_fixed_point() {
        let (m, p, l) = (5usize, 0.1, 0.3);
        let stat = simplified_stationary_moments(m, p, l).unwrap();
        let mut mom = Moments { mu: 0.0, sigma2: 0.0 };
        for _ in 0..10_000 {
            mom = moments_step(mom, m, p, l);
        }
        assert_relative_eq!(mom.mu, stat.mu, epsilon = 1e-10);
        assert_relative_eq!(mom.sigma2, stat.sigma2, epsilon = 1e-10);
    }

    #[test]
    fn expected_min_normals_degenerate_cases() {
        assert_eq!(expected_min_normals(3.5, 0.0, 7).unwrap(), 3.5);
        assert_eq!(expected_min_normals(1.25, 2.0, 1).unwrap(), 1.25);
        let v = expected_min_normals(0.0, 1.0, 3).unwrap();
        assert_relative_eq!(v, -alpha(3).unwrap() * 3f64.ln().sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn general_approx_is_root_of_min_normals() {
        // The approximation is the l at which the stationary minimum
        // occupation crosses zero; recover it by bisection and compare.
        for &(n, m, p) in &[(2usize, 1usize, 0.1), (5, 3, 0.2), (12, 7, 0.05)] {
            let f = |l: f64| {
                let mom = simplified_stationary_moments(m, p, l).unwrap();
                expected_min_normals(mom.mu, mom.sigma2.sqrt(), n).unwrap()
            };
            let (mut lo, mut hi) = (0.0, p * m as f64);
            assert!(f(lo) > 0.0 && f(hi) < 0.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let root = 0.5 * (lo + hi);
            let l = general_l_approx(n, m, p, AlphaMode::Asymptotic).unwrap().l_mean;
            assert!((root - l).abs() <= 1e-9, "n={n} m={m} p={p}: {root} vs {l}");
        }
    }

    #[test]
    fn series_partial_sums() {
        assert_eq!(no_multiplexing_series(4, 0.3, 1).unwrap(), 1.0);
        let s = no_multiplexing_series(2, 0.5, 200).unwrap();
        assert!((s - 0.375).abs() <= 1e-9);
        // the second coefficient is (w(1) - 1) <= 0, so two terms always
        // undershoot one; later coefficients change sign, so no global
        // monotonicity is asserted
        for (n, p) in [(2usize, 0.5), (3, 0.2), (5, 0.9)] {
            let two = no_multiplexing_series(n, p, 2).unwrap();
            assert!(two <= 1.0, "n={n} p={p}");
        }
        // convergence to the closed form for several parameter points
        for (n, p) in [(2usize, 0.1), (3, 0.3), (5, 0.5)] {
            let s = no_multiplexing_series(n, p, 500).unwrap();
            let l1 = rate_no_multiplexing_alt(n, p).unwrap().l_mean;
            assert!((s - l1).abs() <= 1e-9, "n={n} p={p}: {s} vs {l1}");
        }
    }

    #[test]
    fn saturation_scan_matches_manual_gain_check() {
        let m = find_saturation_m(120, 0.1, 1e-4, AlphaMode::Asymptotic).unwrap();
        let rate = |mm: usize| general_l_approx(120, mm, 0.1, AlphaMode::Asymptotic).unwrap().rate;
        assert!(rate(m + 1) - rate(m) < 1e-4);
        for mm in 1..m {
            assert!(rate(mm + 1) - rate(mm) >= 1e-4);
        }
    }
}
