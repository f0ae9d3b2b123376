//! Seeded Monte Carlo simulation: the full storage/measurement model of the
//! repeater and the decoupled model with a fixed per-round subtraction.
//!
//! Replicas are independent and reproducible: replica `r` draws from a
//! ChaCha8 stream obtained from the base seed via `set_stream(r)`, and the
//! merge is a sequential reduction in replica order, so results are
//! bit-identical for identical `(params, config)` regardless of scheduling.

use crate::error::{Error, Result};
use crate::model::{ErrorBound, NetworkParams, RateEstimate, RateMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution as _;
use rayon::prelude::*;

/// Default base seed used when the caller does not pick one.
pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    /// Rounds per replica, including the burn-in.
    pub rounds: u64,
    /// Rounds discarded before averaging.
    pub burn_in: u64,
    /// Independent replicas.
    pub replicas: u32,
    /// Base seed of the replica streams.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rounds: 100_000,
            burn_in: 1_000,
            replicas: 32,
            seed: DEFAULT_SEED,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidSimConfig("rounds must be positive".into()));
        }
        if self.burn_in >= self.rounds {
            return Err(Error::InvalidSimConfig(format!(
                "burn_in ({}) must be smaller than rounds ({})",
                self.burn_in, self.rounds
            )));
        }
        if self.replicas == 0 {
            return Err(Error::InvalidSimConfig("at least one replica is required".into()));
        }
        Ok(())
    }
}

/// A Monte Carlo estimate with its across-replica standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Merged simulation output.
///
/// `l_mean`/`rate` estimate the GHZ measurements per round (for the
/// decoupled model they echo the configured subtraction, which is exact by
/// construction). The occupancy statistics always describe the
/// post-measurement state, so `min_occupancy` is identically zero for the
/// full model and only informative for the decoupled one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub l_mean: f64,
    pub rate: f64,
    /// 1.96 standard errors of `l_mean` across replicas.
    pub ci_half_width: f64,
    pub l_stderr: f64,
    pub occupancy: StatEstimate,
    pub occupancy_var: StatEstimate,
    pub min_occupancy: StatEstimate,
    /// Empirical distribution of the per-round measurement count `0..=m`
    /// (empty for the decoupled model).
    pub histogram: Vec<f64>,
    /// Set when the decoupled model's running mean drifted below `-50 m`,
    /// which signals a subtraction above the sustainable `p m`.
    pub diverged: bool,
    pub config: SimConfig,
}

impl SimResult {
    pub fn rate_estimate(&self, m: usize) -> RateEstimate {
        RateEstimate::from_l_mean(
            self.l_mean,
            m,
            RateMethod::MonteCarlo,
            ErrorBound::CiHalfWidth(self.ci_half_width),
        )
    }
}

/// RNG of one replica: base seed plus replica index as the ChaCha stream.
fn replica_rng(seed: u64, replica: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica as u64);
    rng
}

/// Exact binomial draw. CDF inversion up to 64 trials (the common case:
/// refills of at most m memories), rejection sampling beyond.
fn sample_binomial(rng: &mut ChaCha8Rng, trials: u64, p: f64) -> u64 {
    if trials == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return trials;
    }
    if trials > 64 {
        return rand_distr::Binomial::new(trials, p)
            .expect("checked p in (0,1)")
            .sample(rng);
    }
    if p > 0.5 {
        return trials - sample_binomial(rng, trials, 1.0 - p);
    }
    let q = 1.0 - p;
    let mut pmf = q.powi(trials as i32);
    let mut cdf = pmf;
    let u: f64 = rng.random();
    let mut y = 0u64;
    while u > cdf && y < trials {
        pmf *= ((trials - y) as f64 / (y + 1) as f64) * (p / q);
        y += 1;
        cdf += pmf;
    }
    y
}

/// Refill draw for a possibly fractional memory deficit.
///
/// The integer part is an ordinary binomial. A fractional remainder `f` is
/// one extra cell that fires with probability `f p / (1 - p + f p)` and then
/// contributes `1 - p (1 - f)`, the unique two-point variable with mean
/// `f p` and variance `f p (1 - p)`. The refill therefore has the exact
/// conditional mean and variance of a binomial over `deficit` cells, and for
/// integer deficits it reduces to one.
fn sample_fractional_refill(rng: &mut ChaCha8Rng, deficit: f64, p: f64) -> f64 {
    if deficit <= 0.0 {
        return 0.0;
    }
    let whole = deficit.floor();
    let frac = deficit - whole;
    let mut y = sample_binomial(rng, whole as u64, p) as f64;
    if frac > 0.0 && p > 0.0 {
        let fire = frac * p / (1.0 - p + frac * p);
        if rng.random::<f64>() < fire {
            y += 1.0 - p * (1.0 - frac);
        }
    }
    y
}

struct ReplicaStats {
    l_mean: f64,
    occupancy_mean: f64,
    occupancy_var: f64,
    min_mean: f64,
    histogram: Vec<f64>,
    diverged: bool,
}

fn merge(replicas: Vec<ReplicaStats>, m: usize, config: SimConfig, with_hist: bool) -> SimResult {
    let r = replicas.len() as f64;
    let stat = |extract: fn(&ReplicaStats) -> f64| -> StatEstimate {
        let mean = replicas.iter().map(extract).sum::<f64>() / r;
        let stderr = if replicas.len() >= 2 {
            let ss = replicas
                .iter()
                .map(|s| (extract(s) - mean).powi(2))
                .sum::<f64>()
                / (r - 1.0);
            (ss / r).sqrt()
        } else {
            0.0
        };
        StatEstimate { value: mean, stderr }
    };
    let l = stat(|s| s.l_mean);
    let histogram = if with_hist {
        let mut h = vec![0.0; m + 1];
        for s in &replicas {
            for (acc, v) in h.iter_mut().zip(&s.histogram) {
                *acc += v / r;
            }
        }
        h
    } else {
        Vec::new()
    };
    SimResult {
        l_mean: l.value,
        rate: l.value / m as f64,
        ci_half_width: 1.96 * l.stderr,
        l_stderr: l.stderr,
        occupancy: stat(|s| s.occupancy_mean),
        occupancy_var: stat(|s| s.occupancy_var),
        min_occupancy: stat(|s| s.min_mean),
        histogram,
        diverged: replicas.iter().any(|s| s.diverged),
        config,
    }
}

/// Simulates the full model: per round and party, refill the empty memories
/// binomially, measure `min` GHZ states, subtract. Averages the measurement
/// count and the post-measurement occupancy over the rounds after burn-in.
pub fn run_full(params: &NetworkParams, config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let (n, m, p) = (params.n(), params.m(), params.p());
    let effective = (config.rounds - config.burn_in) as f64;
    let replicas: Vec<ReplicaStats> = (0..config.replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replica_rng(config.seed, rep);
            let mut occ = vec![0u64; n];
            let mut l_sum = 0u64;
            let mut occ_sum = 0.0;
            let mut occ_sq_sum = 0.0;
            let mut hist = vec![0u64; m + 1];
            for round in 1..=config.rounds {
                let mut l = u64::MAX;
                for x in occ.iter_mut() {
                    *x += sample_binomial(&mut rng, m as u64 - *x, p);
                    l = l.min(*x);
                }
                for x in occ.iter_mut() {
                    *x -= l;
                }
                if round > config.burn_in {
                    l_sum += l;
                    hist[l as usize] += 1;
                    for &x in &occ {
                        occ_sum += x as f64;
                        occ_sq_sum += (x * x) as f64;
                    }
                }
            }
            let samples = effective * n as f64;
            let mean = occ_sum / samples;
            ReplicaStats {
                l_mean: l_sum as f64 / effective,
                occupancy_mean: mean,
                occupancy_var: occ_sq_sum / samples - mean * mean,
                min_mean: 0.0, // min over parties is zero after measuring
                histogram: hist.iter().map(|&c| c as f64 / effective).collect(),
                diverged: false,
            }
        })
        .collect();
    Ok(merge(replicas, m, *config, true))
}

/// Simulates the decoupled model: every party independently refills its
/// deficit and a fixed `l` is subtracted each round, so occupancies may go
/// negative. Estimates the stationary occupancy mean/variance and the mean
/// minimum over parties.
pub fn run_simplified(params: &NetworkParams, l: f64, config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    if !(l >= 0.0) {
        return Err(Error::InvalidParameter(format!("l<0 (l={l})")));
    }
    let (n, m, p) = (params.n(), params.m(), params.p());
    let effective = (config.rounds - config.burn_in) as f64;
    let divergence_floor = -50.0 * m as f64;
    let replicas: Vec<ReplicaStats> = (0..config.replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replica_rng(config.seed, rep);
            let mut occ = vec![0.0f64; n];
            let mut occ_sum = 0.0;
            let mut occ_sq_sum = 0.0;
            let mut min_sum = 0.0;
            let mut running_sum = 0.0;
            let mut diverged = false;
            for round in 1..=config.rounds {
                let mut round_min = f64::INFINITY;
                for x in occ.iter_mut() {
                    *x += sample_fractional_refill(&mut rng, m as f64 - *x, p) - l;
                    round_min = round_min.min(*x);
                }
                let party_mean = occ.iter().sum::<f64>() / n as f64;
                running_sum += party_mean;
                if running_sum / round as f64 <= divergence_floor {
                    diverged = true;
                }
                if round > config.burn_in {
                    min_sum += round_min;
                    for &x in &occ {
                        occ_sum += x;
                        occ_sq_sum += x * x;
                    }
                }
            }
            let samples = effective * n as f64;
            let mean = occ_sum / samples;
            ReplicaStats {
                l_mean: l,
                occupancy_mean: mean,
                occupancy_var: occ_sq_sum / samples - mean * mean,
                min_mean: min_sum / effective,
                histogram: Vec::new(),
                diverged,
            }
        })
        .collect();
    Ok(merge(replicas, m, *config, false))
}

/// Ensemble occupancy moments of the decoupled model at fixed rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub round: u64,
    pub mean: StatEstimate,
    pub var: StatEstimate,
}

/// Ensemble mean/variance of the decoupled occupancy at the requested
/// rounds, starting from empty memories. Each replica contributes its
/// across-party sample moments, so at least two parties are required.
pub fn simplified_trajectory(
    params: &NetworkParams,
    l: f64,
    checkpoints: &[u64],
    config: &SimConfig,
) -> Result<Vec<TrajectoryPoint>> {
    if params.n() < 2 {
        return Err(Error::InvalidSimConfig(
            "trajectory moments need at least two parties".into(),
        ));
    }
    if !(l >= 0.0) {
        return Err(Error::InvalidParameter(format!("l<0 (l={l})")));
    }
    if checkpoints.is_empty() || checkpoints.contains(&0) {
        return Err(Error::InvalidSimConfig(
            "checkpoints must be positive round numbers".into(),
        ));
    }
    if config.replicas < 2 {
        return Err(Error::InvalidSimConfig(
            "trajectory stderr needs at least two replicas".into(),
        ));
    }
    let (n, m, p) = (params.n(), params.m(), params.p());
    let last = *checkpoints.iter().max().unwrap();
    let per_replica: Vec<Vec<(f64, f64)>> = (0..config.replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replica_rng(config.seed, rep);
            let mut occ = vec![0.0f64; n];
            let mut moments = Vec::with_capacity(checkpoints.len());
            for round in 1..=last {
                for x in occ.iter_mut() {
                    *x += sample_fractional_refill(&mut rng, m as f64 - *x, p) - l;
                }
                if checkpoints.contains(&round) {
                    let mean = occ.iter().sum::<f64>() / n as f64;
                    let var = occ.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    moments.push((mean, var));
                }
            }
            moments
        })
        .collect();

    let r = config.replicas as f64;
    // checkpoints are visited in increasing round order inside the loop
    let ordered: Vec<u64> = {
        let mut c = checkpoints.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut out = Vec::with_capacity(ordered.len());
    for (slot, &round) in ordered.iter().enumerate() {
        let collect = |pick: fn(&(f64, f64)) -> f64| -> StatEstimate {
            let values: Vec<f64> = per_replica.iter().map(|reps| pick(&reps[slot])).collect();
            let mean = values.iter().sum::<f64>() / r;
            let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
            StatEstimate {
                value: mean,
                stderr: (ss / r).sqrt(),
            }
        };
        out.push(TrajectoryPoint {
            round,
            mean: collect(|t| t.0),
            var: collect(|t| t.1),
        });
    }
    Ok(out)
}
